//! Weighted-particle solver for the kinetic equation with strong local
//! interactions.
//!
//! There is no transport in `x`, so every particle keeps its cell and its
//! weight forever; only `(v, w)` move along the characteristics
//!
//! ```text
//! dv/ds = N(v) - w - (Psi * rho0)(x) v + (Psi * j)(x) - (rho0(x) / eps) (v - V(x))
//! dw/ds = tau (v + a - b w)
//! ```
//!
//! The stiff `1/eps` relaxation is linear once the cell mean `V` is frozen,
//! and it preserves that mean, so it is integrated exactly and Strang-split
//! around an RK4 step of the remaining (smooth) characteristic field.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FhnError, Result};
use crate::fhn::{check_dt, rk4_combine, FhnParams};
use crate::grid::{DiscreteKernel, SpatialGrid};

/// Cells with less density than this carry `V = W = 0`.
pub const MASS_FLOOR: f64 = 1e-14;

/// Tolerance on the unit-mass normalisation of the initial density.
pub const MASS_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct ParticleCloud {
    cell: Arc<[usize]>,
    weight: Arc<[f64]>,
    v: Vec<f64>,
    w: Vec<f64>,
}

impl ParticleCloud {
    pub fn new(grid: &SpatialGrid, cell: Vec<usize>, v: Vec<f64>, w: Vec<f64>, weight: Vec<f64>) -> Result<Self> {
        let n = cell.len();
        for len in [v.len(), w.len(), weight.len()] {
            if len != n {
                return Err(FhnError::SizeMismatch { expected: n, found: len });
            }
        }
        if let Some(i) = cell.iter().position(|&c| c >= grid.num_cells()) {
            return Err(FhnError::InvalidInput(format!("particle {i} has cell {} outside the grid", cell[i])));
        }
        if let Some(i) = weight.iter().position(|&m| !(m.is_finite() && m > 0.0)) {
            return Err(FhnError::InvalidInput(format!("particle {i} has non-positive weight {}", weight[i])));
        }
        Ok(Self { cell: cell.into(), weight: weight.into(), v, w })
    }

    pub fn empty() -> Self {
        Self { cell: Arc::from(Vec::new()), weight: Arc::from(Vec::new()), v: Vec::new(), w: Vec::new() }
    }

    /// Same particles (cells and weights shared) with a new phase state.
    pub(crate) fn with_state(&self, v: Vec<f64>, w: Vec<f64>) -> Self {
        debug_assert_eq!(v.len(), self.len());
        Self { cell: Arc::clone(&self.cell), weight: Arc::clone(&self.weight), v, w }
    }

    pub fn len(&self) -> usize {
        self.cell.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cell.is_empty()
    }

    pub fn cell(&self) -> &[usize] {
        &self.cell
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn total_mass(&self) -> f64 {
        self.weight.iter().sum()
    }

    /// True if both clouds share the same immutable cell and weight storage.
    pub fn shares_particles_with(&self, other: &ParticleCloud) -> bool {
        Arc::ptr_eq(&self.cell, &other.cell) && Arc::ptr_eq(&self.weight, &other.weight)
    }
}

/// Per-cell macroscopic quantities of a particle cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMoments {
    pub rho: Vec<f64>,
    pub j: Vec<f64>,
    pub q: Vec<f64>,
    pub v_mean: Vec<f64>,
    pub w_mean: Vec<f64>,
}

impl CellMoments {
    pub fn from_densities(rho: Vec<f64>, j: Vec<f64>, q: Vec<f64>) -> Self {
        let (v_mean, w_mean) = rho
            .iter()
            .zip(j.iter().zip(&q))
            .map(|(&r, (&jj, &qq))| if r > MASS_FLOOR { (jj / r, qq / r) } else { (0.0, 0.0) })
            .unzip();
        Self { rho, j, q, v_mean, w_mean }
    }

    pub fn num_cells(&self) -> usize {
        self.rho.len()
    }
}

/// Weighted cell sums in particle order.
pub fn deposit_moments(cloud: &ParticleCloud, grid: &SpatialGrid) -> CellMoments {
    let m = grid.num_cells();
    let inv_vol = 1.0 / grid.cell_volume();
    let mut rho = vec![0.0; m];
    let mut j = vec![0.0; m];
    let mut q = vec![0.0; m];
    for i in 0..cloud.len() {
        let c = cloud.cell[i];
        let wt = cloud.weight[i];
        rho[c] += wt;
        j[c] += wt * cloud.v[i];
        q[c] += wt * cloud.w[i];
    }
    for c in 0..m {
        rho[c] *= inv_vol;
        j[c] *= inv_vol;
        q[c] *= inv_vol;
    }
    CellMoments::from_densities(rho, j, q)
}

fn deposit_current(cell: &[usize], weight: &[f64], v: &[f64], grid: &SpatialGrid) -> Vec<f64> {
    let mut j = vec![0.0; grid.num_cells()];
    for i in 0..cell.len() {
        j[cell[i]] += weight[i] * v[i];
    }
    let inv_vol = 1.0 / grid.cell_volume();
    j.iter_mut().for_each(|x| *x *= inv_vol);
    j
}

/// Per-cell `int f |v - V|^2 dv dw` (a density).
pub fn cell_velocity_spread(cloud: &ParticleCloud, moments: &CellMoments, grid: &SpatialGrid) -> Vec<f64> {
    let mut out = vec![0.0; grid.num_cells()];
    for i in 0..cloud.len() {
        let c = cloud.cell[i];
        let d = cloud.v[i] - moments.v_mean[c];
        out[c] += cloud.weight[i] * d * d;
    }
    let inv_vol = 1.0 / grid.cell_volume();
    out.iter_mut().for_each(|x| *x *= inv_vol);
    out
}

/// Shape of the per-axis quadrature used to place particles in `(v, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VwProfile {
    /// Equal weights on midpoint nodes of `[-1, 1]`.
    #[default]
    Uniform,
    /// Weights proportional to `1 - xi^2` on the same nodes.
    Parabolic,
}

impl VwProfile {
    /// Nodes in `[-1, 1]` and weights summing to one. Symmetric about zero.
    pub fn quadrature(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        let nodes: Vec<f64> = (0..k).map(|i| -1.0 + (2 * i + 1) as f64 / k as f64).collect();
        let raw: Vec<f64> = match self {
            VwProfile::Uniform => vec![1.0; k],
            VwProfile::Parabolic => nodes.iter().map(|x| 1.0 - x * x).collect(),
        };
        let total: f64 = raw.iter().sum();
        (nodes, raw.iter().map(|r| r / total).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialDataSpec {
    /// Cell densities, `sum(rho0) * cell_volume = 1`.
    pub rho0: Vec<f64>,
    pub v0: Vec<f64>,
    pub w0: Vec<f64>,
    pub vw_profile: VwProfile,
    /// Half-width of the `(v, w)` support box around `(V0, W0)`.
    pub vw_spread: f64,
    pub particles_per_cell_axis: usize,
    /// Particles must stay in `|v|, |w| <= safety_radius`.
    pub safety_radius: f64,
    /// Skip the unit-mass check (unvalidated non-integrable scenarios only).
    pub allow_unnormalized: bool,
}

/// Deterministic tensor quadrature in `(v, w)` for every supported cell.
///
/// Nodes are symmetric around `(V0_c, W0_c)`, so the deposited means equal
/// the prescribed ones up to round-off and the initial relative entropy
/// against `(V0, W0)` vanishes.
pub fn sample_initial(spec: &InitialDataSpec, grid: &SpatialGrid) -> Result<ParticleCloud> {
    let m = grid.num_cells();
    for len in [spec.rho0.len(), spec.v0.len(), spec.w0.len()] {
        if len != m {
            return Err(FhnError::SizeMismatch { expected: m, found: len });
        }
    }
    if let Some((cell, &value)) = spec.rho0.iter().enumerate().find(|(_, r)| !(r.is_finite() && **r >= 0.0)) {
        return Err(FhnError::NegativeDensity { cell, value });
    }
    let mass = grid.integrate(&spec.rho0);
    if !spec.allow_unnormalized && (mass - 1.0).abs() > MASS_TOLERANCE {
        return Err(FhnError::InvalidInput(format!("rho0 has mass {mass}, expected 1")));
    }
    if !(spec.vw_spread.is_finite() && spec.vw_spread >= 0.0) {
        return Err(FhnError::InvalidInput(format!("vw_spread must be >= 0, got {}", spec.vw_spread)));
    }
    if spec.particles_per_cell_axis == 0 {
        return Err(FhnError::InvalidInput("particles_per_cell_axis must be >= 1".into()));
    }
    let (nodes, qw) = if spec.vw_spread == 0.0 {
        (vec![0.0], vec![1.0])
    } else {
        spec.vw_profile.quadrature(spec.particles_per_cell_axis)
    };
    let vol = grid.cell_volume();
    let mut cell = Vec::new();
    let mut v = Vec::new();
    let mut w = Vec::new();
    let mut weight = Vec::new();
    for c in 0..m {
        if spec.rho0[c] <= 0.0 {
            continue;
        }
        let extent = spec.v0[c].abs().max(spec.w0[c].abs()) + spec.vw_spread;
        if !(extent <= spec.safety_radius) {
            return Err(FhnError::SpreadTooLarge { cell: c, extent, limit: spec.safety_radius });
        }
        let cell_mass = spec.rho0[c] * vol;
        for (xv, qv) in nodes.iter().zip(&qw) {
            for (xw, qww) in nodes.iter().zip(&qw) {
                cell.push(c);
                v.push(spec.v0[c] + spec.vw_spread * xv);
                w.push(spec.w0[c] + spec.vw_spread * xw);
                weight.push(cell_mass * qv * qww);
            }
        }
    }
    ParticleCloud::new(grid, cell, v, w, weight)
}

/// Smooth-coupling inputs of one cell at one stage.
#[derive(Debug, Clone, Copy, Default)]
pub struct CellCoupling {
    /// `(Psi * rho0)(x)`
    pub psi_rho: f64,
    /// `(Psi * j)(x)`
    pub psi_j: f64,
}

/// Characteristic field without the `1/eps` relaxation.
#[inline]
pub fn characteristic_rhs(v: f64, w: f64, coupling: CellCoupling, params: &FhnParams) -> (f64, f64) {
    (
        params.excitability(v) - w - coupling.psi_rho * v + coupling.psi_j,
        params.adaptation(v, w),
    )
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 {
        Ok(())
    } else {
        Err(FhnError::InvalidEpsilon(eps))
    }
}

/// Exact solution over `dt` of `dv/ds = -(rho_c/eps)(v - V_c)` with the cell
/// mean frozen. `eps = inf` disables relaxation.
pub fn relax_exact(cloud: &ParticleCloud, moments: &CellMoments, dt: f64, eps: f64) -> Result<ParticleCloud> {
    check_eps(eps)?;
    if !(dt >= 0.0) {
        return Err(FhnError::InvalidTimeStep(dt));
    }
    let factors: Vec<f64> = moments.rho.iter().map(|&r| (-r * dt / eps).exp()).collect();
    let v = cloud
        .v
        .iter()
        .zip(cloud.cell.iter())
        .map(|(&v, &c)| {
            let f = factors[c];
            if f == 1.0 {
                v
            } else {
                let vc = moments.v_mean[c];
                vc + (v - vc) * f
            }
        })
        .collect();
    Ok(cloud.with_state(v, cloud.w.clone()))
}

/// Everything the kinetic step needs besides the cloud.
#[derive(Debug, Clone)]
pub struct KineticModel {
    pub grid: SpatialGrid,
    pub kernel: DiscreteKernel,
    pub params: FhnParams,
    /// Deposited initial density; constant in time.
    pub rho0: Vec<f64>,
    pub psi_rho0: Vec<f64>,
    pub safety_radius: f64,
}

impl KineticModel {
    pub fn new(kernel: DiscreteKernel, params: FhnParams, initial: &ParticleCloud, safety_radius: f64) -> Result<Self> {
        params.validate()?;
        let grid = kernel.grid().clone();
        let rho0 = deposit_moments(initial, &grid).rho;
        let psi_rho0 = kernel.convolve(&rho0)?;
        Ok(Self { grid, kernel, params, rho0, psi_rho0, safety_radius })
    }

    fn transport_rhs(&self, cloud: &ParticleCloud, v: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let psi_j = if self.kernel.is_zero() {
            vec![0.0; self.grid.num_cells()]
        } else {
            let j = deposit_current(&cloud.cell, &cloud.weight, v, &self.grid);
            self.kernel.convolve(&j).expect("current has grid length")
        };
        let params = self.params;
        (0..cloud.len())
            .into_par_iter()
            .map(|i| {
                let c = cloud.cell[i];
                let coupling = CellCoupling { psi_rho: self.psi_rho0[c], psi_j: psi_j[c] };
                characteristic_rhs(v[i], w[i], coupling, &params)
            })
            .unzip()
    }

    /// One RK4 step of the smooth characteristic field, re-depositing the
    /// current at every stage.
    fn transport(&self, cloud: &ParticleCloud, dt: f64) -> ParticleCloud {
        let n = cloud.len();
        let stage = |k: &[f64], base: &[f64], h: f64| -> Vec<f64> { base.iter().zip(k).map(|(y, k)| y + h * k).collect() };
        let (k1v, k1w) = self.transport_rhs(cloud, &cloud.v, &cloud.w);
        let (v2, w2) = (stage(&k1v, &cloud.v, 0.5 * dt), stage(&k1w, &cloud.w, 0.5 * dt));
        let (k2v, k2w) = self.transport_rhs(cloud, &v2, &w2);
        let (v3, w3) = (stage(&k2v, &cloud.v, 0.5 * dt), stage(&k2w, &cloud.w, 0.5 * dt));
        let (k3v, k3w) = self.transport_rhs(cloud, &v3, &w3);
        let (v4, w4) = (stage(&k3v, &cloud.v, dt), stage(&k3w, &cloud.w, dt));
        let (k4v, k4w) = self.transport_rhs(cloud, &v4, &w4);
        let v = (0..n).map(|i| rk4_combine(cloud.v[i], dt, k1v[i], k2v[i], k3v[i], k4v[i])).collect();
        let w = (0..n).map(|i| rk4_combine(cloud.w[i], dt, k1w[i], k2w[i], k3w[i], k4w[i])).collect();
        cloud.with_state(v, w)
    }

    fn check_bounds(&self, cloud: &ParticleCloud, time: f64) -> Result<()> {
        for i in 0..cloud.len() {
            let (v, w) = (cloud.v[i], cloud.w[i]);
            if !(v.is_finite() && w.is_finite()) {
                return Err(FhnError::Blowup { time, index: i });
            }
            let value = v.abs().max(w.abs());
            if value > self.safety_radius {
                return Err(FhnError::SupportExceeded { time, index: i, value, limit: self.safety_radius });
            }
        }
        Ok(())
    }

    /// Strang step: half relaxation, RK4 transport, half relaxation.
    /// `t` is only used to time-stamp errors.
    pub fn step(&self, cloud: &ParticleCloud, dt: f64, eps: f64, t: f64) -> Result<ParticleCloud> {
        kinetic_step(cloud, self, dt, eps, t)
    }

    /// Characteristic support bound for this model at relaxation `eps`.
    pub fn support_bound(&self, initial: &ParticleCloud, eps: f64) -> SupportBound {
        let rho_max = self.rho0.iter().cloned().fold(0.0, f64::max);
        SupportBound::new(support_radius(initial), rho_max, self.kernel.l1_norm(), &self.params, eps)
    }
}

pub fn kinetic_step(cloud: &ParticleCloud, model: &KineticModel, dt: f64, eps: f64, t: f64) -> Result<ParticleCloud> {
    check_dt(dt)?;
    check_eps(eps)?;
    let half = |c: &ParticleCloud| -> Result<ParticleCloud> {
        let m = deposit_moments(c, &model.grid);
        relax_exact(c, &m, 0.5 * dt, eps)
    };
    let a = half(cloud)?;
    let b = model.transport(&a, dt);
    let c = half(&b)?;
    model.check_bounds(&c, t + dt)?;
    Ok(c)
}

/// `max_p sqrt(v_p^2 + w_p^2)`, 0 for an empty cloud.
pub fn support_radius(cloud: &ParticleCloud) -> f64 {
    cloud.v.iter().zip(&cloud.w).map(|(v, w)| v.hypot(*w)).fold(0.0, f64::max)
}

/// Growth bound on the `(v, w)` support along characteristics:
/// `R(t)^2 <= (R0^2 + tau a^2 t) exp(K t)` with
/// `K = 3 + 2 tau + 2 |rho0|_inf |Psi|_1 + 2 |rho0|_inf / eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportBound {
    pub r0: f64,
    pub rate: f64,
    pub drift: f64,
}

impl SupportBound {
    pub fn new(r0: f64, rho_max: f64, psi_l1: f64, params: &FhnParams, eps: f64) -> Self {
        let rate = 3.0 + 2.0 * params.tau + 2.0 * rho_max * psi_l1 + 2.0 * rho_max / eps;
        Self { r0, rate, drift: params.tau * params.a * params.a }
    }

    pub fn at(&self, t: f64) -> f64 {
        (self.r0 * self.r0 + self.drift * t).sqrt() * (0.5 * self.rate * t).exp()
    }
}
