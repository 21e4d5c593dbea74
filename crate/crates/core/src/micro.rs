//! The `n`-neuron network
//!
//! ```text
//! dv_i/dt = N(v_i) - w_i - (1/n) sum_j Phi(x_i - x_j) (v_i - v_j)
//! dw_i/dt = tau (v_i + a - b w_i)
//! ```
//!
//! with fixed neuron positions, and its empirical macroscopic fields.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FhnError, Result};
use crate::fhn::{check_dt, rk4_combine, FhnParams};
use crate::grid::{KernelSpec, Point, SpatialGrid};
use crate::hydro::MacroFields;
use crate::kinetic::ParticleCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MollifierProfile {
    #[default]
    Triangle,
    Gaussian,
}

/// Radial approximation of the Dirac mass with unit integral in `dim`
/// dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MollifiedDirac {
    width: f64,
    profile: MollifierProfile,
    dim: usize,
}

impl MollifiedDirac {
    pub fn new(width: f64, profile: MollifierProfile, dim: usize) -> Result<Self> {
        if !(width.is_finite() && width > 0.0) {
            return Err(FhnError::InvalidInput(format!("mollifier width must be > 0, got {width}")));
        }
        if dim != 1 && dim != 2 {
            return Err(FhnError::InvalidInput(format!("mollifier dimension must be 1 or 2, got {dim}")));
        }
        Ok(Self { width, profile, dim })
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    /// Distance beyond which the profile is negligible (exactly 0 for the
    /// triangle).
    pub fn support(&self) -> f64 {
        match self.profile {
            MollifierProfile::Triangle => self.width,
            MollifierProfile::Gaussian => 9.0 * self.width,
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        let eta = self.width;
        let s = r.abs() / eta;
        match (self.profile, self.dim) {
            (MollifierProfile::Triangle, _) if s >= 1.0 => 0.0,
            (MollifierProfile::Triangle, 1) => (1.0 - s) / eta,
            (MollifierProfile::Triangle, _) => 3.0 * (1.0 - s) / (std::f64::consts::PI * eta * eta),
            (MollifierProfile::Gaussian, 1) => (-0.5 * s * s).exp() / ((2.0 * std::f64::consts::PI).sqrt() * eta),
            (MollifierProfile::Gaussian, _) => (-0.5 * s * s).exp() / (2.0 * std::f64::consts::PI * eta * eta),
        }
    }
}

/// Connectivity `Phi(x_i, x_j)`, even and nonnegative.
pub trait Connectivity: Sync {
    fn weight(&self, xi: &Point, xj: &Point) -> f64;

    /// True if `weight` vanishes identically.
    fn is_zero(&self) -> bool {
        false
    }
}

impl<F: Fn(&Point, &Point) -> f64 + Sync> Connectivity for F {
    fn weight(&self, xi: &Point, xj: &Point) -> f64 {
        self(xi, xj)
    }
}

/// Periodised smooth kernel plus an optional strong local part
/// `(1/eps) delta_eta`.
#[derive(Debug, Clone)]
pub struct NetworkKernel {
    grid: SpatialGrid,
    psi: KernelSpec,
    local: Option<(MollifiedDirac, f64)>,
}

impl NetworkKernel {
    pub fn smooth(grid: &SpatialGrid, psi: KernelSpec) -> Result<Self> {
        psi.validate()?;
        Ok(Self { grid: grid.clone(), psi, local: None })
    }

    pub fn with_local(mut self, dirac: MollifiedDirac, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(FhnError::InvalidEpsilon(eps));
        }
        if dirac.support() >= 0.5 * (0..self.grid.dim()).map(|k| self.grid.box_length(k)).fold(f64::INFINITY, f64::min) {
            return Err(FhnError::InvalidInput("mollifier wider than half the box".into()));
        }
        self.local = Some((dirac, eps));
        Ok(self)
    }
}

impl Connectivity for NetworkKernel {
    fn weight(&self, xi: &Point, xj: &Point) -> f64 {
        let d = self.grid.displacement(xi, xj);
        let mut phi = self.psi.periodic_value(&self.grid, &d);
        if let Some((dirac, eps)) = &self.local {
            phi += dirac.value(d[0].hypot(d[1])) / eps;
        }
        phi
    }

    fn is_zero(&self) -> bool {
        self.psi.shape == crate::grid::KernelShape::Zero && self.local.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronNetworkState {
    positions: Arc<[Point]>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub params: FhnParams,
}

impl NeuronNetworkState {
    pub fn new(positions: Vec<Point>, v: Vec<f64>, w: Vec<f64>, params: FhnParams) -> Result<Self> {
        if positions.is_empty() {
            return Err(FhnError::InvalidInput("a network needs at least one neuron".into()));
        }
        for len in [v.len(), w.len()] {
            if len != positions.len() {
                return Err(FhnError::SizeMismatch { expected: positions.len(), found: len });
            }
        }
        params.validate()?;
        Ok(Self { positions: positions.into(), v, w, params })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    fn with_state(&self, v: Vec<f64>, w: Vec<f64>) -> Self {
        Self { positions: Arc::clone(&self.positions), v, w, params: self.params }
    }
}

/// Connectivity evaluated once on the distinct neuron sites.
///
/// Neurons sharing a site are grouped, so the coupling of neuron `i` at site
/// `s` is `(1/n) (v_i sum_s' Phi_ss' n_s' - sum_s' Phi_ss' S_s')` with `n_s'`
/// the site counts and `S_s'` the site sums of `v`. Cost per evaluation is
/// `O(n + sites^2)`.
#[derive(Debug, Clone)]
pub struct Coupling {
    site_of: Vec<usize>,
    counts: Vec<f64>,
    /// Row-major `sites x sites`.
    matrix: Vec<f64>,
    zero: bool,
}

impl Coupling {
    pub fn new(state: &NeuronNetworkState, kernel: &dyn Connectivity) -> Self {
        let mut index: HashMap<[u64; 2], usize> = HashMap::new();
        let mut sites: Vec<Point> = Vec::new();
        let site_of: Vec<usize> = state
            .positions
            .iter()
            .map(|x| {
                *index.entry([x[0].to_bits(), x[1].to_bits()]).or_insert_with(|| {
                    sites.push(*x);
                    sites.len() - 1
                })
            })
            .collect();
        let k = sites.len();
        let mut counts = vec![0.0; k];
        for &s in &site_of {
            counts[s] += 1.0;
        }
        let zero = kernel.is_zero();
        let matrix = if zero {
            Vec::new()
        } else {
            (0..k * k).into_par_iter().map(|ij| kernel.weight(&sites[ij / k], &sites[ij % k])).collect()
        };
        Self { site_of, counts, matrix, zero }
    }

    pub fn num_sites(&self) -> usize {
        self.counts.len()
    }

    /// `(1/n) sum_j Phi(x_i - x_j)(v_i - v_j)` for every neuron.
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = v.len();
        if self.zero {
            return vec![0.0; n];
        }
        let k = self.counts.len();
        // deviations from v[0] make the coupling vanish exactly on equal states
        let reference = v[0];
        let mut sums = vec![0.0; k];
        for (i, &s) in self.site_of.iter().enumerate() {
            sums[s] += v[i] - reference;
        }
        let (a, b): (Vec<f64>, Vec<f64>) = (0..k)
            .into_par_iter()
            .map(|s| {
                let row = &self.matrix[s * k..(s + 1) * k];
                let mut a = 0.0;
                let mut b = 0.0;
                for t in 0..k {
                    a += row[t] * self.counts[t];
                    b += row[t] * sums[t];
                }
                (a, b)
            })
            .unzip();
        let inv_n = 1.0 / n as f64;
        self.site_of.iter().zip(v).map(|(&s, &vi)| ((vi - reference) * a[s] - b[s]) * inv_n).collect()
    }
}

fn rhs_with(state: &NeuronNetworkState, coupling: &Coupling, v: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let c = coupling.apply(v);
    let p = &state.params;
    (0..v.len()).map(|i| (p.excitability(v[i]) - w[i] - c[i], p.adaptation(v[i], w[i]))).unzip()
}

/// Right-hand side of the network.
pub fn micro_rhs(state: &NeuronNetworkState, kernel: &dyn Connectivity) -> (Vec<f64>, Vec<f64>) {
    let coupling = Coupling::new(state, kernel);
    rhs_with(state, &coupling, &state.v, &state.w)
}

/// One RK4 step. `coupling` must have been built for this network.
pub fn micro_step(state: &NeuronNetworkState, coupling: &Coupling, dt: f64) -> Result<NeuronNetworkState> {
    check_dt(dt)?;
    if coupling.site_of.len() != state.len() {
        return Err(FhnError::SizeMismatch { expected: state.len(), found: coupling.site_of.len() });
    }
    let n = state.len();
    let stage = |base: &[f64], k: &[f64], h: f64| -> Vec<f64> { base.iter().zip(k).map(|(y, k)| y + h * k).collect() };
    let (k1v, k1w) = rhs_with(state, coupling, &state.v, &state.w);
    let (k2v, k2w) = rhs_with(state, coupling, &stage(&state.v, &k1v, 0.5 * dt), &stage(&state.w, &k1w, 0.5 * dt));
    let (k3v, k3w) = rhs_with(state, coupling, &stage(&state.v, &k2v, 0.5 * dt), &stage(&state.w, &k2w, 0.5 * dt));
    let (k4v, k4w) = rhs_with(state, coupling, &stage(&state.v, &k3v, dt), &stage(&state.w, &k3w, dt));
    let v: Vec<f64> = (0..n).map(|i| rk4_combine(state.v[i], dt, k1v[i], k2v[i], k3v[i], k4v[i])).collect();
    let w: Vec<f64> = (0..n).map(|i| rk4_combine(state.w[i], dt, k1w[i], k2w[i], k3w[i], k4w[i])).collect();
    if let Some(index) = (0..n).find(|&i| !(v[i].is_finite() && w[i].is_finite())) {
        return Err(FhnError::Blowup { time: f64::NAN, index });
    }
    Ok(state.with_state(v, w))
}

/// Largest step allowed by the local Lipschitz constant of the cubic.
pub fn step_cap(state: &NeuronNetworkState) -> f64 {
    let vmax2 = state.v.iter().map(|v| v * v).fold(1.0, f64::max);
    0.1 / vmax2
}

/// Integrate from `t0` over `duration` with steps `min(dt, step_cap)`,
/// landing exactly on `t0 + duration`.
pub fn micro_advance(
    state: &NeuronNetworkState,
    coupling: &Coupling,
    t0: f64,
    duration: f64,
    dt: f64,
) -> Result<NeuronNetworkState> {
    check_dt(dt)?;
    let mut s = state.clone();
    let mut done = 0.0;
    while duration - done > 1e-12 * duration.max(1.0) {
        let mut h = dt.min(step_cap(&s)).min(duration - done);
        if duration - done - h < 1e-9 * h {
            h = duration - done;
        }
        s = micro_step(&s, coupling, h).map_err(|e| match e {
            FhnError::Blowup { index, .. } => FhnError::Blowup { time: t0 + done + h, index },
            other => other,
        })?;
        done += h;
    }
    Ok(s)
}

/// Empirical fields with weight `1/n` per neuron; empty cells get zeros.
pub fn empirical_macro(state: &NeuronNetworkState, grid: &SpatialGrid) -> Result<MacroFields> {
    let m = grid.num_cells();
    let mut count = vec![0usize; m];
    let mut sv = vec![0.0; m];
    let mut sw = vec![0.0; m];
    for (i, x) in state.positions.iter().enumerate() {
        let c = grid.locate(x).ok_or(FhnError::PositionOutsideBox { index: i })?;
        count[c] += 1;
        sv[c] += state.v[i];
        sw[c] += state.w[i];
    }
    let n = state.len() as f64;
    let rho0 = count.iter().map(|&k| k as f64 / n / grid.cell_volume()).collect();
    let mean = |s: &[f64]| -> Vec<f64> {
        s.iter().zip(&count).map(|(&x, &k)| if k > 0 { x / k as f64 } else { 0.0 }).collect()
    };
    Ok(MacroFields { rho0, v: mean(&sv), w: mean(&sw), params: state.params })
}

/// How neurons are drawn from a particle cloud's measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Placement {
    /// i.i.d. draws from a ChaCha8 stream.
    Iid { seed: u64 },
    /// Deterministic quantiles `u_i = (i + 1/2) / n`.
    Quantile,
}

/// Draw `n` neurons from the normalised measure of `cloud`: neuron `i`
/// copies the cell centre and `(v, w)` of the particle whose cumulative
/// weight first exceeds `u_i`.
pub fn sample_network(
    cloud: &ParticleCloud,
    grid: &SpatialGrid,
    n: usize,
    placement: Placement,
    params: FhnParams,
) -> Result<NeuronNetworkState> {
    if cloud.is_empty() {
        return Err(FhnError::InvalidInput("cannot sample a network from an empty cloud".into()));
    }
    let mut cumulative = Vec::with_capacity(cloud.len());
    let mut acc = 0.0;
    for &wt in cloud.weight() {
        acc += wt;
        cumulative.push(acc);
    }
    let total = acc;
    let pick = |u: f64| -> usize { cumulative.partition_point(|&c| c <= u * total).min(cloud.len() - 1) };
    let picks: Vec<usize> = match placement {
        Placement::Quantile => (0..n).map(|i| pick((i as f64 + 0.5) / n as f64)).collect(),
        Placement::Iid { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| pick(rng.random::<f64>())).collect()
        }
    };
    let positions = picks.iter().map(|&p| grid.center(cloud.cell()[p])).collect();
    let v = picks.iter().map(|&p| cloud.v()[p]).collect();
    let w = picks.iter().map(|&p| cloud.w()[p]).collect();
    NeuronNetworkState::new(positions, v, w, params)
}
