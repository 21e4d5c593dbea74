//! The limit system
//!
//! ```text
//! dV/dt = L_rho0(V) + N(V) - W
//! dW/dt = tau (V + a - b W)
//! ```
//!
//! on the support of `rho0`, and the adaptation density `F(t, x, w)`
//! transported along `dw/ds = tau (V(s, x) + a - b w)` by the stored `V`.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{FhnError, Result};
use crate::fhn::{check_dt, rk4_combine, FhnParams};
use crate::grid::{DiscreteKernel, SpatialGrid};
use crate::kinetic::{CellMoments, ParticleCloud, MASS_FLOOR};

/// Macroscopic state `(rho0, V, W)`. `V = W = 0` off the support of `rho0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroFields {
    pub rho0: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub params: FhnParams,
}

impl MacroFields {
    /// Zeroes `V` and `W` on cells with `rho0 <= MASS_FLOOR`.
    pub fn new(rho0: Vec<f64>, mut v: Vec<f64>, mut w: Vec<f64>, params: FhnParams) -> Result<Self> {
        let m = rho0.len();
        for len in [v.len(), w.len()] {
            if len != m {
                return Err(FhnError::SizeMismatch { expected: m, found: len });
            }
        }
        if let Some((cell, &value)) = rho0.iter().enumerate().find(|(_, r)| !(r.is_finite() && **r >= 0.0)) {
            return Err(FhnError::NegativeDensity { cell, value });
        }
        params.validate()?;
        for c in 0..m {
            if rho0[c] <= MASS_FLOOR {
                v[c] = 0.0;
                w[c] = 0.0;
            }
        }
        Ok(Self { rho0, v, w, params })
    }

    /// Macroscopic state matching the deposited moments of a cloud.
    pub fn from_moments(moments: &CellMoments, params: FhnParams) -> Result<Self> {
        Self::new(moments.rho.clone(), moments.v_mean.clone(), moments.w_mean.clone(), params)
    }

    pub fn num_cells(&self) -> usize {
        self.rho0.len()
    }

    fn supported(&self, c: usize) -> bool {
        self.rho0[c] > MASS_FLOOR
    }

    /// `max_c sqrt(V_c^2 + W_c^2)`.
    pub fn sup_norm(&self) -> f64 {
        self.v.iter().zip(&self.w).map(|(v, w)| v.hypot(*w)).fold(0.0, f64::max)
    }
}

fn rhs_at(fields: &MacroFields, kernel: &DiscreteKernel, v: &[f64], w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let l = kernel.nonlocal_operator(&fields.rho0, v)?;
    let p = &fields.params;
    Ok((0..fields.num_cells())
        .map(|c| {
            if fields.supported(c) {
                (p.excitability(v[c]) - w[c] + l[c], p.adaptation(v[c], w[c]))
            } else {
                (0.0, 0.0)
            }
        })
        .unzip())
}

pub fn macro_rhs(fields: &MacroFields, kernel: &DiscreteKernel) -> Result<(Vec<f64>, Vec<f64>)> {
    rhs_at(fields, kernel, &fields.v, &fields.w)
}

/// One RK4 step; `rho0` is shared unchanged.
pub fn macro_step(fields: &MacroFields, kernel: &DiscreteKernel, dt: f64) -> Result<MacroFields> {
    check_dt(dt)?;
    let m = fields.num_cells();
    let stage = |base: &[f64], k: &[f64], h: f64| -> Vec<f64> { base.iter().zip(k).map(|(y, k)| y + h * k).collect() };
    let (k1v, k1w) = rhs_at(fields, kernel, &fields.v, &fields.w)?;
    let (k2v, k2w) = rhs_at(fields, kernel, &stage(&fields.v, &k1v, 0.5 * dt), &stage(&fields.w, &k1w, 0.5 * dt))?;
    let (k3v, k3w) = rhs_at(fields, kernel, &stage(&fields.v, &k2v, 0.5 * dt), &stage(&fields.w, &k2w, 0.5 * dt))?;
    let (k4v, k4w) = rhs_at(fields, kernel, &stage(&fields.v, &k3v, dt), &stage(&fields.w, &k3w, dt))?;
    let v: Vec<f64> = (0..m).map(|c| rk4_combine(fields.v[c], dt, k1v[c], k2v[c], k3v[c], k4v[c])).collect();
    let w: Vec<f64> = (0..m).map(|c| rk4_combine(fields.w[c], dt, k1w[c], k2w[c], k3w[c], k4w[c])).collect();
    if let Some(index) = (0..m).find(|&c| !(v[c].is_finite() && w[c].is_finite())) {
        return Err(FhnError::Blowup { time: f64::NAN, index });
    }
    Ok(MacroFields { rho0: fields.rho0.clone(), v, w, params: fields.params })
}

/// Stored `V(t_k)` together with `dV/dt(t_k)`, interpolated by cubic Hermite
/// polynomials between records.
#[derive(Debug, Clone, Default)]
pub struct VTrajectory {
    times: Vec<f64>,
    v: Vec<Vec<f64>>,
    dv: Vec<Vec<f64>>,
}

impl VTrajectory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record; times must increase strictly.
    pub fn push(&mut self, t: f64, v: Vec<f64>, dv: Vec<f64>) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if !(t > last) {
                return Err(FhnError::MisalignedSeries(format!("trajectory time {t} does not follow {last}")));
            }
            if v.len() != self.v[0].len() || dv.len() != v.len() {
                return Err(FhnError::SizeMismatch { expected: self.v[0].len(), found: v.len().min(dv.len()) });
            }
        }
        self.times.push(t);
        self.v.push(v);
        self.dv.push(dv);
        Ok(())
    }

    /// Records the current macro state and its rate.
    pub fn record(&mut self, t: f64, fields: &MacroFields, kernel: &DiscreteKernel) -> Result<()> {
        let (dv, _) = macro_rhs(fields, kernel)?;
        self.push(t, fields.v.clone(), dv)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn span(&self) -> (f64, f64) {
        match (self.times.first(), self.times.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => (f64::NAN, f64::NAN),
        }
    }

    fn covers(&self, start: f64, end: f64) -> Result<()> {
        let (a, b) = self.span();
        let slack = 1e-12 * (1.0 + b.abs());
        if self.times.is_empty() || start < a - slack || end > b + slack {
            return Err(FhnError::TrajectoryGap { start, end, covered_start: a, covered_end: b });
        }
        Ok(())
    }

    /// `V(s)` in every cell; `s` must lie in the covered span.
    pub fn eval(&self, s: f64) -> Result<Vec<f64>> {
        self.covers(s, s)?;
        if self.times.len() == 1 {
            return Ok(self.v[0].clone());
        }
        let k = self.times.partition_point(|&t| t <= s).clamp(1, self.times.len() - 1) - 1;
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let x = ((s - t0) / h).clamp(0.0, 1.0);
        let x2 = x * x;
        let x3 = x2 * x;
        let h00 = 2.0 * x3 - 3.0 * x2 + 1.0;
        let h10 = x3 - 2.0 * x2 + x;
        let h01 = -2.0 * x3 + 3.0 * x2;
        let h11 = x3 - x2;
        Ok((0..self.v[k].len())
            .map(|c| h00 * self.v[k][c] + h10 * h * self.dv[k][c] + h01 * self.v[k + 1][c] + h11 * h * self.dv[k + 1][c])
            .collect())
    }
}

/// Particle representation of `F(t, x, w)`: each particle keeps its cell and
/// weight; only `w` moves.
#[derive(Debug, Clone)]
pub struct AdaptationCloud {
    cell: Arc<[usize]>,
    weight: Arc<[f64]>,
    w: Vec<f64>,
    /// Accumulated `exp(tau b t)` density factor of the transport.
    pub amplitude_factor: f64,
}

impl AdaptationCloud {
    pub fn new(grid: &SpatialGrid, cell: Vec<usize>, w: Vec<f64>, weight: Vec<f64>) -> Result<Self> {
        let probe = ParticleCloud::new(grid, cell, vec![0.0; w.len()], w, weight)?;
        Ok(Self::from_kinetic(&probe))
    }

    /// `w`-marginal of a kinetic cloud, particle by particle.
    pub fn from_kinetic(cloud: &ParticleCloud) -> Self {
        Self {
            cell: cloud.cell().into(),
            weight: cloud.weight().into(),
            w: cloud.w().to_vec(),
            amplitude_factor: 1.0,
        }
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

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn total_mass(&self) -> f64 {
        self.weight.iter().sum()
    }
}

/// RK4 along `dw/ds = tau (V(s, x) + a - b w)` from `t` to `t + dt`.
pub fn advect_f(cloud: &AdaptationCloud, trajectory: &VTrajectory, params: &FhnParams, t: f64, dt: f64) -> Result<AdaptationCloud> {
    check_dt(dt)?;
    trajectory.covers(t, t + dt)?;
    let v0 = trajectory.eval(t)?;
    let vh = trajectory.eval(t + 0.5 * dt)?;
    let v1 = trajectory.eval(t + dt)?;
    let w = cloud
        .w
        .par_iter()
        .zip(cloud.cell.par_iter())
        .map(|(&w, &c)| {
            let k1 = params.adaptation(v0[c], w);
            let k2 = params.adaptation(vh[c], w + 0.5 * dt * k1);
            let k3 = params.adaptation(vh[c], w + 0.5 * dt * k2);
            let k4 = params.adaptation(v1[c], w + dt * k3);
            rk4_combine(w, dt, k1, k2, k3, k4)
        })
        .collect();
    Ok(AdaptationCloud {
        cell: Arc::clone(&cloud.cell),
        weight: Arc::clone(&cloud.weight),
        w,
        amplitude_factor: cloud.amplitude_factor * (params.tau * params.b * dt).exp(),
    })
}

/// Per cell `|W - <w>_F|`, zero on cells without particles.
pub fn consistency_w(cloud: &AdaptationCloud, fields: &MacroFields, grid: &SpatialGrid) -> Vec<f64> {
    let m = grid.num_cells();
    let mut mass = vec![0.0; m];
    let mut moment = vec![0.0; m];
    for i in 0..cloud.len() {
        mass[cloud.cell[i]] += cloud.weight[i];
        moment[cloud.cell[i]] += cloud.weight[i] * cloud.w[i];
    }
    (0..m).map(|c| if mass[c] > 0.0 { (fields.w[c] - moment[c] / mass[c]).abs() } else { 0.0 }).collect()
}

/// Gronwall bound on `S(t) = max_c |(V, W)_c|`:
/// `S(t)^2 <= (S0^2 + tau a^2 t) exp(K t)` with
/// `K = 3 + 2 tau + 4 |Psi|_1 |rho0|_inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBound {
    pub s0: f64,
    pub rate: f64,
    pub drift: f64,
}

impl EnergyBound {
    pub fn new(fields: &MacroFields, kernel: &DiscreteKernel) -> Self {
        let rho_max = fields.rho0.iter().cloned().fold(0.0, f64::max);
        let p = &fields.params;
        Self {
            s0: fields.sup_norm(),
            rate: 3.0 + 2.0 * p.tau + 4.0 * kernel.l1_norm() * rho_max,
            drift: p.tau * p.a * p.a,
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        (self.s0 * self.s0 + self.drift * t).sqrt() * (0.5 * self.rate * t).exp()
    }
}
