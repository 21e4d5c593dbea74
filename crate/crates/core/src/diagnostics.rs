//! Moments, dissipations, entropies and the terms of the relative-entropy
//! balance
//!
//! ```text
//! d/dt int eta(Z_eps | Z) = int (V_eps - V) E(f_eps) + R_l + R_nl
//! ```
//!
//! All spatial integrals are cell sums weighted by the cell volume.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FhnError, Result};
use crate::fhn::FhnParams;
use crate::grid::{DiscreteKernel, Point, SpatialGrid};
use crate::hydro::{AdaptationCloud, MacroFields};
use crate::kinetic::{CellMoments, ParticleCloud};

/// Tolerance below zero accepted for quantities that are nonnegative in
/// exact arithmetic.
pub const ROUNDOFF_FLOOR: f64 = 1e-12;

/// Moments `mu_i^z = sum weight |z|^i`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MomentRecord {
    pub t: f64,
    /// Orders 0, 2, 4 in `|x|`.
    pub mu_x: [f64; 3],
    /// Orders 0, 2, 4, 6 in `v`.
    pub mu_v: [f64; 4],
    /// Orders 0, 2, 4 in `w`.
    pub mu_w: [f64; 3],
}

impl MomentRecord {
    /// `mu_i = mu_i^x + mu_i^v + mu_i^w` for `i` in {0, 2, 4}.
    pub fn total(&self, order: usize) -> f64 {
        let k = order / 2;
        self.mu_x[k] + self.mu_v[k] + self.mu_w[k]
    }

    /// `mu_{2p}^v + mu_{2p}^w`.
    pub fn vw(&self, p: usize) -> f64 {
        self.mu_v[p] + self.mu_w[p]
    }
}

pub fn moments(cloud: &ParticleCloud, grid: &SpatialGrid, t: f64) -> MomentRecord {
    let mut r = MomentRecord { t, ..Default::default() };
    for i in 0..cloud.len() {
        let m = cloud.weight()[i];
        let x = grid.center(cloud.cell()[i]);
        let x2 = x[0] * x[0] + x[1] * x[1];
        let v2 = cloud.v()[i] * cloud.v()[i];
        let w2 = cloud.w()[i] * cloud.w()[i];
        r.mu_x[0] += m;
        r.mu_x[1] += m * x2;
        r.mu_x[2] += m * x2 * x2;
        r.mu_v[0] += m;
        r.mu_v[1] += m * v2;
        r.mu_v[2] += m * v2 * v2;
        r.mu_v[3] += m * v2 * v2 * v2;
        r.mu_w[0] += m;
        r.mu_w[1] += m * w2;
        r.mu_w[2] += m * w2 * w2;
    }
    r
}

/// `D_p = sum_c rho_c sum_{i in c} weight_i v_i^{2p-1} (v_i - V_c)`.
pub fn dissipation(cloud: &ParticleCloud, moments: &CellMoments, p: u32) -> Result<f64> {
    if p != 1 && p != 2 {
        return Err(FhnError::InvalidInput(format!("dissipation order must be 1 or 2, got {p}")));
    }
    let mut d = 0.0;
    for i in 0..cloud.len() {
        let c = cloud.cell()[i];
        let v = cloud.v()[i];
        d += moments.rho[c] * cloud.weight()[i] * v.powi(2 * p as i32 - 1) * (v - moments.v_mean[c]);
    }
    if d < -ROUNDOFF_FLOOR {
        return Err(FhnError::NegativeDissipation { p, value: d });
    }
    Ok(d)
}

/// Constant `C` of the moment inequality
///
/// ```text
/// (1/2p) d/dt [mu_2p^v + mu_2p^w] + mu_{2p+2}^v + D_p / eps <= C (mu_2p^v + mu_2p^w + 1)
/// ```
///
/// for a cloud of total `mass`.
pub fn moment_constant(p: u32, params: &FhnParams, mass: f64) -> f64 {
    let q = 2.0 * p as f64;
    let local = 1.0 + (q - 1.0) / q + params.tau * (q - 1.0) / p as f64;
    let source = params.tau * params.a.abs().powi(2 * p as i32) * mass / q;
    local.max(source)
}

/// Largest value over the run of
/// `(1/2p) dM/dt + mu_{2p+2}^v + D_p/eps - C (M + 1)` with `M = mu_2p^v + mu_2p^w`;
/// positive values violate the inequality.
pub fn moment_inequality_residual(records: &[MomentRecord], dissipation: &[f64], eps: f64, p: u32, params: &FhnParams) -> Result<f64> {
    Ok(moment_inequality_series(records, dissipation, eps, p, params)?.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Per-record values whose maximum is [`moment_inequality_residual`].
pub fn moment_inequality_series(records: &[MomentRecord], dissipation: &[f64], eps: f64, p: u32, params: &FhnParams) -> Result<Vec<f64>> {
    if records.len() < 2 {
        return Err(FhnError::TooFewRecords { needed: 2, found: records.len() });
    }
    if dissipation.len() != records.len() {
        return Err(FhnError::MisalignedSeries(format!("{} moment records but {} dissipations", records.len(), dissipation.len())));
    }
    if p != 1 && p != 2 {
        return Err(FhnError::InvalidInput(format!("moment order p must be 1 or 2, got {p}")));
    }
    let k = p as usize;
    let c = moment_constant(p, params, records[0].mu_v[0]);
    let times: Vec<f64> = records.iter().map(|r| r.t).collect();
    let m: Vec<f64> = records.iter().map(|r| r.vw(k)).collect();
    let dm = time_derivative(&times, &m)?;
    let inv_eps = if eps.is_infinite() { 0.0 } else { 1.0 / eps };
    Ok((0..records.len())
        .map(|i| dm[i] / (2.0 * p as f64) + records[i].mu_v[k + 1] + dissipation[i] * inv_eps - c * (m[i] + 1.0))
        .collect())
}

/// Gronwall consequences of the moment inequality: bounds on the moments
/// over `[0, T]` that do not depend on `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentBounds {
    /// `sup_t (mu_2^v + mu_2^w)`.
    pub m2: f64,
    /// `sup_t (mu_4^v + mu_4^w)`.
    pub m4: f64,
    /// `int_0^T mu_6^v dt`.
    pub int_mu6: f64,
}

impl MomentBounds {
    pub fn new(initial: &MomentRecord, params: &FhnParams, t_final: f64) -> Self {
        let mass = initial.mu_v[0];
        let c1 = moment_constant(1, params, mass);
        let c2 = moment_constant(2, params, mass);
        let m2_0 = initial.vw(1);
        let m4_0 = initial.vw(2);
        Self {
            m2: (m2_0 + 1.0) * (2.0 * c1 * t_final).exp() - 1.0,
            m4: (m4_0 + 1.0) * (4.0 * c2 * t_final).exp() - 1.0,
            int_mu6: m4_0 / 4.0 + (m4_0 + 1.0) * ((4.0 * c2 * t_final).exp() - 1.0) / 4.0,
        }
    }
}

/// Read access to a macroscopic state `(rho, V, W)`.
pub trait MacroState {
    fn rho(&self) -> &[f64];
    fn v(&self) -> &[f64];
    fn w(&self) -> &[f64];
}

impl MacroState for MacroFields {
    fn rho(&self) -> &[f64] {
        &self.rho0
    }
    fn v(&self) -> &[f64] {
        &self.v
    }
    fn w(&self) -> &[f64] {
        &self.w
    }
}

impl MacroState for CellMoments {
    fn rho(&self) -> &[f64] {
        &self.rho
    }
    fn v(&self) -> &[f64] {
        &self.v_mean
    }
    fn w(&self) -> &[f64] {
        &self.w_mean
    }
}

/// `int rho (V^2 + W^2) / 2`.
pub fn entropy(z: &impl MacroState, grid: &SpatialGrid) -> f64 {
    let s: f64 = (0..z.rho().len()).map(|c| z.rho()[c] * (z.v()[c] * z.v()[c] + z.w()[c] * z.w()[c])).sum();
    0.5 * s * grid.cell_volume()
}

/// `int rho1 (|V2 - V1|^2 + |W2 - W1|^2) / 2`.
pub fn relative_entropy(z1: &impl MacroState, z2: &impl MacroState, grid: &SpatialGrid) -> f64 {
    let s: f64 = (0..z1.rho().len())
        .map(|c| {
            let dv = z2.v()[c] - z1.v()[c];
            let dw = z2.w()[c] - z1.w()[c];
            z1.rho()[c] * (dv * dv + dw * dw)
        })
        .sum();
    0.5 * s * grid.cell_volume()
}

/// Closure error `E_c = sum_{i in c} weight_i (N(v_i) - N(V_c)) / cell_volume`.
pub fn error_term(cloud: &ParticleCloud, moments: &CellMoments, grid: &SpatialGrid, params: &FhnParams) -> Vec<f64> {
    let mut e = vec![0.0; grid.num_cells()];
    for i in 0..cloud.len() {
        let c = cloud.cell()[i];
        e[c] += cloud.weight()[i] * (params.excitability(cloud.v()[i]) - params.excitability(moments.v_mean[c]));
    }
    let inv = 1.0 / grid.cell_volume();
    e.iter_mut().for_each(|x| *x *= inv);
    e
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Remainders {
    pub rl: f64,
    pub rnl: f64,
    pub sl: f64,
    pub snl: f64,
}

/// Local and nonlocal remainder integrals with `Z~ = zeps`.
pub fn remainder_terms(zeps: &CellMoments, z: &MacroFields, kernel: &DiscreteKernel) -> Result<Remainders> {
    let grid = kernel.grid();
    let vol = grid.cell_volume();
    let p = &z.params;
    let (rt, vt, wt) = (&zeps.rho, &zeps.v_mean, &zeps.w_mean);
    let l_macro = kernel.nonlocal_operator(&z.rho0, &z.v)?;
    let l_eps = kernel.nonlocal_operator(rt, vt)?;
    let mut r = Remainders::default();
    for c in 0..grid.num_cells() {
        let (v, w, vv, ww) = (z.v[c], z.w[c], vt[c], wt[c]);
        r.rl += rt[c]
            * ((v - vv) * (p.excitability(v) - w - p.excitability(vv) + ww)
                + (w - ww) * (p.adaptation(v, w) - p.adaptation(vv, ww)));
        r.rnl += rt[c] * (v - vv) * (l_macro[c] - l_eps[c]);
        r.sl -= rt[c] * (vv * p.excitability(vv) - vv * ww + ww * p.adaptation(vv, ww));
    }
    r.rl *= vol;
    r.rnl *= vol;
    r.sl *= vol;
    r.snl = nonlocal_dissipation_double_sum(kernel, rt, vt);
    Ok(r)
}

/// `-1/2 sum_c sum_c' Psi_cc' rho_c rho_c' (V_c - V_c')^2 vol^2`.
pub fn nonlocal_dissipation_double_sum(kernel: &DiscreteKernel, rho: &[f64], v: &[f64]) -> f64 {
    let m = rho.len();
    let vol = kernel.grid().cell_volume();
    let rows: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|c| {
            let mut s = 0.0;
            for c2 in 0..m {
                let d = v[c] - v[c2];
                s += kernel.between(c, c2) * rho[c2] * d * d;
            }
            rho[c] * s
        })
        .collect();
    -0.5 * rows.iter().sum::<f64>() * vol * vol
}

/// Derivative of a sampled series: three-point centred differences inside,
/// three-point one-sided differences at both ends (two points fall back to a
/// single difference). Handles nonuniform spacing.
pub fn time_derivative(times: &[f64], values: &[f64]) -> Result<Vec<f64>> {
    let n = times.len();
    if values.len() != n {
        return Err(FhnError::MisalignedSeries(format!("{n} times but {} values", values.len())));
    }
    if n < 2 {
        return Err(FhnError::TooFewRecords { needed: 2, found: n });
    }
    if times.windows(2).any(|p| !(p[1] > p[0])) {
        return Err(FhnError::MisalignedSeries("times must increase strictly".into()));
    }
    if n == 2 {
        let d = (values[1] - values[0]) / (times[1] - times[0]);
        return Ok(vec![d, d]);
    }
    let mut out = vec![0.0; n];
    for k in 1..n - 1 {
        let h1 = times[k] - times[k - 1];
        let h2 = times[k + 1] - times[k];
        out[k] = -h2 / (h1 * (h1 + h2)) * values[k - 1] + (h2 - h1) / (h1 * h2) * values[k] + h1 / (h2 * (h1 + h2)) * values[k + 1];
    }
    let one_sided = |f0: f64, f1: f64, f2: f64, h1: f64, h2: f64| {
        -(2.0 * h1 + h2) / (h1 * (h1 + h2)) * f0 + (h1 + h2) / (h1 * h2) * f1 - h1 / (h2 * (h1 + h2)) * f2
    };
    out[0] = one_sided(values[0], values[1], values[2], times[1] - times[0], times[2] - times[1]);
    out[n - 1] = -one_sided(
        values[n - 1],
        values[n - 2],
        values[n - 3],
        times[n - 1] - times[n - 2],
        times[n - 2] - times[n - 3],
    );
    Ok(out)
}

/// Per-record `|d/dt rel_entropy - source|` where `source` is
/// `int (V_eps - V) E + R_l + R_nl` at the same times.
pub fn entropy_balance_series(times: &[f64], rel_entropy: &[f64], source: &[f64]) -> Result<Vec<f64>> {
    if source.len() != times.len() {
        return Err(FhnError::MisalignedSeries(format!("{} times but {} source values", times.len(), source.len())));
    }
    let d = time_derivative(times, rel_entropy)?;
    Ok(d.iter().zip(source).map(|(a, b)| (a - b).abs()).collect())
}

/// Maximum of [`entropy_balance_series`] over the run.
pub fn entropy_balance_residual(times: &[f64], rel_entropy: &[f64], source: &[f64]) -> Result<f64> {
    Ok(entropy_balance_series(times, rel_entropy, source)?.into_iter().fold(0.0, f64::max))
}

/// `int (V_eps - V) E`.
pub fn error_coupling(zeps: &CellMoments, z: &MacroFields, e: &[f64], grid: &SpatialGrid) -> f64 {
    let s: f64 = (0..e.len()).map(|c| (zeps.v_mean[c] - z.v[c]) * e[c]).sum();
    s * grid.cell_volume()
}

/// `sum weight |v - V_c|^2`, times `rho_c` when `weighted`.
pub fn velocity_variance(cloud: &ParticleCloud, moments: &CellMoments, weighted: bool) -> f64 {
    let mut s = 0.0;
    for i in 0..cloud.len() {
        let c = cloud.cell()[i];
        let d = cloud.v()[i] - moments.v_mean[c];
        let factor = if weighted { moments.rho[c] } else { 1.0 };
        s += factor * cloud.weight()[i] * d * d;
    }
    s
}

/// Bounded continuous test functions `phi(x, v, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestFunction {
    One,
    V,
    W,
    /// `exp(-(v^2 + w^2)/2) / (1 + |x|^2)`
    Bump,
}

impl TestFunction {
    pub const ALL: [TestFunction; 4] = [TestFunction::One, TestFunction::V, TestFunction::W, TestFunction::Bump];

    pub fn eval(&self, x: &Point, v: f64, w: f64) -> f64 {
        match self {
            TestFunction::One => 1.0,
            TestFunction::V => v,
            TestFunction::W => w,
            TestFunction::Bump => (-(v * v + w * w) / 2.0).exp() / (1.0 + x[0] * x[0] + x[1] * x[1]),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TestFunction::One => "one",
            TestFunction::V => "v",
            TestFunction::W => "w",
            TestFunction::Bump => "bump",
        }
    }
}

/// `|sum_f weight phi(x, v, w) - sum_F weight phi(x, V(x), w)|`.
pub fn weak_convergence_gap(
    cloud: &ParticleCloud,
    f: &AdaptationCloud,
    fields: &MacroFields,
    grid: &SpatialGrid,
    phi: &dyn Fn(&Point, f64, f64) -> f64,
) -> f64 {
    let kinetic: f64 = (0..cloud.len())
        .map(|i| cloud.weight()[i] * phi(&grid.center(cloud.cell()[i]), cloud.v()[i], cloud.w()[i]))
        .sum();
    let limit: f64 = (0..f.len())
        .map(|i| {
            let c = f.cell()[i];
            f.weight()[i] * phi(&grid.center(c), fields.v[c], f.w()[i])
        })
        .sum();
    (kinetic - limit).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fhn::Reaction;
    use crate::grid::{build_kernel, KernelSpec};
    use crate::kinetic::deposit_moments;
    use approx::assert_relative_eq;

    fn one_cell() -> SpatialGrid {
        SpatialGrid::uniform_1d(1.0, 1).unwrap()
    }

    fn pm_one(g: &SpatialGrid) -> ParticleCloud {
        ParticleCloud::new(g, vec![0, 0], vec![1.0, -1.0], vec![0.0, 0.0], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn moment_examples() {
        let g = SpatialGrid::uniform_1d(2.0, 2).unwrap();
        let c = ParticleCloud::new(&g, vec![0, 1], vec![0.3, -1.0], vec![1.0, 2.0], vec![0.25, 0.75]).unwrap();
        let m = moments(&c, &g, 0.0);
        assert_eq!(m.total(0), 3.0);
        let g1 = SpatialGrid::uniform_1d(1.0, 1).unwrap();
        let single = ParticleCloud::new(&g1, vec![0], vec![2.0], vec![0.0], vec![1.0]).unwrap();
        let m = moments(&single, &g1, 0.0);
        assert_eq!((m.mu_v[1], m.mu_v[2], m.mu_x[1]), (4.0, 16.0, 0.0));
        assert_eq!(moments(&ParticleCloud::empty(), &g1, 0.0), MomentRecord::default());
    }

    #[test]
    fn dissipation_examples() {
        let g = one_cell();
        let c = pm_one(&g);
        let m = deposit_moments(&c, &g);
        assert_eq!(dissipation(&c, &m, 1).unwrap(), 1.0);
        assert_eq!(dissipation(&c, &m, 2).unwrap(), 1.0);
        let mono = ParticleCloud::new(&g, vec![0], vec![0.7], vec![0.0], vec![1.0]).unwrap();
        let mm = deposit_moments(&mono, &g);
        assert!(dissipation(&mono, &mm, 1).unwrap().abs() < 1e-15);
        assert!(dissipation(&c, &m, 3).is_err());
        // moments that disagree with the particles: D_1 = 5 - 2 V
        let skew = ParticleCloud::new(&g, vec![0, 0], vec![1.0, 3.0], vec![0.0; 2], vec![0.5, 0.5]).unwrap();
        let mut bad = deposit_moments(&skew, &g);
        bad.v_mean[0] = 5.0;
        assert!(matches!(dissipation(&skew, &bad, 1), Err(FhnError::NegativeDissipation { p: 1, .. })));
    }

    #[test]
    fn moment_inequality_detector() {
        let p = FhnParams::default();
        let g = one_cell();
        let eq = ParticleCloud::new(&g, vec![0], vec![0.0], vec![0.0], vec![1.0]).unwrap();
        let recs: Vec<MomentRecord> = (0..3).map(|k| moments(&eq, &g, k as f64 * 0.1)).collect();
        assert!(moment_inequality_residual(&recs, &[0.0; 3], 0.1, 1, &p).unwrap() <= 0.0);
        let c = moment_constant(1, &p, 1.0);
        let mut bad = recs.clone();
        for r in bad.iter_mut() {
            r.mu_v[2] = c * 1.0 + 1.0;
        }
        assert!(moment_inequality_residual(&bad, &[0.0; 3], 0.1, 1, &p).unwrap() >= 1.0 - 1e-12);
        assert!(matches!(moment_inequality_residual(&recs[..1], &[0.0], 0.1, 1, &p), Err(FhnError::TooFewRecords { .. })));
    }

    #[test]
    fn moment_constant_matches_unit_mass_formula() {
        let p = FhnParams { tau: 0.3, a: 2.0, ..FhnParams::default() };
        for q in [1u32, 2] {
            let pp = q as f64;
            let expected = ((2.0 * pp - 1.0) / (2.0 * pp) + p.tau * (2.0 * pp - 1.0) / pp + 1.0).max(p.tau * 2f64.powi(2 * q as i32) / (2.0 * pp));
            assert_eq!(moment_constant(q, &p, 1.0), expected);
        }
    }

    #[test]
    fn entropy_examples() {
        let g = one_cell();
        let z = MacroFields::new(vec![2.0], vec![1.0], vec![3.0], FhnParams::default()).unwrap();
        assert_eq!(entropy(&z, &g), 10.0);
        let z2 = MacroFields { rho0: vec![4.0], ..z.clone() };
        assert_eq!(entropy(&z2, &g), 20.0);
        let zero = MacroFields::new(vec![2.0], vec![0.0], vec![0.0], FhnParams::default()).unwrap();
        assert_eq!(entropy(&zero, &g), 0.0);
    }

    #[test]
    fn relative_entropy_examples() {
        let g = one_cell();
        let z1 = CellMoments::from_densities(vec![2.0], vec![0.0], vec![0.0]);
        let z2 = MacroFields::new(vec![2.0], vec![1.0], vec![3.0], FhnParams::default()).unwrap();
        assert_eq!(relative_entropy(&z1, &z2, &g), 10.0);
        assert_eq!(relative_entropy(&z2, &z2, &g), 0.0);
        let g2 = SpatialGrid::uniform_1d(2.0, 2).unwrap();
        let empty = CellMoments::from_densities(vec![0.0, 1.0], vec![0.0, 0.5], vec![0.0, 0.0]);
        let other = MacroFields::new(vec![1.0, 1.0], vec![7.0, 0.5], vec![0.0, 0.0], FhnParams::default()).unwrap();
        assert_eq!(relative_entropy(&empty, &other, &g2), 0.0);
    }

    #[test]
    fn error_term_examples() {
        let g = one_cell();
        let p = FhnParams::default();
        let c = ParticleCloud::new(&g, vec![0, 0], vec![2.0, 0.0], vec![0.0, 0.0], vec![0.5, 0.5]).unwrap();
        let m = deposit_moments(&c, &g);
        assert_eq!(m.v_mean[0], 1.0);
        // oracle: N(V + d) + N(V - d) - 2 N(V) = -6 V d^2
        assert_relative_eq!(error_term(&c, &m, &g, &p)[0], -6.0 * 1.0 * 1.0 / 2.0, max_relative = 1e-14);
        let lin = p.with_reaction(Reaction::Identity);
        assert!(error_term(&c, &m, &g, &lin)[0].abs() < 1e-15);
        let mono = ParticleCloud::new(&g, vec![0], vec![0.4], vec![0.0], vec![1.0]).unwrap();
        assert!(error_term(&mono, &deposit_moments(&mono, &g), &g, &p)[0].abs() < 1e-15);
    }

    #[test]
    fn remainder_examples() {
        let g = SpatialGrid::uniform_1d(4.0, 8).unwrap();
        let k = build_kernel(&g, &KernelSpec::gaussian(1.0, 1.0)).unwrap();
        let p = FhnParams::default();
        let rho = vec![0.25; 8];
        let v: Vec<f64> = (0..8).map(|c| (c as f64).sin()).collect();
        let w: Vec<f64> = (0..8).map(|c| 0.1 * c as f64).collect();
        let j: Vec<f64> = rho.iter().zip(&v).map(|(r, v)| r * v).collect();
        let q: Vec<f64> = rho.iter().zip(&w).map(|(r, w)| r * w).collect();
        let zeps = CellMoments::from_densities(rho.clone(), j, q);
        let z = MacroFields::new(rho.clone(), zeps.v_mean.clone(), zeps.w_mean.clone(), p).unwrap();
        let r = remainder_terms(&zeps, &z, &k).unwrap();
        assert_eq!((r.rl, r.rnl), (0.0, 0.0));
        assert!(r.snl < 0.0);
        let flat = CellMoments::from_densities(rho.clone(), vec![0.0; 8], vec![0.0; 8]);
        let r0 = remainder_terms(&flat, &z, &k).unwrap();
        assert_eq!((r0.snl, r0.sl), (0.0, 0.0));
    }

    #[test]
    fn snl_two_ways() {
        let g = SpatialGrid::uniform_1d(6.0, 24).unwrap();
        let k = build_kernel(&g, &KernelSpec::exponential(1.3, 0.8)).unwrap();
        let rho: Vec<f64> = (0..24).map(|c| 0.1 + (c as f64 * 0.3).cos().powi(2)).collect();
        let v: Vec<f64> = (0..24).map(|c| (c as f64 * 0.7).sin()).collect();
        let l = k.nonlocal_operator(&rho, &v).unwrap();
        let via_operator: f64 = (0..24).map(|c| rho[c] * v[c] * l[c]).sum::<f64>() * g.cell_volume();
        let double = nonlocal_dissipation_double_sum(&k, &rho, &v);
        assert_relative_eq!(via_operator, double, max_relative = 1e-10);
    }

    #[test]
    fn derivative_is_exact_on_quadratics() {
        let times = [0.0, 0.1, 0.25, 0.3, 0.5];
        let f: Vec<f64> = times.iter().map(|t| 2.0 - t + 3.0 * t * t).collect();
        let d = time_derivative(&times, &f).unwrap();
        for (t, dd) in times.iter().zip(d) {
            assert!((dd - (-1.0 + 6.0 * t)).abs() < 1e-12, "{t}: {dd}");
        }
        assert!(time_derivative(&[0.0, 0.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn balance_residual_detector() {
        let times = [0.0, 0.1, 0.2, 0.3];
        assert_eq!(entropy_balance_residual(&times, &[0.0; 4], &[0.0; 4]).unwrap(), 0.0);
        let injected = [0.0, 1.0, 0.0, 0.0];
        assert!(entropy_balance_residual(&times, &[0.0; 4], &injected).unwrap() >= 1.0);
        assert!(matches!(entropy_balance_residual(&times, &[0.0; 4], &[0.0; 3]), Err(FhnError::MisalignedSeries(_))));
    }

    #[test]
    fn variance_examples() {
        let g = one_cell();
        let c = pm_one(&g);
        let m = deposit_moments(&c, &g);
        assert_eq!(velocity_variance(&c, &m, true), 1.0);
        assert_eq!(velocity_variance(&c, &m, false), 1.0);
        let g2 = SpatialGrid::uniform_1d(2.0, 2).unwrap();
        let c2 = ParticleCloud::new(&g2, vec![0, 0], vec![1.0, -1.0], vec![0.0; 2], vec![0.5, 0.5]).unwrap();
        let mut m2 = deposit_moments(&c2, &g2);
        m2.rho[0] = 0.0;
        assert_eq!(velocity_variance(&c2, &m2, true), 0.0);
    }

    #[test]
    fn weak_gap_examples() {
        let g = SpatialGrid::uniform_1d(2.0, 2).unwrap();
        let p = FhnParams::default();
        let cloud = ParticleCloud::new(&g, vec![0, 0, 1], vec![0.5, 1.5, -0.3], vec![0.1, 0.2, 0.3], vec![0.25, 0.25, 0.5]).unwrap();
        let m = deposit_moments(&cloud, &g);
        let fields = MacroFields::from_moments(&m, p).unwrap();
        let f = AdaptationCloud::from_kinetic(&cloud);
        let one = |x: &Point, v: f64, w: f64| TestFunction::One.eval(x, v, w);
        assert_eq!(weak_convergence_gap(&cloud, &f, &fields, &g, &one), 0.0);
        // phi = v: |sum_c (j_c - V_c rho_c)| vol, checked with the cell-0 V shifted
        let shifted = MacroFields { v: vec![0.7, fields.v[1]], ..fields.clone() };
        let vphi = |x: &Point, v: f64, w: f64| TestFunction::V.eval(x, v, w);
        let direct = (m.j[0] - 0.7 * m.rho[0]).abs() * g.cell_volume();
        assert_relative_eq!(weak_convergence_gap(&cloud, &f, &shifted, &g, &vphi), direct, max_relative = 1e-12);
        let mono = ParticleCloud::new(&g, vec![0, 1], vec![0.3, 0.3], vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let mf = MacroFields::from_moments(&deposit_moments(&mono, &g), p).unwrap();
        let bump = |x: &Point, v: f64, w: f64| TestFunction::Bump.eval(x, v, w);
        assert!(weak_convergence_gap(&mono, &AdaptationCloud::from_kinetic(&mono), &mf, &g, &bump) < 1e-15);
    }

    #[test]
    fn moment_bounds_cover_initial_state() {
        let g = one_cell();
        let c = pm_one(&g);
        let r = moments(&c, &g, 0.0);
        let b = MomentBounds::new(&r, &FhnParams::default(), 0.0);
        assert!((b.m2 - r.vw(1)).abs() < 1e-12 && (b.m4 - r.vw(2)).abs() < 1e-12);
    }
}
