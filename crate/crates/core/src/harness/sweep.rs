//! Sweeps over the relaxation parameter and over the network size.

use rayon::prelude::*;
use serde::Serialize;

use crate::diagnostics::TestFunction;
use crate::error::{FhnError, Result};
use crate::grid::SpatialGrid;
use crate::harness::fit::{fit_loglog, partial_slopes, LogLogFit};
use crate::harness::run::{run_scenario, Monitor, RunOutput, Scenario};
use crate::kinetic::{deposit_moments, kinetic_step, CellMoments};
use crate::micro::{empirical_macro, micro_advance, sample_network, Coupling, NetworkKernel};

#[derive(Debug, Clone, Serialize)]
pub struct EpsPoint {
    pub eps: f64,
    pub sup_rel_entropy: f64,
    pub int_var_weighted: f64,
    pub int_var_unweighted: f64,
    /// Final weak gaps per configured test function.
    pub weak_gaps: Vec<(TestFunction, f64)>,
    /// `sup_t mu_k` for `k` in {0, 2, 4}.
    pub sup_moments: [f64; 3],
    pub int_mu6_v: f64,
    pub max_balance_residual: f64,
    pub monitors: Vec<Monitor>,
}

impl EpsPoint {
    fn from_run(out: &RunOutput) -> Self {
        Self {
            eps: out.eps,
            sup_rel_entropy: out.sup_rel_entropy(),
            int_var_weighted: out.integrated_variance(true),
            int_var_unweighted: out.integrated_variance(false),
            weak_gaps: out.weak_gaps.clone(),
            sup_moments: out.sup_moments(),
            int_mu6_v: out.integrated_mu6(),
            max_balance_residual: out.max_balance_residual(),
            monitors: out.monitors.clone(),
        }
    }

    pub fn max_weak_gap(&self) -> f64 {
        self.weak_gaps.iter().map(|g| g.1).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpsSweep {
    pub points: Vec<EpsPoint>,
    pub rel_entropy_fit: Option<LogLogFit>,
    pub var_weighted_fit: Option<LogLogFit>,
    pub var_unweighted_fit: Option<LogLogFit>,
    /// First failing `eps` and its error; points after it were dropped.
    pub failure: Option<(f64, String)>,
}

impl EpsSweep {
    pub fn eps(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.eps).collect()
    }

    /// Slope of the relative entropy between consecutive points.
    pub fn partial_slopes(&self) -> Vec<Option<f64>> {
        partial_slopes(&self.eps(), &self.points.iter().map(|p| p.sup_rel_entropy).collect::<Vec<_>>())
    }
}

/// Runs every `eps` of the config with dt and grid held fixed.
pub fn sweep_eps(scenario: &Scenario) -> Result<EpsSweep> {
    let list = &scenario.config.eps_list;
    if list.is_empty() {
        return Err(FhnError::InvalidInput("eps_list is empty".into()));
    }
    let results: Vec<Result<RunOutput>> = list.par_iter().map(|&eps| run_scenario(scenario, eps)).collect();
    let mut points = Vec::new();
    let mut failure = None;
    for (eps, r) in list.iter().zip(results) {
        match r {
            Ok(out) => points.push(EpsPoint::from_run(&out)),
            Err(e) => {
                failure = Some((*eps, e.to_string()));
                break;
            }
        }
    }
    let eps: Vec<f64> = points.iter().map(|p| p.eps).collect();
    let fit = |f: fn(&EpsPoint) -> f64| fit_loglog(&eps, &points.iter().map(f).collect::<Vec<_>>()).ok();
    Ok(EpsSweep {
        rel_entropy_fit: fit(|p| p.sup_rel_entropy),
        var_weighted_fit: fit(|p| p.int_var_weighted),
        var_unweighted_fit: fit(|p| p.int_var_unweighted),
        points,
        failure,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct NPoint {
    pub n: usize,
    /// Time-averaged distance, averaged over seeds.
    pub mean_distance: f64,
    /// Sample standard deviation across seeds.
    pub std_distance: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NSweep {
    pub points: Vec<NPoint>,
    pub fit: Option<LogLogFit>,
    pub record_times: Vec<f64>,
}

/// `sqrt(int |rho_a - rho_b|^2 + |j_a - j_b|^2 + |q_a - q_b|^2)`.
pub fn moment_distance(a: &CellMoments, rho: &[f64], v: &[f64], w: &[f64], grid: &SpatialGrid) -> f64 {
    let s: f64 = (0..a.rho.len())
        .map(|c| {
            let dr = a.rho[c] - rho[c];
            let dj = a.j[c] - rho[c] * v[c];
            let dq = a.q[c] - rho[c] * w[c];
            dr * dr + dj * dj + dq * dq
        })
        .sum();
    (s * grid.cell_volume()).sqrt()
}

/// Networks drawn from the initial kinetic measure against the kinetic
/// reference without strong local interaction (`eps = inf`), both driven by
/// the smooth kernel only.
pub fn sweep_n(scenario: &Scenario) -> Result<NSweep> {
    let cfg = &scenario.config;
    let sn = &cfg.sweep_n;
    let model = scenario.kinetic_model()?;
    let (steps, dt) = scenario.time_steps(sn.t_final);
    let mut cloud = scenario.initial.clone();
    let mut times = vec![0.0];
    let mut reference = vec![deposit_moments(&cloud, &scenario.grid)];
    for k in 0..steps {
        let t = k as f64 * dt;
        cloud = kinetic_step(&cloud, &model, dt, f64::INFINITY, t).map_err(|e| FhnError::RunFailed { time: t, source: Box::new(e) })?;
        if (k + 1) % cfg.record_every == 0 || k + 1 == steps {
            times.push((k + 1) as f64 * dt);
            reference.push(deposit_moments(&cloud, &scenario.grid));
        }
    }
    let kernel = NetworkKernel::smooth(&scenario.grid, cfg.kernel)?;
    let jobs: Vec<(usize, u64)> = sn.n_list.iter().flat_map(|&n| (0..sn.seeds as u64).map(move |s| (n, s))).collect();
    let distances: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(n, s)| {
            let placement = sn.placement.with_seed(cfg.seed.wrapping_add(s));
            let mut net = sample_network(&scenario.initial, &scenario.grid, n, placement, scenario.params)?;
            let coupling = Coupling::new(&net, &kernel);
            let mut total = 0.0;
            for (k, mom) in reference.iter().enumerate() {
                if k > 0 {
                    net = micro_advance(&net, &coupling, times[k - 1], times[k] - times[k - 1], cfg.dt)?;
                }
                let f = empirical_macro(&net, &scenario.grid)?;
                total += moment_distance(mom, &f.rho0, &f.v, &f.w, &scenario.grid);
            }
            Ok(total / reference.len() as f64)
        })
        .collect();
    let mut points = Vec::new();
    let mut it = distances.into_iter();
    for &n in &sn.n_list {
        let per_seed = (0..sn.seeds).map(|_| it.next().expect("one result per job")).collect::<Result<Vec<f64>>>()?;
        let k = per_seed.len() as f64;
        let mean = per_seed.iter().sum::<f64>() / k;
        let var = if per_seed.len() > 1 { per_seed.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (k - 1.0) } else { 0.0 };
        points.push(NPoint { n, mean_distance: mean, std_distance: var.sqrt(), per_seed });
    }
    let ns: Vec<f64> = points.iter().map(|p| p.n as f64).collect();
    let fit = fit_loglog(&ns, &points.iter().map(|p| p.mean_distance).collect::<Vec<_>>()).ok();
    Ok(NSweep { points, fit, record_times: times })
}
