//! One scenario at one relaxation parameter: the kinetic cloud, the limit
//! fields and the adaptation density advanced side by side, with every
//! diagnostic recorded along the way.

use std::time::Instant;

use serde::Serialize;

use crate::diagnostics::{
    dissipation, entropy, entropy_balance_series, error_coupling, error_term, moments, relative_entropy,
    remainder_terms, velocity_variance, weak_convergence_gap, MomentRecord, TestFunction, ROUNDOFF_FLOOR,
};
use crate::error::{FhnError, Result};
use crate::fhn::FhnParams;
use crate::grid::{build_kernel, DiscreteKernel, SpatialGrid};
use crate::harness::config::ScenarioConfig;
use crate::hydro::{advect_f, consistency_w, macro_step, AdaptationCloud, EnergyBound, MacroFields, VTrajectory};
use crate::kinetic::{deposit_moments, kinetic_step, sample_initial, support_radius, CellMoments, KineticModel, ParticleCloud, SupportBound};

/// Everything derived from a config that does not depend on `eps`.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub grid: SpatialGrid,
    pub kernel: DiscreteKernel,
    pub params: FhnParams,
    pub initial: ParticleCloud,
    pub initial_moments: CellMoments,
}

impl Scenario {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.build_grid()?;
        let kernel = build_kernel(&grid, &config.kernel)?;
        let initial = sample_initial(&config.initial_data(&grid)?, &grid)?;
        let initial_moments = deposit_moments(&initial, &grid);
        Ok(Self { config: config.clone(), grid, kernel, params: config.params, initial, initial_moments })
    }

    pub fn kinetic_model(&self) -> Result<KineticModel> {
        KineticModel::new(self.kernel.clone(), self.params, &self.initial, self.config.initial.safety_radius)
    }

    /// Limit fields matching the deposited initial moments, so the initial
    /// relative entropy is exactly zero.
    pub fn initial_fields(&self) -> Result<MacroFields> {
        MacroFields::from_moments(&self.initial_moments, self.params)
    }

    /// Number of steps and the step that lands exactly on `t_final`.
    pub fn time_steps(&self, t_final: f64) -> (usize, f64) {
        let dt = self.config.dt;
        if t_final == 0.0 {
            return (0, dt);
        }
        let steps = ((t_final / dt) - 1e-9).ceil().max(1.0) as usize;
        (steps, t_final / steps as f64)
    }
}

/// One line of `diagnostics.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub mu0: f64,
    pub mu2_v: f64,
    pub mu2_w: f64,
    pub mu4_v: f64,
    pub mu4_w: f64,
    pub mu6_v: f64,
    pub d1: f64,
    pub d2: f64,
    pub entropy: f64,
    pub rel_entropy: f64,
    pub e_l1: f64,
    pub rl: f64,
    pub rnl: f64,
    pub sl: f64,
    pub snl: f64,
    pub balance_residual: f64,
    pub var_weighted: f64,
    pub var_unweighted: f64,
    pub support_r: f64,
}

impl DiagnosticsRow {
    pub const HEADER: [&'static str; 20] = [
        "t", "mu0", "mu2_v", "mu2_w", "mu4_v", "mu4_w", "mu6_v", "D1", "D2", "entropy", "rel_entropy", "E_l1", "Rl",
        "Rnl", "Sl", "Snl", "balance_residual", "var_weighted", "var_unweighted", "support_R",
    ];

    pub fn values(&self) -> [f64; 20] {
        [
            self.t,
            self.mu0,
            self.mu2_v,
            self.mu2_w,
            self.mu4_v,
            self.mu4_w,
            self.mu6_v,
            self.d1,
            self.d2,
            self.entropy,
            self.rel_entropy,
            self.e_l1,
            self.rl,
            self.rnl,
            self.sl,
            self.snl,
            self.balance_residual,
            self.var_weighted,
            self.var_unweighted,
            self.support_r,
        ]
    }
}

/// Outcome of an invariant checked throughout a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Monitor {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value of the monitored quantity.
    pub worst: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct Worst {
    /// `(value, limit)` with the largest `value - limit` so far.
    worst: Option<(f64, f64)>,
    failed: bool,
}

impl Worst {
    fn check(&mut self, value: f64, limit: f64) {
        let replace = match self.worst {
            None => true,
            Some((v, l)) => !(value - limit <= v - l),
        };
        if replace {
            self.worst = Some((value, limit));
        }
        if !(value <= limit) {
            self.failed = true;
        }
    }

    fn report(&self, name: &'static str) -> Monitor {
        let (worst, limit) = self.worst.unwrap_or((0.0, 0.0));
        Monitor { name, passed: !self.failed, worst, limit }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub eps: f64,
    pub dt: f64,
    pub rows: Vec<DiagnosticsRow>,
    pub moments: Vec<MomentRecord>,
    /// `int (V_eps - V) E + R_l + R_nl` per record.
    pub balance_source: Vec<f64>,
    /// `max_c |W - <w>_F|` per record.
    pub consistency_w: Vec<f64>,
    /// Recorded limit fields `(t, V, W)`.
    pub macro_series: Vec<(f64, Vec<f64>, Vec<f64>)>,
    pub final_cloud: ParticleCloud,
    pub final_moments: CellMoments,
    pub final_fields: MacroFields,
    pub final_f: AdaptationCloud,
    /// Final weak gaps in the order of the configured test functions.
    pub weak_gaps: Vec<(TestFunction, f64)>,
    pub monitors: Vec<Monitor>,
    pub seconds: f64,
}

impl RunOutput {
    pub fn passed(&self) -> bool {
        self.monitors.iter().all(|m| m.passed)
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn sup_rel_entropy(&self) -> f64 {
        self.rows.iter().map(|r| r.rel_entropy).fold(0.0, f64::max)
    }

    pub fn integrated_variance(&self, weighted: bool) -> f64 {
        trapezoid(&self.times(), &self.rows.iter().map(|r| if weighted { r.var_weighted } else { r.var_unweighted }).collect::<Vec<_>>())
    }

    /// `sup_t mu_k` for `k` in {0, 2, 4}.
    pub fn sup_moments(&self) -> [f64; 3] {
        let mut out = [0.0f64; 3];
        for m in &self.moments {
            for (k, o) in out.iter_mut().enumerate() {
                *o = o.max(m.total(2 * k));
            }
        }
        out
    }

    pub fn integrated_mu6(&self) -> f64 {
        trapezoid(&self.times(), &self.moments.iter().map(|m| m.mu_v[3]).collect::<Vec<_>>())
    }

    pub fn max_balance_residual(&self) -> f64 {
        self.rows.iter().map(|r| r.balance_residual).fold(0.0, f64::max)
    }

    pub fn max_weak_gap(&self) -> f64 {
        self.weak_gaps.iter().map(|g| g.1).fold(0.0, f64::max)
    }
}

/// Trapezoidal rule on a sampled series; 0 for fewer than two samples.
pub fn trapezoid(t: &[f64], y: &[f64]) -> f64 {
    t.windows(2).zip(y.windows(2)).map(|(t, y)| 0.5 * (t[1] - t[0]) * (y[0] + y[1])).sum()
}

struct Recorder<'a> {
    scenario: &'a Scenario,
    support_bound: SupportBound,
    energy_bound: EnergyBound,
    rows: Vec<DiagnosticsRow>,
    moments: Vec<MomentRecord>,
    source: Vec<f64>,
    consistency: Vec<f64>,
    macro_series: Vec<(f64, Vec<f64>, Vec<f64>)>,
    mass: Worst,
    dissipation: Worst,
    snl: Worst,
    rel: Worst,
    support: Worst,
    energy: Worst,
    f_mass: Worst,
}

impl Recorder<'_> {
    fn record(&mut self, t: f64, cloud: &ParticleCloud, fields: &MacroFields, f: &AdaptationCloud) -> Result<()> {
        let sc = self.scenario;
        let grid = &sc.grid;
        let mom = deposit_moments(cloud, grid);
        let rho0 = &sc.initial_moments.rho;
        let rho_scale = rho0.iter().cloned().fold(0.0, f64::max);
        let drift = mom.rho.iter().zip(rho0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / rho_scale;
        let total = (cloud.total_mass() - sc.initial.total_mass()).abs() / sc.initial.total_mass();
        self.mass.check(drift.max(total), 1e-12);
        self.f_mass.check((f.total_mass() - sc.initial.total_mass()).abs() / sc.initial.total_mass(), 1e-12);

        let mut dp = [0.0; 2];
        for (k, p) in [1u32, 2].into_iter().enumerate() {
            dp[k] = match dissipation(cloud, &mom, p) {
                Ok(d) => d,
                Err(FhnError::NegativeDissipation { value, .. }) => value,
                Err(e) => return Err(e),
            };
            self.dissipation.check(-dp[k], ROUNDOFF_FLOOR);
        }
        let mrec = moments(cloud, grid, t);
        let e = error_term(cloud, &mom, grid, &sc.params);
        let rem = remainder_terms(&mom, fields, &sc.kernel)?;
        self.snl.check(rem.snl, ROUNDOFF_FLOOR);
        let rel = relative_entropy(&mom, fields, grid);
        self.rel.check(-rel, 0.0);
        let support_r = support_radius(cloud);
        self.support.check(support_r, self.support_bound.at(t));
        self.energy.check(fields.sup_norm(), self.energy_bound.at(t));

        self.source.push(error_coupling(&mom, fields, &e, grid) + rem.rl + rem.rnl);
        self.consistency.push(consistency_w(f, fields, grid).into_iter().fold(0.0, f64::max));
        self.macro_series.push((t, fields.v.clone(), fields.w.clone()));
        self.rows.push(DiagnosticsRow {
            t,
            mu0: mrec.total(0),
            mu2_v: mrec.mu_v[1],
            mu2_w: mrec.mu_w[1],
            mu4_v: mrec.mu_v[2],
            mu4_w: mrec.mu_w[2],
            mu6_v: mrec.mu_v[3],
            d1: dp[0],
            d2: dp[1],
            entropy: entropy(&mom, grid),
            rel_entropy: rel,
            e_l1: e.iter().map(|x| x.abs()).sum::<f64>() * grid.cell_volume(),
            rl: rem.rl,
            rnl: rem.rnl,
            sl: rem.sl,
            snl: rem.snl,
            balance_residual: 0.0,
            var_weighted: velocity_variance(cloud, &mom, true),
            var_unweighted: velocity_variance(cloud, &mom, false),
            support_r,
        });
        self.moments.push(mrec);
        Ok(())
    }
}

/// Runs the scenario at one `eps` up to the configured final time.
pub fn run_scenario(scenario: &Scenario, eps: f64) -> Result<RunOutput> {
    if !(eps > 0.0) {
        return Err(FhnError::InvalidEpsilon(eps));
    }
    let start = Instant::now();
    let cfg = &scenario.config;
    let model = scenario.kinetic_model()?;
    let (steps, dt) = scenario.time_steps(cfg.t_final);
    let mut cloud = scenario.initial.clone();
    let mut fields = scenario.initial_fields()?;
    let mut f = AdaptationCloud::from_kinetic(&cloud);
    let mut trajectory = VTrajectory::new();
    trajectory.record(0.0, &fields, &scenario.kernel)?;

    let mut rec = Recorder {
        scenario,
        support_bound: model.support_bound(&scenario.initial, eps),
        energy_bound: EnergyBound::new(&fields, &scenario.kernel),
        rows: Vec::new(),
        moments: Vec::new(),
        source: Vec::new(),
        consistency: Vec::new(),
        macro_series: Vec::new(),
        mass: Worst::default(),
        dissipation: Worst::default(),
        snl: Worst::default(),
        rel: Worst::default(),
        support: Worst::default(),
        energy: Worst::default(),
        f_mass: Worst::default(),
    };
    rec.record(0.0, &cloud, &fields, &f)?;

    for k in 0..steps {
        let t = k as f64 * dt;
        let t_next = (k + 1) as f64 * dt;
        let failed = |e: FhnError| FhnError::RunFailed { time: t, source: Box::new(e) };
        cloud = kinetic_step(&cloud, &model, dt, eps, t).map_err(failed)?;
        fields = macro_step(&fields, &scenario.kernel, dt).map_err(failed)?;
        trajectory.record(t_next, &fields, &scenario.kernel).map_err(failed)?;
        f = advect_f(&f, &trajectory, &scenario.params, t, dt).map_err(failed)?;
        if (k + 1) % cfg.record_every == 0 || k + 1 == steps {
            rec.record(t_next, &cloud, &fields, &f)?;
        }
    }

    let times: Vec<f64> = rec.rows.iter().map(|r| r.t).collect();
    if times.len() >= 2 {
        let rel: Vec<f64> = rec.rows.iter().map(|r| r.rel_entropy).collect();
        let residual = entropy_balance_series(&times, &rel, &rec.source)?;
        for (row, r) in rec.rows.iter_mut().zip(residual) {
            row.balance_residual = r;
        }
    }

    let final_moments = deposit_moments(&cloud, &scenario.grid);
    let weak_gaps = cfg
        .test_functions
        .iter()
        .map(|tf| {
            let phi = |x: &crate::grid::Point, v: f64, w: f64| tf.eval(x, v, w);
            (*tf, weak_convergence_gap(&cloud, &f, &fields, &scenario.grid, &phi))
        })
        .collect();
    let monitors = vec![
        rec.mass.report("mass_conservation"),
        rec.f_mass.report("adaptation_mass_conservation"),
        rec.dissipation.report("dissipation_sign"),
        rec.snl.report("nonlocal_dissipation_sign"),
        rec.rel.report("relative_entropy_sign"),
        rec.support.report("support_bound"),
        rec.energy.report("energy_bound"),
    ];
    Ok(RunOutput {
        eps,
        dt,
        rows: rec.rows,
        moments: rec.moments,
        balance_source: rec.source,
        consistency_w: rec.consistency,
        macro_series: rec.macro_series,
        final_cloud: cloud,
        final_moments,
        final_fields: fields,
        final_f: f,
        weak_gaps,
        monitors,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs the config at [`ScenarioConfig::eps_for_run`].
pub fn run_config(config: &ScenarioConfig) -> Result<RunOutput> {
    run_scenario(&Scenario::new(config)?, config.eps_for_run())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig::from_json(r#"{"grid": {"box_length": [8], "cells": [16]}, "t_final": 0.2, "dt": 0.02}"#).unwrap()
    }

    #[test]
    fn zero_time_gives_initial_records_only() {
        let mut cfg = small();
        cfg.t_final = 0.0;
        let out = run_config(&cfg).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.rows[0].rel_entropy, 0.0);
        assert!(out.passed());
    }

    #[test]
    fn short_run_passes_monitors() {
        let out = run_config(&small()).unwrap();
        assert_eq!(out.rows.len(), 11);
        assert!((out.rows[10].t - 0.2).abs() < 1e-12);
        for m in &out.monitors {
            assert!(m.passed, "{m:?}");
        }
        assert_eq!(out.rows[0].mu0, 3.0 * out.final_cloud.total_mass());
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        assert_eq!(trapezoid(&[0.0, 1.0, 3.0], &[0.0, 1.0, 3.0]), 4.5);
        assert_eq!(trapezoid(&[0.0], &[1.0]), 0.0);
    }

    #[test]
    fn steps_land_on_final_time() {
        let sc = Scenario::new(&small()).unwrap();
        assert_eq!(sc.time_steps(0.2).0, 10);
        let (n, dt) = sc.time_steps(0.205);
        assert_eq!(n, 11);
        assert!((n as f64 * dt - 0.205).abs() < 1e-15);
    }
}
