use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use fhn_kinetic::diagnostics::{moment_inequality_residual, nonlocal_dissipation_double_sum};
use fhn_kinetic::error::{FhnError, Result};
use fhn_kinetic::harness::output::{write_eps_sweep, write_manifest, write_n_sweep, write_run};
use fhn_kinetic::harness::{parse_config, run_scenario, sweep_eps, sweep_n, Scenario, ScenarioConfig};

/// Kinetic FitzHugh-Nagumo runs, relaxation sweeps and network-size sweeps.
#[derive(Parser)]
#[command(name = "fhn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One run at the configured eps: diagnostics.csv, snapshots, manifest.json.
    Run(Common),
    /// Every eps of `eps_list`: sweep.csv with rate fits in manifest.json.
    SweepEps(Common),
    /// Networks of every size in `sweep_n.n_list` against the kinetic reference.
    SweepN(Common),
    /// Runs the invariant checks only and reports them.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// JSON scenario; omitted means all defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `output_dir` of the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Overrides `seed` of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(p) => parse_config(p)?,
            None => ScenarioConfig::default(),
        };
        if let Some(d) = &self.out_dir {
            cfg.output_dir = d.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

fn run(cfg: &ScenarioConfig) -> Result<bool> {
    let scenario = Scenario::new(cfg)?;
    let out = run_scenario(&scenario, cfg.eps_for_run())?;
    write_run(&cfg.output_dir, &scenario, &out)?;
    for m in &out.monitors {
        report(m.passed, m.name, &format!("worst {:e}, limit {:e}", m.worst, m.limit));
    }
    Ok(out.passed())
}

fn sweep_eps_cmd(cfg: &ScenarioConfig) -> Result<bool> {
    let scenario = Scenario::new(cfg)?;
    let sweep = sweep_eps(&scenario)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    write_eps_sweep(&cfg.output_dir.join("sweep.csv"), &sweep)?;
    write_manifest(&cfg.output_dir, &scenario, "sweep-eps", &sweep)?;
    for (name, fit) in [
        ("sup rel entropy", &sweep.rel_entropy_fit),
        ("weighted variance", &sweep.var_weighted_fit),
        ("unweighted variance", &sweep.var_unweighted_fit),
    ] {
        match fit {
            Some(f) => println!("{name}: slope {:.4}, residual {:.3e}", f.slope, f.residual),
            None => println!("{name}: not fitted"),
        }
    }
    if let Some((eps, msg)) = &sweep.failure {
        eprintln!("sweep stopped at eps = {eps}: {msg}");
        return Ok(false);
    }
    Ok(sweep.points.iter().all(|p| p.monitors.iter().all(|m| m.passed)))
}

fn sweep_n_cmd(cfg: &ScenarioConfig) -> Result<bool> {
    let scenario = Scenario::new(cfg)?;
    let sweep = sweep_n(&scenario)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    write_n_sweep(&cfg.output_dir.join("sweep_n.csv"), &sweep)?;
    write_manifest(&cfg.output_dir, &scenario, "sweep-n", &sweep)?;
    for p in &sweep.points {
        println!("n = {}: distance {:.4e} +- {:.2e}", p.n, p.mean_distance, p.std_distance);
    }
    match &sweep.fit {
        Some(f) => println!("slope {:.4}, residual {:.3e}", f.slope, f.residual),
        None => println!("not fitted: fewer than three network sizes"),
    }
    Ok(true)
}

fn validate(cfg: &ScenarioConfig) -> Result<bool> {
    let scenario = Scenario::new(cfg)?;
    let out = run_scenario(&scenario, cfg.eps_for_run())?;
    let mut ok = true;
    for m in &out.monitors {
        report(m.passed, m.name, &format!("worst {:e}, limit {:e}", m.worst, m.limit));
        ok &= m.passed;
    }
    if out.rows.len() >= 2 {
        for p in [1u32, 2] {
            let d: Vec<f64> = out.rows.iter().map(|r| if p == 1 { r.d1 } else { r.d2 }).collect();
            let r = moment_inequality_residual(&out.moments, &d, out.eps, p, &scenario.params)?;
            report(r <= 0.0, if p == 1 { "moment_inequality_p1" } else { "moment_inequality_p2" }, &format!("max residual {r:e}"));
            ok &= r <= 0.0;
        }
        report(true, "entropy_balance", &format!("max residual {:e}", out.max_balance_residual()));
    }

    let rho = &scenario.initial_moments.rho;
    let v = &scenario.initial_moments.v_mean;
    let vol = scenario.grid.cell_volume();
    let constant = scenario.kernel.nonlocal_operator(rho, &vec![1.0; rho.len()])?;
    let c_ok = constant.iter().all(|x| *x == 0.0);
    report(c_ok, "nonlocal_constant", "L(1) == 0");
    let l = scenario.kernel.nonlocal_operator(rho, v)?;
    let int_l: f64 = rho.iter().zip(&l).map(|(r, x)| r * x).sum::<f64>() * vol;
    let scale: f64 = rho.iter().zip(&l).map(|(r, x)| (r * x).abs()).sum::<f64>() * vol;
    let l_ok = int_l.abs() <= 1e-10 * scale.max(f64::MIN_POSITIVE);
    report(l_ok, "nonlocal_mass", &format!("int rho L = {int_l:e}"));
    let int_vl: f64 = (0..rho.len()).map(|c| rho[c] * v[c] * l[c]).sum::<f64>() * vol;
    let snl = nonlocal_dissipation_double_sum(&scenario.kernel, rho, v);
    let s_ok = snl <= 1e-12 && (int_vl - snl).abs() <= 1e-10 * snl.abs().max(1e-300);
    report(s_ok, "nonlocal_dissipation", &format!("int rho V L = {int_vl:e}, double sum {snl:e}"));
    ok &= c_ok && l_ok && s_ok;

    std::fs::create_dir_all(&cfg.output_dir)?;
    let summary = json!({ "passed": ok, "monitors": out.monitors });
    write_manifest(&cfg.output_dir, &scenario, "validate", &summary)?;
    Ok(ok)
}

fn report(passed: bool, name: &str, detail: &str) {
    println!("{} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
}

fn error_exit(e: &FhnError, config: Option<&Path>) -> ExitCode {
    match config {
        Some(p) => eprintln!("error ({}): {e}", p.display()),
        None => eprintln!("error: {e}"),
    }
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, action): (&Common, fn(&ScenarioConfig) -> Result<bool>) = match &cli.command {
        Command::Run(c) => (c, run),
        Command::SweepEps(c) => (c, sweep_eps_cmd),
        Command::SweepN(c) => (c, sweep_n_cmd),
        Command::Validate(c) => (c, validate),
    };
    if let Some(n) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = common.load().and_then(|cfg| action(&cfg));
    match result {
        Ok(true) => ExitCode::SUCCESS,
        // Completed, but an invariant monitor failed.
        Ok(false) => ExitCode::from(2),
        Err(e) => error_exit(&e, common.config.as_deref()),
    }
}
