//! CSV and JSON writers. Every float is written with `{:e}` so files
//! round-trip exactly.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use crate::error::Result;
use crate::harness::run::{DiagnosticsRow, Monitor, RunOutput, Scenario};
use crate::harness::sweep::{EpsSweep, NSweep};
use crate::kinetic::MASS_FLOOR;

pub const SWEEP_HEADER: [&str; 6] =
    ["param_value", "sup_rel_entropy", "int_var_weighted", "int_var_unweighted", "weak_gap", "slope_partial"];
pub const SWEEP_N_HEADER: [&str; 4] = ["n", "mean_distance", "std_distance", "seeds"];

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        writeln!(out, "{}", row.into_iter().collect::<Vec<_>>().join(","))?;
    }
    out.flush()?;
    Ok(())
}

fn e(x: f64) -> String {
    format!("{x:e}")
}

pub fn write_diagnostics(path: &Path, rows: &[DiagnosticsRow]) -> Result<()> {
    write_rows(path, &DiagnosticsRow::HEADER, rows.iter().map(|r| r.values().map(e)))
}

/// Per-cell state at the end of a run.
pub fn write_cells(path: &Path, scenario: &Scenario, out: &RunOutput) -> Result<()> {
    let grid = &scenario.grid;
    let m = &out.final_moments;
    let mut second = vec![0.0; grid.num_cells()];
    let cloud = &out.final_cloud;
    for k in 0..cloud.len() {
        let c = cloud.cell()[k];
        if m.rho[c] > MASS_FLOOR {
            second[c] += cloud.weight()[k] * (cloud.v()[k] - m.v_mean[c]).powi(2) / m.rho[c];
        }
    }
    let header = ["x0", "x1", "rho", "v_eps", "w_eps", "V", "W", "variance_v"];
    write_rows(
        path,
        &header,
        (0..grid.num_cells()).map(|c| {
            let x = grid.center(c);
            [x[0], x[1], m.rho[c], m.v_mean[c], m.w_mean[c], out.final_fields.v[c], out.final_fields.w[c], second[c]].map(e)
        }),
    )
}

pub fn write_macro(path: &Path, out: &RunOutput) -> Result<()> {
    let rho = &out.final_fields.rho0;
    write_rows(
        path,
        &["t", "cell", "rho0", "V", "W"],
        out.macro_series.iter().flat_map(|(t, v, w)| {
            (0..v.len()).map(move |c| vec![e(*t), c.to_string(), e(rho[c]), e(v[c]), e(w[c])])
        }),
    )
}

pub fn write_adaptation(path: &Path, out: &RunOutput) -> Result<()> {
    let f = &out.final_f;
    let a = f.amplitude_factor;
    write_rows(
        path,
        &["cell", "w", "weight"],
        (0..f.len()).map(|k| vec![f.cell()[k].to_string(), e(f.w()[k]), e(f.weight()[k] * a)]),
    )
}

pub fn write_particles(path: &Path, out: &RunOutput) -> Result<()> {
    let p = &out.final_cloud;
    write_rows(
        path,
        &["cell", "v", "w", "weight"],
        (0..p.len()).map(|k| vec![p.cell()[k].to_string(), e(p.v()[k]), e(p.w()[k]), e(p.weight()[k])]),
    )
}

pub fn write_eps_sweep(path: &Path, sweep: &EpsSweep) -> Result<()> {
    let slopes = sweep.partial_slopes();
    write_rows(
        path,
        &SWEEP_HEADER,
        sweep.points.iter().zip(slopes).map(|(p, s)| {
            [p.eps, p.sup_rel_entropy, p.int_var_weighted, p.int_var_unweighted, p.max_weak_gap(), s.unwrap_or(f64::NAN)]
                .map(e)
        }),
    )
}

pub fn write_n_sweep(path: &Path, sweep: &NSweep) -> Result<()> {
    write_rows(
        path,
        &SWEEP_N_HEADER,
        sweep
            .points
            .iter()
            .map(|p| vec![p.n.to_string(), e(p.mean_distance), e(p.std_distance), p.per_seed.len().to_string()]),
    )
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct RunSummary<'a> {
    eps: f64,
    dt: f64,
    seconds: f64,
    sup_rel_entropy: f64,
    int_var_weighted: f64,
    int_var_unweighted: f64,
    max_balance_residual: f64,
    max_weak_gap: f64,
    passed: bool,
    monitors: &'a [Monitor],
}

/// Writes every artefact of a single run into `dir`.
pub fn write_run(dir: &Path, scenario: &Scenario, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_diagnostics(&dir.join("diagnostics.csv"), &out.rows)?;
    write_macro(&dir.join("macro.csv"), out)?;
    write_cells(&dir.join("cells.csv"), scenario, out)?;
    write_adaptation(&dir.join("f_particles.csv"), out)?;
    if scenario.config.particle_snapshots {
        write_particles(&dir.join("particles.csv"), out)?;
    }
    let summary = RunSummary {
        eps: out.eps,
        dt: out.dt,
        seconds: out.seconds,
        sup_rel_entropy: out.sup_rel_entropy(),
        int_var_weighted: out.integrated_variance(true),
        int_var_unweighted: out.integrated_variance(false),
        max_balance_residual: out.max_balance_residual(),
        max_weak_gap: out.max_weak_gap(),
        passed: out.passed(),
        monitors: &out.monitors,
    };
    write_manifest(dir, scenario, "run", &summary)
}

pub fn write_manifest<T: Serialize>(dir: &Path, scenario: &Scenario, command: &str, summary: &T) -> Result<()> {
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": scenario.config,
        "particles": scenario.initial.len(),
        "threads": rayon::current_num_threads(),
        "summary": summary,
    });
    write_json(&dir.join("manifest.json"), &manifest)
}
