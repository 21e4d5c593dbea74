//! JSON scenario configuration with documented defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::TestFunction;
use crate::error::{FhnError, Result};
use crate::fhn::FhnParams;
use crate::grid::{KernelSpec, SpatialGrid};
use crate::kinetic::{InitialDataSpec, VwProfile, MASS_TOLERANCE};
use crate::micro::Placement;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_box")]
    pub box_length: Vec<f64>,
    #[serde(default = "default_cells")]
    pub cells: Vec<usize>,
}

fn default_box() -> Vec<f64> {
    vec![8.0]
}
fn default_cells() -> Vec<usize> {
    vec![64]
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { box_length: default_box(), cells: default_cells() }
    }
}

/// Initial density profile; normalised profiles carry their target mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DensityProfile {
    /// Periodic gaussian bump rescaled to `mass` on the grid.
    Gaussian {
        #[serde(default)]
        center: Vec<f64>,
        #[serde(default = "unit")]
        width: f64,
        #[serde(default = "unit")]
        mass: f64,
    },
    Uniform {
        #[serde(default = "unit")]
        mass: f64,
    },
    /// Per-cell values taken verbatim.
    Cells { values: Vec<f64> },
}

fn unit() -> f64 {
    1.0
}

impl Default for DensityProfile {
    fn default() -> Self {
        DensityProfile::Gaussian { center: vec![], width: 1.0, mass: 1.0 }
    }
}

/// Initial `V0` or `W0` profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FieldProfile {
    Constant {
        value: f64,
    },
    /// `offset + amplitude exp(-|x - center|^2 / (2 width^2))`, periodic.
    Gaussian {
        #[serde(default)]
        center: Vec<f64>,
        #[serde(default = "unit")]
        width: f64,
        #[serde(default = "unit")]
        amplitude: f64,
        #[serde(default)]
        offset: f64,
    },
    Cells {
        values: Vec<f64>,
    },
}

fn default_v0() -> FieldProfile {
    FieldProfile::Gaussian { center: vec![], width: 1.0, amplitude: 1.0, offset: 0.0 }
}

fn default_w0() -> FieldProfile {
    FieldProfile::Constant { value: 0.0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default)]
    pub vw_profile: VwProfile,
    #[serde(default = "default_spread")]
    pub vw_spread: f64,
    #[serde(default = "default_ppc")]
    pub particles_per_cell_axis: usize,
    #[serde(default = "default_safety")]
    pub safety_radius: f64,
}

fn default_spread() -> f64 {
    0.5
}
fn default_ppc() -> usize {
    4
}
fn default_safety() -> f64 {
    50.0
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            vw_profile: VwProfile::Uniform,
            vw_spread: default_spread(),
            particles_per_cell_axis: default_ppc(),
            safety_radius: default_safety(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepNConfig {
    #[serde(default = "default_n_list")]
    pub n_list: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default = "default_placement")]
    pub placement: PlacementKind,
    #[serde(default = "unit")]
    pub t_final: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlacementKind {
    Iid,
    Quantile,
}

impl PlacementKind {
    pub fn with_seed(self, seed: u64) -> Placement {
        match self {
            PlacementKind::Iid => Placement::Iid { seed },
            PlacementKind::Quantile => Placement::Quantile,
        }
    }
}

fn default_n_list() -> Vec<usize> {
    vec![250, 1000, 4000]
}
fn default_seeds() -> usize {
    8
}
fn default_placement() -> PlacementKind {
    PlacementKind::Iid
}

impl Default for SweepNConfig {
    fn default() -> Self {
        Self { n_list: default_n_list(), seeds: default_seeds(), placement: default_placement(), t_final: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub params: FhnParams,
    #[serde(default)]
    pub rho0: DensityProfile,
    #[serde(default = "default_v0")]
    pub v0: FieldProfile,
    #[serde(default = "default_w0")]
    pub w0: FieldProfile,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Records are taken every `record_every` steps.
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Relaxation parameter of a single `run`; defaults to the first sweep value.
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default = "default_eps_list")]
    pub eps_list: Vec<f64>,
    #[serde(default)]
    pub sweep_n: SweepNConfig,
    #[serde(default = "default_test_functions")]
    pub test_functions: Vec<TestFunction>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Also dump every particle at the final time.
    #[serde(default)]
    pub particle_snapshots: bool,
    /// Accept a non-normalised `rho0` (unvalidated scenarios).
    #[serde(default)]
    pub allow_unnormalized: bool,
}

fn default_t_final() -> f64 {
    2.0
}
fn default_dt() -> f64 {
    0.01
}
fn default_record_every() -> usize {
    1
}
fn default_eps_list() -> Vec<f64> {
    vec![0.1, 0.05, 0.025, 0.0125]
}
fn default_test_functions() -> Vec<TestFunction> {
    TestFunction::ALL.to_vec()
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config uses defaults")
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| FhnError::ConfigParse { line: e.line(), column: e.column(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn eps_for_run(&self) -> f64 {
        self.eps.or_else(|| self.eps_list.first().copied()).unwrap_or(0.1)
    }

    pub fn build_grid(&self) -> Result<SpatialGrid> {
        SpatialGrid::new(&self.grid.box_length, &self.grid.cells)
    }

    /// Every violated constraint, named by field.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if let Err(FhnError::ConfigInvalid(p)) = self.params.validate() {
            problems.extend(p);
        }
        if let Err(FhnError::ConfigInvalid(p)) = self.kernel.validate() {
            problems.extend(p);
        }
        let grid = match self.build_grid() {
            Ok(g) => Some(g),
            Err(e) => {
                problems.push(format!("grid: {e}"));
                None
            }
        };
        if !(self.t_final.is_finite() && self.t_final >= 0.0) {
            problems.push(format!("t_final: must be finite and >= 0, got {}", self.t_final));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            problems.push(format!("dt: must be positive, got {}", self.dt));
        }
        if self.record_every == 0 {
            problems.push("record_every: must be >= 1".into());
        }
        if let Some(e) = self.eps {
            if !(e > 0.0) {
                problems.push(format!("eps: must be positive, got {e}"));
            }
        }
        if let Some(e) = self.eps_list.iter().find(|e| !(**e > 0.0)) {
            problems.push(format!("eps_list: every value must be positive, got {e}"));
        }
        if self.sweep_n.n_list.contains(&0) {
            problems.push("sweep_n.n_list: network sizes must be >= 1".into());
        }
        if self.sweep_n.seeds == 0 {
            problems.push("sweep_n.seeds: must be >= 1".into());
        }
        if !(self.sweep_n.t_final.is_finite() && self.sweep_n.t_final >= 0.0) {
            problems.push(format!("sweep_n.t_final: must be finite and >= 0, got {}", self.sweep_n.t_final));
        }
        let init = &self.initial;
        if !(init.vw_spread.is_finite() && init.vw_spread >= 0.0) {
            problems.push(format!("initial.vw_spread: must be >= 0, got {}", init.vw_spread));
        }
        if init.particles_per_cell_axis == 0 {
            problems.push("initial.particles_per_cell_axis: must be >= 1".into());
        }
        if !(init.safety_radius > 0.0) {
            problems.push(format!("initial.safety_radius: must be positive, got {}", init.safety_radius));
        }
        if let Some(g) = &grid {
            match self.rho0_cells(g) {
                Ok(rho) => {
                    if let Some(r) = rho.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
                        problems.push(format!("rho0: values must be finite and >= 0, got {r}"));
                    } else {
                        let mass = g.integrate(&rho);
                        if !self.allow_unnormalized && (mass - 1.0).abs() > MASS_TOLERANCE {
                            problems.push(format!("rho0: total mass must be 1, got {mass}"));
                        }
                    }
                }
                Err(e) => problems.push(format!("rho0: {e}")),
            }
            for (name, profile) in [("v0", &self.v0), ("w0", &self.w0)] {
                if let Err(e) = field_cells(profile, g) {
                    problems.push(format!("{name}: {e}"));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(FhnError::ConfigInvalid(problems))
        }
    }

    pub fn rho0_cells(&self, grid: &SpatialGrid) -> Result<Vec<f64>> {
        let m = grid.num_cells();
        match &self.rho0 {
            DensityProfile::Gaussian { center, width, mass } => {
                if !(*width > 0.0) {
                    return Err(FhnError::InvalidInput(format!("width must be positive, got {width}")));
                }
                let bump = gaussian_cells(grid, center, *width)?;
                let total = grid.integrate(&bump);
                Ok(bump.iter().map(|b| mass * b / total).collect())
            }
            DensityProfile::Uniform { mass } => Ok(vec![mass / (m as f64 * grid.cell_volume()); m]),
            DensityProfile::Cells { values } => {
                if values.len() != m {
                    return Err(FhnError::SizeMismatch { expected: m, found: values.len() });
                }
                Ok(values.clone())
            }
        }
    }

    pub fn initial_data(&self, grid: &SpatialGrid) -> Result<InitialDataSpec> {
        Ok(InitialDataSpec {
            rho0: self.rho0_cells(grid)?,
            v0: field_cells(&self.v0, grid)?,
            w0: field_cells(&self.w0, grid)?,
            vw_profile: self.initial.vw_profile,
            vw_spread: self.initial.vw_spread,
            particles_per_cell_axis: self.initial.particles_per_cell_axis,
            safety_radius: self.initial.safety_radius,
            allow_unnormalized: self.allow_unnormalized,
        })
    }
}

fn gaussian_cells(grid: &SpatialGrid, center: &[f64], width: f64) -> Result<Vec<f64>> {
    if center.len() > grid.dim() {
        return Err(FhnError::InvalidInput(format!("center has {} coordinates on a {}D grid", center.len(), grid.dim())));
    }
    let mut c = [0.0; 2];
    c[..center.len()].copy_from_slice(center);
    Ok((0..grid.num_cells())
        .map(|k| {
            let d = grid.displacement(&grid.center(k), &c);
            (-(d[0] * d[0] + d[1] * d[1]) / (2.0 * width * width)).exp()
        })
        .collect())
}

pub fn field_cells(profile: &FieldProfile, grid: &SpatialGrid) -> Result<Vec<f64>> {
    let m = grid.num_cells();
    match profile {
        FieldProfile::Constant { value } => Ok(vec![*value; m]),
        FieldProfile::Gaussian { center, width, amplitude, offset } => {
            if !(*width > 0.0) {
                return Err(FhnError::InvalidInput(format!("width must be positive, got {width}")));
            }
            Ok(gaussian_cells(grid, center, *width)?.iter().map(|g| offset + amplitude * g).collect())
        }
        FieldProfile::Cells { values } => {
            if values.len() != m {
                return Err(FhnError::SizeMismatch { expected: m, found: values.len() });
            }
            Ok(values.clone())
        }
    }
}

/// Reads and validates a JSON config file.
pub fn parse_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    ScenarioConfig::from_json(&text)
}
