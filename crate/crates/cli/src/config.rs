//! JSON run configuration: which system or fixture to analyze, how to build
//! the operator, and the per-subcommand sections. `_note` fields are ignored
//! everywhere so configs can carry comments.

use serde::{Deserialize, Serialize};

use effdyn::effective::CvAssignment;
use effdyn::search::{CvFamily, Objective, ScanConfig};
use effdyn::{Error, Grid, Potential, Result, SetPair, SimConfig, TransitionModel};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Config {
    #[serde(default, rename = "_note", skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Base RNG seed; `--seed` overrides it.
    #[serde(default)]
    pub seed: u64,
    /// Named built-in chain; alternative to `system` + `grid` + `operator`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator: Option<OperatorConfig>,
    /// Replace the model by its reversible part before spectral analysis
    /// when detailed balance does not already hold; defaults to true.
    #[serde(default = "default_true")]
    pub use_reversible_part: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sets: Option<SetsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count_rate: Option<CountRateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv: Option<CvConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<ObjectiveConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub langevin: Option<LangevinConfig>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemConfig {
    pub potential: Potential,
    pub beta: f64,
    pub dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridConfig {
    /// Per-axis `[lo, hi, cells]` triples; one or two axes.
    pub axes: Vec<(f64, f64, usize)>,
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid> {
        Grid::new(
            self.axes
                .iter()
                .map(|&(lo, hi, cells)| effdyn::Axis::new(lo, hi, cells))
                .collect::<Result<Vec<_>>>()?,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum OperatorConfig {
    /// Midpoint discretization of the one-step kernel.
    Analytic,
    /// Count estimation from a simulated trajectory.
    Counts {
        n_steps: usize,
        #[serde(default = "default_lag")]
        lag: usize,
        #[serde(default)]
        reversible: bool,
        #[serde(default = "default_integrator")]
        integrator: Integrator,
    },
}

fn default_lag() -> usize {
    1
}

fn default_integrator() -> Integrator {
    Integrator::Em
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    Em,
    Langevin,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumConfig {
    /// Number of eigenpairs, counting the trivial one.
    pub m: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SetsConfig {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CountRateConfig {
    pub n_steps: usize,
    #[serde(default)]
    pub start: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CvConfig {
    Identity,
    SingleBin,
    Lump { fibers: Vec<Vec<usize>> },
    LinearAngle { theta: f64, k: usize },
    Coordinate { axis: usize, k: usize },
}

impl CvConfig {
    pub fn build(&self, model: &TransitionModel) -> Result<CvAssignment> {
        let n = model.n();
        match self {
            CvConfig::Identity => Ok(CvAssignment::identity(n)),
            CvConfig::SingleBin => Ok(CvAssignment::single_bin(n)),
            CvConfig::Lump { fibers } => CvAssignment::from_fibers(fibers, n),
            CvConfig::LinearAngle { theta, k } => {
                let grid = model.grid.as_ref().ok_or_else(|| {
                    Error::Config("linear-angle cv needs a grid-backed model".into())
                })?;
                CvAssignment::linear_angle(grid, *theta, *k)
            }
            CvConfig::Coordinate { axis, k } => {
                let grid = model.grid.as_ref().ok_or_else(|| {
                    Error::Config("coordinate cv needs a grid-backed model".into())
                })?;
                CvAssignment::coordinate(grid, *axis, *k)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FamilyConfig {
    #[serde(rename = "linear-angle-2d")]
    LinearAngle2d {
        k: usize,
        n_angles: usize,
    },
    Coordinate {
        k: usize,
    },
    ExplicitList {
        assignments: Vec<ExplicitAssignment>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplicitAssignment {
    pub bin_of: Vec<usize>,
    pub k: usize,
}

impl FamilyConfig {
    pub fn build(&self) -> Result<CvFamily> {
        Ok(match self {
            FamilyConfig::LinearAngle2d { k, n_angles } => CvFamily::LinearAngle2d {
                k: *k,
                n_angles: *n_angles,
            },
            FamilyConfig::Coordinate { k } => CvFamily::Coordinate { k: *k },
            FamilyConfig::ExplicitList { assignments } => CvFamily::ExplicitList {
                assignments: assignments
                    .iter()
                    .map(|a| CvAssignment::new(a.bin_of.clone(), a.k))
                    .collect::<Result<Vec<_>>>()?,
            },
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub kind: Objective,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Full-state sets tracked as rate columns of the scan, when they are
    /// fiber unions of the scanned assignments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_sets: Option<SetsConfig>,
}

fn default_m() -> usize {
    1
}

impl ObjectiveConfig {
    pub fn build(&self) -> ScanConfig {
        let mut sc = ScanConfig::new(self.kind, self.m);
        sc.weights = self.weights.clone();
        sc.rate_sets = self.rate_sets.as_ref().map(|s| (s.a.clone(), s.b.clone()));
        sc
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LangevinConfig {
    pub n_steps: usize,
    pub lag: usize,
    #[serde(default)]
    pub doublings: usize,
}

impl Config {
    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn system(&self) -> Result<&SystemConfig> {
        self.system
            .as_ref()
            .ok_or_else(|| Error::Config("config needs a 'system' section".into()))
    }

    pub fn grid(&self) -> Result<Grid> {
        self.grid
            .as_ref()
            .ok_or_else(|| Error::Config("config needs a 'grid' section".into()))?
            .build()
    }

    /// Simulation settings for trajectory-based operators and checks.
    pub fn sim_config(&self, seed: u64, n_steps: usize) -> Result<SimConfig> {
        let system = self.system()?;
        let grid = self.grid()?;
        let x0 = match &system.x0 {
            Some(x0) => x0.clone(),
            None => vec![0.0; system.potential.dim()],
        };
        let mut cfg = SimConfig::new(system.beta, system.dt, seed, n_steps, x0)
            .with_guard(10.0 * grid.max_extent());
        if let Some(gamma) = system.gamma {
            cfg = cfg.with_gamma(gamma);
        }
        Ok(cfg)
    }

    /// Build or look up the transition model this config describes.
    pub fn model(&self, seed: u64) -> Result<TransitionModel> {
        if let Some(name) = &self.fixture {
            return effdyn::fixtures::by_name(name);
        }
        let system = self.system()?;
        let grid = self.grid()?;
        match self
            .operator
            .as_ref()
            .ok_or_else(|| Error::Config("config needs an 'operator' section".into()))?
        {
            OperatorConfig::Analytic => {
                effdyn::build_analytic_em(&system.potential, system.beta, system.dt, &grid)
            }
            OperatorConfig::Counts {
                n_steps,
                lag,
                reversible,
                integrator,
            } => {
                let cfg = self.sim_config(seed, *n_steps)?;
                let traj = match integrator {
                    Integrator::Em => effdyn::simulate_em(&system.potential, &cfg)?,
                    Integrator::Langevin => effdyn::simulate_langevin(&system.potential, &cfg)?,
                };
                let sub = effdyn::subsample(&traj, *lag)?;
                effdyn::build_counts(&sub, &grid, *reversible)
            }
        }
    }

    /// Model prepared for spectral work: the reversible part when requested
    /// and needed. Returns the model and whether it was replaced.
    pub fn spectral_model(&self, seed: u64) -> Result<(TransitionModel, bool)> {
        let model = self.model(seed)?;
        if self.use_reversible_part
            && model.detailed_balance_residual() > effdyn::spectral::REVERSIBILITY_TOL
        {
            Ok((model.reversibilized()?, true))
        } else {
            Ok((model, false))
        }
    }

    pub fn set_pair(&self, model: &TransitionModel) -> Result<SetPair> {
        let sets = self
            .sets
            .as_ref()
            .ok_or_else(|| Error::Config("config needs a 'sets' section".into()))?;
        SetPair::new(sets.a.clone(), sets.b.clone(), model.n())
    }
}
