//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "prior": {"atoms": [-1, 1], "weights": [0.5, 0.5]},
//!   "actions": {"R": 2, "K": 4, "d": 1, "levels": [0, 0.25, 0.5, 0.75, 1]},
//!   "cost": {"kind": "variance_plus_effort", "lambda": 0.1, "beta": 1},
//!   "solver": {"n": 2, "n_list": [0, 1, 2, 3], "m": 64, "quad": 20, "L": 8,
//!              "tol": 1e-10, "max_iter": 100000},
//!   "simulation": {"M": 10000, "dt": 0.03125, "seed": 1},
//!   "output": "out"
//! }
//! ```
//!
//! The prior may instead be `{"continuous": {...}, "n_atoms": 8}` to
//! discretize a continuous law. `simulation.T` defaults to the horizon with
//! truncation error `1e-3 · k_max / β`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::actions::{make_action_grid, ActionGrid, ActionGridSpec};
use crate::control::{dyadic_step, ControlSchedule, ScheduleMode};
use crate::dp::SolverSettings;
use crate::error::{Error, Result};
use crate::filter::whole_steps;
use crate::io::fingerprint;
use crate::measures::{
    discretize_prior, make_simplex_grid, AtomPlacement, AtomSet, AtomicMeasure, ContinuousPrior,
    SimplexGrid, DEFAULT_NODE_CAP,
};
use crate::objective::{horizon_for, CostModel, CostSpec, McSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorConfig {
    Explicit {
        atoms: Vec<f64>,
        weights: Vec<f64>,
    },
    Continuous {
        continuous: ContinuousPrior,
        n_atoms: usize,
        #[serde(default)]
        placement: AtomPlacement,
    },
}

impl PriorConfig {
    pub fn build(&self) -> Result<AtomicMeasure> {
        match self {
            PriorConfig::Explicit { atoms, weights } => {
                AtomicMeasure::new(AtomSet::new(atoms.clone())?, weights.clone())
            }
            PriorConfig::Continuous {
                continuous,
                n_atoms,
                placement,
            } => discretize_prior(continuous, *n_atoms, *placement),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    #[serde(flatten)]
    pub spec: CostSpec,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_level")]
    pub n: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<u32>>,
    pub m: u32,
    #[serde(default = "default_quad")]
    pub quad: usize,
    #[serde(rename = "L", default = "default_substeps")]
    pub substeps: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_node_cap")]
    pub node_cap: usize,
}

fn default_level() -> u32 {
    2
}
fn default_quad() -> usize {
    SolverSettings::default().quad
}
fn default_substeps() -> usize {
    SolverSettings::default().substeps
}
fn default_tol() -> f64 {
    SolverSettings::default().tol
}
fn default_max_iter() -> usize {
    SolverSettings::default().max_iter
}
fn default_node_cap() -> usize {
    DEFAULT_NODE_CAP
}

impl SolverConfig {
    pub fn settings(&self) -> SolverSettings {
        SolverSettings {
            quad: self.quad,
            substeps: self.substeps,
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

/// Which controller drives simulations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyConfig {
    /// One action index held forever.
    Constant(usize),
    /// Action indices at successive decision times; the last is held.
    OpenLoop(Vec<usize>),
    /// Feedback table from a solved value function.
    Feedback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationMode {
    /// Draw the signal, observe it and update by Bayes' rule.
    #[default]
    ClosedLoop,
    /// Euler integration of the filter equation.
    Weak,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(rename = "M")]
    pub paths: usize,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    pub dt: f64,
    pub seed: u64,
    #[serde(default)]
    pub mode: SimulationMode,
    #[serde(default = "default_policy")]
    pub policy: PolicyConfig,
    /// Number of individual paths written as CSV.
    #[serde(default = "default_write_paths")]
    pub write_paths: usize,
}

fn default_policy() -> PolicyConfig {
    PolicyConfig::Feedback
}
fn default_write_paths() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    /// Monte Carlo sample count for the statistical checks.
    #[serde(default = "default_check_samples")]
    pub samples: usize,
    /// Euler step for the integrator comparison.
    #[serde(default = "default_euler_dt")]
    pub euler_dt: f64,
}

fn default_check_samples() -> usize {
    10_000
}
fn default_euler_dt() -> f64 {
    1e-4
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            samples: default_check_samples(),
            euler_dt: default_euler_dt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub prior: PriorConfig,
    pub actions: ActionGridSpec,
    pub cost: CostConfig,
    pub solver: SolverConfig,
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Objects built from a validated configuration.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub hash: String,
    pub mu0: AtomicMeasure,
    pub actions: ActionGrid,
    pub cost: CostModel,
    pub grid: Arc<SimplexGrid>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the canonical serialisation, output directory excluded.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = PathBuf::new();
        let text = serde_json::to_string(&canonical).expect("config serialises");
        fingerprint(text.as_bytes())
    }

    pub fn horizon(&self, cm: &CostModel) -> f64 {
        let dt = self.simulation.dt;
        let t = self.simulation.horizon.unwrap_or_else(|| horizon_for(cm, 1e-3));
        (t / dt - 1e-9).ceil() * dt
    }

    pub fn mc_settings(&self, cm: &CostModel) -> McSettings {
        McSettings {
            paths: self.simulation.paths,
            horizon: self.horizon(cm),
            dt: self.simulation.dt,
            seed: self.simulation.seed,
        }
    }

    /// Checks sub-configurations that do not depend on the prior.
    pub fn validate_static(&self) -> Result<()> {
        let s = &self.simulation;
        if s.paths < 2 {
            return Err(Error::Config("simulation.M must be at least 2".into()));
        }
        if !(s.dt > 0.0) {
            return Err(Error::Config("simulation.dt must be positive".into()));
        }
        if let Some(t) = s.horizon {
            if !(t > 0.0) {
                return Err(Error::Config("simulation.T must be positive".into()));
            }
        }
        whole_steps(dyadic_step(self.solver.n), s.dt, "simulation.dt")?;
        if let Some(list) = &self.solver.n_list {
            if list.is_empty() || list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config("solver.n_list must be non-empty and increasing".into()));
            }
        }
        if self.solver.m == 0 {
            return Err(Error::Config("solver.m must be positive".into()));
        }
        if self.check.samples < 2 || !(self.check.euler_dt > 0.0) {
            return Err(Error::Config("check.samples >= 2 and check.euler_dt > 0 required".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Experiment> {
        self.validate_static()?;
        let mu0 = self.prior.build()?;
        let actions = make_action_grid(&self.actions)?;
        mu0.atoms().check_radius(self.actions.radius)?;
        let cost = self.cost.spec.build(
            self.cost.beta,
            self.cost.k_max,
            mu0.atoms(),
            self.actions.budget,
        )?;
        let grid = Arc::new(make_simplex_grid(
            mu0.atoms().clone(),
            self.solver.m,
            self.solver.node_cap,
        )?);
        let indices = match &self.simulation.policy {
            PolicyConfig::Constant(a) => Some(vec![*a]),
            PolicyConfig::OpenLoop(list) => Some(list.clone()),
            PolicyConfig::Feedback => None,
        };
        if let Some(indices) = indices {
            if indices.is_empty() || indices.iter().any(|&a| a >= actions.len()) {
                return Err(Error::Config("policy action index out of range".into()));
            }
        }
        Ok(Experiment {
            hash: self.hash(),
            config: self.clone(),
            mu0,
            actions,
            cost,
            grid,
        })
    }
}

impl Experiment {
    /// Open-loop schedule from the simulation policy, if it is not feedback.
    pub fn open_loop_schedule(&self) -> Option<ControlSchedule> {
        let level = self.config.solver.n;
        match &self.config.simulation.policy {
            PolicyConfig::Constant(a) => Some(ControlSchedule::constant(level, *a)),
            PolicyConfig::OpenLoop(list) => Some(ControlSchedule {
                level,
                mode: ScheduleMode::OpenLoop(list.clone()),
            }),
            PolicyConfig::Feedback => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const BENCHMARK: &str = r#"{
        "prior": {"atoms": [-1, 1], "weights": [0.5, 0.5]},
        "actions": {"R": 2, "K": 4, "d": 1, "levels": [0, 0.25, 0.5, 0.75, 1]},
        "cost": {"kind": "variance_plus_effort", "lambda": 0.1, "beta": 1},
        "solver": {"n": 2, "m": 16, "quad": 12, "L": 4, "tol": 1e-9},
        "simulation": {"M": 100, "dt": 0.03125, "seed": 1}
    }"#;

    #[test]
    fn parses_and_builds() {
        let cfg = ExperimentConfig::from_json(BENCHMARK).unwrap();
        let exp = cfg.build().unwrap();
        assert_eq!(exp.actions.len(), 5);
        assert_eq!(exp.grid.len(), 17);
        assert!((exp.cost.k_max() - 1.4).abs() < 1e-15);
        assert_eq!(cfg.simulation.policy, PolicyConfig::Feedback);
        let t = cfg.horizon(&exp.cost);
        assert!(t >= 1000f64.ln() && t < 1000f64.ln() + 0.03125);
        assert_eq!(exp.hash.len(), 64);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::from_json(BENCHMARK).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.output = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.simulation.seed = 2;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn rejects_bad_configs() {
        let missing_seed = BENCHMARK.replace(r#", "seed": 1"#, "");
        assert!(matches!(ExperimentConfig::from_json(&missing_seed), Err(Error::Config(_))));
        let bad_dt = BENCHMARK.replace("0.03125", "0.3");
        assert!(ExperimentConfig::from_json(&bad_dt).unwrap().build().is_err());
        let bad_mass = BENCHMARK.replace("[0.5, 0.5]", "[0.6, 0.5]");
        assert!(ExperimentConfig::from_json(&bad_mass).unwrap().build().is_err());
        let unknown = BENCHMARK.replace(r#""seed": 1"#, r#""seed": 1, "sede": 2"#);
        assert!(ExperimentConfig::from_json(&unknown).is_err());
    }

    #[test]
    fn continuous_prior() {
        let text = BENCHMARK.replace(
            r#"{"atoms": [-1, 1], "weights": [0.5, 0.5]}"#,
            r#"{"continuous": {"family": "uniform", "low": -1, "high": 1}, "n_atoms": 4}"#,
        );
        let exp = ExperimentConfig::from_json(&text).unwrap().build().unwrap();
        assert_eq!(exp.mu0.len(), 4);
    }
}
