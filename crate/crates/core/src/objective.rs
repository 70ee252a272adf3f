//! Running costs `k(μ, v)`, the discounted objective and its Monte Carlo
//! estimate along closed-loop episodes.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actions::{ActionGrid, ActionVec};
use crate::control::Policy;
use crate::error::{Error, Result};
use crate::filter::{simulate_closed_loop, PathSample};
use crate::measures::{AtomSet, AtomicMeasure};
use crate::rng::path_rng;

/// Pointwise cost `k̃(x, v)` integrated against the filter.
pub type PointwiseCost = Arc<dyn Fn(f64, &ActionVec) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum CostKind {
    /// `k ≡ c`.
    Constant { c: f64 },
    /// `k(μ, v) = μ(k̃(·, v))`.
    ExpectedPointwise { pointwise: PointwiseCost, label: String },
    /// `k(μ, v) = Var_μ(id) + λ Σ (R^i v_i)²`.
    VariancePlusEffort { lambda: f64 },
}

impl fmt::Debug for CostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant { c } => write!(f, "Constant {{ c: {c} }}"),
            Self::ExpectedPointwise { label, .. } => write!(f, "ExpectedPointwise({label})"),
            Self::VariancePlusEffort { lambda } => write!(f, "VariancePlusEffort {{ lambda: {lambda} }}"),
        }
    }
}

/// Bounded running cost with its discount rate.
#[derive(Debug, Clone)]
pub struct CostModel {
    kind: CostKind,
    beta: f64,
    k_max: f64,
}

impl CostModel {
    pub fn new(kind: CostKind, beta: f64, k_max: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("discount rate must be positive, got {beta}")));
        }
        if !(k_max >= 0.0 && k_max.is_finite()) {
            return Err(Error::Config(format!("cost bound must be finite and >= 0, got {k_max}")));
        }
        Ok(Self { kind, beta, k_max })
    }

    pub fn constant(c: f64, beta: f64) -> Result<Self> {
        Self::new(CostKind::Constant { c }, beta, c.abs())
    }

    pub fn kind(&self) -> &CostKind {
        &self.kind
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn k_max(&self) -> f64 {
        self.k_max
    }

    /// `k(μ, v)`.
    pub fn eval(&self, mu: &AtomicMeasure, v: &ActionVec) -> f64 {
        match &self.kind {
            CostKind::Constant { c } => *c,
            CostKind::ExpectedPointwise { pointwise, .. } => mu.integrate(|x| pointwise(x, v)),
            CostKind::VariancePlusEffort { lambda } => mu.variance() + lambda * v.effort(),
        }
    }

    /// `min_v k(μ, v)` over the grid and its first minimiser.
    pub fn min_over(&self, mu: &AtomicMeasure, actions: &ActionGrid) -> (f64, usize) {
        actions
            .candidates()
            .iter()
            .enumerate()
            .fold((f64::INFINITY, 0), |best, (i, v)| {
                let k = self.eval(mu, v);
                if k < best.0 {
                    (k, i)
                } else {
                    best
                }
            })
    }

    /// Sampled check of `|k| ≤ k_max` on the given states and actions.
    pub fn check_bound<'a>(
        &self,
        states: impl IntoIterator<Item = &'a AtomicMeasure>,
        actions: &ActionGrid,
    ) -> Result<()> {
        for mu in states {
            for v in actions.candidates() {
                let k = self.eval(mu, v);
                if !(k.abs() <= self.k_max + 1e-12) {
                    return Err(Error::Config(format!(
                        "cost {k} exceeds declared bound {} at weights {:?}",
                        self.k_max,
                        mu.weights()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Serializable choice of built-in cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostSpec {
    Constant {
        c: f64,
    },
    /// `k̃(x, v) = Σ poly_i x^i + effort · Σ (R^i v_i)²`.
    ExpectedPointwise {
        poly: Vec<f64>,
        #[serde(default)]
        effort: f64,
    },
    VariancePlusEffort {
        lambda: f64,
    },
}

impl CostSpec {
    /// Builds the model, deriving `k_max` from the atoms and action budget
    /// unless one is supplied.
    pub fn build(&self, beta: f64, k_max: Option<f64>, atoms: &AtomSet, budget: f64) -> Result<CostModel> {
        let (kind, bound) = match self {
            Self::Constant { c } => (CostKind::Constant { c: *c }, c.abs()),
            Self::ExpectedPointwise { poly, effort } => {
                let poly = poly.clone();
                let effort = *effort;
                let eval_poly = {
                    let poly = poly.clone();
                    move |x: f64| poly.iter().rev().fold(0.0, |acc, c| acc * x + c)
                };
                let bound = atoms
                    .as_slice()
                    .iter()
                    .map(|&x| eval_poly(x).abs())
                    .fold(0.0, f64::max)
                    + effort.abs() * budget;
                let label = format!("poly{poly:?}+{effort}*effort");
                let pointwise: PointwiseCost = Arc::new(move |x, v| eval_poly(x) + effort * v.effort());
                (CostKind::ExpectedPointwise { pointwise, label }, bound)
            }
            Self::VariancePlusEffort { lambda } => (
                CostKind::VariancePlusEffort { lambda: *lambda },
                (0.5 * atoms.span()).powi(2) + lambda.abs() * budget,
            ),
        };
        CostModel::new(kind, beta, k_max.unwrap_or(bound))
    }
}

/// Left-endpoint rectangle rule for `∫_0^T e^{-βt} k(ξ_t, u_t) dt` on the
/// path grid.
pub fn discounted_cost(path: &PathSample, cm: &CostModel, horizon: f64) -> Result<f64> {
    let last = path.times.last().copied().unwrap_or(0.0);
    if horizon > last + 1e-9 * last.max(1.0) {
        return Err(Error::Precondition(format!(
            "path ends at {last}, cannot integrate to {horizon}"
        )));
    }
    let dt = path.dt;
    let mut total = 0.0;
    for k in 0..path.len() {
        let t = path.times[k];
        if t >= horizon - 1e-12 {
            break;
        }
        let mu = path.measure_at(k);
        total += (-cm.beta * t).exp() * cm.eval(&mu, path.action_at(k)) * dt;
    }
    Ok(total)
}

/// Bound `k_max e^{-βT} / β` on the objective beyond the horizon.
pub fn truncation_error(cm: &CostModel, horizon: f64) -> f64 {
    cm.k_max * (-cm.beta * horizon).exp() / cm.beta
}

/// Largest gap between rectangle weights `e^{-βt_k} Δt` and the exact
/// weights `∫_{t_k}^{t_k+Δt} e^{-βt} dt` summed over `[0, T)`, times `k_max`.
/// This bounds the discount part of the rectangle-rule error for integrands
/// frozen on each cell.
pub fn rectangle_bias(cm: &CostModel, dt: f64, horizon: f64) -> f64 {
    let b = cm.beta;
    let cells = (horizon / dt - 1e-9).ceil().max(0.0);
    let per_cell = dt - (1.0 - (-b * dt).exp()) / b;
    let discount_sum = (1.0 - (-b * dt * cells).exp()) / (1.0 - (-b * dt).exp());
    cm.k_max * per_cell * discount_sum
}

/// Smallest horizon with `truncation_error ≤ rel · k_max / β`.
pub fn horizon_for(cm: &CostModel, rel: f64) -> f64 {
    (1.0 / rel).ln() / cm.beta
}

/// Deterministic pairwise summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Sample mean and standard error.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = pairwise_sum(values) / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte Carlo estimate of the closed-loop objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub truncation_bound: f64,
    #[serde(rename = "M")]
    pub paths: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub seed: u64,
}

/// Simulation settings shared by Monte Carlo estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McSettings {
    pub paths: usize,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
}

/// Per-episode discounted costs of `M` closed-loop episodes, in path order.
pub fn closed_loop_costs(
    policy: &dyn Policy,
    mu0: &AtomicMeasure,
    cm: &CostModel,
    mc: &McSettings,
) -> Result<Vec<f64>> {
    (0..mc.paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(mc.seed, i as u64);
            let path = simulate_closed_loop(mu0, policy, mc.horizon, mc.dt, &mut rng)?;
            discounted_cost(&path, cm, mc.horizon)
        })
        .collect()
}

/// Mean and standard error of the discounted cost over independent
/// closed-loop episodes; path `i` uses stream `(seed, i)`.
pub fn estimate_j(
    policy: &dyn Policy,
    mu0: &AtomicMeasure,
    cm: &CostModel,
    mc: &McSettings,
) -> Result<JEstimate> {
    if mc.paths < 2 {
        return Err(Error::Config("need at least two paths for a standard error".into()));
    }
    let costs = closed_loop_costs(policy, mu0, cm, mc)?;
    let (mean, stderr) = mean_stderr(&costs);
    Ok(JEstimate {
        mean,
        stderr,
        truncation_bound: truncation_error(cm, mc.horizon),
        paths: mc.paths,
        horizon: mc.horizon,
        seed: mc.seed,
    })
}
