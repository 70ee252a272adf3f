//! Dynamic programming for piecewise-constant controls on a dyadic grid.
//!
//! With decisions every `δ = 2^{-n}` the value function satisfies the
//! one-step identity
//!
//! ```text
//! V(μ) = min_v E[ ∫_0^δ e^{-βt} k(ξ_t, v) dt + e^{-βδ} V(ξ_δ) ],   ξ_0 = μ,
//! ```
//!
//! which is solved on a simplex lattice with barycentric interpolation between
//! nodes. Expectations use the exact law of the filter under a constant
//! action (atom mixture × Gauss–Hermite in the Gaussian observation noise).
//! The running integral is split into `L` sub-intervals with exact discount
//! weights and the filter law evaluated at each left endpoint.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actions::ActionGrid;
use crate::control::{dyadic_step, ControlSchedule, ScheduleMode};
use crate::error::{Error, Result};
use crate::filter::transition_scenarios;
use crate::measures::{AtomicMeasure, SimplexGrid, StencilPoint};
use crate::objective::{rectangle_bias, truncation_error, CostModel};
use crate::quadrature::GaussHermite;

/// Numerical settings of the Bellman operator and the fixed-point loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Gauss–Hermite order.
    pub quad: usize,
    /// Sub-intervals for the running cost.
    #[serde(rename = "L")]
    pub substeps: usize,
    /// Target sup-norm distance to the discrete fixed point.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            quad: 20,
            substeps: 8,
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

impl SolverSettings {
    fn validate(&self) -> Result<()> {
        if self.quad == 0 || self.substeps == 0 {
            return Err(Error::Config("quad and L must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValueMetadata {
    /// Dyadic level `n`.
    pub level: u32,
    pub action_grid_id: String,
    pub settings: SolverSettings,
    pub iterations: usize,
    /// Last sup-norm sweep residual.
    pub residual: f64,
    pub residual_history: Vec<f64>,
}

/// Value table on a simplex lattice.
#[derive(Debug, Clone)]
pub struct ValueFunction {
    pub grid: Arc<SimplexGrid>,
    pub values: Vec<f64>,
    pub policy: Option<Vec<usize>>,
    pub meta: ValueMetadata,
}

impl ValueFunction {
    pub fn delta(&self) -> f64 {
        dyadic_step(self.meta.level)
    }

    /// Largest `|V(a) − V(b)| / W1(a, b)` over lattice neighbours that move
    /// `1/m` of mass between adjacent atoms.
    pub fn lipschitz_estimate(&self) -> f64 {
        let grid = &self.grid;
        let xs = grid.atoms().as_slice();
        let m = grid.resolution() as f64;
        let mut best: f64 = 0.0;
        let mut counts = Vec::with_capacity(xs.len());
        for node in 0..grid.len() {
            for i in 0..xs.len().saturating_sub(1) {
                counts.clear();
                counts.extend_from_slice(grid.counts(node));
                if counts[i] == 0 {
                    continue;
                }
                counts[i] -= 1;
                counts[i + 1] += 1;
                let other = grid.index_of(&counts).expect("neighbour on lattice");
                let dist = (xs[i + 1] - xs[i]) / m;
                best = best.max((self.values[node] - self.values[other]).abs() / dist);
            }
        }
        best
    }

    /// Cell diameter times the empirical Lipschitz constant.
    pub fn interpolation_modulus(&self) -> f64 {
        self.grid.cell_diameter() * self.lipschitz_estimate()
    }

    pub fn policy_schedule(&self) -> Option<ControlSchedule> {
        self.policy.as_ref().map(|table| ControlSchedule {
            level: self.meta.level,
            mode: ScheduleMode::Feedback(table.clone()),
        })
    }
}

/// Barycentric interpolation over the Freudenthal triangulation of the lattice.
pub fn interpolate(v: &ValueFunction, mu: &AtomicMeasure) -> f64 {
    interpolate_values(&v.grid, &v.values, mu.weights())
}

pub(crate) fn interpolate_values(grid: &SimplexGrid, values: &[f64], weights: &[f64]) -> f64 {
    grid.stencil(weights)
        .iter()
        .map(|p| p.weight * values[p.node])
        .sum()
}

/// Exact discount weights `∫_{t_l}^{t_{l+1}} e^{-βt} dt` for `L` equal sub-intervals.
fn substep_weights(beta: f64, delta: f64, substeps: usize) -> Vec<(f64, f64)> {
    let h = delta / substeps as f64;
    (0..substeps)
        .map(|l| {
            let t0 = l as f64 * h;
            let t1 = (l + 1) as f64 * h;
            (t0, ((-beta * t0).exp() - (-beta * t1).exp()) / beta)
        })
        .collect()
}

/// Expected discounted running cost over one step of constant action.
fn running_cost(
    mu: &AtomicMeasure,
    action: &crate::actions::ActionVec,
    h: &[f64],
    cm: &CostModel,
    weights: &[(f64, f64)],
    quad: &GaussHermite,
) -> Result<f64> {
    let mut total = 0.0;
    for &(t, w) in weights {
        let expected = if t == 0.0 {
            cm.eval(mu, action)
        } else {
            transition_scenarios(mu, h, t, quad)?
                .iter()
                .map(|(p, state)| p * cm.eval(state, action))
                .sum()
        };
        total += w * expected;
    }
    Ok(total)
}

/// One row of the discretised operator: running cost and the sparse law of
/// the next lattice state.
#[derive(Debug, Clone)]
struct Row {
    running: f64,
    next: Vec<StencilPoint>,
}

#[allow(clippy::too_many_arguments)]
fn build_row(
    grid: &SimplexGrid,
    mu: &AtomicMeasure,
    action: &crate::actions::ActionVec,
    h: &[f64],
    delta: f64,
    cm: &CostModel,
    weights: &[(f64, f64)],
    quad: &GaussHermite,
) -> Result<Row> {
    let running = running_cost(mu, action, h, cm, weights, quad)?;
    let mut next: Vec<StencilPoint> = Vec::new();
    for (p, state) in transition_scenarios(mu, h, delta, quad)? {
        for s in grid.stencil(state.weights()) {
            next.push(StencilPoint {
                node: s.node,
                weight: p * s.weight,
            });
        }
    }
    next.sort_by_key(|s| s.node);
    let mut merged: Vec<StencilPoint> = Vec::with_capacity(next.len());
    for s in next {
        match merged.last_mut() {
            Some(last) if last.node == s.node => last.weight += s.weight,
            _ => merged.push(s),
        }
    }
    Ok(Row {
        running,
        next: merged,
    })
}

/// Precomputed Bellman operator on every lattice node for every action.
#[derive(Debug, Clone)]
pub struct BellmanTable {
    rows: Vec<Vec<Row>>,
    discount: f64,
}

impl BellmanTable {
    pub fn build(
        grid: &SimplexGrid,
        delta: f64,
        actions: &ActionGrid,
        cm: &CostModel,
        settings: &SolverSettings,
    ) -> Result<Self> {
        settings.validate()?;
        if !(delta > 0.0) {
            return Err(Error::Config(format!("step must be positive, got {delta}")));
        }
        let quad = GaussHermite::new(settings.quad)?;
        let weights = substep_weights(cm.beta(), delta, settings.substeps);
        let h_table: Vec<Vec<f64>> = actions
            .candidates()
            .iter()
            .map(|a| a.h_values(grid.atoms().as_slice()))
            .collect::<Result<_>>()?;
        let rows = (0..grid.len())
            .into_par_iter()
            .map(|node| {
                let mu = grid.node_measure(node);
                actions
                    .candidates()
                    .iter()
                    .zip(&h_table)
                    .map(|(a, h)| build_row(grid, &mu, a, h, delta, cm, &weights, &quad))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            rows,
            discount: (-cm.beta() * delta).exp(),
        })
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    fn node_value(&self, node: usize, values: &[f64]) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for (a, row) in self.rows[node].iter().enumerate() {
            let cont: f64 = row.next.iter().map(|s| s.weight * values[s.node]).sum();
            let q = row.running + self.discount * cont;
            if q < best.0 {
                best = (q, a);
            }
        }
        best
    }

    /// One Jacobi sweep: fresh values and minimising action per node.
    pub fn apply(&self, values: &[f64]) -> (Vec<f64>, Vec<usize>) {
        (0..self.rows.len())
            .into_par_iter()
            .map(|node| self.node_value(node, values))
            .unzip()
    }
}

/// Bellman operator at an arbitrary state, interpolating `v` at the
/// successor states. Ties go to the lowest action index.
pub fn bellman_apply(
    v: &ValueFunction,
    mu: &AtomicMeasure,
    delta: f64,
    actions: &ActionGrid,
    cm: &CostModel,
    settings: &SolverSettings,
) -> Result<(f64, usize)> {
    settings.validate()?;
    let quad = GaussHermite::new(settings.quad)?;
    let weights = substep_weights(cm.beta(), delta, settings.substeps);
    let discount = (-cm.beta() * delta).exp();
    let mut best = (f64::INFINITY, 0);
    for (a, action) in actions.candidates().iter().enumerate() {
        let h = action.h_values(mu.atoms().as_slice())?;
        let running = running_cost(mu, action, &h, cm, &weights, &quad)?;
        let cont: f64 = transition_scenarios(mu, &h, delta, &quad)?
            .iter()
            .map(|(p, state)| p * interpolate(v, state))
            .sum();
        let q = running + discount * cont;
        if q < best.0 {
            best = (q, a);
        }
    }
    Ok(best)
}

fn action_grid_id(actions: &ActionGrid) -> String {
    crate::io::fingerprint(actions.to_json().unwrap_or_default().as_bytes())
}

/// Fixed-point iteration from `V ≡ 0` (or `init`) until the sweep residual
/// drops below `tol (1 − γ) / γ`, `γ = e^{-βδ}`.
pub fn value_iteration(
    grid: Arc<SimplexGrid>,
    level: u32,
    actions: &ActionGrid,
    cm: &CostModel,
    settings: &SolverSettings,
    init: Option<Vec<f64>>,
) -> Result<ValueFunction> {
    let delta = dyadic_step(level);
    let table = BellmanTable::build(&grid, delta, actions, cm, settings)?;
    let gamma = table.discount();
    let threshold = settings.tol * (1.0 - gamma) / gamma;
    let mut values = match init {
        Some(v) if v.len() == grid.len() => v,
        Some(v) => {
            return Err(Error::Config(format!(
                "initial table has {} entries for {} nodes",
                v.len(),
                grid.len()
            )))
        }
        None => vec![0.0; grid.len()],
    };
    let mut history = Vec::new();
    loop {
        let (next, argmin) = table.apply(&values);
        let residual = next
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        history.push(residual);
        values = next;
        if !residual.is_finite() {
            return Err(Error::Numeric("value iteration produced non-finite values".into()));
        }
        if residual <= threshold {
            return Ok(ValueFunction {
                grid,
                values,
                policy: Some(argmin),
                meta: ValueMetadata {
                    level,
                    action_grid_id: action_grid_id(actions),
                    settings: *settings,
                    iterations: history.len(),
                    residual,
                    residual_history: history,
                },
            });
        }
        if history.len() >= settings.max_iter {
            return Err(Error::NonConvergence {
                iterations: history.len(),
                residual,
            });
        }
    }
}

/// Minimising action index at every lattice node for the given table,
/// packaged as a feedback schedule. Off-lattice states are resolved to their
/// nearest node at run time.
pub fn extract_policy(
    v: &ValueFunction,
    actions: &ActionGrid,
    cm: &CostModel,
    settings: &SolverSettings,
) -> Result<ControlSchedule> {
    let table = BellmanTable::build(&v.grid, v.delta(), actions, cm, settings)?;
    let (_, argmin) = table.apply(&v.values);
    Ok(ControlSchedule {
        level: v.meta.level,
        mode: ScheduleMode::Feedback(argmin),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineRow {
    pub level: u32,
    pub delta: f64,
    pub value: f64,
    pub iterations: usize,
    /// `V^{n_prev}(μ0) − V^n(μ0)`; absent on the first row.
    pub gap: Option<f64>,
}

/// Solves every level in `levels` and reports `V^n(μ0)` with successive gaps.
pub fn refine_study(
    mu0: &AtomicMeasure,
    cm: &CostModel,
    actions: &ActionGrid,
    levels: &[u32],
    grid: Arc<SimplexGrid>,
    settings: &SolverSettings,
) -> Result<(Vec<RefineRow>, Vec<ValueFunction>)> {
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("refinement levels must be increasing".into()));
    }
    let mut rows: Vec<RefineRow> = Vec::with_capacity(levels.len());
    let mut solutions = Vec::with_capacity(levels.len());
    for &level in levels {
        let v = value_iteration(grid.clone(), level, actions, cm, settings, None)?;
        let value = interpolate(&v, mu0);
        rows.push(RefineRow {
            level,
            delta: dyadic_step(level),
            value,
            iterations: v.meta.iterations,
            gap: rows.last().map(|prev| prev.value - value),
        });
        solutions.push(v);
    }
    Ok((rows, solutions))
}

/// Error allowance for comparing a closed-loop estimate with `V^n(μ0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonBudget {
    pub iteration_tol: f64,
    pub interpolation_modulus: f64,
    pub mc_error: f64,
    pub truncation: f64,
    /// Rectangle-rule discount error of the simulated objective.
    pub time_discretization: f64,
    pub total: f64,
}

impl EpsilonBudget {
    /// Budget for a closed-loop estimate with standard error `stderr`,
    /// horizon `horizon` and path step `dt`; `mc_error` is four standard errors.
    pub fn new(v: &ValueFunction, cm: &CostModel, stderr: f64, horizon: f64, dt: f64) -> Self {
        let iteration_tol = v.meta.settings.tol;
        let interpolation_modulus = v.interpolation_modulus();
        let mc_error = 4.0 * stderr;
        let truncation = truncation_error(cm, horizon);
        let time_discretization = rectangle_bias(cm, dt, horizon);
        Self {
            iteration_tol,
            interpolation_modulus,
            mc_error,
            truncation,
            time_discretization,
            total: iteration_tol + interpolation_modulus + mc_error + truncation + time_discretization,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::{make_action_grid, ActionGridSpec, ActionVec, LevelSpec};
    use crate::measures::{make_simplex_grid, AtomSet, DEFAULT_NODE_CAP};
    use crate::objective::CostSpec;

    fn actions() -> ActionGrid {
        make_action_grid(&ActionGridSpec {
            radius: 2.0,
            budget: 4.0,
            d: 1,
            levels: LevelSpec::Shared(vec![0.0, 0.5, 1.0]),
            scales: vec![1.0],
            axes_only: false,
        })
        .unwrap()
    }

    fn grid(m: u32) -> Arc<SimplexGrid> {
        Arc::new(make_simplex_grid(AtomSet::new(vec![-1.0, 1.0]).unwrap(), m, DEFAULT_NODE_CAP).unwrap())
    }

    fn variance_cost() -> CostModel {
        CostSpec::VariancePlusEffort { lambda: 0.1 }
            .build(1.0, None, &AtomSet::new(vec![-1.0, 1.0]).unwrap(), 4.0)
            .unwrap()
    }

    fn quick() -> SolverSettings {
        SolverSettings {
            quad: 12,
            substeps: 4,
            tol: 1e-9,
            max_iter: 10_000,
        }
    }

    #[test]
    fn constant_cost_fixed_point() {
        let cm = CostModel::constant(0.7, 1.5).unwrap();
        let g = grid(8);
        let init = vec![0.7 / 1.5; g.len()];
        let v = value_iteration(g.clone(), 2, &actions(), &cm, &quick(), Some(init)).unwrap();
        assert_eq!(v.meta.iterations, 1);
        assert!(v.values.iter().all(|x| (x - 0.7 / 1.5).abs() < 1e-12));
        let mu = AtomicMeasure::new(g.atoms().clone(), vec![0.3, 0.7]).unwrap();
        let (value, _) = bellman_apply(&v, &mu, 0.25, &actions(), &cm, &quick()).unwrap();
        assert!((value - 0.7 / 1.5).abs() < 1e-12);
    }

    #[test]
    fn dirac_bellman_is_closed_form() {
        let cm = variance_cost();
        let g = grid(8);
        let values: Vec<f64> = (0..g.len()).map(|i| 0.1 + 0.05 * i as f64).collect();
        let v = ValueFunction {
            grid: g.clone(),
            values: values.clone(),
            policy: None,
            meta: ValueMetadata {
                level: 2,
                action_grid_id: String::new(),
                settings: quick(),
                iterations: 0,
                residual: 0.0,
                residual_history: vec![],
            },
        };
        let dirac = AtomicMeasure::dirac(g.atoms().clone(), 1).unwrap();
        let delta = 0.25;
        let (value, arg) = bellman_apply(&v, &dirac, delta, &actions(), &cm, &quick()).unwrap();
        let (kmin, amin) = cm.min_over(&dirac, &actions());
        let gamma = (-delta).exp();
        let expected = (1.0 - gamma) * kmin + gamma * values[g.vertex_index(1)];
        assert!((value - expected).abs() < 1e-14);
        assert_eq!(arg, amin);
    }

    #[test]
    fn vertices_and_bounds_at_convergence() {
        let cm = variance_cost();
        let v = value_iteration(grid(16), 2, &actions(), &cm, &quick(), None).unwrap();
        for atom in 0..2 {
            let node = v.grid.vertex_index(atom);
            let (kmin, _) = cm.min_over(&v.grid.node_measure(node), &actions());
            assert!((v.values[node] - kmin / cm.beta()).abs() < 1e-9);
        }
        let bound = cm.k_max() / cm.beta() + 1e-9;
        assert!(v.values.iter().all(|x| x.abs() <= bound));
        let gamma = (-0.25f64).exp();
        let hist = &v.meta.residual_history;
        for w in hist.windows(2) {
            assert!(w[1] <= gamma * w[0] + 1e-12);
        }
    }

    #[test]
    fn singleton_grid_policy() {
        let cm = CostModel::constant(1.0, 1.0).unwrap();
        let single = ActionGrid::singleton(ActionVec::new(vec![0.5], 2.0, 4.0).unwrap());
        let v = value_iteration(grid(4), 1, &single, &cm, &quick(), None).unwrap();
        let schedule = extract_policy(&v, &single, &cm, &quick()).unwrap();
        assert_eq!(schedule.feedback_table().unwrap(), &[0; 5]);
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let cm = variance_cost();
        let settings = SolverSettings { max_iter: 3, ..quick() };
        match value_iteration(grid(4), 0, &actions(), &cm, &settings, None) {
            Err(Error::NonConvergence { iterations, residual }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn interpolation_basics() {
        let g = grid(4);
        let values = vec![0.0, 1.0, 4.0, 9.0, 16.0];
        let v = ValueFunction {
            grid: g.clone(),
            values,
            policy: None,
            meta: ValueMetadata {
                level: 0,
                action_grid_id: String::new(),
                settings: quick(),
                iterations: 0,
                residual: 0.0,
                residual_history: vec![],
            },
        };
        let at = |w0: f64| interpolate(&v, &AtomicMeasure::new(g.atoms().clone(), vec![w0, 1.0 - w0]).unwrap());
        assert_eq!(at(0.75), 1.0);
        assert!((at(0.875) - 0.5).abs() < 1e-12);
        assert!((at(0.375) - 6.5).abs() < 1e-12);
        let flat = ValueFunction { values: vec![2.5; 5], ..v.clone() };
        assert!((interpolate(&flat, &AtomicMeasure::new(g.atoms().clone(), vec![0.3, 0.7]).unwrap()) - 2.5).abs() < 1e-14);
        // |ΔV| / W1 with W1 = 2/4 per lattice step; largest jump 7
        assert!((v.lipschitz_estimate() - 14.0).abs() < 1e-12);
        assert!((v.interpolation_modulus() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn refinement_rows() {
        let cm = CostModel::constant(1.0, 2.0).unwrap();
        let g = grid(4);
        let mu0 = AtomicMeasure::uniform(g.atoms().clone());
        let (rows, _) = refine_study(&mu0, &cm, &actions(), &[0, 1, 2], g.clone(), &quick()).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| (r.value - 0.5).abs() < 1e-8));
        assert!(rows[0].gap.is_none() && rows[1].gap.is_some());
        assert!(refine_study(&mu0, &cm, &actions(), &[2, 1], g, &quick()).is_err());
    }
}
