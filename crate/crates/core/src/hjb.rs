//! Derivatives of polynomial functionals on atomic measures, the filter
//! generator, the Hamiltonian, and residual diagnostics for value tables.
//!
//! For `φ(μ) = Π_j μ(p_j)` the linear functional derivatives are available in
//! closed form, and the generator of the filter under action `v` is
//!
//! ```text
//! Lφ(μ) = ½ Σ_{i,j} δ²φ/δμ²(x_i, x_j) s_i s_j,   s_i = (h(v, x_i) − μ(h)) θ_i.
//! ```
//!
//! Since `Σ s_i = 0`, adding `a(x) + a(y)` to the kernel changes nothing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actions::{ActionGrid, ActionVec};
use crate::dp::ValueFunction;
use crate::error::{Error, Result};
use crate::filter::{diffusion_coeff, diffusion_coeff_h, exact_transition_sample};
use crate::measures::AtomicMeasure;
use crate::objective::{mean_stderr, CostModel};
use crate::rng::path_rng;

/// Largest number of factors accepted by [`PolyFunctional`].
pub const MAX_FACTORS: usize = 3;
/// Largest polynomial degree accepted by [`PolyFunctional`].
pub const MAX_DEGREE: usize = 4;

/// `φ(μ) = Π_j μ(p_j)` with `p_j(x) = Σ_k c_{jk} x^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyFunctional {
    factors: Vec<Vec<f64>>,
}

fn poly_eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

impl PolyFunctional {
    pub fn new(factors: Vec<Vec<f64>>) -> Result<Self> {
        if factors.is_empty() || factors.len() > MAX_FACTORS {
            return Err(Error::Config(format!(
                "functional needs 1..={MAX_FACTORS} factors, got {}",
                factors.len()
            )));
        }
        for p in &factors {
            if p.is_empty() || p.len() > MAX_DEGREE + 1 {
                return Err(Error::Config(format!(
                    "factor needs 1..={} coefficients, got {}",
                    MAX_DEGREE + 1,
                    p.len()
                )));
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::Config("non-finite polynomial coefficient".into()));
            }
        }
        Ok(Self { factors })
    }

    /// `μ(p)`.
    pub fn linear(p: Vec<f64>) -> Result<Self> {
        Self::new(vec![p])
    }

    /// `μ(p)^k`.
    pub fn power(p: Vec<f64>, k: usize) -> Result<Self> {
        Self::new(vec![p; k])
    }

    pub fn factors(&self) -> &[Vec<f64>] {
        &self.factors
    }

    fn integrals(&self, mu: &AtomicMeasure) -> Vec<f64> {
        self.factors
            .iter()
            .map(|p| mu.integrate(|x| poly_eval(p, x)))
            .collect()
    }

    pub fn value(&self, mu: &AtomicMeasure) -> f64 {
        self.integrals(mu).iter().product()
    }
}

fn product_except(values: &[f64], skip: &[usize]) -> f64 {
    values
        .iter()
        .enumerate()
        .filter(|(i, _)| !skip.contains(i))
        .map(|(_, v)| v)
        .product()
}

/// `Σ_j p_j(x) Π_{l≠j} μ(p_l)`.
pub fn first_derivative(phi: &PolyFunctional, mu: &AtomicMeasure, x: f64) -> f64 {
    let ints = phi.integrals(mu);
    phi.factors
        .iter()
        .enumerate()
        .map(|(j, p)| poly_eval(p, x) * product_except(&ints, &[j]))
        .sum()
}

/// `Σ_{j≠l} p_j(x) p_l(y) Π_{m≠j,l} μ(p_m)`.
pub fn second_derivative(phi: &PolyFunctional, mu: &AtomicMeasure, x: f64, y: f64) -> f64 {
    let ints = phi.integrals(mu);
    second_derivative_with(phi, &ints, x, y)
}

fn second_derivative_with(phi: &PolyFunctional, ints: &[f64], x: f64, y: f64) -> f64 {
    let mut total = 0.0;
    for (j, pj) in phi.factors.iter().enumerate() {
        for (l, pl) in phi.factors.iter().enumerate() {
            if j != l {
                total += poly_eval(pj, x) * poly_eval(pl, y) * product_except(ints, &[j, l]);
            }
        }
    }
    total
}

/// Signed weights `s_i = (h_i − μ(h)) θ_i`.
pub fn sigma_measure(v: &ActionVec, mu: &AtomicMeasure) -> Result<Vec<f64>> {
    diffusion_coeff(mu, v)
}

/// `½ Σ_{i,j} kernel(i, j) s_i s_j`.
fn quadratic_form(s: &[f64], kernel: impl Fn(usize, usize) -> f64) -> f64 {
    let mut total = 0.0;
    for (i, si) in s.iter().enumerate() {
        if *si == 0.0 {
            continue;
        }
        for (j, sj) in s.iter().enumerate() {
            if *sj != 0.0 {
                total += kernel(i, j) * si * sj;
            }
        }
    }
    0.5 * total
}

/// `Lφ(μ)` under constant action `v`.
pub fn generator(phi: &PolyFunctional, mu: &AtomicMeasure, v: &ActionVec) -> Result<f64> {
    let s = sigma_measure(v, mu)?;
    let xs = mu.atoms().as_slice();
    let ints = phi.integrals(mu);
    Ok(quadratic_form(&s, |i, j| second_derivative_with(phi, &ints, xs[i], xs[j])))
}

/// `βr + max_v ( −k(μ, v) − ½ Σ d2(i, j) s_i(v) s_j(v) )` over the action
/// grid; `d2` takes atom indices.
pub fn hamiltonian(
    mu: &AtomicMeasure,
    r: f64,
    d2: impl Fn(usize, usize) -> f64,
    actions: &ActionGrid,
    cm: &CostModel,
) -> Result<f64> {
    let xs = mu.atoms().as_slice();
    let mut best = f64::NEG_INFINITY;
    for v in actions.candidates() {
        let h = v.h_values(xs)?;
        let s = diffusion_coeff_h(mu.weights(), &h);
        best = best.max(-cm.eval(mu, v) - quadratic_form(&s, &d2));
    }
    Ok(cm.beta() * r + best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub h: f64,
    pub slope: f64,
    pub stderr: f64,
    /// Value the slopes should approach.
    pub target: f64,
    pub deviation: f64,
}

/// Finite-difference Dynkin slopes `(E φ(ξ_h) − φ(μ)) / h` from `samples`
/// exact transitions per duration, compared with [`generator`]. With
/// `discount = Some(β)` the slope is `(e^{-βh} E φ(ξ_h) − φ(μ)) / h` and the
/// target `Lφ − βφ`. Sample `i` uses stream `(seed, i)` at every duration.
pub fn generator_consistency_check(
    phi: &PolyFunctional,
    mu: &AtomicMeasure,
    v: &ActionVec,
    h_list: &[f64],
    samples: usize,
    seed: u64,
    discount: Option<f64>,
) -> Result<Vec<SlopeRow>> {
    if h_list.iter().any(|h| !(*h > 0.0)) || h_list.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::Config("durations must be positive and decreasing".into()));
    }
    if samples < 2 {
        return Err(Error::Config("need at least two samples".into()));
    }
    let beta = discount.unwrap_or(0.0);
    let phi0 = phi.value(mu);
    let target = generator(phi, mu, v)? - beta * phi0;
    h_list
        .iter()
        .map(|&h| {
            let values = (0..samples)
                .into_par_iter()
                .map(|i| {
                    let mut rng = path_rng(seed, i as u64);
                    exact_transition_sample(mu, v, h, &mut rng).map(|xi| phi.value(&xi))
                })
                .collect::<Result<Vec<f64>>>()?;
            let (mean, se) = mean_stderr(&values);
            let factor = (-beta * h).exp();
            let slope = (factor * mean - phi0) / h;
            Ok(SlopeRow {
                h,
                slope,
                stderr: factor * se / h,
                target,
                deviation: (slope - target).abs(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// Non-vertex nodes included in the statistics.
    pub nodes: usize,
    #[serde(rename = "median_absH")]
    pub median_abs_h: f64,
    #[serde(rename = "p90_absH")]
    pub p90_abs_h: f64,
    #[serde(rename = "vertex_max_absH")]
    pub vertex_max_abs_h: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
    /// `(node, H)` for every evaluated node, vertices included.
    #[serde(skip)]
    pub per_node: Vec<(usize, f64)>,
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Second difference of `V` along `e_i − e_j` at `node`, scaled by `m²`.
/// `None` when the stencil leaves the lattice.
fn edge_second_difference(v: &ValueFunction, node: usize, i: usize, j: usize) -> Option<f64> {
    let grid = &v.grid;
    let counts = grid.counts(node);
    if counts[i] == 0 || counts[j] == 0 {
        return None;
    }
    let mut plus = counts.to_vec();
    plus[i] += 1;
    plus[j] -= 1;
    let mut minus = counts.to_vec();
    minus[i] -= 1;
    minus[j] += 1;
    let m = grid.resolution() as f64;
    let a = grid.index_of(&plus)?;
    let b = grid.index_of(&minus)?;
    Some(m * m * (v.values[a] - 2.0 * v.values[node] + v.values[b]))
}

/// Pointwise HJB residual of a value table.
///
/// At a node the curvature kernel is `d2(i, j) = −½ Q_ij` for `i ≠ j`, where
/// `Q_ij` is the second difference along `e_i − e_j`; for a zero-mass `s`
/// this reproduces `sᵀ ∇²V s`. Vertices reduce to `βV − min_v k`. Nodes
/// whose support has a pair with no valid stencil are skipped with a
/// warning. With `interior_only` the statistics use nodes of full support.
pub fn hjb_residual_diagnostic(
    v: &ValueFunction,
    actions: &ActionGrid,
    cm: &CostModel,
    interior_only: bool,
) -> Result<ResidualReport> {
    let grid = &v.grid;
    let n_atoms = grid.atoms().len();
    let evaluated = (0..grid.len())
        .into_par_iter()
        .map(|node| -> Result<Option<(usize, f64, bool)>> {
            let mu = grid.node_measure(node);
            if grid.is_vertex(node) {
                let h = hamiltonian(&mu, v.values[node], |_, _| 0.0, actions, cm)?;
                return Ok(Some((node, h, true)));
            }
            if interior_only && !grid.is_interior(node) {
                return Ok(None);
            }
            let mut q = vec![0.0; n_atoms * n_atoms];
            let counts = grid.counts(node);
            for i in 0..n_atoms {
                for j in (i + 1)..n_atoms {
                    if counts[i] == 0 || counts[j] == 0 {
                        continue;
                    }
                    match edge_second_difference(v, node, i, j) {
                        Some(d) => {
                            q[i * n_atoms + j] = d;
                            q[j * n_atoms + i] = d;
                        }
                        None => return Ok(None),
                    }
                }
            }
            let h = hamiltonian(&mu, v.values[node], |i, j| -0.5 * q[i * n_atoms + j], actions, cm)?;
            Ok(Some((node, h, false)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut warnings = Vec::new();
    let mut per_node = Vec::new();
    let mut inner = Vec::new();
    let mut vertex_max: f64 = 0.0;
    let mut skipped = 0usize;
    for (node, entry) in evaluated.into_iter().enumerate() {
        match entry {
            Some((idx, h, true)) => {
                vertex_max = vertex_max.max(h.abs());
                per_node.push((idx, h));
            }
            Some((idx, h, false)) => {
                inner.push(h.abs());
                per_node.push((idx, h));
            }
            None if !interior_only || grid.is_interior(node) => skipped += 1,
            None => {}
        }
    }
    if skipped > 0 {
        warnings.push(format!("{skipped} nodes skipped: stencil leaves the simplex"));
    }
    if inner.is_empty() {
        warnings.push("insufficient resolution: no non-vertex node has a full stencil".into());
    }
    inner.sort_by(f64::total_cmp);
    Ok(ResidualReport {
        nodes: inner.len(),
        median_abs_h: quantile_sorted(&inner, 0.5),
        p90_abs_h: quantile_sorted(&inner, 0.9),
        vertex_max_abs_h: vertex_max,
        warnings,
        per_node,
    })
}
