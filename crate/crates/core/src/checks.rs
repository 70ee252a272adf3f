//! Statistical and exact invariant checks shared by the `check` command and
//! the test suites. Every check reports `{name, status, statistic, threshold}`
//! and passes when `statistic <= threshold`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actions::{tail_bound, ActionGrid, ActionVec};
use crate::dp::ValueFunction;
use crate::error::{Error, Result};
use crate::filter::{euler_step_h, exact_transition_sample_h, whole_steps};
use crate::measures::{wasserstein1, AtomicMeasure, MASS_TOLERANCE};
use crate::objective::{mean_stderr, CostModel};
use crate::rng::path_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub status: Status,
    pub statistic: f64,
    pub threshold: f64,
}

impl CheckResult {
    /// Passes iff `statistic <= threshold` (NaN fails).
    pub fn at_most(name: impl Into<String>, statistic: f64, threshold: f64) -> Self {
        let status = if statistic <= threshold {
            Status::Pass
        } else {
            Status::Fail
        };
        Self {
            name: name.into(),
            status,
            statistic,
            threshold,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

fn par_samples<T: Send>(
    samples: usize,
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    (0..samples).into_par_iter().map(f).collect()
}

/// Weights on the simplex: non-negative and summing to one within tolerance.
pub fn mass_check(name: &str, weights: &[f64]) -> CheckResult {
    let sum: f64 = weights.iter().sum();
    let negative = weights.iter().any(|w| *w < 0.0 || !w.is_finite());
    let stat = if negative { f64::INFINITY } else { (sum - 1.0).abs() };
    CheckResult::at_most(name, stat, MASS_TOLERANCE)
}

/// `|mean ξ_δ(f) − μ(f)| ≤ 4 stderr` over exact transitions; `f` is given by
/// its values on the atoms.
pub fn martingale_check(
    mu: &AtomicMeasure,
    v: &ActionVec,
    delta: f64,
    f: &[f64],
    samples: usize,
    seed: u64,
) -> Result<CheckResult> {
    let h = v.h_values(mu.atoms().as_slice())?;
    let values = par_samples(samples, |i| {
        let mut rng = path_rng(seed, i as u64);
        exact_transition_sample_h(mu, &h, delta, &mut rng).map(|xi| xi.integrate_values(f))
    })?;
    let (mean, se) = mean_stderr(&values);
    Ok(CheckResult::at_most(
        "martingale",
        (mean - mu.integrate_values(f)).abs(),
        4.0 * se,
    ))
}

fn euler_chain<R: Rng + ?Sized>(
    mu: &AtomicMeasure,
    h: &[f64],
    steps: usize,
    dt: f64,
    rng: &mut R,
) -> Result<AtomicMeasure> {
    let sd = dt.sqrt();
    let mut state = mu.clone();
    for _ in 0..steps {
        let g: f64 = rng.sample(StandardNormal);
        state = euler_step_h(&state, h, sd * g)?;
    }
    Ok(state)
}

/// First and second moments of `ξ_δ(f)` from Euler chains with step `dt`
/// against exact transitions; tolerance `max(1e-2, 4 combined stderr)`.
/// Euler sample `i` uses stream `2i`, exact sample `i` stream `2i + 1`.
pub fn euler_exact_moments(
    mu: &AtomicMeasure,
    v: &ActionVec,
    delta: f64,
    dt: f64,
    f: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<CheckResult>> {
    let steps = whole_steps(delta, dt, "Euler step")?;
    let h = v.h_values(mu.atoms().as_slice())?;
    let pairs = par_samples(samples, |i| {
        let mut rng = path_rng(seed, 2 * i as u64);
        let euler = euler_chain(mu, &h, steps, dt, &mut rng)?.integrate_values(f);
        let mut rng = path_rng(seed, 2 * i as u64 + 1);
        let exact = exact_transition_sample_h(mu, &h, delta, &mut rng)?.integrate_values(f);
        Ok((euler, exact))
    })?;
    let mut out = Vec::with_capacity(2);
    for (power, name) in [(1, "euler_vs_exact_first_moment"), (2, "euler_vs_exact_second_moment")] {
        let e: Vec<f64> = pairs.iter().map(|p| p.0.powi(power)).collect();
        let x: Vec<f64> = pairs.iter().map(|p| p.1.powi(power)).collect();
        let (me, se_e) = mean_stderr(&e);
        let (mx, se_x) = mean_stderr(&x);
        let tol = (4.0 * (se_e * se_e + se_x * se_x).sqrt()).max(1e-2);
        out.push(CheckResult::at_most(name, (me - mx).abs(), tol));
    }
    Ok(out)
}

/// Dirac states stay put under Euler steps and exact transitions.
pub fn dirac_absorbing(
    mu: &AtomicMeasure,
    v: &ActionVec,
    samples: usize,
    seed: u64,
) -> Result<CheckResult> {
    let h = v.h_values(mu.atoms().as_slice())?;
    let mut moved = 0usize;
    for atom in 0..mu.len() {
        let dirac = AtomicMeasure::dirac(mu.atoms().clone(), atom)?;
        let flags = par_samples(samples, |i| {
            let mut rng = path_rng(seed, i as u64);
            let euler = euler_chain(&dirac, &h, 10, 0.01, &mut rng)?;
            let exact = exact_transition_sample_h(&dirac, &h, 0.5, &mut rng)?;
            Ok(euler.weights() != dirac.weights() || exact.weights() != dirac.weights())
        })?;
        moved += flags.into_iter().filter(|m| *m).count();
    }
    Ok(CheckResult::at_most("dirac_absorbing", moved as f64, 0.0))
}

/// Runs Euler chains from `mu` and each of `others` on a common Brownian path.
fn coupled_chains<R: Rng + ?Sized>(
    mu: &AtomicMeasure,
    others: &[AtomicMeasure],
    h: &[f64],
    steps: usize,
    dt: f64,
    rng: &mut R,
) -> Result<(AtomicMeasure, Vec<AtomicMeasure>)> {
    let sd = dt.sqrt();
    let mut a = mu.clone();
    let mut bs = others.to_vec();
    for _ in 0..steps {
        let dw = sd * rng.sample::<f64, _>(StandardNormal);
        a = euler_step_h(&a, h, dw)?;
        for b in bs.iter_mut() {
            *b = euler_step_h(b, h, dw)?;
        }
    }
    Ok((a, bs))
}

/// `E 𝒲(ξ^μ_t, ξ^ν_t) ≥ 𝒲(μ, ν) − 4 stderr` under a common driving noise.
/// The statistic is `𝒲(μ, ν) − mean`.
#[allow(clippy::too_many_arguments)]
pub fn wasserstein_submartingale(
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
    v: &ActionVec,
    t: f64,
    dt: f64,
    samples: usize,
    seed: u64,
) -> Result<CheckResult> {
    let steps = whole_steps(t, dt, "Euler step")?;
    let h = v.h_values(mu.atoms().as_slice())?;
    let dists = par_samples(samples, |i| {
        let mut rng = path_rng(seed, i as u64);
        let (a, b) = coupled_chains(mu, std::slice::from_ref(nu), &h, steps, dt, &mut rng)?;
        Ok(wasserstein1(&a, &b[0]))
    })?;
    let (mean, se) = mean_stderr(&dists);
    Ok(CheckResult::at_most(
        format!("wasserstein_submartingale_t{t}"),
        wasserstein1(mu, nu) - mean,
        4.0 * se,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    /// Perturbation size `2^{-j}`.
    pub scale: f64,
    pub mean: f64,
    pub stderr: f64,
}

fn perturbations(mu: &AtomicMeasure, nu: &AtomicMeasure, levels: usize) -> Result<Vec<AtomicMeasure>> {
    if mu.atoms() != nu.atoms() {
        return Err(Error::Precondition("perturbation must share the atom set".into()));
    }
    (0..levels)
        .map(|j| {
            let s = (-(j as f64)).exp2();
            let w = mu
                .weights()
                .iter()
                .zip(nu.weights())
                .map(|(a, b)| a + s * (b - a))
                .collect();
            AtomicMeasure::from_unnormalized(mu.atoms().clone(), w)
        })
        .collect()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `E‖θ^μ_T − θ^{ν_j}_T‖ / ‖θ^μ_0 − θ^{ν_j}_0‖` for `ν_j = μ + 2^{-j}(ν − μ)`,
/// `j = 0..levels`, under a common noise. Passes when every ratio stays below
/// the Gronwall constant `exp(L² T / 2)`, `L = 2 max|h| + ‖h‖₂` being a
/// Lipschitz constant of the diffusion coefficient on the simplex.
#[allow(clippy::too_many_arguments)]
pub fn lipschitz_stability(
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
    v: &ActionVec,
    t: f64,
    dt: f64,
    levels: usize,
    samples: usize,
    seed: u64,
) -> Result<(Vec<ScaleRow>, CheckResult)> {
    let steps = whole_steps(t, dt, "Euler step")?;
    let h = v.h_values(mu.atoms().as_slice())?;
    let nus = perturbations(mu, nu, levels)?;
    let initial: Vec<f64> = nus.iter().map(|n| euclid(mu.weights(), n.weights())).collect();
    if initial.contains(&0.0) {
        return Err(Error::Precondition("perturbation must differ from the base measure".into()));
    }
    let draws = par_samples(samples, |i| {
        let mut rng = path_rng(seed, i as u64);
        let (a, bs) = coupled_chains(mu, &nus, &h, steps, dt, &mut rng)?;
        Ok(bs
            .iter()
            .zip(&initial)
            .map(|(b, d0)| euclid(a.weights(), b.weights()) / d0)
            .collect::<Vec<f64>>())
    })?;
    let rows: Vec<ScaleRow> = (0..levels)
        .map(|j| {
            let col: Vec<f64> = draws.iter().map(|d| d[j]).collect();
            let (mean, stderr) = mean_stderr(&col);
            ScaleRow {
                scale: (-(j as f64)).exp2(),
                mean,
                stderr,
            }
        })
        .collect();
    let hmax = h.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let lip = 2.0 * hmax + h.iter().map(|x| x * x).sum::<f64>().sqrt();
    let bound = (0.5 * lip * lip * t).exp();
    let worst = rows.iter().map(|r| r.mean).fold(0.0, f64::max);
    Ok((rows, CheckResult::at_most("lipschitz_ratio", worst, bound)))
}

/// `E|ξ^{μ_j}_t(f) − ξ^μ_t(f)|` for `μ_j = μ + 2^{-j}(ν − μ)` under a common
/// noise. Two verdicts: the means decay (each at most the previous plus four
/// combined stderr) and the finest one falls below four stderr of the
/// coarsest estimate.
#[allow(clippy::too_many_arguments)]
pub fn l1_stability(
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
    v: &ActionVec,
    f: &[f64],
    t: f64,
    dt: f64,
    levels: usize,
    samples: usize,
    seed: u64,
) -> Result<(Vec<ScaleRow>, Vec<CheckResult>)> {
    if levels < 2 {
        return Err(Error::Config("need at least two perturbation levels".into()));
    }
    let steps = whole_steps(t, dt, "Euler step")?;
    let h = v.h_values(mu.atoms().as_slice())?;
    let nus = perturbations(mu, nu, levels)?;
    let draws = par_samples(samples, |i| {
        let mut rng = path_rng(seed, i as u64);
        let (a, bs) = coupled_chains(mu, &nus, &h, steps, dt, &mut rng)?;
        let base = a.integrate_values(f);
        Ok(bs
            .iter()
            .map(|b| (b.integrate_values(f) - base).abs())
            .collect::<Vec<f64>>())
    })?;
    let rows: Vec<ScaleRow> = (0..levels)
        .map(|j| {
            let col: Vec<f64> = draws.iter().map(|d| d[j]).collect();
            let (mean, stderr) = mean_stderr(&col);
            ScaleRow {
                scale: (-(j as f64)).exp2(),
                mean,
                stderr,
            }
        })
        .collect();
    let worst_rise = rows
        .windows(2)
        .map(|w| w[1].mean - w[0].mean - 4.0 * (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt())
        .fold(f64::NEG_INFINITY, f64::max);
    let last = rows.last().expect("levels >= 2");
    let checks = vec![
        CheckResult::at_most("l1_stability_monotone", worst_rise, 0.0),
        CheckResult::at_most("l1_stability_limit", last.mean, 4.0 * rows[0].stderr),
    ];
    Ok((rows, checks))
}

/// Largest `|Σ_{i≥n} v_i x^i| / tail_bound` over random feasible `(v, x)`
/// with `|x| ≤ κ`. Half the draws sit on the ellipsoid boundary with tail
/// coefficients aligned to `x` and no head, which is where the bound is tight.
pub fn tail_bound_check(
    radius: f64,
    budget: f64,
    kappa: f64,
    order: usize,
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<CheckResult> {
    if n == 0 || n > order {
        return Err(Error::Config(format!("tail index {n} outside 1..={order}")));
    }
    let bound = tail_bound(radius, budget, kappa, n)?;
    let ratios = par_samples(samples, |i| {
        let mut rng = path_rng(seed, i as u64);
        let x = kappa * (2.0 * rng.random::<f64>() - 1.0);
        let aligned = i % 2 == 0;
        // scaled coordinates u_i = R^i v_i on the ball of radius sqrt(K)
        let mut u: Vec<f64> = (1..=order)
            .map(|k| {
                if aligned {
                    if k >= n { (x / radius).powi(k as i32) } else { 0.0 }
                } else {
                    rng.sample(StandardNormal)
                }
            })
            .collect();
        let norm = u.iter().map(|c| c * c).sum::<f64>().sqrt();
        let r = if aligned { 1.0 } else { rng.random::<f64>().sqrt() };
        let scale = if norm > 0.0 { budget.sqrt() * r / norm } else { 0.0 };
        for c in u.iter_mut() {
            *c *= scale;
        }
        let coeffs: Vec<f64> = u
            .iter()
            .enumerate()
            .map(|(k, c)| c / radius.powi(k as i32 + 1))
            .collect();
        let v = ActionVec::new(coeffs, radius, budget * (1.0 + 1e-12))?;
        let tail: f64 = v.coeffs()[n - 1..]
            .iter()
            .enumerate()
            .map(|(k, c)| c * x.powi((n + k) as i32))
            .sum();
        Ok(tail.abs() / bound)
    })?;
    let worst = ratios.into_iter().fold(0.0, f64::max);
    Ok(CheckResult::at_most(format!("tail_bound_n{n}"), worst, 1.0))
}

/// Largest successive residual ratio against `γ + 1e-3`.
pub fn contraction_check(history: &[f64], gamma: f64) -> CheckResult {
    let worst = history
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max);
    CheckResult::at_most("contraction", worst, gamma + 1e-3)
}

/// Vertex values against `min_v k(δ_x, v) / β`.
pub fn vertex_identity(v: &ValueFunction, actions: &ActionGrid, cm: &CostModel) -> CheckResult {
    let grid = &v.grid;
    let worst = (0..grid.atoms().len())
        .map(|atom| {
            let node = grid.vertex_index(atom);
            let (kmin, _) = cm.min_over(&grid.node_measure(node), actions);
            (v.values[node] - kmin / cm.beta()).abs()
        })
        .fold(0.0, f64::max);
    CheckResult::at_most("vertex_identity", worst, 1e-9)
}

/// `|V| ≤ k_max / β` at every node.
pub fn value_bound(v: &ValueFunction, cm: &CostModel) -> CheckResult {
    let worst = v.values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    CheckResult::at_most("value_bound", worst, cm.k_max() / cm.beta() + 1e-9)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::AtomSet;

    fn atoms() -> AtomSet {
        AtomSet::new(vec![-1.0, 1.0]).unwrap()
    }

    fn id() -> ActionVec {
        ActionVec::new(vec![1.0], 2.0, 4.0).unwrap()
    }

    #[test]
    fn status_and_mass() {
        assert!(CheckResult::at_most("x", 1.0, 1.0).passed());
        assert!(!CheckResult::at_most("x", f64::NAN, 1.0).passed());
        assert!(mass_check("m", &[0.5, 0.5]).passed());
        assert!(!mass_check("m", &[0.6, 0.5]).passed());
        assert!(!mass_check("m", &[1.5, -0.5]).passed());
    }

    #[test]
    fn dirac_states_never_move() {
        let mu = AtomicMeasure::uniform(atoms());
        assert!(dirac_absorbing(&mu, &id(), 200, 1).unwrap().passed());
    }

    #[test]
    fn martingale_holds_for_identity() {
        let mu = AtomicMeasure::uniform(atoms());
        let check = martingale_check(&mu, &id(), 1.0, &[-1.0, 1.0], 20_000, 4).unwrap();
        assert!(check.passed(), "{check:?}");
    }

    #[test]
    fn tail_bound_holds_and_is_nearly_tight() {
        for n in [1, 3] {
            let check = tail_bound_check(2.0, 4.0, 1.5, 6, n, 5_000, 9).unwrap();
            assert!(check.passed());
            assert!(check.statistic > 0.9, "{check:?}");
        }
        assert!(tail_bound_check(2.0, 4.0, 1.5, 6, 7, 10, 9).is_err());
    }

    #[test]
    fn contraction_ratio() {
        let gamma = 0.5;
        assert!(contraction_check(&[1.0, 0.5, 0.25], gamma).passed());
        assert!(!contraction_check(&[1.0, 0.9], gamma).passed());
    }
}
