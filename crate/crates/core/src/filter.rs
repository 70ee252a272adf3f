//! Controlled filter dynamics on a finite support.
//!
//! For an `N`-atom prior the filter is a process on the simplex driven by a
//! scalar Brownian motion,
//!
//! ```text
//! dθ_k = θ_k (h_k − Σ_n θ_n h_n) dW_t,     h_k = h(u_t, x_k).
//! ```
//!
//! Three routes are provided: an Euler–Maruyama integrator on the weights, an
//! exact one-step sampler that draws the signal, a Gaussian observation and
//! applies Bayes' rule, and a deterministic version of the latter that mixes
//! over atoms and integrates the Gaussian with Gauss–Hermite nodes.
//! Closed-loop simulation runs the observation model `dY = h(u, X) dt + dW`
//! with a hidden signal draw and feedback at dyadic times.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::actions::ActionVec;
use crate::control::{dyadic_step, Policy};
use crate::error::{Error, Result};
use crate::measures::{bayes_update_h, normalize_with_floor, AtomSet, AtomicMeasure};
use crate::quadrature::GaussHermite;

/// `σ̃_k = θ_k (h_k − Σ θ_n h_n)`. Components sum to zero.
pub fn diffusion_coeff(mu: &AtomicMeasure, v: &ActionVec) -> Result<Vec<f64>> {
    let h = v.h_values(mu.atoms().as_slice())?;
    Ok(diffusion_coeff_h(mu.weights(), &h))
}

pub fn diffusion_coeff_h(weights: &[f64], h: &[f64]) -> Vec<f64> {
    let mean: f64 = weights.iter().zip(h).map(|(w, hi)| w * hi).sum();
    weights.iter().zip(h).map(|(w, hi)| w * (hi - mean)).collect()
}

/// One Euler–Maruyama step `θ + σ̃ dW`, clipped at zero and renormalised.
pub fn euler_step(mu: &AtomicMeasure, v: &ActionVec, dw: f64, dt: f64) -> Result<AtomicMeasure> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("Euler step needs dt > 0, got {dt}")));
    }
    let h = v.h_values(mu.atoms().as_slice())?;
    euler_step_h(mu, &h, dw)
}

pub(crate) fn euler_step_h(mu: &AtomicMeasure, h: &[f64], dw: f64) -> Result<AtomicMeasure> {
    let sigma = diffusion_coeff_h(mu.weights(), h);
    if dw == 0.0 || sigma.iter().all(|&s| s == 0.0) {
        return Ok(mu.clone());
    }
    let mut weights: Vec<f64> = mu
        .weights()
        .iter()
        .zip(&sigma)
        .map(|(w, s)| (w + s * dw).max(0.0))
        .collect();
    normalize_with_floor(&mut weights)
        .map_err(|_| Error::Degenerate("every weight clipped to zero in Euler step".into()))?;
    Ok(AtomicMeasure::from_parts_unchecked(mu.atoms().clone(), weights))
}

/// Draws an atom index from the weights.
pub(crate) fn sample_atom<R: Rng + ?Sized>(mu: &AtomicMeasure, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in mu.weights().iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Exact draw of the filter after `delta` time units of constant action `v`:
/// sample `X ~ μ`, observe `y = h(v, X) δ + √δ G` and apply Bayes' rule.
pub fn exact_transition_sample<R: Rng + ?Sized>(
    mu: &AtomicMeasure,
    v: &ActionVec,
    delta: f64,
    rng: &mut R,
) -> Result<AtomicMeasure> {
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("transition needs delta > 0, got {delta}")));
    }
    let h = v.h_values(mu.atoms().as_slice())?;
    exact_transition_sample_h(mu, &h, delta, rng)
}

pub(crate) fn exact_transition_sample_h<R: Rng + ?Sized>(
    mu: &AtomicMeasure,
    h: &[f64],
    delta: f64,
    rng: &mut R,
) -> Result<AtomicMeasure> {
    let j = sample_atom(mu, rng);
    let g: f64 = rng.sample(StandardNormal);
    bayes_update_h(mu, h, h[j] * delta + delta.sqrt() * g, delta)
}

/// Weighted scenarios `(probability, state)` approximating the law of the
/// filter after `delta` under constant drift values `h`: one Gauss–Hermite
/// node per Gaussian draw, mixed over the atoms of `mu`.
pub fn transition_scenarios(
    mu: &AtomicMeasure,
    h: &[f64],
    delta: f64,
    quad: &GaussHermite,
) -> Result<Vec<(f64, AtomicMeasure)>> {
    let sd = delta.sqrt();
    let mut out = Vec::with_capacity(mu.support_size() * quad.len());
    for (&theta, &hj) in mu.weights().iter().zip(h) {
        if theta == 0.0 {
            continue;
        }
        for (z, w) in quad.iter() {
            out.push((theta * w, bayes_update_h(mu, h, hj * delta + sd * z, delta)?));
        }
    }
    Ok(out)
}

/// `E[g(ξ_δ)]` for the filter started at `mu` under constant action `v`.
pub fn transition_expectation(
    mu: &AtomicMeasure,
    v: &ActionVec,
    delta: f64,
    g: impl Fn(&AtomicMeasure) -> f64,
    quad: &GaussHermite,
) -> Result<f64> {
    if !(delta >= 0.0) {
        return Err(Error::Domain(format!("transition needs delta >= 0, got {delta}")));
    }
    if delta == 0.0 {
        return Ok(g(mu));
    }
    let h = v.h_values(mu.atoms().as_slice())?;
    Ok(transition_scenarios(mu, &h, delta, quad)?
        .iter()
        .map(|(w, state)| w * g(state))
        .sum())
}

/// Time-indexed record of one simulated trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct PathSample {
    #[serde(serialize_with = "serialize_atoms")]
    pub atoms: AtomSet,
    pub dt: f64,
    pub times: Vec<f64>,
    /// Index of the hidden signal atom (strong formulation only).
    pub signal: Option<usize>,
    /// Brownian increments, one per step.
    pub dw: Vec<f64>,
    /// Observation path; for weak paths `dY = ξ(h) dt + dW`.
    pub y: Vec<f64>,
    /// Innovation path `I_t = Y_t − ∫ ξ_s(h) ds` (left-point rule).
    pub innovations: Vec<f64>,
    /// Filter weights at each node.
    pub xi: Vec<Vec<f64>>,
    /// Action applied on `[t_k, t_{k+1})`; the last entry repeats.
    pub u_index: Vec<usize>,
    #[serde(serialize_with = "serialize_actions")]
    pub action_table: Vec<ActionVec>,
}

fn serialize_atoms<S: serde::Serializer>(atoms: &AtomSet, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(atoms.as_slice())
}

fn serialize_actions<S: serde::Serializer>(
    actions: &[ActionVec],
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(actions.iter().map(|a| a.coeffs()))
}

impl PathSample {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn measure_at(&self, k: usize) -> AtomicMeasure {
        AtomicMeasure::from_parts_unchecked(self.atoms.clone(), self.xi[k].clone())
    }

    pub fn action_at(&self, k: usize) -> &ActionVec {
        &self.action_table[self.u_index[k]]
    }

    /// CSV with columns `t, Y, u_index, theta_1 .. theta_N`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string(), "Y".to_string(), "u_index".to_string()];
        header.extend((1..=self.atoms.len()).map(|i| format!("theta_{i}")));
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![
                format!("{}", self.times[k]),
                format!("{}", self.y[k]),
                self.u_index[k].to_string(),
            ];
            row.extend(self.xi[k].iter().map(|v| format!("{v}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Number of `dt` steps in `span`, rejecting spans that are not a whole multiple.
pub(crate) fn whole_steps(span: f64, dt: f64, what: &str) -> Result<usize> {
    if !(dt > 0.0 && span >= 0.0) {
        return Err(Error::Config(format!("invalid step {dt} for {what} {span}")));
    }
    let ratio = span / dt;
    let rounded = ratio.round();
    if (ratio - rounded).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::Config(format!(
            "dt = {dt} does not divide the {what} {span}"
        )));
    }
    Ok(rounded as usize)
}

struct PathRecorder {
    times: Vec<f64>,
    dw: Vec<f64>,
    y: Vec<f64>,
    innovations: Vec<f64>,
    xi: Vec<Vec<f64>>,
    u_index: Vec<usize>,
}

impl PathRecorder {
    fn with_capacity(n: usize) -> Self {
        Self {
            times: Vec::with_capacity(n + 1),
            dw: Vec::with_capacity(n),
            y: Vec::with_capacity(n + 1),
            innovations: Vec::with_capacity(n + 1),
            xi: Vec::with_capacity(n + 1),
            u_index: Vec::with_capacity(n + 1),
        }
    }

    fn node(&mut self, t: f64, y: f64, innovation: f64, xi: &AtomicMeasure, u: usize) {
        self.times.push(t);
        self.y.push(y);
        self.innovations.push(innovation);
        self.xi.push(xi.weights().to_vec());
        self.u_index.push(u);
    }

    fn finish(self, atoms: AtomSet, dt: f64, signal: Option<usize>, actions: &[ActionVec]) -> PathSample {
        PathSample {
            atoms,
            dt,
            times: self.times,
            signal,
            dw: self.dw,
            y: self.y,
            innovations: self.innovations,
            xi: self.xi,
            u_index: self.u_index,
            action_table: actions.to_vec(),
        }
    }
}

fn drift_table(policy: &dyn Policy, atoms: &AtomSet) -> Result<Vec<Vec<f64>>> {
    policy
        .actions()
        .iter()
        .map(|a| a.h_values(atoms.as_slice()))
        .collect()
}

/// Euler path of the filter SDE under the policy's piecewise-constant actions.
pub fn simulate_weak_path<R: Rng + ?Sized>(
    mu0: &AtomicMeasure,
    policy: &dyn Policy,
    horizon: f64,
    dt: f64,
    rng: &mut R,
) -> Result<PathSample> {
    let per_segment = whole_steps(dyadic_step(policy.level()), dt, "control step")?;
    let steps = whole_steps(horizon, dt, "horizon")?;
    let h_table = drift_table(policy, mu0.atoms())?;
    let mut rec = PathRecorder::with_capacity(steps);
    let mut xi = mu0.clone();
    let (mut y, mut innovation) = (0.0, 0.0);
    let mut u = policy.decide(0, &xi);
    let sd = dt.sqrt();
    for k in 0..steps {
        if k % per_segment == 0 {
            u = policy.decide(k / per_segment, &xi);
        }
        rec.node(k as f64 * dt, y, innovation, &xi, u);
        let h = &h_table[u];
        let dw = sd * rng.sample::<f64, _>(StandardNormal);
        y += xi.integrate_values(h) * dt + dw;
        innovation += dw;
        rec.dw.push(dw);
        xi = euler_step_h(&xi, h, dw)?;
    }
    rec.node(steps as f64 * dt, y, innovation, &xi, u);
    Ok(rec.finish(mu0.atoms().clone(), dt, None, policy.actions()))
}

/// Strong-formulation episode with the hidden signal drawn from `mu0`.
pub fn simulate_closed_loop<R: Rng + ?Sized>(
    mu0: &AtomicMeasure,
    policy: &dyn Policy,
    horizon: f64,
    dt: f64,
    rng: &mut R,
) -> Result<PathSample> {
    let signal = sample_atom(mu0, rng);
    simulate_closed_loop_with_signal(mu0, policy, signal, horizon, dt, rng)
}

/// Strong-formulation episode for a fixed signal atom.
///
/// The observation follows `dY = h(u, X) dt + dW`. At each dyadic time the
/// policy reads the posterior; inside a segment the posterior is the Bayes
/// update of the segment's starting state with the observation increment
/// accumulated so far.
pub fn simulate_closed_loop_with_signal<R: Rng + ?Sized>(
    mu0: &AtomicMeasure,
    policy: &dyn Policy,
    signal: usize,
    horizon: f64,
    dt: f64,
    rng: &mut R,
) -> Result<PathSample> {
    if signal >= mu0.len() {
        return Err(Error::Domain(format!("signal atom {signal} out of range")));
    }
    let per_segment = whole_steps(dyadic_step(policy.level()), dt, "control step")?;
    let steps = whole_steps(horizon, dt, "horizon")?;
    let h_table = drift_table(policy, mu0.atoms())?;
    let mut rec = PathRecorder::with_capacity(steps);
    let mut anchor = mu0.clone();
    let mut pi = mu0.clone();
    let (mut y, mut y_anchor, mut innovation) = (0.0, 0.0, 0.0);
    let mut u = policy.decide(0, &pi);
    let sd = dt.sqrt();
    for k in 0..steps {
        let offset = k % per_segment;
        if offset == 0 {
            anchor = pi.clone();
            y_anchor = y;
            u = policy.decide(k / per_segment, &pi);
        }
        rec.node(k as f64 * dt, y, innovation, &pi, u);
        let h = &h_table[u];
        let dw = sd * rng.sample::<f64, _>(StandardNormal);
        let dy = h[signal] * dt + dw;
        innovation += dy - pi.integrate_values(h) * dt;
        y += dy;
        rec.dw.push(dw);
        pi = bayes_update_h(&anchor, h, y - y_anchor, (offset + 1) as f64 * dt)?;
    }
    rec.node(steps as f64 * dt, y, innovation, &pi, u);
    Ok(rec.finish(mu0.atoms().clone(), dt, Some(signal), policy.actions()))
}

/// Slope `b` of a linear-in-signal action `h(v, x) = b x`.
pub fn linear_slope(v: &ActionVec) -> Result<f64> {
    if v.coeffs()[1..].iter().any(|&c| c != 0.0) {
        return Err(Error::Precondition(
            "linear reduction needs an action with only a first-order coefficient".into(),
        ));
    }
    Ok(v.coeffs()[0])
}

/// Posterior for `h(v, x) = b x` written through the sufficient statistics
/// `Υ_t = b y` and `⟨Υ⟩_t = b² t`:
///
/// ```text
/// θ_i' ∝ θ_i exp(x_i Υ − ½ x_i² ⟨Υ⟩)
/// ```
pub fn linear_reduction_filter(mu0: &AtomicMeasure, b: f64, y: f64, t: f64) -> Result<AtomicMeasure> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("observation window must be >= 0, got {t}")));
    }
    let upsilon = b * y;
    let bracket = b * b * t;
    if upsilon == 0.0 && bracket == 0.0 {
        return Ok(mu0.clone());
    }
    let log_w: Vec<f64> = mu0
        .atoms()
        .as_slice()
        .iter()
        .zip(mu0.weights())
        .map(|(&x, &w)| {
            if w > 0.0 {
                w.ln() + x * upsilon - 0.5 * x * x * bracket
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let mut weights = raw;
    normalize_with_floor(&mut weights)?;
    Ok(AtomicMeasure::from_parts_unchecked(mu0.atoms().clone(), weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ConstantPolicy;
    use crate::measures::bayes_update;
    use crate::rng::path_rng;
    use proptest::prelude::*;

    fn atoms(xs: &[f64]) -> AtomSet {
        AtomSet::new(xs.to_vec()).unwrap()
    }

    fn id(radius: f64) -> ActionVec {
        ActionVec::new(vec![1.0], radius, radius * radius).unwrap()
    }

    #[test]
    fn diffusion_examples() {
        let xs = atoms(&[0.0, 1.0]);
        let half = AtomicMeasure::new(xs.clone(), vec![0.5, 0.5]).unwrap();
        assert_eq!(diffusion_coeff(&half, &id(2.0)).unwrap(), vec![-0.25, 0.25]);
        let dirac = AtomicMeasure::dirac(xs, 1).unwrap();
        assert!(diffusion_coeff(&dirac, &id(2.0)).unwrap().iter().all(|&s| s == 0.0));
        let flat = ActionVec::new(vec![0.0, 1.0], 2.0, 16.0).unwrap();
        let sym = AtomicMeasure::uniform(atoms(&[-1.0, 1.0]));
        assert!(diffusion_coeff(&sym, &flat).unwrap().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn euler_examples() {
        let xs = atoms(&[0.0, 1.0]);
        let half = AtomicMeasure::new(xs.clone(), vec![0.5, 0.5]).unwrap();
        assert_eq!(euler_step(&half, &id(2.0), 0.0, 0.01).unwrap(), half);
        let next = euler_step(&half, &id(2.0), 0.2, 0.01).unwrap();
        assert!((next.weights()[0] - 0.45).abs() < 1e-15);
        assert!((next.weights()[1] - 0.55).abs() < 1e-15);
        let dirac = AtomicMeasure::dirac(xs, 0).unwrap();
        assert_eq!(euler_step(&dirac, &id(2.0), 3.0, 0.01).unwrap(), dirac);
        assert!(euler_step(&half, &id(2.0), 0.1, 0.0).is_err());
    }

    #[test]
    fn euler_clips_overshoot() {
        let half = AtomicMeasure::uniform(atoms(&[0.0, 1.0]));
        let next = euler_step(&half, &id(2.0), 10.0, 0.01).unwrap();
        assert_eq!(next.weights(), &[0.0, 1.0]);
    }

    #[test]
    fn exact_transition_degenerate_cases() {
        let mut rng = path_rng(1, 0);
        let xs = atoms(&[-1.0, 0.5, 1.0]);
        let dirac = AtomicMeasure::dirac(xs.clone(), 1).unwrap();
        let uni = AtomicMeasure::uniform(xs);
        let zero = ActionVec::zero(2, 2.0, 1.0).unwrap();
        for _ in 0..50 {
            assert_eq!(exact_transition_sample(&dirac, &id(2.0), 0.5, &mut rng).unwrap(), dirac);
            assert_eq!(exact_transition_sample(&uni, &zero, 0.5, &mut rng).unwrap(), uni);
        }
    }

    #[test]
    fn transition_expectation_martingale() {
        let quad = GaussHermite::new(20).unwrap();
        let mu = AtomicMeasure::uniform(atoms(&[-1.0, 1.0]));
        let one = transition_expectation(&mu, &id(2.0), 0.1, |_| 1.0, &quad).unwrap();
        assert!((one - 1.0).abs() < 1e-14);
        let xs = atoms(&[-1.0, 0.3, 1.0]);
        let mu = AtomicMeasure::new(xs, vec![0.2, 0.5, 0.3]).unwrap();
        let v = ActionVec::new(vec![0.6, -0.3], 2.0, 4.0).unwrap();
        for delta in [0.05, 0.1, 0.25] {
            for f in [|x: f64| x, |x: f64| x * x] {
                let lhs = transition_expectation(&mu, &v, delta, |s| s.integrate(f), &quad).unwrap();
                assert!((lhs - mu.integrate(f)).abs() < 1e-8, "delta {delta}");
            }
        }
    }

    #[test]
    fn weak_path_trivial_cases() {
        let xs = atoms(&[-1.0, 0.0, 1.0]);
        let mu = AtomicMeasure::new(xs.clone(), vec![0.3, 0.3, 0.4]).unwrap();
        let zero = ConstantPolicy::new(2, ActionVec::zero(1, 2.0, 4.0).unwrap());
        let path = simulate_weak_path(&mu, &zero, 1.0, 0.05, &mut path_rng(3, 0)).unwrap();
        assert_eq!(path.len(), 21);
        assert!(path.xi.iter().all(|w| w == mu.weights()));
        let dirac = AtomicMeasure::dirac(xs, 2).unwrap();
        let act = ConstantPolicy::new(2, id(2.0));
        let path = simulate_weak_path(&dirac, &act, 1.0, 0.05, &mut path_rng(3, 1)).unwrap();
        assert!(path.xi.iter().all(|w| w == dirac.weights()));
        assert!(matches!(
            simulate_weak_path(&mu, &act, 1.0, 0.1, &mut path_rng(3, 2)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn closed_loop_zero_action_is_frozen() {
        let xs = atoms(&[-1.0, 1.0]);
        let mu = AtomicMeasure::new(xs, vec![0.3, 0.7]).unwrap();
        let zero = ConstantPolicy::new(2, ActionVec::zero(1, 2.0, 4.0).unwrap());
        let path = simulate_closed_loop(&mu, &zero, 2.0, 0.125, &mut path_rng(9, 0)).unwrap();
        assert!(path.xi.iter().all(|w| w == mu.weights()));
        let w: Vec<f64> = path.dw.iter().scan(0.0, |acc, d| {
            *acc += d;
            Some(*acc)
        }).collect();
        for (a, b) in path.y[1..].iter().zip(&w) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_loop_observation_follows_signal() {
        let xs = atoms(&[-1.0, 0.5, 1.0]);
        let mu = AtomicMeasure::uniform(xs);
        let v = ActionVec::new(vec![1.0, 0.5], 2.0, 16.0).unwrap();
        let policy = ConstantPolicy::new(1, v.clone());
        let path = simulate_closed_loop(&mu, &policy, 1.0, 0.0625, &mut path_rng(5, 2)).unwrap();
        let x = mu.atoms().as_slice()[path.signal.unwrap()];
        let hx = v.eval_h(x).unwrap();
        assert_eq!(path.y[0], 0.0);
        assert_eq!(path.xi[0], mu.weights());
        for k in 0..path.dw.len() {
            let dy = path.y[k + 1] - path.y[k];
            assert!((dy - (hx * path.dt + path.dw[k])).abs() < 1e-12);
        }
        // the posterior at each node is the Bayes update of the prior on the full record
        for k in [3usize, 8, 16] {
            let direct = bayes_update(&mu, &v, path.y[k], path.times[k]).unwrap();
            for (a, b) in direct.weights().iter().zip(&path.xi[k]) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn path_csv_layout() {
        let mu = AtomicMeasure::uniform(atoms(&[-1.0, 1.0]));
        let policy = ConstantPolicy::new(0, id(2.0));
        let path = simulate_closed_loop(&mu, &policy, 1.0, 0.5, &mut path_rng(1, 1)).unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,Y,u_index,theta_1,theta_2"));
        assert!(lines.next().unwrap().starts_with("0,0,0,0.5,0.5"));
        assert_eq!(text.lines().count(), 4);
        let json: serde_json::Value = serde_json::from_str(&path.to_json().unwrap()).unwrap();
        assert_eq!(json["atoms"], serde_json::json!([-1.0, 1.0]));
    }

    #[test]
    fn linear_reduction_examples() {
        let xs = atoms(&[-1.0, 1.0]);
        let mu = AtomicMeasure::uniform(xs);
        assert_eq!(linear_reduction_filter(&mu, 0.0, 3.0, 2.0).unwrap(), mu);
        let post = linear_reduction_filter(&mu, 1.0, 1.0, 1.0).unwrap();
        assert!((post.weights()[1] - 0.88080).abs() < 1e-5);
        let quad = ActionVec::new(vec![0.5, 0.1], 2.0, 4.0).unwrap();
        assert!(matches!(linear_slope(&quad), Err(Error::Precondition(_))));
        assert_eq!(linear_slope(&id(2.0)).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn linear_reduction_matches_bayes(w in prop::collection::vec(0.01f64..1.0, 3), b in -1.5f64..1.5, y in -3.0f64..3.0, t in 0.0f64..2.0) {
            let xs = atoms(&[-0.9, 0.1, 0.8]);
            let mu = AtomicMeasure::from_unnormalized(xs, w).unwrap();
            let v = ActionVec::new(vec![b], 1.0, 4.0).unwrap();
            let lin = linear_reduction_filter(&mu, linear_slope(&v).unwrap(), y, t).unwrap();
            let bayes = bayes_update(&mu, &v, y, t).unwrap();
            for (a, c) in lin.weights().iter().zip(bayes.weights()) {
                prop_assert!((a - c).abs() <= 1e-12);
            }
        }

        #[test]
        fn euler_conserves_mass_and_support(w in prop::collection::vec(0.0f64..1.0, 4), zero in 0usize..4, dw in -0.3f64..0.3) {
            let mut w = w;
            w[zero] = 0.0;
            prop_assume!(w.iter().sum::<f64>() > 1e-3);
            let mu = AtomicMeasure::from_unnormalized(atoms(&[-1.0, -0.3, 0.4, 1.0]), w).unwrap();
            let v = ActionVec::new(vec![0.6, 0.3], 1.5, 4.0).unwrap();
            let next = euler_step(&mu, &v, dw, 0.01).unwrap();
            prop_assert!((next.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(crate::measures::support_leq(&next, &mu));
            let s: f64 = diffusion_coeff(&mu, &v).unwrap().iter().sum();
            prop_assert!(s.abs() < 1e-15);
        }
    }
}
