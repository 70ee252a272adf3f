//! Atomic probability measures on a fixed finite support.
//!
//! Every experiment fixes one [`AtomSet`] `x_1 < .. < x_N` inside `(-R, R)`;
//! measures only carry simplex weights over it and never gain atoms. This
//! module also holds the 1-D Wasserstein distance, the Bayes update under a
//! constant action, the support order and the simplex lattice used by the
//! dynamic-programming solver.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::actions::ActionVec;
use crate::error::{Error, Result};

/// Tolerance on total mass.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Weights below this value are snapped to zero after renormalisation so the
/// support order stays exact.
pub const WEIGHT_FLOOR: f64 = 1e-15;

/// Default cap on the number of simplex lattice nodes.
pub const DEFAULT_NODE_CAP: usize = 5_000_000;

/// Strictly increasing atom locations shared by every measure of an experiment.
#[derive(Clone, PartialEq)]
pub struct AtomSet(Arc<[f64]>);

impl AtomSet {
    pub fn new(atoms: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Domain("atom set must not be empty".into()));
        }
        if atoms.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("atoms must be finite".into()));
        }
        if atoms.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("atoms must be strictly increasing".into()));
        }
        Ok(Self(atoms.into()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Largest `|x_i|`.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m: f64, x| m.max(x.abs()))
    }

    /// `x_N − x_1`.
    pub fn span(&self) -> f64 {
        self.0[self.0.len() - 1] - self.0[0]
    }

    /// Fails unless every atom lies strictly inside `(-radius, radius)`.
    pub fn check_radius(&self, radius: f64) -> Result<()> {
        if self.max_abs() >= radius {
            return Err(Error::Domain(format!(
                "atoms must lie in (-R, R) with R = {radius}, found |x| = {}",
                self.max_abs()
            )));
        }
        Ok(())
    }
}

impl fmt::Debug for AtomSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

/// Probability measure `Σ θ_i δ_{x_i}` on a shared atom set.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicMeasure {
    atoms: AtomSet,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MeasureJson {
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl AtomicMeasure {
    pub fn new(atoms: AtomSet, weights: Vec<f64>) -> Result<Self> {
        validate_weights(&weights, atoms.len())?;
        Ok(Self { atoms, weights })
    }

    /// Normalises non-negative raw weights.
    pub fn from_unnormalized(atoms: AtomSet, raw: Vec<f64>) -> Result<Self> {
        if raw.len() != atoms.len() {
            return Err(Error::Domain(format!(
                "{} weights for {} atoms",
                raw.len(),
                atoms.len()
            )));
        }
        if raw.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Domain("weights must be finite and non-negative".into()));
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::Degenerate("weights have zero total mass".into()));
        }
        Ok(Self {
            atoms,
            weights: raw.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn dirac(atoms: AtomSet, index: usize) -> Result<Self> {
        if index >= atoms.len() {
            return Err(Error::Domain(format!("atom index {index} out of range")));
        }
        let mut weights = vec![0.0; atoms.len()];
        weights[index] = 1.0;
        Ok(Self { atoms, weights })
    }

    pub fn uniform(atoms: AtomSet) -> Self {
        let n = atoms.len();
        Self {
            atoms,
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub(crate) fn from_parts_unchecked(atoms: AtomSet, weights: Vec<f64>) -> Self {
        Self { atoms, weights }
    }

    pub fn atoms(&self) -> &AtomSet {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Index of the carrying atom when the measure is a Dirac mass.
    pub fn dirac_index(&self) -> Option<usize> {
        let mut support = self.weights.iter().enumerate().filter(|(_, &w)| w > 0.0);
        match (support.next(), support.next()) {
            (Some((i, _)), None) => Some(i),
            _ => None,
        }
    }

    pub fn support_size(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }

    /// `μ(f) = Σ θ_i f(x_i)`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.atoms
            .as_slice()
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// `Σ θ_i v_i` for values given per atom.
    pub fn integrate_values(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    pub fn mean(&self) -> f64 {
        self.integrate(|x| x)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.integrate(|x| (x - m) * (x - m))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&MeasureJson {
            atoms: self.atoms.as_slice().to_vec(),
            weights: self.weights.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: MeasureJson = serde_json::from_str(text)?;
        Self::new(AtomSet::new(raw.atoms)?, raw.weights)
    }
}

fn validate_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::Domain(format!("{} weights for {n} atoms", weights.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Domain("weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::Domain(format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// Renormalises in place, snaps tiny weights to zero and renormalises again.
pub(crate) fn normalize_with_floor(weights: &mut [f64]) -> Result<()> {
    for _ in 0..2 {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Degenerate(format!("cannot normalise mass {total}")));
        }
        let mut snapped = false;
        for w in weights.iter_mut() {
            *w /= total;
            if *w < WEIGHT_FLOOR && *w != 0.0 {
                *w = 0.0;
                snapped = true;
            }
        }
        if !snapped {
            break;
        }
    }
    Ok(())
}

/// `μ(f)`.
pub fn integrate(mu: &AtomicMeasure, f: impl Fn(f64) -> f64) -> f64 {
    mu.integrate(f)
}

/// Wasserstein-1 distance via the area between the two CDFs on the sorted
/// union of atoms.
pub fn wasserstein1(mu: &AtomicMeasure, nu: &AtomicMeasure) -> f64 {
    if mu.atoms == nu.atoms {
        let xs = mu.atoms.as_slice();
        let (mut fm, mut fn_) = (0.0, 0.0);
        let mut total = 0.0;
        for i in 0..xs.len() - 1 {
            fm += mu.weights[i];
            fn_ += nu.weights[i];
            total += (fm - fn_).abs() * (xs[i + 1] - xs[i]);
        }
        return total;
    }
    let mut points: Vec<(f64, f64)> = mu
        .atoms
        .as_slice()
        .iter()
        .zip(&mu.weights)
        .map(|(&x, &w)| (x, w))
        .chain(
            nu.atoms
                .as_slice()
                .iter()
                .zip(&nu.weights)
                .map(|(&x, &w)| (x, -w)),
        )
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut diff = 0.0;
    let mut total = 0.0;
    for pair in points.windows(2) {
        diff += pair[0].1;
        total += diff.abs() * (pair[1].0 - pair[0].0);
    }
    total
}

/// Posterior after observing `y` over a window of length `t` under the
/// constant action `v`:
///
/// ```text
/// θ_i' ∝ θ_i · exp(h_i y − ½ h_i² t),   h_i = h(v, x_i)
/// ```
pub fn bayes_update(mu: &AtomicMeasure, v: &ActionVec, y: f64, t: f64) -> Result<AtomicMeasure> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("observation window must be >= 0, got {t}")));
    }
    let h = v.h_values(mu.atoms.as_slice())?;
    bayes_update_h(mu, &h, y, t)
}

/// [`bayes_update`] with precomputed drift values per atom.
pub fn bayes_update_h(mu: &AtomicMeasure, h: &[f64], y: f64, t: f64) -> Result<AtomicMeasure> {
    let exponents: Vec<f64> = h.iter().map(|&hi| hi * y - 0.5 * hi * hi * t).collect();
    let max = mu
        .weights
        .iter()
        .zip(&exponents)
        .filter(|(&w, _)| w > 0.0)
        .map(|(_, &e)| e)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numeric(format!("non-finite likelihood exponent {max}")));
    }
    if mu
        .weights
        .iter()
        .zip(&exponents)
        .all(|(&w, &e)| w == 0.0 || e == max)
    {
        return Ok(mu.clone());
    }
    let mut weights: Vec<f64> = mu
        .weights
        .iter()
        .zip(&exponents)
        .map(|(&w, &e)| if w > 0.0 { w * (e - max).exp() } else { 0.0 })
        .collect();
    normalize_with_floor(&mut weights)?;
    Ok(AtomicMeasure::from_parts_unchecked(mu.atoms.clone(), weights))
}

/// Support order: `μ ⪯ ν` iff `supp(μ) ⊆ supp(ν)`.
pub fn support_leq(mu: &AtomicMeasure, nu: &AtomicMeasure) -> bool {
    if mu.atoms == nu.atoms {
        return mu
            .weights
            .iter()
            .zip(&nu.weights)
            .all(|(&a, &b)| a == 0.0 || b > 0.0);
    }
    mu.atoms
        .as_slice()
        .iter()
        .zip(&mu.weights)
        .filter(|(_, &w)| w > 0.0)
        .all(|(&x, _)| {
            nu.atoms
                .as_slice()
                .iter()
                .position(|&y| y == x)
                .is_some_and(|j| nu.weights[j] > 0.0)
        })
}

/// Lattice `{k / m : k ∈ ℕ^N, Σk = m}` on the weight simplex.
///
/// Nodes are ordered lexicographically with the first count descending, so
/// for two atoms and `m = 2` the order is `(1,0), (½,½), (0,1)`.
#[derive(Debug, Clone)]
pub struct SimplexGrid {
    atoms: AtomSet,
    resolution: u32,
    nodes: Vec<Vec<u32>>,
    // binom[n][k] for n <= m + N, k <= N
    binom: Vec<Vec<u64>>,
}

/// One vertex of an interpolation stencil.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StencilPoint {
    pub node: usize,
    pub weight: f64,
}

fn binomial_table(max_n: usize, max_k: usize) -> Vec<Vec<u64>> {
    let mut table = vec![vec![0u64; max_k + 1]; max_n + 1];
    for n in 0..=max_n {
        table[n][0] = 1;
        for k in 1..=max_k.min(n) {
            table[n][k] = table[n - 1][k - 1].saturating_add(if k < n { table[n - 1][k] } else { 0 });
        }
    }
    table
}

/// Number of lattice nodes, `C(m + N − 1, N − 1)`, saturating.
pub fn simplex_node_count(n_atoms: usize, m: u32) -> u64 {
    let (n, k) = (m as u64 + n_atoms as u64 - 1, n_atoms as u64 - 1);
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Builds the simplex lattice of resolution `m`, refusing grids larger than `cap` nodes.
pub fn make_simplex_grid(atoms: AtomSet, m: u32, cap: usize) -> Result<SimplexGrid> {
    if m == 0 {
        return Err(Error::Config("simplex resolution must be at least 1".into()));
    }
    let n = atoms.len();
    let count = simplex_node_count(n, m);
    if count > cap as u64 {
        return Err(Error::Resource(format!(
            "simplex grid with N = {n}, m = {m} has {count} nodes (cap {cap})"
        )));
    }
    let mut nodes = Vec::with_capacity(count as usize);
    let mut current = vec![0u32; n];
    enumerate_compositions(&mut current, 0, m, &mut nodes);
    Ok(SimplexGrid {
        atoms,
        resolution: m,
        nodes,
        binom: binomial_table(m as usize + n, n),
    })
}

fn enumerate_compositions(current: &mut [u32], pos: usize, remaining: u32, out: &mut Vec<Vec<u32>>) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(current.to_vec());
        return;
    }
    for k in (0..=remaining).rev() {
        current[pos] = k;
        enumerate_compositions(current, pos + 1, remaining - k, out);
    }
}

impl SimplexGrid {
    pub fn atoms(&self) -> &AtomSet {
        &self.atoms
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn counts(&self, index: usize) -> &[u32] {
        &self.nodes[index]
    }

    pub fn node_weights(&self, index: usize) -> Vec<f64> {
        let m = self.resolution as f64;
        self.nodes[index].iter().map(|&k| k as f64 / m).collect()
    }

    pub fn node_measure(&self, index: usize) -> AtomicMeasure {
        AtomicMeasure::from_parts_unchecked(self.atoms.clone(), self.node_weights(index))
    }

    /// Position of a count vector in the lattice order.
    pub fn index_of(&self, counts: &[u32]) -> Option<usize> {
        let n = self.atoms.len();
        if counts.len() != n || counts.iter().map(|&k| k as u64).sum::<u64>() != self.resolution as u64 {
            return None;
        }
        let mut rank: u64 = 0;
        let mut remaining = self.resolution as usize;
        for (i, &k) in counts.iter().enumerate().take(n - 1) {
            let k = k as usize;
            let parts = n - i;
            if k < remaining {
                rank += self.binom[remaining - k - 1 + parts - 1][parts - 1];
            }
            remaining -= k;
        }
        Some(rank as usize)
    }

    /// Lattice node of the Dirac mass at atom `i`.
    pub fn vertex_index(&self, atom: usize) -> usize {
        let mut counts = vec![0; self.atoms.len()];
        counts[atom] = self.resolution;
        self.index_of(&counts).expect("vertex is always a lattice node")
    }

    pub fn is_vertex(&self, index: usize) -> bool {
        self.nodes[index].iter().filter(|&&k| k > 0).count() == 1
    }

    /// All counts positive.
    pub fn is_interior(&self, index: usize) -> bool {
        self.nodes[index].iter().all(|&k| k > 0)
    }

    /// Wasserstein-1 diameter of a lattice cell: `(x_N − x_1) / m`.
    pub fn cell_diameter(&self) -> f64 {
        self.atoms.span() / self.resolution as f64
    }

    /// Scaled tail sums `y_i = m Σ_{j≥i} θ_j` for `i = 1..N−1`, clamped to the
    /// ordered box `m ≥ y_1 ≥ .. ≥ y_{N−1} ≥ 0` and snapped to integers
    /// within 1e-9.
    fn tail_coordinates(&self, weights: &[f64]) -> Vec<f64> {
        let n = weights.len();
        let m = self.resolution as f64;
        let mut y = vec![0.0; n - 1];
        let mut acc = 0.0;
        for i in (1..n).rev() {
            acc += weights[i];
            y[i - 1] = acc * m;
        }
        let mut upper = m;
        for value in y.iter_mut() {
            let rounded = value.round();
            if (*value - rounded).abs() < 1e-9 {
                *value = rounded;
            }
            *value = value.clamp(0.0, upper);
            upper = *value;
        }
        y
    }

    fn counts_from_tail(&self, y: &[i64]) -> Vec<u32> {
        let n = y.len() + 1;
        let mut counts = Vec::with_capacity(n);
        counts.push((self.resolution as i64 - y.first().copied().unwrap_or(0)) as u32);
        for i in 1..n {
            let next = if i < n - 1 { y[i] } else { 0 };
            counts.push((y[i - 1] - next) as u32);
        }
        counts
    }

    /// Nearest lattice node in Wasserstein-1 distance.
    ///
    /// On a line, `W1` between two measures on the shared atoms is a weighted
    /// ℓ¹ distance between their tail coordinates, so rounding each
    /// coordinate (which keeps the ordering) gives the exact minimiser. Ties
    /// at one half round away from zero.
    pub fn nearest_node(&self, mu: &AtomicMeasure) -> usize {
        if self.atoms.len() == 1 {
            return 0;
        }
        let y: Vec<i64> = self
            .tail_coordinates(mu.weights())
            .iter()
            .map(|v| v.round() as i64)
            .collect();
        self.index_of(&self.counts_from_tail(&y))
            .expect("rounded tail coordinates stay on the lattice")
    }

    /// Barycentric stencil of the Freudenthal (Kuhn) simplex containing `mu`.
    /// Zero-weight vertices are dropped; a lattice node returns itself with
    /// weight one.
    pub fn stencil(&self, weights: &[f64]) -> Vec<StencilPoint> {
        let n = self.atoms.len();
        if n == 1 {
            return vec![StencilPoint { node: 0, weight: 1.0 }];
        }
        let y = self.tail_coordinates(weights);
        let base: Vec<i64> = y.iter().map(|v| v.floor() as i64).collect();
        let frac: Vec<f64> = y.iter().zip(&base).map(|(v, b)| v - *b as f64).collect();
        let mut order: Vec<usize> = (0..n - 1).collect();
        order.sort_by(|&a, &b| frac[b].total_cmp(&frac[a]).then(a.cmp(&b)));

        let mut out = Vec::with_capacity(n);
        let mut vertex = base;
        let push = |vertex: &[i64], weight: f64, out: &mut Vec<StencilPoint>| {
            if weight > 0.0 {
                let counts = self.counts_from_tail(vertex);
                let node = self.index_of(&counts).expect("Freudenthal vertex lies on the lattice");
                out.push(StencilPoint { node, weight });
            }
        };
        push(&vertex, 1.0 - frac[order[0]], &mut out);
        for k in 0..n - 1 {
            vertex[order[k]] += 1;
            let next = if k + 2 < n { frac[order[k + 1]] } else { 0.0 };
            push(&vertex, frac[order[k]] - next, &mut out);
        }
        out
    }
}

/// Continuous priors that can be discretised onto atoms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ContinuousPrior {
    Uniform { low: f64, high: f64 },
    Triangular { low: f64, mode: f64, high: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtomPlacement {
    /// Atoms at the mid-quantiles `(i + ½)/N`, equal weights.
    #[default]
    Quantile,
    /// Atoms at the midpoints of equal-width cells, weights from the CDF.
    Uniform,
}

impl ContinuousPrior {
    fn bounds(&self) -> (f64, f64) {
        match *self {
            Self::Uniform { low, high } | Self::Triangular { low, high, .. } => (low, high),
        }
    }

    fn validate(&self) -> Result<()> {
        let (low, high) = self.bounds();
        if !(low < high && low.is_finite() && high.is_finite()) {
            return Err(Error::Config(format!("prior bounds [{low}, {high}] invalid")));
        }
        if let Self::Triangular { mode, .. } = *self {
            if !(low..=high).contains(&mode) {
                return Err(Error::Config(format!("triangular mode {mode} outside bounds")));
            }
        }
        Ok(())
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Self::Uniform { low, high } => ((x - low) / (high - low)).clamp(0.0, 1.0),
            Self::Triangular { low, mode, high } => {
                if x <= low {
                    0.0
                } else if x >= high {
                    1.0
                } else if x <= mode {
                    (x - low).powi(2) / ((high - low) * (mode - low))
                } else {
                    1.0 - (high - x).powi(2) / ((high - low) * (high - mode))
                }
            }
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            Self::Uniform { low, high } => low + p * (high - low),
            Self::Triangular { low, mode, high } => {
                let split = (mode - low) / (high - low);
                if p <= split {
                    low + (p * (high - low) * (mode - low)).sqrt()
                } else {
                    high - ((1.0 - p) * (high - low) * (high - mode)).sqrt()
                }
            }
        }
    }
}

/// Approximates a continuous prior by `n` atoms.
pub fn discretize_prior(prior: &ContinuousPrior, n: usize, placement: AtomPlacement) -> Result<AtomicMeasure> {
    prior.validate()?;
    if n == 0 {
        return Err(Error::Config("need at least one atom".into()));
    }
    let (low, high) = prior.bounds();
    let (atoms, weights): (Vec<f64>, Vec<f64>) = match placement {
        AtomPlacement::Quantile => (0..n)
            .map(|i| (prior.quantile((i as f64 + 0.5) / n as f64), 1.0 / n as f64))
            .unzip(),
        AtomPlacement::Uniform => {
            let width = (high - low) / n as f64;
            (0..n)
                .map(|i| {
                    let a = low + i as f64 * width;
                    (a + 0.5 * width, prior.cdf(a + width) - prior.cdf(a))
                })
                .unzip()
        }
    };
    AtomicMeasure::from_unnormalized(AtomSet::new(atoms)?, weights)
}
