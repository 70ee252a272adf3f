//! Polynomial drift shapes and the finite candidate grids used in place of
//! the full action ellipsoid.
//!
//! An action is a truncated coefficient sequence `v = (v_1, .., v_d)` acting on
//! the signal through
//!
//! ```text
//! h(v, x) = Σ_{i=1..d} v_i x^i
//! ```
//!
//! and constrained to the weighted ℓ² ellipsoid `Σ (R^i v_i)² ≤ K`, where `R`
//! bounds the support of the prior. The constant term is absent, so
//! `h(v, 0) = 0` for every action.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed on the ellipsoid constraint.
pub const FEASIBILITY_SLACK: f64 = 1e-12;

/// Truncated polynomial action inside the budget ellipsoid.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionVec {
    coeffs: Vec<f64>,
    radius: f64,
    budget: f64,
}

impl ActionVec {
    /// Builds an action, rejecting coefficient vectors outside the ellipsoid.
    pub fn new(coeffs: Vec<f64>, radius: f64, budget: f64) -> Result<Self> {
        check_geometry(coeffs.len(), radius, budget)?;
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("action coefficients must be finite".into()));
        }
        let action = Self {
            coeffs,
            radius,
            budget,
        };
        let effort = action.effort();
        if effort > budget + FEASIBILITY_SLACK {
            return Err(Error::Domain(format!(
                "action outside ellipsoid: Σ(R^i v_i)² = {effort} > K = {budget}"
            )));
        }
        Ok(action)
    }

    /// The zero action of truncation order `d`.
    pub fn zero(d: usize, radius: f64, budget: f64) -> Result<Self> {
        Self::new(vec![0.0; d], radius, budget)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    /// Weighted squared norm `Σ (R^i v_i)²`.
    pub fn effort(&self) -> f64 {
        weighted_norm_sq(&self.coeffs, self.radius)
    }

    /// Evaluates `h(v, x)`. Points outside `[-R, R]` are rejected.
    pub fn eval_h(&self, x: f64) -> Result<f64> {
        if !(x.abs() <= self.radius) {
            return Err(Error::Domain(format!(
                "|x| = {} exceeds support radius {}",
                x.abs(),
                self.radius
            )));
        }
        Ok(self.eval_unchecked(x))
    }

    /// Horner evaluation without the domain check. Returns exactly 0 at x = 0.
    pub(crate) fn eval_unchecked(&self, x: f64) -> f64 {
        let inner = self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c);
        inner * x
    }

    /// `h(v, x_i)` for every atom.
    pub fn h_values(&self, atoms: &[f64]) -> Result<Vec<f64>> {
        atoms.iter().map(|&x| self.eval_h(x)).collect()
    }

    /// Bound on `|∂_x h(v, x)|` over `|x| ≤ kappa`: `Σ i |v_i| kappa^{i-1}`.
    pub fn lipschitz_bound(&self, kappa: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| (i + 1) as f64 * c.abs() * kappa.powi(i as i32))
            .sum()
    }

    /// Keeps the first `d` coefficients (zero padding when `d` exceeds the order).
    pub fn truncated(&self, d: usize) -> Self {
        let mut coeffs: Vec<f64> = self.coeffs.iter().copied().take(d).collect();
        coeffs.resize(d.max(1), 0.0);
        Self {
            coeffs,
            radius: self.radius,
            budget: self.budget,
        }
    }
}

fn check_geometry(d: usize, radius: f64, budget: f64) -> Result<()> {
    if d == 0 {
        return Err(Error::Domain("truncation order must be at least 1".into()));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Domain(format!("support radius must be positive, got {radius}")));
    }
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(Error::Domain(format!("ellipsoid budget must be positive, got {budget}")));
    }
    Ok(())
}

fn weighted_norm_sq(coeffs: &[f64], radius: f64) -> f64 {
    let mut scale = 1.0;
    coeffs
        .iter()
        .map(|c| {
            scale *= radius;
            (scale * c).powi(2)
        })
        .sum()
}

/// Uniform bound on the series tail `|Σ_{i≥n} v_i x^i|` over the whole
/// ellipsoid and `|x| ≤ kappa`:
///
/// ```text
/// √K · q^n / √(1 − q²),  q = kappa / R
/// ```
pub fn tail_bound(radius: f64, budget: f64, kappa: f64, n: usize) -> Result<f64> {
    check_geometry(1, radius, budget)?;
    if n == 0 {
        return Err(Error::Domain("tail index must be at least 1".into()));
    }
    if !(kappa >= 0.0 && kappa < radius) {
        return Err(Error::Domain(format!(
            "tail bound needs 0 <= kappa < R, got kappa = {kappa}, R = {radius}"
        )));
    }
    let q = kappa / radius;
    Ok(budget.sqrt() * q.powi(n as i32) / (1.0 - q * q).sqrt())
}

/// Radially projects a raw coefficient vector onto the ellipsoid. Feasible
/// input is returned unchanged.
pub fn project_action(raw: &[f64], radius: f64, budget: f64) -> Result<ActionVec> {
    check_geometry(raw.len(), radius, budget)?;
    let norm = weighted_norm_sq(raw, radius);
    if norm <= budget + FEASIBILITY_SLACK {
        return ActionVec::new(raw.to_vec(), radius, budget);
    }
    let scale = (budget / norm).sqrt();
    ActionVec::new(raw.iter().map(|c| c * scale).collect(), radius, budget)
}

/// Per-coordinate levels: one list shared by every coordinate, or one list per
/// coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LevelSpec {
    Shared(Vec<f64>),
    PerCoordinate(Vec<Vec<f64>>),
}

/// Recipe for a finite action grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionGridSpec {
    #[serde(rename = "R")]
    pub radius: f64,
    #[serde(rename = "K")]
    pub budget: f64,
    pub d: usize,
    pub levels: LevelSpec,
    /// Multipliers applied to every raw candidate before projection.
    #[serde(default = "default_scales")]
    pub scales: Vec<f64>,
    /// Only vary one coordinate at a time instead of the full product.
    #[serde(default)]
    pub axes_only: bool,
}

fn default_scales() -> Vec<f64> {
    vec![1.0]
}

/// Non-empty, deduplicated list of feasible actions.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionGrid {
    candidates: Vec<ActionVec>,
    scheme: String,
}

#[derive(Serialize, Deserialize)]
struct ActionGridJson {
    #[serde(rename = "R")]
    radius: f64,
    #[serde(rename = "K")]
    budget: f64,
    d: usize,
    candidates: Vec<Vec<f64>>,
}

impl ActionGrid {
    /// Wraps an explicit candidate list. Duplicates are dropped, first
    /// occurrence wins.
    pub fn from_candidates(candidates: Vec<ActionVec>, scheme: impl Into<String>) -> Result<Self> {
        let first = candidates
            .first()
            .ok_or_else(|| Error::Config("action grid must not be empty".into()))?;
        let (d, radius, budget) = (first.order(), first.radius(), first.budget());
        let mut unique: Vec<ActionVec> = Vec::with_capacity(candidates.len());
        for c in candidates {
            if c.order() != d || c.radius() != radius || c.budget() != budget {
                return Err(Error::Config(
                    "action grid candidates must share order, R and K".into(),
                ));
            }
            if !unique.iter().any(|u| u.coeffs == c.coeffs) {
                unique.push(c);
            }
        }
        Ok(Self {
            candidates: unique,
            scheme: scheme.into(),
        })
    }

    pub fn singleton(action: ActionVec) -> Self {
        Self {
            candidates: vec![action],
            scheme: "singleton".into(),
        }
    }

    pub fn candidates(&self) -> &[ActionVec] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&ActionVec> {
        self.candidates.get(index)
    }

    pub fn scheme(&self) -> &str {
        &self.scheme
    }

    pub fn radius(&self) -> f64 {
        self.candidates[0].radius()
    }

    pub fn budget(&self) -> f64 {
        self.candidates[0].budget()
    }

    pub fn order(&self) -> usize {
        self.candidates[0].order()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ActionGridJson {
            radius: self.radius(),
            budget: self.budget(),
            d: self.order(),
            candidates: self.candidates.iter().map(|c| c.coeffs.clone()).collect(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: ActionGridJson = serde_json::from_str(text)?;
        let candidates = raw
            .candidates
            .into_iter()
            .map(|c| {
                if c.len() != raw.d {
                    return Err(Error::Config(format!(
                        "candidate has {} coefficients, expected d = {}",
                        c.len(),
                        raw.d
                    )));
                }
                ActionVec::new(c, raw.radius, raw.budget)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_candidates(candidates, "json")
    }
}

/// Enumerates a deterministic action grid from its recipe. Candidates outside
/// the ellipsoid are projected onto it.
pub fn make_action_grid(spec: &ActionGridSpec) -> Result<ActionGrid> {
    check_geometry(spec.d, spec.radius, spec.budget).map_err(|e| Error::Config(e.to_string()))?;
    let per_coord: Vec<Vec<f64>> = match &spec.levels {
        LevelSpec::Shared(levels) => vec![levels.clone(); spec.d],
        LevelSpec::PerCoordinate(levels) => {
            if levels.len() != spec.d {
                return Err(Error::Config(format!(
                    "{} level lists given for d = {}",
                    levels.len(),
                    spec.d
                )));
            }
            levels.clone()
        }
    };
    if per_coord.iter().any(|l| l.is_empty()) || spec.scales.is_empty() {
        return Err(Error::Config("action grid spec has an empty level or scale list".into()));
    }

    let raws: Vec<Vec<f64>> = if spec.axes_only {
        let mut raws = vec![vec![0.0; spec.d]];
        for (i, levels) in per_coord.iter().enumerate() {
            for &level in levels {
                let mut raw = vec![0.0; spec.d];
                raw[i] = level;
                raws.push(raw);
            }
        }
        raws
    } else {
        per_coord.iter().fold(vec![Vec::new()], |acc, levels| {
            acc.iter()
                .flat_map(|prefix| {
                    levels.iter().map(move |&l| {
                        let mut next = prefix.clone();
                        next.push(l);
                        next
                    })
                })
                .collect()
        })
    };

    let mut candidates = Vec::with_capacity(raws.len() * spec.scales.len());
    for raw in &raws {
        for &s in &spec.scales {
            // `+ 0.0` folds negative zero so deduplication is exact.
            let scaled: Vec<f64> = raw.iter().map(|c| c * s + 0.0).collect();
            candidates.push(project_action(&scaled, spec.radius, spec.budget)?);
        }
    }
    let scheme = if spec.axes_only { "axes" } else { "product" };
    ActionGrid::from_candidates(candidates, scheme)
}
