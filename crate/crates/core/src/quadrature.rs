//! Gauss–Hermite rules for expectations under a standard normal.

use crate::error::{Error, Result};

/// Nodes `z_i` and weights `w_i` with `E[g(Z)] ≈ Σ w_i g(z_i)`, `Z ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Builds an `n`-point rule by Newton iteration on the orthonormal
    /// Hermite recurrence, then rescales from the `e^{-x²}` weight to the
    /// standard normal density.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("quadrature order must be at least 1".into()));
        }
        let pim4 = std::f64::consts::PI.powf(-0.25);
        let nf = n as f64;
        let mut x_phys = vec![0.0; n];
        let mut w_phys = vec![0.0; n];
        let m = n.div_ceil(2);
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x_phys[0],
                3 => 1.91 * z - 0.91 * x_phys[1],
                _ => 2.0 * z - x_phys[i - 2],
            };
            let mut pp = 0.0;
            let mut converged = false;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let step = p1 / pp;
                z -= step;
                if step.abs() <= 1e-15 * z.abs().max(1.0) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::Numeric(format!("Gauss-Hermite root {i} of order {n} did not converge")));
            }
            x_phys[i] = z;
            x_phys[n - 1 - i] = -z;
            w_phys[i] = 2.0 / (pp * pp);
            w_phys[n - 1 - i] = w_phys[i];
        }
        if n % 2 == 1 {
            x_phys[m - 1] = 0.0;
        }
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let mut pairs: Vec<(f64, f64)> = x_phys
            .iter()
            .zip(&w_phys)
            .map(|(&x, &w)| (x * std::f64::consts::SQRT_2, w / sqrt_pi))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Normalise so constants integrate exactly.
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        let (nodes, weights) = pairs.into_iter().map(|(x, w)| (x, w / total)).unzip();
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn expectation(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.iter().map(|(z, w)| w * g(z)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_moments() {
        for n in [1usize, 2, 5, 10, 20, 40] {
            let rule = GaussHermite::new(n).unwrap();
            assert_eq!(rule.len(), n);
            assert!((rule.expectation(|_| 1.0) - 1.0).abs() < 1e-14);
            assert!(rule.expectation(|z| z).abs() < 1e-13);
            if n >= 2 {
                assert!((rule.expectation(|z| z * z) - 1.0).abs() < 1e-12, "n = {n}");
            }
            if n >= 3 {
                assert!((rule.expectation(|z| z.powi(4)) - 3.0).abs() < 1e-11, "n = {n}");
            }
            if n >= 6 {
                assert!((rule.expectation(|z| z.powi(10)) - 945.0).abs() < 1e-8, "n = {n}");
            }
            assert!(rule.weights().iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn known_two_point_rule() {
        let rule = GaussHermite::new(2).unwrap();
        assert!((rule.nodes()[0] + 1.0).abs() < 1e-14);
        assert!((rule.nodes()[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lognormal_mean() {
        let rule = GaussHermite::new(20).unwrap();
        assert!((rule.expectation(|z| (0.5 * z).exp()) - 0.125f64.exp()).abs() < 1e-13);
    }

    #[test]
    fn zero_order_rejected() {
        assert!(GaussHermite::new(0).is_err());
    }
}
