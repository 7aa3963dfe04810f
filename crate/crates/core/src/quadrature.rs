//! Gauss–Hermite quadrature.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub const DEFAULT_ORDER: usize = 20;

/// Nodes and weights for `∫ e^{-x²} g(x) dx ≈ Σ wₖ g(xₖ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Golub–Welsch: nodes are the eigenvalues of the symmetric Jacobi matrix of
/// the physicists' Hermite polynomials, weights are `√π` times the squared
/// first eigenvector components.
pub fn gh_rule(order: usize) -> Result<QuadratureRule> {
    if !(1..=100).contains(&order) {
        return Err(Error::QuadratureOrder(order));
    }
    let mut jacobi = DMatrix::<f64>::zeros(order, order);
    for k in 1..order {
        let b = (k as f64 / 2.0).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|k| (eig.eigenvalues[k], sqrt_pi * eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Enforce exact symmetry about zero.
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    for k in 0..order {
        let j = order - 1 - k;
        nodes[k] = 0.5 * (pairs[k].0 - pairs[j].0);
        weights[k] = 0.5 * (pairs[k].1 + pairs[j].1);
    }
    if order % 2 == 1 {
        nodes[order / 2] = 0.0;
    }
    Ok(QuadratureRule { nodes, weights })
}

impl QuadratureRule {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Points `fₖ = m + √(2v) xₖ` and probability weights `wₖ/√π` for
    /// integrating against `N(f | m, v)`.
    pub fn gaussian_points(&self, m: f64, v: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let scale = (2.0 * v).sqrt();
        let norm = 1.0 / std::f64::consts::PI.sqrt();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (m + scale * x, w * norm))
    }

    /// `E_{N(f | m, v)}[g(f)]`.
    pub fn expect(&self, m: f64, v: f64, mut g: impl FnMut(f64) -> f64) -> f64 {
        self.gaussian_points(m, v).map(|(f, w)| w * g(f)).sum()
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        gh_rule(DEFAULT_ORDER).expect("default order is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn order_one() {
        let r = gh_rule(1).unwrap();
        assert_eq!(r.nodes(), &[0.0]);
        assert_relative_eq!(r.weights()[0], std::f64::consts::PI.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn order_bounds() {
        assert!(gh_rule(0).is_err());
        assert!(gh_rule(101).is_err());
        assert!(gh_rule(100).is_ok());
    }

    #[test]
    fn weights_sum_and_symmetry() {
        for order in [2, 5, 20, 61, 100] {
            let r = gh_rule(order).unwrap();
            let sum: f64 = r.weights().iter().sum();
            assert_relative_eq!(sum, std::f64::consts::PI.sqrt(), epsilon = 1e-13);
            for k in 0..order {
                assert_eq!(r.nodes()[k], -r.nodes()[order - 1 - k]);
            }
        }
    }

    #[test]
    fn gaussian_moments() {
        let r = gh_rule(20).unwrap();
        assert_relative_eq!(r.expect(3.0, 4.0, |f| f), 3.0, epsilon = 1e-12);
        assert_relative_eq!(r.expect(0.0, 1.0, |f| f * f), 1.0, epsilon = 1e-12);
    }

    /// `∫ x^k e^{-x²} dx = Γ((k+1)/2)` for even `k`, zero for odd `k`.
    #[test]
    fn exact_for_polynomials_up_to_degree_2n_minus_1() {
        for order in [1usize, 3, 8, 15] {
            let r = gh_rule(order).unwrap();
            for k in 0..(2 * order) {
                let terms: Vec<f64> = r
                    .nodes()
                    .iter()
                    .zip(r.weights())
                    .map(|(x, w)| w * x.powi(k as i32))
                    .collect();
                let got: f64 = terms.iter().sum();
                let scale: f64 = terms.iter().map(|x| x.abs()).sum();
                let want = if k % 2 == 1 {
                    0.0
                } else {
                    statrs::function::gamma::gamma((k as f64 + 1.0) / 2.0)
                };
                assert!(
                    (got - want).abs() <= 1e-10 * scale.max(1.0),
                    "order {order}, k {k}: {got} vs {want}"
                );
            }
        }
    }
}
