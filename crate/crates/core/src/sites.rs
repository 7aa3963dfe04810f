//! Per-datapoint Gaussian likelihood approximations.

use crate::error::{Error, Result};

/// Sites with `λ̃⁽²⁾` closer to zero than this are clamped to `-SITE_EPS`.
pub const SITE_EPS: f64 = 1e-8;

/// Natural parameters `(λ̃⁽¹⁾, λ̃⁽²⁾)` of `N(ỹᵢ | fᵢ, σ̃ᵢ²)` viewed as a
/// function of `fᵢ`: `λ̃⁽¹⁾ = ỹ/σ̃²`, `λ̃⁽²⁾ = -1/(2σ̃²)`.
///
/// `λ̃⁽²⁾ = 0` marks an uninformative site (infinite pseudo-variance).
#[derive(Debug, Clone, PartialEq)]
pub struct SiteParams {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
}

impl SiteParams {
    pub fn uninformative(n: usize) -> SiteParams {
        SiteParams {
            lambda1: vec![0.0; n],
            lambda2: vec![0.0; n],
        }
    }

    pub fn new(lambda1: Vec<f64>, lambda2: Vec<f64>) -> Result<SiteParams> {
        if lambda1.len() != lambda2.len() {
            return Err(Error::Dimension(format!(
                "lambda1 has {} entries, lambda2 has {}",
                lambda1.len(),
                lambda2.len()
            )));
        }
        for (i, (&l1, &l2)) in lambda1.iter().zip(&lambda2).enumerate() {
            if !l1.is_finite() || !l2.is_finite() || l2 > 0.0 || (l2 < 0.0 && l2 > -SITE_EPS) {
                return Err(Error::Numerical {
                    step: i,
                    reason: format!("invalid site ({l1}, {l2})"),
                });
            }
        }
        Ok(SiteParams { lambda1, lambda2 })
    }

    /// Sites equivalent to observing `y_tilde` with noise `sigma2_tilde`.
    pub fn from_pseudo(y_tilde: &[f64], sigma2_tilde: &[f64]) -> Result<SiteParams> {
        let lambda1 = y_tilde.iter().zip(sigma2_tilde).map(|(y, s)| y / s).collect();
        let lambda2 = sigma2_tilde.iter().map(|s| -0.5 / s).collect();
        SiteParams::new(lambda1, lambda2)
    }

    pub fn len(&self) -> usize {
        self.lambda1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda1.is_empty()
    }

    pub fn is_informative(&self, i: usize) -> bool {
        self.lambda2[i] < 0.0
    }

    /// `(ỹᵢ, σ̃ᵢ²)` with `σ̃² = -1/(2λ̃⁽²⁾)` and `ỹ = λ̃⁽¹⁾ σ̃²`, or `None` for
    /// an uninformative site.
    pub fn pseudo_observation(&self, i: usize) -> Option<(f64, f64)> {
        let l2 = self.lambda2[i];
        if l2 < 0.0 {
            let s2 = -0.5 / l2;
            Some((self.lambda1[i] * s2, s2))
        } else {
            None
        }
    }

    /// Largest absolute change in either natural parameter.
    pub fn max_change(&self, other: &SiteParams) -> f64 {
        self.lambda1
            .iter()
            .zip(&other.lambda1)
            .chain(self.lambda2.iter().zip(&other.lambda2))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Applies the clamp `λ̃⁽²⁾ ≤ -SITE_EPS`.
pub(crate) fn clamp_precision(lambda2: f64) -> f64 {
    lambda2.min(-SITE_EPS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_observation_round_trip() {
        let s = SiteParams::from_pseudo(&[1.5, -2.0], &[0.25, 4.0]).unwrap();
        let (y, v) = s.pseudo_observation(0).unwrap();
        assert!((y - 1.5).abs() < 1e-15 && (v - 0.25).abs() < 1e-15);
        assert_eq!(s.lambda2[1], -0.125);
        assert!(SiteParams::uninformative(3).pseudo_observation(1).is_none());
    }

    #[test]
    fn rejects_invalid_sites() {
        assert!(SiteParams::new(vec![0.0], vec![0.5]).is_err());
        assert!(SiteParams::new(vec![0.0], vec![-1e-12]).is_err());
        assert!(SiteParams::new(vec![f64::NAN], vec![-1.0]).is_err());
        assert!(SiteParams::new(vec![0.0, 1.0], vec![-1.0]).is_err());
    }
}
