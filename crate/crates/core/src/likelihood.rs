//! Observation models, expected log-likelihoods (`𝒥`) and log-partition
//! functions (`𝒵`) under a Gaussian marginal, each with derivatives in the
//! marginal mean and variance.

use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::quadrature::QuadratureRule;

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Likelihood {
    Gaussian { noise_variance: f64 },
    /// Log link: `y ~ Poisson(binsize · exp(f))`.
    Poisson { binsize: f64 },
    /// Probit link: `p(y = 1 | f) = Φ(f)`.
    Bernoulli,
}

/// `𝒥 = E_{N(f|m,v)}[log p(y|f)]` and its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariationalExpectation {
    pub value: f64,
    pub d_m: f64,
    pub d_v: f64,
}

/// `𝒵 = log E_{N(f|m,v)}[p(y|f)]` and its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPartition {
    pub value: f64,
    pub d_m: f64,
    pub d_v: f64,
}

/// `log Φ(z)`, accurate far into both tails.
pub fn log_normal_cdf(z: f64) -> f64 {
    if z > 6.0 {
        (-0.5 * erfc(z / std::f64::consts::SQRT_2)).ln_1p()
    } else if z > -20.0 {
        (0.5 * erfc(-z / std::f64::consts::SQRT_2)).ln()
    } else {
        let z2 = z * z;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2)
            + 105.0 / (z2 * z2 * z2 * z2);
        -0.5 * z2 - (-z).ln() - 0.5 * LN_2PI + series.ln()
    }
}

/// `φ(z) / Φ(z)`.
fn inverse_mills(z: f64) -> f64 {
    (-0.5 * z * z - 0.5 * LN_2PI - log_normal_cdf(z)).exp()
}

impl Likelihood {
    pub fn gaussian(noise_variance: f64) -> Result<Likelihood> {
        if !(noise_variance.is_finite() && noise_variance > 0.0) {
            return Err(Error::InvalidLikelihood(format!(
                "noise_variance must be positive, got {noise_variance}"
            )));
        }
        Ok(Likelihood::Gaussian { noise_variance })
    }

    pub fn poisson(binsize: f64) -> Result<Likelihood> {
        if !(binsize.is_finite() && binsize > 0.0) {
            return Err(Error::InvalidLikelihood(format!(
                "binsize must be positive, got {binsize}"
            )));
        }
        Ok(Likelihood::Poisson { binsize })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Likelihood::Gaussian { .. } => "gaussian",
            Likelihood::Poisson { .. } => "poisson",
            Likelihood::Bernoulli => "bernoulli",
        }
    }

    pub fn check_observation(&self, y: f64) -> Result<()> {
        let ok = match self {
            Likelihood::Gaussian { .. } => y.is_finite(),
            Likelihood::Poisson { .. } => y.is_finite() && y >= 0.0 && y.fract() == 0.0,
            Likelihood::Bernoulli => y == 0.0 || y == 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain {
                likelihood: self.name(),
                y,
            })
        }
    }

    pub fn log_density(&self, y: f64, f: f64) -> Result<f64> {
        self.check_observation(y)?;
        Ok(self.derivatives(y, f).0)
    }

    /// `(log p, ∂f log p, ∂²f log p)` for an observation already known to
    /// be in the support.
    fn derivatives(&self, y: f64, f: f64) -> (f64, f64, f64) {
        match *self {
            Likelihood::Gaussian { noise_variance } => {
                let r = y - f;
                (
                    -0.5 * (LN_2PI + noise_variance.ln()) - 0.5 * r * r / noise_variance,
                    r / noise_variance,
                    -1.0 / noise_variance,
                )
            }
            Likelihood::Poisson { binsize } => {
                let rate = binsize * f.exp();
                (
                    y * (f + binsize.ln()) - rate - ln_gamma(y + 1.0),
                    y - rate,
                    -rate,
                )
            }
            Likelihood::Bernoulli => {
                let s = 2.0 * y - 1.0;
                let z = s * f;
                let r = inverse_mills(z);
                (log_normal_cdf(z), s * r, -r * (z + r))
            }
        }
    }

    /// Expected log-likelihood under `N(f | m, v)`. Derivatives use
    /// `∂𝒥/∂m = E[∂f log p]` and `∂𝒥/∂v = ½ E[∂²f log p]`, integrated with
    /// the same rule as the value. The Gaussian case is closed-form.
    pub fn variational_expectation(
        &self,
        y: f64,
        m: f64,
        v: f64,
        rule: &QuadratureRule,
    ) -> Result<VariationalExpectation> {
        self.check_observation(y)?;
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::NonPositiveVariance(v));
        }
        if let Likelihood::Gaussian { noise_variance } = *self {
            let r = y - m;
            return Ok(VariationalExpectation {
                value: -0.5 * (LN_2PI + noise_variance.ln()) - 0.5 * (r * r + v) / noise_variance,
                d_m: r / noise_variance,
                d_v: -0.5 / noise_variance,
            });
        }
        let (mut value, mut d_m, mut d2) = (0.0, 0.0, 0.0);
        for (f, w) in rule.gaussian_points(m, v) {
            let (g, g1, g2) = self.derivatives(y, f);
            value += w * g;
            d_m += w * g1;
            d2 += w * g2;
        }
        if !(value.is_finite() && d_m.is_finite() && d2.is_finite()) {
            return Err(Error::QuadratureOverflow { m, v });
        }
        Ok(VariationalExpectation {
            value,
            d_m,
            d_v: 0.5 * d2,
        })
    }

    /// Log-partition under `N(f | m, v)`, in closed form for the Gaussian
    /// and probit cases and by log-sum-exp quadrature otherwise.
    /// Derivatives are moments of the tilted distribution:
    /// `∂𝒵/∂m = E_t[∂f log p]`, `∂𝒵/∂v = E_t[(f - m) ∂f log p] / 2v`, which
    /// are the exact derivatives of the quadrature sum.
    pub fn log_partition(
        &self,
        y: f64,
        m: f64,
        v: f64,
        rule: &QuadratureRule,
    ) -> Result<LogPartition> {
        self.check_observation(y)?;
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::NonPositiveVariance(v));
        }
        if let Likelihood::Gaussian { noise_variance } = *self {
            let s = v + noise_variance;
            let r = y - m;
            return Ok(LogPartition {
                value: -0.5 * (LN_2PI + s.ln()) - 0.5 * r * r / s,
                d_m: r / s,
                d_v: -0.5 / s + 0.5 * r * r / (s * s),
            });
        }
        if let Likelihood::Bernoulli = *self {
            let sign = 2.0 * y - 1.0;
            let s = (1.0 + v).sqrt();
            let z = sign * m / s;
            let r = inverse_mills(z);
            return Ok(LogPartition {
                value: log_normal_cdf(z),
                d_m: sign * r / s,
                d_v: -0.5 * z * r / (1.0 + v),
            });
        }
        let terms: Vec<(f64, f64, f64)> = rule
            .gaussian_points(m, v)
            .map(|(f, w)| {
                let (g, g1, _) = self.derivatives(y, f);
                (w.ln() + g, g1, f - m)
            })
            .collect();
        let max = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::QuadratureOverflow { m, v });
        }
        let mut total = 0.0;
        let (mut e1, mut e2) = (0.0, 0.0);
        for &(l, g1, dev) in &terms {
            let w = (l - max).exp();
            total += w;
            e1 += w * g1;
            e2 += w * g1 * dev;
        }
        let value = max + total.ln();
        let (d_m, d_v) = (e1 / total, 0.5 * e2 / (v * total));
        if !(value.is_finite() && d_m.is_finite() && d_v.is_finite()) {
            return Err(Error::QuadratureOverflow { m, v });
        }
        Ok(LogPartition { value, d_m, d_v })
    }

    /// Number of hyperparameters exposed for learning.
    pub fn num_params(&self) -> usize {
        match self {
            Likelihood::Gaussian { .. } => 1,
            _ => 0,
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match self {
            Likelihood::Gaussian { .. } => vec!["lik.noise_variance".into()],
            _ => Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            Likelihood::Gaussian { noise_variance } => vec![noise_variance],
            _ => Vec::new(),
        }
    }

    pub fn with_params(&self, values: &[f64]) -> Result<Likelihood> {
        if values.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "likelihood has {} parameters, got {}",
                self.num_params(),
                values.len()
            )));
        }
        match self {
            Likelihood::Gaussian { .. } => Likelihood::gaussian(values[0]),
            other => Ok(*other),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gh_rule;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn normal_cdf(x: f64) -> f64 {
        0.5 * erfc(-x / std::f64::consts::SQRT_2)
    }

    #[test]
    fn log_density_examples() {
        let p = Likelihood::poisson(1.0).unwrap();
        assert_relative_eq!(p.log_density(1.0, 0.0).unwrap(), -1.0, epsilon = 1e-15);
        let g = Likelihood::gaussian(1.0).unwrap();
        assert_relative_eq!(g.log_density(0.0, 0.0).unwrap(), -0.9189385332046727, epsilon = 1e-15);
        let b = Likelihood::Bernoulli;
        assert_relative_eq!(b.log_density(1.0, 0.0).unwrap(), 0.5f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn support_is_enforced() {
        let p = Likelihood::poisson(1.0).unwrap();
        assert!(p.log_density(-1.0, 0.0).is_err());
        assert!(p.log_density(1.5, 0.0).is_err());
        assert!(Likelihood::Bernoulli.log_density(2.0, 0.0).is_err());
        assert!(Likelihood::gaussian(1.0).unwrap().log_density(f64::NAN, 0.0).is_err());
        assert!(Likelihood::gaussian(0.0).is_err());
        assert!(Likelihood::poisson(-1.0).is_err());
    }

    #[test]
    fn gaussian_variational_expectation_closed_form() {
        let g = Likelihood::gaussian(1.0).unwrap();
        let rule = gh_rule(20).unwrap();
        let ve = g.variational_expectation(0.0, 0.0, 1.0, &rule).unwrap();
        assert_relative_eq!(ve.value, -1.4189385332046727, epsilon = 1e-14);
        assert_eq!(ve.d_m, 0.0);
        assert_eq!(ve.d_v, -0.5);
    }

    #[test]
    fn poisson_variational_expectation_closed_form() {
        let p = Likelihood::poisson(1.0).unwrap();
        let rule = gh_rule(20).unwrap();
        let ve = p.variational_expectation(2.0, 0.0, 1.0, &rule).unwrap();
        // y m - e^{m + v/2} - log y!
        assert_relative_eq!(ve.value, -2.341868451260073, epsilon = 1e-8);
    }

    #[test]
    fn small_variance_limit_recovers_log_density() {
        let rule = gh_rule(20).unwrap();
        for lik in [
            Likelihood::gaussian(0.7).unwrap(),
            Likelihood::poisson(2.0).unwrap(),
            Likelihood::Bernoulli,
        ] {
            let y = 1.0;
            let m = 0.3;
            let ve = lik.variational_expectation(y, m, 1e-12, &rule).unwrap();
            let lp = lik.log_partition(y, m, 1e-12, &rule).unwrap();
            let ld = lik.log_density(y, m).unwrap();
            assert_relative_eq!(ve.value, ld, epsilon = 1e-9);
            assert_relative_eq!(lp.value, ld, epsilon = 1e-9);
        }
    }

    #[test]
    fn log_partition_closed_forms() {
        let rule = gh_rule(20).unwrap();
        let g = Likelihood::gaussian(1.0).unwrap();
        // N(1 | 0, 2)
        assert_relative_eq!(
            g.log_partition(1.0, 0.0, 1.0, &rule).unwrap().value,
            -1.5155121234846454,
            epsilon = 1e-14
        );
        let b = Likelihood::Bernoulli;
        assert_relative_eq!(
            b.log_partition(1.0, 0.0, 1.0, &rule).unwrap().value,
            -std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        for (m, v) in [(0.4, 0.3), (-1.2, 2.0), (2.5, 0.1)] {
            for y in [0.0, 1.0] {
                let s = 2.0 * y - 1.0;
                let want = normal_cdf(s * m / (1.0f64 + v).sqrt()).ln();
                let got = b.log_partition(y, m, v, &rule).unwrap().value;
                assert!((got - want).abs() < 1e-8, "{y} {m} {v}: {got} vs {want}");
                let quad = gh_rule(100).unwrap().expect(m, v, |f| normal_cdf(s * f)).ln();
                assert!((got - quad).abs() < 1e-6, "{y} {m} {v}: {got} vs {quad}");
            }
        }
    }

    #[test]
    fn errors_on_bad_variance_and_overflow() {
        let rule = gh_rule(20).unwrap();
        let p = Likelihood::poisson(1.0).unwrap();
        assert!(matches!(
            p.variational_expectation(1.0, 0.0, 0.0, &rule),
            Err(Error::NonPositiveVariance(_))
        ));
        assert!(matches!(
            p.variational_expectation(1.0, 800.0, 1.0, &rule),
            Err(Error::QuadratureOverflow { .. })
        ));
        assert!(p.log_partition(1.0, 0.0, -1.0, &rule).is_err());
    }

    #[test]
    fn log_normal_cdf_tails() {
        assert_relative_eq!(log_normal_cdf(0.0), -std::f64::consts::LN_2, epsilon = 1e-15);
        assert_relative_eq!(log_normal_cdf(-3.0), normal_cdf(-3.0).ln(), epsilon = 1e-13);
        assert_relative_eq!(log_normal_cdf(8.0), (-normal_cdf(-8.0)).ln_1p(), epsilon = 1e-15);
        // Continuity across the asymptotic switch.
        assert_relative_eq!(log_normal_cdf(-20.0 + 1e-9), log_normal_cdf(-20.0 - 1e-9), epsilon = 1e-6);
        assert!(log_normal_cdf(-40.0).is_finite());
    }

    #[test]
    fn bernoulli_partition_increases_with_mean() {
        let rule = gh_rule(20).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..40 {
            let m = -4.0 + 0.2 * i as f64;
            let z = Likelihood::Bernoulli.log_partition(1.0, m, 0.5, &rule).unwrap().value;
            assert!(z > prev);
            prev = z;
        }
    }

    proptest! {
        #[test]
        fn expected_log_likelihood_is_concave_in_variance(
            m in -3.0f64..3.0, v in 0.01f64..4.0, y in 0u32..6, kind in 0usize..3
        ) {
            let rule = gh_rule(20).unwrap();
            let (lik, y) = match kind {
                0 => (Likelihood::gaussian(0.5).unwrap(), y as f64 - 2.0),
                1 => (Likelihood::poisson(1.0).unwrap(), y as f64),
                _ => (Likelihood::Bernoulli, (y % 2) as f64),
            };
            let ve = lik.variational_expectation(y, m, v, &rule).unwrap();
            prop_assert!(ve.d_v < 0.0);
        }
    }
}
