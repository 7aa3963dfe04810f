//! Training objectives (ELBO, filter-factorised marginal likelihood),
//! the log-space hyperparameter vector and the gradient contract.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::inference::Engine;
use crate::kalman::{forward_pass, PosteriorMarginals};
use crate::kernel::Kernel;
use crate::likelihood::Likelihood;
use crate::quadrature::QuadratureRule;
use crate::sites::SiteParams;
use crate::state_space::{to_state_space, Transitions};

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    /// `Σᵢ E_q[log p(yᵢ | fᵢ)]`
    pub varexp_sum: f64,
    /// Log marginal likelihood of the pseudo-data.
    pub log_z: f64,
    /// `Σᵢ E_q[log N(ỹᵢ | fᵢ, σ̃ᵢ²)]` over informative sites.
    pub site_correction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveReport {
    pub value: f64,
    pub terms: Option<ElboTerms>,
    pub gradient: Option<Vec<f64>>,
}

/// `Σ 𝒥ᵢ + log 𝒵 − Σ E_q[log N(ỹᵢ | fᵢ, σ̃ᵢ²)]`.
pub fn elbo(
    marginals: &PosteriorMarginals,
    sites: &SiteParams,
    log_z: f64,
    lik: &Likelihood,
    y: &[f64],
    rule: &QuadratureRule,
) -> Result<ObjectiveReport> {
    let n = marginals.len();
    if sites.len() != n || y.len() != n {
        return Err(Error::Dimension(format!(
            "{} marginals, {} sites, {} observations",
            n,
            sites.len(),
            y.len()
        )));
    }
    let mut varexp_sum = 0.0;
    let mut site_correction = 0.0;
    for i in 0..n {
        let (m, v) = (marginals.m[i], marginals.v[i]);
        varexp_sum += lik
            .variational_expectation(y[i], m, v, rule)
            .map_err(|e| e.at_index(i))?
            .value;
        if let Some((yt, s2)) = sites.pseudo_observation(i) {
            let r = yt - m;
            site_correction += -0.5 * (LN_2PI + s2.ln()) - 0.5 * (r * r + v) / s2;
        }
    }
    let terms = ElboTerms {
        varexp_sum,
        log_z,
        site_correction,
    };
    for (term, x) in [
        ("expected log-likelihood", varexp_sum),
        ("log marginal likelihood", log_z),
        ("site correction", site_correction),
    ] {
        if !x.is_finite() {
            return Err(Error::NonFiniteObjective { term });
        }
    }
    Ok(ObjectiveReport {
        value: varexp_sum + log_z - site_correction,
        terms: Some(terms),
        gradient: None,
    })
}

/// `Σᵢ log p(yᵢ | y₁:ᵢ₋₁)`, each term integrating the true likelihood
/// against the filter's one-step predictive marginal. The filter
/// propagates the state by conditioning on the current sites.
pub fn direct_marginal_likelihood(
    transitions: &Transitions,
    h: &DVector<f64>,
    sites: &SiteParams,
    lik: &Likelihood,
    y: &[f64],
    rule: &QuadratureRule,
) -> Result<f64> {
    if sites.len() != transitions.len() || y.len() != transitions.len() {
        return Err(Error::Dimension(format!(
            "{} time points, {} sites, {} observations",
            transitions.len(),
            sites.len(),
            y.len()
        )));
    }
    let mut total = 0.0;
    forward_pass(transitions, h, |i, pred| {
        total += lik
            .log_partition(y[i], pred.m, pred.v, rule)
            .map_err(|e| e.at_index(i))?
            .value;
        Ok(sites.pseudo_observation(i))
    })?;
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    Elbo,
    DirectMl,
}

/// Kernel and likelihood hyperparameters as one unconstrained vector
/// (logs of the positive parameters).
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub values: Vec<f64>,
    names: Vec<String>,
    kernel: Kernel,
    lik: Likelihood,
}

impl HyperParams {
    pub fn from_model(kernel: &Kernel, lik: &Likelihood) -> HyperParams {
        let mut names = kernel.param_names();
        names.extend(lik.param_names());
        let values = kernel
            .params()
            .into_iter()
            .chain(lik.params())
            .map(f64::ln)
            .collect();
        HyperParams {
            values,
            names,
            kernel: kernel.clone(),
            lik: *lik,
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn with_values(&self, values: &[f64]) -> Result<HyperParams> {
        if values.len() != self.values.len() {
            return Err(Error::Dimension(format!(
                "expected {} hyperparameters, got {}",
                self.values.len(),
                values.len()
            )));
        }
        Ok(HyperParams {
            values: values.to_vec(),
            ..self.clone()
        })
    }

    /// Positive parameter values.
    pub fn constrained(&self) -> Vec<f64> {
        self.values.iter().map(|x| x.exp()).collect()
    }

    pub fn kernel(&self) -> Result<Kernel> {
        let c = self.constrained();
        self.kernel.with_params(&c[..self.kernel.num_params()])
    }

    pub fn likelihood(&self) -> Result<Likelihood> {
        let c = self.constrained();
        self.lik.with_params(&c[self.kernel.num_params()..])
    }

    pub fn to_model(&self) -> Result<(Kernel, Likelihood)> {
        Ok((self.kernel()?, self.likelihood()?))
    }
}

/// A scalar objective of the hyperparameter vector, optionally with an
/// analytic gradient.
pub trait Objective {
    fn names(&self) -> Vec<String>;

    fn value(&self, theta: &[f64]) -> Result<f64>;

    fn analytic_gradient(&self, _theta: &[f64]) -> Option<Result<Vec<f64>>> {
        None
    }
}

/// Central differences with per-coordinate step `1e-6·max(1, |θⱼ|)`.
pub fn finite_difference_gradient(objective: &dyn Objective, theta: &[f64]) -> Result<Vec<f64>> {
    let names = objective.names();
    let mut grad = Vec::with_capacity(theta.len());
    let mut x = theta.to_vec();
    for j in 0..theta.len() {
        let h = 1e-6 * theta[j].abs().max(1.0);
        let fail = || Error::NonFiniteGradient {
            coordinate: j,
            name: names.get(j).cloned().unwrap_or_default(),
        };
        x[j] = theta[j] + h;
        let up = objective.value(&x).map_err(|_| fail())?;
        x[j] = theta[j] - h;
        let down = objective.value(&x).map_err(|_| fail())?;
        x[j] = theta[j];
        if !(up.is_finite() && down.is_finite()) {
            return Err(fail());
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// The analytic gradient if the objective provides one, otherwise the
/// finite-difference baseline.
pub fn objective_gradient(objective: &dyn Objective, theta: &[f64]) -> Result<Vec<f64>> {
    match objective.analytic_gradient(theta) {
        Some(g) => g,
        None => finite_difference_gradient(objective, theta),
    }
}

/// Largest relative disagreement between the analytic gradient and the
/// finite-difference baseline, `|a − b| / max(|b|, 1e-3)`.
pub fn gradient_discrepancy(objective: &dyn Objective, theta: &[f64]) -> Result<Option<f64>> {
    let Some(analytic) = objective.analytic_gradient(theta) else {
        return Ok(None);
    };
    let analytic = analytic?;
    let fd = finite_difference_gradient(objective, theta)?;
    Ok(Some(
        analytic
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).abs() / b.abs().max(1e-3))
            .fold(0.0, f64::max),
    ))
}

/// ELBO or direct marginal likelihood as a function of the hyperparameters
/// with the sites held fixed.
pub struct SiteObjective<'a> {
    pub kind: ObjectiveKind,
    pub engine: Engine,
    pub template: &'a HyperParams,
    pub t: &'a [f64],
    pub y: &'a [f64],
    pub sites: &'a SiteParams,
    pub rule: &'a QuadratureRule,
}

impl Objective for SiteObjective<'_> {
    fn names(&self) -> Vec<String> {
        self.template.names().to_vec()
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        let (kernel, lik) = self.template.with_values(theta)?.to_model()?;
        match self.kind {
            ObjectiveKind::Elbo => {
                let solver = self.engine.solver(&kernel, self.t)?;
                let post = solver.solve(self.sites)?;
                Ok(elbo(&post.marginals, self.sites, post.log_z, &lik, self.y, self.rule)?.value)
            }
            ObjectiveKind::DirectMl => {
                let model = to_state_space(&kernel)?;
                let transitions = model.transitions(self.t)?;
                direct_marginal_likelihood(&transitions, &model.h, self.sites, &lik, self.y, self.rule)
            }
        }
    }
}

/// Exact GP regression evidence for a Gaussian likelihood, computed densely
/// and with an analytic gradient.
pub struct DenseGaussianEvidence<'a> {
    pub template: &'a HyperParams,
    pub t: &'a [f64],
    pub y: &'a [f64],
}

impl DenseGaussianEvidence<'_> {
    fn evaluate(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (kernel, lik) = self.template.with_values(theta)?.to_model()?;
        let Likelihood::Gaussian { noise_variance } = lik else {
            return Err(Error::Config("dense evidence requires a Gaussian likelihood".into()));
        };
        crate::dense::gaussian_lml_with_log_grad(&kernel, noise_variance, self.t, self.y)
    }
}

impl Objective for DenseGaussianEvidence<'_> {
    fn names(&self) -> Vec<String> {
        self.template.names().to_vec()
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.evaluate(theta)?.0)
    }

    fn analytic_gradient(&self, theta: &[f64]) -> Option<Result<Vec<f64>>> {
        Some(self.evaluate(theta).map(|(_, g)| g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gh_rule;
    use approx::assert_relative_eq;

    struct Quadratic;

    impl Objective for Quadratic {
        fn names(&self) -> Vec<String> {
            vec!["a".into(), "b".into()]
        }
        fn value(&self, theta: &[f64]) -> Result<f64> {
            Ok(theta.iter().map(|x| x * x).sum())
        }
    }

    #[test]
    fn quadratic_finite_differences() {
        let g = objective_gradient(&Quadratic, &[1.0, 2.0]).unwrap();
        assert_relative_eq!(g[0], 2.0, epsilon = 1e-8);
        assert_relative_eq!(g[1], 4.0, epsilon = 1e-8);
    }

    struct Blows;

    impl Objective for Blows {
        fn names(&self) -> Vec<String> {
            vec!["x".into(), "y".into()]
        }
        fn value(&self, theta: &[f64]) -> Result<f64> {
            Ok(if theta[1] > 0.5 { f64::NAN } else { 0.0 })
        }
    }

    #[test]
    fn non_finite_perturbation_names_coordinate() {
        let err = finite_difference_gradient(&Blows, &[0.0, 0.5]).unwrap_err();
        match err {
            Error::NonFiniteGradient { coordinate, name } => {
                assert_eq!(coordinate, 1);
                assert_eq!(name, "y");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn elbo_empty_is_zero() {
        let r = elbo(
            &PosteriorMarginals::default(),
            &SiteParams::uninformative(0),
            0.0,
            &Likelihood::Bernoulli,
            &[],
            &gh_rule(20).unwrap(),
        )
        .unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn hyperparams_round_trip() {
        let k = Kernel::parse("sum(matern52(var=1.5,len=3), prod(cosine(period=7), matern12(var=0.2,len=30)))").unwrap();
        let lik = Likelihood::gaussian(0.3).unwrap();
        let hp = HyperParams::from_model(&k, &lik);
        assert_eq!(hp.len(), 7);
        assert_eq!(hp.index_of("lik.noise_variance"), Some(6));
        let (k2, l2) = hp.to_model().unwrap();
        for (a, b) in k.params().iter().zip(k2.params()) {
            assert!((a - b).abs() <= 1e-12 * a.abs());
        }
        assert_relative_eq!(l2.params()[0], 0.3, max_relative = 1e-12);
    }

    #[test]
    fn direct_ml_single_poisson_point() {
        let model = to_state_space(&Kernel::matern12(1.0, 1.0).unwrap()).unwrap();
        let tr = model.transitions(&[0.0]).unwrap();
        let lik = Likelihood::poisson(1.0).unwrap();
        let rule = gh_rule(100).unwrap();
        let v = direct_marginal_likelihood(&tr, &model.h, &SiteParams::uninformative(1), &lik, &[0.0], &rule).unwrap();
        // log E[exp(-e^f)], f ~ N(0, 1), by adaptive quadrature.
        assert_relative_eq!(v, -0.9629724005003037, epsilon = 1e-9);
        let empty = model.transitions(&[]).unwrap();
        assert_eq!(
            direct_marginal_likelihood(&empty, &model.h, &SiteParams::uninformative(0), &lik, &[], &rule).unwrap(),
            0.0
        );
    }
}
