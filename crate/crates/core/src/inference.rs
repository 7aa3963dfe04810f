//! Site updates (natural-gradient CVI and damped EP), filter-pass
//! initialisation and the iterate-until-done inference driver.
//!
//! Each iteration is one conjugate regression on the current pseudo-data
//! followed by a site update from the resulting posterior marginals. The
//! conjugate regression is abstracted behind [`ConjugateSolver`] so that
//! the O(n) Kalman engine and the O(n³) dense oracle share every other
//! line of code.

use nalgebra::DVector;

use crate::dense::{DenseGram, DENSE_CAP};
use crate::error::{Error, Result};
use crate::kalman::{forward_pass, kalman_filter, rts_smoother, FilterResult, PosteriorMarginals, SmootherResult};
use crate::kernel::Kernel;
use crate::likelihood::Likelihood;
use crate::objectives::elbo;
use crate::quadrature::{gh_rule, QuadratureRule, DEFAULT_ORDER};
use crate::sites::{clamp_precision, SiteParams};
use crate::state_space::{to_state_space, StateSpaceModel, Transitions};

/// Result of one conjugate regression on pseudo-data.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub marginals: PosteriorMarginals,
    /// Log marginal likelihood of the pseudo-data under the prior.
    pub log_z: f64,
    /// Filter and smoother states (sequential engine only).
    pub states: Option<Box<(FilterResult, SmootherResult)>>,
}

pub trait ConjugateSolver {
    fn len(&self) -> usize;

    fn solve(&self, sites: &SiteParams) -> Result<Posterior>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Kalman filter + RTS smoother.
#[derive(Debug, Clone)]
pub struct SequentialSolver {
    pub model: StateSpaceModel,
    pub transitions: Transitions,
}

impl SequentialSolver {
    pub fn new(kernel: &Kernel, t: &[f64]) -> Result<SequentialSolver> {
        let model = to_state_space(kernel)?;
        let transitions = model.transitions(t)?;
        Ok(SequentialSolver { model, transitions })
    }
}

impl ConjugateSolver for SequentialSolver {
    fn len(&self) -> usize {
        self.transitions.len()
    }

    fn solve(&self, sites: &SiteParams) -> Result<Posterior> {
        let filter = kalman_filter(&self.transitions, &self.model.h, sites)?;
        let smoother = rts_smoother(&filter, &self.transitions, &self.model.h)?;
        Ok(Posterior {
            marginals: smoother.marginals.clone(),
            log_z: filter.log_z,
            states: Some(Box::new((filter, smoother))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Cvi,
    Ep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Zero,
    Filter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Sequential,
    Dense { cap: usize },
}

impl Engine {
    pub fn dense() -> Engine {
        Engine::Dense { cap: DENSE_CAP }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Engine::Sequential => "sequential",
            Engine::Dense { .. } => "dense",
        }
    }

    pub fn solver(&self, kernel: &Kernel, t: &[f64]) -> Result<Box<dyn ConjugateSolver>> {
        Ok(match *self {
            Engine::Sequential => Box::new(SequentialSolver::new(kernel, t)?),
            Engine::Dense { cap } => {
                if t.len() > cap {
                    return Err(Error::DenseCap { n: t.len(), cap });
                }
                Box::new(DenseGram::new(kernel, t)?)
            }
        })
    }
}

/// Step size `first` on the first site update, `rest` afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoSchedule {
    pub first: f64,
    pub rest: f64,
}

impl RhoSchedule {
    pub fn constant(rho: f64) -> RhoSchedule {
        RhoSchedule { first: rho, rest: rho }
    }

    pub fn at(&self, k: usize) -> f64 {
        if k == 0 {
            self.first
        } else {
            self.rest
        }
    }

    fn validate(&self) -> Result<()> {
        for rho in [self.first, self.rest] {
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(Error::Config(format!("step size {rho} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

impl Default for RhoSchedule {
    fn default() -> Self {
        RhoSchedule { first: 1.0, rest: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceConfig {
    pub mode: Mode,
    pub rho: RhoSchedule,
    pub iters: usize,
    pub init: Init,
    pub quad_order: usize,
    pub engine: Engine,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            mode: Mode::Cvi,
            rho: RhoSchedule::default(),
            iters: 20,
            init: Init::Filter,
            quad_order: DEFAULT_ORDER,
            engine: Engine::Sequential,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InferenceOutcome {
    pub posterior: Posterior,
    pub sites: SiteParams,
    /// ELBO (CVI) or pseudo-data log marginal likelihood (EP) after each
    /// iteration.
    pub trace: Vec<f64>,
    /// Total EP site updates skipped because of a non-positive cavity.
    pub ep_skipped: usize,
}

fn check_marginals(sites: &SiteParams, marginals: &PosteriorMarginals, y: &[f64]) -> Result<()> {
    if sites.len() != marginals.len() || y.len() != marginals.len() {
        return Err(Error::Dimension(format!(
            "{} sites, {} marginals, {} observations",
            sites.len(),
            marginals.len(),
            y.len()
        )));
    }
    Ok(())
}

fn cvi_target(lik: &Likelihood, y: f64, m: f64, v: f64, rule: &QuadratureRule) -> Result<(f64, f64)> {
    let ve = lik.variational_expectation(y, m, v, rule)?;
    let g1 = ve.d_m - 2.0 * ve.d_v * m;
    let g2 = ve.d_v;
    if !(g1.is_finite() && g2.is_finite()) {
        return Err(Error::Numerical {
            step: 0,
            reason: "non-finite natural-gradient target".into(),
        });
    }
    Ok((g1, g2))
}

/// Natural-gradient step on the sites:
/// `λ̃⁽¹⁾ ← (1-ρ)λ̃⁽¹⁾ + ρ(∂𝒥/∂m - 2 m ∂𝒥/∂v)`, `λ̃⁽²⁾ ← (1-ρ)λ̃⁽²⁾ + ρ ∂𝒥/∂v`.
pub fn cvi_site_update(
    sites: &SiteParams,
    marginals: &PosteriorMarginals,
    lik: &Likelihood,
    y: &[f64],
    rho: f64,
    rule: &QuadratureRule,
) -> Result<SiteParams> {
    check_marginals(sites, marginals, y)?;
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Config(format!("step size {rho} outside (0, 1]")));
    }
    let n = sites.len();
    let mut out = SiteParams::uninformative(n);
    for i in 0..n {
        let (g1, g2) = cvi_target(lik, y[i], marginals.m[i], marginals.v[i], rule).map_err(|e| e.at_index(i))?;
        out.lambda1[i] = (1.0 - rho) * sites.lambda1[i] + rho * g1;
        out.lambda2[i] = clamp_precision((1.0 - rho) * sites.lambda2[i] + rho * g2);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct EpUpdate {
    pub sites: SiteParams,
    pub skipped: usize,
}

/// Damped moment-matching EP update from the cavity of each marginal.
/// Sites whose cavity variance is not positive, or whose moment match
/// fails, are left unchanged and counted.
pub fn ep_site_update(
    sites: &SiteParams,
    marginals: &PosteriorMarginals,
    lik: &Likelihood,
    y: &[f64],
    rho: f64,
    rule: &QuadratureRule,
) -> Result<EpUpdate> {
    check_marginals(sites, marginals, y)?;
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Config(format!("step size {rho} outside (0, 1]")));
    }
    let mut out = sites.clone();
    let mut skipped = 0;
    for i in 0..sites.len() {
        lik.check_observation(y[i]).map_err(|e| e.at_index(i))?;
        match ep_target(sites.lambda1[i], sites.lambda2[i], marginals.m[i], marginals.v[i], lik, y[i], rule) {
            Some((l1, l2)) => {
                out.lambda1[i] = (1.0 - rho) * sites.lambda1[i] + rho * l1;
                out.lambda2[i] = clamp_precision((1.0 - rho) * sites.lambda2[i] + rho * l2);
            }
            None => skipped += 1,
        }
    }
    Ok(EpUpdate { sites: out, skipped })
}

fn ep_target(
    lambda1: f64,
    lambda2: f64,
    m: f64,
    v: f64,
    lik: &Likelihood,
    y: f64,
    rule: &QuadratureRule,
) -> Option<(f64, f64)> {
    // Cavity: remove the site's precision −2λ̃⁽²⁾ and precision-mean λ̃⁽¹⁾.
    let cav_prec = 1.0 / v + 2.0 * lambda2;
    if !(cav_prec > 0.0) {
        return None;
    }
    let cav_v = 1.0 / cav_prec;
    let cav_m = cav_v * (m / v - lambda1);
    let z = lik.log_partition(y, cav_m, cav_v, rule).ok()?;
    let alpha = z.d_m;
    let beta = alpha * alpha - 2.0 * z.d_v;
    let denom = 1.0 - beta * cav_v;
    if !(denom > 0.0) {
        return None;
    }
    let site_prec = beta / denom;
    let l1 = (alpha + cav_m * beta) / denom;
    let l2 = -0.5 * site_prec;
    (l1.is_finite() && l2.is_finite()).then_some((l1, l2))
}

/// Sets every site in a single forward pass: at step `i` the CVI target is
/// evaluated at the one-step predictive marginal with `ρ = 1`, and the
/// filter then conditions on the new pseudo-observation.
pub fn filter_init(
    transitions: &Transitions,
    h: &DVector<f64>,
    lik: &Likelihood,
    y: &[f64],
    rule: &QuadratureRule,
) -> Result<SiteParams> {
    if y.len() != transitions.len() {
        return Err(Error::Dimension(format!(
            "{} observations for {} time points",
            y.len(),
            transitions.len()
        )));
    }
    let mut sites = SiteParams::uninformative(y.len());
    forward_pass(transitions, h, |i, pred| {
        let (g1, g2) = cvi_target(lik, y[i], pred.m, pred.v, rule).map_err(|e| e.at_index(i))?;
        sites.lambda1[i] = g1;
        sites.lambda2[i] = clamp_precision(g2);
        Ok(sites.pseudo_observation(i))
    })?;
    Ok(sites)
}

pub(crate) fn validate_data(lik: &Likelihood, t: &[f64], y: &[f64]) -> Result<()> {
    if t.len() != y.len() {
        return Err(Error::Dimension(format!("{} times but {} observations", t.len(), y.len())));
    }
    for i in 1..t.len() {
        if !(t[i] > t[i - 1]) {
            return Err(Error::NotIncreasing(i));
        }
    }
    for (i, &yi) in y.iter().enumerate() {
        lik.check_observation(yi).map_err(|e| e.at_index(i))?;
    }
    Ok(())
}

pub(crate) fn initial_sites(
    init: Init,
    kernel: &Kernel,
    lik: &Likelihood,
    t: &[f64],
    y: &[f64],
    rule: &QuadratureRule,
) -> Result<SiteParams> {
    match init {
        Init::Zero => Ok(SiteParams::uninformative(t.len())),
        Init::Filter => {
            let model = to_state_space(kernel)?;
            let transitions = model.transitions(t)?;
            filter_init(&transitions, &model.h, lik, y, rule)
        }
    }
}

/// State carried across site-update iterations.
pub(crate) struct SiteIteration<'a> {
    pub lik: &'a Likelihood,
    pub y: &'a [f64],
    pub rule: &'a QuadratureRule,
    pub mode: Mode,
    pub rho: RhoSchedule,
    /// Site updates performed so far (drives the step-size schedule).
    pub count: usize,
    pub ep_skipped: usize,
}

impl SiteIteration<'_> {
    pub fn step(&mut self, sites: &SiteParams, posterior: &Posterior) -> Result<SiteParams> {
        let rho = self.rho.at(self.count);
        self.count += 1;
        match self.mode {
            Mode::Cvi => cvi_site_update(sites, &posterior.marginals, self.lik, self.y, rho, self.rule),
            Mode::Ep => {
                let upd = ep_site_update(sites, &posterior.marginals, self.lik, self.y, rho, self.rule)?;
                self.ep_skipped += upd.skipped;
                Ok(upd.sites)
            }
        }
    }

    pub fn objective(&self, sites: &SiteParams, posterior: &Posterior) -> Result<f64> {
        match self.mode {
            Mode::Cvi => Ok(elbo(&posterior.marginals, sites, posterior.log_z, self.lik, self.y, self.rule)?.value),
            Mode::Ep => Ok(posterior.log_z),
        }
    }
}

/// Iterates {conjugate regression → site update} `iters` times starting
/// from `sites`, returning the posterior under the final sites.
pub fn run_with_solver(
    solver: &dyn ConjugateSolver,
    sites: SiteParams,
    lik: &Likelihood,
    y: &[f64],
    config: &InferenceConfig,
) -> Result<InferenceOutcome> {
    config.rho.validate()?;
    let rule = gh_rule(config.quad_order)?;
    let mut it = SiteIteration {
        lik,
        y,
        rule: &rule,
        mode: config.mode,
        rho: config.rho,
        count: 0,
        ep_skipped: 0,
    };
    let mut sites = sites;
    let mut posterior = solver.solve(&sites)?;
    let mut trace = Vec::with_capacity(config.iters);
    for k in 0..config.iters {
        let step = (|| {
            sites = it.step(&sites, &posterior)?;
            posterior = solver.solve(&sites)?;
            it.objective(&sites, &posterior)
        })();
        trace.push(step.map_err(|e| e.at_iteration(k))?);
    }
    Ok(InferenceOutcome {
        posterior,
        sites,
        trace,
        ep_skipped: it.ep_skipped,
    })
}

/// Approximate posterior for fixed hyperparameters.
pub fn run_inference(
    kernel: &Kernel,
    lik: &Likelihood,
    t: &[f64],
    y: &[f64],
    config: &InferenceConfig,
) -> Result<InferenceOutcome> {
    validate_data(lik, t, y)?;
    let rule = gh_rule(config.quad_order)?;
    let solver = config.engine.solver(kernel, t)?;
    let sites = initial_sites(config.init, kernel, lik, t, y, &rule)?;
    run_with_solver(solver.as_ref(), sites, lik, y, config)
}
