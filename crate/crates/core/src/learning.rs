//! Hyperparameter learning: Adam on the log-space hyperparameters,
//! interleaved with site updates at fixed hyperparameters.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::inference::{initial_sites, run_with_solver, validate_data, InferenceConfig, InferenceOutcome, SiteIteration};
use crate::kernel::Kernel;
use crate::likelihood::Likelihood;
use crate::objectives::{finite_difference_gradient, HyperParams, Objective, ObjectiveKind, SiteObjective};
use crate::quadrature::gh_rule;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} = {b} outside [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps = {} must be positive", self.eps)));
        }
        Ok(())
    }
}

/// Adam ascent on a maximisation objective.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(config: AdamConfig, dim: usize) -> Adam {
        Adam {
            config,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    /// Moves `theta` uphill along `grad`.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        assert_eq!(theta.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for j in 0..theta.len() {
            self.m[j] = beta1 * self.m[j] + (1.0 - beta1) * grad[j];
            self.v[j] = beta2 * self.v[j] + (1.0 - beta2) * grad[j] * grad[j];
            let mhat = self.m[j] / c1;
            let vhat = self.v[j] / c2;
            theta[j] += lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub objective: ObjectiveKind,
    pub adam: AdamConfig,
    pub outer_iters: usize,
    /// Site updates before each optimizer step.
    pub inner_iters: usize,
    /// Site-update settings. `iters` is used only when `outer_iters = 0`.
    pub inference: InferenceConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            objective: ObjectiveKind::Elbo,
            adam: AdamConfig::default(),
            outer_iters: 500,
            inner_iters: 1,
            inference: InferenceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: HyperParams,
    pub kernel: Kernel,
    pub likelihood: Likelihood,
    /// Posterior and sites at the final hyperparameters.
    pub outcome: InferenceOutcome,
    pub trace: Vec<TraceRow>,
    /// Objective at the final hyperparameters and sites.
    pub final_objective: f64,
}

/// Each outer iteration runs `inner_iters` site updates at the current
/// hyperparameters, records the objective and its finite-difference
/// gradient with the sites held fixed, and takes one Adam step.
pub fn fit(kernel: &Kernel, lik: &Likelihood, t: &[f64], y: &[f64], config: &FitConfig) -> Result<FitResult> {
    validate_data(lik, t, y)?;
    config.adam.validate()?;
    let inf = &config.inference;
    let rule = gh_rule(inf.quad_order)?;
    let mut params = HyperParams::from_model(kernel, lik);
    let sites = initial_sites(inf.init, kernel, lik, t, y, &rule)?;

    if config.outer_iters == 0 {
        let solver = inf.engine.solver(kernel, t)?;
        let outcome = run_with_solver(solver.as_ref(), sites, lik, y, inf)?;
        let final_objective = evaluate(config, &params, t, y, &outcome, &rule)?;
        return Ok(FitResult {
            params,
            kernel: kernel.clone(),
            likelihood: *lik,
            outcome,
            trace: Vec::new(),
            final_objective,
        });
    }

    let mut adam = Adam::new(config.adam, params.len());
    let (mut count, mut ep_skipped) = (0, 0);
    let mut sites = sites;
    let mut trace = Vec::with_capacity(config.outer_iters);
    let start = Instant::now();
    for k in 0..config.outer_iters {
        let step = (|| -> Result<TraceRow> {
            let (kern, l) = params.to_model()?;
            let mut it = SiteIteration {
                lik: &l,
                y,
                rule: &rule,
                mode: inf.mode,
                rho: inf.rho,
                count,
                ep_skipped,
            };
            let solver = inf.engine.solver(&kern, t)?;
            let mut posterior = solver.solve(&sites)?;
            for _ in 0..config.inner_iters {
                sites = it.step(&sites, &posterior)?;
                posterior = solver.solve(&sites)?;
            }
            (count, ep_skipped) = (it.count, it.ep_skipped);
            let objective = SiteObjective {
                kind: config.objective,
                engine: inf.engine,
                template: &params,
                t,
                y,
                sites: &sites,
                rule: &rule,
            };
            let value = match config.objective {
                ObjectiveKind::Elbo => {
                    crate::objectives::elbo(&posterior.marginals, &sites, posterior.log_z, &l, y, &rule)?.value
                }
                ObjectiveKind::DirectMl => objective.value(&params.values)?,
            };
            let grad = finite_difference_gradient(&objective, &params.values)?;
            let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            adam.step(&mut params.values, &grad);
            Ok(TraceRow {
                iter: k + 1,
                objective: value,
                grad_norm,
                elapsed_s: start.elapsed().as_secs_f64(),
            })
        })();
        let row = step.map_err(|e| e.at_iteration(k))?;
        log::debug!("outer {} objective {:.6} |grad| {:.3e}", row.iter, row.objective, row.grad_norm);
        trace.push(row);
    }

    let (kernel, likelihood) = params.to_model()?;
    let solver = inf.engine.solver(&kernel, t)?;
    let posterior = solver.solve(&sites)?;
    let outcome = InferenceOutcome {
        posterior,
        sites,
        trace: Vec::new(),
        ep_skipped,
    };
    let final_objective = evaluate(config, &params, t, y, &outcome, &rule)?;
    Ok(FitResult {
        params,
        kernel,
        likelihood,
        outcome,
        trace,
        final_objective,
    })
}

fn evaluate(
    config: &FitConfig,
    params: &HyperParams,
    t: &[f64],
    y: &[f64],
    outcome: &InferenceOutcome,
    rule: &crate::quadrature::QuadratureRule,
) -> Result<f64> {
    match config.objective {
        ObjectiveKind::Elbo => {
            let post = &outcome.posterior;
            Ok(crate::objectives::elbo(&post.marginals, &outcome.sites, post.log_z, &params.likelihood()?, y, rule)?.value)
        }
        ObjectiveKind::DirectMl => SiteObjective {
            kind: ObjectiveKind::DirectMl,
            engine: config.inference.engine,
            template: params,
            t,
            y,
            sites: &outcome.sites,
            rule,
        }
        .value(&params.values),
    }
}
