//! O(n³) reference implementations: dense GP regression on pseudo-data and
//! dense CVI. Used as ground truth for the sequential engine.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::inference::{run_with_solver, ConjugateSolver, Engine, Init, InferenceConfig, InferenceOutcome, Mode, Posterior, RhoSchedule};
use crate::kalman::PosteriorMarginals;
use crate::kernel::Kernel;
use crate::likelihood::Likelihood;
use crate::sites::SiteParams;

/// Default problem-size cap for the dense engine.
pub const DENSE_CAP: usize = 2000;

const LN_2PI: f64 = 1.8378770664093453;

/// Prior covariance `K[i, j] = κ(tᵢ − tⱼ)`.
#[derive(Debug, Clone)]
pub struct DenseGram {
    pub k: DMatrix<f64>,
    /// Base jitter added to the diagonal of `K_ỹ` before factorising.
    pub jitter: f64,
}

impl DenseGram {
    pub fn new(kernel: &Kernel, t: &[f64]) -> Result<DenseGram> {
        kernel.validate()?;
        for i in 1..t.len() {
            if !(t[i] > t[i - 1]) {
                return Err(Error::NotIncreasing(i));
            }
        }
        let n = t.len();
        let k = DMatrix::from_fn(n, n, |i, j| kernel.eval(t[i] - t[j]));
        Ok(DenseGram { k, jitter: 0.0 })
    }

    pub fn len(&self) -> usize {
        self.k.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.k.nrows() == 0
    }
}

/// Cholesky with jitter escalation: none first, then `1e-12·mean diag`
/// growing ×10 up to `1e-6·mean diag`.
fn cholesky_jittered(a: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok((ch, 0.0));
    }
    let n = a.nrows();
    let mean_diag = a.diagonal().mean().abs();
    let mut jitter = 1e-12 * mean_diag;
    while jitter <= 1e-6 * mean_diag * (1.0 + 1e-12) {
        let jittered = a + DMatrix::<f64>::identity(n, n) * jitter;
        if let Some(ch) = jittered.cholesky() {
            return Ok((ch, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::Cholesky { n })
}

/// Exact Gaussian conditioning of the prior on the informative sites.
/// Uninformative sites are left out of `K_ỹ` entirely.
pub fn dense_regression(gram: &DenseGram, sites: &SiteParams) -> Result<(PosteriorMarginals, f64)> {
    let n = gram.len();
    if sites.len() != n {
        return Err(Error::Dimension(format!("{} sites for {n} points", sites.len())));
    }
    let obs: Vec<usize> = (0..n).filter(|&i| sites.is_informative(i)).collect();
    let prior_var: Vec<f64> = (0..n).map(|i| gram.k[(i, i)]).collect();
    if obs.is_empty() {
        return Ok((
            PosteriorMarginals {
                m: vec![0.0; n],
                v: prior_var,
            },
            0.0,
        ));
    }
    let s = obs.len();
    let mut ytil = DVector::zeros(s);
    let mut ky = DMatrix::from_fn(s, s, |a, b| gram.k[(obs[a], obs[b])]);
    for (a, &i) in obs.iter().enumerate() {
        let (y, s2) = sites.pseudo_observation(i).expect("informative");
        ytil[a] = y;
        ky[(a, a)] += s2 + gram.jitter;
    }
    let (ch, _) = cholesky_jittered(&ky)?;
    let alpha = ch.solve(&ytil);
    let log_det: f64 = 2.0 * ch.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let log_z = -0.5 * ytil.dot(&alpha) - 0.5 * log_det - 0.5 * s as f64 * LN_2PI;

    // Cross-covariance between all points and the observed ones.
    let kx = DMatrix::from_fn(n, s, |i, b| gram.k[(i, obs[b])]);
    let m = &kx * &alpha;
    let mut lk = kx.transpose();
    ch.l_dirty()
        .solve_lower_triangular_mut(&mut lk);
    let mut v = Vec::with_capacity(n);
    for i in 0..n {
        let vi = prior_var[i] - lk.column(i).norm_squared();
        if !(vi > 0.0) {
            return Err(Error::Numerical {
                step: i,
                reason: format!("dense posterior variance {vi} is not positive"),
            });
        }
        v.push(vi);
    }
    Ok((
        PosteriorMarginals {
            m: m.iter().copied().collect(),
            v,
        },
        log_z,
    ))
}

impl ConjugateSolver for DenseGram {
    fn len(&self) -> usize {
        self.k.nrows()
    }

    fn solve(&self, sites: &SiteParams) -> Result<Posterior> {
        let (marginals, log_z) = dense_regression(self, sites)?;
        Ok(Posterior {
            marginals,
            log_z,
            states: None,
        })
    }
}

/// `-½ỹᵀK_ỹ⁻¹ỹ - ½log|K_ỹ| - (n/2)log 2π` computed through an LU
/// factorisation, independently of the Cholesky path in
/// [`dense_regression`].
pub fn log_marginal_likelihood_lu(gram: &DenseGram, sites: &SiteParams) -> Result<f64> {
    let obs: Vec<usize> = (0..gram.len()).filter(|&i| sites.is_informative(i)).collect();
    let s = obs.len();
    if s == 0 {
        return Ok(0.0);
    }
    let mut ky = DMatrix::from_fn(s, s, |a, b| gram.k[(obs[a], obs[b])]);
    let mut ytil = DVector::zeros(s);
    for (a, &i) in obs.iter().enumerate() {
        let (y, s2) = sites.pseudo_observation(i).expect("informative");
        ytil[a] = y;
        ky[(a, a)] += s2 + gram.jitter;
    }
    let lu = ky.clone().lu();
    let det = lu.determinant();
    let alpha = lu.solve(&ytil).ok_or(Error::Cholesky { n: s })?;
    if !(det > 0.0) {
        return Err(Error::Cholesky { n: s });
    }
    Ok(-0.5 * ytil.dot(&alpha) - 0.5 * det.ln() - 0.5 * s as f64 * LN_2PI)
}

/// Exact log marginal likelihood of GP regression with Gaussian noise and
/// its analytic gradient with respect to the log of every kernel
/// hyperparameter followed by the log noise variance:
/// `∂/∂θ = ½ tr((ααᵀ - K_y⁻¹) ∂K_y/∂θ)`.
pub fn gaussian_lml_with_log_grad(kernel: &Kernel, noise_variance: f64, t: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = t.len();
    if y.len() != n {
        return Err(Error::Dimension(format!("{n} times but {} observations", y.len())));
    }
    let p = kernel.num_params();
    let mut ky = DMatrix::zeros(n, n);
    let mut dk: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, n); p];
    for i in 0..n {
        for j in 0..=i {
            let (k, g) = kernel.eval_with_log_grad(t[i] - t[j]);
            ky[(i, j)] = k;
            ky[(j, i)] = k;
            for (d, gd) in dk.iter_mut().zip(&g) {
                d[(i, j)] = *gd;
                d[(j, i)] = *gd;
            }
        }
        ky[(i, i)] += noise_variance;
    }
    let ch = ky.cholesky().ok_or(Error::Cholesky { n })?;
    let yv = DVector::from_column_slice(y);
    let alpha = ch.solve(&yv);
    let log_det: f64 = 2.0 * ch.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let lml = -0.5 * yv.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * LN_2PI;
    let kinv = ch.inverse();
    let w = &alpha * alpha.transpose() - kinv;
    let mut grad: Vec<f64> = dk.iter().map(|d| 0.5 * w.component_mul(d).sum()).collect();
    grad.push(0.5 * noise_variance * w.trace());
    Ok((lml, grad))
}

/// Dense CVI from uninformative sites with a constant step size.
pub fn dense_cvi(
    kernel: &Kernel,
    lik: &Likelihood,
    t: &[f64],
    y: &[f64],
    rho: f64,
    iters: usize,
) -> Result<InferenceOutcome> {
    let config = InferenceConfig {
        mode: Mode::Cvi,
        rho: RhoSchedule::constant(rho),
        iters,
        init: Init::Zero,
        engine: Engine::dense(),
        ..Default::default()
    };
    crate::inference::validate_data(lik, t, y)?;
    let solver = config.engine.solver(kernel, t)?;
    run_with_solver(solver.as_ref(), SiteParams::uninformative(t.len()), lik, y, &config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_point_regression() {
        let gram = DenseGram::new(&Kernel::matern12(1.0, 1.0).unwrap(), &[0.0]).unwrap();
        let sites = SiteParams::from_pseudo(&[1.0], &[1.0]).unwrap();
        let (marg, log_z) = dense_regression(&gram, &sites).unwrap();
        assert_relative_eq!(marg.m[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(marg.v[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(log_z, -0.5 * (4.0 * std::f64::consts::PI).ln() - 0.25, epsilon = 1e-14);
    }

    #[test]
    fn uninformative_row_keeps_prior() {
        let gram = DenseGram::new(&Kernel::matern12(2.0, 1.0).unwrap(), &[0.0, 50.0]).unwrap();
        let sites = SiteParams::new(vec![3.0, 0.0], vec![-0.5, 0.0]).unwrap();
        let (marg, _) = dense_regression(&gram, &sites).unwrap();
        assert!(marg.m[1].abs() < 1e-20);
        assert_relative_eq!(marg.v[1], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn log_z_two_ways() {
        let k = Kernel::parse("sum(matern32(var=1.2,len=0.7), matern12(var=0.3,len=4))").unwrap();
        let t: Vec<f64> = (0..40).map(|i| i as f64 * 0.37).collect();
        let gram = DenseGram::new(&k, &t).unwrap();
        let y: Vec<f64> = t.iter().map(|x| (x * 0.9).sin()).collect();
        let sites = SiteParams::from_pseudo(&y, &vec![0.2; 40]).unwrap();
        let (_, a) = dense_regression(&gram, &sites).unwrap();
        let b = log_marginal_likelihood_lu(&gram, &sites).unwrap();
        assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn cap_is_enforced() {
        let k = Kernel::matern12(1.0, 1.0).unwrap();
        let t: Vec<f64> = (0..10).map(f64::from).collect();
        let err = Engine::Dense { cap: 5 }.solver(&k, &t).err().unwrap();
        assert!(err.to_string().contains("sequential"));
    }
}
