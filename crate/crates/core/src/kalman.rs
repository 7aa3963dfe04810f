//! Kalman filter and Rauch–Tung–Striebel smoother over pseudo-observations.

use nalgebra::{DMatrix, DMatrixView, DVector, DVectorView};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::sites::SiteParams;
use crate::state_space::{DiscreteTransition, StateSpaceModel, Transitions};

const LN_2PI: f64 = 1.8378770664093453;

/// Scalar Gaussian marginals `q(f(tᵢ)) = N(mᵢ, vᵢ)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PosteriorMarginals {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl PosteriorMarginals {
    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// Gaussian states `N(mᵢ, Pᵢ)` stored contiguously, `d` means followed by
/// `d²` column-major covariance entries per step.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSequence {
    dim: usize,
    means: Vec<f64>,
    covs: Vec<f64>,
}

impl StateSequence {
    pub fn with_capacity(dim: usize, n: usize) -> StateSequence {
        StateSequence {
            dim,
            means: Vec::with_capacity(n * dim),
            covs: Vec::with_capacity(n * dim * dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.means.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn push(&mut self, m: &DVector<f64>, p: &DMatrix<f64>) {
        self.means.extend_from_slice(m.as_slice());
        self.covs.extend_from_slice(p.as_slice());
    }

    pub fn set(&mut self, i: usize, m: &DVector<f64>, p: &DMatrix<f64>) {
        let d = self.dim;
        self.means[i * d..(i + 1) * d].copy_from_slice(m.as_slice());
        self.covs[i * d * d..(i + 1) * d * d].copy_from_slice(p.as_slice());
    }

    pub fn mean(&self, i: usize) -> DVectorView<'_, f64> {
        let d = self.dim;
        DVectorView::from_slice(&self.means[i * d..(i + 1) * d], d)
    }

    pub fn cov(&self, i: usize) -> DMatrixView<'_, f64> {
        let d = self.dim;
        DMatrixView::from_slice(&self.covs[i * d * d..(i + 1) * d * d], d, d)
    }
}

#[derive(Debug, Clone)]
pub struct FilterResult {
    pub filtered: StateSequence,
    /// One-step predictions `p(xᵢ | ỹ₁:ᵢ₋₁)`.
    pub predicted: StateSequence,
    /// `Σᵢ -½(log 2π sᵢ + ηᵢ²/sᵢ)` over informative sites.
    pub log_z: f64,
}

#[derive(Debug, Clone)]
pub struct SmootherResult {
    pub states: StateSequence,
    pub marginals: PosteriorMarginals,
}

/// Predictive marginal handed to a [`forward_pass`] callback.
#[derive(Debug, Clone, Copy)]
pub struct Predictive {
    pub m: f64,
    pub v: f64,
}

/// Runs the filter, asking `observe` for the pseudo-observation
/// `(ỹᵢ, σ̃ᵢ²)` at each step given the one-step predictive marginal.
/// `None` skips the update.
pub fn forward_pass<F>(transitions: &Transitions, h: &DVector<f64>, mut observe: F) -> Result<FilterResult>
where
    F: FnMut(usize, Predictive) -> Result<Option<(f64, f64)>>,
{
    let n = transitions.len();
    let d = h.len();
    let mut out = FilterResult {
        filtered: StateSequence::with_capacity(d, n),
        predicted: StateSequence::with_capacity(d, n),
        log_z: 0.0,
    };
    let mut m = DVector::<f64>::zeros(d);
    let mut p = DMatrix::<f64>::zeros(d, d);
    for i in 0..n {
        let tr = transitions.get(i);
        let mp = &tr.a * &m;
        let mut pp = &tr.a * &p * tr.a.transpose() + &tr.q;
        symmetrize(&mut pp);
        let ph = &pp * h;
        let pred = Predictive {
            m: h.dot(&mp),
            v: h.dot(&ph),
        };
        match observe(i, pred)? {
            Some((y, s2)) => {
                let s = pred.v + s2;
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::Numerical {
                        step: i,
                        reason: format!("innovation variance {s} is not positive"),
                    });
                }
                let eta = y - pred.m;
                let k = &ph / s;
                m = &mp + &k * eta;
                p = &pp - &k * ph.transpose();
                symmetrize(&mut p);
                out.log_z += -0.5 * (LN_2PI + s.ln() + eta * eta / s);
            }
            None => {
                m.copy_from(&mp);
                p.copy_from(&pp);
            }
        }
        if m.iter().chain(p.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Numerical {
                step: i,
                reason: "non-finite filter state".into(),
            });
        }
        out.filtered.push(&m, &p);
        out.predicted.push(&mp, &pp);
    }
    Ok(out)
}

pub fn kalman_filter(transitions: &Transitions, h: &DVector<f64>, sites: &SiteParams) -> Result<FilterResult> {
    if sites.len() != transitions.len() {
        return Err(Error::Dimension(format!(
            "{} sites for {} time points",
            sites.len(),
            transitions.len()
        )));
    }
    forward_pass(transitions, h, |i, _| Ok(sites.pseudo_observation(i)))
}

/// Solves `pred_cov · X = rhs` for symmetric positive-definite `pred_cov`,
/// retrying once with jitter `1e-10·trace/d`.
fn spd_solve(pred_cov: &DMatrix<f64>, rhs: &DMatrix<f64>, step: usize) -> Result<DMatrix<f64>> {
    if let Some(ch) = pred_cov.clone().cholesky() {
        return Ok(ch.solve(rhs));
    }
    let d = pred_cov.nrows();
    let jitter = 1e-10 * pred_cov.trace().abs().max(f64::MIN_POSITIVE) / d as f64;
    let jittered = pred_cov + DMatrix::<f64>::identity(d, d) * jitter;
    jittered
        .cholesky()
        .map(|ch| ch.solve(rhs))
        .ok_or_else(|| Error::Numerical {
            step,
            reason: "singular predictive covariance in smoother".into(),
        })
}

/// One backward step: conditions a predicted state at some time on the
/// smoothed state of the next time point reached via `next`.
fn smooth_step(
    filt_m: DVectorView<'_, f64>,
    filt_p: DMatrixView<'_, f64>,
    next: &DiscreteTransition,
    next_pred_m: DVectorView<'_, f64>,
    next_pred_p: DMatrixView<'_, f64>,
    next_smooth_m: DVectorView<'_, f64>,
    next_smooth_p: DMatrixView<'_, f64>,
    step: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    // G = Pf Aᵀ Pp⁻¹, so Gᵀ = Pp⁻¹ A Pf.
    let gt = spd_solve(&next_pred_p.into_owned(), &(&next.a * filt_p), step)?;
    let g = gt.transpose();
    let m = filt_m + &g * (next_smooth_m - next_pred_m);
    let mut p = filt_p + &g * (next_smooth_p - next_pred_p) * &gt;
    symmetrize(&mut p);
    Ok((m, p))
}

fn marginals_from(h: &DVector<f64>, states: &StateSequence) -> Result<PosteriorMarginals> {
    let n = states.len();
    let mut out = PosteriorMarginals {
        m: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
    };
    for i in 0..n {
        let v = (states.cov(i) * h).dot(h);
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Numerical {
                step: i,
                reason: format!("marginal variance {v} is not positive"),
            });
        }
        out.m.push(states.mean(i).dot(h));
        out.v.push(v);
    }
    Ok(out)
}

pub fn rts_smoother(filter: &FilterResult, transitions: &Transitions, h: &DVector<f64>) -> Result<SmootherResult> {
    let n = filter.filtered.len();
    let mut states = filter.filtered.clone();
    for i in (0..n.saturating_sub(1)).rev() {
        let (m, p) = smooth_step(
            filter.filtered.mean(i),
            filter.filtered.cov(i),
            transitions.get(i + 1),
            filter.predicted.mean(i + 1),
            filter.predicted.cov(i + 1),
            states.mean(i + 1),
            states.cov(i + 1),
            i,
        )?;
        states.set(i, &m, &p);
    }
    let marginals = marginals_from(h, &states)?;
    Ok(SmootherResult { states, marginals })
}

/// Posterior marginals of `f` at arbitrary query times given a filter and
/// smoother run over the training times `t`.
///
/// Between training points the state is predicted forward from the
/// earlier filter state and then smoothed against the next smoothed state;
/// after the last point it is a pure prediction, and before the first point
/// the stationary prior is smoothed against the first state.
pub fn predict_marginals(
    model: &StateSpaceModel,
    t: &[f64],
    filter: &FilterResult,
    smoother: &SmootherResult,
    t_star: &[f64],
) -> Result<PosteriorMarginals> {
    let h = &model.h;
    let mut out = PosteriorMarginals::default();
    for (q, &ts) in t_star.iter().enumerate() {
        if !ts.is_finite() {
            return Err(Error::Data(format!("non-finite query time at index {q}")));
        }
        let (m, p) = state_at(model, t, filter, smoother, ts)?;
        let v = h.dot(&(&p * h));
        if !(v > 0.0) || !v.is_finite() || !h.dot(&m).is_finite() {
            return Err(Error::Numerical {
                step: q,
                reason: format!("invalid predictive variance {v} at t = {ts}"),
            });
        }
        out.m.push(h.dot(&m));
        out.v.push(v);
    }
    Ok(out)
}

fn state_at(
    model: &StateSpaceModel,
    t: &[f64],
    filter: &FilterResult,
    smoother: &SmootherResult,
    ts: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = t.len();
    if n == 0 {
        return Ok((DVector::zeros(model.state_dim()), model.pinf.clone()));
    }
    // Index of the first training time >= ts.
    let k = t.partition_point(|&x| x < ts);
    if k < n && t[k] == ts {
        return Ok((smoother.states.mean(k).into_owned(), smoother.states.cov(k).into_owned()));
    }
    let (prior_m, prior_p) = if k == 0 {
        (DVector::zeros(model.state_dim()), model.pinf.clone())
    } else {
        let tr = model.discretize(ts - t[k - 1])?;
        let mut p = &tr.a * filter.filtered.cov(k - 1) * tr.a.transpose() + &tr.q;
        symmetrize(&mut p);
        (&tr.a * filter.filtered.mean(k - 1), p)
    };
    if k == n {
        return Ok((prior_m, prior_p));
    }
    let next = model.discretize(t[k] - ts)?;
    let mut next_pred_p = &next.a * &prior_p * next.a.transpose() + &next.q;
    symmetrize(&mut next_pred_p);
    let next_pred_m = &next.a * &prior_m;
    smooth_step(
        prior_m.as_view(),
        prior_p.as_view(),
        &next,
        next_pred_m.as_view(),
        next_pred_p.as_view(),
        smoother.states.mean(k),
        smoother.states.cov(k),
        k,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Kernel;
    use crate::state_space::to_state_space;
    use approx::assert_relative_eq;

    fn matern12_model() -> StateSpaceModel {
        to_state_space(&Kernel::matern12(1.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn single_observation() {
        let model = matern12_model();
        let tr = model.transitions(&[0.0]).unwrap();
        let sites = SiteParams::from_pseudo(&[1.0], &[1.0]).unwrap();
        let f = kalman_filter(&tr, &model.h, &sites).unwrap();
        assert_relative_eq!(f.filtered.mean(0)[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(f.filtered.cov(0)[(0, 0)], 0.5, epsilon = 1e-15);
        // log N(1 | 0, 2)
        assert_relative_eq!(f.log_z, -1.5155121234846454, epsilon = 1e-14);
        let s = rts_smoother(&f, &tr, &model.h).unwrap();
        assert_eq!(s.states, f.filtered);
    }

    #[test]
    fn uninformative_sites_give_prior() {
        let model = to_state_space(&Kernel::matern52(2.0, 1.5).unwrap()).unwrap();
        let t: Vec<f64> = (0..30).map(|i| (i as f64).powf(1.3) * 0.2).collect();
        let tr = model.transitions(&t).unwrap();
        let sites = SiteParams::uninformative(t.len());
        let f = kalman_filter(&tr, &model.h, &sites).unwrap();
        assert_eq!(f.log_z, 0.0);
        let s = rts_smoother(&f, &tr, &model.h).unwrap();
        for i in 0..t.len() {
            assert!(f.filtered.mean(i).norm() == 0.0);
            assert!((f.filtered.cov(i) - &model.pinf).norm() < 1e-10);
            assert!(s.marginals.m[i].abs() < 1e-14);
            assert_relative_eq!(s.marginals.v[i], 2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let model = matern12_model();
        let tr = model.transitions(&[0.0, 1.0]).unwrap();
        assert!(kalman_filter(&tr, &model.h, &SiteParams::uninformative(3)).is_err());
    }

    #[test]
    fn empty_input() {
        let model = matern12_model();
        let tr = model.transitions(&[]).unwrap();
        let f = kalman_filter(&tr, &model.h, &SiteParams::uninformative(0)).unwrap();
        let s = rts_smoother(&f, &tr, &model.h).unwrap();
        assert!(s.marginals.is_empty());
        assert_eq!(f.log_z, 0.0);
    }

    #[test]
    fn prediction_at_training_times_equals_smoother() {
        let model = to_state_space(&Kernel::matern32(1.0, 0.8).unwrap()).unwrap();
        let t = [0.0, 0.4, 1.1, 1.5, 2.7];
        let tr = model.transitions(&t).unwrap();
        let sites = SiteParams::from_pseudo(&[0.3, -0.2, 0.8, 1.0, 0.1], &[0.1; 5]).unwrap();
        let f = kalman_filter(&tr, &model.h, &sites).unwrap();
        let s = rts_smoother(&f, &tr, &model.h).unwrap();
        let p = predict_marginals(&model, &t, &f, &s, &t).unwrap();
        assert_eq!(p, s.marginals);
    }
}
