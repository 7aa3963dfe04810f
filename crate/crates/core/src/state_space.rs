//! Continuous-time state-space (SDE) form of a kernel and its exact
//! discretisation between observation times.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::kernel::{Kernel, MaternOrder};
use crate::linalg::{self, block_diag, concat, expm, kron, max_abs, symmetrize};

/// `df = F f dt + L dβ`, `E[dβ dβᵀ] = Qc dt`, `f(t) = hᵀ f`.
#[derive(Debug, Clone)]
pub struct StateSpaceModel {
    pub f: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub qc: DMatrix<f64>,
    pub h: DVector<f64>,
    pub pinf: DMatrix<f64>,
}

impl StateSpaceModel {
    pub fn state_dim(&self) -> usize {
        self.f.nrows()
    }

    pub fn noise_dim(&self) -> usize {
        self.l.ncols()
    }

    /// `hᵀ Pinf h`, the prior marginal variance.
    pub fn prior_variance(&self) -> f64 {
        self.h.dot(&(&self.pinf * &self.h))
    }

    /// `hᵀ expm(F τ) Pinf h`, the covariance implied by the SDE at lag `τ ≥ 0`.
    pub fn covariance_at(&self, tau: f64) -> f64 {
        let a = expm(&(&self.f * tau.abs()));
        self.h.dot(&(a * &self.pinf * &self.h))
    }

    pub fn discretize(&self, dt: f64) -> Result<DiscreteTransition> {
        discretize(self, dt)
    }

    /// Per-step transitions for strictly increasing `t`; step 0 is the
    /// stationary prior (`A = 0`, `Q = Pinf`).
    pub fn transitions(&self, t: &[f64]) -> Result<Transitions> {
        Transitions::new(self, t)
    }
}

fn leaf_model(kernel: &Kernel) -> Result<StateSpaceModel> {
    match *kernel {
        Kernel::Matern {
            order,
            variance,
            lengthscale,
        } => {
            let d = order.state_dim();
            let (f, qc) = match order {
                MaternOrder::Half => {
                    let lam = 1.0 / lengthscale;
                    (DMatrix::from_element(1, 1, -lam), 2.0 * variance * lam)
                }
                MaternOrder::ThreeHalves => {
                    let lam = 3f64.sqrt() / lengthscale;
                    (
                        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -lam * lam, -2.0 * lam]),
                        4.0 * variance * lam.powi(3),
                    )
                }
                MaternOrder::FiveHalves => {
                    let lam = 5f64.sqrt() / lengthscale;
                    #[rustfmt::skip]
                    let f = DMatrix::from_row_slice(3, 3, &[
                        0.0, 1.0, 0.0,
                        0.0, 0.0, 1.0,
                        -lam.powi(3), -3.0 * lam * lam, -3.0 * lam,
                    ]);
                    (f, 16.0 / 3.0 * variance * lam.powi(5))
                }
            };
            let mut l = DMatrix::zeros(d, 1);
            l[(d - 1, 0)] = 1.0;
            let qc = DMatrix::from_element(1, 1, qc);
            let mut h = DVector::zeros(d);
            h[0] = 1.0;
            let pinf = stationary_covariance(&f, &l, &qc, None, order_label(order))?;
            Ok(StateSpaceModel { f, l, qc, h, pinf })
        }
        Kernel::Cosine {
            variance,
            frequency,
        } => {
            let f = DMatrix::from_row_slice(2, 2, &[0.0, -frequency, frequency, 0.0]);
            let l = DMatrix::identity(2, 2);
            let qc = DMatrix::zeros(2, 2);
            let supplied = DMatrix::identity(2, 2) * variance;
            let pinf = stationary_covariance(&f, &l, &qc, Some(&supplied), "cosine")?;
            Ok(StateSpaceModel {
                f,
                l,
                qc,
                h: DVector::from_vec(vec![1.0, 0.0]),
                pinf,
            })
        }
        _ => unreachable!("leaf_model called on composite kernel"),
    }
}

fn order_label(order: MaternOrder) -> &'static str {
    match order {
        MaternOrder::Half => "matern12",
        MaternOrder::ThreeHalves => "matern32",
        MaternOrder::FiveHalves => "matern52",
    }
}

/// Converts a kernel to its SDE form. Sums stack blocks diagonally;
/// a product is supported only for one cosine times one Matérn.
pub fn to_state_space(kernel: &Kernel) -> Result<StateSpaceModel> {
    kernel.validate()?;
    match kernel {
        Kernel::Matern { .. } | Kernel::Cosine { .. } => leaf_model(kernel),
        Kernel::Sum(children) => {
            let parts = children.iter().map(to_state_space).collect::<Result<Vec<_>>>()?;
            let pick = |g: fn(&StateSpaceModel) -> &DMatrix<f64>| {
                parts.iter().map(|p| g(p).clone()).collect::<Vec<_>>()
            };
            Ok(StateSpaceModel {
                f: block_diag(&pick(|p| &p.f)),
                l: block_diag(&pick(|p| &p.l)),
                qc: block_diag(&pick(|p| &p.qc)),
                h: concat(&parts.iter().map(|p| p.h.clone()).collect::<Vec<_>>()),
                pinf: block_diag(&pick(|p| &p.pinf)),
            })
        }
        Kernel::Product(children) => {
            let (cos, mat) = match children.as_slice() {
                [c @ Kernel::Cosine { .. }, m @ Kernel::Matern { .. }]
                | [m @ Kernel::Matern { .. }, c @ Kernel::Cosine { .. }] => (c, m),
                _ => {
                    return Err(Error::UnsupportedKernel(format!(
                        "only prod(cosine, matern) has a state-space form; got {kernel}"
                    )))
                }
            };
            let c = leaf_model(cos)?;
            let m = leaf_model(mat)?;
            let ic = DMatrix::identity(c.state_dim(), c.state_dim());
            let im = DMatrix::identity(m.state_dim(), m.state_dim());
            let cos_var = cos.variance();
            let f = kron(&c.f, &im) + kron(&ic, &m.f);
            let l = kron(&ic, &m.l);
            let qc = kron(&(DMatrix::identity(2, 2) * cos_var), &m.qc);
            let pinf = kron(&c.pinf, &m.pinf);
            let h = c.h.kronecker(&m.h);
            let b = &l * &qc * l.transpose();
            let residual = linalg::lyapunov_residual(&f, &pinf, &b);
            if residual > 1e-10 * max_abs(&pinf).max(1.0) {
                return Err(Error::Lyapunov {
                    block: "prod(cosine, matern)".into(),
                    reason: format!("residual {residual:e}"),
                });
            }
            Ok(StateSpaceModel { f, l, qc, h, pinf })
        }
    }
}

/// Solves `F Pinf + Pinf Fᵀ + L Qc Lᵀ = 0`.
///
/// Blocks without diffusion (`L Qc Lᵀ = 0`, e.g. a rotation generator) have
/// no unique solution; for those the `supplied` covariance is checked
/// against the equation and returned unchanged.
pub fn stationary_covariance(
    f: &DMatrix<f64>,
    l: &DMatrix<f64>,
    qc: &DMatrix<f64>,
    supplied: Option<&DMatrix<f64>>,
    block: &str,
) -> Result<DMatrix<f64>> {
    let b = l * qc * l.transpose();
    let fail = |reason: String| Error::Lyapunov {
        block: block.to_string(),
        reason,
    };
    let p = if max_abs(&b) == 0.0 {
        supplied
            .cloned()
            .ok_or_else(|| fail("zero diffusion and no stationary covariance supplied".into()))?
    } else {
        linalg::solve_lyapunov(f, &b).ok_or_else(|| fail("singular Lyapunov operator".into()))?
    };
    let residual = linalg::lyapunov_residual(f, &p, &b);
    if residual > 1e-10 * max_abs(&p).max(f64::MIN_POSITIVE) {
        return Err(fail(format!("residual {residual:e} too large")));
    }
    Ok(p)
}

#[derive(Debug, Clone)]
pub struct DiscreteTransition {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// `f64::INFINITY` marks the stationary prior step.
    pub dt: f64,
}

impl DiscreteTransition {
    pub fn stationary(model: &StateSpaceModel) -> DiscreteTransition {
        let d = model.state_dim();
        DiscreteTransition {
            a: DMatrix::zeros(d, d),
            q: model.pinf.clone(),
            dt: f64::INFINITY,
        }
    }
}

/// `A = expm(F Δt)`, `Q = Pinf − A Pinf Aᵀ` with small negative eigenvalues
/// clamped to zero.
pub fn discretize(model: &StateSpaceModel, dt: f64) -> Result<DiscreteTransition> {
    if !(dt >= 0.0) || dt.is_infinite() {
        return Err(Error::NegativeTimeStep(dt));
    }
    let d = model.state_dim();
    if dt == 0.0 {
        return Ok(DiscreteTransition {
            a: DMatrix::identity(d, d),
            q: DMatrix::zeros(d, d),
            dt,
        });
    }
    let a = expm(&(&model.f * dt));
    let mut q = &model.pinf - &a * &model.pinf * a.transpose();
    symmetrize(&mut q);
    let tol = 1e-12 * max_abs(&model.pinf).max(1.0);
    let eig = SymmetricEigen::new(q.clone());
    let min = eig.eigenvalues.min();
    if min < -tol {
        return Err(Error::IndefiniteProcessNoise { dt, eigenvalue: min });
    }
    if min < 0.0 {
        let clamped = eig.eigenvalues.map(|x| x.max(0.0));
        q = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
        symmetrize(&mut q);
    }
    Ok(DiscreteTransition { a, q, dt })
}

/// The transition into each time point. Equal step sizes share one
/// discretisation.
#[derive(Debug, Clone)]
pub struct Transitions {
    table: Vec<Arc<DiscreteTransition>>,
    index: Vec<u32>,
}

impl Transitions {
    pub fn new(model: &StateSpaceModel, t: &[f64]) -> Result<Transitions> {
        let mut table = Vec::new();
        let mut index = Vec::with_capacity(t.len());
        let mut cache: HashMap<u64, u32> = HashMap::new();
        if !t.is_empty() {
            table.push(Arc::new(DiscreteTransition::stationary(model)));
            index.push(0);
        }
        for i in 1..t.len() {
            let dt = t[i] - t[i - 1];
            if !(dt > 0.0) {
                return Err(Error::NotIncreasing(i));
            }
            // Steps that agree to ~1e-13 relative share a slot; grids built
            // with floating-point arithmetic rarely repeat bit-for-bit.
            let key = dt.to_bits() >> 8;
            let slot = match cache.get(&key) {
                Some(&slot) => slot,
                None => {
                    let slot = table.len() as u32;
                    table.push(Arc::new(discretize(model, dt)?));
                    cache.insert(key, slot);
                    slot
                }
            };
            index.push(slot);
        }
        Ok(Transitions { table, index })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, i: usize) -> &DiscreteTransition {
        &self.table[self.index[i] as usize]
    }

    /// Number of distinct discretisations computed.
    /// Position of step `i`'s discretisation among the distinct ones.
    pub fn slot(&self, i: usize) -> usize {
        self.index[i] as usize
    }

    pub fn distinct(&self) -> usize {
        self.table.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn matern12_coefficients() {
        let m = to_state_space(&Kernel::matern12(1.0, 2.0).unwrap()).unwrap();
        assert_relative_eq!(m.f[(0, 0)], -0.5);
        assert_relative_eq!(m.l[(0, 0)], 1.0);
        assert_relative_eq!(m.qc[(0, 0)], 1.0);
        assert_relative_eq!(m.h[0], 1.0);
        assert_relative_eq!(m.pinf[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn stationary_covariance_examples() {
        let f = DMatrix::from_element(1, 1, -0.5);
        let l = DMatrix::from_element(1, 1, 1.0);
        let qc = DMatrix::from_element(1, 1, 1.0);
        let p = stationary_covariance(&f, &l, &qc, None, "test").unwrap();
        assert_relative_eq!(p[(0, 0)], 1.0, epsilon = 1e-14);

        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let given = DMatrix::identity(2, 2) * 3.0;
        let p = stationary_covariance(&rot, &DMatrix::identity(2, 2), &DMatrix::zeros(2, 2), Some(&given), "cos")
            .unwrap();
        assert_eq!(p, given);

        let err = stationary_covariance(&rot, &DMatrix::identity(2, 2), &DMatrix::zeros(2, 2), None, "cos")
            .unwrap_err();
        assert!(err.to_string().contains("cos"));
    }

    #[test]
    fn cosine_rotation_generator() {
        let m = to_state_space(&Kernel::cosine(1.0, PI).unwrap()).unwrap();
        assert_eq!(m.f, DMatrix::from_row_slice(2, 2, &[0.0, -PI, PI, 0.0]));
        assert_eq!(m.h, DVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(m.pinf, DMatrix::identity(2, 2));
        for tau in [0.0, 0.25, 0.5, 1.3] {
            assert_relative_eq!(m.covariance_at(tau), (PI * tau).cos(), epsilon = 1e-12);
        }
        let tr = m.discretize(0.5).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!(max_abs(&(&tr.a - want)) < 1e-12);
    }

    #[test]
    fn sum_is_block_diagonal() {
        let k = Kernel::sum(vec![
            Kernel::matern12(1.0, 1.0).unwrap(),
            Kernel::matern12(1.0, 1.0).unwrap(),
        ])
        .unwrap();
        let m = to_state_space(&k).unwrap();
        assert_eq!(m.state_dim(), 2);
        assert_relative_eq!(m.prior_variance(), 2.0, epsilon = 1e-14);
        assert_eq!(m.f[(0, 1)], 0.0);
    }

    #[test]
    fn unsupported_products_rejected() {
        let k = Kernel::product(vec![
            Kernel::matern12(1.0, 1.0).unwrap(),
            Kernel::matern32(1.0, 1.0).unwrap(),
        ])
        .unwrap();
        assert!(matches!(to_state_space(&k), Err(Error::UnsupportedKernel(_))));
        let k = Kernel::parse("prod(cosine(period=2), sum(matern12(len=1), matern12(len=2)))").unwrap();
        assert!(matches!(to_state_space(&k), Err(Error::UnsupportedKernel(_))));
    }

    #[test]
    fn discretize_matern12_closed_form() {
        let m = to_state_space(&Kernel::matern12(1.0, 1.0).unwrap()).unwrap();
        let tr = m.discretize(1.0).unwrap();
        assert_relative_eq!(tr.a[(0, 0)], (-1.0f64).exp(), epsilon = 1e-14);
        assert_relative_eq!(tr.q[(0, 0)], 1.0 - (-2.0f64).exp(), epsilon = 1e-14);
        let zero = m.discretize(0.0).unwrap();
        assert_eq!(zero.a, DMatrix::identity(1, 1));
        assert_eq!(zero.q, DMatrix::zeros(1, 1));
        assert!(matches!(m.discretize(-1.0), Err(Error::NegativeTimeStep(_))));
    }

    #[test]
    fn transitions_share_equal_steps() {
        let m = to_state_space(&Kernel::matern32(1.0, 1.0).unwrap()).unwrap();
        let t: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        let tr = m.transitions(&t).unwrap();
        assert_eq!(tr.len(), 100);
        assert!(tr.distinct() <= 4, "{} distinct", tr.distinct());
        assert!(tr.get(0).dt.is_infinite());
        assert!(matches!(m.transitions(&[0.0, 1.0, 1.0]), Err(Error::NotIncreasing(2))));
    }
}
