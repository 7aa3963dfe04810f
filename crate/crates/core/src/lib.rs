//! Linear-time approximate inference for Gaussian processes with
//! non-Gaussian likelihoods on one-dimensional inputs.
//!
//! The GP prior is rewritten as a linear SDE ([`state_space`]) so that
//! every conjugate regression on Gaussian pseudo-data is a Kalman filter
//! and RTS smoother pass ([`kalman`]). Non-conjugate likelihoods are
//! handled by natural-gradient variational inference or EP, both of which
//! only ever update per-point Gaussian sites ([`inference`]).
//!
//! ```
//! use ssvi_core::{data, run_inference, InferenceConfig, Kernel, Likelihood};
//!
//! let coal = data::coal_binned();
//! let kernel = Kernel::matern52(1.0, 10.0).unwrap();
//! let lik = Likelihood::poisson(coal.t[1] - coal.t[0]).unwrap();
//! let out = run_inference(&kernel, &lik, &coal.t, &coal.y, &InferenceConfig::default()).unwrap();
//! assert_eq!(out.posterior.marginals.len(), 200);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod data;
pub mod dense;
pub mod error;
pub mod inference;
pub mod kalman;
pub mod kernel;
pub mod learning;
pub mod likelihood;
pub mod linalg;
pub mod objectives;
pub mod quadrature;
pub mod sites;
pub mod state_space;

pub use dense::{dense_cvi, dense_regression, DenseGram};
pub use error::{Error, Result};
pub use inference::{run_inference, Engine, Init, InferenceConfig, InferenceOutcome, Mode, Posterior, RhoSchedule};
pub use kalman::{kalman_filter, predict_marginals, rts_smoother, PosteriorMarginals};
pub use kernel::{Kernel, MaternOrder};
pub use learning::{fit, AdamConfig, FitConfig, FitResult, TraceRow};
pub use likelihood::Likelihood;
pub use objectives::{HyperParams, ObjectiveKind};
pub use quadrature::{gh_rule, QuadratureRule};
pub use sites::SiteParams;
pub use state_space::{to_state_space, StateSpaceModel, Transitions};
