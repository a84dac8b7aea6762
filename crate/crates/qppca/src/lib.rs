//! Quantile-projected principal component analysis for characteristics-based
//! quantile factor models.
//!
//! A panel of outcomes `y_it` (say, excess returns of n securities over T
//! days) is modeled at each quantile level as `y_it = g(x_i)' f_t + u_it`,
//! where the loadings `g` are unknown functions of observed unit
//! characteristics `x_i` and the idiosyncratic error satisfies a conditional
//! quantile restriction. Estimation runs in three steps:
//!
//! 1. per period, project the outcomes onto an additive Chebyshev sieve of
//!    the characteristics by quantile regression ([`quantreg`], [`basis`]);
//! 2. extract factors and projected loadings from the fitted panel by
//!    principal components ([`qppca`]);
//! 3. recover the loading functions by projecting the first-stage
//!    coefficients onto the estimated factors ([`qppca`]).
//!
//! The number of factors — which may differ across quantiles — is selected
//! by thresholding or eigenvalue ratios ([`factor_count`]). Least-squares
//! projected PCA and plain PCA comparators live in [`baselines`], a
//! reproducible Monte Carlo harness in [`simulate`], and CSV/JSON plumbing
//! plus the command-line entry points in [`io`] and [`cli`].
//!
//! ```
//! use qppca::simulate::{simulate_panel, DgpSpec};
//! use qppca::qppca_pipeline;
//!
//! let spec = DgpSpec::location_model(300, 10, 2, 7);
//! let sim = simulate_panel(&spec).unwrap();
//! let estimate = qppca_pipeline(&sim.panel, 0.5, 3, 2).unwrap();
//! assert_eq!(estimate.f_hat.nrows(), 10);
//! assert_eq!(estimate.g_hat.nrows(), 300);
//! ```

// negated float comparisons like `!(x > 0.0)` double as NaN guards and must
// stay in that form
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod basis;
pub mod cli;
pub mod error;
pub mod factor_count;
pub mod io;
pub mod panel;
pub mod qppca;
pub mod quantreg;
pub mod simulate;

pub use error::{Error, Result};
pub use panel::{CharacteristicsMatrix, PanelData};
pub use qppca::{qppca_pipeline, qppca_pipeline_with, QppcaEstimate};
pub use quantreg::{check_loss, fit_quantile, CheckLossProblem, QuantileFitResult, SieveFit};
