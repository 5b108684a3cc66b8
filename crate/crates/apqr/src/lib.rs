//! Functional linear quantile regression with partial-quantile basis
//! extraction.
//!
//! The pipeline estimates conditional quantiles of a scalar response given
//! scalar covariates and a functional covariate observed on a shared grid:
//! curves are standardized per grid column, projected onto a small number of
//! basis directions, and the projected model is refit by smoothed quantile
//! regression. Three extraction methods are provided:
//!
//! - `apqr` — block relaxation on a Huber-smoothed check loss, updating all
//!   basis columns jointly while alternating with the scalar block;
//! - `fpc`  — principal components of the curve covariance;
//! - `pls`  — covariance-driven partial least squares with deflation.
//!
//! Supporting machinery includes an exact brute-force quantile regression
//! oracle for small problems, cross-validation and BIC selection of the
//! basis count, seeded simulation studies, and a CLI with reproducible
//! CSV/JSON outputs.

pub mod basis;
pub mod error;
pub mod io;
pub mod loss;
pub mod oracle;
pub mod pqr;
pub mod select;
pub mod sim;
pub mod util;

pub use basis::{
    fpc_basis, fpc_extract, pls_basis, pls_extract, project, standardize, BasisKind, BasisMatrix,
    CurveSet,
};
pub use error::{ApqrError, Result};
pub use loss::{
    approximation_gap_bound, check_loss, huber_derivative, huber_loss, HuberParams, QuantileLevel,
    SmoothingSchedule,
};
pub use oracle::{exact_qr_fit, smoothed_qr_fit, smoothed_qr_fit_detailed, DesignMatrix};
pub use pqr::{
    fit_apqr, fit_model, information, objective_ln, predict, residual_basis_gradient, score,
    ApqrInit, FitOptions, FittedQuantileModel, InformationMode, Method, PqrState, QuantileData,
};
