//! Cluster-level diagnostics for linear regression with one-way clustering.
//!
//! The crate computes, from per-cluster Gram blocks `X_g'X_g` and moment
//! vectors `X_g'y_g`:
//!
//! * OLS estimates, empirical scores and the CV1 cluster-robust variance;
//! * delete-one-cluster estimates and the jackknife variances CV3 and CV3J;
//! * cluster leverage, partial leverage, summary statistics and the
//!   effective number of clusters;
//! * wild cluster restricted bootstrap p-values and confidence intervals;
//! * a Monte-Carlo harness for rejection-frequency experiments.
//!
//! ```
//! use clustdiag::{data::PreparedDesign, diagnostics, ols};
//! use clustdiag::nalgebra::{DMatrix, DVector};
//!
//! // mean-only regression, clusters of size 2, 3 and 5
//! let y = DVector::from_vec(vec![1.0, 2.0, 0.5, 1.5, 3.0, 2.0, 2.5, 1.0, 0.0, 4.0]);
//! let x = DMatrix::from_element(10, 1, 1.0);
//! let design = PreparedDesign::from_parts(y, x, &[0, 0, 1, 1, 1, 2, 2, 2, 2, 2], 0)?;
//! let model = ols::fit_ols(&design)?;
//! let lev = diagnostics::leverage(&design, &model);
//! assert!((lev[1] - 0.3).abs() < 1e-12);
//! # Ok::<(), clustdiag::Error>(())
//! ```

pub mod bootstrap;
pub mod data;
pub mod diagnostics;
mod error;
pub mod jackknife;
pub mod linalg;
pub mod ols;
pub mod oracles;
pub mod report;
pub mod sim;
pub mod tdist;

pub use error::{Error, Result};

pub use nalgebra;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/cluster-robust.md")]
    mod cluster_robust {}
    #[doc = include_str!("../../../book/src/leverage.md")]
    mod leverage {}
    #[doc = include_str!("../../../book/src/jackknife.md")]
    mod jackknife {}
    #[doc = include_str!("../../../book/src/reporting.md")]
    mod reporting {}
    #[doc = include_str!("../../../book/src/bootstrap.md")]
    mod bootstrap {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
