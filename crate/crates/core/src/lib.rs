//! Sparse model selection for incomplete, multicollinear panel data with
//! unit fixed effects.
//!
//! The pipeline imputes missing cells by chained equations (random-effects
//! regression trees for continuous variables, classification trees for
//! binary ones), standardises and time-demeans every completed data set,
//! then runs a block-bootstrapped random lasso followed by stability
//! selection. Pooled and lasso-OLS baselines are available for comparison,
//! and [`datagen`] produces synthetic panels with known truth.

pub mod amirl;
pub mod datagen;
pub mod error;
pub mod imputation;
pub mod inference;
pub mod lasso;
pub mod linalg;
pub mod panel;
pub mod report;
pub mod seed;
pub mod trees;

pub use error::{AmirlError, Result};
