//! Tree learners used by the imputation engine.

mod cart;
mod lmm;
mod reem;

pub use cart::{
    fit_classification_tree, fit_regression_tree, predict_class, predict_hard_class, DecisionTree,
    TreeControls, TreeKind,
};
pub use lmm::{fit_lmm_on_leaves, LmmControls, LmmFit};
pub use reem::{fit_reem, ReemControls, ReemModel};
