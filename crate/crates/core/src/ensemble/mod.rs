//! Regression trees, random forests with optional block resampling, and
//! componentwise boosting of penalized-spline learners.

mod boost;
mod forest;
mod frame;
mod tree;

pub use boost::{boost_model, fit_gam_boost, predict_boost, BoostBank, BoostConfig, BoostModel};
pub use forest::{block_bootstrap_indices, fit_forest, Bootstrap, Forest, ForestConfig, DEFAULT_BLOCK};
pub use frame::{fit_forest_model, ForestModel};
pub use tree::{fit_tree, Tree, TreeConfig, TreeNode};
