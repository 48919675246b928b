//! Penalized-spline additive models: spline bases, penalized least squares
//! with GCV smoothing selection, the formula language, and banks of 48
//! per-half-hour models.

mod bank;
pub mod bspline;
mod formula;
mod model;
mod nested;
mod pls;

pub use bank::{
    complete_rows, fit_gam_bank, fit_gam_bank_with, gather, predict_gam, seasonality_gam, GamBank, GamOptions,
    GamPrediction, HALF_HOURS,
};
pub use bspline::{bspline_design, BasisKind, SplineBasis};
pub use formula::{parse_formula, Formula, Term, MIN_DIM, NESTED_FORMULAS, REFERENCE_FORMULA, SEASONALITY_FORMULA};
pub use model::{build_terms, fit_model, term_block, FitOptions, GamModel, Marginal, TermBasis, TermDesign};
pub use nested::{f_tests, nested_f, nested_gam_suite, FTest, NestedRow, WindowScore};
pub use pls::{default_lambda_grid, fit_penalized, select_lambda, PenalizedFit, Reduced};
