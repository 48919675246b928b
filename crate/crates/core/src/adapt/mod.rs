//! State-space adaptation of the normalized GAM effects: Kalman recursion,
//! static and dynamic variants, and the viking-lite online-variance filter.

mod kalman;
mod run;

pub use kalman::{kalman_step, KalmanState, NoiseConfig, ProcessNoise};
pub use run::{
    adapt_bank, default_ratio_grid, grid_search_dynamic, run_dynamic, run_filter, run_static, run_viking, AdaptConfig,
    AdaptMethod, AdaptOutput, DynamicFit, KalmanRun, VikingHyper, VikingRun, VIKING_CLIP,
};
