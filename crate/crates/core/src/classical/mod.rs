//! Classical reconstruction baselines: Laplacian-regularized Wiener
//! filtering, Richardson-Lucy and primal-dual total variation.
//!
//! All three assume the circular boundary model of the forward operator.

mod autotune;
mod rl;
mod tv;
mod wiener;

pub use autotune::{
    autotune_rl, autotune_tv, autotune_wiener, logspace, Tuned, RL_ITERATION_GRID,
};
pub use rl::{richardson_lucy, richardson_lucy_from, RichardsonLucy, RlParams};
pub use tv::{
    divergence, forward_gradient, project_dual_ball, tv_deconvolve, tv_norm, TvParams, TvSolver,
};
pub use wiener::{laplacian_transfer, wiener_deconvolve, WienerFilter, WienerParams};
