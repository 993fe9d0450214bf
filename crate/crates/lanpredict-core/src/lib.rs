//! Simulation and verification laboratory for plug-in prediction in a
//! coupled bivariate Ornstein-Uhlenbeck model.
//!
//! The process solves `dX_t = -Q X_t dt + dW_t` with
//! `Q = [[alpha, beta], [beta, alpha]]` on the stationarity region
//! `alpha > |beta|`. The crate provides
//!
//! * closed-form matrix calculus for `Q` (spectral functions, transition
//!   law, stationary covariance, Fisher information) in [`model`],
//! * exact path simulation with reproducible counter-based RNG streams in
//!   [`simulate`],
//! * maximum-likelihood drift estimation from discretized paths in
//!   [`estimate`],
//! * Monte Carlo estimation of normalized prediction risks, checked against
//!   the local-asymptotic-minimax bound `h^2 exp(-2hQ)`, in [`risk`],
//! * CSV/JSON report writers in [`output`].
//!
//! All randomized drivers are deterministic given a master seed, independent
//! of worker-thread count.

pub mod error;
pub mod estimate;
pub mod model;
pub mod output;
pub mod risk;
pub mod simulate;

pub use error::{Error, Result};
pub use estimate::{MleResult, ScoreShape, ScoreStat, SufficientStats};
pub use model::{Horizon, Mat2, ReparamXi, Spectral, Theta, ThetaBox, Vec2};
pub use risk::{ConvergenceReport, Estimator, ExperimentConfig, RiskEstimate, SRule};
pub use simulate::{PathGrid, RngStream, SamplePath};
