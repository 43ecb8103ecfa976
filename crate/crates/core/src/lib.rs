//! Joint fairness models for group-specific sparse logistic regression.
//!
//! Group coefficient vectors are fit jointly under an equalized-odds
//! fairness penalty, a fused similarity penalty and per-group lasso
//! penalties. The non-smooth penalties are smoothed and the problem is
//! solved with an accelerated proximal gradient method.

pub mod data;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod penalty;
pub mod simulation;
pub mod smoothing;
pub mod solver;
pub mod tuning;

pub use data::{load_csv, read_csv, standardize, write_csv, GroupData, GroupedDesign, StandardizationParams};
pub use error::{JfmError, Result};
pub use models::{
    fit_group_ignorant, fit_group_separate, fit_jfm, fit_model, fit_sfm, predict, predict_design, FitOptions,
    FitResult, ModelKind,
};
pub use penalty::PenaltyOperator;
pub use solver::{aspg_solve, Convergence, LipschitzMode, Problem, SolverConfig};
