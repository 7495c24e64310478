//! Position inference from measurement sets.

mod ekf;
mod ellipse;
mod filters;
mod model;
mod nls;

pub use ekf::{ekf_step, ekf_step_with, EkfOutcome, MotionModel, NlosPolicy, TrackState};
pub use ellipse::{chi2_2dof_quantile, error_ellipse_from_covariance, error_ellipse_from_samples, ErrorEllipse};
pub use filters::{
    map_constraint_filter, residual_nlos_filter, MapConstraint, MapFilterResult, ResidualDecision,
    DEFAULT_RESIDUAL_THRESHOLD_RAD,
};
pub use model::{jacobian_row, model_value, observation, residual};
pub use nls::{solve_nls, Algorithm, InitPolicy, PositionEstimate, SolveDim, SolverConfig};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("degenerate geometry at base station {0}")]
    DegenerateGeometry(u32),
    #[error("tdoa from base station {0} has no reference")]
    MissingReference(u32),
    #[error("unknown base station {0}")]
    UnknownBaseStation(u32),
    #[error("rank deficient: {rows} rows for {unknowns} unknowns")]
    RankDeficient { rows: usize, unknowns: usize },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("covariance is not positive semidefinite")]
    NotPsd,
    #[error("degenerate covariance")]
    DegenerateCovariance,
    #[error("need at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("invalid polygon")]
    InvalidPolygon,
    #[error("non-finite state")]
    NonFinite,
}
