//! Trajectories, outlier smoothing and error metrics.

mod metrics;
mod smoothing;
mod trajectory;

pub use metrics::{evaluate, evaluate_with, to_angles, wrap_degrees, EvalOptions, EvalReport};
pub use smoothing::{max_speed, smooth_outliers, SmoothResult};
pub use trajectory::{
    read_activity_csv, write_activity_csv, CoordFrame, GroundTruth, Trajectory, TrajectoryEntry,
};
