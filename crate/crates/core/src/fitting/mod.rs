//! Recovery of canonical shape, rig and per-frame motion from observed
//! point clouds (and optionally silhouettes).

mod checkpoint;
mod config;
mod fit;
mod loss;
mod optim;
mod state;

pub use checkpoint::{loss_csv, Checkpoint};
pub use config::{FitConfig, LossWeights, StepSizes};
pub use fit::{
    deformed_mesh, fit, fit_detailed, mean_normalized_chamfer, optimize, relative_rotation_angle, FitOutcome,
    DIVERGENCE_FACTOR, DIVERGENCE_STEPS,
};
pub use loss::{gradients, total_loss, Gradients, LossBreakdown};
pub use state::{
    kmeans_bones, FitState, FrameObservation, LossRecord, PinholeCamera, Silhouette, SurfaceSamples,
};
