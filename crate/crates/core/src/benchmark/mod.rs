//! Synthetic articulated sequences and reconstruction metrics.

mod metrics;
mod synth;

pub use metrics::{
    chamfer, evaluate, evaluate_with_samples, fscore, joint_discontinuity, normalized_chamfer, MetricsRecord,
    CHAMFER_CONVENTION, EVAL_SAMPLES,
};
pub use synth::{cylinder_mesh, generate_sequence, Hinge, Primitive, Sequence, SyntheticSpec};
