//! Quasi-rigid blend skinning for piece-wise rigid articulated objects.
//!
//! The crate is organised bottom-up:
//!
//! - [`mesh`]: triangle meshes, OBJ I/O, nearest-vertex queries, exact
//!   surface geodesics and area-weighted sampling.
//! - [`dq`]: rigid transforms and unit dual quaternions, including the
//!   dual-quaternion and linear blends.
//! - [`skinning`]: Gaussian bones, temperature-sharpened skinning weights,
//!   geodesic point assignment, the sparse skinning loss and the
//!   forward/inverse quasi-rigid deformation.
//! - [`field`]: the explicit canonical SDF and color grids, Laplace-CDF
//!   density, volume rendering and iso-surface extraction.
//! - [`benchmark`]: synthetic hinge sequences and Chamfer / F-score metrics.
//! - [`fitting`]: the gradient-based recovery of shape, rig and motion.
//! - [`io`]: the little-endian binary interchange formats.

pub mod autodiff;
pub mod benchmark;
pub mod dq;
pub mod error;
pub mod field;
pub mod fitting;
pub mod io;
pub mod mesh;
pub mod scalar;
pub mod skinning;
pub mod spatial;

pub use dq::{DualQuaternion, RigidTransform};
pub use field::{Aabb, ColorGrid, Ray, RenderConfig, SdfGrid};
pub use error::{Error, Result};

pub use skinning::{
    AssignmentVector, BoneSet, DeltaWeightField, PoseState, SkinningBackend, SkinningWeights,
};
pub use mesh::{PointCloud, TriangleMesh};

pub use nalgebra;
pub use nalgebra::Vector3;
