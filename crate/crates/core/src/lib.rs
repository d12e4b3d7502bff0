//! Diffeomorphic registration of triangulated surfaces with atrophy constraints.
//!
//! Surfaces are flowed by kernel-reduced velocity fields
//! `v(t, x) = Σ_l K(x, q_l(t)) α_l(t)` and matched to a target through a
//! current-based discrepancy. Inequality constraints force the motion to be
//! inward at every vertex (`pointwise_atrophy`) or the enclosed volume to be
//! non-increasing (`global_volume`). The constrained problem is solved by an
//! augmented Lagrangian loop whose inner problems use exact discrete adjoint
//! gradients and a limited-memory quasi-Newton minimizer.

pub mod attachment;
pub mod constraints;
pub mod dynamics;
pub mod error;
pub mod kernels;
pub mod mesh;
pub mod optim;

pub use attachment::{AttachmentKind, AttachmentSpec};
pub use constraints::{ConstraintMode, ConstraintResidual, ConstraintSpec};
pub use dynamics::{ControlPath, RigidControl, StatePath, TimeGrid};
pub use error::{Error, Result};
pub use kernels::{KernelFamily, KernelSpec};
pub use mesh::TriMesh;
pub use optim::{ALParams, ALState, InnerParams, Problem};

/// Points and per-vertex vectors.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3×3 matrices (rotations, Jacobians).
pub type Mat3 = nalgebra::Matrix3<f64>;
