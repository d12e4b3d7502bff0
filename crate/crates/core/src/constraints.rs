//! Pointwise-atrophy and global-volume constraints.
//!
//! With `u_k` the velocity of vertex `k` and `N_k` its area-weighted normal
//! recomputed on the current state:
//!
//! * pointwise: `r_k = u_k · N_k − ε |N_k|`, one row per vertex;
//! * global: `r = Σ_k u_k · N_k − ε`, one row.
//!
//! A row is satisfied when `r ≤ 0`. Vertices in no face have `N_k = 0` and
//! therefore a zero row that can never be violated.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::RigidControl;
use crate::kernels::KernelSpec;
use crate::mesh::{vertex_normals_at, TriMesh};
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    #[default]
    None,
    PointwiseAtrophy,
    GlobalVolume,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConstraintSpec {
    pub mode: ConstraintMode,
    epsilon: f64,
}

impl ConstraintSpec {
    pub fn new(mode: ConstraintMode, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "relaxation epsilon must be non-negative, got {epsilon}"
            )));
        }
        Ok(Self { mode, epsilon })
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Rows per time step.
    pub fn rows(&self, n_vertices: usize) -> usize {
        match self.mode {
            ConstraintMode::None => 0,
            ConstraintMode::PointwiseAtrophy => n_vertices,
            ConstraintMode::GlobalVolume => 1,
        }
    }

    /// Default feasibility tolerance on [`violation_norm`]: `1e-3` times the
    /// mean nonzero `|N_k|` of the template (pointwise) or its volume (global).
    /// Zero when there are no constraint rows.
    pub fn default_tolerance(&self, template: &TriMesh) -> f64 {
        match self.mode {
            ConstraintMode::None => 0.0,
            ConstraintMode::PointwiseAtrophy => {
                let lens: Vec<f64> = template
                    .vertex_normals()
                    .iter()
                    .map(|n| n.norm())
                    .filter(|&l| l > 0.0)
                    .collect();
                1e-3 * lens.iter().sum::<f64>() / lens.len().max(1) as f64
            }
            ConstraintMode::GlobalVolume => 1e-3 * template.volume().value.abs(),
        }
    }

    /// Residual rows from per-vertex velocities and normals.
    pub fn residual_from(&self, velocity: &[Vec3], normals: &[Vec3]) -> ConstraintResidual {
        let values = match self.mode {
            ConstraintMode::None => vec![],
            ConstraintMode::PointwiseAtrophy => normal_velocity(velocity, normals)
                .into_iter()
                .zip(normals)
                .map(|(lhs, n)| lhs - self.epsilon * n.norm())
                .collect(),
            ConstraintMode::GlobalVolume => {
                vec![normal_velocity(velocity, normals).iter().sum::<f64>() - self.epsilon]
            }
        };
        ConstraintResidual { values }
    }
}

/// `u_k · N_k` per vertex.
pub fn normal_velocity(velocity: &[Vec3], normals: &[Vec3]) -> Vec<f64> {
    velocity.iter().zip(normals).map(|(u, n)| u.dot(n)).collect()
}

/// Constraint rows at one time step. Positive entries are violations.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConstraintResidual {
    pub values: Vec<f64>,
}

impl ConstraintResidual {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn active_count(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }

    pub fn is_satisfied(&self) -> bool {
        self.values.iter().all(|&v| v <= 0.0)
    }
}

/// Matrix-free `C(q)`: row `k`, block `l` is `K(q_k, q_l) N_k(q, F)ᵀ`.
#[derive(Debug, Clone)]
pub struct ConstraintMatrix {
    kernel: KernelSpec,
    points: Vec<Vec3>,
    normals: Vec<Vec3>,
}

impl ConstraintMatrix {
    pub fn new(mesh: &TriMesh, kernel: KernelSpec) -> Self {
        Self {
            kernel,
            points: mesh.vertices().to_vec(),
            normals: vertex_normals_at(mesh.vertices(), mesh.faces()),
        }
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    /// `C(q) α`, length `n`.
    pub fn apply(&self, alpha: &[Vec3]) -> Result<Vec<f64>> {
        let v = self.kernel.apply(&self.points, alpha)?;
        Ok(normal_velocity(&v, &self.normals))
    }

    /// Dense `n × 3n` matrix, for inspection and tests.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.points.len();
        DMatrix::from_fn(n, 3 * n, |k, col| {
            let (l, c) = (col / 3, col % 3);
            self.kernel.eval(&self.points[k], &self.points[l]) * self.normals[k][c]
        })
    }
}

/// Velocity `K(q)α + [β]× q + τ` of each vertex.
pub fn vertex_velocity(
    kernel: &KernelSpec,
    q: &[Vec3],
    alpha: &[Vec3],
    rigid: Option<&RigidControl>,
) -> Result<Vec<Vec3>> {
    let mut v = kernel.apply(q, alpha)?;
    if let Some(r) = rigid {
        for (vk, qk) in v.iter_mut().zip(q) {
            *vk += r.beta.cross(qk) + r.tau;
        }
    }
    Ok(v)
}

/// Constraint residual of the mesh state under the given controls.
pub fn residual(
    spec: &ConstraintSpec,
    mesh_at_t: &TriMesh,
    alpha: &[Vec3],
    rigid: Option<&RigidControl>,
    kernel: &KernelSpec,
) -> Result<ConstraintResidual> {
    let v = vertex_velocity(kernel, mesh_at_t.vertices(), alpha, rigid)?;
    Ok(spec.residual_from(&v, &mesh_at_t.vertex_normals()))
}

/// `√(δt Σ_t |r(t)⁺|²)`.
pub fn violation_norm(residuals: &[ConstraintResidual], dt: f64) -> f64 {
    (dt * residuals
        .iter()
        .flat_map(|r| r.values.iter())
        .map(|&v| v.max(0.0).powi(2))
        .sum::<f64>())
    .sqrt()
}
