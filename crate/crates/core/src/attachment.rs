//! Data attachment between the deformed template and the target.
//!
//! The current discrepancy represents each surface by its area-weighted face
//! normals located at face centroids and takes the squared RKHS norm of the
//! difference:
//!
//! ```text
//! D(S, T) = Σ_{f,f'∈S} k(c_f, c_f') N_f·N_f' − 2 Σ_{f∈S, g∈T} k(c_f, d_g) N_f·M_g
//!         + Σ_{g,g'∈T} k(d_g, d_g') M_g·M_g'
//! ```

use rayon::prelude::*;

use crate::kernels::KernelSpec;
use crate::mesh::{face_centroid_at, face_normal_at, face_normal_vjp, TriMesh};
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttachmentKind {
    /// Current matching with its own kernel.
    Current(KernelSpec),
    /// `½ Σ_k |q_k − y_k|²` against the target's vertices, one-to-one.
    /// Needs identical vertex counts; used for closed-form checks.
    Landmark,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttachmentSpec {
    pub kind: AttachmentKind,
    weight: f64,
}

impl AttachmentSpec {
    pub fn new(kind: AttachmentKind, weight: f64) -> Result<Self> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "attachment weight must be positive, got {weight}"
            )));
        }
        Ok(Self { kind, weight })
    }

    pub fn current(kernel: KernelSpec, weight: f64) -> Result<Self> {
        Self::new(AttachmentKind::Current(kernel), weight)
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }
}

/// Target-side data precomputed once per registration.
#[derive(Debug, Clone)]
pub struct Target {
    spec: AttachmentSpec,
    vertices: Vec<Vec3>,
    centroids: Vec<Vec3>,
    normals: Vec<Vec3>,
    self_term: f64,
}

impl Target {
    pub fn new(spec: AttachmentSpec, target: &TriMesh) -> Result<Self> {
        let empty = match spec.kind {
            AttachmentKind::Current(_) => target.n_faces() == 0,
            AttachmentKind::Landmark => target.n_vertices() == 0,
        };
        if empty {
            return Err(Error::EmptyMesh);
        }
        let centroids = target.face_centroids();
        let normals = target.face_normals();
        let self_term = match spec.kind {
            AttachmentKind::Current(k) => pair_sum(&k, &centroids, &normals, &centroids, &normals),
            AttachmentKind::Landmark => 0.0,
        };
        Ok(Self {
            spec,
            vertices: target.vertices().to_vec(),
            centroids,
            normals,
            self_term,
        })
    }

    pub fn spec(&self) -> &AttachmentSpec {
        &self.spec
    }

    /// Unweighted discrepancy of the surface `(q, faces)` to the target.
    pub fn discrepancy(&self, q: &[Vec3], faces: &[[usize; 3]]) -> Result<f64> {
        match self.spec.kind {
            AttachmentKind::Current(k) => {
                if faces.is_empty() {
                    return Err(Error::EmptyMesh);
                }
                let c: Vec<Vec3> = faces.iter().map(|f| face_centroid_at(q, f)).collect();
                let n: Vec<Vec3> = faces.iter().map(|f| face_normal_at(q, f)).collect();
                Ok(pair_sum(&k, &c, &n, &c, &n) - 2.0 * pair_sum(&k, &c, &n, &self.centroids, &self.normals)
                    + self.self_term)
            }
            AttachmentKind::Landmark => {
                self.check_landmarks(q)?;
                Ok(0.5 * q.iter().zip(&self.vertices).map(|(a, b)| (a - b).norm_squared()).sum::<f64>())
            }
        }
    }

    /// Gradient of the unweighted discrepancy with respect to `q`.
    pub fn gradient(&self, q: &[Vec3], faces: &[[usize; 3]]) -> Result<Vec<Vec3>> {
        match self.spec.kind {
            AttachmentKind::Current(k) => {
                if faces.is_empty() {
                    return Err(Error::EmptyMesh);
                }
                let c: Vec<Vec3> = faces.iter().map(|f| face_centroid_at(q, f)).collect();
                let n: Vec<Vec3> = faces.iter().map(|f| face_normal_at(q, f)).collect();
                let per_face: Vec<(Vec3, Vec3)> = (0..faces.len())
                    .into_par_iter()
                    .map(|f| {
                        let mut d_normal = Vec3::zeros();
                        let mut d_centroid = Vec3::zeros();
                        for (cg, ng) in c.iter().zip(&n) {
                            let d = c[f] - cg;
                            let (g, dg) = k.profile(d.norm_squared());
                            d_normal += 2.0 * g * ng;
                            d_centroid += (4.0 * dg * n[f].dot(ng)) * d;
                        }
                        for (cg, ng) in self.centroids.iter().zip(&self.normals) {
                            let d = c[f] - cg;
                            let (g, dg) = k.profile(d.norm_squared());
                            d_normal -= 2.0 * g * ng;
                            d_centroid -= (4.0 * dg * n[f].dot(ng)) * d;
                        }
                        (d_normal, d_centroid)
                    })
                    .collect();
                let mut grad = vec![Vec3::zeros(); q.len()];
                for (f, (d_normal, d_centroid)) in faces.iter().zip(per_face) {
                    for &i in f {
                        grad[i] += d_centroid / 3.0;
                    }
                    face_normal_vjp(q, f, &d_normal, &mut grad);
                }
                Ok(grad)
            }
            AttachmentKind::Landmark => {
                self.check_landmarks(q)?;
                Ok(q.iter().zip(&self.vertices).map(|(a, b)| a - b).collect())
            }
        }
    }

    fn check_landmarks(&self, q: &[Vec3]) -> Result<()> {
        if q.len() != self.vertices.len() {
            return Err(Error::LengthMismatch {
                expected: self.vertices.len(),
                got: q.len(),
            });
        }
        Ok(())
    }
}

/// `Σ_{f,g} k(a_f, b_g) N_f·M_g`, accumulated per outer face in fixed order.
fn pair_sum(k: &KernelSpec, ca: &[Vec3], na: &[Vec3], cb: &[Vec3], nb: &[Vec3]) -> f64 {
    ca.par_iter()
        .zip(na)
        .map(|(c, n)| {
            cb.iter()
                .zip(nb)
                .map(|(d, m)| k.eval(c, d) * n.dot(m))
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

/// Current discrepancy `D(moving, target)` for the kernel `k`.
pub fn current_norm(k: &KernelSpec, moving: &TriMesh, target: &TriMesh) -> Result<f64> {
    if moving.n_faces() == 0 {
        return Err(Error::EmptyMesh);
    }
    let spec = AttachmentSpec::current(*k, 1.0)?;
    Target::new(spec, target)?.discrepancy(moving.vertices(), moving.faces())
}

/// Gradient of [`current_norm`] with respect to the moving vertices.
pub fn current_norm_gradient(k: &KernelSpec, moving: &TriMesh, target: &TriMesh) -> Result<Vec<Vec3>> {
    if moving.n_faces() == 0 {
        return Err(Error::EmptyMesh);
    }
    let spec = AttachmentSpec::current(*k, 1.0)?;
    Target::new(spec, target)?.gradient(moving.vertices(), moving.faces())
}
