//! Forward shooting of the vertex state under piecewise-constant controls.
//!
//! Non-rigid step: `q(t+δt) = q(t) + δt K(q(t)) α(t)`.
//! Rigid step: `q(t+δt) = exp(δt A(t)) q(t) + δt K(q(t)) α(t) + δt τ(t)` with
//! `A(t) = [β(t)]×`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::kernels::KernelSpec;
use crate::mesh::{save_off, vertex_normals_at, TriMesh};
use crate::{Error, Mat3, Result, Vec3};

/// Uniform grid of `steps` intervals on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeGrid {
    steps: usize,
}

impl TimeGrid {
    pub fn new(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidParameter("number of time steps must be at least 1".into()));
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self { steps: 10 }
    }
}

/// Rotation coefficients `β` in the basis `E₁, E₂, E₃` of so(3) and translation `τ`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidControl {
    pub beta: Vec3,
    pub tau: Vec3,
}

/// Costs `c₀ |τ|²` and `Σ_l c_l β_l²` on the rigid controls.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidCosts {
    pub c0: f64,
    pub c: [f64; 3],
}

impl RigidCosts {
    pub fn new(c0: f64, c: [f64; 3]) -> Result<Self> {
        if c0 < 0.0 || c.iter().any(|&v| v < 0.0) || !c0.is_finite() || c.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("rigid costs must be non-negative".into()));
        }
        Ok(Self { c0, c })
    }

    pub fn cost(&self, r: &RigidControl) -> f64 {
        self.c0 * r.tau.norm_squared() + (0..3).map(|l| self.c[l] * r.beta[l] * r.beta[l]).sum::<f64>()
    }
}

/// Momenta `α(t)` per step and vertex, plus optional rigid controls per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPath {
    pub alphas: Vec<Vec<Vec3>>,
    pub rigid: Option<Vec<RigidControl>>,
}

impl ControlPath {
    pub fn zeros(steps: usize, n: usize, rigid: bool) -> Self {
        Self {
            alphas: vec![vec![Vec3::zeros(); n]; steps],
            rigid: rigid.then(|| vec![RigidControl::default(); steps]),
        }
    }

    pub fn steps(&self) -> usize {
        self.alphas.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.alphas.first().map_or(0, Vec::len)
    }

    pub fn is_rigid(&self) -> bool {
        self.rigid.is_some()
    }

    /// Number of scalar unknowns.
    pub fn dim(&self) -> usize {
        self.steps() * (3 * self.n_vertices() + if self.is_rigid() { 6 } else { 0 })
    }

    pub fn validate(&self, steps: usize, n: usize) -> Result<()> {
        if self.alphas.len() != steps {
            return Err(Error::ShapeMismatch(format!(
                "expected {steps} time steps, got {}",
                self.alphas.len()
            )));
        }
        for (t, a) in self.alphas.iter().enumerate() {
            if a.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "step {t}: expected {n} momenta, got {}",
                    a.len()
                )));
            }
            if a.iter().any(|v| !v.iter().all(|x| x.is_finite())) {
                return Err(Error::NonFinite { step: t });
            }
        }
        if let Some(r) = &self.rigid {
            if r.len() != steps {
                return Err(Error::ShapeMismatch(format!(
                    "expected {steps} rigid controls, got {}",
                    r.len()
                )));
            }
            for (t, c) in r.iter().enumerate() {
                if !c.beta.iter().chain(c.tau.iter()).all(|x| x.is_finite()) {
                    return Err(Error::NonFinite { step: t });
                }
            }
        }
        Ok(())
    }

    /// Flattens to `[α(0), β(0), τ(0), α(1), …]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for (t, a) in self.alphas.iter().enumerate() {
            out.extend(a.iter().flat_map(|v| v.iter().copied()));
            if let Some(r) = &self.rigid {
                out.extend(r[t].beta.iter().chain(r[t].tau.iter()).copied());
            }
        }
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat), using `self` for the shape.
    pub fn from_flat(&self, x: &[f64]) -> Self {
        assert_eq!(x.len(), self.dim(), "flat control length");
        let n = self.n_vertices();
        let stride = 3 * n + if self.is_rigid() { 6 } else { 0 };
        let v = |s: &[f64]| Vec3::new(s[0], s[1], s[2]);
        let mut alphas = Vec::with_capacity(self.steps());
        let mut rigid = self.rigid.as_ref().map(|_| Vec::with_capacity(self.steps()));
        for chunk in x.chunks(stride) {
            alphas.push((0..n).map(|k| v(&chunk[3 * k..])).collect());
            if let Some(r) = rigid.as_mut() {
                r.push(RigidControl {
                    beta: v(&chunk[3 * n..]),
                    tau: v(&chunk[3 * n + 3..]),
                });
            }
        }
        Self { alphas, rigid }
    }
}

/// Vertex trajectories `q(0..=T)` and, in rigid mode, the accumulated frames.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePath {
    pub states: Vec<Vec<Vec3>>,
    pub rigid_frames: Option<Vec<(Mat3, Vec3)>>,
}

impl StatePath {
    pub fn final_state(&self) -> &[Vec3] {
        self.states.last().expect("state path is never empty")
    }

    /// Writes `step_000.off … step_T.off` into `dir`.
    pub fn save_sequence(&self, template: &TriMesh, dir: impl AsRef<Path>) -> Result<()> {
        for (t, q) in self.states.iter().enumerate() {
            let mesh = template.with_vertices(q.clone())?;
            save_off(&mesh, dir.as_ref().join(format!("step_{t:03}.off")))?;
        }
        Ok(())
    }
}

/// `[ω]×`, the skew matrix with `[ω]× x = ω × x`.
pub fn skew(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`skew`] on skew-symmetric input.
pub fn unskew(u: &Mat3) -> Vec3 {
    Vec3::new(u[(2, 1)], u[(0, 2)], u[(1, 0)])
}

/// `e^U = Id + (sin c / c) U + ((1 − cos c) / c²) U²` with `c = √(−tr(U²)/2)`,
/// the rotation angle.
pub fn rotation_exp(u: &Mat3) -> Result<Mat3> {
    let defect = (u + u.transpose()).norm();
    if defect > 1e-12 * u.norm() {
        return Err(Error::NotSkewSymmetric(defect));
    }
    Ok(exp_so3(&unskew(u)))
}

/// Rotation `exp([ω]×)`.
pub fn exp_so3(w: &Vec3) -> Mat3 {
    let u = skew(w);
    let (a, b) = rodrigues_coefficients(w.norm());
    Mat3::identity() + a * u + b * (u * u)
}

/// `(sin c / c, (1 − cos c) / c²)`.
fn rodrigues_coefficients(c: f64) -> (f64, f64) {
    if c < 1e-8 {
        (1.0 - c * c / 6.0, 0.5 - c * c / 24.0)
    } else {
        let s = (0.5 * c).sin() / c;
        (c.sin() / c, 2.0 * s * s)
    }
}

/// Derivatives of the Rodrigues coefficients divided by `c`:
/// `(a'(c)/c, b'(c)/c)`.
fn rodrigues_derivative_coefficients(c: f64) -> (f64, f64) {
    if c < 1e-2 {
        let c2 = c * c;
        (
            -1.0 / 3.0 + c2 / 30.0 - c2 * c2 / 840.0 + c2 * c2 * c2 / 45360.0,
            -1.0 / 12.0 + c2 / 180.0 - c2 * c2 / 6720.0 + c2 * c2 * c2 / 453600.0,
        )
    } else {
        let (sin, cos) = c.sin_cos();
        (
            (c * cos - sin) / (c * c * c),
            (c * sin - 2.0 * (1.0 - cos)) / (c * c * c * c),
        )
    }
}

/// Partial derivatives `∂ exp([ω]×) / ∂ω_l`, `l = 0, 1, 2`.
pub fn exp_so3_derivatives(w: &Vec3) -> [Mat3; 3] {
    let c = w.norm();
    let u = skew(w);
    let u2 = u * u;
    let (a, b) = rodrigues_coefficients(c);
    let (da, db) = rodrigues_derivative_coefficients(c);
    std::array::from_fn(|l| {
        let el = skew(&Vec3::ith(l, 1.0));
        (da * w[l]) * u + a * el + (db * w[l]) * u2 + b * (el * u + u * el)
    })
}

/// One explicit step. Returns the next state and the kernel velocity `K(q)α`.
pub(crate) fn step(
    kernel: &KernelSpec,
    q: &[Vec3],
    alpha: &[Vec3],
    rigid: Option<&RigidControl>,
    dt: f64,
) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let v = kernel.apply(q, alpha)?;
    let next = match rigid {
        None => q.iter().zip(&v).map(|(x, vx)| x + dt * vx).collect(),
        Some(r) => {
            let rot = exp_so3(&(dt * r.beta));
            q.iter()
                .zip(&v)
                .map(|(x, vx)| rot * x + dt * vx + dt * r.tau)
                .collect()
        }
    };
    Ok((next, v))
}

/// Integrates the state equation from the template vertices.
pub fn shoot(template: &TriMesh, controls: &ControlPath, kernel: &KernelSpec, grid: TimeGrid) -> Result<StatePath> {
    controls.validate(grid.steps(), template.n_vertices())?;
    let dt = grid.dt();
    let mut states = Vec::with_capacity(grid.steps() + 1);
    states.push(template.vertices().to_vec());
    let mut frames = controls.rigid.as_ref().map(|_| vec![(Mat3::identity(), Vec3::zeros())]);
    for t in 0..grid.steps() {
        let rigid = controls.rigid.as_ref().map(|r| &r[t]);
        let (next, _) = step(kernel, &states[t], &controls.alphas[t], rigid, dt)?;
        if next.iter().any(|x| !x.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite { step: t });
        }
        states.push(next);
        if let (Some(frames), Some(r)) = (frames.as_mut(), rigid) {
            let rot = exp_so3(&(dt * r.beta));
            let (r_prev, b_prev) = *frames.last().unwrap();
            frames.push((rot * r_prev, rot * b_prev + dt * r.tau));
        }
    }
    Ok(StatePath {
        states,
        rigid_frames: frames,
    })
}

/// Per-vertex `Σ_t (q_k(t+δt) − q_k(t)) · N̂_k(t)`, with unit normals of the
/// deformed mesh at each step. Vertices with a zero normal contribute 0.
pub fn total_normal_displacement(path: &StatePath, template: &TriMesh) -> Vec<f64> {
    let mut total = vec![0.0; template.n_vertices()];
    for pair in path.states.windows(2) {
        let normals = vertex_normals_at(&pair[0], template.faces());
        for (k, n) in normals.iter().enumerate() {
            let len = n.norm();
            if len > 0.0 {
                total[k] += (pair[1][k] - pair[0][k]).dot(n) / len;
            }
        }
    }
    total
}
