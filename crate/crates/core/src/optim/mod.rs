//! Discrete objective, exact adjoint gradient and the augmented Lagrangian
//! outer loop.
//!
//! With `g(t)` the constraint rows at step `t`, `λ(t) ≤ 0` the multipliers and
//! `µ > 0` the penalty parameter (smaller is stiffer), the minimized function is
//!
//! ```text
//! F(α, λ) = δt/2 Σ_t α(t)ᵀ K(q(t)) α(t) + w·D(q(T), target) + rigid cost
//!         + δt/(2µ) Σ_t |(g(t) − µλ(t))⁺|² − δt µ/2 Σ_t |λ(t)|²
//! ```
//!
//! and the multiplier update is `λ ← −(1/µ)(g − µλ)⁺`.

mod lbfgs;
mod solver;

use serde::{Deserialize, Serialize};

pub use lbfgs::{minimize, InnerMethod, InnerParams, InnerResult, InnerStatus};
pub use solver::{al_solve, inner_minimize, ALParams, OuterRecord, RunReport, RunStatus, Solution};

use crate::attachment::{AttachmentSpec, Target};
use crate::constraints::{ConstraintMode, ConstraintResidual, ConstraintSpec};
use crate::dynamics::{exp_so3, exp_so3_derivatives, step, ControlPath, RigidControl, RigidCosts, StatePath, TimeGrid};
use crate::kernels::KernelSpec;
use crate::mesh::{vertex_normals_at, vertex_normals_vjp, TriMesh};
use crate::{Error, Result, Vec3};

/// One registration instance.
#[derive(Debug, Clone)]
pub struct Problem {
    template: TriMesh,
    target_mesh: TriMesh,
    target: Target,
    kernel: KernelSpec,
    constraint: ConstraintSpec,
    grid: TimeGrid,
    rigid: Option<RigidCosts>,
}

/// Multipliers `λ(t)` (one row per constraint row) and penalty parameter `µ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ALState {
    pub lambdas: Vec<Vec<f64>>,
    pub mu: f64,
    pub outer_iter: usize,
    pub energy_trace: Vec<f64>,
}

impl ALState {
    pub fn new(problem: &Problem, mu: f64) -> Self {
        let rows = problem.constraint.rows(problem.template.n_vertices());
        Self {
            lambdas: vec![vec![0.0; rows]; problem.grid.steps()],
            mu,
            outer_iter: 0,
            energy_trace: Vec::new(),
        }
    }

    fn check(&self, problem: &Problem) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidParameter(format!("penalty parameter must be positive, got {}", self.mu)));
        }
        let rows = problem.constraint.rows(problem.template.n_vertices());
        if self.lambdas.len() != problem.grid.steps() || self.lambdas.iter().any(|l| l.len() != rows) {
            return Err(Error::ShapeMismatch(format!(
                "multipliers must be {} × {rows}",
                problem.grid.steps()
            )));
        }
        Ok(())
    }
}

/// Terms of the objective at one control path.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Evaluation {
    pub kinetic: f64,
    /// Weighted data attachment `w·D`.
    pub attachment: f64,
    pub rigid_cost: f64,
    /// `δt/(2µ) Σ |(g − µλ)⁺|²`; zero without multipliers.
    pub penalty: f64,
    /// `δt µ/2 Σ |λ|²`, subtracted in the augmented value.
    pub multiplier_term: f64,
    pub residuals: Vec<ConstraintResidual>,
}

impl Evaluation {
    /// Registration energy: kinetic + attachment + rigid cost.
    pub fn energy(&self) -> f64 {
        self.kinetic + self.attachment + self.rigid_cost
    }

    pub fn augmented(&self) -> f64 {
        self.energy() + self.penalty - self.multiplier_term
    }
}

/// Forward pass storage.
struct Trajectory {
    states: Vec<Vec<Vec3>>,
    velocities: Vec<Vec<Vec3>>,
    normals: Vec<Vec<Vec3>>,
    /// Kernel velocity plus rigid terms.
    full_velocities: Vec<Vec<Vec3>>,
}

impl Problem {
    pub fn new(
        template: TriMesh,
        target: TriMesh,
        kernel: KernelSpec,
        attachment: AttachmentSpec,
        constraint: ConstraintSpec,
        grid: TimeGrid,
        rigid: Option<RigidCosts>,
    ) -> Result<Self> {
        if template.n_vertices() == 0 {
            return Err(Error::EmptyMesh);
        }
        let prepared = Target::new(attachment, &target)?;
        Ok(Self {
            template,
            target_mesh: target,
            target: prepared,
            kernel,
            constraint,
            grid,
            rigid,
        })
    }

    pub fn template(&self) -> &TriMesh {
        &self.template
    }

    pub fn target(&self) -> &TriMesh {
        &self.target_mesh
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn constraint(&self) -> &ConstraintSpec {
        &self.constraint
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn rigid_costs(&self) -> Option<&RigidCosts> {
        self.rigid.as_ref()
    }

    pub fn attachment(&self) -> &AttachmentSpec {
        self.target.spec()
    }

    /// Same problem with a different constraint.
    pub fn with_constraint(&self, constraint: ConstraintSpec) -> Self {
        Self {
            constraint,
            ..self.clone()
        }
    }

    pub fn zero_controls(&self) -> ControlPath {
        ControlPath::zeros(self.grid.steps(), self.template.n_vertices(), self.rigid.is_some())
    }

    pub fn shoot(&self, controls: &ControlPath) -> Result<StatePath> {
        crate::dynamics::shoot(&self.template, controls, &self.kernel, self.grid)
    }

    fn check_controls(&self, controls: &ControlPath) -> Result<()> {
        controls.validate(self.grid.steps(), self.template.n_vertices())?;
        if controls.is_rigid() != self.rigid.is_some() {
            return Err(Error::ShapeMismatch(
                "rigid controls must be present exactly when rigid mode is enabled".into(),
            ));
        }
        Ok(())
    }

    fn forward(&self, controls: &ControlPath) -> Result<Trajectory> {
        self.check_controls(controls)?;
        let steps = self.grid.steps();
        let dt = self.grid.dt();
        let faces = self.template.faces();
        let mut states = Vec::with_capacity(steps + 1);
        let mut velocities = Vec::with_capacity(steps);
        let mut normals = Vec::with_capacity(steps);
        let mut full_velocities = Vec::with_capacity(steps);
        states.push(self.template.vertices().to_vec());
        for t in 0..steps {
            let rigid = controls.rigid.as_ref().map(|r| &r[t]);
            let q = &states[t];
            let (next, v) = step(&self.kernel, q, &controls.alphas[t], rigid, dt)?;
            if next.iter().chain(&v).any(|x| !x.iter().all(|c| c.is_finite())) {
                return Err(Error::NonFinite { step: t });
            }
            let u = match rigid {
                None => v.clone(),
                Some(r) => v.iter().zip(q).map(|(vk, qk)| vk + r.beta.cross(qk) + r.tau).collect(),
            };
            normals.push(vertex_normals_at(q, faces));
            full_velocities.push(u);
            velocities.push(v);
            states.push(next);
        }
        Ok(Trajectory {
            states,
            velocities,
            normals,
            full_velocities,
        })
    }

    fn assemble(&self, controls: &ControlPath, traj: &Trajectory, al: Option<&ALState>) -> Result<Evaluation> {
        let dt = self.grid.dt();
        let mut eval = Evaluation::default();
        for (t, (a, v)) in controls.alphas.iter().zip(&traj.velocities).enumerate() {
            eval.kinetic += 0.5 * dt * a.iter().zip(v).map(|(a, v)| a.dot(v)).sum::<f64>();
            if let (Some(costs), Some(r)) = (&self.rigid, &controls.rigid) {
                eval.rigid_cost += 0.5 * dt * costs.cost(&r[t]);
            }
            eval.residuals
                .push(self.constraint.residual_from(&traj.full_velocities[t], &traj.normals[t]));
        }
        let d = self.target.discrepancy(traj.states.last().unwrap(), self.template.faces())?;
        eval.attachment = self.target.spec().weight() * d;
        if let Some(al) = al {
            al.check(self)?;
            for (r, lambda) in eval.residuals.iter().zip(&al.lambdas) {
                for (&g, &l) in r.values.iter().zip(lambda) {
                    let shifted = (g - al.mu * l).max(0.0);
                    eval.penalty += dt / (2.0 * al.mu) * shifted * shifted;
                    eval.multiplier_term += dt * al.mu / 2.0 * l * l;
                }
            }
        }
        let total = eval.augmented();
        if !total.is_finite() {
            return Err(Error::NonFinite { step: self.grid.steps() });
        }
        Ok(eval)
    }

    /// Objective terms. Without multipliers only the registration energy is
    /// meaningful (penalty and multiplier terms are zero).
    pub fn evaluate(&self, controls: &ControlPath, al: Option<&ALState>) -> Result<Evaluation> {
        let traj = self.forward(controls)?;
        self.assemble(controls, &traj, al)
    }

    /// Registration energy `δt/2 Σ αᵀKα + w·D (+ rigid cost)`.
    pub fn energy(&self, controls: &ControlPath) -> Result<f64> {
        Ok(self.evaluate(controls, None)?.energy())
    }

    /// Augmented Lagrangian value `F(α, λ)`.
    pub fn augmented_energy(&self, controls: &ControlPath, al: &ALState) -> Result<f64> {
        Ok(self.evaluate(controls, Some(al))?.augmented())
    }

    /// Constraint rows along the path shot from `controls`.
    pub fn residuals(&self, controls: &ControlPath) -> Result<Vec<ConstraintResidual>> {
        Ok(self.evaluate(controls, None)?.residuals)
    }

    /// Exact gradient of the discrete `F(·, λ)` (or of the plain energy when
    /// `al` is `None`) with respect to every control, by backward recursion
    /// through the explicit steps.
    pub fn adjoint_gradient(&self, controls: &ControlPath, al: Option<&ALState>) -> Result<(Evaluation, ControlPath)> {
        let traj = self.forward(controls)?;
        let eval = self.assemble(controls, &traj, al)?;
        let steps = self.grid.steps();
        let dt = self.grid.dt();
        let faces = self.template.faces();
        let weight = self.target.spec().weight();

        let mut grad = self.zero_controls();
        // cotangent of q(t+1), starting from the end-point cost
        let mut costate: Vec<Vec3> = self
            .target
            .gradient(traj.states.last().unwrap(), faces)?
            .into_iter()
            .map(|g| weight * g)
            .collect();

        for t in (0..steps).rev() {
            let q = &traj.states[t];
            let alpha = &controls.alphas[t];
            let rigid = controls.rigid.as_ref().map(|r| &r[t]);
            let mut rigid_grad = RigidControl::default();

            // step map q(t+1) = E q + δt K(q)α + δt τ
            let mut gq: Vec<Vec3> = match rigid {
                None => costate.clone(),
                Some(r) => {
                    let omega = dt * r.beta;
                    let rot = exp_so3(&omega);
                    let d_rot = exp_so3_derivatives(&omega);
                    for l in 0..3 {
                        rigid_grad.beta[l] += dt * costate.iter().zip(q).map(|(p, x)| p.dot(&(d_rot[l] * x))).sum::<f64>();
                    }
                    rigid_grad.tau += dt * costate.iter().sum::<Vec3>();
                    costate.iter().map(|p| rot.transpose() * p).collect()
                }
            };
            // kernel cotangent: step map + kinetic (half, see below) + constraint
            let mut w: Vec<Vec3> = costate
                .iter()
                .zip(alpha)
                .map(|(p, a)| dt * p + 0.5 * dt * a)
                .collect();

            if let Some(al) = al {
                let sens = self.constraint_sensitivity(&eval.residuals[t], &al.lambdas[t], al.mu, dt);
                if let Some(s) = sens {
                    let normals = &traj.normals[t];
                    let u = &traj.full_velocities[t];
                    let eps = self.constraint.epsilon();
                    let pointwise = self.constraint.mode == ConstraintMode::PointwiseAtrophy;
                    let mut normal_cot = vec![Vec3::zeros(); q.len()];
                    for k in 0..q.len() {
                        let sk = s[k];
                        if sk == 0.0 {
                            continue;
                        }
                        let wn = sk * normals[k];
                        w[k] += wn;
                        if let Some(r) = rigid {
                            gq[k] += wn.cross(&r.beta);
                            rigid_grad.beta += q[k].cross(&wn);
                            rigid_grad.tau += wn;
                        }
                        normal_cot[k] = sk * u[k];
                        if pointwise {
                            let len = normals[k].norm();
                            if len > 0.0 {
                                normal_cot[k] -= (sk * eps / len) * normals[k];
                            }
                        }
                    }
                    vertex_normals_vjp(q, faces, &normal_cot, &mut gq);
                }
            }

            if let (Some(costs), Some(r)) = (&self.rigid, rigid) {
                for l in 0..3 {
                    rigid_grad.beta[l] += dt * costs.c[l] * r.beta[l];
                }
                rigid_grad.tau += dt * costs.c0 * r.tau;
            }

            let (ga, gqk) = self.kernel.apply_vjp(q, alpha, &w);
            for (g, extra) in gq.iter_mut().zip(gqk) {
                *g += extra;
            }
            // d/dα of δt/2 αᵀKα is δt Kα; the half in `w` supplies δt/2 Kα
            grad.alphas[t] = ga
                .iter()
                .zip(&traj.velocities[t])
                .map(|(g, v)| g + 0.5 * dt * v)
                .collect();
            if let Some(r) = grad.rigid.as_mut() {
                r[t] = rigid_grad;
            }
            costate = gq;
        }
        Ok((eval, grad))
    }

    /// `∂F/∂g` per vertex row: `(δt/µ)(g − µλ)⁺`, broadcast for the global row.
    fn constraint_sensitivity(&self, r: &ConstraintResidual, lambda: &[f64], mu: f64, dt: f64) -> Option<Vec<f64>> {
        let n = self.template.n_vertices();
        match self.constraint.mode {
            ConstraintMode::None => None,
            ConstraintMode::PointwiseAtrophy => Some(
                r.values
                    .iter()
                    .zip(lambda)
                    .map(|(&g, &l)| dt / mu * (g - mu * l).max(0.0))
                    .collect(),
            ),
            ConstraintMode::GlobalVolume => {
                let s = dt / mu * (r.values[0] - mu * lambda[0]).max(0.0);
                Some(vec![s; n])
            }
        }
    }
}

/// `λ ← −(1/µ)(g − µλ)⁺` entrywise. Rows with `g − µλ < 0` get `λ = 0`.
pub fn update_multipliers(state: &ALState, residuals: &[ConstraintResidual]) -> ALState {
    let mu = state.mu;
    let lambdas = state
        .lambdas
        .iter()
        .zip(residuals)
        .map(|(lambda, r)| {
            lambda
                .iter()
                .zip(&r.values)
                .map(|(&l, &g)| {
                    let shifted = g - mu * l;
                    if shifted > 0.0 {
                        -shifted / mu
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    ALState {
        lambdas,
        mu,
        outer_iter: state.outer_iter + 1,
        energy_trace: state.energy_trace.clone(),
    }
}
