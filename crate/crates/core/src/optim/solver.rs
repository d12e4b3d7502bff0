//! Augmented Lagrangian outer loop.

use serde::{Deserialize, Serialize};

use super::lbfgs::{minimize, InnerParams, InnerResult, InnerStatus};
use super::{update_multipliers, ALState, Evaluation, Problem};
use crate::constraints::{violation_norm, ConstraintMode};
use crate::dynamics::{ControlPath, StatePath};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ALParams {
    /// Initial penalty parameter; the penalty weight is `1/µ`.
    pub mu0: f64,
    /// Shrink factor applied to `µ` when the violation exceeds the threshold.
    pub rho: f64,
    /// First violation threshold; `None` uses the violation after the first inner solve.
    pub delta0: Option<f64>,
    /// Threshold decay, `δ_n = δ₀ · delta_decay^n`.
    pub delta_decay: f64,
    pub max_outer: usize,
    /// Final feasibility tolerance on the violation norm; `None` uses
    /// [`ConstraintSpec::default_tolerance`](crate::ConstraintSpec::default_tolerance).
    pub violation_tol: Option<f64>,
    pub inner: InnerParams,
}

impl Default for ALParams {
    fn default() -> Self {
        Self {
            mu0: 1.0,
            rho: 0.1,
            delta0: None,
            delta_decay: 0.5,
            max_outer: 20,
            violation_tol: None,
            inner: InnerParams::default(),
        }
    }
}

impl ALParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.into()));
        if !(self.mu0 > 0.0 && self.mu0.is_finite()) {
            return bad("mu0 must be positive");
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad("rho must lie in (0, 1)");
        }
        if !(self.delta_decay > 0.0 && self.delta_decay <= 1.0) {
            return bad("delta_decay must lie in (0, 1]");
        }
        if self.delta0.is_some_and(|d| !(d >= 0.0)) {
            return bad("delta0 must be non-negative");
        }
        if self.violation_tol.is_some_and(|d| !(d > 0.0)) {
            return bad("violation_tol must be positive");
        }
        if self.max_outer == 0 {
            return bad("max_outer must be at least 1");
        }
        self.inner.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIterations,
}

/// Summary of one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub outer: usize,
    /// Penalty parameter used for this inner solve.
    pub mu: f64,
    pub energy: f64,
    pub kinetic: f64,
    pub attachment: f64,
    pub violation_norm: f64,
    pub max_residual: f64,
    pub active_constraints: usize,
    pub inner_iters: usize,
    pub status: InnerStatus,
    /// Augmented value at every accepted inner iterate.
    pub inner_trace: Vec<f64>,
    /// Largest multiplier after the update (never positive).
    pub max_lambda: f64,
    /// Multipliers left nonzero on rows whose shifted residual was negative.
    pub inactive_nonzero: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub status: RunStatus,
    pub violation_tolerance: f64,
    pub records: Vec<OuterRecord>,
}

impl RunReport {
    pub fn last(&self) -> &OuterRecord {
        self.records.last().expect("at least one outer iteration")
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub controls: ControlPath,
    pub path: StatePath,
    pub al_state: ALState,
    pub evaluation: Evaluation,
    pub report: RunReport,
}

/// Minimizes `F(·, λ)` from `start` with the multipliers and penalty of `al`.
///
/// The search runs on `y = √δt · α`, so the quasi-Newton geometry is the
/// time-discretized L² inner product and independent of the step count.
pub fn inner_minimize(
    problem: &Problem,
    al: Option<&ALState>,
    start: &ControlPath,
    params: &InnerParams,
) -> Result<(ControlPath, InnerResult)> {
    let scale = problem.grid().dt().sqrt();
    let y0: Vec<f64> = start.to_flat().iter().map(|v| v * scale).collect();
    let objective = |y: &[f64]| -> Result<(f64, Vec<f64>)> {
        let x: Vec<f64> = y.iter().map(|v| v / scale).collect();
        let controls = start.from_flat(&x);
        let (eval, grad) = problem.adjoint_gradient(&controls, al)?;
        let value = if al.is_some() { eval.augmented() } else { eval.energy() };
        Ok((value, grad.to_flat().iter().map(|g| g / scale).collect()))
    };
    let result = minimize(objective, y0, params)?;
    let x: Vec<f64> = result.x.iter().map(|v| v / scale).collect();
    Ok((start.from_flat(&x), result))
}

/// Runs the augmented Lagrangian loop from zero controls (or `start`).
///
/// Non-convergence is reported through [`RunStatus`], not as an error.
pub fn al_solve(problem: &Problem, params: &ALParams, start: Option<ControlPath>) -> Result<Solution> {
    params.validate()?;
    let dt = problem.grid().dt();
    let mode = problem.constraint().mode;
    let tolerance = params
        .violation_tol
        .unwrap_or_else(|| problem.constraint().default_tolerance(problem.template()));
    let mut controls = start.unwrap_or_else(|| problem.zero_controls());
    let mut state = ALState::new(problem, params.mu0);
    let mut delta0 = params.delta0;
    let mut records = Vec::new();
    let mut status = RunStatus::MaxIterations;

    for outer in 0..params.max_outer {
        let al = (mode != ConstraintMode::None).then_some(&state);
        let (next, inner) = inner_minimize(problem, al, &controls, &params.inner)?;
        controls = next;
        let eval = problem.evaluate(&controls, None)?;
        let violation = violation_norm(&eval.residuals, dt);
        state.energy_trace.push(eval.energy());
        let inner_ok = inner.status != InnerStatus::MaxIterations;

        let mut record = OuterRecord {
            outer,
            mu: state.mu,
            energy: eval.energy(),
            kinetic: eval.kinetic,
            attachment: eval.attachment,
            violation_norm: violation,
            max_residual: eval.residuals.iter().map(|r| r.max()).fold(f64::NEG_INFINITY, f64::max),
            active_constraints: eval.residuals.iter().map(|r| r.active_count()).sum(),
            inner_iters: inner.iterations,
            status: inner.status,
            inner_trace: inner.trace,
            max_lambda: 0.0,
            inactive_nonzero: 0,
        };

        if mode == ConstraintMode::None {
            records.push(record);
            if inner_ok {
                status = RunStatus::Converged;
            }
            break;
        }

        let updated = update_multipliers(&state, &eval.residuals);
        record.max_lambda = updated
            .lambdas
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        record.inactive_nonzero = count_inactive_nonzero(&state, &updated, &eval);
        log::info!(
            "outer {outer}: mu {:.3e} energy {:.6e} attachment {:.6e} violation {:.3e} inner {} ({:?})",
            state.mu,
            record.energy,
            record.attachment,
            violation,
            record.inner_iters,
            record.status
        );
        records.push(record);
        let energy_trace = std::mem::take(&mut state.energy_trace);
        state = updated;
        state.energy_trace = energy_trace;

        if violation <= tolerance && inner_ok {
            status = RunStatus::Converged;
            break;
        }
        let d0 = *delta0.get_or_insert(violation);
        let threshold = d0 * params.delta_decay.powi(outer as i32);
        if violation > threshold && violation > tolerance {
            state.mu *= params.rho;
        }
    }

    let path = problem.shoot(&controls)?;
    let evaluation = problem.evaluate(&controls, Some(&state))?;
    Ok(Solution {
        controls,
        path,
        al_state: state,
        evaluation,
        report: RunReport {
            status,
            violation_tolerance: tolerance,
            records,
        },
    })
}

fn count_inactive_nonzero(before: &ALState, after: &ALState, eval: &Evaluation) -> usize {
    let mut count = 0;
    for ((l0, l1), r) in before.lambdas.iter().zip(&after.lambdas).zip(&eval.residuals) {
        for ((&a, &b), &g) in l0.iter().zip(l1).zip(&r.values) {
            if g - before.mu * a < 0.0 && b != 0.0 {
                count += 1;
            }
        }
    }
    count
}
