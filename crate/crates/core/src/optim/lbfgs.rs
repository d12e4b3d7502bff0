//! Limited-memory BFGS with backtracking Armijo line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMethod {
    #[default]
    Lbfgs,
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InnerParams {
    pub max_iters: usize,
    /// Stop when `‖∇F‖ ≤ g_tol · max(1, ‖∇F(start)‖)`.
    pub g_tol: f64,
    /// Stop when the last `memory` steps lowered `F` by at most
    /// `memory · f_tol · max(1, |F|)`. Zero disables the test.
    pub f_tol: f64,
    /// Quasi-Newton memory.
    pub memory: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Step shrink factor per backtrack.
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub method: InnerMethod,
}

impl Default for InnerParams {
    fn default() -> Self {
        Self {
            max_iters: 500,
            g_tol: 1e-6,
            f_tol: 2.2e-9,
            memory: 10,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 40,
            method: InnerMethod::Lbfgs,
        }
    }
}

impl InnerParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iters > 0
            && self.g_tol > 0.0
            && self.f_tol >= 0.0
            && self.memory > 0
            && self.armijo > 0.0
            && self.armijo < 1.0
            && self.backtrack > 0.0
            && self.backtrack < 1.0
            && self.max_backtracks > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid inner parameters: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerStatus {
    Converged,
    MaxIterations,
    /// Progress over the last `memory` steps fell below `f_tol`.
    Stalled,
    /// No sufficient decrease along the search direction; the best iterate is returned.
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub status: InnerStatus,
    /// Objective at every accepted iterate, starting point included.
    pub trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimizes `f`, which returns the value and gradient at a point.
/// Failed evaluations at trial points count as insufficient decrease.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, params: &InnerParams) -> Result<InnerResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    params.validate()?;
    let mut x = x0;
    let (mut fx, mut g) = f(&x)?;
    let mut gnorm = norm(&g);
    let tol = params.g_tol * gnorm.max(1.0);
    let mut trace = vec![fx];
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(params.memory);
    let mut iterations = 0;

    let status = loop {
        if gnorm <= tol {
            break InnerStatus::Converged;
        }
        if iterations >= params.max_iters {
            break InnerStatus::MaxIterations;
        }

        let mut d = match params.method {
            InnerMethod::Lbfgs => two_loop(&g, &memory),
            InnerMethod::GradientDescent => g.iter().map(|v| -v).collect(),
        };
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            memory.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }
        // without curvature information, start with a unit-length step
        let mut step = if memory.is_empty() { 1.0 / norm(&d) } else { 1.0 };

        let mut accepted = None;
        for _ in 0..params.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            if let Ok((ft, gt)) = f(&trial) {
                if ft.is_finite() && ft <= fx + params.armijo * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= params.backtrack;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            break InnerStatus::LineSearchFailed;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if memory.len() == params.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        gnorm = norm(&g);
        trace.push(fx);
        iterations += 1;
        let window = params.memory;
        if params.f_tol > 0.0
            && trace.len() > window
            && trace[trace.len() - 1 - window] - fx <= window as f64 * params.f_tol * fx.abs().max(1.0)
        {
            break InnerStatus::Stalled;
        }
    };

    Ok(InnerResult {
        x,
        value: fx,
        grad_norm: gnorm,
        iterations,
        status,
        trace,
    })
}

/// L-BFGS two-loop recursion: returns `−H g`.
fn two_loop(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|qi| *qi *= gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
