//! Scalar radial reproducing kernels `K(x, y) = γ(|x − y|²)`.
//!
//! The vector kernel is `K(x, y)·Id`, so every matrix here is the `n × n`
//! scalar factor of the `3n × 3n` block matrix.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Mat3, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    /// `exp(−r²/σ²)`
    Gaussian,
    /// `1 / (1 + r²/σ²)`
    Cauchy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    sigma: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kernel width must be positive, got {sigma}"
            )));
        }
        Ok(Self { family, sigma })
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, sigma)
    }

    pub fn cauchy(sigma: f64) -> Result<Self> {
        Self::new(KernelFamily::Cauchy, sigma)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `(γ(s), γ'(s))` at squared distance `s`.
    #[inline]
    pub fn profile(&self, s: f64) -> (f64, f64) {
        let inv = 1.0 / (self.sigma * self.sigma);
        match self.family {
            KernelFamily::Gaussian => {
                let g = (-s * inv).exp();
                (g, -inv * g)
            }
            KernelFamily::Cauchy => {
                let g = 1.0 / (1.0 + s * inv);
                (g, -inv * g * g)
            }
        }
    }

    #[inline]
    pub fn eval(&self, x: &Vec3, y: &Vec3) -> f64 {
        self.profile((x - y).norm_squared()).0
    }

    /// Gradient in the first argument, `2 γ'(|x − y|²) (x − y)`.
    #[inline]
    pub fn grad1(&self, x: &Vec3, y: &Vec3) -> Vec3 {
        let d = x - y;
        2.0 * self.profile(d.norm_squared()).1 * d
    }

    pub fn matrix(&self, points: &[Vec3]) -> DMatrix<f64> {
        let n = points.len();
        DMatrix::from_fn(n, n, |k, l| self.eval(&points[k], &points[l]))
    }

    /// `out_k = Σ_l K(q_k, q_l) α_l`.
    pub fn apply(&self, points: &[Vec3], momenta: &[Vec3]) -> Result<Vec<Vec3>> {
        check_len(points, momenta)?;
        Ok(points
            .par_iter()
            .map(|x| self.field_at(points, momenta, x))
            .collect())
    }

    /// `Σ_l K(x, q_l) α_l` for `momenta.len()` equal to `points.len()`.
    fn field_at(&self, points: &[Vec3], momenta: &[Vec3], x: &Vec3) -> Vec3 {
        points
            .iter()
            .zip(momenta)
            .fold(Vec3::zeros(), |acc, (q, a)| acc + self.eval(x, q) * a)
    }

    /// Velocity field `v(x) = Σ_l K(x, q_l) α_l`.
    pub fn field_eval(&self, points: &[Vec3], momenta: &[Vec3], x: &Vec3) -> Result<Vec3> {
        check_len(points, momenta)?;
        Ok(self.field_at(points, momenta, x))
    }

    /// Spatial Jacobian `dv(x) = Σ_l α_l ∇_x K(x, q_l)ᵀ`.
    pub fn field_jacobian(&self, points: &[Vec3], momenta: &[Vec3], x: &Vec3) -> Result<Mat3> {
        check_len(points, momenta)?;
        Ok(points
            .iter()
            .zip(momenta)
            .fold(Mat3::zeros(), |acc, (q, a)| acc + a * self.grad1(x, q).transpose()))
    }

    /// Pullback of a cotangent `w` on `apply(points, momenta)`.
    ///
    /// Returns `(∂/∂α, ∂/∂q)` of `Σ_k w_k · (Σ_l K(q_k, q_l) α_l)`.
    pub fn apply_vjp(&self, points: &[Vec3], momenta: &[Vec3], cot: &[Vec3]) -> (Vec<Vec3>, Vec<Vec3>) {
        debug_assert_eq!(points.len(), momenta.len());
        debug_assert_eq!(points.len(), cot.len());
        points
            .par_iter()
            .enumerate()
            .map(|(k, qk)| {
                let mut ga = Vec3::zeros();
                let mut gq = Vec3::zeros();
                for (l, ql) in points.iter().enumerate() {
                    let d = qk - ql;
                    let (g, dg) = self.profile(d.norm_squared());
                    ga += g * cot[l];
                    let weight = cot[k].dot(&momenta[l]) + cot[l].dot(&momenta[k]);
                    gq += (2.0 * dg * weight) * d;
                }
                (ga, gq)
            })
            .unzip()
    }
}

fn check_len(points: &[Vec3], momenta: &[Vec3]) -> Result<()> {
    if points.len() != momenta.len() {
        return Err(Error::LengthMismatch {
            expected: points.len(),
            got: momenta.len(),
        });
    }
    Ok(())
}
