//! First-order Malliavin calculus for the splitting AVF chain.
//!
//! For `r ≤ tₙ` the derivative obeys `D_r Yₙ₊₁ = Aₙ D_r Yₙ` with the transfer
//! matrix
//!
//! ```text
//! Aₙ = -M (∂G/∂Ȳ)⁻¹ ∂G/∂Yₙ
//! ```
//!
//! where `M` is the linear map of the exact OU substep. Fresh noise on
//! `(tₙ, tₙ₊₁]` enters through a diagonal injection, giving the covariance
//! recursion `γₙ₊₁ = Aₙ γₙ Aₙᵀ + γ₁` with
//! `γ₁ = diag(2 - 2e^{-γh}, 1 - e^{-2α_ℓ h}, 0)`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::integrator::{NoiseBlock, StepperConfig};
use crate::linalg::{self, Matrix};
use crate::model::State;

/// `∂G/∂Ȳ` for one AVF step, parameterized by `F₁ = ∫₀¹ U''(xₙ + ξ(x̄ - xₙ)) ξ dξ`.
///
/// The matrix has arrow structure (dense first row, last column and last
/// row, identity on the `z` block), so its determinant and adjugate have
/// closed forms:
///
/// ```text
/// det = 1 + h² (¼ Σλ² + ½ F₁ - γ²/16)
/// ```
#[derive(Debug, Clone, Copy)]
pub struct ImplicitJacobian<'a> {
    h: f64,
    gamma: f64,
    lambda: &'a [f64],
    f1: f64,
}

impl<'a> ImplicitJacobian<'a> {
    pub fn new(h: f64, gamma: f64, lambda: &'a [f64], f1: f64) -> Self {
        Self { h, gamma, lambda, f1 }
    }

    fn lambda_sq_sum(&self) -> f64 {
        self.lambda.iter().map(|l| l * l).sum()
    }

    pub fn det(&self) -> f64 {
        let (h, g) = (self.h, self.gamma);
        1.0 + h * h * (0.25 * self.lambda_sq_sum() + 0.5 * self.f1 - g * g / 16.0)
    }

    pub fn matrix(&self) -> Matrix {
        let (h, g) = (self.h, self.gamma);
        let k = self.lambda.len();
        let d = k + 2;
        let mut m = Matrix::identity(d, d);
        m[(0, 0)] = 1.0 + 0.25 * g * h;
        m[(0, d - 1)] = h * self.f1;
        for (l, &lam) in self.lambda.iter().enumerate() {
            m[(0, l + 1)] = -0.5 * lam * h;
            m[(l + 1, 0)] = 0.5 * lam * h;
            m[(l + 1, d - 1)] = 0.25 * g * lam * h;
        }
        m[(d - 1, 0)] = -0.5 * h;
        m[(d - 1, d - 1)] = 1.0 - 0.25 * g * h;
        m
    }

    /// Closed-form adjugate, `adj · J = det · I`.
    pub fn adjugate(&self) -> Matrix {
        let (h, g, f1) = (self.h, self.gamma, self.f1);
        let s = self.lambda_sq_sum();
        let det = self.det();
        let d = self.lambda.len() + 2;
        let mut a = Matrix::zeros(d, d);
        a[(0, 0)] = 1.0 - 0.25 * g * h;
        a[(0, d - 1)] = -h * f1 - g / 8.0 * h * h * s;
        a[(d - 1, 0)] = 0.5 * h;
        a[(d - 1, d - 1)] = 1.0 + 0.25 * g * h + 0.25 * h * h * s;
        for (i, &li) in self.lambda.iter().enumerate() {
            a[(0, i + 1)] = 0.5 * h * (1.0 - 0.25 * g * h) * li;
            a[(i + 1, 0)] = -0.5 * h * li;
            a[(i + 1, d - 1)] = -h * li * (0.25 * g + g * g / 16.0 * h - 0.5 * h * f1);
            a[(d - 1, i + 1)] = 0.25 * h * h * li;
            for (j, &lj) in self.lambda.iter().enumerate() {
                a[(i + 1, j + 1)] = if i == j { det } else { 0.0 } - 0.25 * h * h * li * lj;
            }
        }
        a
    }

    /// `out = adj · g` in `O(k)` without forming the matrix.
    pub fn apply_adjugate(&self, g: &[f64], out: &mut [f64]) {
        let (h, gm, f1) = (self.h, self.gamma, self.f1);
        let d = g.len();
        let s = self.lambda_sq_sum();
        let det = self.det();
        let (gv, gx) = (g[0], g[d - 1]);
        let lz: f64 = self.lambda.iter().zip(&g[1..d - 1]).map(|(l, z)| l * z).sum();
        out[0] = (1.0 - 0.25 * gm * h) * (gv + 0.5 * h * lz) + (-h * f1 - gm / 8.0 * h * h * s) * gx;
        let x_col = 0.25 * gm + gm * gm / 16.0 * h - 0.5 * h * f1;
        for (l, &lam) in self.lambda.iter().enumerate() {
            out[l + 1] = -0.5 * h * lam * gv + det * g[l + 1] - 0.25 * h * h * lam * lz - h * lam * x_col * gx;
        }
        out[d - 1] = 0.5 * h * gv + 0.25 * h * h * lz + (1.0 + 0.25 * gm * h + 0.25 * h * h * s) * gx;
    }
}

/// Jacobians of one step at `(Ȳ, Yₙ)`.
#[derive(Debug, Clone)]
pub struct StepJacobians {
    pub dg_dybar: Matrix,
    pub dg_dyn: Matrix,
    /// Closed-form `det(∂G/∂Ȳ)`.
    pub det_dg_dybar: f64,
    pub f1: f64,
    pub f2: f64,
    /// Linear map of the OU substep.
    pub m: Matrix,
    /// `Aₙ = -M (∂G/∂Ȳ)⁻¹ ∂G/∂Yₙ`, the Jacobian of the full step in `Yₙ`.
    pub a_n: Matrix,
}

impl StepJacobians {
    /// `|closed form - LU determinant| / |LU determinant|`.
    pub fn det_relative_residual(&self) -> f64 {
        let numeric = linalg::lu_determinant(&self.dg_dybar);
        (self.det_dg_dybar - numeric).abs() / numeric.abs()
    }
}

/// `∂G/∂Yₙ` given `F₂ = ∫₀¹ U''(xₙ + ξ(x̄ - xₙ)) (1-ξ) dξ`.
fn dg_dyn(h: f64, gamma: f64, lambda: &[f64], f2: f64) -> Matrix {
    let d = lambda.len() + 2;
    let mut m = -Matrix::identity(d, d);
    m[(0, 0)] = -(1.0 - 0.25 * gamma * h);
    m[(0, d - 1)] = h * f2;
    for (l, &lam) in lambda.iter().enumerate() {
        m[(0, l + 1)] = -0.5 * lam * h;
        m[(l + 1, 0)] = 0.5 * lam * h;
        m[(l + 1, d - 1)] = 0.25 * gamma * lam * h;
    }
    m[(d - 1, 0)] = -0.5 * h;
    m[(d - 1, d - 1)] = -(1.0 + 0.25 * gamma * h);
    m
}

/// Linear part of the OU substep: decays on the diagonal, `c_ℓ(h)` coupling
/// `x` into `z_ℓ`.
pub fn ou_matrix(cfg: &StepperConfig) -> Matrix {
    let k = cfg.params().k();
    let d = k + 2;
    let mut m = Matrix::zeros(d, d);
    m[(0, 0)] = cfg.decay_v();
    m[(d - 1, d - 1)] = cfg.decay_v();
    for l in 0..k {
        m[(l + 1, l + 1)] = cfg.decay_z()[l];
        m[(l + 1, d - 1)] = cfg.coupling()[l];
    }
    m
}

pub fn jacobians(y_bar: &State, y_n: &State, cfg: &StepperConfig) -> Result<StepJacobians> {
    let p = cfg.params();
    p.check_state(y_bar)?;
    p.check_state(y_n)?;
    let (h, gamma) = (cfg.h(), p.gamma());
    let (f1, f2) = p.potential().f1_f2(y_n.x(), y_bar.x());
    let implicit = ImplicitJacobian::new(h, gamma, p.lambda(), f1);
    let det = implicit.det();
    let dg_dybar = implicit.matrix();
    let dg_dyn = dg_dyn(h, gamma, p.lambda(), f2);
    if !(det.abs() > 1e-14) {
        return Err(Error::Singular(det));
    }
    let solved = dg_dybar.clone().lu().solve(&dg_dyn).ok_or(Error::Singular(det))?;
    let m = ou_matrix(cfg);
    let a_n = -(&m * solved);
    Ok(StepJacobians { dg_dybar, dg_dyn, det_dg_dybar: det, f1, f2, m, a_n })
}

/// `D_r Yₙ₊₁ = Aₙ D_r Yₙ` for `r ≤ tₙ`; `d` is `(k+2) × (k+1)`.
pub fn propagate_derivative(d: &Matrix, jac: &StepJacobians) -> Result<Matrix> {
    if d.nrows() != jac.a_n.ncols() {
        return Err(Error::Dimension { expected: jac.a_n.ncols(), got: d.nrows() });
    }
    Ok(&jac.a_n * d)
}

/// Derivative of `Yₙ₊₁` with respect to the noise at `r = tₙ`:
/// `diag(e^{-γh/2}√(2γ), e^{-α_ℓ h}√(2α_ℓ))` over a zero `x` row.
pub fn fresh_derivative(cfg: &StepperConfig) -> Matrix {
    let p = cfg.params();
    let k = p.k();
    let mut m = Matrix::zeros(k + 2, k + 1);
    m[(0, 0)] = cfg.decay_v() * (2.0 * p.gamma()).sqrt();
    for l in 0..k {
        m[(l + 1, l + 1)] = cfg.decay_z()[l] * (2.0 * p.alpha()[l]).sqrt();
    }
    m
}

/// Covariance of one step's fresh noise, `γ₁ = diag(σ₀², σ_ℓ², 0)`.
pub fn fresh_covariance(cfg: &StepperConfig) -> Matrix {
    let mut diag: Vec<f64> = cfg.sigma().iter().map(|s| s * s).collect();
    diag.push(0.0);
    Matrix::from_diagonal(&DVector::from_vec(diag))
}

/// Central finite differences of the full step map in `Yₙ` with the noise
/// held fixed; a reference for [`StepJacobians::a_n`].
pub fn finite_difference_transfer(cfg: &StepperConfig, y_n: &State, noise: &NoiseBlock, eps: f64) -> Result<Matrix> {
    let d = y_n.dim();
    let mut out = Matrix::zeros(d, d);
    for col in 0..d {
        let mut plus = y_n.clone();
        let mut minus = y_n.clone();
        plus.as_mut_slice()[col] += eps;
        minus.as_mut_slice()[col] -= eps;
        let yp = cfg.split_step(&plus, noise)?.y_next;
        let ym = cfg.split_step(&minus, noise)?.y_next;
        for row in 0..d {
            out[(row, col)] = (yp.as_slice()[row] - ym.as_slice()[row]) / (2.0 * eps);
        }
    }
    Ok(out)
}

/// Malliavin covariance `γₙ` of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct MalliavinEnsembleState {
    pub gamma_n: Matrix,
    pub n: usize,
}

impl MalliavinEnsembleState {
    /// `γ₀ = 0` for a deterministic initial value.
    pub fn new(dim: usize) -> Self {
        Self { gamma_n: Matrix::zeros(dim, dim), n: 0 }
    }
}

/// `γₙ₊₁ = Aₙ γₙ Aₙᵀ + γ₁`, symmetrized.
pub fn covariance_step(st: &MalliavinEnsembleState, jac: &StepJacobians, cfg: &StepperConfig) -> MalliavinEnsembleState {
    let next = &jac.a_n * &st.gamma_n * jac.a_n.transpose() + fresh_covariance(cfg);
    MalliavinEnsembleState { gamma_n: linalg::symmetrize(&next), n: st.n + 1 }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &Matrix) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension { expected: m.nrows(), got: m.ncols() });
    }
    let scale = m.iter().fold(1.0f64, |s, v| s.max(v.abs()));
    let asym = linalg::max_asymmetry(m);
    if asym > 1e-12 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(linalg::jacobi_eigenvalues(&linalg::symmetrize(m))[0])
}
