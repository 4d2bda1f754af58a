//! One step of the splitting AVF scheme
//!
//! ```text
//! Ȳ      = Φᴰ_h(Yₙ)   implicit AVF step of the Hamiltonian part (conserves H)
//! Yₙ₊₁   = Φˢ_h(Ȳ)    exact Ornstein–Uhlenbeck flow of the linear stochastic part
//! ```
//!
//! The AVF system `G(Ȳ, Yₙ, h) = 0` is solved by Newton's method with the
//! closed-form inverse of `∂G/∂Ȳ`, falling back to damped fixed-point
//! iteration if Newton fails.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::malliavin::ImplicitJacobian;
use crate::model::{ModelParams, State};

/// Any state component beyond this magnitude marks a path as diverged.
pub const DIVERGENCE_BOUND: f64 = 1e10;

/// Below this relative gap `|2α - γ|/γ` the OU coupling coefficient uses its
/// confluent limit.
const CONFLUENT_GAP: f64 = 1e-6;

/// Solver settings and safety switches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperOptions {
    /// Absolute tolerance on `‖G‖∞`.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub fixed_point_max_iter: usize,
    pub fixed_point_damping: f64,
    /// Start Newton from an explicit Euler step of the Hamiltonian field
    /// instead of `Yₙ`.
    pub explicit_predictor: bool,
    /// Permit `h ≥ h*`, where unique solvability is no longer guaranteed.
    pub override_h_star: bool,
}

impl Default for StepperOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-12,
            newton_max_iter: 50,
            fixed_point_max_iter: 400,
            fixed_point_damping: 0.5,
            explicit_predictor: false,
            override_h_star: false,
        }
    }
}

/// Step size, model, and the precomputed coefficients of the exact OU flow.
#[derive(Debug, Clone)]
pub struct StepperConfig {
    params: ModelParams,
    h: f64,
    options: StepperOptions,
    /// `e^{-γh/2}`
    decay_v: f64,
    /// `e^{-α_ℓ h}`
    decay_z: Vec<f64>,
    /// `c_ℓ(h) = γλ_ℓ (e^{-γh/2} - e^{-α_ℓ h}) / (2α_ℓ - γ)`
    coupling: Vec<f64>,
    /// `σ₀ = √(2 - 2e^{-γh})`, `σ_ℓ = √(1 - e^{-2α_ℓ h})`
    sigma: Vec<f64>,
    warning: Option<String>,
}

impl StepperConfig {
    pub fn new(params: ModelParams, h: f64, options: StepperOptions) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidStep(h));
        }
        let h_star = params.h_star();
        let warning = if h >= h_star {
            if !options.override_h_star {
                return Err(Error::StepAboveThreshold { h, h_star });
            }
            Some(format!("h = {h} is not below h* = {h_star}; unique solvability is not guaranteed"))
        } else {
            None
        };
        let gamma = params.gamma();
        let decay_v = (-0.5 * gamma * h).exp();
        let decay_z: Vec<f64> = params.alpha().iter().map(|a| (-a * h).exp()).collect();
        let coupling = params
            .alpha()
            .iter()
            .zip(params.lambda())
            .map(|(&a, &l)| coupling_coefficient(gamma, a, l, h))
            .collect();
        let mut sigma = Vec::with_capacity(params.k() + 1);
        sigma.push((-2.0 * (-gamma * h).exp_m1()).sqrt());
        sigma.extend(params.alpha().iter().map(|a| (-(-2.0 * a * h).exp_m1()).sqrt()));
        Ok(Self { params, h, options, decay_v, decay_z, coupling, sigma, warning })
    }

    /// Default solver options.
    pub fn with_defaults(params: ModelParams, h: f64) -> Result<Self> {
        Self::new(params, h, StepperOptions::default())
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn options(&self) -> &StepperOptions {
        &self.options
    }

    pub fn decay_v(&self) -> f64 {
        self.decay_v
    }

    pub fn decay_z(&self) -> &[f64] {
        &self.decay_z
    }

    pub fn coupling(&self) -> &[f64] {
        &self.coupling
    }

    /// Standard deviations of the `k+1` noise components.
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Set when the config was built with `h ≥ h*` under the override.
    pub fn warning(&self) -> Option<&str> {
        self.warning.as_deref()
    }

    /// `G(Ȳ, Yₙ, h)`: zero exactly when `Ȳ` is the AVF update of `Yₙ`.
    pub fn avf_residual(&self, y_bar: &State, y_n: &State) -> Vec<f64> {
        let mut out = vec![0.0; y_n.dim()];
        self.residual_into(y_bar.as_slice(), y_n.as_slice(), &mut out);
        out
    }

    fn residual_into(&self, yb: &[f64], yn: &[f64], out: &mut [f64]) {
        let h = self.h;
        let gamma = self.params.gamma();
        let lambda = self.params.lambda();
        let d = yn.len();
        let sv = yb[0] + yn[0];
        let sx = yb[d - 1] + yn[d - 1];
        let dg = self.params.potential().discrete_gradient(yn[d - 1], yb[d - 1]);
        let mut coupling_sum = 0.0;
        for (l, &lam) in lambda.iter().enumerate() {
            let sz = yb[l + 1] + yn[l + 1];
            coupling_sum += lam * sz;
            let b = -0.5 * lam * h * sv - 0.25 * gamma * lam * h * sx;
            out[l + 1] = yb[l + 1] - yn[l + 1] - b;
        }
        let a = -0.25 * gamma * h * sv - h * dg + 0.5 * h * coupling_sum;
        let c = 0.25 * gamma * h * sx + 0.5 * h * sv;
        out[0] = yb[0] - yn[0] - a;
        out[d - 1] = yb[d - 1] - yn[d - 1] - c;
    }

    fn implicit_jacobian(&self, x_n: f64, x_bar: f64) -> ImplicitJacobian<'_> {
        let (f1, _) = self.params.potential().f1_f2(x_n, x_bar);
        ImplicitJacobian::new(self.h, self.params.gamma(), self.params.lambda(), f1)
    }

    /// Explicit Euler step of the Hamiltonian field.
    fn predictor(&self, yn: &[f64]) -> Vec<f64> {
        let h = self.h;
        let gamma = self.params.gamma();
        let lambda = self.params.lambda();
        let d = yn.len();
        let (v, x) = (yn[0], yn[d - 1]);
        let mut out = yn.to_vec();
        let zsum: f64 = lambda.iter().zip(&yn[1..d - 1]).map(|(l, z)| l * z).sum();
        out[0] += h * (-0.5 * gamma * v - self.params.potential().gradient(x) + zsum);
        for (l, &lam) in lambda.iter().enumerate() {
            out[l + 1] += h * (-lam * v - 0.5 * gamma * lam * x);
        }
        out[d - 1] += h * (0.5 * gamma * x + v);
        out
    }

    /// Solves `G(Ȳ, Yₙ, h) = 0` for `Ȳ`.
    pub fn avf_substep(&self, y_n: &State) -> Result<AvfSolution> {
        let yn = y_n.as_slice();
        let d = yn.len();
        let tol = self.options.newton_tol;
        let mut yb = if self.options.explicit_predictor { self.predictor(yn) } else { yn.to_vec() };
        let mut g = vec![0.0; d];
        let mut step = vec![0.0; d];

        let mut residual = f64::INFINITY;
        for iter in 1..=self.options.newton_max_iter {
            self.residual_into(&yb, yn, &mut g);
            residual = inf_norm(&g);
            if residual <= tol {
                return Ok(AvfSolution { y_bar: State::from_vec(yb), iters: iter, residual, fallback: false });
            }
            if !residual.is_finite() {
                break;
            }
            let jac = self.implicit_jacobian(yn[d - 1], yb[d - 1]);
            let det = jac.det();
            if det.abs() < 1e-300 {
                break;
            }
            jac.apply_adjugate(&g, &mut step);
            let mut step_norm: f64 = 0.0;
            for (y, s) in yb.iter_mut().zip(&step) {
                let delta = s / det;
                *y -= delta;
                step_norm = step_norm.max(delta.abs());
            }
            // Rounding floor: the update no longer changes the iterate.
            let scale = inf_norm(&yb).max(1.0);
            if step_norm <= 4.0 * f64::EPSILON * scale {
                self.residual_into(&yb, yn, &mut g);
                residual = inf_norm(&g);
                if residual <= tol * scale {
                    return Ok(AvfSolution { y_bar: State::from_vec(yb), iters: iter + 1, residual, fallback: false });
                }
                break;
            }
        }
        self.fixed_point(yn, residual)
    }

    fn fixed_point(&self, yn: &[f64], newton_residual: f64) -> Result<AvfSolution> {
        let d = yn.len();
        let damping = self.options.fixed_point_damping;
        let tol = self.options.newton_tol;
        let mut yb = yn.to_vec();
        let mut g = vec![0.0; d];
        let mut residual = newton_residual;
        for iter in 1..=self.options.fixed_point_max_iter {
            self.residual_into(&yb, yn, &mut g);
            residual = inf_norm(&g);
            if residual <= tol {
                return Ok(AvfSolution {
                    y_bar: State::from_vec(yb),
                    iters: self.options.newton_max_iter + iter,
                    residual,
                    fallback: true,
                });
            }
            if !residual.is_finite() {
                break;
            }
            for (y, r) in yb.iter_mut().zip(&g) {
                *y -= damping * r;
            }
        }
        Err(Error::NonConvergence {
            iters: self.options.newton_max_iter + self.options.fixed_point_max_iter,
            residual,
        })
    }

    /// Exact flow of the linear stochastic subsystem over one step.
    pub fn ou_substep(&self, y_bar: &State, noise: &NoiseBlock) -> State {
        let yb = y_bar.as_slice();
        let d = yb.len();
        let g = noise.as_slice();
        let x_bar = yb[d - 1];
        let mut out = Vec::with_capacity(d);
        out.push(self.decay_v * yb[0] + g[0]);
        for l in 0..d - 2 {
            out.push(self.decay_z[l] * yb[l + 1] + self.coupling[l] * x_bar + g[l + 1]);
        }
        out.push(self.decay_v * x_bar);
        State::from_vec(out)
    }

    /// `Yₙ₊₁ = Φˢ(Φᴰ(Yₙ))`.
    pub fn split_step(&self, y_n: &State, noise: &NoiseBlock) -> Result<StepRecord> {
        let avf = self.avf_substep(y_n)?;
        let y_next = self.ou_substep(&avf.y_bar, noise);
        Ok(StepRecord {
            y_bar: avf.y_bar,
            y_next,
            newton_iters: avf.iters,
            residual: avf.residual,
            fallback: avf.fallback,
        })
    }

    /// Draws the `k+1` exact stochastic-convolution increments of one step.
    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> NoiseBlock {
        NoiseBlock(self.sigma.iter().map(|s| s * rng.sample::<f64, _>(StandardNormal)).collect())
    }

    /// Drift of the lifted GLE, `μ(y)`.
    pub fn drift(&self, y: &State) -> Vec<f64> {
        let p = &self.params;
        let (v, x) = (y.v(), y.x());
        let mut mu = Vec::with_capacity(y.dim());
        let zsum: f64 = p.lambda().iter().zip(y.z()).map(|(l, z)| l * z).sum();
        mu.push(-p.gamma() * v - p.potential().gradient(x) + zsum);
        for ((a, l), z) in p.alpha().iter().zip(p.lambda()).zip(y.z()) {
            mu.push(-a * z - l * v);
        }
        mu.push(v);
        mu
    }

    /// One explicit Euler–Maruyama step with Brownian increments `dw`
    /// (variance `h` each). Returns [`EmStep::Diverged`] once any component is
    /// non-finite or exceeds [`DIVERGENCE_BOUND`].
    pub fn em_step(&self, y_n: &State, dw: &[f64]) -> EmStep {
        let p = &self.params;
        let mu = self.drift(y_n);
        let mut next: Vec<f64> = y_n.as_slice().iter().zip(&mu).map(|(y, m)| y + self.h * m).collect();
        next[0] += (2.0 * p.gamma()).sqrt() * dw[0];
        for (l, a) in p.alpha().iter().enumerate() {
            next[l + 1] += (2.0 * a).sqrt() * dw[l + 1];
        }
        let state = State::from_vec(next);
        if is_diverged(&state) {
            EmStep::Diverged
        } else {
            EmStep::Finite(state)
        }
    }

    /// Brownian increments for [`StepperConfig::em_step`].
    pub fn sample_brownian<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let sd = self.h.sqrt();
        (0..=self.params.k()).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
    }
}

/// `γλ (e^{-γh/2} - e^{-αh}) / (2α - γ)`, written as
/// `γλ e^{-αh} expm1((α - γ/2)h) / (2α - γ)` to avoid cancellation.
fn coupling_coefficient(gamma: f64, alpha: f64, lambda: f64, h: f64) -> f64 {
    let gap = 2.0 * alpha - gamma;
    if gap.abs() < CONFLUENT_GAP * gamma {
        0.5 * gamma * lambda * h * (-0.5 * gamma * h).exp()
    } else {
        gamma * lambda * (-alpha * h).exp() * (0.5 * gap * h).exp_m1() / gap
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, c| if c.is_nan() { f64::NAN } else { m.max(c.abs()) })
}

/// Non-finite or beyond [`DIVERGENCE_BOUND`].
pub fn is_diverged(s: &State) -> bool {
    s.as_slice().iter().any(|c| !c.is_finite() || c.abs() > DIVERGENCE_BOUND)
}

/// Output of the implicit AVF solve.
#[derive(Debug, Clone, PartialEq)]
pub struct AvfSolution {
    pub y_bar: State,
    /// Residual evaluations used (Newton budget plus fixed-point iterations
    /// when the fallback ran).
    pub iters: usize,
    pub residual: f64,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub y_bar: State,
    pub y_next: State,
    pub newton_iters: usize,
    pub residual: f64,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmStep {
    Finite(State),
    Diverged,
}

/// The `k+1` Gaussian stochastic-convolution increments driving `v, z_1..z_k`
/// over one step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBlock(Vec<f64>);

impl NoiseBlock {
    pub fn new(g: Vec<f64>) -> Self {
        Self(g)
    }

    pub fn zeros(k: usize) -> Self {
        Self(vec![0.0; k + 1])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Combines two consecutive fine-step blocks into the block of the
    /// doubled step: `g = e^{-decay·h_fine} g_a + g_b` per component.
    pub fn coarsen(a: &NoiseBlock, b: &NoiseBlock, fine: &StepperConfig, coarse: &StepperConfig) -> Result<NoiseBlock> {
        if (coarse.h - 2.0 * fine.h).abs() > 1e-12 * coarse.h {
            return Err(Error::StepMismatch { coarse: coarse.h, fine: fine.h });
        }
        if a.0.len() != b.0.len() || a.0.len() != fine.sigma.len() {
            return Err(Error::Dimension { expected: fine.sigma.len(), got: a.0.len().min(b.0.len()) });
        }
        let mut g = Vec::with_capacity(a.0.len());
        g.push(fine.decay_v * a.0[0] + b.0[0]);
        for l in 0..fine.decay_z.len() {
            g.push(fine.decay_z[l] * a.0[l + 1] + b.0[l + 1]);
        }
        Ok(NoiseBlock(g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PotentialSpec;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn cfg(h: f64) -> StepperConfig {
        StepperConfig::with_defaults(ModelParams::reference(), h).unwrap()
    }

    fn ones() -> State {
        State::new(1.0, &[1.0, 1.0, 1.0], 1.0)
    }

    #[test]
    fn rejects_large_steps_without_override() {
        let p = ModelParams::reference();
        assert!(matches!(StepperConfig::with_defaults(p.clone(), 0.3), Err(Error::StepAboveThreshold { .. })));
        assert!(StepperConfig::with_defaults(p.clone(), 0.0).is_err());
        let opts = StepperOptions { override_h_star: true, ..Default::default() };
        let c = StepperConfig::new(p, 0.3, opts).unwrap();
        assert!(c.warning().is_some());
    }

    #[test]
    fn precomputed_noise_variances() {
        let c = cfg(0.125);
        assert_relative_eq!(c.sigma()[0].powi(2), 2.0 * (1.0 - (-0.625f64).exp()), epsilon = 1e-14);
        assert_relative_eq!(c.sigma()[0], (2.0 - 2.0 * (-0.625f64).exp()).sqrt(), epsilon = 1e-15);
        for s in &c.sigma()[1..] {
            assert_relative_eq!(s * s, 1.0 - (-0.75f64).exp(), epsilon = 1e-14);
        }
    }

    #[test]
    fn residual_vanishes_at_origin() {
        let c = cfg(0.0625);
        let z = State::zeros(3);
        assert!(c.avf_residual(&z, &z).iter().all(|&r| r == 0.0));
    }

    #[test]
    fn residual_at_equal_endpoints() {
        // Hand evaluation with Ȳ = Yₙ = 1, h = 1/16:
        // A = -γh/2 - h U'(1) + h Σλ = -5/32 + 6/16 = 7/32
        // B = -λh - γλh/2 = -1/8 - 5/16 = -7/16
        // C = γh/2 + h = 5/32 + 2/32 = 7/32
        let c = cfg(0.0625);
        let r = c.avf_residual(&ones(), &ones());
        assert_relative_eq!(r[0], -7.0 / 32.0, epsilon = 1e-15);
        for &rz in &r[1..4] {
            assert_relative_eq!(rz, 7.0 / 16.0, epsilon = 1e-15);
        }
        assert_relative_eq!(r[4], -7.0 / 32.0, epsilon = 1e-15);
    }

    #[test]
    fn origin_is_fixed_in_one_iteration() {
        let c = cfg(0.0625);
        let s = c.avf_substep(&State::zeros(3)).unwrap();
        assert_eq!(s.y_bar, State::zeros(3));
        assert_eq!(s.iters, 1);
    }

    #[test]
    fn newton_matches_fixed_point_oracle() {
        let c = cfg(1.0 / 256.0);
        let yn = ones();
        let newton = c.avf_substep(&yn).unwrap();
        // Plain Picard iteration Ȳ ← Ȳ - G(Ȳ) to 1e-14.
        let mut yb = yn.clone();
        for _ in 0..10_000 {
            let g = c.avf_residual(&yb, &yn);
            if g.iter().all(|r| r.abs() < 1e-15) {
                break;
            }
            let next: Vec<f64> = yb.as_slice().iter().zip(&g).map(|(y, r)| y - r).collect();
            yb = State::from_vec(next);
        }
        assert!(c.avf_residual(&yb, &yn).iter().all(|r| r.abs() < 1e-14));
        for (a, b) in newton.y_bar.as_slice().iter().zip(yb.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fallback_converges_when_newton_budget_is_zero() {
        let p = ModelParams::reference();
        let opts = StepperOptions { newton_max_iter: 0, ..Default::default() };
        let c = StepperConfig::new(p, 1.0 / 16.0, opts).unwrap();
        let s = c.avf_substep(&ones()).unwrap();
        assert!(s.fallback);
        assert!(s.residual <= 1e-12);
    }

    #[test]
    fn non_convergence_is_reported() {
        let p = ModelParams::reference();
        let opts = StepperOptions { newton_max_iter: 1, fixed_point_max_iter: 2, ..Default::default() };
        let c = StepperConfig::new(p, 1.0 / 16.0, opts).unwrap();
        assert!(matches!(c.avf_substep(&ones()), Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn avf_conserves_energy() {
        let c = cfg(0.125);
        let p = c.params().clone();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10_000 {
            let y: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let yn = State::from_vec(y);
            let s = c.avf_substep(&yn).unwrap();
            let h0 = p.hamiltonian(&yn);
            let dh = (p.hamiltonian(&s.y_bar) - h0).abs();
            assert!(dh <= 10.0 * 1e-12 * (1.0 + h0.abs()), "ΔH = {dh:e} at {yn}");
        }
    }

    #[test]
    fn ou_substep_examples() {
        let c = cfg(0.125);
        let zero = NoiseBlock::zeros(3);
        let out = c.ou_substep(&State::new(1.0, &[0.0; 3], 0.0), &zero);
        assert_eq!(out, State::new((-0.3125f64).exp(), &[0.0; 3], 0.0));

        let out = c.ou_substep(&State::new(0.0, &[0.0; 3], 1.0), &zero);
        // 10 (e^{-0.3125} - e^{-0.375}) / 1, evaluated in extended precision.
        let c_ref = 0.443_263_501_556_695_9_f64;
        for &z in out.z() {
            assert_relative_eq!(z, c_ref, max_relative = 1e-14);
        }
        assert_relative_eq!(out.x(), (-0.3125f64).exp(), epsilon = 1e-16);

        let g = NoiseBlock::new(vec![0.1, -0.2, 0.3, -0.4]);
        let out = c.ou_substep(&State::zeros(3), &g);
        assert_eq!(out, State::new(0.1, &[-0.2, 0.3, -0.4], 0.0));
    }

    #[test]
    fn confluent_coupling_limit() {
        // 2α = γ exactly.
        let u = PotentialSpec::double_well();
        let p = ModelParams::uniform(2.0, 1, 1.0, 0.5, u.clone()).unwrap();
        let c = StepperConfig::with_defaults(p, 0.1).unwrap();
        assert_relative_eq!(c.coupling()[0], 0.5 * 2.0 * 0.5 * 0.1 * (-0.1f64).exp(), epsilon = 1e-16);
        // Just outside the switch the general formula agrees to ~1e-6 relative.
        let p = ModelParams::uniform(2.0, 1, 1.0 + 1e-5, 0.5, u).unwrap();
        let c2 = StepperConfig::with_defaults(p, 0.1).unwrap();
        assert!((c2.coupling()[0] / c.coupling()[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn split_step_origin_stays() {
        let c = cfg(0.125);
        let r = c.split_step(&State::zeros(3), &NoiseBlock::zeros(3)).unwrap();
        assert_eq!(r.y_next, State::zeros(3));
    }

    #[test]
    fn split_step_is_deterministic() {
        let c = cfg(0.125);
        let mut rng = crate::rng::stream(5, crate::rng::Purpose::PathNoise, 0);
        let noise = c.sample_noise(&mut rng);
        let a = c.split_step(&ones(), &noise).unwrap();
        let b = c.split_step(&ones(), &noise).unwrap();
        assert_eq!(a, b);
        let mut rng2 = crate::rng::stream(5, crate::rng::Purpose::PathNoise, 0);
        assert_eq!(c.sample_noise(&mut rng2), noise);
    }

    #[test]
    fn one_step_noise_moments() {
        let c = cfg(0.125);
        let mut rng = crate::rng::stream(99, crate::rng::Purpose::PathNoise, 0);
        let y_bar = c.avf_substep(&ones()).unwrap().y_bar;
        let n = 1_000_000;
        let mut mean_v = crate::stats::RunningMoments::default();
        let mut sq = crate::stats::RunningMoments::default();
        for _ in 0..n {
            let g = c.sample_noise(&mut rng);
            let next = c.ou_substep(&y_bar, &g);
            mean_v.push(next.v());
            let noise_part = next.v() - c.decay_v() * y_bar.v();
            sq.push(noise_part * noise_part);
        }
        let s0 = c.sigma()[0];
        assert!((mean_v.mean() - c.decay_v() * y_bar.v()).abs() < 4.0 * s0 / 1e3);
        let target = 2.0 * (1.0 - (-0.625f64).exp());
        assert!((sq.mean() - target).abs() < 4.0 * sq.std_error(), "{} vs {target}", sq.mean());
    }

    #[test]
    fn noise_covariance_is_diagonal() {
        let c = cfg(0.125);
        let mut rng = crate::rng::stream(7, crate::rng::Purpose::PathNoise, 1);
        let n = 1_000_000;
        let mut cov = [[0.0f64; 4]; 4];
        for _ in 0..n {
            let g = c.sample_noise(&mut rng);
            let s = g.as_slice();
            for i in 0..4 {
                for j in 0..4 {
                    cov[i][j] += s[i] * s[j];
                }
            }
        }
        for i in 0..4 {
            for j in 0..4 {
                let est = cov[i][j] / n as f64;
                let (si, sj) = (c.sigma()[i], c.sigma()[j]);
                let target = if i == j { si * si } else { 0.0 };
                // Var(g_i g_j) = σ_i²σ_j² (1 + δ_ij).
                let se = si * sj * (if i == j { 2.0f64 } else { 1.0 }).sqrt() / (n as f64).sqrt();
                assert!((est - target).abs() < 4.0 * se, "({i},{j}) {est} vs {target}");
            }
        }
    }

    #[test]
    fn coarsening_identity() {
        let fine = cfg(0.0625);
        let coarse = cfg(0.125);
        let zero = NoiseBlock::zeros(3);
        assert_eq!(NoiseBlock::coarsen(&zero, &zero, &fine, &coarse).unwrap(), zero);
        assert!(NoiseBlock::coarsen(&zero, &zero, &fine, &cfg(0.1)).is_err());
        let analytic = fine.decay_v().powi(2) * fine.sigma()[0].powi(2) + fine.sigma()[0].powi(2);
        assert_relative_eq!(analytic, coarse.sigma()[0].powi(2), epsilon = 1e-14);
        for l in 0..3 {
            let a = fine.decay_z()[l].powi(2) * fine.sigma()[l + 1].powi(2) + fine.sigma()[l + 1].powi(2);
            assert_relative_eq!(a, coarse.sigma()[l + 1].powi(2), epsilon = 1e-14);
        }
    }

    #[test]
    fn ou_semigroup_pathwise() {
        // With the deterministic substep replaced by the identity, two fine OU
        // steps with coarsened noise equal one coarse OU step.
        let fine = cfg(0.0625);
        let coarse = cfg(0.125);
        let mut rng = crate::rng::stream(3, crate::rng::Purpose::PathNoise, 0);
        for _ in 0..100 {
            let y: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y = State::from_vec(y);
            let (a, b) = (fine.sample_noise(&mut rng), fine.sample_noise(&mut rng));
            let two = fine.ou_substep(&fine.ou_substep(&y, &a), &b);
            let one = coarse.ou_substep(&y, &NoiseBlock::coarsen(&a, &b, &fine, &coarse).unwrap());
            for (p, q) in two.as_slice().iter().zip(one.as_slice()) {
                assert!((p - q).abs() < 1e-13, "{two} vs {one}");
            }
        }
    }

    #[test]
    fn em_drift_and_divergence() {
        let c = cfg(0.1);
        assert_eq!(c.drift(&ones()), vec![1.0, -5.0, -5.0, -5.0, 1.0]);
        assert_eq!(c.em_step(&State::zeros(3), &[0.0; 4]), EmStep::Finite(State::zeros(3)));
        let mut y = State::new(0.0, &[0.0; 3], 10.0);
        let mut diverged_at = None;
        for n in 0..50 {
            match c.em_step(&y, &[0.0; 4]) {
                EmStep::Finite(s) => y = s,
                EmStep::Diverged => {
                    diverged_at = Some(n);
                    break;
                }
            }
        }
        assert!(diverged_at.is_some());
    }
}
