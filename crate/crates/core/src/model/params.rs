use super::{PotentialSpec, State};
use crate::error::{Error, Result};

/// Friction, memory-kernel modes and potential of the lifted GLE. The kernel
/// is `K(t) = Σ λ_ℓ² exp(-α_ℓ t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    gamma: f64,
    alpha: Vec<f64>,
    lambda: Vec<f64>,
    potential: PotentialSpec,
}

impl ModelParams {
    pub fn new(gamma: f64, alpha: Vec<f64>, lambda: Vec<f64>, potential: PotentialSpec) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParams(format!("gamma must be positive, got {gamma}")));
        }
        if alpha.is_empty() {
            return Err(Error::InvalidParams("need at least one auxiliary mode (k >= 1)".into()));
        }
        if alpha.len() != lambda.len() {
            return Err(Error::InvalidParams(format!(
                "alpha has {} entries but lambda has {}",
                alpha.len(),
                lambda.len()
            )));
        }
        if let Some(a) = alpha.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidParams(format!("every alpha must be positive, got {a}")));
        }
        if let Some(l) = lambda.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidParams(format!("every lambda must be positive, got {l}")));
        }
        Ok(Self { gamma, alpha, lambda, potential })
    }

    /// Uniform modes: `k` copies of `(alpha, lambda)`.
    pub fn uniform(gamma: f64, k: usize, alpha: f64, lambda: f64, potential: PotentialSpec) -> Result<Self> {
        Self::new(gamma, vec![alpha; k], vec![lambda; k], potential)
    }

    /// Double well, `k = 3`, `α_ℓ = 3`, `λ_ℓ = 2`, `γ = 5`.
    pub fn reference() -> Self {
        Self::uniform(5.0, 3, 3.0, 2.0, PotentialSpec::double_well()).expect("reference parameters are valid")
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    pub fn dim(&self) -> usize {
        self.alpha.len() + 2
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn potential(&self) -> &PotentialSpec {
        &self.potential
    }

    /// `Σ λ_ℓ²`.
    pub fn lambda_sq_sum(&self) -> f64 {
        self.lambda.iter().map(|l| l * l).sum()
    }

    /// Step-size threshold below which the implicit AVF system is uniquely
    /// solvable:
    /// `min{ 4/(K+1), min_ℓ 8/(γλ_ℓ²), 8/(2γ + 2(K+1) + γk) }`.
    pub fn h_star(&self) -> f64 {
        let kb = self.potential.hessian_lower_bound();
        let g = self.gamma;
        let by_lambda = self
            .lambda
            .iter()
            .map(|l| 8.0 / (g * l * l))
            .fold(f64::INFINITY, f64::min);
        (4.0 / (kb + 1.0))
            .min(by_lambda)
            .min(8.0 / (2.0 * g + 2.0 * (kb + 1.0) + g * self.k() as f64))
    }

    /// `H₀ = ½v² + ½‖z‖² + U(x)`, the Gibbs–Boltzmann energy.
    pub fn hamiltonian_h0(&self, s: &State) -> f64 {
        let zz: f64 = s.z().iter().map(|z| z * z).sum();
        0.5 * s.v() * s.v() + 0.5 * zz + self.potential.value(s.x())
    }

    /// `H = H₀ + (γ/2) v x`, conserved by the deterministic sub-flow.
    pub fn hamiltonian(&self, s: &State) -> f64 {
        self.hamiltonian_h0(s) + 0.5 * self.gamma * s.v() * s.x()
    }

    /// Checks that a state has this model's dimension.
    pub fn check_state(&self, s: &State) -> Result<()> {
        if s.dim() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: s.dim() });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn h_star_reference() {
        assert_relative_eq!(ModelParams::reference().h_star(), 8.0 / 29.0, epsilon = 1e-15);
    }

    #[test]
    fn h_star_convex_quartic() {
        let u = PotentialSpec::new(vec![0.0, 0.0, 0.0, 0.0, 1.0], 0.0).unwrap();
        let p = ModelParams::uniform(1.0, 1, 1.0, 1.0, u).unwrap();
        assert_relative_eq!(p.h_star(), 1.6, epsilon = 1e-15);
    }

    #[test]
    fn h_star_decreases_in_lambda() {
        let mut last = f64::INFINITY;
        for l in [1.0, 2.0, 4.0, 8.0, 16.0, 32.0] {
            let p = ModelParams::uniform(5.0, 3, 3.0, l, PotentialSpec::double_well()).unwrap();
            let hs = p.h_star();
            assert!(hs > 0.0 && hs <= last);
            last = hs;
        }
        assert_relative_eq!(last, 8.0 / (5.0 * 1024.0), epsilon = 1e-15);
    }

    #[test]
    fn hamiltonian_examples() {
        let p = ModelParams::reference();
        let zero = State::zeros(3);
        assert_eq!(p.hamiltonian_h0(&zero), 0.0);
        assert_eq!(p.hamiltonian(&zero), 0.0);
        let ones = State::new(1.0, &[1.0, 1.0, 1.0], 1.0);
        assert_relative_eq!(p.hamiltonian_h0(&ones), 1.75, epsilon = 1e-15);
        assert_relative_eq!(p.hamiltonian(&ones), 4.25, epsilon = 1e-15);
        let s = State::new(1.0, &[0.0, 0.0, 0.0], -1.0);
        assert_relative_eq!(p.hamiltonian(&s), -2.25, epsilon = 1e-15);
    }

    #[test]
    fn rejects_invalid_params() {
        let u = PotentialSpec::double_well;
        assert!(ModelParams::new(0.0, vec![1.0], vec![1.0], u()).is_err());
        assert!(ModelParams::new(1.0, vec![], vec![], u()).is_err());
        assert!(ModelParams::new(1.0, vec![1.0], vec![1.0, 2.0], u()).is_err());
        assert!(ModelParams::new(1.0, vec![-1.0], vec![1.0], u()).is_err());
        assert!(ModelParams::new(1.0, vec![1.0], vec![0.0], u()).is_err());
    }

    #[test]
    fn hamiltonian_difference_is_cross_term() {
        use rand::{Rng, SeedableRng};
        let p = ModelParams::reference();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let y: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let s = State::from_vec(y);
            let diff = p.hamiltonian(&s) - p.hamiltonian_h0(&s);
            assert_relative_eq!(diff, 2.5 * s.v() * s.x(), epsilon = 1e-12, max_relative = 1e-12);
        }
    }
}
