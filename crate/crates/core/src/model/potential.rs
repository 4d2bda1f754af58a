//! Polynomial confining potentials.

use crate::error::{Error, Result};

/// Points used to certify the declared Hessian lower bound.
const HESSIAN_CHECK_POINTS: usize = 10_000;
const HESSIAN_CHECK_SLACK: f64 = 1e-8;

/// Univariate polynomial potential `U(x) = Σ c_i x^i` of even degree with a
/// positive leading coefficient, together with a lower bound `K` such that
/// `U''(x) ≥ -K` everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    coefficients: Vec<f64>,
    hessian_lower_bound: f64,
    // Gauss–Legendre rule on [0, 1] with ⌈degree/2⌉ nodes.
    quadrature: Vec<(f64, f64)>,
}

impl PotentialSpec {
    /// Builds a potential from ascending-degree coefficients. The degree must
    /// be even and at least 4.
    pub fn new(coefficients: Vec<f64>, hessian_lower_bound: f64) -> Result<Self> {
        Self::build(coefficients, hessian_lower_bound, 4)
    }

    /// Like [`PotentialSpec::new`] but also admits quadratic potentials. The
    /// integrator's solvability theory assumes superquadratic growth; this is
    /// meant for linear-SDE reference tests.
    pub fn with_degree_override(coefficients: Vec<f64>, hessian_lower_bound: f64) -> Result<Self> {
        Self::build(coefficients, hessian_lower_bound, 2)
    }

    /// `U(x) = x⁴/4 - x²/2` with `K = 1`.
    pub fn double_well() -> Self {
        Self::new(vec![0.0, 0.0, -0.5, 0.0, 0.25], 1.0).expect("double-well preset is valid")
    }

    /// Looks up a named preset.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "double_well" => Some(Self::double_well()),
            _ => None,
        }
    }

    fn build(mut coefficients: Vec<f64>, hessian_lower_bound: f64, min_degree: usize) -> Result<Self> {
        while coefficients.len() > 1 && *coefficients.last().unwrap() == 0.0 {
            coefficients.pop();
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidPotential("non-finite coefficient".into()));
        }
        let degree = coefficients.len().saturating_sub(1);
        if degree < min_degree || !degree.is_multiple_of(2) {
            return Err(Error::InvalidPotential(format!(
                "degree must be even and at least {min_degree}, got {degree}"
            )));
        }
        if coefficients[degree] <= 0.0 {
            return Err(Error::InvalidPotential("leading coefficient must be positive".into()));
        }
        if !(hessian_lower_bound >= 0.0) || !hessian_lower_bound.is_finite() {
            return Err(Error::InvalidPotential(format!(
                "Hessian lower bound must be a finite nonnegative number, got {hessian_lower_bound}"
            )));
        }
        let quadrature = gauss_legendre_unit(degree.div_ceil(2));
        let spec = Self { coefficients, hessian_lower_bound, quadrature };

        let half_width = spec.truncation_half_width();
        let min_hess = (0..HESSIAN_CHECK_POINTS)
            .map(|i| {
                let x = -half_width + 2.0 * half_width * i as f64 / (HESSIAN_CHECK_POINTS - 1) as f64;
                spec.hessian(x)
            })
            .fold(f64::INFINITY, f64::min);
        if min_hess < -hessian_lower_bound - HESSIAN_CHECK_SLACK {
            return Err(Error::InvalidPotential(format!(
                "declared bound K = {hessian_lower_bound} violated: min U'' on [-{half_width}, {half_width}] is {min_hess}"
            )));
        }
        Ok(spec)
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    /// The declared constant `K` with `U'' ≥ -K`.
    pub fn hessian_lower_bound(&self) -> f64 {
        self.hessian_lower_bound
    }

    /// `(U(x), U'(x), U''(x))` by a single Horner sweep.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        let mut p = 0.0;
        let mut dp = 0.0;
        let mut ddp = 0.0;
        for &c in self.coefficients.iter().rev() {
            ddp = ddp * x + 2.0 * dp;
            dp = dp * x + p;
            p = p * x + c;
        }
        (p, dp, ddp)
    }

    pub fn value(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn gradient(&self, x: f64) -> f64 {
        self.eval(x).1
    }

    pub fn hessian(&self, x: f64) -> f64 {
        self.eval(x).2
    }

    /// `∫₀¹ U'(a + θ(b - a)) dθ`, i.e. the divided difference `U[a, b]`.
    ///
    /// Evaluated as `q(b)` where `U(x) = (x - a) q(x) + U(a)`, which is exact in
    /// exact arithmetic, free of the cancellation in `(U(b) - U(a)) / (b - a)`,
    /// and reduces to `U'(a)` when `a == b`. Arguments are ordered first so the
    /// result is bitwise symmetric.
    pub fn discrete_gradient(&self, a: f64, b: f64) -> f64 {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        let mut synthetic = 0.0;
        let mut acc = 0.0;
        for &c in self.coefficients[1..].iter().rev() {
            synthetic = c + a * synthetic;
            acc = acc * b + synthetic;
        }
        acc
    }

    /// Weighted Hessian averages along the chord from `a` to `b`:
    /// `F1 = ∫₀¹ U''(a + ξ(b-a)) ξ dξ`, `F2 = ∫₀¹ U''(a + ξ(b-a)) (1-ξ) dξ`.
    pub fn f1_f2(&self, a: f64, b: f64) -> (f64, f64) {
        let d = b - a;
        self.quadrature.iter().fold((0.0, 0.0), |(f1, f2), &(xi, w)| {
            let hess = self.hessian(a + xi * d);
            (f1 + w * hess * xi, f2 + w * hess * (1.0 - xi))
        })
    }

    /// Half-width `L` of the interval outside of which `exp(-U)` carries
    /// negligible mass: grown in steps of 1/4 until `exp(-U(±L))·2L` falls
    /// below `1e-12` times the mass inside.
    pub fn truncation_half_width(&self) -> f64 {
        let mut half_width: f64 = 1.0;
        loop {
            let shift = self.min_on(half_width);
            let mass = simpson(|x| (-(self.value(x) - shift)).exp(), -half_width, half_width, 2048);
            let edge = (-(self.value(half_width) - shift))
                .exp()
                .max((-(self.value(-half_width) - shift)).exp());
            // The slope condition keeps the tail estimate `e^{-U(L)}/U'(L)` valid.
            let outward = self.gradient(half_width) > 1.0 && self.gradient(-half_width) < -1.0;
            if outward && edge * 2.0 * half_width < 1e-12 * mass {
                return half_width;
            }
            half_width += 0.25;
        }
    }

    fn min_on(&self, half_width: f64) -> f64 {
        (0..=4096)
            .map(|i| self.value(-half_width + 2.0 * half_width * i as f64 / 4096.0))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Composite Simpson rule with `panels` (even) subintervals.
pub(crate) fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels + panels % 2;
    let dx = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + i as f64 * dx);
    }
    sum * dx / 3.0
}

/// Gauss–Legendre nodes and weights mapped to [0, 1].
pub(crate) fn gauss_legendre_unit(n: usize) -> Vec<(f64, f64)> {
    let n = n.max(1);
    let mut rule = Vec::with_capacity(n);
    for i in 0..n {
        // Tricomi initial guess for the i-th root of P_n.
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, t);
            dp = d;
            let step = p / d;
            t -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, t);
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - t * t) * dp * dp);
        rule.push((0.5 * (1.0 - t), 0.5 * w));
    }
    rule.sort_by(|a, b| a.0.total_cmp(&b.0));
    rule
}

fn legendre(n: usize, t: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = t;
    for j in 2..=n {
        let p2 = ((2 * j - 1) as f64 * t * p1 - (j - 1) as f64 * p0) / j as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
    (p1, dp)
}
