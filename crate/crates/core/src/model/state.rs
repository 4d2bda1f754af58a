use std::fmt;

/// Phase-space point `(v, z_1..z_k, x)` stored contiguously in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct State(Vec<f64>);

impl State {
    pub fn new(v: f64, z: &[f64], x: f64) -> Self {
        let mut data = Vec::with_capacity(z.len() + 2);
        data.push(v);
        data.extend_from_slice(z);
        data.push(x);
        Self(data)
    }

    pub fn zeros(k: usize) -> Self {
        Self(vec![0.0; k + 2])
    }

    /// Builds a state from a flat `(v, z, x)` vector; needs at least 3 entries.
    pub fn from_vec(data: Vec<f64>) -> Self {
        assert!(data.len() >= 3, "state needs v, at least one z and x");
        Self(data)
    }

    pub fn from_slice(data: &[f64]) -> Self {
        Self::from_vec(data.to_vec())
    }

    pub fn v(&self) -> f64 {
        self.0[0]
    }

    pub fn z(&self) -> &[f64] {
        &self.0[1..self.0.len() - 1]
    }

    pub fn x(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    /// Number of auxiliary modes.
    pub fn k(&self) -> usize {
        self.0.len() - 2
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// `‖y‖²` over all components.
    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum()
    }

    /// Squared Euclidean distance to another state of the same dimension.
    pub fn dist_sq(&self, other: &State) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}
