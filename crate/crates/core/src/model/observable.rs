use std::fmt;
use std::str::FromStr;

use super::{ModelParams, State};
use crate::error::Error;

/// Named test functions evaluated on states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Observable {
    /// `1`
    One,
    /// `v`
    V,
    /// `x`
    X,
    /// `x²`
    XSquared,
    /// `cos(‖y‖²)`
    CosNormSq,
    /// `exp(-‖y‖²/2)`
    ExpHalfNormSq,
    /// `sin(‖y‖²)`
    SinNormSq,
    /// `sin(√(v² + x²))`
    SinRadiusVX,
    /// `H = H₀ + (γ/2) v x`
    Hamiltonian,
    /// `H₀`
    Hamiltonian0,
}

impl Observable {
    pub const ALL: [Observable; 10] = [
        Observable::One,
        Observable::V,
        Observable::X,
        Observable::XSquared,
        Observable::CosNormSq,
        Observable::ExpHalfNormSq,
        Observable::SinNormSq,
        Observable::SinRadiusVX,
        Observable::Hamiltonian,
        Observable::Hamiltonian0,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Observable::One => "one",
            Observable::V => "v",
            Observable::X => "x",
            Observable::XSquared => "x2",
            Observable::CosNormSq => "cos_norm2",
            Observable::ExpHalfNormSq => "exp_half_norm2",
            Observable::SinNormSq => "sin_norm2",
            Observable::SinRadiusVX => "sin_radius_vx",
            Observable::Hamiltonian => "H",
            Observable::Hamiltonian0 => "H0",
        }
    }

    pub fn eval(self, params: &ModelParams, s: &State) -> f64 {
        match self {
            Observable::One => 1.0,
            Observable::V => s.v(),
            Observable::X => s.x(),
            Observable::XSquared => s.x() * s.x(),
            Observable::CosNormSq => s.norm_sq().cos(),
            Observable::ExpHalfNormSq => (-0.5 * s.norm_sq()).exp(),
            Observable::SinNormSq => s.norm_sq().sin(),
            Observable::SinRadiusVX => (s.v() * s.v() + s.x() * s.x()).sqrt().sin(),
            Observable::Hamiltonian => params.hamiltonian(s),
            Observable::Hamiltonian0 => params.hamiltonian_h0(s),
        }
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Observable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Observable::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown observable `{s}`")))
    }
}
