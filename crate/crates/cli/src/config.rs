//! TOML run configuration.
//!
//! Every field has a default except `experiment`; `resolved()` materializes
//! them so the echoed file alone reproduces a run.

use std::path::{Path, PathBuf};

use gle_avf::{ModelParams, Observable, PotentialSpec, State, StepperOptions};
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Converge,
    Ergodic,
    Distribution,
    Malliavin,
    Simulate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converge: Option<ConvergeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ergodic: Option<ErgodicSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<DistributionSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub malliavin: Option<MalliavinSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSection>,
}

fn default_seed() -> u64 {
    20_250_101
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn ones() -> Vec<f64> {
    vec![1.0; 5]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub gamma: f64,
    pub alpha: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Named preset; ignored when `coefficients` is set.
    pub potential: String,
    /// Ascending polynomial coefficients of `U`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<f64>>,
    /// `K` with `U'' ≥ -K`; required with `coefficients`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hessian_lower_bound: Option<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            gamma: 5.0,
            alpha: vec![3.0; 3],
            lambda: vec![2.0; 3],
            potential: "double_well".into(),
            coefficients: None,
            hessian_lower_bound: None,
        }
    }
}

impl ModelSection {
    pub fn params(&self) -> Result<ModelParams, ConfigError> {
        let potential = match &self.coefficients {
            Some(c) => {
                let Some(k) = self.hessian_lower_bound else {
                    return err("model.coefficients requires model.hessian_lower_bound");
                };
                PotentialSpec::new(c.clone(), k).map_err(|e| ConfigError(format!("model: {e}")))?
            }
            None => PotentialSpec::preset(&self.potential)
                .ok_or_else(|| ConfigError(format!("model.potential: unknown preset {:?}", self.potential)))?,
        };
        ModelParams::new(self.gamma, self.alpha.clone(), self.lambda.clone(), potential)
            .map_err(|e| ConfigError(format!("model: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub fixed_point_max_iter: usize,
    pub fixed_point_damping: f64,
    pub explicit_predictor: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        let o = StepperOptions::default();
        Self {
            newton_tol: o.newton_tol,
            newton_max_iter: o.newton_max_iter,
            fixed_point_max_iter: o.fixed_point_max_iter,
            fixed_point_damping: o.fixed_point_damping,
            explicit_predictor: o.explicit_predictor,
        }
    }
}

impl SolverSection {
    pub fn options(&self, override_h_star: bool) -> StepperOptions {
        StepperOptions {
            newton_tol: self.newton_tol,
            newton_max_iter: self.newton_max_iter,
            fixed_point_max_iter: self.fixed_point_max_iter,
            fixed_point_damping: self.fixed_point_damping,
            explicit_predictor: self.explicit_predictor,
            override_h_star,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergeSection {
    pub t_end: f64,
    /// Step sizes, coarsest first.
    pub levels: Vec<f64>,
    pub n_paths: usize,
    pub initial_state: Vec<f64>,
    /// Weak-error test function.
    pub test_function: String,
    /// Accepted range of the strong regression order.
    pub order_window: [f64; 2],
}

impl Default for ConvergeSection {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            levels: (6..=10).map(|i| 0.5f64.powi(i)).collect(),
            n_paths: 2000,
            initial_state: ones(),
            test_function: Observable::SinRadiusVX.name().into(),
            order_window: [0.85, 1.15],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErgodicSection {
    pub h: f64,
    pub t_end: f64,
    pub n_paths: usize,
    /// Series rows every `stride` steps.
    pub stride: usize,
    pub burn_in: usize,
    pub observables: Vec<String>,
    pub initial_states: Vec<Vec<f64>>,
    pub labels: Vec<String>,
    /// Exact Gibbs samples for each reference value.
    pub reference_samples: usize,
}

impl Default for ErgodicSection {
    fn default() -> Self {
        Self {
            h: 0.125,
            t_end: 512.0,
            n_paths: 2000,
            stride: 8,
            burn_in: 0,
            observables: [Observable::CosNormSq, Observable::ExpHalfNormSq, Observable::SinNormSq]
                .iter()
                .map(|o| o.name().to_string())
                .collect(),
            initial_states: vec![
                vec![-10.0, 2.0, 3.0, 4.0, 1.0],
                vec![2.0, 1.0, 1.0, 1.0, -10.0],
                vec![1.0, -1.0, -1.0, -1.0, 3.0],
                vec![4.0, 2.0, 3.0, 4.0, 2.0],
            ],
            labels: (1..=4).map(|i| format!("Y{i}")).collect(),
            reference_samples: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistributionSection {
    pub h: f64,
    pub n_paths: usize,
    pub initial_state: Vec<f64>,
    pub times: Vec<f64>,
    pub bins: [usize; 2],
    pub range: [[f64; 2]; 2],
    pub kde_grid: usize,
    pub baseline_replicates: usize,
}

impl Default for DistributionSection {
    fn default() -> Self {
        Self {
            h: 0.125,
            n_paths: 2000,
            initial_state: ones(),
            times: vec![2.0, 16.0, 128.0, 512.0],
            bins: [24, 24],
            range: [[-3.0, 3.0], [-3.0, 3.0]],
            kde_grid: 128,
            baseline_replicates: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MalliavinSection {
    pub t_end: f64,
    pub steps: Vec<f64>,
    pub n_paths: usize,
    pub initial_state: Vec<f64>,
    /// Random states for the finite-difference check of `Aₙ`.
    pub fd_states: usize,
    /// Lower bound on the slope of `log median λ_min` against `log(1/h)`.
    pub min_slope: f64,
}

impl Default for MalliavinSection {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            steps: (4..=8).map(|i| 0.5f64.powi(i)).collect(),
            n_paths: 100,
            initial_state: ones(),
            fd_states: 100,
            min_slope: -3.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Avf,
    Em,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub h: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub stride: usize,
    pub initial_state: Vec<f64>,
    pub scheme: Scheme,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self { h: 0.125, n_steps: 100, n_paths: 1, stride: 1, initial_state: ones(), scheme: Scheme::Avf }
    }
}

pub fn state(v: &[f64], params: &ModelParams, field: &str) -> Result<State, ConfigError> {
    if v.len() != params.dim() {
        return err(format!("{field}: expected {} components, got {}", params.dim(), v.len()));
    }
    if v.iter().any(|c| !c.is_finite()) {
        return err(format!("{field}: non-finite component"));
    }
    Ok(State::from_slice(v))
}

pub fn observable(name: &str, field: &str) -> Result<Observable, ConfigError> {
    name.parse().map_err(|_| {
        let known: Vec<_> = Observable::ALL.iter().map(|o| o.name()).collect();
        ConfigError(format!("{field}: unknown observable {name:?} (known: {})", known.join(", ")))
    })
}

fn positive(x: f64, field: &str) -> Result<(), ConfigError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        err(format!("{field} must be positive, got {x}"))
    }
}

fn nonzero(n: usize, field: &str) -> Result<(), ConfigError> {
    if n > 0 {
        Ok(())
    } else {
        err(format!("{field} must be positive"))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    /// Copy with the active experiment's section materialized and all other
    /// sections dropped.
    pub fn resolved(&self) -> Self {
        let mut r = Self {
            converge: None,
            ergodic: None,
            distribution: None,
            malliavin: None,
            simulate: None,
            ..self.clone()
        };
        match self.experiment {
            Experiment::Converge => r.converge = Some(self.converge()),
            Experiment::Ergodic => r.ergodic = Some(self.ergodic()),
            Experiment::Distribution => r.distribution = Some(self.distribution()),
            Experiment::Malliavin => r.malliavin = Some(self.malliavin()),
            Experiment::Simulate => r.simulate = Some(self.simulate()),
        }
        r
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn converge(&self) -> ConvergeSection {
        self.converge.clone().unwrap_or_default()
    }

    pub fn ergodic(&self) -> ErgodicSection {
        self.ergodic.clone().unwrap_or_default()
    }

    pub fn distribution(&self) -> DistributionSection {
        self.distribution.clone().unwrap_or_default()
    }

    pub fn malliavin(&self) -> MalliavinSection {
        self.malliavin.clone().unwrap_or_default()
    }

    pub fn simulate(&self) -> SimulateSection {
        self.simulate.clone().unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let params = self.model.params()?;
        match self.experiment {
            Experiment::Converge => {
                let c = self.converge();
                if c.levels.len() < 3 {
                    return err(format!("converge.levels: need ≥ 3 levels, got {}", c.levels.len()));
                }
                positive(c.t_end, "converge.t_end")?;
                nonzero(c.n_paths, "converge.n_paths")?;
                state(&c.initial_state, &params, "converge.initial_state")?;
                observable(&c.test_function, "converge.test_function")?;
            }
            Experiment::Ergodic => {
                let e = self.ergodic();
                positive(e.h, "ergodic.h")?;
                positive(e.t_end, "ergodic.t_end")?;
                nonzero(e.n_paths, "ergodic.n_paths")?;
                nonzero(e.stride, "ergodic.stride")?;
                if e.observables.is_empty() {
                    return err("ergodic.observables: empty list");
                }
                for o in &e.observables {
                    observable(o, "ergodic.observables")?;
                }
                if e.initial_states.is_empty() {
                    return err("ergodic.initial_states: empty list");
                }
                if e.labels.len() != e.initial_states.len() {
                    return err("ergodic.labels: one label per initial state required");
                }
                for s in &e.initial_states {
                    state(s, &params, "ergodic.initial_states")?;
                }
            }
            Experiment::Distribution => {
                let d = self.distribution();
                positive(d.h, "distribution.h")?;
                nonzero(d.n_paths, "distribution.n_paths")?;
                if d.times.is_empty() {
                    return err("distribution.times: empty time list");
                }
                for &t in &d.times {
                    positive(t, "distribution.times")?;
                }
                nonzero(d.bins[0].min(d.bins[1]), "distribution.bins")?;
                nonzero(d.kde_grid, "distribution.kde_grid")?;
                for [lo, hi] in d.range {
                    if !(lo < hi) {
                        return err(format!("distribution.range: empty range [{lo}, {hi}]"));
                    }
                }
                state(&d.initial_state, &params, "distribution.initial_state")?;
            }
            Experiment::Malliavin => {
                let m = self.malliavin();
                positive(m.t_end, "malliavin.t_end")?;
                if m.steps.is_empty() {
                    return err("malliavin.steps: empty list");
                }
                for &h in &m.steps {
                    positive(h, "malliavin.steps")?;
                }
                nonzero(m.n_paths, "malliavin.n_paths")?;
                state(&m.initial_state, &params, "malliavin.initial_state")?;
            }
            Experiment::Simulate => {
                let s = self.simulate();
                positive(s.h, "simulate.h")?;
                nonzero(s.n_paths, "simulate.n_paths")?;
                nonzero(s.stride, "simulate.stride")?;
                state(&s.initial_state, &params, "simulate.initial_state")?;
            }
        }
        Ok(())
    }
}
