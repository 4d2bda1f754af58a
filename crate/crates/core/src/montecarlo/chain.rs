//! Long single-level ensembles: temporal averages, ensemble-mean series and
//! state snapshots for ergodicity and distribution experiments.

use super::ensemble::NewtonStats;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::integrator::{is_diverged, NoiseBlock, StepperConfig, StepperOptions};
use crate::model::{ModelParams, Observable, State};
use crate::rng::{self, Purpose};
use crate::stats::{self, RunningMoments, BOOTSTRAP_RESAMPLES};

#[derive(Debug, Clone)]
pub struct ChainConfig {
    pub params: ModelParams,
    pub options: StepperOptions,
    pub h: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub master_seed: u64,
    /// Added to the path index when selecting noise streams, so that runs
    /// from different initial values stay independent under one seed.
    pub stream_offset: u64,
    pub initial_state: State,
    pub observables: Vec<Observable>,
    /// Series are recorded every `stride` steps.
    pub stride: usize,
    /// Steps at which full states are kept.
    pub snapshot_steps: Vec<usize>,
    pub zero_noise: bool,
}

impl ChainConfig {
    pub fn validate(&self) -> Result<StepperConfig> {
        if self.n_paths == 0 || self.n_steps == 0 {
            return Err(Error::InvalidEnsemble("n_paths and n_steps must be positive".into()));
        }
        if self.stride == 0 || !self.n_steps.is_multiple_of(self.stride) {
            return Err(Error::InvalidEnsemble(format!(
                "stride {} must divide the step count {}",
                self.stride, self.n_steps
            )));
        }
        if let Some(&s) = self.snapshot_steps.iter().find(|&&s| s > self.n_steps) {
            return Err(Error::InvalidEnsemble(format!("snapshot step {s} beyond the horizon {}", self.n_steps)));
        }
        self.params.check_state(&self.initial_state)?;
        StepperConfig::new(self.params.clone(), self.h, self.options)
    }

    fn rows(&self) -> usize {
        self.n_steps / self.stride
    }
}

/// Recorded output of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPath {
    /// Row-major `[row][observable]` cumulative sums `Σ_{n=1}^{(row+1)·stride} g(Yₙ)`.
    pub cumulative: Vec<f64>,
    /// Row-major `[row][observable]` values `g(Y_{(row+1)·stride})`.
    pub instantaneous: Vec<f64>,
    pub snapshots: Vec<State>,
    pub diverged: bool,
    pub newton: NewtonStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainRun {
    pub h: f64,
    pub stride: usize,
    pub n_steps: usize,
    pub observables: Vec<Observable>,
    pub snapshot_steps: Vec<usize>,
    pub paths: Vec<ChainPath>,
}

/// One point of a temporal-average series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub t: f64,
    pub n: usize,
    pub running_mean: f64,
    pub std_error: f64,
}

fn run_one(cfg: &ChainConfig, stepper: &StepperConfig, j: usize) -> ChainPath {
    let n_obs = cfg.observables.len();
    let rows = cfg.rows();
    let mut out = ChainPath {
        cumulative: Vec::with_capacity(rows * n_obs),
        instantaneous: Vec::with_capacity(rows * n_obs),
        snapshots: Vec::with_capacity(cfg.snapshot_steps.len()),
        diverged: false,
        newton: NewtonStats::default(),
    };
    let mut rng = rng::stream(cfg.master_seed, Purpose::PathNoise, cfg.stream_offset + j as u64);
    let k = cfg.params.k();
    let mut sums = vec![0.0; n_obs];
    let mut y = cfg.initial_state.clone();
    let mut snap = cfg.snapshot_steps.iter().filter(|&&s| s == 0).count();
    out.snapshots.extend(std::iter::repeat_n(y.clone(), snap));
    for n in 1..=cfg.n_steps {
        let noise = if cfg.zero_noise { NoiseBlock::zeros(k) } else { stepper.sample_noise(&mut rng) };
        match stepper.split_step(&y, &noise) {
            Ok(rec) if !is_diverged(&rec.y_next) => {
                out.newton.steps += 1;
                out.newton.total_iters += rec.newton_iters;
                out.newton.max_iters = out.newton.max_iters.max(rec.newton_iters);
                out.newton.fallbacks += rec.fallback as usize;
                y = rec.y_next;
            }
            _ => {
                out.diverged = true;
                return out;
            }
        }
        let at_row = n % cfg.stride == 0;
        for (s, g) in sums.iter_mut().zip(&cfg.observables) {
            let val = g.eval(&cfg.params, &y);
            *s += val;
            if at_row {
                out.instantaneous.push(val);
            }
        }
        if at_row {
            out.cumulative.extend_from_slice(&sums);
        }
        while snap < cfg.snapshot_steps.len() && cfg.snapshot_steps[snap] == n {
            out.snapshots.push(y.clone());
            snap += 1;
        }
    }
    out
}

/// Runs `cfg.n_paths` independent chains. `snapshot_steps` must be sorted.
pub fn run_chains(cfg: &ChainConfig, exec: Execution) -> Result<ChainRun> {
    let stepper = cfg.validate()?;
    if cfg.snapshot_steps.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidEnsemble("snapshot steps must be sorted".into()));
    }
    let paths = exec.map(cfg.n_paths, |j| run_one(cfg, &stepper, j));
    Ok(ChainRun {
        h: cfg.h,
        stride: cfg.stride,
        n_steps: cfg.n_steps,
        observables: cfg.observables.clone(),
        snapshot_steps: cfg.snapshot_steps.clone(),
        paths,
    })
}

impl ChainRun {
    pub fn rows(&self) -> usize {
        self.n_steps / self.stride
    }

    pub fn converged(&self) -> impl Iterator<Item = &ChainPath> {
        self.paths.iter().filter(|p| !p.diverged)
    }

    pub fn diverged_count(&self) -> usize {
        self.paths.iter().filter(|p| p.diverged).count()
    }

    pub fn observable_index(&self, g: Observable) -> Result<usize> {
        self.observables
            .iter()
            .position(|&o| o == g)
            .ok_or_else(|| Error::Estimation(format!("observable {g} was not recorded")))
    }

    fn check_burn_in(&self, burn_in: usize) -> Result<usize> {
        if burn_in >= self.n_steps || !burn_in.is_multiple_of(self.stride) {
            return Err(Error::Estimation(format!(
                "burn-in {burn_in} must be a multiple of the stride {} below {}",
                self.stride, self.n_steps
            )));
        }
        Ok(burn_in / self.stride)
    }

    /// Per-path time averages `(1/(N-b)) Σ_{n=b+1}^N g(Yₙ)` at row `row`.
    fn path_averages(&self, obs: usize, burn_rows: usize, row: usize) -> Vec<f64> {
        let m = self.observables.len();
        let n = (row + 1) * self.stride;
        let b = burn_rows * self.stride;
        self.converged()
            .map(|p| {
                let base = if burn_rows == 0 { 0.0 } else { p.cumulative[(burn_rows - 1) * m + obs] };
                (p.cumulative[row * m + obs] - base) / (n - b) as f64
            })
            .collect()
    }

    /// Running mean `(1/(N-b)) Σ_{n=b+1}^N E[g(Yₙ)]` at every recorded `N > b`.
    /// The standard error is the spread of per-path time averages over `√M`.
    pub fn temporal_average(&self, g: Observable, burn_in: usize) -> Result<Vec<SeriesPoint>> {
        let obs = self.observable_index(g)?;
        let burn_rows = self.check_burn_in(burn_in)?;
        if self.converged().count() < 2 {
            return Err(Error::Estimation("fewer than two converged paths".into()));
        }
        Ok((burn_rows..self.rows())
            .map(|row| {
                let m: RunningMoments = self.path_averages(obs, burn_rows, row).into_iter().collect();
                let n = (row + 1) * self.stride;
                SeriesPoint { t: n as f64 * self.h, n, running_mean: m.mean(), std_error: m.std_error() }
            })
            .collect())
    }

    /// Bootstrap standard error of the final running mean.
    pub fn final_bootstrap_se(&self, g: Observable, burn_in: usize, seed: u64) -> Result<f64> {
        let obs = self.observable_index(g)?;
        let burn_rows = self.check_burn_in(burn_in)?;
        let avgs = self.path_averages(obs, burn_rows, self.rows() - 1);
        Ok(stats::bootstrap_se(&avgs, stats::mean, BOOTSTRAP_RESAMPLES, seed))
    }

    /// Ensemble mean of `g(Yₙ)` at every recorded step, as `(t, mean)`.
    pub fn ensemble_mean_series(&self, g: Observable) -> Result<Vec<(f64, f64)>> {
        let obs = self.observable_index(g)?;
        let m = self.observables.len();
        Ok((0..self.rows())
            .map(|row| {
                let mean: RunningMoments = self.converged().map(|p| p.instantaneous[row * m + obs]).collect();
                ((row + 1) as f64 * self.stride as f64 * self.h, mean.mean())
            })
            .collect())
    }

    /// States of the converged paths at `snapshot_steps[i]`.
    pub fn snapshot(&self, i: usize) -> Vec<State> {
        self.converged().map(|p| p.snapshots[i].clone()).collect()
    }

    pub fn newton(&self) -> NewtonStats {
        let mut s = NewtonStats::default();
        for p in &self.paths {
            s.merge(&p.newton);
        }
        s
    }
}
