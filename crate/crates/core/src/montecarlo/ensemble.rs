//! Coupled multi-level ensembles over a fixed horizon.
//!
//! Every path draws its noise at the finest level from its own stream; the
//! coarser levels receive the exact recombination of consecutive fine blocks,
//! so all levels see the same Brownian functional.

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::integrator::{is_diverged, NoiseBlock, StepperConfig, StepperOptions};
use crate::model::{ModelParams, Observable, State};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub params: ModelParams,
    pub options: StepperOptions,
    pub n_paths: usize,
    pub t_end: f64,
    /// Step sizes, coarsest first, each twice the next.
    pub levels: Vec<f64>,
    pub master_seed: u64,
    pub initial_state: State,
    /// Time averages `(1/N) Σ_{n=1}^N g(Yₙ)` recorded per level.
    pub observables: Vec<Observable>,
    /// Replace every noise block by zero.
    pub zero_noise: bool,
}

/// Number of steps of size `h` in `[0, t]`, if `t/h` is an integer.
pub fn step_count(t: f64, h: f64) -> Option<usize> {
    let n = t / h;
    let r = n.round();
    ((n - r).abs() <= 1e-9 * r.max(1.0) && r >= 1.0).then_some(r as usize)
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::InvalidEnsemble("n_paths must be positive".into()));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidEnsemble(format!("T must be positive, got {}", self.t_end)));
        }
        if self.levels.is_empty() {
            return Err(Error::InvalidEnsemble("no step sizes given".into()));
        }
        for &h in &self.levels {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidStep(h));
            }
            if step_count(self.t_end, h).is_none() {
                return Err(Error::InvalidEnsemble(format!("T = {} is not a multiple of h = {h}", self.t_end)));
            }
        }
        for w in self.levels.windows(2) {
            if (w[0] - 2.0 * w[1]).abs() > 1e-12 * w[0] {
                return Err(Error::StepMismatch { coarse: w[0], fine: w[1] });
            }
        }
        self.params.check_state(&self.initial_state)
    }

    /// One stepper per level, coarsest first.
    pub fn steppers(&self) -> Result<Vec<StepperConfig>> {
        self.validate()?;
        self.levels.iter().map(|&h| StepperConfig::new(self.params.clone(), h, self.options)).collect()
    }
}

/// Implicit-solver statistics of one path at one level.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NewtonStats {
    pub steps: usize,
    pub total_iters: usize,
    pub max_iters: usize,
    pub fallbacks: usize,
}

impl NewtonStats {
    pub fn mean_iters(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.total_iters as f64 / self.steps as f64
        }
    }

    pub fn merge(&mut self, o: &NewtonStats) {
        self.steps += o.steps;
        self.total_iters += o.total_iters;
        self.max_iters = self.max_iters.max(o.max_iters);
        self.fallbacks += o.fallbacks;
    }
}

/// One path across all levels. Index `i` refers to `EnsembleConfig::levels[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    /// `None` when the level diverged or its solver failed.
    pub terminal: Vec<Option<State>>,
    /// `[level][observable]` time averages; empty when no observables are set.
    pub time_averages: Vec<Vec<f64>>,
    pub newton: Vec<NewtonStats>,
}

impl PathResult {
    pub fn diverged(&self) -> bool {
        self.terminal.iter().any(Option::is_none)
    }
}

struct LevelState<'a> {
    cfg: &'a StepperConfig,
    y: Option<State>,
    sums: Vec<f64>,
    stats: NewtonStats,
    pending: Option<NoiseBlock>,
}

impl LevelState<'_> {
    fn advance(&mut self, noise: &NoiseBlock, observables: &[Observable]) {
        let Some(y) = self.y.as_ref() else { return };
        match self.cfg.split_step(y, noise) {
            Ok(rec) if !is_diverged(&rec.y_next) => {
                self.stats.steps += 1;
                self.stats.total_iters += rec.newton_iters;
                self.stats.max_iters = self.stats.max_iters.max(rec.newton_iters);
                self.stats.fallbacks += rec.fallback as usize;
                for (s, g) in self.sums.iter_mut().zip(observables) {
                    *s += g.eval(self.cfg.params(), &rec.y_next);
                }
                self.y = Some(rec.y_next);
            }
            _ => self.y = None,
        }
    }
}

fn run_path(cfg: &EnsembleConfig, steppers: &[StepperConfig], j: usize) -> PathResult {
    let finest = steppers.len() - 1;
    let k = cfg.params.k();
    let mut levels: Vec<LevelState> = steppers
        .iter()
        .map(|s| LevelState {
            cfg: s,
            y: Some(cfg.initial_state.clone()),
            sums: vec![0.0; cfg.observables.len()],
            stats: NewtonStats::default(),
            pending: None,
        })
        .collect();
    let n_fine = step_count(cfg.t_end, cfg.levels[finest]).unwrap_or(0);
    let mut rng = rng::stream(cfg.master_seed, Purpose::PathNoise, j as u64);
    for _ in 0..n_fine {
        let noise = if cfg.zero_noise { NoiseBlock::zeros(k) } else { steppers[finest].sample_noise(&mut rng) };
        levels[finest].advance(&noise, &cfg.observables);
        let mut carry = noise;
        for i in (0..finest).rev() {
            match levels[i + 1].pending.take() {
                None => {
                    levels[i + 1].pending = Some(carry);
                    break;
                }
                Some(a) => {
                    carry = NoiseBlock::coarsen(&a, &carry, &steppers[i + 1], &steppers[i])
                        .expect("levels validated");
                    levels[i].advance(&carry, &cfg.observables);
                }
            }
        }
    }
    let mut out = PathResult { terminal: Vec::new(), time_averages: Vec::new(), newton: Vec::new() };
    for (lv, &h) in levels.into_iter().zip(&cfg.levels) {
        let n = step_count(cfg.t_end, h).unwrap_or(1) as f64;
        if !cfg.observables.is_empty() {
            out.time_averages.push(lv.sums.iter().map(|s| s / n).collect());
        }
        out.terminal.push(lv.y);
        out.newton.push(lv.stats);
    }
    out
}

/// Runs `cfg.n_paths` coupled paths. Output depends only on `cfg`.
pub fn run_coupled_paths(cfg: &EnsembleConfig, exec: Execution) -> Result<Vec<PathResult>> {
    let steppers = cfg.steppers()?;
    Ok(exec.map(cfg.n_paths, |j| run_path(cfg, &steppers, j)))
}

/// Paths on which level `i` did not diverge.
pub fn converged_count(results: &[PathResult], level: usize) -> usize {
    results.iter().filter(|r| r.terminal.get(level).is_some_and(Option::is_some)).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PotentialSpec;

    fn base(levels: Vec<f64>, n_paths: usize) -> EnsembleConfig {
        EnsembleConfig {
            params: ModelParams::reference(),
            options: StepperOptions::default(),
            n_paths,
            t_end: 1.0,
            levels,
            master_seed: 42,
            initial_state: State::new(1.0, &[1.0, 1.0, 1.0], 1.0),
            observables: vec![Observable::V],
            zero_noise: false,
        }
    }

    #[test]
    fn step_count_cases() {
        assert_eq!(step_count(1.0, 0.125), Some(8));
        assert_eq!(step_count(512.0, 0.125), Some(4096));
        assert_eq!(step_count(1.0, 0.3), None);
        assert_eq!(step_count(0.1, 1.0), None);
    }

    #[test]
    fn validation() {
        assert!(base(vec![0.125, 0.0625], 1).validate().is_ok());
        assert!(matches!(base(vec![0.125, 0.05], 1).validate(), Err(Error::StepMismatch { .. })));
        assert!(base(vec![0.3], 1).validate().is_err());
        assert!(base(vec![], 1).validate().is_err());
        assert!(base(vec![0.125], 0).validate().is_err());
        let mut c = base(vec![0.125], 1);
        c.initial_state = State::zeros(2);
        assert!(matches!(c.validate(), Err(Error::Dimension { .. })));
        assert!(matches!(base(vec![0.5], 1).steppers(), Err(Error::StepAboveThreshold { .. })));
    }

    #[test]
    fn zero_noise_matches_deterministic_chain() {
        let mut c = base(vec![0.125], 1);
        c.zero_noise = true;
        let r = run_coupled_paths(&c, Execution::Sequential).unwrap();
        let s = StepperConfig::with_defaults(ModelParams::reference(), 0.125).unwrap();
        let mut y = c.initial_state.clone();
        let mut vsum = 0.0;
        for _ in 0..8 {
            y = s.split_step(&y, &NoiseBlock::zeros(3)).unwrap().y_next;
            vsum += y.v();
        }
        assert_eq!(r[0].terminal[0].as_ref().unwrap(), &y);
        assert_eq!(r[0].time_averages[0][0], vsum / 8.0);
        assert!(r[0].newton[0].steps == 8 && r[0].newton[0].mean_iters() >= 1.0);
    }

    #[test]
    fn single_level_equals_manual_stream() {
        let c = base(vec![0.0625], 3);
        let r = run_coupled_paths(&c, Execution::Sequential).unwrap();
        let s = &c.steppers().unwrap()[0];
        let mut rng = rng::stream(42, Purpose::PathNoise, 2);
        let mut y = c.initial_state.clone();
        for _ in 0..16 {
            y = s.split_step(&y, &s.sample_noise(&mut rng)).unwrap().y_next;
        }
        assert_eq!(r[2].terminal[0].as_ref().unwrap(), &y);
    }

    #[test]
    fn coarse_level_sees_coarsened_noise() {
        // A two-level run's coarse path equals a single-level run driven by
        // manually coarsened fine noise.
        let c = base(vec![0.125, 0.0625], 1);
        let r = run_coupled_paths(&c, Execution::Sequential).unwrap();
        let st = c.steppers().unwrap();
        let mut rng = rng::stream(42, Purpose::PathNoise, 0);
        let mut y = c.initial_state.clone();
        for _ in 0..8 {
            let a = st[1].sample_noise(&mut rng);
            let b = st[1].sample_noise(&mut rng);
            let g = NoiseBlock::coarsen(&a, &b, &st[1], &st[0]).unwrap();
            y = st[0].split_step(&y, &g).unwrap().y_next;
        }
        assert_eq!(r[0].terminal[0].as_ref().unwrap(), &y);
    }

    #[test]
    fn deterministic_and_backend_independent() {
        let c = base(vec![0.125, 0.0625, 0.03125], 16);
        let a = run_coupled_paths(&c, Execution::Sequential).unwrap();
        let b = run_coupled_paths(&c, Execution::Parallel).unwrap();
        let d = crate::exec::with_workers(Some(3), || run_coupled_paths(&c, Execution::Parallel).unwrap());
        assert_eq!(a, b);
        assert_eq!(a, d);
        assert_eq!(converged_count(&a, 2), 16);
    }

    #[test]
    fn divergent_level_is_marked() {
        // With the override, a huge step from a large state breaks the solver
        // or blows up; the path is flagged rather than aborting the ensemble.
        let mut c = base(vec![4.0], 2);
        c.t_end = 64.0;
        c.options.override_h_star = true;
        c.options.newton_max_iter = 3;
        c.options.fixed_point_max_iter = 3;
        c.initial_state = State::new(50.0, &[0.0, 0.0, 0.0], 50.0);
        let r = run_coupled_paths(&c, Execution::Sequential).unwrap();
        assert!(r.iter().all(PathResult::diverged));
        assert_eq!(converged_count(&r, 0), 0);
    }

    #[test]
    fn linear_potential_tracks_gaussian_mean() {
        // With U = x²/2 the scheme is linear, so the ensemble mean follows the
        // noise-free chain; compare it with the exact mean e^{tB} y₀.
        let u = PotentialSpec::with_degree_override(vec![0.0, 0.0, 0.5], 0.0).unwrap();
        let params = ModelParams::uniform(1.0, 1, 1.5, 0.8, u).unwrap();
        let mut c = base(vec![0.05, 0.025], 1);
        c.params = params.clone();
        c.zero_noise = true;
        c.initial_state = State::new(1.0, &[-0.5], 0.7);
        let r = run_coupled_paths(&c, Execution::Sequential).unwrap();
        // drift matrix for (v, z, x)
        let b = nalgebra::DMatrix::from_row_slice(3, 3, &[-1.0, 0.8, -1.0, -0.8, -1.5, 0.0, 1.0, 0.0, 0.0]);
        let exact = b.exp() * nalgebra::DVector::from_vec(c.initial_state.as_slice().to_vec());
        let err = |lv: usize| {
            let y = r[0].terminal[lv].as_ref().unwrap();
            y.as_slice().iter().zip(exact.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let (e0, e1) = (err(0), err(1));
        assert!(e0 < 0.05 && e1 < 0.05, "{e0} {e1}");
        assert!(e1 < e0);
    }
}
