//! One function per experiment. Each writes its CSV files into the output
//! directory and reports whether its self-check held.

use std::path::{Path, PathBuf};

use gle_avf::integrator::{EmStep, NoiseBlock, StepperConfig, StepperOptions};
use gle_avf::malliavin::{self, MalliavinEnsembleState};
use gle_avf::montecarlo::{
    self, run_chains, run_coupled_paths, step_count, ChainConfig, EnsembleConfig, ErrorTable,
};
use gle_avf::rng::{self, Purpose};
use gle_avf::{stats, Error, Execution, GibbsReference, ModelParams, Observable, State};
use rand::Rng;

use crate::config::{self, ConfigError, Experiment, RunConfig, Scheme};
use crate::output::*;

/// Switches that come from the command line rather than the config file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Flags {
    pub override_h_star: bool,
    pub zero_noise: bool,
}

#[derive(Debug)]
pub enum RunError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(m) => write!(f, "configuration error: {m}"),
            RunError::Numerical(m) => write!(f, "numerical failure: {m}"),
            RunError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e.0)
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonConvergence { .. }
            | Error::Singular(_)
            | Error::Estimation(_)
            | Error::NonFiniteObservable { .. }
            | Error::NotSymmetric(_) => RunError::Numerical(e.to_string()),
            _ => RunError::Config(e.to_string()),
        }
    }
}

impl From<csv::Error> for RunError {
    fn from(e: csv::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// Verdict of the experiment's own check; `None` when it has none.
    pub check: Option<bool>,
    pub notes: Vec<String>,
}

impl Outcome {
    fn write<T: serde::Serialize>(&mut self, dir: &Path, name: &str, rows: &[T]) -> Result<(), RunError> {
        let p = dir.join(name);
        write_rows(&p, rows)?;
        self.files.push(p);
        Ok(())
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    params: ModelParams,
    options: StepperOptions,
    flags: Flags,
    out: &'a Path,
    exec: Execution,
}

/// Runs the configured experiment and writes its outputs under `out`.
pub fn run(cfg: &RunConfig, flags: Flags, out: &Path, exec: Execution) -> Result<Outcome, RunError> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let resolved = out.join("resolved_config.toml");
    std::fs::write(&resolved, cfg.resolved().to_toml())?;
    let ctx = Ctx {
        cfg,
        params: cfg.model.params()?,
        options: cfg.solver.options(flags.override_h_star),
        flags,
        out,
        exec,
    };
    let mut outcome = match cfg.experiment {
        Experiment::Converge => converge(&ctx),
        Experiment::Ergodic => ergodic(&ctx),
        Experiment::Distribution => distribution(&ctx),
        Experiment::Malliavin => malliavin_diagnostics(&ctx),
        Experiment::Simulate => simulate(&ctx),
    }?;
    outcome.files.insert(0, resolved);
    Ok(outcome)
}

fn steps(t: f64, h: f64, field: &str) -> Result<usize, RunError> {
    step_count(t, h).ok_or_else(|| RunError::Config(format!("{field}: {t} is not a multiple of h = {h}")))
}

fn converge(ctx: &Ctx) -> Result<Outcome, RunError> {
    let c = ctx.cfg.converge();
    let g = config::observable(&c.test_function, "converge.test_function")?;
    let ens = EnsembleConfig {
        params: ctx.params.clone(),
        options: ctx.options,
        n_paths: c.n_paths,
        t_end: c.t_end,
        levels: c.levels.clone(),
        master_seed: ctx.cfg.seed,
        initial_state: config::state(&c.initial_state, &ctx.params, "converge.initial_state")?,
        observables: vec![],
        zero_noise: ctx.flags.zero_noise,
    };
    let results = run_coupled_paths(&ens, ctx.exec)?;
    let mut newton = Vec::new();
    for (i, &h) in c.levels.iter().enumerate() {
        let ok = montecarlo::converged_count(&results, i);
        if ok == 0 {
            return Err(RunError::Numerical(format!("every path diverged at h = {h}")));
        }
        let mut stats = montecarlo::NewtonStats::default();
        for r in &results {
            stats.merge(&r.newton[i]);
        }
        newton.push(NewtonRow {
            h,
            mean_iters: stats.mean_iters(),
            max_iters: stats.max_iters,
            fallbacks: stats.fallbacks,
            diverged_paths: results.len() - ok,
        });
    }
    let table = ErrorTable::build(&results, &c.levels, |y| g.eval(&ctx.params, y), ctx.cfg.seed)?;
    let rows: Vec<ErrorTableRow> = table
        .rows
        .iter()
        .map(|r| ErrorTableRow {
            h: r.h,
            strong_error: r.strong_error,
            strong_order: r.strong_order,
            weak_error: r.weak_error,
            weak_order: r.weak_order,
            n_effective: r.n_effective,
        })
        .collect();
    let se: Vec<ErrorSeRow> = table
        .rows
        .iter()
        .map(|r| ErrorSeRow { h: r.h, strong_se: r.strong_se, weak_se: r.weak_se, excluded: c.n_paths - r.n_effective })
        .collect();
    let slope = table.strong_regression_order();
    let pass = slope >= c.order_window[0] && slope <= c.order_window[1];
    let summary = vec![
        SummaryRow::new("strong_regression_order", slope),
        SummaryRow::new("weak_regression_order", table.weak_regression_order()),
        SummaryRow::new("mean_strong_order", table.mean_strong_order()),
        SummaryRow::new("mean_weak_order", table.mean_weak_order()),
        SummaryRow::new("order_window_low", c.order_window[0]),
        SummaryRow::new("order_window_high", c.order_window[1]),
        SummaryRow::new("verdict", if pass { "pass" } else { "fail" }),
    ];
    let mut o = Outcome { check: Some(pass), ..Default::default() };
    o.notes.push(format!("strong regression order {slope:.4} (window {:?})", c.order_window));
    o.write(ctx.out, "error_table.csv", &rows)?;
    o.write(ctx.out, "error_se.csv", &se)?;
    o.write(ctx.out, "newton.csv", &newton)?;
    o.write(ctx.out, "order_summary.csv", &summary)?;
    Ok(o)
}

fn ergodic(ctx: &Ctx) -> Result<Outcome, RunError> {
    let e = ctx.cfg.ergodic();
    let n_steps = steps(e.t_end, e.h, "ergodic.t_end")?;
    if n_steps % e.stride != 0 || !e.burn_in.is_multiple_of(e.stride) || e.burn_in >= n_steps {
        return Err(RunError::Config(format!(
            "ergodic: stride {} must divide the step count {n_steps} and the burn-in {}",
            e.stride, e.burn_in
        )));
    }
    let observables: Vec<Observable> =
        e.observables.iter().map(|o| config::observable(o, "ergodic.observables")).collect::<Result<_, _>>()?;
    let mut recorded = observables.clone();
    if !recorded.contains(&Observable::Hamiltonian) {
        recorded.push(Observable::Hamiltonian);
    }

    let gibbs = GibbsReference::new(ctx.params.potential())?;
    let references: Vec<_> = observables
        .iter()
        .map(|&g| gibbs.expectation(&ctx.params, g, e.reference_samples, ctx.cfg.seed, ctx.exec))
        .collect::<Result<_, _>>()?;

    let mut series = Vec::new();
    let mut checks = Vec::new();
    let mut energy = Vec::new();
    for (i, (init, label)) in e.initial_states.iter().zip(&e.labels).enumerate() {
        let chain = ChainConfig {
            params: ctx.params.clone(),
            options: ctx.options,
            h: e.h,
            n_steps,
            n_paths: e.n_paths,
            master_seed: ctx.cfg.seed,
            stream_offset: (i * e.n_paths) as u64,
            initial_state: config::state(init, &ctx.params, "ergodic.initial_states")?,
            observables: recorded.clone(),
            stride: e.stride,
            snapshot_steps: vec![],
            zero_noise: ctx.flags.zero_noise,
        };
        let run = run_chains(&chain, ctx.exec)?;
        if run.converged().next().is_none() {
            return Err(RunError::Numerical(format!("every path diverged from {label}")));
        }
        for (t, mean_h) in run.ensemble_mean_series(Observable::Hamiltonian)? {
            energy.push(EnergyRow { t, initial_label: label.clone(), mean_h });
        }
        for (g, reference) in observables.iter().zip(&references) {
            let s = run.temporal_average(*g, e.burn_in)?;
            series.extend(s.iter().map(|p| SeriesRow {
                t: p.t,
                g_name: g.name().into(),
                initial_label: label.clone(),
                running_mean: p.running_mean,
                std_error: p.std_error,
            }));
            let last = s.last().expect("non-empty series");
            let combined = (last.std_error.powi(2) + reference.std_error.powi(2)).sqrt();
            checks.push(ErgodicCheckRow {
                g_name: g.name().into(),
                initial_label: label.clone(),
                final_mean: last.running_mean,
                std_error: last.std_error,
                bootstrap_se: run.final_bootstrap_se(*g, e.burn_in, ctx.cfg.seed)?,
                reference: reference.mean,
                z_score: (last.running_mean - reference.mean) / combined,
                diverged_paths: run.diverged_count(),
            });
        }
    }

    let mut pass = checks.iter().all(|c| c.z_score.abs() <= 3.0);
    for a in 0..checks.len() {
        for b in a + 1..checks.len() {
            let (x, y) = (&checks[a], &checks[b]);
            if x.g_name == y.g_name {
                let combined = (x.std_error.powi(2) + y.std_error.powi(2)).sqrt();
                pass &= (x.final_mean - y.final_mean).abs() <= 3.0 * combined;
            }
        }
    }
    let refs: Vec<ReferenceRow> = observables
        .iter()
        .zip(&references)
        .map(|(g, r)| ReferenceRow { g_name: g.name().into(), reference: r.mean, std_error: r.std_error, n_samples: r.n })
        .collect();
    let mut o = Outcome { check: Some(pass), ..Default::default() };
    o.write(ctx.out, "temporal_averages.csv", &series)?;
    o.write(ctx.out, "references.csv", &refs)?;
    o.write(ctx.out, "ergodic_check.csv", &checks)?;
    o.write(ctx.out, "ensemble_energy.csv", &energy)?;
    Ok(o)
}

fn grid_rows(g: &montecarlo::Grid2d) -> Vec<GridRow> {
    let mut rows = Vec::with_capacity(g.values.len());
    for i in 0..g.bins.0 {
        for j in 0..g.bins.1 {
            let (v, x) = g.centre(i, j);
            rows.push(GridRow { v, x, density: g.get(i, j) });
        }
    }
    rows
}

fn distribution(ctx: &Ctx) -> Result<Outcome, RunError> {
    let d = ctx.cfg.distribution();
    let mut snaps: Vec<(f64, usize)> =
        d.times.iter().map(|&t| Ok((t, steps(t, d.h, "distribution.times")?))).collect::<Result<_, RunError>>()?;
    snaps.sort_by_key(|s| s.1);
    snaps.dedup_by_key(|s| s.1);
    let n_steps = snaps.last().expect("validated non-empty").1;
    let chain = ChainConfig {
        params: ctx.params.clone(),
        options: ctx.options,
        h: d.h,
        n_steps,
        n_paths: d.n_paths,
        master_seed: ctx.cfg.seed,
        stream_offset: 0,
        initial_state: config::state(&d.initial_state, &ctx.params, "distribution.initial_state")?,
        observables: vec![],
        stride: n_steps,
        snapshot_steps: snaps.iter().map(|s| s.1).collect(),
        zero_noise: ctx.flags.zero_noise,
    };
    let run = run_chains(&chain, ctx.exec)?;
    let range = [(d.range[0][0], d.range[0][1]), (d.range[1][0], d.range[1][1])];
    let bins = (d.bins[0], d.bins[1]);
    let kgrid = (d.kde_grid, d.kde_grid);

    let gibbs = GibbsReference::new(ctx.params.potential())?;
    let reference = montecarlo::vx_pairs(&gibbs.samples(&ctx.params, d.n_paths, ctx.cfg.seed, ctx.exec));
    let ref_hist = montecarlo::histogram2d(&reference, bins, range)?;
    let ref_kde = montecarlo::kde2d(&reference, kgrid, range)?;
    let tv = |a: &[(f64, f64)], b: &[(f64, f64)]| {
        montecarlo::histogram2d(a, bins, range)?.total_variation(&montecarlo::histogram2d(b, bins, range)?)
    };
    let baseline =
        montecarlo::same_law_baseline(&gibbs, &ctx.params, d.n_paths, d.baseline_replicates, ctx.cfg.seed, ctx.exec, tv)?;

    let mut o = Outcome::default();
    o.write(ctx.out, "histogram_reference.csv", &grid_rows(&ref_hist))?;
    o.write(ctx.out, "kde_reference.csv", &grid_rows(&ref_kde))?;
    let mut tv_rows = Vec::new();
    for (i, &(t, _)) in snaps.iter().enumerate() {
        let samples = montecarlo::vx_pairs(&run.snapshot(i));
        let hist = montecarlo::histogram2d(&samples, bins, range)?;
        let kde = montecarlo::kde2d(&samples, kgrid, range)?;
        o.write(ctx.out, &format!("histogram_t{t}.csv"), &grid_rows(&hist))?;
        o.write(ctx.out, &format!("kde_t{t}.csv"), &grid_rows(&kde))?;
        tv_rows.push(TvRow {
            t,
            tv: hist.total_variation(&ref_hist)?,
            baseline_mean: baseline.mean,
            baseline_sd: baseline.sd,
            kde_sup_diff: kde.sup_distance(&ref_kde)?,
            n_samples: samples.len(),
        });
    }
    let (first, last) = (&tv_rows[0], &tv_rows[tv_rows.len() - 1]);
    let pass = last.tv < 3.0 * baseline.mean && (tv_rows.len() == 1 || first.tv > last.tv);
    o.notes.push(format!("TV at t = {}: {:.4}; baseline {:.4}", last.t, last.tv, baseline.mean));
    o.write(ctx.out, "tv.csv", &tv_rows)?;
    o.check = Some(pass);
    Ok(o)
}

/// Per-path trace of `λ_min(γₙ)` and the determinant identity.
pub fn malliavin_path(
    stepper: &StepperConfig,
    y0: &State,
    n_steps: usize,
    seed: u64,
    path: usize,
    zero_noise: bool,
) -> Result<Vec<MalliavinRow>, Error> {
    let mut rng = rng::stream(seed, Purpose::PathNoise, path as u64);
    let k = stepper.params().k();
    let mut y = y0.clone();
    let mut st = MalliavinEnsembleState::new(y0.dim());
    let mut rows = Vec::with_capacity(n_steps);
    for n in 1..=n_steps {
        let noise = if zero_noise { NoiseBlock::zeros(k) } else { stepper.sample_noise(&mut rng) };
        let rec = stepper.split_step(&y, &noise)?;
        let jac = malliavin::jacobians(&rec.y_bar, &y, stepper)?;
        st = malliavin::covariance_step(&st, &jac, stepper);
        rows.push(MalliavinRow {
            h: stepper.h(),
            path,
            n,
            lambda_min: malliavin::min_eigenvalue(&st.gamma_n)?,
            det: jac.det_dg_dybar,
            det_residual: jac.det_relative_residual(),
        });
        y = rec.y_next;
    }
    Ok(rows)
}

/// Largest entry error of `Aₙ` against central differences over `n` random
/// states in `[-3, 3]^{k+2}` with random frozen noise.
pub fn transfer_fd_error(stepper: &StepperConfig, n: usize, seed: u64) -> Result<f64, Error> {
    let mut rng = rng::stream(seed, Purpose::InitialStates, 0);
    let dim = stepper.params().dim();
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let y = State::from_vec((0..dim).map(|_| rng.random_range(-3.0..3.0)).collect());
        let noise = stepper.sample_noise(&mut rng);
        let rec = stepper.split_step(&y, &noise)?;
        let jac = malliavin::jacobians(&rec.y_bar, &y, stepper)?;
        let fd = malliavin::finite_difference_transfer(stepper, &y, &noise, 1e-6)?;
        worst = worst.max((fd - &jac.a_n).amax());
    }
    Ok(worst)
}

fn malliavin_diagnostics(ctx: &Ctx) -> Result<Outcome, RunError> {
    let m = ctx.cfg.malliavin();
    let y0 = config::state(&m.initial_state, &ctx.params, "malliavin.initial_state")?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &h in &m.steps {
        let n_steps = steps(m.t_end, h, "malliavin.t_end")?;
        let stepper = StepperConfig::new(ctx.params.clone(), h, ctx.options)?;
        let paths = ctx.exec.try_map(m.n_paths, |j| {
            malliavin_path(&stepper, &y0, n_steps, ctx.cfg.seed, j, ctx.flags.zero_noise)
        })?;
        let per_path_min: Vec<f64> = paths
            .iter()
            .map(|p| p.iter().filter(|r| r.n >= 2).map(|r| r.lambda_min).fold(f64::INFINITY, f64::min))
            .collect();
        let max_res = paths.iter().flatten().map(|r| r.det_residual).fold(0.0, f64::max);
        summary.push(MalliavinSummaryRow {
            h,
            min_lambda_min: per_path_min.iter().copied().fold(f64::INFINITY, f64::min),
            median_lambda_min: stats::median(&per_path_min),
            max_det_residual: max_res,
            fd_max_error: transfer_fd_error(&stepper, m.fd_states, ctx.cfg.seed)?,
        });
        rows.extend(paths.into_iter().flatten());
    }
    let slope = if summary.len() >= 2 {
        let xs: Vec<f64> = summary.iter().map(|s| (1.0 / s.h).ln()).collect();
        let ys: Vec<f64> = summary.iter().map(|s| s.median_lambda_min.ln()).collect();
        stats::least_squares_slope(&xs, &ys)
    } else {
        f64::NAN
    };
    let positive = summary.iter().all(|s| s.min_lambda_min > 0.0);
    let det_ok = summary.iter().all(|s| s.max_det_residual <= 1e-12);
    let fd_ok = summary.iter().all(|s| s.fd_max_error <= 1e-6);
    let slope_ok = summary.len() < 2 || slope >= m.min_slope;
    let verdict = vec![
        SummaryRow::new("all_lambda_min_positive", positive),
        SummaryRow::new("median_lambda_min_slope_vs_log_inverse_h", slope),
        SummaryRow::new("det_identity_ok", det_ok),
        SummaryRow::new("transfer_fd_ok", fd_ok),
    ];
    let mut o = Outcome { check: Some(positive && det_ok && fd_ok && slope_ok), ..Default::default() };
    o.notes.push(format!("median λ_min slope against log(1/h): {slope:.3}"));
    o.write(ctx.out, "malliavin.csv", &rows)?;
    o.write(ctx.out, "malliavin_summary.csv", &summary)?;
    o.write(ctx.out, "malliavin_verdict.csv", &verdict)?;
    Ok(o)
}

fn simulate(ctx: &Ctx) -> Result<Outcome, RunError> {
    let s = ctx.cfg.simulate();
    let stepper = StepperConfig::new(ctx.params.clone(), s.h, ctx.options)?;
    if let Some(w) = stepper.warning() {
        eprintln!("warning: {w}");
    }
    let y0 = config::state(&s.initial_state, &ctx.params, "simulate.initial_state")?;
    let k = ctx.params.k();
    let paths = ctx.exec.map(s.n_paths, |j| {
        let mut rng = rng::stream(ctx.cfg.seed, Purpose::PathNoise, j as u64);
        let row = |n: usize, y: &State| TrajectoryRow {
            path: j,
            step: n,
            t: n as f64 * s.h,
            values: Some((y.as_slice().to_vec(), ctx.params.hamiltonian(y))),
        };
        let mut rows = vec![row(0, &y0)];
        let mut y = y0.clone();
        for n in 1..=s.n_steps {
            let next = match s.scheme {
                Scheme::Avf => {
                    let noise = if ctx.flags.zero_noise { NoiseBlock::zeros(k) } else { stepper.sample_noise(&mut rng) };
                    stepper
                        .split_step(&y, &noise)
                        .ok()
                        .map(|r| r.y_next)
                        .filter(|y| !gle_avf::integrator::is_diverged(y))
                }
                Scheme::Em => {
                    let dw = if ctx.flags.zero_noise { vec![0.0; k + 1] } else { stepper.sample_brownian(&mut rng) };
                    match stepper.em_step(&y, &dw) {
                        EmStep::Finite(y) => Some(y),
                        EmStep::Diverged => None,
                    }
                }
            };
            match next {
                Some(v) => y = v,
                None => {
                    rows.push(TrajectoryRow { path: j, step: n, t: n as f64 * s.h, values: None });
                    return (rows, true);
                }
            }
            if n % s.stride == 0 {
                rows.push(row(n, &y));
            }
        }
        (rows, false)
    });
    let diverged = paths.iter().filter(|p| p.1).count();
    let rows: Vec<TrajectoryRow> = paths.into_iter().flat_map(|p| p.0).collect();
    let file = ctx.out.join("trajectory.csv");
    write_trajectory(&file, k, &rows)?;
    let mut o = Outcome { files: vec![file], ..Default::default() };
    if diverged > 0 {
        o.notes.push(format!("{diverged} of {} paths diverged", s.n_paths));
    }
    Ok(o)
}
