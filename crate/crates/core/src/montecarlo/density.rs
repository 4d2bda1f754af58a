//! Histogram and kernel density estimates in the `(v, x)` plane.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{GibbsReference, ModelParams, State};
use crate::rng::{self, Purpose};
use crate::stats::RunningMoments;

pub const MIN_DENSITY_SAMPLES: usize = 1000;
pub const DEFAULT_KDE_GRID: usize = 128;
pub const DEFAULT_RANGE: [(f64, f64); 2] = [(-3.0, 3.0), (-3.0, 3.0)];

/// Density values on a regular grid of cells, row-major in `(v, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2d {
    pub bins: (usize, usize),
    pub range: [(f64, f64); 2],
    pub values: Vec<f64>,
}

impl Grid2d {
    fn check(bins: (usize, usize), range: [(f64, f64); 2]) -> Result<()> {
        if bins.0 == 0 || bins.1 == 0 {
            return Err(Error::Estimation("grid needs at least one bin per axis".into()));
        }
        for (lo, hi) in range {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::Estimation(format!("empty range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn cell_size(&self) -> (f64, f64) {
        let [(v0, v1), (x0, x1)] = self.range;
        ((v1 - v0) / self.bins.0 as f64, (x1 - x0) / self.bins.1 as f64)
    }

    pub fn cell_area(&self) -> f64 {
        let (a, b) = self.cell_size();
        a * b
    }

    /// Cell centre `(v, x)` of cell `(i, j)`.
    pub fn centre(&self, i: usize, j: usize) -> (f64, f64) {
        let (dv, dx) = self.cell_size();
        (self.range[0].0 + (i as f64 + 0.5) * dv, self.range[1].0 + (j as f64 + 0.5) * dx)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.bins.1 + j]
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    fn same_grid(&self, o: &Grid2d) -> Result<()> {
        if self.bins != o.bins || self.range != o.range {
            return Err(Error::Dimension { expected: self.values.len(), got: o.values.len() });
        }
        Ok(())
    }

    /// `½ ∫ |p - q|` over the grid.
    pub fn total_variation(&self, o: &Grid2d) -> Result<f64> {
        self.same_grid(o)?;
        Ok(0.5 * self.values.iter().zip(&o.values).map(|(a, b)| (a - b).abs()).sum::<f64>() * self.cell_area())
    }

    pub fn sup_distance(&self, o: &Grid2d) -> Result<f64> {
        self.same_grid(o)?;
        Ok(self.values.iter().zip(&o.values).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }
}

pub fn vx_pairs(states: &[State]) -> Vec<(f64, f64)> {
    states.iter().map(|s| (s.v(), s.x())).collect()
}

fn bin_index(x: f64, (lo, hi): (f64, f64), n: usize) -> Option<usize> {
    if !(x >= lo && x <= hi) {
        return None;
    }
    Some((((x - lo) / (hi - lo) * n as f64) as usize).min(n - 1))
}

/// Histogram normalized to integrate to one over `range`; samples outside
/// the range are dropped.
pub fn histogram2d(samples: &[(f64, f64)], bins: (usize, usize), range: [(f64, f64); 2]) -> Result<Grid2d> {
    Grid2d::check(bins, range)?;
    if samples.len() < MIN_DENSITY_SAMPLES {
        return Err(Error::Estimation(format!(
            "{} samples given, a histogram needs at least {MIN_DENSITY_SAMPLES}",
            samples.len()
        )));
    }
    let mut counts = vec![0usize; bins.0 * bins.1];
    let mut inside = 0usize;
    for &(v, x) in samples {
        if let (Some(i), Some(j)) = (bin_index(v, range[0], bins.0), bin_index(x, range[1], bins.1)) {
            counts[i * bins.1 + j] += 1;
            inside += 1;
        }
    }
    if inside == 0 {
        return Err(Error::Estimation("no samples inside the histogram range".into()));
    }
    let mut g = Grid2d { bins, range, values: vec![] };
    let norm = inside as f64 * g.cell_area();
    g.values = counts.into_iter().map(|c| c as f64 / norm).collect();
    Ok(g)
}

/// Silverman's rule in two dimensions: `σ n^{-1/6}` per marginal.
pub fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let m: RunningMoments = xs.iter().copied().collect();
    m.variance().sqrt() * (xs.len() as f64).powf(-1.0 / 6.0)
}

fn kernel_matrix(xs: &[f64], bw: f64, centres: &[f64]) -> Vec<f64> {
    let c = 1.0 / (bw * (2.0 * std::f64::consts::PI).sqrt());
    xs.iter()
        .flat_map(|&x| {
            centres.iter().map(move |&g| {
                let u = (g - x) / bw;
                c * (-0.5 * u * u).exp()
            })
        })
        .collect()
}

/// Product Gaussian kernel density estimate at the cell centres.
pub fn kde2d(samples: &[(f64, f64)], bins: (usize, usize), range: [(f64, f64); 2]) -> Result<Grid2d> {
    Grid2d::check(bins, range)?;
    if samples.len() < 2 {
        return Err(Error::Estimation("a density estimate needs at least two samples".into()));
    }
    let vs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let xs: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let (bv, bx) = (silverman_bandwidth(&vs), silverman_bandwidth(&xs));
    if !(bv > 0.0 && bx > 0.0) {
        return Err(Error::Estimation("degenerate sample: zero bandwidth".into()));
    }
    let mut g = Grid2d { bins, range, values: vec![0.0; bins.0 * bins.1] };
    let cv: Vec<f64> = (0..bins.0).map(|i| g.centre(i, 0).0).collect();
    let cx: Vec<f64> = (0..bins.1).map(|j| g.centre(0, j).1).collect();
    let kv = kernel_matrix(&vs, bv, &cv);
    let kx = kernel_matrix(&xs, bx, &cx);
    let n = samples.len();
    for s in 0..n {
        let rv = &kv[s * bins.0..(s + 1) * bins.0];
        let rx = &kx[s * bins.1..(s + 1) * bins.1];
        for (i, a) in rv.iter().enumerate() {
            for (out, b) in g.values[i * bins.1..(i + 1) * bins.1].iter_mut().zip(rx) {
                *out += a * b;
            }
        }
    }
    for v in &mut g.values {
        *v /= n as f64;
    }
    Ok(g)
}

/// `sup |KDE_h - KDE_{h/2}|` on the grid.
pub fn density_refinement_probe(
    coarse: &[(f64, f64)],
    fine: &[(f64, f64)],
    bins: (usize, usize),
    range: [(f64, f64); 2],
) -> Result<f64> {
    if coarse.len() != fine.len() {
        return Err(Error::Dimension { expected: coarse.len(), got: fine.len() });
    }
    kde2d(coarse, bins, range)?.sup_distance(&kde2d(fine, bins, range)?)
}

/// Noise floor of a grid distance between two independent exact samples of
/// size `n`: mean and standard deviation over `replicates` pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Baseline {
    pub mean: f64,
    pub sd: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn same_law_baseline(
    reference: &GibbsReference,
    params: &ModelParams,
    n: usize,
    replicates: usize,
    seed: u64,
    exec: Execution,
    distance: impl Fn(&[(f64, f64)], &[(f64, f64)]) -> Result<f64>,
) -> Result<Baseline> {
    let mut m = RunningMoments::default();
    for r in 0..replicates {
        let mut keys = rng::stream(seed, Purpose::Baseline, r as u64);
        let a = vx_pairs(&reference.samples(params, n, keys.next_u64(), exec));
        let b = vx_pairs(&reference.samples(params, n, keys.next_u64(), exec));
        m.push(distance(&a, &b)?);
    }
    Ok(Baseline { mean: m.mean(), sd: m.variance().sqrt() })
}
