//! Exact sampling from the Gibbs–Boltzmann measure
//! `π ∝ exp(-H₀(v, z, x))`: standard normals in `(v, z)` and the tabulated
//! density `∝ exp(-U(x))` in `x`.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{ModelParams, Observable, PotentialSpec, State};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng::{self, Purpose};
use crate::stats::RunningMoments;

const TABLE_INTERVALS: usize = 1 << 14;
const CHUNK: usize = 4096;
pub const MIN_EXPECTATION_SAMPLES: usize = 10_000;

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

/// Inverse-CDF table for the position marginal of the invariant measure.
#[derive(Debug, Clone)]
pub struct GibbsReference {
    potential: PotentialSpec,
    nodes: Vec<f64>,
    cdf: Vec<f64>,
    normalizer: f64,
    tail_bound: f64,
    half_width: f64,
}

impl GibbsReference {
    pub fn new(potential: &PotentialSpec) -> Result<Self> {
        let half_width = potential.truncation_half_width();
        let n = TABLE_INTERVALS;
        let dx = 2.0 * half_width / n as f64;
        let nodes: Vec<f64> = (0..=n).map(|i| -half_width + i as f64 * dx).collect();
        let shift = nodes.iter().map(|&x| potential.value(x)).fold(f64::INFINITY, f64::min);
        let dens: Vec<f64> = nodes.iter().map(|&x| (-(potential.value(x) - shift)).exp()).collect();

        // Composite Simpson on panel pairs; odd nodes use the half-panel rule.
        let mut cum = vec![0.0; n + 1];
        for j in (0..n).step_by(2) {
            let (f0, f1, f2) = (dens[j], dens[j + 1], dens[j + 2]);
            cum[j + 1] = cum[j] + dx / 12.0 * (5.0 * f0 + 8.0 * f1 - f2);
            cum[j + 2] = cum[j] + dx / 3.0 * (f0 + 4.0 * f1 + f2);
        }
        let mass = cum[n];
        let cdf: Vec<f64> = cum.iter().map(|c| c / mass).collect();
        if let Some(i) = cdf.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::InvalidPotential(format!(
                "tabulated CDF decreasing at node {i}"
            )));
        }

        let tail = |x: f64| (-(potential.value(x) - shift)).exp() / potential.gradient(x).abs();
        let tail_bound = (tail(half_width) + tail(-half_width)) / mass;
        if !(tail_bound < 1e-10) {
            return Err(Error::InvalidPotential(format!("truncated tail mass {tail_bound:e} too large")));
        }

        Ok(Self {
            potential: potential.clone(),
            nodes,
            cdf,
            normalizer: mass * (-shift).exp(),
            tail_bound,
            half_width,
        })
    }

    /// `Z_x = ∫ exp(-U(x)) dx` over the truncated interval.
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// Relative mass of `exp(-U)` outside the table.
    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn potential(&self) -> &PotentialSpec {
        &self.potential
    }

    /// Tabulated CDF of the position marginal (linear between nodes).
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.nodes[0] {
            return 0.0;
        }
        if x >= self.nodes[self.nodes.len() - 1] {
            return 1.0;
        }
        let i = self.nodes.partition_point(|&n| n <= x) - 1;
        let t = (x - self.nodes[i]) / (self.nodes[i + 1] - self.nodes[i]);
        self.cdf[i] + t * (self.cdf[i + 1] - self.cdf[i])
    }

    /// Inverse CDF by bisection plus linear interpolation.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let i = self.cdf.partition_point(|&c| c <= u).clamp(1, self.cdf.len() - 1) - 1;
        let (c0, c1) = (self.cdf[i], self.cdf[i + 1]);
        if c1 <= c0 {
            return self.nodes[i];
        }
        self.nodes[i] + (self.nodes[i + 1] - self.nodes[i]) * ((u - c0) / (c1 - c0)).clamp(0.0, 1.0)
    }

    pub fn sample_x<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }

    /// One exact draw from the invariant measure.
    pub fn sample<R: Rng + ?Sized>(&self, params: &ModelParams, rng: &mut R) -> State {
        let k = params.k();
        let mut y = Vec::with_capacity(k + 2);
        y.push(rng.sample::<f64, _>(StandardNormal));
        for _ in 0..k {
            y.push(rng.sample::<f64, _>(StandardNormal));
        }
        y.push(self.sample_x(rng));
        State::from_vec(y)
    }

    /// `n` draws; draw `i` always comes from the same stream position.
    pub fn samples(&self, params: &ModelParams, n: usize, seed: u64, exec: Execution) -> Vec<State> {
        let chunks = n.div_ceil(CHUNK);
        exec.map(chunks, |c| {
            let mut rng = rng::stream(seed, Purpose::GibbsSampling, c as u64);
            let len = CHUNK.min(n - c * CHUNK);
            (0..len).map(|_| self.sample(params, &mut rng)).collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect()
    }

    /// Monte Carlo estimate of `∫ g dπ` from exact draws.
    pub fn expectation(
        &self,
        params: &ModelParams,
        g: Observable,
        n_samples: usize,
        seed: u64,
        exec: Execution,
    ) -> Result<Estimate> {
        self.expectation_with(params, g.name(), |s| g.eval(params, s), n_samples, seed, exec)
    }

    /// [`GibbsReference::expectation`] for an arbitrary closure.
    pub fn expectation_with<F>(
        &self,
        params: &ModelParams,
        name: &str,
        g: F,
        n_samples: usize,
        seed: u64,
        exec: Execution,
    ) -> Result<Estimate>
    where
        F: Fn(&State) -> f64 + Sync + Send,
    {
        if n_samples < MIN_EXPECTATION_SAMPLES {
            return Err(Error::Estimation(format!(
                "need at least {MIN_EXPECTATION_SAMPLES} samples, got {n_samples}"
            )));
        }
        let chunks = n_samples.div_ceil(CHUNK);
        let partials = exec.map(chunks, |c| {
            let mut rng = rng::stream(seed, Purpose::GibbsSampling, c as u64);
            let len = CHUNK.min(n_samples - c * CHUNK);
            let mut acc = RunningMoments::default();
            for i in 0..len {
                let value = g(&self.sample(params, &mut rng));
                if !value.is_finite() {
                    return Err(Error::NonFiniteObservable { name: name.to_string(), index: c * CHUNK + i });
                }
                acc.push(value);
            }
            Ok(acc)
        });
        let mut total = RunningMoments::default();
        for p in partials {
            total.merge(&p?);
        }
        Ok(Estimate { mean: total.mean(), std_error: total.std_error(), n: total.count() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::potential::simpson;
    use crate::stats::{ks_test, normal_cdf};

    fn reference() -> (ModelParams, GibbsReference) {
        let p = ModelParams::reference();
        let g = GibbsReference::new(p.potential()).unwrap();
        (p, g)
    }

    #[test]
    fn table_invariants() {
        let (_, g) = reference();
        assert!(g.tail_bound() < 1e-10);
        assert_eq!(g.cdf[0], 0.0);
        assert_eq!(*g.cdf.last().unwrap(), 1.0);
        assert!(g.cdf.windows(2).all(|w| w[1] >= w[0]));
        // Symmetric density: median at zero.
        assert!(g.quantile(0.5).abs() < 1e-9);
    }

    #[test]
    fn normalizer_matches_wide_quadrature() {
        let (p, g) = reference();
        let z = simpson(|x| (-p.potential().value(x)).exp(), -8.0, 8.0, 200_000);
        assert!((g.normalizer() - z).abs() < 1e-10 * z);
    }

    #[test]
    fn constant_observable_is_exact() {
        let (p, g) = reference();
        let e = g.expectation(&p, Observable::One, 20_000, 1, Execution::Sequential).unwrap();
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn too_few_samples_rejected() {
        let (p, g) = reference();
        assert!(g.expectation(&p, Observable::V, 100, 1, Execution::Sequential).is_err());
    }

    #[test]
    fn non_finite_observable_reported() {
        let (p, g) = reference();
        let err = g
            .expectation_with(&p, "bad", |s| if s.v() > 3.0 { f64::NAN } else { 0.0 }, 20_000, 5, Execution::Sequential)
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteObservable { ref name, .. } if name == "bad"));
    }

    #[test]
    fn moments_match_quadrature() {
        let (p, g) = reference();
        let n = 1_000_000;
        let exec = Execution::default();
        let z = simpson(|x| (-p.potential().value(x)).exp(), -8.0, 8.0, 200_000);
        let x2 = simpson(|x| x * x * (-p.potential().value(x)).exp(), -8.0, 8.0, 200_000) / z;

        let ex = g.expectation(&p, Observable::X, n, 11, exec).unwrap();
        assert!(ex.mean.abs() < 4.0 * ex.std_error, "{ex:?}");
        let ex2 = g.expectation(&p, Observable::XSquared, n, 11, exec).unwrap();
        assert!((ex2.mean - x2).abs() < 4.0 * ex2.std_error, "{ex2:?} vs {x2}");
        let ev = g.expectation(&p, Observable::V, n, 12, exec).unwrap();
        assert!(ev.mean.abs() < 4.0 * ev.std_error);
        let vv = g.expectation_with(&p, "v2", |s| s.v() * s.v(), n, 13, exec).unwrap();
        assert!((vv.mean - 1.0).abs() < 4.0 * vv.std_error, "{vv:?}");
    }

    #[test]
    fn v_marginal_passes_ks() {
        let (p, g) = reference();
        let vs: Vec<f64> = g.samples(&p, 100_000, 21, Execution::default()).iter().map(|s| s.v()).collect();
        let (_, pval) = ks_test(&vs, normal_cdf);
        assert!(pval > 1e-3, "p = {pval}");
        let xs: Vec<f64> = g.samples(&p, 100_000, 22, Execution::default()).iter().map(|s| s.x()).collect();
        let (_, pval) = ks_test(&xs, |x| g.cdf(x));
        assert!(pval > 1e-3, "p = {pval}");
    }

    #[test]
    fn reference_value_is_seed_stable() {
        let (p, g) = reference();
        let a = g.expectation(&p, Observable::CosNormSq, 1_000_000, 100, Execution::default()).unwrap();
        let b = g.expectation(&p, Observable::CosNormSq, 1_000_000, 200, Execution::default()).unwrap();
        let combined = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
        assert!((a.mean - b.mean).abs() < 4.0 * combined, "{a:?} {b:?}");
    }
}
