//! CSV row types and file helpers. Floats are written in shortest
//! round-trip form, so re-reading a file reproduces the table exactly.

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTableRow {
    pub h: f64,
    pub strong_error: f64,
    pub strong_order: Option<f64>,
    pub weak_error: f64,
    pub weak_order: Option<f64>,
    pub n_effective: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeRow {
    pub h: f64,
    pub strong_se: f64,
    pub weak_se: f64,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonRow {
    pub h: f64,
    pub mean_iters: f64,
    pub max_iters: usize,
    pub fallbacks: usize,
    pub diverged_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub quantity: String,
    pub value: String,
}

impl SummaryRow {
    pub fn new(quantity: &str, value: impl ToString) -> Self {
        Self { quantity: quantity.into(), value: value.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub t: f64,
    pub g_name: String,
    pub initial_label: String,
    pub running_mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub g_name: String,
    pub reference: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicCheckRow {
    pub g_name: String,
    pub initial_label: String,
    pub final_mean: f64,
    pub std_error: f64,
    pub bootstrap_se: f64,
    pub reference: f64,
    /// `(final_mean - reference) / combined standard error`.
    pub z_score: f64,
    pub diverged_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub t: f64,
    pub initial_label: String,
    pub mean_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub v: f64,
    pub x: f64,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvRow {
    pub t: f64,
    pub tv: f64,
    pub baseline_mean: f64,
    pub baseline_sd: f64,
    pub kde_sup_diff: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalliavinRow {
    pub h: f64,
    pub path: usize,
    pub n: usize,
    pub lambda_min: f64,
    pub det: f64,
    pub det_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalliavinSummaryRow {
    pub h: f64,
    /// Minimum of `λ_min(γₙ)` over paths and `n ≥ 2`.
    pub min_lambda_min: f64,
    /// Median over paths of the per-path minimum over `n ≥ 2`.
    pub median_lambda_min: f64,
    pub max_det_residual: f64,
    pub fd_max_error: f64,
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> csv::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> csv::Result<Vec<T>> {
    csv::Reader::from_path(path)?.deserialize().collect()
}

/// Trajectory dump: `path,step,t,v,z1..zk,x,H,status`. Diverged paths end
/// with a row whose state fields are empty and status `diverged`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub path: usize,
    pub step: usize,
    pub t: f64,
    /// `(v, z, x)` and `H`; `None` on a divergence marker.
    pub values: Option<(Vec<f64>, f64)>,
}

pub fn trajectory_header(k: usize) -> Vec<String> {
    let mut h = vec!["path".to_string(), "step".into(), "t".into(), "v".into()];
    h.extend((1..=k).map(|l| format!("z{l}")));
    h.extend(["x".to_string(), "H".into(), "status".into()]);
    h
}

pub fn write_trajectory(path: &Path, k: usize, rows: &[TrajectoryRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(trajectory_header(k))?;
    for r in rows {
        let mut rec = vec![r.path.to_string(), r.step.to_string(), r.t.to_string()];
        match &r.values {
            Some((s, h)) => {
                rec.extend(s.iter().map(f64::to_string));
                rec.push(h.to_string());
                rec.push("ok".into());
            }
            None => {
                rec.extend(std::iter::repeat_n(String::new(), k + 3));
                rec.push("diverged".into());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>, Box<dyn std::error::Error>> {
    let mut r = csv::Reader::from_path(path)?;
    let width = r.headers()?.len();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let status = &rec[width - 1];
        let values = if status == "ok" {
            let nums: Vec<f64> = (3..width - 1).map(|i| rec[i].parse()).collect::<Result<_, _>>()?;
            let (s, h) = nums.split_at(nums.len() - 1);
            Some((s.to_vec(), h[0]))
        } else {
            None
        };
        out.push(TrajectoryRow { path: rec[0].parse()?, step: rec[1].parse()?, t: rec[2].parse()?, values });
    }
    Ok(out)
}
