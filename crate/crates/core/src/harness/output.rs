//! Histograms, propensity curves, CSV text and metadata sidecars.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::fht::Fht;
use crate::operator::{Propensity, SampleReport};
use crate::sde::TrajectoryBatch;

/// Density on a `bins × bins` grid over `[lower_0, upper_0] × [lower_1, upper_1]`,
/// row-major with the first variable outer.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2d {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub bins: usize,
    pub density: Vec<f64>,
}

impl Histogram2d {
    pub fn width(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.bins as f64
    }

    pub fn center(&self, axis: usize, k: usize) -> f64 {
        self.lower[axis] + (k as f64 + 0.5) * self.width(axis)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.density[i * self.bins + j]
    }

    /// `½ Σ |p − q|·cell` over matching grids.
    pub fn total_variation(&self, other: &Histogram2d) -> Result<f64> {
        if self.bins != other.bins || self.lower != other.lower || self.upper != other.upper {
            return Err(Error::InvalidArgument("histogram grids differ".into()));
        }
        let cell = self.width(0) * self.width(1);
        Ok(0.5 * cell * self.density.iter().zip(&other.density).map(|(a, b)| (a - b).abs()).sum::<f64>())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("u,v,density\n");
        for i in 0..self.bins {
            for j in 0..self.bins {
                writeln!(s, "{},{},{}", self.center(0, i), self.center(1, j), self.get(i, j)).expect("write to string");
            }
        }
        s
    }
}

fn check_bins(bins: usize) -> Result<()> {
    if bins == 0 {
        return Err(Error::InvalidArgument("bins must be positive".into()));
    }
    Ok(())
}

/// Empirical density of coordinates `pair` at `snapshot`, normalized by the
/// total trajectory count; points outside the box are not counted.
pub fn histogram_from_batch(
    batch: &TrajectoryBatch,
    snapshot: usize,
    pair: [usize; 2],
    bounds: [(f64, f64); 2],
    bins: usize,
) -> Result<Histogram2d> {
    check_bins(bins)?;
    if snapshot >= batch.num_snapshots() || pair.iter().any(|&p| p >= batch.dim()) || pair[0] == pair[1] {
        return Err(Error::InvalidArgument("histogram pair or snapshot out of range".into()));
    }
    let mut h = Histogram2d {
        lower: [bounds[0].0, bounds[1].0],
        upper: [bounds[0].1, bounds[1].1],
        bins,
        density: vec![0.0; bins * bins],
    };
    let bin_of = |axis: usize, v: f64| -> Option<usize> {
        if !(v >= h.lower[axis] && v <= h.upper[axis]) {
            return None;
        }
        Some((((v - h.lower[axis]) / h.width(axis)) as usize).min(bins - 1))
    };
    let mut counts = vec![0usize; bins * bins];
    for i in 0..batch.num_trajectories() {
        let s = batch.state(i, snapshot);
        if let (Some(a), Some(b)) = (bin_of(0, s[pair[0]]), bin_of(1, s[pair[1]])) {
            counts[a * bins + b] += 1;
        }
    }
    let norm = batch.num_trajectories() as f64 * h.width(0) * h.width(1);
    h.density = counts.iter().map(|&c| c as f64 / norm).collect();
    Ok(h)
}

/// Marginal of `f` on variables `vars`, evaluated at bin centers over the
/// variables' basis intervals.
pub fn histogram_from_fht(f: &Fht, vars: [usize; 2], bins: usize) -> Result<Histogram2d> {
    check_bins(bins)?;
    if vars[0] == vars[1] {
        return Err(Error::InvalidArgument("histogram needs two distinct variables".into()));
    }
    let g = f.marginalize(&vars)?;
    let (b0, b1) = (&f.bases()[vars[0]], &f.bases()[vars[1]]);
    let mut h = Histogram2d {
        lower: [b0.lower(), b1.lower()],
        upper: [b0.upper(), b1.upper()],
        bins,
        density: Vec::with_capacity(bins * bins),
    };
    // The marginal keeps variables in increasing index order.
    let swap = vars[0] > vars[1];
    for i in 0..bins {
        for j in 0..bins {
            let (u, v) = (h.center(0, i), h.center(1, j));
            let z = if swap { [v, u] } else { [u, v] };
            let val = g.evaluate(&z)?;
            h.density.push(val);
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IotaRow {
    pub t: f64,
    /// `None` where the propensity is undefined.
    pub iota: Option<f64>,
}

/// `ι(t·1⃗)` for every `t`; degenerate points are recorded as missing.
pub fn iota_curve(prop: &Propensity, dim: usize, ts: &[f64]) -> Result<Vec<IotaRow>> {
    ts.iter()
        .map(|&t| match prop.ratio(&vec![t; dim]) {
            Ok(v) => Ok(IotaRow { t, iota: Some(v) }),
            Err(Error::DegeneratePoint { .. }) => Ok(IotaRow { t, iota: None }),
            Err(e) => Err(e),
        })
        .collect()
}

pub fn iota_csv(rows: &[IotaRow]) -> String {
    let mut s = String::from("t,iota\n");
    for r in rows {
        match r.iota {
            Some(v) => writeln!(s, "{},{}", r.t, v),
            None => writeln!(s, "{},", r.t),
        }
        .expect("write to string");
    }
    s
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        write!(s, "{b:02x}").expect("write to string");
        s
    })
}

/// Placement of an operator's joint density, stored next to the FHT1 file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorMeta {
    pub domain: Vec<(f64, f64)>,
    pub initial_time: f64,
    pub terminal_time: f64,
    pub site_order: Vec<usize>,
    pub sample_report: SampleReport,
}

/// Sidecar `<file>.meta.json` for every emitted artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub artifact: String,
    pub format: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    /// SHA-256 of the artifact bytes.
    pub sha256: String,
    /// SHA-256 of the input files, keyed by file name.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    #[serde(default)]
    pub operator: Option<OperatorMeta>,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Writes `bytes` to `path` and its sidecar.
pub fn write_artifact(path: &Path, bytes: &[u8], mut meta: Meta) -> Result<()> {
    meta.sha256 = sha256_hex(bytes);
    std::fs::write(path, bytes)?;
    let mut json = serde_json::to_string_pretty(&meta)?;
    json.push('\n');
    std::fs::write(meta_path(path), json)?;
    Ok(())
}

pub fn read_meta(path: &Path) -> Result<Meta> {
    let text = std::fs::read_to_string(meta_path(path))?;
    Ok(serde_json::from_str(&text)?)
}

/// JSON report embedding the resolved config and seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report<T> {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub report: T,
}

pub fn write_report<T: Serialize>(path: &Path, cfg: &ExperimentConfig, report: &T) -> Result<()> {
    let mut json = serde_json::to_string_pretty(&Report {
        seed: cfg.seed,
        config: cfg.clone(),
        report,
    })?;
    json.push('\n');
    std::fs::write(path, json)?;
    Ok(())
}
