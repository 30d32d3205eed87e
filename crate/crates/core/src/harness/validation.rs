//! Monte-Carlo reference values and validation reports.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Terminal};
use crate::error::{Error, Result};
use crate::operator::{normalized_solution, solve_backward_fht, Evaluator, FhtEvaluator, MarkovOperator};
use crate::sde::{simulate, InitialState, Potential, SimConfig};

/// Offset added to the experiment seed for drawing test points.
pub const POINT_SEED_OFFSET: u64 = 0x7e57_0000;
/// Offset added to the experiment seed for reference simulations; point
/// `i` uses `seed + MC_SEED_OFFSET + i`.
pub const MC_SEED_OFFSET: u64 = 0x3c00_0000;
/// Floor on `|u_MC|` in relative errors.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

/// Mean and standard error of `f(X_T)` over `n_traj` paths from `X_0 = x`.
#[allow(clippy::too_many_arguments)]
pub fn mc_reference(
    potential: &Potential,
    beta: f64,
    x: &[f64],
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    horizon: f64,
    n_traj: usize,
    dt: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_traj < 2 {
        return Err(Error::InvalidArgument("at least 2 trajectories required".into()));
    }
    let cfg = SimConfig::endpoints(beta, dt, horizon, n_traj, seed)?;
    let batch = simulate(potential, &cfg, &InitialState::Fixed(x.to_vec()))?;
    let values: Vec<f64> = (0..n_traj).map(|i| f(batch.state(i, 1))).collect();
    Ok(mean_stderr(&values))
}

/// Sample mean and standard error, shifted by the first value so identical
/// samples give exactly zero spread.
pub(crate) fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let v0 = values[0];
    let s: f64 = values.iter().map(|v| v - v0).sum();
    let s2: f64 = values.iter().map(|v| (v - v0).powi(2)).sum();
    let var = ((s2 - s * s / n) / (n - 1.0)).max(0.0);
    (v0 + s / n, (var / n).sqrt())
}

/// Uniform test points in `∏[a_j, b_j]` from `seed + POINT_SEED_OFFSET`.
pub fn test_points(domain: &[(f64, f64)], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(POINT_SEED_OFFSET));
    (0..count)
        .map(|_| domain.iter().map(|&(a, b)| rng.random_range(a..b)).collect())
        .collect()
}

pub fn rel_error(estimate: f64, reference: f64) -> f64 {
    (estimate - reference).abs() / reference.abs().max(REL_ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub x: Vec<f64>,
    /// Normalized FHT solution; `None` at a degenerate point.
    pub estimate: Option<f64>,
    /// `Vol(𝒳)·∫g(x, y)f(y)dy` without normalization.
    pub raw_estimate: Option<f64>,
    pub mc_mean: f64,
    pub mc_stderr: f64,
    pub rel_error: Option<f64>,
    pub raw_rel_error: Option<f64>,
    /// `|û − u_MC| ≤ max(k·stderr, τ·|u_MC|)`; degenerate points fail.
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub terminal: Terminal,
    pub points: Vec<PointResult>,
    /// Aggregates over non-degenerate points; `None` if there are none.
    pub mean_rel_error: Option<f64>,
    pub median_rel_error: Option<f64>,
    pub raw_mean_rel_error: Option<f64>,
    pub raw_median_rel_error: Option<f64>,
    pub pass_count: usize,
    pub degenerate_count: usize,
}

/// Mean and median of the values, summed in sorted order so the result
/// does not depend on point order.
fn mean_median(values: impl Iterator<Item = f64>) -> (Option<f64>, Option<f64>) {
    let mut v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (None, None);
    }
    v.sort_by(f64::total_cmp);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let k = v.len() / 2;
    let median = if v.len() % 2 == 1 { v[k] } else { 0.5 * (v[k - 1] + v[k]) };
    (Some(mean), Some(median))
}

impl ValidationReport {
    pub fn new(terminal: Terminal, points: Vec<PointResult>) -> Self {
        let (mean_rel_error, median_rel_error) = mean_median(points.iter().filter_map(|p| p.rel_error));
        let (raw_mean_rel_error, raw_median_rel_error) = mean_median(points.iter().filter_map(|p| p.raw_rel_error));
        ValidationReport {
            terminal,
            pass_count: points.iter().filter(|p| p.pass).count(),
            degenerate_count: points.iter().filter(|p| p.estimate.is_none()).count(),
            mean_rel_error,
            median_rel_error,
            raw_mean_rel_error,
            raw_median_rel_error,
            points,
        }
    }

    pub fn pass_fraction(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        self.pass_count as f64 / self.points.len() as f64
    }
}

/// Point result from an estimate pair and a Monte-Carlo reference.
pub fn score_point(
    x: Vec<f64>,
    estimate: Option<f64>,
    raw_estimate: Option<f64>,
    (mc_mean, mc_stderr): (f64, f64),
    stderr_factor: f64,
    rel_threshold: f64,
) -> PointResult {
    let pass = estimate
        .is_some_and(|u| (u - mc_mean).abs() <= (stderr_factor * mc_stderr).max(rel_threshold * mc_mean.abs()));
    PointResult {
        x,
        estimate,
        raw_estimate,
        mc_mean,
        mc_stderr,
        rel_error: estimate.map(|u| rel_error(u, mc_mean)),
        raw_rel_error: raw_estimate.map(|u| rel_error(u, mc_mean)),
        pass,
    }
}

/// Degenerate points become `None`; other errors propagate.
fn missing_if_degenerate(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::DegeneratePoint { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Compares the operator's solution for `terminal` with Monte-Carlo
/// references at the configured test points.
pub fn validate_mc(op: &MarkovOperator, cfg: &ExperimentConfig, terminal: Terminal) -> Result<ValidationReport> {
    let potential = cfg.potential.build()?;
    let f = terminal.to_fht(op)?;
    let normalized = normalized_solution(op, &f)?;
    let raw = FhtEvaluator {
        fht: solve_backward_fht(op, &f)?,
        site_order: op.site_order().to_vec(),
    };
    let v = &cfg.validation;
    let points = test_points(&cfg.domain(), v.num_points, cfg.seed);
    let eval = |x: &[f64]| terminal.eval(x);
    let results: Vec<PointResult> = points
        .into_par_iter()
        .enumerate()
        .map(|(i, x)| {
            let seed = cfg.seed.wrapping_add(MC_SEED_OFFSET).wrapping_add(i as u64);
            let mc = mc_reference(&potential, cfg.beta, &x, &eval, cfg.horizon(), v.mc_trajectories, cfg.mc_dt(), seed)?;
            let est = missing_if_degenerate(normalized.value(&x))?;
            let raw_est = raw.value(&x)?;
            Ok(score_point(x, est, Some(raw_est), mc, v.stderr_factor, v.rel_threshold))
        })
        .collect::<Result<_>>()?;
    Ok(ValidationReport::new(terminal, results))
}
