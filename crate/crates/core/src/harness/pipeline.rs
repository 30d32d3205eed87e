//! Pipeline stages reading and writing artifacts in an output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Terminal};
use super::output::{
    histogram_from_batch, histogram_from_fht, iota_csv, iota_curve, read_meta, sha256_hex, write_artifact, write_report,
    IotaRow, Meta, OperatorMeta,
};
use super::validation::{validate_mc, ValidationReport};
use crate::error::{Error, Result};
use crate::fht::{deserialize, serialize, uniform_density};
use crate::operator::{estimate_markov, solve_backward_fht, solve_forward_fht, MarkovOperator, Propensity};
use crate::sde::{read_trajectories, simulate, write_trajectories, TrajectoryBatch};

pub const TRAJECTORY_FILE: &str = "trajectories.trj";
pub const OPERATOR_FILE: &str = "operator.fht";
pub const FORWARD_FILE: &str = "forward.fht";
pub const IOTA_FILE: &str = "iota.csv";

pub fn backward_file(t: Terminal) -> String {
    format!("backward_{}.fht", t.name())
}

pub fn validation_file(t: Terminal) -> String {
    format!("validation_{}.json", t.name())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistogramSource {
    Trajectories,
    Operator,
}

impl HistogramSource {
    fn name(self) -> &'static str {
        match self {
            HistogramSource::Trajectories => "trajectories",
            HistogramSource::Operator => "operator",
        }
    }
}

/// Histogram files for `source`: the `x` pair then the `y` pair.
pub fn histogram_files(source: HistogramSource) -> [String; 2] {
    ["x", "y"].map(|side| format!("hist_{}_{side}.csv", source.name()))
}

fn meta(cfg: &ExperimentConfig, artifact: &str, format: &str) -> Meta {
    Meta {
        artifact: artifact.into(),
        format: format.into(),
        seed: cfg.seed,
        config: cfg.clone(),
        sha256: String::new(),
        inputs: BTreeMap::new(),
        operator: None,
    }
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    Ok(cfg.out_dir.clone())
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

pub fn run_simulate(cfg: &ExperimentConfig) -> Result<TrajectoryBatch> {
    let dir = out_dir(cfg)?;
    let batch = simulate(&cfg.potential.build()?, &cfg.sim_config()?, &cfg.initial_state()?)?;
    write_artifact(&dir.join(TRAJECTORY_FILE), &write_trajectories(&batch), meta(cfg, "trajectories", "TRJ1"))?;
    Ok(batch)
}

pub fn load_trajectories(cfg: &ExperimentConfig) -> Result<(TrajectoryBatch, String)> {
    let bytes = read_input(&cfg.out_dir.join(TRAJECTORY_FILE))?;
    let batch = read_trajectories(&bytes)?;
    if batch.dim() != cfg.dim() || batch.times() != cfg.snapshot_times.as_slice() {
        return Err(Error::Config("trajectory file does not match the config".into()));
    }
    Ok((batch, sha256_hex(&bytes)))
}

pub fn run_estimate(cfg: &ExperimentConfig) -> Result<MarkovOperator> {
    let dir = out_dir(cfg)?;
    let (batch, trj_hash) = load_trajectories(cfg)?;
    let order = cfg.potential.site_order()?;
    let (op, report) = estimate_markov(&batch, cfg.snapshot_index(), &cfg.estimate_config(), &cfg.domain(), Some(&order))?;
    let mut m = meta(cfg, "operator", "FHT1");
    m.inputs.insert(TRAJECTORY_FILE.into(), trj_hash);
    m.operator = Some(OperatorMeta {
        domain: op.domain().to_vec(),
        initial_time: op.initial_time(),
        terminal_time: op.terminal_time(),
        site_order: op.site_order().to_vec(),
        sample_report: report,
    });
    write_artifact(&dir.join(OPERATOR_FILE), &serialize(op.joint()), m)?;
    Ok(op)
}

/// Reads an operator from its FHT1 file and sidecar.
pub fn load_operator(path: &Path) -> Result<(MarkovOperator, String)> {
    let bytes = read_input(path)?;
    let joint = deserialize(&bytes)?;
    let m = read_meta(path)?
        .operator
        .ok_or_else(|| Error::Config(format!("{} has no operator metadata", path.display())))?;
    let op = MarkovOperator::new(joint, m.domain, m.initial_time, m.terminal_time, m.site_order)?;
    Ok((op, sha256_hex(&bytes)))
}

fn operator_meta(cfg: &ExperimentConfig, artifact: &str, format: &str, op_hash: &str) -> Meta {
    let mut m = meta(cfg, artifact, format);
    m.inputs.insert(OPERATOR_FILE.into(), op_hash.into());
    m
}

/// Writes the unnormalized backward solution of every validation terminal.
pub fn run_solve_backward(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let dir = out_dir(cfg)?;
    let (op, hash) = load_operator(&dir.join(OPERATOR_FILE))?;
    let mut written = Vec::new();
    for &t in &cfg.validation.terminals {
        let u = solve_backward_fht(&op, &t.to_fht(&op)?)?;
        let path = dir.join(backward_file(t));
        write_artifact(&path, &serialize(&u), operator_meta(cfg, &backward_file(t), "FHT1", &hash))?;
        written.push(path);
    }
    Ok(written)
}

/// Pushes the uniform initial density on the domain forward.
pub fn run_solve_forward(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = out_dir(cfg)?;
    let (op, hash) = load_operator(&dir.join(OPERATOR_FILE))?;
    let q = uniform_density(op.site_tree().clone(), op.x_bases())?;
    let p = solve_forward_fht(&op, &q)?;
    let path = dir.join(FORWARD_FILE);
    write_artifact(&path, &serialize(&p), operator_meta(cfg, FORWARD_FILE, "FHT1", &hash))?;
    Ok(path)
}

pub fn run_validate(cfg: &ExperimentConfig) -> Result<Vec<ValidationReport>> {
    let dir = out_dir(cfg)?;
    let (op, _) = load_operator(&dir.join(OPERATOR_FILE))?;
    let mut reports = Vec::new();
    for &t in &cfg.validation.terminals {
        let r = validate_mc(&op, cfg, t)?;
        write_report(&dir.join(validation_file(t)), cfg, &r)?;
        reports.push(r);
    }
    Ok(reports)
}

pub fn run_iota(cfg: &ExperimentConfig) -> Result<Vec<IotaRow>> {
    let dir = out_dir(cfg)?;
    let (op, hash) = load_operator(&dir.join(OPERATOR_FILE))?;
    let prop = Propensity::new(&op, &cfg.iota.plus.to_fht(&op)?, &cfg.iota.minus.to_fht(&op)?)?;
    let rows = iota_curve(&prop, cfg.dim(), &cfg.iota.ts)?;
    write_artifact(&dir.join(IOTA_FILE), iota_csv(&rows).as_bytes(), operator_meta(cfg, IOTA_FILE, "CSV", &hash))?;
    Ok(rows)
}

/// Writes `x` and `y` pair histograms from the trajectories or the operator.
pub fn run_marginal_hist(cfg: &ExperimentConfig, source: HistogramSource) -> Result<[PathBuf; 2]> {
    let dir = out_dir(cfg)?;
    let pair = cfg.histogram.pair;
    let files = histogram_files(source);
    let (hists, input, hash) = match source {
        HistogramSource::Trajectories => {
            let (batch, hash) = load_trajectories(cfg)?;
            let snap = cfg.histogram.snapshot.unwrap_or(cfg.snapshot_index());
            let (x, y) = (cfg.domain(), cfg.y_domain());
            let hx = histogram_from_batch(&batch, 0, pair, [x[pair[0]], x[pair[1]]], cfg.bins)?;
            let hy = histogram_from_batch(&batch, snap, pair, [y[pair[0]], y[pair[1]]], cfg.bins)?;
            ([hx, hy], TRAJECTORY_FILE, hash)
        }
        HistogramSource::Operator => {
            let (op, hash) = load_operator(&dir.join(OPERATOR_FILE))?;
            let site = |p: usize| op.site_order().iter().position(|&s| s == p).expect("site order is a permutation");
            let (k0, k1) = (site(pair[0]), site(pair[1]));
            let hx = histogram_from_fht(op.joint(), [2 * k0, 2 * k1], cfg.bins)?;
            let hy = histogram_from_fht(op.joint(), [2 * k0 + 1, 2 * k1 + 1], cfg.bins)?;
            ([hx, hy], OPERATOR_FILE, hash)
        }
    };
    let mut paths = Vec::with_capacity(2);
    for (h, name) in hists.iter().zip(&files) {
        let path = dir.join(name);
        let mut m = meta(cfg, name, "CSV");
        m.inputs.insert(input.into(), hash.clone());
        write_artifact(&path, h.to_csv().as_bytes(), m)?;
        paths.push(path);
    }
    Ok([paths[0].clone(), paths[1].clone()])
}

#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub operator: MarkovOperator,
    pub validation: Vec<ValidationReport>,
    pub iota: Vec<IotaRow>,
}

/// Runs every stage in order; an error names the failing stage.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineSummary> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    run_simulate(cfg).map_err(|e| e.in_stage("simulate"))?;
    let operator = run_estimate(cfg).map_err(|e| e.in_stage("estimate"))?;
    run_solve_backward(cfg).map_err(|e| e.in_stage("solve-backward"))?;
    run_solve_forward(cfg).map_err(|e| e.in_stage("solve-forward"))?;
    let validation = run_validate(cfg).map_err(|e| e.in_stage("validate-mc"))?;
    let iota = run_iota(cfg).map_err(|e| e.in_stage("iota-curve"))?;
    for source in [HistogramSource::Trajectories, HistogramSource::Operator] {
        run_marginal_hist(cfg, source).map_err(|e| e.in_stage("marginal-hist"))?;
    }
    Ok(PipelineSummary {
        operator,
        validation,
        iota,
    })
}
