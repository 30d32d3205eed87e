//! JSON experiment configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fht::Fht;
use crate::operator::{Domain, EstimateConfig, MarkovOperator};
use crate::sde::{InitialState, Potential, SimConfig};
use crate::sketch::{DEFAULT_OVERSAMPLE, DEFAULT_REL_TOL, DEFAULT_TRUNCATION_FACTOR};
use crate::tree::GridMap;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    Gl1d {
        m: usize,
        lambda: f64,
    },
    /// Lattice side `m` must be a power of two for the grid site ordering.
    Gl2d {
        m: usize,
        lambda: f64,
    },
    /// `V(x) = (k/2)|x − c·1⃗|²`.
    Ou {
        dim: usize,
        #[serde(default)]
        center: f64,
        #[serde(default = "one")]
        stiffness: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl PotentialSpec {
    pub fn build(&self) -> Result<Potential> {
        match *self {
            PotentialSpec::Gl1d { m, lambda } => Potential::gl1d(m, lambda),
            PotentialSpec::Gl2d { m, lambda } => {
                GridMap::new(2, m)?;
                Potential::gl2d(m, lambda)
            }
            PotentialSpec::Ou { dim, center, stiffness } => Potential::ou(vec![center; dim], stiffness),
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            PotentialSpec::Gl1d { m, .. } => m,
            PotentialSpec::Gl2d { m, .. } => m * m,
            PotentialSpec::Ou { dim, .. } => dim,
        }
    }

    /// Physical coordinate of each tree site: grid bit interleaving for
    /// the 2D lattice, identity otherwise.
    pub fn site_order(&self) -> Result<Vec<usize>> {
        match *self {
            PotentialSpec::Gl2d { m, .. } => Ok(GridMap::new(2, m)?.physical_order()),
            _ => Ok((0..self.dim()).collect()),
        }
    }
}

/// Built-in terminal conditions, all coordinate-symmetric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    /// `(1/d)Σ(y_j − 1)²`.
    FPlus,
    /// `(1/d)Σ(y_j + 1)²`.
    FMinus,
    /// `exp(−(2/d)Σ(y_j − 1)²)`.
    GPlus,
    /// `exp(−(2/d)Σ(y_j + 1)²)`.
    GMinus,
    One,
}

impl Terminal {
    pub fn name(self) -> &'static str {
        match self {
            Terminal::FPlus => "f_plus",
            Terminal::FMinus => "f_minus",
            Terminal::GPlus => "g_plus",
            Terminal::GMinus => "g_minus",
            Terminal::One => "one",
        }
    }

    fn is_sum(self) -> bool {
        matches!(self, Terminal::FPlus | Terminal::FMinus)
    }

    /// Per-coordinate factor (product forms) or term (sum forms).
    pub fn site_fn(self, d: usize) -> Box<dyn Fn(f64) -> f64 + Send + Sync> {
        let d = d as f64;
        match self {
            Terminal::FPlus => Box::new(move |y| (y - 1.0) * (y - 1.0) / d),
            Terminal::FMinus => Box::new(move |y| (y + 1.0) * (y + 1.0) / d),
            Terminal::GPlus => Box::new(move |y| (-2.0 / d * (y - 1.0) * (y - 1.0)).exp()),
            Terminal::GMinus => Box::new(move |y| (-2.0 / d * (y + 1.0) * (y + 1.0)).exp()),
            Terminal::One => Box::new(|_| 1.0),
        }
    }

    pub fn eval(self, y: &[f64]) -> f64 {
        let h = self.site_fn(y.len());
        if self.is_sum() {
            y.iter().map(|&v| h(v)).sum()
        } else {
            y.iter().map(|&v| h(v)).product()
        }
    }

    /// FHT of the terminal condition on the operator's `y` bases.
    pub fn to_fht(self, op: &MarkovOperator) -> Result<Fht> {
        let h = self.site_fn(op.num_sites());
        let hs: Vec<&dyn Fn(f64) -> f64> = vec![&*h; op.num_sites()];
        if self.is_sum() {
            op.terminal_sum(&hs)
        } else {
            op.terminal_separable(&hs)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationSpec {
    pub num_points: usize,
    pub mc_trajectories: usize,
    /// Time step of the reference simulations; defaults to `dt`.
    pub mc_dt: Option<f64>,
    pub terminals: Vec<Terminal>,
    /// A point passes if `|û − u_MC| ≤ max(stderr_factor·stderr, rel_threshold·|u_MC|)`.
    pub stderr_factor: f64,
    pub rel_threshold: f64,
}

impl Default for ValidationSpec {
    fn default() -> Self {
        ValidationSpec {
            num_points: 50,
            mc_trajectories: 500,
            mc_dt: None,
            terminals: vec![Terminal::FPlus, Terminal::FMinus],
            stderr_factor: 3.0,
            rel_threshold: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IotaSpec {
    pub ts: Vec<f64>,
    pub plus: Terminal,
    pub minus: Terminal,
}

impl Default for IotaSpec {
    fn default() -> Self {
        IotaSpec {
            ts: vec![-0.6, -0.5, -0.3, 0.0, 0.3, 0.5, 0.6],
            plus: Terminal::GPlus,
            minus: Terminal::GMinus,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HistogramSpec {
    /// Physical coordinates (0-based) of the plotted pair.
    pub pair: [usize; 2],
    /// Snapshot for trajectory histograms; defaults to the estimation snapshot.
    pub snapshot: Option<usize>,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        HistogramSpec {
            pair: [0, 1],
            snapshot: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub potential: PotentialSpec,
    pub beta: f64,
    /// Cube `[a, b]^d` for the initial distribution and the `x` bases.
    pub domain: [f64; 2],
    /// Cube for the `y` bases; defaults to `domain`.
    #[serde(default)]
    pub y_domain: Option<[f64; 2]>,
    pub dt: f64,
    pub snapshot_times: Vec<f64>,
    pub num_trajectories: usize,
    pub seed: u64,
    pub q: usize,
    pub r_max: usize,
    #[serde(default = "default_oversample")]
    pub oversample: usize,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_true")]
    pub truncation: bool,
    #[serde(default = "default_truncation_factor")]
    pub truncation_factor: f64,
    /// Snapshot paired with snapshot 0 for estimation; defaults to the last.
    #[serde(default)]
    pub snapshot: Option<usize>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default)]
    pub validation: ValidationSpec,
    #[serde(default)]
    pub iota: IotaSpec,
    #[serde(default)]
    pub histogram: HistogramSpec,
}

fn default_oversample() -> usize {
    DEFAULT_OVERSAMPLE
}
fn default_rel_tol() -> f64 {
    DEFAULT_REL_TOL
}
fn default_true() -> bool {
    true
}
fn default_truncation_factor() -> f64 {
    DEFAULT_TRUNCATION_FACTOR
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_bins() -> usize {
    50
}

fn valid_interval(name: &str, [a, b]: [f64; 2]) -> Result<()> {
    if a.is_finite() && b.is_finite() && a < b {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} [{a}, {b}] is not a valid interval")))
    }
}

impl ExperimentConfig {
    /// Parses and validates a config document.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let cerr = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return cerr(format!(
                "schema_version {} unsupported, expected {SCHEMA_VERSION}",
                self.schema_version
            ));
        }
        let d = self.potential.dim();
        if d == 0 {
            return cerr("potential has no coordinates".into());
        }
        self.potential.build().map_err(|e| Error::Config(format!("potential: {e}")))?;
        valid_interval("domain", self.domain)?;
        if let Some(y) = self.y_domain {
            valid_interval("y_domain", y)?;
        }
        if self.snapshot_times.len() < 2 {
            return cerr("at least two snapshot times required".into());
        }
        self.sim_config()?;
        let j = self.snapshot_index();
        if j == 0 || j >= self.snapshot_times.len() {
            return cerr(format!("snapshot {j} must be in 1..{}", self.snapshot_times.len()));
        }
        if self.q == 0 {
            return cerr("q must be at least 1".into());
        }
        if self.r_max == 0 {
            return cerr("r_max must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.rel_tol) {
            return cerr(format!("rel_tol {} outside [0, 1)", self.rel_tol));
        }
        if !(self.truncation_factor >= 0.0) || !self.truncation_factor.is_finite() {
            return cerr("truncation_factor must be nonnegative".into());
        }
        if self.bins == 0 {
            return cerr("bins must be positive".into());
        }
        let v = &self.validation;
        if v.mc_trajectories < 2 {
            return cerr("validation.mc_trajectories must be at least 2".into());
        }
        if let Some(h) = v.mc_dt {
            if !(h > 0.0) || !h.is_finite() {
                return cerr(format!("validation.mc_dt {h} must be positive"));
            }
        }
        if !(v.stderr_factor >= 0.0) || !(v.rel_threshold >= 0.0) {
            return cerr("validation thresholds must be nonnegative".into());
        }
        if let Some(t) = self.iota.ts.iter().find(|&&t| !(t >= self.domain[0] && t <= self.domain[1])) {
            return cerr(format!("iota point {t}·1 lies outside the domain"));
        }
        let [p0, p1] = self.histogram.pair;
        if p0 == p1 || p0 >= d || p1 >= d {
            return cerr(format!("histogram pair ({p0}, {p1}) invalid for dimension {d}"));
        }
        if let Some(s) = self.histogram.snapshot {
            if s >= self.snapshot_times.len() {
                return cerr(format!("histogram snapshot {s} out of range"));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.potential.dim()
    }

    pub fn domain(&self) -> Domain {
        vec![(self.domain[0], self.domain[1]); self.dim()]
    }

    pub fn y_domain(&self) -> Domain {
        let [a, b] = self.y_domain.unwrap_or(self.domain);
        vec![(a, b); self.dim()]
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        SimConfig::new(
            self.beta,
            self.dt,
            self.snapshot_times.clone(),
            self.num_trajectories,
            self.seed,
        )
    }

    pub fn initial_state(&self) -> Result<InitialState> {
        InitialState::uniform(self.domain())
    }

    pub fn snapshot_index(&self) -> usize {
        self.snapshot.unwrap_or(self.snapshot_times.len().saturating_sub(1))
    }

    pub fn estimate_config(&self) -> EstimateConfig {
        EstimateConfig {
            q: self.q,
            r_max: self.r_max,
            oversample: self.oversample,
            rel_tol: self.rel_tol,
            truncation: self.truncation,
            truncation_factor: self.truncation_factor,
            y_domain: Some(self.y_domain()),
        }
    }

    /// Time between snapshot 0 and the estimation snapshot.
    pub fn horizon(&self) -> f64 {
        self.snapshot_times[self.snapshot_index()] - self.snapshot_times[0]
    }

    pub fn mc_dt(&self) -> f64 {
        self.validation.mc_dt.unwrap_or(self.dt)
    }
}
