//! Euler–Maruyama simulation of Langevin and drift–diffusion dynamics.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Trajectories leaving `[−DIVERGENCE_BOUND, DIVERGENCE_BOUND]^d` abort.
pub const DIVERGENCE_BOUND: f64 = 10.0;

pub type DriftFn = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;

/// Noise coefficient of a custom dynamics: either the diagonal of `σ` or
/// the full row-major `d × d` matrix.
#[derive(Clone)]
pub enum Diffusion {
    Diagonal(DriftFn),
    Full(DriftFn),
}

#[derive(Clone)]
pub struct CustomDynamics {
    pub dim: usize,
    pub drift: DriftFn,
    pub diffusion: Diffusion,
}

impl fmt::Debug for CustomDynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.diffusion {
            Diffusion::Diagonal(_) => "diagonal",
            Diffusion::Full(_) => "full",
        };
        f.debug_struct("CustomDynamics")
            .field("dim", &self.dim)
            .field("diffusion", &kind)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum Potential {
    /// 1D Ginzburg–Landau chain with `x_0 = x_{m+1} = 0`.
    Gl1d { m: usize, lambda: f64 },
    /// 2D Ginzburg–Landau lattice `m × m` with zero Dirichlet boundary,
    /// coordinates stored row-major.
    Gl2d { m: usize, lambda: f64 },
    /// `V(x) = (k/2)|x − c|²`.
    Ou { center: Vec<f64>, stiffness: f64 },
    Custom(CustomDynamics),
}

impl Potential {
    pub fn gl1d(m: usize, lambda: f64) -> Result<Self> {
        check_gl(m, lambda)?;
        Ok(Potential::Gl1d { m, lambda })
    }

    pub fn gl2d(m: usize, lambda: f64) -> Result<Self> {
        check_gl(m, lambda)?;
        Ok(Potential::Gl2d { m, lambda })
    }

    pub fn ou(center: Vec<f64>, stiffness: f64) -> Result<Self> {
        if center.is_empty() || !(stiffness > 0.0) {
            return Err(Error::InvalidArgument("OU needs a center and positive stiffness".into()));
        }
        Ok(Potential::Ou { center, stiffness })
    }

    pub fn dim(&self) -> usize {
        match self {
            Potential::Gl1d { m, .. } => *m,
            Potential::Gl2d { m, .. } => m * m,
            Potential::Ou { center, .. } => center.len(),
            Potential::Custom(c) => c.dim,
        }
    }

    /// Potential energy; `None` for custom dynamics.
    pub fn value(&self, x: &[f64]) -> Result<Option<f64>> {
        self.check_dim(x)?;
        Ok(match self {
            Potential::Gl1d { m, lambda } => {
                let h = 1.0 / (*m as f64 + 1.0);
                let mut grad_term = 0.0;
                let mut prev = 0.0;
                for i in 0..=*m {
                    let cur = if i < *m { x[i] } else { 0.0 };
                    grad_term += ((cur - prev) / h).powi(2);
                    prev = cur;
                }
                let well: f64 = x.iter().map(|v| (1.0 - v * v).powi(2)).sum();
                Some(0.5 * lambda * grad_term + well / (4.0 * lambda))
            }
            Potential::Gl2d { m, lambda } => {
                let m = *m;
                let h = 1.0 / (m as f64 + 1.0);
                let mut grad_term = 0.0;
                for r in 0..m {
                    for c in 0..m {
                        let v = x[r * m + c];
                        let right = if c + 1 < m { x[r * m + c + 1] } else { 0.0 };
                        let down = if r + 1 < m { x[(r + 1) * m + c] } else { 0.0 };
                        grad_term += (right - v).powi(2) + (down - v).powi(2);
                        // Ghost edges on the left and top borders.
                        if c == 0 {
                            grad_term += v * v;
                        }
                        if r == 0 {
                            grad_term += v * v;
                        }
                    }
                }
                grad_term /= h * h;
                let well: f64 = x.iter().map(|v| (1.0 - v * v).powi(2)).sum();
                Some(0.5 * lambda * grad_term + well / (4.0 * lambda))
            }
            Potential::Ou { center, stiffness } => Some(
                0.5 * stiffness * x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>(),
            ),
            Potential::Custom(_) => None,
        })
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        if let Potential::Custom(_) = self {
            return Err(Error::InvalidArgument("custom dynamics have no potential gradient".into()));
        }
        let mut g = vec![0.0; x.len()];
        self.grad_into(x, &mut g);
        Ok(g)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return shape_err(format!("state has dimension {}, potential {}", x.len(), self.dim()));
        }
        Ok(())
    }

    fn grad_into(&self, x: &[f64], g: &mut [f64]) {
        match self {
            Potential::Gl1d { m, lambda } => {
                let m = *m;
                let c = lambda * ((m + 1) * (m + 1)) as f64;
                for i in 0..m {
                    let left = if i > 0 { x[i - 1] } else { 0.0 };
                    let right = if i + 1 < m { x[i + 1] } else { 0.0 };
                    g[i] = c * (2.0 * x[i] - left - right) - x[i] * (1.0 - x[i] * x[i]) / lambda;
                }
            }
            Potential::Gl2d { m, lambda } => {
                let m = *m;
                let c = lambda * ((m + 1) * (m + 1)) as f64;
                for r in 0..m {
                    for col in 0..m {
                        let i = r * m + col;
                        let mut nb = 0.0;
                        if r > 0 {
                            nb += x[i - m];
                        }
                        if r + 1 < m {
                            nb += x[i + m];
                        }
                        if col > 0 {
                            nb += x[i - 1];
                        }
                        if col + 1 < m {
                            nb += x[i + 1];
                        }
                        g[i] = c * (4.0 * x[i] - nb) - x[i] * (1.0 - x[i] * x[i]) / lambda;
                    }
                }
            }
            Potential::Ou { center, stiffness } => {
                for ((gi, xi), ci) in g.iter_mut().zip(x).zip(center) {
                    *gi = stiffness * (xi - ci);
                }
            }
            Potential::Custom(_) => unreachable!("custom dynamics use their own drift"),
        }
    }
}

fn check_gl(m: usize, lambda: f64) -> Result<()> {
    if m == 0 || !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Ginzburg-Landau needs m >= 1 and lambda > 0, got m={m}, lambda={lambda}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub beta: f64,
    pub dt: f64,
    /// Absolute snapshot times; the first is the start time and the last
    /// the terminal time.
    pub snapshot_times: Vec<f64>,
    pub num_trajectories: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(beta: f64, dt: f64, snapshot_times: Vec<f64>, num_trajectories: usize, seed: u64) -> Result<Self> {
        let c = SimConfig {
            beta,
            dt,
            snapshot_times,
            num_trajectories,
            seed,
        };
        c.validate()?;
        Ok(c)
    }

    /// Snapshots at `0` and `T`.
    pub fn endpoints(beta: f64, dt: f64, terminal_time: f64, num_trajectories: usize, seed: u64) -> Result<Self> {
        Self::new(beta, dt, vec![0.0, terminal_time], num_trajectories, seed)
    }

    pub fn start_time(&self) -> f64 {
        self.snapshot_times[0]
    }

    pub fn terminal_time(&self) -> f64 {
        *self.snapshot_times.last().expect("validated nonempty")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.snapshot_times.is_empty() {
            return Err(Error::Config("at least one snapshot time required".into()));
        }
        if self.snapshot_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("snapshot times must be strictly increasing".into()));
        }
        if self.num_trajectories == 0 {
            return Err(Error::Config("num_trajectories must be positive".into()));
        }
        self.snapshot_steps().map(|_| ())
    }

    /// Step index of every snapshot counted from the start time.
    pub fn snapshot_steps(&self) -> Result<Vec<usize>> {
        let t0 = self.snapshot_times[0];
        self.snapshot_times
            .iter()
            .map(|&t| {
                let k = ((t - t0) / self.dt).round();
                if (t - t0 - k * self.dt).abs() > 1e-12 * (1.0 + t.abs()) {
                    return Err(Error::Config(format!(
                        "snapshot time {t} is not a multiple of dt = {} from {t0}",
                        self.dt
                    )));
                }
                Ok(k as usize)
            })
            .collect()
    }
}

/// Distribution of `X` at the start time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// Independent uniform coordinates on `∏[a_j, b_j]`.
    Uniform(Vec<(f64, f64)>),
    Fixed(Vec<f64>),
}

impl InitialState {
    pub fn uniform(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if let Some((a, b)) = bounds.iter().find(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid interval [{a}, {b}]")));
        }
        Ok(InitialState::Uniform(bounds))
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialState::Uniform(b) => b.len(),
            InitialState::Fixed(x) => x.len(),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            InitialState::Uniform(bounds) => {
                for (o, (a, b)) in out.iter_mut().zip(bounds) {
                    *o = a + (b - a) * rng.random::<f64>();
                }
            }
            InitialState::Fixed(x) => out.copy_from_slice(x),
        }
    }
}

/// Generator for trajectory `index`: stream `index` of the seeded ChaCha8.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    dim: usize,
    times: Vec<f64>,
    num_trajectories: usize,
    data: Vec<f64>,
}

impl TrajectoryBatch {
    pub fn new(dim: usize, times: Vec<f64>, num_trajectories: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || times.is_empty() {
            return shape_err("trajectory batch needs a dimension and a snapshot");
        }
        let want = num_trajectories
            .checked_mul(times.len())
            .and_then(|v| v.checked_mul(dim))
            .ok_or_else(|| Error::Shape("trajectory batch too large".into()))?;
        if data.len() != want {
            return shape_err(format!("expected {want} values, got {}", data.len()));
        }
        Ok(TrajectoryBatch {
            dim,
            times,
            num_trajectories,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn num_trajectories(&self) -> usize {
        self.num_trajectories
    }

    pub fn num_snapshots(&self) -> usize {
        self.times.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn state(&self, trajectory: usize, snapshot: usize) -> &[f64] {
        let k = self.times.len();
        let off = (trajectory * k + snapshot) * self.dim;
        &self.data[off..off + self.dim]
    }

    /// All states at one snapshot, row-major `N × d`.
    pub fn snapshot(&self, j: usize) -> Result<Vec<f64>> {
        if j >= self.times.len() {
            return Err(Error::InvalidArgument(format!("snapshot {j} out of range")));
        }
        Ok((0..self.num_trajectories)
            .flat_map(|i| self.state(i, j).iter().copied())
            .collect())
    }
}

/// Simulates `cfg.num_trajectories` independent paths.
pub fn simulate(potential: &Potential, cfg: &SimConfig, init: &InitialState) -> Result<TrajectoryBatch> {
    cfg.validate()?;
    let d = potential.dim();
    if init.dim() != d {
        return shape_err(format!("initial state has dimension {}, dynamics {d}", init.dim()));
    }
    let steps = cfg.snapshot_steps()?;
    let k = steps.len();
    let mut data = vec![0.0; cfg.num_trajectories * k * d];
    data.par_chunks_mut(k * d)
        .enumerate()
        .try_for_each(|(i, out)| simulate_one(potential, cfg, init, &steps, i, out))?;
    TrajectoryBatch::new(d, cfg.snapshot_times.clone(), cfg.num_trajectories, data)
}

fn simulate_one(
    potential: &Potential,
    cfg: &SimConfig,
    init: &InitialState,
    steps: &[usize],
    index: usize,
    out: &mut [f64],
) -> Result<()> {
    let d = potential.dim();
    let mut rng = trajectory_rng(cfg.seed, index as u64);
    let mut x = vec![0.0; d];
    init.draw(&mut rng, &mut x);
    let mut g = vec![0.0; d];
    let mut sig = match potential {
        Potential::Custom(CustomDynamics {
            diffusion: Diffusion::Full(_),
            ..
        }) => vec![0.0; d * d],
        _ => vec![0.0; d],
    };
    let mut xi = vec![0.0; d];
    let noise = (2.0 * cfg.dt / cfg.beta).sqrt();
    let sqrt_dt = cfg.dt.sqrt();
    let t0 = cfg.start_time();
    let mut step = 0usize;
    for (j, &target) in steps.iter().enumerate() {
        while step < target {
            let t = t0 + step as f64 * cfg.dt;
            for v in xi.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            match potential {
                Potential::Custom(c) => {
                    (c.drift)(&x, t, &mut g);
                    match &c.diffusion {
                        Diffusion::Diagonal(s) => {
                            s(&x, t, &mut sig);
                            for a in 0..d {
                                x[a] += g[a] * cfg.dt + sig[a] * sqrt_dt * xi[a];
                            }
                        }
                        Diffusion::Full(s) => {
                            s(&x, t, &mut sig);
                            for a in 0..d {
                                let row: f64 = sig[a * d..(a + 1) * d].iter().zip(&xi).map(|(s, z)| s * z).sum();
                                x[a] += g[a] * cfg.dt + row * sqrt_dt;
                            }
                        }
                    }
                }
                _ => {
                    potential.grad_into(&x, &mut g);
                    for a in 0..d {
                        x[a] += -g[a] * cfg.dt + noise * xi[a];
                    }
                }
            }
            step += 1;
            if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND) {
                return Err(Error::Diverged {
                    trajectory: index,
                    step,
                });
            }
        }
        out[j * d..(j + 1) * d].copy_from_slice(&x);
    }
    Ok(())
}

pub const TRJ_MAGIC: &[u8; 4] = b"TRJ1";

/// Little-endian `TRJ1` file: magic, `u64 d, N, K`, `K` snapshot times,
/// then `N·K·d` values, trajectory-major and coordinate-innermost.
pub fn write_trajectories(batch: &TrajectoryBatch) -> Vec<u8> {
    let mut out = Vec::with_capacity(28 + 8 * (batch.times.len() + batch.data.len()));
    out.extend_from_slice(TRJ_MAGIC);
    for v in [batch.dim, batch.num_trajectories, batch.times.len()] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for t in batch.times.iter().chain(&batch.data) {
        out.extend_from_slice(&t.to_le_bytes());
    }
    out
}

pub fn read_trajectories(bytes: &[u8]) -> Result<TrajectoryBatch> {
    let perr = |offset: usize, message: String| Error::Parse { offset, message };
    if bytes.len() < 4 || &bytes[..4] != TRJ_MAGIC {
        return Err(perr(0, "bad magic, expected TRJ1".into()));
    }
    if bytes.len() < 28 {
        return Err(perr(4, "truncated header".into()));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[4 + 8 * i..12 + 8 * i].try_into().expect("8 bytes"));
    let (d, n, k) = (word(0), word(1), word(2));
    if d == 0 || k == 0 {
        return Err(perr(4, "dimension and snapshot count must be positive".into()));
    }
    let values = n
        .checked_mul(k)
        .and_then(|v| v.checked_mul(d))
        .and_then(|v| v.checked_add(k))
        .ok_or_else(|| perr(12, "header sizes overflow".into()))?;
    let body = (bytes.len() - 28) as u64;
    if values.checked_mul(8) != Some(body) {
        return Err(perr(
            28,
            format!("header promises {values} values, body holds {} bytes", body),
        ));
    }
    let mut floats = bytes[28..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let times: Vec<f64> = floats.by_ref().take(k as usize).collect();
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(perr(28, "snapshot times not increasing".into()));
    }
    let data: Vec<f64> = floats.collect();
    TrajectoryBatch::new(d as usize, times, n as usize, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(p: &Potential, x: &[f64]) -> f64 {
        let g = p.gradient(x).unwrap();
        let h = 1e-5;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let fd = (p.value(&xp).unwrap().unwrap() - p.value(&xm).unwrap().unwrap()) / (2.0 * h);
            num += (fd - g[i]).powi(2);
            den += g[i].powi(2);
        }
        (num / den).sqrt()
    }

    #[test]
    fn gl1d_gradient_examples() {
        let p = Potential::gl1d(3, 0.1).unwrap();
        let g = p.gradient(&[1.0, 1.0, 1.0]).unwrap();
        for (a, b) in g.iter().zip([1.6, 0.0, 1.6]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(p.gradient(&[0.0; 3]).unwrap().iter().all(|&v| v == 0.0));
        assert!(p.gradient(&[0.0; 4]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = trajectory_rng(5, 0);
        let pots = [
            Potential::gl1d(16, 0.1).unwrap(),
            Potential::gl2d(4, 0.03).unwrap(),
            Potential::ou(vec![0.5, -1.0, 0.0], 1.7).unwrap(),
        ];
        for p in &pots {
            for _ in 0..10 {
                let x: Vec<f64> = (0..p.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
                let err = fd_check(p, &x);
                assert!(err < 1e-6, "{p:?}: {err}");
            }
        }
    }

    #[test]
    fn gl2d_gradient_at_ones() {
        // Corner sites have two ghost neighbors, edge sites one.
        let p = Potential::gl2d(3, 0.1).unwrap();
        let g = p.gradient(&[1.0; 9]).unwrap();
        let c = 1.6;
        let want = [2.0 * c, c, 2.0 * c, c, 0.0, c, 2.0 * c, c, 2.0 * c];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ou_moments() {
        let p = Potential::ou(vec![0.0], 1.0).unwrap();
        let cfg = SimConfig::endpoints(1.0, 1e-3, 2.0, 20_000, 7).unwrap();
        let x0 = 1.5;
        let b = simulate(&p, &cfg, &InitialState::Fixed(vec![x0])).unwrap();
        let ys = b.snapshot(1).unwrap();
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let true_var = 1.0 - (-4.0f64).exp();
        assert!((mean - x0 * (-2.0f64).exp()).abs() < 3.0 * (true_var / n).sqrt(), "{mean}");
        assert!((var / true_var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn zero_dynamics_is_identity() {
        let dyn_ = CustomDynamics {
            dim: 2,
            drift: Arc::new(|_, _, g| g.fill(0.0)),
            diffusion: Diffusion::Diagonal(Arc::new(|_, _, s| s.fill(0.0))),
        };
        let cfg = SimConfig::endpoints(1.0, 0.01, 1.0, 4, 1).unwrap();
        let init = InitialState::uniform(vec![(-2.0, 2.0); 2]).unwrap();
        let b = simulate(&Potential::Custom(dyn_), &cfg, &init).unwrap();
        for i in 0..4 {
            assert_eq!(b.state(i, 0), b.state(i, 1));
        }
    }

    #[test]
    fn full_diffusion_matches_diagonal() {
        let diag = CustomDynamics {
            dim: 2,
            drift: Arc::new(|x, _, g| {
                g[0] = -x[0];
                g[1] = -2.0 * x[1];
            }),
            diffusion: Diffusion::Diagonal(Arc::new(|_, _, s| s.copy_from_slice(&[0.5, 0.3]))),
        };
        let mut full = diag.clone();
        full.diffusion = Diffusion::Full(Arc::new(|_, _, s| s.copy_from_slice(&[0.5, 0.0, 0.0, 0.3])));
        let cfg = SimConfig::endpoints(1.0, 0.01, 0.5, 8, 3).unwrap();
        let init = InitialState::Fixed(vec![1.0, -1.0]);
        let a = simulate(&Potential::Custom(diag), &cfg, &init).unwrap();
        let b = simulate(&Potential::Custom(full), &cfg, &init).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let blowup = CustomDynamics {
            dim: 1,
            drift: Arc::new(|x, _, g| g[0] = 100.0 * x[0]),
            diffusion: Diffusion::Diagonal(Arc::new(|_, _, s| s[0] = 0.0)),
        };
        let cfg = SimConfig::endpoints(1.0, 0.1, 5.0, 3, 1).unwrap();
        let r = simulate(&Potential::Custom(blowup), &cfg, &InitialState::Fixed(vec![1.0]));
        assert!(matches!(r, Err(Error::Diverged { step: 1, .. })));
    }

    #[test]
    fn uniform_initial_statistics() {
        let p = Potential::ou(vec![0.0; 3], 1.0).unwrap();
        let cfg = SimConfig::new(1.0, 0.1, vec![0.0], 100_000, 11).unwrap();
        let b = simulate(&p, &cfg, &InitialState::uniform(vec![(-2.0, 2.0); 3]).unwrap()).unwrap();
        let xs = b.snapshot(0).unwrap();
        let n = 100_000f64;
        let col = |j: usize| xs.iter().skip(j).step_by(3).copied().collect::<Vec<_>>();
        for j in 0..3 {
            let c = col(j);
            let mean = c.iter().sum::<f64>() / n;
            assert!(mean.abs() < 3.0 * (4.0 / 3.0 / n).sqrt());
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            // Var of the sample variance for Unif(−2,2): (μ4 − σ⁴)/n with μ4 = 16/5.
            let sd = ((16.0 / 5.0 - 16.0 / 9.0) / n).sqrt();
            assert!((var - 4.0 / 3.0).abs() < 3.0 * sd, "{var}");
        }
        let (a, c) = (col(0), col(1));
        let rho = a.iter().zip(&c).map(|(x, y)| x * y).sum::<f64>() / n / (4.0 / 3.0);
        assert!(rho.abs() < 0.02);
    }

    #[test]
    fn snapshot_times_must_align() {
        assert!(SimConfig::new(1.0, 0.1, vec![0.0, 0.25], 1, 0).is_err());
        assert!(SimConfig::new(1.0, 1e-3, vec![0.0, 0.5, 1.0], 1, 0).is_ok());
        assert!(SimConfig::new(1.0, 1e-3, vec![0.0, 0.0], 1, 0).is_err());
        assert!(SimConfig::new(-1.0, 1e-3, vec![0.0], 1, 0).is_err());
    }

    #[test]
    fn start_time_feeds_time_dependent_drift() {
        // dx = t dt from t = 1 to 2 integrates to 1.5 (left-point rule
        // error dt/2).
        let dyn_ = CustomDynamics {
            dim: 1,
            drift: Arc::new(|_, t, g| g[0] = t),
            diffusion: Diffusion::Diagonal(Arc::new(|_, _, s| s[0] = 0.0)),
        };
        let cfg = SimConfig::new(1.0, 1e-3, vec![1.0, 2.0], 1, 0).unwrap();
        let b = simulate(&Potential::Custom(dyn_), &cfg, &InitialState::Fixed(vec![0.0])).unwrap();
        assert!((b.state(0, 1)[0] - (1.5 - 0.5e-3)).abs() < 1e-9);
    }

    #[test]
    fn trajectory_file_round_trip() {
        let p = Potential::gl1d(4, 0.1).unwrap();
        let cfg = SimConfig::new(8.0, 1e-3, vec![0.0, 0.1, 0.2], 5, 2).unwrap();
        let b = simulate(&p, &cfg, &InitialState::uniform(vec![(-2.0, 2.0); 4]).unwrap()).unwrap();
        let bytes = write_trajectories(&b);
        assert_eq!(read_trajectories(&bytes).unwrap(), b);
        assert!(read_trajectories(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[3] = b'2';
        assert!(matches!(read_trajectories(&bad), Err(Error::Parse { offset: 0, .. })));
    }
}
