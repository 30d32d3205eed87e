//! Markov operators from trajectory data, and the backward/forward solves
//! built on them.
//!
//! The joint density `g(x, y)` of `(X_s, X_t)` lives on the interlaced tree
//! over `(x_1, y_1, …, x_d, y_d)`, where site `k` of the tree is physical
//! coordinate `site_order[k]`. Functions of `x` or `y` alone live on the site
//! tree obtained by collapsing every `(x_k, y_k)` pair node into a leaf.
//! All public point arguments use physical coordinate order.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::basis::IntervalBasis;
use crate::error::{shape_err, Error, Result};
use crate::fht::{rank_one, ConditionalSampler, Fht, DEFAULT_GRID_SIZE};
use crate::linalg::{contract, kron, DenseTensor};
use crate::sde::TrajectoryBatch;
use crate::sketch::{build_plan, solve_cores, MomentEstimator, PlanParams, SampleSet};
use crate::tree::BipartitionTree;

/// Largest overflow of a `y` coordinate that is clipped rather than dropped.
pub const CLIP_MARGIN: f64 = 0.5;
/// Distance from the boundary at which clipped coordinates are placed.
pub const CLIP_INSET: f64 = 1e-9;
/// Largest tolerated fraction of dropped samples.
pub const MAX_DROP_FRACTION: f64 = 0.01;

/// Product box `∏[a_j, b_j]`.
pub type Domain = Vec<(f64, f64)>;

pub fn volume(domain: &[(f64, f64)]) -> f64 {
    domain.iter().map(|(a, b)| b - a).product()
}

/// Tree over `d` sites: the interlaced joint tree with pairs collapsed.
pub fn site_tree(num_sites: usize) -> Result<BipartitionTree> {
    match num_sites {
        0 => Err(Error::InvalidArgument("at least one site required".into())),
        1 => Ok(BipartitionTree::single()),
        d => BipartitionTree::balanced(d),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    /// Largest Legendre degree; every basis has `q + 1` functions.
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
    /// Box for the `y` bases; defaults to the `x` domain.
    #[serde(default)]
    pub y_domain: Option<Domain>,
}

fn default_oversample() -> usize {
    crate::sketch::DEFAULT_OVERSAMPLE
}
fn default_rel_tol() -> f64 {
    crate::sketch::DEFAULT_REL_TOL
}
fn default_true() -> bool {
    true
}
fn default_truncation_factor() -> f64 {
    crate::sketch::DEFAULT_TRUNCATION_FACTOR
}

impl EstimateConfig {
    pub fn new(q: usize, r_max: usize) -> Self {
        EstimateConfig {
            q,
            r_max,
            oversample: default_oversample(),
            rel_tol: default_rel_tol(),
            truncation: true,
            truncation_factor: default_truncation_factor(),
            y_domain: None,
        }
    }

    pub fn estimator(&self) -> Result<MomentEstimator> {
        MomentEstimator::new(self.truncation, self.truncation_factor)
    }
}

/// Counts of `y` coordinates adjusted while forming joint samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleReport {
    pub total: usize,
    pub clipped: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovOperator {
    joint: Fht,
    domain: Domain,
    volume: f64,
    initial_time: f64,
    terminal_time: f64,
    site_order: Vec<usize>,
    site_tree: BipartitionTree,
}

impl MarkovOperator {
    pub fn new(
        joint: Fht,
        domain: Domain,
        initial_time: f64,
        terminal_time: f64,
        site_order: Vec<usize>,
    ) -> Result<Self> {
        let d = domain.len();
        if d == 0 || joint.num_vars() != 2 * d {
            return shape_err(format!(
                "joint has {} variables for a {d}-dimensional domain",
                joint.num_vars()
            ));
        }
        if *joint.tree() != BipartitionTree::interlaced(d)? {
            return shape_err("joint density must use the interlaced tree");
        }
        let mut seen = vec![false; d];
        for &p in &site_order {
            if p >= d || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidArgument("site order is not a permutation".into()));
            }
        }
        if site_order.len() != d {
            return Err(Error::InvalidArgument("site order is not a permutation".into()));
        }
        for (k, &p) in site_order.iter().enumerate() {
            let b = &joint.bases()[2 * k];
            if b.lower() != domain[p].0 || b.upper() != domain[p].1 {
                return shape_err(format!("x basis of site {k} does not match the domain"));
            }
        }
        Ok(MarkovOperator {
            volume: volume(&domain),
            site_tree: site_tree(d)?,
            joint,
            domain,
            initial_time,
            terminal_time,
            site_order,
        })
    }

    pub fn joint(&self) -> &Fht {
        &self.joint
    }

    pub fn domain(&self) -> &[(f64, f64)] {
        &self.domain
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn initial_time(&self) -> f64 {
        self.initial_time
    }

    pub fn terminal_time(&self) -> f64 {
        self.terminal_time
    }

    pub fn site_order(&self) -> &[usize] {
        &self.site_order
    }

    pub fn num_sites(&self) -> usize {
        self.domain.len()
    }

    pub fn site_tree(&self) -> &BipartitionTree {
        &self.site_tree
    }

    /// `x` bases in site order.
    pub fn x_bases(&self) -> Vec<IntervalBasis> {
        self.joint.bases().iter().step_by(2).copied().collect()
    }

    /// `y` bases in site order.
    pub fn y_bases(&self) -> Vec<IntervalBasis> {
        self.joint.bases().iter().skip(1).step_by(2).copied().collect()
    }

    /// Physical point to site order.
    pub fn to_sites(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.num_sites() {
            return shape_err(format!("point has {} coordinates, expected {}", x.len(), self.num_sites()));
        }
        Ok(self.site_order.iter().map(|&p| x[p]).collect())
    }

    /// Site-ordered point to physical order.
    pub fn to_physical(&self, z: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; z.len()];
        for (k, &p) in self.site_order.iter().enumerate() {
            x[p] = z[k];
        }
        x
    }

    /// Rank-one terminal `∏_p h_p(y_p)` on the `y` bases, `h` in physical order.
    pub fn terminal_separable(&self, h: &[&dyn Fn(f64) -> f64]) -> Result<Fht> {
        let hs = self.sites_of(h)?;
        terminal_separable_to_fht(&hs, &self.y_bases(), &self.site_tree)
    }

    /// Rank-two terminal `Σ_p h_p(y_p)` on the `y` bases.
    pub fn terminal_sum(&self, h: &[&dyn Fn(f64) -> f64]) -> Result<Fht> {
        let hs = self.sites_of(h)?;
        terminal_sum_to_fht(&hs, &self.y_bases(), &self.site_tree)
    }

    /// Rank-one initial density on the `x` bases.
    pub fn initial_separable(&self, h: &[&dyn Fn(f64) -> f64]) -> Result<Fht> {
        let hs = self.sites_of(h)?;
        terminal_separable_to_fht(&hs, &self.x_bases(), &self.site_tree)
    }

    fn sites_of<'a>(&self, h: &[&'a dyn Fn(f64) -> f64]) -> Result<Vec<&'a dyn Fn(f64) -> f64>> {
        if h.len() != self.num_sites() {
            return shape_err(format!("{} functions for {} sites", h.len(), self.num_sites()));
        }
        Ok(self.site_order.iter().map(|&p| h[p]).collect())
    }
}

/// Forms interlaced joint samples `(x_1, y_1, …)` from snapshots `0` and `j`.
pub fn joint_samples(
    batch: &TrajectoryBatch,
    j: usize,
    domain: &[(f64, f64)],
    y_domain: &[(f64, f64)],
    site_order: &[usize],
) -> Result<(SampleSet, SampleReport)> {
    let d = batch.dim();
    if domain.len() != d || y_domain.len() != d || site_order.len() != d {
        return shape_err("domain, y domain and site order must match the batch dimension");
    }
    if j == 0 || j >= batch.num_snapshots() {
        return Err(Error::InvalidArgument(format!(
            "snapshot {j} must be in 1..{}",
            batch.num_snapshots()
        )));
    }
    let n = batch.num_trajectories();
    let mut values = Vec::with_capacity(n * 2 * d);
    let mut report = SampleReport {
        total: n,
        ..Default::default()
    };
    let mut row = vec![0.0; 2 * d];
    'traj: for i in 0..n {
        let (x0, yt) = (batch.state(i, 0), batch.state(i, j));
        let mut clipped = false;
        for (k, &p) in site_order.iter().enumerate() {
            let (a, b) = domain[p];
            if !(x0[p] >= a && x0[p] <= b) {
                return Err(Error::OutOfDomain {
                    var: 2 * k,
                    value: x0[p],
                    lower: a,
                    upper: b,
                });
            }
            row[2 * k] = x0[p];
            let (ya, yb) = y_domain[p];
            let y = yt[p];
            row[2 * k + 1] = if y < ya {
                if ya - y > CLIP_MARGIN {
                    report.dropped += 1;
                    continue 'traj;
                }
                clipped = true;
                ya + CLIP_INSET
            } else if y > yb {
                if y - yb > CLIP_MARGIN {
                    report.dropped += 1;
                    continue 'traj;
                }
                clipped = true;
                yb - CLIP_INSET
            } else {
                y
            };
        }
        if clipped {
            report.clipped += 1;
        }
        values.extend_from_slice(&row);
    }
    if report.dropped as f64 > MAX_DROP_FRACTION * n as f64 {
        return Err(Error::DataQuality {
            dropped: report.dropped,
            total: n,
        });
    }
    Ok((SampleSet::new(2 * d, values)?, report))
}

/// Learns the operator `G(x, y) = Vol(𝒳)·g(x, y)` for snapshot pair `(0, j)`.
pub fn estimate_markov(
    batch: &TrajectoryBatch,
    j: usize,
    cfg: &EstimateConfig,
    domain: &[(f64, f64)],
    site_order: Option<&[usize]>,
) -> Result<(MarkovOperator, SampleReport)> {
    let d = batch.dim();
    let identity: Vec<usize> = (0..d).collect();
    let order = site_order.unwrap_or(&identity);
    let y_domain = cfg.y_domain.clone().unwrap_or_else(|| domain.to_vec());
    let (samples, report) = joint_samples(batch, j, domain, &y_domain, order)?;
    let mut bases = Vec::with_capacity(2 * d);
    for &p in order {
        bases.push(IntervalBasis::with_degree(domain[p].0, domain[p].1, cfg.q)?);
        bases.push(IntervalBasis::with_degree(y_domain[p].0, y_domain[p].1, cfg.q)?);
    }
    let tree = BipartitionTree::interlaced(d)?;
    let plan = build_plan(
        &tree,
        &bases,
        &PlanParams {
            r_max: cfg.r_max,
            oversample: cfg.oversample,
            rel_tol: cfg.rel_tol,
            interlaced: true,
        },
    )?;
    let joint = solve_cores(&samples, &tree, &bases, &plan, &cfg.estimator()?)?;
    let times = batch.times();
    let op = MarkovOperator::new(joint, domain.to_vec(), times[0], times[j], order.to_vec())?;
    Ok((op, report))
}

fn quad_order(n: usize) -> usize {
    (2 * n).max(64)
}

/// Rank-one FHT of `∏_j h_j(z_j)`.
pub fn terminal_separable_to_fht(
    h: &[&dyn Fn(f64) -> f64],
    bases: &[IntervalBasis],
    tree: &BipartitionTree,
) -> Result<Fht> {
    if h.len() != bases.len() || bases.len() != tree.num_vars() {
        return shape_err("one function and basis per tree variable required");
    }
    let coefs = h
        .iter()
        .zip(bases)
        .map(|(f, b)| b.project(f, quad_order(b.size())))
        .collect::<Result<Vec<_>>>()?;
    rank_one(tree.clone(), bases.to_vec(), &coefs)
}

/// Rank-two FHT of `Σ_j h_j(z_j)` with states (constant, partial sum).
pub fn terminal_sum_to_fht(h: &[&dyn Fn(f64) -> f64], bases: &[IntervalBasis], tree: &BipartitionTree) -> Result<Fht> {
    if h.len() != bases.len() || bases.len() != tree.num_vars() {
        return shape_err("one function and basis per tree variable required");
    }
    if tree.num_vars() == 1 {
        let c = bases[0].project(h[0], quad_order(bases[0].size()))?;
        return rank_one(tree.clone(), bases.to_vec(), &[c]);
    }
    let mut cores = Vec::with_capacity(tree.nodes().len());
    for node in tree.nodes() {
        let core = match node.children {
            None => {
                let b = &bases[node.start];
                let hc = b.project(h[node.start], quad_order(b.size()))?;
                let one = b.integration_vector();
                DenseTensor::from_fn(vec![b.size(), 2], |idx| if idx[1] == 0 { one[idx[0]] } else { hc[idx[0]] })
            }
            Some(_) if node.parent.is_none() => DenseTensor::new(vec![2, 2], vec![0.0, 1.0, 1.0, 0.0])?,
            Some(_) => DenseTensor::from_fn(vec![2, 2, 2], |i| match (i[0], i[1], i[2]) {
                (0, 0, 0) | (1, 0, 1) | (0, 1, 1) => 1.0,
                _ => 0.0,
            }),
        };
        cores.push(core);
    }
    Fht::new(tree.clone(), bases.to_vec(), cores)
}

/// Which half of the interlaced joint is contracted with the given function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    /// Contract `y` legs, produce a function of `x`.
    Backward,
    /// Contract `x` legs, produce a function of `y`.
    Forward,
}

/// Contracts the joint with a site-tree FHT on one half, returning a
/// site-tree FHT on the other half, scaled by `scale`.
fn contract_half(op: &MarkovOperator, f: &Fht, side: Side, scale: f64) -> Result<Fht> {
    let d = op.num_sites();
    let joint = &op.joint;
    let (keep_off, sum_off) = match side {
        Side::Backward => (0, 1),
        Side::Forward => (1, 0),
    };
    if f.tree() != op.site_tree() {
        return shape_err("function tree does not match the operator's site tree");
    }
    for k in 0..d {
        if f.bases()[k] != joint.bases()[2 * k + sum_off] {
            return shape_err(format!("basis of site {k} does not match the operator"));
        }
    }
    let jt = joint.tree();
    let st = op.site_tree();
    let mut cores = Vec::with_capacity(st.nodes().len());
    // Joint node id for each site node: same preorder walk over ranges.
    let mut joint_id = vec![0usize; st.nodes().len()];
    for (sid, sn) in st.nodes().iter().enumerate() {
        let (lo, hi) = (2 * sn.start, 2 * sn.end);
        joint_id[sid] = jt
            .nodes()
            .iter()
            .position(|n| n.start == lo && n.end == hi)
            .expect("interlaced tree contains every site range");
    }
    for (sid, sn) in st.nodes().iter().enumerate() {
        let jid = joint_id[sid];
        let p = joint.core(jid);
        let fc = f.core(sid);
        let core = match sn.children {
            Some(_) => kron(p, fc)?,
            None => {
                let (xl, yl) = jt.node(jid).children.expect("pair node");
                let (kept, summed) = if keep_off == 0 { (xl, yl) } else { (yl, xl) };
                let pk = joint.core(kept); // (n_keep, α or β)
                let ps = joint.core(summed); // (n_sum, β or α)
                // W(s, ξ) = Σ_i ps(i, s) f(i, ξ)
                let w = contract(ps, fc, &[(0, 0)])?;
                let p3 = if p.order() == 2 {
                    let s = p.shape();
                    p.clone().reshape(vec![s[0], s[1], 1])?
                } else {
                    p.clone()
                };
                // Z(kept-rank, θ, ξ)
                let z = if keep_off == 0 {
                    contract(&p3, &w, &[(1, 0)])? // (α, θ, ξ)
                } else {
                    contract(&p3, &w, &[(0, 0)])? // (β, θ, ξ)
                };
                let u = contract(pk, &z, &[(1, 0)])?; // (n, θ, ξ)
                let s = u.shape().to_vec();
                u.reshape(vec![s[0], s[1] * s[2]])?
            }
        };
        cores.push(core);
    }
    let root = std::mem::replace(&mut cores[0], DenseTensor::scalar(0.0));
    cores[0] = root.scale(scale);
    let bases = (0..d).map(|k| joint.bases()[2 * k + keep_off]).collect();
    Fht::new(st.clone(), bases, cores)
}

/// `u(x) = Vol(𝒳)·∫ g(x, y) f(y) dy` as an FHT over `x` (site order).
pub fn solve_backward_fht(op: &MarkovOperator, f: &Fht) -> Result<Fht> {
    contract_half(op, f, Side::Backward, op.volume)
}

/// `p(y) = Vol(𝒳)·∫ g(x, y) q(x) dx` as an FHT over `y` (site order).
pub fn solve_forward_fht(op: &MarkovOperator, q: &Fht) -> Result<Fht> {
    contract_half(op, q, Side::Forward, op.volume)
}

/// Pointwise access to a solution, in physical coordinates.
pub trait Evaluator {
    fn value(&self, x: &[f64]) -> Result<f64>;
}

/// An FHT over sites, queried in physical coordinates.
#[derive(Debug, Clone)]
pub struct FhtEvaluator {
    pub fht: Fht,
    pub site_order: Vec<usize>,
}

impl Evaluator for FhtEvaluator {
    fn value(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.site_order.len() {
            return shape_err("point dimension mismatch");
        }
        let z: Vec<f64> = self.site_order.iter().map(|&p| x[p]).collect();
        self.fht.evaluate(&z)
    }
}

/// `u(x) = ∫ g(x, y) f(y) dy / ∫ g(x, s) ds`.
#[derive(Debug, Clone)]
pub struct NormalizedEvaluator {
    pub numerator: Fht,
    pub denominator: Fht,
    pub site_order: Vec<usize>,
}

impl NormalizedEvaluator {
    pub fn parts(&self, x: &[f64]) -> Result<(f64, f64)> {
        if x.len() != self.site_order.len() {
            return shape_err("point dimension mismatch");
        }
        let z: Vec<f64> = self.site_order.iter().map(|&p| x[p]).collect();
        Ok((self.numerator.evaluate(&z)?, self.denominator.evaluate(&z)?))
    }
}

impl Evaluator for NormalizedEvaluator {
    fn value(&self, x: &[f64]) -> Result<f64> {
        let (num, den) = self.parts(x)?;
        if !(den > 0.0) {
            return Err(Error::DegeneratePoint { value: den });
        }
        Ok(num / den)
    }
}

/// `∫ g(x, s) ds` as an FHT over `x` (site order).
pub fn x_marginal(op: &MarkovOperator) -> Result<Fht> {
    let keep: Vec<usize> = (0..op.num_sites()).map(|k| 2 * k).collect();
    op.joint.marginalize(&keep)
}

/// `∫ g(s, y) ds` as an FHT over `y` (site order).
pub fn y_marginal(op: &MarkovOperator) -> Result<Fht> {
    let keep: Vec<usize> = (0..op.num_sites()).map(|k| 2 * k + 1).collect();
    op.joint.marginalize(&keep)
}

pub fn normalized_solution(op: &MarkovOperator, f: &Fht) -> Result<NormalizedEvaluator> {
    let numerator = contract_half(op, f, Side::Backward, 1.0)?;
    let denominator = x_marginal(op)?;
    Ok(NormalizedEvaluator {
        numerator,
        denominator,
        site_order: op.site_order.clone(),
    })
}

/// Monte-Carlo estimate of `u(x)` by sampling `y ~ g(x, ·)/∫g(x, s)ds`.
/// Returns the mean of `f` and its standard error.
pub fn solve_backward_general<R: Rng + ?Sized>(
    op: &MarkovOperator,
    f: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    num_samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if num_samples < 2 {
        return Err(Error::InvalidArgument("at least 2 samples required".into()));
    }
    let z = op.to_sites(x)?;
    let assignments: BTreeMap<usize, f64> = z.iter().enumerate().map(|(k, &v)| (2 * k, v)).collect();
    let cond = op.joint.condition_on(&assignments)?;
    let sampler = ConditionalSampler::new(&cond, DEFAULT_GRID_SIZE)?;
    let mut values = Vec::with_capacity(num_samples);
    for _ in 0..num_samples {
        let y = sampler.sample(rng)?;
        values.push(f(&op.to_physical(&y)));
    }
    let n = num_samples as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Linear interpolation in time between two solutions.
pub struct TimeInterpolated<'a> {
    pub earlier: &'a dyn Evaluator,
    pub later: &'a dyn Evaluator,
    pub t0: f64,
    pub t1: f64,
    pub t: f64,
}

pub fn interpolate_in_time<'a>(
    earlier: &'a dyn Evaluator,
    later: &'a dyn Evaluator,
    t0: f64,
    t1: f64,
    t: f64,
) -> Result<TimeInterpolated<'a>> {
    if !(t0 < t1) || !(t >= t0 && t <= t1) {
        return Err(Error::InvalidArgument(format!("t = {t} outside [{t0}, {t1}]")));
    }
    Ok(TimeInterpolated {
        earlier,
        later,
        t0,
        t1,
        t,
    })
}

impl Evaluator for TimeInterpolated<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        let w = (self.t - self.t0) / (self.t1 - self.t0);
        let a = self.earlier.value(x)?;
        if w == 0.0 {
            return Ok(a);
        }
        let b = self.later.value(x)?;
        if w == 1.0 {
            return Ok(b);
        }
        Ok((1.0 - w) * a + w * b)
    }
}

/// `ι(x) = u₊(x)/(u₊(x) + u₋(x))` from two normalized solutions.
#[derive(Debug, Clone)]
pub struct Propensity {
    pub plus: NormalizedEvaluator,
    pub minus: NormalizedEvaluator,
}

impl Propensity {
    pub fn new(op: &MarkovOperator, g_plus: &Fht, g_minus: &Fht) -> Result<Self> {
        Ok(Propensity {
            plus: normalized_solution(op, g_plus)?,
            minus: normalized_solution(op, g_minus)?,
        })
    }

    pub fn ratio(&self, x: &[f64]) -> Result<f64> {
        let up = self.plus.value(x)?;
        let um = self.minus.value(x)?;
        let s = up + um;
        if !(s > 0.0) {
            return Err(Error::DegeneratePoint { value: s });
        }
        Ok(up / s)
    }
}

pub fn propensity_ratio(op: &MarkovOperator, g_plus: &Fht, g_minus: &Fht, x: &[f64]) -> Result<f64> {
    Propensity::new(op, g_plus, g_minus)?.ratio(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fht::uniform_density;

    fn box_bases(d: usize, n: usize) -> Vec<IntervalBasis> {
        vec![IntervalBasis::new(-2.0, 2.0, n).unwrap(); d]
    }

    #[test]
    fn sum_terminal_examples() {
        let d = 4;
        let tree = site_tree(d).unwrap();
        let h = |y: f64| (y - 1.0) * (y - 1.0) / d as f64;
        let hs: Vec<&dyn Fn(f64) -> f64> = vec![&h; d];
        let f = terminal_sum_to_fht(&hs, &box_bases(d, 3), &tree).unwrap();
        assert!(f.evaluate(&[1.0; 4]).unwrap().abs() < 1e-12);
        assert!((f.evaluate(&[-1.0; 4]).unwrap() - 4.0).abs() < 1e-12);
        let z = [0.3, -1.7, 2.0, 0.9];
        let direct: f64 = z.iter().map(|&v| h(v)).sum();
        assert!((f.evaluate(&z).unwrap() - direct).abs() < 1e-10);
        let ranks = f.ranks();
        assert!(ranks.iter().all(|&r| r == 2));
    }

    #[test]
    fn separable_terminal_of_ones() {
        let tree = site_tree(3).unwrap();
        let one = |_: f64| 1.0;
        let hs: Vec<&dyn Fn(f64) -> f64> = vec![&one; 3];
        let f = terminal_separable_to_fht(&hs, &box_bases(3, 4), &tree).unwrap();
        assert!((f.evaluate(&[0.1, 1.9, -2.0]).unwrap() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn gaussian_terminal_matches_product() {
        let d = 4;
        let tree = site_tree(d).unwrap();
        let g = |y: f64| (-2.0 / d as f64 * (y - 1.0) * (y - 1.0)).exp();
        let hs: Vec<&dyn Fn(f64) -> f64> = vec![&g; d];
        let f = terminal_separable_to_fht(&hs, &box_bases(d, 21), &tree).unwrap();
        for k in 0..10 {
            let z: Vec<f64> = (0..d).map(|j| -2.0 + 4.0 * (((3 * k + 5 * j) % 13) as f64) / 12.0).collect();
            let direct: f64 = z.iter().map(|&v| g(v)).product();
            assert!((f.evaluate(&z).unwrap() - direct).abs() < 1e-6);
        }
    }

    fn uniform_operator(d: usize, n: usize) -> MarkovOperator {
        let joint = uniform_density(BipartitionTree::interlaced(d).unwrap(), box_bases(2 * d, n)).unwrap();
        MarkovOperator::new(joint, vec![(-2.0, 2.0); d], 0.0, 1.0, (0..d).collect()).unwrap()
    }

    #[test]
    fn uniform_joint_solves() {
        // g = 1/Vol² everywhere: u(x) = ∫ f(y) dy / Vol.
        for d in [1usize, 2, 3, 4] {
            let op = uniform_operator(d, 3);
            let h = |y: f64| 1.0 + y * y;
            let hs: Vec<&dyn Fn(f64) -> f64> = vec![&h; d];
            let f = op.terminal_sum(&hs).unwrap();
            let u = solve_backward_fht(&op, &f).unwrap();
            let mean_f = d as f64 * (1.0 + 4.0 / 3.0);
            let x = vec![0.3; d];
            assert!((u.evaluate(&x).unwrap() - mean_f).abs() < 1e-10, "d={d}");
            let ev = normalized_solution(&op, &f).unwrap();
            assert!((ev.value(&x).unwrap() - mean_f).abs() < 1e-10);
            let q = uniform_density(op.site_tree().clone(), op.x_bases()).unwrap();
            let p = solve_forward_fht(&op, &q).unwrap();
            assert!((p.integrate_all() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_terminal_is_rejected() {
        let op = uniform_operator(2, 3);
        let f = uniform_density(site_tree(2).unwrap(), box_bases(2, 4)).unwrap();
        assert!(solve_backward_fht(&op, &f).is_err());
    }

    #[test]
    fn interpolation_endpoints() {
        struct Const(f64);
        impl Evaluator for Const {
            fn value(&self, _: &[f64]) -> Result<f64> {
                Ok(self.0)
            }
        }
        let (a, b) = (Const(1.0), Const(3.0));
        let x = [0.0];
        assert_eq!(interpolate_in_time(&a, &b, 0.0, 1.0, 0.0).unwrap().value(&x).unwrap(), 1.0);
        assert_eq!(interpolate_in_time(&a, &b, 0.0, 1.0, 0.5).unwrap().value(&x).unwrap(), 2.0);
        assert!(interpolate_in_time(&a, &b, 0.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn equal_terminals_give_half() {
        let op = uniform_operator(2, 3);
        let h = |y: f64| 2.0 + y;
        let hs: Vec<&dyn Fn(f64) -> f64> = vec![&h; 2];
        let g = op.terminal_separable(&hs).unwrap();
        assert!((propensity_ratio(&op, &g, &g, &[0.4, -1.0]).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn clipping_and_dropping() {
        let d = 1;
        let times = vec![0.0, 1.0];
        let mut data = Vec::new();
        let ys = [0.0, 2.3, -2.2, 1.0, 0.5, 0.1, 0.2, -0.3, 0.7, 0.0];
        for y in ys {
            data.extend_from_slice(&[0.0, y]);
        }
        let batch = TrajectoryBatch::new(d, times.clone(), ys.len(), data).unwrap();
        let dom = vec![(-2.0, 2.0)];
        let (s, rep) = joint_samples(&batch, 1, &dom, &dom, &[0]).unwrap();
        assert_eq!(rep.clipped, 2);
        assert_eq!(rep.dropped, 0);
        assert_eq!(s.row(1)[1], 2.0 - CLIP_INSET);
        assert_eq!(s.row(2)[1], -2.0 + CLIP_INSET);

        let mut data = Vec::new();
        for y in [3.0, 0.0, 0.0] {
            data.extend_from_slice(&[0.0, y]);
        }
        let batch = TrajectoryBatch::new(d, times, 3, data).unwrap();
        assert!(matches!(
            joint_samples(&batch, 1, &dom, &dom, &[0]),
            Err(Error::DataQuality { dropped: 1, total: 3 })
        ));
    }
}
