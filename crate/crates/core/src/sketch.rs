//! Hierarchical sketching density estimation.
//!
//! Every non-root node `a` gets two lists of sketch functions, one on its
//! own variables and one on the complement. Sample moments of products of
//! sketches give the sketched unfoldings `M_a`, whose truncated SVD fixes
//! a frame for each branch. Cores then follow from small least-squares
//! problems in those frames.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::IntervalBasis;
use crate::error::{shape_err, Error, Result};
use crate::fht::Fht;
use crate::linalg::{contract, kron, lstsq, truncated_svd, DenseTensor};
use crate::tree::{kind_of_position, BipartitionTree, VarKind};
use nalgebra::DMatrix;

/// Rows per chunk in moment estimation. Partial sums are reduced in chunk
/// order, so results do not depend on the thread count.
const CHUNK: usize = 2048;

pub const DEFAULT_OVERSAMPLE: usize = 5;
/// Relative singular-value cutoff for sketch SVDs. Sampled moments carry
/// noise well above 1e-10 of σ_1, and keeping those directions lets Σ⁺
/// amplify them into the cores.
pub const DEFAULT_REL_TOL: f64 = 3e-3;
pub const DEFAULT_TRUNCATION_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SketchFunction {
    /// `∏_{j∈support} ψ_{degrees[j]}(z_j)`; an empty support is the constant 1.
    LegendreMonomial { support: Vec<usize>, degrees: Vec<usize> },
    /// `((1/|h|) Σ_{j∈h} z_j)^power` on raw coordinates.
    ClusterMean { cluster: Vec<usize>, power: u32 },
}

impl SketchFunction {
    pub fn constant() -> Self {
        SketchFunction::LegendreMonomial {
            support: Vec::new(),
            degrees: Vec::new(),
        }
    }

    pub fn legendre(var: usize, degree: usize) -> Self {
        SketchFunction::LegendreMonomial {
            support: vec![var],
            degrees: vec![degree],
        }
    }

    pub fn cluster(cluster: Vec<usize>, power: u32) -> Result<Self> {
        if cluster.is_empty() {
            return Err(Error::InvalidArgument("cluster must be nonempty".into()));
        }
        Ok(SketchFunction::ClusterMean { cluster, power })
    }

    pub fn degree(&self) -> usize {
        match self {
            SketchFunction::LegendreMonomial { degrees, .. } => degrees.iter().sum(),
            SketchFunction::ClusterMean { power, .. } => *power as usize,
        }
    }

    pub fn vars(&self) -> &[usize] {
        match self {
            SketchFunction::LegendreMonomial { support, .. } => support,
            SketchFunction::ClusterMean { cluster, .. } => cluster,
        }
    }

    /// Evaluates on a full sample vector indexed by variable.
    pub fn eval(&self, bases: &[IntervalBasis], sample: &[f64]) -> Result<f64> {
        for &v in self.vars() {
            let z = *sample.get(v).ok_or_else(|| Error::Shape(format!("sample has no variable {v}")))?;
            if let SketchFunction::LegendreMonomial { .. } = self {
                let b = bases.get(v).ok_or_else(|| Error::Shape(format!("no basis for variable {v}")))?;
                if !b.contains(z) {
                    return Err(Error::OutOfDomain {
                        var: v,
                        value: z,
                        lower: b.lower(),
                        upper: b.upper(),
                    });
                }
            }
        }
        Ok(self.eval_unchecked(bases, sample))
    }

    fn eval_unchecked(&self, bases: &[IntervalBasis], sample: &[f64]) -> f64 {
        match self {
            SketchFunction::LegendreMonomial { support, degrees } => support
                .iter()
                .zip(degrees)
                .map(|(&v, &k)| bases[v].eval_one_unchecked(k, sample[v]))
                .product(),
            SketchFunction::ClusterMean { cluster, power } => {
                let mean = cluster.iter().map(|&v| sample[v]).sum::<f64>() / cluster.len() as f64;
                mean.powi(*power as i32)
            }
        }
    }

    fn key(&self) -> (u8, Vec<usize>, Vec<usize>) {
        match self {
            SketchFunction::LegendreMonomial { support, degrees } => {
                let mut pairs: Vec<(usize, usize)> = support
                    .iter()
                    .zip(degrees)
                    .filter(|(_, &k)| k > 0)
                    .map(|(&v, &k)| (v, k))
                    .collect();
                pairs.sort();
                (0, pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
            }
            SketchFunction::ClusterMean { cluster, power } => {
                let mut c = cluster.clone();
                c.sort();
                (1, c, vec![*power as usize])
            }
        }
    }
}

/// Sketch lists for one non-root node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSketch {
    pub node: usize,
    pub vars: Vec<usize>,
    pub branch: Vec<SketchFunction>,
    pub complement: Vec<SketchFunction>,
    /// How many entries each list is short of the target size.
    pub branch_shortfall: usize,
    pub complement_shortfall: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SketchPlan {
    pub r_max: usize,
    pub oversample: usize,
    pub rel_tol: f64,
    /// Indexed by tree node; the root has no entry.
    pub nodes: Vec<Option<NodeSketch>>,
}

impl SketchPlan {
    pub fn target_size(&self) -> usize {
        self.r_max + self.oversample
    }

    pub fn node(&self, id: usize) -> Result<&NodeSketch> {
        self.nodes
            .get(id)
            .and_then(|n| n.as_ref())
            .ok_or_else(|| Error::InvalidArgument(format!("plan has no sketch for node {id}")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Options for building a plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanParams {
    pub r_max: usize,
    pub oversample: usize,
    pub rel_tol: f64,
    /// Treat even positions as `x` and odd positions as `y` when forming
    /// clusters.
    pub interlaced: bool,
}

impl PlanParams {
    pub fn new(r_max: usize) -> Self {
        PlanParams {
            r_max,
            oversample: DEFAULT_OVERSAMPLE,
            rel_tol: DEFAULT_REL_TOL,
            interlaced: true,
        }
    }
}

/// Plan with the default rule; clusters split by `x`/`y` when the variable
/// count is even.
pub fn default_sketch_plan(
    tree: &BipartitionTree,
    bases: &[IntervalBasis],
    r_max: usize,
    oversample: usize,
) -> Result<SketchPlan> {
    build_plan(
        tree,
        bases,
        &PlanParams {
            r_max,
            oversample,
            rel_tol: DEFAULT_REL_TOL,
            interlaced: tree.num_vars().is_multiple_of(2),
        },
    )
}

pub fn build_plan(tree: &BipartitionTree, bases: &[IntervalBasis], params: &PlanParams) -> Result<SketchPlan> {
    if params.r_max == 0 {
        return Err(Error::InvalidArgument("r_max must be positive".into()));
    }
    if bases.len() != tree.num_vars() {
        return shape_err("one basis per variable required");
    }
    let target = params.r_max + params.oversample;
    let mut nodes = vec![None; tree.nodes().len()];
    for (id, node) in tree.nodes().iter().enumerate().skip(1) {
        let inside: Vec<usize> = node.vars().collect();
        let outside = tree.node_complement(id);
        let near_in = nearest_inside(node.start, node.end, tree.num_vars());
        let near_out = nearest_outside(tree, id, &outside);
        let (branch, bs) = sketch_set(&inside, &near_in, bases, target, params.interlaced);
        let (complement, cs) = sketch_set(&outside, &near_out, bases, target, params.interlaced);
        nodes[id] = Some(NodeSketch {
            node: id,
            vars: inside,
            branch,
            complement,
            branch_shortfall: bs,
            complement_shortfall: cs,
        });
    }
    Ok(SketchPlan {
        r_max: params.r_max,
        oversample: params.oversample,
        rel_tol: params.rel_tol,
        nodes,
    })
}

/// Variables of `[start, end)` ordered by distance to the outside.
fn nearest_inside(start: usize, end: usize, num_vars: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (start..end).collect();
    v.sort_by_key(|&j| {
        let left = if start > 0 { j - start } else { usize::MAX };
        let right = if end < num_vars { end - 1 - j } else { usize::MAX };
        (left.min(right), j)
    });
    v
}

/// Complement variables ordered by tree proximity to the node, then by
/// linear distance.
fn nearest_outside(tree: &BipartitionTree, id: usize, outside: &[usize]) -> Vec<usize> {
    let node = tree.node(id);
    let mut v = outside.to_vec();
    v.sort_by_key(|&j| {
        let dist = if j < node.start { node.start - j } else { j + 1 - node.end };
        (std::cmp::Reverse(tree.common_ancestor_level(j, id)), dist, j)
    });
    v
}

/// Builds one sketch list of at most `target` functions on `set`.
/// Returns the list and its shortfall.
fn sketch_set(
    set: &[usize],
    near: &[usize],
    bases: &[IntervalBasis],
    target: usize,
    interlaced: bool,
) -> (Vec<SketchFunction>, usize) {
    let q_of = |v: usize| bases[v].size() - 1;
    let mut core: Vec<(usize, u8, SketchFunction)> = vec![(0, 0, SketchFunction::constant())];

    let mut clusters: Vec<Vec<usize>> = vec![set.to_vec()];
    if interlaced {
        for kind in [VarKind::X, VarKind::Y] {
            clusters.push(set.iter().copied().filter(|&v| kind_of_position(v) == kind).collect());
        }
    }
    for h in clusters {
        if h.is_empty() {
            continue;
        }
        for p in [1u32, 2] {
            let s = if h.len() == 1 {
                SketchFunction::legendre(h[0], p as usize)
            } else {
                SketchFunction::ClusterMean { cluster: h.clone(), power: p }
            };
            core.push((p as usize, 1, s));
        }
    }
    let k1 = target.saturating_sub(5).div_ceil(2);
    for &v in near.iter().take(k1) {
        core.push((1, 2, SketchFunction::legendre(v, 1)));
    }
    for &v in near.iter().take(2) {
        core.push((2, 2, SketchFunction::legendre(v, 2)));
    }

    let mut padding: Vec<(usize, u8, SketchFunction)> = Vec::new();
    for &v in near.iter().skip(k1) {
        padding.push((1, 3, SketchFunction::legendre(v, 1)));
    }
    for &v in near {
        padding.push((2, 3, SketchFunction::legendre(v, 2)));
    }
    let pair_span = near.len().min(8);
    let mut pairs = Vec::new();
    for j in 1..pair_span {
        for i in 0..j {
            pairs.push((near[i], near[j]));
        }
    }
    for (a, b) in pairs {
        padding.push((
            2,
            3,
            SketchFunction::LegendreMonomial {
                support: vec![a, b],
                degrees: vec![1, 1],
            },
        ));
    }
    let max_q = set.iter().map(|&v| q_of(v)).max().unwrap_or(0);
    for k in 3..=max_q {
        for &v in near {
            padding.push((k, 3, SketchFunction::legendre(v, k)));
        }
    }

    let fits = |s: &SketchFunction| match s {
        SketchFunction::LegendreMonomial { support, degrees } => {
            support.iter().zip(degrees).all(|(&v, &k)| k <= q_of(v))
        }
        SketchFunction::ClusterMean { .. } => true,
    };
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(target);
    core.sort_by_key(|(deg, class, _)| (*deg, *class));
    padding.sort_by_key(|(deg, class, _)| (*deg, *class));
    for (_, _, s) in core.into_iter().chain(padding) {
        if out.len() == target {
            break;
        }
        if fits(&s) && seen.insert(s.key()) {
            out.push(s);
        }
    }
    let shortfall = target - out.len();
    (out, shortfall)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimator {
    pub truncation_enabled: bool,
    pub truncation_factor: f64,
}

impl Default for MomentEstimator {
    fn default() -> Self {
        MomentEstimator {
            truncation_enabled: true,
            truncation_factor: DEFAULT_TRUNCATION_FACTOR,
        }
    }
}

impl MomentEstimator {
    pub fn new(truncation_enabled: bool, truncation_factor: f64) -> Result<Self> {
        if !(truncation_factor > 0.0) {
            return Err(Error::InvalidArgument("truncation factor must be positive".into()));
        }
        Ok(MomentEstimator {
            truncation_enabled,
            truncation_factor,
        })
    }

    pub fn without_truncation() -> Self {
        MomentEstimator {
            truncation_enabled: false,
            truncation_factor: DEFAULT_TRUNCATION_FACTOR,
        }
    }
}

/// Sample matrix, row-major `N × num_vars`, with optional weights. Without
/// weights every row has weight `1/N` and moments are sample means. With
/// weights, moments are `Σ_i w_i s(w^(i))` and truncation never applies.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    num_vars: usize,
    values: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl SampleSet {
    pub fn new(num_vars: usize, values: Vec<f64>) -> Result<Self> {
        if num_vars == 0 || !values.len().is_multiple_of(num_vars) {
            return shape_err(format!(
                "{} values do not form rows of {num_vars}",
                values.len()
            ));
        }
        Ok(SampleSet {
            num_vars,
            values,
            weights: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return shape_err("ragged sample rows");
        }
        Self::new(d, rows.concat())
    }

    pub fn weighted(num_vars: usize, values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let mut s = Self::new(num_vars, values)?;
        if weights.len() != s.len() {
            return shape_err("one weight per sample required");
        }
        s.weights = Some(weights);
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.num_vars
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.num_vars..(i + 1) * self.num_vars]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// Reorders rows lexicographically by value so that estimates do not
    /// depend on the order in which samples arrive.
    pub fn canonicalized(&self) -> SampleSet {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            let (ra, rb) = (self.row(a), self.row(b));
            ra.iter()
                .zip(rb)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let values = idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        let weights = self
            .weights
            .as_ref()
            .map(|w| idx.iter().map(|&i| w[i]).collect());
        SampleSet {
            num_vars: self.num_vars,
            values,
            weights,
        }
    }

    pub fn check_domain(&self, bases: &[IntervalBasis]) -> Result<()> {
        if bases.len() != self.num_vars {
            return shape_err("one basis per sample coordinate required");
        }
        for row in self.values.chunks(self.num_vars) {
            for (v, (&z, b)) in row.iter().zip(bases).enumerate() {
                if !b.contains(z) {
                    return Err(Error::OutOfDomain {
                        var: v,
                        value: z,
                        lower: b.lower(),
                        upper: b.upper(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Moment tensor `E[∏_f S^(f)_{μ_f}(W)]` over two or three sketch lists.
pub fn estimate_moments(
    samples: &SampleSet,
    bases: &[IntervalBasis],
    lists: &[&[SketchFunction]],
    est: &MomentEstimator,
) -> Result<DenseTensor> {
    if !(2..=3).contains(&lists.len()) {
        return Err(Error::InvalidArgument("moments need two or three sketch lists".into()));
    }
    let n = samples.len();
    if n == 0 || (samples.weights.is_none() && n < 2) {
        return Err(Error::InvalidArgument("moment estimation needs at least 2 samples".into()));
    }
    let dims: Vec<usize> = lists.iter().map(|l| l.len()).collect();
    let head: usize = dims[..dims.len() - 1].iter().product();
    let last = *dims.last().expect("nonempty");
    let d = samples.num_vars;

    let partials: Vec<(Vec<f64>, Vec<f64>)> = samples
        .values
        .par_chunks(CHUNK * d)
        .enumerate()
        .map(|(c, chunk)| {
            let rows = chunk.len() / d;
            let w = samples.weights.as_ref().map(|w| &w[c * CHUNK..c * CHUNK + rows]);
            let mut evals: Vec<DMatrix<f64>> = lists
                .iter()
                .map(|l| {
                    DMatrix::from_fn(rows, l.len(), |i, k| l[k].eval_unchecked(bases, &chunk[i * d..(i + 1) * d]))
                })
                .collect();
            let tail = evals.pop().expect("nonempty");
            let mut lhs = DMatrix::from_fn(rows, head, |i, k| {
                let mut prod = 1.0;
                let mut rem = k;
                for (f, e) in evals.iter().enumerate().rev() {
                    let idx = rem % dims[f];
                    rem /= dims[f];
                    prod *= e[(i, idx)];
                }
                prod
            });
            if let Some(w) = w {
                for (i, &wi) in w.iter().enumerate() {
                    lhs.row_mut(i).scale_mut(wi);
                }
                (lhs.tr_mul(&tail).as_slice().to_vec(), Vec::new())
            } else {
                let first = lhs.tr_mul(&tail);
                let lsq = lhs.map(|v| v * v);
                let tsq = tail.map(|v| v * v);
                let second = lsq.tr_mul(&tsq);
                (first.as_slice().to_vec(), second.as_slice().to_vec())
            }
        })
        .collect();

    let mut s1 = vec![0.0; head * last];
    let mut s2 = vec![0.0; head * last];
    for (a, b) in &partials {
        for (x, y) in s1.iter_mut().zip(a) {
            *x += y;
        }
        for (x, y) in s2.iter_mut().zip(b) {
            *x += y;
        }
    }
    // s1 and s2 are column-major (head × last); transpose into row-major.
    let mut out = vec![0.0; head * last];
    let nf = n as f64;
    for h in 0..head {
        for t in 0..last {
            let cm = t * head + h;
            let value = if samples.weights.is_some() {
                s1[cm]
            } else {
                let mean = s1[cm] / nf;
                if est.truncation_enabled {
                    let var = ((s2[cm] - nf * mean * mean) / (nf - 1.0)).max(0.0);
                    if mean.abs() <= est.truncation_factor * var.sqrt() / nf.sqrt() {
                        0.0
                    } else {
                        mean
                    }
                } else {
                    mean
                }
            };
            out[h * last + t] = value;
        }
    }
    DenseTensor::new(dims, out)
}

pub fn estimate_moment(
    samples: &SampleSet,
    bases: &[IntervalBasis],
    left: &[SketchFunction],
    right: &[SketchFunction],
    est: &MomentEstimator,
) -> Result<DMatrix<f64>> {
    estimate_moments(samples, bases, &[left, right], est)?.to_matrix()
}

pub fn estimate_moment3(
    samples: &SampleSet,
    bases: &[IntervalBasis],
    left: &[SketchFunction],
    right: &[SketchFunction],
    ext: &[SketchFunction],
    est: &MomentEstimator,
) -> Result<DenseTensor> {
    estimate_moments(samples, bases, &[left, right, ext], est)
}

struct Frame {
    u: DMatrix<f64>,
    t: DMatrix<f64>,
}

/// Estimates an FHT density from samples.
pub fn solve_cores(
    samples: &SampleSet,
    tree: &BipartitionTree,
    bases: &[IntervalBasis],
    plan: &SketchPlan,
    est: &MomentEstimator,
) -> Result<Fht> {
    if samples.num_vars() != tree.num_vars() {
        return shape_err(format!(
            "samples have {} coordinates, tree has {} variables",
            samples.num_vars(),
            tree.num_vars()
        ));
    }
    if tree.num_vars() < 2 {
        return Err(Error::InvalidArgument("sketching needs at least two variables".into()));
    }
    if plan.nodes.len() != tree.nodes().len() {
        return shape_err("plan does not match the tree");
    }
    samples.check_domain(bases)?;
    let samples = samples.canonicalized();
    let nodes = tree.nodes();

    let frames: Vec<Option<Frame>> = (0..nodes.len())
        .map(|id| {
            if id == 0 {
                return Ok(None);
            }
            let ns = plan.node(id)?;
            let m = estimate_moment(&samples, bases, &ns.branch, &ns.complement, est)?;
            let svd = truncated_svd(&m, plan.r_max, plan.rel_tol)?;
            if !(svd.singular_values[0] > 0.0) {
                return Err(Error::DegenerateNode { node: id });
            }
            let inv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                svd.singular_values.len(),
                svd.singular_values.iter().map(|s| 1.0 / s),
            ));
            Ok(Some(Frame {
                t: &svd.v * inv,
                u: svd.u,
            }))
        })
        .collect::<Result<_>>()?;
    let frame = |id: usize| frames[id].as_ref().expect("non-root frame");

    let mut cores = Vec::with_capacity(nodes.len());
    for (id, node) in nodes.iter().enumerate() {
        let core = match node.children {
            None => {
                let ns = plan.node(id)?;
                let v = node.start;
                let psi: Vec<SketchFunction> = (0..bases[v].size()).map(|i| SketchFunction::legendre(v, i)).collect();
                let b = estimate_moment(&samples, bases, &psi, &ns.complement, est)?;
                DenseTensor::from_matrix(&(b * &frame(id).t))
            }
            Some((l, r)) => {
                let (fl, fr) = (frame(l), frame(r));
                let (sl, sr) = (&plan.node(l)?.branch, &plan.node(r)?.branch);
                let (b, rp) = if id == 0 {
                    let b2 = estimate_moment(&samples, bases, sl, sr, est)?;
                    (DMatrix::from_row_slice(b2.len(), 1, b2.transpose().as_slice()), 1)
                } else {
                    let ns = plan.node(id)?;
                    let t3 = estimate_moment3(&samples, bases, sl, sr, &ns.complement, est)?;
                    let tk = DenseTensor::from_matrix(&frame(id).t);
                    let bt = contract(&t3, &tk, &[(2, 0)])?;
                    let rk = tk.shape()[1];
                    let rows = sl.len() * sr.len();
                    (bt.reshape(vec![rows, rk])?.to_matrix()?, rk)
                };
                let a = kron(&DenseTensor::from_matrix(&fl.u), &DenseTensor::from_matrix(&fr.u))?.to_matrix()?;
                let x = lstsq(&a, &b)?;
                let (rl, rr) = (fl.u.ncols(), fr.u.ncols());
                let t = DenseTensor::from_matrix(&x);
                if id == 0 {
                    t.reshape(vec![rl, rr])?
                } else {
                    t.reshape(vec![rl, rr, rp])?
                }
            }
        };
        cores.push(core);
    }
    Fht::new(tree.clone(), bases.to_vec(), cores)
}
