//! Functional hierarchical tensors.
//!
//! An [`Fht`] represents `g(z) = ⟨C, ⊗_j Ψ_j(z_j)⟩` where the coefficient
//! tensor `C` is stored as a binary tree of cores:
//!
//! * root: `r_left × r_right`
//! * internal node: `r_left × r_right × r_parent`
//! * leaf: `n × r_parent`, with `n` the basis size of its variable
//!
//! A one-variable function is stored as a single leaf of shape `n × 1`.

mod io;
mod sample;

pub use io::{deserialize, serialize, FHT_MAGIC};
pub use sample::{sample_autoregressive, ConditionalSampler, DEFAULT_GRID_SIZE};

use std::collections::BTreeMap;

use crate::basis::IntervalBasis;
use crate::error::{shape_err, Error, Result};
use crate::linalg::{contract, DenseTensor};
use crate::tree::BipartitionTree;

#[derive(Debug, Clone, PartialEq)]
pub struct Fht {
    tree: BipartitionTree,
    bases: Vec<IntervalBasis>,
    cores: Vec<DenseTensor>,
}

impl Fht {
    pub fn new(tree: BipartitionTree, bases: Vec<IntervalBasis>, cores: Vec<DenseTensor>) -> Result<Self> {
        if bases.len() != tree.num_vars() {
            return shape_err(format!(
                "{} bases for {} variables",
                bases.len(),
                tree.num_vars()
            ));
        }
        if cores.len() != tree.nodes().len() {
            return shape_err(format!(
                "{} cores for {} tree nodes",
                cores.len(),
                tree.nodes().len()
            ));
        }
        let f = Fht { tree, bases, cores };
        f.validate()?;
        Ok(f)
    }

    fn validate(&self) -> Result<()> {
        for (id, node) in self.tree.nodes().iter().enumerate() {
            let shape = self.cores[id].shape();
            let is_root = node.parent.is_none();
            match node.children {
                None => {
                    let n = self.bases[node.start].size();
                    if shape.len() != 2 || shape[0] != n {
                        return shape_err(format!(
                            "leaf node {id} (variable {}) has core shape {shape:?}, expected [{n}, r]",
                            node.start
                        ));
                    }
                    if is_root && shape[1] != 1 {
                        return shape_err(format!("single-leaf core must be [n, 1], got {shape:?}"));
                    }
                }
                Some((l, r)) => {
                    let want = if is_root { 2 } else { 3 };
                    if shape.len() != want {
                        return shape_err(format!(
                            "node {id} core has order {}, expected {want}",
                            shape.len()
                        ));
                    }
                    let rl = self.parent_rank(l);
                    let rr = self.parent_rank(r);
                    if shape[0] != rl || shape[1] != rr {
                        return shape_err(format!(
                            "node {id} core {shape:?} does not match child ranks ({rl}, {rr})"
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn tree(&self) -> &BipartitionTree {
        &self.tree
    }

    pub fn bases(&self) -> &[IntervalBasis] {
        &self.bases
    }

    pub fn cores(&self) -> &[DenseTensor] {
        &self.cores
    }

    pub fn core(&self, node: usize) -> &DenseTensor {
        &self.cores[node]
    }

    pub fn num_vars(&self) -> usize {
        self.tree.num_vars()
    }

    /// Extent of the edge from `node` to its parent (1 for the root).
    pub fn parent_rank(&self, node: usize) -> usize {
        if self.tree.node(node).parent.is_none() {
            return 1;
        }
        *self.cores[node].shape().last().expect("non-scalar core")
    }

    /// Edge extents for every non-root node, in preorder.
    pub fn ranks(&self) -> Vec<usize> {
        (1..self.tree.nodes().len()).map(|id| self.parent_rank(id)).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.cores.iter().map(|c| c.data().len()).sum()
    }

    /// Multiplies the function by `alpha` through the root core.
    pub fn scaled(mut self, alpha: f64) -> Self {
        let root = std::mem::replace(&mut self.cores[0], DenseTensor::scalar(0.0));
        self.cores[0] = root.scale(alpha);
        self
    }

    /// Contracts every physical leg with a coefficient vector and the tree
    /// bottom-up, returning the upward message of each node. The root's
    /// message has length one and holds the scalar result.
    pub(crate) fn up_messages<'a>(&self, leg: impl Fn(usize) -> &'a [f64]) -> Vec<Vec<f64>> {
        let nodes = self.tree.nodes();
        let mut msgs: Vec<Vec<f64>> = vec![Vec::new(); nodes.len()];
        for id in self.tree.postorder() {
            let node = &nodes[id];
            msgs[id] = match node.children {
                None => leaf_message(&self.cores[id], leg(node.start)),
                Some((l, r)) => internal_message(&self.cores[id], &msgs[l], &msgs[r], node.parent.is_none()),
            };
        }
        msgs
    }

    pub fn evaluate(&self, z: &[f64]) -> Result<f64> {
        let legs = self.eval_legs(z)?;
        Ok(self.up_messages(|v| &legs[v])[0][0])
    }

    pub(crate) fn eval_legs(&self, z: &[f64]) -> Result<Vec<Vec<f64>>> {
        if z.len() != self.num_vars() {
            return shape_err(format!(
                "point has {} coordinates, function has {} variables",
                z.len(),
                self.num_vars()
            ));
        }
        z.iter()
            .zip(&self.bases)
            .enumerate()
            .map(|(var, (&zj, basis))| eval_leg(basis, var, zj))
            .collect()
    }

    /// `∫ g` over the full box.
    pub fn integrate_all(&self) -> f64 {
        let legs: Vec<Vec<f64>> = self.bases.iter().map(|b| b.integration_vector()).collect();
        self.up_messages(|v| &legs[v])[0][0]
    }

    /// Integrates out every variable not in `keep`.
    pub fn marginalize(&self, keep: &[usize]) -> Result<Fht> {
        if keep.is_empty() {
            return Err(Error::InvalidArgument("marginalize needs at least one variable to keep".into()));
        }
        let mut legs = BTreeMap::new();
        for v in 0..self.num_vars() {
            if !keep.contains(&v) {
                legs.insert(v, self.bases[v].integration_vector());
            }
        }
        for &k in keep {
            if k >= self.num_vars() {
                return Err(Error::InvalidArgument(format!("variable {k} out of range")));
            }
        }
        match self.reduce(&legs)? {
            Reduced::Function(f, _) => Ok(f),
            Reduced::Scalar(_) => unreachable!("keep is nonempty"),
        }
    }

    /// Restricts the function to fixed values of some variables. The result
    /// is unnormalized and lives on the remaining variables in order.
    pub fn condition_on(&self, assignments: &BTreeMap<usize, f64>) -> Result<Fht> {
        let mut legs = BTreeMap::new();
        for (&var, &value) in assignments {
            if var >= self.num_vars() {
                return Err(Error::InvalidArgument(format!("variable {var} out of range")));
            }
            legs.insert(var, eval_leg(&self.bases[var], var, value)?);
        }
        match self.reduce(&legs)? {
            Reduced::Function(f, _) => Ok(f),
            Reduced::Scalar(_) => Err(Error::InvalidArgument(
                "every variable is assigned; use evaluate instead".into(),
            )),
        }
    }

    /// Contracts the listed variables' legs with the given vectors and
    /// absorbs the resulting chains, yielding a valid tree over the rest.
    pub fn reduce(&self, legs: &BTreeMap<usize, Vec<f64>>) -> Result<Reduced> {
        for (&v, vec) in legs {
            if vec.len() != self.bases[v].size() {
                return shape_err(format!(
                    "leg vector for variable {v} has length {}, basis has {}",
                    vec.len(),
                    self.bases[v].size()
                ));
            }
        }
        let part = self.reduce_node(0, legs)?;
        match part {
            Part::Vector(v) => Ok(Reduced::Scalar(v[0])),
            Part::Sub(mut sub) => {
                let top = sub.cores.remove(0);
                let top = if top.order() == 3 {
                    let s = top.shape().to_vec();
                    top.reshape(vec![s[0], s[1]])?
                } else {
                    top
                };
                sub.cores.insert(0, top);
                let tree = if sub.vars.len() == 1 {
                    BipartitionTree::single()
                } else {
                    BipartitionTree::from_left_sizes(sub.vars.len(), &sub.left_sizes)?
                };
                let bases = sub.vars.iter().map(|&v| self.bases[v]).collect();
                let f = Fht::new(tree, bases, sub.cores)?;
                Ok(Reduced::Function(f, sub.vars))
            }
        }
    }

    fn reduce_node(&self, id: usize, legs: &BTreeMap<usize, Vec<f64>>) -> Result<Part> {
        let node = self.tree.node(id);
        let core = &self.cores[id];
        match node.children {
            None => {
                if let Some(v) = legs.get(&node.start) {
                    Ok(Part::Vector(leaf_message(core, v)))
                } else {
                    Ok(Part::Sub(Sub {
                        vars: vec![node.start],
                        left_sizes: Vec::new(),
                        cores: vec![core.clone()],
                    }))
                }
            }
            Some((l, r)) => {
                let core3 = if node.parent.is_none() {
                    let s = core.shape();
                    core.clone().reshape(vec![s[0], s[1], 1])?
                } else {
                    core.clone()
                };
                let left = self.reduce_node(l, legs)?;
                let right = self.reduce_node(r, legs)?;
                Ok(match (left, right) {
                    (Part::Vector(a), Part::Vector(b)) => {
                        Part::Vector(internal_message(&core3, &a, &b, false))
                    }
                    (Part::Vector(a), Part::Sub(mut s)) => {
                        let va = DenseTensor::new(vec![a.len()], a)?;
                        let m = contract(&core3, &va, &[(0, 0)])?; // (rR, rP)
                        absorb_top(&mut s, &m)?;
                        Part::Sub(s)
                    }
                    (Part::Sub(mut s), Part::Vector(b)) => {
                        let vb = DenseTensor::new(vec![b.len()], b)?;
                        let m = contract(&core3, &vb, &[(1, 0)])?; // (rL, rP)
                        absorb_top(&mut s, &m)?;
                        Part::Sub(s)
                    }
                    (Part::Sub(a), Part::Sub(b)) => {
                        let mut left_sizes = vec![a.vars.len()];
                        left_sizes.extend(a.left_sizes);
                        left_sizes.extend(b.left_sizes);
                        let mut vars = a.vars;
                        vars.extend(b.vars);
                        let mut cores = vec![core3];
                        cores.extend(a.cores);
                        cores.extend(b.cores);
                        Part::Sub(Sub {
                            vars,
                            left_sizes,
                            cores,
                        })
                    }
                })
            }
        }
    }

    /// `L²` inner product of two functions on the same tree and bases.
    pub fn inner_product(&self, other: &Fht) -> Result<f64> {
        if self.tree != other.tree || self.bases != other.bases {
            return shape_err("inner product needs matching trees and bases");
        }
        let nodes = self.tree.nodes();
        let mut msgs: Vec<Option<DenseTensor>> = vec![None; nodes.len()];
        for id in self.tree.postorder() {
            let (a, b) = (&self.cores[id], &other.cores[id]);
            let m = match nodes[id].children {
                None => contract(a, b, &[(0, 0)])?,
                Some((l, r)) => {
                    let ml = msgs[l].take().expect("child computed");
                    let mr = msgs[r].take().expect("child computed");
                    // a(α,β,θ) · ml(α,μ) → (β,θ,μ); · mr(β,ν) → (θ,μ,ν); · b(μ,ν,ξ) → (θ,ξ)
                    let t = contract(a, &ml, &[(0, 0)])?;
                    let t = contract(&t, &mr, &[(0, 0)])?;
                    let last = t.order();
                    if nodes[id].parent.is_none() {
                        contract(&t, b, &[(0, 0), (1, 1)])?
                    } else {
                        contract(&t, b, &[(last - 2, 0), (last - 1, 1)])?
                    }
                }
            };
            msgs[id] = Some(m);
        }
        Ok(msgs[0].take().expect("root").data().iter().sum())
    }

    /// Relative `L²` distance `‖self − reference‖ / ‖reference‖`.
    pub fn relative_l2_error(&self, reference: &Fht) -> Result<f64> {
        let aa = self.inner_product(self)?;
        let bb = reference.inner_product(reference)?;
        let ab = self.inner_product(reference)?;
        Ok(((aa - 2.0 * ab + bb).max(0.0) / bb).sqrt())
    }
}

/// Outcome of [`Fht::reduce`].
#[derive(Debug, Clone)]
pub enum Reduced {
    /// A function of the listed original variables.
    Function(Fht, Vec<usize>),
    /// Every variable was contracted.
    Scalar(f64),
}

enum Part {
    Vector(Vec<f64>),
    Sub(Sub),
}

struct Sub {
    vars: Vec<usize>,
    left_sizes: Vec<usize>,
    cores: Vec<DenseTensor>,
}

fn absorb_top(s: &mut Sub, m: &DenseTensor) -> Result<()> {
    let top = &s.cores[0];
    let last = top.order() - 1;
    s.cores[0] = contract(top, m, &[(last, 0)])?;
    Ok(())
}

pub(crate) fn eval_leg(basis: &IntervalBasis, var: usize, z: f64) -> Result<Vec<f64>> {
    basis.eval_vector(z).map_err(|e| match e {
        Error::OutOfDomain {
            value, lower, upper, ..
        } => Error::OutOfDomain {
            var,
            value,
            lower,
            upper,
        },
        other => other,
    })
}

pub(crate) fn leaf_message(core: &DenseTensor, leg: &[f64]) -> Vec<f64> {
    let r = core.shape()[1];
    let data = core.data();
    let mut out = vec![0.0; r];
    for (i, &li) in leg.iter().enumerate() {
        if li == 0.0 {
            continue;
        }
        for (o, &c) in out.iter_mut().zip(&data[i * r..(i + 1) * r]) {
            *o += li * c;
        }
    }
    out
}

pub(crate) fn internal_message(core: &DenseTensor, left: &[f64], right: &[f64], is_root: bool) -> Vec<f64> {
    let s = core.shape();
    let (rl, rr) = (s[0], s[1]);
    let rp = if is_root { 1 } else { s[2] };
    let data = core.data();
    let mut out = vec![0.0; rp];
    for a in 0..rl {
        let la = left[a];
        if la == 0.0 {
            continue;
        }
        for b in 0..rr {
            let w = la * right[b];
            if w == 0.0 {
                continue;
            }
            let base = (a * rr + b) * rp;
            for (o, &c) in out.iter_mut().zip(&data[base..base + rp]) {
                *o += w * c;
            }
        }
    }
    out
}

/// Rank-one product `∏_j h_j(z_j)` from coefficient vectors.
pub fn rank_one(tree: BipartitionTree, bases: Vec<IntervalBasis>, coefs: &[Vec<f64>]) -> Result<Fht> {
    if coefs.len() != tree.num_vars() {
        return shape_err("one coefficient vector per variable required");
    }
    let cores = tree
        .nodes()
        .iter()
        .map(|node| match node.children {
            None => DenseTensor::new(vec![coefs[node.start].len(), 1], coefs[node.start].clone()),
            Some(_) if node.parent.is_none() => Ok(DenseTensor::scalar(1.0).reshape(vec![1, 1])?),
            Some(_) => Ok(DenseTensor::scalar(1.0).reshape(vec![1, 1, 1])?),
        })
        .collect::<Result<Vec<_>>>()?;
    Fht::new(tree, bases, cores)
}

/// Normalized uniform density on the product of the bases' intervals.
pub fn uniform_density(tree: BipartitionTree, bases: Vec<IntervalBasis>) -> Result<Fht> {
    let coefs: Vec<Vec<f64>> = bases
        .iter()
        .map(|b| {
            let mut v = vec![0.0; b.size()];
            v[0] = 1.0 / b.width().sqrt();
            v
        })
        .collect();
    rank_one(tree, bases, &coefs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_bases(d: usize, n: usize) -> Vec<IntervalBasis> {
        vec![IntervalBasis::new(-2.0, 2.0, n).unwrap(); d]
    }

    #[test]
    fn uniform_evaluates_and_integrates() {
        let f = uniform_density(BipartitionTree::balanced(4).unwrap(), box_bases(4, 3)).unwrap();
        for z in [[0.0, 1.0, -1.5, 2.0], [-2.0, 0.3, 0.3, 0.3]] {
            assert!((f.evaluate(&z).unwrap() - 0.25f64.powi(4)).abs() < 1e-15);
        }
        assert!((f.integrate_all() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn evaluate_names_the_bad_variable() {
        let f = uniform_density(BipartitionTree::balanced(3).unwrap(), box_bases(3, 2)).unwrap();
        match f.evaluate(&[0.0, 2.5, 0.0]) {
            Err(Error::OutOfDomain { var, .. }) => assert_eq!(var, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rank_one_product_matches_direct() {
        let bases = box_bases(5, 3);
        let hs: Vec<Box<dyn Fn(f64) -> f64>> = vec![
            Box::new(|y| 1.0 + y),
            Box::new(|y| y * y),
            Box::new(|y| 2.0 - 0.5 * y),
            Box::new(|y| 0.3 * y * y - y + 0.1),
            Box::new(|_| 1.5),
        ];
        let coefs: Vec<Vec<f64>> = hs.iter().zip(&bases).map(|(h, b)| b.project(h, 6).unwrap()).collect();
        let f = rank_one(BipartitionTree::balanced(5).unwrap(), bases, &coefs).unwrap();
        for k in 0..10 {
            let z: Vec<f64> = (0..5).map(|j| -2.0 + 4.0 * (((k * 7 + j * 3) % 11) as f64) / 10.0).collect();
            let direct: f64 = hs.iter().zip(&z).map(|(h, &zj)| h(zj)).product();
            assert!((f.evaluate(&z).unwrap() - direct).abs() < 1e-10);
        }
        let integrals: f64 = coefs.iter().map(|c| 2.0 * c[0]).product();
        assert!((f.integrate_all() - integrals).abs() < 1e-10);
    }

    #[test]
    fn marginals_and_conditionals_of_products() {
        let bases = box_bases(4, 3);
        let coefs = vec![
            bases[0].project(|y| 1.0 + 0.2 * y, 4).unwrap(),
            bases[1].project(|y| 2.0 + y * y, 4).unwrap(),
            bases[2].project(|_| 0.5, 4).unwrap(),
            bases[3].project(|y| 3.0 - y, 4).unwrap(),
        ];
        let f = rank_one(BipartitionTree::balanced(4).unwrap(), bases.clone(), &coefs).unwrap();

        let m = f.marginalize(&[1]).unwrap();
        assert_eq!(m.num_vars(), 1);
        let c: f64 = [0, 2, 3].iter().map(|&j| 2.0 * coefs[j][0]).product();
        assert!((m.evaluate(&[0.7]).unwrap() - c * (2.0 + 0.49)).abs() < 1e-10);

        let mut asg = BTreeMap::new();
        asg.insert(3, 1.0);
        let g = f.condition_on(&asg).unwrap();
        assert_eq!(g.num_vars(), 3);
        let z = [0.1, -0.4, 1.9];
        let direct = f.evaluate(&[0.1, -0.4, 1.9, 1.0]).unwrap();
        assert!((g.evaluate(&z).unwrap() - direct).abs() < 1e-12);
        assert!((direct - f.evaluate(&[0.1, -0.4, 1.9, 0.0]).unwrap() * 2.0 / 3.0).abs() < 1e-12);

        let u = uniform_density(BipartitionTree::balanced(4).unwrap(), bases).unwrap();
        let mu = u.marginalize(&[0, 3]).unwrap();
        assert!((mu.evaluate(&[1.0, -1.0]).unwrap() - 1.0 / 16.0).abs() < 1e-15);
        assert!((mu.integrate_all() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn conditioning_everything_is_rejected() {
        let f = uniform_density(BipartitionTree::balanced(2).unwrap(), box_bases(2, 2)).unwrap();
        let asg: BTreeMap<usize, f64> = [(0, 0.0), (1, 0.0)].into_iter().collect();
        assert!(f.condition_on(&asg).is_err());
        let bad: BTreeMap<usize, f64> = [(0, 3.0)].into_iter().collect();
        assert!(matches!(f.condition_on(&bad), Err(Error::OutOfDomain { var: 0, .. })));
    }

    #[test]
    fn scaling_is_linear() {
        let f = uniform_density(BipartitionTree::balanced(3).unwrap(), box_bases(3, 2)).unwrap();
        let g = f.clone().scaled(-2.5);
        let z = [0.3, 0.2, -1.0];
        assert!((g.evaluate(&z).unwrap() + 2.5 * f.evaluate(&z).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn inner_product_of_uniform() {
        let f = uniform_density(BipartitionTree::balanced(3).unwrap(), box_bases(3, 2)).unwrap();
        // ∫ (1/64)² over a box of volume 64.
        assert!((f.inner_product(&f).unwrap() - 1.0 / 64.0).abs() < 1e-15);
        assert!(f.relative_l2_error(&f).unwrap() < 1e-7);
    }

    #[test]
    fn shape_validation() {
        let tree = BipartitionTree::balanced(2).unwrap();
        let bad = vec![
            DenseTensor::zeros(vec![2, 2]),
            DenseTensor::zeros(vec![3, 2]),
            DenseTensor::zeros(vec![3, 3]),
        ];
        assert!(Fht::new(tree, box_bases(2, 3), bad).is_err());
    }
}
