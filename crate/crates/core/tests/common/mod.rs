//! Shared oracles for integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use markov_fht::basis::{gauss_legendre, IntervalBasis};
use markov_fht::fht::{ConditionalSampler, Fht, DEFAULT_GRID_SIZE};
use markov_fht::linalg::DenseTensor;
use markov_fht::operator::{normalized_solution, solve_backward_fht, solve_forward_fht, Evaluator, MarkovOperator};
use markov_fht::sketch::{build_plan, solve_cores, MomentEstimator, PlanParams, SampleSet};
use markov_fht::tree::BipartitionTree;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_fht(tree: BipartitionTree, bases: Vec<IntervalBasis>, rank: usize, rng: &mut ChaCha8Rng) -> Fht {
    let cores = tree
        .nodes()
        .iter()
        .map(|node| {
            let shape = match node.children {
                None => {
                    let v = node.vars().start;
                    let rp = if node.parent.is_none() { 1 } else { rank };
                    vec![bases[v].size(), rp]
                }
                Some(_) if node.parent.is_none() => vec![rank, rank],
                Some(_) => vec![rank, rank, rank],
            };
            DenseTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
        })
        .collect();
    Fht::new(tree, bases, cores).unwrap()
}

/// Coefficient array of node `id`: rows over its variables (row-major,
/// first variable slowest), columns over the parent bond.
fn dense_node(f: &Fht, id: usize) -> (Vec<f64>, usize, usize) {
    let node = f.tree().node(id);
    let core = f.core(id);
    match node.children {
        None => {
            let s = core.shape();
            (core.data().to_vec(), s[0], s[1])
        }
        Some((l, r)) => {
            let (a, ra, rl) = dense_node(f, l);
            let (b, rb, rr) = dense_node(f, r);
            let s = core.shape();
            let rp = if node.parent.is_none() { 1 } else { s[2] };
            let mut out = vec![0.0; ra * rb * rp];
            for i in 0..ra {
                for j in 0..rb {
                    for p in 0..rp {
                        let mut acc = 0.0;
                        for x in 0..rl {
                            for y in 0..rr {
                                acc += a[i * rl + x] * b[j * rr + y] * core.data()[(x * rr + y) * rp + p];
                            }
                        }
                        out[(i * rb + j) * rp + p] = acc;
                    }
                }
            }
            (out, ra * rb, rp)
        }
    }
}

/// Full `n^d` coefficient array.
pub fn dense(f: &Fht) -> Vec<f64> {
    dense_node(f, f.tree().root()).0
}

pub fn multi_index(mut k: usize, sizes: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; sizes.len()];
    for j in (0..sizes.len()).rev() {
        idx[j] = k % sizes[j];
        k /= sizes[j];
    }
    idx
}

/// `∫ψ_k` over the interval: only the constant mode has mass.
fn leg_integral(b: &IntervalBasis, k: usize) -> f64 {
    if k == 0 {
        b.width().sqrt()
    } else {
        0.0
    }
}

/// Dense contraction with the listed variables evaluated and the rest
/// integrated.
pub fn dense_query(f: &Fht, coef: &[f64], point: &BTreeMap<usize, f64>) -> f64 {
    let sizes: Vec<usize> = f.bases().iter().map(|b| b.size()).collect();
    let legs: Vec<Vec<f64>> = f
        .bases()
        .iter()
        .enumerate()
        .map(|(v, b)| match point.get(&v) {
            Some(&z) => b.eval_vector(z).unwrap(),
            None => (0..b.size()).map(|k| leg_integral(b, k)).collect(),
        })
        .collect();
    coef.iter()
        .enumerate()
        .map(|(k, c)| {
            let idx = multi_index(k, &sizes);
            c * idx.iter().enumerate().map(|(v, &i)| legs[v][i]).product::<f64>()
        })
        .sum()
}

/// `|a − b|/(1 + |b|)`.
pub fn discrepancy(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

pub fn tree_for(d: usize) -> BipartitionTree {
    if d == 1 {
        BipartitionTree::single()
    } else {
        BipartitionTree::balanced(d).unwrap()
    }
}

/// Largest discrepancy of evaluate, integrate_all, every marginal and every
/// proper conditional of a random FHT against its dense array.
pub fn fht_query_error(d: usize, n: usize, rank: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bases: Vec<IntervalBasis> = (0..d)
        .map(|j| IntervalBasis::new(-1.0 - 0.5 * j as f64, 1.0 + 0.25 * j as f64, n).unwrap())
        .collect();
    let f = random_fht(tree_for(d), bases.clone(), rank, &mut rng);
    let coef = dense(&f);
    let pt: Vec<f64> = bases.iter().map(|b| rng.random_range(b.lower()..=b.upper())).collect();
    let all: BTreeMap<usize, f64> = pt.iter().copied().enumerate().collect();
    let mut worst = discrepancy(f.evaluate(&pt).unwrap(), dense_query(&f, &coef, &all));
    worst = worst.max(discrepancy(f.integrate_all(), dense_query(&f, &coef, &BTreeMap::new())));
    for mask in 1u32..(1 << d) {
        let keep: Vec<usize> = (0..d).filter(|v| mask >> v & 1 == 1).collect();
        let m = f.marginalize(&keep).unwrap();
        let sub: Vec<f64> = keep.iter().map(|&v| pt[v]).collect();
        let want: BTreeMap<usize, f64> = keep.iter().map(|&v| (v, pt[v])).collect();
        worst = worst.max(discrepancy(m.evaluate(&sub).unwrap(), dense_query(&f, &coef, &want)));
    }
    for mask in 1u32..(1 << d) - 1 {
        let fixed: BTreeMap<usize, f64> = (0..d).filter(|v| mask >> v & 1 == 1).map(|v| (v, pt[v])).collect();
        let c = f.condition_on(&fixed).unwrap();
        let rest: Vec<f64> = (0..d).filter(|v| !fixed.contains_key(v)).map(|v| pt[v]).collect();
        worst = worst.max(discrepancy(c.evaluate(&rest).unwrap(), dense_query(&f, &coef, &all)));
    }
    worst
}

/// Tensor-product Gauss–Legendre rule on a box.
pub fn box_rule(domain: &[(f64, f64)], nodes: usize) -> Vec<(Vec<f64>, f64)> {
    let (gx, gw) = gauss_legendre(nodes).unwrap();
    let total = nodes.pow(domain.len() as u32);
    (0..total)
        .map(|k| {
            let idx = multi_index(k, &vec![nodes; domain.len()]);
            let mut z = Vec::with_capacity(domain.len());
            let mut w = 1.0;
            for (j, &(a, b)) in domain.iter().enumerate() {
                z.push(0.5 * (a + b) + 0.5 * (b - a) * gx[idx[j]]);
                w *= 0.5 * (b - a) * gw[idx[j]];
            }
            (z, w)
        })
        .collect()
}

fn interlace(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).flat_map(|(&a, &b)| [a, b]).collect()
}

/// Largest discrepancy of the backward, forward and normalized solves of a
/// random joint density on `d` sites against tensor quadrature.
pub fn joint_solve_error(d: usize, n: usize, rank: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domain: Vec<(f64, f64)> = (0..d).map(|j| (-2.0 + 0.1 * j as f64, 2.0)).collect();
    let y_domain: Vec<(f64, f64)> = (0..d).map(|j| (-3.0, 2.5 - 0.2 * j as f64)).collect();
    let mut bases = Vec::new();
    for j in 0..d {
        bases.push(IntervalBasis::new(domain[j].0, domain[j].1, n).unwrap());
        bases.push(IntervalBasis::new(y_domain[j].0, y_domain[j].1, n).unwrap());
    }
    let joint = random_fht(BipartitionTree::interlaced(d).unwrap(), bases, rank, &mut rng);
    let vol: f64 = domain.iter().map(|(a, b)| b - a).product();
    let op = MarkovOperator::new(joint.clone(), domain.clone(), 0.0, 1.0, (0..d).collect()).unwrap();

    let h = |y: f64| 0.5 + y * y - 0.3 * y;
    let hs: Vec<&dyn Fn(f64) -> f64> = vec![&h; d];
    let f = op.terminal_separable(&hs).unwrap();
    let q = op.initial_separable(&hs).unwrap();
    let u = solve_backward_fht(&op, &f).unwrap();
    let p = solve_forward_fht(&op, &q).unwrap();
    let norm = normalized_solution(&op, &f).unwrap();

    // Integrands are polynomials of degree ≤ 2n − 2 per variable.
    let ys = box_rule(&y_domain, n + 1);
    let xs = box_rule(&domain, n + 1);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let x: Vec<f64> = domain.iter().map(|&(a, b)| rng.random_range(a..b)).collect();
        let (mut num, mut den) = (0.0, 0.0);
        for (y, w) in &ys {
            let g = joint.evaluate(&interlace(&x, y)).unwrap();
            num += w * g * f.evaluate(y).unwrap();
            den += w * g;
        }
        worst = worst.max(discrepancy(u.evaluate(&x).unwrap(), vol * num));
        let (pn, pd) = norm.parts(&x).unwrap();
        worst = worst.max(discrepancy(pn, num)).max(discrepancy(pd, den));
        match norm.value(&x) {
            Ok(v) if pd > 0.0 => worst = worst.max(discrepancy(v * pd, pn)),
            Err(_) if pd <= 0.0 => {}
            _ => return f64::INFINITY,
        }

        let y: Vec<f64> = y_domain.iter().map(|&(a, b)| rng.random_range(a..b)).collect();
        let mut fwd = 0.0;
        for (x, w) in &xs {
            fwd += w * joint.evaluate(&interlace(x, &y)).unwrap() * q.evaluate(x).unwrap();
        }
        worst = worst.max(discrepancy(p.evaluate(&y).unwrap(), vol * fwd));
    }
    worst
}

/// Positive rank-`r` density on `[−1, 1]^d` with three modes per variable.
/// Leaf functions are `ψ_0` plus perturbations small enough to stay
/// positive; internal cores are positive.
pub fn synthetic_density(d: usize, r: usize, seed: u64) -> Fht {
    let tree = BipartitionTree::balanced(d).unwrap();
    let bases = vec![IntervalBasis::new(-1.0, 1.0, 3).unwrap(); d];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cores: Vec<DenseTensor> = tree
        .nodes()
        .iter()
        .map(|node| match node.children {
            None => DenseTensor::from_fn(vec![3, r], |i| {
                if i[0] == 0 {
                    1.0
                } else {
                    0.15 * rng.random_range(-1.0..1.0)
                }
            }),
            Some(_) if node.parent.is_none() => DenseTensor::from_fn(vec![r, r], |_| rng.random_range(0.1..1.0)),
            Some(_) => DenseTensor::from_fn(vec![r, r, r], |_| rng.random_range(0.1..1.0)),
        })
        .collect();
    let g = Fht::new(tree, bases, cores).unwrap();
    let mass = g.integrate_all();
    g.scaled(1.0 / mass)
}

fn plan_params(r: usize, rel_tol: f64) -> PlanParams {
    PlanParams {
        r_max: r,
        oversample: markov_fht::sketch::DEFAULT_OVERSAMPLE,
        rel_tol,
        interlaced: false,
    }
}

/// Recovers `g` from exact moments (3-point Gauss rule per variable, exact
/// for the degree-≤4 integrands) and returns the largest relative
/// pointwise error at 50 random points.
pub fn exact_recovery_error(g: &Fht, r: usize, seed: u64) -> f64 {
    let d = g.num_vars();
    let (gx, gw) = gauss_legendre(3).unwrap();
    let total = 3usize.pow(d as u32);
    let mut values = Vec::with_capacity(total * d);
    let mut weights = Vec::with_capacity(total);
    for k in 0..total {
        let idx = multi_index(k, &vec![3; d]);
        let z: Vec<f64> = idx.iter().map(|&i| gx[i]).collect();
        let w: f64 = idx.iter().map(|&i| gw[i]).product();
        weights.push(w * g.evaluate(&z).unwrap());
        values.extend_from_slice(&z);
    }
    let samples = SampleSet::weighted(d, values, weights).unwrap();
    let plan = build_plan(g.tree(), g.bases(), &plan_params(r, markov_fht::linalg::LSTSQ_RCOND)).unwrap();
    let est = solve_cores(&samples, g.tree(), g.bases(), &plan, &MomentEstimator::without_truncation()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..50)
        .map(|_| {
            let z: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = g.evaluate(&z).unwrap();
            (est.evaluate(&z).unwrap() - a).abs() / a.abs()
        })
        .fold(0.0, f64::max)
}

/// Relative `L²` error of the estimate from `count` samples of `g`.
pub fn sampled_recovery_error(g: &Fht, r: usize, count: usize, seed: u64) -> f64 {
    let sampler = ConditionalSampler::new(g, DEFAULT_GRID_SIZE).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = sampler.sample_many(count, &mut rng).unwrap();
    let samples = SampleSet::from_rows(&rows).unwrap();
    let plan = build_plan(g.tree(), g.bases(), &plan_params(r, markov_fht::sketch::DEFAULT_REL_TOL)).unwrap();
    let est = solve_cores(&samples, g.tree(), g.bases(), &plan, &MomentEstimator::default()).unwrap();
    est.relative_l2_error(g).unwrap()
}
