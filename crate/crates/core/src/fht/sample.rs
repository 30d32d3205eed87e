//! Autoregressive sampling from an FHT density.
//!
//! Variables are drawn in leaf order. For variable `j` the remaining
//! conditional is `p(z_j) ∝ ∫ g(z_<j, z_j, z_>j) dz_>j`, obtained by
//! contracting sampled legs with evaluation vectors, later legs with
//! integration vectors, and pushing messages down to leaf `j`. The
//! univariate density is tabulated on a uniform grid, negative values are
//! clipped, and a point is drawn by inverting the piecewise-linear CDF.

use rand::Rng;

use super::Fht;
use crate::error::{Error, Result};

pub const DEFAULT_GRID_SIZE: usize = 257;
pub const MIN_GRID_SIZE: usize = 64;

/// Sampler with per-variable basis tables precomputed on the grid.
#[derive(Debug, Clone)]
pub struct ConditionalSampler<'a> {
    f: &'a Fht,
    grid_size: usize,
    grids: Vec<Vec<f64>>,
    tables: Vec<Vec<f64>>,
    integration: Vec<Vec<f64>>,
}

impl<'a> ConditionalSampler<'a> {
    pub fn new(f: &'a Fht, grid_size: usize) -> Result<Self> {
        if grid_size < MIN_GRID_SIZE {
            return Err(Error::InvalidArgument(format!(
                "grid_size {grid_size} below the minimum {MIN_GRID_SIZE}"
            )));
        }
        let mut grids = Vec::with_capacity(f.num_vars());
        let mut tables = Vec::with_capacity(f.num_vars());
        for b in f.bases() {
            let h = b.width() / (grid_size - 1) as f64;
            let grid: Vec<f64> = (0..grid_size)
                .map(|k| if k + 1 == grid_size { b.upper() } else { b.lower() + h * k as f64 })
                .collect();
            let n = b.size();
            let mut table = vec![0.0; grid_size * n];
            for (k, &z) in grid.iter().enumerate() {
                b.eval_unchecked(z, &mut table[k * n..(k + 1) * n]);
            }
            grids.push(grid);
            tables.push(table);
        }
        let integration = f.bases().iter().map(|b| b.integration_vector()).collect();
        Ok(ConditionalSampler {
            f,
            grid_size,
            grids,
            tables,
            integration,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let d = self.f.num_vars();
        let mut legs = self.integration.clone();
        let mut z = Vec::with_capacity(d);
        for var in 0..d {
            let coef = self.leaf_coefficients(&legs, var);
            let value = self.draw(var, &coef, rng)?;
            legs[var] = self.f.bases()[var].eval_vector(value)?;
            z.push(value);
        }
        Ok(z)
    }

    pub fn sample_many<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        (0..count).map(|_| self.sample(rng)).collect()
    }

    /// Coefficients `c` with `p(z_var) = Σ_i c_i ψ_i(z_var)` given the
    /// current legs of all other variables.
    fn leaf_coefficients(&self, legs: &[Vec<f64>], var: usize) -> Vec<f64> {
        let f = self.f;
        let tree = f.tree();
        let leaf = tree.leaf_of_var(var);
        let ups = f.up_messages(|v| &legs[v]);
        let mut path = vec![leaf];
        while let Some(p) = tree.node(*path.last().expect("nonempty")).parent {
            path.push(p);
        }
        path.reverse();
        let mut down = vec![1.0];
        for w in path.windows(2) {
            let (parent, child) = (w[0], w[1]);
            let node = tree.node(parent);
            let (l, r) = node.children.expect("path goes through internal nodes");
            let core = f.core(parent);
            let s = core.shape();
            let (rl, rr) = (s[0], s[1]);
            let rp = if node.parent.is_none() { 1 } else { s[2] };
            let data = core.data();
            let mut next = if child == l { vec![0.0; rl] } else { vec![0.0; rr] };
            for a in 0..rl {
                for b in 0..rr {
                    let base = (a * rr + b) * rp;
                    let t: f64 = data[base..base + rp].iter().zip(&down).map(|(c, d)| c * d).sum();
                    if child == l {
                        next[a] += t * ups[r][b];
                    } else {
                        next[b] += t * ups[l][a];
                    }
                }
            }
            down = next;
        }
        let core = f.core(leaf);
        let (n, rp) = (core.shape()[0], core.shape()[1]);
        (0..n)
            .map(|i| core.data()[i * rp..(i + 1) * rp].iter().zip(&down).map(|(c, d)| c * d).sum())
            .collect()
    }

    fn draw<R: Rng + ?Sized>(&self, var: usize, coef: &[f64], rng: &mut R) -> Result<f64> {
        let n = coef.len();
        let grid = &self.grids[var];
        let table = &self.tables[var];
        let density: Vec<f64> = (0..self.grid_size)
            .map(|k| {
                let v: f64 = table[k * n..(k + 1) * n].iter().zip(coef).map(|(p, c)| p * c).sum();
                v.max(0.0)
            })
            .collect();
        let mut cdf = Vec::with_capacity(self.grid_size);
        cdf.push(0.0);
        for k in 1..self.grid_size {
            let h = grid[k] - grid[k - 1];
            cdf.push(cdf[k - 1] + 0.5 * h * (density[k] + density[k - 1]));
        }
        let mass = cdf[self.grid_size - 1];
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::SamplingFailure { var, mass });
        }
        let u = rng.random::<f64>() * mass;
        let k = cdf.partition_point(|&c| c <= u).clamp(1, self.grid_size - 1);
        let (c0, c1) = (cdf[k - 1], cdf[k]);
        let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        Ok(grid[k - 1] + t * (grid[k] - grid[k - 1]))
    }
}

/// Draws one sample; see [`ConditionalSampler`] for repeated draws.
pub fn sample_autoregressive<R: Rng + ?Sized>(f: &Fht, rng: &mut R, grid_size: usize) -> Result<Vec<f64>> {
    ConditionalSampler::new(f, grid_size)?.sample(rng)
}
