//! Dense multi-way arrays plus the handful of matrix kernels the tensor
//! network code needs: contraction, Kronecker products, truncated SVD and
//! minimum-norm least squares.
//!
//! Tensors are row-major (last index fastest). Matrices are `nalgebra`
//! `DMatrix<f64>` values; conversions go through [`DenseTensor::to_matrix`]
//! and [`DenseTensor::from_matrix`].

use nalgebra::DMatrix;

use crate::error::{shape_err, Error, Result};

/// Default relative singular-value cutoff used by [`lstsq`].
pub const LSTSQ_RCOND: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return shape_err(format!("zero extent in shape {shape:?}"));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return shape_err(format!(
                "shape {shape:?} needs {len} entries, got {}",
                data.len()
            ));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        DenseTensor {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        DenseTensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = DenseTensor::zeros(shape);
        let mut idx = vec![0usize; t.shape.len()];
        for flat in 0..t.data.len() {
            t.data[flat] = f(&idx);
            increment(&mut idx, &t.shape);
        }
        t
    }

    pub fn identity(n: usize) -> Self {
        DenseTensor::from_fn(vec![n, n], |i| if i[0] == i[1] { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.shape)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flat_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let k = self.flat_index(idx);
        self.data[k] = value;
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &e)| acc * e + i)
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() || shape.contains(&0) {
            return shape_err(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn scale(mut self, alpha: f64) -> Self {
        self.data.iter_mut().for_each(|v| *v *= alpha);
        self
    }

    /// Reorders axes so that output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let order = self.order();
        let mut seen = vec![false; order];
        if perm.len() != order {
            return shape_err(format!("permutation {perm:?} for order {order}"));
        }
        for &p in perm {
            if p >= order || seen[p] {
                return shape_err(format!("invalid permutation {perm:?}"));
            }
            seen[p] = true;
        }
        let in_strides = self.strides();
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let gather: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut out = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; order];
        for _ in 0..self.data.len() {
            let src: usize = idx.iter().zip(&gather).map(|(i, s)| i * s).sum();
            out.push(self.data[src]);
            increment(&mut idx, &out_shape);
        }
        Ok(DenseTensor {
            shape: out_shape,
            data: out,
        })
    }

    /// Interprets an order-2 tensor as a matrix.
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.order() != 2 {
            return shape_err(format!("expected a matrix, got shape {:?}", self.shape));
        }
        Ok(DMatrix::from_row_slice(
            self.shape[0],
            self.shape[1],
            &self.data,
        ))
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let (r, c) = m.shape();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(m[(i, j)]);
            }
        }
        DenseTensor {
            shape: vec![r, c],
            data,
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn increment(idx: &mut [usize], shape: &[usize]) {
    for ax in (0..idx.len()).rev() {
        idx[ax] += 1;
        if idx[ax] < shape[ax] {
            return;
        }
        idx[ax] = 0;
    }
}

/// Row-major `m×k` times `k×n`.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Contracts `a` and `b` over the given `(axis_of_a, axis_of_b)` pairs.
///
/// The free axes of `a` come first in the result, followed by the free axes
/// of `b`, each in their original order.
pub fn contract(a: &DenseTensor, b: &DenseTensor, axes: &[(usize, usize)]) -> Result<DenseTensor> {
    let mut used_a = vec![false; a.order()];
    let mut used_b = vec![false; b.order()];
    for &(ia, ib) in axes {
        if ia >= a.order() || ib >= b.order() {
            return shape_err(format!(
                "axis pair ({ia}, {ib}) out of range for orders {} and {}",
                a.order(),
                b.order()
            ));
        }
        if used_a[ia] || used_b[ib] {
            return shape_err(format!("axis pair ({ia}, {ib}) repeats an axis"));
        }
        if a.shape[ia] != b.shape[ib] {
            return shape_err(format!(
                "axis pair ({ia}, {ib}): extent {} != {}",
                a.shape[ia], b.shape[ib]
            ));
        }
        used_a[ia] = true;
        used_b[ib] = true;
    }
    let free_a: Vec<usize> = (0..a.order()).filter(|&i| !used_a[i]).collect();
    let free_b: Vec<usize> = (0..b.order()).filter(|&i| !used_b[i]).collect();

    let mut perm_a = free_a.clone();
    perm_a.extend(axes.iter().map(|p| p.0));
    let mut perm_b: Vec<usize> = axes.iter().map(|p| p.1).collect();
    perm_b.extend(free_b.iter().copied());

    let pa = a.permute(&perm_a)?;
    let pb = b.permute(&perm_b)?;
    let m: usize = free_a.iter().map(|&i| a.shape[i]).product();
    let k: usize = axes.iter().map(|p| a.shape[p.0]).product();
    let n: usize = free_b.iter().map(|&i| b.shape[i]).product();

    let data = matmul(&pa.data, &pb.data, m, k, n);
    let mut shape: Vec<usize> = free_a.iter().map(|&i| a.shape[i]).collect();
    shape.extend(free_b.iter().map(|&i| b.shape[i]));
    Ok(DenseTensor { shape, data })
}

/// Axis-wise Kronecker product of two tensors of equal order.
///
/// Output axis `i` has extent `ext_a(i) * ext_b(i)`, and the composite index
/// `(α, μ)` maps to `α * ext_b(i) + μ`.
pub fn kron(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    if a.order() != b.order() {
        return shape_err(format!(
            "kron needs equal orders, got {} and {}",
            a.order(),
            b.order()
        ));
    }
    let shape: Vec<usize> = a.shape.iter().zip(&b.shape).map(|(x, y)| x * y).collect();
    let order = a.order();
    let mut out = DenseTensor::zeros(shape);
    let out_strides = out.strides();
    let mut ia = vec![0usize; order];
    for &av in &a.data {
        let mut ib = vec![0usize; order];
        for &bv in &b.data {
            let mut flat = 0;
            for ax in 0..order {
                flat += (ia[ax] * b.shape[ax] + ib[ax]) * out_strides[ax];
            }
            out.data[flat] = av * bv;
            increment(&mut ib, &b.shape);
        }
        increment(&mut ia, &a.shape);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    /// `m × r`, orthonormal columns.
    pub u: DMatrix<f64>,
    /// Nonincreasing, length `r`.
    pub singular_values: Vec<f64>,
    /// `n × r`, orthonormal columns.
    pub v: DMatrix<f64>,
}

impl TruncatedSvd {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, s) in self.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }
}

/// Thin SVD sorted by decreasing singular value.
fn sorted_svd(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("SVD of a matrix with non-finite entries".into()));
    }
    let fm = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let svd = fm
        .thin_svd()
        .map_err(|e| Error::InvalidArgument(format!("SVD did not converge: {e:?}")))?;
    let (u, v) = (svd.U(), svd.V());
    let s = svd.S().column_vector();
    let k = s.nrows();
    Ok((
        DMatrix::from_fn(m.nrows(), k, |i, j| u[(i, j)]),
        (0..k).map(|j| s[j].max(0.0)).collect(),
        DMatrix::from_fn(m.ncols(), k, |i, j| v[(i, j)]),
    ))
}

/// Keeps `min(r_max, #{σ_i > rel_tol·σ_1})` singular triples.
///
/// An all-zero matrix yields rank one with `σ_1 = 0` and unit coordinate
/// vectors.
pub fn truncated_svd(m: &DMatrix<f64>, r_max: usize, rel_tol: f64) -> Result<TruncatedSvd> {
    if r_max == 0 {
        return Err(Error::InvalidArgument("r_max must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&rel_tol) {
        return Err(Error::InvalidArgument(format!(
            "rel_tol {rel_tol} outside [0, 1)"
        )));
    }
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return shape_err("truncated_svd of an empty matrix");
    }
    let (u, s, v) = sorted_svd(m)?;
    if s[0] == 0.0 {
        let mut u1 = DMatrix::zeros(rows, 1);
        u1[(0, 0)] = 1.0;
        let mut v1 = DMatrix::zeros(cols, 1);
        v1[(0, 0)] = 1.0;
        return Ok(TruncatedSvd {
            u: u1,
            singular_values: vec![0.0],
            v: v1,
        });
    }
    let cut = rel_tol * s[0];
    let kept = s.iter().filter(|&&x| x > cut).count().min(r_max).max(1);
    Ok(TruncatedSvd {
        u: u.columns(0, kept).into_owned(),
        singular_values: s[..kept].to_vec(),
        v: v.columns(0, kept).into_owned(),
    })
}

/// Minimum-norm least-squares solution of `A X = B`.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    lstsq_rcond(a, b, LSTSQ_RCOND)
}

pub fn lstsq_rcond(a: &DMatrix<f64>, b: &DMatrix<f64>, rcond: f64) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return shape_err(format!(
            "lstsq: A has {} rows, B has {}",
            a.nrows(),
            b.nrows()
        ));
    }
    if a.nrows() == 0 || a.ncols() == 0 {
        return shape_err("lstsq with an empty matrix");
    }
    let (u, s, v) = sorted_svd(a)?;
    let mut x = DMatrix::zeros(a.ncols(), b.ncols());
    if s[0] == 0.0 {
        return Ok(x);
    }
    let cut = rcond * s[0];
    let utb = u.transpose() * b;
    for (j, &sj) in s.iter().enumerate() {
        if sj <= cut {
            break;
        }
        let row = utb.row(j) / sj;
        x += v.column(j) * row;
    }
    Ok(x)
}
