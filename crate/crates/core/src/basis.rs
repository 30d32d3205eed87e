//! Orthonormal Legendre bases on an interval and Gauss–Legendre quadrature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The first `n` Legendre polynomials, affinely mapped to `[lower, upper]`
/// and scaled to be orthonormal in `L²([lower, upper])`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalBasis {
    lower: f64,
    upper: f64,
    size: usize,
}

impl IntervalBasis {
    pub fn new(lower: f64, upper: f64, size: usize) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::InvalidArgument(format!(
                "basis interval [{lower}, {upper}] is empty or not finite"
            )));
        }
        if size == 0 {
            return Err(Error::InvalidArgument("basis size must be at least 1".into()));
        }
        Ok(IntervalBasis { lower, upper, size })
    }

    /// Basis of maximal degree `q`, i.e. `q + 1` functions.
    pub fn with_degree(lower: f64, upper: f64, q: usize) -> Result<Self> {
        IntervalBasis::new(lower, upper, q + 1)
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, z: f64) -> bool {
        z >= self.lower && z <= self.upper
    }

    fn to_reference(self, z: f64) -> f64 {
        (2.0 * z - self.lower - self.upper) / self.width()
    }

    pub fn eval_vector(&self, z: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.size];
        self.eval_into(z, &mut out)?;
        Ok(out)
    }

    /// Writes `ψ_0(z), …, ψ_{len-1}(z)` into `out`; `out` may be shorter
    /// than the basis.
    pub fn eval_into(&self, z: f64, out: &mut [f64]) -> Result<()> {
        if !self.contains(z) {
            return Err(Error::OutOfDomain {
                var: 0,
                value: z,
                lower: self.lower,
                upper: self.upper,
            });
        }
        self.eval_unchecked(z, out);
        Ok(())
    }

    pub(crate) fn eval_unchecked(&self, z: f64, out: &mut [f64]) {
        let t = self.to_reference(z);
        legendre_orthonormal(t, 2.0 / self.width(), out);
    }

    /// Single basis function `ψ_k(z)` with no domain check.
    pub(crate) fn eval_one_unchecked(&self, k: usize, z: f64) -> f64 {
        let t = self.to_reference(z);
        let (mut p_prev, mut p) = (1.0, t);
        if k == 0 {
            return (1.0 / self.width()).sqrt();
        }
        for j in 1..k {
            let jf = j as f64;
            let next = ((2.0 * jf + 1.0) * t * p - jf * p_prev) / (jf + 1.0);
            p_prev = p;
            p = next;
        }
        p * ((2.0 * k as f64 + 1.0) / self.width()).sqrt()
    }

    /// Coefficients of the constant function 1: `(√(b−a), 0, …, 0)`.
    pub fn integration_vector(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.size];
        v[0] = self.width().sqrt();
        v
    }

    /// `∫ h ψ_i` for each basis function using a Gauss–Legendre rule.
    pub fn project(&self, h: impl Fn(f64) -> f64, quad_order: usize) -> Result<Vec<f64>> {
        if quad_order < self.size {
            return Err(Error::InvalidArgument(format!(
                "quadrature order {quad_order} below basis size {}",
                self.size
            )));
        }
        let (nodes, weights) = gauss_legendre(quad_order)?;
        let half = 0.5 * self.width();
        let mid = 0.5 * (self.lower + self.upper);
        let mut coef = vec![0.0; self.size];
        let mut psi = vec![0.0; self.size];
        for (t, w) in nodes.iter().zip(&weights) {
            let z = mid + half * t;
            self.eval_unchecked(z, &mut psi);
            let hz = h(z) * w * half;
            for (c, p) in coef.iter_mut().zip(&psi) {
                *c += hz * p;
            }
        }
        Ok(coef)
    }

    /// Evaluates the function with coefficient vector `coef` at `z`.
    pub fn reconstruct(&self, coef: &[f64], z: f64) -> Result<f64> {
        let psi = self.eval_vector(z)?;
        Ok(psi.iter().zip(coef).map(|(p, c)| p * c).sum())
    }
}

/// Orthonormal Legendre values at `t ∈ [−1, 1]`, times `sqrt(jacobian)`.
fn legendre_orthonormal(t: f64, jacobian: f64, out: &mut [f64]) {
    let n = out.len();
    if n == 0 {
        return;
    }
    let (mut p_prev, mut p) = (1.0, t);
    out[0] = (0.5 * jacobian).sqrt();
    if n > 1 {
        out[1] = p * (1.5 * jacobian).sqrt();
    }
    for k in 1..n.saturating_sub(1) {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * t * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = next;
        out[k + 1] = p * ((kf + 1.5) * jacobian).sqrt();
    }
}

/// Gauss–Legendre nodes (ascending) and weights on `[−1, 1]`.
pub fn gauss_legendre(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if order == 0 {
        return Err(Error::InvalidArgument("quadrature order must be at least 1".into()));
    }
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, refined by Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok((nodes, weights))
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let dp = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}
