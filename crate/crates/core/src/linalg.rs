//! Small dense and tridiagonal helpers shared by the operator and calculus modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

/// Condition-estimate threshold above which a shifted solve counts as singular.
pub const SINGULAR_CONDITION: f64 = 1e14;

/// Number of contour nodes folded sequentially inside one parallel work item.
/// Chunk boundaries depend only on the node count, never on the thread count.
pub const REDUCTION_CHUNK: usize = 8;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn real_vec_norm(v: &[f64]) -> f64 {
    v.iter().map(|z| z * z).sum::<f64>().sqrt()
}

/// Largest singular value of a dense complex matrix.
pub fn spectral_norm(m: &CMatrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let svd = m.clone().svd(false, false);
    svd.singular_values.iter().cloned().fold(0.0, f64::max)
}

/// Smallest singular value; zero for an empty matrix.
pub fn smallest_singular_value(m: &CMatrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let svd = m.clone().svd(false, false);
    svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// `W M W^{-1}` for a diagonal weight `W`.
pub fn conjugate_by_weights(m: &CMatrix, weights: &[f64]) -> CMatrix {
    let n = m.nrows();
    CMatrix::from_fn(n, n, |i, j| m[(i, j)] * (weights[i] / weights[j]))
}

/// Operator norm of `m` in the norm `||x||_W = ||W x||_2`.
pub fn weighted_spectral_norm(m: &CMatrix, weights: Option<&[f64]>) -> f64 {
    match weights {
        Some(w) => spectral_norm(&conjugate_by_weights(m, w)),
        None => spectral_norm(m),
    }
}

fn start_vector(n: usize) -> DVector<C64> {
    // Deterministic, with no special alignment to coordinate axes.
    let mut v = DVector::from_fn(n, |i, _| {
        let x = i as f64 + 1.0;
        c(1.0 + 0.37 * (x * 0.713).sin(), 0.21 * (x * 1.31).cos())
    });
    let nv = v.norm();
    if nv > 0.0 {
        v /= C64::from(nv);
    }
    v
}

/// Power iteration on `M* M`; returns an estimate of `||M||_2` from below.
pub fn power_iteration_norm(m: &CMatrix, iterations: usize) -> f64 {
    let n = m.ncols();
    if n == 0 {
        return 0.0;
    }
    let mh = m.adjoint();
    let mut x = start_vector(n);
    let mut estimate = (m * &x).norm();
    for _ in 0..iterations {
        let y = &mh * (m * &x);
        let ny = y.norm();
        if ny == 0.0 || !ny.is_finite() {
            break;
        }
        x = y / C64::from(ny);
        estimate = estimate.max((m * &x).norm());
    }
    estimate
}

/// Largest eigenvalue of a symmetric positive semidefinite operator given by its action,
/// by Lanczos with full reorthogonalization. The Ritz value is a lower bound.
pub fn lanczos_max_eigenvalue<F>(apply: F, n: usize, steps: usize) -> f64
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if n == 0 {
        return 0.0;
    }
    let steps = steps.min(n).max(1);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut alphas = Vec::with_capacity(steps);
    let mut betas: Vec<f64> = Vec::with_capacity(steps);

    let mut q: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.5 * ((i as f64 + 1.0) * 0.618).sin())
        .collect();
    let nq = real_vec_norm(&q);
    q.iter_mut().for_each(|x| *x /= nq);

    let mut best = 0.0f64;
    for k in 0..steps {
        let mut w = apply(&q);
        let alpha: f64 = w.iter().zip(&q).map(|(a, b)| a * b).sum();
        basis.push(q.clone());
        alphas.push(alpha);
        for b in &basis {
            let proj: f64 = w.iter().zip(b).map(|(a, c)| a * c).sum();
            w.iter_mut().zip(b).for_each(|(a, c)| *a -= proj * c);
        }
        // second pass keeps the basis orthogonal to working precision
        for b in &basis {
            let proj: f64 = w.iter().zip(b).map(|(a, c)| a * c).sum();
            w.iter_mut().zip(b).for_each(|(a, c)| *a -= proj * c);
        }
        let beta = real_vec_norm(&w);

        let m = alphas.len();
        let t = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                alphas[i]
            } else if i + 1 == j {
                betas[i]
            } else if j + 1 == i {
                betas[j]
            } else {
                0.0
            }
        });
        let top = t
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let converged = (top - best).abs() <= 1e-13 * top.abs().max(1e-300);
        best = best.max(top);
        if beta <= 1e-14 * best.abs().max(1e-300) || k + 1 == steps || (converged && k > 10) {
            break;
        }
        betas.push(beta);
        q = w.into_iter().map(|x| x / beta).collect();
    }
    best
}

/// Dense LU solve of `m x = rhs`, rejecting systems whose pivot-ratio condition
/// estimate exceeds [`SINGULAR_CONDITION`].
pub fn checked_inverse(m: &CMatrix, shift: C64) -> Result<CMatrix> {
    let n = m.nrows();
    if n == 0 {
        return Ok(CMatrix::zeros(0, 0));
    }
    let lu = m.clone().lu();
    let u = lu.u();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        let d = u[(i, i)].norm();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if lo == 0.0 || !(hi / lo).is_finite() || hi / lo > SINGULAR_CONDITION {
        return Err(Error::ContourHitsSpectrum(shift));
    }
    lu.try_inverse().ok_or(Error::ContourHitsSpectrum(shift))
}

/// Complex tridiagonal system with partial pivoting (the `gtsv` scheme).
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
}

impl Tridiagonal {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut acc = v[i] * self.diag[i];
                if i > 0 {
                    acc += v[i - 1] * self.sub[i - 1];
                }
                if i + 1 < n {
                    acc += v[i + 1] * self.sup[i];
                }
                acc
            })
            .collect()
    }

    pub fn apply_real(&self, v: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut acc = v[i] * self.diag[i];
                if i > 0 {
                    acc += v[i - 1] * self.sub[i - 1];
                }
                if i + 1 < n {
                    acc += v[i + 1] * self.sup[i];
                }
                acc
            })
            .collect()
    }

    pub fn to_dense(&self) -> CMatrix {
        let n = self.dim();
        let mut m = CMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::from(self.diag[i]);
            if i + 1 < n {
                m[(i, i + 1)] = C64::from(self.sup[i]);
                m[(i + 1, i)] = C64::from(self.sub[i]);
            }
        }
        m
    }

    pub fn inf_norm(&self) -> f64 {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i].abs();
                if i > 0 {
                    s += self.sub[i - 1].abs();
                }
                if i + 1 < n {
                    s += self.sup[i].abs();
                }
                s
            })
            .fold(0.0, f64::max)
    }

    /// Factor `shift - T`.
    pub fn factor_shifted(&self, shift: C64) -> Result<ShiftedTridiagonalLu> {
        let n = self.dim();
        let mut dl: Vec<C64> = self.sub.iter().map(|x| C64::from(-x)).collect();
        let mut d: Vec<C64> = self.diag.iter().map(|x| shift - x).collect();
        let mut du: Vec<C64> = self.sup.iter().map(|x| C64::from(-x)).collect();
        let mut du2 = vec![C64::default(); n.saturating_sub(2)];
        let mut swapped = vec![false; n.saturating_sub(1)];

        for i in 0..n.saturating_sub(1) {
            if d[i].norm() >= dl[i].norm() {
                if d[i].norm() == 0.0 {
                    return Err(Error::ContourHitsSpectrum(shift));
                }
                let fact = dl[i] / d[i];
                dl[i] = fact;
                d[i + 1] -= fact * du[i];
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du[i + 1];
                }
                swapped[i] = true;
            }
        }
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for z in &d {
            lo = lo.min(z.norm());
            hi = hi.max(z.norm());
        }
        if n > 0 && (lo == 0.0 || hi / lo > SINGULAR_CONDITION) {
            return Err(Error::ContourHitsSpectrum(shift));
        }
        Ok(ShiftedTridiagonalLu {
            dl,
            d,
            du,
            du2,
            swapped,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ShiftedTridiagonalLu {
    dl: Vec<C64>,
    d: Vec<C64>,
    du: Vec<C64>,
    du2: Vec<C64>,
    swapped: Vec<bool>,
}

impl ShiftedTridiagonalLu {
    pub fn solve(&self, rhs: &[C64]) -> Vec<C64> {
        let n = self.d.len();
        let mut b = rhs.to_vec();
        for i in 0..n.saturating_sub(1) {
            if self.swapped[i] {
                b.swap(i, i + 1);
            }
            let t = self.dl[i] * b[i];
            b[i + 1] -= t;
        }
        if n == 0 {
            return b;
        }
        b[n - 1] /= self.d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - self.du[n - 2] * b[n - 1]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
        b
    }
}

/// Deterministic parallel reduction over `count` indexed terms.
///
/// Terms are grouped into fixed chunks of [`REDUCTION_CHUNK`], each chunk is
/// folded in index order, and chunk partials are combined in chunk order.
pub fn ordered_reduce<T, Z, F, A>(count: usize, zero: Z, term: F, add: A) -> Result<T>
where
    T: Send,
    Z: Fn() -> T + Sync,
    F: Fn(usize, &mut T) -> Result<()> + Sync,
    A: Fn(&mut T, T),
{
    let chunks = count.div_ceil(REDUCTION_CHUNK);
    let partials: Vec<Result<T>> = (0..chunks)
        .into_par_iter()
        .map(|ci| {
            let mut acc = zero();
            let end = ((ci + 1) * REDUCTION_CHUNK).min(count);
            for k in ci * REDUCTION_CHUNK..end {
                term(k, &mut acc)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = zero();
    for p in partials {
        add(&mut total, p?);
    }
    Ok(total)
}
