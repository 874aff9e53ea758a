//! Resolvent providers: finite-dimensional operators that can solve `(λ − A) x = b`,
//! plus sectoriality and spectral-inclusion diagnostics.

use std::f64::consts::TAU;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, checked_inverse, conjugate_by_weights, power_iteration_norm, spectral_norm, smallest_singular_value, vec_norm, CMatrix, C64, SINGULAR_CONDITION};
use crate::sectors::{OperatorScale, Sector};

/// Largest dimension handed to the dense eigensolver.
pub const EIGENSOLVER_LIMIT: usize = 2000;

pub trait ResolventProvider: Send + Sync {
    fn dim(&self) -> usize;

    /// `A v`.
    fn apply(&self, v: &[C64]) -> Vec<C64>;

    /// Solve `(λ − A) x = rhs`.
    fn resolve(&self, lambda: C64, rhs: &[C64]) -> Result<Vec<C64>>;

    /// Solve `(λ − A)^* x = rhs`.
    fn resolve_adjoint(&self, lambda: C64, rhs: &[C64]) -> Result<Vec<C64>> {
        let m = self.to_dense();
        let n = m.nrows();
        let shifted = (CMatrix::identity(n, n) * lambda - m).adjoint();
        let inv = checked_inverse(&shifted, lambda)?;
        Ok((inv * DVector::from_column_slice(rhs)).as_slice().to_vec())
    }

    /// `(λ − A)^{-1}` as a dense matrix.
    fn resolvent_matrix(&self, lambda: C64) -> Result<CMatrix> {
        let n = self.dim();
        let mut out = CMatrix::zeros(n, n);
        let mut e = vec![C64::default(); n];
        for j in 0..n {
            e[j] = C64::from(1.0);
            let col = self.resolve(lambda, &e)?;
            e[j] = C64::default();
            for i in 0..n {
                out[(i, j)] = col[i];
            }
        }
        Ok(out)
    }

    /// Diagonal weights `W` of the norm `||x|| = ||W x||_2`; `None` means Euclidean.
    fn norm_weights(&self) -> Option<Vec<f64>> {
        None
    }

    fn to_dense(&self) -> CMatrix;

    /// Whether norm estimates should form the dense resolvent instead of iterating solves.
    fn prefers_dense(&self) -> bool {
        true
    }

    fn eigenvalues(&self) -> Result<Vec<C64>> {
        dense_eigenvalues(&self.to_dense())
    }

    /// Norm, inverse norm and spectral angle in the provider's norm.
    fn scale(&self) -> Result<OperatorScale> {
        let m = self.to_dense();
        let m = match self.norm_weights() {
            Some(w) => conjugate_by_weights(&m, &w),
            None => m,
        };
        let norm = spectral_norm(&m);
        let smin = smallest_singular_value(&m);
        let inv_norm = if smin > 0.0 && norm / smin < SINGULAR_CONDITION {
            Some(1.0 / smin)
        } else {
            None
        };
        let eigs = self.eigenvalues()?;
        Ok(OperatorScale {
            norm,
            inv_norm,
            spectral_angle: spectral_angle(&eigs, norm),
            resolvent_bound: None,
        })
    }
}

/// Largest `|arg λ|` over eigenvalues that are not numerically zero.
pub fn spectral_angle(eigs: &[C64], norm: f64) -> f64 {
    eigs.iter()
        .filter(|z| z.norm() > 1e-12 * norm.max(1e-300))
        .map(|z| z.arg().abs())
        .fold(0.0, f64::max)
}

pub fn dense_eigenvalues(m: &CMatrix) -> Result<Vec<C64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    if n > EIGENSOLVER_LIMIT {
        return Err(Error::EigenSolver(format!(
            "dimension {n} exceeds the eigensolver limit {EIGENSOLVER_LIMIT}"
        )));
    }
    let schur = m
        .clone()
        .try_schur(1e-14, 10_000)
        .ok_or_else(|| Error::EigenSolver("Schur iteration did not converge".into()))?;
    let eigs = schur
        .eigenvalues()
        .ok_or_else(|| Error::EigenSolver("Schur form is not triangular".into()))?;
    Ok(eigs.iter().cloned().collect())
}

#[derive(Debug, Clone)]
pub struct DenseOperator {
    matrix: CMatrix,
    weights: Option<Vec<f64>>,
}

impl DenseOperator {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidParameter("matrix has non-finite entries".into()));
        }
        Ok(Self { matrix, weights: None })
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        for r in rows {
            if r.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: r.len() });
            }
        }
        Self::new(CMatrix::from_fn(n, n, |i, j| C64::from(rows[i][j])))
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.matrix.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.matrix.nrows(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter("norm weights must be positive".into()));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    fn shifted(&self, lambda: C64) -> CMatrix {
        let n = self.matrix.nrows();
        CMatrix::identity(n, n) * lambda - &self.matrix
    }
}

impl ResolventProvider for DenseOperator {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, v: &[C64]) -> Vec<C64> {
        (&self.matrix * DVector::from_column_slice(v)).as_slice().to_vec()
    }

    fn resolve(&self, lambda: C64, rhs: &[C64]) -> Result<Vec<C64>> {
        let inv = checked_inverse(&self.shifted(lambda), lambda)?;
        Ok((inv * DVector::from_column_slice(rhs)).as_slice().to_vec())
    }

    fn resolvent_matrix(&self, lambda: C64) -> Result<CMatrix> {
        checked_inverse(&self.shifted(lambda), lambda)
    }

    fn norm_weights(&self) -> Option<Vec<f64>> {
        self.weights.clone()
    }

    fn to_dense(&self) -> CMatrix {
        self.matrix.clone()
    }
}

#[derive(Debug, Clone)]
pub struct DiagonalOperator {
    eigs: Vec<C64>,
}

impl DiagonalOperator {
    pub fn new(eigs: Vec<C64>) -> Self {
        Self { eigs }
    }

    pub fn from_real(eigs: &[f64]) -> Self {
        Self::new(eigs.iter().map(|&a| C64::from(a)).collect())
    }

    pub fn eigs(&self) -> &[C64] {
        &self.eigs
    }

    fn check_shift(&self, lambda: C64) -> Result<()> {
        let scale = self.eigs.iter().map(|z| z.norm()).fold(lambda.norm(), f64::max);
        for a in &self.eigs {
            if (lambda - a).norm() * SINGULAR_CONDITION <= scale {
                return Err(Error::ContourHitsSpectrum(lambda));
            }
        }
        Ok(())
    }
}

impl ResolventProvider for DiagonalOperator {
    fn dim(&self) -> usize {
        self.eigs.len()
    }

    fn apply(&self, v: &[C64]) -> Vec<C64> {
        v.iter().zip(&self.eigs).map(|(x, a)| a * x).collect()
    }

    fn resolve(&self, lambda: C64, rhs: &[C64]) -> Result<Vec<C64>> {
        self.check_shift(lambda)?;
        Ok(rhs.iter().zip(&self.eigs).map(|(b, a)| b / (lambda - a)).collect())
    }

    fn resolve_adjoint(&self, lambda: C64, rhs: &[C64]) -> Result<Vec<C64>> {
        self.check_shift(lambda)?;
        Ok(rhs.iter().zip(&self.eigs).map(|(b, a)| b / (lambda - a).conj()).collect())
    }

    fn to_dense(&self) -> CMatrix {
        CMatrix::from_diagonal(&DVector::from_vec(self.eigs.clone()))
    }

    fn eigenvalues(&self) -> Result<Vec<C64>> {
        Ok(self.eigs.clone())
    }

    fn scale(&self) -> Result<OperatorScale> {
        let norm = self.eigs.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let min = self.eigs.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
        let inv_norm = if min > 0.0 && norm / min < SINGULAR_CONDITION {
            Some(1.0 / min)
        } else {
            None
        };
        Ok(OperatorScale {
            norm,
            inv_norm,
            spectral_angle: spectral_angle(&self.eigs, norm),
            resolvent_bound: None,
        })
    }
}

/// Euclidean norm of `W x` for optional weights.
pub fn weighted_norm(v: &[C64], weights: Option<&[f64]>) -> f64 {
    match weights {
        Some(w) => v.iter().zip(w).map(|(x, w)| (x * w).norm_sqr()).sum::<f64>().sqrt(),
        None => vec_norm(v),
    }
}

/// `||λ (λ − A)^{-1}||` in the provider's norm by power iteration on `R^* R`.
pub fn scaled_resolvent_norm(provider: &dyn ResolventProvider, lambda: C64, iterations: usize) -> Result<f64> {
    let n = provider.dim();
    if n == 0 {
        return Ok(0.0);
    }
    let weights = provider.norm_weights();
    if provider.prefers_dense() {
        let r = provider.resolvent_matrix(lambda)?;
        let r = match &weights {
            Some(w) => conjugate_by_weights(&r, w),
            None => r,
        };
        return Ok(lambda.norm() * power_iteration_norm(&r, iterations));
    }
    // work in y = W x so that the Euclidean norm of y is the provider norm of x
    let to_x = |y: &[C64]| -> Vec<C64> {
        match &weights {
            Some(w) => y.iter().zip(w).map(|(a, w)| a / w).collect(),
            None => y.to_vec(),
        }
    };
    let to_y = |x: &[C64]| -> Vec<C64> {
        match &weights {
            Some(w) => x.iter().zip(w).map(|(a, w)| a * w).collect(),
            None => x.to_vec(),
        }
    };
    let mut y: Vec<C64> = (0..n)
        .map(|i| {
            let x = i as f64 + 1.0;
            c(1.0 + 0.37 * (x * 0.713).sin(), 0.21 * (x * 1.31).cos())
        })
        .collect();
    let ny = vec_norm(&y);
    y.iter_mut().for_each(|z| *z /= ny);
    let mut estimate = 0.0f64;
    for _ in 0..=iterations {
        // K = W R W^{-1}; K^* = W^{-1} R^* W
        let ky = to_y(&provider.resolve(lambda, &to_x(&y))?);
        let nk = vec_norm(&ky);
        if !nk.is_finite() {
            return Err(Error::SpectrumIntersectsSector(lambda));
        }
        estimate = estimate.max(nk);
        let back: Vec<C64> = match &weights {
            Some(w) => ky.iter().zip(w).map(|(a, w)| a * w).collect(),
            None => ky.clone(),
        };
        let mut z = provider.resolve_adjoint(lambda, &back)?;
        if let Some(w) = &weights {
            z.iter_mut().zip(w).for_each(|(a, w)| *a /= w);
        }
        let nz = vec_norm(&z);
        if nz == 0.0 || !nz.is_finite() {
            break;
        }
        y = z.into_iter().map(|a| a / nz).collect();
    }
    Ok(lambda.norm() * estimate)
}

/// Radii and angles of a sectoriality scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub radii: Vec<f64>,
    pub angles: Vec<f64>,
}

impl ScanGrid {
    /// Geometric radii from `r_lo` to `r_hi` with `per_decade` points per decade and
    /// `angle_count` equispaced angles on `[θ, 2π − θ]`.
    pub fn geometric(sector: &Sector, r_lo: f64, r_hi: f64, per_decade: usize, angle_count: usize) -> Result<Self> {
        if !(r_lo > 0.0 && r_hi >= r_lo) {
            return Err(Error::InvalidParameter(format!("bad radius range [{r_lo}, {r_hi}]")));
        }
        let decades = (r_hi / r_lo).log10();
        let count = ((decades * per_decade as f64).ceil() as usize).max(1);
        let radii = (0..=count)
            .map(|i| r_lo * (r_hi / r_lo).powf(i as f64 / count as f64))
            .collect();
        let theta = sector.theta();
        let angle_count = angle_count.max(2);
        let angles = (0..angle_count)
            .map(|k| theta + (TAU - 2.0 * theta) * k as f64 / (angle_count - 1) as f64)
            .collect();
        Ok(Self { radii, angles })
    }

    /// Default grid: `1e-3 min|eig|` to `1e3 max|eig|`, 16 radii per decade, 33 angles.
    pub fn default_for(provider: &dyn ResolventProvider, sector: &Sector) -> Result<Self> {
        let eigs = provider.eigenvalues()?;
        let mags: Vec<f64> = eigs.iter().map(|z| z.norm()).filter(|m| *m > 0.0).collect();
        let lo = mags.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = mags.iter().cloned().fold(0.0, f64::max);
        let (lo, hi) = if mags.is_empty() { (1.0, 1.0) } else { (lo, hi) };
        Self::geometric(sector, 1e-3 * lo, 1e3 * hi, 16, 33)
    }

    /// Every old point plus the geometric/arithmetic midpoints.
    pub fn refined(&self) -> Self {
        fn interleave(v: &[f64], mid: impl Fn(f64, f64) -> f64) -> Vec<f64> {
            let mut out = Vec::with_capacity(2 * v.len());
            for w in v.windows(2) {
                out.push(w[0]);
                out.push(mid(w[0], w[1]));
            }
            if let Some(last) = v.last() {
                out.push(*last);
            }
            out
        }
        Self {
            radii: interleave(&self.radii, |a, b| (a * b).sqrt()),
            angles: interleave(&self.angles, |a, b| 0.5 * (a + b)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanSample {
    pub radius: f64,
    pub angle: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SectorialityReport {
    pub m_r: f64,
    pub argmax: [f64; 2],
    pub samples: Vec<ScanSample>,
}

impl SectorialityReport {
    /// Per-radius maximum over angles, for `(|λ|, ratio)` plots.
    pub fn radial_profile(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for s in &self.samples {
            match out.last_mut() {
                Some((r, v)) if *r == s.radius => *v = v.max(s.ratio),
                _ => out.push((s.radius, s.ratio)),
            }
        }
        out
    }
}

pub const SCAN_POWER_ITERATIONS: usize = 50;

/// `sup ||λ (λ − A)^{-1}||` over the grid.
pub fn sectoriality_scan(provider: &dyn ResolventProvider, sector: &Sector, grid: &ScanGrid) -> Result<SectorialityReport> {
    let spec = spectrum_in_sector(provider, sector, true)?;
    if let Some(z) = spec.offenders.first() {
        return Err(Error::SpectrumIntersectsSector(*z));
    }
    use rayon::prelude::*;
    let points: Vec<(f64, f64)> = grid
        .radii
        .iter()
        .flat_map(|&r| grid.angles.iter().map(move |&a| (r, a)))
        .collect();
    let ratios: Vec<Result<f64>> = points
        .par_iter()
        .map(|&(r, a)| {
            let lambda = C64::from_polar(r, a);
            scaled_resolvent_norm(provider, lambda, SCAN_POWER_ITERATIONS).map_err(|e| match e {
                Error::ContourHitsSpectrum(z) => Error::SpectrumIntersectsSector(z),
                other => other,
            })
        })
        .collect();
    let mut samples = Vec::with_capacity(points.len());
    let mut best = (0.0f64, C64::default());
    for ((r, a), ratio) in points.into_iter().zip(ratios) {
        let ratio = ratio?;
        if ratio > best.0 {
            best = (ratio, C64::from_polar(r, a));
        }
        samples.push(ScanSample { radius: r, angle: a, ratio });
    }
    Ok(SectorialityReport {
        m_r: best.0,
        argmax: [best.1.re, best.1.im],
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    pub clear: bool,
    pub offenders: Vec<C64>,
    pub eigenvalues: Vec<C64>,
}

/// All eigenvalues outside `Λ` (or `Λ \ {0}` with `exclude_origin`)?
pub fn spectrum_in_sector(provider: &dyn ResolventProvider, sector: &Sector, exclude_origin: bool) -> Result<SpectrumReport> {
    let eigenvalues = provider.eigenvalues()?;
    let scale = eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let offenders: Vec<C64> = eigenvalues
        .iter()
        .filter(|z| {
            let at_origin = z.norm() <= 1e-12 * scale.max(1.0);
            if at_origin {
                !exclude_origin
            } else {
                sector.contains(**z)
            }
        })
        .cloned()
        .collect();
    Ok(SpectrumReport {
        clear: offenders.is_empty(),
        offenders,
        eigenvalues,
    })
}

/// A complex number in JSON: either a bare real or `[re, im]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComplexEntry {
    Real(f64),
    Pair([f64; 2]),
}

impl ComplexEntry {
    pub fn value(&self) -> C64 {
        match *self {
            ComplexEntry::Real(x) => C64::from(x),
            ComplexEntry::Pair([re, im]) => c(re, im),
        }
    }
}

/// Operator sources loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSource {
    /// Row-major nested arrays.
    Dense { matrix: Vec<Vec<ComplexEntry>> },
    Diagonal { eigs: Vec<ComplexEntry> },
}

impl OperatorSource {
    pub fn build(&self) -> Result<Box<dyn ResolventProvider>> {
        match self {
            OperatorSource::Dense { matrix } => Ok(Box::new(dense_from_rows(matrix)?)),
            OperatorSource::Diagonal { eigs } => Ok(Box::new(DiagonalOperator::new(
                eigs.iter().map(ComplexEntry::value).collect(),
            ))),
        }
    }

    pub fn to_dense(&self) -> Result<DenseOperator> {
        match self {
            OperatorSource::Dense { matrix } => dense_from_rows(matrix),
            OperatorSource::Diagonal { eigs } => DenseOperator::new(
                DiagonalOperator::new(eigs.iter().map(ComplexEntry::value).collect()).to_dense(),
            ),
        }
    }

    pub fn from_matrix(m: &CMatrix) -> Self {
        OperatorSource::Dense {
            matrix: (0..m.nrows())
                .map(|i| {
                    (0..m.ncols())
                        .map(|j| ComplexEntry::Pair([m[(i, j)].re, m[(i, j)].im]))
                        .collect()
                })
                .collect(),
        }
    }
}

fn dense_from_rows(rows: &[Vec<ComplexEntry>]) -> Result<DenseOperator> {
    let n = rows.len();
    for r in rows {
        if r.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: r.len() });
        }
    }
    DenseOperator::new(CMatrix::from_fn(n, n, |i, j| rows[i][j].value()))
}

pub fn load_matrix_json(text: &str) -> Result<DenseOperator> {
    let rows: Vec<Vec<ComplexEntry>> =
        serde_json::from_str(text).map_err(|e| Error::InvalidParameter(format!("matrix JSON: {e}")))?;
    dense_from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    /// Brute-force sup of `|λ| / |λ − a|` on a dense polar grid over the closed sector.
    fn scalar_ratio_oracle(a: f64, theta: f64) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..=2000 {
            let r = 10f64.powf(-4.0 + 12.0 * i as f64 / 2000.0);
            for k in 0..=200 {
                let phi = theta + (TAU - 2.0 * theta) * k as f64 / 200.0;
                let l = C64::from_polar(r, phi);
                best = best.max(l.norm() / (l - a).norm());
            }
        }
        best
    }

    #[test]
    fn residual_of_resolve() {
        let op = DenseOperator::from_real_rows(&[vec![2.0, 1.0, 0.0], vec![0.5, 3.0, -1.0], vec![0.0, 0.2, 4.0]]).unwrap();
        let rhs = vec![c(1.0, 0.5), c(-2.0, 0.0), c(0.3, 3.0)];
        let lambda = c(-1.0, 2.0);
        let x = op.resolve(lambda, &rhs).unwrap();
        let ax = op.apply(&x);
        let res: Vec<C64> = x.iter().zip(&ax).zip(&rhs).map(|((x, ax), b)| lambda * x - ax - b).collect();
        assert!(vec_norm(&res) <= 1e-10 * vec_norm(&rhs));
    }

    #[test]
    fn scan_spd_half_plane() {
        let op = DiagonalOperator::from_real(&[1.0, 2.0]);
        let s = Sector::new(FRAC_PI_2).unwrap();
        let grid = ScanGrid::default_for(&op, &s).unwrap();
        let rep = sectoriality_scan(&op, &s, &grid).unwrap();
        assert!((rep.m_r - 1.0).abs() < 1e-6, "{}", rep.m_r);
        assert!(rep.samples.iter().all(|x| x.ratio <= 1.0 + 1e-6));
        // brute-force oracle agrees
        assert!((scalar_ratio_oracle(1.0, FRAC_PI_2) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn scan_scalar_in_wide_and_narrow_sectors() {
        // on Λ(π/4) the boundary ray gets within angle π/4 of the spectrum: sup = 1/sin(π/4)
        let op = DiagonalOperator::from_real(&[1.0]);
        let narrow = Sector::new(FRAC_PI_4).unwrap();
        let grid = ScanGrid::geometric(&narrow, 1e-3, 1e3, 64, 257).unwrap();
        let rep = sectoriality_scan(&op, &narrow, &grid).unwrap();
        assert!((rep.m_r - 2f64.sqrt()).abs() < 1e-3, "{}", rep.m_r);
        assert!((scalar_ratio_oracle(1.0, FRAC_PI_4) - 2f64.sqrt()).abs() < 1e-3);
        // on Λ(3π/4) every point has Re λ < 0, so |λ| < |λ − 1| and the sup is 1
        let wide = Sector::new(3.0 * FRAC_PI_4).unwrap();
        let grid = ScanGrid::geometric(&wide, 1e-3, 1e6, 16, 65).unwrap();
        let rep = sectoriality_scan(&op, &wide, &grid).unwrap();
        assert!(rep.m_r < 1.0 && rep.m_r > 1.0 - 1e-5, "{}", rep.m_r);
        assert!((scalar_ratio_oracle(1.0, 3.0 * FRAC_PI_4) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn scan_rejects_spectrum_in_sector() {
        let op = DiagonalOperator::from_real(&[1.0, -1.0]);
        let s = Sector::new(FRAC_PI_2).unwrap();
        let grid = ScanGrid::geometric(&s, 0.1, 10.0, 4, 9).unwrap();
        assert!(matches!(sectoriality_scan(&op, &s, &grid), Err(Error::SpectrumIntersectsSector(_))));
    }

    #[test]
    fn spectrum_examples() {
        let s = Sector::new(FRAC_PI_4).unwrap();
        let a = DenseOperator::from_real_rows(&[vec![1.0, 0.0], vec![0.0, 4.0]]).unwrap();
        assert!(spectrum_in_sector(&a, &s, false).unwrap().clear);
        let b = DenseOperator::from_real_rows(&[vec![1.0, 0.0], vec![0.0, -4.0]]).unwrap();
        let rep = spectrum_in_sector(&b, &s, false).unwrap();
        assert!(!rep.clear);
        assert_eq!(rep.offenders.len(), 1);
        assert!((rep.offenders[0] + 4.0).norm() < 1e-12);
        let z = DenseOperator::from_real_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(spectrum_in_sector(&z, &s, true).unwrap().clear);
        assert!(!spectrum_in_sector(&z, &s, false).unwrap().clear);
    }

    #[test]
    fn weighted_scan_matches_conjugated_matrix() {
        let m = CMatrix::from_fn(3, 3, |i, j| C64::from(if i == j { 1.0 + i as f64 } else { 0.3 }));
        let w = vec![1.0, 2.0, 0.5];
        let op = DenseOperator::new(m.clone()).unwrap().with_weights(w.clone()).unwrap();
        let lambda = c(-0.5, 1.0);
        let est = scaled_resolvent_norm(&op, lambda, 200).unwrap();
        let r = op.resolvent_matrix(lambda).unwrap();
        let exact = lambda.norm() * spectral_norm(&conjugate_by_weights(&r, &w));
        assert!((est - exact).abs() < 1e-9 * exact);
    }

    #[test]
    fn json_loading() {
        let op = load_matrix_json("[[[1,0],[2,1]],[[0,0],[3,-1]]]").unwrap();
        assert_eq!(op.matrix()[(0, 1)], c(2.0, 1.0));
        assert_eq!(op.matrix()[(1, 1)], c(3.0, -1.0));
        assert!(load_matrix_json("[[[1,0]],[[0,0],[3,0]]]").is_err());
        let src: OperatorSource = serde_json::from_str(r#"{"type":"diagonal","eigs":[1, [2, 0.5]]}"#).unwrap();
        let p = src.build().unwrap();
        assert_eq!(p.eigenvalues().unwrap(), vec![c(1.0, 0.0), c(2.0, 0.5)]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn resolvent_identity(seed in proptest::collection::vec(-1.0f64..1.0, 9),
                              lr in 0.5f64..5.0, la in 1.8f64..PI, nr in 0.5f64..5.0, na in 1.8f64..PI) {
            let m = CMatrix::from_fn(3, 3, |i, j| C64::from(seed[3 * i + j] + if i == j { 3.0 } else { 0.0 }));
            let op = DenseOperator::new(m).unwrap();
            let l = C64::from_polar(lr, la);
            let nu = C64::from_polar(nr, -na);
            let rl = op.resolvent_matrix(l).unwrap();
            let rn = op.resolvent_matrix(nu).unwrap();
            let lhs = &rl - &rn;
            let rhs = (&rl * &rn) * (nu - l);
            prop_assert!(spectral_norm(&(lhs - &rhs)) <= 1e-9 * spectral_norm(&rhs).max(1e-300));
        }

        #[test]
        fn dense_and_diagonal_agree(eigs in proptest::collection::vec(0.1f64..10.0, 1..6),
                                    lr in 0.1f64..10.0, la in 1.6f64..PI) {
            let diag = DiagonalOperator::from_real(&eigs);
            let dense = DenseOperator::new(diag.to_dense()).unwrap();
            let rhs: Vec<C64> = (0..eigs.len()).map(|i| c(1.0 + i as f64, -0.5)).collect();
            let l = C64::from_polar(lr, la);
            let a = diag.resolve(l, &rhs).unwrap();
            let b = dense.resolve(l, &rhs).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).norm() <= 1e-12 * x.norm().max(1.0));
            }
        }

        #[test]
        fn scan_monotone_under_refinement(eigs in proptest::collection::vec(0.1f64..10.0, 1..4),
                                          off in -0.5f64..0.5, theta in 0.5f64..2.5) {
            let n = eigs.len();
            let m = CMatrix::from_fn(n, n, |i, j| C64::from(if i == j { eigs[i] } else if j == i + 1 { off } else { 0.0 }));
            let op = DenseOperator::new(m).unwrap();
            let s = Sector::new(theta).unwrap();
            let grid = ScanGrid::geometric(&s, 0.01, 100.0, 4, 9).unwrap();
            let coarse = sectoriality_scan(&op, &s, &grid).unwrap().m_r;
            let fine = sectoriality_scan(&op, &s, &grid.refined()).unwrap().m_r;
            prop_assert!(fine >= coarse);
        }
    }
}
