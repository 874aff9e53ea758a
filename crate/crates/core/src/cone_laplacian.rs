//! Discretized Fuchs-type cone Laplacians, one cross-section mode at a time.
//!
//! In `r = −log t` the mode operator is `e^{2r}(−∂_r² + (n−1)∂_r − λ_j)` on `(0, R)`,
//! with a Dirichlet row at `r = 0` (`t = 1`) and an artificial Dirichlet truncation
//! at `r = R`. The stored matrix acts on `v = W u`, `W = diag(t_i^{(n+1)/2−γ})`, so the
//! Euclidean norm of `v` is the weighted `p = 2` norm of `u` up to the factor `h^{1/2}`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, Tridiagonal, C64};
use crate::operators::ResolventProvider;
use crate::sectors::OperatorScale;

/// Largest admissible `e^{2R}`.
pub const MAX_EXP_2R: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryCondition {
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumSource {
    Interval { length: f64 },
    UserList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSectionSpectrum {
    pub eigs: Vec<f64>,
    pub bc: BoundaryCondition,
    pub source: SpectrumSource,
}

impl CrossSectionSpectrum {
    /// Validate a user-supplied list: strictly decreasing, nonpositive, with
    /// `λ_0 < 0` for Dirichlet and `λ_0 = 0` for Neumann data.
    pub fn from_list(eigs: Vec<f64>, bc: BoundaryCondition) -> Result<Self> {
        if eigs.iter().any(|x| !x.is_finite() || *x > 0.0) {
            return Err(Error::InvalidParameter("cross-section eigenvalues must be finite and <= 0".into()));
        }
        if eigs.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidParameter("cross-section eigenvalues must be strictly decreasing".into()));
        }
        if let Some(&l0) = eigs.first() {
            match bc {
                BoundaryCondition::Dirichlet if l0 >= 0.0 => {
                    return Err(Error::InvalidParameter("Dirichlet data needs lambda_0 < 0".into()))
                }
                BoundaryCondition::Neumann if l0 != 0.0 => {
                    return Err(Error::InvalidParameter("Neumann data needs lambda_0 = 0".into()))
                }
                _ => {}
            }
        }
        Ok(Self {
            eigs,
            bc,
            source: SpectrumSource::UserList,
        })
    }

    pub fn lambda0(&self) -> Option<f64> {
        self.eigs.first().copied()
    }
}

/// Eigenvalues of the Dirichlet or Neumann Laplacian on `[0, L]`.
pub fn interval_spectrum(length: f64, bc: BoundaryCondition, count: usize) -> Result<CrossSectionSpectrum> {
    if count < 1 {
        return Err(Error::InvalidParameter("need at least one eigenvalue".into()));
    }
    if !(length > 0.0 && length.is_finite()) {
        return Err(Error::InvalidParameter(format!("interval length must be > 0, got {length}")));
    }
    let eigs = (0..count)
        .map(|j| {
            let k = match bc {
                BoundaryCondition::Dirichlet => j + 1,
                BoundaryCondition::Neumann => j,
            };
            -(k as f64 * PI / length).powi(2)
        })
        .collect();
    Ok(CrossSectionSpectrum {
        eigs,
        bc,
        source: SpectrumSource::Interval { length },
    })
}

/// Uniform grid in `r = −log t` with interior nodes `r_i = i h`, `h = R/(N+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedGrid {
    pub depth: f64,
    pub nodes: usize,
    pub gamma: f64,
    pub n: u32,
    pub p: f64,
}

impl WeightedGrid {
    pub fn new(depth: f64, nodes: usize, gamma: f64, n: u32, p: f64) -> Result<Self> {
        if !(depth > 0.0 && depth.is_finite()) {
            return Err(Error::InvalidParameter(format!("depth R must be > 0, got {depth}")));
        }
        if nodes < 1 {
            return Err(Error::InvalidParameter("grid needs at least one node".into()));
        }
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::InvalidParameter(format!("p must lie in (1, inf), got {p}")));
        }
        if !gamma.is_finite() {
            return Err(Error::InvalidParameter("gamma must be finite".into()));
        }
        Ok(Self { depth, nodes, gamma, n, p })
    }

    pub fn step(&self) -> f64 {
        self.depth / (self.nodes + 1) as f64
    }

    pub fn r_nodes(&self) -> Vec<f64> {
        let h = self.step();
        (1..=self.nodes).map(|i| i as f64 * h).collect()
    }

    pub fn t_nodes(&self) -> Vec<f64> {
        self.r_nodes().into_iter().map(|r| (-r).exp()).collect()
    }

    /// Exponent `(n+1)/2 − γ` of the weight `t^{(n+1)/2−γ}`.
    pub fn weight_exponent(&self) -> f64 {
        (self.n as f64 + 1.0) / 2.0 - self.gamma
    }

    pub fn weights(&self) -> Vec<f64> {
        let e = self.weight_exponent();
        self.r_nodes().into_iter().map(|r| (-e * r).exp()).collect()
    }

    /// The weight for which dilations are isometries: `γ = (n+1)(1/2 − 1/p)`.
    pub fn isometry_gamma(n: u32, p: f64) -> f64 {
        (n as f64 + 1.0) * (0.5 - 1.0 / p)
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        Self { gamma, ..*self }
    }

    pub fn with_p(&self, p: f64) -> Self {
        Self { p, ..*self }
    }
}

/// `(Σ_i |t_i^{(n+1)/2−γ} u_i|^p h)^{1/p}`.
pub fn discrete_norm(u: &[C64], grid: &WeightedGrid) -> Result<f64> {
    if u.len() != grid.nodes {
        return Err(Error::DimensionMismatch {
            expected: grid.nodes,
            got: u.len(),
        });
    }
    let h = grid.step();
    let sum: f64 = u
        .iter()
        .zip(grid.weights())
        .map(|(x, w)| (x.norm() * w).powf(grid.p))
        .sum();
    Ok((sum * h).powf(1.0 / grid.p))
}

#[derive(Debug, Clone)]
pub struct ConeModeOperator {
    pub n: u32,
    pub gamma: f64,
    pub lambda_j: f64,
    pub grid: WeightedGrid,
    matrix: Tridiagonal,
}

/// Assemble the weight-conjugated mode matrix.
///
/// The first-order term is discretized in flux form,
/// `−e^{(n−1)r} D_+ (e^{−(n−1)r} D_− u)`, which is second-order central and
/// keeps the `γ = 0` conjugate exactly symmetric.
pub fn assemble_mode_operator(n: u32, gamma: f64, lambda_j: f64, grid: &WeightedGrid) -> Result<ConeModeOperator> {
    if n < 1 {
        return Err(Error::InvalidParameter("cross-section dimension must be >= 1".into()));
    }
    if grid.n != n || grid.gamma != gamma {
        return Err(Error::InvalidParameter(format!(
            "grid (n = {}, gamma = {}) does not match operator (n = {n}, gamma = {gamma})",
            grid.n, grid.gamma
        )));
    }
    if !(lambda_j.is_finite()) {
        return Err(Error::InvalidParameter("lambda_j must be finite".into()));
    }
    if (2.0 * grid.depth).exp() > MAX_EXP_2R {
        return Err(Error::TruncationTooDeep(grid.depth));
    }
    let h = grid.step();
    let a = (n as f64 - 1.0) * h / 2.0;
    let shift = (grid.weight_exponent() * h).exp(); // W_i / W_{i+1}
    let r = grid.r_nodes();
    let size = grid.nodes;
    let mut diag = Vec::with_capacity(size);
    let mut sub = Vec::with_capacity(size.saturating_sub(1));
    let mut sup = Vec::with_capacity(size.saturating_sub(1));
    for (i, &ri) in r.iter().enumerate() {
        let g = (2.0 * ri).exp();
        diag.push(g * (2.0 * a.cosh() / (h * h) - lambda_j));
        if i + 1 < size {
            sup.push(-g * (-a).exp() / (h * h) * shift);
            let g_next = (2.0 * r[i + 1]).exp();
            sub.push(-g_next * a.exp() / (h * h) / shift);
        }
    }
    let matrix = Tridiagonal { sub, diag, sup };
    if matrix.inf_norm() > f64::MAX / 4.0 || !matrix.inf_norm().is_finite() {
        return Err(Error::TruncationTooDeep(grid.depth));
    }
    Ok(ConeModeOperator {
        n,
        gamma,
        lambda_j,
        grid: *grid,
        matrix,
    })
}

impl ConeModeOperator {
    pub fn tridiagonal(&self) -> &Tridiagonal {
        &self.matrix
    }

    pub fn dense_real(&self) -> DMatrix<f64> {
        let n = self.matrix.diag.len();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                self.matrix.diag[i]
            } else if j == i + 1 {
                self.matrix.sup[i]
            } else if i == j + 1 {
                self.matrix.sub[j]
            } else {
                0.0
            }
        })
    }

    /// `||M − Mᵀ||_∞ / ||M||_∞`.
    pub fn symmetry_defect(&self) -> f64 {
        let t = &self.matrix;
        let mut worst = 0.0f64;
        for i in 0..t.sub.len() {
            worst = worst.max((t.sup[i] - t.sub[i]).abs());
        }
        // row sums of |M − Mᵀ| touch at most two off-diagonal differences
        2.0 * worst / t.inf_norm().max(1e-300)
    }

    /// Real eigenvalues in ascending order, via the symmetrized similar matrix.
    ///
    /// Needs `sub_i · sup_i > 0`, which holds for every assembled mode.
    pub fn real_eigenvalues(&self) -> Result<Vec<f64>> {
        let t = &self.matrix;
        let n = t.diag.len();
        let mut off = Vec::with_capacity(n.saturating_sub(1));
        for i in 0..t.sub.len() {
            let prod = t.sub[i] * t.sup[i];
            if prod <= 0.0 {
                return Err(Error::EigenSolver("mode matrix is not sign-symmetric".into()));
            }
            off.push(-prod.sqrt());
        }
        let m = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                t.diag[i]
            } else if j == i + 1 {
                off[i]
            } else if i == j + 1 {
                off[j]
            } else {
                0.0
            }
        });
        let mut eigs: Vec<f64> = m.symmetric_eigenvalues().iter().cloned().collect();
        if eigs.iter().any(|x| !x.is_finite()) {
            return Err(Error::EigenSolver("non-finite eigenvalue".into()));
        }
        eigs.sort_by(|a, b| a.total_cmp(b));
        Ok(eigs)
    }

    pub fn smallest_eigenvalue(&self) -> Result<f64> {
        Ok(self.real_eigenvalues()?[0])
    }
}

impl ResolventProvider for ConeModeOperator {
    fn dim(&self) -> usize {
        self.matrix.diag.len()
    }

    fn apply(&self, v: &[C64]) -> Vec<C64> {
        self.matrix.apply(v)
    }

    fn resolve(&self, lambda: C64, rhs: &[C64]) -> Result<Vec<C64>> {
        Ok(self.matrix.factor_shifted(lambda)?.solve(rhs))
    }

    fn resolve_adjoint(&self, lambda: C64, rhs: &[C64]) -> Result<Vec<C64>> {
        let transposed = Tridiagonal {
            sub: self.matrix.sup.clone(),
            diag: self.matrix.diag.clone(),
            sup: self.matrix.sub.clone(),
        };
        Ok(transposed.factor_shifted(lambda.conj())?.solve(rhs))
    }

    fn resolvent_matrix(&self, lambda: C64) -> Result<CMatrix> {
        let lu = self.matrix.factor_shifted(lambda)?;
        let n = self.dim();
        let mut out = CMatrix::zeros(n, n);
        let mut e = vec![C64::default(); n];
        for j in 0..n {
            e[j] = C64::from(1.0);
            let col = lu.solve(&e);
            e[j] = C64::default();
            for (i, v) in col.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        Ok(out)
    }

    fn to_dense(&self) -> CMatrix {
        self.matrix.to_dense()
    }

    fn prefers_dense(&self) -> bool {
        false
    }

    fn eigenvalues(&self) -> Result<Vec<C64>> {
        Ok(self.real_eigenvalues()?.into_iter().map(C64::from).collect())
    }

    fn scale(&self) -> Result<OperatorScale> {
        let eigs = self.real_eigenvalues()?;
        if self.symmetry_defect() <= 1e-12 {
            let norm = eigs.iter().map(|x| x.abs()).fold(0.0, f64::max);
            let min = eigs.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min);
            let spectral_angle = if eigs.iter().any(|x| *x < 0.0) { PI } else { 0.0 };
            return Ok(OperatorScale {
                norm,
                inv_norm: (min > 0.0).then(|| 1.0 / min),
                spectral_angle,
                resolvent_bound: None,
            });
        }
        let m = self.to_dense();
        let norm = crate::linalg::spectral_norm(&m);
        let smin = crate::linalg::smallest_singular_value(&m);
        Ok(OperatorScale {
            norm,
            inv_norm: (smin > 0.0).then(|| 1.0 / smin),
            spectral_angle: if eigs.iter().any(|x| *x < 0.0) { PI } else { 0.0 },
            resolvent_bound: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Dilation {
    /// Grid shift `k` with `ρ = e^{k h}`.
    pub shift: i64,
    pub rho: f64,
    pub prefactor: f64,
    grid: WeightedGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DilationResult {
    pub value: Vec<C64>,
    /// `|‖u‖^p − ‖κu‖^p|^{1/p}`: the norm of the mass shifted off the grid.
    pub defect: f64,
}

/// `(κ_ρ u)(t) = ρ^{(n+1)/p} u(ρ t)` on the grid, for `ρ = e^{k h}`.
pub fn dilation_operator(rho: f64, grid: &WeightedGrid) -> Result<Dilation> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::IncompatibleScaling(rho));
    }
    let iso = WeightedGrid::isometry_gamma(grid.n, grid.p);
    if (grid.gamma - iso).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "dilations are isometric only for gamma = {iso}, grid has {}",
            grid.gamma
        )));
    }
    let k = rho.ln() / grid.step();
    let shift = k.round();
    if (k - shift).abs() > 1e-9 * k.abs().max(1.0) {
        return Err(Error::IncompatibleScaling(rho));
    }
    Ok(Dilation {
        shift: shift as i64,
        rho,
        prefactor: rho.powf((grid.n as f64 + 1.0) / grid.p),
        grid: *grid,
    })
}

impl Dilation {
    pub fn apply(&self, u: &[C64]) -> Result<DilationResult> {
        let norm_before = discrete_norm(u, &self.grid)?;
        let n = u.len() as i64;
        let value: Vec<C64> = (0..n)
            .map(|i| {
                let src = i - self.shift;
                if (0..n).contains(&src) {
                    u[src as usize] * self.prefactor
                } else {
                    C64::default()
                }
            })
            .collect();
        let norm_after = discrete_norm(&value, &self.grid)?;
        let p = self.grid.p;
        Ok(DilationResult {
            defect: (norm_before.powf(p) - norm_after.powf(p)).abs().powf(1.0 / p),
            value,
        })
    }

    pub fn inverse(&self) -> Dilation {
        Dilation {
            shift: -self.shift,
            rho: 1.0 / self.rho,
            prefactor: 1.0 / self.prefactor,
            grid: self.grid,
        }
    }
}

/// Trapezoid approximation of `∫ t^z u(t) dt/t = ∫_0^R e^{−z r} u(e^{−r}) dr`.
///
/// The integrand at the end points `r = 0` and `r = R` is extrapolated linearly from the
/// two nearest interior nodes.
pub fn mellin_transform_samples(u: &[C64], grid: &WeightedGrid, z: &[C64]) -> Result<Vec<C64>> {
    if u.len() != grid.nodes {
        return Err(Error::DimensionMismatch {
            expected: grid.nodes,
            got: u.len(),
        });
    }
    let h = grid.step();
    let n = u.len();
    let (u_start, u_end) = if n >= 2 {
        (u[0] * 2.0 - u[1], u[n - 1] * 2.0 - u[n - 2])
    } else {
        (u[0], u[0])
    };
    Ok(z
        .iter()
        .map(|&zz| {
            let mut acc = (u_start + u_end * (-zz * grid.depth).exp()) * 0.5;
            for (i, ui) in u.iter().enumerate() {
                let r = (i + 1) as f64 * h;
                acc += ui * (-zz * r).exp();
            }
            acc * h
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;
    use proptest::prelude::*;

    /// Second-order finite-difference Dirichlet/Neumann Laplacian eigenvalues on `[0, L]`.
    fn fd_interval_eigs(length: f64, bc: BoundaryCondition, m: usize) -> Vec<f64> {
        let h = length / m as f64;
        let (size, first, last) = match bc {
            BoundaryCondition::Dirichlet => (m - 1, 2.0, 2.0),
            BoundaryCondition::Neumann => (m + 1, 1.0, 1.0),
        };
        let mat = DMatrix::from_fn(size, size, |i, j| {
            let d = if i == j {
                if i == 0 {
                    first
                } else if i == size - 1 {
                    last
                } else {
                    2.0
                }
            } else if i.abs_diff(j) == 1 {
                -1.0
            } else {
                0.0
            };
            d / (h * h)
        });
        let mut e: Vec<f64> = mat.symmetric_eigenvalues().iter().map(|x| -x).collect();
        e.sort_by(|a, b| b.total_cmp(a));
        e
    }

    #[test]
    fn interval_spectra_match_finite_differences() {
        let d = interval_spectrum(PI, BoundaryCondition::Dirichlet, 3).unwrap();
        assert_eq!(d.eigs, vec![-1.0, -4.0, -9.0]);
        let fd = fd_interval_eigs(PI, BoundaryCondition::Dirichlet, 400);
        for (a, b) in d.eigs.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-4 * a.abs(), "{a} vs {b}");
        }
        let half = interval_spectrum(PI / 2.0, BoundaryCondition::Dirichlet, 1).unwrap();
        assert!((half.eigs[0] + 4.0).abs() < 1e-13);
        let fd = fd_interval_eigs(PI / 2.0, BoundaryCondition::Dirichlet, 400);
        assert!((fd[0] + 4.0).abs() < 1e-4 * 4.0);
        let nm = interval_spectrum(PI, BoundaryCondition::Neumann, 2).unwrap();
        assert_eq!(nm.eigs, vec![0.0, -1.0]);
        // the flux-form Neumann matrix is similar to the symmetric one with the same spectrum
        let fd = fd_interval_eigs(PI, BoundaryCondition::Neumann, 400);
        assert!(fd[0].abs() < 1e-9);
        assert!((fd[1] + 1.0).abs() < 1e-2);
        assert!(interval_spectrum(PI, BoundaryCondition::Dirichlet, 0).is_err());
    }

    #[test]
    fn spectrum_list_validation() {
        assert!(CrossSectionSpectrum::from_list(vec![-1.0, -4.0], BoundaryCondition::Dirichlet).is_ok());
        assert!(CrossSectionSpectrum::from_list(vec![0.0, -1.0], BoundaryCondition::Dirichlet).is_err());
        assert!(CrossSectionSpectrum::from_list(vec![-1.0], BoundaryCondition::Neumann).is_err());
        assert!(CrossSectionSpectrum::from_list(vec![-1.0, -1.0], BoundaryCondition::Dirichlet).is_err());
    }

    #[test]
    fn hand_stencil_n1() {
        let grid = WeightedGrid::new(1.0, 3, 0.0, 1, 2.0).unwrap();
        let op = assemble_mode_operator(1, 0.0, -4.0, &grid).unwrap();
        let h = 0.25;
        let r = [0.25, 0.5, 0.75];
        let w: Vec<f64> = r.iter().map(|ri: &f64| (-ri).exp()).collect(); // t^{(n+1)/2}
        let mut a = DMatrix::<f64>::zeros(3, 3);
        for i in 0..3 {
            let g = (2.0 * r[i]).exp();
            a[(i, i)] = g * (2.0 / (h * h) + 4.0);
            if i > 0 {
                a[(i, i - 1)] = -g / (h * h);
            }
            if i < 2 {
                a[(i, i + 1)] = -g / (h * h);
            }
        }
        let m = op.dense_real();
        for i in 0..3 {
            for j in 0..3 {
                let expected = w[i] * a[(i, j)] / w[j];
                assert!((m[(i, j)] - expected).abs() < 1e-12 * expected.abs().max(1.0), "({i},{j})");
            }
        }
    }

    #[test]
    fn symmetric_at_gamma_zero() {
        for n in 1..=4 {
            let grid = WeightedGrid::new(5.0, 120, 0.0, n, 2.0).unwrap();
            let op = assemble_mode_operator(n, 0.0, -3.0, &grid).unwrap();
            assert!(op.symmetry_defect() <= 1e-10, "n = {n}: {}", op.symmetry_defect());
        }
        let grid = WeightedGrid::new(5.0, 120, 0.3, 3, 2.0).unwrap();
        let op = assemble_mode_operator(3, 0.3, -3.0, &grid).unwrap();
        assert!(op.symmetry_defect() > 1e-6);
    }

    #[test]
    fn neumann_zero_mode_decreases_with_depth() {
        let mins: Vec<f64> = [2.0, 4.0, 6.0]
            .iter()
            .map(|&r| {
                let grid = WeightedGrid::new(r, (60.0 * r) as usize, 0.0, 1, 2.0).unwrap();
                assemble_mode_operator(1, 0.0, 0.0, &grid).unwrap().smallest_eigenvalue().unwrap()
            })
            .collect();
        assert!(mins[0] > mins[1] && mins[1] > mins[2] && mins[2] > 0.0, "{mins:?}");
    }

    #[test]
    fn depth_guard() {
        let grid = WeightedGrid::new(14.0, 10, 0.0, 1, 2.0).unwrap();
        assert!(matches!(assemble_mode_operator(1, 0.0, -1.0, &grid), Err(Error::TruncationTooDeep(_))));
        let grid = WeightedGrid::new(2.0, 10, 0.0, 2, 2.0).unwrap();
        assert!(assemble_mode_operator(1, 0.0, -1.0, &grid).is_err());
    }

    #[test]
    fn mode_resolvent_residual() {
        let grid = WeightedGrid::new(4.0, 80, 0.0, 3, 2.0).unwrap();
        let op = assemble_mode_operator(3, 0.0, -4.0, &grid).unwrap();
        let rhs: Vec<C64> = (0..80).map(|i| c((i as f64 * 0.3).sin(), 0.1)).collect();
        for lambda in [-0.5, -10.0, -1e4] {
            let l = C64::from(lambda);
            let x = op.resolve(l, &rhs).unwrap();
            let ax = op.apply(&x);
            let res: f64 = x.iter().zip(&ax).zip(&rhs).map(|((x, ax), b)| (l * x - ax - b).norm_sqr()).sum::<f64>().sqrt();
            assert!(res <= 1e-10 * crate::linalg::vec_norm(&rhs));
        }
    }

    #[test]
    fn dirichlet_modes_positive_and_stable() {
        let spec = interval_spectrum(PI, BoundaryCondition::Dirichlet, 3).unwrap();
        for &lj in &spec.eigs {
            let coarse = WeightedGrid::new(4.0, 100, 0.0, 3, 2.0).unwrap();
            let fine = WeightedGrid::new(5.0, 200, 0.0, 3, 2.0).unwrap();
            let a = assemble_mode_operator(3, 0.0, lj, &coarse).unwrap().smallest_eigenvalue().unwrap();
            let b = assemble_mode_operator(3, 0.0, lj, &fine).unwrap().smallest_eigenvalue().unwrap();
            assert!(a > 0.0 && b > 0.0);
            assert!((a - b).abs() < 0.05 * a, "{a} vs {b}");
        }
    }

    #[test]
    fn dilation_examples() {
        let (n, p) = (2, 3.0);
        let grid = WeightedGrid::new(4.0, 40, WeightedGrid::isometry_gamma(n, p), n, p).unwrap();
        let h = grid.step();
        let id = dilation_operator(1.0, &grid).unwrap();
        let u: Vec<C64> = (0..40).map(|i| c((i as f64).cos(), 0.5)).collect();
        let r = id.apply(&u).unwrap();
        assert_eq!(r.value, u);
        assert_eq!(r.defect, 0.0);

        let one = dilation_operator(h.exp(), &grid).unwrap();
        let mut interior = vec![C64::default(); 40];
        for (i, x) in interior.iter_mut().enumerate().take(30).skip(10) {
            *x = c(i as f64, 1.0);
        }
        let r = one.apply(&interior).unwrap();
        let before = discrete_norm(&interior, &grid).unwrap();
        let after = discrete_norm(&r.value, &grid).unwrap();
        assert!((before - after).abs() < 1e-12 * before);

        let mut last = vec![C64::default(); 40];
        last[39] = C64::from(2.0);
        let r = one.apply(&last).unwrap();
        let contribution = discrete_norm(&last, &grid).unwrap();
        assert!((r.defect - contribution).abs() < 1e-12 * contribution);

        assert!(matches!(dilation_operator(1.3, &grid), Err(Error::IncompatibleScaling(_))));
    }

    #[test]
    fn mellin_examples() {
        let grid = WeightedGrid::new(5.0, 2000, 0.0, 1, 2.0).unwrap();
        let ones = vec![C64::from(1.0); 2000];
        let m = mellin_transform_samples(&ones, &grid, &[C64::from(1.0)]).unwrap();
        assert!((m[0] - (1.0 - (-5.0f64).exp())).norm() < 1e-6);
        let t: Vec<C64> = grid.t_nodes().into_iter().map(C64::from).collect();
        let m = mellin_transform_samples(&t, &grid, &[C64::from(1.0)]).unwrap();
        assert!((m[0] - (1.0 - (-10.0f64).exp()) / 2.0).norm() < 1e-5);
        let zero = vec![C64::default(); 2000];
        let m = mellin_transform_samples(&zero, &grid, &[c(0.3, 2.0)]).unwrap();
        assert_eq!(m[0], C64::default());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn norm_unwinds_to_weighted_lp(vals in proptest::collection::vec(-5.0f64..5.0, 12),
                                       gamma in -2.0f64..2.0, p in 1.1f64..6.0, n in 1u32..5,
                                       scale in -3.0f64..3.0) {
            let grid = WeightedGrid::new(3.0, 12, gamma, n, p).unwrap();
            let u: Vec<C64> = vals.iter().map(|&x| C64::from(x)).collect();
            let w = grid.weights();
            let direct: f64 = u.iter().zip(&w).map(|(x, w)| (x.norm() * w).powf(p)).sum::<f64>().powf(1.0 / p)
                * grid.step().powf(1.0 / p);
            let norm = discrete_norm(&u, &grid).unwrap();
            prop_assert!((norm - direct).abs() <= 1e-12 * direct.max(1e-300));
            let scaled: Vec<C64> = u.iter().map(|x| x * scale).collect();
            prop_assert!((discrete_norm(&scaled, &grid).unwrap() - scale.abs() * norm).abs() <= 1e-12 * norm.max(1e-300));
        }

        #[test]
        fn isometry_weight_gives_plain_lp(vals in proptest::collection::vec(-5.0f64..5.0, 10),
                                          p in 1.1f64..6.0, n in 1u32..5) {
            let grid = WeightedGrid::new(2.0, 10, WeightedGrid::isometry_gamma(n, p), n, p).unwrap();
            let u: Vec<C64> = vals.iter().map(|&x| C64::from(x)).collect();
            // plain ℓ_p norm of t_i^{(n+1)/p} u_i times h^{1/p}
            let t = grid.t_nodes();
            let plain: f64 = u.iter().zip(&t).map(|(x, t)| (x.norm() * t.powf((n as f64 + 1.0) / p)).powf(p)).sum::<f64>()
                .powf(1.0 / p) * grid.step().powf(1.0 / p);
            prop_assert!((discrete_norm(&u, &grid).unwrap() - plain).abs() <= 1e-12 * plain.max(1e-300));
        }
    }
}
