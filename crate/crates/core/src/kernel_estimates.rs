//! Discrete Hardy-type kernel operators on the weighted cone grid and their
//! `H^{0,0}_p` operator norms.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cone_laplacian::{dilation_operator, discrete_norm, WeightedGrid};
use crate::error::{Error, Result};
use crate::linalg::{lanczos_max_eigenvalue, C64};

pub const RANDOM_TEST_VECTORS: usize = 200;
pub const BOYD_ITERATIONS: usize = 40;
pub const LANCZOS_STEPS: usize = 150;
/// Relative slack in the pass criterion `‖G‖ ≤ (1 + 0.05)/ε`.
pub const HARDY_SLACK: f64 = 0.05;

/// Kernel `k(t, s) = t^{−(n+1)/2−ε} s^{−(n+1)/2+ε}` for `s ≤ t`, zero otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenKernelSpec {
    pub epsilon: f64,
    pub n: u32,
    pub grid: WeightedGrid,
}

impl GreenKernelSpec {
    pub fn new(epsilon: f64, n: u32, grid: WeightedGrid) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be > 0, got {epsilon}")));
        }
        if grid.gamma != 0.0 || grid.n != n {
            return Err(Error::InvalidParameter(format!(
                "kernel grid must have gamma = 0 and n = {n}, got gamma = {}, n = {}",
                grid.gamma, grid.n
            )));
        }
        Ok(Self { epsilon, n, grid })
    }

    fn half(&self) -> f64 {
        (self.n as f64 + 1.0) / 2.0
    }

    pub fn kernel(&self, t: f64, s: f64) -> f64 {
        if s > t {
            return 0.0;
        }
        t.powf(-self.half() - self.epsilon) * s.powf(-self.half() + self.epsilon)
    }

    /// Swapped exponents, supported on `s ≥ t`.
    pub fn partner_kernel(&self, t: f64, s: f64) -> f64 {
        if s < t {
            return 0.0;
        }
        t.powf(-self.half() + self.epsilon) * s.powf(-self.half() - self.epsilon)
    }
}

/// `G_ij = k(t_i, t_j) t_j^n Δt_j` with `Δt_j = t_j h` (the log-grid cell).
///
/// Entries are formed in log coordinates, `G_ij = h e^{−((n+1)/2+ε)(r_j − r_i)}` for `j ≥ i`,
/// so no power of a tiny `t` is ever evaluated.
pub fn assemble_hardy_operator(spec: &GreenKernelSpec) -> DMatrix<f64> {
    let r = spec.grid.r_nodes();
    let h = spec.grid.step();
    let a = spec.half() + spec.epsilon;
    let n = r.len();
    DMatrix::from_fn(n, n, |i, j| if j >= i { h * (-a * (r[j] - r[i])).exp() } else { 0.0 })
}

/// Assembly of the partner kernel, `G'_ij = k'(t_i, t_j) t_j^{n+1} h`.
pub fn assemble_partner_operator(spec: &GreenKernelSpec) -> DMatrix<f64> {
    let r = spec.grid.r_nodes();
    let h = spec.grid.step();
    let a = spec.half() - spec.epsilon;
    let n = r.len();
    DMatrix::from_fn(n, n, |i, j| if j <= i { h * (a * (r[i] - r[j])).exp() } else { 0.0 })
}

/// `D G D^{-1}` with `D = diag(t_i^{(n+1)/2})`: the operator acting on `v = t^{(n+1)/2} u`
/// in plain `ℓ_p(h)`.
pub fn conjugated(g: &DMatrix<f64>, spec: &GreenKernelSpec) -> DMatrix<f64> {
    let r = spec.grid.r_nodes();
    let a = spec.half();
    DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| g[(i, j)] * (a * (r[j] - r[i])).exp())
}

fn lp_norm(v: &[f64], p: f64) -> f64 {
    v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p)
}

fn ratio(k: &DMatrix<f64>, x: &[f64], p: f64) -> f64 {
    let y = k * nalgebra::DVector::from_column_slice(x);
    let nx = lp_norm(x, p);
    if nx == 0.0 {
        0.0
    } else {
        lp_norm(y.as_slice(), p) / nx
    }
}

/// Nonlinear power iteration for `‖K‖_{p→p}` started from `x`; each iterate's ratio is a
/// lower bound.
fn boyd_refine(k: &DMatrix<f64>, mut x: Vec<f64>, p: f64, iterations: usize) -> f64 {
    let q = p / (p - 1.0);
    let kt = k.transpose();
    let mut best = ratio(k, &x, p);
    for _ in 0..iterations {
        let y = k * nalgebra::DVector::from_column_slice(&x);
        let dual: Vec<f64> = y.iter().map(|v| v.signum() * v.abs().powf(p - 1.0)).collect();
        let z = &kt * nalgebra::DVector::from_vec(dual);
        x = z.iter().map(|v| v.signum() * v.abs().powf(q - 1.0)).collect();
        let nx = lp_norm(&x, p);
        if nx == 0.0 || !nx.is_finite() {
            break;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        best = best.max(ratio(k, &x, p));
    }
    best
}

/// Lower estimate of the `ℓ_p → ℓ_p` norm of a nonnegative matrix.
///
/// `p = 2`: Lanczos on `KᵀK`. Otherwise the best of [`RANDOM_TEST_VECTORS`] seeded nonnegative
/// vectors and the constant vector, refined by [`BOYD_ITERATIONS`] nonlinear power steps.
pub fn lp_operator_norm(k: &DMatrix<f64>, p: f64, seed: u64) -> f64 {
    let n = k.ncols();
    if n == 0 {
        return 0.0;
    }
    if (p - 2.0).abs() < 1e-14 {
        let kt = k.transpose();
        let ev = lanczos_max_eigenvalue(
            |x| {
                let y = k * nalgebra::DVector::from_column_slice(x);
                (&kt * y).as_slice().to_vec()
            },
            n,
            LANCZOS_STEPS,
        );
        return ev.max(0.0).sqrt();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best_x = vec![1.0; n];
    let mut best = ratio(k, &best_x, p);
    for _ in 0..RANDOM_TEST_VECTORS {
        let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let r = ratio(k, &x, p);
        if r > best {
            best = r;
            best_x = x;
        }
    }
    best.max(boyd_refine(k, best_x, p, BOYD_ITERATIONS))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HardyCheck {
    pub epsilon: f64,
    pub p: f64,
    pub n: u32,
    pub nodes: usize,
    pub depth: f64,
    pub norm_estimate: f64,
    /// `1/ε`.
    pub bound: f64,
    pub pass: bool,
}

/// Discrete `H^{0,0}_p` norm of `G` against the bound `1/ε`.
pub fn hardy_norm_check(spec: &GreenKernelSpec, p: f64, seed: u64) -> Result<HardyCheck> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!("p must lie in (1, inf), got {p}")));
    }
    let k = conjugated(&assemble_hardy_operator(spec), spec);
    let norm_estimate = lp_operator_norm(&k, p, seed);
    let bound = 1.0 / spec.epsilon;
    Ok(HardyCheck {
        epsilon: spec.epsilon,
        p,
        n: spec.n,
        nodes: spec.grid.nodes,
        depth: spec.grid.depth,
        norm_estimate,
        bound,
        pass: norm_estimate <= bound * (1.0 + HARDY_SLACK),
    })
}

/// All `(ε, p, grid)` combinations, in input order.
pub fn hardy_table(epsilons: &[f64], ps: &[f64], grids: &[(usize, f64)], n: u32, seed: u64) -> Result<Vec<HardyCheck>> {
    let mut cases = Vec::new();
    for &(nodes, depth) in grids {
        for &p in ps {
            for &eps in epsilons {
                cases.push((nodes, depth, p, eps));
            }
        }
    }
    cases
        .par_iter()
        .map(|&(nodes, depth, p, eps)| {
            let grid = WeightedGrid::new(depth, nodes, 0.0, n, p)?;
            hardy_norm_check(&GreenKernelSpec::new(eps, n, grid)?, p, seed)
        })
        .collect()
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 || points.iter().any(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::InvalidParameter("slope fit needs at least two positive points".into()));
    }
    let m = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|(x, y)| (x.ln(), y.ln())).unzip();
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("slope fit needs distinct abscissae".into()));
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaledKernelReport {
    pub eta_abs: f64,
    pub shift: i64,
    /// `‖κ_η^{-1} G κ_η u − G u‖` in `H^{0,0}_p`.
    pub defect: f64,
    pub relative_defect: f64,
    /// `‖G u − 1_W G 1_W u‖` for the window `W` of nodes that survive a shift by `shift`.
    pub clipped_mass: f64,
}

/// Dilation covariance of the kernel operator: `G` commutes with `κ_η`, `η = e^{kh}`,
/// up to the mass the grid shift truncates.
pub fn scaled_kernel_check(eta_abs: f64, spec: &GreenKernelSpec, u: &[C64]) -> Result<ScaledKernelReport> {
    let grid = spec.grid;
    if u.len() != grid.nodes {
        return Err(Error::DimensionMismatch {
            expected: grid.nodes,
            got: u.len(),
        });
    }
    let iso = grid.with_gamma(WeightedGrid::isometry_gamma(grid.n, grid.p));
    let kappa = dilation_operator(eta_abs, &iso)?;
    let g = assemble_hardy_operator(spec).map(C64::from);
    let apply = |x: &[C64]| (&g * nalgebra::DVector::from_column_slice(x)).as_slice().to_vec();
    let gu = apply(u);
    let moved = kappa.apply(u)?.value;
    let back = kappa.inverse().apply(&apply(&moved))?.value;
    let diff: Vec<C64> = back.iter().zip(&gu).map(|(a, b)| a - b).collect();
    let defect = discrete_norm(&diff, &grid)?;
    let base = discrete_norm(&gu, &grid)?;
    // mass the shift cannot transport: inputs and outputs outside the surviving window
    let k = kappa.shift.unsigned_abs() as usize;
    let nodes = grid.nodes;
    let keep_in = |m: usize| kappa.shift <= 0 || m + k < nodes;
    let keep_out = |i: usize| if kappa.shift > 0 { i + k < nodes } else { i >= k };
    let windowed: Vec<C64> = u.iter().enumerate().map(|(m, x)| if keep_in(m) { *x } else { C64::default() }).collect();
    let gw = apply(&windowed);
    let clipped: Vec<C64> = (0..nodes).map(|i| if keep_out(i) { gu[i] - gw[i] } else { gu[i] }).collect();
    Ok(ScaledKernelReport {
        eta_abs,
        shift: kappa.shift,
        defect,
        relative_defect: if base > 0.0 { defect / base } else { 0.0 },
        clipped_mass: discrete_norm(&clipped, &grid)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(eps: f64, n: u32, nodes: usize, depth: f64, p: f64) -> GreenKernelSpec {
        GreenKernelSpec::new(eps, n, WeightedGrid::new(depth, nodes, 0.0, n, p).unwrap()).unwrap()
    }

    #[test]
    fn matches_direct_kernel_evaluation() {
        let s = spec(0.3, 2, 12, 3.0, 2.0);
        let g = assemble_hardy_operator(&s);
        let t = s.grid.t_nodes();
        let h = s.grid.step();
        for i in 0..12 {
            for j in 0..12 {
                let direct = s.kernel(t[i], t[j]) * t[j].powi(2) * t[j] * h;
                assert!((g[(i, j)] - direct).abs() <= 1e-12 * direct.abs().max(1e-300));
                if t[j] > t[i] {
                    assert_eq!(g[(i, j)], 0.0);
                }
            }
        }
        let one = spec(0.7, 4, 1, 2.0, 2.0);
        let g1 = assemble_hardy_operator(&one);
        assert!((g1[(0, 0)] - one.grid.step()).abs() < 1e-15);
        let zero = &g * nalgebra::DVector::zeros(12);
        assert!(zero.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn partner_is_transpose_after_conjugation() {
        let s = spec(0.4, 1, 30, 4.0, 2.0);
        let k = conjugated(&assemble_hardy_operator(&s), &s);
        let kp = conjugated(&assemble_partner_operator(&s), &s);
        assert!((kp - k.transpose()).amax() < 1e-12);
        let t = s.grid.t_nodes();
        let g = assemble_partner_operator(&s);
        assert!((g[(10, 3)] - s.partner_kernel(t[10], t[3]) * t[3].powi(2) * s.grid.step()).abs() < 1e-12);
        assert_eq!(g[(3, 10)], 0.0);
        assert_eq!(s.partner_kernel(t[3], t[10]), 0.0);
    }

    #[test]
    fn hardy_examples() {
        for (nodes, depth) in [(200, 8.0), (400, 10.0)] {
            let c = hardy_norm_check(&spec(0.5, 0, nodes, depth, 2.0), 2.0, 1).unwrap();
            assert!(c.pass && c.norm_estimate <= 2.0 * 1.05, "{c:?}");
            assert_eq!(c.bound, 2.0);
        }
        let c = hardy_norm_check(&spec(1.0, 0, 200, 8.0, 2.0), 2.0, 1).unwrap();
        assert!(c.norm_estimate <= 1.05);
        let shallow = hardy_norm_check(&spec(0.5, 0, 200, 8.0, 2.0), 2.0, 1).unwrap().norm_estimate;
        let deep = hardy_norm_check(&spec(0.5, 0, 400, 10.0, 2.0), 2.0, 1).unwrap().norm_estimate;
        assert!(deep >= shallow - 1e-6);
    }

    #[test]
    fn p_norm_of_known_matrices() {
        let id = DMatrix::<f64>::identity(5, 5) * 3.0;
        assert!((lp_operator_norm(&id, 3.0, 0) - 3.0).abs() < 1e-12);
        // rank-one all-ones: ‖J‖_{p→p} = n
        let j = DMatrix::<f64>::from_element(4, 4, 1.0);
        assert!((lp_operator_norm(&j, 1.5, 0) - 4.0).abs() < 1e-9);
        assert!((lp_operator_norm(&j, 2.0, 0) - 4.0).abs() < 1e-9);
        // Riesz–Thorin: ‖K‖_p ≤ max(row sums)^{1/p'} · max(col sums)^{1/p}
        let s = spec(0.25, 0, 150, 12.0, 3.0);
        let k = conjugated(&assemble_hardy_operator(&s), &s);
        let row = (0..150).map(|i| k.row(i).sum()).fold(0.0, f64::max);
        let col = (0..150).map(|j| k.column(j).sum()).fold(0.0, f64::max);
        for p in [1.5, 2.0, 3.0] {
            let est = lp_operator_norm(&k, p, 3);
            let schur = row.powf(1.0 - 1.0 / p) * col.powf(1.0 / p);
            assert!(est <= schur * (1.0 + 1e-9));
            assert!(est >= 0.7 * schur, "p = {p}: {est} vs {schur}");
        }
    }

    #[test]
    fn slope_fit() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 10.0].iter().map(|x| (*x, 3.0 * x)).collect();
        assert!((loglog_slope(&pts).unwrap() - 1.0).abs() < 1e-12);
        assert!(loglog_slope(&[(1.0, 1.0)]).is_err());
    }

    #[test]
    fn table_order_and_bounds() {
        let rows = hardy_table(&[0.5, 1.0], &[2.0], &[(100, 6.0)], 0, 1).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].bound, 2.0);
        assert_eq!(rows[1].bound, 1.0);
        assert!(GreenKernelSpec::new(0.0, 0, WeightedGrid::new(1.0, 4, 0.0, 0, 2.0).unwrap()).is_err());
    }

    #[test]
    fn dilation_covariance() {
        let s = spec(0.5, 2, 120, 6.0, 2.0);
        let h = s.grid.step();
        let interior: Vec<C64> = (0..120)
            .map(|i| if (20..80).contains(&i) { C64::from(((i as f64) * 0.3).sin() + 1.5) } else { C64::default() })
            .collect();
        let id = scaled_kernel_check(1.0, &s, &interior).unwrap();
        assert_eq!(id.defect, 0.0);
        let one = scaled_kernel_check(h.exp(), &s, &interior).unwrap();
        assert!(one.relative_defect <= 1e-10, "{one:?}");
        let edge: Vec<C64> = (0..120).map(|i| C64::from(if i > 100 { 1.0 } else { 0.0 })).collect();
        let five = scaled_kernel_check((5.0 * h).exp(), &s, &edge).unwrap();
        assert!(five.defect > 0.0);
        assert!((five.defect - five.clipped_mass).abs() <= 1e-10 * five.clipped_mass);
        assert!(matches!(scaled_kernel_check(1.3 * h.exp(), &s, &edge), Err(Error::IncompatibleScaling(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn triangular_and_nonnegative(eps in 0.05f64..2.0, n in 0u32..5, nodes in 2usize..80, depth in 0.5f64..10.0) {
            let s = spec(eps, n, nodes, depth, 2.0);
            for g in [assemble_hardy_operator(&s), assemble_hardy_operator(&GreenKernelSpec { grid: WeightedGrid::new(depth, 2 * nodes, 0.0, n, 2.0).unwrap(), ..s })] {
                for i in 0..g.nrows() {
                    for j in 0..g.ncols() {
                        prop_assert!(g[(i, j)] >= 0.0 && g[(i, j)].is_finite());
                        if j < i {
                            prop_assert_eq!(g[(i, j)], 0.0);
                        }
                    }
                }
            }
        }

        #[test]
        fn hardy_bound_holds_on_fine_grids(eps in 0.1f64..1.0, p in 1.2f64..4.0) {
            let depth = 6.0 / eps;
            let nodes = (depth * eps / 0.05).ceil() as usize;
            let c = hardy_norm_check(&spec(eps, 0, nodes, depth, p), p, 9).unwrap();
            prop_assert!(c.pass, "{:?}", c);
        }
    }
}
