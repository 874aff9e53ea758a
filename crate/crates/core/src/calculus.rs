//! Dunford–Riesz functional calculus by contour quadrature: `f(A)` for H-class
//! functions, imaginary powers, heat semigroups, empirical H∞ constants and the
//! maximal-regularity Cauchy solver.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cone_laplacian::ConeModeOperator;
use crate::error::{Error, Result};
use crate::hclass::{principal_pow, sup_norm_estimate, Certificate, FunctionSpec, HFunction, DEFAULT_DECADES, DEFAULT_SAMPLES_PER_DECADE};
use crate::linalg::{c, checked_inverse, ordered_reduce, vec_norm, weighted_spectral_norm, CMatrix, C64};
use crate::operators::{scaled_resolvent_norm, sectoriality_scan, spectrum_in_sector, ResolventProvider, ScanGrid};
use crate::sectors::{boundary_contour_scaled, log_ellipse, spectral_wedge, Contour, ContourKind, OperatorScale, Sector};

pub const DEFAULT_SEED: u64 = 0x5EED;
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_NODES: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CalcPath {
    SectorBoundary,
    SpectralWedge,
    LogEllipse,
    RegularizedExtrapolation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContourEcho {
    pub kind: ContourKind,
    pub theta: f64,
    pub delta: f64,
    pub tol: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub step: f64,
    pub nodes: usize,
}

impl From<&Contour> for ContourEcho {
    fn from(ct: &Contour) -> Self {
        Self {
            kind: ct.kind,
            theta: ct.theta,
            delta: ct.delta,
            tol: ct.tol,
            r_min: ct.r_min,
            r_max: ct.r_max,
            step: ct.step,
            nodes: ct.len(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CalcResult<T> {
    pub value: T,
    pub error_estimate: f64,
    pub nodes_used: usize,
    pub path: CalcPath,
    pub contour: Option<ContourEcho>,
}

fn path_of(kind: ContourKind) -> CalcPath {
    match kind {
        ContourKind::SectorBoundary => CalcPath::SectorBoundary,
        ContourKind::SpectralWedge => CalcPath::SpectralWedge,
        ContourKind::LogEllipse => CalcPath::LogEllipse,
    }
}

/// Certificate constant the contour's tail bound must be scaled by; `1` for closed contours.
fn certificate_for(f: &HFunction, contour: &Contour) -> Result<f64> {
    if contour.kind != ContourKind::SectorBoundary {
        return Ok(1.0);
    }
    let cert = f.certificate().ok_or_else(|| {
        Error::CertificateMismatch(format!("{} has no decay certificate; use a closed contour", f.label()))
    })?;
    if (contour.theta - f.sector().theta()).abs() > 1e-12 {
        return Err(Error::CertificateMismatch(format!(
            "contour angle {} differs from the function's sector angle {}",
            contour.theta,
            f.sector().theta()
        )));
    }
    if cert.delta + 1e-12 < contour.delta {
        return Err(Error::CertificateMismatch(format!(
            "function decays with delta = {} but the contour assumes {}",
            cert.delta, contour.delta
        )));
    }
    Ok(cert.c_bound)
}

/// Sector-boundary contour sized for `f` on an operator of the given scale.
pub fn contour_for(f: &HFunction, scale: &OperatorScale, tol: f64, max_nodes: usize) -> Result<Contour> {
    let Certificate { delta, c_bound } = f
        .certificate()
        .ok_or_else(|| Error::CertificateMismatch(format!("{} has no decay certificate", f.label())))?;
    boundary_contour_scaled(f.sector(), delta, tol / c_bound, max_nodes, scale)
}

fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `Σ_k w_k f(λ_k) (λ_k − A)^{-1} v`, with the compensation term on sector contours.
pub fn dunford_apply(
    provider: &dyn ResolventProvider,
    f: &HFunction,
    contour: &Contour,
    v: &[C64],
) -> Result<CalcResult<Vec<C64>>> {
    let scale = if contour.kind == ContourKind::SectorBoundary {
        Some(provider.scale()?)
    } else {
        None
    };
    dunford_apply_scaled(provider, f, contour, v, scale.as_ref())
}

pub fn dunford_apply_scaled(
    provider: &dyn ResolventProvider,
    f: &HFunction,
    contour: &Contour,
    v: &[C64],
    scale: Option<&OperatorScale>,
) -> Result<CalcResult<Vec<C64>>> {
    let n = provider.dim();
    if v.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: v.len() });
    }
    let c_f = certificate_for(f, contour)?;
    let compensated = contour.compensated();
    let (fine, coarse) = ordered_reduce(
        contour.len(),
        || (vec![C64::default(); n], vec![C64::default(); n]),
        |k, acc| {
            let lambda = contour.nodes[k];
            let fl = f.eval(lambda);
            if fl == C64::default() {
                return Ok(());
            }
            let mut x = provider.resolve(lambda, v)?;
            if compensated {
                let s = 1.0 / (lambda + 1.0);
                x.iter_mut().zip(v).for_each(|(xi, vi)| *xi -= vi * s);
            }
            let (a, b) = (contour.weights[k] * fl, contour.coarse_weights[k] * fl);
            for i in 0..n {
                acc.0[i] += a * x[i];
                acc.1[i] += b * x[i];
            }
            Ok(())
        },
        |t, p| {
            t.0.iter_mut().zip(p.0).for_each(|(a, b)| *a += b);
            t.1.iter_mut().zip(p.1).for_each(|(a, b)| *a += b);
        },
    )?;
    let diff: Vec<C64> = fine.iter().zip(&coarse).map(|(a, b)| a - b).collect();
    let tail = match scale {
        Some(s) => contour.tail_bound(c_f, s) * vec_norm(v),
        None => 0.0,
    };
    Ok(CalcResult {
        value: fine,
        error_estimate: tail + contour.richardson_factor() * vec_norm(&diff),
        nodes_used: contour.len(),
        path: path_of(contour.kind),
        contour: Some(contour.into()),
    })
}

/// `f(A)` assembled from dense resolvents at every node.
pub fn dunford_matrix(provider: &dyn ResolventProvider, f: &HFunction, contour: &Contour) -> Result<CalcResult<CMatrix>> {
    let scale = if contour.kind == ContourKind::SectorBoundary && provider.dim() > 0 {
        Some(provider.scale()?)
    } else {
        None
    };
    dunford_matrix_scaled(provider, f, contour, scale.as_ref())
}

/// The error estimate bounds the Frobenius norm of the error.
pub fn dunford_matrix_scaled(
    provider: &dyn ResolventProvider,
    f: &HFunction,
    contour: &Contour,
    scale: Option<&OperatorScale>,
) -> Result<CalcResult<CMatrix>> {
    let n = provider.dim();
    let c_f = certificate_for(f, contour)?;
    if n == 0 {
        return Ok(CalcResult {
            value: CMatrix::zeros(0, 0),
            error_estimate: 0.0,
            nodes_used: contour.len(),
            path: path_of(contour.kind),
            contour: Some(contour.into()),
        });
    }
    let compensated = contour.compensated();
    let (fine, coarse) = ordered_reduce(
        contour.len(),
        || (CMatrix::zeros(n, n), CMatrix::zeros(n, n)),
        |k, acc| {
            let lambda = contour.nodes[k];
            let fl = f.eval(lambda);
            if fl == C64::default() {
                return Ok(());
            }
            let mut r = provider.resolvent_matrix(lambda)?;
            if compensated {
                let s = 1.0 / (lambda + 1.0);
                for i in 0..n {
                    r[(i, i)] -= s;
                }
            }
            acc.0 += &r * (contour.weights[k] * fl);
            acc.1 += &r * (contour.coarse_weights[k] * fl);
            Ok(())
        },
        |t, p| {
            t.0 += p.0;
            t.1 += p.1;
        },
    )?;
    let tail = match scale {
        Some(s) => contour.tail_bound(c_f, s) * (n as f64).sqrt(),
        None => 0.0,
    };
    let err = tail + contour.richardson_factor() * frobenius(&(&fine - &coarse));
    Ok(CalcResult {
        value: fine,
        error_estimate: err,
        nodes_used: contour.len(),
        path: path_of(contour.kind),
        contour: Some(contour.into()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImaginaryPowerMode {
    /// `λ^{it} λ^ε (1+λ)^{-2ε}` for `ε ∈ {1e-1, 1e-2, 1e-3}`, extrapolated to `ε = 0`.
    Regularized,
    /// Closed contour `log λ = ellipse` around the spectrum, `f = λ^{it}` directly.
    ClosedContour,
}

pub const REGULARIZATION_SEQUENCE: [f64; 3] = [1e-1, 1e-2, 1e-3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImaginaryPowerOptions {
    pub tol: f64,
    pub max_nodes: usize,
    /// Resolvent bound `M_R`; scanned with the default grid when absent.
    pub m_r: Option<f64>,
}

impl Default for ImaginaryPowerOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_nodes: DEFAULT_MAX_NODES,
            m_r: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ImaginaryPowerReport {
    pub t: f64,
    pub mode: ImaginaryPowerMode,
    pub norm: f64,
    pub m_r: f64,
    /// `M_R e^{|t|θ}`.
    pub bound: f64,
    pub ratio: f64,
    /// `ratio ≤ 1.1`.
    pub growth_ok: bool,
    pub error_estimate: f64,
    pub nodes_used: usize,
}

/// Lagrange weights `L_i(0)` for interpolation nodes `xs`.
fn lagrange_at_zero(xs: &[f64]) -> Vec<f64> {
    (0..xs.len())
        .map(|i| {
            xs.iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, xj)| xj / (xj - xs[i]))
                .product()
        })
        .collect()
}

/// Ellipse in `w = log λ` around the log-spectrum, inside `|Im w| < θ`.
fn log_ellipse_geometry(eigs: &[C64], sector: &Sector) -> Result<(C64, f64, f64)> {
    let mut logs = Vec::with_capacity(eigs.len());
    for z in eigs {
        if z.norm() == 0.0 || sector.contains(*z) {
            return Err(Error::SpectrumIntersectsSector(*z));
        }
        logs.push(z.ln());
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for w in &logs {
        x0 = x0.min(w.re);
        x1 = x1.max(w.re);
        y0 = y0.min(w.im);
        y1 = y1.max(w.im);
    }
    let center = c(0.5 * (x0 + x1), 0.5 * (y0 + y1));
    let (half_x, half_y) = (0.5 * (x1 - x0), 0.5 * (y1 - y0));
    let b_max = sector.theta() - center.im.abs();
    if b_max <= half_y * (1.0 + 1e-9) + 1e-9 {
        let worst = eigs
            .iter()
            .cloned()
            .max_by(|a, b| a.arg().abs().total_cmp(&b.arg().abs()))
            .unwrap_or_default();
        return Err(Error::SpectrumIntersectsSector(worst));
    }
    let b = 0.5 * (half_y + b_max);
    let a = half_x / (1.0 - (half_y / b).powi(2)).sqrt() + 1.0;
    Ok((center, a, b))
}

/// `A^{it}` on a closed log-ellipse, doubling the node count from 32 until the
/// full and half rules agree to `tol` (at most 8192 nodes).
pub fn imaginary_power_closed(provider: &dyn ResolventProvider, sector: &Sector, t: f64, tol: f64) -> Result<CalcResult<CMatrix>> {
    let eigs = provider.eigenvalues()?;
    if eigs.is_empty() {
        return Ok(CalcResult {
            value: CMatrix::zeros(0, 0),
            error_estimate: 0.0,
            nodes_used: 0,
            path: CalcPath::LogEllipse,
            contour: None,
        });
    }
    let (center, a, b) = log_ellipse_geometry(&eigs, sector)?;
    let f = HFunction::user_defined("lambda^(it)", sector, None, move |l| principal_pow(l, c(0.0, t)));
    let mut nodes = 32;
    loop {
        let contour = log_ellipse(center, a, b, nodes);
        let res = dunford_matrix_scaled(provider, &f, &contour, None)?;
        if res.error_estimate <= tol || nodes >= 8192 {
            return Ok(res);
        }
        nodes *= 2;
    }
}

/// Regularized imaginary power extrapolated to `ε = 0`.
pub fn imaginary_power_regularized(
    provider: &dyn ResolventProvider,
    sector: &Sector,
    t: f64,
    tol: f64,
    max_nodes: usize,
) -> Result<CalcResult<CMatrix>> {
    let n = provider.dim();
    let scale = provider.scale()?;
    let eigs = provider.eigenvalues()?;
    let weights = lagrange_at_zero(&REGULARIZATION_SEQUENCE);
    let mut value = CMatrix::zeros(n, n);
    let mut err = 0.0;
    let mut nodes = 0;
    let mut echo = None;
    for (eps, w) in REGULARIZATION_SEQUENCE.iter().zip(&weights) {
        let f = HFunction::imaginary_power(t, *eps, sector)?;
        let contour = contour_for(&f, &scale, tol, max_nodes)?;
        let res = dunford_matrix_scaled(provider, &f, &contour, Some(&scale))?;
        value += res.value * C64::from(*w);
        err += w.abs() * res.error_estimate;
        nodes += res.nodes_used;
        echo = res.contour;
    }
    // interpolation remainder: ε1 ε2 ε3 |log g|³ / 6 with g = λ/(1+λ)², times |λ^{it}|
    let eps_prod: f64 = REGULARIZATION_SEQUENCE.iter().product();
    let remainder = eigs
        .iter()
        .filter(|z| z.norm() > 0.0)
        .map(|z| {
            let lg = (z.ln() - 2.0 * (1.0 + z).ln()).norm();
            let growth = (t.abs() * z.arg().abs()).exp();
            growth * lg.powi(3) / 6.0 * (lg * REGULARIZATION_SEQUENCE[0]).exp()
        })
        .fold(0.0, f64::max);
    Ok(CalcResult {
        value,
        error_estimate: err + eps_prod * remainder,
        nodes_used: nodes,
        path: CalcPath::RegularizedExtrapolation,
        contour: echo,
    })
}

/// `A^{it}` with a growth check against `M_R e^{|t|θ}`.
pub fn imaginary_power(
    provider: &dyn ResolventProvider,
    sector: &Sector,
    t: f64,
    mode: ImaginaryPowerMode,
    opts: &ImaginaryPowerOptions,
) -> Result<(CalcResult<CMatrix>, ImaginaryPowerReport)> {
    let res = match mode {
        ImaginaryPowerMode::Regularized => imaginary_power_regularized(provider, sector, t, opts.tol, opts.max_nodes)?,
        ImaginaryPowerMode::ClosedContour => imaginary_power_closed(provider, sector, t, opts.tol)?,
    };
    let m_r = match opts.m_r {
        Some(m) => m,
        None => {
            let grid = ScanGrid::default_for(provider, sector)?;
            sectoriality_scan(provider, sector, &grid)?.m_r
        }
    };
    let weights = provider.norm_weights();
    let norm = weighted_spectral_norm(&res.value, weights.as_deref());
    let bound = m_r * (t.abs() * sector.theta()).exp();
    let ratio = norm / bound;
    let report = ImaginaryPowerReport {
        t,
        mode,
        norm,
        m_r,
        bound,
        ratio,
        growth_ok: ratio <= 1.1,
        error_estimate: res.error_estimate,
        nodes_used: res.nodes_used,
    };
    Ok((res, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeatPositivity {
    pub min_entry: f64,
    pub max_entry: f64,
    pub nonnegative: bool,
}

/// Entrywise nonnegativity up to the quadrature error `err` and `1e-10` relative round-off.
pub fn heat_positivity(m: &CMatrix, err: f64) -> HeatPositivity {
    let min_entry = m.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    let max_entry = m.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    HeatPositivity {
        min_entry,
        max_entry,
        nonnegative: min_entry >= -(err + 1e-10 * max_entry.abs()),
    }
}

/// Wedge contour for `e^{-τλ}` around a spectrum in the open right half-plane.
fn heat_contour(provider: &dyn ResolventProvider, scale: &OperatorScale, tau: f64, tol: f64) -> Result<(Contour, f64)> {
    let inv = scale
        .inv_norm
        .ok_or_else(|| Error::Unsupported("heat semigroup quadrature needs an invertible operator".into()))?;
    let phi = scale.spectral_angle;
    if phi >= FRAC_PI_2 - 1e-6 {
        return Err(Error::Unsupported(format!(
            "spectrum must lie in the open right half-plane (spectral angle {phi})"
        )));
    }
    let angle = 0.5 * (phi + FRAC_PI_2);
    let strip = 0.5 * (FRAC_PI_2 - phi);
    let cos = angle.cos();
    let m_guess = 1.0 / (angle - phi).sin();
    let x = (4.0 * 10.0 * m_guess / (PI * tol)).ln().max(1.0);
    let r_max = x / (tau * cos);
    let r_min = (tol * PI / (8.0 * inv)).min(0.5 / inv).min(0.5 * r_max);
    // resolvent bound along both rays
    let decades = (r_max / r_min).log10().max(1.0);
    let count = (2.0 * decades).ceil() as usize;
    let mut m = 0.0f64;
    for i in 0..=count {
        let r = r_min * (r_max / r_min).powf(i as f64 / count as f64);
        for sign in [-1.0, 1.0] {
            m = m.max(scaled_resolvent_norm(provider, C64::from_polar(r, sign * angle), 20)?);
        }
    }
    let contour = spectral_wedge(angle, r_min, r_max, strip, tol);
    let upper = m * (-tau * r_max * cos).exp() / (PI * tau * r_max * cos);
    let lower = 2.0 * inv * r_min / PI;
    Ok((contour, upper + lower))
}

/// `e^{-τA}` by a closed wedge contour; the sector must satisfy `θ ≤ π/2`.
pub fn heat_semigroup(provider: &dyn ResolventProvider, tau: f64, sector: &Sector, tol: f64) -> Result<CalcResult<CMatrix>> {
    let f = HFunction::exponential(tau, sector)?;
    let n = provider.dim();
    if n == 0 {
        return Ok(CalcResult {
            value: CMatrix::zeros(0, 0),
            error_estimate: 0.0,
            nodes_used: 0,
            path: CalcPath::SpectralWedge,
            contour: None,
        });
    }
    let scale = provider.scale()?;
    let (contour, tails) = heat_contour(provider, &scale, tau, tol)?;
    let mut res = dunford_matrix_scaled(provider, &f, &contour, None)?;
    res.error_estimate += tails;
    Ok(res)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HinfOptions {
    pub tol: f64,
    pub max_nodes: usize,
    /// Number of contour halvings applied on top of the tolerance-driven step.
    pub refinements: u32,
}

impl Default for HinfOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_nodes: DEFAULT_MAX_NODES,
            refinements: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HinfRow {
    pub label: String,
    pub spec: Option<FunctionSpec>,
    pub norm_f_of_a: Option<f64>,
    pub sup_norm: Option<f64>,
    pub ratio: Option<f64>,
    pub nodes: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HinfReport {
    pub m_hat: f64,
    pub seed: u64,
    pub family_size: usize,
    pub rows: Vec<HinfRow>,
}

/// Power quotients, regularized imaginary powers and `family_size` seeded random
/// rational members with poles at angular distance at least `asin(0.1)` inside `Λ`.
pub fn hinf_family(sector: &Sector, family_size: usize, seed: u64) -> Result<Vec<HFunction>> {
    let mut family = Vec::new();
    for delta in [0.25, 0.5, 1.0] {
        family.push(HFunction::power_quotient(delta, sector)?);
    }
    for t in [-2.0, -1.0, 1.0, 2.0] {
        family.push(HFunction::imaginary_power(t, 0.1, sector)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = 0.1f64.asin();
    let (lo, hi) = (sector.theta() + margin, 2.0 * PI - sector.theta() - margin);
    for _ in 0..family_size {
        let k = rng.gen_range(1..=3);
        let delta = [0.25, 0.5, 1.0][rng.gen_range(0..3)];
        let poles: Vec<C64> = (0..k)
            .map(|_| {
                let r = 10f64.powf(rng.gen_range(-1.0..1.0));
                C64::from_polar(r, if lo < hi { rng.gen_range(lo..hi) } else { PI })
            })
            .collect();
        family.push(HFunction::shifted_rational(delta, &poles, sector)?);
    }
    Ok(family)
}

/// `M̂ = max ‖f(A)‖ / ‖f‖_∞` over the seeded family; failures are reported per row.
pub fn hinf_bound_estimate(
    provider: &dyn ResolventProvider,
    sector: &Sector,
    family_size: usize,
    seed: u64,
    opts: &HinfOptions,
) -> Result<HinfReport> {
    let family = hinf_family(sector, family_size, seed)?;
    let scale = provider.scale()?;
    let weights = provider.norm_weights();
    let rows: Vec<HinfRow> = family
        .par_iter()
        .map(|f| {
            let mut row = HinfRow {
                label: f.label().to_string(),
                spec: f.spec().cloned(),
                norm_f_of_a: None,
                sup_norm: None,
                ratio: None,
                nodes: 0,
                error: None,
            };
            let run = || -> Result<(f64, f64, usize)> {
                let mut contour = contour_for(f, &scale, opts.tol, opts.max_nodes)?;
                for _ in 0..opts.refinements {
                    contour = contour.refined();
                }
                let res = dunford_matrix_scaled(provider, f, &contour, Some(&scale))?;
                let norm = weighted_spectral_norm(&res.value, weights.as_deref());
                let sup = sup_norm_estimate(f, sector, DEFAULT_SAMPLES_PER_DECADE, DEFAULT_DECADES)?;
                Ok((norm, sup, contour.len()))
            };
            match run() {
                Ok((norm, sup, nodes)) => {
                    row.norm_f_of_a = Some(norm);
                    row.sup_norm = Some(sup);
                    row.ratio = Some(norm / sup);
                    row.nodes = nodes;
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect();
    let m_hat = rows.iter().filter_map(|r| r.ratio).fold(0.0, f64::max);
    Ok(HinfReport {
        m_hat,
        seed,
        family_size,
        rows,
    })
}

/// Uniform grid `τ_k = k T / steps`, `k = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    pub t_final: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, steps: usize) -> Result<Self> {
        if !(t_final > 0.0 && t_final.is_finite()) || steps < 2 {
            return Err(Error::InvalidParameter(format!(
                "time grid needs T > 0 and at least 2 steps, got T = {t_final}, steps = {steps}"
            )));
        }
        Ok(Self { t_final, steps })
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| k as f64 * self.dt()).collect()
    }
}

struct Propagator {
    a: CMatrix,
    e: CMatrix,
    phi: CMatrix,
}

/// Exponential integrator for `u' + A u = f`, `u(0) = 0`, one block per mode:
/// `u_{k+1} = e^{-ΔτA} u_k + A^{-1}(I − e^{-ΔτA}) f(τ_k + Δτ/2)`.
pub struct CauchySolver {
    grid: TimeGrid,
    props: Vec<Propagator>,
    cells: Vec<f64>,
    pub semigroup_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub taus: Vec<f64>,
    /// `u[j][k][i]`: mode `j`, time `τ_k`, node `i`.
    pub u: Vec<Vec<Vec<C64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaxRegReport {
    pub r: f64,
    pub p: f64,
    pub norm_du: f64,
    pub norm_au: f64,
    pub norm_f: f64,
    pub rho: f64,
}

impl CauchySolver {
    /// `cells[j]` is the spatial quadrature weight of mode `j`.
    pub fn new(modes: &[&dyn ResolventProvider], cells: &[f64], grid: TimeGrid, tol: f64) -> Result<Self> {
        if cells.len() != modes.len() {
            return Err(Error::DimensionMismatch {
                expected: modes.len(),
                got: cells.len(),
            });
        }
        let half_plane = Sector::new(FRAC_PI_2)?;
        let dt = grid.dt();
        let built: Vec<Result<(Propagator, f64)>> = modes
            .par_iter()
            .map(|op| {
                let rep = spectrum_in_sector(*op, &half_plane, false)?;
                if let Some(z) = rep.offenders.first() {
                    return Err(Error::EllipticityFailed(format!("mode eigenvalue {z} lies in the closed left half-plane")));
                }
                let heat = heat_semigroup(*op, dt, &half_plane, tol)?;
                let a = op.to_dense();
                let n = a.nrows();
                let a_inv = checked_inverse(&a, C64::default())?;
                let phi = a_inv * (CMatrix::identity(n, n) - &heat.value);
                if heat.value.iter().chain(phi.iter()).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Err(Error::StepTooLarge(format!("non-finite propagator at dt = {dt}")));
                }
                Ok((Propagator { a, e: heat.value, phi }, heat.error_estimate))
            })
            .collect();
        let mut props = Vec::with_capacity(modes.len());
        let mut semigroup_error = 0.0f64;
        for b in built {
            let (p, e) = b?;
            semigroup_error = semigroup_error.max(e);
            props.push(p);
        }
        Ok(Self {
            grid,
            props,
            cells: cells.to_vec(),
            semigroup_error,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    /// March the trajectory; `forcing(j, τ)` returns the forcing of mode `j` at time `τ`.
    pub fn solve<F>(&self, forcing: F) -> Result<Trajectory>
    where
        F: Fn(usize, f64) -> Vec<C64> + Sync,
    {
        let dt = self.grid.dt();
        let taus = self.grid.times();
        let u: Vec<Result<Vec<Vec<C64>>>> = self
            .props
            .par_iter()
            .enumerate()
            .map(|(j, p)| {
                let n = p.a.nrows();
                let mut states = Vec::with_capacity(taus.len());
                let mut cur = DVector::<C64>::zeros(n);
                states.push(cur.as_slice().to_vec());
                for k in 0..self.grid.steps {
                    let f = forcing(j, taus[k] + 0.5 * dt);
                    if f.len() != n {
                        return Err(Error::DimensionMismatch { expected: n, got: f.len() });
                    }
                    cur = &p.e * cur + &p.phi * DVector::from_vec(f);
                    if cur.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                        return Err(Error::StepTooLarge(format!("overflow at step {k}")));
                    }
                    states.push(cur.as_slice().to_vec());
                }
                Ok(states)
            })
            .collect();
        Ok(Trajectory {
            taus,
            u: u.into_iter().collect::<Result<_>>()?,
        })
    }

    /// `ρ = (‖u'‖ + ‖Au‖) / ‖f‖` in `L_r(0, T; X)`, `X` the mode-weighted `ℓ_p` space.
    pub fn max_reg_report<F>(&self, traj: &Trajectory, forcing: F, r: f64, p: f64) -> Result<MaxRegReport>
    where
        F: Fn(usize, f64) -> Vec<C64>,
    {
        if !(r > 1.0 && p >= 1.0) {
            return Err(Error::InvalidParameter(format!("need r > 1 and p >= 1, got r = {r}, p = {p}")));
        }
        let dt = self.grid.dt();
        let steps = self.grid.steps;
        let spatial = |vals: &dyn Fn(usize) -> Vec<C64>| -> f64 {
            let mut acc = 0.0;
            for (j, cell) in self.cells.iter().enumerate() {
                acc += vals(j).iter().map(|z| z.norm().powf(p)).sum::<f64>() * cell;
            }
            acc.powf(1.0 / p)
        };
        let time_norm = |samples: &[f64]| -> f64 {
            let mut acc = 0.0;
            for (k, s) in samples.iter().enumerate() {
                let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
                acc += w * dt * s.powf(r);
            }
            acc.powf(1.0 / r)
        };
        let derivative = |j: usize, k: usize| -> Vec<C64> {
            let u = &traj.u[j];
            let n = u[0].len();
            (0..n)
                .map(|i| {
                    if k == 0 {
                        (-3.0 * u[0][i] + 4.0 * u[1][i] - u[2][i]) / (2.0 * dt)
                    } else if k == steps {
                        (3.0 * u[k][i] - 4.0 * u[k - 1][i] + u[k - 2][i]) / (2.0 * dt)
                    } else {
                        (u[k + 1][i] - u[k - 1][i]) / (2.0 * dt)
                    }
                })
                .collect()
        };
        let mut du = Vec::with_capacity(steps + 1);
        let mut au = Vec::with_capacity(steps + 1);
        let mut ff = Vec::with_capacity(steps + 1);
        for k in 0..=steps {
            du.push(spatial(&|j| derivative(j, k)));
            au.push(spatial(&|j| {
                (&self.props[j].a * DVector::from_column_slice(&traj.u[j][k])).as_slice().to_vec()
            }));
            ff.push(spatial(&|j| forcing(j, traj.taus[k])));
        }
        let (norm_du, norm_au, norm_f) = (time_norm(&du), time_norm(&au), time_norm(&ff));
        Ok(MaxRegReport {
            r,
            p,
            norm_du,
            norm_au,
            norm_f,
            rho: if norm_f > 0.0 { (norm_du + norm_au) / norm_f } else { 0.0 },
        })
    }
}

/// Seeded smooth forcing `Σ_{m=1..3} c_{jm} sin(mπτ/T) sin(mπ r/r_f)` on `r ≤ r_f`,
/// sampled on each mode's `r`-nodes; vanishes at `τ = 0`.
#[derive(Debug, Clone, Serialize)]
pub struct SineForcing {
    pub t_final: f64,
    pub support: f64,
    pub coeffs: Vec<[f64; 3]>,
    r_nodes: Vec<Vec<f64>>,
}

impl SineForcing {
    pub fn random(r_nodes: Vec<Vec<f64>>, t_final: f64, support: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = r_nodes
            .iter()
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        Self {
            t_final,
            support,
            coeffs,
            r_nodes,
        }
    }

    pub fn eval(&self, j: usize, tau: f64) -> Vec<C64> {
        self.r_nodes[j]
            .iter()
            .map(|&r| {
                if r > self.support {
                    return C64::default();
                }
                let v: f64 = (1..=3)
                    .map(|m| {
                        let m_f = m as f64;
                        self.coeffs[j][m - 1] * (m_f * PI * tau / self.t_final).sin() * (m_f * PI * r / self.support).sin()
                    })
                    .sum();
                C64::from(v)
            })
            .collect()
    }
}

/// Cauchy problem on cone modes with a single `L_r` report.
pub fn cauchy_solve<F>(
    modes: &[ConeModeOperator],
    forcing: F,
    grid: TimeGrid,
    r: f64,
) -> Result<(Trajectory, MaxRegReport)>
where
    F: Fn(usize, f64) -> Vec<C64> + Sync,
{
    let providers: Vec<&dyn ResolventProvider> = modes.iter().map(|m| m as &dyn ResolventProvider).collect();
    let cells: Vec<f64> = modes.iter().map(|m| m.grid.step()).collect();
    let p = modes.first().map_or(2.0, |m| m.grid.p);
    let solver = CauchySolver::new(&providers, &cells, grid, DEFAULT_TOL)?;
    let traj = solver.solve(&forcing)?;
    let report = solver.max_reg_report(&traj, &forcing, r, p)?;
    Ok((traj, report))
}
