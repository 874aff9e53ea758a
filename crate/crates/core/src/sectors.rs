//! Sectors `Λ(θ)` in the complex plane, their `μ`-th root sectors, and quadrature
//! contours along the sector boundary.
//!
//! A sector is the closed set `{r e^{iφ} : r ≥ 0, θ ≤ φ ≤ 2π − θ}`; it straddles the
//! negative real axis. Functions of the calculus live on the complement, which
//! contains the positive real axis, so every logarithm in this crate uses the
//! principal branch (cut along the negative real axis, inside the sector).

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, C64};

/// Argument of `z` in `[0, 2π)`.
pub fn arg_0_2pi(z: C64) -> f64 {
    let a = z.im.atan2(z.re);
    if a < 0.0 {
        a + TAU
    } else {
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    theta: f64,
}

impl Sector {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta < PI) {
            return Err(Error::InvalidParameter(format!(
                "sector angle must lie in (0, pi), got {theta}"
            )));
        }
        Ok(Self { theta })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Closed-sector membership; the vertex `0` always belongs to the sector.
    pub fn contains(&self, lambda: C64) -> bool {
        if lambda == C64::default() {
            return true;
        }
        let phi = arg_0_2pi(lambda);
        self.theta <= phi && phi <= TAU - self.theta
    }

    /// Membership in the open interior (boundary rays and vertex excluded).
    pub fn contains_interior(&self, lambda: C64) -> bool {
        if lambda == C64::default() {
            return false;
        }
        let phi = arg_0_2pi(lambda);
        self.theta < phi && phi < TAU - self.theta
    }

    /// Signed angular distance from `lambda` to the boundary rays: positive outside
    /// the sector (in the complement), negative inside.
    pub fn angular_margin(&self, lambda: C64) -> f64 {
        let phi = lambda.arg().abs();
        self.theta - phi
    }

    /// `κ` with `|λ + 1| ≥ κ (1 + |λ|²)^{1/2}` on both boundary rays.
    pub(crate) fn shift_margin(&self) -> f64 {
        let cos = self.theta.cos();
        if cos >= 0.0 {
            1.0
        } else {
            (1.0 - cos.abs()).sqrt()
        }
    }
}

/// The sector `Σ(θ, μ) = {s e^{iα} : θ/μ ≤ α ≤ (2π − θ)/μ}` whose `μ`-th power is `Λ(θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RootSector {
    theta: f64,
    mu: u32,
}

impl RootSector {
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn mu(&self) -> u32 {
        self.mu
    }

    pub fn angle_range(&self) -> (f64, f64) {
        let mu = self.mu as f64;
        (self.theta / mu, (TAU - self.theta) / mu)
    }

    pub fn contains(&self, eta: C64) -> bool {
        if eta == C64::default() {
            return true;
        }
        let (lo, hi) = self.angle_range();
        let alpha = arg_0_2pi(eta);
        lo <= alpha && alpha <= hi
    }

    pub fn base(&self) -> Sector {
        Sector { theta: self.theta }
    }
}

pub fn mu_root_sector(sector: &Sector, mu: i64) -> Result<RootSector> {
    if mu < 1 {
        return Err(Error::InvalidOrder(mu));
    }
    Ok(RootSector {
        theta: sector.theta,
        mu: mu as u32,
    })
}

/// Size information about an operator that contour truncation depends on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorScale {
    /// Upper bound for `||A||` in the provider's norm.
    pub norm: f64,
    /// Upper bound for `||A^{-1}||`, absent for singular operators.
    pub inv_norm: Option<f64>,
    /// Largest `|arg λ|` over the nonzero spectrum.
    pub spectral_angle: f64,
    /// A bound for `sup ||λ (λ − A)^{-1}||` on the sector, when known.
    pub resolvent_bound: Option<f64>,
}

impl OperatorScale {
    pub fn unit() -> Self {
        Self {
            norm: 1.0,
            inv_norm: Some(1.0),
            spectral_angle: 0.0,
            resolvent_bound: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContourKind {
    /// Both rays of `∂Λ`; integrand compensated by the zero-mean term `f(λ)/(λ+1)`.
    SectorBoundary,
    /// Two rays from the origin enclosing the spectrum, for bounded `f` that decays
    /// in the right half-plane on invertible operators.
    SpectralWedge,
    /// A closed ellipse in `w = log λ` around the spectrum.
    LogEllipse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Counterclockwise around the region holding the spectrum.
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum TailModel {
    /// Bounds that only use the H-class decay and unit resolvent constants.
    Generic,
    /// Bounds that use `||A||` and `||A^{-1}||` of the operator the contour was built for.
    Scaled { norm: f64, inv_norm: Option<f64> },
    /// Closed contours have no truncation tail.
    Closed,
}

#[derive(Debug, Clone)]
pub struct Contour {
    pub kind: ContourKind,
    pub orientation: Orientation,
    /// Ray angle (boundary contours and wedges); ellipse half-height otherwise.
    pub theta: f64,
    pub delta: f64,
    pub tol: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub step: f64,
    pub tail: TailModel,
    /// Analyticity half-width (in log-radius) used to pick the step.
    pub strip: f64,
    pub nodes: Vec<C64>,
    pub weights: Vec<C64>,
    /// Weights of the rule with twice the step, zero on the dropped nodes.
    pub coarse_weights: Vec<C64>,
}

/// Contour serialization: complex numbers as `[re, im]` pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContourJson {
    pub theta: f64,
    pub delta: f64,
    pub tol: f64,
    pub nodes: Vec<[f64; 2]>,
    pub weights: Vec<[f64; 2]>,
    pub r_min: f64,
    pub r_max: f64,
}

const STRIP_SAFETY: f64 = 0.85;

fn trapezoid_step(strip: f64, tol: f64) -> f64 {
    TAU * STRIP_SAFETY * strip / (1.0 + 4.0 / tol).ln()
}

fn discretization_model(strip: f64, step: f64) -> f64 {
    2.0 / ((TAU * STRIP_SAFETY * strip / step).exp() - 1.0)
}

/// Lay out trapezoid nodes in `s = log r` on the two rays `arg λ = ±angle`.
/// The lower ray runs outward, the upper ray inward.
fn ray_nodes(angle: f64, s_min: f64, s_max: f64, step: f64) -> (Vec<C64>, Vec<C64>, Vec<C64>, f64) {
    let mut m = ((s_max - s_min) / step).ceil() as usize;
    if m % 2 == 1 {
        m += 1;
    }
    let m = m.max(2);
    let h = (s_max - s_min) / m as f64;
    let prefactor = C64::new(0.0, -1.0 / TAU); // 1 / (2πi)
    let mut nodes = Vec::with_capacity(2 * (m + 1));
    let mut weights = Vec::with_capacity(2 * (m + 1));
    let mut coarse = Vec::with_capacity(2 * (m + 1));
    for (sign, dir) in [(-1.0f64, 1.0f64), (1.0, -1.0)] {
        let ray = C64::from_polar(1.0, sign * angle);
        for j in 0..=m {
            let s = s_min + j as f64 * h;
            let lambda = ray * s.exp();
            let end = if j == 0 || j == m { 0.5 } else { 1.0 };
            let w = prefactor * lambda * (dir * h * end);
            let cw = if j % 2 == 0 {
                prefactor * lambda * (dir * 2.0 * h * end)
            } else {
                C64::default()
            };
            nodes.push(lambda);
            weights.push(w);
            coarse.push(cw);
        }
    }
    (nodes, weights, coarse, h)
}

impl Contour {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Whether the integrand carries the zero-mean compensation `-f(λ)/(λ+1)`.
    pub fn compensated(&self) -> bool {
        self.kind == ContourKind::SectorBoundary
    }

    /// Same truncation, half the step: twice the nodes.
    pub fn refined(&self) -> Contour {
        match self.kind {
            ContourKind::SectorBoundary | ContourKind::SpectralWedge => {
                let (nodes, weights, coarse, h) = ray_nodes(
                    self.theta,
                    self.r_min.ln(),
                    self.r_max.ln(),
                    self.step / 2.0,
                );
                Contour {
                    nodes,
                    weights,
                    coarse_weights: coarse,
                    step: h,
                    ..self.clone()
                }
            }
            ContourKind::LogEllipse => {
                let n = self.nodes.len() * 2;
                let (center, a, b) = self.ellipse_params();
                log_ellipse(center, a, b, n)
            }
        }
    }

    fn ellipse_params(&self) -> (C64, f64, f64) {
        // stored as: r_min = a, r_max = b, step = center.re, delta = center.im
        (c(self.step, self.delta), self.r_min, self.r_max)
    }

    /// Truncation tail bound for an integrand `f` with certificate constant `c`
    /// applied to an operator of the given scale. Infinite when the bound's
    /// hypotheses do not hold for that operator.
    pub fn tail_bound(&self, c_bound: f64, scale: &OperatorScale) -> f64 {
        let kappa = Sector { theta: self.theta }.shift_margin();
        let d = self.delta;
        let upper_generic = |m: f64| c_bound * (m + 1.0 / kappa) * self.r_max.powf(-d) / (PI * d);
        let lower_generic = |m: f64| c_bound * (m + 1.0 / kappa) * self.r_min.powf(d) / (PI * d);
        match self.tail {
            TailModel::Closed => 0.0,
            TailModel::Generic => {
                let up = if self.r_max >= 2.0 * scale.norm {
                    upper_generic(2.0)
                } else {
                    scale.resolvent_bound.map_or(f64::INFINITY, upper_generic)
                };
                let low = match scale.inv_norm {
                    Some(m) if self.r_min <= 0.5 / m => lower_generic(1.0),
                    _ => scale.resolvent_bound.map_or(f64::INFINITY, lower_generic),
                };
                up + low
            }
            TailModel::Scaled { .. } => {
                let up = if self.r_max >= (2.0 * scale.norm).max(1.0) {
                    2.0 * c_bound * (scale.norm + 1.0) * self.r_max.powf(-1.0 - d)
                        / (PI * kappa * (1.0 + d))
                } else {
                    scale.resolvent_bound.map_or(f64::INFINITY, upper_generic)
                };
                let low = match scale.inv_norm {
                    Some(m) if self.r_min <= (0.5 / m).min(1.0) => {
                        c_bound * (2.0 * m + 1.0 / kappa) * self.r_min.powf(1.0 + d)
                            / (PI * (1.0 + d))
                    }
                    _ => scale.resolvent_bound.map_or(f64::INFINITY, lower_generic),
                };
                up + low
            }
        }
    }

    /// A-priori error model for unit certificate constant: tails plus trapezoid term.
    pub fn error_model(&self, scale: &OperatorScale) -> f64 {
        let disc = match self.kind {
            ContourKind::LogEllipse => 0.0,
            _ => discretization_model(self.strip, self.step),
        };
        self.tail_bound(1.0, scale) + disc
    }

    /// Factor turning `|S_h − S_{2h}|` into an estimate of the error of `S_h`:
    /// `10 ρ/(1 − ρ)` with `ρ = 1/(e^{π d'/h} + 1)`, `d'` the safety-reduced strip.
    /// Closed log-ellipse rules return `1`.
    pub fn richardson_factor(&self) -> f64 {
        match self.kind {
            ContourKind::LogEllipse => 1.0,
            _ => {
                let rho = 1.0 / ((PI * STRIP_SAFETY * self.strip / self.step).exp() + 1.0);
                (10.0 * rho / (1.0 - rho)).min(1.0)
            }
        }
    }

    /// Quadrature of the scalar Dunford integral for `f` at the point `a`,
    /// returning the value and an error estimate (tail + full-vs-coarse difference).
    pub fn apply_scalar<F: Fn(C64) -> C64>(&self, f: F, a: C64, c_bound: f64) -> Result<(C64, f64)> {
        let mut fine = C64::default();
        let mut coarse = C64::default();
        for ((lambda, w), cw) in self.nodes.iter().zip(&self.weights).zip(&self.coarse_weights) {
            let denom = lambda - a;
            if denom.norm() <= 1e-14 * lambda.norm().max(1.0) {
                return Err(Error::ContourHitsSpectrum(*lambda));
            }
            let mut g = f(*lambda) / denom;
            if self.compensated() {
                g -= f(*lambda) / (lambda + 1.0);
            }
            fine += w * g;
            coarse += cw * g;
        }
        let scale = OperatorScale {
            norm: a.norm(),
            inv_norm: if a.norm() > 0.0 { Some(1.0 / a.norm()) } else { None },
            spectral_angle: a.arg().abs(),
            resolvent_bound: None,
        };
        let err = self.tail_bound(c_bound, &scale) + (fine - coarse).norm();
        Ok((fine, err))
    }

    pub fn to_json(&self) -> ContourJson {
        ContourJson {
            theta: self.theta,
            delta: self.delta,
            tol: self.tol,
            nodes: self.nodes.iter().map(|z| [z.re, z.im]).collect(),
            weights: self.weights.iter().map(|z| [z.re, z.im]).collect(),
            r_min: self.r_min,
            r_max: self.r_max,
        }
    }
}

fn finish_rays(
    kind: ContourKind,
    angle: f64,
    delta: f64,
    tol: f64,
    max_nodes: usize,
    s_min: f64,
    s_max: f64,
    strip: f64,
    tail: TailModel,
    tails: f64,
) -> Result<Contour> {
    let step = trapezoid_step(strip, tol);
    let mut m = ((s_max - s_min) / step).ceil() as usize;
    if m % 2 == 1 {
        m += 1;
    }
    let required = 2 * (m.max(2) + 1);
    if required > max_nodes {
        let per_ray = max_nodes / 2;
        let achievable_error = if per_ray < 3 {
            f64::INFINITY
        } else {
            tails + discretization_model(strip, (s_max - s_min) / (per_ray - 1) as f64)
        };
        return Err(Error::BudgetExceeded {
            max_nodes,
            required,
            achievable_error,
        });
    }
    let (nodes, weights, coarse_weights, h) = ray_nodes(angle, s_min, s_max, step);
    Ok(Contour {
        kind,
        orientation: Orientation::Positive,
        theta: angle,
        delta,
        tol,
        r_min: s_min.exp(),
        r_max: s_max.exp(),
        step: h,
        tail,
        strip,
        nodes,
        weights,
        coarse_weights,
    })
}

fn validate_contour_inputs(delta: f64, tol: f64) -> Result<()> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("decay exponent must be > 0, got {delta}")));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidParameter(format!("tolerance must be > 0, got {tol}")));
    }
    Ok(())
}

/// Trapezoid contour on `∂Λ` in log-radius, truncated with the operator-independent
/// tail bound `c (M + 1/κ) r^{∓δ} / (πδ)` (unit `c`, `M = 2` at the top, `M = 1` at the
/// bottom), each side held below `tol / 4`.
pub fn boundary_contour(sector: &Sector, delta: f64, tol: f64, max_nodes: usize) -> Result<Contour> {
    validate_contour_inputs(delta, tol)?;
    let theta = sector.theta();
    let kappa = sector.shift_margin();
    let s_max = ((2.0 + 1.0 / kappa) * 4.0 / (PI * delta * tol)).ln() / delta;
    let s_min = (tol * PI * delta / (4.0 * (1.0 + 1.0 / kappa))).ln() / delta;
    let strip = theta.min(PI - theta);
    finish_rays(
        ContourKind::SectorBoundary,
        theta,
        delta,
        tol,
        max_nodes,
        s_min,
        s_max.max(s_min + 1.0),
        strip,
        TailModel::Generic,
        tol / 2.0,
    )
}

/// Boundary contour truncated with bounds that use the operator's norm and inverse
/// norm; the compensated integrand decays like `r^{∓(1+δ)}` past the spectrum.
pub fn boundary_contour_scaled(
    sector: &Sector,
    delta: f64,
    tol: f64,
    max_nodes: usize,
    scale: &OperatorScale,
) -> Result<Contour> {
    validate_contour_inputs(delta, tol)?;
    let theta = sector.theta();
    let kappa = sector.shift_margin();
    let strip = (theta - scale.spectral_angle).min(PI - theta);
    if strip <= 1e-6 {
        return Err(Error::SpectrumIntersectsSector(C64::from_polar(1.0, scale.spectral_angle)));
    }
    let norm = scale.norm.max(1e-300);
    let upper_const = 2.0 * (norm + 1.0) / (PI * kappa * (1.0 + delta));
    let r_max = (upper_const * 4.0 / tol)
        .powf(1.0 / (1.0 + delta))
        .max(2.0 * norm)
        .max(1.0);
    let s_min = match scale.inv_norm {
        Some(m) => {
            let lower_const = (2.0 * m + 1.0 / kappa) / (PI * (1.0 + delta));
            let r = (tol / (4.0 * lower_const)).powf(1.0 / (1.0 + delta));
            r.min(0.5 / m).min(1.0).ln()
        }
        None => {
            let m = scale.resolvent_bound.ok_or_else(|| {
                Error::Unsupported("singular operator needs a resolvent bound for truncation".into())
            })?;
            (tol * PI * delta / (4.0 * (m + 1.0 / kappa))).ln() / delta
        }
    };
    finish_rays(
        ContourKind::SectorBoundary,
        theta,
        delta,
        tol,
        max_nodes,
        s_min,
        r_max.ln(),
        strip,
        TailModel::Scaled {
            norm,
            inv_norm: scale.inv_norm,
        },
        tol / 2.0,
    )
}

/// Two rays `arg λ = ±angle` from the origin, truncated to `[r_min, r_max]`.
/// Used for bounded functions that vanish far out in the right half-plane.
pub fn spectral_wedge(angle: f64, r_min: f64, r_max: f64, strip: f64, tol: f64) -> Contour {
    let (nodes, weights, coarse_weights, h) =
        ray_nodes(angle, r_min.ln(), r_max.ln(), trapezoid_step(strip, tol));
    Contour {
        kind: ContourKind::SpectralWedge,
        orientation: Orientation::Positive,
        theta: angle,
        delta: 0.0,
        tol,
        r_min,
        r_max,
        step: h,
        tail: TailModel::Closed,
        strip,
        nodes,
        weights,
        coarse_weights,
    }
}

/// Closed contour `λ = exp(w)`, `w = center + a cos φ + i b sin φ`, with `n` equispaced
/// nodes in `φ` (periodic trapezoid).
pub fn log_ellipse(center: C64, a: f64, b: f64, n: usize) -> Contour {
    let n = n.max(4) + n % 2;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut coarse = Vec::with_capacity(n);
    for k in 0..n {
        let phi = TAU * k as f64 / n as f64;
        let w = center + c(a * phi.cos(), b * phi.sin());
        let dw = c(-a * phi.sin(), b * phi.cos());
        let lambda = w.exp();
        // (1/2πi) · e^w · w'(φ) · 2π/n
        let weight = lambda * dw / C64::new(0.0, n as f64);
        nodes.push(lambda);
        weights.push(weight);
        coarse.push(if k % 2 == 0 { weight * 2.0 } else { C64::default() });
    }
    Contour {
        kind: ContourKind::LogEllipse,
        orientation: Orientation::Positive,
        theta: b,
        delta: center.im,
        tol: 0.0,
        r_min: a,
        r_max: b,
        step: center.re,
        tail: TailModel::Closed,
        strip: 0.0,
        nodes,
        weights,
        coarse_weights: coarse,
    }
}
