//! Holomorphic functions on `C \ Λ(θ)` with two-sided power decay
//! `|f(λ)| ≤ c (|λ|^δ + |λ|^{-δ})^{-1}`, their certificates and sup-norm surrogates.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, C64};
use crate::sectors::Sector;

/// Decay certificate `(δ, c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub delta: f64,
    pub c_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionKind {
    PowerQuotient,
    ShiftedRational,
    ImaginaryPowerRegularized,
    ExponentialBounded,
    UserDefined,
    Product,
}

/// Serializable description of a built-in function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionSpec {
    PowerQuotient { delta: f64 },
    ImaginaryPower { t: f64, epsilon: f64 },
    ShiftedRational { delta: f64, poles: Vec<[f64; 2]> },
    Exponential { tau: f64 },
    Product { factors: Vec<FunctionSpec> },
}

type Evaluator = Arc<dyn Fn(C64) -> C64 + Send + Sync>;

#[derive(Clone)]
pub struct HFunction {
    kind: FunctionKind,
    label: String,
    spec: Option<FunctionSpec>,
    sector: Sector,
    certificate: Option<Certificate>,
    eval: Evaluator,
}

impl fmt::Debug for HFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HFunction")
            .field("kind", &self.kind)
            .field("label", &self.label)
            .field("theta", &self.sector.theta())
            .field("certificate", &self.certificate)
            .finish()
    }
}

/// `λ^a` on the principal branch, with `0^a = 0` for `Re a > 0`.
pub fn principal_pow(lambda: C64, a: C64) -> C64 {
    if lambda == C64::default() {
        return C64::default();
    }
    (a * lambda.ln()).exp()
}

fn power_quotient_value(lambda: C64, delta: f64) -> C64 {
    if lambda == C64::default() {
        return C64::default();
    }
    (delta * lambda.ln() - 2.0 * delta * (1.0 + lambda).ln()).exp()
}

/// Sample `|f| (|λ|^δ + |λ|^{-δ})` over rays of the closed complement and refine the
/// largest sample along its ray.
fn sampled_certificate_constant(f: &dyn Fn(C64) -> C64, delta: f64, sector: &Sector) -> f64 {
    let theta = sector.theta();
    let weighted = |lambda: C64| {
        let r = lambda.norm();
        f(lambda).norm() * (r.powf(delta) + r.powf(-delta))
    };
    let per_decade = 32;
    let decades = 16;
    let mut best = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..=8 {
        let phi = theta * (k as f64 / 4.0 - 1.0);
        for i in 0..=(per_decade * decades) {
            let log_r = -8.0 + i as f64 / per_decade as f64;
            let val = weighted(C64::from_polar(10f64.powf(log_r), phi));
            if val.is_finite() && val > best.0 {
                best = (val, phi, log_r);
            }
        }
    }
    // golden-section search in log r around the best sample
    let (_, phi, center) = best;
    let g = |log_r: f64| weighted(C64::from_polar(10f64.powf(log_r), phi));
    let golden = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (center - 1.0 / per_decade as f64, center + 1.0 / per_decade as f64);
    let mut x1 = b - golden * (b - a);
    let mut x2 = a + golden * (b - a);
    let (mut f1, mut f2) = (g(x1), g(x2));
    for _ in 0..60 {
        if f1 > f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - golden * (b - a);
            f1 = g(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + golden * (b - a);
            f2 = g(x2);
        }
    }
    best.0.max(f1).max(f2) * (1.0 + 1e-6)
}

impl HFunction {
    fn build(
        kind: FunctionKind,
        label: String,
        spec: Option<FunctionSpec>,
        sector: Sector,
        delta: Option<f64>,
        eval: Evaluator,
    ) -> Self {
        let certificate = delta.map(|d| Certificate {
            delta: d,
            c_bound: sampled_certificate_constant(eval.as_ref(), d, &sector),
        });
        Self {
            kind,
            label,
            spec,
            sector,
            certificate,
            eval,
        }
    }

    /// `λ^δ / (1 + λ)^{2δ}`, `0 < δ ≤ 1`.
    pub fn power_quotient(delta: f64, sector: &Sector) -> Result<Self> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "power quotient exponent must lie in (0, 1], got {delta}"
            )));
        }
        Ok(Self::build(
            FunctionKind::PowerQuotient,
            format!("power_quotient(delta={delta})"),
            Some(FunctionSpec::PowerQuotient { delta }),
            *sector,
            Some(delta),
            Arc::new(move |l| power_quotient_value(l, delta)),
        ))
    }

    /// `λ^{it} λ^ε / (1 + λ)^{2ε}`. The certificate constant is
    /// `e^{|t|θ}` times the power-quotient constant, since `|λ^{it}| = e^{-t arg λ}`.
    pub fn imaginary_power(t: f64, epsilon: f64, sector: &Sector) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "regularization exponent must be > 0, got {epsilon}"
            )));
        }
        let base = move |l: C64| power_quotient_value(l, epsilon);
        let c_pq = sampled_certificate_constant(&base, epsilon, sector);
        let eval: Evaluator = Arc::new(move |l: C64| {
            if l == C64::default() {
                return C64::default();
            }
            (c(epsilon, t) * l.ln() - 2.0 * epsilon * (1.0 + l).ln()).exp()
        });
        Ok(Self {
            kind: FunctionKind::ImaginaryPowerRegularized,
            label: format!("imaginary_power(t={t}, epsilon={epsilon})"),
            spec: Some(FunctionSpec::ImaginaryPower { t, epsilon }),
            sector: *sector,
            certificate: Some(Certificate {
                delta: epsilon,
                c_bound: (t.abs() * sector.theta()).exp() * c_pq,
            }),
            eval,
        })
    }

    /// `λ^δ (1 + λ)^{-2δ-K} Π_k (λ − p_k)^{-1}` with `K` poles strictly inside `Λ`.
    pub fn shifted_rational(delta: f64, poles: &[C64], sector: &Sector) -> Result<Self> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "rational exponent must lie in (0, 1], got {delta}"
            )));
        }
        for p in poles {
            if !sector.contains_interior(*p) {
                return Err(Error::InvalidParameter(format!(
                    "pole {p} must lie in the open sector interior"
                )));
            }
        }
        let owned: Vec<C64> = poles.to_vec();
        let k = owned.len() as f64;
        let eval: Evaluator = Arc::new(move |l: C64| {
            if l == C64::default() {
                return C64::default();
            }
            let mut v = (delta * l.ln() - (2.0 * delta + k) * (1.0 + l).ln()).exp();
            for p in &owned {
                v /= l - p;
            }
            v
        });
        Ok(Self::build(
            FunctionKind::ShiftedRational,
            format!("shifted_rational(delta={delta}, poles={})", poles.len()),
            Some(FunctionSpec::ShiftedRational {
                delta,
                poles: poles.iter().map(|p| [p.re, p.im]).collect(),
            }),
            *sector,
            Some(delta),
            eval,
        ))
    }

    /// `e^{-τλ}`: bounded on the complement only for `θ ≤ π/2`, no decay certificate.
    pub fn exponential(tau: f64, sector: &Sector) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau must be > 0, got {tau}")));
        }
        if sector.theta() > FRAC_PI_2 {
            return Err(Error::Unsupported(format!(
                "exp(-tau*lambda) is unbounded off the sector for theta = {} > pi/2",
                sector.theta()
            )));
        }
        Ok(Self {
            kind: FunctionKind::ExponentialBounded,
            label: format!("exponential(tau={tau})"),
            spec: Some(FunctionSpec::Exponential { tau }),
            sector: *sector,
            certificate: None,
            eval: Arc::new(move |l: C64| (-tau * l).exp()),
        })
    }

    /// Arbitrary evaluator with a caller-declared certificate (not serializable).
    pub fn user_defined<F>(label: &str, sector: &Sector, certificate: Option<Certificate>, f: F) -> Self
    where
        F: Fn(C64) -> C64 + Send + Sync + 'static,
    {
        Self {
            kind: FunctionKind::UserDefined,
            label: label.to_string(),
            spec: None,
            sector: *sector,
            certificate,
            eval: Arc::new(f),
        }
    }

    /// Pointwise product; certificate `(δ_f + δ_g, c_f c_g)` when both factors carry one.
    pub fn product(&self, other: &HFunction) -> Result<Self> {
        if self.sector != other.sector {
            return Err(Error::InvalidParameter("factors defined on different sectors".into()));
        }
        let certificate = match (self.certificate, other.certificate) {
            (Some(a), Some(b)) => Some(Certificate {
                delta: a.delta + b.delta,
                c_bound: a.c_bound * b.c_bound,
            }),
            _ => None,
        };
        let spec = match (&self.spec, &other.spec) {
            (Some(a), Some(b)) => Some(FunctionSpec::Product {
                factors: vec![a.clone(), b.clone()],
            }),
            _ => None,
        };
        let (f, g) = (self.eval.clone(), other.eval.clone());
        Ok(Self {
            kind: FunctionKind::Product,
            label: format!("({})*({})", self.label, other.label),
            spec,
            sector: self.sector,
            certificate,
            eval: Arc::new(move |l| f(l) * g(l)),
        })
    }

    pub fn from_spec(spec: &FunctionSpec, sector: &Sector) -> Result<Self> {
        match spec {
            FunctionSpec::PowerQuotient { delta } => Self::power_quotient(*delta, sector),
            FunctionSpec::ImaginaryPower { t, epsilon } => Self::imaginary_power(*t, *epsilon, sector),
            FunctionSpec::ShiftedRational { delta, poles } => {
                let poles: Vec<C64> = poles.iter().map(|p| c(p[0], p[1])).collect();
                Self::shifted_rational(*delta, &poles, sector)
            }
            FunctionSpec::Exponential { tau } => Self::exponential(*tau, sector),
            FunctionSpec::Product { factors } => {
                let mut iter = factors.iter();
                let first = iter
                    .next()
                    .ok_or_else(|| Error::InvalidParameter("empty product".into()))?;
                let mut acc = Self::from_spec(first, sector)?;
                for f in iter {
                    acc = acc.product(&Self::from_spec(f, sector)?)?;
                }
                Ok(acc)
            }
        }
    }

    pub fn kind(&self) -> FunctionKind {
        self.kind
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn spec(&self) -> Option<&FunctionSpec> {
        self.spec.as_ref()
    }

    pub fn sector(&self) -> &Sector {
        &self.sector
    }

    pub fn certificate(&self) -> Option<Certificate> {
        self.certificate
    }

    pub fn requires_closed_contour(&self) -> bool {
        self.kind == FunctionKind::ExponentialBounded
    }

    /// Raw evaluation; callers are responsible for staying off the sector interior.
    pub fn eval(&self, lambda: C64) -> C64 {
        (self.eval)(lambda)
    }

    pub fn eval_checked(&self, lambda: C64) -> Result<C64> {
        if self.sector.contains_interior(lambda) {
            return Err(Error::OutsideDomain(lambda));
        }
        Ok(self.eval(lambda))
    }
}

fn boundary_samples(sector: &Sector, samples_per_decade: usize, decades: usize) -> impl Iterator<Item = C64> {
    let theta = sector.theta();
    let count = samples_per_decade * decades;
    let half = decades as f64 / 2.0;
    (0..=count).flat_map(move |i| {
        let r = 10f64.powf(-half + i as f64 / samples_per_decade as f64);
        [C64::from_polar(r, theta), C64::from_polar(r, -theta)]
    })
}

/// Largest `|f|` on a geometric grid along both boundary rays, centered at `|λ| = 1`.
/// A lower bound for `||f||_∞` that converges under refinement.
pub fn sup_norm_estimate(f: &HFunction, sector: &Sector, samples_per_decade: usize, decades: usize) -> Result<f64> {
    if f.certificate.is_none() {
        return Err(Error::Unsupported(format!(
            "{} has no decay certificate; supply an explicit bound",
            f.label
        )));
    }
    Ok(boundary_samples(sector, samples_per_decade.max(1), decades.max(1))
        .map(|l| f.eval(l).norm())
        .fold(0.0, f64::max))
}

pub const DEFAULT_SAMPLES_PER_DECADE: usize = 64;
pub const DEFAULT_DECADES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingGrid {
    pub samples_per_decade: usize,
    pub decades: usize,
}

impl Default for SamplingGrid {
    fn default() -> Self {
        Self {
            samples_per_decade: DEFAULT_SAMPLES_PER_DECADE,
            decades: DEFAULT_DECADES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MembershipReport {
    pub member: bool,
    pub worst_ratio: f64,
}

/// Check `|f(λ)| (|λ|^δ + |λ|^{-δ}) / c ≤ 1 + 1e-9` on boundary samples.
pub fn verify_membership(f: &HFunction, sector: &Sector, grid: &SamplingGrid) -> MembershipReport {
    let Some(cert) = f.certificate else {
        return MembershipReport {
            member: false,
            worst_ratio: f64::INFINITY,
        };
    };
    let worst = boundary_samples(sector, grid.samples_per_decade.max(1), grid.decades.max(1))
        .map(|l| {
            let r = l.norm();
            f.eval(l).norm() * (r.powf(cert.delta) + r.powf(-cert.delta)) / cert.c_bound
        })
        .fold(0.0, |a: f64, b| if b.is_nan() { f64::INFINITY } else { a.max(b) });
    MembershipReport {
        member: worst <= 1.0 + 1e-9,
        worst_ratio: worst,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{E, FRAC_PI_4, PI};

    fn half_plane() -> Sector {
        Sector::new(FRAC_PI_2).unwrap()
    }

    /// Dense 1-D maximization of `|f|` over both boundary rays (golden-section polish).
    fn dense_boundary_max(f: &dyn Fn(C64) -> C64, theta: f64) -> f64 {
        let mut best: f64 = 0.0;
        for sign in [-1.0, 1.0] {
            let g = |x: f64| f(C64::from_polar(10f64.powf(x), sign * theta)).norm();
            let mut arg = 0.0;
            for i in 0..=40_000 {
                let x = -10.0 + i as f64 * 5e-4;
                let v = g(x);
                if v > best {
                    best = v;
                    arg = x;
                }
            }
            let (mut a, mut b) = (arg - 5e-4, arg + 5e-4);
            for _ in 0..100 {
                let m1 = a + (b - a) / 3.0;
                let m2 = b - (b - a) / 3.0;
                if g(m1) < g(m2) {
                    a = m1;
                } else {
                    b = m2;
                }
            }
            best = best.max(g(0.5 * (a + b)));
        }
        best
    }

    #[test]
    fn power_quotient_values() {
        let f = HFunction::power_quotient(0.5, &half_plane()).unwrap();
        assert!((f.eval(C64::from(1.0)) - 0.5).norm() < 1e-15);
        assert!((f.eval(C64::from(4.0)) - 0.4).norm() < 1e-15);
        let g = HFunction::power_quotient(1.0, &half_plane()).unwrap();
        for r in [1e3, 1e6, 1e9] {
            let v = g.eval(C64::from(r)).norm() * r;
            assert!((v - 1.0).abs() < 3.0 / r);
        }
        assert!(HFunction::power_quotient(0.0, &half_plane()).is_err());
        assert!(HFunction::power_quotient(1.5, &half_plane()).is_err());
    }

    #[test]
    fn imaginary_power_values() {
        let s = half_plane();
        let f0 = HFunction::imaginary_power(0.0, 0.5, &s).unwrap();
        let pq = HFunction::power_quotient(0.5, &s).unwrap();
        for z in [c(0.3, 0.1), c(2.0, -1.0), c(10.0, 5.0)] {
            assert!((f0.eval(z) - pq.eval(z)).norm() < 1e-15);
        }
        let eps = 0.1;
        let f = HFunction::imaginary_power(1.0, eps, &s).unwrap();
        let expected = eps.exp() / (1.0 + E).powf(2.0 * eps);
        assert!((f.eval(C64::from(E)).norm() - expected).abs() < 1e-14);
        assert!(matches!(f.eval_checked(c(-1.0, 0.0)), Err(Error::OutsideDomain(_))));
        assert!(HFunction::imaginary_power(1.0, 0.0, &s).is_err());
    }

    #[test]
    fn sup_norm_examples() {
        let s = half_plane();
        let resolvent_like = HFunction::user_defined(
            "1/(1+l)",
            &s,
            Some(Certificate { delta: 1.0, c_bound: 2.0 }),
            |l| 1.0 / (1.0 + l),
        );
        let v = sup_norm_estimate(&resolvent_like, &s, 64, 12).unwrap();
        assert!((v - 1.0).abs() < 1e-9);

        let pq = HFunction::power_quotient(0.5, &s).unwrap();
        let oracle = dense_boundary_max(&|l| pq.eval(l), FRAC_PI_2);
        assert!((oracle - 0.5f64.sqrt()).abs() < 1e-10);
        let coarse = sup_norm_estimate(&pq, &s, 64, 12).unwrap();
        let fine = sup_norm_estimate(&pq, &s, 256, 12).unwrap();
        assert!((coarse - oracle).abs() < 1e-3);
        assert!((fine - coarse).abs() < 1e-3);
        assert!(coarse <= oracle + 1e-12);

        let zero = HFunction::user_defined("0", &s, Some(Certificate { delta: 1.0, c_bound: 1.0 }), |_| {
            C64::default()
        });
        assert_eq!(sup_norm_estimate(&zero, &s, 64, 12).unwrap(), 0.0);

        let exp = HFunction::exponential(1.0, &s).unwrap();
        assert!(matches!(sup_norm_estimate(&exp, &s, 64, 12), Err(Error::Unsupported(_))));
    }

    #[test]
    fn membership_examples() {
        let s = half_plane();
        let grid = SamplingGrid::default();
        let pq = HFunction::power_quotient(0.5, &s).unwrap();
        let rep = verify_membership(&pq, &s, &grid);
        assert!(rep.member, "{rep:?}");
        // (r + 1) / |1 + ir| peaks at r = 1 with value √2
        assert!((pq.certificate().unwrap().c_bound - 2f64.sqrt()).abs() < 1e-5);

        let pure = HFunction::user_defined(
            "lambda^i",
            &s,
            Some(Certificate { delta: 0.1, c_bound: 10.0 }),
            |l| principal_pow(l, c(0.0, 1.0)),
        );
        assert!(!verify_membership(&pure, &s, &grid).member);

        let zero = HFunction::user_defined("0", &s, Some(Certificate { delta: 1.0, c_bound: 1.0 }), |_| {
            C64::default()
        });
        let rep = verify_membership(&zero, &s, &grid);
        assert!(rep.member);
        assert_eq!(rep.worst_ratio, 0.0);
    }

    #[test]
    fn exponential_rejects_wide_sector() {
        assert!(HFunction::exponential(1.0, &Sector::new(2.0).unwrap()).is_err());
        let f = HFunction::exponential(1.0, &Sector::new(FRAC_PI_4).unwrap()).unwrap();
        assert!(f.requires_closed_contour());
        assert!(f.certificate().is_none());
    }

    #[test]
    fn spec_round_trip() {
        let s = half_plane();
        let spec = FunctionSpec::Product {
            factors: vec![
                FunctionSpec::PowerQuotient { delta: 0.5 },
                FunctionSpec::ImaginaryPower { t: 1.0, epsilon: 0.1 },
            ],
        };
        let json = serde_json::to_string(&spec).unwrap();
        let back: FunctionSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        let f = HFunction::from_spec(&back, &s).unwrap();
        assert_eq!(f.certificate().unwrap().delta, 0.6);
        assert!(serde_json::from_str::<FunctionSpec>(r#"{"kind":"power_quotient","delta":0.5,"x":1}"#).is_err());
    }

    #[test]
    fn rational_pole_must_be_interior() {
        let s = half_plane();
        assert!(HFunction::shifted_rational(0.5, &[c(1.0, 0.0)], &s).is_err());
        let f = HFunction::shifted_rational(0.5, &[c(-2.0, 1.0)], &s).unwrap();
        assert!(verify_membership(&f, &s, &SamplingGrid::default()).member);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn product_certificate_holds(da in 0.1f64..1.0, db in 0.1f64..1.0, t in -2.0f64..2.0,
                                     theta in 0.3f64..2.8) {
            let s = Sector::new(theta).unwrap();
            let f = HFunction::power_quotient(da, &s).unwrap();
            let g = HFunction::imaginary_power(t, db, &s).unwrap();
            let fg = f.product(&g).unwrap();
            let grid = SamplingGrid { samples_per_decade: 16, decades: 12 };
            prop_assert!(verify_membership(&fg, &s, &grid).member);
        }

        #[test]
        fn conjugation_symmetry(re in 0.01f64..20.0, im in -20.0f64..20.0, delta in 0.05f64..1.0,
                                tau in 0.1f64..3.0) {
            let s = Sector::new(FRAC_PI_2).unwrap();
            let z = c(re, im);
            let pq = HFunction::power_quotient(delta, &s).unwrap();
            let ex = HFunction::exponential(tau, &s).unwrap();
            prop_assert!((pq.eval(z.conj()) - pq.eval(z).conj()).norm() <= 1e-14 * pq.eval(z).norm().max(1e-300));
            prop_assert!((ex.eval(z.conj()) - ex.eval(z).conj()).norm() <= 1e-14 * ex.eval(z).norm().max(1e-300));
        }

        #[test]
        fn regularization_converges_on_positive_axis(a in 0.2f64..5.0, t in -3.0f64..3.0) {
            let s = Sector::new(PI / 3.0).unwrap();
            let exact = principal_pow(C64::from(a), c(0.0, t));
            let errs: Vec<f64> = [1e-1, 1e-2, 1e-3]
                .iter()
                .map(|&e| (HFunction::imaginary_power(t, e, &s).unwrap().eval(C64::from(a)) - exact).norm())
                .collect();
            prop_assert!(errs[1] <= errs[0] + 1e-15 && errs[2] <= errs[1] + 1e-15);
            prop_assert!(errs[2] < 5e-3);
        }
    }
}
