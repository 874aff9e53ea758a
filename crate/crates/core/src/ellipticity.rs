//! Checkable ellipticity conditions: conormal roots, admissible weight windows,
//! strip conditions on the conormal symbol, interior-symbol spectra and the
//! numerical spectral condition on the model cone operator.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cone_laplacian::{BoundaryCondition, ConeModeOperator, CrossSectionSpectrum};
use crate::error::{Error, Result};
use crate::linalg::{c, CMatrix, C64};
use crate::operators::{dense_eigenvalues, spectrum_in_sector, ResolventProvider};
use crate::sectors::Sector;

/// Distance below which a root counts as lying on a line or strip edge.
pub const STRIP_TOLERANCE: f64 = 1e-12;

/// `z ↦ −z² + (n−1) z − λ_j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConormalQuadratic {
    pub n: u32,
    pub lambda_j: f64,
}

impl ConormalQuadratic {
    pub fn eval(&self, z: C64) -> C64 {
        -z * z + z * (self.n as f64 - 1.0) - self.lambda_j
    }
}

/// Roots `q⁻ ≤ q⁺` of the conormal quadratic.
pub fn conormal_roots(q: &ConormalQuadratic) -> (C64, C64) {
    let m = (q.n as f64 - 1.0) / 2.0;
    let disc = m * m - q.lambda_j;
    if disc >= 0.0 {
        let plus = m + disc.sqrt();
        // product of the roots is λ_j; avoids cancellation in m − √disc
        let minus = if plus != 0.0 { q.lambda_j / plus } else { m - disc.sqrt() };
        (C64::from(minus), C64::from(plus))
    } else {
        let s = (-disc).sqrt();
        (c(m, -s), c(m, s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightWindow {
    pub admissible: bool,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub s0: f64,
    /// Agreement with the closed-form rule (Dirichlet data admissible for every
    /// `n ≥ 3`, Neumann data admissible iff `n > 3`) when that rule applies.
    pub rule_check: Option<bool>,
}

impl WeightWindow {
    pub fn contains(&self, gamma: f64) -> bool {
        match (self.lower, self.upper) {
            (Some(lo), Some(hi)) => lo < gamma && gamma < hi,
            _ => false,
        }
    }
}

/// `s0 = √(((n−1)/2)² − λ_0)`; admissible iff `s0 > 1`, window `(1 − s0, s0 − 1)`.
pub fn weight_window(n: u32, lambda0: f64) -> WeightWindow {
    let m = (n as f64 - 1.0) / 2.0;
    let s0 = (m * m - lambda0).max(0.0).sqrt();
    let admissible = s0 > 1.0;
    let rule_check = if lambda0 < 0.0 && n >= 3 {
        Some(admissible)
    } else if lambda0 == 0.0 {
        Some(admissible == (n > 3))
    } else {
        None
    };
    WeightWindow {
        admissible,
        lower: admissible.then_some(1.0 - s0),
        upper: admissible.then_some(s0 - 1.0),
        s0,
        rule_check,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StripMode {
    /// Only the line `Re z = (n+1)/2 − γ − μ`.
    Line,
    /// The closed strip `(n+1)/2 − γ − μ ≤ Re z ≤ (n+1)/2 − γ`.
    ClosedStrip,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StripReport {
    pub clear: bool,
    pub lower: f64,
    pub upper: f64,
    /// Smallest-`j` offending root.
    pub violation: Option<(usize, C64)>,
}

pub fn check_strip_clear(spectrum: &CrossSectionSpectrum, n: u32, gamma: f64, mu: u32, mode: StripMode) -> StripReport {
    let upper = (n as f64 + 1.0) / 2.0 - gamma;
    let lower = upper - mu as f64;
    let hits = |z: C64| match mode {
        StripMode::Line => (z.re - lower).abs() <= STRIP_TOLERANCE,
        StripMode::ClosedStrip => lower - STRIP_TOLERANCE <= z.re && z.re <= upper + STRIP_TOLERANCE,
    };
    let violation = spectrum.eigs.iter().enumerate().find_map(|(j, &lambda_j)| {
        let (qm, qp) = conormal_roots(&ConormalQuadratic { n, lambda_j });
        [qm, qp].into_iter().find(|z| hits(*z)).map(|z| (j, z))
    });
    StripReport {
        clear: violation.is_none(),
        lower,
        upper,
        violation,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymbolReport {
    pub holds: bool,
    /// `(sample index, eigenvalue)` pairs inside the sector.
    pub violations: Vec<(usize, C64)>,
}

/// Every eigenvalue of every sampled symbol matrix lies outside `Λ`.
///
/// By homogeneity callers may restrict the covariable samples to `|ξ| = 1`.
pub fn check_e1_symbol<F>(symbol: F, sector: &Sector, samples: &[Vec<f64>]) -> Result<SymbolReport>
where
    F: Fn(&[f64]) -> CMatrix,
{
    let mut violations = Vec::new();
    for (k, s) in samples.iter().enumerate() {
        let m = symbol(s);
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        for z in dense_eigenvalues(&m)? {
            if sector.contains(z) {
                violations.push((k, z));
            }
        }
    }
    Ok(SymbolReport {
        holds: violations.is_empty(),
        violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct E4Level {
    pub level: usize,
    pub clear: bool,
    pub min_angular_distance: f64,
    pub offenders: Vec<(usize, C64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct E4Report {
    pub holds: bool,
    pub stable: bool,
    pub levels: Vec<E4Level>,
}

/// Spectral exclusion from `Λ \ {0}` for every mode on every refinement level, and
/// the minimum angular distance to `∂Λ` shrinking by at most 50% between levels.
pub fn check_e4_numeric(levels: &[Vec<ConeModeOperator>], sector: &Sector) -> Result<E4Report> {
    let mut out = Vec::with_capacity(levels.len());
    for (li, modes) in levels.iter().enumerate() {
        let mut offenders = Vec::new();
        let mut min_dist = f64::INFINITY;
        for (j, mode) in modes.iter().enumerate() {
            let rep = spectrum_in_sector(mode as &dyn ResolventProvider, sector, true)?;
            offenders.extend(rep.offenders.iter().map(|z| (j, *z)));
            for z in &rep.eigenvalues {
                if z.norm() > 0.0 {
                    min_dist = min_dist.min(sector.angular_margin(*z));
                }
            }
        }
        out.push(E4Level {
            level: li,
            clear: offenders.is_empty(),
            min_angular_distance: min_dist,
            offenders,
        });
    }
    let stable = out
        .windows(2)
        .all(|w| !(w[1].min_angular_distance < 0.5 * w[0].min_angular_distance));
    let holds = out.iter().all(|l| l.clear) && stable;
    Ok(E4Report { holds, stable, levels: out })
}

/// Uniform JSON verdict: `{condition, verdict, violations, parameters}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionVerdict {
    pub condition: String,
    pub verdict: bool,
    pub violations: Vec<Value>,
    pub parameters: Value,
}

impl ConditionVerdict {
    /// The boundary-symbol condition is not checked; it is carried as an assumption.
    pub fn e2_assumed(bc: BoundaryCondition) -> Self {
        Self {
            condition: "E2".into(),
            verdict: true,
            violations: Vec::new(),
            parameters: json!({ "assumed": true, "bc": bc }),
        }
    }

    pub fn from_strip(name: &str, report: &StripReport, params: Value) -> Self {
        Self {
            condition: name.into(),
            verdict: report.clear,
            violations: report
                .violation
                .iter()
                .map(|(j, z)| json!({ "j": j, "root": [z.re, z.im] }))
                .collect(),
            parameters: params,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone_laplacian::{assemble_mode_operator, interval_spectrum, WeightedGrid};
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_4, PI};

    /// Real roots of `z² − (n−1) z + λ_j` by bisection on `[−B, 0]` and `[0, B]`.
    fn bisection_roots(n: u32, lambda_j: f64) -> (f64, f64) {
        let b = n as f64 + lambda_j.abs().sqrt() + 2.0;
        let p = |z: f64| z * z - (n as f64 - 1.0) * z + lambda_j;
        let solve = |mut lo: f64, mut hi: f64| {
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if (p(lo) <= 0.0) == (p(mid) <= 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        if lambda_j == 0.0 {
            return (0.0, n as f64 - 1.0);
        }
        (solve(-b, 0.0), solve(0.0, b))
    }

    #[test]
    fn root_examples() {
        let (m, p) = conormal_roots(&ConormalQuadratic { n: 1, lambda_j: -4.0 });
        assert!((m.re + 2.0).abs() < 1e-14 && (p.re - 2.0).abs() < 1e-14);
        let (m, p) = conormal_roots(&ConormalQuadratic { n: 3, lambda_j: -1.0 });
        assert!((m.re - (1.0 - 2f64.sqrt())).abs() < 1e-14);
        assert!((p.re - (1.0 + 2f64.sqrt())).abs() < 1e-14);
        let (m, p) = conormal_roots(&ConormalQuadratic { n: 1, lambda_j: 0.0 });
        assert_eq!((m, p), (C64::default(), C64::default()));
        let (bm, bp) = bisection_roots(3, -1.0);
        assert!((bm + 0.41421356237309503).abs() < 1e-12 && (bp - 2.414213562373095).abs() < 1e-12);
    }

    #[test]
    fn window_examples() {
        let w = weight_window(3, -1.0);
        assert!(w.admissible);
        assert!((w.lower.unwrap() - (1.0 - 2f64.sqrt())).abs() < 1e-14);
        assert!((w.upper.unwrap() - (2f64.sqrt() - 1.0)).abs() < 1e-14);
        assert_eq!(w.rule_check, Some(true));
        let w = weight_window(2, 0.0);
        assert!(!w.admissible && (w.s0 - 0.5).abs() < 1e-15);
        assert_eq!(w.rule_check, Some(true));
        let w = weight_window(4, 0.0);
        assert!(w.admissible);
        assert_eq!((w.lower, w.upper), (Some(-0.5), Some(0.5)));
    }

    #[test]
    fn strip_examples() {
        let spec = interval_spectrum(PI, BoundaryCondition::Dirichlet, 3).unwrap();
        let rep = check_strip_clear(&spec, 3, 0.0, 2, StripMode::ClosedStrip);
        assert!(rep.clear);
        assert_eq!((rep.lower, rep.upper), (0.0, 2.0));

        // γ = √2 − 1 puts q⁻ = 1 − √2 of λ_0 = −1 on the line Re z = 2 − γ − 2
        let one = CrossSectionSpectrum::from_list(vec![-1.0], BoundaryCondition::Dirichlet).unwrap();
        let rep = check_strip_clear(&one, 3, 2f64.sqrt() - 1.0, 2, StripMode::Line);
        assert!(!rep.clear);
        let (j, z) = rep.violation.unwrap();
        assert_eq!(j, 0);
        assert!((z.re - (1.0 - 2f64.sqrt())).abs() < 1e-14);
        // γ = (n+1)/2 − μ − q⁺ puts q⁺ on the line
        let q_plus = 1.0 + 2f64.sqrt();
        let rep = check_strip_clear(&one, 3, 2.0 - 2.0 - q_plus, 2, StripMode::Line);
        assert!(!rep.clear);
        // γ = 2 − q⁺ moves q⁺ onto the other edge of the strip, not onto the line
        let rep = check_strip_clear(&one, 3, 2.0 - q_plus, 2, StripMode::Line);
        assert!(rep.clear);
        let rep = check_strip_clear(&one, 3, 2.0 - q_plus, 2, StripMode::ClosedStrip);
        assert!(!rep.clear);

        let empty = CrossSectionSpectrum::from_list(vec![], BoundaryCondition::Dirichlet).unwrap();
        assert!(check_strip_clear(&empty, 3, 0.7, 2, StripMode::ClosedStrip).clear);
    }

    #[test]
    fn e1_examples() {
        let s = Sector::new(FRAC_PI_4).unwrap();
        let circle: Vec<Vec<f64>> = (0..32)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / 32.0;
                vec![a.cos(), a.sin()]
            })
            .collect();
        let laplace = |xi: &[f64]| CMatrix::from_element(1, 1, C64::from(xi.iter().map(|x| x * x).sum::<f64>()));
        assert!(check_e1_symbol(laplace, &s, &circle).unwrap().holds);
        let bad = |_: &[f64]| CMatrix::from_element(1, 1, C64::from(-1.0));
        assert!(!check_e1_symbol(bad, &s, &circle).unwrap().holds);
        let modes: Vec<Vec<f64>> = [-1.0, -4.0, -9.0]
            .iter()
            .flat_map(|&l| (0..21).map(move |k| vec![-5.0 + 0.5 * k as f64, l]))
            .collect();
        let rescaled = |v: &[f64]| CMatrix::from_element(1, 1, C64::from(v[0] * v[0] - v[1]));
        assert!(check_e1_symbol(rescaled, &s, &modes).unwrap().holds);
    }

    #[test]
    fn e4_examples() {
        let s = Sector::new(FRAC_PI_4).unwrap();
        let spec = interval_spectrum(PI, BoundaryCondition::Dirichlet, 3).unwrap();
        let level = |r: f64, n_nodes: usize| {
            let grid = WeightedGrid::new(r, n_nodes, 0.0, 3, 2.0).unwrap();
            spec.eigs
                .iter()
                .map(|&l| assemble_mode_operator(3, 0.0, l, &grid).unwrap())
                .collect::<Vec<_>>()
        };
        let rep = check_e4_numeric(&[level(4.0, 60), level(5.0, 120)], &s).unwrap();
        assert!(rep.holds, "{rep:?}");

        let grid = WeightedGrid::new(3.0, 30, 0.0, 3, 2.0).unwrap();
        let h = grid.step();
        let flipped = assemble_mode_operator(3, 0.0, 10.0 / (h * h), &grid).unwrap();
        let rep = check_e4_numeric(&[vec![flipped.clone()], vec![flipped]], &s).unwrap();
        assert!(!rep.holds);
        assert!(!rep.levels[0].offenders.is_empty());

        assert!(check_e4_numeric(&[], &s).unwrap().holds);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn vieta(n in 1u32..7, lambda_j in -50.0f64..0.0) {
            let (m, p) = conormal_roots(&ConormalQuadratic { n, lambda_j });
            prop_assert!(((m + p).re - (n as f64 - 1.0)).abs() <= 1e-12);
            prop_assert!(((m * p).re - lambda_j).abs() <= 1e-12 * lambda_j.abs().max(1.0));
            let (bm, bp) = bisection_roots(n, lambda_j);
            prop_assert!((m.re - bm).abs() <= 1e-12 * bm.abs().max(1.0));
            prop_assert!((p.re - bp).abs() <= 1e-12 * bp.abs().max(1.0));
        }

        #[test]
        fn window_strip_agreement(n in 1u32..7, l0 in -30.0f64..0.0, gaps in proptest::collection::vec(0.1f64..10.0, 0..4),
                                  frac in -0.999f64..0.999) {
            let mut eigs = vec![l0];
            for g in gaps {
                let last = *eigs.last().unwrap();
                eigs.push(last - g);
            }
            let bc = if l0 == 0.0 { BoundaryCondition::Neumann } else { BoundaryCondition::Dirichlet };
            let spec = CrossSectionSpectrum::from_list(eigs, bc).unwrap();
            let w = weight_window(n, l0);
            // equivalence holds for |γ| < 1 + s0, away from the window edges
            let gamma = frac * (1.0 + w.s0);
            if let (Some(lo), Some(hi)) = (w.lower, w.upper) {
                prop_assume!((gamma - lo).abs() > 1e-9 && (gamma - hi).abs() > 1e-9);
            }
            let clear = check_strip_clear(&spec, n, gamma, 2, StripMode::ClosedStrip).clear;
            prop_assert_eq!(w.contains(gamma), clear);
        }

        #[test]
        fn window_symmetric_and_monotone(n in 1u32..7, l0 in -50.0f64..0.0, extra in 0.0f64..10.0) {
            let w = weight_window(n, l0);
            if w.admissible {
                prop_assert!((w.lower.unwrap() + w.upper.unwrap()).abs() < 1e-14);
                prop_assert!(w.lower.unwrap() < w.upper.unwrap());
            }
            let wider = weight_window(n, l0 - extra);
            prop_assert!(wider.s0 >= w.s0);
            if w.admissible {
                prop_assert!(wider.admissible && wider.upper.unwrap() >= w.upper.unwrap());
            }
        }
    }
}
