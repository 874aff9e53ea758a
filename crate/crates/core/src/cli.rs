//! Batch runner: a JSON experiment config in, `report.json` plus flat CSV tables out.
//!
//! Exit codes: `0` every pass criterion holds, `2` some criterion failed, `1` error.

use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Parser;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::calculus::{
    dunford_matrix_scaled, contour_for, heat_positivity, heat_semigroup, hinf_bound_estimate, imaginary_power,
    CauchySolver, HinfOptions, ImaginaryPowerMode, ImaginaryPowerOptions, SineForcing, TimeGrid, DEFAULT_SEED,
};
use crate::cone_laplacian::{
    assemble_mode_operator, discrete_norm, interval_spectrum, BoundaryCondition, ConeModeOperator, CrossSectionSpectrum,
    WeightedGrid,
};
use crate::ellipticity::{check_e4_numeric, check_strip_clear, weight_window, ConditionVerdict, StripMode};
use crate::hclass::{FunctionSpec, HFunction};
use crate::kernel_estimates::{hardy_table, loglog_slope};
use crate::linalg::{weighted_spectral_norm, C64};
use crate::operators::{sectoriality_scan, spectrum_in_sector, OperatorSource, ResolventProvider, ScanGrid};
use crate::sectors::Sector;

pub const SEED_ENV: &str = "CONECALC_SEED";

#[derive(Debug, Parser)]
#[command(name = "conecalc", version, about = "Contour-quadrature functional calculus for sectorial and cone operators")]
pub struct Cli {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// RNG seed; overrides the environment and the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for parallel inner loops.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SectorCheck,
    WeightWindow,
    EllipticityReport,
    Funcalc,
    HinfBound,
    HeatSolve,
    Cauchy,
    HardyCheck,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default)]
    pub parameters: Value,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Operators accepted by the numeric commands.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OperatorConfig {
    Source(OperatorSource),
    Cone { cone_mode: ConeModeConfig },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeModeConfig {
    pub n: u32,
    #[serde(default)]
    pub gamma: f64,
    pub lambda_j: f64,
    pub grid: GridConfig,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub depth: f64,
    pub nodes: usize,
    #[serde(default = "two")]
    pub p: f64,
}

fn two() -> f64 {
    2.0
}

fn half_pi() -> f64 {
    FRAC_PI_2
}

impl OperatorConfig {
    fn build(&self) -> anyhow::Result<Box<dyn ResolventProvider>> {
        Ok(match self {
            OperatorConfig::Source(s) => s.build()?,
            OperatorConfig::Cone { cone_mode: c } => {
                let grid = WeightedGrid::new(c.grid.depth, c.grid.nodes, c.gamma, c.n, c.grid.p)?;
                Box::new(assemble_mode_operator(c.n, c.gamma, c.lambda_j, &grid)?)
            }
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    pub bc: BoundaryCondition,
    /// Interval length for the Laplacian on `[0, L]`.
    pub length: Option<f64>,
    pub count: Option<usize>,
    /// Explicit eigenvalues, strictly decreasing.
    pub eigs: Option<Vec<f64>>,
}

impl SpectrumConfig {
    fn build(&self) -> anyhow::Result<CrossSectionSpectrum> {
        match (&self.eigs, self.length) {
            (Some(e), None) => Ok(CrossSectionSpectrum::from_list(e.clone(), self.bc)?),
            (None, Some(l)) => Ok(interval_spectrum(l, self.bc, self.count.unwrap_or(3))?),
            _ => bail!("spectrum needs exactly one of `eigs` or `length`"),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScanConfig {
    r_min: f64,
    r_max: f64,
    #[serde(default = "sixteen")]
    per_decade: usize,
    #[serde(default = "thirty_three")]
    angles: usize,
}

fn sixteen() -> usize {
    16
}

fn thirty_three() -> usize {
    33
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SectorCheckParams {
    theta: f64,
    operator: OperatorConfig,
    scan: Option<ScanConfig>,
    /// Pass requires `M_R ≤ max_bound` when given.
    max_bound: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightWindowParams {
    n: u32,
    bc: BoundaryCondition,
    lambda0: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct EllipticityParams {
    n: u32,
    gamma: f64,
    #[serde(default = "two_u32")]
    mu: u32,
    spectrum: SpectrumConfig,
    #[serde(default = "quarter_pi")]
    theta: f64,
    /// Refinement levels `(nodes, depth)` for the numerical spectral condition.
    #[serde(default)]
    levels: Vec<(usize, f64)>,
    #[serde(default = "two")]
    p: f64,
}

fn two_u32() -> u32 {
    2
}

fn quarter_pi() -> f64 {
    std::f64::consts::FRAC_PI_4
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImaginaryCurveConfig {
    t: Vec<f64>,
    #[serde(default = "closed_mode")]
    mode: ImaginaryPowerMode,
}

fn closed_mode() -> ImaginaryPowerMode {
    ImaginaryPowerMode::ClosedContour
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FuncalcParams {
    theta: f64,
    operator: OperatorConfig,
    function: Option<FunctionSpec>,
    #[serde(default = "default_tol")]
    tol: f64,
    #[serde(default = "default_max_nodes")]
    max_nodes: usize,
    imaginary_powers: Option<ImaginaryCurveConfig>,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_nodes() -> usize {
    crate::calculus::DEFAULT_MAX_NODES
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct HinfParams {
    theta: f64,
    operator: OperatorConfig,
    #[serde(default = "default_family")]
    family_size: usize,
    #[serde(default = "default_tol")]
    tol: f64,
    #[serde(default = "default_max_nodes")]
    max_nodes: usize,
    #[serde(default)]
    refinements: u32,
    #[serde(default = "default_threshold")]
    threshold: f64,
}

fn default_family() -> usize {
    16
}

fn default_threshold() -> f64 {
    1.05
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeatParams {
    #[serde(default = "half_pi")]
    theta: f64,
    operator: OperatorConfig,
    tau: Vec<f64>,
    #[serde(default = "heat_tol")]
    tol: f64,
    /// Pass requires every error estimate `≤ accept`.
    #[serde(default = "heat_accept")]
    accept: f64,
    #[serde(default)]
    require_positive: bool,
}

fn heat_tol() -> f64 {
    1e-10
}

fn heat_accept() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct CauchyParams {
    n: u32,
    #[serde(default)]
    gamma: f64,
    spectrum: SpectrumConfig,
    grid: GridConfig,
    t_final: f64,
    steps: usize,
    #[serde(default = "default_r")]
    r: Vec<f64>,
    #[serde(default = "one")]
    forcings: usize,
    #[serde(default = "four")]
    support: f64,
    /// Pass requires every ratio `ρ < max_ratio`.
    #[serde(default = "fifty")]
    max_ratio: f64,
}

fn default_r() -> Vec<f64> {
    vec![2.0]
}

fn one() -> usize {
    1
}

fn four() -> f64 {
    4.0
}

fn fifty() -> f64 {
    50.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct HardyParams {
    epsilon: Vec<f64>,
    #[serde(default = "default_ps")]
    p: Vec<f64>,
    grids: Vec<(usize, f64)>,
    #[serde(default)]
    n: u32,
    /// Pass requires every fitted `log norm` vs `log 1/ε` slope to lie in this range.
    slope_range: Option<[f64; 2]>,
}

fn default_ps() -> Vec<f64> {
    vec![2.0]
}

/// A flat CSV table; numbers are formatted shortest-round-trip.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub name: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(name: &str, headers: &[&str]) -> Self {
        Self {
            name: name.into(),
            headers: headers.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let path = dir.join(&self.name);
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(&path)
            .with_context(|| format!("cannot create {}", path.display()))?;
        w.write_record(&self.headers)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-5..1e16).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Result of one command: verdict, JSON results and CSV tables.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub results: Value,
    pub tables: Vec<CsvTable>,
}

fn parse<T: for<'de> Deserialize<'de>>(params: &Value) -> anyhow::Result<T> {
    serde_json::from_value(params.clone()).context("invalid parameters")
}

fn sector(theta: f64) -> anyhow::Result<Sector> {
    Ok(Sector::new(theta)?)
}

fn c64_json(z: C64) -> Value {
    json!([z.re, z.im])
}

/// Validate the config's parameters against the command schema.
pub fn validate(config: &ExperimentConfig) -> anyhow::Result<()> {
    let p = &config.parameters;
    match config.command {
        Command::SectorCheck => {
            let s: SectorCheckParams = parse(p)?;
            sector(s.theta)?;
        }
        Command::WeightWindow => {
            parse::<WeightWindowParams>(p)?;
        }
        Command::EllipticityReport => {
            let e: EllipticityParams = parse(p)?;
            e.spectrum.build()?;
            sector(e.theta)?;
        }
        Command::Funcalc => {
            let f: FuncalcParams = parse(p)?;
            sector(f.theta)?;
            if f.function.is_none() && f.imaginary_powers.is_none() {
                bail!("funcalc needs `function` and/or `imaginary_powers`");
            }
            if !(f.tol > 0.0) {
                bail!("tol must be > 0");
            }
        }
        Command::HinfBound => {
            let h: HinfParams = parse(p)?;
            sector(h.theta)?;
        }
        Command::HeatSolve => {
            let h: HeatParams = parse(p)?;
            sector(h.theta)?;
            if h.tau.iter().any(|t| !(*t > 0.0)) {
                bail!("every tau must be > 0");
            }
        }
        Command::Cauchy => {
            let c: CauchyParams = parse(p)?;
            c.spectrum.build()?;
            TimeGrid::new(c.t_final, c.steps)?;
            if c.r.iter().any(|r| !(*r > 1.0)) {
                bail!("every r must be > 1");
            }
        }
        Command::HardyCheck => {
            let h: HardyParams = parse(p)?;
            if let Some(e) = h.epsilon.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
                bail!("epsilon must be > 0, got {e}");
            }
            if let Some(p) = h.p.iter().find(|p| !(**p > 1.0 && p.is_finite())) {
                bail!("p must lie in (1, inf), got {p}");
            }
            if h.grids.is_empty() {
                bail!("hardy-check needs at least one grid");
            }
        }
    }
    Ok(())
}

fn run_sector_check(p: &Value) -> anyhow::Result<Outcome> {
    let params: SectorCheckParams = parse(p)?;
    let s = sector(params.theta)?;
    let op = params.operator.build()?;
    let grid = match &params.scan {
        Some(g) => ScanGrid::geometric(&s, g.r_min, g.r_max, g.per_decade, g.angles)?,
        None => ScanGrid::default_for(op.as_ref(), &s)?,
    };
    let spectrum = spectrum_in_sector(op.as_ref(), &s, false)?;
    let mut table = CsvTable::new("sectoriality_scan.csv", &["abs_lambda", "ratio"]);
    let results = if spectrum.clear {
        let rep = sectoriality_scan(op.as_ref(), &s, &grid)?;
        for (r, v) in rep.radial_profile() {
            table.push(vec![fmt_f64(r), fmt_f64(v)]);
        }
        json!({ "spectrum_clear": true, "m_r": rep.m_r, "argmax": rep.argmax })
    } else {
        json!({
            "spectrum_clear": false,
            "offenders": spectrum.offenders.iter().map(|z| c64_json(*z)).collect::<Vec<_>>(),
        })
    };
    let m_r = results["m_r"].as_f64();
    let pass = spectrum.clear && m_r.is_some_and(|m| m.is_finite() && params.max_bound.is_none_or(|b| m <= b));
    Ok(Outcome {
        pass,
        results,
        tables: vec![table],
    })
}

fn run_weight_window(p: &Value) -> anyhow::Result<Outcome> {
    let params: WeightWindowParams = parse(p)?;
    let w = weight_window(params.n, params.lambda0);
    Ok(Outcome {
        pass: w.admissible,
        results: json!({
            "bc": params.bc,
            "admissible": w.admissible,
            "window": [w.lower, w.upper],
            "s0": w.s0,
            "rule_check": w.rule_check,
        }),
        tables: Vec::new(),
    })
}

fn mode_operators(n: u32, gamma: f64, spec: &CrossSectionSpectrum, grid: &WeightedGrid) -> anyhow::Result<Vec<ConeModeOperator>> {
    spec.eigs
        .iter()
        .map(|&l| Ok(assemble_mode_operator(n, gamma, l, grid)?))
        .collect()
}

fn run_ellipticity(p: &Value) -> anyhow::Result<Outcome> {
    let params: EllipticityParams = parse(p)?;
    let spec = params.spectrum.build()?;
    let s = sector(params.theta)?;
    let echo = json!({ "n": params.n, "gamma": params.gamma, "mu": params.mu });
    let line = check_strip_clear(&spec, params.n, params.gamma, params.mu, StripMode::Line);
    let strip = check_strip_clear(&spec, params.n, params.gamma, params.mu, StripMode::ClosedStrip);
    let window = spec.lambda0().map(|l0| weight_window(params.n, l0));
    let mut verdicts = vec![
        ConditionVerdict::e2_assumed(spec.bc),
        ConditionVerdict::from_strip("E3", &line, echo.clone()),
        ConditionVerdict::from_strip("E3_closed_strip", &strip, echo),
    ];
    let mut e4_json = Value::Null;
    if !params.levels.is_empty() {
        let mut levels = Vec::new();
        for &(nodes, depth) in &params.levels {
            let grid = WeightedGrid::new(depth, nodes, params.gamma, params.n, params.p)?;
            levels.push(mode_operators(params.n, params.gamma, &spec, &grid)?);
        }
        let e4 = check_e4_numeric(&levels, &s)?;
        verdicts.push(ConditionVerdict {
            condition: "E4".into(),
            verdict: e4.holds,
            violations: e4
                .levels
                .iter()
                .flat_map(|l| l.offenders.iter().map(move |(j, z)| json!({ "level": l.level, "j": j, "eigenvalue": c64_json(*z) })))
                .collect(),
            parameters: json!({ "theta": params.theta, "levels": params.levels, "stable": e4.stable }),
        });
        e4_json = serde_json::to_value(&e4)?;
    }
    // E2 is carried as an assumption; the closed strip is informational
    let pass = verdicts.iter().filter(|v| v.condition != "E3_closed_strip").all(|v| v.verdict);
    Ok(Outcome {
        pass,
        results: json!({
            "verdicts": verdicts,
            "weight_window": window,
            "e4": e4_json,
            "cross_section_eigenvalues": spec.eigs,
        }),
        tables: Vec::new(),
    })
}

fn run_funcalc(p: &Value) -> anyhow::Result<Outcome> {
    let params: FuncalcParams = parse(p)?;
    let s = sector(params.theta)?;
    let op = params.operator.build()?;
    let mut results = serde_json::Map::new();
    let mut pass = true;
    let mut tables = Vec::new();
    if let Some(spec) = &params.function {
        let f = HFunction::from_spec(spec, &s)?;
        let scale = op.scale()?;
        let contour = contour_for(&f, &scale, params.tol, params.max_nodes)?;
        let res = dunford_matrix_scaled(op.as_ref(), &f, &contour, Some(&scale))?;
        let weights = op.norm_weights();
        let ok = res.error_estimate <= params.tol;
        pass &= ok;
        let mut table = CsvTable::new("f_of_a.csv", &["row", "col", "re", "im"]);
        for i in 0..res.value.nrows() {
            for j in 0..res.value.ncols() {
                let z = res.value[(i, j)];
                table.push(vec![i.to_string(), j.to_string(), fmt_f64(z.re), fmt_f64(z.im)]);
            }
        }
        tables.push(table);
        results.insert(
            "function".into(),
            json!({
                "label": f.label(),
                "norm": weighted_spectral_norm(&res.value, weights.as_deref()),
                "error_estimate": res.error_estimate,
                "nodes_used": res.nodes_used,
                "path": res.path,
                "contour": res.contour,
                "within_tol": ok,
            }),
        );
    }
    if let Some(curve) = &params.imaginary_powers {
        let grid = ScanGrid::default_for(op.as_ref(), &s)?;
        let m_r = sectoriality_scan(op.as_ref(), &s, &grid)?.m_r;
        let opts = ImaginaryPowerOptions {
            tol: params.tol,
            max_nodes: params.max_nodes,
            m_r: Some(m_r),
        };
        let mut table = CsvTable::new("imaginary_powers.csv", &["t", "norm", "bound", "ratio"]);
        let mut rows = Vec::new();
        for &t in &curve.t {
            let (_, rep) = imaginary_power(op.as_ref(), &s, t, curve.mode, &opts)?;
            pass &= rep.growth_ok;
            table.push(vec![fmt_f64(t), fmt_f64(rep.norm), fmt_f64(rep.bound), fmt_f64(rep.ratio)]);
            rows.push(rep);
        }
        tables.push(table);
        results.insert("imaginary_powers".into(), json!({ "m_r": m_r, "rows": rows }));
    }
    Ok(Outcome {
        pass,
        results: Value::Object(results),
        tables,
    })
}

fn run_hinf(p: &Value, seed: u64) -> anyhow::Result<Outcome> {
    let params: HinfParams = parse(p)?;
    let s = sector(params.theta)?;
    let op = params.operator.build()?;
    let opts = HinfOptions {
        tol: params.tol,
        max_nodes: params.max_nodes,
        refinements: params.refinements,
    };
    let rep = hinf_bound_estimate(op.as_ref(), &s, params.family_size, seed, &opts)?;
    let mut table = CsvTable::new("hinf_family.csv", &["label", "norm_f_of_a", "sup_norm", "ratio", "nodes", "error"]);
    let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
    for r in &rep.rows {
        table.push(vec![
            r.label.clone(),
            opt(r.norm_f_of_a),
            opt(r.sup_norm),
            opt(r.ratio),
            r.nodes.to_string(),
            r.error.clone().unwrap_or_default(),
        ]);
    }
    let failures = rep.rows.iter().filter(|r| r.error.is_some()).count();
    Ok(Outcome {
        pass: failures == 0 && rep.m_hat <= params.threshold,
        results: json!({ "m_hat": rep.m_hat, "threshold": params.threshold, "failed_members": failures, "rows": rep.rows }),
        tables: vec![table],
    })
}

fn run_heat(p: &Value) -> anyhow::Result<Outcome> {
    let params: HeatParams = parse(p)?;
    let s = sector(params.theta)?;
    let op = params.operator.build()?;
    let weights = op.norm_weights();
    let mut table = CsvTable::new("heat.csv", &["tau", "norm", "min_entry", "error_estimate"]);
    let mut rows = Vec::new();
    let mut pass = true;
    for &tau in &params.tau {
        let res = heat_semigroup(op.as_ref(), tau, &s, params.tol)?;
        let pos = heat_positivity(&res.value, res.error_estimate);
        let norm = weighted_spectral_norm(&res.value, weights.as_deref());
        pass &= res.error_estimate <= params.accept && (!params.require_positive || pos.nonnegative);
        table.push(vec![fmt_f64(tau), fmt_f64(norm), fmt_f64(pos.min_entry), fmt_f64(res.error_estimate)]);
        rows.push(json!({
            "tau": tau,
            "norm": norm,
            "positivity": pos,
            "error_estimate": res.error_estimate,
            "nodes_used": res.nodes_used,
            "contour": res.contour,
        }));
    }
    Ok(Outcome {
        pass,
        results: json!({ "rows": rows, "accept": params.accept }),
        tables: vec![table],
    })
}

fn run_cauchy(p: &Value, seed: u64) -> anyhow::Result<Outcome> {
    let params: CauchyParams = parse(p)?;
    let spec = params.spectrum.build()?;
    let grid = WeightedGrid::new(params.grid.depth, params.grid.nodes, params.gamma, params.n, params.grid.p)?;
    let modes = mode_operators(params.n, params.gamma, &spec, &grid)?;
    let time = TimeGrid::new(params.t_final, params.steps)?;
    let providers: Vec<&dyn ResolventProvider> = modes.iter().map(|m| m as &dyn ResolventProvider).collect();
    let cells = vec![grid.step(); modes.len()];
    let solver = CauchySolver::new(&providers, &cells, time, crate::calculus::DEFAULT_TOL)?;
    let mut reports = Vec::new();
    let mut trajectories = CsvTable::new("trajectories.csv", &["tau", "mode", "value"]);
    let mut ratios = CsvTable::new("max_regularity.csv", &["forcing", "r", "norm_du", "norm_au", "norm_f", "rho"]);
    let mut pass = true;
    for k in 0..params.forcings {
        let forcing = SineForcing::random(vec![grid.r_nodes(); modes.len()], params.t_final, params.support, seed.wrapping_add(k as u64));
        let traj = solver.solve(|j, t| forcing.eval(j, t))?;
        if k == 0 {
            for (i, tau) in traj.taus.iter().enumerate() {
                for (j, states) in traj.u.iter().enumerate() {
                    trajectories.push(vec![fmt_f64(*tau), j.to_string(), fmt_f64(discrete_norm(&states[i], &grid)?)]);
                }
            }
        }
        for &r in &params.r {
            let rep = solver.max_reg_report(&traj, |j, t| forcing.eval(j, t), r, grid.p)?;
            pass &= rep.rho.is_finite() && rep.rho < params.max_ratio;
            ratios.push(vec![
                k.to_string(),
                fmt_f64(r),
                fmt_f64(rep.norm_du),
                fmt_f64(rep.norm_au),
                fmt_f64(rep.norm_f),
                fmt_f64(rep.rho),
            ]);
            reports.push(json!({ "forcing": k, "report": rep }));
        }
    }
    Ok(Outcome {
        pass,
        results: json!({
            "reports": reports,
            "max_ratio": params.max_ratio,
            "semigroup_error": solver.semigroup_error,
            "mode_eigenvalues": spec.eigs,
        }),
        tables: vec![ratios, trajectories],
    })
}

fn run_hardy(p: &Value, seed: u64) -> anyhow::Result<Outcome> {
    let params: HardyParams = parse(p)?;
    let rows = hardy_table(&params.epsilon, &params.p, &params.grids, params.n, seed)?;
    let mut table = CsvTable::new("hardy.csv", &["epsilon", "p", "nodes", "depth", "norm_estimate", "bound", "pass"]);
    for r in &rows {
        table.push(vec![
            fmt_f64(r.epsilon),
            fmt_f64(r.p),
            r.nodes.to_string(),
            fmt_f64(r.depth),
            fmt_f64(r.norm_estimate),
            fmt_f64(r.bound),
            r.pass.to_string(),
        ]);
    }
    let mut pass = rows.iter().all(|r| r.pass);
    let mut slopes = Vec::new();
    if params.epsilon.len() >= 2 {
        for &(nodes, depth) in &params.grids {
            for &pp in &params.p {
                let pts: Vec<(f64, f64)> = rows
                    .iter()
                    .filter(|r| r.nodes == nodes && r.depth == depth && r.p == pp)
                    .map(|r| (r.bound, r.norm_estimate))
                    .collect();
                let slope = loglog_slope(&pts)?;
                if let Some([lo, hi]) = params.slope_range {
                    pass &= (lo..=hi).contains(&slope);
                }
                slopes.push(json!({ "nodes": nodes, "depth": depth, "p": pp, "slope": slope }));
            }
        }
    }
    Ok(Outcome {
        pass,
        results: json!({ "rows": rows, "slopes": slopes, "slope_range": params.slope_range }),
        tables: vec![table],
    })
}

/// Execute a validated config.
pub fn execute(config: &ExperimentConfig, seed: u64) -> anyhow::Result<Outcome> {
    let p = &config.parameters;
    match config.command {
        Command::SectorCheck => run_sector_check(p),
        Command::WeightWindow => run_weight_window(p),
        Command::EllipticityReport => run_ellipticity(p),
        Command::Funcalc => run_funcalc(p),
        Command::HinfBound => run_hinf(p, seed),
        Command::HeatSolve => run_heat(p),
        Command::Cauchy => run_cauchy(p, seed),
        Command::HardyCheck => run_hardy(p, seed),
    }
}

/// Flag, then `CONECALC_SEED`, then the config, then the default.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: Option<u64>) -> anyhow::Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(e) = env {
        return e
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV} must be an unsigned integer, got {e:?}"));
    }
    Ok(config.unwrap_or(DEFAULT_SEED))
}

pub fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let config: ExperimentConfig =
        serde_json::from_str(&text).with_context(|| format!("config schema violation in {}", path.display()))?;
    validate(&config).context("config schema violation")?;
    Ok(config)
}

/// Write `report.json` and the CSV tables; returns the report.
pub fn write_outputs(dir: &Path, config: &ExperimentConfig, seed: u64, outcome: &Outcome) -> anyhow::Result<Value> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let report = json!({
        "tool": "conecalc",
        "version": env!("CARGO_PKG_VERSION"),
        "command": config.command,
        "seed": seed,
        "timestamp": chrono::Utc::now().to_rfc3339(),
        "parameters": config.parameters,
        "pass": outcome.pass,
        "results": outcome.results,
    });
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    fs::write(dir.join("report.json"), text)?;
    for t in &outcome.tables {
        t.write(dir)?;
    }
    Ok(report)
}

/// Parse flags, run, and map the outcome onto the exit-code contract.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = if cli.verbose { "debug" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(&cli) {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be >= 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
    }
    let config = load_config(&cli.config)?;
    let env = std::env::var(SEED_ENV).ok();
    let seed = resolve_seed(cli.seed, env.as_deref(), config.seed)?;
    let dir = cli
        .out
        .clone()
        .or_else(|| config.output.clone())
        .context("no output directory: pass --out or set `output` in the config")?;
    log::info!("running {:?} with seed {seed}", config.command);
    let outcome = execute(&config, seed)?;
    write_outputs(&dir, &config, seed, &outcome)?;
    log::info!("pass = {}", outcome.pass);
    Ok(outcome.pass)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(command: &str, parameters: Value) -> ExperimentConfig {
        serde_json::from_value(json!({ "command": command, "parameters": parameters })).unwrap()
    }

    #[test]
    fn weight_window_example() {
        let c = config("weight-window", json!({ "n": 3, "bc": "Dirichlet", "lambda0": -1.0 }));
        validate(&c).unwrap();
        let o = execute(&c, 0).unwrap();
        assert!(o.pass);
        let w = &o.results["window"];
        assert!((w[0].as_f64().unwrap() + 0.41421).abs() < 1e-5);
        assert!((w[1].as_f64().unwrap() - 0.41421).abs() < 1e-5);
    }

    #[test]
    fn hinf_example() {
        let c = config(
            "hinf-bound",
            json!({ "theta": FRAC_PI_2, "operator": { "type": "diagonal", "eigs": [1.0, 4.0] } }),
        );
        let o = execute(&c, DEFAULT_SEED).unwrap();
        assert!(o.pass);
        assert!(o.results["m_hat"].as_f64().unwrap() <= 1.05);
    }

    #[test]
    fn hardy_validation_and_table() {
        let bad = config("hardy-check", json!({ "epsilon": [0.0], "grids": [[100, 6.0]] }));
        assert!(validate(&bad).is_err());
        let c = config("hardy-check", json!({ "epsilon": [0.5, 1.0], "grids": [[200, 8.0]] }));
        let o = execute(&c, 1).unwrap();
        assert_eq!(o.tables[0].rows.len(), 2);
        assert_eq!(o.tables[0].rows[0][5], "2");
        assert_eq!(o.tables[0].rows[1][5], "1");
    }

    #[test]
    fn unknown_keys_rejected() {
        let top: Result<ExperimentConfig, _> =
            serde_json::from_value(json!({ "command": "weight-window", "parameters": {}, "extra": 1 }));
        assert!(top.is_err());
        let c = config("weight-window", json!({ "n": 3, "bc": "Dirichlet", "lambda0": -1.0, "typo": 2 }));
        assert!(validate(&c).is_err());
        let unknown: Result<ExperimentConfig, _> = serde_json::from_value(json!({ "command": "nope" }));
        assert!(unknown.is_err());
    }

    #[test]
    fn seed_precedence() {
        assert_eq!(resolve_seed(Some(1), Some("2"), Some(3)).unwrap(), 1);
        assert_eq!(resolve_seed(None, Some("2"), Some(3)).unwrap(), 2);
        assert_eq!(resolve_seed(None, None, Some(3)).unwrap(), 3);
        assert_eq!(resolve_seed(None, None, None).unwrap(), DEFAULT_SEED);
        assert!(resolve_seed(None, Some("x"), None).is_err());
    }

    #[test]
    fn empty_table_has_header_and_lf() {
        let dir = tempfile::tempdir().unwrap();
        let t = CsvTable::new("empty.csv", &["a", "b"]);
        t.write(dir.path()).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("empty.csv")).unwrap(), "a,b\n");
    }

    #[test]
    fn sector_scan_profile_bounded() {
        let c = config(
            "sector-check",
            json!({ "theta": FRAC_PI_2, "operator": { "type": "diagonal", "eigs": [1.0, 2.0] } }),
        );
        let o = execute(&c, 0).unwrap();
        assert!(o.pass);
        assert!(o.tables[0].rows.iter().all(|r| r[1].parse::<f64>().unwrap() <= 1.0 + 1e-6));
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.0, 1.0, -2.5, 1e-20, 3.0e300, 0.1 + 0.2, 12345.678, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }
}
