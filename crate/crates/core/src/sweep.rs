//! ε-sweeps and refinement studies: configuration, runners, log-log rate
//! fits and machine-readable reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::equilibrium::EquilibriumSpec;
use crate::error::{Error, Result};
use crate::geometry::{Field, FnField, GradedMesh, Jet, MeshSpec};
use crate::kinetic::{
    advance_mc, estimate_rho, run_dvm, DvmState, FarBoundary, HistogramGrid, InitialProfile, KineticConfig, ParticleEnsemble, VelocityGrid,
    Wall,
};
use crate::operators::{
    apply_d, apply_d_eps, apply_l, apply_l_eps, boundary_flux, corrector_norm, phi_eps_l2, DForm, LForm, OperatorParams,
};
use crate::quad::gauss_legendre;
use crate::variational::{assemble, solve_evolution, solve_stationary, Basis, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    OperatorConvergence,
    CorrectorScaling,
    #[serde(alias = "phi-eps-L2")]
    PhiEpsL2,
    KineticVsMacro,
    FormEquivalence,
    EnergyAudit,
    Stationary,
    Evolve,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::OperatorConvergence => "operator-convergence",
            ExperimentKind::CorrectorScaling => "corrector-scaling",
            ExperimentKind::PhiEpsL2 => "phi-eps-l2",
            ExperimentKind::KineticVsMacro => "kinetic-vs-macro",
            ExperimentKind::FormEquivalence => "form-equivalence",
            ExperimentKind::EnergyAudit => "energy-audit",
            ExperimentKind::Stationary => "stationary",
            ExperimentKind::Evolve => "evolve",
        }
    }
}

/// Gaussian base field exp(-((x - center)/width)^2) of the operator experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestField {
    pub center: f64,
    pub width: f64,
    /// Apply the Neumann correction.
    #[serde(default = "yes")]
    pub neumann: bool,
}

impl Default for TestField {
    fn default() -> Self {
        Self { center: 1.5, width: 1.0, neumann: true }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshConfig {
    pub m: usize,
    pub x_max: f64,
    #[serde(default)]
    pub basis: Basis,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { m: 64, x_max: 40.0, basis: Basis::P3Hermite }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DvmConfig {
    /// Velocity cells per sign.
    pub k: usize,
    pub nx: usize,
    pub x_max: f64,
    pub cfl: f64,
    #[serde(default)]
    pub far: FarBoundary,
    /// Velocity cut-off; the default rule 50 ε^{-(2s-1)/(2s)} capped at 1000 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max: Option<f64>,
    /// f_in = ρ_in M (1 - a sign v): a = 0 is well prepared.
    #[serde(default = "default_anisotropy")]
    pub anisotropy: f64,
}

fn default_anisotropy() -> f64 {
    0.5
}

impl Default for DvmConfig {
    fn default() -> Self {
        Self { k: 40, nx: 400, x_max: 20.0, cfl: 0.9, far: FarBoundary::Specular, v_max: None, anisotropy: default_anisotropy() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KineticSetup {
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    /// Comparison times; t_final when empty.
    #[serde(default)]
    pub checkpoints: Vec<f64>,
    #[serde(default)]
    pub initial: InitialProfile,
    #[serde(default)]
    pub grid: HistogramGrid,
    #[serde(default)]
    pub dvm: DvmConfig,
    /// Implicit Euler step of the macroscopic solve.
    #[serde(default = "default_macro_dt")]
    pub macro_dt: f64,
}

fn default_particles() -> usize {
    100_000
}

fn default_t_final() -> f64 {
    0.5
}

fn default_macro_dt() -> f64 {
    1e-3
}

impl Default for KineticSetup {
    fn default() -> Self {
        Self {
            particles: default_particles(),
            t_final: default_t_final(),
            checkpoints: Vec::new(),
            initial: InitialProfile::default(),
            grid: HistogramGrid::default(),
            dvm: DvmConfig::default(),
            macro_dt: default_macro_dt(),
        }
    }
}

/// Declared pass criteria; echoed in every report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assertions {
    /// Errors must decrease strictly along the ε list.
    pub monotone: bool,
    /// Expected log-log slope; the corrector sweep defaults to (4s-1)/(2s+1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_slope: Option<f64>,
    /// Relative tolerance on the slope.
    pub slope_tolerance: f64,
    /// Statistical allowance in standard errors.
    pub sigma: f64,
    /// Pairwise relative tolerance of the form-equivalence check.
    pub form_tolerance: f64,
    /// Allowed relative violation of the discrete energy inequality.
    pub energy_tolerance: f64,
    /// Relative tolerance on mass agreement of deterministic solvers.
    pub mass_tolerance: f64,
}

impl Default for Assertions {
    fn default() -> Self {
        Self {
            monotone: true,
            expected_slope: None,
            slope_tolerance: 0.15,
            sigma: 3.0,
            form_tolerance: 1e-4,
            energy_tolerance: 1e-12,
            mass_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub kind: ExperimentKind,
    pub s: f64,
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(default = "unit")]
    pub nu0: f64,
    /// Strictly decreasing.
    #[serde(default)]
    pub eps: Vec<f64>,
    #[serde(default)]
    pub field: TestField,
    /// Evaluation points of the form-equivalence check.
    #[serde(default = "default_points")]
    pub points: Vec<f64>,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub kinetic: KineticSetup,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub assertions: Assertions,
}

fn one() -> usize {
    1
}
fn unit() -> f64 {
    1.0
}
fn default_points() -> Vec<f64> {
    vec![0.5, 1.0, 2.0, 4.0]
}

impl SweepConfig {
    pub fn new(kind: ExperimentKind, s: f64, eps: Vec<f64>) -> Self {
        Self {
            kind,
            s,
            dim: 1,
            nu0: 1.0,
            eps,
            field: TestField::default(),
            points: default_points(),
            mesh: MeshConfig::default(),
            kinetic: KineticSetup::default(),
            seed: 0,
            assertions: Assertions::default(),
        }
    }

    /// Defaults of each experiment: s = 3/4, N = 1 and the ε ladders of the
    /// acceptance runs at reduced particle counts.
    pub fn preset(kind: ExperimentKind) -> Self {
        let eps = match kind {
            ExperimentKind::OperatorConvergence | ExperimentKind::CorrectorScaling | ExperimentKind::PhiEpsL2 => {
                vec![0.4, 0.2, 0.1, 0.05]
            }
            ExperimentKind::KineticVsMacro | ExperimentKind::EnergyAudit => vec![0.5, 0.25, 0.125],
            _ => Vec::new(),
        };
        let mut c = Self::new(kind, 0.75, eps);
        c.kinetic.grid = HistogramGrid { x_max: 10.0, cells: 50 };
        c
    }

    /// Reads a TOML (or `.json`) configuration.
    pub fn from_path(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_value(Self::read_value(path)?).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// As [`SweepConfig::from_path`], with the experiment kind forced; the
    /// file may omit `kind`.
    pub fn from_path_as(path: &Path, kind: ExperimentKind) -> Result<Self> {
        let mut value = Self::read_value(path)?;
        match value.as_object_mut() {
            Some(map) => {
                map.insert("kind".into(), serde_json::to_value(kind).map_err(|e| Error::Parse(e.to_string()))?);
            }
            None => return Err(Error::Parse(format!("{}: expected a table", path.display()))),
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn read_value(path: &Path) -> Result<serde_json::Value> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display()))),
            _ => toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display()))),
        }
    }

    pub fn spec(&self) -> Result<EquilibriumSpec> {
        EquilibriumSpec::new(self.s, self.dim, self.nu0)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec()?;
        if self.eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::Config(format!("ε values {:?} must be positive", self.eps)));
        }
        if self.eps.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::Config(format!("ε list {:?} must be strictly decreasing", self.eps)));
        }
        let needs_eps = matches!(
            self.kind,
            ExperimentKind::OperatorConvergence
                | ExperimentKind::CorrectorScaling
                | ExperimentKind::PhiEpsL2
                | ExperimentKind::KineticVsMacro
                | ExperimentKind::EnergyAudit
        );
        if needs_eps && self.eps.is_empty() {
            return Err(Error::Config(format!("{} needs a nonempty ε list", self.kind.name())));
        }
        if !(self.field.width > 0.0) {
            return Err(Error::Config(format!("test field width {} must be positive", self.field.width)));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("configuration serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    pub label: String,
    pub error: f64,
    pub stderr: f64,
    #[serde(default)]
    pub extra: BTreeMap<String, f64>,
}

impl SweepRow {
    fn at(eps: f64, error: f64) -> Self {
        Self { eps: Some(eps), label: String::new(), error, stderr: 0.0, extra: BTreeMap::new() }
    }

    fn labelled(label: impl Into<String>, error: f64) -> Self {
        Self { eps: None, label: label.into(), error, stderr: 0.0, extra: BTreeMap::new() }
    }

    fn with(mut self, key: &str, value: f64) -> Self {
        self.extra.insert(key.to_string(), value);
        self
    }
}

/// Least-squares log-log slope with a jackknife 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub kind: ExperimentKind,
    pub config: SweepConfig,
    pub rows: Vec<SweepRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<SlopeFit>,
    pub checks: Vec<Check>,
    pub passed: bool,
    pub provenance: Provenance,
}

impl SweepReport {
    fn new(config: &SweepConfig) -> Self {
        Self {
            kind: config.kind,
            config: config.clone(),
            rows: Vec::new(),
            slope: None,
            checks: Vec::new(),
            passed: true,
            provenance: Provenance {
                config_hash: config.hash(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed: config.seed,
                threads: rayon::current_num_threads(),
            },
        }
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.passed &= passed;
        self.checks.push(Check { name: name.to_string(), passed, detail });
    }

    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.error).collect()
    }

    /// One CSV (eps, label, error, stderr, extra columns) and one JSON report.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let stem = self.kind.name();
        let csv = dir.join(format!("{stem}.csv"));
        let keys: Vec<String> = {
            let mut k: Vec<String> = self.rows.iter().flat_map(|r| r.extra.keys().cloned()).collect();
            k.sort();
            k.dedup();
            k
        };
        let mut w = csv::Writer::from_path(&csv).map_err(|e| Error::Io(e.into()))?;
        let mut header = vec!["eps".to_string(), "label".into(), "error".into(), "stderr".into()];
        header.extend(keys.iter().cloned());
        w.write_record(&header).map_err(|e| Error::Io(e.into()))?;
        for r in &self.rows {
            let mut rec = vec![r.eps.map(|e| e.to_string()).unwrap_or_default(), r.label.clone(), r.error.to_string(), r.stderr.to_string()];
            rec.extend(keys.iter().map(|k| r.extra.get(k).map(|v| v.to_string()).unwrap_or_default()));
            w.write_record(&rec).map_err(|e| Error::Io(e.into()))?;
        }
        w.flush()?;
        let json = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(&json, text)?;
        Ok((csv, json))
    }

    pub fn summary(&self) -> String {
        let mut out = format!("{} [{}]\n", self.kind.name(), if self.passed { "PASS" } else { "FAIL" });
        for r in &self.rows {
            let head = match r.eps {
                Some(e) => format!("eps = {e:<8}"),
                None => format!("{:<24}", r.label),
            };
            out.push_str(&format!("  {head} error = {:.6e} ± {:.2e}\n", r.error, r.stderr));
        }
        if let Some(f) = &self.slope {
            out.push_str(&format!("  slope {:.4} (95% CI {:.4} .. {:.4}, {} points)\n", f.slope, f.ci_low, f.ci_high, f.points));
        }
        for c in &self.checks {
            out.push_str(&format!("  [{}] {}: {}\n", if c.passed { "ok" } else { "FAIL" }, c.name, c.detail));
        }
        out
    }
}

/// Sizes the global worker pool; call once before any experiment.
pub fn init_threads(threads: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Output options shared by the runners.
#[derive(Debug, Clone, Default)]
pub struct RunContext {
    pub out: Option<PathBuf>,
    pub emit_fields: bool,
}

impl RunContext {
    fn field_path(&self, name: &str) -> Option<PathBuf> {
        match (&self.out, self.emit_fields) {
            (Some(dir), true) => Some(dir.join(name)),
            _ => None,
        }
    }
}

fn ols(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Fits log(error) = slope log(ε) + c over the positive finite errors.
pub fn fit_slope(eps: &[f64], errors: &[f64]) -> Result<SlopeFit> {
    let pts: Vec<(f64, f64)> =
        eps.iter().zip(errors).filter(|(e, r)| **e > 0.0 && **r > 0.0 && r.is_finite()).map(|(e, r)| (e.ln(), r.ln())).collect();
    let n = pts.len();
    if n < 3 {
        return Err(Error::Fit(format!("{n} valid points, at least 3 are needed")));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
    if x.iter().all(|v| (v - x[0]).abs() < 1e-14) {
        return Err(Error::Fit("all ε values coincide".into()));
    }
    let (slope, intercept) = ols(&x, &y);
    let loo: Vec<f64> = (0..n)
        .map(|i| {
            let xs: Vec<f64> = x.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
            let ys: Vec<f64> = y.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
            ols(&xs, &ys).0
        })
        .collect();
    let mean = loo.iter().sum::<f64>() / n as f64;
    let var = (n as f64 - 1.0) / n as f64 * loo.iter().map(|s| (s - mean).powi(2)).sum::<f64>();
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::Fit(e.to_string()))?.inverse_cdf(0.975);
    let half = t * var.sqrt();
    Ok(SlopeFit { slope, intercept, ci_low: slope - half, ci_high: slope + half, points: n })
}

fn gauss_jet(x: f64, c: f64, w: f64) -> Jet {
    let u = (x - c) / w;
    let e = (-u * u).exp();
    let mut j = Jet { v: e, ..Default::default() };
    j.g[0] = -2.0 * u / w * e;
    j.h[0][0] = (4.0 * u * u - 2.0) / (w * w) * e;
    j
}

/// Gaussian bump ψ0 corrected to satisfy D[ψ]·n = 0 at the wall (N = 1):
/// ψ = ψ0 - c w with w(x) = e^{-x^2} scaled to unit flux, c fixed by two
/// rounds of flux measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeumannCorrection {
    pub base_flux: f64,
    pub bump_flux: f64,
    pub coefficient: f64,
    pub residual_flux: f64,
}

pub fn test_field(field: &TestField, params: &OperatorParams) -> Result<(FnField, Option<NeumannCorrection>)> {
    let (c, w) = (field.center, field.width);
    if !field.neumann {
        return Ok((FnField::new(1, 0.0, move |x| gauss_jet(x[0], c, w)), None));
    }
    if params.spec.dim != 1 {
        return Err(Error::Config("the Neumann-corrected test field is built for N = 1".into()));
    }
    let combo = move |k: f64| FnField::new(1, 0.0, move |x| {
        let a = gauss_jet(x[0], c, w);
        let b = gauss_jet(x[0], 0.0, 1.0);
        let mut j = a;
        j.v -= k * b.v;
        j.g[0] -= k * b.g[0];
        j.h[0][0] -= k * b.h[0][0];
        j
    });
    let base_flux = boundary_flux(&combo(0.0), &[], params)?.value;
    let bump_flux = boundary_flux(&FnField::new(1, 0.0, |x| gauss_jet(x[0], 0.0, 1.0)), &[], params)?.value;
    if bump_flux.abs() < 1e-12 {
        return Err(Error::Config("correction bump has no flux response".into()));
    }
    let mut k = base_flux / bump_flux;
    let mut residual = boundary_flux(&combo(k), &[], params)?.value;
    k += residual / bump_flux;
    residual = boundary_flux(&combo(k), &[], params)?.value;
    Ok((combo(k), Some(NeumannCorrection { base_flux, bump_flux, coefficient: k, residual_flux: residual })))
}

fn params_of(config: &SweepConfig) -> Result<OperatorParams> {
    let p = OperatorParams::new(config.spec()?);
    p.validate()?;
    Ok(p)
}

/// Element midpoints and lengths of the graded mesh: the L²(grid) quadrature.
fn l2_grid(config: &SweepConfig) -> Result<Vec<(f64, f64)>> {
    let mesh = GradedMesh::new(MeshSpec::for_order(config.s, config.mesh.m, config.mesh.x_max))?;
    Ok(mesh.normal.windows(2).map(|e| (0.5 * (e[0] + e[1]), e[1] - e[0])).collect())
}

fn monotone_check(report: &mut SweepReport) {
    if !report.config.assertions.monotone {
        return;
    }
    let e = report.errors();
    let ok = e.windows(2).all(|w| w[1] < w[0]);
    report.check("strictly decreasing", ok, format!("errors {:?}", e.iter().map(|v| format!("{v:.4e}")).collect::<Vec<_>>()));
}

/// ‖L_ε[ψ] - L[ψ]‖ and ‖D_ε[ψ] - D[ψ]‖ in L²(grid) for each ε.
pub fn run_operator_convergence(config: &SweepConfig, ctx: &RunContext) -> Result<SweepReport> {
    config.validate()?;
    let p = params_of(config)?;
    let (psi, corr) = test_field(&config.field, &p)?;
    let grid = l2_grid(config)?;
    let exact: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|&(x, _)| Ok((apply_l(&psi, &[x], LForm::PvGradient, &p)?.value, apply_d(&psi, &[x], DForm::Gradient, &p)?.value[0])))
        .collect::<Result<_>>()?;
    let mut report = SweepReport::new(config);
    for &eps in &config.eps {
        let approx: Vec<(f64, f64)> = grid
            .par_iter()
            .map(|&(x, _)| {
                let l = apply_l_eps(&psi, eps, &[x], &p).map_err(|e| Error::Quadrature(format!("ε = {eps}: {e}")))?;
                let d = apply_d_eps(&psi, eps, &[x], &p).map_err(|e| Error::Quadrature(format!("ε = {eps}: {e}")))?;
                Ok((l.value, d.value[0]))
            })
            .collect::<Result<_>>()?;
        let (mut l2, mut d2, mut wall, mut inner) = (0.0, 0.0, 0.0, 0.0);
        for ((&(x, h), a), b) in grid.iter().zip(&approx).zip(&exact) {
            let el = (a.0 - b.0).powi(2) * h;
            l2 += el;
            d2 += (a.1 - b.1).powi(2) * h;
            if x < 1.0 {
                wall += el;
            } else {
                inner += el;
            }
        }
        if let Some(path) = ctx.field_path(&format!("operators_eps_{eps}.csv")) {
            let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Io(e.into()))?;
            w.write_record(["x", "psi", "l", "l_eps", "d", "d_eps"]).map_err(|e| Error::Io(e.into()))?;
            for ((&(x, _), a), b) in grid.iter().zip(&approx).zip(&exact) {
                let rec = [x, psi.value(&[x]), b.0, a.0, b.1, a.1].map(|v| v.to_string());
                w.write_record(&rec).map_err(|e| Error::Io(e.into()))?;
            }
            w.flush()?;
        }
        report.rows.push(SweepRow::at(eps, l2.sqrt()).with("d_error", d2.sqrt()).with("l_wall", wall.sqrt()).with("l_interior", inner.sqrt()));
    }
    if let Some(c) = corr {
        report.rows.iter_mut().for_each(|r| {
            r.extra.insert("residual_flux".into(), c.residual_flux);
        });
    }
    monotone_check(&mut report);
    if config.assertions.monotone {
        let d: Vec<f64> = report.rows.iter().map(|r| r.extra["d_error"]).collect();
        report.check("flux error strictly decreasing", d.windows(2).all(|w| w[1] < w[0]), format!("errors {:?}", d.iter().map(|v| format!("{v:.4e}")).collect::<Vec<_>>()));
    }
    report.slope = fit_slope(&config.eps, &report.errors()).ok();
    Ok(report)
}

/// ‖T^ε‖_{L²} per ε and its fitted exponent against (4s-1)/(2s+1).
pub fn run_corrector_scaling(config: &SweepConfig) -> Result<SweepReport> {
    config.validate()?;
    let p = params_of(config)?;
    let (psi, _) = test_field(&config.field, &p)?;
    let mut report = SweepReport::new(config);
    let mut resolved = config.clone();
    let expected = config.assertions.expected_slope.unwrap_or((4.0 * config.s - 1.0) / (2.0 * config.s + 1.0));
    resolved.assertions.expected_slope = Some(expected);
    report.config = resolved;
    for &eps in &config.eps {
        let t = corrector_norm(&psi, eps, &p).map_err(|e| Error::Quadrature(format!("ε = {eps}: {e}")))?;
        let mut row = SweepRow::at(eps, t.value);
        row.stderr = t.error;
        report.rows.push(row);
    }
    let fit = fit_slope(&config.eps, &report.errors())?;
    let tol = config.assertions.slope_tolerance;
    let ok = (fit.slope - expected).abs() <= tol * expected.abs();
    report.check("corrector exponent", ok, format!("fitted {:.4} vs expected {expected:.4} ± {:.0}%", fit.slope, 100.0 * tol));
    report.slope = Some(fit);
    Ok(report)
}

/// ∭ |φ^ε - ψ|^2 F per ε; the slope is informative (compared with 2s, not asserted).
pub fn run_phi_eps_l2(config: &SweepConfig) -> Result<SweepReport> {
    config.validate()?;
    let p = params_of(config)?;
    let (psi, _) = test_field(&config.field, &p)?;
    let mut report = SweepReport::new(config);
    let values: Vec<_> = config
        .eps
        .par_iter()
        .map(|&eps| phi_eps_l2(&psi, eps, &p).map_err(|e| Error::Quadrature(format!("ε = {eps}: {e}"))))
        .collect::<Result<_>>()?;
    for (&eps, d) in config.eps.iter().zip(values) {
        let mut row = SweepRow::at(eps, d.value);
        row.stderr = d.error;
        report.rows.push(row);
    }
    monotone_check(&mut report);
    if let Ok(fit) = fit_slope(&config.eps, &report.errors()) {
        report.checks.push(Check {
            name: "slope versus 2s (informative)".into(),
            passed: true,
            detail: format!("fitted {:.4} (CI {:.4} .. {:.4}), 2s = {:.4}", fit.slope, fit.ci_low, fit.ci_high, 2.0 * config.s),
        });
        report.slope = Some(fit);
    }
    Ok(report)
}

/// Pairwise relative differences of the three forms of L and of D at the
/// configured points, on the Gaussian test field and on x e^{-x}.
pub fn run_form_equivalence(config: &SweepConfig) -> Result<SweepReport> {
    config.validate()?;
    let p = params_of(config)?;
    let gauss = FnField::new(1, 0.0, {
        let f = config.field;
        move |x| gauss_jet(x[0], f.center, f.width)
    });
    let xexp = FnField::new(1, 0.0, |x| {
        let t = x[0];
        let e = (-t).exp();
        let mut j = Jet { v: t * e, ..Default::default() };
        j.g[0] = (1.0 - t) * e;
        j.h[0][0] = (t - 2.0) * e;
        j
    });
    let fields: [(&str, &FnField); 2] = [("gaussian", &gauss), ("x-exp", &xexp)];
    let mut report = SweepReport::new(config);
    let spread = |v: &[f64]| {
        let scale = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let mut worst = 0.0f64;
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                worst = worst.max((v[i] - v[j]).abs() / scale);
            }
        }
        worst
    };
    let mut worst = 0.0f64;
    for (name, f) in fields {
        for &x in &config.points {
            let l: Vec<f64> = [LForm::PvGradient, LForm::Extension, LForm::RegionalBoundary]
                .iter()
                .map(|&form| apply_l(f, &[x], form, &p).map(|e| e.value))
                .collect::<Result<_>>()?;
            let d: Vec<f64> = [DForm::Gradient, DForm::Extension, DForm::BoundarySplit]
                .iter()
                .map(|&form| apply_d(f, &[x], form, &p).map(|e| e.value[0]))
                .collect::<Result<_>>()?;
            let (sl, sd) = (spread(&l), spread(&d));
            worst = worst.max(sl).max(sd);
            report.rows.push(SweepRow::labelled(format!("{name} x={x}"), sl.max(sd)).with("x", x).with("l_spread", sl).with("d_spread", sd).with("l", l[1]).with("d", d[1]));
        }
    }
    let tol = config.assertions.form_tolerance;
    report.check("pairwise agreement", worst <= tol, format!("largest relative difference {worst:.3e} (tolerance {tol:e})"));
    Ok(report)
}

fn kinetic_config(config: &SweepConfig, eps: f64) -> Result<KineticConfig> {
    let k = &config.kinetic;
    let mut kc = KineticConfig::new(eps, config.spec()?, k.t_final)?;
    kc.initial = k.initial.clone();
    kc.grid = k.grid;
    kc.wall = Wall::Diffuse;
    kc.validate()?;
    Ok(kc)
}

/// Cell averages of a field over the histogram cells (8-point Gauss per cell).
fn cell_averages<F: Field + ?Sized>(f: &F, grid: &HistogramGrid) -> Vec<f64> {
    let rule = gauss_legendre(8);
    let e = grid.edges();
    e.windows(2).map(|c| rule.integrate(c[0], c[1], |x| f.value(&[x])) / (c[1] - c[0])).collect()
}

/// Kinetic ρ^ε from Monte Carlo against the macroscopic evolution from the same ρ_in.
pub fn run_kinetic_vs_macro(config: &SweepConfig, ctx: &RunContext) -> Result<SweepReport> {
    config.validate()?;
    if config.dim != 1 {
        return Err(Error::Config("the macroscopic comparison is implemented for N = 1".into()));
    }
    let k = &config.kinetic;
    let p = params_of(config)?;
    let mesh = GradedMesh::new(MeshSpec::for_order(config.s, config.mesh.m, config.mesh.x_max))?;
    let system = assemble(&mesh, &p, config.mesh.basis)?;
    let rho_in = system.space.interpolate(&k.initial.field()?)?;
    let traj = solve_evolution(&system, &rho_in, k.t_final, k.macro_dt, &SolverOptions::default())?;
    let mut checkpoints = if k.checkpoints.is_empty() { vec![k.t_final] } else { k.checkpoints.clone() };
    checkpoints.sort_by(f64::total_cmp);
    if checkpoints.iter().any(|t| !(*t > 0.0 && *t <= k.t_final * (1.0 + 1e-12))) {
        return Err(Error::Config(format!("checkpoints {checkpoints:?} must lie in (0, t_final]")));
    }
    let h = if traj.times.len() > 1 { traj.times[1] } else { k.t_final };
    let macro_at = |t: f64| -> Result<(f64, Vec<f64>, f64)> {
        let n = ((t / h).round() as usize).min(traj.states.len() - 1);
        let field = system.space.to_field(&traj.states[n])?;
        Ok((traj.times[n], cell_averages(&field, &k.grid), traj.masses[n]))
    };
    let m_in = k.initial.mass();
    let mut report = SweepReport::new(config);
    let moments: [(&str, fn(f64) -> f64); 2] = [("exp", |x| (-x).exp()), ("bump", |x| (-(x - 2.0) * (x - 2.0)).exp())];
    let cells = k.grid.centers();
    let width = k.grid.width();
    for (i, &eps) in config.eps.iter().enumerate() {
        let kc = kinetic_config(config, eps)?;
        let seed = config.seed.wrapping_add(i as u64);
        let mut ens = ParticleEnsemble::well_prepared(&kc, k.particles, seed)?;
        let mut now = 0.0;
        for (j, &t) in checkpoints.iter().enumerate() {
            advance_mc(&mut ens, &kc, t - now)?;
            now = t;
            let est = estimate_rho(&ens, &k.grid)?;
            let (tm, avg, mass_macro) = macro_at(t)?;
            let mut d2 = 0.0;
            let mut var = 0.0;
            let mut floor = 0.0;
            for c in 0..avg.len() {
                let diff = est.density[c] - avg[c];
                d2 += diff * diff * width;
                var += (diff * width).powi(2) * est.stderr[c].powi(2);
                floor += est.stderr[c].powi(2) * width;
            }
            let d = d2.sqrt();
            let mut row = SweepRow::at(eps, d)
                .with("t", tm)
                .with("noise_floor", floor.sqrt())
                .with("mass_kinetic", ens.total_weight())
                .with("mass_window", est.mass())
                .with("mass_macro", mass_macro)
                .with("mass_in", m_in);
            row.stderr = if d > 0.0 { var.sqrt() / d } else { 0.0 };
            for (name, phi) in moments {
                let a: f64 = cells.iter().zip(&est.density).map(|(x, r)| phi(*x) * r * width).sum();
                let b: f64 = cells.iter().zip(&avg).map(|(x, r)| phi(*x) * r * width).sum();
                let sd = cells.iter().zip(&est.stderr).map(|(x, e)| (phi(*x) * e * width).powi(2)).sum::<f64>().sqrt();
                row.extra.insert(format!("moment_{name}_diff"), (a - b).abs());
                row.extra.insert(format!("moment_{name}_stderr"), sd);
            }
            if j + 1 == checkpoints.len() {
                row.label = "final".into();
                if let Some(path) = ctx.field_path(&format!("rho_eps_{eps}.csv")) {
                    est.write_csv(&path)?;
                }
            } else {
                row.label = format!("t={t}");
            }
            report.rows.push(row);
        }
    }
    if let Some(path) = ctx.field_path("rho_macro.csv") {
        traj.write_csv(&system.space, &path)?;
    }
    let finals: Vec<SweepRow> = report.rows.iter().filter(|r| r.label == "final").cloned().collect();
    let sig = config.assertions.sigma;
    let within = |a: f64, sa: f64, b: f64, sb: f64| b <= a + sig * (sa * sa + sb * sb).sqrt();
    let ok = finals.windows(2).all(|w| within(w[0].error, w[0].stderr, w[1].error, w[1].stderr));
    let ds: Vec<String> = finals.iter().map(|r| format!("{:.4e}±{:.1e}", r.error, r.stderr)).collect();
    let strong = format!("distance decreasing within {sig}σ");
    let weak_ok = finals.windows(2).all(|w| {
        moments.iter().all(|(name, _)| {
            let (d, e) = (format!("moment_{name}_diff"), format!("moment_{name}_stderr"));
            within(w[0].extra[&d], w[0].extra[&e], w[1].extra[&d], w[1].extra[&e])
        })
    });
    if ok || !weak_ok {
        report.check(&strong, ok, ds.join(", "));
    } else {
        // the L² surrogate is stronger than the weak convergence being tested
        report.checks.push(Check { name: format!("{strong} (strong surrogate, flagged)"), passed: false, detail: ds.join(", ") });
    }
    report.check(&format!("weak moments decreasing within {sig}σ"), weak_ok, "test functions e^{-x}, e^{-(x-2)^2}".into());
    let strict = finals.windows(2).all(|w| w[1].error < w[0].error);
    report.checks.push(Check { name: "distance strictly decreasing (informative)".into(), passed: strict, detail: ds.join(", ") });
    let worst_kin = finals.iter().map(|r| (r.extra["mass_kinetic"] - m_in).abs()).fold(0.0, f64::max);
    let worst_mac = finals.iter().map(|r| (r.extra["mass_macro"] - m_in).abs()).fold(0.0, f64::max);
    let tol = config.assertions.mass_tolerance;
    report.check(
        "masses match",
        worst_kin <= tol * m_in && worst_mac <= tol * m_in,
        format!("|kinetic - ρ_in| = {worst_kin:.2e}, |macroscopic - ρ_in| = {worst_mac:.2e} (tolerance {tol:e})"),
    );
    Ok(report)
}

/// Discrete energy inequality along DVM trajectories for each ε.
pub fn run_energy_audit(config: &SweepConfig) -> Result<SweepReport> {
    config.validate()?;
    if config.dim != 1 {
        return Err(Error::Config("the energy audit uses the one-dimensional discrete-velocity solver".into()));
    }
    let k = &config.kinetic;
    let d = &k.dvm;
    let mut report = SweepReport::new(config);
    let tol = config.assertions.energy_tolerance;
    let mut worst = f64::NEG_INFINITY;
    let mut min_dg = f64::INFINITY;
    let mut budget_ok = true;
    let mut eq_ok = true;
    let mut worst_budget = 0.0f64;
    let mut worst_eq = 0.0f64;
    for &eps in &config.eps {
        let kc = kinetic_config(config, eps)?;
        let vgrid = match d.v_max {
            Some(v) => VelocityGrid::graded(&kc.spec, d.k, v, 2.0)?,
            None => VelocityGrid::for_eps(&kc.spec, eps, d.k)?,
        };
        let m = vgrid.m.clone();
        let a = d.anisotropy;
        let prof = k.initial.clone();
        let dx = d.x_max / d.nx as f64;
        let rho: Vec<f64> = (0..d.nx).map(|i| prof.cell_average(i as f64 * dx, (i + 1) as f64 * dx)).collect::<Result<_>>()?;
        let mut st = DvmState::new(vgrid.clone(), d.x_max, d.nx, |x, v, kk| rho[((x / dx) as usize).min(d.nx - 1)] * m[kk] * (1.0 - a * v.signum()))?;
        st.far = d.far;
        let m0 = st.mass();
        let run = run_dvm(&mut st, &kc, k.t_final, d.cfl)?;
        let violation = run.worst_step_violation();
        let cumulative = run.cumulative_dissipation();
        let final_e = run.steps.last().map_or(run.initial_energy, |s| s.energy_after);
        worst = worst.max(violation);
        min_dg = min_dg.min(run.min_wall_residual());
        budget_ok &= cumulative <= run.initial_energy * (1.0 + tol) && final_e + cumulative <= run.initial_energy * (1.0 + tol);
        worst_budget = worst_budget.max((final_e + cumulative) / run.initial_energy);
        let drift = (st.mass() + st.leaked - m0).abs() / m0;
        // equilibrium data: constant times M stays put and dissipates nothing
        let mut eq = DvmState::new(vgrid, d.x_max, d.nx, |_, _, kk| m[kk])?;
        eq.far = FarBoundary::Specular;
        let horizon = k.t_final.min(20.0 * eq.max_dt(&kc));
        let eq_run = run_dvm(&mut eq, &kc, horizon, d.cfl)?;
        let eq_diss = eq_run.cumulative_dissipation();
        eq_ok &= eq_diss <= 1e-20 * eq_run.initial_energy;
        worst_eq = worst_eq.max(eq_diss / eq_run.initial_energy);
        report.rows.push(
            SweepRow::at(eps, violation)
                .with("initial_energy", run.initial_energy)
                .with("final_energy", final_e)
                .with("cumulative_dissipation", cumulative)
                .with("min_wall_residual", run.min_wall_residual())
                .with("tail_budget", run.tail_budget())
                .with("tail_mass", st.grid.tail_mass)
                .with("mass_drift", drift)
                .with("min_f", st.min_value())
                .with("steps", run.steps.len() as f64)
                .with("equilibrium_dissipation", eq_diss),
        );
    }
    report.check("energy inequality at every step", worst <= tol, format!("largest relative violation {worst:.3e} (tolerance {tol:e})"));
    report.check("Darrozès–Guiraud residual", min_dg >= -1e-12, format!("smallest residual {min_dg:.3e}"));
    report.check(
        "cumulative dissipation bounded by the initial energy",
        budget_ok,
        format!("largest (final energy + dissipation) / initial energy {worst_budget:.6}"),
    );
    report.check("equilibrium data dissipates nothing", eq_ok, format!("largest relative dissipation {worst_eq:.1e}"));
    Ok(report)
}

/// Stationary problem A φ = M ρ_in on the configured mesh.
pub fn run_stationary(config: &SweepConfig, ctx: &RunContext) -> Result<SweepReport> {
    config.validate()?;
    let p = params_of(config)?;
    let mesh = GradedMesh::new(MeshSpec::for_order(config.s, config.mesh.m, config.mesh.x_max))?;
    let system = assemble(&mesh, &p, config.mesh.basis)?;
    let g = config.kinetic.initial.field()?;
    let sol = solve_stationary(&system, &g, &SolverOptions::default())?;
    let gi = system.space.interpolate(&g)?;
    let energy = crate::variational::stationary_energy(&system, &sol.coeffs, &gi);
    let ones = system.space.constant(1.0);
    let b1 = (&system.nonlocal * &ones).amax();
    let mut report = SweepReport::new(config);
    report.rows.push(
        SweepRow::labelled("stationary", sol.stats.residual)
            .with("energy", energy)
            .with("asymmetry", system.asymmetry())
            .with("kernel_defect", b1)
            .with("assembly_error", system.assembly_error)
            .with("ndof", system.ndof() as f64),
    );
    report.check("residual below 1e-10", sol.stats.residual < 1e-10, format!("{:.3e}", sol.stats.residual));
    report.check("assembled matrix symmetric", system.asymmetry() <= 1e-12, format!("{:.3e}", system.asymmetry()));
    if let Some(path) = ctx.field_path("stationary_phi.csv") {
        sol.field.write_csv(&path)?;
    }
    Ok(report)
}

/// Implicit Euler evolution from ρ_in to t_final.
pub fn run_evolve(config: &SweepConfig, ctx: &RunContext) -> Result<SweepReport> {
    config.validate()?;
    let p = params_of(config)?;
    let mesh = GradedMesh::new(MeshSpec::for_order(config.s, config.mesh.m, config.mesh.x_max))?;
    let system = assemble(&mesh, &p, config.mesh.basis)?;
    let rho_in: DVector<f64> = system.space.interpolate(&config.kinetic.initial.field()?)?;
    let traj = solve_evolution(&system, &rho_in, config.kinetic.t_final, config.kinetic.macro_dt, &SolverOptions::default())?;
    let drift = traj.mass_drift();
    let rise = traj.max_norm_increase();
    let mut report = SweepReport::new(config);
    for (t, (m, l)) in traj.times.iter().zip(traj.masses.iter().zip(&traj.l2_norms)) {
        let mut row = SweepRow::labelled(format!("t={t}"), *l).with("t", *t).with("mass", *m);
        row.eps = None;
        report.rows.push(row);
    }
    let m0 = traj.masses[0].abs().max(1e-300);
    report.check("mass conserved to 1e-8", drift <= 1e-8 * m0, format!("drift {drift:.3e}"));
    report.check("L² norm nonincreasing", rise <= 0.0, format!("largest increase {rise:.3e}"));
    if let Some(path) = ctx.field_path("evolution_states.csv") {
        traj.write_csv(&system.space, &path)?;
    }
    Ok(report)
}

/// Dispatches on the configured experiment kind.
pub fn run(config: &SweepConfig, ctx: &RunContext) -> Result<SweepReport> {
    if let Some(dir) = &ctx.out {
        std::fs::create_dir_all(dir)?;
    }
    let report = match config.kind {
        ExperimentKind::OperatorConvergence => run_operator_convergence(config, ctx)?,
        ExperimentKind::CorrectorScaling => run_corrector_scaling(config)?,
        ExperimentKind::PhiEpsL2 => run_phi_eps_l2(config)?,
        ExperimentKind::KineticVsMacro => run_kinetic_vs_macro(config, ctx)?,
        ExperimentKind::FormEquivalence => run_form_equivalence(config)?,
        ExperimentKind::EnergyAudit => run_energy_audit(config)?,
        ExperimentKind::Stationary => run_stationary(config, ctx)?,
        ExperimentKind::Evolve => run_evolve(config, ctx)?,
    };
    if let Some(dir) = &ctx.out {
        report.write(dir)?;
    }
    Ok(report)
}
