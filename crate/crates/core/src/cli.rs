//! Run configurations, catalog reproductions, field design reports and
//! file export. The `riesz` binary is a thin wrapper over these commands.
//!
//! Failures carry a process exit code: 2 for configuration problems, 3 for
//! solver failures, 4 for I/O.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::constants::{riesz_constant, RieszConstant};
use crate::diagnostics::{
    self, covering_radius, covering_radius_masked, default_fill_distance, diagnose, empirical_density,
    label_mesh_by_component, separation, DiagnosticOptions, DiagnosticsReport,
};
use crate::equilibrium::{EquilibriumMeasure, EquilibriumSummary};
use crate::error::Error;
use crate::fields::{design_field, DensityDescriptor, ExampleId, ExternalField, FieldDescriptor};
use crate::geometry::{CompactSet, SetDescriptor};
use crate::optimizer::{minimize, ExecMode, Minimizer, OptimizerSettings};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Bumped whenever `report.json` changes shape.
pub const REPORT_VERSION: u32 = 1;

const DEFAULTS_JSON: &str = include_str!("../data/reproduce_defaults.json");

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(e: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: e.to_string(),
        }
    }

    pub fn solver(e: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_SOLVER,
            message: e.to_string(),
        }
    }

    pub fn io(e: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_IO,
            message: e.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// RFC 4180 writer: CRLF record terminator, quoting only when needed.
pub fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(w)
}

/// Worker cap from `RIESZ_THREADS`, if set.
pub fn thread_cap() -> CliResult<Option<usize>> {
    match std::env::var("RIESZ_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::config(format!(
                "RIESZ_THREADS must be a positive integer, got '{v}'"
            ))),
        },
        Err(_) => Ok(None),
    }
}

/// Installs the global rayon pool, capped by `RIESZ_THREADS`.
pub fn configure_threads() -> CliResult<Option<usize>> {
    let cap = thread_cap()?;
    if let Some(n) = cap {
        // A pool may already exist (tests, repeated calls); keep it.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(cap)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub set: SetDescriptor,
    pub field: FieldDescriptor,
    pub s: f64,
    pub n: usize,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
    /// Overrides `optimizer.rng_seed`.
    #[serde(default)]
    pub rng_seed: Option<u64>,
    pub output_dir: PathBuf,
    /// Overrides `optimizer.mode`.
    #[serde(default)]
    pub mode: Option<ExecMode>,
    #[serde(default)]
    pub diagnostics: DiagnosticOptions,
    /// Replaces the library's `C_{s,d}`.
    #[serde(default)]
    pub constant_override: Option<f64>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::config(format!("invalid run config: {e}")))
    }

    pub fn settings(&self) -> OptimizerSettings {
        let mut s = self.optimizer.clone();
        if let Some(seed) = self.rng_seed {
            s.rng_seed = seed;
        }
        if let Some(mode) = self.mode {
            s.mode = mode;
        }
        s
    }
}

/// A validated configuration with everything resolved.
#[derive(Clone, Debug)]
pub struct PreparedRun {
    pub set: CompactSet,
    pub field: ExternalField,
    pub constant: RieszConstant,
    pub settings: OptimizerSettings,
    pub s: f64,
    pub n: usize,
    pub diagnostics: DiagnosticOptions,
}

pub fn prepare(config: &RunConfig) -> CliResult<PreparedRun> {
    let set = CompactSet::from_descriptor(&config.set).map_err(CliError::config)?;
    let d = set.hausdorff_dim();
    if config.n < 2 {
        return Err(CliError::config(format!("n must be at least 2, got {}", config.n)));
    }
    let constant = match config.constant_override {
        Some(c) => RieszConstant::user_override(config.s, d, c),
        None => riesz_constant(config.s, d),
    }
    .map_err(CliError::config)?;
    let field = config.field.resolve(&set).map_err(CliError::config)?;
    let settings = config.settings();
    settings.validate().map_err(CliError::config)?;
    Ok(PreparedRun {
        set,
        field,
        constant,
        settings,
        s: config.s,
        n: config.n,
        diagnostics: config.diagnostics,
    })
}

/// Results of one equilibrium solve + minimization + diagnostics.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub set: CompactSet,
    pub measure: EquilibriumMeasure,
    pub minimizer: Minimizer,
    pub diagnostics: DiagnosticsReport,
    pub seed: u64,
    pub mode: ExecMode,
}

pub fn execute(run: &PreparedRun) -> CliResult<RunOutcome> {
    let measure = EquilibriumMeasure::solve(&run.set, &run.field, run.constant).map_err(CliError::solver)?;
    let minimizer = minimize(&run.set, &run.field, run.s, run.n, &run.settings).map_err(CliError::solver)?;
    let report = diagnose(&run.set, &minimizer.configuration, &measure, &run.diagnostics).map_err(CliError::solver)?;
    Ok(RunOutcome {
        set: run.set.clone(),
        measure,
        minimizer,
        diagnostics: report,
        seed: run.settings.rng_seed,
        mode: run.settings.mode,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConstants {
    pub c_sd: RieszConstant,
    pub m_constant: f64,
    pub l1: f64,
    pub s_value: f64,
    pub support_fraction: f64,
    pub mass_residual: f64,
}

impl From<EquilibriumSummary> for ResolvedConstants {
    fn from(e: EquilibriumSummary) -> Self {
        ResolvedConstants {
            c_sd: e.c_sd,
            m_constant: e.m_constant,
            l1: e.l1,
            s_value: e.s_value,
            support_fraction: e.support_fraction,
            mass_residual: e.residual,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSummary {
    pub converged: bool,
    pub iterations: usize,
    pub restart: usize,
    pub restart_energies: Vec<Option<f64>>,
}

/// One computed value next to its reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub quantity: String,
    pub reference: f64,
    pub computed: f64,
    pub tolerance: Tolerance,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    pub command: String,
    pub set: SetDescriptor,
    pub field: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field_descriptor: Option<FieldDescriptor>,
    pub s: f64,
    pub n: usize,
    pub constants: ResolvedConstants,
    pub final_energy: f64,
    pub optimizer: OptimizerSummary,
    pub diagnostics: DiagnosticsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Vec<ComparisonEntry>>,
    /// Files written, relative to the output directory.
    pub files: Vec<String>,
    pub output_dir: PathBuf,
    pub wall_time_s: f64,
    pub seed: u64,
    pub mode: ExecMode,
}

impl RunReport {
    pub fn all_pass(&self) -> bool {
        self.comparison.as_ref().map_or(true, |c| c.iter().all(|e| e.pass))
    }
}

fn build_report(command: &str, run: &PreparedRun, out: &RunOutcome, dir: &Path, started: Instant) -> RunReport {
    RunReport {
        version: REPORT_VERSION,
        command: command.into(),
        set: out.set.descriptor(),
        field: run.field.label().to_string(),
        field_descriptor: run.field.descriptor().cloned(),
        s: run.s,
        n: run.n,
        constants: out.measure.summary().into(),
        final_energy: out.minimizer.energy,
        optimizer: OptimizerSummary {
            converged: out.minimizer.trace.converged,
            iterations: out.minimizer.trace.rows.last().map_or(0, |r| r.iter),
            restart: out.minimizer.restart,
            restart_energies: out
                .minimizer
                .restart_energies
                .iter()
                .map(|e| e.is_finite().then_some(*e))
                .collect(),
        },
        diagnostics: out.diagnostics.clone(),
        comparison: None,
        files: Vec::new(),
        output_dir: dir.to_path_buf(),
        wall_time_s: started.elapsed().as_secs_f64(),
        seed: out.seed,
        mode: out.mode,
    }
}

fn write_file(dir: &Path, name: &str, contents: &[u8], manifest: &mut Vec<String>) -> CliResult<()> {
    fs::write(dir.join(name), contents).map_err(|e| CliError::io(format!("{}: {e}", dir.join(name).display())))?;
    manifest.push(name.to_string());
    Ok(())
}

/// Writes points, density, trace, scatter and finally `report.json`.
pub fn write_outputs(out: &RunOutcome, report: &mut RunReport, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
    let mut files = Vec::new();
    let csv = |r: crate::error::Result<String>| r.map_err(CliError::io);
    write_file(dir, "points.csv", csv(out.minimizer.configuration.to_csv())?.as_bytes(), &mut files)?;
    write_file(dir, "density.csv", csv(out.measure.density_csv(&out.set))?.as_bytes(), &mut files)?;
    write_file(dir, "trace.csv", csv(out.minimizer.trace.to_csv())?.as_bytes(), &mut files)?;
    if out.minimizer.configuration.len() >= 16 {
        let emp = empirical_density(&out.minimizer.configuration, &out.set).map_err(CliError::solver)?;
        write_file(
            dir,
            "empirical_density.csv",
            csv(emp.to_csv(&out.measure, &out.set))?.as_bytes(),
            &mut files,
        )?;
    }
    let svg = scatter_svg(&out.set, out.minimizer.configuration.coords(), &out.measure.support_contour(&out.set));
    write_file(dir, "scatter.svg", svg.as_bytes(), &mut files)?;
    files.push("report.json".into());
    report.files = files;
    let json = serde_json::to_string_pretty(report).map_err(CliError::io)?;
    fs::write(dir.join("report.json"), json).map_err(|e| CliError::io(format!("report.json: {e}")))?;
    Ok(())
}

/// `solve <config.json>`.
pub fn cmd_solve(config_path: &Path) -> CliResult<RunReport> {
    let started = Instant::now();
    let text = fs::read_to_string(config_path)
        .map_err(|e| CliError::io(format!("{}: {e}", config_path.display())))?;
    let config = RunConfig::from_json(&text)?;
    let run = prepare(&config)?;
    let out = execute(&run)?;
    let mut report = build_report("solve", &run, &out, &config.output_dir, started);
    write_outputs(&out, &mut report, &config.output_dir)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Tolerance {
    Relative(f64),
    Absolute(f64),
    AtMost(f64),
}

impl Tolerance {
    pub fn accepts(&self, reference: f64, computed: f64) -> bool {
        match *self {
            Tolerance::Relative(r) => (computed - reference).abs() <= r * reference.abs(),
            Tolerance::Absolute(a) => (computed - reference).abs() <= a,
            Tolerance::AtMost(b) => computed <= b,
        }
    }

    fn widened(&self, rel: f64) -> Self {
        match *self {
            Tolerance::Relative(r) => Tolerance::Relative(r.max(rel)),
            ref t => t.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub quantity: String,
    pub reference: f64,
    pub tolerance: Tolerance,
    /// Length-valued: rescaled by `(N_ref / N)^{1/d}` at other `N`.
    #[serde(default)]
    pub length: bool,
    /// Threshold for `points_above_level`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleDefaults {
    pub description: String,
    pub set: SetDescriptor,
    pub field: FieldDescriptor,
    pub s: f64,
    pub n: usize,
    pub reduced_n: usize,
    pub optimizer: OptimizerSettings,
    pub checks: Vec<Check>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproduceDefaults {
    pub version: u32,
    pub notes: String,
    pub reduced_rel_tol: f64,
    pub examples: BTreeMap<String, ExampleDefaults>,
}

impl ReproduceDefaults {
    pub fn builtin() -> Self {
        serde_json::from_str(DEFAULTS_JSON).expect("bundled reproduce defaults parse")
    }

    pub fn example(&self, id: ExampleId) -> &ExampleDefaults {
        &self.examples[id.as_str()]
    }
}

#[derive(Clone, Debug, Default)]
pub struct ReproduceOptions {
    /// Use `reduced_n` and the widened tolerances.
    pub reduced: bool,
    /// Explicit `N`; reference lengths are rescaled to it.
    pub n: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub max_iters: Option<usize>,
    pub restarts: Option<usize>,
    pub mode: Option<ExecMode>,
}

/// `reproduce <a|b|c|d|e>`.
pub fn cmd_reproduce(id: ExampleId, options: &ReproduceOptions) -> CliResult<RunReport> {
    let started = Instant::now();
    let defaults = ReproduceDefaults::builtin();
    let ex = defaults.example(id);
    let n = options.n.unwrap_or(if options.reduced { ex.reduced_n } else { ex.n });
    let mut optimizer = ex.optimizer.clone();
    if let Some(v) = options.max_iters {
        optimizer.max_iters = v;
    }
    if let Some(v) = options.restarts {
        optimizer.restarts = v;
    }
    let dir = options
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("reproduce-{id}")));
    let config = RunConfig {
        set: ex.set.clone(),
        field: ex.field.clone(),
        s: ex.s,
        n,
        optimizer,
        rng_seed: options.seed,
        output_dir: dir.clone(),
        mode: options.mode,
        diagnostics: DiagnosticOptions::default(),
        constant_override: None,
    };
    let run = prepare(&config)?;
    let out = execute(&run)?;
    let widen = options.reduced || n != ex.n;
    let scale = (ex.n as f64 / n as f64).powf(1.0 / run.set.hausdorff_dim() as f64);
    let mut comparison = Vec::with_capacity(ex.checks.len());
    for check in &ex.checks {
        let computed = example_quantity(check, &out).map_err(CliError::solver)?;
        let reference = if check.length { check.reference * scale } else { check.reference };
        let tolerance = if widen {
            check.tolerance.widened(defaults.reduced_rel_tol)
        } else {
            check.tolerance.clone()
        };
        comparison.push(ComparisonEntry {
            quantity: check.quantity.clone(),
            reference,
            computed,
            pass: tolerance.accepts(reference, computed),
            tolerance,
        });
    }
    let mut report = build_report("reproduce", &run, &out, &dir, started);
    report.comparison = Some(comparison);
    write_outputs(&out, &mut report, &dir)?;
    Ok(report)
}

/// Evaluates a named quantity of a finished run.
pub fn example_quantity(check: &Check, out: &RunOutcome) -> crate::error::Result<f64> {
    let config = &out.minimizer.configuration;
    let set = &out.set;
    let field = out.measure.field();
    let n = config.len();
    let band = || -> crate::error::Result<(f64, f64)> {
        // Middle band: the component of {q <= L1 - h} through the equator.
        let mesh = set.covering_mesh(default_fill_distance(set, n))?;
        let threshold = out.measure.l1 - diagnostics::default_h(&out.measure);
        let (labels, _) = label_mesh_by_component(set, &mesh, field, threshold);
        let mid = mesh
            .iter()
            .zip(&labels)
            .filter_map(|(y, l)| l.map(|l| (y[2].abs(), l)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, l)| l)
            .ok_or(Error::EmptySublevel)?;
        let pick = |want_mid: bool| {
            let mask: Vec<bool> = labels.iter().map(|l| matches!(l, Some(l) if (*l == mid) == want_mid)).collect();
            covering_radius_masked(config, set, &mesh, &mask)
        };
        Ok((pick(true)?.value, pick(false)?.value))
    };
    Ok(match check.quantity.as_str() {
        "l1" => out.measure.l1,
        "separation" => out.diagnostics.separation,
        "eta_mid" => band()?.0,
        "eta_polar" => band()?.1,
        "gamma_mid" => band()?.0 / separation(config),
        "gamma_polar" => band()?.1 / separation(config),
        "eta_set" | "gamma_set" => {
            let mesh = set.covering_mesh(default_fill_distance(set, n))?;
            let eta = covering_radius(config, set, &mesh, None)?.value;
            if check.quantity == "eta_set" {
                eta
            } else {
                eta / separation(config)
            }
        }
        "points_above_level" => {
            let level = check
                .level
                .ok_or_else(|| Error::InvalidArgument("points_above_level needs a level".into()))?;
            config.points().filter(|x| field.evaluate(x) > level).count() as f64
        }
        "histogram_sup_deviation" => empirical_density(config, set)?.sup_deviation(&out.measure, set),
        other => return Err(Error::InvalidArgument(format!("unknown quantity '{other}'"))),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    /// Field descriptor reproducing the designed field.
    pub field: FieldDescriptor,
    pub constant: RieszConstant,
    pub m_constant: f64,
    pub input_mass: f64,
    pub renormalized: bool,
    /// `L1` of the designed field; zero up to quadrature error.
    pub l1_roundtrip: f64,
    /// Largest relative density error at nodes where the target exceeds 1e-8.
    pub max_rel_density_error: f64,
    /// Largest round-trip density where the target vanishes.
    pub max_density_off_support: f64,
    /// Field value at a few nodes, for inspection.
    pub samples: Vec<FieldSample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub x: Vec<f64>,
    pub rho: f64,
    pub q: f64,
}

/// `design <set.json> <rho.json> --s <val>`.
pub fn cmd_design(set_path: &Path, rho_path: &Path, s: f64) -> CliResult<DesignReport> {
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| CliError::io(format!("{}: {e}", p.display())));
    let set_desc: SetDescriptor =
        serde_json::from_str(&read(set_path)?).map_err(|e| CliError::config(format!("invalid set: {e}")))?;
    let rho_desc: DensityDescriptor =
        serde_json::from_str(&read(rho_path)?).map_err(|e| CliError::config(format!("invalid density: {e}")))?;
    design_report(&set_desc, &rho_desc, s)
}

pub fn design_report(set_desc: &SetDescriptor, rho_desc: &DensityDescriptor, s: f64) -> CliResult<DesignReport> {
    let set = CompactSet::from_descriptor(set_desc).map_err(CliError::config)?;
    let rho = rho_desc.resolve(&set).map_err(CliError::config)?;
    let design = design_field(&set, rho.clone(), s).map_err(CliError::config)?;
    let measure = EquilibriumMeasure::solve(&set, &design.field, design.constant).map_err(CliError::solver)?;
    let mut max_rel: f64 = 0.0;
    let mut off: f64 = 0.0;
    for (x, got) in set.nodes().zip(measure.node_density()) {
        let want = design.target_density.value(x);
        if want > 1e-8 {
            max_rel = max_rel.max((got - want).abs() / want);
        } else if want == 0.0 {
            off = off.max(*got);
        }
    }
    let stride = (set.quadrature_len() / 8).max(1);
    let samples = set
        .nodes()
        .step_by(stride)
        .map(|x| FieldSample {
            x: x.to_vec(),
            rho: design.target_density.value(x),
            q: design.field.evaluate(x),
        })
        .collect();
    Ok(DesignReport {
        field: FieldDescriptor::Designed {
            rho: rho_desc.clone(),
            s,
        },
        constant: design.constant,
        m_constant: design.m_constant,
        input_mass: design.input_mass,
        renormalized: design.renormalized,
        l1_roundtrip: measure.l1,
        max_rel_density_error: max_rel,
        max_density_off_support: off,
        samples,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub constant: RieszConstant,
    pub m_constant: f64,
    pub conjectural: bool,
}

/// `constants --s <val> --d <val>`.
pub fn cmd_constants(s: f64, d: usize) -> CliResult<ConstantsReport> {
    let constant = riesz_constant(s, d).map_err(CliError::config)?;
    Ok(ConstantsReport {
        constant,
        m_constant: constant.m_constant(),
        conjectural: constant.is_conjectural(),
    })
}

/// 2-D picture of a configuration: the interval as a line, spheres in
/// (longitude, z), tori in their two angles, anything else by its first two
/// coordinates. Contour points are drawn in red.
pub fn scatter_svg(set: &CompactSet, coords: &[f64], contour: &[Vec<f64>]) -> String {
    let p = set.ambient_dim();
    let desc = set.descriptor();
    let project = |x: &[f64]| -> (f64, f64) {
        match &desc {
            SetDescriptor::Interval { .. } => (x[0], 0.0),
            SetDescriptor::Sphere { radius, .. } => (x[1].atan2(x[0]), x[2] / radius),
            SetDescriptor::Torus { r_inner, r_outer, .. } => {
                let major = 0.5 * (r_inner + r_outer);
                let rho = x[0].hypot(x[1]);
                (x[1].atan2(x[0]), x[2].atan2(rho - major))
            }
            SetDescriptor::Param { .. } => (x[0], if p > 1 { x[1] } else { 0.0 }),
        }
    };
    let pts: Vec<(f64, f64)> = coords.chunks_exact(p).map(project).collect();
    let cpts: Vec<(f64, f64)> = contour.iter().map(|x| project(x)).collect();
    let all = pts.iter().chain(&cpts);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in all {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let (w, h, pad) = (800.0, 400.0, 20.0);
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<g fill=\"#c0392b\">\n");
    for (x, y) in &cpts {
        svg.push_str(&format!("<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1\"/>\n", sx(*x), sy(*y)));
    }
    svg.push_str("</g>\n<g fill=\"#1f3a93\">\n");
    for (x, y) in &pts {
        svg.push_str(&format!("<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\"/>\n", sx(*x), sy(*y)));
    }
    svg.push_str("</g>\n</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_cover_every_example() {
        let d = ReproduceDefaults::builtin();
        for id in ExampleId::ALL {
            let ex = d.example(id);
            assert!(ex.reduced_n < ex.n);
            assert!(ex.optimizer.validate().is_ok());
            assert!(!ex.checks.is_empty());
        }
        assert_eq!(d.example(ExampleId::A).n, 1000);
        assert_eq!(d.example(ExampleId::D).n, 1000);
        assert_eq!(d.example(ExampleId::E).n, 500);
    }

    #[test]
    fn tolerance_rules() {
        assert!(Tolerance::Relative(0.15).accepts(0.08, 0.09));
        assert!(!Tolerance::Relative(0.1).accepts(0.08, 0.09));
        assert!(Tolerance::AtMost(0.0).accepts(0.0, 0.0));
        assert!(!Tolerance::AtMost(0.0).accepts(0.0, 1.0));
        assert_eq!(Tolerance::Relative(0.15).widened(0.25), Tolerance::Relative(0.25));
        assert_eq!(Tolerance::Absolute(1e-3).widened(0.25), Tolerance::Absolute(1e-3));
    }

    #[test]
    fn run_config_rejects_subcritical_s() {
        let json = r#"{"set": {"kind": "sphere"}, "field": {"kind": "catalog", "id": "a"},
                       "s": 1.5, "n": 10, "output_dir": "unused"}"#;
        let cfg = RunConfig::from_json(json).unwrap();
        let err = prepare(&cfg).unwrap_err();
        assert_eq!(err.code, EXIT_CONFIG);
        assert!(err.message.contains("hypersingular"), "{}", err.message);
    }

    #[test]
    fn run_config_parse_errors_are_config_errors() {
        assert_eq!(RunConfig::from_json("{").unwrap_err().code, EXIT_CONFIG);
        let unknown = r#"{"set": {"kind": "sphere"}, "field": {"kind": "catalog", "id": "a"},
                          "s": 2, "n": 10, "output_dir": "x", "bogus": 1}"#;
        assert_eq!(RunConfig::from_json(unknown).unwrap_err().code, EXIT_CONFIG);
    }

    #[test]
    fn constants_command() {
        let r = cmd_constants(4.0, 1).unwrap();
        assert!((r.m_constant - 10.8232).abs() < 1e-4);
        assert!(!r.conjectural);
        assert_eq!(cmd_constants(4.0, 3).unwrap_err().code, EXIT_CONFIG);
    }

    #[test]
    fn design_uniform_sphere_gives_constant_field() {
        let r = design_report(&SetDescriptor::Sphere { radius: 1.0, n_theta: Some(32), n_phi: Some(64) }, &DensityDescriptor::Uniform, 3.0).unwrap();
        let expected = -r.m_constant * (4.0 * std::f64::consts::PI).powf(-1.5);
        for sample in &r.samples {
            assert!((sample.q - expected).abs() < 1e-10);
        }
        assert!(r.l1_roundtrip.abs() < 1e-8);
        assert!(r.max_rel_density_error < 1e-6);
    }

    #[test]
    fn design_with_zero_region() {
        let set = SetDescriptor::Interval { a: 0.0, b: 1.0, n_quad: Some(200) };
        let rho = DensityDescriptor::TruncatedQuadratic { center: 0.3, half_width: 0.2, coord: 0 };
        let r = design_report(&set, &rho, 2.0).unwrap();
        assert!(r.l1_roundtrip.abs() < 1e-8, "{r:?}");
        assert_eq!(r.max_density_off_support, 0.0);
        for sample in r.samples.iter().filter(|s| s.rho == 0.0) {
            assert_eq!(sample.q, 0.0);
        }
    }

    #[test]
    fn scatter_is_well_formed() {
        let set = CompactSet::sphere(1.0, 8, 16).unwrap();
        let svg = scatter_svg(&set, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0], &[vec![0.0, 0.0, 1.0]]);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
