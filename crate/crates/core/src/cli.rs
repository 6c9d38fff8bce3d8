//! Config-driven runs of the solver stack.
//!
//! A run reads one TOML file, executes a subcommand and writes CSV, JSON and
//! PNG artifacts into the output directory. Every JSON artifact carries
//! [`SCHEMA_VERSION`] and the effective configuration; no artifact contains
//! wall-clock data, so identical inputs give byte-identical outputs.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dynamics::{black_box_scales, validation_lambdas, verify_scales, Billiard, BoundaryPoint, Side};
use crate::end_analysis::{classify_io, default_mode_count, fit_end_modes, End, EndModeFit};
use crate::evolution::{
    discretize_p, evolve_profile, leading_profile_error, modal_amplitudes, ModalDecomposition, ModalGrid,
    ProfileErrorOptions,
};
use crate::geometry::{ChannelSpec, ReferenceMap, Sign, Topography, DEFAULT_ETA_SUPP, DEPTH};
use crate::layer_potential::{
    boundary_equation_residual, kernel_spectral_mass, probe_points, reconstruction_residual, Cutoff, KernelCase,
    QuadratureRule,
};
use crate::scaled_solver::{
    lap_sweep, measure_beam_slope, solve_stationary, trusted_difference, BeamSlopeOptions, Forcing, RhoProfile,
    SolverConfig, StationarySolution,
};
use crate::spectral_core::C64;

pub const SCHEMA_VERSION: &str = "1.0.0";

#[derive(Debug, Parser)]
#[command(name = "iwave", version, about = "Internal waves in two-dimensional subcritical channels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Overrides the configured probe seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads for sweep members.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Stationary solve: field, heatmap, end classification, beam slope.
    Solve,
    /// Member runs over the `[sweep]` lists.
    Sweep {
        #[arg(long, value_enum)]
        over: SweepOver,
    },
    /// Modal time evolution and comparison with the outgoing profile.
    Evolve,
    /// Billiard orbits and black-box scales.
    Dynamics,
    /// Per-mode end coefficients and the incoming/outgoing verdict.
    Endmodes,
    /// Layer-potential cross-checks of a stationary solve.
    Verify,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Sweep { .. } => "sweep",
            Command::Evolve => "evolve",
            Command::Dynamics => "dynamics",
            Command::Endmodes => "endmodes",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepOver {
    Epsilon,
    Tau,
    Grid,
}

// ---------------------------------------------------------------------------
// Configuration schema

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub channel: ChannelSection,
    pub solver: SolverSection,
    pub forcing: ForcingSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub evolution: Option<EvolutionSection>,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub dynamics: DynamicsSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub topography: TopographySection,
    #[serde(default = "default_eta")]
    pub eta_supp: f64,
}

fn default_eta() -> f64 {
    DEFAULT_ETA_SUPP
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopographySection {
    Flat,
    Gaussian { amplitude: f64, width: f64 },
    BumpPolynomial { amplitude: f64, radius: f64, power: u32 },
}

impl From<TopographySection> for Topography {
    fn from(t: TopographySection) -> Self {
        match t {
            TopographySection::Flat => Topography::Flat,
            TopographySection::Gaussian { amplitude, width } => Topography::Gaussian { amplitude, width },
            TopographySection::BumpPolynomial { amplitude, radius, power } => {
                Topography::BumpPolynomial { amplitude, radius, power }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RhoSection {
    Tanh { steepness: f64, edge: f64 },
    SmoothStep { inner: f64, outer: f64 },
    Zero,
}

impl From<RhoSection> for RhoProfile {
    fn from(r: RhoSection) -> Self {
        match r {
            RhoSection::Tanh { steepness, edge } => RhoProfile::Tanh { steepness, edge },
            RhoSection::SmoothStep { inner, outer } => RhoProfile::SmoothStep { inner, outer },
            RhoSection::Zero => RhoProfile::Zero,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub lambda: f64,
    /// `omega = lambda + i epsilon`.
    pub epsilon: f64,
    #[serde(default = "default_half_length")]
    pub half_length: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_rho")]
    pub rho: RhoSection,
    pub n1: usize,
    pub n2: usize,
}

fn default_half_length() -> f64 {
    15.0
}
fn default_tau() -> f64 {
    0.5
}
fn default_rho() -> RhoSection {
    RhoSection::Tanh { steepness: 20.0, edge: 0.9 }
}

/// Gaussian envelope in reference coordinates times `exp(i carrier x1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingSection {
    #[serde(default = "one")]
    pub amplitude: f64,
    pub center: [f64; 2],
    pub sigma: [f64; 2],
    #[serde(default)]
    pub carrier: f64,
}

fn one() -> f64 {
    1.0
}

impl From<ForcingSection> for Forcing {
    fn from(f: ForcingSection) -> Self {
        Forcing { amplitude: f.amplitude, center: f.center, sigma: f.sigma, carrier: f.carrier }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// End modes per fit; defaults to `n2 / 3`.
    #[serde(default)]
    pub modes: Option<usize>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Energy-ratio threshold of the incoming/outgoing verdict.
    #[serde(default = "default_io_threshold")]
    pub io_threshold: f64,
    /// Right end window in units of `L`; the left one is its mirror image.
    #[serde(default = "default_end_window")]
    pub end_window: [f64; 2],
    #[serde(default = "yes")]
    pub beam_slope: bool,
    /// `x1` window of the beam-slope measurement.
    #[serde(default = "default_beam_window")]
    pub beam_window: [f64; 2],
}

fn default_beta() -> f64 {
    -0.6
}
fn default_io_threshold() -> f64 {
    1e-2
}
fn default_end_window() -> [f64; 2] {
    [0.73, 0.995]
}
fn default_beam_window() -> [f64; 2] {
    [3.0, 11.0]
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            modes: None,
            beta: default_beta(),
            io_threshold: default_io_threshold(),
            end_window: default_end_window(),
            beam_slope: true,
            beam_window: default_beam_window(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_taus")]
    pub taus: Vec<f64>,
    #[serde(default = "default_grids")]
    pub grids: Vec<[usize; 2]>,
    /// Largest accepted relative deviation across `taus`.
    #[serde(default = "default_tau_tolerance")]
    pub tau_tolerance: f64,
    /// Required drop of the refinement difference per grid doubling.
    #[serde(default = "default_refinement_factor")]
    pub refinement_factor: f64,
    /// Differences below this level count as the floor.
    #[serde(default = "default_floor")]
    pub floor: f64,
}

fn default_epsilons() -> Vec<f64> {
    vec![-1e-2, -1e-3, -1e-4, -1e-5]
}
fn default_taus() -> Vec<f64> {
    vec![0.4, 0.6]
}
fn default_grids() -> Vec<[usize; 2]> {
    vec![[32, 12], [64, 24], [128, 48]]
}
fn default_tau_tolerance() -> f64 {
    1e-3
}
fn default_refinement_factor() -> f64 {
    10.0
}
fn default_floor() -> f64 {
    1e-4
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            epsilons: default_epsilons(),
            taus: default_taus(),
            grids: default_grids(),
            tau_tolerance: default_tau_tolerance(),
            refinement_factor: default_refinement_factor(),
            floor: default_floor(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionSection {
    /// Truncation half-length `L_e` of the time-domain channel.
    pub half_length: f64,
    pub modes_x: usize,
    pub modes_y: usize,
    #[serde(default)]
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
    /// Width of the end strips whose energy share defines `T_max`.
    #[serde(default = "default_evolution_end_window")]
    pub end_window: f64,
    /// Comparison window `|x1| <= x_max`; defaults to the trusted zone of `u+`.
    #[serde(default)]
    pub x_max: Option<f64>,
    #[serde(default = "default_near_fraction")]
    pub near_fraction: f64,
    #[serde(default = "default_far_reference")]
    pub far_reference_time: f64,
    /// `epsilon` of the stationary solve for `u+`; only its magnitude is used.
    #[serde(default = "default_u_plus_epsilon")]
    pub u_plus_epsilon: f64,
    /// Times at which field snapshots are written.
    #[serde(default)]
    pub snapshots: Vec<f64>,
}

fn default_evolution_end_window() -> f64 {
    5.0
}
fn default_near_fraction() -> f64 {
    0.05
}
fn default_far_reference() -> f64 {
    5.0
}
fn default_u_plus_epsilon() -> f64 {
    1e-5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// Inner and outer edge of the cutoff ramp.
    #[serde(default = "default_cutoff")]
    pub cutoff: [f64; 2],
    /// Second cutoff for the insensitivity check; empty to skip.
    #[serde(default = "default_alt_cutoff")]
    pub alt_cutoff: Option<[f64; 2]>,
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default = "default_boundary_points")]
    pub boundary_points: usize,
    /// Quadrature levels, coarsest first.
    #[serde(default = "default_rules")]
    pub rules: Vec<RuleName>,
    #[serde(default = "default_spectral_epsilon")]
    pub spectral_epsilon: f64,
    #[serde(default = "default_spectral_theta")]
    pub spectral_theta: f64,
    #[serde(default = "default_reconstruction_limit")]
    pub reconstruction_limit: f64,
    #[serde(default = "default_boundary_limit")]
    pub boundary_limit: f64,
    #[serde(default = "default_mass_limit")]
    pub mass_limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleName {
    Coarse,
    Medium,
    Fine,
}

impl RuleName {
    pub fn rule(self) -> QuadratureRule {
        match self {
            RuleName::Coarse => QuadratureRule::coarse(),
            RuleName::Medium => QuadratureRule::medium(),
            RuleName::Fine => QuadratureRule::fine(),
        }
    }
}

fn default_cutoff() -> [f64; 2] {
    [5.0, 8.0]
}
fn default_alt_cutoff() -> Option<[f64; 2]> {
    Some([4.0, 7.5])
}
fn default_probes() -> usize {
    50
}
fn default_boundary_points() -> usize {
    40
}
fn default_rules() -> Vec<RuleName> {
    vec![RuleName::Coarse, RuleName::Medium]
}
fn default_spectral_epsilon() -> f64 {
    1e-3
}
fn default_spectral_theta() -> f64 {
    0.3
}
fn default_reconstruction_limit() -> f64 {
    0.02
}
fn default_boundary_limit() -> f64 {
    0.05
}
fn default_mass_limit() -> f64 {
    0.95
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            cutoff: default_cutoff(),
            alt_cutoff: default_alt_cutoff(),
            probes: default_probes(),
            boundary_points: default_boundary_points(),
            rules: default_rules(),
            spectral_epsilon: default_spectral_epsilon(),
            spectral_theta: default_spectral_theta(),
            reconstruction_limit: default_reconstruction_limit(),
            boundary_limit: default_boundary_limit(),
            mass_limit: default_mass_limit(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    /// Defaults to `solver.lambda`.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Orbit starting abscissas, each launched from both sides.
    #[serde(default = "default_starts")]
    pub starts: Vec<f64>,
    #[serde(default = "default_iterates")]
    pub iterates: usize,
    /// Defaults to `lambda +- 0.02`.
    #[serde(default)]
    pub lambda_interval: Option<[f64; 2]>,
    #[serde(default = "default_validation_count")]
    pub validation_count: usize,
}

fn default_starts() -> Vec<f64> {
    vec![-2.0, 0.0, 2.0]
}
fn default_iterates() -> usize {
    6
}
fn default_validation_count() -> usize {
    64
}

impl Default for DynamicsSection {
    fn default() -> Self {
        Self {
            lambda: None,
            starts: default_starts(),
            iterates: default_iterates(),
            lambda_interval: None,
            validation_count: default_validation_count(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Samples `(nx, ny)` of field CSVs and heatmaps.
    #[serde(default = "default_sample")]
    pub sample: [usize; 2],
    #[serde(default = "yes")]
    pub heatmap: bool,
}

fn default_sample() -> [usize; 2] {
    [441, 64]
}
fn yes() -> bool {
    true
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { sample: default_sample(), heatmap: true }
    }
}

impl RunConfig {
    /// Parses and validates; errors name the offending field path.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::parse(text).map_err(|e| CliError::schema(e.message().to_string()))?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let msg = e.inner().message().to_string();
            CliError::schema(if path == "." { msg } else { format!("{path}: {msg}") })
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |path: &str, msg: String| Err(CliError::schema(format!("{path}: {msg}")));
        if let Err(e) = self.channel_spec() {
            return bad("channel", e.to_string());
        }
        let s = &self.solver;
        if !(s.lambda > 0.0 && s.lambda < 1.0) {
            return bad("solver.lambda", format!("must lie in (0, 1), got {}", s.lambda));
        }
        if !s.epsilon.is_finite() || s.epsilon == 0.0 {
            return bad("solver.epsilon", format!("must be finite and nonzero, got {}", s.epsilon));
        }
        if !(s.half_length > 0.0) {
            return bad("solver.half_length", format!("must be positive, got {}", s.half_length));
        }
        if s.n1 < 4 || s.n2 < 4 {
            return bad("solver.n1", format!("grid must be at least 4 x 4, got {} x {}", s.n1, s.n2));
        }
        if let Err(e) = RhoProfile::from(s.rho).validate() {
            return bad("solver.rho", e.to_string());
        }
        if let Err(e) = Forcing::from(self.forcing).validate() {
            return bad("forcing", e.to_string());
        }
        let [a, b] = self.analysis.end_window;
        if !(0.0 < a && a < b && b <= 1.0) {
            return bad("analysis.end_window", format!("need 0 < a < b <= 1, got [{a}, {b}]"));
        }
        if self.sweep.epsilons.is_empty() || self.sweep.taus.is_empty() || self.sweep.grids.is_empty() {
            return bad("sweep", "member lists must be nonempty".into());
        }
        if let Some(e) = &self.evolution {
            if !(e.half_length > 0.0 && e.modes_x > 0 && e.modes_y > 0) {
                return bad("evolution", "half_length and mode counts must be positive".into());
            }
            if !(e.dt > 0.0 && e.t_end >= e.t_start) {
                return bad("evolution.dt", format!("need dt > 0 and t_end >= t_start, got dt = {}", e.dt));
            }
        }
        if self.verify.rules.is_empty() {
            return bad("verify.rules", "at least one rule is required".into());
        }
        let [x, y] = self.output.sample;
        if x < 2 || y < 2 {
            return bad("output.sample", format!("need at least 2 x 2 samples, got {x} x {y}"));
        }
        Ok(())
    }

    pub fn channel_spec(&self) -> crate::Result<ChannelSpec> {
        ChannelSpec::with_threshold(self.channel.topography.into(), self.channel.eta_supp)
    }

    pub fn solver_config(&self) -> crate::Result<SolverConfig> {
        let s = &self.solver;
        Ok(SolverConfig {
            channel: self.channel_spec()?,
            lambda: s.lambda,
            epsilon: s.epsilon,
            half_length: s.half_length,
            tau: s.tau,
            rho: s.rho.into(),
            forcing: self.forcing.into(),
            n1: s.n1,
            n2: s.n2,
        })
    }
}

// ---------------------------------------------------------------------------
// Errors

/// Failure of a run, reported as JSON with a nonzero exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
}

impl CliError {
    pub fn schema(message: String) -> Self {
        Self { kind: "schema".into(), message, exit_code: 2 }
    }

    pub fn io(message: String) -> Self {
        Self { kind: "io".into(), message, exit_code: 3 }
    }

    pub fn member(message: String) -> Self {
        Self { kind: "member_failed".into(), message, exit_code: 1 }
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        Self { kind: e.kind().into(), message: e.to_string(), exit_code: 1 }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

type CliResult<T> = Result<T, CliError>;

// ---------------------------------------------------------------------------
// Entry points

/// Parses `args`, runs, and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let doc = json!({
                "schema_version": SCHEMA_VERSION,
                "command": cli.command.name(),
                "error": { "kind": e.kind, "message": e.message },
            });
            let text = serde_json::to_string_pretty(&doc).unwrap_or_default();
            eprintln!("{text}");
            if fs::create_dir_all(&cli.out).is_ok() {
                let _ = fs::write(cli.out.join("error.json"), text + "\n");
            }
            e.exit_code
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::schema("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let ctx = RunContext { cfg, out: cli.out.clone(), quiet: cli.quiet, command: cli.command };
    fs::create_dir_all(&ctx.out).map_err(|e| CliError::io(format!("{}: {e}", ctx.out.display())))?;
    match cli.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| CliError::io(format!("thread pool: {e}")))?;
            pool.install(|| ctx.dispatch())
        }
        None => ctx.dispatch(),
    }
}

struct RunContext {
    cfg: RunConfig,
    out: PathBuf,
    quiet: bool,
    command: Command,
}

impl RunContext {
    fn dispatch(&self) -> CliResult<()> {
        match self.command {
            Command::Solve => self.solve(),
            Command::Sweep { over } => self.sweep(over),
            Command::Evolve => self.evolve(),
            Command::Dynamics => self.dynamics(),
            Command::Endmodes => self.endmodes(),
            Command::Verify => self.verify(),
        }
    }

    fn note(&self, msg: &str) {
        if !self.quiet {
            eprintln!("[{}] {msg}", self.command.name());
        }
    }

    fn document(&self, result: Value) -> Value {
        json!({
            "schema_version": SCHEMA_VERSION,
            "command": self.command.name(),
            "config": self.cfg,
            "result": result,
        })
    }

    fn write_json(&self, name: &str, result: Value) -> CliResult<()> {
        let text = serde_json::to_string_pretty(&self.document(result)).map_err(|e| CliError::io(e.to_string()))?;
        self.write_bytes(name, (text + "\n").as_bytes())
    }

    fn write_bytes(&self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.out.join(name);
        let mut f = fs::File::create(&path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        f.write_all(bytes).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
    }

    fn write_csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| CliError::io(e.to_string());
        w.write_record(header).map_err(io)?;
        for r in rows {
            w.write_record(r).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::io(e.to_string()))?;
        self.write_bytes(name, &bytes)
    }

    fn stationary(&self, config: &SolverConfig) -> CliResult<StationarySolution> {
        self.note(&format!(
            "solving n1={} n2={} omega={}{:+}i tau={}",
            config.n1, config.n2, config.lambda, config.epsilon, config.tau
        ));
        let sol = solve_stationary(config)?;
        self.note(&format!("interior residual {:.3e}", sol.report.interior_residual));
        Ok(sol)
    }

    fn end_fits(&self, sol: &StationarySolution) -> CliResult<(EndModeFit, EndModeFit)> {
        let l = sol.config.half_length;
        let [a, b] = self.cfg.analysis.end_window;
        let k = self.cfg.analysis.modes.unwrap_or_else(|| default_mode_count(sol.config.n2));
        let left = fit_end_modes(sol, End::Left, k, [-b * l, -a * l])?;
        let right = fit_end_modes(sol, End::Right, k, [a * l, b * l])?;
        Ok((left, right))
    }

    // -- solve --------------------------------------------------------------

    fn solve(&self) -> CliResult<()> {
        let config = self.cfg.solver_config()?;
        let sol = self.stationary(&config)?;
        let (left, right) = self.end_fits(&sol)?;
        let io = classify_io(&left, &right, self.cfg.analysis.io_threshold)?;
        self.note(&format!("incoming/outgoing ratio {:.3e}: {:?}", io.ratio, io.verdict));

        let beam = if self.cfg.analysis.beam_slope {
            let opts = BeamSlopeOptions { window: self.cfg.analysis.beam_window, ..BeamSlopeOptions::default() };
            let b = measure_beam_slope(&sol.ctx, &sol.field, &opts)?;
            self.note(&format!("beam slope {:.4}", b.slope));
            Some(b)
        } else {
            None
        };
        let c_lambda = sol.param.c_lambda();

        let x = sol.ctx.trusted_half_width();
        let samples = self.sample_stationary(&sol, x);
        self.write_field("field", &samples)?;
        self.write_json(
            "report.json",
            json!({
                "omega": [sol.omega().re, sol.omega().im],
                "c_lambda": c_lambda,
                "solve": sol.report,
                "trusted_half_width": x,
                "end_fits": { "left": left, "right": right },
                "io": io,
                "beam": beam.map(|b| json!({
                    "measurement": b,
                    "relative_error": (b.slope - c_lambda).abs() / c_lambda,
                })),
            }),
        )
    }

    fn sample_stationary(&self, sol: &StationarySolution, x: f64) -> FieldSamples {
        let [nx, ny] = self.cfg.output.sample;
        let chan = *sol.ctx.channel();
        let x1: Vec<f64> = (0..nx).map(|i| -x + 2.0 * x * i as f64 / (nx - 1) as f64).collect();
        let x2: Vec<f64> = (0..ny).map(|j| -DEPTH * (ny - 1 - j) as f64 / (ny - 1) as f64).collect();
        let mut values = vec![None; nx * ny];
        for (i, &a) in x1.iter().enumerate() {
            let col = sol.ctx.column(&sol.field, a);
            let bot = chan.bottom(a);
            for (j, &b) in x2.iter().enumerate() {
                if b >= bot - 1e-12 {
                    values[j * nx + i] = Some(col.eval(b.max(bot)));
                }
            }
        }
        FieldSamples { x1, x2, values }
    }

    fn write_field(&self, stem: &str, s: &FieldSamples) -> CliResult<()> {
        let nx = s.x1.len();
        let mut rows = Vec::new();
        for (j, &b) in s.x2.iter().enumerate() {
            for (i, &a) in s.x1.iter().enumerate() {
                if let Some(v) = s.values[j * nx + i] {
                    rows.push(vec![num(a), num(b), num(v.re), num(v.im)]);
                }
            }
        }
        self.write_csv(&format!("{stem}.csv"), &["x1", "x2", "re", "im"], &rows)?;
        if self.cfg.output.heatmap {
            let png = heatmap_png(s)?;
            self.write_bytes(&format!("{stem}.png"), &png)?;
        }
        Ok(())
    }

    // -- endmodes -----------------------------------------------------------

    fn endmodes(&self) -> CliResult<()> {
        let config = self.cfg.solver_config()?;
        let sol = self.stationary(&config)?;
        let (left, right) = self.end_fits(&sol)?;
        let io = classify_io(&left, &right, self.cfg.analysis.io_threshold)?;
        self.note(&format!("incoming/outgoing ratio {:.3e}: {:?}", io.ratio, io.verdict));
        let mut rows = Vec::new();
        for fit in [&left, &right] {
            let out_plus = fit.end == End::Right;
            for m in &fit.modes {
                let (o, i) = if out_plus { (m.plus, m.minus) } else { (m.minus, m.plus) };
                rows.push(vec![
                    format!("{:?}", fit.end).to_lowercase(),
                    m.k.to_string(),
                    num(m.minus.norm()),
                    num(m.plus.norm()),
                    num(o.norm()),
                    num(i.norm()),
                    num(m.condition),
                ]);
            }
        }
        self.write_csv("endmodes.csv", &["end", "k", "minus_abs", "plus_abs", "outgoing_abs", "incoming_abs", "condition"], &rows)?;
        self.write_json(
            "endmodes.json",
            json!({
                "omega": [sol.omega().re, sol.omega().im],
                "solve": sol.report,
                "fits": { "left": left, "right": right },
                "io": io,
            }),
        )
    }

    // -- verify -------------------------------------------------------------

    fn verify(&self) -> CliResult<()> {
        let v = &self.cfg.verify;
        let config = self.cfg.solver_config()?;
        let sol = self.stationary(&config)?;
        let cutoff = Cutoff::new(v.cutoff[0], v.cutoff[1])?;
        let probes = probe_points(sol.ctx.channel(), v.cutoff[0] + 0.5 * (v.cutoff[1] - v.cutoff[0]), v.probes, self.cfg.seed);

        let mut recon = Vec::new();
        let mut bdr = Vec::new();
        for name in &v.rules {
            let rule = name.rule();
            let r = reconstruction_residual(&sol, cutoff, &probes, rule)?;
            self.note(&format!("{name:?} reconstruction residual {:.3e}", r.relative));
            let b = boundary_equation_residual(&sol, cutoff, v.boundary_points, rule)?;
            self.note(&format!("{name:?} boundary residual {:.3e}", b.relative));
            recon.push(json!({ "rule": name, "parameters": rule, "relative": r.relative }));
            bdr.push(json!({ "rule": name, "parameters": rule, "relative": b.relative }));
        }
        let rel = |xs: &[Value]| xs.iter().map(|x| x["relative"].as_f64().unwrap_or(f64::NAN)).collect::<Vec<_>>();
        let (rr, br) = (rel(&recon), rel(&bdr));
        let non_increasing = |xs: &[f64]| xs.windows(2).all(|w| w[1] <= w[0]);

        let alt = match v.alt_cutoff {
            Some([a, b]) => {
                let c = Cutoff::new(a, b)?;
                let rule = v.rules[v.rules.len() - 1].rule();
                let r = boundary_equation_residual(&sol, c, v.boundary_points, rule)?;
                let base = br[br.len() - 1];
                let delta = (r.relative - base).abs();
                Some(json!({
                    "cutoff": [a, b],
                    "relative": r.relative,
                    "difference": delta,
                    "insensitive": delta < 0.1 * v.boundary_limit,
                }))
            }
            None => None,
        };

        let omega = C64::new(sol.param.lambda, v.spectral_epsilon);
        let mut masses = Vec::new();
        let mut mass_ok = true;
        for case in [KernelCase::Two, KernelCase::Four] {
            for s in Sign::BOTH {
                let m = kernel_spectral_mass(sol.ctx.channel(), omega, case, s, v.spectral_theta, 40.0, 1 << 16)?;
                // Case two keeps the sign of `s`, case four reverses it.
                let want_positive = (case == KernelCase::Two) == (s == Sign::Plus);
                let share = if want_positive { m.positive } else { m.negative };
                mass_ok &= share >= v.mass_limit;
                masses.push(json!({ "mass": m, "expected_side": if want_positive { "positive" } else { "negative" }, "share": share }));
            }
        }

        let recon_ok = rr[rr.len() - 1] <= v.reconstruction_limit && (rr.len() < 2 || non_increasing(&rr));
        let bdr_ok = br[br.len() - 1] <= v.boundary_limit && (br.len() < 2 || non_increasing(&br));
        self.write_json(
            "verify.json",
            json!({
                "omega": [sol.omega().re, sol.omega().im],
                "solve": sol.report,
                "seed": self.cfg.seed,
                "probes": probes,
                "cutoff": v.cutoff,
                "reconstruction": { "levels": recon, "limit": v.reconstruction_limit, "pass": recon_ok },
                "boundary_equation": { "levels": bdr, "limit": v.boundary_limit, "pass": bdr_ok, "alternative_cutoff": alt },
                "spectral_mass": { "omega": [omega.re, omega.im], "theta_prime": v.spectral_theta, "checks": masses, "limit": v.mass_limit, "pass": mass_ok },
            }),
        )
    }

    // -- dynamics -----------------------------------------------------------

    fn dynamics(&self) -> CliResult<()> {
        let d = &self.cfg.dynamics;
        let chan = self.cfg.channel_spec()?;
        let lambda = d.lambda.unwrap_or(self.cfg.solver.lambda);
        let bil = Billiard::new(chan, lambda)?;
        let mut rows = Vec::new();
        for (orbit, &t) in d.starts.iter().enumerate() {
            for p0 in [BoundaryPoint::up(t), BoundaryPoint::down(t)] {
                let id = 2 * orbit + usize::from(p0.side == Side::Down);
                for (n, p) in bil.orbit(p0, d.iterates as i64)?.iter().enumerate() {
                    rows.push(vec![id.to_string(), n.to_string(), side_name(p.side).into(), num(p.theta)]);
                }
            }
        }
        self.write_csv("orbits.csv", &["orbit", "iterate", "side", "theta"], &rows)?;

        let interval = d.lambda_interval.unwrap_or([(lambda - 0.02).max(1e-3), (lambda + 0.02).min(1.0 - 1e-3)]);
        let forcing: Forcing = self.cfg.forcing.into();
        let f_radius = forcing.support_radius(self.cfg.solver.half_length, chan.eta_supp);
        let scales = black_box_scales(&chan, f_radius, interval)?;
        let violation = verify_scales(&chan, &scales, &validation_lambdas(interval, d.validation_count))?;
        self.note(&format!("scales M={} N={} L={:.3}", scales.m, scales.n, scales.l));
        self.write_json(
            "scales.json",
            json!({
                "lambda": lambda,
                "c_lambda": bil.c,
                "forcing_support_radius": f_radius,
                "scales": scales,
                "validation_count": d.validation_count,
                "violation": violation,
            }),
        )
    }

    // -- sweep --------------------------------------------------------------

    fn sweep(&self, over: SweepOver) -> CliResult<()> {
        let base = self.cfg.solver_config()?;
        match over {
            SweepOver::Epsilon => self.sweep_epsilon(&base),
            SweepOver::Tau => {
                let configs: Vec<SolverConfig> =
                    self.cfg.sweep.taus.iter().map(|&tau| SolverConfig { tau, ..base }).collect();
                self.sweep_members(over, configs)
            }
            SweepOver::Grid => {
                let configs: Vec<SolverConfig> =
                    self.cfg.sweep.grids.iter().map(|&[n1, n2]| SolverConfig { n1, n2, ..base }).collect();
                self.sweep_members(over, configs)
            }
        }
    }

    fn sweep_epsilon(&self, base: &SolverConfig) -> CliResult<()> {
        let eps = &self.cfg.sweep.epsilons;
        self.note(&format!("epsilon sweep over {} members", eps.len()));
        let sweep = lap_sweep(base, eps, self.cfg.analysis.beta)?;
        let mut rows = Vec::new();
        for (i, (&e, s)) in sweep.epsilons.iter().zip(&sweep.solutions).enumerate() {
            let diff = if i > 0 { num(sweep.differences[i - 1]) } else { String::new() };
            let (dres, dtr) = match i.checked_sub(1).and_then(|j| sweep.derivative_checks.get(j)) {
                Some(c) => (num(c.residual), num(c.truncation)),
                None => (String::new(), String::new()),
            };
            rows.push(vec![i.to_string(), num(e), num(s.report.interior_residual), diff, dres, dtr]);
        }
        self.write_csv(
            "sweep.csv",
            &["member", "epsilon", "interior_residual", "difference", "derivative_residual", "derivative_truncation"],
            &rows,
        )?;
        let degenerate = eps.len() < 2;
        let monotone = sweep.differences.windows(2).all(|w| w[1] < w[0]);
        self.write_json(
            "sweep.json",
            json!({
                "over": SweepOver::Epsilon,
                "members": eps.len(),
                "degenerate": degenerate,
                "beta": sweep.beta,
                "differences": sweep.differences,
                "derivative_norms": sweep.derivative_norms,
                "derivative_differences": sweep.derivative_differences,
                "derivative_checks": sweep.derivative_checks.iter().map(|c| json!({
                    "step": c.step, "residual": c.residual, "truncation": c.truncation,
                })).collect::<Vec<_>>(),
                "pass": !degenerate && monotone,
            }),
        )
    }

    fn sweep_members(&self, over: SweepOver, configs: Vec<SolverConfig>) -> CliResult<()> {
        self.note(&format!("{over:?} sweep over {} members", configs.len()));
        let results: Vec<crate::Result<StationarySolution>> = configs.par_iter().map(solve_stationary).collect();
        let ok: Vec<Option<&StationarySolution>> = results.iter().map(|r| r.as_ref().ok()).collect();
        let mut diffs: Vec<Option<f64>> = vec![None; configs.len()];
        for i in 1..configs.len() {
            // Tau members are compared with the first, grid members with their predecessor.
            let j = if over == SweepOver::Tau { 0 } else { i - 1 };
            if let (Some(a), Some(b)) = (ok[j], ok[i]) {
                diffs[i] = Some(trusted_difference(b, a, 120, 40)?);
            }
        }
        let mut rows = Vec::new();
        let mut failures = Vec::new();
        for (i, (c, r)) in configs.iter().zip(&results).enumerate() {
            let (status, res) = match r {
                Ok(s) => ("ok".to_string(), num(s.report.interior_residual)),
                Err(e) => {
                    failures.push(json!({ "member": i, "kind": e.kind(), "message": e.to_string() }));
                    (format!("failed: {e}"), String::new())
                }
            };
            let d = diffs[i].map_or(String::new(), num);
            rows.push(vec![i.to_string(), num(c.tau), c.n1.to_string(), c.n2.to_string(), res, d, status]);
        }
        self.write_csv("sweep.csv", &["member", "tau", "n1", "n2", "interior_residual", "difference", "status"], &rows)?;

        let degenerate = configs.len() < 2;
        let d: Vec<f64> = diffs.iter().flatten().copied().collect();
        let verdict = match over {
            SweepOver::Tau => {
                let max = d.iter().copied().fold(0.0, f64::max);
                json!({ "max_deviation": max, "tolerance": self.cfg.sweep.tau_tolerance, "pass": !degenerate && failures.is_empty() && max < self.cfg.sweep.tau_tolerance })
            }
            _ => {
                let s = &self.cfg.sweep;
                let ratios: Vec<f64> = d.windows(2).map(|w| w[0] / w[1]).collect();
                let pass = d.windows(2).all(|w| w[0] <= s.floor || w[0] / w[1] >= s.refinement_factor);
                json!({
                    "ratios": ratios,
                    "refinement_factor": s.refinement_factor,
                    "floor": s.floor,
                    "floor_reached": d.last().is_some_and(|&x| x <= s.floor),
                    "pass": !degenerate && failures.is_empty() && d.len() >= 2 && pass,
                })
            }
        };
        self.write_json(
            "sweep.json",
            json!({
                "over": over,
                "members": configs.len(),
                "degenerate": degenerate,
                "differences": diffs,
                "failures": failures,
                "verdict": verdict,
            }),
        )?;
        if !failures.is_empty() {
            return Err(CliError::member(format!("{} of {} members failed", failures.len(), configs.len())));
        }
        Ok(())
    }

    // -- evolve -------------------------------------------------------------

    fn evolve(&self) -> CliResult<()> {
        let e = self
            .cfg
            .evolution
            .as_ref()
            .ok_or_else(|| CliError::schema("evolution: section is required by evolve".into()))?;
        let chan = self.cfg.channel_spec()?;
        let lambda = self.cfg.solver.lambda;
        self.note(&format!("pencil L_e={} modes {}x{}", e.half_length, e.modes_x, e.modes_y));
        let mut modal = discretize_p(&chan, e.half_length, ModalGrid { modes_x: e.modes_x, modes_y: e.modes_y })?;
        let forcing: Forcing = self.cfg.forcing.into();
        let map = ReferenceMap::new(chan, self.cfg.solver.half_length)?;
        modal.expand_forcing(|x| forcing.at_physical(x, &map).re)?;

        let steps = ((e.t_end - e.t_start) / e.dt + 1e-9).floor() as usize;
        let times: Vec<f64> = (0..=steps).map(|i| e.t_start + e.dt * i as f64).collect();
        let profile = evolve_profile(&modal, lambda, &times, e.end_window)?;

        let mut plus_cfg = self.cfg.solver_config()?;
        plus_cfg.epsilon = -e.u_plus_epsilon.abs();
        let u_plus = self.stationary(&plus_cfg)?;
        let x_max = e.x_max.unwrap_or_else(|| u_plus.ctx.trusted_half_width().min(e.half_length - e.end_window));
        let opts = ProfileErrorOptions {
            beta: self.cfg.analysis.beta,
            x_max,
            near_fraction: e.near_fraction,
            far_reference_time: e.far_reference_time,
            ..ProfileErrorOptions::default()
        };
        let report = leading_profile_error(&modal, &profile, &u_plus, opts)?;
        self.note(&format!("T_max {:.2} e-trend slope {:.3e}", report.t_max, report.trend_slope));

        let closed = flat_closed_form(&chan, &modal);
        let mut rows = Vec::new();
        for (k, (&z, &r)) in modal.eigenvalues.iter().zip(&modal.residuals).enumerate() {
            let (c, err) = match closed.as_ref().and_then(|c| c.get(k)) {
                Some(&c) => (num(c), num((z - c).abs())),
                None => (String::new(), String::new()),
            };
            rows.push(vec![k.to_string(), num(z), num(r), c, err]);
        }
        self.write_csv("eigenvalues.csv", &["index", "z", "residual", "closed_form", "abs_error"], &rows)?;

        let mut rows = Vec::new();
        for (i, &t) in report.times.iter().enumerate() {
            rows.push(vec![
                num(t),
                num(report.weighted_error[i]),
                num(report.energy_error[i]),
                num(report.far_energy[i]),
                num(report.far_h1[i]),
                num(profile.end_share[i]),
                profile.flagged(i).to_string(),
            ]);
        }
        self.write_csv(
            "timeseries.csv",
            &["t", "e", "energy_error", "far_energy", "far_h1", "end_share", "flagged"],
            &rows,
        )?;

        for &t in &e.snapshots {
            let amps = modal_amplitudes(&modal, lambda, t)?;
            let coeffs = modal.synthesize(&amps);
            let samples = self.sample_modal(&modal, &coeffs);
            self.write_field(&format!("snapshot_t{t}"), &samples)?;
        }

        let closed_error = closed.as_ref().map(|c| {
            modal.eigenvalues.iter().zip(c).take(20).map(|(z, c)| (z - c).abs()).fold(0.0, f64::max)
        });
        self.write_json(
            "evolve.json",
            json!({
                "lambda": lambda,
                "pencil": {
                    "retained": modal.len(),
                    "computed": modal.computed,
                    "orthogonality": modal.orthogonality,
                    "max_residual": modal.residuals.iter().copied().fold(0.0, f64::max),
                    "flat_closed_form_error_lowest_20": closed_error,
                },
                "t_max": profile.t_max,
                "end_window": profile.end_window,
                "u_plus": { "omega": [u_plus.omega().re, u_plus.omega().im], "solve": u_plus.report },
                "profile_error": {
                    "options": report.options,
                    "t_max": report.t_max,
                    "e_quarter": report.e_quarter,
                    "e_end": report.e_end,
                    "e_quarter_mean": report.e_quarter_mean,
                    "e_end_mean": report.e_end_mean,
                    "trend_slope": report.trend_slope,
                    "decreasing": report.decreasing,
                    "far_ratio_max": report.far_ratio_max,
                    "far_bounded": report.far_bounded,
                    "far_h1_max": report.far_h1.iter().copied().fold(0.0, f64::max),
                    "far_h1_bound": report.far_h1_bound,
                    "near_modes": report.near_modes,
                    "near_min_gap": report.near_min_gap,
                },
                "flagged_rows": (0..profile.times.len()).filter(|&i| profile.flagged(i)).count(),
            }),
        )
    }

    fn sample_modal(&self, modal: &ModalDecomposition, coeffs: &[f64]) -> FieldSamples {
        let [nx, ny] = self.cfg.output.sample;
        let l = modal.half_length;
        // Interior samples only; the Dirichlet walls carry no information.
        let x1: Vec<f64> = (0..nx).map(|i| -l + 2.0 * l * (i as f64 + 0.5) / nx as f64).collect();
        let x2: Vec<f64> = (0..ny).map(|j| -DEPTH * (ny - 1 - j) as f64 / (ny - 1) as f64).collect();
        let mut values = vec![None; nx * ny];
        for (i, &a) in x1.iter().enumerate() {
            let d = DEPTH - modal.channel.g(a);
            let inside: Vec<(usize, f64)> = x2
                .iter()
                .enumerate()
                .filter(|&(_, &b)| b >= -d - 1e-12)
                .map(|(j, &b)| (j, (DEPTH * (1.0 + b / d)).clamp(0.0, DEPTH)))
                .collect();
            let s: Vec<f64> = inside.iter().map(|p| p.1).collect();
            let [u, _, _] = modal.evaluate(coeffs, &[a], &s);
            for (r, &(j, _)) in inside.iter().enumerate() {
                values[j * nx + i] = Some(C64::new(u[(0, r)], 0.0));
            }
        }
        FieldSamples { x1, x2, values }
    }
}

/// Shortest round-trip text; exponent form outside `[1e-4, 1e6)`.
fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e6).contains(&a) || !a.is_finite() { x.to_string() } else { format!("{x:e}") }
}

fn side_name(s: Side) -> &'static str {
    match s {
        Side::Up => "up",
        Side::Down => "down",
    }
}

/// Ascending `k^2 / (k^2 + (m pi / 2 L_e)^2)` for a flat channel.
fn flat_closed_form(chan: &ChannelSpec, modal: &ModalDecomposition) -> Option<Vec<f64>> {
    if !chan.topography.is_flat() {
        return None;
    }
    let mut z = Vec::new();
    for m in 1..=modal.grid.modes_x {
        for k in 1..=modal.grid.modes_y {
            let kx = m as f64 * std::f64::consts::PI / (2.0 * modal.half_length);
            let k2 = (k * k) as f64;
            z.push(k2 / (k2 + kx * kx));
        }
    }
    z.sort_by(f64::total_cmp);
    Some(z)
}

// ---------------------------------------------------------------------------
// Heatmaps

/// Rectangular sample of a field; `None` marks points outside the channel.
/// Rows run from the deepest `x2` upward.
pub struct FieldSamples {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub values: Vec<Option<C64>>,
}

/// Blue-white-red map of `v` in `[-1, 1]`.
pub fn diverging(v: f64) -> [u8; 3] {
    let v = v.clamp(-1.0, 1.0);
    let to = |x: f64| (255.0 * x).round() as u8;
    if v < 0.0 { [to(1.0 + v), to(1.0 + v), 255] } else { [255, to(1.0 - v), to(1.0 - v)] }
}

/// `Re u` scaled by its largest magnitude in the frame; the lid is the top row.
pub fn heatmap_png(s: &FieldSamples) -> CliResult<Vec<u8>> {
    let (nx, ny) = (s.x1.len(), s.x2.len());
    let scale = s.values.iter().flatten().map(|v| v.re.abs()).fold(0.0, f64::max);
    let mut pixels = Vec::with_capacity(nx * ny * 3);
    for j in (0..ny).rev() {
        for i in 0..nx {
            let px = match s.values[j * nx + i] {
                Some(v) => diverging(if scale > 0.0 { v.re / scale } else { 0.0 }),
                None => [96, 96, 96],
            };
            pixels.extend_from_slice(&px);
        }
    }
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, nx as u32, ny as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let err = |e: png::EncodingError| CliError::io(format!("png: {e}"));
        let mut w = enc.write_header().map_err(err)?;
        w.write_image_data(&pixels).map_err(err)?;
    }
    Ok(buf)
}
