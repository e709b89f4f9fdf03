//! Command-line front end: argument parsing, config merging and the
//! per-command writers. `main.rs` only maps [`CliError`] to an exit code.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::{json, Value};

use scorth::coupling::{build_seeding_spec, SeedingParams};
use scorth::measurement::{build_coupled_operator, gen_instance, instance_header, vector_csv};
use scorth::phase::{scan_curve, sweep_csv, sweep_phase_diagram, GridOptions, PhaseOptions, PhasePoint};
use scorth::{
    mmse, mmse_mc_oracle, run_evolution, BernoulliGaussianPrior, CouplingSpec, EnsembleKind, EvolutionOptions, Schedule,
};

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or input files. Exit code 2.
    Validation(String),
    /// A computation failed or output could not be written. Exit code 3.
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<scorth::Error> for CliError {
    fn from(e: scorth::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Numeric(e.to_string())
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

#[derive(Debug, Parser)]
#[command(
    name = "scorth",
    version,
    about = "Free-entropy thresholds and state evolution for block-coupled DFT measurement systems"
)]
pub struct Cli {
    /// JSON file supplying values for the subcommand's flags; flags given on
    /// the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel sweeps (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scalar-channel MMSE on a grid of precisions, with a Monte-Carlo check column.
    Mmse(MmseArgs),
    /// Free entropy of a single block as a function of the MSE.
    FreeEntropy(FreeEntropyArgs),
    /// Threshold lines α_d, α_c, α_s over a grid of noise variances.
    PhaseDiagram(PhaseArgs),
    /// State evolution of a seeding (or user-supplied) block system.
    Evolve(EvolveArgs),
    /// Builds a measurement operator and a synthetic instance.
    GenMatrix(GenMatrixArgs),
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct MmseArgs {
    /// Signal density ρ [default: 0.4]
    #[arg(long)]
    pub rho: Option<f64>,
    /// Precisions: comma-separated numbers and `log:lo:hi:n` / `lin:lo:hi:n` ranges [default: 0,log:1e-2:1e4:13]
    #[arg(long)]
    pub grid: Option<String>,
    /// Monte-Carlo samples per point; 0 leaves the check columns empty [default: 1000000]
    #[arg(long)]
    pub mc_samples: Option<usize>,
    /// Monte-Carlo seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV; a JSON sidecar is written next to it
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FreeEntropyArgs {
    /// [default: 0.4]
    #[arg(long)]
    pub rho: Option<f64>,
    /// [default: 1e-4]
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Measurement rate α
    #[arg(long)]
    pub alpha: Option<f64>,
    /// orthogonal or gaussian [default: orthogonal]
    #[arg(long)]
    pub ensemble: Option<String>,
    /// Log-spaced grid points in ε [default: 2000]
    #[arg(long)]
    pub points: Option<usize>,
    /// Smallest ε on the grid [default: max(1e-10, 1e-3 σ²)]
    #[arg(long)]
    pub floor: Option<f64>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct PhaseArgs {
    /// [default: 0.4]
    #[arg(long)]
    pub rho: Option<f64>,
    /// Noise variances, same syntax as `mmse --grid`
    #[arg(long)]
    pub sigma2_grid: Option<String>,
    /// orthogonal, gaussian or both [default: both]
    #[arg(long)]
    pub ensemble: Option<String>,
    /// [default: 2000]
    #[arg(long)]
    pub points: Option<usize>,
    /// Bisection tolerance on α [default: 1e-5]
    #[arg(long)]
    pub alpha_tol: Option<f64>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvolveArgs {
    /// Block-system JSON; replaces the seeding flags
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Seeding chain length L [default: 10]
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Band width W [default: 2]
    #[arg(long)]
    pub width: Option<usize>,
    /// [default: 0.7]
    #[arg(long)]
    pub alpha_seed: Option<f64>,
    /// [default: 0.49]
    #[arg(long)]
    pub alpha_bulk: Option<f64>,
    /// Super-diagonal coupling [default: 0.5]
    #[arg(long)]
    pub j: Option<f64>,
    /// [default: 0.4]
    #[arg(long)]
    pub rho: Option<f64>,
    /// Noise variance; overrides the spec file's value [default: 1e-6]
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// [default: orthogonal]
    #[arg(long)]
    pub ensemble: Option<String>,
    /// literal or joint [default: literal]
    #[arg(long)]
    pub schedule: Option<String>,
    /// [default: 1e-12]
    #[arg(long)]
    pub tol: Option<f64>,
    /// [default: 100000]
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    pub damping: Option<f64>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct GenMatrixArgs {
    /// Block-system JSON; replaces the seeding flags
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub alpha_seed: Option<f64>,
    #[arg(long)]
    pub alpha_bulk: Option<f64>,
    #[arg(long)]
    pub j: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Signal length N [default: 1024]
    #[arg(long)]
    pub n: Option<usize>,
    /// Operator seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Instance seed [default: 1]
    #[arg(long)]
    pub instance_seed: Option<u64>,
    /// Noise magnitude σ in y = Ax + σz [default: sqrt(sigma2)]
    #[arg(long)]
    pub sigma: Option<f64>,
    /// orthogonal or gaussian [default: orthogonal]
    #[arg(long)]
    pub ensemble: Option<String>,
    /// Output directory
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

/// Fills every `None` field of `$flags` from `$cfg`.
macro_rules! merge {
    ($flags:expr, $cfg:expr; $($f:ident),* $(,)?) => {
        $( if $flags.$f.is_none() { $flags.$f = $cfg.$f; } )*
    };
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("--config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("--config {}: {e}", path.display())))
}

/// Parses a comma-separated list whose items are numbers or ranges
/// `log:lo:hi:n` / `lin:lo:hi:n` (both ends included).
pub fn parse_grid(text: &str, flag: &str) -> Result<Vec<f64>> {
    let bad = |why: String| invalid(format!("{flag}: {why} in {text:?}"));
    if text.trim().is_empty() {
        return Err(bad("empty grid".into()));
    }
    let mut values = Vec::new();
    for item in text.split(',').map(str::trim) {
        let log = item.starts_with("log:");
        let Some(rest) = item.strip_prefix("log:").or_else(|| item.strip_prefix("lin:")) else {
            values.push(item.parse::<f64>().map_err(|_| bad(format!("cannot parse {item:?}")))?);
            continue;
        };
        let parts: Vec<&str> = rest.split(':').collect();
        let [lo, hi, n] = parts[..] else {
            return Err(bad(format!("expected lo:hi:n in {item:?}")));
        };
        let lo: f64 = lo.parse().map_err(|_| bad(format!("bad lower end in {item:?}")))?;
        let hi: f64 = hi.parse().map_err(|_| bad(format!("bad upper end in {item:?}")))?;
        let n: usize = n.parse().map_err(|_| bad(format!("bad point count in {item:?}")))?;
        if n == 0 {
            return Err(bad(format!("empty range {item:?}")));
        }
        if log && !(lo > 0.0 && hi > 0.0) {
            return Err(bad(format!("log range needs positive ends in {item:?}")));
        }
        for i in 0..n {
            let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
            values.push(match i {
                0 => lo,
                _ if i == n - 1 => hi,
                _ if log => (lo.ln() + t * (hi.ln() - lo.ln())).exp(),
                _ => lo + t * (hi - lo),
            });
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite value".into()));
    }
    Ok(values)
}

fn parse_ensemble(text: &str) -> Result<EnsembleKind> {
    text.parse()
        .map_err(|e: scorth::Error| invalid(format!("--ensemble: {e}")))
}

fn require_output(output: &Option<PathBuf>) -> Result<&Path> {
    output.as_deref().ok_or_else(|| invalid("--output is required"))
}

fn sidecar_path(output: &Path) -> PathBuf {
    if output.extension().is_some_and(|e| e == "json") {
        output.with_extension("meta.json")
    } else {
        output.with_extension("json")
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::Numeric(format!("cannot write {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON value serializes");
    text.push('\n');
    write_file(path, &text)
}

fn provenance(command: &str, config: &impl Serialize) -> Value {
    json!({
        "tool": "scorth",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
    })
}

fn number(x: f64) -> String {
    format!("{x:e}")
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(invalid("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| invalid(format!("--threads: {e}")))?;
    }
    let config = cli.config.as_deref();
    match cli.command {
        Command::Mmse(args) => cmd_mmse(args, config),
        Command::FreeEntropy(args) => cmd_free_entropy(args, config),
        Command::PhaseDiagram(args) => cmd_phase_diagram(args, config),
        Command::Evolve(args) => cmd_evolve(args, config),
        Command::GenMatrix(args) => cmd_gen_matrix(args, config),
    }
}

pub fn cmd_mmse(mut a: MmseArgs, config: Option<&Path>) -> Result<()> {
    let cfg: MmseArgs = load_config(config)?;
    merge!(a, cfg; rho, grid, mc_samples, seed, output);
    let rho = *a.rho.get_or_insert(0.4);
    let grid_text = a.grid.get_or_insert_with(|| "0,log:1e-2:1e4:13".into()).clone();
    let samples = *a.mc_samples.get_or_insert(1_000_000);
    let seed = *a.seed.get_or_insert(0);
    let output = require_output(&a.output)?;

    let grid = parse_grid(&grid_text, "--grid")?;
    let prior = BernoulliGaussianPrior::new(rho)?;
    let mut csv = String::from("varsigma,mmse,mc_estimate,mc_stderr\n");
    for (i, &s) in grid.iter().enumerate() {
        let m = mmse(s, prior)?;
        if samples > 0 {
            let mc = mmse_mc_oracle(s, prior, samples, seed.wrapping_add(i as u64))?;
            let _ = writeln!(
                csv,
                "{},{},{},{}",
                number(s),
                number(m),
                number(mc.estimate),
                number(mc.std_err)
            );
        } else {
            let _ = writeln!(csv, "{},{},,", number(s), number(m));
        }
    }
    write_file(output, &csv)?;
    write_json(&sidecar_path(output), &provenance("mmse", &a))
}

pub fn cmd_free_entropy(mut a: FreeEntropyArgs, config: Option<&Path>) -> Result<()> {
    let cfg: FreeEntropyArgs = load_config(config)?;
    merge!(a, cfg; rho, sigma2, alpha, ensemble, points, floor, output);
    let rho = *a.rho.get_or_insert(0.4);
    let sigma2 = *a.sigma2.get_or_insert(1e-4);
    let alpha = a.alpha.ok_or_else(|| invalid("--alpha is required"))?;
    let kind = parse_ensemble(a.ensemble.get_or_insert_with(|| "orthogonal".into()))?;
    let grid = GridOptions {
        points: *a.points.get_or_insert(2000),
        floor: a.floor,
    };
    let output = require_output(&a.output)?;

    let template = CouplingSpec::uncoupled(alpha, sigma2, BernoulliGaussianPrior::new(rho)?)?;
    let curve = scan_curve(&template, alpha, kind, &grid, PhaseOptions::default().prominence)?;
    let mut csv = String::from("eps,F\n");
    for (e, f) in curve.eps_grid.iter().zip(&curve.values) {
        let _ = writeln!(csv, "{},{}", number(*e), number(*f));
    }
    write_file(output, &csv)?;
    let mut meta = provenance("free-entropy", &a);
    meta["maxima"] = json!(curve.maxima);
    meta["minima"] = json!(curve.minima);
    write_json(&sidecar_path(output), &meta)
}

pub fn cmd_phase_diagram(mut a: PhaseArgs, config: Option<&Path>) -> Result<()> {
    let cfg: PhaseArgs = load_config(config)?;
    merge!(a, cfg; rho, sigma2_grid, ensemble, points, alpha_tol, output);
    let rho = *a.rho.get_or_insert(0.4);
    let grid_text = a
        .sigma2_grid
        .clone()
        .ok_or_else(|| invalid("--sigma2-grid is required"))?;
    let ensemble = a.ensemble.get_or_insert_with(|| "both".into()).clone();
    let defaults = PhaseOptions::default();
    let opts = PhaseOptions {
        grid: GridOptions {
            points: *a.points.get_or_insert(defaults.grid.points),
            floor: None,
        },
        alpha_tol: *a.alpha_tol.get_or_insert(defaults.alpha_tol),
        ..defaults
    };
    let output = require_output(&a.output)?;

    let grid = parse_grid(&grid_text, "--sigma2-grid")?;
    let kinds = match ensemble.as_str() {
        "both" => EnsembleKind::ALL.to_vec(),
        other => vec![parse_ensemble(other)?],
    };
    BernoulliGaussianPrior::new(rho)?;
    let mut points: Vec<PhasePoint> = Vec::new();
    for kind in kinds {
        points.extend(sweep_phase_diagram(rho, &grid, kind, &opts)?);
    }
    write_file(output, &sweep_csv(&points))?;
    let failed = points.iter().filter(|p| p.failed()).count();
    let mut meta = provenance("phase-diagram", &a);
    meta["points"] = json!(points.len());
    meta["failed"] = json!(failed);
    write_json(&sidecar_path(output), &meta)?;
    if failed == points.len() {
        return Err(CliError::Numeric(format!(
            "all {failed} sweep points failed; see the status column"
        )));
    }
    Ok(())
}

/// Spec from `--spec FILE` or from the seeding flags (with defaults).
#[allow(clippy::too_many_arguments)]
fn resolve_spec(
    spec: &Option<PathBuf>,
    blocks: &mut Option<usize>,
    width: &mut Option<usize>,
    alpha_seed: &mut Option<f64>,
    alpha_bulk: &mut Option<f64>,
    j: &mut Option<f64>,
    rho: &mut Option<f64>,
    sigma2: &mut Option<f64>,
) -> Result<CouplingSpec> {
    if let Some(path) = spec {
        if blocks.is_some()
            || width.is_some()
            || alpha_seed.is_some()
            || alpha_bulk.is_some()
            || j.is_some()
            || rho.is_some()
        {
            return Err(invalid("--spec cannot be combined with the seeding flags"));
        }
        let text = fs::read_to_string(path).map_err(|e| invalid(format!("--spec {}: {e}", path.display())))?;
        let parsed = CouplingSpec::from_json(&text).map_err(|e| invalid(format!("--spec {}: {e}", path.display())))?;
        return Ok(match sigma2 {
            Some(s) => parsed.with_sigma2(*s)?,
            None => parsed,
        });
    }
    let params = SeedingParams {
        blocks: *blocks.get_or_insert(10),
        width: *width.get_or_insert(2),
        alpha_seed: *alpha_seed.get_or_insert(0.7),
        alpha_bulk: *alpha_bulk.get_or_insert(0.49),
        j: *j.get_or_insert(0.5),
        sigma2: *sigma2.get_or_insert(1e-6),
        rho: *rho.get_or_insert(0.4),
    };
    Ok(build_seeding_spec(&params)?)
}

fn spec_value(spec: &CouplingSpec) -> Value {
    serde_json::from_str(&spec.to_json()).expect("spec JSON is valid")
}

pub fn cmd_evolve(mut a: EvolveArgs, config: Option<&Path>) -> Result<()> {
    let cfg: EvolveArgs = load_config(config)?;
    merge!(a, cfg; spec, blocks, width, alpha_seed, alpha_bulk, j, rho, sigma2, ensemble, schedule, tol, max_iter, damping, output);
    let spec = resolve_spec(
        &a.spec,
        &mut a.blocks,
        &mut a.width,
        &mut a.alpha_seed,
        &mut a.alpha_bulk,
        &mut a.j,
        &mut a.rho,
        &mut a.sigma2,
    )?;
    let kind = parse_ensemble(a.ensemble.get_or_insert_with(|| "orthogonal".into()))?;
    let schedule: Schedule = a
        .schedule
        .get_or_insert_with(|| "literal".into())
        .parse()
        .map_err(|e: scorth::Error| invalid(format!("--schedule: {e}")))?;
    let defaults = EvolutionOptions::default();
    let opts = EvolutionOptions {
        tol: *a.tol.get_or_insert(defaults.tol),
        max_iter: *a.max_iter.get_or_insert(defaults.max_iter),
        damping: *a.damping.get_or_insert(defaults.damping),
        schedule,
        ..defaults
    };
    let output = require_output(&a.output)?;

    let trace = run_evolution(&spec, kind, &opts)?;
    write_file(output, &trace.to_csv())?;
    let mut meta = provenance("evolve", &a);
    meta["spec"] = spec_value(&spec);
    meta["iterations_to_10_sigma2"] = json!(trace.first_below(10.0 * spec.sigma2()));
    meta["trace"] = trace.summary_json();
    write_json(&sidecar_path(output), &meta)
}

pub fn cmd_gen_matrix(mut a: GenMatrixArgs, config: Option<&Path>) -> Result<()> {
    let cfg: GenMatrixArgs = load_config(config)?;
    merge!(a, cfg; spec, blocks, width, alpha_seed, alpha_bulk, j, rho, sigma2, n, seed, instance_seed, sigma, ensemble, output);
    let spec = resolve_spec(
        &a.spec,
        &mut a.blocks,
        &mut a.width,
        &mut a.alpha_seed,
        &mut a.alpha_bulk,
        &mut a.j,
        &mut a.rho,
        &mut a.sigma2,
    )?;
    let n = *a.n.get_or_insert(1024);
    let seed = *a.seed.get_or_insert(0);
    let instance_seed = *a.instance_seed.get_or_insert(1);
    let sigma = *a.sigma.get_or_insert(spec.sigma2().sqrt());
    let kind = parse_ensemble(a.ensemble.get_or_insert_with(|| "orthogonal".into()))?;
    let dir = require_output(&a.output)?.to_path_buf();

    // operator construction problems (sizes, M_q > N_p) are input errors
    let op = build_coupled_operator(&spec, n, seed, kind).map_err(|e| invalid(e.to_string()))?;
    let inst = gen_instance(&op, spec.prior(), sigma, instance_seed)?;
    fs::create_dir_all(&dir).map_err(|e| CliError::Numeric(format!("cannot create {}: {e}", dir.display())))?;

    let mut header = instance_header(&op, &inst);
    header["provenance"] = provenance("gen-matrix", &a);
    write_json(&dir.join("instance.json"), &header)?;
    write_file(&dir.join("x.csv"), &vector_csv(&inst.x))?;
    write_file(&dir.join("y.csv"), &vector_csv(&inst.y))?;
    let mut stats = String::from("q,p,rows,cols,empirical_variance,expected_variance,ratio\n");
    for s in op.block_statistics() {
        let _ = writeln!(
            stats,
            "{},{},{},{},{},{},{}",
            s.q,
            s.p,
            s.rows,
            s.cols,
            number(s.empirical_variance),
            number(s.expected_variance),
            number(s.ratio)
        );
    }
    write_file(&dir.join("stats.csv"), &stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_syntax() {
        assert_eq!(parse_grid("0, 1.5,2e-3", "--grid").unwrap(), vec![0.0, 1.5, 2e-3]);
        let g = parse_grid("log:1e-6:1e-2:5", "--grid").unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!((g[0], g[4]), (1e-6, 1e-2));
        assert!((g[2] - 1e-4).abs() < 1e-16);
        assert_eq!(parse_grid("0,lin:1:2:3", "--grid").unwrap(), vec![0.0, 1.0, 1.5, 2.0]);
        assert_eq!(parse_grid("log:3:3:1", "--grid").unwrap(), vec![3.0]);
        for bad in ["", "a", "log:0:1:3", "lin:1:2", "lin:1:2:0", "1,,2", "inf"] {
            let e = parse_grid(bad, "--grid").unwrap_err();
            assert!(e.to_string().starts_with("--grid"), "{bad}: {e}");
            assert_eq!(e.exit_code(), EXIT_VALIDATION);
        }
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(sidecar_path(Path::new("out/a.csv")), Path::new("out/a.json"));
        assert_eq!(sidecar_path(Path::new("a")), Path::new("a.json"));
        assert_eq!(sidecar_path(Path::new("a.json")), Path::new("a.meta.json"));
    }
}
