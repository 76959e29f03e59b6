//! Command-line front end.
//!
//! Every subcommand accepts `--config FILE`, a TOML file of `flag = value`
//! pairs using the long flag names. Lists may be TOML arrays or
//! comma-separated strings; `true` switches a boolean flag on. Flags given
//! on the command line win over the file.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use msvc_core::{
    build_basis, generate, gwr_cv_score, gwr_fit_at, gwr_select_bandwidth, BandwidthGrid, BasisChoice, FitOptions, Generator, GwrFit,
    SequentialOptions, SimConfig,
};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::experiment::{run_experiment, timed_fit, ExperimentSpec, Method};
use crate::io::{self, coordinates, load_dataset, with_suffix, Columns, InputError, Table, INTERCEPT};
use crate::summary::{BasisSummary, FitSummary, GwrSummary};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_ESTIMATION: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "msvc", version, about = "Moran eigenvector spatially varying coefficient regression", args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit an M-SVC model to a CSV table.
    Fit(FitArgs),
    /// Write a simulated dataset and its true coefficient surfaces.
    Simulate(SimulateArgs),
    /// Compare M-SVC and GWR over simulated replications.
    Benchmark(BenchmarkArgs),
    /// Export the Moran eigenbasis of a set of sites.
    Eigen(EigenArgs),
    /// Fit geographically weighted regression with cross-validated bandwidth.
    Gwr(GwrArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BasisArg {
    Auto,
    Exact,
    Nystrom,
}

impl From<BasisArg> for BasisChoice {
    fn from(b: BasisArg) -> Self {
        match b {
            BasisArg::Auto => BasisChoice::Auto,
            BasisArg::Exact => BasisChoice::Exact,
            BasisArg::Nystrom => BasisChoice::Nystrom,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GeneratorArg {
    Small,
    Large,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArg {
    /// TOML file of flag values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TableArgs {
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Response column.
    #[arg(long, value_name = "COL")]
    pub y: String,
    /// Covariate columns; an intercept is always added.
    #[arg(long, value_name = "COLS", value_delimiter = ',', num_args = 0..)]
    pub x: Vec<String>,
    /// Coordinate columns.
    #[arg(long, value_name = "PX,PY", value_delimiter = ',', default_values = ["px", "py"])]
    pub coords: Vec<String>,
}

impl TableArgs {
    fn columns(&self, svc: Option<Vec<String>>) -> Result<Columns, InputError> {
        Ok(Columns { coords: coord_pair(&self.coords)?, y: self.y.clone(), x: self.x.clone(), svc })
    }
}

fn coord_pair(names: &[String]) -> Result<[String; 2], InputError> {
    match names {
        [px, py] => Ok([px.clone(), py.clone()]),
        _ => Err(InputError::Invalid(format!("--coords takes two column names, got {}", names.len()))),
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub table: TableArgs,
    /// Covariates with varying coefficients (default: all).
    #[arg(long, value_name = "COLS", value_delimiter = ',')]
    pub svc: Option<Vec<String>>,
    /// Nyström knots (default: min(200, N)).
    #[arg(long)]
    pub knots: Option<usize>,
    #[arg(long, value_enum, default_value_t = BasisArg::Auto)]
    pub basis: BasisArg,
    /// Kernel range (default: longest minimum spanning tree edge).
    #[arg(long)]
    pub range: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Relative log-likelihood change that ends the sweeps.
    #[arg(long, default_value_t = SequentialOptions::default().tol)]
    pub tol: f64,
    #[arg(long, default_value_t = SequentialOptions::default().max_sweeps)]
    pub max_sweeps: usize,
    #[arg(long, default_value_t = SequentialOptions::default().alpha_bounds.0)]
    pub alpha_min: f64,
    #[arg(long, default_value_t = SequentialOptions::default().alpha_bounds.1)]
    pub alpha_max: f64,
    /// Output prefix.
    #[arg(long, value_name = "PREFIX", default_value = "msvc")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GwrArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub table: TableArgs,
    /// Fixed bandwidth; selected by leave-one-out cross-validation if unset.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Candidates scanned before refinement.
    #[arg(long, default_value_t = 20)]
    pub grid_points: usize,
    #[arg(long, value_name = "PREFIX", default_value = "gwr")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GeneratorArgs {
    #[arg(long, value_enum, default_value_t = GeneratorArg::Large)]
    pub generator: GeneratorArg,
    /// Knots of the large generator's basis.
    #[arg(long, default_value_t = msvc_core::simulation::DEFAULT_GENERATOR_KNOTS)]
    pub gen_knots: usize,
    /// Scale exponents of the large generator, one per coefficient.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    /// Noise variance over signal variance.
    #[arg(long, default_value_t = 0.3)]
    pub noise_share: f64,
    /// Zero the small generator's kernel diagonal.
    #[arg(long)]
    pub zero_diagonal: bool,
}

impl GeneratorArgs {
    fn generator(&self) -> Generator {
        match self.generator {
            GeneratorArg::Small => Generator::Small { zero_diagonal: self.zero_diagonal },
            GeneratorArg::Large => Generator::Large { knot_count: self.gen_knots },
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub gen: GeneratorArgs,
    #[arg(long)]
    pub n: usize,
    /// Coefficients including the intercept.
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "PREFIX", default_value = "sim")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub gen: GeneratorArgs,
    #[arg(long, value_delimiter = ',', default_value = "msvc,gwr")]
    pub methods: Vec<Method>,
    /// Sample sizes.
    #[arg(long, value_delimiter = ',', default_value = "1000")]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Nyström knots of the M-SVC fit.
    #[arg(long)]
    pub knots: Option<usize>,
    #[arg(long, value_enum, default_value_t = BasisArg::Auto)]
    pub basis: BasisArg,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Report CSV.
    #[arg(long, value_name = "PATH", default_value = "benchmark.csv")]
    pub out: PathBuf,
    /// Also write the report, with failures, as JSON.
    #[arg(long, value_name = "PATH")]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EigenArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_name = "PX,PY", value_delimiter = ',', default_values = ["px", "py"])]
    pub coords: Vec<String>,
    #[arg(long, value_enum, default_value_t = BasisArg::Auto)]
    pub basis: BasisArg,
    #[arg(long)]
    pub knots: Option<usize>,
    #[arg(long)]
    pub range: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "PREFIX", default_value = "eigen")]
    pub out: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Input(#[from] InputError),
    #[error("{name}: {source}", name = .0.name(), source = .0)]
    Estimation(msvc_core::Error),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Estimation(e) if !is_configuration(e) => EXIT_ESTIMATION,
            _ => EXIT_INPUT,
        }
    }
}

/// Core errors that stem from the arguments rather than the numerics.
fn is_configuration(e: &msvc_core::Error) -> bool {
    use msvc_core::Error::*;
    matches!(
        e,
        InvalidKnotCount { .. } | SizeGuardExceeded { .. } | InvalidConfig(_) | InsufficientData { .. } | NonFiniteInput(_) | DimensionMismatch(_)
    )
}

impl From<msvc_core::Error> for CliError {
    fn from(e: msvc_core::Error) -> Self {
        CliError::Estimation(e)
    }
}

fn written(path: PathBuf, r: std::io::Result<()>) -> Result<PathBuf, CliError> {
    r.map(|_| path.clone()).map_err(|source| CliError::Write { path, source })
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<PathBuf, CliError> {
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other);
    let r = text.and_then(|t| std::fs::write(&path, t + "\n"));
    written(path, r)
}

/// Replaces `--config FILE` after the subcommand with the flags it lists.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, InputError> {
    let pos = args.iter().position(|a| a == "--config").map(|i| (i, i + 2)).or_else(|| {
        args.iter().position(|a| a.to_str().is_some_and(|s| s.starts_with("--config="))).map(|i| (i, i + 1))
    });
    let Some((start, end)) = pos else { return Ok(args) };
    let path = match end - start {
        2 => match args.get(start + 1) {
            Some(p) => PathBuf::from(p),
            None => return Ok(args),
        },
        _ => PathBuf::from(&args[start].to_str().unwrap()["--config=".len()..]),
    };
    let text = std::fs::read_to_string(&path).map_err(|source| InputError::Io { path: path.clone(), source })?;
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| InputError::Invalid(format!("{}: {}", path.display(), e.message())))?;
    let mut flags = Vec::new();
    for (key, value) in table {
        let flag = OsString::from(format!("--{}", key.replace('_', "-")));
        let scalar = |v: &toml::Value| match v {
            toml::Value::String(s) => Ok(s.clone()),
            toml::Value::Integer(i) => Ok(i.to_string()),
            toml::Value::Float(f) => Ok(f.to_string()),
            _ => Err(InputError::Invalid(format!("{}: unsupported value for `{key}`", path.display()))),
        };
        match &value {
            toml::Value::Boolean(true) => flags.push(flag),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) => {
                let parts = items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?;
                flags.extend([flag, parts.join(",").into()]);
            }
            other => flags.extend([flag, scalar(other)?.into()]),
        }
    }
    // the subcommand is the first argument after the program name
    let mut out: Vec<OsString> = args[..start].to_vec();
    let insert_at = 2.min(out.len());
    out.splice(insert_at..insert_at, flags);
    out.extend_from_slice(&args[end..]);
    Ok(out)
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

pub fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let paths = match cli.command {
        Command::Fit(a) => cmd_fit(&a)?,
        Command::Simulate(a) => cmd_simulate(&a)?,
        Command::Benchmark(a) => cmd_benchmark(&a)?,
        Command::Eigen(a) => cmd_eigen(&a)?,
        Command::Gwr(a) => cmd_gwr(&a)?,
    };
    report(&paths);
    Ok(paths)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code, printing diagnostics to stderr.
pub fn main_with_args(args: Vec<OsString>) -> u8 {
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(_) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn cmd_fit(a: &FitArgs) -> Result<Vec<PathBuf>, CliError> {
    let cols = a.table.columns(a.svc.clone())?;
    let table = Table::read(&a.table.input)?;
    let dataset = load_dataset(&table, &cols)?;
    let options = FitOptions {
        knot_count: a.knots,
        basis: a.basis.into(),
        range: a.range,
        seed: a.seed,
        sequential: SequentialOptions {
            alpha_bounds: (a.alpha_min, a.alpha_max),
            tol: a.tol,
            max_sweeps: a.max_sweeps,
            ..SequentialOptions::default()
        },
        ..FitOptions::default()
    };
    let (fit, times) = timed_fit(&dataset, &options)?;
    let names = cols.covariate_names();
    let beta = with_suffix(&a.out, ".beta.csv");
    let beta = written(beta.clone(), io::write_surfaces(&beta, &cols.coords, &dataset.coords, &names, &fit.beta_surfaces))?;
    let summary = write_json(with_suffix(&a.out, ".summary.json"), &FitSummary::new(&fit, names, times))?;
    Ok(vec![beta, summary])
}

pub fn cmd_gwr(a: &GwrArgs) -> Result<Vec<PathBuf>, CliError> {
    let cols = a.table.columns(None)?;
    let table = Table::read(&a.table.input)?;
    let dataset = load_dataset(&table, &cols)?;
    let start = Instant::now();
    let fit = match a.bandwidth {
        Some(b) => GwrFit { bandwidth: b, beta_surfaces: gwr_fit_at(&dataset, b)?, cv_score: gwr_cv_score(&dataset, b)? },
        None => gwr_select_bandwidth(&dataset, &BandwidthGrid { points: a.grid_points, ..BandwidthGrid::for_dataset(&dataset) })?,
    };
    let total_s = start.elapsed().as_secs_f64();
    let names = cols.covariate_names();
    let beta = with_suffix(&a.out, ".beta.csv");
    let beta = written(beta.clone(), io::write_surfaces(&beta, &cols.coords, &dataset.coords, &names, &fit.beta_surfaces))?;
    let summary = write_json(with_suffix(&a.out, ".summary.json"), &GwrSummary::new(&fit, names, total_s))?;
    Ok(vec![beta, summary])
}

#[derive(Debug, Serialize)]
struct SimulationSummary {
    n: usize,
    k: usize,
    seed: u64,
    generator: &'static str,
    true_sigma2: f64,
    alphas: Option<Vec<f64>>,
    generator_rank: Option<usize>,
}

/// Covariate names of simulated data: `x1 .. x{K-1}` after the intercept.
pub fn simulated_covariates(k: usize) -> Vec<String> {
    (1..k).map(|c| format!("x{c}")).collect()
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<Vec<PathBuf>, CliError> {
    let cfg = SimConfig { n: a.n, k: a.k, seed: a.seed, generator: a.gen.generator(), alphas: a.gen.alphas.clone(), noise_share: a.gen.noise_share };
    let inst = generate(&cfg)?;
    let d = &inst.dataset;
    let xs = simulated_covariates(a.k);
    let mut data = DMatrix::zeros(d.n(), 3 + xs.len());
    for (i, p) in d.coords.points().iter().enumerate() {
        data[(i, 0)] = p[0];
        data[(i, 1)] = p[1];
    }
    data.set_column(2, &d.y);
    data.columns_mut(3, xs.len()).copy_from(&d.x.columns(1, xs.len()));
    let headers: Vec<String> = ["px", "py", "y"].iter().map(|s| s.to_string()).chain(xs.iter().cloned()).collect();
    let data_path = with_suffix(&a.out, ".data.csv");
    let data_path = written(data_path.clone(), io::write_matrix(&data_path, &headers, &data))?;
    let names: Vec<String> = std::iter::once(INTERCEPT.to_owned()).chain(xs).collect();
    let coord_names = ["px".to_owned(), "py".to_owned()];
    let truth = with_suffix(&a.out, ".beta_true.csv");
    let truth = written(truth.clone(), io::write_surfaces(&truth, &coord_names, &d.coords, &names, &inst.true_beta))?;
    let summary = SimulationSummary {
        n: a.n,
        k: a.k,
        seed: a.seed,
        generator: match a.gen.generator {
            GeneratorArg::Small => "small",
            GeneratorArg::Large => "large",
        },
        true_sigma2: inst.true_sigma2,
        alphas: inst.alphas.clone(),
        generator_rank: inst.generator_rank,
    };
    let summary = write_json(with_suffix(&a.out, ".sim.json"), &summary)?;
    Ok(vec![data_path, truth, summary])
}

pub fn cmd_benchmark(a: &BenchmarkArgs) -> Result<Vec<PathBuf>, CliError> {
    if a.n.is_empty() || a.k == 0 {
        return Err(InputError::Invalid("need at least one sample size and K >= 1".into()).into());
    }
    let spec = ExperimentSpec {
        methods: a.methods.clone(),
        sizes: a.n.clone(),
        k: a.k,
        reps: a.reps,
        seed: a.seed,
        generator: a.gen.generator(),
        alphas: a.gen.alphas.clone(),
        noise_share: a.gen.noise_share,
        fit: FitOptions { knot_count: a.knots, basis: a.basis.into(), ..FitOptions::default() },
        threads: a.threads,
    };
    let report = run_experiment(&spec);
    for f in &report.failures {
        eprintln!("warning: {} N={} rep={} failed: {}", f.method, f.n, f.rep, f.error);
    }
    let mut paths = vec![written(a.out.clone(), report.write_csv(&a.out))?];
    if let Some(j) = &a.json {
        paths.push(written(j.clone(), report.write_json(j))?);
    }
    Ok(paths)
}

pub fn cmd_eigen(a: &EigenArgs) -> Result<Vec<PathBuf>, CliError> {
    let table = Table::read(&a.input)?;
    let coords = coordinates(&table, &coord_pair(&a.coords)?)?;
    let options = FitOptions { knot_count: a.knots, basis: a.basis.into(), range: a.range, seed: a.seed, ..FitOptions::default() };
    let basis = build_basis(&coords, &options)?;
    let headers: Vec<String> = (1..=basis.rank()).map(|l| format!("e{l}")).collect();
    let e = with_suffix(&a.out, ".E.csv");
    let e = written(e.clone(), io::write_matrix(&e, &headers, &basis.vectors))?;
    let lambda = with_suffix(&a.out, ".lambda.csv");
    let lambda = written(lambda.clone(), io::write_matrix(&lambda, &["lambda".to_owned()], &DMatrix::from_column_slice(basis.rank(), 1, &basis.lambda)))?;
    let summary = write_json(with_suffix(&a.out, ".basis.json"), &BasisSummary::from(&basis))?;
    Ok(vec![e, lambda, summary])
}
