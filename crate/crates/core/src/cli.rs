//! Command-line surface: `select`, `gamma` and `synth`.
//!
//! Results are JSON-lines [`RunRecord`]s. Exit codes are 0 on success, 2 for
//! argument errors, 3 for parse and I/O errors and 4 for numerical
//! degeneracy. Every failure prints exactly one diagnostic line on stderr.

use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::analysis::estimate_gamma_min;
use crate::bank::EmbeddingBank;
use crate::baselines::{select_dense_topk, select_dpp_greedy, select_random, DppConfig, Similarity};
use crate::error::{Error, Result};
use crate::io::{load_bank, write_records, BankFormat, Payload, RunRecord};
use crate::kernels::KernelSpec;
use crate::selector::{select_many, Backend, MethodConfig, SelectionConfig, SelectionResult};
use crate::synth::{run_sweep, SynthConfig, SynthMethod};

#[derive(Debug, Parser)]
#[command(name = "kite", version, about = "Query-specific exemplar selection")]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Select exemplars for every query row.
    Select(SelectArgs),
    /// Monte-Carlo estimate of the submodularity ratio.
    Gamma(GammaArgs),
    /// Synthetic linear-regression benchmark.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Kite,
    Random,
    Dense,
    Dpp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Kitebin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Auto,
    Design,
    Kernel,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[arg(long)]
    bank: PathBuf,
    /// Query vectors, one per row, in the bank's format.
    #[arg(long)]
    query: PathBuf,
    #[arg(long, default_value_t = 50)]
    k: usize,
    #[arg(long, default_value_t = 0.02)]
    beta: f64,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// `linear`, `poly:c=<real>,m=<int>` or `rbf:sigma=<real>`.
    #[arg(long, default_value = "linear")]
    kernel: KernelSpec,
    #[arg(long, value_enum, default_value = "kite")]
    method: MethodArg,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for `--method random`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Bank format; guessed from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, value_enum, default_value = "auto")]
    backend: BackendArg,
    /// Scale bank rows and queries to unit norm first.
    #[arg(long)]
    normalize: bool,
    /// Similarity for `--method dense` and the DPP quality term.
    #[arg(long, default_value = "cosine")]
    similarity: Similarity,
    /// Quality temperature for `--method dpp`.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
}

#[derive(Debug, Args)]
struct GammaArgs {
    #[arg(long)]
    demo_bank: PathBuf,
    #[arg(long)]
    query_bank: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    k_grid: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    beta_grid: Vec<f64>,
    #[arg(long)]
    trials: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    d: usize,
    /// Training pool sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1000")]
    n: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Test-mean shifts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    mu_test: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    runs: usize,
    #[arg(long, value_delimiter = ',', default_value = "lite,dense,dpp,random")]
    methods: Vec<SynthMethod>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
    lambda_grid: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    n_test: usize,
    #[arg(long, default_value_t = 5.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    mu_train: f64,
    #[arg(long, default_value_t = 0.02)]
    beta_fit: f64,
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    0
                }
                _ => {
                    let msg = e.render().to_string();
                    let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
                    let _ = writeln!(stderr, "{}", first.trim());
                    2
                }
            };
        }
    };
    let outcome = match cli.threads {
        Some(0) => Err(Error::invalid("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid(e.to_string()))
            .and_then(|pool| pool.install(|| dispatch(cli.command))),
        None => dispatch(cli.command),
    }
    .and_then(|output| output.write(stdout));
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

// what a command produced, written once the worker pool is done
struct Output {
    records: Vec<RunRecord>,
    table: Option<String>,
    out: Option<PathBuf>,
}

impl Output {
    // with --out, records go to the file and the text table to stdout
    fn write(self, stdout: &mut dyn Write) -> Result<()> {
        match self.out {
            Some(path) => {
                write_records(&self.records, File::create(path)?)?;
                if let Some(table) = self.table {
                    stdout.write_all(table.as_bytes())?;
                }
                Ok(())
            }
            None => write_records(&self.records, stdout),
        }
    }
}

fn dispatch(command: Command) -> Result<Output> {
    match command {
        Command::Select(a) => run_select(a),
        Command::Gamma(a) => run_gamma(a),
        Command::Synth(a) => run_synth(a),
    }
}

fn resolve_format(path: &Path, format: Option<FormatArg>) -> BankFormat {
    match format {
        Some(FormatArg::Csv) => BankFormat::Csv,
        Some(FormatArg::Kitebin) => BankFormat::Kitebin,
        None => BankFormat::from_path(path),
    }
}

fn run_select(a: SelectArgs) -> Result<Output> {
    let start = Instant::now();
    let bank = load_bank(&a.bank, resolve_format(&a.bank, a.format))?;
    let queries = load_bank(&a.query, resolve_format(&a.query, a.format))?;
    if queries.dim() != bank.dim() {
        return Err(Error::invalid(format!(
            "query dimension {} does not match bank dimension {}",
            queries.dim(),
            bank.dim()
        )));
    }
    let results = match a.method {
        MethodArg::Kite => {
            let mut config = SelectionConfig::new(a.k, a.beta, a.lambda, a.kernel).with_backend(match a.backend {
                BackendArg::Auto => Backend::Auto,
                BackendArg::Design => Backend::Design,
                BackendArg::Kernel => Backend::Kernel,
            });
            config.normalize_inputs = a.normalize;
            select_many(&bank, &queries, &config)?
        }
        MethodArg::Random => queries
            .rows()
            .map(|_| select_random(&bank, a.k, a.seed))
            .collect::<Result<Vec<_>>>()?,
        MethodArg::Dense => queries
            .rows()
            .map(|z| select_dense_topk(&bank, z, a.k, a.similarity))
            .collect::<Result<Vec<_>>>()?,
        MethodArg::Dpp => {
            let mut config = DppConfig::new(a.k, a.kernel);
            config.temperature = a.temperature;
            config.similarity = a.similarity;
            queries
                .rows()
                .map(|z| select_dpp_greedy(&bank, z, &config))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let elapsed = start.elapsed().as_secs_f64();
    let records: Vec<RunRecord> = results
        .into_iter()
        .enumerate()
        .map(|(q, r)| select_record(&a, &bank, &queries, q, r, elapsed))
        .collect();
    Ok(Output {
        records,
        table: None,
        out: a.out,
    })
}

fn select_record(
    a: &SelectArgs,
    bank: &EmbeddingBank,
    queries: &EmbeddingBank,
    q: usize,
    result: SelectionResult,
    elapsed: f64,
) -> RunRecord {
    let wall = result.wall_time_secs;
    let config = json!({
        "bank": a.bank,
        "query": a.query,
        "query_index": q,
        "query_id": queries.ids()[q],
        "bank_rows": bank.len(),
        "dim": bank.dim(),
        "method": result.config,
        "total_wall_time_secs": elapsed,
    });
    let seed = matches!(result.config, MethodConfig::Random { .. }).then_some(a.seed);
    RunRecord::new("select", config, Payload::Selection(result), seed, wall)
}

fn run_gamma(a: GammaArgs) -> Result<Output> {
    let start = Instant::now();
    let demo = load_bank(&a.demo_bank, resolve_format(&a.demo_bank, a.format))?;
    let queries = load_bank(&a.query_bank, resolve_format(&a.query_bank, a.format))?;
    let report = estimate_gamma_min(&demo, &queries, &a.k_grid, &a.beta_grid, a.trials, a.seed)?;
    let config = json!({
        "demo_bank": a.demo_bank,
        "query_bank": a.query_bank,
        "k_grid": a.k_grid,
        "beta_grid": a.beta_grid,
        "trials": a.trials,
        "seed": a.seed,
    });
    let table = report.to_table();
    let record = RunRecord::new("gamma", config, Payload::Gamma(report), Some(a.seed), start.elapsed().as_secs_f64());
    Ok(Output {
        records: vec![record],
        table: Some(table),
        out: a.out,
    })
}

fn run_synth(a: SynthArgs) -> Result<Output> {
    let config = SynthConfig {
        d: a.d,
        n: a.n,
        n_test: a.n_test,
        k: a.k,
        sigma: a.sigma,
        mu_train: a.mu_train,
        mu_test: a.mu_test,
        beta_fit: a.beta_fit,
        methods: a.methods,
        lambda_grid: a.lambda_grid,
        runs: a.runs,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let report = run_sweep(&config)?;
    let table = report.to_table();
    let config_json = serde_json::to_value(&config).map_err(|e| Error::invalid(e.to_string()))?;
    let wall = report.wall_time_secs;
    let record = RunRecord::new("synth", config_json, Payload::Synth(report), Some(a.seed), wall);
    Ok(Output {
        records: vec![record],
        table: Some(table),
        out: a.out,
    })
}
