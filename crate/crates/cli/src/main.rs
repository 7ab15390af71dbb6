use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flame::dataset::{align_encodings, load_csv, split_holdout, write_csv};
use flame::engine::{run_flame, subpopulation_report, Category};
use flame::grouper::sql::emit_sql;
use flame::oracle::bias_matrix;
use flame::synth::{generate, generate_with_holdout, Sidecar, SynthModel, SynthSpec};
use flame::{Backend, Dataset, DatasetSchema, FlameConfig, PeThreshold, Rational};

#[derive(Parser)]
#[command(name = "flame", version, about = "Almost-exact matching on categorical covariates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Match treated and control units and estimate treatment effects.
    Match(MatchArgs),
    /// Enumerate the exact bias matrix of the oracle matcher.
    OracleBias(OracleArgs),
    /// Generate a synthetic dataset with known effects.
    Synth(SynthArgs),
    /// Print the SQL for one matching pass.
    SqlEmit(SqlArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    MixedRadix,
    TupleKey,
}

#[derive(Clone, Copy, ValueEnum)]
enum ThresholdArg {
    Relative,
    Additive,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("holdout_source").required(true).args(["holdout", "holdout_frac"]))]
struct MatchArgs {
    #[arg(long)]
    input: PathBuf,
    /// Separate holdout CSV with the same columns.
    #[arg(long)]
    holdout: Option<PathBuf>,
    /// Fraction of the input to split off as holdout.
    #[arg(long)]
    holdout_frac: Option<f64>,
    #[arg(long)]
    treatment: String,
    #[arg(long)]
    outcome: String,
    /// Covariate columns (default: every other column).
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    #[arg(long)]
    id_column: Option<String>,
    #[arg(long = "c", default_value_t = 0.001)]
    c_param: f64,
    #[arg(long, default_value_t = 0.02)]
    epsilon: f64,
    #[arg(long, value_enum, default_value = "relative")]
    pe_threshold: ThresholdArg,
    /// Disable the prediction-error stop.
    #[arg(long)]
    no_pe_stop: bool,
    /// Stop once match quality falls below this value after reaching it.
    #[arg(long, allow_hyphen_values = true)]
    mq_drop: Option<f64>,
    #[arg(long)]
    max_levels: Option<usize>,
    #[arg(long)]
    replacement: bool,
    #[arg(long, value_enum, default_value = "mixed-radix")]
    backend: BackendArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Also write the per-level quality series as CSV.
    #[arg(long)]
    mq_csv: Option<PathBuf>,
    /// Print a per-category CATE summary for this covariate.
    #[arg(long)]
    by: Option<String>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    p: u8,
    /// Required for p = 4 (about 4.3 billion allocations).
    #[arg(long)]
    allow_large: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    model: String,
    #[arg(long)]
    n_control: usize,
    #[arg(long)]
    n_treated: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output prefix: writes PREFIX.csv and PREFIX.json.
    #[arg(long)]
    out: PathBuf,
    /// Holdout sizes; when both are given PREFIX.holdout.csv is written too.
    #[arg(long, requires = "holdout_treated")]
    holdout_control: Option<usize>,
    #[arg(long, requires = "holdout_control")]
    holdout_treated: Option<usize>,
    #[arg(long = "u", allow_hyphen_values = true)]
    u_coeff: Option<f64>,
    #[arg(long)]
    n_irrelevant: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    noise_sd: f64,
}

#[derive(Args)]
struct SqlArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    covariates: Vec<String>,
    #[arg(long, default_value_t = 1)]
    level: u32,
    #[arg(long, default_value = "D")]
    table: String,
}

enum Failure {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<flame::Error> for Failure {
    fn from(e: flame::Error) -> Self {
        let msg = e.to_string();
        if e.is_data_error() {
            Failure::Data(msg)
        } else {
            match e {
                flame::Error::InvalidArgument(_) | flame::Error::SqlEmission(_) => Failure::Usage(msg),
                _ => Failure::Runtime(msg),
            }
        }
    }
}

type CliResult<T> = Result<T, Failure>;

/// Input-side failures are data errors, including unreadable files.
fn input_error(path: &Path, e: flame::Error) -> Failure {
    match e {
        flame::Error::Io(io) => Failure::Data(format!("{}: {io}", path.display())),
        e => Failure::from(e),
    }
}

/// Writes through a temporary sibling file, then renames it into place.
fn write_atomic(path: &Path, fill: impl FnOnce(&mut Vec<u8>) -> flame::Result<()>) -> CliResult<()> {
    let mut buf = Vec::new();
    fill(&mut buf)?;
    let name = path.file_name().ok_or_else(|| Failure::Usage(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let res = fs::write(&tmp, &buf).and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(Failure::Runtime(format!("cannot write {}: {e}", path.display())));
    }
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> impl FnOnce(&mut Vec<u8>) -> flame::Result<()> + '_ {
    move |buf| {
        serde_json::to_writer_pretty(&mut *buf, v)?;
        buf.push(b'\n');
        Ok(())
    }
}

fn cmd_match(a: MatchArgs) -> CliResult<()> {
    let mut schema = DatasetSchema::new(&a.treatment, &a.outcome).with_covariates(a.covariates.iter().cloned());
    if let Some(id) = &a.id_column {
        schema = schema.with_id_column(id);
    }
    let input: Dataset = load_csv(&a.input, &schema).map_err(|e| input_error(&a.input, e))?;
    let (matching, holdout) = match (&a.holdout, a.holdout_frac) {
        (Some(path), _) => {
            let h: Dataset = load_csv(path, &schema).map_err(|e| input_error(path, e))?;
            align_encodings(&input, &h)?
        }
        (None, Some(frac)) => split_holdout(&input, frac, a.seed)?,
        (None, None) => unreachable!("clap requires a holdout source"),
    };
    let by = match &a.by {
        Some(name) => Some(
            matching
                .covariate_index(name)
                .ok_or_else(|| Failure::Usage(format!("unknown covariate `{name}` for --by")))?,
        ),
        None => None,
    };
    let config = FlameConfig {
        c_param: a.c_param,
        epsilon: a.epsilon,
        pe_threshold: match a.pe_threshold {
            ThresholdArg::Relative => PeThreshold::Relative,
            ThresholdArg::Additive => PeThreshold::Additive,
        },
        replacement: a.replacement,
        backend: match a.backend {
            BackendArg::MixedRadix => Backend::MixedRadix,
            BackendArg::TupleKey => Backend::TupleKey,
        },
        stop_on_pe_blowup: !a.no_pe_stop,
        max_levels: a.max_levels,
        mq_drop_threshold: a.mq_drop,
        seed: a.seed,
    };
    let run = run_flame(&matching, &holdout, &config)?;
    let report = run.report(&matching, &config);

    match (&a.output, a.format) {
        (Some(path), Format::Json) => write_atomic(path, to_json(&report))?,
        (Some(path), Format::Csv) => write_atomic(path, |buf| run.write_assignments_csv(&matching, buf))?,
        (None, Format::Json) => {
            let mut buf = Vec::new();
            to_json(&report)(&mut buf)?;
            emit(&buf)?;
        }
        (None, Format::Csv) => {
            let mut buf = Vec::new();
            run.write_assignments_csv(&matching, &mut buf)?;
            emit(&buf)?;
        }
    }
    if let Some(path) = &a.mq_csv {
        write_atomic(path, |buf| run.write_mq_series_csv(&matching, buf))?;
    }

    if a.output.is_some() {
        let ate = report.ate.map_or("n/a".to_string(), |v| v.to_string());
        let stop = serde_json::to_value(report.stop_reason).map_err(|e| Failure::Runtime(e.to_string()))?;
        println!("levels: {}", report.levels.len());
        println!("groups: {}", report.n_groups);
        println!("matched units: {}/{}", report.n_matched, report.n_units);
        println!("ATE: {ate}");
        println!("stop: {}", stop.as_str().unwrap_or_default());
    }
    if let Some(k) = by {
        for row in subpopulation_report(&run, k)? {
            let cat = match row.category {
                Category::Code(c) => matching.label(k, c).to_string(),
                Category::Marginalized => "marginalized".to_string(),
            };
            eprintln!("{}={cat}: mean CATE {} (sd {}) over {} units", matching.covariate_names()[k], row.mean_cate, row.std_cate, row.units);
        }
    }
    Ok(())
}

fn emit(buf: &[u8]) -> CliResult<()> {
    io::stdout().write_all(buf).map_err(|e| Failure::Runtime(format!("stdout: {e}")))
}

fn cmd_oracle(a: OracleArgs) -> CliResult<()> {
    let m = bias_matrix::<Rational>(a.p as usize, a.allow_large)?;
    if let Some(path) = &a.output {
        let report = m.report()?;
        write_atomic(path, to_json(&report))?;
    }
    print!("{}", m.table());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    let model: SynthModel = a.model.parse()?;
    let spec = SynthSpec {
        u_coeff: a.u_coeff,
        n_irrelevant: a.n_irrelevant,
        noise_sd: a.noise_sd,
        ..SynthSpec::new(model, a.n_control, a.n_treated, a.seed)
    };
    let schema = DatasetSchema::new("treated", "outcome");
    let prefix = a.out.to_string_lossy().into_owned();
    let with_ext = |ext: &str| PathBuf::from(format!("{prefix}.{ext}"));

    let (data, holdout, coefficients) = match (a.holdout_control, a.holdout_treated) {
        (Some(hc), Some(ht)) => {
            let (d, h, c) = generate_with_holdout(&spec, hc, ht)?;
            (d, Some(h), c)
        }
        _ => {
            let (d, c) = generate(&spec)?;
            (d, None, c)
        }
    };
    write_atomic(&with_ext("csv"), |buf| write_csv(&data.dataset, buf, &schema))?;
    if let Some(h) = &holdout {
        write_atomic(&with_ext("holdout.csv"), |buf| write_csv(&h.dataset, buf, &schema))?;
    }
    let sidecar = Sidecar {
        spec,
        noise_is_sd: true,
        coefficients,
        true_cate: data.true_cate,
        holdout_true_cate: holdout.map(|h| h.true_cate),
    };
    write_atomic(&with_ext("json"), to_json(&sidecar))?;
    Ok(())
}

fn cmd_sql(a: SqlArgs) -> CliResult<()> {
    let sql = emit_sql(&a.covariates, a.level, &a.table)?;
    emit(sql.as_bytes())
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("FLAME_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("FLAME_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

/// Collapses clap's multi-line error into one line.
fn usage_line(e: &clap::Error) -> String {
    let text = e.to_string();
    let body: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with("Usage:"))
        .collect();
    body.join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", usage_line(&e));
            return ExitCode::from(1);
        }
    };
    let result = configure_threads().and_then(|_| match cli.command {
        Command::Match(a) => cmd_match(a),
        Command::OracleBias(a) => cmd_oracle(a),
        Command::Synth(a) => cmd_synth(a),
        Command::SqlEmit(a) => cmd_sql(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message().replace('\n', " "));
            ExitCode::from(f.code())
        }
    }
}
