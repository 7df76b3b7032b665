use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use benchforge::config::{parse_suite, validate_suite, SuiteConfig};
use benchforge::design::{
    classes_in_order, coverage_proportions, mlcm_build, mlcm_metrics, parse_samples_csv,
};
use benchforge::exec::{self, DevicePool, PhaseStatus, RunOptions};
use benchforge::report::{render_report, SystemResults};
use benchforge::rundir::{load_run, resolve_run_dir};
use benchforge::select::{select_benchmarks, Selector};
use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_FAILED: u8 = 3;
const EXIT_CONFIG: u8 = 4;

#[derive(Parser)]
#[command(name = "benchforge", version, about = "Benchmark suite orchestration and scoring")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run each benchmark's install command in its own environment directory.
    Install(SuiteArgs),
    /// Run each benchmark's prepare command in its data directory.
    Prepare(SuiteArgs),
    /// Execute the suite over the device pool and record metric streams.
    Run(RunArgs),
    /// Fold one or more run directories into a result table.
    Report(ReportArgs),
    /// Weighted coverage of the suite against its design targets.
    Design(DesignArgs),
    /// Multi-label confusion matrix from annotated samples.
    Mlcm(MlcmArgs),
}

#[derive(Args)]
struct SuiteArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = ".")]
    base_dir: PathBuf,
    /// Comma-separated selector terms, e.g. `domain=NLP,resnet*`.
    #[arg(long)]
    select: Option<String>,
    /// Declared device ids.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    devices: Vec<String>,
    #[arg(long, default_value_t = 1)]
    nodes: u32,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    suite: SuiteArgs,
    /// System name recorded in the run; becomes the report column.
    #[arg(long, default_value = "local")]
    system: String,
    #[arg(long)]
    no_setup_check: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories, or base directories whose latest run is used.
    #[arg(long, value_delimiter = ',', required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    #[arg(short = 'o', long)]
    output: Option<PathBuf>,
    /// Fold the first observation of each process too.
    #[arg(long)]
    keep_warmup: bool,
}

#[derive(Args)]
struct DesignArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Args)]
struct MlcmArgs {
    /// CSV of `sample_id,true_labels,predicted_labels`, labels `;`-separated.
    #[arg(long)]
    samples: PathBuf,
    /// Class order; defaults to order of first appearance.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<String>>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

enum Failure {
    Config(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Other(_) => 1,
        }
    }
}

type Outcome = Result<u8, Failure>;

fn config(e: impl ToString) -> Failure {
    Failure::Config(e.to_string())
}

fn other(e: impl ToString) -> Failure {
    Failure::Other(e.to_string())
}

fn load_suite(path: &Path) -> Result<SuiteConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
    let cfg = parse_suite(&text).map_err(|e| config(format!("{}: {e}", path.display())))?;
    let violations = validate_suite(&cfg);
    if !violations.is_empty() {
        let lines: Vec<String> = violations.iter().map(|v| format!("  {v}")).collect();
        return Err(config(format!("{} is invalid:\n{}", path.display(), lines.join("\n"))));
    }
    Ok(cfg)
}

fn selector(text: &Option<String>) -> Result<Option<Selector>, Failure> {
    text.as_deref().map(Selector::parse).transpose().map_err(config)
}

fn selected_suite(args: &SuiteArgs) -> Result<SuiteConfig, Failure> {
    let cfg = load_suite(&args.config)?;
    match selector(&args.select)? {
        Some(sel) => select_benchmarks(&cfg, &sel).map_err(config),
        None => Ok(cfg),
    }
}

fn setup(args: &SuiteArgs, install: bool) -> Outcome {
    let cfg = selected_suite(args)?;
    fs::create_dir_all(&args.base_dir).map_err(|e| other(format!("{}: {e}", args.base_dir.display())))?;
    let statuses = if install {
        exec::install(&cfg, &args.base_dir)
    } else {
        exec::prepare(&cfg, &args.base_dir)
    };
    let mut failed = false;
    for (bench, status) in &statuses {
        match status {
            PhaseStatus::Failed(why) => println!("{bench:<32} failed: {why}"),
            s => println!("{bench:<32} {}", s.as_str()),
        }
        failed |= !status.is_ok();
    }
    Ok(if failed { EXIT_FAILED } else { 0 })
}

fn run(args: &RunArgs) -> Outcome {
    let cfg = load_suite(&args.suite.config)?;
    let pool = DevicePool::new(args.suite.devices.iter().map(|d| d.trim()), args.suite.nodes).map_err(config)?;
    let opts = RunOptions {
        system: args.system.clone(),
        no_setup_check: args.no_setup_check,
        select: selector(&args.suite.select)?,
    };
    fs::create_dir_all(&args.suite.base_dir)
        .map_err(|e| other(format!("{}: {e}", args.suite.base_dir.display())))?;
    let summary = match exec::run(&cfg, &pool, &args.suite.base_dir, &opts) {
        Ok(s) => s,
        Err(e @ (exec::ExecError::Config(_) | exec::ExecError::SetupIncomplete(_))) => return Err(config(e)),
        Err(e) => return Err(other(e)),
    };

    let mut failed = false;
    for rec in &summary.records {
        let ok = rec.outcomes.iter().filter(|o| o.classified == exec::Classified::Success).count();
        match &rec.plan_error {
            Some(e) => println!("{:<32} not planned: {e}", rec.bench),
            None => println!("{:<32} {ok}/{} processes succeeded", rec.bench, rec.outcomes.len()),
        }
        for o in rec.outcomes.iter().filter(|o| o.classified != exec::Classified::Success) {
            println!("    rank {}: {:?} {}", o.plan.rank, o.classified, o.reason.as_deref().unwrap_or(""));
        }
        failed |= rec.failed();
    }
    println!("run directory: {}", summary.run_dir.display());
    let results = load_run(&summary.run_dir, true).map_err(other)?;
    let doc = render_report(&[results], None).map_err(other)?;
    print!("\n{}", doc.to_text());
    Ok(if failed { EXIT_FAILED } else { 0 })
}

fn emit(text: &str, output: &Option<PathBuf>) -> Result<(), Failure> {
    match output {
        Some(path) => fs::write(path, text).map_err(|e| other(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn report(args: &ReportArgs) -> Outcome {
    let mut systems: Vec<SystemResults> = Vec::new();
    for dir in &args.runs {
        let dir = resolve_run_dir(dir).map_err(other)?;
        systems.push(load_run(&dir, !args.keep_warmup).map_err(other)?);
    }
    let doc = render_report(&systems, args.baseline.as_deref()).map_err(config)?;
    let text = match args.format {
        Format::Text => doc.to_text(),
        Format::Csv => doc.to_csv(),
        Format::Json => doc.to_json() + "\n",
    };
    emit(&text, &args.output)?;
    let failed = doc.table.rows.iter().any(|r| r.results.iter().any(|c| c.perf.is_none()));
    Ok(if failed { EXIT_FAILED } else { 0 })
}

fn design(args: &DesignArgs) -> Outcome {
    let cfg = load_suite(&args.config)?;
    let cov = coverage_proportions(&cfg).map_err(config)?;
    let text = match args.format {
        Format::Json => serde_json::to_string_pretty(&cov).map_err(other)? + "\n",
        _ => cov.to_text(),
    };
    emit(&text, &None)?;
    Ok(0)
}

fn mlcm(args: &MlcmArgs) -> Outcome {
    let text = fs::read_to_string(&args.samples).map_err(|e| config(format!("{}: {e}", args.samples.display())))?;
    let samples = parse_samples_csv(&text).map_err(config)?;
    let classes = args.classes.clone().unwrap_or_else(|| classes_in_order(&samples));
    let m = mlcm_build(&samples, &classes).map_err(config)?;
    let metrics = mlcm_metrics(&m);
    let out = match args.format {
        Format::Json => {
            serde_json::to_string_pretty(&serde_json::json!({"matrix": m, "metrics": metrics})).map_err(other)? + "\n"
        }
        _ => m.to_text(&metrics),
    };
    emit(&out, &None)?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Cmd::Install(a) => setup(a, true),
        Cmd::Prepare(a) => setup(a, false),
        Cmd::Run(a) => run(a),
        Cmd::Report(a) => report(a),
        Cmd::Design(a) => design(a),
        Cmd::Mlcm(a) => mlcm(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            let (Failure::Config(msg) | Failure::Other(msg)) = &f;
            eprintln!("benchforge: {msg}");
            ExitCode::from(f.code())
        }
    }
}
