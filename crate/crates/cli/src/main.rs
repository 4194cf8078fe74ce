use std::path::{Path, PathBuf};
use std::process::ExitCode;

use brownsim::report::{self, OutputFormat};
use brownsim::sweep::{self, Comparison, SweepSpec};
use brownsim::workload::TraceSource;
use brownsim::{Error, RunConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

#[derive(Parser)]
#[command(name = "brownsim", version, about = "Brownout-aware data center scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its report.
    Run(Common),
    /// Run every grid cell, algorithm and seed of a sweep spec.
    Sweep(SweepArgs),
    /// Recommend a policy per cell from an existing sweep directory.
    Compare(CompareArgs),
}

#[derive(Args)]
struct Common {
    /// TOML config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Brownout policy (nufcs, lufcs, lpfcs, huprfcs); implies eeba.
    #[arg(long)]
    policy: Option<String>,
    /// pco, ubp, eeba, or a policy name.
    #[arg(long)]
    algorithm: Option<String>,
    /// Directory of PlanetLab trace files, replacing the configured source.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML sweep spec; the default grid when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the spec's list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Policy used by the plain `eeba` label.
    #[arg(long)]
    policy: Option<String>,
    /// Replaces the spec's algorithm list; repeat or separate with commas.
    #[arg(long, value_delimiter = ',')]
    algorithm: Vec<String>,
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct CompareArgs {
    /// Sweep output directory holding runs.csv.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Summary,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Summary => OutputFormat::Summary,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}

fn apply_overrides(
    config: &mut RunConfig,
    policy: Option<&str>,
    algorithm: Option<&str>,
    trace_dir: Option<&Path>,
) -> brownsim::Result<()> {
    if let Some(p) = policy {
        config.set_algorithm_label(p)?;
    }
    if let Some(a) = algorithm {
        config.set_algorithm_label(a)?;
    }
    if let Some(d) = trace_dir {
        config.trace = TraceSource::PlanetLab { dir: d.to_path_buf() };
    }
    Ok(())
}

fn cmd_run(a: Common) -> brownsim::Result<ExitCode> {
    let mut config = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_overrides(
        &mut config,
        a.policy.as_deref(),
        a.algorithm.as_deref(),
        a.trace_dir.as_deref(),
    )?;
    if let Some(s) = a.seed {
        config.seed = s;
    }
    config.validate()?;

    let (sim, row) = sweep::run_single(&config)?;
    let format = OutputFormat::from(a.format);
    let rows = [row];
    report::emit_report(&a.out_dir, &rows, &config, format)?;
    if format == OutputFormat::Csv {
        report::write_intervals_csv(&a.out_dir.join(report::INTERVALS_FILE), &sim)?;
    }
    println!("{}", report::summary_line(&rows[0]));
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(a: SweepArgs) -> brownsim::Result<ExitCode> {
    let mut spec = match &a.config {
        Some(p) => SweepSpec::load(p)?,
        None => SweepSpec::default(),
    };
    if let Some(p) = &a.policy {
        spec.base.set_algorithm_label(p)?;
    }
    if !a.algorithm.is_empty() {
        spec.algorithms = a.algorithm.clone();
    }
    if let Some(d) = &a.trace_dir {
        spec.base.trace = TraceSource::PlanetLab { dir: d.clone() };
    }
    if let Some(s) = a.seed {
        spec.seeds = vec![s];
    }
    spec.base.validate()?;
    spec.validate()?;

    let outcome = sweep::run_sweep(&spec)?;
    sweep::write_sweep(&a.out_dir, &spec, &outcome, a.format.into())?;
    println!(
        "{} runs written to {}",
        outcome.rows.len(),
        a.out_dir.display()
    );
    if outcome.failures.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    eprintln!(
        "{} runs failed, see {}",
        outcome.failures.len(),
        a.out_dir.join(sweep::FAILURES_FILE).display()
    );
    if let Some(first) = outcome.failures.first() {
        eprintln!("first failure: {} {} seed {}: {}", first.cell, first.label, first.seed, first.error);
    }
    Ok(ExitCode::from(EXIT_PARTIAL))
}

fn cmd_compare(a: CompareArgs) -> brownsim::Result<ExitCode> {
    let runs = a.out_dir.join(report::RUNS_FILE);
    if !runs.exists() {
        return Err(Error::Config(format!(
            "{} not found; run a sweep with --format csv first",
            runs.display()
        )));
    }
    let cmp = sweep::compare_dir(&a.out_dir)?;
    match a.format {
        Format::Csv => sweep::write_comparison(&a.out_dir, &cmp)?,
        Format::Summary => sweep::write_comparison_json(&a.out_dir, &cmp)?,
    };
    print!("{}", render_table(&cmp));
    for c in &cmp.incomplete {
        eprintln!("incomplete cell {}: {}", c.cell, c.reason);
    }
    Ok(ExitCode::SUCCESS)
}

fn render_table(cmp: &Comparison) -> String {
    let mut out = format!(
        "{:<12} {:>8} {:>9} {:>8} {:>9}  {:<8} {}\n",
        "pattern", "discount", "threshold", "optional", "connected", "policy", "Eff [95% CI]"
    );
    for r in &cmp.recommendations {
        let eff = match r.efficiency {
            Some(s) => match (s.ci_lo, s.ci_hi) {
                (Some(lo), Some(hi)) => format!("{:.3} [{lo:.3}, {hi:.3}]", s.mean),
                _ => format!("{:.3}", s.mean),
            },
            None => "n/a".into(),
        };
        out.push_str(&format!(
            "{:<12} {:>7.0}% {:>8.0}% {:>7.0}% {:>8.0}%  {:<8} {}\n",
            r.pattern,
            r.discount * 100.0,
            r.optional_utilization_threshold * 100.0,
            r.optional_percentage * 100.0,
            r.connected_percentage * 100.0,
            r.policy,
            eff
        ));
    }
    out
}
