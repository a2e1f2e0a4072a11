//! `edgesim`: run sweeps and threshold searches from TOML configs.

use std::fs::File;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use edgesim::distributed::DistributedScheme;
use edgesim::experiment::{self, ExperimentConfig};
use edgesim::Error;

#[derive(Parser)]
#[command(name = "edgesim", version, about = "Importance-aware radio resource allocation simulator")]
struct Cli {
    /// Base seed; trials use SEED, SEED+1, ... (keeps the configured trial count).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output CSV path, overriding `output` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Directory holding the MNIST IDX files.
    #[arg(long, global = true, env = "EDGESIM_DATA_DIR")]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the one-parameter sweep described by a config.
    Run { config: PathBuf },
    /// Search the threshold grid in `[gridsearch]` of a centralized config.
    Gridsearch { config: PathBuf },
    /// Print the block allocation for given dataset sizes as CSV.
    Plan {
        /// Comma-separated local dataset sizes.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        /// Total number of blocks.
        #[arg(long)]
        blocks: usize,
        #[arg(long, value_enum, default_value_t = PlanScheme::Proposed)]
        scheme: PlanScheme,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PlanScheme {
    Proposed,
    EqualAllocation,
    LargestOnly,
}

impl From<PlanScheme> for DistributedScheme {
    fn from(s: PlanScheme) -> Self {
        match s {
            PlanScheme::Proposed => DistributedScheme::Proposed,
            PlanScheme::EqualAllocation => DistributedScheme::EqualAllocation,
            PlanScheme::LargestOnly => DistributedScheme::LargestOnly,
        }
    }
}

fn load(cli: &Cli, path: &Path) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = experiment::parse_config(path).with_context(|| format!("invalid config {}", path.display()))?;
    if let Some(seed) = cli.seed {
        cfg.rebase_seeds(seed);
    }
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    if let Some(dir) = &cli.data_dir {
        cfg.set_data_dir(dir.clone());
    }
    Ok(cfg)
}

fn run(cli: &Cli, path: &Path) -> anyhow::Result<()> {
    let cfg = load(cli, path)?;
    let report = experiment::run_sweep(&cfg)?;
    for row in report.failures() {
        eprintln!(
            "warning: {}={} {} seed {} failed: {}",
            row.sweep_param,
            row.sweep_value,
            row.scheme,
            row.seed,
            row.error.as_deref().unwrap_or("")
        );
    }
    let written = report.write_files(&cfg.output)?;
    for s in &report.summary {
        println!(
            "{}={:<8} {:<17} mean {:.4}  std {:.4}  ({} trials)",
            s.sweep_param, s.sweep_value, s.scheme, s.mean_accuracy, s.std_accuracy, s.trials
        );
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn gridsearch(cli: &Cli, path: &Path) -> anyhow::Result<()> {
    let cfg = load(cli, path)?;
    let result = experiment::grid_search_thresholds(&cfg)?;
    if let Some(dir) = cfg.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let file = File::create(&cfg.output).with_context(|| format!("cannot create {}", cfg.output.display()))?;
    result.write_csv(BufWriter::new(file))?;
    let (b, e) = (result.best(), result.best_equal());
    println!(
        "best pair: gamma_high {} dB, gamma_low {} dB, accuracy {:.4}",
        b.high_db, b.low_db, b.mean_accuracy
    );
    println!("best single threshold: {} dB, accuracy {:.4}", e.high_db, e.mean_accuracy);
    println!("wrote {}", cfg.output.display());
    Ok(())
}

fn plan(sizes: &[usize], blocks: usize, scheme: PlanScheme) -> anyhow::Result<()> {
    let plan = DistributedScheme::from(scheme).plan(sizes, blocks)?;
    plan.write_csv(sizes, io::stdout().lock())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => run(&cli, config),
        Command::Gridsearch { config } => gridsearch(&cli, config),
        Command::Plan { sizes, blocks, scheme } => plan(sizes, *blocks, *scheme),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("edgesim: {err}");
            let mut shown = err.to_string();
            for cause in err.chain().skip(1) {
                let text = match cause.downcast_ref::<Error>() {
                    Some(Error::Config(issues)) => issues.iter().map(|i| format!("  {i}\n")).collect(),
                    _ => format!("  {cause}\n"),
                };
                if !shown.contains(text.trim()) {
                    eprint!("{text}");
                    shown.push_str(&text);
                }
            }
            let config_error = err.chain().any(|e| matches!(e.downcast_ref::<Error>(), Some(Error::Config(_))));
            if config_error {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
