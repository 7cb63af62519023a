//! Command-line front end: run a campaign, a budget sweep, or the check suite.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use rollout_budget::campaign::metrics::render;
use rollout_budget::campaign::{run_campaign, sweep, write_report, ConfigFile, MetricsFormat};
use rollout_budget::verify::{run_suite_with, write_results, Scale, VerifyOptions};

#[derive(Parser)]
#[command(
    name = "rollout-budget",
    version,
    about = "Budgeted rollout allocation and abort-gate simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one campaign and write its per-step metrics.
    Simulate(RunArgs),
    /// Run one campaign per budget fraction and print a comparison.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated budget fractions.
        #[arg(long, value_delimiter = ',', default_value = "1.0,0.5,0.25")]
        fractions: Vec<f64>,
    },
    /// Run the acceptance check suite.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Smaller instance counts and Monte-Carlo sizes.
        #[arg(long)]
        quick: bool,
        /// Where to write the JSON results.
        #[arg(long, default_value = "verify-results.json")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    budget_fraction: Option<f64>,
    #[arg(long)]
    eps_abort: Option<f64>,
    /// Metrics file; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "jsonl", value_parser = parse_format)]
    format: MetricsFormat,
}

fn parse_format(s: &str) -> std::result::Result<MetricsFormat, String> {
    s.parse().map_err(|e: rollout_budget::Error| e.to_string())
}

impl RunArgs {
    fn config_file(&self) -> Result<ConfigFile> {
        let mut file = match &self.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        if let Some(seed) = self.seed {
            file.campaign.master_seed = seed;
        }
        if let Some(steps) = self.steps {
            file.campaign.steps = steps;
        }
        if let Some(b) = self.budget_fraction {
            file.campaign.budget_fraction = b;
        }
        if let Some(eps) = self.eps_abort {
            file.gate.eps_abort = eps;
        }
        Ok(file)
    }
}

/// `runs/sweep.jsonl` with tag `b0.5` becomes `runs/sweep-b0.5.jsonl`.
fn tagged_path(path: &Path, tag: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}-{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}-{tag}"),
    };
    path.with_file_name(name)
}

fn simulate(args: &RunArgs) -> Result<()> {
    let config = args.config_file()?.resolve()?;
    let report = run_campaign(&config)?;
    match &args.out {
        Some(path) => {
            let summary = write_report(&report, path, args.format)?;
            let s = &report.summary;
            println!(
                "{} steps, {:.0} tokens/step (budget {:.0}), abort rate {:.3}, final n range {}",
                s.steps,
                s.mean_tokens_per_step,
                s.budget,
                s.mean_abort_rate,
                match (
                    s.final_histogram.keys().next(),
                    s.final_histogram.keys().next_back()
                ) {
                    (Some(lo), Some(hi)) => format!("{lo}-{hi}"),
                    _ => "-".into(),
                }
            );
            println!("metrics: {}", path.display());
            println!("summary: {}", summary.display());
        }
        None => print!("{}", render(&report.metrics, args.format)),
    }
    Ok(())
}

fn run_sweep(args: &RunArgs, fractions: &[f64]) -> Result<()> {
    if fractions.is_empty() {
        bail!("--fractions needs at least one value");
    }
    let config = args.config_file()?.resolve()?;
    let report = sweep(&config, fractions)?;
    print!("{report}");
    if let Some(path) = &args.out {
        for run in &report.runs {
            let p = tagged_path(path, &format!("b{}", run.fraction));
            write_report(&run.report, &p, args.format)
                .with_context(|| format!("writing sweep run {}", run.fraction))?;
            println!("metrics: {}", p.display());
        }
    }
    Ok(())
}

fn verify(seed: u64, quick: bool, out: &Path) -> Result<bool> {
    let opts = VerifyOptions {
        seed,
        scale: if quick { Scale::Quick } else { Scale::Full },
    };
    let results = run_suite_with(&opts, |r| println!("{r}"));
    let passed = results.iter().filter(|r| r.passed).count();
    println!("{passed}/{} checks passed", results.len());
    write_results(out, &opts, &results)?;
    println!("results: {}", out.display());
    Ok(passed == results.len())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate(args) => simulate(args).map(|_| true),
        Command::Sweep { run, fractions } => run_sweep(run, fractions).map(|_| true),
        Command::Verify { seed, quick, out } => verify(*seed, *quick, out),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
