use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use markov_fht::harness::{self, ExperimentConfig, HistogramSource};
use markov_fht::{Error, Result};

#[derive(Parser)]
#[command(name = "markov-fht", version, about = "Markov operator estimation and Kolmogorov equation solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Trajectories,
    Operator,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trajectories and write trajectories.trj.
    Simulate(Common),
    /// Estimate the Markov operator from trajectories.trj.
    Estimate(Common),
    /// Write backward solutions for the validation terminals.
    SolveBackward(Common),
    /// Push the uniform initial density forward.
    SolveForward(Common),
    /// Compare backward solutions with Monte-Carlo references.
    ValidateMc(Common),
    /// Write the propensity ratio along the diagonal.
    IotaCurve(Common),
    /// Write x and y pair histograms.
    MarginalHist {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "trajectories")]
        source: Source,
    },
    /// Run every stage in order.
    Run(Common),
}

fn resolve(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(out) = &c.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    if let Some(n) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let (stage, common) = match &cli.command {
        Command::Simulate(c) => ("simulate", c),
        Command::Estimate(c) => ("estimate", c),
        Command::SolveBackward(c) => ("solve-backward", c),
        Command::SolveForward(c) => ("solve-forward", c),
        Command::ValidateMc(c) => ("validate-mc", c),
        Command::IotaCurve(c) => ("iota-curve", c),
        Command::MarginalHist { common, .. } => ("marginal-hist", common),
        Command::Run(c) => ("run", c),
    };
    let cfg = resolve(common).map_err(|e| e.in_stage("config"))?;
    let tag = |e: Error| e.in_stage(stage);
    match cli.command {
        Command::Simulate(_) => {
            let b = harness::run_simulate(&cfg).map_err(tag)?;
            println!("{} trajectories, {} snapshots", b.num_trajectories(), b.num_snapshots());
        }
        Command::Estimate(_) => {
            let op = harness::run_estimate(&cfg).map_err(tag)?;
            println!("ranks {:?}", op.joint().ranks());
        }
        Command::SolveBackward(_) => {
            for p in harness::run_solve_backward(&cfg).map_err(tag)? {
                println!("{}", p.display());
            }
        }
        Command::SolveForward(_) => {
            println!("{}", harness::run_solve_forward(&cfg).map_err(tag)?.display());
        }
        Command::ValidateMc(_) => {
            for r in harness::run_validate(&cfg).map_err(tag)? {
                print_report(&r);
            }
        }
        Command::IotaCurve(_) => {
            print!("{}", harness::iota_csv(&harness::run_iota(&cfg).map_err(tag)?));
        }
        Command::MarginalHist { source, .. } => {
            let source = match source {
                Source::Trajectories => HistogramSource::Trajectories,
                Source::Operator => HistogramSource::Operator,
            };
            for p in harness::run_marginal_hist(&cfg, source).map_err(tag)? {
                println!("{}", p.display());
            }
        }
        Command::Run(_) => {
            let s = harness::run_pipeline(&cfg)?;
            for r in &s.validation {
                print_report(r);
            }
            print!("{}", harness::iota_csv(&s.iota));
        }
    }
    Ok(())
}

fn print_report(r: &harness::ValidationReport) {
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "{}: mean rel err {} median {} (raw {} / {}), {}/{} within tolerance, {} degenerate",
        r.terminal.name(),
        fmt(r.mean_rel_error),
        fmt(r.median_rel_error),
        fmt(r.raw_mean_rel_error),
        fmt(r.raw_median_rel_error),
        r.pass_count,
        r.points.len(),
        r.degenerate_count
    );
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
