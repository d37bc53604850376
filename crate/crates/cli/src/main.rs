use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rmtssl_cli::experiments::{cmd_expansion_check, cmd_mnist_prepare, cmd_simulate, cmd_sweep_alpha, cmd_tune};
use rmtssl_cli::{CliResult, Experiment, ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "rmtssl", version, about = "Semi-supervised graph learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scores and metrics at the configured α.
    Simulate(Common),
    /// Empirical and predicted accuracy over an α grid.
    SweepAlpha(Common),
    /// Estimated balance point against α = −1 and the oracle α.
    Tune(Common),
    /// Operator norms of the kernel matrix expansion.
    ExpansionCheck(Common),
    /// Samples an IDX split and records the chosen rows.
    MnistPrepare(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
}

impl Common {
    fn experiment(&self) -> CliResult<Experiment> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        cfg.apply(&Overrides { seed: self.seed, out: self.out.clone(), trials: self.trials });
        Experiment::new(cfg)
    }
}

type Runner = fn(&Experiment) -> CliResult<Vec<PathBuf>>;

fn run(cli: Cli) -> CliResult<Vec<PathBuf>> {
    let (common, cmd): (&Common, Runner) = match &cli.command {
        Command::Simulate(c) => (c, cmd_simulate),
        Command::SweepAlpha(c) => (c, cmd_sweep_alpha),
        Command::Tune(c) => (c, cmd_tune),
        Command::ExpansionCheck(c) => (c, cmd_expansion_check),
        Command::MnistPrepare(c) => (c, cmd_mnist_prepare),
    };
    cmd(&common.experiment()?)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
