use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use diffmia_cli::{CliError, CliResult, Pipeline, RunConfig, Subset};

#[derive(Parser)]
#[command(name = "diffmia", about = "Membership inference against diffusion models", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "diffmia.toml")]
    config: PathBuf,
    /// Workspace directory; overrides `paths.workspace` in the config.
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,
    /// Rebuild artifacts whose provenance does not match the config.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset and its member/public/holdout split.
    GenData,
    /// Train the diffusion model on the members.
    TrainDm {
        /// Not supported: training is single-shot.
        #[arg(long)]
        resume: bool,
    },
    /// Compute t-error score caches.
    Score {
        #[arg(long, value_enum, default_value_t = SubsetArg::All)]
        subset: SubsetArg,
    },
    /// Train the primary attacker bag and write per-example decisions.
    Attack,
    /// TPR@FPR tables, ROC curves, calibration, and histograms.
    Evaluate,
    /// Bag-size and trunk-size sweeps and verdict variance.
    Ablate,
    /// Time score computation and attacker training.
    BenchPrep,
}

#[derive(Clone, Copy, ValueEnum)]
enum SubsetArg {
    Members,
    Public,
    Holdout,
    All,
}

fn run(cli: Cli) -> CliResult<()> {
    if let Command::TrainDm { resume: true } = cli.command {
        return Err(CliError::validation(
            "train-dm --resume is not supported; training runs start to finish in one invocation",
        ));
    }
    let cfg = RunConfig::load(&cli.config)?;
    let p = Pipeline::open(cfg, cli.workspace.as_deref(), cli.force)?;
    match cli.command {
        Command::GenData => println!("{}", p.gen_data()?),
        Command::TrainDm { .. } => println!("{}", p.train_dm()?),
        Command::Score { subset } => {
            let subsets: Vec<Subset> = match subset {
                SubsetArg::Members => vec![Subset::Members],
                SubsetArg::Public => vec![Subset::Public],
                SubsetArg::Holdout => vec![Subset::Holdout],
                SubsetArg::All => Subset::ALL.to_vec(),
            };
            for o in p.score(&subsets)? {
                println!("{o}");
            }
        }
        Command::Attack => println!("{}", p.attack()?),
        Command::Evaluate => {
            let r = p.evaluate()?;
            println!(
                "rank test: p = {:.3e}, P(member < holdout) = {:.3}",
                r.rank_test.p_value, r.rank_test.p_less
            );
            println!("{:<10} {:>8} {:>10} {:>8}", "attack", "fpr", "mean_tpr", "std");
            for row in &r.tpr_at_fpr {
                println!("{:<10} {:>8} {:>10.4} {:>8.4}", row.attack, row.fpr, row.mean_tpr, row.std_tpr);
            }
            println!("reports in {}", p.report_dir().join("evaluate").display());
        }
        Command::Ablate => {
            let r = p.ablate()?;
            for row in &r.sweep {
                println!(
                    "m = {:>2} width {:>4} fpr {:>7}: {:.4} ± {:.4}",
                    row.m, row.trunk_width, row.fpr, row.mean_tpr, row.std_tpr
                );
            }
            println!("reports in {}", p.report_dir().join("ablate").display());
        }
        Command::BenchPrep => {
            let r = p.bench_prep()?;
            println!("scoring  {:>10.3}s ({} examples)", r.scoring_seconds, r.scored_examples);
            println!("learning {:>10.3}s ({} attackers)", r.learning_seconds, r.bag_members);
            println!(
                "diffusion training {:.3}s; learning / training = {:.4}",
                r.diffusion_training_seconds, r.learning_fraction
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
