use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use semnerf::pipeline::{ExperimentConfig, Mode, Pipeline};
use semnerf::Error;

#[derive(Parser)]
#[command(name = "s3", about = "Sparse-view semantic radiance fields with verified self-training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML). Omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's mode.
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "s3-out")]
    out: PathBuf,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    BuildScene,
    TrainTeacher,
    RenderNovel,
    Verify,
    TrainStudent,
    Evaluate,
    RunAll,
}

fn run(cli: &Cli) -> semnerf::Result<()> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(mode) = cli.mode {
        config.mode = mode;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let mode = config.mode;
    let p = Pipeline::open(config, &cli.out)?;
    match cli.command {
        Command::BuildScene => p.build_scene()?,
        Command::TrainTeacher => p.train_teacher()?,
        Command::RenderNovel => p.render_novel()?,
        Command::Verify => p.verify()?,
        Command::TrainStudent => p.train_student(mode)?,
        Command::Evaluate | Command::RunAll => {
            let report = if matches!(cli.command, Command::RunAll) { p.run_all(mode)? } else { p.evaluate(mode)? };
            print!("{}", report.table());
            print!("{}", p.ablation_table()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::Diverged { .. } => 3,
                _ => 1,
            })
        }
    }
}
