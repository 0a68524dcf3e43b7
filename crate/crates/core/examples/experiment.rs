//! Runs the teacher/student experiment for several modes in one directory
//! and prints the ablation table. Stages already on disk are reused.
//!
//! cargo run --release --example experiment -- [config.toml] [out_dir] [mode ...]

use std::path::PathBuf;

use semnerf::pipeline::{ExperimentConfig, Mode, Pipeline};

fn main() -> semnerf::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let config = match args.first() {
        Some(p) => ExperimentConfig::load(p.as_ref())?,
        None => ExperimentConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.toml").as_ref())?,
    };
    let out = PathBuf::from(args.get(1).map_or("experiment-out", String::as_str));
    let modes: Vec<Mode> = if args.len() > 2 {
        args[2..].iter().map(|m| m.parse()).collect::<semnerf::Result<_>>()?
    } else {
        vec![Mode::TeacherOnly, Mode::StudentSupervisionLevel, Mode::StudentFull]
    };

    let pipeline = Pipeline::open(config, &out)?;
    for mode in modes {
        let r = pipeline.run_all(mode)?;
        println!("{mode}: median PSNR {:.2}, sem acc {:.4}", r.median_psnr, r.sem_accuracy);
    }
    print!("{}", pipeline.ablation_table()?);
    Ok(())
}
