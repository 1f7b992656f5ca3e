use std::process::ExitCode;

use irfuse_core::config::ProjectConfig;
use irfuse_core::training::{run_training, Stage};
use irfuse_core::Result;

use crate::{StageArg, TrainArgs};

pub fn run(a: &TrainArgs) -> Result<ExitCode> {
    let cfg = ProjectConfig::load(&a.config)?;
    let base = a
        .config
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(std::path::Path::new("."));
    let paths = cfg.paths.resolved(base);
    let stage = match a.stage {
        StageArg::One => Stage::One,
        StageArg::Two => Stage::Two,
        StageArg::All => Stage::All,
    };
    let report = run_training(&cfg, &paths, stage, a.resume)?;
    for (label, s) in [("stage 1", &report.stage1), ("stage 2", &report.stage2)] {
        if let Some(s) = s {
            println!(
                "{label}: steps {}..{} loss {:.6} -> {:.6}, checkpoint {}",
                s.first_step,
                s.first_step + s.steps_run as u64 - 1,
                s.first_loss,
                s.last_loss,
                s.checkpoint.display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
