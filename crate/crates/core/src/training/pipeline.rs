//! File-level training driver: dataset, checkpoints and CSV loss logs under
//! the output directory.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use crate::config::{Paths, ProjectConfig};
use crate::error::{Error, Result};
use crate::training::checkpoint::Checkpoint;
use crate::training::dataset::build_dataset;
use crate::training::trainer::{Stage1Data, Stage2Data, Trainer, STAGE1_COLUMNS, STAGE2_COLUMNS};

pub const STAGE1_CHECKPOINT: &str = "checkpoint_stage1.ddfu";
pub const FINAL_CHECKPOINT: &str = "checkpoint.ddfu";
pub const STAGE1_LOG: &str = "stage1_log.csv";
pub const STAGE2_LOG: &str = "stage2_log.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
    All,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageSummary {
    pub first_step: u64,
    pub steps_run: usize,
    pub first_loss: f64,
    pub last_loss: f64,
    pub checkpoint: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub stage1: Option<StageSummary>,
    pub stage2: Option<StageSummary>,
}

/// Appends rows to a CSV log; a new (or truncated) file gets the header.
struct LossLog {
    path: PathBuf,
    w: csv::Writer<std::fs::File>,
}

impl LossLog {
    fn open(path: PathBuf, header: &[&str], append: bool) -> Result<Self> {
        let append = append && path.exists();
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut log = LossLog {
            w: csv::Writer::from_writer(file),
            path,
        };
        if !append {
            log.write(header)?;
        }
        Ok(log)
    }

    fn write<S: AsRef<[u8]>>(&mut self, fields: &[S]) -> Result<()> {
        self.w
            .write_record(fields)
            .map_err(|e| Error::io(&self.path, e))?;
        self.w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn summary(first_step: u64, losses: &[f64], checkpoint: PathBuf) -> StageSummary {
    StageSummary {
        first_step,
        steps_run: losses.len(),
        first_loss: losses.first().copied().unwrap_or(f64::NAN),
        last_loss: losses.last().copied().unwrap_or(f64::NAN),
        checkpoint,
    }
}

/// Runs the requested stage(s). With `resume`, a stage continues from its
/// own checkpoint when one exists, appending to its log and continuing the
/// step numbering; each invocation runs the configured number of steps.
/// Stage 2 alone starts from the stage-1 checkpoint.
pub fn run_training(
    cfg: &ProjectConfig,
    paths: &Paths,
    stage: Stage,
    resume: bool,
) -> Result<TrainReport> {
    cfg.validate()?;
    let samples = build_dataset(&paths.train_dir, &cfg.train, cfg.seed)?;
    let out = &paths.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let ck1 = out.join(STAGE1_CHECKPOINT);
    let ck2 = out.join(FINAL_CHECKPOINT);
    let mut report = TrainReport::default();
    let mut handoff = None;

    if matches!(stage, Stage::One | Stage::All) {
        let mut t = if resume && ck1.exists() {
            Trainer::from_checkpoint(&Checkpoint::load(&ck1)?, cfg)?
        } else {
            Trainer::new(cfg)?
        };
        let first = t.steps[0];
        let data = Stage1Data::build(&t.model, &samples)?;
        let mut log = LossLog::open(out.join(STAGE1_LOG), &STAGE1_COLUMNS, first > 0)?;
        let mut losses = Vec::new();
        t.train_stage1(&data, cfg.train.stage1_steps, |row| {
            losses.push(row.terms.total);
            log.write(&row.fields())
        })?;
        t.checkpoint().save(&ck1)?;
        report.stage1 = Some(summary(first, &losses, ck1.clone()));
        handoff = Some(t);
    }

    if matches!(stage, Stage::Two | Stage::All) {
        let mut t = match handoff {
            Some(t) => t,
            None if resume && ck2.exists() => {
                Trainer::from_checkpoint(&Checkpoint::load(&ck2)?, cfg)?
            }
            None => Trainer::from_checkpoint(&load_stage1(&ck1)?, cfg)?,
        };
        let first = t.steps[1];
        let data = Stage2Data::build(&t.model, &samples)?;
        let mut log = LossLog::open(out.join(STAGE2_LOG), &STAGE2_COLUMNS, first > 0)?;
        let mut losses = Vec::new();
        t.train_stage2(&data, cfg.train.stage2_steps, |row| {
            losses.push(row.terms.total);
            log.write(&row.fields())
        })?;
        t.checkpoint().save(&ck2)?;
        report.stage2 = Some(summary(first, &losses, ck2));
    }
    Ok(report)
}

fn load_stage1(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::io(
            path,
            "stage-1 checkpoint not found; run stage 1 first",
        ));
    }
    Checkpoint::load(path)
}
