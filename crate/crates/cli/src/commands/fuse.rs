use std::process::ExitCode;

use irfuse_core::imaging::{load_png, save_png};
use irfuse_core::model::fuse_image;
use irfuse_core::training::dataset::pair_files;
use irfuse_core::training::Checkpoint;
use irfuse_core::Result;

use super::{create_dir, par_map};
use crate::FuseArgs;

pub fn run(a: &FuseArgs, jobs: usize) -> Result<ExitCode> {
    let model = Checkpoint::load(&a.checkpoint)?.restore_model()?;
    let pairs = pair_files(&[&a.ir, &a.vi])?;
    create_dir(&a.out)?;
    let results = par_map(jobs, &pairs, |(name, files)| -> Result<()> {
        let fused = fuse_image(&model, &load_png(&files[0])?, &load_png(&files[1])?)?;
        save_png(&fused, a.out.join(name))
    })?;
    results.into_iter().collect::<Result<Vec<()>>>()?;
    println!("fused {} pairs into {}", pairs.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}
