use std::process::ExitCode;

use irfuse_core::training::synth::write_smoke_set;
use irfuse_core::Result;

use crate::SynthArgs;

pub fn run(a: &SynthArgs) -> Result<ExitCode> {
    let names = write_smoke_set(&a.out, a.count, a.size, a.seed)?;
    println!("wrote {} pairs to {}", names.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}
