use std::process::ExitCode;

use irfuse_core::imaging::{load_png, ImageF};
use irfuse_core::metrics::report::{evaluate_triple, MetricReport, PairMetrics};
use irfuse_core::training::dataset::pair_files;
use irfuse_core::{Error, Result};

use super::{io_err, par_map};
use crate::EvaluateArgs;

type Triple = (String, ImageF, ImageF, ImageF);

pub fn run(a: &EvaluateArgs, jobs: usize) -> Result<ExitCode> {
    let files = pair_files(&[&a.ir, &a.vi, &a.fused])?;
    let loaded = par_map(jobs, &files, |(name, p)| -> Result<Triple> {
        Ok((
            name.clone(),
            load_png(&p[0])?,
            load_png(&p[1])?,
            load_png(&p[2])?,
        ))
    })?;
    let triples = loaded.into_iter().collect::<Result<Vec<_>>>()?;
    // misalignment is an input error for the whole run, not a per-row failure
    let misaligned: Vec<&str> = triples
        .iter()
        .filter(|(_, ir, vi, f)| !(ir.same_size(vi) && ir.same_size(f)))
        .map(|t| t.0.as_str())
        .collect();
    if !misaligned.is_empty() {
        return Err(Error::InvalidInput(format!(
            "misaligned triples: {}",
            misaligned.join(", ")
        )));
    }
    let rows = par_map(jobs, &triples, |(name, ir, vi, f)| PairMetrics {
        pair: name.clone(),
        values: evaluate_triple(ir, vi, f).map_err(|e| e.to_string()),
    })?;
    let report = MetricReport::from_rows(rows);
    std::fs::write(&a.out, report.to_csv()).map_err(|e| io_err(&a.out, e))?;
    print!("{}", report.table());
    if report.failures() > 0 {
        eprintln!("{} pair(s) could not be evaluated", report.failures());
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}
