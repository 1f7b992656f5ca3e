use std::process::ExitCode;

use irfuse_core::gradcheck::suite::{checks, default_options, CheckKind, SuiteCheck, TOLERANCE};
use irfuse_core::{Error, Result};

use crate::GradcheckArgs;

fn select(a: &GradcheckArgs) -> Result<Vec<SuiteCheck>> {
    let (name, kind) = match (&a.loss, &a.block) {
        (Some(n), _) => (n, CheckKind::Loss),
        (_, Some(n)) => (n, CheckKind::Block),
        _ => return Ok(checks()),
    };
    let all = checks();
    let known: Vec<&str> = all
        .iter()
        .filter(|c| c.kind == kind)
        .map(|c| c.name)
        .collect();
    let found = all
        .into_iter()
        .find(|c| c.kind == kind && c.name == name.as_str());
    found.map(|c| vec![c]).ok_or_else(|| {
        Error::InvalidInput(format!(
            "unknown check {name:?}; known: {}",
            known.join(", ")
        ))
    })
}

pub fn run(a: &GradcheckArgs) -> Result<ExitCode> {
    let opts = default_options();
    let mut failed = 0;
    for c in select(a)? {
        let r = c.run(&opts);
        let ok = r.passed(TOLERANCE);
        failed += usize::from(!ok);
        let kind = match c.kind {
            CheckKind::Loss => "loss",
            CheckKind::Block => "block",
        };
        println!(
            "{} {kind} {}: max_rel_error={:.3e} checked={} skipped_kinks={}",
            if ok { "PASS" } else { "FAIL" },
            c.name,
            r.max_rel_error,
            r.checked,
            r.skipped_kinks
        );
    }
    if failed > 0 {
        eprintln!("{failed} check(s) exceeded relative error {TOLERANCE:e}");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}
