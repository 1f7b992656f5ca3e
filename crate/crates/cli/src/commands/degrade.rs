//! Seeded degradation of a directory of PNGs.
//!
//! Files under `ir/` get the infrared protocol (Gaussian then stripe noise),
//! files under `vi/` the visible one (gamma darkening). Without those
//! subdirectories every PNG is treated as infrared. File `i` in sorted order
//! draws its spec from stream `i` of the seeded generator, so results do not
//! depend on `--jobs`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use irfuse_core::config::ProjectConfig;
use irfuse_core::imaging::{load_png, save_png, DegradationSpec, StripeOrientation};
use irfuse_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{io_err, par_map};
use crate::{DegradeArgs, Orientation};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum Protocol {
    Infrared,
    Visible,
}

#[derive(Serialize)]
struct Entry {
    file: String,
    protocol: Protocol,
    spec: DegradationSpec,
}

#[derive(Serialize)]
struct Manifest {
    seed: u64,
    sigma_range: [f64; 2],
    stripe_range: [f64; 2],
    files: Vec<Entry>,
}

struct Job {
    rel: String,
    src: PathBuf,
    protocol: Protocol,
}

struct Settings {
    seed: u64,
    sigma_range: [f64; 2],
    stripe_range: [f64; 2],
    orientation: StripeOrientation,
    gamma: f64,
}

fn settings(a: &DegradeArgs) -> Result<Settings> {
    let cfg = match &a.config {
        Some(p) => ProjectConfig::load(p)?,
        None => ProjectConfig::default(),
    };
    let s = Settings {
        seed: a.seed.unwrap_or(cfg.seed),
        sigma_range: a.sigma_range.unwrap_or(cfg.train.sigma_range),
        stripe_range: a.stripe_range.unwrap_or(cfg.train.stripe_range),
        orientation: match a.orientation {
            Some(Orientation::Vertical) => StripeOrientation::Vertical,
            Some(Orientation::Horizontal) => StripeOrientation::Horizontal,
            None => cfg.degradation.stripe_orientation,
        },
        gamma: a.gamma.unwrap_or(cfg.degradation.lowlight_gamma),
    };
    for (name, [lo, hi]) in [("sigma", s.sigma_range), ("stripe", s.stripe_range)] {
        if !(0.0 <= lo && lo <= hi && hi <= 30.0) {
            return Err(Error::InvalidInput(format!(
                "{name} range must satisfy 0 <= lo <= hi <= 30, got {lo},{hi}"
            )));
        }
    }
    if !(s.gamma >= 1.0 && s.gamma.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "gamma must be >= 1, got {}",
            s.gamma
        )));
    }
    Ok(s)
}

fn pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        if path.is_file()
            && path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        {
            out.push(path);
        }
    }
    Ok(out)
}

fn jobs_for(input: &Path) -> Result<Vec<Job>> {
    let (ir, vi) = (input.join("ir"), input.join("vi"));
    let mut jobs = Vec::new();
    let mut add = |dir: &Path, prefix: &str, protocol: Protocol| -> Result<()> {
        for src in pngs(dir)? {
            let name = src
                .file_name()
                .expect("file name")
                .to_string_lossy()
                .into_owned();
            let rel = if prefix.is_empty() {
                name
            } else {
                format!("{prefix}/{name}")
            };
            jobs.push(Job { rel, src, protocol });
        }
        Ok(())
    };
    if ir.is_dir() || vi.is_dir() {
        if ir.is_dir() {
            add(&ir, "ir", Protocol::Infrared)?;
        }
        if vi.is_dir() {
            add(&vi, "vi", Protocol::Visible)?;
        }
    } else {
        add(input, "", Protocol::Infrared)?;
    }
    jobs.sort_by(|a, b| a.rel.cmp(&b.rel));
    if jobs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no PNG images in {}",
            input.display()
        )));
    }
    Ok(jobs)
}

fn draw(s: &Settings, index: u64) -> DegradationSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    rng.set_stream(index);
    DegradationSpec {
        gaussian_sigma: rng.random_range(s.sigma_range[0]..=s.sigma_range[1]),
        stripe_intensity: rng.random_range(s.stripe_range[0]..=s.stripe_range[1]),
        stripe_orientation: s.orientation,
        lowlight_gamma: s.gamma,
        seed: rng.random(),
    }
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

pub fn run(a: &DegradeArgs, jobs: usize) -> Result<ExitCode> {
    let s = settings(a)?;
    if !a.input.is_dir() {
        return Err(io_err(&a.input, "not a readable directory"));
    }
    if same_dir(&a.input, &a.out) {
        return Err(Error::InvalidInput(
            "output directory must differ from the input".into(),
        ));
    }
    let work = jobs_for(&a.input)?;
    let specs: Vec<DegradationSpec> = (0..work.len() as u64).map(|i| draw(&s, i)).collect();

    let mut created_dirs = Vec::new();
    for dir in std::iter::once(a.out.clone()).chain(
        work.iter()
            .filter_map(|j| a.out.join(&j.rel).parent().map(Path::to_path_buf)),
    ) {
        if !dir.exists() {
            std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
            created_dirs.push(dir);
        }
    }
    let indexed: Vec<(&Job, &DegradationSpec)> = work.iter().zip(&specs).collect();
    let results = par_map(jobs, &indexed, |(job, spec)| -> Result<PathBuf> {
        let img = load_png(&job.src)?;
        let out = match job.protocol {
            Protocol::Infrared => spec.apply_infrared(&img)?,
            Protocol::Visible => spec.apply_visible(&img)?,
        };
        let dst = a.out.join(&job.rel);
        save_png(&out, &dst)?;
        Ok(dst)
    })?;
    let manifest_path = a.out.join(MANIFEST);
    let mut written = Vec::new();
    let mut failure = None;
    for r in results {
        match r {
            Ok(p) => written.push(p),
            Err(e) => failure = failure.or(Some(e)),
        }
    }
    let outcome = match failure {
        Some(e) => Err(e),
        None => {
            let manifest = Manifest {
                seed: s.seed,
                sigma_range: s.sigma_range,
                stripe_range: s.stripe_range,
                files: work
                    .iter()
                    .zip(&specs)
                    .map(|(j, spec)| Entry {
                        file: j.rel.clone(),
                        protocol: j.protocol,
                        spec: spec.clone(),
                    })
                    .collect(),
            };
            let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
            std::fs::write(&manifest_path, text).map_err(|e| io_err(&manifest_path, e))
        }
    };
    if let Err(e) = outcome {
        // leave nothing half-written behind
        for p in written.iter().chain(std::iter::once(&manifest_path)) {
            let _ = std::fs::remove_file(p);
        }
        for d in created_dirs.iter().rev() {
            let _ = std::fs::remove_dir(d);
        }
        return Err(e);
    }
    println!("degraded {} images into {}", work.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}
