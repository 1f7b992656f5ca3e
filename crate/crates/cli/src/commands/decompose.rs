use std::process::ExitCode;

use irfuse_core::decomposition::{
    decompose_frequency, decompose_retinex, DEFAULT_ILLUMINATION_FLOOR,
};
use irfuse_core::imaging::{load_png, save_png, ImageF};
use irfuse_core::{Error, Result};
use ndarray::Array2;
use serde::Serialize;

use super::{create_dir, io_err};
use crate::{DecomposeArgs, Mode};

/// Both components must recompose the input this closely before rescaling.
const RECON_TOLERANCE: f64 = 1e-6;

#[derive(Serialize)]
struct Component {
    file: String,
    /// PNG value 0 maps to `min`, 255 to `max`.
    min: f64,
    max: f64,
}

#[derive(Serialize)]
struct Sidecar {
    source: String,
    mode: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    illumination_floor: Option<f64>,
    reconstruction_max_error: f64,
    components: Vec<Component>,
}

fn rescaled(plane: &Array2<f64>) -> Result<(ImageF, f64, f64)> {
    let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let img = if span > 0.0 {
        ImageF::from_plane(plane.mapv(|v| (v - lo) / span))?
    } else {
        ImageF::from_plane(plane.mapv(|_| 0.0))?
    };
    Ok((img, lo, hi))
}

pub fn run(a: &DecomposeArgs) -> Result<ExitCode> {
    let y = load_png(&a.image)?.luma();
    let input = y.plane(0);
    let (pair, names, recomposed) = match a.mode {
        Mode::Dct => {
            let p = decompose_frequency(input, a.tau)?;
            let sum = &p.first + &p.second;
            (p, ["low", "high"], sum)
        }
        Mode::Retinex => {
            let p = decompose_retinex(&y, a.sigma, DEFAULT_ILLUMINATION_FLOOR)?;
            let prod = &p.first * &p.second;
            (p, ["reflectance", "illumination"], prod)
        }
    };
    let err = (&recomposed - &input)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if !(err < RECON_TOLERANCE) {
        return Err(Error::Numeric(format!(
            "components recompose the input only to {err:e}"
        )));
    }
    create_dir(&a.out)?;
    let stem = a
        .image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let mut components = Vec::new();
    for (plane, name) in [&pair.first, &pair.second].into_iter().zip(names) {
        let (img, min, max) = rescaled(plane)?;
        let file = format!("{stem}_{name}.png");
        save_png(&img, a.out.join(&file))?;
        components.push(Component { file, min, max });
    }
    let dct = a.mode == Mode::Dct;
    let sidecar = Sidecar {
        source: a.image.display().to_string(),
        mode: if dct { "dct" } else { "retinex" },
        tau: dct.then_some(a.tau),
        sigma: (!dct).then_some(a.sigma),
        illumination_floor: (!dct).then_some(DEFAULT_ILLUMINATION_FLOOR),
        reconstruction_max_error: err,
        components,
    };
    let path = a.out.join(format!("{stem}_{}.json", sidecar.mode));
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
    for c in &sidecar.components {
        println!(
            "{} [{:.6}, {:.6}]",
            a.out.join(&c.file).display(),
            c.min,
            c.max
        );
    }
    Ok(ExitCode::SUCCESS)
}
