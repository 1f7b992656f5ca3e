//! Synthetic aligned scenes for smoke runs.
//!
//! Both modalities render the same soft-edged shapes, so their structure
//! agrees; infrared adds one warm target. The visible image is a low-light
//! rendering (`gamma = 2.2`) of a lightly tinted colour scene.

use std::path::Path;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{darken, save_png, ImageF};

pub const SMOKE_DARKEN: f64 = 2.2;

fn soft_disk(h: usize, w: usize, cy: f64, cx: f64, r: f64, edge: f64) -> Array2<f64> {
    Array2::from_shape_fn((h, w), |(y, x)| {
        let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
        1.0 / (1.0 + ((d - r) / edge).exp())
    })
}

/// `(infrared, visible)` scene number `index` of size `size x size`.
pub fn smoke_pair(index: u64, size: usize, seed: u64) -> Result<(ImageF, ImageF)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let s = size as f64;
    let (gy, gx) = (rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
    let mut lum = Array2::from_shape_fn((size, size), |(y, x)| {
        0.2 + gy * y as f64 / s + gx * x as f64 / s
    });
    let mut hue = Array2::<usize>::zeros((size, size));
    let shapes = rng.random_range(3..=5);
    for k in 0..shapes {
        let disk = soft_disk(
            size,
            size,
            rng.random_range(0.15..0.85) * s,
            rng.random_range(0.15..0.85) * s,
            rng.random_range(0.08..0.22) * s,
            rng.random_range(1.0..2.5),
        );
        let level = rng.random_range(0.45..0.85);
        lum.zip_mut_with(&disk, |l, &d| *l += d * (level - *l));
        hue.zip_mut_with(&disk, |h, &d| {
            if d > 0.5 {
                *h = k % 3 + 1
            }
        });
    }
    let warm = soft_disk(
        size,
        size,
        rng.random_range(0.2..0.8) * s,
        rng.random_range(0.2..0.8) * s,
        0.1 * s,
        1.5,
    );
    let ir = (&lum + &(warm * 0.15)).mapv(|v| v.clamp(0.0, 1.0));
    const TINTS: [[f64; 3]; 4] = [
        [1.0, 1.0, 1.0],
        [1.08, 0.98, 0.9],
        [0.92, 1.04, 0.96],
        [0.95, 0.97, 1.1],
    ];
    let rgb = Array3::from_shape_fn((3, size, size), |(c, y, x)| {
        (lum[(y, x)] * TINTS[hue[(y, x)]][c]).clamp(0.0, 1.0)
    });
    Ok((
        ImageF::from_plane(ir)?,
        darken(&ImageF::new(rgb)?, SMOKE_DARKEN)?,
    ))
}

/// Writes `count` pairs as `<dir>/ir/pair_NN.png` and `<dir>/vi/pair_NN.png`.
pub fn write_smoke_set(dir: &Path, count: usize, size: usize, seed: u64) -> Result<Vec<String>> {
    let (ir_dir, vi_dir) = (dir.join("ir"), dir.join("vi"));
    for d in [&ir_dir, &vi_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut names = Vec::with_capacity(count);
    for i in 0..count {
        let (ir, vi) = smoke_pair(i as u64, size, seed)?;
        let name = format!("pair_{i:02}.png");
        save_png(&ir, ir_dir.join(&name))?;
        save_png(&vi, vi_dir.join(&name))?;
        names.push(name);
    }
    Ok(names)
}
