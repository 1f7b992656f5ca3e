//! Training samples: aligned crops with a seeded degradation draw each.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::error::{ensure, Error, Result};
use crate::imaging::{load_png, reference_enhance, DegradationSpec, ImageF};

#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub name: String,
    /// Single-channel infrared crop before corruption.
    pub ir_clean: ImageF,
    /// `spec.apply_infrared(ir_clean)`.
    pub ir_degraded: ImageF,
    /// `spec.apply_visible(source crop)`.
    pub vi_degraded_rgb: ImageF,
    pub vi_reference_rgb: ImageF,
    pub spec: DegradationSpec,
    /// Top-left corner of the crop in the source pair.
    pub origin: (usize, usize),
}

/// Files with identical names across `dirs`, sorted by name. Every name
/// present in only some of the directories is reported.
pub fn pair_files(dirs: &[&Path]) -> Result<Vec<(String, Vec<PathBuf>)>> {
    let mut by_name: BTreeMap<String, Vec<Option<PathBuf>>> = BTreeMap::new();
    for (i, dir) in dirs.iter().enumerate() {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(*dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(*dir, e))?.path();
            let is_png = path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("png"));
            if !path.is_file() || !is_png {
                continue;
            }
            let name = path
                .file_name()
                .expect("file name")
                .to_string_lossy()
                .into_owned();
            by_name
                .entry(name)
                .or_insert_with(|| vec![None; dirs.len()])[i] = Some(path);
        }
    }
    let mut offenders = Vec::new();
    let mut pairs = Vec::new();
    for (name, slots) in by_name {
        if slots.iter().all(Option::is_some) {
            pairs.push((name, slots.into_iter().map(Option::unwrap).collect()));
        } else {
            let missing: Vec<String> = dirs
                .iter()
                .zip(&slots)
                .filter(|(_, s)| s.is_none())
                .map(|(d, _)| d.display().to_string())
                .collect();
            offenders.push(format!("{name} (missing in {})", missing.join(", ")));
        }
    }
    ensure!(
        offenders.is_empty(),
        Dataset,
        "unpaired files: {}",
        offenders.join("; ")
    );
    ensure!(!pairs.is_empty(), Dataset, "no PNG pairs found");
    Ok(pairs)
}

/// Loads `<dir>/ir/*.png` and `<dir>/vi/*.png` pairs and draws samples.
pub fn build_dataset(dir: &Path, cfg: &TrainConfig, seed: u64) -> Result<Vec<SamplePair>> {
    let pairs = pair_files(&[&dir.join("ir"), &dir.join("vi")])?;
    let mut loaded = Vec::with_capacity(pairs.len());
    for (name, paths) in pairs {
        loaded.push((name, load_png(&paths[0])?, load_png(&paths[1])?));
    }
    build_samples(&loaded, cfg, seed)
}

/// `samples_per_pair` samples per source pair, in pair order.
pub fn build_samples(
    pairs: &[(String, ImageF, ImageF)],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<SamplePair>> {
    let mut out = Vec::with_capacity(pairs.len() * cfg.samples_per_pair);
    for (p, (name, ir, vi)) in pairs.iter().enumerate() {
        for k in 0..cfg.samples_per_pair {
            out.push(draw_sample(
                name,
                ir,
                vi,
                cfg,
                seed,
                (p * cfg.samples_per_pair + k) as u64,
            )?);
        }
    }
    Ok(out)
}

/// One sample; a pure function of the pair, the config, `seed` and `index`.
pub fn draw_sample(
    name: &str,
    ir: &ImageF,
    vi: &ImageF,
    cfg: &TrainConfig,
    seed: u64,
    index: u64,
) -> Result<SamplePair> {
    ensure!(
        ir.same_size(vi),
        Dataset,
        "{name}: infrared {}x{} and visible {}x{} are not aligned",
        ir.height(),
        ir.width(),
        vi.height(),
        vi.width()
    );
    let c = cfg.crop_size;
    ensure!(
        ir.height() >= c && ir.width() >= c,
        Dataset,
        "{name}: {}x{} is smaller than the {c}px crop",
        ir.height(),
        ir.width()
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let top = rng.random_range(0..=ir.height() - c);
    let left = rng.random_range(0..=ir.width() - c);
    let [s0, s1] = cfg.sigma_range;
    let [t0, t1] = cfg.stripe_range;
    let spec = DegradationSpec {
        gaussian_sigma: rng.random_range(s0..=s1),
        stripe_intensity: rng.random_range(t0..=t1),
        stripe_orientation: cfg.stripe_orientation,
        lowlight_gamma: cfg.visible_darken_gamma.unwrap_or(1.0),
        seed: rng.random(),
    };
    let ir_clean = ir.luma().crop(top, left, c, c)?;
    let vi_src = vi.crop(top, left, c, c)?;
    Ok(SamplePair {
        name: name.to_string(),
        ir_degraded: spec.apply_infrared(&ir_clean)?,
        vi_degraded_rgb: spec.apply_visible(&vi_src)?,
        vi_reference_rgb: reference_enhance(&vi_src)?,
        ir_clean,
        spec,
        origin: (top, left),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::save_png;
    use ndarray::Array3;

    fn gradient(c: usize, h: usize, w: usize, k: f64) -> ImageF {
        ImageF::new(Array3::from_shape_fn((c, h, w), |(ch, y, x)| {
            (0.2 + k * (y * w + x) as f64 / (h * w) as f64 + 0.05 * ch as f64).min(1.0)
        }))
        .unwrap()
    }

    fn cfg(crop: usize) -> TrainConfig {
        TrainConfig {
            crop_size: crop,
            ..Default::default()
        }
    }

    #[test]
    fn crops_are_sized_aligned_and_reproducible() {
        let pairs = vec![
            (
                "a".to_string(),
                gradient(1, 40, 48, 0.5),
                gradient(3, 40, 48, 0.3),
            ),
            (
                "b".to_string(),
                gradient(1, 32, 32, 0.6),
                gradient(3, 32, 32, 0.2),
            ),
        ];
        let c = TrainConfig {
            samples_per_pair: 3,
            ..cfg(32)
        };
        let s = build_samples(&pairs, &c, 9).unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!(s, build_samples(&pairs, &c, 9).unwrap());
        assert_ne!(s, build_samples(&pairs, &c, 10).unwrap());
        for (i, x) in s.iter().enumerate() {
            for img in [
                &x.ir_clean,
                &x.ir_degraded,
                &x.vi_degraded_rgb,
                &x.vi_reference_rgb,
            ] {
                assert_eq!((img.height(), img.width()), (32, 32));
            }
            let (top, left) = x.origin;
            let src = &pairs[i / 3];
            assert_eq!(x.ir_clean, src.1.luma().crop(top, left, 32, 32).unwrap());
            assert_eq!(
                x.vi_degraded_rgb,
                src.2.crop(top, left, 32, 32).unwrap(),
                "no darkening by default"
            );
            assert_eq!(x.ir_degraded, x.spec.apply_infrared(&x.ir_clean).unwrap());
            assert!((5.0..=30.0).contains(&x.spec.gaussian_sigma));
            assert!((10.0..=30.0).contains(&x.spec.stripe_intensity));
        }
    }

    #[test]
    fn darken_flag_applies_gamma() {
        let pairs = vec![(
            "a".to_string(),
            gradient(1, 16, 16, 0.5),
            gradient(3, 16, 16, 0.5),
        )];
        let c = TrainConfig {
            visible_darken_gamma: Some(2.0),
            ..cfg(16)
        };
        let s = &build_samples(&pairs, &c, 1).unwrap()[0];
        let want = pairs[0].2.data().mapv(|v| v * v);
        assert!((s.vi_degraded_rgb.data() - &want)
            .iter()
            .all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn empirical_sigma_tracks_draws() {
        // Mid-gray source and negligible stripes: the residual is unclamped
        // Gaussian noise.
        let flat = ImageF::constant(1, 64, 64, 0.5).unwrap();
        let pairs = vec![("f".to_string(), flat.clone(), flat)];
        let c = TrainConfig {
            samples_per_pair: 100,
            stripe_range: [0.0, 1e-9],
            ..cfg(64)
        };
        let s = build_samples(&pairs, &c, 3).unwrap();
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for x in &s {
            let d = x.ir_degraded.data() - x.ir_clean.data();
            let n = d.len() as f64;
            let mean = d.sum() / n;
            let sd = ((d.mapv(|v| (v - mean).powi(2)).sum()) / (n - 1.0)).sqrt() * 255.0;
            // relative standard error of a 4096-pixel std estimate is ~1.1%
            assert!(
                (sd / x.spec.gaussian_sigma - 1.0).abs() < 0.06,
                "{sd} vs {}",
                x.spec.gaussian_sigma
            );
            lo = lo.min(sd);
            hi = hi.max(sd);
        }
        assert!(lo < 7.0 && hi > 28.0, "empirical sigma spans [{lo}, {hi}]");
    }

    #[test]
    fn directory_loading_and_pairing_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (ir, vi) = (dir.path().join("ir"), dir.path().join("vi"));
        std::fs::create_dir_all(&ir).unwrap();
        std::fs::create_dir_all(&vi).unwrap();
        assert!(matches!(
            build_dataset(dir.path(), &cfg(16), 0),
            Err(Error::Dataset(_))
        ));
        for n in ["p1.png", "p2.png"] {
            save_png(&gradient(1, 16, 16, 0.4), ir.join(n)).unwrap();
            save_png(&gradient(3, 16, 16, 0.4), vi.join(n)).unwrap();
        }
        std::fs::write(ir.join("notes.txt"), "x").unwrap();
        assert_eq!(build_dataset(dir.path(), &cfg(16), 0).unwrap().len(), 2);

        save_png(&gradient(1, 16, 16, 0.4), ir.join("lonely.png")).unwrap();
        save_png(&gradient(3, 16, 16, 0.4), vi.join("other.png")).unwrap();
        let msg = build_dataset(dir.path(), &cfg(16), 0)
            .unwrap_err()
            .to_string();
        assert!(
            msg.contains("lonely.png") && msg.contains("other.png"),
            "{msg}"
        );
        assert!(!msg.contains("p1.png"));

        let small = TrainConfig { ..cfg(32) };
        std::fs::remove_file(ir.join("lonely.png")).unwrap();
        std::fs::remove_file(vi.join("other.png")).unwrap();
        assert!(matches!(
            build_dataset(dir.path(), &small, 0),
            Err(Error::Dataset(_))
        ));
    }
}
