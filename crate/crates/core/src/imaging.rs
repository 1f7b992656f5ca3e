//! Image container, YCbCr conversion, PNG I/O, and seeded degradation
//! synthesis (Gaussian noise, stripe noise, low-light darkening) plus the
//! built-in reference enhancer used to build visible supervision targets.

use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub const MIN_SIDE: usize = 8;

/// BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];
const CB_SCALE: f64 = 1.772; // 2 * (1 - 0.114)
const CR_SCALE: f64 = 1.402; // 2 * (1 - 0.299)

/// Channel-first floating-point image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageF {
    data: Array3<f64>,
}

impl ImageF {
    /// Validates shape (1 or 3 channels, sides >= 8), finiteness and range.
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (c, h, w) = data.dim();
        ensure!(
            c == 1 || c == 3,
            InvalidInput,
            "image must have 1 or 3 channels, got {c}"
        );
        ensure!(
            h >= MIN_SIDE && w >= MIN_SIDE,
            InvalidInput,
            "image must be at least {MIN_SIDE}x{MIN_SIDE}, got {h}x{w}"
        );
        ensure!(
            data.iter().all(|v| v.is_finite()),
            InvalidInput,
            "image contains non-finite values"
        );
        ensure!(
            data.iter().all(|&v| (0.0..=1.0).contains(&v)),
            InvalidInput,
            "image values must lie in [0, 1]"
        );
        Ok(ImageF { data })
    }

    /// Clamps into `[0, 1]` before validating; non-finite values still fail.
    pub fn from_clamped(mut data: Array3<f64>) -> Result<Self> {
        data.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Self::new(data)
    }

    pub fn from_plane(plane: Array2<f64>) -> Result<Self> {
        Self::new(plane.insert_axis(Axis(0)))
    }

    pub fn constant(channels: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(Array3::from_elem((channels, height, width), value))
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(0), c)
    }

    pub fn same_size(&self, other: &ImageF) -> bool {
        self.height() == other.height() && self.width() == other.width()
    }

    /// Crop `(top, left, height, width)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<ImageF> {
        ensure!(
            top + height <= self.height() && left + width <= self.width(),
            InvalidInput,
            "crop {height}x{width}+{top}+{left} exceeds {}x{}",
            self.height(),
            self.width()
        );
        ImageF::new(
            self.data
                .slice(s![.., top..top + height, left..left + width])
                .to_owned(),
        )
    }

    /// Single-channel luminance: the image itself if grayscale, otherwise Y.
    pub fn luma(&self) -> ImageF {
        if self.channels() == 1 {
            return self.clone();
        }
        rgb_to_ycbcr(self).expect("3-channel image").y
    }

    pub fn mean(&self) -> f64 {
        self.data.mean().unwrap_or(0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct YCbCrImage {
    pub y: ImageF,
    pub cb: ImageF,
    pub cr: ImageF,
}

pub fn rgb_to_ycbcr(img: &ImageF) -> Result<YCbCrImage> {
    ensure!(
        img.channels() == 3,
        InvalidInput,
        "rgb_to_ycbcr needs 3 channels, got {}",
        img.channels()
    );
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let y = &r * LUMA[0] + &g * LUMA[1] + &b * LUMA[2];
    let cb = (&b - &y) / CB_SCALE + 0.5;
    let cr = (&r - &y) / CR_SCALE + 0.5;
    // Values are mathematically inside [0,1]; clamp away rounding spill.
    Ok(YCbCrImage {
        y: ImageF::from_clamped(y.insert_axis(Axis(0)))?,
        cb: ImageF::from_clamped(cb.insert_axis(Axis(0)))?,
        cr: ImageF::from_clamped(cr.insert_axis(Axis(0)))?,
    })
}

pub fn ycbcr_to_rgb(ycc: &YCbCrImage) -> Result<ImageF> {
    ensure!(
        ycc.y.same_size(&ycc.cb) && ycc.y.same_size(&ycc.cr),
        InvalidInput,
        "YCbCr planes differ in size"
    );
    ensure!(
        ycc.y.channels() == 1 && ycc.cb.channels() == 1 && ycc.cr.channels() == 1,
        InvalidInput,
        "YCbCr planes must be single-channel"
    );
    let (y, cb, cr) = (ycc.y.plane(0), ycc.cb.plane(0), ycc.cr.plane(0));
    let cbc = &cb - 0.5;
    let crc = &cr - 0.5;
    let r = &y + &(&crc * CR_SCALE);
    let b = &y + &(&cbc * CB_SCALE);
    let g = (&y - &(&r * LUMA[0]) - &(&b * LUMA[2])) / LUMA[1];
    let mut out = Array3::zeros((3, y.nrows(), y.ncols()));
    out.index_axis_mut(Axis(0), 0).assign(&r);
    out.index_axis_mut(Axis(0), 1).assign(&g);
    out.index_axis_mut(Axis(0), 2).assign(&b);
    ImageF::from_clamped(out)
}

// ---- degradation ---------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StripeOrientation {
    #[default]
    Vertical,
    Horizontal,
}

/// Parameters of one synthetic degradation draw. Noise levels are on the
/// 0-255 scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationSpec {
    pub gaussian_sigma: f64,
    pub stripe_intensity: f64,
    pub stripe_orientation: StripeOrientation,
    pub lowlight_gamma: f64,
    pub seed: u64,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        DegradationSpec {
            gaussian_sigma: 15.0,
            stripe_intensity: 20.0,
            stripe_orientation: StripeOrientation::Vertical,
            lowlight_gamma: 1.0,
            seed: 0,
        }
    }
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            (0.0..=30.0).contains(&self.gaussian_sigma),
            InvalidInput,
            "gaussian_sigma must be in [0, 30], got {}",
            self.gaussian_sigma
        );
        ensure!(
            (0.0..=30.0).contains(&self.stripe_intensity),
            InvalidInput,
            "stripe_intensity must be in [0, 30], got {}",
            self.stripe_intensity
        );
        ensure!(
            self.lowlight_gamma >= 1.0,
            InvalidInput,
            "lowlight_gamma must be >= 1"
        );
        Ok(())
    }

    /// Infrared protocol: Gaussian then stripe noise.
    pub fn apply_infrared(&self, img: &ImageF) -> Result<ImageF> {
        self.validate()?;
        let noisy = add_gaussian_noise(img, self.gaussian_sigma, self.seed)?;
        add_stripe_noise(
            &noisy,
            self.stripe_intensity,
            self.stripe_orientation,
            stripe_seed(self.seed),
        )
    }

    /// Visible protocol: low-light darkening only.
    pub fn apply_visible(&self, img: &ImageF) -> Result<ImageF> {
        self.validate()?;
        darken(img, self.lowlight_gamma)
    }
}

fn stripe_seed(seed: u64) -> u64 {
    seed ^ 0x5851_f42d_4c95_7f2d
}

/// Zero-mean Gaussian field with std `sigma / 255`, before any clamping.
pub fn gaussian_noise_field(
    shape: (usize, usize, usize),
    sigma: f64,
    seed: u64,
) -> Result<Array3<f64>> {
    ensure!(
        sigma >= 0.0 && sigma.is_finite(),
        InvalidInput,
        "sigma must be non-negative, got {sigma}"
    );
    if sigma == 0.0 {
        return Ok(Array3::zeros(shape));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma / 255.0).expect("valid std");
    Ok(Array3::from_shape_simple_fn(shape, || {
        normal.sample(&mut rng)
    }))
}

pub fn add_gaussian_noise(img: &ImageF, sigma: f64, seed: u64) -> Result<ImageF> {
    let noise = gaussian_noise_field(img.data.dim(), sigma, seed)?;
    ImageF::from_clamped(&img.data + &noise)
}

/// Per-line offsets drawn i.i.d. from `U[-intensity, intensity] / 255`.
pub fn stripe_offsets(lines: usize, intensity: f64, seed: u64) -> Result<Vec<f64>> {
    ensure!(
        intensity >= 0.0 && intensity.is_finite(),
        InvalidInput,
        "stripe intensity must be non-negative, got {intensity}"
    );
    if intensity == 0.0 {
        return Ok(vec![0.0; lines]);
    }
    let a = intensity / 255.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..lines).map(|_| rng.random_range(-a..=a)).collect())
}

/// Adds one constant offset per column (vertical) or row (horizontal); the
/// same offset is used for every channel.
pub fn add_stripe_noise(
    img: &ImageF,
    intensity: f64,
    orientation: StripeOrientation,
    seed: u64,
) -> Result<ImageF> {
    let lines = match orientation {
        StripeOrientation::Vertical => img.width(),
        StripeOrientation::Horizontal => img.height(),
    };
    let offsets = stripe_offsets(lines, intensity, seed)?;
    let mut out = img.data.clone();
    for ((_, y, x), v) in out.indexed_iter_mut() {
        *v += match orientation {
            StripeOrientation::Vertical => offsets[x],
            StripeOrientation::Horizontal => offsets[y],
        };
    }
    ImageF::from_clamped(out)
}

/// Power-law low-light synthesis, `out = img^gamma`.
pub fn darken(img: &ImageF, gamma: f64) -> Result<ImageF> {
    ensure!(
        gamma >= 1.0 && gamma.is_finite(),
        InvalidInput,
        "gamma must be >= 1, got {gamma}"
    );
    ImageF::new(img.data.mapv(|v| v.powf(gamma)))
}

pub const ENHANCE_GAMMA: f64 = 1.0 / 2.2;

fn mean_luma(img: &ImageF) -> f64 {
    if img.channels() == 1 {
        return img.mean();
    }
    (0..3)
        .map(|c| LUMA[c] * img.plane(c).mean().unwrap_or(0.0))
        .sum()
}

/// Deterministic reference enhancer: gamma lift followed by a gray-world
/// channel gain. Gains preserve the luma-weighted mean of the lifted image;
/// if clamping would leave the result darker than the input, the lifted
/// image is returned without the gain.
pub fn reference_enhance(img: &ImageF) -> Result<ImageF> {
    let lifted = img.data.mapv(|v| v.powf(ENHANCE_GAMMA));
    let lifted = ImageF::new(lifted)?;
    if img.channels() == 1 {
        return Ok(lifted);
    }
    let means: Vec<f64> = (0..3)
        .map(|c| lifted.plane(c).mean().unwrap_or(0.0))
        .collect();
    let target: f64 = (0..3).map(|c| LUMA[c] * means[c]).sum();
    let mut out = lifted.data.clone();
    for (c, &m) in means.iter().enumerate() {
        let gain = if m > 1e-12 { target / m } else { 1.0 };
        out.index_axis_mut(Axis(0), c)
            .mapv_inplace(|v| (v * gain).clamp(0.0, 1.0));
    }
    let balanced = ImageF::new(out)?;
    if mean_luma(&balanced) >= mean_luma(img) {
        Ok(balanced)
    } else {
        Ok(lifted)
    }
}

// ---- PNG I/O -------------------------------------------------------------------

/// Round-half-up quantisation to 8 bits.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn load_png(path: impl AsRef<Path>) -> Result<ImageF> {
    let path = path.as_ref();
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| Error::io(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        image::DynamicImage::ImageLuma8(buf) => Array3::from_shape_vec(
            (1, h, w),
            buf.into_raw()
                .into_iter()
                .map(|v| v as f64 / 255.0)
                .collect(),
        ),
        image::DynamicImage::ImageRgb8(buf) => {
            let raw = buf.into_raw();
            Ok(Array3::from_shape_fn((3, h, w), |(c, y, x)| {
                raw[(y * w + x) * 3 + c] as f64 / 255.0
            }))
        }
        other => {
            return Err(Error::io(
                path,
                format!(
                    "unsupported PNG pixel format {:?}; expected 8-bit gray or RGB",
                    other.color()
                ),
            ))
        }
    }
    .map_err(|e| Error::io(path, e))?;
    ImageF::new(data).map_err(|e| Error::io(path, e))
}

pub fn save_png(img: &ImageF, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = (img.height() as u32, img.width() as u32);
    let result = if img.channels() == 1 {
        let raw: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
        image::GrayImage::from_raw(w, h, raw)
            .expect("buffer size")
            .save_with_format(path, image::ImageFormat::Png)
    } else {
        let mut raw = Vec::with_capacity((h * w * 3) as usize);
        for y in 0..h as usize {
            for x in 0..w as usize {
                for c in 0..3 {
                    raw.push(quantize(img.data[[c, y, x]]));
                }
            }
        }
        image::RgbImage::from_raw(w, h, raw)
            .expect("buffer size")
            .save_with_format(path, image::ImageFormat::Png)
    };
    result.map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn rgb(r: f64, g: f64, b: f64) -> ImageF {
        let mut d = Array3::zeros((3, 8, 8));
        d.index_axis_mut(Axis(0), 0).fill(r);
        d.index_axis_mut(Axis(0), 1).fill(g);
        d.index_axis_mut(Axis(0), 2).fill(b);
        ImageF::new(d).unwrap()
    }

    #[test]
    fn rejects_bad_images() {
        assert!(ImageF::constant(2, 8, 8, 0.5).is_err());
        assert!(ImageF::constant(1, 7, 8, 0.5).is_err());
        assert!(ImageF::constant(1, 8, 8, 1.5).is_err());
        assert!(ImageF::new(Array3::from_elem((1, 8, 8), f64::NAN)).is_err());
    }

    #[test]
    fn ycbcr_reference_colors() {
        let black = rgb_to_ycbcr(&rgb(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(black.y.data()[[0, 0, 0]], 0.0);
        assert_eq!(black.cb.data()[[0, 0, 0]], 0.5);
        assert_eq!(black.cr.data()[[0, 0, 0]], 0.5);

        let white = rgb_to_ycbcr(&rgb(1.0, 1.0, 1.0)).unwrap();
        assert!((white.y.data()[[0, 0, 0]] - 1.0).abs() < 1e-12);
        assert!((white.cb.data()[[0, 0, 0]] - 0.5).abs() < 1e-12);
        assert!((white.cr.data()[[0, 0, 0]] - 0.5).abs() < 1e-12);

        // Oracle: Y = .299, Cb = (0 - .299)/1.772 + .5, Cr = (1 - .299)/1.402 + .5
        let red = rgb_to_ycbcr(&rgb(1.0, 0.0, 0.0)).unwrap();
        assert!((red.y.data()[[0, 3, 3]] - 0.299).abs() < 1e-12);
        assert!((red.cb.data()[[0, 3, 3]] - 0.331_264_108_352_144_5).abs() < 1e-9);
        assert!((red.cr.data()[[0, 3, 3]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ycbcr_inverse_reference_colors() {
        let plane = |v: f64| ImageF::constant(1, 8, 8, v).unwrap();
        let white = ycbcr_to_rgb(&YCbCrImage {
            y: plane(1.0),
            cb: plane(0.5),
            cr: plane(0.5),
        })
        .unwrap();
        assert!(white.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let red = ycbcr_to_rgb(&YCbCrImage {
            y: plane(0.299),
            cb: plane(0.331264),
            cr: plane(1.0),
        })
        .unwrap();
        for (c, want) in [1.0, 0.0, 0.0].iter().enumerate() {
            assert!((red.data()[[c, 0, 0]] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn ycbcr_rejects_mismatched_planes() {
        let bad = YCbCrImage {
            y: ImageF::constant(1, 8, 8, 0.5).unwrap(),
            cb: ImageF::constant(1, 8, 9, 0.5).unwrap(),
            cr: ImageF::constant(1, 8, 8, 0.5).unwrap(),
        };
        assert!(matches!(ycbcr_to_rgb(&bad), Err(Error::InvalidInput(_))));
        assert!(rgb_to_ycbcr(&ImageF::constant(1, 8, 8, 0.5).unwrap()).is_err());
    }

    proptest! {
        #[test]
        fn color_round_trip(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = ImageF::new(Array3::from_shape_simple_fn((3, 8, 9), || rng.random::<f64>())).unwrap();
            let back = ycbcr_to_rgb(&rgb_to_ycbcr(&img).unwrap()).unwrap();
            let err = (&back.data - &img.data).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(err < 1e-6);
        }

        #[test]
        fn degradations_stay_in_range(seed in 0u64..200, sigma in 0.0f64..30.0, a in 0.0f64..30.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = ImageF::new(Array3::from_shape_simple_fn((1, 8, 8), || rng.random::<f64>())).unwrap();
            let spec = DegradationSpec { gaussian_sigma: sigma, stripe_intensity: a, seed, ..Default::default() };
            let out = spec.apply_infrared(&img).unwrap();
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(out, spec.apply_infrared(&img).unwrap());
        }
    }

    #[test]
    fn gaussian_noise_contract() {
        let img = ImageF::constant(1, 256, 256, 0.5).unwrap();
        assert_eq!(add_gaussian_noise(&img, 0.0, 1).unwrap(), img);
        assert!(add_gaussian_noise(&img, -1.0, 1).is_err());
        let a = add_gaussian_noise(&img, 25.0, 7).unwrap();
        assert_eq!(a, add_gaussian_noise(&img, 25.0, 7).unwrap());
        let field = gaussian_noise_field((1, 256, 256), 25.0, 7).unwrap();
        let n = field.len() as f64;
        let mean = field.sum() / n;
        let std = (field.mapv(|v| (v - mean).powi(2)).sum() / (n - 1.0)).sqrt();
        assert!((std / (25.0 / 255.0) - 1.0).abs() < 0.05, "std {std}");
        // far from the clamp bounds the image difference is exactly the field
        let diff = &a.data - &img.data;
        assert!((&diff - &field).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn stripe_noise_contract() {
        let img = ImageF::constant(1, 16, 32, 0.5).unwrap();
        assert_eq!(
            add_stripe_noise(&img, 0.0, StripeOrientation::Vertical, 3).unwrap(),
            img
        );
        assert!(add_stripe_noise(&img, -2.0, StripeOrientation::Vertical, 3).is_err());
        let out = add_stripe_noise(&img, 20.0, StripeOrientation::Vertical, 3).unwrap();
        let offsets = stripe_offsets(32, 20.0, 3).unwrap();
        for x in 0..32 {
            for y in 0..16 {
                assert!((out.data()[[0, y, x]] - 0.5 - offsets[x]).abs() < 1e-12);
            }
        }
        let rows = add_stripe_noise(&img, 20.0, StripeOrientation::Horizontal, 3).unwrap();
        for y in 0..16 {
            let first = rows.data()[[0, y, 0]];
            assert!((0..32).all(|x| rows.data()[[0, y, x]] == first));
        }
    }

    /// Kolmogorov distribution tail, P(K > x).
    fn kolmogorov_sf(x: f64) -> f64 {
        let mut s = 0.0;
        for k in 1..200 {
            let k = k as f64;
            s += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * x * x).exp();
        }
        s.clamp(0.0, 1.0)
    }

    #[test]
    fn stripe_offsets_are_uniform() {
        let a = 25.0;
        let mut off = stripe_offsets(10_000, a, 11).unwrap();
        off.sort_by(f64::total_cmp);
        let n = off.len() as f64;
        let lim = a / 255.0;
        let d = off
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let cdf = (v + lim) / (2.0 * lim);
                (cdf - i as f64 / n)
                    .abs()
                    .max(((i + 1) as f64 / n - cdf).abs())
            })
            .fold(0.0, f64::max);
        let p = kolmogorov_sf(d * n.sqrt());
        assert!(p > 0.01, "KS p-value {p} (D = {d})");
        assert!(off.iter().all(|v| v.abs() <= lim));
    }

    #[test]
    fn darken_contract() {
        let img = ImageF::constant(1, 8, 8, 0.5).unwrap();
        assert_eq!(darken(&img, 1.0).unwrap(), img);
        assert!((darken(&img, 2.0).unwrap().data()[[0, 0, 0]] - 0.25).abs() < 1e-15);
        assert!(darken(&img, 0.5).is_err());
        let lo = ImageF::constant(1, 8, 8, 0.3).unwrap();
        let (dl, dh) = (darken(&lo, 2.4).unwrap(), darken(&img, 2.4).unwrap());
        assert!(dl.data().iter().zip(dh.data()).all(|(a, b)| a <= b));
    }

    #[test]
    fn reference_enhance_contract() {
        let black = ImageF::constant(3, 8, 8, 0.0).unwrap();
        assert_eq!(reference_enhance(&black).unwrap(), black);
        let dim = ImageF::constant(1, 8, 8, 0.1).unwrap();
        let want = 0.1f64.powf(1.0 / 2.2);
        assert!(reference_enhance(&dim)
            .unwrap()
            .data()
            .iter()
            .all(|&v| (v - want).abs() < 1e-15));
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scale: [f64; 3] = [rng.random(), rng.random(), rng.random()];
            let img = ImageF::new(Array3::from_shape_fn((3, 8, 8), |(c, _, _)| {
                scale[c] * rng.random::<f64>()
            }))
            .unwrap();
            let out = reference_enhance(&img).unwrap();
            assert!(mean_luma(&out) >= mean_luma(&img));
            assert_eq!(out, reference_enhance(&img).unwrap());
        }
        // saturated red: gray-world would darken it, so only the lift applies
        let red = rgb(1.0, 0.0, 0.0);
        assert!(mean_luma(&reference_enhance(&red).unwrap()) >= mean_luma(&red));
    }

    #[test]
    fn quantization_rule() {
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.0), 0);
    }

    #[test]
    fn png_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for channels in [1, 3] {
            let bytes: Vec<u8> = (0..channels * 9 * 10).map(|_| rng.random()).collect();
            let img = ImageF::new(Array3::from_shape_fn((channels, 9, 10), |(c, y, x)| {
                bytes[(c * 9 + y) * 10 + x] as f64 / 255.0
            }))
            .unwrap();
            let p = dir.path().join(format!("img{channels}.png"));
            save_png(&img, &p).unwrap();
            let loaded = load_png(&p).unwrap();
            assert_eq!(loaded, img);
            let p2 = dir.path().join(format!("again{channels}.png"));
            save_png(&loaded, &p2).unwrap();
            assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
        }
        let err = load_png(dir.path().join("missing.png")).unwrap_err();
        assert!(err.to_string().contains("missing.png"));
    }

    #[test]
    fn sixteen_bit_png_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("deep.png");
        image::ImageBuffer::<image::Luma<u16>, _>::from_raw(8, 8, vec![1000u16; 64])
            .unwrap()
            .save(&p)
            .unwrap();
        let err = load_png(&p).unwrap_err();
        assert!(err.to_string().contains("deep.png"), "{err}");
    }
}
