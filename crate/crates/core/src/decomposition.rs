//! Orthonormal 2-D DCT band splitting and blur-based single-scale Retinex.

use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{ensure, Result};
use crate::graph::reflect_index;
use crate::imaging::{ImageF, MIN_SIDE};

pub const DEFAULT_TAU: f64 = 0.25;
pub const DEFAULT_RETINEX_SIGMA: f64 = 15.0;
pub const DEFAULT_ILLUMINATION_FLOOR: f64 = 1e-4;

/// Orthonormal DCT-II coefficients of one plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub coefficients: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyPair {
    pub low: Spectrum,
    pub high: Spectrum,
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetinexPair {
    pub reflectance: Array2<f64>,
    pub illumination: Array2<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Provenance {
    Frequency { tau: f64 },
    Retinex { sigma: f64, floor: f64 },
}

/// Two spatial-domain components plus how they were produced. For the
/// frequency split `first`/`second` are low/high; for Retinex they are
/// reflectance/illumination.
#[derive(Clone, Debug, PartialEq)]
pub struct DecompositionPair {
    pub first: Array2<f64>,
    pub second: Array2<f64>,
    pub provenance: Provenance,
}

/// `D[k][n] = a_k cos(pi (2n + 1) k / 2N)`, rows orthonormal.
pub fn dct_matrix(n: usize) -> Array2<f64> {
    let nf = n as f64;
    Array2::from_shape_fn((n, n), |(k, i)| {
        let a = if k == 0 {
            (1.0 / nf).sqrt()
        } else {
            (2.0 / nf).sqrt()
        };
        a * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * nf)).cos()
    })
}

fn check_plane(h: usize, w: usize) -> Result<()> {
    ensure!(
        h >= MIN_SIDE && w >= MIN_SIDE,
        InvalidInput,
        "plane must be at least {MIN_SIDE}x{MIN_SIDE}, got {h}x{w}"
    );
    Ok(())
}

pub fn dct2(plane: ArrayView2<'_, f64>) -> Result<Spectrum> {
    let (h, w) = plane.dim();
    check_plane(h, w)?;
    let coefficients = dct_matrix(h).dot(&plane).dot(&dct_matrix(w).t());
    Ok(Spectrum { coefficients })
}

pub fn idct2(spec: &Spectrum) -> Array2<f64> {
    let (h, w) = spec.coefficients.dim();
    dct_matrix(h)
        .t()
        .dot(&spec.coefficients)
        .dot(&dct_matrix(w))
}

/// LOW iff `u/H + v/W <= tau` or the coefficient lies on a frequency axis
/// (`u == 0` or `v == 0`). Per-line offsets are constant along one image axis,
/// so their spectrum is confined to an axis at every frequency.
pub fn low_mask(h: usize, w: usize, tau: f64) -> Array2<bool> {
    Array2::from_shape_fn((h, w), |(u, v)| {
        u == 0 || v == 0 || u as f64 / h as f64 + v as f64 / w as f64 <= tau
    })
}

pub fn split_frequency(spec: &Spectrum, tau: f64) -> Result<FrequencyPair> {
    ensure!(
        (0.0..=2.0).contains(&tau),
        InvalidInput,
        "tau must be in [0, 2], got {tau}"
    );
    let (h, w) = spec.coefficients.dim();
    let mask = low_mask(h, w, tau);
    let mut low = spec.coefficients.clone();
    let mut high = spec.coefficients.clone();
    Zip::from(&mut low)
        .and(&mut high)
        .and(&mask)
        .for_each(|l, hi, &m| {
            if m {
                *hi = 0.0;
            } else {
                *l = 0.0;
            }
        });
    Ok(FrequencyPair {
        low: Spectrum { coefficients: low },
        high: Spectrum { coefficients: high },
        tau,
    })
}

/// Spatial low/high components of a plane.
pub fn decompose_frequency(plane: ArrayView2<'_, f64>, tau: f64) -> Result<DecompositionPair> {
    let pair = split_frequency(&dct2(plane)?, tau)?;
    Ok(DecompositionPair {
        first: idct2(&pair.low),
        second: idct2(&pair.high),
        provenance: Provenance::Frequency { tau },
    })
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur, radius `ceil(3 sigma)`, reflect padding.
pub fn gaussian_blur(plane: ArrayView2<'_, f64>, sigma: f64) -> Array2<f64> {
    let (h, w) = plane.dim();
    if sigma <= 0.0 {
        return plane.to_owned();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let rows = Array2::from_shape_fn((h, w), |(y, x)| {
        k.iter()
            .enumerate()
            .map(|(j, kv)| kv * plane[[y, reflect_index(x as isize + j as isize - r, w)]])
            .sum::<f64>()
    });
    Array2::from_shape_fn((h, w), |(y, x)| {
        k.iter()
            .enumerate()
            .map(|(j, kv)| kv * rows[[reflect_index(y as isize + j as isize - r, h), x]])
            .sum::<f64>()
    })
}

pub fn retinex_plane(plane: ArrayView2<'_, f64>, sigma: f64, floor: f64) -> RetinexPair {
    let illumination = gaussian_blur(plane, sigma).mapv(|v| v.clamp(floor, 1.0));
    let reflectance = &plane / &illumination;
    RetinexPair {
        reflectance,
        illumination,
    }
}

pub fn retinex_decompose(img: &ImageF, sigma: f64, floor: f64) -> Result<RetinexPair> {
    ensure!(
        img.channels() == 1,
        InvalidInput,
        "retinex_decompose needs 1 channel, got {}",
        img.channels()
    );
    ensure!(
        sigma >= 0.0,
        InvalidInput,
        "retinex sigma must be non-negative"
    );
    ensure!(
        floor > 0.0 && floor <= 1.0,
        InvalidInput,
        "illumination floor must be in (0, 1]"
    );
    Ok(retinex_plane(img.plane(0), sigma, floor))
}

pub fn decompose_retinex(img: &ImageF, sigma: f64, floor: f64) -> Result<DecompositionPair> {
    let pair = retinex_decompose(img, sigma, floor)?;
    Ok(DecompositionPair {
        first: pair.reflectance,
        second: pair.illumination,
        provenance: Provenance::Retinex { sigma, floor },
    })
}
