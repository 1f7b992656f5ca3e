//! Fusion quality metrics on single-channel planes.
//!
//! Plane functions take intensities as given; [`report`] feeds them luma on
//! the 0-255 scale. Constants:
//!
//! | metric | constant | value |
//! |---|---|---|
//! | Qabf | strength sigmoid `kappa_g`, `sigma_g` | -15, 0.5 |
//! | Qabf | orientation sigmoid `kappa_a`, `sigma_a` | -22, 0.8 |
//! | Qabf | `Gamma` | `1 + exp(kappa (1 - sigma))`, so a perfect match scores 1 |
//! | Qabf | edge weight exponent `L` | 1 |
//! | Qw | window | 8x8, stride 1, fully inside the image |
//! | Qw | saliency | window variance |
//! | VIF | scales | 4, Gaussian window `N = 2^(5-s) + 1`, std `N / 5` |
//! | VIF | `sigma_n^2` | 2 (0-255 scale) |
//! | EI, Qabf | gradient | 3x3 Sobel, reflect padding |
//!
//! Horizontal flips of every argument leave EI, SF, Qabf and Qw unchanged.
//! AG pairs each forward x-difference with the y-difference at the same
//! pixel, so it is not flip-symmetric; VIF is only when every pyramid level
//! has odd size.

use ndarray::{Array2, ArrayView2};

use crate::error::{ensure, Result};
use crate::losses::{SOBEL_X, SOBEL_Y};

pub mod report;

pub use report::{evaluate, MetricReport, MetricValues, PairMetrics};

pub const QABF_KAPPA_G: f64 = -15.0;
pub const QABF_SIGMA_G: f64 = 0.5;
pub const QABF_KAPPA_A: f64 = -22.0;
pub const QABF_SIGMA_A: f64 = 0.8;
pub const QW_WINDOW: usize = 8;
pub const VIF_SCALES: usize = 4;
pub const VIF_SIGMA_N2: f64 = 2.0;
/// Variance floor of the VIF GSM model.
pub const VIF_EPS: f64 = 1e-10;
/// Denominator guard of the universal quality index.
pub const UQI_EPS: f64 = 1e-12;

/// Mirror index without edge repetition, folded as often as needed.
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let p = 2 * (n as isize - 1);
    let m = i.rem_euclid(p);
    (if m >= n as isize { p - m } else { m }) as usize
}

fn check_min(img: ArrayView2<'_, f64>, min: usize, what: &str) -> Result<()> {
    let (h, w) = img.dim();
    ensure!(
        h >= min && w >= min,
        InvalidInput,
        "{what} needs at least {min}x{min} pixels, got {h}x{w}"
    );
    ensure!(
        img.iter().all(|v| v.is_finite()),
        InvalidInput,
        "{what}: non-finite input"
    );
    Ok(())
}

fn check_aligned(planes: &[ArrayView2<'_, f64>], what: &str) -> Result<()> {
    let d = planes[0].dim();
    ensure!(
        planes.iter().all(|p| p.dim() == d),
        InvalidInput,
        "{what}: inputs are not aligned ({:?})",
        planes.iter().map(|p| p.dim()).collect::<Vec<_>>()
    );
    Ok(())
}

/// Average gradient: mean of `sqrt((dx^2 + dy^2) / 2)` over the
/// `(H-1) x (W-1)` pixels that have both forward neighbours.
pub fn ag(img: ArrayView2<'_, f64>) -> Result<f64> {
    check_min(img, 2, "AG")?;
    let (h, w) = img.dim();
    let mut s = 0.0;
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let dx = img[(y, x + 1)] - img[(y, x)];
            let dy = img[(y + 1, x)] - img[(y, x)];
            s += ((dx * dx + dy * dy) / 2.0).sqrt();
        }
    }
    Ok(s / ((h - 1) * (w - 1)) as f64)
}

/// Spatial frequency `sqrt(RF^2 + CF^2)`; RF and CF are root-mean-squares of
/// horizontal and vertical neighbour differences.
pub fn sf(img: ArrayView2<'_, f64>) -> Result<f64> {
    check_min(img, 2, "SF")?;
    let (h, w) = img.dim();
    let mut rf = 0.0;
    let mut cf = 0.0;
    for y in 0..h {
        for x in 0..w {
            if x > 0 {
                rf += (img[(y, x)] - img[(y, x - 1)]).powi(2);
            }
            if y > 0 {
                cf += (img[(y, x)] - img[(y - 1, x)]).powi(2);
            }
        }
    }
    let rf = rf / (h * (w - 1)) as f64;
    let cf = cf / ((h - 1) * w) as f64;
    Ok((rf + cf).sqrt())
}

/// Sobel responses `(gx, gy)` with reflect padding.
pub fn sobel(img: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = img.dim();
    let mut gx = Array2::zeros((h, w));
    let mut gy = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let (mut sx, mut sy) = (0.0, 0.0);
            for ky in 0..3 {
                let yy = reflect(y as isize + ky as isize - 1, h);
                for kx in 0..3 {
                    let v = img[(yy, reflect(x as isize + kx as isize - 1, w))];
                    sx += SOBEL_X[ky * 3 + kx] * v;
                    sy += SOBEL_Y[ky * 3 + kx] * v;
                }
            }
            gx[(y, x)] = sx;
            gy[(y, x)] = sy;
        }
    }
    (gx, gy)
}

/// Edge intensity: mean Sobel magnitude.
pub fn ei(img: ArrayView2<'_, f64>) -> Result<f64> {
    check_min(img, 3, "EI")?;
    let (gx, gy) = sobel(img);
    Ok(gx
        .iter()
        .zip(gy.iter())
        .map(|(a, b)| a.hypot(*b))
        .sum::<f64>()
        / gx.len() as f64)
}

fn sigmoid_gain(kappa: f64, sigma: f64) -> f64 {
    1.0 + (kappa * (1.0 - sigma)).exp()
}

/// Edge strength and orientation `atan(gy / gx)`; vertical edges (gx = 0)
/// take `pi / 2`.
fn strength_orientation(img: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
    let (gx, gy) = sobel(img);
    let g = ndarray::Zip::from(&gx)
        .and(&gy)
        .map_collect(|a, b| a.hypot(*b));
    let a = ndarray::Zip::from(&gx).and(&gy).map_collect(|&x, &y| {
        if x == 0.0 {
            std::f64::consts::FRAC_PI_2
        } else {
            (y / x).atan()
        }
    });
    (g, a)
}

/// Edge-preservation value of `f` relative to one source, per pixel.
fn edge_preservation(gs: f64, as_: f64, gf: f64, af: f64) -> f64 {
    let rel = if gs == gf {
        1.0
    } else if gs > gf {
        gf / gs
    } else {
        gs / gf
    };
    let orient = 1.0 - (as_ - af).abs() / std::f64::consts::FRAC_PI_2;
    let qg = sigmoid_gain(QABF_KAPPA_G, QABF_SIGMA_G)
        / (1.0 + (QABF_KAPPA_G * (rel - QABF_SIGMA_G)).exp());
    let qa = sigmoid_gain(QABF_KAPPA_A, QABF_SIGMA_A)
        / (1.0 + (QABF_KAPPA_A * (orient - QABF_SIGMA_A)).exp());
    qg * qa
}

/// Gradient-based edge transfer from sources `a`, `b` into `f`, weighted by
/// source edge strength. Zero when neither source has any edge.
pub fn qabf(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, f: ArrayView2<'_, f64>) -> Result<f64> {
    check_aligned(&[a, b, f], "Qabf")?;
    for p in [a, b, f] {
        check_min(p, 3, "Qabf")?;
    }
    let (ga, aa) = strength_orientation(a);
    let (gb, ab) = strength_orientation(b);
    let (gf, af) = strength_orientation(f);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..ga.len() {
        let (ga, gb) = (ga.as_slice().unwrap()[i], gb.as_slice().unwrap()[i]);
        let (aa, ab) = (aa.as_slice().unwrap()[i], ab.as_slice().unwrap()[i]);
        let (gf, af) = (gf.as_slice().unwrap()[i], af.as_slice().unwrap()[i]);
        num += edge_preservation(ga, aa, gf, af) * ga + edge_preservation(gb, ab, gf, af) * gb;
        den += ga + gb;
    }
    Ok(if den > 0.0 {
        (num / den).clamp(0.0, 1.0)
    } else {
        0.0
    })
}

struct WindowStats {
    mean: [f64; 3],
    var: [f64; 3],
    cov_af: f64,
    cov_bf: f64,
}

/// Universal quality index of one window; identical windows score 1.
fn uqi(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64, identical: bool) -> f64 {
    if identical {
        return 1.0;
    }
    4.0 * cxy * mx * my / ((vx + vy) * (mx * mx + my * my) + UQI_EPS)
}

/// Piella's weighted fusion quality index over 8x8 sliding windows.
pub fn qw(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, f: ArrayView2<'_, f64>) -> Result<f64> {
    check_aligned(&[a, b, f], "Qw")?;
    for p in [a, b, f] {
        check_min(p, QW_WINDOW, "Qw")?;
    }
    let (h, w) = a.dim();
    let n = QW_WINDOW;
    let count = (n * n) as f64;
    let mut terms = Vec::with_capacity((h - n + 1) * (w - n + 1));
    for y in 0..=h - n {
        for x in 0..=w - n {
            let win = |p: ArrayView2<'_, f64>| p.slice(ndarray::s![y..y + n, x..x + n]).to_owned();
            let (wa, wb, wf) = (win(a), win(b), win(f));
            let mean = [wa.sum() / count, wb.sum() / count, wf.sum() / count];
            let var_of =
                |p: &Array2<f64>, m: f64| p.iter().map(|v| (v - m).powi(2)).sum::<f64>() / count;
            let cov = |p: &Array2<f64>, mp: f64| {
                p.iter()
                    .zip(wf.iter())
                    .map(|(u, v)| (u - mp) * (v - mean[2]))
                    .sum::<f64>()
                    / count
            };
            let st = WindowStats {
                var: [
                    var_of(&wa, mean[0]),
                    var_of(&wb, mean[1]),
                    var_of(&wf, mean[2]),
                ],
                cov_af: cov(&wa, mean[0]),
                cov_bf: cov(&wb, mean[1]),
                mean,
            };
            let q_a = uqi(
                st.mean[0],
                st.mean[2],
                st.var[0],
                st.var[2],
                st.cov_af,
                wa == wf,
            );
            let q_b = uqi(
                st.mean[1],
                st.mean[2],
                st.var[1],
                st.var[2],
                st.cov_bf,
                wb == wf,
            );
            terms.push((st.var[0], st.var[1], q_a, q_b));
        }
    }
    let total: f64 = terms.iter().map(|t| t.0.max(t.1)).sum();
    let uniform = 1.0 / terms.len() as f64;
    Ok(terms
        .iter()
        .map(|&(sa, sb, qa, qb)| {
            let lambda = if sa + sb > 0.0 { sa / (sa + sb) } else { 0.5 };
            let c = if total > 0.0 {
                sa.max(sb) / total
            } else {
                uniform
            };
            c * (lambda * qa + (1.0 - lambda) * qb)
        })
        .sum())
}

/// Normalised 1-D Gaussian taps of length `n`.
pub(crate) fn gaussian_taps(n: usize, sd: f64) -> Vec<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    let t: Vec<f64> = (0..n)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sd * sd)).exp())
        .collect();
    let s: f64 = t.iter().sum();
    t.into_iter().map(|v| v / s).collect()
}

/// Separable "same" filtering with reflect padding.
fn filter_same(img: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let r = (taps.len() / 2) as isize;
    let mut tmp = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            tmp[(y, x)] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * img[(y, reflect(x as isize + k as isize - r, w))])
                .sum::<f64>();
        }
    }
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            out[(y, x)] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * tmp[(reflect(y as isize + k as isize - r, h), x)])
                .sum::<f64>();
        }
    }
    out
}

fn decimate(img: &Array2<f64>) -> Array2<f64> {
    img.slice(ndarray::s![..;2, ..;2]).to_owned()
}

/// Per-pixel GSM information terms `(numerator, denominator)` of one scale.
pub(crate) fn vif_terms(s1: f64, s2: f64, s12: f64) -> (f64, f64) {
    let mut s1 = s1.max(0.0);
    let s2 = s2.max(0.0);
    let mut g = s12 / (s1 + VIF_EPS);
    let mut sv = s2 - g * s12;
    if s1 < VIF_EPS {
        g = 0.0;
        sv = s2;
        s1 = 0.0;
    }
    if s2 < VIF_EPS {
        g = 0.0;
        sv = 0.0;
    }
    if g < 0.0 {
        sv = s2;
        g = 0.0;
    }
    let sv = sv.max(VIF_EPS);
    (
        (1.0 + g * g * s1 / (sv + VIF_SIGMA_N2)).log10(),
        (1.0 + s1 / VIF_SIGMA_N2).log10(),
    )
}

/// Pixel-domain visual information fidelity of `dist` against `reference`.
/// A reference carrying no information scores 1 if `dist` equals it and 0
/// otherwise.
pub fn vif(reference: ArrayView2<'_, f64>, dist: ArrayView2<'_, f64>) -> Result<f64> {
    check_aligned(&[reference, dist], "VIF")?;
    check_min(reference, 2, "VIF")?;
    check_min(dist, 2, "VIF")?;
    let mut r = reference.to_owned();
    let mut d = dist.to_owned();
    let (mut num, mut den) = (0.0, 0.0);
    for s in 1..=VIF_SCALES {
        let n = (1usize << (5 - s)) + 1;
        let taps = gaussian_taps(n, n as f64 / 5.0);
        if s > 1 {
            r = decimate(&filter_same(&r, &taps));
            d = decimate(&filter_same(&d, &taps));
        }
        let mu1 = filter_same(&r, &taps);
        let mu2 = filter_same(&d, &taps);
        let rr = filter_same(&(&r * &r), &taps);
        let dd = filter_same(&(&d * &d), &taps);
        let rd = filter_same(&(&r * &d), &taps);
        for i in 0..mu1.len() {
            let (m1, m2) = (mu1.as_slice().unwrap()[i], mu2.as_slice().unwrap()[i]);
            let s1 = rr.as_slice().unwrap()[i] - m1 * m1;
            let s2 = dd.as_slice().unwrap()[i] - m2 * m2;
            let s12 = rd.as_slice().unwrap()[i] - m1 * m2;
            let (a, b) = vif_terms(s1, s2, s12);
            num += a;
            den += b;
        }
    }
    if den <= 0.0 {
        return Ok(if reference == dist { 1.0 } else { 0.0 });
    }
    Ok(num / den)
}

/// Mean of `vif(a, f)` and `vif(b, f)`.
pub fn fusion_vif(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    f: ArrayView2<'_, f64>,
) -> Result<f64> {
    Ok(0.5 * (vif(a, f)? + vif(b, f)?))
}
