//! Training objectives. Graph functions take `(B, 1, H, W)` variables;
//! the `*_loss` wrappers evaluate them on plain images.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::graph::{Graph, Var};
use crate::imaging::ImageF;
use crate::params::Init;
use crate::tensor::Tensor;

pub const EPSILON: f64 = 1e-6;
pub const POOL: usize = 16;
/// Keeps the Sobel magnitude differentiable at zero gradient.
pub const SOBEL_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub epsilon: f64,
    pub use_ds: bool,
    pub use_text: bool,
    /// Also apply total variation to the enhanced infrared image.
    pub tv_on_ir: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 100.0,
            lambda3: 1.0,
            gamma1: 1.0,
            gamma2: 5.0,
            epsilon: EPSILON,
            use_ds: true,
            use_text: true,
            tv_on_ir: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
        ] {
            ensure!(
                v.is_finite() && v >= 0.0,
                Config,
                "{name} must be finite and >= 0, got {v}"
            );
        }
        ensure!(
            self.epsilon > 0.0 && self.epsilon.is_finite(),
            Config,
            "epsilon must be > 0"
        );
        Ok(())
    }
}

fn same_shape(g: &Graph, a: Var, b: Var, what: &str) -> Result<()> {
    ensure!(
        g.shape(a) == g.shape(b),
        InvalidInput,
        "{what}: shapes differ ({:?} vs {:?})",
        g.shape(a),
        g.shape(b)
    );
    Ok(())
}

/// Mean of `sqrt((a - b)^2 + eps)`.
pub fn charbonnier(g: &mut Graph, a: Var, b: Var, eps: f64) -> Result<Var> {
    same_shape(g, a, b, "charbonnier")?;
    let d = g.sub(a, b);
    let d2 = g.square(d);
    let d2 = g.add_scalar(d2, eps);
    let r = g.sqrt(d2);
    Ok(g.mean_all(r))
}

/// Non-overlapping `POOL x POOL` average pooling; reflect-pads the bottom and
/// right edges up to a multiple of `POOL`.
pub fn avg_pool16(g: &mut Graph, x: Var) -> Var {
    let s = g.shape(x).to_vec();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (hp, wp) = (h.div_ceil(POOL) * POOL, w.div_ceil(POOL) * POOL);
    let xp = g.pad_reflect(x, 0, hp - h, 0, wp - w);
    let r = g.reshape(xp, &[b * c * hp / POOL, POOL, wp / POOL, POOL]);
    let m = g.mean_axes(r, &[1, 3]);
    g.reshape(m, &[b, c, hp / POOL, wp / POOL])
}

pub fn illumination(g: &mut Graph, en: Var, reference: Var, eps: f64) -> Result<Var> {
    same_shape(g, en, reference, "illumination")?;
    let a = avg_pool16(g, en);
    let b = avg_pool16(g, reference);
    charbonnier(g, a, b, eps)
}

/// Squared forward differences in both directions over `B * H * W`.
pub fn tv(g: &mut Graph, x: Var) -> Var {
    let s = g.shape(x).to_vec();
    let (h, w) = (s[2], s[3]);
    let norm = (s[0] * s[1] * h * w) as f64;
    let top = g.slice(x, 2, 0, h - 1);
    let bottom = g.slice(x, 2, 1, h - 1);
    let dy = g.sub(bottom, top);
    let left = g.slice(x, 3, 0, w - 1);
    let right = g.slice(x, 3, 1, w - 1);
    let dx = g.sub(right, left);
    let sy = g.square(dy);
    let sy = g.sum_all(sy);
    let sx = g.square(dx);
    let sx = g.sum_all(sx);
    let t = g.add(sy, sx);
    g.scale(t, 1.0 / norm)
}

/// Fixed random convolutional feature pyramid standing in for a pretrained
/// perceptual network.
#[derive(Clone, Debug, PartialEq)]
pub struct PerceptualExtractor {
    pub stages: Vec<(Tensor, Tensor, usize)>,
    pub slope: f64,
    pub seed: u64,
}

pub const PERCEPTUAL_STAGES: [(usize, usize, usize); 4] =
    [(1, 8, 1), (8, 16, 2), (16, 32, 2), (32, 32, 2)];

impl PerceptualExtractor {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stages = PERCEPTUAL_STAGES
            .iter()
            .map(|&(cin, cout, stride)| {
                let w = Init::He(cin * 9).sample(&[cout, cin, 3, 3], &mut rng);
                (w, Tensor::zeros(vec![cout]), stride)
            })
            .collect();
        PerceptualExtractor {
            stages,
            slope: 0.2,
            seed,
        }
    }

    pub fn features(&self, g: &mut Graph, x: Var) -> Vec<Var> {
        let mut out = Vec::with_capacity(self.stages.len());
        let mut f = x;
        for (w, b, stride) in &self.stages {
            let wv = g.constant(w.clone());
            let bv = g.constant(b.clone());
            let p = g.pad_reflect(f, 1, 1, 1, 1);
            let y = g.conv2d(p, wv, Some(bv), *stride, 1);
            f = g.leaky_relu(y, self.slope);
            out.push(f);
        }
        out
    }
}

/// Sum over stages of the mean squared feature difference.
pub fn perceptual(g: &mut Graph, ex: &PerceptualExtractor, en: Var, reference: Var) -> Result<Var> {
    same_shape(g, en, reference, "perceptual")?;
    let fa = ex.features(g, en);
    let fb = ex.features(g, reference);
    let mut total = g.scalar(0.0);
    for (a, b) in fa.into_iter().zip(fb) {
        let d = g.sub(a, b);
        let d2 = g.square(d);
        let m = g.mean_all(d2);
        total = g.add(total, m);
    }
    Ok(total)
}

fn per_pixel_norm(g: &Graph, x: Var) -> f64 {
    let s = g.shape(x);
    (s[0] * s[2] * s[3]) as f64
}

/// `(sum|fu - ir| + sum|fu - vi|) / (B H W)`.
pub fn intensity(g: &mut Graph, fu: Var, ir: Var, vi: Var) -> Result<Var> {
    same_shape(g, fu, ir, "intensity")?;
    same_shape(g, fu, vi, "intensity")?;
    let n = per_pixel_norm(g, fu);
    let a = g.sub(fu, ir);
    let a = g.abs(a);
    let a = g.sum_all(a);
    let b = g.sub(fu, vi);
    let b = g.abs(b);
    let b = g.sum_all(b);
    let t = g.add(a, b);
    Ok(g.scale(t, 1.0 / n))
}

pub const SOBEL_X: [f64; 9] = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
pub const SOBEL_Y: [f64; 9] = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];

/// `sqrt(Gx^2 + Gy^2 + SOBEL_EPS)` with reflect padding, per channel.
pub fn sobel_magnitude(g: &mut Graph, x: Var) -> Var {
    let c = g.shape(x)[1];
    let kx = Tensor::from_vec(vec![c, 1, 3, 3], SOBEL_X.repeat(c));
    let ky = Tensor::from_vec(vec![c, 1, 3, 3], SOBEL_Y.repeat(c));
    let p = g.pad_reflect(x, 1, 1, 1, 1);
    let kx = g.constant(kx);
    let ky = g.constant(ky);
    let gx = g.conv2d(p, kx, None, 1, c);
    let gy = g.conv2d(p, ky, None, 1, c);
    let gx2 = g.square(gx);
    let gy2 = g.square(gy);
    let s = g.add(gx2, gy2);
    let s = g.add_scalar(s, SOBEL_EPS);
    g.sqrt(s)
}

/// Mean of `| |grad fu| - max(|grad ir|, |grad vi|) |`.
pub fn texture(g: &mut Graph, fu: Var, ir: Var, vi: Var) -> Result<Var> {
    same_shape(g, fu, ir, "texture")?;
    same_shape(g, fu, vi, "texture")?;
    let mf = sobel_magnitude(g, fu);
    let mi = sobel_magnitude(g, ir);
    let mv = sobel_magnitude(g, vi);
    let target = g.maximum(mi, mv);
    let d = g.sub(mf, target);
    let d = g.abs(d);
    let n = per_pixel_norm(g, fu);
    let s = g.sum_all(d);
    Ok(g.scale(s, 1.0 / n))
}

/// Stage-1 objective terms, each a scalar variable.
#[derive(Clone, Copy, Debug)]
pub struct DoTerms {
    pub total: Var,
    pub ir: Var,
    pub vi: Var,
    pub illu: Var,
    pub tv: Var,
    pub per: Var,
}

/// Scalar values of a loss breakdown.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct DoValues {
    pub total: f64,
    pub ir: f64,
    pub vi: f64,
    pub illu: f64,
    pub tv: f64,
    pub per: f64,
}

impl DoTerms {
    pub fn values(&self, g: &Graph) -> DoValues {
        let v = |x: Var| g.value(x).item();
        DoValues {
            total: v(self.total),
            ir: v(self.ir),
            vi: v(self.vi),
            illu: v(self.illu),
            tv: v(self.tv),
            per: v(self.per),
        }
    }
}

impl DoValues {
    pub fn recompose(&self, w: &LossWeights) -> f64 {
        let mut t = self.ir + self.vi;
        if w.use_ds {
            t += w.lambda1 * self.illu + w.lambda2 * self.tv + w.lambda3 * self.per;
        }
        t
    }
}

/// `L_ir + L_vi + [lambda1 L_illu + lambda2 L_tv + lambda3 L_per]`. When
/// `use_ds` is off the regulariser terms are still reported but excluded.
pub fn loss_do(
    g: &mut Graph,
    ir_en: Var,
    vi_en: Var,
    ir_ref: Var,
    vi_ref: Var,
    w: &LossWeights,
    ex: &PerceptualExtractor,
) -> Result<DoTerms> {
    let l_ir = charbonnier(g, ir_en, ir_ref, w.epsilon)?;
    let l_vi = charbonnier(g, vi_en, vi_ref, w.epsilon)?;
    let l_illu = illumination(g, vi_en, vi_ref, w.epsilon)?;
    let mut l_tv = tv(g, vi_en);
    if w.tv_on_ir {
        let t_ir = tv(g, ir_en);
        l_tv = g.add(l_tv, t_ir);
    }
    let l_per = perceptual(g, ex, ir_en, ir_ref)?;
    let mut total = g.add(l_ir, l_vi);
    if w.use_ds {
        let a = g.scale(l_illu, w.lambda1);
        let b = g.scale(l_tv, w.lambda2);
        let c = g.scale(l_per, w.lambda3);
        let ds = g.add(a, b);
        let ds = g.add(ds, c);
        total = g.add(total, ds);
    }
    Ok(DoTerms {
        total,
        ir: l_ir,
        vi: l_vi,
        illu: l_illu,
        tv: l_tv,
        per: l_per,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct FuTerms {
    pub total: Var,
    pub int: Var,
    pub text: Var,
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct FuValues {
    pub total: f64,
    pub int: f64,
    pub text: f64,
}

impl FuTerms {
    pub fn values(&self, g: &Graph) -> FuValues {
        FuValues {
            total: g.value(self.total).item(),
            int: g.value(self.int).item(),
            text: g.value(self.text).item(),
        }
    }
}

impl FuValues {
    pub fn recompose(&self, w: &LossWeights) -> f64 {
        let mut t = w.gamma1 * self.int;
        if w.use_text {
            t += w.gamma2 * self.text;
        }
        t
    }
}

/// `gamma1 L_int + gamma2 L_text` (texture dropped when `use_text` is off).
pub fn loss_fu(
    g: &mut Graph,
    fu: Var,
    ir_ref: Var,
    vi_ref: Var,
    w: &LossWeights,
) -> Result<FuTerms> {
    let l_int = intensity(g, fu, ir_ref, vi_ref)?;
    let l_text = texture(g, fu, ir_ref, vi_ref)?;
    let mut total = g.scale(l_int, w.gamma1);
    if w.use_text {
        let t = g.scale(l_text, w.gamma2);
        total = g.add(total, t);
    }
    Ok(FuTerms {
        total,
        int: l_int,
        text: l_text,
    })
}

// ---- image wrappers ------------------------------------------------------------

pub fn image_tensor(img: &ImageF) -> Tensor {
    let (c, h, w) = (img.channels(), img.height(), img.width());
    Tensor::from_vec(vec![1, c, h, w], img.data().iter().copied().collect())
}

fn eval2(
    a: &ImageF,
    b: &ImageF,
    f: impl FnOnce(&mut Graph, Var, Var) -> Result<Var>,
) -> Result<f64> {
    let mut g = Graph::new();
    let va = g.constant(image_tensor(a));
    let vb = g.constant(image_tensor(b));
    let out = f(&mut g, va, vb)?;
    Ok(g.value(out).item())
}

fn eval3(
    a: &ImageF,
    b: &ImageF,
    c: &ImageF,
    f: impl FnOnce(&mut Graph, Var, Var, Var) -> Result<Var>,
) -> Result<f64> {
    let mut g = Graph::new();
    let va = g.constant(image_tensor(a));
    let vb = g.constant(image_tensor(b));
    let vc = g.constant(image_tensor(c));
    let out = f(&mut g, va, vb, vc)?;
    Ok(g.value(out).item())
}

pub fn charbonnier_loss(en: &ImageF, reference: &ImageF, eps: f64) -> Result<f64> {
    eval2(en, reference, |g, a, b| charbonnier(g, a, b, eps))
}

pub fn illumination_loss(en: &ImageF, reference: &ImageF, eps: f64) -> Result<f64> {
    eval2(en, reference, |g, a, b| illumination(g, a, b, eps))
}

pub fn tv_loss(x: &ImageF) -> Result<f64> {
    ensure!(
        x.channels() == 1,
        InvalidInput,
        "tv_loss expects a single-channel image"
    );
    eval2(x, x, |g, a, _| Ok(tv(g, a)))
}

pub fn perceptual_loss(en: &ImageF, reference: &ImageF, ex: &PerceptualExtractor) -> Result<f64> {
    ensure!(
        en.channels() == 1,
        InvalidInput,
        "perceptual_loss expects single-channel images"
    );
    eval2(en, reference, |g, a, b| perceptual(g, ex, a, b))
}

pub fn intensity_loss(fu: &ImageF, ir: &ImageF, vi: &ImageF) -> Result<f64> {
    eval3(fu, ir, vi, intensity)
}

pub fn texture_loss(fu: &ImageF, ir: &ImageF, vi: &ImageF) -> Result<f64> {
    eval3(fu, ir, vi, texture)
}
