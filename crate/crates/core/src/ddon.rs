//! Degradation-decoupled optimisation network.
//!
//! Infrared is split into DCT low/high bands and visible into Retinex
//! reflectance/illumination; each component is embedded, enhanced by its own
//! path, refined with CBAM and GN&LR, then recombined (sum for the bands,
//! product for Retinex). The decomposition runs on raw images, outside the
//! autograd graph.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::decomposition::{decompose_frequency, retinex_plane};
use crate::decomposition::{DEFAULT_ILLUMINATION_FLOOR, DEFAULT_RETINEX_SIGMA, DEFAULT_TAU};
use crate::error::{ensure, Result};
use crate::graph::Var;
use crate::nn::{BlockConfig, Cbam, Conv2d, GroupNormLr, Itb, MsConv, Scope, SwinBlock};
use crate::params::Session;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecompositionConfig {
    pub tau: f64,
    pub retinex_sigma: f64,
    pub illumination_floor: f64,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        DecompositionConfig {
            tau: DEFAULT_TAU,
            retinex_sigma: DEFAULT_RETINEX_SIGMA,
            illumination_floor: DEFAULT_ILLUMINATION_FLOOR,
        }
    }
}

impl DecompositionConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            (0.0..=2.0).contains(&self.tau),
            Config,
            "tau must be in [0, 2], got {}",
            self.tau
        );
        ensure!(
            self.retinex_sigma >= 0.0,
            Config,
            "retinex_sigma must be non-negative"
        );
        ensure!(
            self.illumination_floor > 0.0 && self.illumination_floor <= 1.0,
            Config,
            "illumination_floor must be in (0, 1]"
        );
        Ok(())
    }
}

/// Raw inputs and their four decomposed components, each `(B, 1, H, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DdonInputs {
    pub ir: Tensor,
    pub vi: Tensor,
    pub low: Tensor,
    pub high: Tensor,
    pub reflectance: Tensor,
    pub illumination: Tensor,
}

fn plane_of(t: &Tensor, b: usize) -> Array2<f64> {
    let (h, w) = (t.shape()[2], t.shape()[3]);
    Array2::from_shape_vec((h, w), t.data()[b * h * w..(b + 1) * h * w].to_vec())
        .expect("plane shape")
}

fn stack(planes: Vec<Array2<f64>>, h: usize, w: usize) -> Tensor {
    let b = planes.len();
    let mut data = Vec::with_capacity(b * h * w);
    for p in planes {
        data.extend(p.iter());
    }
    Tensor::from_vec(vec![b, 1, h, w], data)
}

/// Decomposes a batch of single-channel infrared and visible images.
pub fn decompose_batch(ir: &Tensor, vi: &Tensor, cfg: &DecompositionConfig) -> Result<DdonInputs> {
    ensure!(
        ir.rank() == 4 && ir.shape()[1] == 1,
        InvalidInput,
        "infrared batch must be (B, 1, H, W), got {:?}",
        ir.shape()
    );
    ensure!(
        ir.shape() == vi.shape(),
        InvalidInput,
        "infrared {:?} and visible {:?} batches differ in shape",
        ir.shape(),
        vi.shape()
    );
    let (b, h, w) = (ir.shape()[0], ir.shape()[2], ir.shape()[3]);
    let (mut low, mut high, mut refl, mut illu) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 0..b {
        let f = decompose_frequency(plane_of(ir, i).view(), cfg.tau)?;
        low.push(f.first);
        high.push(f.second);
        let r = retinex_plane(
            plane_of(vi, i).view(),
            cfg.retinex_sigma,
            cfg.illumination_floor,
        );
        refl.push(r.reflectance);
        illu.push(r.illumination);
    }
    Ok(DdonInputs {
        ir: ir.clone(),
        vi: vi.clone(),
        low: stack(low, h, w),
        high: stack(high, h, w),
        reflectance: stack(refl, h, w),
        illumination: stack(illu, h, w),
    })
}

/// Per-pixel features of one image from a batch tensor.
pub fn batch_item(t: &Tensor, b: usize) -> Tensor {
    let per: usize = t.shape()[1..].iter().product();
    let mut shape = t.shape().to_vec();
    shape[0] = 1;
    Tensor::from_vec(shape, t.data()[b * per..(b + 1) * per].to_vec())
}

pub fn concat_batch(items: &[Tensor]) -> Tensor {
    let mut shape = items[0].shape().to_vec();
    shape[0] = items.iter().map(|t| t.shape()[0]).sum();
    let mut data = Vec::with_capacity(shape.iter().product());
    for t in items {
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(shape, data)
}

/// Enhanced component: `GN&LR(path(F) + CBAM(F))`.
pub fn enhance_component(
    s: &mut Session,
    f: Var,
    path: impl FnOnce(&mut Session, Var) -> Var,
    attend: impl FnOnce(&mut Session, Var) -> Var,
    norm: impl FnOnce(&mut Session, Var) -> Var,
) -> Var {
    let fp = path(s, f);
    let fa = attend(s, f);
    let sum = s.g.add(fp, fa);
    norm(s, sum)
}

#[derive(Clone, Debug)]
pub struct DdonFull {
    pub embed_low: Conv2d,
    pub embed_high: Conv2d,
    pub embed_r: Conv2d,
    pub embed_l: Conv2d,
    pub msconv: MsConv,
    pub swin: SwinBlock,
    pub itb: Itb,
    pub cbam_low: Cbam,
    pub cbam_high: Cbam,
    pub cbam_r: Cbam,
    pub cbam_l: Cbam,
    pub gn_low: GroupNormLr,
    pub gn_high: GroupNormLr,
    pub gn_r: GroupNormLr,
    pub gn_l: GroupNormLr,
}

/// Ablation without decomposition: raw images embedded directly.
#[derive(Clone, Debug)]
pub struct DdonBypass {
    pub embed_ir: Conv2d,
    pub embed_vi: Conv2d,
}

#[derive(Clone, Debug)]
pub enum DdonBody {
    Full(Box<DdonFull>),
    Bypass(DdonBypass),
}

#[derive(Clone, Debug)]
pub struct Ddon {
    pub body: DdonBody,
    pub head_ir: Conv2d,
    pub head_vi: Conv2d,
    pub decomposition: DecompositionConfig,
}

/// Enhanced features. In full mode also the component embeddings and the
/// enhanced components, both ordered low, high, reflectance, illumination.
#[derive(Clone, Debug)]
pub struct DdonFeatures {
    pub ir_en: Var,
    pub vi_en: Var,
    pub embeddings: Option<[Var; 4]>,
    pub enhanced: Option<[Var; 4]>,
}

impl Ddon {
    pub fn new(
        sc: &mut Scope,
        cfg: &BlockConfig,
        decomposition: DecompositionConfig,
        bypass: bool,
    ) -> Self {
        let c = cfg.channels;
        let slope = cfg.leaky_slope;
        let body = if bypass {
            DdonBody::Bypass(DdonBypass {
                embed_ir: Conv2d::new(sc, "embed_ir", 1, c, 3, 1),
                embed_vi: Conv2d::new(sc, "embed_vi", 1, c, 3, 1),
            })
        } else {
            DdonBody::Full(Box::new(DdonFull {
                embed_low: Conv2d::new(sc, "embed_low", 1, c, 3, 1),
                embed_high: Conv2d::new(sc, "embed_high", 1, c, 3, 1),
                embed_r: Conv2d::new(sc, "embed_r", 1, c, 3, 1),
                embed_l: Conv2d::new(sc, "embed_l", 1, c, 3, 1),
                msconv: MsConv::new(sc, "msconv", cfg),
                swin: SwinBlock::new(sc, "swin", cfg),
                itb: Itb::new(sc, "itb", cfg),
                cbam_low: Cbam::new(sc, "cbam_low", cfg),
                cbam_high: Cbam::new(sc, "cbam_high", cfg),
                cbam_r: Cbam::new(sc, "cbam_r", cfg),
                cbam_l: Cbam::new(sc, "cbam_l", cfg),
                gn_low: GroupNormLr::new(sc, "gn_low", c, cfg.gn_groups, slope),
                gn_high: GroupNormLr::new(sc, "gn_high", c, cfg.gn_groups, slope),
                gn_r: GroupNormLr::new(sc, "gn_r", c, cfg.gn_groups, slope),
                gn_l: GroupNormLr::new(sc, "gn_l", c, cfg.gn_groups, slope),
            }))
        };
        Ddon {
            body,
            head_ir: Conv2d::new(sc, "head_ir", c, 1, 3, 1),
            head_vi: Conv2d::new(sc, "head_vi", c, 1, 3, 1),
            decomposition,
        }
    }

    pub fn is_bypass(&self) -> bool {
        matches!(self.body, DdonBody::Bypass(_))
    }

    pub fn prepare(&self, ir: &Tensor, vi: &Tensor) -> Result<DdonInputs> {
        if self.is_bypass() {
            ensure!(
                ir.shape() == vi.shape(),
                InvalidInput,
                "input batches differ in shape"
            );
            // decomposition is unused; keep the fields shaped for uniformity
            return Ok(DdonInputs {
                ir: ir.clone(),
                vi: vi.clone(),
                low: ir.clone(),
                high: Tensor::zeros(ir.shape().to_vec()),
                reflectance: vi.clone(),
                illumination: Tensor::full(vi.shape().to_vec(), 1.0),
            });
        }
        decompose_batch(ir, vi, &self.decomposition)
    }

    pub fn forward(&self, s: &mut Session, x: &DdonInputs) -> Result<DdonFeatures> {
        match &self.body {
            DdonBody::Bypass(b) => {
                let ir = s.g.constant(x.ir.clone());
                let vi = s.g.constant(x.vi.clone());
                Ok(DdonFeatures {
                    ir_en: b.embed_ir.forward(s, ir),
                    vi_en: b.embed_vi.forward(s, vi),
                    embeddings: None,
                    enhanced: None,
                })
            }
            DdonBody::Full(d) => {
                let low = s.g.constant(x.low.clone());
                let high = s.g.constant(x.high.clone());
                let r = s.g.constant(x.reflectance.clone());
                let l = s.g.constant(x.illumination.clone());
                let f_low = d.embed_low.forward(s, low);
                let f_high = d.embed_high.forward(s, high);
                let f_r = d.embed_r.forward(s, r);
                let f_l = d.embed_l.forward(s, l);

                let low_path = d.swin.forward(s, f_low)?;
                let low_en = enhance_component(
                    s,
                    f_low,
                    |_, _| low_path,
                    |s, f| d.cbam_low.forward(s, f),
                    |s, v| d.gn_low.forward(s, v),
                );
                let high_en = enhance_component(
                    s,
                    f_high,
                    |s, f| d.msconv.forward(s, f),
                    |s, f| d.cbam_high.forward(s, f),
                    |s, v| d.gn_high.forward(s, v),
                );
                let (r_path, l_path) = d.itb.forward(s, f_r, f_l)?;
                let r_en = enhance_component(
                    s,
                    f_r,
                    |_, _| r_path,
                    |s, f| d.cbam_r.forward(s, f),
                    |s, v| d.gn_r.forward(s, v),
                );
                let l_en = enhance_component(
                    s,
                    f_l,
                    |_, _| l_path,
                    |s, f| d.cbam_l.forward(s, f),
                    |s, v| d.gn_l.forward(s, v),
                );
                // Inverse DCT of the summed band spectra equals the spatial sum.
                let ir_en = s.g.add(low_en, high_en);
                let vi_en = s.g.mul(r_en, l_en);
                Ok(DdonFeatures {
                    ir_en,
                    vi_en,
                    embeddings: Some([f_low, f_high, f_r, f_l]),
                    enhanced: Some([low_en, high_en, r_en, l_en]),
                })
            }
        }
    }

    /// Stage-1 image heads: `(I_ir_en, I_vi_en)`, each `(B, 1, H, W)` in `(0, 1)`.
    pub fn reconstruct(&self, s: &mut Session, f: &DdonFeatures) -> (Var, Var) {
        let a = self.head_ir.forward(s, f.ir_en);
        let b = self.head_vi.forward(s, f.vi_en);
        (s.g.sigmoid(a), s.g.sigmoid(b))
    }
}
