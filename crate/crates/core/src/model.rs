//! The assembled two-subnetwork model and full-image fusion.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ddon::{Ddon, DdonInputs, DecompositionConfig};
use crate::error::{ensure, Result};
use crate::ilgfn::Ilgfn;
use crate::imaging::{rgb_to_ycbcr, ycbcr_to_rgb, ImageF, YCbCrImage};
use crate::nn::{BlockConfig, Scope};
use crate::params::{Group, ParamStore, Session};
use crate::tensor::Tensor;

/// Architecture ablations.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Embed raw images directly instead of decomposing them.
    pub without_ddon: bool,
    /// Fuse by channel concat and a 1x1 conv.
    pub without_ilgfn: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub block: BlockConfig,
    pub decomposition: DecompositionConfig,
    pub ablation: Ablation,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.block.validate()?;
        self.decomposition.validate()
    }
}

const DDON_SEED: u64 = 0x6464_6f6e;
const ILGFN_SEED: u64 = 0x696c_6766;

pub struct FusionModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub ddon: Ddon,
    pub ilgfn: Ilgfn,
}

impl FusionModel {
    /// Parameters named `ddon.*` / `ilgfn.*`, each subnetwork drawn from its
    /// own seeded stream.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let ddon = {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ DDON_SEED);
            let mut root = Scope::new(&mut params, &mut rng, Group::Ddon);
            let mut sc = root.sub("ddon");
            Ddon::new(
                &mut sc,
                &config.block,
                config.decomposition.clone(),
                config.ablation.without_ddon,
            )
        };
        let ilgfn = {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ILGFN_SEED);
            let mut root = Scope::new(&mut params, &mut rng, Group::Ilgfn);
            let mut sc = root.sub("ilgfn");
            Ilgfn::new(&mut sc, &config.block, config.ablation.without_ilgfn)?
        };
        Ok(FusionModel {
            config: config.clone(),
            params,
            ddon,
            ilgfn,
        })
    }

    /// SHA-256 over every DDON parameter name, shape and f32 value.
    pub fn ddon_digest(&self) -> [u8; 32] {
        group_digest(&self.params, Group::Ddon)
    }

    pub fn prepare(&self, ir: &Tensor, vi: &Tensor) -> Result<DdonInputs> {
        self.ddon.prepare(ir, vi)
    }

    /// Frozen DDON features `(F_ir_en, F_vi_en)`.
    pub fn enhance(&self, x: &DdonInputs) -> Result<(Tensor, Tensor)> {
        let mut s = Session::frozen(&self.params);
        let f = self.ddon.forward(&mut s, x)?;
        Ok((s.g.value(f.ir_en).clone(), s.g.value(f.vi_en).clone()))
    }

    /// Fused luminance `(B, 1, H, W)` from single-channel batches.
    pub fn fuse_luma(&self, ir: &Tensor, vi: &Tensor) -> Result<Tensor> {
        let x = self.prepare(ir, vi)?;
        let mut s = Session::frozen(&self.params);
        let f = self.ddon.forward(&mut s, &x)?;
        let fu = self.ilgfn.forward(&mut s, f.vi_en, f.ir_en)?;
        let y = self.ilgfn.recon.forward(&mut s, fu);
        ensure!(
            s.g.value(y).all_finite(),
            Numeric,
            "non-finite fused output"
        );
        Ok(s.g.value(y).clone())
    }
}

pub fn group_digest(params: &ParamStore, group: Group) -> [u8; 32] {
    let mut h = Sha256::new();
    for e in params.entries().iter().filter(|e| e.group == group) {
        h.update((e.name.len() as u64).to_le_bytes());
        h.update(e.name.as_bytes());
        for &d in e.value.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for &v in e.value.data() {
            h.update((v as f32).to_le_bytes());
        }
    }
    h.finalize().into()
}

pub fn plane_tensor(img: &ImageF) -> Tensor {
    Tensor::from_vec(
        vec![1, 1, img.height(), img.width()],
        img.plane(0).iter().copied().collect(),
    )
}

pub fn tensor_plane(t: &Tensor) -> Result<ImageF> {
    let (h, w) = (t.shape()[2], t.shape()[3]);
    ImageF::from_clamped(
        ndarray::Array3::from_shape_vec((1, h, w), t.data().to_vec()).expect("plane shape"),
    )
}

/// Fuses one aligned pair. The infrared image is reduced to luminance; an RGB
/// visible image contributes its Y plane and keeps its chroma, a grayscale
/// one yields a grayscale result.
pub fn fuse_image(model: &FusionModel, ir: &ImageF, vi: &ImageF) -> Result<ImageF> {
    ensure!(
        ir.same_size(vi),
        InvalidInput,
        "infrared {}x{} and visible {}x{} are not aligned",
        ir.height(),
        ir.width(),
        vi.height(),
        vi.width()
    );
    ensure!(
        matches!(vi.channels(), 1 | 3),
        InvalidInput,
        "visible image must have 1 or 3 channels, got {}",
        vi.channels()
    );
    let ir_y = plane_tensor(&ir.luma());
    if vi.channels() == 1 {
        let y = model.fuse_luma(&ir_y, &plane_tensor(vi))?;
        return tensor_plane(&y);
    }
    let ycc = rgb_to_ycbcr(vi)?;
    let y = model.fuse_luma(&ir_y, &plane_tensor(&ycc.y))?;
    ycbcr_to_rgb(&YCbCrImage {
        y: tensor_plane(&y)?,
        cb: ycc.cb,
        cr: ycc.cr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::small_cfg;
    use ndarray::Array3;

    fn small() -> ModelConfig {
        ModelConfig {
            block: small_cfg(),
            ..Default::default()
        }
    }

    fn image(c: usize, h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f64) -> ImageF {
        ImageF::new(Array3::from_shape_fn((c, h, w), |(c, y, x)| f(c, y, x))).unwrap()
    }

    #[test]
    fn groups_are_disjoint_and_seeded() {
        let m = FusionModel::new(&small(), 3).unwrap();
        for e in m.params.entries() {
            let want = if e.name.starts_with("ddon.") {
                Group::Ddon
            } else {
                Group::Ilgfn
            };
            assert_eq!(e.group, want, "{}", e.name);
            assert!(e.name.starts_with("ddon.") || e.name.starts_with("ilgfn."));
        }
        let again = FusionModel::new(&small(), 3).unwrap();
        assert_eq!(m.ddon_digest(), again.ddon_digest());
        assert_ne!(
            m.ddon_digest(),
            FusionModel::new(&small(), 4).unwrap().ddon_digest()
        );
        assert_eq!(
            group_digest(&m.params, Group::Ilgfn),
            group_digest(&again.params, Group::Ilgfn)
        );
    }

    #[test]
    fn fuse_preserves_chroma_and_size() {
        let m = FusionModel::new(&small(), 5).unwrap();
        let ir = image(1, 12, 16, |_, y, x| 0.3 + 0.02 * (x + y) as f64);
        // near-neutral colour keeps the RGB result inside the gamut
        let vi = image(3, 12, 16, |c, y, x| {
            0.45 + 0.01 * c as f64 + 0.005 * ((x * y) % 7) as f64
        });
        let out = fuse_image(&m, &ir, &vi).unwrap();
        assert_eq!((out.channels(), out.height(), out.width()), (3, 12, 16));
        assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let (a, b) = (rgb_to_ycbcr(&out).unwrap(), rgb_to_ycbcr(&vi).unwrap());
        for (p, q) in [(&a.cb, &b.cb), (&a.cr, &b.cr)] {
            let d = (p.data() - q.data())
                .mapv(f64::abs)
                .fold(0.0f64, |m, &v| m.max(v));
            assert!(d < 1e-6, "chroma moved by {d}");
        }
        assert_eq!(out, fuse_image(&m, &ir, &vi).unwrap());
    }

    #[test]
    fn fuse_handles_gray_and_rejects_misaligned() {
        let m = FusionModel::new(&small(), 6).unwrap();
        let ir = image(1, 8, 8, |_, y, _| 0.1 * y as f64);
        let vi = image(1, 8, 8, |_, _, x| 0.1 * x as f64);
        assert_eq!(fuse_image(&m, &ir, &vi).unwrap().channels(), 1);
        let wide = image(3, 8, 12, |_, _, _| 0.5);
        assert!(matches!(
            fuse_image(&m, &ir, &wide),
            Err(crate::Error::InvalidInput(_))
        ));
    }

    #[test]
    fn ablations_build() {
        for (without_ddon, without_ilgfn) in [(true, false), (false, true), (true, true)] {
            let cfg = ModelConfig {
                ablation: Ablation {
                    without_ddon,
                    without_ilgfn,
                },
                ..small()
            };
            let m = FusionModel::new(&cfg, 1).unwrap();
            let out = m
                .fuse_luma(
                    &Tensor::full(vec![1, 1, 8, 8], 0.3),
                    &Tensor::full(vec![1, 1, 8, 8], 0.6),
                )
                .unwrap();
            assert_eq!(out.shape(), &[1, 1, 8, 8]);
        }
    }
}
