//! Named gradient checks over every loss and every trainable block, on
//! small probe shapes (`C = 4`, 8x8 maps, window 4).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check, check_fn, BlockObjective, GradcheckOptions, GradcheckReport};
use crate::ddon::{decompose_batch, Ddon, DecompositionConfig};
use crate::graph::Var;
use crate::ilgfn::{Ilgfn, Lga, LocalPath, ReconHead};
use crate::losses::{self, LossWeights, PerceptualExtractor, EPSILON};
use crate::nn::{
    BlockConfig, Cbam, Conv2d, GroupNormLr, Isa, Itb, LayerNorm, Lia, Linear, Mlp, MsConv, Msa,
    Rdscb, Scope, SwinBlock,
};
use crate::params::{Group, ParamStore, Session};
use crate::tensor::Tensor;

/// Pass threshold on the relative error.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckKind {
    Loss,
    Block,
}

pub struct SuiteCheck {
    pub name: &'static str,
    pub kind: CheckKind,
    run: fn(&GradcheckOptions) -> GradcheckReport,
}

impl SuiteCheck {
    pub fn run(&self, opts: &GradcheckOptions) -> GradcheckReport {
        (self.run)(opts)
    }
}

fn probe_cfg() -> BlockConfig {
    BlockConfig {
        channels: 4,
        window_size: 4,
        heads: 2,
        gn_groups: 2,
        ..Default::default()
    }
}

/// Uniform values in `[lo, hi)`.
fn uniform(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
}

fn img(seed: u64) -> Tensor {
    uniform(&[2, 1, 16, 16], seed, 0.05, 0.95)
}

fn feat(seed: u64) -> Tensor {
    uniform(&[1, 4, 8, 8], seed, -1.0, 1.0)
}

fn block(
    name: &str,
    group: Group,
    opts: &GradcheckOptions,
    inputs: &[Tensor],
    build: impl FnOnce(&mut Scope) -> Box<dyn Fn(&mut Session, &[Var]) -> Var>,
) -> GradcheckReport {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xb10c);
    let forward = build(&mut Scope::new(&mut store, &mut rng, group));
    let obj = BlockObjective {
        forward: |s: &mut Session, v: &[Var]| forward(s, v),
        weight_seed: opts.seed ^ 0x77,
    };
    check(name, &obj, inputs, &store, opts)
}

fn charbonnier(o: &GradcheckOptions) -> GradcheckReport {
    check_fn(
        "charbonnier",
        &[img(1), img(2)],
        |g, v| losses::charbonnier(g, v[0], v[1], EPSILON).unwrap(),
        o,
    )
}

fn illumination(o: &GradcheckOptions) -> GradcheckReport {
    check_fn(
        "illumination",
        &[img(3), img(4)],
        |g, v| losses::illumination(g, v[0], v[1], EPSILON).unwrap(),
        o,
    )
}

fn tv(o: &GradcheckOptions) -> GradcheckReport {
    check_fn("tv", &[img(5)], |g, v| losses::tv(g, v[0]), o)
}

fn perceptual(o: &GradcheckOptions) -> GradcheckReport {
    let ex = PerceptualExtractor::new(3);
    check_fn(
        "perceptual",
        &[img(6), img(7)],
        |g, v| losses::perceptual(g, &ex, v[0], v[1]).unwrap(),
        o,
    )
}

fn intensity(o: &GradcheckOptions) -> GradcheckReport {
    check_fn(
        "intensity",
        &[img(8), img(9), img(10)],
        |g, v| losses::intensity(g, v[0], v[1], v[2]).unwrap(),
        o,
    )
}

fn texture(o: &GradcheckOptions) -> GradcheckReport {
    check_fn(
        "texture",
        &[img(11), img(12), img(13)],
        |g, v| losses::texture(g, v[0], v[1], v[2]).unwrap(),
        o,
    )
}

fn loss_do(o: &GradcheckOptions) -> GradcheckReport {
    let ex = PerceptualExtractor::new(4);
    let w = LossWeights::default();
    check_fn(
        "loss_do",
        &[img(14), img(15), img(16), img(17)],
        |g, v| {
            losses::loss_do(g, v[0], v[1], v[2], v[3], &w, &ex)
                .unwrap()
                .total
        },
        o,
    )
}

fn loss_fu(o: &GradcheckOptions) -> GradcheckReport {
    let w = LossWeights::default();
    check_fn(
        "loss_fu",
        &[img(18), img(19), img(20)],
        |g, v| losses::loss_fu(g, v[0], v[1], v[2], &w).unwrap().total,
        o,
    )
}

fn linear(o: &GradcheckOptions) -> GradcheckReport {
    block(
        "linear",
        Group::Ddon,
        o,
        &[uniform(&[2, 3, 4], 21, -1.0, 1.0)],
        |sc| {
            let l = Linear::new(sc, "linear", 4, 5, false);
            Box::new(move |s, v| l.forward(s, v[0]))
        },
    )
}

fn conv(o: &GradcheckOptions) -> GradcheckReport {
    block("conv", Group::Ddon, o, &[feat(22)], |sc| {
        let c = Conv2d::new(sc, "conv", 4, 6, 3, 2);
        Box::new(move |s, v| c.forward(s, v[0]))
    })
}

fn layer_norm(o: &GradcheckOptions) -> GradcheckReport {
    block(
        "layer_norm",
        Group::Ddon,
        o,
        &[uniform(&[2, 3, 4], 23, -1.0, 1.0)],
        |sc| {
            let l = LayerNorm::new(sc, "ln", 4);
            Box::new(move |s, v| l.forward(s, v[0]))
        },
    )
}

fn gn_lr(o: &GradcheckOptions) -> GradcheckReport {
    block("gn_lr", Group::Ddon, o, &[feat(24)], |sc| {
        let l = GroupNormLr::new(sc, "gn", 4, 2, 0.2);
        Box::new(move |s, v| l.forward(s, v[0]))
    })
}

fn mlp(o: &GradcheckOptions) -> GradcheckReport {
    block(
        "mlp",
        Group::Ddon,
        o,
        &[uniform(&[2, 3, 4], 25, -1.0, 1.0)],
        |sc| {
            let m = Mlp::new(sc, "mlp", 4, 8, false);
            Box::new(move |s, v| m.forward(s, v[0]))
        },
    )
}

fn msa(o: &GradcheckOptions) -> GradcheckReport {
    block(
        "msa",
        Group::Ddon,
        o,
        &[uniform(&[2, 5, 4], 26, -1.0, 1.0)],
        |sc| {
            let m = Msa::new(sc, "msa", 4, 2, false);
            Box::new(move |s, v| m.forward(s, v[0]).unwrap())
        },
    )
}

fn isa(o: &GradcheckOptions) -> GradcheckReport {
    let x = [
        uniform(&[2, 5, 4], 27, -1.0, 1.0),
        uniform(&[2, 5, 4], 28, -1.0, 1.0),
    ];
    block("isa", Group::Ddon, o, &x, |sc| {
        let m = Isa::new(sc, "isa", 4, 2, false);
        Box::new(move |s, v| {
            let (a, b) = m.forward(s, v[0], v[1]).unwrap();
            s.g.concat(&[a, b], 2)
        })
    })
}

fn swin(o: &GradcheckOptions) -> GradcheckReport {
    block("swin", Group::Ddon, o, &[feat(29)], |sc| {
        let b = SwinBlock::new(sc, "swin", &probe_cfg());
        Box::new(move |s, v| b.forward(s, v[0]).unwrap())
    })
}

fn itb(o: &GradcheckOptions) -> GradcheckReport {
    block("itb", Group::Ddon, o, &[feat(30), feat(31)], |sc| {
        let b = Itb::new(sc, "itb", &probe_cfg());
        Box::new(move |s, v| {
            let (a, b) = b.forward(s, v[0], v[1]).unwrap();
            s.g.concat(&[a, b], 1)
        })
    })
}

fn msconv(o: &GradcheckOptions) -> GradcheckReport {
    block("msconv", Group::Ddon, o, &[feat(32)], |sc| {
        let b = MsConv::new(sc, "msconv", &probe_cfg());
        Box::new(move |s, v| b.forward(s, v[0]))
    })
}

fn cbam(o: &GradcheckOptions) -> GradcheckReport {
    block("cbam", Group::Ddon, o, &[feat(33)], |sc| {
        let b = Cbam::new(sc, "cbam", &probe_cfg());
        Box::new(move |s, v| b.forward(s, v[0]))
    })
}

fn rdscb(o: &GradcheckOptions) -> GradcheckReport {
    block("rdscb", Group::Ilgfn, o, &[feat(34)], |sc| {
        let b = Rdscb::new(sc, "rdscb", &probe_cfg(), 3).expect("odd kernel");
        Box::new(move |s, v| b.forward(s, v[0]))
    })
}

fn lia(o: &GradcheckOptions) -> GradcheckReport {
    block("lia", Group::Ilgfn, o, &[feat(35), feat(36)], |sc| {
        let b = Lia::new(sc, "lia", &probe_cfg(), 3);
        Box::new(move |s, v| b.forward(s, v[0], v[1]).unwrap())
    })
}

fn local_path(o: &GradcheckOptions) -> GradcheckReport {
    block("local_path", Group::Ilgfn, o, &[feat(37), feat(38)], |sc| {
        let b = LocalPath::new(sc, &probe_cfg(), 5).expect("odd kernel");
        Box::new(move |s, v| b.forward(s, v[0], v[1]).unwrap())
    })
}

fn lga(o: &GradcheckOptions) -> GradcheckReport {
    block(
        "lga",
        Group::Ilgfn,
        o,
        &[uniform(&[1, 12, 8, 8], 39, -1.0, 1.0)],
        |sc| {
            let b = Lga::new(sc, &probe_cfg());
            Box::new(move |s, v| b.forward(s, v[0]).unwrap())
        },
    )
}

fn recon(o: &GradcheckOptions) -> GradcheckReport {
    block("recon", Group::Ilgfn, o, &[feat(40)], |sc| {
        let b = ReconHead::new(sc, &probe_cfg());
        Box::new(move |s, v| b.forward(s, v[0]))
    })
}

fn ilgfn(o: &GradcheckOptions) -> GradcheckReport {
    block("ilgfn", Group::Ilgfn, o, &[feat(41), feat(42)], |sc| {
        let b = Ilgfn::new(sc, &probe_cfg(), false).expect("valid config");
        Box::new(move |s, v| {
            let f = b.forward(s, v[0], v[1]).unwrap();
            b.recon.forward(s, f)
        })
    })
}

/// DDON with both reconstruction heads; the decomposition is computed
/// outside the graph, so only parameters are checked.
fn ddon(o: &GradcheckOptions) -> GradcheckReport {
    let ir = uniform(&[1, 1, 8, 8], 43, 0.1, 0.9);
    let vi = uniform(&[1, 1, 8, 8], 44, 0.1, 0.9);
    let x = decompose_batch(&ir, &vi, &DecompositionConfig::default()).expect("valid batch");
    block("ddon", Group::Ddon, o, &[], |sc| {
        let d = Ddon::new(sc, &probe_cfg(), DecompositionConfig::default(), false);
        Box::new(move |s, _| {
            let f = d.forward(s, &x).unwrap();
            let (a, b) = d.reconstruct(s, &f);
            s.g.concat(&[a, b], 1)
        })
    })
}

pub fn checks() -> Vec<SuiteCheck> {
    use CheckKind::{Block, Loss};
    let c = |name, kind, run| SuiteCheck { name, kind, run };
    vec![
        c("charbonnier", Loss, charbonnier),
        c("illumination", Loss, illumination),
        c("tv", Loss, tv),
        c("perceptual", Loss, perceptual),
        c("intensity", Loss, intensity),
        c("texture", Loss, texture),
        c("loss_do", Loss, loss_do),
        c("loss_fu", Loss, loss_fu),
        c("linear", Block, linear),
        c("conv", Block, conv),
        c("layer_norm", Block, layer_norm),
        c("gn_lr", Block, gn_lr),
        c("mlp", Block, mlp),
        c("msa", Block, msa),
        c("isa", Block, isa),
        c("swin", Block, swin),
        c("itb", Block, itb),
        c("msconv", Block, msconv),
        c("cbam", Block, cbam),
        c("rdscb", Block, rdscb),
        c("lia", Block, lia),
        c("local_path", Block, local_path),
        c("lga", Block, lga),
        c("recon", Block, recon),
        c("ilgfn", Block, ilgfn),
        c("ddon", Block, ddon),
    ]
}

pub fn find(name: &str) -> Option<SuiteCheck> {
    checks().into_iter().find(|c| c.name == name)
}

/// Suite options: four sampled coordinates per tensor and a kink threshold
/// tight enough to catch the many leaky-ReLU crossings a single shared
/// parameter sees in the deep fusion stack.
pub fn default_options() -> GradcheckOptions {
    GradcheckOptions {
        kink_threshold: 3e-4,
        coords_per_tensor: 4,
        ..Default::default()
    }
}
