//! Interactive local-global fusion network and the reconstruction head.

use crate::error::{ensure, Result};
use crate::graph::Var;
use crate::nn::{BlockConfig, Conv2d, Itb, Lia, Rdscb, Scope, SwinBlock};
use crate::params::Session;

pub const LOCAL_KERNELS: [usize; 3] = [3, 5, 7];

/// `RDSCB_fu(LIA(RDSCB_vi(F_vi), RDSCB_ir(F_ir)))`.
pub fn local_compose(
    s: &mut Session,
    f_vi: Var,
    f_ir: Var,
    rdscb_vi: impl FnOnce(&mut Session, Var) -> Var,
    rdscb_ir: impl FnOnce(&mut Session, Var) -> Var,
    lia: impl FnOnce(&mut Session, Var, Var) -> Result<Var>,
    rdscb_fu: impl FnOnce(&mut Session, Var) -> Var,
) -> Result<Var> {
    let vi = rdscb_vi(s, f_vi);
    let ir = rdscb_ir(s, f_ir);
    let fused = lia(s, vi, ir)?;
    Ok(rdscb_fu(s, fused))
}

#[derive(Clone, Debug)]
pub struct LocalPath {
    pub kernel: usize,
    pub rdscb_vi: Rdscb,
    pub rdscb_ir: Rdscb,
    pub lia: Lia,
    pub rdscb_fu: Rdscb,
}

impl LocalPath {
    pub fn new(sc: &mut Scope, cfg: &BlockConfig, kernel: usize) -> Result<Self> {
        let mut sc = sc.sub(&format!("local{kernel}"));
        Ok(LocalPath {
            kernel,
            rdscb_vi: Rdscb::new(&mut sc, "rdscb_vi", cfg, kernel)?,
            rdscb_ir: Rdscb::new(&mut sc, "rdscb_ir", cfg, kernel)?,
            lia: Lia::new(&mut sc, "lia", cfg, kernel),
            rdscb_fu: Rdscb::new(&mut sc, "rdscb_fu", cfg, kernel)?,
        })
    }

    pub fn forward(&self, s: &mut Session, f_vi: Var, f_ir: Var) -> Result<Var> {
        local_compose(
            s,
            f_vi,
            f_ir,
            |s, x| self.rdscb_vi.forward(s, x),
            |s, x| self.rdscb_ir.forward(s, x),
            |s, a, b| self.lia.forward(s, a, b),
            |s, x| self.rdscb_fu.forward(s, x),
        )
    }
}

/// Local-global aggregation: 1x1 conv (3C -> C), two Swin blocks, 3x3 conv.
#[derive(Clone, Debug)]
pub struct Lga {
    pub input: Conv2d,
    pub swin: [SwinBlock; 2],
    pub output: Conv2d,
}

impl Lga {
    pub fn new(sc: &mut Scope, cfg: &BlockConfig) -> Self {
        let mut sc = sc.sub("lga");
        let c = cfg.channels;
        Lga {
            input: Conv2d::new(&mut sc, "input", 3 * c, c, 1, 1),
            swin: [
                SwinBlock::new(&mut sc, "swin0", cfg),
                SwinBlock::new(&mut sc, "swin1", cfg),
            ],
            output: Conv2d::new(&mut sc, "output", c, c, 3, 1),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let y = self.input.forward(s, x);
        let y = self.swin[0].forward(s, y)?;
        let y = self.swin[1].forward(s, y)?;
        Ok(self.output.forward(s, y))
    }
}

#[derive(Clone, Debug)]
pub struct IlgfnFull {
    pub local: Vec<LocalPath>,
    pub local_fuse: Conv2d,
    pub global: Itb,
    pub lga: Lga,
}

#[derive(Clone, Debug)]
pub enum IlgfnBody {
    Full(Box<IlgfnFull>),
    /// Ablation: channel concat then a 1x1 conv (2C -> C).
    Bypass(Conv2d),
}

/// Three 3x3 convs, C -> C -> C/2 -> 1, LeakyReLU between, sigmoid output.
#[derive(Clone, Debug)]
pub struct ReconHead {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub conv3: Conv2d,
    pub slope: f64,
}

impl ReconHead {
    pub fn new(sc: &mut Scope, cfg: &BlockConfig) -> Self {
        let mut sc = sc.sub("recon");
        let c = cfg.channels;
        let half = (c / 2).max(1);
        ReconHead {
            conv1: Conv2d::new(&mut sc, "conv1", c, c, 3, 1),
            conv2: Conv2d::new(&mut sc, "conv2", c, half, 3, 1),
            conv3: Conv2d::new(&mut sc, "conv3", half, 1, 3, 1),
            slope: cfg.leaky_slope,
        }
    }

    pub fn forward(&self, s: &mut Session, f: Var) -> Var {
        let y = self.conv1.forward(s, f);
        let y = s.g.leaky_relu(y, self.slope);
        let y = self.conv2.forward(s, y);
        let y = s.g.leaky_relu(y, self.slope);
        let y = self.conv3.forward(s, y);
        s.g.sigmoid(y)
    }
}

#[derive(Clone, Debug)]
pub struct Ilgfn {
    pub body: IlgfnBody,
    pub recon: ReconHead,
}

impl Ilgfn {
    pub fn new(sc: &mut Scope, cfg: &BlockConfig, bypass: bool) -> Result<Self> {
        let c = cfg.channels;
        let body = if bypass {
            IlgfnBody::Bypass(Conv2d::new(sc, "concat_fuse", 2 * c, c, 1, 1))
        } else {
            let local = LOCAL_KERNELS
                .iter()
                .map(|&n| LocalPath::new(sc, cfg, n))
                .collect::<Result<Vec<_>>>()?;
            IlgfnBody::Full(Box::new(IlgfnFull {
                local,
                local_fuse: Conv2d::new(sc, "local_fuse", 3 * c, c, 1, 1),
                global: Itb::new(sc, "global", cfg),
                lga: Lga::new(sc, cfg),
            }))
        };
        Ok(Ilgfn {
            body,
            recon: ReconHead::new(sc, cfg),
        })
    }

    /// Fused features `F_fu`, `(B, C, H, W)`.
    pub fn forward(&self, s: &mut Session, f_vi: Var, f_ir: Var) -> Result<Var> {
        ensure!(
            s.g.shape(f_vi) == s.g.shape(f_ir),
            InvalidInput,
            "visible {:?} and infrared {:?} features differ in shape",
            s.g.shape(f_vi),
            s.g.shape(f_ir)
        );
        match &self.body {
            IlgfnBody::Bypass(conv) => {
                let cat = s.g.concat(&[f_vi, f_ir], 1);
                Ok(conv.forward(s, cat))
            }
            IlgfnBody::Full(f) => {
                let locals = f
                    .local
                    .iter()
                    .map(|p| p.forward(s, f_vi, f_ir))
                    .collect::<Result<Vec<_>>>()?;
                let cat = s.g.concat(&locals, 1);
                let local = f.local_fuse.forward(s, cat);
                let (vi_g, ir_g) = f.global.forward(s, f_vi, f_ir)?;
                let all = s.g.concat(&[local, vi_g, ir_g], 1);
                f.lga.forward(s, all)
            }
        }
    }
}
