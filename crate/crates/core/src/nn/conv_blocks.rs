use crate::error::{ensure, Result};
use crate::graph::Var;
use crate::params::{Init, ParamId, Session};

use super::layers::{Conv2d, GroupNormLr, Linear};
use super::{BlockConfig, Scope};

/// Parallel convolutions of several kernel sizes, concatenated and mixed by
/// a 1x1 convolution.
#[derive(Clone, Debug)]
pub struct MsConv {
    pub branches: Vec<Conv2d>,
    pub fuse: Conv2d,
    pub slope: f64,
}

impl MsConv {
    pub fn new(sc: &mut Scope, name: &str, cfg: &BlockConfig) -> Self {
        let mut sc = sc.sub(name);
        let c = cfg.channels;
        let part = c / cfg.msconv_kernels.len();
        let branches = cfg
            .msconv_kernels
            .iter()
            .map(|&k| Conv2d::new(&mut sc, &format!("k{k}"), c, part, k, 1))
            .collect();
        MsConv {
            branches,
            fuse: Conv2d::new(&mut sc, "fuse", c, c, 1, 1),
            slope: cfg.leaky_slope,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Var {
        let outs: Vec<Var> = self
            .branches
            .iter()
            .map(|b| {
                let y = b.forward(s, x);
                s.g.leaky_relu(y, self.slope)
            })
            .collect();
        let cat = s.g.concat(&outs, 1);
        self.fuse.forward(s, cat)
    }
}

/// Channel gate followed by spatial gate.
#[derive(Clone, Debug)]
pub struct Cbam {
    pub fc1: Linear,
    pub fc2: Linear,
    pub spatial: Conv2d,
    pub slope: f64,
}

pub struct CbamOutput {
    pub out: Var,
    /// `(B, C, 1, 1)`
    pub channel_gate: Var,
    /// `(B, 1, H, W)`
    pub spatial_gate: Var,
}

impl Cbam {
    pub fn new(sc: &mut Scope, name: &str, cfg: &BlockConfig) -> Self {
        let mut sc = sc.sub(name);
        let c = cfg.channels;
        let hidden = (c / cfg.cbam_reduction).max(1);
        Cbam {
            fc1: Linear::new(&mut sc, "fc1", c, hidden, false),
            fc2: Linear::new(&mut sc, "fc2", hidden, c, false),
            spatial: Conv2d::new(&mut sc, "spatial", 2, 1, 7, 1),
            slope: cfg.leaky_slope,
        }
    }

    fn channel_mlp(&self, s: &mut Session, pooled: Var) -> Var {
        let h = self.fc1.forward(s, pooled);
        let h = s.g.leaky_relu(h, self.slope);
        self.fc2.forward(s, h)
    }

    pub fn forward_full(&self, s: &mut Session, x: Var) -> CbamOutput {
        let shape = s.g.shape(x).to_vec();
        let (b, c) = (shape[0], shape[1]);
        let avg = s.g.mean_axes(x, &[2, 3]);
        let avg = s.g.reshape(avg, &[b, c]);
        let mx = s.g.max_axes(x, &[2, 3]);
        let mx = s.g.reshape(mx, &[b, c]);
        let a = self.channel_mlp(s, avg);
        let m = self.channel_mlp(s, mx);
        let logits = s.g.add(a, m);
        let gate = s.g.sigmoid(logits);
        let channel_gate = s.g.reshape(gate, &[b, c, 1, 1]);
        let xc = s.g.mul(x, channel_gate);

        let avg_c = s.g.mean_axes(xc, &[1]);
        let max_c = s.g.max_axes(xc, &[1]);
        let pooled = s.g.concat(&[avg_c, max_c], 1);
        let logits = self.spatial.forward(s, pooled);
        let spatial_gate = s.g.sigmoid(logits);
        let out = s.g.mul(xc, spatial_gate);
        CbamOutput {
            out,
            channel_gate,
            spatial_gate,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Var {
        self.forward_full(s, x).out
    }
}

/// Residual depthwise-separable block: `m` rounds of depthwise(n), LeakyReLU,
/// pointwise, LeakyReLU; residual add; GN&LR.
#[derive(Clone, Debug)]
pub struct Rdscb {
    pub depthwise: Vec<Conv2d>,
    pub pointwise: Vec<Conv2d>,
    pub norm: GroupNormLr,
    pub kernel: usize,
    pub slope: f64,
}

impl Rdscb {
    pub fn new(sc: &mut Scope, name: &str, cfg: &BlockConfig, kernel: usize) -> Result<Self> {
        ensure!(
            kernel % 2 == 1,
            Config,
            "rdscb kernel must be odd, got {kernel}"
        );
        ensure!(cfg.rdscb_repeat >= 1, Config, "rdscb repeat must be >= 1");
        let mut sc = sc.sub(name);
        let c = cfg.channels;
        let z = cfg.residual_zero_init;
        let mut depthwise = Vec::new();
        let mut pointwise = Vec::new();
        for r in 0..cfg.rdscb_repeat {
            depthwise.push(Conv2d::with_init(
                &mut sc,
                &format!("dw{r}"),
                c,
                c,
                kernel,
                c,
                false,
            ));
            // Zeroing the last pointwise conv makes the inner branch output 0.
            let last = r + 1 == cfg.rdscb_repeat;
            pointwise.push(Conv2d::with_init(
                &mut sc,
                &format!("pw{r}"),
                c,
                c,
                1,
                1,
                z && last,
            ));
        }
        Ok(Rdscb {
            depthwise,
            pointwise,
            norm: GroupNormLr::new(&mut sc, "gn", c, cfg.gn_groups, cfg.leaky_slope),
            kernel,
            slope: cfg.leaky_slope,
        })
    }

    /// Output of the depthwise convolution of round `round`.
    pub fn depthwise_stage(&self, s: &mut Session, x: Var, round: usize) -> Var {
        self.depthwise[round].forward(s, x)
    }

    pub fn inner(&self, s: &mut Session, x: Var) -> Var {
        let mut f = x;
        for (dw, pw) in self.depthwise.iter().zip(&self.pointwise) {
            let y = dw.forward(s, f);
            let y = s.g.leaky_relu(y, self.slope);
            let y = pw.forward(s, y);
            f = s.g.leaky_relu(y, self.slope);
        }
        f
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Var {
        let f = self.inner(s, x);
        let r = s.g.add(f, x);
        self.norm.forward(s, r)
    }
}

/// Local interaction attention over the channel concat of two streams.
#[derive(Clone, Debug)]
pub struct Lia {
    pub fc1: Linear,
    pub fc2: Linear,
    pub alpha: ParamId,
    pub beta: ParamId,
    pub conv: Conv2d,
    pub slope: f64,
}

pub struct LiaOutput {
    pub out: Var,
    /// Pre-sigmoid attention logits, `(B, 2C)`.
    pub att: Var,
    pub avg_branch: Var,
    pub std_branch: Var,
}

pub const LIA_STD_EPS: f64 = 1e-12;

impl Lia {
    pub fn new(sc: &mut Scope, name: &str, cfg: &BlockConfig, kernel: usize) -> Self {
        let mut sc = sc.sub(name);
        let c = cfg.channels;
        let hidden = (c / 2).max(1);
        Lia {
            fc1: Linear::new(&mut sc, "fc1", 2 * c, hidden, false),
            fc2: Linear::new(&mut sc, "fc2", hidden, 2 * c, false),
            alpha: sc.param("alpha", &[1], Init::Ones),
            beta: sc.param("beta", &[1], Init::Ones),
            conv: Conv2d::new(&mut sc, "conv", 2 * c, c, kernel, 1),
            slope: cfg.leaky_slope,
        }
    }

    fn mlp(&self, s: &mut Session, x: Var) -> Var {
        let h = self.fc1.forward(s, x);
        let h = s.g.leaky_relu(h, self.slope);
        self.fc2.forward(s, h)
    }

    pub fn forward_full(&self, s: &mut Session, f1: Var, f2: Var) -> Result<LiaOutput> {
        ensure!(
            s.g.shape(f1) == s.g.shape(f2),
            InvalidInput,
            "lia inputs differ in shape: {:?} vs {:?}",
            s.g.shape(f1),
            s.g.shape(f2)
        );
        let fp = s.g.concat(&[f1, f2], 1);
        let shape = s.g.shape(fp).to_vec();
        let (b, c2) = (shape[0], shape[1]);
        let mean = s.g.mean_axes(fp, &[2, 3]);
        let centered = s.g.sub(fp, mean);
        let sq = s.g.square(centered);
        let var = s.g.mean_axes(sq, &[2, 3]);
        let var = s.g.add_scalar(var, LIA_STD_EPS);
        let std = s.g.sqrt(var);
        let mean = s.g.reshape(mean, &[b, c2]);
        let std = s.g.reshape(std, &[b, c2]);
        let avg_branch = self.mlp(s, mean);
        let std_branch = self.mlp(s, std);
        let (al, be) = (s.p(self.alpha), s.p(self.beta));
        let al = s.g.reshape(al, &[1, 1]);
        let be = s.g.reshape(be, &[1, 1]);
        let a = s.g.mul(avg_branch, al);
        let bb = s.g.mul(std_branch, be);
        let att = s.g.add(a, bb);
        let gate = s.g.sigmoid(att);
        let gate = s.g.reshape(gate, &[b, c2, 1, 1]);
        let gated = s.g.mul(fp, gate);
        let out = self.conv.forward(s, gated);
        Ok(LiaOutput {
            out,
            att,
            avg_branch,
            std_branch,
        })
    }

    pub fn forward(&self, s: &mut Session, f1: Var, f2: Var) -> Result<Var> {
        Ok(self.forward_full(s, f1, f2)?.out)
    }
}
