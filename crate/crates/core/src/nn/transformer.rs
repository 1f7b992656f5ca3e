use crate::error::Result;
use crate::graph::Var;
use crate::params::Session;

use super::attention::{Isa, Msa};
use super::layers::{LayerNorm, Mlp};
use super::window::{window_partition, window_reverse, WindowSet};
use super::{BlockConfig, Scope};

/// Interactive transformer block: pre-norm ISA and pre-norm MLP, each with a
/// residual, computed window-wise for two streams.
#[derive(Clone, Debug)]
pub struct Itb {
    pub ln1a: LayerNorm,
    pub ln1b: LayerNorm,
    pub isa: Isa,
    pub ln2a: LayerNorm,
    pub ln2b: LayerNorm,
    pub mlp_a: Mlp,
    pub mlp_b: Mlp,
    pub window: usize,
}

impl Itb {
    pub fn new(sc: &mut Scope, name: &str, cfg: &BlockConfig) -> Self {
        let mut sc = sc.sub(name);
        let c = cfg.channels;
        let z = cfg.residual_zero_init;
        Itb {
            ln1a: LayerNorm::new(&mut sc, "ln1a", c),
            ln1b: LayerNorm::new(&mut sc, "ln1b", c),
            isa: Isa::new(&mut sc, "isa", c, cfg.heads, z),
            ln2a: LayerNorm::new(&mut sc, "ln2a", c),
            ln2b: LayerNorm::new(&mut sc, "ln2b", c),
            mlp_a: Mlp::new(&mut sc, "mlp_a", c, c * cfg.mlp_ratio, z),
            mlp_b: Mlp::new(&mut sc, "mlp_b", c, c * cfg.mlp_ratio, z),
            window: cfg.window_size,
        }
    }

    /// Token-level block on `(B, N, C)` tensors.
    pub fn forward_tokens(&self, s: &mut Session, x1: Var, x2: Var) -> Result<(Var, Var)> {
        let n1 = self.ln1a.forward(s, x1);
        let n2 = self.ln1b.forward(s, x2);
        let (a1, a2) = self.isa.forward(s, n1, n2)?;
        let f1 = s.g.add(a1, x1);
        let f2 = s.g.add(a2, x2);
        let m1 = self.ln2a.forward(s, f1);
        let m1 = self.mlp_a.forward(s, m1);
        let m2 = self.ln2b.forward(s, f2);
        let m2 = self.mlp_b.forward(s, m2);
        Ok((s.g.add(m1, f1), s.g.add(m2, f2)))
    }

    pub fn forward(&self, s: &mut Session, f1: Var, f2: Var) -> Result<(Var, Var)> {
        crate::error::ensure!(
            s.g.shape(f1) == s.g.shape(f2),
            InvalidInput,
            "itb inputs differ in shape: {:?} vs {:?}",
            s.g.shape(f1),
            s.g.shape(f2)
        );
        let w1 = window_partition(&mut s.g, f1, self.window, 0)?;
        let w2 = window_partition(&mut s.g, f2, self.window, 0)?;
        let (t1, t2) = self.forward_tokens(s, w1.tokens, w2.tokens)?;
        let o1 = window_reverse(&mut s.g, &WindowSet { tokens: t1, ..w1 });
        let o2 = window_reverse(&mut s.g, &WindowSet { tokens: t2, ..w2 });
        Ok((o1, o2))
    }
}

/// One pre-norm window-attention transformer layer.
#[derive(Clone, Debug)]
pub struct SwinLayer {
    pub ln1: LayerNorm,
    pub msa: Msa,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
    pub window: usize,
    pub shift: usize,
}

impl SwinLayer {
    pub fn new(sc: &mut Scope, name: &str, cfg: &BlockConfig, shift: usize) -> Self {
        let mut sc = sc.sub(name);
        let c = cfg.channels;
        let z = cfg.residual_zero_init;
        SwinLayer {
            ln1: LayerNorm::new(&mut sc, "ln1", c),
            msa: Msa::new(&mut sc, "msa", c, cfg.heads, z),
            ln2: LayerNorm::new(&mut sc, "ln2", c),
            mlp: Mlp::new(&mut sc, "mlp", c, c * cfg.mlp_ratio, z),
            window: cfg.window_size,
            shift,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = window_partition(&mut s.g, x, self.window, self.shift)?;
        let t = w.tokens;
        let n = self.ln1.forward(s, t);
        let a = self.msa.forward(s, n)?;
        let t = s.g.add(a, t);
        let n = self.ln2.forward(s, t);
        let m = self.mlp.forward(s, n);
        let t = s.g.add(m, t);
        Ok(window_reverse(&mut s.g, &WindowSet { tokens: t, ..w }))
    }
}

/// Regular layer followed by a layer shifted by half a window.
#[derive(Clone, Debug)]
pub struct SwinBlock {
    pub regular: SwinLayer,
    pub shifted: SwinLayer,
}

impl SwinBlock {
    pub fn new(sc: &mut Scope, name: &str, cfg: &BlockConfig) -> Self {
        let mut sc = sc.sub(name);
        SwinBlock {
            regular: SwinLayer::new(&mut sc, "regular", cfg, 0),
            shifted: SwinLayer::new(&mut sc, "shifted", cfg, cfg.window_size / 2),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let y = self.regular.forward(s, x)?;
        self.shifted.forward(s, y)
    }
}
