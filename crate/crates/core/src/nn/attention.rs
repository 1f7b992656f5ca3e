use crate::error::{ensure, Result};
use crate::graph::{Graph, Var};
use crate::params::Session;

use super::layers::Linear;
use super::Scope;

fn split_heads(g: &mut Graph, x: Var, heads: usize) -> Var {
    let s = g.shape(x).to_vec();
    let (b, n, c) = (s[0], s[1], s[2]);
    let x = g.reshape(x, &[b, n, heads, c / heads]);
    let x = g.permute(x, &[0, 2, 1, 3]);
    g.reshape(x, &[b * heads, n, c / heads])
}

fn merge_heads(g: &mut Graph, x: Var, heads: usize) -> Var {
    let s = g.shape(x).to_vec();
    let (bh, n, d) = (s[0], s[1], s[2]);
    let x = g.reshape(x, &[bh / heads, heads, n, d]);
    let x = g.permute(x, &[0, 2, 1, 3]);
    g.reshape(x, &[bh / heads, n, heads * d])
}

/// Scaled dot-product attention over `(B, N, C)` token tensors split into
/// `heads` heads. Returns the merged values and the `(B * heads, N, N)`
/// attention probabilities.
pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var, heads: usize) -> (Var, Var) {
    let c = g.shape(q)[2];
    let d = c / heads;
    let qh = split_heads(g, q, heads);
    let kh = split_heads(g, k, heads);
    let vh = split_heads(g, v, heads);
    let logits = g.matmul_t(qh, kh, false, true);
    let logits = g.scale(logits, 1.0 / (d as f64).sqrt());
    let attn = g.softmax(logits);
    let out = g.matmul(attn, vh);
    (merge_heads(g, out, heads), attn)
}

/// Q/K/V projections and the output projection of one token stream.
#[derive(Clone, Debug)]
pub struct AttnStream {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub proj: Linear,
}

impl AttnStream {
    pub fn new(sc: &mut Scope, name: &str, c: usize, zero_proj: bool) -> Self {
        let mut sc = sc.sub(name);
        AttnStream {
            q: Linear::new(&mut sc, "q", c, c, false),
            k: Linear::new(&mut sc, "k", c, c, false),
            v: Linear::new(&mut sc, "v", c, c, false),
            proj: Linear::new(&mut sc, "proj", c, c, zero_proj),
        }
    }
}

fn check_tokens(g: &Graph, x: Var, heads: usize) -> Result<()> {
    let s = g.shape(x);
    ensure!(
        s.len() == 3,
        InvalidInput,
        "attention expects (B, N, C) tokens, got {s:?}"
    );
    ensure!(
        s[2].is_multiple_of(heads),
        InvalidInput,
        "channels {} not divisible by {heads} heads",
        s[2]
    );
    ensure!(
        g.value(x).all_finite(),
        Numeric,
        "non-finite attention input"
    );
    Ok(())
}

/// Plain multi-head self-attention.
#[derive(Clone, Debug)]
pub struct Msa {
    pub stream: AttnStream,
    pub heads: usize,
}

impl Msa {
    pub fn new(sc: &mut Scope, name: &str, c: usize, heads: usize, zero_proj: bool) -> Self {
        Msa {
            stream: AttnStream::new(sc, name, c, zero_proj),
            heads,
        }
    }

    pub fn forward_with_attn(&self, s: &mut Session, x: Var) -> Result<(Var, Var)> {
        check_tokens(&s.g, x, self.heads)?;
        let q = self.stream.q.forward(s, x);
        let k = self.stream.k.forward(s, x);
        let v = self.stream.v.forward(s, x);
        let (o, attn) = attention(&mut s.g, q, k, v, self.heads);
        Ok((self.stream.proj.forward(s, o), attn))
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        Ok(self.forward_with_attn(s, x)?.0)
    }
}

/// Interactive self-attention: both streams attend with the shared query
/// `Q1 + Q2` against their own keys and values.
#[derive(Clone, Debug)]
pub struct Isa {
    pub s1: AttnStream,
    pub s2: AttnStream,
    pub heads: usize,
}

pub struct IsaOutput {
    pub x1: Var,
    pub x2: Var,
    pub attn1: Var,
    pub attn2: Var,
}

impl Isa {
    pub fn new(sc: &mut Scope, name: &str, c: usize, heads: usize, zero_proj: bool) -> Self {
        let mut sc = sc.sub(name);
        Isa {
            s1: AttnStream::new(&mut sc, "s1", c, zero_proj),
            s2: AttnStream::new(&mut sc, "s2", c, zero_proj),
            heads,
        }
    }

    pub fn forward_full(&self, s: &mut Session, x1: Var, x2: Var) -> Result<IsaOutput> {
        check_tokens(&s.g, x1, self.heads)?;
        check_tokens(&s.g, x2, self.heads)?;
        ensure!(
            s.g.shape(x1) == s.g.shape(x2),
            InvalidInput,
            "isa streams differ in shape: {:?} vs {:?}",
            s.g.shape(x1),
            s.g.shape(x2)
        );
        let q1 = self.s1.q.forward(s, x1);
        let q2 = self.s2.q.forward(s, x2);
        let q = s.g.add(q1, q2);
        let k1 = self.s1.k.forward(s, x1);
        let v1 = self.s1.v.forward(s, x1);
        let k2 = self.s2.k.forward(s, x2);
        let v2 = self.s2.v.forward(s, x2);
        let (o1, attn1) = attention(&mut s.g, q, k1, v1, self.heads);
        let (o2, attn2) = attention(&mut s.g, q, k2, v2, self.heads);
        Ok(IsaOutput {
            x1: self.s1.proj.forward(s, o1),
            x2: self.s2.proj.forward(s, o2),
            attn1,
            attn2,
        })
    }

    pub fn forward(&self, s: &mut Session, x1: Var, x2: Var) -> Result<(Var, Var)> {
        let o = self.forward_full(s, x1, x2)?;
        Ok((o.x1, o.x2))
    }
}
