use crate::graph::Var;
use crate::params::{Init, ParamId, Session};

use super::Scope;

/// Token-wise affine map on the last axis; weight stored `(in, out)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub out: usize,
}

impl Linear {
    pub fn new(sc: &mut Scope, name: &str, input: usize, out: usize, zero: bool) -> Self {
        let mut sc = sc.sub(name);
        let init = if zero {
            Init::Zeros
        } else {
            Init::TruncNormal(0.02)
        };
        Linear {
            w: sc.param("weight", &[input, out], init),
            b: sc.param("bias", &[out], Init::Zeros),
            out,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Var {
        let (w, b) = (s.p(self.w), s.p(self.b));
        let y = s.g.matmul(x, w);
        let mut bshape = vec![1; s.g.shape(y).len()];
        *bshape.last_mut().unwrap() = self.out;
        let b = s.g.reshape(b, &bshape);
        s.g.add(y, b)
    }
}

/// Convolution with reflect "same" padding (stride 1) or valid geometry.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
    pub groups: usize,
}

impl Conv2d {
    pub fn new(
        sc: &mut Scope,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        groups: usize,
    ) -> Self {
        Self::with_init(sc, name, cin, cout, kernel, groups, false)
    }

    pub fn with_init(
        sc: &mut Scope,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        groups: usize,
        zero: bool,
    ) -> Self {
        let mut sc = sc.sub(name);
        let fan_in = cin / groups * kernel * kernel;
        let (wi, bi) = if zero {
            (Init::Zeros, Init::Zeros)
        } else {
            (Init::FanInUniform(fan_in), Init::FanInUniform(fan_in))
        };
        Conv2d {
            w: sc.param("weight", &[cout, cin / groups, kernel, kernel], wi),
            b: sc.param("bias", &[cout], bi),
            kernel,
            groups,
        }
    }

    /// Stride-1 convolution, spatially size-preserving via reflect padding.
    pub fn forward(&self, s: &mut Session, x: Var) -> Var {
        let p = self.kernel / 2;
        let xp = s.g.pad_reflect(x, p, p, p, p);
        let (w, b) = (s.p(self.w), s.p(self.b));
        s.g.conv2d(xp, w, Some(b), 1, self.groups)
    }
}

fn norm_last(s: &mut Session, x: Var, axis: &[usize], eps: f64) -> Var {
    let mu = s.g.mean_axes(x, axis);
    let xc = s.g.sub(x, mu);
    let sq = s.g.square(xc);
    let var = s.g.mean_axes(sq, axis);
    let var = s.g.add_scalar(var, eps);
    let sd = s.g.sqrt(var);
    s.g.div(xc, sd)
}

pub const LN_EPS: f64 = 1e-5;
pub const GN_EPS: f64 = 1e-5;

/// Layer norm over the last (channel) axis of token tensors.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(sc: &mut Scope, name: &str, dim: usize) -> Self {
        let mut sc = sc.sub(name);
        LayerNorm {
            gamma: sc.param("gamma", &[dim], Init::Ones),
            beta: sc.param("beta", &[dim], Init::Zeros),
            dim,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Var {
        let rank = s.g.shape(x).len();
        let y = norm_last(s, x, &[rank - 1], LN_EPS);
        let mut shape = vec![1; rank];
        shape[rank - 1] = self.dim;
        let (g, b) = (s.p(self.gamma), s.p(self.beta));
        let g = s.g.reshape(g, &shape);
        let b = s.g.reshape(b, &shape);
        let y = s.g.mul(y, g);
        s.g.add(y, b)
    }
}

/// Group normalisation with per-channel affine, followed by LeakyReLU.
#[derive(Clone, Debug)]
pub struct GroupNormLr {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
    pub slope: f64,
}

impl GroupNormLr {
    pub fn new(sc: &mut Scope, name: &str, channels: usize, groups: usize, slope: f64) -> Self {
        let mut sc = sc.sub(name);
        GroupNormLr {
            gamma: sc.param("gamma", &[channels], Init::Ones),
            beta: sc.param("beta", &[channels], Init::Zeros),
            groups,
            slope,
        }
    }

    /// Normalised, affine-transformed pre-activation.
    pub fn normalize(&self, s: &mut Session, x: Var) -> Var {
        let shape = s.g.shape(x).to_vec();
        let (b, c) = (shape[0], shape[1]);
        let rest: usize = shape[2..].iter().product();
        let grouped = s.g.reshape(x, &[b, self.groups, c / self.groups * rest]);
        let y = norm_last(s, grouped, &[2], GN_EPS);
        let y = s.g.reshape(y, &shape);
        let (gm, bt) = (s.p(self.gamma), s.p(self.beta));
        let gm = s.g.reshape(gm, &[1, c, 1, 1]);
        let bt = s.g.reshape(bt, &[1, c, 1, 1]);
        let y = s.g.mul(y, gm);
        s.g.add(y, bt)
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Var {
        let y = self.normalize(s, x);
        s.g.leaky_relu(y, self.slope)
    }
}

/// Two-layer token MLP with GELU.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(sc: &mut Scope, name: &str, dim: usize, hidden: usize, zero_out: bool) -> Self {
        let mut sc = sc.sub(name);
        Mlp {
            fc1: Linear::new(&mut sc, "fc1", dim, hidden, false),
            fc2: Linear::new(&mut sc, "fc2", hidden, dim, zero_out),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Var {
        let h = self.fc1.forward(s, x);
        let h = s.g.gelu(h);
        self.fc2.forward(s, h)
    }
}
