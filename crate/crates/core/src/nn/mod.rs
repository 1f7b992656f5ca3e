//! Neural building blocks on top of the autograd [`Graph`](crate::graph::Graph).
//!
//! Blocks own only [`ParamId`]s; values are bound per pass through a
//! [`Session`]. Feature maps are `(B, C, H, W)` graph variables.

mod attention;
mod conv_blocks;
mod layers;
mod transformer;
mod window;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::params::{Group, Init, ParamId, ParamStore};

pub use attention::{attention, AttnStream, Isa, IsaOutput, Msa};
pub use conv_blocks::{Cbam, CbamOutput, Lia, LiaOutput, MsConv, Rdscb, LIA_STD_EPS};
pub use layers::{Conv2d, GroupNormLr, LayerNorm, Linear, Mlp, GN_EPS, LN_EPS};
pub use transformer::{Itb, SwinBlock, SwinLayer};
pub use window::{window_partition, window_reverse, WindowLayout, WindowSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockConfig {
    pub channels: usize,
    pub window_size: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub msconv_kernels: Vec<usize>,
    pub rdscb_repeat: usize,
    pub cbam_reduction: usize,
    pub gn_groups: usize,
    pub leaky_slope: f64,
    /// Zero the output stage of every residual block at init, making the
    /// blocks exact identities (ITB, Swin) or `GN&LR(F)` (RDSCB).
    pub residual_zero_init: bool,
}

impl Default for BlockConfig {
    fn default() -> Self {
        BlockConfig {
            channels: 16,
            window_size: 8,
            heads: 2,
            mlp_ratio: 2,
            msconv_kernels: vec![1, 3, 5, 7],
            rdscb_repeat: 2,
            cbam_reduction: 8,
            gn_groups: 4,
            leaky_slope: 0.2,
            residual_zero_init: false,
        }
    }
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        ensure!(c > 0, Config, "channels must be positive");
        ensure!(self.window_size > 0, Config, "window_size must be positive");
        ensure!(
            self.heads > 0 && c.is_multiple_of(self.heads),
            Config,
            "channels {c} not divisible by heads {}",
            self.heads
        );
        ensure!(self.mlp_ratio > 0, Config, "mlp_ratio must be positive");
        ensure!(
            !self.msconv_kernels.is_empty(),
            Config,
            "msconv_kernels must not be empty"
        );
        ensure!(
            self.msconv_kernels.iter().all(|k| k % 2 == 1),
            Config,
            "msconv kernels must be odd, got {:?}",
            self.msconv_kernels
        );
        ensure!(
            c.is_multiple_of(self.msconv_kernels.len()),
            Config,
            "channels {c} not divisible by the {} msconv branches",
            self.msconv_kernels.len()
        );
        ensure!(
            self.rdscb_repeat > 0,
            Config,
            "rdscb_repeat must be positive"
        );
        ensure!(
            self.cbam_reduction > 0,
            Config,
            "cbam_reduction must be positive"
        );
        ensure!(
            self.gn_groups > 0 && c.is_multiple_of(self.gn_groups),
            Config,
            "channels {c} not divisible by gn_groups {}",
            self.gn_groups
        );
        ensure!(
            self.leaky_slope.is_finite() && self.leaky_slope >= 0.0,
            Config,
            "leaky_slope must be finite and non-negative"
        );
        Ok(())
    }
}

/// Named parameter allocation under a dotted prefix.
pub struct Scope<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    group: Group,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng, group: Group) -> Self {
        Scope {
            store,
            rng,
            group,
            prefix: String::new(),
        }
    }

    pub fn sub(&mut self, name: &str) -> Scope<'_> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Scope {
            store: self.store,
            rng: self.rng,
            group: self.group,
            prefix,
        }
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        self.store.init(full, self.group, shape, init, self.rng)
    }
}

#[cfg(test)]
pub(crate) mod testutil;

#[cfg(test)]
mod tests;
