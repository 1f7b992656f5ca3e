//! Window tiling for attention: reflect padding to multiples of `M`, optional
//! cyclic shift, and the exact inverse. Each direction is a single gather.

use crate::error::{ensure, Result};
use crate::graph::{reflect_index, Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowLayout {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub window: usize,
    pub shift: usize,
}

impl WindowLayout {
    pub fn padded(&self) -> (usize, usize) {
        let m = self.window;
        (self.height.div_ceil(m) * m, self.width.div_ceil(m) * m)
    }

    pub fn windows_per_image(&self) -> usize {
        let (hp, wp) = self.padded();
        (hp / self.window) * (wp / self.window)
    }

    pub fn tokens(&self) -> usize {
        self.window * self.window
    }
}

/// `tokens` has shape `(B * nW, M * M, C)`.
#[derive(Clone, Copy, Debug)]
pub struct WindowSet {
    pub tokens: Var,
    pub layout: WindowLayout,
}

pub fn window_partition(g: &mut Graph, x: Var, window: usize, shift: usize) -> Result<WindowSet> {
    ensure!(window > 0, InvalidInput, "window size must be positive");
    let s = g.shape(x).to_vec();
    ensure!(
        s.len() == 4,
        InvalidInput,
        "window_partition expects (B, C, H, W), got {s:?}"
    );
    let layout = WindowLayout {
        batch: s[0],
        channels: s[1],
        height: s[2],
        width: s[3],
        window,
        shift: shift % window,
    };
    let (hp, wp) = layout.padded();
    let (h, w, c, m) = (layout.height, layout.width, layout.channels, window);
    let (nh, nw) = (hp / m, wp / m);
    let sh = layout.shift;
    let mut index = Vec::with_capacity(layout.batch * nh * nw * m * m * c);
    for b in 0..layout.batch {
        for wy in 0..nh {
            for wx in 0..nw {
                for i in 0..m {
                    let py = reflect_index(((wy * m + i + sh) % hp) as isize, h);
                    for j in 0..m {
                        let px = reflect_index(((wx * m + j + sh) % wp) as isize, w);
                        for ch in 0..c {
                            index.push((((b * c + ch) * h + py) * w + px) as u32);
                        }
                    }
                }
            }
        }
    }
    let tokens = g.gather(x, vec![layout.batch * nh * nw, m * m, c], index);
    Ok(WindowSet { tokens, layout })
}

/// Inverse of [`window_partition`]: undoes the shift and crops the padding.
pub fn window_reverse(g: &mut Graph, ws: &WindowSet) -> Var {
    let l = ws.layout;
    let (hp, wp) = l.padded();
    let (m, c) = (l.window, l.channels);
    let (nh, nw) = (hp / m, wp / m);
    let mut index = Vec::with_capacity(l.batch * c * l.height * l.width);
    for b in 0..l.batch {
        for ch in 0..c {
            for y in 0..l.height {
                let sy = (y + hp - l.shift) % hp;
                for x in 0..l.width {
                    let sx = (x + wp - l.shift) % wp;
                    let win = (b * nh + sy / m) * nw + sx / m;
                    let tok = (sy % m) * m + sx % m;
                    index.push(((win * m * m + tok) * c + ch) as u32);
                }
            }
        }
    }
    g.gather(ws.tokens, vec![l.batch, c, l.height, l.width], index)
}
