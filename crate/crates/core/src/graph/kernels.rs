//! Raw numeric kernels used by the graph ops: GEMM, broadcasting walks,
//! im2col/col2im.

use crate::tensor::{numel, strides, Tensor};

/// `c = op(a) * op(b) + beta * c` with `op(a)` of size `m x k` and `op(b)` of
/// size `k x n`. A transposed operand is stored in its untransposed layout.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c[..m * n].iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths checked above; strides describe in-bounds layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Result shape of broadcasting two same-rank shapes, or `None`.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a.len() != b.len() {
        return None;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Some(x),
            (1, _) => Some(y),
            (_, 1) => Some(x),
            _ => None,
        })
        .collect()
}

/// Strides of `shape` viewed inside `out`: zero along broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let s = strides(shape);
    shape
        .iter()
        .zip(out)
        .zip(s)
        .map(|((&d, &o), st)| if d == 1 && o != 1 { 0 } else { st })
        .collect()
}

/// Walks all rows (last axis) of `out_shape`, handing the callback the output
/// row index and the base offsets of each operand.
fn walk_rows<const K: usize>(
    out_shape: &[usize],
    operand_strides: [&[usize]; K],
    mut f: impl FnMut(usize, [usize; K]),
) {
    let rank = out_shape.len();
    if rank <= 1 {
        f(0, [0; K]);
        return;
    }
    let outer = &out_shape[..rank - 1];
    let rows = numel(outer);
    let mut idx = vec![0usize; rank - 1];
    let mut base = [0usize; K];
    for row in 0..rows {
        f(row, base);
        // advance odometer
        let mut d = rank - 1;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            for (b, s) in base.iter_mut().zip(operand_strides.iter()) {
                *b += s[d];
            }
            if idx[d] < outer[d] {
                break;
            }
            for (b, s) in base.iter_mut().zip(operand_strides.iter()) {
                *b -= s[d] * idx[d];
            }
            idx[d] = 0;
        }
    }
}

pub(crate) fn binary_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::from_vec(a.shape().to_vec(), data);
    }
    let out_shape = broadcast_shape(a.shape(), b.shape())
        .unwrap_or_else(|| panic!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()));
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let n = *out_shape.last().unwrap_or(&1);
    let (ia, ib) = (*sa.last().unwrap_or(&0), *sb.last().unwrap_or(&0));
    let mut out = vec![0.0; numel(&out_shape)];
    let (ad, bd) = (a.data(), b.data());
    walk_rows(&out_shape, [&sa, &sb], |row, [oa, ob]| {
        let dst = &mut out[row * n..(row + 1) * n];
        for (j, o) in dst.iter_mut().enumerate() {
            *o = f(ad[oa + j * ia], bd[ob + j * ib]);
        }
    });
    Tensor::from_vec(out_shape, out)
}

/// Sums `t` down to `shape` (same rank, each axis equal or 1).
pub(crate) fn sum_to(t: &Tensor, shape: &[usize]) -> Tensor {
    if t.shape() == shape {
        return t.clone();
    }
    if shape.is_empty() || numel(shape) == 1 && t.rank() != shape.len() {
        return Tensor::from_vec(shape.to_vec(), vec![t.sum()]);
    }
    assert_eq!(
        t.rank(),
        shape.len(),
        "sum_to rank mismatch {:?} -> {:?}",
        t.shape(),
        shape
    );
    let st = broadcast_strides(shape, t.shape());
    let src_strides = strides(t.shape());
    let n = *t.shape().last().unwrap_or(&1);
    let inner = *st.last().unwrap_or(&0);
    let mut out = vec![0.0; numel(shape)];
    let data = t.data();
    walk_rows(t.shape(), [&st, &src_strides], |_, [o, s]| {
        if inner == 0 {
            let acc: f64 = data[s..s + n].iter().sum();
            out[o] += acc;
        } else {
            for j in 0..n {
                out[o + j] += data[s + j];
            }
        }
    });
    Tensor::from_vec(shape.to_vec(), out)
}

pub(crate) fn broadcast_to(t: &Tensor, shape: &[usize]) -> Tensor {
    if t.shape() == shape {
        return t.clone();
    }
    let zeros = Tensor::zeros(shape.to_vec());
    binary_broadcast(t, &zeros, |x, _| x)
}

/// Max over the axes where `shape` is 1; returns values and, per output
/// element, the flat source index of the (first) maximum.
pub(crate) fn max_to(t: &Tensor, shape: &[usize]) -> (Tensor, Vec<usize>) {
    assert_eq!(t.rank(), shape.len());
    let st = broadcast_strides(shape, t.shape());
    let src_strides = strides(t.shape());
    let n = *t.shape().last().unwrap_or(&1);
    let inner = *st.last().unwrap_or(&0);
    let mut out = vec![f64::NEG_INFINITY; numel(shape)];
    let mut arg = vec![0usize; numel(shape)];
    let data = t.data();
    walk_rows(t.shape(), [&st, &src_strides], |_, [o, s]| {
        for j in 0..n {
            let v = data[s + j];
            let dst = o + j * inner;
            if v > out[dst] {
                out[dst] = v;
                arg[dst] = s + j;
            }
        }
    });
    (Tensor::from_vec(shape.to_vec(), out), arg)
}

pub(crate) struct ConvGeom {
    pub cin_g: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn k(&self) -> usize {
        self.cin_g * self.kh * self.kw
    }

    pub fn n(&self) -> usize {
        self.ho * self.wo
    }

    /// One input and one output channel per group, stride 1.
    pub fn is_depthwise(&self, cout_g: usize) -> bool {
        self.cin_g == 1 && cout_g == 1 && self.stride == 1
    }

    /// 1x1 stride-1: the input planes already are the column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }
}

/// Direct stride-1 depthwise convolution over `planes` independent planes;
/// plane `p` uses filter `p % channels` where the filter bank is `w`.
pub(crate) fn depthwise_forward(
    x: &[f64],
    w: &[f64],
    g: &ConvGeom,
    planes: usize,
    out: &mut [f64],
) {
    let taps = g.kh * g.kw;
    let channels = w.len() / taps;
    for p in 0..planes {
        let plane = &x[p * g.h * g.w..(p + 1) * g.h * g.w];
        let filt = &w[(p % channels) * taps..(p % channels + 1) * taps];
        let dst = &mut out[p * g.n()..(p + 1) * g.n()];
        for oy in 0..g.ho {
            let row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
            for ky in 0..g.kh {
                let src = &plane[(oy + ky) * g.w..];
                for kx in 0..g.kw {
                    let wv = filt[ky * g.kw + kx];
                    for (o, &v) in row.iter_mut().zip(&src[kx..kx + g.wo]) {
                        *o += wv * v;
                    }
                }
            }
        }
    }
}

pub(crate) fn depthwise_backward(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    g: &ConvGeom,
    planes: usize,
    mut dw: Option<&mut [f64]>,
    mut dx: Option<&mut [f64]>,
) {
    let taps = g.kh * g.kw;
    let channels = w.len() / taps;
    let (hw, n) = (g.h * g.w, g.n());
    for p in 0..planes {
        let c = p % channels;
        let plane = &x[p * hw..(p + 1) * hw];
        let gp = &gy[p * n..(p + 1) * n];
        for oy in 0..g.ho {
            let grow = &gp[oy * g.wo..(oy + 1) * g.wo];
            for ky in 0..g.kh {
                let base = (oy + ky) * g.w;
                for kx in 0..g.kw {
                    let t = ky * g.kw + kx;
                    if let Some(dw) = dw.as_deref_mut() {
                        let src = &plane[base + kx..base + kx + g.wo];
                        dw[c * taps + t] += grow.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        let wv = w[c * taps + t];
                        let dst = &mut dx[p * hw + base + kx..p * hw + base + kx + g.wo];
                        for (d, &gv) in dst.iter_mut().zip(grow) {
                            *d += wv * gv;
                        }
                    }
                }
            }
        }
    }
}

/// `x` holds `cin_g` planes of `h x w`; `cols` is `k x n`.
pub(crate) fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let n = g.n();
    for c in 0..g.cin_g {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let src = &plane[(oy * g.stride + ky) * g.w..];
                    let d = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if g.stride == 1 {
                        d.copy_from_slice(&src[kx..kx + g.wo]);
                    } else {
                        for (ox, v) in d.iter_mut().enumerate() {
                            *v = src[ox * g.stride + kx];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let n = g.n();
    for c in 0..g.cin_g {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let base = (oy * g.stride + ky) * g.w + kx;
                    let s = &src[oy * g.wo..(oy + 1) * g.wo];
                    for (ox, v) in s.iter().enumerate() {
                        plane[base + ox * g.stride] += v;
                    }
                }
            }
        }
    }
}

/// Mirror index without repeating the edge sample (`-1 -> 1`), folded
/// periodically so any offset is valid.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut r = i.rem_euclid(period);
    if r >= n as isize {
        r = period - r;
    }
    r as usize
}
