//! Forward and backward kernels on plain tensors.
//!
//! [`Graph`](super::Graph) records which kernel produced each node and calls
//! the matching `*_backward` function; the kernels themselves keep no state.
//! Spatial tensors are `[batch, channels, height, width]`.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Spatial axis a directional operation acts along.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Along the width axis (columns are split / filtered).
    Horizontal,
    /// Along the height axis.
    Vertical,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Horizontal => "horizontal",
            Direction::Vertical => "vertical",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Pad2d {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Pad2d {
    pub fn new(top: usize, bottom: usize, left: usize, right: usize) -> Self {
        Pad2d {
            top,
            bottom,
            left,
            right,
        }
    }

    pub fn uniform(p: usize) -> Self {
        Self::new(p, p, p, p)
    }

    /// `k - 1` samples along `dir`, floor before and ceil after.
    pub fn for_kernel(dir: Direction, k: usize) -> Self {
        let total = k.saturating_sub(1);
        let before = total / 2;
        let after = total - before;
        match dir {
            Direction::Horizontal => Self::new(0, 0, before, after),
            Direction::Vertical => Self::new(before, after, 0, 0),
        }
    }
}

// ---------------------------------------------------------------------------
// convolution

fn im2col<T: Scalar>(
    src: &[T],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    (sh, sw): (usize, usize),
    (oh, ow): (usize, usize),
    cols: &mut [T],
) {
    let _ = h;
    let plane = oh * ow;
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let base = (ci * h + oy * sh + ki) * w + kj;
                    let out = &mut dst[oy * ow..(oy + 1) * ow];
                    if sw == 1 {
                        out.copy_from_slice(&src[base..base + ow]);
                    } else {
                        for (ox, o) in out.iter_mut().enumerate() {
                            *o = src[base + ox * sw];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(
    cols: &[T],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    (sh, sw): (usize, usize),
    (oh, ow): (usize, usize),
    dst: &mut [T],
) {
    let _ = h;
    let plane = oh * ow;
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let base = (ci * h + oy * sh + ki) * w + kj;
                    for ox in 0..ow {
                        let d = &mut dst[base + ox * sw];
                        *d = *d + src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

struct ConvGeom {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn conv_geometry<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    (sh, sw): (usize, usize),
) -> Result<ConvGeom> {
    let [b, c, h, w] = input.dims4("conv2d")?;
    let [f, wc, kh, kw] = weight.dims4("conv2d")?;
    if wc != c {
        return Err(Error::shape(
            "conv2d",
            format!("input has {c} channels, weight expects {wc}"),
        ));
    }
    if let Some(bias) = bias {
        if bias.shape() != [f] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?}, expected [{f}]", bias.shape()),
            ));
        }
    }
    if sh == 0 || sw == 0 {
        return Err(Error::shape("conv2d", "stride must be positive"));
    }
    if kh > h || kw > w || kh == 0 || kw == 0 {
        return Err(Error::KernelTooLarge {
            op: "conv2d",
            kernel: (kh, kw),
            input: (h, w),
        });
    }
    Ok(ConvGeom {
        b,
        c,
        h,
        w,
        f,
        kh,
        kw,
        oh: (h - kh) / sh + 1,
        ow: (w - kw) / sw + 1,
    })
}

/// Valid-mode 2D cross-correlation (no kernel flip, no implicit padding).
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: (usize, usize),
) -> Result<Tensor<T>> {
    let g = conv_geometry(input, weight, bias, stride)?;
    let ckk = g.c * g.kh * g.kw;
    let plane = g.oh * g.ow;
    let mut out = vec![T::zero(); g.b * g.f * plane];
    let mut cols = vec![T::zero(); ckk * plane];
    let in_item = g.c * g.h * g.w;
    for bi in 0..g.b {
        let src = &input.data()[bi * in_item..(bi + 1) * in_item];
        let dst = &mut out[bi * g.f * plane..(bi + 1) * g.f * plane];
        if let Some(bias) = bias {
            for (fi, &bv) in bias.data().iter().enumerate() {
                dst[fi * plane..(fi + 1) * plane].fill(bv);
            }
        }
        im2col(src, (g.c, g.h, g.w), (g.kh, g.kw), stride, (g.oh, g.ow), &mut cols);
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(
            g.f,
            ckk,
            plane,
            T::one(),
            weight.data(),
            (ckk, 1),
            &cols,
            (plane, 1),
            beta,
            dst,
            (plane, 1),
        );
    }
    Tensor::new([g.b, g.f, g.oh, g.ow], out)
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    has_bias: bool,
    stride: (usize, usize),
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = conv_geometry(input, weight, None, stride)?;
    let ckk = g.c * g.kh * g.kw;
    let plane = g.oh * g.ow;
    let in_item = g.c * g.h * g.w;
    let mut gi = vec![T::zero(); input.len()];
    let mut gw = vec![T::zero(); weight.len()];
    let mut gb = vec![T::zero(); g.f];
    let mut cols = vec![T::zero(); ckk * plane];
    let mut dcols = vec![T::zero(); ckk * plane];
    for bi in 0..g.b {
        let src = &input.data()[bi * in_item..(bi + 1) * in_item];
        let go = &grad_out.data()[bi * g.f * plane..(bi + 1) * g.f * plane];
        im2col(src, (g.c, g.h, g.w), (g.kh, g.kw), stride, (g.oh, g.ow), &mut cols);
        // dW[f, ckk] += dY[f, plane] * cols^T
        T::gemm(
            g.f,
            plane,
            ckk,
            T::one(),
            go,
            (plane, 1),
            &cols,
            (1, plane),
            T::one(),
            &mut gw,
            (ckk, 1),
        );
        // dcols[ckk, plane] = W^T * dY
        T::gemm(
            ckk,
            g.f,
            plane,
            T::one(),
            weight.data(),
            (1, ckk),
            go,
            (plane, 1),
            T::zero(),
            &mut dcols,
            (plane, 1),
        );
        col2im_add(
            &dcols,
            (g.c, g.h, g.w),
            (g.kh, g.kw),
            stride,
            (g.oh, g.ow),
            &mut gi[bi * in_item..(bi + 1) * in_item],
        );
        if has_bias {
            for (fi, b) in gb.iter_mut().enumerate() {
                *b = *b + go[fi * plane..(fi + 1) * plane].iter().copied().sum::<T>();
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape(), gi)?,
        weight: Tensor::new(weight.shape(), gw)?,
        bias: if has_bias {
            Some(Tensor::new([g.f], gb)?)
        } else {
            None
        },
    })
}

// ---------------------------------------------------------------------------
// padding

/// Mirror index into `0..n` without repeating the border sample.
fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Reflection padding: `[a, b, c]` padded by one on the left gives `[b, a, b, c]`.
pub fn reflect_pad<T: Scalar>(input: &Tensor<T>, pad: Pad2d) -> Result<Tensor<T>> {
    let [b, c, h, w] = input.dims4("reflect_pad")?;
    for (p, extent) in [(pad.top, h), (pad.bottom, h), (pad.left, w), (pad.right, w)] {
        if p > 0 && p >= extent {
            return Err(Error::PadTooLarge { pad: p, extent });
        }
    }
    let oh = h + pad.top + pad.bottom;
    let ow = w + pad.left + pad.right;
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let src = input.data();
    for plane in 0..b * c {
        let base = plane * h * w;
        for y in 0..oh {
            let sy = reflect_index(y as isize - pad.top as isize, h);
            let row = &src[base + sy * w..base + (sy + 1) * w];
            for x in 0..ow {
                out.push(row[reflect_index(x as isize - pad.left as isize, w)]);
            }
        }
    }
    Tensor::new([b, c, oh, ow], out)
}

pub fn reflect_pad_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    in_shape: &[usize],
    pad: Pad2d,
) -> Result<Tensor<T>> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let [_, _, oh, ow] = grad_out.dims4("reflect_pad")?;
    let mut gi = Tensor::zeros(in_shape);
    let planes = in_shape[0] * in_shape[1];
    let go = grad_out.data();
    let gd = gi.data_mut();
    for plane in 0..planes {
        for y in 0..oh {
            let sy = reflect_index(y as isize - pad.top as isize, h);
            for x in 0..ow {
                let sx = reflect_index(x as isize - pad.left as isize, w);
                let d = &mut gd[(plane * h + sy) * w + sx];
                *d = *d + go[(plane * oh + y) * ow + x];
            }
        }
    }
    Ok(gi)
}

/// Zero padding; used by data augmentation, never inside the network.
pub fn zero_pad<T: Scalar>(input: &Tensor<T>, pad: usize) -> Result<Tensor<T>> {
    let [b, c, h, w] = input.dims4("zero_pad")?;
    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
    let mut out = Tensor::zeros([b, c, oh, ow]);
    let od = out.data_mut();
    for plane in 0..b * c {
        for y in 0..h {
            let dst = (plane * oh + y + pad) * ow + pad;
            od[dst..dst + w].copy_from_slice(&input.data()[(plane * h + y) * w..(plane * h + y + 1) * w]);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// pooling

/// Mean over non-overlapping `window x window` blocks.
pub fn avg_pool<T: Scalar>(input: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    let [b, c, h, w] = input.dims4("avg_pool")?;
    if window == 0 {
        return Err(Error::shape("avg_pool", "window must be positive"));
    }
    for extent in [h, w] {
        if extent % window != 0 {
            return Err(Error::NotDivisible {
                op: "avg_pool",
                extent,
                divisor: window,
            });
        }
    }
    let (oh, ow) = (h / window, w / window);
    let scale = T::one() / T::of((window * window) as f64);
    let src = input.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for dy in 0..window {
                    let row = (plane * h + oy * window + dy) * w + ox * window;
                    acc = acc + src[row..row + window].iter().copied().sum::<T>();
                }
                out.push(acc * scale);
            }
        }
    }
    Tensor::new([b, c, oh, ow], out)
}

pub fn avg_pool_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    in_shape: &[usize],
    window: usize,
) -> Result<Tensor<T>> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (oh, ow) = (h / window, w / window);
    let scale = T::one() / T::of((window * window) as f64);
    let mut gi = Tensor::zeros(in_shape);
    let gd = gi.data_mut();
    for plane in 0..in_shape[0] * in_shape[1] {
        for y in 0..h {
            for x in 0..w {
                gd[(plane * h + y) * w + x] =
                    grad_out.data()[(plane * oh + y / window) * ow + x / window] * scale;
            }
        }
    }
    Ok(gi)
}

/// `[B, C, H, W] -> [B, C]` spatial mean.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w] = input.dims4("global_avg_pool")?;
    let hw = h * w;
    if hw == 0 {
        return Err(Error::shape("global_avg_pool", "empty spatial extent"));
    }
    let inv = T::one() / T::of(hw as f64);
    let out = input
        .data()
        .chunks_exact(hw)
        .map(|plane| plane.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::new([b, c], out)
}

pub fn global_avg_pool_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    in_shape: &[usize],
) -> Result<Tensor<T>> {
    let hw = in_shape[2] * in_shape[3];
    let inv = T::one() / T::of(hw as f64);
    let mut data = Vec::with_capacity(grad_out.len() * hw);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g * inv, hw));
    }
    Tensor::new(in_shape, data)
}

// ---------------------------------------------------------------------------
// batch normalization

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Saved values for the training-mode backward pass.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
    pub training: bool,
}

fn channel_iter(
    b: usize,
    c: usize,
    hw: usize,
    ch: usize,
) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..b).map(move |bi| {
        let start = (bi * c + ch) * hw;
        start..start + hw
    })
}

/// Batch normalization over `(batch, height, width)` per channel.
///
/// In training mode the batch statistics are used and `running_mean` /
/// `running_var` are updated in place (unbiased variance for the running
/// estimate). Eval mode normalizes with the running statistics.
#[allow(clippy::needless_range_loop)]
pub fn batch_norm<T: Scalar>(
    input: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    training: bool,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let [b, c, h, w] = input.dims4("batch_norm")?;
    for t in [scale, shift, running_mean, running_var] {
        if t.shape() != [c] {
            return Err(Error::shape(
                "batch_norm",
                format!("per-channel state has shape {:?}, expected [{c}]", t.shape()),
            ));
        }
    }
    let hw = h * w;
    let count = b * hw;
    if training && count < 2 {
        return Err(Error::BatchTooSmall { count });
    }
    let eps = T::of(BN_EPSILON);
    let momentum = T::of(BN_MOMENTUM);
    let src = input.data();
    let mut normalized = vec![T::zero(); input.len()];
    let mut out = vec![T::zero(); input.len()];
    let mut inv_std = vec![T::zero(); c];
    for ch in 0..c {
        let (mean, var) = if training {
            let n = T::of(count as f64);
            let mean = channel_iter(b, c, hw, ch)
                .map(|r| src[r].iter().copied().sum::<T>())
                .sum::<T>()
                / n;
            let var = channel_iter(b, c, hw, ch)
                .map(|r| src[r].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>())
                .sum::<T>()
                / n;
            let unbiased = var * n / T::of((count - 1) as f64);
            let rm = &mut running_mean.data_mut()[ch];
            *rm = (T::one() - momentum) * *rm + momentum * mean;
            let rv = &mut running_var.data_mut()[ch];
            *rv = (T::one() - momentum) * *rv + momentum * unbiased;
            (mean, var)
        } else {
            (running_mean.data()[ch], running_var.data()[ch])
        };
        let is = T::one() / (var + eps).sqrt();
        inv_std[ch] = is;
        let (g, s) = (scale.data()[ch], shift.data()[ch]);
        for r in channel_iter(b, c, hw, ch) {
            for i in r {
                let xh = (src[i] - mean) * is;
                normalized[i] = xh;
                out[i] = g * xh + s;
            }
        }
    }
    Ok((
        Tensor::new(input.shape(), out)?,
        BnCache {
            normalized: Tensor::new(input.shape(), normalized)?,
            inv_std,
            training,
        },
    ))
}

/// Returns `(grad_input, grad_scale, grad_shift)`.
pub fn batch_norm_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    scale: &Tensor<T>,
    cache: &BnCache<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [b, c, h, w] = grad_out.dims4("batch_norm")?;
    let hw = h * w;
    let n = T::of((b * hw) as f64);
    let go = grad_out.data();
    let xh = cache.normalized.data();
    let mut gi = vec![T::zero(); go.len()];
    let mut gscale = vec![T::zero(); c];
    let mut gshift = vec![T::zero(); c];
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xh = T::zero();
        for r in channel_iter(b, c, hw, ch) {
            for i in r {
                sum_dy = sum_dy + go[i];
                sum_dy_xh = sum_dy_xh + go[i] * xh[i];
            }
        }
        gscale[ch] = sum_dy_xh;
        gshift[ch] = sum_dy;
        let g = scale.data()[ch];
        let is = cache.inv_std[ch];
        for r in channel_iter(b, c, hw, ch) {
            for i in r {
                gi[i] = if cache.training {
                    g * is / n * (n * go[i] - sum_dy - xh[i] * sum_dy_xh)
                } else {
                    g * is * go[i]
                };
            }
        }
    }
    Ok((
        Tensor::new(grad_out.shape(), gi)?,
        Tensor::new([c], gscale)?,
        Tensor::new([c], gshift)?,
    ))
}

// ---------------------------------------------------------------------------
// dense / classification

/// `y = x W^T + b` with `x: [B, N]`, `W: [P, N]`, `b: [P]`.
pub fn dense<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [b, n] = input.dims2("dense")?;
    let [p, wn] = weight.dims2("dense")?;
    if wn != n || bias.shape() != [p] {
        return Err(Error::shape(
            "dense",
            format!(
                "input {:?}, weight {:?}, bias {:?}",
                input.shape(),
                weight.shape(),
                bias.shape()
            ),
        ));
    }
    let mut out: Vec<T> = (0..b).flat_map(|_| bias.data().iter().copied()).collect();
    T::gemm(
        b,
        n,
        p,
        T::one(),
        input.data(),
        (n, 1),
        weight.data(),
        (1, n),
        T::one(),
        &mut out,
        (p, 1),
    );
    Tensor::new([b, p], out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [b, n] = input.dims2("dense")?;
    let [p, _] = weight.dims2("dense")?;
    let go = grad_out.data();
    let mut gi = vec![T::zero(); b * n];
    T::gemm(b, p, n, T::one(), go, (p, 1), weight.data(), (n, 1), T::zero(), &mut gi, (n, 1));
    let mut gw = vec![T::zero(); p * n];
    T::gemm(p, b, n, T::one(), go, (1, p), input.data(), (n, 1), T::zero(), &mut gw, (n, 1));
    let mut gb = vec![T::zero(); p];
    for row in go.chunks_exact(p) {
        for (a, &g) in gb.iter_mut().zip(row) {
            *a = *a + g;
        }
    }
    Ok((
        Tensor::new([b, n], gi)?,
        Tensor::new([p, n], gw)?,
        Tensor::new([p], gb)?,
    ))
}

/// Row-wise log-softmax with max subtraction.
pub fn log_softmax<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, p] = input.dims2("log_softmax")?;
    if p == 0 {
        return Err(Error::shape("log_softmax", "needs at least one class"));
    }
    let mut out = Vec::with_capacity(input.len());
    for row in input.data().chunks_exact(p) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        out.extend(row.iter().map(|&v| v - lse));
    }
    Tensor::new(input.shape(), out)
}

pub fn log_softmax_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let p = output.shape()[1];
    let mut gi = Vec::with_capacity(output.len());
    for (orow, grow) in output.data().chunks_exact(p).zip(grad_out.data().chunks_exact(p)) {
        let total: T = grow.iter().copied().sum();
        gi.extend(orow.iter().zip(grow).map(|(&o, &g)| g - o.exp() * total));
    }
    Tensor::new(output.shape(), gi).expect("same shape")
}

// ---------------------------------------------------------------------------
// structural

/// Concatenate along `axis`; every other extent must agree.
pub fn concat<T: Scalar>(inputs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::shape("concat", "no inputs"))?;
    let rank = first.shape().len();
    if axis >= rank {
        return Err(Error::shape("concat", format!("axis {axis} for rank {rank}")));
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = 0;
    for t in inputs {
        let s = t.shape();
        if s.len() != rank
            || s.iter()
                .zip(first.shape())
                .enumerate()
                .any(|(i, (a, b))| i != axis && a != b)
        {
            return Err(Error::shape(
                "concat",
                format!("{:?} vs {:?} on axis {axis}", first.shape(), s),
            ));
        }
        shape[axis] += s[axis];
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for t in inputs {
            let chunk = t.shape()[axis] * inner;
            out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    Tensor::new(shape, out)
}

/// Split a gradient of a concatenation back into per-input pieces.
pub fn concat_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    shapes: &[Vec<usize>],
    axis: usize,
) -> Vec<Tensor<T>> {
    let oshape = grad_out.shape();
    let outer: usize = oshape[..axis].iter().product();
    let inner: usize = oshape[axis + 1..].iter().product();
    let mut parts: Vec<Vec<T>> = shapes
        .iter()
        .map(|s| Vec::with_capacity(s.iter().product()))
        .collect();
    let mut offset = 0;
    for o in 0..outer {
        for (part, s) in parts.iter_mut().zip(shapes) {
            let chunk = s[axis] * inner;
            part.extend_from_slice(&grad_out.data()[offset..offset + chunk]);
            offset += chunk;
        }
        let _ = o;
    }
    parts
        .into_iter()
        .zip(shapes)
        .map(|(d, s)| Tensor::new(s.clone(), d).expect("split shape"))
        .collect()
}

/// Take samples of parity `parity` (0 = even, 1 = odd) along `dir`.
pub fn polyphase<T: Scalar>(input: &Tensor<T>, dir: Direction, parity: usize) -> Result<Tensor<T>> {
    let [b, c, h, w] = input.dims4("split_even_odd")?;
    let extent = match dir {
        Direction::Horizontal => w,
        Direction::Vertical => h,
    };
    if extent == 0 || extent % 2 != 0 {
        return Err(Error::NotDivisible {
            op: "split_even_odd",
            extent,
            divisor: 2,
        });
    }
    let src = input.data();
    let out: Vec<T> = match dir {
        Direction::Horizontal => src.chunks_exact(w).flat_map(|row| row.iter().skip(parity).step_by(2).copied()).collect(),
        Direction::Vertical => src
            .chunks_exact(w)
            .enumerate()
            .filter(|(r, _)| (r % h) % 2 == parity)
            .flat_map(|(_, row)| row.iter().copied())
            .collect(),
    };
    let shape = match dir {
        Direction::Horizontal => [b, c, h, w / 2],
        Direction::Vertical => [b, c, h / 2, w],
    };
    Tensor::new(shape, out)
}

/// Inverse of the even/odd split: interleave `even` and `odd` along `dir`.
pub fn interleave<T: Scalar>(even: &Tensor<T>, odd: &Tensor<T>, dir: Direction) -> Result<Tensor<T>> {
    let [b, c, h, w] = even.dims4("merge_even_odd")?;
    if even.shape() != odd.shape() {
        return Err(Error::shape(
            "merge_even_odd",
            format!("{:?} vs {:?}", even.shape(), odd.shape()),
        ));
    }
    let (e, o) = (even.data(), odd.data());
    let mut out = Vec::with_capacity(2 * even.len());
    match dir {
        Direction::Horizontal => {
            for (er, or) in e.chunks_exact(w).zip(o.chunks_exact(w)) {
                for (&a, &b) in er.iter().zip(or) {
                    out.push(a);
                    out.push(b);
                }
            }
        }
        Direction::Vertical => {
            for (er, or) in e.chunks_exact(w).zip(o.chunks_exact(w)) {
                out.extend_from_slice(er);
                out.extend_from_slice(or);
            }
        }
    }
    let shape = match dir {
        Direction::Horizontal => [b, c, h, 2 * w],
        Direction::Vertical => [b, c, 2 * h, w],
    };
    Tensor::new(shape, out)
}

// ---------------------------------------------------------------------------
// elementwise

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn tanh<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(T::tanh)
}

/// Elementwise Huber penalty: `x^2 / 2` inside `delta`, linear outside.
pub fn huber<T: Scalar>(x: T, delta: T) -> T {
    let a = x.abs();
    if a <= delta {
        x * x / T::of(2.0)
    } else {
        delta * (a - delta / T::of(2.0))
    }
}

pub fn huber_grad<T: Scalar>(x: T, delta: T) -> T {
    if x.abs() <= delta {
        x
    } else {
        delta * x.signum()
    }
}
