//! Convolution and max pooling over `[C, H, W]` tensors.

use crate::error::{config, shape, Result};
use crate::tensor::Tensor;

/// Output extent of a sliding window.
fn out_extent(input: usize, kernel: usize, stride: usize, pad_total: usize) -> Option<usize> {
    let padded = input + pad_total;
    if kernel == 0 || stride == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Range of output positions `o` for which `o * stride + offset - pad` lands inside `[0, input)`.
fn valid_range(out: usize, input: usize, offset: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > offset {
        (pad - offset).div_ceil(stride)
    } else {
        0
    };
    let hi_pos = input + pad;
    let hi = if hi_pos > offset {
        ((hi_pos - offset - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

fn check_conv(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, usize, usize, usize, usize, usize)> {
    let (c, h, w) = input.dims3()?;
    let (f, wc, kh, kw) = match weights.shape()[..] {
        [f, wc, kh, kw] => (f, wc, kh, kw),
        _ => return shape(format!("weights must be 4-d, got {:?}", weights.shape())),
    };
    if kh != kw {
        return config(format!("non-square kernel {kh}x{kw}"));
    }
    if wc != c {
        return config(format!("input has {c} channels but filters expect {wc}"));
    }
    if bias.shape() != [f] {
        return config(format!("bias shape {:?} does not match {f} filters", bias.shape()));
    }
    if stride == 0 {
        return config("stride must be at least 1");
    }
    let oh = out_extent(h, kh, stride, 2 * pad)
        .ok_or_else(|| crate::Error::Config(format!("kernel {kh} larger than padded height")))?;
    let ow = out_extent(w, kw, stride, 2 * pad)
        .ok_or_else(|| crate::Error::Config(format!("kernel {kw} larger than padded width")))?;
    Ok((c, h, w, f, kh, oh, ow))
}

/// Kernel taps `(ki, kj)` that touch at least one real input element, with
/// their valid output row and column ranges.
fn live_taps(k: usize, h: usize, w: usize, oh: usize, ow: usize, stride: usize, pad: usize) -> Vec<(usize, usize, (usize, usize), (usize, usize))> {
    let mut taps = Vec::with_capacity(k * k);
    for ki in 0..k {
        let rows = valid_range(oh, h, ki, stride, pad);
        if rows.0 >= rows.1 {
            continue;
        }
        for kj in 0..k {
            let cols = valid_range(ow, w, kj, stride, pad);
            if cols.0 < cols.1 {
                taps.push((ki, kj, rows, cols));
            }
        }
    }
    taps
}

/// Cross-correlation of the zero-padded input with each filter, plus bias.
pub fn conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (c, h, w, f, k, oh, ow) = check_conv(input, weights, bias, stride, pad)?;
    let taps = live_taps(k, h, w, oh, ow, stride, pad);
    let x = input.data();
    let wt = weights.data();
    let mut out = vec![0.0; f * oh * ow];
    for fi in 0..f {
        let plane = &mut out[fi * oh * ow..(fi + 1) * oh * ow];
        plane.fill(bias.data()[fi]);
        for ci in 0..c {
            let xin = &x[ci * h * w..(ci + 1) * h * w];
            let wbase = (fi * c + ci) * k * k;
            for &(ki, kj, (oy0, oy1), (ox0, ox1)) in &taps {
                let wv = wt[wbase + ki * k + kj];
                if wv == 0.0 {
                    continue;
                }
                for oy in oy0..oy1 {
                    let iy = oy * stride + ki - pad;
                    let row = &xin[iy * w..(iy + 1) * w];
                    let orow = &mut plane[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        let ix0 = ox0 + kj - pad;
                        for (o, &v) in orow[ox0..ox1].iter_mut().zip(&row[ix0..]) {
                            *o += wv * v;
                        }
                    } else {
                        for ox in ox0..ox1 {
                            orow[ox] += wv * row[ox * stride + kj - pad];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[f, oh, ow], out)
}

pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Gradients of `conv2d` with respect to its input, weights and bias.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads> {
    let f = weights.shape()[0];
    let bias = Tensor::zeros(&[f]);
    let (c, h, w, f, k, oh, ow) = check_conv(input, weights, &bias, stride, pad)?;
    if grad_out.shape() != [f, oh, ow] {
        return shape(format!(
            "upstream gradient {:?} does not match conv output [{f}, {oh}, {ow}]",
            grad_out.shape()
        ));
    }
    let taps = live_taps(k, h, w, oh, ow, stride, pad);
    let x = input.data();
    let wt = weights.data();
    let go = grad_out.data();
    let mut gx = vec![0.0; c * h * w];
    let mut gw = vec![0.0; wt.len()];
    let mut gb = vec![0.0; f];
    for fi in 0..f {
        let gplane = &go[fi * oh * ow..(fi + 1) * oh * ow];
        gb[fi] = gplane.iter().sum();
        if gplane.iter().all(|&g| g == 0.0) {
            continue;
        }
        for ci in 0..c {
            let xin = &x[ci * h * w..(ci + 1) * h * w];
            let gxin = &mut gx[ci * h * w..(ci + 1) * h * w];
            let wbase = (fi * c + ci) * k * k;
            for &(ki, kj, (oy0, oy1), (ox0, ox1)) in &taps {
                let widx = wbase + ki * k + kj;
                let wv = wt[widx];
                let mut acc = 0.0;
                for oy in oy0..oy1 {
                    let iy = oy * stride + ki - pad;
                    let grow = &gplane[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        let ix0 = ox0 + kj - pad;
                        let n = ox1 - ox0;
                        let xrow = &xin[iy * w + ix0..iy * w + ix0 + n];
                        let gxrow = &mut gxin[iy * w + ix0..iy * w + ix0 + n];
                        for ((&g, &xv), gxv) in grow[ox0..ox1].iter().zip(xrow).zip(gxrow) {
                            acc += g * xv;
                            *gxv += wv * g;
                        }
                    } else {
                        for ox in ox0..ox1 {
                            let ix = ox * stride + kj - pad;
                            let g = grow[ox];
                            acc += g * xin[iy * w + ix];
                            gxin[iy * w + ix] += wv * g;
                        }
                    }
                }
                gw[widx] += acc;
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::from_vec(&[c, h, w], gx)?,
        weights: Tensor::from_vec(weights.shape(), gw)?,
        bias: Tensor::from_vec(&[f], gb)?,
    })
}

/// Max over `size x size` windows; windows never extend past the input.
pub fn maxpool2d(input: &Tensor, size: usize, stride: usize) -> Result<Tensor> {
    maxpool2d_with_indices(input, size, stride, 0).map(|(t, _)| t)
}

/// Max pooling with `pad` extra rows/columns past the bottom/right edge. Padded
/// positions never win; a window must cover at least one real element.
/// Also returns, per output element, the flat input index of the maximum.
pub fn maxpool2d_with_indices(
    input: &Tensor,
    size: usize,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = input.dims3()?;
    if size == 0 || stride == 0 {
        return config("pool size and stride must be at least 1");
    }
    if pad >= size {
        return config(format!("pool padding {pad} must be smaller than size {size}"));
    }
    let (oh, ow) = match (
        out_extent(h, size, stride, pad),
        out_extent(w, size, stride, pad),
    ) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => return config(format!("pool window {size} larger than input {h}x{w}")),
    };
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = usize::MAX;
                for dy in 0..size {
                    let iy = oy * stride + dy;
                    if iy >= h {
                        break;
                    }
                    for dx in 0..size {
                        let ix = ox * stride + dx;
                        if ix >= w {
                            break;
                        }
                        let i = (ci * h + iy) * w + ix;
                        if best_i == usize::MAX || x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                idx.push(best_i);
            }
        }
    }
    Ok((Tensor::from_vec(&[c, oh, ow], out)?, idx))
}

/// Routes each upstream gradient to the input element that won its window.
pub fn maxpool2d_backward(input_shape: &[usize], indices: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    if indices.len() != grad_out.len() {
        return shape("pool indices do not match upstream gradient");
    }
    let mut gx = Tensor::zeros(input_shape);
    let d = gx.data_mut();
    for (&i, &g) in indices.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    Ok(gx)
}
