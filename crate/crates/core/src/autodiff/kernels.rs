//! Forward and backward kernels for the convolution and pooling operators.
//!
//! Activations arrive time-major (`T x J x C`). The convolution kernels
//! transpose into channel-major, zero-padded buffers so the inner loops run
//! over contiguous time samples.

use std::sync::Arc;

/// Per-joint neighbor lists for a skeletal convolution, with the weight
/// block index of each (joint, neighbor) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayout {
    pub neighbors: Vec<Vec<usize>>,
    block_start: Vec<usize>,
}

impl ConvLayout {
    pub fn new(neighbors: Vec<Vec<usize>>) -> Arc<Self> {
        let mut block_start = Vec::with_capacity(neighbors.len() + 1);
        let mut acc = 0;
        for n in &neighbors {
            block_start.push(acc);
            acc += n.len();
        }
        block_start.push(acc);
        Arc::new(Self { neighbors, block_start })
    }

    pub fn joints(&self) -> usize {
        self.neighbors.len()
    }

    pub fn blocks(&self) -> usize {
        *self.block_start.last().unwrap()
    }

    /// Weight block used by neighbor `n` (position within `N_i`) of joint `i`.
    pub fn block(&self, i: usize, n: usize) -> usize {
        self.block_start[i] + n
    }
}

/// Copies joint `j` of a `T x J x C` buffer into a `C x (T + 2 pad)` buffer.
fn gather_padded(x: &[f64], t_len: usize, joints: usize, ch: usize, j: usize, pad: usize, out: &mut [f64]) {
    let tp = t_len + 2 * pad;
    out.fill(0.0);
    for t in 0..t_len {
        let row = &x[(t * joints + j) * ch..(t * joints + j + 1) * ch];
        for (c, &v) in row.iter().enumerate() {
            out[c * tp + pad + t] = v;
        }
    }
}

/// `y[o][t] += scale * sum_{c,k} w[o][c][k] * xp[c][t + k]`, stride 1.
#[inline]
fn conv_accum(xp: &[f64], w: &[f64], c_in: usize, c_out: usize, k: usize, t_out: usize, tp: usize, scale: f64, y: &mut [f64]) {
    for o in 0..c_out {
        let yo = &mut y[o * t_out..(o + 1) * t_out];
        for c in 0..c_in {
            let xc = &xp[c * tp..(c + 1) * tp];
            let wrow = &w[(o * c_in + c) * k..(o * c_in + c + 1) * k];
            for (kk, &wv) in wrow.iter().enumerate() {
                let wv = wv * scale;
                let xs = &xc[kk..kk + t_out];
                for (yv, xv) in yo.iter_mut().zip(xs) {
                    *yv += wv * xv;
                }
            }
        }
    }
}

/// Adjoint of [`conv_accum`]: accumulates weight gradients and (optionally)
/// padded-input gradients.
#[inline]
#[allow(clippy::too_many_arguments)]
fn conv_accum_back(
    xp: &[f64],
    w: &[f64],
    dy: &[f64],
    c_in: usize,
    c_out: usize,
    k: usize,
    t_out: usize,
    tp: usize,
    scale: f64,
    dw: &mut [f64],
    mut dxp: Option<&mut [f64]>,
) {
    for o in 0..c_out {
        let dyo = &dy[o * t_out..(o + 1) * t_out];
        for c in 0..c_in {
            let xc = &xp[c * tp..(c + 1) * tp];
            let base = (o * c_in + c) * k;
            for kk in 0..k {
                let xs = &xc[kk..kk + t_out];
                let dot: f64 = dyo.iter().zip(xs).map(|(a, b)| a * b).sum();
                dw[base + kk] += scale * dot;
                if let Some(dx) = dxp.as_deref_mut() {
                    let wv = w[base + kk] * scale;
                    let dxs = &mut dx[c * tp + kk..c * tp + kk + t_out];
                    for (d, g) in dxs.iter_mut().zip(dyo) {
                        *d += wv * g;
                    }
                }
            }
        }
    }
}

pub fn conv1d_out_len(t: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let span = t + 2 * padding;
    if span < k || stride == 0 {
        return None;
    }
    Some((span - k) / stride + 1)
}

/// Cross-correlation over time. `x: T x C_in`, `w: C_out x C_in x K`, `b: C_out`.
pub fn conv1d_forward(x: &[f64], t_len: usize, c_in: usize, w: &[f64], b: &[f64], c_out: usize, k: usize, stride: usize, pad: usize) -> Vec<f64> {
    let t_out = conv1d_out_len(t_len, k, stride, pad).expect("validated by caller");
    let tp = t_len + 2 * pad;
    let mut xp = vec![0.0; c_in * tp];
    gather_padded(x, t_len, 1, c_in, 0, pad, &mut xp);
    let mut y = vec![0.0; c_out * t_out];
    if stride == 1 {
        conv_accum(&xp, w, c_in, c_out, k, t_out, tp, 1.0, &mut y);
    } else {
        for o in 0..c_out {
            for c in 0..c_in {
                for kk in 0..k {
                    let wv = w[(o * c_in + c) * k + kk];
                    for t in 0..t_out {
                        y[o * t_out + t] += wv * xp[c * tp + t * stride + kk];
                    }
                }
            }
        }
    }
    let mut out = vec![0.0; t_out * c_out];
    for t in 0..t_out {
        for o in 0..c_out {
            out[t * c_out + o] = y[o * t_out + t] + b[o];
        }
    }
    out
}

/// Gradients of [`conv1d_forward`] w.r.t. input, weight and bias.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward(
    x: &[f64],
    t_len: usize,
    c_in: usize,
    w: &[f64],
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
    dout: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let t_out = conv1d_out_len(t_len, k, stride, pad).expect("validated by caller");
    let tp = t_len + 2 * pad;
    let mut xp = vec![0.0; c_in * tp];
    gather_padded(x, t_len, 1, c_in, 0, pad, &mut xp);
    let mut dy = vec![0.0; c_out * t_out];
    let mut db = vec![0.0; c_out];
    for t in 0..t_out {
        for o in 0..c_out {
            let g = dout[t * c_out + o];
            dy[o * t_out + t] = g;
            db[o] += g;
        }
    }
    let mut dw = vec![0.0; w.len()];
    let mut dxp = vec![0.0; c_in * tp];
    if stride == 1 {
        conv_accum_back(&xp, w, &dy, c_in, c_out, k, t_out, tp, 1.0, &mut dw, Some(&mut dxp));
    } else {
        for o in 0..c_out {
            for c in 0..c_in {
                for kk in 0..k {
                    let idx = (o * c_in + c) * k + kk;
                    for t in 0..t_out {
                        let g = dy[o * t_out + t];
                        dw[idx] += g * xp[c * tp + t * stride + kk];
                        dxp[c * tp + t * stride + kk] += g * w[idx];
                    }
                }
            }
        }
    }
    let mut dx = vec![0.0; t_len * c_in];
    for t in 0..t_len {
        for c in 0..c_in {
            dx[t * c_in + c] = dxp[c * tp + pad + t];
        }
    }
    (dx, dw, db)
}

pub struct SkeletalDims {
    pub t_len: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
}

/// `out[t,i,:] = b[i,:] + mean_{j in N_i} conv(x[:,j,:], W_block(i,j))`, "same" padding.
pub fn skeletal_conv_forward(x: &[f64], layout: &ConvLayout, w: &[f64], b: &[f64], d: &SkeletalDims) -> Vec<f64> {
    let SkeletalDims { t_len, c_in, c_out, k } = *d;
    let joints = layout.joints();
    let pad = (k - 1) / 2;
    let tp = t_len + 2 * pad;
    let block = c_out * c_in * k;
    let mut xp = vec![0.0; joints * c_in * tp];
    for j in 0..joints {
        gather_padded(x, t_len, joints, c_in, j, pad, &mut xp[j * c_in * tp..(j + 1) * c_in * tp]);
    }
    let mut y = vec![0.0; c_out * t_len];
    let mut out = vec![0.0; t_len * joints * c_out];
    for (i, nb) in layout.neighbors.iter().enumerate() {
        y.fill(0.0);
        let scale = 1.0 / nb.len() as f64;
        for (n, &j) in nb.iter().enumerate() {
            let wb = &w[layout.block(i, n) * block..(layout.block(i, n) + 1) * block];
            conv_accum(&xp[j * c_in * tp..(j + 1) * c_in * tp], wb, c_in, c_out, k, t_len, tp, scale, &mut y);
        }
        for t in 0..t_len {
            let row = &mut out[(t * joints + i) * c_out..(t * joints + i + 1) * c_out];
            for (o, r) in row.iter_mut().enumerate() {
                *r = y[o * t_len + t] + b[i * c_out + o];
            }
        }
    }
    out
}

/// Returns `(dx, dw, db)`; `dx` is skipped when `need_dx` is false.
pub fn skeletal_conv_backward(
    x: &[f64],
    layout: &ConvLayout,
    w: &[f64],
    d: &SkeletalDims,
    dout: &[f64],
    need_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let SkeletalDims { t_len, c_in, c_out, k } = *d;
    let joints = layout.joints();
    let pad = (k - 1) / 2;
    let tp = t_len + 2 * pad;
    let block = c_out * c_in * k;
    let mut xp = vec![0.0; joints * c_in * tp];
    for j in 0..joints {
        gather_padded(x, t_len, joints, c_in, j, pad, &mut xp[j * c_in * tp..(j + 1) * c_in * tp]);
    }
    let mut dxp = if need_dx { vec![0.0; joints * c_in * tp] } else { Vec::new() };
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; joints * c_out];
    let mut dy = vec![0.0; c_out * t_len];
    for (i, nb) in layout.neighbors.iter().enumerate() {
        for t in 0..t_len {
            for o in 0..c_out {
                let g = dout[(t * joints + i) * c_out + o];
                dy[o * t_len + t] = g;
                db[i * c_out + o] += g;
            }
        }
        let scale = 1.0 / nb.len() as f64;
        for (n, &j) in nb.iter().enumerate() {
            let bidx = layout.block(i, n);
            let dxj = if need_dx { Some(&mut dxp[j * c_in * tp..(j + 1) * c_in * tp]) } else { None };
            conv_accum_back(
                &xp[j * c_in * tp..(j + 1) * c_in * tp],
                &w[bidx * block..(bidx + 1) * block],
                &dy,
                c_in,
                c_out,
                k,
                t_len,
                tp,
                scale,
                &mut dw[bidx * block..(bidx + 1) * block],
                dxj,
            );
        }
    }
    let dx = need_dx.then(|| {
        let mut dx = vec![0.0; t_len * joints * c_in];
        for j in 0..joints {
            for c in 0..c_in {
                for t in 0..t_len {
                    dx[(t * joints + j) * c_in + c] = dxp[(j * c_in + c) * tp + pad + t];
                }
            }
        }
        dx
    });
    (dx, dw, db)
}

/// Group sizes of a surjective joint map.
pub fn group_sizes(map: &[usize], groups: usize) -> Vec<usize> {
    let mut sizes = vec![0; groups];
    for &g in map {
        sizes[g] += 1;
    }
    sizes
}

/// Mean over each group's joints and over `stride` consecutive frames.
pub fn pool_forward(x: &[f64], t_len: usize, map: &[usize], groups: usize, ch: usize, stride: usize) -> Vec<f64> {
    let joints = map.len();
    let t_out = t_len / stride;
    let sizes = group_sizes(map, groups);
    let mut out = vec![0.0; t_out * groups * ch];
    for t in 0..t_out * stride {
        let to = t / stride;
        for (j, &g) in map.iter().enumerate() {
            let s = 1.0 / (sizes[g] * stride) as f64;
            let src = &x[(t * joints + j) * ch..(t * joints + j + 1) * ch];
            let dst = &mut out[(to * groups + g) * ch..(to * groups + g + 1) * ch];
            for (d, v) in dst.iter_mut().zip(src) {
                *d += s * v;
            }
        }
    }
    out
}

pub fn pool_backward(dout: &[f64], t_len: usize, map: &[usize], groups: usize, ch: usize, stride: usize) -> Vec<f64> {
    let joints = map.len();
    let sizes = group_sizes(map, groups);
    let mut dx = vec![0.0; t_len * joints * ch];
    for t in 0..(t_len / stride) * stride {
        let to = t / stride;
        for (j, &g) in map.iter().enumerate() {
            let s = 1.0 / (sizes[g] * stride) as f64;
            let src = &dout[(to * groups + g) * ch..(to * groups + g + 1) * ch];
            let dst = &mut dx[(t * joints + j) * ch..(t * joints + j + 1) * ch];
            for (d, v) in dst.iter_mut().zip(src) {
                *d = s * v;
            }
        }
    }
    dx
}

/// Copies each group's features to its member joints, repeating frames `factor` times.
pub fn unpool_forward(x: &[f64], t_len: usize, map: &[usize], groups: usize, ch: usize, factor: usize) -> Vec<f64> {
    let joints = map.len();
    let t_out = t_len * factor;
    let mut out = vec![0.0; t_out * joints * ch];
    for t in 0..t_out {
        let ts = t / factor;
        for (j, &g) in map.iter().enumerate() {
            out[(t * joints + j) * ch..(t * joints + j + 1) * ch]
                .copy_from_slice(&x[(ts * groups + g) * ch..(ts * groups + g + 1) * ch]);
        }
    }
    out
}

pub fn unpool_backward(dout: &[f64], t_len: usize, map: &[usize], groups: usize, ch: usize, factor: usize) -> Vec<f64> {
    let joints = map.len();
    let mut dx = vec![0.0; t_len * groups * ch];
    for t in 0..t_len * factor {
        let ts = t / factor;
        for (j, &g) in map.iter().enumerate() {
            let src = &dout[(t * joints + j) * ch..(t * joints + j + 1) * ch];
            let dst = &mut dx[(ts * groups + g) * ch..(ts * groups + g + 1) * ch];
            for (d, v) in dst.iter_mut().zip(src) {
                *d += v;
            }
        }
    }
    dx
}
