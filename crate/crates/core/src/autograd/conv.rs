//! Direct 3-D convolution kernels over `[N, C, T, H, W]` buffers.
//!
//! Every output element accumulates its bias first and then the taps in the
//! fixed order `(c_in, dt, dh, dw)`. That order does not depend on the
//! extent of the input, so evaluating a causal model on a sub-window of a
//! grid reproduces the full-grid values bit for bit. Zero weights are
//! skipped, which makes masked taps free and exact.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvSpec {
    pub const fn same(kernel: [usize; 3]) -> Self {
        Self {
            stride: [1, 1, 1],
            pad: [kernel[0] / 2, kernel[1] / 2, kernel[2] / 2],
        }
    }

    pub const fn strided(kernel: [usize; 3], stride: [usize; 3]) -> Self {
        Self {
            stride,
            pad: [kernel[0] / 2, kernel[1] / 2, kernel[2] / 2],
        }
    }

    pub fn out_len(&self, axis: usize, input: usize, kernel: usize) -> usize {
        let padded = input + 2 * self.pad[axis];
        if padded < kernel {
            0
        } else {
            (padded - kernel) / self.stride[axis] + 1
        }
    }
}

/// Half-open range of output indices along one axis whose input index
/// `o * stride + tap - pad` lands inside `[0, input)`.
#[inline]
fn valid_range(out: usize, input: usize, stride: usize, tap: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > tap {
        (pad - tap).div_ceil(stride)
    } else {
        0
    };
    let hi = if input + pad > tap {
        (input + pad - tap).div_ceil(stride).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

pub struct ConvShapes {
    pub input: [usize; 5],
    pub weight: [usize; 5],
    pub output: [usize; 5],
}

impl ConvShapes {
    pub fn new(input: [usize; 5], weight: [usize; 5], spec: &ConvSpec) -> Self {
        let output = [
            input[0],
            weight[0],
            spec.out_len(0, input[2], weight[2]),
            spec.out_len(1, input[3], weight[3]),
            spec.out_len(2, input[4], weight[4]),
        ];
        Self {
            input,
            weight,
            output,
        }
    }
}

/// Output positions processed together; keeps a block of the column matrix in cache.
const BLOCK: usize = 512;

/// Column matrix with one row per tap `(c_in, dt, dh, dw)` and one column per
/// output position `(n, t, h, w)`. Taps that fall in the padding read zero.
fn im2col(x: &[f64], s: &ConvShapes, spec: &ConvSpec) -> Vec<f64> {
    let [n_batch, ci_n, ti, hi, wi] = s.input;
    let [_, _, kt, kh, kw] = s.weight;
    let [_, _, to, ho, wo] = s.output;
    let in_plane = ti * hi * wi;
    let out_plane = to * ho * wo;
    let p_len = n_batch * out_plane;
    let mut col = vec![0.0; ci_n * kt * kh * kw * p_len];
    let mut k = 0;
    for ci in 0..ci_n {
        for a in 0..kt {
            let (t_lo, t_hi) = valid_range(to, ti, spec.stride[0], a, spec.pad[0]);
            for b in 0..kh {
                let (h_lo, h_hi) = valid_range(ho, hi, spec.stride[1], b, spec.pad[1]);
                for c in 0..kw {
                    let (w_lo, w_hi) = valid_range(wo, wi, spec.stride[2], c, spec.pad[2]);
                    let row = &mut col[k * p_len..][..p_len];
                    for n in 0..n_batch {
                        let xin = &x[(n * ci_n + ci) * in_plane..][..in_plane];
                        for ot in t_lo..t_hi {
                            let it = ot * spec.stride[0] + a - spec.pad[0];
                            for oh in h_lo..h_hi {
                                let ih = oh * spec.stride[1] + b - spec.pad[1];
                                let dst = &mut row[n * out_plane + (ot * ho + oh) * wo..][..wo];
                                let irow = &xin[(it * hi + ih) * wi..][..wi];
                                if spec.stride[2] == 1 {
                                    let off = w_lo + c - spec.pad[2];
                                    dst[w_lo..w_hi].copy_from_slice(&irow[off..off + (w_hi - w_lo)]);
                                } else {
                                    for ow in w_lo..w_hi {
                                        dst[ow] = irow[ow * spec.stride[2] + c - spec.pad[2]];
                                    }
                                }
                            }
                        }
                    }
                    k += 1;
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-adds every column entry back to its input.
fn col2im(col: &[f64], s: &ConvShapes, spec: &ConvSpec) -> Vec<f64> {
    let [n_batch, ci_n, ti, hi, wi] = s.input;
    let [_, _, kt, kh, kw] = s.weight;
    let [_, _, to, ho, wo] = s.output;
    let in_plane = ti * hi * wi;
    let out_plane = to * ho * wo;
    let p_len = n_batch * out_plane;
    let mut dx = vec![0.0; n_batch * ci_n * in_plane];
    let mut k = 0;
    for ci in 0..ci_n {
        for a in 0..kt {
            let (t_lo, t_hi) = valid_range(to, ti, spec.stride[0], a, spec.pad[0]);
            for b in 0..kh {
                let (h_lo, h_hi) = valid_range(ho, hi, spec.stride[1], b, spec.pad[1]);
                for c in 0..kw {
                    let (w_lo, w_hi) = valid_range(wo, wi, spec.stride[2], c, spec.pad[2]);
                    let row = &col[k * p_len..][..p_len];
                    for n in 0..n_batch {
                        let dxin = &mut dx[(n * ci_n + ci) * in_plane..][..in_plane];
                        for ot in t_lo..t_hi {
                            let it = ot * spec.stride[0] + a - spec.pad[0];
                            for oh in h_lo..h_hi {
                                let ih = oh * spec.stride[1] + b - spec.pad[1];
                                let src = &row[n * out_plane + (ot * ho + oh) * wo..][..wo];
                                let irow = &mut dxin[(it * hi + ih) * wi..][..wi];
                                if spec.stride[2] == 1 {
                                    let off = w_lo + c - spec.pad[2];
                                    for (d, &g) in irow[off..off + (w_hi - w_lo)].iter_mut().zip(&src[w_lo..w_hi]) {
                                        *d += g;
                                    }
                                } else {
                                    for ow in w_lo..w_hi {
                                        irow[ow * spec.stride[2] + c - spec.pad[2]] += src[ow];
                                    }
                                }
                            }
                        }
                    }
                    k += 1;
                }
            }
        }
    }
    dx
}

/// Gathers `[N, C, plane]` into `[C, N * plane]`.
fn channels_first(y: &[f64], n_batch: usize, c_n: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    for n in 0..n_batch {
        for c in 0..c_n {
            out[(c * n_batch + n) * plane..][..plane].copy_from_slice(&y[(n * c_n + c) * plane..][..plane]);
        }
    }
    out
}

#[inline]
fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, &v) in dst.iter_mut().zip(src) {
        *d += a * v;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..4 {
            lanes[i] += x[i] * y[i];
        }
    }
    let mut acc = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        acc += x * y;
    }
    acc
}

pub fn forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, s: &ConvShapes, spec: &ConvSpec) -> Vec<f64> {
    let n_batch = s.input[0];
    let [co_n, ci_n, kt, kh, kw] = s.weight;
    let out_plane = s.output[2] * s.output[3] * s.output[4];
    let p_len = n_batch * out_plane;
    let k_len = ci_n * kt * kh * kw;
    let col = im2col(x, s, spec);
    let mut y = vec![0.0; n_batch * co_n * out_plane];
    let mut acc = vec![0.0; BLOCK];
    for p0 in (0..p_len).step_by(BLOCK) {
        let len = BLOCK.min(p_len - p0);
        for co in 0..co_n {
            let acc = &mut acc[..len];
            acc.fill(bias.map_or(0.0, |b| b[co]));
            for (k, &wv) in w[co * k_len..][..k_len].iter().enumerate() {
                if wv != 0.0 {
                    axpy(acc, wv, &col[k * p_len + p0..][..len]);
                }
            }
            // Scatter the block back to [N, C_out, plane].
            let mut p = p0;
            let mut done = 0;
            while done < len {
                let (n, q) = (p / out_plane, p % out_plane);
                let run = (out_plane - q).min(len - done);
                y[(n * co_n + co) * out_plane + q..][..run].copy_from_slice(&acc[done..done + run]);
                p += run;
                done += run;
            }
        }
    }
    y
}

pub fn backward_input(dy: &[f64], w: &[f64], s: &ConvShapes, spec: &ConvSpec) -> Vec<f64> {
    let n_batch = s.input[0];
    let [co_n, ci_n, kt, kh, kw] = s.weight;
    let out_plane = s.output[2] * s.output[3] * s.output[4];
    let p_len = n_batch * out_plane;
    let k_len = ci_n * kt * kh * kw;
    let g = channels_first(dy, n_batch, co_n, out_plane);
    let mut dcol = vec![0.0; k_len * p_len];
    for p0 in (0..p_len).step_by(BLOCK) {
        let len = BLOCK.min(p_len - p0);
        for k in 0..k_len {
            let dst = &mut dcol[k * p_len + p0..][..len];
            for co in 0..co_n {
                let wv = w[co * k_len + k];
                if wv != 0.0 {
                    axpy(dst, wv, &g[co * p_len + p0..][..len]);
                }
            }
        }
    }
    col2im(&dcol, s, spec)
}

pub fn backward_weight(dy: &[f64], x: &[f64], s: &ConvShapes, spec: &ConvSpec) -> Vec<f64> {
    let n_batch = s.input[0];
    let [co_n, ci_n, kt, kh, kw] = s.weight;
    let out_plane = s.output[2] * s.output[3] * s.output[4];
    let p_len = n_batch * out_plane;
    let k_len = ci_n * kt * kh * kw;
    let g = channels_first(dy, n_batch, co_n, out_plane);
    let col = im2col(x, s, spec);
    let mut dw = vec![0.0; co_n * k_len];
    for p0 in (0..p_len).step_by(BLOCK) {
        let len = BLOCK.min(p_len - p0);
        for co in 0..co_n {
            let grow = &g[co * p_len + p0..][..len];
            for k in 0..k_len {
                dw[co * k_len + k] += dot(grow, &col[k * p_len + p0..][..len]);
            }
        }
    }
    dw
}

pub fn backward_bias(dy: &[f64], out: [usize; 5]) -> Vec<f64> {
    let [n_batch, co_n, to, ho, wo] = out;
    let plane = to * ho * wo;
    let mut db = vec![0.0; co_n];
    for n in 0..n_batch {
        for (co, slot) in db.iter_mut().enumerate() {
            *slot += dy[(n * co_n + co) * plane..][..plane].iter().sum::<f64>();
        }
    }
    db
}
