use std::f64::consts::LN_2;

use super::conv::{self, ConvShapes, ConvSpec};
use super::{Graph, Var};
use crate::tensor::Tensor;

fn same_shape(a: &Tensor, b: &Tensor, op: &str) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

/// Numerically stable `log(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn add(&self, a: Var, b: Var) -> Var {
        let value = {
            let (va, vb) = (self.value(a), self.value(b));
            same_shape(&va, &vb, "add");
            va.zip_map(&vb, |x, y| x + y)
        };
        self.push_op(
            value,
            &[a, b],
            Box::new(|args| vec![Some(args.grad.clone()), Some(args.grad.clone())]),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let value = {
            let (va, vb) = (self.value(a), self.value(b));
            same_shape(&va, &vb, "sub");
            va.zip_map(&vb, |x, y| x - y)
        };
        self.push_op(
            value,
            &[a, b],
            Box::new(|args| vec![Some(args.grad.clone()), Some(args.grad.map(|g| -g))]),
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let value = {
            let (va, vb) = (self.value(a), self.value(b));
            same_shape(&va, &vb, "mul");
            va.zip_map(&vb, |x, y| x * y)
        };
        self.push_op(
            value,
            &[a, b],
            Box::new(|args| {
                vec![
                    args.needs[0].then(|| args.grad.zip_map(args.inputs[1], |g, y| g * y)),
                    args.needs[1].then(|| args.grad.zip_map(args.inputs[0], |g, x| g * x)),
                ]
            }),
        )
    }

    /// Elementwise product with a tensor that never receives a gradient.
    pub fn mul_const(&self, a: Var, c: &Tensor) -> Var {
        let value = {
            let va = self.value(a);
            same_shape(&va, c, "mul_const");
            va.zip_map(c, |x, y| x * y)
        };
        let c = c.clone();
        self.push_op(
            value,
            &[a],
            Box::new(move |args| vec![Some(args.grad.zip_map(&c, |g, y| g * y))]),
        )
    }

    pub fn add_const(&self, a: Var, c: &Tensor) -> Var {
        let value = {
            let va = self.value(a);
            same_shape(&va, c, "add_const");
            va.zip_map(c, |x, y| x + y)
        };
        self.push_op(value, &[a], Box::new(|args| vec![Some(args.grad.clone())]))
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push_op(value, &[a], Box::new(move |args| vec![Some(args.grad.map(|g| g * s))]))
    }

    pub fn shift(&self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x + s);
        self.push_op(value, &[a], Box::new(|args| vec![Some(args.grad.clone())]))
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// `a + s` where `s` is a one-element variable broadcast over `a`.
    pub fn add_broadcast(&self, a: Var, s: Var) -> Var {
        let value = {
            let sv = self.value(s);
            assert_eq!(sv.len(), 1, "add_broadcast expects a scalar");
            let k = sv.item();
            self.value(a).map(|x| x + k)
        };
        self.push_op(
            value,
            &[a, s],
            Box::new(|args| {
                vec![
                    Some(args.grad.clone()),
                    args.needs[1].then(|| Tensor::scalar(args.grad.sum())),
                ]
            }),
        )
    }

    pub fn relu(&self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    pub fn leaky_relu(&self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push_op(
            value,
            &[a],
            Box::new(move |args| {
                vec![Some(args.grad.zip_map(args.inputs[0], |g, x| if x > 0.0 { g } else { slope * g }))]
            }),
        )
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push_op(
            value,
            &[a],
            Box::new(|args| vec![Some(args.grad.zip_map(args.output, |g, y| g * y * (1.0 - y)))]),
        )
    }

    pub fn softplus(&self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        self.push_op(
            value,
            &[a],
            Box::new(|args| vec![Some(args.grad.zip_map(args.inputs[0], |g, x| g * sigmoid(x)))]),
        )
    }

    pub fn square(&self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        self.push_op(
            value,
            &[a],
            Box::new(|args| vec![Some(args.grad.zip_map(args.inputs[0], |g, x| 2.0 * g * x))]),
        )
    }

    /// `|a|` with subgradient 0 at 0.
    pub fn abs(&self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        self.push_op(
            value,
            &[a],
            Box::new(|args| {
                vec![Some(args.grad.zip_map(args.inputs[0], |g, x| {
                    if x > 0.0 {
                        g
                    } else if x < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                }))]
            }),
        )
    }

    pub fn sum(&self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push_op(
            value,
            &[a],
            Box::new(|args| vec![Some(Tensor::full(args.inputs[0].shape(), args.grad.item()))]),
        )
    }

    pub fn mean(&self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).mean());
        self.push_op(
            value,
            &[a],
            Box::new(|args| {
                let n = args.inputs[0].len().max(1) as f64;
                vec![Some(Tensor::full(args.inputs[0].shape(), args.grad.item() / n))]
            }),
        )
    }

    pub fn reshape(&self, a: Var, shape: Vec<usize>) -> Var {
        let value = self.value(a).clone().reshape(shape).expect("reshape size");
        self.push_op(
            value,
            &[a],
            Box::new(|args| {
                vec![Some(
                    args.grad.clone().reshape(args.inputs[0].shape().to_vec()).expect("reshape size"),
                )]
            }),
        )
    }

    /// Forward rounds half to even; backward passes the gradient unchanged.
    pub fn round_straight_through(&self, a: Var) -> Var {
        let value = self.value(a).map(f64::round_ties_even);
        self.push_op(value, &[a], Box::new(|args| vec![Some(args.grad.clone())]))
    }

    /// Clamp to `[lo, hi]`; gradient is zero where the input was clipped.
    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        self.push_op(
            value,
            &[a],
            Box::new(move |args| {
                vec![Some(args.grad.zip_map(args.inputs[0], |g, x| {
                    if (lo..=hi).contains(&x) {
                        g
                    } else {
                        0.0
                    }
                }))]
            }),
        )
    }

    pub fn conv3d(&self, x: Var, w: Var, bias: Option<Var>, spec: ConvSpec) -> Var {
        let (value, shapes) = {
            let xv = self.value(x);
            let wv = self.value(w);
            let shapes = ConvShapes::new(xv.dims5(), wv.dims5(), &spec);
            assert_eq!(
                shapes.input[1], shapes.weight[1],
                "conv3d: input has {} channels, weight expects {}",
                shapes.input[1], shapes.weight[1]
            );
            let bv = bias.map(|b| self.value(b));
            let out = conv::forward(xv.data(), wv.data(), bv.as_deref().map(Tensor::data), &shapes, &spec);
            (Tensor::new(shapes.output.to_vec(), out).expect("conv output"), shapes)
        };
        let mut parents = vec![x, w];
        parents.extend(bias);
        self.push_op(
            value,
            &parents,
            Box::new(move |args| {
                let dy = args.grad.data();
                let mut out = vec![
                    args.needs[0].then(|| {
                        Tensor::new(
                            shapes.input.to_vec(),
                            conv::backward_input(dy, args.inputs[1].data(), &shapes, &spec),
                        )
                        .expect("dx")
                    }),
                    args.needs[1].then(|| {
                        Tensor::new(
                            shapes.weight.to_vec(),
                            conv::backward_weight(dy, args.inputs[0].data(), &shapes, &spec),
                        )
                        .expect("dw")
                    }),
                ];
                if args.inputs.len() == 3 {
                    out.push(args.needs[2].then(|| {
                        Tensor::new(vec![shapes.weight[0]], conv::backward_bias(dy, shapes.output)).expect("db")
                    }));
                }
                out
            }),
        )
    }

    /// Nearest-neighbour upsampling by integer factors along `(T, H, W)`.
    pub fn upsample_nearest(&self, a: Var, factors: [usize; 3]) -> Var {
        let (value, dims) = {
            let av = self.value(a);
            let [n, c, t, h, w] = av.dims5();
            let [ft, fh, fw] = factors;
            let (to, ho, wo) = (t * ft, h * fh, w * fw);
            let src = av.data();
            let mut out = vec![0.0; n * c * to * ho * wo];
            for nc in 0..n * c {
                for ot in 0..to {
                    for oh in 0..ho {
                        let srow = &src[((nc * t + ot / ft) * h + oh / fh) * w..][..w];
                        let orow = &mut out[((nc * to + ot) * ho + oh) * wo..][..wo];
                        for (ow, o) in orow.iter_mut().enumerate() {
                            *o = srow[ow / fw];
                        }
                    }
                }
            }
            (Tensor::new(vec![n, c, to, ho, wo], out).expect("upsample"), [n, c, t, h, w])
        };
        self.push_op(
            value,
            &[a],
            Box::new(move |args| {
                let [n, c, t, h, w] = dims;
                let [ft, fh, fw] = factors;
                let (to, ho, wo) = (t * ft, h * fh, w * fw);
                let g = args.grad.data();
                let mut dx = vec![0.0; n * c * t * h * w];
                for nc in 0..n * c {
                    for ot in 0..to {
                        for oh in 0..ho {
                            let grow = &g[((nc * to + ot) * ho + oh) * wo..][..wo];
                            let drow = &mut dx[((nc * t + ot / ft) * h + oh / fh) * w..][..w];
                            for (ow, &gv) in grow.iter().enumerate() {
                                drow[ow / fw] += gv;
                            }
                        }
                    }
                }
                vec![Some(Tensor::new(dims.to_vec(), dx).expect("upsample grad"))]
            }),
        )
    }

    /// Keeps the first `frames` time steps.
    pub fn crop_time(&self, a: Var, frames: usize) -> Var {
        let (value, dims) = {
            let av = self.value(a);
            let [n, c, t, h, w] = av.dims5();
            assert!(frames <= t, "crop_time: {frames} > {t}");
            let plane = h * w;
            let mut out = Vec::with_capacity(n * c * frames * plane);
            for nc in 0..n * c {
                out.extend_from_slice(&av.data()[nc * t * plane..][..frames * plane]);
            }
            (Tensor::new(vec![n, c, frames, h, w], out).expect("crop"), [n, c, t, h, w])
        };
        if dims[2] == frames {
            return a;
        }
        self.push_op(
            value,
            &[a],
            Box::new(move |args| {
                let [n, c, t, h, w] = dims;
                let plane = h * w;
                let mut dx = vec![0.0; n * c * t * plane];
                for nc in 0..n * c {
                    dx[nc * t * plane..][..frames * plane]
                        .copy_from_slice(&args.grad.data()[nc * frames * plane..][..frames * plane]);
                }
                vec![Some(Tensor::new(dims.to_vec(), dx).expect("crop grad"))]
            }),
        )
    }

    /// Non-overlapping average pooling with window = stride = `k`. Partial
    /// windows at the far edges average only the elements they cover.
    pub fn avg_pool(&self, a: Var, k: [usize; 3]) -> Var {
        let (value, dims) = {
            let av = self.value(a);
            let dims = av.dims5();
            (pool_forward(av.data(), dims, k, PoolKind::Avg).0, dims)
        };
        self.push_op(
            value,
            &[a],
            Box::new(move |args| {
                let g = args.grad.data();
                let mut dx = vec![0.0; dims.iter().product()];
                for_each_window(dims, k, |out_idx, members| {
                    let share = g[out_idx] / members.len() as f64;
                    for &m in members {
                        dx[m] += share;
                    }
                });
                vec![Some(Tensor::new(dims.to_vec(), dx).expect("avg_pool grad"))]
            }),
        )
    }

    /// Non-overlapping max pooling (ceil mode); ties route to the first maximum.
    pub fn max_pool(&self, a: Var, k: [usize; 3]) -> Var {
        let (value, argmax, dims) = {
            let av = self.value(a);
            let dims = av.dims5();
            let (v, arg) = pool_forward(av.data(), dims, k, PoolKind::Max);
            (v, arg, dims)
        };
        self.push_op(
            value,
            &[a],
            Box::new(move |args| {
                let mut dx = vec![0.0; dims.iter().product()];
                for (&src, &g) in argmax.iter().zip(args.grad.data()) {
                    dx[src] += g;
                }
                vec![Some(Tensor::new(dims.to_vec(), dx).expect("max_pool grad"))]
            }),
        )
    }

    /// Mean over `H, W`: `[N, C, T, H, W] -> [N, C, T, 1, 1]`.
    pub fn mean_hw(&self, a: Var) -> Var {
        let [_, _, _, h, w] = self.value(a).dims5();
        self.avg_pool(a, [1, h, w])
    }

    /// Mean over `T, H, W`: `[N, C, T, H, W] -> [N, C, 1, 1, 1]`.
    pub fn mean_thw(&self, a: Var) -> Var {
        let [_, _, t, h, w] = self.value(a).dims5();
        self.avg_pool(a, [t, h, w])
    }

    /// Total code length in bits, `-Σ log2 q(target)`, of `targets` under
    /// per-position categorical distributions.
    ///
    /// `logits` is `[N, G*K, T, H, W]`: `G` groups of `K` logits, one group per
    /// channel of `targets` (`[N, G, T, H, W]`). Each distribution is the
    /// softmax mixed with a floor, `q = floor + (1 - K*floor) * softmax`.
    /// Non-integer targets interpolate linearly between neighbouring symbols,
    /// which is what lets the rate gradient reach continuous latents.
    pub fn rate_bits(&self, logits: Var, targets: Var, k: usize, floor: f64) -> Var {
        let value = {
            let lv = self.value(logits);
            let tv = self.value(targets);
            let [n, gk, t, h, w] = lv.dims5();
            let tdims = tv.dims5();
            assert_eq!(gk % k, 0, "rate_bits: logits channels not a multiple of K");
            assert_eq!(tdims, [n, gk / k, t, h, w], "rate_bits: targets shape");
            let mut bits = 0.0;
            let mut probs = vec![0.0; k];
            for_each_site(lv.data(), tv.data(), [n, gk / k, t * h * w], k, &mut probs, |p, target| {
                let (lo, frac) = split_target(target, k);
                let q = |i: usize| floor + (1.0 - k as f64 * floor) * p[i];
                let qt = if frac == 0.0 { q(lo) } else { (1.0 - frac) * q(lo) + frac * q(lo + 1) };
                bits -= qt.log2();
            });
            Tensor::scalar(bits)
        };
        self.push_op(
            value,
            &[logits, targets],
            Box::new(move |args| {
                let scale = args.grad.item();
                let [n, gk, t, h, w] = args.inputs[0].dims5();
                let g = gk / k;
                let plane = t * h * w;
                let mix = 1.0 - k as f64 * floor;
                let ldata = args.inputs[0].data();
                let tdata = args.inputs[1].data();
                let mut dlogits = vec![0.0; ldata.len()];
                let mut dtargets = vec![0.0; tdata.len()];
                let mut p = vec![0.0; k];
                for b in 0..n {
                    for grp in 0..g {
                        for pos in 0..plane {
                            let lbase = (b * gk + grp * k) * plane + pos;
                            let tidx = (b * g + grp) * plane + pos;
                            softmax_strided(ldata, lbase, plane, &mut p);
                            let (lo, frac) = split_target(tdata[tidx], k);
                            let q = |i: usize| floor + mix * p[i];
                            let hi = (lo + 1).min(k - 1);
                            let qt = (1.0 - frac) * q(lo) + frac * q(hi);
                            // d(-log2 qt) = -1/(qt ln2) dqt
                            let coef = -scale / (qt * LN_2);
                            for j in 0..k {
                                let mut dq = (1.0 - frac) * p[lo] * (f64::from(u8::from(j == lo)) - p[j]);
                                if frac != 0.0 {
                                    dq += frac * p[hi] * (f64::from(u8::from(j == hi)) - p[j]);
                                }
                                dlogits[lbase + j * plane] = coef * mix * dq;
                            }
                            // One-sided slope at integer targets; left-sided at the top symbol.
                            let slope = if lo + 1 < k { q(lo + 1) - q(lo) } else { q(lo) - q(lo - 1) };
                            dtargets[tidx] = coef * slope;
                        }
                    }
                }
                vec![
                    args.needs[0].then(|| Tensor::new(args.inputs[0].shape().to_vec(), dlogits).expect("dlogits")),
                    args.needs[1].then(|| Tensor::new(args.inputs[1].shape().to_vec(), dtargets).expect("dtargets")),
                ]
            }),
        )
    }
}

/// Splits a (possibly fractional) symbol into `(floor, fraction)` clamped to
/// the alphabet `[0, k-1]`.
fn split_target(target: f64, k: usize) -> (usize, f64) {
    let top = (k - 1) as f64;
    let t = target.clamp(0.0, top);
    let lo = t.floor();
    if lo >= top {
        (k - 1, 0.0)
    } else {
        (lo as usize, t - lo)
    }
}

/// Softmax of `k` logits stored `stride` apart starting at `base`.
pub(crate) fn softmax_strided(data: &[f64], base: usize, stride: usize, out: &mut [f64]) {
    let k = out.len();
    let mut m = f64::NEG_INFINITY;
    for j in 0..k {
        m = m.max(data[base + j * stride]);
    }
    let mut z = 0.0;
    for j in 0..k {
        let e = (data[base + j * stride] - m).exp();
        out[j] = e;
        z += e;
    }
    for v in out.iter_mut() {
        *v /= z;
    }
}

fn for_each_site(
    logits: &[f64],
    targets: &[f64],
    [n, g, plane]: [usize; 3],
    k: usize,
    probs: &mut [f64],
    mut f: impl FnMut(&[f64], f64),
) {
    for b in 0..n {
        for grp in 0..g {
            for pos in 0..plane {
                let lbase = (b * g * k + grp * k) * plane + pos;
                softmax_strided(logits, lbase, plane, probs);
                f(probs, targets[(b * g + grp) * plane + pos]);
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum PoolKind {
    Avg,
    Max,
}

fn pooled_dims(dims: [usize; 5], k: [usize; 3]) -> [usize; 5] {
    [
        dims[0],
        dims[1],
        dims[2].div_ceil(k[0]),
        dims[3].div_ceil(k[1]),
        dims[4].div_ceil(k[2]),
    ]
}

/// Visits every pooling window in output order with the flat input indices it covers.
fn for_each_window(dims: [usize; 5], k: [usize; 3], mut f: impl FnMut(usize, &[usize])) {
    let [n, c, t, h, w] = dims;
    let [_, _, to, ho, wo] = pooled_dims(dims, k);
    let mut members = Vec::with_capacity(k.iter().product());
    let mut out_idx = 0;
    for nc in 0..n * c {
        for ot in 0..to {
            for oh in 0..ho {
                for ow in 0..wo {
                    members.clear();
                    for it in ot * k[0]..((ot + 1) * k[0]).min(t) {
                        for ih in oh * k[1]..((oh + 1) * k[1]).min(h) {
                            for iw in ow * k[2]..((ow + 1) * k[2]).min(w) {
                                members.push(((nc * t + it) * h + ih) * w + iw);
                            }
                        }
                    }
                    f(out_idx, &members);
                    out_idx += 1;
                }
            }
        }
    }
}

fn pool_forward(data: &[f64], dims: [usize; 5], k: [usize; 3], kind: PoolKind) -> (Tensor, Vec<usize>) {
    let out_dims = pooled_dims(dims, k);
    let mut out = vec![0.0; out_dims.iter().product()];
    let mut argmax = Vec::new();
    if kind == PoolKind::Max {
        argmax.resize(out.len(), 0);
    }
    for_each_window(dims, k, |o, members| match kind {
        PoolKind::Avg => {
            out[o] = members.iter().map(|&m| data[m]).sum::<f64>() / members.len() as f64;
        }
        PoolKind::Max => {
            let mut best = members[0];
            for &m in &members[1..] {
                if data[m] > data[best] {
                    best = m;
                }
            }
            out[o] = data[best];
            argmax[o] = best;
        }
    });
    (Tensor::new(out_dims.to_vec(), out).expect("pool"), argmax)
}
