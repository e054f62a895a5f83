//! Autoregressive prior over latent grids, rate estimation and lossless coding.
//!
//! Symbols are ordered in raster scan over `(t, h, w)` with channels last.
//! The prior is a stack of masked 3-D convolutions: hidden channels are split
//! into one group per latent channel, so the distribution of channel `g` at a
//! site may look at every earlier site and at channels `< g` of its own site.

pub mod bitstream;
pub mod range_coder;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::codec::{LatentGrid, LatentMode};
use crate::error::{Error, Result};
use crate::nn::{Bound, Conv, ParamStore};
use crate::tensor::Tensor;

use range_coder::{cumulative, RangeDecoder, RangeEncoder, PROB_TOTAL};

/// Minimum probability of any symbol, `2^-16`.
pub const PROB_FLOOR: f64 = 1.0 / 65536.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropyConfig {
    /// Hidden channels per latent channel.
    pub hidden_per_channel: usize,
    /// Masked 3x3x3 layers before the 1x1x1 output layer.
    pub layers: usize,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        Self {
            hidden_per_channel: 4,
            layers: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum MaskKind {
    /// Center tap sees strictly earlier channel groups.
    Exclusive,
    /// Center tap sees its own and earlier channel groups.
    Inclusive,
}

fn causal_mask(conv: &Conv, groups: usize, kind: MaskKind) -> Tensor {
    let [co_n, ci_n, kt, kh, kw] = conv.weight_shape();
    let (go, gi) = (co_n / groups, ci_n / groups);
    let (ct, ch, cw) = (kt / 2, kh / 2, kw / 2);
    let mut data = Vec::with_capacity(co_n * ci_n * kt * kh * kw);
    for co in 0..co_n {
        for ci in 0..ci_n {
            for a in 0..kt {
                for b in 0..kh {
                    for c in 0..kw {
                        let offset = (a.cmp(&ct), b.cmp(&ch), c.cmp(&cw));
                        use std::cmp::Ordering::*;
                        let visible = match offset {
                            (Less, _, _) | (Equal, Less, _) | (Equal, Equal, Less) => true,
                            (Equal, Equal, Equal) => match kind {
                                MaskKind::Exclusive => co / go > ci / gi,
                                MaskKind::Inclusive => co / go >= ci / gi,
                            },
                            _ => false,
                        };
                        data.push(if visible { 1.0 } else { 0.0 });
                    }
                }
            }
        }
    }
    Tensor::new(conv.weight_shape().to_vec(), data).expect("mask")
}

/// Masked-convolution prior `P_θ(z)` for grids with a fixed channel count
/// and alphabet.
#[derive(Clone, Debug)]
pub struct EntropyModel {
    channels: usize,
    alphabet: usize,
    layers: Vec<(Conv, Tensor)>,
}

impl EntropyModel {
    pub fn new(config: &EntropyConfig, latent_channels: usize, alphabet: usize) -> Result<Self> {
        if config.hidden_per_channel == 0 || alphabet < 2 || latent_channels == 0 {
            return Err(Error::Config("entropy model needs hidden channels, an alphabet of at least 2 and latents".into()));
        }
        let hidden = latent_channels * config.hidden_per_channel;
        let mut layers = Vec::new();
        let mut cin = latent_channels;
        for i in 0..config.layers {
            let conv = Conv::new(format!("prior.l{i}"), cin, hidden, [3, 3, 3], [1, 1, 1]);
            let kind = if i == 0 { MaskKind::Exclusive } else { MaskKind::Inclusive };
            let mask = causal_mask(&conv, latent_channels, kind);
            layers.push((conv, mask));
            cin = hidden;
        }
        let out = Conv::new("prior.out", cin, latent_channels * alphabet, [1, 1, 1], [1, 1, 1]);
        let kind = if config.layers == 0 { MaskKind::Exclusive } else { MaskKind::Inclusive };
        let mask = causal_mask(&out, latent_channels, kind);
        layers.push((out, mask));
        Ok(Self {
            channels: latent_channels,
            alphabet,
            layers,
        })
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Sites a symbol can depend on, per axis, through the stacked kernels.
    pub fn receptive_radius(&self) -> usize {
        self.layers.iter().map(|(c, _)| c.kernel[1] / 2).sum()
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        for (conv, _) in &self.layers {
            conv.init(store, seed, 1.0);
        }
        // Start from the uniform distribution.
        let (out, _) = self.layers.last().expect("output layer");
        store.insert(out.weight_name(), Tensor::zeros(&out.weight_shape()));
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        self.init(&mut store, seed);
        store
    }

    pub fn check_params(&self, store: &ParamStore) -> Result<()> {
        if self.init_params(0).shapes() != store.subset("prior.").shapes() {
            return Err(Error::Config("prior parameters do not match the entropy configuration".into()));
        }
        Ok(())
    }

    /// Logits `[N, c·K, t, h, w]` for symbols `[N, c, t, h, w]`.
    ///
    /// The input is read as symbol values; any straight-through rounding
    /// must already have been applied by the caller.
    pub fn logits(&self, g: &Graph, p: &Bound, symbols: Var) -> Var {
        let half = (self.alphabet - 1) as f64 / 2.0;
        let mut h = g.shift(g.scale(symbols, 1.0 / half), -1.0);
        let last = self.layers.len() - 1;
        for (i, (conv, mask)) in self.layers.iter().enumerate() {
            h = conv.forward_masked(g, p, h, mask);
            if i != last {
                h = g.relu(h);
            }
        }
        h
    }

    /// Differentiable code length in bits. `condition` holds the (rounded)
    /// symbols the prior conditions on, `targets` the values whose
    /// probability is scored.
    pub fn rate_bits(&self, g: &Graph, p: &Bound, condition: Var, targets: Var) -> Var {
        let logits = self.logits(g, p, condition);
        g.rate_bits(logits, targets, self.alphabet, PROB_FLOOR)
    }

    fn check_grid(&self, z: &LatentGrid) -> Result<()> {
        if z.dims()[3] != self.channels {
            return Err(Error::Config(format!(
                "grid has {} channels, prior expects {}",
                z.dims()[3],
                self.channels
            )));
        }
        if z.values().iter().any(|&v| v < 0.0 || v >= self.alphabet as f64) {
            return Err(Error::Config(format!("grid holds symbols outside the alphabet of {}", self.alphabet)));
        }
        Ok(())
    }

    fn logits_tensor(&self, params: &ParamStore, symbols: Tensor) -> Tensor {
        let g = Graph::new();
        let p = params.bind(&g, |_| false);
        let input = g.constant(symbols);
        let out = self.logits(&g, &p, input);
        let value = g.value(out).clone();
        value
    }

    /// Floored categorical distributions, one row of `K` per symbol in raster order.
    pub fn prior_distributions(&self, params: &ParamStore, z: &LatentGrid) -> Result<Vec<Vec<f64>>> {
        self.check_grid(z)?;
        if z.is_empty() {
            return Ok(Vec::new());
        }
        let logits = self.logits_tensor(params, z.to_tensor());
        let [t, h, w, c] = z.dims();
        let plane = t * h * w;
        let k = self.alphabet;
        let mut rows = Vec::with_capacity(z.len());
        for site in 0..plane {
            for ch in 0..c {
                rows.push(floored_pmf(logits.data(), ch * k * plane + site, plane, k));
            }
        }
        Ok(rows)
    }

    /// `-Σ log2 q(z_i | z_<i)` with floored float probabilities.
    pub fn estimate_rate(&self, params: &ParamStore, z: &LatentGrid) -> Result<f64> {
        let rows = self.prior_distributions(params, z)?;
        Ok(rows
            .iter()
            .zip(z.values())
            .map(|(q, &s)| -q[s as usize].log2())
            .sum())
    }

    /// Code length under the 16-bit tables the range coder actually uses.
    pub fn estimate_rate_quantized(&self, params: &ParamStore, z: &LatentGrid) -> Result<f64> {
        let rows = self.prior_distributions(params, z)?;
        Ok(rows
            .iter()
            .zip(z.values())
            .map(|(q, &s)| {
                let f = quantize_pmf(q);
                -(f64::from(f[s as usize]) / f64::from(PROB_TOTAL)).log2()
            })
            .sum())
    }

    pub fn range_encode(&self, params: &ParamStore, z: &LatentGrid) -> Result<Vec<u8>> {
        if z.mode() != LatentMode::Discrete {
            return Err(Error::Config("only discrete grids can be range coded".into()));
        }
        let rows = self.prior_distributions(params, z)?;
        let mut enc = RangeEncoder::new();
        for (q, &s) in rows.iter().zip(z.values()) {
            let f = quantize_pmf(q);
            let s = s as usize;
            enc.encode(cumulative(&f, s), f[s]);
        }
        Ok(enc.finish())
    }

    /// Decodes a `dims`-shaped grid symbol by symbol. Each symbol's
    /// distribution is evaluated on the causal window around its site, which
    /// reproduces the full-grid encoder probabilities exactly. The encoder
    /// drops trailing zero bytes, so a short payload is not an error; stream
    /// integrity is checked by the container checksum.
    pub fn range_decode(&self, params: &ParamStore, payload: &[u8], dims: [usize; 4]) -> Result<LatentGrid> {
        let [t, h, w, c] = dims;
        if c != self.channels {
            return Err(Error::Config(format!("stream has {c} latent channels, prior expects {}", self.channels)));
        }
        let params = &params.subset("prior.");
        let mut symbols = vec![0.0; t * h * w * c];
        let mut dec = RangeDecoder::new(payload);
        let r = self.receptive_radius();
        let k = self.alphabet;
        for tt in 0..t {
            for y in 0..h {
                for x in 0..w {
                    let t0 = tt.saturating_sub(r);
                    let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
                    let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
                    let (wt, wh, ww) = (tt + 1 - t0, y1 - y0, x1 - x0);
                    let wplane = wt * wh * ww;
                    let site = ((tt - t0) * wh + (y - y0)) * ww + (x - x0);
                    for ch in 0..c {
                        let mut window = vec![0.0; c * wplane];
                        for a in 0..wt {
                            for b in 0..wh {
                                for d in 0..ww {
                                    let src = (((t0 + a) * h + y0 + b) * w + x0 + d) * c;
                                    let dst = (a * wh + b) * ww + d;
                                    for cc in 0..c {
                                        window[cc * wplane + dst] = symbols[src + cc];
                                    }
                                }
                            }
                        }
                        let input = Tensor::new(vec![1, c, wt, wh, ww], window).expect("window");
                        let logits = self.logits_tensor(params, input);
                        let q = floored_pmf(logits.data(), ch * k * wplane + site, wplane, k);
                        let f = quantize_pmf(&q);
                        let s = dec.decode(&f);
                        symbols[((tt * h + y) * w + x) * c + ch] = s as f64;
                    }
                }
            }
        }
        LatentGrid::new(dims, LatentMode::Discrete, symbols)
    }
}

/// `floor + (1 - K·floor) · softmax(logits)` for the `K` logits at `base`, `stride` apart.
fn floored_pmf(data: &[f64], base: usize, stride: usize, k: usize) -> Vec<f64> {
    let mut p = vec![0.0; k];
    crate::autograd::softmax_strided(data, base, stride, &mut p);
    let mix = 1.0 - k as f64 * PROB_FLOOR;
    p.iter().map(|&v| PROB_FLOOR + mix * v).collect()
}

/// 16-bit fixed-point frequencies: every symbol gets at least 1, the total is
/// exactly [`PROB_TOTAL`], and rounding slack goes to the first most likely symbol.
pub fn quantize_pmf(q: &[f64]) -> Vec<u32> {
    let k = q.len() as u32;
    let spare = f64::from(PROB_TOTAL - k);
    let mut f: Vec<u32> = q.iter().map(|&p| 1 + (p * spare).floor().clamp(0.0, spare) as u32).collect();
    let sum: u32 = f.iter().sum();
    let mut best = 0;
    for (i, &v) in f.iter().enumerate() {
        if v > f[best] {
            best = i;
        }
    }
    if sum <= PROB_TOTAL {
        f[best] += PROB_TOTAL - sum;
    } else {
        f[best] -= sum - PROB_TOTAL;
    }
    f
}

/// Total bits over total pixels. Callers include header bits in `total_bits`.
pub fn bits_per_pixel(total_bits: f64, frames: usize, height: usize, width: usize) -> Result<f64> {
    let pixels = frames * height * width;
    if pixels == 0 {
        return Err(Error::Division("bits_per_pixel over zero pixels"));
    }
    Ok(total_bits / pixels as f64)
}
