//! Encoder, scalar quantizer and decoder.
//!
//! The encoder is a stack of strided 3-D convolutions with residual blocks
//! whose last activation is squashed into `[0, L]`; the decoder mirrors it
//! with nearest-neighbour upsampling and ends in a sigmoid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::data::{ValueRange, VideoClip};
use crate::error::{Error, Result};
use crate::nn::{seeded_rng, Activation, Bound, Conv, ParamStore, ResBlock};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    /// Power-of-two spatial reduction `s`.
    pub spatial_downsample: usize,
    /// Power-of-two temporal reduction, applied in the first stages.
    pub temporal_downsample: usize,
    pub latent_channels: usize,
    /// Alphabet size `L + 1`; symbols are `0..=L`.
    pub num_levels: usize,
    pub base_width: usize,
    /// Residual blocks per stage.
    pub depth: usize,
    /// Temporal kernel extent of every convolution (odd).
    pub temporal_kernel: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            spatial_downsample: 8,
            temporal_downsample: 1,
            latent_channels: 8,
            num_levels: 8,
            base_width: 16,
            depth: 1,
            temporal_kernel: 3,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !self.spatial_downsample.is_power_of_two() {
            return bad(format!("spatial_downsample {} is not a power of two", self.spatial_downsample));
        }
        if !self.temporal_downsample.is_power_of_two() || self.temporal_downsample > self.spatial_downsample {
            return bad(format!(
                "temporal_downsample {} must be a power of two no larger than spatial_downsample",
                self.temporal_downsample
            ));
        }
        if self.num_levels < 2 || self.num_levels > 256 {
            return bad(format!("num_levels {} must be in 2..=256", self.num_levels));
        }
        if self.latent_channels == 0 || self.base_width == 0 {
            return bad("latent_channels and base_width must be positive".into());
        }
        if self.temporal_kernel % 2 == 0 {
            return bad("temporal_kernel must be odd".into());
        }
        Ok(())
    }

    /// Largest symbol `L`.
    pub fn max_symbol(&self) -> usize {
        self.num_levels - 1
    }

    pub fn stages(&self) -> usize {
        self.spatial_downsample.trailing_zeros() as usize
    }

    fn temporal_stages(&self) -> usize {
        self.temporal_downsample.trailing_zeros() as usize
    }

    fn width(&self, stage: usize) -> usize {
        self.base_width << stage.min(2)
    }

    /// Latent `(t, h, w)` for a `T × H × W` clip.
    pub fn latent_dims(&self, frames: usize, height: usize, width: usize) -> Result<[usize; 3]> {
        let s = self.spatial_downsample;
        if height % s != 0 || width % s != 0 || height == 0 || width == 0 {
            let pad = |v: usize| v.div_ceil(s).max(1) * s - v;
            return Err(Error::Shape(format!(
                "frame size {height}x{width} is not divisible by the spatial downsampling factor {s}; \
                 pad by {} rows and {} columns",
                pad(height),
                pad(width)
            )));
        }
        if frames == 0 {
            return Err(Error::Shape("clip has no frames".into()));
        }
        let mut t = frames;
        for _ in 0..self.temporal_stages() {
            t = t.div_ceil(2);
        }
        Ok([t, height / s, width / s])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentMode {
    Continuous,
    Discrete,
}

/// `t × h × w × c` latent values in raster order.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGrid {
    dims: [usize; 4],
    mode: LatentMode,
    values: Vec<f64>,
}

impl LatentGrid {
    pub fn new(dims: [usize; 4], mode: LatentMode, values: Vec<f64>) -> Result<Self> {
        if dims.iter().product::<usize>() != values.len() {
            return Err(Error::Shape(format!("latent grid {dims:?} needs {} values", dims.iter().product::<usize>())));
        }
        if mode == LatentMode::Discrete && values.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
            return Err(Error::Shape("discrete latent grid holds non-integer values".into()));
        }
        Ok(Self { dims, mode, values })
    }

    pub fn from_symbols(dims: [usize; 4], symbols: &[u16]) -> Result<Self> {
        Self::new(dims, LatentMode::Discrete, symbols.iter().map(|&s| f64::from(s)).collect())
    }

    /// `[t, h, w, c]`.
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn mode(&self) -> LatentMode {
        self.mode
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn symbols(&self) -> Vec<u16> {
        self.values.iter().map(|&v| v as u16).collect()
    }

    /// `[1, c, t, h, w]`.
    pub fn to_tensor(&self) -> Tensor {
        let [t, h, w, c] = self.dims;
        let plane = t * h * w;
        let mut data = vec![0.0; c * plane];
        for (i, site) in self.values.chunks_exact(c.max(1)).enumerate() {
            for (ch, &v) in site.iter().enumerate() {
                data[ch * plane + i] = v;
            }
        }
        Tensor::new(vec![1, c, t, h, w], data).expect("latent tensor")
    }

    pub fn from_tensor(t: &Tensor, n: usize, mode: LatentMode) -> Result<Self> {
        let [_, c, tt, h, w] = t.dims5();
        let plane = tt * h * w;
        let src = &t.data()[n * c * plane..][..c * plane];
        let mut values = vec![0.0; c * plane];
        for ch in 0..c {
            for i in 0..plane {
                values[i * c + ch] = src[ch * plane + i];
            }
        }
        Self::new([tt, h, w, c], mode, values)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizeMode {
    /// Additive `U(-0.5, 0.5)` noise, clamped to `[0, L]`.
    Noise,
    /// Round half to even.
    Hard,
    /// Hard rounding forward, identity gradient backward.
    StraightThrough,
}

/// Counter-based uniform noise in `[-0.5, 0.5)`, a pure function of `(seed, step)`
/// and the element position.
pub fn uniform_noise(shape: &[usize], seed: u64, step: u64) -> Tensor {
    let mut rng = seeded_rng(seed ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15), "quantizer-noise");
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    Tensor::new(shape.to_vec(), data).expect("noise")
}

/// Quantizes a continuous latent tensor on the graph.
///
/// `noise` must be supplied for [`QuantizeMode::Noise`]; out-of-range values
/// after adding it are clamped to `[0, L]`.
pub fn quantize_var(g: &Graph, z: Var, mode: QuantizeMode, max_symbol: usize, noise: Option<&Tensor>) -> Var {
    match mode {
        QuantizeMode::Hard => {
            let rounded = g.value(z).map(|v| v.round_ties_even().clamp(0.0, max_symbol as f64));
            g.constant(rounded)
        }
        QuantizeMode::StraightThrough => g.round_straight_through(z),
        QuantizeMode::Noise => {
            let noise = noise.expect("noise quantization needs a noise tensor");
            g.clamp(g.add_const(z, noise), 0.0, max_symbol as f64)
        }
    }
}

/// Quantizes a continuous grid outside of any graph.
pub fn quantize(z: &LatentGrid, mode: QuantizeMode, max_symbol: usize, noise: Option<&[f64]>) -> LatentGrid {
    let top = max_symbol as f64;
    match mode {
        QuantizeMode::Hard | QuantizeMode::StraightThrough => LatentGrid {
            dims: z.dims,
            mode: LatentMode::Discrete,
            values: z.values.iter().map(|v| v.round_ties_even().clamp(0.0, top)).collect(),
        },
        QuantizeMode::Noise => {
            let noise = noise.expect("noise quantization needs noise values");
            LatentGrid {
                dims: z.dims,
                mode: LatentMode::Continuous,
                values: z.values.iter().zip(noise).map(|(v, u)| (v + u).clamp(0.0, top)).collect(),
            }
        }
    }
}

/// Encoder and decoder layer definitions for one [`CodecConfig`].
#[derive(Clone, Debug)]
pub struct Codec {
    config: CodecConfig,
    enc_down: Vec<Conv>,
    enc_res: Vec<Vec<ResBlock>>,
    enc_out: Conv,
    dec_in: Conv,
    dec_res: Vec<Vec<ResBlock>>,
    dec_up: Vec<Conv>,
    dec_out: Conv,
}

impl Codec {
    pub fn new(config: CodecConfig) -> Result<Self> {
        config.validate()?;
        let kt = config.temporal_kernel;
        let k = [kt, 3, 3];
        let stages = config.stages();
        let mut enc_down = Vec::new();
        let mut enc_res = Vec::new();
        let mut dec_res = Vec::new();
        let mut dec_up = Vec::new();
        let mut cin = 3;
        for i in 0..stages {
            let st = if i < config.temporal_stages() { 2 } else { 1 };
            enc_down.push(Conv::new(format!("enc.down{i}"), cin, config.width(i), k, [st, 2, 2]));
            enc_res.push(
                (0..config.depth)
                    .map(|j| ResBlock::new(&format!("enc.res{i}.{j}"), config.width(i), k, Activation::Relu))
                    .collect(),
            );
            dec_res.push(
                (0..config.depth)
                    .map(|j| ResBlock::new(&format!("dec.res{i}.{j}"), config.width(i), k, Activation::Relu))
                    .collect(),
            );
            let up_out = if i == 0 { config.base_width } else { config.width(i - 1) };
            dec_up.push(Conv::new(format!("dec.up{i}"), config.width(i), up_out, k, [1, 1, 1]));
            cin = config.width(i);
        }
        let top = if stages == 0 { config.base_width } else { config.width(stages - 1) };
        let enc_in = if stages == 0 { 3 } else { top };
        Ok(Self {
            enc_out: Conv::new("enc.out", enc_in, config.latent_channels, k, [1, 1, 1]),
            dec_in: Conv::new("dec.in", config.latent_channels, top, k, [1, 1, 1]),
            dec_out: Conv::new("dec.out", config.base_width, 3, k, [1, 1, 1]),
            config,
            enc_down,
            enc_res,
            dec_res,
            dec_up,
        })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.config
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        for c in &self.enc_down {
            c.init(store, seed, 1.0);
        }
        for blocks in self.enc_res.iter().chain(&self.dec_res) {
            for b in blocks {
                b.init(store, seed);
            }
        }
        for c in &self.dec_up {
            c.init(store, seed, 1.0);
        }
        self.enc_out.init(store, seed, 1.0);
        self.dec_in.init(store, seed, 1.0);
        self.dec_out.init(store, seed, 1.0);
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        self.init(&mut store, seed);
        store
    }

    /// Fails unless `store` holds exactly the encoder/decoder shapes this config implies.
    pub fn check_params(&self, store: &ParamStore) -> Result<()> {
        let expected = self.init_params(0).shapes();
        let actual = store.subset("enc.").shapes().into_iter().chain(store.subset("dec.").shapes()).collect();
        if expected != actual {
            return Err(Error::Config("codec parameters do not match the codec configuration".into()));
        }
        Ok(())
    }

    fn check_input(&self, dims: [usize; 5]) -> Result<()> {
        if dims[1] != 3 {
            return Err(Error::Shape(format!("codec expects 3 channels, got {}", dims[1])));
        }
        self.config.latent_dims(dims[2], dims[3], dims[4]).map(|_| ())
    }

    /// Continuous latents in `[0, L]`, shape `[N, c, t, h, w]`.
    pub fn encode(&self, g: &Graph, p: &Bound, x: Var) -> Result<Var> {
        self.check_input(g.value(x).dims5())?;
        let mut h = x;
        for (down, blocks) in self.enc_down.iter().zip(&self.enc_res) {
            h = g.relu(down.forward(g, p, h));
            for b in blocks {
                h = b.forward(g, p, h);
            }
        }
        let logits = self.enc_out.forward(g, p, h);
        Ok(g.scale(g.sigmoid(logits), self.config.max_symbol() as f64))
    }

    /// Reconstruction in `[0, 1]`, shape `[N, 3, frames, h·s, w·s]`.
    pub fn decode(&self, g: &Graph, p: &Bound, z: Var, frames: usize) -> Result<Var> {
        let [_, c, t, _, _] = g.value(z).dims5();
        if c != self.config.latent_channels {
            return Err(Error::Shape(format!(
                "latent grid has {c} channels, codec expects {}",
                self.config.latent_channels
            )));
        }
        let expected_t = self.config.latent_dims(frames, self.config.spatial_downsample, self.config.spatial_downsample)?[0];
        if t != expected_t {
            return Err(Error::Shape(format!("latent grid has {t} time steps, {frames} frames need {expected_t}")));
        }
        let half = self.config.max_symbol() as f64 / 2.0;
        let mut h = g.shift(g.scale(z, 1.0 / half), -1.0);
        h = g.relu(self.dec_in.forward(g, p, h));
        for i in (0..self.config.stages()).rev() {
            for b in &self.dec_res[i] {
                h = b.forward(g, p, h);
            }
            let ft = if i < self.config.temporal_stages() { 2 } else { 1 };
            h = g.upsample_nearest(h, [ft, 2, 2]);
            h = g.relu(self.dec_up[i].forward(g, p, h));
        }
        let out = g.sigmoid(self.dec_out.forward(g, p, h));
        Ok(g.crop_time(out, frames))
    }
}

/// Graph-free encoder pass on one clip.
pub fn encoder_forward(codec: &Codec, params: &ParamStore, x: &VideoClip) -> Result<LatentGrid> {
    let g = Graph::new();
    let p = params.bind(&g, |_| false);
    let xv = g.constant(x.to_tensor());
    let z = codec.encode(&g, &p, xv)?;
    let value = g.value(z);
    LatentGrid::from_tensor(&value, 0, LatentMode::Continuous)
}

/// Graph-free decoder pass; `frames` is the clip length to reconstruct.
pub fn decoder_forward(codec: &Codec, params: &ParamStore, z: &LatentGrid, frames: usize, fps: f64) -> Result<VideoClip> {
    let g = Graph::new();
    let p = params.bind(&g, |_| false);
    let zv = g.constant(z.to_tensor());
    let out = codec.decode(&g, &p, zv, frames)?;
    let value = g.value(out);
    Ok(VideoClip::from_tensor(&value, 0, fps))
}

/// `x̂ = D(Q(E(x)))` with the given quantizer; `noise` is used only by `Noise`.
pub fn codec_roundtrip(
    codec: &Codec,
    params: &ParamStore,
    x: &VideoClip,
    mode: QuantizeMode,
    noise: Option<&[f64]>,
) -> Result<(VideoClip, LatentGrid)> {
    let z_cont = encoder_forward(codec, params, x)?;
    let z = quantize(&z_cont, mode, codec.config.max_symbol(), noise);
    let xhat = decoder_forward(codec, params, &z, x.frames(), x.fps())?;
    debug_assert_eq!(xhat.range(), ValueRange::Unit);
    Ok((xhat, z))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> CodecConfig {
        CodecConfig {
            latent_channels: 4,
            num_levels: 4,
            base_width: 4,
            depth: 1,
            ..CodecConfig::default()
        }
    }

    fn clip(t: usize, h: usize, w: usize, seed: u64) -> VideoClip {
        let mut rng = seeded_rng(seed, "clip");
        let data = (0..t * h * w * 3).map(|_| rng.gen::<f64>()).collect();
        VideoClip::new([t, h, w, 3], ValueRange::Unit, 25.0, data).unwrap()
    }

    #[test]
    fn hard_rounding_ties_to_even() {
        let z = LatentGrid::new([1, 1, 1, 3], LatentMode::Continuous, vec![0.4, 1.5, 2.51]).unwrap();
        let q = quantize(&z, QuantizeMode::Hard, 3, None);
        assert_eq!(q.values(), &[0.0, 2.0, 3.0]);
        assert_eq!(q.mode(), LatentMode::Discrete);
    }

    #[test]
    fn noise_perturbation_is_bounded() {
        let n = uniform_noise(&[1000], 3, 17);
        assert!(n.data().iter().all(|v| (-0.5..=0.5).contains(v)));
        assert_eq!(n, uniform_noise(&[1000], 3, 17));
        assert_ne!(n, uniform_noise(&[1000], 3, 18));
        let z = LatentGrid::new([1, 1, 1, 1000], LatentMode::Continuous, vec![1.5; 1000]).unwrap();
        let q = quantize(&z, QuantizeMode::Noise, 3, Some(n.data()));
        for (out, u) in q.values().iter().zip(n.data()) {
            assert!((out - 1.5 - u).abs() < 1e-15);
        }
    }

    #[test]
    fn straight_through_gradient_is_identity() {
        let g = Graph::new();
        let z = g.param(Tensor::new(vec![5], vec![0.2, 0.7, 1.5, 2.4, 2.9]).unwrap());
        let q = quantize_var(&g, z, QuantizeMode::StraightThrough, 3, None);
        assert_eq!(g.value(q).data(), &[0.0, 1.0, 2.0, 2.0, 3.0]);
        let loss = g.sum(q);
        let grads = g.backward(loss);
        assert_eq!(grads.get(z).unwrap().data(), &[1.0; 5]);
    }

    #[test]
    fn shapes_follow_the_config() {
        let codec = Codec::new(CodecConfig { latent_channels: 8, ..tiny() }).unwrap();
        let params = codec.init_params(1);
        let x = clip(3, 16, 24, 2);
        let z = encoder_forward(&codec, &params, &x).unwrap();
        assert_eq!(z.dims(), [3, 2, 3, 8]);
        assert!(z.values().iter().all(|v| (0.0..=3.0).contains(v)));
        let (xhat, zq) = codec_roundtrip(&codec, &params, &x, QuantizeMode::Hard, None).unwrap();
        assert_eq!(xhat.dims(), x.dims());
        assert!(zq.values().iter().all(|v| v.fract() == 0.0 && (0.0..=3.0).contains(v)));
        assert!(xhat.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn temporal_downsampling_rounds_up() {
        let codec = Codec::new(CodecConfig {
            temporal_downsample: 2,
            ..tiny()
        })
        .unwrap();
        let params = codec.init_params(1);
        let x = clip(5, 8, 8, 3);
        let (xhat, z) = codec_roundtrip(&codec, &params, &x, QuantizeMode::Hard, None).unwrap();
        assert_eq!(z.dims()[0], 3);
        assert_eq!(xhat.dims(), x.dims());
    }

    #[test]
    fn indivisible_frames_name_the_padding() {
        let codec = Codec::new(tiny()).unwrap();
        let params = codec.init_params(1);
        let err = encoder_forward(&codec, &params, &clip(1, 12, 16, 0)).unwrap_err();
        assert!(err.to_string().contains("pad by 4 rows and 0 columns"), "{err}");
    }

    #[test]
    fn zero_input_with_zero_final_bias_is_spatially_constant() {
        let codec = Codec::new(tiny()).unwrap();
        let params = codec.init_params(5);
        assert!(params.get("enc.out.b").unwrap().data().iter().all(|&b| b == 0.0));
        let x = VideoClip::new([2, 32, 32, 3], ValueRange::Unit, 25.0, vec![0.0; 2 * 32 * 32 * 3]).unwrap();
        let z = encoder_forward(&codec, &params, &x).unwrap();
        let [t, h, w, c] = z.dims();
        assert_eq!([t, h, w], [2, 4, 4]);
        for site in z.values().chunks_exact(c) {
            assert_eq!(site, &z.values()[..c]);
        }
    }
}
