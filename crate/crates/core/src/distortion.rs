//! Pixel, structural and feature-space distortions and their weighted sums.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archive::{read_archive, write_archive};
use crate::autograd::{Graph, Var};
use crate::data::VideoClip;
use crate::error::{Error, Result};
use crate::nn::{Conv, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelNorm {
    L1,
    #[default]
    L2,
}

impl PixelNorm {
    pub fn name(self) -> &'static str {
        match self {
            PixelNorm::L1 => "l1",
            PixelNorm::L2 => "l2",
        }
    }
}

impl std::str::FromStr for PixelNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(PixelNorm::L1),
            "l2" => Ok(PixelNorm::L2),
            _ => Err(Error::Config(format!("unknown pixel norm {s:?}"))),
        }
    }
}

fn check_same(x: &VideoClip, y: &VideoClip) -> Result<()> {
    if x.dims() != y.dims() {
        return Err(Error::Shape(format!("clips differ in shape: {:?} vs {:?}", x.dims(), y.dims())));
    }
    Ok(())
}

/// Mean absolute (`L1`) or mean squared (`L2`) difference over unit-range values.
pub fn pixel_distance(x: &VideoClip, y: &VideoClip, norm: PixelNorm) -> Result<f64> {
    check_same(x, y)?;
    let (sx, sy) = (1.0 / x.range().max(), 1.0 / y.range().max());
    let n = x.data().len().max(1) as f64;
    let sum: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| {
            let d = a * sx - b * sy;
            match norm {
                PixelNorm::L1 => d.abs(),
                PixelNorm::L2 => d * d,
            }
        })
        .sum();
    Ok(sum / n)
}

pub fn pixel_distance_var(g: &Graph, x: Var, y: Var, norm: PixelNorm) -> Var {
    let d = g.sub(x, y);
    match norm {
        PixelNorm::L1 => g.mean(g.abs(d)),
        PixelNorm::L2 => g.mean(g.square(d)),
    }
}

/// `10 log10(1 / MSE)` in dB; identical clips give `+inf`.
pub fn psnr(x: &VideoClip, y: &VideoClip) -> Result<f64> {
    let mse = pixel_distance(x, y, PixelNorm::L2)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MsSsim {
    pub value: f64,
    /// Scales actually used; fewer than five when frames are small.
    pub scales: usize,
}

/// Largest number of dyadic scales (at most five) whose coarsest image still
/// fits the 11×11 window.
pub fn feasible_scales(height: usize, width: usize) -> Result<usize> {
    let side = height.min(width);
    if side < WINDOW {
        return Err(Error::Shape(format!("MS-SSIM needs frames of at least {WINDOW}×{WINDOW}, got {height}×{width}")));
    }
    Ok((1..=5).take_while(|&m| side >> (m - 1) >= WINDOW).count())
}

fn gaussian() -> [f64; WINDOW] {
    let mut g = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable valid-mode Gaussian filter.
fn filter(img: &[f64], h: usize, w: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - WINDOW + 1, w - WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..WINDOW).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM and mean contrast-structure term over the valid region.
fn ssim_terms(a: &[f64], b: &[f64], h: usize, w: usize, k: &[f64; WINDOW]) -> (f64, f64) {
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
    let mu_a = filter(a, h, w, k);
    let mu_b = filter(b, h, w, k);
    let e_aa = filter(&prod(a, a), h, w, k);
    let e_bb = filter(&prod(b, b), h, w, k);
    let e_ab = filter(&prod(a, b), h, w, k);
    let n = mu_a.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let c = (2.0 * cov + C2) / (var_a + var_b + C2);
        let l = (2.0 * ma * mb + C1) / (ma * ma + mb * mb + C1);
        cs += c;
        ssim += l * c;
    }
    (ssim / n, cs / n)
}

/// 2×2 average, dropping an odd last row or column.
fn downsample(img: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let i = 2 * y * w + 2 * x;
            out[y * ow + x] = 0.25 * (img[i] + img[i + 1] + img[i + w] + img[i + w + 1]);
        }
    }
    out
}

fn ms_ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, scales: usize) -> f64 {
    let k = gaussian();
    let total: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let (mut a, mut b, mut h, mut w) = (a.to_vec(), b.to_vec(), h, w);
    let mut value = 1.0;
    for (j, &weight) in MS_SSIM_WEIGHTS[..scales].iter().enumerate() {
        let (ssim, cs) = ssim_terms(&a, &b, h, w, &k);
        let term = if j + 1 == scales { ssim } else { cs };
        value *= term.max(0.0).powf(weight / total);
        a = downsample(&a, h, w);
        b = downsample(&b, h, w);
        h /= 2;
        w /= 2;
    }
    value
}

/// Multi-scale SSIM per frame and channel, averaged over both.
pub fn ms_ssim(x: &VideoClip, y: &VideoClip) -> Result<MsSsim> {
    check_same(x, y)?;
    let [t, h, w, c] = x.dims();
    let scales = feasible_scales(h, w)?;
    let (x, y) = (x.to_unit(), y.to_unit());
    let plane = |clip: &VideoClip, f: usize, ch: usize| -> Vec<f64> {
        clip.frame(f).iter().skip(ch).step_by(c).copied().collect()
    };
    let mut sum = 0.0;
    for f in 0..t {
        for ch in 0..c {
            sum += ms_ssim_plane(&plane(&x, f, ch), &plane(&y, f, ch), h, w, scales);
        }
    }
    let n = (t * c).max(1) as f64;
    Ok(MsSsim { value: sum / n, scales })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Width of the first stage; later stages use 2, 4, 8 and 8 times this.
    pub base_width: usize,
    pub channels: usize,
    pub seed: u64,
    /// Archive of pretrained weights replacing the random initialization.
    pub weights_file: Option<String>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            base_width: 4,
            channels: 3,
            seed: 0x5eed,
            weights_file: None,
        }
    }
}

const STAGE_CONVS: [usize; 5] = [2, 2, 4, 4, 4];
const STAGE_WIDTH: [usize; 5] = [1, 2, 4, 8, 8];
const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Frozen VGG-19-shaped prefix applied to each frame independently. The
/// output is the last convolution of the fifth stage, before its ReLU.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    config: FeatureConfig,
    stages: Vec<Vec<Conv>>,
    params: ParamStore,
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig) -> Result<Self> {
        if config.base_width == 0 || config.channels == 0 {
            return Err(Error::Config("feature extractor needs nonzero width and channels".into()));
        }
        let mut stages = Vec::new();
        let mut cin = config.channels;
        for (s, (&n, &mult)) in STAGE_CONVS.iter().zip(&STAGE_WIDTH).enumerate() {
            let cout = config.base_width * mult;
            let stage = (0..n)
                .map(|j| {
                    let conv = Conv::new(format!("feat.s{}.c{}", s + 1, j + 1), cin, cout, [1, 3, 3], [1, 1, 1]);
                    cin = cout;
                    conv
                })
                .collect();
            stages.push(stage);
        }
        let mut fe = Self {
            config,
            stages,
            params: ParamStore::new(),
        };
        match fe.config.weights_file.clone() {
            Some(path) => fe.params = load_feature_weights(Path::new(&path))?,
            None => {
                for conv in fe.stages.iter().flatten() {
                    conv.init(&mut fe.params, fe.config.seed, 1.0);
                }
            }
        }
        fe.check()?;
        Ok(fe)
    }

    fn check(&self) -> Result<()> {
        for conv in self.stages.iter().flatten() {
            let w = self.params.get(&conv.weight_name()).map(|t| t.shape().to_vec());
            let b = self.params.get(&conv.bias_name()).map(|t| t.shape().to_vec());
            if w.as_deref() != Some(&conv.weight_shape()[..]) || b.as_deref() != Some(&[conv.cout][..]) {
                return Err(Error::Config(format!("feature weights do not fit layer {}", conv.name)));
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        let doc = serde_json::to_string(&self.config)?;
        let bytes = write_archive(&doc, self.params.iter().map(|(k, v)| (k.as_str(), v)))?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    fn normalize(&self, g: &Graph, x: Var) -> Var {
        let shape = g.shape(x);
        let c = shape[1];
        let plane: usize = shape[2..].iter().product();
        let (mut scale, mut shift) = (Vec::new(), Vec::new());
        for _ in 0..shape[0] {
            for ch in 0..c {
                let (m, s) = if c == 3 {
                    (IMAGENET_MEAN[ch], IMAGENET_STD[ch])
                } else {
                    (0.449, 0.226)
                };
                scale.extend(std::iter::repeat(1.0 / s).take(plane));
                shift.extend(std::iter::repeat(-m / s).take(plane));
            }
        }
        let scale = Tensor::new(shape.clone(), scale).expect("scale");
        let shift = Tensor::new(shape, shift).expect("shift");
        g.add_const(g.mul_const(x, &scale), &shift)
    }

    /// Features `[N, 8w, T, h', w']` of a unit-range `[N, C, T, H, W]` input.
    pub fn features(&self, g: &Graph, x: Var) -> Var {
        let p = self.params.bind(g, |_| false);
        let mut h = self.normalize(g, x);
        let last = self.stages.len() - 1;
        for (s, stage) in self.stages.iter().enumerate() {
            for (j, conv) in stage.iter().enumerate() {
                h = conv.forward(g, &p, h);
                if s == last && j + 1 == stage.len() {
                    return h;
                }
                h = g.relu(h);
            }
            // Sides already at 1 are left unpooled so small frames still reach the tap.
            let [_, _, _, hh, ww] = g.value(h).dims5();
            h = g.max_pool(h, [1, if hh >= 2 { 2 } else { 1 }, if ww >= 2 { 2 } else { 1 }]);
        }
        unreachable!("the tap lies in the last stage")
    }
}

pub fn load_feature_weights(path: &Path) -> Result<ParamStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let archive = read_archive(&bytes)?;
    let mut store = ParamStore::new();
    for (k, v) in archive.arrays {
        store.insert(k, v);
    }
    Ok(store)
}

/// Mean absolute feature difference between `x` and `y`.
pub fn perceptual_loss_var(g: &Graph, fe: &FeatureExtractor, x: Var, y: Var) -> Var {
    let fx = fe.features(g, x);
    let fy = fe.features(g, y);
    g.mean(g.abs(g.sub(fx, fy)))
}

pub fn perceptual_loss(x: &VideoClip, y: &VideoClip, fe: &FeatureExtractor) -> Result<f64> {
    check_same(x, y)?;
    if x.channels() != fe.config.channels {
        return Err(Error::Shape(format!(
            "extractor expects {} channels, clips have {}",
            fe.config.channels,
            x.channels()
        )));
    }
    let g = Graph::new();
    let a = g.constant(x.to_tensor());
    let b = g.constant(y.to_tensor());
    let loss = perceptual_loss_var(&g, fe, a, b);
    Ok(g.item(loss))
}

/// Weights of the pixel, perceptual, adversarial and rate terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLossWeights")]
pub struct LossWeights {
    pub alpha: f64,
    pub gamma: f64,
    pub rho: f64,
    pub beta: f64,
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawLossWeights {
    alpha: f64,
    gamma: f64,
    rho: f64,
    beta: f64,
}

impl Default for RawLossWeights {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            alpha: w.alpha,
            gamma: w.gamma,
            rho: w.rho,
            beta: w.beta,
        }
    }
}

impl TryFrom<RawLossWeights> for LossWeights {
    type Error = Error;

    fn try_from(r: RawLossWeights) -> Result<Self> {
        LossWeights::new(r.alpha, r.gamma, r.rho, r.beta)
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.005,
            gamma: 0.1,
            rho: 0.0001,
            beta: 0.1,
        }
    }
}

pub const BETA_SWEEP: [f64; 4] = [0.1, 0.3, 0.5, 0.7];

impl LossWeights {
    pub fn new(alpha: f64, gamma: f64, rho: f64, beta: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("gamma", gamma), ("rho", rho), ("beta", beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(Self { alpha, gamma, rho, beta })
    }

    /// Pretraining uses pixel error and rate only.
    pub fn for_pretraining(self) -> Self {
        Self {
            gamma: 0.0,
            rho: 0.0,
            ..self
        }
    }
}

/// Unweighted distortion components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DistortionTerms {
    pub pixel: f64,
    pub perceptual: f64,
    pub adversarial: f64,
}

impl DistortionTerms {
    /// `[α·pixel, γ·perceptual, ρ·adversarial]`.
    pub fn contributions(&self, w: &LossWeights) -> [f64; 3] {
        [w.alpha * self.pixel, w.gamma * self.perceptual, w.rho * self.adversarial]
    }
}

pub fn total_distortion(terms: &DistortionTerms, w: &LossWeights) -> f64 {
    terms.contributions(w).iter().sum()
}

pub fn total_distortion_var(g: &Graph, pixel: Var, perceptual: Var, adversarial: Var, w: &LossWeights) -> Var {
    let d = g.add(g.scale(pixel, w.alpha), g.scale(perceptual, w.gamma));
    g.add(d, g.scale(adversarial, w.rho))
}

/// `d + β·rate`, with rate in bits per pixel.
pub fn rd_objective(d: f64, rate_bpp: f64, beta: f64) -> f64 {
    d + beta * rate_bpp
}

pub fn rd_objective_var(g: &Graph, d: Var, rate_bpp: Var, beta: f64) -> Var {
    g.add(d, g.scale(rate_bpp, beta))
}

/// Per-step scalars written to the training log.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pixel_l2: f64,
    pub perceptual: f64,
    pub adversarial: f64,
    pub disc_obj: f64,
    pub rate_bpp: f64,
    pub total: f64,
}
