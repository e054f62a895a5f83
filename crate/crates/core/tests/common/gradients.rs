//! Finite-difference checks of every differentiable loss on 2×8×8×3 clips.

use navc_core::adversarial::{DiscriminatorConfig, DiscriminatorPair, GanKind};
use navc_core::autograd::Graph;
use navc_core::codec::{quantize_var, uniform_noise, Codec, CodecConfig, QuantizeMode};
use navc_core::distortion::{
    perceptual_loss_var, pixel_distance_var, total_distortion_var, FeatureConfig, FeatureExtractor, LossWeights,
    PixelNorm,
};
use navc_core::entropy::{EntropyConfig, EntropyModel};
use navc_core::nn::ParamStore;
use navc_core::Tensor;
use rand::Rng;

use super::{directional_check, random_clip, rng};

const DIMS: [usize; 4] = [2, 8, 8, 3];
const DIRECTIONS: usize = 6;

pub fn flatten(store: &ParamStore) -> Vec<f64> {
    store.iter().flat_map(|(_, t)| t.data().to_vec()).collect()
}

pub fn unflatten(template: &ParamStore, values: &[f64]) -> ParamStore {
    let mut out = template.clone();
    let mut at = 0;
    for (_, t) in out.iter_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&values[at..at + n]);
        at += n;
    }
    out
}

fn grads_flat(template: &ParamStore, named: &std::collections::BTreeMap<String, Tensor>) -> Vec<f64> {
    template
        .iter()
        .flat_map(|(k, t)| named.get(k).map_or_else(|| vec![0.0; t.len()], |g| g.data().to_vec()))
        .collect()
}

fn input(seed: u64) -> Tensor {
    random_clip(DIMS, seed).to_tensor()
}

fn with_data(like: &Tensor, v: &[f64]) -> Tensor {
    Tensor::new(like.shape().to_vec(), v.to_vec()).unwrap()
}

/// `loss(x̂)` against a fixed target, checked with respect to `x̂`.
fn check_wrt_input(loss: &dyn Fn(&Graph, navc_core::autograd::Var, navc_core::autograd::Var) -> navc_core::autograd::Var, seed: u64) -> f64 {
    let x = input(seed);
    let y = input(seed + 1);
    let eval = |v: &[f64]| {
        let g = Graph::new();
        let a = g.constant(x.clone());
        let b = g.constant(with_data(&y, v));
        let l = loss(&g, a, b);
        g.item(l)
    };
    let g = Graph::new();
    let a = g.constant(x.clone());
    let b = g.param(y.clone());
    let l = loss(&g, a, b);
    let grads = g.backward(l);
    let grad = grads.get(b).unwrap().data().to_vec();
    directional_check(&eval, y.data(), &grad, DIRECTIONS, seed)
}

pub fn pixel(norm: PixelNorm) -> f64 {
    check_wrt_input(&|g, a, b| pixel_distance_var(g, a, b, norm), 11)
}

pub fn perceptual() -> f64 {
    let fe = FeatureExtractor::new(FeatureConfig::default()).unwrap();
    check_wrt_input(&|g, a, b| perceptual_loss_var(g, &fe, a, b), 21)
}

/// Pixel, perceptual and least-squares generator terms under the default weights.
pub fn composite() -> f64 {
    let fe = FeatureExtractor::new(FeatureConfig::default()).unwrap();
    let disc = DiscriminatorPair::new(DiscriminatorConfig::default()).unwrap();
    let dp = disc.init_params(5);
    let w = LossWeights::default();
    check_wrt_input(
        &|g, a, b| {
            let p = dp.bind(g, |_| false);
            let pix = pixel_distance_var(g, a, b, PixelNorm::L2);
            let perc = perceptual_loss_var(g, &fe, a, b);
            let adv = disc.generator_term(g, &p, b, None, GanKind::LeastSquares).unwrap();
            total_distortion_var(g, pix, perc, adv, &w)
        },
        31,
    )
}

fn random_prior(model: &EntropyModel, seed: u64) -> ParamStore {
    let mut params = model.init_params(seed);
    let mut r = rng(seed);
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            *v += 0.3 * (r.gen::<f64>() - 0.5);
        }
    }
    params
}

/// Rate in bits of real-valued targets under a fixed conditioning grid:
/// worst error over the targets and over the prior parameters.
pub fn rate() -> (f64, f64) {
    let alphabet = 8;
    let model = EntropyModel::new(&EntropyConfig::default(), 3, alphabet).unwrap();
    let params = random_prior(&model, 41);
    let shape = vec![1, 3, 2, 2, 2];
    let n: usize = shape.iter().product();
    let mut r = rng(43);
    // Keep targets away from the integer and half-integer kinks of the interpolation.
    let targets: Vec<f64> = (0..n)
        .map(|_| r.gen_range(0..alphabet - 1) as f64 + 0.1 + 0.3 * r.gen::<f64>() + if r.gen() { 0.5 } else { 0.0 })
        .collect();
    let condition: Vec<f64> = targets.iter().map(|v| v.round()).collect();
    let targets = Tensor::new(shape.clone(), targets).unwrap();
    let condition = Tensor::new(shape, condition).unwrap();

    let bits = |prior: &ParamStore, t: &Tensor| {
        let g = Graph::new();
        let p = prior.bind(&g, |_| false);
        let c = g.constant(condition.clone());
        let tv = g.constant(t.clone());
        let l = model.rate_bits(&g, &p, c, tv);
        g.item(l)
    };
    let g = Graph::new();
    let p = params.bind(&g, |_| true);
    let c = g.constant(condition.clone());
    let tv = g.param(targets.clone());
    let l = model.rate_bits(&g, &p, c, tv);
    let mut grads = g.backward(l);
    let gt = grads.get(tv).unwrap().data().to_vec();
    let gp = grads_flat(&params, &p.gradients(&mut grads));

    let wrt_targets = directional_check(&|v| bits(&params, &with_data(&targets, v)), targets.data(), &gt, DIRECTIONS, 44);
    let wrt_prior = directional_check(&|v| bits(&unflatten(&params, v), &targets), &flatten(&params), &gp, DIRECTIONS, 45);
    (wrt_targets, wrt_prior)
}

/// Mean squared error of `D(E(x) + u)` with fixed noise `u`: worst error with
/// respect to the input and with respect to all codec parameters.
pub fn codec_roundtrip() -> (f64, f64) {
    let codec = Codec::new(CodecConfig {
        spatial_downsample: 4,
        latent_channels: 2,
        num_levels: 8,
        base_width: 4,
        depth: 1,
        ..CodecConfig::default()
    })
    .unwrap();
    let params = codec.init_params(51);
    let x = input(52);
    let max_symbol = codec.config().max_symbol();
    let latent_shape = {
        let g = Graph::new();
        let p = params.bind(&g, |_| false);
        let xv = g.constant(x.clone());
        let z = codec.encode(&g, &p, xv).unwrap();
        let s = g.value(z).shape().to_vec();
        s
    };
    let noise = uniform_noise(&latent_shape, 53, 0);
    let loss = |g: &Graph, p: &navc_core::nn::Bound, xv| {
        let z = codec.encode(g, p, xv).unwrap();
        let q = quantize_var(g, z, QuantizeMode::Noise, max_symbol, Some(&noise));
        let y = codec.decode(g, p, q, DIMS[0]).unwrap();
        pixel_distance_var(g, xv, y, PixelNorm::L2)
    };
    let value = |store: &ParamStore, input: &Tensor| {
        let g = Graph::new();
        let p = store.bind(&g, |_| false);
        let xv = g.constant(input.clone());
        let l = loss(&g, &p, xv);
        g.item(l)
    };
    let g = Graph::new();
    let p = params.bind(&g, |_| true);
    let xv = g.param(x.clone());
    let l = loss(&g, &p, xv);
    let mut grads = g.backward(l);
    let gx = grads.get(xv).unwrap().data().to_vec();
    let gp = grads_flat(&params, &p.gradients(&mut grads));

    let wrt_input = directional_check(&|v| value(&params, &with_data(&x, v)), x.data(), &gx, DIRECTIONS, 54);
    let wrt_params = directional_check(&|v| value(&unflatten(&params, v), &x), &flatten(&params), &gp, DIRECTIONS, 55);
    (wrt_input, wrt_params)
}

/// Every check as `(name, worst relative error)`.
pub fn suite() -> Vec<(&'static str, f64)> {
    let (rate_t, rate_p) = rate();
    let (codec_x, codec_p) = codec_roundtrip();
    vec![
        ("pixel l2", pixel(PixelNorm::L2)),
        ("pixel l1", pixel(PixelNorm::L1)),
        ("perceptual", perceptual()),
        ("composite distortion", composite()),
        ("rate wrt targets", rate_t),
        ("rate wrt prior", rate_p),
        ("codec round trip wrt input", codec_x),
        ("codec round trip wrt params", codec_p),
    ]
}
