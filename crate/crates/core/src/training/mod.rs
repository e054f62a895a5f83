//! Two-stage optimization: rate + pixel-error pretraining, then alternating
//! discriminator / codec updates on the composite distortion.
//!
//! Every random draw (batch selection, crops, quantization noise) is a pure
//! function of `(train.seed, step)`, so a run is reproducible to the bit.

pub mod checkpoint;
pub mod log;

use rand::Rng;

use crate::adversarial::{DiscriminatorPair, GanKind};
use crate::autograd::{Graph, Var};
use crate::codec::{quantize_var, uniform_noise, Codec, QuantizeMode};
use crate::config::{FinetuneScope, Stage, TrainConfig};
use crate::data::{batch_to_tensor, frame_window, generate_synthetic_corpus, random_crop, VideoClip};
use crate::distortion::{
    perceptual_loss_var, pixel_distance_var, rd_objective_var, total_distortion_var, FeatureExtractor, LossBreakdown,
    LossWeights, PixelNorm,
};
use crate::entropy::EntropyModel;
use crate::error::{Error, Result};
use crate::nn::{seeded_rng, Adam, Bound, ParamStore};
use crate::tensor::Tensor;

pub use checkpoint::Checkpoint;
pub use log::{write_log, LogRow, LOG_COLUMNS};

/// Every network a configuration describes.
#[derive(Clone, Debug)]
pub struct Model {
    pub codec: Codec,
    pub prior: EntropyModel,
    pub disc: DiscriminatorPair,
    pub features: FeatureExtractor,
}

impl Model {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        let codec = Codec::new(config.codec.clone())?;
        let prior = EntropyModel::new(&config.entropy, config.codec.latent_channels, config.codec.num_levels)?;
        let disc = DiscriminatorPair::new(config.loss.discriminator.clone())?;
        let features = FeatureExtractor::new(config.loss.features.clone())?;
        Ok(Self {
            codec,
            prior,
            disc,
            features,
        })
    }

    /// Encoder, decoder, prior and discriminator parameters.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut store = self.codec.init_params(seed);
        self.prior.init(&mut store, seed);
        self.disc.init(&mut store, seed);
        store
    }

    pub fn check_params(&self, params: &ParamStore) -> Result<()> {
        if self.init_params(0).shapes() != params.shapes() {
            return Err(Error::Config("checkpoint parameters do not match its configuration".into()));
        }
        Ok(())
    }
}

pub fn is_codec_param(name: &str) -> bool {
    name.starts_with("enc.") || name.starts_with("dec.") || name.starts_with("prior.")
}

pub fn is_disc_param(name: &str) -> bool {
    name.starts_with("disc_")
}

/// Training crops for one step.
pub fn sample_batch(corpus: &[VideoClip], config: &TrainConfig, step: u64) -> Result<Vec<VideoClip>> {
    let d = &config.data;
    let mut rng = seeded_rng(config.train.seed ^ step.wrapping_mul(0xd134_2543_de82_ef95), "batch");
    (0..config.train.batch_size)
        .map(|_| {
            let clip = &corpus[rng.gen_range(0..corpus.len())];
            let start = rng.gen_range(0..=clip.frames() - d.crop_frames);
            let window = frame_window(clip, start, d.crop_frames)?;
            random_crop(&window, d.crop_height, d.crop_width, rng.gen())
        })
        .collect()
}

/// Result of one training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
}

struct Forward {
    x: Var,
    xhat: Var,
    bpp: Var,
}

struct Trainer<'a> {
    config: &'a TrainConfig,
    model: Model,
    weights: LossWeights,
    params: ParamStore,
    adam: Adam,
    step: u64,
}

fn check_finite(step: u64, terms: &[(&str, f64)]) -> Result<()> {
    for &(name, v) in terms {
        if !v.is_finite() {
            return Err(Error::Divergence {
                step: step as usize,
                term: name.to_owned(),
            });
        }
    }
    Ok(())
}

impl Trainer<'_> {
    fn noise(&self, shape: &[usize]) -> Option<Tensor> {
        (self.config.train.quantize_mode == QuantizeMode::Noise).then(|| uniform_noise(shape, self.config.train.seed, self.step))
    }

    /// Codec forward pass with the training-time quantizer and the rate in bits per pixel.
    fn forward(&self, g: &Graph, p: &Bound, batch: &Tensor) -> Result<Forward> {
        let codec = &self.model.codec;
        let x = g.constant(batch.clone());
        let z = codec.encode(g, p, x)?;
        let noise = self.noise(&g.shape(z));
        let top = codec.config().max_symbol();
        let zq = quantize_var(g, z, self.config.train.quantize_mode, top, noise.as_ref());
        let condition = g.round_straight_through(zq);
        let bits = self.model.prior.rate_bits(g, p, condition, zq);
        let [n, _, t, h, w] = batch.dims5();
        let bpp = g.scale(bits, 1.0 / (n * t * h * w) as f64);
        let xhat = codec.decode(g, p, zq, t)?;
        Ok(Forward { x, xhat, bpp })
    }

    fn apply(&mut self, g: &Graph, p: &Bound, loss: Var) {
        let mut grads = g.backward(loss);
        let named = p.gradients(&mut grads);
        self.adam.step(&self.config.train.optimizer, &mut self.params, &named);
    }

    fn pretrain_step(&mut self, batch: &Tensor) -> Result<LossBreakdown> {
        let g = Graph::new();
        let p = self.params.bind(&g, is_codec_param);
        let f = self.forward(&g, &p, batch)?;
        let mse = pixel_distance_var(&g, f.x, f.xhat, PixelNorm::L2);
        let loss = rd_objective_var(&g, mse, f.bpp, self.weights.beta);
        let out = LossBreakdown {
            pixel_l2: g.item(mse),
            rate_bpp: g.item(f.bpp),
            total: g.item(loss),
            ..LossBreakdown::default()
        };
        check_finite(self.step, &[("pixel_l2", out.pixel_l2), ("rate_bpp", out.rate_bpp), ("total", out.total)])?;
        self.apply(&g, &p, loss);
        Ok(out)
    }

    /// Maximizes the averaged discriminator objective on detached reconstructions.
    fn discriminator_step(&mut self, batch: &Tensor) -> Result<f64> {
        let kind = self.config.loss.gan_kind;
        let g = Graph::new();
        let p = self.params.bind(&g, is_disc_param);
        let f = self.forward(&g, &p, batch)?;
        let obj = self.model.disc.discriminator_term(&g, &p, f.x, f.xhat, kind)?;
        let value = g.item(obj);
        check_finite(self.step, &[("discriminator objective", value)])?;
        let loss = g.neg(obj);
        self.apply(&g, &p, loss);
        if kind == GanKind::Wasserstein {
            self.model.disc.clip_weights(&mut self.params);
        }
        Ok(value)
    }

    fn generator_step(&mut self, batch: &Tensor) -> Result<LossBreakdown> {
        let c = self.config;
        let trainable: fn(&str) -> bool = match c.train.finetune {
            FinetuneScope::Joint => is_codec_param,
            FinetuneScope::DecoderOnly => |n: &str| n.starts_with("dec."),
        };
        let g = Graph::new();
        let p = self.params.bind(&g, trainable);
        let f = self.forward(&g, &p, batch)?;
        let pixel = pixel_distance_var(&g, f.x, f.xhat, c.loss.pixel_norm);
        let perceptual = perceptual_loss_var(&g, &self.model.features, f.x, f.xhat);
        let real = (c.loss.gan_kind == GanKind::Relativistic).then_some(f.x);
        let adversarial = self.model.disc.generator_term(&g, &p, f.xhat, real, c.loss.gan_kind)?;
        let d = total_distortion_var(&g, pixel, perceptual, adversarial, &self.weights);
        let loss = rd_objective_var(&g, d, f.bpp, self.weights.beta);
        let out = LossBreakdown {
            pixel_l2: g.item(pixel),
            perceptual: g.item(perceptual),
            adversarial: g.item(adversarial),
            disc_obj: 0.0,
            rate_bpp: g.item(f.bpp),
            total: g.item(loss),
        };
        check_finite(
            self.step,
            &[
                ("pixel distance", out.pixel_l2),
                ("perceptual", out.perceptual),
                ("adversarial", out.adversarial),
                ("rate_bpp", out.rate_bpp),
                ("total", out.total),
            ],
        )?;
        self.apply(&g, &p, loss);
        Ok(out)
    }
}

/// Runs `config.total_steps()` steps of `config.train.stage`, starting from
/// `init` or from fresh parameters drawn from `train.seed`.
pub fn train(config: &TrainConfig, init: Option<&Checkpoint>) -> Result<TrainOutcome> {
    config.validate()?;
    let model = Model::new(config)?;
    let (params, adam, step) = match init {
        Some(ck) => {
            model.check_params(&ck.params)?;
            (ck.params.clone(), ck.adam.clone(), ck.step)
        }
        None => (model.init_params(config.train.seed), Adam::default(), 0),
    };
    let corpus = generate_synthetic_corpus(&config.data.corpus)?;
    let mut trainer = Trainer {
        config,
        weights: config.stage_weights()?,
        model,
        params,
        adam,
        step,
    };
    let mut log = Vec::with_capacity(config.total_steps());
    for _ in 0..config.total_steps() {
        let clips = sample_batch(&corpus, config, trainer.step)?;
        let batch = batch_to_tensor(&clips);
        let loss = match config.train.stage {
            Stage::Pretrain => trainer.pretrain_step(&batch)?,
            Stage::Adversarial => {
                let disc_obj = trainer.discriminator_step(&batch)?;
                LossBreakdown {
                    disc_obj,
                    ..trainer.generator_step(&batch)?
                }
            }
        };
        trainer.step += 1;
        log.push(LogRow { step: trainer.step, loss });
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: config.clone(),
            params: trainer.params,
            adam: trainer.adam,
            step: trainer.step,
        },
        log,
    })
}

/// Rate + MSE training from fresh parameters.
pub fn pretrain(config: &TrainConfig) -> Result<TrainOutcome> {
    if config.train.stage != Stage::Pretrain {
        return Err(Error::Config("pretrain needs train.stage = \"pretrain\"".into()));
    }
    train(config, None)
}

/// Adversarial finetuning from a checkpoint whose architecture matches `config`.
pub fn adversarial_train(config: &TrainConfig, init: &Checkpoint) -> Result<TrainOutcome> {
    if config.train.stage != Stage::Adversarial {
        return Err(Error::Config("adversarial_train needs train.stage = \"adversarial\"".into()));
    }
    if init.config.codec != config.codec || init.config.entropy != config.entropy {
        return Err(Error::Config("initial checkpoint was trained with a different codec or prior".into()));
    }
    train(config, Some(init))
}
