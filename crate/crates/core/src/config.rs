//! Run configuration: one JSON document with sections
//! `data`, `codec`, `entropy`, `loss` and `train`. Missing keys take defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversarial::{DiscriminatorConfig, GanKind};
use crate::codec::{CodecConfig, QuantizeMode};
use crate::data::SyntheticCorpusSpec;
use crate::distortion::{FeatureConfig, LossWeights, PixelNorm};
use crate::entropy::EntropyConfig;
use crate::error::{Error, Result};
use crate::nn::AdamConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub corpus: SyntheticCorpusSpec,
    /// Clips used only for evaluation.
    pub held_out: SyntheticCorpusSpec,
    pub crop_frames: usize,
    pub crop_height: usize,
    pub crop_width: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            corpus: SyntheticCorpusSpec::default(),
            held_out: SyntheticCorpusSpec {
                num_clips: 4,
                frames_per_clip: 8,
                seed: 1_000_003,
                ..SyntheticCorpusSpec::default()
            },
            crop_frames: 8,
            crop_height: 64,
            crop_width: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub rho: f64,
    pub beta: f64,
    pub gan_kind: GanKind,
    pub pixel_norm: PixelNorm,
    pub features: FeatureConfig,
    pub discriminator: DiscriminatorConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            alpha: w.alpha,
            gamma: w.gamma,
            rho: w.rho,
            beta: w.beta,
            gan_kind: GanKind::default(),
            pixel_norm: PixelNorm::default(),
            features: FeatureConfig::default(),
            discriminator: DiscriminatorConfig::default(),
        }
    }
}

impl LossConfig {
    pub fn weights(&self) -> Result<LossWeights> {
        LossWeights::new(self.alpha, self.gamma, self.rho, self.beta)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Pixel error plus rate.
    #[default]
    Pretrain,
    /// Alternating discriminator and codec updates on the composite distortion.
    Adversarial,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneScope {
    /// Encoder, decoder, prior and discriminators.
    #[default]
    Joint,
    /// Decoder and discriminators only.
    DecoderOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub stage: Stage,
    pub seed: u64,
    pub batch_size: usize,
    /// Optimizer steps in this run.
    pub steps: usize,
    /// Overrides `steps` with `epochs · ⌈clips / batch_size⌉` when set.
    pub epochs: Option<usize>,
    pub optimizer: AdamConfig,
    pub quantize_mode: QuantizeMode,
    pub finetune: FinetuneScope,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            stage: Stage::Pretrain,
            seed: 0,
            batch_size: 4,
            steps: 2000,
            epochs: None,
            optimizer: AdamConfig::default(),
            quantize_mode: QuantizeMode::Noise,
            finetune: FinetuneScope::Joint,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub data: DataConfig,
    pub codec: CodecConfig,
    pub entropy: EntropyConfig,
    pub loss: LossConfig,
    pub train: TrainSection,
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.codec.validate()?;
        self.data.corpus.validate()?;
        self.data.held_out.validate()?;
        self.loss.weights()?;
        let d = &self.data;
        if d.crop_frames == 0 || d.crop_frames > d.corpus.frames_per_clip {
            return Err(Error::Config(format!(
                "crop_frames {} must be in 1..={}",
                d.crop_frames, d.corpus.frames_per_clip
            )));
        }
        if d.crop_height > d.corpus.height || d.crop_width > d.corpus.width {
            return Err(Error::Config(format!(
                "crop {}x{} exceeds corpus frames of {}x{}",
                d.crop_height, d.crop_width, d.corpus.height, d.corpus.width
            )));
        }
        let as_config = |e: Error| Error::Config(e.to_string());
        self.codec
            .latent_dims(d.crop_frames, d.crop_height, d.crop_width)
            .map_err(as_config)?;
        self.codec
            .latent_dims(d.held_out.frames_per_clip, d.held_out.height, d.held_out.width)
            .map_err(as_config)?;
        if self.loss.features.channels != 3 || self.loss.discriminator.channels != 3 {
            return Err(Error::Config("features and discriminators must take 3-channel input".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.data.corpus.num_clips == 0 {
            return Err(Error::Config("training corpus is empty".into()));
        }
        Ok(())
    }

    /// Steps this run performs, after resolving `epochs`.
    pub fn total_steps(&self) -> usize {
        match self.train.epochs {
            Some(e) => e * self.data.corpus.num_clips.div_ceil(self.train.batch_size),
            None => self.train.steps,
        }
    }

    /// Loss weights for the configured stage; pretraining zeroes γ and ρ.
    pub fn stage_weights(&self) -> Result<LossWeights> {
        let w = self.loss.weights()?;
        Ok(match self.train.stage {
            Stage::Pretrain => w.for_pretraining(),
            Stage::Adversarial => w,
        })
    }
}
