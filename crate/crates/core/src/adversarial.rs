//! GAN objectives and the factorized spatial / spatio-temporal discriminators.
//!
//! Discriminator scores are raw logits. Each formulation is a triple of
//! component functions: the discriminator maximizes `E f(real) + E g(fake)`
//! and the generator minimizes `E h(fake)`.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::autograd::ops::softplus;
use crate::data::VideoClip;
use crate::error::{Error, Result};
use crate::nn::{Activation, Bound, Conv, ParamStore, ResBlock};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanKind {
    Minimax,
    Wasserstein,
    #[default]
    LeastSquares,
    /// Relativistic average over the minimax forms.
    Relativistic,
}

impl GanKind {
    pub const ALL: [GanKind; 4] = [
        GanKind::Minimax,
        GanKind::Wasserstein,
        GanKind::LeastSquares,
        GanKind::Relativistic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GanKind::Minimax => "minimax",
            GanKind::Wasserstein => "wasserstein",
            GanKind::LeastSquares => "least_squares",
            GanKind::Relativistic => "relativistic",
        }
    }

    /// Conventional model name of the formulation.
    pub fn label(self) -> &'static str {
        match self {
            GanKind::Minimax => "DCGAN",
            GanKind::Wasserstein => "WGAN",
            GanKind::LeastSquares => "LSGAN",
            GanKind::Relativistic => "RaGAN",
        }
    }
}

impl FromStr for GanKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "minimax" | "dcgan" => Ok(GanKind::Minimax),
            "wasserstein" | "wgan" => Ok(GanKind::Wasserstein),
            "least_squares" | "lsgan" => Ok(GanKind::LeastSquares),
            "relativistic" | "ragan" => Ok(GanKind::Relativistic),
            _ => Err(Error::Config(format!("unknown GAN kind {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ComponentFns {
    pub f: fn(f64) -> f64,
    pub g: fn(f64) -> f64,
    pub h: fn(f64) -> f64,
}

fn mm_f(y: f64) -> f64 {
    -softplus(-y)
}

fn mm_g(y: f64) -> f64 {
    -softplus(y)
}

fn w_f(y: f64) -> f64 {
    y
}

fn w_g(y: f64) -> f64 {
    -y
}

fn ls_f(y: f64) -> f64 {
    -(y - 1.0) * (y - 1.0)
}

fn ls_g(y: f64) -> f64 {
    -y * y
}

fn ls_h(y: f64) -> f64 {
    (y - 1.0) * (y - 1.0)
}

/// `(f, g, h)`; the relativistic kind uses the minimax triple on score differences.
pub fn component_functions(kind: GanKind) -> ComponentFns {
    match kind {
        GanKind::Minimax | GanKind::Relativistic => ComponentFns { f: mm_f, g: mm_g, h: mm_g },
        GanKind::Wasserstein => ComponentFns { f: w_f, g: w_g, h: w_g },
        GanKind::LeastSquares => ComponentFns { f: ls_f, g: ls_g, h: ls_h },
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_of(v: &[f64], f: fn(f64) -> f64, offset: f64) -> f64 {
    v.iter().map(|&y| f(y - offset)).sum::<f64>() / v.len() as f64
}

/// Objective the discriminator maximizes.
pub fn discriminator_objective(real: &[f64], fake: &[f64], kind: GanKind) -> Result<f64> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::EmptyBatch("discriminator objective"));
    }
    let c = component_functions(kind);
    Ok(match kind {
        GanKind::Relativistic => mean_of(real, c.f, mean(fake)) + mean_of(fake, c.g, mean(real)),
        _ => mean_of(real, c.f, 0.0) + mean_of(fake, c.g, 0.0),
    })
}

/// Objective the generator minimizes. The relativistic kind also needs the
/// real scores, which enter only as constants.
pub fn generator_objective(fake: &[f64], real: Option<&[f64]>, kind: GanKind) -> Result<f64> {
    if fake.is_empty() {
        return Err(Error::EmptyBatch("generator objective"));
    }
    let c = component_functions(kind);
    match kind {
        GanKind::Relativistic => {
            let real = real
                .filter(|r| !r.is_empty())
                .ok_or(Error::EmptyBatch("relativistic generator objective needs real scores"))?;
            Ok(mean_of(real, c.f, mean(fake)) + mean_of(fake, c.h, mean(real)))
        }
        _ => Ok(mean_of(fake, c.h, 0.0)),
    }
}

#[derive(Clone, Copy)]
enum Component {
    F,
    G,
    H,
}

fn apply_var(g: &Graph, y: Var, kind: GanKind, which: Component) -> Var {
    use Component::*;
    match (kind, which) {
        (GanKind::Minimax | GanKind::Relativistic, F) => g.neg(g.softplus(g.neg(y))),
        (GanKind::Minimax | GanKind::Relativistic, G | H) => g.neg(g.softplus(y)),
        (GanKind::Wasserstein, F) => y,
        (GanKind::Wasserstein, G | H) => g.neg(y),
        (GanKind::LeastSquares, F) => g.neg(g.square(g.shift(y, -1.0))),
        (GanKind::LeastSquares, G) => g.neg(g.square(y)),
        (GanKind::LeastSquares, H) => g.square(g.shift(y, -1.0)),
    }
}

fn centered(g: &Graph, y: Var, other: Var) -> Var {
    g.add_broadcast(y, g.neg(g.mean(other)))
}

pub fn discriminator_objective_var(g: &Graph, real: Var, fake: Var, kind: GanKind) -> Var {
    let (r, f) = match kind {
        GanKind::Relativistic => (centered(g, real, fake), centered(g, fake, real)),
        _ => (real, fake),
    };
    g.add(
        g.mean(apply_var(g, r, kind, Component::F)),
        g.mean(apply_var(g, f, kind, Component::G)),
    )
}

/// # Panics
/// If `kind` is relativistic and `real` is `None`.
pub fn generator_objective_var(g: &Graph, fake: Var, real: Option<Var>, kind: GanKind) -> Var {
    match kind {
        GanKind::Relativistic => {
            let real = real.expect("relativistic generator objective needs real scores");
            let r = centered(g, real, fake);
            let f = centered(g, fake, real);
            g.add(
                g.mean(apply_var(g, r, kind, Component::F)),
                g.mean(apply_var(g, f, kind, Component::H)),
            )
        }
        _ => g.mean(apply_var(g, fake, kind, Component::H)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub width: usize,
    /// Residual blocks per branch, each two convolutions.
    pub blocks: usize,
    pub channels: usize,
    /// Weight clipping bound for the Wasserstein formulation.
    pub clip: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            width: 8,
            blocks: 2,
            channels: 3,
            clip: 0.01,
        }
    }
}

/// Smallest frame side either branch accepts.
pub const MIN_FRAME: usize = 8;

#[derive(Clone, Debug)]
struct Branch {
    stem: Conv,
    down: [Conv; 2],
    blocks: Vec<ResBlock>,
    head: Conv,
}

const SLOPE: f64 = 0.2;

impl Branch {
    fn new(prefix: &str, c: &DiscriminatorConfig, kernel: [usize; 3]) -> Self {
        let w = c.width;
        Self {
            stem: Conv::new(format!("{prefix}.stem"), c.channels, w, kernel, [1, 1, 1]),
            down: [
                Conv::new(format!("{prefix}.down1"), w, 2 * w, kernel, [1, 2, 2]),
                Conv::new(format!("{prefix}.down2"), 2 * w, 2 * w, kernel, [1, 2, 2]),
            ],
            blocks: (0..c.blocks)
                .map(|i| ResBlock::new(&format!("{prefix}.res{i}"), 2 * w, kernel, Activation::Leaky(SLOPE)))
                .collect(),
            head: Conv::new(format!("{prefix}.head"), 2 * w, 1, [1, 1, 1], [1, 1, 1]),
        }
    }

    fn init(&self, store: &mut ParamStore, seed: u64) {
        self.stem.init(store, seed, 1.0);
        for d in &self.down {
            d.init(store, seed, 1.0);
        }
        for b in &self.blocks {
            b.init(store, seed);
        }
        self.head.init(store, seed, 1.0);
    }

    /// Features before global pooling.
    fn trunk(&self, g: &Graph, p: &Bound, x: Var) -> Var {
        let mut h = g.leaky_relu(self.stem.forward(g, p, x), SLOPE);
        for d in &self.down {
            h = g.leaky_relu(d.forward(g, p, h), SLOPE);
        }
        for b in &self.blocks {
            h = b.forward(g, p, h);
        }
        h
    }
}

/// Per-frame 2-D discriminator and clip-level 3-D discriminator on the
/// 2× spatially average-pooled clip.
#[derive(Clone, Debug)]
pub struct DiscriminatorPair {
    config: DiscriminatorConfig,
    spatial: Branch,
    temporal: Branch,
}

pub const SPATIAL_PREFIX: &str = "disc_s.";
pub const TEMPORAL_PREFIX: &str = "disc_t.";

impl DiscriminatorPair {
    pub fn new(config: DiscriminatorConfig) -> Result<Self> {
        if config.width == 0 || config.channels == 0 {
            return Err(Error::Config("discriminators need nonzero width and channels".into()));
        }
        if !(config.clip > 0.0) {
            return Err(Error::Config("discriminator clip bound must be positive".into()));
        }
        Ok(Self {
            spatial: Branch::new("disc_s", &config, [1, 3, 3]),
            temporal: Branch::new("disc_t", &config, [3, 3, 3]),
            config,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        self.spatial.init(store, seed);
        self.temporal.init(store, seed);
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        self.init(&mut store, seed);
        store
    }

    pub fn check_params(&self, store: &ParamStore) -> Result<()> {
        let mine = store.subset("disc_");
        if self.init_params(0).shapes() != mine.shapes() {
            return Err(Error::Config("discriminator parameters do not match the configuration".into()));
        }
        Ok(())
    }

    fn check_input(&self, g: &Graph, x: Var) -> Result<()> {
        let s = g.shape(x);
        if s.len() != 5 || s[1] != self.config.channels {
            return Err(Error::Shape(format!("discriminator input {s:?} needs {} channels", self.config.channels)));
        }
        if s[3] < MIN_FRAME || s[4] < MIN_FRAME {
            return Err(Error::Shape(format!(
                "discriminator frames must be at least {MIN_FRAME}×{MIN_FRAME}, got {}×{}",
                s[3], s[4]
            )));
        }
        Ok(())
    }

    /// One score per frame, `[N·T]` in batch-major order.
    pub fn spatial_scores(&self, g: &Graph, p: &Bound, x: Var) -> Result<Var> {
        self.check_input(g, x)?;
        let h = self.spatial.trunk(g, p, x);
        let s = self.spatial.head.forward(g, p, g.mean_hw(h));
        let n = g.value(s).len();
        Ok(g.reshape(s, vec![n]))
    }

    /// The exact input the spatio-temporal branch scores.
    pub fn temporal_input(&self, g: &Graph, x: Var) -> Var {
        g.avg_pool(x, [1, 2, 2])
    }

    /// One score per clip, `[N]`.
    pub fn temporal_scores(&self, g: &Graph, p: &Bound, x: Var) -> Result<Var> {
        self.check_input(g, x)?;
        let h = self.temporal.trunk(g, p, self.temporal_input(g, x));
        let s = self.temporal.head.forward(g, p, g.mean_thw(h));
        let n = g.value(s).len();
        Ok(g.reshape(s, vec![n]))
    }

    /// Mean of the two branches' generator objectives.
    pub fn generator_term(&self, g: &Graph, p: &Bound, fake: Var, real: Option<Var>, kind: GanKind) -> Result<Var> {
        let s = generator_objective_var(
            g,
            self.spatial_scores(g, p, fake)?,
            real.map(|r| self.spatial_scores(g, p, r)).transpose()?,
            kind,
        );
        let t = generator_objective_var(
            g,
            self.temporal_scores(g, p, fake)?,
            real.map(|r| self.temporal_scores(g, p, r)).transpose()?,
            kind,
        );
        Ok(g.scale(g.add(s, t), 0.5))
    }

    /// Mean of the two branches' discriminator objectives.
    pub fn discriminator_term(&self, g: &Graph, p: &Bound, real: Var, fake: Var, kind: GanKind) -> Result<Var> {
        let s = discriminator_objective_var(g, self.spatial_scores(g, p, real)?, self.spatial_scores(g, p, fake)?, kind);
        let t = discriminator_objective_var(g, self.temporal_scores(g, p, real)?, self.temporal_scores(g, p, fake)?, kind);
        Ok(g.scale(g.add(s, t), 0.5))
    }

    /// Clamps discriminator weights to `±clip` (Wasserstein only).
    pub fn clip_weights(&self, store: &mut ParamStore) {
        let c = self.config.clip;
        for (name, t) in store.iter_mut() {
            if name.starts_with(SPATIAL_PREFIX) || name.starts_with(TEMPORAL_PREFIX) {
                for v in t.data_mut() {
                    *v = v.clamp(-c, c);
                }
            }
        }
    }
}

fn scores_of(
    pair: &DiscriminatorPair,
    clip: &VideoClip,
    params: &ParamStore,
    f: impl Fn(&DiscriminatorPair, &Graph, &Bound, Var) -> Result<Var>,
) -> Result<Vec<f64>> {
    let g = Graph::new();
    let p = params.bind(&g, |_| false);
    let x = g.constant(clip.to_tensor());
    let s = f(pair, &g, &p, x)?;
    let out = g.value(s).data().to_vec();
    Ok(out)
}

/// Per-frame scores of one clip.
pub fn spatial_disc_forward(pair: &DiscriminatorPair, clip: &VideoClip, params: &ParamStore) -> Result<Vec<f64>> {
    scores_of(pair, clip, params, |d, g, p, x| d.spatial_scores(g, p, x))
}

/// Clip score.
pub fn st_disc_forward(pair: &DiscriminatorPair, clip: &VideoClip, params: &ParamStore) -> Result<f64> {
    Ok(scores_of(pair, clip, params, |d, g, p, x| d.temporal_scores(g, p, x))?[0])
}

/// `½ (spatial term + spatio-temporal term)` for already-computed branch terms.
pub fn factorized_generator_term(spatial_term: f64, temporal_term: f64) -> f64 {
    0.5 * (spatial_term + temporal_term)
}
