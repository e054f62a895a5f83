//! End-to-end compression, evaluation reports, rate sweeps and the GAN ablation grid.

use std::io::Write;

use crate::adversarial::GanKind;
use crate::codec::{decoder_forward, encoder_forward, quantize, LatentGrid, QuantizeMode};
use crate::config::{Stage, TrainConfig};
use crate::data::{generate_synthetic_corpus, VideoClip};
use crate::distortion::{ms_ssim, perceptual_loss, psnr, FeatureExtractor, PixelNorm};
use crate::entropy::bitstream::{read_stream, write_stream, StreamHeader};
use crate::entropy::bits_per_pixel;
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::training::{adversarial_train, pretrain, Checkpoint, Model};

/// Frame rate given to decoded clips; streams do not carry one.
pub const DEFAULT_FPS: f64 = 25.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompressReport {
    /// Whole file: header, payload and checksum.
    pub bits: u64,
    pub payload_bits: u64,
    /// Code length predicted from the quantized prior tables.
    pub estimated_bits: f64,
    pub bpp: f64,
}

fn dim16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::OutOfBounds(format!("{what} = {v} does not fit the stream header")))
}

/// Hard-quantized latents of a clip.
pub fn latents(model: &Model, params: &ParamStore, clip: &VideoClip) -> Result<LatentGrid> {
    let z = encoder_forward(&model.codec, params, clip)?;
    Ok(quantize(&z, QuantizeMode::Hard, model.codec.config().max_symbol(), None))
}

pub fn compress_clip(
    model: &Model,
    params: &ParamStore,
    model_hash: u64,
    clip: &VideoClip,
) -> Result<(Vec<u8>, CompressReport)> {
    let [t, h, w, c] = clip.dims();
    let z = latents(model, params, clip)?;
    let payload = model.prior.range_encode(params, &z)?;
    let estimated_bits = model.prior.estimate_rate_quantized(params, &z)?;
    let [lt, lh, lw, lc] = z.dims();
    let header = StreamHeader {
        frames: dim16(t, "frames")?,
        height: dim16(h, "height")?,
        width: dim16(w, "width")?,
        channels: u8::try_from(c).map_err(|_| Error::OutOfBounds(format!("{c} channels")))?,
        max_symbol: model.codec.config().max_symbol() as u8,
        latent: [dim16(lt, "latent frames")?, dim16(lh, "latent height")?, dim16(lw, "latent width")?],
        latent_channels: dim16(lc, "latent channels")?,
        model_hash,
    };
    let bytes = write_stream(&header, &payload)?;
    let bits = bytes.len() as u64 * 8;
    let report = CompressReport {
        bits,
        payload_bits: payload.len() as u64 * 8,
        estimated_bits,
        bpp: bits_per_pixel(bits as f64, t, h, w)?,
    };
    Ok((bytes, report))
}

/// Decodes a stream, refusing streams made by a different checkpoint or
/// whose header disagrees with the model configuration.
pub fn decompress_stream(model: &Model, params: &ParamStore, model_hash: u64, bytes: &[u8]) -> Result<VideoClip> {
    let (header, payload) = read_stream(bytes)?;
    if header.model_hash != model_hash {
        return Err(Error::ModelMismatch {
            stream: header.model_hash,
            checkpoint: model_hash,
        });
    }
    let cfg = model.codec.config();
    if usize::from(header.max_symbol) != cfg.max_symbol() || header.channels != 3 {
        return Err(Error::Config(format!(
            "stream has L = {} and {} channels, model has L = {} and 3 channels",
            header.max_symbol,
            header.channels,
            cfg.max_symbol()
        )));
    }
    let (t, h, w) = (usize::from(header.frames), usize::from(header.height), usize::from(header.width));
    let expected = cfg.latent_dims(t, h, w).map_err(|e| Error::Config(e.to_string()))?;
    let dims = header.latent_dims();
    if dims[..3] != expected || dims[3] != cfg.latent_channels {
        return Err(Error::Config(format!(
            "stream latent grid {dims:?} does not match {t}x{h}x{w} under this model"
        )));
    }
    let z = model.prior.range_decode(params, payload, dims)?;
    decoder_forward(&model.codec, params, &z, t, DEFAULT_FPS)
}

/// In-memory reference: hard-quantized round trip without a bitstream.
pub fn reconstruct(model: &Model, params: &ParamStore, clip: &VideoClip) -> Result<VideoClip> {
    let z = latents(model, params, clip)?;
    decoder_forward(&model.codec, params, &z, clip.frames(), DEFAULT_FPS)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipMetrics {
    pub name: String,
    pub psnr_db: f64,
    pub msssim: f64,
    pub perceptual_proxy: f64,
    pub bpp: Option<f64>,
}

pub fn clip_metrics(
    name: &str,
    original: &VideoClip,
    decoded: &VideoClip,
    bpp: Option<f64>,
    features: &FeatureExtractor,
) -> Result<ClipMetrics> {
    Ok(ClipMetrics {
        name: name.to_owned(),
        psnr_db: psnr(original, decoded)?,
        msssim: ms_ssim(original, decoded)?.value,
        perceptual_proxy: perceptual_loss(original, decoded, features)?,
        bpp,
    })
}

pub const EVAL_COLUMNS: [&str; 5] = ["name", "psnr_db", "msssim", "perceptual_proxy", "bpp"];

/// Shortest round-trip decimal; infinities print as `inf`.
pub fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        v.to_string()
    }
}

pub fn write_eval_csv<W: Write>(out: W, rows: &[ClipMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVAL_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.name.clone(),
            fmt_f64(r.psnr_db),
            fmt_f64(r.msssim),
            fmt_f64(r.perceptual_proxy),
            r.bpp.map(fmt_f64).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Metrics of a model on a clip set, measured through real bitstreams.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub clips: Vec<ClipMetrics>,
    pub reports: Vec<CompressReport>,
}

impl Evaluation {
    fn mean(&self, f: impl Fn(&ClipMetrics) -> f64) -> f64 {
        self.clips.iter().map(f).sum::<f64>() / self.clips.len() as f64
    }

    pub fn bpp(&self) -> f64 {
        self.mean(|c| c.bpp.unwrap_or(f64::NAN))
    }

    pub fn msssim(&self) -> f64 {
        self.mean(|c| c.msssim)
    }

    /// Mean PSNR in dB; infinite if any clip is reproduced exactly.
    pub fn psnr_db(&self) -> f64 {
        self.mean(|c| c.psnr_db)
    }

    pub fn perceptual_proxy(&self) -> f64 {
        self.mean(|c| c.perceptual_proxy)
    }
}

pub fn evaluate(model: &Model, params: &ParamStore, model_hash: u64, clips: &[VideoClip]) -> Result<Evaluation> {
    if clips.is_empty() {
        return Err(Error::EmptyBatch("evaluation"));
    }
    let mut out = Evaluation {
        clips: Vec::new(),
        reports: Vec::new(),
    };
    for (i, clip) in clips.iter().enumerate() {
        let (bytes, report) = compress_clip(model, params, model_hash, clip)?;
        let decoded = decompress_stream(model, params, model_hash, &bytes)?;
        out.clips
            .push(clip_metrics(&format!("clip{i:03}"), clip, &decoded, Some(report.bpp), &model.features)?);
        out.reports.push(report);
    }
    Ok(out)
}

/// Evaluates a checkpoint on the held-out clips of its configuration.
pub fn evaluate_checkpoint(ck: &Checkpoint) -> Result<Evaluation> {
    let model = Model::new(&ck.config)?;
    let clips = generate_synthetic_corpus(&ck.config.data.held_out)?;
    evaluate(&model, &ck.params, ck.hash()?, &clips)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdPoint {
    pub beta: f64,
    pub bpp: f64,
    pub msssim: f64,
    pub psnr_db: f64,
}

/// Trains one model per β from the same seed and measures it on held-out clips.
pub fn rd_sweep(betas: &[f64], base: &TrainConfig) -> Result<Vec<RdPoint>> {
    betas
        .iter()
        .map(|&beta| {
            let mut config = base.clone();
            config.loss.beta = beta;
            config.train.stage = Stage::Pretrain;
            let ck = pretrain(&config)?.checkpoint;
            let e = evaluate_checkpoint(&ck)?;
            Ok(RdPoint {
                beta,
                bpp: e.bpp(),
                msssim: e.msssim(),
                psnr_db: e.psnr_db(),
            })
        })
        .collect()
}

pub fn write_rd_csv<W: Write>(out: W, points: &[RdPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["beta", "bpp", "msssim", "psnr_db"])?;
    for p in points {
        w.write_record([fmt_f64(p.beta), fmt_f64(p.bpp), fmt_f64(p.msssim), fmt_f64(p.psnr_db)])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Published full-scale results per (formulation, pixel norm): MS-SSIM and PSNR in dB.
/// Reported next to desk-scale cells for orientation only.
pub const REFERENCE_CELLS: [(GanKind, PixelNorm, f64, f64); 6] = [
    (GanKind::Minimax, PixelNorm::L1, 0.957, 26.655),
    (GanKind::Minimax, PixelNorm::L2, 0.958, 26.862),
    (GanKind::Relativistic, PixelNorm::L1, 0.957, 26.554),
    (GanKind::Relativistic, PixelNorm::L2, 0.957, 26.625),
    (GanKind::LeastSquares, PixelNorm::L1, 0.96, 26.905),
    (GanKind::LeastSquares, PixelNorm::L2, 0.961, 27.032),
];

pub fn reference_cell(kind: GanKind, norm: PixelNorm) -> Option<(f64, f64)> {
    REFERENCE_CELLS
        .iter()
        .find(|r| r.0 == kind && r.1 == norm)
        .map(|r| (r.2, r.3))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub gan_kind: GanKind,
    pub pixel_norm: PixelNorm,
    /// `(msssim, psnr_db, bpp)`, or the reason the cell failed.
    pub outcome: std::result::Result<(f64, f64, f64), String>,
}

#[derive(Clone, Debug)]
pub struct AblationGrid {
    pub kinds: Vec<GanKind>,
    pub norms: Vec<PixelNorm>,
    /// Keep the perceptual term in every cell.
    pub use_perceptual: bool,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            kinds: vec![GanKind::Minimax, GanKind::Relativistic, GanKind::LeastSquares],
            norms: vec![PixelNorm::L1, PixelNorm::L2],
            use_perceptual: true,
        }
    }
}

/// Finetunes every (formulation, norm) cell from `init` with the same seed
/// and budget. Cells that fail are recorded and the grid continues. Rows are
/// ranked by MS-SSIM, then PSNR; failures last.
pub fn run_ablation(base: &TrainConfig, init: &Checkpoint, grid: &AblationGrid) -> Result<Vec<AblationCell>> {
    let mut cells = Vec::new();
    for &kind in &grid.kinds {
        for &norm in &grid.norms {
            let mut config = base.clone();
            config.train.stage = Stage::Adversarial;
            config.loss.gan_kind = kind;
            config.loss.pixel_norm = norm;
            if !grid.use_perceptual {
                config.loss.gamma = 0.0;
            }
            let outcome = adversarial_train(&config, init)
                .and_then(|o| evaluate_checkpoint(&o.checkpoint))
                .map(|e| (e.msssim(), e.psnr_db(), e.bpp()))
                .map_err(|e| e.to_string());
            cells.push(AblationCell {
                gan_kind: kind,
                pixel_norm: norm,
                outcome,
            });
        }
    }
    cells.sort_by(|a, b| match (&a.outcome, &b.outcome) {
        (Ok(x), Ok(y)) => y.0.total_cmp(&x.0).then(y.1.total_cmp(&x.1)),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        (Err(_), Err(_)) => std::cmp::Ordering::Equal,
    });
    Ok(cells)
}

pub const ABLATION_COLUMNS: [&str; 9] = [
    "rank",
    "gan_kind",
    "pixel_norm",
    "msssim",
    "psnr_db",
    "bpp",
    "status",
    "reference_msssim",
    "reference_psnr_db",
];

pub fn write_ablation_csv<W: Write>(out: W, cells: &[AblationCell]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ABLATION_COLUMNS)?;
    for (i, c) in cells.iter().enumerate() {
        let (m, p, b, status) = match &c.outcome {
            Ok((m, p, b)) => (fmt_f64(*m), fmt_f64(*p), fmt_f64(*b), "ok".to_owned()),
            Err(e) => (String::new(), String::new(), String::new(), format!("failed: {e}")),
        };
        let (rm, rp) = reference_cell(c.gan_kind, c.pixel_norm)
            .map(|(a, b)| (fmt_f64(a), fmt_f64(b)))
            .unwrap_or_default();
        w.write_record([
            (i + 1).to_string(),
            c.gan_kind.name().to_owned(),
            c.pixel_norm.name().to_owned(),
            m,
            p,
            b,
            status,
            rm,
            rp,
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
