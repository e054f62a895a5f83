use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use navc_core::adversarial::GanKind;
use navc_core::config::{FinetuneScope, Stage, TrainConfig};
use navc_core::data::{load_raw_clip, save_raw_clip};
use navc_core::distortion::{FeatureExtractor, PixelNorm};
use navc_core::entropy::bits_per_pixel;
use navc_core::pipeline::{
    clip_metrics, compress_clip, decompress_stream, evaluate_checkpoint, rd_sweep, run_ablation, write_ablation_csv,
    write_eval_csv, write_rd_csv, AblationGrid,
};
use navc_core::training::{log::write_log, train, Checkpoint, Model};
use navc_core::{Error, Result};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_DIVERGENCE: u8 = 4;

/// Adversarially finetuned learned video codec.
#[derive(Parser)]
#[command(name = "navc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write its checkpoint.
    Train(TrainArgs),
    /// Compress a .rawvid clip into a bitstream file.
    Compress(CompressArgs),
    /// Decode a bitstream file back into a .rawvid clip.
    Decompress(CompressArgs),
    /// Report PSNR, MS-SSIM and the perceptual proxy as CSV.
    Eval(EvalArgs),
    /// Finetune every (GAN formulation, pixel norm) cell and rank them.
    Ablate(AblateArgs),
    /// Pretrain one model per rate weight and report held-out rate and quality.
    RdSweep(RdSweepArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => TrainConfig::default(),
        };
        if let Some(seed) = self.seed {
            c.train.seed = seed;
        }
        if let Some(steps) = self.steps {
            c.train.steps = steps;
            c.train.epochs = None;
        }
        Ok(c)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_parser = parse_stage)]
    stage: Option<Stage>,
    #[arg(long)]
    beta: Option<f64>,
    /// Finetune only the decoder in the adversarial stage.
    #[arg(long)]
    decoder_only: bool,
    /// Checkpoint to continue from; required for the adversarial stage.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, short)]
    output: PathBuf,
    /// Per-step loss log.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Evaluate this checkpoint on its held-out clips through real bitstreams.
    #[arg(long, conflicts_with_all = ["original", "decoded"])]
    checkpoint: Option<PathBuf>,
    /// Reference clips, paired in order with --decoded.
    #[arg(long, num_args = 1..)]
    original: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    decoded: Vec<PathBuf>,
    /// Bitstreams the decoded clips came from; fills the bpp column.
    #[arg(long, num_args = 1..)]
    stream: Vec<PathBuf>,
    /// Configuration whose feature extractor measures the perceptual proxy.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Shared starting point; pretrained from the configuration when absent.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    kinds: Option<Vec<GanKind>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_norm)]
    norms: Option<Vec<PixelNorm>>,
    /// Drop the perceptual term so cells differ only in the adversarial and pixel losses.
    #[arg(long)]
    no_perceptual: bool,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RdSweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    betas: Vec<f64>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn parse_stage(s: &str) -> std::result::Result<Stage, String> {
    match s {
        "pretrain" => Ok(Stage::Pretrain),
        "adversarial" => Ok(Stage::Adversarial),
        _ => Err(format!("unknown stage {s:?}; expected pretrain or adversarial")),
    }
}

fn parse_kind(s: &str) -> std::result::Result<GanKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_norm(s: &str) -> std::result::Result<PixelNorm, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Runs `f` on the file at `path`, or on stdout.
fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            f(&mut w)?;
            w.flush().map_err(|e| Error::io(p, e))
        }
        None => f(&mut io::stdout().lock()),
    }
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut config = args.config.load()?;
    if let Some(stage) = args.stage {
        config.train.stage = stage;
    }
    if let Some(beta) = args.beta {
        config.loss.beta = beta;
    }
    if args.decoder_only {
        config.train.finetune = FinetuneScope::DecoderOnly;
    }
    config.validate()?;
    let init = args.init.as_deref().map(Checkpoint::load).transpose()?;
    let outcome = match (config.train.stage, &init) {
        (Stage::Pretrain, _) => train(&config, init.as_ref())?,
        (Stage::Adversarial, Some(ck)) => navc_core::training::adversarial_train(&config, ck)?,
        (Stage::Adversarial, None) => {
            return Err(Error::Config("the adversarial stage needs --init <checkpoint>".into()));
        }
    };
    let hash = outcome.checkpoint.save(&args.output)?;
    if let Some(log) = &args.log {
        let mut w = create(log)?;
        write_log(&mut w, &outcome.log)?;
        w.flush().map_err(|e| Error::io(log, e))?;
    }
    println!(
        "wrote {} after {} steps (model hash {hash:016x})",
        args.output.display(),
        outcome.checkpoint.step
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<(Checkpoint, Model, u64)> {
    let ck = Checkpoint::load(path)?;
    let model = Model::new(&ck.config)?;
    let hash = ck.hash()?;
    Ok((ck, model, hash))
}

fn cmd_compress(args: &CompressArgs) -> Result<()> {
    let (ck, model, hash) = load_model(&args.checkpoint)?;
    let clip = load_raw_clip(&args.input)?;
    let (bytes, report) = compress_clip(&model, &ck.params, hash, &clip)?;
    std::fs::write(&args.output, bytes).map_err(|e| Error::io(&args.output, e))?;
    println!(
        "bits={} payload_bits={} estimated_bits={:.1} bpp={}",
        report.bits, report.payload_bits, report.estimated_bits, report.bpp
    );
    Ok(())
}

fn cmd_decompress(args: &CompressArgs) -> Result<()> {
    let (ck, model, hash) = load_model(&args.checkpoint)?;
    let bytes = std::fs::read(&args.input).map_err(|e| Error::io(&args.input, e))?;
    let clip = decompress_stream(&model, &ck.params, hash, &bytes)?;
    save_raw_clip(&clip, &args.output)?;
    let [t, h, w, _] = clip.dims();
    println!("decoded {t} frames of {h}x{w}");
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    if let Some(path) = &args.checkpoint {
        let e = evaluate_checkpoint(&Checkpoint::load(path)?)?;
        return with_output(args.output.as_deref(), |w| write_eval_csv(w, &e.clips));
    }
    if args.original.is_empty() || args.original.len() != args.decoded.len() {
        return Err(Error::Config(format!(
            "{} original and {} decoded clips; pass one --decoded per --original",
            args.original.len(),
            args.decoded.len()
        )));
    }
    if !args.stream.is_empty() && args.stream.len() != args.original.len() {
        return Err(Error::Config(format!(
            "{} streams for {} clip pairs",
            args.stream.len(),
            args.original.len()
        )));
    }
    let config = match &args.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    let features = FeatureExtractor::new(config.loss.features.clone())?;
    let mut rows = Vec::new();
    for (i, (a, b)) in args.original.iter().zip(&args.decoded).enumerate() {
        let original = load_raw_clip(a)?;
        let decoded = load_raw_clip(b)?;
        let bpp = match args.stream.get(i) {
            Some(s) => {
                let len = std::fs::metadata(s).map_err(|e| Error::io(s, e))?.len();
                let [t, h, w, _] = original.dims();
                Some(bits_per_pixel(len as f64 * 8.0, t, h, w)?)
            }
            None => None,
        };
        let name = a.file_stem().map_or_else(|| format!("clip{i:03}"), |s| s.to_string_lossy().into_owned());
        rows.push(clip_metrics(&name, &original, &decoded, bpp, &features)?);
    }
    with_output(args.output.as_deref(), |w| write_eval_csv(w, &rows))
}

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let config = args.config.load()?;
    let init = match &args.init {
        Some(p) => Checkpoint::load(p)?,
        None => {
            let mut pre = config.clone();
            pre.train.stage = Stage::Pretrain;
            train(&pre, None)?.checkpoint
        }
    };
    let mut grid = AblationGrid::default();
    if let Some(k) = &args.kinds {
        grid.kinds = k.clone();
    }
    if let Some(n) = &args.norms {
        grid.norms = n.clone();
    }
    grid.use_perceptual = !args.no_perceptual;
    let cells = run_ablation(&config, &init, &grid)?;
    with_output(args.output.as_deref(), |w| write_ablation_csv(w, &cells))
}

fn cmd_rd_sweep(args: &RdSweepArgs) -> Result<()> {
    let config = args.config.load()?;
    let points = rd_sweep(&args.betas, &config)?;
    with_output(args.output.as_deref(), |w| write_rd_csv(w, &points))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Compress(a) => cmd_compress(a),
        Command::Decompress(a) => cmd_decompress(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::RdSweep(a) => cmd_rd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
