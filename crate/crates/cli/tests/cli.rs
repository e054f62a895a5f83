use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use navc_core::data::{generate_synthetic_corpus, load_raw_clip, save_raw_clip, SyntheticCorpusSpec};
use navc_core::pipeline::reconstruct;
use navc_core::training::{Checkpoint, Model};

const TINY: &str = r#"{
  "data": {
    "corpus": {"num_clips": 3, "frames_per_clip": 4, "height": 16, "width": 16},
    "held_out": {"num_clips": 2, "frames_per_clip": 2, "height": 16, "width": 16, "seed": 77},
    "crop_frames": 2, "crop_height": 16, "crop_width": 16
  },
  "codec": {"spatial_downsample": 4, "latent_channels": 2, "num_levels": 4, "base_width": 4, "depth": 0},
  "entropy": {"hidden_per_channel": 2},
  "loss": {"features": {"base_width": 2}, "discriminator": {"width": 2, "blocks": 1}},
  "train": {"batch_size": 2, "steps": 2, "optimizer": {"lr": 0.001}}
}"#;

fn navc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_navc")).args(args).output().expect("navc runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        std::fs::write(ws.path("tiny.json"), TINY).unwrap();
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn train(&self, out: &str, seed: &str) {
        let o = navc(&["train", "--config", &self.s("tiny.json"), "--seed", seed, "--output", &self.s(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }

    fn clip(&self, name: &str, height: usize) -> PathBuf {
        let spec = SyntheticCorpusSpec {
            num_clips: 1,
            frames_per_clip: 2,
            height,
            width: 16,
            seed: 5,
            ..SyntheticCorpusSpec::default()
        };
        let clip = generate_synthetic_corpus(&spec).unwrap().remove(0);
        let p = self.path(name);
        save_raw_clip(&clip, &p).unwrap();
        p
    }
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let o = navc(&["train"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--output"));
    assert_eq!(code(&navc(&["rd-sweep"])), 2);
    assert_eq!(code(&navc(&["no-such-command"])), 2);
}

#[test]
fn train_stage_beta_and_seed_flags_produce_a_checkpoint() {
    let ws = Workspace::new();
    let o = navc(&[
        "train",
        "--config",
        &ws.s("tiny.json"),
        "--stage",
        "pretrain",
        "--beta",
        "0.3",
        "--seed",
        "1",
        "--output",
        &ws.s("ck.navcck"),
        "--log",
        &ws.s("log.csv"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ck = Checkpoint::load(&ws.path("ck.navcck")).unwrap();
    assert_eq!((ck.config.loss.beta, ck.config.train.seed, ck.step), (0.3, 1, 2));
    let log = String::from_utf8(read(&ws.path("log.csv"))).unwrap();
    assert!(log.starts_with("step,pixel_l2,perceptual,adversarial,disc_obj,rate_bpp,total\n"));
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn adversarial_stage_needs_an_initial_checkpoint() {
    let ws = Workspace::new();
    let o = navc(&["train", "--config", &ws.s("tiny.json"), "--stage", "adversarial", "--output", &ws.s("x")]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--init"));
}

#[test]
fn compress_decompress_through_files_matches_in_memory_reconstruction() {
    let ws = Workspace::new();
    ws.train("ck.navcck", "3");
    let input = ws.clip("in.rawvid", 16);
    let o = navc(&["compress", "--checkpoint", &ws.s("ck.navcck"), "-i", &ws.s("in.rawvid"), "-o", &ws.s("x.navc")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let bits = read(&ws.path("x.navc")).len() * 8;
    assert!(stdout(&o).contains(&format!("bits={bits} ")));
    let bpp = bits as f64 / (2.0 * 16.0 * 16.0);
    assert!(stdout(&o).contains(&format!("bpp={bpp}")), "{}", stdout(&o));

    let o = navc(&["decompress", "--checkpoint", &ws.s("ck.navcck"), "-i", &ws.s("x.navc"), "-o", &ws.s("out.rawvid")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let decoded = load_raw_clip(&ws.path("out.rawvid")).unwrap();

    let ck = Checkpoint::load(&ws.path("ck.navcck")).unwrap();
    let model = Model::new(&ck.config).unwrap();
    let expected = reconstruct(&model, &ck.params, &load_raw_clip(&input).unwrap()).unwrap();
    // The file stores bytes, so compare after the same 8-bit rounding.
    let tmp = ws.path("expected.rawvid");
    save_raw_clip(&expected, &tmp).unwrap();
    assert_eq!(read(&tmp), read(&ws.path("out.rawvid")));
    assert_eq!(decoded.dims(), expected.dims());
}

#[test]
fn decompress_refuses_a_stream_from_another_checkpoint() {
    let ws = Workspace::new();
    ws.train("a.navcck", "1");
    ws.train("b.navcck", "2");
    ws.clip("in.rawvid", 16);
    let o = navc(&["compress", "--checkpoint", &ws.s("a.navcck"), "-i", &ws.s("in.rawvid"), "-o", &ws.s("x.navc")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = navc(&["decompress", "--checkpoint", &ws.s("b.navcck"), "-i", &ws.s("x.navc"), "-o", &ws.s("y.rawvid")]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("hash mismatch"), "{}", stderr(&o));
    assert!(!ws.path("y.rawvid").exists());
}

#[test]
fn indivisible_frame_size_names_the_padding() {
    let ws = Workspace::new();
    ws.train("ck.navcck", "1");
    ws.clip("odd.rawvid", 14);
    let o = navc(&["compress", "--checkpoint", &ws.s("ck.navcck"), "-i", &ws.s("odd.rawvid"), "-o", &ws.s("x.navc")]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("pad by 2 rows and 0 columns"), "{}", stderr(&o));
}

#[test]
fn eval_of_identical_clips_reports_the_sentinels() {
    let ws = Workspace::new();
    let a = ws.s("a.rawvid");
    ws.clip("a.rawvid", 16);
    let run = || {
        let o = navc(&["eval", "--config", &ws.s("tiny.json"), "--original", &a, "--decoded", &a]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        stdout(&o)
    };
    let out = run();
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("name,psnr_db,msssim,perceptual_proxy,bpp"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "a");
    assert_eq!(row[1], "inf");
    assert!((row[2].parse::<f64>().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(row[3], "0");
    assert_eq!(row[4], "");
    assert_eq!(run(), out);
}

#[test]
fn eval_rejects_mismatched_clip_counts() {
    let ws = Workspace::new();
    ws.clip("a.rawvid", 16);
    let o = navc(&["eval", "--original", &ws.s("a.rawvid"), &ws.s("a.rawvid"), "--decoded", &ws.s("a.rawvid")]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("2 original and 1 decoded"), "{}", stderr(&o));
}

#[test]
fn eval_of_a_checkpoint_covers_its_held_out_clips() {
    let ws = Workspace::new();
    ws.train("ck.navcck", "1");
    let o = navc(&["eval", "--checkpoint", &ws.s("ck.navcck"), "-o", &ws.s("eval.csv")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = String::from_utf8(read(&ws.path("eval.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().skip(1).all(|l| l.starts_with("clip") && !l.ends_with(',')));
}

#[test]
fn rd_sweep_emits_one_row_per_beta() {
    let ws = Workspace::new();
    let o = navc(&[
        "rd-sweep",
        "--config",
        &ws.s("tiny.json"),
        "--steps",
        "1",
        "--betas",
        "0.1,0.3,0.5,0.7",
        "-o",
        &ws.s("rd.csv"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = String::from_utf8(read(&ws.path("rd.csv"))).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "beta,bpp,msssim,psnr_db");
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("0.7,"));
}

#[test]
fn ablation_emits_six_ranked_rows_deterministically() {
    let ws = Workspace::new();
    ws.train("init.navcck", "4");
    let run = |out: &str| {
        let o = navc(&[
            "ablate",
            "--config",
            &ws.s("tiny.json"),
            "--steps",
            "1",
            "--init",
            &ws.s("init.navcck"),
            "-o",
            &ws.s(out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        String::from_utf8(read(&ws.path(out))).unwrap()
    };
    let table = run("a.csv");
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 7);
    assert!(lines[0].starts_with("rank,gan_kind,pixel_norm,msssim,psnr_db,bpp,status"));
    for kind in ["minimax", "relativistic", "least_squares"] {
        assert_eq!(lines.iter().filter(|l| l.contains(&format!(",{kind},"))).count(), 2);
    }
    assert!(!table.contains("wasserstein"));
    assert_eq!(run("b.csv"), table);
}

#[test]
fn ablation_grid_can_be_narrowed() {
    let ws = Workspace::new();
    ws.train("init.navcck", "4");
    let o = navc(&[
        "ablate",
        "--config",
        &ws.s("tiny.json"),
        "--steps",
        "1",
        "--init",
        &ws.s("init.navcck"),
        "--kinds",
        "lsgan",
        "--norms",
        "l2",
        "--no-perceptual",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 2);
    assert!(out.lines().nth(1).unwrap().starts_with("1,least_squares,l2,"));
}

#[test]
fn divergence_exits_with_its_own_code() {
    let ws = Workspace::new();
    let mut doc: serde_json::Value = serde_json::from_str(TINY).unwrap();
    doc["train"]["optimizer"]["lr"] = serde_json::json!(1e300);
    doc["train"]["steps"] = serde_json::json!(5);
    std::fs::write(ws.path("bad.json"), doc.to_string()).unwrap();
    let o = navc(&["train", "--config", &ws.s("bad.json"), "--output", &ws.s("ck")]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(!ws.path("ck").exists());
}

#[test]
fn unreadable_input_is_a_data_error() {
    let ws = Workspace::new();
    ws.train("ck.navcck", "1");
    std::fs::write(ws.path("junk.navc"), b"not a stream").unwrap();
    let o = navc(&["decompress", "--checkpoint", &ws.s("ck.navcck"), "-i", &ws.s("junk.navc"), "-o", &ws.s("y")]);
    assert_eq!(code(&o), 3);
    let o = navc(&["compress", "--checkpoint", &ws.s("missing"), "-i", &ws.s("junk.navc"), "-o", &ws.s("y")]);
    assert_eq!(code(&o), 3);
}
