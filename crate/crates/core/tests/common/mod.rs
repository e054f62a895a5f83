//! Independent reference implementations and helpers shared by integration tests.
#![allow(dead_code)]

pub mod gradients;

use navc_core::codec::CodecConfig;
use navc_core::config::TrainConfig;
use navc_core::data::{SyntheticCorpusSpec, ValueRange, VideoClip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Unit-range clip of i.i.d. uniform samples, `[T, H, W, C]`.
pub fn random_clip(dims: [usize; 4], seed: u64) -> VideoClip {
    let mut r = rng(seed);
    let data = (0..dims.iter().product()).map(|_| r.gen::<f64>()).collect();
    VideoClip::new(dims, ValueRange::Unit, 25.0, data).unwrap()
}

/// `base` plus uniform noise of the given amplitude, clamped to [0, 1].
pub fn perturbed(base: &VideoClip, amplitude: f64, seed: u64) -> VideoClip {
    let mut r = rng(seed);
    let data = base
        .data()
        .iter()
        .map(|&v| (v + amplitude * (2.0 * r.gen::<f64>() - 1.0)).clamp(0.0, 1.0))
        .collect();
    VideoClip::new(base.dims(), ValueRange::Unit, base.fps(), data).unwrap()
}

/// Smooth random image content: a few random sinusoids, so that structure
/// exists at every scale.
pub fn smooth_clip(dims: [usize; 4], seed: u64) -> VideoClip {
    let mut r = rng(seed);
    let [t, h, w, c] = dims;
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| (r.gen_range(0.02..0.4), r.gen_range(0.02..0.4), r.gen_range(0.0..6.3), r.gen_range(0.05..0.2)))
        .collect();
    let mut data = Vec::with_capacity(t * h * w * c);
    for f in 0..t {
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut v = 0.5;
                    for (i, &(fy, fx, ph, a)) in waves.iter().enumerate() {
                        let shift = (f + ch + i) as f64 * 0.3;
                        v += a * (fy * y as f64 + fx * x as f64 + ph + shift).sin();
                    }
                    data.push(v.clamp(0.0, 1.0));
                }
            }
        }
    }
    VideoClip::new(dims, ValueRange::Unit, 25.0, data).unwrap()
}

/// Multi-scale SSIM written out directly: a full 2-D Gaussian window per
/// output pixel, centred statistics, block averaging between scales.
pub fn ms_ssim_reference(x: &VideoClip, y: &VideoClip) -> f64 {
    const EXPONENTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    let [t, h, w, c] = x.dims();
    let side = h.min(w);
    let mut scales = 0;
    while scales < 5 && side / (1 << scales) >= 11 {
        scales += 1;
    }
    let norm: f64 = EXPONENTS[..scales].iter().sum();

    let mut window = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in window.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    for row in window.iter_mut() {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    let (c1, c2) = (0.0001, 0.0009);

    let mut acc = 0.0;
    for f in 0..t {
        for ch in 0..c {
            let mut a: Vec<Vec<f64>> = (0..h).map(|yy| (0..w).map(|xx| x.get(f, yy, xx, ch)).collect()).collect();
            let mut b: Vec<Vec<f64>> = (0..h).map(|yy| (0..w).map(|xx| y.get(f, yy, xx, ch)).collect()).collect();
            let mut product = 1.0;
            for s in 0..scales {
                let (hh, ww) = (a.len(), a[0].len());
                let mut sum_ssim = 0.0;
                let mut sum_cs = 0.0;
                let mut count = 0.0;
                for oy in 0..=hh - 11 {
                    for ox in 0..=ww - 11 {
                        let mut ma = 0.0;
                        let mut mb = 0.0;
                        for i in 0..11 {
                            for j in 0..11 {
                                ma += window[i][j] * a[oy + i][ox + j];
                                mb += window[i][j] * b[oy + i][ox + j];
                            }
                        }
                        let mut va = 0.0;
                        let mut vb = 0.0;
                        let mut cov = 0.0;
                        for i in 0..11 {
                            for j in 0..11 {
                                let da = a[oy + i][ox + j] - ma;
                                let db = b[oy + i][ox + j] - mb;
                                va += window[i][j] * da * da;
                                vb += window[i][j] * db * db;
                                cov += window[i][j] * da * db;
                            }
                        }
                        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
                        let cs = (2.0 * cov + c2) / (va + vb + c2);
                        sum_ssim += l * cs;
                        sum_cs += cs;
                        count += 1.0;
                    }
                }
                let value = if s == scales - 1 { sum_ssim / count } else { sum_cs / count };
                product *= value.max(0.0).powf(EXPONENTS[s] / norm);
                let half = |img: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
                    (0..hh / 2)
                        .map(|yy| {
                            (0..ww / 2)
                                .map(|xx| {
                                    (img[2 * yy][2 * xx]
                                        + img[2 * yy][2 * xx + 1]
                                        + img[2 * yy + 1][2 * xx]
                                        + img[2 * yy + 1][2 * xx + 1])
                                        / 4.0
                                })
                                .collect()
                        })
                        .collect()
                };
                if s + 1 < scales {
                    a = half(&a);
                    b = half(&b);
                }
            }
            acc += product;
        }
    }
    acc / (t * c) as f64
}

/// Relative error between an analytic directional derivative `⟨grad, v⟩` and
/// the central difference of `f` along random unit directions `v`.
pub fn directional_check(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], grad: &[f64], directions: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let mut v: Vec<f64> = (0..x0.len()).map(|_| r.gen::<f64>() - 0.5).collect();
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= n);
        let plus: Vec<f64> = x0.iter().zip(&v).map(|(a, d)| a + h * d).collect();
        let minus: Vec<f64> = x0.iter().zip(&v).map(|(a, d)| a - h * d).collect();
        let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
        let analytic: f64 = grad.iter().zip(&v).map(|(g, d)| g * d).sum();
        let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-10);
        worst = worst.max(err);
    }
    worst
}

/// Coordinate-wise check on `count` random entries; returns the worst relative error.
pub fn coordinate_check(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], grad: &[f64], count: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let i = r.gen_range(0..x0.len());
        let mut p = x0.to_vec();
        p[i] += h;
        let mut m = x0.to_vec();
        m[i] -= h;
        let numeric = (f(&p) - f(&m)) / (2.0 * h);
        let scale = numeric.abs().max(grad[i].abs());
        if scale < 1e-9 {
            continue;
        }
        worst = worst.max((numeric - grad[i]).abs() / scale);
    }
    worst
}

/// Small configuration used by the training-based checks: 32×32 crops of
/// 64×64 clips, 4× spatial downsampling, 4 latent channels over 8 levels.
pub fn desk_config() -> TrainConfig {
    let mut c = TrainConfig::default();
    c.data.corpus = SyntheticCorpusSpec {
        num_clips: 8,
        frames_per_clip: 8,
        height: 64,
        width: 64,
        ..SyntheticCorpusSpec::default()
    };
    c.data.held_out = SyntheticCorpusSpec {
        num_clips: 4,
        frames_per_clip: 8,
        height: 64,
        width: 64,
        seed: 1_000_003,
        ..SyntheticCorpusSpec::default()
    };
    c.data.crop_frames = 4;
    c.data.crop_height = 32;
    c.data.crop_width = 32;
    c.codec = CodecConfig {
        spatial_downsample: 4,
        latent_channels: 4,
        num_levels: 8,
        base_width: 8,
        depth: 1,
        ..CodecConfig::default()
    };
    c.entropy.hidden_per_channel = 4;
    c.loss.discriminator.width = 8;
    c.loss.discriminator.blocks = 1;
    c.loss.features.base_width = 4;
    c.train.batch_size = 2;
    c.train.optimizer.lr = 1e-3;
    c
}
