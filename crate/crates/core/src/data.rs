//! Video clips, the synthetic training corpus, cropping and raw clip files.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::IteratorRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::seeded_rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueRange {
    /// Intensities in `[0, 1]`.
    Unit,
    /// Intensities in `[0, 255]`.
    Byte,
}

impl ValueRange {
    pub fn max(self) -> f64 {
        match self {
            ValueRange::Unit => 1.0,
            ValueRange::Byte => 255.0,
        }
    }
}

/// `T × H × W × C` pixel data, interleaved channels, frame-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    range: ValueRange,
    fps: f64,
    data: Vec<f64>,
}

impl VideoClip {
    pub fn new(
        [frames, height, width, channels]: [usize; 4],
        range: ValueRange,
        fps: f64,
        data: Vec<f64>,
    ) -> Result<Self> {
        let expected = frames
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| Error::Shape("clip dimensions overflow".into()))?;
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "clip {frames}x{height}x{width}x{channels} needs {expected} values, got {}",
                data.len()
            )));
        }
        let max = range.max();
        if let Some(bad) = data.iter().find(|v| !(0.0..=max).contains(*v)) {
            return Err(Error::Shape(format!("value {bad} outside the {range:?} range")));
        }
        Ok(Self {
            frames,
            height,
            width,
            channels,
            range,
            fps,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `[T, H, W, C]`.
    pub fn dims(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, self.channels]
    }

    pub fn pixel_count(&self) -> usize {
        self.frames * self.height * self.width
    }

    pub fn index(&self, t: usize, y: usize, x: usize, c: usize) -> usize {
        ((t * self.height + y) * self.width + x) * self.channels + c
    }

    pub fn get(&self, t: usize, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(t, y, x, c)]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.height * self.width * self.channels;
        &self.data[t * n..][..n]
    }

    pub fn to_range(&self, range: ValueRange) -> VideoClip {
        let factor = range.max() / self.range.max();
        VideoClip {
            range,
            data: self.data.iter().map(|v| (v * factor).clamp(0.0, range.max())).collect(),
            ..self.clone()
        }
    }

    pub fn to_unit(&self) -> VideoClip {
        self.to_range(ValueRange::Unit)
    }

    /// Rounds to whole byte values.
    pub fn to_byte(&self) -> VideoClip {
        let mut out = self.to_range(ValueRange::Byte);
        for v in &mut out.data {
            *v = v.round();
        }
        out
    }

    /// Unit-range network input `[1, C, T, H, W]`.
    pub fn to_tensor(&self) -> Tensor {
        batch_to_tensor(std::slice::from_ref(self))
    }

    /// Reads batch item `n` of a `[N, C, T, H, W]` tensor as a unit-range clip.
    /// Values are clamped into range.
    pub fn from_tensor(t: &Tensor, n: usize, fps: f64) -> VideoClip {
        let [_, c, frames, h, w] = t.dims5();
        let plane = frames * h * w;
        let src = &t.data()[n * c * plane..][..c * plane];
        let mut data = vec![0.0; c * plane];
        for ch in 0..c {
            for (i, &v) in src[ch * plane..][..plane].iter().enumerate() {
                data[i * c + ch] = v.clamp(0.0, 1.0);
            }
        }
        VideoClip {
            frames,
            height: h,
            width: w,
            channels: c,
            range: ValueRange::Unit,
            fps,
            data,
        }
    }
}

/// Stacks same-sized clips into a unit-range `[N, C, T, H, W]` tensor.
pub fn batch_to_tensor(clips: &[VideoClip]) -> Tensor {
    let [t, h, w, c] = clips[0].dims();
    let plane = t * h * w;
    let mut data = vec![0.0; clips.len() * c * plane];
    for (n, clip) in clips.iter().enumerate() {
        assert_eq!(clip.dims(), [t, h, w, c], "batch clips must share dimensions");
        let scale = 1.0 / clip.range.max();
        let dst = &mut data[n * c * plane..][..c * plane];
        for (i, px) in clip.data.chunks_exact(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                dst[ch * plane + i] = v * scale;
            }
        }
    }
    Tensor::new(vec![clips.len(), c, t, h, w], data).expect("batch tensor")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionKind {
    Translate,
    Rotate,
    Scale,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextureKind {
    Flat,
    Gradient,
    NoiseTexture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticCorpusSpec {
    pub num_clips: usize,
    pub frames_per_clip: usize,
    pub height: usize,
    pub width: usize,
    pub motion_kinds: BTreeSet<MotionKind>,
    pub texture_kinds: BTreeSet<TextureKind>,
    pub seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            num_clips: 8,
            frames_per_clip: 16,
            height: 64,
            width: 64,
            motion_kinds: [MotionKind::Translate, MotionKind::Rotate, MotionKind::Scale].into(),
            texture_kinds: [TextureKind::Flat, TextureKind::Gradient, TextureKind::NoiseTexture].into(),
            seed: 0,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames_per_clip == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::InvalidSpec(format!(
                "corpus dimensions must be positive, got {} frames of {}x{}",
                self.frames_per_clip, self.height, self.width
            )));
        }
        if self.motion_kinds.is_empty() || self.texture_kinds.is_empty() {
            return Err(Error::InvalidSpec("motion and texture kinds must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Texture {
    kind: TextureKind,
    base: [f64; 3],
    alt: [f64; 3],
    /// Gradient direction, or noise cell size in `dir[0]`.
    dir: [f64; 2],
    salt: u64,
}

impl Texture {
    fn random(rng: &mut impl Rng, kinds: &BTreeSet<TextureKind>, span: f64) -> Self {
        let kind = *kinds.iter().choose(rng).expect("non-empty kinds");
        let color = |rng: &mut dyn rand::RngCore| -> [f64; 3] {
            [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)]
        };
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let dir = match kind {
            TextureKind::NoiseTexture => [rng.gen_range(2..5) as f64, 0.0],
            _ => [angle.cos() / span, angle.sin() / span],
        };
        Self {
            kind,
            base: color(rng),
            alt: color(rng),
            dir,
            salt: rng.gen(),
        }
    }

    fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        match self.kind {
            TextureKind::Flat => self.base,
            TextureKind::Gradient => {
                let s = (0.5 + u * self.dir[0] + v * self.dir[1]).clamp(0.0, 1.0);
                lerp(self.base, self.alt, s)
            }
            TextureKind::NoiseTexture => {
                let cell = self.dir[0];
                let cu = (u / cell).floor() as i64;
                let cv = (v / cell).floor() as i64;
                let h = lattice_hash(cu, cv, self.salt);
                lerp(self.base, self.alt, (h >> 11) as f64 / (1u64 << 53) as f64)
            }
        }
    }
}

fn lerp(a: [f64; 3], b: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * s, a[1] + (b[1] - a[1]) * s, a[2] + (b[2] - a[2]) * s]
}

fn lattice_hash(x: i64, y: i64, salt: u64) -> u64 {
    let mut h = salt ^ (x as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (y as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^ (h >> 33)
}

#[derive(Clone, Copy, Debug)]
enum ShapeKind {
    Rect,
    Ellipse,
}

#[derive(Clone, Copy, Debug)]
struct SceneObject {
    shape: ShapeKind,
    center: [f64; 2],
    half: [f64; 2],
    angle0: f64,
    texture: Texture,
}

struct Scene {
    motion: MotionKind,
    background: Texture,
    objects: Vec<SceneObject>,
    /// Integer pan per frame (translate).
    pan: [i64; 2],
    /// Radians per frame (rotate) or relative amplitude (scale).
    rate: f64,
}

impl Scene {
    fn random(spec: &SyntheticCorpusSpec, rng: &mut impl Rng) -> Self {
        let (w, h) = (spec.width as f64, spec.height as f64);
        let span = w.max(h);
        let motion = *spec.motion_kinds.iter().choose(rng).expect("non-empty kinds");
        let background = Texture::random(rng, &spec.texture_kinds, span);
        let count = rng.gen_range(1..=3);
        let objects = (0..count)
            .map(|_| SceneObject {
                shape: if rng.gen_bool(0.5) { ShapeKind::Rect } else { ShapeKind::Ellipse },
                center: [rng.gen_range(0.2..0.8) * w, rng.gen_range(0.2..0.8) * h],
                half: [rng.gen_range(0.08..0.22) * w, rng.gen_range(0.08..0.22) * h],
                angle0: rng.gen_range(0.0..std::f64::consts::PI),
                texture: Texture::random(rng, &spec.texture_kinds, span),
            })
            .collect();
        let max_step = ((spec.width / 8).max(1)) as i64;
        let mut pan = [0, 0];
        while pan == [0, 0] {
            pan = [rng.gen_range(-max_step..=max_step), rng.gen_range(-max_step..=max_step)];
        }
        let rate = match motion {
            MotionKind::Rotate => rng.gen_range(0.05..0.25) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
            MotionKind::Scale => rng.gen_range(0.03..0.08),
            MotionKind::Translate => 0.0,
        };
        Self {
            motion,
            background,
            objects,
            pan,
            rate,
        }
    }

    /// Colour at scene position `(u, v)` at frame `t`.
    fn color(&self, t: usize, u: f64, v: f64) -> [f64; 3] {
        let mut out = self.background.sample(u, v);
        for obj in &self.objects {
            let (angle, scale) = match self.motion {
                MotionKind::Rotate => (obj.angle0 + self.rate * t as f64, 1.0),
                MotionKind::Scale => (obj.angle0, 1.0 + self.rate * t as f64),
                MotionKind::Translate => (obj.angle0, 1.0),
            };
            let (du, dv) = (u - obj.center[0], v - obj.center[1]);
            let (s, c) = angle.sin_cos();
            let lu = (c * du + s * dv) / scale;
            let lv = (-s * du + c * dv) / scale;
            let (nu, nv) = (lu / obj.half[0], lv / obj.half[1]);
            let inside = match obj.shape {
                ShapeKind::Rect => nu.abs() <= 1.0 && nv.abs() <= 1.0,
                ShapeKind::Ellipse => nu * nu + nv * nv <= 1.0,
            };
            if inside {
                out = obj.texture.sample(lu, lv);
            }
        }
        out
    }

    fn render(&self, spec: &SyntheticCorpusSpec) -> VideoClip {
        let (h, w) = (spec.height, spec.width);
        let mut data = Vec::with_capacity(spec.frames_per_clip * h * w * 3);
        for t in 0..spec.frames_per_clip {
            let (ox, oy) = match self.motion {
                MotionKind::Translate => (self.pan[0] * t as i64, self.pan[1] * t as i64),
                _ => (0, 0),
            };
            for y in 0..h {
                for x in 0..w {
                    let u = (x as i64 + ox) as f64;
                    let v = (y as i64 + oy) as f64;
                    let rgb = self.color(t, u, v);
                    data.extend(rgb.iter().map(|c| (c * 255.0).round().clamp(0.0, 255.0)));
                }
            }
        }
        VideoClip::new([spec.frames_per_clip, h, w, 3], ValueRange::Byte, 25.0, data).expect("rendered clip")
    }
}

/// Clips of textured shapes over textured backgrounds.
///
/// Each clip uses one motion kind drawn from the spec. `Translate` pans the
/// whole scene by a constant integer vector per frame; `Rotate` and `Scale`
/// animate the objects in place over a static background.
pub fn generate_synthetic_corpus(spec: &SyntheticCorpusSpec) -> Result<Vec<VideoClip>> {
    spec.validate()?;
    Ok((0..spec.num_clips)
        .map(|i| {
            let mut rng = seeded_rng(spec.seed, &format!("clip/{i}"));
            Scene::random(spec, &mut rng).render(spec)
        })
        .collect())
}

/// Same spatial window, drawn from `seed`, applied to every frame.
pub fn random_crop(clip: &VideoClip, crop_h: usize, crop_w: usize, seed: u64) -> Result<VideoClip> {
    let [_, h, w, _] = clip.dims();
    if crop_h == 0 || crop_w == 0 || crop_h > h || crop_w > w {
        return Err(Error::OutOfBounds(format!("crop {crop_h}x{crop_w} does not fit in a {h}x{w} frame")));
    }
    let mut rng = seeded_rng(seed, "crop");
    let oy = rng.gen_range(0..=h - crop_h);
    let ox = rng.gen_range(0..=w - crop_w);
    crop_at(clip, oy, ox, crop_h, crop_w)
}

pub fn crop_at(clip: &VideoClip, oy: usize, ox: usize, crop_h: usize, crop_w: usize) -> Result<VideoClip> {
    let [t, h, w, c] = clip.dims();
    if oy + crop_h > h || ox + crop_w > w {
        return Err(Error::OutOfBounds(format!(
            "window at ({oy}, {ox}) of size {crop_h}x{crop_w} exceeds {h}x{w}"
        )));
    }
    let mut data = Vec::with_capacity(t * crop_h * crop_w * c);
    for f in 0..t {
        for y in oy..oy + crop_h {
            let start = clip.index(f, y, ox, 0);
            data.extend_from_slice(&clip.data[start..start + crop_w * c]);
        }
    }
    VideoClip::new([t, crop_h, crop_w, c], clip.range, clip.fps, data)
}

/// Frames `start..start + len` of a clip.
pub fn frame_window(clip: &VideoClip, start: usize, len: usize) -> Result<VideoClip> {
    let [t, h, w, c] = clip.dims();
    if len == 0 || start + len > t {
        return Err(Error::OutOfBounds(format!("frames {start}..{} do not fit in {t}", start + len)));
    }
    let per = h * w * c;
    let data = clip.data[start * per..(start + len) * per].to_vec();
    VideoClip::new([len, h, w, c], clip.range, clip.fps, data)
}

/// Sidecar describing a `.rawvid` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawHeader {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub range: ValueRange,
    pub fps: f64,
}

impl RawHeader {
    pub fn byte_len(&self) -> Option<usize> {
        self.frames
            .checked_mul(self.height)?
            .checked_mul(self.width)?
            .checked_mul(self.channels)
    }

    pub fn parse(json: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(json)?)
    }
}

/// Encodes samples as bytes, one per value. Unit-range clips are scaled by 255 and rounded.
pub fn encode_raw(clip: &VideoClip) -> (RawHeader, Vec<u8>) {
    let header = RawHeader {
        frames: clip.frames,
        height: clip.height,
        width: clip.width,
        channels: clip.channels,
        range: clip.range,
        fps: clip.fps,
    };
    let scale = 255.0 / clip.range.max();
    let bytes = clip.data.iter().map(|v| (v * scale).round().clamp(0.0, 255.0) as u8).collect();
    (header, bytes)
}

pub fn decode_raw(header: &RawHeader, bytes: &[u8], path: &Path) -> Result<VideoClip> {
    let corrupt = |reason: String| Error::CorruptFile {
        path: path.to_path_buf(),
        reason,
    };
    let expected = header.byte_len().ok_or_else(|| corrupt("dimensions overflow".into()))?;
    if header.channels == 0 {
        return Err(corrupt("zero channels".into()));
    }
    if bytes.len() != expected {
        return Err(corrupt(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    if !header.fps.is_finite() {
        return Err(corrupt("fps is not finite".into()));
    }
    let scale = header.range.max() / 255.0;
    let data = bytes.iter().map(|&b| f64::from(b) * scale).collect();
    VideoClip::new(
        [header.frames, header.height, header.width, header.channels],
        header.range,
        header.fps,
        data,
    )
    .map_err(|e| corrupt(e.to_string()))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_raw_clip(clip: &VideoClip, path: &Path) -> Result<()> {
    let (header, bytes) = encode_raw(clip);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let sidecar = sidecar_path(path);
    fs::write(&sidecar, serde_json::to_vec_pretty(&header)?).map_err(|e| Error::io(&sidecar, e))
}

pub fn load_raw_clip(path: &Path) -> Result<VideoClip> {
    let sidecar = sidecar_path(path);
    let json = fs::read(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let header = RawHeader::parse(&json).map_err(|e| Error::CorruptFile {
        path: sidecar.clone(),
        reason: e.to_string(),
    })?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raw(&header, &bytes, path)
}
