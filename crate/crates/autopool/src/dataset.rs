//! Paired-frame datasets, synthetic pair generation, and labeled image sets.
//!
//! All randomness is seeded; generation derives one RNG stream per pair from
//! `(seed, pair index)` so output never depends on scheduling.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::parallel;

const APPD_MAGIC: [u8; 4] = *b"APPD";
const APPD_VERSION: u32 = 1;

/// N pairs of consecutive-frame patches, pixels in `[0,1]`.
///
/// Pixels are stored as `f32`, channel-last row-major, pair-interleaved:
/// frame_t fully, then frame_t+1.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPairSet {
    height: usize,
    width: usize,
    channels: usize,
    /// n_pairs × 2 × height × width × channels values.
    data: Vec<f32>,
}

impl PatchPairSet {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let frame = height * width * channels;
        if frame == 0 || data.is_empty() || data.len() % (2 * frame) != 0 {
            return Err(Error::InvalidConfig(format!(
                "data length {} is not a positive multiple of 2*{}",
                data.len(),
                frame
            )));
        }
        for (i, &v) in data.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::ValueOutOfRange {
                    index: i,
                    value: v as f64,
                });
            }
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn n_pairs(&self) -> usize {
        self.data.len() / (2 * self.frame_len())
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

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    /// Frame `which` (0 = t, 1 = t+1) of pair `i`.
    pub fn frame(&self, i: usize, which: usize) -> &[f32] {
        assert!(which < 2);
        let f = self.frame_len();
        let start = (i * 2 + which) * f;
        &self.data[start..start + f]
    }

    /// Both frames of pair `i` as f64 vectors.
    pub fn pair_f64(&self, i: usize) -> (Vec<f64>, Vec<f64>) {
        let a = self.frame(i, 0).iter().map(|&v| v as f64).collect();
        let b = self.frame(i, 1).iter().map(|&v| v as f64).collect();
        (a, b)
    }

    pub fn raw(&self) -> &[f32] {
        &self.data
    }
}

/// Read a `PatchPairSet` from an APPD file.
///
/// Format, little-endian: magic `APPD`, u32 version = 1, u32 N, u16 H,
/// u16 W, u8 C, u8 dtype (0 = f32), then N×2×H×W×C f32 values.
pub fn load_pairs(path: impl AsRef<Path>) -> Result<PatchPairSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pairs(&bytes)
}

fn decode_pairs(bytes: &[u8]) -> Result<PatchPairSet> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take::<4>()?;
    if magic != APPD_MAGIC {
        return Err(Error::BadMagic {
            expected: APPD_MAGIC,
            found: magic,
        });
    }
    let version = u32::from_le_bytes(cur.take()?);
    if version != APPD_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let n = u32::from_le_bytes(cur.take()?) as usize;
    let h = u16::from_le_bytes(cur.take()?) as usize;
    let w = u16::from_le_bytes(cur.take()?) as usize;
    let c = cur.take::<1>()?[0] as usize;
    let dtype = cur.take::<1>()?[0];
    if dtype != 0 {
        return Err(Error::UnsupportedVersion(dtype as u32));
    }
    if n == 0 || h == 0 || w == 0 || c == 0 {
        return Err(Error::InvalidConfig(format!(
            "degenerate header N={n} H={h} W={w} C={c}"
        )));
    }
    let count = n * 2 * h * w * c;
    let mut data = Vec::with_capacity(count);
    for i in 0..count {
        let v = f32::from_le_bytes(cur.take()?);
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::ValueOutOfRange {
                index: i,
                value: v as f64,
            });
        }
        data.push(v);
    }
    PatchPairSet::new(h, w, c, data)
}

/// Write `set` as an APPD file. `load_pairs` on the result is byte-exact.
pub fn save_pairs(set: &PatchPairSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(18 + set.data.len() * 4);
    out.extend_from_slice(&APPD_MAGIC);
    out.extend_from_slice(&APPD_VERSION.to_le_bytes());
    out.extend_from_slice(&(set.n_pairs() as u32).to_le_bytes());
    out.extend_from_slice(&(set.height as u16).to_le_bytes());
    out.extend_from_slice(&(set.width as u16).to_le_bytes());
    out.push(set.channels as u8);
    out.push(0u8); // dtype f32
    for v in &set.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        if self.pos + N > self.bytes.len() {
            return Err(Error::TruncatedFile {
                needed: self.pos + N - self.bytes.len(),
            });
        }
        let mut out = [0u8; N];
        out.copy_from_slice(&self.bytes[self.pos..self.pos + N]);
        self.pos += N;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternKind {
    Bar,
    Blob,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    Translate,
    Rotate,
    Both,
}

/// Configuration for the synthetic paired-frame generator.
///
/// Each pair instantiates one pattern prototype ("group"); groups occupy
/// disjoint vertical strips of the frame so tests have clean ground truth.
/// Frame t+1 is frame t transformed (integer translations are exact array
/// shifts, rotations use bilinear sampling, vacated pixels are background),
/// then both frames get independent Gaussian noise and are clamped to [0,1].
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_pairs: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pattern: PatternKind,
    pub transform: TransformKind,
    /// Translation applied between frames, in pixels along +x.
    pub translate_px: f64,
    /// Rotation applied between frames, in degrees about the pattern center.
    pub rotate_deg: f64,
    pub n_groups: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_pairs: 100,
            height: 16,
            width: 16,
            channels: 1,
            pattern: PatternKind::Bar,
            transform: TransformKind::Translate,
            translate_px: 1.0,
            rotate_deg: 0.0,
            n_groups: 2,
            noise_std: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 || self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::InvalidConfig("zero-sized dataset".into()));
        }
        if self.n_groups == 0 {
            return Err(Error::InvalidConfig("n_groups must be >= 1".into()));
        }
        if self.n_groups > self.width {
            return Err(Error::InvalidConfig(format!(
                "n_groups {} exceeds frame width {}",
                self.n_groups, self.width
            )));
        }
        if self.translate_px < 0.0 || self.rotate_deg < 0.0 || self.noise_std < 0.0 {
            return Err(Error::InvalidConfig(
                "magnitudes and noise must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Column range `[lo, hi)` of the strip owned by `group`.
    pub fn strip(&self, group: usize) -> (usize, usize) {
        let lo = group * self.width / self.n_groups;
        let hi = (group + 1) * self.width / self.n_groups;
        (lo, hi)
    }
}

/// Generate a synthetic paired-frame set plus the group index of each pair.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(PatchPairSet, Vec<usize>)> {
    cfg.validate()?;
    let frame = cfg.height * cfg.width * cfg.channels;
    let pairs = parallel::map_indices(cfg.n_pairs, |i| generate_pair(cfg, i));
    let mut data = Vec::with_capacity(cfg.n_pairs * 2 * frame);
    let mut groups = Vec::with_capacity(cfg.n_pairs);
    for (a, b, g) in pairs {
        data.extend_from_slice(&a);
        data.extend_from_slice(&b);
        groups.push(g);
    }
    Ok((
        PatchPairSet::new(cfg.height, cfg.width, cfg.channels, data)?,
        groups,
    ))
}

fn pair_rng(seed: u64, pair_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pair_index as u64 + 1);
    rng
}

fn generate_pair(cfg: &SynthConfig, i: usize) -> (Vec<f32>, Vec<f32>, usize) {
    let mut rng = pair_rng(cfg.seed, i);
    let group = i % cfg.n_groups;
    let (lo, hi) = cfg.strip(group);

    let (clean, center) = render_pattern(cfg, &mut rng, lo, hi);
    let moved = apply_transform(cfg, &clean, center);

    let a = finish_frame(cfg, &clean, &mut rng);
    let b = finish_frame(cfg, &moved, &mut rng);
    (a, b, group)
}

/// Render one pattern instance into a single-channel canvas; returns the
/// canvas and the pattern center (x, y) used as the rotation pivot.
fn render_pattern(
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
    lo: usize,
    hi: usize,
) -> (Vec<f64>, (f64, f64)) {
    let (h, w) = (cfg.height, cfg.width);
    let mut canvas = vec![0.0f64; h * w];
    match cfg.pattern {
        PatternKind::Bar => {
            // Line segment centered in the strip band, random position and
            // base angle (rotate modes need off-axis structure).
            let cx_lo = lo as f64 + 0.5;
            let cx_hi = (hi as f64 - 0.5).max(cx_lo + 1e-9);
            let cx = rng.gen_range(cx_lo..cx_hi);
            let cy = rng.gen_range(h as f64 * 0.25..h as f64 * 0.75);
            let base_angle = match cfg.transform {
                TransformKind::Translate => std::f64::consts::FRAC_PI_2, // vertical bar
                _ => rng.gen_range(0.0..std::f64::consts::PI),
            };
            let len = h as f64 * 0.6;
            splat_segment(&mut canvas, h, w, cx, cy, base_angle, len);
            (canvas, (cx, cy))
        }
        PatternKind::Blob => {
            let cx = rng.gen_range(lo as f64..hi as f64);
            let cy = rng.gen_range(0.0..h as f64);
            let sigma = (h.min(w) as f64 / 8.0).max(0.8);
            for r in 0..h {
                for c in 0..w {
                    let dx = c as f64 - cx;
                    let dy = r as f64 - cy;
                    canvas[r * w + c] = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                }
            }
            (canvas, (cx, cy))
        }
    }
}

fn splat_segment(canvas: &mut [f64], h: usize, w: usize, cx: f64, cy: f64, angle: f64, len: f64) {
    let (dy, dx) = angle.sin_cos();
    let steps = (len * 4.0).ceil() as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64 - 0.5;
        let x = cx + t * len * dx;
        let y = cy + t * len * dy;
        bilinear_splat(canvas, h, w, x, y, 1.0);
    }
    for v in canvas.iter_mut() {
        *v = v.min(1.0);
    }
}

fn bilinear_splat(canvas: &mut [f64], h: usize, w: usize, x: f64, y: f64, value: f64) {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    for (dr, dc, wgt) in [
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (0, 1, fx * (1.0 - fy)),
        (1, 0, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    ] {
        let r = y0 as i64 + dr;
        let c = x0 as i64 + dc;
        if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
            canvas[r as usize * w + c as usize] += value * wgt;
        }
    }
}

fn apply_transform(cfg: &SynthConfig, canvas: &[f64], center: (f64, f64)) -> Vec<f64> {
    let mut out = canvas.to_vec();
    match cfg.transform {
        TransformKind::Translate => {
            out = translate(&out, cfg.height, cfg.width, cfg.translate_px);
        }
        TransformKind::Rotate => {
            out = rotate(&out, cfg.height, cfg.width, center, cfg.rotate_deg);
        }
        TransformKind::Both => {
            out = rotate(&out, cfg.height, cfg.width, center, cfg.rotate_deg);
            out = translate(&out, cfg.height, cfg.width, cfg.translate_px);
        }
    }
    out
}

/// Shift along +x; whole-pixel shifts move values exactly, fractional shifts
/// resample bilinearly. No wraparound: vacated pixels become background.
fn translate(canvas: &[f64], h: usize, w: usize, dx: f64) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    if dx.fract() == 0.0 {
        let shift = dx as i64;
        for r in 0..h {
            for c in 0..w {
                let src = c as i64 - shift;
                if src >= 0 && (src as usize) < w {
                    out[r * w + c] = canvas[r * w + src as usize];
                }
            }
        }
    } else {
        for r in 0..h {
            for c in 0..w {
                out[r * w + c] = sample_bilinear(canvas, h, w, c as f64 - dx, r as f64);
            }
        }
    }
    out
}

fn rotate(canvas: &[f64], h: usize, w: usize, center: (f64, f64), degrees: f64) -> Vec<f64> {
    if degrees == 0.0 {
        return canvas.to_vec();
    }
    let theta = degrees.to_radians();
    let (sin_t, cos_t) = theta.sin_cos();
    let (cx, cy) = center;
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            // Inverse map: rotate the destination pixel back by -theta.
            let dx = c as f64 - cx;
            let dy = r as f64 - cy;
            let sx = cx + dx * cos_t + dy * sin_t;
            let sy = cy - dx * sin_t + dy * cos_t;
            out[r * w + c] = sample_bilinear(canvas, h, w, sx, sy);
        }
    }
    out
}

fn sample_bilinear(canvas: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let mut acc = 0.0;
    for (dr, dc, wgt) in [
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (0, 1, fx * (1.0 - fy)),
        (1, 0, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    ] {
        let r = y0 as i64 + dr;
        let c = x0 as i64 + dc;
        if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
            acc += canvas[r as usize * w + c as usize] * wgt;
        }
    }
    acc
}

/// Expand to channels, add noise, clamp, quantize to f32 storage.
fn finish_frame(cfg: &SynthConfig, canvas: &[f64], rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut out = Vec::with_capacity(canvas.len() * cfg.channels);
    if cfg.noise_std > 0.0 {
        for &v in canvas {
            for _ in 0..cfg.channels {
                let n: f64 = sample_gaussian(rng) * cfg.noise_std;
                out.push((v + n).clamp(0.0, 1.0) as f32);
            }
        }
    } else {
        for &v in canvas {
            for _ in 0..cfg.channels {
                out.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    out
}

fn sample_gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Labeled images in `[0,1]`, channel-last row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub n_classes: usize,
    images: Vec<f32>,
    labels: Vec<usize>,
}

impl LabeledImageSet {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        n_classes: usize,
        images: Vec<f32>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let frame = height * width * channels;
        if frame == 0 || images.len() != labels.len() * frame {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * frame,
                got: images.len(),
            });
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
            return Err(Error::LabelOutOfRange {
                index: i,
                label: l as u32,
                n_classes,
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            n_classes,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let f = self.height * self.width * self.channels;
        &self.images[i * f..(i + 1) * f]
    }

    pub fn image_f64(&self, i: usize) -> Vec<f64> {
        self.image(i).iter().map(|&v| v as f64).collect()
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

const CIFAR_RECORD: usize = 3073;
const CIFAR_SIDE: usize = 32;
const CIFAR_PLANE: usize = CIFAR_SIDE * CIFAR_SIDE;

/// Load the five standard CIFAR-10 training batches from `dir`.
pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<LabeledImageSet> {
    let dir = dir.as_ref();
    let names: Vec<_> = (1..=5).map(|i| format!("data_batch_{i}.bin")).collect();
    let paths: Vec<_> = names.iter().map(|n| dir.join(n)).collect();
    let missing: Vec<_> = paths
        .iter()
        .filter(|p| !p.exists())
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    if missing.len() == paths.len() {
        return Err(Error::MissingFiles {
            dir: dir.to_path_buf(),
            what: format!("no batch files ({})", missing.join(", ")),
        });
    }
    if !missing.is_empty() {
        return Err(Error::MissingFiles {
            dir: dir.to_path_buf(),
            what: missing.join(", "),
        });
    }
    load_cifar10_files(&paths)
}

/// Load specific CIFAR-10 binary batch files (e.g. the test batch).
pub fn load_cifar10_files(paths: &[impl AsRef<Path>]) -> Result<LabeledImageSet> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut record_index = 0usize;
    for path in paths {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::RecordSizeMismatch {
                index: record_index + bytes.len() / CIFAR_RECORD,
                got: bytes.len() % CIFAR_RECORD,
                expected: CIFAR_RECORD,
            });
        }
        for rec in bytes.chunks_exact(CIFAR_RECORD) {
            let label = rec[0];
            if label > 9 {
                return Err(Error::LabelOutOfRange {
                    index: record_index,
                    label: label as u32,
                    n_classes: 10,
                });
            }
            labels.push(label as usize);
            // Planar RGB in the file; convert to channel-last row-major.
            let pixels = &rec[1..];
            for p in 0..CIFAR_PLANE {
                images.push(pixels[p] as f32 / 255.0);
                images.push(pixels[CIFAR_PLANE + p] as f32 / 255.0);
                images.push(pixels[2 * CIFAR_PLANE + p] as f32 / 255.0);
            }
            record_index += 1;
        }
    }
    LabeledImageSet::new(CIFAR_SIDE, CIFAR_SIDE, 3, 10, images, labels)
}

/// Keep exactly `k` seeded-random examples of every class.
pub fn subsample_per_class(set: &LabeledImageSet, k: usize, seed: u64) -> Result<LabeledImageSet> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); set.n_classes];
    for (i, &l) in set.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frame = set.height * set.width * set.channels;
    let mut images = Vec::with_capacity(set.n_classes * k * frame);
    let mut labels = Vec::with_capacity(set.n_classes * k);
    for (class, indices) in by_class.iter_mut().enumerate() {
        if indices.len() < k {
            return Err(Error::InsufficientClassCount {
                class,
                available: indices.len(),
                requested: k,
            });
        }
        shuffle(indices, &mut rng);
        for &i in indices.iter().take(k) {
            images.extend_from_slice(set.image(i));
            labels.push(class);
        }
    }
    LabeledImageSet::new(set.height, set.width, set.channels, set.n_classes, images, labels)
}

fn shuffle(indices: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..indices.len()).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_set() -> PatchPairSet {
        PatchPairSet::new(2, 2, 1, vec![0.0; 8]).unwrap()
    }

    #[test]
    fn minimal_zero_set_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.appd");
        let set = tiny_set();
        save_pairs(&set, &path).unwrap();
        let back = load_pairs(&path).unwrap();
        assert_eq!(back.n_pairs(), 1);
        assert_eq!(back, set);
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.appd");
        fs::write(&path, b"XXXX\x01\x00\x00\x00").unwrap();
        match load_pairs(&path) {
            Err(Error::BadMagic { found, .. }) => assert_eq!(&found, b"XXXX"),
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.appd");
        let set = tiny_set();
        save_pairs(&set, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_pairs(&path), Err(Error::TruncatedFile { .. })));
    }

    #[test]
    fn out_of_range_pixel_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.appd");
        save_pairs(&tiny_set(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let bad = 2.0f32.to_le_bytes();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&bad);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_pairs(&path), Err(Error::ValueOutOfRange { .. })));
    }

    #[test]
    fn header_encodes_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.appd");
        let set = PatchPairSet::new(16, 16, 1, vec![0.5; 3 * 2 * 256]).unwrap();
        save_pairs(&set, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"APPD");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u16::from_le_bytes(bytes[12..14].try_into().unwrap()), 16);
        assert_eq!(u16::from_le_bytes(bytes[14..16].try_into().unwrap()), 16);
        assert_eq!(bytes[16], 1);
        assert_eq!(bytes[17], 0);
    }

    #[test]
    fn unwritable_path_is_io_failure() {
        let set = tiny_set();
        let err = save_pairs(&set, "/nonexistent-dir/x.appd").unwrap_err();
        assert!(matches!(err, Error::IoFailure { .. }));
    }

    #[test]
    fn zero_magnitude_zero_noise_gives_identical_frames() {
        let cfg = SynthConfig {
            translate_px: 0.0,
            noise_std: 0.0,
            n_pairs: 20,
            ..Default::default()
        };
        let (set, _) = generate_synthetic(&cfg).unwrap();
        for i in 0..set.n_pairs() {
            assert_eq!(set.frame(i, 0), set.frame(i, 1));
        }
    }

    #[test]
    fn translate_one_px_is_exact_shift() {
        let cfg = SynthConfig {
            translate_px: 1.0,
            noise_std: 0.0,
            n_pairs: 10,
            ..Default::default()
        };
        let (set, _) = generate_synthetic(&cfg).unwrap();
        let (h, w) = (set.height(), set.width());
        for i in 0..set.n_pairs() {
            let a = set.frame(i, 0);
            let b = set.frame(i, 1);
            for r in 0..h {
                for c in 0..w {
                    let expected = if c == 0 { 0.0 } else { a[r * w + c - 1] };
                    assert_eq!(b[r * w + c], expected, "pair {i} at ({r},{c})");
                }
            }
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let cfg = SynthConfig {
            noise_std: 0.05,
            n_pairs: 30,
            transform: TransformKind::Both,
            rotate_deg: 10.0,
            translate_px: 1.5,
            ..Default::default()
        };
        let (a, ga) = generate_synthetic(&cfg).unwrap();
        let (b, gb) = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SynthConfig {
            n_groups: 0,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::InvalidConfig(_))));
    }

    fn write_cifar_batch(path: &Path, records: &[(u8, [u8; 3072])]) {
        let mut bytes = Vec::new();
        for (label, px) in records {
            bytes.push(*label);
            bytes.extend_from_slice(px);
        }
        fs::write(path, bytes).unwrap();
    }

    #[test]
    fn cifar_record_decoding_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let mut px = [0u8; 3072];
        px[0] = 255; // R of pixel (0,0)
        px[1024] = 128; // G of pixel (0,0)
        write_cifar_batch(&dir.path().join("b.bin"), &[(3, px)]);
        let set = load_cifar10_files(&[dir.path().join("b.bin")]).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.label(0), 3);
        let img = set.image(0);
        assert_eq!(img[0], 1.0);
        assert_eq!(img[1], 128.0 / 255.0);
        assert_eq!(img[2], 0.0);
    }

    #[test]
    fn cifar_label_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        write_cifar_batch(&dir.path().join("b.bin"), &[(12, [0u8; 3072])]);
        assert!(matches!(
            load_cifar10_files(&[dir.path().join("b.bin")]),
            Err(Error::LabelOutOfRange { label: 12, .. })
        ));
    }

    #[test]
    fn cifar_partial_record_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.bin");
        fs::write(&path, vec![0u8; CIFAR_RECORD + 7]).unwrap();
        assert!(matches!(
            load_cifar10_files(&[path]),
            Err(Error::RecordSizeMismatch { got: 7, .. })
        ));
    }

    #[test]
    fn cifar_missing_dir_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_cifar10(dir.path()), Err(Error::MissingFiles { .. })));
    }

    fn toy_labeled(per_class: usize) -> LabeledImageSet {
        let n_classes = 3;
        let n = per_class * n_classes;
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            images.extend_from_slice(&[(i % 7) as f32 / 7.0; 4]);
            labels.push(i % n_classes);
        }
        LabeledImageSet::new(2, 2, 1, n_classes, images, labels).unwrap()
    }

    #[test]
    fn subsample_full_class_is_permutation() {
        let set = toy_labeled(5);
        let sub = subsample_per_class(&set, 5, 9).unwrap();
        assert_eq!(sub.len(), set.len());
        for class in 0..3 {
            let count = sub.labels().iter().filter(|&&l| l == class).count();
            assert_eq!(count, 5);
        }
    }

    #[test]
    fn subsample_deterministic_and_exact_count() {
        let set = toy_labeled(8);
        let a = subsample_per_class(&set, 3, 42).unwrap();
        let b = subsample_per_class(&set, 3, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 9);
    }

    #[test]
    fn subsample_insufficient_class() {
        let set = toy_labeled(2);
        assert!(matches!(
            subsample_per_class(&set, 3, 0),
            Err(Error::InsufficientClassCount { .. })
        ));
    }
}
