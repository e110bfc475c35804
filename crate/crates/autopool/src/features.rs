//! Low-level feature learning: a sparse autoencoder and its convolutional
//! application over full images.
//!
//! Hidden activations go through a logistic sigmoid, so every feature output
//! lies in (0,1) and downstream pooling always sees non-negative vectors.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::parallel;

const APSE_MAGIC: [u8; 4] = *b"APSE";
const APSE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseAutoencoder {
    input_dim: usize,
    hidden_dim: usize,
    /// M×D row-major
    w_enc: Vec<f64>,
    b_enc: Vec<f64>,
    /// D×M row-major
    w_dec: Vec<f64>,
    b_dec: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SaeTrainConfig {
    /// Sparsity target rho for the KL penalty.
    pub sparsity_target: f64,
    /// Weight beta on the KL penalty.
    pub sparsity_weight: f64,
    /// L2 weight decay alpha.
    pub weight_decay: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SaeTrainConfig {
    fn default() -> Self {
        Self {
            sparsity_target: 0.05,
            sparsity_weight: 3.0,
            weight_decay: 0.003,
            learning_rate: 0.5,
            epochs: 50,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl SaeTrainConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0 < self.sparsity_target && self.sparsity_target < 1.0) {
            return Err(Error::InvalidConfig("sparsity target must be in (0,1)".into()));
        }
        if self.sparsity_weight < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig("beta and alpha must be >= 0".into()));
        }
        if self.learning_rate <= 0.0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("learning rate and batch size must be positive".into()));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl SparseAutoencoder {
    /// Seeded symmetric init, uniform in [-r, r] with r = sqrt(6/(D+M+1)).
    pub fn init(input_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = (6.0 / (input_dim + hidden_dim + 1) as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-r..=r)).collect()
        };
        Self {
            input_dim,
            hidden_dim,
            w_enc: draw(hidden_dim * input_dim),
            b_enc: vec![0.0; hidden_dim],
            w_dec: draw(input_dim * hidden_dim),
            b_dec: vec![0.0; input_dim],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// Feature vector y = sigmoid(W_enc·x + b_enc), entries in (0,1).
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let mut y = self.b_enc.clone();
        for (yi, row) in y.iter_mut().zip(self.w_enc.chunks_exact(self.input_dim)) {
            *yi = sigmoid(*yi + linalg::dot(row, x));
        }
        Ok(y)
    }

    /// Encode a batch of rows at once (rows of `xs` are D-vectors).
    pub fn encode_batch(&self, xs: &[f64], n: usize) -> Result<Vec<f64>> {
        if xs.len() != n * self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: n * self.input_dim,
                got: xs.len(),
            });
        }
        // H = sigmoid(X · W_encᵀ + b): compute via gemm with W_enc transposed.
        let w_t = transpose(&self.w_enc, self.hidden_dim, self.input_dim);
        let mut h = vec![0.0; n * self.hidden_dim];
        linalg::matmul(xs, &w_t, &mut h, n, self.input_dim, self.hidden_dim);
        parallel::for_each_row(&mut h, self.hidden_dim, |_, row| {
            for (v, b) in row.iter_mut().zip(&self.b_enc) {
                *v = sigmoid(*v + b);
            }
        });
        Ok(h)
    }

    pub fn decode(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.hidden_dim {
            return Err(Error::DimensionMismatch {
                expected: self.hidden_dim,
                got: y.len(),
            });
        }
        let mut x = self.b_dec.clone();
        for (xi, row) in x.iter_mut().zip(self.w_dec.chunks_exact(self.hidden_dim)) {
            *xi += linalg::dot(row, y);
        }
        Ok(x)
    }

    /// Decoder column for feature `j`, useful for visualizing what the
    /// feature reconstructs.
    pub fn feature_image(&self, j: usize) -> Vec<f64> {
        (0..self.input_dim)
            .map(|d| self.w_dec[d * self.hidden_dim + j])
            .collect()
    }

    pub fn params(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        (&self.w_enc, &self.b_enc, &self.w_dec, &self.b_dec)
    }

    fn params_flat(&self) -> Vec<f64> {
        let mut p = self.w_enc.clone();
        p.extend_from_slice(&self.b_enc);
        p.extend_from_slice(&self.w_dec);
        p.extend_from_slice(&self.b_dec);
        p
    }

    fn set_params_flat(&mut self, p: &[f64]) {
        let (m, d) = (self.hidden_dim, self.input_dim);
        let mut off = 0;
        self.w_enc.copy_from_slice(&p[off..off + m * d]);
        off += m * d;
        self.b_enc.copy_from_slice(&p[off..off + m]);
        off += m;
        self.w_dec.copy_from_slice(&p[off..off + d * m]);
        off += d * m;
        self.b_dec.copy_from_slice(&p[off..off + d]);
    }
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Full-batch SAE loss: mean squared reconstruction + beta·KL sparsity +
/// (alpha/2)·weight norms.
pub fn sae_loss(sae: &SparseAutoencoder, patches: &[Vec<f64>], cfg: &SaeTrainConfig) -> f64 {
    let n = patches.len() as f64;
    let m = sae.hidden_dim;
    let mut recon = 0.0;
    let mut rho_hat = vec![0.0; m];
    for x in patches {
        let h = sae.encode(x).expect("dims checked by caller");
        for (r, hv) in rho_hat.iter_mut().zip(&h) {
            *r += hv / n;
        }
        let xhat = sae.decode(&h).expect("dims checked by caller");
        recon += 0.5
            * xhat
                .iter()
                .zip(x)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
    }
    let rho = cfg.sparsity_target;
    let kl: f64 = rho_hat
        .iter()
        .map(|&rh| {
            let rh = rh.clamp(1e-12, 1.0 - 1e-12);
            rho * (rho / rh).ln() + (1.0 - rho) * ((1.0 - rho) / (1.0 - rh)).ln()
        })
        .sum();
    recon / n
        + cfg.sparsity_weight * kl
        + 0.5 * cfg.weight_decay * (linalg::norm_sq(&sae.w_enc) + linalg::norm_sq(&sae.w_dec))
}

/// Gradient of `sae_loss` over `patches` with respect to all parameters,
/// flattened in (w_enc, b_enc, w_dec, b_dec) order.
pub fn sae_gradient(sae: &SparseAutoencoder, patches: &[Vec<f64>], cfg: &SaeTrainConfig) -> Vec<f64> {
    let (d, m) = (sae.input_dim, sae.hidden_dim);
    let b = patches.len();
    let bf = b as f64;

    let mut hs = Vec::with_capacity(b);
    let mut rho_hat = vec![0.0; m];
    for x in patches.iter() {
        let h = sae.encode(x).expect("dims checked by caller");
        for (r, hv) in rho_hat.iter_mut().zip(&h) {
            *r += hv / bf;
        }
        hs.push(h);
    }
    let rho = cfg.sparsity_target;
    let sparsity_grad: Vec<f64> = rho_hat
        .iter()
        .map(|&rh| {
            let rh = rh.clamp(1e-12, 1.0 - 1e-12);
            cfg.sparsity_weight * (-rho / rh + (1.0 - rho) / (1.0 - rh)) / bf
        })
        .collect();

    let mut g_w_enc = vec![0.0; m * d];
    let mut g_b_enc = vec![0.0; m];
    let mut g_w_dec = vec![0.0; d * m];
    let mut g_b_dec = vec![0.0; d];

    for (x, h) in patches.iter().zip(&hs) {
        let xhat = sae.decode(h).expect("dims checked by caller");
        let dxhat: Vec<f64> = xhat.iter().zip(x).map(|(a, b)| (a - b) / bf).collect();
        // decoder grads
        for (di, &dv) in dxhat.iter().enumerate() {
            linalg::axpy(dv, h, &mut g_w_dec[di * m..(di + 1) * m]);
            g_b_dec[di] += dv;
        }
        // back through decoder: dh = W_decᵀ · dxhat + sparsity term
        let mut dh = vec![0.0; m];
        linalg::matvec_t(&sae.w_dec, d, m, &dxhat, &mut dh);
        for (dhj, s) in dh.iter_mut().zip(&sparsity_grad) {
            *dhj += s;
        }
        // through sigmoid
        for (dhj, hj) in dh.iter_mut().zip(h) {
            *dhj *= hj * (1.0 - hj);
        }
        for (j, &dz) in dh.iter().enumerate() {
            linalg::axpy(dz, x, &mut g_w_enc[j * d..(j + 1) * d]);
            g_b_enc[j] += dz;
        }
    }
    linalg::axpy(cfg.weight_decay, &sae.w_enc, &mut g_w_enc);
    linalg::axpy(cfg.weight_decay, &sae.w_dec, &mut g_w_dec);

    let mut g = g_w_enc;
    g.extend_from_slice(&g_b_enc);
    g.extend_from_slice(&g_w_dec);
    g.extend_from_slice(&g_b_dec);
    g
}

/// Train a sparse autoencoder with mini-batch gradient descent.
///
/// Returns the model and the per-epoch full-batch loss curve (entry 0 is the
/// loss of the initialization). On a full-batch loss increase beyond 1e-6 the
/// epoch is rolled back and the learning rate halved, so the curve is
/// non-increasing within tolerance.
pub fn train_sae(
    patches: &[Vec<f64>],
    hidden_dim: usize,
    cfg: &SaeTrainConfig,
) -> Result<(SparseAutoencoder, Vec<f64>)> {
    cfg.validate()?;
    if hidden_dim == 0 {
        return Err(Error::InvalidConfig("hidden_dim must be >= 1".into()));
    }
    let first = patches.first().ok_or(Error::EmptyInput)?;
    let d = first.len();
    if patches.iter().any(|p| p.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: patches.iter().find(|p| p.len() != d).unwrap().len(),
        });
    }
    let mut sae = SparseAutoencoder::init(d, hidden_dim, cfg.seed);
    let mut curve = vec![sae_loss(&sae, patches, cfg)];
    let mut lr = cfg.learning_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5ae));
    let mut order: Vec<usize> = (0..patches.len()).collect();

    for epoch in 0..cfg.epochs {
        let snapshot = sae.params_flat();
        shuffle(&mut order, &mut rng);
        let mut accepted = false;
        for _attempt in 0..24 {
            for batch_ids in order.chunks(cfg.batch_size) {
                let batch: Vec<Vec<f64>> = batch_ids.iter().map(|&i| patches[i].clone()).collect();
                let g = sae_gradient(&sae, &batch, cfg);
                let mut p = sae.params_flat();
                linalg::axpy(-lr, &g, &mut p);
                sae.set_params_flat(&p);
            }
            let loss = sae_loss(&sae, patches, cfg);
            if loss.is_nan() {
                return Err(Error::DivergedLoss { epoch });
            }
            let prev = *curve.last().unwrap();
            if loss <= prev + 1e-6 {
                curve.push(loss);
                accepted = true;
                break;
            }
            sae.set_params_flat(&snapshot);
            lr *= 0.5;
        }
        if !accepted {
            // step size exhausted; hold position
            curve.push(*curve.last().unwrap());
        }
    }
    Ok((sae, curve))
}

fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// Layout of convolutionally duplicated features: every local feature is
/// applied at all stride-1 positions, giving `n_local` maps of
/// `map_rows × map_cols`. Flat index `k·area + row·map_cols + col` keeps each
/// map contiguous, so the index set of map k is `[k·area, (k+1)·area)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvLayout {
    pub image_height: usize,
    pub image_width: usize,
    pub channels: usize,
    pub patch: usize,
    pub n_local: usize,
}

impl ConvLayout {
    pub fn new(
        image_height: usize,
        image_width: usize,
        channels: usize,
        patch: usize,
        n_local: usize,
    ) -> Result<Self> {
        if patch == 0 || patch > image_height || patch > image_width || n_local == 0 || channels == 0
        {
            return Err(Error::InvalidConfig(format!(
                "patch {patch} does not fit {image_height}x{image_width} image"
            )));
        }
        Ok(Self {
            image_height,
            image_width,
            channels,
            patch,
            n_local,
        })
    }

    pub fn map_rows(&self) -> usize {
        self.image_height - self.patch + 1
    }

    pub fn map_cols(&self) -> usize {
        self.image_width - self.patch + 1
    }

    pub fn map_area(&self) -> usize {
        self.map_rows() * self.map_cols()
    }

    /// Total feature dimension M = n_local × map area.
    pub fn total_dim(&self) -> usize {
        self.n_local * self.map_area()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    pub fn flat_index(&self, feature: usize, row: usize, col: usize) -> usize {
        feature * self.map_area() + row * self.map_cols() + col
    }

    pub fn unflatten(&self, flat: usize) -> (usize, usize, usize) {
        let area = self.map_area();
        let k = flat / area;
        let rem = flat % area;
        (k, rem / self.map_cols(), rem % self.map_cols())
    }

    /// Flat index range of feature map `k`.
    pub fn map_range(&self, k: usize) -> std::ops::Range<usize> {
        k * self.map_area()..(k + 1) * self.map_area()
    }

    /// Extract the channel-last patch at (row, col) into `out`.
    pub fn extract_patch(&self, image: &[f64], row: usize, col: usize, out: &mut [f64]) {
        let (w, c, p) = (self.image_width, self.channels, self.patch);
        let mut o = 0;
        for pr in 0..p {
            let base = ((row + pr) * w + col) * c;
            out[o..o + p * c].copy_from_slice(&image[base..base + p * c]);
            o += p * c;
        }
    }
}

/// Apply `sae` at every stride-1 location of `image`, producing the flat
/// feature-map vector described by `layout`.
pub fn conv_extract(sae: &SparseAutoencoder, image: &[f64], layout: &ConvLayout) -> Result<Vec<f64>> {
    if sae.input_dim != layout.patch_dim() {
        return Err(Error::DimensionMismatch {
            expected: layout.patch_dim(),
            got: sae.input_dim,
        });
    }
    if sae.hidden_dim != layout.n_local {
        return Err(Error::DimensionMismatch {
            expected: layout.n_local,
            got: sae.hidden_dim,
        });
    }
    let expected = layout.image_height * layout.image_width * layout.channels;
    if image.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: image.len(),
        });
    }
    let (rows, cols) = (layout.map_rows(), layout.map_cols());
    let n_locs = rows * cols;
    let d = layout.patch_dim();
    let mut patches = vec![0.0; n_locs * d];
    for r in 0..rows {
        for c in 0..cols {
            let l = r * cols + c;
            layout.extract_patch(image, r, c, &mut patches[l * d..(l + 1) * d]);
        }
    }
    // h is n_locs × n_local; transpose into map-contiguous order
    let h = sae.encode_batch(&patches, n_locs)?;
    let mut out = vec![0.0; layout.total_dim()];
    let area = layout.map_area();
    parallel::for_each_row(&mut out, area, |k, map| {
        for (l, slot) in map.iter_mut().enumerate() {
            *slot = h[l * layout.n_local + k];
        }
    });
    Ok(out)
}

/// Write the model as an APSE file: magic, u32 version, u32 D, u32 M, then
/// w_enc (M×D), b_enc, w_dec (D×M), b_dec as little-endian f64, row-major.
pub fn save_sae(sae: &SparseAutoencoder, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    out.extend_from_slice(&APSE_MAGIC);
    out.extend_from_slice(&APSE_VERSION.to_le_bytes());
    out.extend_from_slice(&(sae.input_dim as u32).to_le_bytes());
    out.extend_from_slice(&(sae.hidden_dim as u32).to_le_bytes());
    for section in [&sae.w_enc, &sae.b_enc, &sae.w_dec, &sae.b_dec] {
        for v in section.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_sae(path: impl AsRef<Path>) -> Result<SparseAutoencoder> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let parse = |reason: &str| Error::ModelParse {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 16 {
        return Err(parse("file shorter than header"));
    }
    if bytes[..4] != APSE_MAGIC {
        return Err(parse("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != APSE_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let m = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let n_params = m * d + m + d * m + d;
    if bytes.len() != 16 + n_params * 8 {
        return Err(parse("payload length does not match dimensions"));
    }
    let mut vals = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut take = |n: usize| -> Vec<f64> { vals.by_ref().take(n).collect() };
    Ok(SparseAutoencoder {
        input_dim: d,
        hidden_dim: m,
        w_enc: take(m * d),
        b_enc: take(m),
        w_dec: take(d * m),
        b_dec: take(d),
    })
}
