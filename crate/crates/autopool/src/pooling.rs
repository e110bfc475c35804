//! The pooling matrix P: costs, analytic gradients, projected-gradient
//! training, and the fixed spatial-pooling baseline in native and matrix form.
//!
//! Pooling is z = P·y with P non-negative; reconstruction is ŷ = Pᵀ·z.
//! Training minimizes J = λ·J1 + J2 where J1 pulls pooled representations of
//! paired frames together and J2 is the reconstruction error.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::ConvLayout;
use crate::linalg;
use crate::parallel;

const APPM_MAGIC: [u8; 4] = *b"APPM";
const APPM_VERSION: u32 = 1;

/// K×M non-negative pooling matrix; row i is the soft cluster i.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolingMatrix {
    k_clusters: usize,
    feature_dim: usize,
    entries: Vec<f64>,
}

impl PoolingMatrix {
    pub fn new(k_clusters: usize, feature_dim: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != k_clusters * feature_dim {
            return Err(Error::DimensionMismatch {
                expected: k_clusters * feature_dim,
                got: entries.len(),
            });
        }
        for (i, &v) in entries.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::NegativeInput { index: i, value: v });
            }
        }
        Ok(Self {
            k_clusters,
            feature_dim,
            entries,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        Self {
            k_clusters: n,
            feature_dim: n,
            entries,
        }
    }

    pub fn zeros(k_clusters: usize, feature_dim: usize) -> Self {
        Self {
            k_clusters,
            feature_dim,
            entries: vec![0.0; k_clusters * feature_dim],
        }
    }

    /// Strictly positive seeded random init, entries in (0, scale].
    pub fn random_init(k_clusters: usize, feature_dim: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = (0..k_clusters * feature_dim)
            .map(|_| scale * (1.0 - rng.gen::<f64>()))
            .collect();
        Self {
            k_clusters,
            feature_dim,
            entries,
        }
    }

    pub fn k_clusters(&self) -> usize {
        self.k_clusters
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.feature_dim + j]
    }
}

/// J1 / J2 split of the training objective at a fixed λ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    pub j1: f64,
    pub j2: f64,
    pub lambda: f64,
    pub j_total: f64,
}

#[derive(Debug, Clone)]
pub struct PoolTrainConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Upper bound of the positive uniform init; `None` picks 0.01/sqrt(M).
    pub init_scale: Option<f64>,
    pub seed: u64,
    /// Tolerance on the epoch-over-epoch full-dataset cost increase before
    /// the step is rolled back and the rate halved.
    pub tolerance: f64,
}

impl Default for PoolTrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            learning_rate: 0.05,
            epochs: 100,
            batch_size: 32,
            init_scale: None,
            seed: 0,
            tolerance: 1e-8,
        }
    }
}

impl PoolTrainConfig {
    fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::InvalidConfig("lambda must be >= 0".into()));
        }
        if self.learning_rate <= 0.0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "learning rate and batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Pooled representation z = P·y.
pub fn pool(p: &PoolingMatrix, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != p.feature_dim {
        return Err(Error::DimensionMismatch {
            expected: p.feature_dim,
            got: y.len(),
        });
    }
    if let Some((i, &v)) = y.iter().enumerate().find(|(_, &v)| v < 0.0) {
        return Err(Error::NegativeInput { index: i, value: v });
    }
    let mut z = vec![0.0; p.k_clusters];
    linalg::matvec(&p.entries, p.k_clusters, p.feature_dim, y, &mut z);
    Ok(z)
}

/// Pool many rows at once: Z (n×K) = Y (n×M) · Pᵀ.
pub fn pool_batch(p: &PoolingMatrix, ys: &[f64], n: usize) -> Result<Vec<f64>> {
    if ys.len() != n * p.feature_dim {
        return Err(Error::DimensionMismatch {
            expected: n * p.feature_dim,
            got: ys.len(),
        });
    }
    let mut pt = vec![0.0; p.entries.len()];
    for i in 0..p.k_clusters {
        for j in 0..p.feature_dim {
            pt[j * p.k_clusters + i] = p.entries[i * p.feature_dim + j];
        }
    }
    let mut z = vec![0.0; n * p.k_clusters];
    linalg::matmul(ys, &pt, &mut z, n, p.feature_dim, p.k_clusters);
    Ok(z)
}

/// Reconstruction ŷ = Pᵀ·z.
pub fn reconstruct(p: &PoolingMatrix, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != p.k_clusters {
        return Err(Error::DimensionMismatch {
            expected: p.k_clusters,
            got: z.len(),
        });
    }
    let mut y = vec![0.0; p.feature_dim];
    linalg::matvec_t(&p.entries, p.k_clusters, p.feature_dim, z, &mut y);
    Ok(y)
}

fn check_pairs(p: &PoolingMatrix, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    for (a, b) in pairs {
        if a.len() != p.feature_dim || b.len() != p.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: p.feature_dim,
                got: if a.len() != p.feature_dim { a.len() } else { b.len() },
            });
        }
    }
    Ok(())
}

/// J1 and J2 over a pair set:
/// J1 = (1/N)·Σ ½‖P(y−y')‖², J2 = (1/N)·Σ ½(‖y−PᵀPy‖² + ‖y'−PᵀPy'‖²).
pub fn cost(p: &PoolingMatrix, pairs: &[(Vec<f64>, Vec<f64>)], lambda: f64) -> Result<CostBreakdown> {
    check_pairs(p, pairs)?;
    let (k, m) = (p.k_clusters, p.feature_dim);
    let sums = parallel::map_chunks(pairs, 16, |chunk| {
        let mut j1 = 0.0;
        let mut j2 = 0.0;
        let mut u = vec![0.0; k];
        let mut t = vec![0.0; k];
        let mut r = vec![0.0; m];
        for (y, yp) in chunk {
            let d: Vec<f64> = y.iter().zip(yp).map(|(a, b)| a - b).collect();
            linalg::matvec(&p.entries, k, m, &d, &mut u);
            j1 += 0.5 * linalg::norm_sq(&u);
            for side in [y, yp] {
                linalg::matvec(&p.entries, k, m, side, &mut t);
                linalg::matvec_t(&p.entries, k, m, &t, &mut r);
                j2 += 0.5
                    * side
                        .iter()
                        .zip(&r)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>();
            }
        }
        (j1, j2)
    });
    let n = pairs.len() as f64;
    let (j1, j2) = sums
        .into_iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let j1 = j1 / n;
    let j2 = j2 / n;
    Ok(CostBreakdown {
        j1,
        j2,
        lambda,
        j_total: lambda * j1 + j2,
    })
}

struct PairTerms {
    idx: usize,
    d: Vec<f64>,
    u: Vec<f64>,
    e_t: Vec<f64>,
    t_t: Vec<f64>,
    pe_t: Vec<f64>,
    e_n: Vec<f64>,
    t_n: Vec<f64>,
    pe_n: Vec<f64>,
}

/// ∂J/∂P of the batch-mean cost. Every term carries a left factor of P, so
/// the gradient vanishes identically at P = 0.
pub fn cost_gradient(
    p: &PoolingMatrix,
    pairs: &[(Vec<f64>, Vec<f64>)],
    lambda: f64,
) -> Result<Vec<f64>> {
    check_pairs(p, pairs)?;
    let (k, m) = (p.k_clusters, p.feature_dim);
    let n = pairs.len() as f64;
    let mut grad = vec![0.0; k * m];

    // Chunked so the per-pair intermediates stay bounded; accumulation order
    // is fixed (chunks in order, rows independent), so results do not depend
    // on thread count.
    let chunk_size = 32;
    let mut start = 0;
    while start < pairs.len() {
        let end = (start + chunk_size).min(pairs.len());
        let terms = parallel::map_indices(end - start, |off| {
            let idx = start + off;
            let (y, yp) = &pairs[idx];
            let d: Vec<f64> = y.iter().zip(yp).map(|(a, b)| a - b).collect();
            let mut u = vec![0.0; k];
            linalg::matvec(&p.entries, k, m, &d, &mut u);
            let side = |v: &[f64]| {
                let mut t = vec![0.0; k];
                linalg::matvec(&p.entries, k, m, v, &mut t);
                let mut e = vec![0.0; m];
                linalg::matvec_t(&p.entries, k, m, &t, &mut e);
                for (ei, vi) in e.iter_mut().zip(v) {
                    *ei -= vi;
                }
                let mut pe = vec![0.0; k];
                linalg::matvec(&p.entries, k, m, &e, &mut pe);
                (e, t, pe)
            };
            let (e_t, t_t, pe_t) = side(y);
            let (e_n, t_n, pe_n) = side(yp);
            PairTerms {
                idx,
                d,
                u,
                e_t,
                t_t,
                pe_t,
                e_n,
                t_n,
                pe_n,
            }
        });
        parallel::for_each_row(&mut grad, m, |i, row| {
            for term in &terms {
                let (y, yp) = &pairs[term.idx];
                if lambda != 0.0 {
                    linalg::axpy(lambda * term.u[i], &term.d, row);
                }
                linalg::axpy(term.pe_t[i], y, row);
                linalg::axpy(term.t_t[i], &term.e_t, row);
                linalg::axpy(term.pe_n[i], yp, row);
                linalg::axpy(term.t_n[i], &term.e_n, row);
            }
        });
        start = end;
    }
    for g in grad.iter_mut() {
        *g /= n;
    }
    Ok(grad)
}

/// Minimize J = λJ1 + J2 by projected mini-batch gradient descent: after each
/// step, negative entries are clamped to zero. Returns the matrix and the
/// per-epoch full-dataset J curve (entry 0 is the cost at the init).
pub fn train_autopool(
    pairs: &[(Vec<f64>, Vec<f64>)],
    k_clusters: usize,
    cfg: &PoolTrainConfig,
) -> Result<(PoolingMatrix, Vec<f64>)> {
    cfg.validate()?;
    if k_clusters == 0 {
        return Err(Error::InvalidConfig("k_clusters must be >= 1".into()));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    let m = pairs[0].0.len();
    let scale = cfg.init_scale.unwrap_or(0.01 / (m as f64).sqrt());
    let mut p = PoolingMatrix::random_init(k_clusters, m, scale, cfg.seed);
    check_pairs(&p, pairs)?;

    let mut curve = vec![cost(&p, pairs, cfg.lambda)?.j_total];
    let mut lr = cfg.learning_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9001));
    let mut order: Vec<usize> = (0..pairs.len()).collect();

    for epoch in 0..cfg.epochs {
        let snapshot = p.entries.clone();
        shuffle(&mut order, &mut rng);
        let mut accepted = false;
        for _attempt in 0..24 {
            for batch_ids in order.chunks(cfg.batch_size) {
                let batch: Vec<(Vec<f64>, Vec<f64>)> =
                    batch_ids.iter().map(|&i| pairs[i].clone()).collect();
                let g = cost_gradient(&p, &batch, cfg.lambda)?;
                for (pi, gi) in p.entries.iter_mut().zip(&g) {
                    *pi = (*pi - lr * gi).max(0.0);
                }
            }
            let j = cost(&p, pairs, cfg.lambda)?.j_total;
            if j.is_nan() {
                return Err(Error::DivergedLoss { epoch });
            }
            let prev = *curve.last().unwrap();
            if j <= prev + cfg.tolerance {
                curve.push(j);
                accepted = true;
                break;
            }
            p.entries.copy_from_slice(&snapshot);
            lr *= 0.5;
        }
        if !accepted {
            curve.push(*curve.last().unwrap());
        }
    }
    Ok((p, curve))
}

fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// Grid sides for the spatial-pooling baseline; outputs for multiple grids
/// are concatenated (grid-major, then feature, then cell row-major).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialGridSpec {
    pub grids: Vec<usize>,
}

impl SpatialGridSpec {
    pub fn new(grids: Vec<usize>) -> Result<Self> {
        if grids.is_empty() || grids.iter().any(|&g| g == 0) {
            return Err(Error::InvalidConfig("grid sides must be >= 1".into()));
        }
        Ok(Self { grids })
    }

    pub fn output_dim(&self, n_local: usize) -> usize {
        n_local * self.grids.iter().map(|g| g * g).sum::<usize>()
    }
}

fn cell_bounds(extent: usize, g: usize, cell: usize) -> (usize, usize) {
    (cell * extent / g, (cell + 1) * extent / g)
}

/// The 0/1 pooling matrix equivalent to sum spatial pooling on `layout`.
///
/// Row order: for each grid g (in spec order), for each feature map k, for
/// each cell (a, b) row-major. The row has ones exactly at the flat indices
/// of map k whose (row, col) fall in [⌊a·s/g⌋, ⌊(a+1)·s/g⌋) × likewise cols.
pub fn spatial_pool_matrix(layout: &ConvLayout, grids: &SpatialGridSpec) -> Result<PoolingMatrix> {
    let (sr, sc) = (layout.map_rows(), layout.map_cols());
    for &g in &grids.grids {
        if g > sr || g > sc {
            return Err(Error::GridLargerThanMap {
                grid: g,
                map: sr.min(sc),
            });
        }
    }
    let m = layout.total_dim();
    let k_total = grids.output_dim(layout.n_local);
    let mut entries = vec![0.0; k_total * m];
    let mut row = 0;
    for &g in &grids.grids {
        for k in 0..layout.n_local {
            for a in 0..g {
                let (r0, r1) = cell_bounds(sr, g, a);
                for b in 0..g {
                    let (c0, c1) = cell_bounds(sc, g, b);
                    let base = row * m;
                    for r in r0..r1 {
                        for c in c0..c1 {
                            entries[base + layout.flat_index(k, r, c)] = 1.0;
                        }
                    }
                    row += 1;
                }
            }
        }
    }
    PoolingMatrix::new(k_total, m, entries)
}

/// Direct sum spatial pooling; equals `pool(spatial_pool_matrix(..), maps)`
/// exactly, entry for entry.
pub fn spatial_pool(maps: &[f64], layout: &ConvLayout, grids: &SpatialGridSpec) -> Result<Vec<f64>> {
    if maps.len() != layout.total_dim() {
        return Err(Error::DimensionMismatch {
            expected: layout.total_dim(),
            got: maps.len(),
        });
    }
    let (sr, sc) = (layout.map_rows(), layout.map_cols());
    for &g in &grids.grids {
        if g > sr || g > sc {
            return Err(Error::GridLargerThanMap {
                grid: g,
                map: sr.min(sc),
            });
        }
    }
    let mut out = Vec::with_capacity(grids.output_dim(layout.n_local));
    for &g in &grids.grids {
        for k in 0..layout.n_local {
            for a in 0..g {
                let (r0, r1) = cell_bounds(sr, g, a);
                for b in 0..g {
                    let (c0, c1) = cell_bounds(sc, g, b);
                    // match the matrix form's accumulation order exactly
                    let mut acc = 0.0;
                    for r in r0..r1 {
                        for c in c0..c1 {
                            acc += maps[layout.flat_index(k, r, c)];
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Ok(out)
}

/// For each cluster i, the features j with P_ij > eps.
pub fn clusters_above_threshold(p: &PoolingMatrix, eps: f64) -> Vec<Vec<usize>> {
    (0..p.k_clusters)
        .map(|i| {
            p.row(i)
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > eps)
                .map(|(j, _)| j)
                .collect()
        })
        .collect()
}

/// For each cluster, feature maps ranked by pooling area Σ_{j∈S_k} P_ij,
/// descending, ties broken by ascending map index, truncated to `t`.
pub fn top_maps_by_pool_area(
    p: &PoolingMatrix,
    layout: &ConvLayout,
    t: usize,
) -> Result<Vec<Vec<usize>>> {
    if layout.total_dim() != p.feature_dim {
        return Err(Error::DimensionMismatch {
            expected: p.feature_dim,
            got: layout.total_dim(),
        });
    }
    Ok((0..p.k_clusters)
        .map(|i| {
            let row = p.row(i);
            let mut areas: Vec<(usize, f64)> = (0..layout.n_local)
                .map(|k| (k, row[layout.map_range(k)].iter().sum()))
                .collect();
            areas.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            areas.into_iter().take(t).map(|(k, _)| k).collect()
        })
        .collect())
}

/// Write the pooling matrix as an APPM file: magic, u32 version, u32 K,
/// u32 M, then row-major little-endian f64 entries.
pub fn save_pool(p: &PoolingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(16 + p.entries.len() * 8);
    out.extend_from_slice(&APPM_MAGIC);
    out.extend_from_slice(&APPM_VERSION.to_le_bytes());
    out.extend_from_slice(&(p.k_clusters as u32).to_le_bytes());
    out.extend_from_slice(&(p.feature_dim as u32).to_le_bytes());
    for v in &p.entries {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Test-friendly brute-force cost: literal elementwise re-evaluation of the
/// two sums, no shared code with `cost`.
pub fn cost_reference(p: &PoolingMatrix, pairs: &[(Vec<f64>, Vec<f64>)], lambda: f64) -> CostBreakdown {
    let (k, m) = (p.k_clusters, p.feature_dim);
    let n = pairs.len() as f64;
    let mut j1 = 0.0;
    let mut j2 = 0.0;
    for (y, yp) in pairs {
        for i in 0..k {
            let mut zi = 0.0;
            let mut zpi = 0.0;
            for j in 0..m {
                zi += p.get(i, j) * y[j];
                zpi += p.get(i, j) * yp[j];
            }
            j1 += 0.5 * (zi - zpi) * (zi - zpi);
        }
        for side in [y, yp] {
            for j in 0..m {
                let mut recon = 0.0;
                for i in 0..k {
                    let mut zi = 0.0;
                    for jj in 0..m {
                        zi += p.get(i, jj) * side[jj];
                    }
                    recon += p.get(i, j) * zi;
                }
                j2 += 0.5 * (side[j] - recon) * (side[j] - recon);
            }
        }
    }
    let j1 = j1 / n;
    let j2 = j2 / n;
    CostBreakdown {
        j1,
        j2,
        lambda,
        j_total: lambda * j1 + j2,
    }
}

pub fn load_pool(path: impl AsRef<Path>) -> Result<PoolingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let parse = |reason: &str| Error::ModelParse {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 16 {
        return Err(parse("file shorter than header"));
    }
    if bytes[..4] != APPM_MAGIC {
        return Err(parse("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != APPM_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let k = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let m = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if bytes.len() != 16 + k * m * 8 {
        return Err(parse("payload length does not match dimensions"));
    }
    let entries: Vec<f64> = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    PoolingMatrix::new(k, m, entries)
}
