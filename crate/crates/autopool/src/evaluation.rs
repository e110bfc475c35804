//! Invariance scoring, λ sweeps, and the downstream linear classifier.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::PatchPairSet;
use crate::error::{Error, Result};
use crate::linalg;
use crate::parallel;
use crate::pooling::{self, PoolTrainConfig};

const DEGENERATE_TOL: f64 = 1e-12;

/// G = mean within-pair distance, H = mean shuffled-pair distance, F = H/G.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvarianceReport {
    pub g_mean: f64,
    pub h_mean: f64,
    /// H/G; `f64::INFINITY` when G is degenerate but H is not (perfectly
    /// invariant yet still discriminative features).
    pub f_score: f64,
    pub permutation_seed: u64,
}

/// Draw a seeded uniform permutation of 0..n, resampled until it has no
/// fixed point (after 100 tries, fall back to a rotation).
pub fn fixed_point_free_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sigma: Vec<usize> = (0..n).collect();
    for _ in 0..100 {
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            sigma.swap(i, j);
        }
        if sigma.iter().enumerate().all(|(i, &s)| i != s) {
            return sigma;
        }
    }
    (0..n).map(|i| (i + 1) % n).collect()
}

/// Invariance score over paired feature outputs (g(x_n), g(x'_n)).
pub fn invariance_score(
    outputs: &[(Vec<f64>, Vec<f64>)],
    permutation_seed: u64,
) -> Result<InvarianceReport> {
    let n = outputs.len();
    if n < 2 {
        return Err(Error::TooFewPairs(n));
    }
    let dim = outputs[0].0.len();
    for (a, b) in outputs {
        if a.len() != dim || b.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: if a.len() != dim { a.len() } else { b.len() },
            });
        }
    }
    let sigma = fixed_point_free_permutation(n, permutation_seed);
    debug_assert!(is_fixed_point_free_bijection(&sigma));

    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut g = 0.0;
    let mut h = 0.0;
    for (i, (a, b)) in outputs.iter().enumerate() {
        g += dist(a, b);
        h += dist(a, &outputs[sigma[i]].1);
    }
    let g_mean = g / n as f64;
    let h_mean = h / n as f64;
    let f_score = if g_mean < DEGENERATE_TOL {
        if h_mean < DEGENERATE_TOL {
            return Err(Error::Undefined);
        }
        f64::INFINITY
    } else {
        h_mean / g_mean
    };
    Ok(InvarianceReport {
        g_mean,
        h_mean,
        f_score,
        permutation_seed,
    })
}

fn is_fixed_point_free_bijection(sigma: &[usize]) -> bool {
    let mut seen = vec![false; sigma.len()];
    for (i, &s) in sigma.iter().enumerate() {
        if s == i || s >= sigma.len() || seen[s] {
            return false;
        }
        seen[s] = true;
    }
    true
}

/// Anything that maps a frame to a non-negative feature vector.
pub trait FeatureExtractor: Sync {
    fn extract(&self, frame: &[f64]) -> Result<Vec<f64>>;
}

impl<F> FeatureExtractor for F
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    fn extract(&self, frame: &[f64]) -> Result<Vec<f64>> {
        self(frame)
    }
}

/// One row per λ: raw-feature F and pooled-feature F on held-out pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// fraction of pairs held out for scoring (the tail of the set)
    pub holdout_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub f_raw: f64,
    pub f_pooled: f64,
}

/// Train one pooling model per λ (fresh seeded init each time) and score raw
/// and pooled features on a held-out tail split of the pairs.
pub fn lambda_sweep(
    pairs: &PatchPairSet,
    extractor: &dyn FeatureExtractor,
    k_clusters: usize,
    lambdas: &[f64],
    base: &PoolTrainConfig,
) -> Result<SweepResult> {
    if lambdas.is_empty() {
        return Err(Error::InvalidConfig("lambda list is empty".into()));
    }
    if lambdas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("lambda list must be strictly ascending".into()));
    }
    let n = pairs.n_pairs();
    if n < 4 {
        return Err(Error::TooFewPairs(n));
    }
    let features: Vec<(Vec<f64>, Vec<f64>)> = {
        let per_pair = parallel::map_indices(n, |i| -> Result<(Vec<f64>, Vec<f64>)> {
            let (a, b) = pairs.pair_f64(i);
            Ok((extractor.extract(&a)?, extractor.extract(&b)?))
        });
        per_pair.into_iter().collect::<Result<_>>()?
    };

    const HOLDOUT_FRACTION: f64 = 0.25;
    let n_holdout = ((n as f64 * HOLDOUT_FRACTION) as usize).max(2);
    let split = n - n_holdout;
    let (train, holdout) = features.split_at(split);

    let raw = invariance_score(holdout, base.seed)?;
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let cfg = PoolTrainConfig {
            lambda,
            ..base.clone()
        };
        let (p, _) = pooling::train_autopool(train, k_clusters, &cfg)?;
        let pooled: Vec<(Vec<f64>, Vec<f64>)> = holdout
            .iter()
            .map(|(a, b)| Ok((pooling::pool(&p, a)?, pooling::pool(&p, b)?)))
            .collect::<Result<_>>()?;
        let pooled_score = match invariance_score(&pooled, base.seed) {
            Ok(r) => r.f_score,
            // an over-invariant (constant) pooled output scores zero rather
            // than aborting the sweep
            Err(Error::Undefined) => 0.0,
            Err(e) => return Err(e),
        };
        rows.push(SweepRow {
            lambda,
            f_raw: raw.f_score,
            f_pooled: pooled_score,
        });
    }
    Ok(SweepResult {
        rows,
        holdout_fraction: HOLDOUT_FRACTION,
    })
}

/// One-vs-rest linear classifier trained with L2-regularized hinge loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub n_classes: usize,
    pub feature_dim: usize,
    /// n_classes × feature_dim row-major
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearClassifier {
    pub fn zeros(n_classes: usize, feature_dim: usize) -> Self {
        Self {
            n_classes,
            feature_dim,
            weights: vec![0.0; n_classes * feature_dim],
            bias: vec![0.0; n_classes],
        }
    }

    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                got: x.len(),
            });
        }
        let mut s = self.bias.clone();
        for (si, row) in s.iter_mut().zip(self.weights.chunks_exact(self.feature_dim)) {
            *si += linalg::dot(row, x);
        }
        Ok(s)
    }

    /// Argmax over class scores, ties to the lowest class index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let s = self.scores(x)?;
        let mut best = 0;
        for (c, &v) in s.iter().enumerate() {
            if v > s[best] {
                best = c;
            }
        }
        Ok(best)
    }
}

/// Full-batch mean OvR hinge objective plus (reg/2)·‖W‖².
pub fn classifier_loss(
    clf: &LinearClassifier,
    features: &[Vec<f64>],
    labels: &[usize],
    reg: f64,
) -> f64 {
    let n = features.len() as f64;
    let mut loss = 0.0;
    for (x, &label) in features.iter().zip(labels) {
        let s = clf.scores(x).expect("dims checked by caller");
        for (c, &sc) in s.iter().enumerate() {
            let target = if c == label { 1.0 } else { -1.0 };
            loss += (1.0 - target * sc).max(0.0);
        }
    }
    loss / n + 0.5 * reg * linalg::norm_sq(&clf.weights)
}

/// Train by mini-batch subgradient descent on the OvR hinge objective.
/// Epochs with a full-batch objective increase beyond 1e-6 are rolled back
/// with the rate halved, so the recorded curve is non-increasing within
/// tolerance. Returns the model and the per-epoch loss curve.
pub fn train_classifier(
    features: &[Vec<f64>],
    labels: &[usize],
    reg: f64,
    epochs: usize,
    seed: u64,
) -> Result<(LinearClassifier, Vec<f64>)> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            got: labels.len(),
        });
    }
    let n_classes = labels.iter().max().unwrap() + 1;
    let distinct = {
        let mut present = vec![false; n_classes];
        for &l in labels {
            present[l] = true;
        }
        present.iter().filter(|&&p| p).count()
    };
    if distinct < 2 {
        return Err(Error::SingleClass);
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: features.iter().find(|f| f.len() != dim).unwrap().len(),
        });
    }

    let mut clf = LinearClassifier::zeros(n_classes, dim);
    let mut curve = vec![classifier_loss(&clf, features, labels, reg)];
    let mut lr = 0.1;
    let batch_size = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..features.len()).collect();

    for epoch in 0..epochs {
        let snapshot = (clf.weights.clone(), clf.bias.clone());
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut accepted = false;
        for _attempt in 0..24 {
            for batch in order.chunks(batch_size) {
                let bf = batch.len() as f64;
                let mut g_w = vec![0.0; clf.weights.len()];
                let mut g_b = vec![0.0; n_classes];
                for &i in batch {
                    let x = &features[i];
                    let s = clf.scores(x)?;
                    for c in 0..n_classes {
                        let target = if c == labels[i] { 1.0 } else { -1.0 };
                        if 1.0 - target * s[c] > 0.0 {
                            linalg::axpy(-target / bf, x, &mut g_w[c * dim..(c + 1) * dim]);
                            g_b[c] -= target / bf;
                        }
                    }
                }
                linalg::axpy(reg, &clf.weights, &mut g_w);
                linalg::axpy(-lr, &g_w, &mut clf.weights);
                linalg::axpy(-lr, &g_b, &mut clf.bias);
            }
            let loss = classifier_loss(&clf, features, labels, reg);
            if loss.is_nan() {
                return Err(Error::DivergedLoss { epoch });
            }
            let prev = *curve.last().unwrap();
            if loss <= prev + 1e-6 {
                curve.push(loss);
                accepted = true;
                break;
            }
            clf.weights.copy_from_slice(&snapshot.0);
            clf.bias.copy_from_slice(&snapshot.1);
            lr *= 0.5;
        }
        if !accepted {
            curve.push(*curve.last().unwrap());
        }
    }
    Ok((clf, curve))
}

/// Fraction of correct predictions.
pub fn evaluate_classifier(
    clf: &LinearClassifier,
    features: &[Vec<f64>],
    labels: &[usize],
) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::EmptySet);
    }
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            got: labels.len(),
        });
    }
    let hits = parallel::map_chunks(
        &features.iter().zip(labels).collect::<Vec<_>>(),
        64,
        |chunk| -> Result<usize> {
            let mut correct = 0;
            for (x, &l) in chunk {
                if clf.predict(x)? == l {
                    correct += 1;
                }
            }
            Ok(correct)
        },
    );
    let mut correct = 0;
    for h in hits {
        correct += h?;
    }
    Ok(correct as f64 / features.len() as f64)
}
