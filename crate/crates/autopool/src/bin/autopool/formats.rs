//! Intermediate pipeline files: feature pairs (APFP), labeled feature sets
//! (APLF), and linear classifier models (APLC). All little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use autopool::error::{Error, Result};
use autopool::evaluation::LinearClassifier;

fn parse_err(path: &Path, reason: &str) -> Error {
    Error::ModelParse {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn read_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

/// APFP: magic, u32 version=1, u32 N, u32 M, then N×2×M f64 (y then y').
pub fn save_feature_pairs(pairs: &[(Vec<f64>, Vec<f64>)], path: &Path) -> Result<()> {
    let m = pairs.first().map(|(a, _)| a.len()).unwrap_or(0);
    let mut out = Vec::with_capacity(16 + pairs.len() * 2 * m * 8);
    out.extend_from_slice(b"APFP");
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(pairs.len() as u32).to_le_bytes());
    out.extend_from_slice(&(m as u32).to_le_bytes());
    for (a, b) in pairs {
        for v in a.iter().chain(b) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_feature_pairs(path: &Path) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != b"APFP" {
        return Err(parse_err(path, "bad magic or short header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != 1 {
        return Err(Error::UnsupportedVersion(version));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let m = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if bytes.len() != 16 + n * 2 * m * 8 {
        return Err(parse_err(path, "payload length does not match header"));
    }
    let vals = read_f64s(&bytes[16..]);
    Ok((0..n)
        .map(|i| {
            let base = i * 2 * m;
            (
                vals[base..base + m].to_vec(),
                vals[base + m..base + 2 * m].to_vec(),
            )
        })
        .collect())
}

/// APLF: magic, u32 version=1, u32 N, u32 D, u32 n_classes, N u32 labels,
/// then N×D f64 features.
pub fn save_labeled_features(
    features: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    path: &Path,
) -> Result<()> {
    let d = features.first().map(|f| f.len()).unwrap_or(0);
    let mut out = Vec::new();
    out.extend_from_slice(b"APLF");
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(features.len() as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(n_classes as u32).to_le_bytes());
    for &l in labels {
        out.extend_from_slice(&(l as u32).to_le_bytes());
    }
    for f in features {
        for v in f {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_labeled_features(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<usize>, usize)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..4] != b"APLF" {
        return Err(parse_err(path, "bad magic or short header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != 1 {
        return Err(Error::UnsupportedVersion(version));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let n_classes = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    if bytes.len() != 20 + n * 4 + n * d * 8 {
        return Err(parse_err(path, "payload length does not match header"));
    }
    let labels: Vec<usize> = bytes[20..20 + n * 4]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let vals = read_f64s(&bytes[20 + n * 4..]);
    let features = (0..n).map(|i| vals[i * d..(i + 1) * d].to_vec()).collect();
    Ok((features, labels, n_classes))
}

/// APLC: magic, u32 version=1, u32 n_classes, u32 D, weights row-major, bias.
pub fn save_classifier(clf: &LinearClassifier, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(b"APLC");
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(clf.n_classes as u32).to_le_bytes());
    out.extend_from_slice(&(clf.feature_dim as u32).to_le_bytes());
    for v in clf.weights.iter().chain(&clf.bias) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_classifier(path: &Path) -> Result<LinearClassifier> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != b"APLC" {
        return Err(parse_err(path, "bad magic or short header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != 1 {
        return Err(Error::UnsupportedVersion(version));
    }
    let n_classes = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if bytes.len() != 16 + (n_classes * d + n_classes) * 8 {
        return Err(parse_err(path, "payload length does not match header"));
    }
    let vals = read_f64s(&bytes[16..]);
    Ok(LinearClassifier {
        n_classes,
        feature_dim: d,
        weights: vals[..n_classes * d].to_vec(),
        bias: vals[n_classes * d..].to_vec(),
    })
}
