use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use autopool::dataset::{
    self, LabeledImageSet, PatternKind, SynthConfig, TransformKind,
};
use autopool::error::{Error, Result};
use autopool::evaluation::{self, FeatureExtractor};
use autopool::features::{self, ConvLayout, SaeTrainConfig, SparseAutoencoder};
use autopool::pnm;
use autopool::pooling::{self, PoolTrainConfig, PoolingMatrix, SpatialGridSpec};

use crate::formats;
use crate::manifest::ManifestBuilder;
use crate::{pick, pick_required};

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<T>()
                .map_err(|_| Error::ConfigParse(format!("bad {what} entry: {p}")))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// gen-synth

#[derive(Args)]
pub struct GenSynthArgs {
    #[arg(long)]
    pairs: Option<usize>,
    /// Square frame side in pixels.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    /// bar | blob
    #[arg(long)]
    pattern: Option<String>,
    /// translate | rotate | both
    #[arg(long)]
    transform: Option<String>,
    /// Translation magnitude in pixels.
    #[arg(long)]
    mag: Option<f64>,
    /// Rotation magnitude in degrees.
    #[arg(long)]
    rot_deg: Option<f64>,
    #[arg(long)]
    groups: Option<usize>,
    /// Gaussian pixel noise stddev.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

pub fn gen_synth(a: GenSynthArgs, sec: &toml::Table) -> Result<()> {
    let pairs = pick(a.pairs, sec, "pairs", 100)?;
    let size = pick(a.size, sec, "size", 16)?;
    let channels = pick(a.channels, sec, "channels", 1)?;
    let pattern = pick(a.pattern, sec, "pattern", "bar".to_string())?;
    let transform = pick(a.transform, sec, "transform", "translate".to_string())?;
    let mag = pick(a.mag, sec, "mag", 1.0)?;
    let rot_deg = pick(a.rot_deg, sec, "rot-deg", 15.0)?;
    let groups = pick(a.groups, sec, "groups", 2)?;
    let noise = pick(a.noise, sec, "noise", 0.0)?;
    let seed = pick(a.seed, sec, "seed", 0)?;

    let cfg = SynthConfig {
        n_pairs: pairs,
        height: size,
        width: size,
        channels,
        pattern: match pattern.as_str() {
            "bar" => PatternKind::Bar,
            "blob" => PatternKind::Blob,
            other => return Err(Error::ConfigParse(format!("unknown pattern {other}"))),
        },
        transform: match transform.as_str() {
            "translate" => TransformKind::Translate,
            "rotate" => TransformKind::Rotate,
            "both" => TransformKind::Both,
            other => return Err(Error::ConfigParse(format!("unknown transform {other}"))),
        },
        translate_px: mag,
        rotate_deg: rot_deg,
        n_groups: groups,
        noise_std: noise,
        seed,
    };
    let mut mb = ManifestBuilder::new(
        "gen-synth",
        json!({
            "pairs": pairs, "size": size, "channels": channels,
            "pattern": pattern, "transform": transform, "mag": mag,
            "rot_deg": rot_deg, "groups": groups, "noise": noise, "seed": seed,
        }),
    );
    mb.seed(seed);

    let (set, ground_truth) = dataset::generate_synthetic(&cfg)?;
    dataset::save_pairs(&set, &a.out)?;
    let sidecar = with_suffix(&a.out, ".groups.csv");
    let mut csv = String::from("pair,group\n");
    for (i, g) in ground_truth.iter().enumerate() {
        writeln!(csv, "{i},{g}").unwrap();
    }
    write_text(&sidecar, &csv)?;
    mb.output(&a.out).output(&sidecar);
    mb.write()?;
    println!("wrote {} pairs to {}", set.n_pairs(), a.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train-sae

#[derive(Args)]
pub struct TrainSaeArgs {
    /// APPD pair set; every frame becomes a training patch.
    #[arg(long)]
    pairs_in: Option<PathBuf>,
    /// CIFAR-10 directory; random patches are sampled from train batches.
    #[arg(long)]
    cifar_dir: Option<PathBuf>,
    /// Patch side when sampling from images.
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    n_patches: Option<usize>,
    #[arg(long)]
    sample_seed: Option<u64>,
    /// Hidden feature count M.
    #[arg(long)]
    features: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

/// Sample `n` random patch vectors from a labeled image set.
pub fn sample_patches(
    set: &LabeledImageSet,
    patch: usize,
    n: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = ConvLayout::new(set.height, set.width, set.channels, patch, 1)
        .expect("patch fits image");
    let mut out = Vec::with_capacity(n);
    let mut buf = vec![0.0; layout.patch_dim()];
    for _ in 0..n {
        let img = set.image_f64(rng.gen_range(0..set.len()));
        let r = rng.gen_range(0..layout.map_rows());
        let c = rng.gen_range(0..layout.map_cols());
        layout.extract_patch(&img, r, c, &mut buf);
        out.push(buf.clone());
    }
    out
}

pub fn train_sae(a: TrainSaeArgs, sec: &toml::Table) -> Result<()> {
    let features_n = pick_required(a.features, sec, "features")?;
    let cfg = SaeTrainConfig {
        sparsity_target: pick(a.rho, sec, "rho", 0.05)?,
        sparsity_weight: pick(a.beta, sec, "beta", 3.0)?,
        weight_decay: pick(a.alpha, sec, "alpha", 0.003)?,
        learning_rate: pick(a.lr, sec, "lr", 0.5)?,
        epochs: pick(a.epochs, sec, "epochs", 50)?,
        batch_size: pick(a.batch, sec, "batch", 64)?,
        seed: pick(a.seed, sec, "seed", 0)?,
    };
    let patches: Vec<Vec<f64>> = if let Some(pairs_path) = &a.pairs_in {
        let set = dataset::load_pairs(pairs_path)?;
        (0..set.n_pairs())
            .flat_map(|i| {
                let (x, xp) = set.pair_f64(i);
                [x, xp]
            })
            .collect()
    } else if let Some(dir) = &a.cifar_dir {
        let set = dataset::load_cifar10(dir)?;
        let patch = pick(a.patch_size, sec, "patch-size", 6)?;
        let n = pick(a.n_patches, sec, "n-patches", 50_000)?;
        let sample_seed = pick(a.sample_seed, sec, "sample-seed", 0)?;
        sample_patches(&set, patch, n, sample_seed)
    } else {
        return Err(Error::ConfigParse(
            "one of --pairs-in or --cifar-dir is required".into(),
        ));
    };

    let mut mb = ManifestBuilder::new(
        "train-sae",
        json!({
            "features": features_n, "rho": cfg.sparsity_target,
            "beta": cfg.sparsity_weight, "alpha": cfg.weight_decay,
            "lr": cfg.learning_rate, "epochs": cfg.epochs,
            "batch": cfg.batch_size, "seed": cfg.seed,
            "n_patches": patches.len(),
        }),
    );
    mb.seed(cfg.seed);
    if let Some(p) = &a.pairs_in {
        mb.input(p);
    }
    if let Some(p) = &a.cifar_dir {
        mb.input(p);
    }

    let (sae, curve) = features::train_sae(&patches, features_n, &cfg)?;
    features::save_sae(&sae, &a.out)?;
    let loss_path = with_suffix(&a.out, ".loss.csv");
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in curve.iter().enumerate() {
        writeln!(csv, "{i},{l}").unwrap();
    }
    write_text(&loss_path, &csv)?;
    mb.output(&a.out).output(&loss_path);
    mb.write()?;
    println!(
        "trained SAE D={} M={}, final loss {:.6}",
        sae.input_dim(),
        sae.hidden_dim(),
        curve.last().unwrap()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// extract

#[derive(Args)]
pub struct ExtractArgs {
    #[arg(long)]
    sae: PathBuf,
    /// APPD pair set -> APFP feature pairs.
    #[arg(long)]
    pairs_in: Option<PathBuf>,
    /// CIFAR-10 directory (train batches) -> APLF labeled features.
    #[arg(long)]
    cifar_dir: Option<PathBuf>,
    /// Explicit CIFAR batch files (e.g. the test batch).
    #[arg(long, value_delimiter = ',')]
    cifar_files: Option<Vec<PathBuf>>,
    /// Force convolutional extraction even when the SAE input matches the
    /// whole frame.
    #[arg(long, default_value_t = false)]
    conv: bool,
    /// Pool extracted features with this APPM model.
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Pool with the fixed spatial grids instead (e.g. "2,3").
    #[arg(long)]
    grids: Option<String>,
    /// Subsample this many examples per class before extraction.
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    subsample_seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

enum Pooler {
    None,
    Matrix(PoolingMatrix),
    Spatial(SpatialGridSpec),
}

fn conv_layout_for(
    sae: &SparseAutoencoder,
    height: usize,
    width: usize,
    channels: usize,
) -> Result<ConvLayout> {
    let per_channel = sae.input_dim() / channels;
    let patch = (per_channel as f64).sqrt().round() as usize;
    if patch * patch * channels != sae.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: patch * patch * channels,
            got: sae.input_dim(),
        });
    }
    ConvLayout::new(height, width, channels, patch, sae.hidden_dim())
}

fn extract_frame(
    sae: &SparseAutoencoder,
    layout: Option<&ConvLayout>,
    frame: &[f64],
) -> Result<Vec<f64>> {
    match layout {
        Some(l) => features::conv_extract(sae, frame, l),
        None => sae.encode(frame),
    }
}

fn apply_pooler(pooler: &Pooler, layout: Option<&ConvLayout>, y: Vec<f64>) -> Result<Vec<f64>> {
    match pooler {
        Pooler::None => Ok(y),
        Pooler::Matrix(p) => pooling::pool(p, &y),
        Pooler::Spatial(grids) => {
            let l = layout.ok_or_else(|| {
                Error::InvalidConfig("spatial grids require convolutional extraction".into())
            })?;
            pooling::spatial_pool(&y, l, grids)
        }
    }
}

pub fn extract(a: ExtractArgs, sec: &toml::Table) -> Result<()> {
    let sae = features::load_sae(&a.sae)?;
    let grids = match pick(a.grids.clone(), sec, "grids", String::new())? {
        s if s.is_empty() => None,
        s => Some(SpatialGridSpec::new(parse_list(&s, "grid")?)?),
    };
    let pooler = if let Some(p) = &a.pool {
        Pooler::Matrix(pooling::load_pool(p)?)
    } else if let Some(g) = grids {
        Pooler::Spatial(g)
    } else {
        Pooler::None
    };

    let mut mb = ManifestBuilder::new(
        "extract",
        json!({
            "sae": a.sae.display().to_string(),
            "conv": a.conv,
            "pool": a.pool.as_ref().map(|p| p.display().to_string()),
            "grids": a.grids,
            "per_class": a.per_class,
        }),
    );
    mb.input(&a.sae);

    if let Some(pairs_path) = &a.pairs_in {
        let set = dataset::load_pairs(pairs_path)?;
        mb.input(pairs_path);
        let layout = if a.conv || sae.input_dim() != set.frame_len() {
            Some(conv_layout_for(&sae, set.height(), set.width(), set.channels())?)
        } else {
            None
        };
        let out_pairs = autopool::parallel::map_indices(set.n_pairs(), |i| -> Result<_> {
            let (x, xp) = set.pair_f64(i);
            let y = apply_pooler(&pooler, layout.as_ref(), extract_frame(&sae, layout.as_ref(), &x)?)?;
            let yp =
                apply_pooler(&pooler, layout.as_ref(), extract_frame(&sae, layout.as_ref(), &xp)?)?;
            Ok((y, yp))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        formats::save_feature_pairs(&out_pairs, &a.out)?;
        println!(
            "extracted {} feature pairs of dim {}",
            out_pairs.len(),
            out_pairs.first().map(|(y, _)| y.len()).unwrap_or(0)
        );
    } else {
        let set = if let Some(dir) = &a.cifar_dir {
            mb.input(dir);
            dataset::load_cifar10(dir)?
        } else if let Some(files) = &a.cifar_files {
            for f in files {
                mb.input(f);
            }
            dataset::load_cifar10_files(files)?
        } else {
            return Err(Error::ConfigParse(
                "one of --pairs-in, --cifar-dir, --cifar-files is required".into(),
            ));
        };
        let set = match a.per_class {
            Some(k) => {
                let seed = pick(a.subsample_seed, sec, "subsample-seed", 0)?;
                mb.seed(seed);
                dataset::subsample_per_class(&set, k, seed)?
            }
            None => set,
        };
        let layout = if a.conv || sae.input_dim() != set.height * set.width * set.channels {
            Some(conv_layout_for(&sae, set.height, set.width, set.channels)?)
        } else {
            None
        };
        let features_out = autopool::parallel::map_indices(set.len(), |i| -> Result<Vec<f64>> {
            let img = set.image_f64(i);
            apply_pooler(&pooler, layout.as_ref(), extract_frame(&sae, layout.as_ref(), &img)?)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        formats::save_labeled_features(&features_out, set.labels(), set.n_classes, &a.out)?;
        println!(
            "extracted {} labeled feature vectors of dim {}",
            features_out.len(),
            features_out.first().map(|f| f.len()).unwrap_or(0)
        );
    }
    mb.output(&a.out);
    mb.write()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// train-pool

#[derive(Args)]
pub struct TrainPoolArgs {
    /// APFP feature pairs.
    #[arg(long)]
    pairs_in: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn pool_cfg_from(a: &TrainPoolArgs, sec: &toml::Table) -> Result<PoolTrainConfig> {
    Ok(PoolTrainConfig {
        lambda: pick(a.lambda, sec, "lambda", 1.0)?,
        learning_rate: pick(a.lr, sec, "lr", 0.05)?,
        epochs: pick(a.epochs, sec, "epochs", 100)?,
        batch_size: pick(a.batch, sec, "batch", 32)?,
        init_scale: match pick(a.init_scale, sec, "init-scale", -1.0)? {
            v if v <= 0.0 => None,
            v => Some(v),
        },
        seed: pick(a.seed, sec, "seed", 0)?,
        tolerance: pick(a.tol, sec, "tol", 1e-8)?,
    })
}

pub fn train_pool(a: TrainPoolArgs, sec: &toml::Table) -> Result<()> {
    let k = pick_required(a.k, sec, "k")?;
    let cfg = pool_cfg_from(&a, sec)?;
    let pairs = formats::load_feature_pairs(&a.pairs_in)?;
    let mut mb = ManifestBuilder::new(
        "train-pool",
        json!({
            "k": k, "lambda": cfg.lambda, "lr": cfg.learning_rate,
            "epochs": cfg.epochs, "batch": cfg.batch_size,
            "init_scale": cfg.init_scale, "seed": cfg.seed, "tol": cfg.tolerance,
        }),
    );
    mb.seed(cfg.seed).input(&a.pairs_in);

    let (p, curve) = pooling::train_autopool(&pairs, k, &cfg)?;
    pooling::save_pool(&p, &a.out)?;
    let loss_path = with_suffix(&a.out, ".loss.csv");
    let mut csv = String::from("epoch,j_total\n");
    for (i, l) in curve.iter().enumerate() {
        writeln!(csv, "{i},{l}").unwrap();
    }
    write_text(&loss_path, &csv)?;
    mb.output(&a.out).output(&loss_path);
    mb.write()?;
    println!(
        "trained pooling matrix K={} M={}, J {:.6} -> {:.6}",
        p.k_clusters(),
        p.feature_dim(),
        curve[0],
        curve.last().unwrap()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// spool

#[derive(Args)]
pub struct SpoolArgs {
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    patch_size: Option<usize>,
    /// Number of local features (feature maps).
    #[arg(long)]
    features: Option<usize>,
    /// Comma-separated grid sides, e.g. "2,3".
    #[arg(long)]
    grids: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

pub fn spool(a: SpoolArgs, sec: &toml::Table) -> Result<()> {
    let image_size = pick(a.image_size, sec, "image-size", 32)?;
    let channels = pick(a.channels, sec, "channels", 3)?;
    let patch_size = pick(a.patch_size, sec, "patch-size", 6)?;
    let features_n = pick_required(a.features, sec, "features")?;
    let grids_s = pick(a.grids, sec, "grids", "2".to_string())?;
    let grids = SpatialGridSpec::new(parse_list(&grids_s, "grid")?)?;
    let layout = ConvLayout::new(image_size, image_size, channels, patch_size, features_n)?;

    let mut mb = ManifestBuilder::new(
        "spool",
        json!({
            "image_size": image_size, "channels": channels,
            "patch_size": patch_size, "features": features_n, "grids": grids_s,
        }),
    );
    let p = pooling::spatial_pool_matrix(&layout, &grids)?;
    pooling::save_pool(&p, &a.out)?;
    mb.output(&a.out);
    mb.write()?;
    println!(
        "spatial pooling matrix K={} M={} written",
        p.k_clusters(),
        p.feature_dim()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// score

#[derive(Args)]
pub struct ScoreArgs {
    /// APFP feature pairs.
    #[arg(long)]
    pairs_in: PathBuf,
    /// Optional APPM pooling model; when given, pooled features are scored too.
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long)]
    perm_seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

pub fn score(a: ScoreArgs, sec: &toml::Table) -> Result<()> {
    let perm_seed = pick(a.perm_seed, sec, "perm-seed", 0)?;
    let pairs = formats::load_feature_pairs(&a.pairs_in)?;
    let mut mb = ManifestBuilder::new(
        "score",
        json!({ "perm_seed": perm_seed, "pool": a.pool.as_ref().map(|p| p.display().to_string()) }),
    );
    mb.seed(perm_seed).input(&a.pairs_in);

    let mut csv = String::from("kind,g_mean,h_mean,f_score,permutation_seed\n");
    let raw = evaluation::invariance_score(&pairs, perm_seed)?;
    writeln!(
        csv,
        "raw,{},{},{},{}",
        raw.g_mean, raw.h_mean, raw.f_score, raw.permutation_seed
    )
    .unwrap();
    println!("raw:    G={:.6} H={:.6} F={:.6}", raw.g_mean, raw.h_mean, raw.f_score);
    if let Some(pool_path) = &a.pool {
        mb.input(pool_path);
        let p = pooling::load_pool(pool_path)?;
        let pooled: Vec<(Vec<f64>, Vec<f64>)> = pairs
            .iter()
            .map(|(y, yp)| Ok((pooling::pool(&p, y)?, pooling::pool(&p, yp)?)))
            .collect::<Result<_>>()?;
        let rep = evaluation::invariance_score(&pooled, perm_seed)?;
        writeln!(
            csv,
            "pooled,{},{},{},{}",
            rep.g_mean, rep.h_mean, rep.f_score, rep.permutation_seed
        )
        .unwrap();
        println!(
            "pooled: G={:.6} H={:.6} F={:.6}",
            rep.g_mean, rep.h_mean, rep.f_score
        );
    }
    write_text(&a.out, &csv)?;
    mb.output(&a.out);
    mb.write()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Args)]
pub struct SweepArgs {
    /// APPD image pairs (features are extracted per lambda run).
    #[arg(long)]
    pairs_in: PathBuf,
    #[arg(long)]
    sae: PathBuf,
    #[arg(long, default_value_t = false)]
    conv: bool,
    #[arg(long)]
    k: Option<usize>,
    /// Comma-separated ascending lambda values.
    #[arg(long)]
    lambdas: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

pub fn sweep(a: SweepArgs, sec: &toml::Table) -> Result<()> {
    let k = pick_required(a.k, sec, "k")?;
    let lambdas_s = pick(a.lambdas.clone(), sec, "lambdas", "0.1,1,10".to_string())?;
    let lambdas: Vec<f64> = parse_list(&lambdas_s, "lambda")?;
    let cfg = PoolTrainConfig {
        lambda: 0.0,
        learning_rate: pick(a.lr, sec, "lr", 0.05)?,
        epochs: pick(a.epochs, sec, "epochs", 100)?,
        batch_size: pick(a.batch, sec, "batch", 32)?,
        init_scale: match pick(a.init_scale, sec, "init-scale", -1.0)? {
            v if v <= 0.0 => None,
            v => Some(v),
        },
        seed: pick(a.seed, sec, "seed", 0)?,
        tolerance: 1e-8,
    };

    let set = dataset::load_pairs(&a.pairs_in)?;
    let sae = features::load_sae(&a.sae)?;
    let layout = if a.conv || sae.input_dim() != set.frame_len() {
        Some(conv_layout_for(&sae, set.height(), set.width(), set.channels())?)
    } else {
        None
    };
    let extractor = |frame: &[f64]| extract_frame(&sae, layout.as_ref(), frame);

    let mut mb = ManifestBuilder::new(
        "sweep",
        json!({
            "k": k, "lambdas": lambdas_s, "lr": cfg.learning_rate,
            "epochs": cfg.epochs, "batch": cfg.batch_size, "seed": cfg.seed,
            "score_split": "held-out tail",
        }),
    );
    mb.seed(cfg.seed).input(&a.pairs_in).input(&a.sae);

    let result = evaluation::lambda_sweep(&set, &extractor as &dyn FeatureExtractor, k, &lambdas, &cfg)?;
    let mut csv = String::from("lambda,f_raw,f_pooled\n");
    for row in &result.rows {
        writeln!(csv, "{},{},{}", row.lambda, row.f_raw, row.f_pooled).unwrap();
        println!(
            "lambda {:>8}: F_raw={:.4} F_pooled={:.4}",
            row.lambda, row.f_raw, row.f_pooled
        );
    }
    write_text(&a.out, &csv)?;
    mb.output(&a.out);
    mb.write()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// train-clf / eval

#[derive(Args)]
pub struct TrainClfArgs {
    /// APLF labeled features.
    #[arg(long)]
    features_in: PathBuf,
    #[arg(long)]
    reg: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

pub fn train_clf(a: TrainClfArgs, sec: &toml::Table) -> Result<()> {
    let reg = pick(a.reg, sec, "reg", 1e-4)?;
    let epochs = pick(a.epochs, sec, "epochs", 50)?;
    let seed = pick(a.seed, sec, "seed", 0)?;
    let (features_v, labels, _n_classes) = formats::load_labeled_features(&a.features_in)?;
    let mut mb = ManifestBuilder::new(
        "train-clf",
        json!({ "reg": reg, "epochs": epochs, "seed": seed }),
    );
    mb.seed(seed).input(&a.features_in);

    let (clf, curve) = evaluation::train_classifier(&features_v, &labels, reg, epochs, seed)?;
    formats::save_classifier(&clf, &a.out)?;
    let loss_path = with_suffix(&a.out, ".loss.csv");
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in curve.iter().enumerate() {
        writeln!(csv, "{i},{l}").unwrap();
    }
    write_text(&loss_path, &csv)?;
    mb.output(&a.out).output(&loss_path);
    mb.write()?;
    println!(
        "trained classifier: {} classes, dim {}, final loss {:.6}",
        clf.n_classes,
        clf.feature_dim,
        curve.last().unwrap()
    );
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    clf: PathBuf,
    #[arg(long)]
    features_in: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

pub fn eval(a: EvalArgs, _sec: &toml::Table) -> Result<()> {
    let clf = formats::load_classifier(&a.clf)?;
    let (features_v, labels, _) = formats::load_labeled_features(&a.features_in)?;
    let mut mb = ManifestBuilder::new("eval", json!({}));
    mb.input(&a.clf).input(&a.features_in);
    let acc = evaluation::evaluate_classifier(&clf, &features_v, &labels)?;
    write_text(&a.out, &format!("accuracy\n{acc}\n"))?;
    mb.output(&a.out);
    mb.write()?;
    println!("accuracy: {:.4}", acc);
    Ok(())
}

// ---------------------------------------------------------------------------
// viz

#[derive(Args)]
pub struct VizArgs {
    #[arg(long)]
    pool: PathBuf,
    /// SAE whose features the pooling matrix clusters (for feature tiles).
    #[arg(long)]
    sae: Option<PathBuf>,
    /// Threshold for cluster membership (feature-tile mode).
    #[arg(long, allow_hyphen_values = true)]
    eps: Option<f64>,
    /// Feature maps per cluster in convolutional mode.
    #[arg(long)]
    top: Option<usize>,
    /// Convolutional mode: interpret features as duplicated maps.
    #[arg(long, default_value_t = false)]
    conv: bool,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    /// Render at most this many clusters.
    #[arg(long)]
    max_clusters: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

pub fn viz(a: VizArgs, sec: &toml::Table) -> Result<()> {
    let eps = pick(a.eps, sec, "eps", 0.1)?;
    if eps < 0.0 {
        return Err(Error::BadThreshold(eps));
    }
    let top = pick(a.top, sec, "top", 15)?;
    let max_clusters = pick(a.max_clusters, sec, "max-clusters", 32)?;
    let p = pooling::load_pool(&a.pool)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;

    let mut mb = ManifestBuilder::new(
        "viz",
        json!({ "eps": eps, "top": top, "conv": a.conv, "max_clusters": max_clusters }),
    );
    mb.input(&a.pool);
    let sae = a.sae.as_ref().map(features::load_sae).transpose()?;
    if let Some(s) = &a.sae {
        mb.input(s);
    }

    // Always emitted, so the run manifest has an anchor artifact even when
    // no cluster clears the threshold.
    let summary_path = a.out_dir.join("clusters.csv");
    let mut summary = String::from("cluster,members\n");
    for i in 0..p.k_clusters() {
        let n = p.row(i).iter().filter(|&&v| v > eps).count();
        writeln!(summary, "{i},{n}").unwrap();
    }
    write_text(&summary_path, &summary)?;
    mb.output(&summary_path);

    if a.conv {
        let sae = sae.as_ref().ok_or_else(|| {
            Error::InvalidConfig("convolutional viz requires --sae for local feature tiles".into())
        })?;
        let image_size = pick(a.image_size, sec, "image-size", 32)?;
        let channels = pick(a.channels, sec, "channels", 3)?;
        let layout = conv_layout_for(sae, image_size, image_size, channels)?;
        if layout.total_dim() != p.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: p.feature_dim(),
                got: layout.total_dim(),
            });
        }
        let ranked = pooling::top_maps_by_pool_area(&p, &layout, top)?;
        for (i, maps) in ranked.iter().enumerate().take(max_clusters) {
            let row = p.row(i);
            let row_max = row.iter().copied().fold(0.0, f64::max);
            let heat_tiles: Vec<Vec<u8>> = maps
                .iter()
                .map(|&k| pnm::heatmap_tile(&row[layout.map_range(k)], row_max))
                .collect();
            let img = pnm::montage(&heat_tiles, layout.map_cols(), layout.map_rows(), 5)?;
            let heat_path = a.out_dir.join(format!("cluster_{i:04}_regions.pgm"));
            img.write(&heat_path)?;
            mb.output(&heat_path);

            let feat_tiles: Vec<Vec<u8>> = maps
                .iter()
                .map(|&k| pnm::normalize_tile(&gray_feature_tile(sae, k, channels)))
                .collect();
            let fimg = pnm::montage(&feat_tiles, layout.patch, layout.patch, 5)?;
            let feat_path = a.out_dir.join(format!("cluster_{i:04}_features.pgm"));
            fimg.write(&feat_path)?;
            mb.output(&feat_path);
        }
    } else {
        let sae = sae.as_ref().ok_or_else(|| {
            Error::InvalidConfig("feature-tile viz requires --sae".into())
        })?;
        let channels = pick(a.channels, sec, "channels", 1)?;
        let side = ((sae.input_dim() / channels) as f64).sqrt().round() as usize;
        if side * side * channels != sae.input_dim() {
            return Err(Error::InvalidConfig(
                "SAE input is not a square image; cannot tile features".into(),
            ));
        }
        let clusters = pooling::clusters_above_threshold(&p, eps);
        for (i, members) in clusters.iter().enumerate().take(max_clusters) {
            if members.is_empty() {
                continue;
            }
            let tiles: Vec<Vec<u8>> = members
                .iter()
                .map(|&j| pnm::normalize_tile(&gray_feature_tile(sae, j, channels)))
                .collect();
            let img = pnm::montage(&tiles, side, side, 10)?;
            let path = a.out_dir.join(format!("cluster_{i:04}.pgm"));
            img.write(&path)?;
            mb.output(&path);
        }
    }
    mb.write()?;
    println!("wrote cluster images to {}", a.out_dir.display());
    Ok(())
}

/// Decoder column of feature `j`, averaged over channels for display.
fn gray_feature_tile(sae: &SparseAutoencoder, j: usize, channels: usize) -> Vec<f64> {
    let img = sae.feature_image(j);
    if channels == 1 {
        return img;
    }
    img.chunks_exact(channels)
        .map(|px| px.iter().sum::<f64>() / channels as f64)
        .collect()
}
