//! Helpers shared by the integration tests.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Ten well-separated RGB colors, one per class.
pub const PALETTE: [[f64; 3]; 10] = [
    [0.9, 0.1, 0.1],
    [0.1, 0.9, 0.1],
    [0.1, 0.1, 0.9],
    [0.9, 0.9, 0.1],
    [0.9, 0.1, 0.9],
    [0.1, 0.9, 0.9],
    [0.8, 0.5, 0.2],
    [0.3, 0.3, 0.3],
    [0.6, 0.8, 0.4],
    [0.9, 0.6, 0.7],
];

/// One 32x32x3 image whose dominant color encodes its class, with per-image
/// brightness jitter, a randomly placed dark square, and pixel noise.
/// Channel-planar layout (R plane, G plane, B plane), as CIFAR stores it.
pub fn class_image(label: usize, rng: &mut ChaCha8Rng) -> [Vec<u8>; 3] {
    let base = PALETTE[label];
    let gain = rng.gen_range(0.7..1.0);
    let sq_r = rng.gen_range(0..24usize);
    let sq_c = rng.gen_range(0..24usize);
    let mut planes = [vec![0u8; 1024], vec![0u8; 1024], vec![0u8; 1024]];
    for r in 0..32 {
        for c in 0..32 {
            let dark = r >= sq_r && r < sq_r + 8 && c >= sq_c && c < sq_c + 8;
            for (ch, plane) in planes.iter_mut().enumerate() {
                let mut v = base[ch] * gain;
                if dark {
                    v *= 0.3;
                }
                v += rng.gen_range(-0.05..0.05);
                plane[r * 32 + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    planes
}

/// Write one CIFAR-format batch file with `n` images cycling through the ten
/// classes.
pub fn write_batch(path: &Path, n: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = std::fs::File::create(path).unwrap();
    for i in 0..n {
        let label = i % 10;
        let planes = class_image(label, &mut rng);
        f.write_all(&[label as u8]).unwrap();
        for p in &planes {
            f.write_all(p).unwrap();
        }
    }
}

/// Write the five train batches plus the test batch into `dir`.
pub fn write_cifar_dir(dir: &Path, per_batch: usize, test_n: usize, seed: u64) {
    for b in 1..=5 {
        write_batch(&dir.join(format!("data_batch_{b}.bin")), per_batch, seed + b as u64);
    }
    write_batch(&dir.join("test_batch.bin"), test_n, seed + 99);
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}
