//! Synthetic stall crops in the `scan_tree` layout.
//!
//! Occupied crops are a bright, striped rectangle covering more than half of
//! the crop on dark noisy ground; vacant crops are the ground alone. Ground
//! pixels never exceed 80 and vehicle pixels never drop below 147, so every
//! occupied crop is brighter on average than every vacant one.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::DatasetError;
use crate::Label;

pub const SYNTH_LOT: &str = "SYNTH";
/// Side length of generated crops in pixels.
pub const SYNTH_CROP_SIZE: u32 = 48;

fn ground_pixel(rng: &mut impl Rng, base: i32) -> Rgb<u8> {
    let n = rng.random_range(-10..=10);
    let v = |tint: i32| (base + n + tint).clamp(20, 80) as u8;
    Rgb([
        v(0),
        v(rng.random_range(-2..=2)),
        v(rng.random_range(-3..=3)),
    ])
}

/// One synthetic crop of the given class.
pub fn synth_crop(label: Label, rng: &mut impl Rng) -> RgbImage {
    let size = SYNTH_CROP_SIZE;
    let base = rng.random_range(30..=70);
    let mut img = RgbImage::from_fn(size, size, |_, _| ground_pixel(rng, base));
    if label == Label::Occupied {
        let min_side = (size as f64 * 0.72).ceil() as u32;
        let max_side = (size as f64 * 0.95).floor() as u32;
        let w = rng.random_range(min_side..=max_side);
        let h = rng.random_range(min_side..=max_side);
        let x0 = rng.random_range(0..=size - w);
        let y0 = rng.random_range(0..=size - h);
        let body: [i32; 3] = [
            rng.random_range(170..=235),
            rng.random_range(170..=235),
            rng.random_range(170..=235),
        ];
        let stripe = rng.random_range(3..=5);
        for y in y0..y0 + h {
            let shade = if (y - y0) % stripe == 0 { -15 } else { 0 };
            for x in x0..x0 + w {
                let n = rng.random_range(-8..=8);
                let px = body.map(|c| (c + shade + n).clamp(147, 255) as u8);
                img.put_pixel(x, y, Rgb(px));
            }
        }
    }
    img
}

fn image_seed(seed: u64, lot: &str, label: Label, i: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(lot.as_bytes());
    h.update([label.index() as u8]);
    h.update((i as u64).to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Writes `n_per_label` crops of each class under `<out_dir>/SYNTH/`.
pub fn synth_generate(
    out_dir: impl AsRef<Path>,
    n_per_label: usize,
    seed: u64,
) -> Result<PathBuf, DatasetError> {
    synth_generate_lot(out_dir, SYNTH_LOT, n_per_label, seed)
}

/// Same as [`synth_generate`] with a caller-chosen lot name.
pub fn synth_generate_lot(
    out_dir: impl AsRef<Path>,
    lot: &str,
    n_per_label: usize,
    seed: u64,
) -> Result<PathBuf, DatasetError> {
    let out_dir = out_dir.as_ref();
    for (label, dir, prefix) in [
        (Label::Occupied, "Occupied", "occupied"),
        (Label::Vacant, "Empty", "empty"),
    ] {
        let class_dir = out_dir.join(lot).join(dir);
        fs::create_dir_all(&class_dir).map_err(|e| DatasetError::io(&class_dir, e))?;
        for i in 0..n_per_label {
            let mut rng = ChaCha8Rng::seed_from_u64(image_seed(seed, lot, label, i));
            let img = synth_crop(label, &mut rng);
            let path = class_dir.join(format!("{prefix}_{i:05}.png"));
            img.save(&path).map_err(|e| DatasetError::Encode {
                path: path.clone(),
                message: e.to_string(),
            })?;
        }
    }
    Ok(out_dir.to_path_buf())
}

pub fn mean_brightness(img: &RgbImage) -> f64 {
    let raw = img.as_raw();
    raw.iter().map(|&v| v as f64).sum::<f64>() / raw.len() as f64
}
