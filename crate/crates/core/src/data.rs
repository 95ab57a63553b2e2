//! Synthetic shape-segmentation dataset.
//!
//! Each sample renders K-1 axis-aligned rectangles and ellipses of distinct
//! class colors (classes 1..K-1) over a dark background (class 0), then adds
//! Gaussian pixel noise. Colors carry class-identifying means, so the task
//! is learnable at desk scale, and shape extents are capped so the
//! background always keeps a healthy share of the pixels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct SyntheticSample {
    /// [3, H, W] scalars in [0, 1].
    pub image: Tensor<f32>,
    /// Row-major [H, W] class ids in [0, K).
    pub labels: Vec<u32>,
    pub height: usize,
    pub width: usize,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Derive an independent stream seed from a base seed and an index.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(1)))
}

/// Class-identifying mean color. Class 0 is a dark background; the others
/// sit on a hue wheel.
pub fn class_color(class: usize, num_classes: usize) -> [f32; 3] {
    if class == 0 {
        return [0.12, 0.12, 0.12];
    }
    let angle = std::f64::consts::TAU * (class - 1) as f64 / (num_classes - 1) as f64;
    let third = std::f64::consts::TAU / 3.0;
    [
        (0.55 + 0.4 * angle.cos()) as f32,
        (0.55 + 0.4 * (angle - third).cos()) as f32,
        (0.55 + 0.4 * (angle + third).cos()) as f32,
    ]
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

const NOISE_STD: f64 = 0.03;

fn render_sample(seed: u64, h: usize, w: usize, k: usize) -> SyntheticSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = vec![0u32; h * w];
    let min_side = h.min(w) as f64;
    // shrink shapes as the class count grows so the background survives
    let scale = (3.0 / (k as f64 - 1.0)).sqrt().min(1.0);
    for class in 1..k {
        let is_ellipse = rng.random::<f64>() < 0.5;
        let half_h = (min_side * (0.14 + 0.10 * rng.random::<f64>()) * scale).max(2.0);
        let half_w = (min_side * (0.14 + 0.10 * rng.random::<f64>()) * scale).max(2.0);
        let cy = half_h + rng.random::<f64>() * (h as f64 - 2.0 * half_h);
        let cx = half_w + rng.random::<f64>() * (w as f64 - 2.0 * half_w);
        for y in 0..h {
            for x in 0..w {
                let dy = (y as f64 + 0.5 - cy) / half_h;
                let dx = (x as f64 + 0.5 - cx) / half_w;
                let inside = if is_ellipse {
                    dy * dy + dx * dx <= 1.0
                } else {
                    dy.abs() <= 1.0 && dx.abs() <= 1.0
                };
                if inside {
                    labels[y * w + x] = class as u32;
                }
            }
        }
    }
    let mut image = vec![0.0f32; 3 * h * w];
    for (p, &label) in labels.iter().enumerate() {
        let base = class_color(label as usize, k);
        for (ch, &mean) in base.iter().enumerate() {
            let v = mean as f64 + NOISE_STD * gaussian(&mut rng);
            image[ch * h * w + p] = v.clamp(0.0, 1.0) as f32;
        }
    }
    SyntheticSample {
        image: Tensor::new(vec![3, h, w], image).expect("image shape"),
        labels,
        height: h,
        width: w,
    }
}

/// Deterministic dataset of `n` samples. Requires K >= 2 and extents
/// divisible by 32 (the encoder contract).
pub fn make_synthetic_dataset(
    seed: u64,
    n: usize,
    h: usize,
    w: usize,
    k: usize,
) -> Result<Vec<SyntheticSample>> {
    if k < 2 {
        return Err(Error::Argument(format!("need at least 2 classes, got {k}")));
    }
    if h % 32 != 0 || w % 32 != 0 {
        return Err(Error::Argument(format!(
            "sample size {h}x{w} must be divisible by 32"
        )));
    }
    Ok((0..n)
        .map(|i| render_sample(derive_seed(seed, i as u64), h, w, k))
        .collect())
}

/// Stack per-sample images into one [B, 3, H, W] batch.
pub fn stack_images(samples: &[&SyntheticSample]) -> Result<Tensor<f32>> {
    if samples.is_empty() {
        return Err(Error::Argument("cannot stack an empty batch".into()));
    }
    let (h, w) = (samples[0].height, samples[0].width);
    let mut data = Vec::with_capacity(samples.len() * 3 * h * w);
    for s in samples {
        if (s.height, s.width) != (h, w) {
            return Err(Error::shape("batch samples must share one size"));
        }
        data.extend_from_slice(s.image.data());
    }
    Tensor::new(vec![samples.len(), 3, h, w], data)
}

/// Stack per-sample label maps into one row-major [B, H, W] buffer.
pub fn stack_labels(samples: &[&SyntheticSample]) -> Vec<u32> {
    samples
        .iter()
        .flat_map(|s| s.labels.iter().copied())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let a = make_synthetic_dataset(7, 3, 64, 64, 4).unwrap();
        let b = make_synthetic_dataset(7, 3, 64, 64, 4).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image.data(), y.image.data());
            assert_eq!(x.labels, y.labels);
        }
        let c = make_synthetic_dataset(8, 1, 64, 64, 4).unwrap();
        assert_ne!(a[0].labels, c[0].labels);
    }

    #[test]
    fn labels_stay_below_class_count() {
        for k in [2usize, 4, 7] {
            let ds = make_synthetic_dataset(3, 4, 64, 64, k).unwrap();
            for s in &ds {
                assert!(s.labels.iter().all(|&c| (c as usize) < k));
                assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn background_occupies_over_five_percent_across_100_seeds() {
        for seed in 0..100u64 {
            let ds = make_synthetic_dataset(seed, 1, 64, 64, 4).unwrap();
            let background = ds[0].labels.iter().filter(|&&c| c == 0).count();
            let frac = background as f64 / ds[0].labels.len() as f64;
            assert!(frac > 0.05, "seed {seed}: background fraction {frac}");
        }
    }

    #[test]
    fn every_foreground_class_appears() {
        // shapes are drawn last-class-on-top; with the size caps every class
        // should keep at least a few pixels in most samples
        let ds = make_synthetic_dataset(0, 16, 64, 64, 4).unwrap();
        let mut seen = [0usize; 4];
        for s in &ds {
            for &c in &s.labels {
                seen[c as usize] += 1;
            }
        }
        for (c, &count) in seen.iter().enumerate() {
            assert!(count > 0, "class {c} never appears");
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(make_synthetic_dataset(0, 1, 64, 64, 1).is_err());
        assert!(make_synthetic_dataset(0, 1, 60, 64, 3).is_err());
    }
}
