//! Synthetic texture patches for fast experiments.
//!
//! Each class gets a procedural prototype: an oriented sinusoidal grating
//! whose orientation, frequency, and per-channel phases are drawn from a
//! per-class stream of the dataset seed. Every sample is the prototype plus
//! i.i.d. Gaussian pixel noise, clamped to [-1, 1]. All prototypes share the
//! same amplitude and near-zero mean, so class identity lives in texture
//! orientation and frequency rather than in color statistics.

use super::{DatasetSplit, PatchRecord};
use crate::derive_seed;
use crate::error::{Error, Result};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

const SIDE: usize = 64;
const AMPLITUDE: f64 = 0.6;

struct Prototype {
    pixels: Vec<f64>,
}

fn class_prototype(seed: u64, class: usize, n_classes: usize) -> Prototype {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "synth.proto", class as u64));
    // Orientations spread evenly over a half turn with a small jitter so no
    // two classes collapse onto the same grating.
    let theta = PI * (class as f64 + rng.random_range(-0.15..0.15)) / n_classes as f64;
    let freq = rng.random_range(3.0..7.0);
    let phases: [f64; 3] = [
        rng.random_range(0.0..2.0 * PI),
        rng.random_range(0.0..2.0 * PI),
        rng.random_range(0.0..2.0 * PI),
    ];
    let (dx, dy) = (theta.cos(), theta.sin());
    let mut pixels = vec![0.0; 3 * SIDE * SIDE];
    for c in 0..3 {
        for y in 0..SIDE {
            for x in 0..SIDE {
                let u = (x as f64 * dx + y as f64 * dy) * freq / SIDE as f64;
                pixels[(c * SIDE + y) * SIDE + x] =
                    AMPLITUDE * (2.0 * PI * u + phases[c]).sin();
            }
        }
    }
    Prototype { pixels }
}

/// Generates `n_classes * n_per_class` patches and splits each class 80/20
/// into train/test (the last fifth of every class becomes the test set).
pub fn synth_dataset(
    n_per_class: usize,
    n_classes: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if n_per_class == 0 || n_classes == 0 {
        return Err(Error::invalid(
            "synthetic dataset needs at least one class and one sample".to_string(),
        ));
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::invalid(format!(
            "noise sigma must be non-negative, got {noise_sigma}"
        )));
    }
    let n_test = ((n_per_class as f64) * 0.2).round() as usize;
    let mut noise = ChaCha8Rng::seed_from_u64(derive_seed(seed, "synth.noise", 0));
    let mut train = Vec::with_capacity(n_classes * (n_per_class - n_test));
    let mut test = Vec::with_capacity(n_classes * n_test);
    for class in 0..n_classes {
        let proto = class_prototype(seed, class, n_classes);
        for i in 0..n_per_class {
            let pixels: Vec<f32> = proto
                .pixels
                .iter()
                .map(|&p| {
                    let n: f64 = noise.sample(StandardNormal);
                    (p + noise_sigma * n).clamp(-1.0, 1.0) as f32
                })
                .collect();
            let record = PatchRecord {
                pixels,
                label: class as u32,
                source_image: (class * n_per_class + i) as u32,
                center: (SIDE as u32 / 2, SIDE as u32 / 2),
            };
            if i < n_per_class - n_test {
                train.push(record);
            } else {
                test.push(record);
            }
        }
    }
    let split = DatasetSplit {
        train,
        test,
        class_names: (0..n_classes).map(|c| format!("class{c}")).collect(),
        side: SIDE,
        split_seed: seed,
    };
    split.validate()?;
    Ok(split)
}
