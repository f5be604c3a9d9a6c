//! Test-only helpers shared by the integration suites.
#![allow(dead_code)]

pub mod gradcheck;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mqnowcast::data::{fit_normalization, NormalizationStats, RadarSequence, Splits};
use mqnowcast::model::ModelConfig;
use mqnowcast::tensor::{Real, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let values = (0..n).map(|_| T::from_f64(rng.gen_range(lo..hi))).collect();
    Tensor::from_vec(shape.to_vec(), values).unwrap()
}

/// Random values with every pair at least `gap` apart, so max-style
/// selections never flip under small perturbations.
pub fn separated_tensor<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<T> {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let values = idx
        .iter()
        .map(|&i| T::from_f64((i as f64 - n as f64 / 2.0) * gap + rng.gen_range(0.0..gap * 0.25)))
        .collect();
    Tensor::from_vec(shape.to_vec(), values).unwrap()
}

/// Windows whose single target frame is the per-pixel mean of `m` uniform
/// random input frames, split into consecutive train/val/test blocks.
pub fn toy_splits(seed: u64, counts: [usize; 3], m: usize, h: usize, w: usize) -> (Splits, NormalizationStats) {
    let mut r = rng(seed);
    let mut make = |n: usize, offset: usize| -> Vec<RadarSequence> {
        (0..n)
            .map(|i| {
                let inputs: Tensor<f32> = random_tensor(&mut r, &[m, h, w], 0.0, 1.0);
                let mean = (0..h * w)
                    .map(|p| (0..m).map(|k| inputs.values()[k * h * w + p]).sum::<f32>() / m as f32)
                    .collect();
                RadarSequence {
                    inputs,
                    targets: Tensor::from_vec(vec![1, h, w], mean).unwrap(),
                    timestamp_index: (offset + i) * (m + 1),
                }
            })
            .collect()
    };
    let train = make(counts[0], 0);
    let val = make(counts[1], counts[0]);
    let test = make(counts[2], counts[0] + counts[1]);
    let stats = fit_normalization(&train).unwrap();
    (Splits { train, val, test }, stats)
}

/// Small network matching [`toy_splits`] windows.
pub fn toy_model(m: usize, h: usize, w: usize) -> ModelConfig {
    ModelConfig {
        input_frames: m,
        lead_times: 1,
        quantiles: None,
        base_channels: 4,
        depth: 1,
        grid_h: h,
        grid_w: w,
        attention: true,
        seed: 0,
    }
}
