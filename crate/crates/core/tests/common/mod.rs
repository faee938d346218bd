#![allow(dead_code)]

use bdnn::codes::BinaryCodes;
use bdnn::hashnet::{Mode, NetConfig, NetParams};
use bdnn::numerics::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_mat(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

pub fn random_codes(bits: usize, m: usize, rng: &mut ChaCha8Rng) -> BinaryCodes {
    let data = (0..bits * m).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect();
    BinaryCodes::from_signs(bits, m, data).unwrap()
}

pub fn random_params(config: &NetConfig, scale: f64, rng: &mut ChaCha8Rng) -> NetParams {
    let flat: Vec<f64> = (0..config.param_count())
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    NetParams::from_flat(config, &flat).unwrap()
}

/// Random network of the given mode with input `dim` and code length `bits`.
pub fn random_config(mode: Mode, dim: usize, bits: usize, rng: &mut ChaCha8Rng) -> NetConfig {
    let hidden = rng.random_range(0..=2usize);
    let mut sizes = vec![dim];
    for _ in 0..hidden {
        sizes.push(rng.random_range(1..=4));
    }
    sizes.push(bits);
    if mode == Mode::Unsupervised {
        sizes.push(dim);
    }
    NetConfig::new(mode, sizes).unwrap()
}

/// Isotropic Gaussian classes around `means` (columns are samples).
pub fn gaussian_classes(
    means: &[Vec<f64>],
    per_class: usize,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> (Mat, Vec<u32>) {
    let dim = means[0].len();
    let m = means.len() * per_class;
    let mut x = Mat::zeros(dim, m);
    let mut labels = Vec::with_capacity(m);
    for (c, mean) in means.iter().enumerate() {
        for k in 0..per_class {
            let j = c * per_class + k;
            for i in 0..dim {
                let z: f64 = StandardNormal.sample(rng);
                x.set(i, j, mean[i] + sigma * z);
            }
            labels.push(c as u32);
        }
    }
    (x, labels)
}

/// Largest per-component relative difference between `analytic` and the
/// central difference of `f` at `x0`, with `floor` guarding the
/// denominator for near-zero components.
pub fn finite_difference_error(
    f: impl Fn(&[f64]) -> f64,
    analytic: &[f64],
    x0: &[f64],
    h: f64,
    floor: f64,
) -> f64 {
    let mut worst = 0.0f64;
    let mut x = x0.to_vec();
    for i in 0..x0.len() {
        x[i] = x0[i] + h;
        let up = f(&x);
        x[i] = x0[i] - h;
        let down = f(&x);
        x[i] = x0[i];
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(floor);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

/// Minimum of `g` over every binary `bits x m` matrix.
pub fn enumerate_min(bits: usize, m: usize, g: impl Fn(&BinaryCodes) -> f64) -> f64 {
    let n = bits * m;
    assert!(n <= 20);
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        let data = (0..n).map(|i| if mask >> i & 1 == 1 { 1 } else { -1 }).collect();
        let b = BinaryCodes::from_signs(bits, m, data).unwrap();
        best = best.min(g(&b));
    }
    best
}

pub fn naive_hamming(a: &[i8], b: &[i8]) -> u32 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u32
}

/// `(index, distance)` for the whole database sorted by distance then index.
pub fn naive_ranking(db: &BinaryCodes, query: &[i8]) -> Vec<(usize, u32)> {
    let mut all: Vec<(usize, u32)> = (0..db.len())
        .map(|j| (j, naive_hamming(&db.code(j), query)))
        .collect();
    all.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)));
    all
}

pub fn naive_radius(db: &BinaryCodes, query: &[i8], r: u32) -> Vec<usize> {
    (0..db.len())
        .filter(|&j| naive_hamming(&db.code(j), query) <= r)
        .collect()
}

/// Average precision straight from the definition, with linear membership
/// tests.
pub fn naive_ap(ranking: &[usize], relevant: &[usize], top_n: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let mut hits = 0.0;
    let mut precisions = Vec::new();
    for (i, j) in ranking.iter().take(top_n).enumerate() {
        if relevant.contains(j) {
            hits += 1.0;
            precisions.push(hits / (i as f64 + 1.0));
        }
    }
    precisions.iter().sum::<f64>() / relevant.len() as f64
}

pub fn naive_precision(retrieved: &[usize], relevant: &[usize]) -> f64 {
    if retrieved.is_empty() {
        return 0.0;
    }
    retrieved.iter().filter(|j| relevant.contains(j)).count() as f64 / retrieved.len() as f64
}
