//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

pub mod suites;

use pointy::backbone::ModelConfig;
use pointy::geometry::PointCloud;
use pointy::numerics::{seeded, Rng, Tensor};
use rand::Rng as _;

pub fn rng(seed: u64) -> Rng {
    seeded(seed, 99)
}

pub fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_points(n: usize, rng: &mut Rng) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect()
}

pub fn random_cloud(n: usize, seed: u64) -> PointCloud<f64> {
    PointCloud::new(random_points(n, &mut rng(seed))).unwrap()
}

pub fn naive_matmul(a: &[f64], b: &[f64], m: usize, p: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for k in 0..p {
                c[i * n + j] += a[i * p + k] * b[k * n + j];
            }
        }
    }
    c
}

fn d2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Recomputes every point's distance to the whole selected set at each step.
pub fn brute_fps(points: &[[f64; 3]], count: usize) -> Vec<usize> {
    let n = points.len() as f64;
    let c = [0, 1, 2].map(|a| points.iter().map(|p| p[a]).sum::<f64>() / n);
    let mut first = 0;
    for i in 0..points.len() {
        if d2(&points[i], &c) > d2(&points[first], &c) {
            first = i;
        }
    }
    let mut sel = vec![first];
    while sel.len() < count {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..points.len() {
            if sel.contains(&i) {
                continue;
            }
            let m = sel.iter().map(|&s| d2(&points[i], &points[s])).fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(_, bm)| m > bm) {
                best = Some((i, m));
            }
        }
        sel.push(best.unwrap().0);
    }
    sel
}

/// Full sort of all points by `(distance, index)`.
pub fn brute_knn(points: &[[f64; 3]], anchor: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| {
        d2(&points[a], &points[anchor])
            .total_cmp(&d2(&points[b], &points[anchor]))
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

/// The reduced end-to-end gradient-check model.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        dim: 12,
        heads: 4,
        layers: 2,
        patches: 4,
        k: 4,
        n_points: 32,
        merge_schedule: vec![2, 1],
        embed_hidden: 8,
        num_classes: 3,
        ..ModelConfig::small(3)
    }
}

/// The reduced Small model of the synthetic training run.
pub fn reduced_config(num_classes: usize) -> ModelConfig {
    ModelConfig {
        dim: 96,
        heads: 32,
        patches: 32,
        k: 16,
        n_points: 512,
        ..ModelConfig::small(num_classes)
    }
}

/// A seconds-scale training run: the tiny model on 4 synthetic classes.
pub fn tiny_run(seed: u64, epochs: usize) -> pointy::train::RunConfig {
    use pointy::data::SyntheticSpec;
    use pointy::train::{DataSource, Precision, RunConfig, TrainConfig};
    RunConfig {
        model: ModelConfig {
            num_classes: 4,
            ..tiny_config()
        },
        train: TrainConfig {
            lr: 1e-3,
            batch_size: 8,
            epochs,
            seed,
            deterministic: true,
            ..TrainConfig::default()
        },
        data: DataSource::Synthetic(SyntheticSpec {
            per_class: 12,
            n_points: 32,
            ..SyntheticSpec::default_benchmark(seed)
        }),
        precision: Precision::F64,
        out_dir: String::new(),
    }
}
