//! Prototype classifier against brute-force references.

mod common;

use common::{random_tensor, rng};
use pointy::backbone::{ModelConfig, Pointy};
use pointy::data::{gen_synthetic, split, Dataset, SyntheticSpec};
use pointy::numerics::Tensor;
use pointy::zeroshot::{build_prototypes, cosine_rank, extract_features, rank_classes, topk_accuracy, zeroshot_eval};
use rand::seq::SliceRandom;
use rand::Rng as _;

fn names(c: usize) -> Vec<String> {
    (0..c).map(|i| format!("class{i}")).collect()
}

fn brute_cosine(f: &[f64], p: &[f64]) -> f64 {
    let dot: f64 = f.iter().zip(p).map(|(a, b)| a * b).sum();
    let nf = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    let np = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    dot / (nf * np)
}

#[test]
fn prototypes_equal_brute_force_means() {
    let mut r = rng(1);
    for _ in 0..20 {
        let (c, m, d) = (r.random_range(1..6), r.random_range(10..60), r.random_range(1..20));
        let mut labels: Vec<usize> = (0..m).map(|i| i % c).collect();
        labels.shuffle(&mut r);
        let feats = random_tensor(&[m, d], &mut r);
        let bank = build_prototypes(&feats, &labels, &names(c)).unwrap();
        for class in 0..c {
            let rows: Vec<usize> = (0..m).filter(|&i| labels[i] == class).collect();
            assert_eq!(bank.counts[class], rows.len());
            for j in 0..d {
                let mean = rows.iter().map(|&i| feats.row(i)[j]).sum::<f64>() / rows.len() as f64;
                assert!((bank.prototypes.row(class)[j] - mean).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn prototypes_are_order_invariant() {
    let mut r = rng(2);
    let (m, d, c) = (80, 16, 4);
    let feats = random_tensor(&[m, d], &mut r);
    let labels: Vec<usize> = (0..m).map(|i| i % c).collect();
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(&mut r);
    let shuffled = Tensor::new(vec![m, d], perm.iter().flat_map(|&i| feats.row(i).to_vec()).collect()).unwrap();
    let shuffled_labels: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
    let a = build_prototypes(&feats, &labels, &names(c)).unwrap();
    let b = build_prototypes(&shuffled, &shuffled_labels, &names(c)).unwrap();
    for (x, y) in a.prototypes.data().iter().zip(b.prototypes.data()) {
        assert!((x - y).abs() <= 1e-12);
    }
}

#[test]
fn one_sample_per_class_and_empty_class() {
    let feats = random_tensor(&[3, 5], &mut rng(3));
    let bank = build_prototypes(&feats, &[0, 1, 2], &names(3)).unwrap();
    assert_eq!(bank.prototypes, feats);
    let err = build_prototypes(&feats, &[0, 0, 2], &names(3)).unwrap_err();
    assert!(err.to_string().contains("class1"), "{err}");
}

#[test]
fn ranking_matches_brute_force_sort() {
    let mut r = rng(4);
    for _ in 0..100 {
        let d = r.random_range(2..16);
        let protos = random_tensor(&[10, d], &mut r);
        let bank = build_prototypes(&protos, &(0..10).collect::<Vec<_>>(), &names(10)).unwrap();
        let f: Vec<f64> = random_tensor(&[1, d], &mut r).data().to_vec();
        let sims: Vec<f64> = (0..10).map(|c| brute_cosine(&f, protos.row(c))).collect();
        let mut want: Vec<usize> = (0..10).collect();
        want.sort_by(|&a, &b| sims[b].partial_cmp(&sims[a]).unwrap().then(a.cmp(&b)));
        assert_eq!(cosine_rank(&f, &bank).unwrap(), want);
    }
}

#[test]
fn ranking_is_scale_invariant() {
    let mut r = rng(5);
    for _ in 0..100 {
        let protos = random_tensor(&[6, 8], &mut r);
        let bank = build_prototypes(&protos, &(0..6).collect::<Vec<_>>(), &names(6)).unwrap();
        let f: Vec<f64> = random_tensor(&[1, 8], &mut r).data().to_vec();
        let s: f64 = r.random_range(1e-3..1e3);
        let scaled: Vec<f64> = f.iter().map(|v| v * s).collect();
        assert_eq!(cosine_rank(&f, &bank).unwrap(), cosine_rank(&scaled, &bank).unwrap());
        let five: Vec<f64> = protos.row(2).iter().map(|v| v * 5.0).collect();
        assert_eq!(cosine_rank(&five, &bank).unwrap()[0], 2);
    }
}

#[test]
fn orthogonal_prototypes_and_zero_norms() {
    let eye = Tensor::new(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let bank = build_prototypes(&eye, &[0, 1, 2], &names(3)).unwrap();
    assert_eq!(cosine_rank(&[0.0, 1.0, 0.0], &bank).unwrap()[0], 1);
    // v and -v average to a zero prototype, which ranks last.
    let pair = Tensor::new(vec![3, 2], vec![1.0, 2.0, -1.0, -2.0, 0.5, 0.5]).unwrap();
    let bank = build_prototypes(&pair, &[0, 0, 1], &names(2)).unwrap();
    assert!(bank.prototypes.row(0).iter().all(|&v| v == 0.0));
    assert_eq!(cosine_rank(&[-1.0, -1.0], &bank).unwrap(), vec![1, 0]);
    assert_eq!(rank_classes(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), vec![0, 1]);
}

#[test]
fn one_hot_features_give_perfect_top1_and_topk_is_monotone() {
    let c = 5;
    let mut r = rng(6);
    let labels: Vec<usize> = (0..50).map(|_| r.random_range(0..c)).chain(0..c).collect();
    let onehot = |l: usize| (0..c).map(|j| if j == l { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    let feats = Tensor::new(vec![labels.len(), c], labels.iter().flat_map(|&l| onehot(l)).collect()).unwrap();
    let bank = build_prototypes(&feats, &labels, &names(c)).unwrap();
    let rankings: Vec<Vec<usize>> = labels.iter().map(|&l| cosine_rank(&onehot(l), &bank).unwrap()).collect();
    assert_eq!(topk_accuracy(&rankings, &labels, 1), 100.0);

    let random: Vec<Vec<usize>> = (0..200)
        .map(|_| {
            let f: Vec<f64> = random_tensor(&[1, c], &mut r).data().to_vec();
            cosine_rank(&f, &bank).unwrap()
        })
        .collect();
    let truth: Vec<usize> = (0..200).map(|_| r.random_range(0..c)).collect();
    let accs: Vec<f64> = (1..=c).map(|k| topk_accuracy(&random, &truth, k)).collect();
    assert!(accs.windows(2).all(|w| w[0] <= w[1]), "{accs:?}");
    assert_eq!(accs[c - 1], 100.0);
}

fn small_model(classes: usize, seed: u64) -> Pointy<f64> {
    let cfg = ModelConfig {
        dim: 24,
        heads: 8,
        patches: 16,
        k: 8,
        n_points: 128,
        embed_hidden: 16,
        merge_schedule: vec![2, 2, 2, 1, 1, 1],
        ..ModelConfig::small(classes)
    };
    Pointy::new(cfg, seed).unwrap()
}

fn transfer(seed: u64, per_class: usize) -> Dataset<f64> {
    gen_synthetic(&SyntheticSpec {
        per_class,
        n_points: 128,
        ..SyntheticSpec::transfer_benchmark(seed)
    })
    .unwrap()
}

#[test]
fn features_are_pooled_and_deterministic() {
    let model = small_model(4, 7);
    let ds = transfer(7, 5);
    let twice = Dataset::new(
        vec![ds.clouds[0].clone(), ds.clouds[0].clone()],
        vec![0, 0],
        ds.class_names.clone(),
        "twice",
    )
    .unwrap();
    let f = extract_features(&model, &twice).unwrap();
    assert_eq!(f.shape(), &[2, 24]);
    assert_eq!(f.row(0), f.row(1));
    let pooled = model.forward(&ds.clouds[0]).unwrap().pooled;
    assert_eq!(f.row(0), pooled.data());
}

/// Reusing the training split as the test split upper-bounds the held-out
/// score. Held-out is measured leave-one-out: a sample's own row joins its
/// class mean, which only pulls that prototype toward it, so every sample
/// correct without itself stays correct with itself.
#[test]
fn train_as_test_upper_bounds_held_out_score() {
    for seed in 0..5 {
        let model = small_model(4, 100 + seed);
        let s = split(&transfer(seed, 200), 0.85, seed).unwrap();
        let seen = zeroshot_eval(&model, &s.train, &s.train, &[1]).unwrap();
        let feats = extract_features(&model, &s.train).unwrap();
        let (m, d) = (feats.rows(), feats.cols());
        let mut loo_hits = 0;
        for i in 0..m {
            let keep: Vec<usize> = (0..m).filter(|&j| j != i).collect();
            let rest = Tensor::new(vec![m - 1, d], keep.iter().flat_map(|&j| feats.row(j).to_vec()).collect()).unwrap();
            let labels: Vec<usize> = keep.iter().map(|&j| s.train.labels[j]).collect();
            let bank = build_prototypes(&rest, &labels, &s.train.class_names).unwrap();
            let loo_correct = cosine_rank(feats.row(i), &bank).unwrap()[0] == s.train.labels[i];
            let seen_correct = seen.rankings[i][0] == s.train.labels[i];
            assert!(!loo_correct || seen_correct, "seed {seed}, sample {i}");
            loo_hits += loo_correct as usize;
        }
        let loo = 100.0 * loo_hits as f64 / m as f64;
        assert!(seen.accuracies[0].1 >= loo, "seed {seed}: {} < {loo}", seen.accuracies[0].1);
    }
}

#[test]
fn mismatched_label_spaces_are_rejected() {
    let model = small_model(4, 8);
    let a = transfer(8, 5);
    let mut b = a.clone();
    b.class_names[0] = "other".into();
    assert!(zeroshot_eval(&model, &a, &b, &[1]).is_err());
    assert!(zeroshot_eval(&model, &a, &a, &[0]).is_err());
}
