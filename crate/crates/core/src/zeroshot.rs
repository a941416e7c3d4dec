//! Zero-shot transfer with class prototypes.
//!
//! The classification head is dropped. Pooled features of the target's
//! training split are averaged per class, and each test sample is ranked
//! against those prototypes by cosine similarity.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::Pointy;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};
use crate::train::prepare_all;

/// Mean-pooled final-block features (`M × D`) of every cloud, in dataset
/// order, with no augmentation.
pub fn extract_features<T: Scalar>(model: &Pointy<T>, ds: &Dataset<T>) -> Result<Tensor<T>> {
    let cfg = model.config();
    if ds.is_empty() {
        return Err(Error::Empty(format!("dataset `{}`", ds.source)));
    }
    if let Some(c) = ds.clouds.iter().find(|c| c.len() != cfg.n_points) {
        return Err(Error::Config(format!(
            "checkpoint expects {} points per cloud, `{}` has {}",
            cfg.n_points,
            c.id,
            c.len()
        )));
    }
    if cfg.use_extras && ds.clouds.iter().any(|c| c.extras.is_none()) {
        return Err(Error::Config("checkpoint uses normals or colors; target clouds have none".into()));
    }
    let inputs = prepare_all(model, ds)?;
    let rows: Vec<Vec<T>> = inputs
        .par_iter()
        .map(|x| model.forward_prepared(x).map(|o| o.pooled.into_data()))
        .collect::<Result<_>>()?;
    let d = rows[0].len();
    Tensor::new(vec![rows.len(), d], rows.concat())
}

/// Per-class mean features of a target training split.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank<T> {
    /// `C × D`; row `c` is the mean feature of class `c`.
    pub prototypes: Tensor<T>,
    pub class_names: Vec<String>,
    pub counts: Vec<usize>,
}

impl<T: Scalar> PrototypeBank<T> {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.cols()
    }
}

/// Unnormalized arithmetic mean of each class's feature rows. Sums run in
/// `f64` in row order.
pub fn build_prototypes<T: Scalar>(
    features: &Tensor<T>,
    labels: &[usize],
    class_names: &[String],
) -> Result<PrototypeBank<T>> {
    let (m, d) = (features.rows(), features.cols());
    if labels.len() != m {
        return Err(Error::Config(format!("{m} feature rows but {} labels", labels.len())));
    }
    let c = class_names.len();
    let mut sums = vec![vec![0.0f64; d]; c];
    let mut counts = vec![0usize; c];
    for (i, &l) in labels.iter().enumerate() {
        if l >= c {
            return Err(Error::Index {
                what: "class label",
                index: l,
                len: c,
            });
        }
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(features.row(i)) {
            *s += v.as_f64();
        }
    }
    if let Some(empty) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Empty(format!("class `{}` has no training samples", class_names[empty])));
    }
    let rows: Vec<Vec<T>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| s.iter().map(|v| T::lit(v / n as f64)).collect())
        .collect();
    Ok(PrototypeBank {
        prototypes: Tensor::new(vec![c, d], rows.concat())?,
        class_names: class_names.to_vec(),
        counts,
    })
}

fn norm<T: Scalar>(v: &[T]) -> f64 {
    v.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt()
}

/// Cosine similarity of `feature` to every prototype. A zero-norm vector
/// on either side scores `-∞`.
pub fn cosine_similarities<T: Scalar>(feature: &[T], bank: &PrototypeBank<T>) -> Result<Vec<f64>> {
    if feature.len() != bank.dim() {
        return Err(Error::shape("cosine", &[1, feature.len()], &[bank.num_classes(), bank.dim()]));
    }
    let fn_ = norm(feature);
    if fn_ == 0.0 {
        warn!("zero-norm feature; every class scores -inf");
    }
    Ok((0..bank.num_classes())
        .map(|c| {
            let p = bank.prototypes.row(c);
            let pn = norm(p);
            if fn_ == 0.0 || pn == 0.0 {
                if pn == 0.0 {
                    warn!("prototype of `{}` has zero norm; ranked last", bank.class_names[c]);
                }
                return f64::NEG_INFINITY;
            }
            let dot: f64 = feature.iter().zip(p).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
            dot / (fn_ * pn)
        })
        .collect())
}

/// Class indices sorted by descending similarity, then ascending index.
pub fn rank_classes(similarities: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..similarities.len()).collect();
    order.sort_by(|&a, &b| similarities[b].total_cmp(&similarities[a]).then(a.cmp(&b)));
    order
}

pub fn cosine_rank<T: Scalar>(feature: &[T], bank: &PrototypeBank<T>) -> Result<Vec<usize>> {
    cosine_similarities(feature, bank).map(|s| rank_classes(&s))
}

/// Percentage of samples whose label is among the first `k` ranked classes.
pub fn topk_accuracy(rankings: &[Vec<usize>], labels: &[usize], k: usize) -> f64 {
    if rankings.is_empty() {
        return f64::NAN;
    }
    let hits = rankings
        .iter()
        .zip(labels)
        .filter(|(r, l)| r.iter().take(k).any(|c| c == *l))
        .count();
    100.0 * hits as f64 / rankings.len() as f64
}

/// Per-sample rankings and Top-k accuracies of one zero-shot evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotResult {
    /// `(k, accuracy %)` in the order requested.
    pub accuracies: Vec<(usize, f64)>,
    pub rankings: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

/// Builds prototypes from `train` and ranks every sample of `test`.
pub fn zeroshot_eval<T: Scalar>(
    model: &Pointy<T>,
    train: &Dataset<T>,
    test: &Dataset<T>,
    ks: &[usize],
) -> Result<ZeroShotResult> {
    if train.class_names != test.class_names {
        return Err(Error::Config("train and test splits have different label spaces".into()));
    }
    if ks.contains(&0) {
        return Err(Error::Config("top-k needs k ≥ 1".into()));
    }
    let bank = build_prototypes(&extract_features(model, train)?, &train.labels, &train.class_names)?;
    let feats = extract_features(model, test)?;
    let rankings = (0..feats.rows())
        .map(|i| cosine_rank(feats.row(i), &bank))
        .collect::<Result<Vec<_>>>()?;
    let accuracies = ks.iter().map(|&k| (k, topk_accuracy(&rankings, &test.labels, k))).collect();
    Ok(ZeroShotResult {
        accuracies,
        rankings,
        labels: test.labels.clone(),
        num_classes: bank.num_classes(),
    })
}

/// JSON summary of a zero-shot run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub checkpoint: String,
    pub target: String,
    /// Keyed `top1`, `top3`, ...; values in percent.
    pub accuracy: BTreeMap<String, f64>,
    /// Number of target classes.
    #[serde(rename = "C")]
    pub num_classes: usize,
    /// Number of test samples.
    #[serde(rename = "M")]
    pub num_samples: usize,
}

impl ZeroShotReport {
    pub fn new(checkpoint: impl Into<String>, target: impl Into<String>, result: &ZeroShotResult) -> Self {
        Self {
            checkpoint: checkpoint.into(),
            target: target.into(),
            accuracy: result.accuracies.iter().map(|&(k, a)| (format!("top{k}"), a)).collect(),
            num_classes: result.num_classes,
            num_samples: result.rankings.len(),
        }
    }
}

/// Writes `id,label,rank_1,...,rank_C` with class names.
pub fn write_rankings(path: impl AsRef<Path>, test: &Dataset<impl Scalar>, result: &ZeroShotResult) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((1..=result.num_classes).map(|r| format!("rank_{r}")));
    w.write_record(&header)?;
    for ((cloud, &label), ranking) in test.clouds.iter().zip(&result.labels).zip(&result.rankings) {
        let mut row = vec![cloud.id.clone(), test.class_names[label].clone()];
        row.extend(ranking.iter().map(|&c| test.class_names[c].clone()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
