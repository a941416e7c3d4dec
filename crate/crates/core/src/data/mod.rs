//! Datasets, stratified splits, the synthetic shape benchmark and point-cloud
//! file formats.

mod baseline;
mod manifest;
mod pcf;
mod synthetic;

pub use baseline::{covariance_signature, nearest_centroid_oa, NearestCentroid};
pub use manifest::{load_manifest, read_manifest, write_manifest, Manifest};
pub use pcf::{decode_pcf, encode_pcf, load_cloud, load_pcf, parse_xyz, save_pcf};
pub use synthetic::{gen_synthetic, sample_shape, Shape, SyntheticSpec};

use log::warn;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::numerics::rng::{seeded, streams};
use crate::numerics::Scalar;

/// Labelled clouds. Class indices are ranks of the sorted class names.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub clouds: Vec<PointCloud<T>>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub source: String,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(clouds: Vec<PointCloud<T>>, labels: Vec<usize>, class_names: Vec<String>, source: impl Into<String>) -> Result<Self> {
        let ds = Self {
            clouds,
            labels,
            class_names,
            source: source.into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clouds.len() != self.labels.len() {
            return Err(Error::Config(format!(
                "{} clouds but {} labels",
                self.clouds.len(),
                self.labels.len()
            )));
        }
        let c = self.class_names.len();
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= c) {
            return Err(Error::Index {
                what: "class names",
                index: bad,
                len: c,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            clouds: indices.iter().map(|&i| self.clouds[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            source: self.source.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            clouds: self.clouds.iter().map(PointCloud::cast).collect(),
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
            source: self.source.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Dataset<T>,
    pub test: Dataset<T>,
}

/// Stratified split: `⌈fraction·n_c⌉` samples of each class go to train,
/// chosen by a seeded shuffle within the class. Both halves keep the
/// original sample order.
pub fn split<T: Scalar>(dataset: &Dataset<T>, train_fraction: f64, seed: u64) -> Result<Split<T>> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset to split".into()));
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Config(format!("train fraction {train_fraction} outside [0, 1]")));
    }
    let mut rng = seeded(seed, streams::SPLIT);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..dataset.num_classes() {
        let mut members: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let n = members.len();
        // The epsilon absorbs representation error, e.g. 0.85 · 100.
        let mut n_train = ((train_fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
        if n == 1 {
            warn!("class `{}` has a single sample; it goes to the training split", dataset.class_names[c]);
            n_train = 1;
        }
        let n_train = n_train.min(n);
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    if test.is_empty() {
        warn!("test split of `{}` is empty", dataset.source);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split {
        train: dataset.subset(&train),
        test: dataset.subset(&test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(per_class: usize, classes: usize) -> Dataset<f64> {
        let mut clouds = Vec::new();
        let mut labels = Vec::new();
        for c in 0..classes {
            for i in 0..per_class {
                clouds.push(PointCloud::new(vec![[c as f64, i as f64, 0.0]]).unwrap().with_id(format!("{c}-{i}")));
                labels.push(c);
            }
        }
        let names = (0..classes).map(|c| format!("c{c}")).collect();
        Dataset::new(clouds, labels, names, "toy").unwrap()
    }

    #[test]
    fn eighty_five_fifteen() {
        let s = split(&toy(100, 4), 0.85, 3).unwrap();
        assert_eq!(s.train.class_counts(), vec![85; 4]);
        assert_eq!(s.test.class_counts(), vec![15; 4]);
    }

    #[test]
    fn full_fraction_leaves_test_empty() {
        let s = split(&toy(10, 2), 1.0, 3).unwrap();
        assert_eq!(s.train.len(), 20);
        assert!(s.test.is_empty());
    }

    #[test]
    fn singleton_class_goes_to_train() {
        let s = split(&toy(1, 3), 0.5, 3).unwrap();
        assert_eq!(s.train.len(), 3);
    }

    #[test]
    fn union_is_the_dataset() {
        let ds = toy(17, 3);
        let s = split(&ds, 0.85, 9).unwrap();
        let mut ids: Vec<String> = s.train.clouds.iter().chain(&s.test.clouds).map(|c| c.id.clone()).collect();
        let mut all: Vec<String> = ds.clouds.iter().map(|c| c.id.clone()).collect();
        ids.sort();
        all.sort();
        assert_eq!(ids, all);
    }

    #[test]
    fn split_is_seeded() {
        let ds = toy(20, 2);
        assert_eq!(split(&ds, 0.85, 1).unwrap(), split(&ds, 0.85, 1).unwrap());
        assert_ne!(split(&ds, 0.85, 1).unwrap(), split(&ds, 0.85, 2).unwrap());
    }
}
