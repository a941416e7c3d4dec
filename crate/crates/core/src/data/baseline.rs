//! Non-learned reference classifier for the synthetic benchmark.

use nalgebra::{Matrix3, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::{normalize_unit_range, PointCloud};
use crate::numerics::Scalar;

use super::{Dataset, Split};

/// Sorted covariance eigenvalues of the unit-range-normalized cloud, plus
/// its z variance. Invariant to z rotation up to the normalization scale.
pub fn covariance_signature<T: Scalar>(cloud: &PointCloud<T>) -> Result<[f64; 4]> {
    let cloud = normalize_unit_range(cloud)?;
    let n = cloud.len() as f64;
    let c = cloud.centroid().map(|v| v.as_f64());
    let mut cov = Matrix3::<f64>::zeros();
    for p in &cloud.points {
        let d = nalgebra::Vector3::new(p[0].as_f64() - c[0], p[1].as_f64() - c[1], p[2].as_f64() - c[2]);
        cov += d * d.transpose();
    }
    cov /= n;
    let mut eig: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    Ok([eig[0], eig[1], eig[2], cov[(2, 2)]])
}

/// Euclidean nearest class mean over fixed feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct NearestCentroid {
    pub centroids: Vec<[f64; 4]>,
}

impl NearestCentroid {
    pub fn fit<T: Scalar>(ds: &Dataset<T>) -> Result<Self> {
        let mut sums = vec![[0.0; 4]; ds.num_classes()];
        let mut counts = vec![0usize; ds.num_classes()];
        for (cloud, &l) in ds.clouds.iter().zip(&ds.labels) {
            let f = covariance_signature(cloud)?;
            for (s, v) in sums[l].iter_mut().zip(f) {
                *s += v;
            }
            counts[l] += 1;
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::Empty(format!("class `{}` has no training samples", ds.class_names[c])));
        }
        let centroids = sums
            .iter()
            .zip(&counts)
            .map(|(s, &n)| s.map(|v| v / n as f64))
            .collect();
        Ok(Self { centroids })
    }

    /// Nearest centroid; the lowest class index wins ties.
    pub fn predict<T: Scalar>(&self, cloud: &PointCloud<T>) -> Result<usize> {
        let f = covariance_signature(cloud)?;
        let dist = |c: &[f64; 4]| c.iter().zip(&f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let mut best = 0;
        for (i, c) in self.centroids.iter().enumerate() {
            if dist(c) < dist(&self.centroids[best]) {
                best = i;
            }
        }
        Ok(best)
    }
}

/// Test accuracy in percent of a [`NearestCentroid`] fit on the train split.
pub fn nearest_centroid_oa<T: Scalar>(split: &Split<T>) -> Result<f64> {
    if split.test.is_empty() {
        return Err(Error::Empty("test split".into()));
    }
    let model = NearestCentroid::fit(&split.train)?;
    let mut correct = 0;
    for (cloud, &l) in split.test.clouds.iter().zip(&split.test.labels) {
        if model.predict(cloud)? == l {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / split.test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, split, SyntheticSpec};

    #[test]
    fn plane_has_no_vertical_spread() {
        let pts = (0..100).map(|i| [(i % 10) as f64, (i / 10) as f64, 0.0]).collect();
        let s = covariance_signature(&PointCloud::new(pts).unwrap()).unwrap();
        assert!(s[2].abs() < 1e-12 && s[3].abs() < 1e-12);
        assert!(s[0] > 0.3);
    }

    #[test]
    fn separates_default_benchmark() {
        for seed in 0..4 {
            let ds: Dataset<f32> = gen_synthetic(&SyntheticSpec::default_benchmark(seed)).unwrap();
            let oa = nearest_centroid_oa(&split(&ds, 0.85, seed).unwrap()).unwrap();
            println!("seed {seed}: nearest-centroid OA {oa:.2}");
            assert!(oa >= 80.0, "seed {seed}: {oa}");
        }
    }
}
