//! Point-cloud preprocessing and patch partitioning.
//!
//! Every routine is deterministic: ties are broken by the lowest original
//! point index, and randomness enters only through an explicit [`Rng`].

use std::cmp::Ordering;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Scalar};

pub type Point<T> = [T; 3];

/// Meaning of the optional per-point extra channels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExtrasKind {
    /// Rotated together with the coordinates.
    #[default]
    Normals,
    Colors,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T> {
    pub points: Vec<Point<T>>,
    pub extras: Option<(ExtrasKind, Vec<Point<T>>)>,
    pub label: Option<usize>,
    pub id: String,
}

impl<T: Scalar> PointCloud<T> {
    pub fn new(points: Vec<Point<T>>) -> Result<Self> {
        let cloud = Self {
            points,
            extras: None,
            label: None,
            id: String::new(),
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn with_extras(mut self, kind: ExtrasKind, extras: Vec<Point<T>>) -> Result<Self> {
        self.extras = Some((kind, extras));
        self.validate()?;
        Ok(self)
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Empty(format!("point cloud `{}`", self.id)));
        }
        if let Some(i) = self.points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteInput(format!("point {i} of cloud `{}`", self.id)));
        }
        if let Some((_, extras)) = &self.extras {
            if extras.len() != self.points.len() {
                return Err(Error::InvalidTensor(format!(
                    "cloud `{}` has {} points but {} extras",
                    self.id,
                    self.points.len(),
                    extras.len()
                )));
            }
            if let Some(i) = extras.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFiniteInput(format!("extras {i} of cloud `{}`", self.id)));
            }
        }
        Ok(())
    }

    pub fn centroid(&self) -> Point<T> {
        centroid(&self.points)
    }

    fn map_points(&self, f: impl Fn(&Point<T>) -> Point<T>) -> Self {
        Self {
            points: self.points.iter().map(&f).collect(),
            ..self.clone()
        }
    }

    pub fn translate(&self, t: Point<T>) -> Self {
        self.map_points(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]])
    }

    /// Same cloud in another precision.
    pub fn cast<U: Scalar>(&self) -> PointCloud<U> {
        let conv = |v: &[Point<T>]| -> Vec<Point<U>> {
            v.iter()
                .map(|p| [U::lit(p[0].as_f64()), U::lit(p[1].as_f64()), U::lit(p[2].as_f64())])
                .collect()
        };
        PointCloud {
            points: conv(&self.points),
            extras: self.extras.as_ref().map(|(k, e)| (*k, conv(e))),
            label: self.label,
            id: self.id.clone(),
        }
    }

    /// Subset of points (and extras) by index; indices may repeat.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            extras: self
                .extras
                .as_ref()
                .map(|(k, e)| (*k, indices.iter().map(|&i| e[i]).collect())),
            label: self.label,
            id: self.id.clone(),
        }
    }
}

pub fn centroid<T: Scalar>(points: &[Point<T>]) -> Point<T> {
    let mut c = [T::zero(); 3];
    for p in points {
        for a in 0..3 {
            c[a] += p[a];
        }
    }
    let n = T::from_usize(points.len().max(1)).unwrap();
    c.map(|v| v / n)
}

#[inline]
pub fn dist2<T: Scalar>(a: &Point<T>, b: &Point<T>) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Centers on the centroid and divides by the largest absolute centered
/// coordinate, so every coordinate lands in `[-1, 1]` and the aspect ratio
/// is preserved. A cloud of one repeated point is only centered.
pub fn normalize_unit_range<T: Scalar>(cloud: &PointCloud<T>) -> Result<PointCloud<T>> {
    cloud.validate()?;
    let c = cloud.centroid();
    let mut s = T::zero();
    for p in &cloud.points {
        for a in 0..3 {
            s = s.max((p[a] - c[a]).abs());
        }
    }
    if s == T::zero() {
        s = T::one();
    }
    let mut out = cloud.map_points(|p| [(p[0] - c[0]) / s, (p[1] - c[1]) / s, (p[2] - c[2]) / s]);
    // Guard against rounding pushing a coordinate past the unit bound.
    for p in &mut out.points {
        for v in p.iter_mut() {
            *v = v.max(-T::one()).min(T::one());
        }
    }
    Ok(out)
}

/// Rotates about the z axis by `angle` radians. Normals follow the points;
/// colors are untouched.
pub fn rotate_z<T: Scalar>(cloud: &PointCloud<T>, angle: f64) -> PointCloud<T> {
    let (s, c) = (T::lit(angle.sin()), T::lit(angle.cos()));
    let rot = |p: &Point<T>| [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]];
    let mut out = cloud.map_points(rot);
    if let Some((ExtrasKind::Normals, normals)) = &mut out.extras {
        for n in normals.iter_mut() {
            *n = rot(n);
        }
    }
    out
}

/// Draws `n` points uniformly: without replacement when `n ≤ N`, with
/// replacement otherwise.
pub fn sample_uniform<T: Scalar>(cloud: &PointCloud<T>, n: usize, rng: &mut Rng) -> Result<PointCloud<T>> {
    if cloud.is_empty() {
        return Err(Error::Empty(format!("point cloud `{}`", cloud.id)));
    }
    if n == 0 {
        return Err(Error::Config("sample size must be ≥ 1".into()));
    }
    let total = cloud.len();
    let idx: Vec<usize> = if n <= total {
        index::sample(rng, total, n).into_vec()
    } else {
        (0..n).map(|_| rng.random_range(0..total)).collect()
    };
    Ok(cloud.select(&idx))
}

/// How farthest point sampling picks its first anchor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum FpsStart {
    /// The point farthest from the centroid (lowest index on ties).
    #[default]
    FarthestFromCentroid,
    /// A caller-chosen index, e.g. drawn at random for augmentation.
    Index(usize),
}

/// Farthest point sampling in `O(N·P)`: a running minimum distance to the
/// selected set is kept per point, and each step picks its argmax.
pub fn fps<T: Scalar>(points: &[Point<T>], count: usize, start: FpsStart) -> Result<Vec<usize>> {
    let n = points.len();
    if count == 0 || count > n {
        return Err(Error::Config(format!(
            "cannot pick {count} anchors from {n} points"
        )));
    }
    let first = match start {
        FpsStart::FarthestFromCentroid => {
            let c = centroid(points);
            argmax_first(points.iter().map(|p| dist2(p, &c)))
        }
        FpsStart::Index(i) if i < n => i,
        FpsStart::Index(i) => {
            return Err(Error::Index {
                what: "fps start",
                index: i,
                len: n,
            })
        }
    };
    let mut selected = Vec::with_capacity(count);
    let mut min_d = vec![T::infinity(); n];
    let mut cur = first;
    loop {
        selected.push(cur);
        // Selected points drop out of contention, even against duplicates.
        min_d[cur] = -T::one();
        if selected.len() == count {
            break;
        }
        let anchor = points[cur];
        let mut best = usize::MAX;
        let mut best_d = -T::one();
        for (i, p) in points.iter().enumerate() {
            if min_d[i] < T::zero() {
                continue;
            }
            let d = dist2(p, &anchor);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        cur = best;
    }
    Ok(selected)
}

fn argmax_first<T: Scalar>(values: impl Iterator<Item = T>) -> usize {
    let mut best = 0;
    let mut best_v = T::neg_infinity();
    for (i, v) in values.enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Anchors with their `k` nearest neighbours each. Flat arrays are
/// row-major `P × k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet<T> {
    pub anchor_indices: Vec<usize>,
    pub anchors: Vec<Point<T>>,
    pub k: usize,
    pub neighbor_indices: Vec<usize>,
    /// Neighbour minus anchor.
    pub relative: Vec<Point<T>>,
    /// Raw neighbour coordinates.
    pub absolute: Vec<Point<T>>,
    /// Extra channels of each neighbour, when the source cloud has them.
    pub extras: Option<Vec<Point<T>>>,
}

impl<T: Scalar> PatchSet<T> {
    pub fn num_patches(&self) -> usize {
        self.anchors.len()
    }

    pub fn neighbors(&self, p: usize) -> &[usize] {
        &self.neighbor_indices[p * self.k..(p + 1) * self.k]
    }

    /// Reorders the neighbours of patch `p` by `perm` (a permutation of `0..k`).
    pub fn permute_patch(&mut self, p: usize, perm: &[usize]) {
        assert_eq!(perm.len(), self.k);
        let base = p * self.k;
        let take = |v: &[Point<T>]| -> Vec<Point<T>> { perm.iter().map(|&j| v[base + j]).collect() };
        let rel = take(&self.relative);
        let abs = take(&self.absolute);
        let idx: Vec<usize> = perm.iter().map(|&j| self.neighbor_indices[base + j]).collect();
        self.relative[base..base + self.k].copy_from_slice(&rel);
        self.absolute[base..base + self.k].copy_from_slice(&abs);
        self.neighbor_indices[base..base + self.k].copy_from_slice(&idx);
        if let Some(ex) = &mut self.extras {
            let e = take(ex);
            ex[base..base + self.k].copy_from_slice(&e);
        }
    }
}

/// Exact kNN per anchor by partial selection; neighbours are ordered by
/// `(distance, index)` so the anchor itself comes first.
pub fn knn_group<T: Scalar>(cloud: &PointCloud<T>, anchor_indices: &[usize], k: usize) -> Result<PatchSet<T>> {
    let points = &cloud.points;
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::Config(format!("cannot group {k} neighbours from {n} points")));
    }
    if let Some(&bad) = anchor_indices.iter().find(|&&a| a >= n) {
        return Err(Error::Index {
            what: "anchor indices",
            index: bad,
            len: n,
        });
    }
    let p = anchor_indices.len();
    let mut set = PatchSet {
        anchor_indices: anchor_indices.to_vec(),
        anchors: anchor_indices.iter().map(|&a| points[a]).collect(),
        k,
        neighbor_indices: Vec::with_capacity(p * k),
        relative: Vec::with_capacity(p * k),
        absolute: Vec::with_capacity(p * k),
        extras: cloud.extras.as_ref().map(|_| Vec::with_capacity(p * k)),
    };
    let mut cand: Vec<(T, usize)> = Vec::with_capacity(n);
    for &a in anchor_indices {
        let anchor = points[a];
        cand.clear();
        cand.extend(points.iter().enumerate().map(|(i, q)| (dist2(q, &anchor), i)));
        let by_dist_then_index =
            |x: &(T, usize), y: &(T, usize)| x.0.partial_cmp(&y.0).unwrap_or(Ordering::Equal).then(x.1.cmp(&y.1));
        if k < n {
            cand.select_nth_unstable_by(k - 1, by_dist_then_index);
        }
        let nearest = &mut cand[..k];
        nearest.sort_unstable_by(by_dist_then_index);
        for &(_, i) in nearest.iter() {
            let q = points[i];
            set.neighbor_indices.push(i);
            set.absolute.push(q);
            set.relative.push([q[0] - anchor[0], q[1] - anchor[1], q[2] - anchor[2]]);
            if let (Some(out), Some((_, ex))) = (&mut set.extras, &cloud.extras) {
                out.push(ex[i]);
            }
        }
    }
    Ok(set)
}
