use std::f64::consts::{PI, TAU};

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotate_z, PointCloud};
use crate::numerics::rng::{seeded, streams};
use crate::numerics::{Rng, Scalar};

use super::Dataset;

/// Analytic surfaces of the synthetic benchmark, each sized to fit `[-1, 1]³`
/// before the per-sample random scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    /// Unit sphere.
    Sphere,
    /// Surface of `[-1, 1]³`.
    Cube,
    /// Radius 1, `z ∈ [-1, 1]`, with caps.
    Cylinder,
    /// Base radius 1 at `z = -1`, apex at `z = 1`, with base disk.
    Cone,
    /// Major radius 0.7, minor radius 0.3, around the z axis.
    Torus,
    /// `[-1, 1]²` at `z = 0`.
    Plane,
    /// Two turns of radius 1 rising from `z = -1` to `z = 1`.
    Helix,
}

impl Shape {
    pub const ALL: [Shape; 7] = [
        Shape::Sphere,
        Shape::Cube,
        Shape::Cylinder,
        Shape::Cone,
        Shape::Torus,
        Shape::Plane,
        Shape::Helix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Sphere => "sphere",
            Shape::Cube => "cube",
            Shape::Cylinder => "cylinder",
            Shape::Cone => "cone",
            Shape::Torus => "torus",
            Shape::Plane => "plane",
            Shape::Helix => "helix",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name).ok_or_else(|| Error::UnknownClass {
            name: name.to_string(),
            valid: Self::ALL.map(Shape::name).join(", "),
        })
    }

    fn stream(self) -> u64 {
        streams::SYNTH_BASE + Self::ALL.iter().position(|&s| s == self).unwrap() as u64
    }
}

fn uniform_disk(rng: &mut Rng) -> (f64, f64) {
    let r = rng.random::<f64>().sqrt();
    let t = rng.random_range(0.0..TAU);
    (r * t.cos(), r * t.sin())
}

/// `n` noise-free points on the unit-sized surface, uniform by area (by
/// arc length for the helix).
pub fn sample_shape(shape: Shape, n: usize, rng: &mut Rng) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| match shape {
            Shape::Sphere => loop {
                let v: [f64; 3] = [
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                ];
                let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if norm > 1e-12 {
                    break v.map(|c| c / norm);
                }
            },
            Shape::Cube => {
                let face = rng.random_range(0..6usize);
                let axis = face / 2;
                let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                let mut p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0];
                p.swap(axis, 2);
                p[axis] = sign;
                p
            }
            Shape::Cylinder => {
                // Side area 4π against 2π for both caps.
                if rng.random::<f64>() < 2.0 / 3.0 {
                    let t = rng.random_range(0.0..TAU);
                    [t.cos(), t.sin(), rng.random_range(-1.0..1.0)]
                } else {
                    let (x, y) = uniform_disk(rng);
                    [x, y, if rng.random::<bool>() { 1.0 } else { -1.0 }]
                }
            }
            Shape::Cone => {
                let slant = 5f64.sqrt();
                if rng.random::<f64>() < slant / (slant + 1.0) {
                    // Radius grows linearly from the apex, so area density ∝ t.
                    let t = rng.random::<f64>().sqrt();
                    let a = rng.random_range(0.0..TAU);
                    [t * a.cos(), t * a.sin(), 1.0 - 2.0 * t]
                } else {
                    let (x, y) = uniform_disk(rng);
                    [x, y, -1.0]
                }
            }
            Shape::Torus => {
                let (major, minor) = (0.7, 0.3);
                loop {
                    let u = rng.random_range(0.0..TAU);
                    let v = rng.random_range(0.0..TAU);
                    let ring = major + minor * v.cos();
                    if rng.random::<f64>() * (major + minor) <= ring {
                        break [ring * u.cos(), ring * u.sin(), minor * v.sin()];
                    }
                }
            }
            Shape::Plane => [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0],
            Shape::Helix => {
                let t = rng.random_range(0.0..2.0 * TAU);
                [t.cos(), t.sin(), t / (2.0 * PI) - 1.0]
            }
        })
        .collect()
}

/// Parameters of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: Vec<String>,
    pub per_class: usize,
    pub n_points: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Sphere, cube, cylinder and plane; 200 per class, 512 points, σ = 0.02.
    pub fn default_benchmark(seed: u64) -> Self {
        Self {
            classes: ["sphere", "cube", "cylinder", "plane"].map(String::from).to_vec(),
            per_class: 200,
            n_points: 512,
            noise_sigma: 0.02,
            seed,
        }
    }

    /// The held-out classes cone, torus and helix with default sizes.
    pub fn transfer_benchmark(seed: u64) -> Self {
        Self {
            classes: ["cone", "torus", "helix"].map(String::from).to_vec(),
            ..Self::default_benchmark(seed)
        }
    }
}

/// Generates `per_class` samples of every listed shape, each with a random
/// scale in `[0.7, 1.3]`, a random z rotation and Gaussian coordinate noise.
///
/// Every shape draws from its own seeded stream, so a class's samples do not
/// depend on which other classes are requested.
pub fn gen_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Result<Dataset<T>> {
    if spec.per_class == 0 {
        return Err(Error::Config("per_class must be ≥ 1".into()));
    }
    if spec.n_points < 8 {
        return Err(Error::Config("synthetic clouds need at least 8 points".into()));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(Error::Config(format!("invalid noise sigma {}", spec.noise_sigma)));
    }
    let mut shapes = spec.classes.iter().map(|c| Shape::parse(c)).collect::<Result<Vec<_>>>()?;
    shapes.sort_by_key(|s| s.name());
    shapes.dedup();
    let class_names: Vec<String> = shapes.iter().map(|s| s.name().to_string()).collect();
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).expect("finite sigma");

    let mut clouds = Vec::with_capacity(shapes.len() * spec.per_class);
    let mut labels = Vec::with_capacity(clouds.capacity());
    for (label, &shape) in shapes.iter().enumerate() {
        let mut rng = seeded(spec.seed, shape.stream());
        for i in 0..spec.per_class {
            let scale = rng.random_range(0.7..=1.3);
            let angle = rng.random_range(0.0..TAU);
            let pts = sample_shape(shape, spec.n_points, &mut rng)
                .into_iter()
                .map(|p| p.map(|c| c * scale))
                .collect();
            let cloud = rotate_z(&PointCloud::<f64>::new(pts)?, angle);
            let points = cloud
                .points
                .iter()
                .map(|p| {
                    if spec.noise_sigma > 0.0 {
                        p.map(|c| T::lit(c + noise.sample(&mut rng)))
                    } else {
                        p.map(T::lit)
                    }
                })
                .collect();
            let cloud = PointCloud::new(points)?
                .with_label(label)
                .with_id(format!("{}_{i:04}", shape.name()));
            clouds.push(cloud);
            labels.push(label);
        }
    }
    Dataset::new(clouds, labels, class_names, format!("synthetic:{}", spec.classes.join(",")))
}
