use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_unit_range, sample_uniform};
use crate::numerics::rng::{seeded, streams};
use crate::numerics::Scalar;

use super::{load_cloud, Dataset};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Row {
    path: String,
    class: String,
}

/// Parsed `path,class` CSV. Relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub rows: Vec<(PathBuf, String)>,
    /// Sorted, deduplicated class names; index = class label.
    pub classes: Vec<String>,
}

impl Manifest {
    pub fn label(&self, class: &str) -> usize {
        self.classes.binary_search_by(|c| c.as_str().cmp(class)).expect("class from this manifest")
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        _ => Error::Csv(e),
    })?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["path", "class"] {
        return Err(Error::Parse {
            file: path.display().to_string(),
            line: 1,
            msg: "expected header `path,class`".into(),
        });
    }
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in reader.deserialize::<Row>().enumerate() {
        let row = rec.map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: i + 2,
            msg: e.to_string(),
        })?;
        let file = base.join(&row.path);
        if !seen.insert(file.clone()) {
            return Err(Error::Parse {
                file: path.display().to_string(),
                line: i + 2,
                msg: format!("duplicate path `{}`", row.path),
            });
        }
        rows.push((file, row.class));
    }
    if rows.is_empty() {
        return Err(Error::Empty(format!("manifest {}", path.display())));
    }
    let classes: BTreeSet<String> = rows.iter().map(|(_, c)| c.clone()).collect();
    Ok(Manifest {
        rows,
        classes: classes.into_iter().collect(),
    })
}

/// Writes a manifest with paths relative to `path`'s directory when possible.
pub fn write_manifest(path: impl AsRef<Path>, rows: &[(PathBuf, String)]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["path", "class"])?;
    for (file, class) in rows {
        let rel = file.strip_prefix(base).unwrap_or(file);
        w.write_record([rel.to_string_lossy().as_ref(), class.as_str()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Stable per-file seed so resampling does not depend on row order.
fn path_seed(seed: u64, path: &Path) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in path.to_string_lossy().bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ seed
}

/// Loads every listed cloud, resamples it to `n_points` and normalizes it
/// to `[-1, 1]`. Labels are ranks of the sorted class names.
pub fn load_manifest<T: Scalar>(path: impl AsRef<Path>, n_points: usize, seed: u64) -> Result<Dataset<T>> {
    let manifest = read_manifest(path.as_ref())?;
    let mut clouds = Vec::with_capacity(manifest.rows.len());
    let mut labels = Vec::with_capacity(manifest.rows.len());
    for (file, class) in &manifest.rows {
        let raw = load_cloud::<T>(file)?;
        let mut rng = seeded(path_seed(seed, file), streams::SAMPLE);
        let label = manifest.label(class);
        let cloud = normalize_unit_range(&sample_uniform(&raw, n_points, &mut rng)?)?.with_label(label);
        clouds.push(cloud);
        labels.push(label);
    }
    Dataset::new(clouds, labels, manifest.classes, path.as_ref().display().to_string())
}
