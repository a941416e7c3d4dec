//! Run-config resolution: preset, then config file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pointy::backbone::{MergeStrategy, ModelConfig};
use pointy::data::SyntheticSpec;
use pointy::train::{DataSource, Precision, RunConfig, TrainConfig};
use serde_json::Value;

use crate::{Cli, MergeArg, PrecisionArg, TrainArgs};

pub fn precision(arg: PrecisionArg) -> Precision {
    match arg {
        PrecisionArg::F32 => Precision::F32,
        PrecisionArg::F64 => Precision::F64,
    }
}

pub fn merge(arg: MergeArg) -> MergeStrategy {
    match arg {
        MergeArg::Addition => MergeStrategy::Addition,
        MergeArg::Linear => MergeStrategy::Linear,
    }
}

/// Parses a data spec; synthetic specs take `seed`.
pub fn data_source(spec: &str, seed: u64) -> Result<DataSource> {
    let Some((kind, rest)) = spec.split_once(':') else {
        bail!("data spec `{spec}` must look like synth:<name> or manifest:<path>");
    };
    match kind {
        "synth" => Ok(DataSource::Synthetic(match rest {
            "default" => SyntheticSpec::default_benchmark(seed),
            "transfer" => SyntheticSpec::transfer_benchmark(seed),
            list => {
                let classes: Vec<String> = list.split(',').map(str::to_string).collect();
                for c in &classes {
                    pointy::data::Shape::parse(c)?;
                }
                SyntheticSpec {
                    classes,
                    ..SyntheticSpec::default_benchmark(seed)
                }
            }
        })),
        "manifest" => {
            let mut parts = rest.splitn(2, ',');
            let path = parts.next().unwrap_or_default().to_string();
            if path.is_empty() {
                bail!("manifest spec needs a path");
            }
            Ok(DataSource::Manifest {
                path,
                test_path: parts.next().map(str::to_string),
            })
        }
        other => bail!("unknown data kind `{other}` (valid: synth, manifest)"),
    }
}

/// Recursively overlays `top` onto `base`.
fn merge_json(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                merge_json(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| pointy::Error::Parse {
        file: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    }.into())
}

/// Builds the run config with precedence preset < `--config` file < flags.
pub fn run_config(cli: &Cli, args: &TrainArgs) -> Result<RunConfig> {
    let seed = cli.seed.unwrap_or(0);
    let preset = args.preset.as_deref().unwrap_or("small");
    let base = RunConfig {
        model: ModelConfig::from_preset(preset, 1)?,
        train: TrainConfig {
            seed,
            ..TrainConfig::default()
        },
        data: data_source("synth:default", seed)?,
        precision: Precision::F32,
        out_dir: String::new(),
    };
    let mut value = serde_json::to_value(&base)?;
    if let Some(path) = &cli.config {
        merge_json(&mut value, read_json(path)?);
    }
    let mut run: RunConfig = serde_json::from_value(value).context("invalid run config")?;

    if let Some(s) = cli.seed {
        run.train.seed = s;
        if let DataSource::Synthetic(spec) = &mut run.data {
            spec.seed = s;
        }
    }
    if let Some(p) = cli.precision {
        run.precision = precision(p);
    }
    if let Some(d) = &args.data {
        run.data = data_source(d, run.train.seed)?;
    }
    let m = &mut run.model;
    let t = &mut run.train;
    macro_rules! set {
        ($flag:expr => $slot:expr) => {
            if let Some(v) = $flag {
                $slot = v;
            }
        };
    }
    set!(args.epochs => t.epochs);
    set!(args.lr => t.lr);
    set!(args.batch_size => t.batch_size);
    set!(args.points => m.n_points);
    set!(args.dim => m.dim);
    set!(args.heads => m.heads);
    set!(args.patches => m.patches);
    set!(args.k => m.k);
    if let Some(s) = args.merge {
        m.merge_strategy = merge(s);
    }
    if args.flat {
        m.hierarchical = false;
    }
    if args.no_positional {
        m.use_positional = false;
    }
    if args.no_augment {
        t.augment = false;
    }
    if args.stop_at_oa.is_some() {
        t.stop_at_oa = args.stop_at_oa;
    }
    if !args.freeze.is_empty() {
        t.freeze = args.freeze.clone();
    }
    if args.deterministic {
        t.deterministic = true;
    }
    run.model.num_classes = run.data.num_classes()?;
    if let DataSource::Synthetic(spec) = &mut run.data {
        spec.n_points = run.model.n_points;
    }
    if let Some(out) = &args.out {
        run.out_dir = out.display().to_string();
    } else if run.out_dir.is_empty() {
        run.out_dir = cli.out_root.join(format!("train-s{}", run.train.seed)).display().to_string();
    }
    run.validate()?;
    Ok(run)
}

pub fn out_path(explicit: Option<&PathBuf>, fallback: PathBuf) -> PathBuf {
    explicit.cloned().unwrap_or(fallback)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_overlay_is_recursive() {
        let mut a = serde_json::json!({"model": {"dim": 192, "heads": 64}, "x": 1});
        merge_json(&mut a, serde_json::json!({"model": {"dim": 96}}));
        assert_eq!(a, serde_json::json!({"model": {"dim": 96, "heads": 64}, "x": 1}));
    }

    #[test]
    fn data_specs() {
        assert!(matches!(data_source("synth:default", 3).unwrap(), DataSource::Synthetic(s) if s.seed == 3));
        match data_source("manifest:a.csv,b.csv", 0).unwrap() {
            DataSource::Manifest { path, test_path } => {
                assert_eq!(path, "a.csv");
                assert_eq!(test_path.as_deref(), Some("b.csv"));
            }
            other => panic!("{other:?}"),
        }
        assert!(data_source("synth:pyramid", 0).is_err());
        assert!(data_source("nope", 0).is_err());
    }
}
