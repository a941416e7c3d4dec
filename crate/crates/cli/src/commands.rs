use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use pointy::backbone::{count_flops, count_params, ModelConfig};
use pointy::data::{self, Dataset, SyntheticSpec};
use pointy::train::{
    evaluate, prepare_all, read_history, Checkpoint, DataSource, Precision, RunConfig, Trainer, HISTORY_FILE,
    LAST_CHECKPOINT,
};
use pointy::zeroshot::{self, ZeroShotReport};
use pointy::Scalar;
use serde_json::json;

use crate::resolve::{self, out_path};
use crate::{Cli, Command, EvalArgs, ParamsArgs, ReportArgs, SynthArgs, TrainArgs, ZeroshotArgs};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Train(a) => train(cli, a).map(|_| ()),
        Command::Eval(a) => eval(cli, a),
        Command::Zeroshot(a) => zeroshot(cli, a),
        Command::Report(a) => report(cli, a),
        Command::Params(a) => params(a),
    }
}

fn synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        classes: args.classes.clone(),
        per_class: args.per_class,
        n_points: args.points,
        noise_sigma: args.noise,
        seed: cli.seed.unwrap_or(0),
    };
    let ds: Dataset<f32> = data::gen_synthetic(&spec)?;
    let out = out_path(args.out.as_ref(), cli.out_root.join("synth"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut rows = Vec::with_capacity(ds.len());
    for (cloud, &label) in ds.clouds.iter().zip(&ds.labels) {
        let file = out.join(format!("{}.pcf", cloud.id));
        data::save_pcf(cloud, &file)?;
        rows.push((file, ds.class_names[label].clone()));
    }
    let manifest = out.join("manifest.csv");
    data::write_manifest(&manifest, &rows)?;
    println!("{}", json!({"files": rows.len(), "manifest": manifest.display().to_string()}));
    Ok(())
}

fn print_params(cfg: &ModelConfig) {
    let p = count_params(cfg);
    for (name, n) in &p.items {
        println!("{name:<28} {n:>12}");
    }
    println!("{:<28} {:>12}", "total", p.total);
}

/// Trains per the resolved config; returns the run directory.
fn train(cli: &Cli, args: &TrainArgs) -> Result<PathBuf> {
    if let Some(ckpt) = &args.resume {
        return resume(cli, args, ckpt);
    }
    let run = resolve::run_config(cli, args)?;
    if args.dry_run {
        println!("{}", serde_json::to_string_pretty(&run)?);
        print_params(&run.model);
        return Ok(PathBuf::from(&run.out_dir));
    }
    match run.precision {
        Precision::F32 => train_with::<f32>(run, None),
        Precision::F64 => train_with::<f64>(run, None),
    }
}

fn resume(cli: &Cli, args: &TrainArgs, path: &Path) -> Result<PathBuf> {
    let probe = Checkpoint::<f64>::load(path).with_context(|| format!("loading {}", path.display()))?;
    let mut run = probe.meta.run;
    if let Some(e) = args.epochs {
        run.train.epochs = e;
    }
    if let Some(out) = &args.out {
        run.out_dir = out.display().to_string();
    }
    if cli.precision.is_some() {
        log::warn!("--precision is ignored when resuming; the checkpoint's precision is kept");
    }
    match run.precision {
        Precision::F32 => train_with::<f32>(run, Some(path)),
        Precision::F64 => train_with::<f64>(run, Some(path)),
    }
}

fn train_with<T: Scalar>(run: RunConfig, resume: Option<&Path>) -> Result<PathBuf> {
    let out = PathBuf::from(&run.out_dir);
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(&run)?)
        .with_context(|| format!("writing config to {}", out.display()))?;
    let split = run.data.load::<T>(run.model.n_points, run.train.seed)?;
    info!(
        "{} train / {} test clouds, {} classes, {} parameters",
        split.train.len(),
        split.test.len(),
        split.train.num_classes(),
        count_params(&run.model).total
    );
    let mut trainer = match resume {
        Some(path) => {
            let mut ckpt = Checkpoint::<T>::load(path)?;
            ckpt.meta.run = run;
            Trainer::resume(&ckpt, split)?
        }
        None => Trainer::new(run, split)?,
    };
    let summary = trainer.fit(Some(&out))?;
    if summary.epochs_run == 0 {
        trainer.checkpoint().save(out.join(LAST_CHECKPOINT))?;
    }
    println!(
        "{}",
        json!({
            "out_dir": out.display().to_string(),
            "epochs": trainer.epoch(),
            "best_epoch": summary.best_epoch,
            "best_oa": summary.best_oa,
            "final_oa": summary.final_oa,
            "stopped_early": summary.stopped_early,
        })
    );
    Ok(out)
}

fn checkpoint_precision(cli: &Cli, path: &Path) -> Result<(Precision, RunConfig)> {
    let ckpt = Checkpoint::<f64>::load(path).with_context(|| format!("loading {}", path.display()))?;
    let p = cli.precision.map(resolve::precision).unwrap_or(ckpt.meta.run.precision);
    Ok((p, ckpt.meta.run))
}

fn eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let (precision, run) = checkpoint_precision(cli, &args.checkpoint)?;
    let seed = cli.seed.unwrap_or(run.train.seed);
    let source = match &args.data {
        Some(spec) => resolve::data_source(spec, seed)?,
        None => run.data.clone(),
    };
    let oa = match precision {
        Precision::F32 => eval_with::<f32>(&args.checkpoint, &source, seed)?,
        Precision::F64 => eval_with::<f64>(&args.checkpoint, &source, seed)?,
    };
    println!(
        "{}",
        json!({"checkpoint": args.checkpoint.display().to_string(), "oa": oa.0, "samples": oa.1})
    );
    Ok(())
}

fn eval_with<T: Scalar>(path: &Path, source: &DataSource, seed: u64) -> Result<(f64, usize)> {
    let model = Checkpoint::<T>::load(path)?.model()?;
    let split = source.load::<T>(model.config().n_points, seed)?;
    if split.test.num_classes() != model.config().num_classes {
        bail!(pointy::Error::Config(format!(
            "checkpoint predicts {} classes, data has {}",
            model.config().num_classes,
            split.test.num_classes()
        )));
    }
    let inputs = prepare_all(&model, &split.test)?;
    Ok((evaluate(&model, &inputs, &split.test.labels)?, inputs.len()))
}

fn zeroshot(cli: &Cli, args: &ZeroshotArgs) -> Result<()> {
    let (precision, run) = checkpoint_precision(cli, &args.checkpoint)?;
    let seed = cli.seed.unwrap_or(run.train.seed);
    let target = resolve::data_source(&args.target, seed)?;
    let report = match precision {
        Precision::F32 => zeroshot_with::<f32>(args, &target, seed)?,
        Precision::F64 => zeroshot_with::<f64>(args, &target, seed)?,
    };
    let text = serde_json::to_string_pretty(&report)?;
    let out = out_path(
        args.out.as_ref(),
        args.checkpoint.with_file_name("zeroshot.json"),
    );
    fs::write(&out, &text).with_context(|| format!("writing {}", out.display()))?;
    println!("{text}");
    Ok(())
}

fn zeroshot_with<T: Scalar>(args: &ZeroshotArgs, target: &DataSource, seed: u64) -> Result<ZeroShotReport> {
    let model = Checkpoint::<T>::load(&args.checkpoint)?.model()?;
    let split = target.load::<T>(model.config().n_points, seed)?;
    let result = zeroshot::zeroshot_eval(&model, &split.train, &split.test, &args.topk)?;
    if let Some(path) = &args.rankings {
        zeroshot::write_rankings(path, &split.test, &result)?;
    }
    Ok(ZeroShotReport::new(
        args.checkpoint.display().to_string(),
        args.target.clone(),
        &result,
    ))
}

/// Run label: the parent directory of a `history.csv`, else the file stem.
fn run_name(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if path.file_name().is_some_and(|n| n == HISTORY_FILE) {
        if let Some(dir) = path.parent().and_then(Path::file_name) {
            return dir.to_string_lossy().into_owned();
        }
    }
    stem
}

fn report(cli: &Cli, args: &ReportArgs) -> Result<()> {
    let mut histories: Vec<(String, PathBuf)> = args.histories.iter().map(|p| (run_name(p), p.clone())).collect();
    if let Some(sweep) = &args.sweep {
        let Some(("points", values)) = sweep.split_once('=') else {
            bail!(pointy::Error::Config(format!("unsupported sweep `{sweep}` (expected points=N,N,...)")));
        };
        for v in values.split(',') {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| pointy::Error::Config(format!("invalid point count `{v}`")))?;
            let mut t = args.train.clone();
            t.points = Some(n);
            let base = args.train.out.clone().unwrap_or_else(|| cli.out_root.join("sweep"));
            t.out = Some(base.join(format!("points_{n}")));
            let dir = train(cli, &t)?;
            histories.push((format!("points_{n}"), dir.join(HISTORY_FILE)));
        }
    }
    if histories.is_empty() {
        bail!(pointy::Error::Config("report needs at least one history CSV or --sweep".into()));
    }
    let out = out_path(args.csv.as_ref(), cli.out_root.join("report.csv"));
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut w = csv::Writer::from_path(&out).with_context(|| format!("writing {}", out.display()))?;
    w.write_record(["run", "epoch", "metric", "value"])?;
    let mut rows = 0;
    for (name, path) in &histories {
        let n = seen.entry(name.clone()).or_insert(0);
        *n += 1;
        let label = if *n > 1 { format!("{name}_{n}") } else { name.clone() };
        for m in read_history(path)? {
            for (metric, value) in [
                ("train_loss", m.train_loss),
                ("test_oa", m.test_oa),
                ("wall_time_s", m.wall_time_s),
            ] {
                w.write_record([label.clone(), m.epoch.to_string(), metric.to_string(), value.to_string()])?;
                rows += 1;
            }
        }
    }
    w.flush()?;
    println!("{}", json!({"csv": out.display().to_string(), "rows": rows, "runs": histories.len()}));
    Ok(())
}

fn params(args: &ParamsArgs) -> Result<()> {
    let cfg = ModelConfig {
        n_points: args.points,
        merge_strategy: resolve::merge(args.merge),
        ..ModelConfig::from_preset(&args.preset, args.classes)?
    };
    cfg.validate()?;
    let p = count_params(&cfg);
    let f = count_flops(&cfg, args.points);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&json!({"params": p, "flops": f}))?);
    } else {
        print_params(&cfg);
        println!();
        for (name, n) in &f.items {
            println!("{name:<28} {n:>16}");
        }
        println!("{:<28} {:>16}  ({:.2} GFLOPs)", "total flops", f.total, f.total as f64 / 1e9);
    }
    Ok(())
}
