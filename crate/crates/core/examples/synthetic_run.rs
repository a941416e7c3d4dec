//! Trains the reduced model on the 4-class synthetic benchmark and prints
//! per-epoch accuracy. Usage: `synthetic_run [seed] [epochs]`.

use pointy::backbone::ModelConfig;
use pointy::data::SyntheticSpec;
use pointy::train::{DataSource, Precision, RunConfig, TrainConfig, Trainer};

fn main() -> pointy::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let epochs: usize = args.next().map_or(30, |s| s.parse().expect("epochs"));
    let model = ModelConfig {
        dim: 96,
        heads: 32,
        patches: 32,
        k: 16,
        n_points: 512,
        ..ModelConfig::small(4)
    };
    let data = DataSource::Synthetic(SyntheticSpec::default_benchmark(seed));
    let run = RunConfig {
        model,
        train: TrainConfig { epochs, seed, ..TrainConfig::default() },
        data: data.clone(),
        precision: Precision::F32,
        out_dir: String::new(),
    };
    let split = data.load::<f32>(512, seed)?;
    let mut trainer = Trainer::new(run, split)?;
    while trainer.epoch() < epochs {
        let m = trainer.run_epoch()?;
        println!("epoch {:>2} loss {:.4} oa {:.2} {:.1}s", m.epoch, m.train_loss, m.test_oa, m.wall_time_s);
    }
    Ok(())
}
