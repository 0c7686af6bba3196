//! Trains a small fused model on a synthetic corpus and prints progress.
//!
//! Usage: train_probe [epochs] [scale] [aug] [lr] [init] [subjects] [steps]

use std::time::Instant;

use gaittrack::gaitsim::{generate_corpus, ParamRanges};
use gaittrack::model::{Depth, InitScheme, ModelConfig, Regressor, Variant};
use gaittrack::pipeline::{build_dataset, AugmentSpec, SplitMode, SplitSpec};
use gaittrack::training::{evaluate, train_observed, AdamConfig, TrainConfig};
use gaittrack::trajectory::Protocol;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let epochs: usize = arg(1, "20").parse().unwrap();
    let scale: gaittrack::Scale = arg(2, "1/8").parse().unwrap();
    let aug = AugmentSpec::with_mode(arg(3, "combined").parse().unwrap());
    let lr: f64 = arg(4, "0.01").parse().unwrap();
    let init: InitScheme = arg(5, "normal:0.01").parse().unwrap();
    let subjects: usize = arg(6, "10").parse().unwrap();
    let per: usize = arg(7, "50").parse().unwrap();

    let t0 = Instant::now();
    let corpus = generate_corpus(subjects, per, &ParamRanges::default(), 1).unwrap();
    let steps: Vec<_> = corpus.iter().map(|s| s.segment.clone()).collect();
    let split = SplitSpec { mode: SplitMode::by_step(), seed: 2 };
    let data = build_dataset(&steps, &aug, &split).unwrap();
    println!("{}", data.report);
    let mean_stride: f64 = corpus.iter().map(|s| s.params.stride() * 100.0).sum::<f64>() / corpus.len() as f64;
    println!("mean stride {:.1} cm, data built in {:.1?}", mean_stride, t0.elapsed());

    let cfg = ModelConfig::new(Variant::Fused, Depth::Conv9).with_scale(scale);
    let mut reg = Regressor::<f32>::build(&cfg, init, 3).unwrap();
    let tc = TrainConfig {
        adam: AdamConfig { lr, ..AdamConfig::default() },
        epochs,
        seed: 4,
        ..TrainConfig::default()
    };
    let t1 = Instant::now();
    let hist = train_observed(&mut reg, &data.train, &data.val, &tc, &mut |r| {
        println!(
            "epoch {:4} train {:9.4} val {:9.4} rmse {:.4} {:.4} {:.4}  [{:.1?}]",
            r.epoch, r.train_loss, r.val_loss, r.rmse[0], r.rmse[1], r.rmse[2], t1.elapsed()
        );
    })
    .unwrap();
    println!("best epoch {:?}", hist.best_epoch);
    let ev = evaluate(&reg, &data.test, Protocol::MixedStep, 100).unwrap();
    println!("{}", ev.report);
}
