//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 8 and 9 drive the `gaittrack` binary through the whole pipeline
//! on a 10-subject x 50-step corpus and take most of an hour on one core.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use gaittrack::gaitsim::{generate_corpus, ParamRanges};
use gaittrack::gradcheck::{check_layer, check_model, LayerOp};
use gaittrack::model::{Depth, InitScheme, ModelConfig, Variant};
use gaittrack::pipeline::{
    augment_step, build_dataset, differentiate, load_dataset, load_steps, make_window, split_steps, AugmentMode,
    AugmentSpec, Dataset, SplitKind, SplitMode, SplitSpec, WindowTag,
};
use gaittrack::tensor::Tensor;
use gaittrack::training::{fused_loss, train, AdamConfig, TrainConfig};
use gaittrack::trajectory::{parse_per_step_csv, reconstruct};
use gaittrack::{Regressor32, Scale};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use walkdir::WalkDir;

/// Criteria that do not pass with this implementation. They still run and
/// print FAIL; any other failure fails the target.
///
/// 7: the 10-window overfit ends near 1.07% of the initial loss at epoch 500.
/// 8: all error bounds hold, but combined and sliding-only augmentation land
///    within run-to-run noise of each other, so the X ordering is not stable.
const UNATTAINED: &[usize] = &[7, 8];

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1

fn shapes(runs: &Path) -> Outcome {
    let mut count = 0;
    for cond in CONDITIONS {
        let dir = runs.join(format!("data_{}", cond.name));
        for split in ["train", "val", "test"] {
            let ds = load_dataset(&dir, split).map_err(|e| e.to_string())?;
            for w in &ds.windows {
                check(w.x.shape() == [6, 149] && w.y.shape() == [3, 29], || {
                    format!("{} {} window has {:?} -> {:?}", cond.name, split, w.x.shape(), w.y.shape())
                })?;
                count += 1;
            }
        }
    }
    Ok(format!("{count} windows are 6x149 -> 3x29"))
}

// ---------------------------------------------------------------- 2

fn gradients() -> Outcome {
    let mut trials = 0;
    let mut worst: f64 = 0.0;
    for op in LayerOp::ALL {
        let s = check_layer(op, 100, 2024);
        check(s.trials >= 100 && s.max_rel_error <= 1e-6, || format!("{}: {}", op.name(), s))?;
        check(s.skipped * 20 <= s.checked, || format!("{}: too many skipped coordinates ({})", op.name(), s))?;
        trials += s.trials;
        worst = worst.max(s.max_rel_error);
    }
    let cfg = ModelConfig::new(Variant::Fused, Depth::Conv9).with_scale(Scale::new(1, 16));
    let m = check_model(&cfg, 4, 5, 77);
    check(m.checked > 100 && m.max_rel_error <= 1e-4, || format!("model: {}", m))?;
    Ok(format!(
        "{} layer trials, max rel err {:.2e}; model {} coords, max rel err {:.2e}",
        trials, worst, m.checked, m.max_rel_error
    ))
}

// ---------------------------------------------------------------- 3

fn parameters() -> Outcome {
    let conv9 = Regressor32::zeros(&ModelConfig::new(Variant::Fused, Depth::Conv9)).map_err(|e| e.to_string())?;
    let report = conv9.count_parameters();
    println!("{}", report);
    let (diff, rel) = report.compare(16_274_711);
    let conv5 = Regressor32::zeros(&ModelConfig::new(Variant::Fused, Depth::Conv5)).map_err(|e| e.to_string())?;
    let (diff5, rel5) = conv5.count_parameters().compare(17_069_015);
    check(rel.abs() <= 1e-3, || format!("conv9 {} differs by {} ({:.4}%)", report.total(), diff, rel * 100.0))?;
    Ok(format!(
        "conv9 {} vs 16,274,711: {:+} ({:+.4}%); conv5 {} vs 17,069,015: {:+} ({:+.2}%, documented)",
        report.total(),
        diff,
        rel * 100.0,
        conv5.count_parameters().total(),
        diff5,
        rel5 * 100.0
    ))
}

// ---------------------------------------------------------------- 4

fn loss_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let base: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::from_fn(&[4, 29], |_| rng.random_range(-2.0..2.0))).collect();
    check(fused_loss(&base, &base, 10.0, 10.0).unwrap() == 0.0, || "nonzero loss on a perfect match".into())?;
    for axis in 0..3 {
        let mut p = base.clone();
        p[axis].data_mut()[17] += 1e-6;
        check(fused_loss(&p, &base, 10.0, 10.0).unwrap() > 0.0, || format!("axis {axis} mismatch costs nothing"))?;
    }
    for delta in [1e-3, 0.25, -3.0] {
        let mut p = base.clone();
        p[1] = p[1].map(|v| v + delta);
        let l = fused_loss(&p, &base, 10.0, 10.0).unwrap();
        check((l - 10.0 * f64::abs(delta)).abs() <= 1e-12, || format!("Y residual {delta} costs {l}"))?;
    }
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let b = rng.random_range(1..6);
        let preds: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::from_fn(&[b, 29], |_| rng.random_range(-5.0..5.0))).collect();
        let targets: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::from_fn(&[b, 29], |_| rng.random_range(-5.0..5.0))).collect();
        let mut want = 0.0;
        for (a, w) in [1.0, 10.0, 10.0].into_iter().enumerate() {
            let sq: f64 = preds[a].data().iter().zip(targets[a].data()).map(|(p, t)| (p - t) * (p - t)).sum();
            want += w * (sq / (b * 29) as f64).sqrt();
        }
        let got = fused_loss(&preds, &targets, 10.0, 10.0).unwrap();
        worst = worst.max((got - want).abs());
    }
    check(worst <= 1e-12, || format!("brute-force mismatch {worst:e}"))?;
    Ok(format!("zero iff equal, 10*delta for Y, 1000 cases within {worst:.1e}"))
}

// ---------------------------------------------------------------- 5

fn round_trip() -> Outcome {
    let corpus = generate_corpus(20, 50, &ParamRanges::default(), 55).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for s in &corpus {
        let n = s.segment.gt.len();
        let gt = Tensor::from_fn(&[3, n], |i| s.segment.gt[i % n][i / n]);
        let t = reconstruct(&[differentiate(&gt).unwrap()], s.segment.gt[0]).map_err(|e| e.to_string())?;
        check(t.len() == n, || format!("{} points from {}", t.len(), n))?;
        for (p, g) in t.points.iter().zip(&s.segment.gt) {
            for a in 0..3 {
                worst = worst.max((p[a] - g[a]).abs() / g[a].abs().max(1.0));
            }
        }
    }
    check(worst <= 1e-9, || format!("relative error {worst:e}"))?;
    Ok(format!("{} steps, max relative error {:.1e}", corpus.len(), worst))
}

// ---------------------------------------------------------------- 6

/// Stride-140 windows plus one tail window when at least 5 samples remain.
fn hand_sliding(len: usize) -> usize {
    let n = (len - 150) / 140 + 1;
    let covered = (n - 1) * 140 + 150;
    n + usize::from(len - covered >= 5)
}

fn accounting() -> Outcome {
    let corpus = generate_corpus(6, 20, &ParamRanges::default(), 66).map_err(|e| e.to_string())?;
    let steps: Vec<_> = corpus.into_iter().map(|s| s.segment).collect();
    for (i, s) in steps.iter().enumerate() {
        let combined = augment_step(s, &AugmentSpec::default(), i as u64).unwrap();
        let sliding = augment_step(s, &AugmentSpec::with_mode(AugmentMode::Sliding), i as u64).unwrap();
        let random = augment_step(s, &AugmentSpec::with_mode(AugmentMode::Random), i as u64).unwrap();
        check(random.len() == 5, || format!("{} random windows", random.len()))?;
        check(combined.len() == sliding.len() + random.len(), || "combined != sliding + random".into())?;
        check(sliding.len() == hand_sliding(s.imu_len()), || format!("step of {} samples", s.imu_len()))?;
    }
    let split = SplitSpec { mode: SplitMode::by_step(), seed: 6 };
    let data = build_dataset(&steps, &AugmentSpec::default(), &split).map_err(|e| e.to_string())?;
    let again = build_dataset(&steps, &AugmentSpec::default(), &split).map_err(|e| e.to_string())?;
    check(data == again, || "rebuild differs".into())?;
    let part = split_steps(&steps, &split).map_err(|e| e.to_string())?;
    let raw: usize = part.train.iter().map(|&i| steps[i].imu_len()).sum();
    let sliding: usize = part.train.iter().map(|&i| hand_sliding(steps[i].imu_len())).sum();
    let random = 5 * part.train.len();
    let r = &data.report.train;
    check(r.sliding_windows == sliding && r.random_windows == random, || {
        format!("report {}/{} vs hand {}/{}", r.sliding_windows, r.random_windows, sliding, random)
    })?;
    let want = (sliding + random) as f64 * 150.0 / raw as f64;
    check((r.multiplier() - want).abs() < 1e-12, || format!("multiplier {} vs {}", r.multiplier(), want))?;
    for (name, s, ds) in [("val", &data.report.val, &part.val), ("test", &data.report.test, &part.test)] {
        let tiled: usize = ds.iter().map(|&i| steps[i].imu_len() / 150).sum();
        check(s.tiled_windows == tiled, || format!("{name}: {} tiled vs {}", s.tiled_windows, tiled))?;
    }
    Ok(format!(
        "{} steps; train {} sliding + {} random, multiplier {:.3}x; rebuild identical",
        steps.len(),
        sliding,
        random,
        want
    ))
}

// ---------------------------------------------------------------- 7

fn overfit() -> Outcome {
    let corpus = generate_corpus(2, 5, &ParamRanges::default(), 1).map_err(|e| e.to_string())?;
    let spec = AugmentSpec::default();
    let windows = corpus
        .iter()
        .map(|s| make_window(&s.segment, 0, &spec, WindowTag::Sliding))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let ds = Dataset {
        windows,
        split: SplitKind::Train,
        seed: 0,
        differential: true,
    };
    let none = Dataset {
        windows: vec![],
        ..ds.clone()
    };
    let mut cfg = ModelConfig::new(Variant::Fused, Depth::Conv9).with_scale(Scale::new(1, 8));
    cfg.dropout_p = 0.0;
    let mut reg = Regressor32::build(&cfg, InitScheme::default(), 3).map_err(|e| e.to_string())?;
    let tc = TrainConfig {
        adam: AdamConfig { lr: 2e-4, ..AdamConfig::default() },
        epochs: 500,
        seed: 4,
        ..TrainConfig::default()
    };
    let hist = train(&mut reg, &ds, &none, &tc).map_err(|e| e.to_string())?;
    let first = hist.epochs[0].train_loss;
    let last = hist.epochs.last().unwrap().train_loss;
    let ratio = last / first;
    let msg = format!("10 windows, 500 epochs: train loss {first:.4} -> {last:.4} ({:.2}% of initial)", ratio * 100.0);
    check(ratio <= 0.01, || msg.clone())?;
    Ok(msg)
}

// ---------------------------------------------------------------- 8, 9, 10

struct Condition {
    name: &'static str,
    aug: &'static str,
    differential: bool,
}

const CONDITIONS: [Condition; 4] = [
    Condition { name: "combined", aug: "combined", differential: true },
    Condition { name: "sliding", aug: "sliding", differential: true },
    Condition { name: "random", aug: "random", differential: true },
    Condition { name: "raw", aug: "combined", differential: false },
];

const BASE: &str = "\
seed = 2024
sim.subjects = 10
sim.steps_per_subject = 50
model.scale = 1/8
train.lr = 0.001
train.epochs = 20
crossval.k = 6
eval.plots = 2
";

fn gaittrack(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_gaittrack"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("gaittrack {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn mean_errors(report_csv: &Path) -> Result<Vec<[f64; 3]>, String> {
    let text = fs::read_to_string(report_csv).map_err(|e| e.to_string())?;
    text.lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let v = |i: usize| f[i].parse::<f64>().map_err(|e| e.to_string());
            Ok([v(4)?, v(5)?, v(6)?])
        })
        .collect()
}

fn pipeline(runs: &Path) -> Result<(), String> {
    fs::create_dir_all(runs).map_err(|e| e.to_string())?;
    fs::write(runs.join("base.conf"), BASE).map_err(|e| e.to_string())?;
    gaittrack(runs, &["simulate", "--config", "base.conf"])?;
    gaittrack(runs, &["ingest", "--config", "base.conf"])?;
    for c in CONDITIONS {
        let conf = format!(
            "{BASE}aug.differential = {}\npaths.data = data_{n}\npaths.model = model_{n}\npaths.report = report_{n}\n",
            c.differential,
            n = c.name
        );
        let file = format!("{}.conf", c.name);
        fs::write(runs.join(&file), conf).map_err(|e| e.to_string())?;
        let t = Instant::now();
        for stage in ["augment", "train", "eval"] {
            gaittrack(runs, &[stage, "--config", &file, "--aug", c.aug])?;
        }
        println!("  trained {} in {:.0?}", c.name, t.elapsed());
    }
    Ok(())
}

fn mean_stride(runs: &Path) -> Result<f64, String> {
    let steps = load_steps(&runs.join("steps")).map_err(|e| e.to_string())?;
    let total: f64 = steps.iter().map(|s| s.gt.last().unwrap()[0] - s.gt[0][0]).sum();
    Ok(total / steps.len() as f64)
}

fn mixed_step(runs: &Path) -> Outcome {
    let stride = mean_stride(runs)?;
    let err = |name: &str| -> Result<[f64; 3], String> { Ok(mean_errors(&runs.join(format!("report_{name}/report.csv")))?[0]) };
    let combined = err("combined")?;
    let (sliding, random, raw) = (err("sliding")?[0], err("random")?[0], err("raw")?[0]);
    let summary = format!(
        "X {:.2} (limit {:.2}) Y {:.3} Z {:.3} cm; X sliding {:.2} random {:.2} raw {:.2}",
        combined[0],
        0.1 * stride,
        combined[1],
        combined[2],
        sliding,
        random,
        raw
    );
    let ok = combined[0] <= 0.1 * stride
        && combined[1] <= 0.5
        && combined[2] <= 0.5
        && combined[0] <= sliding
        && combined[0] <= random
        && raw > combined[0];
    if ok {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn independent_walker(runs: &Path, mixed_x: Option<f64>) -> Outcome {
    let t = Instant::now();
    gaittrack(runs, &["crossval", "--config", "base.conf"])?;
    println!("  cross-validated in {:.0?}", t.elapsed());
    let dir = runs.join("crossval");
    let folds = mean_errors(&dir.join("folds.csv"))?;
    check(folds.len() == 6, || format!("{} folds", folds.len()))?;
    let steps = load_steps(&runs.join("steps")).map_err(|e| e.to_string())?;
    let everyone: BTreeSet<String> = steps.iter().map(|s| s.subject_id.clone()).collect();
    let mut held_out: Vec<String> = Vec::new();
    for fold in 0..6 {
        let spec = SplitSpec { mode: SplitMode::kfold(6, fold), seed: 2024 };
        let part = split_steps(&steps, &spec).map_err(|e| e.to_string())?;
        let test: BTreeSet<&str> = part.test.iter().map(|&i| steps[i].subject_id.as_str()).collect();
        let fit: BTreeSet<&str> = part.train.iter().chain(&part.val).map(|&i| steps[i].subject_id.as_str()).collect();
        check(test.is_disjoint(&fit), || format!("fold {fold} shares subjects"))?;
        let text = fs::read_to_string(dir.join(format!("fold_{fold}/per_step.csv"))).map_err(|e| e.to_string())?;
        let scored: BTreeSet<String> = parse_per_step_csv(&text)?.into_iter().map(|s| s.subject_id).collect();
        check(scored.iter().all(|s| test.contains(s.as_str())), || format!("fold {fold} scored a training subject"))?;
        held_out.extend(scored);
    }
    held_out.sort();
    check(held_out.iter().cloned().collect::<BTreeSet<_>>() == everyone && held_out.len() == everyone.len(), || {
        "folds do not partition the subjects".into()
    })?;
    let cv_x = folds.iter().map(|f| f[0]).sum::<f64>() / folds.len() as f64;
    let Some(mixed_x) = mixed_x else {
        return Err(format!("mean X over folds {cv_x:.2} cm; no mixed-step result to compare"));
    };
    let msg = format!("6 subject-disjoint folds; mean X {cv_x:.2} cm vs mixed-step {mixed_x:.2} cm");
    check(cv_x >= mixed_x, || msg.clone())?;
    Ok(msg)
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    WalkDir::new(dir)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .map(|e| (e.path().strip_prefix(dir).unwrap().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect()
}

fn determinism(root: &Path) -> Outcome {
    let small = "seed = 3\nsim.subjects = 4\nsim.steps_per_subject = 6\nmodel.scale = 1/16\ntrain.epochs = 3\n\
                 train.lr = 0.001\ncrossval.k = 2\neval.plots = 1\n";
    let mut trees = Vec::new();
    for rep in ["a", "b"] {
        let dir = root.join(rep);
        fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        fs::write(dir.join("run.conf"), small).map_err(|e| e.to_string())?;
        for stage in ["simulate", "ingest", "augment", "train", "eval", "crossval"] {
            gaittrack(&dir, &[stage, "--config", "run.conf"])?;
        }
        trees.push(tree(&dir));
    }
    check(trees[0].len() == trees[1].len(), || "different file sets".into())?;
    for (name, bytes) in &trees[0] {
        check(trees[1].get(name) == Some(bytes), || format!("{name} differs between reruns"))?;
    }
    let csv = trees[0].keys().filter(|k| k.ends_with(".csv")).count();
    let bins = trees[0].keys().filter(|k| k.ends_with(".bin")).count();
    Ok(format!("6 commands rerun: {} files identical ({} CSV, {} binary)", trees[0].len(), csv, bins))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    })
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let runs = work.path().join("runs");
    let t0 = Instant::now();
    println!("building the 10 x 50 synthetic runs (four conditions)...");
    let built = guarded(|| pipeline(&runs).map(|_| String::new()));
    let mixed = built.clone().and_then(|_| guarded(|| mixed_step(&runs)));
    let mixed_x = mean_errors(&runs.join("report_combined/report.csv")).ok().map(|r| r[0][0]);

    let results: Vec<(usize, &str, Outcome)> = vec![
        (1, "window shapes", built.clone().and_then(|_| guarded(|| shapes(&runs)))),
        (2, "gradient check", guarded(gradients)),
        (3, "parameter count", guarded(parameters)),
        (4, "loss contract", guarded(loss_contract)),
        (5, "difference round trip", guarded(round_trip)),
        (6, "augmentation accounting", guarded(accounting)),
        (7, "overfit sanity", guarded(overfit)),
        (8, "mixed-step reproduction", mixed),
        (9, "independent walker", built.and_then(|_| guarded(|| independent_walker(&runs, mixed_x)))),
        (10, "determinism", guarded(|| determinism(&work.path().join("rerun")))),
    ];

    println!();
    let mut unexpected = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                let note = if UNATTAINED.contains(n) { " (known unattained)" } else { "" };
                println!("criterion {n:>2} FAIL{note}  {name}: {detail}");
                if !UNATTAINED.contains(n) {
                    unexpected += 1;
                }
            }
        }
    }
    let passed = results.iter().filter(|r| r.2.is_ok()).count();
    println!("{passed}/{} criteria passed in {:.0?}", results.len(), t0.elapsed());
    if unexpected > 0 {
        std::process::exit(1);
    }
}
