use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use walkdir::WalkDir;

const STAGES: [&str; 6] = ["simulate", "ingest", "augment", "train", "eval", "crossval"];
const OUTPUTS: [&str; 6] = ["corpus", "steps", "data", "model", "report", "crossval"];

const SMALL: &str = "\
seed = 11
sim.subjects = 4
sim.steps_per_subject = 5
model.scale = 1/16
train.epochs = 2
train.lr = 0.001
train.batch_size = 32
crossval.k = 2
eval.plots = 2
";

fn gaittrack(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaittrack"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    WalkDir::new(dir)
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file())
        .map(|e| {
            let rel = e.path().strip_prefix(dir).unwrap().to_string_lossy().into_owned();
            (rel, fs::read(e.path()).unwrap())
        })
        .collect()
}

fn pipeline(root: &Path) {
    fs::write(root.join("run.conf"), SMALL).unwrap();
    for stage in STAGES {
        let inputs: BTreeMap<&str, _> = OUTPUTS
            .iter()
            .filter(|d| root.join(d).is_dir())
            .map(|d| (*d, tree(&root.join(d))))
            .collect();
        let out = gaittrack(root, &[stage, "--config", "run.conf"]);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
        for (d, before) in inputs {
            assert_eq!(tree(&root.join(d)), before, "{stage} modified {d}");
        }
    }
}

#[test]
fn pipeline_emits_every_artifact_and_reruns_byte_identically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    let expected = [
        "corpus/S01_imu.csv",
        "corpus/S04_steps.csv",
        "steps/steps.csv",
        "data/size_report.csv",
        "model/checkpoint/tensors.bin",
        "model/history.csv",
        "model/parameters.txt",
        "report/report.txt",
        "report/per_step.csv",
        "crossval/folds.csv",
        "crossval/fold_1/history.csv",
    ];
    for f in expected {
        assert!(a.path().join(f).is_file(), "missing {f}");
    }
    assert!(fs::read_dir(a.path().join("report/plots")).unwrap().count() >= 8);
    for d in OUTPUTS {
        let (ta, tb) = (tree(&a.path().join(d)), tree(&b.path().join(d)));
        assert!(ta.contains_key("manifest.txt"), "{d}");
        assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>(), "{d}");
        for (name, bytes) in &ta {
            assert!(bytes == &tb[name], "{d}/{name} differs between reruns");
        }
    }
    let manifest = fs::read_to_string(a.path().join("model/manifest.txt")).unwrap();
    assert!(manifest.contains("command = train"));
    assert!(manifest.contains("seed = 11"));
    assert!(manifest.contains("output.checkpoint/tensors.bin = "));
}

#[test]
fn changing_the_seed_changes_the_corpus() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.conf"), SMALL).unwrap();
    for (seed, out) in [("1", "c1"), ("2", "c2")] {
        assert!(gaittrack(dir.path(), &["simulate", "--config", "run.conf", "--seed", seed, "--out", out]).status.success());
    }
    assert_ne!(
        fs::read(dir.path().join("c1/S01_gt.csv")).unwrap(),
        fs::read(dir.path().join("c2/S01_gt.csv")).unwrap()
    );
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("typo.conf"), "train.lrr = 0.1\n").unwrap();
    let out = gaittrack(dir.path(), &["train", "--config", "typo.conf"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.lrr"));
    assert_eq!(gaittrack(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(gaittrack(dir.path(), &["train", "--depth", "7"]).status.code(), Some(1));
    assert_eq!(gaittrack(dir.path(), &["simulate", "--scale", "x"]).status.code(), Some(1));
    assert_eq!(gaittrack(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn refuses_to_write_over_its_input() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.conf"), SMALL).unwrap();
    assert!(gaittrack(dir.path(), &["simulate", "--config", "run.conf"]).status.success());
    let before = tree(&dir.path().join("corpus"));
    let out = gaittrack(dir.path(), &["ingest", "--config", "run.conf", "--out", "corpus"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(tree(&dir.path().join("corpus")), before);
}

#[test]
fn data_errors_exit_with_two_and_divergence_with_three() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.conf"), SMALL).unwrap();
    for stage in ["simulate", "ingest", "augment"] {
        assert!(gaittrack(dir.path(), &[stage, "--config", "run.conf"]).status.success());
    }
    fs::remove_file(dir.path().join("data/val_x.bin")).unwrap();
    assert_eq!(gaittrack(dir.path(), &["train", "--config", "run.conf"]).status.code(), Some(2));

    fs::remove_file(dir.path().join("corpus/S02_gt.csv")).unwrap();
    let out = gaittrack(dir.path(), &["ingest", "--config", "run.conf", "--out", "steps2"]);
    assert_eq!(out.status.code(), Some(2));

    let wild = SMALL.replace("train.lr = 0.001", "train.lr = 1e30\npaths.data = data2");
    fs::write(dir.path().join("wild.conf"), wild).unwrap();
    assert!(gaittrack(dir.path(), &["augment", "--config", "wild.conf", "--out", "data2"]).status.success());
    let out = gaittrack(dir.path(), &["train", "--config", "wild.conf", "--out", "model2"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
