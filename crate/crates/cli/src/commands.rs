//! The six pipeline stages.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use gaittrack::config::KeyValues;
use gaittrack::gaitsim::{generate_walks, write_corpus};
use gaittrack::imu::{align_streams, parse_annotations, parse_gt_log, parse_imu_log, segment_steps_annotated, segment_steps_auto};
use gaittrack::model::{Depth, Variant};
use gaittrack::pipeline::{build_dataset, load_dataset, load_steps, save_dataset, save_steps, AugmentMode};
use gaittrack::training::{cross_validate, evaluate, train_observed};
use gaittrack::trajectory::{emit_plots, per_step_csv, ErrorReport, Protocol};
use gaittrack::{Regressor32, Scale};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use crate::run_config::{RunConfig, Segmentation};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Ingest,
    Augment,
    Train,
    Eval,
    Crossval,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Simulate => "simulate",
            Command::Ingest => "ingest",
            Command::Augment => "augment",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Crossval => "crossval",
        })
    }
}

/// Command-line settings layered over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub scale: Option<Scale>,
    pub variant: Option<Variant>,
    pub depth: Option<Depth>,
    pub aug: Option<AugmentMode>,
}

impl Overrides {
    pub fn load(&self) -> Result<RunConfig, CliError> {
        let (mut kv, base) = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {}", path.display(), e)))?;
                let kv = KeyValues::parse(&text).map_err(|e| CliError::Usage(format!("config: {}", e)))?;
                (kv, path.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (KeyValues::new(), PathBuf::new()),
        };
        if let Some(s) = self.seed {
            kv.set("seed", s);
        }
        if let Some(s) = self.scale {
            kv.set("model.scale", s);
        }
        if let Some(v) = self.variant {
            kv.set("model.variant", v);
        }
        if let Some(d) = self.depth {
            kv.set("model.depth", d);
        }
        if let Some(a) = self.aug {
            kv.set("aug.mode", a);
        }
        RunConfig::from_kv(&kv, &base)
    }
}

/// Runs `cmd` and returns its output directory and a printable summary.
pub fn run(cmd: Command, overrides: &Overrides) -> Result<(PathBuf, String), CliError> {
    let cfg = overrides.load()?;
    let p = &cfg.paths;
    let (inputs, default_out): (Vec<&Path>, &Path) = match cmd {
        Command::Simulate => (vec![], &p.corpus),
        Command::Ingest => (vec![&p.corpus], &p.steps),
        Command::Augment => (vec![&p.steps], &p.data),
        Command::Train => (vec![&p.data], &p.model),
        Command::Eval => (vec![&p.model, &p.data], &p.report),
        Command::Crossval => (vec![&p.steps], &p.crossval),
    };
    let out = overrides.out.clone().unwrap_or_else(|| default_out.to_path_buf());
    for input in &inputs {
        if !input.is_dir() {
            return Err(CliError::Usage(format!("{}: input directory {} does not exist", cmd, input.display())));
        }
        if same_dir(input, &out) {
            return Err(CliError::Usage(format!("{}: output {} would overwrite its input", cmd, out.display())));
        }
    }
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let summary = match cmd {
        Command::Simulate => simulate(&cfg, &out)?,
        Command::Ingest => ingest(&cfg, &p.corpus, &out)?,
        Command::Augment => augment(&cfg, &p.steps, &out)?,
        Command::Train => train(&cfg, &p.data, &out)?,
        Command::Eval => eval(&cfg, &p.model, &p.data, &out)?,
        Command::Crossval => crossval(&cfg, &p.steps, &out)?,
    };
    write_manifest(cmd, &cfg, &out)?;
    Ok((out, summary))
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => a == b,
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let walks = generate_walks(cfg.subjects, cfg.steps_per_subject, &cfg.ranges, cfg.seed)?;
    write_corpus(&walks, out)?;
    Ok(format!(
        "simulated {} subjects x {} steps into {}",
        cfg.subjects,
        cfg.steps_per_subject,
        out.display()
    ))
}

fn ingest(cfg: &RunConfig, corpus: &Path, out: &Path) -> Result<String, CliError> {
    let mut subjects: Vec<String> = fs::read_dir(corpus)
        .map_err(|e| CliError::io(corpus, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str()?.strip_suffix("_imu.csv").map(String::from))
        .collect();
    subjects.sort();
    if subjects.is_empty() {
        return Err(CliError::Usage(format!("ingest: no *_imu.csv files in {}", corpus.display())));
    }
    let mut steps = Vec::new();
    for s in &subjects {
        let imu = parse_imu_log(&corpus.join(format!("{s}_imu.csv")), cfg.imu_units)?;
        let gt = parse_gt_log(&corpus.join(format!("{s}_gt.csv")))?;
        let pair = align_streams(&imu, &gt)?;
        let found = match cfg.segmentation {
            Segmentation::Annotated => {
                let ann = parse_annotations(&corpus.join(format!("{s}_steps.csv")))?;
                segment_steps_annotated(&pair, &ann)?
            }
            Segmentation::Auto => segment_steps_auto(&pair, &cfg.detector),
        };
        steps.extend(found);
    }
    save_steps(&steps, out)?;
    Ok(format!("ingested {} steps from {} subjects", steps.len(), subjects.len()))
}

fn augment(cfg: &RunConfig, steps_dir: &Path, out: &Path) -> Result<String, CliError> {
    let steps = load_steps(steps_dir)?;
    let data = build_dataset(&steps, &cfg.augment, &cfg.split)?;
    for (name, ds) in [("train", &data.train), ("val", &data.val), ("test", &data.test)] {
        save_dataset(ds, out, name)?;
    }
    write(&out.join("size_report.csv"), &data.report.to_csv())?;
    Ok(data.report.to_string())
}

fn train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<String, CliError> {
    let train_ds = load_dataset(data, "train")?;
    let val_ds = load_dataset(data, "val")?;
    let mut reg = Regressor32::build(&cfg.model, cfg.init, cfg.init_seed)?;
    let history = train_observed(&mut reg, &train_ds, &val_ds, &cfg.train, &mut |r| {
        eprintln!(
            "epoch {:4}  train {:.4}  val {:.4}  rmse {:.4} {:.4} {:.4}",
            r.epoch, r.train_loss, r.val_loss, r.rmse[0], r.rmse[1], r.rmse[2]
        )
    })?;
    reg.save(&out.join("checkpoint"))?;
    write(&out.join("history.csv"), &history.to_csv())?;
    let params = reg.count_parameters();
    write(&out.join("parameters.txt"), &params.to_string())?;
    Ok(format!(
        "trained {} parameters for {} epochs; kept epoch {}",
        params.total(),
        history.epochs.len(),
        history.best_epoch.map_or_else(|| "-".to_string(), |e| e.to_string())
    ))
}

fn report_csv(rows: &[(String, &ErrorReport)]) -> String {
    let mut out = String::from("condition,steps,windows,points,mean_x,mean_y,mean_z,std_x,std_y,std_z\n");
    for (label, r) in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            label, r.steps, r.windows, r.points, r.mean[0], r.mean[1], r.mean[2], r.std[0], r.std[1], r.std[2]
        ));
    }
    out
}

fn eval(cfg: &RunConfig, model: &Path, data: &Path, out: &Path) -> Result<String, CliError> {
    let reg = Regressor32::load(&model.join("checkpoint"))?;
    let test = load_dataset(data, "test")?;
    let ev = evaluate(&reg, &test, Protocol::MixedStep, cfg.train.batch_size)?;
    let table = ev.report.to_string();
    write(&out.join("report.txt"), &table)?;
    write(&out.join("report.csv"), &report_csv(&[(ev.report.protocol.to_string(), &ev.report)]))?;
    write(&out.join("per_step.csv"), &per_step_csv(&ev.per_step))?;
    for t in ev.trajectories.iter().take(cfg.plots) {
        let stem = format!("{}_{:03}", t.subject_id, t.step_index);
        emit_plots(&t.predicted, &t.reference.points, &out.join("plots"), &stem)?;
    }
    Ok(table)
}

fn crossval(cfg: &RunConfig, steps_dir: &Path, out: &Path) -> Result<String, CliError> {
    let steps = load_steps(steps_dir)?;
    let cv = cross_validate::<f32>(
        &steps,
        cfg.folds,
        cfg.split.seed,
        &cfg.augment,
        &cfg.train,
        &cfg.model,
        cfg.init,
        cfg.init_seed,
        &mut |fold, r| eprintln!("fold {} epoch {:4}  train {:.4}  val {:.4}", fold, r.epoch, r.train_loss, r.val_loss),
    )?;
    let rows: Vec<(String, &ErrorReport)> = cv
        .folds
        .iter()
        .map(|f| (format!("fold{}:{}", f.fold, f.test_subjects.join(" ")), &f.evaluation.report))
        .collect();
    write(&out.join("folds.csv"), &report_csv(&rows))?;
    for f in &cv.folds {
        let dir = out.join(format!("fold_{}", f.fold));
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        write(&dir.join("per_step.csv"), &per_step_csv(&f.evaluation.per_step))?;
        write(&dir.join("history.csv"), &f.history.to_csv())?;
    }
    let summary = cv.to_string();
    write(&out.join("summary.txt"), &summary)?;
    Ok(summary)
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Writes `config.txt` (the canonical settings) and `manifest.txt` (command,
/// config hash, seed, versions and a digest of every output file).
fn write_manifest(cmd: Command, cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    write(&out.join("config.txt"), &cfg.to_kv().to_string())?;
    let mut kv = KeyValues::new();
    kv.set("command", cmd);
    kv.set("config_hash", cfg.hash());
    kv.set("seed", cfg.seed);
    kv.set("version.gaittrack", gaittrack::VERSION);
    kv.set("version.cli", env!("CARGO_PKG_VERSION"));
    for entry in WalkDir::new(out).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::Usage(format!("manifest: {}", e)))?;
        let rel = entry.path().strip_prefix(out).expect("walk stays under out");
        if !entry.file_type().is_file() || rel == Path::new("manifest.txt") {
            continue;
        }
        let name = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        kv.set(&format!("output.{}", name), sha256_file(entry.path())?);
    }
    write(&out.join("manifest.txt"), &kv.to_string())
}
