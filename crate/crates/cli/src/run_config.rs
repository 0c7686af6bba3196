//! The run configuration: every setting a pipeline command reads, loaded
//! from a flat key-value file plus command-line overrides.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gaittrack::config::{KeyValues, KvError};
use gaittrack::gaitsim::ParamRanges;
use gaittrack::imu::{DetectorConfig, ImuUnits};
use gaittrack::model::{InitScheme, ModelConfig};
use gaittrack::pipeline::{AugmentSpec, SplitMode, SplitSpec};
use gaittrack::training::TrainConfig;
use sha2::{Digest, Sha256};

use crate::CliError;

/// How `ingest` finds step boundaries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Segmentation {
    /// Use `<subject>_steps.csv` annotations.
    Annotated,
    /// Run the gyro-energy detector.
    Auto,
}

impl fmt::Display for Segmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Segmentation::Annotated => "annotated",
            Segmentation::Auto => "auto",
        })
    }
}

impl FromStr for Segmentation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "annotated" => Ok(Segmentation::Annotated),
            "auto" => Ok(Segmentation::Auto),
            _ => Err(format!("expected annotated|auto, found {:?}", s)),
        }
    }
}

/// Artifact directories. Relative entries resolve against the directory of
/// the config file.
#[derive(Clone, Debug, PartialEq)]
pub struct Paths {
    pub corpus: PathBuf,
    pub steps: PathBuf,
    pub data: PathBuf,
    pub model: PathBuf,
    pub report: PathBuf,
    pub crossval: PathBuf,
}

const PATH_KEYS: [&str; 6] = ["corpus", "steps", "data", "model", "report", "crossval"];

impl Paths {
    fn from_kv(kv: &KeyValues, base: &Path) -> Self {
        let get = |name: &str| {
            let p = PathBuf::from(kv.get_str(&format!("paths.{name}")).unwrap_or(name));
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        Paths {
            corpus: get("corpus"),
            steps: get("steps"),
            data: get("data"),
            model: get("model"),
            report: get("report"),
            crossval: get("crossval"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub subjects: usize,
    pub steps_per_subject: usize,
    pub ranges: ParamRanges,
    /// Overrides the `# units=` directive of IMU logs.
    pub imu_units: Option<ImuUnits>,
    pub segmentation: Segmentation,
    pub detector: DetectorConfig,
    pub augment: AugmentSpec,
    pub split: SplitSpec,
    pub model: ModelConfig,
    pub init: InitScheme,
    pub init_seed: u64,
    pub train: TrainConfig,
    pub folds: usize,
    /// Number of test steps to plot in `eval`.
    pub plots: usize,
}

fn usage(e: impl fmt::Display) -> CliError {
    CliError::Usage(format!("config: {}", e))
}

impl RunConfig {
    /// Parses settings from `kv`; absent keys take their defaults, with the
    /// global `seed` seeding every stage that has no seed of its own.
    pub fn from_kv(kv: &KeyValues, base: &Path) -> Result<Self, CliError> {
        let unknown: Vec<&str> = kv.keys().filter(|k| !known_keys().contains(*k)).collect();
        if let Some(k) = unknown.first() {
            return Err(usage(KvError {
                key: k.to_string(),
                message: "unknown key".into(),
            }));
        }
        let seed: u64 = kv.get_or("seed", 0).map_err(usage)?;
        let units = match kv.get_str("ingest.units") {
            None | Some("file") => None,
            Some(_) => Some(kv.require::<ImuUnits>("ingest.units").map_err(usage)?),
        };
        let d = DetectorConfig::default();
        let cfg = RunConfig {
            seed,
            paths: Paths::from_kv(kv, base),
            subjects: kv.get_or("sim.subjects", 10).map_err(usage)?,
            steps_per_subject: kv.get_or("sim.steps_per_subject", 50).map_err(usage)?,
            ranges: ParamRanges::from_kv(kv, "sim.").map_err(usage)?,
            imu_units: units,
            segmentation: kv.get_or("ingest.segmentation", Segmentation::Annotated).map_err(usage)?,
            detector: DetectorConfig {
                window: kv.get_or("detector.window", d.window).map_err(usage)?,
                low: kv.get_or("detector.low", d.low).map_err(usage)?,
                high: kv.get_or("detector.high", d.high).map_err(usage)?,
                refine_radius: kv.get_or("detector.refine_radius", d.refine_radius).map_err(usage)?,
            },
            augment: AugmentSpec::from_kv(kv, "aug.").map_err(usage)?,
            split: SplitSpec::from_kv(kv, "split.", seed).map_err(usage)?,
            model: ModelConfig::from_kv(kv, "model.").map_err(usage)?,
            init: kv.get_or("model.init", InitScheme::default()).map_err(usage)?,
            init_seed: kv.get_or("model.init_seed", seed).map_err(usage)?,
            train: TrainConfig::from_kv(kv, "train.", seed).map_err(usage)?,
            folds: kv.get_or("crossval.k", 6).map_err(usage)?,
            plots: kv.get_or("eval.plots", 3).map_err(usage)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.subjects == 0 || self.steps_per_subject == 0 {
            return Err(usage("sim.subjects and sim.steps_per_subject must be positive"));
        }
        self.ranges.validate().map_err(usage)?;
        self.augment.validate().map_err(usage)?;
        self.train.validate().map_err(usage)?;
        if self.detector.low >= self.detector.high || self.detector.window == 0 {
            return Err(usage("detector: need low < high and a positive window"));
        }
        if self.folds < 2 {
            return Err(usage("crossval.k must be at least 2"));
        }
        Ok(())
    }

    /// Every setting except the artifact paths, in canonical form.
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("seed", self.seed);
        kv.set("sim.subjects", self.subjects);
        kv.set("sim.steps_per_subject", self.steps_per_subject);
        kv.merge(&self.ranges.to_kv("sim."));
        kv.set("ingest.units", self.imu_units.map_or_else(|| "file".to_string(), |u| u.to_string()));
        kv.set("ingest.segmentation", self.segmentation);
        kv.set("detector.window", self.detector.window);
        kv.set("detector.low", self.detector.low);
        kv.set("detector.high", self.detector.high);
        kv.set("detector.refine_radius", self.detector.refine_radius);
        kv.merge(&self.augment.to_kv("aug."));
        kv.merge(&self.split.to_kv("split."));
        self.model.to_kv(&mut kv, "model.");
        kv.set("model.init", self.init);
        kv.set("model.init_seed", self.init_seed);
        kv.merge(&self.train.to_kv("train."));
        kv.set("crossval.k", self.folds);
        kv.set("eval.plots", self.plots);
        kv
    }

    /// SHA-256 of the canonical settings, hex encoded.
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_kv().to_string().as_bytes()))
    }
}

fn known_keys() -> BTreeSet<String> {
    let d = RunConfig {
        seed: 0,
        paths: Paths::from_kv(&KeyValues::new(), Path::new("")),
        subjects: 1,
        steps_per_subject: 1,
        ranges: ParamRanges::default(),
        imu_units: None,
        segmentation: Segmentation::Annotated,
        detector: DetectorConfig::default(),
        augment: AugmentSpec::default(),
        split: SplitSpec {
            mode: SplitMode::by_step(),
            seed: 0,
        },
        model: ModelConfig::from_kv(&KeyValues::new(), "model.").expect("default model"),
        init: InitScheme::default(),
        init_seed: 0,
        train: TrainConfig::default(),
        folds: 6,
        plots: 0,
    };
    let kfold = SplitSpec {
        mode: SplitMode::kfold(6, 0),
        seed: 0,
    };
    let mut keys: BTreeSet<String> = d.to_kv().keys().chain(kfold.to_kv("split.").keys()).map(String::from).collect();
    keys.extend(PATH_KEYS.iter().map(|k| format!("paths.{k}")));
    keys
}
