use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{op}: shape mismatch, expected {expected}, found {found}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },
}

impl NnError {
    pub(crate) fn shape(op: &'static str, expected: impl Into<String>, found: impl Into<String>) -> Self {
        NnError::ShapeMismatch {
            op,
            expected: expected.into(),
            found: found.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ImuError {
    #[error("{path}:{line}: malformed row: {reason}")]
    MalformedRow {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}:{line}: timestamp {t} does not increase")]
    NonMonotoneTime { path: PathBuf, line: usize, t: f64 },
    #[error("{path}:{line}: {channel} = {value} exceeds the sensor range")]
    RangeViolation {
        path: PathBuf,
        line: usize,
        channel: &'static str,
        value: f64,
    },
    #[error("{path}:{line}: sample spacing {dt} s violates the {rate} Hz grid")]
    IrregularSampling {
        path: PathBuf,
        line: usize,
        dt: f64,
        rate: f64,
    },
    #[error("{0}: stream has no samples")]
    EmptyStream(PathBuf),
    #[error("streams overlap for {overlap} s, need at least {required} s")]
    NoOverlap { overlap: f64, required: f64 },
    #[error("sample-rate ratio {ratio} deviates from 5:1")]
    RateMismatch { ratio: f64 },
    #[error("subject mismatch: imu {imu:?} vs ground truth {gt:?}")]
    SubjectMismatch { imu: String, gt: String },
    #[error("annotation ({start}, {end}) overlaps or precedes the previous one")]
    OverlappingAnnotations { start: usize, end: usize },
    #[error("annotation start {start} is not a multiple of 5")]
    UnalignedStart { start: usize },
    #[error("annotation ({start}, {end}) is out of bounds for {len} samples")]
    AnnotationOutOfBounds { start: usize, end: usize, len: usize },
    #[error("step ({start}, {end}) has {len} samples, outside [{min}, {max}]")]
    StepLength {
        start: usize,
        end: usize,
        len: usize,
        min: usize,
        max: usize,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("series needs at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("step has {len} IMU samples, a window needs {window}")]
    StepTooShort { len: usize, window: usize },
    #[error("need at least {required} steps, got {found}")]
    TooFewSteps { required: usize, found: usize },
    #[error("need at least {required} subjects for {required}-fold split, got {found}")]
    NotEnoughSubjects { required: usize, found: usize },
    #[error("invalid augmentation spec: {0}")]
    InvalidSpec(String),
    #[error("non-finite value in window (subject {subject}, step {step}, start {start})")]
    NonFinite {
        subject: String,
        step: usize,
        start: usize,
    },
    #[error("dataset store: {0}")]
    Store(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{0} dataset is empty")]
    EmptyDataset(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("no windows to reconstruct")]
    EmptyWindows,
    #[error("trajectory has {pred} points, ground truth {gt}")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("no per-step errors to aggregate")]
    Empty,
    #[error("window {index} has shape {found:?}, expected [3, n]")]
    BadWindow { index: usize, found: Vec<usize> },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid gait parameters: {0}")]
    InvalidParams(String),
    #[error("simulated {channel} reaches {value}, outside the sensor range")]
    RangeExceeded { channel: &'static str, value: f64 },
    #[error(transparent)]
    Imu(#[from] ImuError),
}

/// Umbrella error for callers that drive the whole pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Imu(#[from] ImuError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("config: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}
