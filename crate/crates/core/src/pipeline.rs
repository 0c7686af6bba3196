//! Windowing, augmentation and splitting of step segments into datasets.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{KeyValues, KvError};
use crate::error::PipelineError;
use crate::imu::{ImuSample, StepSegment, IMU_RATE_HZ, RATE_RATIO};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const IMU_CHANNELS: usize = 6;
pub const GT_CHANNELS: usize = 3;
/// Minimum number of steps [`build_dataset`] accepts.
pub const MIN_STEPS: usize = 10;

/// `out[c, k] = series[c, k + 1] - series[c, k]` for a `[C, N]` series.
pub fn differentiate<T: Scalar>(series: &Tensor<T>) -> Result<Tensor<T>, PipelineError> {
    let (c, n) = match *series.shape() {
        [c, n] => (c, n),
        _ => return Err(PipelineError::InvalidSpec(format!("expected [C, N], found {:?}", series.shape()))),
    };
    if n < 2 {
        return Err(PipelineError::TooShort(n));
    }
    let mut out = Vec::with_capacity(c * (n - 1));
    for row in series.data().chunks_exact(n) {
        out.extend(row.windows(2).map(|w| w[1] - w[0]));
    }
    Ok(Tensor::from_vec(&[c, n - 1], out).expect("length matches"))
}

/// Inverse of [`differentiate`]: `[C, N]` diffs plus a `C`-vector origin give
/// a `[C, N + 1]` series.
pub fn integrate<T: Scalar>(diffs: &Tensor<T>, origin: &[T]) -> Result<Tensor<T>, PipelineError> {
    let (c, n) = match *diffs.shape() {
        [c, n] if c == origin.len() => (c, n),
        _ => return Err(PipelineError::InvalidSpec(format!("expected [{}, N], found {:?}", origin.len(), diffs.shape()))),
    };
    let mut out = Vec::with_capacity(c * (n + 1));
    for (row, &o) in diffs.data().chunks_exact(n.max(1)).zip(origin) {
        let mut acc = o;
        out.push(acc);
        for &d in row.iter().take(n) {
            acc += d;
            out.push(acc);
        }
    }
    Ok(Tensor::from_vec(&[c, n + 1], out).expect("length matches"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AugmentMode {
    /// Non-overlapping tiling, as used for evaluation.
    None,
    Sliding,
    Random,
    Combined,
}

impl fmt::Display for AugmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AugmentMode::None => "none",
            AugmentMode::Sliding => "sliding",
            AugmentMode::Random => "random",
            AugmentMode::Combined => "combined",
        })
    }
}

impl FromStr for AugmentMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(AugmentMode::None),
            "sliding" => Ok(AugmentMode::Sliding),
            "random" => Ok(AugmentMode::Random),
            "combined" => Ok(AugmentMode::Combined),
            _ => Err(format!("expected none|sliding|random|combined, found {:?}", s)),
        }
    }
}

/// Which generator produced a window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WindowTag {
    Sliding,
    Random,
    Tiled,
}

impl fmt::Display for WindowTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WindowTag::Sliding => "sliding",
            WindowTag::Random => "random",
            WindowTag::Tiled => "tiled",
        })
    }
}

impl FromStr for WindowTag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sliding" => Ok(WindowTag::Sliding),
            "random" => Ok(WindowTag::Random),
            "tiled" => Ok(WindowTag::Tiled),
            _ => Err(format!("unknown window tag {:?}", s)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentSpec {
    pub win_imu: usize,
    pub win_gt: usize,
    pub overlap_imu: usize,
    pub overlap_gt: usize,
    pub random_count: usize,
    pub mode: AugmentMode,
    /// Difference inputs and targets; otherwise windows carry raw IMU
    /// samples and absolute lab-frame positions.
    pub differential: bool,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            win_imu: 150,
            win_gt: 30,
            overlap_imu: 10,
            overlap_gt: 2,
            random_count: 5,
            mode: AugmentMode::Combined,
            differential: true,
        }
    }
}

impl AugmentSpec {
    pub fn with_mode(mode: AugmentMode) -> Self {
        AugmentSpec {
            mode,
            ..AugmentSpec::default()
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::InvalidSpec(m));
        if self.win_gt < 2 || self.win_imu != RATE_RATIO * self.win_gt {
            return bad(format!("win_imu {} must equal 5 * win_gt {} (win_gt >= 2)", self.win_imu, self.win_gt));
        }
        if self.overlap_imu != RATE_RATIO * self.overlap_gt {
            return bad(format!("overlap_imu {} must equal 5 * overlap_gt {}", self.overlap_imu, self.overlap_gt));
        }
        if self.overlap_imu >= self.win_imu {
            return bad(format!("overlap {} must be smaller than the window {}", self.overlap_imu, self.win_imu));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.win_imu - self.overlap_imu
    }

    /// Time extent of an input window (`win_imu - 1` when differenced).
    pub fn input_len(&self) -> usize {
        self.win_imu - 1
    }

    pub fn output_len(&self) -> usize {
        self.win_gt - 1
    }

    pub fn to_kv(&self, prefix: &str) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set(&format!("{prefix}win_imu"), self.win_imu);
        kv.set(&format!("{prefix}win_gt"), self.win_gt);
        kv.set(&format!("{prefix}overlap_imu"), self.overlap_imu);
        kv.set(&format!("{prefix}overlap_gt"), self.overlap_gt);
        kv.set(&format!("{prefix}random_count"), self.random_count);
        kv.set(&format!("{prefix}mode"), self.mode);
        kv.set(&format!("{prefix}differential"), self.differential);
        kv
    }

    pub fn from_kv(kv: &KeyValues, prefix: &str) -> Result<Self, KvError> {
        let d = AugmentSpec::default();
        Ok(AugmentSpec {
            win_imu: kv.get_or(&format!("{prefix}win_imu"), d.win_imu)?,
            win_gt: kv.get_or(&format!("{prefix}win_gt"), d.win_gt)?,
            overlap_imu: kv.get_or(&format!("{prefix}overlap_imu"), d.overlap_imu)?,
            overlap_gt: kv.get_or(&format!("{prefix}overlap_gt"), d.overlap_gt)?,
            random_count: kv.get_or(&format!("{prefix}random_count"), d.random_count)?,
            mode: kv.get_or(&format!("{prefix}mode"), d.mode)?,
            differential: kv.get_or(&format!("{prefix}differential"), d.differential)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub subject_id: String,
    pub step_index: usize,
    /// First IMU sample of the window within the step.
    pub imu_start: usize,
    pub tag: WindowTag,
    /// Ground-truth position (cm) at the window start.
    pub origin: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    /// `[6, win_imu - 1]`
    pub x: Tensor<f64>,
    /// `[3, win_gt - 1]`
    pub y: Tensor<f64>,
    pub provenance: Provenance,
}

fn imu_rows(samples: &[ImuSample]) -> Tensor<f64> {
    let n = samples.len();
    Tensor::from_fn(&[IMU_CHANNELS, n], |i| {
        let (c, k) = (i / n, i % n);
        let s = &samples[k];
        if c < 3 {
            s.accel[c]
        } else {
            s.gyro[c - 3]
        }
    })
}

fn gt_rows(points: &[[f64; 3]]) -> Tensor<f64> {
    let n = points.len();
    Tensor::from_fn(&[GT_CHANNELS, n], |i| points[i % n][i / n])
}

fn drop_first_column(t: &Tensor<f64>) -> Tensor<f64> {
    let (c, n) = (t.shape()[0], t.shape()[1]);
    let data = t.data().chunks_exact(n).flat_map(|r| r[1..].iter().copied()).collect();
    Tensor::from_vec(&[c, n - 1], data).expect("length matches")
}

/// Builds the window whose IMU slice starts at `start`.
pub fn make_window(step: &StepSegment, start: usize, spec: &AugmentSpec, tag: WindowTag) -> Result<Window, PipelineError> {
    let len = step.imu.len();
    if start % RATE_RATIO != 0 || start + spec.win_imu > len {
        return Err(PipelineError::InvalidSpec(format!(
            "window start {} invalid for a {}-sample step",
            start, len
        )));
    }
    let g0 = start / RATE_RATIO;
    let imu = imu_rows(&step.imu[start..start + spec.win_imu]);
    let gt = gt_rows(&step.gt[g0..g0 + spec.win_gt]);
    let (x, y) = if spec.differential {
        (differentiate(&imu)?, differentiate(&gt)?)
    } else {
        (drop_first_column(&imu), drop_first_column(&gt))
    };
    if !x.all_finite() || !y.all_finite() {
        return Err(PipelineError::NonFinite {
            subject: step.subject_id.clone(),
            step: step.step_index,
            start,
        });
    }
    Ok(Window {
        x,
        y,
        provenance: Provenance {
            subject_id: step.subject_id.clone(),
            step_index: step.step_index,
            imu_start: start,
            tag,
            origin: step.gt[g0],
        },
    })
}

fn check_len(step: &StepSegment, spec: &AugmentSpec) -> Result<(), PipelineError> {
    spec.validate()?;
    if step.imu.len() < spec.win_imu {
        return Err(PipelineError::StepTooShort {
            len: step.imu.len(),
            window: spec.win_imu,
        });
    }
    Ok(())
}

/// Strided starts plus a tail window anchored at the last multiple of 5 that
/// still fits.
pub fn sliding_starts(len: usize, spec: &AugmentSpec) -> Vec<usize> {
    if len < spec.win_imu {
        return Vec::new();
    }
    let mut starts: Vec<usize> = (0..).map(|i| i * spec.stride()).take_while(|s| s + spec.win_imu <= len).collect();
    let last = *starts.last().expect("at least one window fits");
    if last + spec.win_imu < len {
        let tail = RATE_RATIO * ((len - spec.win_imu) / RATE_RATIO);
        if tail > last {
            starts.push(tail);
        }
    }
    starts
}

/// Non-overlapping starts `0, win, 2 win, ...`.
pub fn tiled_starts(len: usize, spec: &AugmentSpec) -> Vec<usize> {
    (0..len / spec.win_imu).map(|i| i * spec.win_imu).collect()
}

/// `count` starts drawn uniformly with replacement from the multiples of 5
/// in `[0, len - win]`.
pub fn random_starts<R: Rng>(len: usize, spec: &AugmentSpec, count: usize, rng: &mut R) -> Vec<usize> {
    if len < spec.win_imu {
        return Vec::new();
    }
    let choices = (len - spec.win_imu) / RATE_RATIO + 1;
    (0..count).map(|_| RATE_RATIO * rng.random_range(0..choices)).collect()
}

fn windows_at(step: &StepSegment, starts: &[usize], spec: &AugmentSpec, tag: WindowTag) -> Result<Vec<Window>, PipelineError> {
    starts.iter().map(|&s| make_window(step, s, spec, tag)).collect()
}

pub fn sliding_windows(step: &StepSegment, spec: &AugmentSpec) -> Result<Vec<Window>, PipelineError> {
    check_len(step, spec)?;
    windows_at(step, &sliding_starts(step.imu.len(), spec), spec, WindowTag::Sliding)
}

pub fn random_windows<R: Rng>(step: &StepSegment, spec: &AugmentSpec, rng: &mut R) -> Result<Vec<Window>, PipelineError> {
    check_len(step, spec)?;
    let starts = random_starts(step.imu.len(), spec, spec.random_count, rng);
    windows_at(step, &starts, spec, WindowTag::Random)
}

pub fn test_windows(step: &StepSegment, spec: &AugmentSpec) -> Result<Vec<Window>, PipelineError> {
    check_len(step, spec)?;
    windows_at(step, &tiled_starts(step.imu.len(), spec), spec, WindowTag::Tiled)
}

/// Seed for the per-step generator: `seed` xor an FNV-1a hash of the step key.
pub fn step_seed(seed: u64, subject_id: &str, step_index: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in subject_id.bytes().chain([0u8]).chain((step_index as u64).to_le_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    seed ^ h
}

/// Training windows for one step under `spec.mode`.
pub fn augment_step(step: &StepSegment, spec: &AugmentSpec, seed: u64) -> Result<Vec<Window>, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(step_seed(seed, &step.subject_id, step.step_index));
    Ok(match spec.mode {
        AugmentMode::None => test_windows(step, spec)?,
        AugmentMode::Sliding => sliding_windows(step, spec)?,
        AugmentMode::Random => random_windows(step, spec, &mut rng)?,
        AugmentMode::Combined => {
            let mut w = sliding_windows(step, spec)?;
            w.extend(random_windows(step, spec, &mut rng)?);
            w
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitKind::Train => "train",
            SplitKind::Val => "val",
            SplitKind::Test => "test",
        })
    }
}

impl FromStr for SplitKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(SplitKind::Train),
            "val" => Ok(SplitKind::Val),
            "test" => Ok(SplitKind::Test),
            _ => Err(format!("expected train|val|test, found {:?}", s)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub windows: Vec<Window>,
    pub split: SplitKind,
    pub seed: u64,
    pub differential: bool,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Inputs of the selected windows as `[B, 6, T]`.
    pub fn inputs<T: Scalar>(&self, idx: &[usize]) -> Tensor<T> {
        let (c, t) = match self.windows.first() {
            Some(w) => (w.x.shape()[0], w.x.shape()[1]),
            None => (IMU_CHANNELS, 0),
        };
        let mut data = Vec::with_capacity(idx.len() * c * t);
        for &i in idx {
            data.extend(self.windows[i].x.data().iter().map(|&v| T::of(v)));
        }
        Tensor::from_vec(&[idx.len(), c, t], data).expect("uniform window shapes")
    }

    /// Targets of the selected windows, one `[B, T]` tensor per axis.
    pub fn targets<T: Scalar>(&self, idx: &[usize]) -> [Tensor<T>; 3] {
        let t = self.windows.first().map_or(0, |w| w.y.shape()[1]);
        std::array::from_fn(|axis| {
            let mut data = Vec::with_capacity(idx.len() * t);
            for &i in idx {
                data.extend(self.windows[i].y.data()[axis * t..(axis + 1) * t].iter().map(|&v| T::of(v)));
            }
            Tensor::from_vec(&[idx.len(), t], data).expect("uniform window shapes")
        })
    }

    /// Distinct `(subject, step)` keys in first-appearance order.
    pub fn step_keys(&self) -> Vec<(String, usize)> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for w in &self.windows {
            let key = (w.provenance.subject_id.clone(), w.provenance.step_index);
            if seen.insert(key.clone()) {
                out.push(key);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitMode {
    ByStep { val_fraction: f64, test_fraction: f64 },
    BySubjectKFold { k: usize, fold: usize, val_fraction: f64 },
}

impl SplitMode {
    pub fn by_step() -> Self {
        SplitMode::ByStep {
            val_fraction: 0.1,
            test_fraction: 0.1,
        }
    }

    pub fn kfold(k: usize, fold: usize) -> Self {
        SplitMode::BySubjectKFold {
            k,
            fold,
            val_fraction: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub seed: u64,
}

impl SplitSpec {
    pub fn to_kv(&self, prefix: &str) -> KeyValues {
        let mut kv = KeyValues::new();
        match self.mode {
            SplitMode::ByStep {
                val_fraction,
                test_fraction,
            } => {
                kv.set(&format!("{prefix}mode"), "by_step");
                kv.set(&format!("{prefix}val_fraction"), val_fraction);
                kv.set(&format!("{prefix}test_fraction"), test_fraction);
            }
            SplitMode::BySubjectKFold { k, fold, val_fraction } => {
                kv.set(&format!("{prefix}mode"), "by_subject_kfold");
                kv.set(&format!("{prefix}k"), k);
                kv.set(&format!("{prefix}fold"), fold);
                kv.set(&format!("{prefix}val_fraction"), val_fraction);
            }
        }
        kv.set(&format!("{prefix}seed"), self.seed);
        kv
    }

    pub fn from_kv(kv: &KeyValues, prefix: &str, default_seed: u64) -> Result<Self, KvError> {
        let mode_key = format!("{prefix}mode");
        let val_fraction = kv.get_or(&format!("{prefix}val_fraction"), 0.1)?;
        let mode = match kv.get_str(&mode_key).unwrap_or("by_step") {
            "by_step" => SplitMode::ByStep {
                val_fraction,
                test_fraction: kv.get_or(&format!("{prefix}test_fraction"), 0.1)?,
            },
            "by_subject_kfold" => SplitMode::BySubjectKFold {
                k: kv.get_or(&format!("{prefix}k"), 6)?,
                fold: kv.get_or(&format!("{prefix}fold"), 0)?,
                val_fraction,
            },
            other => {
                return Err(KvError {
                    key: mode_key,
                    message: format!("expected by_step|by_subject_kfold, found {:?}", other),
                })
            }
        };
        Ok(SplitSpec {
            mode,
            seed: kv.get_or(&format!("{prefix}seed"), default_seed)?,
        })
    }
}

/// Step indices (into the caller's slice) per split, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepPartition {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn check_fraction(name: &str, f: f64) -> Result<(), PipelineError> {
    if (0.0..1.0).contains(&f) {
        Ok(())
    } else {
        Err(PipelineError::InvalidSpec(format!("{} = {} must lie in [0, 1)", name, f)))
    }
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

/// Balanced subject folds: the first `n mod k` folds get one extra subject.
pub fn subject_folds(subjects: &[String], k: usize, seed: u64) -> Result<Vec<Vec<String>>, PipelineError> {
    if k < 2 {
        return Err(PipelineError::InvalidSpec(format!("k-fold needs k >= 2, got {}", k)));
    }
    let mut distinct: Vec<String> = subjects.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if distinct.len() < k {
        return Err(PipelineError::NotEnoughSubjects {
            required: k,
            found: distinct.len(),
        });
    }
    distinct.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (distinct.len() / k, distinct.len() % k);
    let mut it = distinct.into_iter();
    Ok((0..k)
        .map(|f| {
            let mut fold: Vec<String> = it.by_ref().take(base + usize::from(f < extra)).collect();
            fold.sort();
            fold
        })
        .collect())
}

/// Partitions steps per `split`. Splitting happens on whole steps so no
/// step contributes windows to two splits.
pub fn split_steps(steps: &[StepSegment], split: &SplitSpec) -> Result<StepPartition, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(split.seed);
    match split.mode {
        SplitMode::ByStep {
            val_fraction,
            test_fraction,
        } => {
            check_fraction("val_fraction", val_fraction)?;
            check_fraction("test_fraction", test_fraction)?;
            let n = steps.len();
            let n_test = (test_fraction * n as f64).round() as usize;
            let n_val = (val_fraction * n as f64).round() as usize;
            if n_test + n_val >= n {
                return Err(PipelineError::TooFewSteps {
                    required: n_test + n_val + 1,
                    found: n,
                });
            }
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            Ok(StepPartition {
                test: sorted(idx[..n_test].to_vec()),
                val: sorted(idx[n_test..n_test + n_val].to_vec()),
                train: sorted(idx[n_test + n_val..].to_vec()),
            })
        }
        SplitMode::BySubjectKFold { k, fold, val_fraction } => {
            check_fraction("val_fraction", val_fraction)?;
            let subjects: Vec<String> = steps.iter().map(|s| s.subject_id.clone()).collect();
            let folds = subject_folds(&subjects, k, split.seed)?;
            if fold >= k {
                return Err(PipelineError::InvalidSpec(format!("fold {} out of range for k = {}", fold, k)));
            }
            let held_out: BTreeSet<&String> = folds[fold].iter().collect();
            let (test, mut rest): (Vec<usize>, Vec<usize>) =
                (0..steps.len()).partition(|&i| held_out.contains(&steps[i].subject_id));
            rest.shuffle(&mut rng);
            let n_val = (val_fraction * rest.len() as f64).round() as usize;
            Ok(StepPartition {
                test,
                val: sorted(rest[..n_val].to_vec()),
                train: sorted(rest[n_val..].to_vec()),
            })
        }
    }
}

/// Window and sample-point counts for one split.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitSize {
    pub steps: usize,
    /// Sum of step lengths, IMU samples.
    pub original_points: usize,
    pub sliding_windows: usize,
    pub random_windows: usize,
    pub tiled_windows: usize,
    pub win_imu: usize,
}

impl SplitSize {
    pub fn windows(&self) -> usize {
        self.sliding_windows + self.random_windows + self.tiled_windows
    }

    /// Sample points covered by windows, counting overlaps repeatedly.
    pub fn points(&self) -> usize {
        self.windows() * self.win_imu
    }

    pub fn multiplier(&self) -> f64 {
        if self.original_points == 0 {
            0.0
        } else {
            self.points() as f64 / self.original_points as f64
        }
    }

    pub fn seconds(&self) -> f64 {
        self.points() as f64 / IMU_RATE_HZ
    }

    fn count(windows: &[Window], steps: usize, original_points: usize, win_imu: usize) -> Self {
        let mut s = SplitSize {
            steps,
            original_points,
            win_imu,
            ..SplitSize::default()
        };
        for w in windows {
            match w.provenance.tag {
                WindowTag::Sliding => s.sliding_windows += 1,
                WindowTag::Random => s.random_windows += 1,
                WindowTag::Tiled => s.tiled_windows += 1,
            }
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SizeReport {
    pub mode: AugmentMode,
    pub train: SplitSize,
    pub val: SplitSize,
    pub test: SplitSize,
}

impl SizeReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "split,steps,original_points,sliding_windows,random_windows,tiled_windows,points,seconds,multiplier\n",
        );
        for (name, s) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{:.3},{:.4}\n",
                name,
                s.steps,
                s.original_points,
                s.sliding_windows,
                s.random_windows,
                s.tiled_windows,
                s.points(),
                s.seconds(),
                s.multiplier()
            ));
        }
        out
    }
}

impl fmt::Display for SizeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "augmentation: {}", self.mode)?;
        writeln!(
            f,
            "{:<6} {:>6} {:>10} {:>8} {:>8} {:>8} {:>10} {:>9} {:>6}",
            "split", "steps", "raw pts", "sliding", "random", "tiled", "win pts", "seconds", "mult"
        )?;
        for (name, s) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            writeln!(
                f,
                "{:<6} {:>6} {:>10} {:>8} {:>8} {:>8} {:>10} {:>9.2} {:>5.2}x",
                name,
                s.steps,
                s.original_points,
                s.sliding_windows,
                s.random_windows,
                s.tiled_windows,
                s.points(),
                s.seconds(),
                s.multiplier()
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub report: SizeReport,
}

/// Materializes datasets for a given partition: training steps are
/// augmented per `spec.mode`, validation and test steps are tiled.
pub fn build_from_partition(
    steps: &[StepSegment],
    spec: &AugmentSpec,
    partition: &StepPartition,
    seed: u64,
) -> Result<DatasetSplits, PipelineError> {
    spec.validate()?;
    let collect = |idx: &[usize], kind: SplitKind| -> Result<(Dataset, SplitSize), PipelineError> {
        let mut windows = Vec::new();
        for &i in idx {
            let step = &steps[i];
            if kind == SplitKind::Train {
                windows.extend(augment_step(step, spec, seed)?);
            } else {
                windows.extend(test_windows(step, spec)?);
            }
        }
        let original = idx.iter().map(|&i| steps[i].imu.len()).sum();
        let size = SplitSize::count(&windows, idx.len(), original, spec.win_imu);
        Ok((
            Dataset {
                windows,
                split: kind,
                seed,
                differential: spec.differential,
            },
            size,
        ))
    };
    let (train, train_size) = collect(&partition.train, SplitKind::Train)?;
    let (val, val_size) = collect(&partition.val, SplitKind::Val)?;
    let (test, test_size) = collect(&partition.test, SplitKind::Test)?;
    Ok(DatasetSplits {
        train,
        val,
        test,
        report: SizeReport {
            mode: spec.mode,
            train: train_size,
            val: val_size,
            test: test_size,
        },
    })
}

/// Splits `steps` per `split` and builds train/val/test datasets.
pub fn build_dataset(steps: &[StepSegment], spec: &AugmentSpec, split: &SplitSpec) -> Result<DatasetSplits, PipelineError> {
    if steps.len() < MIN_STEPS {
        return Err(PipelineError::TooFewSteps {
            required: MIN_STEPS,
            found: steps.len(),
        });
    }
    let partition = split_steps(steps, split)?;
    build_from_partition(steps, spec, &partition, split.seed)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn store_err(e: impl fmt::Display) -> PipelineError {
    PipelineError::Store(e.to_string())
}

/// Writes `<name>_windows.csv`, `<name>_x.bin`, `<name>_y.bin` and
/// `<name>_meta.txt` into `dir`.
pub fn save_dataset(ds: &Dataset, dir: &Path, name: &str) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut csv = String::from("index,subject,step,imu_start,tag,origin_x,origin_y,origin_z\n");
    for (i, w) in ds.windows.iter().enumerate() {
        let p = &w.provenance;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            i, p.subject_id, p.step_index, p.imu_start, p.tag, p.origin[0], p.origin[1], p.origin[2]
        ));
    }
    let path = dir.join(format!("{name}_windows.csv"));
    fs::write(&path, csv).map_err(io_err(&path))?;
    let all: Vec<usize> = (0..ds.len()).collect();
    let x = ds.inputs::<f64>(&all);
    let y = stack_targets(ds);
    for (suffix, t) in [("x", &x), ("y", &y)] {
        let path = dir.join(format!("{name}_{suffix}.bin"));
        let mut f = fs::File::create(&path).map_err(io_err(&path))?;
        t.write_to(&mut f).map_err(io_err(&path))?;
    }
    let mut meta = KeyValues::new();
    meta.set("split", ds.split);
    meta.set("seed", ds.seed);
    meta.set("differential", ds.differential);
    meta.set("windows", ds.len());
    let path = dir.join(format!("{name}_meta.txt"));
    fs::write(&path, meta.to_string()).map_err(io_err(&path))
}

fn stack_targets(ds: &Dataset) -> Tensor<f64> {
    let (c, t) = ds.windows.first().map_or((GT_CHANNELS, 0), |w| (w.y.shape()[0], w.y.shape()[1]));
    let data = ds.windows.iter().flat_map(|w| w.y.data().iter().copied()).collect();
    Tensor::from_vec(&[ds.len(), c, t], data).expect("uniform window shapes")
}

pub fn load_dataset(dir: &Path, name: &str) -> Result<Dataset, PipelineError> {
    let path = dir.join(format!("{name}_meta.txt"));
    let meta = KeyValues::parse(&fs::read_to_string(&path).map_err(io_err(&path))?).map_err(store_err)?;
    let read = |suffix: &str| -> Result<Tensor<f64>, PipelineError> {
        let path = dir.join(format!("{name}_{suffix}.bin"));
        let mut f = fs::File::open(&path).map_err(io_err(&path))?;
        Tensor::read_from(&mut f).map_err(store_err)
    };
    let (x, y) = (read("x")?, read("y")?);
    let path = dir.join(format!("{name}_windows.csv"));
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let n: usize = meta.require("windows").map_err(store_err)?;
    if x.rank() != 3 || y.rank() != 3 || x.shape()[0] != n || y.shape()[0] != n {
        return Err(store_err(format!("tensor shapes {:?}, {:?} do not hold {} windows", x.shape(), y.shape(), n)));
    }
    let (xs, ys) = (&x.shape()[1..], &y.shape()[1..]);
    let (xl, yl) = (xs[0] * xs[1], ys[0] * ys[1]);
    let mut windows = Vec::with_capacity(n);
    for (i, line) in text.lines().skip(1).enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 || i >= n {
            return Err(store_err(format!("{}: bad row {}", path.display(), i + 2)));
        }
        let num = |s: &str| s.parse::<f64>().map_err(store_err);
        windows.push(Window {
            x: Tensor::from_vec(xs, x.data()[i * xl..(i + 1) * xl].to_vec()).map_err(store_err)?,
            y: Tensor::from_vec(ys, y.data()[i * yl..(i + 1) * yl].to_vec()).map_err(store_err)?,
            provenance: Provenance {
                subject_id: f[1].to_string(),
                step_index: f[2].parse().map_err(store_err)?,
                imu_start: f[3].parse().map_err(store_err)?,
                tag: f[4].parse().map_err(store_err)?,
                origin: [num(f[5])?, num(f[6])?, num(f[7])?],
            },
        });
    }
    if windows.len() != n {
        return Err(store_err(format!("{} rows for {} windows", windows.len(), n)));
    }
    Ok(Dataset {
        windows,
        split: meta.require("split").map_err(store_err)?,
        seed: meta.require("seed").map_err(store_err)?,
        differential: meta.require("differential").map_err(store_err)?,
    })
}

/// Writes validated steps as `steps.csv` plus `imu.bin` (`[N, 7]`: t, accel,
/// gyro) and `gt.bin` (`[N / 5, 3]`, cm).
pub fn save_steps(steps: &[StepSegment], dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut csv = String::from("subject,step,imu_offset,imu_len\n");
    let mut imu = Vec::new();
    let mut gt = Vec::new();
    for s in steps {
        csv.push_str(&format!("{},{},{},{}\n", s.subject_id, s.step_index, s.imu_offset, s.imu.len()));
        for k in &s.imu {
            imu.push(k.t);
            imu.extend(k.accel);
            imu.extend(k.gyro);
        }
        gt.extend(s.gt.iter().flatten());
    }
    let path = dir.join("steps.csv");
    fs::write(&path, csv).map_err(io_err(&path))?;
    let n = imu.len() / 7;
    let imu = Tensor::from_vec(&[n, 7], imu).expect("row length 7");
    let gt = Tensor::from_vec(&[gt.len() / 3, 3], gt).expect("row length 3");
    for (name, t) in [("imu.bin", &imu), ("gt.bin", &gt)] {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).map_err(io_err(&path))?;
        t.write_to(&mut f).map_err(io_err(&path))?;
    }
    Ok(())
}

pub fn load_steps(dir: &Path) -> Result<Vec<StepSegment>, PipelineError> {
    let read = |name: &str| -> Result<Tensor<f64>, PipelineError> {
        let path = dir.join(name);
        let mut f = fs::File::open(&path).map_err(io_err(&path))?;
        Tensor::read_from(&mut f).map_err(store_err)
    };
    let (imu, gt) = (read("imu.bin")?, read("gt.bin")?);
    let path = dir.join("steps.csv");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let (mut ki, mut kg) = (0usize, 0usize);
    let mut out = Vec::new();
    for (i, line) in text.lines().skip(1).enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(store_err(format!("{}: bad row {}", path.display(), i + 2)));
        }
        let len: usize = f[3].parse().map_err(store_err)?;
        let n_gt = len / RATE_RATIO;
        if (ki + len) * 7 > imu.len() || (kg + n_gt) * 3 > gt.len() {
            return Err(store_err("step table exceeds stored samples"));
        }
        let samples = imu.data()[ki * 7..(ki + len) * 7]
            .chunks_exact(7)
            .map(|r| ImuSample {
                t: r[0],
                accel: [r[1], r[2], r[3]],
                gyro: [r[4], r[5], r[6]],
            })
            .collect();
        let points = gt.data()[kg * 3..(kg + n_gt) * 3].chunks_exact(3).map(|r| [r[0], r[1], r[2]]).collect();
        let step = StepSegment {
            subject_id: f[0].to_string(),
            step_index: f[1].parse().map_err(store_err)?,
            imu_offset: f[2].parse().map_err(store_err)?,
            imu: samples,
            gt: points,
        };
        step.validate().map_err(store_err)?;
        out.push(step);
        ki += len;
        kg += n_gt;
    }
    Ok(out)
}
