//! Synthetic foot-mounted IMU recordings with exact ground truth.
//!
//! A walk is a sequence of stance intervals (foot at rest) and swing phases.
//! During a swing of duration `T` and stride `D = speed * T`, with `u = t / T`:
//!
//! ```text
//! X(u) = D (u - sin(2 pi u) / (2 pi))
//! Y(u) = sway sin(2 pi u)
//! Z(u) = clearance sin^2(pi u)
//! pitch(u) = pitch_amplitude sin(2 pi u)
//! ```
//!
//! The accelerometer reports specific force (`a - g`, so a resting sensor
//! reads `+9.80665` on its z axis) rotated into the body frame by the pitch;
//! the gyroscope reports the pitch rate about the body y axis.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{KeyValues, KvError};
use crate::error::{ImuError, SimError};
use crate::imu::{
    align_streams, segment_steps_annotated, write_annotations, write_gt_csv, write_imu_csv, GroundTruthStream,
    GtUnits, ImuSample, ImuStream, ImuUnits, StepSegment, ACCEL_RANGE, GRAVITY, GT_RATE_HZ, GYRO_RANGE, IMU_RATE_HZ,
    RATE_RATIO,
};

pub const SPEED_RANGE: (f64, f64) = (0.45, 1.75);
pub const STEP_DURATION_RANGE: (f64, f64) = (0.6, 1.4);
pub const CLEARANCE_RANGE: (f64, f64) = (2.0, 8.0);
pub const SWAY_RANGE: (f64, f64) = (0.0, 3.0);
/// Durations are quantized to this grid so every phase boundary falls on a
/// ground-truth sample.
pub const TIME_QUANTUM: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct GaitParams {
    /// m/s
    pub speed: f64,
    /// Swing duration, s.
    pub step_duration: f64,
    /// Peak foot height, cm.
    pub clearance: f64,
    /// Peak lateral excursion, cm.
    pub sway: f64,
    /// Peak pitch, rad.
    pub pitch_amplitude: f64,
    /// Rest after the swing, s.
    pub stance_duration: f64,
    pub accel_noise_sigma: f64,
    pub gyro_noise_sigma: f64,
    pub accel_bias: [f64; 3],
    pub gyro_bias: [f64; 3],
    pub seed: u64,
}

impl Default for GaitParams {
    fn default() -> Self {
        GaitParams {
            speed: 1.0,
            step_duration: 0.8,
            clearance: 5.0,
            sway: 1.0,
            pitch_amplitude: 0.3,
            stance_duration: 0.3,
            accel_noise_sigma: 0.0,
            gyro_noise_sigma: 0.0,
            accel_bias: [0.0; 3],
            gyro_bias: [0.0; 3],
            seed: 0,
        }
    }
}

fn check_range(name: &str, v: f64, (lo, hi): (f64, f64)) -> Result<(), SimError> {
    if v.is_finite() && v >= lo && v <= hi {
        Ok(())
    } else {
        Err(SimError::InvalidParams(format!("{} = {} outside [{}, {}]", name, v, lo, hi)))
    }
}

fn check_quantized(name: &str, v: f64) -> Result<(), SimError> {
    let q = v / TIME_QUANTUM;
    if (q - q.round()).abs() > 1e-6 {
        return Err(SimError::InvalidParams(format!("{} = {} s is not a multiple of {} s", name, v, TIME_QUANTUM)));
    }
    Ok(())
}

impl GaitParams {
    pub fn validate(&self) -> Result<(), SimError> {
        check_range("speed", self.speed, SPEED_RANGE)?;
        check_range("step_duration", self.step_duration, STEP_DURATION_RANGE)?;
        check_range("clearance", self.clearance, CLEARANCE_RANGE)?;
        check_range("sway", self.sway, SWAY_RANGE)?;
        check_quantized("step_duration", self.step_duration)?;
        check_quantized("stance_duration", self.stance_duration)?;
        for (name, v) in [
            ("pitch_amplitude", self.pitch_amplitude),
            ("stance_duration", self.stance_duration),
            ("accel_noise_sigma", self.accel_noise_sigma),
            ("gyro_noise_sigma", self.gyro_noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::InvalidParams(format!("{} = {} must be >= 0", name, v)));
            }
        }
        if self.accel_bias.iter().chain(&self.gyro_bias).any(|b| !b.is_finite()) {
            return Err(SimError::InvalidParams("biases must be finite".into()));
        }
        Ok(())
    }

    pub fn stride(&self) -> f64 {
        self.speed * self.step_duration
    }
}

/// A continuous foot motion: position in meters (lab frame) and pitch in
/// radians, with analytic derivatives.
pub trait FootMotion {
    fn duration(&self) -> f64;
    fn position(&self, t: f64) -> [f64; 3];
    fn velocity(&self, t: f64) -> [f64; 3];
    fn acceleration(&self, t: f64) -> [f64; 3];
    fn pitch(&self, t: f64) -> f64;
    fn pitch_rate(&self, t: f64) -> f64;
}

/// One swing phase starting at `origin`.
#[derive(Clone, Debug, PartialEq)]
pub struct SwingPath {
    pub origin: [f64; 3],
    /// m
    pub stride: f64,
    /// s
    pub duration: f64,
    /// m
    pub clearance: f64,
    /// m
    pub sway: f64,
    pub pitch_amplitude: f64,
}

impl SwingPath {
    pub fn end(&self) -> [f64; 3] {
        [self.origin[0] + self.stride, self.origin[1], self.origin[2]]
    }

    fn phase(&self, t: f64) -> f64 {
        2.0 * PI * t / self.duration
    }
}

impl FootMotion for SwingPath {
    fn duration(&self) -> f64 {
        self.duration
    }

    fn position(&self, t: f64) -> [f64; 3] {
        let w = self.phase(t);
        let o = self.origin;
        [
            o[0] + self.stride * (t / self.duration - w.sin() / (2.0 * PI)),
            o[1] + self.sway * w.sin(),
            o[2] + self.clearance * 0.5 * (1.0 - w.cos()),
        ]
    }

    fn velocity(&self, t: f64) -> [f64; 3] {
        let w = self.phase(t);
        let k = 2.0 * PI / self.duration;
        [
            self.stride / self.duration * (1.0 - w.cos()),
            self.sway * k * w.cos(),
            self.clearance * 0.5 * k * w.sin(),
        ]
    }

    fn acceleration(&self, t: f64) -> [f64; 3] {
        let w = self.phase(t);
        let k = 2.0 * PI / self.duration;
        [
            self.stride / self.duration * k * w.sin(),
            -self.sway * k * k * w.sin(),
            self.clearance * 0.5 * k * k * w.cos(),
        ]
    }

    fn pitch(&self, t: f64) -> f64 {
        self.pitch_amplitude * self.phase(t).sin()
    }

    fn pitch_rate(&self, t: f64) -> f64 {
        self.pitch_amplitude * 2.0 * PI / self.duration * self.phase(t).cos()
    }
}

/// Foot at rest.
#[derive(Clone, Debug, PartialEq)]
pub struct Stance {
    pub position: [f64; 3],
    pub duration: f64,
}

impl FootMotion for Stance {
    fn duration(&self) -> f64 {
        self.duration
    }
    fn position(&self, _: f64) -> [f64; 3] {
        self.position
    }
    fn velocity(&self, _: f64) -> [f64; 3] {
        [0.0; 3]
    }
    fn acceleration(&self, _: f64) -> [f64; 3] {
        [0.0; 3]
    }
    fn pitch(&self, _: f64) -> f64 {
        0.0
    }
    fn pitch_rate(&self, _: f64) -> f64 {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Phase {
    Stance(Stance),
    Swing(SwingPath),
}

impl Phase {
    fn motion(&self) -> &dyn FootMotion {
        match self {
            Phase::Stance(s) => s,
            Phase::Swing(s) => s,
        }
    }
}

/// A concatenation of phases; each phase starts on an IMU sample index.
#[derive(Clone, Debug, PartialEq)]
pub struct Walk {
    /// `(first IMU sample, phase)`
    pub phases: Vec<(usize, Phase)>,
    pub samples: usize,
}

impl Walk {
    pub fn new() -> Self {
        Walk {
            phases: Vec::new(),
            samples: 0,
        }
    }

    pub fn end_position(&self) -> [f64; 3] {
        match self.phases.last() {
            None => [0.0; 3],
            Some((_, Phase::Stance(s))) => s.position,
            Some((_, Phase::Swing(s))) => s.end(),
        }
    }

    /// Appends a phase; returns its sample range.
    pub fn push(&mut self, phase: Phase) -> (usize, usize) {
        let n = (phase.motion().duration() * IMU_RATE_HZ).round() as usize;
        let start = self.samples;
        self.phases.push((start, phase));
        self.samples += n;
        (start, self.samples)
    }

    fn locate(&self, t: f64) -> (&dyn FootMotion, f64) {
        let k = (t * IMU_RATE_HZ + 1e-9).floor() as usize;
        let i = self.phases.partition_point(|(s, _)| *s <= k).saturating_sub(1);
        let (start, phase) = &self.phases[i];
        (phase.motion(), t - *start as f64 / IMU_RATE_HZ)
    }
}

impl Default for Walk {
    fn default() -> Self {
        Self::new()
    }
}

impl FootMotion for Walk {
    fn duration(&self) -> f64 {
        self.samples as f64 / IMU_RATE_HZ
    }
    fn position(&self, t: f64) -> [f64; 3] {
        let (m, tl) = self.locate(t);
        m.position(tl)
    }
    fn velocity(&self, t: f64) -> [f64; 3] {
        let (m, tl) = self.locate(t);
        m.velocity(tl)
    }
    fn acceleration(&self, t: f64) -> [f64; 3] {
        let (m, tl) = self.locate(t);
        m.acceleration(tl)
    }
    fn pitch(&self, t: f64) -> f64 {
        let (m, tl) = self.locate(t);
        m.pitch(tl)
    }
    fn pitch_rate(&self, t: f64) -> f64 {
        let (m, tl) = self.locate(t);
        m.pitch_rate(tl)
    }
}

/// The swing phase described by `params`, starting at the lab origin.
pub fn synth_trajectory(params: &GaitParams) -> Result<SwingPath, SimError> {
    params.validate()?;
    Ok(SwingPath {
        origin: [0.0; 3],
        stride: params.stride(),
        duration: params.step_duration,
        clearance: params.clearance / 100.0,
        sway: params.sway / 100.0,
        pitch_amplitude: params.pitch_amplitude,
    })
}

/// Specific force in the body frame for a sensor pitched by `theta` about y.
pub fn body_specific_force(world_accel: [f64; 3], theta: f64) -> [f64; 3] {
    let f = [world_accel[0], world_accel[1], world_accel[2] + GRAVITY];
    let (s, c) = theta.sin_cos();
    [c * f[0] - s * f[2], f[1], s * f[0] + c * f[2]]
}

/// Inverse of [`body_specific_force`].
pub fn world_accel_from_body(body: [f64; 3], theta: f64) -> [f64; 3] {
    let (s, c) = theta.sin_cos();
    [c * body[0] + s * body[2], body[1], -s * body[0] + c * body[2] - GRAVITY]
}

/// Samples `path` at 500 Hz (IMU) and 100 Hz (ground truth, cm). Noise and
/// bias come from `params`; the noise stream is seeded by `params.seed`.
pub fn imu_from_trajectory(
    path: &dyn FootMotion,
    params: &GaitParams,
    subject_id: &str,
) -> Result<(ImuStream, GroundTruthStream), SimError> {
    for (name, v) in [
        ("accel_noise_sigma", params.accel_noise_sigma),
        ("gyro_noise_sigma", params.gyro_noise_sigma),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(SimError::InvalidParams(format!("{} = {} must be >= 0", name, v)));
        }
    }
    let n_gt = (path.duration() * GT_RATE_HZ).round() as usize;
    let n = n_gt * RATE_RATIO;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let accel_noise = Normal::new(0.0, params.accel_noise_sigma).expect("sigma checked");
    let gyro_noise = Normal::new(0.0, params.gyro_noise_sigma).expect("sigma checked");
    let mut samples = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 / IMU_RATE_HZ;
        let clean_a = body_specific_force(path.acceleration(t), path.pitch(t));
        let clean_g = [0.0, path.pitch_rate(t), 0.0];
        let mut accel = [0.0; 3];
        let mut gyro = [0.0; 3];
        for i in 0..3 {
            accel[i] = clean_a[i] + params.accel_bias[i] + accel_noise.sample(&mut rng);
            gyro[i] = clean_g[i] + params.gyro_bias[i] + gyro_noise.sample(&mut rng);
            if accel[i].abs() > ACCEL_RANGE {
                return Err(SimError::RangeExceeded {
                    channel: ["ax", "ay", "az"][i],
                    value: accel[i],
                });
            }
            if gyro[i].abs() > GYRO_RANGE {
                return Err(SimError::RangeExceeded {
                    channel: ["gx", "gy", "gz"][i],
                    value: gyro[i],
                });
            }
        }
        samples.push(ImuSample { t, accel, gyro });
    }
    let t: Vec<f64> = (0..n_gt).map(|j| (j * RATE_RATIO) as f64 / IMU_RATE_HZ).collect();
    let positions = t.iter().map(|&tj| path.position(tj).map(|p| p * 100.0)).collect();
    Ok((
        ImuStream {
            rate_hz: IMU_RATE_HZ,
            samples,
            subject_id: subject_id.to_string(),
        },
        GroundTruthStream {
            rate_hz: GT_RATE_HZ,
            t,
            positions,
            subject_id: subject_id.to_string(),
        },
    ))
}

/// Draw ranges for corpus generation. Per-subject values are drawn
/// uniformly; each step then jitters them by `±jitter` (relative).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamRanges {
    pub speed: (f64, f64),
    pub step_duration: (f64, f64),
    pub clearance: (f64, f64),
    pub sway: (f64, f64),
    pub pitch_amplitude: (f64, f64),
    pub stance_duration: (f64, f64),
    pub jitter: f64,
    /// Rest before the first step, s.
    pub lead_in: f64,
    pub accel_noise_sigma: f64,
    pub gyro_noise_sigma: f64,
    /// Per-subject constant bias, drawn N(0, sigma) per axis.
    pub accel_bias_sigma: f64,
    pub gyro_bias_sigma: f64,
}

impl Default for ParamRanges {
    fn default() -> Self {
        ParamRanges {
            speed: SPEED_RANGE,
            step_duration: STEP_DURATION_RANGE,
            clearance: CLEARANCE_RANGE,
            sway: SWAY_RANGE,
            pitch_amplitude: (0.2, 0.5),
            stance_duration: (0.2, 0.4),
            jitter: 0.05,
            lead_in: 0.5,
            accel_noise_sigma: 0.0,
            gyro_noise_sigma: 0.0,
            accel_bias_sigma: 0.0,
            gyro_bias_sigma: 0.0,
        }
    }
}

fn parse_pair(kv: &KeyValues, key: &str, default: (f64, f64)) -> Result<(f64, f64), KvError> {
    match kv.get_list::<f64>(key)? {
        None => Ok(default),
        Some(v) if v.len() == 2 && v[0] <= v[1] => Ok((v[0], v[1])),
        Some(_) => Err(KvError {
            key: key.to_string(),
            message: "expected `lo,hi` with lo <= hi".into(),
        }),
    }
}

impl ParamRanges {
    pub fn to_kv(&self, prefix: &str) -> KeyValues {
        let mut kv = KeyValues::new();
        let pair = |(a, b): (f64, f64)| format!("{},{}", a, b);
        kv.set(&format!("{prefix}speed"), pair(self.speed));
        kv.set(&format!("{prefix}step_duration"), pair(self.step_duration));
        kv.set(&format!("{prefix}clearance"), pair(self.clearance));
        kv.set(&format!("{prefix}sway"), pair(self.sway));
        kv.set(&format!("{prefix}pitch_amplitude"), pair(self.pitch_amplitude));
        kv.set(&format!("{prefix}stance_duration"), pair(self.stance_duration));
        kv.set(&format!("{prefix}jitter"), self.jitter);
        kv.set(&format!("{prefix}lead_in"), self.lead_in);
        kv.set(&format!("{prefix}accel_noise_sigma"), self.accel_noise_sigma);
        kv.set(&format!("{prefix}gyro_noise_sigma"), self.gyro_noise_sigma);
        kv.set(&format!("{prefix}accel_bias_sigma"), self.accel_bias_sigma);
        kv.set(&format!("{prefix}gyro_bias_sigma"), self.gyro_bias_sigma);
        kv
    }

    pub fn from_kv(kv: &KeyValues, prefix: &str) -> Result<Self, KvError> {
        let d = ParamRanges::default();
        Ok(ParamRanges {
            speed: parse_pair(kv, &format!("{prefix}speed"), d.speed)?,
            step_duration: parse_pair(kv, &format!("{prefix}step_duration"), d.step_duration)?,
            clearance: parse_pair(kv, &format!("{prefix}clearance"), d.clearance)?,
            sway: parse_pair(kv, &format!("{prefix}sway"), d.sway)?,
            pitch_amplitude: parse_pair(kv, &format!("{prefix}pitch_amplitude"), d.pitch_amplitude)?,
            stance_duration: parse_pair(kv, &format!("{prefix}stance_duration"), d.stance_duration)?,
            jitter: kv.get_or(&format!("{prefix}jitter"), d.jitter)?,
            lead_in: kv.get_or(&format!("{prefix}lead_in"), d.lead_in)?,
            accel_noise_sigma: kv.get_or(&format!("{prefix}accel_noise_sigma"), d.accel_noise_sigma)?,
            gyro_noise_sigma: kv.get_or(&format!("{prefix}gyro_noise_sigma"), d.gyro_noise_sigma)?,
            accel_bias_sigma: kv.get_or(&format!("{prefix}accel_bias_sigma"), d.accel_bias_sigma)?,
            gyro_bias_sigma: kv.get_or(&format!("{prefix}gyro_bias_sigma"), d.gyro_bias_sigma)?,
        })
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let inside = |name: &str, (lo, hi): (f64, f64), (min, max): (f64, f64)| {
            if lo >= min && hi <= max && lo <= hi {
                Ok(())
            } else {
                Err(SimError::InvalidParams(format!("{} range [{}, {}] outside [{}, {}]", name, lo, hi, min, max)))
            }
        };
        inside("speed", self.speed, SPEED_RANGE)?;
        inside("step_duration", self.step_duration, STEP_DURATION_RANGE)?;
        inside("clearance", self.clearance, CLEARANCE_RANGE)?;
        inside("sway", self.sway, SWAY_RANGE)?;
        inside("pitch_amplitude", self.pitch_amplitude, (0.0, 1.5))?;
        inside("stance_duration", self.stance_duration, (0.0, 5.0))?;
        for (name, v) in [
            ("jitter", self.jitter),
            ("lead_in", self.lead_in),
            ("accel_noise_sigma", self.accel_noise_sigma),
            ("gyro_noise_sigma", self.gyro_noise_sigma),
            ("accel_bias_sigma", self.accel_bias_sigma),
            ("gyro_bias_sigma", self.gyro_bias_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::InvalidParams(format!("{} = {} must be >= 0", name, v)));
            }
        }
        if self.jitter >= 1.0 {
            return Err(SimError::InvalidParams("jitter must be < 1".into()));
        }
        Ok(())
    }
}

/// One simulated subject: continuous recordings plus the true step layout.
#[derive(Clone, Debug)]
pub struct SubjectWalk {
    pub subject_id: String,
    pub walk: Walk,
    pub imu: ImuStream,
    pub gt: GroundTruthStream,
    /// True swing boundaries, IMU sample indices (end exclusive).
    pub boundaries: Vec<(usize, usize)>,
    pub step_params: Vec<GaitParams>,
}

/// A segmented step together with the simulator's hidden truth.
#[derive(Clone, Debug)]
pub struct SyntheticStep {
    pub segment: StepSegment,
    pub path: SwingPath,
    pub boundary: (usize, usize),
    pub params: GaitParams,
}

fn quantize(v: f64) -> f64 {
    (v / TIME_QUANTUM).round() / TIME_QUANTUM.recip()
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn jittered(rng: &mut ChaCha8Rng, base: f64, jitter: f64, (lo, hi): (f64, f64)) -> f64 {
    let f = if jitter > 0.0 {
        1.0 + rng.random_range(-jitter..=jitter)
    } else {
        1.0
    };
    (base * f).clamp(lo, hi)
}

pub fn subject_id(index: usize) -> String {
    format!("S{:02}", index + 1)
}

/// Simulates `n_subjects` walks of `steps_per_subject` steps each.
pub fn generate_walks(
    n_subjects: usize,
    steps_per_subject: usize,
    ranges: &ParamRanges,
    seed: u64,
) -> Result<Vec<SubjectWalk>, SimError> {
    if n_subjects == 0 || steps_per_subject == 0 {
        return Err(SimError::InvalidParams("need at least one subject and one step".into()));
    }
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_subjects);
    for s in 0..n_subjects {
        let id = subject_id(s);
        let bias = |rng: &mut ChaCha8Rng, sigma: f64| {
            let d = Normal::new(0.0, sigma).expect("sigma checked");
            [d.sample(rng), d.sample(rng), d.sample(rng)]
        };
        let base = GaitParams {
            speed: uniform(&mut rng, ranges.speed),
            step_duration: uniform(&mut rng, ranges.step_duration),
            clearance: uniform(&mut rng, ranges.clearance),
            sway: uniform(&mut rng, ranges.sway),
            pitch_amplitude: uniform(&mut rng, ranges.pitch_amplitude),
            stance_duration: uniform(&mut rng, ranges.stance_duration),
            accel_noise_sigma: ranges.accel_noise_sigma,
            gyro_noise_sigma: ranges.gyro_noise_sigma,
            accel_bias: bias(&mut rng, ranges.accel_bias_sigma),
            gyro_bias: bias(&mut rng, ranges.gyro_bias_sigma),
            seed: rng.random(),
        };
        let mut walk = Walk::new();
        walk.push(Phase::Stance(Stance {
            position: [0.0; 3],
            duration: quantize(ranges.lead_in),
        }));
        let mut boundaries = Vec::with_capacity(steps_per_subject);
        let mut step_params = Vec::with_capacity(steps_per_subject);
        for _ in 0..steps_per_subject {
            let j = ranges.jitter;
            let p = GaitParams {
                speed: jittered(&mut rng, base.speed, j, SPEED_RANGE),
                step_duration: quantize(jittered(&mut rng, base.step_duration, j, STEP_DURATION_RANGE)),
                clearance: jittered(&mut rng, base.clearance, j, CLEARANCE_RANGE),
                sway: jittered(&mut rng, base.sway, j, SWAY_RANGE),
                pitch_amplitude: jittered(&mut rng, base.pitch_amplitude, j, (0.0, f64::INFINITY)),
                stance_duration: quantize(jittered(&mut rng, base.stance_duration, j, (0.0, f64::INFINITY))),
                ..base.clone()
            };
            p.validate()?;
            let mut swing = synth_trajectory(&p)?;
            swing.origin = walk.end_position();
            let end = swing.end();
            boundaries.push(walk.push(Phase::Swing(swing)));
            walk.push(Phase::Stance(Stance {
                position: end,
                duration: p.stance_duration,
            }));
            step_params.push(p);
        }
        let (imu, gt) = imu_from_trajectory(&walk, &base, &id)?;
        out.push(SubjectWalk {
            subject_id: id,
            walk,
            imu,
            gt,
            boundaries,
            step_params,
        });
    }
    Ok(out)
}

/// Splits simulated walks into steps through the regular alignment and
/// annotated-segmentation path.
pub fn segment_walks(walks: &[SubjectWalk]) -> Result<Vec<SyntheticStep>, SimError> {
    let mut out = Vec::new();
    for w in walks {
        let pair = align_streams(&w.imu, &w.gt)?;
        let segments = segment_steps_annotated(&pair, &w.boundaries)?;
        for ((segment, &boundary), params) in segments.into_iter().zip(&w.boundaries).zip(&w.step_params) {
            let path = match &w.walk.phases[1 + 2 * segment.step_index].1 {
                Phase::Swing(s) => s.clone(),
                Phase::Stance(_) => unreachable!("odd phases are swings"),
            };
            out.push(SyntheticStep {
                segment,
                path,
                boundary,
                params: params.clone(),
            });
        }
    }
    Ok(out)
}

/// `n_subjects * steps_per_subject` synthetic steps, deterministic in `seed`.
pub fn generate_corpus(
    n_subjects: usize,
    steps_per_subject: usize,
    ranges: &ParamRanges,
    seed: u64,
) -> Result<Vec<SyntheticStep>, SimError> {
    segment_walks(&generate_walks(n_subjects, steps_per_subject, ranges, seed)?)
}

/// Writes `<id>_imu.csv`, `<id>_gt.csv` and `<id>_steps.csv` per subject.
pub fn write_corpus(walks: &[SubjectWalk], dir: &Path) -> Result<(), SimError> {
    fs::create_dir_all(dir).map_err(|source| ImuError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for w in walks {
        write_imu_csv(&w.imu, &dir.join(format!("{}_imu.csv", w.subject_id)), ImuUnits::Si)?;
        write_gt_csv(&w.gt, &dir.join(format!("{}_gt.csv", w.subject_id)), GtUnits::Mm)?;
        write_annotations(&w.boundaries, &dir.join(format!("{}_steps.csv", w.subject_id)))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn swing_boundary_conditions() {
        let p = GaitParams::default();
        let s = synth_trajectory(&p).unwrap();
        let a = s.position(0.0);
        let b = s.position(p.step_duration);
        assert_eq!(a, [0.0; 3]);
        assert!((b[0] - p.speed * p.step_duration).abs() < 1e-12);
        assert!(b[1].abs() < 1e-12 && b[2].abs() < 1e-12);
        let zmax = s.position(p.step_duration / 2.0)[2];
        assert!((zmax - p.clearance / 100.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let p = GaitParams {
            speed: 2.0,
            ..GaitParams::default()
        };
        assert!(matches!(synth_trajectory(&p), Err(SimError::InvalidParams(_))));
        let p = GaitParams {
            step_duration: 0.805,
            ..GaitParams::default()
        };
        assert!(synth_trajectory(&p).is_err());
    }

    #[test]
    fn stationary_sensor_reads_gravity() {
        let rest = Stance {
            position: [1.0, 2.0, 3.0],
            duration: 1.0,
        };
        let (imu, gt) = imu_from_trajectory(&rest, &GaitParams::default(), "s").unwrap();
        assert_eq!(imu.samples.len(), 500);
        assert_eq!(gt.positions.len(), 100);
        for s in &imu.samples {
            assert_eq!(s.accel, [0.0, 0.0, GRAVITY]);
            assert_eq!(s.gyro, [0.0; 3]);
        }
        assert_eq!(gt.positions[0], [100.0, 200.0, 300.0]);
    }

    #[test]
    fn body_rotation_round_trips() {
        let a = [1.5, -0.25, 3.0];
        let b = world_accel_from_body(body_specific_force(a, 0.4), 0.4);
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        let s = synth_trajectory(&GaitParams::default()).unwrap();
        let h = 1e-6;
        for &t in &[0.1, 0.33, 0.5, 0.71] {
            let (p0, p1) = (s.position(t - h), s.position(t + h));
            let (v0, v1) = (s.velocity(t - h), s.velocity(t + h));
            let v = s.velocity(t);
            let a = s.acceleration(t);
            for i in 0..3 {
                assert!(((p1[i] - p0[i]) / (2.0 * h) - v[i]).abs() < 1e-6);
                assert!(((v1[i] - v0[i]) / (2.0 * h) - a[i]).abs() < 1e-5);
            }
            let r = (s.pitch(t + h) - s.pitch(t - h)) / (2.0 * h);
            assert!((r - s.pitch_rate(t)).abs() < 1e-6);
        }
    }

    #[test]
    fn corpus_counts_and_ids() {
        let steps = generate_corpus(3, 4, &ParamRanges::default(), 5).unwrap();
        assert_eq!(steps.len(), 12);
        let mut ids: Vec<_> = steps.iter().map(|s| s.segment.subject_id.clone()).collect();
        ids.dedup();
        assert_eq!(ids, ["S01", "S02", "S03"]);
        for s in &steps {
            s.segment.validate().unwrap();
            let n = (s.params.step_duration * IMU_RATE_HZ).round() as usize;
            assert_eq!(s.segment.imu.len(), n);
        }
    }
}
