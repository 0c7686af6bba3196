//! IMU and ground-truth streams: CSV ingestion, 5:1 alignment and step
//! segmentation.
//!
//! Internal units are m/s², rad/s, centimeters and seconds.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::ImuError;

pub const IMU_RATE_HZ: f64 = 500.0;
pub const GT_RATE_HZ: f64 = 100.0;
/// IMU samples per ground-truth sample.
pub const RATE_RATIO: usize = 5;
pub const GRAVITY: f64 = 9.80665;
/// Accelerometer range, m/s² per axis (±16 g).
pub const ACCEL_RANGE: f64 = 16.0 * GRAVITY;
/// Gyroscope range, rad/s per axis (±2000 °/s).
pub const GYRO_RANGE: f64 = 2000.0 * std::f64::consts::PI / 180.0;
pub const MIN_STEP_SAMPLES: usize = 150;
pub const MAX_STEP_SAMPLES: usize = 2000;
/// Relative tolerance on the sampling grid.
pub const RATE_TOLERANCE: f64 = 0.01;
pub const MIN_OVERLAP_S: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    /// m/s²
    pub accel: [f64; 3],
    /// rad/s
    pub gyro: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImuStream {
    pub rate_hz: f64,
    pub samples: Vec<ImuSample>,
    pub subject_id: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthStream {
    pub rate_hz: f64,
    pub t: Vec<f64>,
    /// Lab frame, cm: X walking direction, Y lateral, Z vertical.
    pub positions: Vec<[f64; 3]>,
    pub subject_id: String,
}

impl ImuStream {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate_hz
    }
}

impl GroundTruthStream {
    pub fn duration(&self) -> f64 {
        self.positions.len() as f64 / self.rate_hz
    }
}

/// Units of the accelerometer/gyroscope columns in an IMU CSV.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImuUnits {
    /// g and degrees per second
    GDps,
    /// m/s² and rad/s
    Si,
}

impl ImuUnits {
    fn accel_scale(self) -> f64 {
        match self {
            ImuUnits::GDps => GRAVITY,
            ImuUnits::Si => 1.0,
        }
    }

    fn gyro_scale(self) -> f64 {
        match self {
            ImuUnits::GDps => std::f64::consts::PI / 180.0,
            ImuUnits::Si => 1.0,
        }
    }

    pub fn to_si(self, accel: [f64; 3], gyro: [f64; 3]) -> ([f64; 3], [f64; 3]) {
        let (a, g) = (self.accel_scale(), self.gyro_scale());
        (accel.map(|v| v * a), gyro.map(|v| v * g))
    }

    pub fn from_si(self, accel: [f64; 3], gyro: [f64; 3]) -> ([f64; 3], [f64; 3]) {
        let (a, g) = (self.accel_scale(), self.gyro_scale());
        (accel.map(|v| v / a), gyro.map(|v| v / g))
    }
}

impl fmt::Display for ImuUnits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ImuUnits::GDps => "g_dps",
            ImuUnits::Si => "si",
        })
    }
}

impl FromStr for ImuUnits {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "g_dps" => Ok(ImuUnits::GDps),
            "si" => Ok(ImuUnits::Si),
            _ => Err(format!("expected g_dps or si, found {:?}", s)),
        }
    }
}

/// Units of ground-truth position columns; capture systems export millimeters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GtUnits {
    Mm,
    Cm,
}

impl fmt::Display for GtUnits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GtUnits::Mm => "mm",
            GtUnits::Cm => "cm",
        })
    }
}

impl FromStr for GtUnits {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mm" => Ok(GtUnits::Mm),
            "cm" => Ok(GtUnits::Cm),
            _ => Err(format!("expected mm or cm, found {:?}", s)),
        }
    }
}

/// A CSV body plus `# key=value` directives gathered from comment lines.
struct CsvText {
    directives: Vec<(String, String)>,
    header: Option<(usize, Vec<String>)>,
    rows: Vec<(usize, Vec<String>)>,
}

fn read_csv(path: &Path) -> Result<CsvText, ImuError> {
    let file = fs::File::open(path).map_err(|source| ImuError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = CsvText {
        directives: Vec::new(),
        header: None,
        rows: Vec::new(),
    };
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| ImuError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            for part in rest.split_whitespace() {
                if let Some((k, v)) = part.split_once('=') {
                    out.directives.push((k.to_string(), v.to_string()));
                }
            }
            continue;
        }
        let cells: Vec<String> = line.split(',').map(|c| c.trim().to_string()).collect();
        if out.header.is_none() {
            out.header = Some((i + 1, cells));
        } else {
            out.rows.push((i + 1, cells));
        }
    }
    Ok(out)
}

impl CsvText {
    fn directive(&self, key: &str) -> Option<&str> {
        self.directives.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn malformed(path: &Path, line: usize, reason: impl Into<String>) -> ImuError {
    ImuError::MalformedRow {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn parse_floats(path: &Path, line: usize, cells: &[String], n: usize) -> Result<Vec<f64>, ImuError> {
    if cells.len() != n {
        return Err(malformed(path, line, format!("expected {} columns, found {}", n, cells.len())));
    }
    cells
        .iter()
        .map(|c| {
            c.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(path, line, format!("not a finite number: {:?}", c)))
        })
        .collect()
}

fn expect_header(path: &Path, csv: &CsvText, expected: &[&str], optional_tail: &[&str]) -> Result<usize, ImuError> {
    let Some((line, header)) = &csv.header else {
        return Err(ImuError::EmptyStream(path.to_path_buf()));
    };
    let base: Vec<&str> = header.iter().map(String::as_str).collect();
    let full: Vec<&str> = expected.iter().chain(optional_tail).copied().collect();
    if base == expected {
        Ok(expected.len())
    } else if !optional_tail.is_empty() && base == full {
        Ok(full.len())
    } else {
        Err(malformed(path, *line, format!("header must be {:?}", expected.join(","))))
    }
}

fn subject_from(csv: &CsvText, path: &Path) -> String {
    csv.directive("subject")
        .map(str::to_string)
        .unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
}

/// Checks strict monotonicity and the ±1% sampling grid.
fn check_grid(path: &Path, times: &[(usize, f64)], rate: f64) -> Result<(), ImuError> {
    let period = 1.0 / rate;
    for w in times.windows(2) {
        let ((_, t0), (line, t1)) = (w[0], w[1]);
        let dt = t1 - t0;
        if dt <= 0.0 {
            return Err(ImuError::NonMonotoneTime {
                path: path.to_path_buf(),
                line,
                t: t1,
            });
        }
        if (dt - period).abs() > RATE_TOLERANCE * period {
            return Err(ImuError::IrregularSampling {
                path: path.to_path_buf(),
                line,
                dt,
                rate,
            });
        }
    }
    Ok(())
}

/// Reads an IMU CSV (`t,ax,ay,az,gx,gy,gz[,mx,my,mz]`) into SI units.
///
/// `units` overrides a `# units=` directive in the file; one of the two must
/// be present. Magnetometer columns are dropped.
pub fn parse_imu_log(path: &Path, units: Option<ImuUnits>) -> Result<ImuStream, ImuError> {
    let csv = read_csv(path)?;
    let n_cols = expect_header(path, &csv, &["t", "ax", "ay", "az", "gx", "gy", "gz"], &["mx", "my", "mz"])?;
    let units = match units {
        Some(u) => u,
        None => {
            let line = csv.header.as_ref().map(|h| h.0).unwrap_or(1);
            csv.directive("units")
                .ok_or_else(|| malformed(path, line, "no `# units=` directive and no units given"))?
                .parse()
                .map_err(|e: String| malformed(path, line, e))?
        }
    };
    if csv.rows.is_empty() {
        return Err(ImuError::EmptyStream(path.to_path_buf()));
    }
    let mut samples = Vec::with_capacity(csv.rows.len());
    let mut times = Vec::with_capacity(csv.rows.len());
    for (line, cells) in &csv.rows {
        let v = parse_floats(path, *line, cells, n_cols)?;
        let (accel, gyro) = units.to_si([v[1], v[2], v[3]], [v[4], v[5], v[6]]);
        for (ch, val) in ["ax", "ay", "az"].iter().zip(accel) {
            if val.abs() > ACCEL_RANGE {
                return Err(ImuError::RangeViolation {
                    path: path.to_path_buf(),
                    line: *line,
                    channel: ch,
                    value: val,
                });
            }
        }
        for (ch, val) in ["gx", "gy", "gz"].iter().zip(gyro) {
            if val.abs() > GYRO_RANGE {
                return Err(ImuError::RangeViolation {
                    path: path.to_path_buf(),
                    line: *line,
                    channel: ch,
                    value: val,
                });
            }
        }
        times.push((*line, v[0]));
        samples.push(ImuSample { t: v[0], accel, gyro });
    }
    check_grid(path, &times, IMU_RATE_HZ)?;
    Ok(ImuStream {
        rate_hz: IMU_RATE_HZ,
        samples,
        subject_id: subject_from(&csv, path),
    })
}

/// Reads a ground-truth CSV (`t,x,y,z`), millimeters unless a
/// `# units=cm` directive says otherwise, into centimeters.
pub fn parse_gt_log(path: &Path) -> Result<GroundTruthStream, ImuError> {
    let csv = read_csv(path)?;
    let n_cols = expect_header(path, &csv, &["t", "x", "y", "z"], &[])?;
    let units = match csv.directive("units") {
        Some(u) => u
            .parse::<GtUnits>()
            .map_err(|e| malformed(path, csv.header.as_ref().map(|h| h.0).unwrap_or(1), e))?,
        None => GtUnits::Mm,
    };
    if csv.rows.is_empty() {
        return Err(ImuError::EmptyStream(path.to_path_buf()));
    }
    let mut t = Vec::with_capacity(csv.rows.len());
    let mut positions = Vec::with_capacity(csv.rows.len());
    let mut times = Vec::with_capacity(csv.rows.len());
    for (line, cells) in &csv.rows {
        let v = parse_floats(path, *line, cells, n_cols)?;
        let p = [v[1], v[2], v[3]];
        positions.push(match units {
            GtUnits::Mm => p.map(|c| c / 10.0),
            GtUnits::Cm => p,
        });
        t.push(v[0]);
        times.push((*line, v[0]));
    }
    check_grid(path, &times, GT_RATE_HZ)?;
    Ok(GroundTruthStream {
        rate_hz: GT_RATE_HZ,
        t,
        positions,
        subject_id: subject_from(&csv, path),
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ImuError + '_ {
    move |source| ImuError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_imu_csv(stream: &ImuStream, path: &Path, units: ImuUnits) -> Result<(), ImuError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut body = format!("# units={} subject={}\nt,ax,ay,az,gx,gy,gz\n", units, stream.subject_id);
    for s in &stream.samples {
        let (a, g) = units.from_si(s.accel, s.gyro);
        body.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.t, a[0], a[1], a[2], g[0], g[1], g[2]
        ));
    }
    w.write_all(body.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn write_gt_csv(stream: &GroundTruthStream, path: &Path, units: GtUnits) -> Result<(), ImuError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut body = format!("# units={} subject={}\nt,x,y,z\n", units, stream.subject_id);
    for (t, p) in stream.t.iter().zip(&stream.positions) {
        let q = match units {
            GtUnits::Mm => p.map(|c| c * 10.0),
            GtUnits::Cm => *p,
        };
        body.push_str(&format!("{},{},{},{}\n", t, q[0], q[1], q[2]));
    }
    w.write_all(body.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn parse_annotations(path: &Path) -> Result<Vec<(usize, usize)>, ImuError> {
    let csv = read_csv(path)?;
    expect_header(path, &csv, &["start", "end"], &[])?;
    csv.rows
        .iter()
        .map(|(line, cells)| {
            if cells.len() != 2 {
                return Err(malformed(path, *line, "expected 2 columns"));
            }
            let p = |c: &String| c.parse::<usize>().map_err(|_| malformed(path, *line, format!("not an index: {:?}", c)));
            Ok((p(&cells[0])?, p(&cells[1])?))
        })
        .collect()
}

pub fn write_annotations(annotations: &[(usize, usize)], path: &Path) -> Result<(), ImuError> {
    let mut body = String::from("start,end\n");
    for (s, e) in annotations {
        body.push_str(&format!("{},{}\n", s, e));
    }
    fs::write(path, body).map_err(io_err(path))
}

/// IMU and ground truth trimmed to a common interval with `gt[k] <-> imu[5k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedPair {
    pub imu: ImuStream,
    pub gt: GroundTruthStream,
}

fn estimated_rate(times: impl ExactSizeIterator<Item = f64> + Clone) -> f64 {
    let n = times.len();
    let first = times.clone().next().unwrap_or(0.0);
    let last = times.last().unwrap_or(0.0);
    if n < 2 || last <= first {
        return f64::NAN;
    }
    (n - 1) as f64 / (last - first)
}

/// Trims both streams to their common interval so that `gt[k]` is sampled at
/// the same instant as `imu[5k]` and `imu.len() == 5 * gt.len()`.
pub fn align_streams(imu: &ImuStream, gt: &GroundTruthStream) -> Result<AlignedPair, ImuError> {
    if imu.samples.is_empty() {
        return Err(ImuError::EmptyStream(PathBuf::from(format!("imu:{}", imu.subject_id))));
    }
    if gt.positions.is_empty() {
        return Err(ImuError::EmptyStream(PathBuf::from(format!("gt:{}", gt.subject_id))));
    }
    if imu.subject_id != gt.subject_id {
        return Err(ImuError::SubjectMismatch {
            imu: imu.subject_id.clone(),
            gt: gt.subject_id.clone(),
        });
    }
    let imu_rate = estimated_rate(imu.samples.iter().map(|s| s.t));
    let gt_rate = estimated_rate(gt.t.iter().copied());
    let ratio = imu_rate / gt_rate;
    if !ratio.is_finite() || (ratio - RATE_RATIO as f64).abs() > RATE_TOLERANCE * RATE_RATIO as f64 {
        return Err(ImuError::RateMismatch { ratio });
    }
    let imu_period = 1.0 / imu.rate_hz;
    let (imu_t0, imu_t1) = (imu.samples[0].t, imu.samples.last().unwrap().t + imu_period);
    let gt_period = 1.0 / gt.rate_hz;
    let (gt_t0, gt_t1) = (gt.t[0], gt.t.last().unwrap() + gt_period);
    let start = imu_t0.max(gt_t0);
    let end = imu_t1.min(gt_t1);
    let overlap = end - start;
    if overlap < MIN_OVERLAP_S {
        return Err(ImuError::NoOverlap {
            overlap: overlap.max(0.0),
            required: MIN_OVERLAP_S,
        });
    }
    let half = 0.5 * imu_period;
    let Some(j0) = gt.t.iter().position(|&t| t >= start - half) else {
        return Err(ImuError::NoOverlap { overlap: 0.0, required: MIN_OVERLAP_S });
    };
    let target = gt.t[j0];
    let i0 = imu
        .samples
        .iter()
        .position(|s| (s.t - target).abs() <= half)
        .ok_or(ImuError::RateMismatch { ratio })?;
    let n_gt = (gt.t.len() - j0).min((imu.samples.len() - i0) / RATE_RATIO);
    let n_gt = (0..n_gt)
        .rev()
        .find(|&k| gt.t[j0 + k] + gt_period <= end + half)
        .map_or(0, |k| k + 1);
    let n_imu = n_gt * RATE_RATIO;
    if n_gt == 0 || (n_gt as f64 * gt_period) < MIN_OVERLAP_S - half {
        return Err(ImuError::NoOverlap {
            overlap,
            required: MIN_OVERLAP_S,
        });
    }
    let last_gt = gt.t[j0 + n_gt - 1];
    let last_imu = imu.samples[i0 + (n_gt - 1) * RATE_RATIO].t;
    if (last_gt - last_imu).abs() > half {
        return Err(ImuError::RateMismatch { ratio });
    }
    Ok(AlignedPair {
        imu: ImuStream {
            rate_hz: imu.rate_hz,
            samples: imu.samples[i0..i0 + n_imu].to_vec(),
            subject_id: imu.subject_id.clone(),
        },
        gt: GroundTruthStream {
            rate_hz: gt.rate_hz,
            t: gt.t[j0..j0 + n_gt].to_vec(),
            positions: gt.positions[j0..j0 + n_gt].to_vec(),
            subject_id: gt.subject_id.clone(),
        },
    })
}

/// One walking step: aligned IMU and ground-truth slices.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSegment {
    pub subject_id: String,
    pub step_index: usize,
    /// Index of the first IMU sample in the source stream.
    pub imu_offset: usize,
    pub imu: Vec<ImuSample>,
    /// cm, `gt[k]` sampled with `imu[5k]`.
    pub gt: Vec<[f64; 3]>,
}

impl StepSegment {
    pub fn imu_len(&self) -> usize {
        self.imu.len()
    }

    /// Stable identifier `subject#index`.
    pub fn key(&self) -> String {
        format!("{}#{}", self.subject_id, self.step_index)
    }

    /// Checks the segment invariants (5:1 lengths, length bounds, finite data).
    pub fn validate(&self) -> Result<(), String> {
        let n = self.imu.len();
        if n % RATE_RATIO != 0 || self.gt.len() * RATE_RATIO != n {
            return Err(format!("imu length {} vs gt length {}", n, self.gt.len()));
        }
        if !(MIN_STEP_SAMPLES..=MAX_STEP_SAMPLES).contains(&n) {
            return Err(format!("imu length {} outside [{}, {}]", n, MIN_STEP_SAMPLES, MAX_STEP_SAMPLES));
        }
        if self.imu_offset % RATE_RATIO != 0 {
            return Err(format!("offset {} not a multiple of {}", self.imu_offset, RATE_RATIO));
        }
        let finite = self
            .imu
            .iter()
            .all(|s| s.t.is_finite() && s.accel.iter().chain(&s.gyro).all(|v| v.is_finite()))
            && self.gt.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err("non-finite sample".into());
        }
        Ok(())
    }
}

fn slice_step(pair: &AlignedPair, start: usize, end: usize, step_index: usize) -> Result<StepSegment, ImuError> {
    let raw_len = end - start;
    let len = raw_len - raw_len % RATE_RATIO;
    if !(MIN_STEP_SAMPLES..=MAX_STEP_SAMPLES).contains(&len) {
        return Err(ImuError::StepLength {
            start,
            end,
            len,
            min: MIN_STEP_SAMPLES,
            max: MAX_STEP_SAMPLES,
        });
    }
    let g0 = start / RATE_RATIO;
    Ok(StepSegment {
        subject_id: pair.imu.subject_id.clone(),
        step_index,
        imu_offset: start,
        imu: pair.imu.samples[start..start + len].to_vec(),
        gt: pair.gt.positions[g0..g0 + len / RATE_RATIO].to_vec(),
    })
}

/// One segment per `(start, end)` annotation (IMU indices, end exclusive).
/// Tails are truncated to a multiple of 5 samples.
pub fn segment_steps_annotated(pair: &AlignedPair, annotations: &[(usize, usize)]) -> Result<Vec<StepSegment>, ImuError> {
    let len = pair.imu.samples.len();
    let mut prev_end = 0;
    let mut out = Vec::with_capacity(annotations.len());
    for (i, &(start, end)) in annotations.iter().enumerate() {
        if end <= start || (i > 0 && start < prev_end) {
            return Err(ImuError::OverlappingAnnotations { start, end });
        }
        if end > len {
            return Err(ImuError::AnnotationOutOfBounds { start, end, len });
        }
        if start % RATE_RATIO != 0 {
            return Err(ImuError::UnalignedStart { start });
        }
        out.push(slice_step(pair, start, end, i)?);
        prev_end = end;
    }
    Ok(out)
}

/// Gyro-energy step detector settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorConfig {
    /// Moving-RMS window, samples (centered).
    pub window: usize,
    /// Leave the motion state below this RMS, rad/s; also the per-sample
    /// threshold used to refine boundaries.
    pub low: f64,
    /// Enter the motion state above this RMS, rad/s.
    pub high: f64,
    /// Boundary refinement search radius, samples.
    pub refine_radius: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            window: 50,
            low: 0.3,
            high: 0.6,
            refine_radius: 25,
        }
    }
}

/// Centered moving RMS of the gyro magnitude.
pub fn gyro_energy(samples: &[ImuSample], window: usize) -> Vec<f64> {
    let n = samples.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for s in samples {
        acc += s.gyro.iter().map(|g| g * g).sum::<f64>();
        prefix.push(acc);
    }
    let half = window / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + window - half).min(n);
            ((prefix[hi] - prefix[lo]) / (hi - lo) as f64).max(0.0).sqrt()
        })
        .collect()
}

/// Detects swing phases between low-energy stance intervals. Boundaries are
/// refined to the first/last sample whose gyro magnitude reaches `low`,
/// starts snapped down to multiples of 5, and segments shorter than one
/// window dropped.
pub fn segment_steps_auto(pair: &AlignedPair, cfg: &DetectorConfig) -> Vec<StepSegment> {
    let samples = &pair.imu.samples;
    let n = samples.len();
    if n == 0 {
        return Vec::new();
    }
    let energy = gyro_energy(samples, cfg.window.max(1));
    let mag: Vec<f64> = samples
        .iter()
        .map(|s| s.gyro.iter().map(|g| g * g).sum::<f64>().sqrt())
        .collect();

    let mut intervals = Vec::new();
    let mut i = 0;
    while i < n {
        if energy[i] <= cfg.high {
            i += 1;
            continue;
        }
        let mut start = i;
        while start > 0 && energy[start - 1] >= cfg.low {
            start -= 1;
        }
        let mut end = i;
        while end < n && energy[end] >= cfg.low {
            end += 1;
        }
        intervals.push((start, end));
        i = end;
    }

    let mut out = Vec::new();
    for (coarse_start, coarse_end) in intervals {
        let r = cfg.refine_radius;
        let lo = coarse_start.saturating_sub(r);
        let hi = (coarse_start + r + 1).min(n);
        let start = (lo..hi).find(|&k| mag[k] >= cfg.low).unwrap_or(coarse_start);
        let lo = coarse_end.saturating_sub(r + 1);
        let hi = (coarse_end + r).min(n);
        let end = (lo..hi).rev().find(|&k| mag[k] >= cfg.low).map_or(coarse_end, |k| k + 1);
        let start = start - start % RATE_RATIO;
        if end <= start {
            continue;
        }
        let len = (end - start) - (end - start) % RATE_RATIO;
        if !(MIN_STEP_SAMPLES..=MAX_STEP_SAMPLES).contains(&len) {
            continue;
        }
        if let Ok(seg) = slice_step(pair, start, start + len, out.len()) {
            out.push(seg);
        }
    }
    out
}
