//! Trajectory reconstruction from windowed predictions and per-axis error
//! statistics.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::TrajectoryError;
use crate::model::Axis;
use crate::tensor::Tensor;

/// Points in cm at 100 Hz; `points[0] == origin`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub points: Vec<[f64; 3]>,
    pub origin: [f64; 3],
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn window_dims(index: usize, w: &Tensor<f64>) -> Result<usize, TrajectoryError> {
    match *w.shape() {
        [3, n] => Ok(n),
        _ => Err(TrajectoryError::BadWindow {
            index,
            found: w.shape().to_vec(),
        }),
    }
}

/// Concatenates `[3, n]` difference windows and integrates from `origin`.
pub fn reconstruct(windows: &[Tensor<f64>], origin: [f64; 3]) -> Result<Trajectory, TrajectoryError> {
    if windows.is_empty() {
        return Err(TrajectoryError::EmptyWindows);
    }
    let mut points = vec![origin];
    let mut cur = origin;
    for (i, w) in windows.iter().enumerate() {
        let n = window_dims(i, w)?;
        for k in 0..n {
            for (a, c) in cur.iter_mut().enumerate() {
                *c += w.data()[a * n + k];
            }
            points.push(cur);
        }
    }
    Ok(Trajectory { points, origin })
}

/// Concatenates `[3, n]` windows of absolute positions after `origin`.
pub fn assemble_absolute(windows: &[Tensor<f64>], origin: [f64; 3]) -> Result<Trajectory, TrajectoryError> {
    if windows.is_empty() {
        return Err(TrajectoryError::EmptyWindows);
    }
    let mut points = vec![origin];
    for (i, w) in windows.iter().enumerate() {
        let n = window_dims(i, w)?;
        points.extend((0..n).map(|k| std::array::from_fn(|a| w.data()[a * n + k])));
    }
    Ok(Trajectory { points, origin })
}

/// Mean absolute deviation per axis over the predicted points. `gt` may be
/// longer than the prediction; its uncovered tail is ignored.
pub fn per_axis_error(pred: &Trajectory, gt: &[[f64; 3]]) -> Result<[f64; 3], TrajectoryError> {
    let n = pred.points.len();
    if n == 0 || gt.len() < n {
        return Err(TrajectoryError::LengthMismatch { pred: n, gt: gt.len() });
    }
    let mut sum = [0.0; 3];
    for (p, g) in pred.points.iter().zip(gt) {
        for a in 0..3 {
            sum[a] += (p[a] - g[a]).abs();
        }
    }
    Ok(sum.map(|s| s / n as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepError {
    pub subject_id: String,
    pub step_index: usize,
    /// Mean absolute error per axis, cm.
    pub errors: [f64; 3],
    pub windows: usize,
    pub points: usize,
}

impl StepError {
    pub fn step_id(&self) -> String {
        format!("{}#{}", self.subject_id, self.step_index)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    MixedStep,
    IndependentWalker { fold: usize },
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::MixedStep => f.write_str("mixed-step"),
            Protocol::IndependentWalker { fold } => write!(f, "independent-walker fold {}", fold),
        }
    }
}

/// Mean and population standard deviation of per-step errors.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub protocol: Protocol,
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub steps: usize,
    pub windows: usize,
    pub points: usize,
}

pub fn aggregate_report(per_step: &[StepError], protocol: Protocol) -> Result<ErrorReport, TrajectoryError> {
    if per_step.is_empty() {
        return Err(TrajectoryError::Empty);
    }
    let n = per_step.len() as f64;
    let mut mean = [0.0; 3];
    for s in per_step {
        for a in 0..3 {
            mean[a] += s.errors[a];
        }
    }
    mean = mean.map(|m| m / n);
    let mut var = [0.0; 3];
    for s in per_step {
        for a in 0..3 {
            var[a] += (s.errors[a] - mean[a]).powi(2);
        }
    }
    Ok(ErrorReport {
        protocol,
        mean,
        std: var.map(|v| (v / n).sqrt()),
        steps: per_step.len(),
        windows: per_step.iter().map(|s| s.windows).sum(),
        points: per_step.iter().map(|s| s.points).sum(),
    })
}

impl ErrorReport {
    pub fn cell(&self, axis: Axis) -> String {
        let a = axis.index();
        format!("{:.2}±{:.2}", self.mean[a], self.std[a])
    }
}

impl fmt::Display for ErrorReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", report_table(&[(self.protocol.to_string(), self.clone())]))
    }
}

/// A text table with one row per labelled report and columns
/// `X error(cm) Y error(cm) Z error(cm)`.
pub fn report_table(rows: &[(String, ErrorReport)]) -> String {
    let width = rows.iter().map(|(l, _)| l.chars().count()).max().unwrap_or(0).max(9);
    let mut out = format!(
        "{:<width$}  {:>13}  {:>13}  {:>13}  {:>5}  {:>7}\n",
        "condition", "X error(cm)", "Y error(cm)", "Z error(cm)", "steps", "windows"
    );
    for (label, r) in rows {
        out.push_str(&format!(
            "{:<width$}  {:>13}  {:>13}  {:>13}  {:>5}  {:>7}\n",
            label,
            r.cell(Axis::X),
            r.cell(Axis::Y),
            r.cell(Axis::Z),
            r.steps,
            r.windows
        ));
    }
    out
}

pub fn per_step_csv(per_step: &[StepError]) -> String {
    let mut out = String::from("step_id,subject,ex,ey,ez,windows,points\n");
    for s in per_step {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.step_id(),
            s.subject_id,
            s.errors[0],
            s.errors[1],
            s.errors[2],
            s.windows,
            s.points
        ));
    }
    out
}

/// Parses the output of [`per_step_csv`].
pub fn parse_per_step_csv(text: &str) -> Result<Vec<StepError>, String> {
    text.lines()
        .skip(1)
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(format!("row {}: expected 7 fields", i + 2));
            }
            let step_index = f[0]
                .rsplit_once('#')
                .and_then(|(_, k)| k.parse().ok())
                .ok_or_else(|| format!("row {}: bad step id {:?}", i + 2, f[0]))?;
            let num = |s: &str| s.parse::<f64>().map_err(|e| format!("row {}: {}", i + 2, e));
            let int = |s: &str| s.parse::<usize>().map_err(|e| format!("row {}: {}", i + 2, e));
            Ok(StepError {
                subject_id: f[1].to_string(),
                step_index,
                errors: [num(f[2])?, num(f[3])?, num(f[4])?],
                windows: int(f[5])?,
                points: int(f[6])?,
            })
        })
        .collect()
}

pub fn points_csv(pred: &Trajectory, gt: &[[f64; 3]]) -> String {
    let mut out = String::from("k,pred_x,pred_y,pred_z,gt_x,gt_y,gt_z\n");
    for (k, (p, g)) in pred.points.iter().zip(gt).enumerate() {
        out.push_str(&format!("{},{},{},{},{},{},{}\n", k, p[0], p[1], p[2], g[0], g[1], g[2]));
    }
    out
}

/// Parses the output of [`points_csv`] back into `(pred, gt)` point lists.
pub fn parse_points_csv(text: &str) -> Result<(Vec<[f64; 3]>, Vec<[f64; 3]>), String> {
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for (i, line) in text.lines().skip(1).enumerate() {
        let v: Vec<f64> = line
            .split(',')
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|e| format!("row {}: {}", i + 2, e)))
            .collect::<Result<_, _>>()?;
        if v.len() != 6 {
            return Err(format!("row {}: expected 7 fields", i + 2));
        }
        pred.push([v[0], v[1], v[2]]);
        gt.push([v[3], v[4], v[5]]);
    }
    Ok((pred, gt))
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const MARGIN: f64 = 56.0;

struct View {
    title: &'static str,
    x_label: &'static str,
    y_label: &'static str,
    project: fn(&[f64; 3]) -> (f64, f64),
}

const VIEWS: [(&str, View); 3] = [
    (
        "side",
        View {
            title: "side view",
            x_label: "X (cm)",
            y_label: "Z (cm)",
            project: |p| (p[0], p[2]),
        },
    ),
    (
        "top",
        View {
            title: "top view",
            x_label: "X (cm)",
            y_label: "Y (cm)",
            project: |p| (p[0], p[1]),
        },
    ),
    (
        "3d",
        View {
            title: "3-D oblique projection",
            x_label: "X + 0.5 Y cos 30° (cm)",
            y_label: "Z + 0.5 Y sin 30° (cm)",
            project: |p| (p[0] + 0.5 * p[1] * 0.866_025_403_784_438_6, p[2] + 0.25 * p[1]),
        },
    ),
];

fn svg(view: &View, pred: &[[f64; 3]], gt: &[[f64; 3]]) -> String {
    let proj = |pts: &[[f64; 3]]| pts.iter().map(view.project).collect::<Vec<_>>();
    let (p, g) = (proj(pred), proj(gt));
    let all = p.iter().chain(&g);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let pad = |lo: f64, hi: f64| if hi - lo < 1e-9 { (lo - 1.0, hi + 1.0) } else { (lo, hi) };
    let ((x0, x1), (y0, y1)) = (pad(x0, x1), pad(y0, y1));
    let sx = (SVG_W - 2.0 * MARGIN) / (x1 - x0);
    let sy = (SVG_H - 2.0 * MARGIN) / (y1 - y0);
    let map = |(x, y): (f64, f64)| (MARGIN + (x - x0) * sx, SVG_H - MARGIN - (y - y0) * sy);
    let line = |pts: &[(f64, f64)]| {
        pts.iter()
            .map(|&q| {
                let (a, b) = map(q);
                format!("{:.3},{:.3}", a, b)
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">\n"
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        SVG_W / 2.0,
        view.title
    ));
    s.push_str(&format!(
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>\n",
        SVG_W - 2.0 * MARGIN,
        SVG_H - 2.0 * MARGIN
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
        SVG_W / 2.0,
        SVG_H - 16.0,
        view.x_label
    ));
    s.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        SVG_H / 2.0,
        SVG_H / 2.0,
        view.y_label
    ));
    for (v, anchor, x) in [(x0, "start", MARGIN), (x1, "end", SVG_W - MARGIN)] {
        s.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" font-size=\"10\" text-anchor=\"{anchor}\">{:.1}</text>\n",
            SVG_H - MARGIN + 14.0,
            v
        ));
    }
    for (v, y) in [(y0, SVG_H - MARGIN), (y1, MARGIN)] {
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{y}\" font-size=\"10\" text-anchor=\"end\">{:.1}</text>\n",
            MARGIN - 4.0,
            v
        ));
    }
    s.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"{}\"/>\n",
        line(&g)
    ));
    s.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.5\" stroke-dasharray=\"4 2\" points=\"{}\"/>\n",
        line(&p)
    ));
    let lx = SVG_W - MARGIN - 130.0;
    s.push_str(&format!(
        "<line x1=\"{lx}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n",
        MARGIN + 14.0,
        lx + 24.0
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\">ground truth</text>\n",
        lx + 30.0,
        MARGIN + 18.0
    ));
    s.push_str(&format!(
        "<line x1=\"{lx}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"#d62728\" stroke-width=\"1.5\" stroke-dasharray=\"4 2\"/>\n",
        MARGIN + 32.0,
        lx + 24.0
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\">predicted</text>\n",
        lx + 30.0,
        MARGIN + 36.0
    ));
    s.push_str("</svg>\n");
    s
}

/// Writes `<stem>_side.svg`, `<stem>_top.svg`, `<stem>_3d.svg` and
/// `<stem>_points.csv` into `dir`; returns the paths written.
pub fn emit_plots(pred: &Trajectory, gt: &[[f64; 3]], dir: &Path, stem: &str) -> Result<Vec<PathBuf>, TrajectoryError> {
    if pred.is_empty() {
        return Err(TrajectoryError::EmptyWindows);
    }
    if gt.len() < pred.len() {
        return Err(TrajectoryError::LengthMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    let gt = &gt[..pred.len()];
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| TrajectoryError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut written = Vec::new();
    for (suffix, view) in &VIEWS {
        let path = dir.join(format!("{stem}_{suffix}.svg"));
        fs::write(&path, svg(view, &pred.points, gt)).map_err(io(&path))?;
        written.push(path);
    }
    let path = dir.join(format!("{stem}_points.csv"));
    fs::write(&path, points_csv(pred, gt)).map_err(io(&path))?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(e: [f64; 3]) -> StepError {
        StepError {
            subject_id: "s".into(),
            step_index: 0,
            errors: e,
            windows: 2,
            points: 59,
        }
    }

    #[test]
    fn zero_diffs_stay_at_origin() {
        let t = reconstruct(&[Tensor::zeros(&[3, 29])], [1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.len(), 30);
        assert!(t.points.iter().all(|p| *p == [1.0, 2.0, 3.0]));
    }

    #[test]
    fn two_windows_give_fifty_nine_points() {
        let w = Tensor::full(&[3, 29], 1.0);
        let t = reconstruct(&[w.clone(), w], [0.0; 3]).unwrap();
        assert_eq!(t.len(), 59);
        assert_eq!(t.points[58], [58.0; 3]);
        assert!(matches!(reconstruct(&[], [0.0; 3]), Err(TrajectoryError::EmptyWindows)));
        assert!(matches!(
            reconstruct(&[Tensor::zeros(&[2, 29])], [0.0; 3]),
            Err(TrajectoryError::BadWindow { index: 0, .. })
        ));
    }

    #[test]
    fn constant_offset_error() {
        let gt: Vec<[f64; 3]> = (0..30).map(|k| [k as f64, 0.5, -1.0]).collect();
        let pred = Trajectory {
            points: gt.iter().map(|p| [p[0] + 1.0, p[1], p[2]]).collect(),
            origin: gt[0],
        };
        assert_eq!(per_axis_error(&pred, &gt).unwrap(), [1.0, 0.0, 0.0]);
        assert!(matches!(
            per_axis_error(&pred, &gt[..10]),
            Err(TrajectoryError::LengthMismatch { pred: 30, gt: 10 })
        ));
    }

    #[test]
    fn aggregate_examples() {
        let r = aggregate_report(&[step([2.0, 1.0, 0.5])], Protocol::MixedStep).unwrap();
        assert_eq!((r.mean, r.std), ([2.0, 1.0, 0.5], [0.0; 3]));
        let r = aggregate_report(&[step([1.0, 1.0, 1.0]), step([3.0, 1.0, 1.0])], Protocol::MixedStep).unwrap();
        assert_eq!((r.mean[0], r.std[0]), (2.0, 1.0));
        assert_eq!(r.windows, 4);
        assert!(matches!(aggregate_report(&[], Protocol::MixedStep), Err(TrajectoryError::Empty)));
    }

    #[test]
    fn table_uses_plus_minus_cells() {
        let r = aggregate_report(&[step([2.3, 0.91, 0.58])], Protocol::MixedStep).unwrap();
        let text = report_table(&[("combined".into(), r)]);
        assert!(text.contains("X error(cm)"));
        assert!(text.contains("2.30±0.00"));
    }

    #[test]
    fn per_step_csv_round_trips() {
        let rows = vec![step([0.1, 1.0 / 3.0, 2.5e-7])];
        assert_eq!(parse_per_step_csv(&per_step_csv(&rows)).unwrap(), rows);
    }

    #[test]
    fn plots_and_points() {
        let dir = tempfile::tempdir().unwrap();
        let gt: Vec<[f64; 3]> = (0..30).map(|k| [k as f64 * 1.7, (k as f64).sin(), 0.1 * k as f64]).collect();
        let pred = Trajectory {
            points: gt.clone(),
            origin: gt[0],
        };
        let files = emit_plots(&pred, &gt, dir.path(), "s1").unwrap();
        assert_eq!(files.len(), 4);
        let side = fs::read_to_string(&files[0]).unwrap();
        let polylines: Vec<&str> = side.lines().filter(|l| l.starts_with("<polyline")).collect();
        assert_eq!(polylines.len(), 2);
        let pts = |l: &str| l.split("points=\"").nth(1).unwrap().to_string();
        assert_eq!(pts(polylines[0]), pts(polylines[1]));
        let (p, g) = parse_points_csv(&fs::read_to_string(&files[3]).unwrap()).unwrap();
        assert_eq!((p, g), (gt.clone(), gt));
        let empty = Trajectory {
            points: vec![],
            origin: [0.0; 3],
        };
        assert!(emit_plots(&empty, &[], dir.path(), "e").is_err());
    }
}
