//! Landmark and pose metrics and report files.
//!
//! Output files written by [`emit_report`]:
//!
//! * `per_sample.csv`: `index,nme`
//! * `ced.csv`: `threshold,fraction`
//! * `ced.svg`: the CED curve as a single `<path>` (omitted for empty reports)
//! * `summary.txt`: one landmark row and, when pose is evaluated, one pose row

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{KeplerError, Result};
use crate::model::{Pose3D, Shape, VisibilityVector, NUM_LANDMARKS};

/// Mean landmark distance over visible ground-truth points, divided by
/// `size`.
pub fn nme(pred: &Shape, gt: &Shape, visibility: &VisibilityVector, size: f64) -> Result<f64> {
    if !(size > 0.0) {
        return Err(KeplerError::Degenerate("normalising size must be positive".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..NUM_LANDMARKS {
        if !visibility.is_visible(i) {
            continue;
        }
        let g = gt.point(i);
        if g.is_absent() {
            return Err(KeplerError::AbsentGroundTruth(i));
        }
        sum += (pred.point(i) - g).norm();
        count += 1;
    }
    if count == 0 {
        return Err(KeplerError::Degenerate("no visible landmarks to score".into()));
    }
    Ok(sum / count as f64 / size)
}

/// Fraction of `errors` at or below each threshold. An empty error set
/// gives fraction 0 everywhere.
pub fn ced_curve(errors: &[f64], thresholds: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    thresholds
        .iter()
        .map(|&t| {
            let below = sorted.partition_point(|&e| e <= t);
            let frac = if sorted.is_empty() {
                0.0
            } else {
                below as f64 / sorted.len() as f64
            };
            (t, frac)
        })
        .collect()
}

/// Thresholds 0, 0.0025, .., 0.15.
pub fn default_thresholds() -> Vec<f64> {
    (0..=60).map(|k| k as f64 * 0.0025).collect()
}

/// Nearest multiple of 15 degrees; halfway cases go to the even multiple.
pub fn discretize_angle(angle: f64) -> f64 {
    15.0 * (angle / 15.0).round_ties_even()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccuracyMode {
    /// Every axis must be within tolerance.
    #[default]
    AllAxes,
    YawOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseMetrics {
    /// Mean absolute yaw, pitch and roll errors in degrees.
    pub axis_mae: [f64; 3],
    /// Mean of the three axis errors.
    pub mae: f64,
    /// Fraction of samples within 15 degrees.
    pub accuracy_15: f64,
    pub discretized: Vec<Pose3D>,
}

pub fn pose_metrics(preds: &[Pose3D], gts: &[Pose3D], mode: AccuracyMode) -> Result<PoseMetrics> {
    if preds.len() != gts.len() {
        return Err(KeplerError::LengthMismatch(preds.len(), gts.len()));
    }
    if preds.is_empty() {
        return Err(KeplerError::Degenerate("no poses to score".into()));
    }
    let n = preds.len() as f64;
    let mut sums = [0.0; 3];
    let mut within = 0usize;
    for (p, g) in preds.iter().zip(gts) {
        let err: Vec<f64> = p
            .as_array()
            .iter()
            .zip(g.as_array())
            .map(|(a, b)| (a - b).abs())
            .collect();
        for k in 0..3 {
            sums[k] += err[k];
        }
        let worst = match mode {
            AccuracyMode::AllAxes => err.iter().cloned().fold(0.0, f64::max),
            AccuracyMode::YawOnly => err[0],
        };
        if worst <= 15.0 {
            within += 1;
        }
    }
    let axis_mae = sums.map(|s| s / n);
    Ok(PoseMetrics {
        axis_mae,
        mae: axis_mae.iter().sum::<f64>() / 3.0,
        accuracy_15: within as f64 / n,
        discretized: preds
            .iter()
            .map(|p| {
                Pose3D::new(
                    discretize_angle(p.yaw),
                    discretize_angle(p.pitch),
                    discretize_angle(p.roll),
                )
            })
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    pub per_sample: Vec<f64>,
    pub mean_nme: f64,
    pub ced: Vec<(f64, f64)>,
    pub pose: Option<PoseMetrics>,
}

impl EvalReport {
    pub fn new(
        protocol: &str,
        per_sample: Vec<f64>,
        thresholds: &[f64],
        pose: Option<PoseMetrics>,
    ) -> Self {
        let mean_nme = if per_sample.is_empty() {
            0.0
        } else {
            per_sample.iter().sum::<f64>() / per_sample.len() as f64
        };
        EvalReport {
            protocol: protocol.to_string(),
            ced: ced_curve(&per_sample, thresholds),
            per_sample,
            mean_nme,
            pose,
        }
    }

    pub fn median_nme(&self) -> f64 {
        median(&self.per_sample)
    }
}

/// Median of `values` (mean of the middle pair for even counts); 0 when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf> {
    fs::write(&path, text).map_err(|e| KeplerError::io(&path, e))?;
    Ok(path)
}

fn ced_svg(ced: &[(f64, f64)]) -> String {
    let (w, h, m) = (480.0, 320.0, 40.0);
    let t_max = ced.last().map_or(1.0, |c| c.0).max(f64::MIN_POSITIVE);
    let x = |t: f64| m + t / t_max * (w - 2.0 * m);
    let y = |f: f64| h - m - f * (h - 2.0 * m);
    let mut d = String::new();
    for (k, &(t, f)) in ced.iter().enumerate() {
        let cmd = if k == 0 { 'M' } else { 'L' };
        let _ = write!(d, "{}{cmd}{:.2} {:.2}", if k == 0 { "" } else { " " }, x(t), y(f));
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(
        s,
        r#"<g stroke="black" stroke-width="1"><line x1="{m}" y1="{}" x2="{}" y2="{}"/><line x1="{m}" y1="{m}" x2="{m}" y2="{}"/></g>"#,
        h - m,
        w - m,
        h - m,
        h - m
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">normalized error (max {t_max})</text>"#,
        w / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" font-size="12" transform="rotate(-90 12 {})" text-anchor="middle">fraction of faces</text>"#,
        h / 2.0,
        h / 2.0
    );
    let _ = writeln!(s, r#"<path d="{d}" fill="none" stroke="blue" stroke-width="2"/>"#);
    s.push_str("</svg>\n");
    s
}

fn summary(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<16}{:>10}{:>12}{:>12}{:>10}", "protocol", "samples", "mean_nme", "median_nme", "nme_%");
    let _ = writeln!(
        s,
        "{:<16}{:>10}{:>12.6}{:>12.6}{:>10.3}",
        report.protocol,
        report.per_sample.len(),
        report.mean_nme,
        report.median_nme(),
        100.0 * report.mean_nme
    );
    if let Some(p) = &report.pose {
        let _ = writeln!(s, "{:<16}{:>10}{:>10}{:>10}{:>10}{:>10}", "pose", "yaw", "pitch", "roll", "mae", "acc15_%");
        let _ = writeln!(
            s,
            "{:<16}{:>10.3}{:>10.3}{:>10.3}{:>10.3}{:>10.2}",
            report.protocol,
            p.axis_mae[0],
            p.axis_mae[1],
            p.axis_mae[2],
            p.mae,
            100.0 * p.accuracy_15
        );
    }
    s
}

/// Write the report files into `out_dir`, returning their paths.
pub fn emit_report(report: &EvalReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| KeplerError::io(out_dir, e))?;
    let mut files = Vec::new();
    let mut per = String::from("index,nme\n");
    for (i, e) in report.per_sample.iter().enumerate() {
        let _ = writeln!(per, "{i},{e}");
    }
    files.push(write(out_dir.join("per_sample.csv"), &per)?);
    let mut ced = String::from("threshold,fraction\n");
    if !report.per_sample.is_empty() {
        for (t, f) in &report.ced {
            let _ = writeln!(ced, "{t},{f}");
        }
    }
    files.push(write(out_dir.join("ced.csv"), &ced)?);
    let svg_path = out_dir.join("ced.svg");
    if !report.per_sample.is_empty() && !report.ced.is_empty() {
        files.push(write(svg_path, &ced_svg(&report.ced))?);
    } else if svg_path.exists() {
        fs::remove_file(&svg_path).map_err(|e| KeplerError::io(&svg_path, e))?;
    }
    files.push(write(out_dir.join("summary.txt"), &summary(report))?);
    Ok(files)
}
