//! Localisation error reports: per-frame errors, per-scene medians and an
//! "Average" row, rendered as JSON and as a `0.23m, 8.06°` text table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{median, median_errors, rotation_error, translation_error, Pose, UnitQuaternion};

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub scene: String,
    pub sequence: String,
    pub index: usize,
    pub predicted: Pose,
    pub truth: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameError {
    pub scene: String,
    pub sequence: String,
    pub index: usize,
    pub translation_m: f64,
    pub rotation_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianPair {
    pub translation_m: f64,
    pub rotation_deg: f64,
}

impl MedianPair {
    pub fn cell(&self) -> String {
        format_cell(self.translation_m, self.rotation_deg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub scene: String,
    pub frames: usize,
    pub median: MedianPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub frames: Vec<FrameError>,
    /// Sorted by scene name.
    pub scenes: Vec<SceneSummary>,
    /// Mean of the per-scene medians (the table's "Average" row).
    pub average: MedianPair,
    /// Median over all frames regardless of scene.
    pub overall: MedianPair,
}

/// Rounds to three significant figures and prints without exponent:
/// `8.0634 -> "8.06"`, `11.27 -> "11.3"`, `123.4 -> "123"`.
pub fn format_sig3(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0.00".into() } else { format!("{x}") };
    }
    let decimals = |v: f64| (2 - v.abs().log10().floor() as i32).max(0) as usize;
    let d = decimals(x);
    let rounded: f64 = format!("{x:.d$}").parse().expect("formatted float parses");
    // Rounding can carry into a new digit (9.996 -> 10.0).
    let d = decimals(rounded).min(d);
    format!("{rounded:.d$}")
}

/// `"0.23m, 8.06°"`: metres to two decimals, degrees to three significant
/// figures.
pub fn format_cell(translation_m: f64, rotation_deg: f64) -> String {
    format!("{translation_m:.2}m, {}°", format_sig3(rotation_deg))
}

pub fn evaluate_predictions(model: &str, records: &[FrameRecord]) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::degenerate("no frames to evaluate"));
    }
    let frames: Vec<FrameError> = records
        .iter()
        .map(|r| FrameError {
            scene: r.scene.clone(),
            sequence: r.sequence.clone(),
            index: r.index,
            translation_m: translation_error(&r.predicted, &r.truth),
            rotation_deg: rotation_error(&r.predicted, &r.truth),
        })
        .collect();
    let mut names: Vec<&str> = frames.iter().map(|f| f.scene.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    let scenes = names
        .iter()
        .map(|&name| {
            let errs: Vec<(f64, f64)> = frames
                .iter()
                .filter(|f| f.scene == name)
                .map(|f| (f.translation_m, f.rotation_deg))
                .collect();
            let (t, r) = median_errors(&errs)?;
            Ok(SceneSummary {
                scene: name.to_string(),
                frames: errs.len(),
                median: MedianPair {
                    translation_m: t,
                    rotation_deg: r,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = scenes.len() as f64;
    let average = MedianPair {
        translation_m: scenes.iter().map(|s| s.median.translation_m).sum::<f64>() / n,
        rotation_deg: scenes.iter().map(|s| s.median.rotation_deg).sum::<f64>() / n,
    };
    let overall = MedianPair {
        translation_m: median(frames.iter().map(|f| f.translation_m).collect()),
        rotation_deg: median(frames.iter().map(|f| f.rotation_deg).collect()),
    };
    Ok(EvalReport {
        model: model.to_string(),
        frames,
        scenes,
        average,
        overall,
    })
}

impl EvalReport {
    /// Aligned two-column table, one row per scene plus "Average".
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, String)> = self.scenes.iter().map(|s| (s.scene.clone(), s.median.cell())).collect();
        rows.push(("Average".into(), self.average.cell()));
        let w0 = rows
            .iter()
            .map(|r| r.0.chars().count())
            .max()
            .unwrap_or(0)
            .max("Scene".len());
        let w1 = rows
            .iter()
            .map(|r| r.1.chars().count())
            .max()
            .unwrap_or(0)
            .max(self.model.chars().count());
        let mut out = String::new();
        let line = |out: &mut String, a: &str, b: &str| {
            let pad0 = w0 - a.chars().count();
            let pad1 = w1 - b.chars().count();
            writeln!(out, "{a}{}  {}{b}", " ".repeat(pad0), " ".repeat(pad1)).expect("write to String");
        };
        line(&mut out, "Scene", &self.model);
        for (a, b) in &rows {
            line(&mut out, a, b);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Constant predictor: mean position and the normalised sign-aligned sum of
/// the orientations (the chordal mean).
pub fn mean_pose(poses: &[Pose]) -> Result<Pose> {
    let first = poses.first().ok_or_else(|| Error::degenerate("mean of no poses"))?;
    let n = poses.len() as f64;
    let mut t = [0.0; 3];
    let mut q = [0.0; 4];
    for p in poses {
        let s = if p.q.dot(&first.q) < 0.0 { -1.0 } else { 1.0 };
        let v = p.q.v();
        for i in 0..3 {
            t[i] += p.t[i] / n;
            q[i + 1] += s * v[i];
        }
        q[0] += s * p.q.u();
    }
    let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(Error::degenerate("orientations cancel out"));
    }
    let q = UnitQuaternion::new(q[0] / norm, [q[1] / norm, q[2] / norm, q[3] / norm])?;
    Pose::new(t, q)
}
