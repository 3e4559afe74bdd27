//! Windowed learning curves and their cross-seed summaries.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::runtime::StepRecord;

pub const CURVE_HEADER: &str = "window,steps,mean_velocity,std_velocity,mean_reward,episodes,wall_s";
pub const SUMMARY_HEADER: &str = "window,steps,mean_velocity,std_velocity,mean_reward,std_reward,seeds";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub window: usize,
    /// Cumulative environment steps at the end of the window.
    pub steps: usize,
    pub mean_velocity: f64,
    pub std_velocity: f64,
    pub mean_reward: f64,
    /// Not written to the CSV.
    pub mean_reward_velocity: f64,
    /// Not written to the CSV.
    pub mean_reversals: f64,
    /// Episodes finished by the end of the window.
    pub episodes: u64,
    /// Control time elapsed: steps times the control period.
    pub wall_s: f64,
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Consecutive full windows of `window` steps; a trailing partial window is
/// dropped.
pub fn aggregate_curve(records: &[StepRecord], window: usize, control_period: f64) -> Vec<CurvePoint> {
    let mut episodes = 0;
    records
        .chunks_exact(window.max(1))
        .enumerate()
        .map(|(w, chunk)| {
            let (mean_velocity, std_velocity) = mean_std(chunk.iter().map(|r| r.velocity));
            episodes += chunk.iter().filter(|r| r.done || r.truncated).count() as u64;
            let steps = (w + 1) * window;
            CurvePoint {
                window: w,
                steps,
                mean_velocity,
                std_velocity,
                mean_reward: mean_std(chunk.iter().map(|r| r.reward)).0,
                mean_reward_velocity: mean_std(chunk.iter().map(|r| r.reward_velocity)).0,
                mean_reversals: mean_std(chunk.iter().map(|r| r.reversals)).0,
                episodes,
                wall_s: steps as f64 * control_period,
            }
        })
        .collect()
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from(CURVE_HEADER);
    s.push('\n');
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            p.window, p.steps, p.mean_velocity, p.std_velocity, p.mean_reward, p.episodes, p.wall_s
        );
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub window: usize,
    pub steps: usize,
    pub mean_velocity: f64,
    /// Standard deviation across seeds of the window's mean velocity.
    pub std_velocity: f64,
    pub mean_reward: f64,
    pub std_reward: f64,
    /// Seeds contributing to this window; runs stopped early drop out.
    pub seeds: usize,
}

/// Per-window mean and population standard deviation across seeds.
pub fn summarize(curves: &[Vec<CurvePoint>]) -> Vec<SummaryRow> {
    let windows = curves.iter().map(Vec::len).max().unwrap_or(0);
    (0..windows)
        .map(|w| {
            let pts: Vec<&CurvePoint> = curves.iter().filter_map(|c| c.get(w)).collect();
            let (mean_velocity, std_velocity) = mean_std(pts.iter().map(|p| p.mean_velocity));
            let (mean_reward, std_reward) = mean_std(pts.iter().map(|p| p.mean_reward));
            SummaryRow {
                window: w,
                steps: pts[0].steps,
                mean_velocity,
                std_velocity,
                mean_reward,
                std_reward,
                seeds: pts.len(),
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.window, r.steps, r.mean_velocity, r.std_velocity, r.mean_reward, r.std_reward, r.seeds
        );
    }
    s
}

/// Reads back the data rows of a CSV written here, skipping `#` comments.
pub fn read_csv_rows(text: &str, header: &str) -> Result<Vec<Vec<f64>>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    match lines.next() {
        Some(h) if h == header => {}
        other => return Err(Error::Format(format!("expected header {header:?}, found {other:?}"))),
    }
    lines
        .map(|l| {
            l.split(',')
                .map(|c| c.parse::<f64>().map_err(|_| Error::Format(format!("bad number {c:?}"))))
                .collect()
        })
        .collect()
}

/// Environment steps at the end of the first window whose `metric` reaches
/// `threshold`.
pub fn steps_to_threshold(curve: &[CurvePoint], metric: impl Fn(&CurvePoint) -> f64, threshold: f64) -> Option<usize> {
    curve.iter().find(|p| metric(p) >= threshold).map(|p| p.steps)
}

/// Mean of `metric` over the windows (area under the curve per window).
pub fn area_under_curve(curve: &[CurvePoint], metric: impl Fn(&CurvePoint) -> f64) -> f64 {
    if curve.is_empty() {
        return f64::NAN;
    }
    curve.iter().map(metric).sum::<f64>() / curve.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
