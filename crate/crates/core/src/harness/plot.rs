//! Matplotlib script emission for summary files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use super::curve::{read_csv_rows, SUMMARY_HEADER};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct PlotOutput {
    pub script: PathBuf,
    pub images: Vec<PathBuf>,
    /// Whether running the script succeeded.
    pub rendered: bool,
    /// Interpreter output when rendering failed.
    pub message: String,
}

struct Band {
    label: String,
    path: PathBuf,
    env: String,
}

fn summary_env(text: &str) -> String {
    text.lines()
        .filter_map(|l| l.strip_prefix("# env = "))
        .next()
        .map(|v| v.trim().trim_matches('"').to_string())
        .unwrap_or_else(|| "minimal_walker".into())
}

fn load_band(dir: &Path, label: String) -> Result<Option<Band>> {
    let path = dir.join("summary.csv");
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)?;
    if read_csv_rows(&text, SUMMARY_HEADER)?.is_empty() {
        return Err(Error::Empty("summary has no windows"));
    }
    Ok(Some(Band {
        label,
        path,
        env: summary_env(&text),
    }))
}

fn py_str(p: &Path) -> String {
    format!("{:?}", p.display().to_string())
}

/// Writes `plot.py` into `in_dir` and runs it with `python3`. One chart per
/// environment, one mean ± std band per summary: `in_dir/summary.csv` itself
/// or `in_dir/*/summary.csv`. The x axis is environment steps; the y axis is
/// mean velocity on the walker and mean reward on the pendulum.
pub fn emit_plots(in_dir: impl AsRef<Path>) -> Result<PlotOutput> {
    let in_dir = in_dir.as_ref();
    if !in_dir.is_dir() {
        return Err(Error::Config(format!("{} is not a directory", in_dir.display())));
    }
    let stem = in_dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "plot".into());
    let mut bands = Vec::new();
    if let Some(b) = load_band(in_dir, stem.clone())? {
        bands.push(b);
    } else {
        let mut dirs: Vec<PathBuf> = fs::read_dir(in_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for d in dirs {
            let label = d.file_name().unwrap().to_string_lossy().into_owned();
            if let Some(b) = load_band(&d, label)? {
                bands.push(b);
            }
        }
    }
    if bands.is_empty() {
        return Err(Error::Config(format!("no summary.csv under {}", in_dir.display())));
    }

    let mut envs: Vec<&str> = bands.iter().map(|b| b.env.as_str()).collect();
    envs.sort();
    envs.dedup();
    let mut charts = String::new();
    let mut images = Vec::new();
    for env in envs {
        let image = in_dir.join(format!("{stem}_{env}.png"));
        let entries: Vec<String> = bands
            .iter()
            .filter(|b| b.env == env)
            .map(|b| format!("({:?}, {})", b.label, py_str(&b.path)))
            .collect();
        let (column, ylabel) = if env == "pendulum_spin" {
            ("reward", "mean reward")
        } else {
            ("velocity", "mean velocity (m/s)")
        };
        charts.push_str(&format!(
            "chart({}, {:?}, {:?}, [{}])\n",
            py_str(&image),
            column,
            ylabel,
            entries.join(", ")
        ));
        images.push(image);
    }

    let script = in_dir.join("plot.py");
    fs::write(&script, format!("{PLOT_PRELUDE}\n{charts}"))?;
    let (rendered, message) = match Command::new("python3").arg(&script).output() {
        Ok(o) if o.status.success() => (true, String::new()),
        Ok(o) => (false, String::from_utf8_lossy(&o.stderr).into_owned()),
        Err(e) => (false, e.to_string()),
    };
    Ok(PlotOutput {
        script,
        images,
        rendered,
        message,
    })
}

const PLOT_PRELUDE: &str = r##"import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def load(path):
    with open(path) as f:
        rows = list(csv.DictReader(line for line in f if not line.startswith("#")))
    return {k: [float(r[k]) for r in rows] for k in rows[0]}


def chart(image, column, ylabel, bands):
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, path in bands:
        d = load(path)
        mean, std = d["mean_" + column], d["std_" + column]
        ax.plot(d["steps"], mean, label=label)
        ax.fill_between(d["steps"], [m - s for m, s in zip(mean, std)], [m + s for m, s in zip(mean, std)], alpha=0.25)
    ax.set_xlabel("environment steps")
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(image, dpi=120)
"##;
