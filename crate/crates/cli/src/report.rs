//! Reads finished run directories and renders their logs. Every plotted number
//! comes straight from the run's CSV files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ckd_core::trainer::EPOCH_CSV_HEADER;
use ckd_core::{CkdError, Result};
use serde::Deserialize;

use crate::svg::{bar_chart, line_chart, BarPanel, LinePanel, Series};

#[allow(dead_code)]
#[derive(Debug, Clone, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub split: String,
    pub top1: f64,
    pub top5: Option<f64>,
    pub model_id: String,
    pub rank: Option<f64>,
    pub temperature: Option<f64>,
    pub active_fraction: Option<f64>,
    pub weight: Option<f64>,
    pub model_loss: Option<f64>,
    pub lr: f64,
    pub task_loss: Option<f64>,
    pub distill_loss: Option<f64>,
    pub total_loss: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ClassRow {
    pub class: usize,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct Run {
    pub name: String,
    pub mode: Option<String>,
    pub epochs: Vec<EpochRow>,
    /// Raw fields of each epoch row, for the combined CSV.
    pub raw: Vec<Vec<String>>,
    pub classes: Vec<ClassRow>,
}

fn format_error(path: &Path, row: usize, message: impl Into<String>) -> CkdError {
    CkdError::Format {
        path: path.to_path_buf(),
        location: format!("row {row}"),
        message: message.into(),
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CkdError::MissingArtifact(path.to_path_buf()),
        _ => CkdError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path, expected_header: &str) -> Result<(Vec<T>, Vec<Vec<String>>)> {
    let mut reader = open_csv(path)?;
    let headers = reader
        .headers()
        .map_err(|e| format_error(path, 0, e.to_string()))?
        .clone();
    let found: Vec<&str> = headers.iter().collect();
    if found.join(",") != expected_header {
        return Err(format_error(
            path,
            0,
            format!("header {:?} does not match {expected_header:?}", found.join(",")),
        ));
    }
    let mut rows = Vec::new();
    let mut raw = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| format_error(path, row, e.to_string()))?;
        let value: T = record
            .deserialize(Some(&headers))
            .map_err(|e| format_error(path, row, e.to_string()))?;
        rows.push(value);
        raw.push(record.iter().map(str::to_string).collect());
    }
    Ok((rows, raw))
}

fn read_mode(path: &Path) -> Result<Option<String>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => {
            return Err(CkdError::Io {
                path: path.to_path_buf(),
                source: e,
            })
        }
    };
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('='))
        .find(|(k, _)| k.trim() == "mode")
        .map(|(_, v)| v.trim().to_string()))
}

pub const CLASS_CSV_HEADER: &str = "class,correct,total,accuracy";

impl Run {
    pub fn load(dir: &Path) -> Result<Run> {
        if !dir.is_dir() {
            return Err(CkdError::MissingArtifact(dir.to_path_buf()));
        }
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let (epochs, raw) = read_rows::<EpochRow>(&dir.join("epochs.csv"), EPOCH_CSV_HEADER)?;
        let class_path = dir.join("per_class.csv");
        let classes = if class_path.exists() {
            let rows = read_rows::<ClassRow>(&class_path, CLASS_CSV_HEADER)?.0;
            for (i, r) in rows.iter().enumerate() {
                if r.class != i || r.correct > r.total {
                    return Err(format_error(
                        &class_path,
                        i + 1,
                        "class rows must be in order with correct <= total",
                    ));
                }
            }
            rows
        } else {
            Vec::new()
        };
        Ok(Run {
            name,
            mode: read_mode(&dir.join("summary.txt"))?,
            epochs,
            raw,
            classes,
        })
    }

    /// Per-model curves of one column over the training rows, in first-seen model order.
    pub fn curves(&self, column: impl Fn(&EpochRow) -> Option<f64>) -> Vec<Series> {
        let mut order: Vec<String> = Vec::new();
        let mut points: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for row in self.epochs.iter().filter(|r| r.split == "train") {
            if let Some(v) = column(row) {
                if !points.contains_key(&row.model_id) {
                    order.push(row.model_id.clone());
                }
                points
                    .entry(row.model_id.clone())
                    .or_default()
                    .push((row.epoch as f64, v));
            }
        }
        order
            .into_iter()
            .map(|name| {
                let points = points.remove(&name).unwrap_or_default();
                Series { name, points }
            })
            .collect()
    }
}

/// Counts of classes whose accuracy rose, fell or stayed put.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GainSplit {
    pub improved: usize,
    pub degraded: usize,
    pub unchanged: usize,
}

pub fn class_gains(baseline: &Run, run: &Run) -> Result<(Vec<f64>, GainSplit)> {
    if baseline.classes.len() != run.classes.len() {
        return Err(CkdError::InvalidArgument(format!(
            "run {} has {} classes but baseline {} has {}",
            run.name,
            run.classes.len(),
            baseline.name,
            baseline.classes.len()
        )));
    }
    let mut split = GainSplit {
        improved: 0,
        degraded: 0,
        unchanged: 0,
    };
    let deltas: Vec<f64> = baseline
        .classes
        .iter()
        .zip(&run.classes)
        .map(|(b, r)| {
            let d = r.accuracy - b.accuracy;
            if d > 0.0 {
                split.improved += 1;
            } else if d < 0.0 {
                split.degraded += 1;
            } else {
                split.unchanged += 1;
            }
            d
        })
        .collect();
    Ok((deltas, split))
}

/// Files produced by [`render`], keyed by file name.
pub struct Rendered {
    pub files: Vec<(String, String)>,
    pub gain_summary: Vec<(String, GainSplit)>,
}

/// `baseline` is the index of the reference run for the gain chart; when it is
/// `None` the first `nokd` run is used, and the chart is skipped if there is none.
pub fn render(runs: &[Run], baseline: Option<usize>) -> Result<Rendered> {
    let mut files = Vec::new();

    let mut combined = format!("run,{EPOCH_CSV_HEADER}\n");
    {
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        for run in runs {
            for raw in &run.raw {
                writer
                    .write_record(std::iter::once(run.name.as_str()).chain(raw.iter().map(String::as_str)))
                    .map_err(|e| CkdError::InvalidArgument(e.to_string()))?;
            }
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| CkdError::InvalidArgument(e.to_string()))?;
        combined.push_str(&String::from_utf8_lossy(&bytes));
    }
    files.push(("combined.csv".to_string(), combined));

    let panels = |column: fn(&EpochRow) -> Option<f64>| -> Vec<LinePanel> {
        runs.iter()
            .map(|r| LinePanel {
                title: r.name.clone(),
                series: r.curves(column),
            })
            .collect()
    };
    files.push((
        "ranks.svg".to_string(),
        line_chart("Mean rank per epoch", "epoch", "rank", &panels(|r| r.rank)),
    ));
    files.push((
        "temperatures.svg".to_string(),
        line_chart(
            "Mean mentor temperature per epoch",
            "epoch",
            "temperature",
            &panels(|r| r.temperature),
        ),
    ));

    let baseline = baseline.or_else(|| runs.iter().position(|r| r.mode.as_deref() == Some("nokd")));
    let mut gain_summary = Vec::new();
    if let Some(b) = baseline {
        let base = &runs[b];
        let mut bars = Vec::new();
        let mut csv = String::from("run,class,baseline_accuracy,accuracy,delta\n");
        for (i, run) in runs.iter().enumerate() {
            if i == b {
                continue;
            }
            let (deltas, split) = class_gains(base, run)?;
            for ((c, d), (bc, rc)) in deltas.iter().enumerate().zip(base.classes.iter().zip(&run.classes)) {
                let _ = writeln!(csv, "{},{c},{:.6},{:.6},{d:.6}", run.name, bc.accuracy, rc.accuracy);
            }
            bars.push(BarPanel {
                title: format!("{} vs {}", run.name, base.name),
                note: format!("+{} -{} ={}", split.improved, split.degraded, split.unchanged),
                values: deltas,
            });
            gain_summary.push((run.name.clone(), split));
        }
        files.push(("class_gain.csv".to_string(), csv));
        files.push((
            "class_gain.svg".to_string(),
            bar_chart(
                "Per-class accuracy gain over baseline",
                "class",
                "accuracy delta",
                &bars,
            ),
        ));
    }
    Ok(Rendered { files, gain_summary })
}

pub fn write_all(dir: &Path, rendered: &Rendered) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| CkdError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut written = Vec::new();
    for (name, text) in &rendered.files {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| CkdError::Io {
            path: path.clone(),
            source: e,
        })?;
        written.push(path);
    }
    Ok(written)
}
