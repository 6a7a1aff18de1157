use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ConfusionMatrix, CurvePoint, EvalStats, RepeatedEval};
use crate::error::{Error, Result};

/// Quantile convention used for every `q25` / `q75` in a report.
pub const QUANTILE_METHOD: &str = "linear interpolation between order statistics";

/// Everything one evaluation run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub quantile_method: String,
    pub base_seed: u64,
    pub repeats: usize,
    pub dataset_digest: String,
    pub dual: Option<RepeatedEval>,
    pub only24: Option<RepeatedEval>,
    #[serde(default)]
    pub ap_curve: Vec<CurvePoint>,
    #[serde(default)]
    pub subsample_curve: Vec<CurvePoint>,
}

impl EvaluationReport {
    pub fn new(base_seed: u64, repeats: usize, dataset_digest: String) -> Self {
        EvaluationReport {
            quantile_method: QUANTILE_METHOD.to_string(),
            base_seed,
            repeats,
            dataset_digest,
            dual: None,
            only24: None,
            ap_curve: Vec::new(),
            subsample_curve: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::InvalidConfig(format!("unknown report format {s:?}"))),
        }
    }
}

/// Confusion matrix with location ids as header row and first column.
pub fn write_confusion_csv(m: &ConfusionMatrix, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["true\\predicted".to_string()];
    header.extend(m.locations.iter().map(|l| l.to_string()));
    w.write_record(&header)?;
    for (l, row) in m.locations.iter().zip(&m.rows) {
        let mut rec = vec![l.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn stats_fields(s: &EvalStats) -> Vec<String> {
    [s.mean, s.q25, s.q75, s.min, s.max]
        .iter()
        .map(|v| v.to_string())
        .chain([s.count().to_string()])
        .collect()
}

const STATS_HEADER: [&str; 6] = ["mean", "q25", "q75", "min", "max", "n"];

/// One row per curve point.
pub fn write_curve_csv(points: &[CurvePoint], x_name: &str, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![x_name];
    header.extend(STATS_HEADER);
    w.write_record(&header)?;
    for p in points {
        let mut rec = vec![p.x.to_string()];
        rec.extend(stats_fields(&p.stats));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_summary_csv(report: &EvaluationReport, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["band", "split"];
    header.extend(STATS_HEADER);
    w.write_record(&header)?;
    for eval in [&report.dual, &report.only24].into_iter().flatten() {
        for (split, stats) in [("test", &eval.test), ("validation", &eval.validation)] {
            let mut rec = vec![eval.band.to_string(), split.to_string()];
            rec.extend(stats_fields(stats));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_runs_csv(report: &EvaluationReport, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["band", "seed", "model", "test_accuracy"])?;
    for eval in [&report.dual, &report.only24].into_iter().flatten() {
        for run in &eval.runs {
            let band = eval.band.to_string();
            let seed = run.seed.to_string();
            w.write_record([band.as_str(), seed.as_str(), "meta", &run.test_accuracy.to_string()])?;
            for m in &run.model_test_accuracy {
                w.write_record([band.as_str(), seed.as_str(), m.algorithm.name(), &m.accuracy.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes the report into `dir` and returns the files created. JSON is a
/// single `report.json`; CSV is one file per table.
pub fn export_report(report: &EvaluationReport, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    match format {
        ReportFormat::Json => {
            let path = dir.join("report.json");
            let mut w = create(&path)?;
            serde_json::to_writer_pretty(&mut w, report)?;
            w.flush()?;
            written.push(path);
        }
        ReportFormat::Csv => {
            let mut emit = |name: &str, f: &dyn Fn(&mut BufWriter<File>) -> Result<()>| -> Result<()> {
                let path = dir.join(name);
                let mut w = create(&path)?;
                f(&mut w)?;
                w.flush()?;
                written.push(path);
                Ok(())
            };
            if report.dual.is_some() || report.only24.is_some() {
                emit("summary.csv", &|w| write_summary_csv(report, w))?;
                emit("runs.csv", &|w| write_runs_csv(report, w))?;
            }
            if let Some(e) = &report.dual {
                emit("confusion_dual.csv", &|w| write_confusion_csv(&e.confusion, w))?;
            }
            if let Some(e) = &report.only24 {
                emit("confusion_2.4.csv", &|w| write_confusion_csv(&e.confusion, w))?;
            }
            if !report.ap_curve.is_empty() {
                emit("ap_curve.csv", &|w| write_curve_csv(&report.ap_curve, "aps", w))?;
            }
            if !report.subsample_curve.is_empty() {
                emit("subsample_curve.csv", &|w| write_curve_csv(&report.subsample_curve, "fraction", w))?;
            }
        }
    }
    Ok(written)
}

/// Reads a report written in JSON form.
pub fn import_report(path: &Path) -> Result<EvaluationReport> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}
