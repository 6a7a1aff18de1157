use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, Read};
use std::path::Path;

use serde::Serialize;
use serde_json::json;
use wifiloc_core::ensemble::{train_bundle, EnsembleConfig, LocalizerBundle, ModelAccuracy};
use wifiloc_core::evaluation::{
    ap_ablation, dataset_for_band, evaluate_repeated, export_report, generate_synthetic,
    subsample_curve, CurvePoint, EvaluationReport, ReportFormat, SyntheticConfig,
    write_confusion_csv,
};
use wifiloc_core::fingerprint::io::{
    assemble, load_store, read_csv_matrix, read_find3, read_jsonl, read_registry, save_store, ScanRecord,
};
use wifiloc_core::fingerprint::{BandProfile, Dataset};
use wifiloc_service::ServiceConfig;

use crate::output::ReportDir;
use crate::{
    AblateArgs, BandSelector, CliError, EvaluateArgs, IngestArgs, InputFormat, ModelArgs, PredictArgs, ServeArgs,
    SubsampleArgs, SynthArgs, TrainArgs,
};

fn ensemble_config(m: &ModelArgs) -> Result<EnsembleConfig, CliError> {
    let cfg = if m.fast {
        EnsembleConfig::fast()
    } else if let Some(path) = &m.config {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
    } else {
        EnsembleConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn open_store(m: &ModelArgs) -> Result<Dataset, CliError> {
    if !m.store.is_dir() {
        return Err(CliError::Io(io::Error::new(
            io::ErrorKind::NotFound,
            format!("store directory {} not found", m.store.display()),
        )));
    }
    Ok(load_store(&m.store)?)
}

fn model_params(m: &ModelArgs, cfg: &EnsembleConfig) -> serde_json::Value {
    json!({ "store": m.store, "seed": m.seed, "config": cfg })
}

fn bands(sel: BandSelector) -> Vec<BandProfile> {
    match sel {
        BandSelector::Dual => vec![BandProfile::DualBand],
        BandSelector::Only24 => vec![BandProfile::Band24Only],
        BandSelector::Both => vec![BandProfile::DualBand, BandProfile::Band24Only],
    }
}

fn short(digest: &str) -> &str {
    &digest[..digest.len().min(12)]
}

pub fn ingest(a: &IngestArgs, reports: &Path) -> Result<(), CliError> {
    let input = BufReader::new(File::open(&a.input)?);
    let mut ignored = BTreeMap::new();
    let records = match a.format {
        InputFormat::Jsonl => read_jsonl(input)?,
        InputFormat::Csv => read_csv_matrix(input)?,
        InputFormat::Find3 => read_find3(input, &mut ignored)?,
    };
    let registry = read_registry(BufReader::new(File::open(&a.registry)?))?;
    let (ds, mut summary) = assemble(records, registry)?;
    summary.ignored_fields = ignored;
    save_store(&ds, &a.out)?;

    let digest = ds.content_digest();
    let mut dir = ReportDir::create(reports, "ingest")?;
    dir.write_json("summary.json", &summary)?;
    dir.write("locations.csv", |w| {
        let mut csv = csv_writer(w);
        csv.write_record(["location", "name", "fingerprints"]).map_err(core_csv)?;
        for (id, c) in &summary.per_location {
            csv.write_record([id.to_string(), c.name.clone(), c.count.to_string()]).map_err(core_csv)?;
        }
        csv.flush()?;
        Ok(())
    })?;
    let line = format!(
        "ingested {} fingerprints at {} locations into {} (digest {}); dropped {} unlabeled, {} empty, {} malformed scans and {} unknown-radio readings",
        summary.fingerprints,
        summary.per_location.len(),
        a.out.display(),
        short(&digest),
        summary.unlabeled_scans,
        summary.empty_scans,
        summary.malformed_scans,
        summary.unknown_radio_readings,
    );
    let params = json!({ "in": a.input, "format": format!("{:?}", a.format).to_lowercase(), "registry": a.registry, "out": a.out });
    dir.finish(None, params, Some(digest), line)?;
    Ok(())
}

fn csv_writer<W: io::Write>(w: W) -> csv::Writer<W> {
    csv::Writer::from_writer(w)
}

fn core_csv(e: csv::Error) -> CliError {
    CliError::Core(e.into())
}

#[derive(Serialize)]
struct BandTraining {
    band: BandProfile,
    features: usize,
    validation_accuracy: f64,
    test_accuracy: f64,
    models: Vec<ModelAccuracy>,
}

#[derive(Serialize)]
struct TrainingSummary {
    seed: u64,
    dataset_digest: String,
    bands: Vec<BandTraining>,
}

pub fn train(a: &TrainArgs, reports: &Path) -> Result<(), CliError> {
    let cfg = ensemble_config(&a.model)?;
    let ds = open_store(&a.model)?;
    let seed = a.model.seed;
    let bundle = train_bundle(&ds, &cfg, seed)?;
    let mut bands_out = Vec::new();
    for band in [BandProfile::DualBand, BandProfile::Band24Only] {
        let meta = bundle.meta(band);
        let data = dataset_for_band(&ds, band)?;
        bands_out.push(BandTraining {
            band,
            features: meta.feature_space().len(),
            validation_accuracy: meta.report().meta_validation_accuracy,
            test_accuracy: meta.accuracy_on(&data, &meta.report().split.test)?,
            models: meta.report().validation_accuracy.clone(),
        });
    }
    let summary = TrainingSummary {
        seed,
        dataset_digest: ds.content_digest(),
        bands: bands_out,
    };

    let mut dir = ReportDir::create(reports, "train")?;
    let model_path = dir.write("model.json", |w| Ok(bundle.to_writer(w)?))?;
    dir.write_json("training.json", &summary)?;
    dir.write("training.csv", |w| {
        let mut csv = csv_writer(w);
        csv.write_record(["band", "model", "validation_accuracy"]).map_err(core_csv)?;
        for b in &summary.bands {
            let band = b.band.to_string();
            csv.write_record([band.as_str(), "meta", &b.validation_accuracy.to_string()])
                .map_err(core_csv)?;
            for m in &b.models {
                csv.write_record([band.as_str(), m.algorithm.name(), &m.accuracy.to_string()])
                    .map_err(core_csv)?;
            }
        }
        csv.flush()?;
        Ok(())
    })?;
    if let Some(out) = &a.out {
        fs::copy(&model_path, out)?;
    }
    let parts: Vec<String> = summary
        .bands
        .iter()
        .map(|b| format!("{} validation {:.4} test {:.4}", b.band, b.validation_accuracy, b.test_accuracy))
        .collect();
    let line = format!("trained with seed {seed}: {}", parts.join(", "));
    let mut params = model_params(&a.model, &cfg);
    params["out"] = json!(a.out);
    dir.finish(Some(seed), params, Some(summary.dataset_digest.clone()), line)?;
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs, reports: &Path) -> Result<(), CliError> {
    let cfg = ensemble_config(&a.model)?;
    let ds = open_store(&a.model)?;
    let seed = a.model.seed;
    let mut report = EvaluationReport::new(seed, a.repeats, ds.content_digest());
    let mut parts = Vec::new();
    for band in bands(a.band) {
        let eval = evaluate_repeated(&ds, band, &cfg, a.repeats, seed)?;
        parts.push(format!(
            "{band} mean accuracy {:.4} (q25 {:.4}, q75 {:.4})",
            eval.test.mean, eval.test.q25, eval.test.q75
        ));
        match band {
            BandProfile::DualBand => report.dual = Some(eval),
            BandProfile::Band24Only => report.only24 = Some(eval),
        }
    }
    let mut dir = ReportDir::create(reports, "evaluate")?;
    write_report(&mut dir, &report)?;
    dir.write("models.csv", |w| {
        let mut csv = csv_writer(w);
        csv.write_record(["band", "model", "mean_test_accuracy"]).map_err(core_csv)?;
        for eval in [&report.dual, &report.only24].into_iter().flatten() {
            let band = eval.band.to_string();
            csv.write_record([band.as_str(), "meta", &eval.test.mean.to_string()])
                .map_err(core_csv)?;
            for m in eval.model_means() {
                csv.write_record([band.as_str(), m.algorithm.name(), &m.accuracy.to_string()])
                    .map_err(core_csv)?;
            }
        }
        csv.flush()?;
        Ok(())
    })?;
    let line = format!("seed {seed}, {} repeats: {}", a.repeats, parts.join("; "));
    let mut params = model_params(&a.model, &cfg);
    params["band"] = json!(a.band.name());
    params["repeats"] = json!(a.repeats);
    dir.finish(Some(seed), params, Some(report.dataset_digest.clone()), line)?;
    Ok(())
}

fn write_report(dir: &mut ReportDir, report: &EvaluationReport) -> Result<(), CliError> {
    for format in [ReportFormat::Json, ReportFormat::Csv] {
        let files = export_report(report, format, dir.path())?;
        dir.adopt(&files);
    }
    Ok(())
}

fn write_curve_confusions(dir: &mut ReportDir, points: &[CurvePoint], prefix: &str) -> Result<(), CliError> {
    for p in points {
        if let Some(m) = &p.confusion {
            dir.write(&format!("confusion_{prefix}{}.csv", p.x), |w| Ok(write_confusion_csv(m, w)?))?;
        }
    }
    Ok(())
}

pub fn ablate(a: &AblateArgs, reports: &Path) -> Result<(), CliError> {
    let cfg = ensemble_config(&a.model)?;
    let ds = open_store(&a.model)?;
    let seed = a.model.seed;
    let total = ds.registry().aps().len();
    let counts: Vec<usize> = if a.ap_counts.is_empty() {
        (total.saturating_sub(5).max(1)..=total).rev().collect()
    } else {
        a.ap_counts.clone()
    };
    if let Some(bad) = counts.iter().find(|&&c| c == 0 || c > total) {
        return Err(CliError::Usage(format!("AP count {bad} outside 1..={total}")));
    }
    let curve = ap_ablation(&ds, &counts, &cfg, a.repeats, seed, a.visibility)?;
    let mut report = EvaluationReport::new(seed, a.repeats, ds.content_digest());
    report.ap_curve = curve;

    let mut dir = ReportDir::create(reports, "ablate")?;
    write_report(&mut dir, &report)?;
    write_curve_confusions(&mut dir, &report.ap_curve, "aps")?;
    dir.write("coverage.csv", |w| {
        let mut csv = csv_writer(w);
        csv.write_record(["aps", "location", "covering_aps"]).map_err(core_csv)?;
        for p in &report.ap_curve {
            if let Some(cov) = &p.coverage {
                for (loc, n) in cov.locations.iter().zip(&cov.covering_aps) {
                    csv.write_record([p.x.to_string(), loc.to_string(), n.to_string()])
                        .map_err(core_csv)?;
                }
            }
        }
        csv.flush()?;
        Ok(())
    })?;
    let parts: Vec<String> = report
        .ap_curve
        .iter()
        .map(|p| {
            let min_cov = p.coverage.as_ref().map_or(0, |c| c.min_covering());
            format!("{} APs {:.4} (min covering {min_cov})", p.x, p.stats.mean)
        })
        .collect();
    let line = format!("seed {seed}, {} repeats: {}", a.repeats, parts.join(", "));
    let mut params = model_params(&a.model, &cfg);
    params["ap_counts"] = json!(counts);
    params["repeats"] = json!(a.repeats);
    params["visibility_dbm"] = json!(a.visibility);
    dir.finish(Some(seed), params, Some(report.dataset_digest.clone()), line)?;
    Ok(())
}

pub fn subsample(a: &SubsampleArgs, reports: &Path) -> Result<(), CliError> {
    let band = match a.band {
        BandSelector::Dual => BandProfile::DualBand,
        BandSelector::Only24 => BandProfile::Band24Only,
        BandSelector::Both => return Err(CliError::Usage("subsample takes --band dual or --band 2.4".into())),
    };
    if a.fractions.is_empty() {
        return Err(CliError::Usage("--fractions needs at least one value".into()));
    }
    let cfg = ensemble_config(&a.model)?;
    let ds = open_store(&a.model)?;
    let seed = a.model.seed;
    let curve = subsample_curve(&ds, &a.fractions, band, &cfg, a.repeats, seed)?;
    let mut report = EvaluationReport::new(seed, a.repeats, ds.content_digest());
    report.subsample_curve = curve;

    let mut dir = ReportDir::create(reports, "subsample")?;
    write_report(&mut dir, &report)?;
    write_curve_confusions(&mut dir, &report.subsample_curve, "f")?;
    let parts: Vec<String> = report
        .subsample_curve
        .iter()
        .map(|p| format!("{} -> {:.4}", p.x, p.stats.mean))
        .collect();
    let line = format!("seed {seed}, {} repeats, {band}: {}", a.repeats, parts.join(", "));
    let mut params = model_params(&a.model, &cfg);
    params["fractions"] = json!(a.fractions);
    params["band"] = json!(band);
    params["repeats"] = json!(a.repeats);
    dir.finish(Some(seed), params, Some(report.dataset_digest.clone()), line)?;
    Ok(())
}

/// Near-square grid holding exactly `cells` cells.
pub fn synth_config(a: &SynthArgs) -> Result<SyntheticConfig, CliError> {
    if a.cells < 2 || a.aps == 0 {
        return Err(CliError::Usage("synth needs at least 2 cells and 1 AP".into()));
    }
    let cols = (a.cells as f64).sqrt().ceil() as usize;
    let rows = a.cells.div_ceil(cols);
    let mut cfg = SyntheticConfig::grid(cols, rows, a.cell_size, a.spacing, a.aps)
        .with_sigma(a.sigma)
        .with_samples(a.samples)
        .with_seed(a.seed);
    cfg.cells.truncate(a.cells);
    cfg.dual_band = !a.single_band;
    Ok(cfg)
}

pub fn synth(a: &SynthArgs, reports: &Path) -> Result<(), CliError> {
    let cfg = synth_config(a)?;
    let ds = generate_synthetic(&cfg)?;
    save_store(&ds, &a.out)?;
    let digest = ds.content_digest();
    let mut dir = ReportDir::create(reports, "synth")?;
    dir.write_json("synthetic.json", &cfg)?;
    let line = format!(
        "wrote {} fingerprints ({} cells, {} APs, sigma {} dB, seed {}) to {} (digest {})",
        ds.len(),
        cfg.cells.len(),
        cfg.aps.len(),
        cfg.sigma_db,
        a.seed,
        a.out.display(),
        short(&digest)
    );
    let params = json!({
        "cells": a.cells, "aps": a.aps, "sigma": a.sigma, "seed": a.seed, "samples": a.samples,
        "cell_size": a.cell_size, "spacing": a.spacing, "single_band": a.single_band, "out": a.out,
    });
    dir.finish(Some(a.seed), params, Some(digest), line)?;
    Ok(())
}

pub fn predict(a: &PredictArgs) -> Result<(), CliError> {
    let bundle = LocalizerBundle::load(&a.model)?;
    let mut text = String::new();
    match a.input.as_deref() {
        Some(p) if p != Path::new("-") => {
            File::open(p)?.read_to_string(&mut text)?;
        }
        _ => {
            io::stdin().read_to_string(&mut text)?;
        }
    }
    let record: ScanRecord = serde_json::from_str(&text)?;
    let result = bundle.localize(&record.into_fingerprint()?)?;
    println!("{}", serde_json::to_string(&result)?);
    Ok(())
}

pub fn serve(a: &ServeArgs) -> Result<(), CliError> {
    let cfg = ServiceConfig::load(a.config.as_deref())?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(wifiloc_service::serve(cfg))?;
    Ok(())
}
