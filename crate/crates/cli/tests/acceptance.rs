//! Acceptance suite: one PASS / FAIL / SKIPPED line per criterion.
//!
//! Criteria 1-5 need the published museum fingerprint store. Point
//! `WIFILOC_MUSEUM_STORE` at a store directory produced by `wifiloc ingest`
//! to run them; without it they are reported as SKIPPED.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::seq::SliceRandom;
use serde_json::{json, Value};
use tower::ServiceExt;
use wifiloc_core::classifiers::{fit, Algorithm, ClassifierConfig, Samples};
use wifiloc_core::ensemble::{sensitivity, specificity, train_meta, weighted_scores, youden, EnsembleConfig, LocationScores};
use wifiloc_core::evaluation::{evaluate_repeated, generate_synthetic, ConfusionMatrix, SyntheticConfig};
use wifiloc_core::fingerprint::io::{save_store, ScanRecord};
use wifiloc_core::fingerprint::{BandProfile, Dataset, LocationId};
use wifiloc_core::seed;
use wifiloc_core::tracker::{TrackerConfig, TrackerState};
use wifiloc_service::{router, AppState, ServiceConfig, TrackResponse};

const MUSEUM_ENV: &str = "WIFILOC_MUSEUM_STORE";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Fail,
    Skipped,
}

struct Outcome {
    id: u32,
    title: &'static str,
    status: Status,
    detail: String,
}

impl Outcome {
    fn from_checks(id: u32, title: &'static str, checks: Vec<Result<String, String>>) -> Self {
        let failed = checks.iter().any(Result::is_err);
        let detail = checks
            .into_iter()
            .map(|c| match c {
                Ok(m) => format!("ok: {m}"),
                Err(m) => format!("FAILED: {m}"),
            })
            .collect::<Vec<_>>()
            .join("; ");
        Outcome {
            id,
            title,
            status: if failed { Status::Fail } else { Status::Pass },
            detail,
        }
    }

    fn skipped(id: u32, title: &'static str, why: &str) -> Self {
        Outcome {
            id,
            title,
            status: Status::Skipped,
            detail: why.to_string(),
        }
    }
}

fn check(ok: bool, msg: String) -> Result<String, String> {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

#[test]
fn acceptance() {
    let mut outcomes = museum_criteria();
    outcomes.push(property_suite());
    outcomes.push(service_contract());

    let mut summary = String::new();
    for o in &outcomes {
        let tag = match o.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIPPED",
        };
        writeln!(summary, "criterion {} [{tag}] {}: {}", o.id, o.title, o.detail).unwrap();
    }
    println!("{summary}");
    let failed: Vec<u32> = outcomes.iter().filter(|o| o.status == Status::Fail).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

// ---------------------------------------------------------------------
// Criteria 1-5: museum dataset through the CLI.

fn museum_criteria() -> Vec<Outcome> {
    const TITLES: [&str; 5] = [
        "museum dual-band accuracy >= 0.93",
        "museum 2.4 GHz-only accuracy >= 0.87 and below dual-band",
        "AP ablation to 10 APs >= 0.91 with >= 3 covering APs per location",
        "40% subsample >= 0.88 with confusion concentrated at locations 6/7/8",
        "ensemble within 2 points of every individual classifier",
    ];
    let store = match std::env::var(MUSEUM_ENV) {
        Ok(p) if Path::new(&p).is_dir() => PathBuf::from(p),
        _ => {
            let why = format!(
                "published museum dataset not available (set {MUSEUM_ENV} to an ingested store); criterion 6 stands in"
            );
            return (1..=5).map(|i| Outcome::skipped(i, TITLES[i as usize - 1], &why)).collect();
        }
    };
    let reports = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| -> Result<Value, String> {
        let started = Instant::now();
        let out = Command::new(env!("CARGO_BIN_EXE_wifiloc"))
            .arg("--reports")
            .arg(reports.path())
            .args(args)
            .arg("--store")
            .arg(&store)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(String::from_utf8_lossy(&out.stderr).into_owned());
        }
        let stdout = String::from_utf8_lossy(&out.stdout);
        println!("{} ({:.0?})", stdout.trim(), started.elapsed());
        let start = stdout.rfind("[report: ").ok_or("no report path")? + 9;
        let end = stdout[start..].find(']').ok_or("no report path")? + start;
        let text = std::fs::read(Path::new(&stdout[start..end]).join("report.json")).map_err(|e| e.to_string())?;
        serde_json::from_slice(&text).map_err(|e| e.to_string())
    };

    let mut outcomes = Vec::new();
    match run(&["evaluate", "--band", "both", "--repeats", "10", "--seed", "7"]) {
        Ok(report) => {
            let dual = report["dual"]["test"]["mean"].as_f64().unwrap_or(f64::NAN);
            let only24 = report["only24"]["test"]["mean"].as_f64().unwrap_or(f64::NAN);
            outcomes.push(Outcome::from_checks(1, TITLES[0], vec![check(dual >= 0.93, format!("mean {dual:.4}"))]));
            outcomes.push(Outcome::from_checks(
                2,
                TITLES[1],
                vec![
                    check(only24 >= 0.87, format!("mean {only24:.4}")),
                    check(only24 < dual, format!("{only24:.4} < dual {dual:.4}")),
                ],
            ));
            let mut checks = Vec::new();
            let runs = report["dual"]["runs"].as_array().cloned().unwrap_or_default();
            let mut per_model: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for r in &runs {
                for m in r["model_test_accuracy"].as_array().into_iter().flatten() {
                    per_model
                        .entry(m["algorithm"].as_str().unwrap_or("?").to_string())
                        .or_default()
                        .push(m["accuracy"].as_f64().unwrap_or(f64::NAN));
                }
            }
            for (name, values) in per_model {
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                checks.push(check(dual >= mean - 0.02, format!("meta {dual:.4} vs {name} {mean:.4}")));
            }
            outcomes.push(Outcome::from_checks(5, TITLES[4], checks));
        }
        Err(e) => {
            for (id, title) in [(1, TITLES[0]), (2, TITLES[1]), (5, TITLES[4])] {
                outcomes.push(Outcome::from_checks(id, title, vec![Err(format!("evaluate failed: {e}"))]));
            }
        }
    }

    outcomes.push(match run(&["ablate", "--ap-counts", "15,14,13,12,11,10", "--repeats", "10"]) {
        Ok(report) => {
            let last = report["ap_curve"].as_array().and_then(|c| c.last()).cloned().unwrap_or(Value::Null);
            let mean = last["stats"]["mean"].as_f64().unwrap_or(f64::NAN);
            let min_cov = last["coverage"]["covering_aps"]
                .as_array()
                .and_then(|v| v.iter().filter_map(Value::as_u64).min())
                .unwrap_or(0);
            Outcome::from_checks(
                3,
                TITLES[2],
                vec![
                    check(last["x"].as_f64() == Some(10.0), format!("last point at {} APs", last["x"])),
                    check(mean >= 0.91, format!("mean {mean:.4}")),
                    check(min_cov >= 3, format!("min covering APs {min_cov}")),
                ],
            )
        }
        Err(e) => Outcome::from_checks(3, TITLES[2], vec![Err(format!("ablate failed: {e}"))]),
    });

    outcomes.push(match run(&["subsample", "--fractions", "0.4", "--band", "dual", "--repeats", "10"]) {
        Ok(report) => {
            let point = &report["subsample_curve"][0];
            let mean = point["stats"]["mean"].as_f64().unwrap_or(f64::NAN);
            let m: Option<ConfusionMatrix> = serde_json::from_value(point["confusion"].clone()).ok();
            let worst = m.as_ref().and_then(|m| m.most_confused(1).first().copied());
            Outcome::from_checks(
                4,
                TITLES[3],
                vec![
                    check(mean >= 0.88, format!("mean {mean:.4}")),
                    check(
                        worst.is_some_and(|l| (6..=8).contains(&l.0)),
                        format!("largest off-diagonal row mass at location {worst:?}"),
                    ),
                ],
            )
        }
        Err(e) => Outcome::from_checks(4, TITLES[3], vec![Err(format!("subsample failed: {e}"))]),
    });
    outcomes.sort_by_key(|o| o.id);
    outcomes
}

// ---------------------------------------------------------------------
// Criterion 6: dataset-independent property suite.

const PROPERTY_BUDGET: Duration = Duration::from_secs(120);

fn property_suite() -> Outcome {
    let started = Instant::now();
    let mut checks = vec![
        hand_computed_arithmetic(),
        classifier_distributions(),
        noiseless_fixture(),
        shuffled_labels(),
        tracker_brute_force(),
        confusion_and_determinism(),
    ];
    let elapsed = started.elapsed();
    checks.push(check(elapsed <= PROPERTY_BUDGET, format!("ran in {:.1}s", elapsed.as_secs_f64())));
    Outcome::from_checks(6, "property suite", checks)
}

fn ids(v: &[u32]) -> Vec<LocationId> {
    v.iter().map(|i| LocationId(*i)).collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

fn hand_computed_arithmetic() -> Result<String, String> {
    let (a, b) = (LocationId(1), LocationId(2));
    let labels = vec![a, a, b];
    let preds = vec![a, b, b];
    let mut bad = Vec::new();
    let mut expect = |name: &str, got: f64, want: f64| {
        if !close(got, want) {
            bad.push(format!("{name}: {got} != {want}"));
        }
    };
    expect("sensitivity", sensitivity(&preds, &labels, a).unwrap(), 0.5);
    expect("specificity", specificity(&preds, &labels, a).unwrap(), 1.0);
    expect("sensitivity perfect", sensitivity(&labels, &labels, b).unwrap(), 1.0);
    expect("specificity always-y", specificity(&[a, a, a], &labels, a).unwrap(), 0.0);
    expect("sensitivity all wrong", sensitivity(&[b, b, b], &labels, a).unwrap(), 0.0);
    expect("youden(1,1)", youden(1.0, 1.0), 1.0);
    expect("youden(.5,.5)", youden(0.5, 0.5), 0.0);
    expect("youden(.9,.8)", youden(0.9, 0.8), 0.7);
    let q = weighted_scores(&[vec![1.0], vec![1.0]], &[vec![0.6], vec![0.8]], true).unwrap();
    expect("Q sum", q[0], 1.4);
    let q = weighted_scores(&[vec![-0.2], vec![0.5]], &[vec![0.9], vec![0.1]], true).unwrap();
    expect("Q clamped", q[0], 0.05);
    let q = weighted_scores(&[vec![0.0, 0.0]], &[vec![0.3, 0.7]], true).unwrap();
    expect("Q zero weights", q.iter().sum(), 0.0);
    let tie = LocationScores {
        locations: ids(&[1, 2]),
        scores: q,
    };
    if tie.argmax() != a {
        bad.push("all-zero scores must fall to the lowest id".into());
    }
    if bad.is_empty() {
        Ok("Youden and score examples reproduce".into())
    } else {
        Err(bad.join(", "))
    }
}

const CASES_PER_ALGORITHM: u32 = 1667;

fn classifier_distributions() -> Result<String, String> {
    let config = ClassifierConfig::fast();
    let strategy = (
        4usize..20,
        1usize..5,
        2u32..5,
        any::<u64>(),
        prop::collection::vec(-130.0f64..10.0, 4),
    );
    let mut total = 0;
    for alg in Algorithm::ALL {
        let mut runner = TestRunner::new_with_rng(
            Config {
                cases: CASES_PER_ALGORITHM,
                failure_persistence: None,
                ..Config::default()
            },
            TestRng::deterministic_rng(RngAlgorithm::ChaCha),
        );
        runner
            .run(&strategy, |(n, d, k, s, query)| {
                let mut rng = seed::rng(s);
                let labels: Vec<LocationId> = (0..n.max(k as usize))
                    .map(|i| LocationId(1 + i as u32 % k))
                    .collect();
                let rows: Vec<Vec<f64>> = labels
                    .iter()
                    .map(|_| (0..d).map(|_| rand::Rng::random_range(&mut rng, -100.0..-30.0)).collect())
                    .collect();
                let samples = Samples::new(&rows, &labels).unwrap();
                let model = fit(alg, &config, &samples, s).unwrap();
                for x in [&query[..d], &rows[0][..]] {
                    let dist = model.predict_proba(x).unwrap();
                    let sum: f64 = dist.probs().iter().sum();
                    prop_assert!((sum - 1.0).abs() < 1e-6, "sum {}", sum);
                    prop_assert!(dist.probs().iter().all(|p| p.is_finite() && *p >= 0.0));
                }
                Ok(())
            })
            .map_err(|e| format!("{alg}: {e}"))?;
        total += CASES_PER_ALGORITHM;
    }
    Ok(format!("{total} randomized fits emit valid distributions"))
}

fn noiseless_fixture() -> Result<String, String> {
    let ds = generate_synthetic(&SyntheticConfig::grid(2, 2, 6.0, 12.0, 3).with_sigma(0.0).with_samples(60).with_seed(3))
        .map_err(|e| e.to_string())?;
    let meta = train_meta(&ds, BandProfile::DualBand, &EnsembleConfig::default(), 42).map_err(|e| e.to_string())?;
    let acc = meta.accuracy_on(&ds, &meta.report().split.test).map_err(|e| e.to_string())?;
    let all_one = meta.youden().rows().iter().flatten().all(|j| *j == 1.0);
    check(acc == 1.0 && all_one, format!("noiseless accuracy {acc}, J all ones: {all_one}"))
}

fn shuffled_labels() -> Result<String, String> {
    let ds = generate_synthetic(&SyntheticConfig::grid(3, 2, 6.0, 12.0, 6).with_samples(40).with_seed(9))
        .map_err(|e| e.to_string())?;
    let mut means = Vec::new();
    for s in 0..10u64 {
        let mut labels = ds.labels();
        labels.shuffle(&mut seed::rng(1000 + s));
        let shuffled = ds.relabeled(&labels).map_err(|e| e.to_string())?;
        let meta = train_meta(&shuffled, BandProfile::DualBand, &EnsembleConfig::fast(), s).map_err(|e| e.to_string())?;
        means.push(meta.youden().mean());
    }
    let mean = means.iter().sum::<f64>() / means.len() as f64;
    check(mean.abs() < 0.1, format!("label-shuffled mean J {mean:+.4} over 10 seeds"))
}

/// The smoothing rule stated directly: the area changes to `e` when the
/// last three estimates all equal `e` and `e` is not the current area.
fn reference_tracker(estimates: &[u32]) -> Vec<(Option<u32>, bool, bool)> {
    let mut current = None;
    let mut ever = BTreeSet::new();
    let mut out = Vec::new();
    for i in 0..estimates.len() {
        let e = estimates[i];
        let run = i >= 2 && estimates[i - 2..=i].iter().all(|x| *x == e);
        // A run only counts if it began after the last change.
        let fresh = run && current != Some(e) && out[i - 2..i].iter().all(|(c, _, _): &(Option<u32>, bool, bool)| *c != Some(e));
        if fresh {
            current = Some(e);
            let first = ever.insert(e);
            out.push((current, true, first));
        } else {
            out.push((current, false, false));
        }
    }
    out
}

fn tracker_brute_force() -> Result<String, String> {
    let cfg = TrackerConfig::default();
    let mut sequences = 0;
    for len in 0..=8u32 {
        for code in 0..3u32.pow(len) {
            let seq: Vec<u32> = (0..len).map(|i| 1 + code / 3u32.pow(i) % 3).collect();
            let expected = reference_tracker(&seq);
            let mut state = TrackerState::new();
            for (i, e) in seq.iter().enumerate() {
                let (next, t) = state.update(&cfg, LocationId(*e));
                let got = (next.current.map(|l| l.0), t.changed, t.first_visit);
                if got != expected[i] {
                    return Err(format!("{seq:?} step {i}: got {got:?}, expected {:?}", expected[i]));
                }
                state = next;
            }
            sequences += 1;
        }
    }
    Ok(format!("tracker matches the reference on all {sequences} sequences"))
}

fn confusion_and_determinism() -> Result<String, String> {
    let mut rng = seed::rng(4);
    for _ in 0..500 {
        let n = rand::Rng::random_range(&mut rng, 1..100);
        let labels: Vec<LocationId> = (0..n).map(|_| LocationId(rand::Rng::random_range(&mut rng, 1..7))).collect();
        let preds: Vec<LocationId> = (0..n).map(|_| LocationId(rand::Rng::random_range(&mut rng, 1..7))).collect();
        let m = ConfusionMatrix::from_predictions(&ids(&[1, 2, 3, 4, 5, 6]), &labels, &preds).map_err(|e| e.to_string())?;
        for (row, support) in m.rows.iter().zip(&m.support) {
            if *support > 0 && (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(format!("row {row:?} does not sum to 1"));
            }
        }
    }
    let ds = generate_synthetic(&SyntheticConfig::grid(2, 2, 6.0, 12.0, 4).with_samples(40)).map_err(|e| e.to_string())?;
    let a = evaluate_repeated(&ds, BandProfile::DualBand, &EnsembleConfig::fast(), 3, 11).map_err(|e| e.to_string())?;
    let b = evaluate_repeated(&ds, BandProfile::DualBand, &EnsembleConfig::fast(), 3, 11).map_err(|e| e.to_string())?;
    let (ja, jb) = (serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    check(ja == jb, "confusion rows sum to 1; seeded re-runs are bit-identical".into())
}

// ---------------------------------------------------------------------
// Criterion 7: service contract under load.

const DEVICES: usize = 50;
const TICKS: usize = 12;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or(Body::empty(), |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

struct Observed {
    sent_at: Instant,
    latency: Duration,
    response: TrackResponse,
}

/// Scripted walk: each device dwells at a location for 4 ticks, then
/// moves on.
fn scan_for(ds: &Dataset, by_loc: &BTreeMap<LocationId, Vec<usize>>, device: usize, tick: usize) -> Value {
    let locs: Vec<&LocationId> = by_loc.keys().collect();
    let loc = locs[(device + tick / 4) % locs.len()];
    let pool = &by_loc[loc];
    let fp = &ds.fingerprints()[pool[(device * 7 + tick * 13) % pool.len()]];
    let mut rec = ScanRecord::from_fingerprint(fp);
    rec.device_id = format!("dev-{device:02}");
    rec.ts_ms = 1_000_000 + (tick as i64) * 1000;
    rec.location = None;
    serde_json::to_value(rec).unwrap()
}

fn service_contract() -> Outcome {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let checks = runtime.block_on(async {
        match service_harness().await {
            Ok(checks) => checks,
            Err(e) => vec![Err(e)],
        }
    });
    Outcome::from_checks(7, "service contract under concurrent load", checks)
}

async fn service_harness() -> Result<Vec<Result<String, String>>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ds = generate_synthetic(&SyntheticConfig::grid(3, 3, 6.0, 12.0, 8).with_samples(60).with_seed(21))
        .map_err(|e| e.to_string())?;
    save_store(&ds, dir.path()).map_err(|e| e.to_string())?;
    let config = ServiceConfig {
        data_dir: dir.path().to_path_buf(),
        ..ServiceConfig::default()
    };
    let state = AppState::open(config.clone()).map_err(|e| e.to_string())?;
    let app = router(state.clone());
    let (st, body) = call(&app, "POST", "/api/v1/train", Some(json!({"seed": 1}))).await;
    if st != StatusCode::OK {
        return Err(format!("initial train failed: {body}"));
    }
    let by_loc = ds.indices_by_location();
    let ds = Arc::new(ds);
    let by_loc = Arc::new(by_loc);

    let start = Instant::now();
    let retrain = {
        let app = app.clone();
        tokio::spawn(async move {
            tokio::time::sleep(Duration::from_millis(2500)).await;
            let (st, body) = call(&app, "POST", "/api/v1/train", Some(json!({"seed": 2}))).await;
            (st, body, Instant::now())
        })
    };
    let mut devices = Vec::new();
    for d in 0..DEVICES {
        let (app, ds, by_loc, state) = (app.clone(), ds.clone(), by_loc.clone(), state.clone());
        devices.push(tokio::spawn(async move {
            let mut ticker = tokio::time::interval(Duration::from_secs(1));
            let mut seen = Vec::new();
            let mut during_training = 0;
            for tick in 0..TICKS {
                ticker.tick().await;
                let sent_at = Instant::now();
                let training = state.is_training();
                let (st, body) = call(&app, "POST", "/api/v1/track", Some(scan_for(&ds, &by_loc, d, tick))).await;
                if st != StatusCode::OK {
                    return Err(format!("dev {d} tick {tick}: {st} {body}"));
                }
                during_training += usize::from(training && state.is_training());
                let response: TrackResponse = serde_json::from_value(body).map_err(|e| e.to_string())?;
                seen.push(Observed {
                    sent_at,
                    latency: sent_at.elapsed(),
                    response,
                });
            }
            Ok((seen, during_training))
        }));
    }
    let (train_status, train_body, trained_at) = retrain.await.map_err(|e| e.to_string())?;
    let mut per_device = Vec::new();
    let mut overlapped = 0;
    for h in devices {
        let (seen, during) = h.await.map_err(|e| e.to_string())??;
        overlapped += during;
        per_device.push(seen);
    }
    let wall = start.elapsed();

    let mut checks = Vec::new();
    checks.push(check(
        train_status == StatusCode::OK && train_body["version"] == 2,
        format!("retrain during load returned {train_status} version {}", train_body["version"]),
    ));
    checks.push(check(
        overlapped > 0,
        format!("{overlapped} requests served while the retrain was running"),
    ));

    // Every response names a version whose bundle is on disk, versions
    // never go backwards per device, and requests sent after the swap
    // completed see the new one.
    let mut version_errors = Vec::new();
    for (d, seen) in per_device.iter().enumerate() {
        let mut last = 0;
        for o in seen {
            let v = o.response.model_version;
            if !(v == 1 || v == 2) || !dir.path().join(format!("models/v{v}.json")).is_file() {
                version_errors.push(format!("dev {d}: unknown version {v}"));
            }
            if v < last {
                version_errors.push(format!("dev {d}: version went back from {last} to {v}"));
            }
            if o.sent_at > trained_at && v != 2 {
                version_errors.push(format!("dev {d}: stale version {v} after swap"));
            }
            last = v;
        }
    }
    let total: usize = per_device.iter().map(Vec::len).sum();
    checks.push(check(
        version_errors.is_empty(),
        if version_errors.is_empty() {
            format!("{total} responses, each from a fully installed model")
        } else {
            version_errors.join(", ")
        },
    ));

    // Offline replay of the smoothing rule over each device's raw estimates.
    let cfg = TrackerConfig::default();
    let mut replay_errors = 0;
    let mut changes = 0;
    for seen in &per_device {
        let mut s = TrackerState::new();
        for o in seen {
            let (next, t) = s.update(&cfg, o.response.location);
            changes += usize::from(t.changed);
            if next.current != o.response.smoothed_area
                || t.changed != o.response.changed
                || t.first_visit != o.response.first_visit
            {
                replay_errors += 1;
            }
            s = next;
        }
    }
    checks.push(check(
        replay_errors == 0,
        format!("offline tracker replay agrees ({changes} area changes, {replay_errors} mismatches)"),
    ));

    // Restart: history, model and sessions survive.
    let (_, history_before) = call(&app, "GET", "/api/v1/history?limit=10000", None).await;
    let (_, model_before) = call(&app, "GET", "/api/v1/model", None).await;
    let mut sessions_before = Vec::new();
    for d in 0..DEVICES {
        sessions_before.push(state.tracker_state(&format!("dev-{d:02}")).await);
    }
    drop(app);
    drop(state);
    let state = AppState::open(config).map_err(|e| e.to_string())?;
    let app = router(state.clone());
    let (_, history_after) = call(&app, "GET", "/api/v1/history?limit=10000", None).await;
    let (_, model_after) = call(&app, "GET", "/api/v1/model", None).await;
    let mut sessions_after = Vec::new();
    for d in 0..DEVICES {
        sessions_after.push(state.tracker_state(&format!("dev-{d:02}")).await);
    }
    let history_len = history_before["records"].as_array().map_or(0, Vec::len);
    checks.push(check(
        history_before == history_after
            && model_before == model_after
            && sessions_before == sessions_after
            && history_len == total,
        format!("restart preserves {history_len} history records, model v{} and {DEVICES} sessions", model_after["version"]),
    ));

    let mut latencies: Vec<Duration> = per_device.iter().flatten().map(|o| o.latency).collect();
    latencies.sort();
    let p99 = latencies[(latencies.len() * 99 / 100).min(latencies.len() - 1)];
    println!(
        "service harness: {DEVICES} devices x {TICKS} ticks in {:.1}s, track p99 {:.1} ms (informational)",
        wall.as_secs_f64(),
        p99.as_secs_f64() * 1000.0
    );
    Ok(checks)
}
