use proptest::prelude::*;
use rand::Rng;
use wifiloc_core::classifiers::{fit, Algorithm, ClassifierConfig, ModelState, Samples, TrainedModel};
use wifiloc_core::fingerprint::LocationId;
use wifiloc_core::seed;

/// Random training set: `n` rows of `d` RSSI-like values over `k` labels,
/// every label present at least twice.
fn random_samples(n: usize, d: usize, k: u32, s: u64) -> Samples {
    let mut rng = seed::rng(s);
    let labels: Vec<LocationId> = (0..n).map(|i| LocationId(1 + (i as u32 % k))).collect();
    let rows: Vec<Vec<f64>> = labels
        .iter()
        .map(|l| {
            (0..d)
                .map(|j| {
                    let centre = -50.0 - 7.0 * f64::from(l.0) * (j as f64 + 1.0) % 40.0;
                    (centre + rng.random_range(-12.0..12.0)).clamp(-100.0, -30.0)
                })
                .collect()
        })
        .collect();
    Samples::new(&rows, &labels).unwrap()
}

fn assert_distribution(model: &TrainedModel, x: &[f64]) -> Result<(), TestCaseError> {
    let dist = model.predict_proba(x).unwrap();
    let sum: f64 = dist.probs().iter().sum();
    prop_assert!((sum - 1.0).abs() < 1e-6, "{} sums to {sum}", model.algorithm());
    prop_assert!(dist.probs().iter().all(|p| *p >= 0.0 && p.is_finite()));
    prop_assert_eq!(dist.labels(), model.labels());
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_algorithm_emits_a_distribution(
        n in 6usize..24,
        d in 1usize..5,
        k in 2u32..4,
        s in any::<u64>(),
        query in prop::collection::vec(-130.0f64..10.0, 4),
    ) {
        let samples = random_samples(n, d, k, s);
        let config = ClassifierConfig::fast();
        for alg in Algorithm::ALL {
            let model = fit(alg, &config, &samples, s).unwrap();
            assert_distribution(&model, &query[..d])?;
            assert_distribution(&model, samples.row(0))?;
        }
    }
}

#[test]
fn fitting_is_deterministic_and_round_trips() {
    let samples = random_samples(40, 4, 3, 11);
    let config = ClassifierConfig::fast();
    let mut rng = seed::rng(99);
    let queries: Vec<Vec<f64>> = (0..100)
        .map(|_| (0..4).map(|_| rng.random_range(-100.0..-30.0)).collect())
        .collect();
    for alg in Algorithm::ALL {
        let a = fit(alg, &config, &samples, 5).unwrap();
        let b = fit(alg, &config, &samples, 5).unwrap();
        assert_eq!(a, b, "{alg}");
        let text = serde_json::to_string(&a).unwrap();
        let back: TrainedModel = serde_json::from_str(&text).unwrap();
        for q in &queries {
            assert_eq!(a.predict_proba(q).unwrap(), back.predict_proba(q).unwrap(), "{alg}");
        }
    }
}

#[test]
fn forest_probability_is_the_mean_of_its_trees() {
    let samples = random_samples(60, 3, 3, 2);
    let model = fit(Algorithm::RandomForest, &ClassifierConfig::fast(), &samples, 8).unwrap();
    let ModelState::RandomForest(forest) = model.state() else {
        panic!("not a forest");
    };
    let mut rng = seed::rng(1);
    for _ in 0..50 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-100.0..-30.0)).collect();
        let trees = forest.tree_distributions(&x);
        let got = model.predict_proba(&x).unwrap();
        for (c, p) in got.probs().iter().enumerate() {
            let mean = trees.iter().map(|t| t[c]).sum::<f64>() / trees.len() as f64;
            assert!((p - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn separable_clusters_are_learned_by_everyone() {
    let rows: Vec<Vec<f64>> = (0..40)
        .map(|i| vec![if i < 20 { -90.0 + i as f64 * 0.1 } else { -40.0 - (i - 20) as f64 * 0.1 }])
        .collect();
    let labels: Vec<LocationId> = (0..40).map(|i| LocationId(if i < 20 { 1 } else { 2 })).collect();
    let samples = Samples::new(&rows, &labels).unwrap();
    for alg in Algorithm::ALL {
        let model = fit(alg, &ClassifierConfig::default(), &samples, 3).unwrap();
        for (x, y) in rows.iter().zip(&labels) {
            assert_eq!(model.predict(x).unwrap(), *y, "{alg}");
        }
    }
}
