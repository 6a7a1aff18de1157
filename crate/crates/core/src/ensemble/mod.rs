//! Youden-weighted combination of the six classifiers, and routing of
//! scans to a dual-band or a 2.4 GHz-only meta-learner.

mod youden;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{self, Algorithm, ClassifierConfig, Samples, TrainedModel};
use crate::error::{Error, Result};
use crate::fingerprint::{
    detect_band_profile, filter_to_band, split_dataset, Band, BandProfile, Dataset, FeatureSpace,
    Fingerprint, LocationId, RadioRegistry, SplitIndices, SplitRatios, DEFAULT_SENTINEL_DBM,
};
use crate::seed;

pub use youden::{sensitivity, specificity, weighted_scores, youden, YoudenMatrix};

/// Version tag written into serialized bundles.
pub const BUNDLE_FORMAT_VERSION: u32 = 1;

/// Seed stream for model fitting, kept apart from the split stream.
const FIT_STREAM: u64 = 0x6d6f_6465_6c73;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    /// dBm value for radios a scan did not hear.
    pub sentinel: f64,
    pub ratios: SplitRatios,
    /// Drop negative J weights from the score sum.
    pub clamp_negative_youden: bool,
    pub algorithms: Vec<Algorithm>,
    pub classifiers: ClassifierConfig,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            sentinel: DEFAULT_SENTINEL_DBM,
            ratios: SplitRatios::default(),
            clamp_negative_youden: true,
            algorithms: Algorithm::ALL.to_vec(),
            classifiers: ClassifierConfig::default(),
        }
    }
}

impl EnsembleConfig {
    /// Default ensemble with the quick classifier settings.
    pub fn fast() -> Self {
        EnsembleConfig {
            classifiers: ClassifierConfig::fast(),
            ..EnsembleConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ratios.validate()?;
        if self.algorithms.is_empty() {
            return Err(Error::InvalidConfig("no algorithms selected".into()));
        }
        let mut seen = self.algorithms.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.algorithms.len() {
            return Err(Error::InvalidConfig("algorithm listed twice".into()));
        }
        Ok(())
    }
}

/// Combined scores per location, in ascending location order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationScores {
    pub locations: Vec<LocationId>,
    pub scores: Vec<f64>,
}

impl LocationScores {
    /// Highest score; ties go to the lowest location id.
    pub fn argmax(&self) -> LocationId {
        self.locations[classifiers::argmax(&self.scores)]
    }

    pub fn get(&self, location: LocationId) -> Option<f64> {
        let i = self.locations.iter().position(|l| *l == location)?;
        Some(self.scores[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAccuracy {
    pub algorithm: Algorithm,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub seed: u64,
    /// Content digest of the dataset the split indices refer to.
    pub dataset_digest: String,
    pub split: SplitIndices,
    pub validation_accuracy: Vec<ModelAccuracy>,
    pub meta_validation_accuracy: f64,
}

/// Six fitted models sharing one feature space, plus their Youden
/// weights. Immutable once trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaLearner {
    band_profile: BandProfile,
    feature_space: FeatureSpace,
    locations: Vec<LocationId>,
    models: Vec<TrainedModel>,
    youden: YoudenMatrix,
    clamp_negative_youden: bool,
    report: TrainingReport,
}

/// Feature rows and labels of `indices`, vectorized against `space`.
pub fn samples_for(ds: &Dataset, space: &FeatureSpace, indices: &[usize]) -> Result<Samples> {
    let rows: Vec<Vec<f64>> = indices
        .iter()
        .map(|&i| space.vectorize(&ds.fingerprints()[i]).0)
        .collect();
    let labels: Vec<LocationId> = indices.iter().map(|&i| ds.label(i)).collect();
    Samples::new(&rows, &labels)
}

fn check_band(ds: &Dataset, band: BandProfile) -> Result<()> {
    let bands = ds.registry().bands();
    match band {
        BandProfile::DualBand if !(bands.contains(&Band::Band24) && bands.contains(&Band::Band5)) => {
            Err(Error::SingleBand)
        }
        BandProfile::Band24Only if bands.contains(&Band::Band5) => Err(Error::NotBandFiltered),
        _ => Ok(()),
    }
}

/// Splits `ds`, fits every configured model on the training part and
/// weights them by Youden's J on the validation part.
pub fn train_meta(ds: &Dataset, band: BandProfile, config: &EnsembleConfig, seed: u64) -> Result<MetaLearner> {
    config.validate()?;
    check_band(ds, band)?;
    let space = FeatureSpace::canonical(ds, config.sentinel)?;
    let split = split_dataset(ds, config.ratios, seed)?;
    let train = samples_for(ds, &space, &split.train)?;
    let fit_seed = seed::derive_seed(seed, FIT_STREAM);
    let models: Vec<TrainedModel> = config
        .algorithms
        .par_iter()
        .map(|a| classifiers::fit(*a, &config.classifiers, &train, fit_seed))
        .collect::<Result<_>>()?;

    let rows: Vec<Vec<f64>> = split
        .validation
        .iter()
        .map(|&i| space.vectorize(&ds.fingerprints()[i]).0)
        .collect();
    let labels: Vec<LocationId> = split.validation.iter().map(|&i| ds.label(i)).collect();
    let predictions: Vec<Vec<LocationId>> = models
        .par_iter()
        .map(|m| rows.iter().map(|x| m.predict(x)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let locations = train.labels().to_vec();
    let youden = YoudenMatrix::compute(&config.algorithms, &predictions, &labels, &locations)?;

    let accuracy = |preds: &[LocationId]| {
        preds.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64 / labels.len().max(1) as f64
    };
    let validation_accuracy = config
        .algorithms
        .iter()
        .zip(&predictions)
        .map(|(a, p)| ModelAccuracy {
            algorithm: *a,
            accuracy: accuracy(p),
        })
        .collect();
    let mut meta = MetaLearner {
        band_profile: band,
        feature_space: space,
        locations,
        models,
        youden,
        clamp_negative_youden: config.clamp_negative_youden,
        report: TrainingReport {
            seed,
            dataset_digest: ds.content_digest(),
            split,
            validation_accuracy,
            meta_validation_accuracy: 0.0,
        },
    };
    let meta_preds: Vec<LocationId> = rows
        .iter()
        .map(|x| meta.score(x).map(|s| s.argmax()))
        .collect::<Result<_>>()?;
    meta.report.meta_validation_accuracy = accuracy(&meta_preds);
    log::info!(
        "trained {} meta-learner on {} rows, validation accuracy {:.4}",
        band,
        meta.report.split.train.len(),
        meta.report.meta_validation_accuracy
    );
    Ok(meta)
}

impl MetaLearner {
    pub fn band_profile(&self) -> BandProfile {
        self.band_profile
    }

    pub fn feature_space(&self) -> &FeatureSpace {
        &self.feature_space
    }

    pub fn locations(&self) -> &[LocationId] {
        &self.locations
    }

    pub fn models(&self) -> &[TrainedModel] {
        &self.models
    }

    pub fn youden(&self) -> &YoudenMatrix {
        &self.youden
    }

    pub fn clamps_negative_youden(&self) -> bool {
        self.clamp_negative_youden
    }

    pub fn report(&self) -> &TrainingReport {
        &self.report
    }

    /// Q score of every location for a vector in this feature space.
    pub fn score(&self, x: &[f64]) -> Result<LocationScores> {
        let probs: Vec<Vec<f64>> = self
            .models
            .iter()
            .map(|m| {
                let d = m.predict_proba(x)?;
                Ok(self.locations.iter().map(|l| d.get(*l)).collect())
            })
            .collect::<Result<_>>()?;
        let scores = weighted_scores(self.youden.rows(), &probs, self.clamp_negative_youden)?;
        Ok(LocationScores {
            locations: self.locations.clone(),
            scores,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<LocationId> {
        Ok(self.score(x)?.argmax())
    }

    /// Scores a fingerprint after encoding it in this feature space.
    pub fn score_fingerprint(&self, fp: &Fingerprint) -> Result<LocationScores> {
        self.score(&self.feature_space.vectorize(fp).0)
    }

    /// Share of `indices` in `ds` predicted correctly.
    pub fn accuracy_on(&self, ds: &Dataset, indices: &[usize]) -> Result<f64> {
        if indices.is_empty() {
            return Err(Error::EmptyResult);
        }
        let mut hits = 0usize;
        for &i in indices {
            hits += usize::from(self.score_fingerprint(&ds.fingerprints()[i])?.argmax() == ds.label(i));
        }
        Ok(hits as f64 / indices.len() as f64)
    }

    /// Same learner scoring with or without the negative-weight clamp.
    pub fn with_clamp(mut self, clamp: bool) -> Self {
        self.clamp_negative_youden = clamp;
        self
    }
}

/// Result of localizing one scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub location: LocationId,
    /// Which meta-learner answered.
    pub profile: BandProfile,
    pub scores: LocationScores,
    /// Readings from radios outside the model's feature space.
    pub ignored_readings: usize,
}

/// A dual-band meta-learner and a 2.4 GHz-only one trained on the same
/// data, plus what is needed to route scans between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizerBundle {
    pub format_version: u32,
    pub seed: u64,
    pub config: EnsembleConfig,
    pub registry: RadioRegistry,
    pub dual: MetaLearner,
    pub only24: MetaLearner,
}

/// Trains the dual-band learner on `ds` and the 2.4 GHz-only learner on
/// its 2.4 GHz readings, both with `seed`.
pub fn train_bundle(ds: &Dataset, config: &EnsembleConfig, seed: u64) -> Result<LocalizerBundle> {
    check_band(ds, BandProfile::DualBand)?;
    let dual = train_meta(ds, BandProfile::DualBand, config, seed)?;
    let pruned = filter_to_band(ds, Band::Band24)?;
    if pruned.dropped > 0 {
        log::warn!("{} scans have no 2.4 GHz readings and are left out of the 2.4 GHz model", pruned.dropped);
    }
    let only24 = train_meta(&pruned.dataset, BandProfile::Band24Only, config, seed)?;
    Ok(LocalizerBundle {
        format_version: BUNDLE_FORMAT_VERSION,
        seed,
        config: config.clone(),
        registry: ds.registry().clone(),
        dual,
        only24,
    })
}

impl LocalizerBundle {
    pub fn meta(&self, profile: BandProfile) -> &MetaLearner {
        match profile {
            BandProfile::DualBand => &self.dual,
            BandProfile::Band24Only => &self.only24,
        }
    }

    /// Detects the scan's band profile and asks the matching learner.
    pub fn localize(&self, fp: &Fingerprint) -> Result<Localization> {
        let profile = detect_band_profile(fp, &self.registry)?;
        let meta = self.meta(profile);
        let encoded = meta.feature_space.vectorize_counted(fp);
        let scores = meta.score(&encoded.vector.0)?;
        Ok(Localization {
            location: scores.argmax(),
            profile,
            scores,
            ignored_readings: encoded.unknown,
        })
    }

    pub fn locations(&self) -> &[LocationId] {
        self.dual.locations()
    }

    pub fn to_writer(&self, writer: impl Write) -> Result<()> {
        serde_json::to_writer(writer, self)?;
        Ok(())
    }

    pub fn from_reader(reader: impl std::io::Read) -> Result<Self> {
        let bundle: LocalizerBundle = serde_json::from_reader(reader)?;
        if bundle.format_version != BUNDLE_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported bundle format version {}",
                bundle.format_version
            )));
        }
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.to_writer(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_reader(BufReader::new(File::open(path)?))
    }
}
