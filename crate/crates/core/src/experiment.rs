//! The augmentation comparison: prepared data, the five training modes,
//! GAN balancing and FID evaluation with classifier features.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::AudioClip;
use crate::augment::{spec_augment, PitchPolicy, SpecAugmentPolicy, StretchPolicy};
use crate::classifier::{train_classifier, Augmenter, Classifier, LabeledSpec, TrainedClassifier};
use crate::config::ExperimentConfig;
use crate::dataset::{balance_with_gan, simulate_imbalance, split, Corpus, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::eval::{fid_from_stats, FidStats, MetricsReport};
use crate::features::{ConditioningVector, MelSpectrogram};
use crate::gan::{resample_conditions, GanData, GanTrainer};
use crate::pipeline::{db_spectrogram, extract_all, load_features, save_features, ExampleFeatures, FeatureStats};
use crate::rng::derive_seed;

const STREAM_POOL: u64 = 20;
const STREAM_FID: u64 = 21;
/// Generated spectrograms held in memory at once during FID evaluation.
const FID_CHUNK: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentMode {
    None,
    SpecAugment,
    Stretch,
    Pitch,
    Gan,
}

impl AugmentMode {
    pub const ALL: [AugmentMode; 5] =
        [AugmentMode::None, AugmentMode::SpecAugment, AugmentMode::Stretch, AugmentMode::Pitch, AugmentMode::Gan];

    pub fn name(self) -> &'static str {
        match self {
            AugmentMode::None => "none",
            AugmentMode::SpecAugment => "specaugment",
            AugmentMode::Stretch => "stretch",
            AugmentMode::Pitch => "pitch",
            AugmentMode::Gan => "gan",
        }
    }

    /// Row label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            AugmentMode::None => "No-aug (baseline)",
            AugmentMode::SpecAugment => "SpecAugment",
            AugmentMode::Stretch => "Time-stretch",
            AugmentMode::Pitch => "Pitch-shift",
            AugmentMode::Gan => "Proposed GAN",
        }
    }
}

impl fmt::Display for AugmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugmentMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown augmentation mode `{s}`")))
    }
}

/// A split, imbalanced manifest with the features of every example.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub manifest: DatasetManifest,
    pub features: Vec<ExampleFeatures>,
    pub stats: FeatureStats,
}

impl Prepared {
    /// Fits normalisation on the real training examples.
    pub fn new(manifest: DatasetManifest, features: Vec<ExampleFeatures>) -> Result<Self> {
        if manifest.examples.len() != features.len() {
            return Err(Error::Shape(format!(
                "{} manifest entries but {} feature records",
                manifest.examples.len(),
                features.len()
            )));
        }
        let train: Vec<&ExampleFeatures> = manifest
            .examples
            .iter()
            .zip(&features)
            .filter(|(e, _)| e.split == Some(Split::Train) && !e.synthetic)
            .map(|(_, f)| f)
            .collect();
        let stats = FeatureStats::fit(&train)?;
        Ok(Prepared { manifest, features, stats })
    }

    /// Splits, drops minority training examples, and extracts features.
    /// Returns the corpus restricted to the retained examples as well.
    pub fn from_corpus(corpus: &Corpus, cfg: &ExperimentConfig) -> Result<(Prepared, Corpus)> {
        let d = &cfg.dataset;
        let m = split(&corpus.manifest, d.split, cfg.seed)?;
        let m = simulate_imbalance(&m, &d.minority_class, d.drop_fraction, cfg.seed)?;
        let kept = corpus.with_manifest(m)?;
        let features = extract_all(&kept.clips, &cfg.dsp)?;
        Ok((Prepared::new(kept.manifest.clone(), features)?, kept))
    }

    pub fn indices(&self, split: Split, class: Option<&str>) -> Vec<usize> {
        self.manifest
            .examples
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == Some(split) && class.is_none_or(|c| e.label == c))
            .map(|(i, _)| i)
            .collect()
    }

    fn labeled_at(&self, idx: &[usize]) -> Result<Vec<LabeledSpec>> {
        idx.iter()
            .map(|&i| {
                let e = &self.manifest.examples[i];
                Ok(LabeledSpec {
                    spec: self.stats.classifier_input(&self.features[i].db)?.with_source(e.id.clone()),
                    label: self.manifest.class_index(&e.label)?,
                })
            })
            .collect()
    }

    /// Classifier inputs of one split, in manifest order.
    pub fn labeled(&self, split: Split) -> Result<Vec<LabeledSpec>> {
        self.labeled_at(&self.indices(split, None))
    }

    /// Classifier inputs of one class across all splits.
    pub fn class_inputs(&self, class: &str) -> Result<Vec<MelSpectrogram>> {
        let idx: Vec<usize> = (0..self.manifest.examples.len())
            .filter(|&i| self.manifest.examples[i].label == class)
            .collect();
        Ok(self.labeled_at(&idx)?.into_iter().map(|l| l.spec).collect())
    }

    pub fn conditions(&self, split: Split, class: &str) -> Result<Vec<ConditioningVector>> {
        self.indices(split, Some(class)).iter().map(|&i| self.stats.conditioning(&self.features[i])).collect()
    }

    /// GAN training pairs: the class's training spectrograms (norm_pm1)
    /// with their conditioning vectors.
    pub fn gan_data(&self, class: &str) -> Result<GanData> {
        let idx = self.indices(Split::Train, Some(class));
        if idx.is_empty() {
            return Err(Error::invalid(format!("class `{class}` has no training examples")));
        }
        let specs = idx.iter().map(|&i| self.stats.gan_target(&self.features[i].db)).collect::<Result<Vec<_>>>()?;
        GanData::new(&specs, &self.conditions(Split::Train, class)?)
    }

    /// Minority training count after balancing: the configured target, or
    /// the largest other class's training count.
    pub fn balance_target(&self, cfg: &ExperimentConfig) -> usize {
        let minority = &cfg.dataset.minority_class;
        cfg.dataset.balance_target.unwrap_or_else(|| {
            self.manifest
                .class_names
                .iter()
                .filter(|c| *c != minority)
                .map(|c| self.indices(Split::Train, Some(c)).len())
                .max()
                .unwrap_or(0)
        })
    }

    /// Hash of the test split's ids and labels.
    pub fn test_hash(&self) -> String {
        let mut h = Sha256::new();
        for i in self.indices(Split::Test, None) {
            let e = &self.manifest.examples[i];
            h.update(format!("{}\t{}\n", e.id, e.label).as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Writes `manifest.jsonl`, `stats.json` and `features/`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.manifest.save(&dir.join("manifest.jsonl"))?;
        let stats_path = dir.join("stats.json");
        let text = serde_json::to_string_pretty(&self.stats).map_err(|e| Error::Json { path: stats_path.clone(), source: e })?;
        fs::write(&stats_path, text).map_err(|e| Error::io(&stats_path, e))?;
        save_features(&dir.join("features"), &self.features)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(&dir.join("manifest.jsonl"))?;
        let stats_path = dir.join("stats.json");
        let text = fs::read_to_string(&stats_path).map_err(|e| Error::io(&stats_path, e))?;
        let stats: FeatureStats = serde_json::from_str(&text).map_err(|e| Error::Json { path: stats_path, source: e })?;
        let features = load_features(&dir.join("features"))?;
        if features.len() != manifest.examples.len() {
            return Err(Error::Shape("feature archive does not match the manifest".into()));
        }
        Ok(Prepared { manifest, features, stats })
    }
}

/// Masks applied to minority spectrograms.
pub struct SpecAugmenter(pub SpecAugmentPolicy);

impl Augmenter for SpecAugmenter {
    fn augment(&self, _index: usize, example: &LabeledSpec, seed: u64) -> Result<MelSpectrogram> {
        spec_augment(&example.spec, &self.0, seed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AudioTransform {
    Stretch(StretchPolicy),
    Pitch(PitchPolicy),
}

/// Waveform transforms on minority audio, re-featurised on the fly.
/// `clips[i]` is the audio of training example `i` (only the augmented
/// class needs entries).
pub struct AudioAugmenter {
    pub transform: AudioTransform,
    pub clips: Vec<Option<AudioClip>>,
    pub stats: FeatureStats,
}

impl Augmenter for AudioAugmenter {
    fn augment(&self, index: usize, _example: &LabeledSpec, seed: u64) -> Result<MelSpectrogram> {
        let clip = self
            .clips
            .get(index)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::Prerequisite(format!("no audio for training example {index}")))?;
        let out = match self.transform {
            AudioTransform::Stretch(p) => p.apply(clip, seed)?,
            AudioTransform::Pitch(p) => p.apply(clip, seed)?,
        };
        self.stats.classifier_input(&db_spectrogram(&out)?)
    }
}

/// Generated minority examples (norm_01) bringing the class up to its
/// balance target.
pub fn synthetic_pool(trainer: &GanTrainer, prepared: &Prepared, cfg: &ExperimentConfig, seed: u64) -> Result<Vec<MelSpectrogram>> {
    let class = &cfg.dataset.minority_class;
    let pool = prepared.conditions(Split::Train, class)?;
    let current = prepared.indices(Split::Train, Some(class)).len();
    let target = prepared.balance_target(cfg).max(current);
    let generated = balance_with_gan(trainer, &pool, current, target, cfg.dataset.condition_jitter, seed)?;
    generated.iter().map(|s| prepared.stats.generated_to_classifier(s)).collect()
}

/// Everything a training mode may need besides the prepared features.
#[derive(Default)]
pub struct ModeInputs<'a> {
    /// Audio aligned with `prepared.manifest.examples` (stretch, pitch).
    pub audio: Option<&'a [AudioClip]>,
    /// Trained generator (gan).
    pub gan: Option<&'a GanTrainer>,
}

#[derive(Clone, Debug)]
pub struct ModeOutcome {
    pub mode: AugmentMode,
    pub trained: TrainedClassifier,
    pub test: MetricsReport,
    pub test_hash: String,
    pub synthetic: usize,
}

/// Trains the classifier under one augmentation mode and evaluates it on
/// the test split.
pub fn run_mode(prepared: &Prepared, cfg: &ExperimentConfig, mode: AugmentMode, inputs: &ModeInputs) -> Result<ModeOutcome> {
    let class = &cfg.dataset.minority_class;
    let minority = prepared.manifest.class_index(class)?;
    let train_idx = prepared.indices(Split::Train, None);
    let mut train = prepared.labeled(Split::Train)?;
    let val = prepared.labeled(Split::Val)?;
    let test = prepared.labeled(Split::Test)?;
    if test.is_empty() {
        return Err(Error::invalid("the test split is empty"));
    }
    let names = &prepared.manifest.class_names;
    let mut synthetic = 0;
    let spec_aug;
    let audio_aug;
    let augmenter: Option<(&dyn Augmenter, usize)> = match mode {
        AugmentMode::None => None,
        AugmentMode::SpecAugment => {
            spec_aug = SpecAugmenter(cfg.augment.spec);
            Some((&spec_aug, minority))
        }
        AugmentMode::Stretch | AugmentMode::Pitch => {
            let audio = inputs
                .audio
                .ok_or_else(|| Error::Prerequisite(format!("mode {mode} needs the prepared audio")))?;
            if audio.len() != prepared.manifest.examples.len() {
                return Err(Error::Shape("audio does not match the manifest".into()));
            }
            let clips = train_idx
                .iter()
                .map(|&i| (prepared.manifest.examples[i].label == *class).then(|| audio[i].clone()))
                .collect();
            let transform = match mode {
                AugmentMode::Stretch => AudioTransform::Stretch(cfg.augment.stretch),
                _ => AudioTransform::Pitch(cfg.augment.pitch),
            };
            audio_aug = AudioAugmenter { transform, clips, stats: prepared.stats.clone() };
            Some((&audio_aug, minority))
        }
        AugmentMode::Gan => {
            let gan = inputs
                .gan
                .ok_or_else(|| Error::Prerequisite("mode gan needs a trained GAN checkpoint".into()))?;
            let pool = synthetic_pool(gan, prepared, cfg, derive_seed(cfg.classifier.seed, &[STREAM_POOL]))?;
            synthetic = pool.len();
            train.extend(pool.into_iter().map(|spec| LabeledSpec { spec, label: minority }));
            None
        }
    };
    let trained = train_classifier(&train, &val, names, &cfg.classifier, augmenter)?;
    let report = trained.model.evaluate(&test)?;
    Ok(ModeOutcome { mode, trained, test: report, test_hash: prepared.test_hash(), synthetic })
}

/// Metrics record written per mode: the metrics plus run context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub mode: AugmentMode,
    pub test_hash: String,
    pub n_test: usize,
    pub synthetic: usize,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

impl EvalRecord {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })
}

/// Fixed generation setup shared by every FID evaluation of a run.
pub struct FidProbe<'a> {
    pub extractor: &'a Classifier,
    pub reference: FidStats,
    pub conditions: &'a [ConditioningVector],
    pub stats: &'a FeatureStats,
    pub jitter: f64,
    pub seed: u64,
}

impl<'a> FidProbe<'a> {
    /// Reference statistics from classifier features of `real` (norm_01).
    pub fn new(
        extractor: &'a Classifier,
        real: &[MelSpectrogram],
        conditions: &'a [ConditioningVector],
        stats: &'a FeatureStats,
        jitter: f64,
        seed: u64,
    ) -> Result<Self> {
        let reference = FidStats::from_features(&extractor.extract_features(real)?)?;
        Ok(FidProbe { extractor, reference, conditions, stats, jitter, seed })
    }

    /// Features of `n` generated samples, drawn with the probe's seed so
    /// every checkpoint sees the same conditions and noise.
    pub fn generated_features(&self, trainer: &GanTrainer, n: usize) -> Result<Vec<Vec<f64>>> {
        let conds = resample_conditions(self.conditions, n, self.jitter, derive_seed(self.seed, &[STREAM_FID, 0]))?;
        let mut out = Vec::with_capacity(n);
        for (k, chunk) in conds.chunks(FID_CHUNK).enumerate() {
            let specs = trainer.sample(chunk, derive_seed(self.seed, &[STREAM_FID, 1, k as u64]))?;
            let inputs = specs.iter().map(|s| self.stats.generated_to_classifier(s)).collect::<Result<Vec<_>>>()?;
            out.extend(self.extractor.extract_features(&inputs)?);
        }
        Ok(out)
    }

    pub fn fid(&self, trainer: &GanTrainer, n: usize) -> Result<f64> {
        let gen = FidStats::from_features(&self.generated_features(trainer, n)?)?;
        fid_from_stats(&self.reference, &gen)
    }

    /// FID of each checkpoint directory, in the given order.
    pub fn trend(&self, checkpoints: &[(u64, PathBuf)], n: usize) -> Result<Vec<(u64, f64)>> {
        if checkpoints.is_empty() {
            return Err(Error::Prerequisite("no GAN checkpoints to evaluate".into()));
        }
        checkpoints
            .iter()
            .map(|(it, dir)| {
                let fid = self.fid(&GanTrainer::load(dir)?, n)?;
                log::info!("fid at iteration {it}: {fid:.4}");
                Ok((*it, fid))
            })
            .collect()
    }
}

pub const TREND_HEADER: &str = "iteration,fid";

pub fn write_trend(path: &Path, rows: &[(u64, f64)]) -> Result<()> {
    let mut text = format!("{TREND_HEADER}\n");
    for (it, fid) in rows {
        text.push_str(&format!("{it},{fid:e}\n"));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_trend(path: &Path) -> Result<Vec<(u64, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, detail: String| Error::Parse { path: path.to_path_buf(), line, detail };
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let (a, b) = l.split_once(',').ok_or_else(|| bad(i + 1, "expected two columns".into()))?;
            Ok((
                a.trim().parse().map_err(|e| bad(i + 1, format!("{e}")))?,
                b.trim().parse().map_err(|e| bad(i + 1, format!("{e}")))?,
            ))
        })
        .collect()
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_toy_corpus, ToyCorpusConfig};

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.dataset.toy = ToyCorpusConfig { counts: vec![10, 10, 10], duration: 2.1, ..ToyCorpusConfig::default() };
        cfg.dataset.split = crate::dataset::SplitRatios { train: 0.6, val: 0.2, test: 0.2 };
        cfg.dataset.drop_fraction = 0.5;
        cfg
    }

    #[test]
    fn modes_parse_by_name() {
        for m in AugmentMode::ALL {
            assert_eq!(m.name().parse::<AugmentMode>().unwrap(), m);
        }
        assert!("mixup".parse::<AugmentMode>().is_err());
    }

    #[test]
    fn preparation_reduces_only_the_minority_training_split() {
        let cfg = tiny_config();
        let corpus = synth_toy_corpus(&cfg.dataset.toy, 1).unwrap();
        let (prep, kept) = Prepared::from_corpus(&corpus, &cfg).unwrap();
        assert_eq!(kept.clips.len(), prep.features.len());
        assert_eq!(prep.indices(Split::Train, Some("english")).len(), 6);
        assert_eq!(prep.indices(Split::Train, Some("hindi-english")).len(), 3);
        assert_eq!(prep.indices(Split::Test, Some("hindi-english")).len(), 2);
        assert_eq!(prep.balance_target(&cfg), 6);
        let data = prep.gan_data("hindi-english").unwrap();
        assert_eq!(data.len(), 3);
        let dir = tempfile::tempdir().unwrap();
        prep.save(dir.path()).unwrap();
        let back = Prepared::load(dir.path()).unwrap();
        assert_eq!(back, prep);
        assert_eq!(back.test_hash(), prep.test_hash());
    }

    #[test]
    fn gan_mode_without_checkpoint_is_a_prerequisite_error() {
        let cfg = tiny_config();
        let corpus = synth_toy_corpus(&cfg.dataset.toy, 1).unwrap();
        let (prep, _) = Prepared::from_corpus(&corpus, &cfg).unwrap();
        for mode in [AugmentMode::Gan, AugmentMode::Stretch] {
            let err = run_mode(&prep, &cfg, mode, &ModeInputs::default()).unwrap_err();
            assert!(matches!(err, Error::Prerequisite(_)), "{err}");
        }
    }

    #[test]
    fn trend_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trend.csv");
        let rows = vec![(0, 12.5), (250, 3.25), (500, 0.1 + 0.2)];
        write_trend(&path, &rows).unwrap();
        assert_eq!(read_trend(&path).unwrap(), rows);
    }

    #[test]
    fn median_of_odd_and_even_lengths() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }
}
