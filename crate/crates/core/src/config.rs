//! Experiment configuration, read from TOML. Every section and key is
//! optional; omitted keys take the defaults documented on each field.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{PitchPolicy, SpecAugmentPolicy, StretchPolicy};
use crate::classifier::ClassifierConfig;
use crate::dataset::{AssembleConfig, SourceSpec, SplitRatios, ToyCorpusConfig, MINORITY_CLASS};
use crate::error::{Error, Result};
use crate::gan::GanConfig;
use crate::pipeline::DspConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// Generate the synthetic three-class corpus.
    Toy,
    /// Read the directories listed in `dataset.sources`.
    Files,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// `toy` (default) or `files`.
    pub source: DataSource,
    pub toy: ToyCorpusConfig,
    pub sources: Vec<SourceSpec>,
    pub assemble: AssembleConfig,
    /// Per-class split fractions; default 0.64 / 0.16 / 0.20 (an 80/20
    /// train/validation split of the 80% not held out for testing).
    pub split: SplitRatios,
    /// Class made scarce and augmented; default `hindi-english`.
    pub minority_class: String,
    /// Fraction of the minority training examples removed; default 0.8.
    pub drop_fraction: f64,
    /// Minority training count after GAN balancing; default (absent) is
    /// the largest other class's training count.
    pub balance_target: Option<usize>,
    /// Half-width of the uniform jitter added to resampled conditions;
    /// default 0.05.
    pub condition_jitter: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            source: DataSource::Toy,
            toy: ToyCorpusConfig::default(),
            sources: Vec::new(),
            assemble: AssembleConfig::default(),
            split: SplitRatios { train: 0.64, val: 0.16, test: 0.2 },
            minority_class: MINORITY_CLASS.to_string(),
            drop_fraction: 0.8,
            balance_target: None,
            condition_jitter: 0.05,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Masking: F = 13, T = 20, one mask of each kind.
    pub spec: SpecAugmentPolicy,
    /// Stretch rate range, default [0.5, 1.5).
    pub stretch: StretchPolicy,
    /// Semitone shift range, default [-4, 4].
    pub pitch: PitchPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Generated-sample counts of the FID table; default 500, 1000, 2000, 2400.
    pub fid_sample_sizes: Vec<usize>,
    /// Generated samples per checkpoint for the FID trend; default 500.
    pub fid_trend_samples: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig { fid_sample_sizes: vec![500, 1000, 2000, 2400], fid_trend_samples: 500 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds data generation, splitting and imbalance simulation.
    pub seed: u64,
    /// Root of every artifact the commands write; default `runs/default`.
    pub output: PathBuf,
    pub dataset: DatasetConfig,
    pub dsp: DspConfig,
    pub augment: AugmentConfig,
    pub gan: GanConfig,
    pub classifier: ClassifierConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output: PathBuf::from("runs/default"),
            dataset: DatasetConfig::default(),
            dsp: DspConfig::default(),
            augment: AugmentConfig::default(),
            gan: GanConfig::default(),
            classifier: ClassifierConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Sets the experiment, GAN and classifier seeds at once.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.gan.seed = seed;
        self.classifier.seed = seed;
    }

    /// Checks every section; any failure is reported as a configuration error.
    pub fn validate(&self) -> Result<()> {
        let checks = [
            self.dsp.validate(),
            self.augment.spec.validate(),
            self.augment.stretch.validate(),
            self.augment.pitch.validate(),
            self.gan.validate(),
            self.classifier.validate(),
            self.dataset.split.validate(),
        ];
        for check in checks {
            check.map_err(|e| Error::Config(e.to_string()))?;
        }
        let d = &self.dataset;
        if !crate::dataset::CLASS_NAMES.contains(&d.minority_class.as_str()) {
            return Err(Error::Config(format!("unknown minority class `{}`", d.minority_class)));
        }
        if !(0.0..1.0).contains(&d.drop_fraction) {
            return Err(Error::Config(format!("drop_fraction {} outside [0, 1)", d.drop_fraction)));
        }
        if !(0.0..=1.0).contains(&d.condition_jitter) {
            return Err(Error::Config("condition_jitter must lie in [0, 1]".into()));
        }
        if d.source == DataSource::Files && d.sources.is_empty() {
            return Err(Error::Config("dataset.source = \"files\" needs at least one [[dataset.sources]] entry".into()));
        }
        if self.classifier.model.n_classes != crate::dataset::CLASS_NAMES.len() {
            return Err(Error::Config("classifier.model.n_classes must be 3".into()));
        }
        let e = &self.evaluation;
        if e.fid_sample_sizes.iter().any(|&n| n < 2) || e.fid_trend_samples < 2 {
            return Err(Error::Config("FID sample sizes must be at least 2".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_documented_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.gan.lambda_gp, 10.0);
        assert_eq!(cfg.gan.learning_rate, 1e-4);
        assert_eq!(cfg.gan.batch_size, 8);
        assert_eq!(cfg.gan.total_iterations, 150_000);
        assert_eq!(cfg.classifier.learning_rate, 1e-5);
        assert_eq!(cfg.classifier.max_epochs, 30);
        assert_eq!((cfg.augment.spec.f, cfg.augment.spec.t), (13, 20));
        assert_eq!(cfg.dataset.drop_fraction, 0.8);
        assert_eq!(cfg.evaluation.fid_sample_sizes, vec![500, 1000, 2000, 2400]);
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn nested_keys_parse() {
        let text = r#"
            seed = 7
            output = "out"
            [dataset]
            drop_fraction = 0.5
            [dataset.toy]
            counts = [10, 10, 10]
            [augment.spec]
            F = 0
            T = 0
            n_freq_masks = 1
            n_time_masks = 1
            [gan]
            gen_channels = [8, 8, 4, 4, 4]
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.dataset.toy.counts, vec![10, 10, 10]);
        assert_eq!(cfg.augment.spec.f, 0);
        assert_eq!(cfg.gan.gen_channels, vec![8, 8, 4, 4, 4]);
        assert_eq!(cfg.gan.lambda_gp, 10.0);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        for text in ["colour = 1", "[gan]\nlambda = 3.0", "[dataset]\ndrop_fraction = 1.0", "[augment.spec]\nF = 200\nT = 0\nn_freq_masks = 1\nn_time_masks = 1"] {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn seed_override_reaches_every_stage() {
        let mut cfg = ExperimentConfig::default();
        cfg.override_seed(42);
        assert_eq!((cfg.seed, cfg.gan.seed, cfg.classifier.seed), (42, 42, 42));
    }
}
