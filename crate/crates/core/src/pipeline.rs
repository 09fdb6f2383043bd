//! Audio to model inputs: fixed-length clips, dB mel spectrograms and
//! semitone contours, with normalisation fitted on the training split.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use switchgan_tensor::io::{load_named, save_named};
use switchgan_tensor::par::map_collect;
use switchgan_tensor::Tensor;

use crate::audio::{crop_or_pad, AudioClip, CropMode};
use crate::error::{Error, Result};
use crate::features::{
    apply_minmax, fit_minmax, fit_semitone_stats, mel_spectrogram, normalize_f0, renormalize, semitone, to_db,
    AutocorrelationTracker, ConditioningVector, MelSpectrogram, NormStats, NormTarget, PitchTracker,
    SemitoneContour, SpecDomain, CLIP_SAMPLES, N_FRAMES, N_MELS,
};

/// Pitch-tracker settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DspConfig {
    pub f0_fmin: f64,
    pub f0_fmax: f64,
    pub voicing_threshold: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        let t = AutocorrelationTracker::default();
        DspConfig { f0_fmin: t.fmin, f0_fmax: t.fmax, voicing_threshold: t.voicing_threshold }
    }
}

impl DspConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.f0_fmin > 0.0 && self.f0_fmin < self.f0_fmax && (0.0..=1.0).contains(&self.voicing_threshold)) {
            return Err(Error::invalid("dsp needs 0 < f0_fmin < f0_fmax and voicing_threshold in [0, 1]"));
        }
        Ok(())
    }

    pub fn tracker(&self) -> AutocorrelationTracker {
        AutocorrelationTracker { fmin: self.f0_fmin, fmax: self.f0_fmax, voicing_threshold: self.voicing_threshold }
    }
}

/// Per-example features before normalisation.
#[derive(Clone, Debug, PartialEq)]
pub struct ExampleFeatures {
    pub db: MelSpectrogram,
    pub semitone: SemitoneContour,
}

/// Center crop or pad to the model's clip length.
pub fn model_clip(clip: &AudioClip) -> Result<AudioClip> {
    crop_or_pad(clip, CLIP_SAMPLES, CropMode::Center, 0)
}

pub fn db_spectrogram(clip: &AudioClip) -> Result<MelSpectrogram> {
    to_db(&mel_spectrogram(&model_clip(clip)?)?)
}

pub fn example_features(clip: &AudioClip, tracker: &dyn PitchTracker) -> Result<ExampleFeatures> {
    let clip = model_clip(clip)?;
    Ok(ExampleFeatures { db: to_db(&mel_spectrogram(&clip)?)?, semitone: semitone(&tracker.track(&clip)?)? })
}

/// Features of every clip, computed in parallel, returned in input order.
pub fn extract_all(clips: &[AudioClip], dsp: &DspConfig) -> Result<Vec<ExampleFeatures>> {
    dsp.validate()?;
    let tracker = dsp.tracker();
    map_collect(clips.len(), |i| example_features(&clips[i], &tracker)).into_iter().collect()
}

/// Normalisation statistics fitted on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    /// Min/max of the dB spectrograms.
    pub spec: NormStats,
    /// Min/max of voiced semitone values.
    pub semitone: NormStats,
}

impl FeatureStats {
    pub fn fit(features: &[&ExampleFeatures]) -> Result<Self> {
        let specs: Vec<MelSpectrogram> = features.iter().map(|f| f.db.clone()).collect();
        let contours: Vec<SemitoneContour> = features.iter().map(|f| f.semitone.clone()).collect();
        Ok(FeatureStats { spec: fit_minmax(&specs)?, semitone: fit_semitone_stats(&contours)? })
    }

    /// Classifier input (norm_01).
    pub fn classifier_input(&self, db: &MelSpectrogram) -> Result<MelSpectrogram> {
        apply_minmax(db, &self.spec, NormTarget::ZeroOne)
    }

    /// GAN target (norm_pm1).
    pub fn gan_target(&self, db: &MelSpectrogram) -> Result<MelSpectrogram> {
        apply_minmax(db, &self.spec, NormTarget::PlusMinusOne)
    }

    /// Generator output re-expressed as classifier input.
    pub fn generated_to_classifier(&self, spec: &MelSpectrogram) -> Result<MelSpectrogram> {
        if spec.domain() != SpecDomain::NormPm1 {
            return Err(Error::Domain { expected: SpecDomain::NormPm1.tag().into(), actual: spec.domain().tag().into() });
        }
        renormalize(spec, &self.spec, NormTarget::ZeroOne)
    }

    pub fn conditioning(&self, f: &ExampleFeatures) -> Result<ConditioningVector> {
        normalize_f0(&f.semitone, &self.semitone)
    }
}

/// Stores features as three blobs: `db` [n, 128, 128], `semitone` and
/// `voiced` [n, 128].
pub fn save_features(dir: &Path, features: &[ExampleFeatures]) -> Result<()> {
    let n = features.len();
    let mut db = Vec::with_capacity(n * N_MELS * N_FRAMES);
    let mut st = Vec::with_capacity(n * N_FRAMES);
    let mut voiced = Vec::with_capacity(n * N_FRAMES);
    for f in features {
        db.extend_from_slice(f.db.values());
        st.extend_from_slice(&f.semitone.values);
        voiced.extend(f.semitone.voiced.iter().map(|&v| if v { 1.0 } else { 0.0 }));
    }
    let items = BTreeMap::from([
        ("db".to_string(), Tensor::new(vec![n, N_MELS, N_FRAMES], db)),
        ("semitone".to_string(), Tensor::new(vec![n, N_FRAMES], st)),
        ("voiced".to_string(), Tensor::new(vec![n, N_FRAMES], voiced)),
    ]);
    Ok(save_named(dir, &items)?)
}

pub fn load_features(dir: &Path) -> Result<Vec<ExampleFeatures>> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut items = load_named(dir)?;
    let mut take = |name: &str| {
        items.remove(name).ok_or_else(|| Error::MissingFile(dir.join(format!("{name}.bin"))))
    };
    let (db, st, voiced) = (take("db")?, take("semitone")?, take("voiced")?);
    let n = db.shape().first().copied().unwrap_or(0);
    if db.shape() != [n, N_MELS, N_FRAMES] || st.shape() != [n, N_FRAMES] || voiced.shape() != [n, N_FRAMES] {
        return Err(Error::Shape(format!("inconsistent feature archive in {}", dir.display())));
    }
    (0..n)
        .map(|i| {
            let rows = i * N_FRAMES..(i + 1) * N_FRAMES;
            Ok(ExampleFeatures {
                db: MelSpectrogram::new(db.data()[i * N_MELS * N_FRAMES..(i + 1) * N_MELS * N_FRAMES].to_vec(), SpecDomain::Db)?,
                semitone: SemitoneContour {
                    values: st.data()[rows.clone()].to_vec(),
                    voiced: voiced.data()[rows].iter().map(|&v| v > 0.5).collect(),
                },
            })
        })
        .collect()
}
