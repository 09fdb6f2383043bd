//! Labelled manifests: assembly from audio sources or the synthetic toy
//! generator, stratified splitting, imbalance simulation and GAN balancing.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::{parse_segments, read_wav, resample, trim_silence, write_wav, AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::features::{ConditioningVector, MelSpectrogram};
use crate::gan::{resample_conditions, GanTrainer};
use crate::rng::{derive_seed, rng_for};

/// Class order used throughout; indices are positions in this list.
pub const CLASS_NAMES: [&str; 3] = ["english", "hindi", "hindi-english"];
/// The code-switched class, the one that is made scarce and augmented.
pub const MINORITY_CLASS: &str = "hindi-english";

pub fn default_class_names() -> Vec<String> {
    CLASS_NAMES.iter().map(|s| s.to_string()).collect()
}

const STREAM_SPLIT: u64 = 10;
const STREAM_IMBALANCE: u64 = 11;
const STREAM_TOY: u64 = 12;
const STREAM_KFOLD: u64 = 13;
const STREAM_BALANCE: u64 = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    /// Audio file; `None` while the clip only lives in memory.
    pub path: Option<PathBuf>,
    pub label: String,
    pub split: Option<Split>,
    pub duration: f64,
    #[serde(default)]
    pub synthetic: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ManifestHeader {
    class_names: Vec<String>,
    seed: u64,
    notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub seed: u64,
    pub notes: Vec<String>,
    pub examples: Vec<LabeledExample>,
}

impl DatasetManifest {
    pub fn new(class_names: Vec<String>, seed: u64) -> Self {
        DatasetManifest { class_names, seed, notes: Vec::new(), examples: Vec::new() }
    }

    pub fn class_index(&self, label: &str) -> Result<usize> {
        self.class_names
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.examples {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::invalid(format!("duplicate example id `{}`", e.id)));
            }
            self.class_index(&e.label)?;
        }
        Ok(())
    }

    pub fn count(&self, label: &str, split: Option<Split>) -> usize {
        self.examples.iter().filter(|e| e.label == label && e.split == split).count()
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &LabeledExample> {
        self.examples.iter().filter(move |e| e.split == Some(split))
    }

    /// JSON lines: a header record, then one record per example.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = ManifestHeader { class_names: self.class_names.clone(), seed: self.seed, notes: self.notes.clone() };
        let json_err = |source| Error::Json { path: path.to_path_buf(), source };
        let mut text = serde_json::to_string(&header).map_err(json_err)?;
        text.push('\n');
        for e in &self.examples {
            text.push_str(&serde_json::to_string(e).map_err(json_err)?);
            text.push('\n');
        }
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines().enumerate();
        let parse_err = |line: usize, detail: String| Error::Parse { path: path.to_path_buf(), line, detail };
        let (_, first) = lines.next().ok_or_else(|| parse_err(1, "missing header".into()))?;
        let first = first.map_err(|e| Error::io(path, e))?;
        let header: ManifestHeader = serde_json::from_str(&first).map_err(|e| parse_err(1, e.to_string()))?;
        let mut m = DatasetManifest {
            class_names: header.class_names,
            seed: header.seed,
            notes: header.notes,
            examples: Vec::new(),
        };
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            m.examples.push(serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?);
        }
        m.validate()?;
        Ok(m)
    }
}

/// A manifest with its audio held in memory, `clips[i]` belonging to
/// `manifest.examples[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub manifest: DatasetManifest,
    pub clips: Vec<AudioClip>,
}

impl Corpus {
    /// Writes every clip as `<base>/<subdir>/<id>.wav` and records the
    /// paths relative to `base`.
    pub fn write_audio(&mut self, base: &Path, subdir: &str) -> Result<()> {
        let dir = base.join(subdir);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (e, clip) in self.manifest.examples.iter_mut().zip(&self.clips) {
            let rel = Path::new(subdir).join(format!("{}.wav", e.id));
            write_wav(&base.join(&rel), clip)?;
            e.path = Some(rel);
        }
        Ok(())
    }

    /// Reads the audio referenced by a manifest; relative paths are
    /// resolved against `base`.
    pub fn load(manifest: DatasetManifest, base: &Path) -> Result<Self> {
        let clips = manifest
            .examples
            .iter()
            .map(|e| {
                let path = e
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::invalid(format!("example `{}` has no audio path", e.id)))?;
                read_wav(&base.join(path))
            })
            .collect::<Result<_>>()?;
        Ok(Corpus { manifest, clips })
    }

    /// Replaces the manifest, keeping the clips of the examples that remain.
    pub fn with_manifest(&self, manifest: DatasetManifest) -> Result<Corpus> {
        let by_id: BTreeMap<&str, &AudioClip> = self
            .manifest
            .examples
            .iter()
            .map(|e| e.id.as_str())
            .zip(&self.clips)
            .collect();
        let clips = manifest
            .examples
            .iter()
            .map(|e| {
                by_id
                    .get(e.id.as_str())
                    .map(|c| (*c).clone())
                    .ok_or_else(|| Error::invalid(format!("no audio for example `{}`", e.id)))
            })
            .collect::<Result<_>>()?;
        Ok(Corpus { manifest, clips })
    }
}

/// One labelled source: a directory of WAV files, or recordings in that
/// directory cut by a segments file (`<utt> <recording> <start> <end>`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub class: String,
    pub dir: PathBuf,
    #[serde(default)]
    pub segments: Option<PathBuf>,
    /// Examples from this source form the fixed test split.
    #[serde(default)]
    pub test: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssembleConfig {
    /// Leading/trailing frames quieter than this many dB below the peak
    /// frame are trimmed; `None` disables trimming.
    pub trim_db: Option<f64>,
}

impl Default for AssembleConfig {
    fn default() -> Self {
        AssembleConfig { trim_db: Some(40.0) }
    }
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

fn condition_clip(clip: AudioClip, cfg: &AssembleConfig) -> Result<AudioClip> {
    let clip = resample(&clip, SAMPLE_RATE)?;
    match cfg.trim_db {
        Some(db) => trim_silence(&clip, db),
        None => Ok(clip),
    }
}

/// Reads every source, converts to mono 16 kHz, trims silence and labels
/// the result. Example ids are `<class>-<stem>`.
pub fn assemble_dataset(sources: &[SourceSpec], cfg: &AssembleConfig, seed: u64) -> Result<Corpus> {
    let mut manifest = DatasetManifest::new(default_class_names(), seed);
    let mut clips = Vec::new();
    for src in sources {
        manifest.class_index(&src.class)?;
        let split = src.test.then_some(Split::Test);
        let mut push = |id: String, path: Option<PathBuf>, clip: AudioClip| {
            manifest.examples.push(LabeledExample {
                id,
                path,
                label: src.class.clone(),
                split,
                duration: clip.duration(),
                synthetic: false,
            });
            clips.push(clip);
        };
        match &src.segments {
            None => {
                for path in wav_files(&src.dir)? {
                    let stem = path.file_stem().unwrap_or_default().to_string_lossy().to_string();
                    let clip = condition_clip(read_wav(&path)?, cfg)?;
                    push(format!("{}-{stem}", src.class), Some(path), clip);
                }
            }
            Some(seg_path) => {
                let mut recordings: BTreeMap<String, AudioClip> = BTreeMap::new();
                for seg in parse_segments(seg_path)? {
                    if !recordings.contains_key(&seg.recording_id) {
                        let path = src.dir.join(format!("{}.wav", seg.recording_id));
                        let clip = resample(&read_wav(&path)?, SAMPLE_RATE)?;
                        recordings.insert(seg.recording_id.clone(), clip);
                    }
                    let piece = recordings[&seg.recording_id].slice_seconds(seg.start, seg.end);
                    let piece = match cfg.trim_db {
                        Some(db) => trim_silence(&piece, db)?,
                        None => piece,
                    };
                    push(format!("{}-{}", src.class, seg.utterance_id), None, piece);
                }
            }
        }
    }
    manifest.validate()?;
    Ok(Corpus { manifest, clips })
}

/// Fractions of each class assigned to train/val/test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("split ratios must be in [0, 1] and sum to 1"));
        }
        Ok(())
    }
}

/// Stratified assignment of split tags. Examples already tagged `test`
/// (an externally supplied test set) keep their tag and are not counted.
pub fn split(manifest: &DatasetManifest, ratios: SplitRatios, seed: u64) -> Result<DatasetManifest> {
    ratios.validate()?;
    let mut out = manifest.clone();
    for (ci, class) in manifest.class_names.iter().enumerate() {
        let mut idx: Vec<usize> = (0..out.examples.len())
            .filter(|&i| out.examples[i].label == *class && out.examples[i].split != Some(Split::Test))
            .collect();
        let n = idx.len();
        if n == 0 {
            continue;
        }
        let buckets = [ratios.train, ratios.val, ratios.test].iter().filter(|r| **r > 0.0).count();
        if n < buckets {
            return Err(Error::invalid(format!("class `{class}` has {n} examples for {buckets} splits")));
        }
        idx.shuffle(&mut rng_for(seed, &[STREAM_SPLIT, ci as u64]));
        let n_train = ((n as f64 * ratios.train).round() as usize).min(n);
        let n_val = ((n as f64 * ratios.val).round() as usize).min(n - n_train);
        for (k, &i) in idx.iter().enumerate() {
            out.examples[i].split = Some(if k < n_train {
                Split::Train
            } else if k < n_train + n_val || ratios.test == 0.0 {
                Split::Val
            } else {
                Split::Test
            });
        }
    }
    out.seed = seed;
    Ok(out)
}

/// `k` train/val partitions of the non-test examples; every such example
/// is in exactly one validation fold.
pub fn kfold(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<Vec<DatasetManifest>> {
    if k < 2 {
        return Err(Error::invalid("k-fold needs at least 2 folds"));
    }
    let mut fold_of = vec![None; manifest.examples.len()];
    for (ci, class) in manifest.class_names.iter().enumerate() {
        let mut idx: Vec<usize> = (0..manifest.examples.len())
            .filter(|&i| manifest.examples[i].label == *class && manifest.examples[i].split != Some(Split::Test))
            .collect();
        if !idx.is_empty() && idx.len() < k {
            return Err(Error::invalid(format!("class `{class}` has fewer than {k} examples")));
        }
        idx.shuffle(&mut rng_for(seed, &[STREAM_KFOLD, ci as u64]));
        for (pos, i) in idx.into_iter().enumerate() {
            fold_of[i] = Some(pos % k);
        }
    }
    Ok((0..k)
        .map(|f| {
            let mut m = manifest.clone();
            for (e, fold) in m.examples.iter_mut().zip(&fold_of) {
                if let Some(fold) = fold {
                    e.split = Some(if *fold == f { Split::Val } else { Split::Train });
                }
            }
            m
        })
        .collect())
}

/// Number of examples kept when dropping `fraction` of `n`.
pub fn retained_count(n: usize, drop_fraction: f64) -> usize {
    // The small slack keeps exact products such as 0.2 * 3135 from rounding up.
    (((1.0 - drop_fraction) * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Keeps a uniformly random `ceil((1 - drop_fraction) * n)` of the `n`
/// training examples of `class`; everything else is untouched.
pub fn simulate_imbalance(manifest: &DatasetManifest, class: &str, drop_fraction: f64, seed: u64) -> Result<DatasetManifest> {
    if !(0.0..1.0).contains(&drop_fraction) {
        return Err(Error::invalid(format!("drop fraction {drop_fraction} outside [0, 1)")));
    }
    manifest.class_index(class)?;
    let train: Vec<usize> = (0..manifest.examples.len())
        .filter(|&i| manifest.examples[i].label == class && manifest.examples[i].split == Some(Split::Train))
        .collect();
    if train.is_empty() {
        return Err(Error::invalid(format!("class `{class}` has no training examples")));
    }
    let keep = retained_count(train.len(), drop_fraction);
    let mut rng = rng_for(seed, &[STREAM_IMBALANCE]);
    let kept: BTreeSet<usize> = index::sample(&mut rng, train.len(), keep).into_iter().map(|k| train[k]).collect();
    let dropped: BTreeSet<usize> = train.into_iter().filter(|i| !kept.contains(i)).collect();
    let mut out = manifest.clone();
    out.examples = manifest
        .examples
        .iter()
        .enumerate()
        .filter(|(i, _)| !dropped.contains(i))
        .map(|(_, e)| e.clone())
        .collect();
    out.notes.push(format!("dropped {} of the {class} training examples (fraction {drop_fraction})", dropped.len()));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyCorpusConfig {
    /// Examples per class, in class order.
    pub counts: Vec<usize>,
    pub duration: f64,
    /// Standard deviation of the additive white noise (signal peak 0.5).
    pub noise: f64,
    /// Probability that a single-voice clip carries one short section of
    /// the other voice, which blurs the boundary to the alternating class.
    pub loan_prob: f64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        ToyCorpusConfig { counts: vec![600, 600, 600], duration: 2.1, noise: 0.01, loan_prob: 0.0 }
    }
}

/// Pitch band and amplitude-modulation rate range of one toy voice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyVoice {
    pub f0: (f64, f64),
    pub am_rate: (f64, f64),
}

/// Low-pitched, slowly modulated voice.
pub const VOICE_A: ToyVoice = ToyVoice { f0: (100.0, 150.0), am_rate: (2.0, 4.0) };
/// High-pitched, quickly modulated voice.
pub const VOICE_B: ToyVoice = ToyVoice { f0: (200.0, 300.0), am_rate: (8.0, 12.0) };
/// Section length range of the alternating class, in seconds.
pub const SECTION_S: (f64, f64) = (0.3, 0.5);
/// Length range of a borrowed section in a single-voice clip, in seconds.
pub const LOAN_S: (f64, f64) = (0.2, 0.4);

const HARMONICS: usize = 10;
const AM_DEPTH: f64 = 0.6;
const PEAK: f64 = 0.5;

/// Harmonic stack following `sections` of `(end_sample, voice)`.
fn render<R: Rng>(n: usize, sections: &[(usize, ToyVoice)], noise: f64, rng: &mut R) -> Vec<f32> {
    let sr = SAMPLE_RATE as f64;
    let mut out = vec![0.0f64; n];
    let (mut phase, mut am_phase) = (0.0f64, rng.random_range(0.0..2.0 * PI));
    let mut start = 0;
    for &(end, voice) in sections {
        let f0 = rng.random_range(voice.f0.0..voice.f0.1);
        let am = rng.random_range(voice.am_rate.0..voice.am_rate.1);
        let glide_rate = rng.random_range(0.5..1.5);
        let glide_phase = rng.random_range(0.0..2.0 * PI);
        for (i, o) in out.iter_mut().enumerate().take(end).skip(start) {
            let t = i as f64 / sr;
            let f = f0 * (1.0 + 0.03 * (2.0 * PI * glide_rate * t + glide_phase).sin());
            phase += 2.0 * PI * f / sr;
            am_phase += 2.0 * PI * am / sr;
            let env = 1.0 - AM_DEPTH / 2.0 + AM_DEPTH / 2.0 * am_phase.sin();
            let mut v = 0.0;
            for k in 1..=HARMONICS {
                if f * k as f64 >= 0.45 * sr {
                    break;
                }
                v += (k as f64 * phase).sin() / k as f64;
            }
            *o = env * v;
        }
        start = end;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let dist = Normal::new(0.0, noise.max(0.0)).expect("finite noise level");
    out.into_iter()
        .map(|v| (PEAK * v / peak + if noise > 0.0 { dist.sample(rng) } else { 0.0 }) as f32)
        .collect()
}

/// Section boundaries of an alternating utterance: `(end_sample, voice)`.
pub fn alternating_sections<R: Rng>(n: usize, rng: &mut R) -> Vec<(usize, ToyVoice)> {
    let sr = SAMPLE_RATE as f64;
    let mut voices = [VOICE_A, VOICE_B];
    if rng.random::<bool>() {
        voices.swap(0, 1);
    }
    let mut sections = Vec::new();
    let mut pos = 0;
    let mut k = 0;
    while pos < n {
        let len = (rng.random_range(SECTION_S.0..SECTION_S.1) * sr) as usize;
        pos = (pos + len).min(n);
        sections.push((pos, voices[k % 2]));
        k += 1;
    }
    sections
}

/// Sections of a single-voice clip, possibly with one borrowed section.
fn single_voice_sections<R: Rng>(n: usize, voice: ToyVoice, other: ToyVoice, loan_prob: f64, rng: &mut R) -> Vec<(usize, ToyVoice)> {
    if loan_prob <= 0.0 || !rng.random_bool(loan_prob.min(1.0)) {
        return vec![(n, voice)];
    }
    let len = ((rng.random_range(LOAN_S.0..LOAN_S.1) * SAMPLE_RATE as f64) as usize).min(n);
    let start = rng.random_range(0..=n - len);
    let mut sections = Vec::new();
    if start > 0 {
        sections.push((start, voice));
    }
    sections.push((start + len, other));
    if start + len < n {
        sections.push((n, voice));
    }
    sections
}

/// Three synthetic classes standing in for the language corpora:
/// `english` = voice A throughout, `hindi` = voice B throughout,
/// `hindi-english` = alternating A/B sections within each utterance.
pub fn synth_toy_corpus(cfg: &ToyCorpusConfig, seed: u64) -> Result<Corpus> {
    if cfg.counts.len() != CLASS_NAMES.len() || cfg.counts.contains(&0) {
        return Err(Error::invalid(format!("toy corpus needs {} positive class counts", CLASS_NAMES.len())));
    }
    if !(cfg.duration > 0.0 && cfg.noise >= 0.0 && (0.0..=1.0).contains(&cfg.loan_prob)) {
        return Err(Error::invalid("toy duration must be positive, noise non-negative and loan_prob in [0, 1]"));
    }
    let n = (cfg.duration * SAMPLE_RATE as f64).round() as usize;
    let mut manifest = DatasetManifest::new(default_class_names(), seed);
    manifest.notes.push("synthetic toy corpus".into());
    let mut clips = Vec::new();
    for (ci, (&count, class)) in cfg.counts.iter().zip(CLASS_NAMES).enumerate() {
        for j in 0..count {
            let mut rng = rng_for(seed, &[STREAM_TOY, ci as u64, j as u64]);
            let sections = match ci {
                0 => single_voice_sections(n, VOICE_A, VOICE_B, cfg.loan_prob, &mut rng),
                1 => single_voice_sections(n, VOICE_B, VOICE_A, cfg.loan_prob, &mut rng),
                _ => alternating_sections(n, &mut rng),
            };
            let clip = AudioClip::new(render(n, &sections, cfg.noise, &mut rng), SAMPLE_RATE);
            manifest.examples.push(LabeledExample {
                id: format!("{class}-{j:05}"),
                path: None,
                label: class.to_string(),
                split: None,
                duration: clip.duration(),
                synthetic: false,
            });
            clips.push(clip);
        }
    }
    Ok(Corpus { manifest, clips })
}

/// Generates `target - current` minority spectrograms (norm_pm1) from
/// conditions resampled out of `pool` with `±jitter` noise.
pub fn balance_with_gan(
    trainer: &GanTrainer,
    pool: &[ConditioningVector],
    current: usize,
    target: usize,
    jitter: f64,
    seed: u64,
) -> Result<Vec<MelSpectrogram>> {
    if target < current {
        return Err(Error::invalid(format!("target {target} is below the current count {current}")));
    }
    if trainer.iteration == 0 {
        return Err(Error::Checkpoint("generator checkpoint is untrained (iteration 0)".into()));
    }
    let extra = target - current;
    if extra == 0 {
        return Ok(Vec::new());
    }
    let conds = resample_conditions(pool, extra, jitter, derive_seed(seed, &[STREAM_BALANCE, 0]))?;
    trainer.sample(&conds, derive_seed(seed, &[STREAM_BALANCE, 1]))
}
