//! Waveform input/output and the length/rate conditioning applied before
//! feature extraction.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Canonical internal sample rate.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono waveform with amplitudes in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        AudioClip { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Samples in `[start_s, end_s)`, clamped to the clip.
    pub fn slice_seconds(&self, start_s: f64, end_s: f64) -> AudioClip {
        let sr = self.sample_rate as f64;
        let a = ((start_s * sr).round() as usize).min(self.len());
        let b = ((end_s * sr).round() as usize).clamp(a, self.len());
        AudioClip::new(self.samples[a..b].to_vec(), self.sample_rate)
    }
}

/// One utterance inside a longer recording.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub utterance_id: String,
    pub recording_id: String,
    pub start: f64,
    pub end: f64,
    pub label: Option<String>,
}

pub fn read_wav(path: &Path) -> Result<AudioClip> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(source) => Error::io(path, source),
        hound::Error::Unsupported => Error::NotPcm {
            path: path.to_path_buf(),
            detail: "unsupported WAV sub-format".into(),
        },
        other => Error::InvalidWav { path: path.to_path_buf(), detail: other.to_string() },
    })?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::NotPcm {
            path: path.to_path_buf(),
            detail: format!("{:?} with {} bits per sample", spec.sample_format, spec.bits_per_sample),
        });
    }
    let channels = spec.channels.max(1) as usize;
    let raw: Vec<i16> = reader
        .into_samples::<i16>()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidWav { path: path.to_path_buf(), detail: e.to_string() })?;
    if raw.len() < channels {
        return Err(Error::EmptyAudio(path.to_path_buf()));
    }
    let samples = raw
        .chunks_exact(channels)
        .map(|frame| {
            let sum: f64 = frame.iter().map(|&s| s as f64 / 32768.0).sum();
            (sum / channels as f64) as f32
        })
        .collect();
    Ok(AudioClip::new(samples, spec.sample_rate))
}

/// Writes a mono 16-bit PCM file. Amplitudes are clamped to the PCM range.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wav_err = |e: hound::Error| Error::InvalidWav { path: path.to_path_buf(), detail: e.to_string() };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &clip.samples {
        let v = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Band-limited resampling by an arbitrary ratio (`output_rate / input_rate`)
/// using a Hann-windowed sinc kernel with 32 zero crossings per side.
pub fn resample_by_ratio(samples: &[f32], ratio: f64) -> Vec<f32> {
    assert!(ratio > 0.0 && ratio.is_finite());
    const ZERO_CROSSINGS: f64 = 32.0;
    let out_len = (samples.len() as f64 * ratio).round() as usize;
    let cutoff = ratio.min(1.0) * 0.97;
    let half_width = ZERO_CROSSINGS / cutoff;
    (0..out_len)
        .map(|n| {
            let t = n as f64 / ratio;
            let lo = (t - half_width).ceil().max(0.0) as usize;
            let hi = ((t + half_width).floor() as usize).min(samples.len().saturating_sub(1));
            let mut acc = 0.0;
            for (k, &x) in samples.iter().enumerate().take(hi + 1).skip(lo) {
                let d = t - k as f64;
                let window = 0.5 + 0.5 * (PI * d / half_width).cos();
                acc += x as f64 * cutoff * sinc(cutoff * d) * window;
            }
            acc as f32
        })
        .collect()
}

pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::invalid("target sample rate must be positive"));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let ratio = target_rate as f64 / clip.sample_rate as f64;
    Ok(AudioClip::new(resample_by_ratio(&clip.samples, ratio), target_rate))
}

/// Frame length and hop used by [`trim_silence`], in seconds.
pub const TRIM_FRAME_S: f64 = 0.025;
pub const TRIM_HOP_S: f64 = 0.010;

/// Drops leading and trailing frames whose RMS lies more than
/// `threshold_db` below the loudest frame. Interior frames are kept even if
/// quiet. An all-silent clip comes back empty.
pub fn trim_silence(clip: &AudioClip, threshold_db: f64) -> Result<AudioClip> {
    if threshold_db <= 0.0 {
        return Err(Error::invalid("trim threshold must be positive dB"));
    }
    let sr = clip.sample_rate as f64;
    let frame = ((TRIM_FRAME_S * sr).round() as usize).max(1);
    let hop = ((TRIM_HOP_S * sr).round() as usize).max(1);
    let n = clip.len();
    if n == 0 {
        return Ok(clip.clone());
    }
    let n_frames = if n <= frame { 1 } else { (n - frame).div_ceil(hop) + 1 };
    let rms: Vec<f64> = (0..n_frames)
        .map(|i| {
            let s = &clip.samples[i * hop..(i * hop + frame).min(n)];
            (s.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / s.len() as f64).sqrt()
        })
        .collect();
    let peak = rms.iter().copied().fold(0.0, f64::max);
    if peak == 0.0 {
        return Ok(AudioClip::new(Vec::new(), clip.sample_rate));
    }
    let floor = peak * 10f64.powf(-threshold_db / 20.0);
    let loud = |r: &f64| *r >= floor;
    let first = rms.iter().position(loud).expect("peak frame is loud");
    let last = rms.iter().rposition(loud).expect("peak frame is loud");
    let start = first * hop;
    let end = (last * hop + frame).min(n);
    Ok(AudioClip::new(clip.samples[start..end].to_vec(), clip.sample_rate))
}

/// Parses `<utt_id> <recording_id> <start_sec> <end_sec>` lines.
pub fn parse_segments(path: &Path) -> Result<Vec<Segment>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_segments_str(&text, path)
}

pub(crate) fn parse_segments_str(text: &str, path: &Path) -> Result<Vec<Segment>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let err = |detail: String| Error::Parse { path: path.to_path_buf(), line: line_no, detail };
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        let time = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| err(format!("invalid time `{s}`")))
        };
        let start = time(fields[2])?;
        let end = time(fields[3])?;
        if end <= start {
            return Err(err(format!("end {end} is not after start {start}")));
        }
        out.push(Segment {
            utterance_id: fields[0].to_string(),
            recording_id: fields[1].to_string(),
            start,
            end,
            label: None,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CropMode {
    Random,
    Center,
}

/// Crops or zero-pads to exactly `target` samples.
pub fn crop_or_pad(clip: &AudioClip, target: usize, mode: CropMode, seed: u64) -> Result<AudioClip> {
    if target == 0 {
        return Err(Error::invalid("target length must be positive"));
    }
    let n = clip.len();
    if n == target {
        return Ok(clip.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slack = n.abs_diff(target);
    let offset = match mode {
        CropMode::Center => slack / 2,
        CropMode::Random => rng.random_range(0..=slack),
    };
    let samples = if n > target {
        clip.samples[offset..offset + target].to_vec()
    } else {
        let mut v = vec![0.0; target];
        v[offset..offset + n].copy_from_slice(&clip.samples);
        v
    };
    Ok(AudioClip::new(samples, clip.sample_rate))
}
