//! Baseline augmentations: spectrogram masking, phase-vocoder time
//! stretching and pitch shifting.

use std::f64::consts::PI;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::{resample_by_ratio, AudioClip};
use crate::error::{Error, Result};
use crate::features::{hann, MelSpectrogram, SpecDomain, N_FRAMES, N_MELS};
use crate::rng::rng_for;

/// Frequency/time masking parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecAugmentPolicy {
    #[serde(rename = "F")]
    pub f: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub n_freq_masks: usize,
    pub n_time_masks: usize,
}

impl Default for SpecAugmentPolicy {
    fn default() -> Self {
        SpecAugmentPolicy { f: 13, t: 20, n_freq_masks: 1, n_time_masks: 1 }
    }
}

impl SpecAugmentPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.f > N_MELS || self.t > N_FRAMES {
            return Err(Error::invalid(format!(
                "mask widths must be within [0, 128], got F={} T={}",
                self.f, self.t
            )));
        }
        Ok(())
    }
}

/// One applied mask: `[start, start + width)` along an axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mask {
    pub start: usize,
    pub width: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AppliedMasks {
    pub freq: Vec<Mask>,
    pub time: Vec<Mask>,
}

/// Masks bands and frame spans with the matrix mean, recording where.
pub fn spec_augment_with_masks(
    spec: &MelSpectrogram,
    policy: &SpecAugmentPolicy,
    seed: u64,
) -> Result<(MelSpectrogram, AppliedMasks)> {
    policy.validate()?;
    if spec.domain() == SpecDomain::Power {
        return Err(Error::Domain { expected: "db or normalised spectrogram".into(), actual: "power".into() });
    }
    let mut rng = rng_for(seed, &[]);
    let mut draw = |max_width: usize, axis_len: usize| {
        let width = rng.random_range(0..=max_width);
        let start = rng.random_range(0..=axis_len - width);
        Mask { start, width }
    };
    let masks = AppliedMasks {
        freq: (0..policy.n_freq_masks).map(|_| draw(policy.f, N_MELS)).collect(),
        time: (0..policy.n_time_masks).map(|_| draw(policy.t, N_FRAMES)).collect(),
    };
    let mean = spec.mean();
    let mut values = spec.values().to_vec();
    for m in &masks.freq {
        values[m.start * N_FRAMES..(m.start + m.width) * N_FRAMES].fill(mean);
    }
    for m in &masks.time {
        for row in values.chunks_mut(N_FRAMES) {
            row[m.start..m.start + m.width].fill(mean);
        }
    }
    let mut out = MelSpectrogram::new(values, spec.domain())?;
    out.source_id = spec.source_id.clone();
    Ok((out, masks))
}

pub fn spec_augment(spec: &MelSpectrogram, policy: &SpecAugmentPolicy, seed: u64) -> Result<MelSpectrogram> {
    spec_augment_with_masks(spec, policy, seed).map(|(s, _)| s)
}

const PV_FFT: usize = 1024;
const PV_HOP: usize = 256;

fn stft(x: &[f64]) -> Vec<Vec<Complex<f64>>> {
    let pad = PV_FFT / 2;
    let mut padded = vec![0.0; x.len() + 2 * pad];
    padded[pad..pad + x.len()].copy_from_slice(x);
    let n_frames = 1 + (padded.len() - PV_FFT) / PV_HOP;
    let window = hann(PV_FFT);
    let fft = FftPlanner::new().plan_fft_forward(PV_FFT);
    (0..n_frames)
        .map(|t| {
            let mut buf: Vec<Complex<f64>> = padded[t * PV_HOP..t * PV_HOP + PV_FFT]
                .iter()
                .zip(&window)
                .map(|(&s, &w)| Complex::new(s * w, 0.0))
                .collect();
            fft.process(&mut buf);
            buf.truncate(PV_FFT / 2 + 1);
            buf
        })
        .collect()
}

fn istft(frames: &[Vec<Complex<f64>>], length: usize) -> Vec<f64> {
    let pad = PV_FFT / 2;
    let total = PV_FFT + PV_HOP * frames.len().saturating_sub(1);
    let mut out = vec![0.0; total];
    let mut norm = vec![0.0; total];
    let window = hann(PV_FFT);
    let ifft = FftPlanner::new().plan_fft_inverse(PV_FFT);
    let mut buf = vec![Complex::new(0.0, 0.0); PV_FFT];
    for (t, frame) in frames.iter().enumerate() {
        buf[..frame.len()].copy_from_slice(frame);
        for k in 1..PV_FFT / 2 {
            buf[PV_FFT - k] = frame[k].conj();
        }
        ifft.process(&mut buf);
        let off = t * PV_HOP;
        for i in 0..PV_FFT {
            out[off + i] += buf[i].re / PV_FFT as f64 * window[i];
            norm[off + i] += window[i] * window[i];
        }
    }
    for (o, n) in out.iter_mut().zip(&norm) {
        if *n > 1e-10 {
            *o /= n;
        }
    }
    let mut y: Vec<f64> = out.into_iter().skip(pad).take(length).collect();
    y.resize(length, 0.0);
    y
}

fn wrap_phase(p: f64) -> f64 {
    p - 2.0 * PI * (p / (2.0 * PI)).round()
}

/// Phase-vocoder stretch without range checks; output length is
/// `round(len / rate)`.
fn stretch_unchecked(samples: &[f32], rate: f64) -> Vec<f32> {
    if samples.is_empty() {
        return Vec::new();
    }
    let x: Vec<f64> = samples.iter().map(|&s| s as f64).collect();
    let mut spec = stft(&x);
    let bins = PV_FFT / 2 + 1;
    let n_in = spec.len();
    spec.push(vec![Complex::new(0.0, 0.0); bins]);
    let advance: Vec<f64> = (0..bins).map(|k| 2.0 * PI * k as f64 * PV_HOP as f64 / PV_FFT as f64).collect();
    let mut phase: Vec<f64> = spec[0].iter().map(|c| c.arg()).collect();
    let mut frames = Vec::new();
    let mut t = 0.0;
    while t < n_in as f64 {
        let i = t as usize;
        let frac = t - i as f64;
        let (a, b) = (&spec[i], &spec[i + 1]);
        let frame = (0..bins)
            .map(|k| {
                let mag = (1.0 - frac) * a[k].norm() + frac * b[k].norm();
                let out = Complex::from_polar(mag, phase[k]);
                let dphi = wrap_phase(b[k].arg() - a[k].arg() - advance[k]);
                phase[k] += advance[k] + dphi;
                out
            })
            .collect();
        frames.push(frame);
        t += rate;
    }
    let length = (samples.len() as f64 / rate).round() as usize;
    istft(&frames, length).into_iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect()
}

pub const STRETCH_MIN: f64 = 0.5;
pub const STRETCH_MAX: f64 = 1.5;
pub const PITCH_MAX_STEPS: i32 = 4;

/// Pitch-preserving time stretch; `rate > 1` shortens the clip.
pub fn time_stretch(clip: &AudioClip, rate: f64) -> Result<AudioClip> {
    if !(STRETCH_MIN..STRETCH_MAX).contains(&rate) {
        return Err(Error::invalid(format!("stretch rate must lie in [0.5, 1.5), got {rate}")));
    }
    Ok(AudioClip::new(stretch_unchecked(&clip.samples, rate), clip.sample_rate))
}

/// Shifts pitch by `n_steps` semitones keeping the length unchanged.
pub fn pitch_shift(clip: &AudioClip, n_steps: i32) -> Result<AudioClip> {
    if n_steps.abs() > PITCH_MAX_STEPS {
        return Err(Error::invalid(format!("n_steps must lie in [-4, 4], got {n_steps}")));
    }
    if n_steps == 0 {
        return Ok(clip.clone());
    }
    let rate = 2f64.powf(-n_steps as f64 / 12.0);
    let stretched = stretch_unchecked(&clip.samples, rate);
    let mut shifted = resample_by_ratio(&stretched, rate);
    shifted.resize(clip.len(), 0.0);
    Ok(AudioClip::new(shifted, clip.sample_rate))
}

/// Uniform draw of a stretch rate from `[min, max)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StretchPolicy {
    pub min: f64,
    pub max: f64,
}

impl Default for StretchPolicy {
    fn default() -> Self {
        StretchPolicy { min: STRETCH_MIN, max: STRETCH_MAX }
    }
}

impl StretchPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(STRETCH_MIN <= self.min && self.min < self.max && self.max <= STRETCH_MAX) {
            return Err(Error::invalid(format!(
                "stretch range must satisfy 0.5 <= min < max <= 1.5, got [{}, {})",
                self.min, self.max
            )));
        }
        Ok(())
    }

    pub fn draw(&self, seed: u64) -> f64 {
        rng_for(seed, &[]).random_range(self.min..self.max)
    }

    pub fn apply(&self, clip: &AudioClip, seed: u64) -> Result<AudioClip> {
        self.validate()?;
        time_stretch(clip, self.draw(seed))
    }
}

/// Uniform draw of an integer semitone shift from `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PitchPolicy {
    pub min: i32,
    pub max: i32,
}

impl Default for PitchPolicy {
    fn default() -> Self {
        PitchPolicy { min: -PITCH_MAX_STEPS, max: PITCH_MAX_STEPS }
    }
}

impl PitchPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(-PITCH_MAX_STEPS <= self.min && self.min <= self.max && self.max <= PITCH_MAX_STEPS) {
            return Err(Error::invalid(format!(
                "pitch range must satisfy -4 <= min <= max <= 4, got [{}, {}]",
                self.min, self.max
            )));
        }
        Ok(())
    }

    pub fn draw(&self, seed: u64) -> i32 {
        rng_for(seed, &[]).random_range(self.min..=self.max)
    }

    pub fn apply(&self, clip: &AudioClip, seed: u64) -> Result<AudioClip> {
        self.validate()?;
        pitch_shift(clip, self.draw(seed))
    }
}
