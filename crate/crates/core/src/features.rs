//! Mel spectrograms and F0 conditioning vectors.
//!
//! Every clip entering the models is 33,536 samples at 16 kHz. With a
//! 1024-point window and a 256-sample hop that yields exactly 128 frames,
//! matching the 128 mel bands.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const N_MELS: usize = 128;
pub const N_FRAMES: usize = 128;
pub const N_FFT: usize = 1024;
pub const HOP: usize = 256;
/// Fixed clip length: `(N_FRAMES - 1) * HOP + N_FFT`.
pub const CLIP_SAMPLES: usize = (N_FRAMES - 1) * HOP + N_FFT;
pub const MEL_FMIN: f64 = 0.0;
pub const MEL_FMAX: f64 = 8000.0;
pub const DB_FLOOR: f64 = 1e-10;
pub const TOP_DB: f64 = 80.0;

/// Value domain of a [`MelSpectrogram`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecDomain {
    Power,
    Db,
    NormPm1,
    Norm01,
}

impl SpecDomain {
    pub fn tag(self) -> &'static str {
        match self {
            SpecDomain::Power => "power",
            SpecDomain::Db => "db",
            SpecDomain::NormPm1 => "norm_pm1",
            SpecDomain::Norm01 => "norm_01",
        }
    }
}

/// A 128 x 128 matrix, rows = mel bands (low to high), columns = frames.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    values: Vec<f64>,
    domain: SpecDomain,
    pub source_id: Option<String>,
}

impl MelSpectrogram {
    /// Validates shape and the range implied by `domain`.
    pub fn new(values: Vec<f64>, domain: SpecDomain) -> Result<Self> {
        if values.len() != N_MELS * N_FRAMES {
            return Err(Error::Shape(format!(
                "spectrogram needs {} cells, got {}",
                N_MELS * N_FRAMES,
                values.len()
            )));
        }
        let (lo, hi) = match domain {
            SpecDomain::Power => (0.0, f64::INFINITY),
            SpecDomain::Db => (f64::NEG_INFINITY, f64::INFINITY),
            SpecDomain::NormPm1 => (-1.0, 1.0),
            SpecDomain::Norm01 => (0.0, 1.0),
        };
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= lo && **v <= hi)) {
            return Err(Error::Domain {
                expected: format!("{} values in [{lo}, {hi}]", domain.tag()),
                actual: bad.to_string(),
            });
        }
        Ok(MelSpectrogram { values, domain, source_id: None })
    }

    pub fn with_source(mut self, id: impl Into<String>) -> Self {
        self.source_id = Some(id.into());
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn domain(&self) -> SpecDomain {
        self.domain
    }

    pub fn get(&self, band: usize, frame: usize) -> f64 {
        self.values[band * N_FRAMES + frame]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    fn expect_domain(&self, want: SpecDomain) -> Result<()> {
        if self.domain != want {
            return Err(Error::Domain { expected: want.tag().into(), actual: self.domain.tag().into() });
        }
        Ok(())
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Edge frequencies (Hz) of the triangular filters: `n_mels + 2` points
/// equally spaced on the HTK mel scale.
pub fn mel_band_edges(n_mels: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Area-normalised triangular filterbank, `[n_mels][n_fft/2 + 1]`.
pub fn mel_filterbank(sample_rate: u32, n_fft: usize, n_mels: usize, fmin: f64, fmax: f64) -> Vec<Vec<f64>> {
    let edges = mel_band_edges(n_mels, fmin, fmax);
    let bins = n_fft / 2 + 1;
    let bin_hz = sample_rate as f64 / n_fft as f64;
    (0..n_mels)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (r - l);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let w = if f <= l || f >= r {
                        0.0
                    } else if f <= c {
                        (f - l) / (c - l)
                    } else {
                        (r - f) / (r - c)
                    };
                    w * norm
                })
                .collect()
        })
        .collect()
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Reusable STFT + mel projection.
pub struct MelExtractor {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filters: Vec<Vec<(usize, f64)>>,
}

impl MelExtractor {
    pub fn new() -> Self {
        let fft = FftPlanner::new().plan_fft_forward(N_FFT);
        let filters = mel_filterbank(SAMPLE_RATE, N_FFT, N_MELS, MEL_FMIN, MEL_FMAX)
            .into_iter()
            .map(|row| row.into_iter().enumerate().filter(|(_, w)| *w > 0.0).collect())
            .collect();
        MelExtractor { fft, window: hann(N_FFT), filters }
    }

    /// Shared instance; construction plans an FFT, so reuse it.
    pub fn shared() -> &'static MelExtractor {
        static INSTANCE: OnceLock<MelExtractor> = OnceLock::new();
        INSTANCE.get_or_init(MelExtractor::new)
    }

    pub fn power_mel(&self, clip: &AudioClip) -> Result<MelSpectrogram> {
        check_model_clip(clip)?;
        let mut values = vec![0.0; N_MELS * N_FRAMES];
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        let mut power = vec![0.0; N_FFT / 2 + 1];
        for t in 0..N_FRAMES {
            let frame = &clip.samples[t * HOP..t * HOP + N_FFT];
            for ((b, &s), w) in buf.iter_mut().zip(frame).zip(&self.window) {
                *b = Complex::new(s as f64 * w, 0.0);
            }
            self.fft.process(&mut buf);
            for (p, b) in power.iter_mut().zip(&buf) {
                *p = b.norm_sqr();
            }
            for (m, filt) in self.filters.iter().enumerate() {
                values[m * N_FRAMES + t] = filt.iter().map(|&(k, w)| w * power[k]).sum();
            }
        }
        MelSpectrogram::new(values, SpecDomain::Power)
    }
}

impl Default for MelExtractor {
    fn default() -> Self {
        Self::new()
    }
}

fn check_model_clip(clip: &AudioClip) -> Result<()> {
    if clip.sample_rate != SAMPLE_RATE {
        return Err(Error::invalid(format!("expected {SAMPLE_RATE} Hz audio, got {}", clip.sample_rate)));
    }
    if clip.len() != CLIP_SAMPLES {
        return Err(Error::invalid(format!("expected {CLIP_SAMPLES} samples, got {}", clip.len())));
    }
    Ok(())
}

/// Power-domain 128 x 128 mel spectrogram of a model-length clip.
pub fn mel_spectrogram(clip: &AudioClip) -> Result<MelSpectrogram> {
    MelExtractor::shared().power_mel(clip)
}

/// `10 log10(max(v, 1e-10))`, floored at 80 dB below the matrix maximum.
pub fn to_db(spec: &MelSpectrogram) -> Result<MelSpectrogram> {
    spec.expect_domain(SpecDomain::Power)?;
    let db: Vec<f64> = spec.values.iter().map(|&v| 10.0 * v.max(DB_FLOOR).log10()).collect();
    let top = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor = top - TOP_DB;
    let values = db.into_iter().map(|v| v.max(floor)).collect();
    let mut out = MelSpectrogram::new(values, SpecDomain::Db)?;
    out.source_id = spec.source_id.clone();
    Ok(out)
}

/// Global min/max of some feature, used for affine normalisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min_value: f64,
    pub max_value: f64,
    pub domain_tag: String,
}

impl NormStats {
    pub fn new(min_value: f64, max_value: f64, domain_tag: impl Into<String>) -> Result<Self> {
        let s = NormStats { min_value, max_value, domain_tag: domain_tag.into() };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_value.is_finite() && self.max_value.is_finite() && self.max_value > self.min_value) {
            return Err(Error::DegenerateRange { min: self.min_value, max: self.max_value });
        }
        Ok(())
    }

    fn span(&self) -> f64 {
        self.max_value - self.min_value
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormTarget {
    /// `[-1, 1]`, the generator's output range.
    PlusMinusOne,
    /// `[0, 1]`, the classifier's input range.
    ZeroOne,
}

impl NormTarget {
    fn bounds(self) -> (f64, f64) {
        match self {
            NormTarget::PlusMinusOne => (-1.0, 1.0),
            NormTarget::ZeroOne => (0.0, 1.0),
        }
    }

    fn domain(self) -> SpecDomain {
        match self {
            NormTarget::PlusMinusOne => SpecDomain::NormPm1,
            NormTarget::ZeroOne => SpecDomain::Norm01,
        }
    }
}

pub fn fit_minmax(specs: &[MelSpectrogram]) -> Result<NormStats> {
    let first = specs.first().ok_or_else(|| Error::invalid("cannot fit statistics on zero spectrograms"))?;
    if let Some(other) = specs.iter().find(|s| s.domain != first.domain) {
        return Err(Error::Domain { expected: first.domain.tag().into(), actual: other.domain.tag().into() });
    }
    let min = specs.iter().map(MelSpectrogram::min).fold(f64::INFINITY, f64::min);
    let max = specs.iter().map(MelSpectrogram::max).fold(f64::NEG_INFINITY, f64::max);
    NormStats::new(min, max, first.domain.tag())
}

/// Affine map of `[min, max]` onto the target interval, clamping outliers.
pub fn apply_minmax(spec: &MelSpectrogram, stats: &NormStats, target: NormTarget) -> Result<MelSpectrogram> {
    stats.validate()?;
    if spec.domain.tag() != stats.domain_tag {
        return Err(Error::Domain { expected: stats.domain_tag.clone(), actual: spec.domain.tag().into() });
    }
    let (lo, hi) = target.bounds();
    let values = spec
        .values
        .iter()
        .map(|&v| {
            let u = ((v - stats.min_value) / stats.span()).clamp(0.0, 1.0);
            lo + u * (hi - lo)
        })
        .collect();
    let mut out = MelSpectrogram::new(values, target.domain())?;
    out.source_id = spec.source_id.clone();
    Ok(out)
}

/// Maps a normalised spectrogram back to the statistics' own domain.
pub fn invert_minmax(spec: &MelSpectrogram, stats: &NormStats) -> Result<MelSpectrogram> {
    stats.validate()?;
    let target = match spec.domain {
        SpecDomain::NormPm1 => NormTarget::PlusMinusOne,
        SpecDomain::Norm01 => NormTarget::ZeroOne,
        other => {
            return Err(Error::Domain { expected: "a normalised domain".into(), actual: other.tag().into() })
        }
    };
    let (lo, hi) = target.bounds();
    let domain = match stats.domain_tag.as_str() {
        "power" => SpecDomain::Power,
        "db" => SpecDomain::Db,
        other => return Err(Error::Domain { expected: "power or db statistics".into(), actual: other.into() }),
    };
    let values = spec
        .values
        .iter()
        .map(|&v| stats.min_value + (v - lo) / (hi - lo) * stats.span())
        .collect();
    let mut out = MelSpectrogram::new(values, domain)?;
    out.source_id = spec.source_id.clone();
    Ok(out)
}

/// Re-expresses a normalised spectrogram in another normalised range
/// defined over the same statistics.
pub fn renormalize(spec: &MelSpectrogram, stats: &NormStats, target: NormTarget) -> Result<MelSpectrogram> {
    apply_minmax(&invert_minmax(spec, stats)?, stats, target)
}

/// Frame-synchronous F0 track; `0.0` marks unvoiced frames.
#[derive(Clone, Debug, PartialEq)]
pub struct F0Contour {
    pub hz: Vec<f64>,
    pub frame_rate: f64,
}

impl F0Contour {
    pub fn voiced_fraction(&self) -> f64 {
        self.hz.iter().filter(|&&f| f > 0.0).count() as f64 / self.hz.len() as f64
    }
}

/// Something that can produce one F0 value per spectrogram frame.
pub trait PitchTracker: Send + Sync {
    fn track(&self, clip: &AudioClip) -> Result<F0Contour>;
}

/// Normalised-autocorrelation pitch tracker.
///
/// For each 1024-sample frame the autocorrelation is normalised by the
/// energies of the two overlapping segments, searched over lags covering
/// `[fmin, fmax]`, and the shortest-lag local maximum within 10% of the
/// best peak wins. Frames whose chosen peak is below `voicing_threshold`
/// are unvoiced.
#[derive(Clone, Debug)]
pub struct AutocorrelationTracker {
    pub fmin: f64,
    pub fmax: f64,
    pub voicing_threshold: f64,
}

impl Default for AutocorrelationTracker {
    fn default() -> Self {
        AutocorrelationTracker { fmin: 50.0, fmax: 500.0, voicing_threshold: 0.3 }
    }
}

impl AutocorrelationTracker {
    fn frame_f0(&self, frame: &[f64], fft: &dyn Fft<f64>, ifft: &dyn Fft<f64>) -> f64 {
        let n = frame.len();
        let sr = SAMPLE_RATE as f64;
        let min_lag = (sr / self.fmax).floor() as usize;
        let max_lag = ((sr / self.fmin).ceil() as usize).min(n - 2);

        let mut buf: Vec<Complex<f64>> = frame.iter().map(|&v| Complex::new(v, 0.0)).collect();
        buf.resize(2 * n, Complex::new(0.0, 0.0));
        fft.process(&mut buf);
        for b in buf.iter_mut() {
            *b = Complex::new(b.norm_sqr(), 0.0);
        }
        ifft.process(&mut buf);
        let scale = 1.0 / (2 * n) as f64;

        let mut prefix = vec![0.0; n + 1];
        for i in 0..n {
            prefix[i + 1] = prefix[i] + frame[i] * frame[i];
        }
        let total = prefix[n];
        if total <= 1e-12 {
            return 0.0;
        }
        let r = |lag: usize| {
            let head = prefix[n - lag];
            let tail = total - prefix[lag];
            let denom = (head * tail).sqrt();
            if denom <= 1e-12 {
                0.0
            } else {
                buf[lag].re * scale / denom
            }
        };
        let corr: Vec<f64> = (min_lag - 1..=max_lag + 1).map(r).collect();
        let at = |lag: usize| corr[lag + 1 - min_lag];
        let best = (min_lag..=max_lag).map(at).fold(f64::NEG_INFINITY, f64::max);
        if best < self.voicing_threshold {
            return 0.0;
        }
        let chosen = (min_lag..=max_lag)
            .find(|&l| {
                let v = at(l);
                v >= 0.9 * best && v >= at(l - 1) && v >= at(l + 1)
            })
            .unwrap_or(min_lag);
        // parabolic refinement around the integer peak
        let (a, b, c) = (at(chosen - 1), at(chosen), at(chosen + 1));
        let denom = a - 2.0 * b + c;
        let shift = if denom.abs() > 1e-12 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
        let f0 = sr / (chosen as f64 + shift);
        if f0 < self.fmin || f0 > self.fmax {
            0.0
        } else {
            f0
        }
    }
}

impl PitchTracker for AutocorrelationTracker {
    fn track(&self, clip: &AudioClip) -> Result<F0Contour> {
        check_model_clip(clip)?;
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(2 * N_FFT);
        let ifft = planner.plan_fft_inverse(2 * N_FFT);
        let hz = (0..N_FRAMES)
            .map(|t| {
                let frame: Vec<f64> = clip.samples[t * HOP..t * HOP + N_FFT].iter().map(|&s| s as f64).collect();
                self.frame_f0(&frame, fft.as_ref(), ifft.as_ref())
            })
            .collect();
        Ok(F0Contour { hz, frame_rate: SAMPLE_RATE as f64 / HOP as f64 })
    }
}

/// F0 contour with the default tracker.
pub fn extract_f0(clip: &AudioClip) -> Result<F0Contour> {
    AutocorrelationTracker::default().track(clip)
}

/// Semitone value of a positive frequency relative to 50 Hz.
pub fn hz_to_semitone(f0: f64) -> f64 {
    39.87 * (f0 / 50.0).log10()
}

/// Semitone contour with its voicing mask (unvoiced frames hold 0).
#[derive(Clone, Debug, PartialEq)]
pub struct SemitoneContour {
    pub values: Vec<f64>,
    pub voiced: Vec<bool>,
}

pub fn semitone(f0: &F0Contour) -> Result<SemitoneContour> {
    if let Some(bad) = f0.hz.iter().find(|f| !(f.is_finite() && **f >= 0.0)) {
        return Err(Error::invalid(format!("F0 values must be non-negative, got {bad}")));
    }
    let voiced: Vec<bool> = f0.hz.iter().map(|&f| f > 0.0).collect();
    let values = f0
        .hz
        .iter()
        .map(|&f| if f > 0.0 { hz_to_semitone(f) } else { 0.0 })
        .collect();
    Ok(SemitoneContour { values, voiced })
}

/// Min/max over the voiced frames of a corpus of contours.
pub fn fit_semitone_stats(contours: &[SemitoneContour]) -> Result<NormStats> {
    let voiced = contours
        .iter()
        .flat_map(|c| c.values.iter().zip(&c.voiced).filter(|(_, v)| **v).map(|(s, _)| *s));
    let (min, max) = voiced.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    NormStats::new(min, max, "semitone")
}

/// Generator input: length-128 vector in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningVector {
    values: Vec<f64>,
}

impl ConditioningVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != N_FRAMES {
            return Err(Error::Shape(format!("conditioning vector needs {N_FRAMES} values, got {}", values.len())));
        }
        if let Some(bad) = values.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
            return Err(Error::Domain { expected: "values in [0, 1]".into(), actual: bad.to_string() });
        }
        Ok(ConditioningVector { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn normalize_f0(st: &SemitoneContour, stats: &NormStats) -> Result<ConditioningVector> {
    stats.validate()?;
    let values = st
        .values
        .iter()
        .zip(&st.voiced)
        .map(|(&v, &voiced)| {
            if voiced {
                ((v - stats.min_value) / stats.span()).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    ConditioningVector::new(values)
}
