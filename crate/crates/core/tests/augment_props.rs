//! Properties of masking, stretching and pitch shifting.

use std::collections::HashSet;

use proptest::prelude::*;
use switchgan::audio::{AudioClip, SAMPLE_RATE};
use switchgan::augment::{spec_augment, spec_augment_with_masks, time_stretch, PitchPolicy, SpecAugmentPolicy, StretchPolicy};
use switchgan::classifier::{Augmenter, LabeledSpec};
use switchgan::experiment::SpecAugmenter;
use switchgan::features::{MelSpectrogram, SpecDomain, N_FRAMES, N_MELS};

fn spectrogram(seed: u64) -> MelSpectrogram {
    let values = (0..N_MELS * N_FRAMES).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 999.0).collect();
    MelSpectrogram::new(values, SpecDomain::Norm01).unwrap()
}

fn clip(n: usize) -> AudioClip {
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            (0.3 * (2.0 * std::f64::consts::PI * 180.0 * t).sin() + 0.1 * (2.0 * std::f64::consts::PI * 900.0 * t).sin()) as f32
        })
        .collect();
    AudioClip::new(samples, SAMPLE_RATE)
}

proptest! {
    #[test]
    fn masking_keeps_shape_and_bounds_changes(
        f in 0usize..=40,
        t in 0usize..=40,
        nf in 0usize..=3,
        nt in 0usize..=3,
        seed in any::<u64>(),
    ) {
        let policy = SpecAugmentPolicy { f, t, n_freq_masks: nf, n_time_masks: nt };
        let spec = spectrogram(seed % 97);
        let (out, masks) = spec_augment_with_masks(&spec, &policy, seed).unwrap();
        prop_assert_eq!(out.values().len(), N_MELS * N_FRAMES);
        prop_assert_eq!(out.domain(), spec.domain());
        let mut rows = HashSet::new();
        let mut cols = HashSet::new();
        for b in 0..N_MELS {
            for c in 0..N_FRAMES {
                if out.get(b, c) != spec.get(b, c) {
                    rows.insert(b);
                    cols.insert(c);
                }
            }
        }
        let masked_rows: HashSet<usize> = masks.freq.iter().flat_map(|m| m.start..m.start + m.width).collect();
        let masked_cols: HashSet<usize> = masks.time.iter().flat_map(|m| m.start..m.start + m.width).collect();
        prop_assert!(masked_rows.len() <= nf * f && masked_cols.len() <= nt * t);
        for b in 0..N_MELS {
            for c in 0..N_FRAMES {
                if out.get(b, c) != spec.get(b, c) {
                    prop_assert!(masked_rows.contains(&b) || masked_cols.contains(&c));
                }
            }
        }
        prop_assert_eq!(&out, &spec_augment(&spec, &policy, seed).unwrap());
    }

    #[test]
    fn stretch_and_inverse_restore_length(rate in 0.7f64..1.45, n in 4000usize..20000) {
        let x = clip(n);
        let y = time_stretch(&time_stretch(&x, rate).unwrap(), 1.0 / rate).unwrap();
        prop_assert!(y.len().abs_diff(n) <= 2 * 256, "{} vs {n}", y.len());
    }
}

#[test]
fn seeds_give_distinct_masks_and_stretches() {
    let spec = spectrogram(1);
    let policy = SpecAugmentPolicy::default();
    let masked: HashSet<Vec<u64>> =
        (0..100).map(|s| spec_augment(&spec, &policy, s).unwrap().values().iter().map(|v| v.to_bits()).collect()).collect();
    assert!(masked.len() >= 98, "{} distinct of 100", masked.len());

    let stretch = StretchPolicy::default();
    let rates: HashSet<u64> = (0..100).map(|s| stretch.draw(s).to_bits()).collect();
    assert_eq!(rates.len(), 100);
    let x = clip(8000);
    let outs: HashSet<Vec<u32>> =
        (0..20).map(|s| stretch.apply(&x, s).unwrap().samples.iter().map(|v| v.to_bits()).collect()).collect();
    assert_eq!(outs.len(), 20);

    // integer shifts: distinct outputs exactly match distinct draws
    let pitch = PitchPolicy::default();
    let steps: HashSet<i32> = (0..100).map(|s| pitch.draw(s)).collect();
    assert_eq!(steps.len(), 9);
    let outs: HashSet<Vec<u32>> =
        (0..30).map(|s| pitch.apply(&x, s).unwrap().samples.iter().map(|v| v.to_bits()).collect()).collect();
    let draws: HashSet<i32> = (0..30).map(|s| pitch.draw(s)).collect();
    assert_eq!(outs.len(), draws.len());
}

#[test]
fn augmentation_is_reproducible_per_seed() {
    let x = clip(8000);
    let stretch = StretchPolicy::default();
    let pitch = PitchPolicy::default();
    for s in 0..5 {
        assert_eq!(stretch.apply(&x, s).unwrap(), stretch.apply(&x, s).unwrap());
        assert_eq!(pitch.apply(&x, s).unwrap(), pitch.apply(&x, s).unwrap());
    }
}

#[test]
fn augmentation_keeps_example_identity() {
    let example = LabeledSpec { spec: spectrogram(3).with_source("hindi-english-00007"), label: 2 };
    let out = SpecAugmenter(SpecAugmentPolicy::default()).augment(0, &example, 5).unwrap();
    assert_eq!(out.source_id.as_deref(), Some("hindi-english-00007"));
    assert_eq!(example.label, 2);
}
