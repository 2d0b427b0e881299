#[path = "support/stoi_naive.rs"]
mod stoi_naive;

use avsi::metrics::{stoi, stoi_native, STOI_RATE};
use avsi::train::{synthesize_item, SyntheticSceneSpec};
use avsi::Waveform;
use proptest::prelude::*;
use stoi_naive::{fixture_pairs, speechlike, stoi_naive, white};

fn reference_values() -> Vec<(String, f64)> {
    include_str!("fixtures/stoi_reference.tsv")
        .lines()
        .skip(1)
        .map(|l| {
            let (name, v) = l.split_once('\t').unwrap();
            (name.to_string(), v.parse().unwrap())
        })
        .collect()
}

#[test]
fn fixture_pairs_agree_with_plain_implementation() {
    for (name, x, y) in fixture_pairs() {
        let fast = stoi_native(&x, &y).unwrap();
        let slow = stoi_naive(&x, &y).unwrap();
        println!("{name}: {fast:.6} vs {slow:.6}");
        assert!((fast - slow).abs() < 1e-4, "{name}: {fast} vs {slow}");
    }
}

#[test]
fn fixture_pairs_match_published_reference_values() {
    let pairs = fixture_pairs();
    let refs = reference_values();
    assert_eq!(refs.len(), pairs.len());
    for ((name, x, y), (rname, expected)) in pairs.iter().zip(refs) {
        assert_eq!(*name, rname);
        let got = stoi_native(x, y).unwrap();
        assert!((got - expected).abs() < 1e-4, "{name}: {got} vs {expected}");
    }
}

#[test]
fn negation_scores_like_identity() {
    let x = speechlike(20_000, 3);
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    let s = stoi_native(&x, &neg).unwrap();
    assert!(s <= stoi_native(&x, &x).unwrap() + 1e-12);
    assert!((s - 1.0).abs() < 1e-6);
}

fn synthetic_speech(seed: u64) -> Waveform {
    synthesize_item(&SyntheticSceneSpec::default(), "s", seed).unwrap().waveform
}

#[test]
fn white_noise_scores_low_against_synthetic_speech() {
    for seed in 0..4 {
        let clean = synthetic_speech(seed);
        let e: f64 = clean.samples().iter().map(|v| v * v).sum();
        let n = white(clean.len(), seed + 100);
        let en: f64 = n.iter().map(|v| v * v).sum();
        let noise: Vec<f64> = n.iter().map(|v| v * (e / en).sqrt()).collect();
        let noise = Waveform::new(noise, clean.sample_rate()).unwrap();
        let s = stoi(&clean, &noise).unwrap();
        println!("seed {seed}: {s:.4}");
        assert!(s < 0.3, "seed {seed}: {s}");
    }
}

#[test]
fn sixteen_khz_entry_point_scores_self_as_one() {
    let w = synthetic_speech(9);
    assert!((stoi(&w, &w).unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn rejects_mismatched_inputs() {
    let a = Waveform::new(vec![0.1; 32_000], 16_000).unwrap();
    let b = Waveform::new(vec![0.1; 31_999], 16_000).unwrap();
    assert!(stoi(&a, &b).is_err());
    let c = Waveform::new(vec![0.1; 20_000], STOI_RATE).unwrap();
    assert!(stoi(&a, &c).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn gain_invariant(seed in 0u64..1000, gain in 0.01f64..100.0) {
        let x = speechlike(16_000, seed);
        let y: Vec<f64> = x.iter().zip(white(16_000, seed ^ 7)).map(|(a, n)| a + 0.3 * n).collect();
        let scaled: Vec<f64> = y.iter().map(|v| gain * v).collect();
        let a = stoi_native(&x, &y).unwrap();
        let b = stoi_native(&x, &scaled).unwrap();
        prop_assert!((a - b).abs() < 1e-6);
        prop_assert!((-1.0..=1.0).contains(&a));
    }

    #[test]
    fn self_score_is_one(seed in 0u64..1000) {
        let x = speechlike(12_000, seed);
        prop_assert!((stoi_native(&x, &x).unwrap() - 1.0).abs() < 1e-6);
    }
}
