//! Shared inputs for the benchmarks in `benches/`.

use avsi::train::{synthesize_item, PreparedItem, SyntheticSceneSpec};
use avsi::{StftConfig, Waveform};

/// A two-second synthetic utterance with its spectrogram and visual track.
pub fn utterance(seed: u64) -> PreparedItem {
    let spec = SyntheticSceneSpec::default();
    let item = synthesize_item(&spec, "bench", seed).expect("synthetic item");
    PreparedItem::from_synthetic(&item, false, &StftConfig::default()).expect("prepared item")
}

pub fn waveform(seed: u64) -> Waveform {
    utterance(seed).clean
}
