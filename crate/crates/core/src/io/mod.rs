//! File formats: WAV audio, visual feature files and dataset manifests.

mod features;
mod manifest;
mod wav;

pub use features::{
    decode_features, encode_features, read_features, write_features, FEATURE_MAGIC,
    FEATURE_VERSION,
};
pub use manifest::{Manifest, ManifestRecord};
pub use wav::{decode_wav, encode_wav, read_wav, read_wav_raw, write_wav, WavData};
