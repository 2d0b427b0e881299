//! Region-restricted spectrogram error, STOI and whole-set evaluation.

mod eval;
mod stoi;

pub use eval::{evaluate_set, EvalItem, EvalOptions, EvalReport, EvalRow, Inpainter, ZeroFill};
pub use stoi::{stoi, stoi_native, STOI_RATE};

use crate::corruption::CorruptionMask;
use crate::dsp::MagnitudeSpectrogram;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Corrupted,
    Uncorrupted,
    All,
}

/// Mean absolute difference over the entries of one region.
pub fn mae_region(
    a_hat: &MagnitudeSpectrogram,
    a: &MagnitudeSpectrogram,
    mask: &CorruptionMask,
    region: Region,
) -> Result<f64> {
    if a_hat.shape() != a.shape() {
        return Err(Error::Shape(format!(
            "estimate is {:?}, reference is {:?}",
            a_hat.shape(),
            a.shape()
        )));
    }
    if mask.n_bins() != a.n_bins() || mask.n_frames() != a.n_frames() {
        return Err(Error::Shape("mask does not match the spectrograms".into()));
    }
    let k = a.n_bins();
    let (mut sum, mut count) = (0.0, 0usize);
    for l in 0..a.n_frames() {
        let selected = match region {
            Region::Corrupted => !mask.is_known(l),
            Region::Uncorrupted => mask.is_known(l),
            Region::All => true,
        };
        if selected {
            sum += a_hat.frame(l).iter().zip(a.frame(l)).map(|(x, y)| (x - y).abs()).sum::<f64>();
            count += k;
        }
    }
    if count == 0 {
        return Err(Error::InvalidInput(format!("{region:?} region is empty")));
    }
    Ok(sum / count as f64)
}
