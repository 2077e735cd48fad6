//! Waveform-domain signal-to-noise ratio.

use crate::dsp::Waveform;
use crate::error::{Error, Result};

/// Ceiling applied when the residual is negligible.
pub const SNR_CAP_DB: f64 = 120.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrResult {
    pub snr_db: f64,
    /// True when the value was capped at [`SNR_CAP_DB`].
    pub clipped: bool,
}

/// `10*log10(sum(clean^2) / sum((clean - estimate)^2))` over whole
/// waveforms, capped at +120 dB when the residual energy falls below
/// 1e-12 of the clean energy.
pub fn snr_db(clean: &Waveform, estimate: &Waveform) -> Result<SnrResult> {
    if clean.len() != estimate.len() {
        return Err(Error::invalid_argument(format!(
            "length mismatch: clean {} vs estimate {}",
            clean.len(),
            estimate.len()
        )));
    }
    if clean.is_empty() {
        return Err(Error::invalid_argument("empty waveforms"));
    }
    let clean_energy: f64 = clean.samples.iter().map(|&v| (v as f64) * (v as f64)).sum();
    if clean_energy == 0.0 {
        return Err(Error::invalid_argument("clean signal is all zero"));
    }
    let residual_energy: f64 = clean
        .samples
        .iter()
        .zip(estimate.samples.iter())
        .map(|(&c, &e)| {
            let d = c as f64 - e as f64;
            d * d
        })
        .sum();
    if residual_energy < 1e-12 * clean_energy {
        return Ok(SnrResult {
            snr_db: SNR_CAP_DB,
            clipped: true,
        });
    }
    Ok(SnrResult {
        snr_db: (10.0 * (clean_energy / residual_energy).log10()).min(SNR_CAP_DB),
        clipped: false,
    })
}

/// Unweighted mean SNR over per-utterance results.
pub fn mean_snr_db(results: &[SnrResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().map(|r| r.snr_db).sum::<f64>() / results.len() as f64
}
