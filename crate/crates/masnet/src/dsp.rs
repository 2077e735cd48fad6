//! STFT analysis and inverse-STFT synthesis.
//!
//! Spectrograms are one-sided STFTs taken with a periodic Hann window of 256
//! samples at hop 128 (129 frequency bins at 16 kHz). Synthesis is weighted
//! overlap-add: frames are inverse-transformed, windowed again with the
//! analysis window and normalized per sample by the accumulated squared
//! window, which makes `istft(stft(x))` exact to FFT roundoff at every
//! sample.
//!
//! Framing uses one hop of zero pre-padding and one trailing frame beyond
//! `ceil(len/hop)`, so every input sample is covered by two windows with a
//! combined squared weight in [0.5, 1]. Frame `t` therefore covers samples
//! `[t*hop - hop, t*hop - hop + window)` and the frame count is
//! `ceil(len/hop) + 1`.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Scalar};

/// Sample rate required on all enhancement paths.
pub const SAMPLE_RATE_HZ: u32 = 16_000;
/// Analysis/synthesis window length for the standard configuration.
pub const WINDOW: usize = 256;
/// Hop between successive frames for the standard configuration.
pub const HOP: usize = 128;
/// One-sided bin count for the standard configuration (`WINDOW/2 + 1`).
pub const BINS: usize = WINDOW / 2 + 1;

const WOLA_EPSILON: f64 = 1e-8;

/// Mono waveform with a declared sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    /// Rejects non-finite samples and non-positive rates.
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::invalid_argument("sample rate must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid_argument(
                "waveform contains NaN or infinite samples",
            ));
        }
        Ok(Waveform {
            samples,
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Window/hop pair for the STFT. `hop` is always `window / 2` so the Hann
/// window satisfies constant overlap-add exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub window: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            window: WINDOW,
            hop: HOP,
        }
    }
}

impl StftConfig {
    /// 50%-overlap configuration for an even window size.
    pub fn with_window(window: usize) -> Result<Self> {
        if window < 2 || !window.is_multiple_of(2) {
            return Err(Error::invalid_argument(format!(
                "window size must be even and >= 2, got {window}"
            )));
        }
        Ok(StftConfig {
            window,
            hop: window / 2,
        })
    }

    pub fn bins(&self) -> usize {
        self.window / 2 + 1
    }

    pub fn frame_count(&self, samples: usize) -> usize {
        samples.div_ceil(self.hop) + 1
    }
}

/// Two-channel (real, imaginary) time×frequency grid.
///
/// Also used for complex ratio masks, which share the shape contract but not
/// the magnitude conventions of a spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram<S = f32> {
    pub frames: usize,
    pub bins: usize,
    pub re: Vec<S>,
    pub im: Vec<S>,
    /// Window size of the analysis that produced this grid.
    pub window: usize,
    /// Hop of the analysis that produced this grid.
    pub hop: usize,
}

impl<S: Scalar> ComplexSpectrogram<S> {
    pub fn zeros(frames: usize, bins: usize, cfg: &StftConfig) -> Self {
        ComplexSpectrogram {
            frames,
            bins,
            re: vec![S::zero(); frames * bins],
            im: vec![S::zero(); frames * bins],
            window: cfg.window,
            hop: cfg.hop,
        }
    }

    #[inline]
    pub fn idx(&self, t: usize, f: usize) -> usize {
        t * self.bins + f
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.frames == other.frames && self.bins == other.bins
    }

    pub fn validate(&self) -> Result<()> {
        if self.re.len() != self.frames * self.bins || self.im.len() != self.frames * self.bins {
            return Err(Error::invalid_argument(
                "spectrogram storage does not match frames x bins",
            ));
        }
        if self.window / 2 + 1 != self.bins {
            return Err(Error::invalid_argument(format!(
                "bin count {} does not match window {} (expected window/2 + 1)",
                self.bins, self.window
            )));
        }
        Ok(())
    }

    /// View as a 2-channel feature map (channel 0 real, channel 1 imaginary).
    pub fn to_feature_map(&self) -> FeatureMap<S> {
        let mut fm = FeatureMap::zeros(2, self.frames, self.bins);
        fm.data[..self.frames * self.bins].copy_from_slice(&self.re);
        fm.data[self.frames * self.bins..].copy_from_slice(&self.im);
        fm
    }

    /// Inverse of [`to_feature_map`]; `fm` must have exactly two channels.
    pub fn from_feature_map(fm: &FeatureMap<S>, cfg: &StftConfig) -> Self {
        assert_eq!(fm.channels, 2, "spectrogram feature maps have 2 channels");
        let n = fm.frames * fm.bins;
        ComplexSpectrogram {
            frames: fm.frames,
            bins: fm.bins,
            re: fm.data[..n].to_vec(),
            im: fm.data[n..].to_vec(),
            window: cfg.window,
            hop: cfg.hop,
        }
    }
}

/// Periodic Hann window `w[n] = 0.5*(1 - cos(2*pi*n/size))`.
///
/// For even sizes this satisfies `w[n] + w[n + size/2] == 1`, the constant
/// overlap-add identity at 50% overlap.
pub fn hann_window(size: usize) -> Result<Vec<f32>> {
    Ok(hann_window_f64(size)?.into_iter().map(|v| v as f32).collect())
}

fn hann_window_f64(size: usize) -> Result<Vec<f64>> {
    if size < 2 {
        return Err(Error::invalid_argument(format!(
            "window size must be >= 2, got {size}"
        )));
    }
    Ok((0..size)
        .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / size as f64).cos()))
        .collect())
}

/// One-sided STFT at the standard 256/128 configuration.
pub fn stft(w: &Waveform) -> Result<ComplexSpectrogram> {
    stft_with(w, &StftConfig::default())
}

/// One-sided STFT with an explicit window/hop configuration.
pub fn stft_with(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    if w.is_empty() {
        return Err(Error::invalid_argument("cannot transform an empty waveform"));
    }
    if w.sample_rate_hz != SAMPLE_RATE_HZ {
        return Err(Error::invalid_argument(format!(
            "enhancement requires {SAMPLE_RATE_HZ} Hz input, got {} Hz",
            w.sample_rate_hz
        )));
    }
    let window = hann_window_f64(cfg.window)?;
    let bins = cfg.bins();
    let frames = cfg.frame_count(w.len());
    let mut out = ComplexSpectrogram::zeros(frames, bins, cfg);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.window);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.window];

    for t in 0..frames {
        // Frame t starts at sample t*hop - hop of the unpadded signal.
        let start = t as isize * cfg.hop as isize - cfg.hop as isize;
        for (n, slot) in buf.iter_mut().enumerate() {
            let src = start + n as isize;
            let x = if src >= 0 && (src as usize) < w.len() {
                w.samples[src as usize] as f64
            } else {
                0.0
            };
            *slot = Complex64::new(window[n] * x, 0.0);
        }
        fft.process(&mut buf);
        let row = out.idx(t, 0);
        for (f, v) in buf[..bins].iter().enumerate() {
            out.re[row + f] = v.re as f32;
            out.im[row + f] = v.im as f32;
        }
    }
    Ok(out)
}

/// Weighted overlap-add synthesis.
///
/// Each frame is reconstructed from its one-sided bins by hermitian
/// mirroring, inverse-transformed, windowed with the analysis window and
/// accumulated at the hop. Samples are normalized by the summed squared
/// window; positions with accumulated weight below 1e-8 are set to zero.
/// The output is truncated (or zero-extended) to `length_hint` when given.
pub fn istft(s: &ComplexSpectrogram, length_hint: Option<usize>) -> Result<Waveform> {
    s.validate()?;
    let cfg = StftConfig {
        window: s.window,
        hop: s.hop,
    };
    let window = hann_window_f64(cfg.window)?;
    let n = cfg.window;
    let padded_len = if s.frames == 0 {
        0
    } else {
        (s.frames - 1) * cfg.hop + n
    };

    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];

    let mut num = vec![0.0f64; padded_len];
    let mut den = vec![0.0f64; padded_len];

    for t in 0..s.frames {
        let row = s.idx(t, 0);
        for (f, slot) in buf[..s.bins].iter_mut().enumerate() {
            *slot = Complex64::new(s.re[row + f] as f64, s.im[row + f] as f64);
        }
        for f in s.bins..n {
            let mirror = buf[n - f];
            buf[f] = mirror.conj();
        }
        ifft.process(&mut buf);
        let base = t * cfg.hop;
        for (nn, v) in buf.iter().enumerate() {
            // rustfft's inverse is unnormalized; apply 1/N here.
            let y = v.re / n as f64;
            num[base + nn] += window[nn] * y;
            den[base + nn] += window[nn] * window[nn];
        }
    }

    // Strip the one-hop analysis pre-padding.
    let avail = padded_len.saturating_sub(cfg.hop);
    let out_len = length_hint.unwrap_or(avail);
    let mut samples = vec![0.0f32; out_len];
    for (i, slot) in samples.iter_mut().enumerate() {
        let p = i + cfg.hop;
        if p < padded_len && den[p] >= WOLA_EPSILON {
            *slot = (num[p] / den[p]) as f32;
        }
    }
    Waveform::new(samples, SAMPLE_RATE_HZ)
}
