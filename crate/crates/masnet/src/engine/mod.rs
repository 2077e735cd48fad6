//! Batch (layer-by-layer) and incremental (frame-by-frame) inference.
//!
//! Both modes materialize their zero padding and reduce every convolution in
//! the same fixed order (kernel taps outer, input channels inner), so the
//! per-element float op sequence is identical and stream output matches
//! batch output bit for bit. Multiply-accumulate counters include padded
//! taps, which is exactly what the analytical cost model counts.

mod stream;

pub use stream::{SpectrumFrame, StreamOutput, StreamState};

use crate::dsp::{istft, stft_with, ComplexSpectrogram, StftConfig, Waveform};
use crate::error::{Error, Result};
use crate::model::{Activation, BatchNorm, LayerKind, LayerParams, LayerSpec, Mode, Network};
use crate::tensor::{FeatureMap, Scalar};

/// Complex ratio mask; shares the grid layout of a spectrogram but its
/// values are unbounded (the output layer is linear).
pub type ComplexMask<S = f32> = ComplexSpectrogram<S>;

/// Inference strategy for whole-waveform enhancement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferenceMode {
    Batch,
    Stream,
}

impl std::str::FromStr for InferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(InferenceMode::Batch),
            "stream" => Ok(InferenceMode::Stream),
            _ => Err(Error::invalid_argument(format!(
                "unknown mode {s:?}; expected batch or stream"
            ))),
        }
    }
}

pub(crate) fn pad_t(l: &LayerSpec) -> usize {
    (l.kernel_t - 1) * l.dilation_t
}

pub(crate) fn pad_f(l: &LayerSpec) -> usize {
    (l.kernel_f - 1) * l.dilation_f / 2
}

/// Copy `x` into a zero-padded map: causal padding on the time axis (start
/// only), symmetric padding on the frequency axis.
pub(crate) fn pad_input<S: Scalar>(x: &FeatureMap<S>, pt: usize, pf: usize) -> FeatureMap<S> {
    let mut out = FeatureMap::zeros(x.channels, x.frames + pt, x.bins + 2 * pf);
    for c in 0..x.channels {
        for t in 0..x.frames {
            let src = x.row(c, t);
            let base = out.idx(c, t + pt, pf);
            out.data[base..base + x.bins].copy_from_slice(src);
        }
    }
    out
}

/// Full 2-D convolution over a padded input. Reduction order per output
/// element: kernel_t, kernel_f, then input channel.
pub(crate) fn conv2d_on_padded<S: Scalar>(
    xp: &FeatureMap<S>,
    l: &LayerSpec,
    weight: &[S],
    bias: Option<&[S]>,
    frames: usize,
    bins: usize,
    fma: &mut u64,
) -> FeatureMap<S> {
    let (kt, kf) = (l.kernel_t, l.kernel_f);
    let (dt, df) = (l.dilation_t, l.dilation_f);
    let inc = l.in_channels;
    let c_stride = xp.frames * xp.bins;
    let taps = (kt * kf * inc) as u64;
    let mut out = FeatureMap::zeros(l.out_channels, frames, bins);
    for o in 0..l.out_channels {
        let w_o = &weight[o * inc * kt * kf..(o + 1) * inc * kt * kf];
        let b = bias.map_or(S::zero(), |b| b[o]);
        for t in 0..frames {
            for f in 0..bins {
                let mut acc = b;
                for j in 0..kt {
                    let row = (t + j * dt) * xp.bins + f;
                    for k in 0..kf {
                        let base = row + k * df;
                        let w_jk = j * kf + k;
                        for c in 0..inc {
                            acc += w_o[c * kt * kf + w_jk] * xp.data[c * c_stride + base];
                        }
                    }
                }
                *out.at_mut(o, t, f) = acc;
                *fma += taps;
            }
        }
    }
    out
}

/// Per-channel spatial convolution (no cross-channel mixing) over a padded
/// input.
pub(crate) fn depthwise_on_padded<S: Scalar>(
    xp: &FeatureMap<S>,
    l: &LayerSpec,
    weight: &[S],
    frames: usize,
    bins: usize,
    fma: &mut u64,
) -> FeatureMap<S> {
    let (kt, kf) = (l.kernel_t, l.kernel_f);
    let (dt, df) = (l.dilation_t, l.dilation_f);
    let taps = (kt * kf) as u64;
    let mut out = FeatureMap::zeros(l.in_channels, frames, bins);
    for c in 0..l.in_channels {
        let w_c = &weight[c * kt * kf..(c + 1) * kt * kf];
        let c_base = c * xp.frames * xp.bins;
        for t in 0..frames {
            for f in 0..bins {
                let mut acc = S::zero();
                for j in 0..kt {
                    let row = c_base + (t + j * dt) * xp.bins + f;
                    for k in 0..kf {
                        acc += w_c[j * kf + k] * xp.data[row + k * df];
                    }
                }
                *out.at_mut(c, t, f) = acc;
                *fma += taps;
            }
        }
    }
    out
}

/// 1x1 channel-mixing convolution; operates on the unpadded map.
pub(crate) fn pointwise_forward<S: Scalar>(
    x: &FeatureMap<S>,
    weight: &[S],
    out_channels: usize,
    fma: &mut u64,
) -> FeatureMap<S> {
    let inc = x.channels;
    let plane = x.frames * x.bins;
    let mut out = FeatureMap::zeros(out_channels, x.frames, x.bins);
    for o in 0..out_channels {
        let w_o = &weight[o * inc..(o + 1) * inc];
        let o_base = o * plane;
        for i in 0..plane {
            let mut acc = S::zero();
            for (c, &w) in w_o.iter().enumerate() {
                acc += w * x.data[c * plane + i];
            }
            out.data[o_base + i] = acc;
            *fma += inc as u64;
        }
    }
    out
}

/// `gamma / sqrt(running_var + eps)` per channel; shared by both inference
/// modes so the op sequence stays identical.
pub(crate) fn bn_eval_scales<S: Scalar>(bn: &BatchNorm<S>) -> Vec<S> {
    bn.gamma
        .iter()
        .zip(bn.running_var.iter())
        .map(|(&g, &v)| g / (v + bn.epsilon).sqrt())
        .collect()
}

pub(crate) fn bn_eval_inplace<S: Scalar>(x: &mut FeatureMap<S>, bn: &BatchNorm<S>) {
    let scales = bn_eval_scales(bn);
    let plane = x.frames * x.bins;
    for (c, &scale) in scales.iter().enumerate() {
        let (mean, beta) = (bn.running_mean[c], bn.beta[c]);
        for v in &mut x.data[c * plane..(c + 1) * plane] {
            *v = (*v - mean) * scale + beta;
        }
    }
}

pub(crate) fn relu_inplace<S: Scalar>(x: &mut FeatureMap<S>) {
    for v in &mut x.data {
        if *v < S::zero() {
            *v = S::zero();
        }
    }
}

fn apply_activation<S: Scalar>(x: &mut FeatureMap<S>, act: Activation) {
    if act == Activation::Relu {
        relu_inplace(x);
    }
}

/// Run one layer in eval mode (running batchnorm statistics).
pub(crate) fn run_layer_eval<S: Scalar>(
    l: &LayerSpec,
    params: &LayerParams<S>,
    x: &FeatureMap<S>,
    fma: &mut u64,
) -> FeatureMap<S> {
    match params {
        LayerParams::Conv2d { weight, bias, bn } => {
            let xp = pad_input(x, pad_t(l), pad_f(l));
            let mut z = conv2d_on_padded(
                &xp,
                l,
                &weight.data,
                bias.as_deref(),
                x.frames,
                x.bins,
                fma,
            );
            if let Some(bn) = bn {
                bn_eval_inplace(&mut z, bn);
            }
            apply_activation(&mut z, l.activation);
            z
        }
        LayerParams::MasBlock {
            depthwise,
            bn_dw,
            pointwise,
            bn_pw,
        } => {
            let xp = pad_input(x, pad_t(l), pad_f(l));
            let mut z = depthwise_on_padded(&xp, l, &depthwise.data, x.frames, x.bins, fma);
            bn_eval_inplace(&mut z, bn_dw);
            relu_inplace(&mut z);
            let mut z = pointwise_forward(&z, &pointwise.data, l.out_channels, fma);
            bn_eval_inplace(&mut z, bn_pw);
            relu_inplace(&mut z);
            if l.kind == LayerKind::ResidualMasBlock {
                for (o, i) in z.data.iter_mut().zip(x.data.iter()) {
                    *o += *i;
                }
            }
            z
        }
    }
}

fn validate_input<S: Scalar>(net: &Network<S>, x: &ComplexSpectrogram<S>) -> Result<()> {
    if net.mode != Mode::Eval {
        return Err(Error::InvalidState(
            "inference requires the network in eval mode".into(),
        ));
    }
    if x.frames == 0 || x.bins == 0 {
        return Err(Error::invalid_argument("empty spectrogram"));
    }
    if x.re.len() != x.frames * x.bins || x.im.len() != x.frames * x.bins {
        return Err(Error::invalid_argument(
            "spectrogram storage does not match frames x bins",
        ));
    }
    if x.re.iter().chain(x.im.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid_argument("spectrogram contains NaN or Inf"));
    }
    Ok(())
}

/// Layer-by-layer forward pass producing a complex ratio mask.
pub fn forward_batch<S: Scalar>(
    net: &Network<S>,
    x: &ComplexSpectrogram<S>,
) -> Result<ComplexMask<S>> {
    forward_batch_counted(net, x).map(|(mask, _)| mask)
}

/// [`forward_batch`] with an exact multiply-accumulate counter.
pub fn forward_batch_counted<S: Scalar>(
    net: &Network<S>,
    x: &ComplexSpectrogram<S>,
) -> Result<(ComplexMask<S>, u64)> {
    validate_input(net, x)?;
    let mut fma = 0u64;
    let mut fm = x.to_feature_map();
    for (l, params) in net.spec.layers.iter().zip(net.layers.iter()) {
        fm = run_layer_eval(l, params, &fm, &mut fma);
    }
    let cfg = StftConfig {
        window: x.window,
        hop: x.hop,
    };
    Ok((ComplexSpectrogram::from_feature_map(&fm, &cfg), fma))
}

/// Elementwise complex multiplication `mask ⊙ noisy`.
pub fn apply_mask<S: Scalar>(
    mask: &ComplexMask<S>,
    noisy: &ComplexSpectrogram<S>,
) -> Result<ComplexSpectrogram<S>> {
    if !mask.same_shape(noisy) {
        return Err(Error::invalid_argument(format!(
            "mask shape {}x{} does not match spectrogram {}x{}",
            mask.frames, mask.bins, noisy.frames, noisy.bins
        )));
    }
    let mut out = noisy.clone();
    for i in 0..out.re.len() {
        let (mr, mi) = (mask.re[i], mask.im[i]);
        let (nr, ni) = (noisy.re[i], noisy.im[i]);
        out.re[i] = mr * nr - mi * ni;
        out.im[i] = mr * ni + mi * nr;
    }
    Ok(out)
}

/// Full enhancement pipeline at the standard 256/128 STFT configuration.
pub fn enhance_waveform(net: &Network<f32>, w: &Waveform, mode: InferenceMode) -> Result<Waveform> {
    enhance_waveform_with(net, w, mode, &StftConfig::default())
}

/// Full enhancement pipeline: STFT, mask inference in the chosen mode, mask
/// application and inverse STFT truncated to the input length.
pub fn enhance_waveform_with(
    net: &Network<f32>,
    w: &Waveform,
    mode: InferenceMode,
    cfg: &StftConfig,
) -> Result<Waveform> {
    let noisy = stft_with(w, cfg)?;
    let denoised = match mode {
        InferenceMode::Batch => {
            let mask = forward_batch(net, &noisy)?;
            apply_mask(&mask, &noisy)?
        }
        InferenceMode::Stream => {
            let mut state = StreamState::new(net);
            let mut out = ComplexSpectrogram::zeros(noisy.frames, noisy.bins, cfg);
            let mut frame = SpectrumFrame::zeros(noisy.bins);
            for t in 0..noisy.frames {
                let row = t * noisy.bins;
                frame.re.copy_from_slice(&noisy.re[row..row + noisy.bins]);
                frame.im.copy_from_slice(&noisy.im[row..row + noisy.bins]);
                let pushed = state.push(net, &frame)?;
                out.re[row..row + noisy.bins].copy_from_slice(&pushed.denoised.re);
                out.im[row..row + noisy.bins].copy_from_slice(&pushed.denoised.im);
            }
            out
        }
    };
    istft(&denoised, Some(w.len()))
}
