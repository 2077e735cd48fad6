//! Incremental frame-by-frame inference.
//!
//! Each layer keeps a ring buffer of its most recent
//! `(kernel_t-1)*dilation_t + 1` input frames, stored as frequency-padded
//! rows. A fresh (or reset) buffer is all zeros, which is exactly the
//! causal zero padding of batch mode, so the first pushes already match
//! the batch output on a growing input.

use crate::error::{Error, Result};
use crate::model::{Activation, LayerKind, LayerParams, LayerSpec, Mode, Network};
use crate::tensor::Scalar;

use super::{bn_eval_scales, pad_f};

/// One spectrogram frame: 2 x F for network input/output.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumFrame<S = f32> {
    pub re: Vec<S>,
    pub im: Vec<S>,
}

impl<S: Scalar> SpectrumFrame<S> {
    pub fn zeros(bins: usize) -> Self {
        SpectrumFrame {
            re: vec![S::zero(); bins],
            im: vec![S::zero(); bins],
        }
    }

    pub fn bins(&self) -> usize {
        self.re.len()
    }
}

/// Output of one push: the mask frame and the denoised frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamOutput<S = f32> {
    pub mask: SpectrumFrame<S>,
    pub denoised: SpectrumFrame<S>,
}

struct LayerState<S> {
    /// Ring capacity: (kernel_t - 1) * dilation_t + 1 input frames.
    cap: usize,
    in_channels: usize,
    pad_f: usize,
    /// `cap * in_channels * padded_bins`, allocated on the first push.
    ring: Vec<S>,
    padded_bins: usize,
}

/// Per-layer cached history for incremental inference. Single-owner: one
/// pusher at a time; may be moved across threads between pushes.
pub struct StreamState<S = f32> {
    layers: Vec<LayerState<S>>,
    bins: Option<usize>,
    frames_seen: u64,
    fma_total: u64,
}

impl<S: Scalar> StreamState<S> {
    /// Allocate the per-layer state for `net`. Ring buffers are sized on
    /// the first push, when the frequency width is known.
    pub fn new(net: &Network<S>) -> Self {
        let layers = net
            .spec
            .layers
            .iter()
            .map(|l| LayerState {
                cap: l.time_taps(),
                in_channels: l.in_channels,
                pad_f: pad_f(l),
                ring: Vec::new(),
                padded_bins: 0,
            })
            .collect();
        StreamState {
            layers,
            bins: None,
            frames_seen: 0,
            fma_total: 0,
        }
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    /// Multiply-accumulates performed since creation or the last reset.
    pub fn fma_total(&self) -> u64 {
        self.fma_total
    }

    /// Ring capacity (in frames) of the given layer's history.
    pub fn layer_capacity(&self, layer: usize) -> usize {
        self.layers[layer].cap
    }

    /// Zero all history; subsequent pushes behave like a fresh state.
    pub fn reset(&mut self) {
        for l in &mut self.layers {
            l.ring.iter_mut().for_each(|v| *v = S::zero());
        }
        self.frames_seen = 0;
        self.fma_total = 0;
    }

    /// Test hook: shrink one ring buffer below its required capacity.
    #[doc(hidden)]
    pub fn corrupt_ring_buffer_for_test(&mut self) {
        if let Some(l) = self.layers.iter_mut().find(|l| l.cap > 1) {
            l.cap -= 1;
            if !l.ring.is_empty() {
                l.ring.truncate(l.cap * l.in_channels * l.padded_bins);
            }
        }
    }

    fn ensure_allocated(&mut self, bins: usize) -> Result<()> {
        match self.bins {
            None => {
                for l in &mut self.layers {
                    l.padded_bins = bins + 2 * l.pad_f;
                    l.ring = vec![S::zero(); l.cap * l.in_channels * l.padded_bins];
                }
                self.bins = Some(bins);
                Ok(())
            }
            Some(b) if b == bins => Ok(()),
            Some(b) => Err(Error::invalid_argument(format!(
                "frame width {bins} does not match stream width {b}"
            ))),
        }
    }

    /// Push one spectrogram frame and get the mask and denoised frames for
    /// the same position. Equals column `frames_seen` of the batch forward
    /// pass over all frames pushed so far.
    pub fn push(&mut self, net: &Network<S>, frame: &SpectrumFrame<S>) -> Result<StreamOutput<S>> {
        if net.mode != Mode::Eval {
            return Err(Error::InvalidState(
                "streaming requires the network in eval mode".into(),
            ));
        }
        if net.spec.layers.len() != self.layers.len() {
            return Err(Error::InvalidState(
                "stream state does not belong to this network".into(),
            ));
        }
        let bins = frame.bins();
        if frame.im.len() != bins || bins == 0 {
            return Err(Error::invalid_argument("malformed spectrum frame"));
        }
        self.ensure_allocated(bins)?;

        // Layer input: channel-major [re..., im...].
        let mut cur: Vec<S> = Vec::with_capacity(2 * bins);
        cur.extend_from_slice(&frame.re);
        cur.extend_from_slice(&frame.im);

        for (state, (l, params)) in self
            .layers
            .iter_mut()
            .zip(net.spec.layers.iter().zip(net.layers.iter()))
        {
            cur = run_layer_frame(state, l, params, &cur, bins, self.frames_seen, &mut self.fma_total);
        }
        self.frames_seen += 1;

        let mask = SpectrumFrame {
            re: cur[..bins].to_vec(),
            im: cur[bins..].to_vec(),
        };
        let mut denoised = SpectrumFrame::zeros(bins);
        for f in 0..bins {
            let (mr, mi) = (mask.re[f], mask.im[f]);
            let (nr, ni) = (frame.re[f], frame.im[f]);
            denoised.re[f] = mr * nr - mi * ni;
            denoised.im[f] = mr * ni + mi * nr;
        }
        Ok(StreamOutput { mask, denoised })
    }
}

/// Write the layer input frame into the ring and compute one output frame.
/// Reduction order matches batch mode exactly (kernel taps, then input
/// channels).
fn run_layer_frame<S: Scalar>(
    state: &mut LayerState<S>,
    l: &LayerSpec,
    params: &LayerParams<S>,
    input: &[S],
    bins: usize,
    t: u64,
    fma: &mut u64,
) -> Vec<S> {
    let pb = state.padded_bins;
    let cap = state.cap;
    let slot = (t % cap as u64) as usize;
    for c in 0..state.in_channels {
        let base = (slot * state.in_channels + c) * pb + state.pad_f;
        state.ring[base..base + bins].copy_from_slice(&input[c * bins..(c + 1) * bins]);
    }

    let (kt, kf) = (l.kernel_t, l.kernel_f);
    let (dt, df) = (l.dilation_t, l.dilation_f);
    // Ring slot holding the input frame for kernel tap j: the frame
    // (kernel_t-1-j)*dilation_t steps in the past. Slots never written yet
    // still hold the zero fill, matching causal padding.
    let tap_slot = |j: usize| -> usize {
        let off = (kt - 1 - j) * dt;
        ((t + cap as u64 - off as u64) % cap as u64) as usize
    };

    match params {
        LayerParams::Conv2d { weight, bias, bn } => {
            let inc = l.in_channels;
            let taps = (kt * kf * inc) as u64;
            let mut out = vec![S::zero(); l.out_channels * bins];
            for o in 0..l.out_channels {
                let w_o = &weight.data[o * inc * kt * kf..(o + 1) * inc * kt * kf];
                let b = bias.as_ref().map_or(S::zero(), |b| b[o]);
                for f in 0..bins {
                    let mut acc = b;
                    for j in 0..kt {
                        let s_base = tap_slot(j) * inc * pb + f;
                        for k in 0..kf {
                            let base = s_base + k * df;
                            let w_jk = j * kf + k;
                            for c in 0..inc {
                                acc += w_o[c * kt * kf + w_jk] * state.ring[c * pb + base];
                            }
                        }
                    }
                    out[o * bins + f] = acc;
                    *fma += taps;
                }
            }
            if let Some(bn) = bn {
                bn_frame(&mut out, bins, bn);
            }
            if l.activation == Activation::Relu {
                relu_frame(&mut out);
            }
            out
        }
        LayerParams::MasBlock {
            depthwise,
            bn_dw,
            pointwise,
            bn_pw,
        } => {
            let ch = l.in_channels;
            let taps = (kt * kf) as u64;
            let mut dw = vec![S::zero(); ch * bins];
            for c in 0..ch {
                let w_c = &depthwise.data[c * kt * kf..(c + 1) * kt * kf];
                for f in 0..bins {
                    let mut acc = S::zero();
                    for j in 0..kt {
                        let base = (tap_slot(j) * ch + c) * pb + f;
                        for k in 0..kf {
                            acc += w_c[j * kf + k] * state.ring[base + k * df];
                        }
                    }
                    dw[c * bins + f] = acc;
                    *fma += taps;
                }
            }
            bn_frame(&mut dw, bins, bn_dw);
            relu_frame(&mut dw);

            let mut out = vec![S::zero(); l.out_channels * bins];
            for o in 0..l.out_channels {
                let w_o = &pointwise.data[o * ch..(o + 1) * ch];
                for f in 0..bins {
                    let mut acc = S::zero();
                    for (c, &w) in w_o.iter().enumerate() {
                        acc += w * dw[c * bins + f];
                    }
                    out[o * bins + f] = acc;
                    *fma += ch as u64;
                }
            }
            bn_frame(&mut out, bins, bn_pw);
            relu_frame(&mut out);
            if l.kind == LayerKind::ResidualMasBlock {
                for (o, i) in out.iter_mut().zip(input.iter()) {
                    *o += *i;
                }
            }
            out
        }
    }
}

fn bn_frame<S: Scalar>(frame: &mut [S], bins: usize, bn: &crate::model::BatchNorm<S>) {
    let scales = bn_eval_scales(bn);
    for (c, chunk) in frame.chunks_exact_mut(bins).enumerate() {
        let (mean, scale, beta) = (bn.running_mean[c], scales[c], bn.beta[c]);
        for v in chunk {
            *v = (*v - mean) * scale + beta;
        }
    }
}

fn relu_frame<S: Scalar>(frame: &mut [S]) {
    for v in frame {
        if *v < S::zero() {
            *v = S::zero();
        }
    }
}
