//! Desk-scale supervised training: spectrogram MSE loss, hand-derived
//! backpropagation through every layer type, Adam, and batchnorm statistics
//! handling.
//!
//! Gradient correctness is pinned by central finite differences in the
//! integration tests; the numeric kernels are generic so those checks run
//! in f64 while production training stays f32.

pub mod synth;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::{stft_with, ComplexSpectrogram, StftConfig, Waveform};
use crate::engine::{
    apply_mask, conv2d_on_padded, depthwise_on_padded, forward_batch, pad_f, pad_input, pad_t,
    pointwise_forward,
};
use crate::error::{Error, Result};
use crate::model::{
    Activation, BatchNorm, LayerKind, LayerParams, LayerSpec, Mode, Network,
};
use crate::tensor::{FeatureMap, Scalar};

/// Optimizer and batching hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
    pub max_samples_per_utterance: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 16,
            epochs: 1,
            bn_epsilon: 1e-5,
            bn_momentum: 0.1,
            max_samples_per_utterance: 3 * 16384,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.learning_rate) {
            return Err(Error::invalid_argument("learning_rate must be positive"));
        }
        if !(0.0 < self.beta1 && self.beta1 < 1.0) || !(0.0 < self.beta2 && self.beta2 < 1.0) {
            return Err(Error::invalid_argument("beta1/beta2 must lie in (0, 1)"));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.max_samples_per_utterance == 0 {
            return Err(Error::invalid_argument(
                "batch_size, epochs and max_samples_per_utterance must be positive",
            ));
        }
        if !positive(self.bn_epsilon) || !positive(self.adam_epsilon) {
            return Err(Error::invalid_argument("epsilons must be positive"));
        }
        if !(0.0 < self.bn_momentum && self.bn_momentum <= 1.0) {
            return Err(Error::invalid_argument("bn_momentum must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Named gradient slots in the network's trainable-tensor order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S> {
    pub entries: Vec<(String, Vec<S>)>,
}

impl<S: Scalar> Gradients<S> {
    pub fn zeros_like(net: &Network<S>) -> Self {
        let mut entries = Vec::new();
        net.visit_trainables(|name, data| entries.push((name.to_string(), vec![S::zero(); data.len()])));
        Gradients { entries }
    }

    pub fn get(&self, name: &str) -> Option<&[S]> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    fn slot_mut(&mut self, name: &str) -> &mut Vec<S> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
            .expect("gradient slot exists")
    }

    pub fn has_non_finite(&self) -> bool {
        self.entries
            .iter()
            .any(|(_, v)| v.iter().any(|x| !x.is_finite()))
    }
}

impl<S: Scalar> Network<S> {
    /// Read-only counterpart of `visit_trainables_mut`, same order.
    pub fn visit_trainables(&self, mut f: impl FnMut(&str, &[S])) {
        for (i, layer) in self.layers.iter().enumerate() {
            let p = format!("layers.{i}");
            match layer {
                LayerParams::Conv2d { weight, bias, bn } => {
                    f(&format!("{p}.weight"), &weight.data);
                    if let Some(b) = bias {
                        f(&format!("{p}.bias"), b);
                    }
                    if let Some(bn) = bn {
                        f(&format!("{p}.bn.gamma"), &bn.gamma);
                        f(&format!("{p}.bn.beta"), &bn.beta);
                    }
                }
                LayerParams::MasBlock {
                    depthwise,
                    bn_dw,
                    pointwise,
                    bn_pw,
                } => {
                    f(&format!("{p}.depthwise.weight"), &depthwise.data);
                    f(&format!("{p}.bn1.gamma"), &bn_dw.gamma);
                    f(&format!("{p}.bn1.beta"), &bn_dw.beta);
                    f(&format!("{p}.pointwise.weight"), &pointwise.data);
                    f(&format!("{p}.bn2.gamma"), &bn_pw.gamma);
                    f(&format!("{p}.bn2.beta"), &bn_pw.beta);
                }
            }
        }
    }

    /// Set every batchnorm epsilon (training honors `TrainConfig::bn_epsilon`).
    pub fn set_bn_epsilon(&mut self, epsilon: f64) {
        let eps = S::from_f64(epsilon);
        for layer in &mut self.layers {
            match layer {
                LayerParams::Conv2d { bn: Some(bn), .. } => bn.epsilon = eps,
                LayerParams::MasBlock { bn_dw, bn_pw, .. } => {
                    bn_dw.epsilon = eps;
                    bn_pw.epsilon = eps;
                }
                _ => {}
            }
        }
    }
}

/// Mean squared error over real and imaginary parts, Eq.-style
/// `(1/(T*F)) * sum((Re d)^2 + (Im d)^2)`.
pub fn loss_mse<S: Scalar>(xhat: &ComplexSpectrogram<S>, x: &ComplexSpectrogram<S>) -> Result<S> {
    if !xhat.same_shape(x) {
        return Err(Error::invalid_argument("loss operands differ in shape"));
    }
    let mut sum = 0.0f64;
    for i in 0..xhat.re.len() {
        let dr = xhat.re[i].as_f64() - x.re[i].as_f64();
        let di = xhat.im[i].as_f64() - x.im[i].as_f64();
        sum += dr * dr + di * di;
    }
    Ok(S::from_f64(sum / (xhat.frames * xhat.bins) as f64))
}

/// Per-channel batch statistics used by one normalization stage.
#[derive(Debug, Clone)]
pub struct BnStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

enum LayerCache<S> {
    Conv {
        input: Vec<FeatureMap<S>>,
        pre_bn: Vec<FeatureMap<S>>,
        bn_stats: Option<BnStats<S>>,
        post_act: Vec<FeatureMap<S>>,
    },
    Mas {
        input: Vec<FeatureMap<S>>,
        dw_pre_bn: Vec<FeatureMap<S>>,
        bn1_stats: BnStats<S>,
        dw_post: Vec<FeatureMap<S>>,
        pw_pre_bn: Vec<FeatureMap<S>>,
        bn2_stats: BnStats<S>,
        pw_post: Vec<FeatureMap<S>>,
    },
}

/// Intermediates retained by [`forward_train`] for [`backward`].
pub struct TrainCache<S> {
    layers: Vec<LayerCache<S>>,
    batch: usize,
    frames: usize,
    bins: usize,
}

fn batch_bn_stats<S: Scalar>(items: &[FeatureMap<S>]) -> BnStats<S> {
    let channels = items[0].channels;
    let plane = items[0].frames * items[0].bins;
    let n = (items.len() * plane) as f64;
    let mut mean = vec![S::zero(); channels];
    let mut var = vec![S::zero(); channels];
    for c in 0..channels {
        let mut sum = 0.0f64;
        for item in items {
            for v in &item.data[c * plane..(c + 1) * plane] {
                sum += v.as_f64();
            }
        }
        let mu = sum / n;
        let mut sq = 0.0f64;
        for item in items {
            for v in &item.data[c * plane..(c + 1) * plane] {
                let d = v.as_f64() - mu;
                sq += d * d;
            }
        }
        mean[c] = S::from_f64(mu);
        var[c] = S::from_f64(sq / n);
    }
    BnStats { mean, var }
}

/// Normalize in place with the given statistics; same factored form as the
/// eval path so frozen statistics reproduce eval exactly.
fn bn_apply_stats<S: Scalar>(items: &mut [FeatureMap<S>], bn: &BatchNorm<S>, stats: &BnStats<S>) {
    let channels = items[0].channels;
    let plane = items[0].frames * items[0].bins;
    for c in 0..channels {
        let scale = bn.gamma[c] / (stats.var[c] + bn.epsilon).sqrt();
        let (mean, beta) = (stats.mean[c], bn.beta[c]);
        for item in items.iter_mut() {
            for v in &mut item.data[c * plane..(c + 1) * plane] {
                *v = (*v - mean) * scale + beta;
            }
        }
    }
}

fn bn_update_running<S: Scalar>(bn: &mut BatchNorm<S>, stats: &BnStats<S>, momentum: f64) {
    let m = S::from_f64(momentum);
    let keep = S::from_f64(1.0 - momentum);
    for c in 0..bn.channels() {
        bn.running_mean[c] = keep * bn.running_mean[c] + m * stats.mean[c];
        bn.running_var[c] = keep * bn.running_var[c] + m * stats.var[c];
    }
}

fn relu_items<S: Scalar>(items: &mut [FeatureMap<S>]) {
    for item in items {
        for v in &mut item.data {
            if *v < S::zero() {
                *v = S::zero();
            }
        }
    }
}

/// Training-mode forward pass: batchnorm uses current-batch statistics and
/// updates running statistics with `bn_momentum`. Returns the mask feature
/// maps and every intermediate needed by [`backward`].
pub fn forward_train<S: Scalar>(
    net: &mut Network<S>,
    batch: &[FeatureMap<S>],
    bn_momentum: f64,
) -> Result<(Vec<FeatureMap<S>>, TrainCache<S>)> {
    if net.mode != Mode::Train {
        return Err(Error::InvalidState(
            "forward_train requires the network in train mode".into(),
        ));
    }
    if batch.is_empty() {
        return Err(Error::invalid_argument("empty training batch"));
    }
    let (frames, bins) = (batch[0].frames, batch[0].bins);
    for item in batch {
        if item.channels != 2 || item.frames != frames || item.bins != bins {
            return Err(Error::invalid_argument(
                "training batch items must share one 2xTxF shape",
            ));
        }
    }

    let mut cache_layers = Vec::with_capacity(net.spec.layers.len());
    let mut cur: Vec<FeatureMap<S>> = batch.to_vec();
    let mut discard = 0u64;
    let spec_layers = net.spec.layers.clone();
    for (l, params) in spec_layers.iter().zip(net.layers.iter_mut()) {
        match params {
            LayerParams::Conv2d { weight, bias, bn } => {
                let pre_bn: Vec<FeatureMap<S>> = cur
                    .iter()
                    .map(|x| {
                        let xp = pad_input(x, pad_t(l), pad_f(l));
                        conv2d_on_padded(
                            &xp,
                            l,
                            &weight.data,
                            bias.as_deref(),
                            x.frames,
                            x.bins,
                            &mut discard,
                        )
                    })
                    .collect();
                let mut out = pre_bn.clone();
                let bn_stats = if let Some(bn) = bn {
                    let stats = batch_bn_stats(&out);
                    bn_apply_stats(&mut out, bn, &stats);
                    bn_update_running(bn, &stats, bn_momentum);
                    Some(stats)
                } else {
                    None
                };
                if l.activation == Activation::Relu {
                    relu_items(&mut out);
                }
                cache_layers.push(LayerCache::Conv {
                    input: std::mem::replace(&mut cur, out.clone()),
                    pre_bn,
                    bn_stats,
                    post_act: out,
                });
            }
            LayerParams::MasBlock {
                depthwise,
                bn_dw,
                pointwise,
                bn_pw,
            } => {
                let dw_pre_bn: Vec<FeatureMap<S>> = cur
                    .iter()
                    .map(|x| {
                        let xp = pad_input(x, pad_t(l), pad_f(l));
                        depthwise_on_padded(&xp, l, &depthwise.data, x.frames, x.bins, &mut discard)
                    })
                    .collect();
                let mut a1 = dw_pre_bn.clone();
                let bn1_stats = batch_bn_stats(&a1);
                bn_apply_stats(&mut a1, bn_dw, &bn1_stats);
                bn_update_running(bn_dw, &bn1_stats, bn_momentum);
                relu_items(&mut a1);

                let pw_pre_bn: Vec<FeatureMap<S>> = a1
                    .iter()
                    .map(|x| pointwise_forward(x, &pointwise.data, l.out_channels, &mut discard))
                    .collect();
                let mut a2 = pw_pre_bn.clone();
                let bn2_stats = batch_bn_stats(&a2);
                bn_apply_stats(&mut a2, bn_pw, &bn2_stats);
                bn_update_running(bn_pw, &bn2_stats, bn_momentum);
                relu_items(&mut a2);

                let out: Vec<FeatureMap<S>> = if l.kind == LayerKind::ResidualMasBlock {
                    a2.iter()
                        .zip(cur.iter())
                        .map(|(a, x)| {
                            let mut o = a.clone();
                            for (ov, xv) in o.data.iter_mut().zip(x.data.iter()) {
                                *ov += *xv;
                            }
                            o
                        })
                        .collect()
                } else {
                    a2.clone()
                };
                cache_layers.push(LayerCache::Mas {
                    input: std::mem::replace(&mut cur, out),
                    dw_pre_bn,
                    bn1_stats,
                    dw_post: a1,
                    pw_pre_bn,
                    bn2_stats,
                    pw_post: a2,
                });
            }
        }
    }

    let cache = TrainCache {
        layers: cache_layers,
        batch: batch.len(),
        frames,
        bins,
    };
    Ok((cur, cache))
}

/// d(loss)/d(stage input) and parameter gradients for one normalization
/// stage. `dy` is the gradient at the BN output.
fn bn_backward<S: Scalar>(
    pre_bn: &[FeatureMap<S>],
    stats: &BnStats<S>,
    bn: &BatchNorm<S>,
    dy: &[FeatureMap<S>],
    dgamma: &mut [S],
    dbeta: &mut [S],
) -> Vec<FeatureMap<S>> {
    let channels = pre_bn[0].channels;
    let plane = pre_bn[0].frames * pre_bn[0].bins;
    let n = (pre_bn.len() * plane) as f64;
    let mut dx: Vec<FeatureMap<S>> = dy.to_vec();
    for c in 0..channels {
        let inv_std = 1.0 / (stats.var[c].as_f64() + bn.epsilon.as_f64()).sqrt();
        let mean = stats.mean[c].as_f64();
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for (z, g) in pre_bn.iter().zip(dy.iter()) {
            for (zv, gv) in z.data[c * plane..(c + 1) * plane]
                .iter()
                .zip(g.data[c * plane..(c + 1) * plane].iter())
            {
                let xhat = (zv.as_f64() - mean) * inv_std;
                sum_dy += gv.as_f64();
                sum_dy_xhat += gv.as_f64() * xhat;
            }
        }
        dgamma[c] += S::from_f64(sum_dy_xhat);
        dbeta[c] += S::from_f64(sum_dy);
        let gamma = bn.gamma[c].as_f64();
        let mean_dy = sum_dy / n;
        let mean_dy_xhat = sum_dy_xhat / n;
        for (item, (z, g)) in dx.iter_mut().zip(pre_bn.iter().zip(dy.iter())) {
            for ((ov, zv), gv) in item.data[c * plane..(c + 1) * plane]
                .iter_mut()
                .zip(z.data[c * plane..(c + 1) * plane].iter())
                .zip(g.data[c * plane..(c + 1) * plane].iter())
            {
                let xhat = (zv.as_f64() - mean) * inv_std;
                let d = gamma * inv_std * (gv.as_f64() - mean_dy - xhat * mean_dy_xhat);
                *ov = S::from_f64(d);
            }
        }
    }
    dx
}

/// Gradient of ReLU: pass where the activation output is positive.
fn relu_backward<S: Scalar>(post_act: &[FeatureMap<S>], dy: &mut [FeatureMap<S>]) {
    for (a, g) in post_act.iter().zip(dy.iter_mut()) {
        for (av, gv) in a.data.iter().zip(g.data.iter_mut()) {
            if *av <= S::zero() {
                *gv = S::zero();
            }
        }
    }
}

/// Weight, bias and input gradients of a full convolution.
fn conv2d_backward<S: Scalar>(
    input: &FeatureMap<S>,
    l: &LayerSpec,
    weight: &[S],
    dz: &FeatureMap<S>,
    dweight: &mut [S],
    dbias: Option<&mut Vec<S>>,
) -> FeatureMap<S> {
    let (kt, kf) = (l.kernel_t, l.kernel_f);
    let (dt, df) = (l.dilation_t, l.dilation_f);
    let (pt, pf) = (pad_t(l), pad_f(l));
    let inc = l.in_channels;
    let xp = pad_input(input, pt, pf);
    let mut dxp = FeatureMap::<S>::zeros(inc, xp.frames, xp.bins);

    if let Some(db) = dbias {
        for (o, slot) in db.iter_mut().enumerate() {
            let mut s = S::zero();
            for t in 0..dz.frames {
                for f in 0..dz.bins {
                    s += dz.at(o, t, f);
                }
            }
            *slot += s;
        }
    }

    for o in 0..l.out_channels {
        for c in 0..inc {
            for j in 0..kt {
                for k in 0..kf {
                    let w_idx = ((o * inc + c) * kt + j) * kf + k;
                    let w = weight[w_idx];
                    let mut dw = S::zero();
                    for t in 0..dz.frames {
                        let xrow = xp.row(c, t + j * dt);
                        let dzrow = dz.row(o, t);
                        let drow_base = dxp.idx(c, t + j * dt, 0);
                        for f in 0..dz.bins {
                            let g = dzrow[f];
                            dw += g * xrow[f + k * df];
                            dxp.data[drow_base + f + k * df] += w * g;
                        }
                    }
                    dweight[w_idx] += dw;
                }
            }
        }
    }

    crop_padded(&dxp, input.frames, input.bins, pt, pf)
}

fn depthwise_backward<S: Scalar>(
    input: &FeatureMap<S>,
    l: &LayerSpec,
    weight: &[S],
    dz: &FeatureMap<S>,
    dweight: &mut [S],
) -> FeatureMap<S> {
    let (kt, kf) = (l.kernel_t, l.kernel_f);
    let (dt, df) = (l.dilation_t, l.dilation_f);
    let (pt, pf) = (pad_t(l), pad_f(l));
    let xp = pad_input(input, pt, pf);
    let mut dxp = FeatureMap::<S>::zeros(l.in_channels, xp.frames, xp.bins);
    for c in 0..l.in_channels {
        for j in 0..kt {
            for k in 0..kf {
                let w_idx = (c * kt + j) * kf + k;
                let w = weight[w_idx];
                let mut dw = S::zero();
                for t in 0..dz.frames {
                    let xrow = xp.row(c, t + j * dt);
                    let dzrow = dz.row(c, t);
                    let drow_base = dxp.idx(c, t + j * dt, 0);
                    for f in 0..dz.bins {
                        let g = dzrow[f];
                        dw += g * xrow[f + k * df];
                        dxp.data[drow_base + f + k * df] += w * g;
                    }
                }
                dweight[w_idx] += dw;
            }
        }
    }
    crop_padded(&dxp, input.frames, input.bins, pt, pf)
}

fn pointwise_backward<S: Scalar>(
    input: &FeatureMap<S>,
    weight: &[S],
    out_channels: usize,
    dz: &FeatureMap<S>,
    dweight: &mut [S],
) -> FeatureMap<S> {
    let inc = input.channels;
    let plane = input.frames * input.bins;
    let mut dx = FeatureMap::<S>::zeros(inc, input.frames, input.bins);
    for o in 0..out_channels {
        for c in 0..inc {
            let w = weight[o * inc + c];
            let mut dw = S::zero();
            for i in 0..plane {
                let g = dz.data[o * plane + i];
                dw += g * input.data[c * plane + i];
                dx.data[c * plane + i] += w * g;
            }
            dweight[o * inc + c] += dw;
        }
    }
    dx
}

fn crop_padded<S: Scalar>(
    dxp: &FeatureMap<S>,
    frames: usize,
    bins: usize,
    pt: usize,
    pf: usize,
) -> FeatureMap<S> {
    let mut out = FeatureMap::zeros(dxp.channels, frames, bins);
    for c in 0..dxp.channels {
        for t in 0..frames {
            let src = dxp.idx(c, t + pt, pf);
            let dst = out.idx(c, t, 0);
            out.data[dst..dst + bins].copy_from_slice(&dxp.data[src..src + bins]);
        }
    }
    out
}

/// Backpropagate `grad_masks` (d loss / d mask) through the whole network.
pub fn backward<S: Scalar>(
    net: &Network<S>,
    cache: &TrainCache<S>,
    grad_masks: &[FeatureMap<S>],
) -> Result<Gradients<S>> {
    if cache.layers.len() != net.layers.len() {
        return Err(Error::InvalidState(
            "cache does not match this network".into(),
        ));
    }
    if grad_masks.len() != cache.batch
        || grad_masks
            .iter()
            .any(|g| g.frames != cache.frames || g.bins != cache.bins || g.channels != 2)
    {
        return Err(Error::InvalidState(
            "mask gradients do not match the cached forward pass".into(),
        ));
    }
    let mut grads = Gradients::zeros_like(net);
    let mut dcur: Vec<FeatureMap<S>> = grad_masks.to_vec();

    for (i, (l, params)) in net
        .spec
        .layers
        .iter()
        .zip(net.layers.iter())
        .enumerate()
        .rev()
    {
        let p = format!("layers.{i}");
        match (params, &cache.layers[i]) {
            (
                LayerParams::Conv2d { weight, bias, bn },
                LayerCache::Conv {
                    input,
                    pre_bn,
                    bn_stats,
                    post_act,
                },
            ) => {
                if l.activation == Activation::Relu {
                    relu_backward(post_act, &mut dcur);
                }
                let dz: Vec<FeatureMap<S>> = if let (Some(bn), Some(stats)) = (bn, bn_stats) {
                    let mut dgamma = vec![S::zero(); l.out_channels];
                    let mut dbeta = vec![S::zero(); l.out_channels];
                    let dz = bn_backward(pre_bn, stats, bn, &dcur, &mut dgamma, &mut dbeta);
                    add_into(grads.slot_mut(&format!("{p}.bn.gamma")), &dgamma);
                    add_into(grads.slot_mut(&format!("{p}.bn.beta")), &dbeta);
                    dz
                } else {
                    dcur
                };
                let mut dweight = vec![S::zero(); weight.data.len()];
                let mut dbias = bias.as_ref().map(|b| vec![S::zero(); b.len()]);
                let mut dinput = Vec::with_capacity(input.len());
                for (x, g) in input.iter().zip(dz.iter()) {
                    dinput.push(conv2d_backward(
                        x,
                        l,
                        &weight.data,
                        g,
                        &mut dweight,
                        dbias.as_mut(),
                    ));
                }
                add_into(grads.slot_mut(&format!("{p}.weight")), &dweight);
                if let Some(db) = dbias {
                    add_into(grads.slot_mut(&format!("{p}.bias")), &db);
                }
                dcur = dinput;
            }
            (
                LayerParams::MasBlock {
                    depthwise,
                    bn_dw,
                    pointwise,
                    bn_pw,
                },
                LayerCache::Mas {
                    input,
                    dw_pre_bn,
                    bn1_stats,
                    dw_post,
                    pw_pre_bn,
                    bn2_stats,
                    pw_post,
                },
            ) => {
                let residual = l.kind == LayerKind::ResidualMasBlock;
                let bypass: Option<Vec<FeatureMap<S>>> = residual.then(|| dcur.clone());

                relu_backward(pw_post, &mut dcur);
                let mut dgamma2 = vec![S::zero(); l.out_channels];
                let mut dbeta2 = vec![S::zero(); l.out_channels];
                let dz2 = bn_backward(pw_pre_bn, bn2_stats, bn_pw, &dcur, &mut dgamma2, &mut dbeta2);
                add_into(grads.slot_mut(&format!("{p}.bn2.gamma")), &dgamma2);
                add_into(grads.slot_mut(&format!("{p}.bn2.beta")), &dbeta2);

                let mut dpw = vec![S::zero(); pointwise.data.len()];
                let mut da1: Vec<FeatureMap<S>> = Vec::with_capacity(dz2.len());
                for (a1, g) in dw_post.iter().zip(dz2.iter()) {
                    da1.push(pointwise_backward(
                        a1,
                        &pointwise.data,
                        l.out_channels,
                        g,
                        &mut dpw,
                    ));
                }
                add_into(grads.slot_mut(&format!("{p}.pointwise.weight")), &dpw);

                relu_backward(dw_post, &mut da1);
                let mut dgamma1 = vec![S::zero(); l.in_channels];
                let mut dbeta1 = vec![S::zero(); l.in_channels];
                let dz1 = bn_backward(dw_pre_bn, bn1_stats, bn_dw, &da1, &mut dgamma1, &mut dbeta1);
                add_into(grads.slot_mut(&format!("{p}.bn1.gamma")), &dgamma1);
                add_into(grads.slot_mut(&format!("{p}.bn1.beta")), &dbeta1);

                let mut ddw = vec![S::zero(); depthwise.data.len()];
                let mut dinput = Vec::with_capacity(input.len());
                for (x, g) in input.iter().zip(dz1.iter()) {
                    dinput.push(depthwise_backward(x, l, &depthwise.data, g, &mut ddw));
                }
                add_into(grads.slot_mut(&format!("{p}.depthwise.weight")), &ddw);

                if let Some(bypass) = bypass {
                    for (dx, db) in dinput.iter_mut().zip(bypass.iter()) {
                        for (a, b) in dx.data.iter_mut().zip(db.data.iter()) {
                            *a += *b;
                        }
                    }
                }
                dcur = dinput;
            }
            _ => {
                return Err(Error::InvalidState(
                    "cache layer kind does not match the network".into(),
                ))
            }
        }
    }
    Ok(grads)
}

fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d += *s;
    }
}

/// First/second moment accumulators for Adam.
#[derive(Debug, Clone)]
pub struct AdamState<S> {
    m: Gradients<S>,
    v: Gradients<S>,
    pub step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(net: &Network<S>) -> Self {
        AdamState {
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            step: 0,
        }
    }
}

/// One Adam update with bias correction.
pub fn adam_step<S: Scalar>(
    net: &mut Network<S>,
    grads: &Gradients<S>,
    state: &mut AdamState<S>,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.has_non_finite() {
        return Err(Error::TrainingDiverged(
            "non-finite gradient encountered".into(),
        ));
    }
    state.step += 1;
    let t = state.step;
    let b1 = S::from_f64(cfg.beta1);
    let b2 = S::from_f64(cfg.beta2);
    let one = S::one();
    let lr = S::from_f64(cfg.learning_rate);
    let eps = S::from_f64(cfg.adam_epsilon);
    let bc1 = S::from_f64(1.0 - cfg.beta1.powi(t as i32));
    let bc2 = S::from_f64(1.0 - cfg.beta2.powi(t as i32));

    let mut idx = 0usize;
    let mut mismatch = false;
    net.visit_trainables_mut(|name, params| {
        let (gname, g) = &grads.entries[idx];
        let (_, m) = &mut state.m.entries[idx];
        let v = &mut state.v.entries[idx].1;
        if gname != name || g.len() != params.len() {
            mismatch = true;
            return;
        }
        for i in 0..params.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        idx += 1;
    });
    if mismatch || idx != grads.entries.len() {
        return Err(Error::InvalidState(
            "gradient layout does not match the network".into(),
        ));
    }
    Ok(())
}

/// Batch loss and d(loss)/d(mask) for masks produced on `noisy` against
/// `clean`. All maps are 2-channel (real, imaginary). The batch loss is the
/// mean of per-utterance losses.
pub fn mask_loss_and_grad<S: Scalar>(
    masks: &[FeatureMap<S>],
    noisy: &[FeatureMap<S>],
    clean: &[FeatureMap<S>],
) -> (f64, Vec<FeatureMap<S>>) {
    let b = masks.len();
    let plane = masks[0].frames * masks[0].bins;
    let norm = 2.0 / (b * plane) as f64;
    let mut total = 0.0f64;
    let mut dmasks = Vec::with_capacity(b);
    for ((m, n), c) in masks.iter().zip(noisy.iter()).zip(clean.iter()) {
        let mut dm = FeatureMap::<S>::zeros(2, m.frames, m.bins);
        let mut sum = 0.0f64;
        for i in 0..plane {
            let (mr, mi) = (m.data[i].as_f64(), m.data[plane + i].as_f64());
            let (nr, ni) = (n.data[i].as_f64(), n.data[plane + i].as_f64());
            let (cr, ci) = (c.data[i].as_f64(), c.data[plane + i].as_f64());
            let xr = mr * nr - mi * ni;
            let xi = mr * ni + mi * nr;
            let dr = xr - cr;
            let di = xi - ci;
            sum += dr * dr + di * di;
            // d loss / d mask through the complex product.
            let dxr = norm * dr;
            let dxi = norm * di;
            dm.data[i] = S::from_f64(dxr * nr + dxi * ni);
            dm.data[plane + i] = S::from_f64(-dxr * ni + dxi * nr);
        }
        total += sum / plane as f64;
        dmasks.push(dm);
    }
    (total / b as f64, dmasks)
}

/// One optimization step over a batch of (noisy, clean) feature maps.
/// Returns the batch loss.
pub fn train_step<S: Scalar>(
    net: &mut Network<S>,
    noisy: &[FeatureMap<S>],
    clean: &[FeatureMap<S>],
    adam: &mut AdamState<S>,
    cfg: &TrainConfig,
) -> Result<f64> {
    let (masks, cache) = forward_train(net, noisy, cfg.bn_momentum)?;
    let (loss, dmasks) = mask_loss_and_grad(&masks, noisy, clean);
    if !loss.is_finite() {
        return Err(Error::TrainingDiverged(format!("loss became {loss}")));
    }
    let grads = backward(net, &cache, &dmasks)?;
    adam_step(net, &grads, adam, cfg)?;
    Ok(loss)
}

/// Per-epoch loss record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Outcome of [`fit`]: the checkpoint with minimum validation loss plus the
/// loss history.
pub struct FitResult {
    pub best: Network<f32>,
    pub best_epoch: usize,
    pub initial_val_loss: f64,
    pub history: Vec<EpochStats>,
}

fn fix_length(samples: &[f32], target: usize) -> Vec<f32> {
    if samples.len() >= target {
        samples[..target].to_vec()
    } else {
        let pad = target - samples.len();
        let left = pad / 2;
        let mut out = vec![0.0f32; target];
        out[left..left + samples.len()].copy_from_slice(samples);
        out
    }
}

fn prepare_pairs(
    set: &[(Waveform, Waveform)],
    cfg: &TrainConfig,
    stft_cfg: &StftConfig,
) -> Result<Vec<(FeatureMap<f32>, FeatureMap<f32>)>> {
    set.iter()
        .map(|(noisy, clean)| {
            if noisy.len() != clean.len() {
                return Err(Error::invalid_argument(
                    "noisy/clean pair lengths differ",
                ));
            }
            let n = Waveform::new(
                fix_length(&noisy.samples, cfg.max_samples_per_utterance),
                noisy.sample_rate_hz,
            )?;
            let c = Waveform::new(
                fix_length(&clean.samples, cfg.max_samples_per_utterance),
                clean.sample_rate_hz,
            )?;
            Ok((
                stft_with(&n, stft_cfg)?.to_feature_map(),
                stft_with(&c, stft_cfg)?.to_feature_map(),
            ))
        })
        .collect()
}

fn validation_loss(
    net: &Network<f32>,
    pairs: &[(FeatureMap<f32>, FeatureMap<f32>)],
    stft_cfg: &StftConfig,
) -> Result<f64> {
    let mut total = 0.0f64;
    for (noisy, clean) in pairs {
        let noisy_spec = ComplexSpectrogram::from_feature_map(noisy, stft_cfg);
        let clean_spec = ComplexSpectrogram::from_feature_map(clean, stft_cfg);
        let mask = forward_batch(net, &noisy_spec)?;
        let denoised = apply_mask(&mask, &noisy_spec)?;
        total += loss_mse(&denoised, &clean_spec)? as f64;
    }
    Ok(total / pairs.len() as f64)
}

/// Train on (noisy, clean) waveform pairs with shuffled mini-batches and
/// per-epoch validation; returns the checkpoint with minimum validation
/// loss. Deterministic given `cfg.seed`.
pub fn fit(
    net: &mut Network<f32>,
    train_set: &[(Waveform, Waveform)],
    val_set: &[(Waveform, Waveform)],
    cfg: &TrainConfig,
    stft_cfg: &StftConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid_argument(
            "training and validation sets must be non-empty",
        ));
    }
    net.set_bn_epsilon(cfg.bn_epsilon);
    let train_pairs = prepare_pairs(train_set, cfg, stft_cfg)?;
    let val_pairs = prepare_pairs(val_set, cfg, stft_cfg)?;

    net.set_mode(Mode::Eval);
    let initial_val_loss = validation_loss(net, &val_pairs, stft_cfg)?;

    let mut adam = AdamState::new(net);
    let mut best: Option<(f64, usize, Network<f32>)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        // Batch composition is a pure function of (seed, epoch).
        let mut order: Vec<usize> = (0..train_pairs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(
            cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        order.shuffle(&mut rng);

        net.set_mode(Mode::Train);
        let mut loss_sum = 0.0f64;
        let mut counted = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let noisy: Vec<FeatureMap<f32>> =
                chunk.iter().map(|&i| train_pairs[i].0.clone()).collect();
            let clean: Vec<FeatureMap<f32>> =
                chunk.iter().map(|&i| train_pairs[i].1.clone()).collect();
            let loss = train_step(net, &noisy, &clean, &mut adam, cfg)?;
            loss_sum += loss * chunk.len() as f64;
            counted += chunk.len();
        }
        let train_loss = loss_sum / counted as f64;

        net.set_mode(Mode::Eval);
        let val_loss = validation_loss(net, &val_pairs, stft_cfg)?;
        if !val_loss.is_finite() || !train_loss.is_finite() {
            return Err(Error::TrainingDiverged(format!(
                "non-finite loss at epoch {epoch}"
            )));
        }
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, net.clone()));
        }
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
    }

    let (_, best_epoch, best) = best.expect("at least one epoch ran");
    Ok(FitResult {
        best,
        best_epoch,
        initial_val_loss,
        history,
    })
}
