//! Analytic gradients vs central finite differences (h = 1e-4) in f64.
//!
//! Each layer type is exercised in isolation through a minimal network, and
//! the full pipeline (mask application and the spectrogram MSE) is part of
//! the loss path in every check.

use masnet::model::{
    init_network, tiny_masnet, Activation, LayerKind, LayerSpec, Mode, Network, NetworkSpec,
};
use masnet::tensor::FeatureMap;
use masnet::training::{backward, forward_train, mask_loss_and_grad, Gradients};

const H: f64 = 1e-4;
const MOMENTUM: f64 = 0.1;

fn det_values(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
    (0..n)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 33) as f64 / (1u64 << 31) as f64 - 1.0
        })
        .collect()
}

fn random_batch(b: usize, frames: usize, bins: usize, seed: u64) -> Vec<FeatureMap<f64>> {
    (0..b)
        .map(|i| FeatureMap {
            channels: 2,
            frames,
            bins,
            data: det_values(2 * frames * bins, seed + i as u64 * 131),
        })
        .collect()
}

fn loss_of(net: &Network<f64>, noisy: &[FeatureMap<f64>], clean: &[FeatureMap<f64>]) -> f64 {
    let mut n = net.clone();
    n.set_mode(Mode::Train);
    let (masks, _) = forward_train(&mut n, noisy, MOMENTUM).unwrap();
    mask_loss_and_grad(&masks, noisy, clean).0
}

fn analytic_grads(
    net: &Network<f64>,
    noisy: &[FeatureMap<f64>],
    clean: &[FeatureMap<f64>],
) -> Gradients<f64> {
    let mut n = net.clone();
    n.set_mode(Mode::Train);
    let (masks, cache) = forward_train(&mut n, noisy, MOMENTUM).unwrap();
    let (_, dmasks) = mask_loss_and_grad(&masks, noisy, clean);
    backward(&n, &cache, &dmasks).unwrap()
}

fn perturbed(net: &Network<f64>, entry: usize, idx: usize, delta: f64) -> Network<f64> {
    let mut n = net.clone();
    let mut e = 0usize;
    n.visit_trainables_mut(|_, data| {
        if e == entry {
            data[idx] += delta;
        }
        e += 1;
    });
    n
}

/// Check every parameter of `net` (or a randomly sampled subset) against
/// central differences at relative tolerance `tol`.
fn check_gradients(
    net: &Network<f64>,
    noisy: &[FeatureMap<f64>],
    clean: &[FeatureMap<f64>],
    tol: f64,
    sample: Option<(usize, u64)>,
) {
    use rand::{Rng, SeedableRng};
    let grads = analytic_grads(net, noisy, clean);
    let mut coords: Vec<(usize, usize, String)> = Vec::new();
    for (e, (name, g)) in grads.entries.iter().enumerate() {
        for i in 0..g.len() {
            coords.push((e, i, name.clone()));
        }
    }
    if let Some((k, seed)) = sample {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        coords = (0..k)
            .map(|_| coords[rng.random_range(0..coords.len())].clone())
            .collect();
    }
    for (e, i, name) in coords {
        let lp = loss_of(&perturbed(net, e, i, H), noisy, clean);
        let lm = loss_of(&perturbed(net, e, i, -H), noisy, clean);
        let fd = (lp - lm) / (2.0 * H);
        let a = grads.entries[e].1[i];
        let denom = a.abs().max(fd.abs());
        let pass = if denom < 1e-8 {
            (a - fd).abs() < 1e-9
        } else {
            (a - fd).abs() / denom <= tol
        };
        assert!(
            pass,
            "{name}[{i}]: analytic {a:e} vs fd {fd:e} (rel {:e})",
            (a - fd).abs() / denom.max(1e-300)
        );
    }
}

fn conv_layer(
    inc: usize,
    outc: usize,
    k: (usize, usize),
    d: (usize, usize),
    bn: bool,
    act: Activation,
) -> LayerSpec {
    LayerSpec {
        kind: LayerKind::Conv2d,
        in_channels: inc,
        out_channels: outc,
        kernel_t: k.0,
        kernel_f: k.1,
        dilation_t: d.0,
        dilation_f: d.1,
        has_batchnorm: bn,
        activation: act,
    }
}

#[test]
fn single_conv_with_bias_and_mask_application() {
    // One linear conv (2->2, 3x3, dilated) is a complete network; the check
    // covers the convolution, its bias, the complex mask product and the
    // MSE loss.
    let spec = NetworkSpec {
        name: "gc-conv".into(),
        layers: vec![conv_layer(2, 2, (3, 3), (2, 1), false, Activation::Linear)],
    };
    let net = init_network::<f64>(&spec, 101).unwrap();
    let noisy = random_batch(2, 5, 6, 900);
    let clean = random_batch(2, 5, 6, 950);
    check_gradients(&net, &noisy, &clean, 1e-6, None);
}

#[test]
fn conv_with_batchnorm_and_relu() {
    let spec = NetworkSpec {
        name: "gc-bn".into(),
        layers: vec![
            conv_layer(2, 3, (3, 3), (1, 1), true, Activation::Relu),
            conv_layer(3, 2, (1, 1), (1, 1), false, Activation::Linear),
        ],
    };
    let net = init_network::<f64>(&spec, 102).unwrap();
    let noisy = random_batch(2, 4, 5, 901);
    let clean = random_batch(2, 4, 5, 951);
    check_gradients(&net, &noisy, &clean, 1e-6, None);
}

#[test]
fn mas_block_depthwise_and_pointwise() {
    let spec = NetworkSpec {
        name: "gc-mas".into(),
        layers: vec![
            conv_layer(2, 4, (1, 1), (1, 1), false, Activation::Linear),
            LayerSpec {
                kind: LayerKind::MasBlock,
                in_channels: 4,
                out_channels: 4,
                kernel_t: 3,
                kernel_f: 3,
                dilation_t: 2,
                dilation_f: 2,
                has_batchnorm: true,
                activation: Activation::Relu,
            },
            conv_layer(4, 2, (1, 1), (1, 1), false, Activation::Linear),
        ],
    };
    let net = init_network::<f64>(&spec, 103).unwrap();
    let noisy = random_batch(2, 4, 5, 902);
    let clean = random_batch(2, 4, 5, 952);
    check_gradients(&net, &noisy, &clean, 1e-6, None);
}

#[test]
fn residual_block_bypass_gradient() {
    let spec = NetworkSpec {
        name: "gc-res".into(),
        layers: vec![
            conv_layer(2, 4, (1, 1), (1, 1), false, Activation::Linear),
            LayerSpec {
                kind: LayerKind::ResidualMasBlock,
                in_channels: 4,
                out_channels: 4,
                kernel_t: 3,
                kernel_f: 1,
                dilation_t: 1,
                dilation_f: 1,
                has_batchnorm: true,
                activation: Activation::Relu,
            },
            conv_layer(4, 2, (1, 1), (1, 1), false, Activation::Linear),
        ],
    };
    let net = init_network::<f64>(&spec, 104).unwrap();
    let noisy = random_batch(2, 4, 5, 903);
    let clean = random_batch(2, 4, 5, 953);
    check_gradients(&net, &noisy, &clean, 1e-6, None);
}

#[test]
fn end_to_end_masnet9_width4_sampled_parameters() {
    let spec = masnet::model::build_spec_scaled(masnet::model::ArchId::Masnet9, 4);
    let net = init_network::<f64>(&spec, 105).unwrap();
    let noisy = random_batch(1, 6, 8, 904);
    let clean = random_batch(1, 6, 8, 954);
    check_gradients(&net, &noisy, &clean, 1e-4, Some((50, 1)));
}

#[test]
fn tiny_residual_masnet_sampled_parameters() {
    let spec = tiny_masnet(4, 3, true);
    let net = init_network::<f64>(&spec, 106).unwrap();
    let noisy = random_batch(2, 6, 9, 905);
    let clean = random_batch(2, 6, 9, 955);
    check_gradients(&net, &noisy, &clean, 1e-4, Some((40, 2)));
}
