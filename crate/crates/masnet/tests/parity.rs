//! Stream/batch equivalence and instrumented FMA accounting across the
//! whole architecture registry, plus an independent sliding-window
//! convolution oracle for the batch engine itself.

use masnet::cost::analyze;
use masnet::dsp::ComplexSpectrogram;
use masnet::engine::{forward_batch, forward_batch_counted, SpectrumFrame, StreamState};
use masnet::model::{
    build_spec, build_spec_scaled, init_network, tiny_masnet, ArchId, Activation, BatchNorm,
    LayerKind, LayerParams, Network, NetworkSpec,
};
use masnet::tensor::FeatureMap;

fn det_values(n: usize, seed: u64) -> Vec<f32> {
    let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
    (0..n)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64 - 1.0) as f32
        })
        .collect()
}

fn random_grid(frames: usize, bins: usize, seed: u64) -> ComplexSpectrogram {
    ComplexSpectrogram {
        frames,
        bins,
        re: det_values(frames * bins, seed),
        im: det_values(frames * bins, seed + 7777),
        window: (bins - 1) * 2,
        hop: bins - 1,
    }
}

/// Push every frame of `x` through a fresh stream and compare against the
/// batch mask. Returns (max abs difference, stream FMA total).
fn stream_vs_batch(net: &Network<f32>, x: &ComplexSpectrogram) -> (f32, u64, u64) {
    let (batch_mask, batch_fma) = forward_batch_counted(net, x).unwrap();
    let mut state = StreamState::new(net);
    let mut max_diff = 0.0f32;
    let mut per_push_fma = None;
    for t in 0..x.frames {
        let row = t * x.bins;
        let frame = SpectrumFrame {
            re: x.re[row..row + x.bins].to_vec(),
            im: x.im[row..row + x.bins].to_vec(),
        };
        let before = state.fma_total();
        let out = state.push(net, &frame).unwrap();
        let delta = state.fma_total() - before;
        match per_push_fma {
            None => per_push_fma = Some(delta),
            Some(d) => assert_eq!(d, delta, "per-push work varies at frame {t}"),
        }
        for f in 0..x.bins {
            let dr = (out.mask.re[f] - batch_mask.re[row + f]).abs();
            let di = (out.mask.im[f] - batch_mask.im[row + f]).abs();
            max_diff = max_diff.max(dr).max(di);
        }
    }
    (max_diff, batch_fma, state.fma_total())
}

#[test]
fn registry_parity_at_desk_width() {
    for id in ArchId::ALL {
        let spec = build_spec_scaled(id, 8);
        let net = init_network::<f32>(&spec, 0xA5 + id.layer_count() as u64).unwrap();
        let x = random_grid(64, 33, 42 + id.layer_count() as u64);
        let (max_diff, batch_fma, stream_fma) = stream_vs_batch(&net, &x);
        assert!(
            max_diff <= 1e-5,
            "{id}: stream/batch diff {max_diff} exceeds 1e-5"
        );
        assert_eq!(batch_fma, stream_fma, "{id}: FMA counters differ");
    }
}

#[test]
fn full_width_parity_masnet9_and_16() {
    for id in [ArchId::Masnet9, ArchId::Masnet16] {
        let net = init_network::<f32>(&build_spec(id), 7).unwrap();
        let x = random_grid(64, 129, 99);
        let (max_diff, batch_fma, stream_fma) = stream_vs_batch(&net, &x);
        assert!(max_diff <= 1e-5, "{id}: diff {max_diff}");
        assert_eq!(batch_fma, stream_fma);
    }
}

#[test]
fn instrumented_count_matches_analytic_for_registry() {
    let frames = 10;
    for id in ArchId::ALL {
        let spec = build_spec_scaled(id, 8);
        let report = analyze(&spec, 33, 128.0);
        let net = init_network::<f32>(&spec, 5).unwrap();
        let x = random_grid(frames, 33, 11);
        let (_, fma) = forward_batch_counted(&net, &x).unwrap();
        assert_eq!(
            fma,
            report.total_per_frame * frames as u64,
            "{id}: instrumented vs analytic"
        );
    }
}

#[test]
fn full_width_masnet9_counts_match_analytic() {
    let spec = build_spec(ArchId::Masnet9);
    let net = init_network::<f32>(&spec, 5).unwrap();
    let x = random_grid(10, 129, 13);
    let (_, fma) = forward_batch_counted(&net, &x).unwrap();
    let report = analyze(&spec, 129, 128.0);
    assert_eq!(fma, report.total_per_frame * 10);
}

#[test]
fn residual_bypass_is_pure_addition() {
    // Removing the bypass and re-adding the block input externally gives
    // identical results.
    let res_spec = tiny_masnet(6, 1, true);
    let seq_spec = tiny_masnet(6, 1, false);
    let res_net = init_network::<f32>(&res_spec, 31).unwrap();
    let mut seq_net = init_network::<f32>(&seq_spec, 31).unwrap();
    // Same draw order, so parameters agree; copy to be explicit.
    for (a, b) in seq_net.layers.iter_mut().zip(res_net.layers.iter()) {
        *a = b.clone();
    }
    // The input conv feeds the block in both nets; compare block outputs by
    // running the first two layers manually through the public API: build
    // one-layer networks is not possible, so compare full outputs instead
    // on a net whose final conv is identical.
    let x = random_grid(12, 9, 3);
    let res_out = forward_batch(&res_net, &x).unwrap();

    // Sequential net plus external bypass of the block: emulate by zeroing
    // the block's pointwise/batchnorm contribution is not equivalent, so
    // instead verify the defining identity directly on the residual net:
    // out(res) == out(seq) + contribution of the bypass path through the
    // final linear conv. With the final conv being 1x1 linear W, the mask
    // difference is W applied to the bypass input.
    let seq_out = forward_batch(&seq_net, &x).unwrap();

    // Reconstruct the bypass effect: block input b (output of layer 0) is
    // added to the block output; the final conv is linear, so
    // mask_res = mask_seq + W*b + 0 (bias cancels).
    let l0 = &res_net.spec.layers[0];
    let mut fma = 0u64;
    let b_in = {
        let fm = x.to_feature_map();
        masnet_test_forward_layer(&res_net.layers[0], l0, &fm, &mut fma)
    };
    if let LayerParams::Conv2d { weight, .. } = res_net.layers.last().unwrap() {
        let w = &weight.data; // [2][6][1][1]
        for t in 0..x.frames {
            for f in 0..x.bins {
                for o in 0..2usize {
                    let mut extra = 0.0f32;
                    for c in 0..6usize {
                        extra += w[o * 6 + c] * b_in.at(c, t, f);
                    }
                    let i = t * x.bins + f;
                    let got = if o == 0 { res_out.re[i] } else { res_out.im[i] };
                    let base = if o == 0 { seq_out.re[i] } else { seq_out.im[i] };
                    assert!(
                        (got - (base + extra)).abs() <= 2e-5,
                        "bypass identity broken at ({t},{f},{o}): {got} vs {}",
                        base + extra
                    );
                }
            }
        }
    } else {
        panic!("expected conv output layer");
    }
}

/// Forward one layer in eval mode exactly as the engine defines it, through
/// public APIs (used to reconstruct intermediate activations in tests).
fn masnet_test_forward_layer(
    params: &LayerParams<f32>,
    l: &masnet::model::LayerSpec,
    x: &FeatureMap<f32>,
    _fma: &mut u64,
) -> FeatureMap<f32> {
    // The engine does not expose per-layer application; emulate the input
    // conv (1x1, linear, bias) directly.
    match params {
        LayerParams::Conv2d { weight, bias, .. } => {
            assert_eq!((l.kernel_t, l.kernel_f), (1, 1));
            let mut out = FeatureMap::zeros(l.out_channels, x.frames, x.bins);
            for o in 0..l.out_channels {
                for t in 0..x.frames {
                    for f in 0..x.bins {
                        let mut acc = bias.as_ref().map_or(0.0, |b| b[o]);
                        for c in 0..l.in_channels {
                            acc += weight.data[o * l.in_channels + c] * x.at(c, t, f);
                        }
                        *out.at_mut(o, t, f) = acc;
                    }
                }
            }
            out
        }
        _ => panic!("expected conv layer"),
    }
}

// ---------------------------------------------------------------------------
// Independent convolution oracle
// ---------------------------------------------------------------------------

/// Direct bounds-checked evaluation of the network semantics, written
/// independently of the engine (no padding materialization, f64
/// accumulation, different loop structure).
fn oracle_forward(net: &Network<f32>, x: &ComplexSpectrogram) -> Vec<Vec<f64>> {
    let frames = x.frames;
    let bins = x.bins;
    let mut cur: Vec<Vec<f64>> = vec![
        x.re.iter().map(|&v| v as f64).collect(),
        x.im.iter().map(|&v| v as f64).collect(),
    ];
    let get = |m: &Vec<Vec<f64>>, c: usize, t: isize, f: isize| -> f64 {
        if t < 0 || f < 0 || t >= frames as isize || f >= bins as isize {
            0.0
        } else {
            m[c][t as usize * bins + f as usize]
        }
    };
    for (l, params) in net.spec.layers.iter().zip(net.layers.iter()) {
        let (kt, kf) = (l.kernel_t as isize, l.kernel_f as isize);
        let (dt, df) = (l.dilation_t as isize, l.dilation_f as isize);
        match params {
            LayerParams::Conv2d { weight, bias, bn } => {
                let mut next = vec![vec![0.0f64; frames * bins]; l.out_channels];
                for o in 0..l.out_channels {
                    for t in 0..frames as isize {
                        for f in 0..bins as isize {
                            let mut acc =
                                bias.as_ref().map_or(0.0, |b| b[o] as f64);
                            for c in 0..l.in_channels {
                                for j in 0..kt {
                                    for k in 0..kf {
                                        let tt = t - (kt - 1 - j) * dt;
                                        let ff = f + (k - (kf - 1) / 2) * df;
                                        let w = weight.data[((o * l.in_channels + c)
                                            as isize
                                            * kt
                                            * kf
                                            + j * kf
                                            + k)
                                            as usize]
                                            as f64;
                                        acc += w * get(&cur, c, tt, ff);
                                    }
                                }
                            }
                            next[o][(t as usize) * bins + f as usize] = acc;
                        }
                    }
                }
                if let Some(bn) = bn {
                    oracle_bn(&mut next, bn);
                }
                if l.activation == Activation::Relu {
                    oracle_relu(&mut next);
                }
                cur = next;
            }
            LayerParams::MasBlock {
                depthwise,
                bn_dw,
                pointwise,
                bn_pw,
            } => {
                let ch = l.in_channels;
                let mut dw = vec![vec![0.0f64; frames * bins]; ch];
                for c in 0..ch {
                    for t in 0..frames as isize {
                        for f in 0..bins as isize {
                            let mut acc = 0.0f64;
                            for j in 0..kt {
                                for k in 0..kf {
                                    let tt = t - (kt - 1 - j) * dt;
                                    let ff = f + (k - (kf - 1) / 2) * df;
                                    let w = depthwise.data
                                        [(c as isize * kt * kf + j * kf + k) as usize]
                                        as f64;
                                    acc += w * get(&cur, c, tt, ff);
                                }
                            }
                            dw[c][(t as usize) * bins + f as usize] = acc;
                        }
                    }
                }
                oracle_bn(&mut dw, bn_dw);
                oracle_relu(&mut dw);
                let mut pw = vec![vec![0.0f64; frames * bins]; l.out_channels];
                for o in 0..l.out_channels {
                    for i in 0..frames * bins {
                        let mut acc = 0.0f64;
                        for (c, dwc) in dw.iter().enumerate() {
                            acc += pointwise.data[o * ch + c] as f64 * dwc[i];
                        }
                        pw[o][i] = acc;
                    }
                }
                oracle_bn(&mut pw, bn_pw);
                oracle_relu(&mut pw);
                if l.kind == LayerKind::ResidualMasBlock {
                    for (po, co) in pw.iter_mut().zip(cur.iter()) {
                        for (a, b) in po.iter_mut().zip(co.iter()) {
                            *a += *b;
                        }
                    }
                }
                cur = pw;
            }
        }
    }
    cur
}

fn oracle_bn(maps: &mut [Vec<f64>], bn: &BatchNorm<f32>) {
    for (c, m) in maps.iter_mut().enumerate() {
        let inv = 1.0 / ((bn.running_var[c] as f64) + bn.epsilon as f64).sqrt();
        for v in m.iter_mut() {
            *v = (*v - bn.running_mean[c] as f64) * (bn.gamma[c] as f64) * inv
                + bn.beta[c] as f64;
        }
    }
}

fn oracle_relu(maps: &mut [Vec<f64>]) {
    for m in maps {
        for v in m.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}

#[test]
fn batch_forward_matches_sliding_window_oracle() {
    // Mix of layer kinds, dilations and kernels on a tiny grid, with
    // non-identity batchnorm statistics.
    let spec = NetworkSpec {
        name: "oracle-net".into(),
        layers: vec![
            masnet::model::LayerSpec {
                kind: LayerKind::Conv2d,
                in_channels: 2,
                out_channels: 4,
                kernel_t: 3,
                kernel_f: 3,
                dilation_t: 2,
                dilation_f: 1,
                has_batchnorm: true,
                activation: Activation::Relu,
            },
            masnet::model::LayerSpec {
                kind: LayerKind::MasBlock,
                in_channels: 4,
                out_channels: 4,
                kernel_t: 5,
                kernel_f: 3,
                dilation_t: 1,
                dilation_f: 2,
                has_batchnorm: true,
                activation: Activation::Relu,
            },
            masnet::model::LayerSpec {
                kind: LayerKind::ResidualMasBlock,
                in_channels: 4,
                out_channels: 4,
                kernel_t: 3,
                kernel_f: 1,
                dilation_t: 4,
                dilation_f: 1,
                has_batchnorm: true,
                activation: Activation::Relu,
            },
            masnet::model::LayerSpec {
                kind: LayerKind::Conv2d,
                in_channels: 4,
                out_channels: 2,
                kernel_t: 1,
                kernel_f: 1,
                dilation_t: 1,
                dilation_f: 1,
                has_batchnorm: false,
                activation: Activation::Linear,
            },
        ],
    };
    let mut net = init_network::<f32>(&spec, 77).unwrap();
    // Non-trivial batchnorm statistics and affine parameters.
    let stats = det_values(64, 1234);
    let mut k = 0;
    for layer in &mut net.layers {
        let mut tweak = |bn: &mut BatchNorm<f32>| {
            for c in 0..bn.channels() {
                bn.gamma[c] = 1.0 + 0.3 * stats[k % 64];
                bn.beta[c] = 0.2 * stats[(k + 1) % 64];
                bn.running_mean[c] = 0.1 * stats[(k + 2) % 64];
                bn.running_var[c] = 1.0 + 0.5 * stats[(k + 3) % 64].abs();
                k += 4;
            }
        };
        match layer {
            LayerParams::Conv2d { bn: Some(bn), .. } => tweak(bn),
            LayerParams::MasBlock { bn_dw, bn_pw, .. } => {
                tweak(bn_dw);
                tweak(bn_pw);
            }
            _ => {}
        }
    }
    let x = random_grid(6, 8, 55);
    let got = forward_batch(&net, &x).unwrap();
    let want = oracle_forward(&net, &x);
    for t in 0..6 {
        for f in 0..8 {
            let i = t * 8 + f;
            assert!(
                (got.re[i] as f64 - want[0][i]).abs() < 1e-5,
                "re mismatch at ({t},{f}): {} vs {}",
                got.re[i],
                want[0][i]
            );
            assert!(
                (got.im[i] as f64 - want[1][i]).abs() < 1e-5,
                "im mismatch at ({t},{f})"
            );
        }
    }
}

#[test]
fn oracle_also_pins_stream_mode() {
    let spec = tiny_masnet(4, 2, true);
    let net = init_network::<f32>(&spec, 3).unwrap();
    let x = random_grid(9, 9, 21);
    let want = oracle_forward(&net, &x);
    let mut state = StreamState::new(&net);
    for t in 0..x.frames {
        let row = t * x.bins;
        let out = state
            .push(
                &net,
                &SpectrumFrame {
                    re: x.re[row..row + x.bins].to_vec(),
                    im: x.im[row..row + x.bins].to_vec(),
                },
            )
            .unwrap();
        for f in 0..x.bins {
            assert!((out.mask.re[f] as f64 - want[0][row + f]).abs() < 1e-5);
            assert!((out.mask.im[f] as f64 - want[1][row + f]).abs() < 1e-5);
        }
    }
}
