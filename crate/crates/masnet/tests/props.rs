//! Property tests for the DSP layer and metrics.

use masnet::dsp::{istft, stft, Waveform, SAMPLE_RATE_HZ};
use masnet::metrics::snr_db;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stft_roundtrip_any_length(
        len in 1usize..5000,
        seed in any::<u64>(),
    ) {
        let mut state = seed | 1;
        let samples: Vec<f32> = (0..len)
            .map(|_| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((state >> 33) as f64 / (1u64 << 31) as f64 - 1.0) as f32
            })
            .collect();
        let w = Waveform::new(samples.clone(), SAMPLE_RATE_HZ).unwrap();
        let rec = istft(&stft(&w).unwrap(), Some(len)).unwrap();
        prop_assert_eq!(rec.len(), len);
        for (i, (&a, &b)) in samples.iter().zip(rec.samples.iter()).enumerate() {
            prop_assert!((a - b).abs() <= 1e-6, "sample {} diff {}", i, (a - b).abs());
        }
    }

    #[test]
    fn snr_is_exactly_scale_invariant_for_binary_scales(
        exp in -12i32..12,
        negate in any::<bool>(),
        seed in any::<u64>(),
    ) {
        // Power-of-two scaling is exact in f32, so the invariance holds to
        // well below 1e-9 dB.
        let scale = if negate { -2f64.powi(exp) } else { 2f64.powi(exp) };
        let mut state = seed | 1;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 33) as f64 / (1u64 << 31) as f64 - 1.0
        };
        let clean: Vec<f32> = (0..512).map(|_| next() as f32).collect();
        let est: Vec<f32> = clean.iter().map(|&c| c + 0.25 * next() as f32).collect();
        let energy: f64 = clean.iter().map(|&v| (v as f64).powi(2)).sum();
        prop_assume!(energy > 1e-6);
        let base = snr_db(
            &Waveform::new(clean.clone(), SAMPLE_RATE_HZ).unwrap(),
            &Waveform::new(est.clone(), SAMPLE_RATE_HZ).unwrap(),
        )
        .unwrap()
        .snr_db;
        let scaled = snr_db(
            &Waveform::new(clean.iter().map(|&v| (scale * v as f64) as f32).collect(), SAMPLE_RATE_HZ).unwrap(),
            &Waveform::new(est.iter().map(|&v| (scale * v as f64) as f32).collect(), SAMPLE_RATE_HZ).unwrap(),
        )
        .unwrap()
        .snr_db;
        prop_assert!((base - scaled).abs() < 1e-9, "{} vs {}", base, scaled);
    }

    #[test]
    fn snr_is_scale_invariant(
        scale in prop_oneof![0.001f64..1000.0, -1000.0..-0.001],
        seed in any::<u64>(),
    ) {
        let mut state = seed | 1;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 33) as f64 / (1u64 << 31) as f64 - 1.0
        };
        let clean: Vec<f64> = (0..512).map(|_| next()).collect();
        let noise: Vec<f64> = (0..512).map(|_| next()).collect();
        let energy: f64 = clean.iter().map(|v| v * v).sum();
        prop_assume!(energy > 1e-6);
        let build = |a: f64| {
            let c: Vec<f32> = clean.iter().map(|&v| (a * v) as f32).collect();
            let e: Vec<f32> = clean
                .iter()
                .zip(noise.iter())
                .map(|(&cv, &nv)| (a * (cv + nv)) as f32)
                .collect();
            (
                Waveform::new(c, SAMPLE_RATE_HZ).unwrap(),
                Waveform::new(e, SAMPLE_RATE_HZ).unwrap(),
            )
        };
        let (c1, e1) = build(1.0);
        let (c2, e2) = build(scale);
        let a = snr_db(&c1, &e1).unwrap().snr_db;
        let b = snr_db(&c2, &e2).unwrap().snr_db;
        // f32 storage rounds differently at different scales; the ratio
        // itself is scale-free.
        prop_assert!((a - b).abs() < 1e-3, "{} vs {}", a, b);
    }
}
