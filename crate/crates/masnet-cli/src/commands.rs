//! Subcommand implementations.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use masnet::cost::{analyze, receptive_field};
use masnet::dsp::{ComplexSpectrogram, StftConfig, Waveform};
use masnet::engine::{
    enhance_waveform_with, forward_batch_counted, InferenceMode, SpectrumFrame, StreamState,
};
use masnet::metrics::{mean_snr_db, snr_db};
use masnet::model::{
    build_spec_scaled, init_network, load_checkpoint, save_checkpoint, spec_for_name, ArchId,
    Network, NetworkSpec,
};
use masnet::training::fit;

use crate::config::{self, DataConfig, ModelRef, RunConfig};
use crate::wav;
use crate::CliError;

const PARITY_TOLERANCE: f32 = 1e-5;

fn resolve_spec(name: &str) -> Result<NetworkSpec, CliError> {
    spec_for_name(name).map_err(|e| CliError::usage(e.to_string()))
}

pub fn enhance(
    input: &Path,
    output: &Path,
    weights: Option<&Path>,
    model: Option<&str>,
    mode: &str,
    window: usize,
) -> Result<(), CliError> {
    let mode: InferenceMode = mode
        .parse()
        .map_err(|e: masnet::Error| CliError::usage(e.to_string()))?;
    let stft_cfg =
        StftConfig::with_window(window).map_err(|e| CliError::usage(e.to_string()))?;
    let net = match (weights, model) {
        (Some(path), requested) => {
            let net = load_checkpoint(path)?;
            if let Some(name) = requested {
                let expected = resolve_spec(name)?;
                if net.spec != expected {
                    return Err(CliError::data(format!(
                        "checkpoint architecture {:?} does not match requested {name:?}",
                        net.spec.name
                    )));
                }
            }
            net
        }
        (None, Some(name)) => init_network::<f32>(&resolve_spec(name)?, 0)?,
        (None, None) => {
            return Err(CliError::usage(
                "provide --weights or --model (or both, to cross-check)",
            ))
        }
    };
    let noisy = wav::read_wav(input)?;
    let denoised = enhance_waveform_with(&net, &noisy, mode, &stft_cfg)?;
    wav::write_wav(output, &denoised)?;
    println!(
        "wrote {} ({} samples, {} mode)",
        output.display(),
        denoised.len(),
        match mode {
            InferenceMode::Batch => "batch",
            InferenceMode::Stream => "stream",
        }
    );
    Ok(())
}

fn load_wav_pairs(
    dir: &Path,
    manifest: Option<&Path>,
) -> Result<Vec<(Waveform, Waveform)>, CliError> {
    let noisy_dir = dir.join("noisy");
    let clean_dir = dir.join("clean");
    let stems = match manifest {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::data(format!("cannot read manifest {}: {e}", path.display()))
            })?;
            let stems: Vec<String> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect();
            if stems.is_empty() {
                return Err(CliError::data(format!(
                    "manifest {} lists no utterances",
                    path.display()
                )));
            }
            stems
        }
        None => {
            let stems = wav::wav_stems(&noisy_dir)?;
            if stems.is_empty() {
                return Err(CliError::data(format!(
                    "no .wav files under {}",
                    noisy_dir.display()
                )));
            }
            stems
        }
    };
    stems
        .iter()
        .map(|stem| {
            let noisy = wav::read_wav(&noisy_dir.join(format!("{stem}.wav")))?;
            let clean = wav::read_wav(&clean_dir.join(format!("{stem}.wav")))?;
            Ok((noisy, clean))
        })
        .collect()
}

pub fn train(config_path: &Path) -> Result<(), CliError> {
    let cfg: RunConfig = config::load(config_path)?;
    let spec = match &cfg.model {
        ModelRef::Name(name) => {
            let spec = resolve_spec(name)?;
            match (cfg.width, name.parse::<ArchId>()) {
                (Some(w), Ok(id)) => build_spec_scaled(id, w),
                (Some(_), Err(_)) => {
                    return Err(CliError::usage(
                        "model.width applies only to registry architectures",
                    ))
                }
                (None, _) => spec,
            }
        }
        ModelRef::SpecFile(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
            NetworkSpec::from_text(&text)
                .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?
        }
    };
    let stft_cfg =
        StftConfig::with_window(cfg.window).map_err(|e| CliError::data(e.to_string()))?;
    let (train_set, val_set) = match &cfg.data {
        DataConfig::Synthetic { train, val } => (
            masnet::training::synth::generate_dataset(train),
            masnet::training::synth::generate_dataset(val),
        ),
        DataConfig::WavDirs {
            train_dir,
            val_dir,
            train_manifest,
            val_manifest,
        } => (
            load_wav_pairs(train_dir, train_manifest.as_deref())?,
            load_wav_pairs(val_dir, val_manifest.as_deref())?,
        ),
    };

    // Validate output paths before spending time on training.
    for target in [&cfg.checkpoint, &cfg.history] {
        if let Some(parent) = target.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)
                    .map_err(|e| CliError::data(format!("{}: {e}", parent.display())))?;
            }
        }
    }

    let mut net = init_network::<f32>(&spec, cfg.train.seed)?;
    let result = fit(&mut net, &train_set, &val_set, &cfg.train, &stft_cfg)?;

    save_checkpoint(&result.best, &cfg.checkpoint)?;
    let mut history = String::from("epoch,train_loss,val_loss\n");
    for row in &result.history {
        history.push_str(&format!("{},{},{}\n", row.epoch, row.train_loss, row.val_loss));
    }
    std::fs::write(&cfg.history, history)
        .map_err(|e| CliError::data(format!("cannot write history: {e}")))?;

    let last = result.history.last().expect("at least one epoch");
    println!(
        "trained {} for {} epochs: initial val loss {}, final {}, best {} at epoch {}",
        spec.name,
        result.history.len(),
        result.initial_val_loss,
        last.val_loss,
        result.history[result.best_epoch - 1].val_loss,
        result.best_epoch
    );
    println!("checkpoint: {}", cfg.checkpoint.display());
    println!("history: {}", cfg.history.display());
    Ok(())
}

pub fn cost(model: &str, frame_rate: f64, bins: usize, kv: bool) -> Result<(), CliError> {
    let spec = resolve_spec(model)?;
    let report = analyze(&spec, bins, frame_rate);
    let rf = receptive_field(&spec).capped_to(bins);
    if kv {
        print!("{}", report.to_kv());
        println!("receptive_field.time_frames = {}", rf.time_frames);
        println!("receptive_field.freq_bins = {}", rf.freq_bins);
    } else {
        println!("model: {}", spec.name);
        print!("{}", report.to_text());
        println!(
            "receptive field: {} frames x {} bins",
            rf.time_frames, rf.freq_bins
        );
    }
    Ok(())
}

pub fn eval(clean_dir: &Path, enhanced_dir: &Path) -> Result<(), CliError> {
    let clean_stems = wav::wav_stems(clean_dir)?;
    let enhanced_stems = wav::wav_stems(enhanced_dir)?;
    if clean_stems.is_empty() {
        return Err(CliError::data(format!(
            "no .wav files under {}",
            clean_dir.display()
        )));
    }
    let mut missing = Vec::new();
    for stem in &clean_stems {
        if !enhanced_stems.contains(stem) {
            missing.push(format!("{stem} (no enhanced file)"));
        }
    }
    for stem in &enhanced_stems {
        if !clean_stems.contains(stem) {
            missing.push(format!("{stem} (no clean reference)"));
        }
    }
    if !missing.is_empty() {
        for m in &missing {
            eprintln!("unmatched stem: {m}");
        }
        return Err(CliError::data(format!(
            "{} unmatched file stem(s)",
            missing.len()
        )));
    }
    let mut results = Vec::new();
    for stem in &clean_stems {
        let clean = wav::read_wav(&clean_dir.join(format!("{stem}.wav")))?;
        let enhanced = wav::read_wav(&enhanced_dir.join(format!("{stem}.wav")))?;
        let r = snr_db(&clean, &enhanced)
            .map_err(|e| CliError::data(format!("{stem}: {e}")))?;
        println!("{stem}: {:.2} dB{}", r.snr_db, if r.clipped { " (capped)" } else { "" });
        results.push(r);
    }
    println!(
        "mean: {:.2} dB over {} files",
        mean_snr_db(&results),
        results.len()
    );
    Ok(())
}

pub fn parity(
    model: &str,
    frames: usize,
    seed: u64,
    width: Option<usize>,
    bins: usize,
    corrupt: bool,
) -> Result<(), CliError> {
    if frames == 0 {
        return Err(CliError::usage("--frames must be positive"));
    }
    let spec = match width {
        Some(w) => {
            let id: ArchId = model
                .parse()
                .map_err(|e: masnet::Error| CliError::usage(e.to_string()))?;
            build_spec_scaled(id, w)
        }
        None => resolve_spec(model)?,
    };
    let net: Network<f32> = init_network(&spec, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x517C_C1B7_2722_0A95));
    let mut x = ComplexSpectrogram::zeros(frames, bins, &StftConfig::default());
    for v in x.re.iter_mut().chain(x.im.iter_mut()) {
        *v = rng.random_range(-1.0f32..1.0);
    }

    let (batch_mask, batch_fma) = forward_batch_counted(&net, &x)?;
    let mut state = StreamState::new(&net);
    if corrupt {
        state.corrupt_ring_buffer_for_test();
    }
    let mut max_diff = 0.0f32;
    let mut first_bad: Option<usize> = None;
    let mut frame = SpectrumFrame::zeros(bins);
    for t in 0..frames {
        let row = t * bins;
        frame.re.copy_from_slice(&x.re[row..row + bins]);
        frame.im.copy_from_slice(&x.im[row..row + bins]);
        let out = state.push(&net, &frame)?;
        let mut frame_diff = 0.0f32;
        for f in 0..bins {
            frame_diff = frame_diff
                .max((out.mask.re[f] - batch_mask.re[row + f]).abs())
                .max((out.mask.im[f] - batch_mask.im[row + f]).abs());
        }
        if frame_diff > PARITY_TOLERANCE && first_bad.is_none() {
            first_bad = Some(t);
        }
        max_diff = max_diff.max(frame_diff);
    }
    let stream_fma = state.fma_total();

    println!(
        "model: {} ({} frames, {} bins, seed {})",
        spec.name, frames, bins, seed
    );
    println!("max |stream - batch|: {max_diff:e}");
    println!("batch FMA:  {batch_fma}");
    println!("stream FMA: {stream_fma}");
    if max_diff <= PARITY_TOLERANCE && batch_fma == stream_fma {
        println!("PASS");
        Ok(())
    } else {
        if let Some(t) = first_bad {
            eprintln!("first offending frame: {t}");
        }
        Err(CliError::numeric(format!(
            "parity violated: max diff {max_diff:e}, batch FMA {batch_fma}, stream FMA {stream_fma}"
        )))
    }
}
