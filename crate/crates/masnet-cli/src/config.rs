//! Sectioned `key = value` run configuration for `masnet train`.
//!
//! Unknown keys are rejected so typos fail loudly instead of silently
//! training with defaults.

use std::path::{Path, PathBuf};

use masnet::training::synth::SynthConfig;
use masnet::training::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone)]
pub enum ModelRef {
    Name(String),
    SpecFile(PathBuf),
}

#[derive(Debug, Clone)]
pub enum DataConfig {
    Synthetic {
        train: SynthConfig,
        val: SynthConfig,
    },
    WavDirs {
        train_dir: PathBuf,
        val_dir: PathBuf,
        train_manifest: Option<PathBuf>,
        val_manifest: Option<PathBuf>,
    },
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelRef,
    pub width: Option<usize>,
    pub window: usize,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
}

#[derive(Default)]
struct RawConfig {
    arch: Option<String>,
    spec_file: Option<PathBuf>,
    width: Option<usize>,
    window: Option<usize>,
    train: TrainConfig,
    data_kind: Option<String>,
    train_utterances: Option<usize>,
    val_utterances: Option<usize>,
    samples_per_utterance: Option<usize>,
    snr_db_min: Option<f64>,
    snr_db_max: Option<f64>,
    max_tones: Option<usize>,
    chirp_probability: Option<f64>,
    data_seed: Option<u64>,
    train_dir: Option<PathBuf>,
    val_dir: Option<PathBuf>,
    train_manifest: Option<PathBuf>,
    val_manifest: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    history: Option<PathBuf>,
}

pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text).map_err(|msg| CliError::data(format!("{}: {msg}", path.display())))
}

fn parse(text: &str) -> Result<RunConfig, String> {
    let mut raw = RawConfig::default();
    let mut section = String::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            match section.as_str() {
                "model" | "stft" | "train" | "data" | "output" => continue,
                other => return Err(format!("line {}: unknown section [{other}]", lineno + 1)),
            }
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", lineno + 1))?;
        let key = key.trim();
        let value = value.trim();
        set_key(&mut raw, &section, key, value)
            .map_err(|msg| format!("line {}: {msg}", lineno + 1))?;
    }
    finish(raw)
}

fn set_key(raw: &mut RawConfig, section: &str, key: &str, value: &str) -> Result<(), String> {
    let unknown = || Err(format!("unknown key {section}.{key}"));
    match section {
        "model" => match key {
            "arch" => raw.arch = Some(value.to_string()),
            "spec_file" => raw.spec_file = Some(PathBuf::from(value)),
            "width" => raw.width = Some(num(key, value)?),
            _ => return unknown(),
        },
        "stft" => match key {
            "window" => raw.window = Some(num(key, value)?),
            _ => return unknown(),
        },
        "train" => match key {
            "learning_rate" => raw.train.learning_rate = fnum(key, value)?,
            "beta1" => raw.train.beta1 = fnum(key, value)?,
            "beta2" => raw.train.beta2 = fnum(key, value)?,
            "adam_epsilon" => raw.train.adam_epsilon = fnum(key, value)?,
            "batch_size" => raw.train.batch_size = num(key, value)?,
            "epochs" => raw.train.epochs = num(key, value)?,
            "bn_epsilon" => raw.train.bn_epsilon = fnum(key, value)?,
            "bn_momentum" => raw.train.bn_momentum = fnum(key, value)?,
            "max_samples_per_utterance" => {
                raw.train.max_samples_per_utterance = num(key, value)?
            }
            "seed" => raw.train.seed = num(key, value)? as u64,
            _ => return unknown(),
        },
        "data" => match key {
            "kind" => raw.data_kind = Some(value.to_string()),
            "train_utterances" => raw.train_utterances = Some(num(key, value)?),
            "val_utterances" => raw.val_utterances = Some(num(key, value)?),
            "samples_per_utterance" => raw.samples_per_utterance = Some(num(key, value)?),
            "snr_db_min" => raw.snr_db_min = Some(fnum(key, value)?),
            "snr_db_max" => raw.snr_db_max = Some(fnum(key, value)?),
            "max_tones" => raw.max_tones = Some(num(key, value)?),
            "chirp_probability" => raw.chirp_probability = Some(fnum(key, value)?),
            "seed" => raw.data_seed = Some(num(key, value)? as u64),
            "train_dir" => raw.train_dir = Some(PathBuf::from(value)),
            "val_dir" => raw.val_dir = Some(PathBuf::from(value)),
            "train_manifest" => raw.train_manifest = Some(PathBuf::from(value)),
            "val_manifest" => raw.val_manifest = Some(PathBuf::from(value)),
            _ => return unknown(),
        },
        "output" => match key {
            "checkpoint" => raw.checkpoint = Some(PathBuf::from(value)),
            "history" => raw.history = Some(PathBuf::from(value)),
            _ => return unknown(),
        },
        "" => return Err(format!("key {key} appears before any [section]")),
        _ => unreachable!("sections validated on entry"),
    }
    Ok(())
}

fn num(key: &str, value: &str) -> Result<usize, String> {
    value
        .parse()
        .map_err(|_| format!("{key}: expected an integer, got {value:?}"))
}

fn fnum(key: &str, value: &str) -> Result<f64, String> {
    value
        .parse()
        .map_err(|_| format!("{key}: expected a number, got {value:?}"))
}

fn finish(raw: RawConfig) -> Result<RunConfig, String> {
    let model = match (raw.arch, raw.spec_file) {
        (Some(a), None) => ModelRef::Name(a),
        (None, Some(p)) => ModelRef::SpecFile(p),
        (Some(_), Some(_)) => return Err("set either model.arch or model.spec_file".into()),
        (None, None) => return Err("missing model.arch (or model.spec_file)".into()),
    };
    let data = match raw.data_kind.as_deref() {
        Some("synthetic") => {
            let seed = raw.data_seed.unwrap_or(raw.train.seed);
            let base = SynthConfig {
                utterances: raw.train_utterances.unwrap_or(64),
                samples_per_utterance: raw.samples_per_utterance.unwrap_or(2048),
                snr_db_min: raw.snr_db_min.unwrap_or(0.0),
                snr_db_max: raw.snr_db_max.unwrap_or(10.0),
                max_tones: raw.max_tones.unwrap_or(2),
                chirp_probability: raw.chirp_probability.unwrap_or(0.0),
                seed,
            };
            let val = SynthConfig {
                utterances: raw.val_utterances.unwrap_or(8),
                seed: seed.wrapping_add(1),
                ..base.clone()
            };
            if raw.train_dir.is_some() || raw.val_dir.is_some() {
                return Err("synthetic data does not take directories".into());
            }
            DataConfig::Synthetic { train: base, val }
        }
        Some("wav-dirs") => DataConfig::WavDirs {
            train_dir: raw.train_dir.ok_or("wav-dirs requires data.train_dir")?,
            val_dir: raw.val_dir.ok_or("wav-dirs requires data.val_dir")?,
            train_manifest: raw.train_manifest,
            val_manifest: raw.val_manifest,
        },
        Some(other) => return Err(format!("unknown data.kind {other:?}")),
        None => return Err("missing data.kind (synthetic or wav-dirs)".into()),
    };
    Ok(RunConfig {
        model,
        width: raw.width,
        window: raw.window.unwrap_or(masnet::dsp::WINDOW),
        train: raw.train,
        data,
        checkpoint: raw.checkpoint.ok_or("missing output.checkpoint")?,
        history: raw.history.ok_or("missing output.history")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "
[model]
arch = tiny-masnet-4x2

[stft]
window = 64

[train]
epochs = 3
seed = 9

[data]
kind = synthetic
train_utterances = 8
val_utterances = 2

[output]
checkpoint = out/model.masn
history = out/history.csv
";

    #[test]
    fn parses_a_full_config() {
        let cfg = parse(GOOD).unwrap();
        assert!(matches!(cfg.model, ModelRef::Name(ref n) if n == "tiny-masnet-4x2"));
        assert_eq!(cfg.window, 64);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.seed, 9);
        match cfg.data {
            DataConfig::Synthetic { train, val } => {
                assert_eq!(train.utterances, 8);
                assert_eq!(val.utterances, 2);
                assert_eq!(val.seed, 10);
            }
            _ => panic!("expected synthetic"),
        }
    }

    #[test]
    fn rejects_unknown_keys_and_sections() {
        let bad = GOOD.replace("epochs", "epoch");
        let err = parse(&bad).unwrap_err();
        assert!(err.contains("unknown key train.epoch"), "{err}");
        let bad = GOOD.replace("[stft]", "[sftf]");
        assert!(parse(&bad).is_err());
    }

    #[test]
    fn requires_model_and_outputs() {
        let err = parse("[data]\nkind = synthetic\n").unwrap_err();
        assert!(err.contains("model.arch"), "{err}");
    }
}
