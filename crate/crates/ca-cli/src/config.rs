//! The run configuration: one flat, commented key-value file (TOML) covering
//! model, preprocessing and training, plus per-flag overrides on top.
//!
//! Unknown keys are hard errors, every value is validated before any
//! computation starts, and the resolved result is echoed into each output
//! directory so a run can be reproduced from its artifacts alone.

use std::fs;
use std::path::Path;

use ca_core::encoder::EncoderConfig;
use ca_core::fusion::FusionKind;
use ca_core::memory::TcnConfig;
use ca_core::model::{HeadConfig, ModelConfig};
use ca_core::pipeline::{ContextPolicy, PreprocessConfig, Scheme, TrainConfig};
use ca_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Tcn,
    Mlp,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset directory; subcommands take it from here or from `--data`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    /// Default output directory when `--out` is not given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    /// Root seed; all randomness derives from it via named streams.
    pub seed: u64,

    // model
    pub feature_dim: usize,
    pub encoder_levels: usize,
    pub encoder_kernel: usize,
    pub encoder_widths: Vec<usize>,
    pub fusion: FusionKind,
    pub memory_len: usize,
    pub head: HeadKind,
    /// Hidden width of the classifier head (TCN channels or MLP units).
    pub head_hidden: usize,
    pub tcn_blocks: usize,
    pub tcn_kernel: usize,
    pub tcn_dilations: Vec<usize>,

    // preprocessing
    pub target_hz: f64,
    pub low_hz: f64,
    pub high_hz: f64,
    pub filter_order: usize,

    // windowing + training
    pub window_s: f64,
    pub stride_s: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    pub pretrain_min_epochs: usize,
    pub pretrain_max_epochs: usize,
    pub plateau_window: usize,
    pub plateau_delta: f64,
    pub finetune_max_epochs: usize,
    pub scheme: Scheme,
    pub context: ContextPolicy,
    pub freeze_all_but_keys: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let enc = EncoderConfig::default();
        let tcn = TcnConfig::default();
        RunConfig {
            data: None,
            out: None,
            seed: train.seed,
            feature_dim: enc.output_dim,
            encoder_levels: enc.levels,
            encoder_kernel: enc.kernel,
            encoder_widths: enc.widths,
            fusion: FusionKind::Holographic,
            memory_len: 14,
            head: HeadKind::Tcn,
            head_hidden: tcn.hidden,
            tcn_blocks: tcn.blocks,
            tcn_kernel: tcn.kernel,
            tcn_dilations: tcn.dilations,
            target_hz: 512.0,
            low_hz: 0.5,
            high_hz: 120.0,
            filter_order: 4,
            window_s: train.window_s,
            stride_s: train.stride_s,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            batches_per_epoch: train.batches_per_epoch,
            pretrain_min_epochs: train.pretrain_min_epochs,
            pretrain_max_epochs: train.pretrain_max_epochs,
            plateau_window: train.plateau_window,
            plateau_delta: train.plateau_delta,
            finetune_max_epochs: train.finetune_max_epochs,
            scheme: train.scheme,
            context: train.context,
            freeze_all_but_keys: train.freeze_all_but_keys,
        }
    }
}

impl RunConfig {
    /// Parses the config file (defaults when absent), then applies `key=value`
    /// overrides. Overrides go through the same typed deserialization as the
    /// file, so a typo in either place is a config error.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut table = match path {
            Some(p) => {
                if !p.exists() {
                    return Err(Error::Config(format!(
                        "config file {} does not exist",
                        p.display()
                    )));
                }
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for kv in overrides {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{kv}' is not key=value")))?;
            // Values parse as TOML when they can (numbers, booleans, arrays)
            // and fall back to bare strings, so `--set scheme=laboc` works
            // without quoting.
            let parsed = format!("v = {value}")
                .parse::<toml::Table>()
                .map(|mut t| t.remove("v").expect("parsed override has v"))
                .unwrap_or_else(|_| toml::Value::String(value.trim().to_string()));
            table.insert(key.trim().to_string(), parsed);
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(format!("run config: {e}")))
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let head = match self.head {
            HeadKind::Tcn => HeadConfig::Tcn(TcnConfig {
                blocks: self.tcn_blocks,
                kernel: self.tcn_kernel,
                dilations: self.tcn_dilations.clone(),
                hidden: self.head_hidden,
            }),
            HeadKind::Mlp => HeadConfig::Mlp { hidden: self.head_hidden },
        };
        let cfg = ModelConfig {
            feature_dim: self.feature_dim,
            encoder: EncoderConfig {
                levels: self.encoder_levels,
                kernel: self.encoder_kernel,
                widths: self.encoder_widths.clone(),
                output_dim: self.feature_dim,
                expected_input_len: None,
            },
            fusion: self.fusion,
            memory_len: self.memory_len,
            head,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn preprocess(&self) -> Result<PreprocessConfig> {
        let cfg = PreprocessConfig {
            target_hz: self.target_hz,
            low_hz: self.low_hz,
            high_hz: self.high_hz,
            order: self.filter_order,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            learning_rate: self.learning_rate,
            window_s: self.window_s,
            stride_s: self.stride_s,
            batch_size: self.batch_size,
            batches_per_epoch: self.batches_per_epoch,
            pretrain_min_epochs: self.pretrain_min_epochs,
            pretrain_max_epochs: self.pretrain_max_epochs,
            plateau_window: self.plateau_window,
            plateau_delta: self.plateau_delta,
            finetune_max_epochs: self.finetune_max_epochs,
            scheme: self.scheme,
            context: self.context,
            freeze_all_but_keys: self.freeze_all_but_keys,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Writes the fully resolved configuration next to a run's outputs.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        let body = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serializing run config: {e}")))?;
        let text = format!("# resolved run configuration\n{body}");
        let path = dir.join("resolved.toml");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn defaults_produce_valid_typed_configs() {
        let cfg = RunConfig::default();
        cfg.model().unwrap();
        cfg.preprocess().unwrap();
        cfg.train().unwrap();
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seed = 3\nbatch_sizee = 16\n").unwrap();
        let err = RunConfig::load(Some(&path), &[]).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(err.to_string().contains("batch_sizee"), "{err}");
    }

    #[test]
    fn overrides_beat_the_file_and_are_typed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seed = 3\nscheme = \"looc\"\n").unwrap();
        let cfg = RunConfig::load(
            Some(&path),
            &["seed=9".into(), "scheme=laboc".into(), "encoder_widths=[2, 4]".into()],
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.scheme, Scheme::Laboc);
        assert_eq!(cfg.encoder_widths, vec![2, 4]);

        let err = RunConfig::load(Some(&path), &["not_a_key=1".into()]).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        let err = RunConfig::load(Some(&path), &["seed".into()]).unwrap_err();
        assert!(err.to_string().contains("key=value"), "{err}");
    }

    #[test]
    fn missing_config_file_is_a_config_error() {
        let err = RunConfig::load(Some(Path::new("/nonexistent/run.toml")), &[]).unwrap_err();
        assert_eq!(err.class(), ca_core::ErrorClass::Config);
    }
}
