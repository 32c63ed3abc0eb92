use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ctc::BeamOptions;
use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::model::GicConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient norm limit; `0` disables clipping.
    pub clip_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            peak_lr: 1e-3,
            warmup_steps: 500,
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-9,
            clip_norm: 5.0,
        }
    }
}

/// Where training data comes from: manifests, or a synthetic corpus split
/// into training and validation parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_manifest: Option<PathBuf>,
    pub valid_manifest: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub synth: Option<SynthConfig>,
    /// Utterances held out from the synthetic corpus.
    pub synth_valid: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_manifest: None,
            valid_manifest: None,
            vocab: None,
            synth: None,
            synth_valid: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub sort_by_length: bool,
    /// Greedy CER on train and validation data every this many epochs
    /// (and after the last one); `0` disables it.
    pub eval_every: usize,
    /// Stop once training greedy CER reaches zero.
    pub stop_at_zero_train_cer: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            sort_by_length: false,
            eval_every: 1,
            stop_at_zero_train_cer: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    #[default]
    Greedy,
    Beam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub beam: usize,
    pub lm: Option<PathBuf>,
    pub lm_weight: f64,
    pub length_bonus: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        let b = BeamOptions::default();
        Self {
            mode: DecodeMode::Greedy,
            beam: b.beam,
            lm: None,
            lm_weight: b.lm_weight,
            length_bonus: b.length_bonus,
        }
    }
}

impl DecodeConfig {
    pub fn beam_options(&self) -> BeamOptions {
        BeamOptions {
            beam: self.beam,
            lm_weight: self.lm_weight,
            length_bonus: self.length_bonus,
        }
    }
}

/// Everything one training run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: GicConfig,
    pub optimizer: OptimizerConfig,
    pub data: DataConfig,
    pub training: TrainingConfig,
    pub decode: DecodeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: GicConfig::default(),
            optimizer: OptimizerConfig::default(),
            data: DataConfig::default(),
            training: TrainingConfig::default(),
            decode: DecodeConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Model checks plus optimizer, training and decoding ranges. The
    /// model's vocabulary and feature sizes are checked against data later.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let o = &self.optimizer;
        let bad = |m: String| Err(Error::Config(m));
        if !(o.peak_lr > 0.0 && o.peak_lr.is_finite()) {
            return bad(format!("peak_lr {} must be positive", o.peak_lr));
        }
        if o.warmup_steps == 0 {
            return bad("warmup_steps must be at least 1".into());
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(o.epsilon > 0.0) || !(o.clip_norm >= 0.0) {
            return bad("epsilon must be positive and clip_norm nonnegative".into());
        }
        if self.training.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        let d = &self.decode;
        if d.beam == 0 {
            return bad("beam must be at least 1".into());
        }
        if !d.lm_weight.is_finite() || !d.length_bonus.is_finite() {
            return bad("lm_weight and length_bonus must be finite".into());
        }
        let has_manifest = self.data.train_manifest.is_some();
        match (&self.data.synth, has_manifest) {
            (Some(_), true) => return bad("set either data.synth or data.train_manifest, not both".into()),
            (None, false) => return bad("no training data: set data.synth or data.train_manifest".into()),
            (Some(s), false) => {
                s.validate()?;
                if self.data.synth_valid >= s.n_utts {
                    return bad("synth_valid must leave at least one training utterance".into());
                }
            }
            (None, true) => {}
        }
        Ok(())
    }

    /// Desk-scale overfit preset: Transformer, L=6, K=2, λ=0.5, d=32 on
    /// 32 synthetic utterances over 8 symbols.
    pub fn desk_preset() -> Self {
        RunConfig {
            seed: 1,
            model: GicConfig {
                vocab_size: 8,
                feat_dim: 16,
                ..GicConfig::default()
            },
            data: DataConfig {
                synth: Some(SynthConfig {
                    seed: 1,
                    n_utts: 32,
                    vocab_size: 8,
                    noise_std: 0.05,
                    ..SynthConfig::default()
                }),
                ..DataConfig::default()
            },
            ..RunConfig::default()
        }
    }
}
