use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{LossWeights, ModelConfig, ModelKind};
use crate::nn::AdamConfig;
use crate::signal::PipelineConfig;

/// Every tunable of an experiment, read from a flat `key = value` file.
///
/// Snippet geometry fields left unset take the model's own preset (the PPG variant
/// and DeepConvLSTM use different rates and snippet lengths).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub rate_hz: Option<f64>,
    pub tau_s: Option<f64>,
    pub overlap: Option<f64>,
    pub n_snippets: usize,
    pub init_snippets: usize,
    pub impute_window_s: f64,

    pub tse_f: usize,
    pub tse_out: usize,
    pub tse_dropout: f64,
    pub pce_f: usize,
    pub pce_out: usize,
    pub lstm_h: usize,
    pub decoder_hidden: usize,
    pub disc_hidden: usize,
    pub disc_dropout: f64,
    pub fft_out: usize,
    pub ffnn_width: usize,
    pub ffnn_blocks: usize,

    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    /// Unset: 100, or 200 for the feed-forward baseline.
    pub epochs: Option<usize>,
    pub runs: usize,
    pub val_fraction: f64,
    pub hr_weight: f64,
    pub disc_weight: f64,
    pub base_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let a = AdamConfig::default();
        let p = PipelineConfig::default();
        ExperimentConfig {
            rate_hz: None,
            tau_s: None,
            overlap: None,
            n_snippets: p.n_snippets,
            init_snippets: p.init_snippets,
            impute_window_s: p.impute_window_s,
            tse_f: m.tse_f,
            tse_out: m.tse_out,
            tse_dropout: m.tse_dropout,
            pce_f: m.pce_f,
            pce_out: m.pce_out,
            lstm_h: m.lstm_h,
            decoder_hidden: m.decoder_hidden,
            disc_hidden: m.disc_hidden,
            disc_dropout: m.disc_dropout,
            fft_out: m.fft_out,
            ffnn_width: m.ffnn_width,
            ffnn_blocks: m.ffnn_blocks,
            learning_rate: a.learning_rate,
            weight_decay: a.weight_decay,
            beta1: a.beta1,
            beta2: a.beta2,
            epsilon: a.epsilon,
            batch_size: 64,
            epochs: None,
            runs: 7,
            val_fraction: 0.2,
            hr_weight: LossWeights::WITH_DISCRIMINATOR.hr,
            disc_weight: LossWeights::WITH_DISCRIMINATOR.disc,
            base_seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 || self.runs == 0 {
            return bad("batch_size and runs must be positive".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction {} not in [0, 1)", self.val_fraction));
        }
        if self.hr_weight < 0.0 || self.disc_weight < 0.0 {
            return bad("loss weights must be non-negative".into());
        }
        for (name, v) in [("tse_dropout", self.tse_dropout), ("disc_dropout", self.disc_dropout)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} {v} not in [0, 1)"));
            }
        }
        Ok(())
    }

    pub fn pipeline(&self, kind: ModelKind) -> PipelineConfig {
        let base = kind.pipeline();
        PipelineConfig {
            rate_hz: self.rate_hz.unwrap_or(base.rate_hz),
            tau_s: self.tau_s.unwrap_or(base.tau_s),
            overlap: self.overlap.unwrap_or(base.overlap),
            n_snippets: self.n_snippets,
            init_snippets: self.init_snippets,
            impute_window_s: self.impute_window_s,
            channels: None,
            use_ppg: base.use_ppg,
        }
    }

    pub fn model(&self, kind: ModelKind, in_channels: usize) -> ModelConfig {
        ModelConfig {
            kind,
            in_channels,
            tse_f: self.tse_f,
            tse_out: self.tse_out,
            tse_dropout: self.tse_dropout,
            pce_f: self.pce_f,
            pce_out: self.pce_out,
            lstm_h: self.lstm_h,
            decoder_hidden: self.decoder_hidden,
            disc_hidden: self.disc_hidden,
            disc_dropout: self.disc_dropout,
            fft_out: self.fft_out,
            ffnn_width: self.ffnn_width,
            ffnn_blocks: self.ffnn_blocks,
            ..ModelConfig::default()
        }
        .with_pipeline(&self.pipeline(kind))
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
        }
    }

    pub fn epochs_for(&self, kind: ModelKind) -> usize {
        self.epochs.unwrap_or_else(|| kind.default_epochs())
    }

    /// Loss weights for a model: only the conditioning-embedding models have a discriminator.
    pub fn loss_weights(&self, kind: ModelKind) -> LossWeights {
        if kind.has_discriminator() {
            LossWeights {
                hr: self.hr_weight,
                disc: self.disc_weight,
            }
        } else {
            LossWeights::HR_ONLY
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_hyperparameters() {
        let c = ExperimentConfig::default();
        assert_eq!((c.pce_f, c.init_snippets, c.tse_out, c.tse_f, c.lstm_h, c.pce_out), (64, 12, 128, 16, 64, 64));
        assert_eq!((c.learning_rate, c.weight_decay, c.tse_dropout), (5e-3, 5e-5, 0.15));
        let p = c.pipeline(ModelKind::PceLstm);
        assert_eq!((p.tau_s, p.overlap, p.rate_hz), (4.0, 0.5, 32.0));
        let p = c.pipeline(ModelKind::PceLstmPpg);
        assert_eq!((p.tau_s, p.overlap), (8.0, 0.75));
        assert_eq!(c.epochs_for(ModelKind::Ffnn), 200);
        assert_eq!(c.loss_weights(ModelKind::PceLstm), LossWeights::WITH_DISCRIMINATOR);
        assert_eq!(c.loss_weights(ModelKind::LstmSelfEncode), LossWeights::HR_ONLY);
    }

    #[test]
    fn flat_file_parses_and_rejects_unknown_keys() {
        let c = ExperimentConfig::from_toml_str("epochs = 3\ntau_s = 2.0\nlstm_h = 8\n").unwrap();
        assert_eq!(c.epochs, Some(3));
        assert_eq!(c.model(ModelKind::PceLstm, 6).ts_len, 64);
        assert_eq!(c.model(ModelKind::PceLstm, 6).lstm_h, 8);
        assert!(ExperimentConfig::from_toml_str("lstm_hidden = 8\n").is_err());
        let round = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(round, c);
    }
}
