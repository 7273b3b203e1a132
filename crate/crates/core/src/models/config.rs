use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::PipelineConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    PceLstm,
    PceLstmPpg,
    LstmSelfEncode,
    Ffnn,
    #[serde(rename = "deepconvlstm")]
    DeepConvLstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::PceLstm,
        ModelKind::PceLstmPpg,
        ModelKind::LstmSelfEncode,
        ModelKind::Ffnn,
        ModelKind::DeepConvLstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::PceLstm => "pce-lstm",
            ModelKind::PceLstmPpg => "pce-lstm-ppg",
            ModelKind::LstmSelfEncode => "lstm-self-encode",
            ModelKind::Ffnn => "ffnn",
            ModelKind::DeepConvLstm => "deepconvlstm",
        }
    }

    /// Preprocessing this model expects by default.
    pub fn pipeline(self) -> PipelineConfig {
        match self {
            ModelKind::PceLstmPpg => PipelineConfig::ppg(),
            ModelKind::DeepConvLstm => PipelineConfig::deepconvlstm(),
            _ => PipelineConfig::default(),
        }
    }

    pub fn has_discriminator(self) -> bool {
        matches!(self, ModelKind::PceLstm | ModelKind::PceLstmPpg)
    }

    /// Default training length in epochs.
    pub fn default_epochs(self) -> usize {
        match self {
            ModelKind::Ffnn => 200,
            _ => 100,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown model {s:?}; expected one of {}",
                    ModelKind::ALL.map(ModelKind::name).join(", ")
                ))
            })
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Sensor channels per snippet (PPG and heart-rate rows not included).
    pub in_channels: usize,
    /// Samples per snippet.
    pub ts_len: usize,
    pub n_snippets: usize,
    pub init_snippets: usize,
    pub tse_f: usize,
    pub tse_out: usize,
    pub tse_dropout: f64,
    pub pce_f: usize,
    pub pce_out: usize,
    pub lstm_h: usize,
    pub decoder_hidden: usize,
    pub disc_hidden: usize,
    pub disc_dropout: f64,
    /// Output width of the FFT-branch encoder.
    pub fft_out: usize,
    pub ffnn_width: usize,
    pub ffnn_blocks: usize,
    pub dcl_filters: usize,
    pub dcl_kernel: usize,
    pub dcl_conv_layers: usize,
    pub dcl_hidden: usize,
    pub dcl_lstm_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::PceLstm,
            in_channels: 6,
            ts_len: 128,
            n_snippets: 50,
            init_snippets: 12,
            tse_f: 16,
            tse_out: 128,
            tse_dropout: 0.15,
            pce_f: 64,
            pce_out: 64,
            lstm_h: 64,
            decoder_hidden: 32,
            disc_hidden: 64,
            disc_dropout: 0.15,
            fft_out: 12,
            ffnn_width: 16,
            ffnn_blocks: 3,
            dcl_filters: 64,
            dcl_kernel: 5,
            dcl_conv_layers: 4,
            dcl_hidden: 128,
            dcl_lstm_layers: 2,
        }
    }
}

impl ModelConfig {
    pub fn new(kind: ModelKind, in_channels: usize) -> Self {
        let p = kind.pipeline();
        ModelConfig {
            kind,
            in_channels,
            ts_len: p.snippet_len(),
            n_snippets: p.n_snippets,
            init_snippets: p.init_snippets,
            ..Default::default()
        }
    }

    /// Takes snippet geometry from a pipeline configuration.
    pub fn with_pipeline(mut self, p: &PipelineConfig) -> Self {
        self.ts_len = p.snippet_len();
        self.n_snippets = p.n_snippets;
        self.init_snippets = p.init_snippets;
        self
    }

    pub fn prediction_len(&self) -> usize {
        self.n_snippets - self.init_snippets
    }

    /// Width of the per-snippet feature vector fed to the LSTM.
    pub fn feature_width(&self) -> usize {
        match self.kind {
            ModelKind::PceLstmPpg => self.tse_out + self.fft_out,
            _ => self.tse_out,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ts_len < 2 {
            return Err(Error::InvalidArgument(format!("snippet length {} must be at least 2", self.ts_len)));
        }
        if !(self.n_snippets > self.init_snippets && self.init_snippets >= 1) {
            return Err(Error::InvalidArgument("need n_snippets > init_snippets >= 1".into()));
        }
        if (self.kind.has_discriminator() || self.kind == ModelKind::LstmSelfEncode)
            && self.init_snippets < 2 && self.kind.has_discriminator() {
                return Err(Error::InvalidArgument("conditioning encoder needs at least 2 init snippets".into()));
            }
        if self.kind == ModelKind::PceLstmPpg && !(self.ts_len / 2).is_power_of_two() {
            return Err(Error::InvalidArgument(format!("PPG snippet length {} is not a power of two", self.ts_len)));
        }
        if self.kind == ModelKind::DeepConvLstm && self.ts_len <= self.dcl_conv_layers * (self.dcl_kernel - 1) {
            return Err(Error::InvalidArgument("snippet too short for the convolution stack".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
        assert!("lstm".parse::<ModelKind>().is_err());
    }

    #[test]
    fn ppg_feature_width() {
        let c = ModelConfig::new(ModelKind::PceLstmPpg, 6);
        assert_eq!(c.ts_len, 256);
        assert_eq!(c.feature_width(), 140);
    }
}
