//! Heart-rate forecasting networks: the conditioning-embedding LSTM, its PPG variant,
//! the self-encode ablation, and the two baselines.

mod batch;
mod config;
mod encoder;
mod heads;
mod networks;
#[cfg(test)]
mod tests;

pub use batch::{hr_stats_of, BatchLayout, SegmentBatch};
pub use config::{ModelConfig, ModelKind};
pub use encoder::{halving_depth, halving_lengths, halving_step, ConvEncoder};
pub use heads::{Decoder, Discriminator, DISCRIMINATOR_LAYERS};
pub use networks::{DeepConvLstm, Ffnn, PceLstm, SelfEncodeLstm};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Checkpoint, ParamVars, ParameterStore};
use crate::signal::NormStats;
use crate::tensor::{Scalar, Tape, Var};

/// Weights of the heart-rate and discriminator terms in the training loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub hr: f64,
    pub disc: f64,
}

impl LossWeights {
    pub const WITH_DISCRIMINATOR: LossWeights = LossWeights { hr: 0.9, disc: 0.1 };
    pub const HR_ONLY: LossWeights = LossWeights { hr: 1.0, disc: 0.0 };

    pub fn uses_discriminator(&self) -> bool {
        self.disc != 0.0
    }
}

/// `hr·L_HR + disc·L_D`; the discriminator term is left out when absent.
pub fn combine_losses<T: Scalar>(tape: &mut Tape<T>, w: LossWeights, l_hr: Var, l_d: Option<Var>) -> Result<Var> {
    let hr = tape.scale(l_hr, T::lit(w.hr))?;
    match l_d {
        Some(d) => {
            let d = tape.scale(d, T::lit(w.disc))?;
            tape.add(hr, d)
        }
        None => Ok(hr),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// Normalized predictions, `[B, n - init]`.
    pub hr_norm: Var,
    /// Predictions in beats/minute, `[B, n - init]`.
    pub hr_bpm: Var,
    /// Conditioning embedding `[B, PCE_out]` for models that have one.
    pub pce: Option<Var>,
}

#[derive(Clone, Debug)]
enum Network {
    Pce(PceLstm),
    SelfEncode(SelfEncodeLstm),
    Ffnn(Ffnn),
    DeepConvLstm(DeepConvLstm),
}

/// A network together with its parameters.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub store: ParameterStore<T>,
    net: Network,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParameterStore::new(seed);
        let net = match config.kind {
            ModelKind::PceLstm | ModelKind::PceLstmPpg => Network::Pce(PceLstm::new(&mut store, &config)?),
            ModelKind::LstmSelfEncode => Network::SelfEncode(SelfEncodeLstm::new(&mut store, &config)?),
            ModelKind::Ffnn => Network::Ffnn(Ffnn::new(&mut store, &config)?),
            ModelKind::DeepConvLstm => Network::DeepConvLstm(DeepConvLstm::new(&mut store, &config)?),
        };
        Ok(Model { config, store, net })
    }

    /// Rebuilds a model and its heart-rate normalization from a checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint<T>) -> Result<(Self, NormStats)> {
        let config: ModelConfig = serde_json::from_value(ck.config.clone())?;
        let stats: NormStats = serde_json::from_value(ck.normalization.clone())?;
        let mut model = Model::new(config, ck.params.seed())?;
        model.store.copy_values_from(&ck.params)?;
        Ok((model, stats))
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn layout(&self) -> BatchLayout {
        BatchLayout {
            ppg: self.kind() == ModelKind::PceLstmPpg,
            hr_channel: self.kind() == ModelKind::DeepConvLstm,
        }
    }

    pub fn pce_lstm(&self) -> Option<&PceLstm> {
        match &self.net {
            Network::Pce(n) => Some(n),
            _ => None,
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> ParamVars {
        self.store.bind(tape)
    }

    fn check_batch(&self, b: &SegmentBatch<T>) -> Result<()> {
        let extra = match self.kind() {
            ModelKind::PceLstmPpg | ModelKind::DeepConvLstm => 1,
            _ => 0,
        };
        if b.sensor_channels != self.config.in_channels || b.channels != self.config.in_channels + extra {
            return Err(Error::shape(
                "model input",
                format!(
                    "{} expects {} sensor channels ({} rows per snippet), batch has {} ({})",
                    self.kind(),
                    self.config.in_channels,
                    self.config.in_channels + extra,
                    b.sensor_channels,
                    b.channels
                ),
            ));
        }
        if b.len != self.config.ts_len {
            return Err(Error::shape(
                "model input",
                format!("snippet length {} but the model was built for {}", b.len, self.config.ts_len),
            ));
        }
        if b.init != self.config.init_snippets || b.n <= b.init {
            return Err(Error::shape(
                "model input",
                format!("batch has {} snippets with {} init; model expects {} init", b.n, b.init, self.config.init_snippets),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape<T>, p: &ParamVars, b: &SegmentBatch<T>) -> Result<ForwardOutput> {
        self.check_batch(b)?;
        let (hr_norm, pce) = match &self.net {
            Network::Pce(n) => {
                let (y, pce) = n.forward(tape, p, b)?;
                (y, Some(pce))
            }
            Network::SelfEncode(n) => (n.forward(tape, p, b)?, None),
            Network::Ffnn(n) => (n.forward(tape, p, b)?, None),
            Network::DeepConvLstm(n) => (n.forward(tape, p, b)?, None),
        };
        let hr_bpm = tape.affine(hr_norm, T::lit(b.hr_stats.std), T::lit(b.hr_stats.mean))?;
        Ok(ForwardOutput { hr_norm, hr_bpm, pce })
    }

    /// Conditioning embedding of a batch that may hold only the init snippets.
    pub fn pce(&self, tape: &mut Tape<T>, p: &ParamVars, b: &SegmentBatch<T>) -> Result<Var> {
        match &self.net {
            Network::Pce(n) => n.pce(tape, p, b),
            _ => Err(Error::InvalidArgument(format!("{} has no conditioning encoder", self.kind()))),
        }
    }

    /// Same-subject probabilities `[B, 1]`.
    pub fn discriminate(&self, tape: &mut Tape<T>, p: &ParamVars, a: Var, b: Var) -> Result<Var> {
        match &self.net {
            Network::Pce(n) => n.discriminator.forward(tape, p, a, b),
            _ => Err(Error::InvalidArgument(format!("{} has no discriminator", self.kind()))),
        }
    }

    /// Training loss of one batch. `partners` carries the second segment of every
    /// discriminator pair and the same-subject labels.
    pub fn loss(
        &self,
        tape: &mut Tape<T>,
        p: &ParamVars,
        batch: &SegmentBatch<T>,
        partners: Option<(&SegmentBatch<T>, &[bool])>,
        weights: LossWeights,
    ) -> Result<LossTerms> {
        let out = self.forward(tape, p, batch)?;
        let target = tape.constant([batch.batch, batch.prediction_len()], batch.target_norm())?;
        let l_hr = tape.l1_loss(out.hr_norm, target)?;
        let l_d = match (weights.uses_discriminator(), out.pce, partners) {
            (true, Some(pce), Some((other, labels))) => {
                let pce_b = self.pce(tape, p, other)?;
                let prob = self.discriminate(tape, p, pce, pce_b)?;
                let labels: Vec<T> = labels.iter().map(|&s| if s { T::one() } else { T::zero() }).collect();
                Some(tape.binary_cross_entropy(prob, &labels)?)
            }
            (true, Some(_), None) => {
                return Err(Error::InvalidArgument("discriminator loss requested without partner segments".into()))
            }
            _ => None,
        };
        let total = combine_losses(tape, weights, l_hr, l_d)?;
        Ok(LossTerms {
            total,
            hr: l_hr,
            disc: l_d,
            output: out,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub hr: Var,
    pub disc: Option<Var>,
    pub output: ForwardOutput,
}

/// Parameter totals per component, in declaration order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamCount {
    pub components: Vec<(String, usize)>,
    pub total: usize,
    /// Parameters used at prediction time (the discriminator is training-only).
    pub inference: usize,
}

pub fn count_parameters(config: &ModelConfig) -> Result<ParamCount> {
    let model = Model::<f32>::new(config.clone(), 0)?;
    let mut components: Vec<(String, usize)> = Vec::new();
    for (name, t) in model.store.iter() {
        let prefix = name.rsplit_once('.').map_or(name, |(head, _)| head);
        let component = match prefix.split_once('.') {
            Some((top, _)) if matches!(top, "tse" | "tse_fft" | "pce" | "decoder" | "disc") => top,
            _ => prefix,
        };
        match components.last_mut() {
            Some((n, c)) if n == component => *c += t.numel(),
            _ => components.push((component.to_string(), t.numel())),
        }
    }
    let total = components.iter().map(|(_, c)| c).sum();
    let disc: usize = components.iter().filter(|(n, _)| n == "disc").map(|(_, c)| c).sum();
    Ok(ParamCount {
        components,
        total,
        inference: total - disc,
    })
}
