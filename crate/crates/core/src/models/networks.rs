use super::batch::SegmentBatch;
use super::config::{ModelConfig, ModelKind};
use super::encoder::ConvEncoder;
use super::heads::{Decoder, Discriminator};
use crate::error::{Error, Result};
use crate::nn::{Conv1d, Linear, Lstm, ParamVars, ParameterStore};
use crate::tensor::{Scalar, Tape, Var};

fn lstm_zero_state<T: Scalar>(tape: &mut Tape<T>, batch: usize, hidden: usize) -> Result<Var> {
    tape.constant([batch, hidden], vec![T::zero(); batch * hidden])
}

fn snippets_input<T: Scalar>(tape: &mut Tape<T>, b: &SegmentBatch<T>) -> Result<Var> {
    tape.constant([b.batch * b.n, b.channels, b.len], b.snippets.clone())
}

/// Stacks per-step `[B, 1]` outputs into `[B, steps]`.
fn stack_steps<T: Scalar>(tape: &mut Tape<T>, outs: &[Var]) -> Result<Var> {
    tape.concat(outs, 1)
}

/// Snippet encoder(s), conditioning encoder, state initializers, LSTM, decoder, discriminator.
#[derive(Clone, Debug)]
pub struct PceLstm {
    pub ts_encoder: ConvEncoder,
    /// FFT-magnitude encoder, PPG variant only.
    pub fft_encoder: Option<ConvEncoder>,
    pub pc_encoder: ConvEncoder,
    pub fc_h: Linear,
    pub fc_c: Linear,
    pub lstm: Lstm,
    pub decoder: Decoder,
    pub discriminator: Discriminator,
    ppg: bool,
    feature_width: usize,
}

impl PceLstm {
    pub fn new<T: Scalar>(store: &mut ParameterStore<T>, c: &ModelConfig) -> Result<Self> {
        let ppg = c.kind == ModelKind::PceLstmPpg;
        let ts_in = c.in_channels + ppg as usize;
        let ts_encoder = ConvEncoder::new(store, "tse", ts_in, c.ts_len, c.tse_f, c.tse_out, c.tse_dropout)?;
        let fft_encoder = if ppg {
            Some(ConvEncoder::new(store, "tse_fft", 1, c.ts_len / 2, c.tse_f, c.fft_out, c.tse_dropout)?)
        } else {
            None
        };
        let feature_width = c.feature_width();
        // The IMU task appends heart rate as one more row; the PPG task does not.
        let pc_in = feature_width + (!ppg) as usize;
        let pc_encoder = ConvEncoder::new(store, "pce", pc_in, c.init_snippets, c.pce_f, c.pce_out, c.tse_dropout)?;
        Ok(PceLstm {
            ts_encoder,
            fft_encoder,
            pc_encoder,
            fc_h: Linear::new(store, "fc_h", c.pce_out, c.lstm_h)?,
            fc_c: Linear::new(store, "fc_c", c.pce_out, c.lstm_h)?,
            lstm: Lstm::new(store, "lstm", feature_width, c.lstm_h)?,
            decoder: Decoder::new(store, "decoder", c.lstm_h, c.decoder_hidden)?,
            discriminator: Discriminator::new(store, "disc", c.pce_out, c.disc_hidden, c.disc_dropout)?,
            ppg,
            feature_width,
        })
    }

    /// Per-snippet features, `[B, n, F]`.
    fn features<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamVars, b: &SegmentBatch<T>) -> Result<Var> {
        let x = snippets_input(tape, b)?;
        let mut f = self.ts_encoder.forward(tape, p, x)?;
        if let Some(enc) = &self.fft_encoder {
            let fft = b
                .fft
                .clone()
                .ok_or_else(|| Error::MissingData("PPG model needs FFT magnitudes in the batch".into()))?;
            let fx = tape.constant([b.batch * b.n, 1, b.len / 2], fft)?;
            let g = enc.forward(tape, p, fx)?;
            f = tape.concat(&[f, g], 1)?;
        }
        tape.reshape(f, [b.batch, b.n, self.feature_width])
    }

    fn pce_from_features<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &ParamVars,
        b: &SegmentBatch<T>,
        feats: Var,
    ) -> Result<Var> {
        let mut init = tape.slice(feats, 1, 0, b.init)?;
        if !self.ppg {
            let hr: Vec<T> = b.hr_norm.chunks(b.n).flat_map(|r| r[..b.init].iter().copied()).collect();
            let hr = tape.constant([b.batch, b.init, 1], hr)?;
            init = tape.concat(&[init, hr], 2)?;
        }
        let x = tape.permute(init, &[0, 2, 1])?;
        self.pc_encoder.forward(tape, p, x)
    }

    /// Conditioning embedding `[B, PCE_out]` from the init snippets of each segment.
    pub fn pce<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamVars, b: &SegmentBatch<T>) -> Result<Var> {
        let feats = self.features(tape, p, b)?;
        self.pce_from_features(tape, p, b, feats)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamVars, b: &SegmentBatch<T>) -> Result<(Var, Var)> {
        let feats = self.features(tape, p, b)?;
        let pce = self.pce_from_features(tape, p, b, feats)?;
        let mut h = self.fc_h.forward(tape, p, pce)?;
        let mut c = self.fc_c.forward(tape, p, pce)?;
        let mut outs = Vec::with_capacity(b.prediction_len());
        for t in b.init..b.n {
            let x = tape.select(feats, 1, t)?;
            (h, c) = self.lstm.step(tape, p, x, h, c)?;
            outs.push(h);
        }
        let hs = tape.stack(&outs, 1)?;
        let hs = tape.reshape(hs, [b.batch * outs.len(), self.lstm.hidden])?;
        let y = self.decoder.forward(tape, p, hs)?;
        let y = tape.reshape(y, [b.batch, outs.len()])?;
        Ok((y, pce))
    }
}

/// Ablation: no conditioning encoder; heart rate enters the LSTM as one more input feature.
#[derive(Clone, Debug)]
pub struct SelfEncodeLstm {
    pub ts_encoder: ConvEncoder,
    pub lstm: Lstm,
    pub decoder: Decoder,
    tse_out: usize,
}

impl SelfEncodeLstm {
    pub fn new<T: Scalar>(store: &mut ParameterStore<T>, c: &ModelConfig) -> Result<Self> {
        Ok(SelfEncodeLstm {
            ts_encoder: ConvEncoder::new(store, "tse", c.in_channels, c.ts_len, c.tse_f, c.tse_out, c.tse_dropout)?,
            lstm: Lstm::new(store, "lstm", c.tse_out + 1, c.lstm_h)?,
            decoder: Decoder::new(store, "decoder", c.lstm_h, c.decoder_hidden)?,
            tse_out: c.tse_out,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamVars, b: &SegmentBatch<T>) -> Result<Var> {
        let x = snippets_input(tape, b)?;
        let f = self.ts_encoder.forward(tape, p, x)?;
        let f = tape.reshape(f, [b.batch, b.n, self.tse_out])?;
        let hr: Vec<T> = b
            .hr_norm
            .chunks(b.n)
            .flat_map(|r| r.iter().enumerate().map(|(k, &v)| if k < b.init { v } else { T::zero() }))
            .collect();
        let hr = tape.constant([b.batch, b.n, 1], hr)?;
        let feats = tape.concat(&[f, hr], 2)?;
        let mut h = lstm_zero_state(tape, b.batch, self.lstm.hidden)?;
        let mut c = h;
        let mut outs = Vec::with_capacity(b.prediction_len());
        for t in 0..b.n {
            let x = tape.select(feats, 1, t)?;
            (h, c) = self.lstm.step(tape, p, x, h, c)?;
            if t >= b.init {
                outs.push(h);
            }
        }
        let hs = tape.stack(&outs, 1)?;
        let hs = tape.reshape(hs, [b.batch * outs.len(), self.lstm.hidden])?;
        let y = self.decoder.forward(tape, p, hs)?;
        tape.reshape(y, [b.batch, outs.len()])
    }
}

/// Recursive feed-forward baseline over per-channel window means and the previous heart rate.
///
/// Every hidden block sees the raw input concatenated to its own input.
#[derive(Clone, Debug)]
pub struct Ffnn {
    pub blocks: Vec<Linear>,
    pub head: Linear,
}

impl Ffnn {
    pub fn new<T: Scalar>(store: &mut ParameterStore<T>, c: &ModelConfig) -> Result<Self> {
        let input = c.in_channels + 1;
        let mut blocks = Vec::with_capacity(c.ffnn_blocks);
        for i in 0..c.ffnn_blocks {
            let width = if i == 0 { input } else { c.ffnn_width + input };
            blocks.push(Linear::new(store, &format!("ffnn.block{}", i + 1), width, c.ffnn_width)?);
        }
        let head_in = if c.ffnn_blocks == 0 { input } else { c.ffnn_width };
        Ok(Ffnn {
            blocks,
            head: Linear::new(store, "ffnn.head", head_in, 1)?,
        })
    }

    pub fn step<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamVars, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, block) in self.blocks.iter().enumerate() {
            let inp = if i == 0 { x } else { tape.concat(&[h, x], 1)? };
            h = block.forward(tape, p, inp)?;
            h = tape.relu(h)?;
        }
        self.head.forward(tape, p, h)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamVars, b: &SegmentBatch<T>) -> Result<Var> {
        let means = tape.constant([b.batch, b.n, b.sensor_channels], b.means.clone())?;
        let prev: Vec<T> = b.hr_norm.chunks(b.n).map(|r| r[b.init - 1]).collect();
        let mut hr_prev = tape.constant([b.batch, 1], prev)?;
        let mut outs = Vec::with_capacity(b.prediction_len());
        for t in b.init..b.n {
            let m = tape.select(means, 1, t)?;
            let x = tape.concat(&[m, hr_prev], 1)?;
            hr_prev = self.step(tape, p, x)?;
            outs.push(hr_prev);
        }
        stack_steps(tape, &outs)
    }
}

/// Per-channel temporal convolutions followed by stacked LSTMs, read out at the last
/// step of every snippet.
#[derive(Clone, Debug)]
pub struct DeepConvLstm {
    pub convs: Vec<Conv1d>,
    pub lstms: Vec<Lstm>,
    pub head: Linear,
    filters: usize,
}

impl DeepConvLstm {
    pub fn new<T: Scalar>(store: &mut ParameterStore<T>, c: &ModelConfig) -> Result<Self> {
        let mut convs = Vec::with_capacity(c.dcl_conv_layers);
        for i in 0..c.dcl_conv_layers {
            let cin = if i == 0 { 1 } else { c.dcl_filters };
            convs.push(Conv1d::new(store, &format!("dcl.conv{}", i + 1), cin, c.dcl_filters, c.dcl_kernel, 1, 0)?);
        }
        // Sensor channels plus the heart-rate channel.
        let mut input = (c.in_channels + 1) * c.dcl_filters;
        let mut lstms = Vec::with_capacity(c.dcl_lstm_layers);
        for i in 0..c.dcl_lstm_layers {
            lstms.push(Lstm::new(store, &format!("dcl.lstm{}", i + 1), input, c.dcl_hidden)?);
            input = c.dcl_hidden;
        }
        Ok(DeepConvLstm {
            convs,
            lstms,
            head: Linear::new(store, "dcl.head", input, 1)?,
            filters: c.dcl_filters,
        })
    }

    /// Time steps per snippet after the valid convolutions.
    pub fn steps_per_snippet(&self, len: usize) -> usize {
        self.convs.iter().fold(len, |l, c| l + 1 - c.kernel)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamVars, b: &SegmentBatch<T>) -> Result<Var> {
        let x = snippets_input(tape, b)?;
        let mut h = tape.reshape(x, [b.batch * b.n * b.channels, 1, b.len])?;
        for conv in &self.convs {
            h = conv.forward(tape, p, h)?;
            h = tape.relu(h)?;
        }
        let steps = self.steps_per_snippet(b.len);
        let h = tape.reshape(h, [b.batch, b.n, b.channels, self.filters, steps])?;
        let h = tape.permute(h, &[0, 1, 4, 2, 3])?;
        let seq = tape.reshape(h, [b.batch, b.n * steps, b.channels * self.filters])?;

        let mut states = Vec::with_capacity(self.lstms.len());
        for l in &self.lstms {
            let z = lstm_zero_state(tape, b.batch, l.hidden)?;
            states.push((z, z));
        }
        let mut outs = Vec::with_capacity(b.prediction_len());
        for t in 0..b.n * steps {
            let mut x = tape.select(seq, 1, t)?;
            for (l, st) in self.lstms.iter().zip(states.iter_mut()) {
                *st = l.step(tape, p, x, st.0, st.1)?;
                x = st.0;
            }
            let snippet = t / steps;
            if t % steps == steps - 1 && snippet >= b.init {
                outs.push(self.head.forward(tape, p, x)?);
            }
        }
        stack_steps(tape, &outs)
    }
}
