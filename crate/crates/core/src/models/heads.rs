use crate::error::Result;
use crate::nn::{Dropout, Linear, ParamVars, ParameterStore};
use crate::tensor::{Scalar, Tape, Var};

/// Hidden state → one heart-rate value: `H → 32 → 32 → 1` with ReLU between.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub layers: Vec<Linear>,
}

impl Decoder {
    pub fn new<T: Scalar>(store: &mut ParameterStore<T>, name: &str, input: usize, hidden: usize) -> Result<Self> {
        Ok(Decoder {
            layers: vec![
                Linear::new(store, &format!("{name}.fc1"), input, hidden)?,
                Linear::new(store, &format!("{name}.fc2"), hidden, hidden)?,
                Linear::new(store, &format!("{name}.fc3"), hidden, 1)?,
            ],
        })
    }

    /// `[rows, input]` → `[rows, 1]`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamVars, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, p, h)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    pub fn param_count(input: usize, hidden: usize) -> usize {
        Linear::param_count(input, hidden) + Linear::param_count(hidden, hidden) + Linear::param_count(hidden, 1)
    }
}

/// Same-subject classifier over two concatenated embeddings.
///
/// Five linear layers; ReLU and dropout follow the first four, a sigmoid the last.
/// The concatenation is ordered, so `(a, b)` and `(b, a)` generally score differently.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub layers: Vec<Linear>,
    pub dropout: Dropout,
}

pub const DISCRIMINATOR_LAYERS: usize = 5;

impl Discriminator {
    pub fn new<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        embedding: usize,
        hidden: usize,
        dropout: f64,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(DISCRIMINATOR_LAYERS);
        let mut width = 2 * embedding;
        for i in 0..DISCRIMINATOR_LAYERS {
            let out = if i + 1 == DISCRIMINATOR_LAYERS { 1 } else { hidden };
            layers.push(Linear::new(store, &format!("{name}.fc{}", i + 1), width, out)?);
            width = out;
        }
        Ok(Discriminator {
            layers,
            dropout: Dropout { rate: dropout },
        })
    }

    /// Probabilities `[B, 1]` that each `(a, b)` row pair comes from one subject.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamVars, a: Var, b: Var) -> Result<Var> {
        let mut h = tape.concat(&[a, b], 1)?;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, p, h)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h)?;
                h = self.dropout.forward(tape, h)?;
            }
        }
        tape.sigmoid(h)
    }

    pub fn param_count(embedding: usize, hidden: usize) -> usize {
        Linear::param_count(2 * embedding, hidden)
            + (DISCRIMINATOR_LAYERS - 2) * Linear::param_count(hidden, hidden)
            + Linear::param_count(hidden, 1)
    }
}
