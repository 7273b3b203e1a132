use crate::error::{Error, Result};
use crate::nn::{Conv1d, ParamVars, ParameterStore};
use crate::tensor::{conv_out_len, Scalar, Tape, Var, LEAKY_SLOPE};

/// Kernel, stride, and padding that take a length `len` to `⌊len / 2⌋`.
pub fn halving_step(len: usize) -> (usize, usize, usize) {
    match len {
        2 => (2, 1, 0),
        l if l % 2 == 0 => (3, 2, 1),
        _ => (3, 2, 0),
    }
}

/// Number of halving layers that collapse `len` to one: `⌊log₂ len⌋`.
pub fn halving_depth(len: usize) -> usize {
    (usize::BITS - 1 - len.max(1).leading_zeros()) as usize
}

/// Time lengths after each halving layer, starting with the input length.
pub fn halving_lengths(len: usize) -> Vec<usize> {
    let mut out = vec![len];
    let mut l = len;
    for _ in 0..halving_depth(len) {
        let (k, s, p) = halving_step(l);
        l = conv_out_len(l, k, s, p);
        out.push(l);
    }
    out
}

/// Stack of conv → leaky ReLU → dropout layers that reduces the time axis to one.
///
/// Used for the snippet encoder, the FFT-branch encoder, and the conditioning encoder.
#[derive(Clone, Debug)]
pub struct ConvEncoder {
    pub layers: Vec<Conv1d>,
    pub in_channels: usize,
    pub len: usize,
    pub out_channels: usize,
    pub dropout: f64,
}

impl ConvEncoder {
    pub fn new<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        in_channels: usize,
        len: usize,
        hidden: usize,
        out_channels: usize,
        dropout: f64,
    ) -> Result<Self> {
        if len < 2 {
            return Err(Error::InvalidArgument(format!("{name}: time length {len} must be at least 2")));
        }
        let depth = halving_depth(len);
        let mut layers = Vec::with_capacity(depth);
        let mut l = len;
        let mut c = in_channels;
        for i in 0..depth {
            let (k, s, p) = halving_step(l);
            let c_out = if i + 1 == depth { out_channels } else { hidden };
            layers.push(Conv1d::new(store, &format!("{name}.layer{}", i + 1), c, c_out, k, s, p)?);
            l = conv_out_len(l, k, s, p);
            c = c_out;
        }
        debug_assert_eq!(l, 1);
        Ok(ConvEncoder {
            layers,
            in_channels,
            len,
            out_channels,
            dropout,
        })
    }

    /// `[B, in_channels, len]` → `[B, out_channels]`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamVars, x: Var) -> Result<Var> {
        let shape = tape.shape(x)?.to_vec();
        if shape.len() != 3 || shape[1] != self.in_channels || shape[2] != self.len {
            return Err(Error::shape(
                "conv encoder",
                format!("expected [B, {}, {}], got {shape:?}", self.in_channels, self.len),
            ));
        }
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(tape, p, h)?;
            h = tape.leaky_relu(h, T::lit(LEAKY_SLOPE))?;
            h = tape.dropout(h, self.dropout)?;
        }
        tape.reshape(h, [shape[0], self.out_channels])
    }

    pub fn param_count(in_channels: usize, len: usize, hidden: usize, out_channels: usize) -> usize {
        let depth = halving_depth(len);
        let mut l = len;
        let mut c = in_channels;
        let mut total = 0;
        for i in 0..depth {
            let (k, s, p) = halving_step(l);
            let c_out = if i + 1 == depth { out_channels } else { hidden };
            total += Conv1d::param_count(c, c_out, k);
            l = conv_out_len(l, k, s, p);
            c = c_out;
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halving_examples() {
        assert_eq!(halving_lengths(128), vec![128, 64, 32, 16, 8, 4, 2, 1]);
        assert_eq!(halving_depth(256), 8);
        assert_eq!(halving_lengths(12), vec![12, 6, 3, 1]);
        for len in 2..=600 {
            let l = halving_lengths(len);
            assert_eq!(*l.last().unwrap(), 1, "len {len}");
            assert!(l.windows(2).all(|w| w[1] == w[0] / 2));
        }
    }

    #[test]
    fn rejects_too_short() {
        let mut s = ParameterStore::<f32>::new(0);
        assert!(ConvEncoder::new(&mut s, "e", 3, 1, 4, 4, 0.0).is_err());
    }
}
