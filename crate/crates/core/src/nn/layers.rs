//! Parameterized layers. Each layer owns [`ParamId`]s into a shared store and
//! records its computation on whatever tape it is given.

use super::{ParamId, ParamVars, ParameterStore};
use crate::error::Result;
use crate::tensor::{Scalar, Tape, Var};

/// Initial value of the LSTM forget-gate bias.
pub const FORGET_BIAS: f64 = 1.0;

fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Scalar>(store: &mut ParameterStore<T>, name: &str, in_features: usize, out_features: usize) -> Result<Self> {
        let weight = store.uniform(
            &format!("{name}.weight"),
            &[out_features, in_features],
            fan_in_bound(in_features),
        )?;
        let bias = store.uniform(&format!("{name}.bias"), &[out_features], fan_in_bound(in_features))?;
        Ok(Linear {
            weight,
            bias,
            in_features,
            out_features,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamVars, x: Var) -> Result<Var> {
        tape.linear(x, p.get(self.weight), Some(p.get(self.bias)))
    }

    pub fn param_count(in_features: usize, out_features: usize) -> usize {
        in_features * out_features + out_features
    }
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let weight = store.uniform(
            &format!("{name}.kernel"),
            &[out_channels, in_channels, kernel],
            fan_in_bound(in_channels * kernel),
        )?;
        let bias = store.uniform(&format!("{name}.bias"), &[out_channels], fan_in_bound(in_channels * kernel))?;
        Ok(Conv1d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamVars, x: Var) -> Result<Var> {
        tape.conv1d(x, p.get(self.weight), Some(p.get(self.bias)), self.stride, self.padding)
    }

    pub fn param_count(in_channels: usize, out_channels: usize, kernel: usize) -> usize {
        in_channels * out_channels * kernel + out_channels
    }
}

/// Single-layer LSTM with one fused bias vector per gate block.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<T: Scalar>(store: &mut ParameterStore<T>, name: &str, input: usize, hidden: usize) -> Result<Self> {
        let w_ih = store.uniform(&format!("{name}.w_ih"), &[4 * hidden, input], fan_in_bound(input))?;
        let w_hh = store.uniform(&format!("{name}.w_hh"), &[4 * hidden, hidden], fan_in_bound(hidden))?;
        let mut b = vec![T::zero(); 4 * hidden];
        b[hidden..2 * hidden].iter_mut().for_each(|v| *v = T::lit(FORGET_BIAS));
        let bias = store.insert(&format!("{name}.bias"), crate::tensor::Tensor::new([4 * hidden], b)?)?;
        Ok(Lstm {
            w_ih,
            w_hh,
            bias,
            input,
            hidden,
        })
    }

    pub fn step<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamVars, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        tape.lstm_cell(x, h, c, p.get(self.w_ih), p.get(self.w_hh), p.get(self.bias))
    }

    pub fn param_count(input: usize, hidden: usize) -> usize {
        4 * hidden * (input + hidden) + 4 * hidden
    }
}

/// Dropout with a fixed rate; inert when the tape is in eval mode.
#[derive(Clone, Copy, Debug)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.dropout(x, self.rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_shapes_and_bounds() {
        let mut s = ParameterStore::<f32>::new(9);
        let l = Linear::new(&mut s, "fc", 64, 32).unwrap();
        let w = s.get(l.weight);
        assert_eq!(w.shape(), &[32, 64]);
        assert_eq!(s.get(l.bias).shape(), &[32]);
        assert!(w.data().iter().all(|v| v.abs() < 1.0 / 8.0));
        assert!(s.get(l.bias).data().iter().all(|v| v.abs() < 1.0 / 8.0));
        assert_eq!(s.numel(), 2080);
        assert_eq!(Linear::param_count(64, 32), 2080);
    }

    #[test]
    fn same_seed_same_store() {
        let build = || {
            let mut s = ParameterStore::<f32>::new(42);
            Linear::new(&mut s, "a", 5, 3).unwrap();
            Lstm::new(&mut s, "b", 4, 6).unwrap();
            s.tensors()
        };
        let (a, b) = (build(), build());
        for (x, y) in a.iter().zip(&b) {
            assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn lstm_forget_bias_is_one() {
        let mut s = ParameterStore::<f32>::new(1);
        let l = Lstm::new(&mut s, "lstm", 128, 64).unwrap();
        let b = s.get(l.bias).data();
        assert!(b[64..128].iter().all(|&v| v == 1.0));
        assert!(b[..64].iter().chain(&b[128..]).all(|&v| v == 0.0));
        assert_eq!(s.numel(), Lstm::param_count(128, 64));
    }
}
