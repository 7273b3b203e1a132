//! Append-only operation tape with reverse-mode differentiation.
//!
//! Every op appends one node whose inputs already live on the tape, so the
//! node vector is a topological order and backward is a single reverse sweep.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, ConvGeom};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Lower/upper clamp applied to probabilities inside binary cross entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Affine {
        x: usize,
        scale: T,
    },
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
        rows: usize,
        inp: usize,
        out: usize,
    },
    Conv1d {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: ConvGeom,
    },
    LeakyRelu {
        x: usize,
        slope: T,
    },
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Dropout {
        x: usize,
        mask: Vec<T>,
    },
    Concat {
        parts: Vec<usize>,
        chunks: Vec<usize>,
        outer: usize,
    },
    Slice {
        x: usize,
        outer: usize,
        in_chunk: usize,
        offset: usize,
        out_chunk: usize,
    },
    Reshape(usize),
    Permute {
        x: usize,
        out_shape: Vec<usize>,
        perm: Vec<usize>,
    },
    Sum(usize),
    Mean(usize),
    L1Loss {
        pred: usize,
        target: usize,
    },
    Bce {
        p: usize,
        labels: Vec<T>,
    },
    LstmPointwise {
        gates: usize,
        c_prev: usize,
        act: Vec<T>,
        tanh_c: Vec<T>,
        hidden: usize,
    },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records differentiable operations for one forward pass.
///
/// A tape is owned by a single worker; independent tapes share nothing.
pub struct Tape<T: Scalar> {
    id: u64,
    nodes: Vec<Node<T>>,
    mode: Mode,
    rng: ChaCha8Rng,
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Vec<T>>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(|g| g.as_deref())
    }
}

impl<T: Scalar> Gradients<T> {
    /// Adds the gradient of `var` (if any) into `tensor`'s accumulator.
    pub fn accumulate_into(&self, var: Var, tensor: &mut Tensor<T>) -> Result<()> {
        if var.tape != self.tape {
            return Err(Error::ForeignVariable);
        }
        if let Some(g) = self.get(var) {
            tensor.accumulate_grad(g)?;
        }
        Ok(())
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn add_into<T: Scalar>(slot: &mut Option<Vec<T>>, len: usize, f: impl FnOnce(&mut [T])) {
    let buf = slot.get_or_insert_with(|| vec![T::zero(); len]);
    f(buf);
}

impl<T: Scalar> Tape<T> {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVariable);
        }
        Ok(v.index)
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn ng(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// Records input data that never receives a gradient.
    pub fn constant(&mut self, shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Var> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(Error::shape(
                "constant",
                format!("shape {shape:?} vs {} elements", data.len()),
            ));
        }
        Ok(self.push(shape, data, Op::Leaf, false))
    }

    /// Records a trainable leaf whose gradient is kept after backward.
    pub fn variable(&mut self, shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Var> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(Error::shape(
                "variable",
                format!("shape {shape:?} vs {} elements", data.len()),
            ));
        }
        Ok(self.push(shape, data, Op::Leaf, true))
    }

    /// Records a copy of `t`; it is differentiable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    pub fn value(&self, v: Var) -> Result<&[T]> {
        Ok(&self.nodes[self.idx(v)?].value)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(&self.nodes[self.idx(v)?].shape)
    }

    pub fn to_tensor(&self, v: Var) -> Result<Tensor<T>> {
        let n = &self.nodes[self.idx(v)?];
        Tensor::new(n.shape.clone(), n.value.clone())
    }

    fn same_shape(&self, op: &'static str, a: usize, b: usize) -> Result<()> {
        if self.nodes[a].shape != self.nodes[b].shape {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.nodes[a].shape, self.nodes[b].shape),
            ));
        }
        Ok(())
    }

    fn zip_map(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, mk: impl FnOnce(usize, usize) -> Op<T>) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        self.same_shape(op, ia, ib)?;
        let value = self.nodes[ia]
            .value
            .iter()
            .zip(&self.nodes[ib].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.nodes[ia].shape.clone();
        let ng = self.ng(ia) || self.ng(ib);
        Ok(self.push(shape, value, mk(ia, ib), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// `scale · x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Result<Var> {
        let ix = self.idx(x)?;
        let value = self.nodes[ix].value.iter().map(|&v| v * scale + shift).collect();
        let shape = self.nodes[ix].shape.clone();
        let ng = self.ng(ix);
        Ok(self.push(shape, value, Op::Affine { x: ix, scale }, ng))
    }

    pub fn scale(&mut self, x: Var, scale: T) -> Result<Var> {
        self.affine(x, scale, T::zero())
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (sa, sb) = (&self.nodes[ia].shape, &self.nodes[ib].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut value = vec![T::zero(); m * n];
        kernels::gemm(m, k, n, &self.nodes[ia].value, false, &self.nodes[ib].value, false, &mut value, T::zero());
        let ng = self.ng(ia) || self.ng(ib);
        Ok(self.push(vec![m, n], value, Op::MatMul { a: ia, b: ib, m, k, n }, ng))
    }

    /// `x · wᵀ + b` over the last axis of `x`; `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (ix, iw) = (self.idx(x)?, self.idx(w)?);
        let ib = b.map(|b| self.idx(b)).transpose()?;
        let xs = self.nodes[ix].shape.clone();
        let ws = &self.nodes[iw].shape;
        let inp = *xs.last().unwrap_or(&0);
        if ws.len() != 2 || ws[1] != inp {
            return Err(Error::shape("linear", format!("input {xs:?} with weight {ws:?}")));
        }
        let out = ws[0];
        if let Some(ib) = ib {
            if self.nodes[ib].shape != [out] {
                return Err(Error::shape(
                    "linear",
                    format!("bias {:?} for {out} outputs", self.nodes[ib].shape),
                ));
            }
        }
        let rows = self.nodes[ix].value.len() / inp.max(1);
        let mut value = vec![T::zero(); rows * out];
        if let Some(ib) = ib {
            let bias = &self.nodes[ib].value;
            for row in value.chunks_mut(out) {
                row.copy_from_slice(bias);
            }
        }
        kernels::gemm(rows, inp, out, &self.nodes[ix].value, false, &self.nodes[iw].value, true, &mut value, T::one());
        let mut shape = xs;
        *shape.last_mut().expect("rank >= 1") = out;
        let ng = self.ng(ix) || self.ng(iw) || ib.is_some_and(|i| self.ng(i));
        Ok(self.push(shape, value, Op::Linear { x: ix, w: iw, b: ib, rows, inp, out }, ng))
    }

    /// Cross-correlation of `x` (`[C_in, L]` or `[B, C_in, L]`) with `w[C_out, C_in, K]`,
    /// zero padding on both ends.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (ix, iw) = (self.idx(x)?, self.idx(w)?);
        let ib = b.map(|b| self.idx(b)).transpose()?;
        let xs = self.nodes[ix].shape.clone();
        let ws = self.nodes[iw].shape.clone();
        let (batch, c_in, len, batched) = match xs.as_slice() {
            [c, l] => (1, *c, *l, false),
            [b, c, l] => (*b, *c, *l, true),
            _ => return Err(Error::shape("conv1d", format!("input must be [C, L] or [B, C, L], got {xs:?}"))),
        };
        if ws.len() != 3 || ws[1] != c_in {
            return Err(Error::shape(
                "conv1d",
                format!("input {xs:?} has {c_in} channels but kernel is {ws:?}"),
            ));
        }
        let (c_out, kernel) = (ws[0], ws[2]);
        if stride == 0 {
            return Err(Error::InvalidArgument("conv1d: stride must be >= 1".into()));
        }
        if kernel == 0 || kernel > len + 2 * padding {
            return Err(Error::shape(
                "conv1d",
                format!("kernel {kernel} exceeds padded length {} of input {xs:?}", len + 2 * padding),
            ));
        }
        if let Some(ib) = ib {
            if self.nodes[ib].shape != [c_out] {
                return Err(Error::shape("conv1d", format!("bias {:?} for kernel {ws:?}", self.nodes[ib].shape)));
            }
        }
        let len_out = conv_out_len(len, kernel, stride, padding);
        let geom = ConvGeom {
            batch,
            c_in,
            len,
            c_out,
            kernel,
            stride,
            padding,
            len_out,
        };
        let value = kernels::conv1d_forward(
            &geom,
            &self.nodes[ix].value,
            &self.nodes[iw].value,
            ib.map(|i| self.nodes[i].value.as_slice()),
        );
        let shape = if batched { vec![batch, c_out, len_out] } else { vec![c_out, len_out] };
        let ng = self.ng(ix) || self.ng(iw) || ib.is_some_and(|i| self.ng(i));
        Ok(self.push(shape, value, Op::Conv1d { x: ix, w: iw, b: ib, geom }, ng))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, mk: impl FnOnce(usize) -> Op<T>) -> Result<Var> {
        let ix = self.idx(x)?;
        let value = self.nodes[ix].value.iter().map(|&v| f(v)).collect();
        let shape = self.nodes[ix].shape.clone();
        let ng = self.ng(ix);
        Ok(self.push(shape, value, mk(ix), ng))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var> {
        self.unary(x, |v| if v > T::zero() { v } else { v * slope }, |x| Op::LeakyRelu { x, slope })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, sigmoid, Op::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.tanh(), Op::Tanh)
    }

    /// Inverted dropout: identity in eval mode, otherwise zeroes each element with
    /// probability `rate` and scales survivors by `1 / (1 - rate)`.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} not in [0, 1)")));
        }
        let ix = self.idx(x)?;
        if self.mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let n = self.nodes[ix].value.len();
        let mask: Vec<T> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let value = self.nodes[ix].value.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let shape = self.nodes[ix].shape.clone();
        let ng = self.ng(ix);
        Ok(self.push(shape, value, Op::Dropout { x: ix, mask }, ng))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let idx: Vec<usize> = parts.iter().map(|&p| self.idx(p)).collect::<Result<_>>()?;
        let first = idx
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let base = self.nodes[*first].shape.clone();
        if axis >= base.len() {
            return Err(Error::AxisOutOfRange { op: "concat", axis, rank: base.len() });
        }
        let mut total = 0;
        for &i in &idx {
            let s = &self.nodes[i].shape;
            if s.len() != base.len() || s.iter().enumerate().any(|(d, &v)| d != axis && v != base[d]) {
                return Err(Error::shape("concat", format!("{base:?} vs {s:?} along axis {axis}")));
            }
            total += s[axis];
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let chunks: Vec<usize> = idx.iter().map(|&i| self.nodes[i].shape[axis] * inner).collect();
        let mut value = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&i, &c) in idx.iter().zip(&chunks) {
                value.extend_from_slice(&self.nodes[i].value[o * c..(o + 1) * c]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let ng = idx.iter().any(|&i| self.ng(i));
        Ok(self.push(shape, value, Op::Concat { parts: idx, chunks, outer }, ng))
    }

    /// Stacks equally shaped tensors along a new axis.
    pub fn stack(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let mut expanded = Vec::with_capacity(parts.len());
        for &p in parts {
            let mut s = self.shape(p)?.to_vec();
            if axis > s.len() {
                return Err(Error::AxisOutOfRange { op: "stack", axis, rank: s.len() });
            }
            s.insert(axis, 1);
            expanded.push(self.reshape(p, s)?);
        }
        self.concat(&expanded, axis)
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let xs = self.nodes[ix].shape.clone();
        if axis >= xs.len() {
            return Err(Error::AxisOutOfRange { op: "slice", axis, rank: xs.len() });
        }
        if start + len > xs[axis] {
            return Err(Error::shape("slice", format!("[{start}, {}) of axis {axis} in {xs:?}", start + len)));
        }
        let outer = numel(&xs[..axis]);
        let inner = numel(&xs[axis + 1..]);
        let in_chunk = xs[axis] * inner;
        let out_chunk = len * inner;
        let offset = start * inner;
        let mut value = Vec::with_capacity(outer * out_chunk);
        for o in 0..outer {
            let base = o * in_chunk + offset;
            value.extend_from_slice(&self.nodes[ix].value[base..base + out_chunk]);
        }
        let mut shape = xs;
        shape[axis] = len;
        let ng = self.ng(ix);
        Ok(self.push(shape, value, Op::Slice { x: ix, outer, in_chunk, offset, out_chunk }, ng))
    }

    /// Picks index `index` along `axis` and drops that axis.
    pub fn select(&mut self, x: Var, axis: usize, index: usize) -> Result<Var> {
        let s = self.slice(x, axis, index, 1)?;
        let mut shape = self.shape(s)?.to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        self.reshape(s, shape)
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let ix = self.idx(x)?;
        let shape = shape.into();
        if numel(&shape) != self.nodes[ix].value.len() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.nodes[ix].shape)));
        }
        let value = self.nodes[ix].value.clone();
        let ng = self.ng(ix);
        Ok(self.push(shape, value, Op::Reshape(ix), ng))
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let ix = self.idx(x)?;
        let xs = self.nodes[ix].shape.clone();
        let mut seen = vec![false; xs.len()];
        if perm.len() != xs.len() || perm.iter().any(|&p| p >= xs.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("permute", format!("{perm:?} is not a permutation of rank {}", xs.len())));
        }
        let value = kernels::permute(&self.nodes[ix].value, &xs, perm);
        let out_shape: Vec<usize> = perm.iter().map(|&p| xs[p]).collect();
        let ng = self.ng(ix);
        Ok(self.push(
            out_shape.clone(),
            value,
            Op::Permute { x: ix, out_shape, perm: perm.to_vec() },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let s = self.nodes[ix].value.iter().copied().sum();
        let ng = self.ng(ix);
        Ok(self.push(vec![1], vec![s], Op::Sum(ix), ng))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let n = self.nodes[ix].value.len();
        let s: T = self.nodes[ix].value.iter().copied().sum();
        let ng = self.ng(ix);
        Ok(self.push(vec![1], vec![s / T::lit(n.max(1) as f64)], Op::Mean(ix), ng))
    }

    /// Mean absolute error; the subgradient at `pred == target` is zero.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (ip, it) = (self.idx(pred)?, self.idx(target)?);
        self.same_shape("l1_loss", ip, it)?;
        let n = self.nodes[ip].value.len();
        let s: T = self.nodes[ip]
            .value
            .iter()
            .zip(&self.nodes[it].value)
            .map(|(&p, &t)| (p - t).abs())
            .sum();
        let ng = self.ng(ip) || self.ng(it);
        Ok(self.push(vec![1], vec![s / T::lit(n.max(1) as f64)], Op::L1Loss { pred: ip, target: it }, ng))
    }

    /// Mean binary cross entropy of probabilities `p` against 0/1 `labels`.
    pub fn binary_cross_entropy(&mut self, p: Var, labels: &[T]) -> Result<Var> {
        let ip = self.idx(p)?;
        if self.nodes[ip].value.len() != labels.len() {
            return Err(Error::shape(
                "binary_cross_entropy",
                format!("{} probabilities vs {} labels", self.nodes[ip].value.len(), labels.len()),
            ));
        }
        let n = labels.len();
        let s: T = self.nodes[ip]
            .value
            .iter()
            .zip(labels)
            .map(|(&p, &y)| {
                let p = clamp_prob(p);
                -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
            })
            .sum();
        let ng = self.ng(ip);
        Ok(self.push(vec![1], vec![s / T::lit(n.max(1) as f64)], Op::Bce { p: ip, labels: labels.to_vec() }, ng))
    }

    /// LSTM gate nonlinearities and state update.
    ///
    /// `gates` is `[B, 4H]` pre-activations in (input, forget, candidate, output) order,
    /// `c_prev` is `[B, H]`. Returns `[B, 2H]` holding `h` then `c`.
    pub fn lstm_pointwise(&mut self, gates: Var, c_prev: Var) -> Result<Var> {
        let (ig, ic) = (self.idx(gates)?, self.idx(c_prev)?);
        let cs = self.nodes[ic].shape.clone();
        let gs = &self.nodes[ig].shape;
        let hidden = *cs.last().unwrap_or(&0);
        let rows = self.nodes[ic].value.len() / hidden.max(1);
        if gs.last() != Some(&(4 * hidden)) || self.nodes[ig].value.len() != rows * 4 * hidden {
            return Err(Error::shape("lstm_cell", format!("gates {gs:?} vs state {cs:?}")));
        }
        let gv = &self.nodes[ig].value;
        if let Some(pos) = gv.iter().position(|v| !v.is_finite()) {
            const NAMES: [&str; 4] = ["input", "forget", "candidate", "output"];
            let (row, col) = (pos / (4 * hidden), pos % (4 * hidden));
            return Err(Error::NonFinite {
                location: format!(
                    "lstm {} gate pre-activation (row {row}, unit {})",
                    NAMES[col / hidden],
                    col % hidden
                ),
            });
        }
        let cv = &self.nodes[ic].value;
        let mut act = vec![T::zero(); gv.len()];
        let mut tanh_c = vec![T::zero(); cv.len()];
        let mut value = vec![T::zero(); rows * 2 * hidden];
        for r in 0..rows {
            let g = &gv[r * 4 * hidden..(r + 1) * 4 * hidden];
            let a = &mut act[r * 4 * hidden..(r + 1) * 4 * hidden];
            for u in 0..hidden {
                a[u] = sigmoid(g[u]);
                a[hidden + u] = sigmoid(g[hidden + u]);
                a[2 * hidden + u] = g[2 * hidden + u].tanh();
                a[3 * hidden + u] = sigmoid(g[3 * hidden + u]);
                let c = a[hidden + u] * cv[r * hidden + u] + a[u] * a[2 * hidden + u];
                let tc = c.tanh();
                tanh_c[r * hidden + u] = tc;
                value[r * 2 * hidden + u] = a[3 * hidden + u] * tc;
                value[r * 2 * hidden + hidden + u] = c;
            }
        }
        let mut shape = cs;
        *shape.last_mut().expect("rank >= 1") = 2 * hidden;
        let ng = self.ng(ig) || self.ng(ic);
        Ok(self.push(
            shape,
            value,
            Op::LstmPointwise { gates: ig, c_prev: ic, act, tanh_c, hidden },
            ng,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Only leaf gradients are retained.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let il = self.idx(loss)?;
        if self.nodes[il].value.len() != 1 {
            return Err(Error::NonScalarLoss(self.nodes[il].shape.clone()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[il] = Some(vec![T::one()]);
        for i in (0..=il).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Gradients { tape: self.id, grads })
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let len = |i: usize| nodes[i].value.len();
        let ng = |i: usize| nodes[i].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let neg = matches!(node.op, Op::Sub(..));
                if ng(*a) {
                    add_into(&mut grads[*a], len(*a), |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g));
                }
                if ng(*b) {
                    add_into(&mut grads[*b], len(*b), |d| {
                        d.iter_mut().zip(g).for_each(|(d, &g)| if neg { *d -= g } else { *d += g })
                    });
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                if ng(*a) {
                    add_into(&mut grads[*a], len(*a), |d| {
                        for ((d, &g), &y) in d.iter_mut().zip(g).zip(vb) {
                            *d += g * y;
                        }
                    });
                }
                if ng(*b) {
                    add_into(&mut grads[*b], len(*b), |d| {
                        for ((d, &g), &x) in d.iter_mut().zip(g).zip(va) {
                            *d += g * x;
                        }
                    });
                }
            }
            Op::Affine { x, scale } => {
                add_into(&mut grads[*x], len(*x), |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * *scale));
            }
            Op::MatMul { a, b, m, k, n } => {
                if ng(*a) {
                    add_into(&mut grads[*a], len(*a), |d| {
                        kernels::gemm(*m, *n, *k, g, false, &nodes[*b].value, true, d, T::one())
                    });
                }
                if ng(*b) {
                    add_into(&mut grads[*b], len(*b), |d| {
                        kernels::gemm(*k, *m, *n, &nodes[*a].value, true, g, false, d, T::one())
                    });
                }
            }
            Op::Linear { x, w, b, rows, inp, out } => {
                if ng(*x) {
                    add_into(&mut grads[*x], len(*x), |d| {
                        kernels::gemm(*rows, *out, *inp, g, false, &nodes[*w].value, false, d, T::one())
                    });
                }
                if ng(*w) {
                    add_into(&mut grads[*w], len(*w), |d| {
                        kernels::gemm(*out, *rows, *inp, g, true, &nodes[*x].value, false, d, T::one())
                    });
                }
                if let Some(b) = b.filter(|&b| ng(b)) {
                    add_into(&mut grads[b], len(b), |d| {
                        for row in g.chunks(*out) {
                            d.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                        }
                    });
                }
            }
            Op::Conv1d { x, w, b, geom } => {
                let want_b = b.is_some_and(&ng);
                let cg = kernels::conv1d_backward(geom, &nodes[*x].value, &nodes[*w].value, g, (ng(*x), ng(*w), want_b));
                for (slot, delta) in [(Some(*x), cg.dx), (Some(*w), cg.dw), (*b, cg.db)] {
                    if let (Some(i), Some(delta)) = (slot, delta) {
                        add_into(&mut grads[i], len(i), |d| d.iter_mut().zip(&delta).for_each(|(d, &v)| *d += v));
                    }
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xv = &nodes[*x].value;
                add_into(&mut grads[*x], len(*x), |d| {
                    for ((d, &g), &v) in d.iter_mut().zip(g).zip(xv) {
                        *d += if v > T::zero() { g } else { g * *slope };
                    }
                });
            }
            Op::Relu(x) => {
                let xv = &nodes[*x].value;
                add_into(&mut grads[*x], len(*x), |d| {
                    for ((d, &g), &v) in d.iter_mut().zip(g).zip(xv) {
                        if v > T::zero() {
                            *d += g;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                add_into(&mut grads[*x], len(*x), |d| {
                    for ((d, &g), &y) in d.iter_mut().zip(g).zip(y) {
                        *d += g * y * (T::one() - y);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = &node.value;
                add_into(&mut grads[*x], len(*x), |d| {
                    for ((d, &g), &y) in d.iter_mut().zip(g).zip(y) {
                        *d += g * (T::one() - y * y);
                    }
                });
            }
            Op::Dropout { x, mask } => {
                add_into(&mut grads[*x], len(*x), |d| {
                    for ((d, &g), &m) in d.iter_mut().zip(g).zip(mask) {
                        *d += g * m;
                    }
                });
            }
            Op::Concat { parts, chunks, outer } => {
                let total: usize = chunks.iter().sum();
                let mut start = 0;
                for (&p, &c) in parts.iter().zip(chunks) {
                    if ng(p) {
                        add_into(&mut grads[p], len(p), |d| {
                            for o in 0..*outer {
                                let src = &g[o * total + start..o * total + start + c];
                                d[o * c..(o + 1) * c].iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                            }
                        });
                    }
                    start += c;
                }
            }
            Op::Slice { x, outer, in_chunk, offset, out_chunk } => {
                add_into(&mut grads[*x], len(*x), |d| {
                    for o in 0..*outer {
                        let dst = &mut d[o * in_chunk + offset..o * in_chunk + offset + out_chunk];
                        let src = &g[o * out_chunk..(o + 1) * out_chunk];
                        dst.iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                    }
                });
            }
            Op::Reshape(x) => {
                add_into(&mut grads[*x], len(*x), |d| d.iter_mut().zip(g).for_each(|(d, &v)| *d += v));
            }
            Op::Permute { x, out_shape, perm } => {
                let back = kernels::permute(g, out_shape, &kernels::inverse_perm(perm));
                add_into(&mut grads[*x], len(*x), |d| d.iter_mut().zip(&back).for_each(|(d, &v)| *d += v));
            }
            Op::Sum(x) => {
                add_into(&mut grads[*x], len(*x), |d| d.iter_mut().for_each(|d| *d += g[0]));
            }
            Op::Mean(x) => {
                let s = g[0] / T::lit(len(*x).max(1) as f64);
                add_into(&mut grads[*x], len(*x), |d| d.iter_mut().for_each(|d| *d += s));
            }
            Op::L1Loss { pred, target } => {
                let n = T::lit(len(*pred).max(1) as f64);
                let signs: Vec<T> = nodes[*pred]
                    .value
                    .iter()
                    .zip(&nodes[*target].value)
                    .map(|(&p, &t)| {
                        let diff = p - t;
                        if diff > T::zero() {
                            g[0] / n
                        } else if diff < T::zero() {
                            -g[0] / n
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                if ng(*pred) {
                    add_into(&mut grads[*pred], len(*pred), |d| d.iter_mut().zip(&signs).for_each(|(d, &s)| *d += s));
                }
                if ng(*target) {
                    add_into(&mut grads[*target], len(*target), |d| d.iter_mut().zip(&signs).for_each(|(d, &s)| *d -= s));
                }
            }
            Op::Bce { p, labels } => {
                let n = T::lit(labels.len().max(1) as f64);
                let (lo, hi) = (T::lit(BCE_EPS), T::lit(1.0 - BCE_EPS));
                let pv = &nodes[*p].value;
                add_into(&mut grads[*p], len(*p), |d| {
                    for ((d, &p), &y) in d.iter_mut().zip(pv).zip(labels) {
                        if p >= lo && p <= hi {
                            *d += g[0] / n * (-y / p + (T::one() - y) / (T::one() - p));
                        }
                    }
                });
            }
            Op::LstmPointwise { gates, c_prev, act, tanh_c, hidden } => {
                let h = *hidden;
                let rows = tanh_c.len() / h.max(1);
                let cv = &nodes[*c_prev].value;
                let mut dgates = vec![T::zero(); rows * 4 * h];
                let mut dc_prev = vec![T::zero(); rows * h];
                for r in 0..rows {
                    let a = &act[r * 4 * h..(r + 1) * 4 * h];
                    let dg = &mut dgates[r * 4 * h..(r + 1) * 4 * h];
                    for u in 0..h {
                        let (i, f, gg, o) = (a[u], a[h + u], a[2 * h + u], a[3 * h + u]);
                        let tc = tanh_c[r * h + u];
                        let dh = g[r * 2 * h + u];
                        let dc = g[r * 2 * h + h + u] + dh * o * (T::one() - tc * tc);
                        let cp = cv[r * h + u];
                        dg[u] = dc * gg * i * (T::one() - i);
                        dg[h + u] = dc * cp * f * (T::one() - f);
                        dg[2 * h + u] = dc * i * (T::one() - gg * gg);
                        dg[3 * h + u] = dh * tc * o * (T::one() - o);
                        dc_prev[r * h + u] = dc * f;
                    }
                }
                if ng(*gates) {
                    add_into(&mut grads[*gates], len(*gates), |d| d.iter_mut().zip(&dgates).for_each(|(d, &v)| *d += v));
                }
                if ng(*c_prev) {
                    add_into(&mut grads[*c_prev], len(*c_prev), |d| d.iter_mut().zip(&dc_prev).for_each(|(d, &v)| *d += v));
                }
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn clamp_prob<T: Scalar>(p: T) -> T {
    p.max(T::lit(BCE_EPS)).min(T::lit(1.0 - BCE_EPS))
}

/// Output length of a 1D convolution.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (len + 2 * padding - kernel) / stride + 1
}
