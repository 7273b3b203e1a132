use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::rel_error;
use super::*;
use crate::error::Error;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0)).with_grad()
}

#[test]
fn conv1d_output_lengths() {
    let mut tape = Tape::<f32>::new(Mode::Eval, 0);
    let x = tape.constant([1, 128], vec![0.0; 128]).unwrap();
    let w = tape.constant([1, 1, 3], vec![0.0; 3]).unwrap();
    let y = tape.conv1d(x, w, None, 2, 1).unwrap();
    assert_eq!(tape.shape(y).unwrap(), &[1, 64]);

    let x = tape.constant([1, 3], vec![0.0; 3]).unwrap();
    let y = tape.conv1d(x, w, None, 2, 0).unwrap();
    assert_eq!(tape.shape(y).unwrap(), &[1, 1]);
}

#[test]
fn conv1d_zero_padding_boundary() {
    let mut tape = Tape::<f64>::new(Mode::Eval, 0);
    let x = tape.constant([1, 4], vec![1.0; 4]).unwrap();
    let w = tape.constant([1, 1, 3], vec![1.0; 3]).unwrap();
    let b = tape.constant([1], vec![0.0]).unwrap();
    let y = tape.conv1d(x, w, Some(b), 1, 1).unwrap();
    assert_eq!(tape.value(y).unwrap(), &[2.0, 3.0, 3.0, 2.0]);
}

#[test]
fn conv1d_is_cross_correlation() {
    let mut tape = Tape::<f64>::new(Mode::Eval, 0);
    let x = tape.constant([1, 3], vec![1.0, 2.0, 3.0]).unwrap();
    let w = tape.constant([1, 1, 3], vec![1.0, 0.0, 0.0]).unwrap();
    let y = tape.conv1d(x, w, None, 1, 0).unwrap();
    // no kernel flip: picks the first element of the window
    assert_eq!(tape.value(y).unwrap(), &[1.0]);
}

#[test]
fn conv1d_channel_mismatch_names_both_shapes() {
    let mut tape = Tape::<f32>::new(Mode::Eval, 0);
    let x = tape.constant([3, 10], vec![0.0; 30]).unwrap();
    let w = tape.constant([4, 2, 3], vec![0.0; 24]).unwrap();
    let err = tape.conv1d(x, w, None, 1, 0).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[3, 10]") && msg.contains("[4, 2, 3]"), "{msg}");
}

#[test]
fn conv1d_length_law_over_grid() {
    for len in 2..=512usize {
        for kernel in [2usize, 3] {
            for stride in [1usize, 2] {
                for padding in [0usize, 1] {
                    if kernel > len + 2 * padding {
                        continue;
                    }
                    let mut tape = Tape::<f32>::new(Mode::Eval, 0);
                    let x = tape.constant([1, 1, len], vec![0.5; len]).unwrap();
                    let w = tape.constant([1, 1, kernel], vec![1.0; kernel]).unwrap();
                    let y = tape.conv1d(x, w, None, stride, padding).unwrap();
                    let expect = (len + 2 * padding - kernel) / stride + 1;
                    assert_eq!(tape.shape(y).unwrap(), &[1, 1, expect]);
                }
            }
        }
    }
}

fn scalar_lstm_oracle(
    x: &[f64],
    h: &[f64],
    c: &[f64],
    w_ih: &[f64],
    w_hh: &[f64],
    b: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let hidden = h.len();
    let d_in = x.len();
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let pre = |row: usize| -> f64 {
        let mut s = b[row];
        for j in 0..d_in {
            s += w_ih[row * d_in + j] * x[j];
        }
        for j in 0..hidden {
            s += w_hh[row * hidden + j] * h[j];
        }
        s
    };
    let mut h_new = vec![0.0; hidden];
    let mut c_new = vec![0.0; hidden];
    for u in 0..hidden {
        let i = sig(pre(u));
        let f = sig(pre(hidden + u));
        let g = pre(2 * hidden + u).tanh();
        let o = sig(pre(3 * hidden + u));
        c_new[u] = f * c[u] + i * g;
        h_new[u] = o * c_new[u].tanh();
    }
    (h_new, c_new)
}

#[test]
fn lstm_cell_all_zero_parameters() {
    let mut tape = Tape::<f64>::new(Mode::Eval, 0);
    let x = tape.constant([3], vec![0.3, -1.0, 2.0]).unwrap();
    let h = tape.constant([2], vec![0.0; 2]).unwrap();
    let c = tape.constant([2], vec![0.0; 2]).unwrap();
    let w_ih = tape.constant([8, 3], vec![0.0; 24]).unwrap();
    let w_hh = tape.constant([8, 2], vec![0.0; 16]).unwrap();
    let b = tape.constant([8], vec![0.0; 8]).unwrap();
    let (h1, c1) = tape.lstm_cell(x, h, c, w_ih, w_hh, b).unwrap();
    assert_eq!(tape.value(h1).unwrap(), &[0.0, 0.0]);
    assert_eq!(tape.value(c1).unwrap(), &[0.0, 0.0]);
}

#[test]
fn lstm_cell_forget_pass_through() {
    let mut tape = Tape::<f64>::new(Mode::Eval, 0);
    let x = tape.constant([3], vec![0.3, -1.0, 2.0]).unwrap();
    let h = tape.constant([2], vec![0.0; 2]).unwrap();
    let c = tape.constant([2], vec![0.7, -0.4]).unwrap();
    let w_ih = tape.constant([8, 3], vec![0.0; 24]).unwrap();
    let w_hh = tape.constant([8, 2], vec![0.0; 16]).unwrap();
    // input gate bias -> -inf limit, forget gate bias -> +inf limit
    let b = tape
        .constant([8], vec![-50.0, -50.0, 50.0, 50.0, 0.0, 0.0, 0.0, 0.0])
        .unwrap();
    let (_, c1) = tape.lstm_cell(x, h, c, w_ih, w_hh, b).unwrap();
    let c1 = tape.value(c1).unwrap();
    assert_abs_diff_eq!(c1[0], 0.7, epsilon = 1e-12);
    assert_abs_diff_eq!(c1[1], -0.4, epsilon = 1e-12);
}

#[test]
fn lstm_cell_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let x = rand_tensor(&mut rng, &[3]);
        let h = rand_tensor(&mut rng, &[2]);
        let c = rand_tensor(&mut rng, &[2]);
        let w_ih = rand_tensor(&mut rng, &[8, 3]);
        let w_hh = rand_tensor(&mut rng, &[8, 2]);
        let b = rand_tensor(&mut rng, &[8]);
        let (eh, ec) = scalar_lstm_oracle(x.data(), h.data(), c.data(), w_ih.data(), w_hh.data(), b.data());
        let mut tape = Tape::<f64>::new(Mode::Eval, 0);
        let v: Vec<Var> = [&x, &h, &c, &w_ih, &w_hh, &b].iter().map(|t| tape.leaf(t)).collect();
        let (h1, c1) = tape.lstm_cell(v[0], v[1], v[2], v[3], v[4], v[5]).unwrap();
        for (a, e) in tape.value(h1).unwrap().iter().zip(&eh) {
            assert_abs_diff_eq!(*a, *e, epsilon = 1e-12);
        }
        for (a, e) in tape.value(c1).unwrap().iter().zip(&ec) {
            assert_abs_diff_eq!(*a, *e, epsilon = 1e-12);
        }
    }
}

#[test]
fn lstm_non_finite_gate_is_located() {
    let mut tape = Tape::<f64>::new(Mode::Eval, 0);
    let gates = tape
        .constant([1, 8], vec![0.0, 0.0, f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0])
        .unwrap();
    let c = tape.constant([1, 2], vec![0.0; 2]).unwrap();
    let err = tape.lstm_pointwise(gates, c).unwrap_err();
    match err {
        Error::NonFinite { location } => assert!(location.contains("forget"), "{location}"),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn backward_of_sum_is_ones() {
    let mut tape = Tape::<f64>::new(Mode::Eval, 0);
    let x = tape.variable([2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap();
    let s = tape.sum(x).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), &[1.0; 6]);
}

#[test]
fn l1_gradient_is_sign_over_n() {
    let mut tape = Tape::<f64>::new(Mode::Eval, 0);
    let p = tape.variable([4], vec![2.0, 3.0, 4.0, 5.0]).unwrap();
    let t = tape.constant([4], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
    let l = tape.l1_loss(p, t).unwrap();
    let g = tape.backward(l).unwrap();
    assert_eq!(g.get(p).unwrap(), &[0.25; 4]);
    assert_eq!(tape.value(l).unwrap(), &[2.5]);

    // zero subgradient at equality
    let q = tape.variable([2], vec![1.0, 3.0]).unwrap();
    let t = tape.constant([2], vec![1.0, 1.0]).unwrap();
    let l = tape.l1_loss(q, t).unwrap();
    let g = tape.backward(l).unwrap();
    assert_eq!(g.get(q).unwrap(), &[0.0, 0.5]);
}

#[test]
fn backward_rejects_foreign_and_non_scalar() {
    let mut a = Tape::<f64>::new(Mode::Eval, 0);
    let mut b = Tape::<f64>::new(Mode::Eval, 0);
    let x = a.variable([1], vec![1.0]).unwrap();
    let _ = b.variable([1], vec![1.0]).unwrap();
    assert!(matches!(b.backward(x), Err(Error::ForeignVariable)));
    let v = a.variable([2], vec![1.0, 2.0]).unwrap();
    assert!(matches!(a.backward(v), Err(Error::NonScalarLoss(_))));
    assert!(matches!(b.add(x, x), Err(Error::ForeignVariable)));
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::<f64>::new(Mode::Train, 3);
    let x = tape.constant([1], vec![-2.0]).unwrap();
    let y = tape.leaky_relu(x, LEAKY_SLOPE).unwrap();
    assert_abs_diff_eq!(tape.value(y).unwrap()[0], -0.02, epsilon = 1e-15);

    let x = tape.constant([5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let d = tape.dropout(x, 0.0).unwrap();
    assert_eq!(tape.value(d).unwrap(), &[1.0, 2.0, 3.0, 4.0, 5.0]);

    let p = tape.constant([1], vec![0.5]).unwrap();
    let l = tape.binary_cross_entropy(p, &[1.0]).unwrap();
    assert_abs_diff_eq!(tape.value(l).unwrap()[0], std::f64::consts::LN_2, epsilon = 1e-12);

    // clamping keeps the loss finite at p = 0
    let p = tape.constant([1], vec![0.0]).unwrap();
    let l = tape.binary_cross_entropy(p, &[1.0]).unwrap();
    assert_abs_diff_eq!(tape.value(l).unwrap()[0], -(BCE_EPS.ln()), epsilon = 1e-9);
}

#[test]
fn dropout_is_inverted_and_eval_identity() {
    let mut tape = Tape::<f64>::new(Mode::Train, 5);
    let x = tape.constant([20000], vec![1.0; 20000]).unwrap();
    let d = tape.dropout(x, 0.25).unwrap();
    let v = tape.value(d).unwrap();
    assert!(v.iter().all(|&e| e == 0.0 || (e - 1.0 / 0.75).abs() < 1e-12));
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    assert!((mean - 1.0).abs() < 0.02, "mean {mean}");

    let mut tape = Tape::<f64>::new(Mode::Eval, 5);
    let x = tape.constant([4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let d = tape.dropout(x, 0.5).unwrap();
    assert_eq!(d, x);
    assert!(tape.dropout(x, 1.0).is_err());
}

#[test]
fn shape_errors() {
    let mut tape = Tape::<f32>::new(Mode::Eval, 0);
    let a = tape.constant([2, 3], vec![0.0; 6]).unwrap();
    let b = tape.constant([3, 2], vec![0.0; 6]).unwrap();
    assert!(matches!(tape.add(a, b), Err(Error::ShapeMismatch { .. })));
    assert!(matches!(tape.concat(&[a, b], 2), Err(Error::AxisOutOfRange { .. })));
    assert!(matches!(tape.concat(&[a, b], 0), Err(Error::ShapeMismatch { .. })));
    assert!(matches!(tape.slice(a, 5, 0, 1), Err(Error::AxisOutOfRange { .. })));
    assert!(matches!(tape.slice(a, 1, 2, 2), Err(Error::ShapeMismatch { .. })));
    assert!(tape.matmul(a, a).is_err());
    assert!(tape.permute(a, &[0, 0]).is_err());
}

#[test]
fn concat_slice_permute_values() {
    let mut tape = Tape::<f64>::new(Mode::Eval, 0);
    let a = tape.constant([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let b = tape.constant([2, 1], vec![5.0, 6.0]).unwrap();
    let c = tape.concat(&[a, b], 1).unwrap();
    assert_eq!(tape.value(c).unwrap(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
    let s = tape.slice(c, 1, 1, 2).unwrap();
    assert_eq!(tape.value(s).unwrap(), &[2.0, 5.0, 4.0, 6.0]);
    let t = tape.permute(c, &[1, 0]).unwrap();
    assert_eq!(tape.shape(t).unwrap(), &[3, 2]);
    assert_eq!(tape.value(t).unwrap(), &[1.0, 3.0, 2.0, 4.0, 5.0, 6.0]);
    let st = tape.stack(&[a, a], 0).unwrap();
    assert_eq!(tape.shape(st).unwrap(), &[2, 2, 2]);
    let sel = tape.select(st, 0, 1).unwrap();
    assert_eq!(tape.value(sel).unwrap(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn sigmoid_derivative_at_zero() {
    let x = Tensor::<f64>::zeros([1]).with_grad();
    let report = finite_diff_check(std::slice::from_ref(&x), 1e-5, 1e-8, 0, |t, v| {
        let y = t.sigmoid(v[0])?;
        t.sum(y)
    })
    .unwrap();
    assert!(report.passed());
    let mut tape = Tape::<f64>::new(Mode::Eval, 0);
    let v = tape.leaf(&x);
    let y = tape.sigmoid(v).unwrap();
    let s = tape.sum(y).unwrap();
    let g = tape.backward(s).unwrap();
    assert_abs_diff_eq!(g.get(v).unwrap()[0], 0.25, epsilon = 1e-8);
}

fn small_graph(tape: &mut Tape<f64>, x: &Tensor<f64>, w: &Tensor<f64>) -> (Var, Var, Var) {
    let xv = tape.leaf(x);
    let wv = tape.leaf(w);
    let y = tape.conv1d(xv, wv, None, 2, 1).unwrap();
    let y = tape.leaky_relu(y, LEAKY_SLOPE).unwrap();
    let y = tape.dropout(y, 0.2).unwrap();
    let loss = tape.mean(y).unwrap();
    (xv, wv, loss)
}

#[test]
fn backward_is_deterministic_and_accumulates() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&mut rng, &[2, 3, 8]);
    let w = rand_tensor(&mut rng, &[4, 3, 3]);

    let run = || {
        let mut tape = Tape::new(Mode::Train, 77);
        let (_, wv, loss) = small_graph(&mut tape, &x, &w);
        tape.backward(loss).unwrap().get(wv).unwrap().to_vec()
    };
    let g1 = run();
    let g2 = run();
    assert!(g1.iter().zip(&g2).all(|(a, b)| a.to_bits() == b.to_bits()));

    let mut target = w.clone();
    let mut tape = Tape::new(Mode::Train, 77);
    let (_, wv, loss) = small_graph(&mut tape, &x, &w);
    let grads = tape.backward(loss).unwrap();
    grads.accumulate_into(wv, &mut target).unwrap();
    let grads = tape.backward(loss).unwrap();
    grads.accumulate_into(wv, &mut target).unwrap();
    for (acc, single) in target.grad().unwrap().iter().zip(&g1) {
        assert_eq!(*acc, 2.0 * single);
    }
}

#[test]
fn rel_error_floor() {
    assert_eq!(rel_error(1.0, 1.0), 0.0);
    assert!(rel_error(1e-12, 2e-12) < 1e-5);
    assert!((rel_error(2.0, 1.0) - 0.5).abs() < 1e-15);
}
