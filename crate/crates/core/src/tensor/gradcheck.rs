//! Central finite-difference oracle for tape gradients.

use super::{Mode, Tape, Tensor, Var};
use crate::error::Result;

/// Magnitudes below this are compared absolutely rather than relatively.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct ElementCheck {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub elements: Vec<ElementCheck>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.elements.iter().all(|e| e.passed)
    }

    pub fn worst(&self) -> Option<&ElementCheck> {
        self.elements
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn max_rel_error_for(&self, input: usize) -> f64 {
        self.elements
            .iter()
            .filter(|e| e.input == input)
            .map(|e| e.rel_error)
            .fold(0.0, f64::max)
    }
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

/// Compares autodiff gradients of the scalar produced by `f` against central
/// differences for every element of every input that requires grad.
///
/// Each evaluation runs on a fresh training-mode tape seeded with `seed`, so
/// dropout masks are identical across the perturbed evaluations.
pub fn finite_diff_check<F>(
    inputs: &[Tensor<f64>],
    step: f64,
    tolerance: f64,
    seed: u64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new(Mode::Train, seed);
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t)).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss)?[0])
    };

    let mut tape = Tape::new(Mode::Train, seed);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut work = inputs.to_vec();
    let mut elements = Vec::new();
    for (i, var) in vars.iter().enumerate() {
        if !inputs[i].requires_grad() {
            continue;
        }
        let analytic = grads.get(*var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for e in 0..inputs[i].numel() {
            let orig = work[i].data()[e];
            work[i].data_mut()[e] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[e] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = rel_error(analytic[e], numeric);
            elements.push(ElementCheck {
                input: i,
                element: e,
                analytic: analytic[e],
                numeric,
                rel_error: err,
                passed: err <= tolerance,
            });
        }
    }
    let max_rel_error = elements.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        step,
        tolerance,
        elements,
        max_rel_error,
    })
}
