//! Central finite-difference oracle for tape gradients.
//!
//! The numeric side only ever evaluates forward values, so it shares no code
//! with [`Tape::backward`].

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

/// Step used for central differences on 64-bit values.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Outcome of comparing analytic and numeric gradients.
#[derive(Clone, Debug)]
pub struct GradReport {
    /// `max |analytic − numeric| / max(1, |numeric|)` over all checked entries.
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(input index, flat element index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol && self.max_rel_error.is_finite()
    }
}

/// Relative error used across the gradient audits.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

/// Checks `f` (which must return a scalar node) against central differences
/// with respect to every element of every input.
pub fn check<F>(inputs: &[Tensor], f: F, step: f64) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            tape.grad(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
        })
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut report = GradReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(analytic[i].data()[j], numeric);
            report.checked += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}
