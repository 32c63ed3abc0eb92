//! Connectionist temporal classification: loss, decoding and scoring.
//!
//! Token id [`BLANK`] (0) is reserved for the CTC blank label. A
//! [`Posteriorgram`] holds one probability distribution over the vocabulary
//! per frame; only the first `valid_len` frames take part in losses and
//! decoding.

mod beam;
mod decode;
mod edit;
mod loss;
pub mod oracle;

pub use beam::{prefix_beam_search, BeamHypothesis, BeamOptions, LanguageModel};
pub use decode::{best_path, greedy_decode};
pub use edit::{edit_distance, EditCounts};
pub use loss::{
    ctc_log_likelihood, ctc_loss, ctc_loss_and_grad, ctc_loss_on_tape, min_frames,
};

use crate::error::{Error, Result};
use crate::tensor::{log_sum_exp, Tensor};

/// Token id of the CTC blank.
pub const BLANK: u32 = 0;

/// Tolerance on row sums when validating a posteriorgram.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Per-frame token distributions, `frames × |V|`.
#[derive(Clone, Debug, PartialEq)]
pub struct Posteriorgram {
    probs: Tensor,
    valid_len: usize,
}

impl Posteriorgram {
    /// Wraps a probability matrix, checking that every valid row is a
    /// distribution.
    pub fn new(probs: Tensor, valid_len: usize) -> Result<Self> {
        if !probs.is_matrix() {
            return Err(Error::shape("Posteriorgram::new", "expected a matrix"));
        }
        if valid_len > probs.rows() {
            return Err(Error::shape(
                "Posteriorgram::new",
                format!("valid length {valid_len} exceeds {} frames", probs.rows()),
            ));
        }
        for t in 0..valid_len {
            let row = probs.row(t);
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidArgument(format!(
                    "frame {t} has an entry outside [0, 1]"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidArgument(format!(
                    "frame {t} sums to {s}, not 1"
                )));
            }
        }
        Ok(Self { probs, valid_len })
    }

    /// All frames valid.
    pub fn from_probs(probs: Tensor) -> Result<Self> {
        let n = probs.rows();
        Self::new(probs, n)
    }

    /// Row-wise softmax of `logits`.
    pub fn from_logits(logits: &Tensor, valid_len: usize) -> Result<Self> {
        let (m, n) = (logits.rows(), logits.cols());
        let mut data = Vec::with_capacity(m * n);
        for t in 0..m {
            let row = logits.row(t);
            let z = log_sum_exp(row);
            data.extend(row.iter().map(|v| (v - z).exp()));
        }
        Self::new(Tensor::matrix(m, n, data), valid_len)
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    /// Number of frames that take part in decoding and losses.
    pub fn valid_len(&self) -> usize {
        self.valid_len
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.cols()
    }

    pub fn prob(&self, t: usize, token: u32) -> f64 {
        self.probs.get(t, token as usize)
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.probs.row(t)
    }

    /// Natural-log probabilities of the valid frames, row-major.
    pub fn log_probs(&self) -> Vec<f64> {
        self.probs.data()[..self.valid_len * self.vocab_size()]
            .iter()
            .map(|p| p.ln())
            .collect()
    }
}

/// CTC collapse: merge adjacent repeats, then drop blanks.
pub fn collapse(alignment: &[u32]) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = None;
    for &a in alignment {
        if Some(a) != prev && a != BLANK {
            out.push(a);
        }
        prev = Some(a);
    }
    out
}

pub(crate) fn check_labels(labels: &[u32], vocab_size: usize) -> Result<()> {
    for &y in labels {
        if y == BLANK {
            return Err(Error::InvalidArgument(
                "label sequence contains the blank token".into(),
            ));
        }
        if y as usize >= vocab_size {
            return Err(Error::InvalidArgument(format!(
                "label {y} outside vocabulary of size {vocab_size}"
            )));
        }
    }
    Ok(())
}
