use super::{check_labels, Posteriorgram, BLANK};
use crate::error::{Error, Result};
use crate::tensor::{log_add_exp, log_sum_exp, Tape, Tensor, Var};

const NEG_INF: f64 = f64::NEG_INFINITY;

/// Fewest frames that can emit `labels`: one per label plus a separating
/// blank between each pair of equal neighbours.
pub fn min_frames(labels: &[u32]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Blank-interleaved label sequence `[∅, y1, ∅, y2, …, ∅]`.
fn extend(labels: &[u32]) -> Vec<u32> {
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(BLANK);
    for &y in labels {
        ext.push(y);
        ext.push(BLANK);
    }
    ext
}

fn can_skip(ext: &[u32], s: usize) -> bool {
    s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2]
}

/// Forward variables `α[t][s]` in log space over the extended lattice.
fn forward(lp: &[f64], frames: usize, vocab: usize, ext: &[u32]) -> Vec<f64> {
    let s_len = ext.len();
    let mut alpha = vec![NEG_INF; frames * s_len];
    alpha[0] = lp[ext[0] as usize];
    if s_len > 1 {
        alpha[1] = lp[ext[1] as usize];
    }
    for t in 1..frames {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        let row = &lp[t * vocab..(t + 1) * vocab];
        for s in 0..s_len {
            let mut a = prev[s];
            if s >= 1 {
                a = log_add_exp(a, prev[s - 1]);
            }
            if can_skip(ext, s) {
                a = log_add_exp(a, prev[s - 2]);
            }
            cur[s] = a + row[ext[s] as usize];
        }
    }
    alpha
}

/// Backward variables `β[t][s]`: log probability of frames `t+1..` given
/// state `s` at frame `t` (emission at `t` excluded).
fn backward(lp: &[f64], frames: usize, vocab: usize, ext: &[u32]) -> Vec<f64> {
    let s_len = ext.len();
    let mut beta = vec![NEG_INF; frames * s_len];
    let last = (frames - 1) * s_len;
    beta[last + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[last + s_len - 2] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        let row = &lp[(t + 1) * vocab..(t + 2) * vocab];
        for s in 0..s_len {
            let next = &beta[(t + 1) * s_len..(t + 2) * s_len];
            let mut b = next[s] + row[ext[s] as usize];
            if s + 1 < s_len {
                b = log_add_exp(b, next[s + 1] + row[ext[s + 1] as usize]);
            }
            if s + 2 < s_len && can_skip(ext, s + 2) {
                b = log_add_exp(b, next[s + 2] + row[ext[s + 2] as usize]);
            }
            beta[t * s_len + s] = b;
        }
    }
    beta
}

fn final_log_prob(alpha: &[f64], frames: usize, s_len: usize) -> f64 {
    let last = &alpha[(frames - 1) * s_len..frames * s_len];
    if s_len == 1 {
        last[0]
    } else {
        log_add_exp(last[s_len - 1], last[s_len - 2])
    }
}

/// `log P_ctc(labels)` from row-major log probabilities (`frames × vocab`).
/// Returns `-∞` when the labels cannot fit in `frames`.
pub fn ctc_log_likelihood(log_probs: &[f64], frames: usize, vocab: usize, labels: &[u32]) -> Result<f64> {
    if log_probs.len() != frames * vocab {
        return Err(Error::shape(
            "ctc_log_likelihood",
            format!("{} values for {frames}×{vocab}", log_probs.len()),
        ));
    }
    check_labels(labels, vocab)?;
    if frames == 0 || min_frames(labels) > frames {
        return Ok(if frames == 0 && labels.is_empty() { 0.0 } else { NEG_INF });
    }
    let ext = extend(labels);
    let alpha = forward(log_probs, frames, vocab, &ext);
    Ok(final_log_prob(&alpha, frames, ext.len()))
}

/// Negative log-likelihood `−log P_ctc(labels | q)` over the valid frames.
/// Infeasible lengths give `+∞`.
pub fn ctc_loss(q: &Posteriorgram, labels: &[u32]) -> Result<f64> {
    let ll = ctc_log_likelihood(&q.log_probs(), q.valid_len(), q.vocab_size(), labels)?;
    Ok(-ll)
}

/// CTC loss of `softmax(logits)` and its gradient with respect to the
/// logits. Rows at or beyond `valid_len` get zero gradient. An infeasible
/// target yields `(+∞, 0)`.
pub fn ctc_loss_and_grad(logits: &Tensor, valid_len: usize, labels: &[u32]) -> Result<(f64, Tensor)> {
    let (rows, vocab) = (logits.rows(), logits.cols());
    if valid_len > rows {
        return Err(Error::shape(
            "ctc_loss_and_grad",
            format!("valid length {valid_len} exceeds {rows} frames"),
        ));
    }
    check_labels(labels, vocab)?;
    let mut grad = Tensor::zeros(rows, vocab);
    if valid_len == 0 || min_frames(labels) > valid_len {
        let loss = if valid_len == 0 && labels.is_empty() { 0.0 } else { f64::INFINITY };
        return Ok((loss, grad));
    }

    let mut lp = Vec::with_capacity(valid_len * vocab);
    for t in 0..valid_len {
        let row = logits.row(t);
        let z = log_sum_exp(row);
        lp.extend(row.iter().map(|v| v - z));
    }
    let ext = extend(labels);
    let s_len = ext.len();
    let alpha = forward(&lp, valid_len, vocab, &ext);
    let beta = backward(&lp, valid_len, vocab, &ext);
    let log_p = final_log_prob(&alpha, valid_len, s_len);

    let g = grad.data_mut();
    for t in 0..valid_len {
        let row = &mut g[t * vocab..(t + 1) * vocab];
        for (k, r) in row.iter_mut().enumerate() {
            *r = lp[t * vocab + k].exp();
        }
        for s in 0..s_len {
            let occ = alpha[t * s_len + s] + beta[t * s_len + s] - log_p;
            if occ > NEG_INF {
                row[ext[s] as usize] -= occ.exp();
            }
        }
    }
    Ok((-log_p, grad))
}

/// Records the CTC loss of `softmax(logits)` as a scalar node.
pub fn ctc_loss_on_tape(tape: &mut Tape, logits: Var, valid_len: usize, labels: &[u32]) -> Result<Var> {
    let (loss, grad) = ctc_loss_and_grad(tape.value(logits), valid_len, labels)?;
    tape.precomputed_scalar(logits, loss, grad)
}
