use super::{Linear, PadMask, ParamBuilder, Session};
use crate::error::{Error, Result};
use crate::tensor::Var;

/// Scaled dot-product self-attention with `heads` heads of width
/// `dim / heads`. Padding keys receive `−∞` logits.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(b: &mut ParamBuilder, name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "model width {dim} is not divisible by {heads} heads"
            )));
        }
        let mut s = b.scoped(name);
        Ok(Self {
            query: Linear::new(&mut s, "query", dim, dim, true)?,
            key: Linear::new(&mut s, "key", dim, dim, true)?,
            value: Linear::new(&mut s, "value", dim, dim, true)?,
            output: Linear::new(&mut s, "output", dim, dim, true)?,
            heads,
            dim,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var, mask: &PadMask) -> Result<Var> {
        Ok(self.forward_with_weights(s, x, mask)?.0)
    }

    /// Also returns each head's `T × T` attention matrix.
    pub fn forward_with_weights(&self, s: &mut Session, x: Var, mask: &PadMask) -> Result<(Var, Vec<Var>)> {
        let (t, d) = s.tape.shape(x);
        if d != self.dim {
            return Err(Error::shape(
                "mha_forward",
                format!("input width {d}, expected {}", self.dim),
            ));
        }
        if mask.total_len != t {
            return Err(Error::shape(
                "mha_forward",
                format!("mask covers {} frames, input has {t}", mask.total_len),
            ));
        }
        let q = self.query.forward(s, x)?;
        let k = self.key.forward(s, x)?;
        let v = self.value.forward(s, x)?;
        let head_dim = self.dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let bias = if mask.is_padded() {
            Some(s.tape.constant(mask.key_bias()))
        } else {
            None
        };

        let mut contexts = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
            let qh = s.tape.slice_cols(q, lo, hi)?;
            let kh = s.tape.slice_cols(k, lo, hi)?;
            let vh = s.tape.slice_cols(v, lo, hi)?;
            let kt = s.tape.transpose(kh)?;
            let scores = s.tape.matmul(qh, kt)?;
            let mut scores = s.tape.scale(scores, scale);
            if let Some(bias) = bias {
                scores = s.tape.add(scores, bias)?;
            }
            let attn = s.tape.softmax(scores, 1)?;
            contexts.push(s.tape.matmul(attn, vh)?);
            weights.push(attn);
        }
        let context = if contexts.len() == 1 {
            contexts[0]
        } else {
            s.tape.concat_cols(&contexts)?
        };
        Ok((self.output.forward(s, context)?, weights))
    }
}
