use serde::{Deserialize, Serialize};

use super::{LayerNorm, Linear, MultiHeadAttention, PadMask, ParamBuilder, Session};
use crate::error::{Error, Result};
use crate::tensor::Var;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Swish,
}

/// Position-wise `Linear → activation → Linear`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
    pub activation: Activation,
}

impl FeedForward {
    pub fn new(b: &mut ParamBuilder, name: &str, dim: usize, hidden: usize, activation: Activation) -> Result<Self> {
        let mut s = b.scoped(name);
        Ok(Self {
            inner: Linear::new(&mut s, "inner", dim, hidden, true)?,
            outer: Linear::new(&mut s, "outer", hidden, dim, true)?,
            activation,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let h = self.inner.forward(s, x)?;
        let h = match self.activation {
            Activation::Relu => s.tape.relu(h),
            Activation::Swish => s.tape.swish(h),
        };
        let h = s.dropout(h);
        self.outer.forward(s, h)
    }
}

/// Pre-norm Transformer encoder layer:
/// `h′ = h + SAN(LN(h))`, `out = h′ + FFN(LN(h′))`.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub attn_norm: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ff_norm: LayerNorm,
    pub ff: FeedForward,
}

impl TransformerLayer {
    pub fn new(b: &mut ParamBuilder, name: &str, dim: usize, heads: usize, ff_dim: usize) -> Result<Self> {
        let mut s = b.scoped(name);
        Ok(Self {
            attn_norm: LayerNorm::new(&mut s, "attn_norm", dim)?,
            attn: MultiHeadAttention::new(&mut s, "attn", dim, heads)?,
            ff_norm: LayerNorm::new(&mut s, "ff_norm", dim)?,
            ff: FeedForward::new(&mut s, "ff", dim, ff_dim, Activation::Relu)?,
        })
    }

    pub fn forward(&self, s: &mut Session, h_in: Var, mask: &PadMask) -> Result<Var> {
        let n = self.attn_norm.forward(s, h_in)?;
        let a = self.attn.forward(s, n, mask)?;
        let a = s.dropout(a);
        let h_mid = s.tape.add(h_in, a)?;
        let n = self.ff_norm.forward(s, h_mid)?;
        let f = self.ff.forward(s, n)?;
        let f = s.dropout(f);
        s.tape.add(h_mid, f)
    }
}

/// Conformer convolution module:
/// `LN → pointwise (d→2d) → GLU → depthwise conv → LN → swish → pointwise`.
/// Padding frames are zeroed before the depthwise convolution.
#[derive(Clone, Debug)]
pub struct ConvModule {
    pub norm: LayerNorm,
    pub pointwise_in: Linear,
    pub depthwise: super::ParamId,
    pub depthwise_bias: super::ParamId,
    pub conv_norm: LayerNorm,
    pub pointwise_out: Linear,
}

impl ConvModule {
    pub fn new(b: &mut ParamBuilder, name: &str, dim: usize, kernel: usize) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "convolution kernel {kernel} must be odd"
            )));
        }
        let mut s = b.scoped(name);
        let bound = 1.0 / (kernel as f64).sqrt();
        Ok(Self {
            norm: LayerNorm::new(&mut s, "norm", dim)?,
            pointwise_in: Linear::new(&mut s, "pointwise_in", dim, 2 * dim, true)?,
            depthwise: s.uniform("depthwise.weight", kernel, dim, bound)?,
            depthwise_bias: s.uniform("depthwise.bias", 1, dim, bound)?,
            conv_norm: LayerNorm::new(&mut s, "conv_norm", dim)?,
            pointwise_out: Linear::new(&mut s, "pointwise_out", dim, dim, true)?,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var, mask: &PadMask) -> Result<Var> {
        let h = self.norm.forward(s, x)?;
        let h = self.pointwise_in.forward(s, h)?;
        let h = s.tape.glu(h)?;
        let h = s.tape.mask_rows(h, mask.valid_len);
        let k = s.p(self.depthwise);
        let h = s.tape.depthwise_conv1d(h, k)?;
        let kb = s.p(self.depthwise_bias);
        let h = s.tape.add(h, kb)?;
        let h = self.conv_norm.forward(s, h)?;
        let h = s.tape.swish(h);
        self.pointwise_out.forward(s, h)
    }
}

/// Conformer block with half-step feed-forward residuals:
/// `h′ = h + ½FFN(h)`, `s = h′ + SAN(h′)`, `o = s + Conv(s)`,
/// `out = LN(o + ½FFN(o))`. Each module normalizes its own input.
#[derive(Clone, Debug)]
pub struct ConformerLayer {
    pub ff1_norm: LayerNorm,
    pub ff1: FeedForward,
    pub attn_norm: LayerNorm,
    pub attn: MultiHeadAttention,
    pub conv: ConvModule,
    pub ff2_norm: LayerNorm,
    pub ff2: FeedForward,
    pub out_norm: LayerNorm,
}

impl ConformerLayer {
    pub fn new(
        b: &mut ParamBuilder,
        name: &str,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        kernel: usize,
    ) -> Result<Self> {
        let mut s = b.scoped(name);
        Ok(Self {
            ff1_norm: LayerNorm::new(&mut s, "ff1_norm", dim)?,
            ff1: FeedForward::new(&mut s, "ff1", dim, ff_dim, Activation::Swish)?,
            attn_norm: LayerNorm::new(&mut s, "attn_norm", dim)?,
            attn: MultiHeadAttention::new(&mut s, "attn", dim, heads)?,
            conv: ConvModule::new(&mut s, "conv", dim, kernel)?,
            ff2_norm: LayerNorm::new(&mut s, "ff2_norm", dim)?,
            ff2: FeedForward::new(&mut s, "ff2", dim, ff_dim, Activation::Swish)?,
            out_norm: LayerNorm::new(&mut s, "out_norm", dim)?,
        })
    }

    pub fn forward(&self, s: &mut Session, h_in: Var, mask: &PadMask) -> Result<Var> {
        let n = self.ff1_norm.forward(s, h_in)?;
        let f = self.ff1.forward(s, n)?;
        let f = s.dropout(f);
        let f = s.tape.scale(f, 0.5);
        let h = s.tape.add(h_in, f)?;

        let n = self.attn_norm.forward(s, h)?;
        let a = self.attn.forward(s, n, mask)?;
        let a = s.dropout(a);
        let sres = s.tape.add(h, a)?;

        let c = self.conv.forward(s, sres, mask)?;
        let c = s.dropout(c);
        let o = s.tape.add(sres, c)?;

        let n = self.ff2_norm.forward(s, o)?;
        let f = self.ff2.forward(s, n)?;
        let f = s.dropout(f);
        let f = s.tape.scale(f, 0.5);
        let pre = s.tape.add(o, f)?;
        self.out_norm.forward(s, pre)
    }
}
