use super::{Linear, PadMask, ParamBuilder, Session};
use crate::error::{Error, Result};
use crate::tensor::Var;

/// Shortest input the front-end accepts.
pub const MIN_SUBSAMPLE_FRAMES: usize = 4;

const KERNEL: usize = 3;
const STRIDE: usize = 2;
const PAD: usize = 1;

fn conv_len(t: usize) -> usize {
    (t + 2 * PAD - KERNEL) / STRIDE + 1
}

/// Output length of the two stride-2 stages: `⌈⌈T/2⌉/2⌉ = ⌈T/4⌉`.
pub fn subsampled_len(frames: usize) -> usize {
    conv_len(conv_len(frames))
}

/// Two strided temporal convolutions (kernel 3, stride 2, padding 1, ReLU)
/// followed by a linear projection to the model width.
#[derive(Clone, Debug)]
pub struct Subsampler {
    pub conv1: Linear,
    pub conv2: Linear,
    pub proj: Linear,
    pub feat_dim: usize,
    pub dim: usize,
}

impl Subsampler {
    pub fn new(b: &mut ParamBuilder, name: &str, feat_dim: usize, dim: usize) -> Result<Self> {
        let mut s = b.scoped(name);
        Ok(Self {
            conv1: Linear::new(&mut s, "conv1", KERNEL * feat_dim, dim, true)?,
            conv2: Linear::new(&mut s, "conv2", KERNEL * dim, dim, true)?,
            proj: Linear::new(&mut s, "proj", dim, dim, true)?,
            feat_dim,
            dim,
        })
    }

    /// `x` is `T × feat_dim`; frames at or beyond `mask.valid_len` are padding.
    pub fn forward(&self, s: &mut Session, x: Var, mask: &PadMask) -> Result<Var> {
        let (t, d) = s.tape.shape(x);
        if d != self.feat_dim {
            return Err(Error::shape(
                "subsample_forward",
                format!("feature width {d}, expected {}", self.feat_dim),
            ));
        }
        if mask.valid_len < MIN_SUBSAMPLE_FRAMES {
            return Err(Error::InvalidArgument(format!(
                "{} frames is shorter than the minimum of {MIN_SUBSAMPLE_FRAMES}",
                mask.valid_len
            )));
        }
        if mask.total_len != t {
            return Err(Error::shape("subsample_forward", "mask length differs from input"));
        }
        let x = s.tape.mask_rows(x, mask.valid_len);
        let u = s.tape.unfold(x, KERNEL, STRIDE, PAD)?;
        let h = self.conv1.forward(s, u)?;
        let h = s.tape.relu(h);
        let h = s.tape.mask_rows(h, conv_len(mask.valid_len));
        let u = s.tape.unfold(h, KERNEL, STRIDE, PAD)?;
        let h = self.conv2.forward(s, u)?;
        let h = s.tape.relu(h);
        self.proj.forward(s, h)
    }
}
