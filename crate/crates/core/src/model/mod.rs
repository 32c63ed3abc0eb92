//! Encoder with intermediate CTC taps and gated interlayer collaboration.
//!
//! At every tap layer the hidden state is projected to soft labels over the
//! vocabulary. The soft labels weight a shared token embedding table, and a
//! sigmoid gate mixes that textual embedding back into the acoustic state
//! before the next layer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ctc::{ctc_loss_on_tape, Posteriorgram};
use crate::error::{Error, Result};
use crate::nn::{
    add_positional_encoding, ConformerLayer, LayerNorm, Linear, PadMask, ParamBuilder, ParamId,
    ParamStore, Session, Subsampler, TransformerLayer,
};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    #[default]
    Transformer,
    Conformer,
}

/// How the textual embedding is merged into the acoustic state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// `g ⊙ h + (1 − g) ⊙ e` with a learned sigmoid gate.
    #[default]
    Gate,
    /// `h + e`, no gate parameters.
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GicConfig {
    pub backbone: Backbone,
    /// Encoder depth `L`.
    pub layers: usize,
    /// Number of intermediate taps `K`.
    pub taps: usize,
    /// Weight of the mean intermediate loss.
    pub lambda: f64,
    pub dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub conv_kernel: usize,
    /// Includes the blank.
    pub vocab_size: usize,
    pub feat_dim: usize,
    pub dropout: f64,
    pub enable_gic: bool,
    pub enable_intermediate_loss: bool,
    pub fusion: Fusion,
    /// Taps reuse the final output projection.
    pub share_tap_projection: bool,
    /// Block gradients from the embedding path into the soft labels.
    pub stop_gradient_soft_labels: bool,
}

impl Default for GicConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::Transformer,
            layers: 6,
            taps: 2,
            lambda: 0.5,
            dim: 32,
            heads: 4,
            ff_dim: 128,
            conv_kernel: 15,
            vocab_size: 8,
            feat_dim: 16,
            dropout: 0.1,
            enable_gic: true,
            enable_intermediate_loss: true,
            fusion: Fusion::Gate,
            share_tap_projection: false,
            stop_gradient_soft_labels: false,
        }
    }
}

impl GicConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 {
            return bad("layers must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return bad(format!("dim {} not divisible by {} heads", self.dim, self.heads));
        }
        if self.ff_dim == 0 || self.feat_dim == 0 {
            return bad("ff_dim and feat_dim must be positive".into());
        }
        if self.backbone == Backbone::Conformer && self.conv_kernel % 2 == 0 {
            return bad(format!("conv_kernel {} must be odd", self.conv_kernel));
        }
        if self.vocab_size < 2 {
            return bad("vocab_size must count the blank and at least one token".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        tap_layer_indices(self.layers, self.taps)?;
        Ok(())
    }

    /// Whether tap layers get a projection at all.
    pub fn has_taps(&self) -> bool {
        self.taps > 0 && (self.enable_gic || self.enable_intermediate_loss)
    }
}

/// Tap layers `round(iL/(K+1))` for `i = 1..K`, 1-based.
pub fn tap_layer_indices(layers: usize, taps: usize) -> Result<Vec<usize>> {
    let denom = 2 * (taps + 1);
    let idx: Vec<usize> = (1..=taps)
        .map(|i| (2 * i * layers + taps + 1) / denom)
        .collect();
    if idx.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config(format!(
            "{taps} taps over {layers} layers give duplicate tap layers {idx:?}"
        )));
    }
    if taps >= layers || idx.first() == Some(&0) {
        return Err(Error::Config(format!(
            "tap count {taps} must be at most {} for {layers} layers",
            layers.saturating_sub(1)
        )));
    }
    Ok(idx)
}

/// `(1 − λ)·final + λ·mean(intermediates)`. With no intermediates the
/// weight is forced to zero and the final loss is returned.
pub fn total_loss(final_loss: f64, intermediates: &[f64], lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} outside [0, 1]")));
    }
    if intermediates.is_empty() {
        return Ok(final_loss);
    }
    let sum: f64 = intermediates.iter().sum();
    Ok((1.0 - lambda) * final_loss + (lambda / intermediates.len() as f64) * sum)
}

/// Soft labels `softmax(Linear(LN(h)))`.
pub fn intermediate_posterior(s: &mut Session, h: Var, norm: &LayerNorm, proj: &Linear) -> Result<Var> {
    let z = tap_logits(s, h, norm, proj)?;
    s.tape.softmax(z, 1)
}

fn tap_logits(s: &mut Session, h: Var, norm: &LayerNorm, proj: &Linear) -> Result<Var> {
    let n = norm.forward(s, h)?;
    proj.forward(s, n)
}

/// `e = q × emb`: every frame's embedding is the probability-weighted sum
/// of token embeddings.
pub fn textual_embedding(tape: &mut Tape, q: Var, emb: Var) -> Result<Var> {
    let (_, v) = tape.shape(q);
    let (rows, _) = tape.shape(emb);
    if v != rows {
        return Err(Error::shape(
            "textual_embedding",
            format!("{v} soft-label columns, {rows} embedding rows"),
        ));
    }
    tape.matmul(q, emb)
}

/// Gate parameters of one tap.
#[derive(Clone, Copy, Debug)]
pub struct Gate {
    pub w_h: Linear,
    pub w_e: Linear,
    pub bias: ParamId,
}

impl Gate {
    pub fn new(b: &mut ParamBuilder, name: &str, dim: usize) -> Result<Self> {
        let mut s = b.scoped(name);
        Ok(Self {
            w_h: Linear::new(&mut s, "w_h", dim, dim, false)?,
            w_e: Linear::new(&mut s, "w_e", dim, dim, false)?,
            bias: s.constant("bias", 1, dim, 1.0)?,
        })
    }
}

/// `g = σ(h W₁ + e W₂ + b)`, returns `g ⊙ h + (1 − g) ⊙ e`.
pub fn gate_fuse(s: &mut Session, h: Var, e: Var, gate: &Gate) -> Result<Var> {
    if s.tape.shape(h) != s.tape.shape(e) {
        return Err(Error::shape("gate_fuse", "acoustic and textual shapes differ"));
    }
    let a = gate.w_h.forward(s, h)?;
    let c = gate.w_e.forward(s, e)?;
    let pre = s.tape.add(a, c)?;
    let bias = s.p(gate.bias);
    let pre = s.tape.add(pre, bias)?;
    let g = s.tape.sigmoid(pre);
    let keep = s.tape.mul(g, h)?;
    let neg = s.tape.scale(g, -1.0);
    let rest = s.tape.add_scalar(neg, 1.0);
    let take = s.tape.mul(rest, e)?;
    s.tape.add(keep, take)
}

#[derive(Clone, Debug)]
pub enum EncoderLayer {
    Transformer(TransformerLayer),
    Conformer(ConformerLayer),
}

impl EncoderLayer {
    pub fn forward(&self, s: &mut Session, h: Var, mask: &PadMask) -> Result<Var> {
        match self {
            EncoderLayer::Transformer(l) => l.forward(s, h, mask),
            EncoderLayer::Conformer(l) => l.forward(s, h, mask),
        }
    }
}

/// Parameters attached to one tap layer.
#[derive(Clone, Debug)]
pub struct TapBlock {
    pub layer: usize,
    pub norm: LayerNorm,
    pub proj: Linear,
    pub gate: Option<Gate>,
}

#[derive(Clone, Debug)]
pub struct GicModel {
    pub config: GicConfig,
    pub subsample: Subsampler,
    pub layers: Vec<EncoderLayer>,
    pub final_norm: LayerNorm,
    pub final_proj: Linear,
    pub embedding: Option<ParamId>,
    pub blocks: Vec<TapBlock>,
}

/// Everything one forward pass records.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    pub final_logits: Var,
    /// Logits per tap, in layer order.
    pub tap_logits: Vec<Var>,
    /// Soft labels entering the embedding, when GIC is on.
    pub soft_labels: Vec<Option<Var>>,
    /// Fused state handed to the layer after each tap, when GIC is on.
    pub fused: Vec<Option<Var>>,
    pub tap_layers: Vec<usize>,
    /// Valid frames after subsampling.
    pub valid_len: usize,
}

impl ModelOutput {
    pub fn final_posteriorgram(&self, tape: &Tape) -> Result<Posteriorgram> {
        Posteriorgram::from_logits(tape.value(self.final_logits), self.valid_len)
    }

    pub fn tap_posteriorgrams(&self, tape: &Tape) -> Result<Vec<Posteriorgram>> {
        self.tap_logits
            .iter()
            .map(|&z| Posteriorgram::from_logits(tape.value(z), self.valid_len))
            .collect()
    }
}

/// Loss values with the scalar node to differentiate.
#[derive(Clone, Debug)]
pub struct LossBreakdown {
    pub final_ctc: f64,
    pub intermediate: Vec<f64>,
    pub total: f64,
    pub node: Var,
}

impl GicModel {
    /// Builds the model and its parameters from `seed`. Encoder and output
    /// parameters are created before tap parameters, so models that differ
    /// only in their taps share the same encoder initialization.
    pub fn new(config: GicConfig, seed: u64) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let c = &config;
        let subsample = Subsampler::new(&mut b, "subsample", c.feat_dim, c.dim)?;
        let mut layers = Vec::with_capacity(c.layers);
        for l in 1..=c.layers {
            let name = format!("layer{l}");
            layers.push(match c.backbone {
                Backbone::Transformer => {
                    EncoderLayer::Transformer(TransformerLayer::new(&mut b, &name, c.dim, c.heads, c.ff_dim)?)
                }
                Backbone::Conformer => EncoderLayer::Conformer(ConformerLayer::new(
                    &mut b,
                    &name,
                    c.dim,
                    c.heads,
                    c.ff_dim,
                    c.conv_kernel,
                )?),
            });
        }
        let final_norm = LayerNorm::new(&mut b, "final_norm", c.dim)?;
        let final_proj = Linear::new(&mut b, "final_proj", c.dim, c.vocab_size, true)?;

        let mut embedding = None;
        let mut blocks = Vec::new();
        if c.has_taps() {
            if c.enable_gic {
                let std = 1.0 / (c.dim as f64).sqrt();
                embedding = Some(b.normal("embedding", c.vocab_size, c.dim, std)?);
            }
            for layer in tap_layer_indices(c.layers, c.taps)? {
                let mut t = b.scoped(&format!("tap{layer}"));
                let (norm, proj) = if c.share_tap_projection {
                    (final_norm, final_proj)
                } else {
                    (
                        LayerNorm::new(&mut t, "norm", c.dim)?,
                        Linear::new(&mut t, "proj", c.dim, c.vocab_size, true)?,
                    )
                };
                let gate = if c.enable_gic && c.fusion == Fusion::Gate {
                    Some(Gate::new(&mut t, "gate", c.dim)?)
                } else {
                    None
                };
                blocks.push(TapBlock {
                    layer,
                    norm,
                    proj,
                    gate,
                });
            }
        }
        let model = Self {
            config,
            subsample,
            layers,
            final_norm,
            final_proj,
            embedding,
            blocks,
        };
        Ok((model, store))
    }

    /// Feature frames needed by the front-end.
    pub fn output_len(&self, frames: usize) -> usize {
        crate::nn::subsampled_len(frames)
    }

    pub fn forward(&self, s: &mut Session, x: Var, mask: &PadMask) -> Result<ModelOutput> {
        let c = &self.config;
        let h = self.subsample.forward(s, x, mask)?;
        let m = mask.subsampled();
        let mut h = add_positional_encoding(s.tape, h)?;
        let mut tap_logits = Vec::with_capacity(self.blocks.len());
        let mut fused = Vec::with_capacity(self.blocks.len());
        let mut soft_labels = Vec::with_capacity(self.blocks.len());
        let mut blocks = self.blocks.iter().peekable();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(s, h, &m)?;
            let Some(block) = blocks.next_if(|b| b.layer == i + 1) else {
                continue;
            };
            let z = tap_logits_for(s, h, block)?;
            tap_logits.push(z);
            if !c.enable_gic {
                fused.push(None);
                soft_labels.push(None);
                continue;
            }
            let q = s.tape.softmax(z, 1)?;
            soft_labels.push(Some(q));
            let q = if c.stop_gradient_soft_labels {
                let v = s.tape.value(q).clone();
                s.tape.constant(v)
            } else {
                q
            };
            let emb = s.p(self.embedding.expect("gic model has an embedding"));
            let e = textual_embedding(s.tape, q, emb)?;
            h = match &block.gate {
                Some(g) => gate_fuse(s, h, e, g)?,
                None => s.tape.add(h, e)?,
            };
            fused.push(Some(h));
        }
        let n = self.final_norm.forward(s, h)?;
        let final_logits = self.final_proj.forward(s, n)?;
        Ok(ModelOutput {
            final_logits,
            tap_logits,
            soft_labels,
            fused,
            tap_layers: self.blocks.iter().map(|b| b.layer).collect(),
            valid_len: m.valid_len,
        })
    }

    /// CTC losses of one utterance and their combination. Intermediate
    /// losses enter only when enabled.
    pub fn loss(&self, tape: &mut Tape, out: &ModelOutput, labels: &[u32]) -> Result<LossBreakdown> {
        let final_node = ctc_loss_on_tape(tape, out.final_logits, out.valid_len, labels)?;
        let final_ctc = tape.value(final_node).item();
        if !self.config.enable_intermediate_loss || out.tap_logits.is_empty() {
            return Ok(LossBreakdown {
                final_ctc,
                intermediate: Vec::new(),
                total: final_ctc,
                node: final_node,
            });
        }
        let lambda = self.config.lambda;
        let mut inter_nodes = Vec::with_capacity(out.tap_logits.len());
        for &z in &out.tap_logits {
            inter_nodes.push(ctc_loss_on_tape(tape, z, out.valid_len, labels)?);
        }
        let intermediate: Vec<f64> = inter_nodes.iter().map(|&v| tape.value(v).item()).collect();

        let mut sum = inter_nodes[0];
        for &v in &inter_nodes[1..] {
            sum = tape.add(sum, v)?;
        }
        let inter = tape.scale(sum, lambda / inter_nodes.len() as f64);
        let fin = tape.scale(final_node, 1.0 - lambda);
        let node = tape.add(fin, inter)?;
        let total = tape.value(node).item();
        Ok(LossBreakdown {
            final_ctc,
            intermediate,
            total,
            node,
        })
    }

    /// Evaluation forward pass returning the final and per-tap
    /// posteriorgrams for an unpadded feature matrix.
    pub fn posteriorgrams(&self, store: &ParamStore, features: &Tensor) -> Result<(Posteriorgram, Vec<Posteriorgram>)> {
        let mut tape = Tape::new();
        let mut s = Session::eval(&mut tape, store);
        let x = s.tape.constant(features.clone());
        let out = self.forward(&mut s, x, &PadMask::full(features.rows()))?;
        Ok((out.final_posteriorgram(&tape)?, out.tap_posteriorgrams(&tape)?))
    }
}

fn tap_logits_for(s: &mut Session, h: Var, block: &TapBlock) -> Result<Var> {
    tap_logits(s, h, &block.norm, &block.proj)
}
