//! Encoder building blocks.
//!
//! Parameters live in a [`ParamStore`]; layers hold [`ParamId`]s into it. A
//! forward pass runs inside a [`Session`], which binds every stored
//! parameter to a leaf on a fresh [`Tape`] so gradients can be read back
//! per parameter after [`Tape::backward`].

mod attention;
mod layers;
mod subsample;

pub use attention::MultiHeadAttention;
pub use layers::{Activation, ConformerLayer, ConvModule, FeedForward, TransformerLayer};
pub use subsample::{subsampled_len, Subsampler, MIN_SUBSAMPLE_FRAMES};

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Index of a tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        self.index.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.id(name).map(|id| &mut self.tensors[id.0])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Copies every tensor whose name also exists in `other` with the same
    /// shape. Returns the number copied.
    pub fn copy_shared_from(&mut self, other: &ParamStore) -> usize {
        let mut n = 0;
        for (i, name) in self.names.iter().enumerate() {
            if let Some(src) = other.by_name(name) {
                if src.shape() == self.tensors[i].shape() {
                    self.tensors[i] = src.clone();
                    n += 1;
                }
            }
        }
        n
    }
}

/// Initializes parameters into a store under a name prefix.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    /// Builder whose names are prefixed with `scope.`.
    pub fn scoped(&mut self, scope: &str) -> ParamBuilder<'_> {
        let prefix = if self.prefix.is_empty() {
            scope.to_string()
        } else {
            format!("{}.{scope}", self.prefix)
        };
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn uniform(&mut self, name: &str, rows: usize, cols: usize, bound: f64) -> Result<ParamId> {
        let data = (0..rows * cols)
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        let full = self.name(name);
        self.store.add(full, Tensor::matrix(rows, cols, data))
    }

    pub fn normal(&mut self, name: &str, rows: usize, cols: usize, std: f64) -> Result<ParamId> {
        let dist = Normal::new(0.0, std)
            .map_err(|e| Error::InvalidArgument(format!("normal init: {e}")))?;
        let data = (0..rows * cols).map(|_| dist.sample(self.rng)).collect();
        let full = self.name(name);
        self.store.add(full, Tensor::matrix(rows, cols, data))
    }

    pub fn constant(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> Result<ParamId> {
        let full = self.name(name);
        self.store.add(full, Tensor::filled(rows, cols, value))
    }
}

/// A recording context for one forward pass: tape, bound parameters,
/// train flag and dropout randomness.
pub struct Session<'a> {
    pub tape: &'a mut Tape,
    params: Vec<Var>,
    pub train: bool,
    pub dropout: f64,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> Session<'a> {
    /// Binds every parameter of `store` as a leaf on `tape`. Dropout is
    /// active only when `train` is set and an RNG is supplied.
    pub fn new(
        tape: &'a mut Tape,
        store: &ParamStore,
        train: bool,
        dropout: f64,
        rng: Option<&'a mut ChaCha8Rng>,
    ) -> Self {
        let params = store.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        Self {
            tape,
            params,
            train,
            dropout,
            rng,
        }
    }

    /// Evaluation session: no dropout.
    pub fn eval(tape: &'a mut Tape, store: &ParamStore) -> Self {
        Session::new(tape, store, false, 0.0, None)
    }

    /// Session over parameters already recorded on `tape`, in store order.
    pub fn from_vars(tape: &'a mut Tape, params: Vec<Var>) -> Self {
        Self {
            tape,
            params,
            train: false,
            dropout: 0.0,
            rng: None,
        }
    }

    pub fn p(&self, id: ParamId) -> Var {
        self.params[id.0]
    }

    pub fn dropout(&mut self, x: Var) -> Var {
        match self.rng.as_deref_mut() {
            Some(rng) if self.train => self.tape.dropout(x, self.dropout, true, rng),
            _ => x,
        }
    }

    /// Gradient per parameter, zero where backward did not reach.
    pub fn param_grads(&self) -> Vec<Tensor> {
        self.params
            .iter()
            .map(|&v| match self.tape.grad(v) {
                Some(g) => g.clone(),
                None => {
                    let t = self.tape.value(v);
                    Tensor::matrix(t.rows(), t.cols(), vec![0.0; t.len()])
                }
            })
            .collect()
    }
}

/// Affine map `x W + b`, `W: in × out`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    /// Weights and bias drawn from `U(−1/√in, 1/√in)`.
    pub fn new(b: &mut ParamBuilder, name: &str, inputs: usize, outputs: usize, bias: bool) -> Result<Self> {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut s = b.scoped(name);
        let weight = s.uniform("weight", inputs, outputs, bound)?;
        let bias = if bias {
            Some(s.uniform("bias", 1, outputs, bound)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.p(self.weight);
        let b = self.bias.map(|b| s.p(b));
        s.tape.linear(x, w, b)
    }
}

/// Layer normalization parameters (unit gain, zero bias at init).
#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(b: &mut ParamBuilder, name: &str, dim: usize) -> Result<Self> {
        let mut s = b.scoped(name);
        Ok(Self {
            gain: s.constant("gain", 1, dim, 1.0)?,
            bias: s.constant("bias", 1, dim, 0.0)?,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (g, b) = (s.p(self.gain), s.p(self.bias));
        s.tape.layer_norm(x, g, b)
    }
}

/// Valid-length mask for one padded sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PadMask {
    pub valid_len: usize,
    pub total_len: usize,
}

impl PadMask {
    pub fn new(valid_len: usize, total_len: usize) -> Result<Self> {
        if valid_len == 0 || valid_len > total_len {
            return Err(Error::InvalidArgument(format!(
                "valid length {valid_len} must be in 1..={total_len}"
            )));
        }
        Ok(Self {
            valid_len,
            total_len,
        })
    }

    pub fn full(len: usize) -> Self {
        Self {
            valid_len: len,
            total_len: len,
        }
    }

    pub fn is_padded(&self) -> bool {
        self.valid_len < self.total_len
    }

    /// `1 × T` additive attention bias: `0` for valid keys, `−∞` for padding.
    pub fn key_bias(&self) -> Tensor {
        let data = (0..self.total_len)
            .map(|t| if t < self.valid_len { 0.0 } else { f64::NEG_INFINITY })
            .collect();
        Tensor::matrix(1, self.total_len, data)
    }

    /// Mask after subsampling.
    pub fn subsampled(&self) -> Self {
        Self {
            valid_len: subsampled_len(self.valid_len),
            total_len: subsampled_len(self.total_len),
        }
    }
}

/// Sinusoidal absolute position table, `frames × dim`:
/// `PE[t, 2i] = sin(t / 10000^{2i/d})`, `PE[t, 2i+1] = cos(t / 10000^{2i/d})`.
pub fn sinusoidal_encoding(frames: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; frames * dim];
    for t in 0..frames {
        for c in 0..dim {
            let i = (c / 2) as f64;
            let angle = t as f64 / 10000f64.powf(2.0 * i / dim as f64);
            data[t * dim + c] = if c % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::matrix(frames, dim, data)
}

pub fn add_positional_encoding(tape: &mut Tape, x: Var) -> Result<Var> {
    let (t, d) = tape.shape(x);
    let pe = tape.constant(sinusoidal_encoding(t, d));
    tape.add(x, pe)
}
