//! Interpolated n-gram language model over token ids.
//!
//! Token id 0 is the CTC blank and never occurs inside a sentence, so the
//! model reuses it as the sentence boundary: `n − 1` copies pad the start
//! of every sentence and one copy ends it. The predicted symbol set is
//! therefore ids `0..vocab_size`, with 0 read as end of sentence.
//!
//! Probabilities interpolate per-order estimates with fixed weights. An
//! order whose context was never seen borrows the estimate of the order
//! below it, and the unigram estimate is add-one smoothed, so every
//! in-vocabulary symbol keeps a nonzero probability.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::container::Container;
use crate::ctc::{LanguageModel, BLANK};
use crate::error::{Error, Result};

/// Boundary symbol: start pad and end of sentence.
pub const BOUNDARY: u32 = BLANK;

pub const CONTAINER_KIND: &str = "ngram-lm";

/// Default interpolation weights for a 4-gram, highest order first.
pub const DEFAULT_WEIGHTS: [f64; 4] = [0.4, 0.3, 0.2, 0.1];

/// Tolerance on the weight sum.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Clone, Debug, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: BTreeMap<u32, u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NgramModel {
    order: usize,
    /// `weights[0]` belongs to the highest order.
    weights: Vec<f64>,
    vocab_size: usize,
    /// Full n-gram counts (`order − 1` context tokens, then the token).
    ngrams: BTreeMap<Vec<u32>, u64>,
    /// `tables[k]` maps contexts of length `k` to their continuations.
    tables: Vec<BTreeMap<Vec<u32>, ContextCounts>>,
    tokens: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    order: usize,
    weights: Vec<f64>,
    vocab_size: usize,
    /// Each entry is the n-gram followed by its count.
    ngrams: Vec<Vec<u64>>,
}

impl NgramModel {
    /// Weights default to [`DEFAULT_WEIGHTS`] for order 4 and to equal
    /// weights otherwise.
    pub fn default_weights(order: usize) -> Vec<f64> {
        if order == DEFAULT_WEIGHTS.len() {
            DEFAULT_WEIGHTS.to_vec()
        } else {
            vec![1.0 / order as f64; order]
        }
    }

    /// Trains on token-id sentences. Sentences may be empty; ids must lie
    /// in `1..vocab_size`.
    pub fn train(corpus: &[Vec<u32>], order: usize, weights: &[f64], vocab_size: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Data("language model corpus is empty".into()));
        }
        let mut ngrams = BTreeMap::new();
        for (i, sentence) in corpus.iter().enumerate() {
            for &t in sentence {
                if t == BOUNDARY || t as usize >= vocab_size {
                    return Err(Error::Data(format!(
                        "sentence {} has token id {t} outside 1..{vocab_size}",
                        i + 1
                    )));
                }
            }
            let mut padded = vec![BOUNDARY; order.saturating_sub(1)];
            padded.extend_from_slice(sentence);
            padded.push(BOUNDARY);
            for w in padded.windows(order.max(1)) {
                *ngrams.entry(w.to_vec()).or_insert(0) += 1;
            }
        }
        Self::from_ngrams(order, weights.to_vec(), vocab_size, ngrams)
    }

    fn from_ngrams(
        order: usize,
        weights: Vec<f64>,
        vocab_size: usize,
        ngrams: BTreeMap<Vec<u32>, u64>,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::Config("n-gram order must be at least 1".into()));
        }
        if vocab_size < 2 {
            return Err(Error::Config("language model vocabulary needs at least one token".into()));
        }
        if weights.len() != order {
            return Err(Error::Config(format!(
                "{} interpolation weights for order {order}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("interpolation weights must be nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Config(format!("interpolation weights sum to {sum}, not 1")));
        }
        let mut tables = vec![BTreeMap::<Vec<u32>, ContextCounts>::new(); order];
        let mut tokens = 0;
        for (gram, &count) in &ngrams {
            if gram.len() != order || gram.iter().any(|&t| t as usize >= vocab_size) {
                return Err(Error::format("language model", format!("bad n-gram {gram:?}")));
            }
            if count == 0 {
                return Err(Error::format("language model", "zero n-gram count"));
            }
            let (&token, context) = gram.split_last().expect("order >= 1");
            for (k, table) in tables.iter_mut().enumerate() {
                let entry = table.entry(context[context.len() - k..].to_vec()).or_default();
                entry.total += count;
                *entry.next.entry(token).or_insert(0) += count;
            }
            tokens += count;
        }
        Ok(Self {
            order,
            weights,
            vocab_size,
            ngrams,
            tables,
            tokens,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Predicted symbols: every token id plus end of sentence (id 0).
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Copy with new interpolation weights and the same counts.
    pub fn with_weights(&self, weights: &[f64]) -> Result<Self> {
        Self::from_ngrams(self.order, weights.to_vec(), self.vocab_size, self.ngrams.clone())
    }

    /// The last `order − 1` tokens of `context`, start-padded.
    fn history(&self, context: &[u32]) -> Vec<u32> {
        let n = self.order - 1;
        let mut h = vec![BOUNDARY; n.saturating_sub(context.len())];
        h.extend_from_slice(&context[context.len().saturating_sub(n)..]);
        h
    }

    fn unigram(&self, token: u32) -> f64 {
        let c = self.tables[0]
            .get(&Vec::new())
            .and_then(|e| e.next.get(&token))
            .copied()
            .unwrap_or(0);
        (c as f64 + 1.0) / (self.tokens as f64 + self.vocab_size as f64)
    }

    /// `p(token | context)`.
    pub fn prob(&self, token: u32, context: &[u32]) -> Result<f64> {
        for &t in context.iter().chain(std::iter::once(&token)) {
            if t as usize >= self.vocab_size {
                return Err(Error::OutOfVocabulary {
                    token: t,
                    size: self.vocab_size,
                });
            }
        }
        let h = self.history(context);
        // per-order estimates from unigram upward; unseen contexts inherit
        let mut est = self.unigram(token);
        let mut p = self.weights[self.order - 1] * est;
        for k in 1..self.order {
            if let Some(e) = self.tables[k].get(&h[h.len() - k..]) {
                est = e.next.get(&token).copied().unwrap_or(0) as f64 / e.total as f64;
            }
            p += self.weights[self.order - 1 - k] * est;
        }
        Ok(p)
    }

    /// Natural-log perplexity exponent: mean negative log probability per
    /// predicted symbol, end of sentence included.
    pub fn cross_entropy(&self, corpus: &[Vec<u32>]) -> Result<f64> {
        let mut total = 0.0;
        let mut n = 0usize;
        for sentence in corpus {
            for i in 0..=sentence.len() {
                let token = sentence.get(i).copied().unwrap_or(BOUNDARY);
                if i < sentence.len() && token == BOUNDARY {
                    return Err(Error::Data("sentence contains the boundary token".into()));
                }
                total -= self.log_prob(token, &sentence[..i])?;
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Data("empty evaluation corpus".into()));
        }
        Ok(total / n as f64)
    }

    pub fn perplexity(&self, corpus: &[Vec<u32>]) -> Result<f64> {
        Ok(self.cross_entropy(corpus)?.exp())
    }

    pub fn to_container(&self) -> Container {
        let meta = Meta {
            order: self.order,
            weights: self.weights.clone(),
            vocab_size: self.vocab_size,
            ngrams: self
                .ngrams
                .iter()
                .map(|(g, &c)| g.iter().map(|&t| t as u64).chain([c]).collect())
                .collect(),
        };
        Container::new(CONTAINER_KIND, json!(meta))
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(CONTAINER_KIND)?;
        let meta: Meta = serde_json::from_value(c.meta.clone())
            .map_err(|e| Error::format("language model", e.to_string()))?;
        let mut ngrams = BTreeMap::new();
        for row in meta.ngrams {
            let (&count, gram) = row
                .split_last()
                .ok_or_else(|| Error::format("language model", "empty n-gram row"))?;
            let gram = gram
                .iter()
                .map(|&t| u32::try_from(t).map_err(|_| Error::format("language model", "token id overflow")))
                .collect::<Result<Vec<u32>>>()?;
            if ngrams.insert(gram, count).is_some() {
                return Err(Error::format("language model", "duplicate n-gram"));
            }
        }
        Self::from_ngrams(meta.order, meta.weights, meta.vocab_size, ngrams)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.to_container().to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_container(&Container::from_bytes(bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

impl LanguageModel for NgramModel {
    fn log_prob(&self, token: u32, context: &[u32]) -> Result<f64> {
        Ok(self.prob(token, context)?.ln())
    }
}
