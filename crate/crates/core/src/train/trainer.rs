use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Adam, DecodeConfig, DecodeMode, RunConfig};
use crate::container::Container;
use crate::ctc::{greedy_decode, min_frames, prefix_beam_search, LanguageModel, Posteriorgram};
use crate::data::{
    aggregate_cer, load_manifest, make_batches, parse_manifest, synth_generate, Batch, ErrorRate, TokenMode, Utterance,
    Vocabulary,
};
use crate::error::{Error, Result};
use crate::model::GicModel;
use crate::nn::{subsampled_len, PadMask, ParamStore, Session, MIN_SUBSAMPLE_FRAMES};
use crate::tensor::{Tape, Tensor};

pub const CHECKPOINT_KIND: &str = "checkpoint";

/// Stream of the dropout generator; model initialization uses stream 0.
const DROPOUT_STREAM: u64 = 1;

/// Whether the model can score `u` at all: the front-end needs a minimum
/// input length and CTC needs enough encoder frames for the transcript.
pub fn is_feasible(u: &Utterance) -> bool {
    let t = u.features.rows();
    t >= MIN_SUBSAMPLE_FRAMES && min_frames(&u.transcript) <= subsampled_len(t)
}

/// Running sums over the batches of one epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochAccum {
    pub total: f64,
    pub final_ctc: f64,
    pub intermediate: Vec<f64>,
    pub used: usize,
    pub skipped: usize,
}

/// Position within training.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    /// Epoch in progress, 0-based.
    pub epoch: usize,
    /// Batches of that epoch already applied.
    pub batch: usize,
    pub accum: EpochAccum,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    /// Mean per trained utterance.
    pub total: f64,
    pub final_ctc: f64,
    pub intermediate: Vec<f64>,
    pub skipped: usize,
    pub train_cer: Option<f64>,
    pub valid_cer: Option<f64>,
}

impl EpochMetrics {
    pub fn tsv_header(tap_layers: &[usize]) -> String {
        let mut h = String::from("epoch\tstep\tlr\ttotal_loss\tfinal_ctc");
        for l in tap_layers {
            h.push_str(&format!("\tinter_ctc_l{l}"));
        }
        h.push_str("\tskipped\ttrain_cer\tvalid_cer");
        h
    }

    pub fn tsv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        let mut r = format!(
            "{}\t{}\t{:.6e}\t{:.6}\t{:.6}",
            self.epoch, self.step, self.lr, self.total, self.final_ctc
        );
        for v in &self.intermediate {
            r.push_str(&format!("\t{v:.6}"));
        }
        r.push_str(&format!("\t{}\t{}\t{}", self.skipped, opt(self.train_cer), opt(self.valid_cer)));
        r
    }
}

/// Outcome of one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    pub lr: f64,
    pub grad_norm: f64,
    pub used: usize,
    pub skipped: usize,
}

/// Greedy error rates of the final layer and of every tap.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub final_layer: ErrorRate,
    pub taps: Vec<ErrorRate>,
}

pub struct Trainer {
    pub config: RunConfig,
    pub vocab: Vocabulary,
    pub model: GicModel,
    pub params: ParamStore,
    pub adam: Adam,
    pub progress: Progress,
    rng: ChaCha8Rng,
    batches: Option<(usize, Vec<Batch>)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngState {
    seed: Vec<u8>,
    stream: u64,
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    config: RunConfig,
    vocab: String,
    progress: Progress,
    step: u64,
    rng: RngState,
}

impl Trainer {
    pub fn new(config: RunConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        if vocab.len() != config.model.vocab_size {
            return Err(Error::Config(format!(
                "model.vocab_size is {} but the vocabulary has {} entries",
                config.model.vocab_size,
                vocab.len()
            )));
        }
        let (model, params) = GicModel::new(config.model.clone(), config.seed)?;
        let adam = Adam::new(config.optimizer.clone(), params.tensors());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(DROPOUT_STREAM);
        Ok(Self {
            config,
            vocab,
            model,
            params,
            adam,
            progress: Progress::default(),
            rng,
            batches: None,
        })
    }

    pub fn step(&self) -> u64 {
        self.adam.step
    }

    /// Batches of `epoch`, seeded by the run seed and the epoch number.
    pub fn epoch_batches(&self, train: &[Utterance], epoch: usize) -> Result<Vec<Batch>> {
        let seed = self.config.seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let t = &self.config.training;
        make_batches(train, t.batch_size, t.sort_by_length, seed)
    }

    /// Forward, backward and one optimizer update on `batch`. Gradients are
    /// averaged over the utterances that could be scored.
    pub fn train_batch(&mut self, batch: &Batch) -> Result<StepStats> {
        let k = self.model.blocks.len();
        if self.progress.accum.intermediate.len() != k && self.model.config.enable_intermediate_loss {
            self.progress.accum.intermediate = vec![0.0; k];
        }
        let mut grads: Option<Vec<Tensor>> = None;
        let (mut used, mut skipped) = (0, 0);
        for b in 0..batch.len() {
            let labels = batch.label(b);
            let x = batch.unpadded(b);
            if x.rows() < MIN_SUBSAMPLE_FRAMES || min_frames(labels) > subsampled_len(x.rows()) {
                skipped += 1;
                continue;
            }
            let mut tape = Tape::new();
            let dropout = self.model.config.dropout;
            let mut s = Session::new(&mut tape, &self.params, true, dropout, Some(&mut self.rng));
            let xv = s.tape.constant(x);
            let out = self.model.forward(&mut s, xv, &PadMask::full(batch.lengths[b]))?;
            let loss = self.model.loss(s.tape, &out, labels)?;
            if loss.total.is_nan() {
                return Err(Error::Numeric(format!(
                    "loss is NaN for utterance {} at step {}",
                    batch.indices[b],
                    self.adam.step + 1
                )));
            }
            if loss.total.is_infinite() {
                skipped += 1;
                continue;
            }
            s.tape.backward(loss.node)?;
            let g = s.param_grads();
            match grads.as_mut() {
                None => grads = Some(g),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&g) {
                        a.data_mut().iter_mut().zip(g.data()).for_each(|(a, g)| *a += g);
                    }
                }
            }
            let acc = &mut self.progress.accum;
            acc.total += loss.total;
            acc.final_ctc += loss.final_ctc;
            for (a, v) in acc.intermediate.iter_mut().zip(&loss.intermediate) {
                *a += v;
            }
            used += 1;
        }
        self.progress.accum.used += used;
        self.progress.accum.skipped += skipped;
        let Some(mut grads) = grads else {
            return Ok(StepStats {
                lr: self.adam.next_lr(),
                grad_norm: 0.0,
                used,
                skipped,
            });
        };
        let scale = 1.0 / used as f64;
        for g in &mut grads {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
        let (lr, grad_norm) = self.adam.step(self.params.tensors_mut(), grads)?;
        Ok(StepStats {
            lr,
            grad_norm,
            used,
            skipped,
        })
    }

    /// Applies the next batch of the current epoch. Returns the finished
    /// epoch's running sums when this batch was its last.
    pub fn next_step(&mut self, train: &[Utterance]) -> Result<(StepStats, Option<EpochAccum>)> {
        let epoch = self.progress.epoch;
        if self.batches.as_ref().is_none_or(|(e, _)| *e != epoch) {
            self.batches = Some((epoch, self.epoch_batches(train, epoch)?));
        }
        let (_, batches) = self.batches.take().expect("batches cached above");
        let result = match batches.get(self.progress.batch) {
            Some(batch) => self.train_batch(batch),
            None => Err(Error::InvalidArgument("training data has no batches".into())),
        };
        let n = batches.len();
        self.batches = Some((epoch, batches));
        let stats = result?;
        self.progress.batch += 1;
        if self.progress.batch < n {
            return Ok((stats, None));
        }
        let done = std::mem::take(&mut self.progress.accum);
        self.progress.epoch += 1;
        self.progress.batch = 0;
        Ok((stats, Some(done)))
    }

    /// Finishes the current epoch and evaluates when scheduled.
    pub fn run_epoch(&mut self, train: &[Utterance], valid: &[Utterance]) -> Result<EpochMetrics> {
        let mut last_lr;
        let accum = loop {
            let (stats, done) = self.next_step(train)?;
            last_lr = stats.lr;
            if let Some(acc) = done {
                break acc;
            }
        };
        let epoch = self.progress.epoch;
        let t = &self.config.training;
        let evaluate = t.eval_every > 0 && (epoch % t.eval_every == 0 || epoch >= t.epochs);
        let mean = |v: f64| if accum.used > 0 { v / accum.used as f64 } else { f64::NAN };
        let (train_cer, valid_cer) = if evaluate {
            let tr = self.evaluate(train)?.final_layer.rate();
            let va = if valid.is_empty() {
                None
            } else {
                Some(self.evaluate(valid)?.final_layer.rate())
            };
            (Some(tr), va)
        } else {
            (None, None)
        };
        Ok(EpochMetrics {
            epoch,
            step: self.adam.step,
            lr: last_lr,
            total: mean(accum.total),
            final_ctc: mean(accum.final_ctc),
            intermediate: accum.intermediate.iter().map(|&v| mean(v)).collect(),
            skipped: accum.skipped,
            train_cer,
            valid_cer,
        })
    }

    /// Trains until the configured epoch count (or zero training CER when
    /// that stop is enabled). `on_epoch` sees every epoch's metrics.
    pub fn fit<F>(&mut self, train: &[Utterance], valid: &[Utterance], mut on_epoch: F) -> Result<Vec<EpochMetrics>>
    where
        F: FnMut(&EpochMetrics, &Trainer) -> Result<()>,
    {
        let mut log = Vec::new();
        while self.progress.epoch < self.config.training.epochs {
            let m = self.run_epoch(train, valid)?;
            on_epoch(&m, self)?;
            let stop = self.config.training.stop_at_zero_train_cer && m.train_cer == Some(0.0);
            log.push(m);
            if stop {
                break;
            }
        }
        Ok(log)
    }

    /// Final and per-tap posteriorgrams in evaluation mode.
    pub fn posteriorgrams(&self, features: &Tensor) -> Result<(Posteriorgram, Vec<Posteriorgram>)> {
        self.model.posteriorgrams(&self.params, features)
    }

    /// Greedy CER of the final layer and of each tap. Utterances the model
    /// cannot process count as empty hypotheses.
    pub fn evaluate(&self, data: &[Utterance]) -> Result<Evaluation> {
        let k = self.model.blocks.len();
        let mut finals = Vec::with_capacity(data.len());
        let mut taps = vec![Vec::with_capacity(data.len()); k];
        for u in data {
            if u.features.rows() < MIN_SUBSAMPLE_FRAMES {
                finals.push(Vec::new());
                taps.iter_mut().for_each(|t| t.push(Vec::new()));
                continue;
            }
            let (q, tq) = self.posteriorgrams(&u.features)?;
            finals.push(greedy_decode(&q));
            for (t, q) in taps.iter_mut().zip(&tq) {
                t.push(greedy_decode(q));
            }
        }
        let refs: Vec<&[u32]> = data.iter().map(|u| &u.transcript[..]).collect();
        Ok(Evaluation {
            final_layer: aggregate_cer(&refs, &finals)?,
            taps: taps
                .iter()
                .map(|h| aggregate_cer(&refs, h))
                .collect::<Result<_>>()?,
        })
    }

    /// Hypothesis for one utterance under `decode`.
    pub fn recognize(&self, features: &Tensor, decode: &DecodeConfig, lm: Option<&dyn LanguageModel>) -> Result<Vec<u32>> {
        if features.rows() < MIN_SUBSAMPLE_FRAMES {
            return Ok(Vec::new());
        }
        let (q, _) = self.posteriorgrams(features)?;
        decode_posteriorgram(&q, decode, lm)
    }

    pub fn to_container(&self) -> Result<Container> {
        let meta = CheckpointMeta {
            config: self.config.clone(),
            vocab: self.vocab.to_text(),
            progress: self.progress.clone(),
            step: self.adam.step,
            rng: RngState {
                seed: self.rng.get_seed().to_vec(),
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos().to_string(),
            },
        };
        let meta = serde_json::to_value(&meta).map_err(|e| Error::format("checkpoint", e.to_string()))?;
        let mut c = Container::new(CHECKPOINT_KIND, meta);
        for (prefix, tensors) in [
            ("param", self.params.tensors()),
            ("adam_m", &self.adam.m[..]),
            ("adam_v", &self.adam.v[..]),
        ] {
            for (name, t) in self.params.names().iter().zip(tensors) {
                c.tensors.push((format!("{prefix}/{name}"), t.clone()));
            }
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(CHECKPOINT_KIND)?;
        let meta: CheckpointMeta =
            serde_json::from_value(c.meta.clone()).map_err(|e| Error::format("checkpoint", e.to_string()))?;
        let vocab = Vocabulary::parse(&meta.vocab)?;
        let mut t = Trainer::new(meta.config, vocab)?;
        let n = t.params.len();
        if c.tensors.len() != 3 * n {
            return Err(Error::format(
                "checkpoint",
                format!("{} tensors, expected {}", c.tensors.len(), 3 * n),
            ));
        }
        for (i, (prefix, slot)) in ["param", "adam_m", "adam_v"].iter().enumerate().flat_map(|(g, p)| {
            (0..n).map(move |i| (g * n + i, (*p, i)))
        }) {
            let (name, tensor) = &c.tensors[i];
            let expected = format!("{prefix}/{}", t.params.names()[slot]);
            if *name != expected || tensor.shape() != t.params.tensors()[slot].shape() {
                return Err(Error::format(
                    "checkpoint",
                    format!("tensor {i} is {name:?} {:?}, expected {expected:?}", tensor.shape()),
                ));
            }
            let target = match prefix {
                "param" => &mut t.params.tensors_mut()[slot],
                "adam_m" => &mut t.adam.m[slot],
                _ => &mut t.adam.v[slot],
            };
            *target = tensor.clone();
        }
        let seed: [u8; 32] = meta
            .rng
            .seed
            .try_into()
            .map_err(|_| Error::format("checkpoint", "rng seed must be 32 bytes"))?;
        let word_pos: u128 = meta
            .rng
            .word_pos
            .parse()
            .map_err(|_| Error::format("checkpoint", "bad rng word position"))?;
        t.rng = ChaCha8Rng::from_seed(seed);
        t.rng.set_stream(meta.rng.stream);
        t.rng.set_word_pos(word_pos);
        t.adam.step = meta.step;
        t.progress = meta.progress;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }

    /// Loads a checkpoint to continue training under `config`. Everything
    /// that shapes the trajectory must match; the epoch budget, evaluation
    /// cadence and decoding options may change.
    pub fn resume(path: &Path, config: &RunConfig) -> Result<Self> {
        let mut t = Self::load(path)?;
        let (a, b) = (&t.config, config);
        let same = a.seed == b.seed
            && a.model == b.model
            && a.optimizer == b.optimizer
            && a.data == b.data
            && a.training.batch_size == b.training.batch_size
            && a.training.sort_by_length == b.training.sort_by_length;
        if !same {
            return Err(Error::Config(format!(
                "{} was trained with a different configuration",
                path.display()
            )));
        }
        t.config.training = b.training.clone();
        t.config.decode = b.decode.clone();
        Ok(t)
    }
}

/// Greedy or prefix beam search decoding of one posteriorgram.
pub fn decode_posteriorgram(q: &Posteriorgram, decode: &DecodeConfig, lm: Option<&dyn LanguageModel>) -> Result<Vec<u32>> {
    match decode.mode {
        DecodeMode::Greedy => Ok(greedy_decode(q)),
        DecodeMode::Beam => Ok(prefix_beam_search(q, &decode.beam_options(), lm)?.prefix),
    }
}

/// Sum of per-utterance total losses over a batch in evaluation mode,
/// computed either on the padded tensors with masks or on each unpadded
/// utterance.
pub fn batch_loss(model: &GicModel, params: &ParamStore, batch: &Batch, padded: bool) -> Result<f64> {
    let mut sum = 0.0;
    for b in 0..batch.len() {
        let (x, mask) = if padded {
            (batch.padded(b), batch.masks[b])
        } else {
            (batch.unpadded(b), PadMask::full(batch.lengths[b]))
        };
        let mut tape = Tape::new();
        let mut s = Session::eval(&mut tape, params);
        let xv = s.tape.constant(x);
        let out = model.forward(&mut s, xv, &mask)?;
        sum += model.loss(&mut tape, &out, batch.label(b))?.total;
    }
    Ok(sum)
}

/// JSON summary of a checkpoint for diagnostics.
pub fn describe(t: &Trainer) -> serde_json::Value {
    json!({
        "epoch": t.progress.epoch,
        "batch": t.progress.batch,
        "step": t.adam.step,
        "parameters": t.params.num_elements(),
        "taps": t.model.blocks.iter().map(|b| b.layer).collect::<Vec<_>>(),
    })
}

/// Vocabulary plus training and validation utterances of a run.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub train: Vec<Utterance>,
    pub valid: Vec<Utterance>,
}

/// Generates or loads the data named by `config` and checks it against the
/// model's vocabulary and feature sizes. Without a vocabulary file the
/// character set of the training transcripts is used.
pub fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    let d = &config.data;
    let ds = if let Some(s) = &d.synth {
        let mut data = synth_generate(s)?;
        let valid = data.utterances.split_off(data.utterances.len() - d.synth_valid);
        Dataset {
            vocab: data.vocab,
            train: data.utterances,
            valid,
        }
    } else {
        let train_path = d
            .train_manifest
            .as_deref()
            .ok_or_else(|| Error::Config("no training manifest".into()))?;
        let vocab = match &d.vocab {
            Some(p) => Vocabulary::load(p)?,
            None => {
                let text = std::fs::read_to_string(train_path).map_err(|e| Error::io(train_path, e))?;
                let rows = parse_manifest(&text)
                    .map_err(|e| Error::Data(format!("{}: {e}", train_path.display())))?;
                Vocabulary::from_transcripts(TokenMode::Char, rows.iter().map(|r| r.transcript.as_str()))?
            }
        };
        let train = load_manifest(train_path, &vocab)?;
        let valid = match &d.valid_manifest {
            Some(p) => load_manifest(p, &vocab)?,
            None => Vec::new(),
        };
        Dataset { vocab, train, valid }
    };
    if ds.train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if ds.vocab.len() != config.model.vocab_size {
        return Err(Error::Config(format!(
            "model.vocab_size is {} but the data has {} symbols including the blank",
            config.model.vocab_size,
            ds.vocab.len()
        )));
    }
    if let Some(u) = ds.train.iter().chain(&ds.valid).find(|u| u.features.cols() != config.model.feat_dim) {
        return Err(Error::Config(format!(
            "model.feat_dim is {} but utterance {} has {} feature columns",
            config.model.feat_dim,
            u.id,
            u.features.cols()
        )));
    }
    Ok(ds)
}
