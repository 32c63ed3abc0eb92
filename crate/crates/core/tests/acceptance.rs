//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any hard criterion fails.

use std::time::{Duration, Instant};

use gic_core::ctc::oracle::ctc_brute_force;
use gic_core::ctc::{ctc_loss, ctc_loss_on_tape, prefix_beam_search, BeamOptions, LanguageModel, Posteriorgram};
use gic_core::data::{aggregate_cer, Utterance};
use gic_core::gradcheck::{self, DEFAULT_STEP};
use gic_core::lm::NgramModel;
use gic_core::model::{gate_fuse, intermediate_posterior, tap_layer_indices, textual_embedding, Backbone, Gate, GicConfig, GicModel};
use gic_core::nn::{
    Activation, ConformerLayer, ConvModule, FeedForward, LayerNorm, Linear, MultiHeadAttention, PadMask, ParamBuilder,
    ParamStore, Session, Subsampler, TransformerLayer,
};
use gic_core::tensor::{Tape, Tensor, Var};
use gic_core::train::experiments::{train_and_evaluate, Ablation, RunSummary};
use gic_core::train::{load_dataset, DecodeConfig, DecodeMode, EpochMetrics, RunConfig, Trainer};
use gic_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CTC_TOL: f64 = 1e-8;
const GRAD_TOL: f64 = 1e-4;
const GATE_TOL: f64 = 1e-9;
const LM_SUM_TOL: f64 = 1e-9;
const LM_CER_SLACK: f64 = 0.005;
const SEEDS: [u64; 3] = [1, 2, 3];

struct Outcome {
    pass: bool,
    detail: String,
    /// Soft criteria are reported but never fail the run.
    soft: bool,
}

fn hard(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
        soft: false,
    }
}

fn report(n: usize, name: &str, elapsed: Duration, o: &Outcome, failures: &mut usize) {
    let status = match (o.pass, o.soft) {
        (true, _) => "PASS",
        (false, true) => "SOFT-FAIL",
        (false, false) => "FAIL",
    };
    println!("criterion {n:>2} {status:<9} {name} ({:.1}s): {}", elapsed.as_secs_f64(), o.detail);
    if !o.pass && !o.soft {
        *failures += 1;
    }
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn random_posteriorgram(rng: &mut ChaCha8Rng, frames: usize, vocab: usize) -> Posteriorgram {
    let logits = Tensor::matrix(frames, vocab, (0..frames * vocab).map(|_| rng.random_range(-3.0..3.0)).collect());
    Posteriorgram::from_logits(&logits, frames).unwrap()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut bad = 0;
    for _ in 0..500 {
        let frames = rng.random_range(1..=6);
        let vocab = rng.random_range(2..=4);
        let len = rng.random_range(0..=3);
        let labels: Vec<u32> = (0..len).map(|_| rng.random_range(1..vocab as u32)).collect();
        let q = random_posteriorgram(&mut rng, frames, vocab);
        let dp = -ctc_loss(&q, &labels).unwrap();
        let bf = ctc_brute_force(&q, &labels).unwrap().ln();
        if dp == f64::NEG_INFINITY && bf == f64::NEG_INFINITY {
            continue;
        }
        let diff = (dp - bf).abs();
        if !(diff < CTC_TOL) {
            bad += 1;
        }
        worst = worst.max(diff);
    }
    hard(bad == 0, format!("500 instances, max |Δ log P| = {worst:.2e}, {bad} over {CTC_TOL:e}"))
}

/// Weighted sum of a layer output so every output element reaches the loss.
fn probe(tape: &mut Tape, y: Var) -> Result<Var> {
    let (m, n) = tape.shape(y);
    let w: Vec<f64> = (0..m * n).map(|i| ((i * 37 % 19) as f64 - 9.0) / 7.0).collect();
    let w = tape.constant(Tensor::matrix(m, n, w));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

fn layer_audit<L>(
    name: &str,
    x: Tensor,
    build: impl FnOnce(&mut ParamBuilder) -> Result<L>,
    forward: impl Fn(&L, &mut Session, Var) -> Result<Var>,
) -> (String, f64) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let layer = build(&mut ParamBuilder::new(&mut store, &mut rng)).unwrap();
    let mut inputs = vec![x];
    inputs.extend(store.tensors().iter().cloned());
    let report = gradcheck::check(
        &inputs,
        |tape, vars| {
            let mut s = Session::from_vars(tape, vars[1..].to_vec());
            let y = forward(&layer, &mut s, vars[0])?;
            probe(s.tape, y)
        },
        DEFAULT_STEP,
    )
    .unwrap();
    (name.to_string(), report.max_rel_error)
}

fn full_model_audit(backbone: Backbone, frames: usize) -> f64 {
    let cfg = GicConfig {
        backbone,
        layers: 2,
        taps: 1,
        dim: 8,
        heads: 2,
        ff_dim: 16,
        conv_kernel: 3,
        vocab_size: 5,
        feat_dim: 4,
        dropout: 0.0,
        ..GicConfig::default()
    };
    let (model, store) = GicModel::new(cfg, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut inputs = vec![random(&mut rng, frames, 4)];
    inputs.extend(store.tensors().iter().cloned());
    let report = gradcheck::check(
        &inputs,
        |tape, vars| {
            let mut s = Session::from_vars(tape, vars[1..].to_vec());
            let out = model.forward(&mut s, vars[0], &PadMask::full(frames))?;
            assert_eq!(out.valid_len, 7);
            Ok(model.loss(s.tape, &out, &[1, 2, 3])?.node)
        },
        DEFAULT_STEP,
    )
    .unwrap();
    report.max_rel_error
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (t, d) = (5, 8);
    let mask = PadMask::new(4, 5).unwrap();
    let mut errors = vec![
        layer_audit("linear", random(&mut rng, t, d), |b| Linear::new(b, "l", d, 6, true), |l, s, x| l.forward(s, x)),
        layer_audit("layer_norm", random(&mut rng, t, d), |b| LayerNorm::new(b, "n", d), |l, s, x| l.forward(s, x)),
        layer_audit(
            "feed_forward",
            random(&mut rng, t, d),
            |b| FeedForward::new(b, "f", d, 12, Activation::Swish),
            |l, s, x| l.forward(s, x),
        ),
        layer_audit(
            "attention",
            random(&mut rng, t, d),
            |b| MultiHeadAttention::new(b, "a", d, 2),
            |l, s, x| l.forward(s, x, &mask),
        ),
        layer_audit(
            "conv_module",
            random(&mut rng, t, d),
            |b| ConvModule::new(b, "c", d, 3),
            |l, s, x| l.forward(s, x, &mask),
        ),
        layer_audit(
            "transformer",
            random(&mut rng, t, d),
            |b| TransformerLayer::new(b, "t", d, 2, 16),
            |l, s, x| l.forward(s, x, &mask),
        ),
        layer_audit(
            "conformer",
            random(&mut rng, t, d),
            |b| ConformerLayer::new(b, "c", d, 2, 16, 3),
            |l, s, x| l.forward(s, x, &mask),
        ),
        layer_audit(
            "subsampler",
            random(&mut rng, 13, 3),
            |b| Subsampler::new(b, "s", 3, d),
            |l, s, x| l.forward(s, x, &PadMask::new(11, 13)?),
        ),
        layer_audit(
            "intermediate_posterior",
            random(&mut rng, t, d),
            |b| Ok((LayerNorm::new(b, "n", d)?, Linear::new(b, "p", d, 5, true)?)),
            |(n, p), s, x| intermediate_posterior(s, x, n, p),
        ),
        layer_audit(
            "gate",
            random(&mut rng, t, 2 * d),
            |b| Gate::new(b, "g", d),
            |g, s, x| {
                let h = s.tape.slice_cols(x, 0, d)?;
                let e = s.tape.slice_cols(x, d, 2 * d)?;
                gate_fuse(s, h, e, g)
            },
        ),
    ];
    let q = random_posteriorgram(&mut rng, t, 5);
    let emb = random(&mut rng, 5, d);
    let report = gradcheck::check(
        &[q.probs().clone(), emb],
        |tape, v| {
            let e = textual_embedding(tape, v[0], v[1])?;
            probe(tape, e)
        },
        DEFAULT_STEP,
    )
    .unwrap();
    errors.push(("textual_embedding".into(), report.max_rel_error));
    let logits = random(&mut rng, 6, 4);
    let report = gradcheck::check(&[logits], |tape, v| ctc_loss_on_tape(tape, v[0], 6, &[1, 3, 3]), DEFAULT_STEP).unwrap();
    errors.push(("ctc_loss".into(), report.max_rel_error));
    // 28 input frames give 7 encoder frames
    errors.push(("gic_model_transformer".into(), full_model_audit(Backbone::Transformer, 28)));
    errors.push(("gic_model_conformer".into(), full_model_audit(Backbone::Conformer, 28)));
    let (worst_name, worst) = errors
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .unwrap();
    let failed: Vec<&str> = errors.iter().filter(|e| !(e.1 < GRAD_TOL)).map(|e| e.0.as_str()).collect();
    hard(
        failed.is_empty(),
        format!(
            "{} audits, worst relative error {worst:.2e} ({worst_name}){}",
            errors.len(),
            if failed.is_empty() { String::new() } else { format!(", failing: {}", failed.join(" ")) }
        ),
    )
}

fn criterion_3() -> Outcome {
    let taps = tap_layer_indices(18, 5).unwrap();
    hard(taps == [3, 6, 9, 12, 15], format!("tap_layer_indices(18, 5) = {taps:?}"))
}

fn criterion_4() -> Outcome {
    let mut cfg = RunConfig::desk_preset();
    cfg.training.epochs = 300;
    cfg.training.stop_at_zero_train_cer = true;
    let start = Instant::now();
    let (_, s) = train_and_evaluate(&cfg).unwrap();
    let elapsed = start.elapsed();
    let first = &s.metrics[0];
    let last = s.metrics.last().unwrap();
    let mut curves = vec![("final", first.final_ctc, last.final_ctc)];
    for (i, (a, b)) in first.intermediate.iter().zip(&last.intermediate).enumerate() {
        curves.push((if i == 0 { "inter1" } else { "inter2" }, *a, *b));
    }
    let decreasing = curves.len() == cfg.model.taps + 1 && curves.iter().all(|c| c.2 < c.1);
    let curve_text: Vec<String> = curves.iter().map(|c| format!("{} {:.3}->{:.3}", c.0, c.1, c.2)).collect();
    let pass = s.train_cer == 0.0 && s.metrics.len() <= 300 && decreasing && elapsed < Duration::from_secs(300);
    hard(
        pass,
        format!(
            "train CER {:.4} after {} epochs; {}",
            s.train_cer,
            s.metrics.len(),
            curve_text.join(", ")
        ),
    )
}

/// Desk preset scaled to 256 training and 64 held-out utterances.
fn ablation_config() -> RunConfig {
    let mut cfg = RunConfig::desk_preset();
    cfg.data.synth.as_mut().unwrap().n_utts = 320;
    cfg.data.synth_valid = 64;
    cfg.training.epochs = 30;
    cfg.training.eval_every = 0;
    cfg
}

struct AblationRun {
    variant: Ablation,
    summaries: Vec<RunSummary>,
    trainers: Vec<Trainer>,
}

fn run_ablation() -> Vec<AblationRun> {
    let template = ablation_config();
    [Ablation::Gic, Ablation::IntermediateCtc, Ablation::PlainCtc]
        .into_iter()
        .map(|variant| {
            let mut summaries = Vec::new();
            let mut trainers = Vec::new();
            for seed in SEEDS {
                let mut cfg = variant.apply(&template);
                cfg.seed = seed;
                let (t, s) = train_and_evaluate(&cfg).unwrap();
                summaries.push(s);
                if variant == Ablation::Gic {
                    trainers.push(t);
                }
            }
            AblationRun {
                variant,
                summaries,
                trainers,
            }
        })
        .collect()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_5(runs: &[AblationRun], elapsed: Duration) -> Outcome {
    let means: Vec<f64> = runs.iter().map(|r| mean(r.summaries.iter().map(|s| s.valid_cer))).collect();
    println!("  variant           held-out CER (mean over seeds {SEEDS:?})");
    for (r, m) in runs.iter().zip(&means) {
        let per: Vec<String> = r.summaries.iter().map(|s| format!("{:.4}", s.valid_cer)).collect();
        println!("  {:<17} {m:.4}  [{}]", r.variant.label(), per.join(", "));
    }
    let ordered = means[0] <= means[1] && means[1] <= means[2];
    hard(
        ordered && elapsed < Duration::from_secs(1800),
        format!("gic {:.4} <= intermediate-ctc {:.4} <= plain-ctc {:.4}", means[0], means[1], means[2]),
    )
}

fn criterion_6(gic: &AblationRun) -> Outcome {
    let taps: Vec<usize> = gic.summaries[0].tap_cers.iter().map(|t| t.0).collect();
    let mut curve: Vec<f64> = (0..taps.len())
        .map(|i| mean(gic.summaries.iter().map(|s| s.tap_cers[i].1)))
        .collect();
    curve.push(mean(gic.summaries.iter().map(|s| s.valid_cer)));
    let monotone = curve.windows(2).all(|w| w[1] <= w[0]);
    let text: Vec<String> = taps
        .iter()
        .map(|l| format!("layer {l}"))
        .chain(std::iter::once("final".to_string()))
        .zip(&curve)
        .map(|(n, c)| format!("{n} {c:.4}"))
        .collect();
    hard(monotone, text.join(" >= "))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let lm = NgramModel::train(&[vec![1, 2], vec![2, 1, 2]], 2, &[0.6, 0.4], 3).unwrap();
    let mut wrong = 0;
    let mut differs = 0;
    for _ in 0..100 {
        let frames = rng.random_range(1..=5);
        let vocab = rng.random_range(2..=3);
        let q = random_posteriorgram(&mut rng, frames, vocab);
        let mut best = (Vec::new(), f64::NEG_INFINITY);
        let mut candidates: Vec<Vec<u32>> = vec![Vec::new()];
        for _ in 0..frames {
            let next: Vec<Vec<u32>> = candidates
                .iter()
                .filter(|c| c.len() == candidates.last().unwrap().len())
                .flat_map(|c| {
                    (1..vocab as u32).map(move |k| {
                        let mut n = c.clone();
                        n.push(k);
                        n
                    })
                })
                .collect();
            candidates.extend(next);
        }
        for y in candidates {
            let p = ctc_brute_force(&q, &y).unwrap();
            if p > best.1 {
                best = (y, p);
            }
        }
        let opts = BeamOptions {
            beam: 32,
            lm_weight: 0.0,
            length_bonus: 0.0,
        };
        if prefix_beam_search(&q, &opts, None).unwrap().prefix != best.0 {
            wrong += 1;
        }
        if vocab == 3 {
            for beam in 1..=6 {
                let opts = BeamOptions { beam, ..opts };
                let a = prefix_beam_search(&q, &opts, None).unwrap();
                let b = prefix_beam_search(&q, &opts, Some(&lm as &dyn LanguageModel)).unwrap();
                if a != b {
                    differs += 1;
                }
            }
        }
    }
    hard(
        wrong == 0 && differs == 0,
        format!("{wrong}/100 beam-32 results differ from the brute-force argmax; {differs} LM-loaded runs differ"),
    )
}

fn criterion_8(gic: &AblationRun) -> (Outcome, Outcome) {
    let cfg = ablation_config();
    let data = load_dataset(&cfg).unwrap();
    let corpus: Vec<Vec<u32>> = data.train.iter().map(|u| u.transcript.clone()).collect();
    let lm = NgramModel::train(&corpus, 4, &NgramModel::default_weights(4), data.vocab.len()).unwrap();
    let v = data.vocab.len() as u32;
    let mut worst: f64 = 0.0;
    let mut contexts: Vec<Vec<u32>> = vec![Vec::new()];
    for _ in 0..3 {
        let longer: Vec<Vec<u32>> = contexts
            .iter()
            .filter(|c| c.len() == contexts.last().unwrap().len())
            .flat_map(|c| {
                (0..v).map(move |k| {
                    let mut n = c.clone();
                    n.push(k);
                    n
                })
            })
            .collect();
        contexts.extend(longer);
    }
    for ctx in &contexts {
        let sum: f64 = (0..v).map(|k| lm.prob(k, ctx).unwrap()).sum();
        worst = worst.max((sum - 1.0).abs());
    }
    let normalized = hard(
        worst < LM_SUM_TOL,
        format!("{} contexts, max |sum - 1| = {worst:.2e}", contexts.len()),
    );

    let cer = |t: &Trainer, utts: &[Utterance], d: &DecodeConfig, lm: Option<&dyn LanguageModel>| {
        let hyps: Vec<Vec<u32>> = utts.iter().map(|u| t.recognize(&u.features, d, lm).unwrap()).collect();
        let refs: Vec<&[u32]> = utts.iter().map(|u| &u.transcript[..]).collect();
        aggregate_cer(&refs, &hyps).unwrap().rate()
    };
    let fused = DecodeConfig {
        mode: DecodeMode::Beam,
        ..DecodeConfig::default()
    };
    let plain = DecodeConfig {
        lm_weight: 0.0,
        ..fused.clone()
    };
    let without = mean(gic.trainers.iter().map(|t| cer(t, &data.valid, &plain, None)));
    let with = mean(gic.trainers.iter().map(|t| cer(t, &data.valid, &fused, Some(&lm))));
    let fusion = Outcome {
        pass: with <= without + LM_CER_SLACK,
        detail: format!(
            "held-out CER {:.4} with LM (weight {}) vs {:.4} without",
            with, fused.lm_weight, without
        ),
        soft: true,
    };
    (normalized, fusion)
}

fn criterion_9() -> Outcome {
    let base = GicConfig {
        layers: 4,
        taps: 2,
        dim: 8,
        heads: 2,
        ff_dim: 16,
        vocab_size: 5,
        feat_dim: 3,
        ..GicConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let x = random(&mut rng, 24, 3);
    let run = |model: &GicModel, store: &ParamStore| {
        let mut tape = Tape::new();
        let mut s = Session::eval(&mut tape, store);
        let xv = s.tape.constant(x.clone());
        let out = model.forward(&mut s, xv, &PadMask::full(24)).unwrap();
        let f = tape.value(out.final_logits).clone();
        let fused = out.fused.iter().map(|v| v.map(|v| tape.value(v).clone())).collect::<Vec<_>>();
        let soft = out.soft_labels.iter().map(|v| v.map(|v| tape.value(v).clone())).collect::<Vec<_>>();
        (f, fused, soft)
    };

    let (gic, mut gs) = GicModel::new(base.clone(), 11).unwrap();
    for b in &gic.blocks {
        let bias = b.gate.as_ref().unwrap().bias;
        gs.get_mut(bias).data_mut().iter_mut().for_each(|v| *v = 50.0);
    }
    let (plain, mut ps) = GicModel::new(GicConfig { enable_gic: false, ..base.clone() }, 11).unwrap();
    ps.copy_shared_from(&gs);
    let saturated = run(&gic, &gs).0.max_abs_diff(&run(&plain, &ps).0);

    // zero gate: the first fused state against the tap layer's own output
    let (model, mut store) = GicModel::new(base, 12).unwrap();
    for b in &model.blocks {
        let g = b.gate.as_ref().unwrap();
        for id in [g.w_h.weight, g.w_e.weight, g.bias] {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let (_, fused, soft) = run(&model, &store);
    let mut tape = Tape::new();
    let mut s = Session::eval(&mut tape, &store);
    let xv = s.tape.constant(x.clone());
    let h = model.subsample.forward(&mut s, xv, &PadMask::full(24)).unwrap();
    let h = gic_core::nn::add_positional_encoding(s.tape, h).unwrap();
    let mut h = h;
    for layer in &model.layers[..model.blocks[0].layer] {
        h = layer.forward(&mut s, h, &PadMask::full(6)).unwrap();
    }
    let h = tape.value(h).clone();
    let q = soft[0].clone().unwrap();
    let emb = store.get(model.embedding.unwrap());
    let mut mid_err: f64 = 0.0;
    let f = fused[0].clone().unwrap();
    for t in 0..h.rows() {
        for j in 0..h.cols() {
            let e: f64 = (0..q.cols()).map(|k| q.get(t, k) * emb.get(k, j)).sum();
            mid_err = mid_err.max((f.get(t, j) - (h.get(t, j) + e) / 2.0).abs());
        }
    }
    hard(
        saturated < GATE_TOL && mid_err < GATE_TOL,
        format!("bias +50 vs no GIC: {saturated:.2e}; zero gate vs (h+e)/2: {mid_err:.2e}"),
    )
}

fn criterion_10() -> Outcome {
    let mut cfg = RunConfig::desk_preset();
    cfg.training.epochs = 3;
    let data = load_dataset(&cfg).unwrap();
    let run = || {
        let mut t = Trainer::new(cfg.clone(), data.vocab.clone()).unwrap();
        let log = t.fit(&data.train, &data.valid, |_, _| Ok(())).unwrap();
        let rows: Vec<String> = log.iter().map(EpochMetrics::tsv_row).collect();
        (rows, t.to_container().unwrap().to_bytes().unwrap())
    };
    let (a, ca) = run();
    let (b, cb) = run();
    let same_logs = a == b && ca == cb;

    let mut reference = Trainer::new(cfg.clone(), data.vocab.clone()).unwrap();
    let mut states = Vec::new();
    for _ in 0..8 {
        reference.next_step(&data.train).unwrap();
        states.push(reference.params.tensors().to_vec());
    }
    let mut first = Trainer::new(cfg.clone(), data.vocab.clone()).unwrap();
    for _ in 0..3 {
        first.next_step(&data.train).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("resume.gick");
    first.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let mut resumed = Trainer::resume(&path, &cfg).unwrap();
    let reload_identical = resumed.to_container().unwrap().to_bytes().unwrap() == bytes;
    let mut matching = 0;
    for expected in &states[3..] {
        resumed.next_step(&data.train).unwrap();
        if resumed.params.tensors() == &expected[..] {
            matching += 1;
        }
    }
    hard(
        same_logs && reload_identical && matching == 5,
        format!(
            "identical logs and checkpoints: {same_logs}; reload byte-identical: {reload_identical}; {matching}/5 resumed steps bit-identical"
        ),
    )
}

fn main() {
    let mut failures = 0;
    let timed = |f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let o = f();
        (o, start.elapsed())
    };
    let (o, t) = timed(&criterion_1);
    report(1, "CTC oracle equivalence", t, &o, &mut failures);
    let (o, t) = timed(&criterion_2);
    report(2, "gradient audit", t, &o, &mut failures);
    let (o, t) = timed(&criterion_3);
    report(3, "tap placement", t, &o, &mut failures);
    let (o, t) = timed(&criterion_4);
    report(4, "desk preset overfit", t, &o, &mut failures);

    let start = Instant::now();
    let runs = run_ablation();
    let ablation_time = start.elapsed();
    let o = criterion_5(&runs, ablation_time);
    report(5, "ablation direction", ablation_time, &o, &mut failures);
    let (o, t) = timed(&|| criterion_6(&runs[0]));
    report(6, "per-tap probe", t, &o, &mut failures);

    let (o, t) = timed(&criterion_7);
    report(7, "beam search optimality", t, &o, &mut failures);
    let start = Instant::now();
    let (norm, fusion) = criterion_8(&runs[0]);
    let t = start.elapsed();
    report(8, "LM normalization", t, &norm, &mut failures);
    report(8, "LM shallow fusion", t, &fusion, &mut failures);
    let (o, t) = timed(&criterion_9);
    report(9, "gate degeneracies", t, &o, &mut failures);
    let (o, t) = timed(&criterion_10);
    report(10, "determinism and checkpoint resume", t, &o, &mut failures);

    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
