use super::experiments::{Ablation, SweepAxis};
use super::*;
use crate::data::{synth_generate, SynthConfig, Utterance};
use crate::model::GicConfig;
use crate::tensor::Tensor;

fn tiny() -> RunConfig {
    RunConfig {
        seed: 3,
        model: GicConfig {
            layers: 2,
            taps: 1,
            dim: 8,
            heads: 2,
            ff_dim: 16,
            vocab_size: 4,
            feat_dim: 5,
            ..GicConfig::default()
        },
        optimizer: OptimizerConfig {
            peak_lr: 5e-3,
            warmup_steps: 4,
            ..OptimizerConfig::default()
        },
        data: DataConfig {
            synth: Some(SynthConfig {
                seed: 2,
                n_utts: 10,
                vocab_size: 4,
                min_len: 1,
                max_len: 3,
                frames_per_token: 6,
                feat_dim: 5,
                ..SynthConfig::default()
            }),
            synth_valid: 2,
            ..DataConfig::default()
        },
        training: TrainingConfig {
            epochs: 2,
            batch_size: 3,
            ..TrainingConfig::default()
        },
        ..RunConfig::default()
    }
}

fn setup(cfg: &RunConfig) -> (Trainer, Dataset) {
    let data = load_dataset(cfg).unwrap();
    (Trainer::new(cfg.clone(), data.vocab.clone()).unwrap(), data)
}

#[test]
fn dataset_split_and_checks() {
    let cfg = tiny();
    let data = load_dataset(&cfg).unwrap();
    assert_eq!((data.train.len(), data.valid.len()), (8, 2));
    let mut bad = cfg.clone();
    bad.model.feat_dim = 6;
    assert!(matches!(load_dataset(&bad), Err(crate::Error::Config(_))));
    bad = cfg;
    bad.model.vocab_size = 5;
    assert!(load_dataset(&bad).is_err());
}

#[test]
fn same_seed_same_logs() {
    let run = || {
        let (mut t, d) = setup(&tiny());
        let log = t.fit(&d.train, &d.valid, |_, _| Ok(())).unwrap();
        let rows: Vec<String> = log.iter().map(EpochMetrics::tsv_row).collect();
        (rows, t.to_container().unwrap().to_bytes().unwrap())
    };
    let (a, ca) = run();
    let (b, cb) = run();
    assert_eq!(a, b);
    assert_eq!(ca, cb);
    assert_eq!(a.len(), 2);
    let mut other = tiny();
    other.seed = 4;
    let (mut t, d) = setup(&other);
    let log = t.fit(&d.train, &d.valid, |_, _| Ok(())).unwrap();
    assert_ne!(log[0].tsv_row(), a[0]);
}

#[test]
fn metrics_row_layout() {
    let (mut t, d) = setup(&tiny());
    let m = t.run_epoch(&d.train, &d.valid).unwrap();
    let header = EpochMetrics::tsv_header(&[1]);
    assert_eq!(header.split('\t').count(), m.tsv_row().split('\t').count());
    assert_eq!(m.epoch, 1);
    assert_eq!(m.step, 3);
    assert_eq!(m.intermediate.len(), 1);
    assert!(m.train_cer.is_some() && m.valid_cer.is_some());
    let expect = m.total;
    let lam = t.config.model.lambda;
    let mixed = (1.0 - lam) * m.final_ctc + lam * m.intermediate[0];
    assert!((expect - mixed).abs() < 1e-9 * expect.abs().max(1.0));
}

#[test]
fn checkpoint_reload_is_byte_identical() {
    let (mut t, d) = setup(&tiny());
    t.next_step(&d.train).unwrap();
    t.next_step(&d.train).unwrap();
    let bytes = t.to_container().unwrap().to_bytes().unwrap();
    let c = crate::container::Container::from_bytes(&bytes).unwrap();
    let back = Trainer::from_container(&c).unwrap();
    assert_eq!(back.to_container().unwrap().to_bytes().unwrap(), bytes);
    assert_eq!(back.progress, t.progress);
    assert_eq!(back.step(), 2);
}

#[test]
fn resume_matches_uninterrupted_training() {
    let cfg = tiny();
    let (mut a, d) = setup(&cfg);
    let mut reference = Vec::new();
    for _ in 0..8 {
        a.next_step(&d.train).unwrap();
        reference.push(a.params.tensors().to_vec());
    }
    let (mut b, _) = setup(&cfg);
    for _ in 0..2 {
        b.next_step(&d.train).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.gick");
    b.save(&path).unwrap();
    drop(b);
    let mut later = cfg.clone();
    later.training.epochs = 9;
    let mut c = Trainer::resume(&path, &later).unwrap();
    assert_eq!(c.config.training.epochs, 9);
    // 2 steps before the save, 6 after; this crosses an epoch boundary
    for expected in &reference[2..] {
        c.next_step(&d.train).unwrap();
        assert_eq!(c.params.tensors(), &expected[..]);
    }
}

#[test]
fn resume_rejects_a_different_run() {
    let cfg = tiny();
    let (t, _) = setup(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.gick");
    t.save(&path).unwrap();
    let mut other = cfg.clone();
    other.model.lambda = 0.3;
    assert!(matches!(Trainer::resume(&path, &other), Err(crate::Error::Config(_))));
    other = cfg;
    other.seed = 99;
    assert!(Trainer::resume(&path, &other).is_err());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let (t, _) = setup(&tiny());
    let mut c = t.to_container().unwrap();
    c.tensors.pop();
    assert!(Trainer::from_container(&c).is_err());
    let mut c = t.to_container().unwrap();
    c.tensors.swap(0, 1);
    assert!(Trainer::from_container(&c).is_err());
    let mut c = t.to_container().unwrap();
    c.kind = "ngram-lm".into();
    assert!(Trainer::from_container(&c).is_err());
    let mut c = t.to_container().unwrap();
    c.meta["rng"]["word_pos"] = "minus one".into();
    assert!(Trainer::from_container(&c).is_err());
}

#[test]
fn padded_batches_score_like_single_utterances() {
    let cfg = tiny();
    let (t, d) = setup(&cfg);
    for batch in crate::data::make_batches(&d.train, 4, false, 0).unwrap() {
        let padded = batch_loss(&t.model, &t.params, &batch, true).unwrap();
        let single = batch_loss(&t.model, &t.params, &batch, false).unwrap();
        assert!((padded - single).abs() < 1e-9 * single.abs().max(1.0), "{padded} vs {single}");
    }
}

#[test]
fn infeasible_utterances_are_skipped_and_counted() {
    let cfg = tiny();
    let (mut t, mut d) = setup(&cfg);
    // 4 frames give one encoder frame, too few for two labels
    d.train.push(Utterance {
        id: "short".into(),
        features: Tensor::filled(4, 5, 0.1),
        transcript: vec![1, 2],
    });
    d.train.push(Utterance {
        id: "tiny".into(),
        features: Tensor::filled(2, 5, 0.1),
        transcript: vec![1],
    });
    assert!(!is_feasible(&d.train[8]) && !is_feasible(&d.train[9]));
    assert!(is_feasible(&d.train[0]));
    let m = t.run_epoch(&d.train, &d.valid).unwrap();
    assert_eq!(m.skipped, 2);
    assert!(m.total.is_finite());
}

#[test]
fn batch_of_only_infeasible_utterances_leaves_parameters() {
    let mut cfg = tiny();
    cfg.training.batch_size = 1;
    let (mut t, _) = setup(&cfg);
    let before = t.params.tensors().to_vec();
    let data = vec![Utterance {
        id: "x".into(),
        features: Tensor::filled(4, 5, 0.0),
        transcript: vec![1, 1],
    }];
    let (stats, done) = t.next_step(&data).unwrap();
    assert_eq!((stats.used, stats.skipped), (0, 1));
    assert!(done.is_some());
    assert_eq!(t.params.tensors(), &before[..]);
    assert_eq!(t.step(), 0);
}

#[test]
fn nan_features_abort_with_numeric_error() {
    let (mut t, _) = setup(&tiny());
    let data = vec![Utterance {
        id: "nan".into(),
        features: Tensor::filled(12, 5, f64::NAN),
        transcript: vec![1],
    }];
    assert!(matches!(t.next_step(&data), Err(crate::Error::Numeric(_))));
}

#[test]
fn evaluate_reports_every_tap() {
    let (t, d) = setup(&tiny());
    let e = t.evaluate(&d.valid).unwrap();
    assert_eq!(e.taps.len(), 1);
    let refs: usize = d.valid.iter().map(|u| u.transcript.len()).sum();
    assert_eq!(e.final_layer.ref_tokens, refs);
    let beam = DecodeConfig {
        mode: DecodeMode::Beam,
        beam: 4,
        ..DecodeConfig::default()
    };
    let hyp = t.recognize(&d.valid[0].features, &beam, None).unwrap();
    assert!(hyp.iter().all(|&k| k > 0 && k < 4));
}

#[test]
fn ablation_variants_set_the_flags() {
    let base = tiny();
    let gic = Ablation::Gic.apply(&base).model;
    assert!(gic.enable_gic && gic.enable_intermediate_loss);
    let sum = Ablation::SumFusion.apply(&base).model;
    assert_eq!(sum.fusion, crate::model::Fusion::Sum);
    let inter = Ablation::IntermediateCtc.apply(&base).model;
    assert!(!inter.enable_gic && inter.enable_intermediate_loss);
    let plain = Ablation::PlainCtc.apply(&base).model;
    assert!(!plain.enable_gic && !plain.enable_intermediate_loss);
    for a in Ablation::ALL {
        assert_eq!(a.label().parse::<Ablation>().unwrap(), a);
    }
}

#[test]
fn sweep_points_validate_and_fail_independently() {
    let mut base = tiny();
    base.training.epochs = 1;
    base.model.layers = 3;
    assert!(SweepAxis::Taps.apply(&base, 2.0).is_ok());
    assert!(SweepAxis::Taps.apply(&base, 3.0).is_err());
    assert!(SweepAxis::Taps.apply(&base, 1.5).is_err());
    assert!(SweepAxis::Lambda.apply(&base, 1.5).is_err());
    assert_eq!("lambda".parse::<SweepAxis>().unwrap(), SweepAxis::Lambda);
    assert_eq!("K".parse::<SweepAxis>().unwrap(), SweepAxis::Taps);
    let points = experiments::sweep(&base, SweepAxis::Taps, &[1.0, 3.0]);
    assert_eq!(points.len(), 2);
    assert!(points[0].outcome.is_ok());
    assert!(points[1].outcome.is_err());
    let table = experiments::format_sweep_table(SweepAxis::Taps, &points);
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn tiny_run_fits_its_training_data() {
    // noiseless two-symbol data learned in a few dozen epochs
    let mut cfg = tiny();
    cfg.data.synth = Some(SynthConfig {
        seed: 5,
        n_utts: 6,
        vocab_size: 4,
        min_len: 1,
        max_len: 2,
        frames_per_token: 8,
        feat_dim: 5,
        noise_std: 0.0,
    });
    cfg.data.synth_valid = 0;
    cfg.optimizer.peak_lr = 1e-2;
    cfg.training.epochs = 150;
    cfg.training.batch_size = 2;
    cfg.training.stop_at_zero_train_cer = true;
    cfg.model.dropout = 0.0;
    let (_, s) = experiments::train_and_evaluate(&cfg).unwrap();
    assert_eq!(s.train_cer, 0.0, "{:?}", s.metrics.last());
    let first = &s.metrics[0];
    let last = s.metrics.last().unwrap();
    assert!(last.total < first.total);
}

#[test]
fn synth_seed_drives_the_data() {
    let a = synth_generate(tiny().data.synth.as_ref().unwrap()).unwrap();
    let data = load_dataset(&tiny()).unwrap();
    assert_eq!(a.utterances[..8], data.train[..]);
}
