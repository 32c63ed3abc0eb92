use std::collections::{HashMap, HashSet};
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use gic_core::ctc::edit_distance;
use gic_core::data::{
    load_manifest_features, parse_hypotheses, parse_manifest, synth_generate, write_dataset, format_hypotheses,
    ErrorRate, SynthConfig, TokenMode, Vocabulary,
};
use gic_core::lm::NgramModel;
use gic_core::model::{Backbone, Fusion};
use gic_core::nn::MIN_SUBSAMPLE_FRAMES;
use gic_core::train::experiments::{self, Ablation, SweepAxis};
use gic_core::train::{decode_posteriorgram, load_dataset, DecodeMode, EpochMetrics, RunConfig, Trainer};
use gic_core::{Error, Result};

use crate::{
    BackboneArg, DecodeArgs, EvaluateArgs, FusionArg, LmTrainArgs, ModeArg, RunOverrides, SweepArgs, SynthArgs,
    TrainArgs, UnitArg,
};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_USAGE,
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io(path))
}

/// `path` with `suffix` appended to its file name.
fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Loads a run config (or the desk preset), resolves its relative data
/// paths against the config's directory and applies `o`.
fn run_config(path: Option<&Path>, o: &RunOverrides) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let mut cfg = RunConfig::load(p)?;
            let base = p.parent().unwrap_or(Path::new(""));
            let d = &mut cfg.data;
            for slot in [&mut d.train_manifest, &mut d.valid_manifest, &mut d.vocab, &mut cfg.decode.lm] {
                if let Some(f) = slot.as_mut() {
                    if f.is_relative() {
                        *f = base.join(&*f);
                    }
                }
            }
            cfg
        }
        None => RunConfig::desk_preset(),
    };
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.epochs {
        cfg.training.epochs = v;
    }
    if let Some(v) = o.batch_size {
        cfg.training.batch_size = v;
    }
    let m = &mut cfg.model;
    if let Some(v) = o.backbone {
        m.backbone = match v {
            BackboneArg::Transformer => Backbone::Transformer,
            BackboneArg::Conformer => Backbone::Conformer,
        };
    }
    if let Some(v) = o.layers {
        m.layers = v;
    }
    if let Some(v) = o.taps {
        m.taps = v;
    }
    if let Some(v) = o.lambda {
        m.lambda = v;
    }
    if let Some(v) = o.fusion {
        m.fusion = match v {
            FusionArg::Gate => Fusion::Gate,
            FusionArg::Sum => Fusion::Sum,
        };
    }
    if o.no_gic {
        m.enable_gic = false;
    }
    if o.no_intermediate_loss {
        m.enable_intermediate_loss = false;
    }
    if let Some(v) = o.peak_lr {
        cfg.optimizer.peak_lr = v;
    }
    if let Some(v) = o.warmup_steps {
        cfg.optimizer.warmup_steps = v;
    }
    if o.train_manifest.is_some() {
        cfg.data.train_manifest = o.train_manifest.clone();
        cfg.data.synth = None;
    }
    if o.valid_manifest.is_some() {
        cfg.data.valid_manifest = o.valid_manifest.clone();
    }
    if o.vocab.is_some() {
        cfg.data.vocab = o.vocab.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn synth_data(a: SynthArgs) -> Result<()> {
    let (mut s, mut valid) = match &a.config {
        Some(p) => {
            let cfg = RunConfig::load(p)?;
            let s = cfg
                .data
                .synth
                .ok_or_else(|| Error::Config(format!("{} has no [data.synth] section", p.display())))?;
            (s, cfg.data.synth_valid)
        }
        None => (SynthConfig::default(), 0),
    };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { s.$f = v; })* };
    }
    set!(seed, n_utts, vocab_size, min_len, max_len, frames_per_token, noise_std, feat_dim);
    if let Some(v) = a.valid {
        valid = v;
    }
    if valid >= s.n_utts {
        return Err(Error::Config("--valid must leave at least one training utterance".into()));
    }
    let mut data = synth_generate(&s)?;
    let held_out = data.utterances.split_off(data.utterances.len() - valid);
    std::fs::create_dir_all(&a.out).map_err(io(&a.out))?;
    let train = write_dataset(&a.out, "train", &data.utterances, &data.vocab)?;
    println!("{}\t{} utterances", train.display(), data.utterances.len());
    if !held_out.is_empty() {
        let p = write_dataset(&a.out, "valid", &held_out, &data.vocab)?;
        println!("{}\t{} utterances", p.display(), held_out.len());
    }
    let vocab_path = a.out.join("vocab.txt");
    data.vocab.save(&vocab_path)?;
    println!("{}\t{} symbols", vocab_path.display(), data.vocab.len());
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let cfg = run_config(a.config.as_deref(), &a.overrides)?;
    let data = load_dataset(&cfg)?;
    let metrics_path = a.metrics.clone().unwrap_or_else(|| with_suffix(&a.out, ".metrics.tsv"));
    let mut trainer = if a.resume {
        let t = Trainer::resume(&a.out, &cfg)?;
        if t.vocab != data.vocab {
            return Err(Error::Data(format!("{} was trained with a different vocabulary", a.out.display())));
        }
        log::info!("resuming at epoch {} (step {})", t.progress.epoch + 1, t.step());
        t
    } else {
        Trainer::new(cfg, data.vocab.clone())?
    };
    let taps: Vec<usize> = trainer.model.blocks.iter().map(|b| b.layer).collect();
    let mut log_file = if a.resume && metrics_path.exists() {
        OpenOptions::new().append(true).open(&metrics_path).map_err(io(&metrics_path))?
    } else {
        let mut f = std::fs::File::create(&metrics_path).map_err(io(&metrics_path))?;
        writeln!(f, "{}", EpochMetrics::tsv_header(&taps)).map_err(io(&metrics_path))?;
        f
    };
    log::info!(
        "training on {} utterances ({} held out), {} parameters, taps at {taps:?}",
        data.train.len(),
        data.valid.len(),
        trainer.params.num_elements()
    );
    let out = a.out.clone();
    let log = trainer.fit(&data.train, &data.valid, |m, t| {
        t.save(&out)?;
        writeln!(log_file, "{}", m.tsv_row()).map_err(io(&metrics_path))?;
        if m.skipped > 0 {
            log::warn!("epoch {}: skipped {} infeasible utterances", m.epoch, m.skipped);
        }
        log::info!(
            "epoch {} step {} loss {:.4} train CER {} valid CER {}",
            m.epoch,
            m.step,
            m.total,
            m.train_cer.map_or("-".into(), |c| format!("{:.2}%", 100.0 * c)),
            m.valid_cer.map_or("-".into(), |c| format!("{:.2}%", 100.0 * c))
        );
        Ok(())
    })?;
    if log.is_empty() {
        trainer.save(&a.out)?;
    }
    println!("{}", a.out.display());
    Ok(())
}

pub fn decode(a: DecodeArgs) -> Result<()> {
    let t = Trainer::load(&a.checkpoint)?;
    let mut d = t.config.decode.clone();
    if let Some(m) = a.mode {
        d.mode = match m {
            ModeArg::Greedy => DecodeMode::Greedy,
            ModeArg::Beam => DecodeMode::Beam,
        };
    }
    if let Some(v) = a.beam {
        d.beam = v;
    }
    if let Some(v) = a.lm_weight {
        d.lm_weight = v;
    }
    if let Some(v) = a.length_bonus {
        d.length_bonus = v;
    }
    if a.lm.is_some() {
        d.lm = a.lm.clone();
    }
    if d.beam == 0 {
        return Err(Error::InvalidArgument("--beam must be at least 1".into()));
    }
    let lm = match &d.lm {
        Some(p) => {
            let lm = NgramModel::load(p)?;
            if lm.vocab_size() != t.vocab.len() {
                return Err(Error::Data(format!(
                    "{} covers {} symbols but the checkpoint vocabulary has {}",
                    p.display(),
                    lm.vocab_size(),
                    t.vocab.len()
                )));
            }
            if d.mode == DecodeMode::Greedy {
                log::warn!("greedy decoding ignores the language model");
            }
            Some(lm)
        }
        None => None,
    };
    let utts = load_manifest_features(&a.manifest)?;
    let taps: Vec<usize> = t.model.blocks.iter().map(|b| b.layer).collect();
    let mut finals = Vec::with_capacity(utts.len());
    let mut probes = vec![Vec::with_capacity(utts.len()); taps.len()];
    for (row, x) in &utts {
        if x.cols() != t.model.config.feat_dim {
            return Err(Error::Data(format!(
                "{}:{} ({}): {} feature columns, the model expects {}",
                a.manifest.display(),
                row.line,
                row.id,
                x.cols(),
                t.model.config.feat_dim
            )));
        }
        if x.rows() < MIN_SUBSAMPLE_FRAMES {
            log::warn!("{}: {} frames is too short to decode", row.id, x.rows());
            finals.push(String::new());
            probes.iter_mut().for_each(|p| p.push(String::new()));
            continue;
        }
        let (q, tq) = t.posteriorgrams(x)?;
        let lm_ref = lm.as_ref().map(|m| m as &dyn gic_core::ctc::LanguageModel);
        finals.push(t.vocab.decode(&decode_posteriorgram(&q, &d, lm_ref)?)?);
        if a.probe_taps {
            for (p, q) in probes.iter_mut().zip(&tq) {
                p.push(t.vocab.decode(&gic_core::ctc::greedy_decode(q))?);
            }
        }
    }
    let ids: Vec<&str> = utts.iter().map(|(r, _)| r.id.as_str()).collect();
    let rows = |hyps: &[String]| format_hypotheses(ids.iter().copied().zip(hyps.iter().map(String::as_str)));
    write_text(&a.out, &rows(&finals))?;
    println!("{}", a.out.display());
    if a.probe_taps {
        let stem = a.out.with_extension("");
        for (l, hyps) in taps.iter().zip(&probes) {
            let p = with_suffix(&stem, &format!(".tap{l}.tsv"));
            write_text(&p, &rows(hyps))?;
            println!("{}", p.display());
        }
    }
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let mode = match a.unit {
        UnitArg::Char => TokenMode::Char,
        UnitArg::Word => TokenMode::Word,
    };
    let refs = parse_manifest(&read_text(&a.reference)?)
        .map_err(|e| Error::Data(format!("{}: {e}", a.reference.display())))?;
    let hyps: HashMap<String, String> = parse_hypotheses(&read_text(&a.hyp)?)
        .map_err(|e| Error::Data(format!("{}: {e}", a.hyp.display())))?
        .into_iter()
        .collect();
    let missing: Vec<&str> = refs.iter().map(|r| r.id.as_str()).filter(|id| !hyps.contains_key(*id)).collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "{} reference ids have no hypothesis, e.g. {}",
            missing.len(),
            missing[..missing.len().min(5)].join(", ")
        )));
    }
    let known: HashSet<&str> = refs.iter().map(|r| r.id.as_str()).collect();
    if let Some(extra) = hyps.keys().find(|id| !known.contains(id.as_str())) {
        return Err(Error::Data(format!("hypothesis id {extra:?} is not in the reference manifest")));
    }
    let mut total = ErrorRate::default();
    let mut per = Vec::with_capacity(refs.len());
    for r in &refs {
        let h = &hyps[&r.id];
        let counts = edit_distance(&mode.tokenize(&r.transcript), &mode.tokenize(h));
        let n = mode.tokenize(&r.transcript).len();
        total.counts += counts;
        total.ref_tokens += n;
        per.push((r, h, counts, n));
    }
    let unit = match a.unit {
        UnitArg::Char => "CER",
        UnitArg::Word => "WER",
    };
    let c = total.counts;
    println!(
        "{unit} {:.2}% ({} errors / {} reference tokens; S={} I={} D={}) over {} utterances",
        total.percent(),
        c.total(),
        total.ref_tokens,
        c.substitutions,
        c.insertions,
        c.deletions,
        refs.len()
    );
    per.sort_by(|x, y| {
        y.2.rate(y.3)
            .total_cmp(&x.2.rate(x.3))
            .then(y.2.total().cmp(&x.2.total()))
            .then(x.0.id.cmp(&y.0.id))
    });
    let worst: Vec<_> = per.iter().filter(|p| p.2.total() > 0).take(a.worst).collect();
    if !worst.is_empty() {
        println!("id\terrors\tref_tokens\trate\treference\thypothesis");
        for (r, h, counts, n) in worst {
            println!(
                "{}\t{}\t{}\t{:.2}%\t{}\t{}",
                r.id,
                counts.total(),
                n,
                100.0 * counts.rate(*n),
                r.transcript,
                h
            );
        }
    }
    Ok(())
}

fn read_transcripts(corpus: Option<&Path>, manifest: Option<&Path>) -> Result<Vec<(String, String)>> {
    match (corpus, manifest) {
        (Some(p), _) => Ok(read_text(p)?
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| (format!("{}:{}", p.display(), i + 1), l.to_string()))
            .collect()),
        (None, Some(p)) => Ok(parse_manifest(&read_text(p)?)
            .map_err(|e| Error::Data(format!("{}: {e}", p.display())))?
            .into_iter()
            .map(|r| (format!("{}:{} ({})", p.display(), r.line, r.id), r.transcript))
            .collect()),
        (None, None) => Err(Error::InvalidArgument("give --corpus or --manifest".into())),
    }
}

fn encode_all(vocab: &Vocabulary, lines: &[(String, String)]) -> Result<Vec<Vec<u32>>> {
    lines
        .iter()
        .map(|(at, text)| vocab.encode(text).map_err(|e| Error::Data(format!("{at}: {e}"))))
        .collect()
}

pub fn lm_train(a: LmTrainArgs) -> Result<()> {
    let vocab = match (&a.vocab, &a.checkpoint) {
        (Some(p), _) => Vocabulary::load(p)?,
        (None, Some(c)) => Trainer::load(c)?.vocab,
        (None, None) => return Err(Error::InvalidArgument("give --vocab or --checkpoint".into())),
    };
    let corpus = encode_all(&vocab, &read_transcripts(a.corpus.as_deref(), a.manifest.as_deref())?)?;
    let weights = a.weights.clone().unwrap_or_else(|| NgramModel::default_weights(a.order));
    let lm = NgramModel::train(&corpus, a.order, &weights, vocab.len())?;
    lm.save(&a.out)?;
    println!(
        "{}\torder {}\t{} sentences\ttraining perplexity {:.4}",
        a.out.display(),
        lm.order(),
        corpus.len(),
        lm.perplexity(&corpus)?
    );
    if let Some(p) = &a.eval {
        let held = encode_all(&vocab, &read_transcripts(Some(p), None)?)?;
        println!("{}\tperplexity {:.4}", p.display(), lm.perplexity(&held)?);
    }
    Ok(())
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    let template = run_config(a.config.as_deref(), &a.overrides)?;
    let table = if a.ablation {
        let variants = a
            .variants
            .iter()
            .map(|v| v.parse::<Ablation>())
            .collect::<Result<Vec<_>>>()?;
        let rows = experiments::ablation(&template, &variants, &a.seeds)?;
        experiments::format_ablation_table(&rows)
    } else {
        let axis: SweepAxis = a
            .axis
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("--axis is required".into()))?
            .parse()?;
        if a.values.is_empty() {
            return Err(Error::InvalidArgument("--values is required".into()));
        }
        let points = experiments::sweep(&template, axis, &a.values);
        experiments::format_sweep_table(axis, &points)
    };
    print!("{table}");
    if let Some(p) = &a.out {
        write_text(p, &table)?;
    }
    Ok(())
}
