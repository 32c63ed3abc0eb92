//! Multi-run drivers: hyper-parameter sweeps, ablations and the per-tap probe.

use std::fmt::Write as _;
use std::str::FromStr;

use super::{load_dataset, EpochMetrics, RunConfig, Trainer};
use crate::error::{Error, Result};
use crate::model::{tap_layer_indices, Fusion};

/// Outcome of one training run, scored on its validation split (or on the
/// training split when there is none).
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub metrics: Vec<EpochMetrics>,
    pub train_cer: f64,
    pub valid_cer: f64,
    /// `(tap layer, greedy CER of its posteriorgram)`.
    pub tap_cers: Vec<(usize, f64)>,
}

/// Trains `config` to completion and scores the result.
pub fn train_and_evaluate(config: &RunConfig) -> Result<(Trainer, RunSummary)> {
    let data = load_dataset(config)?;
    let mut trainer = Trainer::new(config.clone(), data.vocab)?;
    let metrics = trainer.fit(&data.train, &data.valid, |m, _| {
        log::info!("{}", m.tsv_row());
        Ok(())
    })?;
    let held_out = if data.valid.is_empty() { &data.train } else { &data.valid };
    let train_cer = trainer.evaluate(&data.train)?.final_layer.rate();
    let eval = trainer.evaluate(held_out)?;
    let tap_cers = trainer
        .model
        .blocks
        .iter()
        .map(|b| b.layer)
        .zip(eval.taps.iter().map(|e| e.rate()))
        .collect();
    Ok((
        trainer,
        RunSummary {
            metrics,
            train_cer,
            valid_cer: eval.final_layer.rate(),
            tap_cers,
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Taps,
    Lambda,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "k" | "taps" => Ok(SweepAxis::Taps),
            "lambda" | "λ" => Ok(SweepAxis::Lambda),
            _ => Err(Error::InvalidArgument(format!("unknown sweep axis {s:?}; use k or lambda"))),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Taps => "K",
            SweepAxis::Lambda => "lambda",
        }
    }

    /// `template` with this axis set to `value`, validated.
    pub fn apply(self, template: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut cfg = template.clone();
        match self {
            SweepAxis::Taps => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(Error::Config(format!("K must be a nonnegative integer, got {value}")));
                }
                cfg.model.taps = value as usize;
                tap_layer_indices(cfg.model.layers, cfg.model.taps)?;
            }
            SweepAxis::Lambda => cfg.model.lambda = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub value: f64,
    pub outcome: std::result::Result<RunSummary, String>,
}

/// One training per value, all from the template's seed. A failing point is
/// recorded and the sweep moves on.
pub fn sweep(template: &RunConfig, axis: SweepAxis, values: &[f64]) -> Vec<SweepPoint> {
    values
        .iter()
        .map(|&value| {
            let outcome = axis
                .apply(template, value)
                .and_then(|cfg| train_and_evaluate(&cfg))
                .map(|(_, s)| s)
                .map_err(|e| e.to_string());
            if let Err(e) = &outcome {
                log::warn!("{} = {value}: {e}", axis.name());
            }
            SweepPoint { value, outcome }
        })
        .collect()
}

pub fn format_sweep_table(axis: SweepAxis, points: &[SweepPoint]) -> String {
    let mut out = format!("{}\tvalid_cer\ttrain_cer\tepochs\tstatus\n", axis.name());
    for p in points {
        match &p.outcome {
            Ok(s) => writeln!(
                out,
                "{}\t{:.4}\t{:.4}\t{}\tok",
                p.value,
                s.valid_cer,
                s.train_cer,
                s.metrics.len()
            ),
            Err(e) => writeln!(out, "{}\t-\t-\t-\terror: {e}", p.value),
        }
        .expect("writing to a String cannot fail");
    }
    out
}

/// Model variants compared in the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    /// Gated fusion of soft-label embeddings with intermediate losses.
    Gic,
    /// Embeddings added without the gate.
    SumFusion,
    /// Intermediate losses only.
    IntermediateCtc,
    /// Final CTC loss only.
    PlainCtc,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Gic,
        Ablation::SumFusion,
        Ablation::IntermediateCtc,
        Ablation::PlainCtc,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Gic => "gic",
            Ablation::SumFusion => "sum-fusion",
            Ablation::IntermediateCtc => "intermediate-ctc",
            Ablation::PlainCtc => "plain-ctc",
        }
    }

    pub fn apply(self, template: &RunConfig) -> RunConfig {
        let mut cfg = template.clone();
        let m = &mut cfg.model;
        match self {
            Ablation::Gic => {
                m.enable_gic = true;
                m.enable_intermediate_loss = true;
                m.fusion = Fusion::Gate;
            }
            Ablation::SumFusion => {
                m.enable_gic = true;
                m.enable_intermediate_loss = true;
                m.fusion = Fusion::Sum;
            }
            Ablation::IntermediateCtc => {
                m.enable_gic = false;
                m.enable_intermediate_loss = true;
            }
            Ablation::PlainCtc => {
                m.enable_gic = false;
                m.enable_intermediate_loss = false;
            }
        }
        cfg
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.label() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Ablation,
    /// Held-out CER per seed.
    pub valid_cers: Vec<f64>,
    /// Per-tap held-out CER averaged over seeds.
    pub tap_cers: Vec<(usize, f64)>,
}

impl AblationRow {
    pub fn mean(&self) -> f64 {
        self.valid_cers.iter().sum::<f64>() / self.valid_cers.len() as f64
    }
}

/// Trains every variant once per seed. The seed sets the run seed only, so
/// all variants see the same data.
pub fn ablation(template: &RunConfig, variants: &[Ablation], seeds: &[u64]) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("ablation needs at least one seed".into()));
    }
    variants
        .iter()
        .map(|&variant| {
            let mut valid_cers = Vec::with_capacity(seeds.len());
            let mut tap_sums: Vec<(usize, f64)> = Vec::new();
            for &seed in seeds {
                let mut cfg = variant.apply(template);
                cfg.seed = seed;
                let (_, s) = train_and_evaluate(&cfg)?;
                log::info!("{} seed {seed}: held-out CER {:.4}", variant.label(), s.valid_cer);
                valid_cers.push(s.valid_cer);
                if tap_sums.is_empty() {
                    tap_sums = s.tap_cers.iter().map(|&(l, _)| (l, 0.0)).collect();
                }
                for (acc, (_, c)) in tap_sums.iter_mut().zip(&s.tap_cers) {
                    acc.1 += c;
                }
            }
            let n = seeds.len() as f64;
            Ok(AblationRow {
                variant,
                valid_cers,
                tap_cers: tap_sums.into_iter().map(|(l, s)| (l, s / n)).collect(),
            })
        })
        .collect()
}

pub fn format_ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant\tmean_valid_cer\tper_seed\ttap_cers\n");
    for r in rows {
        let seeds: Vec<String> = r.valid_cers.iter().map(|c| format!("{c:.4}")).collect();
        let taps: Vec<String> = r.tap_cers.iter().map(|(l, c)| format!("l{l}={c:.4}")).collect();
        let taps = if taps.is_empty() { "-".to_string() } else { taps.join(",") };
        writeln!(out, "{}\t{:.4}\t{}\t{}", r.variant.label(), r.mean(), seeds.join(","), taps)
            .expect("writing to a String cannot fail");
    }
    out
}
