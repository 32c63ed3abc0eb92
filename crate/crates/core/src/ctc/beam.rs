use std::cmp::Ordering;
use std::collections::HashMap;

use super::{Posteriorgram, BLANK};
use crate::error::{Error, Result};
use crate::tensor::log_add_exp;

/// Token scorer used for shallow fusion.
pub trait LanguageModel {
    /// `log p(token | context)`, where `context` is the full emitted prefix
    /// and token [`BLANK`] stands for end of sentence.
    fn log_prob(&self, token: u32, context: &[u32]) -> Result<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamOptions {
    pub beam: usize,
    /// Weight on LM log probabilities. At `0.0` the LM is never queried.
    pub lm_weight: f64,
    /// Added once per emitted token.
    pub length_bonus: f64,
}

impl Default for BeamOptions {
    fn default() -> Self {
        Self {
            beam: 10,
            lm_weight: 0.3,
            length_bonus: 0.0,
        }
    }
}

/// A label prefix with its blank-ending and non-blank-ending log masses.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamHypothesis {
    pub prefix: Vec<u32>,
    pub log_blank: f64,
    pub log_nonblank: f64,
    /// Accumulated `lm_weight · log p_LM + length_bonus` over emitted tokens.
    pub fusion: f64,
}

impl BeamHypothesis {
    fn empty() -> Self {
        Self {
            prefix: Vec::new(),
            log_blank: 0.0,
            log_nonblank: f64::NEG_INFINITY,
            fusion: 0.0,
        }
    }

    /// `log P(prefix)` summed over both ending states.
    pub fn log_prob(&self) -> f64 {
        log_add_exp(self.log_blank, self.log_nonblank)
    }

    pub fn score(&self) -> f64 {
        self.log_prob() + self.fusion
    }
}

fn by_score(a: &BeamHypothesis, b: &BeamHypothesis) -> Ordering {
    b.score()
        .partial_cmp(&a.score())
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.prefix.cmp(&b.prefix))
}

/// CTC prefix beam search with optional shallow LM fusion.
///
/// After every frame the `beam` best prefixes by fused score survive. The
/// returned hypothesis maximizes the fused score, including the LM
/// end-of-sentence term when fusion is active.
pub fn prefix_beam_search(
    q: &Posteriorgram,
    opts: &BeamOptions,
    lm: Option<&dyn LanguageModel>,
) -> Result<BeamHypothesis> {
    if opts.beam == 0 {
        return Err(Error::InvalidArgument("beam width must be at least 1".into()));
    }
    let lm = lm.filter(|_| opts.lm_weight != 0.0);
    let vocab = q.vocab_size();
    let mut beams = vec![BeamHypothesis::empty()];

    for t in 0..q.valid_len() {
        let lp: Vec<f64> = q.frame(t).iter().map(|p| p.ln()).collect();
        let mut next: HashMap<Vec<u32>, BeamHypothesis> = HashMap::new();

        for hyp in &beams {
            let total = hyp.log_prob();
            let last = hyp.prefix.last().copied();

            let stay = next.entry(hyp.prefix.clone()).or_insert_with(|| BeamHypothesis {
                prefix: hyp.prefix.clone(),
                log_blank: f64::NEG_INFINITY,
                log_nonblank: f64::NEG_INFINITY,
                fusion: hyp.fusion,
            });
            stay.log_blank = log_add_exp(stay.log_blank, total + lp[BLANK as usize]);
            if let Some(c) = last {
                stay.log_nonblank = log_add_exp(stay.log_nonblank, hyp.log_nonblank + lp[c as usize]);
            }

            for c in 1..vocab as u32 {
                let emit = if Some(c) == last {
                    hyp.log_blank + lp[c as usize]
                } else {
                    total + lp[c as usize]
                };
                if emit == f64::NEG_INFINITY {
                    continue;
                }
                let mut prefix = hyp.prefix.clone();
                prefix.push(c);
                if !next.contains_key(&prefix) {
                    let lm_term = match lm {
                        Some(lm) => opts.lm_weight * lm.log_prob(c, &hyp.prefix)?,
                        None => 0.0,
                    };
                    let fusion = hyp.fusion + lm_term + opts.length_bonus;
                    if fusion.is_nan() || fusion == f64::NEG_INFINITY {
                        continue;
                    }
                    next.insert(
                        prefix.clone(),
                        BeamHypothesis {
                            prefix: prefix.clone(),
                            log_blank: f64::NEG_INFINITY,
                            log_nonblank: f64::NEG_INFINITY,
                            fusion,
                        },
                    );
                }
                let entry = next.get_mut(&prefix).expect("inserted above");
                entry.log_nonblank = log_add_exp(entry.log_nonblank, emit);
            }
        }

        let mut candidates: Vec<BeamHypothesis> = next
            .into_values()
            .filter(|h| h.score() > f64::NEG_INFINITY)
            .collect();
        candidates.sort_by(by_score);
        candidates.truncate(opts.beam);
        if candidates.is_empty() {
            return Err(Error::Numeric("every beam hypothesis has zero probability".into()));
        }
        beams = candidates;
    }

    if let Some(lm) = lm {
        for hyp in &mut beams {
            hyp.fusion += opts.lm_weight * lm.log_prob(BLANK, &hyp.prefix)?;
        }
        beams.retain(|h| h.score() > f64::NEG_INFINITY);
        beams.sort_by(by_score);
    }
    beams
        .into_iter()
        .next()
        .ok_or_else(|| Error::Numeric("no hypothesis survives end-of-sentence scoring".into()))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::ctc::{ctc_loss, greedy_decode};
    use crate::tensor::Tensor;

    fn random_q(rng: &mut ChaCha8Rng, frames: usize, vocab: usize) -> Posteriorgram {
        let logits = Tensor::matrix(
            frames,
            vocab,
            (0..frames * vocab).map(|_| rng.random_range(-2.0..2.0)).collect(),
        );
        Posteriorgram::from_logits(&logits, frames).unwrap()
    }

    fn no_lm(beam: usize) -> BeamOptions {
        BeamOptions {
            beam,
            lm_weight: 0.0,
            length_bonus: 0.0,
        }
    }

    struct Forbid(u32);
    impl LanguageModel for Forbid {
        fn log_prob(&self, token: u32, _context: &[u32]) -> Result<f64> {
            Ok(if token == self.0 { f64::NEG_INFINITY } else { -1.0 })
        }
    }

    #[test]
    fn rejects_zero_beam() {
        let q = Posteriorgram::from_probs(Tensor::filled(2, 2, 0.5)).unwrap();
        assert!(prefix_beam_search(&q, &no_lm(0), None).is_err());
    }

    #[test]
    fn beam_one_on_one_hot_equals_greedy() {
        let alignment = [1u32, 1, 0, 2, 0, 2, 3, 3];
        let mut t = Tensor::zeros(alignment.len(), 4);
        for (i, &a) in alignment.iter().enumerate() {
            t.data_mut()[i * 4 + a as usize] = 1.0;
        }
        let q = Posteriorgram::from_probs(t).unwrap();
        let hyp = prefix_beam_search(&q, &no_lm(1), None).unwrap();
        assert_eq!(hyp.prefix, greedy_decode(&q));
        assert_eq!(hyp.log_prob(), 0.0);
    }

    #[test]
    fn hypothesis_mass_is_the_ctc_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random_q(&mut rng, 4, 3);
        let hyp = prefix_beam_search(&q, &no_lm(64), None).unwrap();
        let loss = ctc_loss(&q, &hyp.prefix).unwrap();
        assert!((hyp.log_prob() + loss).abs() < 1e-12);
    }

    #[test]
    fn forbidden_token_never_emitted() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lm = Forbid(2);
        let opts = BeamOptions {
            beam: 8,
            lm_weight: 0.5,
            length_bonus: 0.0,
        };
        for _ in 0..30 {
            let q = random_q(&mut rng, 6, 4);
            let hyp = prefix_beam_search(&q, &opts, Some(&lm)).unwrap();
            assert!(!hyp.prefix.contains(&2));
        }
    }

    #[test]
    fn zero_weight_ignores_the_lm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lm = Forbid(1);
        for beam in [1, 3, 10] {
            let q = random_q(&mut rng, 6, 4);
            let a = prefix_beam_search(&q, &no_lm(beam), None).unwrap();
            let b = prefix_beam_search(&q, &no_lm(beam), Some(&lm)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn pruned_mass_is_a_lower_bound_on_the_true_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let frames = rng.random_range(1..=7);
            let vocab = rng.random_range(2..=4);
            let q = random_q(&mut rng, frames, vocab);
            for beam in 1..=8 {
                let hyp = prefix_beam_search(&q, &no_lm(beam), None).unwrap();
                let exact = -ctc_loss(&q, &hyp.prefix).unwrap();
                assert!(hyp.log_prob() <= exact + 1e-12);
            }
        }
    }

    /// Widening the beam can lower the returned score: a prefix kept by the
    /// narrow search may be displaced by newly admitted competitors, so
    /// the same answer ends up with less surviving mass.
    #[test]
    fn wider_beam_can_return_a_lower_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut found = false;
        for _ in 0..200 {
            let frames = rng.random_range(1..=7);
            let vocab = rng.random_range(2..=4);
            let q = random_q(&mut rng, frames, vocab);
            let scores: Vec<f64> = (1..=8)
                .map(|b| prefix_beam_search(&q, &no_lm(b), None).unwrap().score())
                .collect();
            found |= scores.windows(2).any(|w| w[1] < w[0] - 1e-12);
        }
        assert!(found);
    }
}
