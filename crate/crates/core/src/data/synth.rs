use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{TokenMode, Utterance, Vocabulary};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Synthetic corpus parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_utts: usize,
    /// Includes the blank.
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub frames_per_token: usize,
    pub noise_std: f64,
    pub feat_dim: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_utts: 32,
            vocab_size: 8,
            min_len: 3,
            max_len: 6,
            frames_per_token: 8,
            noise_std: 0.05,
            feat_dim: 16,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab_size < 2 {
            return bad("synthetic vocab_size must be at least 2".into());
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad(format!("length range {}..={} is empty or starts at 0", self.min_len, self.max_len));
        }
        if self.vocab_size == 2 && self.max_len > 1 {
            return bad("a single token cannot form sequences without adjacent repeats".into());
        }
        if self.frames_per_token == 0 || self.feat_dim == 0 {
            return bad("frames_per_token and feat_dim must be positive".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std {} must be finite and nonnegative", self.noise_std));
        }
        Ok(())
    }
}

/// Generated corpus with its token patterns and vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub utterances: Vec<Utterance>,
    /// Row `i` is the pattern of token `i`; row 0 (blank) is unused.
    pub patterns: Tensor,
    pub vocab: Vocabulary,
}

/// Vocabulary `a, b, …` for up to 26 tokens, else `t1, t2, …` in word mode.
pub fn synth_vocabulary(vocab_size: usize) -> Result<Vocabulary> {
    let n = vocab_size.saturating_sub(1);
    if n <= 26 {
        Vocabulary::new(TokenMode::Char, (0..n).map(|i| ((b'a' + i as u8) as char).to_string()))
    } else {
        Vocabulary::new(TokenMode::Word, (1..=n).map(|i| format!("t{i}")))
    }
}

/// Random token sequences without adjacent repeats; each token contributes
/// `frames_per_token` copies of its unit-norm pattern plus Gaussian noise.
/// Features are rounded to `f32` so they survive the feature file format.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (v, d) = (cfg.vocab_size, cfg.feat_dim);
    let mut patterns = vec![0.0; v * d];
    for row in patterns.chunks_mut(d) {
        for x in row.iter_mut() {
            *x = StandardNormal.sample(&mut rng);
        }
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.iter_mut().for_each(|x| *x /= norm);
    }
    let patterns = Tensor::matrix(v, d, patterns);
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let width = cfg.n_utts.max(1).to_string().len();

    let mut utterances = Vec::with_capacity(cfg.n_utts);
    for i in 0..cfg.n_utts {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let mut transcript: Vec<u32> = Vec::with_capacity(len);
        for _ in 0..len {
            let tok = loop {
                let t = rng.random_range(1..v as u32);
                if transcript.last() != Some(&t) {
                    break t;
                }
            };
            transcript.push(tok);
        }
        let mut data = Vec::with_capacity(len * cfg.frames_per_token * d);
        for &tok in &transcript {
            for _ in 0..cfg.frames_per_token {
                for &p in patterns.row(tok as usize) {
                    let n = if cfg.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    data.push((p + n) as f32 as f64);
                }
            }
        }
        utterances.push(Utterance {
            id: format!("synth-{i:0width$}"),
            features: Tensor::matrix(len * cfg.frames_per_token, d, data),
            transcript,
        });
    }
    Ok(SynthData {
        utterances,
        patterns,
        vocab: synth_vocabulary(v)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::collapse;
    use crate::data::features::encode_features;

    fn cfg(seed: u64, noise_std: f64, frames_per_token: usize) -> SynthConfig {
        SynthConfig {
            seed,
            n_utts: 40,
            vocab_size: 9,
            min_len: 1,
            max_len: 7,
            frames_per_token,
            noise_std,
            feat_dim: 12,
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = synth_generate(&cfg(5, 0.1, 3)).unwrap();
        let b = synth_generate(&cfg(5, 0.1, 3)).unwrap();
        assert_eq!(a, b);
        for (x, y) in a.utterances.iter().zip(&b.utterances) {
            assert_eq!(encode_features(&x.features).unwrap(), encode_features(&y.features).unwrap());
        }
        assert_ne!(a, synth_generate(&cfg(6, 0.1, 3)).unwrap());
    }

    #[test]
    fn noiseless_frames_are_patterns() {
        let data = synth_generate(&cfg(1, 0.0, 3)).unwrap();
        for u in &data.utterances {
            assert_eq!(u.features.rows(), 3 * u.transcript.len());
            for (t, &tok) in u.transcript.iter().enumerate() {
                for f in 0..3 {
                    let expect: Vec<f64> = data.patterns.row(tok as usize).iter().map(|&p| p as f32 as f64).collect();
                    assert_eq!(u.features.row(3 * t + f), &expect[..]);
                }
            }
            assert!(u.transcript.windows(2).all(|w| w[0] != w[1]));
            assert!(u.transcript.iter().all(|&t| t >= 1 && t < 9));
        }
    }

    #[test]
    fn nearest_pattern_classifier_recovers_transcripts() {
        let data = synth_generate(&cfg(2, 0.0, 4)).unwrap();
        for u in &data.utterances {
            let frames: Vec<u32> = (0..u.features.rows())
                .map(|t| {
                    let x = u.features.row(t);
                    (1..9u32)
                        .min_by(|&a, &b| {
                            let da: f64 = x.iter().zip(data.patterns.row(a as usize)).map(|(p, q)| (p - q).powi(2)).sum();
                            let db: f64 = x.iter().zip(data.patterns.row(b as usize)).map(|(p, q)| (p - q).powi(2)).sum();
                            da.total_cmp(&db)
                        })
                        .unwrap()
                })
                .collect();
            assert_eq!(collapse(&frames), u.transcript);
        }
    }

    #[test]
    fn rejects_invalid_ranges() {
        let base = cfg(0, 0.0, 2);
        for bad in [
            SynthConfig { vocab_size: 1, ..base.clone() },
            SynthConfig { min_len: 0, ..base.clone() },
            SynthConfig { min_len: 5, max_len: 4, ..base.clone() },
            SynthConfig { vocab_size: 2, ..base.clone() },
            SynthConfig { frames_per_token: 0, ..base.clone() },
            SynthConfig { noise_std: -1.0, ..base.clone() },
        ] {
            assert!(synth_generate(&bad).is_err());
        }
        assert!(synth_generate(&SynthConfig { vocab_size: 2, max_len: 1, ..base }).is_ok());
    }

    #[test]
    fn vocabulary_modes() {
        assert_eq!(synth_vocabulary(27).unwrap().mode(), TokenMode::Char);
        let big = synth_vocabulary(40).unwrap();
        assert_eq!(big.mode(), TokenMode::Word);
        assert_eq!(big.len(), 40);
    }
}
