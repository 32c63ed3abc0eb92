use crate::ctc::{edit_distance, EditCounts};
use crate::error::{Error, Result};

/// Corpus-level error counts.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorRate {
    pub counts: EditCounts,
    pub ref_tokens: usize,
}

impl ErrorRate {
    /// `(S + I + D) / Σ|ref|`; zero reference tokens divide by 1.
    pub fn rate(&self) -> f64 {
        self.counts.rate(self.ref_tokens)
    }

    pub fn percent(&self) -> f64 {
        100.0 * self.rate()
    }
}

/// Sums edit counts over aligned reference/hypothesis pairs.
pub fn aggregate_cer<T: PartialEq, R: AsRef<[T]>, H: AsRef<[T]>>(refs: &[R], hyps: &[H]) -> Result<ErrorRate> {
    if refs.len() != hyps.len() {
        return Err(Error::InvalidArgument(format!(
            "{} references but {} hypotheses",
            refs.len(),
            hyps.len()
        )));
    }
    let mut out = ErrorRate::default();
    for (r, h) in refs.iter().zip(hyps) {
        out.counts += edit_distance(r.as_ref(), h.as_ref());
        out.ref_tokens += r.as_ref().len();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn examples() {
        let refs = vec![vec![1u32, 2, 3], vec![4, 5]];
        assert_eq!(aggregate_cer(&refs, &refs).unwrap().rate(), 0.0);
        let refs = vec![vec![1u32, 2, 3, 4, 5], vec![6, 7, 8, 9, 1]];
        let hyps = vec![vec![1u32, 2, 3, 4, 5], vec![6, 7, 2, 9, 1]];
        let r = aggregate_cer(&refs, &hyps).unwrap();
        assert_eq!(r.rate(), 0.1);
        assert_eq!(r.counts.substitutions, 1);
        assert!(aggregate_cer(&refs, &hyps[..1]).is_err());
    }

    #[test]
    fn matches_per_utterance_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let seq = |rng: &mut ChaCha8Rng| -> Vec<u32> {
            let n = rng.random_range(0..8);
            (0..n).map(|_| rng.random_range(1..5)).collect()
        };
        let refs: Vec<Vec<u32>> = (0..50).map(|_| seq(&mut rng)).collect();
        let hyps: Vec<Vec<u32>> = (0..50).map(|_| seq(&mut rng)).collect();
        let agg = aggregate_cer(&refs, &hyps).unwrap();
        let (mut errs, mut n) = (0, 0);
        for (r, h) in refs.iter().zip(&hyps) {
            errs += edit_distance(r, h).total();
            n += r.len();
        }
        assert_eq!(agg.counts.total(), errs);
        assert_eq!(agg.rate(), errs as f64 / n as f64);
    }
}
