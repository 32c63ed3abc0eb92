//! Exhaustive evaluation of the CTC sum, used as a test oracle.

use super::{check_labels, collapse, Posteriorgram};
use crate::error::{Error, Result};

/// Largest alignment count the oracle will enumerate.
pub const MAX_ALIGNMENTS: u64 = 1_000_000;

/// `P_ctc(labels | q)` as an explicit sum over every length-`T′` alignment
/// whose collapse equals `labels`.
pub fn ctc_brute_force(q: &Posteriorgram, labels: &[u32]) -> Result<f64> {
    let frames = q.valid_len();
    let vocab = q.vocab_size();
    check_labels(labels, vocab)?;
    let count = (vocab as u64).checked_pow(frames as u32);
    match count {
        Some(c) if c <= MAX_ALIGNMENTS => {}
        _ => {
            return Err(Error::TooLarge(format!(
                "{vocab}^{frames} alignments exceeds {MAX_ALIGNMENTS}"
            )))
        }
    }
    if labels.len() > frames {
        return Ok(0.0);
    }
    let mut alignment = vec![0u32; frames];
    let mut total = 0.0;
    loop {
        if collapse(&alignment) == labels {
            total += alignment
                .iter()
                .enumerate()
                .map(|(t, &a)| q.prob(t, a))
                .product::<f64>();
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == frames {
                return Ok(total);
            }
            alignment[pos] += 1;
            if (alignment[pos] as usize) < vocab {
                break;
            }
            alignment[pos] = 0;
            pos += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn longer_target_than_frames_is_zero() {
        let q = Posteriorgram::from_probs(Tensor::filled(2, 3, 1.0 / 3.0)).unwrap();
        assert_eq!(ctc_brute_force(&q, &[1, 2, 1]).unwrap(), 0.0);
    }

    #[test]
    fn single_frame_is_direct_lookup() {
        let q = Posteriorgram::from_probs(Tensor::from_rows(&[[0.2, 0.5, 0.3]]).unwrap()).unwrap();
        assert_eq!(ctc_brute_force(&q, &[]).unwrap(), 0.2);
        assert_eq!(ctc_brute_force(&q, &[1]).unwrap(), 0.5);
        assert_eq!(ctc_brute_force(&q, &[2]).unwrap(), 0.3);
    }

    #[test]
    fn refuses_huge_instances() {
        let q = Posteriorgram::from_probs(Tensor::filled(20, 4, 0.25)).unwrap();
        assert!(matches!(ctc_brute_force(&q, &[1]), Err(Error::TooLarge(_))));
    }
}
