use super::{collapse, Posteriorgram};

/// Per-frame argmax over the valid frames; ties go to the lowest token id.
pub fn best_path(q: &Posteriorgram) -> Vec<u32> {
    (0..q.valid_len())
        .map(|t| {
            let row = q.frame(t);
            let mut best = 0;
            for (k, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = k;
                }
            }
            best as u32
        })
        .collect()
}

/// Best-path decoding: collapse of the per-frame argmax sequence.
pub fn greedy_decode(q: &Posteriorgram) -> Vec<u32> {
    collapse(&best_path(q))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::ctc::BLANK;
    use crate::tensor::Tensor;

    fn one_hot(alignment: &[u32], vocab: usize) -> Posteriorgram {
        let mut t = Tensor::zeros(alignment.len(), vocab);
        for (i, &a) in alignment.iter().enumerate() {
            t.data_mut()[i * vocab + a as usize] = 1.0;
        }
        Posteriorgram::from_probs(t).unwrap()
    }

    #[test]
    fn one_hot_alignment_decodes_to_its_collapse() {
        let alignment = [1, 1, 0, 2, 2, 0, 2, 3];
        assert_eq!(greedy_decode(&one_hot(&alignment, 4)), vec![1, 2, 2, 3]);
        assert!(greedy_decode(&one_hot(&[BLANK; 5], 4)).is_empty());
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let q = Posteriorgram::from_probs(Tensor::from_rows(&[[0.4, 0.4, 0.2], [0.2, 0.4, 0.4]]).unwrap()).unwrap();
        assert_eq!(best_path(&q), vec![0, 1]);
    }

    #[test]
    fn random_posteriorgram_matches_independent_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let raw: Vec<f64> = (0..15).map(|_| rng.random_range(0.01..1.0)).collect();
            let mut rows = Vec::new();
            for r in raw.chunks(3) {
                let s: f64 = r.iter().sum();
                rows.push(r.iter().map(|v| v / s).collect::<Vec<_>>());
            }
            let q = Posteriorgram::from_probs(Tensor::from_rows(&rows).unwrap()).unwrap();
            // oracle: argmax by sorting indices, then merge-and-drop by hand
            let arg: Vec<u32> = rows
                .iter()
                .map(|r| {
                    let mut idx: Vec<usize> = (0..3).collect();
                    idx.sort_by(|&a, &b| r[b].partial_cmp(&r[a]).unwrap().then(a.cmp(&b)));
                    idx[0] as u32
                })
                .collect();
            let mut expected = Vec::new();
            for i in 0..arg.len() {
                if arg[i] != 0 && (i == 0 || arg[i - 1] != arg[i]) {
                    expected.push(arg[i]);
                }
            }
            assert_eq!(greedy_decode(&q), expected);
        }
    }
}
