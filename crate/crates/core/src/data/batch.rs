use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Utterance;
use crate::error::{Error, Result};
use crate::nn::PadMask;
use crate::tensor::Tensor;

/// Utterances padded to a common length.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Positions in the source dataset.
    pub indices: Vec<usize>,
    /// `B × T_max × d`, zero beyond each utterance's length.
    pub features: Tensor,
    pub lengths: Vec<usize>,
    /// `B × U_max`, blank-padded.
    pub labels: Vec<Vec<u32>>,
    pub label_lengths: Vec<usize>,
    pub masks: Vec<PadMask>,
}

impl Batch {
    pub fn from_utterances(utts: &[&Utterance], indices: Vec<usize>) -> Result<Self> {
        let first = utts
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let d = first.features.cols();
        let t_max = utts.iter().map(|u| u.features.rows()).max().unwrap_or(0);
        let u_max = utts.iter().map(|u| u.transcript.len()).max().unwrap_or(0);
        let mut data = vec![0.0; utts.len() * t_max * d];
        let mut labels = Vec::with_capacity(utts.len());
        for (b, u) in utts.iter().enumerate() {
            if u.features.cols() != d {
                return Err(Error::shape("make_batches", "utterances differ in feature width"));
            }
            let start = b * t_max * d;
            data[start..start + u.features.len()].copy_from_slice(u.features.data());
            let mut l = u.transcript.clone();
            l.resize(u_max, 0);
            labels.push(l);
        }
        let lengths: Vec<usize> = utts.iter().map(|u| u.features.rows()).collect();
        let masks = lengths
            .iter()
            .map(|&n| PadMask::new(n, t_max))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            indices,
            features: Tensor::new(vec![utts.len(), t_max, d], data)?,
            lengths,
            labels,
            label_lengths: utts.iter().map(|u| u.transcript.len()).collect(),
            masks,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn max_frames(&self) -> usize {
        self.features.shape()[1]
    }

    /// Padded `T_max × d` features of item `b`.
    pub fn padded(&self, b: usize) -> Tensor {
        let (t, d) = (self.features.shape()[1], self.features.shape()[2]);
        Tensor::matrix(t, d, self.features.data()[b * t * d..(b + 1) * t * d].to_vec())
    }

    /// Unpadded `T_b × d` features of item `b`.
    pub fn unpadded(&self, b: usize) -> Tensor {
        self.padded(b).slice_rows(0, self.lengths[b])
    }

    pub fn label(&self, b: usize) -> &[u32] {
        &self.labels[b][..self.label_lengths[b]]
    }
}

/// Splits `data` into batches of at most `batch_size`. Without sorting the
/// order is a seeded shuffle. With sorting, utterances are grouped by
/// length and the batch order is shuffled.
pub fn make_batches(data: &[Utterance], batch_size: usize, sort_by_length: bool, seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut groups: Vec<Vec<usize>> = if sort_by_length {
        order.sort_by_key(|&i| (data[i].features.rows(), i));
        let mut g: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
        g.shuffle(&mut rng);
        g
    } else {
        order.shuffle(&mut rng);
        order.chunks(batch_size).map(<[usize]>::to_vec).collect()
    };
    groups
        .drain(..)
        .map(|idx| {
            let utts: Vec<&Utterance> = idx.iter().map(|&i| &data[i]).collect();
            Batch::from_utterances(&utts, idx)
        })
        .collect()
}
