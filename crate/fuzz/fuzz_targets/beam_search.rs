#![no_main]

use gic_core::ctc::{greedy_decode, prefix_beam_search, BeamOptions, Posteriorgram};
use gic_core::tensor::Tensor;
use libfuzzer_sys::fuzz_target;

// First two bytes pick the shape, the rest become logits.
fuzz_target!(|data: &[u8]| {
    if data.len() < 3 {
        return;
    }
    let frames = usize::from(data[0] % 8) + 1;
    let vocab = usize::from(data[1] % 5) + 2;
    let body = &data[2..];
    let logits: Vec<f64> = (0..frames * vocab)
        .map(|i| f64::from(body[i % body.len()] as i8) / 16.0)
        .collect();
    let q = Posteriorgram::from_logits(&Tensor::matrix(frames, vocab, logits), frames).unwrap();
    let opts = BeamOptions {
        beam: usize::from(data[0] >> 4) + 1,
        lm_weight: 0.0,
        length_bonus: 0.0,
    };
    let best = prefix_beam_search(&q, &opts, None).unwrap();
    assert!(best.prefix.len() <= frames);
    assert!(greedy_decode(&q).len() <= frames);
});
