//! Deterministic fixtures shared by the benchmarks.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use medusa_core::corpus::FeatureSequence;
use medusa_core::network::{Batch, EncoderConfig};
use medusa_core::{DeepSerConfig, PosteriorSet, NUM_ATTRIBUTES, NUM_CLASSES};

/// Two modalities shaped like pooled speech and text features.
pub fn model(model_dim: usize) -> DeepSerConfig {
    DeepSerConfig::new(
        &[("audio", 32), ("text", 24)],
        EncoderConfig::new(model_dim, 8),
    )
}

/// A batch of `b` rows with sequence lengths between half and all of `len`.
pub fn batch(config: &DeepSerConfig, b: usize, len: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<(
        Vec<FeatureSequence>,
        [f64; NUM_CLASSES],
        [f64; NUM_ATTRIBUTES],
    )> = (0..b)
        .map(|i| {
            let feats = config
                .modalities
                .iter()
                .map(|m| {
                    let l = rng.random_range(len / 2..=len).max(1);
                    FeatureSequence::new(Array2::from_shape_fn((l, m.dim), |_| {
                        rng.random_range(-1.0..1.0)
                    }))
                    .unwrap()
                })
                .collect();
            let mut t = [0.0; NUM_CLASSES];
            t[i % NUM_CLASSES] = 1.0;
            (feats, t, [0.0, 0.5, -0.5])
        })
        .collect();
    Batch::collate(rows.iter().map(|(f, t, a)| (f.as_slice(), t, a))).unwrap()
}

/// Random posteriors for `n` utterances and `members` members.
pub fn posteriors(n: usize, members: usize, seed: u64) -> PosteriorSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Array3::from_shape_fn((n, members, NUM_CLASSES), |_| rng.random_range(0.01..1.0));
    for mut row in p.lanes_mut(ndarray::Axis(2)) {
        let s = row.sum();
        row /= s;
    }
    let targets = Array2::from_shape_fn((n, NUM_CLASSES), |(i, c)| {
        if i % NUM_CLASSES == c {
            1.0
        } else {
            0.0
        }
    });
    PosteriorSet::new(
        (0..members).map(|k| format!("m{k}")).collect(),
        (0..n).map(|i| format!("u{i}")).collect(),
        p,
        targets,
        Array2::zeros((n, NUM_ATTRIBUTES)),
    )
    .unwrap()
}
