//! Seeded workloads shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tilepack_core::geometry::ImageDims;
use tilepack_core::packer::SampleUnit;

/// Image sizes uniform over `[1, 8192]` on both axes.
pub fn image_sizes(seed: u64, n: usize) -> Vec<ImageDims> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| ImageDims::new(rng.random_range(1..=8192), rng.random_range(1..=8192)).unwrap())
        .collect()
}

/// Samples with 64..=4096 tokens and 0..=12 tiles.
pub fn sample_stream(seed: u64, n: usize) -> Vec<SampleUnit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            SampleUnit::new(
                format!("s{i}"),
                rng.random_range(64..=4096),
                rng.random_range(0..=12),
            )
        })
        .collect()
}

/// Whitespace-separated text of `words` words over a small vocabulary.
pub fn text(seed: u64, words: usize) -> String {
    const VOCAB: [&str; 12] = [
        "data", "tile", "image", "token", "pack", "mix", "filter", "loss", "grid", "frame",
        "model", "batch",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..words)
        .map(|_| VOCAB[rng.random_range(0..VOCAB.len())])
        .collect::<Vec<_>>()
        .join(" ")
}
