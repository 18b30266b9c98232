// SPDX-License-Identifier: Apache-2.0

//! Seeded inputs shared by the criterion benches.

use defectqa::mask::BinaryMask;
use defectqa::scoremap::ScoreMap;
use defectqa::synth::random_blob;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Score map and mask where anomalous pixels score higher on average.
pub fn score_pair(w: u32, h: u32, seed: u64) -> (ScoreMap, BinaryMask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = random_blob(&mut rng, w, h);
    let scores = mask
        .bits()
        .iter()
        .map(|&a| rng.gen::<f32>() * 0.7 + if a { 0.3 } else { 0.0 })
        .collect();
    (ScoreMap::new(w, h, scores).unwrap(), mask)
}

/// Mask with `blobs` overlapping random shapes.
pub fn blob_mask(w: u32, h: u32, blobs: usize, seed: u64) -> BinaryMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BinaryMask::new(w, h);
    for _ in 0..blobs {
        let b = random_blob(&mut rng, w, h);
        for (i, &v) in b.bits().iter().enumerate() {
            if v {
                out.set((i as u32) % w, (i as u32) / w, true);
            }
        }
    }
    out
}

/// Salt noise: each pixel set with probability `p`, many small components.
pub fn noise_mask(w: u32, h: u32, p: f64, seed: u64) -> BinaryMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BinaryMask::from_bits(w, h, (0..w as usize * h as usize).map(|_| rng.gen_bool(p)).collect())
}
