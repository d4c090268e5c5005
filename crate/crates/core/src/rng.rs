//! Counter-based Gaussian noise: every node's draw depends only on (seed, index, node).

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;

const CHUNK: usize = 4096;
const AUX_WORD_OFFSET: u128 = 1 << 64;

/// Identifies one realization: a master seed plus a realization index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseSeed {
    pub seed: u64,
    pub index: u64,
}

impl NoiseSeed {
    pub fn new(seed: u64, index: u64) -> Self {
        Self { seed, index }
    }

    fn stream(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.index);
        rng
    }

    /// `n` standard normals; identical regardless of thread count.
    pub fn normals(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
            let mut rng = self.stream();
            rng.set_word_pos((c * CHUNK * 2) as u128);
            fill_normals(&mut rng, chunk);
        });
        out
    }

    /// Standard normals from a stream region disjoint from `normals`.
    pub fn auxiliary_normals(&self, n: usize) -> Vec<f64> {
        let mut rng = self.stream();
        rng.set_word_pos(AUX_WORD_OFFSET);
        let mut out = vec![0.0; n];
        fill_normals(&mut rng, &mut out);
        out
    }
}

fn unit_open(x: u64) -> f64 {
    // (0, 1]
    ((x >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
}

fn fill_normals(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let mut i = 0;
    while i < out.len() {
        let u1 = unit_open(rng.next_u64());
        let u2 = unit_open(rng.next_u64());
        let r = (-2.0 * u1.ln()).sqrt();
        let t = 2.0 * std::f64::consts::PI * u2;
        out[i] = r * t.cos();
        if i + 1 < out.len() {
            out[i + 1] = r * t.sin();
        }
        i += 2;
    }
}
