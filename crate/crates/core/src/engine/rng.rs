//! Counter-addressed innovations.
//!
//! Each `(master seed, replicate, time index)` triple maps to a fixed position
//! in a ChaCha8 keystream: the seed keys the cipher, the replicate selects the
//! stream and the time index selects the word offset. A value therefore does
//! not depend on which other values were drawn, or by which thread.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distribution {
    #[default]
    StandardNormal,
    Rademacher,
    /// Uniform on `[-sqrt 3, sqrt 3)`.
    StandardizedUniform,
}

impl Distribution {
    /// `E|zeta|^p`.
    pub fn abs_moment(self, p: f64) -> f64 {
        match self {
            Distribution::StandardNormal => {
                use statrs::function::gamma::ln_gamma;
                (0.5 * p * std::f64::consts::LN_2 + ln_gamma(0.5 * (p + 1.0)) - 0.5 * std::f64::consts::PI.ln()).exp()
            }
            Distribution::Rademacher => 1.0,
            Distribution::StandardizedUniform => 3f64.sqrt().powf(p) / (p + 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InnovationStream {
    pub distribution: Distribution,
    pub master_seed: u64,
}

/// 32-bit words consumed per time index (two `u64` draws).
const WORDS_PER_INDEX: u128 = 4;
const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
const INV_2_53: f64 = 1.0 / (1u64 << 53) as f64;

impl InnovationStream {
    pub fn new(distribution: Distribution, master_seed: u64) -> Self {
        InnovationStream {
            distribution,
            master_seed,
        }
    }

    pub fn normal(master_seed: u64) -> Self {
        Self::new(Distribution::StandardNormal, master_seed)
    }

    fn rng_at(&self, replicate: u64, index: i64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(replicate);
        // offset so that negative (pre-sample) indices precede positive ones
        let counter = (index as u64) ^ (1u64 << 63);
        rng.set_word_pos(counter as u128 * WORDS_PER_INDEX);
        rng
    }

    #[inline]
    fn transform(&self, a: u64, b: u64) -> f64 {
        match self.distribution {
            Distribution::StandardNormal => {
                // u1 in (0, 1], u2 in [0, 1)
                let u1 = ((a >> 11) + 1) as f64 * INV_2_53;
                let u2 = (b >> 11) as f64 * INV_2_53;
                (-2.0 * u1.ln()).sqrt() * (TWO_PI * u2).cos()
            }
            Distribution::Rademacher => {
                if a >> 63 == 0 {
                    -1.0
                } else {
                    1.0
                }
            }
            Distribution::StandardizedUniform => {
                let u = (a >> 11) as f64 * INV_2_53;
                (2.0 * u - 1.0) * 3f64.sqrt()
            }
        }
    }

    /// `zeta_index` of the given replicate.
    pub fn value(&self, replicate: u64, index: i64) -> f64 {
        let mut rng = self.rng_at(replicate, index);
        let a = rng.next_u64();
        let b = rng.next_u64();
        self.transform(a, b)
    }

    /// `out[i] = zeta_{start + i}`; identical to calling [`value`](Self::value) per index.
    pub fn fill(&self, replicate: u64, start: i64, out: &mut [f64]) {
        let mut rng = self.rng_at(replicate, start);
        for v in out.iter_mut() {
            let a = rng.next_u64();
            let b = rng.next_u64();
            *v = self.transform(a, b);
        }
    }

    pub fn window(&self, replicate: u64, start: i64, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        self.fill(replicate, start, &mut out);
        out
    }
}
