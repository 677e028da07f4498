//! Reproducible random streams.
//!
//! A single master seed fans out into independent ChaCha streams addressed by
//! a purpose tag and a 64-bit counter. Each Monte Carlo work item owns its own
//! stream, so results do not depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Each purpose gets a distinct ChaCha key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    /// Plain joint sampling (`sample`, variance estimation).
    Joint = 1,
    /// Conditional sampling requested directly by a caller.
    Conditional = 2,
    /// Outer/inner loops of the cost-function estimator.
    Cost = 3,
    /// Random permutation draws.
    Permutation = 4,
    /// Output variance sample.
    Variance = 5,
    /// Kriging restarts and design scrambling.
    Design = 6,
}

/// Master seed for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Seed(pub u64);

impl Seed {
    /// Stream `index` of the given purpose.
    pub fn stream(self, purpose: Purpose, index: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut state = self.0 ^ (purpose as u64).wrapping_mul(0xA076_1D64_78BD_642F);
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        rng
    }

    /// Derives a child seed, e.g. one replicate of a seeded experiment.
    pub fn child(self, index: u64) -> Seed {
        let mut state = self.0 ^ index.wrapping_mul(0xE703_7ED1_A0B4_28DB);
        Seed(splitmix64(&mut state))
    }
}

impl From<u64> for Seed {
    fn from(value: u64) -> Self {
        Seed(value)
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
