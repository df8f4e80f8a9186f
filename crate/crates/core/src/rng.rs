//! Seeding scheme.
//!
//! Every random draw in the crate goes through [`VRng`] (ChaCha8), whose
//! output stream is fixed by the `rand_chacha` algorithm rather than by the
//! platform or the `rand` version. Independent consumers inside one run get
//! their own stream of the same seed via [`stream`], so adding draws in one
//! place never shifts the numbers another place sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type VRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> VRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream identifiers used by the training loop.
pub mod streams {
    pub const INIT_GENERATOR: u64 = 1;
    pub const INIT_CLASSIFIER: u64 = 2;
    pub const LATENTS: u64 = 3;
    pub const TARGET: u64 = 4;
    pub const CLASSIFIER_BATCHES: u64 = 5;
    pub const GENERATOR_BATCHES: u64 = 6;
    pub const EVALUATION: u64 = 7;
    pub const INITIAL_PARTICLES: u64 = 8;
}

pub fn stream(seed: u64, id: u64) -> VRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, 1).random();
        let b: u64 = stream(7, 1).random();
        let c: u64 = stream(7, 2).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn seed_stream_is_pinned() {
        const PINNED: u64 = 13080132717333068652;
        // Guards against a silent change of the underlying generator.
        let v: u64 = seeded(0).random();
        assert_eq!(v, PINNED);
    }
}
