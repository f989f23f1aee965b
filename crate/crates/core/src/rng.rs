//! Purpose-keyed random streams.
//!
//! Every consumer of randomness (shuffling, augmentation, initialisation, ...)
//! draws from its own ChaCha stream derived from the run seed, the purpose and
//! the epoch. Resuming at an epoch boundary therefore replays the exact same
//! draws without serialising generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Shuffle = 2,
    Augment = 3,
    Blobs = 4,
    Noise = 5,
    TestSet = 6,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 48) ^ index);
    rng
}
