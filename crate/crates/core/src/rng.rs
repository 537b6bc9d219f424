//! Deterministic random streams.
//!
//! Every stochastic site in a run draws from its own stream, keyed by
//! `(run seed, purpose label, round, item id)`. The key is mixed into a
//! 256-bit ChaCha8 seed, so streams are independent of evaluation order and
//! of how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over the label bytes. Stable across platforms and toolchains,
/// unlike `std::hash::DefaultHasher`.
fn label_hash(label: &str) -> u64 {
    label.bytes().fold(FNV_OFFSET, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Identifies one independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub label: u64,
    pub round: u64,
    pub item: u64,
}

impl StreamKey {
    pub fn new(seed: u64, label: &str, round: u64, item: u64) -> Self {
        Self {
            seed,
            label: label_hash(label),
            round,
            item,
        }
    }

    /// Expands the key into a 32-byte ChaCha seed by chaining SplitMix64.
    pub fn seed_bytes(&self) -> [u8; 32] {
        let mut state = mix64(self.seed);
        state = mix64(state ^ self.label);
        state = mix64(state ^ self.round);
        state = mix64(state ^ self.item);
        let mut out = [0u8; 32];
        for chunk in out.chunks_exact_mut(8) {
            state = mix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        out
    }

    pub fn stream(&self) -> Stream {
        ChaCha8Rng::from_seed(self.seed_bytes())
    }
}

/// Shorthand for `StreamKey::new(..).stream()`.
pub fn stream(seed: u64, label: &str, round: u64, item: u64) -> Stream {
    StreamKey::new(seed, label, round, item).stream()
}
