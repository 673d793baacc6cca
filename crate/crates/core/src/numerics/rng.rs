use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Identifier of the stream generator backing [`SeededRng`].
pub const RNG_ALGORITHM: &str = "chacha8";

/// A reproducible random stream: identical seeds give identical streams.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm(&self) -> &'static str {
        RNG_ALGORITHM
    }

    /// Draws a child seed from this stream.
    pub fn next_seed(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Splits off an independent child stream.
    pub fn fork(&mut self) -> SeededRng {
        SeededRng::new(self.next_seed())
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
