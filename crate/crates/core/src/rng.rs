//! Seeded, platform-independent random streams.
//!
//! Every random decision in the crate goes through [`RngStream`]. Streams are
//! ChaCha8 keyed by a 64-bit seed; [`RngStream::substream`] selects an
//! independent ChaCha stream so per-query draws do not depend on scheduling.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha8Rng,
    draws: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            inner: ChaCha8Rng::seed_from_u64(seed),
            draws: 0,
        }
    }

    /// Independent stream number `index` under `seed`.
    pub fn substream(seed: u64, index: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(index);
        RngStream { inner, draws: 0 }
    }

    /// Uniform `f64` in `[0, 1)` built from the top 53 bits of one `u64` draw.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Number of 32/64-bit words consumed so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.draws += 1;
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.draws += dst.len().div_ceil(4) as u64;
        self.inner.fill_bytes(dst)
    }
}

/// Convenience constructor mirroring the crate's naming.
pub fn seeded_rng(seed: u64) -> RngStream {
    RngStream::new(seed)
}
