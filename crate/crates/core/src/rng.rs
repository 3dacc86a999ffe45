//! Counter-based sampling.
//!
//! Every draw is a pure function of `(seed, epoch, step)`, so a run can be
//! replayed exactly and a worker that claims step `j` of an epoch draws the
//! same sample the serial solver draws at step `j`.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform sample-index stream keyed by `(seed, epoch, step)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleStream {
    seed: u64,
}

impl SampleStream {
    pub fn new(seed: u64) -> Self {
        SampleStream { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Raw 64-bit word for the given key.
    #[inline]
    pub fn word(&self, epoch: u64, step: u64) -> u64 {
        let k = mix64(self.seed.wrapping_add(GOLDEN));
        let k = mix64(k ^ epoch.wrapping_mul(GOLDEN).wrapping_add(0x632B_E59B_D9B4_E019));
        mix64(k ^ step.wrapping_mul(0xD6E8_FEB8_6659_FD93).wrapping_add(GOLDEN))
    }

    /// Index uniform in `0..n` (multiply-shift reduction; bias below `n / 2^64`).
    #[inline]
    pub fn index(&self, epoch: u64, step: u64, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.word(epoch, step) as u128 * n as u128) >> 64) as usize
    }
}
