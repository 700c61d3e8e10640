//! Counter-based random streams.
//!
//! Every stochastic stage draws from Philox4x32-10 keyed by the session seed.
//! A stream is addressed by `(domain, index)`, so the draws for clock cycle
//! `c` never depend on how many cycles were simulated before it, on batch
//! boundaries, or on thread scheduling.

use rand::RngCore;

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = u64::from(a) * u64::from(b);
    ((p >> 32) as u32, p as u32)
}

/// The Philox4x32 block function with 10 rounds.
#[inline]
pub fn philox4x32_10(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

/// Independent uses of the session seed. Each gets its own counter space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Domain {
    Cycle = 1,
    Batch = 2,
    Shuffle = 3,
    Flip = 4,
    CascadePermutation = 5,
    CascadeVerify = 6,
    ToeplitzSeed = 7,
    Test = 0xFFFF,
}

/// A single Philox stream. Implements [`RngCore`] so `rand`/`rand_distr`
/// samplers can consume it.
#[derive(Debug, Clone)]
pub struct StreamRng {
    key: [u32; 2],
    stream: u64,
    domain: u32,
    block: u32,
    buf: [u32; 4],
    used: usize,
}

impl StreamRng {
    pub fn new(seed: u64, domain: Domain, stream: u64) -> Self {
        Self {
            key: [seed as u32, (seed >> 32) as u32],
            stream,
            domain: domain as u32,
            block: 0,
            buf: [0; 4],
            used: 4,
        }
    }

    #[inline]
    fn refill(&mut self) {
        self.buf = philox4x32_10(
            [
                self.block,
                self.stream as u32,
                (self.stream >> 32) as u32,
                self.domain,
            ],
            self.key,
        );
        self.block = self.block.wrapping_add(1);
        self.used = 0;
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn bit(&mut self) -> u8 {
        (self.next_u32() & 1) as u8
    }

    /// Unbiased integer in `[0, bound)` by rejection.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        let zone = u64::MAX - (u64::MAX - bound + 1) % bound;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return v % bound;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

impl RngCore for StreamRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        if self.used == 4 {
            self.refill();
        }
        let v = self.buf[self.used];
        self.used += 1;
        v
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        let lo = u64::from(self.next_u32());
        let hi = u64::from(self.next_u32());
        (hi << 32) | lo
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(4) {
            let v = self.next_u32().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}

/// Derive a child seed so that stages seeded from one session seed stay
/// decorrelated.
pub fn derive_seed(seed: u64, domain: Domain, index: u64) -> u64 {
    StreamRng::new(seed, domain, index).next_u64()
}
