//! Counter-based randomness.
//!
//! Every draw is a pure function of `(seed, stream, id, counter)`. There is no
//! generator state, so adding or removing draws in one stream (or for one id)
//! can never shift the values seen by any other.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// Incremental 64-bit FNV-1a.
#[derive(Debug, Clone, Copy)]
pub struct Fnv1a(u64);

impl Default for Fnv1a {
    fn default() -> Self {
        Fnv1a(FNV_OFFSET)
    }
}

impl Fnv1a {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = Fnv1a::new();
    h.update(bytes);
    h.finish()
}

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Raw 64-bit draw for a derivation tuple.
pub fn draw(seed: u64, stream: &str, id: &str, counter: u64) -> u64 {
    let mut h = Fnv1a::new();
    h.update(stream.as_bytes());
    // 0xff never occurs in UTF-8, so ("ab","c") and ("a","bc") hash apart.
    h.update(&[0xff]);
    h.update(id.as_bytes());
    let mut x = mix64(seed.wrapping_add(GOLDEN_GAMMA));
    x = mix64(x ^ h.finish());
    mix64(x ^ counter.wrapping_mul(GOLDEN_GAMMA))
}

/// Map a raw draw to `[0, 1)` using the top 53 bits.
pub fn to_unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn draw_unit(seed: u64, stream: &str, id: &str, counter: u64) -> f64 {
    to_unit(draw(seed, stream, id, counter))
}
