use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Named, splittable random stream.
///
/// Each stream is a ChaCha (counter-based) generator keyed by a 32-byte key.
/// [`RngStream::split`] derives a child key by hashing the parent key with a
/// name, so a child's output depends only on the root seed and the path of
/// names, never on how much the parent has already been consumed.
#[derive(Debug, Clone)]
pub struct RngStream {
    key: [u8; 32],
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"mdi-rng-root");
        hasher.update(seed.to_le_bytes());
        Self::from_key(hasher.finalize().into())
    }

    fn from_key(key: [u8; 32]) -> Self {
        Self {
            key,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn split(&self, name: &str) -> RngStream {
        let mut hasher = Sha256::new();
        hasher.update(self.key);
        hasher.update((name.len() as u64).to_le_bytes());
        hasher.update(name.as_bytes());
        Self::from_key(hasher.finalize().into())
    }

    pub fn split_index(&self, name: &str, index: u64) -> RngStream {
        self.split(&format!("{name}#{index}"))
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        // 53 random mantissa bits.
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        // Rejection sampling keeps the draw exactly uniform.
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.rng.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_independent_of_parent_consumption() {
        let mut a = RngStream::new(7);
        let b = RngStream::new(7);
        for _ in 0..10 {
            a.uniform();
        }
        let mut ca = a.split("dropout");
        let mut cb = b.split("dropout");
        assert_eq!(ca.next_u64(), cb.next_u64());
        let mut other = b.split("init");
        assert_ne!(cb.next_u64(), other.next_u64());
    }

    #[test]
    fn below_stays_in_range() {
        let mut r = RngStream::new(1);
        let mut seen = [false; 5];
        for _ in 0..200 {
            seen[r.below(5)] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }
}
