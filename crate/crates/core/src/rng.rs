//! Deterministic PRNG for scenario generation.
//!
//! The whole simulator must produce byte-identical output for a fixed seed,
//! so randomness comes from a self-contained splitmix64 stream instead of a
//! platform- or version-dependent generator. Independent subsystems derive
//! their own streams with [`DetRng::labeled`] so that, for example, loading
//! an attack program can never shift the traffic generator's sequence.

/// 64-bit FNV-1a over a byte slice. Used for stream labels and scenario hashes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// splitmix64 stream with a fixed, documented state transition.
#[derive(Debug, Clone)]
pub struct DetRng {
    state: u64,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        DetRng { state: seed }
    }

    /// Derive an independent stream for a named subsystem.
    pub fn labeled(seed: u64, label: &str) -> Self {
        DetRng::new(seed ^ fnv1a64(label.as_bytes()))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    /// Uniform-ish value in `0..n`. Modulo bias is irrelevant at simulator scale.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.next_u64() % n
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    pub fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len() as u64) as usize]
    }

    /// Lowercase hex string of `n` characters.
    pub fn hex_string(&mut self, n: usize) -> String {
        const HEX: &[u8; 16] = b"0123456789abcdef";
        let mut out = String::with_capacity(n);
        for _ in 0..n {
            out.push(HEX[self.below(16) as usize] as char);
        }
        out
    }
}
