//! Deterministic hashing helpers: content fingerprints and stable
//! sub-seed derivation. Everything here must stay bit-stable across
//! runs and platforms, so no `std::hash` (its output is not guaranteed).

use sha2::{Digest, Sha256};

/// FNV-1a 64-bit over UTF-8 bytes.
pub fn fnv1a64(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer; a counter-based mix of one 64-bit word.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Map a u64 to a double in [-1, 1).
pub fn unit_f64(x: u64) -> f64 {
    ((x >> 11) as f64) / ((1u64 << 53) as f64) * 2.0 - 1.0
}

/// Derive a sub-seed for a named purpose so stages do not share RNG streams.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    splitmix64(master ^ fnv1a64(label) ^ splitmix64(index))
}

/// Hex SHA-256 fingerprint over a canonical list of parts.
/// Parts are length-prefixed so concatenation cannot collide.
pub fn fingerprint(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(32);
    for byte in digest.iter().take(16) {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}
