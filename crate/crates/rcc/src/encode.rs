//! Deterministic text encoding.
//!
//! Everything here is a pure function of its inputs so that datasets and
//! reports are byte-identical across runs, platforms, and thread counts.
//! `std::collections::hash_map::DefaultHasher` is explicitly *not* used:
//! its output is allowed to change between Rust releases, which would
//! silently re-tokenize every stored dataset.

/// 64-bit FNV-1a over raw bytes. Stable forever; good enough dispersion
/// for vocabulary bucketing and seed derivation.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// SplitMix64 finalizer: a cheap, well-mixed 64 -> 64 bit permutation.
/// Used to derive independent seed streams from (seed, index) pairs.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and an arbitrary label.
///
/// Children with different labels are statistically independent, and the
/// mapping never depends on iteration order, so work can be distributed
/// over threads without changing any output.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    splitmix64(seed ^ fnv1a64(label.as_bytes()))
}

/// Lowercase a token and strip non-alphanumeric edges ("mat." -> "mat").
pub fn normalize_token(token: &str) -> String {
    token
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

/// Whitespace tokenization with per-token normalization; empty tokens
/// (pure punctuation) are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(normalize_token)
        .filter(|t| !t.is_empty())
        .collect()
}

/// Map text onto a token-id sequence by hashing each normalized word into
/// a fixed vocabulary. Collisions are tolerated: the consumers only need
/// determinism and "different words usually get different ids".
pub fn encode_text(text: &str, vocab_size: usize) -> Vec<usize> {
    assert!(vocab_size > 0, "vocab_size must be positive");
    tokenize(text)
        .iter()
        .map(|t| (fnv1a64(t.as_bytes()) % vocab_size as u64) as usize)
        .collect()
}

/// Hash text into a dense context vector with components in [-1, 1].
///
/// Each token contributes a pseudo-random direction derived from its hash;
/// the result is the mean contribution, so short and long texts live on a
/// comparable scale.
pub fn featurize_text(text: &str, dim: usize) -> Vec<f64> {
    assert!(dim > 0, "dim must be positive");
    let tokens = tokenize(text);
    let mut ctx = vec![0.0; dim];
    if tokens.is_empty() {
        return ctx;
    }
    for t in &tokens {
        let h = fnv1a64(t.as_bytes());
        for (j, slot) in ctx.iter_mut().enumerate() {
            let bits = splitmix64(h ^ (j as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            // Map the top 53 bits to [0, 1), then to [-1, 1].
            let unit = (bits >> 11) as f64 / (1u64 << 53) as f64;
            *slot += 2.0 * unit - 1.0;
        }
    }
    let n = tokens.len() as f64;
    for slot in ctx.iter_mut() {
        *slot /= n;
    }
    ctx
}
