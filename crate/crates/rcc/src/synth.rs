//! Synthetic token-chain datasets with a known ground-truth order.
//!
//! Each example starts from a clean sequence sampled from a peaked,
//! context-conditioned distribution, then applies more and more token
//! corruptions. Rank `k` carries exactly `k` corrupted positions, so the
//! correct ranking is the generation order and every ranking metric has an
//! exact target.
//!
//! Two corruption layouts matter for the objective comparisons:
//!
//! * `nested` — rank `k+1` corrupts everything rank `k` corrupted plus one
//!   fresh position. Quality degrades along a single path, which is the
//!   regime listwise objectives are built for.
//! * `independent` — every rank draws its own corrupted positions from
//!   scratch. Neighboring ranks are not supersets of each other, only the
//!   corruption *count* still grows.
//!
//! Generation is deterministic: example `i` uses an rng stream derived from
//! `(seed, i)`, so any subset of examples can be produced in any order (or
//! on any number of threads) with identical results.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encode::derive_seed;
use crate::error::{Error, Result};

/// How corrupted positions relate across ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    Nested,
    Independent,
}

impl std::fmt::Display for CorruptionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CorruptionMode::Nested => "nested",
            CorruptionMode::Independent => "independent",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub count: usize,
    pub vocab_size: usize,
    pub ctx_dim: usize,
    pub seq_len: usize,
    /// Number of corruption steps; an example holds `chain_len + 1`
    /// sequences (the clean one plus one per step).
    pub chain_len: usize,
    pub mode: CorruptionMode,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 1000,
            vocab_size: 32,
            ctx_dim: 16,
            seq_len: 24,
            chain_len: 4,
            mode: CorruptionMode::Nested,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Config("vocab_size must be at least 2".into()));
        }
        if self.ctx_dim == 0 {
            return Err(Error::Config("ctx_dim must be at least 1".into()));
        }
        if self.chain_len == 0 {
            return Err(Error::Config("chain_len must be at least 1".into()));
        }
        if self.seq_len < self.chain_len {
            return Err(Error::Config(format!(
                "seq_len ({}) must be at least chain_len ({}): every corruption needs its own position",
                self.seq_len, self.chain_len
            )));
        }
        Ok(())
    }
}

/// One ranked example: sequences ordered best-first, with the number of
/// corrupted positions per rank (always `0, 1, 2, ...`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthExample {
    pub context: Vec<f64>,
    pub chain_tokens: Vec<Vec<usize>>,
    pub corruption_counts: Vec<usize>,
}

impl SynthExample {
    /// Structural invariants every consumer relies on; `mode` additionally
    /// checks the relation between corrupted position sets.
    pub fn verify(&self, mode: CorruptionMode) -> Result<()> {
        let n = self.chain_tokens.len();
        if n < 2 {
            return Err(Error::Invariant("example has fewer than 2 sequences".into()));
        }
        if self.corruption_counts.len() != n {
            return Err(Error::Invariant("corruption_counts length mismatch".into()));
        }
        for (k, &c) in self.corruption_counts.iter().enumerate() {
            if c != k {
                return Err(Error::Invariant(format!(
                    "corruption_counts[{k}] = {c}, expected {k}"
                )));
            }
        }
        let clean = &self.chain_tokens[0];
        let mut prev_positions: Vec<usize> = Vec::new();
        for (k, seq) in self.chain_tokens.iter().enumerate() {
            if seq.len() != clean.len() {
                return Err(Error::Invariant(format!("sequence {k} length differs")));
            }
            let positions: Vec<usize> = seq
                .iter()
                .zip(clean)
                .enumerate()
                .filter(|(_, (a, b))| a != b)
                .map(|(i, _)| i)
                .collect();
            if positions.len() != k {
                return Err(Error::Invariant(format!(
                    "sequence {k} differs from clean at {} positions, expected {k}",
                    positions.len()
                )));
            }
            if mode == CorruptionMode::Nested && !prev_positions.iter().all(|p| positions.contains(p))
            {
                return Err(Error::Invariant(format!(
                    "sequence {k} does not extend the previous corruption set"
                )));
            }
            prev_positions = positions;
        }
        Ok(())
    }
}

/// Token distribution used for clean sequences: a fixed random projection
/// of the context, scaled so the softmax is decidedly non-uniform. Shared
/// by all examples of a dataset (derived from the dataset seed).
struct Generator {
    vocab_size: usize,
    proj: Vec<f64>, // vocab_size x ctx_dim
}

impl Generator {
    fn new(cfg: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "synth-generator"));
        // Uniform(-g, g) entries give logits with standard deviation
        // g * sqrt(ctx_dim) / 3 for a Uniform(-1, 1) context; g = 9/sqrt(d)
        // targets a logit spread of about 3 nats.
        let g = 9.0 / (cfg.ctx_dim as f64).sqrt();
        let proj = (0..cfg.vocab_size * cfg.ctx_dim)
            .map(|_| rng.gen_range(-g..g))
            .collect();
        Generator { vocab_size: cfg.vocab_size, proj }
    }

    fn sample_clean(&self, context: &[f64], len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let d = context.len();
        let logits: Vec<f64> = (0..self.vocab_size)
            .map(|v| {
                self.proj[v * d..(v + 1) * d]
                    .iter()
                    .zip(context)
                    .map(|(w, c)| w * c)
                    .sum()
            })
            .collect();
        let lse = crate::rankloss::logsumexp(&logits);
        let probs: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
        (0..len)
            .map(|_| {
                let mut u: f64 = rng.gen();
                for (v, p) in probs.iter().enumerate() {
                    u -= p;
                    if u <= 0.0 {
                        return v;
                    }
                }
                self.vocab_size - 1 // fp slack: u did not hit zero
            })
            .collect()
    }
}

/// Replace the token at `pos` with a uniformly random different one.
fn corrupt_at(seq: &mut [usize], pos: usize, vocab_size: usize, rng: &mut ChaCha8Rng) {
    let old = seq[pos];
    let draw = rng.gen_range(0..vocab_size - 1);
    seq[pos] = if draw >= old { draw + 1 } else { draw };
}

/// Generate `cfg.count` ranked examples. Deterministic in `cfg`; examples
/// are independent of each other and of `count`.
pub fn make_synth_dataset(cfg: &SynthConfig) -> Result<Vec<SynthExample>> {
    cfg.validate()?;
    let generator = Generator::new(cfg);
    (0..cfg.count).map(|i| make_example(cfg, &generator, i)).collect()
}

fn make_example(cfg: &SynthConfig, generator: &Generator, index: usize) -> Result<SynthExample> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("synth-example-{index}")));
    let context: Vec<f64> = (0..cfg.ctx_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let clean = generator.sample_clean(&context, cfg.seq_len, &mut rng);

    let mut chain_tokens = Vec::with_capacity(cfg.chain_len + 1);
    chain_tokens.push(clean.clone());
    match cfg.mode {
        CorruptionMode::Nested => {
            let positions = sample(&mut rng, cfg.seq_len, cfg.chain_len).into_vec();
            for k in 0..cfg.chain_len {
                let mut next = chain_tokens[k].clone();
                corrupt_at(&mut next, positions[k], cfg.vocab_size, &mut rng);
                chain_tokens.push(next);
            }
        }
        CorruptionMode::Independent => {
            for k in 1..=cfg.chain_len {
                let mut next = clean.clone();
                for pos in sample(&mut rng, cfg.seq_len, k) {
                    corrupt_at(&mut next, pos, cfg.vocab_size, &mut rng);
                }
                chain_tokens.push(next);
            }
        }
    }

    let example = SynthExample {
        context,
        chain_tokens,
        corruption_counts: (0..=cfg.chain_len).collect(),
    };
    example.verify(cfg.mode)?;
    Ok(example)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(mode: CorruptionMode) -> SynthConfig {
        SynthConfig {
            count: 25,
            vocab_size: 16,
            ctx_dim: 8,
            seq_len: 12,
            chain_len: 3,
            mode,
            seed: 5,
        }
    }

    #[test]
    fn same_config_same_dataset() {
        let cfg = small_cfg(CorruptionMode::Nested);
        assert_eq!(make_synth_dataset(&cfg).unwrap(), make_synth_dataset(&cfg).unwrap());
    }

    #[test]
    fn different_seed_different_dataset() {
        let a = make_synth_dataset(&small_cfg(CorruptionMode::Nested)).unwrap();
        let mut cfg = small_cfg(CorruptionMode::Nested);
        cfg.seed = 6;
        let b = make_synth_dataset(&cfg).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn examples_do_not_depend_on_count() {
        // Growing the dataset must not perturb already-generated examples —
        // this is what makes parallel generation safe too.
        let small = make_synth_dataset(&small_cfg(CorruptionMode::Nested)).unwrap();
        let mut big_cfg = small_cfg(CorruptionMode::Nested);
        big_cfg.count = 50;
        let big = make_synth_dataset(&big_cfg).unwrap();
        assert_eq!(&big[..25], &small[..]);
    }

    #[test]
    fn nested_corruptions_grow_along_one_path() {
        for ex in make_synth_dataset(&small_cfg(CorruptionMode::Nested)).unwrap() {
            ex.verify(CorruptionMode::Nested).unwrap();
            // Consecutive ranks differ in exactly one position.
            for k in 1..ex.chain_tokens.len() {
                let diff = ex.chain_tokens[k]
                    .iter()
                    .zip(&ex.chain_tokens[k - 1])
                    .filter(|(a, b)| a != b)
                    .count();
                assert_eq!(diff, 1);
            }
        }
    }

    #[test]
    fn independent_corruptions_break_the_nesting() {
        let data = make_synth_dataset(&small_cfg(CorruptionMode::Independent)).unwrap();
        for ex in &data {
            ex.verify(CorruptionMode::Independent).unwrap();
        }
        // With 12 positions and fresh draws per rank, at least one example
        // must violate the superset property — otherwise the mode is not
        // actually independent.
        let any_non_nested = data.iter().any(|ex| ex.verify(CorruptionMode::Nested).is_err());
        assert!(any_non_nested);
    }

    #[test]
    fn corruption_counts_are_exact() {
        for mode in [CorruptionMode::Nested, CorruptionMode::Independent] {
            for ex in make_synth_dataset(&small_cfg(mode)).unwrap() {
                assert_eq!(ex.corruption_counts, vec![0, 1, 2, 3]);
                for (k, seq) in ex.chain_tokens.iter().enumerate() {
                    let diff = seq
                        .iter()
                        .zip(&ex.chain_tokens[0])
                        .filter(|(a, b)| a != b)
                        .count();
                    assert_eq!(diff, k);
                }
            }
        }
    }

    #[test]
    fn tokens_are_in_vocabulary() {
        let cfg = small_cfg(CorruptionMode::Nested);
        for ex in make_synth_dataset(&cfg).unwrap() {
            for seq in &ex.chain_tokens {
                assert_eq!(seq.len(), cfg.seq_len);
                assert!(seq.iter().all(|&t| t < cfg.vocab_size));
            }
        }
    }

    #[test]
    fn config_validation_catches_impossible_shapes() {
        let mut cfg = small_cfg(CorruptionMode::Nested);
        cfg.chain_len = 13; // > seq_len
        assert!(make_synth_dataset(&cfg).is_err());
        let mut cfg = small_cfg(CorruptionMode::Nested);
        cfg.vocab_size = 1;
        assert!(make_synth_dataset(&cfg).is_err());
        let mut cfg = small_cfg(CorruptionMode::Nested);
        cfg.chain_len = 0;
        assert!(make_synth_dataset(&cfg).is_err());
    }

    #[test]
    fn records_roundtrip_through_jsonl() {
        let data = make_synth_dataset(&small_cfg(CorruptionMode::Nested)).unwrap();
        let bytes = crate::dataset::to_jsonl(&data).unwrap();
        let back: Vec<SynthExample> =
            crate::dataset::parse_jsonl(std::str::from_utf8(&bytes).unwrap(), "mem").unwrap();
        assert_eq!(back, data);
    }
}
