//! A deliberately small log-linear sequence policy.
//!
//! The model assigns each token a logit from three additive parts — a
//! context projection, a bigram table row selected by the previous token,
//! and a bias — and normalizes with log-softmax:
//!
//! ```text
//! logit_t(v) = ctx_proj(v) + bigram[prev_t, v] + bias(v)
//! ctx_proj(v) = sum_j weights[v, j] * context[j]
//! lp_t = logit_t(y_t) - logsumexp_v logit_t(v)
//! ```
//!
//! Position 0 conditions on a fixed begin token (id 0) unless the caller
//! supplies a prompt, in which case the last prompt token plays that role.
//! This is just enough structure to prefer plausible token sequences over
//! corrupted ones, which is all the ranking-objective experiments need,
//! while keeping exact log-probabilities and exact gradients cheap.
//!
//! The softmax gradient is the classic `(onehot - p)` residual. Because the
//! context is constant across positions, the weights gradient collapses to
//! a single rank-1 outer product:
//!
//! ```text
//! d lp / d bias          = sum_t (e_{y_t} - p_t)
//! d lp / d bigram[prev]  = (e_{y_t} - p_t)          (row per position)
//! d lp / d weights       = (sum_t (e_{y_t} - p_t)) ⊗ context
//! ```

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rankloss::logsumexp;

/// Previous-token id used for position 0 when no prompt is given.
pub const BEGIN_TOKEN: usize = 0;

const CHECKPOINT_HEADER: &str = "rcc-policy v1";

/// Log-linear sequence model over a fixed vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    vocab_size: usize,
    ctx_dim: usize,
    weights: Vec<f64>, // vocab_size x ctx_dim, row-major
    bigram: Vec<f64>,  // vocab_size x vocab_size, row per previous token
    bias: Vec<f64>,    // vocab_size
}

/// Gradient of some scalar with respect to every policy parameter, stored
/// with the same shapes as [`ToyPolicy`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrad {
    pub weights: Vec<f64>,
    pub bigram: Vec<f64>,
    pub bias: Vec<f64>,
}

impl PolicyGrad {
    pub fn zeros(vocab_size: usize, ctx_dim: usize) -> Self {
        PolicyGrad {
            weights: vec![0.0; vocab_size * ctx_dim],
            bigram: vec![0.0; vocab_size * vocab_size],
            bias: vec![0.0; vocab_size],
        }
    }

    pub fn scale(&mut self, c: f64) {
        for x in self
            .weights
            .iter_mut()
            .chain(self.bigram.iter_mut())
            .chain(self.bias.iter_mut())
        {
            *x *= c;
        }
    }

    pub fn tensors(&self) -> [&[f64]; 3] {
        [&self.weights, &self.bigram, &self.bias]
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.bigram.iter())
            .chain(self.bias.iter())
            .all(|x| x.is_finite())
    }
}

impl ToyPolicy {
    /// Fresh policy with parameters drawn uniformly from ±0.1, fully
    /// determined by the seed.
    pub fn new_random(vocab_size: usize, ctx_dim: usize, seed: u64) -> Result<Self> {
        Self::check_dims(vocab_size, ctx_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect()
        };
        Ok(ToyPolicy {
            vocab_size,
            ctx_dim,
            weights: draw(vocab_size * ctx_dim),
            bigram: draw(vocab_size * vocab_size),
            bias: draw(vocab_size),
        })
    }

    fn check_dims(vocab_size: usize, ctx_dim: usize) -> Result<()> {
        if vocab_size < 2 || ctx_dim == 0 {
            return Err(Error::InvalidInput(format!(
                "policy needs vocab_size >= 2 and ctx_dim >= 1, got {vocab_size}/{ctx_dim}"
            )));
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn ctx_dim(&self) -> usize {
        self.ctx_dim
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bigram.len() + self.bias.len()
    }

    /// Parameter tensors in the fixed order (weights, bigram, bias); the
    /// optimizer relies on this order staying put.
    pub fn tensors_mut(&mut self) -> [&mut [f64]; 3] {
        [&mut self.weights, &mut self.bigram, &mut self.bias]
    }

    fn validate_context(&self, context: &[f64]) -> Result<()> {
        if context.len() != self.ctx_dim {
            return Err(Error::InvalidInput(format!(
                "context has {} components, policy expects {}",
                context.len(),
                self.ctx_dim
            )));
        }
        if context.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("context contains a non-finite value".into()));
        }
        Ok(())
    }

    fn validate_tokens(&self, name: &str, tokens: &[usize], allow_empty: bool) -> Result<()> {
        if tokens.is_empty() && !allow_empty {
            return Err(Error::InvalidInput(format!("{name} must be non-empty")));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.vocab_size) {
            return Err(Error::InvalidInput(format!(
                "{name} contains token id {bad}, vocabulary has {} entries",
                self.vocab_size
            )));
        }
        Ok(())
    }

    fn context_projection(&self, context: &[f64]) -> Vec<f64> {
        let mut proj = vec![0.0; self.vocab_size];
        for (v, slot) in proj.iter_mut().enumerate() {
            let row = &self.weights[v * self.ctx_dim..(v + 1) * self.ctx_dim];
            *slot = row.iter().zip(context).map(|(w, c)| w * c).sum();
        }
        proj
    }

    fn logits(&self, proj: &[f64], prev: usize) -> Vec<f64> {
        let row = &self.bigram[prev * self.vocab_size..(prev + 1) * self.vocab_size];
        proj.iter()
            .zip(row)
            .zip(&self.bias)
            .map(|((p, b), bias)| p + b + bias)
            .collect()
    }

    /// Per-token log-probabilities of `response` given `context`, with the
    /// previous-token conditioning seeded by the last `prompt` token (or the
    /// fixed begin token when the prompt is empty).
    pub fn response_token_logprobs(
        &self,
        context: &[f64],
        prompt: &[usize],
        response: &[usize],
    ) -> Result<Vec<f64>> {
        self.validate_context(context)?;
        self.validate_tokens("prompt", prompt, true)?;
        self.validate_tokens("response", response, false)?;
        let proj = self.context_projection(context);
        let mut prev = prompt.last().copied().unwrap_or(BEGIN_TOKEN);
        let mut out = Vec::with_capacity(response.len());
        for &tok in response {
            let logits = self.logits(&proj, prev);
            out.push(logits[tok] - logsumexp(&logits));
            prev = tok;
        }
        Ok(out)
    }

    /// Per-token log-probabilities of a bare sequence (no prompt).
    pub fn token_logprobs(&self, context: &[f64], tokens: &[usize]) -> Result<Vec<f64>> {
        self.response_token_logprobs(context, &[], tokens)
    }

    /// Total log-probability of `response` given `context` and `prompt`.
    pub fn response_logprob(
        &self,
        context: &[f64],
        prompt: &[usize],
        response: &[usize],
    ) -> Result<f64> {
        Ok(self.response_token_logprobs(context, prompt, response)?.iter().sum())
    }

    /// Total log-probability of a bare sequence.
    pub fn sequence_logprob(&self, context: &[f64], tokens: &[usize]) -> Result<f64> {
        self.response_logprob(context, &[], tokens)
    }

    /// Add `coeff * d logprob / d params` into `acc` and return the
    /// sequence log-probability. One pass over the response; the weights
    /// part uses the rank-1 structure described in the module docs.
    pub fn add_response_grad(
        &self,
        context: &[f64],
        prompt: &[usize],
        response: &[usize],
        coeff: f64,
        acc: &mut PolicyGrad,
    ) -> Result<f64> {
        self.validate_context(context)?;
        self.validate_tokens("prompt", prompt, true)?;
        self.validate_tokens("response", response, false)?;
        let v = self.vocab_size;
        let proj = self.context_projection(context);
        let mut prev = prompt.last().copied().unwrap_or(BEGIN_TOKEN);
        let mut logprob = 0.0;
        let mut delta_sum = vec![0.0; v];
        for &tok in response {
            let logits = self.logits(&proj, prev);
            let lse = logsumexp(&logits);
            logprob += logits[tok] - lse;
            let bigram_row = &mut acc.bigram[prev * v..(prev + 1) * v];
            for (u, &logit) in logits.iter().enumerate() {
                let delta = ((u == tok) as u8 as f64) - (logit - lse).exp();
                delta_sum[u] += delta;
                bigram_row[u] += coeff * delta;
                acc.bias[u] += coeff * delta;
            }
            prev = tok;
        }
        for (u, &d) in delta_sum.iter().enumerate() {
            let row = &mut acc.weights[u * self.ctx_dim..(u + 1) * self.ctx_dim];
            for (slot, &c) in row.iter_mut().zip(context) {
                *slot += coeff * d * c;
            }
        }
        Ok(logprob)
    }

    /// Gradient of a bare sequence's log-probability.
    pub fn sequence_grad(&self, context: &[f64], tokens: &[usize]) -> Result<(f64, PolicyGrad)> {
        let mut grad = PolicyGrad::zeros(self.vocab_size, self.ctx_dim);
        let lp = self.add_response_grad(context, &[], tokens, 1.0, &mut grad)?;
        Ok((lp, grad))
    }

    /// Order chain positions best-first by sequence log-probability.
    ///
    /// Returns a permutation: `perm[k]` is the index (into `sequences`) of
    /// the rank-`k` sequence. Ties keep their original relative order, so
    /// the result is deterministic even for degenerate policies.
    pub fn rank_chain(&self, context: &[f64], sequences: &[Vec<usize>]) -> Result<Vec<usize>> {
        if sequences.is_empty() {
            return Err(Error::InvalidInput("rank_chain needs at least one sequence".into()));
        }
        let mut scored = Vec::with_capacity(sequences.len());
        for (i, seq) in sequences.iter().enumerate() {
            scored.push((i, self.sequence_logprob(context, seq)?));
        }
        // Stable sort: equal scores stay in input order.
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("scores are finite"));
        Ok(scored.into_iter().map(|(i, _)| i).collect())
    }

    // ── checkpoints ──────────────────────────────────────────────────────

    /// Serialize to the versioned text checkpoint format. Floats are
    /// printed shortest-roundtrip, so save/load is lossless.
    pub fn to_checkpoint_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_HEADER}");
        let _ = writeln!(out, "vocab {}", self.vocab_size);
        let _ = writeln!(out, "ctx {}", self.ctx_dim);
        let mut dump = |name: &str, data: &[f64], cols: usize| {
            let _ = writeln!(out, "{name}");
            for row in data.chunks(cols) {
                let line: Vec<String> = row.iter().map(|x| format!("{x}")).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        };
        dump("weights", &self.weights, self.ctx_dim);
        dump("bigram", &self.bigram, self.vocab_size);
        dump("bias", &self.bias, self.vocab_size);
        out
    }

    pub fn from_checkpoint_string(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Parse(format!("checkpoint: {msg}"));
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == CHECKPOINT_HEADER => {}
            Some(h) => {
                return Err(bad(&format!(
                    "unsupported header '{h}' (expected '{CHECKPOINT_HEADER}')"
                )))
            }
            None => return Err(bad("empty file")),
        }
        let mut dim_line = |key: &str| -> Result<usize> {
            let line = lines.next().ok_or_else(|| bad("truncated before dimensions"))?;
            let rest = line
                .strip_prefix(key)
                .ok_or_else(|| bad(&format!("expected '{key} <n>', got '{line}'")))?;
            rest.trim()
                .parse::<usize>()
                .map_err(|_| bad(&format!("bad dimension in '{line}'")))
        };
        let vocab_size = dim_line("vocab")?;
        let ctx_dim = dim_line("ctx")?;
        Self::check_dims(vocab_size, ctx_dim)?;

        let mut read_tensor = |name: &str, len: usize| -> Result<Vec<f64>> {
            match lines.next() {
                Some(l) if l.trim() == name => {}
                other => return Err(bad(&format!("expected section '{name}', got {other:?}"))),
            }
            let mut data = Vec::with_capacity(len);
            while data.len() < len {
                let line = lines
                    .next()
                    .ok_or_else(|| bad(&format!("section '{name}' is truncated")))?;
                for tok in line.split_whitespace() {
                    let x: f64 = tok
                        .parse()
                        .map_err(|_| bad(&format!("bad float '{tok}' in '{name}'")))?;
                    if !x.is_finite() {
                        return Err(bad(&format!("non-finite value in '{name}'")));
                    }
                    data.push(x);
                }
            }
            if data.len() != len {
                return Err(bad(&format!(
                    "section '{name}' has {} values, expected {len}",
                    data.len()
                )));
            }
            Ok(data)
        };
        let weights = read_tensor("weights", vocab_size * ctx_dim)?;
        let bigram = read_tensor("bigram", vocab_size * vocab_size)?;
        let bias = read_tensor("bias", vocab_size)?;
        Ok(ToyPolicy { vocab_size, ctx_dim, weights, bigram, bias })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::dataset::write_atomic(path, self.to_checkpoint_string().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_checkpoint_string(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_policy() -> ToyPolicy {
        ToyPolicy::new_random(6, 3, 42).unwrap()
    }

    fn ctx() -> Vec<f64> {
        vec![0.3, -0.8, 0.5]
    }

    #[test]
    fn token_distribution_normalizes() {
        let p = small_policy();
        let total: f64 = (0..6)
            .map(|v| p.sequence_logprob(&ctx(), &[v]).unwrap().exp())
            .sum();
        assert_relative_eq!(total, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn sequence_logprob_is_sum_of_token_logprobs() {
        let p = small_policy();
        let tokens = vec![1, 4, 4, 0, 2];
        let per_token = p.token_logprobs(&ctx(), &tokens).unwrap();
        let total = p.sequence_logprob(&ctx(), &tokens).unwrap();
        assert_relative_eq!(total, per_token.iter().sum::<f64>(), max_relative = 1e-12);
        assert!(per_token.iter().all(|lp| *lp <= 0.0));
    }

    #[test]
    fn scoring_is_pure() {
        let p = small_policy();
        let a = p.sequence_logprob(&ctx(), &[2, 3, 1]).unwrap();
        let b = p.sequence_logprob(&ctx(), &[2, 3, 1]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prompt_conditions_the_first_token() {
        let p = small_policy();
        let with_prompt = p.response_logprob(&ctx(), &[5], &[2]).unwrap();
        let without = p.response_logprob(&ctx(), &[], &[2]).unwrap();
        // Prompt token 5 selects a different bigram row than the begin token.
        assert_ne!(with_prompt, without);
        // A prompt ending in the begin token is the same as no prompt.
        let begin = p.response_logprob(&ctx(), &[BEGIN_TOKEN], &[2]).unwrap();
        assert_eq!(begin, without);
    }

    #[test]
    fn same_seed_same_policy() {
        let a = ToyPolicy::new_random(8, 4, 7).unwrap();
        let b = ToyPolicy::new_random(8, 4, 7).unwrap();
        assert_eq!(a, b);
        let c = ToyPolicy::new_random(8, 4, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gradient_matches_finite_differences_over_all_parameters() {
        let policy = ToyPolicy::new_random(4, 2, 3).unwrap();
        let context = vec![0.7, -0.2];
        let tokens = vec![1, 3, 0, 2];
        let (_, grad) = policy.sequence_grad(&context, &tokens).unwrap();

        let flat_grad: Vec<f64> = grad
            .weights
            .iter()
            .chain(grad.bigram.iter())
            .chain(grad.bias.iter())
            .copied()
            .collect();

        let base = policy.clone();
        let nw = base.weights.len();
        let nb = base.bigram.len();
        let f = |flat: &[f64]| {
            let mut p = base.clone();
            p.weights.copy_from_slice(&flat[..nw]);
            p.bigram.copy_from_slice(&flat[nw..nw + nb]);
            p.bias.copy_from_slice(&flat[nw + nb..]);
            p.sequence_logprob(&context, &tokens).unwrap()
        };
        let flat: Vec<f64> = base
            .weights
            .iter()
            .chain(base.bigram.iter())
            .chain(base.bias.iter())
            .copied()
            .collect();
        let fd = crate::rankloss::finite_difference_gradient(f, &flat, 1e-5);
        assert!(
            crate::rankloss::gradients_agree(&flat_grad, &fd, 1e-6),
            "parameter gradient disagrees with finite differences"
        );
    }

    #[test]
    fn grad_accumulation_scales_linearly() {
        let p = small_policy();
        let tokens = vec![1, 2];
        let mut once = PolicyGrad::zeros(6, 3);
        p.add_response_grad(&ctx(), &[], &tokens, 2.5, &mut once).unwrap();
        let (_, unit) = p.sequence_grad(&ctx(), &tokens).unwrap();
        let mut scaled = unit.clone();
        scaled.scale(2.5);
        for (a, b) in once.bias.iter().zip(&scaled.bias) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
        for (a, b) in once.weights.iter().zip(&scaled.weights) {
            assert_relative_eq!(a, b, max_relative = 1e-12, epsilon = 1e-15);
        }
    }

    #[test]
    fn rank_chain_returns_a_permutation_with_stable_ties() {
        let p = small_policy();
        let seqs = vec![vec![0, 1], vec![1, 0], vec![0, 1], vec![3, 3]];
        let perm = p.rank_chain(&ctx(), &seqs).unwrap();
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
        // Sequences 0 and 2 are identical, hence tied: 0 must precede 2.
        let pos0 = perm.iter().position(|&i| i == 0).unwrap();
        let pos2 = perm.iter().position(|&i| i == 2).unwrap();
        assert!(pos0 < pos2);
    }

    #[test]
    fn degenerate_equal_scores_rank_in_input_order() {
        let mut p = small_policy();
        for t in p.tensors_mut() {
            t.fill(0.0);
        }
        let seqs = vec![vec![1, 2], vec![2, 1], vec![3, 4]];
        assert_eq!(p.rank_chain(&ctx(), &seqs).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn checkpoint_roundtrip_is_lossless() {
        let p = ToyPolicy::new_random(5, 3, 99).unwrap();
        let text = p.to_checkpoint_string();
        assert!(text.starts_with(CHECKPOINT_HEADER));
        let q = ToyPolicy::from_checkpoint_string(&text).unwrap();
        assert_eq!(p, q);
        // Serialization itself is deterministic.
        assert_eq!(text, q.to_checkpoint_string());
    }

    #[test]
    fn checkpoint_parser_rejects_garbage() {
        assert!(ToyPolicy::from_checkpoint_string("").is_err());
        assert!(ToyPolicy::from_checkpoint_string("rcc-policy v9\nvocab 4\nctx 2\n").is_err());
        let p = ToyPolicy::new_random(4, 2, 1).unwrap();
        let truncated: String = p
            .to_checkpoint_string()
            .lines()
            .take(6)
            .collect::<Vec<_>>()
            .join("\n");
        assert!(ToyPolicy::from_checkpoint_string(&truncated).is_err());
    }

    #[test]
    fn out_of_vocabulary_tokens_are_rejected() {
        let p = small_policy();
        assert!(p.sequence_logprob(&ctx(), &[6]).is_err());
        assert!(p.sequence_logprob(&ctx(), &[]).is_err());
        assert!(p.sequence_logprob(&[0.0; 2], &[1]).is_err());
    }
}
