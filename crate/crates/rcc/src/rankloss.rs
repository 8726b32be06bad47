//! Listwise and pairwise preference losses over scored caption chains.
//!
//! A *chain* is an ordered list of responses, best first. Each response has
//! a sequence log-probability under the policy being trained and under a
//! frozen reference policy. Writing `d_i = policy_i - ref_i` and
//! `r_i = beta * d_i` for the implicit reward of rank `i`, the objectives
//! are:
//!
//! ```text
//! pl_dpo    L = -log P(chain) = sum_i [ logsumexp_{j>=i}(r_j) - r_i ]
//! bt_dpo    L = softplus(-(r_w - r_l))            (one winner, one loser)
//! mpo       L = mean_{j>0} softplus(-(r_0 - r_j)) (winner vs each loser)
//! hinge     L = 2/(n(n-1)) * sum_{i<j} max(0, s_j - s_i)
//! ranknet   L = 2/(n(n-1)) * sum_{i<j} softplus(s_j - s_i)
//! ntp       L = -mean(token_logprobs)
//! ```
//!
//! `hinge` and `ranknet` consume raw scores (here: policy sequence
//! log-probabilities) and need no reference model. All functions are pure,
//! allocate only their outputs, and return analytic gradients; there is no
//! tape or autodiff anywhere. Every log/exp goes through `logsumexp`,
//! `softplus`, or `sigmoid` below, so values and gradients stay finite for
//! inputs up to around |700| — the interesting failure mode of a naive
//! `exp` — and the gradient of each loss has one entry per response.
//!
//! Gradient derivations are in the doc comment of each function.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ─────────────────────────────────────────────────────────────────────────
// Stable scalar kernels
// ─────────────────────────────────────────────────────────────────────────

/// log(1 + e^x) without overflow for large |x|.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// 1 / (1 + e^-x) without overflow for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(e^a + e^b), max-shifted.
pub fn logaddexp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// log sum_i e^{x_i}, max-shifted. Panics on empty input (callers validate).
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Per-rank normalizer of the sequential choice model, shifted by the
/// rank's own reward:
///
/// ```text
/// term_i = log sum_{j >= i} e^{r_j - r_i}
/// ```
///
/// The `j == i` element contributes exactly 1, so `term_i >= 0` and the
/// computation never subtracts two nearly-equal logs — important when one
/// reward dominates its suffix and the term is tiny. For small exponents
/// this is `ln_1p` of the remainder sum; for large ones a max shift.
fn suffix_norm_terms(r: &[f64]) -> Vec<f64> {
    let n = r.len();
    let mut terms = vec![0.0; n];
    for i in 0..n {
        let rest = &r[i + 1..];
        let m = rest.iter().map(|rj| rj - r[i]).fold(f64::NEG_INFINITY, f64::max);
        terms[i] = if rest.is_empty() {
            0.0
        } else if m < 30.0 {
            rest.iter().map(|rj| (rj - r[i]).exp()).sum::<f64>().ln_1p()
        } else {
            let s: f64 = rest.iter().map(|rj| (rj - r[i] - m).exp()).sum();
            m + ((-m).exp() + s).ln()
        };
    }
    terms
}

fn ensure_finite(name: &str, xs: &[f64]) -> Result<()> {
    if let Some(pos) = xs.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "{name}[{pos}] is not finite ({})",
            xs[pos]
        )));
    }
    Ok(())
}

fn ensure_beta(beta: f64) -> Result<()> {
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "beta must be finite and positive, got {beta}"
        )));
    }
    Ok(())
}

// ─────────────────────────────────────────────────────────────────────────
// Inputs and outputs
// ─────────────────────────────────────────────────────────────────────────

/// A chain of responses ordered best-first, scored by the trainable policy
/// and by the frozen reference. Construction validates the invariants every
/// loss relies on: at least one response, equal lengths, all values finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredChain {
    policy_logprobs: Vec<f64>,
    ref_logprobs: Vec<f64>,
}

impl ScoredChain {
    pub fn new(policy_logprobs: Vec<f64>, ref_logprobs: Vec<f64>) -> Result<Self> {
        if policy_logprobs.is_empty() {
            return Err(Error::InvalidInput("chain has no responses".into()));
        }
        if policy_logprobs.len() != ref_logprobs.len() {
            return Err(Error::InvalidInput(format!(
                "policy/reference length mismatch: {} vs {}",
                policy_logprobs.len(),
                ref_logprobs.len()
            )));
        }
        ensure_finite("policy_logprobs", &policy_logprobs)?;
        ensure_finite("ref_logprobs", &ref_logprobs)?;
        Ok(ScoredChain { policy_logprobs, ref_logprobs })
    }

    pub fn len(&self) -> usize {
        self.policy_logprobs.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty chains
    }

    pub fn policy_logprobs(&self) -> &[f64] {
        &self.policy_logprobs
    }

    pub fn ref_logprobs(&self) -> &[f64] {
        &self.ref_logprobs
    }

    /// beta * (policy_i - ref_i) for every rank.
    fn rewards(&self, beta: f64) -> Vec<f64> {
        self.policy_logprobs
            .iter()
            .zip(&self.ref_logprobs)
            .map(|(p, r)| beta * (p - r))
            .collect()
    }

    /// Keep only the first `n` responses (used when an objective consumes a
    /// prefix of the chain, e.g. a pairwise loss on a longer chain).
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::InvalidInput(format!(
                "cannot truncate chain of {} responses to {n}",
                self.len()
            )));
        }
        Ok(ScoredChain {
            policy_logprobs: self.policy_logprobs[..n].to_vec(),
            ref_logprobs: self.ref_logprobs[..n].to_vec(),
        })
    }
}

/// Which ranking objective to optimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    PlDpo,
    BtDpo,
    Mpo,
    Hinge,
    Ranknet,
}

impl Objective {
    pub const ALL: [Objective; 5] = [
        Objective::PlDpo,
        Objective::BtDpo,
        Objective::Mpo,
        Objective::Hinge,
        Objective::Ranknet,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Objective::PlDpo => "pl_dpo",
            Objective::BtDpo => "bt_dpo",
            Objective::Mpo => "mpo",
            Objective::Hinge => "hinge",
            Objective::Ranknet => "ranknet",
        }
    }

    /// Smallest chain the objective is defined on.
    pub fn min_chain_len(&self) -> usize {
        match self {
            Objective::PlDpo => 1,
            _ => 2,
        }
    }

    /// How many leading responses the objective actually consumes from a
    /// chain of `n`: the pairwise winner/loser loss looks at the top two,
    /// everything else uses the full chain.
    pub fn consumed_responses(&self, n: usize) -> usize {
        match self {
            Objective::BtDpo => n.min(2),
            _ => n,
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "pl_dpo" => Ok(Objective::PlDpo),
            "bt_dpo" => Ok(Objective::BtDpo),
            "mpo" => Ok(Objective::Mpo),
            "hinge" => Ok(Objective::Hinge),
            "ranknet" => Ok(Objective::Ranknet),
            other => Err(Error::Config(format!(
                "unknown objective '{other}' (expected pl_dpo, bt_dpo, mpo, hinge, or ranknet)"
            ))),
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Objective selection plus the two knobs shared by every training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub objective: Objective,
    /// Reward temperature on the policy/reference log-ratio.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Weight of the next-token auxiliary term on the best response;
    /// zero disables the term entirely.
    #[serde(default = "default_ntp_weight")]
    pub ntp_weight: f64,
}

fn default_beta() -> f64 {
    0.3
}

fn default_ntp_weight() -> f64 {
    0.1
}

impl LossConfig {
    pub fn new(objective: Objective) -> Self {
        LossConfig { objective, beta: default_beta(), ntp_weight: default_ntp_weight() }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_beta(self.beta)?;
        if !self.ntp_weight.is_finite() || self.ntp_weight < 0.0 {
            return Err(Error::Config(format!(
                "ntp_weight must be finite and non-negative, got {}",
                self.ntp_weight
            )));
        }
        Ok(())
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig::new(Objective::PlDpo)
    }
}

/// A loss value together with its gradient, one entry per input the loss
/// was differentiated against. Both are guaranteed finite on return.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl LossResult {
    fn checked(value: f64, grad: Vec<f64>) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::Invariant(format!("loss value is not finite ({value})")));
        }
        ensure_finite("grad", &grad).map_err(|_| {
            Error::Invariant("loss gradient contains a non-finite entry".into())
        })?;
        Ok(LossResult { value, grad })
    }
}

// ─────────────────────────────────────────────────────────────────────────
// Objectives
// ─────────────────────────────────────────────────────────────────────────

/// Probability that the given reward vector produces exactly its own order
/// under sequential sampling without replacement:
///
/// ```text
/// P = prod_{i} e^{r_i} / sum_{j >= i} e^{r_j}
/// ```
///
/// Computed in log space and exponentiated once at the end. Equal rewards
/// over `n` items give `1/n!`.
pub fn pl_probability(rewards: &[f64]) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::InvalidInput("rewards must be non-empty".into()));
    }
    ensure_finite("rewards", rewards)?;
    let log_p: f64 = -suffix_norm_terms(rewards).iter().sum::<f64>();
    Ok(log_p.exp())
}

/// Negative log-likelihood of the chain's own order under rewards
/// `r_i = beta * (policy_i - ref_i)`:
///
/// ```text
/// L = sum_i [ lse_i - r_i ],   lse_i = log sum_{j >= i} e^{r_j}
/// ```
///
/// For the gradient, `d lse_i / d r_k = e^{r_k - lse_i}` whenever `k >= i`
/// (the suffix softmax weight of item `k` in suffix `i`), so
///
/// ```text
/// dL/dr_k = sum_{i <= k} e^{r_k - lse_i}  -  1
/// dL/d policy_k = beta * dL/dr_k
/// ```
///
/// With `policy == ref` every reward is zero and `L = log(n!)`. A single
/// response gives `L = 0`: there is only one order to assign.
pub fn pl_dpo_loss(chain: &ScoredChain, beta: f64) -> Result<LossResult> {
    ensure_beta(beta)?;
    let r = chain.rewards(beta);
    let n = r.len();

    // terms[i] = lse_i - r_i, computed without cancellation.
    let terms = suffix_norm_terms(&r);
    let value: f64 = terms.iter().sum();

    let mut grad = vec![0.0; n];
    for (k, g) in grad.iter_mut().enumerate() {
        let mut dk = -1.0;
        // e^{r_k - lse_i} = e^{(r_k - r_i) - term_i}; never above 1 since
        // item k belongs to every suffix i <= k.
        for (i, &term) in terms.iter().enumerate().take(k + 1) {
            dk += (r[k] - r[i] - term).exp();
        }
        *g = beta * dk;
    }
    LossResult::checked(value, grad)
}

/// Winner/loser preference loss on implicit rewards. With
/// `h = beta * [(policy_w - ref_w) - (policy_l - ref_l)]`:
///
/// ```text
/// L = softplus(-h) = -log sigmoid(h)
/// dL/d policy_w = -beta * sigmoid(-h)
/// dL/d policy_l = +beta * sigmoid(-h)
/// ```
///
/// The gradient is `[dL/d policy_w, dL/d policy_l]`. Identical policy and
/// reference scores give `h = 0` and `L = log 2`.
pub fn bt_dpo_loss(
    policy_w: f64,
    policy_l: f64,
    ref_w: f64,
    ref_l: f64,
    beta: f64,
) -> Result<LossResult> {
    ensure_beta(beta)?;
    let inputs = [policy_w, policy_l, ref_w, ref_l];
    ensure_finite("logprobs", &inputs)?;
    let h = beta * ((policy_w - ref_w) - (policy_l - ref_l));
    let s = sigmoid(-h);
    LossResult::checked(softplus(-h), vec![-beta * s, beta * s])
}

/// Mean pairwise preference loss of the best response against every other
/// response in the chain:
///
/// ```text
/// L = 1/(n-1) * sum_{j=1}^{n-1} softplus(-h_j),  h_j = beta (d_0 - d_j)
/// dL/d policy_0 = -beta/(n-1) * sum_j sigmoid(-h_j)
/// dL/d policy_j = +beta/(n-1) * sigmoid(-h_j)
/// ```
///
/// Unlike the listwise loss this never compares two losers with each other,
/// so it is the natural objective when negatives were produced independently
/// rather than as a progression.
pub fn mpo_loss(chain: &ScoredChain, beta: f64) -> Result<LossResult> {
    ensure_beta(beta)?;
    let n = chain.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "winner-vs-rest loss needs at least 2 responses, got {n}"
        )));
    }
    let d: Vec<f64> = chain
        .policy_logprobs
        .iter()
        .zip(&chain.ref_logprobs)
        .map(|(p, r)| p - r)
        .collect();
    let scale = 1.0 / (n - 1) as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; n];
    for j in 1..n {
        let h = beta * (d[0] - d[j]);
        let s = sigmoid(-h);
        value += softplus(-h) * scale;
        grad[0] -= beta * s * scale;
        grad[j] += beta * s * scale;
    }
    LossResult::checked(value, grad)
}

/// Margin-free pairwise hinge on raw scores, averaged over all ordered
/// pairs `(i, j)` with `i < j` (i.e. `i` ranked better):
///
/// ```text
/// L = 2/(n(n-1)) * sum_{i<j} max(0, s_j - s_i)
/// ```
///
/// Subgradient: each strictly inverted pair (`s_j > s_i`) contributes
/// `+c` to `grad[j]` and `-c` to `grad[i]` with `c = 2/(n(n-1))`; pairs
/// exactly at the kink (`s_j == s_i`) contribute nothing. A correctly
/// ordered chain therefore has zero loss *and* zero gradient.
pub fn hinge_loss(scores: &[f64]) -> Result<LossResult> {
    let n = scores.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "pairwise hinge needs at least 2 scores, got {n}"
        )));
    }
    ensure_finite("scores", scores)?;
    let c = 2.0 / (n * (n - 1)) as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let violation = scores[j] - scores[i];
            if violation > 0.0 {
                value += c * violation;
                grad[j] += c;
                grad[i] -= c;
            }
        }
    }
    LossResult::checked(value, grad)
}

/// Smooth pairwise ordering loss on raw scores — the same winner/loser
/// log-sigmoid as the preference loss, but applied directly to scores with
/// no reference model:
///
/// ```text
/// L = 2/(n(n-1)) * sum_{i<j} softplus(s_j - s_i)
/// dL/ds_i -= c * sigmoid(s_j - s_i)
/// dL/ds_j += c * sigmoid(s_j - s_i)
/// ```
pub fn ranknet_loss(scores: &[f64]) -> Result<LossResult> {
    let n = scores.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "pairwise ordering loss needs at least 2 scores, got {n}"
        )));
    }
    ensure_finite("scores", scores)?;
    let c = 2.0 / (n * (n - 1)) as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = scores[j] - scores[i];
            let s = sigmoid(diff);
            value += c * softplus(diff);
            grad[i] -= c * s;
            grad[j] += c * s;
        }
    }
    LossResult::checked(value, grad)
}

/// Next-token auxiliary loss: the negative mean of per-token
/// log-probabilities of the best (ground-truth) response.
///
/// ```text
/// L = -1/T * sum_t lp_t        dL/d lp_t = -1/T
/// ```
pub fn ntp_loss(token_logprobs: &[f64]) -> Result<LossResult> {
    if token_logprobs.is_empty() {
        return Err(Error::InvalidInput("token_logprobs must be non-empty".into()));
    }
    ensure_finite("token_logprobs", token_logprobs)?;
    let t = token_logprobs.len() as f64;
    let value = -token_logprobs.iter().sum::<f64>() / t;
    LossResult::checked(value, vec![-1.0 / t; token_logprobs.len()])
}

/// A ranking objective evaluated on a chain, plus the weighted next-token
/// term on the best response's tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedLoss {
    /// objective_value + ntp_weight * ntp_value
    pub value: f64,
    /// The bare ranking objective.
    pub objective_value: f64,
    /// The unweighted next-token term (0.0 when the weight is zero).
    pub ntp_value: f64,
    /// d value / d policy_logprobs[i], one entry per chain response.
    pub grad_policy: Vec<f64>,
    /// d value / d token_logprobs[t]; empty when the weight is zero.
    pub grad_tokens: Vec<f64>,
}

/// Dispatch to the configured objective and add the weighted next-token
/// term. `token_logprobs` are the per-token log-probabilities of the best
/// response under the *policy*; they are only read (and only required to be
/// non-empty) when `ntp_weight > 0`.
///
/// The pairwise winner/loser objective consumes exactly the top two
/// responses of a longer chain; gradient entries for the rest are zero.
pub fn combined_loss(
    config: &LossConfig,
    chain: &ScoredChain,
    token_logprobs: &[f64],
) -> Result<CombinedLoss> {
    config.validate()?;
    let n = chain.len();
    if n < config.objective.min_chain_len() {
        return Err(Error::InvalidInput(format!(
            "objective {} needs at least {} responses, got {n}",
            config.objective,
            config.objective.min_chain_len()
        )));
    }

    let mut objective = match config.objective {
        Objective::PlDpo => pl_dpo_loss(chain, config.beta)?,
        Objective::Mpo => mpo_loss(chain, config.beta)?,
        Objective::Hinge => hinge_loss(chain.policy_logprobs())?,
        Objective::Ranknet => ranknet_loss(chain.policy_logprobs())?,
        Objective::BtDpo => {
            let p = chain.policy_logprobs();
            let r = chain.ref_logprobs();
            let mut top2 = bt_dpo_loss(p[0], p[1], r[0], r[1], config.beta)?;
            top2.grad.resize(n, 0.0);
            top2
        }
    };

    let (ntp_value, grad_tokens) = if config.ntp_weight > 0.0 {
        let ntp = ntp_loss(token_logprobs)?;
        let grad = ntp.grad.iter().map(|g| g * config.ntp_weight).collect();
        (ntp.value, grad)
    } else {
        (0.0, Vec::new())
    };

    let value = objective.value + config.ntp_weight * ntp_value;
    if !value.is_finite() {
        return Err(Error::Invariant(format!("combined loss is not finite ({value})")));
    }
    Ok(CombinedLoss {
        value,
        objective_value: objective.value,
        ntp_value,
        grad_policy: std::mem::take(&mut objective.grad),
        grad_tokens,
    })
}

// ─────────────────────────────────────────────────────────────────────────
// Finite-difference checking support
// ─────────────────────────────────────────────────────────────────────────

/// Central finite-difference gradient of a scalar function, used by the
/// test suites to validate every analytic gradient in this module and in
/// the toy policy. Not fast; not meant for training.
pub fn finite_difference_gradient<F>(f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let up = f(&probe);
        probe[i] = x[i] - step;
        let down = f(&probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * step);
    }
    grad
}

/// True when `analytic` and `numeric` agree to `rel_tol` in relative terms,
/// with a small absolute floor so near-zero gradients are not compared in
/// (meaningless) relative terms.
pub fn gradients_agree(analytic: &[f64], numeric: &[f64], rel_tol: f64) -> bool {
    analytic.len() == numeric.len()
        && analytic.iter().zip(numeric).all(|(a, n)| {
            let diff = (a - n).abs();
            diff <= rel_tol * a.abs().max(n.abs()) || diff <= 1e-10
        })
}
