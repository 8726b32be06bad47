//! Preference training of the toy policy against a frozen reference.
//!
//! The loop is plain stochastic optimization: sample a batch of ranked
//! examples, score every response under the current policy (the reference
//! scores are fixed and precomputed), evaluate the configured ranking
//! objective plus the next-token term, push the loss gradient through the
//! policy's parameter gradients, and take an optimizer step.
//!
//! The reference policy is a frozen copy of the *initial* policy, taken at
//! the moment training starts. With listwise or preference objectives this
//! means the step-0 chain loss is exactly `log(n!)` for `n` responses —
//! a handy sanity check that scoring and loss agree.
//!
//! Everything is deterministic in `(initial policy, dataset, configs)`:
//! batches come from a dedicated seeded rng and no iteration order depends
//! on hashing or threads.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encode::{encode_text, featurize_text};
use crate::error::{Error, Result};
use crate::optim::{AdamW, AdamWConfig};
use crate::policy::{PolicyGrad, ToyPolicy};
use crate::rankloss::{combined_loss, LossConfig, ScoredChain};
use crate::synth::SynthExample;

/// One response of a ranked example: optional prompt tokens that condition
/// the scoring, plus the response tokens being scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqItem {
    #[serde(default)]
    pub prompt: Vec<usize>,
    pub response: Vec<usize>,
}

impl SeqItem {
    pub fn bare(response: Vec<usize>) -> Self {
        SeqItem { prompt: Vec::new(), response }
    }
}

/// A ranked training example, responses ordered best-first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub context: Vec<f64>,
    pub items: Vec<SeqItem>,
}

/// Loop hyperparameters. The optimizer settings ride along so one struct
/// fully describes a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { steps: 500, batch_size: 8, seed: 0, optimizer: AdamWConfig::default() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch_size must be positive".into()));
        }
        self.optimizer.validate()
    }
}

/// Per-step loss record, written to the CSV trace. `chain_loss` is the bare
/// ranking objective, `ntp_loss` the unweighted next-token term, and
/// `total` the optimized combination — all batch means evaluated at the
/// parameters *before* that step's update.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub chain_loss: f64,
    pub ntp_loss: f64,
    pub total: f64,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: ToyPolicy,
    /// The frozen copy of the initial policy that served as reference.
    pub reference: ToyPolicy,
    pub trace: Vec<TraceRow>,
}

/// Train `initial` on `dataset`. See the module docs for the loop shape.
///
/// A non-finite loss or score aborts with an `Invariant` error naming the
/// step, rather than continuing to optimize garbage.
pub fn train(
    initial: ToyPolicy,
    dataset: &[TrainExample],
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    loss_cfg.validate()?;
    train_cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidInput("training dataset is empty".into()));
    }
    for (i, ex) in dataset.iter().enumerate() {
        if ex.items.len() < loss_cfg.objective.min_chain_len() {
            return Err(Error::InvalidInput(format!(
                "example {i} has {} responses; objective {} needs at least {}",
                ex.items.len(),
                loss_cfg.objective,
                loss_cfg.objective.min_chain_len()
            )));
        }
    }

    let reference = initial.clone();
    let mut policy = initial;

    // Reference scores never change; pay for them once.
    let ref_scores: Vec<Vec<f64>> = dataset
        .iter()
        .map(|ex| {
            ex.items
                .iter()
                .map(|it| reference.response_logprob(&ex.context, &it.prompt, &it.response))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let shapes: Vec<usize> = policy.tensors_mut().iter().map(|t| t.len()).collect();
    let mut optimizer = AdamW::new(train_cfg.optimizer, &shapes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut trace = Vec::with_capacity(train_cfg.steps);
    let mut grad = PolicyGrad::zeros(policy.vocab_size(), policy.ctx_dim());

    for step in 0..train_cfg.steps {
        grad.scale(0.0);
        let mut chain_sum = 0.0;
        let mut ntp_sum = 0.0;
        let mut total_sum = 0.0;
        let inv_batch = 1.0 / train_cfg.batch_size as f64;

        for _ in 0..train_cfg.batch_size {
            let idx = rng.gen_range(0..dataset.len());
            let ex = &dataset[idx];
            let take = loss_cfg.objective.consumed_responses(ex.items.len());

            // Pass 1: score the consumed responses under the live policy.
            let best_token_lps = policy.response_token_logprobs(
                &ex.context,
                &ex.items[0].prompt,
                &ex.items[0].response,
            )?;
            let mut policy_lps = Vec::with_capacity(take);
            policy_lps.push(best_token_lps.iter().sum::<f64>());
            for it in &ex.items[1..take] {
                policy_lps.push(policy.response_logprob(&ex.context, &it.prompt, &it.response)?);
            }
            if policy_lps.iter().any(|lp| !lp.is_finite()) {
                return Err(Error::Invariant(format!(
                    "non-finite policy score at step {step} (example {idx}); \
                     the run has diverged"
                )));
            }

            let chain = ScoredChain::new(policy_lps, ref_scores[idx][..take].to_vec())?;
            let loss = combined_loss(loss_cfg, &chain, &best_token_lps)?;
            chain_sum += loss.objective_value;
            ntp_sum += loss.ntp_value;
            total_sum += loss.value;

            // Pass 2: push d loss / d logprob through the parameter
            // gradients. The next-token term is uniform over positions, so
            // its pull on the parameters is its per-token weight times the
            // gradient of the *total* best-response log-probability — i.e.
            // it folds into the best response's coefficient.
            let ntp_coeff = loss.grad_tokens.first().copied().unwrap_or(0.0);
            for (j, it) in ex.items[..take].iter().enumerate() {
                let mut coeff = loss.grad_policy[j];
                if j == 0 {
                    coeff += ntp_coeff;
                }
                if coeff != 0.0 {
                    policy.add_response_grad(
                        &ex.context,
                        &it.prompt,
                        &it.response,
                        coeff * inv_batch,
                        &mut grad,
                    )?;
                }
            }
        }

        let row = TraceRow {
            step,
            chain_loss: chain_sum * inv_batch,
            ntp_loss: ntp_sum * inv_batch,
            total: total_sum * inv_batch,
        };
        if !row.total.is_finite() {
            return Err(Error::Invariant(format!(
                "non-finite loss at step {step}: chain={} ntp={}",
                row.chain_loss, row.ntp_loss
            )));
        }
        trace.push(row);

        if !grad.is_finite() {
            return Err(Error::Invariant(format!("non-finite gradient at step {step}")));
        }
        let [gw, gb, gbias] = grad.tensors();
        optimizer.step(&mut policy.tensors_mut(), &[gw, gb, gbias])?;
    }

    Ok(TrainOutcome { policy, reference, trace })
}

/// Mean log-probability margin between the best and worst response of each
/// example — the quantity preference training is supposed to push up.
pub fn mean_top_bottom_margin(policy: &ToyPolicy, dataset: &[TrainExample]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("dataset is empty".into()));
    }
    let mut total = 0.0;
    for ex in dataset {
        let first = ex.items.first().ok_or_else(|| {
            Error::InvalidInput("example has no responses".into())
        })?;
        let last = ex.items.last().expect("non-empty");
        let top = policy.response_logprob(&ex.context, &first.prompt, &first.response)?;
        let bottom = policy.response_logprob(&ex.context, &last.prompt, &last.response)?;
        total += top - bottom;
    }
    Ok(total / dataset.len() as f64)
}

// ─────────────────────────────────────────────────────────────────────────
// Dataset adapters
// ─────────────────────────────────────────────────────────────────────────

/// Synthetic examples are already token chains; just re-shape.
pub fn examples_from_synth(data: &[SynthExample]) -> Vec<TrainExample> {
    data.iter()
        .map(|ex| TrainExample {
            context: ex.context.clone(),
            items: ex.chain_tokens.iter().cloned().map(SeqItem::bare).collect(),
        })
        .collect()
}

/// Caption chains become ranked examples by hashing words into the policy
/// vocabulary; the context is a hash featurization of the clean caption.
pub fn examples_from_chains(
    chains: &[crate::chaingen::CaptionChain],
    vocab_size: usize,
    ctx_dim: usize,
) -> Result<Vec<TrainExample>> {
    chains
        .iter()
        .map(|chain| {
            let items = chain
                .captions
                .iter()
                .map(|c| {
                    let tokens = encode_text(c, vocab_size);
                    if tokens.is_empty() {
                        return Err(Error::InvalidInput(format!(
                            "caption of {} encodes to no tokens: {c:?}",
                            chain.video_id
                        )));
                    }
                    Ok(SeqItem::bare(tokens))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TrainExample {
                context: featurize_text(&chain.captions[0], ctx_dim),
                items,
            })
        })
        .collect()
}

/// Multiple-choice records rank the answer letters (best caption's letter
/// first), each scored as a response to the question prompt.
pub fn examples_from_mcq(
    items: &[crate::transform::McqItem],
    vocab_size: usize,
    ctx_dim: usize,
) -> Result<Vec<TrainExample>> {
    items
        .iter()
        .map(|mcq| {
            let prompt = encode_text(&mcq.question, vocab_size);
            let mut by_rank: Vec<(usize, &str)> = mcq
                .quality_rank
                .iter()
                .zip(mcq.choices.iter().map(|c| c.letter.as_str()))
                .map(|(&rank, letter)| (rank, letter))
                .collect();
            by_rank.sort_unstable_by_key(|(rank, _)| *rank);
            let items = by_rank
                .into_iter()
                .map(|(_, letter)| {
                    let response = encode_text(letter, vocab_size);
                    if response.is_empty() {
                        return Err(Error::InvalidInput(format!(
                            "choice letter {letter:?} encodes to no tokens"
                        )));
                    }
                    Ok(SeqItem { prompt: prompt.clone(), response })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TrainExample { context: featurize_text(&mcq.question, ctx_dim), items })
        })
        .collect()
}

/// Yes/no records rank the fixed response "no" against each question.
/// Questions arrive most-erroneous-first, which is exactly best-first for
/// the "no" answer.
pub fn examples_from_ynq(
    chains: &[crate::transform::YnqChain],
    vocab_size: usize,
    ctx_dim: usize,
) -> Result<Vec<TrainExample>> {
    chains
        .iter()
        .map(|ynq| {
            let response = encode_text(&ynq.target_response, vocab_size);
            if response.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "target response {:?} encodes to no tokens",
                    ynq.target_response
                )));
            }
            let items = ynq
                .questions
                .iter()
                .map(|q| SeqItem {
                    prompt: encode_text(q, vocab_size),
                    response: response.clone(),
                })
                .collect();
            Ok(TrainExample {
                context: featurize_text(&ynq.questions.join(" "), ctx_dim),
                items,
            })
        })
        .collect()
}

// ─────────────────────────────────────────────────────────────────────────
// Trace CSV
// ─────────────────────────────────────────────────────────────────────────

pub const TRACE_CSV_HEADER: &str = "step,chain_loss,ntp_loss,total";

pub fn trace_to_csv(trace: &[TraceRow]) -> String {
    let mut out = String::with_capacity(trace.len() * 48 + 40);
    out.push_str(TRACE_CSV_HEADER);
    out.push('\n');
    for row in trace {
        let _ = writeln!(out, "{},{},{},{}", row.step, row.chain_loss, row.ntp_loss, row.total);
    }
    out
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    crate::dataset::write_atomic(path, trace_to_csv(trace).as_bytes())
}
