//! Ranked caption-chain generation and auditing.
//!
//! A *chain* is an ordered list of captions for one video: index 0 is the
//! cleanest description, and each later caption carries more factual
//! errors than the one before it. Chains are built by repeated
//! single-error mutation — pick an error type the current caption admits,
//! ask the model to apply exactly that corruption, parse the structured
//! reply — so the ranking comes from construction, not from a judge.
//!
//! Two corruption layouts exist. The default *nested* chain mutates the
//! previous caption: errors accumulate, and the caption at rank k contains
//! every error of rank k−1 plus one, giving a total order. The
//! *independent* layout instead mutates the clean caption once per
//! negative: every negative carries exactly one error, so beyond "clean
//! beats corrupted" there is no order among them. Comparing objectives
//! trained on the two layouts is the point of keeping both.
//!
//! Generation is deterministic given (inputs, seed, backend script): each
//! chain draws from an rng derived from the run seed and the video id, so
//! neither corpus order nor thread scheduling changes any chain.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::CaptionRecord;
use crate::encode::derive_seed;
use crate::error::{Error, Result};
use crate::gateway::{Client, CompletionRequest};
use crate::taxonomy::{applicable_errors, sample_error, ErrorType, Taxonomy};

/// Flag set when rejection-resampling was exhausted and the chain was cut
/// short of its requested length.
pub const FLAG_TRUNCATED: &str = "truncated";
/// Flag marking chains whose negatives are each a fresh single-error
/// mutation of the clean caption instead of an accumulation.
pub const FLAG_INDEPENDENT: &str = "independent_negatives";

/// Placeholder for empty prompt slots; also what the reply parsers treat
/// as "nothing here".
const NONE_PLACEHOLDER: &str = "(none)";

/// Mutation attempts per chain position before giving up and truncating.
const MUTATION_ATTEMPTS: usize = 4;

/// Where a chain's clean caption came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainSource {
    /// A single source caption, used verbatim.
    GroundTruth,
    /// Several source captions consolidated by the model.
    Recaptioned,
}

/// One corruption applied during generation. For nested chains, step i
/// turned caption i into caption i+1; for independent chains, step i
/// turned caption 0 into caption i+1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStep {
    pub error_type: String,
    pub summary: String,
}

/// A ranked caption chain, cleanest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionChain {
    pub video_id: String,
    pub source: ChainSource,
    pub captions: Vec<String>,
    pub steps: Vec<ChainStep>,
    #[serde(default)]
    pub flags: Vec<String>,
    /// Mutation requests that were rejected, produced a no-op, or
    /// duplicated an existing caption. Successful backend mutation calls
    /// always equal `steps.len()`, so calls = steps + rejected_attempts.
    #[serde(default)]
    pub rejected_attempts: usize,
}

impl CaptionChain {
    pub fn len(&self) -> usize {
        self.captions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.captions.is_empty()
    }

    pub fn is_truncated(&self) -> bool {
        self.flags.iter().any(|f| f == FLAG_TRUNCATED)
    }

    pub fn is_independent(&self) -> bool {
        self.flags.iter().any(|f| f == FLAG_INDEPENDENT)
    }
}

/// Settings shared by a generation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainGenConfig {
    /// Corruption steps per chain; a full chain holds `chain_len + 1`
    /// captions (the clean one plus one per step).
    pub chain_len: usize,
    /// Single-error negatives off the clean caption instead of nesting.
    #[serde(default)]
    pub independent: bool,
    /// Per-error-type sampling weights; absent types keep weight 1.
    #[serde(default)]
    pub error_weights: BTreeMap<String, f64>,
    pub seed: u64,
}

impl Default for ChainGenConfig {
    fn default() -> Self {
        ChainGenConfig {
            chain_len: 3,
            independent: false,
            error_weights: BTreeMap::new(),
            seed: 0,
        }
    }
}

impl ChainGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chain_len == 0 {
            return Err(Error::Config("chain_len must be at least 1".into()));
        }
        Ok(())
    }

    fn weights(&self) -> Option<&BTreeMap<String, f64>> {
        (!self.error_weights.is_empty()).then_some(&self.error_weights)
    }
}

/// What the model did with a mutation request.
#[derive(Debug, Clone, PartialEq)]
pub enum MutationOutcome {
    Mutated { caption: String, summary: String },
    Rejected { reason: String },
}

/// Ask the model to apply one typed corruption and parse the structured
/// reply. `REJECT:` is a legitimate outcome, not an error; a reply with
/// neither a rejection nor a caption-plus-change is a parse error.
pub fn mutate_caption(
    client: &Client,
    caption: &str,
    error_type: &ErrorType,
    prior_changes: &str,
    meta: &str,
) -> Result<MutationOutcome> {
    let request = CompletionRequest::new("mutate")
        .var("caption", caption)
        .var("error_type", &error_type.id)
        .var("error_description", &error_type.description)
        .var("prior_changes", nonempty_or_placeholder(prior_changes))
        .var("meta", nonempty_or_placeholder(meta));
    let reply = client.complete(&request)?;

    let mut mutated = None;
    let mut summary = None;
    for line in reply.lines() {
        let line = line.trim();
        if let Some(reason) = line.strip_prefix("REJECT:") {
            return Ok(MutationOutcome::Rejected { reason: reason.trim().to_string() });
        } else if let Some(rest) = line.strip_prefix("CAPTION:") {
            mutated = Some(rest.trim().to_string());
        } else if let Some(rest) = line.strip_prefix("CHANGE:") {
            summary = Some(rest.trim().to_string());
        }
    }
    match (mutated, summary) {
        (Some(caption), Some(summary)) if !caption.is_empty() && !summary.is_empty() => {
            Ok(MutationOutcome::Mutated { caption, summary })
        }
        _ => Err(Error::Parse(format!(
            "mutation reply has no REJECT or CAPTION/CHANGE lines: {reply:?}"
        ))),
    }
}

fn nonempty_or_placeholder(s: &str) -> &str {
    if s.trim().is_empty() {
        NONE_PLACEHOLDER
    } else {
        s
    }
}

/// Consolidate a record's source captions into one clean caption. A single
/// source caption is used verbatim; several are merged by the model.
pub fn seed_caption(client: &Client, record: &CaptionRecord) -> Result<(String, ChainSource)> {
    let nonempty: Vec<&str> = record
        .captions
        .iter()
        .map(|c| c.trim())
        .filter(|c| !c.is_empty())
        .collect();
    match nonempty.as_slice() {
        [] => Err(Error::InvalidInput(format!(
            "record {} has no non-empty captions",
            record.video_id
        ))),
        [single] => Ok((single.to_string(), ChainSource::GroundTruth)),
        several => {
            let request = CompletionRequest::new("recaption")
                .var("captions", &several.join("\n"))
                .var("meta", nonempty_or_placeholder(&record.meta));
            let reply = client.complete(&request)?;
            let caption = reply
                .lines()
                .map(str::trim)
                .find(|l| !l.is_empty())
                .ok_or_else(|| {
                    Error::Parse(format!("empty recaption reply for {}", record.video_id))
                })?;
            Ok((caption.to_string(), ChainSource::Recaptioned))
        }
    }
}

/// One corruption of `source`, resampling the error type on rejection.
/// Replies that change nothing or reproduce a caption in `forbidden` are
/// silent refusals and count as rejections too. `None` after the attempt
/// budget; every unsuccessful attempt increments `rejected`.
#[allow(clippy::too_many_arguments)]
fn corrupt_once(
    client: &Client,
    taxonomy: &Taxonomy,
    config: &ChainGenConfig,
    rng: &mut ChaCha8Rng,
    source: &str,
    prior_changes: &str,
    meta: &str,
    forbidden: &[&str],
    rejected: &mut usize,
) -> Result<Option<(String, ChainStep)>> {
    let applicable = applicable_errors(source, taxonomy)?;
    for _ in 0..MUTATION_ATTEMPTS {
        let error_type = sample_error(&applicable, config.weights(), rng)?;
        match mutate_caption(client, source, error_type, prior_changes, meta)? {
            MutationOutcome::Mutated { caption, summary } => {
                let trimmed = caption.trim();
                if trimmed == source.trim() || forbidden.iter().any(|f| f.trim() == trimmed) {
                    *rejected += 1;
                    continue;
                }
                let step = ChainStep { error_type: error_type.id.clone(), summary };
                return Ok(Some((caption, step)));
            }
            MutationOutcome::Rejected { .. } => {
                *rejected += 1;
                continue;
            }
        }
    }
    Ok(None)
}

/// Generate one chain for `record`: `chain_len` corruptions, nested by
/// default, single-error independent negatives when configured. Exhausted
/// rejection-resampling truncates the chain and sets [`FLAG_TRUNCATED`]
/// rather than failing — a short chain is still usable, and the flag
/// keeps it auditable.
pub fn generate_chain(
    client: &Client,
    taxonomy: &Taxonomy,
    record: &CaptionRecord,
    config: &ChainGenConfig,
) -> Result<CaptionChain> {
    config.validate()?;
    let (clean, source) = seed_caption(client, record)?;
    let mut chain = CaptionChain {
        video_id: record.video_id.clone(),
        source,
        captions: vec![clean],
        steps: Vec::new(),
        flags: Vec::new(),
        rejected_attempts: 0,
    };
    if config.independent {
        chain.flags.push(FLAG_INDEPENDENT.to_string());
        extend_independent(client, taxonomy, record, config, &mut chain)?;
    } else {
        extend_nested(client, taxonomy, record, config, &mut chain)?;
    }
    Ok(chain)
}

fn extend_nested(
    client: &Client,
    taxonomy: &Taxonomy,
    record: &CaptionRecord,
    config: &ChainGenConfig,
    chain: &mut CaptionChain,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &record.video_id));
    while chain.steps.len() < config.chain_len {
        let prior = chain
            .steps
            .iter()
            .map(|s| s.summary.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let current = chain.captions.last().expect("chain starts non-empty").clone();
        let mut rejected = 0;
        let outcome = corrupt_once(
            client,
            taxonomy,
            config,
            &mut rng,
            &current,
            &prior,
            &record.meta,
            &[],
            &mut rejected,
        )?;
        chain.rejected_attempts += rejected;
        match outcome {
            Some((caption, step)) => {
                chain.captions.push(caption);
                chain.steps.push(step);
            }
            None => {
                chain.flags.push(FLAG_TRUNCATED.to_string());
                break;
            }
        }
    }
    Ok(())
}

/// Each negative mutates the clean caption once. The prompt lists the
/// changes behind the *other* negatives so the model (and the scripted
/// mock) can avoid inventing the same error twice; a duplicate negative
/// is treated as a rejected attempt.
fn extend_independent(
    client: &Client,
    taxonomy: &Taxonomy,
    record: &CaptionRecord,
    config: &ChainGenConfig,
    chain: &mut CaptionChain,
) -> Result<()> {
    let clean = chain.captions[0].clone();
    for rank in 1..=config.chain_len {
        let label = format!("{}#negative-{rank}", record.video_id);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &label));
        let prior = chain
            .steps
            .iter()
            .map(|s| s.summary.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let forbidden: Vec<&str> = chain.captions.iter().map(String::as_str).collect();
        let mut rejected = 0;
        let outcome = corrupt_once(
            client,
            taxonomy,
            config,
            &mut rng,
            &clean,
            &prior,
            &record.meta,
            &forbidden,
            &mut rejected,
        )?;
        chain.rejected_attempts += rejected;
        match outcome {
            Some((caption, step)) => {
                chain.captions.push(caption);
                chain.steps.push(step);
            }
            None => {
                chain.flags.push(FLAG_TRUNCATED.to_string());
                break;
            }
        }
    }
    Ok(())
}

// ─────────────────────────────────────────────────────────────────────────
// Auditing
// ─────────────────────────────────────────────────────────────────────────

/// Outcome of checking one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub video_id: String,
    /// Structure held: consistent lengths, non-blank captions, adjacent
    /// captions differ, every step's error type known and applicable to
    /// the caption it mutated.
    pub structural_pass: bool,
    /// Judge verdict that corruption depth strictly increases along the
    /// chain. `None` when no judge ran or the judge was unreachable.
    pub order_pass: Option<bool>,
    pub failures: Vec<String>,
}

impl AuditReport {
    /// Structure held and the order check, if it ran, agreed.
    pub fn clean(&self) -> bool {
        self.structural_pass && self.order_pass != Some(false)
    }
}

fn structural_failures(chain: &CaptionChain, taxonomy: &Taxonomy) -> Vec<String> {
    let mut failures = Vec::new();
    if chain.captions.is_empty() {
        failures.push("chain has no captions".to_string());
        return failures;
    }
    for (i, caption) in chain.captions.iter().enumerate() {
        if caption.trim().is_empty() {
            failures.push(format!("caption {i} is blank"));
        }
    }
    if chain.steps.len() + 1 != chain.captions.len() {
        failures.push(format!(
            "{} captions but {} steps; expected one step per corruption",
            chain.captions.len(),
            chain.steps.len()
        ));
    }
    for (i, pair) in chain.captions.windows(2).enumerate() {
        if pair[0].trim() == pair[1].trim() {
            failures.push(format!("captions {i} and {} are identical", i + 1));
        }
    }
    let independent = chain.is_independent();
    for (i, step) in chain.steps.iter().enumerate() {
        if step.summary.trim().is_empty() {
            failures.push(format!("step {i} has an empty change summary"));
        }
        if taxonomy.get(&step.error_type).is_none() {
            failures.push(format!("step {i} has unknown error type '{}'", step.error_type));
            continue;
        }
        // The step must have been legal for the caption it actually
        // mutated: the previous rank for nested chains, the clean caption
        // for independent ones.
        let mutated_index = if independent { 0 } else { i };
        let Some(mutated) = chain.captions.get(mutated_index) else { continue };
        if mutated.trim().is_empty() {
            continue;
        }
        match applicable_errors(mutated, taxonomy) {
            Ok(applicable) => {
                if !applicable.iter().any(|t| t.id == step.error_type) {
                    failures.push(format!(
                        "step {i} applied '{}' to caption {mutated_index}, which does not admit it",
                        step.error_type
                    ));
                }
            }
            Err(e) => failures.push(format!("step {i} applicability check failed: {e}")),
        }
    }
    failures
}

/// Check one chain's structure, and — when a judge client is supplied —
/// ask it whether each caption is strictly less faithful than its
/// predecessor, relative to the clean caption. The order check only means
/// something for nested chains; independent negatives all sit at depth 1.
///
/// A judge that cannot be reached leaves `order_pass` as `None` with a
/// note in `failures`: an unavailable backend says nothing about the
/// chain. Malformed judge replies are parse errors and do fail the call.
pub fn audit_chain(
    chain: &CaptionChain,
    taxonomy: &Taxonomy,
    judge: Option<&Client>,
) -> Result<AuditReport> {
    let mut failures = structural_failures(chain, taxonomy);
    let structural_pass = failures.is_empty();

    let mut order_pass = None;
    if let Some(client) = judge {
        if chain.captions.len() >= 2 {
            match judge_order(client, chain, &mut failures)? {
                JudgeOutcome::Verdict(pass) => order_pass = Some(pass),
                JudgeOutcome::Unreachable => order_pass = None,
            }
        }
    }

    Ok(AuditReport {
        video_id: chain.video_id.clone(),
        structural_pass,
        order_pass,
        failures,
    })
}

enum JudgeOutcome {
    Verdict(bool),
    Unreachable,
}

fn judge_order(
    client: &Client,
    chain: &CaptionChain,
    failures: &mut Vec<String>,
) -> Result<JudgeOutcome> {
    let reference = &chain.captions[0];
    // The pairs to check are the order claims the layout actually makes:
    // nested chains claim strictly increasing corruption between adjacent
    // ranks; independent sets only claim each negative is more corrupted
    // than the clean caption (negatives are mutually unordered).
    let pairs: Vec<(usize, usize)> = if chain.is_independent() {
        (1..chain.captions.len()).map(|k| (0, k)).collect()
    } else {
        (1..chain.captions.len()).map(|k| (k - 1, k)).collect()
    };
    let mut all_yes = true;
    for (earlier, later) in pairs {
        let request = CompletionRequest::new("order_judge")
            .var("reference", reference)
            .var("earlier", &chain.captions[earlier])
            .var("later", &chain.captions[later])
            .deterministic();
        let reply = match client.complete(&request) {
            Ok(reply) => reply,
            Err(Error::Backend(msg)) => {
                failures.push(format!("order judge unreachable: {msg}"));
                return Ok(JudgeOutcome::Unreachable);
            }
            Err(other) => return Err(other),
        };
        match reply.trim().split_whitespace().next().map(str::to_ascii_uppercase).as_deref() {
            Some("YES") => {}
            Some("NO") => {
                all_yes = false;
                failures.push(format!(
                    "captions {earlier}->{later}: judge saw no added corruption"
                ));
            }
            _ => {
                return Err(Error::Parse(format!(
                    "order judge replied neither YES nor NO: {reply:?}"
                )))
            }
        }
    }
    Ok(JudgeOutcome::Verdict(all_yes))
}
