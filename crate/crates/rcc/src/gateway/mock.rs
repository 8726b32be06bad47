//! Scripted offline backend.
//!
//! The mock plays a list of behaviors in order, cycling when the script is
//! exhausted. The interesting behaviors are *faithful*: they read the
//! request variables and produce a reply that honors the template's
//! contract — a mutation really changes exactly one token and preserves
//! earlier changes, the judge really scores token overlap against the
//! reference, the order judge really compares the two candidates. That
//! makes whole-pipeline runs meaningful without any network, and keeps
//! every reply a pure function of the request, so outputs do not depend on
//! which thread got which call.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::encode::tokenize;
use crate::error::{Error, Result};
use crate::taxonomy::{is_count_token, is_spatial_word, is_temporal_marker};

use super::template::RenderedPrompt;
use super::{Backend, BackendError, CompletionRequest};

/// One scripted reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MockBehavior {
    /// Pick the faithful behavior matching the request's template.
    Auto,
    /// A fixed reply, verbatim.
    Text { text: String },
    /// Echo the rendered user prompt.
    Echo,
    /// Faithful one-token mutation honoring the mutate template.
    Mutate,
    /// Refuse a mutation with the given reason.
    Reject { reason: String },
    /// Consolidate raw captions into one line.
    Recaption,
    /// A fixed judge reply, e.g. `"7 7 7 7"`.
    JudgeScores { text: String },
    /// Overlap-based four-axis caption scores.
    JudgeRubric,
    /// YES/NO faithfulness comparison of two captions.
    OrderJudge,
    /// Multiple-choice question from a caption list.
    McqGen,
    /// Yes/no existence questions from change summaries.
    YnqGen,
    /// Simulated HTTP failure: 429/5xx retriable, other 4xx permanent.
    Fail { status: u16 },
    /// Simulated connection-level failure (always retriable).
    FailTransport,
    /// Sleep, then answer like [`MockBehavior::Auto`].
    Delay { ms: u64 },
}

/// Cycling script player with call statistics for tests.
pub struct MockBackend {
    script: Vec<MockBehavior>,
    cursor: Mutex<usize>,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

impl MockBackend {
    pub fn new(script: Vec<MockBehavior>) -> Result<Self> {
        if script.is_empty() {
            return Err(Error::Config("mock script is empty; nothing to reply with".into()));
        }
        Ok(MockBackend {
            script,
            cursor: Mutex::new(0),
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
        })
    }

    /// Total requests executed.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Highest number of simultaneously executing requests observed.
    pub fn max_in_flight_seen(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }
}

struct FlightGuard<'a>(&'a MockBackend);

impl<'a> FlightGuard<'a> {
    fn enter(backend: &'a MockBackend) -> Self {
        let now = backend.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        backend.max_in_flight.fetch_max(now, Ordering::SeqCst);
        FlightGuard(backend)
    }
}

impl Drop for FlightGuard<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Backend for MockBackend {
    fn execute(
        &self,
        prompt: &RenderedPrompt,
        request: &CompletionRequest,
    ) -> std::result::Result<String, BackendError> {
        let _guard = FlightGuard::enter(self);
        self.calls.fetch_add(1, Ordering::SeqCst);
        let behavior = {
            let mut cursor = self.cursor.lock().expect("mock cursor poisoned");
            let b = self.script[*cursor].clone();
            *cursor = (*cursor + 1) % self.script.len();
            b
        };
        run_behavior(&behavior, prompt, request)
    }
}

fn run_behavior(
    behavior: &MockBehavior,
    prompt: &RenderedPrompt,
    request: &CompletionRequest,
) -> std::result::Result<String, BackendError> {
    match behavior {
        MockBehavior::Auto => auto_reply(prompt, request),
        MockBehavior::Text { text } => Ok(text.clone()),
        MockBehavior::Echo => Ok(prompt.user.clone()),
        MockBehavior::Mutate => mutate_reply(&request.vars),
        MockBehavior::Reject { reason } => Ok(format!("REJECT: {reason}")),
        MockBehavior::Recaption => recaption_reply(&request.vars),
        MockBehavior::JudgeScores { text } => Ok(text.clone()),
        MockBehavior::JudgeRubric => judge_rubric_reply(&request.vars),
        MockBehavior::OrderJudge => order_judge_reply(&request.vars),
        MockBehavior::McqGen => mcq_reply(&request.vars),
        MockBehavior::YnqGen => ynq_reply(&request.vars),
        MockBehavior::Fail { status } => {
            let msg = format!("mock HTTP status {status}");
            if *status == 429 || (500..600).contains(status) {
                Err(BackendError::Transient(msg))
            } else {
                Err(BackendError::Permanent(msg))
            }
        }
        MockBehavior::FailTransport => {
            Err(BackendError::Transient("mock transport failure".into()))
        }
        MockBehavior::Delay { ms } => {
            std::thread::sleep(std::time::Duration::from_millis(*ms));
            auto_reply(prompt, request)
        }
    }
}

fn auto_reply(
    prompt: &RenderedPrompt,
    request: &CompletionRequest,
) -> std::result::Result<String, BackendError> {
    match prompt.template_id.as_str() {
        "mutate" => mutate_reply(&request.vars),
        "recaption" => recaption_reply(&request.vars),
        "judge" => judge_rubric_reply(&request.vars),
        "order_judge" => order_judge_reply(&request.vars),
        "mcq_gen" => mcq_reply(&request.vars),
        "ynq_gen" => ynq_reply(&request.vars),
        _ => Ok(prompt.user.clone()),
    }
}

fn var<'a>(
    vars: &'a BTreeMap<String, String>,
    key: &str,
) -> std::result::Result<&'a str, BackendError> {
    vars.get(key)
        .map(|s| s.as_str())
        .ok_or_else(|| BackendError::Permanent(format!("mock: request variable '{key}' missing")))
}

// ─────────────────────────────────────────────────────────────────────────
// Faithful mutation
// ─────────────────────────────────────────────────────────────────────────

// Replacement vocabulary per error type. These words are distinctive on
// purpose: they never appear in ordinary captions, so once inserted they
// mark a corrupted position. Mutation never replaces a bank word, which is
// what preserves earlier errors across steps.
const OBJECT_BANK: &[&str] = &["obelisk", "zeppelin", "walrus", "typewriter", "cauldron", "unicycle"];
const ATTRIBUTE_BANK: &[&str] = &["sunny", "crimson", "gigantic", "ancient", "translucent", "spotted"];
const ACTION_BANK: &[&str] = &["levitates", "crumbles", "whistles", "dissolves", "somersaults"];
const SPATIAL_BANK: &[&str] = &["beneath", "atop", "behind", "inside"];
const TEMPORAL_BANK: &[&str] = &["afterwards", "beforehand", "midway", "initially"];
const COUNT_BANK: &[&str] = &["seven", "ninety", "thirteen", "forty"];
const SETTING_BANK: &[&str] = &["catacomb", "glacier", "marketplace", "observatory"];
const SUBJECT_BANK: &[&str] = &["astronaut", "octopus", "librarian", "gargoyle"];
const GENERIC_BANK: &[&str] = &["peculiar", "unexpected", "misplaced"];

const STOP_WORDS: &[&str] =
    &["a", "an", "the", "and", "or", "of", "to", "is", "are", "was", "were", "it", "its"];

fn bank_for(error_type: &str) -> &'static [&'static str] {
    match error_type {
        "object_substitution" => OBJECT_BANK,
        "attribute_change" => ATTRIBUTE_BANK,
        "action_change" => ACTION_BANK,
        "spatial_relation_change" => SPATIAL_BANK,
        "temporal_order_swap" => TEMPORAL_BANK,
        "count_change" => COUNT_BANK,
        "setting_change" => SETTING_BANK,
        "subject_swap" => SUBJECT_BANK,
        _ => GENERIC_BANK,
    }
}

fn is_bank_word(token: &str) -> bool {
    [
        OBJECT_BANK,
        ATTRIBUTE_BANK,
        ACTION_BANK,
        SPATIAL_BANK,
        TEMPORAL_BANK,
        COUNT_BANK,
        SETTING_BANK,
        SUBJECT_BANK,
        GENERIC_BANK,
    ]
    .iter()
    .any(|bank| bank.contains(&token))
}

/// Split a raw whitespace token into (leading punctuation, core, trailing
/// punctuation) so replacements keep commas and periods in place.
fn split_token(token: &str) -> (&str, &str, &str) {
    let start = token
        .find(|c: char| c.is_alphanumeric())
        .unwrap_or(token.len());
    let end = token
        .rfind(|c: char| c.is_alphanumeric())
        .map(|i| i + token[i..].chars().next().map_or(1, char::len_utf8))
        .unwrap_or(start);
    (&token[..start], &token[start..end], &token[end..])
}

fn type_prefers(error_type: &str, token: &str) -> bool {
    match error_type {
        "count_change" => is_count_token(token),
        "spatial_relation_change" => is_spatial_word(token),
        "temporal_order_swap" => is_temporal_marker(token),
        _ => false,
    }
}

/// Count the prior changes listed in the `prior_changes` variable;
/// the placeholder "(none)" counts as zero.
fn prior_change_count(prior: &str) -> usize {
    prior
        .lines()
        .filter(|l| {
            let t = l.trim();
            !t.is_empty() && t != "(none)"
        })
        .count()
}

/// Deterministic single-token corruption. The choice of position and
/// replacement depends only on (caption, error type, number of prior
/// changes), so retries and thread scheduling cannot change the output.
fn mutate_reply(vars: &BTreeMap<String, String>) -> std::result::Result<String, BackendError> {
    let caption = var(vars, "caption")?;
    let error_type = var(vars, "error_type")?;
    let step = prior_change_count(vars.get("prior_changes").map_or("", |s| s.as_str()));

    let raw_tokens: Vec<&str> = caption.split_whitespace().collect();
    if raw_tokens.is_empty() {
        return Err(BackendError::Permanent("mock mutate: caption has no tokens".into()));
    }
    let cores: Vec<String> = raw_tokens
        .iter()
        .map(|t| split_token(t).1.to_lowercase())
        .collect();

    // A well-known attribute flip gets priority so season-themed fixtures
    // corrupt the way a reader expects.
    let special = (error_type == "attribute_change")
        .then(|| cores.iter().position(|c| c == "winter"))
        .flatten();

    let (pos, replacement) = if let Some(pos) = special {
        (pos, "sunny".to_string())
    } else {
        let preferred: Vec<usize> = (0..cores.len())
            .filter(|&i| type_prefers(error_type, &cores[i]) && !is_bank_word(&cores[i]))
            .collect();
        let eligible: Vec<usize> = (0..cores.len())
            .filter(|&i| {
                !is_bank_word(&cores[i])
                    && cores[i].len() >= 3
                    && !STOP_WORDS.contains(&cores[i].as_str())
            })
            .collect();
        let fallback: Vec<usize> =
            (0..cores.len()).filter(|&i| !is_bank_word(&cores[i])).collect();
        let pool = if !preferred.is_empty() {
            preferred
        } else if !eligible.is_empty() {
            eligible
        } else if !fallback.is_empty() {
            fallback
        } else {
            (0..cores.len()).collect()
        };
        let pos = pool[step % pool.len()];
        let bank = bank_for(error_type);
        let mut word = bank[step % bank.len()];
        if word == cores[pos] {
            word = bank[(step + 1) % bank.len()];
        }
        (pos, word.to_string())
    };

    let (prefix, core, suffix) = split_token(raw_tokens[pos]);
    let cased = if core.chars().next().is_some_and(char::is_uppercase) {
        let mut c = replacement.chars();
        match c.next() {
            Some(first) => first.to_uppercase().collect::<String>() + c.as_str(),
            None => replacement.clone(),
        }
    } else {
        replacement.clone()
    };

    let mut out_tokens: Vec<String> = raw_tokens.iter().map(|t| t.to_string()).collect();
    out_tokens[pos] = format!("{prefix}{cased}{suffix}");
    let mutated = out_tokens.join(" ");
    let summary = format!("replaced '{}' with '{}' ({error_type})", core, replacement);
    Ok(format!("CAPTION: {mutated}\nCHANGE: {summary}"))
}

// ─────────────────────────────────────────────────────────────────────────
// Faithful judging and transforms
// ─────────────────────────────────────────────────────────────────────────

/// Size of the multiset intersection of two token lists.
fn overlap_count(a: &[String], b: &[String]) -> usize {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in b {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut shared = 0;
    for t in a {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                shared += 1;
            }
        }
    }
    shared
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            curr[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

fn scale_ratio(x: f64) -> u8 {
    (1.0 + 9.0 * x.clamp(0.0, 1.0)).round().clamp(1.0, 10.0) as u8
}

fn judge_rubric_reply(vars: &BTreeMap<String, String>) -> std::result::Result<String, BackendError> {
    let predicted = var(vars, "predicted")?;
    let reference = var(vars, "reference")?;
    let p = tokenize(predicted);
    let r = tokenize(reference);

    let shared = overlap_count(&p, &r) as f64;
    let f1 = if p.is_empty() && r.is_empty() {
        1.0
    } else if p.is_empty() || r.is_empty() {
        0.0
    } else {
        let prec = shared / p.len() as f64;
        let rec = shared / r.len() as f64;
        if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 }
    };
    let coverage = if r.is_empty() { 1.0 } else { (p.len() as f64 / r.len() as f64).min(1.0) };
    let order = if p.is_empty() || r.is_empty() {
        0.0
    } else {
        lcs_len(&p, &r) as f64 / p.len().max(r.len()) as f64
    };
    let mut fluency = 7u8;
    if p.len() >= 4 {
        fluency += 1;
    }
    if predicted.trim_end().ends_with(['.', '!', '?']) {
        fluency += 1;
    }
    if predicted.trim_start().chars().next().is_some_and(char::is_uppercase) {
        fluency += 1;
    }

    Ok(format!(
        "Relevance: {}\nDescriptiveness: {}\nTemporal Consistency: {}\nFluency: {}",
        scale_ratio(f1),
        scale_ratio(coverage),
        scale_ratio(order),
        fluency.min(10)
    ))
}

fn order_judge_reply(vars: &BTreeMap<String, String>) -> std::result::Result<String, BackendError> {
    let reference = tokenize(var(vars, "reference")?);
    let earlier = tokenize(var(vars, "earlier")?);
    let later = tokenize(var(vars, "later")?);
    let verdict = if overlap_count(&later, &reference) < overlap_count(&earlier, &reference) {
        "YES"
    } else {
        "NO"
    };
    Ok(verdict.to_string())
}

fn recaption_reply(vars: &BTreeMap<String, String>) -> std::result::Result<String, BackendError> {
    let captions = var(vars, "captions")?;
    let lines: Vec<&str> = captions
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    if lines.is_empty() {
        return Err(BackendError::Permanent("mock recaption: no source captions".into()));
    }
    Ok(lines.join("; "))
}

fn mcq_reply(vars: &BTreeMap<String, String>) -> std::result::Result<String, BackendError> {
    let captions = var(vars, "captions")?;
    let lines: Vec<&str> = captions
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    if lines.is_empty() {
        return Err(BackendError::Permanent("mock mcq: no captions".into()));
    }
    let mut out = String::from("QUESTION: Which caption best describes the video?");
    for (i, line) in lines.iter().enumerate() {
        out.push_str(&format!("\nCHOICE {}: {line}", i + 1));
    }
    Ok(out)
}

/// Last single-quoted span of a change summary — the inserted detail.
fn quoted_detail(line: &str) -> Option<&str> {
    let mut last = None;
    let mut parts = line.split('\'');
    parts.next()?;
    while let (Some(quoted), Some(_)) = (parts.next(), parts.next()) {
        last = Some(quoted);
    }
    last
}

fn ynq_reply(vars: &BTreeMap<String, String>) -> std::result::Result<String, BackendError> {
    let changes = var(vars, "changes")?;
    let lines: Vec<&str> = changes
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    if lines.is_empty() {
        return Err(BackendError::Permanent("mock ynq: no change summaries".into()));
    }
    let mut out = String::new();
    for (i, line) in lines.iter().enumerate() {
        let detail = quoted_detail(line)
            .unwrap_or_else(|| line.split_whitespace().next().unwrap_or("detail"))
            .to_lowercase();
        let article = if detail.starts_with(['a', 'e', 'i', 'o', 'u']) { "an" } else { "a" };
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("Q{}: Is there {article} {detail} in the video?", i + 1));
    }
    Ok(out)
}
