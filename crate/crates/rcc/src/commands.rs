//! Pipeline commands behind the CLI verbs.
//!
//! Every command follows the same contract: read inputs named by the
//! [`RunConfig`], orchestrate one module, write datasets plus a report
//! into the output directory, and return the report. Conventions:
//!
//! * outputs use fixed file names inside `out_dir` (see the `*_FILE`
//!   constants), so pipelines can chain commands without plumbing paths;
//! * every report embeds [`RunConfig::fingerprint`] for provenance;
//! * files are written atomically (temp + rename), so an interrupted
//!   command never leaves a half-written dataset behind;
//! * commands are deterministic given (config, inputs, mock backend):
//!   reports carry no timestamps, and the worker pool assigns results by
//!   input index so thread scheduling never reorders an output file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chaingen::{audit_chain, generate_chain, AuditReport, CaptionChain};
use crate::config::RunConfig;
use crate::dataset::{read_jsonl, write_atomic, write_jsonl, CaptionRecord};
use crate::encode::derive_seed;
use crate::error::{Error, Result};
use crate::evalkit::{
    judge_caption, mcqa_accuracy, meteor_lite, ranking_accuracy, rouge_l, spearman, JudgeScore,
    NgramScore,
};
use crate::gateway::{Client, TemplateStore};
use crate::policy::ToyPolicy;
use crate::synth::make_synth_dataset;
use crate::synth::SynthExample;
use crate::taxonomy::{default_taxonomy, Taxonomy};
use crate::train::{
    examples_from_chains, examples_from_mcq, examples_from_synth, examples_from_ynq, train,
    write_trace_csv, TrainExample,
};
use crate::transform::{chain_to_mcq, chain_to_ynq, McqItem, YnqChain};

// ── Output file names ────────────────────────────────────────────────────

pub const CHAINS_FILE: &str = "chains.jsonl";
pub const CHAIN_GEN_REPORT_FILE: &str = "chain_gen_report.json";
pub const AUDIT_FILE: &str = "audit.jsonl";
pub const AUDIT_REPORT_FILE: &str = "audit_report.json";
pub const SYNTH_FILE: &str = "synth.jsonl";
pub const SYNTH_REPORT_FILE: &str = "synth_report.json";
pub const MCQ_FILE: &str = "mcq.jsonl";
pub const YNQ_FILE: &str = "ynq.jsonl";
pub const KEPT_CHAINS_FILE: &str = "chains_kept.jsonl";
pub const TRANSFORM_MANIFEST_FILE: &str = "transform_manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";

/// Path of a named output inside the configured output directory.
pub fn out_path(config: &RunConfig, name: &str) -> PathBuf {
    config.out_dir.join(name)
}

// ── Shared plumbing ──────────────────────────────────────────────────────

/// Completion client per the configured backend and template overrides.
pub fn build_client(config: &RunConfig) -> Result<Client> {
    let templates = if config.template_dir.as_os_str().is_empty() {
        TemplateStore::builtin()
    } else {
        TemplateStore::with_overrides(&config.template_dir)?
    };
    Client::new(config.backend.clone(), templates)
}

fn load_taxonomy(config: &RunConfig) -> Result<Taxonomy> {
    if config.taxonomy_path.as_os_str().is_empty() {
        Ok(default_taxonomy())
    } else {
        Taxonomy::load(&config.taxonomy_path)
    }
}

fn ensure_out_dir(config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| Error::io(config.out_dir.display().to_string(), e))
}

fn write_report<T: Serialize>(path: &Path, report: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Invariant(format!("report serialization failed: {e}")))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Run `f` over `items` on up to `workers` threads. Results land at their
/// input index, so the output order never depends on scheduling; the first
/// error (in input order) wins and remaining work is abandoned.
fn parallel_map<T, U, F>(items: &[T], workers: usize, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync,
{
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let workers = workers.max(1).min(items.len());
    if workers == 1 {
        return items.iter().map(f).collect();
    }

    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let slots: Vec<Mutex<Option<Result<U>>>> =
        items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let result = f(&items[i]);
                if result.is_err() {
                    abort.store(true, Ordering::Relaxed);
                }
                *slots[i].lock().expect("worker slot poisoned") = Some(result);
            });
        }
    });

    let mut results = Vec::with_capacity(items.len());
    let mut first_error = None;
    for slot in slots {
        match slot.into_inner().expect("worker slot poisoned") {
            Some(Ok(value)) => results.push(value),
            Some(Err(e)) => {
                first_error.get_or_insert(e);
            }
            None => {} // abandoned after another worker's error
        }
    }
    if let Some(e) = first_error {
        return Err(e);
    }
    if results.len() != items.len() {
        return Err(Error::Invariant("worker pool lost results".into()));
    }
    Ok(results)
}

// ── chain-gen ────────────────────────────────────────────────────────────

/// Bookkeeping for one generation run. `error_type_counts` always sums to
/// `total_steps`, and `attempted == completed + truncated` since failures
/// abort the whole command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainGenReport {
    pub fingerprint: String,
    /// Records a chain was generated for in this run.
    pub attempted: usize,
    /// Chains that reached the full configured length.
    pub completed: usize,
    /// Chains cut short by exhausted rejection-resampling.
    pub truncated: usize,
    /// Records skipped because their video_id already had a chain.
    pub skipped_existing: usize,
    pub total_steps: usize,
    pub rejected_attempts: usize,
    pub error_type_counts: BTreeMap<String, usize>,
}

/// Generate chains for every record in the input that does not already
/// have one in the output file. Resume is by `video_id`: interrupting and
/// rerunning continues where the previous run stopped, and a rerun over a
/// complete output generates nothing.
pub fn cmd_chain_gen(config: &RunConfig) -> Result<ChainGenReport> {
    config.validate()?;
    let input = config.require_input("chain-gen")?;
    ensure_out_dir(config)?;
    let client = build_client(config)?;
    let taxonomy = load_taxonomy(config)?;
    let gen_config = config.chain_gen();

    let records: Vec<CaptionRecord> = read_jsonl(input)?;
    let chains_path = out_path(config, CHAINS_FILE);
    let mut chains: Vec<CaptionChain> = if chains_path.exists() {
        read_jsonl(&chains_path)?
    } else {
        Vec::new()
    };

    let mut seen: BTreeSet<String> = chains.iter().map(|c| c.video_id.clone()).collect();
    let mut todo: Vec<&CaptionRecord> = Vec::new();
    let mut skipped_existing = 0;
    for record in &records {
        if seen.insert(record.video_id.clone()) {
            todo.push(record);
        } else {
            skipped_existing += 1;
        }
    }

    let new_chains = parallel_map(&todo, config.concurrency, |record| {
        generate_chain(&client, &taxonomy, record, &gen_config)
    })?;

    let mut report = ChainGenReport {
        fingerprint: config.fingerprint(),
        attempted: new_chains.len(),
        completed: 0,
        truncated: 0,
        skipped_existing,
        total_steps: 0,
        rejected_attempts: 0,
        error_type_counts: BTreeMap::new(),
    };
    for chain in &new_chains {
        if chain.is_truncated() {
            report.truncated += 1;
        } else {
            report.completed += 1;
        }
        report.total_steps += chain.steps.len();
        report.rejected_attempts += chain.rejected_attempts;
        for step in &chain.steps {
            *report.error_type_counts.entry(step.error_type.clone()).or_insert(0) += 1;
        }
    }

    chains.extend(new_chains);
    write_jsonl(&chains_path, &chains)?;
    write_report(&out_path(config, CHAIN_GEN_REPORT_FILE), &report)?;
    Ok(report)
}

// ── audit ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub fingerprint: String,
    /// Sample size asked for.
    pub requested: usize,
    /// Chains actually audited (the whole dataset when it is smaller than
    /// the request).
    pub audited: usize,
    /// Set when the dataset could not fill the requested sample.
    pub shortfall: Option<String>,
    pub structural_pass_rate: f64,
    /// Chains that received an order verdict from the judge.
    pub order_judged: usize,
    pub order_pass_rate: Option<f64>,
}

/// Audit a seeded sample of chains (default sample size 100): structure
/// always, corruption order when `with_judge` is set. Per-chain reports go
/// to `audit.jsonl`, the aggregate to `audit_report.json`.
pub fn cmd_audit(
    config: &RunConfig,
    sample: Option<usize>,
    with_judge: bool,
) -> Result<AuditSummary> {
    config.validate()?;
    let input = config.require_input("audit")?;
    ensure_out_dir(config)?;
    let taxonomy = load_taxonomy(config)?;
    let judge = if with_judge { Some(build_client(config)?) } else { None };

    let chains: Vec<CaptionChain> = read_jsonl(input)?;
    if chains.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no chains to audit in {}",
            input.display()
        )));
    }

    let requested = sample.unwrap_or(100);
    if requested == 0 {
        return Err(Error::Config("audit sample size must be at least 1".into()));
    }
    let count = requested.min(chains.len());
    let shortfall = (requested > chains.len()).then(|| {
        format!(
            "requested a sample of {requested} but the dataset holds {}; audited all of them",
            chains.len()
        )
    });

    // Seeded partial Fisher-Yates, then index order, so the sample is
    // deterministic and the output file follows the dataset's order.
    let mut indices: Vec<usize> = (0..chains.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "audit-sample"));
    for i in 0..count {
        let j = rng.gen_range(i..indices.len());
        indices.swap(i, j);
    }
    indices.truncate(count);
    indices.sort_unstable();

    let sampled: Vec<&CaptionChain> = indices.iter().map(|&i| &chains[i]).collect();
    let reports: Vec<AuditReport> = parallel_map(&sampled, config.concurrency, |chain| {
        audit_chain(chain, &taxonomy, judge.as_ref())
    })?;

    let structural_passes = reports.iter().filter(|r| r.structural_pass).count();
    let order_judged = reports.iter().filter(|r| r.order_pass.is_some()).count();
    let order_passes = reports.iter().filter(|r| r.order_pass == Some(true)).count();
    let summary = AuditSummary {
        fingerprint: config.fingerprint(),
        requested,
        audited: reports.len(),
        shortfall,
        structural_pass_rate: structural_passes as f64 / reports.len() as f64,
        order_judged,
        order_pass_rate: (order_judged > 0).then(|| order_passes as f64 / order_judged as f64),
    };

    write_jsonl(&out_path(config, AUDIT_FILE), &reports)?;
    write_report(&out_path(config, AUDIT_REPORT_FILE), &summary)?;
    Ok(summary)
}

// ── synth ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub fingerprint: String,
    pub examples: usize,
    pub settings: crate::synth::SynthConfig,
}

/// Write the configured synthetic ranked dataset to `synth.jsonl`.
pub fn cmd_synth(config: &RunConfig) -> Result<SynthReport> {
    config.validate()?;
    ensure_out_dir(config)?;
    let data = make_synth_dataset(&config.synth)?;
    write_jsonl(&out_path(config, SYNTH_FILE), &data)?;
    let report = SynthReport {
        fingerprint: config.fingerprint(),
        examples: data.len(),
        settings: config.synth.clone(),
    };
    write_report(&out_path(config, SYNTH_REPORT_FILE), &report)?;
    Ok(report)
}

// ── transform ────────────────────────────────────────────────────────────

/// Three-way split weights: how much of the dataset becomes multiple
/// choice, yes/no, and untouched chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mix {
    pub mcq: u32,
    pub ynq: u32,
    pub chains: u32,
}

impl Default for Mix {
    fn default() -> Self {
        Mix { mcq: 1, ynq: 1, chains: 1 }
    }
}

impl std::str::FromStr for Mix {
    type Err = Error;

    /// Parse `"a/b/c"` (for example `1/1/1` or `2/1/0`).
    fn from_str(s: &str) -> Result<Mix> {
        let parts: Vec<&str> = s.split('/').collect();
        let [a, b, c] = parts.as_slice() else {
            return Err(Error::Config(format!(
                "mix must look like a/b/c, got {s:?}"
            )));
        };
        let parse = |p: &str| -> Result<u32> {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("mix part {p:?} is not a number")))
        };
        Ok(Mix { mcq: parse(a)?, ynq: parse(b)?, chains: parse(c)? })
    }
}

impl Mix {
    /// Exact record counts per kind: floor shares first, then the
    /// remainder to the largest fractional parts (ties broken in
    /// mcq/ynq/chains order). Counts always sum to `n`.
    fn counts(&self, n: usize) -> Result<[usize; 3]> {
        let weights = [self.mcq as f64, self.ynq as f64, self.chains as f64];
        let total: f64 = weights.iter().sum();
        if total == 0.0 {
            return Err(Error::Config("mix needs at least one non-zero part".into()));
        }
        let mut counts = [0usize; 3];
        let mut remainders = [0f64; 3];
        for k in 0..3 {
            let share = n as f64 * weights[k] / total;
            counts[k] = share.floor() as usize;
            remainders[k] = share - share.floor();
        }
        let mut leftover = n - counts.iter().sum::<usize>();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            remainders[b].partial_cmp(&remainders[a]).expect("remainders are finite")
        });
        for &k in &order {
            if leftover == 0 {
                break;
            }
            counts[k] += 1;
            leftover -= 1;
        }
        Ok(counts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformManifest {
    pub fingerprint: String,
    pub input_chains: usize,
    pub mix: Mix,
    pub mcq: usize,
    pub ynq: usize,
    pub chains_kept: usize,
}

/// Split a chain dataset across the three supervision formats. Assignment
/// is a seeded shuffle, so which chain lands in which bucket is stable
/// given the seed but uncorrelated with dataset order; within each bucket
/// the original order is kept.
pub fn cmd_transform(config: &RunConfig, mix: Mix) -> Result<TransformManifest> {
    config.validate()?;
    let input = config.require_input("transform")?;
    ensure_out_dir(config)?;
    let client = build_client(config)?;

    let chains: Vec<CaptionChain> = read_jsonl(input)?;
    let counts = mix.counts(chains.len())?;

    let mut indices: Vec<usize> = (0..chains.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "transform-mix"));
    for i in (1..indices.len()).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
    let mut buckets: [Vec<usize>; 3] = [
        indices[..counts[0]].to_vec(),
        indices[counts[0]..counts[0] + counts[1]].to_vec(),
        indices[counts[0] + counts[1]..].to_vec(),
    ];
    for bucket in &mut buckets {
        bucket.sort_unstable();
    }

    let mcq_chains: Vec<&CaptionChain> = buckets[0].iter().map(|&i| &chains[i]).collect();
    let mcq: Vec<McqItem> = parallel_map(&mcq_chains, config.concurrency, |chain| {
        chain_to_mcq(&client, chain, config.seed)
    })?;

    let ynq_chains: Vec<&CaptionChain> = buckets[1].iter().map(|&i| &chains[i]).collect();
    let ynq: Vec<YnqChain> = parallel_map(&ynq_chains, config.concurrency, |chain| {
        chain_to_ynq(&client, chain)
    })?;

    let kept: Vec<&CaptionChain> = buckets[2].iter().map(|&i| &chains[i]).collect();

    write_jsonl(&out_path(config, MCQ_FILE), &mcq)?;
    write_jsonl(&out_path(config, YNQ_FILE), &ynq)?;
    write_jsonl(&out_path(config, KEPT_CHAINS_FILE), &kept)?;
    let manifest = TransformManifest {
        fingerprint: config.fingerprint(),
        input_chains: chains.len(),
        mix,
        mcq: mcq.len(),
        ynq: ynq.len(),
        chains_kept: kept.len(),
    };
    write_report(&out_path(config, TRANSFORM_MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

// ── train ────────────────────────────────────────────────────────────────

/// Shape of a training/evaluation dataset file, detected from its first
/// record rather than declared, so pipelines can hand any produced file to
/// `train` or `eval rank-acc` directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Synth,
    Chains,
    Mcq,
    Ynq,
}

impl std::fmt::Display for DataKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DataKind::Synth => "synth",
            DataKind::Chains => "chains",
            DataKind::Mcq => "mcq",
            DataKind::Ynq => "ynq",
        })
    }
}

fn detect_kind(path: &Path) -> Result<DataKind> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let first = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| Error::InvalidInput(format!("{} is empty", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(first).map_err(|e| {
        Error::InvalidInput(format!("{} line 1: {e}", path.display()))
    })?;
    let Some(object) = value.as_object() else {
        return Err(Error::InvalidInput(format!(
            "{} line 1 is not a JSON object",
            path.display()
        )));
    };
    if object.contains_key("chain_tokens") {
        Ok(DataKind::Synth)
    } else if object.contains_key("choices") {
        Ok(DataKind::Mcq)
    } else if object.contains_key("target_response") {
        Ok(DataKind::Ynq)
    } else if object.contains_key("captions") {
        Ok(DataKind::Chains)
    } else {
        Err(Error::InvalidInput(format!(
            "{} does not look like a synth, chain, mcq, or ynq dataset",
            path.display()
        )))
    }
}

/// Read any supported dataset into ranked training examples. Text-based
/// kinds are encoded into the vocabulary/context shape given; synthetic
/// data is already tokens.
fn load_examples(
    path: &Path,
    vocab_size: usize,
    ctx_dim: usize,
) -> Result<(DataKind, Vec<TrainExample>)> {
    let kind = detect_kind(path)?;
    let examples = match kind {
        DataKind::Synth => examples_from_synth(&read_jsonl::<SynthExample>(path)?),
        DataKind::Chains => {
            examples_from_chains(&read_jsonl::<CaptionChain>(path)?, vocab_size, ctx_dim)?
        }
        DataKind::Mcq => {
            examples_from_mcq(&read_jsonl::<McqItem>(path)?, vocab_size, ctx_dim)?
        }
        DataKind::Ynq => {
            examples_from_ynq(&read_jsonl::<YnqChain>(path)?, vocab_size, ctx_dim)?
        }
    };
    Ok((kind, examples))
}

/// Policy shape for a dataset: the configured vocabulary, widened if the
/// data itself holds larger token ids, and the context width the examples
/// actually use.
fn training_dims(config: &RunConfig, examples: &[TrainExample]) -> Result<(usize, usize)> {
    let first = examples
        .first()
        .ok_or_else(|| Error::InvalidInput("training dataset is empty".into()))?;
    let max_token = examples
        .iter()
        .flat_map(|ex| ex.items.iter())
        .flat_map(|item| item.prompt.iter().chain(&item.response))
        .copied()
        .max()
        .unwrap_or(0);
    Ok((config.synth.vocab_size.max(max_token + 1), first.context.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainEntry {
    /// `full`, or `len{k}` for sweep runs capped at k responses.
    pub label: String,
    /// Cap on responses per example for this entry, if any.
    pub chain_cap: Option<usize>,
    pub examples_used: usize,
    pub examples_skipped: usize,
    pub checkpoint: String,
    pub trace: String,
    pub final_chain_loss: f64,
    pub final_ntp_loss: f64,
    pub final_total_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub fingerprint: String,
    pub objective: String,
    pub data_kind: DataKind,
    pub examples_loaded: usize,
    pub vocab_size: usize,
    pub ctx_dim: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub entries: Vec<TrainEntry>,
}

/// Train the toy policy on the input dataset with the configured
/// objective. `sweep` caps each example's chain at k responses (best
/// first) and emits one checkpoint and trace per cap — the chain-length
/// study in one command; without it a single full-length run is written.
pub fn cmd_train(config: &RunConfig, sweep: Option<&[usize]>) -> Result<TrainReport> {
    config.validate()?;
    let input = config.require_input("train")?;
    ensure_out_dir(config)?;

    let (kind, examples) = load_examples(input, config.synth.vocab_size, config.synth.ctx_dim)?;
    let (vocab_size, ctx_dim) = training_dims(config, &examples)?;

    let mut report = TrainReport {
        fingerprint: config.fingerprint(),
        objective: config.loss.objective.to_string(),
        data_kind: kind,
        examples_loaded: examples.len(),
        vocab_size,
        ctx_dim,
        steps: config.train.steps,
        batch_size: config.train.batch_size,
        entries: Vec::new(),
    };

    let runs: Vec<(String, Option<usize>)> = match sweep {
        None => vec![("full".to_string(), None)],
        Some(caps) => {
            if caps.is_empty() {
                return Err(Error::Config("sweep needs at least one chain length".into()));
            }
            caps.iter().map(|&k| (format!("len{k}"), Some(k))).collect()
        }
    };

    for (label, cap) in runs {
        let min_len = config.loss.objective.min_chain_len();
        if cap.is_some_and(|k| k < min_len) {
            return Err(Error::Config(format!(
                "sweep length {} is below the {} objective's minimum of {min_len}",
                cap.expect("checked"),
                config.loss.objective
            )));
        }
        let mut used: Vec<TrainExample> = Vec::with_capacity(examples.len());
        let mut skipped = 0;
        for example in &examples {
            let mut example = example.clone();
            if let Some(k) = cap {
                example.items.truncate(k);
            }
            if example.items.len() < min_len {
                skipped += 1;
            } else {
                used.push(example);
            }
        }

        let initial = ToyPolicy::new_random(
            vocab_size,
            ctx_dim,
            derive_seed(config.train.seed, "policy-init"),
        )?;
        let outcome = train(initial, &used, &config.loss, &config.train)?;
        let last = outcome.trace.last().expect("training ran at least one step");

        let (checkpoint_name, trace_name) = if cap.is_none() {
            (CHECKPOINT_FILE.to_string(), TRACE_FILE.to_string())
        } else {
            (format!("checkpoint_{label}.json"), format!("trace_{label}.csv"))
        };
        outcome.policy.save(&out_path(config, &checkpoint_name))?;
        write_trace_csv(&out_path(config, &trace_name), &outcome.trace)?;

        report.entries.push(TrainEntry {
            label,
            chain_cap: cap,
            examples_used: used.len(),
            examples_skipped: skipped,
            checkpoint: checkpoint_name,
            trace: trace_name,
            final_chain_loss: last.chain_loss,
            final_ntp_loss: last.ntp_loss,
            final_total_loss: last.total,
        });
    }

    write_report(&out_path(config, TRAIN_REPORT_FILE), &report)?;
    Ok(report)
}

// ── eval ─────────────────────────────────────────────────────────────────

/// One caption per video, joined against references by `video_id`.
fn first_captions(records: &[CaptionRecord], origin: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::with_capacity(records.len());
    let mut seen = BTreeSet::new();
    for record in records {
        if !seen.insert(&record.video_id) {
            return Err(Error::InvalidInput(format!(
                "{}: duplicate video_id {}",
                origin.display(),
                record.video_id
            )));
        }
        let caption = record.captions.first().cloned().unwrap_or_default();
        out.push((record.video_id.clone(), caption));
    }
    Ok(out)
}

fn reference_map(path: &Path) -> Result<BTreeMap<String, String>> {
    let records: Vec<CaptionRecord> = read_jsonl(path)?;
    Ok(first_captions(&records, path)?.into_iter().collect())
}

fn paired_captions(
    predictions: &Path,
    references: &Path,
) -> Result<Vec<(String, String, String)>> {
    let preds: Vec<CaptionRecord> = read_jsonl(predictions)?;
    let preds = first_captions(&preds, predictions)?;
    let refs = reference_map(references)?;
    preds
        .into_iter()
        .map(|(video_id, predicted)| {
            let reference = refs.get(&video_id).cloned().ok_or_else(|| {
                Error::InvalidInput(format!(
                    "{} has no reference for video_id {video_id}",
                    references.display()
                ))
            })?;
            Ok((video_id, predicted, reference))
        })
        .collect()
}

/// One judged caption: the four rubric scores plus their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRow {
    pub video_id: String,
    #[serde(flatten)]
    pub score: JudgeScore,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeEvalReport {
    pub fingerprint: String,
    pub rows: usize,
    pub mean_relevance: f64,
    pub mean_descriptiveness: f64,
    pub mean_temporal_consistency: f64,
    pub mean_fluency: f64,
    pub mean_overall: f64,
}

/// Judge every prediction against its reference caption; per-video scores
/// to `eval_judge.jsonl`, rubric means to `eval_judge_report.json`.
pub fn cmd_eval_judge(
    config: &RunConfig,
    predictions: &Path,
    references: &Path,
) -> Result<JudgeEvalReport> {
    config.validate()?;
    ensure_out_dir(config)?;
    let client = build_client(config)?;
    let pairs = paired_captions(predictions, references)?;
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no predictions to judge".into()));
    }

    let rows: Vec<JudgeRow> = parallel_map(&pairs, config.concurrency, |(id, pred, refr)| {
        let score = judge_caption(&client, pred, refr)?;
        Ok(JudgeRow { video_id: id.clone(), score, mean: score.mean() })
    })?;

    let n = rows.len() as f64;
    let mean_of = |f: fn(&JudgeScore) -> u8| rows.iter().map(|r| f(&r.score) as f64).sum::<f64>() / n;
    let report = JudgeEvalReport {
        fingerprint: config.fingerprint(),
        rows: rows.len(),
        mean_relevance: mean_of(|s| s.relevance),
        mean_descriptiveness: mean_of(|s| s.descriptiveness),
        mean_temporal_consistency: mean_of(|s| s.temporal_consistency),
        mean_fluency: mean_of(|s| s.fluency),
        mean_overall: rows.iter().map(|r| r.mean).sum::<f64>() / n,
    };

    write_jsonl(&out_path(config, "eval_judge.jsonl"), &rows)?;
    write_report(&out_path(config, "eval_judge_report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramRow {
    pub video_id: String,
    pub rouge_l: NgramScore,
    pub meteor_lite: NgramScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramEvalReport {
    pub fingerprint: String,
    pub rows: usize,
    pub mean_rouge_l: f64,
    pub mean_meteor_lite: f64,
}

/// Overlap metrics for every prediction/reference pair.
pub fn cmd_eval_ngram(
    config: &RunConfig,
    predictions: &Path,
    references: &Path,
) -> Result<NgramEvalReport> {
    config.validate()?;
    ensure_out_dir(config)?;
    let pairs = paired_captions(predictions, references)?;
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no predictions to score".into()));
    }

    let rows: Vec<NgramRow> = pairs
        .iter()
        .map(|(id, pred, refr)| NgramRow {
            video_id: id.clone(),
            rouge_l: rouge_l(pred, refr),
            meteor_lite: meteor_lite(pred, refr),
        })
        .collect();

    let n = rows.len() as f64;
    let report = NgramEvalReport {
        fingerprint: config.fingerprint(),
        rows: rows.len(),
        mean_rouge_l: rows.iter().map(|r| r.rouge_l.value).sum::<f64>() / n,
        mean_meteor_lite: rows.iter().map(|r| r.meteor_lite.value).sum::<f64>() / n,
    };

    write_jsonl(&out_path(config, "eval_ngram.jsonl"), &rows)?;
    write_report(&out_path(config, "eval_ngram_report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankAccReport {
    pub fingerprint: String,
    pub data_kind: DataKind,
    pub chains: usize,
    pub tied_pairs: usize,
    pub exact_order_rate: f64,
    pub pairwise_rate: f64,
}

/// Score a checkpoint's ranking of a ranked dataset. Text datasets are
/// encoded with the checkpoint's own shape, so any checkpoint can be
/// evaluated on any produced file.
pub fn cmd_eval_rank_acc(
    config: &RunConfig,
    checkpoint: &Path,
    data: &Path,
) -> Result<RankAccReport> {
    config.validate()?;
    ensure_out_dir(config)?;
    let policy = ToyPolicy::load(checkpoint)?;
    let (kind, examples) = load_examples(data, policy.vocab_size(), policy.ctx_dim())?;
    let accuracy = ranking_accuracy(&policy, &examples)?;
    let report = RankAccReport {
        fingerprint: config.fingerprint(),
        data_kind: kind,
        chains: accuracy.chains,
        tied_pairs: accuracy.tied_pairs,
        exact_order_rate: accuracy.exact_order_rate,
        pairwise_rate: accuracy.pairwise_rate,
    };
    write_report(&out_path(config, "eval_rank_acc_report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqaReport {
    pub fingerprint: String,
    pub items: usize,
    pub accuracy: f64,
}

/// Letter-argmax accuracy of a checkpoint on a multiple-choice dataset.
pub fn cmd_eval_mcqa(config: &RunConfig, checkpoint: &Path, data: &Path) -> Result<McqaReport> {
    config.validate()?;
    ensure_out_dir(config)?;
    let policy = ToyPolicy::load(checkpoint)?;
    let items: Vec<McqItem> = read_jsonl(data)?;
    let accuracy = mcqa_accuracy(&policy, &items)?;
    let report =
        McqaReport { fingerprint: config.fingerprint(), items: items.len(), accuracy };
    write_report(&out_path(config, "eval_mcqa_report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub fingerprint: String,
    /// Videos scored in both files.
    pub rows: usize,
    pub relevance: f64,
    pub descriptiveness: f64,
    pub temporal_consistency: f64,
    pub fluency: f64,
    pub mean_score: f64,
}

/// Spearman rank agreement between two judge-score files (as written by
/// `eval judge`), per rubric axis and on the per-video means.
pub fn cmd_eval_agreement(
    config: &RunConfig,
    first: &Path,
    second: &Path,
) -> Result<AgreementReport> {
    config.validate()?;
    ensure_out_dir(config)?;
    let load = |path: &Path| -> Result<BTreeMap<String, JudgeRow>> {
        let rows: Vec<JudgeRow> = read_jsonl(path)?;
        let mut map = BTreeMap::new();
        for row in rows {
            if map.insert(row.video_id.clone(), row).is_some() {
                return Err(Error::InvalidInput(format!(
                    "{} scores a video_id twice",
                    path.display()
                )));
            }
        }
        Ok(map)
    };
    let a = load(first)?;
    let b = load(second)?;

    let shared: Vec<&String> = a.keys().filter(|id| b.contains_key(*id)).collect();
    if shared.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "the two score files share {} video_ids; at least 2 are needed",
            shared.len()
        )));
    }

    let axis = |f: fn(&JudgeRow) -> f64| -> Result<f64> {
        let xs: Vec<f64> = shared.iter().map(|id| f(&a[*id])).collect();
        let ys: Vec<f64> = shared.iter().map(|id| f(&b[*id])).collect();
        spearman(&xs, &ys)
    };
    let report = AgreementReport {
        fingerprint: config.fingerprint(),
        rows: shared.len(),
        relevance: axis(|r| r.score.relevance as f64)?,
        descriptiveness: axis(|r| r.score.descriptiveness as f64)?,
        temporal_consistency: axis(|r| r.score.temporal_consistency as f64)?,
        fluency: axis(|r| r.score.fluency as f64)?,
        mean_score: axis(|r| r.mean)?,
    };
    write_report(&out_path(config, "eval_agreement_report.json"), &report)?;
    Ok(report)
}
