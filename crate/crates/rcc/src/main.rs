//! Thin command-line front end over the library's pipeline commands.
//!
//! All real behavior lives in [`rcc::commands`]; this binary only parses
//! arguments, applies flag overrides on top of the optional config file,
//! dispatches, and prints a one-line summary. Reports and datasets land
//! in the output directory either way, so scripting against the files is
//! equivalent to reading stdout.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rcc::commands::{self, Mix};
use rcc::config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "rcc",
    version,
    about = "Ranked caption chains: generate, audit, transform, train, evaluate."
)]
struct Cli {
    /// JSON run configuration; flags below override its fields.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Run seed override.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Use the offline mock backend regardless of the configured one.
    #[arg(long, global = true)]
    mock: bool,

    /// Worker-thread count override.
    #[arg(long, global = true, value_name = "N")]
    concurrency: Option<usize>,

    /// Output directory override.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Input dataset override.
    #[arg(long, global = true, value_name = "PATH")]
    input: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a ranked corruption chain per input caption record.
    ChainGen,
    /// Check chain structure, and optionally corruption order, on a sample.
    Audit {
        /// Chains to sample.
        #[arg(long, value_name = "N", default_value_t = 100)]
        sample: usize,
        /// Also ask the backend judge to verify corruption order.
        #[arg(long)]
        judge: bool,
    },
    /// Split a chain dataset into multiple-choice, yes/no, and kept chains.
    Transform {
        /// Split weights mcq/ynq/chains, e.g. 1/1/1 or 2/1/0.
        #[arg(long, default_value = "1/1/1")]
        mix: Mix,
    },
    /// Write a synthetic ranked dataset for controlled experiments.
    Synth,
    /// Train the toy policy on a ranked dataset.
    Train {
        /// Chain-length caps to sweep, one checkpoint each, e.g. 2,3,4,5.
        #[arg(long, value_delimiter = ',', value_name = "LEN,..")]
        sweep: Option<Vec<usize>>,
    },
    /// Scoring and agreement metrics.
    Eval {
        #[command(subcommand)]
        metric: EvalCommand,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Rubric-judge predicted captions against references.
    Judge {
        #[arg(long, value_name = "PATH")]
        predictions: PathBuf,
        #[arg(long, value_name = "PATH")]
        references: PathBuf,
    },
    /// Overlap metrics between predictions and references.
    Ngram {
        #[arg(long, value_name = "PATH")]
        predictions: PathBuf,
        #[arg(long, value_name = "PATH")]
        references: PathBuf,
    },
    /// Ranking accuracy of a checkpoint on a ranked dataset.
    RankAcc {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
    },
    /// Answer accuracy of a checkpoint on multiple-choice items.
    Mcqa {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
    },
    /// Spearman agreement between two judge-score files.
    Agreement {
        #[arg(long, value_name = "PATH")]
        first: PathBuf,
        #[arg(long, value_name = "PATH")]
        second: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> rcc::Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    Overrides {
        seed: cli.seed,
        mock: cli.mock,
        concurrency: cli.concurrency,
        out: cli.out,
        input: cli.input,
    }
    .apply(&mut config);

    let out_dir = config.out_dir.display().to_string();
    match cli.command {
        Command::ChainGen => {
            let r = commands::cmd_chain_gen(&config)?;
            println!(
                "chain-gen: {} generated ({} full, {} truncated), {} already present, \
                 {} steps over {} error types -> {out_dir}",
                r.attempted,
                r.completed,
                r.truncated,
                r.skipped_existing,
                r.total_steps,
                r.error_type_counts.len(),
            );
        }
        Command::Audit { sample, judge } => {
            let r = commands::cmd_audit(&config, Some(sample), judge)?;
            let order = match r.order_pass_rate {
                Some(rate) => format!("{rate:.3}"),
                None => "n/a".to_string(),
            };
            println!(
                "audit: {}/{} chains, structural pass {:.3}, order pass {order} -> {out_dir}",
                r.audited, r.requested, r.structural_pass_rate,
            );
            if let Some(note) = &r.shortfall {
                println!("audit: note: {note}");
            }
        }
        Command::Transform { mix } => {
            let r = commands::cmd_transform(&config, mix)?;
            println!(
                "transform: {} chains -> {} mcq, {} ynq, {} kept -> {out_dir}",
                r.input_chains, r.mcq, r.ynq, r.chains_kept,
            );
        }
        Command::Synth => {
            let r = commands::cmd_synth(&config)?;
            println!(
                "synth: {} examples (vocab {}, seq {}, {} corruption steps) -> {out_dir}",
                r.examples, r.settings.vocab_size, r.settings.seq_len, r.settings.chain_len,
            );
        }
        Command::Train { sweep } => {
            let r = commands::cmd_train(&config, sweep.as_deref())?;
            for entry in &r.entries {
                println!(
                    "train[{}]: {} examples, {} objective, final loss {:.6} -> {}",
                    entry.label,
                    entry.examples_used,
                    r.objective,
                    entry.final_total_loss,
                    entry.checkpoint,
                );
            }
        }
        Command::Eval { metric } => match metric {
            EvalCommand::Judge { predictions, references } => {
                let r = commands::cmd_eval_judge(&config, &predictions, &references)?;
                println!(
                    "eval judge: {} captions, mean {:.3} \
                     (rel {:.2}, desc {:.2}, temp {:.2}, flu {:.2}) -> {out_dir}",
                    r.rows,
                    r.mean_overall,
                    r.mean_relevance,
                    r.mean_descriptiveness,
                    r.mean_temporal_consistency,
                    r.mean_fluency,
                );
            }
            EvalCommand::Ngram { predictions, references } => {
                let r = commands::cmd_eval_ngram(&config, &predictions, &references)?;
                println!(
                    "eval ngram: {} captions, rouge-l {:.4}, meteor-lite {:.4} -> {out_dir}",
                    r.rows, r.mean_rouge_l, r.mean_meteor_lite,
                );
            }
            EvalCommand::RankAcc { checkpoint, data } => {
                let r = commands::cmd_eval_rank_acc(&config, &checkpoint, &data)?;
                println!(
                    "eval rank-acc: {} chains ({}), exact {:.4}, pairwise {:.4}, \
                     {} tied pairs -> {out_dir}",
                    r.chains, r.data_kind, r.exact_order_rate, r.pairwise_rate, r.tied_pairs,
                );
            }
            EvalCommand::Mcqa { checkpoint, data } => {
                let r = commands::cmd_eval_mcqa(&config, &checkpoint, &data)?;
                println!("eval mcqa: {} items, accuracy {:.4} -> {out_dir}", r.items, r.accuracy);
            }
            EvalCommand::Agreement { first, second } => {
                let r = commands::cmd_eval_agreement(&config, &first, &second)?;
                println!(
                    "eval agreement: {} shared videos, mean-score rho {:.4} \
                     (rel {:.3}, desc {:.3}, temp {:.3}, flu {:.3}) -> {out_dir}",
                    r.rows,
                    r.mean_score,
                    r.relevance,
                    r.descriptiveness,
                    r.temporal_consistency,
                    r.fluency,
                );
            }
        },
    }
    Ok(())
}
