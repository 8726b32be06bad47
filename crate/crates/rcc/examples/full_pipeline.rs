//! The whole pipeline through the command layer, in one run.
//!
//! Run with `cargo run --example full_pipeline`. Exactly what the CLI
//! does — generate chains from caption records, audit a sample, split
//! into question formats, train on the kept chains, and score the result
//! — but driven as a library, writing into a temporary directory. The
//! mock backend keeps it offline and deterministic.

use std::path::PathBuf;

use rcc::commands::{
    cmd_audit, cmd_chain_gen, cmd_eval_rank_acc, cmd_train, cmd_transform, out_path, Mix,
    CHAINS_FILE, CHECKPOINT_FILE, KEPT_CHAINS_FILE,
};
use rcc::config::RunConfig;
use rcc::dataset::{write_jsonl, CaptionRecord};
use rcc::Result;

fn main() -> Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let captions = [
        "Two cats sit on the mat, then one leaves.",
        "A chef slices three onions before plating the dish.",
        "The red kite rises above the beach while children watch.",
        "A train crosses the old bridge, then enters the tunnel.",
        "Four dancers rehearse inside the bright studio hall.",
        "The brown horse gallops across the wet field at dawn.",
    ];
    let records: Vec<CaptionRecord> = (0..18)
        .map(|i| CaptionRecord {
            video_id: format!("vid-{i:03}"),
            captions: vec![captions[i % captions.len()].to_string()],
            meta: String::new(),
        })
        .collect();
    let records_path = dir.path().join("records.jsonl");
    write_jsonl(&records_path, &records)?;

    let mut config = RunConfig {
        seed: 17,
        input: records_path,
        out_dir: dir.path().join("out"),
        concurrency: 4,
        ..RunConfig::default()
    };
    config.synth.vocab_size = 48; // shape used when captions become tokens
    config.synth.ctx_dim = 12;
    config.train.steps = 150;
    config.train.batch_size = 6;

    let gen = cmd_chain_gen(&config)?;
    println!(
        "chain-gen: {} chains, {} corruption steps over {} error types",
        gen.attempted,
        gen.total_steps,
        gen.error_type_counts.len()
    );

    config.input = out_path(&config, CHAINS_FILE);
    let audit = cmd_audit(&config, Some(10), true)?;
    println!(
        "audit: structural pass {:.2}, order pass {:?}",
        audit.structural_pass_rate, audit.order_pass_rate
    );

    let split = cmd_transform(&config, Mix { mcq: 1, ynq: 1, chains: 1 })?;
    println!(
        "transform: {} mcq / {} ynq / {} chains kept",
        split.mcq, split.ynq, split.chains_kept
    );

    config.input = out_path(&config, KEPT_CHAINS_FILE);
    let train = cmd_train(&config, None)?;
    let entry = &train.entries[0];
    println!(
        "train: {} chains, final loss {:.4} -> {}",
        entry.examples_used, entry.final_total_loss, entry.checkpoint
    );

    let rank = cmd_eval_rank_acc(
        &config,
        &out_path(&config, CHECKPOINT_FILE),
        &out_path(&config, KEPT_CHAINS_FILE),
    )?;
    println!(
        "eval rank-acc on the training chains: exact {:.3}, pairwise {:.3}",
        rank.exact_order_rate, rank.pairwise_rate
    );

    let mut produced: Vec<PathBuf> = std::fs::read_dir(&config.out_dir)
        .expect("output dir")
        .map(|e| e.expect("dir entry").path())
        .collect();
    produced.sort();
    println!("\nproduced files:");
    for path in produced {
        println!("  {}", path.file_name().unwrap_or_default().to_string_lossy());
    }
    Ok(())
}
