//! Grow corruption chains from a clean caption, offline.
//!
//! Run with `cargo run --example generate_chains`. Uses the scripted mock
//! backend, so the output is deterministic and needs no credentials: the
//! mock applies real one-token mutations that honor the requested error
//! type. Shows both chain layouts and the structural audit.

use rcc::chaingen::{audit_chain, generate_chain, ChainGenConfig};
use rcc::dataset::CaptionRecord;
use rcc::gateway::{Client, MockBehavior};
use rcc::taxonomy::default_taxonomy;
use rcc::Result;

fn main() -> Result<()> {
    // `Auto` picks the faithful scripted behavior for whichever template
    // each request carries — mutation, recaption, or judging.
    let client = Client::mock(vec![MockBehavior::Auto])?;
    let taxonomy = default_taxonomy();
    let record = CaptionRecord {
        video_id: "demo-001".into(),
        captions: vec!["Two cats sit on the mat, then one leaves.".into()],
        meta: String::new(),
    };

    // Nested: each step corrupts the previous caption, so errors pile up
    // and rank k carries exactly k of them.
    let config = ChainGenConfig { chain_len: 3, seed: 42, ..ChainGenConfig::default() };
    let chain = generate_chain(&client, &taxonomy, &record, &config)?;
    println!("nested chain for {} ({} corruption steps):", chain.video_id, chain.steps.len());
    for (rank, caption) in chain.captions.iter().enumerate() {
        println!("  rank {rank}: {caption}");
        if rank < chain.steps.len() {
            let step = &chain.steps[rank];
            println!("      +[{}] {}", step.error_type, step.summary);
        }
    }

    // Independent: every negative is one single-error mutation of the
    // clean caption — same supervision format, different geometry.
    let config = ChainGenConfig { independent: true, ..config };
    let indep = generate_chain(&client, &taxonomy, &record, &config)?;
    println!("\nindependent negatives for {}:", indep.video_id);
    for (rank, caption) in indep.captions.iter().enumerate() {
        println!("  rank {rank}: {caption}");
    }

    // The audit checks structure (lengths, no-op steps, error-type
    // applicability) and, given a judge client, the corruption order.
    for chain in [&chain, &indep] {
        let report = audit_chain(chain, &taxonomy, Some(&client))?;
        println!(
            "\naudit {} (independent: {}): structural {}, order {:?}",
            report.video_id,
            chain.is_independent(),
            if report.structural_pass { "pass" } else { "FAIL" },
            report.order_pass,
        );
        for failure in &report.failures {
            println!("  failure: {failure}");
        }
    }

    // Same seed, same chain — generation is a pure function of
    // (seed, video_id, caption, config).
    let config = ChainGenConfig { independent: false, ..config };
    let again = generate_chain(&client, &taxonomy, &record, &config)?;
    println!("\nsame seed reproduces the chain: {}", again == chain);
    Ok(())
}
