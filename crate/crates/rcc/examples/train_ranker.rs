//! Train the toy policy to rank a synthetic corruption dataset.
//!
//! Run with `cargo run --example train_ranker`. Builds a small nested
//! corruption dataset, trains the log-linear policy with the listwise
//! objective, and reports ranking accuracy before and after on held-out
//! examples. Everything is seeded, so the printed numbers are stable.

use rcc::encode::derive_seed;
use rcc::evalkit::ranking_accuracy;
use rcc::policy::ToyPolicy;
use rcc::rankloss::{LossConfig, Objective};
use rcc::synth::{make_synth_dataset, SynthConfig};
use rcc::train::{examples_from_synth, mean_top_bottom_margin, train, TrainConfig};
use rcc::Result;

fn main() -> Result<()> {
    let synth = SynthConfig {
        count: 300,
        vocab_size: 24,
        ctx_dim: 12,
        seq_len: 16,
        chain_len: 3,
        seed: 11,
        ..SynthConfig::default()
    };
    let examples = examples_from_synth(&make_synth_dataset(&synth)?);
    let (held_out, training) = examples.split_at(60);
    println!("{} training chains, {} held out", training.len(), held_out.len());

    let loss = LossConfig::new(Objective::PlDpo);
    let train_cfg = TrainConfig { steps: 400, batch_size: 8, seed: 11, ..TrainConfig::default() };
    let initial =
        ToyPolicy::new_random(synth.vocab_size, synth.ctx_dim, derive_seed(11, "policy-init"))?;

    let before = ranking_accuracy(&initial, held_out)?;
    println!(
        "before: exact-order {:.3}, pairwise {:.3}",
        before.exact_order_rate, before.pairwise_rate
    );

    let outcome = train(initial, training, &loss, &train_cfg)?;
    let first = &outcome.trace[0];
    let last = outcome.trace.last().expect("non-empty trace");
    println!(
        "loss: {:.4} at step {} -> {:.4} at step {}",
        first.total, first.step, last.total, last.step
    );

    let after = ranking_accuracy(&outcome.policy, held_out)?;
    println!(
        "after:  exact-order {:.3}, pairwise {:.3}",
        after.exact_order_rate, after.pairwise_rate
    );

    // The log-probability margin between each example's best and worst
    // response is the quantity the ranking objectives push on directly.
    println!(
        "mean top-bottom margin: {:.4} (was {:.4} before training)",
        mean_top_bottom_margin(&outcome.policy, held_out)?,
        mean_top_bottom_margin(&outcome.reference, held_out)?
    );
    Ok(())
}
