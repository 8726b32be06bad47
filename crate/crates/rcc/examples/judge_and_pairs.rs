//! Rubric judging and preference-pair construction, offline.
//!
//! Run with `cargo run --example judge_and_pairs`. The mock judge scores
//! a predicted caption against a reference on four axes (relevance,
//! descriptiveness, temporal consistency, fluency) by token overlap, so
//! progressively corrupted predictions earn visibly worse scores. The
//! second half mines training pairs from pairwise verdicts under a
//! per-video quota.

use rcc::evalkit::{build_comparison_pairs, judge_caption, PairwiseVerdict, Verdict};
use rcc::gateway::{Client, MockBehavior};
use rcc::Result;

fn main() -> Result<()> {
    let client = Client::mock(vec![MockBehavior::Auto])?;
    let reference = "Two cats sit on the mat, then one leaves.";
    let predictions = [
        "Two cats sit on the mat, then one leaves.",
        "Two cats sit on the mat.",
        "A cat sits somewhere.",
        "Seven dogs swim quickly.",
    ];

    println!("reference: {reference}\n");
    for predicted in predictions {
        let score = judge_caption(&client, predicted, reference)?;
        print!("{:5.2}  [", score.mean());
        for (i, (name, value)) in score.named().iter().enumerate() {
            if i > 0 {
                print!(", ");
            }
            print!("{name} {value}");
        }
        println!("]  {predicted}");
    }

    // Five responses make 5 choose 2 = 10 unordered pairs; verdicts turn
    // them into (winner, loser) training pairs. Ties contribute nothing,
    // and the quota is a per-video bar: a video with at least `quota`
    // decisive verdicts contributes a seeded sample of exactly that many
    // pairs, one with fewer is skipped whole.
    let verdicts: Vec<PairwiseVerdict> = [
        (0, 1, Verdict::First),
        (0, 2, Verdict::First),
        (0, 3, Verdict::First),
        (0, 4, Verdict::First),
        (1, 2, Verdict::First),
        (1, 3, Verdict::Tie),
        (1, 4, Verdict::First),
        (2, 3, Verdict::Second),
        (2, 4, Verdict::First),
        (3, 4, Verdict::First),
    ]
    .into_iter()
    .map(|(first, second, verdict)| PairwiseVerdict {
        video_id: "demo-003".into(),
        first,
        second,
        verdict,
    })
    .collect();
    println!(
        "\n{} verdicts over {} pairs of 5 responses",
        verdicts.len(),
        rcc::evalkit::all_pairs(5).len()
    );

    for quota in [9, 4, 10] {
        let report = build_comparison_pairs(&verdicts, quota, 42)?;
        println!(
            "quota {quota:2}: {} videos kept, {} skipped, {} ties dropped, {} pairs out",
            report.kept_videos,
            report.skipped_videos,
            report.dropped_ties,
            report.pairs.len(),
        );
        if quota == 4 {
            for pair in &report.pairs {
                println!("    response {} beats response {}", pair.winner, pair.loser);
            }
        }
    }
    Ok(())
}
