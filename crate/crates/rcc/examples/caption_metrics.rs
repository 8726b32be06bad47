//! Reference-based caption metrics and rank statistics, worked by hand.
//!
//! Run with `cargo run --example caption_metrics`. Small enough to verify
//! with pencil and paper: each printed value is annotated with the
//! counting that produces it.

use rcc::evalkit::{
    head_to_head, meteor_lite, rlaifv_f1, rouge_l, spearman, Side,
};
use rcc::Result;

fn main() -> Result<()> {
    // Longest-common-subsequence overlap. "the cat sat" vs "the cat on
    // the mat": LCS = "the cat" (2 tokens), precision 2/3, recall 2/5.
    let score = rouge_l("the cat sat", "the cat on the mat");
    println!(
        "rouge-l: precision {:.4} [2/3], recall {:.4} [2/5], f {:.4}",
        score.precision, score.recall, score.value
    );

    // Unigram matching with a fragmentation penalty. Identical captions
    // match perfectly but still pay for their chunk count: "the cat sat"
    // is one chunk of three tokens, so the penalty is 0.5 * (1/3)^3 and
    // the score is 53/54, not 1.
    let same = meteor_lite("the cat sat", "the cat sat");
    println!("meteor-lite, identical:  {:.6} [53/54 = {:.6}]", same.value, 53.0 / 54.0);
    let disjoint = meteor_lite("the cat sat", "dogs run fast");
    println!("meteor-lite, disjoint:   {:.6}", disjoint.value);
    let single = meteor_lite("cat", "cat");
    println!("meteor-lite, one token:  {:.6} [1 - 0.5 * 1^3]", single.value);

    // Rank correlation between two scorings of the same captions. Ties
    // get averaged ranks, and a constant side is an error rather than a
    // silent zero.
    println!(
        "\nspearman, same order:     {:+.4}",
        spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 30.0, 40.0])?
    );
    println!(
        "spearman, reversed:       {:+.4}",
        spearman(&[1.0, 2.0, 3.0, 4.0], &[40.0, 30.0, 20.0, 10.0])?
    );
    println!(
        "spearman, one swap:       {:+.4}",
        spearman(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0])?
    );
    println!(
        "spearman on a constant side: {:?}",
        spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]).map_err(|e| e.to_string())
    );

    // Harmonic precision/recall mean, and a win-rate split. 53 wins out
    // of 100 comparisons is (0.53, 0.47).
    println!("\nf1 of precision 2/3, recall 2/5: {:.4}", rlaifv_f1(2.0 / 3.0, 2.0 / 5.0)?);
    let outcomes: Vec<Side> = (0..100).map(|i| if i < 53 { Side::A } else { Side::B }).collect();
    let (a, b) = head_to_head(&outcomes)?;
    println!("head-to-head over 100 duels: {a:.2} vs {b:.2}");
    Ok(())
}
