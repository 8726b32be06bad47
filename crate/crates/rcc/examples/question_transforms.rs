//! Turn a corruption chain into question-format supervision.
//!
//! Run with `cargo run --example question_transforms`. A chain already
//! ranks its captions by quality; the transforms repackage that ranking as
//! a multiple-choice item (which caption is right?) and as yes/no
//! questions about the invented details (all answered "no").

use rcc::chaingen::{generate_chain, ChainGenConfig};
use rcc::dataset::CaptionRecord;
use rcc::gateway::{Client, MockBehavior};
use rcc::taxonomy::default_taxonomy;
use rcc::transform::{chain_to_mcq, chain_to_ynq};
use rcc::Result;

fn main() -> Result<()> {
    let client = Client::mock(vec![MockBehavior::Auto])?;
    let record = CaptionRecord {
        video_id: "demo-002".into(),
        captions: vec!["A chef slices three onions before plating the dish.".into()],
        meta: String::new(),
    };
    let config = ChainGenConfig { chain_len: 3, seed: 7, ..ChainGenConfig::default() };
    let chain = generate_chain(&client, &default_taxonomy(), &record, &config)?;

    // Multiple choice: the choices are the chain's captions in a seeded
    // shuffle; `quality_rank` remembers each choice's original rank and
    // `answer` names the clean caption's letter.
    let mcq = chain_to_mcq(&client, &chain, config.seed)?;
    println!("MCQ for {}:", mcq.video_id);
    println!("  Q: {}", mcq.question);
    for (choice, rank) in mcq.choices.iter().zip(&mcq.quality_rank) {
        println!("  {}: {}   (chain rank {rank})", choice.letter, choice.text);
    }
    println!("  correct answer: {}", mcq.answer);

    // Yes/no: one question per corruption step, asking whether the
    // invented detail is really in the video. Deepest corruption first,
    // and the target response to every question is "no".
    let ynq = chain_to_ynq(&client, &chain)?;
    println!("\nYNQ for {} (target response: {:?}):", ynq.video_id, ynq.target_response);
    for (i, question) in ynq.questions.iter().enumerate() {
        println!("  {}. {}", i + 1, question);
    }

    // The shuffle is part of the data, not of the run: the same seed
    // always deals the same letters.
    let again = chain_to_mcq(&client, &chain, config.seed)?;
    println!("\nsame seed deals the same MCQ: {}", again == mcq);
    Ok(())
}
