//! Question-answering transforms of caption chains.
//!
//! A ranked chain can be re-expressed as question answering without losing
//! its ranking signal, which lets caption training piggyback on QA-shaped
//! evaluation. Two transforms are provided:
//!
//! * **Multiple choice**: the chain's captions become the answer options of
//!   a "which caption is accurate?" question. Options are shuffled with a
//!   seeded rng so position never encodes quality, and the original rank of
//!   every option is kept alongside, so the full ordering — not just the
//!   correct answer — remains available as supervision.
//!
//! * **Yes/no**: each corruption step becomes an existence question about
//!   the detail it invented ("Is there an obelisk in the video?"), whose
//!   correct answer is always "no". Questions are ordered deepest
//!   corruption first: a detail inserted at the last step appears in only
//!   one caption of the chain, so it is the least supported and "no" is
//!   clearest there.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chaingen::CaptionChain;
use crate::encode::derive_seed;
use crate::error::{Error, Result};
use crate::gateway::{Client, CompletionRequest};

/// Answer-option letters, assigned by shuffled position.
const LETTERS: &[char] = &[
    'A', 'B', 'C', 'D', 'E', 'F', 'G', 'H', 'I', 'J', 'K', 'L', 'M', 'N', 'O', 'P', 'Q', 'R',
    'S', 'T', 'U', 'V', 'W', 'X', 'Y', 'Z',
];

/// One lettered answer option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqChoice {
    pub letter: String,
    pub text: String,
}

/// A multiple-choice item derived from one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqItem {
    pub video_id: String,
    pub question: String,
    pub choices: Vec<McqChoice>,
    /// `quality_rank[i]` is the chain rank of `choices[i]`: 0 for the
    /// clean caption, larger for more corrupted ones. Always a permutation
    /// of `0..choices.len()`.
    pub quality_rank: Vec<usize>,
    /// Letter of the rank-0 choice — the correct answer.
    pub answer: String,
}

impl McqItem {
    /// Letter of the choice holding chain rank `rank`.
    pub fn letter_of_rank(&self, rank: usize) -> Option<&str> {
        self.quality_rank
            .iter()
            .position(|&r| r == rank)
            .map(|i| self.choices[i].letter.as_str())
    }
}

/// A yes/no item set derived from one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YnqChain {
    pub video_id: String,
    /// Existence questions about invented details, deepest corruption
    /// first.
    pub questions: Vec<String>,
    /// The answer every question shares.
    pub target_response: String,
}

/// Ask the model to phrase a multiple-choice question over the chain's
/// captions, then shuffle the options with an rng derived from `seed` and
/// the video id.
pub fn chain_to_mcq(client: &Client, chain: &CaptionChain, seed: u64) -> Result<McqItem> {
    if chain.captions.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "chain {} has {} captions; multiple choice needs at least 2",
            chain.video_id,
            chain.captions.len()
        )));
    }
    if chain.captions.len() > LETTERS.len() {
        return Err(Error::InvalidInput(format!(
            "chain {} has {} captions; only {} option letters exist",
            chain.video_id,
            chain.captions.len(),
            LETTERS.len()
        )));
    }

    let request = CompletionRequest::new("mcq_gen")
        .var("video_id", &chain.video_id)
        .var("captions", &chain.captions.join("\n"))
        .var("n", &chain.captions.len().to_string());
    let reply = client.complete(&request)?;
    let (question, options) = parse_mcq_reply(&reply, chain.captions.len())?;

    // Shuffle ranks, not strings: position i gets the caption of chain
    // rank order[i].
    let mut order: Vec<usize> = (0..options.len()).collect();
    let label = format!("mcq-shuffle-{}", chain.video_id);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &label));
    order.shuffle(&mut rng);

    let choices: Vec<McqChoice> = order
        .iter()
        .enumerate()
        .map(|(i, &rank)| McqChoice {
            letter: LETTERS[i].to_string(),
            text: options[rank].clone(),
        })
        .collect();
    let answer_pos = order.iter().position(|&r| r == 0).expect("0 is in the permutation");

    Ok(McqItem {
        video_id: chain.video_id.clone(),
        question,
        answer: choices[answer_pos].letter.clone(),
        quality_rank: order,
        choices,
    })
}

/// Parse `QUESTION:` and `CHOICE i:` lines; exactly `expected` choices, in
/// 1-based order.
fn parse_mcq_reply(reply: &str, expected: usize) -> Result<(String, Vec<String>)> {
    let mut question = None;
    let mut options: Vec<String> = Vec::new();
    for line in reply.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("QUESTION:") {
            question = Some(rest.trim().to_string());
        } else if let Some(rest) = line.strip_prefix("CHOICE ") {
            let (index, text) = rest.split_once(':').ok_or_else(|| {
                Error::Parse(format!("choice line without a colon: {line:?}"))
            })?;
            let index: usize = index.trim().parse().map_err(|_| {
                Error::Parse(format!("choice line with a non-numeric index: {line:?}"))
            })?;
            if index != options.len() + 1 {
                return Err(Error::Parse(format!(
                    "choice {index} arrived out of order; expected choice {}",
                    options.len() + 1
                )));
            }
            options.push(text.trim().to_string());
        }
    }
    let question = question
        .filter(|q| !q.is_empty())
        .ok_or_else(|| Error::Parse(format!("reply has no QUESTION line: {reply:?}")))?;
    if options.len() != expected {
        return Err(Error::Parse(format!(
            "reply has {} choices, expected {expected}: {reply:?}",
            options.len()
        )));
    }
    if options.iter().any(|o| o.is_empty()) {
        return Err(Error::Parse("reply contains an empty choice".into()));
    }
    Ok((question, options))
}

/// Ask the model to phrase one existence question per corruption step,
/// then order them deepest corruption first.
pub fn chain_to_ynq(client: &Client, chain: &CaptionChain) -> Result<YnqChain> {
    if chain.steps.is_empty() {
        return Err(Error::InvalidInput(format!(
            "chain {} has no corruption steps to ask about",
            chain.video_id
        )));
    }
    let changes: Vec<&str> = chain.steps.iter().map(|s| s.summary.as_str()).collect();
    let request = CompletionRequest::new("ynq_gen")
        .var("changes", &changes.join("\n"))
        .var("n", &changes.len().to_string());
    let reply = client.complete(&request)?;

    let mut questions: Vec<String> = Vec::new();
    for line in reply.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix('Q') {
            if let Some((index, text)) = rest.split_once(':') {
                if index.trim().parse::<usize>() == Ok(questions.len() + 1) {
                    questions.push(text.trim().to_string());
                    continue;
                }
            }
            return Err(Error::Parse(format!("malformed question line: {line:?}")));
        }
    }
    if questions.len() != chain.steps.len() {
        return Err(Error::Parse(format!(
            "reply has {} questions for {} corruption steps: {reply:?}",
            questions.len(),
            chain.steps.len()
        )));
    }
    if questions.iter().any(|q| q.is_empty()) {
        return Err(Error::Parse("reply contains an empty question".into()));
    }

    // The reply follows step order (shallowest corruption first); flip it.
    questions.reverse();
    Ok(YnqChain {
        video_id: chain.video_id.clone(),
        questions,
        target_response: "no".to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaingen::{generate_chain, ChainGenConfig};
    use crate::dataset::CaptionRecord;
    use crate::gateway::MockBehavior;
    use crate::taxonomy::default_taxonomy;

    fn mock_chain(video_id: &str, chain_len: usize) -> CaptionChain {
        let client = Client::mock(vec![MockBehavior::Auto]).unwrap();
        let record = CaptionRecord {
            video_id: video_id.into(),
            captions: vec!["Two cats sit on the mat, then one leaves.".into()],
            meta: String::new(),
        };
        let cfg = ChainGenConfig { chain_len, ..Default::default() };
        generate_chain(&client, &default_taxonomy(), &record, &cfg).unwrap()
    }

    #[test]
    fn mcq_keeps_every_caption_and_the_full_ranking() {
        let chain = mock_chain("vid-a", 3);
        let client = Client::mock(vec![MockBehavior::Auto]).unwrap();
        let item = chain_to_mcq(&client, &chain, 0).unwrap();

        assert!(!item.question.is_empty());
        assert_eq!(item.choices.len(), 4);
        let letters: Vec<&str> = item.choices.iter().map(|c| c.letter.as_str()).collect();
        assert_eq!(letters, ["A", "B", "C", "D"]);

        // quality_rank is a permutation of 0..4.
        let mut ranks = item.quality_rank.clone();
        ranks.sort_unstable();
        assert_eq!(ranks, [0, 1, 2, 3]);

        // Every choice text is the caption of its recorded rank, and the
        // answer letter points at the clean caption.
        for (i, choice) in item.choices.iter().enumerate() {
            assert_eq!(choice.text, chain.captions[item.quality_rank[i]]);
        }
        assert_eq!(item.letter_of_rank(0), Some(item.answer.as_str()));
        let answered = item.choices.iter().find(|c| c.letter == item.answer).unwrap();
        assert_eq!(answered.text, chain.captions[0]);
    }

    #[test]
    fn mcq_shuffle_is_seeded_and_actually_shuffles() {
        let chain = mock_chain("vid-b", 3);
        let client = Client::mock(vec![MockBehavior::Auto]).unwrap();
        let a = chain_to_mcq(&client, &chain, 7).unwrap();
        let b = chain_to_mcq(&client, &chain, 7).unwrap();
        assert_eq!(a, b);

        // Across a handful of seeds the permutation must move: if every
        // seed left ranks in chain order, position would leak quality.
        let identity = (0..4).collect::<Vec<usize>>();
        let permutations: Vec<Vec<usize>> = (0..6u64)
            .map(|seed| chain_to_mcq(&client, &chain, seed).unwrap().quality_rank)
            .collect();
        assert!(
            permutations.iter().any(|p| *p != identity),
            "no seed permuted the options"
        );
        assert!(
            permutations.iter().any(|p| *p != permutations[0]),
            "every seed picked the same permutation"
        );
    }

    #[test]
    fn mcq_rejects_short_chains_and_bad_replies() {
        let chain = mock_chain("vid-c", 3);
        let client = Client::mock(vec![MockBehavior::Text { text: "no protocol here".into() }])
            .unwrap();
        assert!(matches!(chain_to_mcq(&client, &chain, 0), Err(Error::Parse(_))));

        let truncated = Client::mock(vec![MockBehavior::Text {
            text: "QUESTION: pick one\nCHOICE 1: only option".into(),
        }])
        .unwrap();
        assert!(matches!(chain_to_mcq(&truncated, &chain, 0), Err(Error::Parse(_))));

        let singleton = CaptionChain { captions: vec!["one".into()], ..chain };
        let auto = Client::mock(vec![MockBehavior::Auto]).unwrap();
        assert!(matches!(
            chain_to_mcq(&auto, &singleton, 0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn ynq_orders_questions_deepest_corruption_first() {
        let chain = mock_chain("vid-d", 3);
        let client = Client::mock(vec![MockBehavior::Auto]).unwrap();
        let ynq = chain_to_ynq(&client, &chain).unwrap();

        assert_eq!(ynq.questions.len(), 3);
        assert_eq!(ynq.target_response, "no");
        // The mock asks about the detail each change inserted; the first
        // question must name the detail of the *last* step.
        let detail_of = |summary: &str| {
            summary.rsplit('\'').nth(1).unwrap().to_lowercase()
        };
        assert!(
            ynq.questions[0].contains(&detail_of(&chain.steps[2].summary)),
            "{:?} vs {:?}",
            ynq.questions[0],
            chain.steps[2].summary
        );
        assert!(
            ynq.questions[2].contains(&detail_of(&chain.steps[0].summary)),
            "{:?} vs {:?}",
            ynq.questions[2],
            chain.steps[0].summary
        );
    }

    #[test]
    fn ynq_rejects_stepless_chains_and_miscounted_replies() {
        let chain = mock_chain("vid-e", 3);
        let stepless = CaptionChain { steps: vec![], ..chain.clone() };
        let auto = Client::mock(vec![MockBehavior::Auto]).unwrap();
        assert!(matches!(chain_to_ynq(&auto, &stepless), Err(Error::InvalidInput(_))));

        let short = Client::mock(vec![MockBehavior::Text {
            text: "Q1: Is there a walrus in the video?".into(),
        }])
        .unwrap();
        assert!(matches!(chain_to_ynq(&short, &chain), Err(Error::Parse(_))));
    }

    #[test]
    fn transforms_roundtrip_through_jsonl() {
        let chain = mock_chain("vid-f", 3);
        let client = Client::mock(vec![MockBehavior::Auto]).unwrap();
        let mcq = vec![chain_to_mcq(&client, &chain, 1).unwrap()];
        let ynq = vec![chain_to_ynq(&client, &chain).unwrap()];

        let mcq_bytes = crate::dataset::to_jsonl(&mcq).unwrap();
        let mcq_back: Vec<McqItem> =
            crate::dataset::parse_jsonl(&String::from_utf8(mcq_bytes).unwrap(), "mem").unwrap();
        assert_eq!(mcq_back, mcq);

        let ynq_bytes = crate::dataset::to_jsonl(&ynq).unwrap();
        let ynq_back: Vec<YnqChain> =
            crate::dataset::parse_jsonl(&String::from_utf8(ynq_bytes).unwrap(), "mem").unwrap();
        assert_eq!(ynq_back, ynq);
    }
}
