//! Ranking-recovery and multiple-choice accuracy of a trained policy.
//!
//! Both evaluations ask the same underlying question — does the policy's
//! log-probability order agree with the known quality order? — at two
//! granularities. `ranking_accuracy` scores whole chains: the exact rate
//! counts chains whose full predicted order is the ground order, and the
//! pairwise rate counts ordered pairs scored consistently, which is the
//! forgiving version (a single transposition costs one pair, not the whole
//! chain). `mcqa_answer` reduces a question to "which option letter does
//! the policy find most probable given the question prompt".

use serde::{Deserialize, Serialize};

use crate::encode::{encode_text, featurize_text};
use crate::error::{Error, Result};
use crate::policy::ToyPolicy;
use crate::train::TrainExample;
use crate::transform::McqItem;

/// Chain-ordering agreement rates, plus the tie diagnostic that keeps a
/// degenerate constant-score policy from masquerading as a perfect one:
/// stable tie-breaking makes equal scores reproduce the input order, so a
/// high exact rate with many tied pairs means nothing was learned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingAccuracy {
    /// Fraction of chains ranked in exactly the ground order.
    pub exact_order_rate: f64,
    /// Fraction of ordered pairs scored strictly consistently.
    pub pairwise_rate: f64,
    pub chains: usize,
    /// Compared pairs whose two scores were exactly equal.
    pub tied_pairs: usize,
}

/// Score every response of every example and compare the induced order
/// with the ground (best-first) order.
pub fn ranking_accuracy(
    policy: &ToyPolicy,
    dataset: &[TrainExample],
) -> Result<RankingAccuracy> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("ranking accuracy over an empty dataset".into()));
    }
    let mut exact = 0usize;
    let mut consistent_pairs = 0usize;
    let mut total_pairs = 0usize;
    let mut tied_pairs = 0usize;

    for (idx, ex) in dataset.iter().enumerate() {
        if ex.items.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "example {idx} has {} responses; ranking needs at least 2",
                ex.items.len()
            )));
        }
        let scores = ex
            .items
            .iter()
            .map(|it| policy.response_logprob(&ex.context, &it.prompt, &it.response))
            .collect::<Result<Vec<f64>>>()?;

        // Stable best-first argsort: ties keep input order, mirroring how
        // the policy ranks chains elsewhere.
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b].partial_cmp(&scores[a]).expect("scores are finite")
        });
        if order.iter().enumerate().all(|(rank, &i)| rank == i) {
            exact += 1;
        }

        for i in 0..scores.len() {
            for j in (i + 1)..scores.len() {
                total_pairs += 1;
                if scores[i] > scores[j] {
                    consistent_pairs += 1;
                } else if scores[i] == scores[j] {
                    tied_pairs += 1;
                }
            }
        }
    }

    Ok(RankingAccuracy {
        exact_order_rate: exact as f64 / dataset.len() as f64,
        pairwise_rate: consistent_pairs as f64 / total_pairs as f64,
        chains: dataset.len(),
        tied_pairs,
    })
}

/// Stable argmax over option letters: strictly greater wins, ties keep the
/// earliest letter.
pub fn best_letter<'a>(letters: &'a [String], logprobs: &[f64]) -> Result<&'a str> {
    if letters.len() < 2 {
        return Err(Error::InvalidInput("multiple choice needs at least two letters".into()));
    }
    if letters.len() != logprobs.len() {
        return Err(Error::InvalidInput(format!(
            "{} letters but {} scores",
            letters.len(),
            logprobs.len()
        )));
    }
    let mut best = 0usize;
    for (i, lp) in logprobs.iter().enumerate() {
        if !lp.is_finite() {
            return Err(Error::Invariant(format!("non-finite letter score {lp}")));
        }
        if *lp > logprobs[best] {
            best = i;
        }
    }
    Ok(&letters[best])
}

/// Answer a multiple-choice question: score each option letter as a
/// response to the question prompt and return the most probable letter.
pub fn mcqa_answer<'a>(
    policy: &ToyPolicy,
    context: &[f64],
    letters: &'a [String],
    prompt: &[usize],
) -> Result<&'a str> {
    let mut scores = Vec::with_capacity(letters.len());
    for letter in letters {
        let tokens = encode_text(letter, policy.vocab_size());
        if tokens.is_empty() {
            return Err(Error::InvalidInput(format!("letter {letter:?} encodes to no tokens")));
        }
        scores.push(policy.response_logprob(context, prompt, &tokens)?);
    }
    best_letter(letters, &scores)
}

/// Fraction of multiple-choice items the policy answers correctly. Uses
/// the same question encoding as the training adapter, so a policy trained
/// on transformed chains is evaluated on its own input convention.
pub fn mcqa_accuracy(policy: &ToyPolicy, items: &[McqItem]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::InvalidInput("multiple-choice accuracy over no items".into()));
    }
    let mut correct = 0usize;
    for item in items {
        let context = featurize_text(&item.question, policy.ctx_dim());
        let prompt = encode_text(&item.question, policy.vocab_size());
        let letters: Vec<String> = item.choices.iter().map(|c| c.letter.clone()).collect();
        let chosen = mcqa_answer(policy, &context, &letters, &prompt)?;
        if chosen == item.answer {
            correct += 1;
        }
    }
    Ok(correct as f64 / items.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::SeqItem;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// A policy whose score for a response is dominated by its first
    /// token's bias, built by hand so order is controllable.
    fn biased_policy(bias: &[f64]) -> ToyPolicy {
        let mut policy = ToyPolicy::new_random(bias.len(), 2, 0).unwrap();
        // Zero everything, then plant the bias.
        for tensor in policy.tensors_mut() {
            for v in tensor.iter_mut() {
                *v = 0.0;
            }
        }
        let [_, _, b] = policy.tensors_mut();
        b.copy_from_slice(bias);
        policy
    }

    fn example(responses: &[&[usize]]) -> TrainExample {
        TrainExample {
            context: vec![0.0, 0.0],
            items: responses.iter().map(|r| SeqItem::bare(r.to_vec())).collect(),
        }
    }

    #[test]
    fn well_ordered_scores_give_perfect_rates() {
        // Bias strongly favors token 1 over 2 over 3.
        let policy = biased_policy(&[0.0, 6.0, 3.0, 0.0]);
        let data = vec![example(&[&[1], &[2], &[3]])];
        let acc = ranking_accuracy(&policy, &data).unwrap();
        assert_eq!(acc.exact_order_rate, 1.0);
        assert_eq!(acc.pairwise_rate, 1.0);
        assert_eq!(acc.tied_pairs, 0);
        assert_eq!(acc.chains, 1);
    }

    #[test]
    fn reversed_scores_give_zero_pairwise_rate() {
        let policy = biased_policy(&[0.0, 6.0, 3.0, 0.0]);
        let data = vec![example(&[&[3], &[2], &[1]])];
        let acc = ranking_accuracy(&policy, &data).unwrap();
        assert_eq!(acc.exact_order_rate, 0.0);
        assert_eq!(acc.pairwise_rate, 0.0);
    }

    #[test]
    fn constant_scores_are_exact_by_tie_break_and_flagged() {
        let policy = biased_policy(&[0.0, 0.0, 0.0, 0.0]);
        let data = vec![example(&[&[1], &[2], &[3]])];
        let acc = ranking_accuracy(&policy, &data).unwrap();
        assert_eq!(acc.exact_order_rate, 1.0);
        assert_eq!(acc.pairwise_rate, 0.0);
        assert_eq!(acc.tied_pairs, 3, "the degenerate case must be visible");
    }

    #[test]
    fn one_transposition_costs_one_pair() {
        // Ground order [1,3,2] vs score order 1 > 2 > 3: the (3,2) pair is
        // inverted, pairs (1,3) and (1,2) hold → 2/3.
        let policy = biased_policy(&[0.0, 6.0, 3.0, 0.0]);
        let data = vec![example(&[&[1], &[3], &[2]])];
        let acc = ranking_accuracy(&policy, &data).unwrap();
        assert_eq!(acc.exact_order_rate, 0.0);
        assert!((acc.pairwise_rate - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn random_scores_on_pairs_sit_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut consistent = 0usize;
        let trials = 4000;
        for _ in 0..trials {
            let a: f64 = rng.gen();
            let b: f64 = rng.gen();
            if a > b {
                consistent += 1;
            }
        }
        let rate = consistent as f64 / trials as f64;
        assert!((rate - 0.5).abs() < 0.05, "rate {rate}");

        // And through the full pipeline: random-parameter policies on
        // two-response chains of random tokens.
        let mut pair_rates = Vec::new();
        for seed in 0..20u64 {
            let policy = ToyPolicy::new_random(16, 4, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let data: Vec<TrainExample> = (0..50)
                .map(|_| {
                    let context = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let mut draw = || -> Vec<usize> {
                        (0..6).map(|_| rng.gen_range(1..16)).collect()
                    };
                    TrainExample {
                        context,
                        items: vec![SeqItem::bare(draw()), SeqItem::bare(draw())],
                    }
                })
                .collect();
            pair_rates.push(ranking_accuracy(&policy, &data).unwrap().pairwise_rate);
        }
        let mean = pair_rates.iter().sum::<f64>() / pair_rates.len() as f64;
        assert!((mean - 0.5).abs() < 0.05, "mean pairwise rate {mean}");
    }

    #[test]
    fn empty_and_singleton_inputs_are_rejected() {
        let policy = biased_policy(&[0.0; 4]);
        assert!(ranking_accuracy(&policy, &[]).is_err());
        let singleton = vec![example(&[&[1]])];
        assert!(ranking_accuracy(&policy, &singleton).is_err());
    }

    #[test]
    fn best_letter_is_stable_and_shift_invariant() {
        let letters: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        assert_eq!(best_letter(&letters, &[-1.0, -0.5, -2.0]).unwrap(), "B");
        assert_eq!(best_letter(&letters, &[-1.0, -1.0, -1.0]).unwrap(), "A");
        // Adding a common constant never changes the winner.
        let base = [-1.3, -0.2, -4.0];
        let winner = best_letter(&letters, &base).unwrap();
        for shift in [-100.0, -1.0, 0.5, 42.0] {
            let shifted: Vec<f64> = base.iter().map(|s| s + shift).collect();
            assert_eq!(best_letter(&letters, &shifted).unwrap(), winner);
        }
        assert!(best_letter(&letters[..1].to_vec(), &[-1.0]).is_err());
    }

    #[test]
    fn mcqa_answer_follows_the_policy_preference() {
        // Make "b" score higher than "a" or "c" by biasing its hash token.
        let vocab = 32;
        let letters: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let token_of = |s: &str| crate::encode::encode_text(s, vocab)[0];
        let mut bias = vec![0.0; vocab];
        bias[token_of("b")] = 5.0;
        bias[token_of("a")] = 1.0;
        let mut policy = ToyPolicy::new_random(vocab, 2, 0).unwrap();
        for tensor in policy.tensors_mut() {
            for v in tensor.iter_mut() {
                *v = 0.0;
            }
        }
        let [_, _, b] = policy.tensors_mut();
        b.copy_from_slice(&bias);

        let chosen = mcqa_answer(&policy, &[0.0, 0.0], &letters, &[]).unwrap();
        assert_eq!(chosen, "b");
    }
}
