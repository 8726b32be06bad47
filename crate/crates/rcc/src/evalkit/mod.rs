//! Evaluation toolkit: judge scoring, overlap metrics, rank agreement,
//! and preference-pair math.
//!
//! Three families live here. Model-based evaluation asks a judge for
//! four 1–10 scores per caption ([`judge_caption`]) and measures how well
//! two score sources agree ([`spearman`]). Reference-based evaluation
//! scores captions against ground truth with LCS and alignment overlap
//! ([`rouge_l`], [`meteor_lite`]). Ranking evaluation checks how much of a
//! known quality order a policy reproduces ([`ranking_accuracy`],
//! [`mcqa_answer`]) and assembles preference datasets from comparison
//! verdicts ([`build_comparison_pairs`], [`rlaifv_f1`], [`head_to_head`]).
//!
//! Everything except the judge call is a pure function; judge calls go
//! through the shared gateway and inherit its retry and concurrency rules.

pub mod ngram;
pub mod pairs;
pub mod ranking;

pub use ngram::{meteor_lite, rouge_l, NgramMetric, NgramScore};
pub use pairs::{
    all_pairs, build_comparison_pairs, PairReport, PairwiseVerdict, PreferencePair, Verdict,
};
pub use ranking::{
    best_letter, mcqa_accuracy, mcqa_answer, ranking_accuracy, RankingAccuracy,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{Client, CompletionRequest};

/// Reply-parse attempts before a judge call gives up. Transport failures
/// are retried separately (and more patiently) by the gateway.
const JUDGE_PARSE_ATTEMPTS: usize = 3;

/// Four-axis caption judgment, each axis an integer 1–10.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeScore {
    pub relevance: u8,
    pub descriptiveness: u8,
    pub temporal_consistency: u8,
    pub fluency: u8,
}

impl JudgeScore {
    pub fn new(
        relevance: u8,
        descriptiveness: u8,
        temporal_consistency: u8,
        fluency: u8,
    ) -> Result<Self> {
        let score = JudgeScore { relevance, descriptiveness, temporal_consistency, fluency };
        for (name, v) in score.named() {
            if !(1..=10).contains(&v) {
                return Err(Error::InvalidInput(format!(
                    "{name} score {v} is outside 1..=10"
                )));
            }
        }
        Ok(score)
    }

    pub fn named(&self) -> [(&'static str, u8); 4] {
        [
            ("relevance", self.relevance),
            ("descriptiveness", self.descriptiveness),
            ("temporal_consistency", self.temporal_consistency),
            ("fluency", self.fluency),
        ]
    }

    pub fn as_array(&self) -> [u8; 4] {
        [self.relevance, self.descriptiveness, self.temporal_consistency, self.fluency]
    }

    pub fn mean(&self) -> f64 {
        self.as_array().iter().map(|&v| v as f64).sum::<f64>() / 4.0
    }
}

/// All integers (digit runs) in a string, in order.
fn integers_in(text: &str) -> Vec<u32> {
    let mut out = Vec::new();
    let mut current: Option<u32> = None;
    for c in text.chars() {
        if let Some(d) = c.to_digit(10) {
            current = Some(current.unwrap_or(0).saturating_mul(10).saturating_add(d));
        } else if let Some(v) = current.take() {
            out.push(v);
        }
    }
    if let Some(v) = current {
        out.push(v);
    }
    out
}

fn in_range(v: u32) -> Option<u8> {
    (1..=10).contains(&v).then_some(v as u8)
}

/// Parse a judge reply: labeled `Metric: <n>` lines preferred, otherwise
/// the first four integers in reading order. Any score outside 1–10 makes
/// the reply unusable.
fn parse_judge_reply(reply: &str) -> Option<JudgeScore> {
    let labels = ["relevance", "descriptiveness", "temporal", "fluency"];
    let mut labeled: [Option<u8>; 4] = [None; 4];
    for line in reply.lines() {
        let lower = line.trim().to_lowercase();
        for (slot, label) in labeled.iter_mut().zip(labels) {
            if slot.is_none() && lower.starts_with(label) {
                *slot = integers_in(line).first().copied().and_then(in_range);
            }
        }
    }
    if let [Some(r), Some(d), Some(t), Some(f)] = labeled {
        return Some(JudgeScore {
            relevance: r,
            descriptiveness: d,
            temporal_consistency: t,
            fluency: f,
        });
    }

    let numbers = integers_in(reply);
    if numbers.len() < 4 {
        return None;
    }
    let mut scores = [0u8; 4];
    for (slot, &n) in scores.iter_mut().zip(&numbers) {
        *slot = in_range(n)?;
    }
    Some(JudgeScore {
        relevance: scores[0],
        descriptiveness: scores[1],
        temporal_consistency: scores[2],
        fluency: scores[3],
    })
}

/// Score `predicted` against `reference` with the judge template,
/// re-asking on malformed replies up to a small bound. Transport errors
/// propagate immediately — the gateway already retried them.
pub fn judge_caption(client: &Client, predicted: &str, reference: &str) -> Result<JudgeScore> {
    if predicted.trim().is_empty() || reference.trim().is_empty() {
        return Err(Error::InvalidInput("judge needs non-empty captions".into()));
    }
    let request = CompletionRequest::new("judge")
        .var("reference", reference)
        .var("predicted", predicted)
        .deterministic();
    let mut last_reply = String::new();
    for _ in 0..JUDGE_PARSE_ATTEMPTS {
        let reply = client.complete(&request)?;
        if let Some(score) = parse_judge_reply(&reply) {
            return Ok(score);
        }
        last_reply = reply;
    }
    Err(Error::Parse(format!(
        "judge reply stayed unparseable over {JUDGE_PARSE_ATTEMPTS} attempts; last: {last_reply:?}"
    )))
}

// ─────────────────────────────────────────────────────────────────────────
// Agreement and preference math
// ─────────────────────────────────────────────────────────────────────────

/// 1-based ranks with ties averaged.
fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].partial_cmp(&x[j]).expect("inputs are finite"));
    let mut ranks = vec![0.0; x.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut m = k;
        while m + 1 < idx.len() && x[idx[m + 1]] == x[idx[k]] {
            m += 1;
        }
        let avg = (k + m) as f64 / 2.0 + 1.0;
        for t in k..=m {
            ranks[idx[t]] = avg;
        }
        k = m + 1;
    }
    ranks
}

/// Rank correlation: Pearson correlation of average ranks.
///
/// A side with zero rank variance (all values equal) has no defined
/// correlation with anything; that is reported as its own error variant
/// rather than a quiet NaN.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "correlation needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidInput("correlation needs at least 2 points".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("correlation inputs must be finite".into()));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = ra.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let (ma, mb) = (mean(&ra), mean(&rb));
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        var_a += (x - ma).powi(2);
        var_b += (y - mb).powi(2);
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "one side has constant ranks; correlation is undefined".into(),
        ));
    }
    Ok(cov / (var_a.sqrt() * var_b.sqrt()))
}

/// Harmonic mean of claim precision and recall; 0 when both are 0.
pub fn rlaifv_f1(precision: f64, recall: f64) -> Result<f64> {
    for (name, v) in [("precision", precision), ("recall", recall)] {
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidInput(format!("{name} {v} is outside [0,1]")));
        }
    }
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// One of two systems under head-to-head comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Side {
    A,
    B,
}

/// Win rates from a list of per-item preferences; always sums to 1.
pub fn head_to_head(preferences: &[Side]) -> Result<(f64, f64)> {
    if preferences.is_empty() {
        return Err(Error::InvalidInput("no preferences to tally".into()));
    }
    let a = preferences.iter().filter(|p| **p == Side::A).count() as f64;
    let n = preferences.len() as f64;
    Ok((a / n, (n - a) / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockBehavior;
    use approx::assert_relative_eq;

    #[test]
    fn fixed_judge_reply_parses_positionally() {
        let client = Client::mock(vec![MockBehavior::JudgeScores { text: "7 7 7 7".into() }])
            .unwrap();
        let score = judge_caption(&client, "a dog", "a dog").unwrap();
        assert_eq!(score, JudgeScore::new(7, 7, 7, 7).unwrap());
    }

    #[test]
    fn labeled_judge_reply_parses_by_label() {
        let text = "Relevance: 9\nDescriptiveness: 6\nTemporal Consistency: 4\nFluency: 10";
        let client =
            Client::mock(vec![MockBehavior::JudgeScores { text: text.into() }]).unwrap();
        let score = judge_caption(&client, "x", "y").unwrap();
        assert_eq!(score.as_array(), [9, 6, 4, 10]);
        assert_relative_eq!(score.mean(), 7.25);
    }

    #[test]
    fn out_of_range_scores_are_retried_then_accepted() {
        let (client, backend) = Client::mock_with_handle(vec![
            MockBehavior::JudgeScores { text: "11 7 7 7".into() },
            MockBehavior::JudgeScores { text: "8 7 6 5".into() },
        ])
        .unwrap();
        let score = judge_caption(&client, "x", "y").unwrap();
        assert_eq!(score.as_array(), [8, 7, 6, 5]);
        assert_eq!(backend.calls(), 2);
    }

    #[test]
    fn persistently_malformed_replies_become_a_parse_error() {
        let (client, backend) = Client::mock_with_handle(vec![MockBehavior::Text {
            text: "I would rate this caption quite highly overall".into(),
        }])
        .unwrap();
        let err = judge_caption(&client, "x", "y").unwrap_err();
        assert!(matches!(err, Error::Parse(_)), "{err}");
        assert_eq!(backend.calls(), JUDGE_PARSE_ATTEMPTS);
    }

    #[test]
    fn faithful_rubric_gives_identical_caption_top_relevance() {
        let client = Client::mock(vec![MockBehavior::JudgeRubric]).unwrap();
        let caption = "A dog chases a ball in the yard.";
        let score = judge_caption(&client, caption, caption).unwrap();
        assert_eq!(score.relevance, 10);
    }

    #[test]
    fn transport_failures_propagate_as_backend_errors() {
        let client = Client::mock(vec![MockBehavior::FailTransport]).unwrap();
        let err = judge_caption(&client, "x", "y").unwrap_err();
        assert!(matches!(err, Error::Backend(_)), "{err}");
    }

    #[test]
    fn empty_captions_are_rejected_before_any_call() {
        let (client, backend) = Client::mock_with_handle(vec![MockBehavior::Auto]).unwrap();
        assert!(judge_caption(&client, "", "y").is_err());
        assert!(judge_caption(&client, "x", "  ").is_err());
        assert_eq!(backend.calls(), 0);
    }

    #[test]
    fn judge_score_range_is_enforced() {
        assert!(JudgeScore::new(0, 5, 5, 5).is_err());
        assert!(JudgeScore::new(5, 11, 5, 5).is_err());
        assert!(JudgeScore::new(1, 10, 1, 10).is_ok());
    }

    #[test]
    fn spearman_worked_values() {
        let inc: Vec<f64> = vec![1.0, 2.0, 5.0, 9.0];
        assert_relative_eq!(spearman(&inc, &inc).unwrap(), 1.0, max_relative = 1e-12);
        let neg: Vec<f64> = inc.iter().map(|v| -v).collect();
        assert_relative_eq!(spearman(&inc, &neg).unwrap(), -1.0, max_relative = 1e-12);
        assert_relative_eq!(
            spearman(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap(),
            0.5,
            max_relative = 1e-12
        );
    }

    #[test]
    fn spearman_uses_rank_not_magnitude_and_averages_ties() {
        // Wildly different magnitudes, identical order → 1.
        assert_relative_eq!(
            spearman(&[0.001, 0.002, 1000.0], &[5.0, 6.0, 7.0]).unwrap(),
            1.0,
            max_relative = 1e-12
        );
        // Tied values get the same (averaged) rank on both sides → 1.
        assert_relative_eq!(
            spearman(&[1.0, 2.0, 2.0, 3.0], &[10.0, 20.0, 20.0, 40.0]).unwrap(),
            1.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn spearman_error_cases() {
        assert!(matches!(
            spearman(&[1.0], &[1.0]),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            spearman(&[1.0, 2.0], &[1.0]),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            spearman(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(spearman(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rlaifv_f1_worked_values() {
        assert_relative_eq!(rlaifv_f1(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(rlaifv_f1(0.0, 0.7).unwrap(), 0.0);
        assert_eq!(rlaifv_f1(0.0, 0.0).unwrap(), 0.0);
        assert_relative_eq!(rlaifv_f1(0.5, 1.0).unwrap(), 2.0 / 3.0, max_relative = 1e-12);
        assert!(rlaifv_f1(1.2, 0.5).is_err());
        assert!(rlaifv_f1(0.5, -0.1).is_err());
    }

    #[test]
    fn head_to_head_rates() {
        use Side::{A, B};
        assert_eq!(head_to_head(&[A, A, B, B]).unwrap(), (0.5, 0.5));
        assert_eq!(head_to_head(&[A, A, A]).unwrap(), (1.0, 0.0));
        let mut prefs = vec![A; 53];
        prefs.extend(vec![B; 47]);
        let (a, b) = head_to_head(&prefs).unwrap();
        assert_relative_eq!(a, 0.53, max_relative = 1e-12);
        assert_relative_eq!(b, 0.47, max_relative = 1e-12);
        assert_relative_eq!(a + b, 1.0);
        assert!(head_to_head(&[]).is_err());
    }
}
