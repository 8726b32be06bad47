//! Preference-pair construction from pairwise comparison verdicts.
//!
//! Upstream, a judge compares responses two at a time — every unordered
//! pair of a video's responses gets a FIRST/SECOND/TIE verdict. This
//! module turns those verdicts into a balanced preference dataset: ties
//! carry no training signal and are dropped; every kept video contributes
//! exactly `quota` winner/loser pairs (sampled with a per-video seeded
//! rng), and videos that cannot fill the quota are skipped rather than
//! under-weighted. The report counts what was dropped and skipped so a
//! quiet data bug cannot hide in the sampling.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::encode::derive_seed;
use crate::error::{Error, Result};

/// Which response a comparison favored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    First,
    Second,
    Tie,
}

/// A judged comparison of responses `first` and `second` (indices into the
/// video's response list).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseVerdict {
    pub video_id: String,
    pub first: usize,
    pub second: usize,
    pub verdict: Verdict,
}

impl PairwiseVerdict {
    pub fn validate(&self) -> Result<()> {
        if self.first == self.second {
            return Err(Error::InvalidInput(format!(
                "verdict for {} compares response {} with itself",
                self.video_id, self.first
            )));
        }
        Ok(())
    }
}

/// A winner/loser pair ready for preference training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub video_id: String,
    pub winner: usize,
    pub loser: usize,
}

/// Sampled pairs plus bookkeeping about what the quota filtered out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub pairs: Vec<PreferencePair>,
    pub kept_videos: usize,
    /// Videos with fewer decisive verdicts than the quota.
    pub skipped_videos: usize,
    pub dropped_ties: usize,
}

/// Every unordered index pair of `n` responses, lexicographic. Five
/// responses yield ten.
pub fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n.saturating_mul(n.saturating_sub(1)) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            out.push((i, j));
        }
    }
    out
}

/// Build the preference dataset described in the module docs. Sampling is
/// without replacement and seeded per video, so neither verdict order
/// across videos nor the set of other videos changes a video's pairs.
pub fn build_comparison_pairs(
    verdicts: &[PairwiseVerdict],
    per_video_quota: usize,
    seed: u64,
) -> Result<PairReport> {
    if per_video_quota == 0 {
        return Err(Error::InvalidInput("per-video quota must be at least 1".into()));
    }

    let mut dropped_ties = 0usize;
    let mut by_video: BTreeMap<&str, Vec<PreferencePair>> = BTreeMap::new();
    for v in verdicts {
        v.validate()?;
        let (winner, loser) = match v.verdict {
            Verdict::First => (v.first, v.second),
            Verdict::Second => (v.second, v.first),
            Verdict::Tie => {
                dropped_ties += 1;
                continue;
            }
        };
        by_video
            .entry(v.video_id.as_str())
            .or_default()
            .push(PreferencePair { video_id: v.video_id.clone(), winner, loser });
    }

    let mut pairs = Vec::new();
    let mut kept_videos = 0usize;
    let mut skipped_videos = 0usize;
    for (video_id, mut candidates) in by_video {
        if candidates.len() < per_video_quota {
            skipped_videos += 1;
            continue;
        }
        kept_videos += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, video_id));
        // Partial Fisher–Yates: the first `quota` slots become the sample.
        for k in 0..per_video_quota {
            let pick = rng.gen_range(k..candidates.len());
            candidates.swap(k, pick);
        }
        pairs.extend(candidates.into_iter().take(per_video_quota));
    }

    Ok(PairReport { pairs, kept_videos, skipped_videos, dropped_ties })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn verdicts_for(video_id: &str, outcomes: &[Verdict]) -> Vec<PairwiseVerdict> {
        // Lay the outcomes over the candidate pairs of a 5-response video.
        let pairs = all_pairs(5);
        assert!(outcomes.len() <= pairs.len());
        outcomes
            .iter()
            .zip(&pairs)
            .map(|(&verdict, &(first, second))| PairwiseVerdict {
                video_id: video_id.into(),
                first,
                second,
                verdict,
            })
            .collect()
    }

    #[test]
    fn five_responses_make_ten_candidate_pairs() {
        let pairs = all_pairs(5);
        assert_eq!(pairs.len(), 10);
        // All distinct, all ordered.
        for &(i, j) in &pairs {
            assert!(i < j);
        }
        let unique: std::collections::BTreeSet<_> = pairs.iter().collect();
        assert_eq!(unique.len(), 10);
        assert_eq!(all_pairs(0).len(), 0);
        assert_eq!(all_pairs(2), vec![(0, 1)]);
    }

    #[test]
    fn one_tie_in_ten_still_meets_a_quota_of_nine() {
        let mut outcomes = vec![Verdict::First; 9];
        outcomes.push(Verdict::Tie);
        let report = build_comparison_pairs(&verdicts_for("v", &outcomes), 9, 0).unwrap();
        assert_eq!(report.kept_videos, 1);
        assert_eq!(report.skipped_videos, 0);
        assert_eq!(report.dropped_ties, 1);
        assert_eq!(report.pairs.len(), 9);
    }

    #[test]
    fn two_ties_in_ten_miss_a_quota_of_nine() {
        let mut outcomes = vec![Verdict::Second; 8];
        outcomes.extend([Verdict::Tie, Verdict::Tie]);
        let report = build_comparison_pairs(&verdicts_for("v", &outcomes), 9, 0).unwrap();
        assert_eq!(report.kept_videos, 0);
        assert_eq!(report.skipped_videos, 1);
        assert_eq!(report.dropped_ties, 2);
        assert!(report.pairs.is_empty());
    }

    #[test]
    fn ties_never_reach_the_output_and_quota_caps_each_video() {
        let mut verdicts = verdicts_for("a", &[Verdict::First; 10]);
        verdicts.extend(verdicts_for("b", &{
            let mut v = vec![Verdict::Tie; 5];
            v.extend([Verdict::Second; 5]);
            v
        }));
        let report = build_comparison_pairs(&verdicts, 3, 1).unwrap();
        assert_eq!(report.kept_videos, 2);
        assert_eq!(report.pairs.len(), 6);
        for video in ["a", "b"] {
            let n = report.pairs.iter().filter(|p| p.video_id == video).count();
            assert_eq!(n, 3, "video {video} exceeded or missed its quota");
        }
        // Verdict::Second flips winner and loser.
        let b_pair = report.pairs.iter().find(|p| p.video_id == "b").unwrap();
        let original = verdicts
            .iter()
            .find(|v| {
                v.video_id == "b" && v.verdict == Verdict::Second && v.second == b_pair.winner
            })
            .unwrap();
        assert_eq!(original.first, b_pair.loser);
    }

    #[test]
    fn sampling_is_deterministic_and_video_local() {
        let mut verdicts = verdicts_for("a", &[Verdict::First; 10]);
        verdicts.extend(verdicts_for("b", &[Verdict::First; 10]));

        let both = build_comparison_pairs(&verdicts, 4, 7).unwrap();
        let again = build_comparison_pairs(&verdicts, 4, 7).unwrap();
        assert_eq!(both, again);

        // Dropping video b must not change video a's sample.
        let only_a = build_comparison_pairs(&verdicts_for("a", &[Verdict::First; 10]), 4, 7)
            .unwrap();
        let a_pairs: Vec<_> =
            both.pairs.iter().filter(|p| p.video_id == "a").cloned().collect();
        assert_eq!(a_pairs, only_a.pairs);

        // A different seed draws a different sample.
        let reseeded = build_comparison_pairs(&verdicts, 4, 8).unwrap();
        assert_ne!(both.pairs, reseeded.pairs);
    }

    #[test]
    fn self_comparisons_are_rejected() {
        let bad = vec![PairwiseVerdict {
            video_id: "v".into(),
            first: 2,
            second: 2,
            verdict: Verdict::First,
        }];
        assert!(matches!(
            build_comparison_pairs(&bad, 1, 0),
            Err(Error::InvalidInput(_))
        ));
        assert!(build_comparison_pairs(&[], 0, 0).is_err());
    }

    #[test]
    fn verdicts_roundtrip_through_jsonl() {
        let verdicts = verdicts_for("v", &[Verdict::First, Verdict::Tie, Verdict::Second]);
        let bytes = crate::dataset::to_jsonl(&verdicts).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.contains("\"FIRST\""), "{text}");
        assert!(text.contains("\"TIE\""), "{text}");
        let back: Vec<PairwiseVerdict> = crate::dataset::parse_jsonl(&text, "mem").unwrap();
        assert_eq!(back, verdicts);
    }
}
