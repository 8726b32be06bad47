//! N-gram overlap metrics for caption quality.
//!
//! Both metrics tokenize the same way as the rest of the crate: lowercase,
//! edge punctuation trimmed. Scores live in [0,1].
//!
//! `rouge_l` measures longest-common-subsequence overlap:
//!
//! ```text
//! ℓ = LCS(pred, ref)    P = ℓ/|pred|    R = ℓ/|ref|    value = 2PR/(P+R)
//! ```
//!
//! `meteor_lite` is a dependency-free cut of METEOR: exact-token greedy
//! left-to-right alignment (no stemming, no synonyms), recall-weighted
//! mean, and a fragmentation penalty over chunks — maximal runs of matches
//! adjacent in both strings:
//!
//! ```text
//! F_mean  = 10PR / (R + 9P)
//! penalty = 0.5 · (chunks/matches)³
//! value   = F_mean · (1 − penalty)
//! ```
//!
//! Note the penalty floor: even a perfect single-chunk alignment keeps
//! chunks/matches > 0, so short identical strings score well below 1
//! (one shared token scores exactly 0.5).

use serde::{Deserialize, Serialize};

use crate::encode::tokenize;

/// Which overlap statistic a score reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NgramMetric {
    RougeL,
    MeteorLite,
}

/// Precision/recall/value triple in [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NgramScore {
    pub metric: NgramMetric,
    pub precision: f64,
    pub recall: f64,
    pub value: f64,
}

impl NgramScore {
    fn zero(metric: NgramMetric) -> Self {
        NgramScore { metric, precision: 0.0, recall: 0.0, value: 0.0 }
    }
}

/// Longest common subsequence length, two-row dynamic programming.
pub(crate) fn lcs_length(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            curr[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// LCS-based F1 between two captions. Either side empty → all zeros.
pub fn rouge_l(predicted: &str, reference: &str) -> NgramScore {
    let pred = tokenize(predicted);
    let refr = tokenize(reference);
    if pred.is_empty() || refr.is_empty() {
        return NgramScore::zero(NgramMetric::RougeL);
    }
    let lcs = lcs_length(&pred, &refr) as f64;
    let precision = lcs / pred.len() as f64;
    let recall = lcs / refr.len() as f64;
    let value = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    NgramScore { metric: NgramMetric::RougeL, precision, recall, value }
}

/// Greedy left-to-right alignment: each predicted token takes the first
/// unused matching reference position. Returns the matched reference
/// position per predicted token.
fn greedy_alignment(pred: &[String], refr: &[String]) -> Vec<Option<usize>> {
    let mut used = vec![false; refr.len()];
    pred.iter()
        .map(|token| {
            let hit = (0..refr.len()).find(|&j| !used[j] && refr[j] == *token);
            if let Some(j) = hit {
                used[j] = true;
            }
            hit
        })
        .collect()
}

/// Count maximal runs of matches that are adjacent in both strings.
fn chunk_count(alignment: &[Option<usize>]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for (i, slot) in alignment.iter().enumerate() {
        if let Some(j) = slot {
            let continues = matches!(prev, Some((pi, pj)) if pi + 1 == i && pj + 1 == *j);
            if !continues {
                chunks += 1;
            }
            prev = Some((i, *j));
        }
    }
    chunks
}

/// Alignment-based caption score with a fragmentation penalty. No matches
/// (including either side empty) → all zeros.
pub fn meteor_lite(predicted: &str, reference: &str) -> NgramScore {
    let pred = tokenize(predicted);
    let refr = tokenize(reference);
    if pred.is_empty() || refr.is_empty() {
        return NgramScore::zero(NgramMetric::MeteorLite);
    }
    let alignment = greedy_alignment(&pred, &refr);
    let matches = alignment.iter().flatten().count();
    if matches == 0 {
        return NgramScore::zero(NgramMetric::MeteorLite);
    }
    let m = matches as f64;
    let precision = m / pred.len() as f64;
    let recall = m / refr.len() as f64;
    let f_mean = 10.0 * precision * recall / (recall + 9.0 * precision);
    let fragmentation = chunk_count(&alignment) as f64 / m;
    let penalty = 0.5 * fragmentation.powi(3);
    NgramScore {
        metric: NgramMetric::MeteorLite,
        precision,
        recall,
        value: f_mean * (1.0 - penalty),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exponential-time oracle: try every subsequence of `a`, longest that
    /// is also a subsequence of `b` wins. Small inputs only.
    fn lcs_oracle(a: &[String], b: &[String]) -> usize {
        fn is_subsequence(needle: &[&String], hay: &[String]) -> bool {
            let mut it = hay.iter();
            needle.iter().all(|n| it.any(|h| h == *n))
        }
        let mut best = 0;
        for mask in 0u32..(1 << a.len()) {
            let picked: Vec<&String> = (0..a.len())
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| &a[i])
                .collect();
            if picked.len() > best && is_subsequence(&picked, b) {
                best = picked.len();
            }
        }
        best
    }

    #[test]
    fn rouge_identical_strings_score_one() {
        let s = rouge_l("A dog runs fast", "a dog runs fast");
        assert_relative_eq!(s.value, 1.0);
        assert_relative_eq!(s.precision, 1.0);
        assert_relative_eq!(s.recall, 1.0);
    }

    #[test]
    fn rouge_disjoint_strings_score_zero() {
        let s = rouge_l("alpha beta", "gamma delta");
        assert_eq!(s.value, 0.0);
    }

    #[test]
    fn rouge_partial_overlap_worked_value() {
        // LCS("the cat sat", "the cat on the mat") = 2 ("the cat"),
        // so P = 2/3, R = 2/5, F1 = 2·(2/3)·(2/5)/(2/3 + 2/5) = 1/2.
        let s = rouge_l("the cat sat", "the cat on the mat");
        assert_relative_eq!(s.precision, 2.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(s.recall, 2.0 / 5.0, max_relative = 1e-12);
        assert_relative_eq!(s.value, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn rouge_empty_sides_score_zero() {
        assert_eq!(rouge_l("", "a b").value, 0.0);
        assert_eq!(rouge_l("a b", "").value, 0.0);
        assert_eq!(rouge_l("", "").value, 0.0);
    }

    #[test]
    fn lcs_matches_the_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let vocab = ["a", "b", "c", "d", "e"];
        for _ in 0..1000 {
            let draw = |rng: &mut ChaCha8Rng| -> Vec<String> {
                let len = rng.gen_range(0..=12);
                (0..len).map(|_| vocab[rng.gen_range(0..vocab.len())].to_string()).collect()
            };
            let a = draw(&mut rng);
            let b = draw(&mut rng);
            assert_eq!(lcs_length(&a, &b), lcs_oracle(&a, &b), "a={a:?} b={b:?}");
        }
    }

    #[test]
    fn meteor_identical_three_tokens() {
        // m = 3, one chunk: value = 1 · (1 − 0.5·(1/3)³) = 53/54.
        let s = meteor_lite("a b c", "a b c");
        assert_relative_eq!(s.value, 53.0 / 54.0, max_relative = 1e-9);
        assert_relative_eq!(s.precision, 1.0);
        assert_relative_eq!(s.recall, 1.0);
    }

    #[test]
    fn meteor_disjoint_strings_score_zero() {
        assert_eq!(meteor_lite("alpha beta", "gamma delta").value, 0.0);
        assert_eq!(meteor_lite("", "x").value, 0.0);
    }

    #[test]
    fn meteor_single_shared_token_is_half() {
        // m = 1, chunks = 1 → penalty 0.5, F_mean 1 → value 0.5.
        let s = meteor_lite("dog", "dog");
        assert_relative_eq!(s.value, 0.5, max_relative = 1e-9);
    }

    #[test]
    fn meteor_fragmentation_counts_chunks() {
        // "b a" vs "a b": both tokens match but in two chunks, so
        // penalty = 0.5·(2/2)³ = 0.5 and F_mean = 1 → value 0.5.
        let swapped = meteor_lite("b a", "a b");
        assert_relative_eq!(swapped.value, 0.5, max_relative = 1e-9);
        // The in-order pair has one chunk and scores strictly higher.
        let ordered = meteor_lite("a b", "a b");
        assert!(ordered.value > swapped.value);
    }

    #[test]
    fn greedy_alignment_consumes_each_reference_position_once() {
        // pred repeats "a"; the two copies must claim different slots.
        let pred = tokenize("a a");
        let refr = tokenize("a x a");
        let al = greedy_alignment(&pred, &refr);
        assert_eq!(al, vec![Some(0), Some(2)]);
        assert_eq!(chunk_count(&al), 2);
    }

    #[test]
    fn scores_stay_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vocab = ["a", "b", "c"];
        for _ in 0..500 {
            let draw = |rng: &mut ChaCha8Rng| -> String {
                let len = rng.gen_range(0..6);
                (0..len)
                    .map(|_| vocab[rng.gen_range(0..vocab.len())])
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let p = draw(&mut rng);
            let r = draw(&mut rng);
            for s in [rouge_l(&p, &r), meteor_lite(&p, &r)] {
                assert!((0.0..=1.0).contains(&s.value), "{p:?} {r:?} {s:?}");
                assert!((0.0..=1.0).contains(&s.precision));
                assert!((0.0..=1.0).contains(&s.recall));
            }
        }
    }
}
