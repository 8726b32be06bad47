//! Caption error taxonomy and applicability rules.
//!
//! A corruption step is typed: it substitutes an object, changes a count,
//! swaps temporal order, and so on. Not every error type makes sense for
//! every caption — you cannot swap the order of events in a caption that
//! describes only one — so each type carries zero or more applicability
//! rules, checked by cheap lexical heuristics. No rules means "always
//! applicable".
//!
//! The default taxonomy is compiled in; experiments that want a different
//! error inventory load one from JSON with the same shape.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encode::tokenize;
use crate::error::{Error, Result};

/// Lexical precondition a caption must meet for an error type to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// A numeral or counting word is present ("two", "7", "dozen").
    RequiresCountWord,
    /// Either several clauses with a temporal marker, or several sentences —
    /// something whose order could be swapped.
    RequiresTemporalStructure,
    /// A spatial preposition relates two things ("on", "under", "next to").
    RequiresSpatialPreposition,
}

/// One entry of the error inventory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorType {
    pub id: String,
    pub description: String,
    #[serde(default)]
    pub applicability_rules: Vec<Rule>,
}

/// A validated error inventory: non-empty, unique ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Taxonomy {
    types: Vec<ErrorType>,
}

impl Taxonomy {
    pub fn new(types: Vec<ErrorType>) -> Result<Self> {
        if types.is_empty() {
            return Err(Error::Config("taxonomy has no error types".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &types {
            if t.id.trim().is_empty() {
                return Err(Error::Config("taxonomy contains an empty error-type id".into()));
            }
            if !seen.insert(t.id.as_str()) {
                return Err(Error::Config(format!("duplicate error-type id '{}'", t.id)));
            }
        }
        Ok(Taxonomy { types })
    }

    pub fn types(&self) -> &[ErrorType] {
        &self.types
    }

    pub fn get(&self, id: &str) -> Option<&ErrorType> {
        self.types.iter().find(|t| t.id == id)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let types: Vec<ErrorType> = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("bad taxonomy JSON: {e}")))?;
        Taxonomy::new(types)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }
}

/// The built-in eight-way error inventory.
pub fn default_taxonomy() -> Taxonomy {
    let t = |id: &str, description: &str, rules: &[Rule]| ErrorType {
        id: id.into(),
        description: description.into(),
        applicability_rules: rules.to_vec(),
    };
    Taxonomy::new(vec![
        t(
            "object_substitution",
            "replace a mentioned object with a different, incorrect object",
            &[],
        ),
        t(
            "attribute_change",
            "alter a descriptive attribute such as color, size, or season",
            &[],
        ),
        t(
            "action_change",
            "replace an action or verb with one that does not happen",
            &[],
        ),
        t(
            "spatial_relation_change",
            "change how two things relate in space (on, under, behind, ...)",
            &[Rule::RequiresSpatialPreposition],
        ),
        t(
            "temporal_order_swap",
            "swap the order of two described events",
            &[Rule::RequiresTemporalStructure],
        ),
        t(
            "count_change",
            "change a stated quantity to a wrong one",
            &[Rule::RequiresCountWord],
        ),
        t(
            "setting_change",
            "move the scene to a different location or environment",
            &[],
        ),
        t(
            "subject_swap",
            "attribute the action to a different subject",
            &[],
        ),
    ])
    .expect("built-in taxonomy is valid")
}

// ─────────────────────────────────────────────────────────────────────────
// Lexical heuristics
// ─────────────────────────────────────────────────────────────────────────

const COUNT_WORDS: &[&str] = &[
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
    "twelve", "twenty", "thirty", "forty", "fifty", "hundred", "dozen", "couple", "pair",
    "both", "single", "twice", "several", "few", "many",
];

const TEMPORAL_MARKERS: &[&str] = &[
    "then", "before", "after", "while", "first", "next", "finally", "later", "earlier",
    "afterward", "afterwards", "subsequently", "meanwhile", "during", "eventually",
    "initially", "until", "once",
];

const SPATIAL_WORDS: &[&str] = &[
    "on", "in", "under", "over", "above", "below", "behind", "beside", "between", "near",
    "inside", "outside", "atop", "beneath", "underneath", "across", "through", "along",
    "onto", "into", "upon", "amid", "left", "right",
];

const SPATIAL_PHRASES: &[&str] = &["in front of", "next to", "on top of"];

/// Whether a normalized token reads as a numeral or counting word.
/// Shared with the mock backend so its typed corruptions hit the tokens
/// that made the error type applicable in the first place.
pub(crate) fn is_count_token(token: &str) -> bool {
    (!token.is_empty() && token.chars().all(|c| c.is_ascii_digit()))
        || COUNT_WORDS.contains(&token)
}

pub(crate) fn is_temporal_marker(token: &str) -> bool {
    TEMPORAL_MARKERS.contains(&token)
}

pub(crate) fn is_spatial_word(token: &str) -> bool {
    SPATIAL_WORDS.contains(&token)
}

fn has_count_word(tokens: &[String]) -> bool {
    tokens.iter().any(|t| is_count_token(t.as_str()))
}

fn sentence_count(caption: &str) -> usize {
    caption
        .split(['.', '?', '!'])
        .filter(|s| !s.trim().is_empty())
        .count()
}

fn clause_count(caption: &str) -> usize {
    caption
        .split([',', ';', '.', '?', '!'])
        .filter(|s| !s.trim().is_empty())
        .count()
}

fn has_temporal_structure(caption: &str, tokens: &[String]) -> bool {
    let marker = tokens.iter().any(|t| TEMPORAL_MARKERS.contains(&t.as_str()));
    (clause_count(caption) >= 2 && marker) || sentence_count(caption) >= 2
}

fn has_spatial_preposition(caption: &str, tokens: &[String]) -> bool {
    if tokens.iter().any(|t| SPATIAL_WORDS.contains(&t.as_str())) {
        return true;
    }
    let joined = tokenize(caption).join(" ");
    SPATIAL_PHRASES.iter().any(|p| joined.contains(p))
}

fn rule_holds(rule: Rule, caption: &str, tokens: &[String]) -> bool {
    match rule {
        Rule::RequiresCountWord => has_count_word(tokens),
        Rule::RequiresTemporalStructure => has_temporal_structure(caption, tokens),
        Rule::RequiresSpatialPreposition => has_spatial_preposition(caption, tokens),
    }
}

/// Error types whose rules all hold for `caption`, in taxonomy order.
/// An empty or whitespace-only caption is an error: nothing can be said
/// about it, and generation must not silently continue.
pub fn applicable_errors<'a>(caption: &str, taxonomy: &'a Taxonomy) -> Result<Vec<&'a ErrorType>> {
    if caption.trim().is_empty() {
        return Err(Error::InvalidInput("caption is empty".into()));
    }
    let tokens = tokenize(caption);
    Ok(taxonomy
        .types()
        .iter()
        .filter(|t| {
            t.applicability_rules
                .iter()
                .all(|&r| rule_holds(r, caption, &tokens))
        })
        .collect())
}

/// Draw one error type from `applicable`, uniformly or by the given
/// weights. Types missing from the weight map keep weight 1; zero-weight
/// types are never drawn; if nothing has positive weight, that is an error.
pub fn sample_error<'a, R: Rng>(
    applicable: &[&'a ErrorType],
    weights: Option<&BTreeMap<String, f64>>,
    rng: &mut R,
) -> Result<&'a ErrorType> {
    if applicable.is_empty() {
        return Err(Error::InvalidInput("no applicable error types to sample from".into()));
    }
    let weight_of = |t: &ErrorType| -> Result<f64> {
        let w = weights.and_then(|m| m.get(&t.id)).copied().unwrap_or(1.0);
        if !w.is_finite() || w < 0.0 {
            return Err(Error::Config(format!("weight for '{}' must be >= 0, got {w}", t.id)));
        }
        Ok(w)
    };
    let ws: Vec<f64> = applicable
        .iter()
        .map(|t| weight_of(t))
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = ws.iter().sum();
    if total <= 0.0 {
        return Err(Error::Config(
            "all applicable error types have zero weight; nothing to sample".into(),
        ));
    }
    let mut u = rng.gen::<f64>() * total;
    for (t, w) in applicable.iter().zip(&ws) {
        u -= w;
        if u <= 0.0 && *w > 0.0 {
            return Ok(t);
        }
    }
    // fp slack: fall back to the last positive-weight entry.
    let last = applicable
        .iter()
        .zip(&ws)
        .rev()
        .find(|(_, w)| **w > 0.0)
        .expect("total weight is positive");
    Ok(last.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ids(types: &[&ErrorType]) -> Vec<String> {
        types.iter().map(|t| t.id.clone()).collect()
    }

    #[test]
    fn default_taxonomy_has_eight_unique_types() {
        let tax = default_taxonomy();
        assert_eq!(tax.types().len(), 8);
        assert!(tax.get("object_substitution").is_some());
        assert!(tax.get("count_change").is_some());
        assert!(tax.get("no_such_type").is_none());
    }

    #[test]
    fn plain_caption_excludes_structured_errors() {
        let tax = default_taxonomy();
        let app = applicable_errors("A dog runs.", &tax).unwrap();
        let app_ids = ids(&app);
        assert!(!app_ids.contains(&"count_change".to_string()));
        assert!(!app_ids.contains(&"temporal_order_swap".to_string()));
        assert!(!app_ids.contains(&"spatial_relation_change".to_string()));
        assert_eq!(app.len(), 5);
    }

    #[test]
    fn rich_caption_admits_every_error_type() {
        let tax = default_taxonomy();
        let app = applicable_errors("Two cats sit on the mat, then one leaves.", &tax).unwrap();
        assert_eq!(app.len(), 8);
    }

    #[test]
    fn digits_count_as_count_words() {
        let tax = default_taxonomy();
        let app = applicable_errors("7 geese waddle by", &tax).unwrap();
        assert!(ids(&app).contains(&"count_change".to_string()));
    }

    #[test]
    fn two_sentences_are_temporal_structure() {
        let tax = default_taxonomy();
        let app = applicable_errors("A man opens a door. He walks out.", &tax).unwrap();
        assert!(ids(&app).contains(&"temporal_order_swap".to_string()));
    }

    #[test]
    fn empty_caption_is_an_error() {
        let tax = default_taxonomy();
        assert!(applicable_errors("", &tax).is_err());
        assert!(applicable_errors("   ", &tax).is_err());
    }

    #[test]
    fn uniform_sampling_is_roughly_uniform() {
        let tax = default_taxonomy();
        let app: Vec<&ErrorType> = tax.types().iter().take(4).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut counts = BTreeMap::new();
        let draws = 10_000;
        for _ in 0..draws {
            let t = sample_error(&app, None, &mut rng).unwrap();
            *counts.entry(t.id.clone()).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 4);
        for (id, n) in counts {
            let freq = n as f64 / draws as f64;
            assert!((freq - 0.25).abs() < 0.05, "{id}: {freq}");
        }
    }

    #[test]
    fn zero_weight_types_are_never_drawn() {
        let tax = default_taxonomy();
        let app: Vec<&ErrorType> = tax.types().iter().take(3).collect();
        let mut weights = BTreeMap::new();
        weights.insert(app[0].id.clone(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let t = sample_error(&app, Some(&weights), &mut rng).unwrap();
            assert_ne!(t.id, app[0].id);
        }
    }

    #[test]
    fn all_zero_weights_is_a_config_error() {
        let tax = default_taxonomy();
        let app: Vec<&ErrorType> = tax.types().iter().take(2).collect();
        let mut weights = BTreeMap::new();
        weights.insert(app[0].id.clone(), 0.0);
        weights.insert(app[1].id.clone(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(sample_error(&app, Some(&weights), &mut rng).is_err());
    }

    #[test]
    fn sampling_from_nothing_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(sample_error(&[], None, &mut rng).is_err());
    }

    #[test]
    fn taxonomy_json_roundtrip() {
        let tax = default_taxonomy();
        let json = serde_json::to_string_pretty(&tax).unwrap();
        let back = Taxonomy::from_json(&json).unwrap();
        assert_eq!(back, tax);
    }

    #[test]
    fn custom_taxonomy_with_unknown_rule_is_rejected() {
        let json = r#"[{"id":"x","description":"y","applicability_rules":["requires_rhyme"]}]"#;
        assert!(matches!(Taxonomy::from_json(json), Err(Error::Config(_))));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let json = r#"[{"id":"x","description":"a"},{"id":"x","description":"b"}]"#;
        assert!(Taxonomy::from_json(json).is_err());
    }
}
