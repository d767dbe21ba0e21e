//! Prompt and trait schema.
//!
//! The built-in schema carries the eight ASAP/ASAP++ prompts: their trait
//! sets, per-trait integer score ranges and nominal essay counts. Trait
//! identifiers double as the output-vocabulary tokens of the score
//! sequence, so they are short lowercase names (`over`, `cont`, ...).

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A scoring dimension, named by its output token.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TraitId(String);

impl TraitId {
    pub const OVERALL: &'static str = "over";

    pub fn new(name: impl Into<String>) -> Self {
        TraitId(name.into())
    }

    pub fn overall() -> Self {
        TraitId::new(Self::OVERALL)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_overall(&self) -> bool {
        self.0 == Self::OVERALL
    }

    /// Resolves a column header or trait name ("Overall", "Word Choice",
    /// "wc", ...) to the canonical ASAP identifier. Unknown names pass through
    /// lowercased.
    pub fn from_label(label: &str) -> Self {
        let norm: String = label
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        let canonical = match norm.as_str() {
            "over" | "overall" | "score" | "holistic" => "over",
            "cont" | "content" => "cont",
            "org" | "organization" | "organisation" => "org",
            "wc" | "wordchoice" => "wc",
            "sf" | "sentencefluency" => "sf",
            "conv" | "conventions" => "conv",
            "pa" | "promptadherence" => "pa",
            "lang" | "lan" | "language" => "lang",
            "nar" | "narrativity" => "nar",
            "style" => "style",
            "voice" => "voice",
            other => return TraitId(other.to_string()),
        };
        TraitId::new(canonical)
    }
}

impl fmt::Display for TraitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Inclusive integer score range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScoreRange {
    pub lo: i64,
    pub hi: i64,
}

impl ScoreRange {
    pub const fn new(lo: i64, hi: i64) -> Self {
        ScoreRange { lo, hi }
    }

    /// Number of candidate ratings.
    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1).max(0) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.hi < self.lo
    }

    pub fn contains(&self, v: i64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn span(&self) -> f64 {
        (self.hi - self.lo) as f64
    }

    pub fn midpoint(&self) -> f64 {
        (self.lo + self.hi) as f64 / 2.0
    }

    pub fn union(&self, other: &ScoreRange) -> ScoreRange {
        ScoreRange::new(self.lo.min(other.lo), self.hi.max(other.hi))
    }

    pub fn clamp(&self, v: i64) -> i64 {
        v.clamp(self.lo, self.hi)
    }

    /// Farthest in-range rating from `gold`: `lo` when gold sits above the
    /// midpoint, `hi` otherwise.
    pub fn worst_case(&self, gold: i64) -> i64 {
        if gold as f64 > self.midpoint() {
            self.lo
        } else {
            self.hi
        }
    }
}

impl fmt::Display for ScoreRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lo, self.hi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EssayType {
    Argumentative,
    SourceDependent,
    Narrative,
}

/// One prompt's trait list and score ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub prompt_id: u32,
    pub essay_type: EssayType,
    pub traits: Vec<TraitId>,
    /// Range for every trait in `traits`, the overall score included.
    pub trait_range: BTreeMap<TraitId, ScoreRange>,
    pub nominal_count: usize,
}

impl PromptSpec {
    pub fn validate(&self) -> Result<()> {
        if self.traits.is_empty() {
            return Err(Error::Validation(format!("prompt {} has no traits", self.prompt_id)));
        }
        if !self.traits.iter().any(TraitId::is_overall) {
            return Err(Error::Validation(format!(
                "prompt {} does not evaluate the overall score",
                self.prompt_id
            )));
        }
        for t in &self.traits {
            match self.trait_range.get(t) {
                Some(r) if r.lo < r.hi => {}
                Some(r) => {
                    return Err(Error::Validation(format!(
                        "prompt {} trait {t} has empty range {r}",
                        self.prompt_id
                    )))
                }
                None => {
                    return Err(Error::Validation(format!(
                        "prompt {} trait {t} has no range",
                        self.prompt_id
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn evaluates(&self, t: &TraitId) -> bool {
        self.trait_range.contains_key(t)
    }

    pub fn range(&self, t: &TraitId) -> Option<ScoreRange> {
        self.trait_range.get(t).copied()
    }

    pub fn overall_range(&self) -> Option<ScoreRange> {
        self.range(&TraitId::overall())
    }

    /// Union of every trait range of this prompt (P1 pools 1-6 and 2-12 into 1-12).
    pub fn pooled_range(&self) -> ScoreRange {
        self.trait_range
            .values()
            .copied()
            .reduce(|a, b| a.union(&b))
            .unwrap_or(ScoreRange::new(0, 0))
    }
}

/// Ordered collection of prompt specifications.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema {
    prompts: Vec<PromptSpec>,
}

impl Schema {
    pub fn new(prompts: Vec<PromptSpec>) -> Result<Self> {
        if prompts.is_empty() {
            return Err(Error::Validation("schema has no prompts".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for p in &prompts {
            p.validate()?;
            if !seen.insert(p.prompt_id) {
                return Err(Error::Validation(format!("duplicate prompt id {}", p.prompt_id)));
            }
        }
        Ok(Schema { prompts })
    }

    /// Builds a schema without validation. Useful for ad-hoc trait sets.
    pub fn unchecked(prompts: Vec<PromptSpec>) -> Self {
        Schema { prompts }
    }

    pub fn prompts(&self) -> &[PromptSpec] {
        &self.prompts
    }

    pub fn prompt(&self, id: u32) -> Option<&PromptSpec> {
        self.prompts.iter().find(|p| p.prompt_id == id)
    }

    /// Every trait in order of first appearance across prompts.
    pub fn traits(&self) -> Vec<TraitId> {
        let mut out: Vec<TraitId> = Vec::new();
        for p in &self.prompts {
            for t in &p.traits {
                if !out.contains(t) {
                    out.push(t.clone());
                }
            }
        }
        out
    }

    /// Highest score any trait can take.
    pub fn max_score(&self) -> i64 {
        self.prompts
            .iter()
            .flat_map(|p| p.trait_range.values())
            .map(|r| r.hi)
            .max()
            .unwrap_or(0)
    }

    pub fn min_score(&self) -> i64 {
        self.prompts
            .iter()
            .flat_map(|p| p.trait_range.values())
            .map(|r| r.lo)
            .min()
            .unwrap_or(0)
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.prompts).expect("schema serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Total nominal essay count per trait.
    pub fn trait_counts(&self) -> HashMap<TraitId, usize> {
        let mut counts = HashMap::new();
        for p in &self.prompts {
            for t in &p.traits {
                *counts.entry(t.clone()).or_insert(0) += p.nominal_count;
            }
        }
        counts
    }
}

fn prompt(
    prompt_id: u32,
    essay_type: EssayType,
    nominal_count: usize,
    overall: (i64, i64),
    trait_range: (i64, i64),
    traits: &[&str],
) -> PromptSpec {
    let traits: Vec<TraitId> = traits.iter().map(|t| TraitId::new(*t)).collect();
    let ranges = traits
        .iter()
        .map(|t| {
            let (lo, hi) = if t.is_overall() { overall } else { trait_range };
            (t.clone(), ScoreRange::new(lo, hi))
        })
        .collect();
    PromptSpec {
        prompt_id,
        essay_type,
        traits,
        trait_range: ranges,
        nominal_count,
    }
}

/// The ASAP/ASAP++ prompt schema.
pub fn load_prompt_schema() -> Schema {
    use EssayType::*;
    let argumentative = ["over", "cont", "org", "wc", "sf", "conv"];
    let source = ["over", "cont", "pa", "lang", "nar"];
    Schema::new(vec![
        prompt(1, Argumentative, 1783, (2, 12), (1, 6), &argumentative),
        prompt(2, Argumentative, 1800, (1, 6), (1, 6), &argumentative),
        prompt(3, SourceDependent, 1726, (0, 3), (0, 3), &source),
        prompt(4, SourceDependent, 1772, (0, 3), (0, 3), &source),
        prompt(5, SourceDependent, 1805, (0, 4), (0, 4), &source),
        prompt(6, SourceDependent, 1800, (0, 4), (0, 4), &source),
        prompt(7, Narrative, 1569, (0, 30), (0, 6), &["over", "cont", "org", "conv", "style"]),
        prompt(8, Narrative, 723, (0, 60), (2, 12), &["over", "cont", "org", "wc", "sf", "conv", "voice"]),
    ])
    .expect("built-in schema is valid")
}

/// How traits with equal essay counts are ordered.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TieBreak {
    /// Later-declared traits first; reproduces the conventional ASAP column order
    /// (`sf` before `wc`, `nar lang pa`).
    #[default]
    ReverseDeclaration,
    /// Lexicographic by trait name.
    Name,
}

/// Trait generation order: ascending by total essay count, overall last.
pub fn trait_prediction_order(schema: &Schema) -> Vec<TraitId> {
    trait_prediction_order_with(schema, TieBreak::default())
}

pub fn trait_prediction_order_with(schema: &Schema, tie_break: TieBreak) -> Vec<TraitId> {
    let counts = schema.trait_counts();
    let declared = schema.traits();
    let mut indexed: Vec<(usize, TraitId)> = declared.into_iter().enumerate().collect();
    indexed.sort_by(|(ia, a), (ib, b)| {
        a.is_overall()
            .cmp(&b.is_overall())
            .then(counts[a].cmp(&counts[b]))
            .then_with(|| match tie_break {
                TieBreak::ReverseDeclaration => ib.cmp(ia),
                TieBreak::Name => a.cmp(b),
            })
    });
    indexed.into_iter().map(|(_, t)| t).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(order: &[TraitId]) -> Vec<&str> {
        order.iter().map(TraitId::as_str).collect()
    }

    #[test]
    fn asap_schema_matches_reference_ranges() {
        let s = load_prompt_schema();
        assert_eq!(s.prompts().len(), 8);
        let p5 = s.prompt(5).unwrap();
        assert_eq!(names(&p5.traits), ["over", "cont", "pa", "lang", "nar"]);
        for t in &p5.traits {
            assert_eq!(p5.range(t), Some(ScoreRange::new(0, 4)));
        }
        let p8 = s.prompt(8).unwrap();
        assert_eq!(p8.overall_range(), Some(ScoreRange::new(0, 60)));
        assert_eq!(p8.range(&TraitId::new("voice")), Some(ScoreRange::new(2, 12)));
        let p1 = s.prompt(1).unwrap();
        assert_eq!(p1.overall_range(), Some(ScoreRange::new(2, 12)));
        assert_eq!(p1.range(&TraitId::new("cont")), Some(ScoreRange::new(1, 6)));
        assert_eq!(p1.pooled_range(), ScoreRange::new(1, 12));
        let with_style: Vec<u32> = s
            .prompts()
            .iter()
            .filter(|p| p.evaluates(&TraitId::new("style")))
            .map(|p| p.prompt_id)
            .collect();
        assert_eq!(with_style, [7]);
        assert_eq!(s.prompt(3).unwrap().range(&TraitId::new("pa")), Some(ScoreRange::new(0, 3)));
    }

    #[test]
    fn asap_order_matches_reference_column_order() {
        let order = trait_prediction_order(&load_prompt_schema());
        assert_eq!(
            names(&order),
            ["voice", "style", "sf", "wc", "conv", "org", "nar", "lang", "pa", "cont", "over"]
        );
    }

    #[test]
    fn name_tie_break() {
        let p = PromptSpec {
            prompt_id: 1,
            essay_type: EssayType::Argumentative,
            traits: vec![TraitId::new("b"), TraitId::new("a")],
            trait_range: [
                (TraitId::new("a"), ScoreRange::new(0, 3)),
                (TraitId::new("b"), ScoreRange::new(0, 3)),
            ]
            .into_iter()
            .collect(),
            nominal_count: 10,
        };
        let schema = Schema::unchecked(vec![p]);
        assert_eq!(names(&trait_prediction_order_with(&schema, TieBreak::Name)), ["a", "b"]);
        assert_eq!(
            names(&trait_prediction_order_with(&schema, TieBreak::ReverseDeclaration)),
            ["a", "b"]
        );
    }

    #[test]
    fn validation_rejects_missing_overall_and_empty_ranges() {
        let mut p = load_prompt_schema().prompt(3).unwrap().clone();
        p.trait_range.insert(TraitId::new("pa"), ScoreRange::new(2, 2));
        assert!(p.validate().is_err());
        let mut q = load_prompt_schema().prompt(3).unwrap().clone();
        q.traits.retain(|t| !t.is_overall());
        assert!(q.validate().is_err());
    }

    #[test]
    fn labels_resolve_to_canonical_ids() {
        assert_eq!(TraitId::from_label("Word Choice").as_str(), "wc");
        assert_eq!(TraitId::from_label("Overall").as_str(), "over");
        assert_eq!(TraitId::from_label("Lang").as_str(), "lang");
        assert_eq!(TraitId::from_label("Cohesion").as_str(), "cohesion");
    }

    #[test]
    fn worst_case_is_farthest_endpoint() {
        let r = ScoreRange::new(0, 4);
        assert_eq!(r.worst_case(4), 0);
        assert_eq!(r.worst_case(3), 0);
        assert_eq!(r.worst_case(2), 4);
        assert_eq!(r.worst_case(0), 4);
    }
}
