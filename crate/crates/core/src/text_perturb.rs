//! Query-side perturbations: rewrite prompts for an external rewriting
//! model, validation of the rewrites it returns, and a deterministic
//! Latin-to-Cyrillic homoglyph substitution.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{AnswerKind, SampleRecord};
use crate::error::{Error, Result};
use crate::hash::{hash_words, unit_f64};
use crate::jsonl;
use crate::scoring::box_label_segments;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextRegime {
    Naturalistic,
    Conversational,
    ShorthandNotes,
    Persona,
    /// Held out from training-set assignment; evaluation only.
    Homoglyph,
}

impl TextRegime {
    /// Regimes produced by an external rewriting model.
    pub const REWRITE: [TextRegime; 4] = [
        TextRegime::Naturalistic,
        TextRegime::Conversational,
        TextRegime::ShorthandNotes,
        TextRegime::Persona,
    ];

    pub fn is_unseen(self) -> bool {
        self == TextRegime::Homoglyph
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TextRegime::Naturalistic => "naturalistic",
            TextRegime::Conversational => "conversational",
            TextRegime::ShorthandNotes => "shorthand_notes",
            TextRegime::Persona => "persona",
            TextRegime::Homoglyph => "homoglyph",
        }
    }
}

impl fmt::Display for TextRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TextRegime {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        [TextRegime::Homoglyph]
            .into_iter()
            .chain(TextRegime::REWRITE)
            .find(|r| r.as_str() == s || r.as_str().replace('_', "-") == s)
            .ok_or_else(|| format!("unknown text regime `{s}`"))
    }
}

pub const QUERY_SLOT: &str = "{query}";

/// Rewrite prompt templates, one per rewrite regime, each with a `{query}`
/// slot. The built-in set is loaded from `templates/*.txt`.
#[derive(Clone, Debug)]
pub struct TemplateSet {
    templates: BTreeMap<TextRegime, String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        let templates = [
            (TextRegime::Naturalistic, include_str!("../templates/naturalistic.txt")),
            (
                TextRegime::Conversational,
                include_str!("../templates/conversational.txt"),
            ),
            (
                TextRegime::ShorthandNotes,
                include_str!("../templates/shorthand_notes.txt"),
            ),
            (TextRegime::Persona, include_str!("../templates/persona.txt")),
        ]
        .into_iter()
        .map(|(r, t)| (r, t.to_owned()))
        .collect();
        TemplateSet { templates }
    }
}

impl TemplateSet {
    /// Loads `<regime>.txt` for every rewrite regime from `dir`. Regimes
    /// without a file keep the built-in template.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut set = TemplateSet::default();
        for regime in TextRegime::REWRITE {
            let path = dir.join(format!("{}.txt", regime.as_str()));
            if path.exists() {
                let text = jsonl::read_text(&path)?;
                if !text.contains(QUERY_SLOT) {
                    return Err(Error::validation(
                        path.display().to_string(),
                        "template has no {query} slot",
                    ));
                }
                set.templates.insert(regime, text);
            }
        }
        Ok(set)
    }

    pub fn template(&self, regime: TextRegime) -> Option<&str> {
        self.templates.get(&regime).map(String::as_str)
    }

    pub fn render(&self, sample: &SampleRecord, regime: TextRegime) -> Result<RewriteJob> {
        let template = self.template(regime).ok_or(Error::UnsupportedRegime(regime))?;
        let anchors = extract_anchors(sample);
        if sample.task.answer_kind() == AnswerKind::Boxes && anchors.is_empty() {
            return Err(Error::validation(
                &sample.sample_id,
                "grounding target carries no object label to preserve",
            ));
        }
        let mut prompt = template.replace(QUERY_SLOT, &sample.query);
        if !anchors.is_empty() {
            let quoted: Vec<String> = anchors.iter().map(|a| format!("\"{a}\"")).collect();
            if !prompt.ends_with('\n') {
                prompt.push('\n');
            }
            prompt.push_str(&format!("Keep these phrases word for word: {}.\n", quoted.join(", ")));
        }
        Ok(RewriteJob {
            sample_id: sample.sample_id.clone(),
            regime,
            source_query: sample.query.clone(),
            prompt,
            anchors,
        })
    }
}

/// A rendered rewriting request for one sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteJob {
    pub sample_id: String,
    pub regime: TextRegime,
    pub source_query: String,
    pub prompt: String,
    /// Task-critical phrases that must survive rewriting.
    pub anchors: Vec<String>,
}

/// Renders a rewrite job with the built-in templates.
pub fn render_rewrite_job(sample: &SampleRecord, regime: TextRegime) -> Result<RewriteJob> {
    TemplateSet::default().render(sample, regime)
}

/// Object phrases attached to the boxes of a grounding target, in order of
/// first appearance. Other tasks have none.
pub fn extract_anchors(sample: &SampleRecord) -> Vec<String> {
    if sample.task.answer_kind() != AnswerKind::Boxes {
        return Vec::new();
    }
    let mut seen = HashSet::new();
    box_label_segments(&sample.target)
        .into_iter()
        .filter_map(|seg| clean_label(&seg))
        .filter(|a| seen.insert(a.to_lowercase()))
        .collect()
}

fn clean_label(segment: &str) -> Option<String> {
    // strip markup such as <p>...</p> and separators around the label
    let mut text = String::with_capacity(segment.len());
    let mut in_tag = false;
    for c in segment.chars() {
        match c {
            '<' => in_tag = true,
            '>' => in_tag = false,
            _ if !in_tag => text.push(c),
            _ => {}
        }
    }
    let words: Vec<&str> = text
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
        .collect();
    let trimmed: Vec<&str> = words
        .iter()
        .copied()
        .skip_while(|w| matches!(w.to_lowercase().as_str(), "and" | "the" | "a" | "an"))
        .collect();
    (!trimmed.is_empty()).then(|| trimmed.join(" "))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteEntry {
    pub sample_id: String,
    pub rewritten: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub sample_id: String,
    pub rewritten: String,
    pub reasons: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    /// (sample_id, perturbed query), in job order.
    pub accepted: Vec<(String, String)>,
    pub rejected: Vec<Rejection>,
}

impl IngestReport {
    /// Anchor checks are lexical; reviewers should re-read every rejection.
    pub const ANCHOR_RULE: &'static str =
        "lexical anchor check: case-insensitive substring after whitespace normalization";
}

fn fold_ws_lower(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Reasons a rewrite must be rejected; empty when acceptable.
pub fn rewrite_violations(job: &RewriteJob, rewritten: &str) -> Vec<String> {
    if rewritten.trim().is_empty() {
        return vec!["empty".into()];
    }
    let mut reasons = Vec::new();
    if rewritten == job.source_query {
        reasons.push("identical".into());
    }
    let haystack = fold_ws_lower(rewritten);
    for anchor in &job.anchors {
        if !haystack.contains(&fold_ws_lower(anchor)) {
            reasons.push(format!("anchor lost: {anchor}"));
        }
    }
    reasons
}

/// Validates rewrites against their jobs.
pub fn ingest_rewrite_map(jobs: &[RewriteJob], rewrites: &HashMap<String, String>) -> Result<IngestReport> {
    let mut report = IngestReport::default();
    for job in jobs {
        let rewritten = rewrites
            .get(&job.sample_id)
            .ok_or_else(|| Error::MissingRewrite(job.sample_id.clone()))?;
        let reasons = rewrite_violations(job, rewritten);
        if reasons.is_empty() {
            report.accepted.push((job.sample_id.clone(), rewritten.clone()));
        } else {
            report.rejected.push(Rejection {
                sample_id: job.sample_id.clone(),
                rewritten: rewritten.clone(),
                reasons,
            });
        }
    }
    Ok(report)
}

/// Reads `{sample_id, rewritten}` lines and validates them against `jobs`.
pub fn ingest_rewrites(jobs: &[RewriteJob], rewrites: &Path) -> Result<IngestReport> {
    let entries: Vec<RewriteEntry> = jsonl::read(rewrites)?;
    let mut map = HashMap::with_capacity(entries.len());
    for e in entries {
        let id = e.sample_id.clone();
        if map.insert(e.sample_id, e.rewritten).is_some() {
            return Err(Error::validation(id, "more than one rewrite"));
        }
    }
    ingest_rewrite_map(jobs, &map)
}

/// Latin letters and their visually identical Cyrillic counterparts.
pub const HOMOGLYPHS: [(char, char); 18] = [
    ('a', '\u{0430}'),
    ('c', '\u{0441}'),
    ('e', '\u{0435}'),
    ('o', '\u{043E}'),
    ('p', '\u{0440}'),
    ('x', '\u{0445}'),
    ('y', '\u{0443}'),
    ('A', '\u{0410}'),
    ('B', '\u{0412}'),
    ('C', '\u{0421}'),
    ('E', '\u{0415}'),
    ('H', '\u{041D}'),
    ('K', '\u{041A}'),
    ('M', '\u{041C}'),
    ('O', '\u{041E}'),
    ('P', '\u{0420}'),
    ('T', '\u{0422}'),
    ('X', '\u{0425}'),
];

pub const DEFAULT_HOMOGLYPH_RATE: f64 = 0.5;

pub fn homoglyph_of(c: char) -> Option<char> {
    HOMOGLYPHS.iter().find(|(l, _)| *l == c).map(|(_, h)| *h)
}

pub fn latin_of(c: char) -> Option<char> {
    HOMOGLYPHS.iter().find(|(_, h)| *h == c).map(|(l, _)| *l)
}

/// Replaces each mappable character independently with probability `rate`.
/// The draw for a character depends only on `seed` and its position.
pub fn homoglyph_perturb(query: &str, rate: f64, seed: u64) -> String {
    query
        .chars()
        .enumerate()
        .map(|(pos, c)| match homoglyph_of(c) {
            Some(h) if unit_f64(hash_words(&[seed, pos as u64])) < rate => h,
            _ => c,
        })
        .collect()
}

/// Inverse of [`homoglyph_perturb`] for inputs free of the Cyrillic targets.
pub fn homoglyph_restore(text: &str) -> String {
    text.chars().map(|c| latin_of(c).unwrap_or(c)).collect()
}
