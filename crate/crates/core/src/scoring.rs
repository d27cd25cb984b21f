//! Answer parsing and the unified quality score in [0, 1]: normalized exact
//! match for discrete answers, relative count error for counts, and
//! Hungarian-matched average IoU for boxes.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::assignment::max_weight_assignment;
use crate::data::{AnswerKind, BoundingBox, CoordinateConvention, TaskKind};
use crate::error::{Error, Result};

const NUM: &str = r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?";

static BOX_RE: LazyLock<Regex> = LazyLock::new(|| {
    let bracket = format!(r"\[\s*({NUM})\s*,\s*({NUM})\s*,\s*({NUM})\s*,\s*({NUM})\s*\]");
    let brace = format!(r"\{{\s*<\s*({NUM})\s*>\s*<\s*({NUM})\s*>\s*<\s*({NUM})\s*>\s*<\s*({NUM})\s*>\s*\}}");
    Regex::new(&format!("{bracket}|{brace}")).expect("box pattern")
});

static COUNT_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)(\d+)|\b(zero|one|two|three|four|five|six|seven|eight|nine|ten|eleven|twelve|thirteen|fourteen|fifteen|sixteen|seventeen|eighteen|nineteen|twenty)\b",
    )
    .expect("count pattern")
});

const NUMBER_WORDS: [&str; 21] = [
    "zero",
    "one",
    "two",
    "three",
    "four",
    "five",
    "six",
    "seven",
    "eight",
    "nine",
    "ten",
    "eleven",
    "twelve",
    "thirteen",
    "fourteen",
    "fifteen",
    "sixteen",
    "seventeen",
    "eighteen",
    "nineteen",
    "twenty",
];

/// Lower-case, NFKC-fold, strip punctuation, drop articles, collapse
/// whitespace.
///
/// NFKC does not fold Cyrillic look-alikes onto Latin, so homoglyph noise
/// survives normalization.
pub fn normalize(text: &str) -> String {
    let folded: String = text.nfkc().collect::<String>().to_lowercase();
    let stripped: String = folded
        .chars()
        .filter_map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                Some(c)
            } else if matches!(c, '-' | '/' | '_') {
                Some(' ')
            } else {
                None
            }
        })
        .collect();
    stripped
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CountValue {
    Value(u64),
    ParseFailure,
}

/// First integer literal in the text: a digit run or an English number
/// word from zero to twenty.
pub fn extract_count(text: &str) -> CountValue {
    let folded: String = text.nfkc().collect();
    let Some(caps) = COUNT_RE.captures(&folded) else {
        return CountValue::ParseFailure;
    };
    if let Some(digits) = caps.get(1) {
        return digits
            .as_str()
            .parse()
            .map_or(CountValue::ParseFailure, CountValue::Value);
    }
    let word = caps[2].to_lowercase();
    NUMBER_WORDS
        .iter()
        .position(|w| *w == word)
        .map_or(CountValue::ParseFailure, |n| CountValue::Value(n as u64))
}

#[derive(Clone, Debug, PartialEq)]
pub enum ParsedAnswer {
    DiscreteLabel(String),
    CountValue(CountValue),
    BoxSet(Vec<BoundingBox>),
}

pub fn parse_answer(text: &str, kind: AnswerKind, convention: CoordinateConvention) -> ParsedAnswer {
    match kind {
        AnswerKind::Discrete => ParsedAnswer::DiscreteLabel(normalize(text)),
        AnswerKind::Count => ParsedAnswer::CountValue(extract_count(text)),
        AnswerKind::Boxes => ParsedAnswer::BoxSet(parse_boxes(text, convention)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub value: f64,
    pub structure: AnswerKind,
}

impl QualityScore {
    fn new(value: f64, structure: AnswerKind) -> Self {
        debug_assert!((0.0..=1.0).contains(&value), "score {value} out of range");
        QualityScore {
            value: value.clamp(0.0, 1.0),
            structure,
        }
    }
}

pub fn score_discrete(o: &str, y_star: &str) -> QualityScore {
    let hit = normalize(o) == normalize(y_star);
    QualityScore::new(if hit { 1.0 } else { 0.0 }, AnswerKind::Discrete)
}

/// Relative count error score: 1 on exact match, 0 past 50% relative error
/// or on a zero reference, `exp(-3 * rel)` in between.
pub fn score_count(p: CountValue, g: CountValue) -> Result<QualityScore> {
    let CountValue::Value(g) = g else {
        return Err(Error::InvalidReference("reference count could not be parsed".into()));
    };
    let value = match p {
        CountValue::ParseFailure => 0.0,
        CountValue::Value(p) if p == g => 1.0,
        CountValue::Value(_) if g == 0 => 0.0,
        CountValue::Value(p) => {
            let rel = p.abs_diff(g) as f64 / g as f64;
            if rel > 0.5 {
                0.0
            } else {
                (-3.0 * rel).exp()
            }
        }
    };
    Ok(QualityScore::new(value, AnswerKind::Count))
}

/// Extracts `[x1, y1, x2, y2]` and `{<x1><y1><x2><y2>}` boxes in order of
/// appearance. Corners are canonicalized and zero-area boxes dropped; under
/// the normalized convention, boxes leaving [0, 1] are dropped too.
pub fn parse_boxes(text: &str, convention: CoordinateConvention) -> Vec<BoundingBox> {
    BOX_RE
        .captures_iter(text)
        .filter_map(|caps| {
            let nums: Vec<f64> = (1..=8)
                .filter_map(|i| caps.get(i))
                .filter_map(|m| m.as_str().parse().ok())
                .collect();
            match nums[..] {
                [x1, y1, x2, y2] => BoundingBox::from_corners(x1, y1, x2, y2),
                _ => None,
            }
        })
        .filter(|b| convention == CoordinateConvention::Pixel || b.within_unit_square())
        .collect()
}

/// Text segments preceding each box pattern, used to recover object labels.
pub fn box_label_segments(text: &str) -> Vec<String> {
    let mut last = 0;
    let mut out = Vec::new();
    for m in BOX_RE.find_iter(text) {
        out.push(text[last..m.start()].to_owned());
        last = m.end();
    }
    out
}

fn intersection(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    w * h
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = intersection(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).min(1.0)
}

/// Generalized IoU: IoU minus the fraction of the smallest enclosing box
/// not covered by the union. Lies in [-1, 1].
pub fn g_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = intersection(a, b);
    let union = a.area() + b.area() - inter;
    let enclosing = (a.x_max.max(b.x_max) - a.x_min.min(b.x_min)) * (a.y_max.max(b.y_max) - a.y_min.min(b.y_min));
    let iou = if inter > 0.0 { (inter / union).min(1.0) } else { 0.0 };
    iou - (enclosing - union) / enclosing
}

/// One-to-one matching between reference boxes `g` and predicted boxes `p`
/// maximizing total IoU, as `(g_index, p_index)` pairs sorted by `g_index`.
pub fn hungarian_match(g: &[BoundingBox], p: &[BoundingBox]) -> Vec<(usize, usize)> {
    let weights: Vec<Vec<f64>> = g.iter().map(|gb| p.iter().map(|pb| iou(gb, pb)).collect()).collect();
    max_weight_assignment(&weights)
}

/// Sum of IoU over the optimal matching, accumulated in reference order.
pub fn matched_iou_total(g: &[BoundingBox], p: &[BoundingBox]) -> f64 {
    hungarian_match(g, p).into_iter().map(|(i, j)| iou(&g[i], &p[j])).sum()
}

/// Hungarian-matched IoU averaged over the reference boxes. Unmatched
/// references count as zero; surplus predictions are not penalized.
pub fn grounding_score_boxes(g: &[BoundingBox], p: &[BoundingBox]) -> Result<f64> {
    if g.is_empty() {
        return Err(Error::InvalidReference("reference has no boxes".into()));
    }
    Ok((matched_iou_total(g, p) / g.len() as f64).clamp(0.0, 1.0))
}

pub fn score_grounding(o: &str, y_star: &str, convention: CoordinateConvention) -> Result<QualityScore> {
    let g = parse_boxes(y_star, convention);
    let p = parse_boxes(o, convention);
    Ok(QualityScore::new(grounding_score_boxes(&g, &p)?, AnswerKind::Boxes))
}

/// Scores a response against a reference target according to the task's
/// answer structure.
pub fn score_response(o: &str, y_star: &str, task: TaskKind, convention: CoordinateConvention) -> Result<QualityScore> {
    match task.answer_kind() {
        AnswerKind::Discrete => Ok(score_discrete(o, y_star)),
        AnswerKind::Count => score_count(extract_count(o), extract_count(y_star)),
        AnswerKind::Boxes => score_grounding(o, y_star, convention),
    }
}
