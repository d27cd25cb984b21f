//! Core domain records: samples, manifests, semantic-equivalence condition
//! sets, sampled responses and bounding boxes.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::hash_str;
use crate::jsonl;
use crate::scoring::{self, CountValue};
use crate::text_perturb::TextRegime;

/// How a VQA answer is structured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerStructure {
    Discrete,
    Count,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskKind {
    SceneClassification,
    Vqa(AnswerStructure),
    VisualGrounding,
}

/// The scoring family a task's answers fall into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Discrete,
    Count,
    Boxes,
}

impl TaskKind {
    pub fn answer_kind(self) -> AnswerKind {
        match self {
            TaskKind::SceneClassification | TaskKind::Vqa(AnswerStructure::Discrete) => AnswerKind::Discrete,
            TaskKind::Vqa(AnswerStructure::Count) => AnswerKind::Count,
            TaskKind::VisualGrounding => AnswerKind::Boxes,
        }
    }

    /// Short identifier used in file names and on the command line.
    pub fn slug(self) -> &'static str {
        match self {
            TaskKind::SceneClassification => "scene",
            TaskKind::Vqa(AnswerStructure::Discrete) => "vqa",
            TaskKind::Vqa(AnswerStructure::Count) => "vqa-count",
            TaskKind::VisualGrounding => "grounding",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scene" | "scene_classification" => Ok(TaskKind::SceneClassification),
            "vqa" => Ok(TaskKind::Vqa(AnswerStructure::Discrete)),
            "vqa-count" | "vqa_count" => Ok(TaskKind::Vqa(AnswerStructure::Count)),
            "grounding" | "visual_grounding" => Ok(TaskKind::VisualGrounding),
            other => Err(format!(
                "unknown task `{other}` (expected scene, vqa, vqa-count or grounding)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateConvention {
    /// Absolute pixel coordinates.
    #[default]
    Pixel,
    /// Coordinates in [0, 1] relative to image width and height.
    Normalized,
}

/// Axis-aligned box with `x_min < x_max` and `y_min < y_max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    /// Builds a box from two corners in any order. Returns `None` for
    /// non-finite coordinates or zero area.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Option<Self> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return None;
        }
        let b = BoundingBox {
            x_min: x1.min(x2),
            y_min: y1.min(y2),
            x_max: x1.max(x2),
            y_max: y1.max(y2),
        };
        (b.x_min < b.x_max && b.y_min < b.y_max).then_some(b)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn within_unit_square(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| (0.0..=1.0).contains(v))
    }
}

/// One task instance.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub sample_id: String,
    /// Image path relative to the manifest directory (or absolute).
    pub image: PathBuf,
    pub query: String,
    /// Raw reference target, shared by every condition of the sample.
    pub target: String,
    pub task: TaskKind,
    pub regime: Option<TextRegime>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TaskTag {
    SceneClassification,
    Vqa,
    VisualGrounding,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleLine {
    sample_id: String,
    image: PathBuf,
    query: String,
    target: String,
    task: TaskTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    answer_structure: Option<AnswerStructure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    regime: Option<TextRegime>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestHeader {
    coordinate_convention: CoordinateConvention,
}

impl From<&SampleRecord> for SampleLine {
    fn from(s: &SampleRecord) -> Self {
        let (task, answer_structure) = match s.task {
            TaskKind::SceneClassification => (TaskTag::SceneClassification, None),
            TaskKind::Vqa(a) => (TaskTag::Vqa, Some(a)),
            TaskKind::VisualGrounding => (TaskTag::VisualGrounding, None),
        };
        SampleLine {
            sample_id: s.sample_id.clone(),
            image: s.image.clone(),
            query: s.query.clone(),
            target: s.target.clone(),
            task,
            answer_structure,
            regime: s.regime,
        }
    }
}

impl SampleLine {
    fn into_record(self) -> std::result::Result<SampleRecord, String> {
        let task = match (self.task, self.answer_structure) {
            (TaskTag::SceneClassification, None) => TaskKind::SceneClassification,
            (TaskTag::Vqa, a) => TaskKind::Vqa(a.unwrap_or(AnswerStructure::Discrete)),
            (TaskTag::VisualGrounding, None) => TaskKind::VisualGrounding,
            (_, Some(_)) => return Err("answer_structure is only valid for vqa samples".into()),
        };
        Ok(SampleRecord {
            sample_id: self.sample_id,
            image: self.image,
            query: self.query,
            target: self.target,
            task,
            regime: self.regime,
        })
    }
}

/// A validated sample manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub convention: CoordinateConvention,
    /// Directory sample image paths are resolved against.
    pub root: PathBuf,
    pub samples: Vec<SampleRecord>,
}

impl Manifest {
    pub fn new(convention: CoordinateConvention, root: impl Into<PathBuf>, samples: Vec<SampleRecord>) -> Result<Self> {
        let m = Manifest {
            convention,
            root: root.into(),
            samples,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.root.join(path)
    }

    pub fn image_path(&self, sample: &SampleRecord) -> PathBuf {
        self.resolve(&sample.image)
    }

    pub fn get(&self, sample_id: &str) -> Option<&SampleRecord> {
        self.samples.iter().find(|s| s.sample_id == sample_id)
    }

    pub fn by_id(&self) -> BTreeMap<&str, &SampleRecord> {
        self.samples.iter().map(|s| (s.sample_id.as_str(), s)).collect()
    }

    /// Checks every record invariant except image decodability.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.samples {
            if !seen.insert(s.sample_id.as_str()) {
                return Err(Error::validation(&s.sample_id, "duplicate sample_id"));
            }
            validate_sample(s, self.convention)?;
        }
        Ok(())
    }

    /// Confirms every referenced image exists and has a decodable header.
    pub fn verify_images(&self) -> Result<()> {
        for s in &self.samples {
            let path = self.image_path(s);
            image::ImageReader::open(&path)
                .map_err(|e| Error::io(&path, e))?
                .with_guessed_format()
                .map_err(|e| Error::io(&path, e))?
                .into_dimensions()
                .map_err(|source| Error::Image {
                    path: path.clone(),
                    source,
                })?;
        }
        Ok(())
    }

    /// Parses manifest text. `path` is used only for error messages.
    pub fn parse(text: &str, path: &Path, root: impl Into<PathBuf>) -> Result<Self> {
        let lines: Vec<(usize, serde_json::Value)> = jsonl::parse_lines(text, path)?;
        let mut iter = lines.into_iter();
        let (hline, header) = iter.next().ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "missing manifest header".into(),
        })?;
        let header: ManifestHeader = serde_json::from_value(header).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: hline,
            message: format!("invalid header: {e}"),
        })?;
        let mut samples = Vec::new();
        for (line, value) in iter {
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            };
            if value.get("coordinate_convention").is_some() {
                return Err(parse_err("coordinate convention declared more than once".into()));
            }
            let raw: SampleLine = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
            samples.push(raw.into_record().map_err(parse_err)?);
        }
        Manifest::new(header.coordinate_convention, root, samples)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&ManifestHeader {
            coordinate_convention: self.convention,
        })?;
        out.push('\n');
        let lines: Vec<SampleLine> = self.samples.iter().map(SampleLine::from).collect();
        out.push_str(&jsonl::to_string(&lines)?);
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }
}

fn validate_sample(s: &SampleRecord, convention: CoordinateConvention) -> Result<()> {
    if s.sample_id.trim().is_empty() {
        return Err(Error::validation("", "empty sample_id"));
    }
    if s.target.trim().is_empty() {
        return Err(Error::validation(&s.sample_id, "empty reference target"));
    }
    match s.task.answer_kind() {
        AnswerKind::Discrete => {
            if scoring::normalize(&s.target).is_empty() {
                return Err(Error::validation(
                    &s.sample_id,
                    "reference target is empty after normalization",
                ));
            }
        }
        AnswerKind::Count => {
            if scoring::extract_count(&s.target) == CountValue::ParseFailure {
                return Err(Error::validation(&s.sample_id, "count target does not contain a count"));
            }
        }
        AnswerKind::Boxes => {
            // Parse without range filtering so unit mixing is reported
            // rather than silently dropping boxes.
            let boxes = scoring::parse_boxes(&s.target, CoordinateConvention::Pixel);
            if boxes.is_empty() {
                return Err(Error::validation(
                    &s.sample_id,
                    "grounding target contains no parseable box",
                ));
            }
            if convention == CoordinateConvention::Normalized && !boxes.iter().all(BoundingBox::within_unit_square) {
                return Err(Error::validation(
                    &s.sample_id,
                    "box outside [0,1] in a normalized-coordinate manifest",
                ));
            }
        }
    }
    Ok(())
}

/// Loads and validates a manifest; image paths resolve against its directory.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = jsonl::read_text(path)?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let manifest = Manifest::parse(&text, path, root)?;
    manifest.verify_images()?;
    Ok(manifest)
}

/// Assigns each sample one of the four rewrite regimes.
///
/// Samples are ranked by a stable hash of `(sample_id, seed)` and dealt
/// round-robin into the regimes, so subset sizes differ by at most one.
/// Output order follows input order.
pub fn assign_regimes(samples: &[SampleRecord], seed: u64) -> Result<Vec<SampleRecord>> {
    assign_regimes_from(samples, seed, &TextRegime::REWRITE)
}

/// [`assign_regimes`] over an arbitrary regime list.
pub fn assign_regimes_from(samples: &[SampleRecord], seed: u64, regimes: &[TextRegime]) -> Result<Vec<SampleRecord>> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples to assign"));
    }
    if regimes.is_empty() {
        return Err(Error::EmptyInput("no regimes enabled"));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| {
        let ka = (hash_str(seed, &samples[a].sample_id), &samples[a].sample_id);
        let kb = (hash_str(seed, &samples[b].sample_id), &samples[b].sample_id);
        ka.cmp(&kb)
    });
    let mut out = samples.to_vec();
    for (rank, idx) in order.into_iter().enumerate() {
        out[idx].regime = Some(regimes[rank % regimes.len()]);
    }
    Ok(out)
}

/// Index of a condition within a semantic-equivalence cluster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ConditionIndex(u8);

impl ConditionIndex {
    pub const CLEAN: ConditionIndex = ConditionIndex(1);
    pub const IMAGE_PERTURBED: ConditionIndex = ConditionIndex(2);
    pub const TEXT_PERTURBED: ConditionIndex = ConditionIndex(3);
    pub const JOINT: ConditionIndex = ConditionIndex(4);
    pub const ALL: [ConditionIndex; 4] = [Self::CLEAN, Self::IMAGE_PERTURBED, Self::TEXT_PERTURBED, Self::JOINT];

    pub fn new(j: u8) -> Option<Self> {
        (1..=4).contains(&j).then_some(ConditionIndex(j))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn image_perturbed(self) -> bool {
        matches!(self.0, 2 | 4)
    }

    pub fn text_perturbed(self) -> bool {
        matches!(self.0, 3 | 4)
    }
}

impl TryFrom<u8> for ConditionIndex {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        ConditionIndex::new(v).ok_or_else(|| format!("condition index {v} outside 1..=4"))
    }
}

impl From<ConditionIndex> for u8 {
    fn from(c: ConditionIndex) -> u8 {
        c.0
    }
}

impl fmt::Display for ConditionIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One (image, query) input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub index: ConditionIndex,
    pub image: PathBuf,
    pub query: String,
}

#[derive(Deserialize)]
struct RawConditionSet {
    sample_id: String,
    conditions: Vec<Condition>,
    #[serde(default)]
    degenerate_rewrite: bool,
}

/// The four semantically equivalent inputs of one sample: clean,
/// image-perturbed, text-perturbed and jointly perturbed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawConditionSet")]
pub struct ConditionSet {
    pub sample_id: String,
    conditions: [Condition; 4],
    /// Set when the perturbed query equals the clean one.
    pub degenerate_rewrite: bool,
}

impl TryFrom<RawConditionSet> for ConditionSet {
    type Error = String;

    fn try_from(raw: RawConditionSet) -> Result<Self, Self::Error> {
        let conditions: [Condition; 4] = raw
            .conditions
            .try_into()
            .map_err(|v: Vec<Condition>| format!("expected 4 conditions, got {}", v.len()))?;
        let set = ConditionSet {
            sample_id: raw.sample_id,
            conditions,
            degenerate_rewrite: raw.degenerate_rewrite,
        };
        set.check_sharing()?;
        Ok(set)
    }
}

impl ConditionSet {
    pub fn condition(&self, j: ConditionIndex) -> &Condition {
        &self.conditions[usize::from(j.get() - 1)]
    }

    pub fn conditions(&self) -> &[Condition; 4] {
        &self.conditions
    }

    pub fn clean(&self) -> &Condition {
        self.condition(ConditionIndex::CLEAN)
    }

    pub fn joint(&self) -> &Condition {
        self.condition(ConditionIndex::JOINT)
    }

    fn check_sharing(&self) -> std::result::Result<(), String> {
        let c = &self.conditions;
        for (i, cond) in c.iter().enumerate() {
            if usize::from(cond.index.get()) != i + 1 {
                return Err(format!("condition at position {} has index {}", i + 1, cond.index));
            }
        }
        if c[0].image != c[2].image || c[1].image != c[3].image {
            return Err("image sharing violated (j=1/3 clean, j=2/4 perturbed)".into());
        }
        if c[0].query != c[1].query || c[2].query != c[3].query {
            return Err("query sharing violated (j=1/2 clean, j=3/4 perturbed)".into());
        }
        Ok(())
    }
}

/// Builds the condition set of `sample`. `clean_image` is the resolved path
/// of the sample image.
pub fn build_condition_set(
    sample: &SampleRecord,
    clean_image: &Path,
    perturbed_image: &Path,
    perturbed_query: &str,
) -> Result<ConditionSet> {
    if !perturbed_image.exists() {
        return Err(Error::MissingArtifact(perturbed_image.to_path_buf()));
    }
    let degenerate = perturbed_query == sample.query;
    if degenerate {
        log::warn!(
            "sample {}: perturbed query is identical to the clean query",
            sample.sample_id
        );
    }
    let mk = |j: ConditionIndex| Condition {
        index: j,
        image: if j.image_perturbed() {
            perturbed_image.to_path_buf()
        } else {
            clean_image.to_path_buf()
        },
        query: if j.text_perturbed() {
            perturbed_query.to_owned()
        } else {
            sample.query.clone()
        },
    };
    Ok(ConditionSet {
        sample_id: sample.sample_id.clone(),
        conditions: ConditionIndex::ALL.map(mk),
        degenerate_rewrite: degenerate,
    })
}

/// One sampled model output under one condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseRecord {
    pub sample_id: String,
    pub condition: ConditionIndex,
    pub draw: u32,
    pub responder: String,
    pub text: String,
    /// Total sequence log-probability in nats.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob_sum: Option<f64>,
}

impl ResponseRecord {
    pub fn key(&self) -> (&str, ConditionIndex, u32, &str) {
        (&self.sample_id, self.condition, self.draw, &self.responder)
    }
}

/// Validates uniqueness, draw numbering and log-probability sanity.
pub fn validate_responses(records: &[ResponseRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        if r.draw == 0 {
            return Err(Error::validation(&r.sample_id, "draw index starts at 1"));
        }
        if let Some(lp) = r.logprob_sum {
            if !lp.is_finite() || lp > 0.0 {
                return Err(Error::validation(
                    &r.sample_id,
                    format!("logprob_sum must be finite and <= 0, got {lp}"),
                ));
            }
        }
        if !seen.insert(r.key()) {
            return Err(Error::validation(
                &r.sample_id,
                format!(
                    "duplicate response (condition {}, draw {}, responder {})",
                    r.condition, r.draw, r.responder
                ),
            ));
        }
    }
    Ok(())
}

pub fn load_responses(path: &Path) -> Result<Vec<ResponseRecord>> {
    let records: Vec<ResponseRecord> = jsonl::read(path)?;
    validate_responses(&records)?;
    Ok(records)
}

pub fn load_condition_sets(path: &Path) -> Result<Vec<ConditionSet>> {
    let sets: Vec<ConditionSet> = jsonl::read(path)?;
    let mut seen = HashSet::new();
    for s in &sets {
        if !seen.insert(s.sample_id.as_str()) {
            return Err(Error::validation(&s.sample_id, "duplicate condition set"));
        }
    }
    Ok(sets)
}
