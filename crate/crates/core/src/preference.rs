//! Preference-corpus construction from scored candidate pools.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{ConditionIndex, ConditionSet, CoordinateConvention, Manifest, ResponseRecord, SampleRecord};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::scoring::{score_response, QualityScore};

pub const DEFAULT_MIN_GAP: f64 = 0.05;
pub const DEFAULT_DRAWS: u32 = 4;
pub const GAP_HISTOGRAM_BINS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub condition: ConditionIndex,
    pub draw: u32,
    pub text: String,
    pub score: QualityScore,
}

impl Candidate {
    fn order_key(&self) -> (ConditionIndex, u32) {
        (self.condition, self.draw)
    }
}

/// All scored responses of one cluster, sorted by (condition, draw).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub sample_id: String,
    pub candidates: Vec<Candidate>,
    /// False when at least one of the four conditions has no response.
    pub complete: bool,
}

/// Scores every response of one sample against its shared reference target.
pub fn assemble_pool(
    responses: &[&ResponseRecord],
    sample: &SampleRecord,
    convention: CoordinateConvention,
) -> Result<CandidatePool> {
    if responses.is_empty() {
        return Err(Error::EmptyPool(sample.sample_id.clone()));
    }
    let responder = &responses[0].responder;
    let mut candidates = Vec::with_capacity(responses.len());
    for r in responses {
        if r.sample_id != sample.sample_id {
            return Err(Error::validation(
                &sample.sample_id,
                format!("pool received a response for `{}`", r.sample_id),
            ));
        }
        if &r.responder != responder {
            return Err(Error::validation(
                &sample.sample_id,
                format!("mixed responders `{responder}` and `{}`", r.responder),
            ));
        }
        candidates.push(Candidate {
            condition: r.condition,
            draw: r.draw,
            text: r.text.clone(),
            score: score_response(&r.text, &sample.target, sample.task, convention)?,
        });
    }
    candidates.sort_by_key(Candidate::order_key);
    let present: BTreeSet<ConditionIndex> = candidates.iter().map(|c| c.condition).collect();
    Ok(CandidatePool {
        sample_id: sample.sample_id.clone(),
        complete: present.len() == ConditionIndex::ALL.len(),
        candidates,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreferencePair {
    pub chosen: Candidate,
    pub rejected: Candidate,
}

impl PreferencePair {
    pub fn gap(&self) -> f64 {
        self.chosen.score.value - self.rejected.score.value
    }
}

/// Highest- versus lowest-scoring candidate. Ties for the maximum go to the
/// lowest (condition, draw); ties for the minimum to the highest. Returns
/// `None` for pools under two candidates or when the gap is below `min_gap`.
pub fn select_preference(pool: &CandidatePool, min_gap: f64) -> Option<PreferencePair> {
    if pool.candidates.len() < 2 {
        return None;
    }
    let mut best = &pool.candidates[0];
    let mut worst = &pool.candidates[0];
    // Candidates are in ascending (condition, draw) order.
    for c in &pool.candidates[1..] {
        if c.score.value > best.score.value {
            best = c;
        }
        if c.score.value <= worst.score.value {
            worst = c;
        }
    }
    if best.score.value < worst.score.value + min_gap || std::ptr::eq(best, worst) {
        return None;
    }
    Some(PreferencePair {
        chosen: best.clone(),
        rejected: worst.clone(),
    })
}

/// One corpus line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceTriplet {
    pub sample_id: String,
    pub condition_index: ConditionIndex,
    pub image: PathBuf,
    pub query: String,
    pub chosen: String,
    pub rejected: String,
    pub chosen_score: f64,
    pub rejected_score: f64,
}

/// Instantiates the pair on the clean and the jointly perturbed inputs.
pub fn emit_triplets(cluster: &ConditionSet, pair: &PreferencePair) -> [PreferenceTriplet; 2] {
    [cluster.clean(), cluster.joint()].map(|c| PreferenceTriplet {
        sample_id: cluster.sample_id.clone(),
        condition_index: c.index,
        image: c.image.clone(),
        query: c.query.clone(),
        chosen: pair.chosen.text.clone(),
        rejected: pair.rejected.text.clone(),
        chosen_score: pair.chosen.score.value,
        rejected_score: pair.rejected.score.value,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub clusters: usize,
    pub emitted_clusters: usize,
    pub skipped_no_gap: usize,
    pub skipped_no_responses: usize,
    pub incomplete_pools: usize,
    pub triplets: usize,
    /// Chosen-minus-rejected gaps of emitted pairs in ten equal bins over [0, 1].
    pub gap_histogram: [usize; GAP_HISTOGRAM_BINS],
}

impl CorpusStats {
    pub fn skipped(&self) -> usize {
        self.skipped_no_gap + self.skipped_no_responses
    }

    fn record_gap(&mut self, gap: f64) {
        let bin = ((gap * GAP_HISTOGRAM_BINS as f64) as usize).min(GAP_HISTOGRAM_BINS - 1);
        self.gap_histogram[bin] += 1;
    }
}

/// Builds the corpus over every condition set, in sample-id order.
///
/// `responder` selects one responder; with `None` the responses must come
/// from a single responder.
pub fn build_corpus(
    manifest: &Manifest,
    sets: &[ConditionSet],
    responses: &[ResponseRecord],
    responder: Option<&str>,
    min_gap: f64,
) -> Result<(Vec<PreferenceTriplet>, CorpusStats)> {
    if !(min_gap >= 0.0 && min_gap.is_finite()) {
        return Err(Error::validation(
            "min_gap",
            format!("must be finite and >= 0, got {min_gap}"),
        ));
    }
    let selected: Vec<&ResponseRecord> = match responder {
        Some(name) => responses.iter().filter(|r| r.responder == name).collect(),
        None => {
            let names: BTreeSet<&str> = responses.iter().map(|r| r.responder.as_str()).collect();
            if names.len() > 1 {
                return Err(Error::validation(
                    "responses",
                    format!(
                        "multiple responders present ({}); select one",
                        names.into_iter().collect::<Vec<_>>().join(", ")
                    ),
                ));
            }
            responses.iter().collect()
        }
    };

    let sets_by_id: BTreeMap<&str, &ConditionSet> = sets.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    let mut grouped: BTreeMap<&str, Vec<&ResponseRecord>> = BTreeMap::new();
    for r in selected {
        if !sets_by_id.contains_key(r.sample_id.as_str()) {
            return Err(Error::validation(
                &r.sample_id,
                "response for a sample without a condition set",
            ));
        }
        grouped.entry(r.sample_id.as_str()).or_default().push(r);
    }

    let mut stats = CorpusStats::default();
    let mut triplets = Vec::new();
    for (id, set) in sets_by_id {
        stats.clusters += 1;
        let sample = manifest
            .get(id)
            .ok_or_else(|| Error::validation(id, "condition set has no manifest sample"))?;
        let pool = match assemble_pool(
            grouped.get(id).map_or(&[][..], Vec::as_slice),
            sample,
            manifest.convention,
        ) {
            Ok(p) => p,
            Err(Error::EmptyPool(_)) => {
                log::warn!("sample {id}: no responses, cluster skipped");
                stats.skipped_no_responses += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        if !pool.complete {
            stats.incomplete_pools += 1;
        }
        match select_preference(&pool, min_gap) {
            Some(pair) => {
                stats.emitted_clusters += 1;
                stats.record_gap(pair.gap());
                triplets.extend(emit_triplets(set, &pair));
            }
            None => stats.skipped_no_gap += 1,
        }
    }
    stats.triplets = triplets.len();
    Ok((triplets, stats))
}

/// Path of the summary written next to a corpus file.
pub fn summary_path(corpus: &Path) -> PathBuf {
    let stem = corpus
        .file_stem()
        .map_or_else(|| "corpus".into(), |s| s.to_string_lossy().into_owned());
    corpus.with_file_name(format!("{stem}.summary.json"))
}

/// Writes the corpus as JSONL plus a `<stem>.summary.json` sidecar.
pub fn export_corpus(triplets: &[PreferenceTriplet], stats: &CorpusStats, path: &Path) -> Result<PathBuf> {
    if triplets.is_empty() {
        return Err(Error::EmptyInput("preference corpus has no triplets"));
    }
    jsonl::write(path, triplets)?;
    let summary = summary_path(path);
    jsonl::write_json(&summary, stats)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AnswerKind, TaskKind};

    fn cand(j: u8, d: u32, v: f64) -> Candidate {
        Candidate {
            condition: ConditionIndex::new(j).unwrap(),
            draw: d,
            text: format!("c{j}d{d}"),
            score: QualityScore {
                value: v,
                structure: AnswerKind::Discrete,
            },
        }
    }

    fn pool(cands: Vec<Candidate>) -> CandidatePool {
        CandidatePool {
            sample_id: "s".into(),
            candidates: cands,
            complete: true,
        }
    }

    fn sample() -> SampleRecord {
        SampleRecord {
            sample_id: "s".into(),
            image: "s.png".into(),
            query: "What scene?".into(),
            target: "forest".into(),
            task: TaskKind::SceneClassification,
            regime: None,
        }
    }

    fn resp(j: u8, d: u32, text: &str) -> ResponseRecord {
        ResponseRecord {
            sample_id: "s".into(),
            condition: ConditionIndex::new(j).unwrap(),
            draw: d,
            responder: "r".into(),
            text: text.into(),
            logprob_sum: None,
        }
    }

    #[test]
    fn picks_extremes() {
        let p = pool(vec![cand(1, 1, 0.9), cand(2, 1, 0.2), cand(3, 1, 0.5)]);
        let pair = select_preference(&p, 0.05).unwrap();
        assert_eq!(pair.chosen.text, "c1d1");
        assert_eq!(pair.rejected.text, "c2d1");
    }

    #[test]
    fn equal_scores_are_skipped() {
        let p = pool((1..=4).map(|j| cand(j, 1, 1.0)).collect());
        assert!(select_preference(&p, 0.05).is_none());
        assert!(select_preference(&pool(vec![cand(1, 1, 1.0)]), 0.0).is_none());
    }

    #[test]
    fn ties_follow_condition_order() {
        let p = pool(vec![cand(1, 2, 0.0), cand(2, 1, 1.0), cand(3, 1, 1.0), cand(4, 1, 0.0)]);
        let pair = select_preference(&p, 0.05).unwrap();
        assert_eq!(pair.chosen.text, "c2d1");
        assert_eq!(pair.rejected.text, "c4d1");
    }

    #[test]
    fn argmax_may_live_at_text_condition() {
        let p = pool(vec![
            cand(1, 1, 0.3),
            cand(2, 1, 0.1),
            cand(3, 1, 0.95),
            cand(4, 1, 0.4),
        ]);
        assert_eq!(select_preference(&p, 0.05).unwrap().chosen.condition.get(), 3);
    }

    #[test]
    fn pool_assembly() {
        let s = sample();
        let rs: Vec<ResponseRecord> = (1..=4)
            .flat_map(|j| (1..=2).map(move |d| resp(j, d, if d == 1 { "Forest" } else { "lake" })))
            .collect();
        let refs: Vec<&ResponseRecord> = rs.iter().collect();
        let p = assemble_pool(&refs, &s, CoordinateConvention::Pixel).unwrap();
        assert_eq!(p.candidates.len(), 8);
        assert!(p.complete);
        assert_eq!(p.candidates[0].score.value, 1.0);
        assert_eq!(p.candidates[1].score.value, 0.0);

        let partial: Vec<&ResponseRecord> = rs.iter().filter(|r| r.condition.get() != 3).collect();
        let p = assemble_pool(&partial, &s, CoordinateConvention::Pixel).unwrap();
        assert_eq!(p.candidates.len(), 6);
        assert!(!p.complete);

        assert!(matches!(
            assemble_pool(&[], &s, CoordinateConvention::Pixel),
            Err(Error::EmptyPool(_))
        ));
    }

    #[test]
    fn gap_histogram_bins() {
        let mut st = CorpusStats::default();
        st.record_gap(1.0);
        st.record_gap(0.05);
        st.record_gap(0.55);
        assert_eq!(st.gap_histogram[9], 1);
        assert_eq!(st.gap_histogram[0], 1);
        assert_eq!(st.gap_histogram[5], 1);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = export_corpus(&[], &CorpusStats::default(), &dir.path().join("c.jsonl"));
        assert!(matches!(err, Err(Error::EmptyInput(_))));
    }

    #[test]
    fn summary_sidecar_name() {
        assert_eq!(
            summary_path(Path::new("out/dpo_corpus.jsonl")),
            PathBuf::from("out/dpo_corpus.summary.json")
        );
    }
}
