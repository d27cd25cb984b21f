//! Task metrics (accuracy, Acc@0.5, gIoU), the relative performance drop
//! and cross-condition agreement.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::data::{AnswerKind, BoundingBox, CoordinateConvention, TaskKind};
use crate::error::{Error, Result};
use crate::scoring::{
    self, extract_count, grounding_score_boxes, hungarian_match, iou, matched_iou_total, normalize, parse_boxes,
    CountValue,
};

pub use crate::scoring::g_iou;

/// Acc@0.5 threshold; samples at exactly 0.5 count as hits.
pub const ACC_IOU_THRESHOLD: f64 = 0.5;
pub const DEFAULT_CONSISTENCY_SAMPLES: usize = 5;

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn mean(values: &[f64]) -> f64 {
    compensated_sum(values.iter().copied()) / values.len() as f64
}

fn check_lengths(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { left, right });
    }
    if left == 0 {
        return Err(Error::EmptyInput("no samples"));
    }
    Ok(())
}

/// Whether one prediction is correct: normalized exact match for discrete
/// answers, exact count match for counts.
pub fn is_correct(prediction: &str, reference: &str, task: TaskKind) -> Result<bool> {
    match task.answer_kind() {
        AnswerKind::Discrete => Ok(scoring::score_discrete(prediction, reference).value == 1.0),
        AnswerKind::Count => {
            let g = extract_count(reference);
            if g == CountValue::ParseFailure {
                return Err(Error::InvalidReference(format!("no count in reference `{reference}`")));
            }
            Ok(extract_count(prediction) == g)
        }
        AnswerKind::Boxes => Err(Error::validation(
            task.slug(),
            "grounding is measured with Acc@0.5, not accuracy",
        )),
    }
}

pub fn accuracy<S: AsRef<str>>(predictions: &[S], references: &[S], task: TaskKind) -> Result<f64> {
    check_lengths(predictions.len(), references.len())?;
    let hits = predictions
        .iter()
        .zip(references)
        .map(|(p, r)| is_correct(p.as_ref(), r.as_ref(), task).map(|ok| if ok { 1.0 } else { 0.0 }))
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean(&hits))
}

/// Fraction of samples whose Hungarian-matched per-reference IoU reaches 0.5.
pub fn acc_at_05(pred_boxes: &[Vec<BoundingBox>], ref_boxes: &[Vec<BoundingBox>]) -> Result<f64> {
    check_lengths(pred_boxes.len(), ref_boxes.len())?;
    let hits = pred_boxes
        .iter()
        .zip(ref_boxes)
        .map(|(p, g)| grounding_score_boxes(g, p).map(|v| if v >= ACC_IOU_THRESHOLD { 1.0 } else { 0.0 }))
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean(&hits))
}

/// Per-reference gIoU of one sample under the IoU-optimal matching.
/// Unmatched reference boxes contribute zero.
pub fn matched_giou(g: &[BoundingBox], p: &[BoundingBox]) -> Result<f64> {
    if g.is_empty() {
        return Err(Error::InvalidReference("reference has no boxes".into()));
    }
    let total = compensated_sum(hungarian_match(g, p).into_iter().map(|(i, j)| g_iou(&g[i], &p[j])));
    Ok(total / g.len() as f64)
}

/// Dataset-level gIoU: mean of [`matched_giou`] over samples.
pub fn mean_giou(pred_boxes: &[Vec<BoundingBox>], ref_boxes: &[Vec<BoundingBox>]) -> Result<f64> {
    check_lengths(pred_boxes.len(), ref_boxes.len())?;
    let per = pred_boxes
        .iter()
        .zip(ref_boxes)
        .map(|(p, g)| matched_giou(g, p))
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean(&per))
}

/// Relative performance drop in percent.
pub fn rpd(m_clean: f64, m_pert: f64) -> Result<f64> {
    if m_clean.is_nan() || m_clean <= 0.0 {
        return Err(Error::DegenerateClean(m_clean));
    }
    Ok((m_clean - m_pert) / m_clean * 100.0)
}

/// Most frequent normalized output; ties go to the lexicographically
/// smallest string.
pub fn mode<S: AsRef<str>>(group: &[S]) -> Option<String> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for o in group {
        *counts.entry(normalize(o.as_ref())).or_default() += 1;
    }
    // BTreeMap iterates in ascending key order, so the first maximum wins.
    let mut best: Option<(String, usize)> = None;
    for (k, c) in counts {
        if best.as_ref().is_none_or(|(_, bc)| c > *bc) {
            best = Some((k, c));
        }
    }
    best.map(|(k, _)| k)
}

fn check_groups<T>(clean: &[Vec<T>], pert: &[Vec<T>]) -> Result<()> {
    check_lengths(clean.len(), pert.len())?;
    for (c, p) in clean.iter().zip(pert) {
        if c.len() != p.len() {
            return Err(Error::LengthMismatch {
                left: c.len(),
                right: p.len(),
            });
        }
        if c.is_empty() {
            return Err(Error::EmptyInput("output group"));
        }
    }
    Ok(())
}

/// Fraction of samples whose clean and perturbed output groups share a mode.
pub fn cca_text<S: AsRef<str>>(groups_clean: &[Vec<S>], groups_pert: &[Vec<S>]) -> Result<f64> {
    check_groups(groups_clean, groups_pert)?;
    let agree: Vec<f64> = groups_clean
        .iter()
        .zip(groups_pert)
        .map(|(c, p)| if mode(c) == mode(p) { 1.0 } else { 0.0 })
        .collect();
    Ok(mean(&agree))
}

/// Agreement between two sampled box sets: total Hungarian-matched IoU over
/// the larger set size. Two empty sets agree fully; one empty set scores 0.
pub fn pair_iou(a: &[BoundingBox], b: &[BoundingBox]) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (matched_iou_total(a, b) / a.len().max(b.len()) as f64).clamp(0.0, 1.0),
    }
}

/// Mean over samples of the K×K-averaged [`pair_iou`] between clean and
/// perturbed sampled box sets.
pub fn cca_vg(box_groups_clean: &[Vec<Vec<BoundingBox>>], box_groups_pert: &[Vec<Vec<BoundingBox>>]) -> Result<f64> {
    check_groups(box_groups_clean, box_groups_pert)?;
    let per: Vec<f64> = box_groups_clean
        .iter()
        .zip(box_groups_pert)
        .map(|(c, p)| {
            let k2 = (c.len() * p.len()) as f64;
            let s = compensated_sum(c.iter().flat_map(|bc| p.iter().map(move |bp| pair_iou(bc, bp))));
            s / k2
        })
        .collect();
    Ok(mean(&per))
}

/// Evaluation outputs for one sample under one condition: a greedy-decoded
/// answer plus K stochastic samples.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: String,
    pub target: String,
    pub greedy: String,
    pub samples: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub n_samples: usize,
    pub k: usize,
    /// Accuracy, or Acc@0.5 for grounding.
    pub m_clean: f64,
    pub m_pert: f64,
    /// `None` when the clean metric is zero.
    pub rpd_percent: Option<f64>,
    pub cca: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub giou_clean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub giou_pert: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub strength: Option<f64>,
}

/// Pairs clean and perturbed records by sample id (sorted) and checks K.
fn pair_records<'a>(
    clean: &'a [EvalRecord],
    pert: &'a [EvalRecord],
    k: usize,
) -> Result<Vec<(&'a EvalRecord, &'a EvalRecord)>> {
    if k == 0 {
        return Err(Error::validation("k", "K must be >= 1"));
    }
    let index = |records: &'a [EvalRecord]| -> Result<BTreeMap<&'a str, &'a EvalRecord>> {
        let mut m = BTreeMap::new();
        for r in records {
            if r.samples.len() != k {
                return Err(Error::validation(
                    &r.sample_id,
                    format!("expected {k} sampled outputs, found {}", r.samples.len()),
                ));
            }
            if m.insert(r.sample_id.as_str(), r).is_some() {
                return Err(Error::validation(&r.sample_id, "duplicate evaluation record"));
            }
        }
        Ok(m)
    };
    let c = index(clean)?;
    let p: HashMap<_, _> = index(pert)?.into_iter().collect();
    check_lengths(c.len(), p.len())?;
    c.into_iter()
        .map(|(id, rc)| {
            let rp = p
                .get(id)
                .ok_or_else(|| Error::validation(id, "no perturbed-condition record"))?;
            if rc.target != rp.target {
                return Err(Error::validation(id, "clean and perturbed targets differ"));
            }
            Ok((rc, *rp))
        })
        .collect()
}

/// Computes the full report for one task from clean and perturbed outputs.
pub fn compute_report(
    task: TaskKind,
    convention: CoordinateConvention,
    clean: &[EvalRecord],
    pert: &[EvalRecord],
    k: usize,
) -> Result<MetricReport> {
    let pairs = pair_records(clean, pert, k)?;
    let n = pairs.len();
    let (m_clean, m_pert, cca, giou_clean, giou_pert) = match task.answer_kind() {
        AnswerKind::Boxes => {
            let boxes = |s: &str| parse_boxes(s, convention);
            let refs: Vec<_> = pairs.iter().map(|(c, _)| boxes(&c.target)).collect();
            let pc: Vec<_> = pairs.iter().map(|(c, _)| boxes(&c.greedy)).collect();
            let pp: Vec<_> = pairs.iter().map(|(_, p)| boxes(&p.greedy)).collect();
            let gc: Vec<Vec<_>> = pairs
                .iter()
                .map(|(c, _)| c.samples.iter().map(|s| boxes(s)).collect())
                .collect();
            let gp: Vec<Vec<_>> = pairs
                .iter()
                .map(|(_, p)| p.samples.iter().map(|s| boxes(s)).collect())
                .collect();
            (
                acc_at_05(&pc, &refs)?,
                acc_at_05(&pp, &refs)?,
                cca_vg(&gc, &gp)?,
                Some(mean_giou(&pc, &refs)?),
                Some(mean_giou(&pp, &refs)?),
            )
        }
        _ => {
            let refs: Vec<&str> = pairs.iter().map(|(c, _)| c.target.as_str()).collect();
            let pc: Vec<&str> = pairs.iter().map(|(c, _)| c.greedy.as_str()).collect();
            let pp: Vec<&str> = pairs.iter().map(|(_, p)| p.greedy.as_str()).collect();
            let gc: Vec<Vec<&str>> = pairs
                .iter()
                .map(|(c, _)| c.samples.iter().map(String::as_str).collect())
                .collect();
            let gp: Vec<Vec<&str>> = pairs
                .iter()
                .map(|(_, p)| p.samples.iter().map(String::as_str).collect())
                .collect();
            (
                accuracy(&pc, &refs, task)?,
                accuracy(&pp, &refs, task)?,
                cca_text(&gc, &gp)?,
                None,
                None,
            )
        }
    };
    Ok(MetricReport {
        task: task.slug().to_owned(),
        n_samples: n,
        k,
        m_clean,
        m_pert,
        rpd_percent: rpd(m_clean, m_pert).ok(),
        cca,
        giou_clean,
        giou_pert,
        strength: None,
    })
}

/// Used by property tests: IoU of the single best pair.
#[doc(hidden)]
pub fn best_single_iou(a: &[BoundingBox], b: &[BoundingBox]) -> f64 {
    a.iter()
        .flat_map(|x| b.iter().map(move |y| iou(x, y)))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AnswerStructure;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::from_corners(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn accuracy_examples() {
        let task = TaskKind::SceneClassification;
        assert_eq!(accuracy(&["forest", "Lake"], &["forest", "lake"], task).unwrap(), 1.0);
        assert_eq!(
            accuracy(&["a1", "b", "c", "d"], &["a1", "b", "x", "y"], task).unwrap(),
            0.5
        );
        let empty: [&str; 0] = [];
        assert!(matches!(accuracy(&empty, &empty, task), Err(Error::EmptyInput(_))));
        assert!(matches!(
            accuracy(&["a"], &["a", "b"], task),
            Err(Error::LengthMismatch { .. })
        ));
        let count = TaskKind::Vqa(AnswerStructure::Count);
        assert_eq!(accuracy(&["3 cars", "four"], &["3", "5"], count).unwrap(), 0.5);
        assert!(accuracy(&["x"], &["y"], TaskKind::VisualGrounding).is_err());
    }

    #[test]
    fn acc_threshold_is_closed() {
        let g = vec![vec![bx(0.0, 0.0, 2.0, 1.0)]];
        // IoU exactly 0.5
        let half = vec![vec![bx(0.0, 0.0, 1.0, 1.0)]];
        assert_eq!(acc_at_05(&half, &g).unwrap(), 1.0);
        let sixty = vec![vec![bx(0.0, 0.0, 1.2, 1.0)]];
        assert_eq!(acc_at_05(&sixty, &g).unwrap(), 1.0);
        let miss = vec![vec![bx(5.0, 5.0, 6.0, 6.0)]];
        assert_eq!(acc_at_05(&miss, &g).unwrap(), 0.0);
        assert_eq!(acc_at_05(&[vec![]], &g).unwrap(), 0.0);
    }

    #[test]
    fn rpd_examples() {
        assert_eq!((rpd(53.95, 49.35).unwrap() * 100.0).round() / 100.0, 8.53);
        assert_eq!((rpd(89.47, 86.65).unwrap() * 100.0).round() / 100.0, 3.15);
        assert_eq!(rpd(0.7, 0.7).unwrap(), 0.0);
        assert!(rpd(0.5, 0.6).unwrap() < 0.0);
        assert!(matches!(rpd(0.0, 0.1), Err(Error::DegenerateClean(_))));
    }

    #[test]
    fn mode_ties_are_lexicographic() {
        assert_eq!(mode(&["y", "x", "z"]).unwrap(), "x");
        assert_eq!(mode(&["y", "y", "x"]).unwrap(), "y");
        assert_eq!(mode(&["The Lake", "lake."]).unwrap(), "lake");
        assert!(mode::<&str>(&[]).is_none());
    }

    #[test]
    fn cca_text_examples() {
        let c = vec![vec!["x", "x", "y"]];
        let p = vec![vec!["y", "x", "x"]];
        assert_eq!(cca_text(&c, &p).unwrap(), 1.0);
        let p2 = vec![vec!["y", "y", "x"]];
        assert_eq!(cca_text(&c, &p2).unwrap(), 0.0);
        assert!(cca_text(&c, &[vec!["x"]]).is_err());
    }

    #[test]
    fn cca_vg_examples() {
        let a = vec![bx(0.0, 0.0, 1.0, 1.0)];
        let far = vec![bx(5.0, 5.0, 6.0, 6.0)];
        assert_eq!(cca_vg(&[vec![a.clone()]], &[vec![a.clone()]]).unwrap(), 1.0);
        assert_eq!(cca_vg(&[vec![a.clone()]], &[vec![far.clone()]]).unwrap(), 0.0);
        // K = 2, cross pairs {1, 0, 0, 1}
        let c = vec![vec![a.clone(), far.clone()]];
        let p = vec![vec![a.clone(), far.clone()]];
        assert_eq!(cca_vg(&c, &p).unwrap(), 0.5);
        assert_eq!(pair_iou(&[], &[]), 1.0);
        assert_eq!(pair_iou(&a, &[]), 0.0);
    }

    #[test]
    fn giou_dataset_level() {
        let g = vec![vec![bx(0.0, 0.0, 2.0, 1.0)]];
        let p = vec![vec![bx(1.0, 0.0, 3.0, 1.0)]];
        assert!((mean_giou(&p, &g).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(mean_giou(&[vec![]], &g).unwrap(), 0.0);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = [1e16, 1.0, -1e16];
        assert_eq!(compensated_sum(v), 1.0);
    }

    fn rec(id: &str, target: &str, greedy: &str, samples: &[&str]) -> EvalRecord {
        EvalRecord {
            sample_id: id.into(),
            target: target.into(),
            greedy: greedy.into(),
            samples: samples.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn report_for_classification() {
        let clean = vec![
            rec("a", "forest", "forest", &["forest", "forest"]),
            rec("b", "lake", "lake", &["lake", "river"]),
        ];
        let pert = vec![
            rec("b", "lake", "river", &["river", "river"]),
            rec("a", "forest", "forest", &["forest", "desert"]),
        ];
        let r = compute_report(
            TaskKind::SceneClassification,
            CoordinateConvention::Pixel,
            &clean,
            &pert,
            2,
        )
        .unwrap();
        assert_eq!(r.m_clean, 1.0);
        assert_eq!(r.m_pert, 0.5);
        assert_eq!(r.rpd_percent, Some(50.0));
        // a: perturbed group ties forest/desert, broken toward "desert"
        assert_eq!(r.cca, 0.0);
        assert!(compute_report(
            TaskKind::SceneClassification,
            CoordinateConvention::Pixel,
            &clean,
            &pert,
            3
        )
        .is_err());
    }

    #[test]
    fn report_for_grounding() {
        let clean = vec![rec("g", "court [0,0,2,1]", "[0,0,2,1]", &["[0,0,2,1]"])];
        let pert = vec![rec("g", "court [0,0,2,1]", "[1,0,3,1]", &["[0,0,2,1]"])];
        let r = compute_report(TaskKind::VisualGrounding, CoordinateConvention::Pixel, &clean, &pert, 1).unwrap();
        assert_eq!(r.m_clean, 1.0);
        assert_eq!(r.m_pert, 0.0);
        assert_eq!(r.cca, 1.0);
        assert_eq!(r.giou_clean, Some(1.0));
        assert!((r.giou_pert.unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.rpd_percent, Some(100.0));
    }
}
