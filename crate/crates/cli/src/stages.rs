//! Stage building blocks shared by the pipeline and the subcommands.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rayon::ThreadPool;
use rs_bench_core::data::{assign_regimes_from, build_condition_set};
use rs_bench_core::hash::{hash_str, hash_words};
use rs_bench_core::image_perturb::perturb_file;
use rs_bench_core::metrics::compute_report;
use rs_bench_core::text_perturb::{
    homoglyph_perturb, ingest_rewrites, render_rewrite_job, Rejection, RewriteJob, TextRegime,
};
use rs_bench_core::{
    AnswerKind, ConditionIndex, ConditionSet, Error, EvalRecord, Manifest, MetricReport, PerturbParams, ResponseRecord,
    SampleRecord, TaskKind,
};
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assignment {
    pub sample_id: String,
    pub regime: TextRegime,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbedQuery {
    pub sample_id: String,
    pub regime: TextRegime,
    pub query: String,
}

/// One response the external model must produce.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceJob {
    pub sample_id: String,
    pub condition: ConditionIndex,
    pub draw: u32,
    pub image: PathBuf,
    pub query: String,
}

/// One greedy answer plus `samples` sampled answers for metric evaluation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalJob {
    pub sample_id: String,
    pub condition: ConditionIndex,
    pub image: PathBuf,
    pub query: String,
    pub samples: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreLine {
    pub sample_id: String,
    pub condition: ConditionIndex,
    pub draw: u32,
    pub responder: String,
    pub score: f64,
    pub structure: AnswerKind,
}

pub fn image_seed(seed: u64, sample_id: &str) -> u64 {
    hash_words(&[seed, hash_str(0, sample_id)])
}

pub fn perturbed_image_name(sample_id: &str) -> String {
    format!("{sample_id}.pert.png")
}

/// Perturbs every manifest image into `out_dir/<sample_id>.pert.png`.
pub fn perturb_images(
    manifest: &Manifest,
    strength: f64,
    seed: u64,
    out_dir: &Path,
    pool: &ThreadPool,
) -> Result<Vec<PathBuf>> {
    let base = PerturbParams::with_strength(strength, seed);
    base.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    let out: Vec<Result<PathBuf>> = pool.install(|| {
        manifest
            .samples
            .par_iter()
            .map(|s| {
                let params = PerturbParams {
                    seed: image_seed(seed, &s.sample_id),
                    ..base.clone()
                };
                let dst = out_dir.join(perturbed_image_name(&s.sample_id));
                perturb_file(&manifest.image_path(s), &dst, &params)?;
                Ok(dst)
            })
            .collect()
    });
    out.into_iter().collect()
}

pub fn assign(manifest: &Manifest, seed: u64, regimes: &[TextRegime]) -> Result<Vec<Assignment>> {
    Ok(assign_regimes_from(&manifest.samples, seed, regimes)?
        .into_iter()
        .map(|s| Assignment {
            sample_id: s.sample_id,
            regime: s.regime.expect("assigned"),
        })
        .collect())
}

fn sample<'a>(manifest: &'a Manifest, id: &str) -> Result<&'a SampleRecord> {
    manifest
        .get(id)
        .ok_or_else(|| Error::Validation {
            id: id.to_owned(),
            message: "not in the manifest".into(),
        })
        .map_err(PipelineError::from)
}

/// Rewrite jobs for every sample assigned a rewrite regime.
pub fn rewrite_jobs(manifest: &Manifest, assignments: &[Assignment]) -> Result<Vec<RewriteJob>> {
    assignments
        .iter()
        .filter(|a| a.regime != TextRegime::Homoglyph)
        .map(|a| Ok(render_rewrite_job(sample(manifest, &a.sample_id)?, a.regime)?))
        .collect()
}

/// Produces the perturbed query of every sample: homoglyph samples locally,
/// the rest from validated external rewrites.
pub fn perturb_queries(
    manifest: &Manifest,
    assignments: &[Assignment],
    jobs: &[RewriteJob],
    rewrites: Option<&Path>,
    homoglyph_rate: f64,
    seed: u64,
) -> Result<(Vec<PerturbedQuery>, Vec<Rejection>)> {
    let (accepted, rejected) = if jobs.is_empty() {
        (HashMap::new(), Vec::new())
    } else {
        let path = rewrites.ok_or_else(|| PipelineError::StageDependencyMissing {
            stage: "perturb",
            missing: PathBuf::from("<rewrites file>"),
        })?;
        if !path.exists() {
            return Err(PipelineError::StageDependencyMissing {
                stage: "perturb",
                missing: path.to_path_buf(),
            });
        }
        let report = ingest_rewrites(jobs, path)?;
        (report.accepted.into_iter().collect::<HashMap<_, _>>(), report.rejected)
    };
    let mut out = Vec::with_capacity(assignments.len());
    for a in assignments {
        let s = sample(manifest, &a.sample_id)?;
        let query = if a.regime == TextRegime::Homoglyph {
            homoglyph_perturb(&s.query, homoglyph_rate, hash_str(seed, &s.sample_id))
        } else {
            match accepted.get(&a.sample_id) {
                Some(q) => q.clone(),
                None => continue,
            }
        };
        out.push(PerturbedQuery {
            sample_id: a.sample_id.clone(),
            regime: a.regime,
            query,
        });
    }
    Ok((out, rejected))
}

/// Condition sets in manifest order.
pub fn condition_sets(manifest: &Manifest, queries: &[PerturbedQuery], image_dir: &Path) -> Result<Vec<ConditionSet>> {
    let by_id: HashMap<&str, &PerturbedQuery> = queries.iter().map(|q| (q.sample_id.as_str(), q)).collect();
    manifest
        .samples
        .iter()
        .map(|s| {
            let q = by_id
                .get(s.sample_id.as_str())
                .ok_or_else(|| Error::MissingRewrite(s.sample_id.clone()))?;
            Ok(build_condition_set(
                s,
                &manifest.image_path(s),
                &image_dir.join(perturbed_image_name(&s.sample_id)),
                &q.query,
            )?)
        })
        .collect()
}

/// Every (sample, condition, draw) with draws numbered from 1.
pub fn inference_jobs(sets: &[ConditionSet], draws: u32) -> Vec<InferenceJob> {
    let mut out = Vec::with_capacity(sets.len() * 4 * draws as usize);
    for set in sets {
        for c in set.conditions() {
            for draw in 1..=draws {
                out.push(InferenceJob {
                    sample_id: set.sample_id.clone(),
                    condition: c.index,
                    draw,
                    image: c.image.clone(),
                    query: c.query.clone(),
                });
            }
        }
    }
    out
}

/// Evaluation jobs on the clean and jointly perturbed conditions.
pub fn eval_jobs(sets: &[ConditionSet], samples: u32) -> Vec<EvalJob> {
    sets.iter()
        .flat_map(|set| {
            [set.clean(), set.joint()].map(|c| EvalJob {
                sample_id: set.sample_id.clone(),
                condition: c.index,
                image: c.image.clone(),
                query: c.query.clone(),
                samples,
            })
        })
        .collect()
}

pub fn score_responses(manifest: &Manifest, responses: &[ResponseRecord], pool: &ThreadPool) -> Result<Vec<ScoreLine>> {
    let scored: Vec<Result<ScoreLine>> = pool.install(|| {
        responses
            .par_iter()
            .map(|r| {
                let s = sample(manifest, &r.sample_id)?;
                let q = rs_bench_core::score_response(&r.text, &s.target, s.task, manifest.convention)?;
                Ok(ScoreLine {
                    sample_id: r.sample_id.clone(),
                    condition: r.condition,
                    draw: r.draw,
                    responder: r.responder.clone(),
                    score: q.value,
                    structure: q.structure,
                })
            })
            .collect()
    });
    scored.into_iter().collect()
}

/// One report per selected task that has samples, in the order given.
pub fn metric_reports(
    manifest: &Manifest,
    clean: &[EvalRecord],
    pert: &[EvalRecord],
    k: usize,
    tasks: &[TaskKind],
    strength: Option<f64>,
) -> Result<Vec<MetricReport>> {
    let task_of = |r: &EvalRecord| -> Result<TaskKind> {
        let s = sample(manifest, &r.sample_id)?;
        if s.target != r.target {
            return Err(Error::Validation {
                id: r.sample_id.clone(),
                message: "evaluation target differs from the manifest".into(),
            }
            .into());
        }
        Ok(s.task)
    };
    let mut by_task: BTreeMap<&str, (Vec<EvalRecord>, Vec<EvalRecord>)> = BTreeMap::new();
    for r in clean {
        by_task.entry(task_of(r)?.slug()).or_default().0.push(r.clone());
    }
    for r in pert {
        by_task.entry(task_of(r)?.slug()).or_default().1.push(r.clone());
    }
    let mut reports = Vec::new();
    for task in tasks {
        let Some((c, p)) = by_task.get(task.slug()) else {
            log::info!("no evaluation records for task {}", task.slug());
            continue;
        };
        let mut report = compute_report(*task, manifest.convention, c, p, k)?;
        report.strength = strength;
        reports.push(report);
    }
    Ok(reports)
}
