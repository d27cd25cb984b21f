//! Resumable stage runner over a run directory.

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::ThreadPool;
use rs_bench_core::data::{load_condition_sets, load_manifest, load_responses};
use rs_bench_core::preference::{build_corpus, export_corpus, summary_path};
use rs_bench_core::synth::ScriptedResponder;
use rs_bench_core::text_perturb::RewriteJob;
use rs_bench_core::{jsonl, ConditionIndex, EvalRecord, Manifest, MetricReport, ResponseRecord};

use crate::config::{ResponderMode, RunConfig};
use crate::error::{PipelineError, Result};
use crate::runlog::{RunLog, StageDigests};
use crate::stages::{self, Assignment, EvalJob, InferenceJob};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    RewriteJobs,
    Perturb,
    Jobs,
    Responses,
    Score,
    Preferences,
    Metrics,
    Sweep,
    All,
}

impl Stage {
    pub const SEQUENCE: [Stage; 7] = [
        Stage::RewriteJobs,
        Stage::Perturb,
        Stage::Jobs,
        Stage::Responses,
        Stage::Score,
        Stage::Preferences,
        Stage::Metrics,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::RewriteJobs => "rewrite-jobs",
            Stage::Perturb => "perturb",
            Stage::Jobs => "jobs",
            Stage::Responses => "responses",
            Stage::Score => "score",
            Stage::Preferences => "preferences",
            Stage::Metrics => "metrics",
            Stage::Sweep => "sweep",
            Stage::All => "all",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// File layout of a run directory.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    fn at(&self, stage: Stage, file: &str) -> PathBuf {
        self.root.join(stage.name()).join(file)
    }
    pub fn assignments(&self) -> PathBuf {
        self.at(Stage::RewriteJobs, "assignments.jsonl")
    }
    pub fn rewrite_jobs(&self) -> PathBuf {
        self.at(Stage::RewriteJobs, "rewrite_jobs.jsonl")
    }
    pub fn images(&self) -> PathBuf {
        self.at(Stage::Perturb, "images")
    }
    pub fn queries(&self) -> PathBuf {
        self.at(Stage::Perturb, "queries.jsonl")
    }
    pub fn rejections(&self) -> PathBuf {
        self.at(Stage::Perturb, "rejections.jsonl")
    }
    pub fn conditions(&self) -> PathBuf {
        self.at(Stage::Perturb, "conditions.jsonl")
    }
    pub fn inference_jobs(&self) -> PathBuf {
        self.at(Stage::Jobs, "inference_jobs.jsonl")
    }
    pub fn eval_jobs(&self) -> PathBuf {
        self.at(Stage::Jobs, "eval_jobs.jsonl")
    }
    pub fn responses(&self) -> PathBuf {
        self.at(Stage::Responses, "responses.jsonl")
    }
    pub fn eval_clean(&self) -> PathBuf {
        self.at(Stage::Responses, "eval_clean.jsonl")
    }
    pub fn eval_pert(&self) -> PathBuf {
        self.at(Stage::Responses, "eval_pert.jsonl")
    }
    pub fn scores(&self) -> PathBuf {
        self.at(Stage::Score, "scores.jsonl")
    }
    pub fn corpus(&self) -> PathBuf {
        self.at(Stage::Preferences, "dpo_corpus.jsonl")
    }
    pub fn metrics_dir(&self) -> PathBuf {
        self.root.join(Stage::Metrics.name())
    }
    pub fn sweep_dir(&self) -> PathBuf {
        self.root.join(Stage::Sweep.name())
    }
    /// Evaluation inputs for one sweep strength, e.g. `sweep/s0.45/`.
    pub fn sweep_level(&self, strength: f64) -> PathBuf {
        self.sweep_dir().join(format!("s{strength:.2}"))
    }
}

pub struct Pipeline {
    pub config: RunConfig,
    pub paths: RunPaths,
    manifest: Manifest,
    manifest_path: PathBuf,
    log: RunLog,
    pool: ThreadPool,
}

fn require(stage: Stage, path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::StageDependencyMissing {
            stage: stage.name(),
            missing: path.to_path_buf(),
        })
    }
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let manifest_path = std::path::absolute(&config.manifest).map_err(|e| rs_bench_core::Error::Io {
            path: config.manifest.clone(),
            source: e,
        })?;
        if !manifest_path.exists() {
            return Err(PipelineError::StageDependencyMissing {
                stage: "manifest",
                missing: manifest_path,
            });
        }
        let manifest = load_manifest(&manifest_path)?;
        let root = std::path::absolute(&config.out_dir).map_err(|e| rs_bench_core::Error::Io {
            path: config.out_dir.clone(),
            source: e,
        })?;
        let log = RunLog::open(&root, &config.hash())?;
        Ok(Pipeline {
            pool: crate::workers::pool()?,
            paths: RunPaths { root },
            config,
            manifest,
            manifest_path,
            log,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn run(&mut self, stage: Stage) -> Result<()> {
        match stage {
            Stage::All => {
                for s in Stage::SEQUENCE {
                    if s == Stage::Responses && self.config.responder == ResponderMode::External {
                        log::info!(
                            "external responder: expecting responses under {}",
                            self.paths.responses().display()
                        );
                        continue;
                    }
                    self.run(s)?;
                }
                Ok(())
            }
            Stage::Sweep => self.sweep(&self.config.sweep_strengths.clone()).map(|_| ()),
            s => {
                log::info!("stage {s}");
                let mut digests = StageDigests::new(&self.paths.root);
                match s {
                    Stage::RewriteJobs => self.rewrite_jobs(&mut digests)?,
                    Stage::Perturb => self.perturb(&mut digests)?,
                    Stage::Jobs => self.jobs(&mut digests)?,
                    Stage::Responses => self.responses(&mut digests)?,
                    Stage::Score => self.score(&mut digests)?,
                    Stage::Preferences => self.preferences(&mut digests)?,
                    Stage::Metrics => self.metrics(&mut digests)?,
                    Stage::Sweep | Stage::All => unreachable!(),
                }
                self.log.stages.insert(s.name().to_owned(), digests.finish());
                self.log.save(&self.paths.root)
            }
        }
    }

    fn manifest_inputs(&self, d: &mut StageDigests, with_images: bool) -> Result<()> {
        d.input(&self.manifest_path)?;
        if with_images {
            for s in &self.manifest.samples {
                d.input(&self.manifest.image_path(s))?;
            }
        }
        Ok(())
    }

    fn rewrite_jobs(&mut self, d: &mut StageDigests) -> Result<()> {
        self.manifest_inputs(d, false)?;
        let assignments = stages::assign(&self.manifest, self.config.seed, &self.config.regimes)?;
        let jobs = stages::rewrite_jobs(&self.manifest, &assignments)?;
        for (path, write) in [
            (self.paths.assignments(), jsonl::to_string(&assignments)?),
            (self.paths.rewrite_jobs(), jsonl::to_string(&jobs)?),
        ] {
            write_text(&path, &write)?;
            d.output(&path)?;
        }
        Ok(())
    }

    fn perturb(&mut self, d: &mut StageDigests) -> Result<()> {
        let (assign_path, jobs_path) = (self.paths.assignments(), self.paths.rewrite_jobs());
        require(Stage::Perturb, &assign_path)?;
        require(Stage::Perturb, &jobs_path)?;
        self.manifest_inputs(d, true)?;
        d.input(&assign_path)?;
        d.input(&jobs_path)?;
        let assignments: Vec<Assignment> = jsonl::read(&assign_path)?;
        let jobs: Vec<RewriteJob> = jsonl::read(&jobs_path)?;
        let rewrites = self.config.rewrites.clone();
        if !jobs.is_empty() {
            if let Some(r) = rewrites.as_deref().filter(|r| r.exists()) {
                d.input(r)?;
            }
        }
        let (queries, rejected) = stages::perturb_queries(
            &self.manifest,
            &assignments,
            &jobs,
            rewrites.as_deref(),
            self.config.homoglyph_rate,
            self.config.seed,
        )?;
        let rejections = self.paths.rejections();
        jsonl::write(&rejections, &rejected)?;
        d.output(&rejections)?;
        if !rejected.is_empty() {
            return Err(PipelineError::RewritesRejected {
                count: rejected.len(),
                report: rejections,
            });
        }
        let images = stages::perturb_images(
            &self.manifest,
            self.config.strength,
            self.config.seed,
            &self.paths.images(),
            &self.pool,
        )?;
        for img in &images {
            d.output(img)?;
        }
        let sets = stages::condition_sets(&self.manifest, &queries, &self.paths.images())?;
        for (path, text) in [
            (self.paths.queries(), jsonl::to_string(&queries)?),
            (self.paths.conditions(), jsonl::to_string(&sets)?),
        ] {
            write_text(&path, &text)?;
            d.output(&path)?;
        }
        Ok(())
    }

    fn jobs(&mut self, d: &mut StageDigests) -> Result<()> {
        let cond = self.paths.conditions();
        require(Stage::Jobs, &cond)?;
        d.input(&cond)?;
        let sets = load_condition_sets(&cond)?;
        let inf = stages::inference_jobs(&sets, self.config.draws);
        let ev = stages::eval_jobs(&sets, self.config.consistency_samples);
        for (path, text) in [
            (self.paths.inference_jobs(), jsonl::to_string(&inf)?),
            (self.paths.eval_jobs(), jsonl::to_string(&ev)?),
        ] {
            write_text(&path, &text)?;
            d.output(&path)?;
        }
        Ok(())
    }

    fn responses(&mut self, d: &mut StageDigests) -> Result<()> {
        if self.config.responder != ResponderMode::Scripted {
            return Err(PipelineError::Config(format!(
                "responder is external; write responses to {} and evaluation outputs to {} and {}",
                self.paths.responses().display(),
                self.paths.eval_clean().display(),
                self.paths.eval_pert().display()
            )));
        }
        let (inf_path, ev_path) = (self.paths.inference_jobs(), self.paths.eval_jobs());
        require(Stage::Responses, &inf_path)?;
        require(Stage::Responses, &ev_path)?;
        self.manifest_inputs(d, false)?;
        d.input(&inf_path)?;
        d.input(&ev_path)?;
        let inf: Vec<InferenceJob> = jsonl::read(&inf_path)?;
        let ev: Vec<EvalJob> = jsonl::read(&ev_path)?;
        let responder = ScriptedResponder::new(self.config.seed, self.config.strength);
        let sample = |id: &str| {
            self.manifest.get(id).ok_or_else(|| rs_bench_core::Error::Validation {
                id: id.to_owned(),
                message: "job for a sample outside the manifest".into(),
            })
        };
        let responses = inf
            .iter()
            .map(|j| Ok(responder.response(sample(&j.sample_id)?, j.condition, j.draw)))
            .collect::<Result<Vec<ResponseRecord>>>()?;
        let mut clean = Vec::new();
        let mut pert = Vec::new();
        for j in &ev {
            let s = sample(&j.sample_id)?;
            let rec = EvalRecord {
                sample_id: s.sample_id.clone(),
                target: s.target.clone(),
                greedy: responder.answer(s, j.condition, 0),
                samples: (1..=j.samples).map(|k| responder.answer(s, j.condition, k)).collect(),
            };
            if j.condition == ConditionIndex::CLEAN {
                clean.push(rec);
            } else {
                pert.push(rec);
            }
        }
        for (path, text) in [
            (self.paths.responses(), jsonl::to_string(&responses)?),
            (self.paths.eval_clean(), jsonl::to_string(&clean)?),
            (self.paths.eval_pert(), jsonl::to_string(&pert)?),
        ] {
            write_text(&path, &text)?;
            d.output(&path)?;
        }
        Ok(())
    }

    fn score(&mut self, d: &mut StageDigests) -> Result<()> {
        let resp = self.paths.responses();
        require(Stage::Score, &resp)?;
        self.manifest_inputs(d, false)?;
        d.input(&resp)?;
        let responses = load_responses(&resp)?;
        let scores = stages::score_responses(&self.manifest, &responses, &self.pool)?;
        let out = self.paths.scores();
        jsonl::write(&out, &scores)?;
        d.output(&out)
    }

    fn preferences(&mut self, d: &mut StageDigests) -> Result<()> {
        let (cond, resp) = (self.paths.conditions(), self.paths.responses());
        require(Stage::Preferences, &cond)?;
        require(Stage::Preferences, &resp)?;
        self.manifest_inputs(d, false)?;
        d.input(&cond)?;
        d.input(&resp)?;
        let sets = load_condition_sets(&cond)?;
        let responses = load_responses(&resp)?;
        let (triplets, stats) = build_corpus(&self.manifest, &sets, &responses, None, self.config.min_gap)?;
        log::info!(
            "{} triplets from {} of {} clusters",
            stats.triplets,
            stats.emitted_clusters,
            stats.clusters
        );
        let corpus = self.paths.corpus();
        export_corpus(&triplets, &stats, &corpus)?;
        d.output(&corpus)?;
        d.output(&summary_path(&corpus))
    }

    fn metrics(&mut self, d: &mut StageDigests) -> Result<()> {
        let (c, p) = (self.paths.eval_clean(), self.paths.eval_pert());
        require(Stage::Metrics, &c)?;
        require(Stage::Metrics, &p)?;
        self.manifest_inputs(d, false)?;
        d.input(&c)?;
        d.input(&p)?;
        let reports = stages::metric_reports(
            &self.manifest,
            &jsonl::read(&c)?,
            &jsonl::read(&p)?,
            self.config.consistency_samples as usize,
            &self.config.task_kinds()?,
            Some(self.config.strength),
        )?;
        let dir = self.paths.metrics_dir();
        for r in &reports {
            let path = dir.join(format!("{}.json", r.task));
            jsonl::write_json(&path, r)?;
            d.output(&path)?;
        }
        let summary = dir.join("summary.json");
        jsonl::write_json(&summary, &reports)?;
        d.output(&summary)
    }

    /// One report per (strength, task). Evaluation inputs are read from
    /// `sweep/s<strength>/eval_{clean,pert}.jsonl`; the scripted responder
    /// writes them first.
    pub fn sweep(&mut self, strengths: &[f64]) -> Result<Vec<MetricReport>> {
        if strengths.is_empty() {
            return Err(PipelineError::Config("sweep needs at least one strength".into()));
        }
        if let Some(s) = strengths.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(PipelineError::Config(format!("sweep strength {s} outside [0, 1]")));
        }
        let mut d = StageDigests::new(&self.paths.root);
        self.manifest_inputs(&mut d, false)?;
        let tasks = self.config.task_kinds()?;
        let k = self.config.consistency_samples;
        let mut all = Vec::new();
        for &s in strengths {
            let dir = self.paths.sweep_level(s);
            let (c, p) = (dir.join("eval_clean.jsonl"), dir.join("eval_pert.jsonl"));
            if self.config.responder == ResponderMode::Scripted {
                let r = ScriptedResponder::new(self.config.seed, s);
                jsonl::write(&c, &r.eval_records(&self.manifest.samples, ConditionIndex::CLEAN, k))?;
                jsonl::write(&p, &r.eval_records(&self.manifest.samples, ConditionIndex::JOINT, k))?;
                d.output(&c)?;
                d.output(&p)?;
            } else {
                require(Stage::Sweep, &c)?;
                require(Stage::Sweep, &p)?;
                d.input(&c)?;
                d.input(&p)?;
            }
            let reports = stages::metric_reports(
                &self.manifest,
                &jsonl::read(&c)?,
                &jsonl::read(&p)?,
                k as usize,
                &tasks,
                Some(s),
            )?;
            for r in &reports {
                let path = dir.join(format!("{}.json", r.task));
                jsonl::write_json(&path, r)?;
                d.output(&path)?;
            }
            all.extend(reports);
        }
        let table = self.paths.sweep_dir().join("table.json");
        jsonl::write_json(&table, &all)?;
        d.output(&table)?;
        let tsv = self.paths.sweep_dir().join("table.tsv");
        write_text(&tsv, &sweep_table(&all))?;
        d.output(&tsv)?;
        self.log.stages.insert(Stage::Sweep.name().to_owned(), d.finish());
        self.log.save(&self.paths.root)?;
        Ok(all)
    }
}

/// Tab-separated degradation table, one row per report.
pub fn sweep_table(reports: &[MetricReport]) -> String {
    let mut out = String::from("strength\ttask\tm_clean\tm_pert\trpd_percent\tcca\n");
    for r in reports {
        out.push_str(&format!(
            "{:.2}\t{}\t{:.6}\t{:.6}\t{}\t{:.6}\n",
            r.strength.unwrap_or(f64::NAN),
            r.task,
            r.m_clean,
            r.m_pert,
            r.rpd_percent.map_or_else(|| "NA".to_owned(), |v| format!("{v:.4}")),
            r.cca
        ));
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| rs_bench_core::Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| {
        rs_bench_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

/// Runs `stage` (or every stage) and returns the updated run log.
pub fn run_pipeline(config: &RunConfig, stage: Stage) -> Result<RunLog> {
    let mut p = Pipeline::new(config.clone())?;
    p.run(stage)?;
    Ok(p.log.clone())
}

/// Per-strength metric reports; see [`Pipeline::sweep`].
pub fn sweep_strength(config: &RunConfig, strengths: &[f64]) -> Result<Vec<MetricReport>> {
    if strengths.is_empty() {
        return Err(PipelineError::Config("sweep needs at least one strength".into()));
    }
    Pipeline::new(config.clone())?.sweep(strengths)
}
