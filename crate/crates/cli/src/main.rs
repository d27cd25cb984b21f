use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rs_bench::config::{ResponderMode, RunConfig};
use rs_bench::error::{PipelineError, Result, EXIT_VALIDATION};
use rs_bench::pipeline::{sweep_table, Pipeline, Stage};
use rs_bench::stages;
use rs_bench_core::data::{load_condition_sets, load_manifest, load_responses};
use rs_bench_core::dpo::{batch_loss, check_gradients, dpo_loss, DpoConfig, DpoInstance};
use rs_bench_core::metrics::compute_report;
use rs_bench_core::preference::{build_corpus, export_corpus};
use rs_bench_core::synth::{write_mini_dataset, ScriptedResponder};
use rs_bench_core::text_perturb::TextRegime;
use rs_bench_core::{jsonl, ConditionIndex, CoordinateConvention, EvalRecord, TaskKind};

#[derive(Parser)]
#[command(
    name = "rs-bench",
    version,
    about = "Robustness benchmark and preference-data pipeline for remote-sensing MLLMs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one pipeline stage, or all of them, from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Stage::All)]
        stage: Stage,
        #[arg(long)]
        strength: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-strength metrics for degradation curves.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        strengths: Option<Vec<f64>>,
    },
    /// Write the synthetic mini dataset and a ready-to-run config.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Perturb every manifest image at one strength.
    PerturbImages {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.45)]
        strength: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign text regimes and export rewrite jobs; with `--rewrites`, also
    /// validate the rewrites and write the perturbed queries.
    PerturbText {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',')]
        regimes: Option<Vec<TextRegime>>,
        #[arg(long)]
        rewrites: Option<PathBuf>,
        #[arg(long, default_value_t = rs_bench_core::text_perturb::DEFAULT_HOMOGLYPH_RATE)]
        homoglyph_rate: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit inference jobs (and optionally evaluation jobs) from condition sets.
    EmitInferenceJobs {
        /// A `conditions.jsonl` file or the directory holding it.
        #[arg(long)]
        conditions: PathBuf,
        #[arg(long, default_value_t = 4)]
        n: u32,
        #[arg(long)]
        out: PathBuf,
        /// Also write evaluation jobs with K samples.
        #[arg(long)]
        eval_out: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        k: u32,
    },
    /// Answer jobs with the scripted responder.
    SimulateResponses {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.45)]
        strength: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        n: u32,
        #[arg(long, default_value_t = 5)]
        k: u32,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score responses against manifest targets.
    ScoreResponses {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the preference corpus from scored candidate pools.
    BuildPreferences {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        conditions: PathBuf,
        #[arg(long)]
        responses: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        min_gap: f64,
        #[arg(long)]
        responder: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Task metric, RPD and cross-condition agreement for one task.
    ComputeMetrics {
        #[arg(long)]
        task: TaskKind,
        #[arg(long)]
        clean: PathBuf,
        #[arg(long)]
        pert: PathBuf,
        #[arg(long, default_value_t = 5)]
        samples: usize,
        #[arg(long, value_enum, default_value_t = Convention::Pixel)]
        convention: Convention,
        #[arg(long)]
        strength: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the preference loss and verify its gradients by finite differences.
    DpoCheck {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
        #[arg(long, default_value_t = 0.1)]
        rpo_alpha: f64,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Convention {
    Pixel,
    Normalized,
}

impl From<Convention> for CoordinateConvention {
    fn from(c: Convention) -> Self {
        match c {
            Convention::Pixel => CoordinateConvention::Pixel,
            Convention::Normalized => CoordinateConvention::Normalized,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path)
}

fn dispatch(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Run {
            config,
            stage,
            strength,
            seed,
            out,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = strength {
                cfg.strength = s;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            let mut p = Pipeline::new(cfg)?;
            p.run(stage)?;
            println!(
                "run log: {}",
                p.paths.root.join(rs_bench::runlog::RUN_LOG_FILE).display()
            );
        }
        Command::Sweep { config, strengths } => {
            let cfg = load_config(&config)?;
            let strengths = strengths.unwrap_or_else(|| cfg.sweep_strengths.clone());
            let reports = Pipeline::new(cfg)?.sweep(&strengths)?;
            print!("{}", sweep_table(&reports));
        }
        Command::Synth { out } => {
            let m = write_mini_dataset(&out)?;
            let cfg = RunConfig {
                manifest: "manifest.jsonl".into(),
                out_dir: "run".into(),
                rewrites: Some("rewrites.jsonl".into()),
                responder: ResponderMode::Scripted,
                ..RunConfig::default()
            };
            let text = toml::to_string(&cfg).map_err(|e| PipelineError::Config(e.to_string()))?;
            std::fs::write(out.join("run.toml"), text).map_err(|e| rs_bench_core::Error::Io {
                path: out.join("run.toml"),
                source: e,
            })?;
            println!("wrote {} samples and run.toml to {}", m.samples.len(), out.display());
        }
        Command::PerturbImages {
            manifest,
            strength,
            seed,
            out,
        } => {
            let m = load_manifest(&manifest)?;
            let pool = rs_bench::workers::pool()?;
            let written = stages::perturb_images(&m, strength, seed, &out, &pool)?;
            println!("wrote {} perturbed images to {}", written.len(), out.display());
        }
        Command::PerturbText {
            manifest,
            seed,
            regimes,
            rewrites,
            homoglyph_rate,
            out,
        } => {
            let m = load_manifest(&manifest)?;
            let regimes = regimes.unwrap_or_else(|| TextRegime::REWRITE.to_vec());
            let assignments = stages::assign(&m, seed, &regimes)?;
            let jobs = stages::rewrite_jobs(&m, &assignments)?;
            jsonl::write(&out.join("assignments.jsonl"), &assignments)?;
            jsonl::write(&out.join("rewrite_jobs.jsonl"), &jobs)?;
            println!("{} rewrite jobs", jobs.len());
            if rewrites.is_some() || jobs.is_empty() {
                let (queries, rejected) =
                    stages::perturb_queries(&m, &assignments, &jobs, rewrites.as_deref(), homoglyph_rate, seed)?;
                jsonl::write(&out.join("queries.jsonl"), &queries)?;
                jsonl::write(&out.join("rejections.jsonl"), &rejected)?;
                println!(
                    "{} perturbed queries, {} rejected rewrites",
                    queries.len(),
                    rejected.len()
                );
                if !rejected.is_empty() {
                    return Ok(EXIT_VALIDATION as u8);
                }
            }
        }
        Command::EmitInferenceJobs {
            conditions,
            n,
            out,
            eval_out,
            k,
        } => {
            if n < 1 || k < 1 {
                return Err(PipelineError::Config("--n and --k must be >= 1".into()));
            }
            let path = if conditions.is_dir() {
                conditions.join("conditions.jsonl")
            } else {
                conditions
            };
            let sets = load_condition_sets(&path)?;
            let jobs = stages::inference_jobs(&sets, n);
            jsonl::write(&out, &jobs)?;
            println!("{} inference jobs", jobs.len());
            if let Some(e) = eval_out {
                jsonl::write(&e, &stages::eval_jobs(&sets, k))?;
            }
        }
        Command::SimulateResponses {
            manifest,
            strength,
            seed,
            n,
            k,
            out_dir,
        } => {
            let m = load_manifest(&manifest)?;
            let r = ScriptedResponder::new(seed, strength);
            jsonl::write(&out_dir.join("responses.jsonl"), &r.responses(&m.samples, n))?;
            jsonl::write(
                &out_dir.join("eval_clean.jsonl"),
                &r.eval_records(&m.samples, ConditionIndex::CLEAN, k),
            )?;
            jsonl::write(
                &out_dir.join("eval_pert.jsonl"),
                &r.eval_records(&m.samples, ConditionIndex::JOINT, k),
            )?;
            println!("wrote scripted responses to {}", out_dir.display());
        }
        Command::ScoreResponses {
            manifest,
            responses,
            out,
        } => {
            let m = load_manifest(&manifest)?;
            let rs = load_responses(&responses)?;
            let scores = stages::score_responses(&m, &rs, &rs_bench::workers::pool()?)?;
            jsonl::write(&out, &scores)?;
            println!("{} scored responses", scores.len());
        }
        Command::BuildPreferences {
            manifest,
            conditions,
            responses,
            min_gap,
            responder,
            out,
        } => {
            let m = load_manifest(&manifest)?;
            let sets = load_condition_sets(&conditions)?;
            let rs = load_responses(&responses)?;
            let (triplets, stats) = build_corpus(&m, &sets, &rs, responder.as_deref(), min_gap)?;
            let summary = export_corpus(&triplets, &stats, &out)?;
            println!(
                "{} triplets from {} clusters ({} skipped); summary in {}",
                stats.triplets,
                stats.clusters,
                stats.skipped(),
                summary.display()
            );
        }
        Command::ComputeMetrics {
            task,
            clean,
            pert,
            samples,
            convention,
            strength,
            out,
        } => {
            let c: Vec<EvalRecord> = jsonl::read(&clean)?;
            let p: Vec<EvalRecord> = jsonl::read(&pert)?;
            let mut report = compute_report(task, convention.into(), &c, &p, samples)?;
            report.strength = strength;
            jsonl::write_json(&out, &report)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).map_err(rs_bench_core::Error::from)?
            );
        }
        Command::DpoCheck {
            instances,
            beta,
            rpo_alpha,
        } => {
            let cfg = DpoConfig { beta, rpo_alpha };
            cfg.validate()?;
            let insts: Vec<DpoInstance> = jsonl::read(&instances)?;
            let mean = batch_loss(&insts, &cfg)?;
            let mut failed = 0usize;
            let mut worst = 0.0f64;
            for (i, inst) in insts.iter().enumerate() {
                let out = dpo_loss(inst, &cfg);
                let check = check_gradients(inst, &cfg);
                worst = worst.max(check.max_relative_error);
                if !check.passed {
                    failed += 1;
                }
                println!(
                    "{i}\tdelta={:.6}\tloss={:.9}\tgrad_w={:.9}\tgrad_l={:.9}\tfd_rel_err={:.2e}\t{}",
                    out.delta,
                    out.loss,
                    out.grad_w,
                    out.grad_l,
                    check.max_relative_error,
                    if check.passed { "ok" } else { "FAIL" }
                );
            }
            println!(
                "instances={} mean_loss={mean:.9} max_fd_rel_err={worst:.2e} finite_difference={}",
                insts.len(),
                if failed == 0 { "PASS" } else { "FAIL" }
            );
            if failed > 0 {
                return Ok(EXIT_VALIDATION as u8);
            }
        }
    }
    Ok(0)
}
