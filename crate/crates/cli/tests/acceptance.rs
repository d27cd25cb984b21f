//! Acceptance criteria. Each prints one PASS/FAIL line; the process exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rs_bench::config::{ResponderMode, RunConfig};
use rs_bench::pipeline::{run_pipeline, RunPaths, Stage};
use rs_bench::runlog::RunLog;
use rs_bench::stages::{Assignment, EvalJob, InferenceJob, PerturbedQuery, ScoreLine};
use rs_bench_core::data::{load_condition_sets, load_manifest, load_responses};
use rs_bench_core::dpo::{check_gradients, dpo_loss, DpoConfig, DpoInstance};
use rs_bench_core::image_perturb::{cloud_mask, perturb_image, Field, PerturbParams, RgbImage};
use rs_bench_core::metrics::{cca_text, cca_vg, rpd};
use rs_bench_core::preference::{summary_path, CorpusStats, DEFAULT_MIN_GAP};
use rs_bench_core::scoring::{iou, matched_iou_total, score_count, CountValue};
use rs_bench_core::synth::write_mini_dataset;
use rs_bench_core::text_perturb::{homoglyph_of, homoglyph_perturb, homoglyph_restore, Rejection, RewriteJob};
use rs_bench_core::{jsonl, BoundingBox, ConditionIndex, EvalRecord, MetricReport, PreferenceTriplet};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

/// (clean, perturbed, reported degradation in percent), two decimals each.
const RPD_ROWS: [(f64, f64, f64); 19] = [
    // scene classification
    (48.13, 43.40, 9.83),
    (68.23, 63.33, 7.18),
    (65.43, 39.28, 39.97),
    (65.37, 54.63, 16.42),
    (75.13, 70.73, 5.86),
    // visual question answering
    (62.32, 48.69, 21.87),
    (71.38, 58.34, 18.26),
    (80.98, 48.97, 39.53),
    (62.76, 54.47, 13.21),
    (68.68, 53.37, 22.30),
    (92.84, 79.96, 13.87),
    (89.47, 86.65, 3.15),
    // grounding, Acc@0.5
    (55.20, 45.55, 17.48),
    (53.95, 49.35, 8.53),
    (25.15, 7.35, 70.78),
    (33.30, 18.20, 45.35),
    (36.85, 27.75, 24.69),
    (31.65, 27.60, 12.80),
    (68.50, 64.40, 5.99),
];

fn rpd_golden() -> Outcome {
    for (c, p, want) in RPD_ROWS {
        let got = rpd(c, p).map_err(|e| e.to_string())?;
        let rounded = (got * 100.0).round() / 100.0;
        ensure!(
            (rounded - want).abs() <= 0.01 + 1e-9,
            "rpd({c}, {p}) = {got:.4}, expected {want}"
        );
    }
    Ok(format!("{} rows within 0.01", RPD_ROWS.len()))
}

fn random_box(rng: &mut StdRng) -> BoundingBox {
    let (x, y) = (rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0));
    let (w, h) = (rng.gen_range(1.0..40.0), rng.gen_range(1.0..40.0));
    BoundingBox::from_corners(x, y, x + w, y + h).unwrap()
}

/// Exhaustive optimum over injective matchings, summed in reference order.
fn brute_force_total(g: &[BoundingBox], p: &[BoundingBox]) -> f64 {
    fn go(i: usize, g: &[BoundingBox], p: &[BoundingBox], used: &mut [bool], acc: f64, best: &mut f64) {
        if i == g.len() {
            *best = best.max(acc);
            return;
        }
        if g.len() - i > used.iter().filter(|u| !**u).count() {
            go(i + 1, g, p, used, acc, best);
        }
        for j in 0..p.len() {
            if !used[j] {
                used[j] = true;
                go(i + 1, g, p, used, acc + iou(&g[i], &p[j]), best);
                used[j] = false;
            }
        }
    }
    let mut best = 0.0;
    go(0, g, p, &mut vec![false; p.len()], 0.0, &mut best);
    best
}

fn hungarian_vs_brute_force() -> Outcome {
    let mut rng = StdRng::seed_from_u64(7);
    for case in 0..500 {
        let g: Vec<_> = (0..rng.gen_range(1..=6)).map(|_| random_box(&mut rng)).collect();
        let p: Vec<_> = (0..rng.gen_range(0..=6)).map(|_| random_box(&mut rng)).collect();
        let (h, b) = (matched_iou_total(&g, &p), brute_force_total(&g, &p));
        ensure!(h == b, "case {case}: hungarian {h} != brute force {b}");
    }
    Ok("500 random box-set pairs match exactly".into())
}

/// exp(-0.3) to 40 digits.
const EXP_MINUS_0_3: f64 = 0.7408182206817178660668737793178168721823;
/// ln 2 to 40 digits.
#[allow(clippy::approx_constant)]
const LN_2: f64 = 0.6931471805599453094172321214581765680755;

fn count_score() -> Outcome {
    let s = |p, g| {
        score_count(CountValue::Value(p), CountValue::Value(g))
            .map(|q| q.value)
            .map_err(|e| e.to_string())
    };
    ensure!(s(10, 10)? == 1.0, "(10, 10) != 1");
    ensure!(s(16, 10)? == 0.0, "(16, 10) != 0");
    ensure!(s(3, 0)? == 0.0, "(3, 0) != 0");
    let v = s(11, 10)?;
    ensure!((v - EXP_MINUS_0_3).abs() <= 1e-9, "(11, 10) = {v}");
    Ok(format!("(11, 10) = {v:.15}"))
}

fn dpo_properties() -> Outcome {
    let cfg = DpoConfig::default();
    let zero = DpoInstance {
        logp_policy_w: -3.0,
        logp_policy_l: -5.0,
        logp_ref_w: -3.0,
        logp_ref_l: -5.0,
    };
    let plain = DpoConfig { rpo_alpha: 0.0, ..cfg };
    let at_zero = dpo_loss(&zero, &plain).loss;
    ensure!((at_zero - LN_2).abs() <= 1e-12, "loss at zero margin = {at_zero}");
    let mut rng = StdRng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let inst = DpoInstance {
            logp_policy_w: rng.gen_range(-40.0..-1e-3),
            logp_policy_l: rng.gen_range(-40.0..-1e-3),
            logp_ref_w: rng.gen_range(-40.0..-1e-3),
            logp_ref_l: rng.gen_range(-40.0..-1e-3),
        };
        let check = check_gradients(&inst, &cfg);
        ensure!(
            check.passed,
            "instance {i}: relative error {:e} ({inst:?})",
            check.max_relative_error
        );
        worst = worst.max(check.max_relative_error);
        let c = rng.gen_range(-5.0..5.0);
        let shifted = DpoInstance {
            logp_policy_w: inst.logp_policy_w + c,
            logp_policy_l: inst.logp_policy_l + c,
            logp_ref_w: inst.logp_ref_w + c,
            logp_ref_l: inst.logp_ref_l + c,
        };
        let (a, b) = (dpo_loss(&inst, &cfg).base_loss, dpo_loss(&shifted, &cfg).base_loss);
        ensure!(
            (a - b).abs() <= 1e-12,
            "instance {i}: shift by {c} moved the loss {a} -> {b}"
        );
    }
    Ok(format!(
        "ln 2 at zero margin; 1000 gradient checks, worst relative error {worst:.2e}"
    ))
}

const GRID: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

fn image_fixtures() -> Vec<(&'static str, RgbImage)> {
    let checker = RgbImage::from_fn(64, 64, |x, y| {
        if (x / 8 + y / 8) % 2 == 0 {
            [0.9, 0.85, 0.8]
        } else {
            [0.1, 0.15, 0.2]
        }
    });
    let gradient = RgbImage::from_fn(96, 72, |x, y| {
        let (fx, fy) = (x as f32 / 95.0, y as f32 / 71.0);
        [fx, 1.0 - fx, 0.5 * (fx + fy)]
    });
    let textured = RgbImage::from_fn(80, 80, |x, y| {
        let v = ((x as f32 * 0.7).sin() * (y as f32 * 0.45).cos() + 1.0) * 0.4;
        [0.1 + v, 0.15 + 0.9 * v, 0.05 + 0.8 * v]
    });
    vec![
        ("checkerboard", checker.unwrap()),
        ("gradient", gradient.unwrap()),
        ("textured", textured.unwrap()),
    ]
}

fn power_spectrum(f: &Field) -> Vec<Vec<f64>> {
    let (w, h) = (f.width, f.height);
    let mean = f.data.iter().sum::<f64>() / f.data.len() as f64;
    let tau = 2.0 * std::f64::consts::PI;
    let mut rows = vec![vec![(0.0f64, 0.0f64); w]; h];
    for (y, row) in rows.iter_mut().enumerate() {
        for (u, cell) in row.iter_mut().enumerate() {
            for x in 0..w {
                let a = -tau * (u * x) as f64 / w as f64;
                let v = f.at(x, y) - mean;
                cell.0 += v * a.cos();
                cell.1 += v * a.sin();
            }
        }
    }
    let mut power = vec![vec![0.0; w]; h];
    for u in 0..w {
        for (v, prow) in power.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for (y, row) in rows.iter().enumerate() {
                let a = -tau * (v * y) as f64 / h as f64;
                let (r, i) = row[u];
                re += r * a.cos() - i * a.sin();
                im += r * a.sin() + i * a.cos();
            }
            prow[u] = re * re + im * im;
        }
    }
    power
}

fn image_properties() -> Outcome {
    for (name, img) in image_fixtures() {
        let id = perturb_image(&img, &PerturbParams::with_strength(0.0, 3)).map_err(|e| e.to_string())?;
        ensure!(id.data() == img.data(), "{name}: s=0 is not the identity");
        let p = PerturbParams::with_strength(0.45, 11);
        let a = perturb_image(&img, &p).map_err(|e| e.to_string())?;
        let b = perturb_image(&img, &p).map_err(|e| e.to_string())?;
        ensure!(a.data() == b.data(), "{name}: repeat runs differ");
        let (mut last_b, mut last_sd) = (f64::NEG_INFINITY, [f64::INFINITY; 3]);
        for s in GRID {
            let out = perturb_image(&img, &PerturbParams::with_strength(s, 5)).map_err(|e| e.to_string())?;
            let (br, sd) = (out.mean_brightness(), out.channel_stds());
            ensure!(br >= last_b - 1e-12, "{name}: brightness fell at s={s}");
            for c in 0..3 {
                ensure!(sd[c] <= last_sd[c] + 1e-12, "{name}: std of channel {c} rose at s={s}");
            }
            (last_b, last_sd) = (br, sd);
        }
    }
    for seed in [0u64, 1, 42] {
        let mask = cloud_mask(64, 64, &PerturbParams::with_strength(0.5, seed));
        let power = power_spectrum(&mask);
        let (w, h) = (mask.width, mask.height);
        let mut bins = Vec::with_capacity(w * h);
        for (v, row) in power.iter().enumerate() {
            for (u, &pw) in row.iter().enumerate() {
                if u == 0 && v == 0 {
                    continue;
                }
                let fu = u.min(w - u) as f64 / w as f64;
                let fv = v.min(h - v) as f64 / h as f64;
                bins.push(((fu * fu + fv * fv).sqrt(), pw));
            }
        }
        bins.sort_by(|a, b| a.0.total_cmp(&b.0));
        let q = bins.len() / 4;
        let low: f64 = bins[..q].iter().map(|b| b.1).sum();
        let high: f64 = bins[bins.len() - q..].iter().map(|b| b.1).sum();
        ensure!(
            low > 10.0 * high,
            "mask seed {seed}: low-frequency power {low} vs high {high}"
        );
    }
    Ok("3 fixtures: identity, determinism, monotone over 11 strengths; 3 masks low-frequency".into())
}

const TEXT_CHARS: &[char] = &[
    'a', 'b', 'c', 'e', 'h', 'i', 'k', 'm', 'o', 'p', 'r', 's', 't', 'x', 'y', 'z', 'A', 'B', 'C', 'E', 'H', 'K', 'M',
    'O', 'P', 'T', 'X', 'Y', '0', '7', ' ', ',', '.', '?', '!', '-', 'é', 'ü',
];

fn homoglyph_properties() -> Outcome {
    let mut rng = StdRng::seed_from_u64(13);
    for i in 0..1000 {
        let len = rng.gen_range(0..60);
        let text: String = (0..len)
            .map(|_| TEXT_CHARS[rng.gen_range(0..TEXT_CHARS.len())])
            .collect();
        let rate = rng.gen_range(0.0..=1.0);
        let seed = rng.gen();
        let pert = homoglyph_perturb(&text, rate, seed);
        ensure!(
            homoglyph_restore(&pert) == text,
            "string {i} does not round-trip: {text:?}"
        );
        ensure!(
            homoglyph_perturb(&text, 0.0, seed) == text,
            "string {i}: rate 0 changed the text"
        );
        let full = homoglyph_perturb(&text, 1.0, seed);
        ensure!(
            full.chars().count() == text.chars().count(),
            "string {i}: length changed"
        );
        for (o, f) in text.chars().zip(full.chars()) {
            ensure!(
                f == homoglyph_of(o).unwrap_or(o),
                "string {i}: {o:?} became {f:?} at rate 1"
            );
        }
    }
    Ok("1000 random strings round-trip; rate 0 identity; rate 1 substitutes every mappable char".into())
}

fn scripted_config(data: &Path, out: &Path) -> RunConfig {
    RunConfig {
        manifest: data.join("manifest.jsonl"),
        out_dir: out.to_path_buf(),
        rewrites: Some(data.join("rewrites.jsonl")),
        responder: ResponderMode::Scripted,
        ..RunConfig::default()
    }
}

fn corpus_structure() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    let manifest = write_mini_dataset(&data).map_err(|e| e.to_string())?;
    let out = tmp.path().join("run");
    let cfg = scripted_config(&data, &out);
    ensure!(cfg.draws == 4, "draws = {}", cfg.draws);
    run_pipeline(&cfg, Stage::All).map_err(|e| e.to_string())?;
    let paths = RunPaths { root: out.clone() };
    let first = std::fs::read(paths.corpus()).map_err(|e| e.to_string())?;
    let triplets: Vec<PreferenceTriplet> = jsonl::read(&paths.corpus()).map_err(|e| e.to_string())?;
    let stats: CorpusStats =
        serde_json::from_slice(&std::fs::read(summary_path(&paths.corpus())).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    ensure!(stats.clusters == manifest.samples.len(), "clusters {}", stats.clusters);
    ensure!(
        triplets.len() == 2 * stats.emitted_clusters,
        "{} triplets for {} clusters",
        triplets.len(),
        stats.emitted_clusters
    );
    ensure!(
        stats.emitted_clusters + stats.skipped() == stats.clusters,
        "cluster accounting does not add up"
    );
    for pair in triplets.chunks(2) {
        let (a, b) = (&pair[0], &pair[1]);
        ensure!(
            a.sample_id == b.sample_id,
            "triplets of {} and {} interleave",
            a.sample_id,
            b.sample_id
        );
        ensure!(
            a.condition_index == ConditionIndex::CLEAN && b.condition_index == ConditionIndex::JOINT,
            "{}: conditions {} and {}",
            a.sample_id,
            a.condition_index.get(),
            b.condition_index.get()
        );
        ensure!(
            a.chosen == b.chosen && a.rejected == b.rejected,
            "{}: pair differs across conditions",
            a.sample_id
        );
        for t in pair {
            ensure!(
                t.chosen_score >= t.rejected_score + DEFAULT_MIN_GAP,
                "{}: gap {} below {DEFAULT_MIN_GAP}",
                t.sample_id,
                t.chosen_score - t.rejected_score
            );
        }
    }
    std::fs::remove_dir_all(&out).map_err(|e| e.to_string())?;
    run_pipeline(&cfg, Stage::All).map_err(|e| e.to_string())?;
    let second = std::fs::read(paths.corpus()).map_err(|e| e.to_string())?;
    ensure!(first == second, "repeat run produced a different corpus");
    Ok(format!(
        "{} triplets from {} of {} clusters; repeat run byte-identical",
        triplets.len(),
        stats.emitted_clusters,
        stats.clusters
    ))
}

fn cca_sanity() -> Outcome {
    let err = |e: rs_bench_core::Error| e.to_string();
    let same = vec![vec!["forest", "forest", "lake"], vec!["yes", "no", "no"]];
    ensure!(cca_text(&same, &same).map_err(err)? == 1.0, "identical text groups");
    let other = vec![vec!["urban", "urban", "beach"], vec!["yes", "yes", "maybe"]];
    ensure!(cca_text(&same, &other).map_err(err)? == 0.0, "disagreeing text groups");
    let bx = |x: f64| BoundingBox::from_corners(x, x, x + 10.0, x + 10.0).unwrap();
    let boxes = vec![
        vec![vec![bx(0.0)], vec![bx(0.0)]],
        vec![vec![bx(20.0), bx(50.0)], vec![bx(20.0), bx(50.0)]],
    ];
    ensure!(cca_vg(&boxes, &boxes).map_err(err)? == 1.0, "identical box groups");
    let far = vec![vec![vec![bx(200.0)], vec![bx(300.0)]], vec![vec![bx(400.0)], vec![]]];
    ensure!(cca_vg(&boxes, &far).map_err(err)? == 0.0, "disjoint box groups");

    let mut rng = StdRng::seed_from_u64(17);
    let words = ["forest", "lake", "urban", "yes", "no", "3"];
    for i in 0..200 {
        let (n, k) = (rng.gen_range(1..5), rng.gen_range(1..6));
        let mut text_group = || -> Vec<Vec<&str>> {
            (0..n)
                .map(|_| (0..k).map(|_| words[rng.gen_range(0..words.len())]).collect())
                .collect()
        };
        let (a, b) = (text_group(), text_group());
        ensure!(
            cca_text(&a, &b).map_err(err)? == cca_text(&b, &a).map_err(err)?,
            "text pair {i} not symmetric"
        );
        let mut box_group = || -> Vec<Vec<Vec<BoundingBox>>> {
            (0..n)
                .map(|_| {
                    (0..k)
                        .map(|_| (0..rng.gen_range(0..3)).map(|_| random_box(&mut rng)).collect())
                        .collect()
                })
                .collect()
        };
        let (a, b) = (box_group(), box_group());
        let (ab, ba) = (cca_vg(&a, &b).map_err(err)?, cca_vg(&b, &a).map_err(err)?);
        ensure!((ab - ba).abs() <= 1e-12, "box pair {i} not symmetric: {ab} vs {ba}");
    }
    Ok("identical 1, disagreeing 0, 200 random pairs symmetric".into())
}

fn parse_all<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, String> {
    jsonl::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    let out = tmp.path().join("run");
    let started = Instant::now();
    let manifest = write_mini_dataset(&data).map_err(|e| e.to_string())?;
    let cfg = scripted_config(&data, &out);
    let log = run_pipeline(&cfg, Stage::All).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let n = manifest.samples.len();
    let paths = RunPaths { root: out.clone() };

    let reloaded = load_manifest(&data.join("manifest.jsonl")).map_err(|e| e.to_string())?;
    ensure!(reloaded.samples.len() == n, "manifest reload");
    let assignments: Vec<Assignment> = parse_all(&paths.assignments())?;
    ensure!(assignments.len() == n, "assignments {}", assignments.len());
    let _: Vec<RewriteJob> = parse_all(&paths.rewrite_jobs())?;
    let rejections: Vec<Rejection> = parse_all(&paths.rejections())?;
    ensure!(rejections.is_empty(), "{} rewrites rejected", rejections.len());
    let queries: Vec<PerturbedQuery> = parse_all(&paths.queries())?;
    ensure!(queries.len() == n, "queries {}", queries.len());
    let sets = load_condition_sets(&paths.conditions()).map_err(|e| e.to_string())?;
    ensure!(sets.len() == n, "condition sets {}", sets.len());
    for set in &sets {
        for c in set.conditions() {
            RgbImage::load_png(&c.image).map_err(|e| e.to_string())?;
        }
    }
    let inf: Vec<InferenceJob> = parse_all(&paths.inference_jobs())?;
    ensure!(inf.len() == n * 4 * cfg.draws as usize, "inference jobs {}", inf.len());
    let ev: Vec<EvalJob> = parse_all(&paths.eval_jobs())?;
    ensure!(ev.len() == 2 * n, "eval jobs {}", ev.len());
    let responses = load_responses(&paths.responses()).map_err(|e| e.to_string())?;
    ensure!(responses.len() == inf.len(), "responses {}", responses.len());
    for f in [paths.eval_clean(), paths.eval_pert()] {
        let recs: Vec<EvalRecord> = parse_all(&f)?;
        ensure!(recs.len() == n, "{}: {} records", f.display(), recs.len());
        ensure!(
            recs.iter().all(|r| r.samples.len() == cfg.consistency_samples as usize),
            "{}: wrong sample count",
            f.display()
        );
    }
    let scores: Vec<ScoreLine> = parse_all(&paths.scores())?;
    ensure!(scores.len() == responses.len(), "scores {}", scores.len());
    ensure!(
        scores.iter().all(|s| (0.0..=1.0).contains(&s.score)),
        "score outside [0, 1]"
    );
    let triplets: Vec<PreferenceTriplet> = parse_all(&paths.corpus())?;
    ensure!(!triplets.is_empty(), "empty corpus");
    let summary = std::fs::read(paths.metrics_dir().join("summary.json")).map_err(|e| e.to_string())?;
    let reports: Vec<MetricReport> = serde_json::from_slice(&summary).map_err(|e| e.to_string())?;
    ensure!(reports.len() == cfg.tasks.len(), "{} metric reports", reports.len());
    for r in &reports {
        let single: MetricReport = serde_json::from_slice(
            &std::fs::read(paths.metrics_dir().join(format!("{}.json", r.task))).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
        ensure!(&single == r, "{}: per-task report differs from summary", r.task);
        for v in [r.m_clean, r.m_pert, r.cca] {
            ensure!((0.0..=1.0).contains(&v), "{}: metric {v} outside [0, 1]", r.task);
        }
    }
    let logged: RunLog =
        serde_json::from_slice(&std::fs::read(out.join(rs_bench::runlog::RUN_LOG_FILE)).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    ensure!(logged == log, "run log on disk differs");
    for s in Stage::SEQUENCE {
        ensure!(log.stages.contains_key(s.name()), "stage {s} missing from run log");
    }
    ensure!(elapsed < Duration::from_secs(60), "pipeline took {elapsed:?}");
    Ok(format!(
        "{n} samples through 7 stages in {:.2}s; every artifact re-parsed",
        elapsed.as_secs_f64()
    ))
}

struct Criterion {
    name: &'static str,
    limit: Option<Duration>,
    check: fn() -> Outcome,
}

fn main() {
    let secs = |s| Some(Duration::from_secs(s));
    let criteria = [
        Criterion {
            name: "rpd-golden",
            limit: secs(1),
            check: rpd_golden,
        },
        Criterion {
            name: "hungarian-brute-force",
            limit: secs(10),
            check: hungarian_vs_brute_force,
        },
        Criterion {
            name: "count-score",
            limit: secs(1),
            check: count_score,
        },
        Criterion {
            name: "dpo-loss",
            limit: secs(5),
            check: dpo_properties,
        },
        Criterion {
            name: "image-perturbation",
            limit: secs(30),
            check: image_properties,
        },
        Criterion {
            name: "homoglyph-round-trip",
            limit: secs(2),
            check: homoglyph_properties,
        },
        Criterion {
            name: "preference-corpus",
            limit: secs(30),
            check: corpus_structure,
        },
        Criterion {
            name: "cca-sanity",
            limit: secs(5),
            check: cca_sanity,
        },
        Criterion {
            name: "end-to-end",
            limit: secs(60),
            check: end_to_end,
        },
    ];
    let mut failed = 0;
    for c in &criteria {
        let t = Instant::now();
        let mut outcome = (c.check)();
        let took = t.elapsed();
        if let (Ok(_), Some(limit)) = (&outcome, c.limit) {
            if took > limit {
                outcome = Err(format!("took {took:?}, limit {limit:?}"));
            }
        }
        match outcome {
            Ok(detail) => println!("PASS {:<22} {:>9.3}s  {detail}", c.name, took.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL {:<22} {:>9.3}s  {why}", c.name, took.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
