//! Procedurally generated mini dataset and a scripted responder whose
//! accuracy decays with perturbation, for exercising the pipeline offline.

use std::f64::consts::PI;
use std::path::Path;

use crate::data::{
    AnswerStructure, ConditionIndex, CoordinateConvention, Manifest, ResponseRecord, SampleRecord, TaskKind,
};
use crate::error::Result;
use crate::hash::{hash_str, hash_words, unit_f64};
use crate::image_perturb::RgbImage;
use crate::metrics::EvalRecord;
use crate::scoring::{extract_count, normalize, parse_boxes, CountValue};
use crate::text_perturb::{RewriteEntry, TextRegime};

pub const SCENE_LABELS: [&str; 6] = ["forest", "lake", "desert", "farmland", "urban", "beach"];
pub const MINI_DATASET_SIZE: usize = 20;

const SCENE_QUERY: &str = "Classify the scene shown in this satellite image.";

type Rgb = [f32; 3];

fn noise(seed: u64, x: usize, y: usize) -> f32 {
    unit_f64(hash_words(&[seed, x as u64, y as u64])) as f32
}

fn shade(c: Rgb, seed: u64, x: usize, y: usize, amp: f32) -> Rgb {
    let n = (noise(seed, x, y) - 0.5) * amp;
    [c[0] + n, c[1] + n, c[2] + n]
}

fn in_rect(x: usize, y: usize, r: [usize; 4]) -> bool {
    x >= r[0] && x < r[2] && y >= r[1] && y < r[3]
}

fn scene_image(label: &str, size: usize, seed: u64) -> Result<RgbImage> {
    let s = size as f64;
    RgbImage::from_fn(size, size, |x, y| {
        let (fx, fy) = (x as f64 / s, y as f64 / s);
        let c: Rgb = match label {
            "forest" => {
                let blob = ((fx * 9.0 * PI).sin() * (fy * 7.0 * PI).cos()) > 0.2;
                if blob {
                    [0.05, 0.30, 0.08]
                } else {
                    [0.15, 0.50, 0.18]
                }
            }
            "lake" => {
                let d = ((fx - 0.5).powi(2) + (fy - 0.55).powi(2)).sqrt();
                if d < 0.3 {
                    [0.10, 0.25, 0.60]
                } else {
                    [0.30, 0.55, 0.25]
                }
            }
            "desert" => {
                let dune = ((fx * 3.0 + fy * 1.5) * 2.0 * PI).sin() * 0.12;
                [0.82 + dune as f32, 0.68 + dune as f32, 0.42]
            }
            "farmland" => {
                let cell = (x * 4 / size + 3 * (y * 4 / size)) % 3;
                [[0.55, 0.70, 0.20], [0.70, 0.60, 0.30], [0.30, 0.55, 0.15]][cell]
            }
            "urban" => {
                let block = (x % 16 < 11) && (y % 16 < 11);
                if block {
                    [0.75, 0.72, 0.70]
                } else {
                    [0.25, 0.25, 0.28]
                }
            }
            _ => {
                // beach: sand, surf line, sea
                let shore = 0.45 + 0.05 * (fy * 4.0 * PI).sin();
                if fx < shore {
                    [0.90, 0.82, 0.60]
                } else if fx < shore + 0.05 {
                    [0.95, 0.95, 0.95]
                } else {
                    [0.05, 0.30, 0.55]
                }
            }
        };
        shade(c, seed, x, y, 0.08)
    })
}

fn objects_image(size: usize, seed: u64, bg: Rgb, objects: &[([usize; 4], Rgb)]) -> Result<RgbImage> {
    RgbImage::from_fn(size, size, |x, y| {
        let c = objects
            .iter()
            .rev()
            .find(|(r, _)| in_rect(x, y, *r))
            .map_or(bg, |(_, c)| *c);
        shade(c, seed, x, y, 0.06)
    })
}

fn format_box(r: [usize; 4]) -> String {
    format!("[{}, {}, {}, {}]", r[0], r[1], r[2], r[3])
}

struct Blueprint {
    record: SampleRecord,
    image: RgbImage,
}

fn record(id: &str, query: &str, target: String, task: TaskKind) -> SampleRecord {
    SampleRecord {
        sample_id: id.to_owned(),
        image: format!("images/{id}.png").into(),
        query: query.to_owned(),
        target,
        task,
        regime: None,
    }
}

fn mini_blueprints() -> Result<Vec<Blueprint>> {
    let mut out = Vec::with_capacity(MINI_DATASET_SIZE);
    let sizes = [64, 80, 96];

    for (i, label) in SCENE_LABELS.iter().enumerate() {
        let id = format!("scene-{i:02}");
        out.push(Blueprint {
            record: record(&id, SCENE_QUERY, (*label).to_owned(), TaskKind::SceneClassification),
            image: scene_image(label, sizes[i % 3], 100 + i as u64)?,
        });
    }

    let road: Rgb = [0.35, 0.35, 0.37];
    let grass: Rgb = [0.30, 0.52, 0.24];
    for (i, present) in [true, false, true, false].into_iter().enumerate() {
        let id = format!("vqa-{i:02}");
        let size = sizes[(i + 1) % 3];
        let lane = [0, size * 2 / 5, size, size * 3 / 5];
        let mut objects = vec![(lane, road)];
        if present {
            let x0 = size / 4 + 6 * i;
            objects.push(([x0, size * 2 / 5 + 3, x0 + 8, size * 2 / 5 + 8], [0.85, 0.10, 0.10]));
        } else {
            objects.push((
                [size / 2, size * 2 / 5 + 3, size / 2 + 8, size * 2 / 5 + 8],
                [0.90, 0.90, 0.92],
            ));
        }
        out.push(Blueprint {
            record: record(
                &id,
                "Is there a red vehicle on the road?",
                if present { "yes" } else { "no" }.to_owned(),
                TaskKind::Vqa(AnswerStructure::Discrete),
            ),
            image: objects_image(size, 200 + i as u64, grass, &objects)?,
        });
    }

    for (i, n) in [3usize, 5, 2].into_iter().enumerate() {
        let id = format!("count-{i:02}");
        let size = 80;
        let objects: Vec<_> = (0..n)
            .map(|k| {
                let x0 = 6 + (k % 3) * 24;
                let y0 = 8 + (k / 3) * 30;
                ([x0, y0, x0 + 14, y0 + 14], [0.20, 0.18, 0.22])
            })
            .collect();
        out.push(Blueprint {
            record: record(
                &id,
                "How many buildings are in the image?",
                n.to_string(),
                TaskKind::Vqa(AnswerStructure::Count),
            ),
            image: objects_image(size, 300 + i as u64, [0.78, 0.76, 0.70], &objects)?,
        });
    }

    let water: Rgb = [0.08, 0.25, 0.50];
    let ground: Rgb = [0.62, 0.58, 0.50];
    let grounding: [(&str, Rgb, Rgb, Vec<[usize; 4]>); 7] = [
        ("storage tank", ground, [0.92, 0.92, 0.90], vec![[10, 12, 30, 32]]),
        ("ship", water, [0.85, 0.85, 0.80], vec![[20, 30, 60, 40]]),
        ("airplane", ground, [0.95, 0.95, 0.97], vec![[40, 8, 70, 30]]),
        (
            "tennis court",
            [0.40, 0.50, 0.35],
            [0.20, 0.55, 0.45],
            vec![[16, 20, 44, 60]],
        ),
        (
            "storage tank",
            ground,
            [0.92, 0.92, 0.90],
            vec![[8, 8, 28, 28], [44, 40, 66, 62]],
        ),
        ("bridge", water, [0.55, 0.50, 0.45], vec![[0, 36, 80, 46]]),
        (
            "vehicle",
            [0.35, 0.35, 0.37],
            [0.90, 0.80, 0.10],
            vec![[12, 50, 22, 58], [50, 10, 60, 18]],
        ),
    ];
    for (i, (label, bg, fg, boxes)) in grounding.into_iter().enumerate() {
        let id = format!("ground-{i:02}");
        let size = [80, 96][i % 2];
        let objects: Vec<_> = boxes.iter().map(|b| (*b, fg)).collect();
        let target = boxes
            .iter()
            .map(|b| format!("{label} {}", format_box(*b)))
            .collect::<Vec<_>>()
            .join(" ");
        let query = if boxes.len() > 1 {
            format!("Locate every {label} in the image.")
        } else {
            format!("Locate the {label} in the image.")
        };
        out.push(Blueprint {
            record: record(&id, &query, target, TaskKind::VisualGrounding),
            image: objects_image(size, 400 + i as u64, bg, &objects)?,
        });
    }
    debug_assert_eq!(out.len(), MINI_DATASET_SIZE);
    Ok(out)
}

/// Writes `images/*.png`, `manifest.jsonl` and `rewrites.jsonl` under
/// `dir` and returns the manifest.
pub fn write_mini_dataset(dir: &Path) -> Result<Manifest> {
    let blueprints = mini_blueprints()?;
    for s in &blueprints {
        s.image.save_png(&dir.join(&s.record.image))?;
    }
    let manifest = Manifest::new(
        CoordinateConvention::Pixel,
        dir,
        blueprints.into_iter().map(|s| s.record).collect(),
    )?;
    manifest.write(&dir.join("manifest.jsonl"))?;
    let rewrites: Vec<RewriteEntry> = crate::data::assign_regimes(&manifest.samples, 0)?
        .iter()
        .map(|s| RewriteEntry {
            sample_id: s.sample_id.clone(),
            rewritten: scripted_rewrite(&s.query, s.regime.unwrap_or(TextRegime::Naturalistic)),
        })
        .collect();
    crate::jsonl::write(&dir.join("rewrites.jsonl"), &rewrites)?;
    Ok(manifest)
}

/// Canned stand-in for an external rewriter. Keeps the original query
/// verbatim so anchor phrases survive.
pub fn scripted_rewrite(query: &str, regime: TextRegime) -> String {
    let q = query.trim_end_matches(['.', '?']);
    match regime {
        TextRegime::Naturalistic => format!("Looking at this overhead picture: {q}?"),
        TextRegime::Conversational => format!("hey, quick one for you, {q}? thanks!"),
        TextRegime::ShorthandNotes => format!("img check -> {q} (short answer pls)"),
        TextRegime::Persona => format!("As a field surveyor reviewing imagery, I need this: {q}."),
        TextRegime::Homoglyph => query.to_owned(),
    }
}

/// Deterministic stand-in for a model. Each (sample, condition, draw) gets a
/// fixed uniform draw `u`; the answer is correct when `u` falls below the
/// condition's success probability, so accuracy can only fall as `strength`
/// grows.
#[derive(Clone, Debug, PartialEq)]
pub struct ScriptedResponder {
    pub name: String,
    pub seed: u64,
    /// Image perturbation strength the perturbed conditions were made with.
    pub strength: f64,
}

impl ScriptedResponder {
    pub fn new(seed: u64, strength: f64) -> Self {
        ScriptedResponder {
            name: "scripted".to_owned(),
            seed,
            strength,
        }
    }

    pub fn p_correct(&self, j: ConditionIndex) -> f64 {
        let mut p = 0.85;
        if j.image_perturbed() {
            p -= 0.6 * self.strength.clamp(0.0, 1.0);
        }
        if j.text_perturbed() {
            p -= 0.12;
        }
        p.max(0.0)
    }

    fn draw_hash(&self, sample_id: &str, j: ConditionIndex, draw: u32, salt: u64) -> u64 {
        hash_words(&[
            self.seed,
            hash_str(0, sample_id),
            u64::from(j.get()),
            u64::from(draw),
            salt,
        ])
    }

    /// Answer text for one draw; draw 0 is the greedy decode.
    pub fn answer(&self, sample: &SampleRecord, j: ConditionIndex, draw: u32) -> String {
        let u = unit_f64(self.draw_hash(&sample.sample_id, j, draw, 0));
        let correct = u < self.p_correct(j);
        let h = self.draw_hash(&sample.sample_id, j, draw, 1);
        match sample.task {
            TaskKind::SceneClassification | TaskKind::Vqa(AnswerStructure::Discrete) => {
                discrete_answer(&sample.target, correct, h)
            }
            TaskKind::Vqa(AnswerStructure::Count) => count_answer(&sample.target, correct, h),
            TaskKind::VisualGrounding => grounding_answer(&sample.target, correct, h),
        }
    }

    fn logprob(&self, sample_id: &str, j: ConditionIndex, draw: u32) -> f64 {
        -(1.0 + 24.0 * unit_f64(self.draw_hash(sample_id, j, draw, 2)))
    }

    /// `n` draws per condition for every sample, in (sample, condition, draw) order.
    pub fn responses(&self, samples: &[SampleRecord], n: u32) -> Vec<ResponseRecord> {
        let mut out = Vec::with_capacity(samples.len() * 4 * n as usize);
        for s in samples {
            for j in ConditionIndex::ALL {
                for d in 1..=n {
                    out.push(self.response(s, j, d));
                }
            }
        }
        out
    }

    pub fn response(&self, sample: &SampleRecord, j: ConditionIndex, draw: u32) -> ResponseRecord {
        ResponseRecord {
            sample_id: sample.sample_id.clone(),
            condition: j,
            draw,
            responder: self.name.clone(),
            text: self.answer(sample, j, draw),
            logprob_sum: Some(self.logprob(&sample.sample_id, j, draw)),
        }
    }

    /// Greedy answer plus `k` samples under condition `j` for each sample.
    pub fn eval_records(&self, samples: &[SampleRecord], j: ConditionIndex, k: u32) -> Vec<EvalRecord> {
        samples
            .iter()
            .map(|s| EvalRecord {
                sample_id: s.sample_id.clone(),
                target: s.target.clone(),
                greedy: self.answer(s, j, 0),
                samples: (1..=k).map(|d| self.answer(s, j, d)).collect(),
            })
            .collect()
    }
}

fn discrete_answer(target: &str, correct: bool, h: u64) -> String {
    let norm = normalize(target);
    let phrasing = h % 3;
    let label = if correct {
        norm.clone()
    } else if norm == "yes" {
        "no".to_owned()
    } else if norm == "no" {
        "yes".to_owned()
    } else {
        let others: Vec<&str> = SCENE_LABELS.iter().copied().filter(|l| *l != norm).collect();
        others[(h >> 8) as usize % others.len()].to_owned()
    };
    match phrasing {
        0 => label,
        1 => format!("{}.", capitalize(&label)),
        _ => label.to_uppercase(),
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

fn count_answer(target: &str, correct: bool, h: u64) -> String {
    let CountValue::Value(g) = extract_count(target) else {
        return "I cannot tell.".to_owned();
    };
    let p = if correct {
        g
    } else {
        match (h >> 8) % 4 {
            0 => g + 1,
            1 => g.saturating_sub(1),
            2 => g * 2 + 1,
            _ => g + 3,
        }
    };
    let p = if !correct && p == g { g + 1 } else { p };
    if h.is_multiple_of(2) {
        p.to_string()
    } else {
        format!("There are {p} buildings.")
    }
}

fn grounding_answer(target: &str, correct: bool, h: u64) -> String {
    let label = crate::scoring::box_label_segments(target)
        .first()
        .map(|s| s.trim().to_owned())
        .unwrap_or_default();
    let boxes = parse_boxes(target, CoordinateConvention::Pixel);
    let parts: Vec<String> = boxes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let hb = hash_words(&[h, i as u64]);
            let (w, ht) = (b.width(), b.height());
            // Correct: jitter under 10% of the size. Wrong: shift past one size.
            let (fx, fy) = if correct {
                (unit_f64(hb) * 0.2 - 0.1, unit_f64(hb >> 1) * 0.2 - 0.1)
            } else {
                let sx = if hb & 1 == 0 { 1.0 } else { -1.0 };
                (sx * (1.1 + unit_f64(hb >> 2) * 0.4), unit_f64(hb >> 3) * 0.4 - 0.2)
            };
            let (dx, dy) = ((fx * w).round(), (fy * ht).round());
            format!(
                "{label} [{}, {}, {}, {}]",
                b.x_min + dx,
                b.y_min + dy,
                b.x_max + dx,
                b.y_max + dy
            )
        })
        .collect();
    parts.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::score_response;

    #[test]
    fn mini_dataset_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_mini_dataset(dir.path()).unwrap();
        assert_eq!(m.samples.len(), MINI_DATASET_SIZE);
        let loaded = crate::data::load_manifest(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(loaded.samples, m.samples);
        let kinds = |k: TaskKind| m.samples.iter().filter(|s| s.task == k).count();
        assert_eq!(kinds(TaskKind::SceneClassification), 6);
        assert_eq!(kinds(TaskKind::VisualGrounding), 7);
        assert!(dir.path().join("rewrites.jsonl").exists());
    }

    #[test]
    fn correct_answers_score_high_and_wrong_ones_low() {
        let blueprints = mini_blueprints().unwrap();
        for s in blueprints.iter().map(|s| &s.record) {
            for h in 0..20u64 {
                let good = match s.task {
                    TaskKind::VisualGrounding => grounding_answer(&s.target, true, h),
                    TaskKind::Vqa(AnswerStructure::Count) => count_answer(&s.target, true, h),
                    _ => discrete_answer(&s.target, true, h),
                };
                let bad = match s.task {
                    TaskKind::VisualGrounding => grounding_answer(&s.target, false, h),
                    TaskKind::Vqa(AnswerStructure::Count) => count_answer(&s.target, false, h),
                    _ => discrete_answer(&s.target, false, h),
                };
                let sg = score_response(&good, &s.target, s.task, CoordinateConvention::Pixel).unwrap();
                let sb = score_response(&bad, &s.target, s.task, CoordinateConvention::Pixel).unwrap();
                assert!(sg.value >= 0.5, "{} {good} -> {}", s.sample_id, sg.value);
                assert!(sb.value < 1.0, "{} {bad}", s.sample_id);
                assert!(sg.value > sb.value, "{} {good} vs {bad}", s.sample_id);
            }
        }
    }

    #[test]
    fn success_probability_decreases_with_strength() {
        for j in ConditionIndex::ALL {
            let mut last = f64::INFINITY;
            for s in 0..=10 {
                let p = ScriptedResponder::new(1, s as f64 / 10.0).p_correct(j);
                assert!(p <= last);
                last = p;
            }
        }
    }

    #[test]
    fn rewrites_keep_query() {
        for r in TextRegime::REWRITE {
            let out = scripted_rewrite("Locate the ship in the image.", r);
            assert!(out.contains("Locate the ship in the image"));
            assert_ne!(out, "Locate the ship in the image.");
        }
    }
}
