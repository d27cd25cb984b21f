//! TOML run configuration.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rs_bench_core::text_perturb::{TextRegime, DEFAULT_HOMOGLYPH_RATE};
use rs_bench_core::TaskKind;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::runlog::sha256_bytes;

pub const DEFAULT_STRENGTH: f64 = 0.45;
pub const DEFAULT_CONSISTENCY_SAMPLES: u32 = 5;

/// Who answers the inference jobs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponderMode {
    /// Responses are produced outside the toolkit and dropped into the run
    /// directory.
    #[default]
    External,
    /// The built-in scripted responder.
    Scripted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub strength: f64,
    pub seed: u64,
    /// Text regimes assigned round-robin over samples.
    pub regimes: Vec<TextRegime>,
    pub homoglyph_rate: f64,
    /// `{sample_id, rewritten}` lines from the external rewriter.
    pub rewrites: Option<PathBuf>,
    /// Draws per condition for preference pools.
    pub draws: u32,
    /// Sampled outputs per condition for agreement metrics.
    pub consistency_samples: u32,
    pub min_gap: f64,
    /// Task slugs to report metrics for.
    pub tasks: Vec<String>,
    pub responder: ResponderMode,
    pub sweep_strengths: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: PathBuf::from("manifest.jsonl"),
            out_dir: PathBuf::from("run"),
            strength: DEFAULT_STRENGTH,
            seed: 0,
            regimes: TextRegime::REWRITE.to_vec(),
            homoglyph_rate: DEFAULT_HOMOGLYPH_RATE,
            rewrites: None,
            draws: rs_bench_core::preference::DEFAULT_DRAWS,
            consistency_samples: DEFAULT_CONSISTENCY_SAMPLES,
            min_gap: rs_bench_core::preference::DEFAULT_MIN_GAP,
            tasks: ["scene", "vqa", "vqa-count", "grounding"].map(String::from).to_vec(),
            responder: ResponderMode::External,
            sweep_strengths: vec![0.10, 0.45, 0.85],
        }
    }
}

impl RunConfig {
    /// Parses TOML; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let abs = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        self.manifest = abs(&self.manifest);
        self.out_dir = abs(&self.out_dir);
        self.rewrites = self.rewrites.as_deref().map(abs);
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(0.0..=1.0).contains(&self.strength) {
            return bad(format!("strength must lie in [0, 1], got {}", self.strength));
        }
        if self.draws < 1 {
            return bad("draws (N) must be >= 1".into());
        }
        if self.consistency_samples < 1 {
            return bad("consistency_samples (K) must be >= 1".into());
        }
        if !(self.min_gap >= 0.0 && self.min_gap.is_finite()) {
            return bad(format!("min_gap must be finite and >= 0, got {}", self.min_gap));
        }
        if !(0.0..=1.0).contains(&self.homoglyph_rate) {
            return bad(format!(
                "homoglyph_rate must lie in [0, 1], got {}",
                self.homoglyph_rate
            ));
        }
        if self.regimes.is_empty() {
            return bad("at least one text regime must be enabled".into());
        }
        for (i, r) in self.regimes.iter().enumerate() {
            if self.regimes[..i].contains(r) {
                return bad(format!("regime {r} listed twice"));
            }
        }
        self.task_kinds()?;
        for s in &self.sweep_strengths {
            if !(0.0..=1.0).contains(s) {
                return bad(format!("sweep strength {s} outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn task_kinds(&self) -> Result<Vec<TaskKind>> {
        self.tasks
            .iter()
            .map(|t| TaskKind::from_str(t).map_err(|e| PipelineError::Config(format!("task `{t}`: {e}"))))
            .collect()
    }

    pub fn needs_rewrites(&self) -> bool {
        self.regimes.iter().any(|r| *r != TextRegime::Homoglyph)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_bytes(&serde_json::to_vec(self).expect("config serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_resolution() {
        let cfg = RunConfig::from_toml(
            "manifest = \"data/m.jsonl\"\nout_dir = \"/tmp/out\"\n",
            Path::new("/base"),
        )
        .unwrap();
        assert_eq!(cfg.strength, 0.45);
        assert_eq!(cfg.consistency_samples, 5);
        assert_eq!(cfg.draws, 4);
        assert_eq!(cfg.min_gap, 0.05);
        assert_eq!(cfg.manifest, PathBuf::from("/base/data/m.jsonl"));
        assert_eq!(cfg.out_dir, PathBuf::from("/tmp/out"));
        assert!(cfg.needs_rewrites());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in [
            "strength = 1.5",
            "draws = 0",
            "consistency_samples = 0",
            "min_gap = -0.1",
            "regimes = []",
            "tasks = [\"bogus\"]",
            "unknown_key = 1",
            "regimes = [\"persona\", \"persona\"]",
        ] {
            let err = RunConfig::from_toml(text, Path::new(".")).unwrap_err();
            assert!(matches!(err, PipelineError::Config(_)), "{text}");
            assert_eq!(err.exit_code(), 2);
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn homoglyph_only_needs_no_rewrites() {
        let cfg = RunConfig::from_toml("regimes = [\"homoglyph\"]", Path::new(".")).unwrap();
        assert!(!cfg.needs_rewrites());
    }
}
