//! Flat key-value run configuration. Every run writes a resolved snapshot
//! beside its outputs; snapshots parse back to the identical config. Unknown
//! keys are rejected. The `TDEX_SEED` environment variable overrides the
//! config seed.

use crate::error::{Result, TdexError};
use std::fmt::Write as _;
use std::path::PathBuf;

pub const SEED_ENV_VAR: &str = "TDEX_SEED";

/// Default ablation grid: the representation variants plus the modality and
/// pretraining baselines.
pub const DEFAULT_VARIANTS: &[&str] = &[
    "tdex",
    "stacked",
    "shared",
    "raw",
    "pca",
    "sum_pooled",
    "shuffled",
    "torque",
    "image_only",
    "tactile_only",
    "task_only",
    "bc",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub task: String,
    pub play_minutes: f64,
    pub demos: usize,
    pub episodes: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub ema_tau: f64,
    pub use_predictor: bool,
    pub upscale: usize,
    pub variants: Vec<String>,
    pub fractions: Vec<f64>,
    pub reject_k: usize,
    pub w_v: f64,
    pub w_t: f64,
    pub pca_k: usize,
    pub play_threshold_m: f64,
    pub demo_threshold_m: f64,
    pub play_dir: Option<PathBuf>,
    pub demos_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            task: "grasp".into(),
            play_minutes: 3.0,
            demos: 6,
            episodes: 50,
            epochs: 12,
            batch: 64,
            lr: 1e-3,
            weight_decay: 1e-5,
            ema_tau: 0.99,
            use_predictor: true,
            upscale: 16,
            variants: DEFAULT_VARIANTS.iter().map(|s| s.to_string()).collect(),
            fractions: vec![0.0, 0.125, 0.25, 0.5, 1.0],
            reject_k: 10,
            w_v: 1.0,
            w_t: 1.0,
            pca_k: 100,
            play_threshold_m: 0.01,
            demo_threshold_m: 0.02,
            play_dir: None,
            demos_dir: None,
        }
    }
}

fn bad(key: &str, value: &str) -> TdexError {
    TdexError::InvalidArg(format!("config key `{key}`: cannot parse value `{value}`"))
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment. Starts from defaults
    /// so a snapshot or a partial override both load.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(TdexError::InvalidArg(format!(
                    "config line {}: expected `key = value`, got `{raw}`",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(TdexError::InvalidArg(format!(
                    "config key `{key}` appears twice"
                )));
            }
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        macro_rules! num {
            ($field:expr) => {
                $field = value.parse().map_err(|_| bad(key, value))?
            };
        }
        match key {
            "seed" => num!(self.seed),
            "task" => self.task = value.to_string(),
            "play_minutes" => num!(self.play_minutes),
            "demos" => num!(self.demos),
            "episodes" => num!(self.episodes),
            "epochs" => num!(self.epochs),
            "batch" => num!(self.batch),
            "lr" => num!(self.lr),
            "weight_decay" => num!(self.weight_decay),
            "ema_tau" => num!(self.ema_tau),
            "use_predictor" => num!(self.use_predictor),
            "upscale" => num!(self.upscale),
            "variants" => {
                self.variants = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect();
            }
            "fractions" => {
                self.fractions = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse().map_err(|_| bad(key, value)))
                    .collect::<Result<Vec<f64>>>()?;
            }
            "reject_k" => num!(self.reject_k),
            "w_v" => num!(self.w_v),
            "w_t" => num!(self.w_t),
            "pca_k" => num!(self.pca_k),
            "play_threshold_m" => num!(self.play_threshold_m),
            "demo_threshold_m" => num!(self.demo_threshold_m),
            "play_dir" => self.play_dir = Some(PathBuf::from(value)),
            "demos_dir" => self.demos_dir = Some(PathBuf::from(value)),
            other => {
                return Err(TdexError::InvalidArg(format!(
                    "unknown config key `{other}`"
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        crate::bench::Task::from_uri(&format!("synth:{}", self.task))?;
        if self.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(TdexError::InvalidArg(
                "fractions must lie in [0,1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.ema_tau) {
            return Err(TdexError::InvalidArg("ema_tau must lie in [0,1]".into()));
        }
        if self.variants.is_empty() {
            return Err(TdexError::InvalidArg("variants must not be empty".into()));
        }
        Ok(())
    }

    /// Applies the `TDEX_SEED` override if the variable is set.
    pub fn apply_env_override(&mut self) -> Result<()> {
        if let Ok(value) = std::env::var(SEED_ENV_VAR) {
            self.seed = value.parse().map_err(|_| {
                TdexError::InvalidArg(format!("{SEED_ENV_VAR}: cannot parse `{value}` as a seed"))
            })?;
        }
        Ok(())
    }

    /// The resolved snapshot: every key, fixed order, `parse` round-trips.
    pub fn format(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("task", self.task.clone());
        kv("play_minutes", self.play_minutes.to_string());
        kv("demos", self.demos.to_string());
        kv("episodes", self.episodes.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch", self.batch.to_string());
        kv("lr", self.lr.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("ema_tau", self.ema_tau.to_string());
        kv("use_predictor", self.use_predictor.to_string());
        kv("upscale", self.upscale.to_string());
        kv("variants", self.variants.join(","));
        kv(
            "fractions",
            self.fractions
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("reject_k", self.reject_k.to_string());
        kv("w_v", self.w_v.to_string());
        kv("w_t", self.w_t.to_string());
        kv("pca_k", self.pca_k.to_string());
        kv("play_threshold_m", self.play_threshold_m.to_string());
        kv("demo_threshold_m", self.demo_threshold_m.to_string());
        if let Some(p) = &self.play_dir {
            kv("play_dir", p.display().to_string());
        }
        if let Some(p) = &self.demos_dir {
            kv("demos_dir", p.display().to_string());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.seed = 123;
        cfg.fractions = vec![0.0, 0.125, 1.0];
        cfg.play_dir = Some(PathBuf::from("/tmp/play"));
        cfg.variants = vec!["tdex".into(), "raw".into()];
        let text = cfg.format();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_and_duplicate_keys_rejected() {
        assert!(matches!(
            RunConfig::parse("bogus_key = 3"),
            Err(TdexError::InvalidArg(_))
        ));
        assert!(RunConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(RunConfig::parse("seed = not_a_number").is_err());
    }

    #[test]
    fn comments_and_partial_overrides() {
        let cfg = RunConfig::parse("# comment\nseed = 9 # trailing\n\nepochs = 3").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.demos, RunConfig::default().demos);
    }

    #[test]
    fn env_var_overrides_seed() {
        // serialize this test against others via a unique var value
        let mut cfg = RunConfig::default();
        std::env::set_var(SEED_ENV_VAR, "424242");
        cfg.apply_env_override().unwrap();
        std::env::remove_var(SEED_ENV_VAR);
        assert_eq!(cfg.seed, 424242);

        std::env::set_var(SEED_ENV_VAR, "not-a-seed");
        let err = cfg.apply_env_override();
        std::env::remove_var(SEED_ENV_VAR);
        assert!(err.is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = RunConfig::default();
        cfg.task = "fly".into();
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.fractions = vec![1.5];
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.variants.clear();
        assert!(cfg.validate().is_err());
    }
}
