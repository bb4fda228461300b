//! Plain-text `key=value` configuration. Blank lines and `#` comments are
//! ignored; `STMA_SEED` in the environment overrides `seed`.

use std::path::{Path, PathBuf};

use crate::error::{Result, StmaError};
use crate::model::ModelConfig;
use crate::pipeline::PipelineConfig;

use super::losses::DEFAULT_KEEP_FRACTION;

pub const SEED_ENV: &str = "STMA_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub pipeline: PipelineConfig,
    pub keep_fraction: f64,
    /// Saved model directory; random weights from `seed` when absent.
    pub weights: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            pipeline: PipelineConfig::default(),
            keep_fraction: DEFAULT_KEEP_FRACTION,
            weights: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| StmaError::Parse(format!("{key}: cannot parse '{value}'")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| StmaError::Parse(format!("line {}: expected key=value", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.model.set(key, value)? {
            return Ok(());
        }
        let p = &mut self.pipeline;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "mode" => p.mode = value.parse()?,
            "update_objects" => p.update_objects = parse(key, value)?,
            "similarity" => p.similarity = value.parse()?,
            "m_max" => p.spatial_capacity = parse(key, value)?,
            "stride" => p.spatial_stride = parse(key, value)?,
            "t_max" => p.temporal_capacity = parse(key, value)?,
            "temporal_stride" => p.temporal_stride = parse(key, value)?,
            "keep_fraction" => self.keep_fraction = parse(key, value)?,
            "weights" => self.weights = Some(PathBuf::from(value)),
            other => return Err(StmaError::Parse(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Reads `path`, then applies the environment override.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::parse(&std::fs::read_to_string(path)?)?;
        if let Some(dir) = cfg.weights.as_mut() {
            if dir.is_relative() {
                *dir = path.parent().unwrap_or(Path::new(".")).join(&*dir);
            }
        }
        cfg.apply_env_override(std::env::var(SEED_ENV).ok().as_deref())?;
        Ok(cfg)
    }

    pub fn apply_env_override(&mut self, seed: Option<&str>) -> Result<()> {
        if let Some(s) = seed {
            self.seed = parse(SEED_ENV, s.trim())?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let p = &self.pipeline;
        let mut lines = vec![format!("seed={}", self.seed)];
        lines.extend(self.model.to_pairs().into_iter().map(|(k, v)| format!("{k}={v}")));
        lines.push(format!("mode={}", p.mode));
        lines.push(format!("update_objects={}", p.update_objects));
        lines.push(format!("similarity={}", p.similarity));
        lines.push(format!("m_max={}", p.spatial_capacity));
        lines.push(format!("stride={}", p.spatial_stride));
        lines.push(format!("t_max={}", p.temporal_capacity));
        lines.push(format!("temporal_stride={}", p.temporal_stride));
        lines.push(format!("keep_fraction={}", self.keep_fraction));
        if let Some(w) = &self.weights {
            lines.push(format!("weights={}", w.display()));
        }
        lines.join("\n") + "\n"
    }
}
