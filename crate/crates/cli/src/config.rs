//! Run configuration: one JSON document per run.

use std::path::{Path, PathBuf};

use larx_core::design::ModelSpec;
use larx_core::harness::SynthParams;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Which of the model designs a config describes. The structural variants
/// are checked against the proxy counts of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    LatentX,
    LatentY,
    LatentBoth,
    ReversedBaseline,
    ReversedLatentX,
    ReversedLatentY,
    ReversedLatentBoth,
    Custom,
}

impl Variant {
    /// `(latent dependent, latent explanatory)`, or `None` for custom.
    fn shape(self) -> Option<(bool, bool)> {
        use Variant::*;
        match self {
            Baseline | ReversedBaseline => Some((false, false)),
            LatentX | ReversedLatentX => Some((false, true)),
            LatentY | ReversedLatentY => Some((true, false)),
            LatentBoth | ReversedLatentBoth => Some((true, true)),
            Custom => None,
        }
    }

    pub fn label(self) -> String {
        serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub params: SynthParams,
    #[serde(default)]
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSection {
    /// Random cases per property.
    pub cases: usize,
}

impl Default for CheckSection {
    fn default() -> Self {
        Self { cases: 25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub variant: Variant,
    /// CSV files, relative to the config file.
    #[serde(default)]
    pub data: Vec<PathBuf>,
    pub model: ModelSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default)]
    pub synth: Option<SynthSection>,
    #[serde(default)]
    pub check: CheckSection,
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config and resolves its relative paths against the config's
    /// directory, so that the resolved config can be re-run from anywhere.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = std::path::absolute(path.parent().unwrap_or(Path::new(""))).map_err(|e| CliError::io(path, e))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = normalize(&base.join(&*p));
            }
        };
        cfg.data.iter_mut().for_each(resolve);
        cfg.output_dir.iter_mut().for_each(resolve);
        Ok(cfg)
    }

    /// Checks the variant against the model's proxy counts.
    pub fn validate(&self) -> CliResult<()> {
        let Some((ly, lx)) = self.variant.shape() else {
            return Ok(());
        };
        let m = &self.model;
        let dep_latent = m.dependent.proxies.len() > 1;
        let exo_latent = m.exogenous.iter().any(|g| g.proxies.len() > 1);
        if dep_latent != ly || exo_latent != lx {
            return Err(CliError::Config(format!(
                "variant {} needs a {} dependent and {} explanatory groups",
                self.variant.label(),
                if ly { "multi-proxy" } else { "single-proxy" },
                if lx { "at least one multi-proxy" } else { "only single-proxy" },
            )));
        }
        Ok(())
    }
}

/// Drops `.` and folds `..` lexically.
fn normalize(p: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            std::path::Component::CurDir => {}
            std::path::Component::ParentDir => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}
