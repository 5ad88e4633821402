//! Run configuration: an optional TOML or JSON file overlaid by flags.

use std::path::{Path, PathBuf};

use irock::disparity::Tail;
use irock::load::{CovariateSpec, MissingPolicy};
use irock::tail::QuantileBackend;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Jsonl,
}

/// Every setting a command reads. Unset fields fall back to command defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub covariates: Vec<CovariateSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub missing: Option<MissingPolicy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail: Option<Tail>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub estimators: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins_constant: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_j: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend: Option<QuantileBackend>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<OutputFormat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spec: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub methods: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub are_draws: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub are_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub irock_n: Option<usize>,
}

/// A manifest wraps the resolved configuration under `config`.
#[derive(Deserialize)]
struct Wrapped {
    config: RunConfig,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str::<RunConfig>(&text)
                .or_else(|_| serde_json::from_str::<Wrapped>(&text).map(|w| w.config))
                .map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))?
        } else {
            toml::from_str::<RunConfig>(&text)
                .map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))?
        };
        if parsed.schema > SCHEMA_VERSION {
            return Err(CliError::Usage(format!(
                "config schema {} is newer than supported {SCHEMA_VERSION}",
                parsed.schema
            )));
        }
        Ok(parsed)
    }

    /// Fields set in `flags` replace those in `self`.
    pub fn overlay(mut self, flags: RunConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => {$(
                if flags.$f.is_some() {
                    self.$f = flags.$f;
                }
            )*};
        }
        macro_rules! take_vec {
            ($($f:ident),*) => {$(
                if !flags.$f.is_empty() {
                    self.$f = flags.$f;
                }
            )*};
        }
        take!(
            command,
            input,
            response,
            group,
            baseline,
            missing,
            tail,
            tau,
            delta,
            bins_constant,
            grid_j,
            backend,
            bootstrap,
            seed,
            output,
            format,
            spec,
            n,
            reps,
            sample_size,
            are_draws,
            are_dim,
            sample_n,
            irock_n
        );
        take_vec!(covariates, estimators, methods);
        self.schema = SCHEMA_VERSION;
        self
    }
}
