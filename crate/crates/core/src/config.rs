//! Pipeline configuration: defaults, an optional TOML file, and command-line
//! overrides, merged in that order of increasing precedence.

use std::collections::BTreeSet;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::jsonl::digest_json;
use crate::policy::Extensions;
use crate::protocol::Endpoint;
use crate::search::{ClockKind, SearchConfig, SearchMode};
use crate::tokenizer::TokenizerSpec;
use crate::types::{BoundaryStrategy, StrategyKind};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {message}")]
    Toml { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("missing required setting `{0}`")]
    Missing(&'static str),
}

/// A labelled directory of per-run result files, for reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub label: String,
    pub results_dir: PathBuf,
}

impl std::str::FromStr for MethodSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('=') {
            Some((label, dir)) if !label.is_empty() && !dir.is_empty() => Ok(MethodSpec {
                label: label.to_string(),
                results_dir: dir.into(),
            }),
            _ => Err(format!("expected LABEL=DIR, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    pub mode: SearchMode,
    pub beam: usize,
    pub max_expansions: usize,
    pub timeout_s: f64,
    pub rollout_horizon: usize,
    /// No default: generation length must be chosen explicitly.
    pub max_tokens: Option<usize>,
    pub whole_proof_attempts: usize,
    pub clock: ClockKind,
    pub extensions: Extensions,
}

impl Default for SearchSection {
    fn default() -> Self {
        SearchSection {
            mode: SearchMode::Step,
            beam: 8,
            max_expansions: 600,
            timeout_s: 1800.0,
            rollout_horizon: 5,
            max_tokens: None,
            whole_proof_attempts: 2048,
            clock: ClockKind::Wall,
            extensions: Extensions::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus_path: Option<PathBuf>,
    pub trajectory_path: Option<PathBuf>,
    pub rejection_report_path: Option<PathBuf>,
    pub dataset_path: Option<PathBuf>,
    pub theorems_path: Option<PathBuf>,
    pub results_dir: Option<PathBuf>,
    pub loss_path: Option<PathBuf>,
    pub stats_dir: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    pub methods: Vec<MethodSpec>,
    pub strategy: StrategyKind,
    pub threshold: Option<f64>,
    /// `whitespace` or `map:<path>`.
    pub tokenizer: String,
    pub search: SearchSection,
    pub env_endpoint: Option<Endpoint>,
    pub policy_endpoint: Option<Endpoint>,
    pub workers: usize,
    pub runs: usize,
    pub seed: u64,
    /// Time cutoffs in seconds for cumulative-accuracy curves.
    pub cutoffs: Vec<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus_path: None,
            trajectory_path: None,
            rejection_report_path: None,
            dataset_path: None,
            theorems_path: None,
            results_dir: None,
            loss_path: None,
            stats_dir: None,
            report_dir: None,
            methods: Vec::new(),
            strategy: StrategyKind::GoalChange,
            threshold: None,
            tokenizer: "whitespace".into(),
            search: SearchSection::default(),
            env_endpoint: None,
            policy_endpoint: None,
            workers: 1,
            runs: 5,
            seed: 0,
            cutoffs: vec![1.0, 10.0, 60.0, 300.0, 600.0, 1200.0, 1800.0],
        }
    }
}

/// Recursively overlays `overlay` onto `base`. Objects merge key by key;
/// anything else replaces. Nulls in the overlay are ignored.
pub fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (_, Value::Null) => {}
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Lexical normalization used for the path-distinctness check.
fn normalize(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push("..");
                }
            }
            other => out.push(other),
        }
    }
    out
}

impl PipelineConfig {
    /// Defaults, then the TOML file if given, then `flags`.
    pub fn resolve(file: Option<&Path>, flags: Value) -> Result<Self, ConfigError> {
        let mut merged = serde_json::to_value(PipelineConfig::default()).expect("defaults serialize");
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                path: path.to_path_buf(),
                source,
            })?;
            let table: Value = toml::from_str(&text).map_err(|e| ConfigError::Toml {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            merge(&mut merged, table);
        }
        merge(&mut merged, flags);
        let config: PipelineConfig =
            serde_json::from_value(merged).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.runs == 0 {
            return invalid("runs must be at least 1".into());
        }
        if self.workers == 0 {
            return invalid("workers must be at least 1".into());
        }
        self.boundary_strategy()?;
        self.tokenizer_spec()?;
        if self.cutoffs.iter().any(|c| c.is_nan()) || self.cutoffs.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("cutoffs must be strictly ascending".into());
        }
        let mut seen = BTreeSet::new();
        let roles = [
            &self.corpus_path,
            &self.trajectory_path,
            &self.rejection_report_path,
            &self.dataset_path,
            &self.theorems_path,
            &self.results_dir,
            &self.loss_path,
            &self.stats_dir,
            &self.report_dir,
        ]
        .into_iter()
        .flatten();
        for p in roles {
            if !seen.insert(normalize(p)) {
                return invalid(format!("path {} is used for more than one role", p.display()));
            }
        }
        // Report inputs may be the results directory `prove` writes.
        let own_results = self.results_dir.as_deref().map(normalize);
        let mut labels = BTreeSet::new();
        let mut dirs = BTreeSet::new();
        for m in &self.methods {
            if !labels.insert(&m.label) {
                return invalid(format!("duplicate method label `{}`", m.label));
            }
            let dir = normalize(&m.results_dir);
            if !dirs.insert(dir.clone()) || (seen.contains(&dir) && own_results.as_ref() != Some(&dir)) {
                return invalid(format!("path {} is used for more than one role", m.results_dir.display()));
            }
        }
        Ok(())
    }

    pub fn boundary_strategy(&self) -> Result<BoundaryStrategy, ConfigError> {
        BoundaryStrategy::from_parts(self.strategy, self.threshold).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn tokenizer_spec(&self) -> Result<TokenizerSpec, ConfigError> {
        self.tokenizer.parse().map_err(|e: crate::tokenizer::TokenizerError| ConfigError::Invalid(e.to_string()))
    }

    /// Search settings for run `run`. The run's seed (`seed + run`) is
    /// added to the policy extensions unless the config already sets one.
    pub fn search_config(&self, run: usize) -> Result<SearchConfig, ConfigError> {
        let s = &self.search;
        let mut extensions = s.extensions.clone();
        extensions
            .entry("seed")
            .or_insert_with(|| Value::from(self.seed.wrapping_add(run as u64)));
        let config = SearchConfig {
            mode: s.mode,
            beam: s.beam,
            max_expansions: s.max_expansions,
            timeout_s: s.timeout_s,
            rollout_horizon: s.rollout_horizon,
            max_tokens: s.max_tokens.ok_or(ConfigError::Missing("search.max_tokens"))?,
            whole_proof_attempts: s.whole_proof_attempts,
            extensions,
        };
        config.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(config)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Stable short hash of the resolved configuration.
    pub fn digest(&self) -> String {
        digest_json(&self.to_value())
    }
}
