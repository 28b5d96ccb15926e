//! Pluggable tokenizers used for token-length statistics and the
//! token/distance boundary strategies.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("cannot read token map {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("token map {path} line {line}: expected `token<TAB>id`")]
    Malformed { path: PathBuf, line: usize },
    #[error("unknown tokenizer `{0}` (expected `whitespace` or `map:<path>`)")]
    UnknownSpec(String),
}

/// Which tokenizer to use. `map:<path>` points at a `token<TAB>id` file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TokenizerSpec {
    #[default]
    Whitespace,
    ExternalMap { path: PathBuf },
}

impl fmt::Display for TokenizerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenizerSpec::Whitespace => f.write_str("whitespace"),
            TokenizerSpec::ExternalMap { path } => write!(f, "map:{}", path.display()),
        }
    }
}

impl FromStr for TokenizerSpec {
    type Err = TokenizerError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "whitespace" {
            Ok(TokenizerSpec::Whitespace)
        } else if let Some(path) = s.strip_prefix("map:") {
            Ok(TokenizerSpec::ExternalMap { path: path.into() })
        } else {
            Err(TokenizerError::UnknownSpec(s.to_string()))
        }
    }
}

#[derive(Debug, Clone)]
enum Kind {
    Whitespace,
    Map {
        entries: HashMap<String, Vec<u32>>,
        /// Longest key, in chars.
        longest: usize,
    },
}

/// A loaded tokenizer. Cheap to share by reference across threads.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    kind: Kind,
    /// Human-readable identity recorded in dataset and stats provenance.
    description: String,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer::whitespace()
    }
}

impl Tokenizer {
    pub fn whitespace() -> Self {
        Tokenizer {
            kind: Kind::Whitespace,
            description: "whitespace".into(),
        }
    }

    pub fn load(spec: &TokenizerSpec) -> Result<Self, TokenizerError> {
        match spec {
            TokenizerSpec::Whitespace => Ok(Tokenizer::whitespace()),
            TokenizerSpec::ExternalMap { path } => Tokenizer::from_map_file(path),
        }
    }

    pub fn from_map_file(path: &Path) -> Result<Self, TokenizerError> {
        let bytes = fs::read(path).map_err(|source| TokenizerError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let text = String::from_utf8(bytes.clone()).map_err(|_| TokenizerError::Malformed {
            path: path.to_path_buf(),
            line: 0,
        })?;
        let mut entries: HashMap<String, Vec<u32>> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let malformed = || TokenizerError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
            };
            let (token, id) = line.rsplit_once('\t').ok_or_else(malformed)?;
            if token.is_empty() {
                return Err(malformed());
            }
            let id: u32 = id.trim().parse().map_err(|_| malformed())?;
            entries.entry(token.to_string()).or_default().push(id);
        }
        let digest = hex::encode(Sha256::digest(&bytes));
        Ok(Tokenizer::from_entries(entries, format!("map:{}#{}", path.display(), &digest[..16])))
    }

    /// Builds a map tokenizer from in-memory entries.
    pub fn from_entries(entries: HashMap<String, Vec<u32>>, description: impl Into<String>) -> Self {
        let longest = entries.keys().map(|k| k.chars().count()).max().unwrap_or(0);
        Tokenizer {
            kind: Kind::Map { entries, longest },
            description: description.into(),
        }
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// Splits `text` into tokens. Whitespace mode splits on whitespace runs;
    /// map mode takes the longest matching map entry at each position and
    /// otherwise emits a single character.
    pub fn tokenize<'a>(&self, text: &'a str) -> Vec<&'a str> {
        match &self.kind {
            Kind::Whitespace => text.split_whitespace().collect(),
            Kind::Map { entries, longest } => {
                let bounds: Vec<usize> = text
                    .char_indices()
                    .map(|(i, _)| i)
                    .chain(std::iter::once(text.len()))
                    .collect();
                let chars = bounds.len() - 1;
                let mut tokens = Vec::new();
                let mut at = 0;
                while at < chars {
                    let max = (*longest).min(chars - at);
                    let width = (1..=max)
                        .rev()
                        .find(|w| entries.contains_key(&text[bounds[at]..bounds[at + w]]))
                        .unwrap_or(1);
                    tokens.push(&text[bounds[at]..bounds[at + width]]);
                    at += width;
                }
                tokens
            }
        }
    }

    pub fn count(&self, text: &str) -> usize {
        match self.kind {
            Kind::Whitespace => text.split_whitespace().count(),
            _ => self.tokenize(text).len(),
        }
    }
}
