//! Line-delimited JSON files with an optional leading provenance record.
//!
//! Every file this tool writes starts with a single line
//! `{"provenance": {...}}` naming the command, the resolved configuration
//! and its digest. Readers skip that line transparently.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path} line {line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
}

/// Header record identifying how a file was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub command: String,
    pub config_digest: String,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl Provenance {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Provenance {
            tool: concat!("proofseg ", env!("CARGO_PKG_VERSION")).to_string(),
            command: command.to_string(),
            config_digest: digest_json(&config),
            config,
            extra: Default::default(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.extra.insert(
            key.to_string(),
            serde_json::to_value(value).expect("provenance values serialize"),
        );
        self
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    provenance: Provenance,
}

/// Stable short hash of a JSON value (object keys are sorted by serde_json).
pub fn digest_json(value: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(value).expect("json values serialize");
    hex::encode(Sha256::digest(&bytes))[..16].to_string()
}

pub fn sha256_file(path: &Path) -> Result<String, JsonlError> {
    let bytes = std::fs::read(path).map_err(|source| JsonlError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn to_line<T: Serialize>(record: &T) -> String {
    serde_json::to_string(record).expect("records serialize")
}

/// Writes a provenance line followed by one record per line.
pub fn write<T: Serialize>(
    path: &Path,
    provenance: Option<&Provenance>,
    records: impl IntoIterator<Item = T>,
) -> Result<(), JsonlError> {
    let io_err = |source| JsonlError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err)?;
    }
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    if let Some(p) = provenance {
        writeln!(out, "{}", to_line(&HeaderLine { provenance: p.clone() })).map_err(io_err)?;
    }
    for r in records {
        writeln!(out, "{}", to_line(&r)).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Reads every record, returning the provenance header if one is present.
pub fn read<T: DeserializeOwned>(path: &Path) -> Result<(Option<Provenance>, Vec<T>), JsonlError> {
    let file = File::open(path).map_err(|source| JsonlError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut header = None;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| JsonlError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 && line.starts_with("{\"provenance\"") {
            if let Ok(h) = serde_json::from_str::<HeaderLine>(&line) {
                header = Some(h.provenance);
                continue;
            }
        }
        let rec = serde_json::from_str(&line).map_err(|source| JsonlError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        records.push(rec);
    }
    Ok((header, records))
}
