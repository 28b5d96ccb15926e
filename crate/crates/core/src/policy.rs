//! Candidate generation behind one interface: scripted lookup tables for
//! tests and reproducible runs, and remote generation servers reached over
//! the line protocol.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{format_prompt, state_from_prompt};
use crate::protocol::{
    serve_lines, Endpoint, LineChannel, PolicyRequest, PolicyResponse, Status, TransportError, WireCandidate,
};

pub type Extensions = serde_json::Map<String, serde_json::Value>;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("policy server error: {0}")]
    Remote(String),
    #[error("policy broke its contract: {0}")]
    Contract(String),
    #[error("no scripted candidates for state `{0}` and no default")]
    NoEntry(String),
    #[error("cannot read policy table {path}: {reason}")]
    Table { path: PathBuf, reason: String },
    #[error("endpoint {0} cannot serve as a policy")]
    Unsupported(String),
}

/// One generated candidate, sorted by descending score within a reply.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyCandidate {
    pub text: String,
    /// Log-probability; higher is better.
    pub score: f64,
    /// Output tokens attributed to this candidate (at least 1).
    pub token_count: u64,
    /// Set when the server did not report a count and it was estimated
    /// from whitespace tokens.
    pub estimated: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct GenerateRequest<'a> {
    pub prompt: &'a str,
    pub num_candidates: usize,
    pub max_tokens: usize,
    pub extensions: &'a Extensions,
}

pub trait Policy: Send {
    fn generate(&mut self, request: &GenerateRequest<'_>) -> Result<Vec<PolicyCandidate>, PolicyError>;
}

/// Hands out independent policy sessions, one per worker.
pub trait PolicyFactory: Send + Sync {
    fn open(&self) -> Result<Box<dyn Policy>, PolicyError>;
}

fn whitespace_tokens(text: &str) -> u64 {
    (text.split_whitespace().count() as u64).max(1)
}

/// Checks count, ordering and token counts; never reorders.
pub fn validate_candidates(
    wire: Vec<WireCandidate>,
    num_candidates: usize,
) -> Result<Vec<PolicyCandidate>, PolicyError> {
    if wire.len() > num_candidates {
        return Err(PolicyError::Contract(format!(
            "{} candidates returned for a request of {num_candidates}",
            wire.len()
        )));
    }
    let mut out: Vec<PolicyCandidate> = Vec::with_capacity(wire.len());
    for (i, c) in wire.into_iter().enumerate() {
        if !c.score.is_finite() {
            return Err(PolicyError::Contract(format!("candidate {i} has non-finite score")));
        }
        if let Some(prev) = out.last() {
            if c.score > prev.score {
                return Err(PolicyError::Contract(format!(
                    "candidate {i} scores {} above its predecessor's {}",
                    c.score, prev.score
                )));
            }
        }
        let (token_count, estimated) = match c.token_count {
            Some(0) => return Err(PolicyError::Contract(format!("candidate {i} reports zero tokens"))),
            Some(n) => (n, false),
            None => (whitespace_tokens(&c.text), true),
        };
        out.push(PolicyCandidate {
            text: c.text,
            score: c.score,
            token_count,
            estimated,
        });
    }
    Ok(out)
}

/// Scripted table file:
/// `{"by_state": {state: [cand...]}, "by_prompt": {prompt: [cand...]}, "default": [cand...]}`,
/// each candidate `{"text", "score", "token_count"?}`. All keys optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedTable {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_state: BTreeMap<String, Vec<WireCandidate>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_prompt: BTreeMap<String, Vec<WireCandidate>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Vec<WireCandidate>>,
}

/// Deterministic lookup-table policy.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    table: Arc<HashMap<String, Vec<PolicyCandidate>>>,
    default: Option<Arc<Vec<PolicyCandidate>>>,
}

impl ScriptedPolicy {
    pub fn from_table(table: ScriptedTable) -> Result<Self, PolicyError> {
        let check = |list: Vec<WireCandidate>| validate_candidates(list, usize::MAX);
        let mut map = HashMap::new();
        for (state, list) in table.by_state {
            map.insert(format_prompt(&state), check(list)?);
        }
        for (prompt, list) in table.by_prompt {
            map.insert(prompt, check(list)?);
        }
        let default = table.default.map(check).transpose()?.map(Arc::new);
        Ok(ScriptedPolicy {
            table: Arc::new(map),
            default,
        })
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let err = |reason: String| PolicyError::Table {
            path: path.to_path_buf(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let table: ScriptedTable = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        ScriptedPolicy::from_table(table)
    }

    fn truncate(c: &PolicyCandidate, max_tokens: usize) -> PolicyCandidate {
        let max = max_tokens as u64;
        if c.token_count <= max {
            return c.clone();
        }
        // Keep the text up to the end of its max_tokens-th whitespace token.
        let mut seen = 0;
        let mut end = 0;
        let mut in_token = false;
        for (i, ch) in c.text.char_indices() {
            if ch.is_whitespace() {
                if in_token {
                    seen += 1;
                    end = i;
                    in_token = false;
                    if seen == max_tokens {
                        break;
                    }
                }
            } else {
                in_token = true;
            }
        }
        if in_token && seen < max_tokens {
            end = c.text.len();
        }
        PolicyCandidate {
            text: c.text[..end].to_string(),
            score: c.score,
            token_count: max,
            estimated: c.estimated,
        }
    }
}

impl Policy for ScriptedPolicy {
    fn generate(&mut self, request: &GenerateRequest<'_>) -> Result<Vec<PolicyCandidate>, PolicyError> {
        let list = match self.table.get(request.prompt) {
            Some(list) => list.as_slice(),
            None => match &self.default {
                Some(d) => d.as_slice(),
                None => {
                    let state = state_from_prompt(request.prompt).unwrap_or(request.prompt);
                    return Err(PolicyError::NoEntry(state.to_string()));
                }
            },
        };
        Ok(list
            .iter()
            .take(request.num_candidates)
            .map(|c| ScriptedPolicy::truncate(c, request.max_tokens))
            .collect())
    }
}

impl PolicyFactory for ScriptedPolicy {
    fn open(&self) -> Result<Box<dyn Policy>, PolicyError> {
        Ok(Box::new(self.clone()))
    }
}

/// Policy reached over the line protocol.
pub struct RemotePolicy {
    channel: LineChannel,
}

impl RemotePolicy {
    pub fn new(channel: LineChannel) -> Self {
        RemotePolicy { channel }
    }
}

impl Policy for RemotePolicy {
    fn generate(&mut self, request: &GenerateRequest<'_>) -> Result<Vec<PolicyCandidate>, PolicyError> {
        let req = PolicyRequest::Generate {
            prompt: request.prompt.to_string(),
            num_candidates: request.num_candidates,
            max_tokens: request.max_tokens,
            extensions: request.extensions.clone(),
        };
        let resp: PolicyResponse = self.channel.call(&req)?;
        match resp.status {
            Status::Ok => {
                let cands = resp
                    .candidates
                    .ok_or_else(|| PolicyError::Contract("ok reply without candidates".into()))?;
                validate_candidates(cands, request.num_candidates)
            }
            Status::Error => Err(PolicyError::Remote(resp.message.unwrap_or_default())),
            Status::Proved => Err(PolicyError::Contract("unexpected status `proved`".into())),
        }
    }
}

pub struct RemotePolicyFactory {
    endpoint: Endpoint,
}

impl RemotePolicyFactory {
    pub fn new(endpoint: Endpoint) -> Self {
        RemotePolicyFactory { endpoint }
    }
}

impl PolicyFactory for RemotePolicyFactory {
    fn open(&self) -> Result<Box<dyn Policy>, PolicyError> {
        Ok(Box::new(RemotePolicy::new(LineChannel::connect(&self.endpoint)?)))
    }
}

pub fn policy_factory(endpoint: &Endpoint) -> Result<Box<dyn PolicyFactory>, PolicyError> {
    match endpoint {
        Endpoint::Scripted(path) => Ok(Box::new(ScriptedPolicy::load(path)?)),
        Endpoint::Exec(_) | Endpoint::Tcp(_) => Ok(Box::new(RemotePolicyFactory::new(endpoint.clone()))),
        Endpoint::Sim(_) => Err(PolicyError::Unsupported(endpoint.to_string())),
    }
}

fn to_wire(c: PolicyCandidate) -> WireCandidate {
    WireCandidate {
        text: c.text,
        score: c.score,
        token_count: (!c.estimated).then_some(c.token_count),
    }
}

/// Answers one `generate` line using `policy`.
pub fn handle_policy_line(policy: &mut dyn Policy, line: &str) -> String {
    let resp = match serde_json::from_str::<PolicyRequest>(line) {
        Err(e) => PolicyResponse {
            status: Status::Error,
            candidates: None,
            message: Some(format!("malformed request: {e}")),
        },
        Ok(PolicyRequest::Generate {
            prompt,
            num_candidates,
            max_tokens,
            extensions,
        }) => {
            let req = GenerateRequest {
                prompt: &prompt,
                num_candidates,
                max_tokens,
                extensions: &extensions,
            };
            match policy.generate(&req) {
                Ok(c) => PolicyResponse {
                    status: Status::Ok,
                    candidates: Some(c.into_iter().map(to_wire).collect()),
                    message: None,
                },
                Err(e) => PolicyResponse {
                    status: Status::Error,
                    candidates: None,
                    message: Some(e.to_string()),
                },
            }
        }
    };
    serde_json::to_string(&resp).expect("responses serialize")
}

pub fn serve_stream<R: BufRead, W: Write>(policy: &ScriptedPolicy, reader: R, writer: W) -> io::Result<()> {
    let mut session = policy.clone();
    serve_lines(reader, writer, |line| handle_policy_line(&mut session, line))
}

pub fn serve_tcp(policy: ScriptedPolicy, listener: TcpListener) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let policy = policy.clone();
        std::thread::spawn(move || {
            let Ok(read) = stream.try_clone() else { return };
            let _ = serve_stream(&policy, BufReader::new(read), BufWriter::new(stream));
        });
    }
    Ok(())
}
