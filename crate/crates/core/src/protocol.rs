//! Wire records and line-oriented transports shared by the environment and
//! policy protocols.
//!
//! Each request and response is one JSON object on one line. Transports are
//! either a child process spoken to over its standard streams
//! (`exec:<command>`) or a TCP connection (`tcp:<host>:<port>`).

use std::fmt;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("cannot start `{command}`: {source}")]
    Spawn { command: String, source: io::Error },
    #[error("cannot connect to {addr}: {source}")]
    Connect { addr: String, source: io::Error },
    #[error("transport i/o: {0}")]
    Io(#[from] io::Error),
    #[error("peer closed the stream")]
    Closed,
    #[error("malformed response `{line}`: {reason}")]
    Malformed { line: String, reason: String },
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("bad endpoint `{0}` (expected exec:<command>, tcp:<host>:<port>, sim:<tree> or scripted:<table>)")]
pub struct EndpointError(pub String);

/// Where a backend lives. `sim:` and `scripted:` run in-process.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Endpoint {
    Exec(String),
    Tcp(String),
    Sim(PathBuf),
    Scripted(PathBuf),
}

impl FromStr for Endpoint {
    type Err = EndpointError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EndpointError(s.to_string());
        let (scheme, rest) = s.split_once(':').ok_or_else(bad)?;
        if rest.is_empty() {
            return Err(bad());
        }
        match scheme {
            "exec" => Ok(Endpoint::Exec(rest.to_string())),
            "tcp" if rest.rsplit_once(':').is_some_and(|(h, p)| !h.is_empty() && p.parse::<u16>().is_ok()) => {
                Ok(Endpoint::Tcp(rest.to_string()))
            }
            "sim" => Ok(Endpoint::Sim(rest.into())),
            "scripted" => Ok(Endpoint::Scripted(rest.into())),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for Endpoint {
    type Error = EndpointError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Endpoint> for String {
    fn from(e: Endpoint) -> String {
        e.to_string()
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Exec(c) => write!(f, "exec:{c}"),
            Endpoint::Tcp(a) => write!(f, "tcp:{a}"),
            Endpoint::Sim(p) => write!(f, "sim:{}", p.display()),
            Endpoint::Scripted(p) => write!(f, "scripted:{}", p.display()),
        }
    }
}

/// A request/response line stream to a remote peer.
pub struct LineChannel {
    reader: Box<dyn BufRead + Send>,
    writer: Option<Box<dyn Write + Send>>,
    child: Option<Child>,
}

impl LineChannel {
    pub fn new(reader: impl BufRead + Send + 'static, writer: impl Write + Send + 'static) -> Self {
        LineChannel {
            reader: Box::new(reader),
            writer: Some(Box::new(writer)),
            child: None,
        }
    }

    /// Opens a fresh connection. Only `exec:` and `tcp:` are remote.
    pub fn connect(endpoint: &Endpoint) -> Result<Self, TransportError> {
        match endpoint {
            Endpoint::Exec(command) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(command)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|source| TransportError::Spawn {
                        command: command.clone(),
                        source,
                    })?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                let mut chan = LineChannel::new(BufReader::new(stdout), BufWriter::new(stdin));
                chan.child = Some(child);
                Ok(chan)
            }
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(|source| TransportError::Connect {
                    addr: addr.clone(),
                    source,
                })?;
                stream.set_nodelay(true).ok();
                let read = stream.try_clone()?;
                Ok(LineChannel::new(BufReader::new(read), BufWriter::new(stream)))
            }
            other => Err(TransportError::Connect {
                addr: other.to_string(),
                source: io::Error::new(io::ErrorKind::Unsupported, "in-process endpoint has no transport"),
            }),
        }
    }

    /// Sends one line and waits for one line back.
    pub fn call_raw(&mut self, request: &str) -> Result<String, TransportError> {
        let writer = self.writer.as_mut().ok_or(TransportError::Closed)?;
        writer.write_all(request.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(TransportError::Closed);
        }
        while line.ends_with('\n') || line.ends_with('\r') {
            line.pop();
        }
        Ok(line)
    }

    pub fn call<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &mut self,
        request: &Req,
    ) -> Result<Resp, TransportError> {
        let line = self.call_raw(&serde_json::to_string(request).expect("requests serialize"))?;
        serde_json::from_str(&line).map_err(|e| TransportError::Malformed {
            reason: e.to_string(),
            line,
        })
    }
}

impl Drop for LineChannel {
    fn drop(&mut self) {
        // Closing stdin lets well-behaved servers exit on EOF.
        self.writer.take();
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Reads request lines until EOF, answering each through `handle`.
pub fn serve_lines<R: BufRead, W: Write>(
    reader: R,
    mut writer: W,
    mut handle: impl FnMut(&str) -> String,
) -> io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = handle(&line);
        writer.write_all(reply.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Proved,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EnvRequest {
    Init { theorem_id: String, statement: String },
    Run { state_ref: u64, tactic: String },
    Close,
}

/// Result of executing a request against a proof environment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvResponse {
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_ref: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretty: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl EnvResponse {
    pub fn ok(state_ref: u64, pretty: impl Into<String>) -> Self {
        EnvResponse {
            status: Status::Ok,
            state_ref: Some(state_ref),
            pretty: Some(pretty.into()),
            message: None,
        }
    }

    pub fn proved(pretty: impl Into<String>) -> Self {
        EnvResponse {
            status: Status::Proved,
            state_ref: None,
            pretty: Some(pretty.into()),
            message: None,
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        EnvResponse {
            status: Status::Error,
            state_ref: None,
            pretty: None,
            message: Some(message.into()),
        }
    }

    /// Acknowledgement of a `close` request.
    pub fn closed() -> Self {
        EnvResponse {
            status: Status::Ok,
            state_ref: None,
            pretty: None,
            message: None,
        }
    }

    /// Checks the per-status field requirements of an `init`/`run` reply.
    pub fn validate(&self) -> Result<(), String> {
        match self.status {
            Status::Ok if self.state_ref.is_none() || self.pretty.is_none() => {
                Err("ok response lacks state_ref or pretty".into())
            }
            Status::Error if self.message.is_none() => Err("error response lacks message".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum PolicyRequest {
    Generate {
        prompt: String,
        num_candidates: usize,
        max_tokens: usize,
        #[serde(default)]
        extensions: serde_json::Map<String, serde_json::Value>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireCandidate {
    pub text: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_count: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyResponse {
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<WireCandidate>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}
