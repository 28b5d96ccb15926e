//! Proof-environment sessions.
//!
//! A session is scoped to one theorem: `init` yields state ref `0`, and every
//! successful `run` yields a fresh ref. Any earlier ref stays runnable, which
//! is what lets search branch from historical states.

use std::sync::Arc;

use thiserror::Error;

use crate::protocol::{Endpoint, EnvRequest, EnvResponse, LineChannel, Status, TransportError};
use crate::simenv::{SimError, SimSession, SimTree};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("environment broke protocol: {0}")]
    Protocol(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("endpoint {0} cannot serve as a proof environment")]
    Unsupported(String),
}

pub trait EnvSession: Send {
    fn init(&mut self, theorem_id: &str, statement: &str) -> Result<EnvResponse, EnvError>;
    fn run(&mut self, state_ref: u64, tactic: &str) -> Result<EnvResponse, EnvError>;
    fn close(&mut self) -> Result<(), EnvError>;
}

/// Opens independent sessions, one per theorem.
pub trait EnvFactory: Send + Sync {
    fn open(&self) -> Result<Box<dyn EnvSession>, EnvError>;
}

/// Session reached over the line protocol.
pub struct RemoteSession {
    channel: LineChannel,
}

impl RemoteSession {
    pub fn new(channel: LineChannel) -> Self {
        RemoteSession { channel }
    }

    fn request(&mut self, req: &EnvRequest) -> Result<EnvResponse, EnvError> {
        let resp: EnvResponse = self.channel.call(req)?;
        resp.validate().map_err(EnvError::Protocol)?;
        Ok(resp)
    }
}

impl EnvSession for RemoteSession {
    fn init(&mut self, theorem_id: &str, statement: &str) -> Result<EnvResponse, EnvError> {
        let resp = self.request(&EnvRequest::Init {
            theorem_id: theorem_id.to_string(),
            statement: statement.to_string(),
        })?;
        if resp.status == Status::Proved {
            return Err(EnvError::Protocol("init answered `proved`".into()));
        }
        Ok(resp)
    }

    fn run(&mut self, state_ref: u64, tactic: &str) -> Result<EnvResponse, EnvError> {
        self.request(&EnvRequest::Run {
            state_ref,
            tactic: tactic.to_string(),
        })
    }

    fn close(&mut self) -> Result<(), EnvError> {
        let resp: EnvResponse = self.channel.call(&EnvRequest::Close)?;
        match resp.status {
            Status::Ok => Ok(()),
            _ => Err(EnvError::Protocol(format!("close answered {:?}", resp.status))),
        }
    }
}

pub struct RemoteEnvFactory {
    endpoint: Endpoint,
}

impl RemoteEnvFactory {
    pub fn new(endpoint: Endpoint) -> Self {
        RemoteEnvFactory { endpoint }
    }
}

impl EnvFactory for RemoteEnvFactory {
    fn open(&self) -> Result<Box<dyn EnvSession>, EnvError> {
        Ok(Box::new(RemoteSession::new(LineChannel::connect(&self.endpoint)?)))
    }
}

pub struct SimEnvFactory {
    tree: Arc<SimTree>,
}

impl SimEnvFactory {
    pub fn new(tree: Arc<SimTree>) -> Self {
        SimEnvFactory { tree }
    }
}

impl EnvFactory for SimEnvFactory {
    fn open(&self) -> Result<Box<dyn EnvSession>, EnvError> {
        Ok(Box::new(SimSession::new(self.tree.clone())))
    }
}

/// Builds a factory for `sim:`, `exec:` or `tcp:` endpoints.
pub fn env_factory(endpoint: &Endpoint) -> Result<Box<dyn EnvFactory>, EnvError> {
    match endpoint {
        Endpoint::Sim(path) => Ok(Box::new(SimEnvFactory::new(Arc::new(SimTree::load(path)?)))),
        Endpoint::Exec(_) | Endpoint::Tcp(_) => Ok(Box::new(RemoteEnvFactory::new(endpoint.clone()))),
        Endpoint::Scripted(_) => Err(EnvError::Unsupported(endpoint.to_string())),
    }
}
