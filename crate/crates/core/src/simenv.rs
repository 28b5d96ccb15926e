//! Deterministic simulated proof environment over an explicit state graph.
//!
//! A tree file is JSON:
//!
//! ```json
//! {
//!   "nodes": {"n0": {"pretty": "⊢ p → p", "goal_count": 1},
//!             "n1": {"pretty": "no goals", "goal_count": 0, "proved": true}},
//!   "edges": [{"from": "n0", "tactic": "exact fun h => h", "to": "n1"}],
//!   "roots": {"id_thm": "n0"}
//! }
//! ```
//!
//! `proved` is optional and must agree with `goal_count == 0` when given.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, EnvSession};
use crate::parser::count_open_goals;
use crate::protocol::{serve_lines, EnvRequest, EnvResponse};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cannot read tree {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed tree file: {0}")]
    Malformed(String),
    #[error("node `{node}`: {problem}")]
    Invariant { node: String, problem: String },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("unknown theorem `{0}`")]
    UnknownTheorem(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub pretty: String,
    pub goal_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proved: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub from: String,
    pub tactic: String,
    pub to: String,
}

/// Serialized form of a [`SimTree`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TreeSpec {
    pub nodes: BTreeMap<String, NodeSpec>,
    pub edges: Vec<EdgeSpec>,
    pub roots: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimNode {
    pub pretty: String,
    pub goal_count: usize,
}

impl SimNode {
    pub fn proved(&self) -> bool {
        self.goal_count == 0
    }
}

/// Outcome of one simulated tactic execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimTransition {
    Advanced(String),
    Proved(String),
    Failed(String),
}

/// Validated, immutable state graph.
#[derive(Debug, Clone)]
pub struct SimTree {
    nodes: BTreeMap<String, SimNode>,
    /// from → tactic → to
    edges: BTreeMap<String, BTreeMap<String, String>>,
    roots: BTreeMap<String, String>,
}

impl SimTree {
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let spec: TreeSpec = serde_json::from_str(&text).map_err(|e| SimError::Malformed(e.to_string()))?;
        SimTree::from_spec(spec)
    }

    pub fn from_spec(spec: TreeSpec) -> Result<Self, SimError> {
        let invariant = |node: &str, problem: String| SimError::Invariant {
            node: node.to_string(),
            problem,
        };
        let mut nodes = BTreeMap::new();
        for (id, n) in spec.nodes {
            if let Some(p) = n.proved {
                if p != (n.goal_count == 0) {
                    return Err(invariant(&id, format!("proved={p} but goal_count={}", n.goal_count)));
                }
            }
            let parsed = count_open_goals(&n.pretty);
            if parsed != n.goal_count {
                return Err(invariant(
                    &id,
                    format!("declares goal_count {} but its text has {parsed} goals", n.goal_count),
                ));
            }
            nodes.insert(
                id,
                SimNode {
                    pretty: n.pretty,
                    goal_count: n.goal_count,
                },
            );
        }
        let mut edges: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for e in spec.edges {
            let from = nodes.get(&e.from).ok_or_else(|| SimError::UnknownNode(e.from.clone()))?;
            if !nodes.contains_key(&e.to) {
                return Err(SimError::UnknownNode(e.to));
            }
            if from.proved() {
                return Err(invariant(&e.from, "proved node has an outgoing edge".into()));
            }
            let tactic = e.tactic.trim_end().to_string();
            if tactic.is_empty() {
                return Err(invariant(&e.from, "edge with empty tactic".into()));
            }
            if edges.entry(e.from.clone()).or_default().insert(tactic.clone(), e.to).is_some() {
                return Err(invariant(&e.from, format!("duplicate edge for tactic `{tactic}`")));
            }
        }
        for (thm, root) in &spec.roots {
            let node = nodes.get(root).ok_or_else(|| SimError::UnknownNode(root.clone()))?;
            if node.proved() {
                return Err(invariant(root, format!("root of `{thm}` is already proved")));
            }
        }
        Ok(SimTree {
            nodes,
            edges,
            roots: spec.roots,
        })
    }

    pub fn to_spec(&self) -> TreeSpec {
        TreeSpec {
            nodes: self
                .nodes
                .iter()
                .map(|(id, n)| {
                    (
                        id.clone(),
                        NodeSpec {
                            pretty: n.pretty.clone(),
                            goal_count: n.goal_count,
                            proved: Some(n.proved()),
                        },
                    )
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .flat_map(|(from, out)| {
                    out.iter().map(move |(tactic, to)| EdgeSpec {
                        from: from.clone(),
                        tactic: tactic.clone(),
                        to: to.clone(),
                    })
                })
                .collect(),
            roots: self.roots.clone(),
        }
    }

    pub fn node(&self, id: &str) -> Option<&SimNode> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&str, &SimNode)> {
        self.nodes.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn root(&self, theorem_id: &str) -> Option<&str> {
        self.roots.get(theorem_id).map(String::as_str)
    }

    pub fn theorems(&self) -> impl Iterator<Item = &str> {
        self.roots.keys().map(String::as_str)
    }

    /// Outgoing `(tactic, target)` pairs in tactic order.
    pub fn edges_from<'a>(&'a self, id: &str) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.edges
            .get(id)
            .into_iter()
            .flat_map(|m| m.iter().map(|(t, to)| (t.as_str(), to.as_str())))
    }

    /// Executes `tactic` at `node_id`.
    pub fn step(&self, node_id: &str, tactic: &str) -> Result<SimTransition, SimError> {
        if !self.nodes.contains_key(node_id) {
            return Err(SimError::UnknownNode(node_id.to_string()));
        }
        let target = self.edges.get(node_id).and_then(|m| m.get(tactic.trim_end()));
        Ok(match target {
            None => SimTransition::Failed("unknown tactic".into()),
            Some(to) if self.nodes[to].proved() => SimTransition::Proved(to.clone()),
            Some(to) => SimTransition::Advanced(to.clone()),
        })
    }

    /// Every tactic sequence of length at most `depth_limit` that reaches a
    /// proved node from the theorem's root, in lexicographic order.
    pub fn enumerate_proofs(&self, theorem_id: &str, depth_limit: usize) -> Result<Vec<Vec<String>>, SimError> {
        let root = self
            .root(theorem_id)
            .ok_or_else(|| SimError::UnknownTheorem(theorem_id.to_string()))?;
        let mut found = Vec::new();
        let mut path = Vec::new();
        self.collect_proofs(root, depth_limit, &mut path, &mut found);
        Ok(found)
    }

    fn collect_proofs<'a>(&'a self, node: &str, budget: usize, path: &mut Vec<&'a str>, found: &mut Vec<Vec<String>>) {
        if budget == 0 {
            return;
        }
        for (tactic, to) in self.edges_from(node) {
            path.push(tactic);
            if self.nodes[to].proved() {
                found.push(path.iter().map(|s| s.to_string()).collect());
            } else {
                self.collect_proofs(to, budget - 1, path, found);
            }
            path.pop();
        }
    }
}

/// One protocol session over a [`SimTree`].
pub struct SimSession {
    tree: Arc<SimTree>,
    /// Node visited by each issued state ref.
    refs: Vec<String>,
}

impl SimSession {
    pub fn new(tree: Arc<SimTree>) -> Self {
        SimSession { tree, refs: Vec::new() }
    }

    fn respond_init(&mut self, theorem_id: &str) -> EnvResponse {
        match self.tree.root(theorem_id) {
            None => EnvResponse::error(format!("unknown theorem `{theorem_id}`")),
            Some(root) => {
                self.refs = vec![root.to_string()];
                EnvResponse::ok(0, self.tree.nodes[root].pretty.clone())
            }
        }
    }

    fn respond_run(&mut self, state_ref: u64, tactic: &str) -> EnvResponse {
        if self.refs.is_empty() {
            return EnvResponse::error("session not initialized");
        }
        let Some(node) = usize::try_from(state_ref).ok().and_then(|i| self.refs.get(i)) else {
            return EnvResponse::error(format!("unknown state_ref {state_ref}"));
        };
        match self.tree.step(node, tactic) {
            Ok(SimTransition::Advanced(to)) => {
                let pretty = self.tree.nodes[&to].pretty.clone();
                self.refs.push(to);
                EnvResponse::ok(self.refs.len() as u64 - 1, pretty)
            }
            Ok(SimTransition::Proved(to)) => EnvResponse::proved(self.tree.nodes[&to].pretty.clone()),
            Ok(SimTransition::Failed(msg)) => EnvResponse::error(msg),
            Err(e) => EnvResponse::error(e.to_string()),
        }
    }
}

impl EnvSession for SimSession {
    fn init(&mut self, theorem_id: &str, _statement: &str) -> Result<EnvResponse, EnvError> {
        Ok(self.respond_init(theorem_id))
    }

    fn run(&mut self, state_ref: u64, tactic: &str) -> Result<EnvResponse, EnvError> {
        Ok(self.respond_run(state_ref, tactic))
    }

    fn close(&mut self) -> Result<(), EnvError> {
        self.refs.clear();
        Ok(())
    }
}

/// Answers one request line on behalf of `session`.
pub fn handle_env_line(session: &mut dyn EnvSession, line: &str) -> String {
    let resp = match serde_json::from_str::<EnvRequest>(line) {
        Err(e) => EnvResponse::error(format!("malformed request: {e}")),
        Ok(EnvRequest::Init { theorem_id, statement }) => session
            .init(&theorem_id, &statement)
            .unwrap_or_else(|e| EnvResponse::error(e.to_string())),
        Ok(EnvRequest::Run { state_ref, tactic }) => session
            .run(state_ref, &tactic)
            .unwrap_or_else(|e| EnvResponse::error(e.to_string())),
        Ok(EnvRequest::Close) => match session.close() {
            Ok(()) => EnvResponse::closed(),
            Err(e) => EnvResponse::error(e.to_string()),
        },
    };
    serde_json::to_string(&resp).expect("responses serialize")
}

/// Serves one session over a byte stream until EOF.
pub fn serve_stream<R: BufRead, W: Write>(tree: Arc<SimTree>, reader: R, writer: W) -> io::Result<()> {
    let mut session = SimSession::new(tree);
    serve_lines(reader, writer, |line| handle_env_line(&mut session, line))
}

/// Accepts connections forever, one independent session per connection.
pub fn serve_tcp(tree: Arc<SimTree>, listener: TcpListener) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let tree = tree.clone();
        std::thread::spawn(move || {
            let reader = match stream.try_clone() {
                Ok(s) => BufReader::new(s),
                Err(_) => return,
            };
            let _ = serve_stream(tree, reader, BufWriter::new(stream));
        });
    }
    Ok(())
}
