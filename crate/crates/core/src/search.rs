//! Best-first proof search with atomic-step, macro-action and whole-proof
//! generation modes, plus goal-aware rollout for step-level policies.
//!
//! Frontier priority is the sum of candidate scores along the path, with
//! ties expanded in insertion order. After a step transition changes the
//! number of open goals, the engine follows the policy's top candidate for
//! up to `rollout_horizon` further steps and adds only the final state of
//! that rollout to the frontier.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::format_prompt;
use crate::env::{EnvError, EnvFactory, EnvSession};
use crate::parser::{count_open_goals, parse_proof_script};
use crate::policy::{Extensions, GenerateRequest, Policy, PolicyCandidate, PolicyError};
use crate::protocol::Status;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("invalid search config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    /// One tactic per candidate.
    Step,
    /// Candidates are tactic sequences; the longest advancing prefix is kept.
    Macro,
    /// Candidates are complete proofs, verified from scratch.
    WholeProof,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub mode: SearchMode,
    pub beam: usize,
    pub max_expansions: usize,
    pub timeout_s: f64,
    /// Goal-aware rollout horizon `H`; 0 disables rollout. Step mode only.
    pub rollout_horizon: usize,
    pub max_tokens: usize,
    pub whole_proof_attempts: usize,
    /// Passed through verbatim to the policy with every request.
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub extensions: Extensions,
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::Config(m.to_string()));
        if self.beam == 0 {
            return bad("beam must be positive");
        }
        if self.timeout_s.is_nan() || self.timeout_s <= 0.0 {
            return bad("timeout must be positive");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        if self.whole_proof_attempts == 0 {
            return bad("whole_proof_attempts must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockKind {
    /// Wall-clock time since the theorem started.
    #[default]
    Wall,
    /// Fixed charges per policy and environment call; reproducible.
    Logical,
}

/// Seconds charged per call by the logical clock.
pub const LOGICAL_POLICY_CALL_S: f64 = 0.1;
pub const LOGICAL_ENV_CALL_S: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct SearchClock {
    kind: ClockKind,
    started: Instant,
    logical: f64,
}

impl SearchClock {
    pub fn start(kind: ClockKind) -> Self {
        SearchClock {
            kind,
            started: Instant::now(),
            logical: 0.0,
        }
    }

    pub fn elapsed(&self) -> f64 {
        match self.kind {
            ClockKind::Wall => self.started.elapsed().as_secs_f64(),
            ClockKind::Logical => self.logical,
        }
    }

    fn policy_call(&mut self) {
        self.logical += LOGICAL_POLICY_CALL_S;
    }

    fn env_call(&mut self) {
        self.logical += LOGICAL_ENV_CALL_S;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchFailure {
    Budget,
    Timeout,
    Exhausted,
    EnvError,
}

/// Theorem to prove, as listed in an evaluation file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TheoremRef {
    pub theorem_id: String,
    #[serde(default)]
    pub statement: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub theorem_id: String,
    pub solved: bool,
    pub proof: Option<Vec<String>>,
    pub elapsed_s: f64,
    pub output_tokens: u64,
    pub expansions: usize,
    pub failure_kind: Option<SearchFailure>,
    /// Some candidate lacked a server-reported token count.
    pub tokens_estimated: bool,
}

/// What the engine did, in order. Recorded only when tracing is enabled.
#[derive(Debug, Clone, PartialEq)]
pub enum SearchEvent {
    Expand { node: usize, state_ref: u64, pretty: String },
    Generate { pretty: String, candidates: usize, tokens: u64, rollout: bool },
    /// A node entered the frontier.
    Push { node: usize, parent: Option<usize>, state_ref: u64, pretty: String, priority: f64, tactics: Vec<String> },
    /// A child was discarded because its state repeats an ancestor's.
    Pruned { parent: usize, pretty: String },
    RolloutStep { state_ref: u64, pretty: String, tactic: String },
    Proved { tactics: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchRun {
    pub result: SearchResult,
    pub events: Vec<SearchEvent>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SearchOptions {
    pub clock: ClockKind,
    pub trace: bool,
}

/// A live environment state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiveState {
    pub state_ref: u64,
    pub pretty: String,
    pub goal_count: usize,
}

/// Frontier entry.
#[derive(Debug, Clone)]
pub struct SearchNode {
    pub state: LiveState,
    pub priority: f64,
    parent: Option<usize>,
    /// Tactics executed on the edge from the parent.
    edge: Vec<String>,
}

/// Result of trying one candidate at a node.
#[derive(Debug, Clone, PartialEq)]
pub enum Transition {
    Failed,
    Advanced { state: LiveState, tactics: Vec<String> },
    Proved { tactics: Vec<String> },
}

enum Exec {
    Failed,
    Ok(LiveState),
    Proved,
}

#[derive(PartialEq)]
struct Ranked {
    priority: f64,
    seq: Reverse<usize>,
    node: usize,
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| self.seq.cmp(&other.seq))
    }
}

/// Blocks of `text` if it parses, else `None`.
fn blocks(text: &str) -> Option<Vec<String>> {
    parse_proof_script(text)
        .ok()
        .map(|b| b.into_iter().map(String::from).collect())
}

struct Engine<'a> {
    policy: &'a mut dyn Policy,
    env: &'a mut dyn EnvSession,
    config: &'a SearchConfig,
    clock: SearchClock,
    output_tokens: u64,
    tokens_estimated: bool,
    trace: Option<Vec<SearchEvent>>,
}

impl<'a> Engine<'a> {
    fn new(
        policy: &'a mut dyn Policy,
        env: &'a mut dyn EnvSession,
        config: &'a SearchConfig,
        options: SearchOptions,
    ) -> Self {
        Engine {
            policy,
            env,
            config,
            clock: SearchClock::start(options.clock),
            output_tokens: 0,
            tokens_estimated: false,
            trace: options.trace.then(Vec::new),
        }
    }

    fn log(&mut self, event: impl FnOnce() -> SearchEvent) {
        if let Some(t) = self.trace.as_mut() {
            t.push(event());
        }
    }

    fn timed_out(&self) -> bool {
        self.clock.elapsed() >= self.config.timeout_s
    }

    fn generate(&mut self, pretty: &str, k: usize, rollout: bool) -> Result<Vec<PolicyCandidate>, PolicyError> {
        let mut extensions = self.config.extensions.clone();
        if rollout {
            extensions.insert("rollout".into(), true.into());
        }
        let prompt = format_prompt(pretty);
        let cands = self.policy.generate(&GenerateRequest {
            prompt: &prompt,
            num_candidates: k,
            max_tokens: self.config.max_tokens,
            extensions: &extensions,
        })?;
        self.clock.policy_call();
        let tokens: u64 = cands.iter().map(|c| c.token_count).sum();
        self.output_tokens += tokens;
        self.tokens_estimated |= cands.iter().any(|c| c.estimated);
        self.log(|| SearchEvent::Generate {
            pretty: pretty.to_string(),
            candidates: cands.len(),
            tokens,
            rollout,
        });
        Ok(cands)
    }

    fn exec(&mut self, state_ref: u64, tactic: &str) -> Result<Exec, EnvError> {
        let resp = self.env.run(state_ref, tactic)?;
        self.clock.env_call();
        Ok(match resp.status {
            Status::Error => Exec::Failed,
            Status::Proved => Exec::Proved,
            Status::Ok => {
                let pretty = resp.pretty.unwrap_or_default();
                Exec::Ok(LiveState {
                    state_ref: resp.state_ref.unwrap_or_default(),
                    goal_count: count_open_goals(&pretty),
                    pretty,
                })
            }
        })
    }

    fn apply_candidate(&mut self, node: &LiveState, candidate: &PolicyCandidate) -> Result<Transition, StepError> {
        let Some(tactics) = blocks(&candidate.text) else {
            return Ok(Transition::Failed);
        };
        match self.config.mode {
            SearchMode::Step => {
                let [tactic] = tactics.as_slice() else {
                    return Ok(Transition::Failed);
                };
                match self.exec(node.state_ref, tactic)? {
                    Exec::Failed => Ok(Transition::Failed),
                    Exec::Proved => Ok(Transition::Proved { tactics: tactics.clone() }),
                    Exec::Ok(next) => {
                        if next.goal_count != node.goal_count && self.config.rollout_horizon > 0 {
                            self.goal_aware_step(tactic.clone(), next)
                        } else {
                            Ok(Transition::Advanced { state: next, tactics })
                        }
                    }
                }
            }
            SearchMode::Macro => {
                let mut at = node.state_ref;
                let mut best: Option<(LiveState, usize)> = None;
                for (i, tactic) in tactics.iter().enumerate() {
                    match self.exec(at, tactic)? {
                        Exec::Failed => break,
                        Exec::Proved => {
                            return Ok(Transition::Proved {
                                tactics: tactics[..=i].to_vec(),
                            })
                        }
                        Exec::Ok(next) => {
                            at = next.state_ref;
                            if next.pretty != node.pretty {
                                best = Some((next, i + 1));
                            }
                        }
                    }
                }
                Ok(match best {
                    Some((state, len)) => Transition::Advanced {
                        state,
                        tactics: tactics[..len].to_vec(),
                    },
                    None => Transition::Failed,
                })
            }
            SearchMode::WholeProof => {
                let mut at = node.state_ref;
                for (i, tactic) in tactics.iter().enumerate() {
                    match self.exec(at, tactic)? {
                        Exec::Proved if i + 1 == tactics.len() => return Ok(Transition::Proved { tactics }),
                        Exec::Ok(next) => at = next.state_ref,
                        _ => return Ok(Transition::Failed),
                    }
                }
                Ok(Transition::Failed)
            }
        }
    }

    /// Linear rollout from `reached`, which `tactic` produced with a change
    /// in the number of open goals.
    fn goal_aware_step(&mut self, tactic: String, reached: LiveState) -> Result<Transition, StepError> {
        let mut current = reached;
        let mut executed = vec![tactic];
        for _ in 0..self.config.rollout_horizon {
            if self.timed_out() {
                break;
            }
            let cands = self.generate(&current.pretty, 1, true)?;
            let Some(top) = cands.first() else { break };
            let Some(parsed) = blocks(&top.text) else { break };
            let [next_tactic] = parsed.as_slice() else { break };
            match self.exec(current.state_ref, next_tactic)? {
                Exec::Failed => break,
                Exec::Proved => {
                    executed.push(next_tactic.clone());
                    return Ok(Transition::Proved { tactics: executed });
                }
                Exec::Ok(next) => {
                    self.log(|| SearchEvent::RolloutStep {
                        state_ref: next.state_ref,
                        pretty: next.pretty.clone(),
                        tactic: next_tactic.clone(),
                    });
                    executed.push(next_tactic.clone());
                    current = next;
                }
            }
        }
        Ok(Transition::Advanced {
            state: current,
            tactics: executed,
        })
    }

    fn finish(&mut self, theorem: &TheoremRef, expansions: usize, outcome: Result<Vec<String>, SearchFailure>) -> SearchRun {
        let (solved, proof, failure_kind) = match outcome {
            Ok(p) => (true, Some(p), None),
            Err(f) => (false, None, Some(f)),
        };
        SearchRun {
            result: SearchResult {
                theorem_id: theorem.theorem_id.clone(),
                solved,
                proof,
                elapsed_s: self.clock.elapsed(),
                output_tokens: self.output_tokens,
                expansions,
                failure_kind,
                tokens_estimated: self.tokens_estimated,
            },
            events: self.trace.take().unwrap_or_default(),
        }
    }

    fn best_first(&mut self, theorem: &TheoremRef) -> Result<SearchRun, SearchError> {
        let init = match self.env.init(&theorem.theorem_id, &theorem.statement) {
            Ok(r) if r.status == Status::Ok => r,
            _ => return Ok(self.finish(theorem, 0, Err(SearchFailure::EnvError))),
        };
        self.clock.env_call();
        let pretty = init.pretty.unwrap_or_default();
        let root = SearchNode {
            state: LiveState {
                state_ref: init.state_ref.unwrap_or_default(),
                goal_count: count_open_goals(&pretty),
                pretty,
            },
            priority: 0.0,
            parent: None,
            edge: Vec::new(),
        };
        let mut nodes = vec![root];
        let mut frontier = BinaryHeap::new();
        frontier.push(Ranked {
            priority: 0.0,
            seq: Reverse(0),
            node: 0,
        });
        self.log(|| SearchEvent::Push {
            node: 0,
            parent: None,
            state_ref: nodes[0].state.state_ref,
            pretty: nodes[0].state.pretty.clone(),
            priority: 0.0,
            tactics: Vec::new(),
        });
        let mut expansions = 0;

        loop {
            if self.timed_out() {
                return Ok(self.finish(theorem, expansions, Err(SearchFailure::Timeout)));
            }
            if frontier.is_empty() {
                return Ok(self.finish(theorem, expansions, Err(SearchFailure::Exhausted)));
            }
            if expansions >= self.config.max_expansions {
                return Ok(self.finish(theorem, expansions, Err(SearchFailure::Budget)));
            }
            let Ranked { node: id, .. } = frontier.pop().expect("frontier checked non-empty");
            expansions += 1;
            let state = nodes[id].state.clone();
            self.log(|| SearchEvent::Expand {
                node: id,
                state_ref: state.state_ref,
                pretty: state.pretty.clone(),
            });
            let candidates = self.generate(&state.pretty, self.config.beam, false)?;
            for cand in candidates {
                let transition = match self.apply_candidate(&state, &cand) {
                    Ok(t) => t,
                    Err(StepError::Policy(e)) => return Err(e.into()),
                    Err(StepError::Env(_)) => {
                        return Ok(self.finish(theorem, expansions, Err(SearchFailure::EnvError)))
                    }
                };
                match transition {
                    Transition::Failed => {}
                    Transition::Proved { tactics } => {
                        let mut proof = path_to(&nodes, id);
                        proof.extend(tactics.iter().cloned());
                        self.log(|| SearchEvent::Proved { tactics: proof.clone() });
                        return Ok(self.finish(theorem, expansions, Ok(proof)));
                    }
                    Transition::Advanced { state: next, tactics } => {
                        if repeats_ancestor(&nodes, id, &next.pretty) {
                            self.log(|| SearchEvent::Pruned {
                                parent: id,
                                pretty: next.pretty.clone(),
                            });
                            continue;
                        }
                        let priority = nodes[id].priority + cand.score;
                        let child = nodes.len();
                        self.log(|| SearchEvent::Push {
                            node: child,
                            parent: Some(id),
                            state_ref: next.state_ref,
                            pretty: next.pretty.clone(),
                            priority,
                            tactics: tactics.clone(),
                        });
                        nodes.push(SearchNode {
                            state: next,
                            priority,
                            parent: Some(id),
                            edge: tactics,
                        });
                        frontier.push(Ranked {
                            priority,
                            seq: Reverse(child),
                            node: child,
                        });
                    }
                }
            }
        }
    }
}

enum StepError {
    Policy(PolicyError),
    Env(EnvError),
}

impl From<PolicyError> for StepError {
    fn from(e: PolicyError) -> Self {
        StepError::Policy(e)
    }
}

impl From<EnvError> for StepError {
    fn from(e: EnvError) -> Self {
        StepError::Env(e)
    }
}

fn path_to(nodes: &[SearchNode], mut id: usize) -> Vec<String> {
    let mut edges = Vec::new();
    loop {
        edges.push(&nodes[id].edge);
        match nodes[id].parent {
            Some(p) => id = p,
            None => break,
        }
    }
    edges.into_iter().rev().flatten().cloned().collect()
}

fn repeats_ancestor(nodes: &[SearchNode], mut id: usize, pretty: &str) -> bool {
    loop {
        if nodes[id].state.pretty == pretty {
            return true;
        }
        match nodes[id].parent {
            Some(p) => id = p,
            None => return false,
        }
    }
}

/// Best-first search for one theorem in an open session.
///
/// Environment failures end the search with `failure_kind = env_error`;
/// policy failures abort it with an error.
pub fn best_first_prove(
    theorem: &TheoremRef,
    policy: &mut dyn Policy,
    env: &mut dyn EnvSession,
    config: &SearchConfig,
    options: SearchOptions,
) -> Result<SearchRun, SearchError> {
    config.validate()?;
    Engine::new(policy, env, config, options).best_first(theorem)
}

/// Replays `proof` from the theorem's initial state; true iff the last
/// tactic, and only the last, closes the proof.
pub fn verify_proof(env: &mut dyn EnvSession, theorem: &TheoremRef, proof: &[String]) -> Result<bool, EnvError> {
    let init = env.init(&theorem.theorem_id, &theorem.statement)?;
    if init.status != Status::Ok {
        return Ok(false);
    }
    let mut at = init.state_ref.unwrap_or_default();
    for (i, tactic) in proof.iter().enumerate() {
        let resp = env.run(at, tactic)?;
        match resp.status {
            Status::Proved => return Ok(i + 1 == proof.len()),
            Status::Error => return Ok(false),
            Status::Ok => at = resp.state_ref.unwrap_or_default(),
        }
    }
    Ok(false)
}

/// Samples complete proofs for the initial state and checks each in a
/// fresh session until one verifies or the attempt budget runs out.
///
/// Candidates are requested in batches of `beam`; every generated
/// candidate's tokens count, including the rest of the winning batch.
pub fn whole_proof_prove(
    theorem: &TheoremRef,
    policy: &mut dyn Policy,
    env_factory: &dyn EnvFactory,
    config: &SearchConfig,
    options: SearchOptions,
) -> Result<SearchRun, SearchError> {
    config.validate()?;
    let mut clock = SearchClock::start(options.clock);
    let mut trace = options.trace.then(Vec::new);
    let mut tokens = 0u64;
    let mut estimated = false;
    let mut attempts = 0usize;

    let finish = |clock: &SearchClock,
                  trace: &mut Option<Vec<SearchEvent>>,
                  tokens: u64,
                  estimated: bool,
                  attempts: usize,
                  outcome: Result<Vec<String>, SearchFailure>| {
        let (solved, proof, failure_kind) = match outcome {
            Ok(p) => (true, Some(p), None),
            Err(f) => (false, None, Some(f)),
        };
        SearchRun {
            result: SearchResult {
                theorem_id: theorem.theorem_id.clone(),
                solved,
                proof,
                elapsed_s: clock.elapsed(),
                output_tokens: tokens,
                expansions: attempts,
                failure_kind,
                tokens_estimated: estimated,
            },
            events: trace.take().unwrap_or_default(),
        }
    };

    let initial = (|| -> Result<Option<String>, EnvError> {
        let mut session = env_factory.open()?;
        let init = session.init(&theorem.theorem_id, &theorem.statement)?;
        let _ = session.close();
        Ok((init.status == Status::Ok).then(|| init.pretty.unwrap_or_default()))
    })();
    clock.env_call();
    let pretty = match initial {
        Ok(Some(p)) => p,
        _ => return Ok(finish(&clock, &mut trace, 0, false, 0, Err(SearchFailure::EnvError))),
    };
    let prompt = format_prompt(&pretty);

    while attempts < config.whole_proof_attempts {
        if clock.elapsed() >= config.timeout_s {
            return Ok(finish(&clock, &mut trace, tokens, estimated, attempts, Err(SearchFailure::Timeout)));
        }
        let k = config.beam.min(config.whole_proof_attempts - attempts);
        let cands = policy.generate(&GenerateRequest {
            prompt: &prompt,
            num_candidates: k,
            max_tokens: config.max_tokens,
            extensions: &config.extensions,
        })?;
        clock.policy_call();
        let batch_tokens: u64 = cands.iter().map(|c| c.token_count).sum();
        tokens += batch_tokens;
        estimated |= cands.iter().any(|c| c.estimated);
        if let Some(t) = trace.as_mut() {
            t.push(SearchEvent::Generate {
                pretty: pretty.clone(),
                candidates: cands.len(),
                tokens: batch_tokens,
                rollout: false,
            });
        }
        if cands.is_empty() {
            return Ok(finish(&clock, &mut trace, tokens, estimated, attempts, Err(SearchFailure::Exhausted)));
        }
        for cand in cands {
            attempts += 1;
            let Some(proof) = blocks(&cand.text) else { continue };
            let verdict = (|| -> Result<bool, EnvError> {
                let mut session = env_factory.open()?;
                let ok = verify_proof(session.as_mut(), theorem, &proof);
                let _ = session.close();
                ok
            })();
            for _ in 0..=proof.len() {
                clock.env_call();
            }
            match verdict {
                Ok(true) => {
                    if let Some(t) = trace.as_mut() {
                        t.push(SearchEvent::Proved { tactics: proof.clone() });
                    }
                    return Ok(finish(&clock, &mut trace, tokens, estimated, attempts, Ok(proof)));
                }
                Ok(false) => {}
                Err(_) => {
                    return Ok(finish(&clock, &mut trace, tokens, estimated, attempts, Err(SearchFailure::EnvError)))
                }
            }
            if attempts >= config.whole_proof_attempts {
                break;
            }
        }
    }
    Ok(finish(&clock, &mut trace, tokens, estimated, attempts, Err(SearchFailure::Budget)))
}

/// Single-candidate transition at `node`, exposed for inspection and tests.
pub fn apply_candidate(
    node: &LiveState,
    candidate: &PolicyCandidate,
    env: &mut dyn EnvSession,
    policy: &mut dyn Policy,
    config: &SearchConfig,
) -> Result<Transition, SearchError> {
    let mut engine = Engine::new(policy, env, config, SearchOptions::default());
    match engine.apply_candidate(node, candidate) {
        Ok(t) => Ok(t),
        Err(StepError::Policy(e)) => Err(e.into()),
        Err(StepError::Env(e)) => Err(SearchError::Config(format!("environment failure: {e}"))),
    }
}

/// Goal-aware rollout after `tactic` took `node` to `reached`.
pub fn goal_aware_step(
    reached: LiveState,
    tactic: &str,
    env: &mut dyn EnvSession,
    policy: &mut dyn Policy,
    config: &SearchConfig,
) -> Result<Transition, SearchError> {
    let mut engine = Engine::new(policy, env, config, SearchOptions::default());
    match engine.goal_aware_step(tactic.to_string(), reached) {
        Ok(t) => Ok(t),
        Err(StepError::Policy(e)) => Err(e.into()),
        Err(StepError::Env(e)) => Err(SearchError::Config(format!("environment failure: {e}"))),
    }
}
