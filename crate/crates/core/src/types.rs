//! Domain values shared by parsing, segmentation, replay, search and metrics.
//!
//! Everything here is an immutable value once constructed; constructors
//! enforce the invariants so downstream code can rely on them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parser::count_open_goals;

/// Separator placed between tactics when a macro action is serialized.
pub const TACTIC_SEPARATOR: &str = "\n";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TypeError {
    #[error("tactic text is empty")]
    EmptyTactic,
    #[error("macro action must contain at least one tactic")]
    EmptyMacro,
    #[error("trajectory has {states} states for {tactics} tactics (expected tactics + 1)")]
    LengthMismatch { states: usize, tactics: usize },
    #[error("trajectory has no tactics")]
    NoTactics,
    #[error("initial state has no open goals")]
    InitialProved,
    #[error("terminal state is not proved")]
    NotProved,
    #[error("state {index} records {stored} goals but its text parses to {parsed}")]
    GoalCountMismatch {
        index: usize,
        stored: usize,
        parsed: usize,
    },
    #[error("strategy `{kind}` {problem}")]
    InvalidStrategy { kind: StrategyKind, problem: String },
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
    #[error("length must be at least 1")]
    ZeroLength,
    #[error("loss must be a finite non-negative number, got {0}")]
    InvalidLoss(f64),
}

/// One executable tactic block. May span several physical lines.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Tactic(String);

impl Tactic {
    /// Trailing whitespace is dropped; what remains must be non-empty.
    pub fn new(text: impl Into<String>) -> Result<Self, TypeError> {
        let mut text = text.into();
        text.truncate(text.trim_end().len());
        if text.is_empty() {
            return Err(TypeError::EmptyTactic);
        }
        Ok(Tactic(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Tactic {
    type Error = TypeError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Tactic::new(value)
    }
}

impl From<Tactic> for String {
    fn from(t: Tactic) -> String {
        t.0
    }
}

impl fmt::Display for Tactic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A pretty-printed proof state together with its open-goal count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProofState {
    pretty: String,
    goal_count: usize,
}

impl ProofState {
    /// Builds a state whose goal count is read off the pretty text.
    pub fn from_pretty(pretty: impl Into<String>) -> Self {
        let pretty = pretty.into();
        let goal_count = count_open_goals(&pretty);
        ProofState { pretty, goal_count }
    }

    /// The terminal state of a finished proof, printed as nothing.
    pub fn completed() -> Self {
        ProofState {
            pretty: String::new(),
            goal_count: 0,
        }
    }

    pub fn pretty(&self) -> &str {
        &self.pretty
    }

    pub fn goal_count(&self) -> usize {
        self.goal_count
    }

    pub fn proved(&self) -> bool {
        self.goal_count == 0
    }
}

/// A verified alternating sequence `s_0, a_1, s_1, ..., a_T, s_T`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    theorem_id: String,
    statement: String,
    states: Vec<ProofState>,
    tactics: Vec<Tactic>,
}

impl Trajectory {
    pub fn new(
        theorem_id: impl Into<String>,
        statement: impl Into<String>,
        states: Vec<ProofState>,
        tactics: Vec<Tactic>,
    ) -> Result<Self, TypeError> {
        if tactics.is_empty() {
            return Err(TypeError::NoTactics);
        }
        if states.len() != tactics.len() + 1 {
            return Err(TypeError::LengthMismatch {
                states: states.len(),
                tactics: tactics.len(),
            });
        }
        if states[0].proved() {
            return Err(TypeError::InitialProved);
        }
        if !states[tactics.len()].proved() {
            return Err(TypeError::NotProved);
        }
        Ok(Trajectory {
            theorem_id: theorem_id.into(),
            statement: statement.into(),
            states,
            tactics,
        })
    }

    pub fn theorem_id(&self) -> &str {
        &self.theorem_id
    }

    pub fn statement(&self) -> &str {
        &self.statement
    }

    pub fn states(&self) -> &[ProofState] {
        &self.states
    }

    pub fn tactics(&self) -> &[Tactic] {
        &self.tactics
    }

    /// Number of tactics, `T`.
    pub fn len(&self) -> usize {
        self.tactics.len()
    }

    /// Always false for a constructed trajectory; present for clippy's sake.
    pub fn is_empty(&self) -> bool {
        self.tactics.is_empty()
    }

    pub fn goal_counts(&self) -> Vec<usize> {
        self.states.iter().map(ProofState::goal_count).collect()
    }

    pub fn to_record(&self) -> TrajectoryRecord {
        TrajectoryRecord {
            theorem_id: self.theorem_id.clone(),
            statement: self.statement.clone(),
            states: self.states.iter().map(|s| s.pretty.clone()).collect(),
            tactics: self.tactics.iter().map(|t| t.0.clone()).collect(),
            goal_counts: self.goal_counts(),
        }
    }
}

/// On-disk form of a trajectory: one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub theorem_id: String,
    pub statement: String,
    pub states: Vec<String>,
    pub tactics: Vec<String>,
    pub goal_counts: Vec<usize>,
}

impl TryFrom<TrajectoryRecord> for Trajectory {
    type Error = TypeError;

    fn try_from(rec: TrajectoryRecord) -> Result<Self, Self::Error> {
        if rec.goal_counts.len() != rec.states.len() {
            return Err(TypeError::LengthMismatch {
                states: rec.goal_counts.len(),
                tactics: rec.states.len().saturating_sub(1),
            });
        }
        let mut states = Vec::with_capacity(rec.states.len());
        for (index, (pretty, stored)) in rec.states.into_iter().zip(rec.goal_counts).enumerate() {
            let state = ProofState::from_pretty(pretty);
            if state.goal_count != stored {
                return Err(TypeError::GoalCountMismatch {
                    index,
                    stored,
                    parsed: state.goal_count,
                });
            }
            states.push(state);
        }
        let tactics = rec
            .tactics
            .into_iter()
            .map(Tactic::new)
            .collect::<Result<Vec<_>, _>>()?;
        Trajectory::new(rec.theorem_id, rec.statement, states, tactics)
    }
}

/// Tag naming a boundary strategy family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Step,
    Whole,
    GoalChange,
    TokenThreshold,
    TacticDistance,
    StateDistance,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::Step,
        StrategyKind::Whole,
        StrategyKind::GoalChange,
        StrategyKind::TokenThreshold,
        StrategyKind::TacticDistance,
        StrategyKind::StateDistance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Step => "step",
            StrategyKind::Whole => "whole",
            StrategyKind::GoalChange => "goal_change",
            StrategyKind::TokenThreshold => "token_threshold",
            StrategyKind::TacticDistance => "tactic_distance",
            StrategyKind::StateDistance => "state_distance",
        }
    }

    pub fn takes_threshold(self) -> bool {
        matches!(
            self,
            StrategyKind::TokenThreshold | StrategyKind::TacticDistance | StrategyKind::StateDistance
        )
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = TypeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| TypeError::UnknownStrategy(s.to_string()))
    }
}

/// A configured rule selecting boundary positions on a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryStrategy {
    Step,
    Whole,
    GoalChange,
    /// Close a segment before its token total would exceed this many tokens.
    TokenThreshold(u64),
    /// Cut between adjacent tactics whose normalized edit distance exceeds this.
    TacticDistance(f64),
    /// Cut once the state drifts this far from the segment's starting state.
    StateDistance(f64),
}

impl BoundaryStrategy {
    pub fn from_parts(kind: StrategyKind, threshold: Option<f64>) -> Result<Self, TypeError> {
        let invalid = |problem: &str| TypeError::InvalidStrategy {
            kind,
            problem: problem.to_string(),
        };
        match (kind, threshold) {
            (StrategyKind::Step, None) => Ok(BoundaryStrategy::Step),
            (StrategyKind::Whole, None) => Ok(BoundaryStrategy::Whole),
            (StrategyKind::GoalChange, None) => Ok(BoundaryStrategy::GoalChange),
            (k, Some(_)) if !k.takes_threshold() => Err(invalid("does not take a threshold")),
            (_, None) => Err(invalid("requires a threshold")),
            (StrategyKind::TokenThreshold, Some(t)) => {
                if t.is_finite() && t >= 1.0 && t.fract() == 0.0 {
                    Ok(BoundaryStrategy::TokenThreshold(t as u64))
                } else {
                    Err(invalid("threshold must be a positive integer"))
                }
            }
            (k, Some(t)) => {
                if t > 0.0 && t <= 1.0 {
                    Ok(if k == StrategyKind::TacticDistance {
                        BoundaryStrategy::TacticDistance(t)
                    } else {
                        BoundaryStrategy::StateDistance(t)
                    })
                } else {
                    Err(invalid("threshold must lie in (0, 1]"))
                }
            }
        }
    }

    pub fn kind(&self) -> StrategyKind {
        match self {
            BoundaryStrategy::Step => StrategyKind::Step,
            BoundaryStrategy::Whole => StrategyKind::Whole,
            BoundaryStrategy::GoalChange => StrategyKind::GoalChange,
            BoundaryStrategy::TokenThreshold(_) => StrategyKind::TokenThreshold,
            BoundaryStrategy::TacticDistance(_) => StrategyKind::TacticDistance,
            BoundaryStrategy::StateDistance(_) => StrategyKind::StateDistance,
        }
    }

    pub fn threshold(&self) -> Option<f64> {
        match *self {
            BoundaryStrategy::TokenThreshold(t) => Some(t as f64),
            BoundaryStrategy::TacticDistance(t) | BoundaryStrategy::StateDistance(t) => Some(t),
            _ => None,
        }
    }
}

impl fmt::Display for BoundaryStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.threshold() {
            Some(t) => write!(f, "{}:{}", self.kind(), t),
            None => write!(f, "{}", self.kind()),
        }
    }
}

/// A non-empty run of consecutive tactics treated as one generation unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacroAction(Vec<Tactic>);

impl MacroAction {
    pub fn new(tactics: Vec<Tactic>) -> Result<Self, TypeError> {
        if tactics.is_empty() {
            return Err(TypeError::EmptyMacro);
        }
        Ok(MacroAction(tactics))
    }

    pub fn tactics(&self) -> &[Tactic] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Tactic texts joined by [`TACTIC_SEPARATOR`].
    pub fn joined(&self) -> String {
        self.0
            .iter()
            .map(Tactic::as_str)
            .collect::<Vec<_>>()
            .join(TACTIC_SEPARATOR)
    }
}

/// One `(boundary state, macro action)` training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionExample {
    pub theorem_id: String,
    /// 1-based segment index `k` within the trajectory.
    pub boundary_index: usize,
    pub input_state: String,
    pub target: MacroAction,
    pub granularity: StrategyKind,
}

/// A serialized target and its length under some tokenizer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerializedTarget {
    pub text: String,
    pub token_count: usize,
}

/// Externally measured per-example loss, paired with its target length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLengthLoss")]
pub struct LengthLossRecord {
    pub example_id: String,
    pub length: u64,
    pub loss: f64,
}

#[derive(Deserialize)]
struct RawLengthLoss {
    example_id: String,
    length: u64,
    loss: f64,
}

impl TryFrom<RawLengthLoss> for LengthLossRecord {
    type Error = TypeError;
    fn try_from(raw: RawLengthLoss) -> Result<Self, Self::Error> {
        LengthLossRecord::new(raw.example_id, raw.length, raw.loss)
    }
}

impl LengthLossRecord {
    pub fn new(example_id: impl Into<String>, length: u64, loss: f64) -> Result<Self, TypeError> {
        if length == 0 {
            return Err(TypeError::ZeroLength);
        }
        if !loss.is_finite() || loss < 0.0 {
            return Err(TypeError::InvalidLoss(loss));
        }
        Ok(LengthLossRecord {
            example_id: example_id.into(),
            length,
            loss,
        })
    }
}
