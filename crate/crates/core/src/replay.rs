//! Replays raw proof records through an environment to recover verified
//! trajectories. Records that fail to parse, fail to execute, or never
//! reach a proved state are rejected and tallied.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvFactory, EnvSession};
use crate::parser::{parse_proof_script, ParseFailure};
use crate::protocol::Status;
use crate::types::{ProofState, Trajectory};

/// One corpus entry: either a full proof script or ordered state/tactic pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub theorem_id: String,
    pub statement: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proof_script: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_tactic_pairs: Option<Vec<(String, String)>>,
}

impl RawRecord {
    /// The executable script: the stored one, or the pair tactics joined in
    /// their original order.
    pub fn script(&self) -> Result<String, ReplayFailure> {
        match (&self.proof_script, &self.state_tactic_pairs) {
            (Some(s), None) => Ok(s.clone()),
            (None, Some(pairs)) => Ok(pairs
                .iter()
                .map(|(_, tactic)| tactic.as_str())
                .collect::<Vec<_>>()
                .join("\n")),
            _ => Err(ReplayFailure::Malformed(
                "exactly one of proof_script / state_tactic_pairs must be present".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Parse,
    Exec,
    Incomplete,
    Init,
    StateFormat,
    EnvError,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayFailure {
    #[error("parse failure: {0}")]
    Parse(#[from] ParseFailure),
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("tactic {step_index} failed: {message}")]
    Exec { step_index: usize, message: String },
    #[error("script ran out after {steps} tactics without closing the proof")]
    Incomplete { steps: usize },
    #[error("environment rejected the theorem: {0}")]
    Init(String),
    #[error("state after tactic {step_index} has no parseable goal but the proof is not finished")]
    StateFormat { step_index: usize },
    #[error("environment failure: {0}")]
    Env(String),
}

impl ReplayFailure {
    pub fn kind(&self) -> FailureKind {
        match self {
            ReplayFailure::Parse(_) | ReplayFailure::Malformed(_) => FailureKind::Parse,
            ReplayFailure::Exec { .. } => FailureKind::Exec,
            ReplayFailure::Incomplete { .. } => FailureKind::Incomplete,
            ReplayFailure::Init(_) => FailureKind::Init,
            ReplayFailure::StateFormat { .. } => FailureKind::StateFormat,
            ReplayFailure::Env(_) => FailureKind::EnvError,
        }
    }

    fn step_index(&self) -> Option<usize> {
        match self {
            ReplayFailure::Exec { step_index, .. } | ReplayFailure::StateFormat { step_index } => Some(*step_index),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replayed {
    pub trajectory: Trajectory,
    /// Non-fatal discrepancies, e.g. a `proved` reply that still prints goals.
    pub warnings: Vec<String>,
}

/// Replays one record in an already opened session.
pub fn replay(record: &RawRecord, session: &mut dyn EnvSession) -> Result<Replayed, ReplayFailure> {
    let tactics = parse_proof_script(&record.script()?)?;
    let env_err = |e: crate::env::EnvError| ReplayFailure::Env(e.to_string());

    let init = session.init(&record.theorem_id, &record.statement).map_err(env_err)?;
    if init.status != Status::Ok {
        return Err(ReplayFailure::Init(init.message.unwrap_or_default()));
    }
    let first = ProofState::from_pretty(init.pretty.unwrap_or_default());
    if first.proved() {
        return Err(ReplayFailure::StateFormat { step_index: 0 });
    }
    let mut state_ref = init.state_ref.unwrap_or_default();
    let mut states = vec![first];
    let mut warnings = Vec::new();

    for (i, tactic) in tactics.iter().enumerate() {
        let step_index = i + 1;
        let resp = session.run(state_ref, tactic.as_str()).map_err(env_err)?;
        match resp.status {
            Status::Error => {
                return Err(ReplayFailure::Exec {
                    step_index,
                    message: resp.message.unwrap_or_default(),
                })
            }
            Status::Ok => {
                let state = ProofState::from_pretty(resp.pretty.unwrap_or_default());
                if state.proved() {
                    return Err(ReplayFailure::StateFormat { step_index });
                }
                state_ref = resp.state_ref.unwrap_or_default();
                states.push(state);
            }
            Status::Proved => {
                if step_index < tactics.len() {
                    return Err(ReplayFailure::Exec {
                        step_index: step_index + 1,
                        message: "tactic after the proof was completed".into(),
                    });
                }
                let pretty = resp.pretty.unwrap_or_default();
                let terminal = ProofState::from_pretty(pretty.as_str());
                if terminal.proved() {
                    states.push(terminal);
                } else {
                    warnings.push(format!(
                        "proved reply after tactic {step_index} still prints {} goal(s); trusting status",
                        terminal.goal_count()
                    ));
                    states.push(ProofState::completed());
                }
                let trajectory = Trajectory::new(&record.theorem_id, &record.statement, states, tactics)
                    .expect("replay builds consistent trajectories");
                return Ok(Replayed { trajectory, warnings });
            }
        }
    }
    Err(ReplayFailure::Incomplete { steps: tactics.len() })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    /// 0-based position of the record in the corpus.
    pub index: usize,
    pub theorem_id: String,
    pub kind: FailureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_index: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayWarning {
    pub index: usize,
    pub theorem_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RejectionReport {
    pub total: usize,
    pub accepted: usize,
    pub rejected: BTreeMap<FailureKind, usize>,
    pub failures: Vec<Rejection>,
    pub warnings: Vec<ReplayWarning>,
}

/// Replays every record in a fresh session, using up to `workers` threads.
/// Output order follows input order.
pub fn verify_corpus(
    records: &[RawRecord],
    factory: &dyn EnvFactory,
    workers: usize,
) -> (Vec<Trajectory>, RejectionReport) {
    let run_one = |record: &RawRecord| -> Result<Replayed, ReplayFailure> {
        let mut session = factory.open().map_err(|e| ReplayFailure::Env(e.to_string()))?;
        let result = replay(record, session.as_mut());
        let _ = session.close();
        result
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    let outcomes: Vec<Result<Replayed, ReplayFailure>> = pool.install(|| records.par_iter().map(run_one).collect());

    let mut report = RejectionReport {
        total: records.len(),
        ..Default::default()
    };
    let mut trajectories = Vec::new();
    for (index, (record, outcome)) in records.iter().zip(outcomes).enumerate() {
        match outcome {
            Ok(replayed) => {
                report.warnings.extend(replayed.warnings.into_iter().map(|message| ReplayWarning {
                    index,
                    theorem_id: record.theorem_id.clone(),
                    message,
                }));
                trajectories.push(replayed.trajectory);
            }
            Err(failure) => {
                *report.rejected.entry(failure.kind()).or_default() += 1;
                report.failures.push(Rejection {
                    index,
                    theorem_id: record.theorem_id.clone(),
                    kind: failure.kind(),
                    step_index: failure.step_index(),
                    message: failure.to_string(),
                });
            }
        }
    }
    report.accepted = trajectories.len();
    (trajectories, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::SimEnvFactory;
    use crate::protocol::EnvResponse;
    use crate::simenv::{EdgeSpec, NodeSpec, SimSession, SimTree, TreeSpec};
    use std::sync::Arc;

    fn tree() -> Arc<SimTree> {
        let n = |p: &str, g| NodeSpec {
            pretty: p.into(),
            goal_count: g,
            proved: None,
        };
        let e = |f: &str, t: &str, to: &str| EdgeSpec {
            from: f.into(),
            tactic: t.into(),
            to: to.into(),
        };
        Arc::new(
            SimTree::from_spec(TreeSpec {
                nodes: [
                    ("s0", n("⊢ p ∧ q", 1)),
                    ("s1", n("⊢ p\n\n⊢ q", 2)),
                    ("s2", n("⊢ q", 1)),
                    ("done", n("no goals", 0)),
                ]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
                edges: vec![
                    e("s0", "constructor", "s1"),
                    e("s1", "exact hp", "s2"),
                    e("s2", "exact hq", "done"),
                    e("s0", "exact ⟨hp, hq⟩", "done"),
                ],
                roots: [("pq".to_string(), "s0".to_string())].into_iter().collect(),
            })
            .unwrap(),
        )
    }

    fn record(script: &str) -> RawRecord {
        RawRecord {
            theorem_id: "pq".into(),
            statement: "p ∧ q".into(),
            proof_script: Some(script.into()),
            state_tactic_pairs: None,
        }
    }

    fn run(r: &RawRecord) -> Result<Replayed, ReplayFailure> {
        replay(r, &mut SimSession::new(tree()))
    }

    #[test]
    fn replays_chain() {
        let out = run(&record("constructor\nexact hp\nexact hq")).unwrap();
        let t = out.trajectory;
        assert_eq!(t.len(), 3);
        assert_eq!(t.goal_counts(), [1, 2, 1, 0]);
        assert!(out.warnings.is_empty());
        let short = run(&record("exact ⟨hp, hq⟩")).unwrap().trajectory;
        assert_eq!(short.len(), 1);
    }

    #[test]
    fn failures_by_kind() {
        assert_eq!(
            run(&record("constructor\nsimp\nexact hq")),
            Err(ReplayFailure::Exec {
                step_index: 2,
                message: "unknown tactic".into()
            })
        );
        assert!(matches!(run(&record("")), Err(ReplayFailure::Parse(ParseFailure::Empty))));
        assert_eq!(run(&record("constructor\nexact hp")), Err(ReplayFailure::Incomplete { steps: 2 }));
        assert!(matches!(
            run(&record("exact ⟨hp, hq⟩\nsimp")),
            Err(ReplayFailure::Exec { step_index: 2, .. })
        ));
        let mut unknown = record("simp");
        unknown.theorem_id = "other".into();
        assert!(matches!(run(&unknown), Err(ReplayFailure::Init(_))));
        let mut both = record("simp");
        both.state_tactic_pairs = Some(vec![]);
        assert_eq!(run(&both).unwrap_err().kind(), FailureKind::Parse);
    }

    #[test]
    fn pairs_are_concatenated_in_order() {
        let r = RawRecord {
            theorem_id: "pq".into(),
            statement: String::new(),
            proof_script: None,
            state_tactic_pairs: Some(vec![
                ("⊢ p ∧ q".into(), "constructor".into()),
                ("⊢ p\n\n⊢ q".into(), "exact hp".into()),
                ("⊢ q".into(), "exact hq".into()),
            ]),
        };
        assert_eq!(run(&r).unwrap().trajectory.len(), 3);
    }

    struct Residual;
    impl EnvSession for Residual {
        fn init(&mut self, _: &str, _: &str) -> Result<EnvResponse, crate::env::EnvError> {
            Ok(EnvResponse::ok(0, "⊢ p"))
        }
        fn run(&mut self, _: u64, _: &str) -> Result<EnvResponse, crate::env::EnvError> {
            Ok(EnvResponse::proved("⊢ leftover"))
        }
        fn close(&mut self) -> Result<(), crate::env::EnvError> {
            Ok(())
        }
    }

    #[test]
    fn residual_text_on_proved_is_a_warning() {
        let out = replay(&record("simp"), &mut Residual).unwrap();
        assert_eq!(out.warnings.len(), 1);
        assert!(out.trajectory.states()[1].proved());
    }

    #[test]
    fn corpus_report() {
        let records = vec![
            record("constructor\nexact hp\nexact hq"),
            record("exact (hp"),
            record("constructor\nsimp"),
        ];
        let factory = SimEnvFactory::new(tree());
        let (trajs, report) = verify_corpus(&records, &factory, 2);
        assert_eq!(trajs.len(), 1);
        assert_eq!(report.rejected, BTreeMap::from([(FailureKind::Parse, 1), (FailureKind::Exec, 1)]));
        assert_eq!(report.failures[1].step_index, Some(2));

        let (t, r) = verify_corpus(&[], &factory, 4);
        assert!(t.is_empty() && r.total == 0);

        let twice = vec![records[0].clone(), records[0].clone()];
        let (t, _) = verify_corpus(&twice, &factory, 2);
        assert_eq!(t.len(), 2);
        assert_eq!(t[0], t[1]);
    }
}
