//! Shared fixtures and independent reference implementations for the
//! integration and acceptance tests.

#![allow(dead_code)]

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use proofseg::protocol::WireCandidate;
use proofseg::simenv::{EdgeSpec, NodeSpec, SimTree, SimTransition, TreeSpec};
use proofseg::types::{ProofState, Tactic, Trajectory};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn wire(text: &str, score: f64, tokens: Option<u64>) -> WireCandidate {
    WireCandidate {
        text: text.to_string(),
        score,
        token_count: tokens,
    }
}

pub fn node(pretty: &str, goals: usize) -> NodeSpec {
    NodeSpec {
        pretty: pretty.to_string(),
        goal_count: goals,
        proved: None,
    }
}

pub fn edge(from: &str, tactic: &str, to: &str) -> EdgeSpec {
    EdgeSpec {
        from: from.to_string(),
        tactic: tactic.to_string(),
        to: to.to_string(),
    }
}

/// Pretty text with `goals` single-target blocks, tagged for uniqueness.
pub fn goals_text(tag: &str, goals: usize) -> String {
    (0..goals)
        .map(|j| format!("case {tag}_{j}\nx : T{j}\n⊢ P {tag} {j}"))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Trajectory whose states have the given goal counts; tactics are drawn
/// from a small vocabulary with 1 to `max_words` words each.
pub fn random_trajectory(rng: &mut impl Rng, id: &str, counts: &[usize], max_words: usize) -> Trajectory {
    const WORDS: &[&str] = &[
        "simp", "rw", "[h]", "exact", "apply", "intro", "x", "y", "h", "ring_nf", "omega", "at", "with", "⟨a,", "b⟩",
        "norm_num", "linarith", "constructor", "use", "0",
    ];
    let states = counts
        .iter()
        .enumerate()
        .map(|(t, &g)| ProofState::from_pretty(goals_text(&format!("{id}s{t}"), g)))
        .collect();
    let tactics = (1..counts.len())
        .map(|_| {
            let n = rng.gen_range(1..=max_words);
            let words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
            Tactic::new(words.join(" ")).unwrap()
        })
        .collect();
    Trajectory::new(id, "stmt", states, tactics).unwrap()
}

/// Goal counts of a verified trajectory of length `t`: positive until the
/// last state, which has none.
pub fn random_counts(rng: &mut impl Rng, t: usize) -> Vec<usize> {
    let mut c: Vec<usize> = (0..t).map(|_| rng.gen_range(1..=4)).collect();
    c.push(0);
    c
}

/// A generated search problem: a tree of at most `max_nodes` nodes with
/// unique non-terminal pretty texts, optionally with back edges that close
/// cycles to ancestors.
pub struct GeneratedTree {
    pub spec: TreeSpec,
    pub theorem: String,
    pub max_out_degree: usize,
    pub nonterminal: usize,
}

pub fn random_tree(rng: &mut impl Rng, index: usize, max_nodes: usize, back_edges: bool) -> GeneratedTree {
    let n = rng.gen_range(2..=max_nodes);
    let mut nodes = BTreeMap::new();
    let mut edges = Vec::new();
    let mut parent = vec![usize::MAX; n];
    let mut proved = vec![false; n];
    let mut goals = vec![1usize; n];
    for (i, p) in parent.iter_mut().enumerate().skip(1) {
        *p = rng.gen_range(0..i);
    }
    // Leaves may be proofs; about a third of trees have none at all.
    let provable = rng.gen_bool(0.66);
    let is_parent: Vec<bool> = (0..n).map(|i| parent.contains(&i)).collect();
    for i in 1..n {
        if !is_parent[i] && provable && rng.gen_bool(0.3) {
            proved[i] = true;
            goals[i] = 0;
        } else {
            goals[i] = rng.gen_range(1..=3);
        }
    }
    for i in 0..n {
        let name = format!("n{i}");
        if proved[i] {
            nodes.insert(name, node("", 0));
        } else {
            nodes.insert(name, node(&goals_text(&format!("g{index}n{i}"), goals[i]), goals[i]));
        }
    }
    let mut out_degree = vec![0usize; n];
    for (i, &p) in parent.iter().enumerate().skip(1) {
        edges.push(edge(&format!("n{p}"), &format!("tac_{i}"), &format!("n{i}")));
        out_degree[p] += 1;
    }
    for i in 1..n {
        if back_edges && !proved[i] && rng.gen_bool(0.1) {
            let mut a = parent[i];
            while a != 0 && rng.gen_bool(0.5) {
                a = parent[a];
            }
            edges.push(edge(&format!("n{i}"), &format!("back_{a}"), &format!("n{a}")));
            out_degree[i] += 1;
        }
    }
    let theorem = format!("gen{index}");
    GeneratedTree {
        nonterminal: proved.iter().filter(|p| !**p).count(),
        spec: TreeSpec {
            nodes,
            edges,
            roots: BTreeMap::from([(theorem.clone(), "n0".to_string())]),
        },
        theorem,
        max_out_degree: out_degree.into_iter().max().unwrap_or(0),
    }
}

/// Scripted table listing every outgoing edge of every non-terminal state,
/// with strictly descending random scores and one failing decoy.
pub fn all_edges_table(rng: &mut impl Rng, spec: &TreeSpec) -> proofseg::policy::ScriptedTable {
    let mut by_state = BTreeMap::new();
    for (id, n) in &spec.nodes {
        if n.goal_count == 0 {
            continue;
        }
        let mut tactics: Vec<&str> = spec
            .edges
            .iter()
            .filter(|e| &e.from == id)
            .map(|e| e.tactic.as_str())
            .collect();
        tactics.push("decoy_fails");
        tactics.shuffle(rng);
        let mut score = 0.0;
        let cands = tactics
            .into_iter()
            .map(|t| {
                score -= rng.gen_range(0.01..2.0);
                wire(t, score, Some(rng.gen_range(1..20)))
            })
            .collect();
        by_state.insert(n.pretty.clone(), cands);
    }
    proofseg::policy::ScriptedTable {
        by_state,
        by_prompt: BTreeMap::new(),
        default: Some(Vec::new()),
    }
}

/// Event of the reference search, comparable to the engine's trace.
#[derive(Debug, Clone, PartialEq)]
pub enum RefEvent {
    Expand(String),
    Push(String, f64, Vec<String>),
    Pruned(String),
    Proved(Vec<String>),
}

struct Entry {
    priority: f64,
    seq: usize,
    node: usize,
}

impl PartialEq for Entry {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Entry {
    fn cmp(&self, o: &Self) -> Ordering {
        self.priority
            .total_cmp(&o.priority)
            .then(Reverse(self.seq).cmp(&Reverse(o.seq)))
    }
}

/// Plain best-first search straight over the tree, with no rollout at
/// all: cumulative scores, FIFO ties, ancestor-duplicate pruning.
pub fn reference_best_first(
    tree: &SimTree,
    theorem: &str,
    table: &BTreeMap<String, Vec<(String, f64)>>,
    beam: usize,
    max_expansions: usize,
) -> (Option<Vec<String>>, Vec<RefEvent>) {
    // (sim node id, parent, tactic path, priority)
    let root = tree.root(theorem).unwrap().to_string();
    let mut arena: Vec<(String, Option<usize>, Vec<String>, f64)> = vec![(root.clone(), None, vec![], 0.0)];
    let mut heap = BinaryHeap::from([Entry {
        priority: 0.0,
        seq: 0,
        node: 0,
    }]);
    let pretty = |id: &str| tree.node(id).unwrap().pretty.clone();
    let mut events = vec![RefEvent::Push(pretty(&root), 0.0, vec![])];
    let mut expansions = 0;
    while let Some(Entry { node, .. }) = heap.pop() {
        if expansions >= max_expansions {
            break;
        }
        expansions += 1;
        let (id, _, path, prio) = arena[node].clone();
        events.push(RefEvent::Expand(pretty(&id)));
        let cands = table.get(&pretty(&id)).cloned().unwrap_or_default();
        for (tactic, score) in cands.into_iter().take(beam) {
            match tree.step(&id, &tactic).unwrap() {
                SimTransition::Failed(_) => {}
                SimTransition::Proved(_) => {
                    let mut p = path.clone();
                    p.push(tactic);
                    events.push(RefEvent::Proved(p.clone()));
                    return (Some(p), events);
                }
                SimTransition::Advanced(next) => {
                    let next_pretty = pretty(&next);
                    let mut a = Some(node);
                    let mut dup = false;
                    while let Some(i) = a {
                        if pretty(&arena[i].0) == next_pretty {
                            dup = true;
                        }
                        a = arena[i].1;
                    }
                    if dup {
                        events.push(RefEvent::Pruned(next_pretty));
                        continue;
                    }
                    let mut p = path.clone();
                    p.push(tactic.clone());
                    let priority = prio + score;
                    events.push(RefEvent::Push(next_pretty, priority, vec![tactic]));
                    arena.push((next.to_string(), Some(node), p, priority));
                    heap.push(Entry {
                        priority,
                        seq: arena.len() - 1,
                        node: arena.len() - 1,
                    });
                }
            }
        }
    }
    (None, events)
}

pub fn sim(spec: TreeSpec) -> Arc<SimTree> {
    Arc::new(SimTree::from_spec(spec).unwrap())
}
