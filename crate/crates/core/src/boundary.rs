//! Boundary selection over trajectories and supervision-example extraction.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::edit_distance::normalized_edit_distance;
use crate::tokenizer::Tokenizer;
use crate::types::{BoundaryStrategy, MacroAction, StrategyKind, SupervisionExample, Trajectory};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BoundaryError {
    #[error("boundary positions must start at 0, end at T={len} and strictly increase: {positions:?}")]
    Invalid { positions: Vec<usize>, len: usize },
}

/// Strictly increasing positions `0 = t_0 < ... < t_K = T`, with `K >= 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundarySet(Vec<usize>);

impl BoundarySet {
    pub fn new(positions: Vec<usize>, len: usize) -> Result<Self, BoundaryError> {
        let ok = positions.len() >= 2
            && positions[0] == 0
            && positions[positions.len() - 1] == len
            && positions.windows(2).all(|w| w[0] < w[1]);
        if ok {
            Ok(BoundarySet(positions))
        } else {
            Err(BoundaryError::Invalid { positions, len })
        }
    }

    pub fn positions(&self) -> &[usize] {
        &self.0
    }

    /// Number of segments, `K`.
    pub fn segments(&self) -> usize {
        self.0.len() - 1
    }

    /// Builds from interior cut points; `0` and `len` are always added.
    fn from_cuts(cuts: impl IntoIterator<Item = usize>, len: usize) -> Self {
        let mut positions: Vec<usize> = std::iter::once(0)
            .chain(cuts)
            .chain(std::iter::once(len))
            .collect();
        positions.sort_unstable();
        positions.dedup();
        BoundarySet(positions)
    }
}

/// Selects boundary positions on `trajectory` according to `strategy`.
///
/// Tactic `a_t` is `trajectory.tactics()[t - 1]` and state `s_t` is
/// `trajectory.states()[t]`.
pub fn select_boundaries(
    trajectory: &Trajectory,
    strategy: &BoundaryStrategy,
    tokenizer: &Tokenizer,
) -> BoundarySet {
    let len = trajectory.len();
    let tactics = trajectory.tactics();
    let states = trajectory.states();
    match *strategy {
        BoundaryStrategy::Step => BoundarySet::from_cuts(1..len, len),
        BoundaryStrategy::Whole => BoundarySet::from_cuts([], len),
        BoundaryStrategy::GoalChange => BoundarySet::from_cuts(
            (1..=len).filter(|&t| states[t].goal_count() != states[t - 1].goal_count()),
            len,
        ),
        BoundaryStrategy::TokenThreshold(limit) => {
            // Close a segment before it would overflow; a lone oversized
            // tactic still gets a segment of its own.
            let mut cuts = Vec::new();
            let mut total = 0u64;
            let mut members = 0usize;
            for t in 1..=len {
                let cost = tokenizer.count(tactics[t - 1].as_str()) as u64;
                if members > 0 && total + cost > limit {
                    cuts.push(t - 1);
                    total = 0;
                    members = 0;
                }
                total += cost;
                members += 1;
            }
            BoundarySet::from_cuts(cuts, len)
        }
        BoundaryStrategy::TacticDistance(threshold) => {
            let tokens: Vec<Vec<&str>> = tactics
                .iter()
                .map(|a| tokenizer.tokenize(a.as_str()))
                .collect();
            BoundarySet::from_cuts(
                (1..len).filter(|&t| normalized_edit_distance(&tokens[t - 1], &tokens[t]) > threshold),
                len,
            )
        }
        BoundaryStrategy::StateDistance(threshold) => {
            // The reference state resets at every boundary.
            let mut cuts = Vec::new();
            let mut start = tokenizer.tokenize(states[0].pretty());
            for (t, state) in states.iter().enumerate().take(len).skip(1) {
                let current = tokenizer.tokenize(state.pretty());
                if normalized_edit_distance(&current, &start) > threshold {
                    cuts.push(t);
                    start = current;
                }
            }
            BoundarySet::from_cuts(cuts, len)
        }
    }
}

/// Emits `(s_{t_{k-1}}, a_{t_{k-1}+1 ..= t_k})` for `k = 1..=K`.
///
/// `boundaries` must have been built for this trajectory.
pub fn extract_segments(
    trajectory: &Trajectory,
    boundaries: &BoundarySet,
    granularity: StrategyKind,
) -> Vec<SupervisionExample> {
    assert_eq!(
        boundaries.positions().last().copied(),
        Some(trajectory.len()),
        "boundary set does not belong to this trajectory"
    );
    boundaries
        .positions()
        .windows(2)
        .enumerate()
        .map(|(i, w)| SupervisionExample {
            theorem_id: trajectory.theorem_id().to_string(),
            boundary_index: i + 1,
            input_state: trajectory.states()[w[0]].pretty().to_string(),
            target: MacroAction::new(trajectory.tactics()[w[0]..w[1]].to_vec())
                .expect("boundaries strictly increase"),
            granularity,
        })
        .collect()
}

/// Summary attached to every built dataset.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct DatasetStats {
    pub trajectories: usize,
    pub examples: usize,
    /// Tactics per example → number of examples.
    pub segment_lengths: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone)]
pub struct SupervisionDataset {
    pub strategy: BoundaryStrategy,
    pub tokenizer: String,
    pub examples: Vec<SupervisionExample>,
    pub stats: DatasetStats,
}

/// Applies `strategy` to every trajectory, preserving input order.
pub fn build_dataset(
    trajectories: &[Trajectory],
    strategy: &BoundaryStrategy,
    tokenizer: &Tokenizer,
) -> SupervisionDataset {
    let per_trajectory: Vec<Vec<SupervisionExample>> = trajectories
        .par_iter()
        .map(|t| extract_segments(t, &select_boundaries(t, strategy, tokenizer), strategy.kind()))
        .collect();
    let examples: Vec<SupervisionExample> = per_trajectory.into_iter().flatten().collect();
    let mut stats = DatasetStats {
        trajectories: trajectories.len(),
        examples: examples.len(),
        ..Default::default()
    };
    for ex in &examples {
        *stats.segment_lengths.entry(ex.target.len()).or_default() += 1;
    }
    SupervisionDataset {
        strategy: *strategy,
        tokenizer: tokenizer.description().to_string(),
        examples,
        stats,
    }
}
