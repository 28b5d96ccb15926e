//! Evaluation aggregates over search results and supervision datasets.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::search::SearchResult;
use crate::tokenizer::Tokenizer;
use crate::types::{LengthLossRecord, SupervisionExample};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("run set `{0}` has no runs")]
    NoRuns(String),
    #[error("run set `{label}`: run {run} covers a different theorem set")]
    RaggedRuns { label: String, run: usize },
    #[error("run sets `{0}` and `{1}` cover different theorem sets")]
    UniverseMismatch(String, String),
    #[error("cutoffs must be ascending")]
    CutoffOrder,
    #[error("no data")]
    Empty,
}

/// Several runs of one method; each run maps theorem_id to its result.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSet {
    pub label: String,
    pub runs: Vec<BTreeMap<String, SearchResult>>,
}

impl RunSet {
    pub fn new(label: impl Into<String>, runs: Vec<BTreeMap<String, SearchResult>>) -> Result<Self, MetricsError> {
        let label = label.into();
        let Some(first) = runs.first() else {
            return Err(MetricsError::NoRuns(label));
        };
        for (i, run) in runs.iter().enumerate().skip(1) {
            if !run.keys().eq(first.keys()) {
                return Err(MetricsError::RaggedRuns { label, run: i });
            }
        }
        Ok(RunSet { label, runs })
    }

    pub fn theorems(&self) -> BTreeSet<&str> {
        self.runs
            .first()
            .map(|r| r.keys().map(String::as_str).collect())
            .unwrap_or_default()
    }

    /// Percentage of theorems solved in each run.
    pub fn run_success(&self) -> Vec<f64> {
        self.runs
            .iter()
            .map(|run| {
                if run.is_empty() {
                    0.0
                } else {
                    100.0 * run.values().filter(|r| r.solved).count() as f64 / run.len() as f64
                }
            })
            .collect()
    }
}

/// Compensated (Neumaier) summation.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = neumaier_sum(values.iter().copied()) / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (neumaier_sum(values.iter().map(|v| (v - mean).powi(2))) / (n - 1.0)).sqrt()
        };
        Some(MeanStd { mean, std })
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

/// Mean and sample std of per-run success percentages.
pub fn aggregate_success(runset: &RunSet) -> Result<MeanStd, MetricsError> {
    MeanStd::of(&runset.run_success()).ok_or_else(|| MetricsError::NoRuns(runset.label.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostAverages {
    pub avg_tokens: f64,
    pub avg_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommonSolved {
    pub subset: Vec<String>,
    /// Per run set, in input order; `None` when the subset is empty.
    pub costs: Vec<(String, Option<CostAverages>)>,
}

/// Costs averaged over (theorem, run) pairs restricted to theorems solved
/// in every run of every run set.
pub fn common_solved_costs(runsets: &[RunSet]) -> Result<CommonSolved, MetricsError> {
    let Some(first) = runsets.first() else {
        return Err(MetricsError::Empty);
    };
    let universe = first.theorems();
    for rs in runsets {
        if rs.runs.is_empty() {
            return Err(MetricsError::NoRuns(rs.label.clone()));
        }
        if rs.theorems() != universe {
            return Err(MetricsError::UniverseMismatch(first.label.clone(), rs.label.clone()));
        }
    }
    let subset: Vec<String> = universe
        .iter()
        .filter(|t| runsets.iter().all(|rs| rs.runs.iter().all(|run| run[**t].solved)))
        .map(|t| t.to_string())
        .collect();
    let costs = runsets
        .iter()
        .map(|rs| {
            let pairs: Vec<&SearchResult> = rs
                .runs
                .iter()
                .flat_map(|run| subset.iter().map(move |t| &run[t]))
                .collect();
            let avg = (!pairs.is_empty()).then(|| {
                let n = pairs.len() as f64;
                CostAverages {
                    avg_tokens: neumaier_sum(pairs.iter().map(|r| r.output_tokens as f64)) / n,
                    avg_time: neumaier_sum(pairs.iter().map(|r| r.elapsed_s)) / n,
                }
            });
            (rs.label.clone(), avg)
        })
        .collect();
    Ok(CommonSolved { subset, costs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub cutoff: f64,
    pub log1p_cutoff: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Fraction of theorems proved within each cutoff, across runs. Unsolved
/// theorems never count.
pub fn cumulative_accuracy(runset: &RunSet, cutoffs: &[f64]) -> Result<Vec<CurvePoint>, MetricsError> {
    if cutoffs.iter().any(|c| c.is_nan()) || cutoffs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricsError::CutoffOrder);
    }
    if runset.runs.is_empty() {
        return Err(MetricsError::NoRuns(runset.label.clone()));
    }
    Ok(cutoffs
        .iter()
        .map(|&t| {
            let fractions: Vec<f64> = runset
                .runs
                .iter()
                .map(|run| {
                    if run.is_empty() {
                        return 0.0;
                    }
                    let hit = run
                        .values()
                        .filter(|r| {
                            let time = if r.solved { r.elapsed_s } else { f64::INFINITY };
                            time <= t
                        })
                        .count();
                    hit as f64 / run.len() as f64
                })
                .collect();
            CurvePoint {
                cutoff: t,
                log1p_cutoff: t.ln_1p(),
                mean: neumaier_sum(fractions.iter().copied()) / fractions.len() as f64,
                min: fractions.iter().copied().fold(f64::INFINITY, f64::min),
                max: fractions.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect())
}

/// Empirical distribution of target lengths.
pub fn length_distribution(lengths: &[usize]) -> Result<BTreeMap<usize, f64>, MetricsError> {
    if lengths.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut counts = BTreeMap::new();
    for &l in lengths {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    let n = lengths.len() as f64;
    Ok(counts.into_iter().map(|(l, c)| (l, c as f64 / n)).collect())
}

/// Distribution of serialized target token lengths over a dataset.
pub fn target_length_distribution(
    examples: &[SupervisionExample],
    tokenizer: &Tokenizer,
) -> Result<BTreeMap<usize, f64>, MetricsError> {
    let lengths: Vec<usize> = examples.iter().map(|e| tokenizer.count(&e.target.joined())).collect();
    length_distribution(&lengths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossDecomposition {
    /// Mean loss and example count per target length.
    pub per_length: BTreeMap<u64, (f64, usize)>,
    pub overall: f64,
    /// Sum over lengths of P(L) times the conditional mean loss.
    pub reconstruction: f64,
}

pub fn loss_decomposition(records: &[LengthLossRecord]) -> Result<LossDecomposition, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in records {
        groups.entry(r.length).or_default().push(r.loss);
    }
    let n = records.len() as f64;
    let per_length: BTreeMap<u64, (f64, usize)> = groups
        .iter()
        .map(|(&l, losses)| (l, (neumaier_sum(losses.iter().copied()) / losses.len() as f64, losses.len())))
        .collect();
    let overall = neumaier_sum(records.iter().map(|r| r.loss)) / n;
    let reconstruction = neumaier_sum(
        per_length
            .values()
            .map(|&(mean, count)| (count as f64 / n) * mean),
    );
    Ok(LossDecomposition {
        per_length,
        overall,
        reconstruction,
    })
}
