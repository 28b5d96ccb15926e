mod common;

use std::collections::BTreeMap;

use common::*;
use proofseg::boundary::{build_dataset, select_boundaries};
use proofseg::dataset::{format_prompt, serialize_example};
use proofseg::metrics::{common_solved_costs, cumulative_accuracy, target_length_distribution, RunSet};
use proofseg::parser::count_open_goals;
use proofseg::policy::{validate_candidates, GenerateRequest, Policy, PolicyError, ScriptedPolicy, ScriptedTable};
use proofseg::search::SearchResult;
use proofseg::tokenizer::Tokenizer;
use proofseg::types::{BoundaryStrategy, StrategyKind};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn any_strategy() -> impl Strategy<Value = BoundaryStrategy> {
    prop_oneof![
        Just(BoundaryStrategy::Step),
        Just(BoundaryStrategy::Whole),
        Just(BoundaryStrategy::GoalChange),
        (1u64..40).prop_map(BoundaryStrategy::TokenThreshold),
        (0.01f64..=1.0).prop_map(|t| BoundaryStrategy::from_parts(StrategyKind::TacticDistance, Some(t)).unwrap()),
        (0.01f64..=1.0).prop_map(|t| BoundaryStrategy::from_parts(StrategyKind::StateDistance, Some(t)).unwrap()),
    ]
}

fn random_runs(rng: &mut impl Rng, runs: usize, theorems: usize) -> Vec<BTreeMap<String, SearchResult>> {
    (0..runs)
        .map(|_| {
            (0..theorems)
                .map(|t| {
                    let solved = rng.gen_bool(0.6);
                    let id = format!("t{t}");
                    let r = SearchResult {
                        theorem_id: id.clone(),
                        solved,
                        proof: solved.then(|| vec!["x".into()]),
                        elapsed_s: rng.gen_range(0.0..100.0),
                        output_tokens: rng.gen_range(1..1000),
                        expansions: 1,
                        failure_kind: None,
                        tokens_estimated: false,
                    };
                    (id, r)
                })
                .collect()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dataset_partitions_every_trajectory(seed in any::<u64>(), t in 1usize..40, strategy in any_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let counts = random_counts(&mut rng, t);
        let traj = random_trajectory(&mut rng, "p", &counts, 8);
        let tok = Tokenizer::whitespace();
        let ds = build_dataset(std::slice::from_ref(&traj), &strategy, &tok);
        let mut rebuilt = Vec::new();
        for e in &ds.examples {
            prop_assert!(!e.target.is_empty() && e.target.len() <= t);
            rebuilt.extend(e.target.tactics().iter().cloned());
            let rec = serialize_example(e);
            prop_assert_eq!(rec.instruction, format_prompt(&e.input_state));
            prop_assert_eq!(rec.output, e.target.joined());
        }
        prop_assert_eq!(rebuilt.as_slice(), traj.tactics());
        prop_assert_eq!(ds.stats.examples, ds.examples.len());
    }

    #[test]
    fn the_terminal_position_is_a_natural_goal_change(seed in any::<u64>(), t in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let counts = random_counts(&mut rng, t);
        let traj = random_trajectory(&mut rng, "n", &counts, 3);
        let g = traj.goal_counts();
        prop_assert!(g[t] == 0 && g[t - 1] > 0);
        let pos = select_boundaries(&traj, &BoundaryStrategy::GoalChange, &Tokenizer::whitespace());
        prop_assert_eq!(pos.positions().last(), Some(&t));
        for s in traj.states() {
            prop_assert_eq!(s.goal_count(), count_open_goals(s.pretty()));
        }
    }

    #[test]
    fn length_distribution_sums_to_one(seed in any::<u64>(), n in 1usize..30, strategy in any_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trajs: Vec<_> = (0..n)
            .map(|i| {
                let t = rng.gen_range(1..30);
                let counts = random_counts(&mut rng, t);
                random_trajectory(&mut rng, &format!("d{i}"), &counts, 10)
            })
            .collect();
        let tok = Tokenizer::whitespace();
        let ds = build_dataset(&trajs, &strategy, &tok);
        let dist = target_length_distribution(&ds.examples, &tok).unwrap();
        let total: f64 = dist.values().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12, "sum {}", total);
    }

    #[test]
    fn common_subset_ignores_run_set_order(seed in any::<u64>(), k in 1usize..5, theorems in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sets: Vec<RunSet> = (0..k)
            .map(|i| {
                let runs = rng.gen_range(1..4);
                RunSet::new(format!("m{i}"), random_runs(&mut rng, runs, theorems)).unwrap()
            })
            .collect();
        let forward = common_solved_costs(&sets).unwrap();
        let mut reversed_sets = sets.clone();
        reversed_sets.reverse();
        let mut reversed = common_solved_costs(&reversed_sets).unwrap();
        prop_assert_eq!(&forward.subset, &reversed.subset);
        reversed.costs.reverse();
        prop_assert_eq!(forward.costs, reversed.costs);
    }

    #[test]
    fn curves_are_monotone_per_run(seed in any::<u64>(), theorems in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rs = RunSet::new("m", random_runs(&mut rng, 3, theorems)).unwrap();
        let grid: Vec<f64> = (0..=110).map(f64::from).collect();
        let pts = cumulative_accuracy(&rs, &grid).unwrap();
        for w in pts.windows(2) {
            prop_assert!(w[0].min <= w[1].min && w[0].max <= w[1].max && w[0].mean <= w[1].mean);
        }
        let last = pts.last().unwrap();
        let per_run: Vec<f64> = rs.run_success().iter().map(|p| p / 100.0).collect();
        let min = per_run.iter().copied().fold(f64::INFINITY, f64::min);
        let max = per_run.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((last.min - min).abs() < 1e-12 && (last.max - max).abs() < 1e-12);
    }

    #[test]
    fn scripted_policies_are_deterministic(seed in any::<u64>(), k in 1usize..6, max_tokens in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_tree(&mut rng, 0, 20, true);
        let table = all_edges_table(&mut rng, &g.spec);
        let mut a = ScriptedPolicy::from_table(table.clone()).unwrap();
        let mut b = ScriptedPolicy::from_table(table.clone()).unwrap();
        let ext = Default::default();
        for state in table.by_state.keys() {
            let prompt = format_prompt(state);
            let req = GenerateRequest { prompt: &prompt, num_candidates: k, max_tokens, extensions: &ext };
            let first = a.generate(&req).unwrap();
            prop_assert_eq!(&first, &a.generate(&req).unwrap());
            prop_assert_eq!(&first, &b.generate(&req).unwrap());
            prop_assert!(first.len() <= k);
            prop_assert!(first.iter().all(|c| c.token_count as usize <= max_tokens));
        }
    }
}

#[test]
fn score_order_violations_are_errors_not_repairs() {
    let unordered = vec![wire("a", -1.0, Some(1)), wire("b", -0.5, Some(1))];
    assert!(matches!(validate_candidates(unordered.clone(), 4), Err(PolicyError::Contract(_))));
    let table = ScriptedTable {
        by_state: BTreeMap::from([("⊢ A".to_string(), unordered)]),
        ..Default::default()
    };
    assert!(ScriptedPolicy::from_table(table).is_err());
    assert!(matches!(
        validate_candidates(vec![wire("a", f64::NAN, Some(1))], 4),
        Err(PolicyError::Contract(_))
    ));
    assert!(matches!(validate_candidates(vec![wire("a", -1.0, Some(0))], 4), Err(PolicyError::Contract(_))));
    assert!(matches!(
        validate_candidates(vec![wire("a", -1.0, Some(1)), wire("b", -2.0, Some(1))], 1),
        Err(PolicyError::Contract(_))
    ));
    let ok = validate_candidates(vec![wire("x y", -1.0, None), wire("z", -1.0, Some(4))], 2).unwrap();
    assert_eq!((ok[0].token_count, ok[0].estimated), (2, true));
    assert_eq!((ok[1].token_count, ok[1].estimated), (4, false));
}
