mod common;

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::process::{Command, Stdio};
use std::sync::Arc;

use common::*;
use proofseg::simenv::{serve_tcp, SimTransition, SimTree};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn e2e_tree() -> std::path::PathBuf {
    fixtures().join("e2e/tree.json")
}

#[test]
fn stdio_transcript_matches_golden() {
    let requests = std::fs::read(fixtures().join("simenv/requests.jsonl")).unwrap();
    let expected = std::fs::read_to_string(fixtures().join("simenv/responses.jsonl")).unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_proofseg"))
        .arg("simenv")
        .arg(e2e_tree())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&requests).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), expected);
}

fn call(reader: &mut impl BufRead, writer: &mut impl Write, line: &str) -> String {
    writeln!(writer, "{line}").unwrap();
    writer.flush().unwrap();
    let mut reply = String::new();
    reader.read_line(&mut reply).unwrap();
    reply.trim_end().to_string()
}

#[test]
fn tcp_sessions_are_isolated() {
    let tree = Arc::new(SimTree::load(&e2e_tree()).unwrap());
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || serve_tcp(tree, listener));

    let connect = || {
        let s = TcpStream::connect(addr).unwrap();
        (BufReader::new(s.try_clone().unwrap()), s)
    };
    let (mut ra, mut wa) = connect();
    let (mut rb, mut wb) = connect();
    assert!(call(&mut ra, &mut wa, r#"{"op":"init","theorem_id":"t.and","statement":""}"#).contains("a ∧ b"));
    assert!(call(&mut rb, &mut wb, r#"{"op":"init","theorem_id":"t.imp","statement":""}"#).contains("p → p"));
    // Each connection has its own state refs.
    let a1 = call(&mut ra, &mut wa, r#"{"op":"run","state_ref":0,"tactic":"constructor"}"#);
    assert!(a1.contains(r#""state_ref":1"#), "{a1}");
    let b1 = call(&mut rb, &mut wb, r#"{"op":"run","state_ref":0,"tactic":"constructor"}"#);
    assert!(b1.starts_with(r#"{"status":"error""#), "{b1}");
    let b2 = call(&mut rb, &mut wb, r#"{"op":"run","state_ref":0,"tactic":"intro h"}"#);
    assert!(b2.contains(r#""state_ref":1"#), "{b2}");

    let handles: Vec<_> = (0..8)
        .map(|i| {
            std::thread::spawn(move || {
                let s = TcpStream::connect(addr).unwrap();
                let (mut r, mut w) = (BufReader::new(s.try_clone().unwrap()), s);
                call(&mut r, &mut w, r#"{"op":"init","theorem_id":"t.imp","statement":""}"#);
                for _ in 0..i {
                    call(&mut r, &mut w, r#"{"op":"run","state_ref":0,"tactic":"intro h"}"#);
                }
                let last = call(&mut r, &mut w, r#"{"op":"run","state_ref":0,"tactic":"intro h"}"#);
                assert!(last.contains(&format!(r#""state_ref":{}"#, i + 1)), "{last}");
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
}

/// Second implementation: explicit stack, collected as a set.
fn proofs_by_stack(tree: &SimTree, theorem: &str, depth: usize) -> BTreeSet<Vec<String>> {
    let mut found = BTreeSet::new();
    let mut stack = vec![(tree.root(theorem).unwrap().to_string(), Vec::<String>::new())];
    while let Some((at, path)) = stack.pop() {
        if path.len() == depth {
            continue;
        }
        for (tactic, to) in tree.edges_from(&at) {
            let mut next = path.clone();
            next.push(tactic.to_string());
            if tree.node(to).unwrap().goal_count == 0 {
                found.insert(next);
            } else {
                stack.push((to.to_string(), next));
            }
        }
    }
    found
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn enumeration_matches_an_independent_traversal(seed in 0u64..100_000, depth in 0usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_tree(&mut rng, 0, 30, true);
        let tree = SimTree::from_spec(g.spec).unwrap();
        let listed = tree.enumerate_proofs(&g.theorem, depth).unwrap();
        let mut sorted = listed.clone();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(&listed, &sorted, "not lexicographic or not unique");
        prop_assert!(listed.iter().all(|p| p.len() <= depth));
        let listed: BTreeSet<Vec<String>> = listed.into_iter().collect();
        prop_assert_eq!(listed, proofs_by_stack(&tree, &g.theorem, depth));
    }

    #[test]
    fn steps_are_pure(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_tree(&mut rng, 0, 30, true);
        let tree = SimTree::from_spec(g.spec.clone()).unwrap();
        for e in &g.spec.edges {
            let first = tree.step(&e.from, &e.tactic).unwrap();
            prop_assert_eq!(&first, &tree.step(&e.from, &e.tactic).unwrap());
            let expected_proved = tree.node(&e.to).unwrap().goal_count == 0;
            let consistent = match &first {
                SimTransition::Advanced(to) => !expected_proved && to == &e.to,
                SimTransition::Proved(to) => expected_proved && to == &e.to,
                SimTransition::Failed(_) => false,
            };
            prop_assert!(consistent, "{:?} along {:?}", first, e.tactic);
            prop_assert!(matches!(tree.step(&e.from, "no such tactic").unwrap(), SimTransition::Failed(_)));
        }
    }
}

#[test]
fn round_trips_through_its_spec() {
    let tree = SimTree::load(&e2e_tree()).unwrap();
    let again = SimTree::from_spec(tree.to_spec()).unwrap();
    assert_eq!(tree.to_spec(), again.to_spec());
    assert_eq!(
        tree.enumerate_proofs("t.and", 3).unwrap(),
        vec![vec!["constructor".to_string(), "exact ha".into(), "exact hb".into()]]
    );
    assert!(tree.enumerate_proofs("t.and", 2).unwrap().is_empty());
    assert!(tree.enumerate_proofs("t.hard", 10).unwrap().is_empty());
}
