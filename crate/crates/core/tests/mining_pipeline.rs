//! End-to-end checks for the offline candidate miner against the committed
//! fixture corpus: the full report must match the expected file byte for
//! byte, and the dependency map must agree with a brute-force recomputation
//! that shares no code with the pipeline.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use windfall::actionspec::validate_spec;
use windfall::benchmark;
use windfall::traceminer::{
    self, check_executable, filter_interface, learn_special_params, DroppedFunctions,
    DEFAULT_MAX_CHOICES,
};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mining").join(name)
}

fn benchmark_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../benchmarks").join(name)
}

#[test]
fn mine_report_matches_committed_expectation() {
    let interfaces = traceminer::load_interfaces(&fixture("interfaces.json")).unwrap();
    let corpus = traceminer::load_traces(&fixture("traces.jsonl")).unwrap();
    let world = benchmark::load_path(&fixture("world.toml")).unwrap().world;
    let report = traceminer::mine(&interfaces, &corpus, &world, DEFAULT_MAX_CHOICES).unwrap();

    let got = traceminer::report_json(&report);
    let expected = std::fs::read_to_string(fixture("expected.json")).unwrap();
    assert_eq!(got, expected, "mine report drifted from the committed fixture");
}

/// Recomputes read-after-write dependencies the slow way: probe every
/// concretized candidate, strip sender-scoped keys by hand, and intersect
/// each reader's reads with each writer's writes.
#[test]
fn raw_map_equals_brute_force_pairwise_intersection() {
    let interfaces = traceminer::load_interfaces(&fixture("interfaces.json")).unwrap();
    let corpus = traceminer::load_traces(&fixture("traces.jsonl")).unwrap();
    let world = benchmark::load_path(&fixture("world.toml")).unwrap().world;

    let mut dropped = DroppedFunctions::default();
    let filtered = filter_interface(&interfaces, &mut dropped).unwrap();
    let concretized =
        learn_special_params(&filtered, &corpus, DEFAULT_MAX_CHOICES, &mut dropped).unwrap();

    let mut scratch = world.clone();
    let mut shared: Vec<(String, BTreeSet<String>, BTreeSet<String>)> = Vec::new();
    let mut records = Vec::new();
    for candidate in &concretized {
        let (ok, trace) = check_executable(candidate, &mut scratch);
        if !ok {
            continue;
        }
        let reads: BTreeSet<String> =
            trace.reads.iter().filter(|k| !trace.sender_scoped.contains(*k)).cloned().collect();
        let writes: BTreeSet<String> =
            trace.writes.iter().filter(|k| !trace.sender_scoped.contains(*k)).cloned().collect();
        shared.push((candidate.action_name(), reads, writes));
        records.push((candidate.action_name(), trace));
    }

    let mut brute: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (a, reads, _) in &shared {
        let entry = brute.entry(a.clone()).or_default();
        for (b, _, writes) in &shared {
            if reads.intersection(writes).next().is_some() {
                entry.insert(b.clone());
            }
        }
    }

    assert_eq!(traceminer::raw_dependencies(&records), brute);
}

/// The miner's final dependency map is the brute-force map restricted to
/// candidates that have at least one edge.
#[test]
fn report_dependencies_are_the_connected_restriction() {
    let interfaces = traceminer::load_interfaces(&fixture("interfaces.json")).unwrap();
    let corpus = traceminer::load_traces(&fixture("traces.jsonl")).unwrap();
    let world = benchmark::load_path(&fixture("world.toml")).unwrap().world;
    let report = traceminer::mine(&interfaces, &corpus, &world, DEFAULT_MAX_CHOICES).unwrap();

    for action in &report.actions {
        let deps = &report.dependencies[&action.name];
        assert!(
            !deps.is_empty() || report.dependencies.values().any(|d| d.contains(&action.name)),
            "{} survived with no dependency edges",
            action.name
        );
        for dep in deps {
            assert!(
                report.dependencies.contains_key(dep),
                "{} depends on {dep}, which was not emitted",
                action.name
            );
        }
    }
}

/// Every action used by a bundled ground-truth attack must survive
/// interface filtering; dropping one would make the attack unreachable for
/// the search no matter how good the rest of the pipeline is.
#[test]
fn ground_truth_methods_survive_interface_filtering() {
    let interfaces = traceminer::load_interfaces(&fixture("interfaces.json")).unwrap();
    let mut dropped = DroppedFunctions::default();
    let kept = filter_interface(&interfaces, &mut dropped).unwrap();
    let kept_ids: BTreeSet<String> = kept.iter().map(|c| c.id()).collect();

    for file in ["harvest.toml", "warp.toml"] {
        let bench = benchmark::load_path(&benchmark_path(file)).unwrap();
        let truth = bench.ground_truth.as_ref().expect("bundled attack benchmarks carry one");
        for &idx in &truth.actions {
            let action = &bench.actions[idx];
            let id = format!("{}.{}", action.protocol, action.method);
            assert!(kept_ids.contains(&id), "{file}: filtering dropped {id}");
        }
    }
}

/// Mined specs feed the search pipeline as-is, so each one has to pass the
/// same validation a hand-declared benchmark action goes through.
#[test]
fn mined_actions_pass_spec_validation() {
    let interfaces = traceminer::load_interfaces(&fixture("interfaces.json")).unwrap();
    let corpus = traceminer::load_traces(&fixture("traces.jsonl")).unwrap();
    let world = benchmark::load_path(&fixture("world.toml")).unwrap().world;
    let report = traceminer::mine(&interfaces, &corpus, &world, DEFAULT_MAX_CHOICES).unwrap();

    assert!(!report.actions.is_empty());
    for action in &report.actions {
        validate_spec(action, &world).unwrap_or_else(|e| panic!("{}: {e}", action.name));
    }
}
