//! Run reports: a machine-readable record of one synthesis run. Everything
//! except wall-clock timing is deterministic for a fixed benchmark, seed,
//! and configuration, so reports can be diffed across runs; all
//! nondeterministic measurements live under the single top-level `timing`
//! key.

use crate::benchmark::Benchmark;
use crate::synthesis::{SynthesisConfig, SynthesisResult};
use crate::surrogate::ApproxMethod;
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub benchmark: String,
    pub seed: u64,
    pub config: ConfigEcho,
    pub candidates: CandidateCounts,
    pub data_points: DataPointCounts,
    pub iterations_run: usize,
    pub counterexamples: usize,
    pub dropped: DroppedCounts,
    pub attacks: Vec<AttackReport>,
    /// Index into `attacks` of the most profitable validated sequence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth_usd: Option<f64>,
    pub timed_out: bool,
    pub timing: Timing,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConfigEcho {
    pub max_length: usize,
    /// Exact rational, e.g. "1/20".
    pub epsilon: String,
    pub method: ApproxMethod,
    pub degree: usize,
    pub initial_points: usize,
    pub iterations: usize,
    pub timeout_secs: u64,
    pub max_repeats: usize,
    pub log_uniform: bool,
    pub refine: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CandidateCounts {
    pub total: usize,
    pub kept: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct DataPointCounts {
    pub initial: usize,
    pub total: usize,
    /// Per action: points collected up front and after refinement.
    pub per_action: BTreeMap<String, PointPair>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PointPair {
    pub initial: usize,
    pub total: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct DroppedCounts {
    pub stalled: usize,
    pub infeasible: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct AttackReport {
    /// Action names in execution order.
    pub actions: Vec<String>,
    /// Parameter values per step, serialized as strings to survive JSON
    /// readers that truncate large integers.
    pub params: Vec<Vec<String>>,
    pub rendered: String,
    pub estimated_usd: f64,
    pub actual_usd: f64,
    pub actual_usd_exact: String,
    pub iteration: usize,
    /// Actual profit over the known reference profit, present only when
    /// the benchmark declares one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalized_profit: Option<f64>,
}

/// Wall-clock measurements in milliseconds. Excluded from determinism
/// comparisons; keep every nondeterministic field here.
#[derive(Clone, Debug, Serialize)]
pub struct Timing {
    pub total_ms: u64,
    pub sample_ms: u64,
    pub fit_ms: u64,
    pub search_ms: u64,
}

pub fn build_report(benchmark: &Benchmark, cfg: &SynthesisConfig, result: &SynthesisResult) -> RunReport {
    let gt_usd = benchmark.ground_truth.as_ref().map(|gt| gt.profit_usd);
    let attacks: Vec<AttackReport> = result
        .validated
        .iter()
        .map(|a| AttackReport {
            actions: a.vector.actions.iter().map(|&i| benchmark.actions[i].name.clone()).collect(),
            params: a
                .vector
                .params
                .iter()
                .map(|step| step.iter().map(|v| v.to_string()).collect())
                .collect(),
            rendered: a.rendered.clone(),
            estimated_usd: a.estimated_usd,
            actual_usd: a.actual_usd,
            actual_usd_exact: a.actual_usd_exact.clone(),
            iteration: a.iteration,
            normalized_profit: gt_usd.filter(|g| *g != 0.0).map(|g| a.actual_usd / g),
        })
        .collect();
    RunReport {
        benchmark: benchmark.name.clone(),
        seed: cfg.seed,
        config: ConfigEcho {
            max_length: cfg.max_length,
            epsilon: crate::ledger::rational_string(&cfg.epsilon),
            method: cfg.method,
            degree: cfg.degree,
            initial_points: cfg.initial_points,
            iterations: cfg.iterations,
            timeout_secs: cfg.timeout.as_secs(),
            max_repeats: cfg.effective_max_repeats(),
            log_uniform: cfg.log_uniform,
            refine: cfg.refine,
        },
        candidates: CandidateCounts { total: result.candidates_total, kept: result.candidates_kept },
        data_points: DataPointCounts {
            initial: result.initial_points,
            total: result.total_points,
            per_action: result
                .per_action
                .iter()
                .map(|p| (p.name.clone(), PointPair { initial: p.initial, total: p.total }))
                .collect(),
        },
        iterations_run: result.iterations_run,
        counterexamples: result.counterexamples,
        dropped: DroppedCounts {
            stalled: result.dropped_stalled,
            infeasible: result.dropped_infeasible,
        },
        attacks,
        best: result.best,
        ground_truth_usd: gt_usd,
        timed_out: result.timed_out,
        timing: Timing {
            total_ms: result.elapsed.as_millis() as u64,
            sample_ms: result.phases.sample.as_millis() as u64,
            fit_ms: result.phases.fit.as_millis() as u64,
            search_ms: result.phases.search.as_millis() as u64,
        },
    }
}

/// Pretty JSON with a trailing newline; field order is fixed by the struct
/// definitions, map order by key.
pub fn to_json(report: &RunReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timing_carries_exactly_the_wall_clock_fields() {
        let timing = Timing { total_ms: 1, sample_ms: 2, fit_ms: 3, search_ms: 4 };
        let value = serde_json::to_value(&timing).unwrap();
        let keys: Vec<&str> = value.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        assert_eq!(keys, vec!["fit_ms", "sample_ms", "search_ms", "total_ms"]);
    }
}
