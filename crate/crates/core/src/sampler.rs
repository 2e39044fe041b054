//! Data collection: executes actions with random parameters against the
//! initial world and records (prestate, parameters, poststate, balance
//! delta) tuples for surrogate fitting.
//!
//! Sampling an action in isolation only explores the initial neighborhood,
//! so half the attempts first run one randomly chosen dependency
//! predecessor to push the observed variables away from their starting
//! values. Reverting attempts are discarded; an action that cannot produce
//! enough points within ten times the requested budget is reported rather
//! than silently under-sampled.

use crate::actionspec::{read_states, ActionSpec, ParamSpec};
use crate::intmath::{isqrt, Amount};
use crate::ledger::TokenId;
use crate::world::World;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

/// One observed execution of one action.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPoint {
    /// Index into the benchmark's action list.
    pub action: usize,
    pub prestates: Vec<Amount>,
    pub params: Vec<Amount>,
    pub poststates: Vec<Amount>,
    /// Adversary balance changes, aligned with the action's token_deltas.
    pub deltas: Vec<Amount>,
}

#[derive(Clone, Debug)]
pub struct SampleConfig {
    /// Successful points wanted per action.
    pub per_action: usize,
    /// Attempt budget as a multiple of per_action.
    pub attempt_factor: usize,
    /// Sample parameters log-uniformly instead of uniformly.
    pub log_uniform: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { per_action: 500, attempt_factor: 10, log_uniform: false }
    }
}

#[derive(thiserror::Error, Debug)]
pub enum SampleError {
    #[error("action {action} produced {got}/{needed} points within the attempt budget")]
    BudgetExhausted { action: String, got: usize, needed: usize },
    #[error("cannot read states for {action}: {reason}")]
    StateRead { action: String, reason: String },
}

/// Probe parameters at the geometric middle of each range, the point most
/// likely to execute when ranges span orders of magnitude.
pub fn probe_params(spec: &ActionSpec) -> Vec<Amount> {
    spec.params
        .iter()
        .map(|p| {
            let lo = p.lower.max(1);
            let hi = p.upper.max(lo);
            isqrt(lo * hi).clamp(lo, hi)
        })
        .collect()
}

/// Builds the read-after-write predecessor map by probing each action once
/// from the initial state. `preds[a]` lists every action whose recorded
/// writes intersect `a`'s recorded reads, caller-balance touches excluded.
/// A probe that reverts keeps its reads but contributes no writes, so
/// actions that cannot run from the initial state never appear as
/// predecessors.
pub fn raw_predecessors(world: &World, actions: &[ActionSpec]) -> Vec<Vec<usize>> {
    let mut reads = Vec::with_capacity(actions.len());
    let mut writes = Vec::with_capacity(actions.len());
    let mut scratch = world.clone();
    for spec in actions {
        let params = probe_params(spec);
        let trace = match scratch.probe(&spec.protocol, &spec.method, &spec.fixed, &params) {
            Ok(outcome) => outcome.trace,
            Err((_, outcome)) => outcome.trace,
        };
        let strip = |set: &std::collections::BTreeSet<String>| -> Vec<String> {
            set.iter().filter(|k| !trace.sender_scoped.contains(*k)).cloned().collect()
        };
        reads.push(strip(&trace.reads));
        writes.push(strip(&trace.writes));
    }
    (0..actions.len())
        .map(|a| {
            (0..actions.len())
                .filter(|&b| writes[b].iter().any(|w| reads[a].contains(w)))
                .collect()
        })
        .collect()
}

pub fn sample_param(rng: &mut ChaCha8Rng, spec: &ParamSpec, log_uniform: bool) -> Amount {
    if spec.lower >= spec.upper {
        return spec.lower;
    }
    if log_uniform {
        let lo = (spec.lower.max(1) as f64).ln();
        let hi = (spec.upper as f64).ln();
        let v = rng.gen_range(lo..=hi).exp().round() as Amount;
        v.clamp(spec.lower, spec.upper)
    } else {
        rng.gen_range(spec.lower..=spec.upper)
    }
}

pub fn sample_params(rng: &mut ChaCha8Rng, spec: &ActionSpec, log_uniform: bool) -> Vec<Amount> {
    spec.params.iter().map(|p| sample_param(rng, p, log_uniform)).collect()
}

fn delta_tokens(world: &World, spec: &ActionSpec) -> Vec<TokenId> {
    spec.token_deltas
        .iter()
        .map(|sym| world.registry.lookup(sym).expect("validated at load"))
        .collect()
}

/// Collects `cfg.per_action` points for every action. Each action draws
/// from its own seeded stream, so the result is deterministic for a fixed
/// seed regardless of how many workers run the actions.
pub fn collect(
    world: &World,
    actions: &[ActionSpec],
    cfg: &SampleConfig,
    seed: u64,
) -> Result<Vec<Vec<DataPoint>>, SampleError> {
    let preds = raw_predecessors(world, actions);
    actions
        .par_iter()
        .enumerate()
        .map(|(a, spec)| collect_action(world, actions, spec, &preds[a], cfg, action_seed(seed, a), a))
        .collect()
}

fn action_seed(seed: u64, action: usize) -> u64 {
    seed ^ (action as u64 + 1).wrapping_mul(0x9e3779b97f4a7c15)
}

fn collect_action(
    world: &World,
    actions: &[ActionSpec],
    spec: &ActionSpec,
    preds: &[usize],
    cfg: &SampleConfig,
    seed: u64,
    index: usize,
) -> Result<Vec<DataPoint>, SampleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scratch = world.clone();
    let initial = scratch.snapshot();
    let tokens = delta_tokens(world, spec);
    let budget = cfg.per_action * cfg.attempt_factor;
    let mut points = Vec::with_capacity(cfg.per_action);
    let mut attempts = 0;
    while points.len() < cfg.per_action && attempts < budget {
        attempts += 1;
        scratch.restore(&initial);
        if !preds.is_empty() && rng.gen_bool(0.5) {
            let b = preds[rng.gen_range(0..preds.len())];
            let pre_spec = &actions[b];
            let pre_params = sample_params(&mut rng, pre_spec, cfg.log_uniform);
            // A reverting predecessor leaves the state unchanged, which
            // is still a usable starting point.
            let _ = scratch.execute(&pre_spec.protocol, &pre_spec.method, &pre_spec.fixed, &pre_params);
        }
        let params = sample_params(&mut rng, spec, cfg.log_uniform);
        let prestates = read_states(&scratch, &spec.prestates).map_err(|e| SampleError::StateRead {
            action: spec.name.clone(),
            reason: e.to_string(),
        })?;
        let before: Vec<Amount> = tokens.iter().map(|&t| scratch.adversary_balance(t)).collect();
        if scratch.execute(&spec.protocol, &spec.method, &spec.fixed, &params).is_err() {
            continue;
        }
        let poststates = read_states(&scratch, &spec.poststates).map_err(|e| SampleError::StateRead {
            action: spec.name.clone(),
            reason: e.to_string(),
        })?;
        let deltas: Vec<Amount> = tokens
            .iter()
            .zip(&before)
            .map(|(&t, &b)| scratch.adversary_balance(t) - b)
            .collect();
        points.push(DataPoint { action: index, prestates, params, poststates, deltas });
    }
    if points.len() < cfg.per_action {
        return Err(SampleError::BudgetExhausted {
            action: spec.name.clone(),
            got: points.len(),
            needed: cfg.per_action,
        });
    }
    Ok(points)
}

pub fn write_jsonl(path: &Path, datasets: &[Vec<DataPoint>]) -> std::io::Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    for points in datasets {
        for p in points {
            serde_json::to_writer(&mut w, p)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()
}

pub fn read_jsonl(path: &Path, n_actions: usize) -> std::io::Result<Vec<Vec<DataPoint>>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut datasets: Vec<Vec<DataPoint>> = vec![Vec::new(); n_actions];
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let point: DataPoint = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        if point.action >= n_actions {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("point references action {} of {}", point.action, n_actions),
            ));
        }
        datasets[point.action].push(point);
    }
    Ok(datasets)
}
