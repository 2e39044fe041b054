//! The search engine: enumerate candidate sequences, estimate and optimize
//! them against fitted models, check winners on the real protocols, and
//! feed every divergence back into the training data until candidates
//! either validate or stop improving.

use crate::actionspec::{initial_holdings, ActionSpec, AttackVector};
use crate::intmath::Amount;
use crate::ledger::{profit, rational_to_f64};
use crate::optimizer::{solve_box, Bounds, OptError, Strength};
use crate::sampler::{self, DataPoint, SampleConfig};
use crate::surrogate::{fit_models, ApproxMethod, VectorEstimate, VectorEstimator};
use crate::world::World;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Signed, Zero};
use std::time::{Duration, Instant};

#[derive(Clone, Debug)]
pub struct SynthesisConfig {
    pub max_length: usize,
    /// Relative divergence threshold, exact.
    pub epsilon: BigRational,
    pub method: ApproxMethod,
    pub degree: usize,
    /// Initial data points per action.
    pub initial_points: usize,
    pub iterations: usize,
    pub timeout: Duration,
    /// Most times one action may appear in a sequence; defaults to
    /// ceil(max_length / 2).
    pub max_repeats: Option<usize>,
    pub seed: u64,
    pub log_uniform: bool,
    /// Refit on counterexample data. Off, divergences still drop
    /// candidates but never improve the models.
    pub refine: bool,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            max_length: 4,
            epsilon: BigRational::new(BigInt::from(1), BigInt::from(20)),
            method: ApproxMethod::Polynomial,
            degree: 2,
            initial_points: 500,
            iterations: 8,
            timeout: Duration::from_secs(600),
            max_repeats: None,
            seed: 0,
            log_uniform: false,
            refine: true,
        }
    }
}

impl SynthesisConfig {
    pub fn effective_max_repeats(&self) -> usize {
        self.max_repeats.unwrap_or_else(|| self.max_length.div_ceil(2))
    }

    pub fn epsilon_f64(&self) -> f64 {
        rational_to_f64(&self.epsilon)
    }
}

/// Every sequence of 1..=max_len action indices, lexicographic within each
/// length, lengths ascending.
pub fn all_vectors(n_actions: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for len in 1..=max_len {
        extend(&mut out, &mut current, n_actions, len);
    }
    return out;

    fn extend(out: &mut Vec<Vec<usize>>, current: &mut Vec<usize>, n: usize, len: usize) {
        if current.len() == len {
            out.push(current.clone());
            return;
        }
        for a in 0..n {
            current.push(a);
            extend(out, current, n, len);
            current.pop();
        }
    }
}

/// Structural filters applied before any estimation:
/// the same action never runs twice back to back (merge the amounts
/// instead), no action repeats more than `max_repeats` times, and a step
/// may only spend tokens the adversary starts with or an earlier step can
/// produce.
pub fn is_feasible(
    seq: &[usize],
    specs: &[ActionSpec],
    holdings: &[String],
    max_repeats: usize,
) -> bool {
    for pair in seq.windows(2) {
        if pair[0] == pair[1] {
            return false;
        }
    }
    let mut counts = vec![0usize; specs.len()];
    for &a in seq {
        counts[a] += 1;
        if counts[a] > max_repeats {
            return false;
        }
    }
    let mut obtainable: Vec<&str> = holdings.iter().map(|s| s.as_str()).collect();
    for &a in seq {
        let spec = &specs[a];
        for p in &spec.params {
            if let Some(token) = &p.consumes {
                if !obtainable.contains(&token.as_str()) {
                    return false;
                }
            }
        }
        for out in &spec.outputs {
            if !obtainable.contains(&out.as_str()) {
                obtainable.push(out);
            }
        }
    }
    true
}

pub fn enumerate_vectors(
    specs: &[ActionSpec],
    holdings: &[String],
    max_len: usize,
    max_repeats: usize,
) -> Vec<Vec<usize>> {
    all_vectors(specs.len(), max_len)
        .into_iter()
        .filter(|seq| is_feasible(seq, specs, holdings, max_repeats))
        .collect()
}

/// Divergence test between estimated and actual profit: the pair is a
/// counterexample when the values differ and the difference is at least
/// epsilon times the combined magnitude. Equal values, including the
/// all-zero pair, never count.
pub fn is_counterexample(estimated: &BigRational, actual: &BigRational, epsilon: &BigRational) -> bool {
    if estimated == actual {
        return false;
    }
    let gap = (estimated - actual).abs();
    gap >= epsilon * (estimated.abs() + actual.abs())
}

/// Execution record of one candidate at concrete parameters.
#[derive(Clone, Debug)]
pub struct CheckResult {
    /// Steps that executed without reverting.
    pub executed: usize,
    pub reverted: bool,
    /// Exact profit when every step executed.
    pub actual_profit: Option<BigRational>,
    pub counterexample: bool,
    /// Divergence-derived training points, one per inaccurate prefix,
    /// longest prefix first.
    pub new_points: Vec<DataPoint>,
}

/// Runs the candidate on a scratch copy of the world and, on divergence
/// or revert, walks the executed prefixes from longest to shortest. Each
/// prefix whose final step's predicted poststates or token deltas miss
/// the observed values by a relative gap of epsilon or more contributes
/// that step's actual observation as a new training point; the walk stops
/// at the first accurate prefix.
pub fn check_candidate(
    world: &World,
    specs: &[ActionSpec],
    estimate: &VectorEstimate,
    vector: &AttackVector,
    flat_params: &[Amount],
    epsilon: &BigRational,
) -> CheckResult {
    let eps = rational_to_f64(epsilon);
    let mut scratch = world.clone();
    let before = scratch.state.clone();

    let mut records: Vec<DataPoint> = Vec::new();
    let mut reverted = false;
    let mut offset = 0usize;

    for &a in &vector.actions {
        let spec = &specs[a];
        let params = &flat_params[offset..offset + spec.arity()];
        offset += spec.arity();
        let prestates = match crate::actionspec::read_states(&scratch, &spec.prestates) {
            Ok(v) => v,
            Err(_) => break,
        };
        let delta_tokens: Vec<_> = spec
            .token_deltas
            .iter()
            .map(|sym| scratch.registry.lookup(sym).expect("validated at load"))
            .collect();
        let balances_before: Vec<Amount> = delta_tokens.iter().map(|&t| scratch.adversary_balance(t)).collect();
        if scratch.execute(&spec.protocol, &spec.method, &spec.fixed, params).is_err() {
            reverted = true;
            break;
        }
        let poststates = match crate::actionspec::read_states(&scratch, &spec.poststates) {
            Ok(v) => v,
            Err(_) => break,
        };
        let deltas: Vec<Amount> = delta_tokens
            .iter()
            .zip(&balances_before)
            .map(|(&t, &b)| scratch.adversary_balance(t) - b)
            .collect();
        records.push(DataPoint { action: a, prestates, params: params.to_vec(), poststates, deltas });
    }

    let executed = records.len();
    let full = executed == vector.actions.len() && !reverted;
    let actual_profit = if full {
        Some(profit(&before, &scratch.state, &scratch.adversary, &scratch.registry).usd)
    } else {
        None
    };

    let estimated_profit = BigRational::from_f64(estimate.profit_usd).unwrap_or_else(BigRational::zero);
    let profit_diverges = match &actual_profit {
        Some(actual) => is_counterexample(&estimated_profit, actual, epsilon),
        None => false,
    };
    let counterexample = reverted || profit_diverges;

    let mut new_points = Vec::new();
    if counterexample {
        let accurate = |est: f64, act: f64| (est - act).abs() / act.abs().max(1.0) < eps;
        for k in (0..executed).rev() {
            let point = &records[k];
            let spec = &specs[point.action];
            // A prefix the estimator abandoned early has no entry here
            // and counts as inaccurate outright.
            let prefix_ok = estimate.per_step.get(k).is_some_and(|step_est| {
                let posts_ok = spec
                    .poststates
                    .iter()
                    .zip(&point.poststates)
                    .all(|(var, &act)| step_est.env.get(var).map(|&e| accurate(e, act as f64)).unwrap_or(false));
                let deltas_ok = step_est.deltas.len() == point.deltas.len()
                    && step_est.deltas.iter().zip(&point.deltas).all(|(&e, &act)| accurate(e, act as f64));
                posts_ok && deltas_ok
            });
            if prefix_ok {
                break;
            }
            new_points.push(records[k].clone());
        }
    }

    CheckResult {
        executed,
        reverted,
        actual_profit,
        counterexample,
        new_points,
    }
}

/// One confirmed profitable sequence.
#[derive(Clone, Debug)]
pub struct ValidatedAttack {
    pub vector: AttackVector,
    pub estimated_usd: f64,
    pub actual_usd: f64,
    /// Exact profit as a rational string, independent of float rounding.
    pub actual_usd_exact: String,
    pub iteration: usize,
    pub rendered: String,
}

#[derive(Clone, Debug)]
pub struct ActionPoints {
    pub name: String,
    pub initial: usize,
    pub total: usize,
}

#[derive(Clone, Debug, Default)]
pub struct PhaseTiming {
    pub sample: Duration,
    pub fit: Duration,
    pub search: Duration,
}

#[derive(Clone, Debug)]
pub struct SynthesisResult {
    pub validated: Vec<ValidatedAttack>,
    /// Index into `validated` of the highest actual profit.
    pub best: Option<usize>,
    /// Sequences before and after the structural filters.
    pub candidates_total: usize,
    pub candidates_kept: usize,
    pub iterations_run: usize,
    pub initial_points: usize,
    pub total_points: usize,
    pub per_action: Vec<ActionPoints>,
    pub counterexamples: usize,
    pub dropped_stalled: usize,
    pub dropped_infeasible: usize,
    pub timed_out: bool,
    pub elapsed: Duration,
    pub phases: PhaseTiming,
}

#[derive(thiserror::Error, Debug)]
pub enum SynthesisError {
    #[error(transparent)]
    Sample(#[from] sampler::SampleError),
    #[error(transparent)]
    Fit(#[from] crate::surrogate::FitError),
    #[error(transparent)]
    Estimator(#[from] crate::surrogate::EstimatorError),
}

struct Candidate {
    vector: AttackVector,
    score: f64,
    warm: Option<Vec<Amount>>,
    last_metric: Option<f64>,
    ran_before: bool,
    alive: bool,
}

/// Runs the full loop: sample, fit, and iterate optimize/check/refit with
/// per-candidate priority scheduling. Deterministic for a fixed seed apart
/// from wall-clock timeout truncation.
pub fn run(world: &World, specs: &[ActionSpec], cfg: &SynthesisConfig) -> Result<SynthesisResult, SynthesisError> {
    let started = Instant::now();
    let deadline = started + cfg.timeout;
    let holdings = initial_holdings(world);

    let sample_cfg = SampleConfig {
        per_action: cfg.initial_points,
        attempt_factor: 10,
        log_uniform: cfg.log_uniform,
    };
    let mut phases = PhaseTiming::default();
    let phase_start = Instant::now();
    let mut datasets = sampler::collect(world, specs, &sample_cfg, cfg.seed)?;
    phases.sample = phase_start.elapsed();
    let initial_points: usize = datasets.iter().map(Vec::len).sum();
    let initial_per_action: Vec<usize> = datasets.iter().map(Vec::len).collect();

    let total = all_vectors(specs.len(), cfg.max_length).len();
    let sequences = enumerate_vectors(specs, &holdings, cfg.max_length, cfg.effective_max_repeats());
    let mut candidates: Vec<Candidate> = sequences
        .into_iter()
        .map(|actions| Candidate {
            vector: AttackVector::unparametrized(actions),
            score: f64::INFINITY,
            warm: None,
            last_metric: None,
            ran_before: false,
            alive: true,
        })
        .collect();
    let pruned_count = candidates.len();

    let mut result = SynthesisResult {
        validated: Vec::new(),
        best: None,
        candidates_total: total,
        candidates_kept: pruned_count,
        iterations_run: 0,
        initial_points,
        total_points: initial_points,
        per_action: Vec::new(),
        counterexamples: 0,
        dropped_stalled: 0,
        dropped_infeasible: 0,
        timed_out: false,
        elapsed: Duration::ZERO,
        phases: PhaseTiming::default(),
    };

    let phase_start = Instant::now();
    let mut surrogates = fit_models(world, specs, &datasets, cfg.method, cfg.degree)?;
    phases.fit += phase_start.elapsed();
    let mut refit_needed = false;

    'iterations: for iteration in 1..=cfg.iterations {
        if candidates.iter().all(|c| !c.alive) {
            break;
        }
        if Instant::now() >= deadline {
            result.timed_out = true;
            break;
        }
        result.iterations_run = iteration;
        if refit_needed && cfg.refine {
            let phase_start = Instant::now();
            surrogates = fit_models(world, specs, &datasets, cfg.method, cfg.degree)?;
            phases.fit += phase_start.elapsed();
            refit_needed = false;
        }
        let strength = Strength::from_level(iteration.min(3));

        let mut order: Vec<usize> = (0..candidates.len()).filter(|&i| candidates[i].alive).collect();
        order.sort_by(|&a, &b| {
            candidates[b]
                .score
                .partial_cmp(&candidates[a].score)
                .unwrap_or(std::cmp::Ordering::Equal)
        });

        for idx in order {
            if Instant::now() >= deadline {
                result.timed_out = true;
                break 'iterations;
            }
            let candidate = &mut candidates[idx];
            let estimator = VectorEstimator::new(world, specs, &candidate.vector)?;
            let bounds = Bounds {
                lower: candidate
                    .vector
                    .actions
                    .iter()
                    .flat_map(|&a| specs[a].params.iter().map(|p| p.lower))
                    .collect(),
                upper: candidate
                    .vector
                    .actions
                    .iter()
                    .flat_map(|&a| specs[a].params.iter().map(|p| p.upper))
                    .collect(),
            };
            let warm: Vec<Vec<Amount>> = candidate.warm.iter().cloned().collect();
            let solved = solve_box(
                |x| {
                    let e = estimator.estimate(specs, &surrogates, x);
                    (e.profit_usd, e.violation)
                },
                &bounds,
                strength,
                cfg.seed ^ (idx as u64).wrapping_mul(0x9e3779b97f4a7c15),
                &warm,
            );

            let metric = match &solved {
                Ok(sol) => Some(sol.profit),
                Err(_) => None,
            };
            // A candidate stalls when its best estimate stops strictly
            // improving between iterations.
            let stalled = match (candidate.last_metric, metric) {
                (Some(last), Some(cur)) => cur <= last,
                (Some(_), None) => true,
                (None, None) => candidate.ran_before,
                (None, Some(_)) => false,
            };
            candidate.last_metric = metric;
            candidate.ran_before = true;

            match solved {
                Err(OptError::BadBounds) => {
                    candidate.alive = false;
                    result.dropped_infeasible += 1;
                    continue;
                }
                Err(OptError::NoFeasiblePoint { feasibility_rate, .. }) => {
                    if stalled {
                        candidate.alive = false;
                        result.dropped_infeasible += 1;
                    } else {
                        candidate.score = 1.0 + 9.0 * feasibility_rate;
                    }
                    continue;
                }
                Ok(sol) => {
                    candidate.warm = Some(sol.params.clone());
                    candidate.score = if sol.profit > 0.0 {
                        sol.profit
                    } else {
                        1.0 + 9.0 * sol.feasibility_rate
                    };
                    if sol.profit <= 0.0 {
                        if stalled {
                            candidate.alive = false;
                            result.dropped_stalled += 1;
                        }
                        continue;
                    }

                    let estimate = estimator.estimate(specs, &surrogates, &sol.params);
                    let mut vector = candidate.vector.clone();
                    vector.params = split_params(&vector, specs, &sol.params);
                    let check = check_candidate(world, specs, &estimate, &vector, &sol.params, &cfg.epsilon);

                    if check.counterexample {
                        result.counterexamples += 1;
                        if cfg.refine && !check.new_points.is_empty() {
                            for p in check.new_points {
                                datasets[p.action].push(p);
                                result.total_points += 1;
                            }
                            refit_needed = true;
                        } else if stalled {
                            candidate.alive = false;
                            result.dropped_stalled += 1;
                        }
                        continue;
                    }

                    if let Some(actual) = &check.actual_profit {
                        if actual > &BigRational::zero() {
                            let actual_usd = rational_to_f64(actual);
                            let attack = ValidatedAttack {
                                rendered: vector.render(specs),
                                vector,
                                estimated_usd: sol.profit,
                                actual_usd,
                                actual_usd_exact: crate::ledger::rational_string(actual),
                                iteration,
                            };
                            let better = match result.best {
                                None => true,
                                Some(b) => actual_usd > result.validated[b].actual_usd,
                            };
                            result.validated.push(attack);
                            if better {
                                result.best = Some(result.validated.len() - 1);
                            }
                        }
                    }
                    if stalled {
                        candidate.alive = false;
                        result.dropped_stalled += 1;
                    }
                }
            }
        }
    }

    result.per_action = specs
        .iter()
        .zip(&initial_per_action)
        .zip(&datasets)
        .map(|((spec, &initial), points)| ActionPoints {
            name: spec.name.clone(),
            initial,
            total: points.len(),
        })
        .collect();
    result.elapsed = started.elapsed();
    phases.search = result.elapsed.saturating_sub(phases.sample + phases.fit);
    result.phases = phases;
    Ok(result)
}

/// Splits a flat parameter assignment back into per-step vectors.
pub fn split_params(vector: &AttackVector, specs: &[ActionSpec], flat: &[Amount]) -> Vec<Vec<Amount>> {
    let mut out = Vec::with_capacity(vector.actions.len());
    let mut offset = 0;
    for &a in &vector.actions {
        let n = specs[a].arity();
        out.push(flat[offset..offset + n].to_vec());
        offset += n;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;

    fn eps() -> BigRational {
        BigRational::new(BigInt::from(1), BigInt::from(20))
    }

    fn rat(v: i64) -> BigRational {
        BigRational::from_integer(BigInt::from(v))
    }

    #[test]
    fn equal_profits_are_not_counterexamples() {
        assert!(!is_counterexample(&rat(100), &rat(100), &eps()));
        assert!(!is_counterexample(&rat(0), &rat(0), &eps()));
    }

    #[test]
    fn divergent_profits_are_counterexamples_symmetrically() {
        assert!(is_counterexample(&rat(100), &rat(50), &eps()));
        assert!(is_counterexample(&rat(50), &rat(100), &eps()));
    }

    #[test]
    fn small_relative_gap_is_tolerated() {
        // Gap 2 against combined magnitude 202: under 5%.
        assert!(!is_counterexample(&rat(102), &rat(100), &eps()));
    }

    #[test]
    fn sequences_enumerate_lexicographically_by_length() {
        let seqs = all_vectors(2, 2);
        assert_eq!(seqs, vec![vec![0], vec![1], vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
    }

    #[test]
    fn total_sequence_count_matches_closed_form() {
        // 4 actions, lengths 1..=4: 4 + 16 + 64 + 256.
        assert_eq!(all_vectors(4, 4).len(), 340);
    }
}
