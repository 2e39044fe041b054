//! Derivative-free maximization of estimated profit over integer parameter
//! boxes.
//!
//! Parameter ranges span many orders of magnitude, so the search runs in
//! log-space: z = ln(x - lower + 1) maps [lower, upper] onto [0, ln(width)]
//! and gives small and large values equal footing. Roughly half the budget
//! goes to a Halton sweep of the box; the best points seed Nelder-Mead
//! refinement rounds whose constraint penalty escalates tenfold per round,
//! so early rounds may wander through infeasible territory but the final
//! ones cannot. All evaluations round back to integers first; the objective
//! only ever sees in-range integer parameters.

use crate::intmath::Amount;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Strength {
    S1,
    S2,
    S3,
}

impl Strength {
    pub fn from_level(level: usize) -> Strength {
        match level {
            0 | 1 => Strength::S1,
            2 => Strength::S2,
            _ => Strength::S3,
        }
    }

    pub fn evals_per_dim(self) -> usize {
        match self {
            Strength::S1 => 64,
            Strength::S2 => 256,
            Strength::S3 => 1024,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Bounds {
    pub lower: Vec<Amount>,
    pub upper: Vec<Amount>,
}

impl Bounds {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub params: Vec<Amount>,
    pub profit: f64,
    pub evals: usize,
    /// Fraction of evaluated points that satisfied every constraint.
    pub feasibility_rate: f64,
}

#[derive(thiserror::Error, Debug, Clone)]
pub enum OptError {
    #[error("no feasible point found ({evals} evaluations, best violation {best_violation})")]
    NoFeasiblePoint { feasibility_rate: f64, best_violation: f64, evals: usize },
    #[error("bounds are empty or mismatched")]
    BadBounds,
}

/// Objective: parameters to (profit, violation). A point is feasible iff
/// violation == 0; profit is maximized over feasible points only.
pub fn solve_box<F>(
    mut objective: F,
    bounds: &Bounds,
    strength: Strength,
    seed: u64,
    warm_starts: &[Vec<Amount>],
) -> Result<Solution, OptError>
where
    F: FnMut(&[Amount]) -> (f64, f64),
{
    let dim = bounds.dim();
    if dim == 0 || bounds.upper.len() != dim || bounds.lower.iter().zip(&bounds.upper).any(|(l, u)| l > u) {
        return Err(OptError::BadBounds);
    }
    let budget = strength.evals_per_dim() * dim;
    let z_max: Vec<f64> = bounds
        .lower
        .iter()
        .zip(&bounds.upper)
        .map(|(&l, &u)| (((u - l) as f64) + 1.0).ln())
        .collect();

    let mut tally = Tally::default();
    let mut eval_z = |z: &[f64], tally: &mut Tally| -> (Vec<Amount>, f64, f64) {
        let x = z_to_params(z, bounds);
        let (profit, violation) = objective(&x);
        tally.record(&x, profit, violation);
        (x, profit, violation)
    };

    // Warm starts join the evaluated pool first so a repeated solve can
    // only improve on its predecessor.
    let mut pool: Vec<(Vec<f64>, f64, f64)> = Vec::new();
    for w in warm_starts {
        if w.len() != dim {
            continue;
        }
        let z = params_to_z(w, bounds);
        let (_, profit, violation) = eval_z(&z, &mut tally);
        pool.push((z, profit, violation));
    }

    let halton_budget = budget / 2;
    let offset = 1 + (seed % 8191) as usize;
    for i in 0..halton_budget.saturating_sub(pool.len()) {
        let z: Vec<f64> = (0..dim)
            .map(|d| halton(offset + i, PRIMES[d % PRIMES.len()]) * z_max[d])
            .collect();
        let (_, profit, violation) = eval_z(&z, &mut tally);
        pool.push((z, profit, violation));
    }

    // Refinement: penalty-escalating simplex runs from the best candidates
    // so far. Contracting a simplex from Halton-sweep resolution down to
    // sub-percent precision takes on the order of 16 + 16·dim evaluations,
    // so small budgets fund fewer, longer runs instead of starving six.
    let rounds = 3usize;
    let starts_per_round = 2usize;
    let refine_budget = budget.saturating_sub(tally.evals);
    let min_run = 16 + 16 * dim;
    let planned = (rounds * starts_per_round).min((refine_budget / min_run).max(1));
    let per_run = refine_budget / planned;
    for run in 0..planned {
        let weight = 10f64.powi(1 + (run * rounds / planned) as i32);
        let mut ranked: Vec<usize> = (0..pool.len()).collect();
        ranked.sort_by(|&a, &b| {
            let fa = pool[a].1 - weight * pool[a].2;
            let fb = pool[b].1 - weight * pool[b].2;
            fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal)
        });
        // Alternate between the top two candidates across runs when the
        // plan has room for more than one start.
        let start = ranked[(run % starts_per_round).min(ranked.len() - 1)];
        if tally.evals >= budget {
            break;
        }
        let run_budget = per_run.min(budget - tally.evals);
        let refined = nelder_mead(
            |z, t| {
                let (_, profit, violation) = eval_z(z, t);
                (profit, violation)
            },
            &pool[start].0,
            &z_max,
            weight,
            run_budget,
            &mut tally,
        );
        pool.extend(refined);
    }

    match tally.best_feasible {
        Some((params, profit)) => Ok(Solution {
            params,
            profit,
            evals: tally.evals,
            feasibility_rate: tally.feasible as f64 / tally.evals.max(1) as f64,
        }),
        None => Err(OptError::NoFeasiblePoint {
            feasibility_rate: tally.feasible as f64 / tally.evals.max(1) as f64,
            best_violation: tally.best_violation,
            evals: tally.evals,
        }),
    }
}

#[derive(Default)]
struct Tally {
    evals: usize,
    feasible: usize,
    best_feasible: Option<(Vec<Amount>, f64)>,
    best_violation: f64,
}

impl Tally {
    fn record(&mut self, x: &[Amount], profit: f64, violation: f64) {
        self.evals += 1;
        if self.evals == 1 || violation < self.best_violation {
            self.best_violation = violation;
        }
        if violation == 0.0 {
            self.feasible += 1;
            let better = match &self.best_feasible {
                None => true,
                Some((_, best)) => profit > *best,
            };
            if better {
                self.best_feasible = Some((x.to_vec(), profit));
            }
        }
    }
}

fn z_to_params(z: &[f64], bounds: &Bounds) -> Vec<Amount> {
    z.iter()
        .zip(&bounds.lower)
        .zip(&bounds.upper)
        .map(|((&zv, &lo), &hi)| {
            let raw = zv.clamp(0.0, (((hi - lo) as f64) + 1.0).ln()).exp().round() as i128;
            (lo + raw - 1).clamp(lo, hi)
        })
        .collect()
}

fn params_to_z(x: &[Amount], bounds: &Bounds) -> Vec<f64> {
    x.iter()
        .zip(&bounds.lower)
        .map(|(&v, &lo)| (((v - lo) as f64) + 1.0).ln())
        .collect()
}

const PRIMES: [usize; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Halton low-discrepancy value in [0, 1) for the given index and base.
fn halton(index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let mut i = index;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Standard simplex descent on the penalized objective, confined to the z
/// box by clamping. Returns the points it evaluated so later rounds can
/// rank them.
fn nelder_mead<F>(
    mut eval: F,
    start: &[f64],
    z_max: &[f64],
    weight: f64,
    budget: usize,
    tally: &mut Tally,
) -> Vec<(Vec<f64>, f64, f64)>
where
    F: FnMut(&[f64], &mut Tally) -> (f64, f64),
{
    let dim = start.len();
    let clamp = |z: &mut Vec<f64>| {
        for (v, &m) in z.iter_mut().zip(z_max) {
            *v = v.clamp(0.0, m);
        }
    };
    let score = |profit: f64, violation: f64| -profit + weight * violation;

    let mut used = 0usize;
    let mut visited: Vec<(Vec<f64>, f64, f64)> = Vec::new();
    let mut evaluate = |z: Vec<f64>, used: &mut usize, visited: &mut Vec<(Vec<f64>, f64, f64)>, tally: &mut Tally| -> (Vec<f64>, f64) {
        let (profit, violation) = eval(&z, tally);
        *used += 1;
        let s = score(profit, violation);
        visited.push((z.clone(), profit, violation));
        (z, s)
    };

    // Initial simplex: the start plus a nudge along each axis.
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    {
        let mut z = start.to_vec();
        clamp(&mut z);
        simplex.push(evaluate(z, &mut used, &mut visited, tally));
    }
    for d in 0..dim {
        if used >= budget {
            break;
        }
        let mut z = start.to_vec();
        let step = (z_max[d] * 0.05).max(0.25);
        z[d] += if z[d] + step <= z_max[d] { step } else { -step };
        clamp(&mut z);
        simplex.push(evaluate(z, &mut used, &mut visited, tally));
    }

    while used < budget && simplex.len() > 1 {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let worst = simplex.len() - 1;
        let centroid: Vec<f64> = (0..dim)
            .map(|d| simplex[..worst].iter().map(|(z, _)| z[d]).sum::<f64>() / worst as f64)
            .collect();

        let blend = |t: f64| -> Vec<f64> {
            let mut z: Vec<f64> = centroid
                .iter()
                .zip(&simplex[worst].0)
                .map(|(&c, &w)| c + t * (c - w))
                .collect();
            clamp(&mut z);
            z
        };

        let (rz, rs) = evaluate(blend(1.0), &mut used, &mut visited, tally);
        if rs < simplex[0].1 {
            if used < budget {
                let (ez, es) = evaluate(blend(2.0), &mut used, &mut visited, tally);
                simplex[worst] = if es < rs { (ez, es) } else { (rz, rs) };
            } else {
                simplex[worst] = (rz, rs);
            }
        } else if rs < simplex[worst - 1].1 {
            simplex[worst] = (rz, rs);
        } else if used < budget {
            let (cz, cs) = evaluate(blend(-0.5), &mut used, &mut visited, tally);
            if cs < simplex[worst].1 {
                simplex[worst] = (cz, cs);
            } else {
                // Shrink toward the best vertex.
                let best = simplex[0].0.clone();
                for i in 1..simplex.len() {
                    if used >= budget {
                        break;
                    }
                    let mut z: Vec<f64> = simplex[i]
                        .0
                        .iter()
                        .zip(&best)
                        .map(|(&v, &b)| b + 0.5 * (v - b))
                        .collect();
                    clamp(&mut z);
                    simplex[i] = evaluate(z, &mut used, &mut visited, tally);
                }
            }
        }

        let spread = {
            let lo = simplex.iter().map(|(_, s)| *s).fold(f64::INFINITY, f64::min);
            let hi = simplex.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        };
        if spread.abs() < 1e-12 {
            break;
        }
    }
    visited
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_is_low_discrepancy_in_unit_interval() {
        let vals: Vec<f64> = (1..100).map(|i| halton(i, 2)).collect();
        assert!(vals.iter().all(|v| (0.0..1.0).contains(v)));
        let below_half = vals.iter().filter(|v| **v < 0.5).count();
        assert!((40..60).contains(&below_half));
    }

    #[test]
    fn z_round_trip_hits_bounds() {
        let bounds = Bounds { lower: vec![1], upper: vec![1_000_000] };
        assert_eq!(z_to_params(&[0.0], &bounds), vec![1]);
        let top = (((1_000_000 - 1) as f64) + 1.0).ln();
        assert_eq!(z_to_params(&[top], &bounds), vec![1_000_000]);
    }

    #[test]
    fn finds_interior_maximum() {
        // profit peaks at x = 70000, feasible everywhere.
        let bounds = Bounds { lower: vec![1], upper: vec![1_000_000] };
        let sol = solve_box(
            |x| {
                let v = x[0] as f64;
                (-(v - 70_000.0).abs(), 0.0)
            },
            &bounds,
            Strength::S3,
            11,
            &[],
        )
        .unwrap();
        assert!((sol.params[0] - 70_000).abs() < 2_000, "got {}", sol.params[0]);
    }

    #[test]
    fn respects_constraints() {
        // Unconstrained optimum at the top of the range is infeasible;
        // the feasible optimum sits at the constraint boundary 250000.
        let bounds = Bounds { lower: vec![1], upper: vec![1_000_000] };
        let sol = solve_box(
            |x| {
                let v = x[0] as f64;
                let violation = (v - 250_000.0).max(0.0);
                (v, violation)
            },
            &bounds,
            Strength::S3,
            3,
            &[],
        )
        .unwrap();
        assert!(sol.params[0] <= 250_000);
        assert!(sol.params[0] > 200_000, "got {}", sol.params[0]);
    }

    #[test]
    fn infeasible_everywhere_is_reported() {
        let bounds = Bounds { lower: vec![1], upper: vec![100] };
        let err = solve_box(|_| (1.0, 5.0), &bounds, Strength::S1, 1, &[]).unwrap_err();
        match err {
            OptError::NoFeasiblePoint { feasibility_rate, .. } => assert_eq!(feasibility_rate, 0.0),
            OptError::BadBounds => panic!("wrong error"),
        }
    }

    #[test]
    fn warm_start_result_is_no_worse() {
        let objective = |x: &[Amount]| {
            let v = x[0] as f64;
            (-(v - 123_456.0).abs(), 0.0)
        };
        let bounds = Bounds { lower: vec![1], upper: vec![1_000_000] };
        let first = solve_box(objective, &bounds, Strength::S1, 5, &[]).unwrap();
        let second = solve_box(objective, &bounds, Strength::S2, 5, &[first.params.clone()]).unwrap();
        assert!(second.profit >= first.profit);
    }

    #[test]
    fn deterministic_per_seed() {
        let objective = |x: &[Amount]| ((x[0] as f64).sqrt().sin(), 0.0);
        let bounds = Bounds { lower: vec![1], upper: vec![50_000] };
        let a = solve_box(objective, &bounds, Strength::S2, 9, &[]).unwrap();
        let b = solve_box(objective, &bounds, Strength::S2, 9, &[]).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.evals, b.evals);
    }
}
