//! Per-action outcome models and their composition into a whole-sequence
//! profit estimator.
//!
//! Three interchangeable model families predict an action's poststates and
//! balance deltas from its prestates and parameters: least-squares
//! polynomials, nearest-neighbor lookup, and exact integer summaries that
//! replicate the protocol arithmetic over the declared variables. The
//! estimator threads a variable environment through a candidate sequence,
//! accumulates predicted balance changes, and reports estimated profit plus
//! how badly the composition violates non-negativity along the way.

use crate::actionspec::{ActionSpec, AttackVector, VarRef};
use crate::intmath::Amount;
use crate::ledger::{rational_to_f64, TokenId, TokenRegistry};
use crate::protocols::{cpamm, lending, stableswap, vault, ProtocolConfig};
use crate::sampler::DataPoint;
use crate::world::World;
use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

/// Violation magnitude assigned when a step cannot be evaluated at all
/// (exact arithmetic signalled a revert, or a prediction went non-finite).
const STEP_FAILURE_VIOLATION: f64 = 1e30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApproxMethod {
    Polynomial,
    NearestNeighbor,
    Exact,
}

impl std::str::FromStr for ApproxMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "poly" | "polynomial" => Ok(ApproxMethod::Polynomial),
            "nearest" | "nn" | "nearest_neighbor" => Ok(ApproxMethod::NearestNeighbor),
            "exact" => Ok(ApproxMethod::Exact),
            other => Err(format!("unknown method {other:?} (poly, nearest, exact)")),
        }
    }
}

/// Exponent vectors for all monomials of total degree 1..=degree over
/// `n_features` variables, graded lexicographic. The constant term is not
/// included; the design matrix carries a separate intercept column.
pub fn monomial_exponents(n_features: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut current = vec![0u32; n_features];
    for total in 1..=degree as u32 {
        fill(&mut out, &mut current, 0, total);
    }
    return out;

    fn fill(out: &mut Vec<Vec<u32>>, current: &mut Vec<u32>, idx: usize, remaining: u32) {
        if idx + 1 == current.len() {
            current[idx] = remaining;
            out.push(current.clone());
            current[idx] = 0;
            return;
        }
        for take in (0..=remaining).rev() {
            current[idx] = take;
            fill(out, current, idx + 1, remaining - take);
            current[idx] = 0;
        }
    }
}

fn monomial_values(exponents: &[Vec<u32>], x: &[f64]) -> Vec<f64> {
    exponents
        .iter()
        .map(|exp| exp.iter().zip(x).map(|(&e, &v)| v.powi(e as i32)).product())
        .collect()
}

/// Least-squares polynomial over standardized monomial features. Fitting
/// solves all target columns against one shared design matrix.
#[derive(Clone, Debug)]
pub struct PolyModel {
    pub degree: usize,
    pub exponents: Vec<Vec<u32>>,
    /// Standardization per monomial column; a zero-variance column keeps
    /// scale 1 and contributes nothing after centering.
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    /// Row per target: intercept followed by one coefficient per monomial.
    pub coefs: Vec<Vec<f64>>,
    pub rank_deficient: bool,
}

#[derive(thiserror::Error, Debug)]
pub enum FitError {
    #[error("no data points to fit")]
    Empty,
    #[error("inconsistent point shapes in dataset")]
    Ragged,
    #[error("degree {0} unsupported (1..=3)")]
    BadDegree(usize),
    #[error("least squares failed: {0}")]
    Solve(String),
    #[error("exact summary: {0}")]
    Exact(String),
}

pub fn fit_polynomial(xs: &[Vec<f64>], ys: &[Vec<f64>], degree: usize) -> Result<PolyModel, FitError> {
    if !(1..=3).contains(&degree) {
        return Err(FitError::BadDegree(degree));
    }
    let n = xs.len();
    if n == 0 {
        return Err(FitError::Empty);
    }
    let n_feat = xs[0].len();
    let n_tgt = ys[0].len();
    if xs.iter().any(|r| r.len() != n_feat) || ys.len() != n || ys.iter().any(|r| r.len() != n_tgt) {
        return Err(FitError::Ragged);
    }
    let exponents = monomial_exponents(n_feat, degree);
    let m = exponents.len();

    let raw: Vec<Vec<f64>> = xs.iter().map(|x| monomial_values(&exponents, x)).collect();
    let mut means = vec![0.0; m];
    for row in &raw {
        for (mean, v) in means.iter_mut().zip(row) {
            *mean += v;
        }
    }
    for mean in &mut means {
        *mean /= n as f64;
    }
    let mut scales = vec![0.0; m];
    for row in &raw {
        for ((scale, v), mean) in scales.iter_mut().zip(row).zip(&means) {
            *scale += (v - mean) * (v - mean);
        }
    }
    for scale in &mut scales {
        *scale = (*scale / n as f64).sqrt();
        if *scale == 0.0 || !scale.is_finite() {
            *scale = 1.0;
        }
    }

    let mut design = DMatrix::zeros(n, m + 1);
    for (r, row) in raw.iter().enumerate() {
        design[(r, 0)] = 1.0;
        for (c, v) in row.iter().enumerate() {
            design[(r, c + 1)] = (v - means[c]) / scales[c];
        }
    }
    let mut targets = DMatrix::zeros(n, n_tgt);
    for (r, row) in ys.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            targets[(r, c)] = *v;
        }
    }

    let svd = design.svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let eps = f64::EPSILON * sigma_max * (n.max(m + 1) as f64);
    let rank = svd.rank(eps.max(f64::MIN_POSITIVE));
    let solution = svd.solve(&targets, eps.max(f64::MIN_POSITIVE)).map_err(|e| FitError::Solve(e.to_string()))?;

    let coefs = (0..n_tgt)
        .map(|t| (0..=m).map(|c| solution[(c, t)]).collect())
        .collect();
    Ok(PolyModel {
        degree,
        exponents,
        means,
        scales,
        coefs,
        rank_deficient: rank < m + 1,
    })
}

impl PolyModel {
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let raw = monomial_values(&self.exponents, x);
        let std: Vec<f64> = raw
            .iter()
            .zip(&self.means)
            .zip(&self.scales)
            .map(|((v, mean), scale)| (v - mean) / scale)
            .collect();
        self.coefs
            .iter()
            .map(|c| c[0] + c[1..].iter().zip(&std).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }
}

/// Nearest-neighbor lookup under per-feature min-max normalization. Ties
/// resolve to the lowest training index.
#[derive(Clone, Debug)]
pub struct NearestModel {
    feats: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    mins: Vec<f64>,
    ranges: Vec<f64>,
}

pub fn fit_nearest(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<NearestModel, FitError> {
    let n = xs.len();
    if n == 0 {
        return Err(FitError::Empty);
    }
    let n_feat = xs[0].len();
    if xs.iter().any(|r| r.len() != n_feat) || ys.len() != n {
        return Err(FitError::Ragged);
    }
    let mut mins = vec![f64::INFINITY; n_feat];
    let mut maxs = vec![f64::NEG_INFINITY; n_feat];
    for row in xs {
        for ((min, max), v) in mins.iter_mut().zip(maxs.iter_mut()).zip(row) {
            *min = min.min(*v);
            *max = max.max(*v);
        }
    }
    let ranges: Vec<f64> = mins
        .iter()
        .zip(&maxs)
        .map(|(lo, hi)| if hi > lo { hi - lo } else { 1.0 })
        .collect();
    Ok(NearestModel { feats: xs.to_vec(), targets: ys.to_vec(), mins, ranges })
}

impl NearestModel {
    fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mins)
            .zip(&self.ranges)
            .map(|((v, min), range)| (v - min) / range)
            .collect()
    }

    pub fn nearest_index(&self, x: &[f64]) -> usize {
        let q = self.normalize(x);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, row) in self.feats.iter().enumerate() {
            let r = self.normalize(row);
            let d: f64 = r.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.targets[self.nearest_index(x)].clone()
    }
}

/// Shared immutable context for exact summaries: protocol wiring plus the
/// pricing needed to recompute derived credit variables.
#[derive(Clone, Debug)]
pub struct ExactContext {
    pub registry: TokenRegistry,
    pub protocols: BTreeMap<String, ProtocolConfig>,
    pub prices: BTreeMap<TokenId, BigRational>,
}

impl ExactContext {
    pub fn from_world(world: &World) -> Self {
        let mut prices = BTreeMap::new();
        for token in world.registry.ids() {
            if let Some(p) = world.state.price(token) {
                prices.insert(token, p.clone());
            }
        }
        ExactContext {
            registry: world.registry.clone(),
            protocols: world.protocols.clone(),
            prices,
        }
    }
}

/// Exact integer replica of one action over the declared variables.
/// Variables the formula needs but the annotation does not carry are frozen
/// at their construction-time values. Lookups consult the threaded
/// environment before the frozen copies, and any step that changes a
/// variable declares it as a poststate, so a sequence containing a writer
/// always sees the live value; the frozen copy answers only when no step
/// in the sequence touches the variable, where the initial value is right.
#[derive(Clone, Debug)]
pub struct ExactSummary {
    ctx: Arc<ExactContext>,
    captured: BTreeMap<VarRef, Amount>,
}

#[derive(Debug)]
enum ExactErr {
    Missing(VarRef),
    /// The reason string only surfaces through Debug formatting.
    Revert(#[allow(dead_code)] String),
}

struct ExactEnv<'a> {
    env: &'a mut BTreeMap<VarRef, Amount>,
    captured: &'a BTreeMap<VarRef, Amount>,
}

impl ExactEnv<'_> {
    fn get(&self, protocol: &str, var: &str) -> Result<Amount, ExactErr> {
        let key = VarRef::new(protocol, var);
        if let Some(v) = self.env.get(&key) {
            return Ok(*v);
        }
        if let Some(v) = self.captured.get(&key) {
            return Ok(*v);
        }
        Err(ExactErr::Missing(key))
    }

    fn set(&mut self, protocol: &str, var: &str, value: Amount) {
        self.env.insert(VarRef::new(protocol, var), value);
    }
}

impl ExactSummary {
    /// Applies the action to the environment, returning adversary balance
    /// deltas aligned with the spec's token_deltas list.
    fn apply(
        &self,
        spec: &ActionSpec,
        env: &mut BTreeMap<VarRef, Amount>,
        params: &[Amount],
    ) -> Result<Vec<Amount>, ExactErr> {
        let ctx = &*self.ctx;
        let cfg = ctx
            .protocols
            .get(&spec.protocol)
            .ok_or_else(|| ExactErr::Revert(format!("unknown protocol {}", spec.protocol)))?;
        let mut e = ExactEnv { env, captured: &self.captured };
        let mut deltas: BTreeMap<String, Amount> = BTreeMap::new();
        let bump = |sym: &str, amount: Amount, deltas: &mut BTreeMap<String, Amount>| {
            *deltas.entry(sym.to_string()).or_insert(0) += amount;
        };
        let id = spec.protocol.as_str();

        match (cfg, spec.method.as_str()) {
            (ProtocolConfig::StableSwap(ss), "exchange") => {
                let sym_in = spec.fixed.get("in").ok_or_else(|| ExactErr::Revert("no in".into()))?;
                let sym_out = spec.fixed.get("out").ok_or_else(|| ExactErr::Revert("no out".into()))?;
                let token_in = ctx.registry.lookup(sym_in).ok_or_else(|| ExactErr::Revert("bad in".into()))?;
                let token_out = ctx.registry.lookup(sym_out).ok_or_else(|| ExactErr::Revert("bad out".into()))?;
                let i = ss.coins.iter().position(|&c| c == token_in).ok_or_else(|| ExactErr::Revert("in not pooled".into()))?;
                let j = ss.coins.iter().position(|&c| c == token_out).ok_or_else(|| ExactErr::Revert("out not pooled".into()))?;
                let dx = params[0];
                let names: Vec<String> = ss.coins.iter().map(|&c| format!("balance_{}", ctx.registry.symbol(c))).collect();
                let mut balances = Vec::with_capacity(names.len());
                for name in &names {
                    balances.push(e.get(id, name)?);
                }
                let dy = stableswap::swap_out(ss, &balances, i, j, dx).map_err(|r| ExactErr::Revert(r.to_string()))?;
                e.set(id, &names[i], balances[i] + dx);
                e.set(id, &names[j], balances[j] - dy);
                bump(sym_in, -dx, &mut deltas);
                bump(sym_out, dy, &mut deltas);
            }
            (ProtocolConfig::ConstantProduct(cp), "swap") => {
                let sym_in = spec.fixed.get("in").ok_or_else(|| ExactErr::Revert("no in".into()))?;
                let token_in = ctx.registry.lookup(sym_in).ok_or_else(|| ExactErr::Revert("bad in".into()))?;
                let (t_in, t_out) = if token_in == cp.token0 {
                    (cp.token0, cp.token1)
                } else if token_in == cp.token1 {
                    (cp.token1, cp.token0)
                } else {
                    return Err(ExactErr::Revert("in not pooled".into()));
                };
                let in_name = format!("reserve_{}", ctx.registry.symbol(t_in));
                let out_name = format!("reserve_{}", ctx.registry.symbol(t_out));
                let dx = params[0];
                let r_in = e.get(id, &in_name)?;
                let r_out = e.get(id, &out_name)?;
                let dy = cpamm::swap_out(dx, r_in, r_out, cp.fee_num, cp.fee_den).map_err(|r| ExactErr::Revert(r.to_string()))?;
                e.set(id, &in_name, r_in + dx);
                e.set(id, &out_name, r_out - dy);
                bump(sym_in, -dx, &mut deltas);
                bump(ctx.registry.symbol(t_out), dy, &mut deltas);
            }
            (ProtocolConfig::ConstantProduct(cp), "mint") => {
                let (a0, a1) = (params[0], params[1]);
                let name0 = format!("reserve_{}", ctx.registry.symbol(cp.token0));
                let name1 = format!("reserve_{}", ctx.registry.symbol(cp.token1));
                let r0 = e.get(id, &name0)?;
                let r1 = e.get(id, &name1)?;
                let supply = e.get(id, "lp_supply")?;
                let minted = cpamm::mint_amount(a0, a1, r0, r1, supply).map_err(|r| ExactErr::Revert(r.to_string()))?;
                e.set(id, &name0, r0 + a0);
                e.set(id, &name1, r1 + a1);
                e.set(id, "lp_supply", supply + minted);
                bump(ctx.registry.symbol(cp.token0), -a0, &mut deltas);
                bump(ctx.registry.symbol(cp.token1), -a1, &mut deltas);
                bump(ctx.registry.symbol(cp.lp_token), minted, &mut deltas);
            }
            (ProtocolConfig::Vault(v), "deposit") => {
                let amount = params[0];
                let supply = e.get(id, "total_supply")?;
                let in_vault = e.get(id, "in_vault")?;
                let invested = exact_invested_value(ctx, &e, id, v)?;
                let minted = vault::deposit_mint(amount, supply, in_vault + invested).map_err(|r| ExactErr::Revert(r.to_string()))?;
                e.set(id, "in_vault", in_vault + amount);
                e.set(id, "total_supply", supply + minted);
                bump(ctx.registry.symbol(v.underlying), -amount, &mut deltas);
                bump(ctx.registry.symbol(v.share_token), minted, &mut deltas);
            }
            (ProtocolConfig::Vault(v), "withdraw") => {
                let shares = params[0];
                let supply = e.get(id, "total_supply")?;
                let in_vault = e.get(id, "in_vault")?;
                let invested = exact_invested_value(ctx, &e, id, v)?;
                let out = vault::withdraw_out(shares, supply, in_vault + invested).map_err(|r| ExactErr::Revert(r.to_string()))?;
                // The drained-buffer revert is not replicated: the negative
                // buffer shows up in the environment and the composition's
                // non-negativity constraints reject it instead.
                e.set(id, "in_vault", in_vault - out);
                e.set(id, "total_supply", supply - shares);
                bump(ctx.registry.symbol(v.share_token), -shares, &mut deltas);
                bump(ctx.registry.symbol(v.underlying), out, &mut deltas);
            }
            (ProtocolConfig::Lending(l), "provide_collateral") => {
                let lp = params[0];
                let account = account_of(spec)?;
                let var = format!("collateral.{account}");
                let current = e.get(id, &var)?;
                e.set(id, &var, current + lp);
                bump(ctx.registry.symbol(l.lp_token), -lp, &mut deltas);
            }
            (ProtocolConfig::Lending(_), "borrow") => {
                let sym = spec.fixed.get("token").ok_or_else(|| ExactErr::Revert("no token".into()))?;
                let token = ctx.registry.lookup(sym).ok_or_else(|| ExactErr::Revert("bad token".into()))?;
                let amount = params[0];
                let account = account_of(spec)?;
                let reserve_var = format!("reserve_{}", ctx.registry.symbol(token));
                let reserve = e.get(id, &reserve_var)?;
                let debt_var = format!("debt_{}.{account}", ctx.registry.symbol(token));
                let debt = e.get(id, &debt_var)?;
                e.set(id, &debt_var, debt + amount);
                e.set(id, &reserve_var, reserve - amount);
                bump(sym, amount, &mut deltas);
            }
            _ => return Err(ExactErr::Revert(format!("{}.{} has no exact summary", spec.protocol, spec.method))),
        }

        refresh_derived(ctx, &self.captured, env)?;
        Ok(spec
            .token_deltas
            .iter()
            .map(|sym| deltas.get(sym).copied().unwrap_or(0))
            .collect())
    }
}

/// Actions keyed by an account store it in the annotation: the poststate
/// list names e.g. "lend.credit.attacker", and the summary reuses that
/// account for the collateral and debt entries it updates.
fn account_of(spec: &ActionSpec) -> Result<String, ExactErr> {
    for var in spec.poststates.iter().chain(&spec.prestates) {
        for prefix in ["credit.", "collateral."] {
            if let Some(acct) = var.variable.strip_prefix(prefix) {
                return Ok(acct.to_string());
            }
        }
        if var.variable.starts_with("debt_") {
            if let Some((_, acct)) = var.variable.split_once('.') {
                return Ok(acct.to_string());
            }
        }
    }
    Err(ExactErr::Revert("annotation names no account".into()))
}

fn exact_invested_value(
    ctx: &ExactContext,
    e: &ExactEnv<'_>,
    vault_id: &str,
    v: &crate::protocols::VaultConfig,
) -> Result<Amount, ExactErr> {
    let principal = e.get(vault_id, "invested_principal")?;
    match &v.oracle_pool {
        None => Ok(principal),
        Some(pool_id) => {
            let Some(ProtocolConfig::StableSwap(ss)) = ctx.protocols.get(pool_id) else {
                return Err(ExactErr::Revert(format!("{pool_id} is not a stableswap pool")));
            };
            let mut balances = Vec::with_capacity(ss.coins.len());
            for &coin in &ss.coins {
                balances.push(e.get(pool_id, &format!("balance_{}", ctx.registry.symbol(coin)))?);
            }
            let idx = ss
                .coins
                .iter()
                .position(|&c| c == v.underlying)
                .ok_or_else(|| ExactErr::Revert("underlying not pooled".into()))?;
            Ok(vault::invested_value(principal, &balances, idx))
        }
    }
}

/// Recomputes every derived variable present in the environment from the
/// stored variables it depends on. Runs after each exact step so that
/// tracked derived values stay consistent with the stored ones.
fn refresh_derived(
    ctx: &ExactContext,
    captured: &BTreeMap<VarRef, Amount>,
    env: &mut BTreeMap<VarRef, Amount>,
) -> Result<(), ExactErr> {
    let keys: Vec<VarRef> = env.keys().cloned().collect();
    for key in keys {
        let Some(cfg) = ctx.protocols.get(&key.protocol) else { continue };
        match cfg {
            ProtocolConfig::Vault(v) => {
                if key.variable == "invested_value" {
                    let e = ExactEnv { env, captured };
                    let value = exact_invested_value(ctx, &e, &key.protocol, v)?;
                    env.insert(key, value);
                } else if key.variable == "with_investment" {
                    let e = ExactEnv { env, captured };
                    let value = e.get(&key.protocol, "in_vault")? + exact_invested_value(ctx, &e, &key.protocol, v)?;
                    env.insert(key, value);
                }
            }
            ProtocolConfig::Lending(l) => {
                if let Some(account) = key.variable.strip_prefix("credit.") {
                    let account = account.to_string();
                    let value = {
                        let e = ExactEnv { env, captured };
                        exact_credit(ctx, &e, &key.protocol, l, &account)?
                    };
                    env.insert(key, value);
                }
            }
            _ => {}
        }
    }
    Ok(())
}

fn exact_credit(
    ctx: &ExactContext,
    e: &ExactEnv<'_>,
    lend_id: &str,
    l: &crate::protocols::LendingConfig,
    account: &str,
) -> Result<Amount, ExactErr> {
    let Some(ProtocolConfig::ConstantProduct(cp)) = ctx.protocols.get(&l.lp_pool) else {
        return Err(ExactErr::Revert(format!("{} is not a pair", l.lp_pool)));
    };
    let r0 = e.get(&l.lp_pool, &format!("reserve_{}", ctx.registry.symbol(cp.token0)))?;
    let r1 = e.get(&l.lp_pool, &format!("reserve_{}", ctx.registry.symbol(cp.token1)))?;
    let supply = e.get(&l.lp_pool, "lp_supply")?;
    let pool_value = lending::pool_value_usd(&[
        (r0, ctx.prices.get(&cp.token0).cloned(), ctx.registry.decimals(cp.token0)),
        (r1, ctx.prices.get(&cp.token1).cloned(), ctx.registry.decimals(cp.token1)),
    ]);
    let collateral = e.get(lend_id, &format!("collateral.{account}"))?;
    let mut debt_value = BigRational::zero();
    for &token in &l.borrowable {
        let debt = e.get(lend_id, &format!("debt_{}.{account}", ctx.registry.symbol(token)))?;
        if debt != 0 {
            if let Some(price) = ctx.prices.get(&token) {
                let scale = BigInt::from(10u32).pow(ctx.registry.decimals(token));
                debt_value += BigRational::new(BigInt::from(debt), scale) * price;
            }
        }
    }
    Ok(lending::credit_micro_usd(
        collateral,
        supply,
        &pool_value,
        l.collateral_factor_num,
        l.collateral_factor_den,
        &debt_value,
    ))
}

/// One fitted model for one action.
#[derive(Clone, Debug)]
pub enum Model {
    Poly(PolyModel),
    Nearest(NearestModel),
    Exact(ExactSummary),
}

#[derive(Clone, Debug)]
pub struct ActionSurrogates {
    pub method: ApproxMethod,
    pub models: Vec<Model>,
}

pub fn features_of(point: &DataPoint) -> Vec<f64> {
    point
        .prestates
        .iter()
        .chain(&point.params)
        .map(|&v| v as f64)
        .collect()
}

pub fn targets_of(point: &DataPoint) -> Vec<f64> {
    point
        .poststates
        .iter()
        .chain(&point.deltas)
        .map(|&v| v as f64)
        .collect()
}

/// Fits one model per action. `datasets` is indexed like `specs`; exact
/// summaries ignore the data and are built from the world's wiring instead,
/// freezing undeclared variables after checking no action ever writes them.
pub fn fit_models(
    world: &World,
    specs: &[ActionSpec],
    datasets: &[Vec<DataPoint>],
    method: ApproxMethod,
    degree: usize,
) -> Result<ActionSurrogates, FitError> {
    let mut models = Vec::with_capacity(specs.len());
    match method {
        ApproxMethod::Exact => {
            let ctx = Arc::new(ExactContext::from_world(world));
            for spec in specs {
                models.push(Model::Exact(build_exact(world, spec, &ctx)?));
            }
        }
        _ => {
            let fitted: Result<Vec<Model>, FitError> = datasets
                .par_iter()
                .map(|points| {
                    if points.is_empty() {
                        return Err(FitError::Empty);
                    }
                    let xs: Vec<Vec<f64>> = points.iter().map(features_of).collect();
                    let ys: Vec<Vec<f64>> = points.iter().map(targets_of).collect();
                    match method {
                        ApproxMethod::Polynomial => Ok(Model::Poly(fit_polynomial(&xs, &ys, degree)?)),
                        ApproxMethod::NearestNeighbor => Ok(Model::Nearest(fit_nearest(&xs, &ys)?)),
                        ApproxMethod::Exact => unreachable!(),
                    }
                })
                .collect();
            models = fitted?;
        }
    }
    Ok(ActionSurrogates { method, models })
}

/// Discovers which undeclared variables an exact summary reads by running
/// it against an environment seeded only with the declared prestates,
/// capturing construction-time values one missing variable at a time.
fn build_exact(
    world: &World,
    spec: &ActionSpec,
    ctx: &Arc<ExactContext>,
) -> Result<ExactSummary, FitError> {
    let mut captured: BTreeMap<VarRef, Amount> = BTreeMap::new();
    let probe = crate::sampler::probe_params(spec);
    for _ in 0..64 {
        let mut env: BTreeMap<VarRef, Amount> = BTreeMap::new();
        for var in spec.prestates.iter().chain(&spec.poststates) {
            env.insert(var.clone(), world.read_var_ref(var).map_err(|e| FitError::Exact(e.to_string()))?);
        }
        let summary = ExactSummary { ctx: Arc::clone(ctx), captured: captured.clone() };
        match summary.apply(spec, &mut env, &probe) {
            Ok(_) => return Ok(summary),
            Err(ExactErr::Missing(var)) => {
                let value = world.read_var_ref(&var).map_err(|e| FitError::Exact(e.to_string()))?;
                captured.insert(var, value);
            }
            // A revert at the probe point still proves all reads resolved
            // up to that point; widen only on missing variables. Reverts
            // here are parameter artifacts, not wiring gaps.
            Err(ExactErr::Revert(_)) => {
                return Ok(ExactSummary { ctx: Arc::clone(ctx), captured })
            }
        }
    }
    Err(FitError::Exact(format!("{} cannot resolve its variable set", spec.name)))
}

/// Estimate of one composed sequence.
#[derive(Clone, Debug)]
pub struct VectorEstimate {
    pub profit_usd: f64,
    /// Sum of non-negativity violations across every step; zero when the
    /// composition is feasible end to end.
    pub violation: f64,
    pub per_step: Vec<StepEstimate>,
}

impl VectorEstimate {
    pub fn feasible(&self) -> bool {
        self.violation == 0.0
    }
}

/// Predicted outcome of one step, for divergence checks against actual
/// execution.
#[derive(Clone, Debug)]
pub struct StepEstimate {
    /// Environment after the step, keyed by tracked variable.
    pub env: BTreeMap<VarRef, f64>,
    /// Token deltas of the step itself, in the action's declared order.
    pub deltas: Vec<f64>,
}

/// Composes per-action models along a sequence. Holds everything needed to
/// evaluate candidate parameters repeatedly.
pub struct VectorEstimator {
    pub steps: Vec<usize>,
    pub arity: Vec<usize>,
    init_env: BTreeMap<VarRef, f64>,
    init_balances: BTreeMap<String, f64>,
    prices: BTreeMap<String, f64>,
}

#[derive(thiserror::Error, Debug)]
pub enum EstimatorError {
    #[error("cannot read {0}: {1}")]
    InitRead(String, String),
}

impl VectorEstimator {
    /// Reads initial values for every variable any step observes or
    /// changes, and the adversary's balance in every token any step moves.
    pub fn new(world: &World, specs: &[ActionSpec], vector: &AttackVector) -> Result<Self, EstimatorError> {
        let mut init_env = BTreeMap::new();
        let mut init_balances = BTreeMap::new();
        let mut prices = BTreeMap::new();
        for &a in &vector.actions {
            let spec = &specs[a];
            for var in spec.prestates.iter().chain(&spec.poststates) {
                if !init_env.contains_key(var) {
                    let v = world
                        .read_var_ref(var)
                        .map_err(|e| EstimatorError::InitRead(var.to_string(), e.to_string()))?;
                    init_env.insert(var.clone(), v as f64);
                }
            }
            for sym in &spec.token_deltas {
                if !init_balances.contains_key(sym) {
                    let token = world.registry.lookup(sym).expect("validated at load");
                    init_balances.insert(sym.clone(), world.adversary_balance(token) as f64);
                    let price = world
                        .state
                        .price(token)
                        .map(rational_to_f64)
                        .unwrap_or(0.0);
                    prices.insert(sym.clone(), price / 10f64.powi(world.registry.decimals(token) as i32));
                }
            }
        }
        Ok(VectorEstimator {
            steps: vector.actions.clone(),
            arity: vector.actions.iter().map(|&a| specs[a].arity()).collect(),
            init_env,
            init_balances,
            prices,
        })
    }

    pub fn total_arity(&self) -> usize {
        self.arity.iter().sum()
    }

    /// Tracked variables, in key order.
    pub fn tracked_vars(&self) -> Vec<VarRef> {
        self.init_env.keys().cloned().collect()
    }

    pub fn tracked_tokens(&self) -> Vec<String> {
        self.init_balances.keys().cloned().collect()
    }

    /// Evaluates the composition at one flat parameter assignment (step
    /// parameters concatenated in order).
    pub fn estimate(
        &self,
        specs: &[ActionSpec],
        surrogates: &ActionSurrogates,
        flat_params: &[Amount],
    ) -> VectorEstimate {
        debug_assert_eq!(flat_params.len(), self.total_arity());
        let mut env = self.init_env.clone();
        let mut balances = self.init_balances.clone();
        let mut violation = 0.0f64;
        let mut per_step = Vec::with_capacity(self.steps.len());
        let mut offset = 0usize;

        for (step, &a) in self.steps.iter().enumerate() {
            let spec = &specs[a];
            let params = &flat_params[offset..offset + self.arity[step]];
            offset += self.arity[step];
            let step_deltas = match &surrogates.models[a] {
                Model::Exact(exact) => {
                    let mut amount_env: BTreeMap<VarRef, Amount> =
                        env.iter().map(|(k, v)| (k.clone(), *v as Amount)).collect();
                    match exact.apply(spec, &mut amount_env, params) {
                        Ok(deltas) => {
                            for (k, v) in &amount_env {
                                env.insert(k.clone(), *v as f64);
                            }
                            Some(deltas.iter().map(|&d| d as f64).collect::<Vec<f64>>())
                        }
                        Err(_) => None,
                    }
                }
                model => {
                    let x: Vec<f64> = spec
                        .prestates
                        .iter()
                        .map(|v| env.get(v).copied().unwrap_or(0.0))
                        .chain(params.iter().map(|&p| p as f64))
                        .collect();
                    let out = match model {
                        Model::Poly(m) => m.predict(&x),
                        Model::Nearest(m) => m.predict(&x),
                        Model::Exact(_) => unreachable!(),
                    };
                    if out.iter().any(|v| !v.is_finite()) {
                        None
                    } else {
                        for (var, v) in spec.poststates.iter().zip(&out) {
                            env.insert(var.clone(), *v);
                        }
                        Some(out[spec.poststates.len()..].to_vec())
                    }
                }
            };
            let Some(step_deltas) = step_deltas else {
                violation += STEP_FAILURE_VIOLATION;
                break;
            };
            for (sym, d) in spec.token_deltas.iter().zip(&step_deltas) {
                *balances.entry(sym.clone()).or_insert(0.0) += *d;
            }
            // One constraint per (token, account): adversary ledger
            // balances and protocol holdings. Derived variables stay
            // unconstrained; a walk-away sequence can end with negative
            // borrow headroom and still be executable.
            for (var, v) in &env {
                if *v < 0.0 && crate::protocols::is_holding_var(&var.variable) {
                    violation += -v;
                }
            }
            for v in balances.values() {
                if *v < 0.0 {
                    violation += -v;
                }
            }
            per_step.push(StepEstimate { env: env.clone(), deltas: step_deltas });
        }

        let profit_usd = balances
            .iter()
            .map(|(sym, v)| (v - self.init_balances.get(sym).copied().unwrap_or(0.0)) * self.prices.get(sym).copied().unwrap_or(0.0))
            .sum();
        VectorEstimate { profit_usd, violation, per_step }
    }
}

/// Componentwise relative error of a model on held-out points, maximized
/// over targets and points: |pred - actual| / max(1, |actual|).
pub fn max_relative_error(model: &Model, points: &[DataPoint]) -> f64 {
    let mut worst = 0.0f64;
    for p in points {
        let x = features_of(p);
        let actual = targets_of(p);
        let pred = match model {
            Model::Poly(m) => m.predict(&x),
            Model::Nearest(m) => m.predict(&x),
            Model::Exact(_) => panic!("exact summaries are not pointwise models"),
        };
        for (a, b) in actual.iter().zip(&pred) {
            let err = (a - b).abs() / a.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomials_cover_degree_two() {
        let exps = monomial_exponents(2, 2);
        // x, y, x^2, xy, y^2 in graded order.
        assert_eq!(exps, vec![
            vec![1, 0],
            vec![0, 1],
            vec![2, 0],
            vec![1, 1],
            vec![0, 2],
        ]);
    }

    #[test]
    fn poly_recovers_quadratic() {
        let xs: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![i as f64, (i * 7 % 13) as f64])
            .collect();
        let ys: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| vec![3.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1] + 0.25 * x[1] * x[1]])
            .collect();
        let model = fit_polynomial(&xs, &ys, 2).unwrap();
        for x in &[vec![3.5, 8.0], vec![41.0, 2.0]] {
            let expected = 3.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1] + 0.25 * x[1] * x[1];
            let got = model.predict(x)[0];
            assert!((got - expected).abs() / expected.abs().max(1.0) < 1e-9, "{got} vs {expected}");
        }
    }

    #[test]
    fn nearest_breaks_ties_to_lowest_index() {
        let xs = vec![vec![0.0], vec![2.0], vec![2.0]];
        let ys = vec![vec![10.0], vec![20.0], vec![30.0]];
        let model = fit_nearest(&xs, &ys).unwrap();
        assert_eq!(model.predict(&[2.0]), vec![20.0]);
        assert_eq!(model.predict(&[1.9]), vec![20.0]);
        assert_eq!(model.predict(&[0.4]), vec![10.0]);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        // One distinct x value cannot identify a quadratic.
        let xs = vec![vec![5.0]; 10];
        let ys = vec![vec![1.0]; 10];
        let model = fit_polynomial(&xs, &ys, 2).unwrap();
        assert!(model.rank_deficient);
    }
}
