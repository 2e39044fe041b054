//! Benchmark definitions: a TOML file declares tokens, protocol instances,
//! the adversary's starting capital, the action templates the search may
//! compose, and optionally a known profitable sequence that must replay
//! successfully when the file loads.

use crate::actionspec::{validate_spec, ActionSpec, ParamSpec, SpecError, VarRef};
use crate::intmath::Amount;
use crate::ledger::{parse_rational, LedgerState, TokenRegistry};
use crate::protocols::{
    ConstantProductConfig, LendingConfig, ProtocolConfig, StableSwapConfig, VaultConfig,
};
use crate::world::World;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct Benchmark {
    pub name: String,
    pub description: String,
    pub world: World,
    pub actions: Vec<ActionSpec>,
    pub ground_truth: Option<GroundTruth>,
    pub overrides: SearchOverrides,
}

#[derive(Clone, Debug)]
pub struct GroundTruth {
    /// Indices into `actions`.
    pub actions: Vec<usize>,
    pub params: Vec<Vec<Amount>>,
    pub min_profit_usd: f64,
    /// Profit measured by replaying against the initial world.
    pub profit_usd: f64,
}

/// Optional per-benchmark tuning knobs; unset fields fall back to the
/// search defaults.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchOverrides {
    pub max_length: Option<usize>,
    pub epsilon: Option<String>,
    pub degree: Option<usize>,
    pub initial_points: Option<usize>,
    pub iterations: Option<usize>,
    pub timeout_secs: Option<u64>,
    pub max_repeats: Option<usize>,
}

#[derive(thiserror::Error, Debug)]
pub enum BenchmarkError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Toml { path: String, source: toml::de::Error },
    #[error("bad amount {0:?}: {1}")]
    BadAmount(String, String),
    #[error("bad price {0:?}")]
    BadPrice(String),
    #[error("token error: {0}")]
    Token(#[from] crate::ledger::LedgerError),
    #[error("unknown token {0}")]
    UnknownToken(String),
    #[error("protocol {0}: {1}")]
    BadProtocol(String, String),
    #[error("duplicate protocol id {0}")]
    DuplicateProtocol(String),
    #[error("action {0}: {1}")]
    BadAction(String, String),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("bootstrap account would need negative {token} ({short} short)")]
    Oversubscribed { token: String, short: Amount },
    #[error("ground truth: {0}")]
    GroundTruth(String),
}

/// TOML integers stop at i64, so large amounts may be written as strings,
/// with optional underscores and an optional `e<k>` power-of-ten suffix:
/// 1500000, "1_500_000", "15e5" all parse to the same value.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum AmountLike {
    Int(i64),
    Str(String),
}

impl AmountLike {
    fn value(&self) -> Result<Amount, BenchmarkError> {
        match self {
            AmountLike::Int(v) => Ok(*v as Amount),
            AmountLike::Str(s) => parse_amount(s).map_err(|e| BenchmarkError::BadAmount(s.clone(), e)),
        }
    }
}

pub fn parse_amount(s: &str) -> Result<Amount, String> {
    let clean: String = s.chars().filter(|c| *c != '_').collect();
    let (mantissa, exp) = match clean.split_once(['e', 'E']) {
        Some((m, e)) => {
            let exp: u32 = e.parse().map_err(|_| format!("bad exponent {e:?}"))?;
            (m, exp)
        }
        None => (clean.as_str(), 0),
    };
    let base: Amount = mantissa.parse().map_err(|_| format!("bad integer {mantissa:?}"))?;
    let mut value = base;
    for _ in 0..exp {
        value = value.checked_mul(10).ok_or_else(|| "overflows i128".to_string())?;
    }
    Ok(value)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchmarkFile {
    name: String,
    #[serde(default)]
    description: String,
    adversary: String,
    /// Account that absorbs pre-existing share and LP supply so that token
    /// totals reconcile with supply variables.
    #[serde(default = "default_bootstrap")]
    bootstrap_account: String,
    tokens: Vec<TokenDecl>,
    #[serde(default)]
    holdings: Vec<HoldingDecl>,
    protocols: Vec<ProtocolDecl>,
    /// Mining fixtures supply a world only; actions then come from traces.
    #[serde(default)]
    actions: Vec<ActionDecl>,
    ground_truth: Option<GroundTruthDecl>,
    #[serde(default)]
    search: SearchOverrides,
}

fn default_bootstrap() -> String {
    "depositors".to_string()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenDecl {
    symbol: String,
    decimals: u32,
    /// USD per whole token, exact: "1", "3/2", "0.25".
    price: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HoldingDecl {
    account: String,
    token: String,
    amount: AmountLike,
}

#[derive(Deserialize)]
struct ProtocolDecl {
    id: String,
    #[serde(flatten)]
    kind: ProtocolKindDecl,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ProtocolKindDecl {
    Stableswap {
        coins: Vec<String>,
        amp: u64,
        fee_num: u64,
        fee_den: u64,
        balances: Vec<AmountLike>,
    },
    ConstantProduct {
        token0: String,
        token1: String,
        lp_token: String,
        fee_num: u64,
        fee_den: u64,
        reserves: Vec<AmountLike>,
        lp_supply: AmountLike,
    },
    Vault {
        underlying: String,
        share_token: String,
        oracle_pool: Option<String>,
        in_vault: AmountLike,
        invested_principal: AmountLike,
        total_supply: AmountLike,
    },
    Lending {
        lp_pool: String,
        lp_token: String,
        collateral_factor: [u64; 2],
        borrowable: Vec<String>,
        reserves: BTreeMap<String, AmountLike>,
        /// Pre-existing collateral positions, account to LP amount. These
        /// tokens sit in the market's escrow, not in any ledger balance.
        #[serde(default)]
        collateral: BTreeMap<String, AmountLike>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ActionDecl {
    name: String,
    protocol: String,
    method: String,
    #[serde(default)]
    fixed: BTreeMap<String, String>,
    #[serde(default)]
    params: Vec<ParamDecl>,
    prestates: Vec<String>,
    poststates: Vec<String>,
    token_deltas: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamDecl {
    name: String,
    #[serde(default)]
    lower: Option<AmountLike>,
    /// Defaults to the adversary's initial holding of `consumes`.
    #[serde(default)]
    upper: Option<AmountLike>,
    #[serde(default)]
    consumes: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GroundTruthDecl {
    actions: Vec<String>,
    params: Vec<Vec<AmountLike>>,
    #[serde(default)]
    min_profit_usd: f64,
}

pub fn load_path(path: &Path) -> Result<Benchmark, BenchmarkError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| BenchmarkError::Io { path: path.display().to_string(), source })?;
    load_str(&text, &path.display().to_string())
}

pub fn load_str(text: &str, origin: &str) -> Result<Benchmark, BenchmarkError> {
    let file: BenchmarkFile = toml::from_str(text)
        .map_err(|source| BenchmarkError::Toml { path: origin.to_string(), source })?;
    build(file)
}

fn build(file: BenchmarkFile) -> Result<Benchmark, BenchmarkError> {
    let mut registry = TokenRegistry::default();
    let mut state = LedgerState::default();
    for t in &file.tokens {
        let id = registry.register(&t.symbol, t.decimals)?;
        if let Some(price) = &t.price {
            let p = parse_rational(price).map_err(|_| BenchmarkError::BadPrice(price.clone()))?;
            state.set_price(id, p);
        }
    }
    let lookup = |sym: &str| -> Result<crate::ledger::TokenId, BenchmarkError> {
        registry.lookup(sym).ok_or_else(|| BenchmarkError::UnknownToken(sym.to_string()))
    };

    let mut protocols = BTreeMap::new();
    // (token, supply) pairs whose pre-existing supply must land in accounts.
    let mut supplies: Vec<(crate::ledger::TokenId, Amount)> = Vec::new();
    // Tokens escrowed by a protocol rather than held in a ledger balance.
    let mut escrows: BTreeMap<crate::ledger::TokenId, Amount> = BTreeMap::new();
    for decl in &file.protocols {
        if protocols.contains_key(&decl.id) {
            return Err(BenchmarkError::DuplicateProtocol(decl.id.clone()));
        }
        let cfg = match &decl.kind {
            ProtocolKindDecl::Stableswap { coins, amp, fee_num, fee_den, balances } => {
                if coins.len() < 2 || coins.len() != balances.len() {
                    return Err(BenchmarkError::BadProtocol(
                        decl.id.clone(),
                        "needs matching coins and balances, at least two".into(),
                    ));
                }
                let ids: Vec<_> = coins.iter().map(|s| lookup(s)).collect::<Result<_, _>>()?;
                for (sym, bal) in coins.iter().zip(balances) {
                    let tok = lookup(sym)?;
                    state.set_var(&decl.id, &format!("balance_{}", registry.symbol(tok)), bal.value()?);
                }
                ProtocolConfig::StableSwap(StableSwapConfig {
                    coins: ids,
                    amp: *amp,
                    fee_num: *fee_num,
                    fee_den: *fee_den,
                })
            }
            ProtocolKindDecl::ConstantProduct { token0, token1, lp_token, fee_num, fee_den, reserves, lp_supply } => {
                if reserves.len() != 2 {
                    return Err(BenchmarkError::BadProtocol(decl.id.clone(), "needs two reserves".into()));
                }
                let t0 = lookup(token0)?;
                let t1 = lookup(token1)?;
                let lp = lookup(lp_token)?;
                if t0 == t1 {
                    return Err(BenchmarkError::BadProtocol(decl.id.clone(), "token0 equals token1".into()));
                }
                state.set_var(&decl.id, &format!("reserve_{}", registry.symbol(t0)), reserves[0].value()?);
                state.set_var(&decl.id, &format!("reserve_{}", registry.symbol(t1)), reserves[1].value()?);
                let supply = lp_supply.value()?;
                state.set_var(&decl.id, "lp_supply", supply);
                supplies.push((lp, supply));
                ProtocolConfig::ConstantProduct(ConstantProductConfig {
                    token0: t0,
                    token1: t1,
                    lp_token: lp,
                    fee_num: *fee_num,
                    fee_den: *fee_den,
                })
            }
            ProtocolKindDecl::Vault { underlying, share_token, oracle_pool, in_vault, invested_principal, total_supply } => {
                let u = lookup(underlying)?;
                let sh = lookup(share_token)?;
                state.set_var(&decl.id, "in_vault", in_vault.value()?);
                state.set_var(&decl.id, "invested_principal", invested_principal.value()?);
                let supply = total_supply.value()?;
                state.set_var(&decl.id, "total_supply", supply);
                supplies.push((sh, supply));
                ProtocolConfig::Vault(VaultConfig { underlying: u, share_token: sh, oracle_pool: oracle_pool.clone() })
            }
            ProtocolKindDecl::Lending { lp_pool, lp_token, collateral_factor, borrowable, reserves, collateral } => {
                let lp = lookup(lp_token)?;
                let tokens: Vec<_> = borrowable.iter().map(|s| lookup(s)).collect::<Result<_, _>>()?;
                for sym in borrowable {
                    let tok = lookup(sym)?;
                    let amount = reserves
                        .get(sym)
                        .ok_or_else(|| BenchmarkError::BadProtocol(decl.id.clone(), format!("no reserve for {sym}")))?
                        .value()?;
                    state.set_var(&decl.id, &format!("reserve_{}", registry.symbol(tok)), amount);
                }
                for (account, amount) in collateral {
                    let v = amount.value()?;
                    state.set_var(&decl.id, &format!("collateral.{account}"), v);
                    *escrows.entry(lp).or_insert(0) += v;
                }
                if collateral_factor[1] == 0 || collateral_factor[0] > collateral_factor[1] {
                    return Err(BenchmarkError::BadProtocol(decl.id.clone(), "collateral factor must be ≤ 1".into()));
                }
                ProtocolConfig::Lending(LendingConfig {
                    lp_pool: lp_pool.clone(),
                    lp_token: lp,
                    collateral_factor_num: collateral_factor[0],
                    collateral_factor_den: collateral_factor[1],
                    borrowable: tokens,
                })
            }
        };
        protocols.insert(decl.id.clone(), cfg);
    }

    // Cross-protocol links must point at instances of the right kind.
    for (id, cfg) in &protocols {
        match cfg {
            ProtocolConfig::Vault(v) => {
                if let Some(pool) = &v.oracle_pool {
                    match protocols.get(pool) {
                        Some(ProtocolConfig::StableSwap(ss)) if ss.coins.contains(&v.underlying) => {}
                        Some(ProtocolConfig::StableSwap(_)) => {
                            return Err(BenchmarkError::BadProtocol(id.clone(), "underlying not in oracle pool".into()))
                        }
                        _ => return Err(BenchmarkError::BadProtocol(id.clone(), format!("oracle pool {pool} is not a stableswap pool"))),
                    }
                }
            }
            ProtocolConfig::Lending(l) => match protocols.get(&l.lp_pool) {
                Some(ProtocolConfig::ConstantProduct(cp)) if cp.lp_token == l.lp_token => {}
                Some(ProtocolConfig::ConstantProduct(_)) => {
                    return Err(BenchmarkError::BadProtocol(id.clone(), "lp_token differs from the pair's".into()))
                }
                _ => return Err(BenchmarkError::BadProtocol(id.clone(), format!("lp pool {} is not a pair", l.lp_pool))),
            },
            _ => {}
        }
    }

    for h in &file.holdings {
        let tok = lookup(&h.token)?;
        state.credit(&h.account, tok, h.amount.value()?);
    }

    // Share and LP supplies must equal the sum of account balances plus
    // protocol escrow; the remainder after explicit holdings goes to the
    // bootstrap account.
    for (token, supply) in supplies {
        let held: Amount = state.accounts().map(|a| state.balance(a, token)).sum::<Amount>();
        let rest = supply - held - escrows.get(&token).copied().unwrap_or(0);
        if rest < 0 {
            return Err(BenchmarkError::Oversubscribed {
                token: registry.symbol(token).to_string(),
                short: -rest,
            });
        }
        state.credit(&file.bootstrap_account, token, rest);
    }

    let world = World {
        registry,
        protocols,
        adversary: file.adversary.clone(),
        state,
    };

    let mut actions = Vec::with_capacity(file.actions.len());
    for decl in &file.actions {
        let bad = |why: String| BenchmarkError::BadAction(decl.name.clone(), why);
        let mut params = Vec::with_capacity(decl.params.len());
        for p in &decl.params {
            let lower = match &p.lower {
                Some(v) => v.value()?,
                None => 1,
            };
            let upper = match (&p.upper, &p.consumes) {
                (Some(v), _) => v.value()?,
                (None, Some(sym)) => {
                    let tok = world.registry.lookup(sym).ok_or_else(|| BenchmarkError::UnknownToken(sym.clone()))?;
                    world.adversary_balance(tok)
                }
                (None, None) => return Err(bad(format!("parameter {} needs an upper bound", p.name))),
            };
            params.push(ParamSpec { name: p.name.clone(), lower, upper, consumes: p.consumes.clone() });
        }
        let parse_refs = |refs: &[String]| -> Result<Vec<VarRef>, BenchmarkError> {
            refs.iter().map(|s| VarRef::parse(s).map_err(|e| bad(e.to_string()))).collect()
        };
        let outputs = infer_outputs(&world, &decl.protocol, &decl.method, &decl.fixed)
            .map_err(|why| bad(why))?;
        let spec = ActionSpec {
            name: decl.name.clone(),
            protocol: decl.protocol.clone(),
            method: decl.method.clone(),
            fixed: decl.fixed.clone(),
            params,
            prestates: parse_refs(&decl.prestates)?,
            poststates: parse_refs(&decl.poststates)?,
            token_deltas: decl.token_deltas.clone(),
            outputs,
        };
        if actions.iter().any(|a: &ActionSpec| a.name == spec.name) {
            return Err(bad("duplicate action name".into()));
        }
        validate_spec(&spec, &world)?;
        // Profit accounting needs a price for every token an action moves.
        for sym in &spec.token_deltas {
            let tok = world.registry.lookup(sym).unwrap();
            if world.state.price(tok).is_none() {
                return Err(bad(format!("token {sym} moves value but has no price")));
            }
        }
        actions.push(spec);
    }

    let ground_truth = match &file.ground_truth {
        None => None,
        Some(decl) => Some(replay_ground_truth(&world, &actions, decl)?),
    };

    Ok(Benchmark {
        name: file.name,
        description: file.description,
        world,
        actions,
        ground_truth,
        overrides: file.search,
    })
}

/// Tokens a method credits back to the caller, determined by what the
/// method does with its fixed arguments.
/// Output tokens for a mined candidate. Mining has already probed the call
/// successfully, so an unrecognized shape degrades to "credits nothing"
/// rather than failing the whole run.
pub fn mined_outputs(
    world: &World,
    protocol: &str,
    method: &str,
    fixed: &BTreeMap<String, String>,
) -> Vec<String> {
    infer_outputs(world, protocol, method, fixed).unwrap_or_default()
}

fn infer_outputs(
    world: &World,
    protocol: &str,
    method: &str,
    fixed: &BTreeMap<String, String>,
) -> Result<Vec<String>, String> {
    let cfg = world.protocols.get(protocol).ok_or_else(|| format!("unknown protocol {protocol}"))?;
    let sym = |t: crate::ledger::TokenId| world.registry.symbol(t).to_string();
    match (cfg, method) {
        (ProtocolConfig::StableSwap(_), "exchange") => {
            let out = fixed.get("out").ok_or("exchange needs fixed.out")?;
            Ok(vec![out.clone()])
        }
        (ProtocolConfig::ConstantProduct(cp), "swap") => {
            let input = fixed.get("in").ok_or("swap needs fixed.in")?;
            if input == &sym(cp.token0) {
                Ok(vec![sym(cp.token1)])
            } else {
                Ok(vec![sym(cp.token0)])
            }
        }
        (ProtocolConfig::ConstantProduct(cp), "mint") => Ok(vec![sym(cp.lp_token)]),
        (ProtocolConfig::Vault(v), "deposit") => Ok(vec![sym(v.share_token)]),
        (ProtocolConfig::Vault(v), "withdraw") => Ok(vec![sym(v.underlying)]),
        (ProtocolConfig::Lending(_), "provide_collateral") => Ok(vec![]),
        (ProtocolConfig::Lending(_), "borrow") => {
            let token = fixed.get("token").ok_or("borrow needs fixed.token")?;
            Ok(vec![token.clone()])
        }
        _ => Err(format!("{protocol} has no method {method}")),
    }
}

/// Replays the declared sequence against a copy of the initial world; it
/// must execute without reverting and clear its profit floor.
fn replay_ground_truth(
    world: &World,
    actions: &[ActionSpec],
    decl: &GroundTruthDecl,
) -> Result<GroundTruth, BenchmarkError> {
    if decl.actions.len() != decl.params.len() {
        return Err(BenchmarkError::GroundTruth("one parameter vector per action required".into()));
    }
    let mut indices = Vec::with_capacity(decl.actions.len());
    for name in &decl.actions {
        let idx = actions
            .iter()
            .position(|a| &a.name == name)
            .ok_or_else(|| BenchmarkError::GroundTruth(format!("unknown action {name}")))?;
        indices.push(idx);
    }
    let mut params = Vec::with_capacity(decl.params.len());
    for (step, raw) in decl.params.iter().enumerate() {
        if raw.len() != actions[indices[step]].arity() {
            return Err(BenchmarkError::GroundTruth(format!(
                "step {} takes {} parameter(s)",
                step + 1,
                actions[indices[step]].arity()
            )));
        }
        let vals: Vec<Amount> = raw.iter().map(|v| v.value()).collect::<Result<_, _>>()?;
        params.push(vals);
    }

    let mut scratch = world.clone();
    let before = scratch.state.clone();
    for (step, (&idx, vals)) in indices.iter().zip(&params).enumerate() {
        let spec = &actions[idx];
        scratch
            .execute(&spec.protocol, &spec.method, &spec.fixed, vals)
            .map_err(|(err, _)| BenchmarkError::GroundTruth(format!("step {} ({}) fails: {err}", step + 1, spec.name)))?;
    }
    let report = crate::ledger::profit(&before, &scratch.state, &scratch.adversary, &scratch.registry);
    let profit_usd = crate::ledger::rational_to_f64(&report.usd);
    if profit_usd <= decl.min_profit_usd {
        return Err(BenchmarkError::GroundTruth(format!(
            "profit {profit_usd} does not clear the floor {}",
            decl.min_profit_usd
        )));
    }
    Ok(GroundTruth {
        actions: indices,
        params,
        min_profit_usd: decl.min_profit_usd,
        profit_usd,
    })
}
