//! Executable protocol models and the instrumented call layer.
//!
//! Protocol configs are immutable; every mutable quantity lives in the
//! `LedgerState` as a `(protocol, variable)` entry, so snapshot/restore of
//! the ledger covers protocol state for free. Calls route all variable and
//! balance access through `ExecCtx`, which optionally records storage reads
//! and writes for dependency analysis.

pub mod cpamm;
pub mod lending;
pub mod stableswap;
pub mod vault;

use crate::intmath::Amount;
use crate::ledger::{AccountId, LedgerState, Revert, TokenId, TokenRegistry};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use std::collections::{BTreeMap, BTreeSet};

pub use cpamm::ConstantProductConfig;
pub use lending::LendingConfig;
pub use stableswap::StableSwapConfig;
pub use vault::VaultConfig;

#[derive(Clone, Debug)]
pub enum ProtocolConfig {
    StableSwap(StableSwapConfig),
    ConstantProduct(ConstantProductConfig),
    Vault(VaultConfig),
    Lending(LendingConfig),
}

#[derive(thiserror::Error, Clone, Debug, PartialEq, Eq)]
pub enum CallError {
    #[error(transparent)]
    Revert(#[from] Revert),
    #[error("unknown protocol {0}")]
    UnknownProtocol(String),
    #[error("{protocol} has no method {method}")]
    UnknownMethod { protocol: String, method: String },
    #[error("{method} needs fixed argument {arg}")]
    BadFixedArg { method: String, arg: String },
    #[error("{method} takes {expected} parameter(s), got {got}")]
    BadArity { method: String, expected: usize, got: usize },
    #[error("unknown variable {protocol}.{var}")]
    UnknownVar { protocol: String, var: String },
    #[error("protocol {0} is mis-linked: {1}")]
    BadLink(String, String),
}

impl CallError {
    /// Reverts are expected probe outcomes; everything else is a wiring bug.
    pub fn is_revert(&self) -> bool {
        matches!(self, CallError::Revert(_))
    }
}

/// Storage touch log for one call: variable names as "protocol.var", ledger
/// balances as "balance.account.SYMBOL". Sender-scoped entries are the
/// caller-keyed ones dependency analysis ignores.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TraceCapture {
    pub reads: BTreeSet<String>,
    pub writes: BTreeSet<String>,
    pub sender_scoped: BTreeSet<String>,
}

pub struct ExecCtx<'a> {
    pub registry: &'a TokenRegistry,
    pub protocols: &'a BTreeMap<String, ProtocolConfig>,
    pub state: &'a mut LedgerState,
    pub caller: AccountId,
    pub trace: Option<&'a mut TraceCapture>,
}

impl<'a> ExecCtx<'a> {
    fn record_read(&mut self, key: String, sender_scoped: bool) {
        if let Some(trace) = self.trace.as_deref_mut() {
            if sender_scoped {
                trace.sender_scoped.insert(key.clone());
            }
            trace.reads.insert(key);
        }
    }

    fn record_write(&mut self, key: String, sender_scoped: bool) {
        if let Some(trace) = self.trace.as_deref_mut() {
            if sender_scoped {
                trace.sender_scoped.insert(key.clone());
            }
            trace.writes.insert(key);
        }
    }

    pub fn read_var(&mut self, protocol: &str, var: &str) -> Result<Amount, CallError> {
        let mut trace_reads: Vec<String> = Vec::new();
        let value = resolve_var(
            self.registry,
            self.protocols,
            self.state,
            protocol,
            var,
            Some(&mut trace_reads),
        )?;
        for key in trace_reads {
            self.record_read(key, false);
        }
        Ok(value)
    }

    pub fn write_var(&mut self, protocol: &str, var: &str, value: Amount) {
        self.record_write(format!("{protocol}.{var}"), false);
        self.state.set_var(protocol, var, value);
    }

    pub fn debit_caller(&mut self, token: TokenId, amount: Amount) -> Result<(), CallError> {
        let key = balance_key(&self.caller, self.registry.symbol(token));
        self.record_read(key.clone(), true);
        self.record_write(key, true);
        let caller = self.caller.clone();
        self.state.debit(&caller, token, amount, self.registry).map_err(CallError::from)
    }

    pub fn credit_caller(&mut self, token: TokenId, amount: Amount) {
        let key = balance_key(&self.caller, self.registry.symbol(token));
        self.record_write(key, true);
        let caller = self.caller.clone();
        self.state.credit(&caller, token, amount);
    }
}

fn balance_key(account: &str, symbol: &str) -> String {
    format!("balance.{account}.{symbol}")
}

/// Whether a protocol variable names tokens physically held somewhere:
/// pool balances, pair and market reserves, the vault's idle underlying,
/// escrowed collateral. Holdings must stay non-negative along any
/// trajectory; derived quantities (credit, invested_value) and supplies
/// carry no such bound and may legitimately run negative or be driven to
/// zero mid-sequence.
pub fn is_holding_var(var: &str) -> bool {
    var.starts_with("balance_")
        || var.starts_with("reserve_")
        || var == "in_vault"
        || var.starts_with("collateral.")
}

/// Resolves a protocol variable, stored or derived. When `trace` is given,
/// every underlying stored read lands in it (derived reads expand to the
/// stored variables they consult, across protocols).
pub fn resolve_var(
    registry: &TokenRegistry,
    protocols: &BTreeMap<String, ProtocolConfig>,
    state: &LedgerState,
    protocol: &str,
    var: &str,
    mut trace: Option<&mut Vec<String>>,
) -> Result<Amount, CallError> {
    let cfg = protocols
        .get(protocol)
        .ok_or_else(|| CallError::UnknownProtocol(protocol.to_string()))?;

    let note = |key: String, trace: &mut Option<&mut Vec<String>>| {
        if let Some(log) = trace {
            log.push(key);
        }
    };

    // Stored variables resolve directly.
    if let Some(value) = state.var(protocol, var) {
        note(format!("{protocol}.{var}"), &mut trace);
        return Ok(value);
    }

    match cfg {
        ProtocolConfig::Vault(v) => match var {
            "invested_value" => {
                note(format!("{protocol}.invested_value"), &mut trace);
                let principal = recurse(registry, protocols, state, protocol, "invested_principal", &mut trace)?;
                match &v.oracle_pool {
                    None => Ok(principal),
                    Some(pool_id) => {
                        let pool = protocols
                            .get(pool_id)
                            .ok_or_else(|| CallError::BadLink(protocol.into(), format!("oracle pool {pool_id} missing")))?;
                        let ProtocolConfig::StableSwap(ss) = pool else {
                            return Err(CallError::BadLink(protocol.into(), format!("{pool_id} is not a stableswap pool")));
                        };
                        let mut balances = Vec::with_capacity(ss.coins.len());
                        for &coin in &ss.coins {
                            let name = format!("balance_{}", registry.symbol(coin));
                            balances.push(recurse(registry, protocols, state, pool_id, &name, &mut trace)?);
                        }
                        let idx = ss
                            .coins
                            .iter()
                            .position(|&c| c == v.underlying)
                            .ok_or_else(|| CallError::BadLink(protocol.into(), "underlying not in oracle pool".into()))?;
                        Ok(vault::invested_value(principal, &balances, idx))
                    }
                }
            }
            "with_investment" => {
                note(format!("{protocol}.with_investment"), &mut trace);
                let in_vault = recurse(registry, protocols, state, protocol, "in_vault", &mut trace)?;
                let invested = recurse(registry, protocols, state, protocol, "invested_value", &mut trace)?;
                Ok(in_vault + invested)
            }
            _ => Err(CallError::UnknownVar { protocol: protocol.into(), var: var.into() }),
        },
        ProtocolConfig::Lending(l) => {
            if let Some(account) = var.strip_prefix("credit.") {
                note(format!("{protocol}.{var}"), &mut trace);
                let (pool_value, lp_supply) =
                    lending_pool_value(registry, protocols, state, protocol, l, &mut trace)?;
                let collateral =
                    recurse(registry, protocols, state, protocol, &format!("collateral.{account}"), &mut trace)?;
                let debt_value = debt_value_usd(registry, protocols, state, protocol, l, account, &mut trace)?;
                Ok(lending::credit_micro_usd(
                    collateral,
                    lp_supply,
                    &pool_value,
                    l.collateral_factor_num,
                    l.collateral_factor_den,
                    &debt_value,
                ))
            } else if var.starts_with("collateral.") || var.starts_with("debt_") {
                // Absent account-keyed entries read as zero.
                note(format!("{protocol}.{var}"), &mut trace);
                Ok(0)
            } else {
                Err(CallError::UnknownVar { protocol: protocol.into(), var: var.into() })
            }
        }
        _ => Err(CallError::UnknownVar { protocol: protocol.into(), var: var.into() }),
    }
}

fn recurse(
    registry: &TokenRegistry,
    protocols: &BTreeMap<String, ProtocolConfig>,
    state: &LedgerState,
    protocol: &str,
    var: &str,
    trace: &mut Option<&mut Vec<String>>,
) -> Result<Amount, CallError> {
    match trace {
        Some(log) => resolve_var(registry, protocols, state, protocol, var, Some(log)),
        None => resolve_var(registry, protocols, state, protocol, var, None),
    }
}

fn lending_pool_value(
    registry: &TokenRegistry,
    protocols: &BTreeMap<String, ProtocolConfig>,
    state: &LedgerState,
    lend_id: &str,
    cfg: &LendingConfig,
    trace: &mut Option<&mut Vec<String>>,
) -> Result<(BigRational, Amount), CallError> {
    let pool = protocols
        .get(&cfg.lp_pool)
        .ok_or_else(|| CallError::BadLink(lend_id.into(), format!("lp pool {} missing", cfg.lp_pool)))?;
    let ProtocolConfig::ConstantProduct(cp) = pool else {
        return Err(CallError::BadLink(lend_id.into(), format!("{} is not a pair", cfg.lp_pool)));
    };
    let r0 = recurse(registry, protocols, state, &cfg.lp_pool, &format!("reserve_{}", registry.symbol(cp.token0)), trace)?;
    let r1 = recurse(registry, protocols, state, &cfg.lp_pool, &format!("reserve_{}", registry.symbol(cp.token1)), trace)?;
    let supply = recurse(registry, protocols, state, &cfg.lp_pool, "lp_supply", trace)?;
    let value = lending::pool_value_usd(&[
        (r0, state.price(cp.token0).cloned(), registry.decimals(cp.token0)),
        (r1, state.price(cp.token1).cloned(), registry.decimals(cp.token1)),
    ]);
    Ok((value, supply))
}

fn debt_value_usd(
    registry: &TokenRegistry,
    protocols: &BTreeMap<String, ProtocolConfig>,
    state: &LedgerState,
    lend_id: &str,
    cfg: &LendingConfig,
    account: &str,
    trace: &mut Option<&mut Vec<String>>,
) -> Result<BigRational, CallError> {
    let mut total = BigRational::zero();
    for &token in &cfg.borrowable {
        let sym = registry.symbol(token).to_string();
        let debt = recurse(registry, protocols, state, lend_id, &format!("debt_{sym}.{account}"), trace)?;
        if debt != 0 {
            if let Some(price) = state.price(token) {
                let scale = BigInt::from(10u32).pow(registry.decimals(token));
                total += BigRational::new(BigInt::from(debt), scale) * price;
            }
        }
    }
    Ok(total)
}

/// Executes one protocol method. Callers are responsible for rollback on
/// error; this function may leave partial writes behind when it fails.
pub fn call(
    ctx: &mut ExecCtx<'_>,
    protocol_id: &str,
    method: &str,
    fixed: &BTreeMap<String, String>,
    params: &[Amount],
) -> Result<(), CallError> {
    let cfg = ctx
        .protocols
        .get(protocol_id)
        .ok_or_else(|| CallError::UnknownProtocol(protocol_id.to_string()))?
        .clone();
    match cfg {
        ProtocolConfig::StableSwap(ss) => stableswap_call(ctx, protocol_id, &ss, method, fixed, params),
        ProtocolConfig::ConstantProduct(cp) => cpamm_call(ctx, protocol_id, &cp, method, fixed, params),
        ProtocolConfig::Vault(v) => vault_call(ctx, protocol_id, &v, method, fixed, params),
        ProtocolConfig::Lending(l) => lending_call(ctx, protocol_id, &l, method, fixed, params),
    }
}

fn need_arity(method: &str, params: &[Amount], expected: usize) -> Result<(), CallError> {
    if params.len() != expected {
        return Err(CallError::BadArity { method: method.to_string(), expected, got: params.len() });
    }
    Ok(())
}

fn fixed_token(
    registry: &TokenRegistry,
    fixed: &BTreeMap<String, String>,
    method: &str,
    arg: &str,
) -> Result<TokenId, CallError> {
    let sym = fixed
        .get(arg)
        .ok_or_else(|| CallError::BadFixedArg { method: method.to_string(), arg: arg.to_string() })?;
    registry
        .lookup(sym)
        .ok_or_else(|| CallError::BadFixedArg { method: method.to_string(), arg: format!("{arg}={sym}") })
}

fn stableswap_call(
    ctx: &mut ExecCtx<'_>,
    id: &str,
    cfg: &StableSwapConfig,
    method: &str,
    fixed: &BTreeMap<String, String>,
    params: &[Amount],
) -> Result<(), CallError> {
    match method {
        "exchange" => {
            need_arity(method, params, 1)?;
            let token_in = fixed_token(ctx.registry, fixed, method, "in")?;
            let token_out = fixed_token(ctx.registry, fixed, method, "out")?;
            let i = cfg.coins.iter().position(|&c| c == token_in).ok_or_else(|| {
                CallError::BadFixedArg { method: method.into(), arg: "in".into() }
            })?;
            let j = cfg.coins.iter().position(|&c| c == token_out).ok_or_else(|| {
                CallError::BadFixedArg { method: method.into(), arg: "out".into() }
            })?;
            if i == j {
                return Err(CallError::BadFixedArg { method: method.into(), arg: "out".into() });
            }
            let dx = params[0];
            let mut balances = Vec::with_capacity(cfg.coins.len());
            for &coin in &cfg.coins {
                let name = format!("balance_{}", ctx.registry.symbol(coin));
                balances.push(ctx.read_var(id, &name)?);
            }
            ctx.debit_caller(token_in, dx)?;
            let dy = stableswap::swap_out(cfg, &balances, i, j, dx)?;
            let in_name = format!("balance_{}", ctx.registry.symbol(token_in));
            let out_name = format!("balance_{}", ctx.registry.symbol(token_out));
            ctx.write_var(id, &in_name, balances[i] + dx);
            ctx.write_var(id, &out_name, balances[j] - dy);
            ctx.credit_caller(token_out, dy);
            Ok(())
        }
        _ => Err(CallError::UnknownMethod { protocol: id.into(), method: method.into() }),
    }
}

fn cpamm_call(
    ctx: &mut ExecCtx<'_>,
    id: &str,
    cfg: &ConstantProductConfig,
    method: &str,
    fixed: &BTreeMap<String, String>,
    params: &[Amount],
) -> Result<(), CallError> {
    let sym0 = ctx.registry.symbol(cfg.token0).to_string();
    let sym1 = ctx.registry.symbol(cfg.token1).to_string();
    match method {
        "swap" => {
            need_arity(method, params, 1)?;
            let token_in = fixed_token(ctx.registry, fixed, method, "in")?;
            let (in_tok, out_tok, in_name, out_name) = if token_in == cfg.token0 {
                (cfg.token0, cfg.token1, format!("reserve_{sym0}"), format!("reserve_{sym1}"))
            } else if token_in == cfg.token1 {
                (cfg.token1, cfg.token0, format!("reserve_{sym1}"), format!("reserve_{sym0}"))
            } else {
                return Err(CallError::BadFixedArg { method: method.into(), arg: "in".into() });
            };
            let dx = params[0];
            let r_in = ctx.read_var(id, &in_name)?;
            let r_out = ctx.read_var(id, &out_name)?;
            ctx.debit_caller(in_tok, dx)?;
            let dy = cpamm::swap_out(dx, r_in, r_out, cfg.fee_num, cfg.fee_den)?;
            ctx.write_var(id, &in_name, r_in + dx);
            ctx.write_var(id, &out_name, r_out - dy);
            ctx.credit_caller(out_tok, dy);
            Ok(())
        }
        "mint" => {
            need_arity(method, params, 2)?;
            let (a0, a1) = (params[0], params[1]);
            let r0 = ctx.read_var(id, &format!("reserve_{sym0}"))?;
            let r1 = ctx.read_var(id, &format!("reserve_{sym1}"))?;
            let supply = ctx.read_var(id, "lp_supply")?;
            ctx.debit_caller(cfg.token0, a0)?;
            ctx.debit_caller(cfg.token1, a1)?;
            let minted = cpamm::mint_amount(a0, a1, r0, r1, supply)?;
            ctx.write_var(id, &format!("reserve_{sym0}"), r0 + a0);
            ctx.write_var(id, &format!("reserve_{sym1}"), r1 + a1);
            ctx.write_var(id, "lp_supply", supply + minted);
            ctx.credit_caller(cfg.lp_token, minted);
            Ok(())
        }
        _ => Err(CallError::UnknownMethod { protocol: id.into(), method: method.into() }),
    }
}

fn vault_call(
    ctx: &mut ExecCtx<'_>,
    id: &str,
    cfg: &VaultConfig,
    method: &str,
    _fixed: &BTreeMap<String, String>,
    params: &[Amount],
) -> Result<(), CallError> {
    match method {
        "deposit" => {
            need_arity(method, params, 1)?;
            let amount = params[0];
            let supply = ctx.read_var(id, "total_supply")?;
            let with_investment = ctx.read_var(id, "with_investment")?;
            let in_vault = ctx.read_var(id, "in_vault")?;
            ctx.debit_caller(cfg.underlying, amount)?;
            let minted = vault::deposit_mint(amount, supply, with_investment)?;
            ctx.write_var(id, "in_vault", in_vault + amount);
            ctx.write_var(id, "total_supply", supply + minted);
            ctx.credit_caller(cfg.share_token, minted);
            Ok(())
        }
        "withdraw" => {
            need_arity(method, params, 1)?;
            let shares = params[0];
            let supply = ctx.read_var(id, "total_supply")?;
            let with_investment = ctx.read_var(id, "with_investment")?;
            let in_vault = ctx.read_var(id, "in_vault")?;
            ctx.debit_caller(cfg.share_token, shares)?;
            let out = vault::withdraw_out(shares, supply, with_investment)?;
            if out > in_vault {
                return Err(Revert::VaultDrained { needed: out, available: in_vault }.into());
            }
            ctx.write_var(id, "in_vault", in_vault - out);
            ctx.write_var(id, "total_supply", supply - shares);
            ctx.credit_caller(cfg.underlying, out);
            Ok(())
        }
        _ => Err(CallError::UnknownMethod { protocol: id.into(), method: method.into() }),
    }
}

fn lending_call(
    ctx: &mut ExecCtx<'_>,
    id: &str,
    cfg: &LendingConfig,
    method: &str,
    fixed: &BTreeMap<String, String>,
    params: &[Amount],
) -> Result<(), CallError> {
    match method {
        "provide_collateral" => {
            need_arity(method, params, 1)?;
            let lp = params[0];
            if lp <= 0 {
                return Err(Revert::AmountOutZero.into());
            }
            let caller = ctx.caller.clone();
            let var = format!("collateral.{caller}");
            let current = ctx.read_var(id, &var)?;
            ctx.debit_caller(cfg.lp_token, lp)?;
            ctx.write_var(id, &var, current + lp);
            Ok(())
        }
        "borrow" => {
            need_arity(method, params, 1)?;
            let token = fixed_token(ctx.registry, fixed, method, "token")?;
            if !cfg.borrowable.contains(&token) {
                return Err(CallError::BadFixedArg { method: method.into(), arg: "token".into() });
            }
            let amount = params[0];
            if amount <= 0 {
                return Err(Revert::AmountOutZero.into());
            }
            let sym = ctx.registry.symbol(token).to_string();
            let caller = ctx.caller.clone();
            let reserve_var = format!("reserve_{sym}");
            let reserve = ctx.read_var(id, &reserve_var)?;
            if amount > reserve {
                return Err(Revert::MarketReserve { needed: amount, available: reserve }.into());
            }
            let debt_var = format!("debt_{sym}.{caller}");
            let debt = ctx.read_var(id, &debt_var)?;
            // Headroom is checked against the post-borrow debt.
            ctx.write_var(id, &debt_var, debt + amount);
            let credit = ctx.read_var(id, &format!("credit.{caller}"))?;
            if credit < 0 {
                return Err(Revert::BorrowLimitExceeded { requested: amount }.into());
            }
            ctx.write_var(id, &reserve_var, reserve - amount);
            ctx.credit_caller(token, amount);
            Ok(())
        }
        _ => Err(CallError::UnknownMethod { protocol: id.into(), method: method.into() }),
    }
}
