//! Deterministic in-memory world state: token balances, protocol member
//! variables, snapshot/restore, transfers with revert semantics, and
//! constant-price profit accounting.
//!
//! All on-ledger amounts are integers in base units. Prices are exact
//! rationals, fixed for the lifetime of a run. Reverts are recoverable
//! values, never panics; callers roll back via snapshots.

use crate::intmath::{fnv1a64, Amount};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// Handle into the token registry. Symbol and decimals live in `TokenInfo`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct TokenId(pub u16);

#[derive(Clone, Debug)]
pub struct TokenInfo {
    pub symbol: String,
    /// Base-unit scale exponent, in [0, 18].
    pub decimals: u32,
}

/// Immutable for the lifetime of a run; symbols are unique.
#[derive(Clone, Debug, Default)]
pub struct TokenRegistry {
    infos: Vec<TokenInfo>,
}

impl TokenRegistry {
    pub fn register(&mut self, symbol: &str, decimals: u32) -> Result<TokenId, LedgerError> {
        if decimals > 18 {
            return Err(LedgerError::BadDecimals { symbol: symbol.to_string(), decimals });
        }
        if self.lookup(symbol).is_some() {
            return Err(LedgerError::DuplicateToken(symbol.to_string()));
        }
        self.infos.push(TokenInfo { symbol: symbol.to_string(), decimals });
        Ok(TokenId((self.infos.len() - 1) as u16))
    }

    pub fn lookup(&self, symbol: &str) -> Option<TokenId> {
        self.infos.iter().position(|t| t.symbol == symbol).map(|i| TokenId(i as u16))
    }

    pub fn info(&self, id: TokenId) -> &TokenInfo {
        &self.infos[id.0 as usize]
    }

    pub fn symbol(&self, id: TokenId) -> &str {
        &self.infos[id.0 as usize].symbol
    }

    pub fn decimals(&self, id: TokenId) -> u32 {
        self.infos[id.0 as usize].decimals
    }

    pub fn len(&self) -> usize {
        self.infos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.infos.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.infos.len()).map(|i| TokenId(i as u16))
    }
}

pub type AccountId = String;

/// Recoverable transaction failure. Synthesis probes many reverting
/// sequences, so these are ordinary values.
#[derive(thiserror::Error, Clone, Debug, PartialEq, Eq)]
pub enum Revert {
    #[error("{account} holds {available} of {token}, needs {needed}")]
    InsufficientBalance { account: String, token: String, needed: Amount, available: Amount },
    #[error("negative amount")]
    NegativeAmount,
    #[error("pool coin balance is zero")]
    ZeroBalance,
    #[error("iteration did not converge within 255 rounds")]
    NoConvergence,
    #[error("output amount is zero or negative")]
    AmountOutZero,
    #[error("pool has no reserves")]
    EmptyPool,
    #[error("vault holds {available} underlying, withdrawal needs {needed}")]
    VaultDrained { needed: Amount, available: Amount },
    #[error("borrow of {requested} exceeds the account's credit headroom")]
    BorrowLimitExceeded { requested: Amount },
    #[error("market reserve holds {available}, borrow needs {needed}")]
    MarketReserve { needed: Amount, available: Amount },
}

#[derive(thiserror::Error, Debug)]
pub enum LedgerError {
    #[error("duplicate token symbol {0}")]
    DuplicateToken(String),
    #[error("token {symbol} declares {decimals} decimals, allowed range is 0..=18")]
    BadDecimals { symbol: String, decimals: u32 },
}

/// Mutable world state. Protocol configs live outside (they are immutable);
/// everything an action can change is in here, which is what makes
/// snapshot/restore a plain clone.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct LedgerState {
    balances: BTreeMap<(AccountId, TokenId), Amount>,
    protocol_vars: BTreeMap<(String, String), Amount>,
    prices: BTreeMap<TokenId, BigRational>,
}

/// Opaque snapshot; `restore` reproduces the captured state bit-exactly.
#[derive(Clone, Debug)]
pub struct Snapshot(LedgerState);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProfitReport {
    pub per_token: BTreeMap<TokenId, Amount>,
    pub usd: BigRational,
}

impl LedgerState {
    pub fn balance(&self, account: &str, token: TokenId) -> Amount {
        *self.balances.get(&(account.to_string(), token)).unwrap_or(&0)
    }

    pub fn set_balance(&mut self, account: &str, token: TokenId, amount: Amount) {
        assert!(amount >= 0, "committed balances stay non-negative");
        if amount == 0 {
            self.balances.remove(&(account.to_string(), token));
        } else {
            self.balances.insert((account.to_string(), token), amount);
        }
    }

    pub fn credit(&mut self, account: &str, token: TokenId, amount: Amount) {
        assert!(amount >= 0);
        let cur = self.balance(account, token);
        self.set_balance(account, token, cur + amount);
    }

    pub fn debit(
        &mut self,
        account: &str,
        token: TokenId,
        amount: Amount,
        registry: &TokenRegistry,
    ) -> Result<(), Revert> {
        if amount < 0 {
            return Err(Revert::NegativeAmount);
        }
        let cur = self.balance(account, token);
        if cur < amount {
            return Err(Revert::InsufficientBalance {
                account: account.to_string(),
                token: registry.symbol(token).to_string(),
                needed: amount,
                available: cur,
            });
        }
        self.set_balance(account, token, cur - amount);
        Ok(())
    }

    pub fn transfer(
        &mut self,
        from: &str,
        to: &str,
        token: TokenId,
        amount: Amount,
        registry: &TokenRegistry,
    ) -> Result<(), Revert> {
        if amount < 0 {
            return Err(Revert::NegativeAmount);
        }
        self.debit(from, token, amount, registry)?;
        self.credit(to, token, amount);
        Ok(())
    }

    pub fn var(&self, protocol: &str, var: &str) -> Option<Amount> {
        self.protocol_vars.get(&(protocol.to_string(), var.to_string())).copied()
    }

    pub fn set_var(&mut self, protocol: &str, var: &str, value: Amount) {
        self.protocol_vars.insert((protocol.to_string(), var.to_string()), value);
    }

    pub fn vars_of(&self, protocol: &str) -> impl Iterator<Item = (&str, Amount)> + '_ {
        let key = protocol.to_string();
        self.protocol_vars
            .iter()
            .filter(move |((p, _), _)| *p == key)
            .map(|((_, v), a)| (v.as_str(), *a))
    }

    pub fn set_price(&mut self, token: TokenId, usd_per_whole: BigRational) {
        self.prices.insert(token, usd_per_whole);
    }

    /// USD per whole token; unlisted tokens are not priced and count zero in
    /// profit until converted by actions.
    pub fn price(&self, token: TokenId) -> Option<&BigRational> {
        self.prices.get(&token)
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot(self.clone())
    }

    pub fn restore(&mut self, snap: &Snapshot) {
        *self = snap.0.clone();
    }

    pub fn accounts(&self) -> impl Iterator<Item = &str> {
        let mut seen: Vec<&str> = self.balances.keys().map(|(a, _)| a.as_str()).collect();
        seen.dedup();
        seen.into_iter()
    }

    /// Canonical JSON: sorted keys, amounts as base-10 integer strings,
    /// prices as "num/den" strings. Two equal states serialize identically.
    pub fn canonical_json(&self, registry: &TokenRegistry) -> String {
        let mut balances: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for ((account, token), amount) in &self.balances {
            balances
                .entry(account.clone())
                .or_default()
                .insert(registry.symbol(*token).to_string(), amount.to_string());
        }
        let mut vars: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for ((protocol, var), value) in &self.protocol_vars {
            vars.entry(protocol.clone()).or_default().insert(var.clone(), value.to_string());
        }
        let mut prices: BTreeMap<String, String> = BTreeMap::new();
        for (token, price) in &self.prices {
            prices.insert(
                registry.symbol(*token).to_string(),
                format!("{}/{}", price.numer(), price.denom()),
            );
        }
        let doc = serde_json::json!({
            "balances": balances,
            "prices": prices,
            "protocol_vars": vars,
        });
        serde_json::to_string(&doc).expect("canonical state serialization")
    }

    pub fn state_hash(&self, registry: &TokenRegistry) -> u64 {
        fnv1a64(self.canonical_json(registry).as_bytes())
    }
}

/// Balance difference of `account` between two states sharing a price table,
/// USD-weighted per token: delta * price / 10^decimals.
pub fn profit(
    before: &LedgerState,
    after: &LedgerState,
    account: &str,
    registry: &TokenRegistry,
) -> ProfitReport {
    debug_assert_eq!(before.prices, after.prices, "profit compares states of one run");
    let mut per_token = BTreeMap::new();
    for token in registry.ids() {
        let delta = after.balance(account, token) - before.balance(account, token);
        if delta != 0 {
            per_token.insert(token, delta);
        }
    }
    let mut usd = BigRational::zero();
    for (token, delta) in &per_token {
        if let Some(price) = after.price(*token) {
            let scale = BigInt::from(10u32).pow(registry.decimals(*token));
            usd += BigRational::new(BigInt::from(*delta), scale) * price;
        }
    }
    ProfitReport { per_token, usd }
}

/// Renders a rational as an exact "num/den" string.
pub fn rational_string(r: &BigRational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// Approximate float view of a rational, for report readability only.
pub fn rational_to_f64(r: &BigRational) -> f64 {
    let num = r.numer();
    let den = r.denom();
    match (num.to_string().parse::<f64>(), den.to_string().parse::<f64>()) {
        (Ok(n), Ok(d)) if d != 0.0 => n / d,
        _ => {
            if r.is_negative() {
                f64::NEG_INFINITY
            } else {
                f64::INFINITY
            }
        }
    }
}

/// Parses "123", "-4/7", or a plain decimal like "0.05" into an exact
/// rational. Decimal strings convert exactly (digits over a power of ten).
pub fn parse_rational(text: &str) -> Result<BigRational, RationalParseError> {
    let s = text.trim();
    if s.is_empty() {
        return Err(RationalParseError(text.to_string()));
    }
    if let Some((num, den)) = s.split_once('/') {
        let n: BigInt = num.trim().parse().map_err(|_| RationalParseError(text.to_string()))?;
        let d: BigInt = den.trim().parse().map_err(|_| RationalParseError(text.to_string()))?;
        if d.is_zero() {
            return Err(RationalParseError(text.to_string()));
        }
        return Ok(BigRational::new(n, d));
    }
    if let Some((whole, frac)) = s.split_once('.') {
        let digits: String = format!("{}{}", whole.trim_start_matches('-'), frac);
        let n: BigInt = digits.parse().map_err(|_| RationalParseError(text.to_string()))?;
        let n = if s.starts_with('-') { -n } else { n };
        let d = BigInt::from(10u32).pow(frac.len() as u32);
        return Ok(BigRational::new(n, d));
    }
    let n: BigInt = s.parse().map_err(|_| RationalParseError(text.to_string()))?;
    Ok(BigRational::from(n))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RationalParseError(pub String);

impl fmt::Display for RationalParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "not a rational: {:?}", self.0)
    }
}

impl std::error::Error for RationalParseError {}
