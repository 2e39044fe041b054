//! Action annotations: which variables a method call observes and changes,
//! and what its free parameters range over. These annotations are the
//! interface the whole search pipeline works against; everything downstream
//! (sampling, surrogate fitting, composition, optimization) sees an action
//! only through its spec.

use crate::intmath::Amount;
use crate::ledger::TokenId;
use crate::world::World;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// Reference to one protocol variable, written "protocol.variable". The
/// variable part may itself contain dots (account-scoped entries), so only
/// the first dot separates.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct VarRef {
    pub protocol: String,
    pub variable: String,
}

impl VarRef {
    pub fn new(protocol: impl Into<String>, variable: impl Into<String>) -> Self {
        VarRef { protocol: protocol.into(), variable: variable.into() }
    }

    pub fn parse(s: &str) -> Result<Self, VarRefParseError> {
        let (protocol, variable) = s.split_once('.').ok_or_else(|| VarRefParseError(s.to_string()))?;
        if protocol.is_empty() || variable.is_empty() {
            return Err(VarRefParseError(s.to_string()));
        }
        Ok(VarRef { protocol: protocol.to_string(), variable: variable.to_string() })
    }
}

impl fmt::Display for VarRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.protocol, self.variable)
    }
}

#[derive(thiserror::Error, Debug, Clone)]
#[error("variable reference {0:?} is not of the form protocol.variable")]
pub struct VarRefParseError(pub String);

impl TryFrom<String> for VarRef {
    type Error = VarRefParseError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        VarRef::parse(&s)
    }
}

impl From<VarRef> for String {
    fn from(v: VarRef) -> String {
        v.to_string()
    }
}

/// Inclusive integer range for one free parameter.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub lower: Amount,
    pub upper: Amount,
    /// Token the parameter spends from the adversary's balance, when it
    /// does. Drives the sampling bound and the holdings-based pruning rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consumes: Option<String>,
}

/// One action template: a concrete method with fixed arguments, free
/// parameter ranges, and its observation/effect annotation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub name: String,
    pub protocol: String,
    pub method: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fixed: BTreeMap<String, String>,
    pub params: Vec<ParamSpec>,
    /// Variables whose pre-call values the action's outcome depends on.
    pub prestates: Vec<VarRef>,
    /// Variables the action changes (stored or derived).
    pub poststates: Vec<VarRef>,
    /// Tokens the adversary's balance changes in, positive or negative.
    pub token_deltas: Vec<String>,
    /// Tokens the action credits to the caller, derived from the method at
    /// load time. Sequencing filters use these to decide what a prefix can
    /// make spendable.
    #[serde(default)]
    pub outputs: Vec<String>,
}

impl ActionSpec {
    pub fn arity(&self) -> usize {
        self.params.len()
    }
}

/// Checks an action spec against a world: the method must exist, fixed
/// arguments must resolve, every annotated variable must be readable, and
/// parameter ranges must be non-empty.
pub fn validate_spec(spec: &ActionSpec, world: &World) -> Result<(), SpecError> {
    for p in &spec.params {
        if p.lower > p.upper {
            return Err(SpecError::EmptyRange { action: spec.name.clone(), param: p.name.clone() });
        }
        if p.lower < 0 {
            return Err(SpecError::NegativeLower { action: spec.name.clone(), param: p.name.clone() });
        }
        if let Some(sym) = &p.consumes {
            if world.registry.lookup(sym).is_none() {
                return Err(SpecError::UnknownToken { action: spec.name.clone(), token: sym.clone() });
            }
        }
    }
    for var in spec.prestates.iter().chain(&spec.poststates) {
        world.read_var_ref(var).map_err(|err| SpecError::BadVar {
            action: spec.name.clone(),
            var: var.to_string(),
            reason: err.to_string(),
        })?;
    }
    for sym in &spec.token_deltas {
        if world.registry.lookup(sym).is_none() {
            return Err(SpecError::UnknownToken { action: spec.name.clone(), token: sym.clone() });
        }
    }
    // A probe at the lower corner proves the method dispatches; reverts are
    // fine, wiring errors are not.
    let lows: Vec<Amount> = spec.params.iter().map(|p| p.lower.max(1)).collect();
    let mut scratch = world.clone();
    if let Err((err, _)) = scratch.probe(&spec.protocol, &spec.method, &spec.fixed, &lows) {
        if !err.is_revert() {
            return Err(SpecError::BadCall { action: spec.name.clone(), reason: err.to_string() });
        }
    }
    Ok(())
}

#[derive(thiserror::Error, Debug, Clone)]
pub enum SpecError {
    #[error("{action}: parameter {param} has an empty range")]
    EmptyRange { action: String, param: String },
    #[error("{action}: parameter {param} has a negative lower bound")]
    NegativeLower { action: String, param: String },
    #[error("{action}: unknown token {token}")]
    UnknownToken { action: String, token: String },
    #[error("{action}: variable {var} does not resolve: {reason}")]
    BadVar { action: String, var: String, reason: String },
    #[error("{action}: call does not dispatch: {reason}")]
    BadCall { action: String, reason: String },
}

/// Reads the current values of a list of variables.
pub fn read_states(world: &World, vars: &[VarRef]) -> Result<Vec<Amount>, crate::protocols::CallError> {
    vars.iter().map(|v| world.read_var_ref(v)).collect()
}

/// A candidate sequence: indices into the action list plus, once chosen,
/// concrete parameters per step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackVector {
    pub actions: Vec<usize>,
    /// One parameter vector per action, in step order.
    pub params: Vec<Vec<Amount>>,
}

impl AttackVector {
    pub fn unparametrized(actions: Vec<usize>) -> Self {
        AttackVector { actions, params: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Human-readable form: "swap_usdt_usdc(15192122) deposit(45105321)".
    pub fn render(&self, specs: &[ActionSpec]) -> String {
        self.actions
            .iter()
            .enumerate()
            .map(|(step, &idx)| {
                let name = &specs[idx].name;
                match self.params.get(step) {
                    Some(ps) if !ps.is_empty() => {
                        let args: Vec<String> = ps.iter().map(|v| v.to_string()).collect();
                        format!("{name}({})", args.join(","))
                    }
                    _ => format!("{name}(_)"),
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Where a candidate stands in the search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum VectorStatus {
    /// Still in the queue; score drives scheduling order.
    Pending { score: f64 },
    /// Estimated profitable and confirmed by execution.
    Validated { profit_usd: f64 },
    /// Dropped: estimated profit stopped increasing strictly.
    Stalled,
    /// Dropped: optimizer found no feasible point.
    Infeasible,
}

/// Tokens the adversary holds initially, by symbol. Used by pruning.
pub fn initial_holdings(world: &World) -> Vec<String> {
    let mut out = Vec::new();
    for token in world.registry.ids() {
        if world.adversary_balance(token) > 0 {
            out.push(world.registry.symbol(token).to_string());
        }
    }
    out.sort();
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenAmount {
    pub token: TokenId,
    pub amount: Amount,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn var_ref_splits_on_first_dot_only() {
        let v = VarRef::parse("lend.credit.attacker").unwrap();
        assert_eq!(v.protocol, "lend");
        assert_eq!(v.variable, "credit.attacker");
        assert_eq!(v.to_string(), "lend.credit.attacker");
    }

    #[test]
    fn var_ref_rejects_missing_dot() {
        assert!(VarRef::parse("lpsupply").is_err());
        assert!(VarRef::parse(".x").is_err());
        assert!(VarRef::parse("x.").is_err());
    }

    #[test]
    fn render_shows_params_when_present() {
        let specs = vec![ActionSpec {
            name: "deposit".into(),
            protocol: "vault".into(),
            method: "deposit".into(),
            fixed: BTreeMap::new(),
            params: vec![ParamSpec { name: "amount".into(), lower: 1, upper: 10, consumes: None }],
            prestates: vec![],
            poststates: vec![],
            token_deltas: vec![],
            outputs: vec![],
        }];
        let v = AttackVector { actions: vec![0, 0], params: vec![vec![7]] };
        assert_eq!(v.render(&specs), "deposit(7) deposit(_)");
    }
}
