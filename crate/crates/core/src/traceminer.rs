//! Offline candidate mining: turns a simplified interface description plus
//! a corpus of recorded invocations into validated, annotated action
//! candidates.
//!
//! The pipeline filters out functions that cannot matter (read-only,
//! privileged, token permissions), learns non-integer arguments from the
//! distinct tuples seen in history, probes each concretized candidate once
//! against a benchmark world to confirm it executes and to record what it
//! touches, derives read-after-write dependencies from those recordings,
//! and emits action specs ready for the search pipeline. Every stage
//! reports what it dropped and why, so a mining run is auditable.

use crate::actionspec::{ActionSpec, ParamSpec, VarRef};
use crate::intmath::Amount;
use crate::protocols::TraceCapture;
use crate::world::World;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

pub const DEFAULT_MAX_CHOICES: usize = 20;
/// Probe value for integer parameters during executability checks.
pub const PROBE_DEFAULT: Amount = 1000;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfaceFile {
    pub contracts: Vec<ContractDecl>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractDecl {
    pub name: String,
    pub functions: Vec<InterfaceEntry>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfaceEntry {
    pub name: String,
    pub mutability: Mutability,
    #[serde(default)]
    pub privileged: bool,
    pub params: Vec<ParamDecl>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mutability {
    View,
    Pure,
    Nonpayable,
    Payable,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamDecl {
    pub name: String,
    pub kind: ParamKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Int,
    Address,
    Bytes,
    String,
    Array,
    Enum,
}

/// One historical invocation with its storage touch sets.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub contract: String,
    pub function: String,
    /// Argument values by parameter name, stringly typed.
    pub args: BTreeMap<String, String>,
    #[serde(default)]
    pub reads: BTreeSet<String>,
    #[serde(default)]
    pub writes: BTreeSet<String>,
    /// Variables keyed by the transaction sender; excluded from dependency
    /// analysis because they never carry cross-account effects.
    #[serde(default)]
    pub sender_scoped: BTreeSet<String>,
}

#[derive(thiserror::Error, Debug)]
pub enum MineError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("interface names {0} twice in contract {1}")]
    DuplicateFunction(String, String),
    #[error("trace corpus is empty")]
    EmptyCorpus,
}

/// Functions named like ownership, administration, or upgrade handles are
/// treated as privileged even without the explicit flag.
fn name_is_privileged(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    const MARKERS: [&str; 7] = ["owner", "admin", "governance", "upgrade", "initialize", "pause", "guardian"];
    if MARKERS.iter().any(|m| lower.contains(m)) {
        return true;
    }
    lower.starts_with("set") || lower.starts_with("change")
}

/// Token-permission plumbing: grants rather than state transitions.
fn name_is_permission(name: &str) -> bool {
    matches!(
        name.to_ascii_lowercase().as_str(),
        "approve" | "permit" | "increaseallowance" | "decreaseallowance"
    )
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct DroppedFunctions {
    pub read_only: Vec<String>,
    pub privileged: Vec<String>,
    pub permission: Vec<String>,
    pub choice_overflow: Vec<String>,
    pub not_executable: Vec<String>,
    pub independent: Vec<String>,
}

/// A function that survived interface filtering, with permission-style
/// parameters (deadlines) already removed.
#[derive(Clone, Debug)]
pub struct CandidateFunction {
    pub contract: String,
    pub function: String,
    pub int_params: Vec<String>,
    pub special_params: Vec<String>,
}

impl CandidateFunction {
    pub fn id(&self) -> String {
        format!("{}.{}", self.contract, self.function)
    }
}

/// Drops read-only, privileged, and token-permission functions; removes
/// deadline parameters from the survivors.
pub fn filter_interface(file: &InterfaceFile, dropped: &mut DroppedFunctions) -> Result<Vec<CandidateFunction>, MineError> {
    let mut out = Vec::new();
    for contract in &file.contracts {
        let mut seen = BTreeSet::new();
        for f in &contract.functions {
            if !seen.insert(&f.name) {
                return Err(MineError::DuplicateFunction(f.name.clone(), contract.name.clone()));
            }
            let id = format!("{}.{}", contract.name, f.name);
            if matches!(f.mutability, Mutability::View | Mutability::Pure) {
                dropped.read_only.push(id);
                continue;
            }
            if f.privileged || name_is_privileged(&f.name) {
                dropped.privileged.push(id);
                continue;
            }
            if name_is_permission(&f.name) {
                dropped.permission.push(id);
                continue;
            }
            let mut int_params = Vec::new();
            let mut special_params = Vec::new();
            for p in &f.params {
                match p.kind {
                    ParamKind::Int => {
                        if p.name.to_ascii_lowercase() != "deadline" {
                            int_params.push(p.name.clone());
                        }
                    }
                    _ => special_params.push(p.name.clone()),
                }
            }
            out.push(CandidateFunction {
                contract: contract.name.clone(),
                function: f.name.clone(),
                int_params,
                special_params,
            });
        }
    }
    Ok(out)
}

/// A candidate with its special parameters pinned to one historical tuple.
#[derive(Clone, Debug)]
pub struct ConcretizedCandidate {
    pub base: CandidateFunction,
    /// Special parameter name to learned value.
    pub fixed: BTreeMap<String, String>,
}

impl ConcretizedCandidate {
    /// Deterministic action name: contract, function, then any learned
    /// values, lowercased and joined.
    pub fn action_name(&self) -> String {
        let mut name = format!("{}_{}", self.base.contract, self.base.function);
        for value in self.fixed.values() {
            name.push('_');
            name.push_str(&value.to_ascii_lowercase());
        }
        name
    }
}

/// Learns special parameters from the corpus: the distinct value tuples a
/// function was historically called with, in sorted order. A function seen
/// with more than `max_choices` distinct tuples lands in the overflow list
/// instead; a function never seen in the corpus yields no candidates.
pub fn learn_special_params(
    candidates: &[CandidateFunction],
    corpus: &[TraceRecord],
    max_choices: usize,
    dropped: &mut DroppedFunctions,
) -> Result<Vec<ConcretizedCandidate>, MineError> {
    if corpus.is_empty() {
        return Err(MineError::EmptyCorpus);
    }
    let mut out = Vec::new();
    for c in candidates {
        if c.special_params.is_empty() {
            // All-integer functions still need at least one historical call
            // to count as observed behavior.
            let seen = corpus.iter().any(|r| r.contract == c.contract && r.function == c.function);
            if seen {
                out.push(ConcretizedCandidate { base: c.clone(), fixed: BTreeMap::new() });
            }
            continue;
        }
        let mut tuples: BTreeSet<Vec<String>> = BTreeSet::new();
        for record in corpus {
            if record.contract != c.contract || record.function != c.function {
                continue;
            }
            let tuple: Option<Vec<String>> = c
                .special_params
                .iter()
                .map(|p| record.args.get(p).cloned())
                .collect();
            if let Some(t) = tuple {
                tuples.insert(t);
            }
        }
        if tuples.len() > max_choices {
            dropped.choice_overflow.push(c.id());
            continue;
        }
        for tuple in tuples {
            let fixed: BTreeMap<String, String> = c
                .special_params
                .iter()
                .cloned()
                .zip(tuple)
                .collect();
            out.push(ConcretizedCandidate { base: c.clone(), fixed });
        }
    }
    Ok(out)
}

/// Probes the candidate once on a snapshot of the world. Returns the touch
/// log either way; `true` means the call executed without reverting. The
/// world is left unchanged.
pub fn check_executable(candidate: &ConcretizedCandidate, world: &mut World) -> (bool, TraceCapture) {
    let params: Vec<Amount> = candidate.base.int_params.iter().map(|_| PROBE_DEFAULT).collect();
    match world.probe(&candidate.base.contract, &candidate.base.function, &candidate.fixed, &params) {
        Ok(outcome) => (true, outcome.trace),
        Err((_, outcome)) => (false, outcome.trace),
    }
}

/// RAW dependency map over candidate records: `deps[a]` contains `b` when
/// `a` reads something `b` writes, sender-scoped variables ignored. A
/// function may depend on itself only by reading its own writes.
pub fn raw_dependencies(records: &[(String, TraceCapture)]) -> BTreeMap<String, BTreeSet<String>> {
    let cleaned: Vec<(String, BTreeSet<String>, BTreeSet<String>)> = records
        .iter()
        .map(|(id, trace)| {
            let strip = |set: &BTreeSet<String>| -> BTreeSet<String> {
                set.iter().filter(|k| !trace.sender_scoped.contains(*k)).cloned().collect()
            };
            (id.clone(), strip(&trace.reads), strip(&trace.writes))
        })
        .collect();
    let mut deps: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (a, reads, _) in &cleaned {
        let entry = deps.entry(a.clone()).or_default();
        for (b, _, writes) in &cleaned {
            if !reads.is_disjoint(writes) {
                entry.insert(b.clone());
            }
        }
    }
    deps
}

/// Everything mined from one corpus against one world.
#[derive(Clone, Debug, Serialize)]
pub struct MineReport {
    pub actions: Vec<ActionSpec>,
    /// Action name to the names it is RAW-dependent on.
    pub dependencies: BTreeMap<String, Vec<String>>,
    pub dropped: DroppedFunctions,
}

pub fn load_interfaces(path: &Path) -> Result<InterfaceFile, MineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| MineError::Io { path: path.display().to_string(), source })?;
    serde_json::from_str(&text).map_err(|source| MineError::Parse { path: path.display().to_string(), source })
}

pub fn load_traces(path: &Path) -> Result<Vec<TraceRecord>, MineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| MineError::Io { path: path.display().to_string(), source })?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord = serde_json::from_str(line)
            .map_err(|source| MineError::Parse { path: path.display().to_string(), source })?;
        out.push(record);
    }
    Ok(out)
}

/// Full pipeline: filter, learn, probe, analyze dependencies, annotate.
pub fn mine(
    interfaces: &InterfaceFile,
    corpus: &[TraceRecord],
    world: &World,
    max_choices: usize,
) -> Result<MineReport, MineError> {
    let mut dropped = DroppedFunctions::default();
    let filtered = filter_interface(interfaces, &mut dropped)?;
    let concretized = learn_special_params(&filtered, corpus, max_choices, &mut dropped)?;

    let mut scratch = world.clone();
    let mut executable: Vec<(ConcretizedCandidate, TraceCapture)> = Vec::new();
    for candidate in concretized {
        let (ok, trace) = check_executable(&candidate, &mut scratch);
        if ok {
            executable.push((candidate, trace));
        } else {
            dropped.not_executable.push(candidate.action_name());
        }
    }

    let records: Vec<(String, TraceCapture)> = executable
        .iter()
        .map(|(c, t)| (c.action_name(), t.clone()))
        .collect();
    let deps = raw_dependencies(&records);

    // Functions with no dependency edges either way cannot take part in a
    // multi-step interaction.
    let connected: BTreeSet<String> = records
        .iter()
        .filter(|(id, _)| {
            let depends = deps.get(id).map(|d| !d.is_empty()).unwrap_or(false);
            let depended_on = deps.values().any(|d| d.contains(id));
            depends || depended_on
        })
        .map(|(id, _)| id.clone())
        .collect();

    let mut actions = Vec::new();
    let mut dependencies = BTreeMap::new();
    for (candidate, trace) in &executable {
        let name = candidate.action_name();
        if !connected.contains(&name) {
            dropped.independent.push(name);
            continue;
        }
        actions.push(annotate(candidate, trace, world));
        let mut ds: Vec<String> = deps.get(&name).map(|d| d.iter().cloned().collect()).unwrap_or_default();
        ds.retain(|d| connected.contains(d));
        dependencies.insert(name, ds);
    }
    Ok(MineReport { actions, dependencies, dropped })
}

/// Derived variables with their stored-variable expansions, for annotation
/// canonicalization. Composite sums are listed with their direct
/// components instead of being kept opaque.
fn derived_vars(world: &World) -> Vec<(VarRef, BTreeSet<String>)> {
    let mut out = Vec::new();
    for (id, cfg) in &world.protocols {
        let refs: Vec<VarRef> = match cfg {
            crate::protocols::ProtocolConfig::Vault(_) => vec![VarRef::new(id.clone(), "invested_value")],
            crate::protocols::ProtocolConfig::Lending(_) => {
                vec![VarRef::new(id.clone(), format!("credit.{}", world.adversary))]
            }
            _ => continue,
        };
        for var in refs {
            let mut log: Vec<String> = Vec::new();
            if crate::protocols::resolve_var(
                &world.registry,
                &world.protocols,
                &world.state,
                &var.protocol,
                &var.variable,
                Some(&mut log),
            )
            .is_ok()
            {
                let expansion: BTreeSet<String> =
                    log.into_iter().filter(|k| k != &var.to_string()).collect();
                out.push((var, expansion));
            }
        }
    }
    out
}

/// Builds the action spec for one probed candidate: observation and effect
/// sets from the touch log, canonicalized so oracle-backed derived
/// variables appear instead of their internals, and cross-protocol effects
/// on those derived variables are made explicit on the writer's side.
fn annotate(candidate: &ConcretizedCandidate, trace: &TraceCapture, world: &World) -> ActionSpec {
    let derived = derived_vars(world);
    let own = |key: &String| !trace.sender_scoped.contains(key) && !key.starts_with("balance.");

    let mut reads: BTreeSet<String> = trace.reads.iter().filter(|k| own(k)).cloned().collect();
    let mut writes: BTreeSet<String> = trace.writes.iter().filter(|k| own(k)).cloned().collect();

    // Composite vault totals decompose into buffer plus investment.
    let composites: Vec<(String, [String; 2])> = world
        .protocols
        .iter()
        .filter(|(_, cfg)| matches!(cfg, crate::protocols::ProtocolConfig::Vault(_)))
        .map(|(id, _)| {
            (
                format!("{id}.with_investment"),
                [format!("{id}.in_vault"), format!("{id}.invested_value")],
            )
        })
        .collect();
    for (composite, components) in &composites {
        if reads.remove(composite) {
            reads.extend(components.iter().cloned());
        }
        writes.remove(composite);
    }

    // A derived variable subsumes its internals on the read side; on the
    // write side, changing any internal means changing the derived value.
    for (var, expansion) in &derived {
        let name = var.to_string();
        if reads.contains(&name) {
            for inner in expansion {
                reads.remove(inner);
            }
        }
        if writes.iter().any(|w| expansion.contains(w)) {
            writes.insert(name.clone());
            reads.insert(name);
        }
    }

    let parse = |set: &BTreeSet<String>| -> Vec<VarRef> {
        set.iter().filter_map(|s| VarRef::parse(s).ok()).collect()
    };

    // Balance touches name the tokens this action moves for the caller.
    let balance_prefix = format!("balance.{}.", world.adversary);
    let mut token_deltas: Vec<String> = trace
        .reads
        .iter()
        .chain(&trace.writes)
        .filter_map(|k| k.strip_prefix(&balance_prefix).map(str::to_string))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    token_deltas.sort();

    let outputs = crate::benchmark::mined_outputs(world, &candidate.base.contract, &candidate.base.function, &candidate.fixed);

    // Bounds: a parameter spends whatever single token the probe showed a
    // net outflow in; its range defaults to the adversary's capital there.
    let consumed = infer_consumed(candidate, world);
    let params: Vec<ParamSpec> = candidate
        .base
        .int_params
        .iter()
        .map(|p| {
            let (upper, consumes) = match &consumed {
                Some(sym) if candidate.base.int_params.len() == 1 => {
                    let token = world.registry.lookup(sym).expect("symbol from registry");
                    (world.adversary_balance(token), Some(sym.clone()))
                }
                _ => (max_capital(world), None),
            };
            ParamSpec { name: p.clone(), lower: 1, upper: upper.max(1), consumes }
        })
        .collect();

    ActionSpec {
        name: candidate.action_name(),
        protocol: candidate.base.contract.clone(),
        method: candidate.base.function.clone(),
        fixed: candidate.fixed.clone(),
        params,
        prestates: parse(&reads),
        poststates: parse(&writes),
        token_deltas,
        outputs,
    }
}

/// Replays the probe on a scratch world and looks for a net outflow from
/// the adversary: the token the action consumes.
fn infer_consumed(candidate: &ConcretizedCandidate, world: &World) -> Option<String> {
    let mut scratch = world.clone();
    let params: Vec<Amount> = candidate.base.int_params.iter().map(|_| PROBE_DEFAULT).collect();
    let before: Vec<(String, Amount)> = scratch
        .registry
        .ids()
        .map(|t| (scratch.registry.symbol(t).to_string(), scratch.adversary_balance(t)))
        .collect();
    if scratch
        .execute(&candidate.base.contract, &candidate.base.function, &candidate.fixed, &params)
        .is_err()
    {
        return None;
    }
    let mut consumed = Vec::new();
    for (sym, b) in before {
        let token = scratch.registry.lookup(&sym).unwrap();
        if scratch.adversary_balance(token) < b {
            consumed.push(sym);
        }
    }
    if consumed.len() == 1 {
        consumed.pop()
    } else {
        None
    }
}

fn max_capital(world: &World) -> Amount {
    world
        .registry
        .ids()
        .map(|t| world.adversary_balance(t))
        .max()
        .unwrap_or(1)
}

/// Serializes a mine report deterministically; byte-stable across runs for
/// identical inputs.
pub fn report_json(report: &MineReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(name: &str, mutability: Mutability, privileged: bool) -> InterfaceEntry {
        InterfaceEntry { name: name.into(), mutability, privileged, params: vec![] }
    }

    #[test]
    fn read_only_and_privileged_functions_are_dropped() {
        let file = InterfaceFile {
            contracts: vec![ContractDecl {
                name: "vault".into(),
                functions: vec![
                    entry("deposit", Mutability::Nonpayable, false),
                    entry("totalSupply", Mutability::View, false),
                    entry("transferOwnership", Mutability::Nonpayable, false),
                    entry("changeAdmin", Mutability::Nonpayable, false),
                    entry("approve", Mutability::Nonpayable, false),
                    entry("harvest", Mutability::Nonpayable, true),
                ],
            }],
        };
        let mut dropped = DroppedFunctions::default();
        let kept = filter_interface(&file, &mut dropped).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].function, "deposit");
        assert_eq!(dropped.read_only, vec!["vault.totalSupply"]);
        assert_eq!(dropped.privileged, vec!["vault.transferOwnership", "vault.changeAdmin", "vault.harvest"]);
        assert_eq!(dropped.permission, vec!["vault.approve"]);
    }

    #[test]
    fn deadline_params_are_removed() {
        let file = InterfaceFile {
            contracts: vec![ContractDecl {
                name: "pool".into(),
                functions: vec![InterfaceEntry {
                    name: "swap".into(),
                    mutability: Mutability::Nonpayable,
                    privileged: false,
                    params: vec![
                        ParamDecl { name: "dx".into(), kind: ParamKind::Int },
                        ParamDecl { name: "deadline".into(), kind: ParamKind::Int },
                        ParamDecl { name: "in".into(), kind: ParamKind::Enum },
                    ],
                }],
            }],
        };
        let mut dropped = DroppedFunctions::default();
        let kept = filter_interface(&file, &mut dropped).unwrap();
        assert_eq!(kept[0].int_params, vec!["dx"]);
        assert_eq!(kept[0].special_params, vec!["in"]);
    }

    fn record(contract: &str, function: &str, args: &[(&str, &str)]) -> TraceRecord {
        TraceRecord {
            contract: contract.into(),
            function: function.into(),
            args: args.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            reads: BTreeSet::new(),
            writes: BTreeSet::new(),
            sender_scoped: BTreeSet::new(),
        }
    }

    #[test]
    fn distinct_historical_tuples_become_candidates() {
        let base = CandidateFunction {
            contract: "curve".into(),
            function: "exchange".into(),
            int_params: vec!["dx".into()],
            special_params: vec!["in".into(), "out".into()],
        };
        let corpus = vec![
            record("curve", "exchange", &[("in", "USDT"), ("out", "USDC"), ("dx", "5")]),
            record("curve", "exchange", &[("in", "USDC"), ("out", "USDT"), ("dx", "9")]),
            record("curve", "exchange", &[("in", "USDT"), ("out", "USDC"), ("dx", "7")]),
        ];
        let mut dropped = DroppedFunctions::default();
        let got = learn_special_params(&[base], &corpus, DEFAULT_MAX_CHOICES, &mut dropped).unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].action_name(), "curve_exchange_usdc_usdt");
        assert_eq!(got[1].action_name(), "curve_exchange_usdt_usdc");
    }

    #[test]
    fn too_many_choices_overflow() {
        let base = CandidateFunction {
            contract: "router".into(),
            function: "trade".into(),
            int_params: vec![],
            special_params: vec!["referrer".into()],
        };
        let corpus: Vec<TraceRecord> = (0..30)
            .map(|i| record("router", "trade", &[("referrer", &format!("0x{i:02}"))]))
            .collect();
        let mut dropped = DroppedFunctions::default();
        let got = learn_special_params(&[base], &corpus, DEFAULT_MAX_CHOICES, &mut dropped).unwrap();
        assert!(got.is_empty());
        assert_eq!(dropped.choice_overflow, vec!["router.trade"]);
    }

    #[test]
    fn raw_dependencies_ignore_sender_scoped_and_allow_self_reads() {
        let mk = |reads: &[&str], writes: &[&str], scoped: &[&str]| TraceCapture {
            reads: reads.iter().map(|s| s.to_string()).collect(),
            writes: writes.iter().map(|s| s.to_string()).collect(),
            sender_scoped: scoped.iter().map(|s| s.to_string()).collect(),
        };
        let records = vec![
            ("deposit".to_string(), mk(&["v.total_supply"], &["v.total_supply"], &[])),
            ("withdraw".to_string(), mk(&["v.total_supply", "me.bal"], &[], &["me.bal"])),
            ("noise".to_string(), mk(&["me.bal"], &["me.bal"], &["me.bal"])),
        ];
        let deps = raw_dependencies(&records);
        assert!(deps["deposit"].contains("deposit"));
        assert!(deps["withdraw"].contains("deposit"));
        assert!(deps["noise"].is_empty());
    }
}
