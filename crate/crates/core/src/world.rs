//! Simulated deployment: a token registry, a set of protocol instances, and
//! one ledger state, with transactional execution on top.

use crate::actionspec::VarRef;
use crate::intmath::Amount;
use crate::ledger::{AccountId, LedgerState, Snapshot, TokenRegistry};
use crate::protocols::{self, CallError, ExecCtx, ProtocolConfig, TraceCapture};
use std::collections::BTreeMap;

#[derive(Clone, Debug)]
pub struct World {
    pub registry: TokenRegistry,
    pub protocols: BTreeMap<String, ProtocolConfig>,
    pub adversary: AccountId,
    pub state: LedgerState,
}

/// Outcome of one executed call: the storage touch log survives even when
/// the call reverts, with writes cleared because they were rolled back.
#[derive(Clone, Debug)]
pub struct CallOutcome {
    pub trace: TraceCapture,
}

impl World {
    /// Runs one method call transactionally: on any error the ledger is
    /// restored to the pre-call snapshot and the error is returned.
    pub fn execute(
        &mut self,
        protocol: &str,
        method: &str,
        fixed: &BTreeMap<String, String>,
        params: &[Amount],
    ) -> Result<CallOutcome, (CallError, CallOutcome)> {
        let snapshot = self.state.snapshot();
        let mut trace = TraceCapture::default();
        let mut ctx = ExecCtx {
            registry: &self.registry,
            protocols: &self.protocols,
            state: &mut self.state,
            caller: self.adversary.clone(),
            trace: Some(&mut trace),
        };
        match protocols::call(&mut ctx, protocol, method, fixed, params) {
            Ok(()) => Ok(CallOutcome { trace }),
            Err(err) => {
                self.state.restore(&snapshot);
                // Rolled-back writes never happened as far as later calls
                // can observe, so the log keeps only the reads.
                trace.writes.clear();
                trace.sender_scoped.retain(|key| trace.reads.contains(key));
                Err((err, CallOutcome { trace }))
            }
        }
    }

    /// Executes without keeping the effects: state is restored afterwards
    /// whether the call succeeds or not.
    pub fn probe(
        &mut self,
        protocol: &str,
        method: &str,
        fixed: &BTreeMap<String, String>,
        params: &[Amount],
    ) -> Result<CallOutcome, (CallError, CallOutcome)> {
        let snapshot = self.state.snapshot();
        let result = self.execute(protocol, method, fixed, params);
        self.state.restore(&snapshot);
        result
    }

    pub fn snapshot(&self) -> Snapshot {
        self.state.snapshot()
    }

    pub fn restore(&mut self, snapshot: &Snapshot) {
        self.state.restore(snapshot);
    }

    /// Reads a protocol variable (stored or derived) without recording.
    pub fn read_var_ref(&self, var: &VarRef) -> Result<Amount, CallError> {
        protocols::resolve_var(
            &self.registry,
            &self.protocols,
            &self.state,
            &var.protocol,
            &var.variable,
            None,
        )
    }

    pub fn adversary_balance(&self, token: crate::ledger::TokenId) -> Amount {
        self.state.balance(&self.adversary, token)
    }
}
