//! Counterexample-driven search for profitable action sequences against
//! simulated DeFi protocols.
//!
//! The engine approximates each protocol method's transition function from
//! sampled executions, optimizes action parameters on the approximations,
//! validates candidates on the real simulator, and feeds estimation misses
//! back into the training data until estimated and actual profits agree.

pub mod actionspec;
pub mod benchmark;
pub mod intmath;
pub mod ledger;
pub mod optimizer;
pub mod protocols;
pub mod report;
pub mod sampler;
pub mod surrogate;
pub mod synthesis;
pub mod traceminer;
pub mod world;
