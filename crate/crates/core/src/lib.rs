//! Hearsay: an asynchronous payment system built on rational reliable
//! broadcast, with a deterministic simulator and a trace checker.

pub mod agent;
pub mod checker;
pub mod ledger;
pub mod netsim;
pub mod rrb;
pub mod scenario;
pub mod strategy;
pub mod trace;
pub mod types;
