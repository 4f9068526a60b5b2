//! Offline property checks over a trace.
//!
//! Every check reads only trace records, so a trace produced by any other
//! implementation can be checked the same way. Properties are stated over the
//! agents whose header kind is `COMPLIANT`. Liveness checks report `UNKNOWN`
//! when the run did not reach quiescence.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::Verdict;
use crate::rrb::MsgKind;
use crate::trace::{TraceEvent, TraceHeader, TraceRecord};
use crate::types::{AgentId, PayloadDigest, Transaction, TxId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Pass,
    Fail,
    Unknown,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Unknown => "UNKNOWN",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<String>,
}

impl CheckResult {
    fn pass(name: &str) -> Self {
        CheckResult {
            name: name.into(),
            status: Status::Pass,
            counterexample: None,
        }
    }

    fn fail(name: &str, why: String) -> Self {
        CheckResult {
            name: name.into(),
            status: Status::Fail,
            counterexample: Some(why),
        }
    }

    fn unknown(name: &str) -> Self {
        CheckResult {
            name: name.into(),
            status: Status::Unknown,
            counterexample: Some("run did not reach quiescence".into()),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.name, self.status)?;
        if let Some(c) = &self.counterexample {
            write!(f, ": {c}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub checks: Vec<CheckResult>,
}

impl Report {
    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn status(&self, name: &str) -> Option<Status> {
        self.get(name).map(|c| c.status)
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    /// 1 on any FAIL, else 3 on any UNKNOWN, else 0.
    pub fn exit_code(&self) -> i32 {
        if self.checks.iter().any(|c| c.status == Status::Fail) {
            1
        } else if self.checks.iter().any(|c| c.status == Status::Unknown) {
            3
        } else {
            0
        }
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckError {
    #[error("trace has no HEADER record")]
    MissingHeader,
}

/// Names of every check, in report order.
pub const CHECKS: [&str; 11] = [
    "check_validity",
    "check_agreement",
    "check_integrity",
    "check_no_debt",
    "check_conservation",
    "check_source_order",
    "check_rrb_uniqueness",
    "check_rrb_delivery",
    "check_phi_closure",
    "check_balance_locality",
    "check_height",
];

/// Per-agent data extracted from a trace.
#[derive(Debug, Clone)]
pub struct TraceView<'a> {
    pub header: &'a TraceHeader,
    pub records: &'a [TraceRecord],
    pub compliant: BTreeSet<AgentId>,
    pub quiescent: bool,
}

impl<'a> TraceView<'a> {
    pub fn new(records: &'a [TraceRecord]) -> Result<Self, CheckError> {
        let header = records
            .iter()
            .find_map(|r| match &r.event {
                TraceEvent::Header(h) => Some(h),
                _ => None,
            })
            .ok_or(CheckError::MissingHeader)?;
        let quiescent = records.iter().rev().any(|r| matches!(r.event, TraceEvent::End { quiescent: true, .. }));
        Ok(TraceView {
            header,
            records,
            compliant: header.compliant().into_iter().collect(),
            quiescent,
        })
    }

    fn is_compliant(&self, a: AgentId) -> bool {
        self.compliant.contains(&a)
    }

    /// Executions per compliant agent in trace order.
    pub fn executions(&self) -> BTreeMap<AgentId, Vec<(&'a Transaction, Verdict)>> {
        let mut out: BTreeMap<AgentId, Vec<_>> = self.compliant.iter().map(|&a| (a, Vec::new())).collect();
        for r in self.records {
            if let TraceEvent::Execute { agent, tx, verdict } = &r.event {
                if let Some(v) = out.get_mut(agent) {
                    v.push((tx, *verdict));
                }
            }
        }
        out
    }

    /// Last balance vector recorded for each compliant agent.
    pub fn final_balances(&self) -> BTreeMap<AgentId, Vec<i64>> {
        let initial = vec![self.header.initial_balance as i64; self.header.n];
        let mut out: BTreeMap<AgentId, Vec<i64>> = self.compliant.iter().map(|&a| (a, initial.clone())).collect();
        for r in self.records {
            if let TraceEvent::Snapshot { agent, state } = &r.event {
                if let Some(b) = out.get_mut(agent) {
                    b.clone_from(&state.balances);
                }
            }
        }
        out
    }

    /// Every transaction that appears in the trace, keyed by id. The first
    /// payload seen for an id wins.
    pub fn universe(&self) -> BTreeMap<TxId, Transaction> {
        let mut u = BTreeMap::new();
        for r in self.records {
            let tx = match &r.event {
                TraceEvent::Execute { tx, .. } => tx,
                TraceEvent::Send { tx: Some(tx), .. } => tx,
                _ => continue,
            };
            u.entry(tx.id()).or_insert_with(|| tx.clone());
        }
        u
    }
}

/// Runs every check.
pub fn check_all(records: &[TraceRecord]) -> Result<Report, CheckError> {
    let v = TraceView::new(records)?;
    Ok(Report {
        checks: vec![
            check_validity(&v),
            check_agreement(&v),
            check_integrity(&v),
            check_no_debt(&v),
            check_conservation(&v),
            check_source_order(&v),
            check_rrb_uniqueness(&v),
            check_rrb_delivery(&v),
            check_phi_closure(&v),
            check_balance_locality(&v),
            check_height(&v),
        ],
    })
}

/// Every transaction a compliant agent broadcast is executed by that agent.
pub fn check_validity(v: &TraceView) -> CheckResult {
    const NAME: &str = "check_validity";
    if !v.quiescent {
        return CheckResult::unknown(NAME);
    }
    let executed: BTreeSet<(AgentId, TxId)> = v
        .executions()
        .into_iter()
        .flat_map(|(a, xs)| xs.into_iter().map(move |(tx, _)| (a, tx.id())))
        .collect();
    for r in v.records {
        if let TraceEvent::Send {
            from,
            msg: MsgKind::Initial,
            tx: Some(tx),
            ..
        } = &r.event
        {
            if v.is_compliant(*from) && tx.initiator == *from && !executed.contains(&(*from, tx.id())) {
                return CheckResult::fail(NAME, format!("agent {from} broadcast {} but never executed it", tx.id()));
            }
        }
    }
    CheckResult::pass(NAME)
}

/// Compliant agents end with identical executed sets, verdicts and balances.
pub fn check_agreement(v: &TraceView) -> CheckResult {
    const NAME: &str = "check_agreement";
    if !v.quiescent {
        return CheckResult::unknown(NAME);
    }
    let verdicts: BTreeMap<AgentId, BTreeMap<TxId, Verdict>> = v
        .executions()
        .into_iter()
        .map(|(a, xs)| (a, xs.into_iter().map(|(tx, verdict)| (tx.id(), verdict)).collect()))
        .collect();
    let Some((&first, reference)) = verdicts.iter().next() else {
        return CheckResult::pass(NAME);
    };
    for (&a, map) in &verdicts {
        let ids: BTreeSet<&TxId> = reference.keys().chain(map.keys()).collect();
        for id in ids {
            let (x, y) = (reference.get(id), map.get(id));
            if x != y {
                let show = |o: Option<&Verdict>| o.map_or("not executed".to_string(), |v| format!("{v:?}").to_lowercase());
                return CheckResult::fail(
                    NAME,
                    format!("agent {a}, tx {id}: {} at agent {a} vs {} at agent {first}", show(y), show(x)),
                );
            }
        }
    }
    let balances = v.final_balances();
    let (&first, reference) = balances.iter().next().expect("non-empty");
    for (&a, b) in &balances {
        if b != reference {
            return CheckResult::fail(NAME, format!("agent {a}: balances {b:?} vs {reference:?} at agent {first}"));
        }
    }
    CheckResult::pass(NAME)
}

/// No agent executes two transactions with the same id.
pub fn check_integrity(v: &TraceView) -> CheckResult {
    const NAME: &str = "check_integrity";
    for (a, xs) in v.executions() {
        let mut seen: BTreeMap<TxId, PayloadDigest> = BTreeMap::new();
        for (tx, _) in xs {
            if let Some(d) = seen.insert(tx.id(), tx.digest()) {
                let what = if d == tx.digest() { "twice" } else { "with two payloads" };
                return CheckResult::fail(NAME, format!("agent {a} executed {} {what}", tx.id()));
            }
        }
    }
    CheckResult::pass(NAME)
}

/// No compliant snapshot shows a negative balance.
pub fn check_no_debt(v: &TraceView) -> CheckResult {
    const NAME: &str = "check_no_debt";
    for r in v.records {
        if let TraceEvent::Snapshot { agent, state } = &r.event {
            if !v.is_compliant(*agent) {
                continue;
            }
            if let Some((j, b)) = state.balances.iter().enumerate().find(|(_, b)| **b < 0) {
                return CheckResult::fail(
                    NAME,
                    format!("record {}: agent {agent} sees balance {b} for agent {j}", r.idx),
                );
            }
        }
    }
    CheckResult::pass(NAME)
}

/// Balances plus pending payments plus unconverted credits stay at
/// `n * initial_balance` after every execution.
pub fn check_conservation(v: &TraceView) -> CheckResult {
    const NAME: &str = "check_conservation";
    let h = v.header;
    let total = i128::from(h.initial_balance) * h.n as i128;
    for r in v.records {
        if let TraceEvent::Snapshot { agent, state } = &r.event {
            if !v.is_compliant(*agent) {
                continue;
            }
            let b: i128 = state.balances.iter().map(|&x| i128::from(x)).sum();
            let q: i128 = state.payment_value.iter().map(|&x| i128::from(x)).sum();
            let f: i128 = state.fee_credits.iter().map(|&x| x as i128).sum::<i128>() * i128::from(h.epsilon);
            if b + q + f != total {
                return CheckResult::fail(
                    NAME,
                    format!("record {}: agent {agent} holds {b} + {q} + {f} != {total}", r.idx),
                );
            }
        }
    }
    CheckResult::pass(NAME)
}

/// Each compliant agent executes every initiator's transactions in sequence
/// order without gaps.
pub fn check_source_order(v: &TraceView) -> CheckResult {
    const NAME: &str = "check_source_order";
    for (a, xs) in v.executions() {
        let mut last = vec![0u64; v.header.n];
        for (tx, _) in xs {
            let i = tx.initiator.index();
            if i >= last.len() || tx.seq != last[i] + 1 {
                let prev = last.get(i).copied().unwrap_or(0);
                return CheckResult::fail(NAME, format!("agent {a} executed {} after seq {prev}", tx.id()));
            }
            last[i] = tx.seq;
        }
    }
    CheckResult::pass(NAME)
}

/// At most one digest is delivered per `(channel, seq)` across compliant
/// agents, and each agent delivers it once.
pub fn check_rrb_uniqueness(v: &TraceView) -> CheckResult {
    const NAME: &str = "check_rrb_uniqueness";
    let mut global: BTreeMap<(AgentId, u64), (AgentId, PayloadDigest)> = BTreeMap::new();
    let mut local: BTreeSet<(AgentId, AgentId, u64)> = BTreeSet::new();
    for r in v.records {
        if let TraceEvent::RrbDeliver {
            agent,
            channel,
            seq,
            digest,
        } = &r.event
        {
            if !v.is_compliant(*agent) {
                continue;
            }
            if !local.insert((*agent, *channel, *seq)) {
                return CheckResult::fail(NAME, format!("agent {agent} delivered ({channel},{seq}) twice"));
            }
            let (first, d) = *global.entry((*channel, *seq)).or_insert((*agent, *digest));
            if d != *digest {
                return CheckResult::fail(
                    NAME,
                    format!(
                        "({channel},{seq}): agent {agent} delivered {} but agent {first} delivered {}",
                        digest.short(),
                        d.short()
                    ),
                );
            }
        }
    }
    CheckResult::pass(NAME)
}

/// Broadcasts by compliant owners are delivered by every compliant agent, and
/// anything one compliant agent delivers, all do.
pub fn check_rrb_delivery(v: &TraceView) -> CheckResult {
    const NAME: &str = "check_rrb_delivery";
    if !v.quiescent {
        return CheckResult::unknown(NAME);
    }
    let mut delivered: BTreeMap<(AgentId, u64), BTreeSet<AgentId>> = BTreeMap::new();
    let mut broadcast: BTreeSet<(AgentId, u64)> = BTreeSet::new();
    for r in v.records {
        match &r.event {
            TraceEvent::RrbDeliver { agent, channel, seq, .. } if v.is_compliant(*agent) => {
                delivered.entry((*channel, *seq)).or_default().insert(*agent);
            }
            TraceEvent::Send {
                from,
                channel,
                msg: MsgKind::Initial,
                seq,
                ..
            } if from == channel && v.is_compliant(*from) => {
                broadcast.insert((*channel, *seq));
            }
            _ => {}
        }
    }
    for key in broadcast.iter().chain(delivered.keys()) {
        let got = delivered.get(key).cloned().unwrap_or_default();
        if let Some(missing) = v.compliant.difference(&got).next() {
            return CheckResult::fail(NAME, format!("agent {missing} never delivered ({},{})", key.0, key.1));
        }
    }
    CheckResult::pass(NAME)
}

/// Before a compliant agent executes `tx`, it has executed everything `tx`
/// references directly; by induction every prefix is closed under Φ.
pub fn check_phi_closure(v: &TraceView) -> CheckResult {
    const NAME: &str = "check_phi_closure";
    for (a, xs) in v.executions() {
        let mut done: BTreeSet<TxId> = BTreeSet::new();
        for (tx, _) in xs {
            let prev = (tx.seq > 1).then(|| TxId {
                initiator: tx.initiator,
                seq: tx.seq - 1,
            });
            if let Some(t) = tx.deps.iter().chain(&tx.fees).chain(prev.as_ref()).find(|t| !done.contains(t)) {
                return CheckResult::fail(NAME, format!("agent {a} executed {} before {t}", tx.id()));
            }
            done.insert(tx.id());
        }
    }
    CheckResult::pass(NAME)
}

/// An execution changes only the initiator's balance.
pub fn check_balance_locality(v: &TraceView) -> CheckResult {
    const NAME: &str = "check_balance_locality";
    let initial = vec![v.header.initial_balance as i64; v.header.n];
    let mut last: BTreeMap<AgentId, Vec<i64>> = v.compliant.iter().map(|&a| (a, initial.clone())).collect();
    let mut pending: BTreeMap<AgentId, TxId> = BTreeMap::new();
    for r in v.records {
        match &r.event {
            TraceEvent::Execute { agent, tx, .. } if v.is_compliant(*agent) => {
                pending.insert(*agent, tx.id());
            }
            TraceEvent::Snapshot { agent, state } if v.is_compliant(*agent) => {
                let prev = last.get_mut(agent).expect("compliant");
                let exec = pending.remove(agent);
                let changed: Vec<usize> = (0..prev.len().max(state.balances.len()))
                    .filter(|&j| prev.get(j) != state.balances.get(j))
                    .collect();
                let allowed = exec.map(|id| id.initiator.index());
                if let Some(&j) = changed.iter().find(|&&j| Some(j) != allowed) {
                    let what = exec.map_or("no execution".to_string(), |id| format!("executing {id}"));
                    return CheckResult::fail(
                        NAME,
                        format!("record {}: agent {agent} changed balance of {j} while {what}", r.idx),
                    );
                }
                prev.clone_from(&state.balances);
            }
            _ => {}
        }
    }
    CheckResult::pass(NAME)
}

/// Every executed transaction has a finite, acyclic Φ within the trace.
pub fn check_height(v: &TraceView) -> CheckResult {
    const NAME: &str = "check_height";
    let universe = v.universe();
    let mut memo = BTreeMap::new();
    for (_, xs) in v.executions() {
        for (tx, _) in xs {
            if let Err(e) = height_memo(tx.id(), &universe, &mut memo) {
                return CheckResult::fail(NAME, format!("{}: {e}", tx.id()));
            }
        }
    }
    CheckResult::pass(NAME)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PhiError {
    #[error("transaction {0} is referenced but unknown")]
    MissingTx(TxId),
    #[error("reference cycle through {0}; it can never execute")]
    Cycle(TxId),
}

/// The set of transactions that must execute before (and including) `root`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhiSet {
    pub root: TxId,
    pub members: BTreeSet<TxId>,
}

/// Direct references of `tx`: its deps, its fee credits, and the previous
/// transaction of the same initiator.
pub fn direct_refs(tx: &Transaction) -> impl Iterator<Item = TxId> + '_ {
    let prev = (tx.seq > 1).then(|| TxId {
        initiator: tx.initiator,
        seq: tx.seq - 1,
    });
    tx.deps.iter().chain(&tx.fees).copied().chain(prev)
}

pub fn phi(root: TxId, universe: &BTreeMap<TxId, Transaction>) -> Result<PhiSet, PhiError> {
    // Reject cycles first so the members are well-founded.
    height_memo(root, universe, &mut BTreeMap::new())?;
    let mut members = BTreeSet::from([root]);
    let mut stack = vec![root];
    while let Some(id) = stack.pop() {
        let tx = universe.get(&id).ok_or(PhiError::MissingTx(id))?;
        for t in direct_refs(tx) {
            if members.insert(t) {
                stack.push(t);
            }
        }
    }
    Ok(PhiSet { root, members })
}

pub fn height(root: TxId, universe: &BTreeMap<TxId, Transaction>) -> Result<u64, PhiError> {
    height_memo(root, universe, &mut BTreeMap::new())
}

enum Mark {
    Open,
    Done(u64),
}

fn height_memo(
    root: TxId,
    universe: &BTreeMap<TxId, Transaction>,
    memo: &mut BTreeMap<TxId, Mark>,
) -> Result<u64, PhiError> {
    // Iterative DFS; histories can be long same-initiator chains.
    let mut stack: Vec<(TxId, Vec<TxId>, u64)> = Vec::new();
    let push = |id: TxId, memo: &mut BTreeMap<TxId, Mark>, stack: &mut Vec<(TxId, Vec<TxId>, u64)>| {
        let tx = universe.get(&id).ok_or(PhiError::MissingTx(id))?;
        memo.insert(id, Mark::Open);
        stack.push((id, direct_refs(tx).collect(), 0));
        Ok::<(), PhiError>(())
    };
    match memo.get(&root) {
        Some(Mark::Done(h)) => return Ok(*h),
        Some(Mark::Open) => return Err(PhiError::Cycle(root)),
        None => push(root, memo, &mut stack)?,
    }
    loop {
        let (id, refs, best) = stack.last_mut().expect("non-empty until root is done");
        if let Some(next) = refs.pop() {
            match memo.get(&next) {
                Some(Mark::Done(h)) => *best = (*best).max(*h),
                Some(Mark::Open) => return Err(PhiError::Cycle(next)),
                None => push(next, memo, &mut stack)?,
            }
            continue;
        }
        let (id, h) = (*id, *best + 1);
        memo.insert(id, Mark::Done(h));
        stack.pop();
        match stack.last_mut() {
            Some((_, _, best)) => *best = (*best).max(h),
            None => return Ok(h),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Money;

    fn tx(init: u32, seq: u64, deps: &[(u32, u64)], fees: &[(u32, u64)]) -> Transaction {
        Transaction {
            initiator: AgentId(init),
            recipient: AgentId((init + 1) % 4),
            value: 1 as Money,
            seq,
            deps: deps.iter().map(|&(a, s)| TxId::new(a, s)).collect(),
            fees: fees.iter().map(|&(a, s)| TxId::new(a, s)).collect(),
        }
    }

    fn universe(txs: &[Transaction]) -> BTreeMap<TxId, Transaction> {
        txs.iter().map(|t| (t.id(), t.clone())).collect()
    }

    #[test]
    fn phi_base_case() {
        let u = universe(&[tx(0, 1, &[], &[])]);
        let p = phi(TxId::new(0, 1), &u).unwrap();
        assert_eq!(p.members, [TxId::new(0, 1)].into());
        assert_eq!(height(TxId::new(0, 1), &u), Ok(1));
    }

    #[test]
    fn phi_follows_deps_and_source_order() {
        let u = universe(&[tx(0, 1, &[], &[]), tx(0, 2, &[(1, 1)], &[]), tx(1, 1, &[], &[])]);
        let p = phi(TxId::new(0, 2), &u).unwrap();
        assert_eq!(p.members, [TxId::new(0, 1), TxId::new(0, 2), TxId::new(1, 1)].into());
        assert_eq!(height(TxId::new(0, 2), &u), Ok(2));
    }

    #[test]
    fn chain_height_is_length() {
        let u = universe(&(1..=7).map(|s| tx(2, s, &[], &[])).collect::<Vec<_>>());
        assert_eq!(height(TxId::new(2, 7), &u), Ok(7));
    }

    #[test]
    fn cycles_and_missing_are_reported() {
        let u = universe(&[tx(0, 1, &[(1, 1)], &[]), tx(1, 1, &[], &[(0, 1)])]);
        assert!(matches!(phi(TxId::new(0, 1), &u), Err(PhiError::Cycle(_))));
        let u = universe(&[tx(0, 1, &[(3, 1)], &[])]);
        assert_eq!(phi(TxId::new(0, 1), &u), Err(PhiError::MissingTx(TxId::new(3, 1))));
    }

    #[test]
    fn exit_codes() {
        let r = |s: &[Status]| Report {
            checks: s
                .iter()
                .map(|&status| CheckResult {
                    name: "x".into(),
                    status,
                    counterexample: None,
                })
                .collect(),
        };
        assert_eq!(r(&[Status::Pass]).exit_code(), 0);
        assert_eq!(r(&[Status::Pass, Status::Unknown]).exit_code(), 3);
        assert_eq!(r(&[Status::Unknown, Status::Fail]).exit_code(), 1);
    }
}
