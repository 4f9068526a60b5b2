//! Per-agent replicated money-transfer state machine.
//!
//! Each agent keeps its own view of every balance (`B`), of every initiator's
//! executed sequence number (`S`), and of the fee-credit (`F`) and
//! incoming-payment (`Q`) buffers. Delivered transactions wait in an execution
//! buffer until three conditions hold:
//!
//! 1. `S[initiator] == seq - 1` (source order),
//! 2. every referenced dependency and fee credit has been executed,
//! 3. the initiator can cover the `n * epsilon` fee, either from its balance
//!    (`B[initiator] > n * epsilon`) or by converting at least `n` fee credits.
//!
//! Executing a transaction credits referenced payments and fee credits, marks
//! it bad when the initiator cannot cover `value + n * epsilon` or it depends on
//! a bad transaction, commits it otherwise, and always charges the fee, which
//! is handed out as one credit per agent.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{AgentId, Money, Transaction, TxId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Committed,
    Bad,
}

impl Verdict {
    pub fn is_bad(self) -> bool {
        self == Verdict::Bad
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("balance {balance} cannot cover {required} (value plus n*epsilon)")]
    InsufficientBalance { balance: Money, required: Money },
    #[error("recipient {0} is not a member of the system")]
    InvalidRecipient(AgentId),
    #[error("an agent cannot pay itself")]
    SelfPayment,
    #[error("transaction {0} already executed")]
    AlreadyExecuted(TxId),
    #[error("transaction {0} does not satisfy the execution conditions")]
    ConditionsNotMet(TxId),
    #[error("malformed transaction {0}")]
    Malformed(TxId),
}

/// Static parameters shared by every agent's ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LedgerParams {
    pub n: usize,
    pub epsilon: Money,
    pub initial_balance: Money,
    /// Use `|fees| > n` instead of `|fees| >= n` in the fee clause of the
    /// third execution condition.
    pub condition3_strict: bool,
}

impl LedgerParams {
    /// `n * epsilon`, the fee charged per executed transaction.
    pub fn total_fee(&self) -> Money {
        self.n as Money * self.epsilon
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutedTx {
    pub tx: Transaction,
    pub verdict: Verdict,
}

/// Everything that happened while executing one transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Execution {
    pub tx: Transaction,
    pub verdict: Verdict,
    /// Incoming payments moved from `Q[initiator]` into the balance.
    pub credited_deps: Vec<TxId>,
    /// Fee credits moved from `F[initiator]` into the balance.
    pub converted_fees: Vec<TxId>,
    /// View right after the execution.
    pub after: LedgerSnapshot,
}

/// Flat copy of the replicated view, used for trace snapshots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub balances: Vec<Money>,
    pub seqs: Vec<u64>,
    pub fee_credits: Vec<usize>,
    pub payments: Vec<usize>,
    pub payment_value: Vec<Money>,
}

#[derive(Debug, Clone)]
pub struct LedgerState {
    self_id: AgentId,
    params: LedgerParams,
    balances: Vec<Money>,
    seqs: Vec<u64>,
    fee_buffers: Vec<BTreeSet<TxId>>,
    payment_buffers: Vec<BTreeSet<TxId>>,
    ctr: u64,
    exec_buffer: BTreeMap<TxId, Transaction>,
    executed: BTreeMap<TxId, ExecutedTx>,
    // Entries of Q[self] / F[self] already referenced by one of our own
    // transactions that has not executed yet. They stay in the replicated
    // buffers until execution credits them.
    claimed_deps: BTreeSet<TxId>,
    claimed_fees: BTreeSet<TxId>,
    // Values of own transactions built but not yet executed, by seq.
    own_pending: BTreeMap<u64, Money>,
}

impl LedgerState {
    pub fn new(self_id: AgentId, params: LedgerParams) -> Self {
        let n = params.n;
        LedgerState {
            self_id,
            params,
            balances: vec![params.initial_balance; n],
            seqs: vec![0; n],
            fee_buffers: vec![BTreeSet::new(); n],
            payment_buffers: vec![BTreeSet::new(); n],
            ctr: 1,
            exec_buffer: BTreeMap::new(),
            executed: BTreeMap::new(),
            claimed_deps: BTreeSet::new(),
            claimed_fees: BTreeSet::new(),
            own_pending: BTreeMap::new(),
        }
    }

    pub fn self_id(&self) -> AgentId {
        self.self_id
    }

    pub fn params(&self) -> &LedgerParams {
        &self.params
    }

    pub fn balance(&self, agent: AgentId) -> Money {
        self.balances[agent.index()]
    }

    pub fn balances(&self) -> &[Money] {
        &self.balances
    }

    pub fn seq_of(&self, agent: AgentId) -> u64 {
        self.seqs[agent.index()]
    }

    pub fn fee_buffer(&self, agent: AgentId) -> &BTreeSet<TxId> {
        &self.fee_buffers[agent.index()]
    }

    pub fn payment_buffer(&self, agent: AgentId) -> &BTreeSet<TxId> {
        &self.payment_buffers[agent.index()]
    }

    /// Incoming payments not yet referenced by one of our own transactions.
    pub fn unclaimed_payments(&self) -> BTreeSet<TxId> {
        self.payment_buffers[self.self_id.index()]
            .difference(&self.claimed_deps)
            .copied()
            .collect()
    }

    /// Fee credits not yet referenced by one of our own transactions.
    pub fn unclaimed_fees(&self) -> BTreeSet<TxId> {
        self.fee_buffers[self.self_id.index()]
            .difference(&self.claimed_fees)
            .copied()
            .collect()
    }

    /// Sequence number the next own transaction will carry.
    pub fn ctr(&self) -> u64 {
        self.ctr
    }

    pub fn executed(&self) -> &BTreeMap<TxId, ExecutedTx> {
        &self.executed
    }

    pub fn verdict(&self, id: &TxId) -> Option<Verdict> {
        self.executed.get(id).map(|e| e.verdict)
    }

    pub fn pending(&self) -> impl Iterator<Item = &Transaction> {
        self.exec_buffer.values()
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            balances: self.balances.clone(),
            seqs: self.seqs.clone(),
            fee_credits: self.fee_buffers.iter().map(BTreeSet::len).collect(),
            payments: self.payment_buffers.iter().map(BTreeSet::len).collect(),
            payment_value: self
                .payment_buffers
                .iter()
                .map(|q| q.iter().map(|id| self.value_of(id)).sum())
                .collect(),
        }
    }

    /// Balances plus pending payments plus unconverted fee credits. Equals
    /// `n * initial_balance` in every reachable state.
    pub fn total_money(&self) -> u128 {
        let snap = self.snapshot();
        let credits: usize = snap.fee_credits.iter().sum();
        snap.balances.iter().map(|&b| b as u128).sum::<u128>()
            + snap.payment_value.iter().map(|&v| v as u128).sum::<u128>()
            + credits as u128 * self.params.epsilon as u128
    }

    fn value_of(&self, id: &TxId) -> Money {
        self.executed.get(id).map_or(0, |e| e.tx.value)
    }

    /// Own balance minus value and fee of every own transaction that has been
    /// built but not executed yet.
    pub fn available_balance(&self) -> Money {
        let fee = self.params.total_fee();
        let owed: Money = self.own_pending.values().map(|v| v.saturating_add(fee)).sum();
        self.balances[self.self_id.index()].saturating_sub(owed)
    }

    /// Builds the next own transaction, refusing when the available balance
    /// cannot cover `amount + n * epsilon`.
    pub fn pay(&mut self, recipient: AgentId, amount: Money, convert_fees: bool) -> Result<Transaction, LedgerError> {
        if recipient.index() >= self.params.n {
            return Err(LedgerError::InvalidRecipient(recipient));
        }
        if recipient == self.self_id {
            return Err(LedgerError::SelfPayment);
        }
        let balance = self.available_balance();
        let required = amount.saturating_add(self.params.total_fee());
        if balance < required {
            return Err(LedgerError::InsufficientBalance { balance, required });
        }
        let deps = self.unclaimed_payments();
        let fees = if convert_fees {
            self.unclaimed_fees()
        } else {
            BTreeSet::new()
        };
        self.claimed_deps.extend(deps.iter().copied());
        self.claimed_fees.extend(fees.iter().copied());
        Ok(self.stamp(recipient, amount, deps, fees))
    }

    /// Builds an own transaction with caller-chosen fields, skipping every
    /// check. Used by deviating strategies.
    pub fn pay_unchecked(
        &mut self,
        recipient: AgentId,
        amount: Money,
        deps: BTreeSet<TxId>,
        fees: BTreeSet<TxId>,
    ) -> Transaction {
        self.stamp(recipient, amount, deps, fees)
    }

    fn stamp(&mut self, recipient: AgentId, value: Money, deps: BTreeSet<TxId>, fees: BTreeSet<TxId>) -> Transaction {
        let tx = Transaction {
            initiator: self.self_id,
            recipient,
            value,
            seq: self.ctr,
            deps,
            fees,
        };
        self.ctr += 1;
        self.own_pending.insert(tx.seq, value);
        tx
    }

    /// Structural validity: every referenced agent id is in range and the
    /// sequence number is positive.
    pub fn well_formed(&self, tx: &Transaction) -> bool {
        let n = self.params.n;
        tx.seq >= 1
            && tx.initiator.index() < n
            && tx.recipient.index() < n
            && tx.deps.iter().chain(&tx.fees).all(|t| t.initiator.index() < n && t.seq >= 1)
    }

    /// Buffers a delivered transaction and executes everything that became
    /// executable.
    pub fn on_rrb_deliver(&mut self, tx: Transaction) -> Result<Vec<Execution>, LedgerError> {
        self.enqueue(tx)?;
        Ok(self.try_execute())
    }

    /// Buffers a delivered transaction without executing anything.
    pub fn enqueue(&mut self, tx: Transaction) -> Result<(), LedgerError> {
        let id = tx.id();
        if !self.well_formed(&tx) {
            return Err(LedgerError::Malformed(id));
        }
        if !self.executed.contains_key(&id) {
            self.exec_buffer.entry(id).or_insert(tx);
        }
        Ok(())
    }

    pub fn conditions_met(&self, tx: &Transaction) -> bool {
        let init = tx.initiator.index();
        if self.seqs[init] + 1 != tx.seq {
            return false;
        }
        if !tx.deps.iter().chain(&tx.fees).all(|t| self.executed.contains_key(t)) {
            return false;
        }
        // Only credits still present in F[initiator] can pay the fee; a
        // replayed, already converted credit covers nothing.
        let convertible = tx.fees.iter().filter(|t| self.fee_buffers[init].contains(t)).count();
        let n = self.params.n;
        let fees_cover = if self.params.condition3_strict {
            convertible > n
        } else {
            convertible >= n
        };
        self.balances[init] > self.params.total_fee() || fees_cover
    }

    pub fn execute(&mut self, tx: &Transaction) -> Result<Execution, LedgerError> {
        let id = tx.id();
        if self.executed.contains_key(&id) {
            return Err(LedgerError::AlreadyExecuted(id));
        }
        if !self.conditions_met(tx) {
            return Err(LedgerError::ConditionsNotMet(id));
        }
        let init = tx.initiator.index();
        let eps = self.params.epsilon;

        let mut credited_deps = Vec::new();
        for t in &tx.deps {
            if self.payment_buffers[init].remove(t) {
                self.balances[init] += self.value_of(t);
                credited_deps.push(*t);
            }
        }
        let mut converted_fees = Vec::new();
        for t in &tx.fees {
            if self.fee_buffers[init].remove(t) {
                self.balances[init] += eps;
                converted_fees.push(*t);
            }
        }

        let overdraft = self.balances[init] < tx.value.saturating_add(self.params.total_fee());
        let bad_dep = tx.deps.iter().any(|t| self.verdict(t) == Some(Verdict::Bad));
        let verdict = if overdraft || bad_dep {
            Verdict::Bad
        } else {
            Verdict::Committed
        };
        if verdict == Verdict::Committed {
            self.commit(tx);
        }
        // Condition 3 guarantees the fee is covered.
        self.balances[init] -= self.params.total_fee();
        for buffer in &mut self.fee_buffers {
            buffer.insert(id);
        }
        self.seqs[init] += 1;
        self.executed.insert(
            id,
            ExecutedTx {
                tx: tx.clone(),
                verdict,
            },
        );
        if tx.initiator == self.self_id {
            self.own_pending.remove(&tx.seq);
            for t in &tx.deps {
                self.claimed_deps.remove(t);
            }
            for t in &tx.fees {
                self.claimed_fees.remove(t);
            }
        }
        Ok(Execution {
            tx: tx.clone(),
            verdict,
            credited_deps,
            converted_fees,
            after: self.snapshot(),
        })
    }

    /// Transfers the value: debits the initiator and parks the payment in the
    /// recipient's incoming buffer. Only called for transactions judged good.
    pub fn commit(&mut self, tx: &Transaction) {
        self.balances[tx.initiator.index()] -= tx.value;
        self.payment_buffers[tx.recipient.index()].insert(tx.id());
    }

    /// Runs buffered transactions to a fixpoint, scanning in ascending
    /// `(initiator, seq)` order.
    pub fn try_execute(&mut self) -> Vec<Execution> {
        self.drain_buffer(|_, _| true)
    }

    /// Like [`try_execute`](Self::try_execute), but `keep` may decline a
    /// source-ordered transaction. Declined transactions are marked as
    /// executed without touching any balance or buffer, which leaves this
    /// view stale on purpose.
    pub fn drain_buffer(&mut self, mut keep: impl FnMut(&LedgerState, &Transaction) -> bool) -> Vec<Execution> {
        let mut done = Vec::new();
        loop {
            let mut progressed = false;
            let ids: Vec<TxId> = self.exec_buffer.keys().copied().collect();
            for id in ids {
                let Some(tx) = self.exec_buffer.get(&id) else {
                    continue;
                };
                if self.seqs[id.initiator.index()] + 1 != id.seq {
                    continue;
                }
                if !keep(self, tx) {
                    let tx = self.exec_buffer.remove(&id).expect("present");
                    self.skip(tx);
                    progressed = true;
                    continue;
                }
                if self.conditions_met(tx) {
                    let tx = self.exec_buffer.remove(&id).expect("present");
                    done.push(self.execute(&tx).expect("conditions checked"));
                    progressed = true;
                }
            }
            if !progressed {
                return done;
            }
        }
    }

    fn skip(&mut self, tx: Transaction) {
        if tx.initiator == self.self_id {
            self.own_pending.remove(&tx.seq);
        }
        self.seqs[tx.initiator.index()] += 1;
        self.executed.insert(
            tx.id(),
            ExecutedTx {
                tx,
                verdict: Verdict::Committed,
            },
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> LedgerParams {
        LedgerParams {
            n: 4,
            epsilon: 1,
            initial_balance: 100,
            condition3_strict: false,
        }
    }

    fn id(a: u32, s: u64) -> TxId {
        TxId::new(a, s)
    }

    fn tx(init: u32, to: u32, value: Money, seq: u64, deps: &[TxId], fees: &[TxId]) -> Transaction {
        Transaction {
            initiator: AgentId(init),
            recipient: AgentId(to),
            value,
            seq,
            deps: deps.iter().copied().collect(),
            fees: fees.iter().copied().collect(),
        }
    }

    fn ledger(me: u32) -> LedgerState {
        LedgerState::new(AgentId(me), params())
    }

    #[test]
    fn pay_references_unclaimed_payments() {
        let mut l = ledger(0);
        // agent 3 pays us 7 at seq 1
        l.on_rrb_deliver(tx(3, 0, 7, 1, &[], &[])).unwrap();
        assert_eq!(l.unclaimed_payments(), [id(3, 1)].into());
        let t = l.pay(AgentId(2), 5, false).unwrap();
        assert_eq!((t.seq, t.value), (1, 5));
        assert_eq!(t.deps, [id(3, 1)].into());
        assert!(t.fees.is_empty());
        assert!(l.unclaimed_payments().is_empty());
        assert_eq!(l.ctr(), 2);
        // the replicated buffer keeps it until our transaction executes
        assert!(l.payment_buffer(AgentId(0)).contains(&id(3, 1)));
        let ex = l.on_rrb_deliver(t).unwrap();
        assert_eq!(ex[0].credited_deps, vec![id(3, 1)]);
        assert_eq!(l.balance(AgentId(0)), 100 + 7 - 5 - 4);
        assert!(l.payment_buffer(AgentId(0)).is_empty());
    }

    #[test]
    fn pay_refuses_below_value_plus_fee() {
        let mut l = ledger(0);
        l.balances[0] = 8;
        assert_eq!(
            l.pay(AgentId(2), 5, false),
            Err(LedgerError::InsufficientBalance { balance: 8, required: 9 })
        );
        assert_eq!(l.ctr(), 1);
        l.balances[0] = 9;
        assert!(l.pay(AgentId(2), 5, false).is_ok());
    }

    #[test]
    fn pay_counts_own_unexecuted_transactions() {
        let mut l = ledger(0);
        l.balances[0] = 30;
        l.pay(AgentId(1), 10, false).unwrap();
        assert_eq!(l.available_balance(), 16);
        assert_eq!(
            l.pay(AgentId(1), 13, false),
            Err(LedgerError::InsufficientBalance { balance: 16, required: 17 })
        );
        let t = l.pay(AgentId(1), 12, false).unwrap();
        assert_eq!(l.available_balance(), 0);
        let first = Transaction { seq: 1, value: 10, ..t.clone() };
        l.on_rrb_deliver(first).unwrap();
        l.on_rrb_deliver(t).unwrap();
        assert_eq!(l.balance(AgentId(0)), 0);
        assert!(l.executed().values().all(|e| e.verdict == Verdict::Committed));
    }

    #[test]
    fn pay_rejects_self_and_unknown_recipients() {
        let mut l = ledger(0);
        assert_eq!(l.pay(AgentId(0), 1, false), Err(LedgerError::SelfPayment));
        assert_eq!(l.pay(AgentId(9), 1, false), Err(LedgerError::InvalidRecipient(AgentId(9))));
    }

    #[test]
    fn fee_conversion_takes_all_credits() {
        let mut l = ledger(0);
        for s in 1..=5 {
            l.on_rrb_deliver(tx(1, 2, 1, s, &[], &[])).unwrap();
        }
        let credits: BTreeSet<_> = (1..=5).map(|s| id(1, s)).collect();
        assert_eq!(l.unclaimed_fees(), credits);
        let t = l.pay(AgentId(2), 0, true).unwrap();
        assert_eq!(t.fees, credits);
        assert!(l.unclaimed_fees().is_empty());
        let ex = l.on_rrb_deliver(t).unwrap();
        assert_eq!(ex[0].converted_fees.len(), 5);
        assert_eq!(l.balance(AgentId(0)), 100 + 5 - 4);
        // the credit for our own transaction is new and unconverted
        assert_eq!(l.unclaimed_fees(), [id(0, 1)].into());
    }

    #[test]
    fn out_of_order_delivery_waits_for_source_order() {
        let mut l = ledger(0);
        assert!(l.on_rrb_deliver(tx(1, 2, 1, 2, &[], &[])).unwrap().is_empty());
        assert_eq!(l.pending().count(), 1);
        let ex = l.on_rrb_deliver(tx(1, 2, 1, 1, &[], &[])).unwrap();
        let ids: Vec<_> = ex.iter().map(|e| e.tx.id()).collect();
        assert_eq!(ids, vec![id(1, 1), id(1, 2)]);
    }

    #[test]
    fn unexecuted_dependency_blocks() {
        let mut l = ledger(0);
        assert!(l.on_rrb_deliver(tx(1, 2, 1, 1, &[id(3, 1)], &[])).unwrap().is_empty());
        let ex = l.on_rrb_deliver(tx(3, 1, 2, 1, &[], &[])).unwrap();
        let ids: Vec<_> = ex.iter().map(|e| e.tx.id()).collect();
        assert_eq!(ids, vec![id(3, 1), id(1, 1)]);
    }

    #[test]
    fn condition_three_balance_and_fee_clauses() {
        let mut l = ledger(0);
        l.seqs[1] = 1;
        let t = tx(1, 2, 0, 2, &[], &[]);
        l.balances[1] = 5;
        assert!(l.conditions_met(&t));
        l.balances[1] = 4;
        assert!(!l.conditions_met(&t));

        // four unconverted credits cover the fee even from a zero balance
        let credits: Vec<_> = (1..=4).map(|s| id(3, s)).collect();
        for c in &credits {
            l.fee_buffers[1].insert(*c);
            l.executed.insert(*c, ExecutedTx { tx: tx(3, 2, 0, c.seq, &[], &[]), verdict: Verdict::Committed });
        }
        l.balances[1] = 0;
        let conv = tx(1, 2, 0, 2, &[], &credits);
        assert!(l.conditions_met(&conv));
        l.params.condition3_strict = true;
        assert!(!l.conditions_met(&conv));
        l.params.condition3_strict = false;
        // a credit that was already converted does not count
        l.fee_buffers[1].remove(&credits[0]);
        assert!(!l.conditions_met(&conv));
    }

    #[test]
    fn execute_good_transaction() {
        let mut l = ledger(3);
        l.balances[0] = 10;
        let t = tx(0, 2, 5, 1, &[], &[]);
        let ex = l.execute(&t).unwrap();
        assert_eq!(ex.verdict, Verdict::Committed);
        assert_eq!(l.balance(AgentId(0)), 1);
        assert!(l.payment_buffer(AgentId(2)).contains(&id(0, 1)));
        assert!(AgentId::all(4).all(|j| l.fee_buffer(j).contains(&id(0, 1))));
        assert_eq!(l.seq_of(AgentId(0)), 1);
        assert_eq!(l.execute(&t), Err(LedgerError::AlreadyExecuted(id(0, 1))));
    }

    #[test]
    fn overdraft_is_bad_and_still_pays_fee() {
        let mut l = ledger(3);
        l.balances[0] = 6;
        let ex = l.execute(&tx(0, 2, 5, 1, &[], &[])).unwrap();
        assert_eq!(ex.verdict, Verdict::Bad);
        assert_eq!(l.balance(AgentId(0)), 2);
        assert_eq!(l.balance(AgentId(2)), 100);
        assert!(l.payment_buffer(AgentId(2)).is_empty());
        assert!(AgentId::all(4).all(|j| l.fee_buffer(j).contains(&id(0, 1))));
    }

    #[test]
    fn bad_dependency_taints_regardless_of_balance() {
        let mut l = ledger(3);
        l.balances[0] = 6;
        l.execute(&tx(0, 1, 5, 1, &[], &[])).unwrap();
        let ex = l.execute(&tx(1, 2, 1, 1, &[id(0, 1)], &[])).unwrap();
        assert_eq!(ex.verdict, Verdict::Bad);
        assert!(ex.credited_deps.is_empty());
        assert_eq!(l.balance(AgentId(1)), 96);
    }

    #[test]
    fn execute_requires_conditions() {
        let mut l = ledger(3);
        assert_eq!(
            l.execute(&tx(0, 1, 1, 2, &[], &[])),
            Err(LedgerError::ConditionsNotMet(id(0, 2)))
        );
    }

    #[test]
    fn commit_moves_value_into_payment_buffer() {
        let mut l = ledger(3);
        l.commit(&tx(0, 2, 5, 1, &[], &[]));
        assert_eq!(l.balance(AgentId(0)), 95);
        assert_eq!(l.balance(AgentId(2)), 100);
        assert!(l.payment_buffer(AgentId(2)).contains(&id(0, 1)));

        l.commit(&tx(0, 2, 0, 2, &[], &[]));
        assert_eq!(l.balance(AgentId(0)), 95);
        assert!(l.payment_buffer(AgentId(2)).contains(&id(0, 2)));
    }

    #[test]
    fn recipient_spends_committed_payment() {
        let mut l = ledger(3);
        l.on_rrb_deliver(tx(0, 2, 5, 1, &[], &[])).unwrap();
        l.on_rrb_deliver(tx(2, 1, 0, 1, &[id(0, 1)], &[])).unwrap();
        assert_eq!(l.balance(AgentId(2)), 100 + 5 - 4);
    }

    #[test]
    fn try_execute_cascades() {
        let mut l = ledger(3);
        l.exec_buffer.insert(id(1, 2), tx(1, 2, 1, 2, &[], &[]));
        assert!(l.try_execute().is_empty());
        l.exec_buffer.insert(id(1, 1), tx(1, 2, 1, 1, &[], &[]));
        assert_eq!(l.try_execute().len(), 2);

        // cross-agent: (2,1) depends on (0,1)
        l.exec_buffer.insert(id(2, 1), tx(2, 1, 1, 1, &[id(0, 1)], &[]));
        l.exec_buffer.insert(id(0, 1), tx(0, 2, 3, 1, &[], &[]));
        let ids: Vec<_> = l.try_execute().iter().map(|e| e.tx.id()).collect();
        assert_eq!(ids, vec![id(0, 1), id(2, 1)]);
    }

    #[test]
    fn malformed_delivery_is_rejected() {
        let mut l = ledger(3);
        assert_eq!(
            l.on_rrb_deliver(tx(0, 9, 1, 1, &[], &[])),
            Err(LedgerError::Malformed(id(0, 1)))
        );
    }

    #[test]
    fn replayed_fee_credit_adds_nothing() {
        let mut l = ledger(3);
        l.on_rrb_deliver(tx(1, 2, 1, 1, &[], &[])).unwrap();
        l.on_rrb_deliver(tx(0, 2, 0, 1, &[], &[id(1, 1)])).unwrap();
        let b = l.balance(AgentId(0));
        let ex = l.on_rrb_deliver(tx(0, 2, 0, 2, &[], &[id(1, 1)])).unwrap();
        assert!(ex[0].converted_fees.is_empty());
        assert_eq!(l.balance(AgentId(0)), b - 4);
    }

    #[test]
    fn declined_transactions_leave_view_stale() {
        let mut l = ledger(3);
        l.exec_buffer.insert(id(0, 1), tx(0, 3, 5, 1, &[], &[]));
        let done = l.drain_buffer(|_, _| false);
        assert!(done.is_empty());
        assert_eq!(l.seq_of(AgentId(0)), 1);
        assert_eq!(l.balance(AgentId(0)), 100);
        assert!(l.payment_buffer(AgentId(3)).is_empty());
    }

    #[test]
    fn total_money_is_conserved() {
        let mut l = ledger(3);
        let start = l.total_money();
        l.on_rrb_deliver(tx(0, 2, 5, 1, &[], &[])).unwrap();
        l.on_rrb_deliver(tx(2, 1, 9, 1, &[id(0, 1)], &[id(0, 1)])).unwrap();
        l.balances[1] = 5;
        l.balances[3] += 95;
        l.on_rrb_deliver(tx(1, 0, 50, 1, &[], &[])).unwrap();
        assert_eq!(l.total_money(), start);
    }
}
