//! Agent behaviours and the utility they earn.
//!
//! Every agent runs an [`AgentStack`]; the strategy decides what reaches it
//! and what leaves it. `COMPLIANT` passes everything straight through.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentEvent, AgentStack, Effects};
use crate::ledger::Verdict;
use crate::rrb::{MsgKind, RrbMessage};
use crate::trace::{TraceEvent, TraceRecord};
use crate::types::{AgentId, Money, TxId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StrategyKind {
    Compliant,
    ByzSilent,
    ByzEquivocate,
    ByzOverdraft,
    ByzBadDeps,
    RationalFreerider,
    RationalLazyExec,
}

impl StrategyKind {
    pub fn is_byzantine(self) -> bool {
        matches!(
            self,
            StrategyKind::ByzSilent | StrategyKind::ByzEquivocate | StrategyKind::ByzOverdraft | StrategyKind::ByzBadDeps
        )
    }

    pub fn is_rational(self) -> bool {
        matches!(self, StrategyKind::RationalFreerider | StrategyKind::RationalLazyExec)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyParams {
    /// RATIONAL_FREERIDER: channels whose ECHO/READY are withheld.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<Vec<AgentId>>,
    /// RATIONAL_FREERIDER: restrict withholding to these sequence numbers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seqs: Option<Vec<u64>>,
    /// RATIONAL_LAZY_EXEC: probability of skipping another agent's transaction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_probability: Option<f64>,
    /// BYZ_OVERDRAFT: amount requested beyond the balance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excess: Option<Money>,
    /// BYZ_EQUIVOCATE: also echo and ready both payloads to everyone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub double_echo: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: AgentId,
    pub kind: StrategyKind,
    #[serde(default)]
    pub params: StrategyParams,
}

/// Scripted stimulus for one agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    Pay {
        to: AgentId,
        amount: Money,
        #[serde(default)]
        convert_fees: bool,
    },
    /// Releases everything a free-rider withheld on `channel`.
    Backfill { channel: AgentId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ctx {
    pub seed: u64,
    pub tick: u64,
}

pub trait Strategy {
    fn kind(&self) -> StrategyKind;
    fn on_action(&mut self, stack: &mut AgentStack, action: &Action, ctx: Ctx, eff: &mut Effects);
    fn on_message(&mut self, stack: &mut AgentStack, from: AgentId, msg: RrbMessage, ctx: Ctx, eff: &mut Effects);
}

pub fn build(spec: &AgentSpec) -> Box<dyn Strategy> {
    let p = &spec.params;
    match spec.kind {
        StrategyKind::Compliant => Box::new(Compliant),
        StrategyKind::ByzSilent => Box::new(Silent),
        StrategyKind::ByzEquivocate => Box::new(Equivocate {
            double_echo: p.double_echo.unwrap_or(true),
        }),
        StrategyKind::ByzOverdraft => Box::new(Overdraft {
            excess: p.excess.unwrap_or(100),
        }),
        StrategyKind::ByzBadDeps => Box::new(BadDeps),
        StrategyKind::RationalFreerider => Box::new(Freerider {
            channels: p.channels.clone().unwrap_or_default().into_iter().collect(),
            seqs: p.seqs.as_ref().map(|s| s.iter().copied().collect()),
            withheld: BTreeMap::new(),
        }),
        StrategyKind::RationalLazyExec => Box::new(LazyExec {
            skip_probability: p.skip_probability.unwrap_or(1.0),
        }),
    }
}

/// The honest pay path shared by several strategies.
fn compliant_pay(stack: &mut AgentStack, to: AgentId, amount: Money, convert_fees: bool, eff: &mut Effects) {
    match stack.ledger.pay(to, amount, convert_fees) {
        Ok(tx) => stack.submit(tx, eff),
        Err(e) => eff.events.push(AgentEvent::PayRefused { reason: e.to_string() }),
    }
}

pub struct Compliant;

impl Strategy for Compliant {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Compliant
    }

    fn on_action(&mut self, stack: &mut AgentStack, action: &Action, _: Ctx, eff: &mut Effects) {
        if let Action::Pay { to, amount, convert_fees } = *action {
            compliant_pay(stack, to, amount, convert_fees, eff);
        }
    }

    fn on_message(&mut self, stack: &mut AgentStack, from: AgentId, msg: RrbMessage, _: Ctx, eff: &mut Effects) {
        stack.on_message(from, msg, eff);
    }
}

/// Crashed from the start.
pub struct Silent;

impl Strategy for Silent {
    fn kind(&self) -> StrategyKind {
        StrategyKind::ByzSilent
    }

    fn on_action(&mut self, _: &mut AgentStack, _: &Action, _: Ctx, _: &mut Effects) {}

    fn on_message(&mut self, _: &mut AgentStack, _: AgentId, _: RrbMessage, _: Ctx, _: &mut Effects) {}
}

/// Sends two different payloads under one sequence number to two halves of
/// the system.
pub struct Equivocate {
    double_echo: bool,
}

impl Strategy for Equivocate {
    fn kind(&self) -> StrategyKind {
        StrategyKind::ByzEquivocate
    }

    fn on_action(&mut self, stack: &mut AgentStack, action: &Action, _: Ctx, eff: &mut Effects) {
        let Action::Pay { to, amount, .. } = *action else {
            return;
        };
        let me = stack.id();
        let n = stack.n();
        let a = stack.ledger.pay_unchecked(to, amount, BTreeSet::new(), BTreeSet::new());
        let mut b = a.clone();
        b.recipient = AgentId::all(n).find(|&j| j != me && j != to).unwrap_or(to);
        b.value = amount + 1;

        // Self plus the next agents by id get A; everyone else gets B.
        let order: Vec<AgentId> = (0..n).map(|k| AgentId(((me.index() + k) % n) as u32)).collect();
        let (half_a, half_b) = order.split_at(n.div_ceil(2));
        let msg = |kind, payload: &crate::types::Transaction| RrbMessage {
            channel: me,
            kind,
            seq: payload.seq,
            payload: payload.clone(),
        };
        eff.sends.extend(half_a.iter().map(|&j| (j, msg(MsgKind::Initial, &a))));
        eff.sends.extend(half_b.iter().map(|&j| (j, msg(MsgKind::Initial, &b))));
        if self.double_echo {
            for payload in [&a, &b] {
                for kind in [MsgKind::Echo, MsgKind::Ready] {
                    eff.sends.extend(order.iter().filter(|&&j| j != me).map(|&j| (j, msg(kind, payload))));
                }
            }
        }
    }

    fn on_message(&mut self, stack: &mut AgentStack, from: AgentId, msg: RrbMessage, _: Ctx, eff: &mut Effects) {
        stack.on_message(from, msg, eff);
    }
}

/// Broadcasts payments it cannot cover.
pub struct Overdraft {
    excess: Money,
}

impl Strategy for Overdraft {
    fn kind(&self) -> StrategyKind {
        StrategyKind::ByzOverdraft
    }

    fn on_action(&mut self, stack: &mut AgentStack, action: &Action, _: Ctx, eff: &mut Effects) {
        let Action::Pay { to, .. } = *action else {
            return;
        };
        let value = stack.ledger.balance(stack.id()) + self.excess;
        let tx = stack.ledger.pay_unchecked(to, value, BTreeSet::new(), BTreeSet::new());
        stack.submit(tx, eff);
    }

    fn on_message(&mut self, stack: &mut AgentStack, from: AgentId, msg: RrbMessage, _: Ctx, eff: &mut Effects) {
        stack.on_message(from, msg, eff);
    }
}

/// References a transaction already judged bad.
pub struct BadDeps;

impl Strategy for BadDeps {
    fn kind(&self) -> StrategyKind {
        StrategyKind::ByzBadDeps
    }

    fn on_action(&mut self, stack: &mut AgentStack, action: &Action, _: Ctx, eff: &mut Effects) {
        let Action::Pay { to, amount, convert_fees } = *action else {
            return;
        };
        let bad: Option<TxId> = stack
            .ledger
            .executed()
            .iter()
            .find(|(_, e)| e.verdict == Verdict::Bad)
            .map(|(id, _)| *id);
        let Some(bad) = bad else {
            compliant_pay(stack, to, amount, convert_fees, eff);
            return;
        };
        let mut deps = stack.ledger.unclaimed_payments();
        deps.insert(bad);
        let tx = stack.ledger.pay_unchecked(to, amount, deps, BTreeSet::new());
        stack.submit(tx, eff);
    }

    fn on_message(&mut self, stack: &mut AgentStack, from: AgentId, msg: RrbMessage, _: Ctx, eff: &mut Effects) {
        stack.on_message(from, msg, eff);
    }
}

/// Withholds its ECHO/READY on selected channels to save message cost.
pub struct Freerider {
    channels: BTreeSet<AgentId>,
    seqs: Option<BTreeSet<u64>>,
    withheld: BTreeMap<AgentId, Vec<(AgentId, RrbMessage)>>,
}

impl Freerider {
    fn withholds(&self, me: AgentId, to: AgentId, msg: &RrbMessage) -> bool {
        to != me
            && msg.kind != MsgKind::Initial
            && self.channels.contains(&msg.channel)
            && self.seqs.as_ref().is_none_or(|s| s.contains(&msg.seq))
    }
}

impl Strategy for Freerider {
    fn kind(&self) -> StrategyKind {
        StrategyKind::RationalFreerider
    }

    fn on_action(&mut self, stack: &mut AgentStack, action: &Action, _: Ctx, eff: &mut Effects) {
        match *action {
            Action::Pay { to, amount, convert_fees } => compliant_pay(stack, to, amount, convert_fees, eff),
            Action::Backfill { channel } => {
                self.channels.remove(&channel);
                eff.sends.extend(self.withheld.remove(&channel).unwrap_or_default());
            }
        }
    }

    fn on_message(&mut self, stack: &mut AgentStack, from: AgentId, msg: RrbMessage, _: Ctx, eff: &mut Effects) {
        let mut inner = Effects::default();
        stack.on_message(from, msg, &mut inner);
        let me = stack.id();
        for (to, m) in inner.sends {
            if self.withholds(me, to, &m) {
                self.withheld.entry(m.channel).or_default().push((to, m));
            } else {
                eff.sends.push((to, m));
            }
        }
        eff.events.extend(inner.events);
    }
}

/// Skips executing other agents' transactions.
pub struct LazyExec {
    skip_probability: f64,
}

/// Deterministic per-transaction coin shared by reruns of the same seed.
pub fn lazy_skips(seed: u64, agent: AgentId, tx: TxId, p: f64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tx.seq.rotate_left(32));
    rng.set_stream((u64::from(agent.0) << 32) | u64::from(tx.initiator.0));
    rng.random_bool(p.clamp(0.0, 1.0))
}

impl Strategy for LazyExec {
    fn kind(&self) -> StrategyKind {
        StrategyKind::RationalLazyExec
    }

    fn on_action(&mut self, stack: &mut AgentStack, action: &Action, _: Ctx, eff: &mut Effects) {
        if let Action::Pay { to, amount, convert_fees } = *action {
            compliant_pay(stack, to, amount, convert_fees, eff);
        }
    }

    fn on_message(&mut self, stack: &mut AgentStack, from: AgentId, msg: RrbMessage, ctx: Ctx, eff: &mut Effects) {
        let delivered = stack.receive_rrb(from, msg, eff);
        if delivered.is_empty() {
            return;
        }
        let me = stack.id();
        let p = self.skip_probability;
        stack.deliver_to_ledger(delivered, eff, |_, tx| {
            tx.initiator == me || !lazy_skips(ctx.seed, me, tx.id(), p)
        });
    }
}

/// Parses a message cost written as `"num/den"`, `"num"` or a decimal.
pub fn parse_cost(s: &str) -> Option<Ratio<i128>> {
    let s = s.trim();
    if let Some((num, den)) = s.split_once('/') {
        let num: i128 = num.trim().parse().ok()?;
        let den: i128 = den.trim().parse().ok()?;
        return (den != 0).then(|| Ratio::new(num, den));
    }
    if let Ok(v) = s.parse::<i128>() {
        return Some(Ratio::from_integer(v));
    }
    let (int, frac) = s.split_once('.')?;
    let den = 10i128.checked_pow(u32::try_from(frac.len()).ok()?)?;
    let int: i128 = if int.is_empty() || int == "-" { 0 } else { int.parse().ok()? };
    let frac: i128 = frac.parse().ok()?;
    let sign = if s.starts_with('-') { -1 } else { 1 };
    Some(Ratio::new(int * den + sign * frac, den))
}

/// Utility of `agent` over a run, computed from its own view:
/// converted fee credits plus net value received, minus `c` per message sent
/// to another agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Utility {
    pub fee_income: i128,
    pub payments_net: i128,
    pub messages_sent: u64,
    pub total: Ratio<i128>,
}

pub fn utility(trace: &[TraceRecord], agent: AgentId) -> Option<Utility> {
    let header = trace.iter().find_map(|r| match &r.event {
        TraceEvent::Header(h) => Some(h),
        _ => None,
    })?;
    let c = parse_cost(&header.msg_cost_c)?;
    let eps = i128::from(header.epsilon);
    let mut fee_income = 0i128;
    let mut payments_net = 0i128;
    let mut messages_sent = 0u64;
    for r in trace {
        match &r.event {
            TraceEvent::FeeConvert { agent: a, initiator, .. } if *a == agent && *initiator == agent => {
                fee_income += eps;
            }
            TraceEvent::Commit {
                agent: a,
                tx,
                recipient,
                value,
            } if *a == agent => {
                if *recipient == agent {
                    payments_net += i128::from(*value);
                }
                if tx.initiator == agent {
                    payments_net -= i128::from(*value);
                }
            }
            TraceEvent::Send { from, to, .. } if *from == agent && *to != agent => messages_sent += 1,
            _ => {}
        }
    }
    let total = Ratio::from_integer(fee_income + payments_net) - c * i128::from(messages_sent);
    Some(Utility {
        fee_income,
        payments_net,
        messages_sent,
        total,
    })
}
