//! One agent's protocol stack: `n` broadcast instances and a ledger.

use std::collections::VecDeque;

use crate::ledger::{Execution, LedgerParams, LedgerState};
use crate::rrb::{RrbError, RrbEvent, RrbInstance, RrbMessage, Thresholds};
use crate::types::{AgentId, Transaction};

#[derive(Debug, Clone, PartialEq)]
pub enum AgentEvent {
    Rrb { channel: AgentId, event: RrbEvent },
    Executed(Execution),
    PayRefused { reason: String },
    Evidence { channel: AgentId, detail: String },
}

/// Outputs of one step of one agent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Effects {
    pub sends: Vec<(AgentId, RrbMessage)>,
    pub events: Vec<AgentEvent>,
}

impl Effects {
    pub fn evidence(&mut self, channel: AgentId, detail: impl Into<String>) {
        self.events.push(AgentEvent::Evidence {
            channel,
            detail: detail.into(),
        });
    }
}

#[derive(Debug, Clone)]
pub struct AgentStack {
    id: AgentId,
    pub rrb: Vec<RrbInstance>,
    pub ledger: LedgerState,
    // Own transactions waiting for the previous own broadcast to deliver.
    outbox: VecDeque<Transaction>,
}

impl AgentStack {
    pub fn new(id: AgentId, th: Thresholds, params: LedgerParams) -> Self {
        AgentStack {
            id,
            rrb: AgentId::all(th.n).map(|owner| RrbInstance::new(owner, id, th)).collect(),
            ledger: LedgerState::new(id, params),
            outbox: VecDeque::new(),
        }
    }

    pub fn id(&self) -> AgentId {
        self.id
    }

    pub fn n(&self) -> usize {
        self.rrb.len()
    }

    pub fn queued_broadcasts(&self) -> usize {
        self.outbox.len()
    }

    /// Broadcasts an own transaction on our channel. The instance only accepts
    /// the sequence number after the last delivered one, so later
    /// transactions wait until their predecessor is delivered.
    pub fn submit(&mut self, tx: Transaction, eff: &mut Effects) {
        self.outbox.push_back(tx);
        self.pump_outbox(eff);
    }

    fn pump_outbox(&mut self, eff: &mut Effects) {
        let own = self.id.index();
        while let Some(front) = self.outbox.front() {
            if front.seq != self.rrb[own].next_seq() {
                break;
            }
            let tx = self.outbox.pop_front().expect("peeked");
            match self.rrb[own].broadcast(tx) {
                Ok(sends) => eff.sends.extend(sends),
                Err(e) => eff.evidence(self.id, format!("broadcast refused: {e}")),
            }
        }
    }

    /// Runs a message through the channel's broadcast instance only. Returns
    /// the payloads it delivered.
    pub fn receive_rrb(&mut self, from: AgentId, msg: RrbMessage, eff: &mut Effects) -> Vec<Transaction> {
        let channel = msg.channel;
        if channel.index() >= self.n() {
            eff.evidence(channel, format!("message from {from} for unknown channel"));
            return Vec::new();
        }
        let out = match self.rrb[channel.index()].on_receive(from, msg) {
            Ok(out) => out,
            Err(e @ (RrbError::WrongChannel { .. } | RrbError::UnknownAgent(_))) => {
                eff.evidence(channel, e.to_string());
                return Vec::new();
            }
            Err(e) => unreachable!("on_receive only fails on routing errors: {e}"),
        };
        eff.sends.extend(out.outbound);
        let seqs: Vec<u64> = out
            .events
            .iter()
            .filter_map(|e| match e {
                RrbEvent::Delivered { seq, .. } => Some(*seq),
                _ => None,
            })
            .collect();
        eff.events.extend(out.events.into_iter().map(|event| AgentEvent::Rrb { channel, event }));
        let delivered: Vec<Transaction> = out
            .delivered
            .into_iter()
            .zip(seqs)
            .filter(|(tx, seq)| {
                let ok = tx.initiator == channel && tx.seq == *seq;
                if !ok {
                    eff.evidence(channel, format!("payload {} delivered as ({channel},{seq})", tx.id()));
                }
                ok
            })
            .map(|(tx, _)| tx)
            .collect();
        if channel == self.id && !delivered.is_empty() {
            self.pump_outbox(eff);
        }
        delivered
    }

    /// Hands delivered payloads to the ledger. `keep` decides which
    /// source-ordered transactions are executed; the rest are passed over.
    pub fn deliver_to_ledger(
        &mut self,
        delivered: Vec<Transaction>,
        eff: &mut Effects,
        keep: impl FnMut(&LedgerState, &Transaction) -> bool,
    ) {
        for tx in delivered {
            let channel = tx.initiator;
            if let Err(e) = self.ledger.enqueue(tx) {
                eff.evidence(channel, format!("{e}; not executed"));
            }
        }
        let done = self.ledger.drain_buffer(keep);
        eff.events.extend(done.into_iter().map(AgentEvent::Executed));
    }

    /// The compliant path: broadcast layer, then ledger.
    pub fn on_message(&mut self, from: AgentId, msg: RrbMessage, eff: &mut Effects) {
        let delivered = self.receive_rrb(from, msg, eff);
        if !delivered.is_empty() {
            self.deliver_to_ledger(delivered, eff, |_, _| true);
        }
    }
}
