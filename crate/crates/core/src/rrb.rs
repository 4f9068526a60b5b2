//! Rational reliable broadcast: one instance per channel.
//!
//! Every agent runs `n` instances, one for each potential initiator. Instance
//! `p` only ever carries broadcasts initiated by agent `p`, and all of its
//! state (sequence counters, queues, tallies) is private to that channel, so
//! retaliation on one channel never touches another.
//!
//! The protocol is Bracha's echo/ready broadcast with a sequencing layer:
//!
//! * The owner sends `INITIAL(m, s)` to everyone (itself included).
//! * On `INITIAL` from the owner an agent queues `ECHO(m, s)` for every peer.
//! * Incoming `ECHO`/`READY` messages go into a per-peer in-queue and are only
//!   consumed in sequence order: a peer's message for `s` counts once that
//!   peer's message for `s - 1` has been consumed. Duplicates for an already
//!   consumed sequence number are discarded.
//! * Once `echo_quorum` distinct echoes or `t + 1` distinct readies agree on
//!   `(s, digest)`, the agent queues `ECHO` and `READY` (each at most once per
//!   sequence number).
//! * `2t + 1` readies for `(s, digest)` deliver `m`.
//! * Outgoing `ECHO`/`READY` for sequence `s` to peer `j` are held back until
//!   `j`'s own echo and ready for `s - 1` have been consumed. A peer that
//!   skips its messages for `s` therefore stops receiving traffic for every
//!   later sequence number on this channel until it backfills.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{AgentId, PayloadDigest, Transaction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MsgKind {
    Initial,
    Echo,
    Ready,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RrbMessage {
    /// Owner of the instance this message belongs to.
    pub channel: AgentId,
    pub kind: MsgKind,
    pub seq: u64,
    pub payload: Transaction,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RrbError {
    #[error("agent {self_id} does not own channel {owner}")]
    NotOwner { self_id: AgentId, owner: AgentId },
    #[error("payload seq {got} does not match next broadcast seq {expected}")]
    SeqMismatch { expected: u64, got: u64 },
    #[error("seq {0} was already broadcast on this channel")]
    AlreadyBroadcast(u64),
    #[error("message for channel {got} delivered to instance {expected}")]
    WrongChannel { expected: AgentId, got: AgentId },
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("invalid thresholds: n={n}, t={t} (need 3t < n)")]
    InvalidThresholds { n: usize, t: usize },
}

/// Quorum sizes for an `n`-agent system tolerating `t` Byzantine agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Thresholds {
    pub n: usize,
    pub t: usize,
    /// Smallest integer strictly greater than `(n + t) / 2`.
    pub echo_quorum: usize,
    pub ready_init: usize,
    pub deliver_quorum: usize,
}

impl Thresholds {
    pub fn new(n: usize, t: usize) -> Result<Self, RrbError> {
        if n == 0 || 3 * t >= n {
            return Err(RrbError::InvalidThresholds { n, t });
        }
        Ok(Thresholds {
            n,
            t,
            echo_quorum: (n + t) / 2 + 1,
            ready_init: t + 1,
            deliver_quorum: 2 * t + 1,
        })
    }
}

/// Protocol-level observations surfaced to the caller for tracing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RrbEvent {
    /// Outgoing traffic to `peer` is held at `seq` because the peer has not
    /// completed `seq - 1`.
    RetalBlock { peer: AgentId, seq: u64 },
    /// The hold on `peer` (placed at `seq`) was lifted.
    RetalUnblock { peer: AgentId, seq: u64 },
    /// A non-owner sent an `INITIAL` on this channel.
    ForgedInitial { from: AgentId, seq: u64 },
    /// A second distinct payload was observed for the same sequence number.
    ConflictingPayload { from: AgentId, seq: u64, digest: PayloadDigest },
    /// Message with sequence number 0.
    InvalidSeq { from: AgentId },
    Delivered { seq: u64, digest: PayloadDigest },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RrbOutput {
    /// Messages released by the out-queue gate during this call.
    pub outbound: Vec<(AgentId, RrbMessage)>,
    /// Payloads delivered during this call, ascending by sequence number.
    pub delivered: Vec<Transaction>,
    pub events: Vec<RrbEvent>,
}

#[derive(Debug, Clone)]
struct InEntry {
    seq: u64,
    digest: PayloadDigest,
}

#[derive(Debug, Clone)]
pub struct RrbInstance {
    owner: AgentId,
    self_id: AgentId,
    th: Thresholds,
    next_seq: u64,
    broadcast_seqs: BTreeSet<u64>,
    last_echo: Vec<u64>,
    last_ready: Vec<u64>,
    in_echo: Vec<VecDeque<InEntry>>,
    in_ready: Vec<VecDeque<InEntry>>,
    out_queues: Vec<VecDeque<RrbMessage>>,
    /// Sequence numbers for which an ECHO has been queued or sent.
    echo_sent: BTreeSet<u64>,
    /// Sequence numbers for which a READY has been queued or sent.
    ready_sent: BTreeSet<u64>,
    echo_tally: BTreeMap<(u64, PayloadDigest), BTreeSet<AgentId>>,
    ready_tally: BTreeMap<(u64, PayloadDigest), BTreeSet<AgentId>>,
    payloads: BTreeMap<(u64, PayloadDigest), Transaction>,
    delivered: BTreeMap<u64, PayloadDigest>,
    blocked: Vec<Option<u64>>,
}

impl RrbInstance {
    pub fn new(owner: AgentId, self_id: AgentId, th: Thresholds) -> Self {
        let n = th.n;
        RrbInstance {
            owner,
            self_id,
            th,
            next_seq: 1,
            broadcast_seqs: BTreeSet::new(),
            last_echo: vec![0; n],
            last_ready: vec![0; n],
            in_echo: vec![VecDeque::new(); n],
            in_ready: vec![VecDeque::new(); n],
            out_queues: vec![VecDeque::new(); n],
            echo_sent: BTreeSet::new(),
            ready_sent: BTreeSet::new(),
            echo_tally: BTreeMap::new(),
            ready_tally: BTreeMap::new(),
            payloads: BTreeMap::new(),
            delivered: BTreeMap::new(),
            blocked: vec![None; n],
        }
    }

    pub fn owner(&self) -> AgentId {
        self.owner
    }

    pub fn self_id(&self) -> AgentId {
        self.self_id
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.th
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn last_echo(&self, peer: AgentId) -> u64 {
        self.last_echo[peer.index()]
    }

    pub fn last_ready(&self, peer: AgentId) -> u64 {
        self.last_ready[peer.index()]
    }

    pub fn out_queue_len(&self, peer: AgentId) -> usize {
        self.out_queues[peer.index()].len()
    }

    pub fn in_queue_lens(&self, peer: AgentId) -> (usize, usize) {
        (self.in_echo[peer.index()].len(), self.in_ready[peer.index()].len())
    }

    pub fn delivered_digest(&self, seq: u64) -> Option<PayloadDigest> {
        self.delivered.get(&seq).copied()
    }

    pub fn echo_count(&self, seq: u64, digest: &PayloadDigest) -> usize {
        self.echo_tally.get(&(seq, *digest)).map_or(0, BTreeSet::len)
    }

    pub fn ready_count(&self, seq: u64, digest: &PayloadDigest) -> usize {
        self.ready_tally.get(&(seq, *digest)).map_or(0, BTreeSet::len)
    }

    pub fn has_sent_echo(&self, seq: u64) -> bool {
        self.echo_sent.contains(&seq)
    }

    pub fn has_sent_ready(&self, seq: u64) -> bool {
        self.ready_sent.contains(&seq)
    }

    /// Whether outgoing traffic to `peer` is currently held back.
    pub fn is_blocked(&self, peer: AgentId) -> bool {
        self.blocked[peer.index()].is_some()
    }

    /// Starts a broadcast of `payload`. `INITIAL` bypasses the out-queue and
    /// goes to every agent, including the owner itself.
    pub fn broadcast(&mut self, payload: Transaction) -> Result<Vec<(AgentId, RrbMessage)>, RrbError> {
        if self.self_id != self.owner {
            return Err(RrbError::NotOwner {
                self_id: self.self_id,
                owner: self.owner,
            });
        }
        if payload.seq != self.next_seq {
            return Err(RrbError::SeqMismatch {
                expected: self.next_seq,
                got: payload.seq,
            });
        }
        if !self.broadcast_seqs.insert(payload.seq) {
            return Err(RrbError::AlreadyBroadcast(payload.seq));
        }
        let seq = payload.seq;
        Ok(AgentId::all(self.th.n)
            .map(|to| {
                (
                    to,
                    RrbMessage {
                        channel: self.owner,
                        kind: MsgKind::Initial,
                        seq,
                        payload: payload.clone(),
                    },
                )
            })
            .collect())
    }

    pub fn on_receive(&mut self, from: AgentId, msg: RrbMessage) -> Result<RrbOutput, RrbError> {
        if msg.channel != self.owner {
            return Err(RrbError::WrongChannel {
                expected: self.owner,
                got: msg.channel,
            });
        }
        if from.index() >= self.th.n {
            return Err(RrbError::UnknownAgent(from));
        }
        let mut out = RrbOutput::default();
        if msg.seq == 0 {
            out.events.push(RrbEvent::InvalidSeq { from });
            return Ok(out);
        }
        let seq = msg.seq;
        let digest = msg.payload.digest();

        match msg.kind {
            MsgKind::Initial => {
                if from != self.owner {
                    out.events.push(RrbEvent::ForgedInitial { from, seq });
                    return Ok(out);
                }
                self.remember_payload(from, seq, digest, msg.payload, &mut out);
                if !self.echo_sent.contains(&seq) {
                    self.enqueue_to_all(MsgKind::Echo, seq, digest);
                }
            }
            MsgKind::Echo | MsgKind::Ready => {
                self.remember_payload(from, seq, digest, msg.payload, &mut out);
                let queue = match msg.kind {
                    MsgKind::Echo => &mut self.in_echo[from.index()],
                    _ => &mut self.in_ready[from.index()],
                };
                let at = queue.partition_point(|e| e.seq <= seq);
                queue.insert(at, InEntry { seq, digest });

                for key in self.flush_in_queues() {
                    self.evaluate(key, &mut out);
                }
            }
        }
        out.outbound = self.flush_out_queue(&mut out.events);
        Ok(out)
    }

    /// Consumes in-queue entries in sequence order and returns the
    /// `(seq, digest)` tallies that gained a member.
    pub fn flush_in_queues(&mut self) -> BTreeSet<(u64, PayloadDigest)> {
        let mut touched = BTreeSet::new();
        for peer in 0..self.th.n {
            drain_in_order(
                &mut self.in_echo[peer],
                &mut self.last_echo[peer],
                &mut self.echo_tally,
                AgentId(peer as u32),
                &mut touched,
            );
            drain_in_order(
                &mut self.in_ready[peer],
                &mut self.last_ready[peer],
                &mut self.ready_tally,
                AgentId(peer as u32),
                &mut touched,
            );
        }
        touched
    }

    /// Releases every queued message whose gate is open, in sequence order per
    /// peer. The first held message blocks everything behind it.
    pub fn flush_out_queue(&mut self, events: &mut Vec<RrbEvent>) -> Vec<(AgentId, RrbMessage)> {
        let mut released = Vec::new();
        for peer in 0..self.th.n {
            let id = AgentId(peer as u32);
            let done = self.last_echo[peer].min(self.last_ready[peer]);
            loop {
                let Some(head) = self.out_queues[peer].front() else {
                    break;
                };
                let open = id == self.self_id || done + 1 >= head.seq;
                if !open {
                    if self.blocked[peer] != Some(head.seq) {
                        self.blocked[peer] = Some(head.seq);
                        events.push(RrbEvent::RetalBlock { peer: id, seq: head.seq });
                    }
                    break;
                }
                // A lower seq queued behind the hold may pass without lifting it.
                if let Some(seq) = self.blocked[peer].filter(|&b| head.seq >= b) {
                    self.blocked[peer] = None;
                    events.push(RrbEvent::RetalUnblock { peer: id, seq });
                }
                let msg = self.out_queues[peer].pop_front().expect("peeked");
                released.push((id, msg));
            }
        }
        released
    }

    /// Records the delivery of `payload` for `seq`. Returns the payload the
    /// first time only.
    pub fn deliver(&mut self, payload: &Transaction, seq: u64) -> Option<Transaction> {
        if self.delivered.contains_key(&seq) {
            return None;
        }
        self.delivered.insert(seq, payload.digest());
        if self.self_id == self.owner && seq >= self.next_seq {
            self.next_seq = seq + 1;
        }
        Some(payload.clone())
    }

    fn remember_payload(
        &mut self,
        from: AgentId,
        seq: u64,
        digest: PayloadDigest,
        payload: Transaction,
        out: &mut RrbOutput,
    ) {
        if self.payloads.contains_key(&(seq, digest)) {
            return;
        }
        let conflicting = self
            .payloads
            .range((seq, PayloadDigest([0; 32]))..)
            .next()
            .is_some_and(|((s, _), _)| *s == seq);
        if conflicting {
            out.events.push(RrbEvent::ConflictingPayload { from, seq, digest });
        }
        self.payloads.insert((seq, digest), payload);
    }

    fn evaluate(&mut self, key: (u64, PayloadDigest), out: &mut RrbOutput) {
        let (seq, digest) = key;
        let echoes = self.echo_tally.get(&key).map_or(0, BTreeSet::len);
        let readies = self.ready_tally.get(&key).map_or(0, BTreeSet::len);
        if echoes >= self.th.echo_quorum || readies >= self.th.ready_init {
            if !self.echo_sent.contains(&seq) {
                self.enqueue_to_all(MsgKind::Echo, seq, digest);
            }
            if !self.ready_sent.contains(&seq) {
                self.enqueue_to_all(MsgKind::Ready, seq, digest);
            }
        }
        if readies >= self.th.deliver_quorum {
            let payload = self.payloads[&key].clone();
            if let Some(tx) = self.deliver(&payload, seq) {
                out.events.push(RrbEvent::Delivered { seq, digest });
                let at = out.delivered.partition_point(|d| d.seq <= seq);
                out.delivered.insert(at, tx);
            }
        }
    }

    fn enqueue_to_all(&mut self, kind: MsgKind, seq: u64, digest: PayloadDigest) {
        match kind {
            MsgKind::Echo => self.echo_sent.insert(seq),
            MsgKind::Ready => self.ready_sent.insert(seq),
            MsgKind::Initial => unreachable!("INITIAL is never queued"),
        };
        let payload = self.payloads[&(seq, digest)].clone();
        for queue in &mut self.out_queues {
            let at = queue.partition_point(|m| m.seq <= seq);
            queue.insert(
                at,
                RrbMessage {
                    channel: self.owner,
                    kind,
                    seq,
                    payload: payload.clone(),
                },
            );
        }
    }
}

fn drain_in_order(
    queue: &mut VecDeque<InEntry>,
    last: &mut u64,
    tally: &mut BTreeMap<(u64, PayloadDigest), BTreeSet<AgentId>>,
    peer: AgentId,
    touched: &mut BTreeSet<(u64, PayloadDigest)>,
) {
    while let Some(front) = queue.front() {
        if front.seq <= *last {
            // duplicate for a consumed sequence number
            queue.pop_front();
        } else if front.seq == *last + 1 {
            *last = front.seq;
            let key = (front.seq, front.digest);
            tally.entry(key).or_default().insert(peer);
            touched.insert(key);
            queue.pop_front();
        } else {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn th(n: usize, t: usize) -> Thresholds {
        Thresholds::new(n, t).unwrap()
    }

    fn tx(initiator: u32, seq: u64, value: u64) -> Transaction {
        Transaction {
            initiator: AgentId(initiator),
            recipient: AgentId((initiator + 1) % 4),
            value,
            seq,
            deps: Default::default(),
            fees: Default::default(),
        }
    }

    fn msg(channel: u32, kind: MsgKind, seq: u64, payload: &Transaction) -> RrbMessage {
        RrbMessage {
            channel: AgentId(channel),
            kind,
            seq,
            payload: payload.clone(),
        }
    }

    #[test]
    fn thresholds_follow_quorum_rules() {
        let t4 = th(4, 1);
        assert_eq!((t4.echo_quorum, t4.ready_init, t4.deliver_quorum), (3, 2, 3));
        let t7 = th(7, 2);
        // (7+2)/2 = 4.5 -> 5
        assert_eq!((t7.echo_quorum, t7.ready_init, t7.deliver_quorum), (5, 3, 5));
        let t6 = th(6, 1);
        // (6+1)/2 = 3.5 -> 4 ; even sum: (5+1)/2 = 3 -> 4
        assert_eq!(t6.echo_quorum, 4);
        assert_eq!(th(5, 1).echo_quorum, 4);
        assert!(Thresholds::new(3, 1).is_err());
        assert!(Thresholds::new(0, 0).is_err());
        for n in 1..40 {
            for t in 0..=((n - 1) / 3) {
                let q = th(n, t);
                assert!(q.deliver_quorum <= n - t);
                assert!(2 * q.echo_quorum > n + t);
                assert!(2 * (q.echo_quorum - 1) <= n + t);
            }
        }
    }

    #[test]
    fn broadcast_fans_out_to_everyone() {
        let mut inst = RrbInstance::new(AgentId(1), AgentId(1), th(4, 1));
        let p = tx(1, 1, 5);
        let out = inst.broadcast(p.clone()).unwrap();
        assert_eq!(out.len(), 4);
        for (i, (to, m)) in out.iter().enumerate() {
            assert_eq!(*to, AgentId(i as u32));
            assert_eq!(*m, msg(1, MsgKind::Initial, 1, &p));
        }
        assert_eq!(inst.broadcast(p), Err(RrbError::AlreadyBroadcast(1)));
    }

    #[test]
    fn broadcast_rejects_non_owner_and_bad_seq() {
        let mut other = RrbInstance::new(AgentId(1), AgentId(2), th(4, 1));
        assert!(matches!(other.broadcast(tx(1, 1, 5)), Err(RrbError::NotOwner { .. })));

        let mut inst = RrbInstance::new(AgentId(1), AgentId(1), th(4, 1));
        inst.next_seq = 3;
        assert_eq!(
            inst.broadcast(tx(1, 2, 5)),
            Err(RrbError::SeqMismatch { expected: 3, got: 2 })
        );
    }

    #[test]
    fn wrong_channel_is_an_error_and_forged_initial_is_ignored() {
        let mut inst = RrbInstance::new(AgentId(0), AgentId(2), th(4, 1));
        let p = tx(1, 1, 5);
        assert!(matches!(
            inst.on_receive(AgentId(1), msg(1, MsgKind::Initial, 1, &p)),
            Err(RrbError::WrongChannel { .. })
        ));
        let p0 = tx(0, 1, 5);
        let out = inst.on_receive(AgentId(3), msg(0, MsgKind::Initial, 1, &p0)).unwrap();
        assert_eq!(out.events, vec![RrbEvent::ForgedInitial { from: AgentId(3), seq: 1 }]);
        assert!(out.outbound.is_empty());
        assert!(!inst.has_sent_echo(1));
    }

    #[test]
    fn initial_queues_one_echo_per_peer() {
        let mut inst = RrbInstance::new(AgentId(0), AgentId(2), th(4, 1));
        let p = tx(0, 1, 5);
        let out = inst.on_receive(AgentId(0), msg(0, MsgKind::Initial, 1, &p)).unwrap();
        assert_eq!(out.outbound.len(), 4);
        assert!(out.outbound.iter().all(|(_, m)| m.kind == MsgKind::Echo && m.seq == 1));
        // a repeated INITIAL does not echo again
        let out = inst.on_receive(AgentId(0), msg(0, MsgKind::Initial, 1, &p)).unwrap();
        assert!(out.outbound.is_empty());
    }

    #[test]
    fn echo_quorum_triggers_ready() {
        // N=4, t=1: echo quorum is 3
        let mut inst = RrbInstance::new(AgentId(0), AgentId(2), th(4, 1));
        let p = tx(0, 1, 5);
        let d = p.digest();
        inst.on_receive(AgentId(0), msg(0, MsgKind::Initial, 1, &p)).unwrap();
        for (i, from) in [0u32, 1].into_iter().enumerate() {
            let out = inst.on_receive(AgentId(from), msg(0, MsgKind::Echo, 1, &p)).unwrap();
            assert!(out.outbound.is_empty());
            assert_eq!(inst.echo_count(1, &d), i + 1);
            assert!(!inst.has_sent_ready(1));
        }
        let out = inst.on_receive(AgentId(3), msg(0, MsgKind::Echo, 1, &p)).unwrap();
        assert!(inst.has_sent_ready(1));
        assert_eq!(out.outbound.len(), 4);
        assert!(out.outbound.iter().all(|(_, m)| m.kind == MsgKind::Ready));
    }

    #[test]
    fn ready_amplification_without_echo_quorum() {
        // t+1 = 2 readies make an agent that never saw INITIAL echo and ready
        let mut inst = RrbInstance::new(AgentId(0), AgentId(2), th(4, 1));
        let p = tx(0, 1, 5);
        inst.on_receive(AgentId(1), msg(0, MsgKind::Ready, 1, &p)).unwrap();
        assert!(!inst.has_sent_echo(1));
        let out = inst.on_receive(AgentId(3), msg(0, MsgKind::Ready, 1, &p)).unwrap();
        assert!(inst.has_sent_echo(1) && inst.has_sent_ready(1));
        let kinds: BTreeSet<_> = out.outbound.iter().map(|(_, m)| m.kind).collect();
        assert_eq!(kinds, [MsgKind::Echo, MsgKind::Ready].into_iter().collect());
        assert_eq!(out.outbound.len(), 8);
    }

    #[test]
    fn duplicate_echo_does_not_change_tally() {
        let mut inst = RrbInstance::new(AgentId(0), AgentId(2), th(4, 1));
        let p = tx(0, 1, 5);
        inst.on_receive(AgentId(1), msg(0, MsgKind::Echo, 1, &p)).unwrap();
        inst.on_receive(AgentId(1), msg(0, MsgKind::Echo, 1, &p)).unwrap();
        assert_eq!(inst.echo_count(1, &p.digest()), 1);
        assert_eq!(inst.in_queue_lens(AgentId(1)), (0, 0));
    }

    #[test]
    fn in_queue_drains_in_order() {
        let mut inst = RrbInstance::new(AgentId(0), AgentId(2), th(4, 1));
        let (a, b) = (tx(0, 1, 5), tx(0, 2, 6));
        inst.in_echo[3].push_back(InEntry { seq: 1, digest: a.digest() });
        inst.in_echo[3].push_back(InEntry { seq: 2, digest: b.digest() });
        inst.flush_in_queues();
        assert_eq!(inst.last_echo(AgentId(3)), 2);
    }

    #[test]
    fn in_queue_gap_blocks_until_filled() {
        let mut inst = RrbInstance::new(AgentId(0), AgentId(2), th(4, 1));
        let (a, b) = (tx(0, 1, 5), tx(0, 2, 6));
        inst.on_receive(AgentId(3), msg(0, MsgKind::Echo, 2, &b)).unwrap();
        assert_eq!(inst.last_echo(AgentId(3)), 0);
        assert_eq!(inst.echo_count(2, &b.digest()), 0);
        assert_eq!(inst.in_queue_lens(AgentId(3)), (1, 0));
        inst.on_receive(AgentId(3), msg(0, MsgKind::Echo, 1, &a)).unwrap();
        assert_eq!(inst.last_echo(AgentId(3)), 2);
        assert_eq!(inst.echo_count(1, &a.digest()), 1);
        assert_eq!(inst.echo_count(2, &b.digest()), 1);
    }

    #[test]
    fn second_digest_for_same_seq_is_discarded() {
        let mut inst = RrbInstance::new(AgentId(0), AgentId(2), th(4, 1));
        let (d1, d2) = (tx(0, 1, 5), tx(0, 1, 9));
        inst.on_receive(AgentId(3), msg(0, MsgKind::Echo, 1, &d1)).unwrap();
        let out = inst.on_receive(AgentId(3), msg(0, MsgKind::Echo, 1, &d2)).unwrap();
        assert!(matches!(out.events[..], [RrbEvent::ConflictingPayload { seq: 1, .. }]));
        assert_eq!(inst.echo_count(1, &d1.digest()), 1);
        assert_eq!(inst.echo_count(1, &d2.digest()), 0);
    }

    #[test]
    fn gate_releases_seq_one_and_holds_seq_two() {
        let mut inst = RrbInstance::new(AgentId(0), AgentId(1), th(4, 1));
        let (a, b) = (tx(0, 1, 5), tx(0, 2, 6));
        let out = inst.on_receive(AgentId(0), msg(0, MsgKind::Initial, 1, &a)).unwrap();
        assert!(out.outbound.iter().any(|(to, _)| *to == AgentId(2)));
        let out = inst.on_receive(AgentId(0), msg(0, MsgKind::Initial, 2, &b)).unwrap();
        // peers 0, 2, 3 have not completed seq 1; only loopback passes
        assert_eq!(out.outbound.len(), 1);
        assert_eq!(out.outbound[0].0, AgentId(1));
        assert!(out.events.contains(&RrbEvent::RetalBlock { peer: AgentId(2), seq: 2 }));
        assert!(inst.is_blocked(AgentId(2)));

        // peer 2 completes seq 1: its echo alone is not enough
        let out = inst.on_receive(AgentId(2), msg(0, MsgKind::Echo, 1, &a)).unwrap();
        assert!(!out.outbound.iter().any(|(to, _)| *to == AgentId(2)));
        let out = inst.on_receive(AgentId(2), msg(0, MsgKind::Ready, 1, &a)).unwrap();
        let to2: Vec<_> = out.outbound.iter().filter(|(to, _)| *to == AgentId(2)).collect();
        assert_eq!(to2.len(), 1);
        assert_eq!((to2[0].1.kind, to2[0].1.seq), (MsgKind::Echo, 2));
        assert!(out.events.contains(&RrbEvent::RetalUnblock { peer: AgentId(2), seq: 2 }));
        assert!(!inst.is_blocked(AgentId(2)));
    }

    #[test]
    fn delivery_happens_once_per_seq() {
        let mut inst = RrbInstance::new(AgentId(0), AgentId(0), th(4, 1));
        let p = tx(0, 1, 5);
        assert_eq!(inst.deliver(&p, 1), Some(p.clone()));
        assert_eq!(inst.next_seq(), 2);
        assert_eq!(inst.deliver(&p, 1), None);
        assert_eq!(inst.deliver(&tx(0, 1, 7), 1), None);
        assert_eq!(inst.delivered_digest(1), Some(p.digest()));
    }

    #[test]
    fn non_owner_delivery_leaves_next_seq() {
        let mut inst = RrbInstance::new(AgentId(0), AgentId(3), th(4, 1));
        inst.deliver(&tx(0, 1, 5), 1);
        assert_eq!(inst.next_seq(), 1);
    }

    #[test]
    fn ready_quorum_delivers_exactly_once() {
        let mut inst = RrbInstance::new(AgentId(0), AgentId(2), th(4, 1));
        let p = tx(0, 1, 5);
        let mut delivered = Vec::new();
        for from in [0u32, 1, 3, 2] {
            let out = inst.on_receive(AgentId(from), msg(0, MsgKind::Ready, 1, &p)).unwrap();
            delivered.extend(out.delivered);
        }
        assert_eq!(delivered, vec![p]);
    }
}
