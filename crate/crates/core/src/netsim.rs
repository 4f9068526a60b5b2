//! Deterministic discrete-event network simulator.
//!
//! Messages are delivered in `(deliver_at, send_seq)` order. The delay of the
//! message with send sequence `k` is drawn uniformly from `[d_min, d_max]` by a
//! ChaCha8 generator seeded with the run seed on stream `k`, so the schedule
//! does not depend on how many random numbers anything else consumed.
//! Loopback messages arrive with zero delay. Script actions due at tick `T`
//! run before any message delivered at `T`.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentEvent, AgentStack, Effects};
use crate::ledger::{LedgerParams, LedgerSnapshot, Verdict};
use crate::rrb::{MsgKind, RrbEvent, RrbMessage, Thresholds};
use crate::strategy::{self, parse_cost, Action, AgentSpec, Ctx, Strategy, StrategyKind};
use crate::trace::{AgentInfo, SnapshotRecord, TraceEvent, TraceHeader, TraceRecord};
use crate::types::{AgentId, Money};

pub const DEFAULT_MAX_STEPS: u64 = 5_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub tick: u64,
    pub agent: AgentId,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub t: usize,
    pub epsilon: Money,
    pub initial_balance: Money,
    pub seed: u64,
    pub d_min: u64,
    pub d_max: u64,
    /// Never deliver a message before an earlier one on the same directed link.
    pub fifo_channels: bool,
    pub condition3_strict: bool,
    /// Per-message cost for utility accounting, `"num/den"`.
    pub msg_cost_c: String,
    /// One entry per agent, indexed by id.
    pub agents: Vec<AgentSpec>,
    pub script: Vec<ScriptEntry>,
    pub max_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("need 3t < n, got n={n}, t={t}")]
    Resilience { n: usize, t: usize },
    #[error("need initial_balance > n*epsilon, got {initial_balance} <= {fee}")]
    InitialBalance { initial_balance: Money, fee: Money },
    #[error("need epsilon > 0")]
    Epsilon,
    #[error("need 1 <= d_min <= d_max, got d_min={d_min}, d_max={d_max}")]
    Delays { d_min: u64, d_max: u64 },
    #[error("at most t={t} Byzantine agents allowed, got {count}")]
    TooManyByzantine { t: usize, count: usize },
    #[error("agent list must name each of the n={n} agents exactly once")]
    Agents { n: usize },
    #[error("script entry {index} refers to unknown agent {agent}")]
    ScriptAgent { index: usize, agent: AgentId },
    #[error("msg_cost_c {0:?} is not a number or num/den fraction")]
    MsgCost(String),
    #[error("skip_probability must be within [0, 1]")]
    SkipProbability,
}

impl SimConfig {
    /// All-compliant configuration with an empty script.
    pub fn new(n: usize, t: usize, seed: u64) -> Self {
        SimConfig {
            n,
            t,
            epsilon: 1,
            initial_balance: 1000,
            seed,
            d_min: 1,
            d_max: 10,
            fifo_channels: false,
            condition3_strict: false,
            msg_cost_c: "1/100".into(),
            agents: AgentId::all(n)
                .map(|id| AgentSpec {
                    id,
                    kind: StrategyKind::Compliant,
                    params: Default::default(),
                })
                .collect(),
            script: Vec::new(),
            max_steps: DEFAULT_MAX_STEPS,
        }
    }

    pub fn with_agent(mut self, spec: AgentSpec) -> Self {
        let i = spec.id.index();
        self.agents[i] = spec;
        self
    }

    pub fn ledger_params(&self) -> LedgerParams {
        LedgerParams {
            n: self.n,
            epsilon: self.epsilon,
            initial_balance: self.initial_balance,
            condition3_strict: self.condition3_strict,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let (n, t) = (self.n, self.t);
        if n == 0 || 3 * t >= n {
            return Err(ConfigError::Resilience { n, t });
        }
        if self.epsilon == 0 {
            return Err(ConfigError::Epsilon);
        }
        let fee = (n as Money).saturating_mul(self.epsilon);
        if self.initial_balance <= fee {
            return Err(ConfigError::InitialBalance {
                initial_balance: self.initial_balance,
                fee,
            });
        }
        if self.d_min < 1 || self.d_min > self.d_max {
            return Err(ConfigError::Delays {
                d_min: self.d_min,
                d_max: self.d_max,
            });
        }
        if self.agents.len() != n || self.agents.iter().enumerate().any(|(i, a)| a.id.index() != i) {
            return Err(ConfigError::Agents { n });
        }
        let count = self.agents.iter().filter(|a| a.kind.is_byzantine()).count();
        if count > t {
            return Err(ConfigError::TooManyByzantine { t, count });
        }
        if self
            .agents
            .iter()
            .filter_map(|a| a.params.skip_probability)
            .any(|p| !(0.0..=1.0).contains(&p))
        {
            return Err(ConfigError::SkipProbability);
        }
        for (index, e) in self.script.iter().enumerate() {
            let mut ids = vec![e.agent];
            match e.action {
                Action::Pay { to, .. } => ids.push(to),
                Action::Backfill { channel } => ids.push(channel),
            }
            if let Some(&agent) = ids.iter().find(|a| a.index() >= n) {
                return Err(ConfigError::ScriptAgent { index, agent });
            }
        }
        if parse_cost(&self.msg_cost_c).is_none() {
            return Err(ConfigError::MsgCost(self.msg_cost_c.clone()));
        }
        Ok(())
    }

    pub fn header(&self) -> TraceHeader {
        TraceHeader {
            n: self.n,
            t: self.t,
            epsilon: self.epsilon,
            initial_balance: self.initial_balance,
            seed: self.seed,
            d_min: self.d_min,
            d_max: self.d_max,
            msg_cost_c: self.msg_cost_c.clone(),
            agents: self.agents.iter().map(|a| AgentInfo { id: a.id, kind: a.kind }).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub trace: Vec<TraceRecord>,
    pub stacks: Vec<AgentStack>,
    pub quiescent: bool,
    /// Messages delivered.
    pub steps: u64,
    pub final_tick: u64,
}

impl SimOutcome {
    pub fn snapshots(&self) -> Vec<LedgerSnapshot> {
        self.stacks.iter().map(|s| s.ledger.snapshot()).collect()
    }
}

struct InFlight {
    from: AgentId,
    to: AgentId,
    msg: RrbMessage,
}

struct Sim {
    seed: u64,
    d_min: u64,
    d_max: u64,
    fifo: bool,
    n: usize,
    now: u64,
    idx: u64,
    send_seq: u64,
    heap: BinaryHeap<Reverse<(u64, u64)>>,
    flights: Vec<Option<InFlight>>,
    link_last: Vec<u64>,
    trace: Vec<TraceRecord>,
}

impl Sim {
    fn record(&mut self, event: TraceEvent) {
        self.idx += 1;
        self.trace.push(TraceRecord {
            tick: self.now,
            idx: self.idx,
            event,
        });
    }

    fn delay(&self, k: u64) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(k);
        rng.random_range(self.d_min..=self.d_max)
    }

    fn send(&mut self, from: AgentId, to: AgentId, msg: RrbMessage) {
        let k = self.send_seq;
        self.send_seq += 1;
        let mut at = self.now + if from == to { 0 } else { self.delay(k) };
        if self.fifo {
            let link = from.index() * self.n + to.index();
            at = at.max(self.link_last[link]);
            self.link_last[link] = at;
        }
        self.record(TraceEvent::Send {
            from,
            to,
            channel: msg.channel,
            msg: msg.kind,
            seq: msg.seq,
            digest: msg.payload.digest(),
            tx: (msg.kind == MsgKind::Initial).then(|| msg.payload.clone()),
        });
        self.heap.push(Reverse((at, k)));
        debug_assert_eq!(self.flights.len() as u64, k);
        self.flights.push(Some(InFlight { from, to, msg }));
    }

    fn emit(&mut self, agent: AgentId, eff: Effects) {
        for ev in eff.events {
            match ev {
                AgentEvent::Rrb { channel, event } => self.rrb_event(agent, channel, event),
                AgentEvent::Executed(ex) => {
                    let id = ex.tx.id();
                    let tx = ex.tx;
                    for credit in ex.converted_fees {
                        self.record(TraceEvent::FeeConvert {
                            agent,
                            initiator: tx.initiator,
                            credit,
                        });
                    }
                    let (recipient, value) = (tx.recipient, tx.value);
                    self.record(TraceEvent::Execute {
                        agent,
                        tx,
                        verdict: ex.verdict,
                    });
                    if ex.verdict == Verdict::Committed {
                        self.record(TraceEvent::Commit {
                            agent,
                            tx: id,
                            recipient,
                            value,
                        });
                    }
                    self.record(TraceEvent::FeeCredit {
                        agent,
                        tx: id,
                        credits: self.n,
                    });
                    self.record(TraceEvent::Snapshot {
                        agent,
                        state: SnapshotRecord::from(&ex.after),
                    });
                }
                AgentEvent::PayRefused { reason } => self.record(TraceEvent::PayRefused { agent, reason }),
                AgentEvent::Evidence { channel, detail } => self.record(TraceEvent::Evidence { agent, channel, detail }),
            }
        }
        for (to, msg) in eff.sends {
            self.send(agent, to, msg);
        }
    }

    fn rrb_event(&mut self, agent: AgentId, channel: AgentId, event: RrbEvent) {
        let ev = match event {
            RrbEvent::RetalBlock { peer, seq } => TraceEvent::RetalBlock {
                agent,
                peer,
                channel,
                seq,
            },
            RrbEvent::RetalUnblock { peer, seq } => TraceEvent::RetalUnblock {
                agent,
                peer,
                channel,
                seq,
            },
            RrbEvent::Delivered { seq, digest } => TraceEvent::RrbDeliver {
                agent,
                channel,
                seq,
                digest,
            },
            RrbEvent::ForgedInitial { from, seq } => TraceEvent::Evidence {
                agent,
                channel,
                detail: format!("INITIAL for seq {seq} from non-owner {from}"),
            },
            RrbEvent::ConflictingPayload { from, seq, digest } => TraceEvent::Evidence {
                agent,
                channel,
                detail: format!("second payload {} for seq {seq} via {from}", digest.short()),
            },
            RrbEvent::InvalidSeq { from } => TraceEvent::Evidence {
                agent,
                channel,
                detail: format!("seq 0 from {from}"),
            },
        };
        self.record(ev);
    }
}

/// Runs a configuration to quiescence or until `max_steps` messages have been
/// delivered.
pub fn run(config: &SimConfig) -> Result<SimOutcome, ConfigError> {
    config.validate()?;
    let n = config.n;
    let th = Thresholds::new(n, config.t).map_err(|_| ConfigError::Resilience { n, t: config.t })?;
    let params = config.ledger_params();
    let mut stacks: Vec<AgentStack> = AgentId::all(n).map(|id| AgentStack::new(id, th, params)).collect();
    let mut strategies: Vec<Box<dyn Strategy>> = config.agents.iter().map(strategy::build).collect();

    let mut script: Vec<&ScriptEntry> = config.script.iter().collect();
    script.sort_by_key(|e| e.tick);
    let mut script = script.into_iter().peekable();

    let mut sim = Sim {
        seed: config.seed,
        d_min: config.d_min,
        d_max: config.d_max,
        fifo: config.fifo_channels,
        n,
        now: 0,
        idx: 0,
        send_seq: 0,
        heap: BinaryHeap::new(),
        flights: Vec::new(),
        link_last: vec![0; n * n],
        trace: Vec::new(),
    };
    sim.trace.push(TraceRecord {
        tick: 0,
        idx: 0,
        event: TraceEvent::Header(config.header()),
    });

    let mut steps = 0u64;
    loop {
        let next_msg = sim.heap.peek().map(|Reverse((at, _))| *at);
        let next_act = script.peek().map(|e| e.tick);
        let take_action = match (next_act, next_msg) {
            (None, None) => break,
            (Some(a), Some(m)) => a <= m,
            (Some(_), None) => true,
            (None, Some(_)) => false,
        };
        if take_action {
            let entry = script.next().expect("peeked");
            sim.now = sim.now.max(entry.tick);
            let a = entry.agent;
            let ctx = Ctx {
                seed: config.seed,
                tick: sim.now,
            };
            let mut eff = Effects::default();
            strategies[a.index()].on_action(&mut stacks[a.index()], &entry.action, ctx, &mut eff);
            sim.emit(a, eff);
            continue;
        }
        if steps >= config.max_steps {
            break;
        }
        let Reverse((at, k)) = sim.heap.pop().expect("peeked");
        sim.now = at;
        let InFlight { from, to, msg } = sim.flights[k as usize].take().expect("each message delivered once");
        steps += 1;
        sim.record(TraceEvent::Recv {
            from,
            to,
            channel: msg.channel,
            msg: msg.kind,
            seq: msg.seq,
            digest: msg.payload.digest(),
        });
        let ctx = Ctx {
            seed: config.seed,
            tick: sim.now,
        };
        let mut eff = Effects::default();
        strategies[to.index()].on_message(&mut stacks[to.index()], from, msg, ctx, &mut eff);
        sim.emit(to, eff);
    }

    let quiescent = sim.heap.is_empty() && script.peek().is_none();
    for s in &stacks {
        sim.record(TraceEvent::Snapshot {
            agent: s.id(),
            state: SnapshotRecord::from(&s.ledger.snapshot()),
        });
    }
    sim.record(TraceEvent::End { quiescent, steps });
    Ok(SimOutcome {
        trace: sim.trace,
        stacks,
        quiescent,
        steps,
        final_tick: sim.now,
    })
}
