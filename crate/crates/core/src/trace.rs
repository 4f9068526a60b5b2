//! Line-delimited JSON trace records.
//!
//! A trace starts with one `HEADER` record, ends with one `END` record, and is
//! strictly ordered by `(tick, idx)`. Checkers only ever read traces, so a
//! trace file is self-contained.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{LedgerSnapshot, Verdict};
use crate::rrb::MsgKind;
use crate::strategy::StrategyKind;
use crate::types::{AgentId, Money, PayloadDigest, Transaction, TxId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentInfo {
    pub id: AgentId,
    pub kind: StrategyKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub n: usize,
    pub t: usize,
    pub epsilon: Money,
    pub initial_balance: Money,
    pub seed: u64,
    pub d_min: u64,
    pub d_max: u64,
    /// Per-message cost as `"num/den"`.
    pub msg_cost_c: String,
    pub agents: Vec<AgentInfo>,
}

impl TraceHeader {
    pub fn kind_of(&self, agent: AgentId) -> Option<StrategyKind> {
        self.agents.iter().find(|a| a.id == agent).map(|a| a.kind)
    }

    /// Agents that follow the protocol exactly; the properties are stated
    /// over these.
    pub fn compliant(&self) -> Vec<AgentId> {
        self.agents
            .iter()
            .filter(|a| a.kind == StrategyKind::Compliant)
            .map(|a| a.id)
            .collect()
    }
}

/// Balance snapshot as written to the trace. Balances are signed so that a
/// corrupted or hand-written trace can express debt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub balances: Vec<i64>,
    pub seqs: Vec<u64>,
    pub fee_credits: Vec<usize>,
    pub payments: Vec<usize>,
    pub payment_value: Vec<Money>,
}

impl From<&LedgerSnapshot> for SnapshotRecord {
    fn from(s: &LedgerSnapshot) -> Self {
        SnapshotRecord {
            balances: s.balances.iter().map(|&b| i64::try_from(b).unwrap_or(i64::MAX)).collect(),
            seqs: s.seqs.clone(),
            fee_credits: s.fee_credits.clone(),
            payments: s.payments.clone(),
            payment_value: s.payment_value.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TraceEvent {
    Header(TraceHeader),
    Send {
        from: AgentId,
        to: AgentId,
        channel: AgentId,
        msg: MsgKind,
        seq: u64,
        digest: PayloadDigest,
        /// Full payload, present on `INITIAL` only.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tx: Option<Transaction>,
    },
    Recv {
        from: AgentId,
        to: AgentId,
        channel: AgentId,
        msg: MsgKind,
        seq: u64,
        digest: PayloadDigest,
    },
    RrbDeliver {
        agent: AgentId,
        channel: AgentId,
        seq: u64,
        digest: PayloadDigest,
    },
    Execute {
        agent: AgentId,
        tx: Transaction,
        verdict: Verdict,
    },
    Commit {
        agent: AgentId,
        tx: TxId,
        recipient: AgentId,
        value: Money,
    },
    FeeCredit {
        agent: AgentId,
        tx: TxId,
        credits: usize,
    },
    FeeConvert {
        agent: AgentId,
        initiator: AgentId,
        credit: TxId,
    },
    RetalBlock {
        agent: AgentId,
        peer: AgentId,
        channel: AgentId,
        seq: u64,
    },
    RetalUnblock {
        agent: AgentId,
        peer: AgentId,
        channel: AgentId,
        seq: u64,
    },
    Snapshot {
        agent: AgentId,
        #[serde(flatten)]
        state: SnapshotRecord,
    },
    /// Observed protocol deviation; logged, never acted on.
    Evidence {
        agent: AgentId,
        channel: AgentId,
        detail: String,
    },
    PayRefused {
        agent: AgentId,
        reason: String,
    },
    End {
        quiescent: bool,
        steps: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tick: u64,
    pub idx: u64,
    #[serde(flatten)]
    pub event: TraceEvent,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("trace is empty")]
    Empty,
    #[error("first record must be HEADER")]
    MissingHeader,
    #[error("record {idx} is out of (tick, idx) order")]
    OutOfOrder { idx: u64 },
}

pub fn write_jsonl<W: Write>(mut w: W, records: &[TraceRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn to_jsonl(records: &[TraceRecord]) -> String {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, records).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<TraceRecord>, TraceError> {
    let mut out: Vec<TraceRecord> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(&line).map_err(|source| TraceError::Parse { line: i + 1, source })?;
        if let Some(prev) = out.last() {
            if (rec.tick, rec.idx) <= (prev.tick, prev.idx) {
                return Err(TraceError::OutOfOrder { idx: rec.idx });
            }
        }
        out.push(rec);
    }
    match out.first() {
        None => Err(TraceError::Empty),
        Some(TraceRecord {
            event: TraceEvent::Header(_),
            ..
        }) => Ok(out),
        Some(_) => Err(TraceError::MissingHeader),
    }
}

pub fn parse_jsonl(s: &str) -> Result<Vec<TraceRecord>, TraceError> {
    read_jsonl(s.as_bytes())
}
