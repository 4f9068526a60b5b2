//! Identifiers, transactions and the canonical payload encoding.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

/// Money in indivisible units.
pub type Money = u64;

/// Zero-based agent index in `0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl AgentId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// All agent ids of an `n`-agent system, ascending.
    pub fn all(n: usize) -> impl Iterator<Item = AgentId> {
        (0..n as u32).map(AgentId)
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for AgentId {
    fn from(v: u32) -> Self {
        AgentId(v)
    }
}

/// Identifies a transaction by its initiator and that initiator's sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TxId {
    pub initiator: AgentId,
    pub seq: u64,
}

impl TxId {
    pub fn new(initiator: impl Into<AgentId>, seq: u64) -> Self {
        TxId {
            initiator: initiator.into(),
            seq,
        }
    }
}

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.initiator, self.seq)
    }
}

/// The wire payload broadcast on an initiator's channel.
///
/// Only the six constructed fields travel on the wire; the bad/committed
/// verdict is a per-agent ledger fact.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transaction {
    pub initiator: AgentId,
    pub recipient: AgentId,
    pub value: Money,
    pub seq: u64,
    #[serde(default)]
    pub deps: BTreeSet<TxId>,
    #[serde(default)]
    pub fees: BTreeSet<TxId>,
}

impl Transaction {
    pub fn id(&self) -> TxId {
        TxId {
            initiator: self.initiator,
            seq: self.seq,
        }
    }

    /// Canonical byte encoding: initiator, recipient, value, seq, then the
    /// sorted deps and sorted fees, each prefixed by its length. All integers
    /// are little-endian and fixed width (ids `u32`, amounts and seqs `u64`).
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 12 * (self.deps.len() + self.fees.len()) + 8);
        out.extend_from_slice(&self.initiator.0.to_le_bytes());
        out.extend_from_slice(&self.recipient.0.to_le_bytes());
        out.extend_from_slice(&self.value.to_le_bytes());
        out.extend_from_slice(&self.seq.to_le_bytes());
        for set in [&self.deps, &self.fees] {
            out.extend_from_slice(&(set.len() as u32).to_le_bytes());
            // BTreeSet iterates in ascending (initiator, seq) order.
            for id in set {
                out.extend_from_slice(&id.initiator.0.to_le_bytes());
                out.extend_from_slice(&id.seq.to_le_bytes());
            }
        }
        out
    }

    pub fn digest(&self) -> PayloadDigest {
        PayloadDigest(Sha256::digest(self.canonical_bytes()).into())
    }
}

/// SHA-256 of a transaction's canonical encoding.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PayloadDigest(pub [u8; 32]);

impl PayloadDigest {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(PayloadDigest(out))
    }

    /// First eight hex characters, for log lines.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for PayloadDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PayloadDigest({})", self.short())
    }
}

impl fmt::Display for PayloadDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for PayloadDigest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for PayloadDigest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PayloadDigest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}
