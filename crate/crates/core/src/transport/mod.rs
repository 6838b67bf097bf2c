//! Point-to-point messaging between worker ranks with per-phase traffic
//! accounting.
//!
//! A [`WorkerCtx`] wraps one rank's [`Transport`] and the run's shared
//! [`TrafficLedger`]. Every `send` credits the sender's row and every `recv`
//! credits the receiver's row, counting payload words only: a word is one
//! index or one value, whatever its in-memory width. Control headers travel
//! with the message but show up only in the message count.

mod collective;
mod inproc;
mod ledger;
pub mod tcp;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

pub use collective::{
    allgather_blocks, allreduce_sum, is_power_of_two, require_power_of_two, small_allreduce_avg,
    Block,
};
pub use inproc::{
    inproc_fabric, run_inproc, run_workers, AbortHandle, InProcOptions, InProcTransport,
};
pub use ledger::{LedgerSnapshot, PhaseTraffic, RankTraffic, TrafficLedger};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Communication phase a message belongs to. The string forms appear in
/// metrics output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Split,
    Balance,
    Allgatherv,
    Consensus,
    Dense,
    Gather,
}

impl Phase {
    pub const ALL: [Phase; 6] = [
        Phase::Split,
        Phase::Balance,
        Phase::Allgatherv,
        Phase::Consensus,
        Phase::Dense,
        Phase::Gather,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Split => "split",
            Phase::Balance => "balance",
            Phase::Allgatherv => "allgatherv",
            Phase::Consensus => "consensus",
            Phase::Dense => "dense",
            Phase::Gather => "gather",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub(crate) fn from_index(i: usize) -> Option<Phase> {
        Phase::ALL.get(i).copied()
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Phase::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown phase label {s:?}")))
    }
}

/// A message body: uncounted control header, index words and value words.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Payload {
    pub header: Vec<u32>,
    pub ints: Vec<u32>,
    pub reals: Vec<f64>,
}

impl Payload {
    pub fn words(&self) -> usize {
        self.ints.len() + self.reals.len()
    }

    pub fn reals(reals: Vec<f64>) -> Self {
        Self {
            reals,
            ..Self::default()
        }
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("peer {peer} closed its end of the channel")]
    Closed { peer: usize },
    #[error("run aborted by another worker")]
    Aborted,
    #[error("malformed frame: {0}")]
    Frame(String),
    #[error("transport i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// One rank's endpoint. Sends are buffered; `recv` blocks until a message
/// from `src` with the given phase arrives. Messages on the same
/// `(src, dst, phase)` channel are delivered in send order.
pub trait Transport: Send {
    fn rank(&self) -> usize;
    fn world_size(&self) -> usize;
    fn send(&mut self, dst: usize, phase: Phase, payload: Payload) -> Result<(), TransportError>;
    fn recv(&mut self, src: usize, phase: Phase) -> Result<Payload, TransportError>;
}

/// Receipt for a buffered send.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SendTicket {
    pub dst: usize,
    pub phase: Phase,
    pub seq: u64,
}

/// Number of point-to-point messages issued together in one bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bucket(usize);

impl Bucket {
    /// Clamps `size` into `1..=world-1` (or 1 for a single rank).
    pub fn new(size: usize, world: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::invalid("bucket size must be >= 1"));
        }
        Ok(Self(size.min(world.saturating_sub(1).max(1))))
    }

    pub fn size(self) -> usize {
        self.0
    }
}

pub struct WorkerCtx {
    rank: usize,
    world: usize,
    transport: Box<dyn Transport>,
    ledger: Arc<TrafficLedger>,
    seq: u64,
}

impl WorkerCtx {
    pub fn new(transport: Box<dyn Transport>, ledger: Arc<TrafficLedger>) -> Self {
        let rank = transport.rank();
        let world = transport.world_size();
        assert!(rank < world);
        assert!(ledger.world_size() >= world);
        Self {
            rank,
            world,
            transport,
            ledger,
            seq: 0,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn world_size(&self) -> usize {
        self.world
    }

    pub fn ledger(&self) -> &Arc<TrafficLedger> {
        &self.ledger
    }

    fn check_peer(&self, peer: usize) -> Result<()> {
        if peer >= self.world {
            return Err(Error::invalid(format!(
                "rank {peer} out of range for world size {}",
                self.world
            )));
        }
        if peer == self.rank {
            return Err(Error::invalid(format!(
                "rank {} cannot message itself",
                self.rank
            )));
        }
        Ok(())
    }

    pub fn send(&mut self, dst: usize, phase: Phase, payload: Payload) -> Result<SendTicket> {
        self.check_peer(dst)?;
        let words = payload.words();
        self.transport.send(dst, phase, payload)?;
        self.ledger.record_send(self.rank, phase, words as u64);
        self.seq += 1;
        Ok(SendTicket {
            dst,
            phase,
            seq: self.seq,
        })
    }

    pub fn recv(&mut self, src: usize, phase: Phase) -> Result<Payload> {
        self.check_peer(src)?;
        let payload = self.transport.recv(src, phase)?;
        self.ledger
            .record_recv(self.rank, phase, payload.words() as u64);
        Ok(payload)
    }

    /// Sends to `peer` and then receives from it on the same phase.
    pub fn exchange(&mut self, peer: usize, phase: Phase, payload: Payload) -> Result<Payload> {
        self.send(peer, phase, payload)?;
        self.recv(peer, phase)
    }
}

impl fmt::Debug for WorkerCtx {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WorkerCtx")
            .field("rank", &self.rank)
            .field("world", &self.world)
            .finish_non_exhaustive()
    }
}
