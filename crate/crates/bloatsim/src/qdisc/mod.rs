//! Queue disciplines for the bottleneck: tail-drop FIFO, CoDel on a FIFO,
//! CoDel on a LIFO stack with a drop-forgiveness gate, and flow-queue (DRR)
//! versions of both CoDel variants.
//!
//! All disciplines share one shape: `admit` may reject at the tail when the
//! shared packet limit is hit, and `dequeue` removes packets at service time,
//! possibly discarding several before handing one to the wire.

mod codel;
mod codel_lifo;
mod droptail;
mod fq;

pub use codel::{CodelControl, CodelFifo, Verdict};
pub use codel_lifo::{CodelLifo, ForgivenessGate, GateSnapshot};
pub use droptail::DropTail;
pub use fq::FqCodel;

use crate::net::Packet;
use crate::sim::SimTime;
use std::fmt;
use std::str::FromStr;

/// Tuning shared by every discipline. Disciplines ignore the knobs they
/// don't use (DropTail only reads `limit`).
#[derive(Clone, Debug)]
pub struct DisciplineConfig {
    /// Hard occupancy cap in packets, shared across all sub-queues.
    pub limit: usize,
    /// Sojourn target: dequeues below this delay are always delivered.
    pub target: SimTime,
    /// Control interval: how long sojourn must stay at/above target before
    /// the control law starts dropping, and the base drop spacing.
    pub interval: SimTime,
    /// Deficit-round-robin byte quantum granted per round (FQ variants).
    pub quantum: usize,
    /// Upper bound on distinct flow queues (FQ variants).
    pub flow_buckets: usize,
}

impl DisciplineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.limit < 1 {
            return Err("queue limit must be >= 1".into());
        }
        if self.target == SimTime::ZERO {
            return Err("sojourn target must be positive".into());
        }
        if self.interval == SimTime::ZERO {
            return Err("control interval must be positive".into());
        }
        if self.quantum == 0 {
            return Err("quantum must be positive".into());
        }
        if self.flow_buckets == 0 {
            return Err("flow bucket count must be >= 1".into());
        }
        Ok(())
    }
}

/// Result of offering a packet to a discipline: either it now owns the
/// packet, or the packet bounced off a full queue and is handed back.
#[derive(Debug)]
pub enum Admission {
    Enqueued,
    Dropped(Packet),
}

impl Admission {
    pub fn was_dropped(&self) -> bool {
        matches!(self, Admission::Dropped(_))
    }
}

/// Result of one service opportunity. `dropped` lists packets the control
/// law discarded while hunting for a deliverable one (admission order is
/// irrelevant here; these are dequeue-time drops). `delivered` is the packet
/// to put on the wire, with its queueing delay alongside.
#[derive(Debug, Default)]
pub struct DequeueOutcome {
    pub delivered: Option<Packet>,
    pub delivered_sojourn: Option<SimTime>,
    pub dropped: Vec<Packet>,
}

impl DequeueOutcome {
    fn empty() -> Self {
        DequeueOutcome::default()
    }

    fn deliver(pkt: Packet, sojourn: SimTime, dropped: Vec<Packet>) -> Self {
        DequeueOutcome {
            delivered: Some(pkt),
            delivered_sojourn: Some(sojourn),
            dropped,
        }
    }
}

/// A bottleneck queue discipline.
pub trait Discipline {
    /// Offers `pkt` at time `now`; on success the discipline stamps the
    /// packet's enqueue time.
    fn admit(&mut self, pkt: Packet, now: SimTime) -> Admission;

    /// One service opportunity at time `now`.
    fn dequeue(&mut self, now: SimTime) -> DequeueOutcome;

    /// Resident packet count.
    fn len(&self) -> usize;

    /// Resident byte count.
    fn byte_len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Wire size of the packet the next `dequeue` would remove first.
    fn peek_next_size(&self) -> Option<usize>;
}

/// Which discipline guards the bottleneck. String forms (`droptail`,
/// `codel`, `codel-lifo`, `fq-codel`, `fq-codel-lifo`) appear in the CLI,
/// config and CSV output.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub enum DisciplineKind {
    DropTail,
    Codel,
    CodelLifo,
    FqCodel,
    FqCodelLifo,
}

impl DisciplineKind {
    pub const ALL: [DisciplineKind; 5] = [
        DisciplineKind::DropTail,
        DisciplineKind::Codel,
        DisciplineKind::CodelLifo,
        DisciplineKind::FqCodel,
        DisciplineKind::FqCodelLifo,
    ];

    pub fn build(self, cfg: &DisciplineConfig) -> Box<dyn Discipline> {
        match self {
            DisciplineKind::DropTail => Box::new(DropTail::new(cfg)),
            DisciplineKind::Codel => Box::new(CodelFifo::new(cfg)),
            DisciplineKind::CodelLifo => Box::new(CodelLifo::new(cfg)),
            DisciplineKind::FqCodel => Box::new(FqCodel::<CodelFifo>::new(cfg)),
            DisciplineKind::FqCodelLifo => Box::new(FqCodel::<CodelLifo>::new(cfg)),
        }
    }
}

impl DisciplineKind {
    fn name(self) -> &'static str {
        match self {
            DisciplineKind::DropTail => "droptail",
            DisciplineKind::Codel => "codel",
            DisciplineKind::CodelLifo => "codel-lifo",
            DisciplineKind::FqCodel => "fq-codel",
            DisciplineKind::FqCodelLifo => "fq-codel-lifo",
        }
    }
}

impl fmt::Display for DisciplineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DisciplineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .find(|kind| kind.name() == s)
            .copied()
            .ok_or_else(|| {
                format!(
                    "unknown queue discipline '{s}' (expected one of: droptail, codel, codel-lifo, fq-codel, fq-codel-lifo)"
                )
            })
    }
}
