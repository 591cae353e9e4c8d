//! Network primitives: packets, point-to-point links with rate, propagation
//! delay and bounded jitter, and a constant-bit-rate packet source.
//!
//! The dumbbell these pieces form (two access paths and a UDP source feeding
//! one bottleneck queue) is assembled in [`crate::world`].

use crate::sim::{Prng, SimTime};
use std::fmt;

/// TCP/IP-ish header overhead carried by every TCP segment and ACK, in bytes.
pub const HEADER_BYTES: usize = 40;

/// Which traffic stream a packet belongs to, as seen by a classifier.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub enum FlowId {
    SubflowA,
    SubflowB,
    UdpCbr,
    Ack,
}

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FlowId::SubflowA => "subflow-a",
            FlowId::SubflowB => "subflow-b",
            FlowId::UdpCbr => "udp-cbr",
            FlowId::Ack => "ack",
        };
        f.write_str(s)
    }
}

/// One of the two transport paths between sender and receiver.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PathId {
    A,
    B,
}

pub const PATHS: [PathId; 2] = [PathId::A, PathId::B];

impl PathId {
    pub fn index(self) -> usize {
        match self {
            PathId::A => 0,
            PathId::B => 1,
        }
    }

    pub fn flow(self) -> FlowId {
        match self {
            PathId::A => FlowId::SubflowA,
            PathId::B => FlowId::SubflowB,
        }
    }
}

impl fmt::Display for PathId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PathId::A => "a",
            PathId::B => "b",
        })
    }
}

/// What a packet means to its endpoint.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PacketKind {
    Syn,
    SynAck,
    Data,
    Ack,
    Udp,
}

/// A simulated packet. `seq` is the connection-level byte offset for data
/// and the cumulative acknowledgment value for ACKs; `size` is wire bytes.
#[derive(Clone, Debug)]
pub struct Packet {
    pub id: u64,
    pub flow: FlowId,
    pub kind: PacketKind,
    pub seq: u64,
    pub size: usize,
    /// Stamped by the queue on admission; `None` until then.
    pub enq: Option<SimTime>,
    pub sent_at: SimTime,
}

impl Packet {
    /// Payload bytes carried above header overhead.
    pub fn payload(&self) -> usize {
        self.size.saturating_sub(HEADER_BYTES)
    }

    /// Time this packet has spent in its queue: `now - enqueue instant`.
    ///
    /// Panics if the packet was never admitted to a queue or if `now`
    /// precedes admission — both are modeling bugs worth failing loudly on.
    pub fn sojourn(&self, now: SimTime) -> SimTime {
        let enq = self
            .enq
            .expect("sojourn of a packet never admitted to a queue");
        now - enq
    }
}

/// A unidirectional link: fixed bit rate, fixed propagation delay and a
/// per-packet jitter drawn uniformly from `[0, jitter_frac * base_delay)`.
///
/// The link serializes packets back to back (`busy_until`) and never
/// reorders: computed arrivals are clamped to be monotone so jitter cannot
/// leapfrog one packet over another.
pub struct Link {
    rate_bps: u64,
    base_delay: SimTime,
    jitter_frac: f64,
    busy_until: SimTime,
    last_arrival: SimTime,
}

impl Link {
    pub fn new(rate_bps: u64, base_delay: SimTime, jitter_frac: f64) -> Self {
        assert!(rate_bps > 0, "link rate must be positive");
        assert!(
            (0.0..1.0).contains(&jitter_frac),
            "jitter fraction out of [0, 1)"
        );
        Link {
            rate_bps,
            base_delay,
            jitter_frac,
            busy_until: SimTime::ZERO,
            last_arrival: SimTime::ZERO,
        }
    }

    /// Time to clock `bytes` onto the wire at this link's rate.
    pub fn serialization(&self, bytes: usize) -> SimTime {
        SimTime::from_nanos((bytes as u128 * 8 * 1_000_000_000 / self.rate_bps as u128) as u64)
    }

    /// Sends `bytes` starting no earlier than `now`, returning the arrival
    /// time at the far end. Advances `busy_until` so later sends queue behind
    /// this one.
    pub fn transmit(&mut self, bytes: usize, now: SimTime, rng: &mut Prng) -> SimTime {
        let start = now.max(self.busy_until);
        let done = start + self.serialization(bytes);
        self.busy_until = done;
        let jitter_span =
            SimTime::from_nanos((self.base_delay.as_nanos() as f64 * self.jitter_frac) as u64);
        let jitter = rng.uniform_time(jitter_span);
        let arrival = (done + self.base_delay + jitter).max(self.last_arrival);
        self.last_arrival = arrival;
        arrival
    }

    pub fn busy_until(&self) -> SimTime {
        self.busy_until
    }
}

/// Constant-bit-rate source parameters: emits one `packet_size`-byte packet
/// every `gap()`, starting at a uniformly random phase within the first gap.
pub struct CbrSource {
    pub rate_bps: u64,
    pub packet_size: usize,
}

impl CbrSource {
    /// Inter-packet gap; the source is disabled when its rate is zero.
    pub fn gap(&self) -> SimTime {
        assert!(self.rate_bps > 0, "gap of a disabled source");
        SimTime::from_nanos(
            (self.packet_size as u128 * 8 * 1_000_000_000 / self.rate_bps as u128) as u64,
        )
    }

    pub fn enabled(&self) -> bool {
        self.rate_bps > 0
    }
}
