//! Sender-side connection state: one byte stream segmented at MSS
//! granularity, two subflows each running NewReno (slow start, fast
//! retransmit/recovery, RTO with exponential backoff), a coupled
//! congestion-avoidance increase, and an srtt-ordered packet scheduler.
//!
//! The sender is a pure state machine: every entry point takes `now` and
//! returns the packets to put on the wire, so the surrounding event loop
//! owns all scheduling and the sender stays directly testable.

use super::{increase_per_ack, CcAlgorithm, CouplingView};
use crate::net::{Packet, PacketKind, PathId, HEADER_BYTES, PATHS};
use crate::sim::SimTime;
use std::collections::BTreeSet;

/// Initial congestion window, in MSS.
const INITIAL_WINDOW: f64 = 2.0;
/// Retransmission timeout bounds and the pre-handshake default.
const MIN_RTO_NS: u64 = 200_000_000;
const MAX_RTO_NS: u64 = 60_000_000_000;
const INITIAL_RTO_NS: u64 = 1_000_000_000;

/// NewReno phase of one subflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    SlowStart,
    CongestionAvoidance,
    FastRecovery,
}

/// Everything returned from processing one incoming ACK.
#[derive(Debug, Default)]
pub struct AckOutcome {
    /// Packets to transmit, in order, each tagged with its path.
    pub to_send: Vec<(PathId, Packet)>,
    /// A clean round-trip sample (never from a retransmitted segment, and
    /// only when the data and its ACK used the same path).
    pub rtt_sample: Option<(PathId, SimTime)>,
    /// True exactly once: the ACK that covered the final workload byte.
    pub just_completed: bool,
}

#[derive(Debug, Clone, Copy)]
struct SegMeta {
    acked: bool,
    send_count: u32,
    last_sent: SimTime,
    last_path: PathId,
}

#[derive(Debug)]
struct Subflow {
    established: bool,
    syn_sent_at: Option<SimTime>,
    /// Congestion window in MSS; never allowed below 1.
    w: f64,
    ssthresh: f64,
    phase: Phase,
    dup_acks: u32,
    srtt: Option<SimTime>,
    rttvar: SimTime,
    /// Consecutive unanswered timeouts; doubles the effective RTO.
    backoff: u32,
    /// Start of the current timeout period (rearmed on forward progress).
    timer_started: Option<SimTime>,
    /// Segment indices currently outstanding on this path.
    inflight: BTreeSet<u32>,
    inflight_bytes: u64,
    /// Portion of `w` added by duplicate-ACK inflation during the current
    /// recovery episode. Every duplicate signals a departure the frozen
    /// cumulative ACK cannot credit, so the window it arrived on may emit
    /// one more segment; the credit is unwound on forward progress.
    inflated_by: f64,
}

impl Subflow {
    fn new(cap: f64) -> Self {
        Subflow {
            established: false,
            syn_sent_at: None,
            w: INITIAL_WINDOW,
            ssthresh: cap,
            phase: Phase::SlowStart,
            dup_acks: 0,
            srtt: None,
            rttvar: SimTime::ZERO,
            backoff: 0,
            timer_started: None,
            inflight: BTreeSet::new(),
            inflight_bytes: 0,
            inflated_by: 0.0,
        }
    }

    fn unwind_inflation(&mut self) {
        if self.inflated_by > 0.0 {
            self.w = (self.w - self.inflated_by).max(1.0);
            self.inflated_by = 0.0;
        }
    }

    /// Jacobson/Karels smoothing: gains 1/8 for srtt and 1/4 for rttvar,
    /// first sample seeding srtt directly and rttvar at half the sample.
    fn take_rtt_sample(&mut self, sample: SimTime) {
        match self.srtt {
            None => {
                self.srtt = Some(sample);
                self.rttvar = SimTime::from_nanos(sample.as_nanos() / 2);
            }
            Some(srtt) => {
                let diff = srtt
                    .checked_sub(sample)
                    .unwrap_or_else(|| sample.saturating_sub(srtt));
                self.rttvar =
                    SimTime::from_nanos((3 * self.rttvar.as_nanos() + diff.as_nanos()) / 4);
                self.srtt = Some(SimTime::from_nanos(
                    (7 * srtt.as_nanos() + sample.as_nanos()) / 8,
                ));
            }
        }
    }

    fn base_rto(&self) -> SimTime {
        let ns = match self.srtt {
            None => INITIAL_RTO_NS,
            Some(srtt) => {
                (srtt.as_nanos() + 4 * self.rttvar.as_nanos()).clamp(MIN_RTO_NS, MAX_RTO_NS)
            }
        };
        SimTime::from_nanos(ns)
    }

    fn effective_rto(&self) -> SimTime {
        let shift = self.backoff.min(16);
        let ns = self.base_rto().as_nanos().saturating_mul(1 << shift);
        SimTime::from_nanos(ns.min(MAX_RTO_NS))
    }

    fn cut_on_loss(&mut self) {
        self.ssthresh = (self.w / 2.0).max(1.0);
    }
}

/// The multipath sender for one connection.
pub struct Sender {
    alg: CcAlgorithm,
    /// Payload bytes per full segment.
    mss: u64,
    workload: u64,
    rcv_window: u64,
    /// Window ceiling in MSS (receive-buffer size over MSS).
    cap: f64,
    n_segs: u32,
    segs: Vec<SegMeta>,
    /// First byte not yet cumulatively acknowledged.
    cum_ack: u64,
    /// Lowest segment index never sent.
    next_new: u32,
    /// One past the highest byte ever sent.
    high_sent: u64,
    /// Segments marked for retransmission (never concurrently in flight).
    retx: BTreeSet<u32>,
    sub: [Subflow; 2],
    /// Active loss-recovery episode, scoped to the connection because the
    /// sequence space is: (cumulative ACK that ends it, index of the
    /// subflow whose window took the cut). An episode only ever opens from
    /// duplicates arriving on the same subflow that carried the missing
    /// segment — a loss belongs to the path that lost it — and both the cut
    /// and every repair land on that carrier. Duplicates observed on the
    /// other path are mere reordering evidence and never open one, so a
    /// hole opened by cross-path skew costs exactly the wait for the
    /// carrier's own (re)delivery.
    recovery: Option<(u64, usize)>,
    done: bool,
    next_id: u64,
}

impl Sender {
    /// `mss` is payload bytes per segment (wire size adds the 40-byte
    /// header); `rcv_window` caps both total outstanding connection bytes
    /// and, converted to MSS, each subflow's congestion window.
    pub fn new(alg: CcAlgorithm, mss: u64, rcv_window: u64, workload: u64) -> Self {
        assert!(mss > 0, "mss must be positive");
        assert!(workload > 0, "workload must be positive");
        assert!(rcv_window >= mss, "receive window below one segment");
        let n_segs = workload.div_ceil(mss);
        assert!(n_segs <= u32::MAX as u64);
        let cap = rcv_window as f64 / mss as f64;
        Sender {
            alg,
            mss,
            workload,
            rcv_window,
            cap,
            n_segs: n_segs as u32,
            segs: vec![
                SegMeta {
                    acked: false,
                    send_count: 0,
                    last_sent: SimTime::ZERO,
                    last_path: PathId::A,
                };
                n_segs as usize
            ],
            cum_ack: 0,
            next_new: 0,
            high_sent: 0,
            retx: BTreeSet::new(),
            sub: [Subflow::new(cap), Subflow::new(cap)],
            recovery: None,
            done: false,
            next_id: 0,
        }
    }

    fn seg_start(&self, idx: u32) -> u64 {
        idx as u64 * self.mss
    }

    fn seg_len(&self, idx: u32) -> u64 {
        if idx + 1 == self.n_segs {
            self.workload - self.seg_start(idx)
        } else {
            self.mss
        }
    }

    fn seg_end(&self, idx: u32) -> u64 {
        self.seg_start(idx) + self.seg_len(idx)
    }

    fn alloc_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 4;
        id
    }

    fn make_syn(&mut self, path: PathId, now: SimTime) -> Packet {
        Packet {
            id: self.alloc_id(),
            flow: path.flow(),
            kind: PacketKind::Syn,
            seq: 0,
            size: HEADER_BYTES,
            enq: None,
            sent_at: now,
        }
    }

    /// Put segment `idx` on the wire on `path`, updating all bookkeeping.
    fn transmit(&mut self, path: PathId, idx: u32, now: SimTime) -> Packet {
        let len = self.seg_len(idx);
        let meta = &mut self.segs[idx as usize];
        debug_assert!(!meta.acked, "transmitting an acknowledged segment");
        meta.send_count += 1;
        meta.last_sent = now;
        meta.last_path = path;
        let sf = &mut self.sub[path.index()];
        if sf.inflight.insert(idx) {
            sf.inflight_bytes += len;
        }
        sf.timer_started.get_or_insert(now);
        self.high_sent = self.high_sent.max(self.seg_end(idx));
        Packet {
            id: self.alloc_id(),
            flow: path.flow(),
            kind: PacketKind::Data,
            seq: self.seg_start(idx),
            size: (len + HEADER_BYTES as u64) as usize,
            enq: None,
            sent_at: now,
        }
    }

    /// Open the connection: the first subflow's SYN. The second subflow
    /// joins once this handshake completes.
    pub fn start(&mut self, now: SimTime) -> Vec<(PathId, Packet)> {
        self.sub[0].syn_sent_at = Some(now);
        let syn = self.make_syn(PathId::A, now);
        vec![(PathId::A, syn)]
    }

    /// Handshake completion on `path`: seeds the RTT estimate (unless the
    /// SYN was retransmitted), joins the second subflow after the first,
    /// and starts filling windows.
    pub fn on_synack(&mut self, path: PathId, now: SimTime) -> Vec<(PathId, Packet)> {
        let i = path.index();
        if self.sub[i].established {
            return Vec::new(); // duplicate of a retransmitted handshake
        }
        if let Some(sent) = self.sub[i].syn_sent_at {
            if self.sub[i].backoff == 0 {
                let sample = now - sent;
                self.sub[i].take_rtt_sample(sample);
            }
        }
        self.sub[i].established = true;
        self.sub[i].syn_sent_at = None;
        self.sub[i].backoff = 0;
        self.sub[i].timer_started = None;
        let mut out = Vec::new();
        if path == PathId::A && !self.sub[1].established && self.sub[1].syn_sent_at.is_none() {
            self.sub[1].syn_sent_at = Some(now);
            let syn = self.make_syn(PathId::B, now);
            out.push((PathId::B, syn));
        }
        out.extend(self.schedule_send(now));
        out
    }

    /// Process one cumulative ACK arriving on `path`.
    pub fn on_ack(&mut self, path: PathId, ack: u64, now: SimTime) -> AckOutcome {
        let mut out = AckOutcome::default();
        if self.done {
            return out;
        }
        let i = path.index();
        debug_assert!(self.sub[i].established, "ACK on an unestablished subflow");
        debug_assert!(
            ack.is_multiple_of(self.mss) || ack == self.workload,
            "ACK off segment boundary: {ack}"
        );
        if ack > self.cum_ack {
            self.on_new_ack(path, ack, now, &mut out);
        } else {
            self.on_dup_ack(path, now, &mut out);
        }
        if !self.done {
            out.to_send.extend(self.schedule_send(now));
        }
        out
    }

    fn on_new_ack(&mut self, path: PathId, ack: u64, now: SimTime, out: &mut AckOutcome) {
        let i = path.index();
        let newly = ack - self.cum_ack;
        let first_idx = (self.cum_ack / self.mss) as u32;
        let last_idx = (ack.div_ceil(self.mss) as u32).min(self.n_segs);
        for idx in first_idx..last_idx {
            self.segs[idx as usize].acked = true;
            self.retx.remove(&idx);
            let len = self.seg_len(idx);
            for sf in &mut self.sub {
                if sf.inflight.remove(&idx) {
                    sf.inflight_bytes -= len;
                }
            }
        }
        // Clean round-trip sample: the highest newly covered segment, only
        // if it was sent exactly once and on the path this ACK used.
        let hi = &self.segs[(last_idx - 1) as usize];
        if hi.send_count == 1 && hi.last_path == path {
            let sample = now - hi.last_sent;
            self.sub[i].take_rtt_sample(sample);
            out.rtt_sample = Some((path, sample));
        }
        self.cum_ack = ack;
        self.sub[i].backoff = 0;
        // Forward progress: restart (or clear) both retransmission timers,
        // reset duplicate counting everywhere, and take back any
        // duplicate-ACK window inflation (the bytes it stood in for are
        // now properly credited).
        for sf in &mut self.sub {
            sf.dup_acks = 0;
            sf.unwind_inflation();
            sf.timer_started = if sf.inflight.is_empty() {
                None
            } else {
                Some(now)
            };
        }
        // Recovery bookkeeping happens at connection scope: partial ACKs
        // expose the next hole and keep deflating the cut subflow; the full
        // ACK at the recovery point ends the episode.
        let mut cut_handled = false;
        if let Some((recover, cut)) = self.recovery {
            if ack >= recover {
                self.sub[cut].w = self.sub[cut].ssthresh.max(1.0);
                self.sub[cut].phase = Phase::CongestionAvoidance;
                self.recovery = None;
            } else {
                let hole = (self.cum_ack / self.mss) as u32;
                self.retx.remove(&hole);
                let carrier = self.segs[hole as usize].last_path;
                let pkt = self.transmit(carrier, hole, now);
                out.to_send.push((carrier, pkt));
                let newly_mss = newly as f64 / self.mss as f64;
                self.sub[cut].w = (self.sub[cut].w - newly_mss + 1.0).max(1.0);
            }
            cut_handled = cut == i;
        }
        if !cut_handled {
            match self.sub[i].phase {
                Phase::SlowStart => {
                    self.sub[i].w = (self.sub[i].w + 1.0).min(self.cap);
                    if self.sub[i].w >= self.sub[i].ssthresh {
                        self.sub[i].phase = Phase::CongestionAvoidance;
                    }
                }
                Phase::CongestionAvoidance => {
                    let view = self.coupling_view();
                    let me = self.view_index(path);
                    let delta = increase_per_ack(self.alg, &view, me);
                    self.sub[i].w = (self.sub[i].w + delta).min(self.cap);
                }
                // Unreachable: a subflow is in this phase only while it is
                // the cut side of the active episode, handled above.
                Phase::FastRecovery => debug_assert!(false, "recovery without an episode"),
            }
        }
        if self.cum_ack >= self.workload {
            self.done = true;
            out.just_completed = true;
            for sf in &mut self.sub {
                sf.timer_started = None;
            }
        }
    }

    fn on_dup_ack(&mut self, path: PathId, now: SimTime, out: &mut AckOutcome) {
        let i = path.index();
        if self.cum_ack >= self.high_sent {
            return; // stale copies drifting in with nothing outstanding
        }
        let hole = (self.cum_ack / self.mss) as u32;
        let carrier = self.segs[hole as usize].last_path;
        if carrier != path {
            // The missing segment is parked on the other subflow, and the
            // receiver emits duplicates on the path whose own data arrival
            // produced them — so these are subflow-level acknowledgments
            // in disguise. This pipe has lost nothing: push its timeout
            // out as a subflow-level ACK would.
            if !self.sub[i].inflight.is_empty() {
                self.sub[i].timer_started = Some(now);
            }
            // And when the wait is the carrier's slowness rather than a
            // loss, let this path put one more segment in the air for each
            // departure the frozen cumulative ACK cannot credit. Three
            // checks make that call: the carrier must be healthy (no open
            // episode cutting it, no timeout backoff — recovery is waited
            // out, not overridden); the hole must be older than this
            // path's round trip (younger holes are ordinary in-flight skew
            // the cumulative clock clears by itself); and it must still be
            // young by the carrier's own clock — a hole the carrier's
            // self-clocked deliveries have lapped is a loss it simply has
            // not detected yet. The shared receive window still bounds the
            // ride, and the credit is unwound on the next forward step.
            let carrier_recovering = self.recovery.is_some_and(|(_, cut)| cut == carrier.index())
                || self.sub[carrier.index()].backoff > 0;
            let age = now - self.segs[hole as usize].last_sent;
            let older_than_skew = self.sub[i].srtt.is_some_and(|s| age > s);
            let young_by_carrier = self.sub[carrier.index()]
                .srtt
                .is_none_or(|s| 2 * age.as_nanos() < 3 * s.as_nanos());
            if !carrier_recovering && older_than_skew && young_by_carrier {
                let sf = &mut self.sub[i];
                let before = sf.w;
                sf.w = (sf.w + 1.0).min(self.cap);
                sf.inflated_by += sf.w - before;
            }
            return;
        }
        // Duplicates for a hole this same subflow carried are genuine loss
        // evidence and get classic NewReno conservatism: count toward the
        // retransmit threshold, inflate only inside an episode that cut
        // this subflow, and never move the timeout.
        if let Some((_, cut)) = self.recovery {
            if cut == i {
                let sf = &mut self.sub[i];
                let before = sf.w;
                sf.w = (sf.w + 1.0).min(self.cap);
                sf.inflated_by += sf.w - before;
            }
            return;
        }
        self.sub[i].dup_acks += 1;
        if self.sub[i].dup_acks == 3 {
            // Halve from the true window: any ride-through credit left
            // over is departure bookkeeping, not earned capacity.
            self.sub[i].unwind_inflation();
            self.sub[i].cut_on_loss();
            self.sub[i].w = self.sub[i].ssthresh;
            self.sub[i].phase = Phase::FastRecovery;
            self.recovery = Some((self.high_sent, i));
            for sf in &mut self.sub {
                sf.dup_acks = 0;
            }
            self.retx.remove(&hole);
            let pkt = self.transmit(path, hole, now);
            out.to_send.push((path, pkt));
        }
    }

    /// Retransmission timeout on `path`.
    ///
    /// For an unestablished subflow this re-sends the SYN. Otherwise:
    /// multiplicative decrease to one segment, slow start, exponential
    /// backoff, everything outstanding on this path requeued for
    /// retransmission, and the earliest such segment sent immediately.
    pub fn on_rto(&mut self, path: PathId, now: SimTime) -> Vec<(PathId, Packet)> {
        let i = path.index();
        if !self.sub[i].established {
            if self.sub[i].syn_sent_at.is_none() {
                return Vec::new();
            }
            self.sub[i].backoff += 1;
            self.sub[i].syn_sent_at = Some(now);
            let syn = self.make_syn(path, now);
            return vec![(path, syn)];
        }
        if self.sub[i].inflight.is_empty() || self.done {
            return Vec::new();
        }
        // A timeout supersedes any fast-recovery episode in progress.
        if let Some((_, cut)) = self.recovery.take() {
            for sf in &mut self.sub {
                sf.unwind_inflation();
            }
            if cut != i {
                self.sub[cut].w = self.sub[cut].ssthresh.max(1.0);
                self.sub[cut].phase = Phase::CongestionAvoidance;
            }
        }
        self.sub[i].inflated_by = 0.0;
        self.sub[i].cut_on_loss();
        self.sub[i].w = 1.0;
        self.sub[i].phase = Phase::SlowStart;
        self.sub[i].dup_acks = 0;
        self.sub[i].backoff += 1;
        self.sub[i].timer_started = Some(now);
        let outstanding: Vec<u32> = std::mem::take(&mut self.sub[i].inflight)
            .into_iter()
            .collect();
        self.sub[i].inflight_bytes = 0;
        let other = &self.sub[1 - i];
        for idx in outstanding {
            if !self.segs[idx as usize].acked && !other.inflight.contains(&idx) {
                self.retx.insert(idx);
            }
        }
        let mut out = Vec::new();
        if let Some(&idx) = self.retx.iter().next() {
            self.retx.remove(&idx);
            let pkt = self.transmit(path, idx, now);
            out.push((path, pkt));
        }
        out
    }

    /// When the engine should fire `on_rto(path)`, if a timer is armed.
    pub fn rto_deadline(&self, path: PathId) -> Option<SimTime> {
        let sf = &self.sub[path.index()];
        if !sf.established {
            return sf.syn_sent_at.map(|t| t + sf.effective_rto());
        }
        sf.timer_started
            .filter(|_| !sf.inflight.is_empty())
            .map(|t| t + sf.effective_rto())
    }

    /// Fill open windows, fastest (lowest srtt) subflow first. Candidates
    /// are retransmissions before new data; each send respects the
    /// subflow's congestion window and the shared receive window.
    fn schedule_send(&mut self, now: SimTime) -> Vec<(PathId, Packet)> {
        let mut out = Vec::new();
        if self.done {
            return out;
        }
        let mut order: Vec<PathId> = PATHS
            .into_iter()
            .filter(|p| self.sub[p.index()].established)
            .collect();
        order.sort_by_key(|p| self.sub[p.index()].srtt.unwrap_or(SimTime::ZERO));
        for path in order {
            loop {
                let candidate = self
                    .retx
                    .iter()
                    .next()
                    .copied()
                    .or_else(|| (self.next_new < self.n_segs).then_some(self.next_new));
                let Some(idx) = candidate else { break };
                if self.seg_end(idx) > self.cum_ack + self.rcv_window {
                    break;
                }
                let sf = &self.sub[path.index()];
                let len = self.seg_len(idx);
                if (sf.inflight_bytes + len) as f64 > sf.w * self.mss as f64 {
                    break;
                }
                if !self.retx.remove(&idx) {
                    self.next_new += 1;
                }
                let pkt = self.transmit(path, idx, now);
                out.push((path, pkt));
            }
        }
        out
    }

    fn coupling_view(&self) -> CouplingView {
        CouplingView {
            subflows: self
                .sub
                .iter()
                .filter(|sf| sf.established && sf.srtt.is_some())
                .map(|sf| (sf.w, sf.srtt.unwrap().as_secs_f64()))
                .collect(),
        }
    }

    /// Index of `path` within the coupling view (established subflows in
    /// path order).
    fn view_index(&self, path: PathId) -> usize {
        let mut n = 0;
        for p in PATHS {
            if p == path {
                return n;
            }
            if self.sub[p.index()].established && self.sub[p.index()].srtt.is_some() {
                n += 1;
            }
        }
        unreachable!("path not in coupling view")
    }

    pub fn is_complete(&self) -> bool {
        self.done
    }

    pub fn cum_ack(&self) -> u64 {
        self.cum_ack
    }

    pub fn established(&self, path: PathId) -> bool {
        self.sub[path.index()].established
    }

    pub fn window(&self, path: PathId) -> f64 {
        self.sub[path.index()].w
    }

    pub fn ssthresh(&self, path: PathId) -> f64 {
        self.sub[path.index()].ssthresh
    }

    pub fn phase(&self, path: PathId) -> Phase {
        self.sub[path.index()].phase
    }

    pub fn dup_acks(&self, path: PathId) -> u32 {
        self.sub[path.index()].dup_acks
    }

    pub fn srtt(&self, path: PathId) -> Option<SimTime> {
        self.sub[path.index()].srtt
    }

    pub fn inflight_segments(&self, path: PathId) -> usize {
        self.sub[path.index()].inflight.len()
    }

    #[cfg(test)]
    fn force_window(&mut self, path: PathId, w: f64) {
        self.sub[path.index()].w = w;
    }

    #[cfg(test)]
    fn send_count(&self, idx: u32) -> u32 {
        self.segs[idx as usize].send_count
    }

    #[cfg(test)]
    fn recovery_episode(&self) -> Option<(u64, usize)> {
        self.recovery
    }
}
