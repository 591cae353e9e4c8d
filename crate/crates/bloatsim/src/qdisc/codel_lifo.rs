//! CoDel over a LIFO stack with a drop-forgiveness gate.
//!
//! Serving the newest packet first keeps fresh traffic moving even when the
//! queue is deep, but it also means the packets the control law wants to
//! drop are the freshest — exactly the wrong victims while the stack is
//! merely deep and stable. The gate therefore tracks the trend of observed
//! sojourns and only lets the law's drops through when sojourn has been
//! strictly rising for longer than the observed max/mean ratio: a rising
//! run that long means service is genuinely losing ground, not just
//! oscillating around a deep standing queue.

use super::codel::{CodelControl, Verdict};
use super::{Admission, DequeueOutcome, Discipline, DisciplineConfig};
use crate::net::Packet;
use crate::sim::SimTime;

/// Trend statistics over the sojourns of every popped packet since the last
/// reset, and the drop-permission rule built on them.
#[derive(Clone, Debug, Default)]
pub struct ForgivenessGate {
    max_sojourn: SimTime,
    sojourn_sum_ns: u128,
    samples: u64,
    prev_sojourn: Option<SimTime>,
    rising_streak: u64,
}

/// Read-only view of the gate for traces and tests.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateSnapshot {
    pub samples: u64,
    pub max_sojourn: SimTime,
    pub mean_sojourn_ns: Option<f64>,
    pub rising_streak: u64,
    /// `max / mean` of observed sojourns; `None` until defined (no samples,
    /// or an all-zero mean), in which case drops are never permitted.
    pub ceiling: Option<f64>,
}

impl ForgivenessGate {
    pub fn new() -> Self {
        ForgivenessGate::default()
    }

    /// Folds one popped packet's sojourn into the statistics. Every popped
    /// packet is observed — delivered, forgiven or dropped alike.
    pub fn observe(&mut self, sojourn: SimTime) {
        self.max_sojourn = self.max_sojourn.max(sojourn);
        self.sojourn_sum_ns += sojourn.as_nanos() as u128;
        self.samples += 1;
        if let Some(prev) = self.prev_sojourn {
            if sojourn > prev {
                self.rising_streak += 1;
            } else {
                self.rising_streak = 0;
            }
        }
        self.prev_sojourn = Some(sojourn);
    }

    /// `max / mean` over observed sojourns. Always `>= 1` when defined.
    pub fn ceiling(&self) -> Option<f64> {
        if self.samples == 0 || self.sojourn_sum_ns == 0 {
            return None;
        }
        let mean = self.sojourn_sum_ns as f64 / self.samples as f64;
        Some(self.max_sojourn.as_nanos() as f64 / mean)
    }

    /// Whether a drop demanded by the control law may proceed: only when
    /// the rising streak strictly exceeds the max/mean ceiling. An
    /// undefined ceiling forgives unconditionally.
    pub fn permits_drop(&self) -> bool {
        match self.ceiling() {
            Some(ceiling) => self.rising_streak as f64 > ceiling,
            None => false,
        }
    }

    pub fn rising_streak(&self) -> u64 {
        self.rising_streak
    }

    /// Clears all statistics: called when a below-target sojourn shows the
    /// episode is over, or when the stack drains empty.
    pub fn reset(&mut self) {
        *self = ForgivenessGate::default();
    }

    pub fn snapshot(&self) -> GateSnapshot {
        GateSnapshot {
            samples: self.samples,
            max_sojourn: self.max_sojourn,
            mean_sojourn_ns: if self.samples == 0 {
                None
            } else {
                Some(self.sojourn_sum_ns as f64 / self.samples as f64)
            },
            rising_streak: self.rising_streak,
            ceiling: self.ceiling(),
        }
    }
}

/// The stack discipline: admission at the top, service from the top, with
/// the CoDel law's drops filtered through the forgiveness gate.
pub struct CodelLifo {
    stack: Vec<Packet>,
    bytes: usize,
    limit: usize,
    control: CodelControl,
    gate: ForgivenessGate,
}

impl CodelLifo {
    pub fn new(cfg: &DisciplineConfig) -> Self {
        CodelLifo {
            stack: Vec::new(),
            bytes: 0,
            limit: cfg.limit,
            control: CodelControl::new(cfg.target, cfg.interval),
            gate: ForgivenessGate::new(),
        }
    }

    pub fn control(&self) -> &CodelControl {
        &self.control
    }

    pub fn gate(&self) -> GateSnapshot {
        self.gate.snapshot()
    }
}

impl Discipline for CodelLifo {
    fn admit(&mut self, mut pkt: Packet, now: SimTime) -> Admission {
        if self.stack.len() >= self.limit {
            return Admission::Dropped(pkt);
        }
        pkt.enq = Some(now);
        self.bytes += pkt.size;
        self.stack.push(pkt);
        Admission::Enqueued
    }

    fn dequeue(&mut self, now: SimTime) -> DequeueOutcome {
        let mut dropped = Vec::new();
        loop {
            let Some(pkt) = self.stack.pop() else {
                self.control.reset();
                self.gate.reset();
                return DequeueOutcome {
                    dropped,
                    ..DequeueOutcome::empty()
                };
            };
            self.bytes -= pkt.size;
            let sojourn = pkt.sojourn(now);
            // Every pop is observed first; a below-target pop then wipes
            // the statistics clean along with the control law's episode.
            self.gate.observe(sojourn);
            if sojourn < self.control.target() {
                self.gate.reset();
            }
            match self.control.on_dequeue(sojourn, now) {
                Verdict::Deliver => {
                    if self.stack.is_empty() {
                        self.control.reset();
                        self.gate.reset();
                    }
                    return DequeueOutcome::deliver(pkt, sojourn, dropped);
                }
                Verdict::Drop { entry } => {
                    if self.gate.permits_drop() {
                        if !entry {
                            self.control.record_drop();
                        }
                        dropped.push(pkt);
                    } else {
                        // Forgiven: delivered despite the schedule being
                        // due. The drop schedule deliberately does not
                        // advance, so the law stays poised to drop the
                        // moment the gate opens.
                        if self.stack.is_empty() {
                            self.control.reset();
                            self.gate.reset();
                        }
                        return DequeueOutcome::deliver(pkt, sojourn, dropped);
                    }
                }
            }
        }
    }

    fn len(&self) -> usize {
        self.stack.len()
    }

    fn byte_len(&self) -> usize {
        self.bytes
    }

    fn peek_next_size(&self) -> Option<usize> {
        self.stack.last().map(|p| p.size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::FlowId;
    use crate::qdisc::test_util::{cfg, pkt};

    fn ms(v: u64) -> SimTime {
        SimTime::from_millis(v)
    }

    fn assert_close(actual: f64, expected: f64) {
        assert!(
            (actual - expected).abs() < 1e-12,
            "expected {expected}, got {actual}"
        );
    }

    /// The worked trace: sojourns 6, 8, 7 ms against a 5 ms target. The
    /// trend statistics end at max 8 ms, mean 7 ms, ceiling 8/7, with the
    /// rising streak going 0 -> 1 -> 0, so a drop demanded at each of the
    /// three pops would be forgiven every time.
    #[test]
    fn golden_gate_trace_six_eight_seven() {
        let mut gate = ForgivenessGate::new();

        gate.observe(ms(6));
        let s = gate.snapshot();
        assert_eq!(s.rising_streak, 0); // no previous sample: trend undefined
        assert_eq!(s.max_sojourn, ms(6));
        assert_close(s.ceiling.unwrap(), 1.0);
        assert!(!gate.permits_drop());

        gate.observe(ms(8));
        let s = gate.snapshot();
        assert_eq!(s.rising_streak, 1); // 8 > 6
        assert_eq!(s.max_sojourn, ms(8));
        assert_close(s.mean_sojourn_ns.unwrap(), 7e6);
        assert_close(s.ceiling.unwrap(), 8.0 / 7.0);
        assert!(!gate.permits_drop()); // 1 < 8/7

        gate.observe(ms(7));
        let s = gate.snapshot();
        assert_eq!(s.rising_streak, 0); // 7 < 8 ends the run
        assert_eq!(s.max_sojourn, ms(8));
        assert_close(s.mean_sojourn_ns.unwrap(), 7e6);
        assert_close(s.ceiling.unwrap(), 8.0 / 7.0);
        assert!(!gate.permits_drop());
    }

    #[test]
    fn ceiling_is_at_least_one_and_undefined_without_samples() {
        let mut gate = ForgivenessGate::new();
        assert_eq!(gate.ceiling(), None);
        assert!(!gate.permits_drop());
        gate.observe(SimTime::ZERO); // zero-mean: still undefined, never drop
        assert_eq!(gate.ceiling(), None);
        assert!(!gate.permits_drop());
        gate.reset();
        for s in [3u64, 9, 4, 4, 30] {
            gate.observe(ms(s));
            assert!(gate.ceiling().unwrap() >= 1.0);
        }
    }

    #[test]
    fn service_is_newest_first() {
        let mut q = CodelLifo::new(&cfg());
        q.admit(pkt(1, FlowId::SubflowA, 1458), ms(0));
        q.admit(pkt(2, FlowId::SubflowA, 1458), ms(0));
        let out = q.dequeue(ms(1));
        assert_eq!(out.delivered.unwrap().id, 2);
        let out = q.dequeue(ms(1));
        assert_eq!(out.delivered.unwrap().id, 1);
    }

    /// End-to-end trace through the full discipline, hand-computed:
    /// entry into the dropping episode is forgiven (streak 1 vs ceiling
    /// 110/60), the next due pop is dropped (streak 2 vs ceiling 1.925...),
    /// and the pop after that is delivered because the advanced schedule is
    /// not yet due.
    #[test]
    fn golden_discipline_trace_with_one_drop() {
        let mut q = CodelLifo::new(&cfg());
        for id in 1..=8 {
            q.admit(pkt(id, FlowId::SubflowA, 1458), ms(0));
        }

        // Pop 8 at 10 ms: sojourn 10 ms starts the first-above clock.
        let out = q.dequeue(ms(10));
        assert_eq!(out.delivered.unwrap().id, 8);
        assert!(out.dropped.is_empty());

        // Pop 7 at 110 ms: the law opens its episode and demands a drop,
        // but streak 1 < ceiling 110/60, so the packet is forgiven.
        let out = q.dequeue(ms(110));
        assert_eq!(out.delivered.unwrap().id, 7);
        assert!(out.dropped.is_empty());
        assert!(q.control().dropping());
        assert_eq!(q.control().next_drop_at(), Some(ms(210)));
        assert_eq!(q.gate().rising_streak, 1);

        // Pop at 215 ms: schedule due. Pop 6 (sojourn 215 ms, streak 2,
        // ceiling 335/3/... = 1.925) is dropped; the schedule advances by
        // interval/sqrt(2); pop 5 is then not yet due and is delivered with
        // streak reset to 0 by its equal sojourn.
        let out = q.dequeue(ms(215));
        assert_eq!(
            out.dropped.iter().map(|p| p.id).collect::<Vec<_>>(),
            vec![6]
        );
        assert_eq!(out.delivered.unwrap().id, 5);
        assert_eq!(q.control().drop_count(), 2);
        assert_eq!(
            q.control().next_drop_at(),
            Some(ms(210) + SimTime::from_nanos(70_710_678))
        );
        let s = q.gate();
        assert_eq!(s.rising_streak, 0);
        assert_eq!(s.samples, 4);
        assert_close(s.ceiling.unwrap(), 215.0 / 137.5);

        // A fresh packet pops first (newest-first) with a below-target
        // sojourn: everything resets and the episode ends.
        q.admit(pkt(99, FlowId::SubflowA, 1458), ms(216));
        let out = q.dequeue(ms(217));
        assert_eq!(out.delivered.unwrap().id, 99);
        assert!(!q.control().dropping());
        assert_eq!(q.gate().samples, 0);
    }

    /// Constant equal sojourns never build a rising streak, so nothing is
    /// ever dropped no matter how long the law's schedule has been due.
    #[test]
    fn equal_sojourns_are_never_dropped() {
        let mut q = CodelLifo::new(&cfg());
        // A permanent resident keeps the stack from draining (drain would
        // reset the law between pops).
        q.admit(pkt(0, FlowId::SubflowA, 1458), ms(0));
        let mut delivered = 0u64;
        for k in 1..=40u64 {
            let t_admit = ms(k * 50);
            let t_pop = t_admit + ms(50); // every pop sees exactly 50 ms
            q.admit(pkt(k, FlowId::SubflowA, 1458), t_admit);
            let out = q.dequeue(t_pop);
            assert!(out.dropped.is_empty(), "equal-sojourn pop was dropped");
            assert_eq!(out.delivered.unwrap().id, k);
            delivered += 1;
        }
        assert_eq!(delivered, 40);
        // The law did enter its dropping state (sustained excess) — the
        // gate alone is what spared every packet.
        assert!(q.control().dropping());
        assert_eq!(q.gate().rising_streak, 0);
    }

    /// Steadily rising sojourns do get dropped once the streak clears the
    /// ceiling: the gate forgives deep-but-stable queues, not runaways.
    #[test]
    fn rising_sojourns_eventually_drop() {
        let mut q = CodelLifo::new(&cfg());
        q.admit(pkt(0, FlowId::SubflowA, 1458), ms(0));
        let mut total_dropped = 0;
        for k in 1..=40u64 {
            // Admissions fall further and further behind service: each pop
            // sees a strictly larger sojourn than the last.
            let t_admit = ms(k * 60);
            let t_pop = t_admit + ms(40 + k * 7);
            q.admit(pkt(k, FlowId::SubflowA, 1458), t_admit);
            let out = q.dequeue(t_pop);
            total_dropped += out.dropped.len();
            for d in &out.dropped {
                assert!(d.sojourn(t_pop) > SimTime::from_millis(5));
            }
        }
        assert!(total_dropped > 0, "runaway sojourns were never dropped");
    }

    #[test]
    fn drain_resets_gate_and_law() {
        let mut q = CodelLifo::new(&cfg());
        q.admit(pkt(1, FlowId::SubflowA, 1458), ms(0));
        q.admit(pkt(2, FlowId::SubflowA, 1458), ms(0));
        q.dequeue(ms(50));
        assert_eq!(q.gate().samples, 1);
        q.dequeue(ms(60)); // drains the stack
        assert!(q.is_empty());
        assert_eq!(q.gate().samples, 0);
        assert!(!q.control().dropping());
        assert_eq!(q.control().first_above_at(), None);
    }

    #[test]
    fn admission_tail_drops_at_limit() {
        let mut c = cfg();
        c.limit = 3;
        let mut q = CodelLifo::new(&c);
        for id in 1..=3 {
            assert!(!q
                .admit(pkt(id, FlowId::SubflowB, 1458), ms(0))
                .was_dropped());
        }
        assert!(q.admit(pkt(4, FlowId::SubflowB, 1458), ms(0)).was_dropped());
        assert_eq!(q.len(), 3);
    }
}
