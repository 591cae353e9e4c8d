//! One end-to-end run: a multipath sender reaching the receiver through two
//! access links that converge on a shared bottleneck queue, plus a UDP
//! constant-bit-rate source contending for the same queue.
//!
//! Forward traffic (handshakes, data, UDP) traverses an access link, the
//! studied queue, and the bottleneck link. Acknowledgments return on
//! per-path reverse links with the same propagation delay but no queueing,
//! so every recorded drop is attributable to the studied discipline.

use crate::mptcp::{CcAlgorithm, Receiver, Sender};
use crate::net::{CbrSource, FlowId, Link, Packet, PacketKind, PathId, PATHS};
use crate::qdisc::{Admission, Discipline, DisciplineConfig, DisciplineKind};
use crate::sim::{EventHandle, Prng, Sim, SimTime, Stalled};

/// Everything needed to build and run one simulation.
#[derive(Clone, Debug)]
pub struct RunSetup {
    pub qdisc: DisciplineKind,
    pub cc: CcAlgorithm,
    pub workload_bytes: u64,
    /// Wire bytes per data packet; payload is this minus the 40-byte header.
    pub packet_size: usize,
    pub rcv_window: u64,
    /// Access-link rate for paths A and B, their reverse paths, and the UDP
    /// source's feed (path D, which reuses path B's propagation delay).
    pub access_rate_bps: u64,
    pub bottleneck_rate_bps: u64,
    pub delay_a: SimTime,
    pub delay_b: SimTime,
    pub bottleneck_delay: SimTime,
    pub cbr_rate_bps: u64,
    pub cbr_packet_size: usize,
    pub disc: DisciplineConfig,
    pub jitter_frac: f64,
    pub seed: u64,
    /// Stall guard: the run must finish on its own well before this.
    pub time_limit: SimTime,
    pub trace: bool,
}

/// Raw accounting extracted from a completed run; the metrics layer turns
/// this into reported values.
#[derive(Debug, Clone)]
pub struct RunRecord {
    /// Instant the sender saw the final byte acknowledged. All queue
    /// accounting is frozen here so drain-out noise never leaks in.
    pub done_at: SimTime,
    /// Per path: unique payload bytes first carried by it, with first/last
    /// arrival instants.
    pub path_delivery: [(u64, Option<SimTime>, Option<SimTime>); 2],
    pub delivered_bytes: u64,
    pub rtt_sum_ns: [u128; 2],
    pub rtt_count: [u64; 2],
    pub drops_admission: u64,
    pub drops_law: u64,
    /// Time integral of queue occupancy (nanosecond-packets) up to `done_at`.
    pub qlen_integral: u128,
    pub sojourn_sum_ns: u128,
    pub sojourn_count: u64,
}

impl RunRecord {
    pub fn drops_total(&self) -> u64 {
        self.drops_admission + self.drops_law
    }
}

/// Ways a run can fail to produce a record.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Stalled(#[from] Stalled),
    #[error(
        "simulation went idle before the transfer completed ({delivered} of {workload} bytes)"
    )]
    Incomplete { delivered: u64, workload: u64 },
}

#[derive(Debug, Clone, Copy)]
struct Frozen {
    at: SimTime,
    drops_admission: u64,
    drops_law: u64,
    qlen_integral: u128,
    sojourn_sum_ns: u128,
    sojourn_count: u64,
}

/// Event-driven accounting at the studied queue plus sender-side RTT
/// samples. Counters freeze at transfer completion.
#[derive(Default)]
struct Recorder {
    drops_admission: u64,
    drops_law: u64,
    sojourn_sum_ns: u128,
    sojourn_count: u64,
    qlen_integral: u128,
    qlen_last_at: SimTime,
    qlen_cur: usize,
    rtt_sum_ns: [u128; 2],
    rtt_count: [u64; 2],
    frozen: Option<Frozen>,
}

impl Recorder {
    /// Occupancy changed (admission, delivery, or law drop): extend the
    /// time-weighted integral through `now` and adopt the new length.
    fn on_queue_len(&mut self, now: SimTime, len: usize) {
        let span = (now - self.qlen_last_at).as_nanos() as u128;
        self.qlen_integral += span * self.qlen_cur as u128;
        self.qlen_last_at = now;
        self.qlen_cur = len;
    }

    fn on_sojourn(&mut self, delta: SimTime) {
        self.sojourn_sum_ns += delta.as_nanos() as u128;
        self.sojourn_count += 1;
    }

    fn on_rtt(&mut self, path: PathId, sample: SimTime) {
        self.rtt_sum_ns[path.index()] += sample.as_nanos() as u128;
        self.rtt_count[path.index()] += 1;
    }

    fn freeze(&mut self, now: SimTime) {
        let span = (now - self.qlen_last_at).as_nanos() as u128;
        let integral = self.qlen_integral + span * self.qlen_cur as u128;
        self.frozen = Some(Frozen {
            at: now,
            drops_admission: self.drops_admission,
            drops_law: self.drops_law,
            qlen_integral: integral,
            sojourn_sum_ns: self.sojourn_sum_ns,
            sojourn_count: self.sojourn_count,
        });
    }
}

/// The complete mutable state of one run.
pub struct World {
    rng: Prng,
    sender: Sender,
    receiver: Receiver,
    qdisc: Box<dyn Discipline>,
    router_busy: bool,
    /// Forward access links, indexed by path.
    fwd: [Link; 2],
    /// Reverse (ACK) links, indexed by path: propagation of the access link
    /// plus the bottleneck hop, no contended queue.
    rev: [Link; 2],
    /// Bottleneck egress out of the studied queue.
    link_c: Link,
    /// Feed from the UDP source into the studied queue.
    link_d: Link,
    cbr: CbrSource,
    cbr_next_id: u64,
    rec: Recorder,
    rto_ev: [Option<(SimTime, EventHandle)>; 2],
    trace: bool,
    done: bool,
}

impl World {
    fn new(setup: &RunSetup) -> Self {
        let mss = (setup.packet_size - crate::net::HEADER_BYTES) as u64;
        World {
            rng: Prng::new(setup.seed),
            sender: Sender::new(setup.cc, mss, setup.rcv_window, setup.workload_bytes),
            receiver: Receiver::new(setup.rcv_window),
            qdisc: setup.qdisc.build(&setup.disc),
            router_busy: false,
            fwd: [
                Link::new(setup.access_rate_bps, setup.delay_a, setup.jitter_frac),
                Link::new(setup.access_rate_bps, setup.delay_b, setup.jitter_frac),
            ],
            rev: [
                Link::new(
                    setup.access_rate_bps,
                    setup.delay_a + setup.bottleneck_delay,
                    setup.jitter_frac,
                ),
                Link::new(
                    setup.access_rate_bps,
                    setup.delay_b + setup.bottleneck_delay,
                    setup.jitter_frac,
                ),
            ],
            link_c: Link::new(
                setup.bottleneck_rate_bps,
                setup.bottleneck_delay,
                setup.jitter_frac,
            ),
            link_d: Link::new(setup.access_rate_bps, setup.delay_b, setup.jitter_frac),
            cbr: CbrSource {
                rate_bps: setup.cbr_rate_bps,
                packet_size: setup.cbr_packet_size,
            },
            cbr_next_id: 2,
            rec: Recorder::default(),
            rto_ev: [None, None],
            trace: setup.trace,
            done: false,
        }
    }

    fn trace_line(&self, now: SimTime, what: std::fmt::Arguments<'_>) {
        if self.trace {
            println!("[{:>15.9}] {}", now.as_secs_f64(), what);
        }
    }
}

fn flow_path(flow: FlowId) -> PathId {
    match flow {
        FlowId::SubflowA => PathId::A,
        FlowId::SubflowB => PathId::B,
        other => panic!("no sender path for flow {other}"),
    }
}

/// Put sender-originated packets onto their access links.
fn dispatch_sender(sim: &mut Sim<World>, sends: Vec<(PathId, Packet)>) {
    let now = sim.sched.now();
    for (path, pkt) in sends {
        let st = &mut sim.state;
        st.trace_line(
            now,
            format_args!(
                "send path={path} kind={:?} id={} seq={} size={}",
                pkt.kind, pkt.id, pkt.seq, pkt.size
            ),
        );
        let arrival = st.fwd[path.index()].transmit(pkt.size, now, &mut st.rng);
        sim.sched
            .schedule(arrival, move |sim| router_admit(sim, pkt));
    }
}

/// A packet reaches the router and is offered to the studied queue.
fn router_admit(sim: &mut Sim<World>, pkt: Packet) {
    let now = sim.sched.now();
    let st = &mut sim.state;
    let id = pkt.id;
    let flow = pkt.flow;
    match st.qdisc.admit(pkt, now) {
        Admission::Enqueued => {
            let len = st.qdisc.len();
            st.rec.on_queue_len(now, len);
            st.trace_line(now, format_args!("enq {flow} id={id} qlen={len}"));
            if !st.router_busy {
                router_service(sim);
            }
        }
        Admission::Dropped(_) => {
            st.rec.drops_admission += 1;
            st.trace_line(now, format_args!("drop-tail {flow} id={id}"));
        }
    }
}

/// One service opportunity at the bottleneck: runs whenever the egress link
/// goes idle while the queue holds packets.
fn router_service(sim: &mut Sim<World>) {
    let now = sim.sched.now();
    let st = &mut sim.state;
    debug_assert!(!st.router_busy, "service while the egress is busy");
    let out = st.qdisc.dequeue(now);
    for p in &out.dropped {
        st.rec.drops_law += 1;
        st.trace_line(
            now,
            format_args!(
                "drop-law {} id={} sojourn={:.6}",
                p.flow,
                p.id,
                p.sojourn(now).as_secs_f64()
            ),
        );
    }
    st.rec.on_queue_len(now, st.qdisc.len());
    let Some(pkt) = out.delivered else {
        return; // drained (or the law discarded the whole backlog)
    };
    let sojourn = out.delivered_sojourn.expect("delivery carries its sojourn");
    st.rec.on_sojourn(sojourn);
    st.trace_line(
        now,
        format_args!(
            "deq {} id={} sojourn={:.6} qlen={}",
            pkt.flow,
            pkt.id,
            sojourn.as_secs_f64(),
            st.qdisc.len()
        ),
    );
    let service_done = now + st.link_c.serialization(pkt.size);
    let arrival = st.link_c.transmit(pkt.size, now, &mut st.rng);
    st.router_busy = true;
    sim.sched
        .schedule(arrival, move |sim| receiver_arrival(sim, pkt));
    sim.sched.schedule(service_done, |sim| {
        sim.state.router_busy = false;
        if !sim.state.qdisc.is_empty() {
            router_service(sim);
        }
    });
}

/// A packet crosses the bottleneck and reaches the receiver host.
fn receiver_arrival(sim: &mut Sim<World>, pkt: Packet) {
    let now = sim.sched.now();
    match pkt.kind {
        PacketKind::Syn => {
            let path = flow_path(pkt.flow);
            let reply = sim.state.receiver.on_syn(path, now);
            send_reverse(sim, path, reply);
        }
        PacketKind::Data => {
            let path = flow_path(pkt.flow);
            let payload = pkt.payload() as u64;
            let ack = sim.state.receiver.on_data(path, pkt.seq, payload, now);
            match ack {
                Some(reply) => send_reverse(sim, path, reply),
                None => sim.state.trace_line(
                    now,
                    format_args!("rcv-discard {} id={} seq={}", pkt.flow, pkt.id, pkt.seq),
                ),
            }
        }
        PacketKind::Udp => {
            // Cross traffic terminates here.
        }
        PacketKind::SynAck | PacketKind::Ack => {
            unreachable!("reverse-direction packet on the forward path")
        }
    }
}

/// Send a receiver reply back on the uncontended reverse path.
fn send_reverse(sim: &mut Sim<World>, path: PathId, pkt: Packet) {
    let now = sim.sched.now();
    let st = &mut sim.state;
    let arrival = st.rev[path.index()].transmit(pkt.size, now, &mut st.rng);
    sim.sched
        .schedule(arrival, move |sim| sender_arrival(sim, path, pkt));
}

/// A reply reaches the sender host.
fn sender_arrival(sim: &mut Sim<World>, path: PathId, pkt: Packet) {
    let now = sim.sched.now();
    match pkt.kind {
        PacketKind::SynAck => {
            sim.state
                .trace_line(now, format_args!("synack path={path}"));
            let sends = sim.state.sender.on_synack(path, now);
            dispatch_sender(sim, sends);
        }
        PacketKind::Ack => {
            let out = sim.state.sender.on_ack(path, pkt.seq, now);
            sim.state.trace_line(
                now,
                format_args!(
                    "ack path={path} cum={} sends={}",
                    pkt.seq,
                    out.to_send.len()
                ),
            );
            if let Some((p, sample)) = out.rtt_sample {
                sim.state.rec.on_rtt(p, sample);
            }
            dispatch_sender(sim, out.to_send);
            if out.just_completed {
                sim.state.done = true;
                sim.state.rec.freeze(now);
                sim.state
                    .trace_line(now, format_args!("complete t={:.6}", now.as_secs_f64()));
            }
        }
        other => unreachable!("unexpected {other:?} on the reverse path"),
    }
    reconcile_rto(sim);
}

/// Make the engine's pending timeout events match the sender's desired
/// deadlines exactly (cancel stale ones, arm missing ones).
fn reconcile_rto(sim: &mut Sim<World>) {
    for path in PATHS {
        let i = path.index();
        let desired = sim.state.sender.rto_deadline(path);
        let current = sim.state.rto_ev[i].map(|(at, _)| at);
        if desired == current {
            continue;
        }
        if let Some((_, handle)) = sim.state.rto_ev[i].take() {
            sim.sched.cancel(handle);
        }
        if let Some(at) = desired {
            let handle = sim.sched.schedule(at, move |sim| {
                sim.state.rto_ev[path.index()] = None;
                let now = sim.sched.now();
                sim.state.trace_line(now, format_args!("rto path={path}"));
                let sends = sim.state.sender.on_rto(path, now);
                dispatch_sender(sim, sends);
                reconcile_rto(sim);
            });
            sim.state.rto_ev[i] = Some((at, handle));
        }
    }
}

/// Emit one UDP packet toward the shared queue and schedule the next tick.
/// The source falls silent once the transfer completes.
fn cbr_tick(sim: &mut Sim<World>) {
    if sim.state.done {
        return;
    }
    let now = sim.sched.now();
    let st = &mut sim.state;
    let id = st.cbr_next_id;
    st.cbr_next_id += 4;
    let pkt = Packet {
        id,
        flow: FlowId::UdpCbr,
        kind: PacketKind::Udp,
        seq: 0,
        size: st.cbr.packet_size,
        enq: None,
        sent_at: now,
    };
    let arrival = st.link_d.transmit(pkt.size, now, &mut st.rng);
    sim.sched
        .schedule(arrival, move |sim| router_admit(sim, pkt));
    let gap = st.cbr.gap();
    sim.sched.schedule(now + gap, cbr_tick);
}

/// Build and run one simulation to completion, returning its raw record.
pub fn run_once(setup: &RunSetup) -> Result<RunRecord, RunError> {
    setup
        .disc
        .validate()
        .unwrap_or_else(|e| panic!("invalid discipline config: {e}"));
    let mut sim = Sim::new(World::new(setup));
    sim.sched.schedule(SimTime::ZERO, |sim| {
        let sends = sim.state.sender.start(sim.sched.now());
        dispatch_sender(sim, sends);
        reconcile_rto(sim);
    });
    if sim.state.cbr.enabled() {
        let phase = {
            let gap = sim.state.cbr.gap();
            sim.state.rng.uniform_time(gap)
        };
        sim.sched.schedule(phase, cbr_tick);
    }
    sim.run_until_idle_capped(setup.time_limit)?;
    let st = &sim.state;
    if !st.sender.is_complete() {
        return Err(RunError::Incomplete {
            delivered: st.receiver.delivered_bytes(),
            workload: setup.workload_bytes,
        });
    }
    let frozen = st.rec.frozen.expect("completion freezes the recorder");
    Ok(RunRecord {
        done_at: frozen.at,
        path_delivery: [
            st.receiver.path_delivery(PathId::A),
            st.receiver.path_delivery(PathId::B),
        ],
        delivered_bytes: st.receiver.delivered_bytes(),
        rtt_sum_ns: st.rec.rtt_sum_ns,
        rtt_count: st.rec.rtt_count,
        drops_admission: frozen.drops_admission,
        drops_law: frozen.drops_law,
        qlen_integral: frozen.qlen_integral,
        sojourn_sum_ns: frozen.sojourn_sum_ns,
        sojourn_count: frozen.sojourn_count,
    })
}
