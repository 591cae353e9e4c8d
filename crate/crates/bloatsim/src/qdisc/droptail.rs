//! Tail-drop FIFO: the baseline discipline. Packets are only ever lost at
//! admission when the queue is full; dequeue always delivers the head.

use super::{Admission, DequeueOutcome, Discipline, DisciplineConfig};
use crate::net::Packet;
use crate::sim::SimTime;
use std::collections::VecDeque;

pub struct DropTail {
    queue: VecDeque<Packet>,
    bytes: usize,
    limit: usize,
}

impl DropTail {
    pub fn new(cfg: &DisciplineConfig) -> Self {
        DropTail {
            queue: VecDeque::new(),
            bytes: 0,
            limit: cfg.limit,
        }
    }
}

impl Discipline for DropTail {
    fn admit(&mut self, mut pkt: Packet, now: SimTime) -> Admission {
        if self.queue.len() >= self.limit {
            return Admission::Dropped(pkt);
        }
        pkt.enq = Some(now);
        self.bytes += pkt.size;
        self.queue.push_back(pkt);
        Admission::Enqueued
    }

    fn dequeue(&mut self, now: SimTime) -> DequeueOutcome {
        match self.queue.pop_front() {
            None => DequeueOutcome::empty(),
            Some(pkt) => {
                self.bytes -= pkt.size;
                let sojourn = pkt.sojourn(now);
                DequeueOutcome::deliver(pkt, sojourn, Vec::new())
            }
        }
    }

    fn len(&self) -> usize {
        self.queue.len()
    }

    fn byte_len(&self) -> usize {
        self.bytes
    }

    fn peek_next_size(&self) -> Option<usize> {
        self.queue.front().map(|p| p.size)
    }
}
