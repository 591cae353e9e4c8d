//! The shared receive buffer: one in-order delivery point fed by both
//! subflows, emitting one cumulative ACK per arriving data packet on the
//! path the data used.
//!
//! For goodput accounting every payload byte is attributed to the path that
//! first carried it here; later duplicates of the same bytes count nowhere.

use crate::net::{FlowId, Packet, PacketKind, PathId, HEADER_BYTES};
use crate::sim::SimTime;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, Default)]
struct PathDelivery {
    bytes: u64,
    first_at: Option<SimTime>,
    last_at: Option<SimTime>,
}

/// Receive-side connection state.
pub struct Receiver {
    /// Out-of-order hold space in bytes beyond `next_expected`.
    capacity: u64,
    next_expected: u64,
    /// Accepted but not yet in-order segments: start offset -> length.
    ooo: BTreeMap<u64, u64>,
    delivered: u64,
    per_path: [PathDelivery; 2],
    next_id: u64,
}

impl Receiver {
    pub fn new(capacity: u64) -> Self {
        Receiver {
            capacity,
            next_expected: 0,
            ooo: BTreeMap::new(),
            delivered: 0,
            per_path: [PathDelivery::default(); 2],
            next_id: 1,
        }
    }

    fn alloc_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 4;
        id
    }

    /// Answer a handshake request arriving on `path`.
    pub fn on_syn(&mut self, path: PathId, now: SimTime) -> Packet {
        let _ = path;
        Packet {
            id: self.alloc_id(),
            flow: FlowId::Ack,
            kind: PacketKind::SynAck,
            seq: 0,
            size: HEADER_BYTES,
            enq: None,
            sent_at: now,
        }
    }

    /// Process a data segment `[seq, seq+payload)` arriving on `path`.
    ///
    /// Returns the cumulative ACK to send back on the same path, or `None`
    /// when the segment lands beyond the hold space and is discarded
    /// unacknowledged.
    pub fn on_data(
        &mut self,
        path: PathId,
        seq: u64,
        payload: u64,
        now: SimTime,
    ) -> Option<Packet> {
        assert!(payload > 0, "empty data segment");
        let end = seq + payload;
        let fresh = seq >= self.next_expected && !self.ooo.contains_key(&seq);
        if fresh {
            if end > self.next_expected + self.capacity {
                return None;
            }
            let slot = &mut self.per_path[path.index()];
            slot.bytes += payload;
            slot.first_at.get_or_insert(now);
            slot.last_at = Some(now);
            self.ooo.insert(seq, payload);
            while let Some((&start, &len)) = self.ooo.first_key_value() {
                if start != self.next_expected {
                    break;
                }
                self.ooo.remove(&start);
                self.next_expected = start + len;
                self.delivered += len;
            }
        }
        Some(self.make_ack(path, now))
    }

    fn make_ack(&mut self, path: PathId, now: SimTime) -> Packet {
        let _ = path;
        Packet {
            id: self.alloc_id(),
            flow: FlowId::Ack,
            kind: PacketKind::Ack,
            seq: self.next_expected,
            size: HEADER_BYTES,
            enq: None,
            sent_at: now,
        }
    }

    /// Contiguous bytes handed to the application so far.
    pub fn delivered_bytes(&self) -> u64 {
        self.delivered
    }

    pub fn next_expected(&self) -> u64 {
        self.next_expected
    }

    /// Unique payload bytes first carried by `path`, with the timestamps of
    /// its first and last such arrival.
    pub fn path_delivery(&self, path: PathId) -> (u64, Option<SimTime>, Option<SimTime>) {
        let d = &self.per_path[path.index()];
        (d.bytes, d.first_at, d.last_at)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MSS: u64 = 1418;

    fn ms(v: u64) -> SimTime {
        SimTime::from_millis(v)
    }

    fn acks(r: &mut Receiver, path: PathId, seqs: &[u64], t0: u64) -> Vec<Option<u64>> {
        seqs.iter()
            .enumerate()
            .map(|(k, &s)| {
                r.on_data(path, s * MSS, MSS, ms(t0 + k as u64))
                    .map(|p| p.seq)
            })
            .collect()
    }

    #[test]
    fn in_order_arrivals_ack_each_boundary() {
        let mut r = Receiver::new(65536);
        let got = acks(&mut r, PathId::A, &[0, 1, 2], 10);
        assert_eq!(got, vec![Some(MSS), Some(2 * MSS), Some(3 * MSS)]);
        assert_eq!(r.delivered_bytes(), 3 * MSS);
    }

    #[test]
    fn gap_produces_duplicates_then_a_cumulative_jump() {
        let mut r = Receiver::new(65536);
        let got = acks(&mut r, PathId::A, &[0, 2, 3], 10);
        assert_eq!(got, vec![Some(MSS), Some(MSS), Some(MSS)]);
        // The hole fills: everything buffered unblocks in one ACK.
        let ack = r.on_data(PathId::A, MSS, MSS, ms(20)).unwrap();
        assert_eq!(ack.seq, 4 * MSS);
        assert_eq!(r.delivered_bytes(), 4 * MSS);
    }

    #[test]
    fn stale_segment_below_the_window_is_acked_but_not_recounted() {
        let mut r = Receiver::new(65536);
        acks(&mut r, PathId::A, &[0, 1], 10);
        let (bytes_before, _, last_before) = r.path_delivery(PathId::A);
        let ack = r.on_data(PathId::A, 0, MSS, ms(30)).unwrap();
        assert_eq!(ack.seq, 2 * MSS, "duplicate still acknowledged");
        let (bytes_after, _, last_after) = r.path_delivery(PathId::A);
        assert_eq!(bytes_after, bytes_before, "no double counting");
        assert_eq!(last_after, last_before, "timestamps unmoved by stale data");
    }

    #[test]
    fn duplicate_of_a_buffered_segment_is_acked_once_counted_once() {
        let mut r = Receiver::new(65536);
        r.on_data(PathId::A, 2 * MSS, MSS, ms(10));
        let (b1, ..) = r.path_delivery(PathId::A);
        let ack = r.on_data(PathId::B, 2 * MSS, MSS, ms(11)).unwrap();
        assert_eq!(ack.seq, 0, "still waiting on the first byte");
        let (b1_after, ..) = r.path_delivery(PathId::A);
        let (b2, ..) = r.path_delivery(PathId::B);
        assert_eq!(b1_after, b1);
        assert_eq!(b2, 0, "second copy counts for neither path");
    }

    #[test]
    fn data_beyond_hold_space_is_dropped_without_an_ack() {
        let mut r = Receiver::new(4 * MSS);
        assert!(r.on_data(PathId::A, 0, MSS, ms(10)).is_some());
        // next_expected = MSS; offsets up to MSS + capacity are storable.
        assert!(r.on_data(PathId::A, 4 * MSS, MSS, ms(11)).is_some());
        assert!(r.on_data(PathId::A, 5 * MSS, MSS, ms(12)).is_none());
        assert_eq!(r.delivered_bytes(), MSS, "discard left no trace");
    }

    #[test]
    fn bytes_are_attributed_to_the_path_that_carried_them_first() {
        let mut r = Receiver::new(65536);
        // Segment 1 arrives on B out of order, then A fills the hole.
        r.on_data(PathId::B, MSS, MSS, ms(10));
        r.on_data(PathId::A, 0, MSS, ms(12));
        let (a_bytes, a_first, a_last) = r.path_delivery(PathId::A);
        let (b_bytes, b_first, b_last) = r.path_delivery(PathId::B);
        assert_eq!(a_bytes, MSS);
        assert_eq!(b_bytes, MSS);
        assert_eq!((a_first, a_last), (Some(ms(12)), Some(ms(12))));
        assert_eq!((b_first, b_last), (Some(ms(10)), Some(ms(10))));
        assert_eq!(r.delivered_bytes(), 2 * MSS);
    }

    #[test]
    fn handshake_reply_mirrors_on_the_ack_flow() {
        let mut r = Receiver::new(65536);
        let synack = r.on_syn(PathId::B, ms(5));
        assert_eq!(synack.kind, PacketKind::SynAck);
        assert_eq!(synack.size, HEADER_BYTES);
        assert_eq!(synack.flow, FlowId::Ack);
    }

    #[test]
    fn short_final_segment_completes_the_stream() {
        let mut r = Receiver::new(65536);
        r.on_data(PathId::A, 0, MSS, ms(1));
        let ack = r.on_data(PathId::A, MSS, 1278, ms(2)).unwrap();
        assert_eq!(ack.seq, MSS + 1278);
        assert_eq!(r.delivered_bytes(), MSS + 1278);
    }
}
