// SPDX-License-Identifier: Apache-2.0

//! End System: encapsulation onto virtual links, BAG-spaced static-priority
//! scheduling, and per-VL sequence numbering and successiveness checks.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{
    decode, encode, encoded_len_for_payload, next_seq, Frame, FrameError, WireFrame, MAX_FRAME_LEN,
    MIN_FRAME_LEN,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EsError {
    #[error("VL {vlid} is not sourced by end system {es}")]
    UnknownVl { vlid: u16, es: u16 },
    #[error("message encodes to {frame_len} bytes, VL limit is {lmax}")]
    OversizeMessage { frame_len: usize, lmax: usize },
    #[error("invalid virtual link {vlid}: {what}")]
    InvalidVl { vlid: u16, what: &'static str },
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// Virtual link configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirtualLink {
    pub vlid: u16,
    /// Minimum number of cycles between two emission starts.
    pub bag_cycles: u64,
    /// Largest Ethernet frame (preamble and SFD excluded) allowed on the VL.
    pub lmax_bytes: usize,
    pub src_es: u16,
    pub dest_es: BTreeSet<u16>,
    /// Lower is more urgent.
    pub priority: u32,
}

impl VirtualLink {
    pub fn validate(&self) -> Result<(), EsError> {
        let invalid = |what| Err(EsError::InvalidVl { vlid: self.vlid, what });
        if self.bag_cycles == 0 {
            return invalid("bag_cycles must be at least 1");
        }
        if !(MIN_FRAME_LEN..=MAX_FRAME_LEN).contains(&self.lmax_bytes) {
            return invalid("lmax_bytes must lie in [64, 1518]");
        }
        if self.dest_es.is_empty() {
            return invalid("destination set is empty");
        }
        Ok(())
    }
}

/// Sender-side sequence state. `None` means no frame since the last reset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SeqCounter {
    last_sent: Option<u8>,
}

impl SeqCounter {
    pub fn last_sent(&self) -> Option<u8> {
        self.last_sent
    }

    /// Stamps the next frame: 0 right after a reset, then 1..=255 cyclically.
    pub fn advance(&mut self) -> u8 {
        let seq = self.last_sent.map_or(0, next_seq);
        self.last_sent = Some(seq);
        seq
    }

    pub fn reset(&mut self) {
        self.last_sent = None;
    }
}

#[derive(Debug, Clone)]
pub struct Queued<M> {
    pub frame: Frame,
    pub wire: WireFrame,
    pub tag: M,
}

#[derive(Debug, Clone)]
pub struct VlQueue<M> {
    pub vl: VirtualLink,
    pending: VecDeque<Queued<M>>,
    last_emission: Option<u64>,
    seq: SeqCounter,
}

impl<M> VlQueue<M> {
    fn new(vl: VirtualLink) -> Self {
        VlQueue { vl, pending: VecDeque::new(), last_emission: None, seq: SeqCounter::default() }
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn last_emission(&self) -> Option<u64> {
        self.last_emission
    }

    /// First cycle at which the BAG allows another emission.
    fn bag_ready_at(&self) -> u64 {
        self.last_emission.map_or(0, |t| t + self.vl.bag_cycles)
    }
}

/// A frame leaving the End System.
#[derive(Debug, Clone)]
pub struct Emission<M> {
    pub vlid: u16,
    pub seq: u8,
    pub wire: WireFrame,
    pub tag: M,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict")]
pub enum IntegrityVerdict {
    InOrder,
    /// `gap` frames are missing between the previous and this one.
    Skip {
        gap: u32,
    },
    Duplicate,
    Reset,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrityCounters {
    pub in_order: u64,
    /// Sum of all skip gaps.
    pub skipped: u64,
    pub duplicates: u64,
    pub resets: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct RxVlState {
    /// 0 until the first frame; afterwards always in 1..=255.
    expected_next: u8,
    last_seen: Option<u8>,
    counters: IntegrityCounters,
}

/// Receiver-side successiveness tracking, one entry per VL seen.
#[derive(Debug, Clone, Default)]
pub struct RxIntegrityState {
    per_vl: BTreeMap<u16, RxVlState>,
}

impl RxIntegrityState {
    pub fn expected_next(&self, vlid: u16) -> u8 {
        self.per_vl.get(&vlid).map_or(0, |s| s.expected_next)
    }

    pub fn counters(&self, vlid: u16) -> IntegrityCounters {
        self.per_vl.get(&vlid).map(|s| s.counters).unwrap_or_default()
    }

    /// Classifies `seq` against the expected successor and updates state.
    pub fn observe(&mut self, vlid: u16, seq: u8) -> IntegrityVerdict {
        let st = self.per_vl.entry(vlid).or_default();
        let verdict = if seq == 0 {
            st.counters.resets += 1;
            st.expected_next = 1;
            IntegrityVerdict::Reset
        } else if seq == st.expected_next {
            st.counters.in_order += 1;
            st.expected_next = next_seq(seq);
            IntegrityVerdict::InOrder
        } else if st.last_seen == Some(seq) {
            st.counters.duplicates += 1;
            IntegrityVerdict::Duplicate
        } else {
            let gap = seq_gap(st.expected_next, seq);
            st.counters.skipped += gap as u64;
            st.expected_next = next_seq(seq);
            IntegrityVerdict::Skip { gap }
        };
        st.last_seen = Some(seq);
        verdict
    }
}

/// Number of sequence values strictly between the expected one and `seq`
/// on the 1..=255 ring. An expectation of 0 (nothing received yet) also
/// counts the missing reset frame.
fn seq_gap(expected: u8, seq: u8) -> u32 {
    if expected == 0 {
        seq as u32
    } else {
        (seq as i32 - expected as i32).rem_euclid(255) as u32
    }
}

/// A frame handed to the application.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub frame: Frame,
    pub verdict: IntegrityVerdict,
    pub at: u64,
}

#[derive(Debug, Clone)]
pub struct EndSystem<M = ()> {
    id: u16,
    tx: BTreeMap<u16, VlQueue<M>>,
    rx: RxIntegrityState,
    tx_busy_until: u64,
}

impl<M> EndSystem<M> {
    /// Builds an End System sourcing the given VLs; VLs of other sources are
    /// ignored.
    pub fn new(id: u16, vls: impl IntoIterator<Item = VirtualLink>) -> Result<Self, EsError> {
        let mut tx = BTreeMap::new();
        for vl in vls.into_iter().filter(|vl| vl.src_es == id) {
            vl.validate()?;
            tx.insert(vl.vlid, VlQueue::new(vl));
        }
        Ok(EndSystem { id, tx, rx: RxIntegrityState::default(), tx_busy_until: 0 })
    }

    pub fn id(&self) -> u16 {
        self.id
    }

    pub fn vl(&self, vlid: u16) -> Option<&VlQueue<M>> {
        self.tx.get(&vlid)
    }

    pub fn owns(&self, vlid: u16) -> bool {
        self.tx.contains_key(&vlid)
    }

    pub fn integrity(&self) -> &RxIntegrityState {
        &self.rx
    }

    pub fn pending(&self) -> usize {
        self.tx.values().map(VlQueue::pending).sum()
    }

    pub fn queued(&self) -> impl Iterator<Item = &Queued<M>> {
        self.tx.values().flat_map(|q| q.pending.iter())
    }

    /// Encapsulates `payload` and queues it on `vlid`, stamping the next
    /// sequence number. `port` is the UDP port the message came from.
    pub fn submit_tagged(&mut self, port: u16, payload: Vec<u8>, vlid: u16, tag: M) -> Result<u8, EsError> {
        let es = self.id;
        let q = self.tx.get_mut(&vlid).ok_or(EsError::UnknownVl { vlid, es })?;
        let frame_len = encoded_len_for_payload(payload.len());
        if frame_len > q.vl.lmax_bytes {
            return Err(EsError::OversizeMessage { frame_len, lmax: q.vl.lmax_bytes });
        }
        let mut frame = Frame { vlid, src_es: es, udp_src_port: port, udp_dst_port: port, payload, seq: 0 };
        // Stamp only once encoding is known to succeed.
        let seq = q.seq.last_sent().map_or(0, next_seq);
        frame.seq = seq;
        let wire = encode(&frame)?;
        q.seq.advance();
        q.pending.push_back(Queued { frame, wire, tag });
        Ok(seq)
    }

    /// Picks the next frame to emit at `now`: the most urgent VL whose queue
    /// is non-empty and whose BAG has elapsed, lowest VLID on ties.
    pub fn schedule(&mut self, now: u64) -> Option<Emission<M>> {
        if now < self.tx_busy_until {
            return None;
        }
        let q = self
            .tx
            .values_mut()
            .filter(|q| !q.pending.is_empty() && now >= q.bag_ready_at())
            .min_by_key(|q| (q.vl.priority, q.vl.vlid))?;
        let Queued { frame, wire, tag } = q.pending.pop_front()?;
        q.last_emission = Some(now);
        self.tx_busy_until = now + wire.len() as u64;
        Some(Emission { vlid: frame.vlid, seq: frame.seq, wire, tag })
    }

    /// Earliest cycle `>= now` at which [`schedule`](Self::schedule) can
    /// return a frame, if anything is queued.
    pub fn next_ready(&self, now: u64) -> Option<u64> {
        self.tx
            .values()
            .filter(|q| !q.pending.is_empty())
            .map(|q| q.bag_ready_at())
            .min()
            .map(|t| t.max(self.tx_busy_until).max(now))
    }

    /// Decodes a frame from the network and checks sequence successiveness.
    /// The frame is delivered whatever the verdict.
    pub fn receive_frame(&mut self, wire: &WireFrame, now: u64) -> Result<Delivery, FrameError> {
        let frame = decode(wire)?;
        let verdict = self.rx.observe(frame.vlid, frame.seq);
        Ok(Delivery { frame, verdict, at: now })
    }

    /// System reset: queues are flushed and both sequence directions start
    /// over at 0.
    pub fn reset(&mut self) {
        for q in self.tx.values_mut() {
            q.pending.clear();
            q.seq.reset();
            q.last_emission = None;
        }
        self.rx = RxIntegrityState::default();
        self.tx_busy_until = 0;
    }
}

impl<M: Default> EndSystem<M> {
    pub fn submit_message(&mut self, port: u16, payload: Vec<u8>, vlid: u16) -> Result<u8, EsError> {
        self.submit_tagged(port, payload, vlid, M::default())
    }
}
