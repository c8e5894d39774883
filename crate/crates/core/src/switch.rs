// SPDX-License-Identifier: Apache-2.0

//! Store-and-forward switch.
//!
//! A frame is detected by the per-port test unit, stored whole in the RX
//! port memory, then walked through the controller pipeline
//! (length, FCS, address) before being copied through the multiplexing
//! matrix into one or more TX port memories. Frames are never modified.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{
    crc32, WireFrame, MAX_FRAME_LEN, MIN_FRAME_LEN, PREAMBLE_BYTE, PREAMBLE_LEN, SFD, WIRE_OVERHEAD,
};

/// Per-port memory, sized for one maximum frame plus preamble and SFD.
pub const PORT_BUFFER_CAPACITY: usize = 1600;
/// Post-reception cycles: length check, FCS compare, lookup, forward start.
pub const DEFAULT_PROCESSING_DELAY: u64 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SwitchError {
    #[error("port {port} out of range for a {port_count}-port switch")]
    InvalidPort { port: usize, port_count: usize },
    #[error("address table entry for VL {vlid} has no ports")]
    EmptyEntry { vlid: u16 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    BadLength,
    BadFcs,
    UnknownAddress,
    BufferOverflow,
}

impl DropReason {
    pub const ALL: [DropReason; 4] =
        [DropReason::BadLength, DropReason::BadFcs, DropReason::UnknownAddress, DropReason::BufferOverflow];

    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::BadLength => "bad_length",
            DropReason::BadFcs => "bad_fcs",
            DropReason::UnknownAddress => "unknown_address",
            DropReason::BufferOverflow => "buffer_overflow",
        }
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounts {
    pub bad_length: u64,
    pub bad_fcs: u64,
    pub unknown_address: u64,
    pub buffer_overflow: u64,
}

impl DropCounts {
    pub fn record(&mut self, reason: DropReason) {
        *self.slot(reason) += 1;
    }

    pub fn get(&self, reason: DropReason) -> u64 {
        match reason {
            DropReason::BadLength => self.bad_length,
            DropReason::BadFcs => self.bad_fcs,
            DropReason::UnknownAddress => self.unknown_address,
            DropReason::BufferOverflow => self.buffer_overflow,
        }
    }

    pub fn add(&mut self, other: &DropCounts) {
        self.bad_length += other.bad_length;
        self.bad_fcs += other.bad_fcs;
        self.unknown_address += other.unknown_address;
        self.buffer_overflow += other.buffer_overflow;
    }

    pub fn total(&self) -> u64 {
        self.bad_length + self.bad_fcs + self.unknown_address + self.buffer_overflow
    }

    fn slot(&mut self, reason: DropReason) -> &mut u64 {
        match reason {
            DropReason::BadLength => &mut self.bad_length,
            DropReason::BadFcs => &mut self.bad_fcs,
            DropReason::UnknownAddress => &mut self.unknown_address,
            DropReason::BufferOverflow => &mut self.buffer_overflow,
        }
    }
}

/// Anything that can sit in a port memory.
pub trait Buffered {
    fn wire(&self) -> &WireFrame;
}

impl Buffered for WireFrame {
    fn wire(&self) -> &WireFrame {
        self
    }
}

/// Byte-accounted FIFO. A frame is admitted only if it fits entirely.
#[derive(Debug, Clone)]
pub struct PortBuffer<T = WireFrame> {
    capacity: usize,
    fifo: VecDeque<T>,
    occupancy: usize,
    peak: usize,
}

impl<T> Default for PortBuffer<T> {
    fn default() -> Self {
        Self::with_capacity(PORT_BUFFER_CAPACITY)
    }
}

impl<T> PortBuffer<T> {
    pub fn with_capacity(capacity: usize) -> Self {
        PortBuffer { capacity, fifo: VecDeque::new(), occupancy: 0, peak: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn occupancy(&self) -> usize {
        self.occupancy
    }

    /// Highest occupancy observed since construction.
    pub fn peak(&self) -> usize {
        self.peak
    }

    pub fn len(&self) -> usize {
        self.fifo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fifo.is_empty()
    }

    pub fn front(&self) -> Option<&T> {
        self.fifo.front()
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.fifo.iter()
    }
}

impl<T: Buffered> PortBuffer<T> {
    /// Appends `item` unless that would exceed capacity; the rejected item
    /// is handed back (drop-newest).
    pub fn try_push(&mut self, item: T) -> Result<(), T> {
        let len = item.wire().len();
        if self.occupancy + len > self.capacity {
            return Err(item);
        }
        self.occupancy += len;
        self.peak = self.peak.max(self.occupancy);
        self.fifo.push_back(item);
        Ok(())
    }

    pub fn pop_front(&mut self) -> Option<T> {
        let item = self.fifo.pop_front()?;
        self.occupancy -= item.wire().len();
        Some(item)
    }
}

/// Test unit: index of the first byte after a preamble (seven 0x55) and SFD
/// found at or after `offset`.
pub fn detect_frame_start(stream: &[u8], offset: usize) -> Option<usize> {
    let tail = stream.get(offset..)?;
    tail.windows(WIRE_OVERHEAD)
        .position(|w| w[..PREAMBLE_LEN].iter().all(|&b| b == PREAMBLE_BYTE) && w[PREAMBLE_LEN] == SFD)
        .map(|i| offset + i + WIRE_OVERHEAD)
}

/// True iff the Ethernet length lies in [64, 1518].
pub fn check_length(wire: &WireFrame) -> bool {
    wire.len() >= WIRE_OVERHEAD && (MIN_FRAME_LEN..=MAX_FRAME_LEN).contains(&wire.ethernet_len())
}

/// True iff the CRC over destination MAC..seq equals the trailing FCS.
pub fn check_fcs(wire: &WireFrame) -> bool {
    match (wire.covered(), wire.fcs()) {
        (Some(covered), Some(fcs)) => crc32(covered) == fcs,
        _ => false,
    }
}

/// Static VLID to TX-port-set map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddressTable {
    port_count: usize,
    entries: BTreeMap<u16, BTreeSet<usize>>,
}

impl AddressTable {
    pub fn new(port_count: usize) -> Self {
        AddressTable { port_count, entries: BTreeMap::new() }
    }

    pub fn port_count(&self) -> usize {
        self.port_count
    }

    pub fn insert(&mut self, vlid: u16, ports: impl IntoIterator<Item = usize>) -> Result<(), SwitchError> {
        let ports: BTreeSet<usize> = ports.into_iter().collect();
        if ports.is_empty() {
            return Err(SwitchError::EmptyEntry { vlid });
        }
        if let Some(&port) = ports.iter().find(|&&p| p >= self.port_count) {
            return Err(SwitchError::InvalidPort { port, port_count: self.port_count });
        }
        self.entries.insert(vlid, ports);
        Ok(())
    }

    pub fn lookup(&self, vlid: u16) -> Option<&BTreeSet<usize>> {
        self.entries.get(&vlid)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u16, &BTreeSet<usize>)> {
        self.entries.iter().map(|(&v, p)| (v, p))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchConfig {
    pub port_count: usize,
    pub broadcast: bool,
    pub broadcast_excludes_ingress: bool,
    pub processing_delay: u64,
    pub table: AddressTable,
}

impl SwitchConfig {
    pub fn new(table: AddressTable) -> Self {
        SwitchConfig {
            port_count: table.port_count(),
            broadcast: false,
            broadcast_excludes_ingress: false,
            processing_delay: DEFAULT_PROCESSING_DELAY,
            table,
        }
    }

    /// TX ports a valid frame from `rx_port` reaches in broadcast mode.
    pub fn broadcast_ports(&self, rx_port: usize) -> BTreeSet<usize> {
        (0..self.port_count).filter(|&p| !(self.broadcast_excludes_ingress && p == rx_port)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ForwardDecision {
    Drop(DropReason),
    Forward(BTreeSet<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControllerState {
    Idle,
    Receiving,
    CheckLength,
    CheckFcs,
    Lookup,
    Forward,
    Drop,
}

/// Flags raised towards the controller by the test unit, CRC module and
/// addresses table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerSignal {
    FrameDetected,
    ReceptionComplete,
    LengthOk,
    LengthBad,
    FcsMatch,
    FcsMismatch,
    AddressFound,
    AddressMissing,
    Completion,
}

/// One controller transition. Signals that do not apply to the current
/// state leave it unchanged.
pub fn step_controller(state: ControllerState, signal: ControllerSignal) -> ControllerState {
    use ControllerSignal as S;
    use ControllerState::*;
    match (state, signal) {
        (Idle, S::FrameDetected) => Receiving,
        (Receiving, S::ReceptionComplete) => CheckLength,
        (CheckLength, S::LengthOk) => CheckFcs,
        (CheckLength, S::LengthBad) => Drop,
        (CheckFcs, S::FcsMatch) => Lookup,
        (CheckFcs, S::FcsMismatch) => Drop,
        (Lookup, S::AddressFound) => Forward,
        (Lookup, S::AddressMissing) => Drop,
        (Forward, S::Completion) | (Drop, S::Completion) => Idle,
        (s, _) => s,
    }
}

/// Decision for a fully received frame together with the controller states
/// visited, starting and ending at `Idle`.
pub fn run_pipeline(
    wire: &WireFrame,
    rx_port: usize,
    config: &SwitchConfig,
) -> (ForwardDecision, Vec<ControllerState>) {
    let mut state = ControllerState::Idle;
    let mut visited = vec![state];
    let mut step = |signal| {
        state = step_controller(state, signal);
        visited.push(state);
    };

    // A missing delimiter leaves no measurable frame; it is filtered as a
    // length failure.
    let delimited = detect_frame_start(wire.as_bytes(), 0) == Some(WIRE_OVERHEAD);
    step(ControllerSignal::FrameDetected);
    step(ControllerSignal::ReceptionComplete);

    let decision = if !delimited || !check_length(wire) {
        step(ControllerSignal::LengthBad);
        ForwardDecision::Drop(DropReason::BadLength)
    } else {
        step(ControllerSignal::LengthOk);
        if !check_fcs(wire) {
            step(ControllerSignal::FcsMismatch);
            ForwardDecision::Drop(DropReason::BadFcs)
        } else {
            step(ControllerSignal::FcsMatch);
            let ports = if config.broadcast {
                Some(config.broadcast_ports(rx_port))
            } else {
                wire.vlid().and_then(|v| config.table.lookup(v)).cloned()
            };
            match ports {
                Some(ports) if !ports.is_empty() => {
                    step(ControllerSignal::AddressFound);
                    ForwardDecision::Forward(ports)
                }
                _ => {
                    step(ControllerSignal::AddressMissing);
                    ForwardDecision::Drop(DropReason::UnknownAddress)
                }
            }
        }
    };
    step(ControllerSignal::Completion);
    (decision, visited)
}

/// Length, then FCS, then address; the first failing check names the drop.
pub fn process_frame(wire: &WireFrame, rx_port: usize, config: &SwitchConfig) -> ForwardDecision {
    run_pipeline(wire, rx_port, config).0
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchCounters {
    pub received: u64,
    pub forwarded: u64,
    pub copies_enqueued: u64,
    pub drops: DropCounts,
}

/// Outcome of handling one stored frame.
#[derive(Debug, Clone)]
pub struct Dispatch<T> {
    pub rx_port: usize,
    pub decision: ForwardDecision,
    /// The frame as it left RX memory.
    pub frame: T,
    /// TX ports that accepted a copy.
    pub enqueued: Vec<usize>,
    /// TX ports whose memory was full; those copies were dropped.
    pub overflowed: Vec<usize>,
}

/// Switch state: RX and TX memories per port, one controller per RX port.
#[derive(Debug, Clone)]
pub struct Switch<T = WireFrame> {
    config: SwitchConfig,
    rx: Vec<PortBuffer<T>>,
    tx: Vec<PortBuffer<T>>,
    controllers: Vec<ControllerState>,
    counters: SwitchCounters,
}

impl<T: Buffered + Clone> Switch<T> {
    pub fn new(config: SwitchConfig) -> Self {
        let n = config.port_count;
        Switch {
            rx: (0..n).map(|_| PortBuffer::default()).collect(),
            tx: (0..n).map(|_| PortBuffer::default()).collect(),
            controllers: vec![ControllerState::Idle; n],
            counters: SwitchCounters::default(),
            config,
        }
    }

    pub fn config(&self) -> &SwitchConfig {
        &self.config
    }

    pub fn port_count(&self) -> usize {
        self.config.port_count
    }

    pub fn counters(&self) -> &SwitchCounters {
        &self.counters
    }

    pub fn controller(&self, rx_port: usize) -> ControllerState {
        self.controllers[rx_port]
    }

    pub fn rx_buffer(&self, port: usize) -> &PortBuffer<T> {
        &self.rx[port]
    }

    pub fn tx_buffer(&self, port: usize) -> &PortBuffer<T> {
        &self.tx[port]
    }

    /// Stores a completely received frame in RX memory. A full memory drops
    /// the frame with `BufferOverflow` and returns it.
    pub fn receive(&mut self, rx_port: usize, frame: T) -> Result<(), T> {
        self.counters.received += 1;
        match self.rx[rx_port].try_push(frame) {
            Ok(()) => {
                self.controllers[rx_port] = step_controller(
                    step_controller(self.controllers[rx_port], ControllerSignal::FrameDetected),
                    ControllerSignal::ReceptionComplete,
                );
                Ok(())
            }
            Err(frame) => {
                self.counters.drops.record(DropReason::BufferOverflow);
                Err(frame)
            }
        }
    }

    /// Appends an unmodified copy to a TX memory; `false` means the copy was
    /// dropped for `BufferOverflow`.
    pub fn enqueue_tx(&mut self, tx_port: usize, frame: T) -> bool {
        match self.tx[tx_port].try_push(frame) {
            Ok(()) => {
                self.counters.copies_enqueued += 1;
                true
            }
            Err(_) => {
                self.counters.drops.record(DropReason::BufferOverflow);
                false
            }
        }
    }

    /// Runs the filtering pipeline on the oldest frame of `rx_port` and fans
    /// it out through the multiplexing matrix in ascending port order.
    pub fn dispatch(&mut self, rx_port: usize) -> Option<Dispatch<T>> {
        let frame = self.rx[rx_port].pop_front()?;
        let (decision, _) = run_pipeline(frame.wire(), rx_port, &self.config);
        let mut enqueued = Vec::new();
        let mut overflowed = Vec::new();
        match &decision {
            ForwardDecision::Drop(reason) => self.counters.drops.record(*reason),
            ForwardDecision::Forward(ports) => {
                self.counters.forwarded += 1;
                for &port in ports {
                    if self.enqueue_tx(port, frame.clone()) {
                        enqueued.push(port);
                    } else {
                        overflowed.push(port);
                    }
                }
            }
        }
        self.controllers[rx_port] =
            if self.rx[rx_port].is_empty() { ControllerState::Idle } else { ControllerState::CheckLength };
        Some(Dispatch { rx_port, decision, frame, enqueued, overflowed })
    }

    pub fn tx_front(&self, tx_port: usize) -> Option<&T> {
        self.tx[tx_port].front()
    }

    /// Releases the head of a TX memory once its last byte has left.
    pub fn tx_pop(&mut self, tx_port: usize) -> Option<T> {
        self.tx[tx_port].pop_front()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{encode, Frame, FCS_LEN, MAX_PAYLOAD_LEN};
    use proptest::prelude::*;

    fn wire(vlid: u16, payload_len: usize) -> WireFrame {
        encode(&Frame {
            vlid,
            src_es: 1,
            udp_src_port: 1,
            udp_dst_port: 1,
            payload: vec![0xA5; payload_len],
            seq: 3,
        })
        .unwrap()
    }

    /// Wire frame whose Ethernet part is `eth_len` bytes with a correct FCS.
    fn sized_with_fcs(eth_len: usize) -> WireFrame {
        let mut b = vec![0x55; 7];
        b.push(0xD5);
        b.extend_from_slice(&[0x03, 0, 0, 0, 0, 5]);
        b.resize(8 + eth_len - FCS_LEN, 0x11);
        let fcs = crc32(&b[8..]);
        b.extend_from_slice(&fcs.to_be_bytes());
        WireFrame::from_bytes(b)
    }

    fn config(entries: &[(u16, &[usize])], ports: usize) -> SwitchConfig {
        let mut table = AddressTable::new(ports);
        for (v, p) in entries {
            table.insert(*v, p.iter().copied()).unwrap();
        }
        SwitchConfig::new(table)
    }

    #[test]
    fn detect_start_examples() {
        let mut s = vec![0x55; 7];
        s.push(0xD5);
        s.extend_from_slice(&[1, 2, 3]);
        assert_eq!(detect_frame_start(&s, 0), Some(8));

        let mut noisy = vec![0x00];
        noisy.extend_from_slice(&s);
        assert_eq!(detect_frame_start(&noisy, 0), Some(9));

        let mut short = vec![0x55; 6];
        short.extend_from_slice(&[0xD5, 1, 2, 3, 4]);
        assert_eq!(detect_frame_start(&short, 0), None);
        assert_eq!(detect_frame_start(&s, 100), None);
    }

    #[test]
    fn length_bounds() {
        assert!(check_length(&sized_with_fcs(1518)));
        assert!(check_length(&sized_with_fcs(64)));
        assert!(!check_length(&sized_with_fcs(1519)));
        assert!(!check_length(&sized_with_fcs(63)));
        assert!(!check_length(&WireFrame::from_bytes(vec![0x55; 4])));
    }

    #[test]
    fn fcs_checks() {
        let w = wire(5, 30);
        assert!(check_fcs(&w));
        let mut payload_flip = w.clone();
        payload_flip.flip_bit(8 + 45, 2);
        assert!(!check_fcs(&payload_flip));
        let mut fcs_flip = w.clone();
        fcs_flip.flip_bit(w.len() - 1, 7);
        assert!(!check_fcs(&fcs_flip));
    }

    #[test]
    fn lookup_examples() {
        let c = config(&[(5, &[1, 3])], 4);
        assert_eq!(c.table.lookup(5), Some(&BTreeSet::from([1, 3])));
        assert_eq!(c.table.lookup(7), None);
        assert_eq!(AddressTable::new(4).lookup(5), None);
    }

    #[test]
    fn table_rejects_bad_entries() {
        let mut t = AddressTable::new(4);
        assert_eq!(t.insert(1, [9]), Err(SwitchError::InvalidPort { port: 9, port_count: 4 }));
        assert_eq!(t.insert(1, []), Err(SwitchError::EmptyEntry { vlid: 1 }));
    }

    #[test]
    fn process_frame_examples() {
        let c = config(&[(5, &[1, 3])], 4);
        assert_eq!(process_frame(&wire(5, 20), 0, &c), ForwardDecision::Forward(BTreeSet::from([1, 3])));
        assert_eq!(process_frame(&wire(7, 20), 0, &c), ForwardDecision::Drop(DropReason::UnknownAddress));
        // Oversize and corrupt: length wins.
        let mut bad = sized_with_fcs(1519);
        bad.flip_bit(30, 0);
        assert_eq!(process_frame(&bad, 0, &c), ForwardDecision::Drop(DropReason::BadLength));

        let mut b = c.clone();
        b.broadcast = true;
        assert_eq!(
            process_frame(&wire(7, 20), 2, &b),
            ForwardDecision::Forward(BTreeSet::from([0, 1, 2, 3]))
        );
        b.broadcast_excludes_ingress = true;
        assert_eq!(process_frame(&wire(7, 20), 2, &b), ForwardDecision::Forward(BTreeSet::from([0, 1, 3])));
    }

    #[test]
    fn broken_delimiter_is_a_length_failure() {
        let c = config(&[(5, &[1])], 2);
        let mut w = wire(5, 20);
        w.flip_bit(7, 0);
        assert_eq!(process_frame(&w, 0, &c), ForwardDecision::Drop(DropReason::BadLength));
    }

    #[test]
    fn controller_transitions() {
        use ControllerSignal as S;
        use ControllerState::*;
        assert_eq!(step_controller(Idle, S::FrameDetected), Receiving);
        assert_eq!(step_controller(CheckFcs, S::FcsMismatch), Drop);
        assert_eq!(step_controller(Forward, S::Completion), Idle);
        assert_eq!(step_controller(Drop, S::Completion), Idle);
        assert_eq!(step_controller(Idle, S::FcsMatch), Idle);
    }

    #[test]
    fn pipeline_visits_stages_in_order() {
        use ControllerState::*;
        let c = config(&[(5, &[1])], 2);
        let (_, ok) = run_pipeline(&wire(5, 20), 0, &c);
        assert_eq!(ok, vec![Idle, Receiving, CheckLength, CheckFcs, Lookup, Forward, Idle]);
        let mut w = wire(5, 20);
        w.flip_bit(40, 1);
        let (_, bad) = run_pipeline(&w, 0, &c);
        assert_eq!(bad, vec![Idle, Receiving, CheckLength, CheckFcs, Drop, Idle]);
    }

    #[test]
    fn buffer_capacity_examples() {
        let max = wire(5, MAX_PAYLOAD_LEN);
        assert_eq!(max.len(), 1526);
        let mut b = PortBuffer::default();
        assert!(b.try_push(max.clone()).is_ok());
        assert!(b.try_push(max).is_err());
        assert_eq!(b.occupancy(), 1526);

        let min = wire(5, 1);
        let mut b = PortBuffer::default();
        b.try_push(min.clone()).unwrap();
        assert!(b.try_push(min).is_ok());
        assert_eq!(b.occupancy(), 144);
    }

    #[test]
    fn switch_fans_out_and_counts_overflow() {
        let mut sw: Switch = Switch::new(config(&[(5, &[1, 2])], 3));
        let big = wire(5, MAX_PAYLOAD_LEN);
        sw.receive(0, big.clone()).unwrap();
        let d = sw.dispatch(0).unwrap();
        assert_eq!(d.enqueued, vec![1, 2]);
        assert_eq!(sw.controller(0), ControllerState::Idle);
        sw.receive(0, big.clone()).unwrap();
        let d = sw.dispatch(0).unwrap();
        assert_eq!(d.overflowed, vec![1, 2]);
        assert_eq!(sw.counters().drops.buffer_overflow, 2);
        assert_eq!(sw.tx_pop(1).unwrap(), big);
        assert!(sw.tx_pop(1).is_none());
    }

    proptest! {
        #[test]
        fn fifo_order_and_capacity(sizes in prop::collection::vec(0usize..200, 1..60), pops in prop::collection::vec(any::<bool>(), 60)) {
            let mut buf = PortBuffer::default();
            let mut model = VecDeque::new();
            for (i, (&s, &pop)) in sizes.iter().zip(pops.iter()).enumerate() {
                let w = wire(i as u16, s);
                if buf.try_push(w.clone()).is_ok() {
                    model.push_back(w);
                }
                prop_assert!(buf.occupancy() <= PORT_BUFFER_CAPACITY);
                if pop {
                    prop_assert_eq!(buf.pop_front(), model.pop_front());
                }
            }
            while let Some(w) = buf.pop_front() {
                prop_assert_eq!(Some(w), model.pop_front());
            }
            prop_assert_eq!(buf.occupancy(), 0);
        }

        #[test]
        fn decision_is_pure(len in 0usize..=MAX_PAYLOAD_LEN, flip in any::<Option<(usize, u8)>>(), rx in 0usize..4) {
            let c = config(&[(5, &[1, 3])], 4);
            let mut w = wire(5, len);
            if let Some((pos, bit)) = flip {
                let n = w.len();
                w.flip_bit(pos % n, bit);
            }
            prop_assert_eq!(process_frame(&w, rx, &c), process_frame(&w, rx, &c));
        }
    }
}
