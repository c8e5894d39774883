// SPDX-License-Identifier: Apache-2.0

//! Discrete-event engine.
//!
//! Time is a single global cycle counter. A link moves one byte per cycle
//! in each direction; a frame of `L` wire bytes started at cycle `t`
//! occupies its channel until `t + L` and is fully received by the peer at
//! `t + L - 1 + link_latency`. Every node acts on a frame only after its
//! last byte arrived. Simultaneous events are processed in
//! `(cycle, kind rank, node, port, insertion ordinal)` order, receptions
//! before transmissions.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::io::{self, Write};

use log::{debug, trace};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::endsystem::{EndSystem, EsError, IntegrityCounters, IntegrityVerdict, VirtualLink};
use crate::frame::WireFrame;
use crate::switch::{
    AddressTable, Buffered, DropCounts, DropReason, ForwardDecision, Switch, SwitchConfig, SwitchError,
    DEFAULT_PROCESSING_DELAY,
};

pub type NodeId = u16;

/// Port every End System uses for its single link.
pub const ES_PORT: usize = 0;

fn default_processing_delay() -> u64 {
    DEFAULT_PROCESSING_DELAY
}

fn default_link_latency() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableEntry {
    pub vlid: u16,
    pub ports: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeSpec {
    EndSystem {
        id: NodeId,
    },
    Switch {
        id: NodeId,
        ports: usize,
        #[serde(default)]
        broadcast: bool,
        #[serde(default)]
        broadcast_excludes_ingress: bool,
        #[serde(default = "default_processing_delay")]
        processing_delay: u64,
        #[serde(default)]
        table: Vec<TableEntry>,
    },
}

impl NodeSpec {
    pub fn id(&self) -> NodeId {
        match self {
            NodeSpec::EndSystem { id } | NodeSpec::Switch { id, .. } => *id,
        }
    }
}

/// Full-duplex point-to-point link between `(a, a_port)` and `(b, b_port)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub a: NodeId,
    pub a_port: usize,
    pub b: NodeId,
    pub b_port: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkDesc {
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
    pub vls: Vec<VirtualLink>,
    /// Cycles between the last byte leaving a port and being held by the peer.
    pub link_latency: u64,
}

impl Default for NetworkDesc {
    fn default() -> Self {
        NetworkDesc {
            nodes: Vec::new(),
            links: Vec::new(),
            vls: Vec::new(),
            link_latency: default_link_latency(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("switch {0} must have at least one port")]
    NoPorts(NodeId),
    #[error("link {link} references unknown node {node}")]
    UnknownNode { link: usize, node: NodeId },
    #[error("link {link}: port {port} out of range on node {node}")]
    PortOutOfRange { link: usize, node: NodeId, port: usize },
    #[error("link {link}: port {port} of node {node} is already linked")]
    PortReused { link: usize, node: NodeId, port: usize },
    #[error("link {link} connects two end systems; only switch links are supported")]
    EndSystemPair { link: usize },
    #[error("link {link} loops back onto node {node}")]
    SelfLink { link: usize, node: NodeId },
    #[error("link_latency must be at least 1")]
    ZeroLatency,
    #[error("switch {node}: {source}")]
    Table { node: NodeId, source: SwitchError },
    #[error("duplicate virtual link {0}")]
    DuplicateVl(u16),
    #[error("VL {vlid}: {node} is not an end system")]
    NotEndSystem { vlid: u16, node: NodeId },
    #[error(transparent)]
    Vl(#[from] EsError),
    #[error("VL {vlid}: destination {dest} is unreachable through the address tables")]
    Unreachable { vlid: u16, dest: NodeId },
    #[error("VL {vlid}: forwarding loop through switch {switch}")]
    ForwardingLoop { vlid: u16, switch: NodeId },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("end system {es} does not source VL {vlid}")]
    UnknownVl { es: NodeId, vlid: u16 },
    #[error("cycle {at} is before the current clock {now}")]
    PastCycle { at: u64, now: u64 },
    #[error("no link with index {0}")]
    UnknownLink(usize),
}

/// Simulator bookkeeping that travels with a frame but is not on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameMeta {
    pub frame_id: u64,
    pub vlid: u16,
    pub seq: u8,
    pub src: NodeId,
    pub injected_at: u64,
}

#[derive(Debug, Clone)]
pub struct Tagged {
    pub wire: WireFrame,
    pub meta: FrameMeta,
}

impl Buffered for Tagged {
    fn wire(&self) -> &WireFrame {
        &self.wire
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum FaultAction {
    /// Inverts `bit` of Ethernet byte `byte` (0 is the first destination
    /// MAC byte).
    BitFlip { byte: usize, bit: u8 },
    /// The frame occupies the link but never arrives.
    Delete,
}

/// Armed until it hits the first matching frame that starts transmission
/// on `link` at or after cycle `at`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    pub at: u64,
    pub link: usize,
    /// Restrict to the direction leaving this node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vlid: Option<u16>,
    #[serde(flatten)]
    pub action: FaultAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceEvent {
    Inject,
    Reject,
    TxStart,
    TxComplete,
    RxComplete,
    Forward,
    Drop,
    Deliver,
    Misdeliver,
    Malformed,
    Lost,
    Fault,
    Sample,
}

impl TraceEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceEvent::Inject => "inject",
            TraceEvent::Reject => "reject",
            TraceEvent::TxStart => "tx_start",
            TraceEvent::TxComplete => "tx_complete",
            TraceEvent::RxComplete => "rx_complete",
            TraceEvent::Forward => "forward",
            TraceEvent::Drop => "drop",
            TraceEvent::Deliver => "deliver",
            TraceEvent::Misdeliver => "misdeliver",
            TraceEvent::Malformed => "malformed",
            TraceEvent::Lost => "lost",
            TraceEvent::Fault => "fault",
            TraceEvent::Sample => "sample",
        }
    }
}

/// One trace line. `frame` and `bytes` are kept in memory for the checker
/// and are not part of the CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub cycle: u64,
    pub node: NodeId,
    pub port: usize,
    pub event: TraceEvent,
    pub vlid: Option<u16>,
    pub seq: Option<u8>,
    pub drop_reason: Option<DropReason>,
    pub frame: Option<u64>,
    pub bytes: Option<usize>,
}

pub const TRACE_HEADER: &str = "cycle,node,port,event,vlid,seq,drop_reason";

impl TraceRecord {
    pub fn csv_line(&self) -> String {
        fn opt<T: ToString>(v: Option<T>) -> String {
            v.map(|v| v.to_string()).unwrap_or_default()
        }
        format!(
            "{},{},{},{},{},{},{}",
            self.cycle,
            self.node,
            self.port,
            self.event.as_str(),
            opt(self.vlid),
            opt(self.seq),
            self.drop_reason.map(DropReason::as_str).unwrap_or(""),
        )
    }
}

pub fn write_trace_csv<W: Write>(mut out: W, trace: &[TraceRecord]) -> io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in trace {
        writeln!(out, "{}", r.csv_line())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveryRecord {
    pub frame_id: u64,
    pub vlid: u16,
    pub seq: u8,
    pub es: NodeId,
    pub at: u64,
    pub injected_at: u64,
    pub bytes: usize,
    pub subscribed: bool,
    pub verdict: IntegrityVerdict,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: u64,
    pub min: Option<u64>,
    pub max: Option<u64>,
    pub mean: Option<f64>,
    #[serde(skip)]
    sum: u128,
}

impl LatencyStats {
    fn record(&mut self, cycles: u64) {
        self.count += 1;
        self.sum += cycles as u128;
        self.min = Some(self.min.map_or(cycles, |m| m.min(cycles)));
        self.max = Some(self.max.map_or(cycles, |m| m.max(cycles)));
        self.mean = Some(self.sum as f64 / self.count as f64);
    }
}

/// Per-VL counters. Every frame copy that exists ends up in exactly one of
/// `delivered`, `misdelivered`, `malformed`, `dropped`, `lost`,
/// `switch_forwarded` (consumed by a switch and replaced by its own copies)
/// or `in_flight`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VlStats {
    pub sent: u64,
    /// Messages refused at submission (encoded length above Lmax).
    pub rejected: u64,
    pub copies_created: u64,
    pub delivered: u64,
    /// Arrivals at End Systems that are not destinations of the VL.
    pub misdelivered: u64,
    pub malformed: u64,
    pub dropped: DropCounts,
    pub lost: u64,
    pub switch_forwarded: u64,
    pub in_flight: u64,
    pub latency: LatencyStats,
    pub integrity: IntegrityCounters,
}

impl VlStats {
    /// Copies accounted for; equals `copies_created` when the ledger balances.
    pub fn copies_accounted(&self) -> u64 {
        self.delivered
            + self.misdelivered
            + self.malformed
            + self.dropped.total()
            + self.lost
            + self.switch_forwarded
            + self.in_flight
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SwitchStats {
    pub received: u64,
    pub forwarded: u64,
    pub copies_enqueued: u64,
    pub drops: DropCounts,
    pub rx_peak_occupancy: Vec<usize>,
    pub tx_peak_occupancy: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub from: NodeId,
    pub from_port: usize,
    pub frames: u64,
    pub busy_cycles: u64,
    pub utilization: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkStats {
    pub link: usize,
    pub a_to_b: ChannelStats,
    pub b_to_a: ChannelStats,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancySample {
    pub cycle: u64,
    pub switch: NodeId,
    pub tx_occupancy: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub cycles: u64,
    pub per_vl: BTreeMap<u16, VlStats>,
    pub per_switch: BTreeMap<NodeId, SwitchStats>,
    pub per_link: Vec<LinkStats>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<OccupancySample>,
}

impl StatsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }

    pub fn total_drops(&self) -> DropCounts {
        let mut d = DropCounts::default();
        for s in self.per_switch.values() {
            d.add(&s.drops);
        }
        d
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub stats: StatsReport,
    pub trace: Vec<TraceRecord>,
    pub deliveries: Vec<DeliveryRecord>,
}

impl RunReport {
    pub fn trace_csv(&self) -> String {
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &self.trace).expect("write to memory");
        String::from_utf8(buf).expect("ascii trace")
    }
}

#[derive(Debug, Clone)]
enum EventKind {
    FrameFullyReceived(Tagged),
    TxComplete,
    FrameProcessed,
    MessageInjection { vlid: u16, udp_port: u16, payload: Vec<u8> },
    TxStart,
    StatsSample,
}

impl EventKind {
    fn rank(&self) -> u8 {
        match self {
            EventKind::FrameFullyReceived(_) => 0,
            EventKind::TxComplete => 1,
            EventKind::FrameProcessed => 2,
            EventKind::MessageInjection { .. } => 3,
            EventKind::TxStart => 4,
            EventKind::StatsSample => 5,
        }
    }
}

#[derive(Debug, Clone)]
struct Event {
    at: u64,
    node: NodeId,
    port: usize,
    seqno: u64,
    kind: EventKind,
}

impl Event {
    fn key(&self) -> (u64, u8, NodeId, usize, u64) {
        (self.at, self.kind.rank(), self.node, self.port, self.seqno)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

#[derive(Debug, Clone)]
struct Channel {
    link: usize,
    from: (NodeId, usize),
    to: (NodeId, usize),
    busy_until: u64,
    current_start: u64,
    busy_cycles: u64,
    frames: u64,
}

#[derive(Debug, Clone)]
enum Node {
    Es(EndSystem<FrameMeta>),
    Sw(Switch<Tagged>),
}

#[derive(Debug, Clone)]
pub struct Simulation {
    clock: u64,
    link_latency: u64,
    nodes: BTreeMap<NodeId, Node>,
    vls: BTreeMap<u16, VirtualLink>,
    links: Vec<LinkSpec>,
    channels: Vec<Channel>,
    /// Outgoing channel index for each linked `(node, port)`.
    egress: BTreeMap<(NodeId, usize), usize>,
    events: BinaryHeap<Reverse<Event>>,
    next_seqno: u64,
    next_frame_id: u64,
    wakeups: BTreeSet<(u64, NodeId, usize)>,
    faults: Vec<(Fault, bool)>,
    sample_every: Option<u64>,
    vl_stats: BTreeMap<u16, VlStats>,
    samples: Vec<OccupancySample>,
    trace: Vec<TraceRecord>,
    deliveries: Vec<DeliveryRecord>,
}

fn check_port(
    link: usize,
    node: NodeId,
    port: usize,
    kinds: &BTreeMap<NodeId, &NodeSpec>,
) -> Result<(), TopologyError> {
    let spec = kinds.get(&node).ok_or(TopologyError::UnknownNode { link, node })?;
    let limit = match spec {
        NodeSpec::EndSystem { .. } => 1,
        NodeSpec::Switch { ports, .. } => *ports,
    };
    if port >= limit {
        return Err(TopologyError::PortOutOfRange { link, node, port });
    }
    Ok(())
}

impl Simulation {
    /// Validates the description and constructs every node in its reset
    /// state with the clock at 0.
    pub fn build(desc: &NetworkDesc) -> Result<Self, TopologyError> {
        if desc.link_latency == 0 {
            return Err(TopologyError::ZeroLatency);
        }
        let mut kinds = BTreeMap::new();
        for n in &desc.nodes {
            if kinds.insert(n.id(), n).is_some() {
                return Err(TopologyError::DuplicateNode(n.id()));
            }
            if let NodeSpec::Switch { id, ports: 0, .. } = n {
                return Err(TopologyError::NoPorts(*id));
            }
        }

        let mut used = BTreeSet::new();
        let mut channels = Vec::new();
        let mut egress = BTreeMap::new();
        for (i, l) in desc.links.iter().enumerate() {
            check_port(i, l.a, l.a_port, &kinds)?;
            check_port(i, l.b, l.b_port, &kinds)?;
            if l.a == l.b {
                return Err(TopologyError::SelfLink { link: i, node: l.a });
            }
            let is_es = |n| matches!(kinds[&n], NodeSpec::EndSystem { .. });
            if is_es(l.a) && is_es(l.b) {
                return Err(TopologyError::EndSystemPair { link: i });
            }
            for (node, port) in [(l.a, l.a_port), (l.b, l.b_port)] {
                if !used.insert((node, port)) {
                    return Err(TopologyError::PortReused { link: i, node, port });
                }
            }
            for (from, to) in [((l.a, l.a_port), (l.b, l.b_port)), ((l.b, l.b_port), (l.a, l.a_port))] {
                egress.insert(from, channels.len());
                channels.push(Channel {
                    link: i,
                    from,
                    to,
                    busy_until: 0,
                    current_start: 0,
                    busy_cycles: 0,
                    frames: 0,
                });
            }
        }

        let mut vls = BTreeMap::new();
        for vl in &desc.vls {
            vl.validate()?;
            for node in std::iter::once(vl.src_es).chain(vl.dest_es.iter().copied()) {
                if !matches!(kinds.get(&node), Some(NodeSpec::EndSystem { .. })) {
                    return Err(TopologyError::NotEndSystem { vlid: vl.vlid, node });
                }
            }
            if vls.insert(vl.vlid, vl.clone()).is_some() {
                return Err(TopologyError::DuplicateVl(vl.vlid));
            }
        }

        let mut nodes = BTreeMap::new();
        for n in &desc.nodes {
            let node = match n {
                NodeSpec::EndSystem { id } => Node::Es(EndSystem::new(*id, desc.vls.iter().cloned())?),
                NodeSpec::Switch {
                    id,
                    ports,
                    broadcast,
                    broadcast_excludes_ingress,
                    processing_delay,
                    table,
                } => {
                    let mut t = AddressTable::new(*ports);
                    for e in table {
                        t.insert(e.vlid, e.ports.iter().copied())
                            .map_err(|source| TopologyError::Table { node: *id, source })?;
                    }
                    let mut cfg = SwitchConfig::new(t);
                    cfg.broadcast = *broadcast;
                    cfg.broadcast_excludes_ingress = *broadcast_excludes_ingress;
                    cfg.processing_delay = *processing_delay;
                    Node::Sw(Switch::new(cfg))
                }
            };
            nodes.insert(n.id(), node);
        }

        let sim = Simulation {
            clock: 0,
            link_latency: desc.link_latency,
            nodes,
            vl_stats: vls.keys().map(|&v| (v, VlStats::default())).collect(),
            vls,
            links: desc.links.clone(),
            channels,
            egress,
            events: BinaryHeap::new(),
            next_seqno: 0,
            next_frame_id: 0,
            wakeups: BTreeSet::new(),
            faults: Vec::new(),
            sample_every: None,
            samples: Vec::new(),
            trace: Vec::new(),
            deliveries: Vec::new(),
        };

        for vl in sim.vls.values() {
            let reached = sim.reachable(vl.vlid)?;
            if let Some(&dest) = vl.dest_es.iter().find(|d| !reached.contains(d)) {
                return Err(TopologyError::Unreachable { vlid: vl.vlid, dest });
            }
        }
        Ok(sim)
    }

    /// End Systems a frame of `vlid` reaches from its source when nothing is
    /// lost, following the static tables (or broadcast) switch by switch.
    pub fn reachable(&self, vlid: u16) -> Result<BTreeSet<NodeId>, TopologyError> {
        let mut reached = BTreeSet::new();
        let Some(vl) = self.vls.get(&vlid) else {
            return Ok(reached);
        };
        let mut done = BTreeSet::new();
        let mut on_path = BTreeSet::new();
        if let Some(&c) = self.egress.get(&(vl.src_es, ES_PORT)) {
            let to = self.channels[c].to;
            self.propagate(vlid, to, &mut reached, &mut done, &mut on_path)?;
        }
        Ok(reached)
    }

    fn propagate(
        &self,
        vlid: u16,
        (node, port): (NodeId, usize),
        reached: &mut BTreeSet<NodeId>,
        done: &mut BTreeSet<(NodeId, usize)>,
        on_path: &mut BTreeSet<(NodeId, usize)>,
    ) -> Result<(), TopologyError> {
        let sw = match &self.nodes[&node] {
            Node::Es(_) => {
                reached.insert(node);
                return Ok(());
            }
            Node::Sw(sw) => sw,
        };
        if on_path.contains(&(node, port)) {
            return Err(TopologyError::ForwardingLoop { vlid, switch: node });
        }
        if !done.insert((node, port)) {
            return Ok(());
        }
        on_path.insert((node, port));
        let cfg = sw.config();
        let out = if cfg.broadcast {
            cfg.broadcast_ports(port)
        } else {
            cfg.table.lookup(vlid).cloned().unwrap_or_default()
        };
        for p in out {
            if let Some(&c) = self.egress.get(&(node, p)) {
                let to = self.channels[c].to;
                self.propagate(vlid, to, reached, done, on_path)?;
            }
        }
        on_path.remove(&(node, port));
        Ok(())
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn virtual_link(&self, vlid: u16) -> Option<&VirtualLink> {
        self.vls.get(&vlid)
    }

    pub fn switch(&self, id: NodeId) -> Option<&Switch<Tagged>> {
        match self.nodes.get(&id) {
            Some(Node::Sw(s)) => Some(s),
            _ => None,
        }
    }

    pub fn end_system(&self, id: NodeId) -> Option<&EndSystem<FrameMeta>> {
        match self.nodes.get(&id) {
            Some(Node::Es(e)) => Some(e),
            _ => None,
        }
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn deliveries(&self) -> &[DeliveryRecord] {
        &self.deliveries
    }

    /// Emits an occupancy sample for every switch each `interval` cycles.
    pub fn sample_every(&mut self, interval: u64) {
        if interval > 0 && self.sample_every.is_none() {
            self.push(self.clock, 0, 0, EventKind::StatsSample);
        }
        self.sample_every = (interval > 0).then_some(interval);
    }

    pub fn add_fault(&mut self, fault: Fault) -> Result<(), SimError> {
        if fault.link >= self.links.len() {
            return Err(SimError::UnknownLink(fault.link));
        }
        self.faults.push((fault, true));
        Ok(())
    }

    /// Schedules a message for `vlid` at End System `es`, sent from UDP
    /// port 0.
    pub fn inject(&mut self, at: u64, es: NodeId, vlid: u16, payload: Vec<u8>) -> Result<(), SimError> {
        self.inject_from_port(at, es, 0, vlid, payload)
    }

    pub fn inject_from_port(
        &mut self,
        at: u64,
        es: NodeId,
        udp_port: u16,
        vlid: u16,
        payload: Vec<u8>,
    ) -> Result<(), SimError> {
        if at < self.clock {
            return Err(SimError::PastCycle { at, now: self.clock });
        }
        match self.nodes.get(&es) {
            Some(Node::Es(e)) if e.owns(vlid) => {}
            _ => return Err(SimError::UnknownVl { es, vlid }),
        }
        self.push(at, es, ES_PORT, EventKind::MessageInjection { vlid, udp_port, payload });
        Ok(())
    }

    /// Processes every event strictly before cycle `until`, then sets the
    /// clock to `until`.
    pub fn run(&mut self, until: u64) -> RunReport {
        while let Some(Reverse(ev)) = self.events.peek() {
            if ev.at >= until {
                break;
            }
            let Reverse(ev) = self.events.pop().expect("peeked");
            self.clock = ev.at;
            self.handle(ev);
        }
        self.clock = self.clock.max(until);
        RunReport { stats: self.stats(), trace: self.trace.clone(), deliveries: self.deliveries.clone() }
    }

    fn push(&mut self, at: u64, node: NodeId, port: usize, kind: EventKind) {
        let seqno = self.next_seqno;
        self.next_seqno += 1;
        self.events.push(Reverse(Event { at, node, port, seqno, kind }));
    }

    fn wake(&mut self, node: NodeId, port: usize, at: u64) {
        if self.wakeups.insert((at, node, port)) {
            self.push(at, node, port, EventKind::TxStart);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn log(
        &mut self,
        node: NodeId,
        port: usize,
        event: TraceEvent,
        meta: Option<&FrameMeta>,
        drop_reason: Option<DropReason>,
        bytes: Option<usize>,
    ) {
        self.trace.push(TraceRecord {
            cycle: self.clock,
            node,
            port,
            event,
            vlid: meta.map(|m| m.vlid),
            seq: meta.map(|m| m.seq),
            drop_reason,
            frame: meta.map(|m| m.frame_id),
            bytes,
        });
    }

    fn vl_stats(&mut self, vlid: u16) -> &mut VlStats {
        self.vl_stats.entry(vlid).or_default()
    }

    fn handle(&mut self, ev: Event) {
        trace!("cycle {} node {} port {} {:?}", ev.at, ev.node, ev.port, ev.kind.rank());
        match ev.kind {
            EventKind::MessageInjection { vlid, udp_port, payload } => {
                self.on_injection(ev.node, vlid, udp_port, payload)
            }
            EventKind::TxStart => {
                self.wakeups.remove(&(ev.at, ev.node, ev.port));
                self.on_tx_start(ev.node, ev.port)
            }
            EventKind::TxComplete => self.on_tx_complete(ev.node, ev.port),
            EventKind::FrameFullyReceived(frame) => self.on_received(ev.node, ev.port, frame),
            EventKind::FrameProcessed => self.on_processed(ev.node, ev.port),
            EventKind::StatsSample => self.on_sample(),
        }
    }

    fn on_injection(&mut self, es: NodeId, vlid: u16, udp_port: u16, payload: Vec<u8>) {
        let frame_id = self.next_frame_id;
        self.next_frame_id += 1;
        let now = self.clock;
        let Some(Node::Es(e)) = self.nodes.get_mut(&es) else {
            return;
        };
        let mut meta = FrameMeta { frame_id, vlid, seq: 0, src: es, injected_at: now };
        match e.submit_tagged(udp_port, payload, vlid, meta) {
            Ok(seq) => {
                meta.seq = seq;
                self.log(es, ES_PORT, TraceEvent::Inject, Some(&meta), None, None);
                self.wake(es, ES_PORT, now);
            }
            Err(err) => {
                debug!("end system {es} rejected message on VL {vlid}: {err}");
                self.vl_stats(vlid).rejected += 1;
                self.log(es, ES_PORT, TraceEvent::Reject, Some(&meta), None, None);
            }
        }
    }

    fn on_tx_start(&mut self, node: NodeId, port: usize) {
        let now = self.clock;
        let channel = self.egress.get(&(node, port)).copied();
        if let Some(c) = channel {
            if self.channels[c].busy_until > now {
                return;
            }
        }
        match self.nodes.get_mut(&node) {
            Some(Node::Es(es)) => {
                let Some(c) = channel else { return };
                match es.schedule(now) {
                    Some(em) => {
                        let mut meta = em.tag;
                        meta.seq = em.seq;
                        let st = self.vl_stats(meta.vlid);
                        st.sent += 1;
                        st.copies_created += 1;
                        self.transmit(c, Tagged { wire: em.wire, meta });
                    }
                    None => {
                        if let Some(t) = es.next_ready(now).filter(|&t| t > now) {
                            self.wake(node, port, t);
                        }
                    }
                }
            }
            Some(Node::Sw(sw)) => match channel {
                Some(c) => {
                    if let Some(frame) = sw.tx_front(port).cloned() {
                        self.transmit(c, frame);
                    }
                }
                None => {
                    // Nothing is attached: copies leave into an open port.
                    let mut gone = Vec::new();
                    while let Some(f) = sw.tx_pop(port) {
                        gone.push(f);
                    }
                    for f in gone {
                        self.vl_stats(f.meta.vlid).lost += 1;
                        self.log(node, port, TraceEvent::Lost, Some(&f.meta), None, Some(f.wire.len()));
                    }
                }
            },
            None => {}
        }
    }

    fn transmit(&mut self, c: usize, mut frame: Tagged) {
        let now = self.clock;
        let len = frame.wire.len();
        let (link, from, to) = {
            let ch = &mut self.channels[c];
            ch.busy_until = now + len as u64;
            ch.current_start = now;
            ch.frames += 1;
            (ch.link, ch.from, ch.to)
        };
        self.log(from.0, from.1, TraceEvent::TxStart, Some(&frame.meta), None, Some(len));
        self.push(now + len as u64, from.0, from.1, EventKind::TxComplete);

        let eth_len = frame.wire.ethernet_len();
        let hit = self.faults.iter().position(|(f, armed)| {
            *armed
                && f.at <= now
                && f.link == link
                && f.from.is_none_or(|n| n == from.0)
                && f.vlid.is_none_or(|v| v == frame.meta.vlid)
                && match f.action {
                    FaultAction::BitFlip { byte, .. } => byte < eth_len,
                    FaultAction::Delete => true,
                }
        });
        if let Some(i) = hit {
            self.faults[i].1 = false;
            let action = self.faults[i].0.action;
            self.log(from.0, from.1, TraceEvent::Fault, Some(&frame.meta), None, Some(len));
            match action {
                FaultAction::BitFlip { byte, bit } => {
                    frame.wire.flip_bit(crate::frame::WIRE_OVERHEAD + byte, bit)
                }
                FaultAction::Delete => {
                    self.vl_stats(frame.meta.vlid).lost += 1;
                    self.log(from.0, from.1, TraceEvent::Lost, Some(&frame.meta), None, Some(len));
                    return;
                }
            }
        }
        let arrival = now + len as u64 - 1 + self.link_latency;
        self.push(arrival, to.0, to.1, EventKind::FrameFullyReceived(frame));
    }

    fn on_tx_complete(&mut self, node: NodeId, port: usize) {
        let now = self.clock;
        if let Some(&c) = self.egress.get(&(node, port)) {
            let ch = &mut self.channels[c];
            ch.busy_cycles += now - ch.current_start;
        }
        if let Some(Node::Sw(sw)) = self.nodes.get_mut(&node) {
            sw.tx_pop(port);
        }
        self.log(node, port, TraceEvent::TxComplete, None, None, None);
        self.wake(node, port, now);
    }

    fn on_received(&mut self, node: NodeId, port: usize, frame: Tagged) {
        let now = self.clock;
        let len = frame.wire.len();
        let meta = frame.meta;
        match self.nodes.get_mut(&node) {
            Some(Node::Es(es)) => match es.receive_frame(&frame.wire, now) {
                Ok(d) => {
                    let subscribed = self.vls.get(&meta.vlid).is_some_and(|vl| vl.dest_es.contains(&node));
                    self.deliveries.push(DeliveryRecord {
                        frame_id: meta.frame_id,
                        vlid: meta.vlid,
                        seq: d.frame.seq,
                        es: node,
                        at: now,
                        injected_at: meta.injected_at,
                        bytes: len,
                        subscribed,
                        verdict: d.verdict,
                    });
                    let st = self.vl_stats(meta.vlid);
                    if subscribed {
                        st.delivered += 1;
                        st.latency.record(now - meta.injected_at);
                        match d.verdict {
                            IntegrityVerdict::InOrder => st.integrity.in_order += 1,
                            IntegrityVerdict::Skip { gap } => st.integrity.skipped += gap as u64,
                            IntegrityVerdict::Duplicate => st.integrity.duplicates += 1,
                            IntegrityVerdict::Reset => st.integrity.resets += 1,
                        }
                        self.log(node, port, TraceEvent::Deliver, Some(&meta), None, Some(len));
                    } else {
                        st.misdelivered += 1;
                        self.log(node, port, TraceEvent::Misdeliver, Some(&meta), None, Some(len));
                    }
                }
                Err(err) => {
                    debug!("end system {node} could not decode frame {}: {err}", meta.frame_id);
                    self.vl_stats(meta.vlid).malformed += 1;
                    self.log(node, port, TraceEvent::Malformed, Some(&meta), None, Some(len));
                }
            },
            Some(Node::Sw(sw)) => {
                let delay = sw.config().processing_delay;
                let accepted = sw.receive(port, frame).is_ok();
                self.log(node, port, TraceEvent::RxComplete, Some(&meta), None, Some(len));
                if accepted {
                    self.push(now + delay, node, port, EventKind::FrameProcessed);
                } else {
                    self.vl_stats(meta.vlid).dropped.record(DropReason::BufferOverflow);
                    let r = Some(DropReason::BufferOverflow);
                    self.log(node, port, TraceEvent::Drop, Some(&meta), r, Some(len));
                }
            }
            None => {}
        }
    }

    fn on_processed(&mut self, node: NodeId, port: usize) {
        let now = self.clock;
        let Some(Node::Sw(sw)) = self.nodes.get_mut(&node) else {
            return;
        };
        let Some(d) = sw.dispatch(port) else {
            return;
        };
        let meta = d.frame.meta;
        let len = d.frame.wire.len();
        match d.decision {
            ForwardDecision::Drop(reason) => {
                self.vl_stats(meta.vlid).dropped.record(reason);
                self.log(node, port, TraceEvent::Drop, Some(&meta), Some(reason), Some(len));
            }
            ForwardDecision::Forward(ports) => {
                let st = self.vl_stats(meta.vlid);
                st.switch_forwarded += 1;
                st.copies_created += ports.len() as u64;
                for p in d.enqueued {
                    self.log(node, p, TraceEvent::Forward, Some(&meta), None, Some(len));
                    self.wake(node, p, now);
                }
                for p in d.overflowed {
                    self.vl_stats(meta.vlid).dropped.record(DropReason::BufferOverflow);
                    let r = Some(DropReason::BufferOverflow);
                    self.log(node, p, TraceEvent::Drop, Some(&meta), r, Some(len));
                }
            }
        }
    }

    fn on_sample(&mut self) {
        let now = self.clock;
        let samples: Vec<_> = self
            .nodes
            .iter()
            .filter_map(|(&id, n)| match n {
                Node::Sw(sw) => Some(OccupancySample {
                    cycle: now,
                    switch: id,
                    tx_occupancy: (0..sw.port_count()).map(|p| sw.tx_buffer(p).occupancy()).collect(),
                }),
                Node::Es(_) => None,
            })
            .collect();
        for s in &samples {
            self.log(s.switch, 0, TraceEvent::Sample, None, None, None);
        }
        self.samples.extend(samples);
        if let Some(every) = self.sample_every {
            self.push(now + every, 0, 0, EventKind::StatsSample);
        }
    }

    /// Copies per VL that exist but have not reached a terminal outcome:
    /// waiting in switch memories or travelling on a link.
    fn in_flight(&self) -> BTreeMap<u16, u64> {
        let mut counts: BTreeMap<u16, u64> = BTreeMap::new();
        for Reverse(ev) in self.events.iter() {
            if let EventKind::FrameFullyReceived(f) = &ev.kind {
                *counts.entry(f.meta.vlid).or_default() += 1;
            }
        }
        for (&id, n) in &self.nodes {
            let Node::Sw(sw) = n else { continue };
            for p in 0..sw.port_count() {
                for f in sw.rx_buffer(p).iter() {
                    *counts.entry(f.meta.vlid).or_default() += 1;
                }
                // The head of a transmitting TX memory is already counted as
                // the in-flight event (or as lost).
                let transmitting =
                    self.egress.get(&(id, p)).is_some_and(|&c| self.channels[c].busy_until > self.clock);
                for f in sw.tx_buffer(p).iter().skip(transmitting as usize) {
                    *counts.entry(f.meta.vlid).or_default() += 1;
                }
            }
        }
        counts
    }

    /// Cumulative statistics at the current clock.
    pub fn stats(&self) -> StatsReport {
        let now = self.clock;
        let mut per_vl = self.vl_stats.clone();
        for (vlid, n) in self.in_flight() {
            per_vl.entry(vlid).or_default().in_flight = n;
        }
        let per_switch = self
            .nodes
            .iter()
            .filter_map(|(&id, n)| match n {
                Node::Sw(sw) => {
                    let c = sw.counters();
                    Some((
                        id,
                        SwitchStats {
                            received: c.received,
                            forwarded: c.forwarded,
                            copies_enqueued: c.copies_enqueued,
                            drops: c.drops,
                            rx_peak_occupancy: (0..sw.port_count()).map(|p| sw.rx_buffer(p).peak()).collect(),
                            tx_peak_occupancy: (0..sw.port_count()).map(|p| sw.tx_buffer(p).peak()).collect(),
                        },
                    ))
                }
                Node::Es(_) => None,
            })
            .collect();
        let channel_stats = |ch: &Channel| {
            let ongoing = if ch.busy_until > now { now.saturating_sub(ch.current_start) } else { 0 };
            let busy = ch.busy_cycles + ongoing;
            ChannelStats {
                from: ch.from.0,
                from_port: ch.from.1,
                frames: ch.frames,
                busy_cycles: busy,
                utilization: if now == 0 { 0.0 } else { busy as f64 / now as f64 },
            }
        };
        let per_link = self
            .channels
            .chunks(2)
            .map(|pair| LinkStats {
                link: pair[0].link,
                a_to_b: channel_stats(&pair[0]),
                b_to_a: channel_stats(&pair[1]),
            })
            .collect();
        StatsReport { cycles: now, per_vl, per_switch, per_link, samples: self.samples.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vl(vlid: u16, src: NodeId, dests: &[NodeId], bag: u64) -> VirtualLink {
        VirtualLink {
            vlid,
            bag_cycles: bag,
            lmax_bytes: 1518,
            src_es: src,
            dest_es: dests.iter().copied().collect(),
            priority: 0,
        }
    }

    /// ES 1 on port 0, ES 2 on port 1 of switch 10.
    fn two_es(delay: u64, bag: u64) -> NetworkDesc {
        NetworkDesc {
            nodes: vec![
                NodeSpec::EndSystem { id: 1 },
                NodeSpec::EndSystem { id: 2 },
                NodeSpec::Switch {
                    id: 10,
                    ports: 4,
                    broadcast: false,
                    broadcast_excludes_ingress: false,
                    processing_delay: delay,
                    table: vec![TableEntry { vlid: 5, ports: vec![1] }],
                },
            ],
            links: vec![
                LinkSpec { a: 1, a_port: 0, b: 10, b_port: 0 },
                LinkSpec { a: 2, a_port: 0, b: 10, b_port: 1 },
            ],
            vls: vec![vl(5, 1, &[2], bag)],
            link_latency: 1,
        }
    }

    #[test]
    fn simulation_is_send() {
        fn assert_send<T: Send>() {}
        assert_send::<Simulation>();
        assert_send::<RunReport>();
    }

    #[test]
    fn builds_minimal_network() {
        let sim = Simulation::build(&two_es(4, 10)).unwrap();
        assert_eq!(sim.clock(), 0);
        assert_eq!(sim.reachable(5).unwrap(), BTreeSet::from([2]));
    }

    #[test]
    fn rejects_out_of_range_port() {
        let mut d = two_es(4, 10);
        d.links[1].b_port = 9;
        assert_eq!(
            Simulation::build(&d).unwrap_err(),
            TopologyError::PortOutOfRange { link: 1, node: 10, port: 9 }
        );
    }

    #[test]
    fn rejects_unreachable_destination() {
        let mut d = two_es(4, 10);
        d.nodes.push(NodeSpec::EndSystem { id: 3 });
        d.links.push(LinkSpec { a: 3, a_port: 0, b: 10, b_port: 2 });
        d.vls[0].dest_es.insert(3);
        assert_eq!(Simulation::build(&d).unwrap_err(), TopologyError::Unreachable { vlid: 5, dest: 3 });
    }

    #[test]
    fn rejects_structural_errors() {
        let mut d = two_es(4, 10);
        d.links.push(LinkSpec { a: 1, a_port: 0, b: 10, b_port: 2 });
        assert!(matches!(Simulation::build(&d), Err(TopologyError::PortReused { link: 2, .. })));

        let mut d = two_es(4, 10);
        d.nodes.push(NodeSpec::EndSystem { id: 1 });
        assert_eq!(Simulation::build(&d).unwrap_err(), TopologyError::DuplicateNode(1));

        let mut d = two_es(4, 10);
        d.links[0].a = 99;
        assert_eq!(Simulation::build(&d).unwrap_err(), TopologyError::UnknownNode { link: 0, node: 99 });

        let mut d = two_es(4, 10);
        d.vls[0].dest_es.insert(10);
        assert_eq!(Simulation::build(&d).unwrap_err(), TopologyError::NotEndSystem { vlid: 5, node: 10 });
    }

    #[test]
    fn rejects_forwarding_loop() {
        let d = NetworkDesc {
            nodes: vec![
                NodeSpec::EndSystem { id: 1 },
                NodeSpec::EndSystem { id: 2 },
                NodeSpec::Switch {
                    id: 10,
                    ports: 2,
                    broadcast: false,
                    broadcast_excludes_ingress: false,
                    processing_delay: 4,
                    table: vec![TableEntry { vlid: 5, ports: vec![1] }],
                },
                NodeSpec::Switch {
                    id: 11,
                    ports: 2,
                    broadcast: true,
                    broadcast_excludes_ingress: false,
                    processing_delay: 4,
                    table: vec![],
                },
            ],
            links: vec![
                LinkSpec { a: 1, a_port: 0, b: 10, b_port: 0 },
                LinkSpec { a: 10, a_port: 1, b: 11, b_port: 0 },
                LinkSpec { a: 2, a_port: 0, b: 11, b_port: 1 },
            ],
            vls: vec![vl(5, 1, &[2], 10)],
            link_latency: 1,
        };
        // Switch 11 broadcasts back out of its ingress port to 10, which
        // sends the frame to 11 again.
        assert!(matches!(Simulation::build(&d), Err(TopologyError::ForwardingLoop { vlid: 5, .. })));
        let mut no_loop = d;
        no_loop.nodes[3] = NodeSpec::Switch {
            id: 11,
            ports: 2,
            broadcast: true,
            broadcast_excludes_ingress: true,
            processing_delay: 4,
            table: vec![],
        };
        assert!(Simulation::build(&no_loop).is_ok());
    }

    #[test]
    fn inject_errors() {
        let mut sim = Simulation::build(&two_es(4, 10)).unwrap();
        assert!(sim.inject(0, 1, 5, vec![0; 10]).is_ok());
        assert_eq!(sim.inject(0, 2, 5, vec![0; 10]), Err(SimError::UnknownVl { es: 2, vlid: 5 }));
        sim.run(10);
        assert_eq!(sim.inject(5, 1, 5, vec![0; 10]), Err(SimError::PastCycle { at: 5, now: 10 }));
    }

    #[test]
    fn single_frame_latency() {
        let mut sim = Simulation::build(&two_es(4, 10)).unwrap();
        sim.inject(3, 1, 5, vec![7; 17]).unwrap();
        let r = sim.run(1000);
        assert_eq!(r.deliveries.len(), 1);
        // 72 wire bytes, two hops, 4 processing cycles.
        assert_eq!(r.deliveries[0].at, 3 + 2 * 72 + 4);
        assert_eq!(r.stats.per_vl[&5].delivered, 1);
        assert_eq!(r.stats.per_vl[&5].copies_accounted(), r.stats.per_vl[&5].copies_created);
    }

    #[test]
    fn vacuous_run() {
        let mut sim = Simulation::build(&two_es(4, 10)).unwrap();
        let r = sim.run(10_000);
        let s = &r.stats.per_vl[&5];
        assert_eq!((s.sent, s.delivered, s.dropped.total()), (0, 0, 0));
        assert!(r.trace.is_empty());
        assert!(r.stats.per_link.iter().all(|l| l.a_to_b.utilization == 0.0));
    }

    #[test]
    fn back_to_back_respects_bag() {
        let mut sim = Simulation::build(&two_es(4, 500)).unwrap();
        sim.inject(0, 1, 5, vec![0; 10]).unwrap();
        sim.inject(0, 1, 5, vec![0; 10]).unwrap();
        let r = sim.run(5000);
        let starts: Vec<u64> = r
            .trace
            .iter()
            .filter(|t| t.event == TraceEvent::TxStart && t.node == 1)
            .map(|t| t.cycle)
            .collect();
        assert_eq!(starts, vec![0, 500]);
        assert_eq!(r.stats.per_vl[&5].delivered, 2);
    }

    #[test]
    fn in_flight_counts_mid_run() {
        let mut sim = Simulation::build(&two_es(4, 10)).unwrap();
        sim.inject(0, 1, 5, vec![0; 10]).unwrap();
        for until in [1, 50, 72, 73, 76, 77, 100, 149, 150, 200] {
            let s = sim.run(until).stats;
            let v = &s.per_vl[&5];
            assert_eq!(v.copies_accounted(), v.copies_created, "at {until}");
            assert!(s.per_link.iter().all(|l| l.a_to_b.utilization <= 1.0));
        }
    }

    #[test]
    fn delete_fault_loses_frame() {
        let mut sim = Simulation::build(&two_es(4, 100)).unwrap();
        for i in 0..3 {
            sim.inject(i * 100, 1, 5, vec![0; 10]).unwrap();
        }
        sim.add_fault(Fault { at: 50, link: 0, from: None, vlid: None, action: FaultAction::Delete })
            .unwrap();
        assert_eq!(
            sim.add_fault(Fault { at: 0, link: 7, from: None, vlid: None, action: FaultAction::Delete }),
            Err(SimError::UnknownLink(7))
        );
        let r = sim.run(2000);
        let s = &r.stats.per_vl[&5];
        assert_eq!((s.delivered, s.lost, s.integrity.skipped), (2, 1, 1));
    }

    #[test]
    fn unlinked_port_copies_are_lost() {
        let mut d = two_es(4, 10);
        if let NodeSpec::Switch { table, .. } = &mut d.nodes[2] {
            table[0].ports = vec![1, 3];
        }
        let mut sim = Simulation::build(&d).unwrap();
        sim.inject(0, 1, 5, vec![0; 10]).unwrap();
        let s = sim.run(1000).stats;
        let v = &s.per_vl[&5];
        assert_eq!((v.delivered, v.lost, v.copies_created), (1, 1, 3));
        assert_eq!(v.copies_accounted(), v.copies_created);
    }

    #[test]
    fn samples_are_emitted() {
        let mut sim = Simulation::build(&two_es(4, 10)).unwrap();
        sim.sample_every(100);
        sim.inject(0, 1, 5, vec![0; 10]).unwrap();
        let s = sim.run(301).stats;
        assert_eq!(s.samples.iter().map(|x| x.cycle).collect::<Vec<_>>(), vec![0, 100, 200, 300]);
        // Frame is waiting in the TX memory of port 1 at cycle 100.
        assert_eq!(s.samples[1].tx_occupancy[1], 72);
    }
}
