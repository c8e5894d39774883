// SPDX-License-Identifier: Apache-2.0

//! Invariant suite evaluated over a finished run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::endsystem::{IntegrityVerdict, VirtualLink};
use crate::frame::WIRE_OVERHEAD;
use crate::simnet::{NodeId, RunReport, TraceEvent};
use crate::switch::PORT_BUFFER_CAPACITY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Law {
    Bag,
    Lmax,
    LinkCapacity,
    BufferCapacity,
    Causality,
    Conservation,
    InOrder,
    SkipAccounting,
}

impl Law {
    pub fn as_str(self) -> &'static str {
        match self {
            Law::Bag => "bag",
            Law::Lmax => "lmax",
            Law::LinkCapacity => "link_capacity",
            Law::BufferCapacity => "buffer_capacity",
            Law::Causality => "causality",
            Law::Conservation => "conservation",
            Law::InOrder => "in_order",
            Law::SkipAccounting => "skip_accounting",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub law: Law,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.law.as_str(), self.detail)
    }
}

#[derive(Debug, Clone, Default)]
pub struct CheckReport {
    pub violations: Vec<Violation>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, law: Law) -> usize {
        self.violations.iter().filter(|v| v.law == law).count()
    }

    fn fail(&mut self, law: Law, detail: String) {
        self.violations.push(Violation { law, detail });
    }
}

/// Runs every law over `report`. `vls` is the VL table the run used.
pub fn check_run(report: &RunReport, vls: &[VirtualLink]) -> CheckReport {
    let mut out = CheckReport::default();
    let vls: BTreeMap<u16, &VirtualLink> = vls.iter().map(|v| (v.vlid, v)).collect();

    check_emissions(report, &vls, &mut out);
    check_links(report, &mut out);
    check_buffers(report, &mut out);
    check_causality(report, &mut out);
    check_conservation(report, &mut out);
    check_sequences(report, &vls, &mut out);
    out
}

fn es_emissions<'a>(
    report: &'a RunReport,
    vls: &'a BTreeMap<u16, &VirtualLink>,
) -> impl Iterator<Item = (&'a VirtualLink, u64, usize, u64)> + 'a {
    report.trace.iter().filter_map(move |t| {
        if t.event != TraceEvent::TxStart {
            return None;
        }
        let vl = vls.get(&t.vlid?)?;
        (vl.src_es == t.node).then(|| (*vl, t.cycle, t.bytes.unwrap_or(0), t.frame.unwrap_or(0)))
    })
}

fn check_emissions(report: &RunReport, vls: &BTreeMap<u16, &VirtualLink>, out: &mut CheckReport) {
    let mut last: BTreeMap<u16, u64> = BTreeMap::new();
    for (vl, cycle, bytes, _) in es_emissions(report, vls) {
        if let Some(prev) = last.insert(vl.vlid, cycle) {
            if cycle - prev < vl.bag_cycles {
                out.fail(
                    Law::Bag,
                    format!("VL {} emitted at {prev} and {cycle}, BAG {}", vl.vlid, vl.bag_cycles),
                );
            }
        }
        if bytes > vl.lmax_bytes + WIRE_OVERHEAD {
            out.fail(Law::Lmax, format!("VL {} emitted {bytes} bytes at {cycle}", vl.vlid));
        }
    }
}

fn check_links(report: &RunReport, out: &mut CheckReport) {
    // Per transmitting port: (start, bytes) of the transmission in progress.
    let mut open: BTreeMap<(NodeId, usize), (u64, usize)> = BTreeMap::new();
    for t in &report.trace {
        let key = (t.node, t.port);
        match t.event {
            TraceEvent::TxStart => {
                if let Some((start, _)) = open.insert(key, (t.cycle, t.bytes.unwrap_or(0))) {
                    out.fail(
                        Law::LinkCapacity,
                        format!("port {key:?} started at {} while sending since {start}", t.cycle),
                    );
                }
            }
            TraceEvent::TxComplete => match open.remove(&key) {
                Some((start, bytes)) if t.cycle - start != bytes as u64 => out.fail(
                    Law::LinkCapacity,
                    format!("port {key:?}: {bytes} bytes took {} cycles", t.cycle - start),
                ),
                Some(_) => {}
                None => out.fail(Law::LinkCapacity, format!("port {key:?}: completion without start")),
            },
            _ => {}
        }
    }
    for l in &report.stats.per_link {
        for ch in [&l.a_to_b, &l.b_to_a] {
            if !(0.0..=1.0).contains(&ch.utilization) {
                out.fail(Law::LinkCapacity, format!("link {} utilization {}", l.link, ch.utilization));
            }
        }
    }
}

fn check_buffers(report: &RunReport, out: &mut CheckReport) {
    for (id, s) in &report.stats.per_switch {
        let peaks = s.rx_peak_occupancy.iter().chain(&s.tx_peak_occupancy);
        if let Some(p) = peaks.copied().find(|&p| p > PORT_BUFFER_CAPACITY) {
            out.fail(Law::BufferCapacity, format!("switch {id} held {p} bytes"));
        }
    }
}

fn check_causality(report: &RunReport, out: &mut CheckReport) {
    for d in &report.deliveries {
        if d.at < d.injected_at + d.bytes as u64 {
            out.fail(
                Law::Causality,
                format!("frame {} injected at {} delivered at {}", d.frame_id, d.injected_at, d.at),
            );
        }
    }
}

fn check_conservation(report: &RunReport, out: &mut CheckReport) {
    for (vlid, s) in &report.stats.per_vl {
        if s.copies_accounted() != s.copies_created {
            out.fail(
                Law::Conservation,
                format!("VL {vlid}: {} copies created, {} accounted", s.copies_created, s.copies_accounted()),
            );
        }
    }
}

/// For every (VL, destination) pair reached over a single path: frames
/// arrive in emission order, and the skip count equals the number of
/// emitted frames that went missing before the last arrival.
fn check_sequences(report: &RunReport, vls: &BTreeMap<u16, &VirtualLink>, out: &mut CheckReport) {
    let mut emitted: BTreeMap<u16, Vec<u64>> = BTreeMap::new();
    for (vl, _, _, frame) in es_emissions(report, vls) {
        emitted.entry(vl.vlid).or_default().push(frame);
    }
    let mut received: BTreeMap<(u16, NodeId), Vec<(u64, IntegrityVerdict)>> = BTreeMap::new();
    for d in report.deliveries.iter().filter(|d| d.subscribed) {
        received.entry((d.vlid, d.es)).or_default().push((d.frame_id, d.verdict));
    }
    for ((vlid, es), got) in received {
        let ids: Vec<u64> = got.iter().map(|g| g.0).collect();
        let unique: BTreeSet<u64> = ids.iter().copied().collect();
        if unique.len() != ids.len() {
            // Several paths lead to this receiver; ordering is not defined.
            continue;
        }
        if ids.windows(2).any(|w| w[0] > w[1]) {
            out.fail(Law::InOrder, format!("VL {vlid} reordered at end system {es}"));
            continue;
        }
        let last = *ids.last().expect("non-empty");
        let missing = emitted
            .get(&vlid)
            .map(|e| e.iter().filter(|&&f| f < last && !unique.contains(&f)).count() as u64)
            .unwrap_or(0);
        let skipped: u64 = got
            .iter()
            .map(|(_, v)| match v {
                IntegrityVerdict::Skip { gap } => *gap as u64,
                _ => 0,
            })
            .sum();
        let duplicates = got.iter().filter(|(_, v)| *v == IntegrityVerdict::Duplicate).count();
        if skipped != missing || duplicates != 0 {
            out.fail(
                Law::SkipAccounting,
                format!(
                    "VL {vlid} at end system {es}: {missing} frames missing, {skipped} skipped, {duplicates} duplicates"
                ),
            );
        }
    }
}
