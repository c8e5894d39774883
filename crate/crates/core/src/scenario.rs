// SPDX-License-Identifier: Apache-2.0

//! Scenario files: topology, virtual links, traffic, faults and run
//! parameters in one TOML document.
//!
//! ```toml
//! [run]
//! cycles = 10000
//! seed = 1
//!
//! [[topology.nodes]]
//! kind = "end_system"
//! id = 1
//!
//! [[topology.nodes]]
//! kind = "switch"
//! id = 10
//! ports = 2
//! table = [{ vlid = 5, ports = [1] }]
//!
//! [[topology.links]]
//! a = 1
//! a_port = 0
//! b = 10
//! b_port = 0
//!
//! [[virtual_links]]
//! vlid = 5
//! bag_cycles = 500
//! src = 1
//! dests = [2]
//!
//! [[traffic]]
//! kind = "periodic"
//! vlid = 5
//! period = 500
//! payload_size = 64
//! ```

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::endsystem::VirtualLink;
use crate::frame::{MAX_FRAME_LEN, MIN_FRAME_LEN};
use crate::simnet::{Fault, FaultAction, LinkSpec, NetworkDesc, NodeId, NodeSpec, RunReport, Simulation};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation { field: field.into(), message: message.into() }
}

fn default_link_latency() -> u64 {
    1
}

fn default_lmax() -> usize {
    MAX_FRAME_LEN
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub cycles: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
    #[serde(default = "default_link_latency")]
    pub link_latency: u64,
    /// Occupancy sampling interval in cycles; 0 disables sampling.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub sample_every: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VlSpec {
    pub vlid: u16,
    pub bag_cycles: u64,
    #[serde(default = "default_lmax")]
    pub lmax_bytes: usize,
    #[serde(default)]
    pub priority: u32,
    pub src: NodeId,
    pub dests: Vec<NodeId>,
}

impl VlSpec {
    pub fn to_virtual_link(&self) -> VirtualLink {
        VirtualLink {
            vlid: self.vlid,
            bag_cycles: self.bag_cycles,
            lmax_bytes: self.lmax_bytes,
            src_es: self.src,
            dest_es: self.dests.iter().copied().collect(),
            priority: self.priority,
        }
    }
}

/// Message sources. Every message enters at the source End System of its VL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrafficSpec {
    /// A single message.
    At {
        at: u64,
        vlid: u16,
        payload_size: usize,
        #[serde(default)]
        port: u16,
    },
    /// A message every `period` cycles from `start`, until `count` messages
    /// or cycle `stop` (exclusive), whichever comes first.
    Periodic {
        vlid: u16,
        #[serde(default)]
        start: u64,
        period: u64,
        payload_size: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        count: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stop: Option<u64>,
        #[serde(default)]
        port: u16,
    },
    /// Seeded random arrivals: gaps uniform in `[min_interval, max_interval]`,
    /// payload sizes uniform in `[payload_min, payload_max]`, random bytes.
    Random {
        vlid: u16,
        #[serde(default)]
        start: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stop: Option<u64>,
        min_interval: u64,
        max_interval: u64,
        payload_min: usize,
        payload_max: usize,
        #[serde(default)]
        port: u16,
    },
}

impl TrafficSpec {
    fn vlid(&self) -> u16 {
        match self {
            TrafficSpec::At { vlid, .. }
            | TrafficSpec::Periodic { vlid, .. }
            | TrafficSpec::Random { vlid, .. } => *vlid,
        }
    }
}

/// A concrete message injection produced by expanding the traffic section.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Injection {
    pub at: u64,
    pub es: NodeId,
    pub port: u16,
    pub vlid: u16,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub run: RunSection,
    pub topology: TopologySection,
    #[serde(default)]
    pub virtual_links: Vec<VlSpec>,
    #[serde(default)]
    pub traffic: Vec<TrafficSpec>,
    #[serde(default)]
    pub faults: Vec<Fault>,
}

/// Parses and validates a scenario document.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ScenarioConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    pub fn virtual_link_table(&self) -> Vec<VirtualLink> {
        self.virtual_links.iter().map(VlSpec::to_virtual_link).collect()
    }

    pub fn network(&self) -> NetworkDesc {
        NetworkDesc {
            nodes: self.topology.nodes.clone(),
            links: self.topology.links.clone(),
            vls: self.virtual_link_table(),
            link_latency: self.run.link_latency,
        }
    }

    /// Field-level checks first, then the full topology validation.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.run.link_latency == 0 {
            return Err(invalid("run.link_latency", "must be at least 1"));
        }

        let mut kinds: BTreeMap<NodeId, bool> = BTreeMap::new();
        for (i, n) in self.topology.nodes.iter().enumerate() {
            let is_es = matches!(n, NodeSpec::EndSystem { .. });
            if kinds.insert(n.id(), is_es).is_some() {
                return Err(invalid(format!("topology.nodes[{i}].id"), format!("duplicate id {}", n.id())));
            }
            if let NodeSpec::Switch { ports, table, .. } = n {
                if *ports == 0 {
                    return Err(invalid(format!("topology.nodes[{i}].ports"), "must be at least 1"));
                }
                for (j, e) in table.iter().enumerate() {
                    let field = format!("topology.nodes[{i}].table[{j}].ports");
                    if e.ports.is_empty() {
                        return Err(invalid(field, "must not be empty"));
                    }
                    if let Some(p) = e.ports.iter().find(|&&p| p >= *ports) {
                        return Err(invalid(field, format!("port {p} out of range for {ports} ports")));
                    }
                }
            }
        }
        for (i, l) in self.topology.links.iter().enumerate() {
            for (end, node) in [("a", l.a), ("b", l.b)] {
                if !kinds.contains_key(&node) {
                    return Err(invalid(
                        format!("topology.links[{i}].{end}"),
                        format!("unknown node {node}"),
                    ));
                }
            }
        }

        let mut vlids = BTreeSet::new();
        for (i, v) in self.virtual_links.iter().enumerate() {
            let field = |f: &str| format!("virtual_links[{i}].{f}");
            if !vlids.insert(v.vlid) {
                return Err(invalid(field("vlid"), format!("duplicate VL {}", v.vlid)));
            }
            if v.bag_cycles == 0 {
                return Err(invalid(field("bag_cycles"), "must be at least 1"));
            }
            if !(MIN_FRAME_LEN..=MAX_FRAME_LEN).contains(&v.lmax_bytes) {
                return Err(invalid(field("lmax_bytes"), "must lie in [64, 1518]"));
            }
            if kinds.get(&v.src) != Some(&true) {
                return Err(invalid(field("src"), format!("{} is not an end system in the topology", v.src)));
            }
            if v.dests.is_empty() {
                return Err(invalid(field("dests"), "must not be empty"));
            }
            if let Some(d) = v.dests.iter().find(|d| kinds.get(d) != Some(&true)) {
                return Err(invalid(field("dests"), format!("{d} is not an end system in the topology")));
            }
        }

        for (i, t) in self.traffic.iter().enumerate() {
            if !vlids.contains(&t.vlid()) {
                return Err(invalid(format!("traffic[{i}].vlid"), format!("unknown VL {}", t.vlid())));
            }
            match t {
                TrafficSpec::Periodic { period: 0, .. } => {
                    return Err(invalid(format!("traffic[{i}].period"), "must be at least 1"));
                }
                TrafficSpec::Random { min_interval, max_interval, payload_min, payload_max, .. } => {
                    if *min_interval == 0 || min_interval > max_interval {
                        return Err(invalid(
                            format!("traffic[{i}].min_interval"),
                            "need 1 <= min_interval <= max_interval",
                        ));
                    }
                    if payload_min > payload_max {
                        return Err(invalid(format!("traffic[{i}].payload_min"), "exceeds payload_max"));
                    }
                }
                _ => {}
            }
        }

        for (i, f) in self.faults.iter().enumerate() {
            if f.link >= self.topology.links.len() {
                return Err(invalid(format!("faults[{i}].link"), format!("no link {}", f.link)));
            }
            if let FaultAction::BitFlip { bit, .. } = f.action {
                if bit > 7 {
                    return Err(invalid(format!("faults[{i}].bit"), "must lie in 0..=7"));
                }
            }
        }

        Simulation::build(&self.network()).map_err(|e| invalid("topology", e.to_string()))?;
        Ok(())
    }

    /// Expands the traffic section into concrete injections before `horizon`,
    /// ordered by cycle then by generator position.
    pub fn injections(&self, horizon: u64, seed: u64) -> Vec<Injection> {
        let src: BTreeMap<u16, NodeId> = self.virtual_links.iter().map(|v| (v.vlid, v.src)).collect();
        let mut out = Vec::new();
        for (idx, t) in self.traffic.iter().enumerate() {
            let es = src[&t.vlid()];
            match *t {
                TrafficSpec::At { at, vlid, payload_size, port } => {
                    if at < horizon {
                        out.push(Injection { at, es, port, vlid, payload: pattern(0, payload_size) });
                    }
                }
                TrafficSpec::Periodic { vlid, start, period, payload_size, count, stop, port } => {
                    let stop = stop.unwrap_or(horizon).min(horizon);
                    let count = count.unwrap_or(u64::MAX);
                    let mut at = start;
                    let mut k = 0;
                    while at < stop && k < count {
                        out.push(Injection { at, es, port, vlid, payload: pattern(k, payload_size) });
                        at += period;
                        k += 1;
                    }
                }
                TrafficSpec::Random {
                    vlid,
                    start,
                    stop,
                    min_interval,
                    max_interval,
                    payload_min,
                    payload_max,
                    port,
                } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(
                        seed ^ (idx as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                    );
                    let stop = stop.unwrap_or(horizon).min(horizon);
                    let mut at = start;
                    while at < stop {
                        let size = rng.gen_range(payload_min..=payload_max);
                        let payload = (0..size).map(|_| rng.gen()).collect();
                        out.push(Injection { at, es, port, vlid, payload });
                        at += rng.gen_range(min_interval..=max_interval);
                    }
                }
            }
        }
        // Stable: equal cycles keep generator order.
        out.sort_by_key(|i| i.at);
        out
    }

    /// Builds the network, loads traffic and faults, and runs for `cycles`.
    pub fn simulate(&self, cycles: u64, seed: u64) -> Result<(Simulation, RunReport), ConfigError> {
        let mut sim = Simulation::build(&self.network()).map_err(|e| invalid("topology", e.to_string()))?;
        for (i, f) in self.faults.iter().enumerate() {
            sim.add_fault(f.clone()).map_err(|e| invalid(format!("faults[{i}]"), e.to_string()))?;
        }
        sim.sample_every(self.run.sample_every);
        for inj in self.injections(cycles, seed) {
            sim.inject_from_port(inj.at, inj.es, inj.port, inj.vlid, inj.payload)
                .map_err(|e| invalid("traffic", e.to_string()))?;
        }
        let report = sim.run(cycles);
        Ok((sim, report))
    }
}

fn pattern(k: u64, len: usize) -> Vec<u8> {
    (0..len).map(|i| (k as usize).wrapping_add(i) as u8).collect()
}
