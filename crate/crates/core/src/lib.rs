// SPDX-License-Identifier: Apache-2.0

//! Cycle-level model of a switched network-on-chip derived from AFDX.
//!
//! End Systems encapsulate messages into Ethernet/IPv4/UDP frames and emit
//! them on virtual links under a bandwidth allocation gap. Store-and-forward
//! switches filter frames on length, FCS and destination VLID and copy the
//! survivors to their configured TX ports. Links move one byte per cycle.

pub mod check;
pub mod endsystem;
pub mod frame;
pub mod scenario;
pub mod simnet;
pub mod switch;

pub use endsystem::{EndSystem, EsError, IntegrityVerdict, VirtualLink};
pub use frame::{crc32, decode, encode, next_seq, Frame, FrameError, WireFrame};
pub use scenario::{parse_config, ConfigError, ScenarioConfig};
pub use simnet::{NetworkDesc, RunReport, SimError, Simulation, StatsReport, TopologyError};
pub use switch::{AddressTable, DropReason, ForwardDecision, Switch, SwitchConfig};
