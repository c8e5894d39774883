// SPDX-License-Identifier: Apache-2.0

//! Frame format of the network: an Ethernet II frame carrying IPv4/UDP,
//! preceded by preamble and SFD on the wire and followed by the FCS.
//!
//! Wire layout (all multi-byte fields big-endian):
//!
//! ```text
//! preamble (7) | SFD (1) | dst MAC (6) | src MAC (6) | EtherType (2)
//! | IPv4 header (20) | UDP header (8) | UDP payload | zero padding
//! | seq (1) | FCS (4)
//! ```
//!
//! The destination MAC embeds the 16-bit VLID behind the constant prefix
//! `03:00:00:00`, the source MAC embeds the End System id behind
//! `02:00:00:00`. The IPv4 total length and UDP length describe the
//! unpadded datagram, so padding never leaks into the decoded payload.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PREAMBLE_BYTE: u8 = 0x55;
pub const PREAMBLE_LEN: usize = 7;
pub const SFD: u8 = 0xD5;
/// Preamble plus SFD.
pub const WIRE_OVERHEAD: usize = PREAMBLE_LEN + 1;

pub const MIN_FRAME_LEN: usize = 64;
pub const MAX_FRAME_LEN: usize = 1518;
pub const MAX_WIRE_LEN: usize = MAX_FRAME_LEN + WIRE_OVERHEAD;

pub const ETH_HEADER_LEN: usize = 14;
pub const IPV4_HEADER_LEN: usize = 20;
pub const UDP_HEADER_LEN: usize = 8;
pub const SEQ_LEN: usize = 1;
pub const FCS_LEN: usize = 4;

/// Bytes of an Ethernet frame that are not application payload.
pub const FRAME_OVERHEAD: usize = ETH_HEADER_LEN + IPV4_HEADER_LEN + UDP_HEADER_LEN + SEQ_LEN + FCS_LEN;
/// Largest payload that still fits a 1518-byte Ethernet frame.
pub const MAX_PAYLOAD_LEN: usize = MAX_FRAME_LEN - FRAME_OVERHEAD;

pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const DST_MAC_PREFIX: [u8; 4] = [0x03, 0x00, 0x00, 0x00];
pub const SRC_MAC_PREFIX: [u8; 4] = [0x02, 0x00, 0x00, 0x00];

const IP_VERSION_IHL: u8 = 0x45;
const IP_FLAGS_DF: u16 = 0x4000;
const IP_TTL: u8 = 1;
const IP_PROTO_UDP: u8 = 17;
const IP_CHECKSUM_OFFSET: usize = 10;

// Offsets relative to the start of the Ethernet frame (first byte after SFD).
const DST_OFF: usize = 0;
const SRC_OFF: usize = 6;
const ETHERTYPE_OFF: usize = 12;
const IP_OFF: usize = ETH_HEADER_LEN;
const UDP_OFF: usize = IP_OFF + IPV4_HEADER_LEN;
const PAYLOAD_OFF: usize = UDP_OFF + UDP_HEADER_LEN;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("payload of {len} bytes exceeds the {max}-byte limit")]
    OversizeMessage { len: usize, max: usize },
    #[error("malformed frame: {0}")]
    MalformedFrame(&'static str),
}

/// Logical content of a frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub vlid: u16,
    pub src_es: u16,
    pub udp_src_port: u16,
    pub udp_dst_port: u16,
    pub payload: Vec<u8>,
    pub seq: u8,
}

impl Frame {
    /// Ethernet length (excluding preamble and SFD) this frame encodes to.
    pub fn encoded_len(&self) -> usize {
        encoded_len_for_payload(self.payload.len())
    }
}

/// Ethernet length produced for a payload of `payload_len` bytes, padding
/// included. May exceed [`MAX_FRAME_LEN`]; callers check that separately.
pub fn encoded_len_for_payload(payload_len: usize) -> usize {
    (payload_len + FRAME_OVERHEAD).max(MIN_FRAME_LEN)
}

/// Raw bytes as they travel on a link, preamble and SFD included.
///
/// Any byte sequence can be wrapped; [`encode`] is the only constructor that
/// guarantees a well-formed frame. Received frames may be damaged and the
/// switch checks them with the predicates in [`crate::switch`].
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct WireFrame(Vec<u8>);

impl WireFrame {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        WireFrame(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Length of the Ethernet frame, i.e. without preamble and SFD.
    pub fn ethernet_len(&self) -> usize {
        self.0.len().saturating_sub(WIRE_OVERHEAD)
    }

    /// The Ethernet frame (destination MAC through FCS).
    pub fn ethernet(&self) -> &[u8] {
        self.0.get(WIRE_OVERHEAD..).unwrap_or(&[])
    }

    /// Bytes protected by the FCS: destination MAC through the seq byte.
    pub fn covered(&self) -> Option<&[u8]> {
        let eth = self.ethernet();
        if eth.len() < FCS_LEN {
            return None;
        }
        Some(&eth[..eth.len() - FCS_LEN])
    }

    /// The trailing FCS field as transmitted.
    pub fn fcs(&self) -> Option<u32> {
        let eth = self.ethernet();
        if eth.len() < FCS_LEN {
            return None;
        }
        let t = &eth[eth.len() - FCS_LEN..];
        Some(u32::from_be_bytes([t[0], t[1], t[2], t[3]]))
    }

    /// VLID carried in the destination MAC, if the address has the VL prefix.
    pub fn vlid(&self) -> Option<u16> {
        let eth = self.ethernet();
        if eth.len() < DST_OFF + 6 || eth[DST_OFF..DST_OFF + 4] != DST_MAC_PREFIX {
            return None;
        }
        Some(u16::from_be_bytes([eth[DST_OFF + 4], eth[DST_OFF + 5]]))
    }

    /// Sequence byte (last byte before the FCS), without further validation.
    pub fn seq(&self) -> Option<u8> {
        let eth = self.ethernet();
        if eth.len() < FCS_LEN + SEQ_LEN {
            return None;
        }
        Some(eth[eth.len() - FCS_LEN - SEQ_LEN])
    }

    /// Inverts one bit. `byte` indexes the whole wire image.
    pub fn flip_bit(&mut self, byte: usize, bit: u8) {
        self.0[byte] ^= 1 << (bit & 7);
    }
}

impl fmt::Debug for WireFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "WireFrame({} bytes)", self.0.len())
    }
}

impl AsRef<[u8]> for WireFrame {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

const fn crc32_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            k += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
}

static CRC32_TABLE: [u32; 256] = crc32_table();

/// IEEE 802.3 CRC-32 (reflected 0x04C11DB7, init and final XOR all-ones).
pub fn crc32(data: &[u8]) -> u32 {
    !data.iter().fold(!0u32, |crc, &b| CRC32_TABLE[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8))
}

/// One's-complement sum of 16-bit big-endian words, complemented.
/// An odd trailing byte is padded with zero.
pub fn internet_checksum(data: &[u8]) -> u16 {
    let mut sum: u32 = 0;
    let mut chunks = data.chunks_exact(2);
    for w in &mut chunks {
        sum += u16::from_be_bytes([w[0], w[1]]) as u32;
    }
    if let [last] = chunks.remainder() {
        sum += (*last as u32) << 8;
    }
    while sum > 0xFFFF {
        sum = (sum & 0xFFFF) + (sum >> 16);
    }
    !(sum as u16)
}

/// Checksum of an IPv4 header with its checksum field taken as zero.
pub fn ip_header_checksum(header: &[u8; IPV4_HEADER_LEN]) -> u16 {
    let mut h = *header;
    h[IP_CHECKSUM_OFFSET] = 0;
    h[IP_CHECKSUM_OFFSET + 1] = 0;
    internet_checksum(&h)
}

/// Successor of a sequence number: counts up to 255 and wraps to 1, since 0
/// only ever marks the first frame after a reset.
pub fn next_seq(current: u8) -> u8 {
    match current {
        255 => 1,
        n => n + 1,
    }
}

fn mac(prefix: [u8; 4], id: u16) -> [u8; 6] {
    let [hi, lo] = id.to_be_bytes();
    [prefix[0], prefix[1], prefix[2], prefix[3], hi, lo]
}

fn ip_addr(id: u16) -> [u8; 4] {
    let [hi, lo] = id.to_be_bytes();
    [10, 0, hi, lo]
}

fn ipv4_header(frame: &Frame) -> [u8; IPV4_HEADER_LEN] {
    let total = (IPV4_HEADER_LEN + UDP_HEADER_LEN + frame.payload.len()) as u16;
    let mut h = [0u8; IPV4_HEADER_LEN];
    h[0] = IP_VERSION_IHL;
    h[2..4].copy_from_slice(&total.to_be_bytes());
    h[6..8].copy_from_slice(&IP_FLAGS_DF.to_be_bytes());
    h[8] = IP_TTL;
    h[9] = IP_PROTO_UDP;
    h[12..16].copy_from_slice(&ip_addr(frame.src_es));
    h[16..20].copy_from_slice(&ip_addr(frame.vlid));
    let csum = ip_header_checksum(&h);
    h[IP_CHECKSUM_OFFSET..IP_CHECKSUM_OFFSET + 2].copy_from_slice(&csum.to_be_bytes());
    h
}

/// Builds the wire image of `frame`, padding short payloads up to the 64-byte
/// Ethernet minimum and appending the FCS.
pub fn encode(frame: &Frame) -> Result<WireFrame, FrameError> {
    if frame.payload.len() > MAX_PAYLOAD_LEN {
        return Err(FrameError::OversizeMessage { len: frame.payload.len(), max: MAX_PAYLOAD_LEN });
    }
    let eth_len = frame.encoded_len();
    let mut out = Vec::with_capacity(eth_len + WIRE_OVERHEAD);
    out.extend_from_slice(&[PREAMBLE_BYTE; PREAMBLE_LEN]);
    out.push(SFD);
    out.extend_from_slice(&mac(DST_MAC_PREFIX, frame.vlid));
    out.extend_from_slice(&mac(SRC_MAC_PREFIX, frame.src_es));
    out.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());
    out.extend_from_slice(&ipv4_header(frame));
    out.extend_from_slice(&frame.udp_src_port.to_be_bytes());
    out.extend_from_slice(&frame.udp_dst_port.to_be_bytes());
    out.extend_from_slice(&((UDP_HEADER_LEN + frame.payload.len()) as u16).to_be_bytes());
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&frame.payload);
    out.resize(WIRE_OVERHEAD + eth_len - SEQ_LEN - FCS_LEN, 0);
    out.push(frame.seq);
    let fcs = crc32(&out[WIRE_OVERHEAD..]);
    out.extend_from_slice(&fcs.to_be_bytes());
    debug_assert_eq!(out.len(), eth_len + WIRE_OVERHEAD);
    Ok(WireFrame(out))
}

fn be16(b: &[u8], off: usize) -> u16 {
    u16::from_be_bytes([b[off], b[off + 1]])
}

/// Recovers the logical frame. The FCS is not checked here.
pub fn decode(wire: &WireFrame) -> Result<Frame, FrameError> {
    use FrameError::MalformedFrame;

    let bytes = wire.as_bytes();
    if bytes.len() < WIRE_OVERHEAD {
        return Err(MalformedFrame("truncated preamble"));
    }
    if bytes[..PREAMBLE_LEN].iter().any(|&b| b != PREAMBLE_BYTE) {
        return Err(MalformedFrame("bad preamble"));
    }
    if bytes[PREAMBLE_LEN] != SFD {
        return Err(MalformedFrame("bad start frame delimiter"));
    }
    let eth = wire.ethernet();
    if eth.len() < MIN_FRAME_LEN {
        return Err(MalformedFrame("frame shorter than 64 bytes"));
    }
    if eth[DST_OFF..DST_OFF + 4] != DST_MAC_PREFIX {
        return Err(MalformedFrame("destination address is not a virtual link"));
    }
    if eth[SRC_OFF..SRC_OFF + 4] != SRC_MAC_PREFIX {
        return Err(MalformedFrame("source address is not an end system"));
    }
    if be16(eth, ETHERTYPE_OFF) != ETHERTYPE_IPV4 {
        return Err(MalformedFrame("unexpected EtherType"));
    }
    if eth[IP_OFF] != IP_VERSION_IHL || eth[IP_OFF + 9] != IP_PROTO_UDP {
        return Err(MalformedFrame("not an IPv4/UDP datagram"));
    }
    let ip_total = be16(eth, IP_OFF + 2) as usize;
    let udp_len = be16(eth, UDP_OFF + 4) as usize;
    if ip_total < IPV4_HEADER_LEN + UDP_HEADER_LEN || udp_len != ip_total - IPV4_HEADER_LEN {
        return Err(MalformedFrame("inconsistent IPv4/UDP lengths"));
    }
    if ETH_HEADER_LEN + ip_total + SEQ_LEN + FCS_LEN > eth.len() {
        return Err(MalformedFrame("datagram overruns the frame"));
    }
    let payload_len = udp_len - UDP_HEADER_LEN;
    Ok(Frame {
        vlid: be16(eth, DST_OFF + 4),
        src_es: be16(eth, SRC_OFF + 4),
        udp_src_port: be16(eth, UDP_OFF),
        udp_dst_port: be16(eth, UDP_OFF + 2),
        payload: eth[PAYLOAD_OFF..PAYLOAD_OFF + payload_len].to_vec(),
        seq: eth[eth.len() - FCS_LEN - SEQ_LEN],
    })
}
