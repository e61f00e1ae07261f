//! Packet modeling and traffic generation.
//!
//! Packets are single IPv4 datagrams reduced to the fields the matcher
//! inspects. Traffic sets mix two sources: packets crafted to satisfy a
//! specific rule (placed contents plus random padding) and fully random
//! packets. Every crafted packet is verified against the linear matcher
//! before it is emitted; a generator bug can therefore not silently
//! poison a corpus.

use std::io::{BufRead, Write};
use std::net::Ipv4Addr;

use base64::engine::general_purpose::STANDARD as BASE64;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::engine::{port_matches, rule_matches, ContentOutcome, MatchError, NetConfig};
use crate::rules::{ContentSpec, IpSpec, PortSpec, Protocol, Rule};

/// Largest payload a packet may carry, matching the IPv4 total-length
/// budget.
pub const MAX_PAYLOAD: usize = 65535;

/// One captured or generated packet.
///
/// Invariants, enforced by [`Packet::new`] and on every deserialized
/// line: the protocol is tcp, udp or icmp (never bare ip), icmp packets
/// carry zero ports, and the payload fits [`MAX_PAYLOAD`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    #[serde(rename = "proto")]
    pub protocol: Protocol,
    pub src_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_ip: Ipv4Addr,
    pub dst_port: u16,
    #[serde(rename = "payload_b64", with = "b64_bytes")]
    pub payload: Vec<u8>,
}

mod b64_bytes {
    use super::{Deserialize, BASE64};
    use base64::Engine as _;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&BASE64.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(de)?;
        BASE64
            .decode(text.as_bytes())
            .map_err(serde::de::Error::custom)
    }
}

/// Violation of a packet invariant.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PacketError {
    #[error("packets cannot carry bare ip; use tcp, udp or icmp")]
    IpProtocol,
    #[error("icmp packets have no ports, got {src_port}/{dst_port}")]
    IcmpPorts { src_port: u16, dst_port: u16 },
    #[error("payload length {0} exceeds {MAX_PAYLOAD}")]
    PayloadTooLong(usize),
}

impl Packet {
    pub fn new(
        protocol: Protocol,
        src_ip: Ipv4Addr,
        src_port: u16,
        dst_ip: Ipv4Addr,
        dst_port: u16,
        payload: Vec<u8>,
    ) -> Result<Self, PacketError> {
        let packet = Packet {
            protocol,
            src_ip,
            src_port,
            dst_ip,
            dst_port,
            payload,
        };
        packet.validate()?;
        Ok(packet)
    }

    pub fn validate(&self) -> Result<(), PacketError> {
        if self.protocol == Protocol::Ip {
            return Err(PacketError::IpProtocol);
        }
        if self.protocol == Protocol::Icmp && (self.src_port != 0 || self.dst_port != 0) {
            return Err(PacketError::IcmpPorts {
                src_port: self.src_port,
                dst_port: self.dst_port,
            });
        }
        if self.payload.len() > MAX_PAYLOAD {
            return Err(PacketError::PayloadTooLong(self.payload.len()));
        }
        Ok(())
    }
}

/// Failure reading or writing a packet stream.
#[derive(Debug, thiserror::Error)]
pub enum TrafficError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Writes packets as JSON Lines, one object per line.
pub fn write_packets_jsonl<W: Write>(mut out: W, packets: &[Packet]) -> std::io::Result<()> {
    for packet in packets {
        let line = serde_json::to_string(packet).expect("packet serialization is infallible");
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a JSON Lines packet stream, validating every packet. Errors
/// carry the 1-based line number; blank lines are skipped.
pub fn read_packets_jsonl<R: BufRead>(input: R) -> Result<Vec<Packet>, TrafficError> {
    let mut packets = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let packet: Packet = serde_json::from_str(&line).map_err(|e| TrafficError::Line {
            line: lineno,
            message: e.to_string(),
        })?;
        packet.validate().map_err(|e| TrafficError::Line {
            line: lineno,
            message: e.to_string(),
        })?;
        packets.push(packet);
    }
    Ok(packets)
}

/// Draws a random address biased toward the pools rule generators use,
/// so random traffic exercises home, external, cidr and exact branches
/// in both directions.
fn random_ip<R: Rng>(rng: &mut R) -> Ipv4Addr {
    match rng.gen_range(0..5u8) {
        0 => Ipv4Addr::new(10, 1, rng.gen(), rng.gen()),
        1 => Ipv4Addr::new(10, rng.gen(), rng.gen(), rng.gen()),
        2 => Ipv4Addr::new(192, 168, rng.gen(), rng.gen()),
        3 => Ipv4Addr::new(203, 0, 113, rng.gen()),
        _ => Ipv4Addr::from(rng.gen::<u32>()),
    }
}

fn random_port<R: Rng>(rng: &mut R) -> u16 {
    const COMMON: [u16; 6] = [80, 443, 53, 25, 8080, 4444];
    if rng.gen_bool(0.5) {
        COMMON[rng.gen_range(0..COMMON.len())]
    } else {
        rng.gen()
    }
}

/// A fully random packet: uniform protocol, pool-biased addresses and
/// ports, uniform payload bytes.
pub fn random_packet<R: Rng>(rng: &mut R) -> Packet {
    let protocol = Protocol::MATCHABLE[rng.gen_range(0..Protocol::MATCHABLE.len())];
    random_packet_for(protocol, rng)
}

/// A random packet of a fixed matchable protocol.
pub fn random_packet_for<R: Rng>(protocol: Protocol, rng: &mut R) -> Packet {
    let (src_port, dst_port) = if protocol == Protocol::Icmp {
        (0, 0)
    } else {
        (random_port(rng), random_port(rng))
    };
    let len = rng.gen_range(0..=256);
    let payload = (0..len).map(|_| rng.gen()).collect();
    Packet::new(protocol, random_ip(rng), src_port, random_ip(rng), dst_port, payload)
        .expect("generated fields satisfy packet invariants")
}

/// Why a packet could not be crafted for a rule.
#[derive(Debug, thiserror::Error)]
pub enum CraftError {
    #[error("rule {sid} targets ip; no single packet protocol satisfies it")]
    IpRule { sid: u32 },
    #[error("rule {sid} is unsatisfiable: {detail}")]
    Unsatisfiable { sid: u32, detail: String },
    #[error("rule {sid}: {source}")]
    Environment {
        sid: u32,
        #[source]
        source: MatchError,
    },
    #[error("rule {sid}: crafted packet failed self-check at content {index}")]
    SelfCheck { sid: u32, index: usize },
}

fn pick_ip<R: Rng>(
    spec: &IpSpec,
    net: &NetConfig,
    rng: &mut R,
    sid: u32,
) -> Result<Ipv4Addr, CraftError> {
    let env = |source| CraftError::Environment { sid, source };
    match spec {
        IpSpec::Any => Ok(Ipv4Addr::from(rng.gen::<u32>())),
        IpSpec::Addr(a) => Ok(*a),
        IpSpec::Cidr(c) => {
            let host_bits = 32 - u32::from(c.prefix_len());
            let host = rng.gen_range(0..(1u64 << host_bits)) as u32;
            Ok(Ipv4Addr::from(u32::from(c.addr()) | host))
        }
        IpSpec::Range(lo, hi) => {
            Ok(Ipv4Addr::from(rng.gen_range(u32::from(*lo)..=u32::from(*hi))))
        }
        IpSpec::HomeNet => {
            let nets = net.home_net();
            if nets.is_empty() {
                return Err(env(MatchError::HomeNetUnset));
            }
            let cidr = nets[rng.gen_range(0..nets.len())];
            pick_ip(&IpSpec::Cidr(cidr), net, rng, sid)
        }
        IpSpec::ExternalNet => {
            if net.home_net().is_empty() {
                return Err(env(MatchError::HomeNetUnset));
            }
            for _ in 0..256 {
                let addr = Ipv4Addr::from(rng.gen::<u32>());
                if net.home_contains(addr) == Some(false) {
                    return Ok(addr);
                }
            }
            Err(CraftError::Unsatisfiable {
                sid,
                detail: "could not find an address outside the home network".into(),
            })
        }
    }
}

fn pick_port<R: Rng>(
    spec: &PortSpec,
    net: &NetConfig,
    rng: &mut R,
    sid: u32,
    icmp: bool,
) -> Result<u16, CraftError> {
    if icmp {
        // Icmp packets always carry port 0; the spec must tolerate it.
        let accepts_zero = port_matches(spec, 0, net)
            .map_err(|source| CraftError::Environment { sid, source })?;
        if !accepts_zero {
            return Err(CraftError::Unsatisfiable {
                sid,
                detail: format!("icmp ports are 0 but spec {spec} rejects 0"),
            });
        }
        return Ok(0);
    }
    match spec {
        PortSpec::Any => Ok(rng.gen()),
        PortSpec::Single(p) => Ok(*p),
        PortSpec::Range(lo, hi) => Ok(rng.gen_range(*lo..=*hi)),
        PortSpec::Named(name) => {
            let resolved = net
                .port_var(name)
                .ok_or_else(|| CraftError::Environment {
                    sid,
                    source: MatchError::UnresolvedPortVar(name.clone()),
                })?
                .clone();
            pick_port(&resolved, net, rng, sid, icmp)
        }
    }
}

struct Placement {
    pos: usize,
    bytes: Vec<u8>,
}

/// The pattern bytes as they will appear on the wire: nocase contents
/// get their ASCII letters case-flipped at random, exercising the
/// case-insensitive comparison.
fn render_pattern<R: Rng>(spec: &ContentSpec, rng: &mut R) -> Vec<u8> {
    let mut bytes = spec.pattern.clone();
    if spec.nocase {
        for b in &mut bytes {
            if b.is_ascii_alphabetic() && rng.gen_bool(0.5) {
                *b ^= 0x20;
            }
        }
    }
    bytes
}

/// Chooses an absolute position for every content, left to right, so
/// that each lands inside its own search window. Placements never
/// overlap: a negative distance is satisfied by placing at the anchor
/// itself, which the window must still admit.
fn place_contents<R: Rng>(
    rule: &Rule,
    rng: &mut R,
) -> Result<Vec<Placement>, CraftError> {
    let sid = rule.sid;
    let mut placements: Vec<Placement> = Vec::with_capacity(rule.contents.len());
    let mut anchor = 0usize;
    for (index, content) in rule.contents.iter().enumerate() {
        let len = content.pattern.len();
        let unsat = |detail: String| CraftError::Unsatisfiable { sid, detail };
        let (base, slack_max) = if index == 0 {
            let offset = content.offset.unwrap_or(0) as usize;
            let slack = match content.depth {
                Some(depth) => {
                    let depth = depth as usize;
                    if depth < len {
                        return Err(unsat(format!(
                            "content {index}: depth {depth} shorter than pattern length {len}"
                        )));
                    }
                    depth - len
                }
                None => 4,
            };
            (offset, slack)
        } else {
            let distance = i64::from(content.distance.unwrap_or(0));
            let base = anchor as i64 + distance.max(0);
            let slack = match content.within {
                Some(within) => {
                    // Window end is anchor + distance + within; placing
                    // at `base` must leave room for the whole pattern.
                    let end = anchor as i64 + distance + i64::from(within);
                    let room = end - (base + len as i64);
                    if room < 0 {
                        return Err(unsat(format!(
                            "content {index}: within {within} cannot fit pattern length {len} at distance {distance}"
                        )));
                    }
                    room as usize
                }
                None => 4,
            };
            (base as usize, slack)
        };
        let pos = base + rng.gen_range(0..=slack_max.min(16));
        anchor = pos + len;
        placements.push(Placement {
            pos,
            bytes: render_pattern(content, rng),
        });
    }
    Ok(placements)
}

/// Reports the first content whose window the payload fails, for
/// self-check diagnostics.
fn first_failing_content(rule: &Rule, payload: &[u8]) -> usize {
    let mut anchor = None;
    for (index, content) in rule.contents.iter().enumerate() {
        match crate::engine::content_matches(content, payload, anchor) {
            ContentOutcome::FoundAt(end) => anchor = Some(end),
            ContentOutcome::NotFound => return index,
        }
    }
    0
}

/// Builds a packet the rule is guaranteed to match: header fields drawn
/// from the rule's own specs, contents placed inside their windows,
/// random padding elsewhere. The result is verified with the linear
/// matcher; padding that accidentally disturbs a window (an earlier
/// occurrence of a pattern shifts the anchor) is redrawn.
pub fn craft_packet_for<R: Rng>(
    rule: &Rule,
    net: &NetConfig,
    rng: &mut R,
) -> Result<Packet, CraftError> {
    let sid = rule.sid;
    if rule.protocol == Protocol::Ip {
        return Err(CraftError::IpRule { sid });
    }
    let icmp = rule.protocol == Protocol::Icmp;

    let src_ip = pick_ip(&rule.src_ip, net, rng, sid)?;
    let dst_ip = pick_ip(&rule.dst_ip, net, rng, sid)?;
    let src_port = pick_port(&rule.src_port, net, rng, sid, icmp)?;
    let dst_port = pick_port(&rule.dst_port, net, rng, sid, icmp)?;

    let placements = place_contents(rule, rng)?;
    let content_end = placements
        .last()
        .map(|p| p.pos + p.bytes.len())
        .unwrap_or(0);
    let total = content_end + rng.gen_range(0..=8);
    if total > MAX_PAYLOAD {
        return Err(CraftError::Unsatisfiable {
            sid,
            detail: format!("content windows need a payload of {total} bytes"),
        });
    }

    const ATTEMPTS: usize = 16;
    let mut last_payload = Vec::new();
    for _ in 0..ATTEMPTS {
        let mut payload: Vec<u8> = (0..total).map(|_| rng.gen()).collect();
        for p in &placements {
            payload[p.pos..p.pos + p.bytes.len()].copy_from_slice(&p.bytes);
        }
        let packet = Packet::new(rule.protocol, src_ip, src_port, dst_ip, dst_port, payload)
            .expect("crafted fields satisfy packet invariants");
        let ok = rule_matches(rule, &packet, net)
            .map_err(|source| CraftError::Environment { sid, source })?;
        if ok {
            return Ok(packet);
        }
        last_payload = packet.payload;
    }
    Err(CraftError::SelfCheck {
        sid,
        index: first_failing_content(rule, &last_payload),
    })
}

/// How a generated corpus was put together.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrafficReport {
    pub crafted: usize,
    pub random: usize,
    /// Craft attempts that fell back to a random packet because the
    /// drawn rule was unsatisfiable.
    pub fallbacks: usize,
}

/// Generates `count` packets: with probability `crafted_fraction` a
/// packet is crafted for a randomly drawn rule, otherwise it is fully
/// random. Unsatisfiable draws fall back to random packets and are
/// counted in the report.
pub fn generate_traffic<R: Rng>(
    rules: &[Rule],
    net: &NetConfig,
    count: usize,
    crafted_fraction: f64,
    rng: &mut R,
) -> (Vec<Packet>, TrafficReport) {
    let craftable: Vec<&Rule> = rules.iter().filter(|r| r.protocol != Protocol::Ip).collect();
    let mut packets = Vec::with_capacity(count);
    let mut report = TrafficReport::default();
    for _ in 0..count {
        if !craftable.is_empty() && rng.gen_bool(crafted_fraction.clamp(0.0, 1.0)) {
            let rule = craftable[rng.gen_range(0..craftable.len())];
            match craft_packet_for(rule, net, rng) {
                Ok(packet) => {
                    packets.push(packet);
                    report.crafted += 1;
                    continue;
                }
                Err(_) => report.fallbacks += 1,
            }
        }
        packets.push(random_packet(rng));
        report.random += 1;
    }
    (packets, report)
}

/// Seeded form of [`generate_traffic`] for callers that do not carry an
/// RNG of their own.
pub fn generate_traffic_seeded(
    rules: &[Rule],
    net: &NetConfig,
    count: usize,
    crafted_fraction: f64,
    seed: u64,
) -> (Vec<Packet>, TrafficReport) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    generate_traffic(rules, net, count, crafted_fraction, &mut rng)
}
