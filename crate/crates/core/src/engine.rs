//! Prefix-shared signature tries with subtree elimination, plus the
//! linear scan the tries are checked against.
//!
//! Each matchable protocol owns one trie. A rule becomes a root-to-leaf
//! path with one edge per constraint, in a fixed level order: src ip,
//! src port, dst ip, dst port, one edge per content, an end-of-contents
//! marker, the reference set, and finally the sid. Rules sharing a
//! constraint prefix share the corresponding path prefix, so one failed
//! edge eliminates every rule below it in a single comparison. Children
//! are kept sorted by label, which makes the trie shape independent of
//! rule insertion order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;

use crate::rules::{
    encode_pattern, Cidr, ContentSpec, IpSpec, PortSpec, Protocol, Reference, Rule,
};
use crate::traffic::Packet;

/// Network environment rules are evaluated against: the home network
/// and the values of named port variables.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NetConfig {
    home_net: Vec<Cidr>,
    port_vars: BTreeMap<String, PortSpec>,
}

impl NetConfig {
    /// Builds a config. Port variables must resolve to concrete specs;
    /// a variable defined in terms of another variable is rejected.
    pub fn new(
        home_net: Vec<Cidr>,
        port_vars: BTreeMap<String, PortSpec>,
    ) -> Result<Self, String> {
        for (name, spec) in &port_vars {
            if let PortSpec::Named(inner) = spec {
                return Err(format!(
                    "port variable {name} resolves to another variable ${inner}"
                ));
            }
        }
        Ok(NetConfig { home_net, port_vars })
    }

    pub fn home_net(&self) -> &[Cidr] {
        &self.home_net
    }

    /// `None` when no home network is configured, so callers can tell
    /// "unset" apart from "address is external".
    pub fn home_contains(&self, addr: Ipv4Addr) -> Option<bool> {
        if self.home_net.is_empty() {
            return None;
        }
        Some(self.home_net.iter().any(|c| c.contains(addr)))
    }

    pub fn port_var(&self, name: &str) -> Option<&PortSpec> {
        self.port_vars.get(name)
    }
}

/// Evaluation failed because the environment cannot resolve a spec.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MatchError {
    #[error("rule references $HOME_NET or $EXTERNAL_NET but no home network is configured")]
    HomeNetUnset,
    #[error("port variable ${0} is not defined")]
    UnresolvedPortVar(String),
    #[error("packet protocol {packet} does not match trie protocol {trie}")]
    ProtocolMismatch { packet: Protocol, trie: Protocol },
}

/// Does `addr` satisfy the spec under `net`?
pub fn ip_matches(spec: &IpSpec, addr: Ipv4Addr, net: &NetConfig) -> Result<bool, MatchError> {
    match spec {
        IpSpec::Any => Ok(true),
        IpSpec::Addr(a) => Ok(*a == addr),
        IpSpec::Cidr(c) => Ok(c.contains(addr)),
        IpSpec::Range(lo, hi) => {
            Ok((u32::from(*lo)..=u32::from(*hi)).contains(&u32::from(addr)))
        }
        IpSpec::HomeNet => net.home_contains(addr).ok_or(MatchError::HomeNetUnset),
        IpSpec::ExternalNet => net
            .home_contains(addr)
            .map(|inside| !inside)
            .ok_or(MatchError::HomeNetUnset),
    }
}

/// Does `port` satisfy the spec under `net`?
pub fn port_matches(spec: &PortSpec, port: u16, net: &NetConfig) -> Result<bool, MatchError> {
    match spec {
        PortSpec::Any => Ok(true),
        PortSpec::Single(p) => Ok(*p == port),
        PortSpec::Range(lo, hi) => Ok((*lo..=*hi).contains(&port)),
        PortSpec::Named(name) => {
            let resolved = net
                .port_var(name)
                .ok_or_else(|| MatchError::UnresolvedPortVar(name.clone()))?;
            // NetConfig construction guarantees `resolved` is concrete.
            port_matches(resolved, port, net)
        }
    }
}

/// Result of one content evaluation. `FoundAt` carries the offset just
/// past the matched bytes, which anchors the next content's window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContentOutcome {
    FoundAt(usize),
    NotFound,
}

/// Searches `payload` for the spec's pattern inside its window.
///
/// Without an anchor (the rule's first content) the window is
/// `[offset, offset + depth)`, offset defaulting to 0 and depth to the
/// rest of the payload. With an anchor the window is
/// `[anchor + distance, anchor + distance + within)`, distance
/// defaulting to 0 and within to the rest of the payload. The pattern
/// must lie entirely inside the window; the leftmost occurrence wins.
/// `nocase` compares ASCII case-insensitively. URI contents search the
/// same raw payload; the flag only records rule intent.
pub fn content_matches(spec: &ContentSpec, payload: &[u8], anchor: Option<usize>) -> ContentOutcome {
    let len = spec.pattern.len();
    let (win_start, win_end) = match anchor {
        None => {
            let start = i64::from(spec.offset.unwrap_or(0));
            let end = spec
                .depth
                .map(|d| start + i64::from(d))
                .unwrap_or(i64::MAX);
            (start, end)
        }
        Some(a) => {
            let start = a as i64 + i64::from(spec.distance.unwrap_or(0));
            let end = spec
                .within
                .map(|w| start + i64::from(w))
                .unwrap_or(i64::MAX);
            (start, end)
        }
    };

    let search_start = win_start.max(0) as usize;
    let search_end = win_end.min(payload.len() as i64);
    if len == 0 || (search_end - len as i64) < search_start as i64 {
        return ContentOutcome::NotFound;
    }
    let last_start = search_end as usize - len;
    for i in search_start..=last_start {
        let window = &payload[i..i + len];
        let hit = if spec.nocase {
            window.eq_ignore_ascii_case(&spec.pattern)
        } else {
            window == spec.pattern.as_slice()
        };
        if hit {
            return ContentOutcome::FoundAt(i + len);
        }
    }
    ContentOutcome::NotFound
}

/// One trie edge. The variant fixes the level the edge may appear at;
/// labels compare structurally, so two rules share an edge exactly when
/// they spell the same constraint.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeLabel {
    SrcIp(IpSpec),
    SrcPort(PortSpec),
    DstIp(IpSpec),
    DstPort(PortSpec),
    Content(ContentSpec),
    EndOfContents,
    RefSet(Vec<Reference>),
    Sid(u32),
}

impl fmt::Display for EdgeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdgeLabel::SrcIp(s) => write!(f, "src_ip {s}"),
            EdgeLabel::SrcPort(s) => write!(f, "src_port {s}"),
            EdgeLabel::DstIp(s) => write!(f, "dst_ip {s}"),
            EdgeLabel::DstPort(s) => write!(f, "dst_port {s}"),
            EdgeLabel::Content(c) => {
                let kind = if c.is_uri { "uricontent" } else { "content" };
                write!(f, "{kind} \"{}\"", encode_pattern(&c.pattern))?;
                if c.nocase {
                    write!(f, " nocase")?;
                }
                if let Some(v) = c.offset {
                    write!(f, " offset={v}")?;
                }
                if let Some(v) = c.depth {
                    write!(f, " depth={v}")?;
                }
                if let Some(v) = c.distance {
                    write!(f, " distance={v}")?;
                }
                if let Some(v) = c.within {
                    write!(f, " within={v}")?;
                }
                Ok(())
            }
            EdgeLabel::EndOfContents => write!(f, "end"),
            EdgeLabel::RefSet(refs) => {
                write!(f, "refs")?;
                if refs.is_empty() {
                    write!(f, " none")?;
                } else {
                    for r in refs {
                        match r {
                            Reference::Cve(id) => write!(f, " cve:{id}")?,
                            Reference::Bugtraq(id) => write!(f, " bugtraq:{id}")?,
                            Reference::Nessus(id) => write!(f, " nessus:{id}")?,
                            Reference::Url(u) => write!(f, " url:{u}")?,
                            Reference::Other(k, v) => write!(f, " {k}:{v}")?,
                        }
                    }
                }
                Ok(())
            }
            EdgeLabel::Sid(sid) => write!(f, "sid {sid}"),
        }
    }
}

/// Interior or leaf trie node. The label of the edge leading here lives
/// with the parent's edge list; the node itself tracks its depth, the
/// sids reachable below it (for elimination accounting) and, on leaves,
/// the rule's sid.
///
/// The `exact_*` fields index the contiguous run of exact-valued child
/// edges (single ports, literal addresses). A packet selects among
/// those by binary search, so wide fan-out on disjoint exact values
/// costs one lookup instead of one comparison per child; all the
/// non-selected exact subtrees are eliminated in bulk. The fields are
/// derived from the sorted edge list, so structural equality is
/// unaffected.
#[derive(Debug, Clone, PartialEq, Eq)]
struct TrieNode {
    level: usize,
    subtree_sids: u64,
    sid: Option<u32>,
    edges: Vec<(EdgeLabel, TrieNode)>,
    exact_start: usize,
    exact_len: usize,
    exact_sids: u64,
}

/// Labels a packet can select by equality rather than by predicate.
fn is_exact(label: &EdgeLabel) -> bool {
    matches!(
        label,
        EdgeLabel::SrcIp(IpSpec::Addr(_))
            | EdgeLabel::DstIp(IpSpec::Addr(_))
            | EdgeLabel::SrcPort(PortSpec::Single(_))
            | EdgeLabel::DstPort(PortSpec::Single(_))
    )
}

impl TrieNode {
    fn new(level: usize) -> Self {
        TrieNode {
            level,
            subtree_sids: 0,
            sid: None,
            edges: Vec::new(),
            exact_start: 0,
            exact_len: 0,
            exact_sids: 0,
        }
    }

    /// Child behind `label`, inserting it at its sorted position first
    /// if absent. Keeping edges sorted is what makes trie shape
    /// independent of insertion order.
    fn child_mut(&mut self, label: EdgeLabel) -> &mut TrieNode {
        let idx = match self.edges.binary_search_by(|(l, _)| l.cmp(&label)) {
            Ok(idx) => idx,
            Err(idx) => {
                let child = TrieNode::new(self.level + 1);
                self.edges.insert(idx, (label, child));
                idx
            }
        };
        &mut self.edges[idx].1
    }

    /// Recomputes the exact-run index after all insertions. Exact
    /// labels sort adjacently within their variant, so the run is one
    /// contiguous slice.
    fn finalize(&mut self) {
        self.exact_start = 0;
        self.exact_len = 0;
        self.exact_sids = 0;
        for (i, (label, child)) in self.edges.iter().enumerate() {
            if is_exact(label) {
                if self.exact_len == 0 {
                    self.exact_start = i;
                }
                debug_assert_eq!(self.exact_start + self.exact_len, i, "exact run not contiguous");
                self.exact_len += 1;
                self.exact_sids += child.subtree_sids;
            }
        }
        for (_, child) in &mut self.edges {
            child.finalize();
        }
    }
}

/// Trie construction failure.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BuildError {
    #[error("duplicate sid {0} in rule set")]
    DuplicateSid(u32),
    #[error("rule {sid} targets {found}, trie holds {expected} rules")]
    ProtocolMismatch {
        sid: u32,
        expected: Protocol,
        found: Protocol,
    },
    #[error("rule {sid} targets ip, which has no matching trie")]
    UnmatchableProtocol { sid: u32 },
}

/// Prefix-shared decision trie for one protocol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureTrieDfa {
    protocol: Protocol,
    root: TrieNode,
    rule_count: u64,
    max_depth: usize,
    sids: BTreeSet<u32>,
}

/// Everything one packet evaluation observed: the matching sids, how
/// many nodes the walk entered, and how many rules each level's pruning
/// removed without inspection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchTrace {
    /// Sids of every rule the packet satisfies, ascending.
    pub matched_sids: Vec<u32>,
    /// Nodes entered during the walk, the root included.
    pub nodes_visited: usize,
    /// Rules eliminated by a failed edge, indexed by the level of the
    /// node whose edge failed.
    pub sids_eliminated_per_level: Vec<u64>,
}

impl MatchTrace {
    pub fn eliminated_total(&self) -> u64 {
        self.sids_eliminated_per_level.iter().sum()
    }
}

enum EdgeVerdict {
    Pass { anchor: Option<usize> },
    Fail,
}

fn eval_edge(
    label: &EdgeLabel,
    packet: &Packet,
    net: &NetConfig,
    anchor: Option<usize>,
) -> Result<EdgeVerdict, MatchError> {
    let pass = |ok: bool| {
        if ok {
            EdgeVerdict::Pass { anchor }
        } else {
            EdgeVerdict::Fail
        }
    };
    Ok(match label {
        EdgeLabel::SrcIp(spec) => pass(ip_matches(spec, packet.src_ip, net)?),
        EdgeLabel::SrcPort(spec) => pass(port_matches(spec, packet.src_port, net)?),
        EdgeLabel::DstIp(spec) => pass(ip_matches(spec, packet.dst_ip, net)?),
        EdgeLabel::DstPort(spec) => pass(port_matches(spec, packet.dst_port, net)?),
        EdgeLabel::Content(spec) => match content_matches(spec, &packet.payload, anchor) {
            ContentOutcome::FoundAt(end) => EdgeVerdict::Pass { anchor: Some(end) },
            ContentOutcome::NotFound => EdgeVerdict::Fail,
        },
        // References and sids constrain nothing about a packet.
        EdgeLabel::EndOfContents | EdgeLabel::RefSet(_) | EdgeLabel::Sid(_) => {
            EdgeVerdict::Pass { anchor }
        }
    })
}

impl SignatureTrieDfa {
    /// Builds the trie for `protocol` from rules that all target it.
    pub fn build(protocol: Protocol, rules: &[Rule]) -> Result<Self, BuildError> {
        if protocol == Protocol::Ip {
            // No packets carry bare ip, so an ip trie could never match.
            let sid = rules.first().map(|r| r.sid).unwrap_or(0);
            return Err(BuildError::UnmatchableProtocol { sid });
        }
        let mut dfa = SignatureTrieDfa {
            protocol,
            root: TrieNode::new(0),
            rule_count: 0,
            max_depth: 0,
            sids: BTreeSet::new(),
        };
        for rule in rules {
            dfa.insert_rule(rule)?;
        }
        dfa.root.finalize();
        Ok(dfa)
    }

    fn insert_rule(&mut self, rule: &Rule) -> Result<(), BuildError> {
        if rule.protocol != self.protocol {
            return Err(BuildError::ProtocolMismatch {
                sid: rule.sid,
                expected: self.protocol,
                found: rule.protocol,
            });
        }
        if !self.sids.insert(rule.sid) {
            return Err(BuildError::DuplicateSid(rule.sid));
        }

        let mut labels = vec![
            EdgeLabel::SrcIp(rule.src_ip.clone()),
            EdgeLabel::SrcPort(rule.src_port.clone()),
            EdgeLabel::DstIp(rule.dst_ip.clone()),
            EdgeLabel::DstPort(rule.dst_port.clone()),
        ];
        labels.extend(rule.contents.iter().cloned().map(EdgeLabel::Content));
        labels.push(EdgeLabel::EndOfContents);
        // Reference order carries no matching meaning; sorting the set
        // lets rules that cite the same advisories share the edge.
        let mut refs = rule.references.clone();
        refs.sort();
        labels.push(EdgeLabel::RefSet(refs));
        labels.push(EdgeLabel::Sid(rule.sid));

        let depth = labels.len();
        let mut node = &mut self.root;
        node.subtree_sids += 1;
        for label in labels {
            node = node.child_mut(label);
            node.subtree_sids += 1;
        }
        node.sid = Some(rule.sid);

        self.rule_count += 1;
        self.max_depth = self.max_depth.max(depth);
        Ok(())
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn rule_count(&self) -> u64 {
        self.rule_count
    }

    /// Deepest node level, i.e. the length of the longest rule path.
    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    /// Node count at each level, index 0 being the root. Shows how much
    /// prefix sharing the rule set achieved.
    pub fn level_widths(&self) -> Vec<usize> {
        let mut widths = vec![0; self.max_depth + 1];
        fn walk(node: &TrieNode, widths: &mut [usize]) {
            widths[node.level] += 1;
            for (_, child) in &node.edges {
                walk(child, widths);
            }
        }
        walk(&self.root, &mut widths);
        widths
    }

    /// Walks the packet through the trie. Every edge that fails prunes
    /// its whole subtree and credits the eliminated rules to the level
    /// it failed at, so `matched + eliminated` always accounts for the
    /// full rule set.
    pub fn match_packet(&self, packet: &Packet, net: &NetConfig) -> Result<MatchTrace, MatchError> {
        if packet.protocol != self.protocol {
            return Err(MatchError::ProtocolMismatch {
                packet: packet.protocol,
                trie: self.protocol,
            });
        }
        let mut trace = MatchTrace {
            matched_sids: Vec::new(),
            nodes_visited: 1,
            sids_eliminated_per_level: vec![0; self.max_depth],
        };
        self.dfs(&self.root, packet, net, None, &mut trace)?;
        trace.matched_sids.sort_unstable();
        Ok(trace)
    }

    fn dfs(
        &self,
        node: &TrieNode,
        packet: &Packet,
        net: &NetConfig,
        anchor: Option<usize>,
        trace: &mut MatchTrace,
    ) -> Result<(), MatchError> {
        if let Some(sid) = node.sid {
            trace.matched_sids.push(sid);
        }
        let exact_end = node.exact_start + node.exact_len;
        let predicated = node.edges[..node.exact_start]
            .iter()
            .chain(node.edges[exact_end..].iter());
        for (label, child) in predicated {
            match eval_edge(label, packet, net, anchor)? {
                EdgeVerdict::Pass { anchor: next } => {
                    trace.nodes_visited += 1;
                    self.dfs(child, packet, net, next, trace)?;
                }
                EdgeVerdict::Fail => {
                    trace.sids_eliminated_per_level[node.level] += child.subtree_sids;
                }
            }
        }
        if node.exact_len > 0 {
            // One lookup selects among all exact-valued siblings; the
            // rest are eliminated in bulk without being evaluated.
            let probe = match &node.edges[node.exact_start].0 {
                EdgeLabel::SrcIp(_) => EdgeLabel::SrcIp(IpSpec::Addr(packet.src_ip)),
                EdgeLabel::DstIp(_) => EdgeLabel::DstIp(IpSpec::Addr(packet.dst_ip)),
                EdgeLabel::SrcPort(_) => EdgeLabel::SrcPort(PortSpec::Single(packet.src_port)),
                EdgeLabel::DstPort(_) => EdgeLabel::DstPort(PortSpec::Single(packet.dst_port)),
                other => unreachable!("non-exact label {other} in exact run"),
            };
            let run = &node.edges[node.exact_start..exact_end];
            match run.binary_search_by(|(l, _)| l.cmp(&probe)) {
                Ok(pos) => {
                    let child = &run[pos].1;
                    trace.sids_eliminated_per_level[node.level] +=
                        node.exact_sids - child.subtree_sids;
                    trace.nodes_visited += 1;
                    self.dfs(child, packet, net, anchor, trace)?;
                }
                Err(_) => {
                    trace.sids_eliminated_per_level[node.level] += node.exact_sids;
                }
            }
        }
        Ok(())
    }

    /// Matching without the audit trail: appends the matched sids into
    /// `out` (cleared first, sorted on return). Same traversal as
    /// `match_packet` minus the per-level bookkeeping, for callers that
    /// only want the verdict, such as the benchmark's timed loop.
    pub fn match_sids_into(
        &self,
        packet: &Packet,
        net: &NetConfig,
        out: &mut Vec<u32>,
    ) -> Result<(), MatchError> {
        if packet.protocol != self.protocol {
            return Err(MatchError::ProtocolMismatch {
                packet: packet.protocol,
                trie: self.protocol,
            });
        }
        out.clear();
        self.dfs_sids(&self.root, packet, net, None, out)?;
        out.sort_unstable();
        Ok(())
    }

    fn dfs_sids(
        &self,
        node: &TrieNode,
        packet: &Packet,
        net: &NetConfig,
        anchor: Option<usize>,
        out: &mut Vec<u32>,
    ) -> Result<(), MatchError> {
        if let Some(sid) = node.sid {
            out.push(sid);
        }
        let exact_end = node.exact_start + node.exact_len;
        let predicated = node.edges[..node.exact_start]
            .iter()
            .chain(node.edges[exact_end..].iter());
        for (label, child) in predicated {
            if let EdgeVerdict::Pass { anchor: next } = eval_edge(label, packet, net, anchor)? {
                self.dfs_sids(child, packet, net, next, out)?;
            }
        }
        if node.exact_len > 0 {
            let probe = match &node.edges[node.exact_start].0 {
                EdgeLabel::SrcIp(_) => EdgeLabel::SrcIp(IpSpec::Addr(packet.src_ip)),
                EdgeLabel::DstIp(_) => EdgeLabel::DstIp(IpSpec::Addr(packet.dst_ip)),
                EdgeLabel::SrcPort(_) => EdgeLabel::SrcPort(PortSpec::Single(packet.src_port)),
                EdgeLabel::DstPort(_) => EdgeLabel::DstPort(PortSpec::Single(packet.dst_port)),
                other => unreachable!("non-exact label {other} in exact run"),
            };
            let run = &node.edges[node.exact_start..exact_end];
            if let Ok(pos) = run.binary_search_by(|(l, _)| l.cmp(&probe)) {
                self.dfs_sids(&run[pos].1, packet, net, anchor, out)?;
            }
        }
        Ok(())
    }

    /// Human-readable tree listing, one node per line, children
    /// indented under their parent.
    pub fn dump(&self) -> String {
        let mut out = format!(
            "trie {}: rules {}, max depth {}\n",
            self.protocol, self.rule_count, self.max_depth
        );
        fn walk(node: &TrieNode, out: &mut String) {
            for (label, child) in &node.edges {
                out.push_str(&"  ".repeat(child.level));
                out.push_str(&format!(
                    "{label}  [level {}, sids {}]\n",
                    child.level, child.subtree_sids
                ));
                walk(child, out);
            }
        }
        walk(&self.root, &mut out);
        out
    }
}

/// Evaluates one rule against a packet in spec order: protocol, source
/// ip and port, destination ip and port, then contents left to right
/// with the anchor chaining between them.
pub fn rule_matches(rule: &Rule, packet: &Packet, net: &NetConfig) -> Result<bool, MatchError> {
    if rule.protocol != packet.protocol {
        return Ok(false);
    }
    if !ip_matches(&rule.src_ip, packet.src_ip, net)? {
        return Ok(false);
    }
    if !port_matches(&rule.src_port, packet.src_port, net)? {
        return Ok(false);
    }
    if !ip_matches(&rule.dst_ip, packet.dst_ip, net)? {
        return Ok(false);
    }
    if !port_matches(&rule.dst_port, packet.dst_port, net)? {
        return Ok(false);
    }
    let mut anchor = None;
    for content in &rule.contents {
        match content_matches(content, &packet.payload, anchor) {
            ContentOutcome::FoundAt(end) => anchor = Some(end),
            ContentOutcome::NotFound => return Ok(false),
        }
    }
    Ok(true)
}

/// Reference implementation: scans every rule and returns the sids the
/// packet satisfies, ascending. The tries are required to agree with
/// this on every packet.
pub fn linear_match(rules: &[Rule], packet: &Packet, net: &NetConfig) -> Result<Vec<u32>, MatchError> {
    let mut matched = Vec::new();
    linear_match_into(rules, packet, net, &mut matched)?;
    Ok(matched)
}

/// Buffer-reusing form of [`linear_match`]: `out` is cleared, filled
/// with the matching sids and sorted.
pub fn linear_match_into(
    rules: &[Rule],
    packet: &Packet,
    net: &NetConfig,
    out: &mut Vec<u32>,
) -> Result<(), MatchError> {
    out.clear();
    for rule in rules {
        if rule_matches(rule, packet, net)? {
            out.push(rule.sid);
        }
    }
    out.sort_unstable();
    Ok(())
}

/// Checks up front that the environment can resolve every variable the
/// rules use, so matching itself cannot fail on configuration.
pub fn validate_resolvable(rules: &[Rule], net: &NetConfig) -> Result<(), MatchError> {
    for rule in rules {
        for spec in [&rule.src_ip, &rule.dst_ip] {
            if matches!(spec, IpSpec::HomeNet | IpSpec::ExternalNet)
                && net.home_net().is_empty()
            {
                return Err(MatchError::HomeNetUnset);
            }
        }
        for spec in [&rule.src_port, &rule.dst_port] {
            if let PortSpec::Named(name) = spec {
                if net.port_var(name).is_none() {
                    return Err(MatchError::UnresolvedPortVar(name.clone()));
                }
            }
        }
    }
    Ok(())
}

/// Outcome of routing one packet through [`ProtocolTries`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutedMatch {
    /// The trie the packet was dispatched to.
    pub protocol: Protocol,
    pub trace: MatchTrace,
    /// Nodes visited in each trie during this dispatch. Tries for other
    /// protocols are never consulted, so their counts are zero.
    pub visits_by_protocol: BTreeMap<Protocol, usize>,
}

/// One trie per matchable protocol, with total dispatch on the packet's
/// protocol field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolTries {
    tcp: SignatureTrieDfa,
    udp: SignatureTrieDfa,
    icmp: SignatureTrieDfa,
}

impl ProtocolTries {
    /// Partitions the rules by protocol and builds the three tries.
    /// Rules for bare ip are rejected; sids must be unique across the
    /// whole set.
    pub fn build(rules: &[Rule]) -> Result<Self, BuildError> {
        let mut seen = BTreeSet::new();
        for rule in rules {
            if rule.protocol == Protocol::Ip {
                return Err(BuildError::UnmatchableProtocol { sid: rule.sid });
            }
            if !seen.insert(rule.sid) {
                return Err(BuildError::DuplicateSid(rule.sid));
            }
        }
        let of = |p: Protocol| -> Vec<Rule> {
            rules.iter().filter(|r| r.protocol == p).cloned().collect()
        };
        Ok(ProtocolTries {
            tcp: SignatureTrieDfa::build(Protocol::Tcp, &of(Protocol::Tcp))?,
            udp: SignatureTrieDfa::build(Protocol::Udp, &of(Protocol::Udp))?,
            icmp: SignatureTrieDfa::build(Protocol::Icmp, &of(Protocol::Icmp))?,
        })
    }

    pub fn get(&self, protocol: Protocol) -> Option<&SignatureTrieDfa> {
        match protocol {
            Protocol::Tcp => Some(&self.tcp),
            Protocol::Udp => Some(&self.udp),
            Protocol::Icmp => Some(&self.icmp),
            Protocol::Ip => None,
        }
    }

    pub fn rule_count(&self) -> u64 {
        self.tcp.rule_count() + self.udp.rule_count() + self.icmp.rule_count()
    }

    /// Dispatches the packet to exactly one trie and reports per-trie
    /// visit counts as evidence of isolation.
    pub fn match_packet(&self, packet: &Packet, net: &NetConfig) -> Result<RoutedMatch, MatchError> {
        let trie = self
            .get(packet.protocol)
            .expect("packets always carry a matchable protocol");
        let trace = trie.match_packet(packet, net)?;
        let mut visits = BTreeMap::new();
        for p in Protocol::MATCHABLE {
            visits.insert(p, 0);
        }
        visits.insert(packet.protocol, trace.nodes_visited);
        Ok(RoutedMatch {
            protocol: packet.protocol,
            trace,
            visits_by_protocol: visits,
        })
    }

    pub fn dump(&self) -> String {
        format!("{}{}{}", self.tcp.dump(), self.udp.dump(), self.icmp.dump())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::{parse_rule, Action};

    fn net_10_home() -> NetConfig {
        let home = vec![Cidr::new(Ipv4Addr::new(10, 1, 0, 0), 16).unwrap()];
        NetConfig::new(home, BTreeMap::new()).unwrap()
    }

    fn packet(proto: Protocol, src: [u8; 4], sp: u16, dst: [u8; 4], dp: u16, payload: &[u8]) -> Packet {
        Packet::new(
            proto,
            Ipv4Addr::from(src),
            sp,
            Ipv4Addr::from(dst),
            dp,
            payload.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn ip_spec_evaluation() {
        let net = net_10_home();
        let addr = Ipv4Addr::new(10, 1, 2, 3);
        let outside = Ipv4Addr::new(192, 168, 0, 1);

        assert_eq!(ip_matches(&IpSpec::Any, addr, &net), Ok(true));
        assert_eq!(ip_matches(&IpSpec::Addr(addr), addr, &net), Ok(true));
        assert_eq!(ip_matches(&IpSpec::Addr(outside), addr, &net), Ok(false));
        assert_eq!(ip_matches(&IpSpec::HomeNet, addr, &net), Ok(true));
        assert_eq!(ip_matches(&IpSpec::HomeNet, outside, &net), Ok(false));
        assert_eq!(ip_matches(&IpSpec::ExternalNet, outside, &net), Ok(true));
        assert_eq!(ip_matches(&IpSpec::ExternalNet, addr, &net), Ok(false));

        let range = IpSpec::Range(Ipv4Addr::new(10, 0, 0, 5), Ipv4Addr::new(10, 0, 0, 9));
        assert_eq!(ip_matches(&range, Ipv4Addr::new(10, 0, 0, 5), &net), Ok(true));
        assert_eq!(ip_matches(&range, Ipv4Addr::new(10, 0, 0, 9), &net), Ok(true));
        assert_eq!(ip_matches(&range, Ipv4Addr::new(10, 0, 0, 10), &net), Ok(false));

        let empty = NetConfig::default();
        assert_eq!(ip_matches(&IpSpec::HomeNet, addr, &empty), Err(MatchError::HomeNetUnset));
        assert_eq!(
            ip_matches(&IpSpec::ExternalNet, addr, &empty),
            Err(MatchError::HomeNetUnset)
        );
    }

    #[test]
    fn port_spec_evaluation() {
        let vars = BTreeMap::from([("HTTP_PORTS".to_string(), PortSpec::Single(80))]);
        let net = NetConfig::new(Vec::new(), vars).unwrap();

        assert_eq!(port_matches(&PortSpec::Any, 5, &net), Ok(true));
        assert_eq!(port_matches(&PortSpec::Single(80), 80, &net), Ok(true));
        assert_eq!(port_matches(&PortSpec::Single(80), 81, &net), Ok(false));
        assert_eq!(port_matches(&PortSpec::Range(10, 20), 10, &net), Ok(true));
        assert_eq!(port_matches(&PortSpec::Range(10, 20), 20, &net), Ok(true));
        assert_eq!(port_matches(&PortSpec::Range(10, 20), 21, &net), Ok(false));
        assert_eq!(
            port_matches(&PortSpec::Named("HTTP_PORTS".into()), 80, &net),
            Ok(true)
        );
        assert_eq!(
            port_matches(&PortSpec::Named("NOPE".into()), 80, &net),
            Err(MatchError::UnresolvedPortVar("NOPE".into()))
        );
    }

    #[test]
    fn net_config_rejects_indirect_port_vars() {
        let vars = BTreeMap::from([("A".to_string(), PortSpec::Named("B".to_string()))]);
        assert!(NetConfig::new(Vec::new(), vars).is_err());
    }

    #[test]
    fn content_first_window() {
        let mut spec = ContentSpec::new(b"abc".to_vec());
        assert_eq!(content_matches(&spec, b"xxabcxx", None), ContentOutcome::FoundAt(5));
        assert_eq!(content_matches(&spec, b"xxabx", None), ContentOutcome::NotFound);

        // Leftmost occurrence wins.
        assert_eq!(content_matches(&spec, b"abcabc", None), ContentOutcome::FoundAt(3));

        spec.offset = Some(3);
        assert_eq!(content_matches(&spec, b"abcabc", None), ContentOutcome::FoundAt(6));

        // Depth bounds the window end: pattern must fit inside.
        spec.offset = Some(2);
        spec.depth = Some(3);
        assert_eq!(content_matches(&spec, b"xxabcxx", None), ContentOutcome::FoundAt(5));
        spec.depth = Some(2);
        assert_eq!(content_matches(&spec, b"xxabcxx", None), ContentOutcome::NotFound);
    }

    #[test]
    fn content_anchored_window() {
        let mut spec = ContentSpec::new(b"abc".to_vec());
        spec.distance = Some(0);
        assert_eq!(
            content_matches(&spec, b"abcabc", Some(3)),
            ContentOutcome::FoundAt(6)
        );

        // Distance skips bytes after the anchor.
        spec.distance = Some(2);
        assert_eq!(
            content_matches(&spec, b"abcxabc", Some(3)),
            ContentOutcome::NotFound
        );
        assert_eq!(
            content_matches(&spec, b"abcxxabc", Some(3)),
            ContentOutcome::FoundAt(8)
        );

        // Within bounds the window; the pattern must fit entirely.
        spec.distance = Some(1);
        spec.within = Some(3);
        assert_eq!(
            content_matches(&spec, b"abcxabcx", Some(3)),
            ContentOutcome::FoundAt(7)
        );
        spec.within = Some(2);
        assert_eq!(
            content_matches(&spec, b"abcxabcx", Some(3)),
            ContentOutcome::NotFound
        );

        // Negative distance reaches back before the anchor.
        spec.distance = Some(-3);
        spec.within = Some(3);
        assert_eq!(
            content_matches(&spec, b"xabcx", Some(4)),
            ContentOutcome::FoundAt(4)
        );
        // The window never extends before the payload start.
        spec.distance = Some(-10);
        spec.within = Some(3);
        assert_eq!(content_matches(&spec, b"abcx", Some(2)), ContentOutcome::NotFound);
    }

    #[test]
    fn content_nocase_and_bounds() {
        let mut spec = ContentSpec::new(b"GET".to_vec());
        assert_eq!(content_matches(&spec, b"xget/", None), ContentOutcome::NotFound);
        spec.nocase = true;
        assert_eq!(content_matches(&spec, b"xget/", None), ContentOutcome::FoundAt(4));

        let spec = ContentSpec::new(b"abc".to_vec());
        assert_eq!(content_matches(&spec, b"", None), ContentOutcome::NotFound);
        assert_eq!(content_matches(&spec, b"ab", None), ContentOutcome::NotFound);
        // Anchor past the payload end.
        assert_eq!(content_matches(&spec, b"abc", Some(3)), ContentOutcome::NotFound);
    }

    fn two_shared_rules() -> Vec<Rule> {
        let r1 = parse_rule(
            r#"alert tcp 10.0.0.0/8 any -> any 80 (msg:"a"; content:"abc"; sid:1;)"#,
        )
        .unwrap();
        let r2 = parse_rule(
            r#"alert tcp 10.0.0.0/8 any -> any 80 (msg:"b"; content:"xyz"; sid:2;)"#,
        )
        .unwrap();
        vec![r1, r2]
    }

    #[test]
    fn shared_header_prefix_is_one_path() {
        let rules = two_shared_rules();
        let dfa = SignatureTrieDfa::build(Protocol::Tcp, &rules).unwrap();
        assert_eq!(dfa.rule_count(), 2);
        // Levels: root, 4 header levels shared, then the content split.
        let widths = dfa.level_widths();
        assert_eq!(widths[0], 1);
        assert_eq!(&widths[1..5], &[1, 1, 1, 1]);
        assert_eq!(widths[5], 2);
        assert_eq!(dfa.max_depth(), 8);
    }

    #[test]
    fn trie_shape_ignores_insertion_order() {
        let rules = two_shared_rules();
        let forward = SignatureTrieDfa::build(Protocol::Tcp, &rules).unwrap();
        let reversed: Vec<Rule> = rules.into_iter().rev().collect();
        let backward = SignatureTrieDfa::build(Protocol::Tcp, &reversed).unwrap();
        assert_eq!(forward, backward);
    }

    #[test]
    fn build_rejects_duplicates_and_wrong_protocol() {
        let rules = two_shared_rules();
        let mut dup = rules.clone();
        dup.push(rules[0].clone());
        assert_eq!(
            SignatureTrieDfa::build(Protocol::Tcp, &dup),
            Err(BuildError::DuplicateSid(1))
        );
        assert_eq!(
            SignatureTrieDfa::build(Protocol::Udp, &rules),
            Err(BuildError::ProtocolMismatch {
                sid: 1,
                expected: Protocol::Udp,
                found: Protocol::Tcp
            })
        );
        let ip_rule = Rule::any(Action::Alert, Protocol::Ip, 9);
        assert_eq!(
            ProtocolTries::build(&[ip_rule]),
            Err(BuildError::UnmatchableProtocol { sid: 9 })
        );
    }

    #[test]
    fn match_accounts_for_every_rule() {
        let rules = two_shared_rules();
        let dfa = SignatureTrieDfa::build(Protocol::Tcp, &rules).unwrap();
        let net = NetConfig::default();

        // Payload satisfies rule 1 only: rule 2 is eliminated at the
        // content level (parent level 4).
        let p = packet(Protocol::Tcp, [10, 2, 3, 4], 1234, [8, 8, 8, 8], 80, b"..abc..");
        let trace = dfa.match_packet(&p, &net).unwrap();
        assert_eq!(trace.matched_sids, vec![1]);
        assert_eq!(trace.eliminated_total(), 1);
        assert_eq!(trace.sids_eliminated_per_level[4], 1);
        assert_eq!(
            trace.matched_sids.len() as u64 + trace.eliminated_total(),
            dfa.rule_count()
        );

        // Src outside 10/8 eliminates both rules at the root.
        let p = packet(Protocol::Tcp, [11, 2, 3, 4], 1234, [8, 8, 8, 8], 80, b"..abc..");
        let trace = dfa.match_packet(&p, &net).unwrap();
        assert!(trace.matched_sids.is_empty());
        assert_eq!(trace.sids_eliminated_per_level[0], 2);
        assert_eq!(trace.nodes_visited, 1);

        // Payload with both patterns matches both rules.
        let p = packet(Protocol::Tcp, [10, 2, 3, 4], 1234, [8, 8, 8, 8], 80, b"abcxyz");
        let trace = dfa.match_packet(&p, &net).unwrap();
        assert_eq!(trace.matched_sids, vec![1, 2]);
        assert_eq!(trace.eliminated_total(), 0);
    }

    #[test]
    fn exact_fanout_is_eliminated_in_bulk() {
        // 64 rules differ only in their single dst port; two more keep
        // predicated edges (any, a range) at the same level so the
        // exact run sits between evaluated siblings.
        let mut rules: Vec<Rule> = (0..64u16)
            .map(|i| {
                parse_rule(&format!(
                    r#"alert tcp any any -> any {} (msg:"p{i}"; content:"abc"; sid:{};)"#,
                    1000 + i,
                    100 + u32::from(i),
                ))
                .unwrap()
            })
            .collect();
        rules.push(
            parse_rule(r#"alert tcp any any -> any any (msg:"w"; content:"abc"; sid:900;)"#)
                .unwrap(),
        );
        rules.push(
            parse_rule(r#"alert tcp any any -> any 1000:1100 (msg:"r"; content:"abc"; sid:901;)"#)
                .unwrap(),
        );
        let dfa = SignatureTrieDfa::build(Protocol::Tcp, &rules).unwrap();
        let net = NetConfig::default();

        // Port 1007 selects exactly one single-port rule; the other 63
        // are eliminated in one step. Dst port edges hang off the dst
        // ip node at level 3, so that is where the credit lands.
        let p = packet(Protocol::Tcp, [1, 1, 1, 1], 5, [2, 2, 2, 2], 1007, b"abc");
        let trace = dfa.match_packet(&p, &net).unwrap();
        assert_eq!(trace.matched_sids, linear_match(&rules, &p, &net).unwrap());
        assert_eq!(trace.matched_sids, vec![107, 900, 901]);
        assert_eq!(trace.sids_eliminated_per_level[3], 63);
        assert_eq!(
            trace.matched_sids.len() as u64 + trace.eliminated_total(),
            dfa.rule_count()
        );

        // A port outside every spec eliminates all 64 singles plus the
        // range at that level; only the wildcard rule survives it.
        let p = packet(Protocol::Tcp, [1, 1, 1, 1], 5, [2, 2, 2, 2], 7, b"abc");
        let trace = dfa.match_packet(&p, &net).unwrap();
        assert_eq!(trace.matched_sids, vec![900]);
        assert_eq!(trace.sids_eliminated_per_level[3], 65);
    }

    #[test]
    fn exact_addresses_dispatch_like_ports() {
        let rules = vec![
            parse_rule(r#"alert udp 10.0.0.1 any -> any any (msg:"a"; sid:1;)"#).unwrap(),
            parse_rule(r#"alert udp 10.0.0.2 any -> any any (msg:"b"; sid:2;)"#).unwrap(),
            parse_rule(r#"alert udp 10.0.0.0/8 any -> any any (msg:"c"; sid:3;)"#).unwrap(),
        ];
        let dfa = SignatureTrieDfa::build(Protocol::Udp, &rules).unwrap();
        let net = NetConfig::default();

        let p = packet(Protocol::Udp, [10, 0, 0, 2], 5, [2, 2, 2, 2], 7, b"");
        let trace = dfa.match_packet(&p, &net).unwrap();
        assert_eq!(trace.matched_sids, linear_match(&rules, &p, &net).unwrap());
        assert_eq!(trace.matched_sids, vec![2, 3]);
        assert_eq!(trace.sids_eliminated_per_level[0], 1);

        let p = packet(Protocol::Udp, [11, 0, 0, 9], 5, [2, 2, 2, 2], 7, b"");
        let trace = dfa.match_packet(&p, &net).unwrap();
        assert!(trace.matched_sids.is_empty());
        assert_eq!(trace.sids_eliminated_per_level[0], 3);
    }

    #[test]
    fn trie_agrees_with_linear_on_fixture() {
        let rules = vec![
            parse_rule(r#"alert tcp any any -> any 80 (msg:"a"; content:"abc"; sid:1;)"#).unwrap(),
            parse_rule(r#"alert tcp any any -> any 443 (msg:"b"; content:"abc"; sid:2;)"#).unwrap(),
            parse_rule(r#"alert tcp any any -> any 80 (msg:"c"; content:"abc"; content:"def"; distance:0; sid:3;)"#).unwrap(),
        ];
        let dfa = SignatureTrieDfa::build(Protocol::Tcp, &rules).unwrap();
        let net = NetConfig::default();
        let payloads: [&[u8]; 4] = [b"abcdef", b"abc", b"def", b""];
        for dst_port in [80u16, 443, 8080] {
            for payload in payloads {
                let p = packet(Protocol::Tcp, [1, 2, 3, 4], 999, [5, 6, 7, 8], dst_port, payload);
                let expect = linear_match(&rules, &p, &net).unwrap();
                let trace = dfa.match_packet(&p, &net).unwrap();
                assert_eq!(trace.matched_sids, expect, "port {dst_port} payload {payload:?}");
                assert_eq!(
                    trace.matched_sids.len() as u64 + trace.eliminated_total(),
                    dfa.rule_count()
                );
            }
        }
    }

    #[test]
    fn anchor_state_is_per_branch() {
        // Both rules share the first content; the second contents have
        // windows that only work if each branch keeps its own anchor.
        let rules = vec![
            parse_rule(r#"alert tcp any any -> any any (msg:"a"; content:"ab"; content:"cd"; distance:0; within:2; sid:1;)"#).unwrap(),
            parse_rule(r#"alert tcp any any -> any any (msg:"b"; content:"ab"; content:"ef"; distance:2; within:2; sid:2;)"#).unwrap(),
        ];
        let dfa = SignatureTrieDfa::build(Protocol::Tcp, &rules).unwrap();
        let net = NetConfig::default();
        let p = packet(Protocol::Tcp, [1, 1, 1, 1], 1, [2, 2, 2, 2], 2, b"abcdef");
        let trace = dfa.match_packet(&p, &net).unwrap();
        let expect = linear_match(&rules, &p, &net).unwrap();
        assert_eq!(trace.matched_sids, expect);
        assert_eq!(trace.matched_sids, vec![1, 2]);
    }

    #[test]
    fn router_dispatches_by_protocol() {
        let rules = vec![
            parse_rule(r#"alert tcp any any -> any any (msg:"t"; content:"t"; sid:1;)"#).unwrap(),
            parse_rule(r#"alert udp any any -> any any (msg:"u"; content:"u"; sid:2;)"#).unwrap(),
            parse_rule(r#"alert icmp any any -> any any (msg:"i"; content:"i"; sid:3;)"#).unwrap(),
        ];
        let tries = ProtocolTries::build(&rules).unwrap();
        let net = NetConfig::default();

        let p = packet(Protocol::Udp, [1, 1, 1, 1], 53, [2, 2, 2, 2], 53, b"u");
        let routed = tries.match_packet(&p, &net).unwrap();
        assert_eq!(routed.protocol, Protocol::Udp);
        assert_eq!(routed.trace.matched_sids, vec![2]);
        assert_eq!(routed.visits_by_protocol[&Protocol::Tcp], 0);
        assert_eq!(routed.visits_by_protocol[&Protocol::Icmp], 0);
        assert!(routed.visits_by_protocol[&Protocol::Udp] > 0);

        // Asking a trie about a foreign packet is refused outright.
        assert_eq!(
            tries.get(Protocol::Tcp).unwrap().match_packet(&p, &net),
            Err(MatchError::ProtocolMismatch {
                packet: Protocol::Udp,
                trie: Protocol::Tcp
            })
        );
    }

    #[test]
    fn validate_resolvable_reports_missing_config() {
        let rule = parse_rule(
            r#"alert tcp $EXTERNAL_NET any -> $HOME_NET $HTTP_PORTS (msg:"m"; sid:1;)"#,
        )
        .unwrap();
        let empty = NetConfig::default();
        assert_eq!(
            validate_resolvable(&[rule.clone()], &empty),
            Err(MatchError::HomeNetUnset)
        );
        let net = net_10_home();
        assert_eq!(
            validate_resolvable(&[rule.clone()], &net),
            Err(MatchError::UnresolvedPortVar("HTTP_PORTS".into()))
        );
        let full = NetConfig::new(
            net.home_net().to_vec(),
            BTreeMap::from([("HTTP_PORTS".to_string(), PortSpec::Single(80))]),
        )
        .unwrap();
        assert_eq!(validate_resolvable(&[rule], &full), Ok(()));
    }

    #[test]
    fn golden_rule_matches_expected_packet() {
        let rule = parse_rule(
            r#"alert tcp $EXTERNAL_NET any -> $HOME_NET 80 (msg:"xyz"; flow:from_server; content:"abc"; metadata:IPS-Policy-Drop; reference:cve,2004-0001; sid:9001;)"#,
        )
        .unwrap();
        let net = net_10_home();
        let tries = ProtocolTries::build(std::slice::from_ref(&rule)).unwrap();

        let hit = packet(Protocol::Tcp, [203, 0, 113, 9], 4444, [10, 1, 0, 7], 80, b"..abc..");
        let routed = tries.match_packet(&hit, &net).unwrap();
        assert_eq!(routed.trace.matched_sids, vec![9001]);
        assert_eq!(linear_match(&[rule.clone()], &hit, &net).unwrap(), vec![9001]);

        // Same packet from inside the home net fails $EXTERNAL_NET.
        let miss = packet(Protocol::Tcp, [10, 1, 0, 8], 4444, [10, 1, 0, 7], 80, b"..abc..");
        let routed = tries.match_packet(&miss, &net).unwrap();
        assert!(routed.trace.matched_sids.is_empty());
        assert_eq!(routed.trace.sids_eliminated_per_level[0], 1);
    }

    #[test]
    fn dump_lists_every_level() {
        let rules = two_shared_rules();
        let dfa = SignatureTrieDfa::build(Protocol::Tcp, &rules).unwrap();
        let dump = dfa.dump();
        assert!(dump.starts_with("trie tcp: rules 2, max depth 8\n"));
        assert!(dump.contains("src_ip 10.0.0.0/8  [level 1, sids 2]"));
        assert!(dump.contains("content \"abc\"  [level 5, sids 1]"));
        assert!(dump.contains("sid 1  [level 8, sids 1]"));
        assert!(dump.contains("end  [level 6, sids 1]"));
    }
}
