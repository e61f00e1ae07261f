//! Rule data model for a Snort-style signature grammar subset.
//!
//! The model covers the fields the matching engine and the curation
//! pipeline evaluate: action, protocol, the header 5-tuple specs, ordered
//! payload contents, references, sid/rev and free-form metadata. Options
//! outside the subset are preserved verbatim in `raw_options` so that
//! serialization is lossless.

mod escape;
mod parser;
mod serialize;

pub use escape::{decode_pattern, encode_pattern, EscapeError};
pub use parser::{parse_rule, parse_rules_text};
pub use serialize::serialize_rule;

use std::fmt;
use std::net::Ipv4Addr;

/// Action taken when a rule matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    Alert,
    Drop,
    Log,
    Pass,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Alert => write!(f, "alert"),
            Action::Drop => write!(f, "drop"),
            Action::Log => write!(f, "log"),
            Action::Pass => write!(f, "pass"),
        }
    }
}

/// Transport protocol a rule targets.
///
/// `Ip` rules participate in curation but own no matching trie; packets
/// are always one of tcp/udp/icmp.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Tcp,
    Udp,
    Icmp,
    Ip,
}

impl Protocol {
    /// The protocols that own a matching trie.
    pub const MATCHABLE: [Protocol; 3] = [Protocol::Tcp, Protocol::Udp, Protocol::Icmp];
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::Tcp => write!(f, "tcp"),
            Protocol::Udp => write!(f, "udp"),
            Protocol::Icmp => write!(f, "icmp"),
            Protocol::Ip => write!(f, "ip"),
        }
    }
}

/// An IPv4 network in CIDR form. Host bits below the prefix are zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cidr {
    addr: Ipv4Addr,
    prefix_len: u8,
}

impl Cidr {
    pub fn new(addr: Ipv4Addr, prefix_len: u8) -> Result<Self, String> {
        if prefix_len > 32 {
            return Err(format!("prefix length {prefix_len} out of range"));
        }
        let bits = u32::from(addr);
        if bits & !Self::mask(prefix_len) != 0 {
            return Err(format!("{addr}/{prefix_len} has non-zero host bits"));
        }
        Ok(Cidr { addr, prefix_len })
    }

    fn mask(prefix_len: u8) -> u32 {
        if prefix_len == 0 {
            0
        } else {
            u32::MAX << (32 - prefix_len)
        }
    }

    pub fn addr(&self) -> Ipv4Addr {
        self.addr
    }

    pub fn prefix_len(&self) -> u8 {
        self.prefix_len
    }

    pub fn contains(&self, addr: Ipv4Addr) -> bool {
        u32::from(addr) & Self::mask(self.prefix_len) == u32::from(self.addr)
    }
}

impl fmt::Display for Cidr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.addr, self.prefix_len)
    }
}

impl std::str::FromStr for Cidr {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (addr, prefix) = s
            .split_once('/')
            .ok_or_else(|| format!("cidr '{s}' must look like a.b.c.d/len"))?;
        let addr: Ipv4Addr = addr
            .parse()
            .map_err(|_| format!("invalid ipv4 address '{addr}'"))?;
        let prefix: u8 = prefix
            .parse()
            .map_err(|_| format!("invalid prefix length '{prefix}'"))?;
        Cidr::new(addr, prefix)
    }
}

/// Source or destination IP constraint of a rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IpSpec {
    Any,
    HomeNet,
    ExternalNet,
    Addr(Ipv4Addr),
    Cidr(Cidr),
    /// Inclusive address range, `lo <= hi` as 32-bit values.
    Range(Ipv4Addr, Ipv4Addr),
}

impl fmt::Display for IpSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IpSpec::Any => write!(f, "any"),
            IpSpec::HomeNet => write!(f, "$HOME_NET"),
            IpSpec::ExternalNet => write!(f, "$EXTERNAL_NET"),
            IpSpec::Addr(a) => write!(f, "{a}"),
            IpSpec::Cidr(c) => write!(f, "{c}"),
            IpSpec::Range(lo, hi) => write!(f, "{lo}-{hi}"),
        }
    }
}

impl std::str::FromStr for IpSpec {
    type Err = String;

    /// Accepts the same forms the rule grammar does, e.g. `any`,
    /// `$HOME_NET`, `10.0.0.1`, `10.0.0.0/8`, `10.0.0.1-10.0.0.9`.
    fn from_str(s: &str) -> Result<Self, String> {
        parser::parse_ip_spec(s)
    }
}

/// Source or destination port constraint of a rule.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PortSpec {
    Any,
    /// Symbolic port variable, e.g. `HTTP_PORTS`. Resolved through
    /// `NetConfig` at match time.
    Named(String),
    Single(u16),
    /// Inclusive range, `lo <= hi`.
    Range(u16, u16),
}

impl fmt::Display for PortSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PortSpec::Any => write!(f, "any"),
            PortSpec::Named(name) => write!(f, "${name}"),
            PortSpec::Single(p) => write!(f, "{p}"),
            PortSpec::Range(lo, hi) => write!(f, "{lo}:{hi}"),
        }
    }
}

impl std::str::FromStr for PortSpec {
    type Err = String;

    /// Accepts the same forms the rule grammar does, e.g. `any`, `80`,
    /// `1024:65535`, `$HTTP_PORTS`.
    fn from_str(s: &str) -> Result<Self, String> {
        parser::parse_port_spec(s)
    }
}

/// One payload content constraint with its window modifiers.
///
/// The first content of a rule may carry `offset`/`depth` (a window
/// anchored to the payload start); later contents may carry
/// `distance`/`within` (a window anchored to the end of the previous
/// match). `distance` may be negative.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContentSpec {
    /// Decoded pattern bytes. Never empty.
    pub pattern: Vec<u8>,
    pub nocase: bool,
    /// Parsed from `uricontent`; matched as an ordinary payload content.
    pub is_uri: bool,
    pub offset: Option<u32>,
    pub depth: Option<u32>,
    pub distance: Option<i32>,
    pub within: Option<u32>,
}

impl ContentSpec {
    pub fn new(pattern: Vec<u8>) -> Self {
        ContentSpec {
            pattern,
            nocase: false,
            is_uri: false,
            offset: None,
            depth: None,
            distance: None,
            within: None,
        }
    }
}

/// External reference attached to a rule.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Reference {
    /// Id normalized to the full `CVE-<year>-<digits>` form.
    Cve(String),
    Bugtraq(String),
    Nessus(String),
    Url(String),
    Other(String, String),
}

impl Reference {
    /// Year embedded in a CVE id; `None` for every other scheme.
    pub fn year(&self) -> Option<i32> {
        match self {
            Reference::Cve(id) => cve_id_year(id),
            _ => None,
        }
    }

    /// Full CVE id for `Cve` references.
    pub fn cve_id(&self) -> Option<&str> {
        match self {
            Reference::Cve(id) => Some(id),
            _ => None,
        }
    }
}

/// Checks the `CVE-<year>-<digits>` shape and returns the year.
pub fn cve_id_year(id: &str) -> Option<i32> {
    let rest = id.strip_prefix("CVE-")?;
    let (year, seq) = rest.split_once('-')?;
    if year.len() != 4 || !year.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if seq.is_empty() || !seq.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    year.parse().ok()
}

/// An option the parser does not interpret, preserved verbatim.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RawOption {
    pub key: String,
    pub value: Option<String>,
}

/// A parsed signature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub action: Action,
    pub protocol: Protocol,
    pub src_ip: IpSpec,
    pub src_port: PortSpec,
    pub dst_ip: IpSpec,
    pub dst_port: PortSpec,
    pub msg: String,
    /// Contents in their textual order.
    pub contents: Vec<ContentSpec>,
    /// `flow:` value stored verbatim, not evaluated at match time.
    pub flow: Option<String>,
    /// `metadata:` entries, comma-split and trimmed.
    pub metadata: Vec<String>,
    pub references: Vec<Reference>,
    pub sid: u32,
    pub rev: Option<u32>,
    pub raw_options: Vec<RawOption>,
}

impl Rule {
    /// Skeleton rule with wildcard header and empty options.
    pub fn any(action: Action, protocol: Protocol, sid: u32) -> Self {
        Rule {
            action,
            protocol,
            src_ip: IpSpec::Any,
            src_port: PortSpec::Any,
            dst_ip: IpSpec::Any,
            dst_port: PortSpec::Any,
            msg: String::new(),
            contents: Vec::new(),
            flow: None,
            metadata: Vec::new(),
            references: Vec::new(),
            sid,
            rev: None,
            raw_options: Vec::new(),
        }
    }

    /// CVE references in textual order.
    pub fn cve_refs(&self) -> impl Iterator<Item = &str> {
        self.references.iter().filter_map(|r| r.cve_id())
    }
}

/// Why a rule line was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticKind {
    Syntax,
    UnknownAction,
    BadIpSpec,
    BadPortSpec,
    BadContentEscape,
    MissingSid,
    DuplicateSid,
}

impl fmt::Display for DiagnosticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            DiagnosticKind::Syntax => "syntax",
            DiagnosticKind::UnknownAction => "unknown-action",
            DiagnosticKind::BadIpSpec => "bad-ip-spec",
            DiagnosticKind::BadPortSpec => "bad-port-spec",
            DiagnosticKind::BadContentEscape => "bad-content-escape",
            DiagnosticKind::MissingSid => "missing-sid",
            DiagnosticKind::DuplicateSid => "duplicate-sid",
        };
        f.write_str(name)
    }
}

/// One rejected rule line. Accepted rules yield no diagnostic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseDiagnostic {
    /// 1-based line of the logical rule (first physical line for
    /// continuation-joined rules).
    pub line: usize,
    /// 1-based byte column within the logical line.
    pub column: usize,
    pub kind: DiagnosticKind,
    pub message: String,
}

impl fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line {}, col {}: {}: {}",
            self.line, self.column, self.kind, self.message
        )
    }
}

impl std::error::Error for ParseDiagnostic {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cidr_rejects_host_bits() {
        assert!(Cidr::new(Ipv4Addr::new(10, 0, 0, 1), 8).is_err());
        assert!(Cidr::new(Ipv4Addr::new(10, 0, 0, 0), 8).is_ok());
        assert!(Cidr::new(Ipv4Addr::new(10, 0, 0, 0), 33).is_err());
    }

    #[test]
    fn cidr_containment() {
        let net = Cidr::new(Ipv4Addr::new(10, 0, 0, 0), 8).unwrap();
        assert!(net.contains(Ipv4Addr::new(10, 255, 1, 2)));
        assert!(!net.contains(Ipv4Addr::new(11, 0, 0, 1)));
        let all = Cidr::new(Ipv4Addr::new(0, 0, 0, 0), 0).unwrap();
        assert!(all.contains(Ipv4Addr::new(203, 0, 113, 9)));
    }

    #[test]
    fn cve_year_extraction() {
        assert_eq!(cve_id_year("CVE-2004-0001"), Some(2004));
        assert_eq!(cve_id_year("CVE-1999-12345"), Some(1999));
        assert_eq!(cve_id_year("CVE-99-0001"), None);
        assert_eq!(cve_id_year("cve-2004-0001"), None);
        assert_eq!(cve_id_year("CVE-2004-"), None);
        assert_eq!(cve_id_year("not-a-cve"), None);
    }

    #[test]
    fn reference_years() {
        assert_eq!(Reference::Cve("CVE-2004-0001".into()).year(), Some(2004));
        assert_eq!(Reference::Bugtraq("7777".into()).year(), None);
        assert_eq!(Reference::Url("example.com/x".into()).year(), None);
    }

    #[test]
    fn specs_parse_from_their_display_form() {
        for text in ["any", "$HOME_NET", "10.0.0.1", "10.0.0.0/8", "10.0.0.1-10.0.0.9"] {
            let spec: IpSpec = text.parse().unwrap();
            assert_eq!(spec.to_string(), text);
        }
        for text in ["any", "80", "1024:65535", "$HTTP_PORTS"] {
            let spec: PortSpec = text.parse().unwrap();
            assert_eq!(spec.to_string(), text);
        }
        let cidr: Cidr = "192.168.0.0/16".parse().unwrap();
        assert_eq!(cidr.to_string(), "192.168.0.0/16");
        assert!("192.168.0.1/16".parse::<Cidr>().is_err());
        assert!("192.168.0.0".parse::<Cidr>().is_err());
        assert!("nope".parse::<IpSpec>().is_err());
        assert!("nope".parse::<PortSpec>().is_err());
    }
}
