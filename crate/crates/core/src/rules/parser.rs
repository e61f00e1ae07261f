//! Parser for the rule grammar subset.
//!
//! Grammar per logical line:
//!
//! ```text
//! action protocol src_ip src_port -> dst_ip dst_port ( option; option; ... )
//! ```
//!
//! Negated specs, bracket lists and the bidirectional `<>` operator are
//! outside the subset and rejected with diagnostics.

use std::collections::HashSet;
use std::net::Ipv4Addr;

use super::{
    cve_id_year, decode_pattern, Action, Cidr, ContentSpec, DiagnosticKind, IpSpec,
    ParseDiagnostic, PortSpec, Protocol, RawOption, Reference, Rule,
};

/// Parses one logical rule line (continuations already joined).
pub fn parse_rule(text: &str) -> Result<Rule, ParseDiagnostic> {
    parse_rule_at(text, 1)
}

/// Parses a whole `.rules` text: `#` comments and blank lines are
/// skipped, a trailing `\` joins the next physical line. Returns the
/// accepted rules in file order plus one diagnostic per rejected line;
/// a duplicate sid rejects the later occurrence.
pub fn parse_rules_text(text: &str) -> (Vec<Rule>, Vec<ParseDiagnostic>) {
    let mut rules = Vec::new();
    let mut diagnostics = Vec::new();
    let mut seen_sids: HashSet<u32> = HashSet::new();

    let mut lines = text.lines().enumerate();
    while let Some((idx, first)) = lines.next() {
        let line_no = idx + 1;
        let mut logical = first.trim_end_matches('\r').to_string();
        while logical.ends_with('\\') {
            logical.pop();
            match lines.next() {
                Some((_, next)) => logical.push_str(next.trim_end_matches('\r')),
                None => break,
            }
        }
        let trimmed = logical.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match parse_rule_at(&logical, line_no) {
            Ok(rule) => {
                if seen_sids.contains(&rule.sid) {
                    diagnostics.push(ParseDiagnostic {
                        line: line_no,
                        column: 1,
                        kind: DiagnosticKind::DuplicateSid,
                        message: format!("sid {} already defined; keeping the first", rule.sid),
                    });
                } else {
                    seen_sids.insert(rule.sid);
                    rules.push(rule);
                }
            }
            Err(diag) => diagnostics.push(diag),
        }
    }
    (rules, diagnostics)
}

fn diag(
    line: usize,
    column: usize,
    kind: DiagnosticKind,
    message: impl Into<String>,
) -> ParseDiagnostic {
    ParseDiagnostic {
        line,
        column,
        kind,
        message: message.into(),
    }
}

fn parse_rule_at(text: &str, line: usize) -> Result<Rule, ParseDiagnostic> {
    let open = text.find('(').ok_or_else(|| {
        diag(
            line,
            text.len().max(1),
            DiagnosticKind::Syntax,
            "missing option section '(...)'",
        )
    })?;
    let close = text.rfind(')').ok_or_else(|| {
        diag(
            line,
            text.len().max(1),
            DiagnosticKind::Syntax,
            "unterminated option section",
        )
    })?;
    if close < open {
        return Err(diag(
            line,
            close + 1,
            DiagnosticKind::Syntax,
            "')' before '('",
        ));
    }
    if !text[close + 1..].trim().is_empty() {
        return Err(diag(
            line,
            close + 2,
            DiagnosticKind::Syntax,
            "trailing text after option section",
        ));
    }

    let header = parse_header(&text[..open], line)?;
    let options = parse_options(&text[open + 1..close], open + 1, line, close + 1)?;

    Ok(Rule {
        action: header.action,
        protocol: header.protocol,
        src_ip: header.src_ip,
        src_port: header.src_port,
        dst_ip: header.dst_ip,
        dst_port: header.dst_port,
        msg: options.msg.unwrap_or_default(),
        contents: options.contents,
        flow: options.flow,
        metadata: options.metadata,
        references: options.references,
        sid: options.sid,
        rev: options.rev,
        raw_options: options.raw_options,
    })
}

struct Header {
    action: Action,
    protocol: Protocol,
    src_ip: IpSpec,
    src_port: PortSpec,
    dst_ip: IpSpec,
    dst_port: PortSpec,
}

/// Whitespace-separated tokens with their byte offsets.
fn tokenize(text: &str) -> Vec<(usize, &str)> {
    let mut tokens = Vec::new();
    let mut rest = text;
    let mut base = 0;
    loop {
        let skip = rest.len() - rest.trim_start().len();
        base += skip;
        rest = &rest[skip..];
        if rest.is_empty() {
            break;
        }
        let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        tokens.push((base, &rest[..end]));
        base += end;
        rest = &rest[end..];
    }
    tokens
}

fn parse_header(text: &str, line: usize) -> Result<Header, ParseDiagnostic> {
    let tokens = tokenize(text);
    if tokens.len() != 7 {
        return Err(diag(
            line,
            tokens.first().map_or(1, |(off, _)| off + 1),
            DiagnosticKind::Syntax,
            format!(
                "expected 'action protocol src_ip src_port -> dst_ip dst_port', found {} header tokens",
                tokens.len()
            ),
        ));
    }

    let (off, tok) = tokens[0];
    let action = match tok.to_ascii_lowercase().as_str() {
        "alert" => Action::Alert,
        "drop" => Action::Drop,
        "log" => Action::Log,
        // ACCEPT-style allow actions map onto Pass.
        "pass" | "accept" => Action::Pass,
        "activate" | "dynamic" => {
            return Err(diag(
                line,
                off + 1,
                DiagnosticKind::UnknownAction,
                format!("action '{tok}' is not supported"),
            ));
        }
        other => {
            return Err(diag(
                line,
                off + 1,
                DiagnosticKind::UnknownAction,
                format!("unknown action '{other}'"),
            ));
        }
    };

    let (off, tok) = tokens[1];
    let protocol = match tok.to_ascii_lowercase().as_str() {
        "tcp" => Protocol::Tcp,
        "udp" => Protocol::Udp,
        "icmp" => Protocol::Icmp,
        "ip" => Protocol::Ip,
        other => {
            return Err(diag(
                line,
                off + 1,
                DiagnosticKind::Syntax,
                format!("unknown protocol '{other}'"),
            ));
        }
    };

    let src_ip = parse_ip_spec(tokens[2].1)
        .map_err(|m| diag(line, tokens[2].0 + 1, DiagnosticKind::BadIpSpec, m))?;
    let src_port = parse_port_spec(tokens[3].1)
        .map_err(|m| diag(line, tokens[3].0 + 1, DiagnosticKind::BadPortSpec, m))?;

    let (off, dir) = tokens[4];
    if dir != "->" {
        let message = if dir == "<>" {
            "bidirectional '<>' rules are not supported".to_string()
        } else {
            format!("expected '->', found '{dir}'")
        };
        return Err(diag(line, off + 1, DiagnosticKind::Syntax, message));
    }

    let dst_ip = parse_ip_spec(tokens[5].1)
        .map_err(|m| diag(line, tokens[5].0 + 1, DiagnosticKind::BadIpSpec, m))?;
    let dst_port = parse_port_spec(tokens[6].1)
        .map_err(|m| diag(line, tokens[6].0 + 1, DiagnosticKind::BadPortSpec, m))?;

    Ok(Header {
        action,
        protocol,
        src_ip,
        src_port,
        dst_ip,
        dst_port,
    })
}

pub(crate) fn parse_ip_spec(token: &str) -> Result<IpSpec, String> {
    match token {
        "$HOME_NET" => return Ok(IpSpec::HomeNet),
        "$EXTERNAL_NET" => return Ok(IpSpec::ExternalNet),
        _ => {}
    }
    if token.eq_ignore_ascii_case("any") {
        return Ok(IpSpec::Any);
    }
    if let Some(var) = token.strip_prefix('$') {
        return Err(format!(
            "unknown ip variable '${var}' (only $HOME_NET and $EXTERNAL_NET are supported)"
        ));
    }
    if token.starts_with('!') {
        return Err("negated ip specs are not supported".into());
    }
    if token.starts_with('[') {
        return Err("ip lists are not supported".into());
    }
    if let Some((addr, prefix)) = token.split_once('/') {
        let addr: Ipv4Addr = addr
            .parse()
            .map_err(|_| format!("invalid ipv4 address '{addr}'"))?;
        let prefix: u8 = prefix
            .parse()
            .map_err(|_| format!("invalid prefix length '{prefix}'"))?;
        return Cidr::new(addr, prefix).map(IpSpec::Cidr);
    }
    if let Some((lo, hi)) = token.split_once('-') {
        let lo: Ipv4Addr = lo
            .parse()
            .map_err(|_| format!("invalid ipv4 address '{lo}'"))?;
        let hi: Ipv4Addr = hi
            .parse()
            .map_err(|_| format!("invalid ipv4 address '{hi}'"))?;
        if u32::from(lo) > u32::from(hi) {
            return Err(format!("ip range {lo}-{hi} has lo > hi"));
        }
        return Ok(IpSpec::Range(lo, hi));
    }
    token
        .parse()
        .map(IpSpec::Addr)
        .map_err(|_| format!("invalid ip spec '{token}'"))
}

pub(crate) fn parse_port_spec(token: &str) -> Result<PortSpec, String> {
    if token.eq_ignore_ascii_case("any") {
        return Ok(PortSpec::Any);
    }
    if let Some(name) = token.strip_prefix('$') {
        let valid = !name.is_empty()
            && name
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'_')
            && !name.as_bytes()[0].is_ascii_digit();
        if !valid {
            return Err(format!("invalid port variable name '${name}'"));
        }
        return Ok(PortSpec::Named(name.to_string()));
    }
    if token.starts_with('!') {
        return Err("negated port specs are not supported".into());
    }
    if token.starts_with('[') {
        return Err("port lists are not supported".into());
    }
    if let Some((lo, hi)) = token.split_once(':') {
        if lo.is_empty() || hi.is_empty() {
            return Err("open-ended port ranges are not supported".into());
        }
        let lo: u16 = lo.parse().map_err(|_| format!("invalid port '{lo}'"))?;
        let hi: u16 = hi.parse().map_err(|_| format!("invalid port '{hi}'"))?;
        if lo > hi {
            return Err(format!("port range {lo}:{hi} has lo > hi"));
        }
        return Ok(PortSpec::Range(lo, hi));
    }
    token
        .parse()
        .map(PortSpec::Single)
        .map_err(|_| format!("invalid port spec '{token}'"))
}

#[derive(Default)]
struct Options {
    msg: Option<String>,
    flow: Option<String>,
    contents: Vec<ContentSpec>,
    metadata: Vec<String>,
    references: Vec<Reference>,
    sid: u32,
    rev: Option<u32>,
    raw_options: Vec<RawOption>,
}

/// Splits the option region on `;` outside double quotes. Yields
/// `(offset, option-text)` pairs, offsets relative to the region.
fn split_options(region: &str) -> Vec<(usize, &str)> {
    let bytes = region.as_bytes();
    let mut parts = Vec::new();
    let mut start = 0;
    let mut in_quotes = false;
    for (i, &b) in bytes.iter().enumerate() {
        match b {
            b'"' => in_quotes = !in_quotes,
            b';' if !in_quotes => {
                parts.push((start, &region[start..i]));
                start = i + 1;
            }
            _ => {}
        }
    }
    if start < region.len() {
        parts.push((start, &region[start..]));
    }
    parts
}

fn parse_options(
    region: &str,
    region_offset: usize,
    line: usize,
    end_column: usize,
) -> Result<Options, ParseDiagnostic> {
    let mut opts = Options::default();
    let mut sid: Option<u32> = None;

    for (rel, raw) in split_options(region) {
        let chunk = raw.trim();
        if chunk.is_empty() {
            continue;
        }
        let col = region_offset + rel + raw.len() - raw.trim_start().len() + 1;
        let (key, value) = match chunk.split_once(':') {
            Some((k, v)) => (k.trim(), Some(v.trim())),
            None => (chunk, None),
        };

        match key {
            "msg" => {
                let text = expect_quoted(value, "msg", line, col)?;
                if opts.msg.is_some() {
                    return Err(diag(line, col, DiagnosticKind::Syntax, "duplicate msg option"));
                }
                opts.msg = Some(text.to_string());
            }
            "content" | "uricontent" => {
                let text = expect_quoted(value, key, line, col)?;
                let pattern = decode_pattern(text).map_err(|e| {
                    diag(
                        line,
                        col + key.len() + 2 + e.offset,
                        DiagnosticKind::BadContentEscape,
                        e.message,
                    )
                })?;
                if pattern.is_empty() {
                    return Err(diag(
                        line,
                        col,
                        DiagnosticKind::Syntax,
                        "empty content pattern",
                    ));
                }
                let mut spec = ContentSpec::new(pattern);
                spec.is_uri = key == "uricontent";
                opts.contents.push(spec);
            }
            "nocase" => {
                let spec = last_content(&mut opts.contents, "nocase", line, col)?;
                if spec.nocase {
                    return Err(diag(line, col, DiagnosticKind::Syntax, "duplicate nocase"));
                }
                spec.nocase = true;
            }
            "offset" | "depth" | "distance" | "within" => {
                apply_window_modifier(&mut opts.contents, key, value, line, col)?;
            }
            "flow" => {
                if opts.flow.is_some() {
                    return Err(diag(line, col, DiagnosticKind::Syntax, "duplicate flow option"));
                }
                let v = value.filter(|v| !v.is_empty()).ok_or_else(|| {
                    diag(line, col, DiagnosticKind::Syntax, "flow requires a value")
                })?;
                opts.flow = Some(v.to_string());
            }
            "metadata" => {
                let v = value.unwrap_or("");
                opts.metadata.extend(
                    v.split(',')
                        .map(str::trim)
                        .filter(|item| !item.is_empty())
                        .map(str::to_string),
                );
            }
            "reference" => {
                let v = value.unwrap_or("");
                let (scheme, id) = v.split_once(',').ok_or_else(|| {
                    diag(
                        line,
                        col,
                        DiagnosticKind::Syntax,
                        "reference requires 'scheme,id'",
                    )
                })?;
                let reference = parse_reference(scheme.trim(), id.trim())
                    .map_err(|m| diag(line, col, DiagnosticKind::Syntax, m))?;
                opts.references.push(reference);
            }
            "sid" => {
                if sid.is_some() {
                    return Err(diag(line, col, DiagnosticKind::Syntax, "duplicate sid option"));
                }
                let v = value.unwrap_or("");
                let parsed: u32 = v.parse().map_err(|_| {
                    diag(line, col, DiagnosticKind::Syntax, format!("invalid sid '{v}'"))
                })?;
                if parsed == 0 {
                    return Err(diag(line, col, DiagnosticKind::Syntax, "sid must be positive"));
                }
                sid = Some(parsed);
            }
            "rev" => {
                if opts.rev.is_some() {
                    return Err(diag(line, col, DiagnosticKind::Syntax, "duplicate rev option"));
                }
                let v = value.unwrap_or("");
                let parsed: u32 = v.parse().map_err(|_| {
                    diag(line, col, DiagnosticKind::Syntax, format!("invalid rev '{v}'"))
                })?;
                if parsed == 0 {
                    return Err(diag(line, col, DiagnosticKind::Syntax, "rev must be positive"));
                }
                opts.rev = Some(parsed);
            }
            _ => {
                opts.raw_options.push(RawOption {
                    key: key.to_string(),
                    value: value.map(str::to_string),
                });
            }
        }
    }

    match sid {
        Some(sid) => {
            opts.sid = sid;
            Ok(opts)
        }
        None => Err(diag(
            line,
            end_column,
            DiagnosticKind::MissingSid,
            "rule has no sid option",
        )),
    }
}

fn expect_quoted<'a>(
    value: Option<&'a str>,
    key: &str,
    line: usize,
    col: usize,
) -> Result<&'a str, ParseDiagnostic> {
    let v = value.ok_or_else(|| {
        diag(
            line,
            col,
            DiagnosticKind::Syntax,
            format!("{key} requires a quoted value"),
        )
    })?;
    let inner = v
        .strip_prefix('"')
        .and_then(|v| v.strip_suffix('"'))
        .ok_or_else(|| {
            diag(
                line,
                col,
                DiagnosticKind::Syntax,
                format!("{key} value must be double-quoted"),
            )
        })?;
    if inner.contains('"') {
        return Err(diag(
            line,
            col,
            DiagnosticKind::Syntax,
            format!("{key} value contains an embedded quote"),
        ));
    }
    Ok(inner)
}

fn last_content<'a>(
    contents: &'a mut [ContentSpec],
    key: &str,
    line: usize,
    col: usize,
) -> Result<&'a mut ContentSpec, ParseDiagnostic> {
    contents.last_mut().ok_or_else(|| {
        diag(
            line,
            col,
            DiagnosticKind::Syntax,
            format!("{key} must follow a content option"),
        )
    })
}

fn apply_window_modifier(
    contents: &mut Vec<ContentSpec>,
    key: &str,
    value: Option<&str>,
    line: usize,
    col: usize,
) -> Result<(), ParseDiagnostic> {
    let index = contents.len().checked_sub(1).ok_or_else(|| {
        diag(
            line,
            col,
            DiagnosticKind::Syntax,
            format!("{key} must follow a content option"),
        )
    })?;
    let v = value.filter(|v| !v.is_empty()).ok_or_else(|| {
        diag(line, col, DiagnosticKind::Syntax, format!("{key} requires a value"))
    })?;

    let first = index == 0;
    if first && matches!(key, "distance" | "within") {
        return Err(diag(
            line,
            col,
            DiagnosticKind::Syntax,
            format!("{key} is only allowed on contents after the first"),
        ));
    }
    if !first && matches!(key, "offset" | "depth") {
        return Err(diag(
            line,
            col,
            DiagnosticKind::Syntax,
            format!("{key} is only allowed on the first content"),
        ));
    }

    let spec = &mut contents[index];
    let dup = |line, col, key: &str| {
        diag(line, col, DiagnosticKind::Syntax, format!("duplicate {key}"))
    };
    match key {
        "offset" => {
            let n: u32 = v
                .parse()
                .map_err(|_| diag(line, col, DiagnosticKind::Syntax, format!("invalid offset '{v}'")))?;
            if spec.offset.replace(n).is_some() {
                return Err(dup(line, col, key));
            }
        }
        "depth" => {
            let n: u32 = v
                .parse()
                .map_err(|_| diag(line, col, DiagnosticKind::Syntax, format!("invalid depth '{v}'")))?;
            if n == 0 {
                return Err(diag(line, col, DiagnosticKind::Syntax, "depth must be positive"));
            }
            if spec.depth.replace(n).is_some() {
                return Err(dup(line, col, key));
            }
        }
        "distance" => {
            let n: i32 = v.parse().map_err(|_| {
                diag(line, col, DiagnosticKind::Syntax, format!("invalid distance '{v}'"))
            })?;
            if spec.distance.replace(n).is_some() {
                return Err(dup(line, col, key));
            }
        }
        "within" => {
            let n: u32 = v
                .parse()
                .map_err(|_| diag(line, col, DiagnosticKind::Syntax, format!("invalid within '{v}'")))?;
            if n == 0 {
                return Err(diag(line, col, DiagnosticKind::Syntax, "within must be positive"));
            }
            if spec.within.replace(n).is_some() {
                return Err(dup(line, col, key));
            }
        }
        _ => unreachable!("caller filters keys"),
    }
    Ok(())
}

fn parse_reference(scheme: &str, id: &str) -> Result<Reference, String> {
    if id.is_empty() {
        return Err("reference id is empty".into());
    }
    match scheme.to_ascii_lowercase().as_str() {
        "cve" => {
            let full = if id.len() >= 4 && id[..4].eq_ignore_ascii_case("cve-") {
                format!("CVE-{}", &id[4..])
            } else {
                format!("CVE-{id}")
            };
            if cve_id_year(&full).is_none() {
                return Err(format!("cve id '{id}' does not match CVE-<year>-<digits>"));
            }
            Ok(Reference::Cve(full))
        }
        "bugtraq" => Ok(Reference::Bugtraq(id.to_string())),
        "nessus" => Ok(Reference::Nessus(id.to_string())),
        "url" => Ok(Reference::Url(id.to_string())),
        other => {
            if other.is_empty() {
                return Err("reference scheme is empty".into());
            }
            Ok(Reference::Other(other.to_string(), id.to_string()))
        }
    }
}
