//! Canonical rule text rendering.
//!
//! `parse_rule(serialize_rule(r))` reproduces `r` exactly. Options are
//! emitted in a fixed order: msg, flow, contents (with their modifiers),
//! metadata, references, sid, rev, then unrecognized options.

use std::fmt::Write;

use super::{encode_pattern, Reference, Rule};

pub fn serialize_rule(rule: &Rule) -> String {
    let mut opts: Vec<String> = Vec::new();
    opts.push(format!("msg:\"{}\";", rule.msg));
    if let Some(flow) = &rule.flow {
        opts.push(format!("flow:{flow};"));
    }
    for content in &rule.contents {
        let key = if content.is_uri { "uricontent" } else { "content" };
        opts.push(format!("{key}:\"{}\";", encode_pattern(&content.pattern)));
        if content.nocase {
            opts.push("nocase;".to_string());
        }
        if let Some(n) = content.offset {
            opts.push(format!("offset:{n};"));
        }
        if let Some(n) = content.depth {
            opts.push(format!("depth:{n};"));
        }
        if let Some(n) = content.distance {
            opts.push(format!("distance:{n};"));
        }
        if let Some(n) = content.within {
            opts.push(format!("within:{n};"));
        }
    }
    if !rule.metadata.is_empty() {
        opts.push(format!("metadata:{};", rule.metadata.join(", ")));
    }
    for reference in &rule.references {
        let (scheme, id) = match reference {
            Reference::Cve(id) => ("cve", id.strip_prefix("CVE-").unwrap_or(id).to_string()),
            Reference::Bugtraq(id) => ("bugtraq", id.clone()),
            Reference::Nessus(id) => ("nessus", id.clone()),
            Reference::Url(id) => ("url", id.clone()),
            Reference::Other(scheme, id) => (scheme.as_str(), id.clone()),
        };
        opts.push(format!("reference:{scheme},{id};"));
    }
    opts.push(format!("sid:{};", rule.sid));
    if let Some(rev) = rule.rev {
        opts.push(format!("rev:{rev};"));
    }
    for raw in &rule.raw_options {
        match &raw.value {
            Some(v) => opts.push(format!("{}:{v};", raw.key)),
            None => opts.push(format!("{};", raw.key)),
        }
    }

    let mut out = String::new();
    write!(
        out,
        "{} {} {} {} -> {} {} ({})",
        rule.action,
        rule.protocol,
        rule.src_ip,
        rule.src_port,
        rule.dst_ip,
        rule.dst_port,
        opts.join(" ")
    )
    .expect("writing to String cannot fail");
    out
}

#[cfg(test)]
mod tests {
    use super::super::{parse_rule, Action, ContentSpec, Protocol, Rule};
    use super::*;

    #[test]
    fn all_any_rule_renders_exactly() {
        let mut rule = Rule::any(Action::Alert, Protocol::Tcp, 1);
        rule.msg = "m".into();
        assert_eq!(
            serialize_rule(&rule),
            r#"alert tcp any any -> any any (msg:"m"; sid:1;)"#
        );
    }

    #[test]
    fn golden_example_is_a_fixpoint() {
        let text = r#"alert tcp $EXTERNAL_NET any -> $HOME_NET 80 (msg:"xyz"; flow:from_server; content:"abc"; metadata:IPS-Policy-Drop; reference:cve,2004-0001; sid:9001;)"#;
        let rule = parse_rule(text).unwrap();
        let rendered = serialize_rule(&rule);
        assert_eq!(rendered, text);
        assert_eq!(parse_rule(&rendered).unwrap(), rule);
    }

    #[test]
    fn hex_bytes_render_as_escapes() {
        let mut rule = Rule::any(Action::Alert, Protocol::Tcp, 2);
        rule.contents
            .push(ContentSpec::new(vec![0x00, 0x01, 0x58]));
        let text = serialize_rule(&rule);
        assert!(text.contains(r#"content:"|00 01|X";"#), "{text}");
        assert_eq!(parse_rule(&text).unwrap(), rule);
    }

    #[test]
    fn modifier_round_trip() {
        let text = r#"drop udp 10.0.0.0/8 40001:56000 -> $HOME_NET $HTTP_PORTS (msg:"w"; uricontent:"/admin"; nocase; offset:2; depth:32; content:"|0D 0A|"; distance:0; within:16; metadata:svc http, policy drop; reference:bugtraq,7777; sid:42; rev:3; classtype:web-application-attack;)"#;
        let rule = parse_rule(text).unwrap();
        assert_eq!(serialize_rule(&rule), text);
    }
}
