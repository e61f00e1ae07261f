//! Rule-set curation: timeline gate, CVE severity gate and action
//! partition, producing the disable / candidate / signature sets.
//!
//! Filter chain per rule: an optional application-relevance check on the
//! destination port, then the timeline gate (newest reference year must
//! reach the cutoff), then the severity gate (first known CVE at or
//! above the threshold promotes the rule; unknown CVEs demote it to
//! candidate; known-but-low CVEs disable it). Rules that end up in the
//! signature set are finally split by action into drop (prevention) and
//! alert (detection) lists.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use crate::rules::{serialize_rule, Action, PortSpec, Rule};
use crate::severity::SeverityStore;

/// Tunables for the filter chain.
#[derive(Debug, Clone, PartialEq)]
pub struct CurationConfig {
    /// Rules whose newest dated reference is older than this year are
    /// disabled.
    pub cutoff_year: i32,
    /// Minimum CVSS base score for the signature set.
    pub severity_threshold: f64,
    /// Optional application relevance filter: application name to the
    /// destination-port specs considered relevant. Empty disables the
    /// filter.
    pub relevance_ports: BTreeMap<String, Vec<PortSpec>>,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            cutoff_year: 2000,
            severity_threshold: 6.0,
            relevance_ports: BTreeMap::new(),
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.cutoff_year < 1999 {
            return Err(format!("cutoff year {} before 1999", self.cutoff_year));
        }
        if !(0.0..=10.0).contains(&self.severity_threshold) {
            return Err(format!(
                "severity threshold {} out of range [0.0, 10.0]",
                self.severity_threshold
            ));
        }
        Ok(())
    }
}

/// Where a rule ended up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Disable,
    Candidate,
    Signature,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Disable => write!(f, "disable"),
            Outcome::Candidate => write!(f, "candidate"),
            Outcome::Signature => write!(f, "signature"),
        }
    }
}

/// Per-rule decision trail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurationDecision {
    pub sid: u32,
    pub outcome: Outcome,
    /// Which filter decided, and on what evidence.
    pub reason: String,
}

/// Output of [`run_pipeline`]: the three outcome sets partition the
/// input; `ips_drop`/`ids_alert` partition the signature set by action.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartitionedSets {
    pub disable: Vec<Rule>,
    pub candidate: Vec<Rule>,
    pub signature: Vec<Rule>,
    pub ips_drop: Vec<Rule>,
    pub ids_alert: Vec<Rule>,
    pub decisions: Vec<CurationDecision>,
}

/// Timeline gate result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimelineVerdict {
    Keep,
    Disable,
}

/// Keeps a rule whose newest dated reference reaches the cutoff year.
/// Only CVE ids carry a year. Rules with no dated reference are kept
/// so they can flow on to the candidate set.
pub fn timeline_filter(rule: &Rule, config: &CurationConfig) -> TimelineVerdict {
    let newest = rule.references.iter().filter_map(|r| r.year()).max();
    match newest {
        Some(year) if year < config.cutoff_year => TimelineVerdict::Disable,
        _ => TimelineVerdict::Keep,
    }
}

/// Severity gate result, with the evidence for the decision trail.
#[derive(Debug, Clone, PartialEq)]
pub enum SeverityVerdict {
    Signature { cve_id: String, score: f64 },
    Candidate { reason: String },
    Disable { reason: String },
}

/// Walks the rule's CVE references in textual order. The first CVE the
/// store knows with a score at or above the threshold promotes the
/// rule. Otherwise an unknown CVE (or the absence of any CVE) makes it
/// a candidate; all-known-but-low disables it.
pub fn severity_filter(
    rule: &Rule,
    store: &SeverityStore,
    config: &CurationConfig,
) -> SeverityVerdict {
    let mut first_unknown: Option<&str> = None;
    let mut best_known: Option<(&str, f64)> = None;
    let mut cve_count = 0usize;

    for cve_id in rule.cve_refs() {
        cve_count += 1;
        // Ids were validated at parse time.
        match store.lookup(cve_id).ok().flatten() {
            Some(record) => {
                if record.base_score >= config.severity_threshold {
                    return SeverityVerdict::Signature {
                        cve_id: cve_id.to_string(),
                        score: record.base_score,
                    };
                }
                if best_known.is_none_or(|(_, s)| record.base_score > s) {
                    best_known = Some((cve_id, record.base_score));
                }
            }
            None => {
                if first_unknown.is_none() {
                    first_unknown = Some(cve_id);
                }
            }
        }
    }

    if cve_count == 0 {
        return SeverityVerdict::Candidate {
            reason: "no CVE references".to_string(),
        };
    }
    if let Some(cve_id) = first_unknown {
        return SeverityVerdict::Candidate {
            reason: format!("{cve_id} not in severity store"),
        };
    }
    let (cve_id, score) = best_known.expect("at least one known CVE");
    SeverityVerdict::Disable {
        reason: format!(
            "all known CVEs below threshold {} (best {cve_id} score {score})",
            config.severity_threshold
        ),
    }
}

/// Splits signature rules by action: `Drop` rules become prevention
/// signatures, everything else stays detect-only. Input order is kept.
pub fn action_partition(signature_rules: &[Rule]) -> (Vec<Rule>, Vec<Rule>) {
    let mut ips_drop = Vec::new();
    let mut ids_alert = Vec::new();
    for rule in signature_rules {
        match rule.action {
            Action::Drop => ips_drop.push(rule.clone()),
            Action::Alert | Action::Log | Action::Pass => ids_alert.push(rule.clone()),
        }
    }
    (ips_drop, ids_alert)
}

fn relevance_pass(rule: &Rule, config: &CurationConfig) -> bool {
    if config.relevance_ports.is_empty() {
        return true;
    }
    config
        .relevance_ports
        .values()
        .any(|specs| specs.contains(&rule.dst_port))
}

/// Runs the whole chain over a rule list. The three outcome sets are
/// pairwise disjoint, union the input, and preserve input order; the
/// decisions list has one entry per input rule.
pub fn run_pipeline(
    rules: &[Rule],
    store: &SeverityStore,
    config: &CurationConfig,
) -> PartitionedSets {
    let mut sets = PartitionedSets::default();

    for rule in rules {
        let (outcome, reason) = decide(rule, store, config);
        sets.decisions.push(CurationDecision {
            sid: rule.sid,
            outcome,
            reason,
        });
        match outcome {
            Outcome::Disable => sets.disable.push(rule.clone()),
            Outcome::Candidate => sets.candidate.push(rule.clone()),
            Outcome::Signature => sets.signature.push(rule.clone()),
        }
    }

    let (ips_drop, ids_alert) = action_partition(&sets.signature);
    sets.ips_drop = ips_drop;
    sets.ids_alert = ids_alert;
    sets
}

fn decide(rule: &Rule, store: &SeverityStore, config: &CurationConfig) -> (Outcome, String) {
    if !relevance_pass(rule, config) {
        return (
            Outcome::Disable,
            format!("relevance: dst port {} not in configured application ports", rule.dst_port),
        );
    }
    if timeline_filter(rule, config) == TimelineVerdict::Disable {
        let newest = rule
            .references
            .iter()
            .filter_map(|r| r.year())
            .max()
            .expect("disable verdict implies a dated reference");
        return (
            Outcome::Disable,
            format!("timeline: newest reference year {newest} before cutoff {}", config.cutoff_year),
        );
    }
    match severity_filter(rule, store, config) {
        SeverityVerdict::Signature { cve_id, score } => (
            Outcome::Signature,
            format!("severity: {cve_id} score {score} >= threshold {}", config.severity_threshold),
        ),
        SeverityVerdict::Candidate { reason } => (Outcome::Candidate, format!("severity: {reason}")),
        SeverityVerdict::Disable { reason } => (Outcome::Disable, format!("severity: {reason}")),
    }
}

/// File names written by [`write_outputs`].
pub const OUTPUT_FILES: [&str; 6] = [
    "disable.out",
    "candidate.out",
    "signature.out",
    "ips_drop.out",
    "ids_alert.out",
    "decisions.csv",
];

/// Writes the five rule-set files plus `decisions.csv` into `out_dir`.
pub fn write_outputs(sets: &PartitionedSets, out_dir: &Path) -> io::Result<()> {
    fs::create_dir_all(out_dir)?;
    let rule_file = |rules: &[Rule]| {
        let mut text = String::new();
        for rule in rules {
            text.push_str(&serialize_rule(rule));
            text.push('\n');
        }
        text
    };
    fs::write(out_dir.join("disable.out"), rule_file(&sets.disable))?;
    fs::write(out_dir.join("candidate.out"), rule_file(&sets.candidate))?;
    fs::write(out_dir.join("signature.out"), rule_file(&sets.signature))?;
    fs::write(out_dir.join("ips_drop.out"), rule_file(&sets.ips_drop))?;
    fs::write(out_dir.join("ids_alert.out"), rule_file(&sets.ids_alert))?;

    let mut csv = String::from("sid,outcome,reason\n");
    for d in &sets.decisions {
        // Reasons may contain commas; quote the field and double any
        // embedded quotes.
        let quoted = d.reason.replace('"', "\"\"");
        csv.push_str(&format!("{},{},\"{}\"\n", d.sid, d.outcome, quoted));
    }
    fs::write(out_dir.join("decisions.csv"), csv)?;
    Ok(())
}
