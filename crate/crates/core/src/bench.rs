//! Benchmark harness comparing trie matching against the linear scan.
//!
//! Each matchable protocol is measured on its own: the protocol's rules
//! against a packet mix of crafted hits and random traffic for that
//! protocol. Before any clock starts, every packet is matched by both
//! engines and the result sets are compared; a single divergence aborts
//! the run, so a report never carries timing from engines that
//! disagreed. The same pass doubles as cache warm-up. Timing then takes
//! at least three repetitions per engine and reports the median of the
//! per-pass mean packet costs, which shrugs off one-off scheduler
//! noise.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::engine::{
    linear_match, linear_match_into, validate_resolvable, BuildError, MatchError, NetConfig,
    ProtocolTries,
};
use crate::rules::{Protocol, Rule};
use crate::traffic::{craft_packet_for, random_packet_for, Packet};

/// Speedup the run must reach to pass.
pub const PASS_THRESHOLD: f64 = 1.5;
/// Speedup the approach is expected to deliver on curated sets.
pub const REFERENCE_SPEEDUP: f64 = 2.0;

/// Knobs for one benchmark run. Packet counts and mix are parameters
/// because no single workload is canonical; the defaults give a 1:1
/// crafted-to-random mix large enough for stable timing.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    /// Timed passes per engine; raised to 3 if lower.
    pub repetitions: usize,
    /// Crafted-to-random packet ratio, > 0. 1.0 means half and half.
    pub crafted_ratio: f64,
    /// Packets generated for each protocol that has rules.
    pub packets_per_protocol: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            repetitions: 5,
            crafted_ratio: 1.0,
            packets_per_protocol: 1000,
            seed: 0,
        }
    }
}

/// Measured outcome for one protocol's trie versus the linear scan of
/// the same rule subset.
#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub protocol: Protocol,
    pub rule_count: usize,
    pub packet_count: usize,
    pub repetitions: usize,
    /// Median over repetitions of the mean per-packet cost.
    pub mean_ns_dfa: f64,
    pub mean_ns_linear: f64,
    /// `mean_ns_linear / mean_ns_dfa`.
    pub speedup: f64,
    /// Both engines matched every packet before timing began.
    pub equivalence_checked: bool,
    /// Packets the engines disagreed on. Always 0 in an emitted report;
    /// a disagreement aborts the run instead of reporting timing.
    pub mismatch_count: usize,
}

/// Benchmark failure. A divergence means the two engines disagreed on a
/// packet, which invalidates any timing comparison.
#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("trie construction failed: {0}")]
    Build(#[from] BuildError),
    #[error("environment: {0}")]
    Environment(#[from] MatchError),
    #[error("matcher divergence on {protocol} packet {index}: trie found {dfa:?}, linear scan found {linear:?}")]
    Divergence {
        protocol: Protocol,
        index: usize,
        dfa: Vec<u32>,
        linear: Vec<u32>,
    },
    #[error("benchmark needs at least one packet per protocol")]
    NoPackets,
    #[error("no rules to benchmark")]
    NoRules,
    #[error("crafted_ratio must be a positive finite number, got {0}")]
    InvalidRatio(f64),
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Deterministic packet mix for one protocol: crafted hits cycling
/// through the rules, random traffic for the rest, shuffled together.
/// A rule that cannot be crafted against contributes a random packet.
fn protocol_packets(
    protocol: Protocol,
    rules: &[Rule],
    net: &NetConfig,
    config: &BenchConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Packet> {
    let total = config.packets_per_protocol;
    let crafted_share = config.crafted_ratio / (1.0 + config.crafted_ratio);
    let crafted_count = ((total as f64 * crafted_share).round() as usize).min(total);
    let mut packets = Vec::with_capacity(total);
    for i in 0..crafted_count {
        let rule = &rules[i % rules.len()];
        match craft_packet_for(rule, net, rng) {
            Ok(packet) => packets.push(packet),
            Err(_) => packets.push(random_packet_for(protocol, rng)),
        }
    }
    while packets.len() < total {
        packets.push(random_packet_for(protocol, rng));
    }
    packets.shuffle(rng);
    packets
}

/// Runs the full harness: for every matchable protocol with rules,
/// build its trie, verify both engines agree on every packet, then time
/// them on identical packet sequences. Returns one report per measured
/// protocol, so a rule set covering tcp, udp and icmp yields three.
pub fn run_benchmark(
    rules: &[Rule],
    net: &NetConfig,
    config: &BenchConfig,
) -> Result<Vec<BenchReport>, BenchError> {
    if rules.is_empty() {
        return Err(BenchError::NoRules);
    }
    if config.packets_per_protocol == 0 {
        return Err(BenchError::NoPackets);
    }
    if !(config.crafted_ratio.is_finite() && config.crafted_ratio > 0.0) {
        return Err(BenchError::InvalidRatio(config.crafted_ratio));
    }
    let repetitions = config.repetitions.max(3);
    let tries = ProtocolTries::build(rules)?;
    validate_resolvable(rules, net)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut reports = Vec::new();
    for protocol in Protocol::MATCHABLE {
        let subset: Vec<Rule> = rules
            .iter()
            .filter(|r| r.protocol == protocol)
            .cloned()
            .collect();
        if subset.is_empty() {
            continue;
        }
        let trie = tries.get(protocol).expect("subset is nonempty");
        let packets = protocol_packets(protocol, &subset, net, config, &mut rng);

        // Equivalence gate and warm-up in one pass. The traced walk,
        // the lean walk and the linear scan must all agree.
        let mut lean = Vec::new();
        for (index, packet) in packets.iter().enumerate() {
            let trace = trie.match_packet(packet, net)?;
            trie.match_sids_into(packet, net, &mut lean)?;
            let linear = linear_match(&subset, packet, net)?;
            if trace.matched_sids != linear || lean != linear {
                return Err(BenchError::Divergence {
                    protocol,
                    index,
                    dfa: trace.matched_sids,
                    linear,
                });
            }
        }

        // Timed loops use the buffer-reusing entry points on both sides
        // so neither engine pays per-packet allocation.
        let mut buf = Vec::new();
        let mut linear_means = Vec::with_capacity(repetitions);
        let mut dfa_means = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let start = Instant::now();
            for packet in &packets {
                linear_match_into(&subset, packet, net, &mut buf)
                    .expect("validated before timing");
                std::hint::black_box(&mut buf);
            }
            linear_means.push(start.elapsed().as_nanos() as f64 / packets.len() as f64);

            let start = Instant::now();
            for packet in &packets {
                trie.match_sids_into(packet, net, &mut buf)
                    .expect("validated before timing");
                std::hint::black_box(&mut buf);
            }
            dfa_means.push(start.elapsed().as_nanos() as f64 / packets.len() as f64);
        }

        let mean_ns_linear = median(linear_means);
        let mean_ns_dfa = median(dfa_means);
        reports.push(BenchReport {
            protocol,
            rule_count: subset.len(),
            packet_count: packets.len(),
            repetitions,
            mean_ns_dfa,
            mean_ns_linear,
            speedup: mean_ns_linear / mean_ns_dfa,
            equivalence_checked: true,
            mismatch_count: 0,
        });
    }
    Ok(reports)
}

/// Overall speedup across reports: total linear time over total trie
/// time, weighted by each report's packet count.
pub fn aggregate_speedup(reports: &[BenchReport]) -> f64 {
    let linear: f64 = reports
        .iter()
        .map(|r| r.mean_ns_linear * r.packet_count as f64)
        .sum();
    let dfa: f64 = reports
        .iter()
        .map(|r| r.mean_ns_dfa * r.packet_count as f64)
        .sum();
    linear / dfa
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::parse_rule;
    use crate::synth::{generate_rules, synth_net, SynthConfig};

    #[test]
    fn median_of_means() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(vec![5.0]), 5.0);
    }

    #[test]
    fn one_report_per_covered_protocol() {
        let out = generate_rules(&SynthConfig { rules_per_protocol: 10, seed: 21, cve_fraction: 0.3 });
        let config = BenchConfig {
            repetitions: 1,
            packets_per_protocol: 60,
            seed: 22,
            ..BenchConfig::default()
        };
        let reports = run_benchmark(&out.rules, &out.net, &config).unwrap();
        assert_eq!(reports.len(), 3);
        let protocols: Vec<Protocol> = reports.iter().map(|r| r.protocol).collect();
        assert_eq!(protocols, Protocol::MATCHABLE.to_vec());
        for report in &reports {
            assert_eq!(report.rule_count, 10);
            assert_eq!(report.packet_count, 60);
            assert_eq!(report.repetitions, 3);
            assert!(report.mean_ns_linear > 0.0);
            assert!(report.mean_ns_dfa > 0.0);
            assert!(report.speedup > 0.0);
            assert!(report.equivalence_checked);
            assert_eq!(report.mismatch_count, 0);
        }
        let json = serde_json::to_string(&reports).unwrap();
        assert!(json.starts_with('['));
        assert!(json.contains("\"protocol\":\"tcp\""));
        assert!(json.contains("\"mean_ns_dfa\""));
        let aggregate = aggregate_speedup(&reports);
        assert!(aggregate > 0.0);
    }

    #[test]
    fn single_rule_single_packet_report_is_well_formed() {
        let rule =
            parse_rule(r#"alert tcp any any -> any 80 (msg:"one"; content:"abc"; sid:1;)"#)
                .unwrap();
        let config = BenchConfig {
            repetitions: 1,
            packets_per_protocol: 1,
            seed: 7,
            ..BenchConfig::default()
        };
        let reports = run_benchmark(&[rule], &NetConfig::default(), &config).unwrap();
        assert_eq!(reports.len(), 1);
        let report = &reports[0];
        assert_eq!(report.protocol, Protocol::Tcp);
        assert_eq!(report.rule_count, 1);
        assert_eq!(report.packet_count, 1);
        assert!(report.speedup > 0.0);
        assert_eq!(report.mismatch_count, 0);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let out = generate_rules(&SynthConfig { rules_per_protocol: 2, seed: 1, cve_fraction: 0.0 });
        let no_packets = BenchConfig { packets_per_protocol: 0, ..BenchConfig::default() };
        assert!(matches!(
            run_benchmark(&out.rules, &out.net, &no_packets),
            Err(BenchError::NoPackets)
        ));
        let bad_ratio = BenchConfig { crafted_ratio: 0.0, ..BenchConfig::default() };
        assert!(matches!(
            run_benchmark(&out.rules, &out.net, &bad_ratio),
            Err(BenchError::InvalidRatio(_))
        ));
        assert!(matches!(
            run_benchmark(&[], &synth_net(), &BenchConfig::default()),
            Err(BenchError::NoRules)
        ));
    }

    /// Growth trend on a fan-out heavy set: quadrupling the number of
    /// disjoint single-port rules must roughly quadruple the linear
    /// cost, while the trie cost stays near flat because the port level
    /// selects one subtree by lookup. Bounds are loose to tolerate
    /// scheduler noise.
    #[test]
    fn trie_cost_stays_flat_as_disjoint_rules_grow() {
        fn port_rules(n: u16) -> Vec<Rule> {
            (0..n)
                .map(|i| {
                    parse_rule(&format!(
                        r#"alert tcp any any -> any {} (msg:"p{i}"; content:"pat{i}"; sid:{};)"#,
                        2000 + i,
                        1 + u32::from(i),
                    ))
                    .unwrap()
                })
                .collect()
        }
        fn mean_ns(rules: &[Rule]) -> (f64, f64) {
            let config = BenchConfig {
                repetitions: 5,
                packets_per_protocol: 600,
                seed: 99,
                ..BenchConfig::default()
            };
            let reports = run_benchmark(rules, &NetConfig::default(), &config).unwrap();
            (reports[0].mean_ns_linear, reports[0].mean_ns_dfa)
        }
        // True ratios are near 4x for linear and near 1x for the trie;
        // the wide gap between the bounds absorbs noise from tests
        // running in parallel on shared cores.
        let (linear_small, dfa_small) = mean_ns(&port_rules(100));
        let (linear_large, dfa_large) = mean_ns(&port_rules(400));
        assert!(
            linear_large > linear_small * 1.7,
            "linear should grow with rule count: {linear_small} -> {linear_large}"
        );
        assert!(
            dfa_large < dfa_small * 3.0,
            "trie should stay near flat: {dfa_small} -> {dfa_large}"
        );
    }
}
