//! Command-line front end: rule curation, trie matching, traffic
//! generation, trie inspection and the matching benchmark.
//!
//! Exit codes: 0 success, 1 unreadable input or unresolvable
//! environment, 2 rule parse diagnostics, 3 matcher divergence.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use sigproc::bench::{
    aggregate_speedup, run_benchmark, BenchConfig, BenchError, PASS_THRESHOLD, REFERENCE_SPEEDUP,
};
use sigproc::curation::{run_pipeline, write_outputs, CurationConfig};
use sigproc::engine::{linear_match, validate_resolvable, NetConfig, ProtocolTries};
use sigproc::rules::{parse_rules_text, Cidr, ParseDiagnostic, PortSpec, Protocol, Rule};
use sigproc::severity::SeverityStore;
use sigproc::synth::{generate_rules, synth_net, SynthConfig};
use sigproc::traffic::{generate_traffic_seeded, read_packets_jsonl, write_packets_jsonl};

const EXIT_DIAGNOSTICS: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

/// Environment variable that makes `match` corrupt its own trie results
/// before the linear cross-check, to exercise the divergence guard.
const INJECT_DIVERGENCE_VAR: &str = "SIGPROC_INJECT_DIVERGENCE";

/// Signature curation, trie matching and benchmarking.
#[derive(Parser)]
#[command(name = "sigproc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Partition a rule set by timeline, severity and action.
    Curate(CurateArgs),
    /// Match packets against per-protocol signature tries.
    Match(MatchArgs),
    /// Time trie matching against the linear baseline.
    Bench(BenchArgs),
    /// Generate a seeded packet corpus for a rule set.
    GenTraffic(GenTrafficArgs),
    /// Print the per-protocol tries compiled from a rule set.
    DumpTrie(DumpTrieArgs),
}

/// Network environment selection shared by the matching commands.
#[derive(Args, Default)]
struct ConfigArgs {
    /// TOML config file with home_net, port_vars and curation settings.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Home network cidrs, comma separated; overrides the config file.
    #[arg(long, value_name = "CIDR[,CIDR]")]
    home_net: Option<String>,
    /// Port variable definition; repeatable, overrides the config file.
    #[arg(long, value_name = "NAME=SPEC")]
    port_var: Vec<String>,
}

impl ConfigArgs {
    fn is_empty(&self) -> bool {
        self.config.is_none() && self.home_net.is_none() && self.port_var.is_empty()
    }
}

#[derive(Args)]
struct CurateArgs {
    /// Rule file to curate.
    #[arg(long, value_name = "PATH")]
    rules: PathBuf,
    /// Severity feed csv: cve_id,base_score,published_year.
    #[arg(long, value_name = "PATH")]
    feed: PathBuf,
    /// Directory the partitioned sets are written to.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// Disable rules whose newest dated reference is older than this.
    #[arg(long, value_name = "N")]
    cutoff_year: Option<i32>,
    /// Minimum CVSS base score for the signature set.
    #[arg(long, value_name = "X")]
    severity_threshold: Option<f64>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct MatchArgs {
    /// Rule file the tries are compiled from.
    #[arg(long, value_name = "PATH")]
    rules: PathBuf,
    /// Packet file, JSON Lines.
    #[arg(long, value_name = "PATH")]
    packets: PathBuf,
    /// Append nodes visited and per-level eliminations to each line.
    #[arg(long)]
    trace: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Rule file to benchmark; omitted, a synthetic set is generated.
    #[arg(long, value_name = "PATH")]
    rules: Option<PathBuf>,
    /// Rules per protocol for the synthetic set.
    #[arg(long, value_name = "N", default_value_t = 100)]
    rules_per_proto: usize,
    #[arg(long, value_name = "N", default_value_t = 0)]
    seed: u64,
    /// Crafted-to-random packet ratio.
    #[arg(long, value_name = "X", default_value_t = 1.0)]
    crafted_ratio: f64,
    /// Packets generated per protocol.
    #[arg(long, value_name = "N", default_value_t = 1000)]
    packets_per_proto: usize,
    /// Timed passes per engine, minimum 3.
    #[arg(long, value_name = "N", default_value_t = 5)]
    repetitions: usize,
    /// Write the JSON report array here.
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct GenTrafficArgs {
    /// Rule file to craft against; omitted, a synthetic set is generated.
    #[arg(long, value_name = "PATH")]
    rules: Option<PathBuf>,
    /// Rules per protocol for the synthetic set.
    #[arg(long, value_name = "N", default_value_t = 100)]
    rules_per_proto: usize,
    #[arg(long, value_name = "N", default_value_t = 0)]
    seed: u64,
    /// Packets to generate.
    #[arg(long, value_name = "N", default_value_t = 1000)]
    count: usize,
    /// Fraction of packets crafted to match a rule, 0.0 to 1.0.
    #[arg(long, value_name = "X", default_value_t = 0.5)]
    crafted_fraction: f64,
    /// Output packet file, JSON Lines.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct DumpTrieArgs {
    /// Rule file to compile; omitted, a synthetic set is generated.
    #[arg(long, value_name = "PATH")]
    rules: Option<PathBuf>,
    /// Rules per protocol for the synthetic set.
    #[arg(long, value_name = "N", default_value_t = 100)]
    rules_per_proto: usize,
    #[arg(long, value_name = "N", default_value_t = 0)]
    seed: u64,
}

/// Schema of the optional TOML config file. All keys are optional; the
/// matching commands read the network section, curate reads the rest.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    home_net: Vec<String>,
    #[serde(default)]
    port_vars: BTreeMap<String, String>,
    cutoff_year: Option<i32>,
    severity_threshold: Option<f64>,
    #[serde(default)]
    relevance_ports: BTreeMap<String, Vec<String>>,
}

/// File config plus the network environment resolved from file and
/// command-line overrides together.
struct Resolved {
    net: NetConfig,
    file: FileConfig,
}

fn load_config(args: &ConfigArgs) -> Result<Resolved> {
    let file: FileConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
        }
        None => FileConfig::default(),
    };

    let home_strings: Vec<String> = match &args.home_net {
        Some(list) => list
            .split(',')
            .map(|t| t.trim().to_string())
            .filter(|t| !t.is_empty())
            .collect(),
        None => file.home_net.clone(),
    };
    let mut home = Vec::with_capacity(home_strings.len());
    for text in &home_strings {
        home.push(text.parse::<Cidr>().map_err(|e| anyhow::anyhow!("home_net: {e}"))?);
    }

    let mut vars = BTreeMap::new();
    for (name, spec) in &file.port_vars {
        let spec = spec
            .parse::<PortSpec>()
            .map_err(|e| anyhow::anyhow!("port_vars.{name}: {e}"))?;
        vars.insert(name.clone(), spec);
    }
    for def in &args.port_var {
        let (name, spec) = def
            .split_once('=')
            .with_context(|| format!("--port-var '{def}' is not NAME=SPEC"))?;
        let spec = spec
            .parse::<PortSpec>()
            .map_err(|e| anyhow::anyhow!("--port-var {name}: {e}"))?;
        vars.insert(name.to_string(), spec);
    }

    let net = NetConfig::new(home, vars).map_err(anyhow::Error::msg)?;
    Ok(Resolved { net, file })
}

fn load_rules(path: &Path) -> Result<(Vec<Rule>, Vec<ParseDiagnostic>)> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading rules {}", path.display()))?;
    Ok(parse_rules_text(&text))
}

fn report_diagnostics(path: &Path, diagnostics: &[ParseDiagnostic]) {
    for diagnostic in diagnostics {
        eprintln!("{}: {diagnostic}", path.display());
    }
}

/// Loads rules from `path`, or generates a synthetic per-protocol set.
/// Synthetic sets come with the generator's own environment unless the
/// caller passed any network configuration.
fn rules_or_synth(
    path: &Option<PathBuf>,
    rules_per_proto: usize,
    seed: u64,
    config: &ConfigArgs,
) -> Result<(Vec<Rule>, NetConfig, Vec<ParseDiagnostic>)> {
    match path {
        Some(path) => {
            let (rules, diagnostics) = load_rules(path)?;
            let resolved = load_config(config)?;
            Ok((rules, resolved.net, diagnostics))
        }
        None => {
            let out = generate_rules(&SynthConfig {
                rules_per_protocol: rules_per_proto,
                seed,
                cve_fraction: 0.5,
            });
            let net = if config.is_empty() {
                synth_net()
            } else {
                load_config(config)?.net
            };
            Ok((out.rules, net, Vec::new()))
        }
    }
}

fn cmd_curate(args: CurateArgs) -> Result<u8> {
    let resolved = load_config(&args.config)?;
    let (rules, diagnostics) = load_rules(&args.rules)?;
    report_diagnostics(&args.rules, &diagnostics);

    let feed_text = fs::read_to_string(&args.feed)
        .with_context(|| format!("reading feed {}", args.feed.display()))?;
    let (store, feed_errors) = SeverityStore::ingest_feed(&feed_text);
    for error in &feed_errors {
        eprintln!("{}: {error}", args.feed.display());
    }

    let mut relevance_ports = BTreeMap::new();
    for (app, specs) in &resolved.file.relevance_ports {
        let mut parsed = Vec::with_capacity(specs.len());
        for spec in specs {
            parsed.push(
                spec.parse::<PortSpec>()
                    .map_err(|e| anyhow::anyhow!("relevance_ports.{app}: {e}"))?,
            );
        }
        relevance_ports.insert(app.clone(), parsed);
    }
    let defaults = CurationConfig::default();
    let config = CurationConfig {
        cutoff_year: args
            .cutoff_year
            .or(resolved.file.cutoff_year)
            .unwrap_or(defaults.cutoff_year),
        severity_threshold: args
            .severity_threshold
            .or(resolved.file.severity_threshold)
            .unwrap_or(defaults.severity_threshold),
        relevance_ports,
    };
    config.validate().map_err(anyhow::Error::msg)?;

    let sets = run_pipeline(&rules, &store, &config);
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    write_outputs(&sets, &args.out_dir)
        .with_context(|| format!("writing outputs to {}", args.out_dir.display()))?;

    println!(
        "curated {} rules: disable {}, candidate {}, signature {} (ips_drop {}, ids_alert {})",
        rules.len(),
        sets.disable.len(),
        sets.candidate.len(),
        sets.signature.len(),
        sets.ips_drop.len(),
        sets.ids_alert.len()
    );
    println!("outputs written to {}", args.out_dir.display());

    if diagnostics.is_empty() && feed_errors.is_empty() {
        Ok(0)
    } else {
        eprintln!(
            "{} rule diagnostics, {} feed errors",
            diagnostics.len(),
            feed_errors.len()
        );
        Ok(EXIT_DIAGNOSTICS)
    }
}

fn cmd_match(args: MatchArgs) -> Result<u8> {
    let resolved = load_config(&args.config)?;
    let (rules, diagnostics) = load_rules(&args.rules)?;
    if !diagnostics.is_empty() {
        report_diagnostics(&args.rules, &diagnostics);
        eprintln!("{} parse diagnostics; not matching", diagnostics.len());
        return Ok(EXIT_DIAGNOSTICS);
    }

    let file = File::open(&args.packets)
        .with_context(|| format!("reading packets {}", args.packets.display()))?;
    let packets = read_packets_jsonl(BufReader::new(file))
        .with_context(|| format!("parsing packets {}", args.packets.display()))?;

    let tries = ProtocolTries::build(&rules)?;
    validate_resolvable(&rules, &resolved.net)?;
    let inject = std::env::var_os(INJECT_DIVERGENCE_VAR).is_some();

    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for (index, packet) in packets.iter().enumerate() {
        let routed = tries.match_packet(packet, &resolved.net)?;
        let mut sids = routed.trace.matched_sids.clone();
        if inject {
            sids.push(u32::MAX);
        }
        let expected = linear_match(&rules, packet, &resolved.net)?;
        if sids != expected {
            out.flush()?;
            eprintln!(
                "matcher divergence on packet {index}: trie found {sids:?}, linear scan found {expected:?}"
            );
            return Ok(EXIT_DIVERGENCE);
        }

        if sids.is_empty() {
            write!(out, "pkt {index}: -")?;
        } else {
            let list = sids.iter().map(u32::to_string).collect::<Vec<_>>().join(", ");
            write!(out, "pkt {index}: sid {list}")?;
        }
        if args.trace {
            write!(
                out,
                " | visited {}, eliminated per level {:?}",
                routed.trace.nodes_visited, routed.trace.sids_eliminated_per_level
            )?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(0)
}

fn cmd_bench(args: BenchArgs) -> Result<u8> {
    let (rules, net, diagnostics) =
        rules_or_synth(&args.rules, args.rules_per_proto, args.seed, &args.config)?;
    if !diagnostics.is_empty() {
        let path = args.rules.as_deref().expect("diagnostics imply a rules file");
        report_diagnostics(path, &diagnostics);
        eprintln!("{} parse diagnostics; not benchmarking", diagnostics.len());
        return Ok(EXIT_DIAGNOSTICS);
    }

    let config = BenchConfig {
        repetitions: args.repetitions,
        crafted_ratio: args.crafted_ratio,
        packets_per_protocol: args.packets_per_proto,
        seed: args.seed,
    };
    let reports = match run_benchmark(&rules, &net, &config) {
        Ok(reports) => reports,
        Err(BenchError::Divergence { protocol, index, dfa, linear }) => {
            eprintln!(
                "matcher divergence on {protocol} packet {index}: trie found {dfa:?}, linear scan found {linear:?}"
            );
            return Ok(EXIT_DIVERGENCE);
        }
        Err(err) => return Err(err.into()),
    };

    for report in &reports {
        println!(
            "{}: {} rules, {} packets x {} reps, linear {:.0} ns/pkt, dfa {:.0} ns/pkt, speedup {:.2}x",
            report.protocol,
            report.rule_count,
            report.packet_count,
            report.repetitions,
            report.mean_ns_linear,
            report.mean_ns_dfa,
            report.speedup
        );
    }
    let overall = aggregate_speedup(&reports);
    let threshold = if overall >= PASS_THRESHOLD { "met" } else { "not met" };
    let reference = if overall >= REFERENCE_SPEEDUP { "met" } else { "not met" };
    println!(
        "overall speedup {overall:.2}x (pass threshold {PASS_THRESHOLD}x {threshold}, reference {REFERENCE_SPEEDUP}x {reference})"
    );

    if let Some(path) = &args.report {
        let json = serde_json::to_string_pretty(&reports)?;
        fs::write(path, json + "\n")
            .with_context(|| format!("writing report {}", path.display()))?;
        println!("report written to {}", path.display());
    }
    Ok(0)
}

fn cmd_gen_traffic(args: GenTrafficArgs) -> Result<u8> {
    if !(0.0..=1.0).contains(&args.crafted_fraction) {
        bail!("--crafted-fraction {} is not between 0 and 1", args.crafted_fraction);
    }
    let (rules, net, diagnostics) =
        rules_or_synth(&args.rules, args.rules_per_proto, args.seed, &args.config)?;
    if !diagnostics.is_empty() {
        let path = args.rules.as_deref().expect("diagnostics imply a rules file");
        report_diagnostics(path, &diagnostics);
        eprintln!("{} parse diagnostics; not generating", diagnostics.len());
        return Ok(EXIT_DIAGNOSTICS);
    }
    validate_resolvable(&rules, &net)?;

    let (packets, report) =
        generate_traffic_seeded(&rules, &net, args.count, args.crafted_fraction, args.seed);
    let file =
        File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_packets_jsonl(BufWriter::new(file), &packets)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "wrote {} packets to {} ({} crafted, {} random, {} craft fallbacks)",
        packets.len(),
        args.out.display(),
        report.crafted,
        report.random,
        report.fallbacks
    );
    Ok(0)
}

fn cmd_dump_trie(args: DumpTrieArgs) -> Result<u8> {
    let (rules, _, diagnostics) = rules_or_synth(
        &args.rules,
        args.rules_per_proto,
        args.seed,
        &ConfigArgs::default(),
    )?;
    if !diagnostics.is_empty() {
        let path = args.rules.as_deref().expect("diagnostics imply a rules file");
        report_diagnostics(path, &diagnostics);
        eprintln!("{} parse diagnostics; not dumping", diagnostics.len());
        return Ok(EXIT_DIAGNOSTICS);
    }
    let tries = ProtocolTries::build(&rules)?;
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for protocol in Protocol::MATCHABLE {
        if let Some(trie) = tries.get(protocol) {
            write!(out, "{}", trie.dump())?;
        }
    }
    out.flush()?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Curate(args) => cmd_curate(args),
        Command::Match(args) => cmd_match(args),
        Command::Bench(args) => cmd_bench(args),
        Command::GenTraffic(args) => cmd_gen_traffic(args),
        Command::DumpTrie(args) => cmd_dump_trie(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
