//! CVE severity data, ingested from a local CSV feed.
//!
//! Feed format: one `cve_id,base_score,published_year` record per line,
//! `#` comments allowed, an optional header row starting with `cve`
//! (e.g. `cve_id,base_score,published_year`) is skipped.

use std::collections::HashMap;
use std::fmt;

use crate::rules::cve_id_year;

/// Severity data for one CVE id.
#[derive(Debug, Clone, PartialEq)]
pub struct CveRecord {
    /// Full `CVE-<year>-<digits>` id.
    pub cve_id: String,
    /// CVSS base score in [0.0, 10.0].
    pub base_score: f64,
    /// Year the entry was published. At least 1999 and at least the
    /// id-embedded year minus one.
    pub published_year: i32,
}

/// One rejected feed row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for FeedError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "feed line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for FeedError {}

/// Lookup of an id that does not have the CVE shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedCveId(pub String);

impl fmt::Display for MalformedCveId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "'{}' does not match CVE-<year>-<digits>", self.0)
    }
}

impl std::error::Error for MalformedCveId {}

/// Immutable severity map built by [`SeverityStore::ingest_feed`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeverityStore {
    records: HashMap<String, CveRecord>,
    source_path: String,
}

impl SeverityStore {
    /// Parses a feed text. Well-formed rows become records (last write
    /// wins on duplicate ids); malformed rows are skipped and reported.
    pub fn ingest_feed(feed_text: &str) -> (Self, Vec<FeedError>) {
        Self::ingest_feed_from(feed_text, "<memory>")
    }

    /// Like [`SeverityStore::ingest_feed`], recording where the feed
    /// came from for error messages.
    pub fn ingest_feed_from(feed_text: &str, source_path: &str) -> (Self, Vec<FeedError>) {
        let mut store = SeverityStore {
            records: HashMap::new(),
            source_path: source_path.to_string(),
        };
        let mut errors = Vec::new();
        let mut saw_data_row = false;

        for (idx, raw) in feed_text.lines().enumerate() {
            let line = idx + 1;
            let row = raw.trim();
            if row.is_empty() || row.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = row.split(',').map(str::trim).collect();
            // Header row: first row whose id column starts with "cve"
            // but is not an actual CVE id.
            if !saw_data_row
                && fields[0].len() >= 3
                && fields[0][..3].eq_ignore_ascii_case("cve")
                && cve_id_year(fields[0]).is_none()
            {
                saw_data_row = true;
                continue;
            }
            saw_data_row = true;
            match parse_row(&fields) {
                Ok(record) => {
                    store.records.insert(record.cve_id.clone(), record);
                }
                Err(message) => errors.push(FeedError { line, message }),
            }
        }
        (store, errors)
    }

    /// Returns the record for a well-formed CVE id, `None` when the id
    /// was never ingested. A malformed id is an error, not a miss.
    pub fn lookup(&self, cve_id: &str) -> Result<Option<&CveRecord>, MalformedCveId> {
        if cve_id_year(cve_id).is_none() {
            return Err(MalformedCveId(cve_id.to_string()));
        }
        Ok(self.records.get(cve_id))
    }

    /// Number of distinct ids stored.
    pub fn ingested_count(&self) -> usize {
        self.records.len()
    }

    pub fn source_path(&self) -> &str {
        &self.source_path
    }
}

fn parse_row(fields: &[&str]) -> Result<CveRecord, String> {
    if fields.len() != 3 {
        return Err(format!(
            "expected 'cve_id,base_score,published_year', found {} fields",
            fields.len()
        ));
    }
    let cve_id = fields[0];
    let id_year =
        cve_id_year(cve_id).ok_or_else(|| format!("bad cve id '{cve_id}'"))?;
    let base_score: f64 = fields[1]
        .parse()
        .map_err(|_| format!("non-numeric score '{}'", fields[1]))?;
    if !(0.0..=10.0).contains(&base_score) {
        return Err(format!("score {base_score} out of range [0.0, 10.0]"));
    }
    let published_year: i32 = fields[2]
        .parse()
        .map_err(|_| format!("non-numeric year '{}'", fields[2]))?;
    if published_year < 1999 {
        return Err(format!("published year {published_year} before 1999"));
    }
    if published_year < id_year - 1 {
        return Err(format!(
            "published year {published_year} earlier than id year {id_year} - 1"
        ));
    }
    Ok(CveRecord {
        cve_id: cve_id.to_string(),
        base_score,
        published_year,
    })
}
