use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use lshpsi::analysis::{estimate_jaccard_interval_z, AccuracyReport};
use lshpsi::protocol::{Role, SessionOutcome, SessionStats, Variant};
use serde::{Deserialize, Serialize};

pub const MATCH_HEADER: [&str; 10] = [
    "local_id",
    "peer_id",
    "hits",
    "band_hits",
    "j_lo",
    "j_hi",
    "exact_intersection",
    "exact_union",
    "exact_jaccard",
    "revealed",
];

/// One reported (local record, peer record) pair. Peer handles are
/// session-specific and never written, so files are stable across runs.
#[derive(Debug, Clone, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct MatchRow {
    pub local_id: String,
    pub peer_id: String,
    pub hits: u32,
    pub band_hits: u32,
    pub j_lo: String,
    pub j_hi: String,
    pub exact_intersection: String,
    pub exact_union: String,
    pub exact_jaccard: String,
    pub revealed: String,
}

fn fmt_j(v: f64) -> String {
    format!("{v:.6}")
}

impl MatchRow {
    pub fn set_interval(&mut self, bands: usize, rows: usize, z: f64) {
        let (lo, hi) = estimate_jaccard_interval_z(self.band_hits as usize, bands, rows, z);
        self.j_lo = fmt_j(lo);
        self.j_hi = fmt_j(hi);
    }
}

/// Rows for every pair in `outcome`. `peer_id` resolves a peer block to an
/// id when the peer's outcome is at hand (in-process runs).
pub fn match_rows(
    outcome: &SessionOutcome,
    bands: usize,
    rows: usize,
    peer_id: Option<&dyn Fn(u64) -> Option<String>>,
) -> Vec<MatchRow> {
    let mut out = Vec::new();
    for e in &outcome.result.entries {
        for p in &e.peers {
            let (inter, union, exact) = match p.exact_jaccard {
                Some((i, u)) => (i.to_string(), u.to_string(), fmt_j(if u == 0 { 1.0 } else { i as f64 / u as f64 })),
                None => Default::default(),
            };
            let mut row = MatchRow {
                local_id: e.local_id.clone(),
                peer_id: peer_id.and_then(|f| f(p.handle.block)).unwrap_or_default(),
                hits: e.hits,
                band_hits: p.band_hits,
                j_lo: String::new(),
                j_hi: String::new(),
                exact_intersection: inter,
                exact_union: union,
                exact_jaccard: exact,
                revealed: p.revealed.as_ref().map(|m| serde_json::to_string(m).unwrap()).unwrap_or_default(),
            };
            row.set_interval(bands, rows, 1.96);
            out.push(row);
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

pub fn write_matches(path: &Path, rows: &[MatchRow]) -> lshpsi::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(MATCH_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matches(path: &Path) -> lshpsi::Result<Vec<MatchRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows: Result<Vec<MatchRow>, _> = r.deserialize().collect();
    Ok(rows?)
}

pub fn write_count(path: &Path, count: Option<usize>) -> lshpsi::Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "count")?;
    if let Some(n) = count {
        writeln!(f, "{n}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub comm_kb: f64,
    pub comm_time_s: f64,
    pub offline_time_s: f64,
    pub total_time_s: f64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub frames_sent: u64,
    pub frames_received: u64,
    pub message_types: Vec<String>,
}

impl From<&SessionStats> for Report {
    fn from(s: &SessionStats) -> Self {
        Report {
            comm_kb: s.comm_kb(),
            comm_time_s: s.comm_time_s,
            offline_time_s: s.offline_time_s,
            total_time_s: s.total_time_s,
            bytes_sent: s.bytes_sent,
            bytes_received: s.bytes_received,
            frames_sent: s.frames_sent,
            frames_received: s.frames_received,
            message_types: s.message_types.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Leakage {
    pub tau: f64,
    pub sampled_pairs: usize,
    pub bound: f64,
}

/// What a run consumed and produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_path: PathBuf,
    pub dataset_path: PathBuf,
    pub dataset_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peer_dataset_path: Option<PathBuf>,
    pub role: Role,
    pub variant: Variant,
    pub output_path: PathBuf,
    /// Shared Min-Hash seed; the key and permutation are drawn fresh.
    pub seed: String,
    pub bands: usize,
    pub rows: usize,
    pub params_digest: String,
    pub spec_digest: String,
    pub local_records: usize,
    pub peer_records: usize,
    pub matched_records: usize,
    pub matched_pairs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub revealed_local: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leakage: Option<Leakage>,
    pub report: Report,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreSummary {
    pub pairs: usize,
    pub records: usize,
    pub mean_exact_jaccard: Option<f64>,
    pub histogram: BTreeMap<u32, usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<AccuracyReport>,
}
