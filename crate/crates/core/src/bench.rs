//! Throughput benchmark over the in-memory transport.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::LinkageConfig;
use crate::error::Result;
use crate::protocol::{run_loopback, Variant};
use crate::synth::{generate, SynthConfig};

/// One benchmark row, measured on the sender.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub size: usize,
    pub bands: usize,
    pub comm_kb: f64,
    pub comm_time_s: f64,
    pub offline_time_s: f64,
    pub total_time_s: f64,
    pub matches: usize,
}

/// Run the base protocol once per size on generated data of that size.
pub fn run_bench(sizes: &[usize], cfg: &LinkageConfig, seed: u64) -> Result<Vec<BenchRow>> {
    let proto = cfg.protocol_config(Variant::Base)?;
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let data = generate(&SynthConfig::new(size, size.min(100), 0.05, seed ^ size as u64))?;
        let (sender, _) = run_loopback(&data.left, &data.right, &proto)?;
        let st = &sender.stats;
        rows.push(BenchRow {
            size,
            bands: cfg.bands,
            comm_kb: st.comm_kb(),
            comm_time_s: st.comm_time_s,
            offline_time_s: st.offline_time_s,
            total_time_s: st.total_time_s,
            matches: sender.match_count(),
        });
    }
    Ok(rows)
}

/// Growth between consecutive rows relative to linear extrapolation:
/// `(kb ratio, time ratio)`, where 1.0 means exactly linear.
pub fn growth_vs_linear(rows: &[BenchRow]) -> Vec<(f64, f64)> {
    rows.windows(2)
        .map(|w| {
            let scale = w[1].size as f64 / w[0].size as f64;
            (w[1].comm_kb / w[0].comm_kb / scale, w[1].total_time_s / w[0].total_time_s / scale)
        })
        .collect()
}

/// Whether every consecutive step grows within `factor` of linear.
pub fn is_near_linear(rows: &[BenchRow], factor: f64) -> bool {
    growth_vs_linear(rows)
        .iter()
        .all(|&(kb, t)| (1.0 / factor..=factor).contains(&kb) && (1.0 / factor..=factor).contains(&t))
}

pub fn write_bench_csv<W: Write>(w: W, rows: &[BenchRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["size", "bands", "comm_kb", "comm_time_s", "offline_time_s", "total_time_s", "matches"])?;
    for r in rows {
        out.write_record([
            r.size.to_string(),
            r.bands.to_string(),
            format!("{:.1}", r.comm_kb),
            format!("{:.3}", r.comm_time_s),
            format!("{:.3}", r.offline_time_s),
            format!("{:.3}", r.total_time_s),
            r.matches.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
