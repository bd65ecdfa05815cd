//! `lshpsi`: generate data, tune parameters, run either party of a linkage
//! session, score results and benchmark.

mod certs;
mod output;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use lshpsi::analysis::{
    curve_samples, curve_threshold, estimate_tau, evaluate_accuracy, tune_parameters, write_curve_csv, CurveSpec,
    GroundTruth, TuneBounds,
};
use lshpsi::bench::{growth_vs_linear, is_near_linear, run_bench, write_bench_csv};
use lshpsi::config::LinkageConfig;
use lshpsi::lsh::Lsh;
use lshpsi::model::Dataset;
use lshpsi::protocol::{run_loopback, run_receiver, run_sender, ProtocolConfig, Role, SessionOutcome, Variant};
use lshpsi::synth::{generate, SynthConfig, SCHEMA};
use lshpsi::transport::tls::{self, TlsCredentials};
use lshpsi::{Error, Result};
use sha2::{Digest, Sha256};

use output::{match_rows, read_matches, write_count, write_matches, Leakage, Report, RunManifest, ScoreSummary};

#[derive(Parser)]
#[command(name = "lshpsi", version, about = "Two-party private record linkage over LSH band signatures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write two synthetic person datasets with planted shared entities.
    Generate(GenerateArgs),
    /// Run one party of a linkage session (or both, in-process).
    Run(RunArgs),
    /// Find the fewest bands whose S-curve stays close to a target curve.
    Tune(TuneArgs),
    /// Time the base protocol over a range of dataset sizes.
    Bench(BenchArgs),
    /// Recompute intervals for a matches file and compare against ground truth.
    Score(ScoreArgs),
    /// Issue a test CA and one certificate per party.
    Certs(CertsArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    planted: usize,
    #[arg(long, default_value_t = 0.05)]
    typo_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for left.csv, right.csv, truth.csv and linkage.toml.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    role: Role,
    #[arg(long, default_value_t = Variant::Base)]
    variant: Variant,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Play the other party in-process on this dataset instead of connecting.
    #[arg(long, conflicts_with_all = ["listen", "connect"])]
    loopback: Option<PathBuf>,
    #[arg(long, conflicts_with = "connect")]
    listen: Option<String>,
    #[arg(long)]
    connect: Option<String>,
    /// Name the server certificate must carry.
    #[arg(long, default_value = "localhost")]
    server_name: String,
    /// Certificate chain (PEM); LSHPSI_CERT overrides.
    #[arg(long)]
    cert: Option<PathBuf>,
    /// Private key (PEM); LSHPSI_KEY overrides.
    #[arg(long)]
    key: Option<PathBuf>,
    /// Trusted CA (PEM); LSHPSI_CA overrides.
    #[arg(long)]
    ca: Option<PathBuf>,
    #[arg(long, default_value_t = 600)]
    timeout_secs: u64,
    /// Also run the shingle-cardinality sub-protocol on every matched pair.
    #[arg(long)]
    exact_jaccard: bool,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to the output path with a `.manifest.json` suffix.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Local records sampled to estimate the false-positive rate; 0 skips it.
    #[arg(long, default_value_t = 500)]
    tau_sample: usize,
    #[arg(long, default_value_t = 0.05)]
    tau_typo_rate: f64,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    bands: usize,
    #[arg(long)]
    rows: usize,
    /// Defaults to the target curve's own threshold `(1/B)^(1/R)`.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value_t = 256)]
    max_bands: usize,
    #[arg(long, default_value_t = 256)]
    max_rows: usize,
    /// Write the recommended curve as `jaccard,probability` rows.
    #[arg(long)]
    curve_out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [256usize, 1024, 4096])]
    sizes: Vec<usize>,
    /// Linkage configuration; the synthetic default when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    bands: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    matches: PathBuf,
    /// Supplies B and R for the interval.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Normal quantile of the interval.
    #[arg(long, default_value_t = 1.96)]
    z: f64,
    /// Write the rescored matches here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CertsArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = ["localhost".to_string(), "127.0.0.1".to_string()])]
    hosts: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Run(a) => cmd_run(a),
        Command::Tune(a) => cmd_tune(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Score(a) => cmd_score(a),
        Command::Certs(a) => certs::cmd_certs(&a.out, &a.hosts),
    };
    match out {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.code();
            eprintln!("error [{code:?}]: {e}");
            ExitCode::from(code as u8)
        }
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value).expect("serializable") + "\n")?;
    Ok(())
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn lsh_seed_for(seed: u64) -> [u8; 32] {
    Sha256::new().chain_update(b"lshpsi synthetic lsh seed").chain_update(seed.to_be_bytes()).finalize().into()
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let data = generate(&SynthConfig::new(a.n, a.planted, a.typo_rate, a.seed))?;
    fs::create_dir_all(&a.out)?;
    data.left.write_csv(fs::File::create(a.out.join("left.csv"))?, &SCHEMA)?;
    data.right.write_csv(fs::File::create(a.out.join("right.csv"))?, &SCHEMA)?;
    data.truth.write_csv(fs::File::create(a.out.join("truth.csv"))?)?;
    let cfg = LinkageConfig::synthetic_default(lsh_seed_for(a.seed));
    fs::write(a.out.join("linkage.toml"), cfg.to_toml_string())?;
    println!(
        "wrote {} + {} records, {} planted pairs to {}",
        data.left.len(),
        data.right.len(),
        data.truth.true_pairs().len(),
        a.out.display()
    );
    Ok(())
}

fn file_sha256(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn credentials(a: &RunArgs) -> Result<TlsCredentials> {
    TlsCredentials::from_env_or(a.cert.as_deref(), a.key.as_deref(), a.ca.as_deref())
}

fn run_party<C: lshpsi::transport::Channel>(
    role: Role,
    ds: &Dataset,
    cfg: &ProtocolConfig,
    ch: &mut C,
) -> Result<SessionOutcome> {
    match role {
        Role::Sender => run_sender(ds, cfg, ch),
        Role::Receiver => run_receiver(ds, cfg, ch),
    }
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let mut linkage = LinkageConfig::from_path(&a.config)?;
    linkage.exact_jaccard |= a.exact_jaccard;
    let cfg = linkage.protocol_config(a.variant)?;
    let id_col = linkage.id_column.as_deref();
    let ds = Dataset::from_csv_path(&a.dataset, id_col)?;
    let timeout = Some(Duration::from_secs(a.timeout_secs));

    let (outcome, peer) = if let Some(peer_path) = &a.loopback {
        let peer_ds = Dataset::from_csv_path(peer_path, id_col)?;
        let (s, r) = match a.role {
            Role::Sender => run_loopback(&ds, &peer_ds, &cfg)?,
            Role::Receiver => {
                let (s, r) = run_loopback(&peer_ds, &ds, &cfg)?;
                (r, s)
            }
        };
        (s, Some(r))
    } else if let Some(addr) = &a.listen {
        let creds = credentials(&a)?;
        let listener = TcpListener::bind(addr)?;
        eprintln!("listening on {}", listener.local_addr()?);
        let mut ch = tls::accept(&listener, &creds, timeout)?;
        let out = run_party(a.role, &ds, &cfg, &mut ch);
        tls::close(ch.get_mut());
        (out?, None)
    } else if let Some(addr) = &a.connect {
        let creds = credentials(&a)?;
        let mut ch = tls::connect(addr.as_str(), &a.server_name, &creds, timeout)?;
        let out = run_party(a.role, &ds, &cfg, &mut ch);
        tls::close(ch.get_mut());
        (out?, None)
    } else {
        return Err(Error::Config("one of --loopback, --listen or --connect is required".into()));
    };

    let (bands, rows) = (linkage.bands, linkage.rows);
    if a.variant == Variant::Count {
        write_count(&a.out, outcome.count)?;
    } else {
        let resolve = peer.as_ref().map(|p| move |block: u64| p.resolve_own_block(block).map(str::to_owned));
        let resolve_ref = resolve.as_ref().map(|f| f as &dyn Fn(u64) -> Option<String>);
        write_matches(&a.out, &match_rows(&outcome, bands, rows, resolve_ref))?;
    }

    let leakage = if a.tau_sample > 0 && (outcome.count.is_some() || !outcome.result.is_empty()) {
        let lsh = Lsh::new(cfg.params.clone(), cfg.specs.clone());
        let tau = estimate_tau(&ds, &lsh, linkage.threshold, a.tau_typo_rate, a.tau_sample, 0)?;
        Some(Leakage { tau: tau.tau, sampled_pairs: tau.matched_pairs, bound: outcome.leakage_bound(tau.tau) })
    } else {
        None
    };

    let manifest = RunManifest {
        config_path: a.config.clone(),
        dataset_path: a.dataset.clone(),
        dataset_sha256: file_sha256(&a.dataset)?,
        peer_dataset_path: a.loopback.clone(),
        role: a.role,
        variant: a.variant,
        output_path: a.out.clone(),
        seed: linkage.seed.clone(),
        bands,
        rows,
        params_digest: hex::encode(cfg.params_digest()),
        spec_digest: hex::encode(cfg.spec_digest()),
        local_records: outcome.result.local_size,
        peer_records: outcome.result.peer_size,
        matched_records: outcome.result.len(),
        matched_pairs: outcome.pair_count(),
        count: outcome.count,
        revealed_local: outcome.revealed_local.clone(),
        leakage,
        report: Report::from(&outcome.stats),
    };
    let manifest_path = a.manifest.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".manifest.json");
        p.into()
    });
    write_json(&manifest_path, &manifest)?;
    let st = &manifest.report;
    match outcome.count {
        Some(n) => println!("{} {}: {n} matched records", a.role_name(), a.variant),
        None => println!(
            "{} {}: {} matched records, {} pairs",
            a.role_name(),
            a.variant,
            manifest.matched_records,
            manifest.matched_pairs
        ),
    }
    println!(
        "comm {:.1} KB, comm {:.3} s, offline {:.3} s, total {:.3} s",
        st.comm_kb, st.comm_time_s, st.offline_time_s, st.total_time_s
    );
    Ok(())
}

impl RunArgs {
    fn role_name(&self) -> &'static str {
        match self.role {
            Role::Sender => "sender",
            Role::Receiver => "receiver",
        }
    }
}

fn cmd_tune(a: TuneArgs) -> Result<()> {
    let threshold = a.threshold.unwrap_or_else(|| curve_threshold(a.bands, a.rows));
    let target = CurveSpec::new(a.bands, a.rows, threshold)?;
    let bounds = TuneBounds { max_bands: a.max_bands, max_rows: a.max_rows, epsilon: a.epsilon, ..Default::default() };
    let got = tune_parameters(&target, &bounds)?;
    if let Some(path) = &a.curve_out {
        write_curve_csv(fs::File::create(path)?, &curve_samples(got.bands, got.rows, bounds.grid_step))?;
    }
    print_json(&got);
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => LinkageConfig::from_path(p)?,
        None => LinkageConfig::synthetic_default(lsh_seed_for(a.seed)),
    };
    if let Some(b) = a.bands {
        cfg.bands = b;
        cfg.validate()?;
    }
    let rows = run_bench(&a.sizes, &cfg, a.seed)?;
    write_bench_csv(std::io::stdout().lock(), &rows)?;
    if let Some(path) = &a.out {
        write_bench_csv(fs::File::create(path)?, &rows)?;
    }
    for (w, (kb, t)) in rows.windows(2).zip(growth_vs_linear(&rows)) {
        eprintln!("{} -> {}: comm x{kb:.2}, time x{t:.2} of linear", w[0].size, w[1].size);
    }
    eprintln!("within 2x of linear: {}", is_near_linear(&rows, 2.0));
    Ok(())
}

fn cmd_score(a: ScoreArgs) -> Result<()> {
    let cfg = LinkageConfig::from_path(&a.config)?;
    let mut rows = read_matches(&a.matches)?;
    for r in &mut rows {
        r.set_interval(cfg.bands, cfg.rows, a.z);
    }
    let exact: Vec<f64> = rows.iter().filter_map(|r| r.exact_jaccard.parse().ok()).collect();
    let mut histogram = BTreeMap::new();
    for r in &rows {
        *histogram.entry(r.band_hits).or_insert(0) += 1;
    }
    let accuracy = match &a.truth {
        Some(path) => {
            if rows.iter().any(|r| r.peer_id.is_empty()) {
                return Err(Error::Input("matches lack peer ids; score a loopback run".into()));
            }
            let truth = GroundTruth::read_csv(fs::File::open(path)?)?;
            let pairs: Vec<(String, String)> = rows.iter().map(|r| (r.local_id.clone(), r.peer_id.clone())).collect();
            Some(evaluate_accuracy(&pairs, &truth)?)
        }
        None => None,
    };
    if let Some(path) = &a.out {
        write_matches(path, &rows)?;
    }
    print_json(&ScoreSummary {
        pairs: rows.len(),
        records: rows.iter().map(|r| r.local_id.as_str()).collect::<BTreeSet<_>>().len(),
        mean_exact_jaccard: (!exact.is_empty()).then(|| exact.iter().sum::<f64>() / exact.len() as f64),
        histogram,
        accuracy,
    });
    Ok(())
}
