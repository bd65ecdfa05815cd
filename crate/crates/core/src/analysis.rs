//! S-curve math, parameter tuning, Jaccard intervals and accuracy scoring.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsh::{jaccard_records, Lsh};
use crate::model::{Dataset, Record};

/// Probability that two records with Jaccard index `j` share a band:
/// `1 - (1 - j^R)^B`.
pub fn match_probability(j: f64, bands: usize, rows: usize) -> f64 {
    if j <= 0.0 {
        return 0.0;
    }
    if j >= 1.0 {
        return 1.0;
    }
    let jr = (rows as f64 * j.ln()).exp();
    -(bands as f64 * (-jr).ln_1p()).exp_m1()
}

/// Jaccard index at which the S-curve is steepest, roughly `(1/B)^(1/R)`.
pub fn curve_threshold(bands: usize, rows: usize) -> f64 {
    (1.0 / bands as f64).powf(1.0 / rows as f64)
}

/// Normal-approximation interval for the Jaccard index of a pair that
/// agrees on `hits` of `bands` bands, at the two-sided quantile `z`.
/// Clamped to `[0, 1]`.
pub fn estimate_jaccard_interval_z(hits: usize, bands: usize, rows: usize, z: f64) -> (f64, f64) {
    assert!(bands >= 1 && rows >= 1 && hits <= bands);
    let (h, b) = (hits as f64, bands as f64);
    let t = b - h;
    let p = h / b;
    let half = z * (t * h / (b * b * b)).sqrt();
    let root = |x: f64| x.abs().powf(1.0 / rows as f64).clamp(0.0, 1.0);
    (root(p - half), root(p + half))
}

/// 95% interval; see [`estimate_jaccard_interval_z`].
pub fn estimate_jaccard_interval(hits: usize, bands: usize, rows: usize) -> (f64, f64) {
    estimate_jaccard_interval_z(hits, bands, rows, 1.96)
}

/// An S-curve shape and the similarity threshold it is meant to separate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSpec {
    pub bands: usize,
    pub rows: usize,
    pub threshold: f64,
}

impl CurveSpec {
    pub fn new(bands: usize, rows: usize, threshold: f64) -> Result<Self> {
        if bands == 0 || rows == 0 {
            return Err(Error::Config("bands and rows must be at least 1".into()));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::Config(format!("threshold {threshold} outside (0, 1)")));
        }
        Ok(CurveSpec { bands, rows, threshold })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneBounds {
    pub max_bands: usize,
    pub max_rows: usize,
    /// Largest allowed deviation from the target curve.
    pub epsilon: f64,
    pub grid_step: f64,
}

impl Default for TuneBounds {
    fn default() -> Self {
        TuneBounds { max_bands: 256, max_rows: 256, epsilon: 0.05, grid_step: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub bands: usize,
    pub rows: usize,
    pub max_deviation: f64,
    pub curve_threshold: f64,
}

fn grid(step: f64) -> impl Iterator<Item = f64> {
    let n = (1.0 / step).round() as usize;
    (0..=n).map(move |i| (i as f64 * step).min(1.0))
}

/// Largest gap between two S-curves over a Jaccard grid.
pub fn curve_distance(a: (usize, usize), b: (usize, usize), step: f64) -> f64 {
    grid(step)
        .map(|j| (match_probability(j, a.0, a.1) - match_probability(j, b.0, b.1)).abs())
        .fold(0.0, f64::max)
}

/// Smallest `B` (then smallest `R`) whose curve stays within `epsilon` of the
/// target curve on the grid.
pub fn tune_parameters(target: &CurveSpec, bounds: &TuneBounds) -> Result<TuneResult> {
    if !(bounds.grid_step > 0.0 && bounds.grid_step <= 1.0) || bounds.epsilon < 0.0 {
        return Err(Error::Config("grid step must be in (0, 1] and epsilon non-negative".into()));
    }
    let want: Vec<f64> = grid(bounds.grid_step).map(|j| match_probability(j, target.bands, target.rows)).collect();
    for bands in 1..=bounds.max_bands {
        let hit = (1..=bounds.max_rows).into_par_iter().find_first(|&rows| {
            grid(bounds.grid_step)
                .zip(&want)
                .all(|(j, w)| (match_probability(j, bands, rows) - w).abs() <= bounds.epsilon)
        });
        if let Some(rows) = hit {
            return Ok(TuneResult {
                bands,
                rows,
                max_deviation: curve_distance((bands, rows), (target.bands, target.rows), bounds.grid_step),
                curve_threshold: curve_threshold(bands, rows),
            });
        }
    }
    Err(Error::Infeasible(format!(
        "no (B, R) with B <= {} and R <= {} within {} of the ({}, {}) curve",
        bounds.max_bands, bounds.max_rows, bounds.epsilon, target.bands, target.rows
    )))
}

/// Samples of the S-curve as `(J, probability)` rows.
pub fn curve_samples(bands: usize, rows: usize, step: f64) -> Vec<(f64, f64)> {
    grid(step).map(|j| (j, match_probability(j, bands, rows))).collect()
}

/// Write curve samples as a two-column CSV.
pub fn write_curve_csv<W: Write>(w: W, samples: &[(f64, f64)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["jaccard", "probability"])?;
    for (j, p) in samples {
        out.write_record([format!("{j:.2}"), format!("{p:.9}")])?;
    }
    out.flush()?;
    Ok(())
}

/// Which entity each record of the two datasets belongs to.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    left: HashMap<String, String>,
    right: HashMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthRow {
    side: String,
    id: String,
    entity: String,
}

impl GroundTruth {
    pub fn insert_left_or_right(&mut self, left: bool, id: String, entity: String) {
        if left {
            self.left.insert(id, entity);
        } else {
            self.right.insert(id, entity);
        }
    }

    pub fn left_entity(&self, id: &str) -> Option<&str> {
        self.left.get(id).map(String::as_str)
    }

    pub fn right_entity(&self, id: &str) -> Option<&str> {
        self.right.get(id).map(String::as_str)
    }

    /// All (left id, right id) pairs that share an entity.
    pub fn true_pairs(&self) -> BTreeSet<(String, String)> {
        let mut by_entity: HashMap<&str, Vec<&str>> = HashMap::new();
        for (id, e) in &self.right {
            by_entity.entry(e).or_default().push(id);
        }
        let mut out = BTreeSet::new();
        for (a, e) in &self.left {
            for b in by_entity.get(e.as_str()).into_iter().flatten() {
                out.insert((a.clone(), (*b).to_owned()));
            }
        }
        out
    }

    /// CSV with columns `side,id,entity`, where side is `a` or `b`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut rows: Vec<TruthRow> = Vec::with_capacity(self.left.len() + self.right.len());
        for (side, map) in [("a", &self.left), ("b", &self.right)] {
            let mut ids: Vec<_> = map.iter().collect();
            ids.sort();
            rows.extend(ids.into_iter().map(|(id, e)| TruthRow { side: side.into(), id: id.clone(), entity: e.clone() }));
        }
        for r in rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut truth = GroundTruth::default();
        for row in csv::Reader::from_reader(r).deserialize() {
            let row: TruthRow = row?;
            match row.side.as_str() {
                "a" => truth.left.insert(row.id, row.entity),
                "b" => truth.right.insert(row.id, row.entity),
                other => return Err(Error::Input(format!("ground truth side {other:?} is neither a nor b"))),
            };
        }
        Ok(truth)
    }
}

/// Confusion counts and derived metrics for a set of reported pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when nothing was reported, so precision is not defined and is
    /// given as 0.
    pub precision_undefined: bool,
    /// Estimated leakage `tau * |res| / N_r`, when a tau estimate is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leakage: Option<f64>,
}

/// Score reported (left id, right id) pairs against the ground truth.
pub fn evaluate_accuracy(reported: &[(String, String)], truth: &GroundTruth) -> Result<AccuracyReport> {
    let reported: BTreeSet<(&str, &str)> = reported.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let mut tp = 0;
    for (a, b) in &reported {
        let ea = truth.left_entity(a).ok_or_else(|| Error::Input(format!("no ground truth for {a:?}")))?;
        let eb = truth.right_entity(b).ok_or_else(|| Error::Input(format!("no ground truth for {b:?}")))?;
        if ea == eb {
            tp += 1;
        }
    }
    let fp = reported.len() - tp;
    let fn_ = truth.true_pairs().len() - tp;
    let precision = if reported.is_empty() { 0.0 } else { tp as f64 / reported.len() as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(AccuracyReport {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        precision,
        recall,
        f1,
        precision_undefined: reported.is_empty(),
        leakage: None,
    })
}

/// Plaintext LSH linkage: every (left, right, band hits) pair sharing at
/// least one band signature.
pub fn plaintext_matches(left: &[Record], right: &[Record], lsh: &Lsh) -> Result<Vec<(usize, usize, usize)>> {
    let sigs = |rs: &[Record]| rs.par_iter().map(|r| lsh.signatures(r)).collect::<Result<Vec<_>>>();
    let (ls, rs) = (sigs(left)?, sigs(right)?);
    let mut index: HashMap<(usize, &[u8; 32]), Vec<usize>> = HashMap::new();
    for (i, s) in rs.iter().enumerate() {
        for (band, sig) in s.as_slice().iter().enumerate() {
            index.entry((band, sig)).or_default().push(i);
        }
    }
    let mut out = Vec::new();
    for (i, s) in ls.iter().enumerate() {
        let mut hits: HashMap<usize, usize> = HashMap::new();
        for (band, sig) in s.as_slice().iter().enumerate() {
            for &j in index.get(&(band, sig)).into_iter().flatten() {
                *hits.entry(j).or_default() += 1;
            }
        }
        let mut pairs: Vec<_> = hits.into_iter().map(|(j, h)| (i, j, h)).collect();
        pairs.sort_unstable();
        out.extend(pairs);
    }
    Ok(out)
}

/// Empirical false-positive rate of LSH matching against a Jaccard threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauEstimate {
    pub tau: f64,
    pub matched_pairs: usize,
    pub below_threshold: usize,
}

/// Estimate tau by perturbing a sample of `ds`: records are matched against
/// perturbed copies of the sample, and a reported pair counts as a false
/// positive when its exact Jaccard index is below `threshold`.
pub fn estimate_tau(
    ds: &Dataset,
    lsh: &Lsh,
    threshold: f64,
    typo_rate: f64,
    sample: usize,
    seed: u64,
) -> Result<TauEstimate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let local = crate::protocol::prepare_dataset(ds, lsh.specs());
    let mut picked: Vec<&Record> = local.records().iter().collect();
    if picked.len() > sample {
        picked = rand::seq::index::sample(&mut rng, picked.len(), sample).into_iter().map(|i| picked[i]).collect();
    }
    let originals: Vec<Record> = picked.iter().map(|r| (*r).clone()).collect();
    let perturbed: Vec<Record> = picked
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let p = crate::synth::perturb(r, format!("p{i}"), typo_rate, &mut rng);
            crate::model::preprocess(&p, lsh.specs())
        })
        .filter(|r| !crate::model::group_strings(r, lsh.specs()).iter().all(String::is_empty))
        .collect();
    let pairs = plaintext_matches(&originals, &perturbed, lsh)?;
    let below = pairs
        .iter()
        .filter(|(i, j, _)| jaccard_records(&originals[*i], &perturbed[*j], lsh.specs()).value() < threshold)
        .count();
    let tau = if pairs.is_empty() { 0.0 } else { below as f64 / pairs.len() as f64 };
    Ok(TauEstimate { tau, matched_pairs: pairs.len(), below_threshold: below })
}
