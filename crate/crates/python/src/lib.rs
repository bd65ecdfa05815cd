use std::collections::BTreeMap;

use lshpsi::analysis::{curve_threshold, estimate_jaccard_interval, match_probability, tune_parameters, CurveSpec, TuneBounds};
use lshpsi::config::LinkageConfig;
use lshpsi::model::{Dataset, Record};
use lshpsi::protocol::{run_loopback, SessionOutcome, Variant};
use lshpsi::synth::{generate as synth_generate, SynthConfig};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(lshpsi_py, LinkageError, PyException);

fn py_err(e: lshpsi::Error) -> PyErr {
    LinkageError::new_err(format!("[{:?}] {e}", e.code()))
}

/// Shared linkage parameters: bands, rows, Min-Hash seed and field groups.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
pub struct PyConfig {
    inner: LinkageConfig,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        LinkageConfig::from_toml_str(text).map(|inner| PyConfig { inner }).map_err(py_err)
    }

    /// Defaults for the generated person schema. `seed` is 64 hex characters.
    #[staticmethod]
    #[pyo3(signature = (seed = None))]
    fn synthetic(seed: Option<&str>) -> PyResult<Self> {
        let mut inner = LinkageConfig::synthetic_default([0; 32]);
        if let Some(s) = seed {
            inner.seed = s.to_owned();
            inner.validate().map_err(py_err)?;
        }
        Ok(PyConfig { inner })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    #[getter]
    fn bands(&self) -> usize {
        self.inner.bands
    }

    #[setter]
    fn set_bands(&mut self, v: usize) -> PyResult<()> {
        let mut next = self.inner.clone();
        next.bands = v;
        next.validate().map_err(py_err)?;
        self.inner = next;
        Ok(())
    }

    #[getter]
    fn rows(&self) -> usize {
        self.inner.rows
    }

    #[setter]
    fn set_rows(&mut self, v: usize) -> PyResult<()> {
        let mut next = self.inner.clone();
        next.rows = v;
        next.validate().map_err(py_err)?;
        self.inner = next;
        Ok(())
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.inner.threshold
    }

    #[getter]
    fn exact_jaccard(&self) -> bool {
        self.inner.exact_jaccard
    }

    #[setter]
    fn set_exact_jaccard(&mut self, v: bool) {
        self.inner.exact_jaccard = v;
    }

    fn __repr__(&self) -> String {
        format!("Config(bands={}, rows={}, groups={})", self.inner.bands, self.inner.rows, self.inner.groups.len())
    }
}

/// An ordered set of records with unique ids.
#[pyclass(name = "Dataset", from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (path, id_column = None))]
    fn from_csv(path: &str, id_column: Option<&str>) -> PyResult<Self> {
        Dataset::from_csv_path(path, id_column).map(|inner| PyDataset { inner }).map_err(py_err)
    }

    /// Build from `(id, {field: value})` pairs.
    #[staticmethod]
    fn from_rows(rows: Vec<(String, BTreeMap<String, String>)>) -> PyResult<Self> {
        let records = rows.into_iter().map(|(id, fields)| Record { id, fields }).collect();
        Dataset::new(records).map(|inner| PyDataset { inner }).map_err(py_err)
    }

    fn ids(&self) -> Vec<String> {
        self.inner.records().iter().map(|r| r.id.clone()).collect()
    }

    fn rows(&self) -> Vec<(String, BTreeMap<String, String>)> {
        self.inner.records().iter().map(|r| (r.id.clone(), r.fields.clone())).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

type Generated = (PyDataset, PyDataset, Vec<(String, String)>);

/// Two synthetic datasets and their planted `(left id, right id)` pairs.
#[pyfunction]
#[pyo3(signature = (n, planted, typo_rate = 0.05, seed = 0))]
fn generate(n: usize, planted: usize, typo_rate: f64, seed: u64) -> PyResult<Generated> {
    let out = synth_generate(&SynthConfig::new(n, planted, typo_rate, seed)).map_err(py_err)?;
    let truth = out.truth.true_pairs().into_iter().collect();
    Ok((PyDataset { inner: out.left }, PyDataset { inner: out.right }, truth))
}

fn stats_dict<'py>(py: Python<'py>, o: &SessionOutcome) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("comm_kb", o.stats.comm_kb())?;
    d.set_item("comm_time_s", o.stats.comm_time_s)?;
    d.set_item("offline_time_s", o.stats.offline_time_s)?;
    d.set_item("total_time_s", o.stats.total_time_s)?;
    d.set_item("message_types", o.stats.message_types.clone())?;
    Ok(d)
}

type PairRow = (String, String, u32, f64, f64, Option<(u64, u64)>, Option<BTreeMap<String, String>>);

fn pair_rows(local: &SessionOutcome, peer: &SessionOutcome, bands: usize, rows: usize) -> Vec<PairRow> {
    let mut out = Vec::new();
    for e in &local.result.entries {
        for p in &e.peers {
            let peer_id = peer.resolve_own_block(p.handle.block).unwrap_or_default().to_owned();
            let (lo, hi) = estimate_jaccard_interval(p.band_hits as usize, bands, rows);
            out.push((e.local_id.clone(), peer_id, p.band_hits, lo, hi, p.exact_jaccard, p.revealed.clone()));
        }
    }
    out
}

/// Run both parties in-process. Returns a dict with the sender's pairs as
/// `(sender id, receiver id, band hits, j_lo, j_hi, exact, revealed)`, the
/// count (count variant), the receiver's pairs (mutual variant) and traffic.
#[pyfunction]
#[pyo3(signature = (sender, receiver, config, variant = "base"))]
fn link<'py>(
    py: Python<'py>,
    sender: &PyDataset,
    receiver: &PyDataset,
    config: &PyConfig,
    variant: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let variant: Variant = variant.parse().map_err(py_err)?;
    let cfg = config.inner.protocol_config(variant).map_err(py_err)?;
    let (s, r) = py
        .detach(|| run_loopback(&sender.inner, &receiver.inner, &cfg))
        .map_err(py_err)?;
    let (b, rw) = (config.inner.bands, config.inner.rows);
    let d = PyDict::new(py);
    d.set_item("pairs", pair_rows(&s, &r, b, rw))?;
    d.set_item("count", s.count)?;
    d.set_item("receiver_pairs", pair_rows(&r, &s, b, rw))?;
    d.set_item("revealed_local", r.revealed_local.clone())?;
    d.set_item("sender_stats", stats_dict(py, &s)?)?;
    d.set_item("receiver_stats", stats_dict(py, &r)?)?;
    Ok(d)
}

/// Probability that two records at Jaccard `j` share at least one band.
#[pyfunction(name = "match_probability")]
fn py_match_probability(j: f64, bands: usize, rows: usize) -> f64 {
    match_probability(j, bands, rows)
}

/// 95% interval for the Jaccard index given `hits` of `bands` agreeing.
#[pyfunction]
fn jaccard_interval(hits: usize, bands: usize, rows: usize) -> PyResult<(f64, f64)> {
    if hits > bands {
        return Err(LinkageError::new_err("hits exceed bands"));
    }
    Ok(estimate_jaccard_interval(hits, bands, rows))
}

/// Fewest bands whose curve stays within `epsilon` of the target's.
/// Returns `(bands, rows, max_deviation)`.
#[pyfunction]
#[pyo3(signature = (bands, rows, epsilon = 0.05))]
fn tune(bands: usize, rows: usize, epsilon: f64) -> PyResult<(usize, usize, f64)> {
    let target = CurveSpec::new(bands, rows, curve_threshold(bands, rows)).map_err(py_err)?;
    let got = tune_parameters(&target, &TuneBounds { epsilon, ..Default::default() }).map_err(py_err)?;
    Ok((got.bands, got.rows, got.max_deviation))
}

/// `(|S ∩ R|, |S ∪ R|)` over the k-shingles of two strings.
#[pyfunction]
fn jaccard(a: &str, b: &str, k: usize) -> (usize, usize) {
    let j = lshpsi::lsh::jaccard(a, b, k);
    (j.intersection, j.union)
}

#[pyfunction]
fn shingles(s: &str, k: usize) -> Vec<String> {
    lshpsi::lsh::shingles(s, k).into_iter().map(str::to_owned).collect()
}

/// Hex band signatures of one record's fields under `config`.
#[pyfunction]
fn signatures(fields: BTreeMap<String, String>, config: &PyConfig) -> PyResult<Vec<String>> {
    let params = config.inner.lsh_params().map_err(py_err)?;
    let rec = lshpsi::model::preprocess(&Record { id: "r".into(), fields }, &config.inner.groups);
    let sigs = lshpsi::lsh::lsh_record(&rec, &config.inner.groups, &params).map_err(py_err)?;
    Ok(sigs.as_slice().iter().map(hex::encode).collect())
}

#[pymodule]
fn lshpsi_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LinkageError", m.py().get_type::<LinkageError>())?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(link, m)?)?;
    m.add_function(wrap_pyfunction!(py_match_probability, m)?)?;
    m.add_function(wrap_pyfunction!(jaccard_interval, m)?)?;
    m.add_function(wrap_pyfunction!(tune, m)?)?;
    m.add_function(wrap_pyfunction!(jaccard, m)?)?;
    m.add_function(wrap_pyfunction!(shingles, m)?)?;
    m.add_function(wrap_pyfunction!(signatures, m)?)?;
    Ok(())
}
