//! Records, datasets, field-group configuration and match results.
//!
//! Preprocessing canonicalizes every grouped field (lower-case, alphanumerics
//! and single spaces only) and drops the fields no group references. Both
//! parties must run the same preprocessing over the same group configuration
//! for their band signatures to be comparable.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A row of named string fields. The id is local and never leaves the party.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub fields: BTreeMap<String, String>,
}

impl Record {
    pub fn new(id: impl Into<String>) -> Self {
        Record { id: id.into(), fields: BTreeMap::new() }
    }

    pub fn with_field(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.fields.insert(name.into(), value.into());
        self
    }

    /// Value of a field, with a missing field reading as empty.
    pub fn get(&self, name: &str) -> &str {
        self.fields.get(name).map(String::as_str).unwrap_or("")
    }
}

/// A group of fields that are concatenated and shingled together.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldGroupSpec {
    pub name: String,
    pub fields: Vec<String>,
    /// Shingle length in characters.
    pub k: usize,
    /// Integer weight; a weight of `w` acts like `w` copies of every shingle.
    #[serde(default = "default_weight")]
    pub weight: u32,
}

fn default_weight() -> u32 {
    1
}

impl FieldGroupSpec {
    pub fn new<S: Into<String>>(name: impl Into<String>, fields: impl IntoIterator<Item = S>, k: usize, weight: u32) -> Self {
        FieldGroupSpec {
            name: name.into(),
            fields: fields.into_iter().map(Into::into).collect(),
            k,
            weight,
        }
    }
}

/// Check the group invariants: k >= 1, w >= 1, unique group names, and no
/// field claimed by two groups.
pub fn validate_specs(specs: &[FieldGroupSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Config("at least one field group is required".into()));
    }
    let mut names = HashSet::new();
    let mut fields = HashSet::new();
    for spec in specs {
        if spec.k == 0 {
            return Err(Error::Config(format!("group {:?}: k must be at least 1", spec.name)));
        }
        if spec.weight == 0 {
            return Err(Error::Config(format!("group {:?}: weight must be at least 1", spec.name)));
        }
        if spec.fields.is_empty() {
            return Err(Error::Config(format!("group {:?} has no fields", spec.name)));
        }
        if !names.insert(spec.name.as_str()) {
            return Err(Error::Config(format!("duplicate group name {:?}", spec.name)));
        }
        for f in &spec.fields {
            if !fields.insert(f.as_str()) {
                return Err(Error::Config(format!("field {f:?} appears in more than one group")));
            }
        }
    }
    Ok(())
}

/// Canonical form of a single field value.
///
/// Lower-cases letters (including non-ASCII), keeps digits, removes every
/// other non-alphanumeric character, maps Unicode whitespace to a single ASCII
/// space and trims both ends.
pub fn normalize_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for ch in s.chars() {
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
            continue;
        }
        if !ch.is_alphanumeric() {
            continue;
        }
        for lc in ch.to_lowercase().filter(|c| c.is_alphanumeric()) {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(lc);
        }
    }
    out
}

/// Normalize the grouped fields of a record and drop all others. Fields a
/// group names but the record lacks are materialized as empty strings.
pub fn preprocess(record: &Record, specs: &[FieldGroupSpec]) -> Record {
    let mut fields = BTreeMap::new();
    for spec in specs {
        for f in &spec.fields {
            fields.insert(f.clone(), normalize_text(record.get(f)));
        }
    }
    Record { id: record.id.clone(), fields }
}

/// The concatenated field-group strings of a record, one per group in spec
/// order. Members are joined without a separator.
pub fn group_strings(record: &Record, specs: &[FieldGroupSpec]) -> Vec<String> {
    specs
        .iter()
        .map(|spec| spec.fields.iter().map(|f| record.get(f)).collect::<String>())
        .collect()
}

fn dedup_key(record: &Record, specs: &[FieldGroupSpec]) -> String {
    group_strings(&preprocess(record, specs), specs).join("\u{1f}")
}

/// An ordered collection of records with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    records: Vec<Record>,
}

impl Dataset {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Input(format!("duplicate record id {:?}", r.id)));
            }
        }
        Ok(Dataset { records })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn into_records(self) -> Vec<Record> {
        self.records
    }

    /// Read a CSV dataset. The header row names the fields; `id_column`
    /// selects the identifier column, otherwise rows are numbered from 0.
    pub fn from_csv_reader<R: Read>(reader: R, id_column: Option<&str>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let id_idx = match id_column {
            Some(col) => Some(
                headers
                    .iter()
                    .position(|h| h == col)
                    .ok_or_else(|| Error::Input(format!("id column {col:?} not in header")))?,
            ),
            None => None,
        };
        let mut records = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let id = match id_idx {
                Some(i) => rec.get(i).unwrap_or_default().to_owned(),
                None => row.to_string(),
            };
            let mut r = Record::new(id);
            for (i, (name, value)) in headers.iter().zip(rec.iter()).enumerate() {
                if Some(i) != id_idx {
                    r.fields.insert(name.clone(), value.to_owned());
                }
            }
            records.push(r);
        }
        Dataset::new(records)
    }

    pub fn from_csv_path(path: impl AsRef<Path>, id_column: Option<&str>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())
            .map_err(|e| Error::Input(format!("{}: {e}", path.as_ref().display())))?;
        Dataset::from_csv_reader(file, id_column)
    }

    /// Write the dataset as CSV with an `id` column followed by `columns`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W, columns: &[&str]) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id"];
        header.extend_from_slice(columns);
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.id.as_str()];
            row.extend(columns.iter().map(|c| r.get(c)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Preprocess every record of a dataset.
pub fn preprocess_dataset(ds: &Dataset, specs: &[FieldGroupSpec]) -> Dataset {
    Dataset { records: ds.records.iter().map(|r| preprocess(r, specs)).collect() }
}

/// Keep the first record for every distinct normalized grouped-field
/// concatenation, preserving order otherwise.
pub fn deduplicate(ds: &Dataset, specs: &[FieldGroupSpec]) -> Dataset {
    let mut seen = HashSet::with_capacity(ds.len());
    let records = ds
        .records
        .iter()
        .filter(|r| seen.insert(dedup_key(r, specs)))
        .cloned()
        .collect();
    Dataset { records }
}

/// Opaque reference to a peer record: its block position in the peer's
/// permuted signature list plus the twice-encrypted signature that matched.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PeerHandle {
    pub block: u64,
    #[serde(with = "hex_bytes")]
    pub tag: Vec<u8>,
}

/// One matched peer record for a local record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerMatch {
    pub handle: PeerHandle,
    /// Bands this particular pair agrees on.
    pub band_hits: u32,
    /// |S ∩ R| and |S ∪ R| from the shingle cardinality sub-protocol.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_jaccard: Option<(u64, u64)>,
    /// Plaintext peer fields (revealing variant only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revealed: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchEntry {
    pub local_id: String,
    /// Number of this record's bands found anywhere in the peer's list.
    pub hits: u32,
    pub peers: Vec<PeerMatch>,
}

/// The matched local records of a linkage session.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub entries: Vec<MatchEntry>,
    pub local_size: usize,
    pub peer_size: usize,
}

impl MatchResult {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.local_id.as_str())
    }

    /// Check the entry invariants against a dataset and band count.
    pub fn validate(&self, ds: &Dataset, bands: usize) -> Result<()> {
        let ids: HashSet<&str> = ds.records().iter().map(|r| r.id.as_str()).collect();
        for e in &self.entries {
            if !ids.contains(e.local_id.as_str()) {
                return Err(Error::Input(format!("unknown local id {:?}", e.local_id)));
            }
            if e.hits == 0 || e.hits as usize > bands {
                return Err(Error::Input(format!("hit count {} outside [1, {bands}]", e.hits)));
            }
        }
        Ok(())
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}
