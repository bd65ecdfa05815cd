//! Shingling, weighted Min-Hash and band signatures.
//!
//! Every shingle gets a 32-bit base digest (the first four bytes of its
//! SHA-256, big-endian). Row `i` of the LSH maps a base digest `h` through the
//! universal hash `(h * c_i + d_i mod 2^61-1) mod 2^32`, then applies the
//! weight transform `1 - (1 - x)^(1/w)`, which gives the value the same
//! distribution as the minimum of `w` independent hashes. The `R` row minima of
//! a band are hashed with SHA-256 into the band signature.
//!
//! The `P = B * R` coefficient pairs are drawn from a ChaCha20 stream keyed by
//! the shared seed, so both parties compute identical signatures.

use std::collections::HashSet;
use std::fmt;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{group_strings, FieldGroupSpec, Record};

/// The Mersenne prime 2^61 - 1 used by the universal hash.
pub const MERSENNE_PRIME: u64 = (1 << 61) - 1;
/// Range of a row hash value.
pub const MAX_VAL: u64 = 1 << 32;

pub const SEED_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 32;

/// Band count, rows per band and the shared coefficient seed.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LshParams {
    bands: usize,
    rows: usize,
    seed: [u8; SEED_LEN],
}

impl fmt::Debug for LshParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LshParams")
            .field("bands", &self.bands)
            .field("rows", &self.rows)
            .field("seed", &hex::encode(self.seed))
            .finish()
    }
}

impl LshParams {
    pub fn new(bands: usize, rows: usize, seed: [u8; SEED_LEN]) -> Result<Self> {
        if bands == 0 || rows == 0 {
            return Err(Error::Config(format!("bands and rows must be >= 1 (got B={bands}, R={rows})")));
        }
        if bands > u32::MAX as usize || rows > u32::MAX as usize {
            return Err(Error::Config("bands/rows out of range".into()));
        }
        Ok(LshParams { bands, rows, seed })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn seed(&self) -> &[u8; SEED_LEN] {
        &self.seed
    }

    /// Total number of Min-Hash functions, `B * R`.
    pub fn total_hashes(&self) -> usize {
        self.bands * self.rows
    }

    /// Commitment to (B, R, seed) exchanged in the handshake.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"lshpsi/params/v1");
        h.update((self.bands as u32).to_be_bytes());
        h.update((self.rows as u32).to_be_bytes());
        h.update(self.seed);
        h.finalize().into()
    }
}

/// Commitment to the field-group configuration exchanged in the handshake.
pub fn specs_digest(specs: &[FieldGroupSpec]) -> [u8; 32] {
    fn put(h: &mut Sha256, s: &str) {
        h.update((s.len() as u32).to_be_bytes());
        h.update(s.as_bytes());
    }
    let mut h = Sha256::new();
    h.update(b"lshpsi/specs/v1");
    h.update((specs.len() as u32).to_be_bytes());
    for spec in specs {
        put(&mut h, &spec.name);
        h.update((spec.fields.len() as u32).to_be_bytes());
        for f in &spec.fields {
            put(&mut h, f);
        }
        h.update((spec.k as u32).to_be_bytes());
        h.update(spec.weight.to_be_bytes());
    }
    h.finalize().into()
}

/// Universal-hash coefficients, one `(c, d)` pair per Min-Hash function,
/// indexed by `band * R + row`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashCoeffs {
    c: Vec<u64>,
    d: Vec<u64>,
}

impl HashCoeffs {
    /// Draw `count` pairs from the ChaCha20 stream keyed by `seed`.
    /// `c` is uniform in [1, MP), `d` uniform in [0, MP); each pair draws `c`
    /// first, then `d`, by rejection sampling 61-bit words.
    pub fn derive(seed: &[u8; SEED_LEN], count: usize) -> Self {
        let mut rng = ChaCha20Rng::from_seed(*seed);
        let mut draw = |min: u64| loop {
            let x = rng.next_u64() >> 3;
            if x >= min && x < MERSENNE_PRIME {
                break x;
            }
        };
        let mut c = Vec::with_capacity(count);
        let mut d = Vec::with_capacity(count);
        for _ in 0..count {
            c.push(draw(1));
            d.push(draw(0));
        }
        HashCoeffs { c, d }
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    pub fn pair(&self, i: usize) -> (u64, u64) {
        (self.c[i], self.d[i])
    }
}

/// A shingle paired with the weight of the group it came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WeightedShingle {
    pub text: String,
    pub weight: u32,
}

/// The ordered B band signatures of one record.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BandSignatureList(Vec<[u8; SIGNATURE_LEN]>);

impl BandSignatureList {
    pub fn new(sigs: Vec<[u8; SIGNATURE_LEN]>) -> Self {
        BandSignatureList(sigs)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[[u8; SIGNATURE_LEN]] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<[u8; SIGNATURE_LEN]> {
        self.0
    }
}

/// All overlapping k-character substrings, in order, duplicates retained.
pub fn shingles(s: &str, k: usize) -> Vec<&str> {
    assert!(k >= 1, "shingle length must be at least 1");
    let bounds: Vec<usize> = s.char_indices().map(|(i, _)| i).chain(std::iter::once(s.len())).collect();
    let n = bounds.len() - 1;
    if n < k {
        return Vec::new();
    }
    (0..=n - k).map(|i| &s[bounds[i]..bounds[i + k]]).collect()
}

/// An exact Jaccard index `|S ∩ R| / |S ∪ R|` kept as a ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Jaccard {
    pub intersection: usize,
    pub union: usize,
}

impl Jaccard {
    pub fn from_sets<T: Eq + std::hash::Hash>(a: &HashSet<T>, b: &HashSet<T>) -> Self {
        let intersection = a.intersection(b).count();
        Jaccard { intersection, union: a.len() + b.len() - intersection }
    }

    /// The index as a float; two empty sets count as identical.
    pub fn value(&self) -> f64 {
        if self.union == 0 {
            1.0
        } else {
            self.intersection as f64 / self.union as f64
        }
    }
}

/// Jaccard index of two normalized strings over their k-shingle sets.
pub fn jaccard(a: &str, b: &str, k: usize) -> Jaccard {
    let sa: HashSet<&str> = shingles(a, k).into_iter().collect();
    let sb: HashSet<&str> = shingles(b, k).into_iter().collect();
    Jaccard::from_sets(&sa, &sb)
}

/// Shingle set of a preprocessed record, each shingle tagged with its group.
pub fn record_shingle_set(record: &Record, specs: &[FieldGroupSpec]) -> HashSet<(usize, String)> {
    group_strings(record, specs)
        .iter()
        .zip(specs)
        .enumerate()
        .flat_map(|(g, (s, spec))| shingles(s, spec.k).into_iter().map(move |sh| (g, sh.to_owned())))
        .collect()
}

/// Jaccard index of two preprocessed records under the same group specs.
pub fn jaccard_records(a: &Record, b: &Record, specs: &[FieldGroupSpec]) -> Jaccard {
    Jaccard::from_sets(&record_shingle_set(a, specs), &record_shingle_set(b, specs))
}

/// Weighted shingles of the field-group strings, in group order.
pub fn get_weighted_shingles(groups: &[String], specs: &[FieldGroupSpec]) -> Vec<WeightedShingle> {
    groups
        .iter()
        .zip(specs)
        .flat_map(|(s, spec)| {
            shingles(s, spec.k)
                .into_iter()
                .map(|sh| WeightedShingle { text: sh.to_owned(), weight: spec.weight })
        })
        .collect()
}

/// First four bytes of SHA-256 of the shingle, big-endian.
pub fn base_digest(shingle: &str) -> u32 {
    let d = Sha256::digest(shingle.as_bytes());
    u32::from_be_bytes([d[0], d[1], d[2], d[3]])
}

#[inline]
fn mod_mersenne(v: u128) -> u64 {
    let mp = MERSENNE_PRIME as u128;
    let folded = (v & mp) + (v >> 61);
    let folded = (folded & mp) + (folded >> 61);
    let r = folded as u64;
    if r >= MERSENNE_PRIME {
        r - MERSENNE_PRIME
    } else {
        r
    }
}

/// `(h * c + d mod 2^61-1) mod 2^32`.
#[inline]
pub fn universal_hash(h: u32, c: u64, d: u64) -> u64 {
    mod_mersenne(h as u128 * c as u128 + d as u128) % MAX_VAL
}

/// Row hash of a shingle digest under coefficients `(c, d)` and weight `w`.
///
/// Returns `floor(maxVal * (1 - (1 - x)^(1/w)))` with `x = h'/maxVal`. The
/// unit weight is the identity on `h'` and stays in integer arithmetic; `w = 2`
/// uses the correctly rounded square root. Larger weights go through `powf`,
/// whose last-bit behaviour is platform dependent, so both parties must run
/// the same build for weights above two.
#[inline]
pub fn calc_h(h: u32, c: u64, d: u64, w: u32) -> u64 {
    let hp = universal_hash(h, c, d);
    weight_transform(hp, w)
}

#[inline]
pub fn weight_transform(hp: u64, w: u32) -> u64 {
    match w {
        0 | 1 => hp,
        _ => {
            let x = hp as f64 / MAX_VAL as f64;
            let root = if w == 2 { (1.0 - x).sqrt() } else { (1.0 - x).powf(1.0 / w as f64) };
            let y = 1.0 - root;
            (y * MAX_VAL as f64).floor() as u64
        }
    }
}

/// A configured LSH: parameters, derived coefficients and field groups.
#[derive(Debug, Clone)]
pub struct Lsh {
    params: LshParams,
    coeffs: HashCoeffs,
    specs: Vec<FieldGroupSpec>,
}

impl Lsh {
    pub fn new(params: LshParams, specs: Vec<FieldGroupSpec>) -> Self {
        let coeffs = HashCoeffs::derive(params.seed(), params.total_hashes());
        Lsh { params, coeffs, specs }
    }

    pub fn params(&self) -> &LshParams {
        &self.params
    }

    pub fn specs(&self) -> &[FieldGroupSpec] {
        &self.specs
    }

    pub fn coeffs(&self) -> &HashCoeffs {
        &self.coeffs
    }

    /// The `P` row minima for a list of `(digest, weight)` pairs, or `None`
    /// when the list is empty.
    pub fn minhashes(&self, digests: &[(u32, u32)]) -> Option<Vec<u64>> {
        if digests.is_empty() {
            return None;
        }
        let unit = digests.iter().all(|&(_, w)| w == 1);
        let mins = (0..self.coeffs.len())
            .map(|i| {
                let (c, d) = self.coeffs.pair(i);
                if unit {
                    digests.iter().map(|&(h, _)| universal_hash(h, c, d)).min()
                } else {
                    digests.iter().map(|&(h, w)| calc_h(h, c, d, w)).min()
                }
                .expect("non-empty")
            })
            .collect();
        Some(mins)
    }

    /// Band signatures from precomputed `(digest, weight)` pairs.
    pub fn signatures_for_digests(&self, digests: &[(u32, u32)]) -> Option<BandSignatureList> {
        let mins = self.minhashes(digests)?;
        let r = self.params.rows;
        let sigs = mins
            .chunks_exact(r)
            .map(|band| {
                let mut h = Sha256::new();
                for m in band {
                    h.update(m.to_be_bytes());
                }
                h.finalize().into()
            })
            .collect();
        Some(BandSignatureList(sigs))
    }

    /// Band signatures of a preprocessed record.
    pub fn signatures(&self, record: &Record) -> Result<BandSignatureList> {
        let groups = group_strings(record, &self.specs);
        let digests: Vec<(u32, u32)> = get_weighted_shingles(&groups, &self.specs)
            .iter()
            .map(|ws| (base_digest(&ws.text), ws.weight))
            .collect();
        self.signatures_for_digests(&digests)
            .ok_or_else(|| Error::EmptyRecord(record.id.clone()))
    }
}

/// Band signatures of a preprocessed record under `params`.
pub fn lsh_record(record: &Record, specs: &[FieldGroupSpec], params: &LshParams) -> Result<BandSignatureList> {
    Lsh::new(params.clone(), specs.to_vec()).signatures(record)
}

/// Result of comparing two band-signature lists position by position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LshMatch {
    pub hits: usize,
}

impl LshMatch {
    pub fn matched(&self) -> bool {
        self.hits >= 1
    }
}

/// Count positions where the two lists agree; a match is at least one hit.
pub fn lsh_match(a: &BandSignatureList, b: &BandSignatureList) -> Result<LshMatch> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let hits = a.0.iter().zip(&b.0).filter(|(x, y)| x == y).count();
    Ok(LshMatch { hits })
}
