//! Two-party linkage sessions: band signatures compared through DH-PSI.
//!
//! The sender learns which of its records share at least one band signature
//! with some receiver record. Variants extend this: `mutual` gives the
//! receiver the symmetric result, `count` hides record identities and yields
//! only the number of matched records, and `revealing` returns the matched
//! peer records in plaintext.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{GroupElement, Scalar, ELEMENT_LEN};
use crate::lsh::{record_shingle_set, specs_digest, Lsh, LshParams, SIGNATURE_LEN};
use crate::model::{
    deduplicate, preprocess_dataset, validate_specs, Dataset, FieldGroupSpec, MatchEntry, MatchResult, PeerHandle,
    PeerMatch, Record,
};
use crate::psi::{
    encrypt_own, intersect, psi_ca_finish, psi_ca_respond, reencrypt_peer, BlockPermutation, ElementIndex,
    EncryptedList, Stage,
};
use crate::transport::{abort_payload, loopback_pair, Channel, FramedStream, MessageCode};

pub const PROTOCOL_VERSION: u16 = 1;
pub const HANDSHAKE_LEN: usize = 2 + 1 + 32 + 32 + 8;
const BAND_ITEM_LEN: usize = 1 + 4 + SIGNATURE_LEN;
const HANDLE_LEN: usize = 8 + ELEMENT_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum Variant {
    Base = 0,
    Mutual = 1,
    Count = 2,
    Revealing = 3,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Base, Variant::Mutual, Variant::Count, Variant::Revealing];

    pub fn from_u8(v: u8) -> Option<Self> {
        Variant::ALL.get(v as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Mutual => "mutual",
            Variant::Count => "count",
            Variant::Revealing => "revealing",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Sender,
    Receiver,
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sender" => Ok(Role::Sender),
            "receiver" => Ok(Role::Receiver),
            _ => Err(Error::Config(format!("unknown role {s:?}"))),
        }
    }
}

/// What both parties must agree on before any encrypted data flows.
#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    pub variant: Variant,
    pub params: LshParams,
    pub specs: Vec<FieldGroupSpec>,
    /// Jaccard threshold the parameters were tuned for; reporting only.
    pub threshold: f64,
    /// Sender runs the shingle-cardinality sub-protocol on each matched pair.
    pub exact_jaccard: bool,
}

impl ProtocolConfig {
    pub fn new(variant: Variant, params: LshParams, specs: Vec<FieldGroupSpec>) -> Self {
        ProtocolConfig { variant, params, specs, threshold: 0.0, exact_jaccard: false }
    }

    pub fn params_digest(&self) -> [u8; 32] {
        self.params.digest()
    }

    pub fn spec_digest(&self) -> [u8; 32] {
        specs_digest(&self.specs)
    }

    pub fn handshake(&self, n: u64) -> Handshake {
        Handshake {
            version: PROTOCOL_VERSION,
            variant: self.variant,
            params_digest: self.params_digest(),
            spec_digest: self.spec_digest(),
            n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Handshake {
    pub version: u16,
    pub variant: Variant,
    pub params_digest: [u8; 32],
    pub spec_digest: [u8; 32],
    pub n: u64,
}

impl Handshake {
    pub fn encode(&self) -> [u8; HANDSHAKE_LEN] {
        let mut out = [0u8; HANDSHAKE_LEN];
        out[..2].copy_from_slice(&self.version.to_be_bytes());
        out[2] = self.variant as u8;
        out[3..35].copy_from_slice(&self.params_digest);
        out[35..67].copy_from_slice(&self.spec_digest);
        out[67..].copy_from_slice(&self.n.to_be_bytes());
        out
    }

    /// Decode a handshake. The version is checked before anything else so a
    /// newer peer gets a version error rather than a parse error.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() >= 2 {
            let version = u16::from_be_bytes([bytes[0], bytes[1]]);
            if version != PROTOCOL_VERSION {
                return Err(Error::VersionMismatch { local: PROTOCOL_VERSION, peer: version });
            }
        }
        if bytes.len() != HANDSHAKE_LEN {
            return Err(Error::MalformedMessage(format!("handshake of {} bytes", bytes.len())));
        }
        let variant = Variant::from_u8(bytes[2])
            .ok_or_else(|| Error::MalformedMessage(format!("unknown variant code {}", bytes[2])))?;
        Ok(Handshake {
            version: PROTOCOL_VERSION,
            variant,
            params_digest: bytes[3..35].try_into().unwrap(),
            spec_digest: bytes[35..67].try_into().unwrap(),
            n: u64::from_be_bytes(bytes[67..].try_into().unwrap()),
        })
    }

    /// Fail closed on any disagreement with the local handshake.
    pub fn check(&self, local: &Handshake) -> Result<()> {
        if self.version != local.version {
            return Err(Error::VersionMismatch { local: local.version, peer: self.version });
        }
        if self.variant != local.variant {
            return Err(Error::DigestMismatch("protocol variant"));
        }
        if self.params_digest != local.params_digest {
            return Err(Error::DigestMismatch("LSH parameters"));
        }
        if self.spec_digest != local.spec_digest {
            return Err(Error::DigestMismatch("field group specs"));
        }
        Ok(())
    }
}

/// PSI item for band `band`: the band index is bound into the hashed value
/// so equal signatures only meet within the same band.
pub fn band_item(band: u32, sig: &[u8; SIGNATURE_LEN]) -> [u8; BAND_ITEM_LEN] {
    let mut out = [0u8; BAND_ITEM_LEN];
    out[0] = b'B';
    out[1..5].copy_from_slice(&band.to_be_bytes());
    out[5..].copy_from_slice(sig);
    out
}

/// PSI item for a shingle of field group `group`.
pub fn shingle_item(group: usize, text: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + text.len());
    out.push(b'S');
    out.extend_from_slice(&(group as u32).to_be_bytes());
    out.extend_from_slice(text.as_bytes());
    out
}

/// Normalize and deduplicate a dataset as both parties must before linking.
pub fn prepare_dataset(ds: &Dataset, specs: &[FieldGroupSpec]) -> Dataset {
    deduplicate(&preprocess_dataset(ds, specs), specs)
}

/// Concatenate the band signatures of `records` so that block `i` holds the
/// `B` signatures of record `pi[i]`.
pub fn build_signature_array(records: &[Record], lsh: &Lsh, pi: &[usize]) -> Result<Vec<[u8; SIGNATURE_LEN]>> {
    if pi.len() != records.len() {
        return Err(Error::LengthMismatch(pi.len(), records.len()));
    }
    let per_record = records
        .par_iter()
        .map(|r| lsh.signatures(r))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(records.len() * lsh.params().bands());
    for &i in pi {
        out.extend_from_slice(per_record[i].as_slice());
    }
    Ok(out)
}

fn psi_items(sigs: &[[u8; SIGNATURE_LEN]], bands: usize) -> Vec<[u8; BAND_ITEM_LEN]> {
    sigs.iter().enumerate().map(|(i, s)| band_item((i % bands) as u32, s)).collect()
}

/// Number of blocks of `bands` entries holding at least one hit.
pub fn count_matches(m: &[bool], bands: usize) -> Result<usize> {
    if bands == 0 || !m.len().is_multiple_of(bands) {
        return Err(Error::Input(format!("hit vector of length {} is not a multiple of {bands}", m.len())));
    }
    Ok(m.chunks(bands).filter(|b| b.iter().any(|x| *x)).count())
}

/// Traffic and timing of one session.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SessionStats {
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub frames_sent: u64,
    pub frames_received: u64,
    /// Time spent inside channel reads and writes.
    pub comm_time_s: f64,
    /// Local computation: total minus communication.
    pub offline_time_s: f64,
    pub total_time_s: f64,
    pub message_types: Vec<String>,
}

impl SessionStats {
    pub fn comm_kb(&self) -> f64 {
        (self.bytes_sent + self.bytes_received) as f64 / 1024.0
    }
}

/// Everything a party learns from one session.
#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub role: Role,
    pub variant: Variant,
    /// Matched local records. Empty for the count variant and for a base or
    /// revealing receiver.
    pub result: MatchResult,
    /// Number of matched sender records (count variant, sender only).
    pub count: Option<usize>,
    /// Local records whose plaintext was disclosed to the peer (revealing
    /// receiver only).
    pub revealed_local: Vec<String>,
    pub stats: SessionStats,
    /// Public fingerprint of this session's secret key.
    pub key_fingerprint: [u8; 32],
    block_ids: Vec<String>,
}

impl SessionOutcome {
    /// Local record id sitting at `block` of this party's permuted list.
    pub fn resolve_own_block(&self, block: u64) -> Option<&str> {
        self.block_ids.get(usize::try_from(block).ok()?).map(String::as_str)
    }

    /// Matched local records, whichever form the variant reports.
    pub fn match_count(&self) -> usize {
        self.count.unwrap_or(self.result.len())
    }

    /// Matched (local record, peer record) pairs.
    pub fn pair_count(&self) -> usize {
        self.result.entries.iter().map(|e| e.peers.len()).sum()
    }

    /// Estimated leakage `tau * |res| / N_r` for a false-positive rate `tau`.
    pub fn leakage_bound(&self, tau: f64) -> f64 {
        let peer = self.result.peer_size;
        if peer == 0 {
            0.0
        } else {
            tau * self.match_count() as f64 / peer as f64
        }
    }
}

/// Seed a session RNG from the operating system.
fn session_rng() -> Result<ChaCha20Rng> {
    let mut seed = [0u8; 32];
    rand_core::OsRng.try_fill_bytes(&mut seed).map_err(|e| Error::Entropy(e.to_string()))?;
    Ok(ChaCha20Rng::from_seed(seed))
}

/// Run the sender side with fresh key material.
pub fn run_sender<C: Channel>(ds: &Dataset, cfg: &ProtocolConfig, ch: &mut C) -> Result<SessionOutcome> {
    run_sender_with_rng(ds, cfg, ch, &mut session_rng()?)
}

/// Run the receiver side with fresh key material.
pub fn run_receiver<C: Channel>(ds: &Dataset, cfg: &ProtocolConfig, ch: &mut C) -> Result<SessionOutcome> {
    run_receiver_with_rng(ds, cfg, ch, &mut session_rng()?)
}

pub fn run_sender_with_rng<C: Channel, R: RngCore + CryptoRng>(
    ds: &Dataset,
    cfg: &ProtocolConfig,
    ch: &mut C,
    rng: &mut R,
) -> Result<SessionOutcome> {
    guarded(ch, |ch| {
        let s = Session::open(Role::Sender, ds, cfg, ch, rng)?;
        s.sender(ch)
    })
}

pub fn run_receiver_with_rng<C: Channel, R: RngCore + CryptoRng>(
    ds: &Dataset,
    cfg: &ProtocolConfig,
    ch: &mut C,
    rng: &mut R,
) -> Result<SessionOutcome> {
    guarded(ch, |ch| {
        let s = Session::open(Role::Receiver, ds, cfg, ch, rng)?;
        s.receiver(ch, rng)
    })
}

/// Run both roles in one process over an in-memory pipe. The sender's
/// dataset is `sender_ds`. The first local failure is returned, not the
/// peer's view of it.
pub fn run_loopback(sender_ds: &Dataset, receiver_ds: &Dataset, cfg: &ProtocolConfig) -> Result<(SessionOutcome, SessionOutcome)> {
    let (a, b) = loopback_pair();
    let (s, r) = std::thread::scope(|scope| {
        let recv = scope.spawn(|| run_receiver(receiver_ds, cfg, &mut FramedStream::new(b)));
        let sent = run_sender(sender_ds, cfg, &mut FramedStream::new(a));
        (sent, recv.join().expect("receiver thread panicked"))
    });
    match (s, r) {
        (Ok(s), Ok(r)) => Ok((s, r)),
        (Err(e), Err(Error::PeerAborted { .. } | Error::ConnectionLost(_))) | (Err(e), Ok(_)) => Err(e),
        (_, Err(e)) => Err(e),
    }
}

/// Tell the peer why we stopped, unless the peer is already gone.
fn guarded<C: Channel, T>(ch: &mut C, body: impl FnOnce(&mut C) -> Result<T>) -> Result<T> {
    let out = body(ch);
    if let Err(e) = &out {
        if !matches!(e, Error::PeerAborted { .. } | Error::ConnectionLost(_)) {
            let _ = ch.send_frame(MessageCode::Abort, &abort_payload(e));
        }
    }
    out
}

fn recv_list<C: Channel>(ch: &mut C, code: MessageCode, stage: Stage, expected: usize) -> Result<EncryptedList> {
    let batch = ch.recv_batch(code, ELEMENT_LEN)?;
    list_from(batch, stage, expected, code)
}

fn list_from(batch: crate::transport::Batch, stage: Stage, expected: usize, code: MessageCode) -> Result<EncryptedList> {
    if batch.len() != expected {
        return Err(Error::MalformedMessage(format!(
            "{} carried {} elements, expected {expected}",
            code.name(),
            batch.len()
        )));
    }
    EncryptedList::from_batch(&batch, stage)
}

fn encode_handle(h: &PeerHandle) -> [u8; HANDLE_LEN] {
    let mut out = [0u8; HANDLE_LEN];
    out[..8].copy_from_slice(&h.block.to_be_bytes());
    out[8..].copy_from_slice(&h.tag);
    out
}

fn decode_handle(bytes: &[u8]) -> Result<PeerHandle> {
    if bytes.len() != HANDLE_LEN {
        return Err(Error::MalformedMessage(format!("peer handle of {} bytes", bytes.len())));
    }
    Ok(PeerHandle { block: u64::from_be_bytes(bytes[..8].try_into().unwrap()), tag: bytes[8..].to_vec() })
}

/// Matched entries for `mine` (own blocks, own order) against `theirs`.
fn build_entries(
    mine: &EncryptedList,
    hits: &[bool],
    theirs: &EncryptedList,
    bands: usize,
    block_ids: &[String],
) -> Vec<MatchEntry> {
    let index = ElementIndex::build(theirs);
    let mut entries = Vec::new();
    for (blk, chunk) in hits.chunks(bands).enumerate() {
        let h = chunk.iter().filter(|x| **x).count();
        if h == 0 {
            continue;
        }
        let mut peers: BTreeMap<u64, (u32, GroupElement)> = BTreeMap::new();
        for (j, _) in chunk.iter().enumerate().filter(|(_, x)| **x) {
            let e = &mine.items()[blk * bands + j];
            for &p in index.positions(e) {
                peers.entry(p as u64 / bands as u64).or_insert((0, *e)).0 += 1;
            }
        }
        entries.push(MatchEntry {
            local_id: block_ids[blk].clone(),
            hits: h as u32,
            peers: peers
                .into_iter()
                .map(|(block, (band_hits, tag))| PeerMatch {
                    handle: PeerHandle { block, tag: tag.to_bytes().to_vec() },
                    band_hits,
                    exact_jaccard: None,
                    revealed: None,
                })
                .collect(),
        });
    }
    entries.sort_by(|a, b| a.local_id.cmp(&b.local_id));
    entries
}

struct Session<'a> {
    role: Role,
    cfg: &'a ProtocolConfig,
    original: HashMap<&'a str, &'a Record>,
    local: Dataset,
    /// Record ids in block order.
    block_ids: Vec<String>,
    /// Block index to position in `local`.
    pi: Vec<usize>,
    sk: Scalar,
    /// Own band items, once-encrypted.
    own: EncryptedList,
    peer_n: usize,
    start: Instant,
    base_stats: (u64, u64, u64, u64, Duration),
}

impl<'a> Session<'a> {
    fn open<C: Channel, R: RngCore + CryptoRng>(
        role: Role,
        ds: &'a Dataset,
        cfg: &'a ProtocolConfig,
        ch: &mut C,
        rng: &mut R,
    ) -> Result<Self> {
        let start = Instant::now();
        let st = ch.stats();
        let base_stats = (st.bytes_sent, st.bytes_received, st.frames_sent, st.frames_received, st.io_time);
        validate_specs(&cfg.specs)?;
        let lsh = Lsh::new(cfg.params.clone(), cfg.specs.clone());
        let local = prepare_dataset(ds, &cfg.specs);
        let sk = Scalar::random_from(rng);
        let mut pi: Vec<usize> = (0..local.len()).collect();
        pi.shuffle(rng);
        let sigs = build_signature_array(local.records(), &lsh, &pi)?;

        let ours = cfg.handshake(local.len() as u64);
        ch.send_frame(MessageCode::Handshake, &ours.encode())?;
        let theirs = Handshake::decode(&ch.expect_frame(MessageCode::Handshake)?)?;
        theirs.check(&ours)?;
        let peer_n = usize::try_from(theirs.n).map_err(|_| Error::MalformedMessage("peer size overflow".into()))?;
        peer_n
            .checked_mul(cfg.params.bands())
            .filter(|&total| total <= u32::MAX as usize)
            .ok_or_else(|| Error::MalformedMessage(format!("peer size {peer_n} too large")))?;

        let own = encrypt_own(&psi_items(&sigs, cfg.params.bands()), &sk);
        Ok(Session {
            role,
            cfg,
            original: ds.records().iter().map(|r| (r.id.as_str(), r)).collect(),
            block_ids: pi.iter().map(|&i| local.records()[i].id.clone()).collect(),
            local,
            pi,
            sk,
            own,
            peer_n,
            start,
            base_stats,
        })
    }

    fn bands(&self) -> usize {
        self.cfg.params.bands()
    }

    fn finish<C: Channel>(self, ch: &C, result: MatchResult, count: Option<usize>, revealed: Vec<String>) -> SessionOutcome {
        let st = ch.stats();
        let total = self.start.elapsed();
        let comm = st.io_time.saturating_sub(self.base_stats.4);
        let mut types: BTreeSet<MessageCode> = st.sent_codes.keys().copied().collect();
        types.extend(st.received_codes.keys().copied());
        SessionOutcome {
            role: self.role,
            variant: self.cfg.variant,
            result,
            count,
            revealed_local: revealed,
            stats: SessionStats {
                bytes_sent: st.bytes_sent - self.base_stats.0,
                bytes_received: st.bytes_received - self.base_stats.1,
                frames_sent: st.frames_sent - self.base_stats.2,
                frames_received: st.frames_received - self.base_stats.3,
                comm_time_s: comm.as_secs_f64(),
                offline_time_s: total.saturating_sub(comm).as_secs_f64(),
                total_time_s: total.as_secs_f64(),
                message_types: types.into_iter().map(|c| c.name().to_owned()).collect(),
            },
            key_fingerprint: self.sk.fingerprint(),
            block_ids: self.block_ids,
        }
    }

    fn sender<C: Channel>(mut self, ch: &mut C) -> Result<SessionOutcome> {
        let b = self.bands();
        let n = self.local.len();
        ch.send_batch(MessageCode::SigBatch, ELEMENT_LEN, &self.own.to_wire())?;
        let peer_once = recv_list(ch, MessageCode::ReceiverSigs, Stage::Once, self.peer_n * b)?;
        let own_twice = recv_list(ch, MessageCode::ReencBatch, Stage::Twice, n * b)?;
        let peer_twice = reencrypt_peer(&peer_once, &self.sk, None)?;
        let m = intersect(&own_twice, &peer_twice)?;

        let variant = self.cfg.variant;
        let mut result = MatchResult { entries: Vec::new(), local_size: n, peer_size: self.peer_n };
        let mut count = None;
        if variant == Variant::Count {
            count = Some(count_matches(&m, b)?);
        } else {
            result.entries = build_entries(&own_twice, &m, &peer_twice, b, &self.block_ids);
        }
        if variant == Variant::Mutual {
            ch.send_batch(MessageCode::MutualReturn, ELEMENT_LEN, &peer_twice.to_wire())?;
        }
        if self.cfg.exact_jaccard && variant != Variant::Count {
            self.exact_jaccard(ch, &mut result)?;
        }
        if variant == Variant::Revealing {
            self.request_reveal(ch, &mut result)?;
        }
        ch.send_frame(MessageCode::Finish, &[])?;
        ch.expect_frame(MessageCode::Finish)?;
        Ok(self.finish(ch, result, count, Vec::new()))
    }

    fn exact_jaccard<C: Channel>(&mut self, ch: &mut C, result: &mut MatchResult) -> Result<()> {
        let positions: HashMap<&str, usize> =
            self.local.records().iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
        for entry in &mut result.entries {
            let rec = &self.local.records()[positions[entry.local_id.as_str()]];
            let items: Vec<Vec<u8>> = record_shingle_set(rec, &self.cfg.specs)
                .iter()
                .map(|(g, t)| shingle_item(*g, t))
                .collect();
            let own_once = encrypt_own(&items, &self.sk);
            for peer in &mut entry.peers {
                ch.send_frame(MessageCode::PsiCaRequest, &encode_handle(&peer.handle))?;
                ch.send_batch(MessageCode::PsiCaRequest, ELEMENT_LEN, &own_once.to_wire())?;
                let batch = ch.recv_batch(MessageCode::PsiCaResponse, ELEMENT_LEN)?;
                let n_peer = batch.len();
                let peer_once = EncryptedList::from_batch(&batch, Stage::Once)?;
                let own_twice = recv_list(ch, MessageCode::PsiCaResponse, Stage::Twice, items.len())?;
                let inter = psi_ca_finish(&own_twice, &peer_once, &self.sk)? as u64;
                peer.exact_jaccard = Some((inter, (items.len() + n_peer) as u64 - inter));
            }
        }
        Ok(())
    }

    fn request_reveal<C: Channel>(&self, ch: &mut C, result: &mut MatchResult) -> Result<()> {
        let handles: BTreeSet<&PeerHandle> = result.entries.iter().flat_map(|e| e.peers.iter().map(|p| &p.handle)).collect();
        let wire: Vec<[u8; HANDLE_LEN]> = handles.iter().map(|h| encode_handle(h)).collect();
        ch.send_batch(MessageCode::RevealRequest, HANDLE_LEN, &wire)?;
        let payload = ch.expect_frame(MessageCode::RevealResponse)?;
        let records: Vec<BTreeMap<String, String>> = serde_json::from_slice(&payload)
            .map_err(|e| Error::MalformedMessage(format!("reveal response: {e}")))?;
        if records.len() != handles.len() {
            return Err(Error::MalformedMessage(format!(
                "reveal response holds {} records for {} handles",
                records.len(),
                handles.len()
            )));
        }
        let by_handle: HashMap<PeerHandle, BTreeMap<String, String>> =
            handles.into_iter().cloned().zip(records).collect();
        for p in result.entries.iter_mut().flat_map(|e| e.peers.iter_mut()) {
            p.revealed = Some(by_handle[&p.handle].clone());
        }
        Ok(())
    }

    fn receiver<C: Channel, R: RngCore + CryptoRng>(self, ch: &mut C, rng: &mut R) -> Result<SessionOutcome> {
        let b = self.bands();
        let n = self.local.len();
        let variant = self.cfg.variant;
        let peer_once = recv_list(ch, MessageCode::SigBatch, Stage::Once, self.peer_n * b)?;
        ch.send_batch(MessageCode::ReceiverSigs, ELEMENT_LEN, &self.own.to_wire())?;
        let perm = (variant == Variant::Count).then(|| BlockPermutation::random(self.peer_n, b, rng));
        let peer_twice = reencrypt_peer(&peer_once, &self.sk, perm.as_ref())?;
        drop(peer_once);
        ch.send_batch(MessageCode::ReencBatch, ELEMENT_LEN, &peer_twice.to_wire())?;

        let mut result = MatchResult { entries: Vec::new(), local_size: n, peer_size: self.peer_n };
        let mut revealed: BTreeSet<String> = BTreeSet::new();
        let mut valid_tags: Option<HashSet<[u8; ELEMENT_LEN]>> = None;
        let mut mutual_done = false;
        loop {
            let frame = ch.recv_frame()?;
            match frame.code {
                MessageCode::Finish => break,
                MessageCode::Abort => return Err(crate::transport::abort_error(&frame.payload)),
                MessageCode::MutualReturn if variant == Variant::Mutual && !mutual_done => {
                    let batch = ch.recv_batch_rest(MessageCode::MutualReturn, ELEMENT_LEN, frame.payload)?;
                    let own_twice = list_from(batch, Stage::Twice, n * b, MessageCode::MutualReturn)?;
                    let m = intersect(&own_twice, &peer_twice)?;
                    result.entries = build_entries(&own_twice, &m, &peer_twice, b, &self.block_ids);
                    mutual_done = true;
                }
                MessageCode::PsiCaRequest if variant != Variant::Count => {
                    let handle = decode_handle(&frame.payload)?;
                    let tags = valid_tags.get_or_insert_with(|| peer_twice.items().iter().map(GroupElement::to_bytes).collect());
                    let rec = self.resolve_handle(&handle, tags)?.clone();
                    let initiator = ch.recv_batch(MessageCode::PsiCaRequest, ELEMENT_LEN)?;
                    let initiator = EncryptedList::from_batch(&initiator, Stage::Once)?;
                    let items: Vec<Vec<u8>> = record_shingle_set(&rec, &self.cfg.specs)
                        .iter()
                        .map(|(g, t)| shingle_item(*g, t))
                        .collect();
                    let (own_once, their_twice) = psi_ca_respond(&initiator, &items, &self.sk, rng)?;
                    ch.send_batch(MessageCode::PsiCaResponse, ELEMENT_LEN, &own_once.to_wire())?;
                    ch.send_batch(MessageCode::PsiCaResponse, ELEMENT_LEN, &their_twice.to_wire())?;
                }
                MessageCode::RevealRequest if variant == Variant::Revealing => {
                    let batch = ch.recv_batch_rest(MessageCode::RevealRequest, HANDLE_LEN, frame.payload)?;
                    let tags = valid_tags.get_or_insert_with(|| peer_twice.items().iter().map(GroupElement::to_bytes).collect());
                    let mut out = Vec::with_capacity(batch.len());
                    for bytes in batch.iter() {
                        let rec = self.resolve_handle(&decode_handle(bytes)?, tags)?;
                        revealed.insert(rec.id.clone());
                        out.push(&self.original[rec.id.as_str()].fields);
                    }
                    let payload = serde_json::to_vec(&out).expect("string maps serialize");
                    ch.send_frame(MessageCode::RevealResponse, &payload)?;
                }
                other => {
                    return Err(Error::UnexpectedMessage { expected: "a follow-up request", got: other as u8 });
                }
            }
        }
        if variant == Variant::Mutual && !mutual_done {
            return Err(Error::MalformedMessage("mutual session finished without MUTUAL_RETURN".into()));
        }
        ch.send_frame(MessageCode::Finish, &[])?;
        Ok(self.finish(ch, result, None, revealed.into_iter().collect()))
    }

    /// A handle is honoured only if it names an existing block and carries a
    /// value this party itself produced for the peer.
    fn resolve_handle(&self, handle: &PeerHandle, tags: &HashSet<[u8; ELEMENT_LEN]>) -> Result<&Record> {
        let block = usize::try_from(handle.block).ok().filter(|&b| b < self.pi.len());
        let tag: Option<[u8; ELEMENT_LEN]> = handle.tag.as_slice().try_into().ok();
        match (block, tag) {
            (Some(b), Some(t)) if tags.contains(&t) => Ok(&self.local.records()[self.pi[b]]),
            _ => Err(Error::Input("peer presented an invalid record handle".into())),
        }
    }
}
