#![allow(dead_code)]

use std::collections::BTreeSet;

use lshpsi::analysis::plaintext_matches;
use lshpsi::config::LinkageConfig;
use lshpsi::lsh::Lsh;
use lshpsi::model::Dataset;
use lshpsi::protocol::{prepare_dataset, ProtocolConfig, SessionOutcome, Variant};
use lshpsi::synth::{generate, SynthConfig, SynthOutput};

pub type Pair = (String, String, u32);

pub fn config(bands: usize, rows: usize, seed: u8) -> LinkageConfig {
    let mut cfg = LinkageConfig::synthetic_default([seed; 32]);
    cfg.bands = bands;
    cfg.rows = rows;
    cfg
}

pub fn proto(cfg: &LinkageConfig, variant: Variant) -> ProtocolConfig {
    cfg.protocol_config(variant).unwrap()
}

pub fn data(n: usize, planted: usize, seed: u64) -> SynthOutput {
    generate(&SynthConfig::new(n, planted, 0.05, seed)).unwrap()
}

/// (sender id, receiver id, band hits) computed in the clear.
pub fn oracle_pairs(sender: &Dataset, receiver: &Dataset, cfg: &ProtocolConfig) -> BTreeSet<Pair> {
    let s = prepare_dataset(sender, &cfg.specs);
    let r = prepare_dataset(receiver, &cfg.specs);
    let lsh = Lsh::new(cfg.params.clone(), cfg.specs.clone());
    plaintext_matches(s.records(), r.records(), &lsh)
        .unwrap()
        .into_iter()
        .map(|(i, j, h)| (s.records()[i].id.clone(), r.records()[j].id.clone(), h as u32))
        .collect()
}

/// Pairs reported by `local`, with peer handles resolved through `peer`.
pub fn resolved_pairs(local: &SessionOutcome, peer: &SessionOutcome) -> BTreeSet<Pair> {
    local
        .result
        .entries
        .iter()
        .flat_map(|e| {
            e.peers.iter().map(move |p| {
                let id = peer.resolve_own_block(p.handle.block).expect("handle resolves").to_owned();
                (e.local_id.clone(), id, p.band_hits)
            })
        })
        .collect()
}
