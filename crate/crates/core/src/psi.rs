//! Diffie-Hellman private set intersection over ordered lists.
//!
//! Each party raises hashed items to its secret scalar; the peer raises them
//! again. Because exponentiation commutes, equal plaintexts meet as equal
//! twice-encrypted elements, while everything else stays pseudorandom.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::group::{exp_all, hash_exp_all, GroupElement, Scalar, ELEMENT_LEN};
use crate::transport::Batch;

/// How many times a list has been exponentiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Once,
    Twice,
}

/// An ordered list of encrypted items. Order carries meaning: position `i`
/// of a signature list is band `i mod B` of block `i / B`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptedList {
    items: Vec<GroupElement>,
    stage: Stage,
}

impl EncryptedList {
    pub fn new(items: Vec<GroupElement>, stage: Stage) -> Self {
        EncryptedList { items, stage }
    }

    /// Decode a received batch, rejecting any invalid element.
    pub fn from_batch(batch: &Batch, stage: Stage) -> Result<Self> {
        let items = batch
            .as_bytes()
            .par_chunks_exact(ELEMENT_LEN)
            .map(GroupElement::from_bytes)
            .collect::<Result<Vec<_>>>()?;
        Ok(EncryptedList { items, stage })
    }

    pub fn items(&self) -> &[GroupElement] {
        &self.items
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn to_wire(&self) -> Vec<[u8; ELEMENT_LEN]> {
        self.items.iter().map(GroupElement::to_bytes).collect()
    }
}

/// Hash each item onto the group and exponentiate by `sk`, keeping order.
pub fn encrypt_own<T: AsRef<[u8]> + Sync>(items: &[T], sk: &Scalar) -> EncryptedList {
    EncryptedList::new(hash_exp_all(items, sk), Stage::Once)
}

/// Exponentiate the peer's once-encrypted list by `sk`, optionally applying
/// a block permutation to the result.
pub fn reencrypt_peer(list: &EncryptedList, sk: &Scalar, permute: Option<&BlockPermutation>) -> Result<EncryptedList> {
    if list.stage != Stage::Once {
        return Err(Error::Input("re-encryption expects a once-encrypted list".into()));
    }
    let mut items = exp_all(&list.items, sk);
    if let Some(p) = permute {
        items = p.apply(&items)?;
    }
    Ok(EncryptedList::new(items, Stage::Twice))
}

/// Hashed index over a twice-encrypted list: element encoding to positions.
pub struct ElementIndex {
    positions: HashMap<[u8; ELEMENT_LEN], Vec<u32>>,
}

impl ElementIndex {
    pub fn build(list: &EncryptedList) -> Self {
        let mut positions: HashMap<[u8; ELEMENT_LEN], Vec<u32>> = HashMap::with_capacity(list.len());
        for (i, e) in list.items.iter().enumerate() {
            positions.entry(e.to_bytes()).or_default().push(i as u32);
        }
        ElementIndex { positions }
    }

    pub fn contains(&self, e: &GroupElement) -> bool {
        self.positions.contains_key(&e.to_bytes())
    }

    pub fn positions(&self, e: &GroupElement) -> &[u32] {
        self.positions.get(&e.to_bytes()).map_or(&[], Vec::as_slice)
    }
}

/// `M[i] = 1` iff `mine[i]` occurs anywhere in `theirs`.
pub fn intersect(mine: &EncryptedList, theirs: &EncryptedList) -> Result<Vec<bool>> {
    if mine.stage != Stage::Twice || theirs.stage != Stage::Twice {
        return Err(Error::Input("intersection needs twice-encrypted lists".into()));
    }
    let index: HashSet<[u8; ELEMENT_LEN]> = theirs.items.iter().map(GroupElement::to_bytes).collect();
    Ok(mine.items.iter().map(|e| index.contains(&e.to_bytes())).collect())
}

/// A permutation of a list made of equal-sized blocks: whole blocks move
/// together, and positions inside each block are shuffled independently.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPermutation {
    block_size: usize,
    /// Output block `i` is input block `outer[i]`.
    outer: Vec<usize>,
    /// Within output block `i`, slot `j` holds input slot `inner[i][j]`.
    inner: Vec<Vec<usize>>,
}

impl BlockPermutation {
    pub fn identity(blocks: usize, block_size: usize) -> Self {
        assert!(block_size > 0);
        BlockPermutation {
            block_size,
            outer: (0..blocks).collect(),
            inner: vec![(0..block_size).collect(); blocks],
        }
    }

    pub fn random<R: Rng + ?Sized>(blocks: usize, block_size: usize, rng: &mut R) -> Self {
        let mut p = Self::identity(blocks, block_size);
        p.outer.shuffle(rng);
        for slots in &mut p.inner {
            slots.shuffle(rng);
        }
        p
    }

    pub fn blocks(&self) -> usize {
        self.outer.len()
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Input position that lands at output position `out`.
    pub fn source(&self, out: usize) -> usize {
        let (b, j) = (out / self.block_size, out % self.block_size);
        self.outer[b] * self.block_size + self.inner[b][j]
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.outer.len() * self.block_size {
            return Err(Error::LengthMismatch(len, self.outer.len() * self.block_size));
        }
        Ok(())
    }

    pub fn apply<T: Clone>(&self, items: &[T]) -> Result<Vec<T>> {
        self.check_len(items.len())?;
        Ok((0..items.len()).map(|i| items[self.source(i)].clone()).collect())
    }

    pub fn invert<T: Clone>(&self, permuted: &[T]) -> Result<Vec<T>> {
        self.check_len(permuted.len())?;
        let mut out: Vec<Option<T>> = vec![None; permuted.len()];
        for (i, item) in permuted.iter().enumerate() {
            out[self.source(i)] = Some(item.clone());
        }
        Ok(out.into_iter().map(|x| x.expect("bijection")).collect())
    }
}

/// Cardinality-only PSI, responder side: encrypt own items, re-encrypt the
/// initiator's list and shuffle it so only its size and overlap survive.
pub fn psi_ca_respond<T: AsRef<[u8]> + Sync, R: Rng + ?Sized>(
    initiator: &EncryptedList,
    own_items: &[T],
    sk: &Scalar,
    rng: &mut R,
) -> Result<(EncryptedList, EncryptedList)> {
    let own = encrypt_own(own_items, sk);
    let mut twice = reencrypt_peer(initiator, sk, None)?;
    twice.items.shuffle(rng);
    Ok((own, twice))
}

/// Cardinality-only PSI, initiator side: `|S ∩ R|` from the shuffled
/// twice-encrypted own items and the responder's once-encrypted items.
pub fn psi_ca_finish(own_twice: &EncryptedList, responder: &EncryptedList, sk: &Scalar) -> Result<usize> {
    let theirs = reencrypt_peer(responder, sk, None)?;
    let own: HashSet<[u8; ELEMENT_LEN]> = own_twice.items.iter().map(GroupElement::to_bytes).collect();
    let theirs: HashSet<[u8; ELEMENT_LEN]> = theirs.items.iter().map(GroupElement::to_bytes).collect();
    Ok(own.intersection(&theirs).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn keys() -> (Scalar, Scalar) {
        (Scalar::from_entropy(&[1; 32]), Scalar::from_entropy(&[2; 32]))
    }

    fn double(a: &[&str], b: &[&str]) -> (EncryptedList, EncryptedList) {
        let (ks, kr) = keys();
        let s1 = encrypt_own(a, &ks);
        let r1 = encrypt_own(b, &kr);
        (reencrypt_peer(&s1, &kr, None).unwrap(), reencrypt_peer(&r1, &ks, None).unwrap())
    }

    #[test]
    fn small_intersection() {
        let (s, r) = double(&["a", "b", "c"], &["b", "c", "d"]);
        assert_eq!(intersect(&s, &r).unwrap(), vec![false, true, true]);
        let (s, r) = double(&["a", "b"], &["x", "y", "z"]);
        assert_eq!(intersect(&s, &r).unwrap(), vec![false, false]);
        let (s, r) = double(&["p", "q"], &["p", "q"]);
        assert_eq!(intersect(&s, &r).unwrap(), vec![true, true]);
    }

    #[test]
    fn empty_and_arity() {
        let (ks, _) = keys();
        assert!(encrypt_own::<&str>(&[], &ks).is_empty());
        let l = encrypt_own(&["x", "x", "y"], &ks);
        assert_eq!(l.len(), 3);
        assert_eq!(l.items()[0], l.items()[1]);
        assert_ne!(l.items()[0], l.items()[2]);
    }

    #[test]
    fn stage_is_enforced() {
        let (ks, kr) = keys();
        let once = encrypt_own(&["x"], &ks);
        assert!(intersect(&once, &once).is_err());
        let twice = reencrypt_peer(&once, &kr, None).unwrap();
        assert!(reencrypt_peer(&twice, &kr, None).is_err());
    }

    #[test]
    fn unpermuted_reencryption_keeps_order() {
        let (ks, kr) = keys();
        let items: Vec<String> = (0..40).map(|i| format!("item{i}")).collect();
        let s2 = reencrypt_peer(&encrypt_own(&items, &ks), &kr, None).unwrap();
        let r2 = reencrypt_peer(&encrypt_own(&items, &kr), &ks, None).unwrap();
        assert_eq!(s2, r2);
    }

    #[test]
    fn oracle_equivalence_on_random_universes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (ks, kr) = keys();
        for _ in 0..100 {
            let universe = rng.gen_range(1..=512u32);
            let draw = |rng: &mut ChaCha8Rng| -> Vec<String> {
                let n = rng.gen_range(0..24);
                (0..n).map(|_| format!("u{}", rng.gen_range(0..universe))).collect()
            };
            let (a, b) = (draw(&mut rng), draw(&mut rng));
            let s2 = reencrypt_peer(&encrypt_own(&a, &ks), &kr, None).unwrap();
            let r2 = reencrypt_peer(&encrypt_own(&b, &kr), &ks, None).unwrap();
            let plain: HashSet<&String> = b.iter().collect();
            let expect: Vec<bool> = a.iter().map(|x| plain.contains(x)).collect();
            assert_eq!(intersect(&s2, &r2).unwrap(), expect);
        }
    }

    #[test]
    fn block_permutation_degenerate_block_is_plain_shuffle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = BlockPermutation::random(10, 1, &mut rng);
        let items: Vec<u32> = (0..10).collect();
        let mut out = p.apply(&items).unwrap();
        out.sort_unstable();
        assert_eq!(out, items);
    }

    #[test]
    fn block_permutation_keeps_block_hit_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hits: Vec<bool> = (0..60).map(|_| rng.gen_bool(0.2)).collect();
        let p = BlockPermutation::random(12, 5, &mut rng);
        let out = p.apply(&hits).unwrap();
        let counts = |m: &[bool]| {
            let mut c: Vec<usize> = m.chunks(5).map(|b| b.iter().filter(|x| **x).count()).collect();
            c.sort_unstable();
            c
        };
        assert_eq!(counts(&hits), counts(&out));
        assert!(p.apply(&hits[..59]).is_err());
    }

    #[test]
    fn psi_ca_counts_example_shingles() {
        let s: HashSet<&str> = crate::lsh::shingles("sunset blvd los angeles", 5).into_iter().collect();
        let r: HashSet<&str> = crate::lsh::shingles("sunet blvd los angeles", 5).into_iter().collect();
        let (s, r): (Vec<&str>, Vec<&str>) = (s.into_iter().collect(), r.into_iter().collect());
        let (ks, kr) = keys();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s1 = encrypt_own(&s, &ks);
        let (r1, s2) = psi_ca_respond(&s1, &r, &kr, &mut rng).unwrap();
        let count = psi_ca_finish(&s2, &r1, &ks).unwrap();
        assert_eq!((s.len(), r.len(), count), (19, 18, 15));

        let (r1, s2) = psi_ca_respond(&s1, &s, &kr, &mut rng).unwrap();
        assert_eq!(psi_ca_finish(&s2, &r1, &ks).unwrap(), s.len());
        let (r1, s2) = psi_ca_respond(&s1, &["zzzzz"], &kr, &mut rng).unwrap();
        assert_eq!(psi_ca_finish(&s2, &r1, &ks).unwrap(), 0);
    }

    proptest! {
        #[test]
        fn block_permutation_inverse_restores(blocks in 0usize..20, size in 1usize..8, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = BlockPermutation::random(blocks, size, &mut rng);
            let items: Vec<usize> = (0..blocks * size).collect();
            let permuted = p.apply(&items).unwrap();
            prop_assert_eq!(p.invert(&permuted).unwrap(), items.clone());
            for (i, v) in permuted.iter().enumerate() {
                prop_assert_eq!(*v / size, p.outer[i / size]);
                prop_assert_eq!(p.source(i), *v);
            }
        }
    }
}
