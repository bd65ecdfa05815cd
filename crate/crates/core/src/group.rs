//! Prime-order group used for commutative encryption: NIST P-256.
//!
//! Values are hashed onto the curve with the random-oracle hash-to-curve
//! suite `P256_XMD:SHA-256_SSWU_RO_`, so nobody knows the discrete log of a
//! hashed point. Elements travel as 33-byte compressed SEC1 points; the
//! identity has no encoding in this format and is never produced.

use std::fmt;
use std::hash::{Hash, Hasher};

use p256::elliptic_curve::hash2curve::{ExpandMsgXmd, GroupDigest};
use p256::elliptic_curve::sec1::{FromEncodedPoint, ToEncodedPoint};
use p256::elliptic_curve::PrimeField;
use p256::{AffinePoint, EncodedPoint, NistP256, NonZeroScalar, ProjectivePoint};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use rand_core::{CryptoRng, OsRng, RngCore, SeedableRng};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Length of a canonical element encoding.
pub const ELEMENT_LEN: usize = 33;

const HASH_TO_CURVE_DST: &[u8] = b"LSHPSI-V01-CS01-with-P256_XMD:SHA-256_SSWU_RO_";

/// A secret exponent in [1, q-1].
#[derive(Clone, Copy)]
pub struct Scalar(NonZeroScalar);

impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Scalar(..)")
    }
}

impl Scalar {
    /// Fresh uniform scalar from the operating system's entropy source.
    pub fn random() -> Result<Self> {
        let mut bytes = [0u8; 32];
        OsRng.try_fill_bytes(&mut bytes).map_err(|e| Error::Entropy(e.to_string()))?;
        Ok(Self::from_entropy(&bytes))
    }

    /// Uniform scalar drawn from a caller-supplied RNG.
    pub fn random_from<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Scalar(NonZeroScalar::random(rng))
    }

    /// Deterministic scalar from 32 bytes of entropy (test mode).
    pub fn from_entropy(entropy: &[u8; 32]) -> Self {
        let mut rng = ChaCha20Rng::from_seed(*entropy);
        Scalar(NonZeroScalar::random(&mut rng))
    }

    pub fn invert(&self) -> Scalar {
        let inv = Option::<p256::Scalar>::from(self.0.as_ref().invert()).expect("nonzero scalar is invertible");
        Scalar(NonZeroScalar::new(inv).expect("inverse is nonzero"))
    }

    pub fn mul(&self, other: &Scalar) -> Scalar {
        let product = *self.0.as_ref() * *other.0.as_ref();
        Scalar(NonZeroScalar::new(product).expect("product of nonzero scalars in a prime field"))
    }

    /// Big-endian bytes of the scalar. Only for tests and derivations;
    /// session keys are never serialized.
    pub fn to_be_bytes(&self) -> [u8; 32] {
        self.0.to_repr().into()
    }

    pub fn from_be_bytes(bytes: &[u8; 32]) -> Option<Scalar> {
        let s = p256::Scalar::from_repr((*bytes).into());
        Option::<p256::Scalar>::from(s).and_then(|s| Option::from(NonZeroScalar::new(s))).map(Scalar)
    }

    /// Public fingerprint `SHA-256(G * k)`, used to compare keys without
    /// exposing them.
    pub fn fingerprint(&self) -> [u8; 32] {
        let p = (ProjectivePoint::GENERATOR * *self.0).to_affine();
        Sha256::digest(p.to_encoded_point(true).as_bytes()).into()
    }

    pub fn is_one(&self) -> bool {
        *self.0.as_ref() == p256::Scalar::ONE
    }
}

/// Generate a fresh session key.
pub fn keygen() -> Result<Scalar> {
    Scalar::random()
}

/// A non-identity point of the P-256 group.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct GroupElement(AffinePoint);

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupElement({})", hex::encode(self.to_bytes()))
    }
}

impl Hash for GroupElement {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.to_bytes().hash(state)
    }
}

impl GroupElement {
    /// Canonical 33-byte compressed encoding.
    pub fn to_bytes(&self) -> [u8; ELEMENT_LEN] {
        let enc = self.0.to_encoded_point(true);
        enc.as_bytes().try_into().expect("compressed P-256 point is 33 bytes")
    }

    /// Parse a compressed point, rejecting wrong lengths, the identity,
    /// non-canonical coordinates and points off the curve.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != ELEMENT_LEN || !(bytes[0] == 0x02 || bytes[0] == 0x03) {
            return Err(Error::MalformedElement);
        }
        let enc = EncodedPoint::from_bytes(bytes).map_err(|_| Error::MalformedElement)?;
        let p = Option::<AffinePoint>::from(AffinePoint::from_encoded_point(&enc)).ok_or(Error::MalformedElement)?;
        if bool::from(p.is_identity()) {
            return Err(Error::MalformedElement);
        }
        Ok(GroupElement(p))
    }

    /// Raise the element to the scalar (scalar multiplication on the curve).
    pub fn exp(&self, k: &Scalar) -> GroupElement {
        GroupElement((ProjectivePoint::from(self.0) * *k.0).to_affine())
    }

    pub fn generator() -> GroupElement {
        GroupElement(AffinePoint::GENERATOR)
    }
}

/// Hash arbitrary bytes onto the curve via simplified SWU mapping.
pub fn hash_to_group(msg: &[u8]) -> GroupElement {
    let p = NistP256::hash_from_bytes::<ExpandMsgXmd<Sha256>>(&[msg], &[HASH_TO_CURVE_DST])
        .expect("fixed DST is within length limits");
    GroupElement(p.to_affine())
}

/// Exponentiate a batch of elements with a shared scalar.
pub fn exp_all(elements: &[GroupElement], k: &Scalar) -> Vec<GroupElement> {
    let projective: Vec<ProjectivePoint> = elements.par_iter().map(|e| ProjectivePoint::from(e.0) * *k.0).collect();
    let mut affine = vec![AffinePoint::IDENTITY; projective.len()];
    <ProjectivePoint as p256::elliptic_curve::group::Curve>::batch_normalize(&projective, &mut affine);
    affine.into_iter().map(GroupElement).collect()
}

/// Hash and exponentiate a batch of byte strings.
pub fn hash_exp_all<T: AsRef<[u8]> + Sync>(items: &[T], k: &Scalar) -> Vec<GroupElement> {
    let projective: Vec<ProjectivePoint> = items
        .par_iter()
        .map(|m| {
            NistP256::hash_from_bytes::<ExpandMsgXmd<Sha256>>(&[m.as_ref()], &[HASH_TO_CURVE_DST])
                .expect("fixed DST is within length limits")
                * *k.0
        })
        .collect();
    let mut affine = vec![AffinePoint::IDENTITY; projective.len()];
    <ProjectivePoint as p256::elliptic_curve::group::Curve>::batch_normalize(&projective, &mut affine);
    affine.into_iter().map(GroupElement).collect()
}
