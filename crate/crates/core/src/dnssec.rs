//! Zone keys, RRset signing and verification, and delegation digests.
//!
//! One algorithm is supported end to end: Ed25519 (algorithm 15) with
//! SHA-256 delegation digests (digest type 2). The signed data for an
//! RRSIG is the signature's own fields minus the signature itself,
//! followed by the canonical RRset bytes:
//!
//! ```text
//! covered type u16 | algorithm u8 | key tag u16 |
//! inception u64 | expiration u64 | canonical signer name |
//! canonical rrset bytes
//! ```

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::wire::{
    canonical_rrset_bytes, Dnskey, DomainName, Ds, RRset, RecordType, Rrsig, DNSKEY_FLAG_SEP,
    DNSKEY_FLAG_ZONE_KEY,
};

/// DNSSEC algorithm number for Ed25519.
pub const ALGORITHM_ED25519: u8 = 15;
/// DS digest type number for SHA-256.
pub const DIGEST_SHA256: u8 = 2;

/// Which of a zone's two keys signs an RRset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyRole {
    /// Zone signing key: signs ordinary RRsets.
    Zsk,
    /// Key signing key: signs the DNSKEY RRset only.
    Ksk,
}

/// A zone's signing key pair split: ZSK for record sets, KSK for the key
/// set itself.
#[derive(Clone)]
pub struct ZoneKeys {
    pub zone: DomainName,
    zsk: SigningKey,
    ksk: SigningKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DnssecError {
    #[error("key-signing key may only cover DNSKEY sets")]
    KskMisuse,
    #[error("unsupported digest type {0}")]
    UnsupportedDigest(u8),
    #[error("cannot sign an empty rrset")]
    EmptyRrset,
}

/// Why a signature failed to verify.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InvalidReason {
    BadSignature,
    Expired,
    NotYetValid,
    KeyMismatch,
}

/// Verification outcome; all failures are values, never errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Validity {
    Valid,
    Invalid(InvalidReason),
}

impl Validity {
    pub fn is_valid(self) -> bool {
        self == Validity::Valid
    }
}

/// Derives a zone's ZSK and KSK deterministically from a 32-byte seed.
/// The two keys come from independent HMAC invocations keyed on the seed,
/// so equal seeds reproduce equal keys and the pair is always distinct.
pub fn generate_zone_keys(zone: DomainName, seed: &[u8; 32]) -> ZoneKeys {
    let zsk = SigningKey::from_bytes(&derive_key_seed(seed, b"zsk"));
    let ksk = SigningKey::from_bytes(&derive_key_seed(seed, b"ksk"));
    ZoneKeys { zone, zsk, ksk }
}

fn derive_key_seed(seed: &[u8; 32], label: &[u8]) -> [u8; 32] {
    let mut mac = Hmac::<Sha256>::new_from_slice(seed).expect("hmac accepts any key length");
    mac.update(label);
    mac.finalize().into_bytes().into()
}

impl ZoneKeys {
    fn key(&self, role: KeyRole) -> &SigningKey {
        match role {
            KeyRole::Zsk => &self.zsk,
            KeyRole::Ksk => &self.ksk,
        }
    }

    /// Public DNSKEY record for one role.
    pub fn dnskey(&self, role: KeyRole) -> Dnskey {
        let flags = match role {
            KeyRole::Zsk => DNSKEY_FLAG_ZONE_KEY,
            KeyRole::Ksk => DNSKEY_FLAG_ZONE_KEY | DNSKEY_FLAG_SEP,
        };
        Dnskey {
            owner: self.zone.clone(),
            flags,
            algorithm: ALGORITHM_ED25519,
            public_key: self.key(role).verifying_key().to_bytes().to_vec(),
        }
    }

    /// The zone's DNSKEY RRset (ZSK then KSK).
    pub fn dnskey_rrset(&self, ttl: u32) -> RRset {
        RRset::new(
            self.zone.clone(),
            RecordType::Dnskey,
            ttl,
            vec![
                crate::wire::Rdata::Dnskey(self.dnskey(KeyRole::Zsk)),
                crate::wire::Rdata::Dnskey(self.dnskey(KeyRole::Ksk)),
            ],
        )
    }
}

/// Signs an RRset with one of the zone's keys.
///
/// The KSK is reserved for DNSKEY sets; anything else is refused.
pub fn sign_rrset(
    rrset: &RRset,
    keys: &ZoneKeys,
    role: KeyRole,
    validity: (u64, u64),
) -> Result<Rrsig, DnssecError> {
    if rrset.is_empty() {
        return Err(DnssecError::EmptyRrset);
    }
    if role == KeyRole::Ksk && rrset.rtype != RecordType::Dnskey {
        return Err(DnssecError::KskMisuse);
    }
    let (inception, expiration) = validity;
    let mut rrsig = Rrsig {
        covered_type: rrset.rtype,
        algorithm: ALGORITHM_ED25519,
        key_tag: key_tag(&keys.dnskey(role)),
        inception,
        expiration,
        signer: keys.zone.clone(),
        signature: Vec::new(),
    };
    let message = signed_data(&rrsig, rrset);
    rrsig.signature = keys.key(role).sign(&message).to_bytes().to_vec();
    Ok(rrsig)
}

/// Verifies one RRSIG against one candidate key at virtual time `now`.
pub fn verify_rrsig(rrset: &RRset, rrsig: &Rrsig, key: &Dnskey, now: u64) -> Validity {
    if key_tag(key) != rrsig.key_tag
        || key.algorithm != rrsig.algorithm
        || key.owner != rrsig.signer
        || !key.is_zone_key()
    {
        return Validity::Invalid(InvalidReason::KeyMismatch);
    }
    if now < rrsig.inception {
        return Validity::Invalid(InvalidReason::NotYetValid);
    }
    if now > rrsig.expiration {
        return Validity::Invalid(InvalidReason::Expired);
    }
    let Ok(pk_bytes) = <[u8; 32]>::try_from(key.public_key.as_slice()) else {
        return Validity::Invalid(InvalidReason::BadSignature);
    };
    let Ok(verifying) = VerifyingKey::from_bytes(&pk_bytes) else {
        return Validity::Invalid(InvalidReason::BadSignature);
    };
    let Ok(signature) = Signature::from_slice(&rrsig.signature) else {
        return Validity::Invalid(InvalidReason::BadSignature);
    };
    let message = signed_data(rrsig, rrset);
    if verifying.verify(&message, &signature).is_ok() {
        Validity::Valid
    } else {
        Validity::Invalid(InvalidReason::BadSignature)
    }
}

/// The byte string an RRSIG signs: its own fields minus the signature,
/// then the canonical RRset bytes. TTLs are zeroed inside the canonical
/// form, so TTL decay in caches never invalidates a signature.
pub fn signed_data(rrsig: &Rrsig, rrset: &RRset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&rrsig.covered_type.code().to_be_bytes());
    out.push(rrsig.algorithm);
    out.extend_from_slice(&rrsig.key_tag.to_be_bytes());
    out.extend_from_slice(&rrsig.inception.to_be_bytes());
    out.extend_from_slice(&rrsig.expiration.to_be_bytes());
    out.extend_from_slice(&rrsig.signer.canonical_wire());
    out.extend_from_slice(
        &canonical_rrset_bytes(&rrset.records()).expect("rrset uniform by construction"),
    );
    out
}

/// 16-bit key tag: the standard ones-complement-style checksum folded over
/// the DNSKEY rdata bytes.
pub fn key_tag(key: &Dnskey) -> u16 {
    let rdata = key.rdata_bytes();
    let mut acc: u32 = 0;
    for (i, byte) in rdata.iter().enumerate() {
        if i % 2 == 0 {
            acc += (*byte as u32) << 8;
        } else {
            acc += *byte as u32;
        }
    }
    acc += (acc >> 16) & 0xFFFF;
    (acc & 0xFFFF) as u16
}

/// Builds the delegation digest for a child zone key.
///
/// The digest input is the child's canonical (lowercased) owner name in
/// wire form followed by the DNSKEY rdata bytes.
pub fn compute_ds(child_dnskey: &Dnskey, digest_type: u8) -> Result<Ds, DnssecError> {
    if digest_type != DIGEST_SHA256 {
        return Err(DnssecError::UnsupportedDigest(digest_type));
    }
    let mut hasher = Sha256::new();
    hasher.update(child_dnskey.owner.canonical_wire());
    hasher.update(child_dnskey.rdata_bytes());
    Ok(Ds {
        owner: child_dnskey.owner.clone(),
        key_tag: key_tag(child_dnskey),
        algorithm: child_dnskey.algorithm,
        digest_type,
        digest: hasher.finalize().to_vec(),
    })
}

/// True iff the DS was derived from exactly this key.
pub fn match_ds(ds: &Ds, child_dnskey: &Dnskey) -> bool {
    match compute_ds(child_dnskey, ds.digest_type) {
        Ok(derived) => {
            derived.digest == ds.digest
                && derived.key_tag == ds.key_tag
                && derived.algorithm == ds.algorithm
        }
        Err(_) => false,
    }
}

/// A resolver's pre-installed anchor: the DS it trusts for the root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustAnchor {
    pub zone: DomainName,
    pub ds: Ds,
}

impl TrustAnchor {
    /// Anchor for a root zone's key-signing key.
    pub fn for_root_keys(keys: &ZoneKeys) -> Self {
        TrustAnchor {
            zone: keys.zone.clone(),
            ds: compute_ds(&keys.dnskey(KeyRole::Ksk), DIGEST_SHA256)
                .expect("sha-256 digest supported"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::Rdata;
    use rand_chacha::ChaCha20Rng;
    use rand_core::{RngCore, SeedableRng};
    use std::net::Ipv4Addr;

    fn name(s: &str) -> DomainName {
        DomainName::parse(s).unwrap()
    }

    fn sample_rrset() -> RRset {
        RRset::new(
            name("example.com"),
            RecordType::A,
            300,
            vec![
                Rdata::A(Ipv4Addr::new(192, 0, 2, 1)),
                Rdata::A(Ipv4Addr::new(192, 0, 2, 2)),
            ],
        )
    }

    const WINDOW: (u64, u64) = (1_000, 2_000);

    #[test]
    fn key_generation_is_deterministic_and_seed_sensitive() {
        let seed = [7u8; 32];
        let a = generate_zone_keys(name("example.com"), &seed);
        let b = generate_zone_keys(name("example.com"), &seed);
        assert_eq!(a.dnskey(KeyRole::Zsk), b.dnskey(KeyRole::Zsk));
        assert_eq!(a.dnskey(KeyRole::Ksk), b.dnskey(KeyRole::Ksk));
        assert_ne!(a.dnskey(KeyRole::Zsk), a.dnskey(KeyRole::Ksk));

        let mut other_seed = seed;
        other_seed[31] ^= 1;
        let c = generate_zone_keys(name("example.com"), &other_seed);
        assert_ne!(a.dnskey(KeyRole::Zsk), c.dnskey(KeyRole::Zsk));
        assert_ne!(a.dnskey(KeyRole::Ksk), c.dnskey(KeyRole::Ksk));
    }

    #[test]
    fn generated_zsk_signs_and_verifies() {
        let keys = generate_zone_keys(name("example.com"), &[1u8; 32]);
        let rrset = sample_rrset();
        let rrsig = sign_rrset(&rrset, &keys, KeyRole::Zsk, WINDOW).unwrap();
        assert_eq!(
            verify_rrsig(&rrset, &rrsig, &keys.dnskey(KeyRole::Zsk), 1_500),
            Validity::Valid
        );
    }

    #[test]
    fn ksk_only_signs_dnskey_sets() {
        let keys = generate_zone_keys(name("example.com"), &[1u8; 32]);
        assert_eq!(
            sign_rrset(&sample_rrset(), &keys, KeyRole::Ksk, WINDOW),
            Err(DnssecError::KskMisuse)
        );
        let dnskey_set = keys.dnskey_rrset(300);
        let rrsig = sign_rrset(&dnskey_set, &keys, KeyRole::Ksk, WINDOW).unwrap();
        assert_eq!(
            verify_rrsig(&dnskey_set, &rrsig, &keys.dnskey(KeyRole::Ksk), 1_500),
            Validity::Valid
        );
    }

    #[test]
    fn validity_window_boundaries() {
        let keys = generate_zone_keys(name("example.com"), &[2u8; 32]);
        let rrset = sample_rrset();
        let rrsig = sign_rrset(&rrset, &keys, KeyRole::Zsk, WINDOW).unwrap();
        let zsk = keys.dnskey(KeyRole::Zsk);
        assert_eq!(verify_rrsig(&rrset, &rrsig, &zsk, 1_000), Validity::Valid);
        assert_eq!(verify_rrsig(&rrset, &rrsig, &zsk, 2_000), Validity::Valid);
        assert_eq!(
            verify_rrsig(&rrset, &rrsig, &zsk, 2_001),
            Validity::Invalid(InvalidReason::Expired)
        );
        assert_eq!(
            verify_rrsig(&rrset, &rrsig, &zsk, 999),
            Validity::Invalid(InvalidReason::NotYetValid)
        );
    }

    #[test]
    fn cross_zone_key_rejected() {
        let keys = generate_zone_keys(name("example.com"), &[3u8; 32]);
        let other = generate_zone_keys(name("other.com"), &[4u8; 32]);
        let rrset = sample_rrset();
        let rrsig = sign_rrset(&rrset, &keys, KeyRole::Zsk, WINDOW).unwrap();
        let verdict = verify_rrsig(&rrset, &rrsig, &other.dnskey(KeyRole::Zsk), 1_500);
        assert!(matches!(
            verdict,
            Validity::Invalid(InvalidReason::KeyMismatch | InvalidReason::BadSignature)
        ));
    }

    #[test]
    fn ttl_change_never_affects_verification() {
        let keys = generate_zone_keys(name("example.com"), &[5u8; 32]);
        let rrset = sample_rrset();
        let rrsig = sign_rrset(&rrset, &keys, KeyRole::Zsk, WINDOW).unwrap();
        let mut decayed = rrset.clone();
        decayed.ttl = 1;
        assert_eq!(
            verify_rrsig(&decayed, &rrsig, &keys.dnskey(KeyRole::Zsk), 1_500),
            Validity::Valid
        );
    }

    #[test]
    fn bit_flips_in_signed_data_break_verification() {
        let keys = generate_zone_keys(name("example.com"), &[6u8; 32]);
        let rrset = sample_rrset();
        let rrsig = sign_rrset(&rrset, &keys, KeyRole::Zsk, WINDOW).unwrap();
        let zsk = keys.dnskey(KeyRole::Zsk);
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        for _ in 0..100 {
            let mut tampered = rrset.clone();
            // Flip one random bit in one address.
            let which = (rng.next_u32() as usize) % tampered.rdatas.len();
            let bit = rng.next_u32() % 32;
            if let Rdata::A(addr) = &tampered.rdatas[which] {
                let mut octets = addr.octets();
                octets[(bit / 8) as usize] ^= 1 << (bit % 8);
                tampered.rdatas[which] = Rdata::A(Ipv4Addr::from(octets));
            }
            assert_eq!(
                verify_rrsig(&tampered, &rrsig, &zsk, 1_500),
                Validity::Invalid(InvalidReason::BadSignature)
            );
        }
    }

    #[test]
    fn ds_digest_is_deterministic_and_sized() {
        let keys = generate_zone_keys(name("example.com"), &[8u8; 32]);
        let zsk = keys.dnskey(KeyRole::Zsk);
        let a = compute_ds(&zsk, DIGEST_SHA256).unwrap();
        let b = compute_ds(&zsk, DIGEST_SHA256).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.digest.len(), 32);
        assert_eq!(compute_ds(&zsk, 1), Err(DnssecError::UnsupportedDigest(1)));
    }

    #[test]
    fn ds_matches_only_its_own_key() {
        let keys = generate_zone_keys(name("example.com"), &[9u8; 32]);
        let other = generate_zone_keys(name("example.com"), &[10u8; 32]);
        let ksk = keys.dnskey(KeyRole::Ksk);
        let ds = compute_ds(&ksk, DIGEST_SHA256).unwrap();
        assert!(match_ds(&ds, &ksk));
        assert!(!match_ds(&ds, &other.dnskey(KeyRole::Ksk)));
        assert!(!match_ds(&ds, &keys.dnskey(KeyRole::Zsk)));

        let mut rng = ChaCha20Rng::seed_from_u64(1234);
        for _ in 0..100 {
            let mut flipped = ksk.clone();
            let byte = (rng.next_u32() as usize) % flipped.public_key.len();
            let bit = rng.next_u32() % 8;
            flipped.public_key[byte] ^= 1 << bit;
            assert!(!match_ds(&ds, &flipped));
        }
    }
}
