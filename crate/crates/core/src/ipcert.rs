//! A minimal one-level PKI for certificates bound to IPv4 addresses.
//!
//! A root CA signs server certificates directly; there are no chains and
//! no ASN.1. The certificate's subject is the server's IP address and its
//! subject key is the X25519 identity key the server uses in the channel
//! handshake. Serialized layout (network byte order):
//!
//! ```text
//! subject ip (4) | key len u16 | subject public key |
//! issuer len u16 | issuer utf-8 | serial u64 |
//! inception u64 | expiration u64 | sig len u16 | signature
//! ```
//!
//! The signature covers every field before it.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A certificate binding an IPv4 address to a channel identity key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IpCertificate {
    pub subject_ip: Ipv4Addr,
    pub subject_public_key: Vec<u8>,
    pub issuer: String,
    pub serial: u64,
    pub inception: u64,
    pub expiration: u64,
    pub signature: Vec<u8>,
}

impl IpCertificate {
    /// The bytes the issuer signs.
    pub fn signed_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.subject_ip.octets());
        out.extend_from_slice(&(self.subject_public_key.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.subject_public_key);
        out.extend_from_slice(&(self.issuer.len() as u16).to_be_bytes());
        out.extend_from_slice(self.issuer.as_bytes());
        out.extend_from_slice(&self.serial.to_be_bytes());
        out.extend_from_slice(&self.inception.to_be_bytes());
        out.extend_from_slice(&self.expiration.to_be_bytes());
        out
    }

    /// Full serialized form, as carried in the handshake.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.signed_bytes();
        out.extend_from_slice(&(self.signature.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CertParseError> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, len: usize| -> Result<&[u8], CertParseError> {
            if bytes.len() - *pos < len {
                return Err(CertParseError::Truncated);
            }
            let slice = &bytes[*pos..*pos + len];
            *pos += len;
            Ok(slice)
        };
        let ip_octets = take(&mut pos, 4)?;
        let subject_ip = Ipv4Addr::new(ip_octets[0], ip_octets[1], ip_octets[2], ip_octets[3]);
        let key_len = u16::from_be_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let subject_public_key = take(&mut pos, key_len)?.to_vec();
        let issuer_len = u16::from_be_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let issuer = String::from_utf8(take(&mut pos, issuer_len)?.to_vec())
            .map_err(|_| CertParseError::BadIssuer)?;
        let serial = u64::from_be_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let inception = u64::from_be_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let expiration = u64::from_be_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let sig_len = u16::from_be_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let signature = take(&mut pos, sig_len)?.to_vec();
        if pos != bytes.len() {
            return Err(CertParseError::TrailingBytes);
        }
        Ok(IpCertificate {
            subject_ip,
            subject_public_key,
            issuer,
            serial,
            inception,
            expiration,
            signature,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CertParseError {
    #[error("certificate bytes truncated")]
    Truncated,
    #[error("issuer is not utf-8")]
    BadIssuer,
    #[error("trailing bytes after certificate")]
    TrailingBytes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum IssueError {
    #[error("certificate validity window is empty")]
    EmptyValidity,
}

/// Why verification rejected a certificate. Order matters: the subject IP
/// check dominates every other failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    IpMismatch,
    UnknownIssuer,
    BadSignature,
    Expired,
    NotYetValid,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RejectReason::IpMismatch => "ip mismatch",
            RejectReason::UnknownIssuer => "unknown issuer",
            RejectReason::BadSignature => "bad signature",
            RejectReason::Expired => "expired",
            RejectReason::NotYetValid => "not yet valid",
        };
        f.write_str(s)
    }
}

/// Certificate verification verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CertVerdict {
    Accepted,
    Rejected(RejectReason),
}

impl CertVerdict {
    pub fn is_accepted(self) -> bool {
        self == CertVerdict::Accepted
    }
}

/// A certificate authority: name, Ed25519 keypair, and a self-signed root
/// credential.
#[derive(Clone)]
pub struct CaIdentity {
    pub name: String,
    keypair: SigningKey,
    root: IpCertificate,
}

impl CaIdentity {
    /// Deterministically derives a CA from a seed.
    pub fn from_seed(name: &str, seed: &[u8; 32]) -> Self {
        let keypair = SigningKey::from_bytes(seed);
        let mut root = IpCertificate {
            subject_ip: Ipv4Addr::UNSPECIFIED,
            subject_public_key: keypair.verifying_key().to_bytes().to_vec(),
            issuer: name.to_string(),
            serial: 0,
            inception: 0,
            expiration: u64::MAX,
            signature: Vec::new(),
        };
        root.signature = keypair.sign(&root.signed_bytes()).to_bytes().to_vec();
        CaIdentity {
            name: name.to_string(),
            keypair,
            root,
        }
    }

    pub fn public_key(&self) -> VerifyingKey {
        self.keypair.verifying_key()
    }

    /// The self-signed root credential.
    pub fn root_credential(&self) -> &IpCertificate {
        &self.root
    }
}

/// The CA public keys a verifier trusts, by issuer name.
#[derive(Debug, Clone, Default)]
pub struct TrustStore {
    roots: BTreeMap<String, VerifyingKey>,
}

impl TrustStore {
    pub fn new() -> Self {
        TrustStore::default()
    }

    pub fn with_ca(ca: &CaIdentity) -> Self {
        let mut store = TrustStore::new();
        store.add_root(&ca.name, ca.public_key());
        store
    }

    pub fn add_root(&mut self, name: &str, key: VerifyingKey) {
        self.roots.insert(name.to_string(), key);
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    fn root_key(&self, issuer: &str) -> Option<&VerifyingKey> {
        self.roots.get(issuer)
    }
}

/// Issues a certificate binding `subject_ip` to `subject_key`.
pub fn issue_cert(
    ca: &CaIdentity,
    subject_ip: Ipv4Addr,
    subject_key: &[u8],
    serial: u64,
    validity: (u64, u64),
) -> Result<IpCertificate, IssueError> {
    let (inception, expiration) = validity;
    if inception >= expiration {
        return Err(IssueError::EmptyValidity);
    }
    let mut cert = IpCertificate {
        subject_ip,
        subject_public_key: subject_key.to_vec(),
        issuer: ca.name.clone(),
        serial,
        inception,
        expiration,
        signature: Vec::new(),
    };
    cert.signature = ca.keypair.sign(&cert.signed_bytes()).to_bytes().to_vec();
    Ok(cert)
}

/// Verifies a certificate against the address the parent referral supplied.
///
/// Accepted iff the subject IP equals `expected_ip`, the issuer is a trusted
/// root, the signature verifies, and `now` lies inside the validity window.
/// Rejection reasons are prioritized in exactly that order, so an IP
/// mismatch is reported even when the signature is also bad.
pub fn verify_cert(
    cert: &IpCertificate,
    expected_ip: Ipv4Addr,
    store: &TrustStore,
    now: u64,
) -> CertVerdict {
    if cert.subject_ip != expected_ip {
        return CertVerdict::Rejected(RejectReason::IpMismatch);
    }
    let Some(root) = store.root_key(&cert.issuer) else {
        return CertVerdict::Rejected(RejectReason::UnknownIssuer);
    };
    let Ok(signature) = Signature::from_slice(&cert.signature) else {
        return CertVerdict::Rejected(RejectReason::BadSignature);
    };
    if root.verify(&cert.signed_bytes(), &signature).is_err() {
        return CertVerdict::Rejected(RejectReason::BadSignature);
    }
    if now < cert.inception {
        return CertVerdict::Rejected(RejectReason::NotYetValid);
    }
    if now > cert.expiration {
        return CertVerdict::Rejected(RejectReason::Expired);
    }
    CertVerdict::Accepted
}
