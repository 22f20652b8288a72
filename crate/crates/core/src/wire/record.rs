//! Resource records and the rdata layouts this resolver understands.
//!
//! The supported type set is frozen to what the protocol needs:
//! A, NS, DNSKEY, RRSIG, DS and OPT. Rdata layouts:
//!
//! ```text
//! A       address (4 octets)
//! NS      target name (uncompressed)
//! DNSKEY  flags u16 | protocol u8 (always 3) | algorithm u8 | public key
//! RRSIG   covered type u16 | algorithm u8 | key tag u16 |
//!         inception u64 | expiration u64 | signer name | signature
//! DS      key tag u16 | algorithm u8 | digest type u8 | digest
//! OPT     (code u16 | length u16 | payload)*
//! ```
//!
//! All integers are network byte order. Names inside rdata are never
//! compressed on output.

use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::name::DomainName;
use super::WireError;

/// Record types in the frozen supported set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RecordType {
    A,
    Ns,
    Ds,
    Rrsig,
    Dnskey,
    Opt,
}

impl RecordType {
    pub fn code(self) -> u16 {
        match self {
            RecordType::A => 1,
            RecordType::Ns => 2,
            RecordType::Ds => 43,
            RecordType::Rrsig => 46,
            RecordType::Dnskey => 48,
            RecordType::Opt => 41,
        }
    }

    pub fn from_code(code: u16) -> Result<Self, WireError> {
        match code {
            1 => Ok(RecordType::A),
            2 => Ok(RecordType::Ns),
            43 => Ok(RecordType::Ds),
            46 => Ok(RecordType::Rrsig),
            48 => Ok(RecordType::Dnskey),
            41 => Ok(RecordType::Opt),
            other => Err(WireError::UnsupportedType(other)),
        }
    }
}

impl fmt::Display for RecordType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RecordType::A => "A",
            RecordType::Ns => "NS",
            RecordType::Ds => "DS",
            RecordType::Rrsig => "RRSIG",
            RecordType::Dnskey => "DNSKEY",
            RecordType::Opt => "OPT",
        };
        f.write_str(s)
    }
}

/// The IN class code. The codec only ever emits and accepts IN.
pub const CLASS_IN: u16 = 1;

/// DNSKEY flags bit for "this is a zone key".
pub const DNSKEY_FLAG_ZONE_KEY: u16 = 0x0100;
/// DNSKEY flags bit for the secure entry point (set on key-signing keys).
pub const DNSKEY_FLAG_SEP: u16 = 0x0001;

/// A zone public key record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dnskey {
    pub owner: DomainName,
    pub flags: u16,
    pub algorithm: u8,
    pub public_key: Vec<u8>,
}

impl Dnskey {
    pub fn is_zone_key(&self) -> bool {
        self.flags & DNSKEY_FLAG_ZONE_KEY != 0
    }

    pub fn is_sep(&self) -> bool {
        self.flags & DNSKEY_FLAG_SEP != 0
    }

    /// Rdata bytes: the layout hashed into DS digests and key tags.
    pub fn rdata_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.public_key.len());
        out.extend_from_slice(&self.flags.to_be_bytes());
        out.push(3); // protocol, fixed
        out.push(self.algorithm);
        out.extend_from_slice(&self.public_key);
        out
    }
}

/// A signature over one RRset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rrsig {
    pub covered_type: RecordType,
    pub algorithm: u8,
    pub key_tag: u16,
    pub inception: u64,
    pub expiration: u64,
    pub signer: DomainName,
    pub signature: Vec<u8>,
}

/// A delegation digest: the parent-held hash of a child zone key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ds {
    pub owner: DomainName,
    pub key_tag: u16,
    pub algorithm: u8,
    pub digest_type: u8,
    pub digest: Vec<u8>,
}

/// EDNS option code signalling that the resolver saw no DS for the queried
/// zone (query side, empty payload).
pub const EDNS_DS_ABSENT: u16 = 65001;
/// EDNS option code advertising a bridge endpoint (response side, payload is
/// the 16-bit bridge port).
pub const EDNS_BRIDGE_AVAILABLE: u16 = 65002;

/// One EDNS(0) option carried in the OPT record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdnsOption {
    pub code: u16,
    pub payload: Vec<u8>,
}

impl EdnsOption {
    pub fn ds_absent() -> Self {
        EdnsOption {
            code: EDNS_DS_ABSENT,
            payload: Vec::new(),
        }
    }

    pub fn bridge_available(port: u16) -> Self {
        EdnsOption {
            code: EDNS_BRIDGE_AVAILABLE,
            payload: port.to_be_bytes().to_vec(),
        }
    }

    pub fn is_ds_absent(&self) -> bool {
        self.code == EDNS_DS_ABSENT
    }

    /// Decodes the advertised bridge port, if this is that option.
    pub fn bridge_port(&self) -> Option<u16> {
        if self.code == EDNS_BRIDGE_AVAILABLE && self.payload.len() == 2 {
            Some(u16::from_be_bytes([self.payload[0], self.payload[1]]))
        } else {
            None
        }
    }
}

/// Type-specific record payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rdata {
    A(Ipv4Addr),
    Ns(DomainName),
    Dnskey(Dnskey),
    Rrsig(Rrsig),
    Ds(Ds),
    Opt(Vec<EdnsOption>),
}

impl Rdata {
    pub fn rtype(&self) -> RecordType {
        match self {
            Rdata::A(_) => RecordType::A,
            Rdata::Ns(_) => RecordType::Ns,
            Rdata::Dnskey(_) => RecordType::Dnskey,
            Rdata::Rrsig(_) => RecordType::Rrsig,
            Rdata::Ds(_) => RecordType::Ds,
            Rdata::Opt(_) => RecordType::Opt,
        }
    }

    /// Encodes the rdata. With `canonical` set, names embedded in the rdata
    /// are lowercased; that is the form signatures cover.
    pub fn encode(&self, canonical: bool) -> Vec<u8> {
        let name_bytes = |name: &DomainName| {
            if canonical {
                name.canonical_wire()
            } else {
                name.to_wire()
            }
        };
        match self {
            Rdata::A(addr) => addr.octets().to_vec(),
            Rdata::Ns(target) => name_bytes(target),
            Rdata::Dnskey(key) => key.rdata_bytes(),
            Rdata::Rrsig(sig) => {
                let mut out = Vec::new();
                out.extend_from_slice(&sig.covered_type.code().to_be_bytes());
                out.push(sig.algorithm);
                out.extend_from_slice(&sig.key_tag.to_be_bytes());
                out.extend_from_slice(&sig.inception.to_be_bytes());
                out.extend_from_slice(&sig.expiration.to_be_bytes());
                out.extend_from_slice(&name_bytes(&sig.signer));
                out.extend_from_slice(&sig.signature);
                out
            }
            Rdata::Ds(ds) => {
                let mut out = Vec::with_capacity(4 + ds.digest.len());
                out.extend_from_slice(&ds.key_tag.to_be_bytes());
                out.push(ds.algorithm);
                out.push(ds.digest_type);
                out.extend_from_slice(&ds.digest);
                out
            }
            Rdata::Opt(options) => {
                let mut out = Vec::new();
                for opt in options {
                    out.extend_from_slice(&opt.code.to_be_bytes());
                    out.extend_from_slice(&(opt.payload.len() as u16).to_be_bytes());
                    out.extend_from_slice(&opt.payload);
                }
                out
            }
        }
    }
}

/// A single resource record. Class is implicitly IN.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceRecord {
    pub owner: DomainName,
    pub ttl: u32,
    pub rdata: Rdata,
}

impl ResourceRecord {
    pub fn new(owner: DomainName, ttl: u32, rdata: Rdata) -> Self {
        ResourceRecord { owner, ttl, rdata }
    }

    pub fn rtype(&self) -> RecordType {
        self.rdata.rtype()
    }
}

/// A set of records sharing owner, type, class and TTL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RRset {
    pub owner: DomainName,
    pub rtype: RecordType,
    pub ttl: u32,
    pub rdatas: Vec<Rdata>,
}

impl RRset {
    pub fn new(owner: DomainName, rtype: RecordType, ttl: u32, rdatas: Vec<Rdata>) -> Self {
        debug_assert!(rdatas.iter().all(|r| r.rtype() == rtype));
        RRset {
            owner,
            rtype,
            ttl,
            rdatas,
        }
    }

    /// Groups loose records into an RRset, rejecting mixed owners or types.
    pub fn from_records(records: &[ResourceRecord]) -> Result<Self, WireError> {
        let first = records.first().ok_or(WireError::EmptyRrset)?;
        for rec in records {
            if rec.owner != first.owner || rec.rtype() != first.rtype() {
                return Err(WireError::MixedRrset);
            }
        }
        Ok(RRset {
            owner: first.owner.clone(),
            rtype: first.rtype(),
            ttl: first.ttl,
            rdatas: records.iter().map(|r| r.rdata.clone()).collect(),
        })
    }

    pub fn records(&self) -> Vec<ResourceRecord> {
        self.rdatas
            .iter()
            .map(|rdata| ResourceRecord::new(self.owner.clone(), self.ttl, rdata.clone()))
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.rdatas.is_empty()
    }

    /// Canonical byte form: see [`canonical_rrset_bytes`].
    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical_rrset_bytes(&self.records()).expect("uniform by construction")
    }
}

/// Canonical byte form of an RRset: the input over which signatures and
/// digests are computed.
///
/// Records are serialized as `owner | type | class | ttl=0 | rdlength |
/// rdata` with the owner lowercased, names inside rdata lowercased, and the
/// records sorted by their canonical rdata bytes. The TTL is written as zero
/// so that cache-driven TTL decay never invalidates a signature. The result
/// is a pure function of the set: permutation of the input order and owner
/// case do not change it.
pub fn canonical_rrset_bytes(records: &[ResourceRecord]) -> Result<Vec<u8>, WireError> {
    let first = records.first().ok_or(WireError::EmptyRrset)?;
    for rec in records {
        if rec.owner != first.owner || rec.rtype() != first.rtype() {
            return Err(WireError::MixedRrset);
        }
    }
    let owner_wire = first.owner.canonical_wire();
    let rtype = first.rtype().code();

    let mut rdatas: Vec<Vec<u8>> = records.iter().map(|r| r.rdata.encode(true)).collect();
    rdatas.sort();

    let mut out = Vec::new();
    for rdata in rdatas {
        out.extend_from_slice(&owner_wire);
        out.extend_from_slice(&rtype.to_be_bytes());
        out.extend_from_slice(&CLASS_IN.to_be_bytes());
        out.extend_from_slice(&0u32.to_be_bytes());
        out.extend_from_slice(&(rdata.len() as u16).to_be_bytes());
        out.extend_from_slice(&rdata);
    }
    Ok(out)
}
