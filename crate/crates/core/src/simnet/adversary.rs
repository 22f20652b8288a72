//! Adversary models applied at link traversal.

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::wire::{DnsMessage, DomainName, Rdata, RecordType};

/// What an on-path tamperer flips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TamperTarget {
    /// Flip one byte inside the rdata or covering signature of the first
    /// matching record in a datagram response.
    Record {
        owner: DomainName,
        rtype: RecordType,
        field: TamperField,
        byte: usize,
        #[serde(default = "default_xor")]
        xor: u8,
    },
    /// Flip one raw byte of the n-th stream flight (0 = first client
    /// flight, 1 = first server flight, ...).
    StreamFlight {
        index: u32,
        byte: usize,
        #[serde(default = "default_xor")]
        xor: u8,
    },
}

fn default_xor() -> u8 {
    0x01
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TamperField {
    Rdata,
    Signature,
}

/// One adversary per scenario run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Adversary {
    #[default]
    None,
    /// Mutates traffic in transit on the scoped links.
    OnPathTamper {
        #[serde(default)]
        links: Option<Vec<DomainName>>,
        target: TamperTarget,
    },
    /// Injects forged datagram responses racing the authentic one. Success
    /// requires guessing the 16-bit txid unless the oracle grants it.
    OffPathSpoof {
        #[serde(default)]
        links: Option<Vec<DomainName>>,
        rate: u32,
        #[serde(default)]
        oracle_txid: bool,
        forged_address: Ipv4Addr,
    },
    /// Removes bridge advertisements from responses on the scoped links.
    BridgeStrip {
        #[serde(default)]
        links: Option<Vec<DomainName>>,
    },
    /// Redirects stream connections to an impostor server.
    ImpostorServer { at: Ipv4Addr },
}

impl Adversary {
    pub fn scope_matches(&self, zone: &DomainName) -> bool {
        let links = match self {
            Adversary::OnPathTamper { links, .. }
            | Adversary::OffPathSpoof { links, .. }
            | Adversary::BridgeStrip { links } => links,
            Adversary::ImpostorServer { .. } => &None,
            Adversary::None => return false,
        };
        match links {
            Some(zones) => zones.iter().any(|z| z == zone),
            None => true,
        }
    }
}

/// Flips one byte of a record payload; length bytes and structure are
/// preserved so the mutation survives re-encoding.
pub(crate) fn flip_rdata_byte(rdata: &mut Rdata, byte: usize, xor: u8) -> bool {
    match rdata {
        Rdata::A(addr) => {
            let mut octets = addr.octets();
            octets[byte % 4] ^= xor;
            *addr = Ipv4Addr::from(octets);
            true
        }
        Rdata::Ns(target) => {
            let mut labels: Vec<Vec<u8>> = target.labels().to_vec();
            let total: usize = labels.iter().map(|l| l.len()).sum();
            if total == 0 {
                return false;
            }
            let mut index = byte % total;
            for label in &mut labels {
                if index < label.len() {
                    label[index] ^= xor;
                    break;
                }
                index -= label.len();
            }
            match DomainName::from_labels(labels) {
                Ok(name) => {
                    *target = name;
                    true
                }
                Err(_) => false,
            }
        }
        Rdata::Dnskey(key) => {
            if key.public_key.is_empty() {
                return false;
            }
            let len = key.public_key.len();
            key.public_key[byte % len] ^= xor;
            true
        }
        Rdata::Rrsig(sig) => {
            if sig.signature.is_empty() {
                return false;
            }
            let len = sig.signature.len();
            sig.signature[byte % len] ^= xor;
            true
        }
        Rdata::Ds(ds) => {
            if ds.digest.is_empty() {
                return false;
            }
            let len = ds.digest.len();
            ds.digest[byte % len] ^= xor;
            true
        }
        Rdata::Opt(_) => false,
    }
}

/// Applies a record-level tamper to a decoded response. Returns true when
/// something was actually flipped.
pub(crate) fn tamper_response(msg: &mut DnsMessage, target: &TamperTarget) -> bool {
    let TamperTarget::Record {
        owner,
        rtype,
        field,
        byte,
        xor,
    } = target
    else {
        return false;
    };
    let records = msg
        .answers
        .iter_mut()
        .chain(msg.authority.iter_mut())
        .chain(msg.additional.iter_mut());
    match field {
        TamperField::Rdata => {
            for rec in records {
                if rec.rtype() == *rtype && &rec.owner == owner {
                    return flip_rdata_byte(&mut rec.rdata, *byte, *xor);
                }
            }
        }
        TamperField::Signature => {
            for rec in records {
                if let Rdata::Rrsig(sig) = &mut rec.rdata {
                    if sig.covered_type == *rtype && &rec.owner == owner {
                        if sig.signature.is_empty() {
                            return false;
                        }
                        let len = sig.signature.len();
                        sig.signature[byte % len] ^= xor;
                        return true;
                    }
                }
            }
        }
    }
    false
}

/// Events observed at the network layer (adversary actions), logged by the
/// simulator for post-run analysis the resolver itself could never do.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "net_event", rename_all = "snake_case")]
pub enum NetEvent {
    ForgedResponseInjected { server: Ipv4Addr, txid_match: bool },
    ResponseTampered { server: Ipv4Addr },
    BridgeAdvertStripped { server: Ipv4Addr },
    StreamRedirected { requested: Ipv4Addr, actual: Ipv4Addr },
    StreamFlightTampered { server: Ipv4Addr, index: u32 },
}
