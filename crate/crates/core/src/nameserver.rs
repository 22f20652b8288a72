//! Simulated authoritative nameservers: zone data, referral generation
//! with glue, DS publication policy, the unsigned fallback for flagged
//! queries, bridge advertisement, and the sealed-channel answer path.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::bridge::{
    decode_frames, encode_frame, BridgeError, BridgeServer, Frame, ServerIdentity, SessionState,
};
use crate::dnssec::{sign_rrset, KeyRole, ZoneKeys};
use crate::wire::{
    DnsHeader, DnsMessage, DomainName, Ds, EdnsOption, RRset, Rcode, Rdata, RecordType,
    ResourceRecord, Rrsig,
};

/// Bridge endpoint configuration for one nameserver.
#[derive(Clone)]
pub struct BridgeConfig {
    pub port: u16,
    pub identity: ServerIdentity,
}

/// An RRset together with its signature, when the zone signs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedRrset {
    pub rrset: RRset,
    pub rrsig: Option<Rrsig>,
}

impl SignedRrset {
    fn push_records(&self, out: &mut Vec<ResourceRecord>, include_sig: bool) {
        out.extend(self.rrset.records());
        if include_sig {
            if let Some(sig) = &self.rrsig {
                out.push(ResourceRecord::new(
                    self.rrset.owner.clone(),
                    self.rrset.ttl,
                    Rdata::Rrsig(sig.clone()),
                ));
            }
        }
    }
}

/// One delegation owned by a zone: NS set, glue, and the optional DS.
#[derive(Debug, Clone)]
pub struct Delegation {
    pub child: DomainName,
    pub ns_name: DomainName,
    pub glue_addr: Ipv4Addr,
    pub ns: SignedRrset,
    pub glue: SignedRrset,
    pub ds: Option<SignedRrset>,
}

/// A referral as assembled by the parent: the view the resolver receives.
#[derive(Debug, Clone)]
pub struct Referral {
    pub ns_set: RRset,
    pub glue: Ipv4Addr,
    pub ds: Option<(Ds, Option<Rrsig>)>,
    pub bridge_advert: Option<u16>,
}

/// A fully prepared zone: every served RRset is built (and signed, when the
/// zone has keys) ahead of time, so adversarial mutations stay visible.
#[derive(Clone)]
pub struct ZoneConfig {
    pub zone: DomainName,
    pub address: Ipv4Addr,
    keys: Option<ZoneKeys>,
    publish_ds_for_children: BTreeMap<DomainName, bool>,
    pub bridge: Option<BridgeConfig>,
    dnskey_set: Option<SignedRrset>,
    delegations: BTreeMap<DomainName, Delegation>,
    answers: BTreeMap<DomainName, SignedRrset>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ZoneBuildError {
    #[error("delegated child {0} is not below the zone")]
    ChildOutOfZone(DomainName),
    #[error("record owner {0} is not below the zone")]
    OwnerOutOfZone(DomainName),
    #[error("signing failed: {0}")]
    Signing(#[from] crate::dnssec::DnssecError),
}

/// Builder collecting raw zone contents before signing.
pub struct ZoneConfigBuilder {
    zone: DomainName,
    address: Ipv4Addr,
    keys: Option<ZoneKeys>,
    bridge: Option<BridgeConfig>,
    ttl: u32,
    validity: (u64, u64),
    delegations: Vec<(DomainName, DomainName, Ipv4Addr, Option<crate::wire::Dnskey>, bool)>,
    a_records: BTreeMap<DomainName, Vec<Ipv4Addr>>,
}

impl ZoneConfigBuilder {
    pub fn new(zone: DomainName, address: Ipv4Addr) -> Self {
        ZoneConfigBuilder {
            zone,
            address,
            keys: None,
            bridge: None,
            ttl: 300,
            validity: (0, u64::MAX),
            delegations: Vec::new(),
            a_records: BTreeMap::new(),
        }
    }

    /// Installs signing keys; without them the zone serves plain records.
    pub fn keys(mut self, keys: ZoneKeys) -> Self {
        self.keys = Some(keys);
        self
    }

    pub fn bridge(mut self, bridge: BridgeConfig) -> Self {
        self.bridge = Some(bridge);
        self
    }

    pub fn ttl(mut self, ttl: u32) -> Self {
        self.ttl = ttl;
        self
    }

    pub fn validity(mut self, validity: (u64, u64)) -> Self {
        self.validity = validity;
        self
    }

    /// Adds a delegation. `child_ksk` is the child's key-signing key, needed
    /// to derive the DS; `publish_ds` is the parent's policy switch. The DS
    /// is emitted only when this zone signs, the flag is set, and the child
    /// actually has keys.
    pub fn delegate(
        mut self,
        child: DomainName,
        ns_name: DomainName,
        glue_addr: Ipv4Addr,
        child_ksk: Option<crate::wire::Dnskey>,
        publish_ds: bool,
    ) -> Self {
        self.delegations
            .push((child, ns_name, glue_addr, child_ksk, publish_ds));
        self
    }

    pub fn a_record(mut self, owner: DomainName, addr: Ipv4Addr) -> Self {
        self.a_records.entry(owner).or_default().push(addr);
        self
    }

    /// Signs everything the zone owns and freezes the served artifacts.
    pub fn build(self) -> Result<ZoneConfig, ZoneBuildError> {
        let ZoneConfigBuilder {
            zone,
            address,
            keys,
            bridge,
            ttl,
            validity,
            delegations,
            a_records,
        } = self;

        let sign = |rrset: &RRset, role: KeyRole| -> Result<Option<Rrsig>, ZoneBuildError> {
            match &keys {
                Some(zone_keys) => Ok(Some(sign_rrset(rrset, zone_keys, role, validity)?)),
                None => Ok(None),
            }
        };

        let dnskey_set = match &keys {
            Some(zone_keys) => {
                let rrset = zone_keys.dnskey_rrset(ttl);
                let rrsig = Some(sign_rrset(&rrset, zone_keys, KeyRole::Ksk, validity)?);
                Some(SignedRrset { rrset, rrsig })
            }
            None => None,
        };

        let mut built_delegations = BTreeMap::new();
        let mut publish_map = BTreeMap::new();
        for (child, ns_name, glue_addr, child_ksk, publish_ds) in delegations {
            if !child.is_subdomain_of(&zone) || child == zone {
                return Err(ZoneBuildError::ChildOutOfZone(child));
            }
            publish_map.insert(child.clone(), publish_ds);

            let ns_rrset = RRset::new(
                child.clone(),
                RecordType::Ns,
                ttl,
                vec![Rdata::Ns(ns_name.clone())],
            );
            let ns = SignedRrset {
                rrsig: sign(&ns_rrset, KeyRole::Zsk)?,
                rrset: ns_rrset,
            };

            let glue_rrset = RRset::new(
                ns_name.clone(),
                RecordType::A,
                ttl,
                vec![Rdata::A(glue_addr)],
            );
            let glue = SignedRrset {
                rrsig: sign(&glue_rrset, KeyRole::Zsk)?,
                rrset: glue_rrset,
            };

            // DS presence: parent signed AND policy says publish AND the
            // child actually has keys to digest.
            let ds = match (&keys, publish_ds, child_ksk) {
                (Some(_), true, Some(ksk)) => {
                    let ds = crate::dnssec::compute_ds(&ksk, crate::dnssec::DIGEST_SHA256)?;
                    let ds_rrset = RRset::new(
                        child.clone(),
                        RecordType::Ds,
                        ttl,
                        vec![Rdata::Ds(ds)],
                    );
                    Some(SignedRrset {
                        rrsig: sign(&ds_rrset, KeyRole::Zsk)?,
                        rrset: ds_rrset,
                    })
                }
                _ => None,
            };

            built_delegations.insert(
                child.clone(),
                Delegation {
                    child,
                    ns_name,
                    glue_addr,
                    ns,
                    glue,
                    ds,
                },
            );
        }

        let mut answers = BTreeMap::new();
        for (owner, addrs) in a_records {
            if !owner.is_subdomain_of(&zone) {
                return Err(ZoneBuildError::OwnerOutOfZone(owner));
            }
            let rrset = RRset::new(
                owner.clone(),
                RecordType::A,
                ttl,
                addrs.into_iter().map(Rdata::A).collect(),
            );
            answers.insert(
                owner,
                SignedRrset {
                    rrsig: sign(&rrset, KeyRole::Zsk)?,
                    rrset,
                },
            );
        }

        Ok(ZoneConfig {
            zone,
            address,
            keys,
            publish_ds_for_children: publish_map,
            bridge,
            dnskey_set,
            delegations: built_delegations,
            answers,
        })
    }
}

/// How a response is being served.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ServeMode {
    /// Plain datagram path; the flag marks a DS-absent query.
    Plain { flagged: bool },
    /// Sealed channel: always signed, never advertised.
    Sealed,
}

impl ZoneConfig {
    pub fn is_signed(&self) -> bool {
        self.keys.is_some()
    }

    pub fn publishes_ds_for(&self, child: &DomainName) -> Option<bool> {
        self.publish_ds_for_children.get(child).copied()
    }

    pub fn delegation(&self, child: &DomainName) -> Option<&Delegation> {
        self.delegations.get(child)
    }

    /// Answers one datagram query.
    ///
    /// Referrals carry NS, glue and (policy permitting) DS, all signed when
    /// the zone has keys. A query flagged as DS-absent gets the bridge
    /// advertisement when a bridge is configured, and a plain unsigned
    /// response when not.
    pub fn answer_query(&self, query: &DnsMessage, _now: u64) -> DnsMessage {
        let flagged = query.has_ds_absent_flag();
        self.answer_with_mode(query, ServeMode::Plain { flagged })
    }

    /// Answers the single query permitted on an established bridge session.
    /// Signed zones always answer with signatures here; there is no
    /// fallback and no advertisement inside the channel.
    pub fn answer_sealed(&self, query: &DnsMessage) -> DnsMessage {
        self.answer_with_mode(query, ServeMode::Sealed)
    }

    fn answer_with_mode(&self, query: &DnsMessage, mode: ServeMode) -> DnsMessage {
        let Some(question) = &query.question else {
            return self.error_response(query, Rcode::FormErr);
        };
        if !question.name.is_subdomain_of(&self.zone) {
            return self.error_response(query, Rcode::Refused);
        }

        // Signed adornments are dropped on the plain path when the resolver
        // flagged a missing DS and no bridge can vouch for us instead.
        let include_sigs = match mode {
            ServeMode::Plain { flagged } => !(flagged && self.bridge.is_none()),
            ServeMode::Sealed => true,
        };

        let mut response = DnsMessage {
            header: DnsHeader::response_to(&query.header, Rcode::NoError),
            question: query.question.clone(),
            answers: Vec::new(),
            authority: Vec::new(),
            additional: Vec::new(),
            edns: None,
        };

        if let Some(delegation) = self.match_delegation(&question.name) {
            delegation.ns.push_records(&mut response.authority, include_sigs);
            if let Some(ds) = &delegation.ds {
                ds.push_records(&mut response.authority, include_sigs);
            }
            delegation.glue.push_records(&mut response.additional, include_sigs);
        } else if let Some(answer) = self.answers.get(&question.name) {
            if question.rtype == RecordType::A {
                answer.push_records(&mut response.answers, include_sigs);
            }
        } else if question.rtype == RecordType::Dnskey && question.name == self.zone {
            // DNSKEY is attached below for every signed response anyway.
        } else {
            response.header.rcode = Rcode::NxDomain;
        }

        if include_sigs {
            if let Some(dnskey) = &self.dnskey_set {
                dnskey.push_records(&mut response.additional, true);
            }
        }

        if let ServeMode::Plain { flagged: true } = mode {
            if let Some(bridge) = &self.bridge {
                response.push_edns(EdnsOption::bridge_available(bridge.port));
            }
        }
        response
    }

    fn match_delegation(&self, name: &DomainName) -> Option<&Delegation> {
        self.delegations
            .values()
            .find(|d| name.is_subdomain_of(&d.child))
    }

    fn error_response(&self, query: &DnsMessage, rcode: Rcode) -> DnsMessage {
        DnsMessage {
            header: DnsHeader::response_to(&query.header, rcode),
            question: query.question.clone(),
            answers: Vec::new(),
            authority: Vec::new(),
            additional: Vec::new(),
            edns: None,
        }
    }

    /// The referral view for a child, as a struct (mostly a test hook; the
    /// served form comes from [`ZoneConfig::answer_query`]).
    pub fn referral_for(&self, child: &DomainName) -> Option<Referral> {
        let delegation = self.delegations.get(child)?;
        Some(Referral {
            ns_set: delegation.ns.rrset.clone(),
            glue: delegation.glue_addr,
            ds: delegation.ds.as_ref().map(|signed| {
                let ds = signed
                    .rrset
                    .rdatas
                    .iter()
                    .find_map(|r| match r {
                        Rdata::Ds(ds) => Some(ds.clone()),
                        _ => None,
                    })
                    .expect("ds rrset holds ds rdata");
                (ds, signed.rrsig.clone())
            }),
            bridge_advert: self.bridge.as_ref().map(|b| b.port),
        })
    }

    /// Opens the server half of a bridge session.
    pub fn start_bridge_session(&self, handshake_seed: u64) -> Result<BridgeResponder, NsError> {
        let bridge = self.bridge.as_ref().ok_or(NsError::NoBridge)?;
        Ok(BridgeResponder {
            server: BridgeServer::new(bridge.identity.clone(), handshake_seed),
            answered: false,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum NsError {
    #[error("zone has no bridge configured")]
    NoBridge,
}

/// Server side of one bridge connection: drives the handshake and answers
/// exactly one sealed query, then treats the channel as closed. Nothing is
/// ever sent in plaintext on this path.
pub struct BridgeResponder {
    server: BridgeServer,
    answered: bool,
}

impl BridgeResponder {
    /// Processes one inbound flight of frames, returning the outbound bytes.
    pub fn on_bytes(
        &mut self,
        zone: &ZoneConfig,
        bytes: &[u8],
        now: u64,
    ) -> Result<Vec<u8>, BridgeError> {
        let frames = decode_frames(bytes)?;
        let mut out = Vec::new();
        for frame in frames {
            match frame {
                Frame::Handshake(msg) => {
                    for reply in self.server.handle(&msg, now)? {
                        out.extend_from_slice(&encode_frame(&Frame::Handshake(reply)));
                    }
                }
                Frame::Record(rec) => {
                    if self.answered {
                        return Err(BridgeError::ChannelClosed);
                    }
                    let query = self.server.open(&rec)?;
                    let answer = zone.answer_sealed(&query);
                    let sealed = self.server.seal(&answer)?;
                    out.extend_from_slice(&encode_frame(&Frame::Record(sealed)));
                    self.answered = true;
                }
            }
        }
        Ok(out)
    }

    pub fn state(&self) -> SessionState {
        self.server.state()
    }

    pub fn has_answered(&self) -> bool {
        self.answered
    }
}

/// Addressable signed artifacts inside a zone, for adversarial mutation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ZoneArtifact {
    DnskeyPublicKey { key_index: usize },
    DnskeySetSignature,
    AnswerRdata { owner: DomainName, record: usize },
    AnswerSignature { owner: DomainName },
    NsTarget { child: DomainName },
    NsSignature { child: DomainName },
    GlueRdata { child: DomainName },
    GlueSignature { child: DomainName },
    DsDigest { child: DomainName },
    DsSignature { child: DomainName },
}

/// A single-byte corruption of one artifact, or an identity no-op, or a
/// glue swap pointing the delegation at an impostor address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ZoneMutation {
    Identity,
    FlipByte {
        artifact: ZoneArtifact,
        byte: usize,
        xor: u8,
    },
    ReplaceGlue {
        child: DomainName,
        addr: Ipv4Addr,
    },
}

impl ZoneConfig {
    /// Applies a mutation to the served artifacts without re-signing;
    /// stale signatures are exactly what downstream validation must catch.
    pub fn tamper_hook(mut self, mutation: &ZoneMutation) -> ZoneConfig {
        match mutation {
            ZoneMutation::Identity => {}
            ZoneMutation::FlipByte {
                artifact,
                byte,
                xor,
            } => self.flip_artifact_byte(artifact, *byte, *xor),
            ZoneMutation::ReplaceGlue { child, addr } => {
                if let Some(delegation) = self.delegations.get_mut(child) {
                    delegation.glue_addr = *addr;
                    delegation.glue.rrset.rdatas = vec![Rdata::A(*addr)];
                }
            }
        }
        self
    }

    /// Lists every signed byte position an adversary could corrupt, for
    /// exhaustive tamper sweeps. The TTL and owner-case bytes are excluded:
    /// they are deliberately outside the signed canonical form.
    pub fn signed_artifacts(&self) -> Vec<(ZoneArtifact, usize)> {
        let mut out = Vec::new();
        if let Some(dnskey) = &self.dnskey_set {
            for (key_index, rdata) in dnskey.rrset.rdatas.iter().enumerate() {
                if let Rdata::Dnskey(key) = rdata {
                    out.push((
                        ZoneArtifact::DnskeyPublicKey { key_index },
                        key.public_key.len(),
                    ));
                }
            }
            if let Some(sig) = &dnskey.rrsig {
                out.push((ZoneArtifact::DnskeySetSignature, sig.signature.len()));
            }
        }
        for (owner, answer) in &self.answers {
            for (record, rdata) in answer.rrset.rdatas.iter().enumerate() {
                if let Rdata::A(_) = rdata {
                    out.push((
                        ZoneArtifact::AnswerRdata {
                            owner: owner.clone(),
                            record,
                        },
                        4,
                    ));
                }
            }
            if let Some(sig) = &answer.rrsig {
                out.push((
                    ZoneArtifact::AnswerSignature {
                        owner: owner.clone(),
                    },
                    sig.signature.len(),
                ));
            }
        }
        for (child, delegation) in &self.delegations {
            let ns_len: usize = delegation
                .ns_name
                .labels()
                .iter()
                .map(|l| l.len())
                .sum();
            out.push((ZoneArtifact::NsTarget { child: child.clone() }, ns_len));
            if let Some(sig) = &delegation.ns.rrsig {
                out.push((
                    ZoneArtifact::NsSignature { child: child.clone() },
                    sig.signature.len(),
                ));
            }
            out.push((ZoneArtifact::GlueRdata { child: child.clone() }, 4));
            if let Some(sig) = &delegation.glue.rrsig {
                out.push((
                    ZoneArtifact::GlueSignature { child: child.clone() },
                    sig.signature.len(),
                ));
            }
            if let Some(ds) = &delegation.ds {
                if let Some(Rdata::Ds(d)) = ds.rrset.rdatas.first() {
                    out.push((ZoneArtifact::DsDigest { child: child.clone() }, d.digest.len()));
                }
                if let Some(sig) = &ds.rrsig {
                    out.push((
                        ZoneArtifact::DsSignature { child: child.clone() },
                        sig.signature.len(),
                    ));
                }
            }
        }
        out
    }

    fn flip_artifact_byte(&mut self, artifact: &ZoneArtifact, byte: usize, xor: u8) {
        match artifact {
            ZoneArtifact::DnskeyPublicKey { key_index } => {
                if let Some(dnskey) = &mut self.dnskey_set {
                    if let Some(Rdata::Dnskey(key)) = dnskey.rrset.rdatas.get_mut(*key_index) {
                        let len = key.public_key.len();
                        key.public_key[byte % len] ^= xor;
                    }
                }
            }
            ZoneArtifact::DnskeySetSignature => {
                if let Some(dnskey) = &mut self.dnskey_set {
                    if let Some(sig) = &mut dnskey.rrsig {
                        let len = sig.signature.len();
                        sig.signature[byte % len] ^= xor;
                    }
                }
            }
            ZoneArtifact::AnswerRdata { owner, record } => {
                if let Some(answer) = self.answers.get_mut(owner) {
                    if let Some(Rdata::A(addr)) = answer.rrset.rdatas.get_mut(*record) {
                        let mut octets = addr.octets();
                        octets[byte % 4] ^= xor;
                        *addr = Ipv4Addr::from(octets);
                    }
                }
            }
            ZoneArtifact::AnswerSignature { owner } => {
                if let Some(answer) = self.answers.get_mut(owner) {
                    if let Some(sig) = &mut answer.rrsig {
                        let len = sig.signature.len();
                        sig.signature[byte % len] ^= xor;
                    }
                }
            }
            ZoneArtifact::NsTarget { child } => {
                if let Some(delegation) = self.delegations.get_mut(child) {
                    let mut labels: Vec<Vec<u8>> = delegation.ns_name.labels().to_vec();
                    let total: usize = labels.iter().map(|l| l.len()).sum();
                    if total > 0 {
                        let mut index = byte % total;
                        for label in &mut labels {
                            if index < label.len() {
                                label[index] ^= xor;
                                break;
                            }
                            index -= label.len();
                        }
                    }
                    if let Ok(mutated) = DomainName::from_labels(labels) {
                        delegation.ns_name = mutated.clone();
                        delegation.ns.rrset.rdatas = vec![Rdata::Ns(mutated)];
                    }
                }
            }
            ZoneArtifact::NsSignature { child } => {
                if let Some(delegation) = self.delegations.get_mut(child) {
                    if let Some(sig) = &mut delegation.ns.rrsig {
                        let len = sig.signature.len();
                        sig.signature[byte % len] ^= xor;
                    }
                }
            }
            ZoneArtifact::GlueRdata { child } => {
                if let Some(delegation) = self.delegations.get_mut(child) {
                    let mut octets = delegation.glue_addr.octets();
                    octets[byte % 4] ^= xor;
                    let addr = Ipv4Addr::from(octets);
                    delegation.glue_addr = addr;
                    delegation.glue.rrset.rdatas = vec![Rdata::A(addr)];
                }
            }
            ZoneArtifact::GlueSignature { child } => {
                if let Some(delegation) = self.delegations.get_mut(child) {
                    if let Some(sig) = &mut delegation.glue.rrsig {
                        let len = sig.signature.len();
                        sig.signature[byte % len] ^= xor;
                    }
                }
            }
            ZoneArtifact::DsDigest { child } => {
                if let Some(delegation) = self.delegations.get_mut(child) {
                    if let Some(ds) = &mut delegation.ds {
                        if let Some(Rdata::Ds(d)) = ds.rrset.rdatas.get_mut(0) {
                            let len = d.digest.len();
                            d.digest[byte % len] ^= xor;
                        }
                    }
                }
            }
            ZoneArtifact::DsSignature { child } => {
                if let Some(delegation) = self.delegations.get_mut(child) {
                    if let Some(ds) = &mut delegation.ds {
                        if let Some(sig) = &mut ds.rrsig {
                            let len = sig.signature.len();
                            sig.signature[byte % len] ^= xor;
                        }
                    }
                }
            }
        }
    }
}
