//! The validating iterative resolver.
//!
//! A resolution walks the hierarchy from the root, validating every level
//! against the chain of trust. When a referral omits the child's DS while
//! the chain is still intact, the resolver flags the condition on its next
//! query; a server advertising a bridge endpoint in response is contacted
//! over the authenticated channel and the final answer is obtained sealed.
//! Outcomes classify how much trust the answer actually earned.

mod cache;
mod transcript;

use std::fmt;
use std::net::Ipv4Addr;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{Cache, CacheEntry};
pub use transcript::{Event, Transcript};

use crate::bridge::{
    decode_frames, encode_frame, AbortReason, BridgeClient, BridgeError, Frame, HandshakeMessage,
};
use crate::dnssec::{match_ds, verify_rrsig, InvalidReason, TrustAnchor, Validity};
use crate::ipcert::{RejectReason, TrustStore};
use crate::wire::{
    self, Dnskey, DnsMessage, DomainName, Ds, RRset, Rcode, RecordType, Rrsig, WireError,
};

/// What a network round trip was for; the simulator ledgers these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundPurpose {
    UdpQuery,
    TcpHandshake,
    #[serde(rename = "tls_flight_1")]
    TlsFlight1,
    #[serde(rename = "tls_flight_2")]
    TlsFlight2,
    SealedQuery,
}

pub type StreamId = u64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("no route to {0}")]
    NoRoute(Ipv4Addr),
    #[error("connection to {0}:{1} refused")]
    ConnectRefused(Ipv4Addr, u16),
    #[error("stream closed")]
    StreamClosed,
}

/// The network the resolver drives: datagram rounds plus reliable streams.
/// A datagram round returns every payload that arrived in reply, in
/// arrival order, so forged racers are visible to the selection logic.
pub trait QueryTransport {
    /// Virtual unix time in seconds.
    fn now(&self) -> u64;
    fn udp_round(&mut self, dst: Ipv4Addr, payload: Vec<u8>) -> Result<Vec<Vec<u8>>, NetError>;
    fn connect(&mut self, dst: Ipv4Addr, port: u16) -> Result<StreamId, NetError>;
    fn stream_round(
        &mut self,
        stream: StreamId,
        payload: Vec<u8>,
        purpose: RoundPurpose,
    ) -> Result<Vec<u8>, NetError>;
}

/// Resolver configuration.
#[derive(Clone)]
pub struct ResolverConfig {
    pub trust_anchors: Vec<TrustAnchor>,
    pub trust_store: TrustStore,
    pub bridging_enabled: bool,
    pub cache_capacity: usize,
    /// Root hints: where the walk starts.
    pub root_server: Ipv4Addr,
    /// Whether cached unvalidated answers may be served.
    pub accept_unvalidated: bool,
}

/// Why validation broke the chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValidationFailure {
    DsMismatch,
    MissingDnskey,
    MissingSignature(RecordType),
    InvalidSignature(RecordType, InvalidReason),
    MalformedResponse,
    SealedAnswerInvalid,
}

impl fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationFailure::DsMismatch => write!(f, "ds does not match any dnskey"),
            ValidationFailure::MissingDnskey => write!(f, "dnskey set missing"),
            ValidationFailure::MissingSignature(t) => write!(f, "missing rrsig over {t}"),
            ValidationFailure::InvalidSignature(t, r) => {
                write!(f, "invalid rrsig over {t}: {r:?}")
            }
            ValidationFailure::MalformedResponse => write!(f, "response undecodable"),
            ValidationFailure::SealedAnswerInvalid => write!(f, "sealed answer failed validation"),
        }
    }
}

/// Where the chain of trust currently stands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SecurityStatus {
    SecureSoFar,
    GapOpen { at: DomainName },
    BrokenBogus { reason: ValidationFailure },
}

/// Per-level walk state.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    /// The zone expected to answer the next query.
    pub current_zone: DomainName,
    /// The current zone's validated key set (empty until its response
    /// checks out).
    pub validated_dnskeys: Vec<Dnskey>,
    /// The DS the previous level vouched for this zone with.
    pub expected_ds: Option<Ds>,
    pub security: SecurityStatus,
}

impl ChainState {
    /// Initial state at the root: anchored when a trust anchor exists,
    /// otherwise the gap is open from the start.
    pub fn start(anchors: &[TrustAnchor]) -> ChainState {
        let root = DomainName::root();
        match anchors.iter().find(|a| a.zone == root) {
            Some(anchor) => ChainState {
                current_zone: root,
                validated_dnskeys: Vec::new(),
                expected_ds: Some(anchor.ds.clone()),
                security: SecurityStatus::SecureSoFar,
            },
            None => ChainState {
                current_zone: root.clone(),
                validated_dnskeys: Vec::new(),
                expected_ds: None,
                security: SecurityStatus::GapOpen { at: root },
            },
        }
    }
}

/// Final classification of one resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum OutcomeStatus {
    /// Every level validated hierarchically.
    Secure,
    /// Chain intact down to the final delegation, whose missing DS was
    /// replaced by the authenticated channel; the sealed answer validated.
    BridgedSecure,
    /// The channel authenticated the server, but at least one level had no
    /// usable signatures, so record integrity is channel-only.
    BridgedEncrypted,
    /// Unsigned answer accepted and marked as such.
    Insecure,
    /// A signature or digest check failed; no answer is returned.
    Bogus { reason: ValidationFailure },
    /// The bridge aborted (certificate rejection, tampered channel).
    Aborted { reason: AbortReason },
}

impl OutcomeStatus {
    pub fn is_validated(&self) -> bool {
        matches!(self, OutcomeStatus::Secure | OutcomeStatus::BridgedSecure)
    }

    pub fn has_answer(&self) -> bool {
        !matches!(
            self,
            OutcomeStatus::Bogus { .. } | OutcomeStatus::Aborted { .. }
        )
    }
}

impl fmt::Display for OutcomeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutcomeStatus::Secure => write!(f, "Secure"),
            OutcomeStatus::BridgedSecure => write!(f, "BridgedSecure"),
            OutcomeStatus::BridgedEncrypted => write!(f, "BridgedEncrypted"),
            OutcomeStatus::Insecure => write!(f, "Insecure"),
            OutcomeStatus::Bogus { reason } => write!(f, "Bogus({reason})"),
            OutcomeStatus::Aborted { reason } => write!(f, "Aborted({reason})"),
        }
    }
}

/// The result of one resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionOutcome {
    pub status: OutcomeStatus,
    pub answer: Option<RRset>,
    pub transcript: Transcript,
    pub rtt_count: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ResolveError {
    #[error("network: {0}")]
    Net(#[from] NetError),
    #[error("referral loop guard tripped")]
    MaxDepthExceeded,
    #[error("server {server} refused: {rcode:?}")]
    ServerRefused { server: Ipv4Addr, rcode: Rcode },
    #[error("no usable response from {0}")]
    NoUsableResponse(Ipv4Addr),
    #[error("referral to {0} carries no glue")]
    MissingGlue(DomainName),
    #[error("server {0} returned no answer records")]
    EmptyAnswer(Ipv4Addr),
    #[error("codec: {0}")]
    Wire(#[from] WireError),
}

/// Referral contents as seen by the resolver.
#[derive(Debug, Clone)]
struct ReferralView {
    child: DomainName,
    ns_target: DomainName,
    glue: Option<Ipv4Addr>,
    ds: Option<Ds>,
}

enum ResponseKind {
    Referral(ReferralView),
    Answer { rrset: Option<RRset> },
}

fn classify_response(msg: &DnsMessage, current_zone: &DomainName, qname: &DomainName) -> ResponseKind {
    // A referral delegates to a child zone strictly below the responder.
    for rec in &msg.authority {
        if let wire::Rdata::Ns(target) = &rec.rdata {
            let child = &rec.owner;
            if child != current_zone
                && child.is_subdomain_of(current_zone)
                && qname.is_subdomain_of(child)
            {
                let glue = msg
                    .find_rrset(target, RecordType::A)
                    .and_then(|set| {
                        set.rdatas.iter().find_map(|r| match r {
                            wire::Rdata::A(addr) => Some(*addr),
                            _ => None,
                        })
                    });
                let ds = msg.find_rrset(child, RecordType::Ds).and_then(|set| {
                    set.rdatas.iter().find_map(|r| match r {
                        wire::Rdata::Ds(ds) => Some(ds.clone()),
                        _ => None,
                    })
                });
                return ResponseKind::Referral(ReferralView {
                    child: child.clone(),
                    ns_target: target.clone(),
                    glue,
                    ds,
                });
            }
        }
    }
    ResponseKind::Answer {
        rrset: msg.find_rrset(qname, RecordType::A),
    }
}

/// Verifies `rrsig` over `rrset` against the zone's validated key set.
/// Key-signing keys are only ever candidates for DNSKEY sets.
fn verify_with_candidates(
    rrset: &RRset,
    rrsig: &Rrsig,
    keys: &[Dnskey],
    now: u64,
) -> Result<(), ValidationFailure> {
    let allow_sep = rrset.rtype == RecordType::Dnskey;
    let mut last_reason = InvalidReason::KeyMismatch;
    let mut tried = false;
    for key in keys {
        if crate::dnssec::key_tag(key) != rrsig.key_tag || (!allow_sep && key.is_sep()) {
            continue;
        }
        tried = true;
        match verify_rrsig(rrset, rrsig, key, now) {
            Validity::Valid => return Ok(()),
            Validity::Invalid(reason) => last_reason = reason,
        }
    }
    let _ = tried;
    Err(ValidationFailure::InvalidSignature(rrset.rtype, last_reason))
}

/// Requires a signed, verifiable rrset of `rtype` at `owner` in `msg`.
fn require_signed(
    msg: &DnsMessage,
    owner: &DomainName,
    rtype: RecordType,
    keys: &[Dnskey],
    now: u64,
) -> Result<RRset, ValidationFailure> {
    let rrset = msg
        .find_rrset(owner, rtype)
        .ok_or(ValidationFailure::MissingSignature(rtype))?;
    let rrsig = msg
        .find_rrsig(owner, rtype)
        .ok_or(ValidationFailure::MissingSignature(rtype))?;
    verify_with_candidates(&rrset, &rrsig, keys, now)?;
    Ok(rrset)
}

/// Advances the chain state by one level.
///
/// With the chain intact, the responder must prove its key set against the
/// expected DS and sign everything it serves; referrals then either extend
/// the chain (DS present) or open a gap (DS absent). Once a gap is open no
/// hierarchical validation is possible and the walk merely descends.
/// Failures land in `BrokenBogus` values rather than errors.
pub fn validate_level(state: &ChainState, msg: &DnsMessage, now: u64) -> ChainState {
    let qname = match &msg.question {
        Some(q) => q.name.clone(),
        None => return state.clone(),
    };
    match &state.security {
        SecurityStatus::BrokenBogus { .. } => state.clone(),
        SecurityStatus::GapOpen { at } => {
            // Descend without validating; nothing below the gap can anchor.
            match classify_response(msg, &state.current_zone, &qname) {
                ResponseKind::Referral(referral) => ChainState {
                    current_zone: referral.child,
                    validated_dnskeys: Vec::new(),
                    expected_ds: None,
                    security: SecurityStatus::GapOpen { at: at.clone() },
                },
                ResponseKind::Answer { .. } => state.clone(),
            }
        }
        SecurityStatus::SecureSoFar => {
            let zone = &state.current_zone;
            let broken = |reason: ValidationFailure| ChainState {
                current_zone: zone.clone(),
                validated_dnskeys: Vec::new(),
                expected_ds: state.expected_ds.clone(),
                security: SecurityStatus::BrokenBogus { reason },
            };
            let Some(expected_ds) = &state.expected_ds else {
                // An intact chain always carries the next DS; treat the
                // inconsistency as a gap at this zone.
                return ChainState {
                    current_zone: zone.clone(),
                    validated_dnskeys: Vec::new(),
                    expected_ds: None,
                    security: SecurityStatus::GapOpen { at: zone.clone() },
                };
            };

            // 1. The zone's key set, anchored through the DS.
            let Some(dnskey_rrset) = msg.find_rrset(zone, RecordType::Dnskey) else {
                return broken(ValidationFailure::MissingDnskey);
            };
            let keys: Vec<Dnskey> = dnskey_rrset
                .rdatas
                .iter()
                .filter_map(|r| match r {
                    wire::Rdata::Dnskey(k) => Some(k.clone()),
                    _ => None,
                })
                .collect();
            let anchored: Vec<Dnskey> = keys
                .iter()
                .filter(|k| match_ds(expected_ds, k))
                .cloned()
                .collect();
            if anchored.is_empty() {
                return broken(ValidationFailure::DsMismatch);
            }
            let Some(dnskey_sig) = msg.find_rrsig(zone, RecordType::Dnskey) else {
                return broken(ValidationFailure::MissingSignature(RecordType::Dnskey));
            };
            // The key-set signature must verify under an anchored key.
            if let Err(failure) = verify_with_candidates(&dnskey_rrset, &dnskey_sig, &anchored, now)
            {
                return broken(failure);
            }

            // 2. Everything else served at this level, under the zone keys.
            match classify_response(msg, zone, &qname) {
                ResponseKind::Referral(referral) => {
                    if let Err(f) = require_signed(msg, &referral.child, RecordType::Ns, &keys, now)
                    {
                        return broken(f);
                    }
                    if msg.find_rrset(&referral.ns_target, RecordType::A).is_some() {
                        if let Err(f) =
                            require_signed(msg, &referral.ns_target, RecordType::A, &keys, now)
                        {
                            return broken(f);
                        }
                    }
                    match &referral.ds {
                        Some(ds) => {
                            if let Err(f) =
                                require_signed(msg, &referral.child, RecordType::Ds, &keys, now)
                            {
                                return broken(f);
                            }
                            ChainState {
                                current_zone: referral.child.clone(),
                                validated_dnskeys: keys,
                                expected_ds: Some(ds.clone()),
                                security: SecurityStatus::SecureSoFar,
                            }
                        }
                        None => ChainState {
                            current_zone: referral.child.clone(),
                            validated_dnskeys: Vec::new(),
                            expected_ds: None,
                            security: SecurityStatus::GapOpen {
                                at: referral.child.clone(),
                            },
                        },
                    }
                }
                ResponseKind::Answer { rrset } => {
                    if rrset.is_some() {
                        if let Err(f) = require_signed(msg, &qname, RecordType::A, &keys, now) {
                            return broken(f);
                        }
                    }
                    ChainState {
                        current_zone: zone.clone(),
                        validated_dnskeys: keys,
                        expected_ds: state.expected_ds.clone(),
                        security: SecurityStatus::SecureSoFar,
                    }
                }
            }
        }
    }
}

/// How the sealed answer held up.
#[derive(Debug, Clone, PartialEq)]
enum SealedVerdict {
    FullyValidated(RRset),
    Unsigned(RRset),
    Bad(ValidationFailure),
}

/// Validates the answer received over the authenticated channel against
/// the key set carried in the same channel.
fn validate_sealed_answer(
    msg: &DnsMessage,
    qname: &DomainName,
    zone: &DomainName,
    now: u64,
) -> SealedVerdict {
    let Some(rrset) = msg.find_rrset(qname, RecordType::A) else {
        return SealedVerdict::Bad(ValidationFailure::SealedAnswerInvalid);
    };
    let Some(dnskey_rrset) = msg.find_rrset(zone, RecordType::Dnskey) else {
        // No keys in channel: a plain answer is fine, signatures without
        // keys are not.
        if msg.find_rrsig(qname, RecordType::A).is_some() {
            return SealedVerdict::Bad(ValidationFailure::MissingDnskey);
        }
        return SealedVerdict::Unsigned(rrset);
    };
    let keys: Vec<Dnskey> = dnskey_rrset
        .rdatas
        .iter()
        .filter_map(|r| match r {
            wire::Rdata::Dnskey(k) => Some(k.clone()),
            _ => None,
        })
        .collect();
    let Some(dnskey_sig) = msg.find_rrsig(zone, RecordType::Dnskey) else {
        return SealedVerdict::Bad(ValidationFailure::MissingSignature(RecordType::Dnskey));
    };
    if verify_with_candidates(&dnskey_rrset, &dnskey_sig, &keys, now).is_err() {
        return SealedVerdict::Bad(ValidationFailure::SealedAnswerInvalid);
    }
    let Some(answer_sig) = msg.find_rrsig(qname, RecordType::A) else {
        return SealedVerdict::Bad(ValidationFailure::MissingSignature(RecordType::A));
    };
    match verify_with_candidates(&rrset, &answer_sig, &keys, now) {
        Ok(()) => SealedVerdict::FullyValidated(rrset),
        Err(_) => SealedVerdict::Bad(ValidationFailure::SealedAnswerInvalid),
    }
}

/// The resolver: configuration, cache and deterministic randomness.
pub struct Resolver {
    cfg: ResolverConfig,
    cache: Cache,
    rng: ChaCha20Rng,
}

enum BridgeRun {
    Aborted(AbortReason),
    Sealed { msg: DnsMessage },
}

impl Resolver {
    pub fn new(cfg: ResolverConfig, seed: u64) -> Self {
        let cache = Cache::new(cfg.cache_capacity);
        Resolver {
            cfg,
            cache,
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn cache(&self) -> &Cache {
        &self.cache
    }

    /// Resolves one question over the given transport.
    pub fn resolve<T: QueryTransport>(
        &mut self,
        qname: &DomainName,
        rtype: RecordType,
        net: &mut T,
    ) -> Result<ResolutionOutcome, ResolveError> {
        let mut transcript = Transcript::new();
        let now = net.now();

        if let Some(entry) = self
            .cache
            .lookup(qname, rtype, now, self.cfg.accept_unvalidated)
        {
            let status = entry.status.clone();
            transcript.push(Event::CacheHit {
                name: qname.clone(),
                status: status.to_string(),
            });
            transcript.push(Event::OutcomeReached {
                status: status.to_string(),
            });
            return Ok(ResolutionOutcome {
                status,
                answer: Some(entry.rrset.clone()),
                transcript,
                rtt_count: 0,
            });
        }

        let mut state = ChainState::start(&self.cfg.trust_anchors);
        if let SecurityStatus::GapOpen { at } = &state.security {
            transcript.push(Event::GapOpened { zone: at.clone() });
        }
        let mut server = self.cfg.root_server;
        let mut rtt: u32 = 0;

        for _depth in 0..16 {
            let txid = (self.rng.next_u32() & 0xFFFF) as u16;
            let mut query = DnsMessage::query(txid, qname.clone(), rtype);
            let flagged = matches!(state.security, SecurityStatus::GapOpen { .. });
            if flagged {
                query.push_edns(wire::EdnsOption::ds_absent());
            }
            transcript.push(Event::Query {
                server,
                name: qname.clone(),
                qtype: rtype.to_string(),
                txid,
                ds_absent_flag: flagged,
            });
            let replies = net.udp_round(server, wire::encode(&query)?)?;
            rtt += 1;
            if replies.is_empty() {
                return Err(NetError::NoRoute(server).into());
            }

            // Select the first acceptable response; with an intact chain,
            // acceptable means fully validated, so forged racers without
            // valid signatures cannot displace the authentic answer.
            let mut accepted: Option<(DnsMessage, ChainState)> = None;
            let mut first_failure: Option<ValidationFailure> = None;
            let mut refused_rcode: Option<Rcode> = None;
            for bytes in &replies {
                let Ok(msg) = wire::decode(bytes) else {
                    transcript.push(Event::ForgeryRejected {
                        server,
                        reason: "undecodable".into(),
                    });
                    first_failure.get_or_insert(ValidationFailure::MalformedResponse);
                    continue;
                };
                if !msg.header.response
                    || msg.header.txid != txid
                    || msg.question != query.question
                {
                    transcript.push(Event::ForgeryRejected {
                        server,
                        reason: "txid or question mismatch".into(),
                    });
                    continue;
                }
                if msg.header.rcode != Rcode::NoError {
                    refused_rcode = Some(msg.header.rcode);
                    continue;
                }
                match &state.security {
                    SecurityStatus::SecureSoFar => {
                        let candidate = validate_level(&state, &msg, now);
                        if let SecurityStatus::BrokenBogus { reason } = &candidate.security {
                            transcript.push(Event::ForgeryRejected {
                                server,
                                reason: reason.to_string(),
                            });
                            first_failure.get_or_insert(reason.clone());
                            continue;
                        }
                        accepted = Some((msg, candidate));
                        break;
                    }
                    _ => {
                        let candidate = validate_level(&state, &msg, now);
                        accepted = Some((msg, candidate));
                        break;
                    }
                }
            }

            let Some((msg, new_state)) = accepted else {
                if let Some(reason) = first_failure {
                    transcript.push(Event::ValidationFailed {
                        zone: state.current_zone.clone(),
                        reason: reason.to_string(),
                    });
                    let status = OutcomeStatus::Bogus { reason };
                    transcript.push(Event::OutcomeReached {
                        status: status.to_string(),
                    });
                    return Ok(ResolutionOutcome {
                        status,
                        answer: None,
                        transcript,
                        rtt_count: rtt,
                    });
                }
                if let Some(rcode) = refused_rcode {
                    return Err(ResolveError::ServerRefused { server, rcode });
                }
                return Err(ResolveError::NoUsableResponse(server));
            };

            let responder_zone = state.current_zone.clone();
            transcript.push(Event::Response {
                server,
                rcode: format!("{:?}", msg.header.rcode),
                answers: msg.answers.len(),
                authority: msg.authority.len(),
                additional: msg.additional.len(),
                ds_present: msg
                    .authority
                    .iter()
                    .any(|r| r.rtype() == RecordType::Ds),
                bridge_advert: msg.bridge_advert(),
            });
            match (&state.security, &new_state.security) {
                (SecurityStatus::SecureSoFar, SecurityStatus::SecureSoFar) => {
                    transcript.push(Event::LevelValidated {
                        zone: responder_zone.clone(),
                    });
                }
                (SecurityStatus::SecureSoFar, SecurityStatus::GapOpen { at }) => {
                    transcript.push(Event::LevelValidated {
                        zone: responder_zone.clone(),
                    });
                    transcript.push(Event::GapOpened { zone: at.clone() });
                }
                _ => {}
            }
            state = new_state;

            // Bridge when a gap is open and the responder advertised one.
            let advert = msg.bridge_advert();
            if let (SecurityStatus::GapOpen { at }, Some(port), true) =
                (&state.security, advert, self.cfg.bridging_enabled)
            {
                let gap_zone = at.clone();
                let run = self.run_bridge(
                    net,
                    &mut transcript,
                    server,
                    port,
                    qname,
                    rtype,
                    now,
                    &mut rtt,
                )?;
                match run {
                    BridgeRun::Aborted(reason) => {
                        let status = OutcomeStatus::Aborted { reason };
                        transcript.push(Event::OutcomeReached {
                            status: status.to_string(),
                        });
                        return Ok(ResolutionOutcome {
                            status,
                            answer: None,
                            transcript,
                            rtt_count: rtt,
                        });
                    }
                    BridgeRun::Sealed { msg: sealed } => {
                        // A sealed referral continues the walk; a sealed
                        // answer finishes it. Both are judged against the
                        // zone that served them.
                        match classify_response(&sealed, &responder_zone, qname) {
                            ResponseKind::Referral(referral) => {
                                transcript.push(Event::SealedReferral {
                                    zone: referral.child.clone(),
                                });
                                server = referral
                                    .glue
                                    .ok_or(ResolveError::MissingGlue(referral.child))?;
                                continue;
                            }
                            ResponseKind::Answer { .. } => {
                                let verdict =
                                    validate_sealed_answer(&sealed, qname, &responder_zone, now);
                                transcript.push(Event::SealedResponseReceived {
                                    validated: matches!(
                                        verdict,
                                        SealedVerdict::FullyValidated(_)
                                    ),
                                });
                                let (status, answer) = match verdict {
                                    SealedVerdict::FullyValidated(rrset) => {
                                        if gap_zone == responder_zone {
                                            (OutcomeStatus::BridgedSecure, Some(rrset))
                                        } else {
                                            (OutcomeStatus::BridgedEncrypted, Some(rrset))
                                        }
                                    }
                                    SealedVerdict::Unsigned(rrset) => {
                                        (OutcomeStatus::BridgedEncrypted, Some(rrset))
                                    }
                                    SealedVerdict::Bad(reason) => {
                                        transcript.push(Event::ValidationFailed {
                                            zone: responder_zone.clone(),
                                            reason: reason.to_string(),
                                        });
                                        (OutcomeStatus::Bogus { reason }, None)
                                    }
                                };
                                return self.finish(
                                    transcript, status, answer, rtt, qname, rtype, now,
                                );
                            }
                        }
                    }
                }
            }

            match classify_response(&msg, &responder_zone, qname) {
                ResponseKind::Referral(referral) => {
                    server = referral
                        .glue
                        .ok_or(ResolveError::MissingGlue(referral.child))?;
                }
                ResponseKind::Answer { rrset } => {
                    let (status, answer) = match &state.security {
                        SecurityStatus::SecureSoFar => {
                            let Some(rrset) = rrset else {
                                return Err(ResolveError::EmptyAnswer(server));
                            };
                            (OutcomeStatus::Secure, Some(rrset))
                        }
                        SecurityStatus::GapOpen { .. } => {
                            let Some(rrset) = rrset else {
                                return Err(ResolveError::EmptyAnswer(server));
                            };
                            (OutcomeStatus::Insecure, Some(rrset))
                        }
                        SecurityStatus::BrokenBogus { reason } => {
                            (OutcomeStatus::Bogus { reason: reason.clone() }, None)
                        }
                    };
                    return self.finish(transcript, status, answer, rtt, qname, rtype, now);
                }
            }
        }
        Err(ResolveError::MaxDepthExceeded)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &mut self,
        mut transcript: Transcript,
        status: OutcomeStatus,
        answer: Option<RRset>,
        rtt: u32,
        qname: &DomainName,
        rtype: RecordType,
        now: u64,
    ) -> Result<ResolutionOutcome, ResolveError> {
        transcript.push(Event::OutcomeReached {
            status: status.to_string(),
        });
        if let Some(rrset) = &answer {
            if status.has_answer() {
                self.cache.insert(CacheEntry {
                    name: qname.clone(),
                    rtype,
                    rrset: rrset.clone(),
                    status: status.clone(),
                    inserted_at: now,
                    ttl: rrset.ttl,
                });
            }
        }
        Ok(ResolutionOutcome {
            status,
            answer,
            transcript,
            rtt_count: rtt,
        })
    }

    /// Runs the client half of the bridge against `server:port` and returns
    /// either the sealed response or the abort that stopped it.
    #[allow(clippy::too_many_arguments)]
    fn run_bridge<T: QueryTransport>(
        &mut self,
        net: &mut T,
        transcript: &mut Transcript,
        server: Ipv4Addr,
        port: u16,
        qname: &DomainName,
        rtype: RecordType,
        now: u64,
        rtt: &mut u32,
    ) -> Result<BridgeRun, ResolveError> {
        transcript.push(Event::TcpConnect { server, port });
        let stream = net.connect(server, port)?;
        *rtt += 1;

        let (mut client, hello) =
            BridgeClient::start(server, self.cfg.trust_store.clone(), self.rng.next_u64());
        transcript.push(Event::ClientHelloSent);
        let reply = match bridge_stream_round(
            net,
            stream,
            encode_frame(&Frame::Handshake(hello)),
            RoundPurpose::TlsFlight1,
            rtt,
        )? {
            RoundResult::Bytes(bytes) => bytes,
            RoundResult::Closed => {
                return Ok(self.abort(transcript, AbortReason::ChannelClosed))
            }
        };

        let flight = match handshake_frames(&reply) {
            Ok(msgs) => msgs,
            Err(reason) => return Ok(self.abort(transcript, reason)),
        };
        let cert_ip = flight.iter().find_map(|m| match m {
            HandshakeMessage::Certificate { cert } => Some(cert.subject_ip),
            _ => None,
        });
        if let Some(ip) = cert_ip {
            transcript.push(Event::ServerFlightReceived { cert_ip: ip });
        }
        let client_flight = match client.process_server_flight(&flight, now) {
            Ok(msgs) => {
                transcript.push(Event::CertChecked {
                    accepted: true,
                    reason: None,
                });
                msgs
            }
            Err(err) => {
                if let BridgeError::CertRejected(reason) = err {
                    transcript.push(Event::CertChecked {
                        accepted: false,
                        reason: Some(reason_text(reason)),
                    });
                }
                return Ok(self.abort(transcript, bridge_abort(err)));
            }
        };
        transcript.push(Event::ClientFlightSent);
        let mut payload = Vec::new();
        for msg in client_flight {
            payload.extend_from_slice(&encode_frame(&Frame::Handshake(msg)));
        }
        let reply = match bridge_stream_round(net, stream, payload, RoundPurpose::TlsFlight2, rtt)? {
            RoundResult::Bytes(bytes) => bytes,
            RoundResult::Closed => {
                return Ok(self.abort(transcript, AbortReason::ChannelClosed))
            }
        };
        let finish_flight = match handshake_frames(&reply) {
            Ok(msgs) => msgs,
            Err(reason) => return Ok(self.abort(transcript, reason)),
        };
        if let Err(err) = client.process_server_finish(&finish_flight, now) {
            return Ok(self.abort(transcript, bridge_abort(err)));
        }
        transcript.push(Event::HandshakeEstablished);

        let sealed_txid = (self.rng.next_u32() & 0xFFFF) as u16;
        let sealed_query = DnsMessage::query(sealed_txid, qname.clone(), rtype);
        let record = match client.seal(&sealed_query) {
            Ok(rec) => rec,
            Err(err) => return Ok(self.abort(transcript, bridge_abort(err))),
        };
        transcript.push(Event::SealedQuerySent);
        let reply = match bridge_stream_round(
            net,
            stream,
            encode_frame(&Frame::Record(record)),
            RoundPurpose::SealedQuery,
            rtt,
        )? {
            RoundResult::Bytes(bytes) => bytes,
            RoundResult::Closed => {
                return Ok(self.abort(transcript, AbortReason::ChannelClosed))
            }
        };

        let frames = match decode_frames(&reply) {
            Ok(frames) => frames,
            Err(_) => return Ok(self.abort(transcript, AbortReason::MalformedFrame)),
        };
        let Some(Frame::Record(rec)) = frames.into_iter().next() else {
            return Ok(self.abort(transcript, AbortReason::OutOfOrder));
        };
        let sealed_msg = match client.open(&rec) {
            Ok(msg) => msg,
            Err(err) => return Ok(self.abort(transcript, bridge_abort(err))),
        };
        if sealed_msg.header.txid != sealed_txid || !sealed_msg.header.response {
            return Ok(self.abort(transcript, AbortReason::RecordTamper));
        }
        Ok(BridgeRun::Sealed { msg: sealed_msg })
    }

    fn abort(&self, transcript: &mut Transcript, reason: AbortReason) -> BridgeRun {
        transcript.push(Event::BridgeAborted {
            reason: reason.to_string(),
        });
        BridgeRun::Aborted(reason)
    }
}

enum RoundResult {
    Bytes(Vec<u8>),
    Closed,
}

/// One stream round trip; a peer that aborted and closed the channel is a
/// protocol outcome, not a harness error.
fn bridge_stream_round<T: QueryTransport>(
    net: &mut T,
    stream: StreamId,
    payload: Vec<u8>,
    purpose: RoundPurpose,
    rtt: &mut u32,
) -> Result<RoundResult, ResolveError> {
    match net.stream_round(stream, payload, purpose) {
        Ok(bytes) => {
            *rtt += 1;
            Ok(RoundResult::Bytes(bytes))
        }
        Err(NetError::StreamClosed) => Ok(RoundResult::Closed),
        Err(other) => Err(other.into()),
    }
}

fn handshake_frames(bytes: &[u8]) -> Result<Vec<HandshakeMessage>, AbortReason> {
    let frames = decode_frames(bytes).map_err(|_| AbortReason::MalformedFrame)?;
    frames
        .into_iter()
        .map(|f| match f {
            Frame::Handshake(msg) => Ok(msg),
            Frame::Record(_) => Err(AbortReason::OutOfOrder),
        })
        .collect()
}

fn bridge_abort(err: BridgeError) -> AbortReason {
    match err {
        BridgeError::NoCommonCipher => AbortReason::NoCommonCipher,
        BridgeError::CertRejected(r) => AbortReason::CertRejected(r),
        BridgeError::TranscriptMismatch => AbortReason::TranscriptMismatch,
        BridgeError::MalformedKex => AbortReason::MalformedKex,
        BridgeError::RecordTamper => AbortReason::RecordTamper,
        BridgeError::MalformedFrame => AbortReason::MalformedFrame,
        BridgeError::OutOfOrder
        | BridgeError::NotEstablished
        | BridgeError::ChannelClosed => AbortReason::OutOfOrder,
    }
}

fn reason_text(reason: RejectReason) -> String {
    reason.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dnssec::{compute_ds, generate_zone_keys, KeyRole, DIGEST_SHA256};
    use crate::nameserver::{ZoneConfig, ZoneConfigBuilder};
    use crate::wire::EdnsOption;
    use std::net::Ipv4Addr;

    const VALIDITY: (u64, u64) = (0, 10_000);
    const NOW: u64 = 5_000;

    fn name(s: &str) -> DomainName {
        DomainName::parse(s).unwrap()
    }

    fn root_zone(publish_ds: bool) -> (ZoneConfig, TrustAnchor) {
        let root_keys = generate_zone_keys(DomainName::root(), &[1u8; 32]);
        let child_keys = generate_zone_keys(name("com"), &[2u8; 32]);
        let zone = ZoneConfigBuilder::new(DomainName::root(), Ipv4Addr::new(10, 0, 0, 1))
            .validity(VALIDITY)
            .keys(root_keys.clone())
            .delegate(
                name("com"),
                name("ns.com"),
                Ipv4Addr::new(10, 0, 0, 2),
                Some(child_keys.dnskey(KeyRole::Ksk)),
                publish_ds,
            )
            .build()
            .unwrap();
        (zone, TrustAnchor::for_root_keys(&root_keys))
    }

    fn anchored_state(anchor: &TrustAnchor) -> ChainState {
        ChainState::start(std::slice::from_ref(anchor))
    }

    fn referral_response(zone: &ZoneConfig) -> DnsMessage {
        let query = DnsMessage::query(1, name("www.example.com"), RecordType::A);
        zone.answer_query(&query, NOW)
    }

    #[test]
    fn validate_level_extends_chain_on_signed_referral() {
        let (zone, anchor) = root_zone(true);
        let state = anchored_state(&anchor);
        let next = validate_level(&state, &referral_response(&zone), NOW);
        assert_eq!(next.security, SecurityStatus::SecureSoFar);
        assert_eq!(next.current_zone, name("com"));
        assert!(next.expected_ds.is_some());
        assert_eq!(next.validated_dnskeys.len(), 2);
    }

    #[test]
    fn validate_level_opens_gap_when_ds_absent() {
        let (zone, anchor) = root_zone(false);
        let state = anchored_state(&anchor);
        let next = validate_level(&state, &referral_response(&zone), NOW);
        assert_eq!(
            next.security,
            SecurityStatus::GapOpen { at: name("com") }
        );
        assert!(next.expected_ds.is_none());
    }

    #[test]
    fn validate_level_rejects_mismatching_ds() {
        let (zone, _anchor) = root_zone(true);
        // Anchor derived from an unrelated key: nothing in the served
        // DNSKEY set can match it.
        let stranger = generate_zone_keys(DomainName::root(), &[9u8; 32]);
        let bad_anchor = TrustAnchor {
            zone: DomainName::root(),
            ds: compute_ds(&stranger.dnskey(KeyRole::Ksk), DIGEST_SHA256).unwrap(),
        };
        let state = anchored_state(&bad_anchor);
        let next = validate_level(&state, &referral_response(&zone), NOW);
        assert_eq!(
            next.security,
            SecurityStatus::BrokenBogus {
                reason: ValidationFailure::DsMismatch
            }
        );
    }

    #[test]
    fn validate_level_is_ttl_invariant() {
        let (zone, anchor) = root_zone(true);
        let state = anchored_state(&anchor);
        let response = referral_response(&zone);
        let mut decayed = response.clone();
        for rec in decayed
            .answers
            .iter_mut()
            .chain(decayed.authority.iter_mut())
            .chain(decayed.additional.iter_mut())
        {
            rec.ttl /= 2;
        }
        let a = validate_level(&state, &response, NOW);
        let b = validate_level(&state, &decayed, NOW);
        assert_eq!(a.security, b.security);
        assert_eq!(a.current_zone, b.current_zone);
        assert_eq!(a.expected_ds, b.expected_ds);
    }

    #[test]
    fn validate_level_breaks_on_stripped_signatures() {
        let (zone, anchor) = root_zone(true);
        let state = anchored_state(&anchor);
        let mut response = referral_response(&zone);
        response
            .authority
            .retain(|r| r.rtype() != RecordType::Rrsig);
        let next = validate_level(&state, &response, NOW);
        assert!(matches!(
            next.security,
            SecurityStatus::BrokenBogus {
                reason: ValidationFailure::MissingSignature(RecordType::Ns)
            }
        ));
    }

    #[test]
    fn ksk_is_never_a_candidate_for_record_sets() {
        // An RRSIG claiming the KSK's tag over an A set must not verify,
        // even if someone actually signed with the KSK.
        let keys = generate_zone_keys(name("example.com"), &[3u8; 32]);
        let rrset = RRset::new(
            name("example.com"),
            RecordType::A,
            300,
            vec![wire::Rdata::A(Ipv4Addr::new(192, 0, 2, 1))],
        );
        let dnskey_set = keys.dnskey_rrset(300);
        let forged = crate::dnssec::sign_rrset(
            &dnskey_set,
            &keys,
            crate::dnssec::KeyRole::Ksk,
            VALIDITY,
        )
        .unwrap();
        let mut misdirected = forged.clone();
        misdirected.covered_type = RecordType::A;
        let keys_list = vec![
            keys.dnskey(KeyRole::Zsk),
            keys.dnskey(KeyRole::Ksk),
        ];
        let result = verify_with_candidates(&rrset, &misdirected, &keys_list, NOW);
        assert!(result.is_err());
    }

    #[test]
    fn gap_state_descends_without_validation() {
        let (zone, _anchor) = root_zone(true);
        let state = ChainState {
            current_zone: DomainName::root(),
            validated_dnskeys: Vec::new(),
            expected_ds: None,
            security: SecurityStatus::GapOpen {
                at: DomainName::root(),
            },
        };
        let next = validate_level(&state, &referral_response(&zone), NOW);
        assert_eq!(next.current_zone, name("com"));
        assert_eq!(
            next.security,
            SecurityStatus::GapOpen {
                at: DomainName::root()
            }
        );
        let _ = EdnsOption::ds_absent();
    }
}
