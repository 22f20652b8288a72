//! Machine-readable resolution transcripts.

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::wire::DomainName;

/// One protocol-visible event during a resolution, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    CacheHit {
        name: DomainName,
        status: String,
    },
    Query {
        server: Ipv4Addr,
        name: DomainName,
        qtype: String,
        txid: u16,
        ds_absent_flag: bool,
    },
    Response {
        server: Ipv4Addr,
        rcode: String,
        answers: usize,
        authority: usize,
        additional: usize,
        ds_present: bool,
        bridge_advert: Option<u16>,
    },
    ForgeryRejected {
        server: Ipv4Addr,
        reason: String,
    },
    LevelValidated {
        zone: DomainName,
    },
    GapOpened {
        zone: DomainName,
    },
    ValidationFailed {
        zone: DomainName,
        reason: String,
    },
    TcpConnect {
        server: Ipv4Addr,
        port: u16,
    },
    ClientHelloSent,
    ServerFlightReceived {
        cert_ip: Ipv4Addr,
    },
    CertChecked {
        accepted: bool,
        reason: Option<String>,
    },
    ClientFlightSent,
    HandshakeEstablished,
    BridgeAborted {
        reason: String,
    },
    SealedQuerySent,
    SealedResponseReceived {
        validated: bool,
    },
    SealedReferral {
        zone: DomainName,
    },
    DowngradeSuspected,
    OutcomeReached {
        status: String,
    },
}

/// Ordered event list for one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub events: Vec<Event>,
}

impl Transcript {
    pub fn new() -> Self {
        Transcript::default()
    }

    pub fn push(&mut self, event: Event) {
        self.events.push(event);
    }

    pub fn count<F: Fn(&Event) -> bool>(&self, pred: F) -> usize {
        self.events.iter().filter(|e| pred(e)).count()
    }

    pub fn contains<F: Fn(&Event) -> bool>(&self, pred: F) -> bool {
        self.events.iter().any(pred)
    }
}
