//! Deterministic in-memory network between one resolver and its
//! nameservers: datagram rounds and reliable ordered streams, with a
//! virtual clock, per-link latency, round-trip accounting, and pluggable
//! adversaries. Everything is a pure function of the scenario plus its
//! seed, so identical runs produce identical transcripts.

mod adversary;
mod matrix;
mod scenario;

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

pub use adversary::{Adversary, NetEvent, TamperField, TamperTarget};
pub use matrix::{
    expected_outcome, MatrixCell, MatrixSpec, ANSWER_ADDRESS, AUTH_SERVER, BRIDGE_PORT,
    DEFAULT_QUESTION, MATRIX_VERSION, ROOT_SERVER, TLD_SERVER,
};
pub use scenario::{
    run_scenario, run_scenario_with_mutations, scenario_signed_artifacts, OutcomeReport,
    ResolverSection, RunReport, ScenarioError, ScenarioFile, ZoneSection, SCENARIO_EPOCH_S,
    SCENARIO_VERSION, VALIDITY_WINDOW,
};

use crate::nameserver::{BridgeResponder, ZoneConfig};
use crate::resolver::{NetError, QueryTransport, RoundPurpose, StreamId};
use crate::wire::{self, DnsHeader, DnsMessage, Rcode, Rdata, ResourceRecord};

/// One accounted round trip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub id: u32,
    pub purpose: RoundPurpose,
}

/// Ordered round-trip ledger for one resolution.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RttLedger {
    pub entries: Vec<LedgerEntry>,
}

impl RttLedger {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, purpose: RoundPurpose) -> usize {
        self.entries.iter().filter(|e| e.purpose == purpose).count()
    }

    /// Round trips added on top of a plain resolution of the same shape.
    /// The sealed exchange replaces the plaintext answer exchange, so the
    /// overhead is exactly the connection setup: the TCP handshake plus the
    /// two handshake flights.
    pub fn extra_rtt(&self) -> u32 {
        (self.count(RoundPurpose::TcpHandshake)
            + self.count(RoundPurpose::TlsFlight1)
            + self.count(RoundPurpose::TlsFlight2)) as u32
    }

    fn push(&mut self, purpose: RoundPurpose) {
        let id = self.entries.len() as u32;
        self.entries.push(LedgerEntry { id, purpose });
    }
}

/// Sent/delivered/injected accounting for the conservation invariant:
/// every sent message is delivered exactly once (possibly mutated in
/// transit); duplicates only ever come from injection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conservation {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub injected: u64,
}

struct ServerNode {
    zone: ZoneConfig,
    latency_ms: u64,
}

struct StreamConn {
    server: Ipv4Addr,
    zone: ZoneConfig,
    responder: BridgeResponder,
    latency_ms: u64,
    flight_index: u32,
    closed: bool,
}

/// The simulated network, also the resolver's transport.
pub struct SimNet {
    epoch_s: u64,
    clock_ms: u64,
    servers: BTreeMap<Ipv4Addr, ServerNode>,
    adversary: Adversary,
    rng: ChaCha20Rng,
    ledger: RttLedger,
    log: Vec<NetEvent>,
    conservation: Conservation,
    streams: BTreeMap<StreamId, StreamConn>,
    next_stream: StreamId,
}

impl SimNet {
    pub fn new(epoch_s: u64, seed: u64) -> Self {
        SimNet {
            epoch_s,
            clock_ms: 0,
            servers: BTreeMap::new(),
            adversary: Adversary::None,
            rng: ChaCha20Rng::seed_from_u64(seed),
            ledger: RttLedger::default(),
            log: Vec::new(),
            conservation: Conservation::default(),
            streams: BTreeMap::new(),
            next_stream: 1,
        }
    }

    /// Registers a nameserver at its zone's address.
    pub fn add_server(&mut self, zone: ZoneConfig, latency_ms: u64) {
        self.servers
            .insert(zone.address, ServerNode { zone, latency_ms });
    }

    pub fn set_adversary(&mut self, adversary: Adversary) {
        self.adversary = adversary;
    }

    pub fn clock_ms(&self) -> u64 {
        self.clock_ms
    }

    pub fn ledger(&self) -> &RttLedger {
        &self.ledger
    }

    pub fn conservation(&self) -> Conservation {
        self.conservation
    }

    /// Drains per-resolution accounting, leaving the clock running.
    pub fn take_run_artifacts(&mut self) -> (RttLedger, Vec<NetEvent>, Conservation) {
        let ledger = std::mem::take(&mut self.ledger);
        let log = std::mem::take(&mut self.log);
        let conservation = std::mem::take(&mut self.conservation);
        (ledger, log, conservation)
    }

    /// True when any bridge endpoint ever sealed an answer (test hook for
    /// abort soundness: an aborted run must leave this false).
    pub fn any_sealed_answer_served(&self) -> bool {
        self.streams.values().any(|s| s.responder.has_answered())
    }

    fn forged_response(&mut self, query: &DnsMessage, forged_address: Ipv4Addr, oracle: bool) -> Vec<u8> {
        let txid = if oracle {
            query.header.txid
        } else {
            (self.rng.next_u32() & 0xFFFF) as u16
        };
        let question = query.question.clone().expect("queries carry a question");
        let forged = DnsMessage {
            header: DnsHeader {
                txid,
                ..DnsHeader::response_to(&query.header, Rcode::NoError)
            },
            answers: vec![ResourceRecord::new(
                question.name.clone(),
                300,
                Rdata::A(forged_address),
            )],
            question: Some(question),
            authority: Vec::new(),
            additional: Vec::new(),
            edns: None,
        };
        wire::encode(&forged).expect("forged response encodes")
    }
}

impl QueryTransport for SimNet {
    fn now(&self) -> u64 {
        self.epoch_s + self.clock_ms / 1000
    }

    fn udp_round(&mut self, dst: Ipv4Addr, payload: Vec<u8>) -> Result<Vec<Vec<u8>>, NetError> {
        let (zone_name, latency, response) = {
            let node = self.servers.get(&dst).ok_or(NetError::NoRoute(dst))?;
            let query = match wire::decode(&payload) {
                Ok(query) => query,
                // A garbled query is dropped on the floor, like a real
                // server would.
                Err(_) => return Ok(Vec::new()),
            };
            let now = self.epoch_s + (self.clock_ms + node.latency_ms) / 1000;
            let response = node.zone.answer_query(&query, now);
            (node.zone.zone.clone(), node.latency_ms, response)
        };
        self.clock_ms += latency; // query travels
        self.conservation.sent += 1;
        self.conservation.delivered += 1;

        let query = wire::decode(&payload).expect("decoded above");
        let in_scope = self.adversary.scope_matches(&zone_name);
        let mut deliveries: Vec<Vec<u8>> = Vec::new();
        let mut response = response;

        if in_scope {
            match self.adversary.clone() {
                Adversary::OnPathTamper { target, .. } => {
                    if adversary::tamper_response(&mut response, &target) {
                        self.log.push(NetEvent::ResponseTampered { server: dst });
                    }
                }
                Adversary::BridgeStrip { .. } => {
                    if let Some(options) = &mut response.edns {
                        let before = options.len();
                        options.retain(|o| o.bridge_port().is_none());
                        if options.len() != before {
                            self.log.push(NetEvent::BridgeAdvertStripped { server: dst });
                        }
                        if options.is_empty() {
                            response.edns = None;
                        }
                    }
                }
                Adversary::OffPathSpoof {
                    rate,
                    oracle_txid,
                    forged_address,
                    ..
                } => {
                    // Forged racers arrive ahead of the authentic response.
                    for _ in 0..rate {
                        let forged = self.forged_response(&query, forged_address, oracle_txid);
                        let txid_match = oracle_txid || {
                            let guessed = wire::decode(&forged)
                                .map(|m| m.header.txid)
                                .unwrap_or_default();
                            guessed == query.header.txid
                        };
                        self.log.push(NetEvent::ForgedResponseInjected {
                            server: dst,
                            txid_match,
                        });
                        self.conservation.injected += 1;
                        self.conservation.delivered += 1;
                        deliveries.push(forged);
                    }
                }
                _ => {}
            }
        }

        deliveries.push(wire::encode(&response).expect("zone responses encode"));
        self.clock_ms += latency; // response travels
        self.conservation.sent += 1;
        self.conservation.delivered += 1;
        self.ledger.push(RoundPurpose::UdpQuery);
        Ok(deliveries)
    }

    fn connect(&mut self, dst: Ipv4Addr, port: u16) -> Result<StreamId, NetError> {
        let actual = match &self.adversary {
            Adversary::ImpostorServer { at } => {
                let at = *at;
                self.log.push(NetEvent::StreamRedirected {
                    requested: dst,
                    actual: at,
                });
                at
            }
            _ => dst,
        };
        let node = self
            .servers
            .get(&actual)
            .ok_or(NetError::ConnectRefused(dst, port))?;
        let bridge = node
            .zone
            .bridge
            .as_ref()
            .ok_or(NetError::ConnectRefused(dst, port))?;
        if bridge.port != port {
            return Err(NetError::ConnectRefused(dst, port));
        }
        let latency = node.latency_ms;
        let zone = node.zone.clone();
        let handshake_seed = self.rng.next_u64();
        let responder = zone
            .start_bridge_session(handshake_seed)
            .map_err(|_| NetError::ConnectRefused(dst, port))?;

        self.clock_ms += 2 * latency; // SYN / SYN-ACK
        self.ledger.push(RoundPurpose::TcpHandshake);

        let id = self.next_stream;
        self.next_stream += 1;
        self.streams.insert(
            id,
            StreamConn {
                server: actual,
                zone,
                responder,
                latency_ms: latency,
                flight_index: 0,
                closed: false,
            },
        );
        Ok(id)
    }

    fn stream_round(
        &mut self,
        stream: StreamId,
        payload: Vec<u8>,
        purpose: RoundPurpose,
    ) -> Result<Vec<u8>, NetError> {
        let adversary = self.adversary.clone();
        let now_base = self.epoch_s;
        let conn = self.streams.get_mut(&stream).ok_or(NetError::StreamClosed)?;
        if conn.closed {
            return Err(NetError::StreamClosed);
        }

        let mut outbound = payload;
        let out_index = conn.flight_index;
        let reply_index = conn.flight_index + 1;
        conn.flight_index += 2;

        let mut tamper_log: Vec<NetEvent> = Vec::new();
        if let Adversary::OnPathTamper {
            target: TamperTarget::StreamFlight { index, byte, xor },
            ..
        } = &adversary
        {
            if adversary.scope_matches(&conn.zone.zone) && *index == out_index && !outbound.is_empty()
            {
                let len = outbound.len();
                outbound[byte % len] ^= xor;
                tamper_log.push(NetEvent::StreamFlightTampered {
                    server: conn.server,
                    index: out_index,
                });
            }
        }

        self.clock_ms += conn.latency_ms;
        self.conservation.sent += 1;
        self.conservation.delivered += 1;
        let now = now_base + self.clock_ms / 1000;

        let result = conn.responder.on_bytes(&conn.zone, &outbound, now);
        let mut reply = match result {
            Ok(reply) => reply,
            Err(_) => {
                conn.closed = true;
                self.log.append(&mut tamper_log);
                return Err(NetError::StreamClosed);
            }
        };

        if let Adversary::OnPathTamper {
            target: TamperTarget::StreamFlight { index, byte, xor },
            ..
        } = &adversary
        {
            if adversary.scope_matches(&conn.zone.zone) && *index == reply_index && !reply.is_empty()
            {
                let len = reply.len();
                reply[byte % len] ^= xor;
                tamper_log.push(NetEvent::StreamFlightTampered {
                    server: conn.server,
                    index: reply_index,
                });
            }
        }

        self.clock_ms += conn.latency_ms;
        self.conservation.sent += 1;
        self.conservation.delivered += 1;
        self.ledger.push(purpose);
        self.log.append(&mut tamper_log);
        Ok(reply)
    }
}
