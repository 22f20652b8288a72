//! The authenticated-channel handshake and record layer used to reach a
//! nameserver whose delegation lacks a DS record.
//!
//! The message sequence is fixed:
//!
//! ```text
//! client -> ClientHello
//! server -> ServerHello, Certificate, ServerHelloDone
//! client -> ClientKeyExchange, ChangeCipherSpec, Finished
//! server -> ChangeCipherSpec, Finished
//! client -> sealed query        server -> sealed response
//! ```
//!
//! The certificate binds the server's IP address to its X25519 identity
//! key; the client aborts before deriving any key material if that IP does
//! not match the address the parent referral supplied. Key exchange is
//! X25519 between a client ephemeral key (carried in ClientKeyExchange)
//! and the certified server identity key. Traffic keys come from
//! HKDF-SHA256 over the shared secret, salted with both randoms and bound
//! to the running handshake transcript; records are sealed with
//! ChaCha20-Poly1305 under per-direction keys and counter nonces.
//!
//! Wire framing is length-prefixed and type-tagged:
//!
//! ```text
//! frame          len u16 | type u8 | body
//! ClientHello    1: random 32 | count u8 | suite u16 *
//! ServerHello    2: random 32 | suite u16
//! Certificate    3: certificate bytes
//! ServerHelloDone 4: empty
//! ClientKeyExchange 5: key len u16 | public key
//! ChangeCipherSpec 6: empty
//! Finished       7: mac 32
//! sealed record  8: sequence u64 | len u16 | ciphertext
//! ```

use std::net::Ipv4Addr;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::ChaCha20Poly1305;
use hkdf::Hkdf;
use hmac::{Hmac, Mac};
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use x25519_dalek::{PublicKey, StaticSecret};

use crate::ipcert::{verify_cert, CertVerdict, IpCertificate, RejectReason, TrustStore};
use crate::wire::{self, DnsMessage};

/// The one supported suite: X25519 + HKDF-SHA256 + ChaCha20-Poly1305.
pub const CIPHER_SUITE: u16 = 0xB001;

/// Handshake messages, in their fixed order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HandshakeMessage {
    ClientHello {
        client_random: [u8; 32],
        cipher_list: Vec<u16>,
    },
    ServerHello {
        server_random: [u8; 32],
        cipher_choice: u16,
    },
    Certificate {
        cert: IpCertificate,
    },
    ServerHelloDone,
    ClientKeyExchange {
        client_ephemeral_public: Vec<u8>,
    },
    ChangeCipherSpec,
    Finished {
        transcript_mac: [u8; 32],
    },
}

impl HandshakeMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            HandshakeMessage::ClientHello { .. } => "client_hello",
            HandshakeMessage::ServerHello { .. } => "server_hello",
            HandshakeMessage::Certificate { .. } => "certificate",
            HandshakeMessage::ServerHelloDone => "server_hello_done",
            HandshakeMessage::ClientKeyExchange { .. } => "client_key_exchange",
            HandshakeMessage::ChangeCipherSpec => "change_cipher_spec",
            HandshakeMessage::Finished { .. } => "finished",
        }
    }

    fn frame_type(&self) -> u8 {
        match self {
            HandshakeMessage::ClientHello { .. } => 1,
            HandshakeMessage::ServerHello { .. } => 2,
            HandshakeMessage::Certificate { .. } => 3,
            HandshakeMessage::ServerHelloDone => 4,
            HandshakeMessage::ClientKeyExchange { .. } => 5,
            HandshakeMessage::ChangeCipherSpec => 6,
            HandshakeMessage::Finished { .. } => 7,
        }
    }

    fn body(&self) -> Vec<u8> {
        match self {
            HandshakeMessage::ClientHello {
                client_random,
                cipher_list,
            } => {
                let mut out = Vec::with_capacity(33 + cipher_list.len() * 2);
                out.extend_from_slice(client_random);
                out.push(cipher_list.len() as u8);
                for suite in cipher_list {
                    out.extend_from_slice(&suite.to_be_bytes());
                }
                out
            }
            HandshakeMessage::ServerHello {
                server_random,
                cipher_choice,
            } => {
                let mut out = Vec::with_capacity(34);
                out.extend_from_slice(server_random);
                out.extend_from_slice(&cipher_choice.to_be_bytes());
                out
            }
            HandshakeMessage::Certificate { cert } => cert.to_bytes(),
            HandshakeMessage::ServerHelloDone => Vec::new(),
            HandshakeMessage::ClientKeyExchange {
                client_ephemeral_public,
            } => {
                let mut out = Vec::with_capacity(2 + client_ephemeral_public.len());
                out.extend_from_slice(&(client_ephemeral_public.len() as u16).to_be_bytes());
                out.extend_from_slice(client_ephemeral_public);
                out
            }
            HandshakeMessage::ChangeCipherSpec => Vec::new(),
            HandshakeMessage::Finished { transcript_mac } => transcript_mac.to_vec(),
        }
    }
}

/// One sealed record on the channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncryptedRecord {
    pub sequence: u64,
    pub ciphertext: Vec<u8>,
}

/// Anything that can travel in a frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Handshake(HandshakeMessage),
    Record(EncryptedRecord),
}

/// Encodes one frame.
pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let (frame_type, body) = match frame {
        Frame::Handshake(msg) => (msg.frame_type(), msg.body()),
        Frame::Record(rec) => {
            let mut body = Vec::with_capacity(10 + rec.ciphertext.len());
            body.extend_from_slice(&rec.sequence.to_be_bytes());
            body.extend_from_slice(&(rec.ciphertext.len() as u16).to_be_bytes());
            body.extend_from_slice(&rec.ciphertext);
            (8u8, body)
        }
    };
    let mut out = Vec::with_capacity(3 + body.len());
    out.extend_from_slice(&((body.len() + 1) as u16).to_be_bytes());
    out.push(frame_type);
    out.extend_from_slice(&body);
    out
}

/// Splits a byte stream into frames.
pub fn decode_frames(mut bytes: &[u8]) -> Result<Vec<Frame>, BridgeError> {
    let mut frames = Vec::new();
    while !bytes.is_empty() {
        if bytes.len() < 2 {
            return Err(BridgeError::MalformedFrame);
        }
        let len = u16::from_be_bytes([bytes[0], bytes[1]]) as usize;
        if len == 0 || bytes.len() < 2 + len {
            return Err(BridgeError::MalformedFrame);
        }
        let frame_type = bytes[2];
        let body = &bytes[3..2 + len];
        frames.push(decode_frame_body(frame_type, body)?);
        bytes = &bytes[2 + len..];
    }
    Ok(frames)
}

fn decode_frame_body(frame_type: u8, body: &[u8]) -> Result<Frame, BridgeError> {
    let msg = match frame_type {
        1 => {
            if body.len() < 33 {
                return Err(BridgeError::MalformedFrame);
            }
            let mut client_random = [0u8; 32];
            client_random.copy_from_slice(&body[..32]);
            let count = body[32] as usize;
            if body.len() != 33 + count * 2 {
                return Err(BridgeError::MalformedFrame);
            }
            let cipher_list = body[33..]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect();
            HandshakeMessage::ClientHello {
                client_random,
                cipher_list,
            }
        }
        2 => {
            if body.len() != 34 {
                return Err(BridgeError::MalformedFrame);
            }
            let mut server_random = [0u8; 32];
            server_random.copy_from_slice(&body[..32]);
            HandshakeMessage::ServerHello {
                server_random,
                cipher_choice: u16::from_be_bytes([body[32], body[33]]),
            }
        }
        3 => HandshakeMessage::Certificate {
            cert: IpCertificate::from_bytes(body).map_err(|_| BridgeError::MalformedFrame)?,
        },
        4 => {
            if !body.is_empty() {
                return Err(BridgeError::MalformedFrame);
            }
            HandshakeMessage::ServerHelloDone
        }
        5 => {
            if body.len() < 2 {
                return Err(BridgeError::MalformedFrame);
            }
            let len = u16::from_be_bytes([body[0], body[1]]) as usize;
            if body.len() != 2 + len {
                return Err(BridgeError::MalformedFrame);
            }
            HandshakeMessage::ClientKeyExchange {
                client_ephemeral_public: body[2..].to_vec(),
            }
        }
        6 => {
            if !body.is_empty() {
                return Err(BridgeError::MalformedFrame);
            }
            HandshakeMessage::ChangeCipherSpec
        }
        7 => {
            let mac: [u8; 32] = body.try_into().map_err(|_| BridgeError::MalformedFrame)?;
            HandshakeMessage::Finished {
                transcript_mac: mac,
            }
        }
        8 => {
            if body.len() < 10 {
                return Err(BridgeError::MalformedFrame);
            }
            let sequence = u64::from_be_bytes(body[..8].try_into().unwrap());
            let len = u16::from_be_bytes([body[8], body[9]]) as usize;
            if body.len() != 10 + len {
                return Err(BridgeError::MalformedFrame);
            }
            return Ok(Frame::Record(EncryptedRecord {
                sequence,
                ciphertext: body[10..].to_vec(),
            }));
        }
        _ => return Err(BridgeError::MalformedFrame),
    };
    Ok(Frame::Handshake(msg))
}

/// Why a session died. Terminal: no operation leaves this state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AbortReason {
    NoCommonCipher,
    CertRejected(RejectReason),
    TranscriptMismatch,
    MalformedKex,
    RecordTamper,
    OutOfOrder,
    MalformedFrame,
    ChannelClosed,
}

impl std::fmt::Display for AbortReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AbortReason::NoCommonCipher => write!(f, "no common cipher"),
            AbortReason::CertRejected(r) => write!(f, "certificate rejected: {r}"),
            AbortReason::TranscriptMismatch => write!(f, "finished mac mismatch"),
            AbortReason::MalformedKex => write!(f, "malformed key exchange"),
            AbortReason::RecordTamper => write!(f, "sealed record failed authentication"),
            AbortReason::OutOfOrder => write!(f, "message out of order"),
            AbortReason::MalformedFrame => write!(f, "malformed frame"),
            AbortReason::ChannelClosed => write!(f, "peer closed the channel"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum BridgeError {
    #[error("message arrived out of order")]
    OutOfOrder,
    #[error("no common cipher suite")]
    NoCommonCipher,
    #[error("certificate rejected: {0}")]
    CertRejected(RejectReason),
    #[error("finished mac does not match transcript")]
    TranscriptMismatch,
    #[error("key exchange public key malformed")]
    MalformedKex,
    #[error("sealed record failed authentication")]
    RecordTamper,
    #[error("session is not established")]
    NotEstablished,
    #[error("malformed frame")]
    MalformedFrame,
    #[error("channel already closed")]
    ChannelClosed,
}

impl BridgeError {
    fn abort_reason(self) -> Option<AbortReason> {
        match self {
            BridgeError::NoCommonCipher => Some(AbortReason::NoCommonCipher),
            BridgeError::CertRejected(r) => Some(AbortReason::CertRejected(r)),
            BridgeError::TranscriptMismatch => Some(AbortReason::TranscriptMismatch),
            BridgeError::MalformedKex => Some(AbortReason::MalformedKex),
            BridgeError::RecordTamper => Some(AbortReason::RecordTamper),
            BridgeError::OutOfOrder => Some(AbortReason::OutOfOrder),
            BridgeError::MalformedFrame => Some(AbortReason::MalformedFrame),
            BridgeError::NotEstablished | BridgeError::ChannelClosed => None,
        }
    }
}

/// Coarse session state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionState {
    Idle,
    AwaitServerHello,
    AwaitClientKex,
    AwaitFinished,
    Established,
    Aborted(AbortReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Expect {
    ServerHello,
    Certificate,
    ServerHelloDone,
    ServerCcs,
    ServerFinished,
    ClientHello,
    ClientKex,
    ClientCcs,
    ClientFinished,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Client,
    Server,
}

/// Derived traffic secrets plus the transcript they were bound to.
#[derive(Clone)]
struct KeySchedule {
    client_write: [u8; 32],
    server_write: [u8; 32],
    mac_key: [u8; 32],
}

fn derive_keys(
    shared: &[u8; 32],
    client_random: &[u8; 32],
    server_random: &[u8; 32],
    transcript_hash: &[u8; 32],
) -> KeySchedule {
    let mut salt = Vec::with_capacity(64);
    salt.extend_from_slice(client_random);
    salt.extend_from_slice(server_random);
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut info = Vec::with_capacity(L_KEY_EXPANSION.len() + 32);
    info.extend_from_slice(L_KEY_EXPANSION);
    info.extend_from_slice(transcript_hash);
    let mut okm = [0u8; 96];
    hk.expand(&info, &mut okm).expect("96 bytes is a valid hkdf length");
    let mut schedule = KeySchedule {
        client_write: [0u8; 32],
        server_write: [0u8; 32],
        mac_key: [0u8; 32],
    };
    schedule.client_write.copy_from_slice(&okm[..32]);
    schedule.server_write.copy_from_slice(&okm[32..64]);
    schedule.mac_key.copy_from_slice(&okm[64..]);
    schedule
}

const L_KEY_EXPANSION: &[u8] = b"bridge key expansion";
const L_CLIENT_FINISHED: &[u8] = b"client finished";
const L_SERVER_FINISHED: &[u8] = b"server finished";

fn finished_mac(mac_key: &[u8; 32], label: &[u8], transcript_hash: &[u8; 32]) -> [u8; 32] {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(mac_key).expect("hmac accepts any key length");
    mac.update(label);
    mac.update(transcript_hash);
    mac.finalize().into_bytes().into()
}

/// Running transcript: the concatenated frame bytes of every handshake
/// message, in order, hashed on demand.
#[derive(Clone, Default)]
struct Transcript {
    bytes: Vec<u8>,
}

impl Transcript {
    fn append(&mut self, msg: &HandshakeMessage) {
        self.bytes
            .extend_from_slice(&encode_frame(&Frame::Handshake(msg.clone())));
    }

    fn hash(&self) -> [u8; 32] {
        Sha256::digest(&self.bytes).into()
    }
}

/// Shared session core: state, transcript, derived keys, record counters.
#[derive(Clone)]
struct SessionCore {
    role: Role,
    expect: Expect,
    abort: Option<AbortReason>,
    transcript: Transcript,
    client_random: [u8; 32],
    server_random: [u8; 32],
    // Keys live here from derivation until establishment or abort.
    pending_keys: Option<KeySchedule>,
    keys: Option<KeySchedule>,
    channel_binding: [u8; 32],
    send_seq: u64,
    recv_seq: u64,
}

impl SessionCore {
    fn new(role: Role, expect: Expect) -> Self {
        SessionCore {
            role,
            expect,
            abort: None,
            transcript: Transcript::default(),
            client_random: [0u8; 32],
            server_random: [0u8; 32],
            pending_keys: None,
            keys: None,
            channel_binding: [0u8; 32],
            send_seq: 0,
            recv_seq: 0,
        }
    }

    fn state(&self) -> SessionState {
        if let Some(reason) = self.abort {
            return SessionState::Aborted(reason);
        }
        match (self.role, self.expect) {
            (_, Expect::Done) => SessionState::Established,
            (Role::Client, Expect::ServerHello) => SessionState::AwaitServerHello,
            (Role::Client, Expect::Certificate | Expect::ServerHelloDone) => {
                SessionState::AwaitServerHello
            }
            (Role::Client, Expect::ServerCcs | Expect::ServerFinished) => {
                SessionState::AwaitFinished
            }
            (Role::Server, Expect::ClientHello) => SessionState::Idle,
            (Role::Server, Expect::ClientKex) => SessionState::AwaitClientKex,
            (Role::Server, Expect::ClientCcs | Expect::ClientFinished) => {
                SessionState::AwaitFinished
            }
            _ => SessionState::Idle,
        }
    }

    fn fail(&mut self, err: BridgeError) -> BridgeError {
        if let Some(reason) = err.abort_reason() {
            self.abort = Some(reason);
            self.pending_keys = None;
            self.keys = None;
        }
        err
    }

    fn guard(&mut self, want: Expect) -> Result<(), BridgeError> {
        if self.abort.is_some() {
            return Err(BridgeError::OutOfOrder);
        }
        if self.expect != want {
            return Err(self.fail(BridgeError::OutOfOrder));
        }
        Ok(())
    }

    fn establish(&mut self) {
        self.keys = self.pending_keys.take();
        self.channel_binding = self.transcript.hash();
        self.expect = Expect::Done;
    }

    fn has_traffic_keys(&self) -> bool {
        self.keys.is_some()
    }

    /// Seals one message for the peer.
    fn seal(&mut self, msg: &DnsMessage) -> Result<EncryptedRecord, BridgeError> {
        let keys = self.keys.as_ref().ok_or(BridgeError::NotEstablished)?;
        let key = match self.role {
            Role::Client => &keys.client_write,
            Role::Server => &keys.server_write,
        };
        let plaintext = wire::encode(msg).map_err(|_| BridgeError::MalformedFrame)?;
        let sequence = self.send_seq;
        let cipher = ChaCha20Poly1305::new_from_slice(key).expect("32-byte key");
        let ciphertext = cipher
            .encrypt(
                &nonce_for(sequence).into(),
                Payload {
                    msg: &plaintext,
                    aad: &self.aad(sequence),
                },
            )
            .expect("encryption is infallible");
        self.send_seq += 1;
        Ok(EncryptedRecord {
            sequence,
            ciphertext,
        })
    }

    /// Opens a record from the peer. Any tamper, replay or reorder aborts
    /// the session.
    fn open(&mut self, rec: &EncryptedRecord) -> Result<DnsMessage, BridgeError> {
        if self.keys.is_none() {
            return Err(BridgeError::NotEstablished);
        }
        if rec.sequence != self.recv_seq {
            return Err(self.fail(BridgeError::RecordTamper));
        }
        let keys = self.keys.as_ref().expect("checked above");
        let key = match self.role {
            Role::Client => &keys.server_write,
            Role::Server => &keys.client_write,
        };
        let cipher = ChaCha20Poly1305::new_from_slice(key).expect("32-byte key");
        let plaintext = cipher
            .decrypt(
                &nonce_for(rec.sequence).into(),
                Payload {
                    msg: &rec.ciphertext,
                    aad: &self.aad(rec.sequence),
                },
            )
            .map_err(|_| self.fail(BridgeError::RecordTamper))?;
        let msg = wire::decode(&plaintext).map_err(|_| self.fail(BridgeError::RecordTamper))?;
        self.recv_seq += 1;
        Ok(msg)
    }

    fn aad(&self, sequence: u64) -> Vec<u8> {
        let mut aad = Vec::with_capacity(40);
        aad.extend_from_slice(&self.channel_binding);
        aad.extend_from_slice(&sequence.to_be_bytes());
        aad
    }
}

fn nonce_for(sequence: u64) -> [u8; 12] {
    let mut nonce = [0u8; 12];
    nonce[4..].copy_from_slice(&sequence.to_be_bytes());
    nonce
}

/// Client half of the channel.
#[derive(Clone)]
pub struct BridgeClient {
    core: SessionCore,
    expected_ip: Ipv4Addr,
    store: TrustStore,
    ephemeral: Option<StaticSecret>,
    server_cert: Option<IpCertificate>,
}

impl BridgeClient {
    /// Starts a handshake toward the server expected at `expected_ip`.
    /// All randomness is derived from `rng_seed`, so equal seeds replay
    /// byte-identical handshakes.
    pub fn start(expected_ip: Ipv4Addr, store: TrustStore, rng_seed: u64) -> (Self, HandshakeMessage) {
        let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
        let mut client_random = [0u8; 32];
        rng.fill_bytes(&mut client_random);
        let mut eph_bytes = [0u8; 32];
        rng.fill_bytes(&mut eph_bytes);

        let mut core = SessionCore::new(Role::Client, Expect::ServerHello);
        core.client_random = client_random;
        let hello = HandshakeMessage::ClientHello {
            client_random,
            cipher_list: vec![CIPHER_SUITE],
        };
        core.transcript.append(&hello);
        (
            BridgeClient {
                core,
                expected_ip,
                store,
                ephemeral: Some(StaticSecret::from(eph_bytes)),
                server_cert: None,
            },
            hello,
        )
    }

    pub fn state(&self) -> SessionState {
        self.core.state()
    }

    pub fn has_traffic_keys(&self) -> bool {
        self.core.has_traffic_keys()
    }

    /// Feeds one server message; returns any messages to send back.
    pub fn handle(
        &mut self,
        msg: &HandshakeMessage,
        now: u64,
    ) -> Result<Vec<HandshakeMessage>, BridgeError> {
        match msg {
            HandshakeMessage::ServerHello {
                cipher_choice,
                server_random,
            } => {
                self.core.guard(Expect::ServerHello)?;
                if *cipher_choice != CIPHER_SUITE {
                    return Err(self.core.fail(BridgeError::NoCommonCipher));
                }
                self.core.server_random = *server_random;
                self.core.transcript.append(msg);
                self.core.expect = Expect::Certificate;
                Ok(Vec::new())
            }
            HandshakeMessage::Certificate { cert } => {
                self.core.guard(Expect::Certificate)?;
                self.core.transcript.append(msg);
                self.server_cert = Some(cert.clone());
                self.core.expect = Expect::ServerHelloDone;
                Ok(Vec::new())
            }
            HandshakeMessage::ServerHelloDone => {
                self.core.guard(Expect::ServerHelloDone)?;
                self.core.transcript.append(msg);
                self.finish_server_flight(now)
            }
            HandshakeMessage::ChangeCipherSpec => {
                self.core.guard(Expect::ServerCcs)?;
                self.core.transcript.append(msg);
                self.core.expect = Expect::ServerFinished;
                Ok(Vec::new())
            }
            HandshakeMessage::Finished { transcript_mac } => {
                self.core.guard(Expect::ServerFinished)?;
                let keys = self.core.pending_keys.as_ref().expect("derived before ccs");
                let expected =
                    finished_mac(&keys.mac_key, L_SERVER_FINISHED, &self.core.transcript.hash());
                if *transcript_mac != expected {
                    return Err(self.core.fail(BridgeError::TranscriptMismatch));
                }
                self.core.transcript.append(msg);
                self.core.establish();
                Ok(Vec::new())
            }
            _ => Err(self.core.fail(BridgeError::OutOfOrder)),
        }
    }

    /// The certificate check and key derivation that close out the server's
    /// first flight. An IP mismatch aborts before any key material exists.
    fn finish_server_flight(&mut self, now: u64) -> Result<Vec<HandshakeMessage>, BridgeError> {
        let cert = self.server_cert.as_ref().expect("certificate stored");
        match verify_cert(cert, self.expected_ip, &self.store, now) {
            CertVerdict::Accepted => {}
            CertVerdict::Rejected(reason) => {
                return Err(self.core.fail(BridgeError::CertRejected(reason)));
            }
        }
        let Ok(server_pub) = <[u8; 32]>::try_from(cert.subject_public_key.as_slice()) else {
            return Err(self.core.fail(BridgeError::CertRejected(RejectReason::BadSignature)));
        };
        let ephemeral = self.ephemeral.take().expect("ephemeral unused");
        let eph_public = PublicKey::from(&ephemeral);
        let shared = ephemeral.diffie_hellman(&PublicKey::from(server_pub));

        let kex = HandshakeMessage::ClientKeyExchange {
            client_ephemeral_public: eph_public.as_bytes().to_vec(),
        };
        self.core.transcript.append(&kex);
        let keys = derive_keys(
            shared.as_bytes(),
            &self.core.client_random,
            &self.core.server_random,
            &self.core.transcript.hash(),
        );

        let ccs = HandshakeMessage::ChangeCipherSpec;
        self.core.transcript.append(&ccs);
        let mac = finished_mac(&keys.mac_key, L_CLIENT_FINISHED, &self.core.transcript.hash());
        let fin = HandshakeMessage::Finished {
            transcript_mac: mac,
        };
        self.core.transcript.append(&fin);
        self.core.pending_keys = Some(keys);
        self.core.expect = Expect::ServerCcs;
        Ok(vec![kex, ccs, fin])
    }

    /// Convenience wrapper: feeds the whole ServerHello/Certificate/Done
    /// flight, returning the client's second flight.
    pub fn process_server_flight(
        &mut self,
        msgs: &[HandshakeMessage],
        now: u64,
    ) -> Result<Vec<HandshakeMessage>, BridgeError> {
        let mut out = Vec::new();
        for msg in msgs {
            out.extend(self.handle(msg, now)?);
        }
        Ok(out)
    }

    /// Feeds the server's ChangeCipherSpec/Finished flight.
    pub fn process_server_finish(
        &mut self,
        msgs: &[HandshakeMessage],
        now: u64,
    ) -> Result<(), BridgeError> {
        for msg in msgs {
            let replies = self.handle(msg, now)?;
            debug_assert!(replies.is_empty());
        }
        if self.core.state() == SessionState::Established {
            Ok(())
        } else {
            Err(self.core.fail(BridgeError::OutOfOrder))
        }
    }

    pub fn seal(&mut self, msg: &DnsMessage) -> Result<EncryptedRecord, BridgeError> {
        self.core.seal(msg)
    }

    pub fn open(&mut self, rec: &EncryptedRecord) -> Result<DnsMessage, BridgeError> {
        self.core.open(rec)
    }

    /// Transcript hash the traffic keys are bound to (test hook).
    pub fn channel_binding(&self) -> Option<[u8; 32]> {
        self.core.keys.as_ref().map(|_| self.core.channel_binding)
    }

    #[cfg(test)]
    pub(crate) fn traffic_keys_for_tests(&self) -> Option<([u8; 32], [u8; 32])> {
        self.core
            .keys
            .as_ref()
            .map(|k| (k.client_write, k.server_write))
    }
}

/// The server's channel identity: the X25519 key its certificate certifies.
#[derive(Clone)]
pub struct ServerIdentity {
    secret: StaticSecret,
    pub cert: IpCertificate,
}

impl ServerIdentity {
    pub fn new(secret_bytes: [u8; 32], cert: IpCertificate) -> Self {
        ServerIdentity {
            secret: StaticSecret::from(secret_bytes),
            cert,
        }
    }

    pub fn public_key_bytes(secret_bytes: [u8; 32]) -> [u8; 32] {
        PublicKey::from(&StaticSecret::from(secret_bytes))
            .as_bytes()
            .to_owned()
    }
}

/// Server half of the channel.
#[derive(Clone)]
pub struct BridgeServer {
    core: SessionCore,
    identity: ServerIdentity,
    rng_seed: u64,
}

impl BridgeServer {
    pub fn new(identity: ServerIdentity, rng_seed: u64) -> Self {
        BridgeServer {
            core: SessionCore::new(Role::Server, Expect::ClientHello),
            identity,
            rng_seed,
        }
    }

    pub fn state(&self) -> SessionState {
        self.core.state()
    }

    pub fn has_traffic_keys(&self) -> bool {
        self.core.has_traffic_keys()
    }

    /// Feeds one client message; returns any messages to send back.
    pub fn handle(
        &mut self,
        msg: &HandshakeMessage,
        _now: u64,
    ) -> Result<Vec<HandshakeMessage>, BridgeError> {
        match msg {
            HandshakeMessage::ClientHello {
                client_random,
                cipher_list,
            } => {
                self.core.guard(Expect::ClientHello)?;
                if !cipher_list.contains(&CIPHER_SUITE) {
                    return Err(self.core.fail(BridgeError::NoCommonCipher));
                }
                self.core.client_random = *client_random;
                self.core.transcript.append(msg);

                let mut rng = ChaCha20Rng::seed_from_u64(self.rng_seed);
                let mut server_random = [0u8; 32];
                rng.fill_bytes(&mut server_random);
                self.core.server_random = server_random;

                let hello = HandshakeMessage::ServerHello {
                    server_random,
                    cipher_choice: CIPHER_SUITE,
                };
                let cert = HandshakeMessage::Certificate {
                    cert: self.identity.cert.clone(),
                };
                let done = HandshakeMessage::ServerHelloDone;
                self.core.transcript.append(&hello);
                self.core.transcript.append(&cert);
                self.core.transcript.append(&done);
                self.core.expect = Expect::ClientKex;
                Ok(vec![hello, cert, done])
            }
            HandshakeMessage::ClientKeyExchange {
                client_ephemeral_public,
            } => {
                self.core.guard(Expect::ClientKex)?;
                let Ok(client_pub) = <[u8; 32]>::try_from(client_ephemeral_public.as_slice())
                else {
                    return Err(self.core.fail(BridgeError::MalformedKex));
                };
                self.core.transcript.append(msg);
                let shared = self
                    .identity
                    .secret
                    .diffie_hellman(&PublicKey::from(client_pub));
                let keys = derive_keys(
                    shared.as_bytes(),
                    &self.core.client_random,
                    &self.core.server_random,
                    &self.core.transcript.hash(),
                );
                self.core.pending_keys = Some(keys);
                self.core.expect = Expect::ClientCcs;
                Ok(Vec::new())
            }
            HandshakeMessage::ChangeCipherSpec => {
                self.core.guard(Expect::ClientCcs)?;
                self.core.transcript.append(msg);
                self.core.expect = Expect::ClientFinished;
                Ok(Vec::new())
            }
            HandshakeMessage::Finished { transcript_mac } => {
                self.core.guard(Expect::ClientFinished)?;
                let keys = self.core.pending_keys.as_ref().expect("derived at kex");
                let expected =
                    finished_mac(&keys.mac_key, L_CLIENT_FINISHED, &self.core.transcript.hash());
                if *transcript_mac != expected {
                    return Err(self.core.fail(BridgeError::TranscriptMismatch));
                }
                self.core.transcript.append(msg);

                let ccs = HandshakeMessage::ChangeCipherSpec;
                self.core.transcript.append(&ccs);
                let keys = self.core.pending_keys.as_ref().expect("derived at kex");
                let mac =
                    finished_mac(&keys.mac_key, L_SERVER_FINISHED, &self.core.transcript.hash());
                let fin = HandshakeMessage::Finished {
                    transcript_mac: mac,
                };
                self.core.transcript.append(&fin);
                self.core.establish();
                Ok(vec![ccs, fin])
            }
            _ => Err(self.core.fail(BridgeError::OutOfOrder)),
        }
    }

    /// Convenience wrapper for the first server flight.
    pub fn respond(
        &mut self,
        hello: &HandshakeMessage,
        now: u64,
    ) -> Result<Vec<HandshakeMessage>, BridgeError> {
        self.handle(hello, now)
    }

    /// Feeds the client's second flight; returns ChangeCipherSpec and
    /// Finished once the client's Finished verifies.
    pub fn finish(
        &mut self,
        msgs: &[HandshakeMessage],
        now: u64,
    ) -> Result<Vec<HandshakeMessage>, BridgeError> {
        let mut out = Vec::new();
        for msg in msgs {
            out.extend(self.handle(msg, now)?);
        }
        Ok(out)
    }

    pub fn seal(&mut self, msg: &DnsMessage) -> Result<EncryptedRecord, BridgeError> {
        self.core.seal(msg)
    }

    pub fn open(&mut self, rec: &EncryptedRecord) -> Result<DnsMessage, BridgeError> {
        self.core.open(rec)
    }

    #[cfg(test)]
    pub(crate) fn traffic_keys_for_tests(&self) -> Option<([u8; 32], [u8; 32])> {
        self.core
            .keys
            .as_ref()
            .map(|k| (k.client_write, k.server_write))
    }
}
