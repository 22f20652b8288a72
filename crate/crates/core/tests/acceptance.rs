//! Acceptance suite: one test per project acceptance criterion, each
//! printing a PASS line (visible with `--nocapture`) once its checks hold
//! at the stated tolerance.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use islandbridge::bridge::{
    AbortReason, BridgeClient, BridgeServer, HandshakeMessage, ServerIdentity, SessionState,
};
use islandbridge::dnssec::{
    compute_ds, generate_zone_keys, sign_rrset, verify_rrsig, KeyRole, Validity, DIGEST_SHA256,
};
use islandbridge::ipcert::{issue_cert, CaIdentity, RejectReason, TrustStore};
use islandbridge::resolver::{Event, OutcomeStatus, RoundPurpose};
use islandbridge::simnet::{
    expected_outcome, run_scenario, run_scenario_with_mutations, scenario_signed_artifacts,
    Adversary, MatrixCell, MatrixSpec, NetEvent, ScenarioFile,
};
use islandbridge::wire::{
    decode, encode, DnsHeader, DnsMessage, DomainName, Dnskey, Ds, EdnsOption, Question, RRset,
    Rcode, Rdata, RecordType, ResourceRecord, Rrsig,
};

fn cell(r: bool, t: bool, a: bool, d: bool, b: bool) -> MatrixCell {
    MatrixCell {
        root_signed: r,
        tld_signed: t,
        auth_signed: a,
        tld_publishes_ds: d,
        bridge: b,
    }
}

fn spec_with_seed(seed: u64) -> MatrixSpec {
    MatrixSpec {
        seed,
        ..MatrixSpec::default()
    }
}

/// Criterion 1: a zero-gap bridged resolution costs exactly three round
/// trips more than the identically shaped fully-signed baseline; the
/// sealed exchange replaces the plaintext answer exchange.
#[test]
fn c1_rtt_overhead_is_exactly_three() {
    for seed in [1u64, 7, 42, 1000, 65537] {
        for latency in [None, Some(1), Some(25)] {
            let spec = spec_with_seed(seed);
            let mut bridged = spec.cell_scenario(&cell(true, true, true, false, true));
            bridged.latency_ms = latency;
            let mut baseline = spec.cell_scenario(&cell(true, true, true, true, false));
            baseline.latency_ms = latency;

            let bridged_report = run_scenario(&bridged).unwrap();
            let baseline_report = run_scenario(&baseline).unwrap();
            let bridged_outcome = bridged_report.last();
            let baseline_outcome = baseline_report.last();

            assert_eq!(bridged_outcome.status, OutcomeStatus::BridgedSecure);
            assert_eq!(baseline_outcome.status, OutcomeStatus::Secure);
            // Same number of datagram exchanges either way; the bridged run
            // adds connection setup and swaps the plaintext answer for the
            // sealed one.
            assert_eq!(
                bridged_outcome.ledger.count(RoundPurpose::UdpQuery),
                baseline_outcome.ledger.count(RoundPurpose::UdpQuery)
            );
            assert_eq!(bridged_outcome.ledger.count(RoundPurpose::SealedQuery), 1);
            let replaced = bridged_outcome.ledger.count(RoundPurpose::SealedQuery);
            let extra = bridged_outcome.ledger.len() - baseline_outcome.ledger.len() - replaced;
            assert_eq!(extra, 3, "seed {seed} latency {latency:?}");
            assert_eq!(bridged_outcome.extra_rtt, 3);
            assert_eq!(baseline_outcome.extra_rtt, 0);
        }
    }
    println!("criterion 1 (rtt overhead = 3): PASS");
}

/// Criterion 2: the 32-cell deployment matrix matches the documented
/// expected-outcome table exactly.
#[test]
fn c2_outcome_matrix_matches_expected_table() {
    let spec = spec_with_seed(7);
    let cells = spec.cells();
    assert_eq!(cells.len(), 32);
    let mut tally: BTreeMap<String, usize> = BTreeMap::new();
    for cell in cells {
        let report = run_scenario(&spec.cell_scenario(&cell)).unwrap();
        let got = report.last().status.clone();
        let expected = expected_outcome(&cell);
        assert_eq!(got, expected, "cell {}", cell.label());
        *tally.entry(expected.to_string()).or_default() += 1;
    }
    assert_eq!(tally.get("Secure"), Some(&2));
    assert_eq!(tally.get("BridgedSecure"), Some(&1));
    assert_eq!(tally.get("BridgedEncrypted"), Some(&14));
    assert_eq!(tally.get("Insecure"), Some(&15));
    println!("criterion 2 (32-cell outcome matrix): PASS");
}

/// Criterion 3: flipping any byte of any signed RRset, RRSIG or DS across
/// the Secure and BridgedSecure scenarios is always detected (Bogus or
/// Aborted), with at least 500 distinct mutations exercised.
#[test]
fn c3_tamper_sweep_detection_rate_is_one() {
    let spec = spec_with_seed(11);
    let scenarios = [
        ("secure", spec.cell_scenario(&cell(true, true, true, true, false))),
        (
            "bridged_secure",
            spec.cell_scenario(&cell(true, true, true, false, true)),
        ),
    ];
    let mut mutations_run = 0usize;
    let mut detected = 0usize;
    for (label, scenario) in &scenarios {
        let artifacts = scenario_signed_artifacts(scenario).unwrap();
        assert!(!artifacts.is_empty());
        for (zone, artifact, len) in artifacts {
            for byte in 0..len {
                let mutation = islandbridge::nameserver::ZoneMutation::FlipByte {
                    artifact: artifact.clone(),
                    byte,
                    xor: 0x01,
                };
                let report =
                    run_scenario_with_mutations(scenario, &[(zone.clone(), mutation)]).unwrap();
                let status = &report.last().status;
                mutations_run += 1;
                match status {
                    OutcomeStatus::Bogus { .. } | OutcomeStatus::Aborted { .. } => detected += 1,
                    other => panic!(
                        "undetected mutation in {label}: zone {zone} artifact {artifact:?} byte {byte} -> {other}"
                    ),
                }
            }
        }
    }
    assert!(mutations_run >= 500, "only {mutations_run} mutations");
    assert_eq!(detected, mutations_run);
    println!(
        "criterion 3 (tamper sweep, {mutations_run} mutations, detection rate 1.0): PASS"
    );
}

/// Criterion 4: an impostor presenting a certificate bound to any other
/// address aborts at the address check, with zero sealed payloads, in
/// 100/100 randomized scenarios.
#[test]
fn c4_impostor_always_aborts_with_ip_mismatch() {
    let mut rng = ChaCha20Rng::seed_from_u64(0xC4);
    for trial in 0..100u32 {
        let seed = rng.next_u64();
        let impostor = Ipv4Addr::new(
            203,
            0,
            113,
            (rng.next_u32() % 250 + 1) as u8, // avoid collisions with servers
        );
        let mut scenario = spec_with_seed(seed).cell_scenario(&cell(true, true, true, false, true));
        scenario.adversary = Adversary::ImpostorServer { at: impostor };
        let report = run_scenario(&scenario).unwrap();
        let outcome = report.last();
        assert_eq!(
            outcome.status,
            OutcomeStatus::Aborted {
                reason: AbortReason::CertRejected(RejectReason::IpMismatch)
            },
            "trial {trial}"
        );
        assert!(outcome.answer.is_empty());
        assert_eq!(outcome.ledger.count(RoundPurpose::SealedQuery), 0);
        assert!(!outcome
            .transcript
            .contains(|e| matches!(e, Event::SealedQuerySent)));
    }
    println!("criterion 4 (impostor abort, 100/100): PASS");
}

/// Independent SHA-256, implemented from the FIPS 180-4 constants, used
/// as the oracle for delegation digests. Kept free of any crate code.
mod sha256_oracle {
    const K: [u32; 64] = [
        0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4,
        0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe,
        0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f,
        0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7,
        0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc,
        0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
        0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116,
        0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
        0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7,
        0xc67178f2,
    ];

    pub fn digest(data: &[u8]) -> [u8; 32] {
        let mut h: [u32; 8] = [
            0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a, 0x510e527f, 0x9b05688c, 0x1f83d9ab,
            0x5be0cd19,
        ];
        let mut message = data.to_vec();
        let bit_len = (data.len() as u64) * 8;
        message.push(0x80);
        while message.len() % 64 != 56 {
            message.push(0);
        }
        message.extend_from_slice(&bit_len.to_be_bytes());

        for block in message.chunks_exact(64) {
            let mut w = [0u32; 64];
            for (i, chunk) in block.chunks_exact(4).enumerate() {
                w[i] = u32::from_be_bytes(chunk.try_into().unwrap());
            }
            for i in 16..64 {
                let s0 = w[i - 15].rotate_right(7) ^ w[i - 15].rotate_right(18) ^ (w[i - 15] >> 3);
                let s1 = w[i - 2].rotate_right(17) ^ w[i - 2].rotate_right(19) ^ (w[i - 2] >> 10);
                w[i] = w[i - 16]
                    .wrapping_add(s0)
                    .wrapping_add(w[i - 7])
                    .wrapping_add(s1);
            }
            let (mut a, mut b, mut c, mut d, mut e, mut f, mut g, mut hh) =
                (h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7]);
            for i in 0..64 {
                let s1 = e.rotate_right(6) ^ e.rotate_right(11) ^ e.rotate_right(25);
                let ch = (e & f) ^ ((!e) & g);
                let temp1 = hh
                    .wrapping_add(s1)
                    .wrapping_add(ch)
                    .wrapping_add(K[i])
                    .wrapping_add(w[i]);
                let s0 = a.rotate_right(2) ^ a.rotate_right(13) ^ a.rotate_right(22);
                let maj = (a & b) ^ (a & c) ^ (b & c);
                let temp2 = s0.wrapping_add(maj);
                hh = g;
                g = f;
                f = e;
                e = d.wrapping_add(temp1);
                d = c;
                c = b;
                b = a;
                a = temp1.wrapping_add(temp2);
            }
            h[0] = h[0].wrapping_add(a);
            h[1] = h[1].wrapping_add(b);
            h[2] = h[2].wrapping_add(c);
            h[3] = h[3].wrapping_add(d);
            h[4] = h[4].wrapping_add(e);
            h[5] = h[5].wrapping_add(f);
            h[6] = h[6].wrapping_add(g);
            h[7] = h[7].wrapping_add(hh);
        }
        let mut out = [0u8; 32];
        for (i, word) in h.iter().enumerate() {
            out[i * 4..i * 4 + 4].copy_from_slice(&word.to_be_bytes());
        }
        out
    }

    #[test]
    fn oracle_matches_fips_vectors() {
        let empty = digest(b"");
        assert_eq!(
            hex(&empty),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        let abc = digest(b"abc");
        assert_eq!(
            hex(&abc),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    pub fn hex(bytes: &[u8]) -> String {
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Independent wire assembly of a lowercased name, avoiding the library's
/// name code entirely.
fn oracle_name_wire(text: &str) -> Vec<u8> {
    let mut out = Vec::new();
    let trimmed = text.strip_suffix('.').unwrap_or(text);
    if !trimmed.is_empty() {
        for label in trimmed.split('.') {
            let lower = label.to_ascii_lowercase();
            out.push(lower.len() as u8);
            out.extend_from_slice(lower.as_bytes());
        }
    }
    out.push(0);
    out
}

/// Criterion 5: delegation digests equal an independent SHA-256 oracle
/// over the documented layout; sign/verify and seal/open round-trip for
/// 1000 random inputs; every single-bit ciphertext flip fails to open.
#[test]
fn c5_crypto_oracles() {
    // Digest layout: canonical owner name wire form, then the DNSKEY rdata
    // (flags u16 | protocol 3 | algorithm | public key).
    let mut rng = ChaCha20Rng::seed_from_u64(0xC5);
    for i in 0..100u32 {
        let owner_text = format!("Host-{i}.Example.COM");
        let owner = DomainName::parse(&owner_text).unwrap();
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        let keys = generate_zone_keys(owner.clone(), &seed);
        let key = keys.dnskey(KeyRole::Ksk);
        let ds = compute_ds(&key, DIGEST_SHA256).unwrap();

        let mut oracle_input = oracle_name_wire(&owner_text);
        oracle_input.extend_from_slice(&key.flags.to_be_bytes());
        oracle_input.push(3);
        oracle_input.push(key.algorithm);
        oracle_input.extend_from_slice(&key.public_key);
        let expected = sha256_oracle::digest(&oracle_input);
        assert_eq!(
            sha256_oracle::hex(&ds.digest),
            sha256_oracle::hex(&expected),
            "key {i}"
        );
    }

    // Sign/verify round-trip across 1000 random RRsets.
    let zone = DomainName::parse("example.com").unwrap();
    let keys = generate_zone_keys(zone.clone(), &[5u8; 32]);
    let zsk = keys.dnskey(KeyRole::Zsk);
    for i in 0..1000u32 {
        let rrset = RRset::new(
            zone.clone(),
            RecordType::A,
            300,
            vec![Rdata::A(Ipv4Addr::from(rng.next_u32().to_be_bytes()))],
        );
        let rrsig = sign_rrset(&rrset, &keys, KeyRole::Zsk, (0, u64::MAX)).unwrap();
        assert_eq!(
            verify_rrsig(&rrset, &rrsig, &zsk, 1_000),
            Validity::Valid,
            "iteration {i}"
        );
    }

    // Seal/open round-trip across 1000 random messages on one channel.
    let (mut client, mut server) = established_pair(0xC5C5);
    for i in 0..1000u16 {
        let mut msg = DnsMessage::query(
            i,
            DomainName::parse(&format!("q{i}.example.com")).unwrap(),
            RecordType::A,
        );
        if i % 3 == 0 {
            msg.push_edns(EdnsOption::ds_absent());
        }
        let rec = client.seal(&msg).unwrap();
        assert_eq!(server.open(&rec).unwrap(), msg, "iteration {i}");
        let mut reply = msg.clone();
        reply.header.response = true;
        let rec = server.seal(&reply).unwrap();
        assert_eq!(client.open(&rec).unwrap(), reply);
    }

    // Every single-bit flip of one ciphertext fails authenticated opening.
    let (mut client, server) = established_pair(0xC5C6);
    let record = client
        .seal(&DnsMessage::query(
            7,
            DomainName::parse("www.example.com").unwrap(),
            RecordType::A,
        ))
        .unwrap();
    let mut flips = 0usize;
    for byte in 0..record.ciphertext.len() {
        for bit in 0..8 {
            let mut tampered = record.clone();
            tampered.ciphertext[byte] ^= 1 << bit;
            let mut receiver = server.clone();
            assert!(
                receiver.open(&tampered).is_err(),
                "byte {byte} bit {bit} slipped through"
            );
            flips += 1;
        }
    }
    assert!(flips >= 8 * record.ciphertext.len());
    println!(
        "criterion 5 (crypto oracles: 100 digests, 1000 sign/verify, 1000 seal/open, {flips} bit flips): PASS"
    );
}

fn established_pair(seed: u64) -> (BridgeClient, BridgeServer) {
    let server_ip = Ipv4Addr::new(192, 0, 2, 53);
    let ca = CaIdentity::from_seed("acceptance-ca", &[3u8; 32]);
    let secret = [9u8; 32];
    let cert = issue_cert(
        &ca,
        server_ip,
        &ServerIdentity::public_key_bytes(secret),
        1,
        (0, u64::MAX - 1),
    )
    .unwrap();
    let (mut client, hello) = BridgeClient::start(server_ip, TrustStore::with_ca(&ca), seed);
    let mut server = BridgeServer::new(ServerIdentity::new(secret, cert), seed ^ 0xFFFF);
    let flight = server.respond(&hello, 10).unwrap();
    let client_flight = client.process_server_flight(&flight, 10).unwrap();
    let finish = server.finish(&client_flight, 10).unwrap();
    client.process_server_finish(&finish, 10).unwrap();
    (client, server)
}

/// Deterministic message generator for the codec corpus: covers every
/// supported record type, every EDNS option, all header flags.
fn generated_message(rng: &mut ChaCha20Rng, index: u32) -> DnsMessage {
    fn name(rng: &mut ChaCha20Rng) -> DomainName {
        let labels = (rng.next_u32() % 4) as usize;
        let mut parts = Vec::new();
        for _ in 0..labels {
            let len = (rng.next_u32() % 11 + 1) as usize;
            let mut label = vec![0u8; len];
            rng.fill_bytes(&mut label);
            parts.push(label);
        }
        DomainName::from_labels(parts).unwrap()
    }
    fn rdata(rng: &mut ChaCha20Rng, selector: u32) -> Rdata {
        match selector % 5 {
            0 => Rdata::A(Ipv4Addr::from(rng.next_u32().to_be_bytes())),
            1 => Rdata::Ns(name(rng)),
            2 => {
                let mut public_key = vec![0u8; (rng.next_u32() % 40 + 1) as usize];
                rng.fill_bytes(&mut public_key);
                Rdata::Dnskey(Dnskey {
                    owner: DomainName::root(),
                    flags: [0u16, 0x0100, 0x0101][(rng.next_u32() % 3) as usize],
                    algorithm: rng.next_u32() as u8,
                    public_key,
                })
            }
            3 => {
                let mut signature = vec![0u8; (rng.next_u32() % 70) as usize];
                rng.fill_bytes(&mut signature);
                Rdata::Rrsig(Rrsig {
                    covered_type: [
                        RecordType::A,
                        RecordType::Ns,
                        RecordType::Ds,
                        RecordType::Dnskey,
                    ][(rng.next_u32() % 4) as usize],
                    algorithm: rng.next_u32() as u8,
                    key_tag: rng.next_u32() as u16,
                    inception: rng.next_u64(),
                    expiration: rng.next_u64(),
                    signer: name(rng),
                    signature,
                })
            }
            _ => {
                let mut digest = vec![0u8; (rng.next_u32() % 40) as usize];
                rng.fill_bytes(&mut digest);
                Rdata::Ds(Ds {
                    owner: DomainName::root(),
                    key_tag: rng.next_u32() as u16,
                    algorithm: rng.next_u32() as u8,
                    digest_type: rng.next_u32() as u8,
                    digest,
                })
            }
        }
    }
    fn record(rng: &mut ChaCha20Rng, selector: u32) -> ResourceRecord {
        let owner = name(rng);
        let mut rec = ResourceRecord::new(owner.clone(), rng.next_u32(), rdata(rng, selector));
        match &mut rec.rdata {
            Rdata::Dnskey(k) => k.owner = owner,
            Rdata::Ds(d) => d.owner = owner,
            _ => {}
        }
        rec
    }

    let mut msg = DnsMessage {
        header: DnsHeader {
            txid: rng.next_u32() as u16,
            response: rng.next_u32() % 2 == 0,
            recursion_desired: rng.next_u32() % 2 == 0,
            authentic_data: rng.next_u32() % 2 == 0,
            checking_disabled: rng.next_u32() % 2 == 0,
            rcode: Rcode::from_code(rng.next_u32() as u8),
        },
        question: (rng.next_u32() % 4 != 0).then(|| Question {
            name: name(rng),
            rtype: [RecordType::A, RecordType::Ns, RecordType::Dnskey][(rng.next_u32() % 3) as usize],
        }),
        answers: Vec::new(),
        authority: Vec::new(),
        additional: Vec::new(),
        edns: None,
    };
    // Walk the selector so each record type appears throughout the corpus.
    for slot in 0..(rng.next_u32() % 3) {
        msg.answers.push(record(rng, index + slot));
    }
    for slot in 0..(rng.next_u32() % 3) {
        msg.authority.push(record(rng, index + slot + 1));
    }
    for slot in 0..(rng.next_u32() % 3) {
        msg.additional.push(record(rng, index + slot + 2));
    }
    if rng.next_u32() % 2 == 0 {
        let mut options = vec![EdnsOption::ds_absent()];
        if index % 2 == 0 {
            options.push(EdnsOption::bridge_available(rng.next_u32() as u16));
        }
        if index % 5 == 0 {
            let mut payload = vec![0u8; (rng.next_u32() % 12) as usize];
            rng.fill_bytes(&mut payload);
            options.push(EdnsOption {
                code: 65003 + (rng.next_u32() % 100) as u16,
                payload,
            });
        }
        msg.edns = Some(options);
    }
    msg
}

/// Criterion 6: decode(encode(m)) = m over a 10,000-message generated
/// corpus covering all record types and EDNS options.
#[test]
fn c6_codec_round_trip_corpus() {
    let mut rng = ChaCha20Rng::seed_from_u64(0xC6);
    let mut rtype_seen: BTreeMap<String, usize> = BTreeMap::new();
    for index in 0..10_000u32 {
        let msg = generated_message(&mut rng, index);
        for rec in msg
            .answers
            .iter()
            .chain(&msg.authority)
            .chain(&msg.additional)
        {
            *rtype_seen.entry(rec.rtype().to_string()).or_default() += 1;
        }
        let bytes = encode(&msg).unwrap_or_else(|e| panic!("message {index} encode: {e}"));
        let back = decode(&bytes).unwrap_or_else(|e| panic!("message {index} decode: {e}"));
        assert_eq!(back, msg, "message {index} diverged");
    }
    for rtype in ["A", "NS", "DNSKEY", "RRSIG", "DS"] {
        assert!(
            rtype_seen.get(rtype).copied().unwrap_or(0) > 100,
            "corpus underrepresents {rtype}: {rtype_seen:?}"
        );
    }
    println!("criterion 6 (codec round-trip, 10000 messages): PASS");
}

/// Criterion 7: every scenario in the corpus, run twice with the same
/// seed, produces byte-identical reports (transcripts and ledgers).
#[test]
fn c7_determinism_across_corpus() {
    let mut corpus: Vec<ScenarioFile> = Vec::new();
    let spec = spec_with_seed(21);
    for cell in spec.cells() {
        corpus.push(spec.cell_scenario(&cell));
    }
    // Adversarial variants over the bridged topology.
    let bridged = cell(true, true, true, false, true);
    let mut impostor = spec.cell_scenario(&bridged);
    impostor.adversary = Adversary::ImpostorServer {
        at: Ipv4Addr::new(203, 0, 113, 66),
    };
    corpus.push(impostor);
    let mut strip = spec.cell_scenario(&bridged);
    strip.adversary = Adversary::BridgeStrip { links: None };
    corpus.push(strip);
    let mut spoof = spec.cell_scenario(&cell(false, false, false, true, false));
    spoof.adversary = Adversary::OffPathSpoof {
        links: None,
        rate: 2,
        oracle_txid: false,
        forged_address: Ipv4Addr::new(203, 0, 113, 99),
    };
    corpus.push(spoof);
    let mut repeat = spec.cell_scenario(&cell(true, true, true, true, false));
    repeat.repeat = 3;
    corpus.push(repeat);

    for (index, scenario) in corpus.iter().enumerate() {
        let a = serde_json::to_vec(&run_scenario(scenario).unwrap()).unwrap();
        let b = serde_json::to_vec(&run_scenario(scenario).unwrap()).unwrap();
        assert_eq!(a, b, "scenario {index} not deterministic");
    }
    println!(
        "criterion 7 (determinism over {} scenarios): PASS",
        corpus.len()
    );
}

/// Criterion 8: across all permutations of each side's inbound handshake
/// sequence, only the honest order reaches Established.
#[test]
fn c8_handshake_ordering_is_uniquely_honest() {
    use itertools::Itertools;

    let server_ip = Ipv4Addr::new(192, 0, 2, 53);
    let ca = CaIdentity::from_seed("acceptance-ca", &[3u8; 32]);
    let secret = [9u8; 32];
    let cert = issue_cert(
        &ca,
        server_ip,
        &ServerIdentity::public_key_bytes(secret),
        1,
        (0, u64::MAX - 1),
    )
    .unwrap();
    let store = TrustStore::with_ca(&ca);
    let identity = ServerIdentity::new(secret, cert);

    // Record one honest run with fixed seeds.
    let (mut client, hello) = BridgeClient::start(server_ip, store.clone(), 1);
    let mut server = BridgeServer::new(identity.clone(), 2);
    let server_flight = server.respond(&hello, 10).unwrap();
    let client_flight = client.process_server_flight(&server_flight, 10).unwrap();
    let server_finish = server.finish(&client_flight, 10).unwrap();
    client.process_server_finish(&server_finish, 10).unwrap();
    assert_eq!(client.state(), SessionState::Established);

    // Client inbound: ServerHello, Certificate, Done, ChangeCipherSpec,
    // Finished. Replay every permutation into a fresh client.
    let client_inbound: Vec<HandshakeMessage> = server_flight
        .iter()
        .cloned()
        .chain(server_finish.iter().cloned())
        .collect();
    assert_eq!(client_inbound.len(), 5);
    let mut client_established = 0usize;
    let mut client_orders = 0usize;
    for perm in client_inbound.iter().cloned().permutations(5) {
        client_orders += 1;
        let (mut trial, _hello) = BridgeClient::start(server_ip, store.clone(), 1);
        let mut ok = true;
        for msg in &perm {
            if trial.handle(msg, 10).is_err() {
                ok = false;
                break;
            }
        }
        if ok && trial.state() == SessionState::Established {
            client_established += 1;
            assert_eq!(perm, client_inbound, "a reordered flight established");
        } else {
            assert_ne!(perm, client_inbound, "the honest order must establish");
            assert!(!trial.has_traffic_keys() || trial.state() == SessionState::Established);
        }
    }
    assert_eq!(client_orders, 120);
    assert_eq!(client_established, 1);

    // Server inbound: ClientHello, ClientKeyExchange, ChangeCipherSpec,
    // Finished.
    let server_inbound: Vec<HandshakeMessage> = std::iter::once(hello.clone())
        .chain(client_flight.iter().cloned())
        .collect();
    assert_eq!(server_inbound.len(), 4);
    let mut server_established = 0usize;
    let mut server_orders = 0usize;
    for perm in server_inbound.iter().cloned().permutations(4) {
        server_orders += 1;
        let mut trial = BridgeServer::new(identity.clone(), 2);
        let mut ok = true;
        for msg in &perm {
            if trial.handle(msg, 10).is_err() {
                ok = false;
                break;
            }
        }
        if ok && trial.state() == SessionState::Established {
            server_established += 1;
            assert_eq!(perm, server_inbound);
        }
    }
    assert_eq!(server_orders, 24);
    assert_eq!(server_established, 1);
    println!("criterion 8 (handshake ordering, 144 orderings, honest unique): PASS");
}

/// Criterion 9: an off-path spoofer granted the correct txid poisons an
/// unsigned island, but 1000+ forged responses against validated paths
/// are all rejected.
#[test]
fn c9_spoofing_demonstration() {
    let forged_address = Ipv4Addr::new(203, 0, 113, 99);

    // The vulnerability: an unsigned island accepts the forgery.
    let mut island = spec_with_seed(31).cell_scenario(&cell(false, false, false, true, false));
    island.adversary = Adversary::OffPathSpoof {
        links: None,
        rate: 1,
        oracle_txid: true,
        forged_address,
    };
    let report = run_scenario(&island).unwrap();
    assert_eq!(report.last().status, OutcomeStatus::Insecure);
    assert_eq!(report.last().answer, vec![forged_address]);

    // The protections: validated paths reject every forgery.
    let mut attempts = 0usize;
    let mut rejected = 0usize;
    let mut rng = ChaCha20Rng::seed_from_u64(0xC9);
    for trial in 0..25u32 {
        let seed = rng.next_u64();

        let mut secure = spec_with_seed(seed).cell_scenario(&cell(true, true, true, true, false));
        secure.adversary = Adversary::OffPathSpoof {
            links: None,
            rate: 10,
            oracle_txid: true,
            forged_address,
        };
        let report = run_scenario(&secure).unwrap();
        let outcome = report.last();
        assert_eq!(outcome.status, OutcomeStatus::Secure, "trial {trial}");
        assert_eq!(outcome.answer, vec![islandbridge::simnet::ANSWER_ADDRESS]);
        attempts += count_injected(&outcome.network_log);
        rejected += outcome
            .transcript
            .count(|e| matches!(e, Event::ForgeryRejected { .. }));

        // Bridged-secure path: the spoofer watches the validated links.
        let mut bridged = spec_with_seed(seed).cell_scenario(&cell(true, true, true, false, true));
        bridged.adversary = Adversary::OffPathSpoof {
            links: Some(vec![DomainName::root(), DomainName::parse("com").unwrap()]),
            rate: 10,
            oracle_txid: true,
            forged_address,
        };
        let report = run_scenario(&bridged).unwrap();
        let outcome = report.last();
        assert_eq!(outcome.status, OutcomeStatus::BridgedSecure, "trial {trial}");
        assert_eq!(outcome.answer, vec![islandbridge::simnet::ANSWER_ADDRESS]);
        attempts += count_injected(&outcome.network_log);
        rejected += outcome
            .transcript
            .count(|e| matches!(e, Event::ForgeryRejected { .. }));
    }
    assert!(attempts >= 1000, "only {attempts} forgeries injected");
    assert_eq!(rejected, attempts, "a forgery went unrejected");
    println!(
        "criterion 9 (spoofing: island poisoned, {attempts} forgeries vs validated paths all rejected): PASS"
    );
}

fn count_injected(log: &[NetEvent]) -> usize {
    log.iter()
        .filter(|e| matches!(e, NetEvent::ForgedResponseInjected { .. }))
        .count()
}
