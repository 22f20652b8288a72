//! Scenario files: a JSON description of a zone hierarchy, resolver
//! configuration and adversary, plus the runner that executes it.
//!
//! All key material is derived from the scenario seed, so a scenario file
//! fully determines every byte of the run.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

use super::{Adversary, Conservation, NetEvent, RttLedger, SimNet};
use crate::bridge::ServerIdentity;
use crate::dnssec::{generate_zone_keys, KeyRole, TrustAnchor, ZoneKeys};
use crate::ipcert::{issue_cert, CaIdentity, IssueError, TrustStore};
use crate::nameserver::{
    BridgeConfig, ZoneArtifact, ZoneBuildError, ZoneConfig, ZoneConfigBuilder, ZoneMutation,
};
use crate::resolver::{Event, OutcomeStatus, ResolveError, Resolver, ResolverConfig, Transcript};
use crate::wire::{DomainName, RRset, Rdata, RecordType};

pub const SCENARIO_VERSION: u32 = 1;
/// Virtual epoch the simulated clock starts at (unix seconds).
pub const SCENARIO_EPOCH_S: u64 = 1_760_000_000;
/// Key and certificate validity around the epoch.
pub const VALIDITY_WINDOW: (u64, u64) =
    (SCENARIO_EPOCH_S - 86_400, SCENARIO_EPOCH_S + 30 * 86_400);

const BRIDGE_CA_NAME: &str = "bridge-ca";

fn default_true() -> bool {
    true
}

fn default_cache() -> usize {
    256
}

fn default_repeat() -> u32 {
    1
}

fn default_resolver_address() -> Ipv4Addr {
    Ipv4Addr::new(198, 51, 100, 10)
}

fn default_latency() -> u64 {
    5
}

/// Resolver settings within a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolverSection {
    #[serde(default = "default_resolver_address")]
    pub address: Ipv4Addr,
    #[serde(default = "default_true")]
    pub bridging_enabled: bool,
    #[serde(default = "default_cache")]
    pub cache_capacity: usize,
    #[serde(default = "default_true")]
    pub accept_unvalidated: bool,
}

impl Default for ResolverSection {
    fn default() -> Self {
        ResolverSection {
            address: default_resolver_address(),
            bridging_enabled: true,
            cache_capacity: default_cache(),
            accept_unvalidated: true,
        }
    }
}

/// One zone and the nameserver that hosts it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneSection {
    /// Zone name; `"."` (or `""`) is the root.
    pub name: String,
    pub address: Ipv4Addr,
    #[serde(default)]
    pub signed: bool,
    /// Per-child DS publication policy; children not listed default to
    /// publishing.
    #[serde(default)]
    pub publish_ds: BTreeMap<String, bool>,
    /// A bridge endpoint on this server, if any.
    #[serde(default)]
    pub bridge_port: Option<u16>,
    /// Authoritative address records: owner name to address.
    #[serde(default)]
    pub records: BTreeMap<String, Ipv4Addr>,
    /// One-way link latency to the resolver in virtual milliseconds.
    #[serde(default)]
    pub latency_ms: Option<u64>,
}

/// A complete scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub scenario_version: u32,
    pub seed: u64,
    pub question: String,
    /// Resolve the question this many times in sequence (cache behavior).
    #[serde(default = "default_repeat")]
    pub repeat: u32,
    #[serde(default)]
    pub resolver: ResolverSection,
    pub zones: Vec<ZoneSection>,
    #[serde(default)]
    pub latency_ms: Option<u64>,
    #[serde(default)]
    pub adversary: Adversary,
}

impl ScenarioFile {
    /// Parses and version-checks a scenario document, reporting the JSON
    /// path of whatever field failed.
    pub fn parse(json: &str) -> Result<ScenarioFile, ScenarioError> {
        let mut deserializer = serde_json::Deserializer::from_str(json);
        let file: ScenarioFile =
            serde_path_to_error::deserialize(&mut deserializer).map_err(|err| {
                ScenarioError::Schema {
                    path: err.path().to_string(),
                    message: err.inner().to_string(),
                }
            })?;
        if file.scenario_version != SCENARIO_VERSION {
            return Err(ScenarioError::Version(file.scenario_version));
        }
        Ok(file)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("unsupported scenario_version {0} (expected {SCENARIO_VERSION})")]
    Version(u32),
    #[error("topology error: {0}")]
    Topology(String),
    #[error("zone build error: {0}")]
    ZoneBuild(#[from] ZoneBuildError),
    #[error("certificate issuance error: {0}")]
    Cert(#[from] IssueError),
    #[error("resolution error: {0}")]
    Resolution(#[from] ResolveError),
}

/// Everything one resolution produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeReport {
    pub status: OutcomeStatus,
    pub status_text: String,
    pub answer: Vec<Ipv4Addr>,
    pub rtt_count: u32,
    pub extra_rtt: u32,
    pub ledger: RttLedger,
    pub transcript: Transcript,
    pub network_log: Vec<NetEvent>,
    pub conservation: Conservation,
}

/// The runner's full output: one report per resolution, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario_version: u32,
    pub seed: u64,
    pub question: String,
    pub outcomes: Vec<OutcomeReport>,
}

impl RunReport {
    pub fn last(&self) -> &OutcomeReport {
        self.outcomes.last().expect("at least one resolution runs")
    }
}

fn derive_seed(seed: u64, label: &str) -> [u8; 32] {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(&seed.to_be_bytes())
        .expect("hmac accepts any key length");
    mac.update(label.as_bytes());
    mac.finalize().into_bytes().into()
}

fn derive_seed_u64(seed: u64, label: &str) -> u64 {
    let bytes = derive_seed(seed, label);
    u64::from_be_bytes(bytes[..8].try_into().expect("eight bytes"))
}

struct ParsedZone {
    name: DomainName,
    section: ZoneSection,
    keys: Option<ZoneKeys>,
}

fn parse_zones(file: &ScenarioFile) -> Result<Vec<ParsedZone>, ScenarioError> {
    let mut zones: Vec<ParsedZone> = Vec::new();
    let mut names = BTreeSet::new();
    let mut addresses = BTreeSet::new();
    for section in &file.zones {
        let name = DomainName::parse(&section.name).map_err(|e| {
            ScenarioError::Topology(format!("bad zone name {:?}: {e}", section.name))
        })?;
        if !names.insert(name.clone()) {
            return Err(ScenarioError::Topology(format!("duplicate zone {name}")));
        }
        if !addresses.insert(section.address) {
            return Err(ScenarioError::Topology(format!(
                "duplicate server address {}",
                section.address
            )));
        }
        let keys = section.signed.then(|| {
            generate_zone_keys(
                name.clone(),
                &derive_seed(file.seed, &format!("zone-keys:{name}")),
            )
        });
        zones.push(ParsedZone {
            name,
            section: section.clone(),
            keys,
        });
    }
    if !zones.iter().any(|z| z.name.is_root()) {
        return Err(ScenarioError::Topology("no root zone".into()));
    }
    Ok(zones)
}

/// Builds every zone's served configuration (signed and frozen), plus its
/// link latency. Delegations are derived from the hierarchy: each zone's
/// parent is its longest proper ancestor in the file.
fn build_zone_configs(file: &ScenarioFile) -> Result<Vec<(ZoneConfig, u64)>, ScenarioError> {
    let zones = parse_zones(file)?;

    let mut children_of: BTreeMap<DomainName, Vec<usize>> = BTreeMap::new();
    for (i, zone) in zones.iter().enumerate() {
        if zone.name.is_root() {
            continue;
        }
        let parent = zones
            .iter()
            .filter(|p| zone.name.is_subdomain_of(&p.name) && p.name != zone.name)
            .max_by_key(|p| p.name.label_count())
            .map(|p| p.name.clone())
            .ok_or_else(|| ScenarioError::Topology(format!("zone {} has no ancestor", zone.name)))?;
        children_of.entry(parent).or_default().push(i);
    }

    let ca = CaIdentity::from_seed(BRIDGE_CA_NAME, &derive_seed(file.seed, "bridge-ca"));
    let default_latency = file.latency_ms.unwrap_or_else(default_latency);

    let mut configs = Vec::with_capacity(zones.len());
    let mut serial: u64 = 1;
    for zone in &zones {
        let mut builder =
            ZoneConfigBuilder::new(zone.name.clone(), zone.section.address).validity(VALIDITY_WINDOW);
        if let Some(keys) = &zone.keys {
            builder = builder.keys(keys.clone());
        }
        if let Some(port) = zone.section.bridge_port {
            let secret = derive_seed(file.seed, &format!("bridge-identity:{}", zone.name));
            let cert = issue_cert(
                &ca,
                zone.section.address,
                &ServerIdentity::public_key_bytes(secret),
                serial,
                VALIDITY_WINDOW,
            )?;
            serial += 1;
            builder = builder.bridge(BridgeConfig {
                port,
                identity: ServerIdentity::new(secret, cert),
            });
        }
        for (owner, addr) in &zone.section.records {
            let owner = DomainName::parse(owner)
                .map_err(|e| ScenarioError::Topology(format!("bad record owner {owner:?}: {e}")))?;
            builder = builder.a_record(owner, *addr);
        }
        for &child_index in children_of
            .get(&zone.name)
            .map(Vec::as_slice)
            .unwrap_or(&[])
        {
            let child = &zones[child_index];
            let ns_name = child
                .name
                .prepend(b"ns")
                .map_err(|e| ScenarioError::Topology(format!("ns name too long: {e}")))?;
            let publish = zone
                .section
                .publish_ds
                .iter()
                .find(|(k, _)| DomainName::parse(k).map(|n| n == child.name).unwrap_or(false))
                .map(|(_, v)| *v)
                .unwrap_or(true);
            builder = builder.delegate(
                child.name.clone(),
                ns_name,
                child.section.address,
                child.keys.as_ref().map(|k| k.dnskey(KeyRole::Ksk)),
                publish,
            );
        }
        let config = builder.build()?;
        let latency = zone.section.latency_ms.unwrap_or(default_latency);
        configs.push((config, latency));
    }
    Ok(configs)
}

/// Lists every signed byte position an adversary could corrupt across the
/// scenario's zones, for exhaustive tamper sweeps.
pub fn scenario_signed_artifacts(
    file: &ScenarioFile,
) -> Result<Vec<(DomainName, ZoneArtifact, usize)>, ScenarioError> {
    let zones = build_zone_configs(file)?;
    let mut out = Vec::new();
    for (config, _) in zones {
        for (artifact, len) in config.signed_artifacts() {
            out.push((config.zone.clone(), artifact, len));
        }
    }
    Ok(out)
}

/// Builds and runs a scenario end to end.
pub fn run_scenario(file: &ScenarioFile) -> Result<RunReport, ScenarioError> {
    run_scenario_with_mutations(file, &[])
}

/// Runs a scenario with zone-level mutations applied after signing, so the
/// served data no longer matches its signatures.
pub fn run_scenario_with_mutations(
    file: &ScenarioFile,
    mutations: &[(DomainName, ZoneMutation)],
) -> Result<RunReport, ScenarioError> {
    if file.scenario_version != SCENARIO_VERSION {
        return Err(ScenarioError::Version(file.scenario_version));
    }
    let question = DomainName::parse(&file.question)
        .map_err(|e| ScenarioError::Topology(format!("bad question name: {e}")))?;

    let zone_configs = build_zone_configs(file)?;
    let any_bridge = zone_configs.iter().any(|(c, _)| c.bridge.is_some());
    let root = zone_configs
        .iter()
        .map(|(c, _)| c)
        .find(|c| c.zone.is_root())
        .expect("checked during build");
    let root_server = root.address;
    let trust_anchors: Vec<TrustAnchor> = if root.is_signed() {
        let keys = generate_zone_keys(
            DomainName::root(),
            &derive_seed(file.seed, &format!("zone-keys:{}", DomainName::root())),
        );
        vec![TrustAnchor::for_root_keys(&keys)]
    } else {
        Vec::new()
    };

    let ca = CaIdentity::from_seed(BRIDGE_CA_NAME, &derive_seed(file.seed, "bridge-ca"));
    let default_latency = file.latency_ms.unwrap_or_else(default_latency);

    let mut sim = SimNet::new(SCENARIO_EPOCH_S, derive_seed_u64(file.seed, "simnet-rng"));
    for (mut config, latency) in zone_configs {
        for (zone, mutation) in mutations {
            if zone == &config.zone {
                config = config.tamper_hook(mutation);
            }
        }
        sim.add_server(config, latency);
    }

    // An impostor server gets a certificate from the same trusted CA, bound
    // to its own address; only the address check can tell it apart.
    if let Adversary::ImpostorServer { at } = &file.adversary {
        let victim = file
            .zones
            .iter()
            .filter(|z| z.bridge_port.is_some())
            .max_by_key(|z| DomainName::parse(&z.name).map(|n| n.label_count()).unwrap_or(0))
            .ok_or_else(|| {
                ScenarioError::Topology("impostor_server requires a bridged zone".into())
            })?;
        if file.zones.iter().any(|z| z.address == *at) {
            return Err(ScenarioError::Topology(format!(
                "impostor address {at} collides with a server"
            )));
        }
        let victim_zone = DomainName::parse(&victim.name)
            .map_err(|e| ScenarioError::Topology(format!("bad zone name: {e}")))?;
        let secret = derive_seed(file.seed, &format!("impostor:{at}"));
        let cert = issue_cert(
            &ca,
            *at,
            &ServerIdentity::public_key_bytes(secret),
            u64::MAX,
            VALIDITY_WINDOW,
        )?;
        let config = ZoneConfigBuilder::new(victim_zone, *at)
            .validity(VALIDITY_WINDOW)
            .bridge(BridgeConfig {
                port: victim.bridge_port.expect("victim is bridged"),
                identity: ServerIdentity::new(secret, cert),
            })
            .a_record(question.clone(), *at)
            .build()?;
        sim.add_server(config, default_latency);
    }

    sim.set_adversary(file.adversary.clone());

    let cfg = ResolverConfig {
        trust_anchors,
        trust_store: TrustStore::with_ca(&ca),
        bridging_enabled: file.resolver.bridging_enabled,
        cache_capacity: file.resolver.cache_capacity,
        root_server,
        accept_unvalidated: file.resolver.accept_unvalidated,
    };
    let mut resolver = Resolver::new(cfg, derive_seed_u64(file.seed, "resolver-rng"));

    let mut outcomes = Vec::new();
    for _ in 0..file.repeat.max(1) {
        let outcome = resolver.resolve(&question, RecordType::A, &mut sim)?;
        let (ledger, network_log, conservation) = sim.take_run_artifacts();
        let mut transcript = outcome.transcript;
        // The resolver cannot distinguish a stripped advertisement from an
        // absent one; the harness, which knows a zone was bridge-capable,
        // records the suspected downgrade for analysis.
        let stripped = network_log
            .iter()
            .any(|e| matches!(e, NetEvent::BridgeAdvertStripped { .. }));
        if stripped && any_bridge && outcome.status == OutcomeStatus::Insecure {
            transcript.push(Event::DowngradeSuspected);
        }
        let answer: Vec<Ipv4Addr> = outcome
            .answer
            .as_ref()
            .map(rrset_addresses)
            .unwrap_or_default();
        debug_assert_eq!(ledger.len(), outcome.rtt_count as usize);
        outcomes.push(OutcomeReport {
            status_text: outcome.status.to_string(),
            status: outcome.status,
            answer,
            rtt_count: outcome.rtt_count,
            extra_rtt: ledger.extra_rtt(),
            ledger,
            transcript,
            network_log,
            conservation,
        });
    }

    Ok(RunReport {
        scenario_version: file.scenario_version,
        seed: file.seed,
        question: file.question.clone(),
        outcomes,
    })
}

fn rrset_addresses(rrset: &RRset) -> Vec<Ipv4Addr> {
    rrset
        .rdatas
        .iter()
        .filter_map(|r| match r {
            Rdata::A(addr) => Some(*addr),
            _ => None,
        })
        .collect()
}
