//! The deployment matrix: every combination of signing flags, DS
//! publication and bridge availability over the standard three-level
//! hierarchy, with the expected outcome for each cell.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::scenario::{ResolverSection, ScenarioError, ScenarioFile, ZoneSection};
use super::Adversary;
use crate::resolver::OutcomeStatus;

pub const MATRIX_VERSION: u32 = 1;

pub const ROOT_SERVER: Ipv4Addr = Ipv4Addr::new(198, 41, 0, 4);
pub const TLD_SERVER: Ipv4Addr = Ipv4Addr::new(192, 5, 6, 30);
pub const AUTH_SERVER: Ipv4Addr = Ipv4Addr::new(192, 0, 2, 53);
pub const ANSWER_ADDRESS: Ipv4Addr = Ipv4Addr::new(192, 0, 2, 1);
pub const BRIDGE_PORT: u16 = 853;
pub const DEFAULT_QUESTION: &str = "www.example.com";

/// One coordinate in the deployment matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MatrixCell {
    pub root_signed: bool,
    pub tld_signed: bool,
    pub auth_signed: bool,
    pub tld_publishes_ds: bool,
    pub bridge: bool,
}

impl MatrixCell {
    /// Compact coordinate label, stable for reports and golden files.
    pub fn label(&self) -> String {
        let bit = |b: bool| u8::from(b);
        format!(
            "r{}t{}a{}d{}b{}",
            bit(self.root_signed),
            bit(self.tld_signed),
            bit(self.auth_signed),
            bit(self.tld_publishes_ds),
            bit(self.bridge)
        )
    }
}

/// A matrix run specification. Axes may be restricted; a missing axis means
/// both values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSpec {
    pub matrix_version: u32,
    pub seed: u64,
    #[serde(default)]
    pub question: Option<String>,
    #[serde(default)]
    pub root_signed: Option<Vec<bool>>,
    #[serde(default)]
    pub tld_signed: Option<Vec<bool>>,
    #[serde(default)]
    pub auth_signed: Option<Vec<bool>>,
    #[serde(default)]
    pub tld_publishes_ds: Option<Vec<bool>>,
    #[serde(default)]
    pub bridge: Option<Vec<bool>>,
    #[serde(default)]
    pub adversary: Adversary,
}

impl Default for MatrixSpec {
    fn default() -> Self {
        MatrixSpec {
            matrix_version: MATRIX_VERSION,
            seed: 1,
            question: None,
            root_signed: None,
            tld_signed: None,
            auth_signed: None,
            tld_publishes_ds: None,
            bridge: None,
            adversary: Adversary::None,
        }
    }
}

impl MatrixSpec {
    pub fn parse(json: &str) -> Result<MatrixSpec, ScenarioError> {
        let mut deserializer = serde_json::Deserializer::from_str(json);
        let spec: MatrixSpec =
            serde_path_to_error::deserialize(&mut deserializer).map_err(|err| {
                ScenarioError::Schema {
                    path: err.path().to_string(),
                    message: err.inner().to_string(),
                }
            })?;
        if spec.matrix_version != MATRIX_VERSION {
            return Err(ScenarioError::Version(spec.matrix_version));
        }
        Ok(spec)
    }

    /// Enumerates the cells, ordered by coordinates.
    pub fn cells(&self) -> Vec<MatrixCell> {
        let axis = |restriction: &Option<Vec<bool>>| -> Vec<bool> {
            restriction.clone().unwrap_or_else(|| vec![false, true])
        };
        let mut cells = Vec::new();
        for &root_signed in &axis(&self.root_signed) {
            for &tld_signed in &axis(&self.tld_signed) {
                for &auth_signed in &axis(&self.auth_signed) {
                    for &tld_publishes_ds in &axis(&self.tld_publishes_ds) {
                        for &bridge in &axis(&self.bridge) {
                            cells.push(MatrixCell {
                                root_signed,
                                tld_signed,
                                auth_signed,
                                tld_publishes_ds,
                                bridge,
                            });
                        }
                    }
                }
            }
        }
        cells.sort();
        cells.dedup();
        cells
    }

    /// Builds the scenario for one cell over the standard topology:
    /// root, one TLD (`com`) and one authoritative zone (`example.com`).
    pub fn cell_scenario(&self, cell: &MatrixCell) -> ScenarioFile {
        let question = self
            .question
            .clone()
            .unwrap_or_else(|| DEFAULT_QUESTION.to_string());
        let mut publish_ds = BTreeMap::new();
        publish_ds.insert("example.com".to_string(), cell.tld_publishes_ds);
        let mut records = BTreeMap::new();
        records.insert(question.clone(), ANSWER_ADDRESS);
        ScenarioFile {
            scenario_version: super::SCENARIO_VERSION,
            seed: self.seed,
            question,
            repeat: 1,
            resolver: ResolverSection::default(),
            zones: vec![
                ZoneSection {
                    name: ".".to_string(),
                    address: ROOT_SERVER,
                    signed: cell.root_signed,
                    publish_ds: BTreeMap::new(),
                    bridge_port: None,
                    records: BTreeMap::new(),
                    latency_ms: None,
                },
                ZoneSection {
                    name: "com".to_string(),
                    address: TLD_SERVER,
                    signed: cell.tld_signed,
                    publish_ds,
                    bridge_port: None,
                    records: BTreeMap::new(),
                    latency_ms: None,
                },
                ZoneSection {
                    name: "example.com".to_string(),
                    address: AUTH_SERVER,
                    signed: cell.auth_signed,
                    publish_ds: BTreeMap::new(),
                    bridge_port: cell.bridge.then_some(BRIDGE_PORT),
                    records,
                    latency_ms: None,
                },
            ],
            latency_ms: None,
            adversary: self.adversary.clone(),
        }
    }
}

/// The documented expected outcome for each adversary-free cell.
///
/// A complete chain (everything signed, DS published) validates regardless
/// of bridge availability: the DS path wins and the bridge is never even
/// advertised. Otherwise, without a bridge the resolver is left with an
/// unsigned answer. With one, the outcome depends on where the gap sits:
/// only the all-signed hierarchy whose sole defect is the unpublished DS
/// ends bridged-secure; any unsigned level caps the guarantee at
/// channel security.
pub fn expected_outcome(cell: &MatrixCell) -> OutcomeStatus {
    let full_chain =
        cell.root_signed && cell.tld_signed && cell.auth_signed && cell.tld_publishes_ds;
    if full_chain {
        return OutcomeStatus::Secure;
    }
    if !cell.bridge {
        return OutcomeStatus::Insecure;
    }
    if cell.root_signed && cell.tld_signed && cell.auth_signed && !cell.tld_publishes_ds {
        return OutcomeStatus::BridgedSecure;
    }
    OutcomeStatus::BridgedEncrypted
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_matrix_has_32_cells() {
        let spec = MatrixSpec::default();
        assert_eq!(spec.cells().len(), 32);
    }

    #[test]
    fn axis_restriction_shrinks_the_grid() {
        let spec = MatrixSpec {
            root_signed: Some(vec![true]),
            tld_signed: Some(vec![true]),
            auth_signed: Some(vec![true]),
            ..MatrixSpec::default()
        };
        assert_eq!(spec.cells().len(), 4);
    }

    #[test]
    fn expected_outcome_table_spot_checks() {
        let cell = |r, t, a, d, b| MatrixCell {
            root_signed: r,
            tld_signed: t,
            auth_signed: a,
            tld_publishes_ds: d,
            bridge: b,
        };
        assert_eq!(
            expected_outcome(&cell(true, true, true, true, false)),
            OutcomeStatus::Secure
        );
        assert_eq!(
            expected_outcome(&cell(true, true, true, true, true)),
            OutcomeStatus::Secure,
            "an intact DS path wins over an available bridge"
        );
        assert_eq!(
            expected_outcome(&cell(true, true, true, false, true)),
            OutcomeStatus::BridgedSecure
        );
        assert_eq!(
            expected_outcome(&cell(true, true, true, false, false)),
            OutcomeStatus::Insecure
        );
        assert_eq!(
            expected_outcome(&cell(true, false, true, true, true)),
            OutcomeStatus::BridgedEncrypted
        );
        assert_eq!(
            expected_outcome(&cell(false, true, true, true, true)),
            OutcomeStatus::BridgedEncrypted
        );
    }
}
