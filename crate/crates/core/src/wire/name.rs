//! Domain names as ordered label sequences.
//!
//! Names are stored with their original case but compare, hash and order
//! case-insensitively. The root name is the empty label sequence.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::WireError;

/// Maximum length of a single label in bytes.
pub const MAX_LABEL_LEN: usize = 63;
/// Maximum length of a name on the wire (labels, length octets, root byte).
pub const MAX_NAME_WIRE_LEN: usize = 255;

/// A domain name: a sequence of labels, most-specific first, without the
/// implicit empty root label.
#[derive(Debug, Clone)]
pub struct DomainName {
    labels: Vec<Vec<u8>>,
}

impl DomainName {
    /// The root name (zero labels).
    pub fn root() -> Self {
        DomainName { labels: Vec::new() }
    }

    /// Builds a name from raw labels, checking label and total-length limits.
    pub fn from_labels(labels: Vec<Vec<u8>>) -> Result<Self, WireError> {
        let mut wire_len = 1; // root terminator
        for label in &labels {
            if label.is_empty() || label.len() > MAX_LABEL_LEN {
                return Err(WireError::MalformedLabel(super::Section::Question));
            }
            wire_len += 1 + label.len();
        }
        if wire_len > MAX_NAME_WIRE_LEN {
            return Err(WireError::NameTooLong);
        }
        Ok(DomainName { labels })
    }

    /// Parses dotted text form. `""` and `"."` both mean the root; a single
    /// trailing dot is accepted and ignored.
    pub fn parse(text: &str) -> Result<Self, WireError> {
        let trimmed = text.strip_suffix('.').unwrap_or(text);
        if trimmed.is_empty() {
            return Ok(Self::root());
        }
        let labels = trimmed
            .split('.')
            .map(|l| l.as_bytes().to_vec())
            .collect::<Vec<_>>();
        Self::from_labels(labels)
    }

    pub fn labels(&self) -> &[Vec<u8>] {
        &self.labels
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    pub fn is_root(&self) -> bool {
        self.labels.is_empty()
    }

    /// Length of the uncompressed wire encoding.
    pub fn wire_len(&self) -> usize {
        1 + self.labels.iter().map(|l| 1 + l.len()).sum::<usize>()
    }

    /// Uncompressed wire form, case preserved.
    pub fn to_wire(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        for label in &self.labels {
            out.push(label.len() as u8);
            out.extend_from_slice(label);
        }
        out.push(0);
        out
    }

    /// Uncompressed wire form with ASCII letters lowercased. This is the
    /// form hashed and signed; it is idempotent under further lowercasing.
    pub fn canonical_wire(&self) -> Vec<u8> {
        let mut out = self.to_wire();
        for b in &mut out {
            b.make_ascii_lowercase();
        }
        // Length octets are < 64 and never alphabetic, so lowercasing the
        // whole buffer only touches label bytes.
        out
    }

    /// The lowercase form as a value.
    pub fn canonical(&self) -> DomainName {
        DomainName {
            labels: self
                .labels
                .iter()
                .map(|l| l.to_ascii_lowercase())
                .collect(),
        }
    }

    /// True if `self` equals `other` or sits below it in the tree.
    pub fn is_subdomain_of(&self, other: &DomainName) -> bool {
        if other.labels.len() > self.labels.len() {
            return false;
        }
        let offset = self.labels.len() - other.labels.len();
        self.labels[offset..]
            .iter()
            .zip(&other.labels)
            .all(|(a, b)| a.eq_ignore_ascii_case(b))
    }

    /// Name with the leftmost label removed; `None` for the root.
    pub fn parent(&self) -> Option<DomainName> {
        if self.labels.is_empty() {
            None
        } else {
            Some(DomainName {
                labels: self.labels[1..].to_vec(),
            })
        }
    }

    /// Prepends a label, e.g. `"ns"` onto `example.com`.
    pub fn prepend(&self, label: &[u8]) -> Result<DomainName, WireError> {
        let mut labels = Vec::with_capacity(self.labels.len() + 1);
        labels.push(label.to_vec());
        labels.extend(self.labels.iter().cloned());
        Self::from_labels(labels)
    }
}

impl PartialEq for DomainName {
    fn eq(&self, other: &Self) -> bool {
        self.labels.len() == other.labels.len()
            && self
                .labels
                .iter()
                .zip(&other.labels)
                .all(|(a, b)| a.eq_ignore_ascii_case(b))
    }
}

impl Eq for DomainName {}

impl Hash for DomainName {
    fn hash<H: Hasher>(&self, state: &mut H) {
        for label in &self.labels {
            for b in label {
                state.write_u8(b.to_ascii_lowercase());
            }
            state.write_u8(0);
        }
    }
}

impl Ord for DomainName {
    fn cmp(&self, other: &Self) -> Ordering {
        self.canonical_wire().cmp(&other.canonical_wire())
    }
}

impl PartialOrd for DomainName {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for DomainName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.labels.is_empty() {
            return write!(f, ".");
        }
        for label in &self.labels {
            for &b in label {
                if b.is_ascii_graphic() && b != b'.' && b != b'\\' {
                    write!(f, "{}", b as char)?;
                } else {
                    write!(f, "\\{:03}", b)?;
                }
            }
            write!(f, ".")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for DomainName {
    type Err = WireError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for DomainName {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DomainName {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        DomainName::parse(&text).map_err(D::Error::custom)
    }
}
