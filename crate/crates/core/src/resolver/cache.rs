//! The resolver's positive answer cache.
//!
//! Entries are tagged with the security status of the resolution that
//! produced them. Validated entries (Secure, BridgedSecure) are served to
//! everyone; unvalidated ones (Insecure, BridgedEncrypted) only to callers
//! that opted into non-validated data. Bogus and aborted resolutions are
//! never cached.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::wire::{DomainName, RRset, RecordType};

use super::OutcomeStatus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub name: DomainName,
    pub rtype: RecordType,
    pub rrset: RRset,
    pub status: OutcomeStatus,
    pub inserted_at: u64,
    pub ttl: u32,
}

impl CacheEntry {
    fn expired(&self, now: u64) -> bool {
        now > self.inserted_at + self.ttl as u64
    }
}

type Key = (DomainName, RecordType);

/// Fixed-capacity cache with insertion-order eviction.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    capacity: usize,
    entries: BTreeMap<Key, CacheEntry>,
    order: VecDeque<Key>,
}

impl Cache {
    pub fn new(capacity: usize) -> Self {
        Cache {
            capacity,
            entries: BTreeMap::new(),
            order: VecDeque::new(),
        }
    }

    /// Returns a usable entry: unexpired, and unvalidated only when the
    /// caller accepts non-validated data.
    pub fn lookup(
        &self,
        name: &DomainName,
        rtype: RecordType,
        now: u64,
        accept_unvalidated: bool,
    ) -> Option<&CacheEntry> {
        let key = (name.canonical(), rtype);
        let entry = self.entries.get(&key)?;
        if entry.expired(now) {
            return None;
        }
        match entry.status {
            OutcomeStatus::Secure | OutcomeStatus::BridgedSecure => Some(entry),
            OutcomeStatus::Insecure | OutcomeStatus::BridgedEncrypted => {
                accept_unvalidated.then_some(entry)
            }
            _ => None,
        }
    }

    /// Stores an entry unless its status forbids caching.
    pub fn insert(&mut self, entry: CacheEntry) {
        if self.capacity == 0 {
            return;
        }
        match entry.status {
            OutcomeStatus::Secure
            | OutcomeStatus::BridgedSecure
            | OutcomeStatus::Insecure
            | OutcomeStatus::BridgedEncrypted => {}
            // Bogus/aborted data never enters the cache.
            _ => return,
        }
        let key = (entry.name.canonical(), entry.rtype);
        if !self.entries.contains_key(&key) {
            if self.order.len() == self.capacity {
                if let Some(oldest) = self.order.pop_front() {
                    self.entries.remove(&oldest);
                }
            }
            self.order.push_back(key.clone());
        }
        self.entries.insert(key, entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::Rdata;
    use std::net::Ipv4Addr;

    fn name(s: &str) -> DomainName {
        DomainName::parse(s).unwrap()
    }

    fn entry(owner: &str, status: OutcomeStatus, inserted_at: u64, ttl: u32) -> CacheEntry {
        let owner = name(owner);
        CacheEntry {
            name: owner.clone(),
            rtype: RecordType::A,
            rrset: RRset::new(
                owner,
                RecordType::A,
                ttl,
                vec![Rdata::A(Ipv4Addr::new(192, 0, 2, 1))],
            ),
            status,
            inserted_at,
            ttl,
        }
    }

    #[test]
    fn hit_before_expiry_miss_after() {
        let mut cache = Cache::new(8);
        cache.insert(entry("www.example.com", OutcomeStatus::Secure, 100, 60));
        assert!(cache
            .lookup(&name("www.example.com"), RecordType::A, 130, false)
            .is_some());
        // Usable through the full TTL, stale one second later.
        assert!(cache
            .lookup(&name("www.example.com"), RecordType::A, 160, false)
            .is_some());
        assert!(cache
            .lookup(&name("www.example.com"), RecordType::A, 161, false)
            .is_none());
    }

    #[test]
    fn lookup_is_case_insensitive() {
        let mut cache = Cache::new(8);
        cache.insert(entry("www.example.com", OutcomeStatus::Secure, 0, 60));
        assert!(cache
            .lookup(&name("WWW.EXAMPLE.COM"), RecordType::A, 10, false)
            .is_some());
    }

    #[test]
    fn unvalidated_entries_gated_by_policy() {
        let mut cache = Cache::new(8);
        cache.insert(entry("a.example.com", OutcomeStatus::Insecure, 0, 60));
        cache.insert(entry("b.example.com", OutcomeStatus::BridgedEncrypted, 0, 60));
        for owner in ["a.example.com", "b.example.com"] {
            assert!(cache.lookup(&name(owner), RecordType::A, 1, false).is_none());
            assert!(cache.lookup(&name(owner), RecordType::A, 1, true).is_some());
        }
    }

    #[test]
    fn bogus_and_aborted_never_cached() {
        use crate::bridge::AbortReason;
        use crate::ipcert::RejectReason;
        use crate::resolver::ValidationFailure;
        let mut cache = Cache::new(8);
        cache.insert(entry(
            "x.example.com",
            OutcomeStatus::Bogus {
                reason: ValidationFailure::DsMismatch,
            },
            0,
            60,
        ));
        cache.insert(entry(
            "y.example.com",
            OutcomeStatus::Aborted {
                reason: AbortReason::CertRejected(RejectReason::IpMismatch),
            },
            0,
            60,
        ));
        assert!(cache.is_empty());
    }

    #[test]
    fn capacity_evicts_oldest() {
        let mut cache = Cache::new(2);
        cache.insert(entry("a.example.com", OutcomeStatus::Secure, 0, 600));
        cache.insert(entry("b.example.com", OutcomeStatus::Secure, 1, 600));
        cache.insert(entry("c.example.com", OutcomeStatus::Secure, 2, 600));
        assert_eq!(cache.len(), 2);
        assert!(cache.lookup(&name("a.example.com"), RecordType::A, 3, false).is_none());
        assert!(cache.lookup(&name("c.example.com"), RecordType::A, 3, false).is_some());
    }
}
