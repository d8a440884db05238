//! TTL-bounded record storage. Each key holds one version per publisher.

use std::collections::BTreeMap;

use crate::id::{Key, NodeId};
use crate::protocol::ValueRecord;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredRecord {
    pub key: Key,
    pub value: Vec<u8>,
    pub publisher: NodeId,
    pub stored_at: u64,
    pub expires_at: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Storage {
    records: BTreeMap<Key, BTreeMap<NodeId, StoredRecord>>,
}

impl Storage {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of stored versions, expired ones included until purged.
    pub fn len(&self) -> usize {
        self.records.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn put(&mut self, key: Key, publisher: NodeId, value: Vec<u8>, ttl_ms: u64, now: u64) {
        self.records.entry(key).or_default().insert(
            publisher,
            StoredRecord {
                key,
                value,
                publisher,
                stored_at: now,
                expires_at: now.saturating_add(ttl_ms),
            },
        );
    }

    /// Unexpired versions of `key`, with remaining lifetime in whole seconds.
    /// Versions with less than a second left are treated as expired so that
    /// copies made from a response never outlive the original.
    pub fn get(&mut self, key: &Key, now: u64) -> Vec<ValueRecord> {
        let Some(versions) = self.records.get_mut(key) else {
            return Vec::new();
        };
        versions.retain(|_, r| r.expires_at > now);
        let out: Vec<_> = versions
            .values()
            .filter_map(|r| {
                let ttl = (r.expires_at - now) / 1000;
                (ttl > 0).then(|| ValueRecord {
                    publisher: r.publisher,
                    value: r.value.clone(),
                    ttl,
                })
            })
            .collect();
        if versions.is_empty() {
            self.records.remove(key);
        }
        out
    }

    pub fn versions(&self, key: &Key) -> impl Iterator<Item = &StoredRecord> {
        self.records.get(key).into_iter().flat_map(BTreeMap::values)
    }

    pub fn purge(&mut self, now: u64) {
        self.records.retain(|_, versions| {
            versions.retain(|_, r| r.expires_at > now);
            !versions.is_empty()
        });
    }

    pub fn next_expiry(&self) -> Option<u64> {
        self.records
            .values()
            .flat_map(BTreeMap::values)
            .map(|r| r.expires_at)
            .min()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn expiry_and_versions() {
        let mut s = Storage::new();
        let key = NodeId::from_name("k");
        let a = NodeId::from_name("a");
        let b = NodeId::from_name("b");
        s.put(key, a, b"one".to_vec(), 60_000, 0);
        s.put(key, b, b"two".to_vec(), 10_000, 0);
        assert_eq!(s.get(&key, 9_000).len(), 2);
        let left = s.get(&key, 10_001);
        assert_eq!(left.len(), 1);
        assert_eq!(left[0].value, b"one");
        assert_eq!(left[0].ttl, 49);
        assert!(s.get(&key, 60_000).is_empty());
        assert!(s.is_empty());
    }

    #[test]
    fn same_publisher_overwrites() {
        let mut s = Storage::new();
        let key = NodeId::from_name("k");
        let a = NodeId::from_name("a");
        s.put(key, a, b"old".to_vec(), 60_000, 0);
        s.put(key, a, b"new".to_vec(), 60_000, 5);
        let got = s.get(&key, 6);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].value, b"new");
    }

    proptest! {
        #[test]
        fn never_serves_expired(ops in proptest::collection::vec((0u8..3, 0u64..5, 1u64..120_000, 0u64..40_000), 1..100)) {
            let mut s = Storage::new();
            let mut now = 0u64;
            let mut expiry: BTreeMap<(u64, u64), u64> = BTreeMap::new();
            for (op, who, ttl, dt) in ops {
                now += dt;
                let key = NodeId::from_u128(who as u128 % 2);
                let publisher = NodeId::from_u128(100 + who as u128);
                match op {
                    0 => {
                        s.put(key, publisher, vec![1], ttl, now);
                        expiry.insert((who % 2, who), now + ttl);
                    }
                    1 => s.purge(now),
                    _ => {
                        for r in s.get(&key, now) {
                            let writer = r.publisher.as_bytes()[19] as u64 - 100;
                            let exp = expiry[&(who % 2, writer)];
                            prop_assert!(exp > now);
                            prop_assert!(now + r.ttl * 1000 <= exp);
                        }
                    }
                }
            }
        }
    }
}
