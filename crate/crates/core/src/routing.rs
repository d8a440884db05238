//! k-bucket routing table.
//!
//! A flat array of 160 buckets: a contact lives in bucket `i` exactly when
//! `2^i <= distance(owner, contact) < 2^(i+1)`. Each bucket is ordered by
//! recency, least-recently-seen at the head. A full bucket never admits a
//! newcomer on its own; the caller must ping the head and report back via
//! [`RoutingTable::resolve_eviction`], so live long-lived contacts win.

use std::collections::VecDeque;
use std::fmt;
use std::net::SocketAddr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::id::{NodeId, ID_BITS};

/// Default bucket capacity.
pub const DEFAULT_K: usize = 20;

/// Identity plus transport endpoint of a remote node.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Contact {
    pub id: NodeId,
    pub addr: SocketAddr,
}

impl Contact {
    pub fn new(id: NodeId, addr: SocketAddr) -> Self {
        Contact { id, addr }
    }
}

impl fmt::Debug for Contact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}@{}", self.id, self.addr)
    }
}

/// A contact together with its liveness bookkeeping. Times are milliseconds
/// on the owning node's clock.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketEntry {
    pub contact: Contact,
    pub first_seen: u64,
    pub last_seen: u64,
    /// Set when an RPC to this contact timed out. Stale entries are kept until
    /// an eviction ping confirms they are gone, but are not handed out by
    /// [`RoutingTable::closest`].
    pub stale: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RoutingError {
    #[error("a node never routes to its own identifier")]
    OwnId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UpdateOutcome {
    Inserted,
    Refreshed,
    /// The bucket is full; the table is unchanged. Ping `eldest`, then call
    /// [`RoutingTable::resolve_eviction`].
    BucketFullPingEldest {
        bucket: usize,
        eldest: Contact,
    },
}

#[derive(Debug, Clone)]
pub struct KBucket {
    entries: VecDeque<BucketEntry>,
    capacity: usize,
    /// Last time a lookup targeted this bucket's range.
    last_activity: u64,
}

impl KBucket {
    fn new(capacity: usize, now: u64) -> Self {
        KBucket {
            entries: VecDeque::with_capacity(capacity),
            capacity,
            last_activity: now,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Head first: least-recently-seen to most-recently-seen.
    pub fn entries(&self) -> impl Iterator<Item = &BucketEntry> {
        self.entries.iter()
    }

    pub fn last_activity(&self) -> u64 {
        self.last_activity
    }

    fn position(&self, id: &NodeId) -> Option<usize> {
        self.entries.iter().position(|e| e.contact.id == *id)
    }
}

/// Index of the bucket `other` belongs to in `owner`'s table: the position of
/// the most significant set bit of their XOR distance.
pub fn bucket_index(owner: &NodeId, other: &NodeId) -> Result<usize, RoutingError> {
    owner.distance(other).highest_bit().ok_or(RoutingError::OwnId)
}

#[derive(Debug, Clone)]
pub struct RoutingTable {
    owner: NodeId,
    buckets: Vec<KBucket>,
}

impl RoutingTable {
    pub fn new(owner: NodeId, k: usize) -> Self {
        Self::with_clock(owner, k, 0)
    }

    pub fn with_clock(owner: NodeId, k: usize, now: u64) -> Self {
        assert!(k >= 1, "bucket capacity must be at least 1");
        RoutingTable {
            owner,
            buckets: (0..ID_BITS).map(|_| KBucket::new(k, now)).collect(),
        }
    }

    pub fn owner(&self) -> &NodeId {
        &self.owner
    }

    pub fn k(&self) -> usize {
        self.buckets[0].capacity
    }

    pub fn bucket(&self, index: usize) -> &KBucket {
        &self.buckets[index]
    }

    pub fn buckets(&self) -> &[KBucket] {
        &self.buckets
    }

    pub fn len(&self) -> usize {
        self.buckets.iter().map(KBucket::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.iter().all(KBucket::is_empty)
    }

    pub fn occupied_buckets(&self) -> usize {
        self.buckets.iter().filter(|b| !b.is_empty()).count()
    }

    /// The smallest bucket index holding any contact.
    pub fn lowest_occupied(&self) -> Option<usize> {
        self.buckets.iter().position(|b| !b.is_empty())
    }

    pub fn entries(&self) -> impl Iterator<Item = &BucketEntry> {
        self.buckets.iter().flat_map(KBucket::entries)
    }

    pub fn contacts(&self) -> impl Iterator<Item = Contact> + '_ {
        self.entries().map(|e| e.contact)
    }

    pub fn get(&self, id: &NodeId) -> Option<&BucketEntry> {
        let b = bucket_index(&self.owner, id).ok()?;
        let bucket = &self.buckets[b];
        bucket.position(id).map(|p| &bucket.entries[p])
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.get(id).is_some()
    }

    /// Records that `contact` was just heard from.
    pub fn update(&mut self, contact: Contact, now: u64) -> Result<UpdateOutcome, RoutingError> {
        let b = bucket_index(&self.owner, &contact.id)?;
        let bucket = &mut self.buckets[b];
        if let Some(pos) = bucket.position(&contact.id) {
            let mut entry = bucket.entries.remove(pos).expect("position is valid");
            entry.contact.addr = contact.addr;
            entry.last_seen = now.max(entry.first_seen);
            entry.stale = false;
            bucket.entries.push_back(entry);
            return Ok(UpdateOutcome::Refreshed);
        }
        if bucket.is_full() {
            let eldest = bucket.entries.front().expect("full bucket").contact;
            return Ok(UpdateOutcome::BucketFullPingEldest { bucket: b, eldest });
        }
        bucket.entries.push_back(BucketEntry {
            contact,
            first_seen: now,
            last_seen: now,
            stale: false,
        });
        Ok(UpdateOutcome::Inserted)
    }

    /// Settles a [`UpdateOutcome::BucketFullPingEldest`]. A live eldest keeps
    /// its slot and moves to the tail; a dead one is replaced by `candidate`.
    pub fn resolve_eviction(&mut self, eldest: &Contact, eldest_alive: bool, candidate: Contact, now: u64) {
        let Ok(b) = bucket_index(&self.owner, &candidate.id) else {
            return;
        };
        let bucket = &mut self.buckets[b];
        let eldest_pos = bucket.position(&eldest.id);
        if eldest_alive {
            if let Some(pos) = eldest_pos {
                let mut entry = bucket.entries.remove(pos).expect("position is valid");
                entry.last_seen = now.max(entry.first_seen);
                entry.stale = false;
                bucket.entries.push_back(entry);
            }
            return;
        }
        if let Some(pos) = eldest_pos {
            bucket.entries.remove(pos);
        }
        if bucket.position(&candidate.id).is_none() && !bucket.is_full() {
            bucket.entries.push_back(BucketEntry {
                contact: candidate,
                first_seen: now,
                last_seen: now,
                stale: false,
            });
        }
    }

    pub fn mark_stale(&mut self, id: &NodeId) {
        if let Ok(b) = bucket_index(&self.owner, id) {
            let bucket = &mut self.buckets[b];
            if let Some(pos) = bucket.position(id) {
                bucket.entries[pos].stale = true;
            }
        }
    }

    pub fn remove(&mut self, id: &NodeId) -> Option<BucketEntry> {
        let b = bucket_index(&self.owner, id).ok()?;
        let bucket = &mut self.buckets[b];
        let pos = bucket.position(id)?;
        bucket.entries.remove(pos)
    }

    /// Up to `count` non-stale contacts ordered by ascending distance to
    /// `target`.
    ///
    /// Buckets are visited outward from the target's own bucket `t`: bucket
    /// `t` holds everything below `2^t`, buckets `< t` all fall in
    /// `[2^t, 2^(t+1))`, and each bucket `j > t` covers `[2^j, 2^(j+1))`.
    pub fn closest(&self, target: &NodeId, count: usize) -> Vec<Contact> {
        let mut out = Vec::with_capacity(count.min(self.len()));
        if count == 0 {
            return out;
        }
        let take_group = |out: &mut Vec<Contact>, range: &mut dyn Iterator<Item = usize>| {
            let mut group: Vec<Contact> = range
                .flat_map(|i| self.buckets[i].entries())
                .filter(|e| !e.stale)
                .map(|e| e.contact)
                .collect();
            group.sort_by_key(|c| c.id.distance(target));
            let room = count - out.len();
            out.extend(group.into_iter().take(room));
        };
        match target.distance(&self.owner).highest_bit() {
            None => take_group(&mut out, &mut (0..ID_BITS)),
            Some(t) => {
                take_group(&mut out, &mut std::iter::once(t));
                if out.len() < count {
                    take_group(&mut out, &mut (0..t));
                }
                for j in t + 1..ID_BITS {
                    if out.len() >= count {
                        break;
                    }
                    take_group(&mut out, &mut std::iter::once(j));
                }
            }
        }
        out
    }

    pub fn touch_bucket(&mut self, index: usize, now: u64) {
        let bucket = &mut self.buckets[index];
        bucket.last_activity = bucket.last_activity.max(now);
    }

    /// Marks the bucket covering `target` as recently looked up.
    pub fn touch_target(&mut self, target: &NodeId, now: u64) {
        if let Ok(b) = bucket_index(&self.owner, target) {
            self.touch_bucket(b, now);
        }
    }

    /// Buckets eligible for refresh: every index from the lowest occupied
    /// bucket upward. Lower buckets cover ranges nobody lives in.
    pub fn refreshable(&self) -> std::ops::Range<usize> {
        match self.lowest_occupied() {
            Some(low) => low..ID_BITS,
            None => 0..0,
        }
    }

    /// Eligible buckets with no lookup activity within `interval` ms.
    pub fn idle_buckets(&self, now: u64, interval: u64) -> Vec<usize> {
        self.refreshable()
            .filter(|&i| now.saturating_sub(self.buckets[i].last_activity) >= interval)
            .collect()
    }

    /// When the next eligible bucket goes idle.
    pub fn next_idle_at(&self, interval: u64) -> Option<u64> {
        self.refreshable()
            .map(|i| self.buckets[i].last_activity + interval)
            .min()
    }
}
