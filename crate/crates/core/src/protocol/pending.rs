//! Request/response correlation by `rpc_id`.

use std::collections::BTreeMap;

use rand::Rng;

use super::{Kind, RpcId, RpcMessage};
use crate::id::NodeId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingEntry<C> {
    pub ctx: C,
    pub request: Kind,
    /// Node the request went to, when known. Responses from anyone else are
    /// treated as unsolicited.
    pub expect_from: Option<NodeId>,
    pub deadline: u64,
}

#[derive(Debug, PartialEq, Eq)]
pub enum Match<C> {
    Matched(PendingEntry<C>),
    Unsolicited,
}

/// In-flight requests keyed by nonce. Ordered so that timeout processing is
/// deterministic.
#[derive(Debug, Clone)]
pub struct PendingTable<C> {
    entries: BTreeMap<RpcId, PendingEntry<C>>,
}

impl<C> Default for PendingTable<C> {
    fn default() -> Self {
        PendingTable {
            entries: BTreeMap::new(),
        }
    }
}

impl<C> PendingTable<C> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// A nonce not currently pending. Collisions are redrawn.
    pub fn fresh_id<R: Rng + ?Sized>(&self, rng: &mut R) -> RpcId {
        loop {
            let id = RpcId::random(rng);
            if !self.entries.contains_key(&id) {
                return id;
            }
        }
    }

    /// Registers a request. Returns `false` (and leaves the table unchanged)
    /// if `id` is already pending.
    pub fn insert(&mut self, id: RpcId, entry: PendingEntry<C>) -> bool {
        if self.entries.contains_key(&id) {
            return false;
        }
        self.entries.insert(id, entry);
        true
    }

    pub fn get_mut(&mut self, id: &RpcId) -> Option<&mut PendingEntry<C>> {
        self.entries.get_mut(id)
    }

    pub fn remove(&mut self, id: &RpcId) -> Option<PendingEntry<C>> {
        self.entries.remove(id)
    }

    /// Delivers `resp` to its waiting request at most once.
    pub fn match_response(&mut self, resp: &RpcMessage) -> Match<C> {
        let kind = resp.kind();
        if !kind.is_response() {
            return Match::Unsolicited;
        }
        let Some(entry) = self.entries.get(&resp.rpc_id) else {
            return Match::Unsolicited;
        };
        if !kind.answers(entry.request) {
            return Match::Unsolicited;
        }
        if entry.expect_from.is_some_and(|id| id != resp.sender.id) {
            return Match::Unsolicited;
        }
        match self.entries.remove(&resp.rpc_id) {
            Some(e) => Match::Matched(e),
            None => Match::Unsolicited,
        }
    }

    /// Nonces whose deadline is at or before `now`, in ascending nonce order.
    pub fn due(&self, now: u64) -> Vec<RpcId> {
        self.entries
            .iter()
            .filter(|(_, e)| e.deadline <= now)
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn next_deadline(&self) -> Option<u64> {
        self.entries.values().map(|e| e.deadline).min()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&RpcId, &PendingEntry<C>)> {
        self.entries.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Body;
    use crate::routing::Contact;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn responder() -> Contact {
        Contact::new(NodeId::from_name("peer"), "10.0.0.2:4000".parse().unwrap())
    }

    fn pong(id: RpcId) -> RpcMessage {
        RpcMessage::new(id, responder(), Body::Pong)
    }

    fn entry(ctx: u32) -> PendingEntry<u32> {
        PendingEntry {
            ctx,
            request: Kind::Ping,
            expect_from: Some(responder().id),
            deadline: 1000,
        }
    }

    #[test]
    fn matched_once_then_unsolicited() {
        let mut t = PendingTable::new();
        let id = RpcId::from_u128(9);
        assert!(t.insert(id, entry(7)));
        match t.match_response(&pong(id)) {
            Match::Matched(e) => assert_eq!(e.ctx, 7),
            Match::Unsolicited => panic!("should match"),
        }
        assert!(t.is_empty());
        assert_eq!(t.match_response(&pong(id)), Match::Unsolicited);
    }

    #[test]
    fn after_timeout_is_unsolicited() {
        let mut t = PendingTable::new();
        let id = RpcId::from_u128(10);
        t.insert(id, entry(1));
        assert_eq!(t.due(999), vec![]);
        assert_eq!(t.due(1000), vec![id]);
        t.remove(&id);
        assert_eq!(t.match_response(&pong(id)), Match::Unsolicited);
    }

    #[test]
    fn wrong_kind_or_sender_is_unsolicited() {
        let mut t = PendingTable::new();
        let id = RpcId::from_u128(11);
        t.insert(id, entry(1));
        let nodes = RpcMessage::new(id, responder(), Body::Nodes { contacts: vec![] });
        assert_eq!(t.match_response(&nodes), Match::Unsolicited);
        let mut stranger = pong(id);
        stranger.sender.id = NodeId::from_name("someone else");
        assert_eq!(t.match_response(&stranger), Match::Unsolicited);
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn duplicate_ids_refused_and_fresh_ids_avoid_pending() {
        let mut t = PendingTable::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let id = t.fresh_id(&mut rng);
        assert!(t.insert(id, entry(1)));
        assert!(!t.insert(id, entry(2)));
        for _ in 0..100 {
            assert_ne!(t.fresh_id(&mut rng), id);
        }
    }
}
