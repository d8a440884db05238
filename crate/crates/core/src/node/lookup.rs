//! Iterative lookup state.
//!
//! Rounds are synchronous: a round's queries all resolve (answer or time out)
//! before the next round starts, and `rounds` counts them. An ordinary round
//! queries the `alpha` closest unqueried candidates among the best `k`. A
//! round that fails to bring in anything closer than the best contact known
//! when it started switches the next round to a sweep over every unqueried
//! candidate among the best `k`. The lookup ends once each of the best `k`
//! non-failed candidates has answered.

use std::collections::BTreeMap;

use crate::id::{Distance, NodeId};
use crate::protocol::ValueRecord;
use crate::routing::Contact;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum PeerState {
    Unqueried,
    InFlight,
    Responded,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LookupKind {
    Node,
    Value,
}

#[derive(Debug, Clone)]
pub(crate) enum Step {
    Query(Vec<Contact>),
    Done,
}

#[derive(Debug, Clone)]
pub(crate) struct Lookup {
    pub target: NodeId,
    pub kind: LookupKind,
    shortlist: BTreeMap<Distance, (Contact, PeerState)>,
    own_id: NodeId,
    k: usize,
    alpha: usize,
    in_flight: usize,
    pub rounds: u32,
    pub queried: u32,
    pub failures: u32,
    round_start_best: Option<Distance>,
    sweep: bool,
    /// Set when a FIND_VALUE answer carried the value.
    pub found: Option<(Contact, Vec<ValueRecord>)>,
}

impl Lookup {
    pub fn new(target: NodeId, kind: LookupKind, own_id: NodeId, seeds: Vec<Contact>, k: usize, alpha: usize) -> Self {
        let mut lookup = Lookup {
            target,
            kind,
            shortlist: BTreeMap::new(),
            own_id,
            k,
            alpha,
            in_flight: 0,
            rounds: 0,
            queried: 0,
            failures: 0,
            round_start_best: None,
            sweep: false,
            found: None,
        };
        lookup.merge(seeds);
        lookup
    }

    fn merge(&mut self, contacts: impl IntoIterator<Item = Contact>) {
        for c in contacts {
            if c.id == self.own_id {
                continue;
            }
            self.shortlist
                .entry(c.id.distance(&self.target))
                .or_insert((c, PeerState::Unqueried));
        }
    }

    fn best_k(&self) -> impl Iterator<Item = &(Contact, PeerState)> {
        self.shortlist
            .values()
            .filter(|(_, s)| *s != PeerState::Failed)
            .take(self.k)
    }

    fn best_distance(&self) -> Option<Distance> {
        self.shortlist
            .iter()
            .find(|(_, (_, s))| *s != PeerState::Failed)
            .map(|(d, _)| *d)
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight
    }

    pub fn is_empty(&self) -> bool {
        self.shortlist.is_empty()
    }

    /// Plans the next round. Only valid when nothing is in flight.
    pub fn next_round(&mut self) -> Step {
        debug_assert_eq!(self.in_flight, 0);
        if self.found.is_some() {
            return Step::Done;
        }
        if self.rounds > 0 {
            let improved = match (self.best_distance(), self.round_start_best) {
                (Some(now), Some(before)) => now < before,
                (Some(_), None) => true,
                _ => false,
            };
            self.sweep = !improved;
        }
        let limit = if self.sweep { self.k } else { self.alpha };
        let picked: Vec<Contact> = self
            .best_k()
            .filter(|(_, s)| *s == PeerState::Unqueried)
            .take(limit)
            .map(|(c, _)| *c)
            .collect();
        if picked.is_empty() {
            return Step::Done;
        }
        self.round_start_best = self.best_distance();
        for c in &picked {
            self.set_state(&c.id, PeerState::InFlight);
        }
        self.in_flight = picked.len();
        self.queried += picked.len() as u32;
        self.rounds += 1;
        Step::Query(picked)
    }

    fn set_state(&mut self, id: &NodeId, state: PeerState) -> bool {
        match self.shortlist.get_mut(&id.distance(&self.target)) {
            Some((_, s)) if *s == PeerState::InFlight || state == PeerState::InFlight => {
                *s = state;
                true
            }
            _ => false,
        }
    }

    /// A NODES answer from `from`.
    pub fn on_nodes(&mut self, from: &Contact, contacts: Vec<Contact>) {
        if self.set_state(&from.id, PeerState::Responded) {
            self.in_flight -= 1;
        }
        self.merge(contacts.into_iter().take(self.k));
    }

    /// A VALUE answer from `from`.
    pub fn on_value(&mut self, from: &Contact, records: Vec<ValueRecord>) {
        if self.set_state(&from.id, PeerState::Responded) {
            self.in_flight -= 1;
        }
        if self.found.is_none() {
            self.found = Some((*from, records));
        }
    }

    /// `from` did not answer, retries included.
    pub fn on_failure(&mut self, from: &NodeId) {
        if self.set_state(from, PeerState::Failed) {
            self.in_flight -= 1;
            self.failures += 1;
        }
    }

    pub fn any_responded(&self) -> bool {
        self.shortlist.values().any(|(_, s)| *s == PeerState::Responded)
    }

    /// The `k` closest contacts that answered.
    pub fn responded(&self) -> Vec<Contact> {
        self.shortlist
            .values()
            .filter(|(_, s)| *s == PeerState::Responded)
            .take(self.k)
            .map(|(c, _)| *c)
            .collect()
    }

    /// Closest contact that answered without the value, if any. Used as the
    /// cache target after a successful FIND_VALUE.
    pub fn closest_without_value(&self) -> Option<Contact> {
        let holder = self.found.as_ref().map(|(c, _)| c.id);
        self.shortlist
            .values()
            .filter(|(c, s)| *s == PeerState::Responded && Some(c.id) != holder)
            .map(|(c, _)| *c)
            .next()
    }
}
