//! Per-sender sequencing of relayed envelopes.
//!
//! Envelopes are released in `seq` order. One that arrives early waits until
//! the missing ones turn up or the gap has been open for the gap timeout, at
//! which point the gap is reported and skipped. Duplicates and envelopes
//! behind the release point are dropped.

use std::collections::BTreeMap;
use std::ops::Range;

use crate::protocol::SignalEnvelope;

#[derive(Debug, Clone, Default)]
pub struct Reorder {
    next: u64,
    held: BTreeMap<u64, SignalEnvelope>,
    stalled_since: Option<u64>,
}

/// A run of sequence numbers given up on.
pub type Gap = Range<u64>;

impl Reorder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Next sequence number to be released.
    pub fn next_seq(&self) -> u64 {
        self.next
    }

    pub fn held(&self) -> usize {
        self.held.len()
    }

    pub fn push(&mut self, now: u64, env: SignalEnvelope) -> Vec<SignalEnvelope> {
        if env.seq < self.next {
            return Vec::new();
        }
        self.held.entry(env.seq).or_insert(env);
        let out = self.drain();
        self.restall(now, !out.is_empty());
        out
    }

    fn drain(&mut self) -> Vec<SignalEnvelope> {
        let mut out = Vec::new();
        while let Some(env) = self.held.remove(&self.next) {
            self.next += 1;
            out.push(env);
        }
        out
    }

    fn restall(&mut self, now: u64, progressed: bool) {
        if self.held.is_empty() {
            self.stalled_since = None;
        } else if progressed || self.stalled_since.is_none() {
            self.stalled_since = Some(now);
        }
    }

    /// When the current gap times out, if there is one.
    pub fn deadline(&self, gap_timeout: u64) -> Option<u64> {
        self.stalled_since.map(|t| t + gap_timeout)
    }

    /// Gives up on a gap open for at least `gap_timeout`, releasing what was
    /// waiting behind it.
    pub fn expire(&mut self, now: u64, gap_timeout: u64) -> Option<(Gap, Vec<SignalEnvelope>)> {
        if self.deadline(gap_timeout)? > now {
            return None;
        }
        let first = *self.held.keys().next()?;
        let gap = self.next..first;
        self.next = first;
        let out = self.drain();
        self.restall(now, true);
        Some((gap, out))
    }
}
