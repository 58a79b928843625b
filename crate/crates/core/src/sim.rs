//! Deterministic discrete-event core.
//!
//! Events are ordered by `(fire_at, seq)`; `seq` is assigned at scheduling
//! time, so events sharing a timestamp fire in insertion order. The queue is a
//! `BTreeMap` keyed by that pair, which makes cancellation an `O(log n)`
//! removal with no tombstones.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

use crate::error::SimError;
use crate::time::{SimDuration, SimTime};

/// Handle returned by [`EventQueue::schedule`]; unique for the lifetime of a
/// queue.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId {
    pub fire_at: SimTime,
    pub seq: u64,
}

#[derive(Debug)]
pub struct EventQueue<E> {
    now: SimTime,
    next_seq: u64,
    pending: BTreeMap<EventId, E>,
    scheduled: u64,
    cancelled: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self {
            now: SimTime::ZERO,
            next_seq: 0,
            pending: BTreeMap::new(),
            scheduled: 0,
            cancelled: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    /// Enqueue `event` at `fire_at`. Scheduling in the past is a programming
    /// error and is rejected.
    pub fn schedule(&mut self, fire_at: SimTime, event: E) -> Result<EventId, SimError> {
        if fire_at < self.now {
            return Err(SimError::EventInPast {
                fire_at,
                now: self.now,
            });
        }
        let id = EventId {
            fire_at,
            seq: self.next_seq,
        };
        self.next_seq += 1;
        self.scheduled += 1;
        self.pending.insert(id, event);
        Ok(id)
    }

    /// Convenience for the common `now + delay` case, which can never be in
    /// the past.
    pub fn schedule_in(&mut self, delay: SimDuration, event: E) -> EventId {
        self.schedule(self.now + delay, event)
            .expect("relative schedule cannot be in the past")
    }

    /// Remove a pending event. Returns `false` if it already fired or was
    /// cancelled before.
    pub fn cancel(&mut self, id: EventId) -> bool {
        let removed = self.pending.remove(&id).is_some();
        if removed {
            self.cancelled += 1;
        }
        removed
    }

    pub fn is_pending(&self, id: EventId) -> bool {
        self.pending.contains_key(&id)
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.pending.keys().next().map(|id| id.fire_at)
    }

    /// Pop the next event if it fires at or before `end`, advancing the clock.
    pub fn pop_until(&mut self, end: SimTime) -> Option<(EventId, E)> {
        let first = *self.pending.keys().next()?;
        if first.fire_at > end {
            return None;
        }
        let event = self.pending.remove(&first).expect("key just observed");
        debug_assert!(first.fire_at >= self.now);
        self.now = first.fire_at;
        Some((first, event))
    }

    fn advance_to(&mut self, end: SimTime) {
        if end > self.now {
            self.now = end;
        }
    }

    pub fn scheduled_count(&self) -> u64 {
        self.scheduled
    }

    pub fn cancelled_count(&self) -> u64 {
        self.cancelled
    }
}

/// Something that reacts to events and may schedule more of them.
pub trait Handler<E> {
    fn handle(&mut self, id: EventId, event: E, queue: &mut EventQueue<E>);
}

impl<E, F> Handler<E> for F
where
    F: FnMut(EventId, E, &mut EventQueue<E>),
{
    fn handle(&mut self, id: EventId, event: E, queue: &mut EventQueue<E>) {
        self(id, event, queue)
    }
}

/// Process every event with `fire_at <= end` in `(fire_at, seq)` order, then
/// leave the clock at `end`. Returns the number of events processed.
pub fn run_until<E, H: Handler<E>>(
    queue: &mut EventQueue<E>,
    handler: &mut H,
    end: SimTime,
) -> Result<u64, SimError> {
    if end < queue.now() {
        return Err(SimError::EndInPast {
            end,
            now: queue.now(),
        });
    }
    let mut processed = 0u64;
    while let Some((id, event)) = queue.pop_until(end) {
        handler.handle(id, event, queue);
        processed += 1;
    }
    queue.advance_to(end);
    Ok(processed)
}

/// Derive the 32-byte ChaCha seed for `(master_seed, label)`.
///
/// Hashing the label rather than drawing sub-seeds from a master generator
/// keeps each stream independent of how many other streams exist.
fn stream_seed(master_seed: u64, label: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(b"hybrid-mac-sim/rng-stream/v1");
    hasher.update(master_seed.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    seed
}

/// A named random stream.
pub type RngStream = ChaCha12Rng;

pub fn rng_stream(master_seed: u64, label: &str) -> RngStream {
    ChaCha12Rng::from_seed(stream_seed(master_seed, label))
}
