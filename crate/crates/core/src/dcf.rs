//! Distributed coordination function: inter-frame spacing, binary
//! exponential backoff and the retry limit.
//!
//! [`Contender`] is the per-frame contention state. It does not own a timer;
//! the caller arms one expiry event whenever [`Contender::resume`] returns a
//! deadline, and calls [`Contender::pause`] when the medium (or a gate) goes
//! busy. Only whole idle slots after DIFS count down the backoff.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::frame::ACK_BYTES;
use crate::medium::{airtime, PhyConfig};
use crate::sim::{EventId, RngStream};
use crate::time::{SimDuration, SimTime};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DcfParams {
    pub slot_time_ns: u64,
    pub sifs_ns: u64,
    pub difs_ns: u64,
    pub cw_min: u32,
    pub cw_max: u32,
    /// Retransmissions after the first attempt.
    pub retry_limit: u32,
}

impl Default for DcfParams {
    fn default() -> Self {
        // 802.11n, 2.4 GHz
        Self {
            slot_time_ns: 9_000,
            sifs_ns: 10_000,
            difs_ns: 28_000,
            cw_min: 15,
            cw_max: 1023,
            retry_limit: 7,
        }
    }
}

fn is_pow2_minus_one(x: u32) -> bool {
    (x as u64 + 1).is_power_of_two()
}

impl DcfParams {
    pub fn validate(&self, out: &mut Vec<String>) {
        if !is_pow2_minus_one(self.cw_min) || !is_pow2_minus_one(self.cw_max) {
            out.push(format!(
                "dcf.cw_min ({}) and dcf.cw_max ({}) must both be 2^k - 1",
                self.cw_min, self.cw_max
            ));
        }
        if self.cw_min > self.cw_max {
            out.push(format!(
                "dcf.cw_min ({}) exceeds dcf.cw_max ({})",
                self.cw_min, self.cw_max
            ));
        }
        if self.slot_time_ns == 0 {
            out.push("dcf.slot_time_ns must be > 0".into());
        }
        if self.sifs_ns >= self.difs_ns {
            out.push("dcf.sifs_ns must be shorter than dcf.difs_ns".into());
        }
    }

    pub fn slot(&self) -> SimDuration {
        SimDuration(self.slot_time_ns)
    }
    pub fn sifs(&self) -> SimDuration {
        SimDuration(self.sifs_ns)
    }
    pub fn difs(&self) -> SimDuration {
        SimDuration(self.difs_ns)
    }

    /// Contention window for the given 0-based attempt number.
    pub fn cw_for_attempt(&self, attempt: u32) -> u32 {
        let grown = (u64::from(self.cw_min) + 1) << attempt.min(32);
        (grown - 1).min(u64::from(self.cw_max)) as u32
    }

    pub fn max_attempts(&self) -> u32 {
        self.retry_limit + 1
    }

    pub fn ack_airtime(&self, phy: &PhyConfig) -> SimDuration {
        airtime(ACK_BYTES, phy)
    }

    /// Wait after the end of a unicast transmission before declaring it lost.
    pub fn ack_timeout(&self, phy: &PhyConfig) -> SimDuration {
        self.sifs() + self.ack_airtime(phy) + phy.max_link_delay() * 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RetryDecision {
    Retry,
    GiveUp,
}

/// Contention state of the frame at the head of one queue.
#[derive(Clone, Debug)]
pub struct Contender {
    attempt: u32,
    cw: u32,
    backoff_remaining: u32,
    counting_since: Option<SimTime>,
    pub expiry: Option<EventId>,
    cw_history: Vec<u32>,
}

impl Contender {
    /// Fresh frame: attempt 0, backoff drawn from `[0, cw_min]`.
    pub fn new(params: &DcfParams, rng: &mut RngStream) -> Self {
        let cw = params.cw_for_attempt(0);
        Self {
            attempt: 0,
            cw,
            backoff_remaining: rng.random_range(0..=cw),
            counting_since: None,
            expiry: None,
            cw_history: vec![cw],
        }
    }

    /// Fixed initial backoff, for constructing forced-tie scenarios.
    pub fn with_backoff(params: &DcfParams, slots: u32) -> Self {
        let cw = params.cw_for_attempt(0);
        Self {
            attempt: 0,
            cw,
            backoff_remaining: slots.min(cw),
            counting_since: None,
            expiry: None,
            cw_history: vec![cw],
        }
    }

    pub fn attempt(&self) -> u32 {
        self.attempt
    }
    pub fn cw(&self) -> u32 {
        self.cw
    }
    pub fn backoff_remaining(&self) -> u32 {
        self.backoff_remaining
    }
    pub fn is_counting(&self) -> bool {
        self.counting_since.is_some()
    }
    pub fn cw_history(&self) -> &[u32] {
        &self.cw_history
    }

    /// Medium idle from `now`: returns when the backoff will expire if it
    /// stays idle.
    pub fn resume(&mut self, now: SimTime, params: &DcfParams) -> SimTime {
        self.counting_since = Some(now);
        now + params.difs() + params.slot() * u64::from(self.backoff_remaining)
    }

    /// Medium (or gate) busy at `now`: bank the whole idle slots elapsed
    /// since DIFS completed.
    pub fn pause(&mut self, now: SimTime, params: &DcfParams) {
        if let Some(since) = self.counting_since.take() {
            let idle = now.saturating_sub(since);
            if idle > params.difs() {
                let slots = (idle - params.difs()).as_nanos() / params.slot_time_ns;
                let slots = slots.min(u64::from(self.backoff_remaining)) as u32;
                self.backoff_remaining -= slots;
            }
        }
    }

    /// The expiry fired: the backoff is exhausted.
    pub fn expire(&mut self) {
        self.counting_since = None;
        self.backoff_remaining = 0;
        self.expiry = None;
    }

    /// The attempt failed (no ACK). Either doubles the window and redraws
    /// the backoff or reports that the retry limit is spent.
    pub fn on_failure(&mut self, params: &DcfParams, rng: &mut RngStream) -> RetryDecision {
        if self.attempt >= params.retry_limit {
            return RetryDecision::GiveUp;
        }
        self.attempt += 1;
        self.cw = params.cw_for_attempt(self.attempt);
        self.cw_history.push(self.cw);
        self.backoff_remaining = rng.random_range(0..=self.cw);
        self.counting_since = None;
        RetryDecision::Retry
    }
}
