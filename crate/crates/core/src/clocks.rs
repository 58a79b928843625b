//! Drifting node oscillators, PTP-style offset/delay estimation from a
//! beacon + response exchange, and slot transmit-time scheduling.
//!
//! Sign convention: a client's clock reads `true_time + offset`, so the
//! beacon arrival stamp is `s_ap + delay + offset` on the client's clock.
//! All clock-domain values are signed nanoseconds.

use serde::{Deserialize, Serialize};

use crate::time::{SimDuration, SimTime};

/// Configuration bound on oscillator frequency error.
pub const MAX_DRIFT_PPM: f64 = 100.0;

/// Halve an integer, rounding exact halves towards +infinity.
pub fn half_round_up(x: i64) -> i64 {
    (x + 1).div_euclid(2)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OscillatorModel {
    /// Frequency error in parts per million.
    pub drift_ppm: f64,
    /// Clock offset at true time zero, in ns.
    pub initial_offset_ns: i64,
}

impl OscillatorModel {
    pub const IDEAL: OscillatorModel = OscillatorModel {
        drift_ppm: 0.0,
        initial_offset_ns: 0,
    };

    pub fn new(drift_ppm: f64, initial_offset_ns: i64) -> Self {
        Self {
            drift_ppm,
            initial_offset_ns,
        }
    }

    fn drift_ns(&self, t: SimTime) -> i64 {
        let x = self.drift_ppm * 1e-6 * t.as_nanos() as f64;
        (x + 0.5).floor() as i64
    }

    /// The clock reading at true time `t`.
    pub fn local_read(&self, t: SimTime) -> i64 {
        t.as_i64() + self.initial_offset_ns + self.drift_ns(t)
    }

    /// True offset `reading - t` at true time `t`.
    pub fn offset_at(&self, t: SimTime) -> i64 {
        self.local_read(t) - t.as_i64()
    }

    /// The earliest true time at which the clock reads at least `reading`.
    /// This is when a hardware timer armed at `reading` fires.
    pub fn true_time_at(&self, reading: i64) -> SimTime {
        if reading <= self.local_read(SimTime::ZERO) {
            return SimTime::ZERO;
        }
        let rate = 1.0 + self.drift_ppm * 1e-6;
        let approx = ((reading - self.initial_offset_ns) as f64 / rate).floor().max(0.0) as u64;
        let mut t = approx;
        while self.local_read(SimTime(t)) < reading {
            t += 1;
        }
        while t > 0 && self.local_read(SimTime(t - 1)) >= reading {
            t -= 1;
        }
        SimTime(t)
    }
}

/// The four timestamps of one synchronisation round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncRecord {
    /// Beacon transmit time, server clock.
    pub s_ap_beacon: i64,
    /// Beacon arrival, client clock.
    pub s_tilde_arrival: i64,
    /// Response transmit time, client clock.
    pub s_response: i64,
    /// Response arrival, server clock.
    pub t_server_rx: i64,
}

/// Result of evaluating one [`SyncRecord`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PtpSample {
    pub o_hat: i64,
    pub d_hat: i64,
}

impl PtpSample {
    /// A negative delay estimate means the symmetric-delay assumption failed
    /// or a timestamp is wrong.
    pub fn is_suspect(&self) -> bool {
        self.d_hat < 0
    }
}

/// Offset and delay from one exchange, assuming symmetric propagation.
pub fn ptp_update(rec: &SyncRecord) -> PtpSample {
    let d = rec.s_tilde_arrival + rec.t_server_rx - rec.s_ap_beacon - rec.s_response;
    let o = rec.s_tilde_arrival - rec.t_server_rx - rec.s_ap_beacon + rec.s_response;
    PtpSample {
        o_hat: half_round_up(o),
        d_hat: half_round_up(d),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PtpEstimate {
    pub o_hat: i64,
    pub d_hat: i64,
    /// True time of the beacon that opened the last completed round.
    pub last_sync_at: Option<SimTime>,
    /// Client-clock reference of the current frame start.
    pub frame_ref: i64,
}

impl PtpEstimate {
    pub fn apply(&mut self, sample: PtpSample, round_started_at: SimTime) {
        self.o_hat = sample.o_hat;
        self.d_hat = sample.d_hat;
        self.last_sync_at = Some(round_started_at);
    }

    /// Rebase the frame reference on a freshly decoded beacon.
    pub fn rebase_frame(&mut self, beacon_arrival_local: i64) {
        self.frame_ref = beacon_arrival_local - self.o_hat;
    }

    pub fn is_synced(&self) -> bool {
        self.last_sync_at.is_some()
    }
}

/// Client-clock transmit time for slot `slot` (1-based) of the frame whose
/// reference is `est.frame_ref`.
pub fn schedule_slot_tx(est: &PtpEstimate, slot: u32, slot_len: SimDuration) -> i64 {
    assert!(slot >= 1, "slots are numbered from 1");
    assert!(!slot_len.is_zero(), "slot duration must be positive");
    est.frame_ref + est.o_hat + i64::from(slot - 1) * slot_len.as_i64() - 2 * est.d_hat
}

pub fn periodic_sync_due(last_sync_at: Option<SimTime>, now: SimTime, period: SimDuration) -> bool {
    match last_sync_at {
        None => true,
        Some(last) => now.saturating_sub(last) >= period,
    }
}
