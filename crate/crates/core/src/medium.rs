//! Single collision domain, half-duplex, no capture.
//!
//! The medium only does bookkeeping: [`Medium::begin_tx`] returns the
//! per-receiver arrival windows and the caller schedules the matching
//! rx-start / rx-end events. Collision marks are applied eagerly when a new
//! arrival overlaps an existing one, so resolution at rx-end is a lookup plus
//! one channel-error draw.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::MediumError;
use crate::sim::RngStream;
use crate::time::{SimDuration, SimTime};

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDelay {
    pub a: NodeId,
    pub b: NodeId,
    pub delay_ns: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhyConfig {
    /// Effective payload bit rate.
    pub data_rate_bps: u64,
    /// Preamble and PHY header airtime added to every frame.
    pub per_frame_overhead_ns: u64,
    /// Symmetric propagation delay used for pairs not listed in `link_delays`.
    pub default_link_delay_ns: u64,
    pub link_delays: Vec<LinkDelay>,
    pub frame_error_prob: f64,
    /// ACKs are immune to channel errors (they can still collide).
    pub ack_error_free: bool,
}

/// Payload rate at which the reference workload offers 77.1 % load.
pub const CALIBRATED_DATA_RATE_BPS: u64 = 18_274_000;

impl Default for PhyConfig {
    fn default() -> Self {
        Self {
            data_rate_bps: CALIBRATED_DATA_RATE_BPS,
            per_frame_overhead_ns: 0,
            default_link_delay_ns: 100,
            link_delays: Vec::new(),
            frame_error_prob: 1e-3,
            ack_error_free: true,
        }
    }
}

impl PhyConfig {
    pub fn validate(&self, n_nodes: usize, out: &mut Vec<String>) {
        if self.data_rate_bps == 0 {
            out.push("phy.data_rate_bps must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.frame_error_prob) {
            out.push(format!(
                "phy.frame_error_prob {} outside [0, 1]",
                self.frame_error_prob
            ));
        }
        for l in &self.link_delays {
            if l.a >= n_nodes || l.b >= n_nodes {
                out.push(format!("phy.link_delays references unknown node ({}, {})", l.a, l.b));
            }
        }
    }

    pub fn link_delay(&self, a: NodeId, b: NodeId) -> SimDuration {
        self.link_delays
            .iter()
            .find(|l| (l.a == a && l.b == b) || (l.a == b && l.b == a))
            .map(|l| SimDuration(l.delay_ns))
            .unwrap_or(SimDuration(self.default_link_delay_ns))
    }

    pub fn max_link_delay(&self) -> SimDuration {
        let max = self
            .link_delays
            .iter()
            .map(|l| l.delay_ns)
            .max()
            .unwrap_or(0)
            .max(self.default_link_delay_ns);
        SimDuration(max)
    }
}

/// Time on air for a frame of `size_bytes` (header bytes included).
pub fn airtime(size_bytes: u64, phy: &PhyConfig) -> SimDuration {
    let bits = u128::from(size_bytes) * 8 * 1_000_000_000;
    let rate = u128::from(phy.data_rate_bps);
    let payload_ns = bits.div_ceil(rate);
    SimDuration(phy.per_frame_overhead_ns + payload_ns as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TxId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RxResult {
    Delivered,
    Collided,
    ChannelError,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Arrival {
    pub receiver: NodeId,
    pub start: SimTime,
    pub end: SimTime,
}

#[derive(Clone, Debug)]
pub struct TxStart {
    pub id: TxId,
    pub end: SimTime,
    pub arrivals: Vec<Arrival>,
}

#[derive(Clone, Copy, Debug)]
struct Incoming {
    tx: TxId,
    start: SimTime,
    end: SimTime,
    collided: bool,
}

#[derive(Clone, Copy, Debug)]
struct Outgoing {
    tx: TxId,
    start: SimTime,
    end: SimTime,
}

#[derive(Debug)]
pub struct Medium {
    phy: PhyConfig,
    delays: Vec<Vec<SimDuration>>,
    incoming: Vec<Vec<Incoming>>,
    outgoing: Vec<Option<Outgoing>>,
    nav_until: Vec<SimTime>,
    next_tx: u64,
    rng: RngStream,
    busy_log: Option<Vec<Vec<(SimTime, SimTime)>>>,
}

fn overlaps(a_start: SimTime, a_end: SimTime, b_start: SimTime, b_end: SimTime) -> bool {
    a_start < b_end && b_start < a_end
}

impl Medium {
    pub fn new(n_nodes: usize, phy: PhyConfig, rng: RngStream) -> Self {
        let delays = (0..n_nodes)
            .map(|a| (0..n_nodes).map(|b| phy.link_delay(a, b)).collect())
            .collect();
        Self {
            phy,
            delays,
            incoming: vec![Vec::new(); n_nodes],
            outgoing: vec![None; n_nodes],
            nav_until: vec![SimTime::ZERO; n_nodes],
            next_tx: 0,
            rng,
            busy_log: None,
        }
    }

    /// Record every receive window per node, for tiling checks.
    pub fn enable_busy_log(&mut self) {
        self.busy_log = Some(vec![Vec::new(); self.incoming.len()]);
    }

    pub fn busy_log(&self, node: NodeId) -> Option<&[(SimTime, SimTime)]> {
        self.busy_log.as_ref().map(|l| l[node].as_slice())
    }

    pub fn phy(&self) -> &PhyConfig {
        &self.phy
    }

    pub fn n_nodes(&self) -> usize {
        self.incoming.len()
    }

    pub fn delay(&self, a: NodeId, b: NodeId) -> SimDuration {
        self.delays[a][b]
    }

    pub fn is_transmitting(&self, node: NodeId, now: SimTime) -> bool {
        self.outgoing[node].is_some_and(|o| o.start <= now && now < o.end)
    }

    /// Start a transmission of `airtime` from `sender` at `now`.
    pub fn begin_tx(
        &mut self,
        sender: NodeId,
        airtime: SimDuration,
        now: SimTime,
    ) -> Result<TxStart, MediumError> {
        if sender >= self.n_nodes() {
            return Err(MediumError::UnknownNode(sender));
        }
        if self.is_transmitting(sender, now) {
            return Err(MediumError::SenderBusy(sender));
        }
        let id = TxId(self.next_tx);
        self.next_tx += 1;
        let end = now + airtime;
        self.outgoing[sender] = Some(Outgoing {
            tx: id,
            start: now,
            end,
        });

        // The sender cannot receive anything overlapping its own airtime.
        for inc in self.incoming[sender].iter_mut() {
            if overlaps(inc.start, inc.end, now, end) {
                inc.collided = true;
            }
        }

        let mut arrivals = Vec::with_capacity(self.n_nodes() - 1);
        for r in 0..self.n_nodes() {
            if r == sender {
                continue;
            }
            let start = now + self.delays[sender][r];
            let arr_end = start + airtime;
            let mut collided = false;
            for inc in self.incoming[r].iter_mut() {
                if overlaps(inc.start, inc.end, start, arr_end) {
                    inc.collided = true;
                    collided = true;
                }
            }
            if let Some(o) = self.outgoing[r] {
                if overlaps(o.start, o.end, start, arr_end) {
                    collided = true;
                }
            }
            self.incoming[r].push(Incoming {
                tx: id,
                start,
                end: arr_end,
                collided,
            });
            if let Some(log) = self.busy_log.as_mut() {
                log[r].push((start, arr_end));
            }
            arrivals.push(Arrival {
                receiver: r,
                start,
                end: arr_end,
            });
        }
        Ok(TxStart { id, end, arrivals })
    }

    /// Called when the sender's airtime ends.
    pub fn end_tx(&mut self, sender: NodeId, tx: TxId) {
        if self.outgoing[sender].is_some_and(|o| o.tx == tx) {
            self.outgoing[sender] = None;
        }
    }

    fn take_incoming(&mut self, receiver: NodeId, tx: TxId) -> Option<Incoming> {
        let pos = self.incoming[receiver].iter().position(|i| i.tx == tx)?;
        let inc = self.incoming[receiver].swap_remove(pos);
        Some(inc)
    }

    /// Outcome of `tx` at `receiver`, for the frame's intended receivers.
    /// `error_exempt` skips the channel-error draw (ACK immunity).
    pub fn resolve_rx(&mut self, receiver: NodeId, tx: TxId, error_exempt: bool) -> RxResult {
        let inc = self
            .take_incoming(receiver, tx)
            .expect("resolve_rx for an arrival that is not pending");
        if inc.collided {
            return RxResult::Collided;
        }
        let p = self.phy.frame_error_prob;
        if !error_exempt && p > 0.0 && (p >= 1.0 || self.rng.random::<f64>() < p) {
            return RxResult::ChannelError;
        }
        RxResult::Delivered
    }

    /// Drop an arrival at a node that is not an intended receiver.
    pub fn discard_rx(&mut self, receiver: NodeId, tx: TxId) {
        self.take_incoming(receiver, tx);
    }

    pub fn physical_busy(&self, node: NodeId, now: SimTime) -> bool {
        self.is_transmitting(node, now)
            || self.incoming[node]
                .iter()
                .any(|i| i.start <= now && now < i.end)
    }

    pub fn set_nav(&mut self, node: NodeId, until: SimTime) {
        if until > self.nav_until[node] {
            self.nav_until[node] = until;
        }
    }

    pub fn nav_until(&self, node: NodeId) -> SimTime {
        self.nav_until[node]
    }

    pub fn nav_active(&self, node: NodeId, now: SimTime) -> bool {
        now < self.nav_until[node]
    }

    /// Physical carrier or NAV.
    pub fn carrier_busy(&self, node: NodeId, now: SimTime) -> bool {
        self.physical_busy(node, now) || self.nav_active(node, now)
    }

    /// Latest end of any reception currently overlapping `now` at `node`.
    pub fn busy_until(&self, node: NodeId, now: SimTime) -> Option<SimTime> {
        self.incoming[node]
            .iter()
            .filter(|i| i.start <= now && now < i.end)
            .map(|i| i.end)
            .max()
    }
}

/// Merge intervals into a sorted disjoint union.
pub fn merge_intervals(mut v: Vec<(SimTime, SimTime)>) -> Vec<(SimTime, SimTime)> {
    v.sort();
    let mut out: Vec<(SimTime, SimTime)> = Vec::with_capacity(v.len());
    for (s, e) in v {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::rng_stream;
    use proptest::prelude::*;

    fn phy(p: f64) -> PhyConfig {
        PhyConfig {
            frame_error_prob: p,
            ..PhyConfig::default()
        }
    }

    #[test]
    fn airtime_examples() {
        let p = PhyConfig {
            per_frame_overhead_ns: 100_000,
            ..PhyConfig::default()
        };
        assert_eq!(airtime(0, &p), SimDuration::from_micros(100));

        let p = PhyConfig {
            data_rate_bps: 17_300_000,
            per_frame_overhead_ns: 0,
            ..PhyConfig::default()
        };
        // 200 bits / 17.3e6 bit/s = 11560.69 ns -> ceil
        assert_eq!(airtime(25, &p), SimDuration(11_561));
        // 5 MB burst as a single unit
        let t = airtime(5 * 1_000_000, &p).as_secs_f64();
        assert!((t - 2.312).abs() < 1e-3, "{t}");
    }

    #[test]
    fn sole_transmission_delivered() {
        let mut m = Medium::new(3, phy(0.0), rng_stream(1, "channel"));
        let tx = m.begin_tx(0, SimDuration(1000), SimTime(0)).unwrap();
        assert_eq!(tx.arrivals.len(), 2);
        assert_eq!(tx.arrivals[0].start, SimTime(100));
        for a in &tx.arrivals {
            assert_eq!(m.resolve_rx(a.receiver, tx.id, false), RxResult::Delivered);
        }
    }

    #[test]
    fn overlapping_transmissions_collide_everywhere() {
        let mut m = Medium::new(3, phy(0.0), rng_stream(1, "channel"));
        let a = m.begin_tx(0, SimDuration(1000), SimTime(0)).unwrap();
        let b = m.begin_tx(1, SimDuration(1000), SimTime(500)).unwrap();
        assert_eq!(m.resolve_rx(2, a.id, false), RxResult::Collided);
        assert_eq!(m.resolve_rx(2, b.id, false), RxResult::Collided);
        // node 1 was transmitting while A arrived; node 0 while B arrived
        assert_eq!(m.resolve_rx(1, a.id, false), RxResult::Collided);
        assert_eq!(m.resolve_rx(0, b.id, false), RxResult::Collided);
    }

    #[test]
    fn certain_channel_error() {
        let mut m = Medium::new(2, phy(1.0), rng_stream(1, "channel"));
        for k in 0..20 {
            let tx = m.begin_tx(0, SimDuration(10), SimTime(k * 100)).unwrap();
            assert_eq!(m.resolve_rx(1, tx.id, false), RxResult::ChannelError);
            m.end_tx(0, tx.id);
        }
        let tx = m.begin_tx(0, SimDuration(10), SimTime(10_000)).unwrap();
        assert_eq!(m.resolve_rx(1, tx.id, true), RxResult::Delivered);
    }

    #[test]
    fn sender_cannot_double_transmit() {
        let mut m = Medium::new(2, phy(0.0), rng_stream(1, "channel"));
        m.begin_tx(0, SimDuration(1000), SimTime(0)).unwrap();
        assert_eq!(
            m.begin_tx(0, SimDuration(10), SimTime(10)).unwrap_err(),
            MediumError::SenderBusy(0)
        );
    }

    #[test]
    fn carrier_sense_and_nav() {
        let mut m = Medium::new(2, phy(0.0), rng_stream(1, "channel"));
        assert!(!m.carrier_busy(1, SimTime(0)));
        m.begin_tx(0, SimDuration(1000), SimTime(0)).unwrap();
        assert!(!m.carrier_busy(1, SimTime(50)), "not yet propagated");
        assert!(m.carrier_busy(1, SimTime(500)));
        assert!(!m.carrier_busy(1, SimTime(1100)));
        m.set_nav(1, SimTime::from_millis(5));
        assert!(m.carrier_busy(1, SimTime::from_millis(3)));
        assert!(!m.physical_busy(1, SimTime::from_millis(3)));
        assert!(!m.carrier_busy(1, SimTime::from_millis(5)));
    }

    #[test]
    fn busy_log_tiles_arrivals() {
        let mut m = Medium::new(2, phy(0.0), rng_stream(1, "channel"));
        m.enable_busy_log();
        let a = m.begin_tx(0, SimDuration(1000), SimTime(0)).unwrap();
        m.end_tx(0, a.id);
        let b = m.begin_tx(0, SimDuration(1000), SimTime(1000)).unwrap();
        let merged = merge_intervals(m.busy_log(1).unwrap().to_vec());
        assert_eq!(merged, vec![(SimTime(100), SimTime(2100))]);
        let _ = b;
    }

    proptest! {
        #[test]
        fn airtime_monotone(a in 0u64..10_000_000, b in 0u64..10_000_000, rate in 1_000u64..1_000_000_000) {
            let p = PhyConfig { data_rate_bps: rate, ..PhyConfig::default() };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(airtime(lo, &p) <= airtime(hi, &p));
        }
    }
}
