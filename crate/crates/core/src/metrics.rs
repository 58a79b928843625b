//! Outcome classification, failure mix and windowed throughput.

use serde::{Deserialize, Serialize};

use crate::time::{SimDuration, SimTime};
use crate::traffic::{Packet, PacketId, TrafficClass};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Success,
    MissedDeadline,
    PacketLoss,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Success => "success",
            Verdict::MissedDeadline => "missed_deadline",
            Verdict::PacketLoss => "packet_loss",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "success" => Some(Verdict::Success),
            "missed_deadline" => Some(Verdict::MissedDeadline),
            "packet_loss" => Some(Verdict::PacketLoss),
            _ => None,
        }
    }

    pub fn is_failure(self) -> bool {
        self != Verdict::Success
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TxOutcome {
    pub packet_id: PacketId,
    pub class: TrafficClass,
    pub verdict: Verdict,
    pub created_at: SimTime,
    pub resolved_at: SimTime,
    pub attempts: u32,
}

impl TxOutcome {
    /// End-to-end delay: queueing, contention, airtime and propagation.
    pub fn delay(&self) -> SimDuration {
        self.resolved_at - self.created_at
    }
}

/// Verdict for a packet that has either been delivered or given up on at
/// `resolved_at`.
pub fn classify(packet: &Packet, resolved_at: SimTime) -> TxOutcome {
    let (verdict, at) = match packet.delivered_at {
        Some(delivered) => {
            let late = packet
                .deadline
                .is_some_and(|d| delivered - packet.created_at > d);
            let v = if late {
                Verdict::MissedDeadline
            } else {
                Verdict::Success
            };
            (v, delivered)
        }
        None => (Verdict::PacketLoss, resolved_at),
    };
    TxOutcome {
        packet_id: packet.id,
        class: packet.class,
        verdict,
        created_at: packet.created_at,
        resolved_at: at,
        attempts: packet.attempt_count,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureMix {
    pub missed: u64,
    pub lost: u64,
    pub missed_pct: f64,
    pub loss_pct: f64,
}

/// Percentages over failures only; `None` when there are no failures.
pub fn failure_mix<'a>(outcomes: impl IntoIterator<Item = &'a TxOutcome>) -> Option<FailureMix> {
    let (mut missed, mut lost) = (0u64, 0u64);
    for o in outcomes {
        match o.verdict {
            Verdict::MissedDeadline => missed += 1,
            Verdict::PacketLoss => lost += 1,
            Verdict::Success => {}
        }
    }
    let total = missed + lost;
    (total > 0).then(|| FailureMix {
        missed,
        lost,
        missed_pct: 100.0 * missed as f64 / total as f64,
        loss_pct: 100.0 * lost as f64 / total as f64,
    })
}

/// Delivered bytes per class in half-open windows `[k*w, (k+1)*w)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputSeries {
    pub window: SimDuration,
    bytes: Vec<[u64; 4]>,
}

impl ThroughputSeries {
    pub fn new(window: SimDuration) -> Self {
        assert!(!window.is_zero(), "window must be positive");
        Self {
            window,
            bytes: Vec::new(),
        }
    }

    pub fn record(&mut self, class: TrafficClass, at: SimTime, bytes: u64) {
        let idx = (at.as_nanos() / self.window.as_nanos()) as usize;
        if self.bytes.len() <= idx {
            self.bytes.resize(idx + 1, [0; 4]);
        }
        self.bytes[idx][class.index()] += bytes;
    }

    /// Window count tiling `[0, run_end)`, extended if anything was recorded
    /// at or after `run_end`.
    pub fn window_count(&self, run_end: SimTime) -> usize {
        let tiles = run_end.as_nanos().div_ceil(self.window.as_nanos()) as usize;
        tiles.max(self.bytes.len())
    }

    pub fn throughput(&self, class: TrafficClass, run_end: SimTime) -> Vec<u64> {
        (0..self.window_count(run_end))
            .map(|k| self.bytes.get(k).map_or(0, |w| w[class.index()]))
            .collect()
    }

    pub fn total(&self, class: TrafficClass) -> u64 {
        self.bytes.iter().map(|w| w[class.index()]).sum()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounters {
    pub generated_packets: u64,
    pub generated_bytes: u64,
    pub delivered_packets: u64,
    pub delivered_bytes: u64,
    pub lost_packets: u64,
}

/// Append-only collectors owned by one run.
#[derive(Clone, Debug)]
pub struct Metrics {
    pub outcomes: Vec<TxOutcome>,
    pub throughput: ThroughputSeries,
    pub per_class: [ClassCounters; 4],
}

impl Metrics {
    pub fn new(window: SimDuration) -> Self {
        Self {
            outcomes: Vec::new(),
            throughput: ThroughputSeries::new(window),
            per_class: [ClassCounters::default(); 4],
        }
    }

    pub fn on_generated(&mut self, p: &Packet) {
        let c = &mut self.per_class[p.class.index()];
        c.generated_packets += 1;
        c.generated_bytes += p.size_bytes;
    }

    pub fn on_delivered(&mut self, p: &Packet, at: SimTime) {
        let c = &mut self.per_class[p.class.index()];
        c.delivered_packets += 1;
        c.delivered_bytes += p.size_bytes;
        self.throughput.record(p.class, at, p.size_bytes);
    }

    /// Final verdict for a packet; only deadline-bound traffic is kept as a
    /// per-packet outcome row.
    pub fn on_resolved(&mut self, p: &Packet, resolved_at: SimTime) -> TxOutcome {
        let out = classify(p, resolved_at);
        if out.verdict == Verdict::PacketLoss {
            self.per_class[p.class.index()].lost_packets += 1;
        }
        if p.class == TrafficClass::MissionCritical {
            self.outcomes.push(out.clone());
        }
        out
    }

    pub fn counters(&self, class: TrafficClass) -> ClassCounters {
        self.per_class[class.index()]
    }

    pub fn count(&self, v: Verdict) -> u64 {
        self.outcomes.iter().filter(|o| o.verdict == v).count() as u64
    }
}
