//! Workload generators: periodic bulk bursts, Poisson-triggered
//! poll/history/response cycles, and periodic deadline-bound commands.

use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::medium::{NodeId, PhyConfig};
use crate::sim::RngStream;
use crate::time::{SimDuration, SimTime};

pub type PacketId = u64;

pub const KIB: u64 = 1 << 10;
pub const MIB: u64 = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficClass {
    MissionCritical,
    LargeVolume,
    EventDriven,
    Management,
}

impl TrafficClass {
    pub const ALL: [TrafficClass; 4] = [
        TrafficClass::MissionCritical,
        TrafficClass::LargeVolume,
        TrafficClass::EventDriven,
        TrafficClass::Management,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TrafficClass::MissionCritical => "mission_critical",
            TrafficClass::LargeVolume => "large_volume",
            TrafficClass::EventDriven => "event_driven",
            TrafficClass::Management => "management",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Which leg of an event-driven cycle a message belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleStage {
    Poll,
    History,
    Fsm,
}

/// Application-level message a fragment belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MessageTag {
    pub message_id: u64,
    pub cycle: Option<(u64, CycleStage)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Packet {
    pub id: PacketId,
    pub class: TrafficClass,
    /// Application payload bytes (transport/MAC headers excluded).
    pub size_bytes: u64,
    pub created_at: SimTime,
    pub deadline: Option<SimDuration>,
    pub src: NodeId,
    pub dst: NodeId,
    pub attempt_count: u32,
    pub delivered_at: Option<SimTime>,
    pub message: Option<MessageTag>,
    /// Steering command carried by tracking traffic.
    pub command: Option<f64>,
}

impl Packet {
    pub fn absolute_deadline(&self) -> Option<SimTime> {
        self.deadline.map(|d| self.created_at + d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LargeVolumeConfig {
    pub enabled: bool,
    pub period_ms: u64,
    pub burst_bytes: u64,
    pub src: NodeId,
    pub dst: NodeId,
}

impl Default for LargeVolumeConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            period_ms: 3_000,
            burst_bytes: 5 * MIB,
            src: 1,
            dst: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventDrivenConfig {
    pub enabled: bool,
    pub interarrival_mean_s: f64,
    pub response_mean_s: f64,
    pub poll_bytes: u64,
    pub history_bytes: u64,
    pub fsm_bytes: u64,
    /// Sends poll and FSM, receives history.
    pub server: NodeId,
    pub client: NodeId,
}

impl Default for EventDrivenConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            interarrival_mean_s: 40.0,
            response_mean_s: 25.0,
            poll_bytes: 2 * KIB,
            history_bytes: 512 * KIB,
            fsm_bytes: 5 * KIB,
            server: 0,
            client: 1,
        }
    }
}

impl EventDrivenConfig {
    pub fn cycle_bytes(&self) -> u64 {
        self.poll_bytes + self.history_bytes + self.fsm_bytes
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissionCriticalConfig {
    pub enabled: bool,
    pub period_ms: u64,
    pub size_bytes: u64,
    pub deadline_ms: u64,
    pub src: NodeId,
    pub dst: NodeId,
}

impl Default for MissionCriticalConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            period_ms: 100,
            size_bytes: 25,
            deadline_ms: 100,
            src: 1,
            dst: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    /// Largest application payload carried by one frame.
    pub mtu_bytes: u64,
    /// Transport + MAC header bytes added to every data frame.
    pub header_overhead_bytes: u64,
    pub large_volume: LargeVolumeConfig,
    pub event_driven: EventDrivenConfig,
    pub mission_critical: MissionCriticalConfig,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            mtu_bytes: 1500,
            header_overhead_bytes: 66,
            large_volume: LargeVolumeConfig::default(),
            event_driven: EventDrivenConfig::default(),
            mission_critical: MissionCriticalConfig::default(),
        }
    }
}

impl TrafficConfig {
    pub fn validate(&self, n_nodes: usize, out: &mut Vec<String>) {
        if self.mtu_bytes == 0 {
            out.push("traffic.mtu_bytes must be > 0".into());
        }
        let mut node = |what: &str, n: NodeId| {
            if n >= n_nodes {
                out.push(format!("traffic.{what} = {n} is not a node (have {n_nodes})"));
            }
        };
        let lv = &self.large_volume;
        if lv.enabled {
            node("large_volume.src", lv.src);
            node("large_volume.dst", lv.dst);
        }
        let ed = &self.event_driven;
        if ed.enabled {
            node("event_driven.server", ed.server);
            node("event_driven.client", ed.client);
        }
        let mc = &self.mission_critical;
        if mc.enabled {
            node("mission_critical.src", mc.src);
            node("mission_critical.dst", mc.dst);
        }
        if lv.enabled && lv.period_ms == 0 {
            out.push("traffic.large_volume.period_ms must be > 0".into());
        }
        if lv.enabled && lv.src == lv.dst {
            out.push("traffic.large_volume src and dst must differ".into());
        }
        if ed.enabled && ed.server == ed.client {
            out.push("traffic.event_driven server and client must differ".into());
        }
        if mc.enabled && mc.src == mc.dst {
            out.push("traffic.mission_critical src and dst must differ".into());
        }
        if ed.enabled && !(ed.interarrival_mean_s > 0.0 && ed.response_mean_s >= 0.0) {
            out.push("traffic.event_driven means must be positive".into());
        }
        if mc.enabled && (mc.period_ms == 0 || mc.deadline_ms == 0) {
            out.push("traffic.mission_critical period and deadline must be > 0".into());
        }
    }
}

/// Split `total` bytes into MTU-sized fragments.
pub fn fragment(total: u64, mtu: u64) -> Vec<u64> {
    assert!(mtu > 0, "mtu must be positive");
    let full = total / mtu;
    let rest = total % mtu;
    let mut v = vec![mtu; full as usize];
    if rest > 0 {
        v.push(rest);
    }
    v
}

pub fn fragment_count(total: u64, mtu: u64) -> u64 {
    total.div_ceil(mtu)
}

/// Fixed-period burst source.
#[derive(Clone, Debug)]
pub struct LargeVolumeGen {
    period: SimDuration,
    next: SimTime,
}

impl LargeVolumeGen {
    pub fn new(cfg: &LargeVolumeConfig) -> Self {
        Self {
            period: SimDuration::from_millis(cfg.period_ms),
            next: SimTime::ZERO,
        }
    }

    /// Time of the next burst, advancing the generator.
    pub fn next_arrival(&mut self) -> SimTime {
        let t = self.next;
        self.next += self.period;
        t
    }
}

/// Strictly periodic command source: the k-th command is created at
/// `k * period`.
#[derive(Clone, Debug)]
pub struct MissionCriticalGen {
    period: SimDuration,
    k: u64,
}

impl MissionCriticalGen {
    pub fn new(period: SimDuration) -> Self {
        Self { period, k: 0 }
    }

    pub fn next_command(&mut self) -> SimTime {
        let t = SimTime(self.k * self.period.as_nanos());
        self.k += 1;
        t
    }

    /// Commands issued in a run of length `run`: one per whole period, so
    /// every command's period closes inside the run.
    pub fn count_within(&self, run: SimDuration) -> u64 {
        run.as_nanos() / self.period.as_nanos()
    }
}

/// Poisson cycle starts with exponential server response delays.
#[derive(Debug)]
pub struct EventDrivenGen {
    rng: RngStream,
    interarrival: Exp<f64>,
    response: Option<Exp<f64>>,
    next_start: SimTime,
    next_cycle: u64,
}

impl EventDrivenGen {
    pub fn new(cfg: &EventDrivenConfig, rng: RngStream) -> Self {
        let interarrival = Exp::new(1.0 / cfg.interarrival_mean_s).expect("positive mean");
        let response = (cfg.response_mean_s > 0.0)
            .then(|| Exp::new(1.0 / cfg.response_mean_s).expect("positive mean"));
        let mut g = Self {
            rng,
            interarrival,
            response,
            next_start: SimTime::ZERO,
            next_cycle: 0,
        };
        g.next_start = SimTime::ZERO + g.draw_interarrival();
        g
    }

    fn draw_interarrival(&mut self) -> SimDuration {
        SimDuration::from_secs_f64(self.interarrival.sample(&mut self.rng))
    }

    /// `(cycle id, start time)` of the next cycle, advancing the generator.
    pub fn next_cycle(&mut self) -> (u64, SimTime) {
        let out = (self.next_cycle, self.next_start);
        self.next_cycle += 1;
        let gap = self.draw_interarrival();
        self.next_start += gap;
        out
    }

    pub fn response_delay(&mut self) -> SimDuration {
        match self.response {
            Some(d) => SimDuration::from_secs_f64(d.sample(&mut self.rng)),
            None => SimDuration::ZERO,
        }
    }
}

/// Mean offered payload rate per class, bits per second.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OfferedRates {
    pub large_volume_bps: f64,
    pub event_driven_bps: f64,
    pub mission_critical_bps: f64,
    pub mission_critical_msgs_per_s: f64,
    pub total_msgs_per_s: f64,
}

impl OfferedRates {
    pub fn total_bps(&self) -> f64 {
        self.large_volume_bps + self.event_driven_bps + self.mission_critical_bps
    }

    /// Share of offered payload bits that is deadline-bound.
    pub fn critical_bit_share(&self) -> f64 {
        let t = self.total_bps();
        if t > 0.0 {
            self.mission_critical_bps / t
        } else {
            0.0
        }
    }

    /// Share of offered frames that is deadline-bound.
    pub fn critical_count_share(&self) -> f64 {
        if self.total_msgs_per_s > 0.0 {
            self.mission_critical_msgs_per_s / self.total_msgs_per_s
        } else {
            0.0
        }
    }
}

pub fn offered_rates(traffic: &TrafficConfig) -> OfferedRates {
    let mut r = OfferedRates::default();
    let mtu = traffic.mtu_bytes;
    let lv = &traffic.large_volume;
    if lv.enabled {
        let period = lv.period_ms as f64 * 1e-3;
        r.large_volume_bps = lv.burst_bytes as f64 * 8.0 / period;
        r.total_msgs_per_s += fragment_count(lv.burst_bytes, mtu) as f64 / period;
    }
    let ed = &traffic.event_driven;
    if ed.enabled {
        r.event_driven_bps = ed.cycle_bytes() as f64 * 8.0 / ed.interarrival_mean_s;
        let frags = fragment_count(ed.poll_bytes, mtu)
            + fragment_count(ed.history_bytes, mtu)
            + fragment_count(ed.fsm_bytes, mtu);
        r.total_msgs_per_s += frags as f64 / ed.interarrival_mean_s;
    }
    let mc = &traffic.mission_critical;
    if mc.enabled {
        let period = mc.period_ms as f64 * 1e-3;
        r.mission_critical_bps = mc.size_bytes as f64 * 8.0 / period;
        r.mission_critical_msgs_per_s = fragment_count(mc.size_bytes, mtu) as f64 / period;
        r.total_msgs_per_s += r.mission_critical_msgs_per_s;
    }
    r
}

/// Mean offered payload bits per second over the PHY payload rate.
pub fn offered_load(traffic: &TrafficConfig, phy: &PhyConfig) -> f64 {
    offered_rates(traffic).total_bps() / phy.data_rate_bps as f64
}
