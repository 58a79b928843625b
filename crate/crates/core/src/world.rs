//! The simulated network: traffic sources, per-node MAC state machines and
//! the shared medium, all driven by one event queue.
//!
//! In CSMA mode every node runs plain DCF over a single FIFO. In hybrid mode
//! node 0 emits a beacon at each superframe boundary, clients keep a PTP
//! estimate of the server clock and send critical traffic at slot
//! timestamps, and CSMA traffic is gated into the control and general
//! sections. Legacy nodes only honour the beacon NAV.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clocks::{periodic_sync_due, ptp_update, schedule_slot_tx, OscillatorModel, PtpEstimate, SyncRecord};
use crate::config::{MacMode, ManagerAction, NodeRole, ScenarioConfig};
use crate::dcf::{Contender, DcfParams, RetryDecision};
use crate::error::{AllocationError, ConfigError};
use crate::frame::{BeaconPayload, Dest, Frame, FrameKind, MgmtFrame, SyncEcho, ACK_BYTES};
use crate::hybrid::{
    build_reallocation, subscription_request, FrameSchedule, QueueKind, Section, SlotMap, SlotRef,
    SuperframeConfig, TdmaQueue,
};
use crate::medium::{airtime, Arrival, Medium, NodeId, RxResult, TxId};
use crate::metrics::{ClassCounters, Metrics, ThroughputSeries, TxOutcome, Verdict};
use crate::sim::{rng_stream, run_until, EventId, EventQueue, Handler, RngStream};
use crate::time::{SimDuration, SimTime};
use crate::tracking::{Tracker, TrajectorySample};
use crate::traffic::{
    fragment, CycleStage, EventDrivenGen, LargeVolumeGen, MessageTag, MissionCriticalGen, Packet, PacketId,
    TrafficClass,
};

/// RNG stream label of a node's backoff draws.
pub fn backoff_stream_label(node: NodeId) -> String {
    format!("dcf/backoff/{node}")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Ev {
    Beacon { frame: u64 },
    LargeVolume,
    EventCycle,
    EventFsm { cycle: u64 },
    Command { k: u64 },
    Custom { idx: usize },
    Inject { idx: usize },
    Wake { node: NodeId },
    Backoff { node: NodeId, q: u8 },
    TxEnd { node: NodeId, tx: TxId },
    RxStart { node: NodeId, tx: TxId },
    RxEnd { node: NodeId, tx: TxId },
    AckTimeout { node: NodeId },
    SendAck { node: NodeId, to: NodeId, seq: u64 },
    NavEnd { node: NodeId },
    TdmaFire { node: NodeId },
}

impl Ev {
    fn trace_key(&self) -> [u64; 3] {
        match *self {
            Ev::Beacon { frame } => [1, frame, 0],
            Ev::LargeVolume => [2, 0, 0],
            Ev::EventCycle => [3, 0, 0],
            Ev::EventFsm { cycle } => [4, cycle, 0],
            Ev::Command { k } => [5, k, 0],
            Ev::Custom { idx } => [6, idx as u64, 0],
            Ev::Inject { idx } => [7, idx as u64, 0],
            Ev::Wake { node } => [8, node as u64, 0],
            Ev::Backoff { node, q } => [9, node as u64, u64::from(q)],
            Ev::TxEnd { node, tx } => [10, node as u64, tx.0],
            Ev::RxStart { node, tx } => [11, node as u64, tx.0],
            Ev::RxEnd { node, tx } => [12, node as u64, tx.0],
            Ev::AckTimeout { node } => [13, node as u64, 0],
            Ev::SendAck { node, to, seq } => [14, (node as u64) << 32 | to as u64, seq],
            Ev::NavEnd { node } => [15, node as u64, 0],
            Ev::TdmaFire { node } => [16, node as u64, 0],
        }
    }
}

/// What a frame on the air carried, for the transmission log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TxKind {
    Beacon { frame: u64 },
    Data { packet: PacketId, class: TrafficClass },
    Ack { seq: u64 },
    Mgmt { what: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TxRecord {
    pub tx: u64,
    pub sender: NodeId,
    pub start: SimTime,
    pub end: SimTime,
    pub kind: TxKind,
    pub queue: Option<QueueKind>,
    pub slot: Option<(u64, u16)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RxRecord {
    pub tx: u64,
    pub receiver: NodeId,
    pub at: SimTime,
    pub result: RxResult,
}

/// Counters that explain a run beyond the outcome taxonomy.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub beacons_sent: u64,
    pub beacons_deferred: u64,
    pub beacons_missed: u64,
    pub sync_rounds_completed: u64,
    pub sync_rounds_dropped: u64,
    pub suspect_ptp_samples: u64,
    pub max_sync_error_ns: i64,
    pub tdma_transmissions: u64,
    pub tdma_stale_timestamps: u64,
    pub tdma_outside_slot: u64,
    pub max_landing_error_ns: i64,
    pub critical_collisions: u64,
    pub collisions: u64,
    pub channel_errors: u64,
    pub acks_suppressed: u64,
    pub gen_airtime_in_nav_ns: u64,
    pub nav_intrusions: u64,
    pub slot_maps_applied: u64,
    pub event_cycles_started: u64,
    pub event_cycles_completed: u64,
    pub event_messages_failed: u64,
    pub management_frames_lost: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManagerEvent {
    pub at_s: f64,
    pub action: String,
    pub accepted: bool,
    pub detail: String,
}

/// Everything a finished run produced.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: ScenarioConfig,
    pub run_end: SimTime,
    /// One row per resolved mission-critical packet, by packet id.
    pub outcomes: Vec<TxOutcome>,
    pub throughput: ThroughputSeries,
    pub counters: [ClassCounters; 4],
    pub critical_generated: u64,
    pub critical_in_flight: u64,
    pub diagnostics: Diagnostics,
    /// `(time, |o_hat - true offset|)` at every client slot transmission
    /// after the first completed sync round.
    pub sync_errors: Vec<(SimTime, i64)>,
    /// `(time, node, seconds since the last completed sync round)` at beacons.
    pub sync_age: Vec<(SimTime, NodeId, Option<f64>)>,
    pub manager_events: Vec<ManagerEvent>,
    pub warnings: Vec<String>,
    pub trajectory: Option<Vec<TrajectorySample>>,
    pub tracking_rmse: Option<f64>,
    pub commands_applied: u64,
    pub commands_discarded: u64,
    pub events_processed: u64,
    pub trace_digest: Option<String>,
    pub tx_log: Option<Vec<TxRecord>>,
    pub rx_log: Option<Vec<RxRecord>>,
}

impl RunResult {
    pub fn count(&self, v: Verdict) -> u64 {
        self.outcomes.iter().filter(|o| o.verdict == v).count() as u64
    }

    pub fn delivered_bytes(&self, class: TrafficClass) -> u64 {
        self.counters[class.index()].delivered_bytes
    }
}

#[derive(Clone, Debug)]
enum Payload {
    Packet(PacketId),
    SyncResponse,
    SlotMap(SlotMap),
    AssocRequest,
    AssocResponse,
}

#[derive(Clone, Debug)]
struct QItem {
    payload: Payload,
    dst: NodeId,
    bytes: u64,
}

#[derive(Debug, Default)]
struct CsmaQueue {
    items: VecDeque<QItem>,
    head: Option<Contender>,
}

#[derive(Clone, Copy, Debug)]
struct Outstanding {
    q: QueueKind,
    seq: u64,
    timeout: Option<EventId>,
}

#[derive(Clone, Debug)]
struct SyncRound {
    s_ap: i64,
    s_tilde: i64,
    beacon_arrival: SimTime,
    sent: Vec<i64>,
}

#[derive(Debug)]
struct NodeState {
    role: NodeRole,
    osc: OscillatorModel,
    est: PtpEstimate,
    sched: Option<FrameSchedule>,
    map: SlotMap,
    layout: SuperframeConfig,
    pending: Option<(SlotMap, SuperframeConfig)>,
    queues: [CsmaQueue; 2],
    tdma: TdmaQueue,
    tdma_timer: Option<EventId>,
    outstanding: Option<Outstanding>,
    transmitting: Option<TxId>,
    round: Option<SyncRound>,
    sync_queued: bool,
    wake: Option<EventId>,
    associated: bool,
    assoc_queued: bool,
    rng: RngStream,
    last_rx_seq: HashMap<NodeId, u64>,
}

impl NodeState {
    fn is_member(&self) -> bool {
        matches!(self.role, NodeRole::Server | NodeRole::Client)
    }

    /// Map and layout in force for `frame`, as far as this node knows.
    fn map_for(&self, frame: u64) -> (&SlotMap, &SuperframeConfig) {
        match &self.pending {
            Some((m, l)) if frame >= m.effective_from => (m, l),
            _ => (&self.map, &self.layout),
        }
    }
}

fn qidx(q: QueueKind) -> usize {
    match q {
        QueueKind::CsmaCtl => 0,
        QueueKind::CsmaGen => 1,
        QueueKind::Tdma => unreachable!("TDMA traffic has no contention queue"),
    }
}

const CSMA_QUEUES: [QueueKind; 2] = [QueueKind::CsmaCtl, QueueKind::CsmaGen];

#[derive(Debug)]
struct InFlight {
    sender: NodeId,
    frame: Frame,
    end: SimTime,
    remaining: usize,
    arrivals: Vec<Arrival>,
    slot: Option<SlotRef>,
}

#[derive(Clone, Debug)]
struct MessageState {
    cycle: Option<(u64, CycleStage)>,
    total: u64,
    delivered: u64,
    failed: bool,
}

#[derive(Clone, Debug)]
struct CustomPacket {
    at: SimTime,
    src: NodeId,
    dst: NodeId,
    class: TrafficClass,
    size_bytes: u64,
}

struct Core {
    cfg: ScenarioConfig,
    hybrid: bool,
    end: SimTime,
    t_f: SimDuration,
    dcf: DcfParams,
    beacon_airtime: SimDuration,
    ack_airtime: SimDuration,
    ack_timeout: SimDuration,
    max_delay: SimDuration,
    medium: Medium,
    nodes: Vec<NodeState>,
    packets: HashMap<PacketId, Packet>,
    next_packet: PacketId,
    messages: HashMap<u64, MessageState>,
    next_message: u64,
    in_flight: HashMap<TxId, InFlight>,
    next_seq: u64,
    metrics: Metrics,
    critical_generated: u64,
    lv_gen: LargeVolumeGen,
    ed_gen: EventDrivenGen,
    mc_gen: MissionCriticalGen,
    mc_count: u64,
    customs: Vec<CustomPacket>,
    echoes: BTreeMap<NodeId, (i64, i64)>,
    latest_map: (SlotMap, SuperframeConfig),
    diag: Diagnostics,
    sync_errors: Vec<(SimTime, i64)>,
    sync_age: Vec<(SimTime, NodeId, Option<f64>)>,
    manager_events: Vec<ManagerEvent>,
    warnings: Vec<String>,
    tracker: Option<Tracker>,
    trace: Option<Sha256>,
    tx_log: Option<Vec<TxRecord>>,
    rx_log: Option<Vec<RxRecord>>,
    events: u64,
}

/// A configured run that can be stepped, inspected and finished.
pub struct World {
    queue: EventQueue<Ev>,
    core: Core,
}

impl World {
    pub fn new(cfg: &ScenarioConfig) -> Result<World, ConfigError> {
        cfg.validate()?;
        let layout = cfg.superframe_config().expect("validated");
        let seed = cfg.seed;
        let n = cfg.n_nodes();
        let medium = Medium::new(n, cfg.phy.clone(), rng_stream(seed, "medium/channel"));
        let map = SlotMap {
            version: 0,
            owners: cfg.superframe.slot_owners.clone(),
            tau_tdma: SimDuration(cfg.superframe.tau_tdma_ns),
            effective_from: 0,
        };
        let nodes = cfg
            .nodes
            .iter()
            .enumerate()
            .map(|(i, nc)| NodeState {
                role: nc.role,
                osc: nc.oscillator(),
                est: PtpEstimate::default(),
                sched: None,
                map: map.clone(),
                layout,
                pending: None,
                queues: Default::default(),
                tdma: TdmaQueue::default(),
                tdma_timer: None,
                outstanding: None,
                transmitting: None,
                round: None,
                sync_queued: false,
                wake: None,
                associated: nc.associated || nc.role == NodeRole::Server,
                assoc_queued: false,
                rng: rng_stream(seed, &backoff_stream_label(i)),
                last_rx_seq: HashMap::new(),
            })
            .collect();
        let t_f = SimDuration(cfg.superframe.superframe_ns);
        let mc = &cfg.traffic.mission_critical;
        let mc_gen = MissionCriticalGen::new(SimDuration::from_millis(mc.period_ms));
        let mc_count = if mc.enabled { mc_gen.count_within(cfg.duration()) } else { 0 };
        let core = Core {
            hybrid: cfg.mac_mode == MacMode::Hybrid,
            end: SimTime::ZERO + cfg.duration(),
            t_f,
            dcf: cfg.dcf.clone(),
            beacon_airtime: cfg.beacon_airtime(),
            ack_airtime: airtime(ACK_BYTES, &cfg.phy),
            ack_timeout: cfg.dcf.ack_timeout(&cfg.phy),
            max_delay: cfg.phy.max_link_delay(),
            medium,
            nodes,
            packets: HashMap::new(),
            next_packet: 0,
            messages: HashMap::new(),
            next_message: 0,
            in_flight: HashMap::new(),
            next_seq: 0,
            metrics: Metrics::new(SimDuration::from_millis(cfg.metrics.window_ms)),
            critical_generated: 0,
            lv_gen: LargeVolumeGen::new(&cfg.traffic.large_volume),
            ed_gen: EventDrivenGen::new(&cfg.traffic.event_driven, rng_stream(seed, "traffic/event_driven")),
            mc_gen,
            mc_count,
            customs: Vec::new(),
            echoes: BTreeMap::new(),
            latest_map: (map, layout),
            diag: Diagnostics::default(),
            sync_errors: Vec::new(),
            sync_age: Vec::new(),
            manager_events: Vec::new(),
            warnings: Vec::new(),
            tracker: cfg.tracking.enabled.then(|| Tracker::new(&cfg.tracking)),
            trace: None,
            tx_log: None,
            rx_log: None,
            events: 0,
            cfg: cfg.clone(),
        };
        let mut w = World {
            queue: EventQueue::new(),
            core,
        };
        w.seed_events();
        Ok(w)
    }

    fn seed_events(&mut self) {
        let c = &mut self.core;
        let q = &mut self.queue;
        if c.hybrid {
            q.schedule(SimTime::ZERO, Ev::Beacon { frame: 0 }).expect("t=0");
        }
        let t = &c.cfg.traffic;
        if t.large_volume.enabled && t.large_volume.burst_bytes > 0 {
            let at = c.lv_gen.next_arrival();
            q.schedule(at, Ev::LargeVolume).expect("future");
        }
        if c.mc_count > 0 {
            let at = c.mc_gen.next_command();
            q.schedule(at, Ev::Command { k: 0 }).expect("future");
        }
        if t.event_driven.enabled {
            c.schedule_next_cycle(q);
        }
        let mut skipped = Vec::new();
        for (idx, inj) in c.cfg.injections.iter().enumerate() {
            let at = SimTime::ZERO + SimDuration::from_secs_f64(inj.at_s);
            if at > c.end {
                skipped.push(format!(
                    "injection {idx} at {} s is beyond the run duration ({} s); ignored",
                    inj.at_s, c.cfg.duration_s
                ));
            } else if !c.hybrid {
                skipped.push(format!("injection {idx} at {} s ignored: slot management needs hybrid mode", inj.at_s));
            } else {
                q.schedule(at, Ev::Inject { idx }).expect("future");
            }
        }
        c.warnings.extend(skipped);
        if c.hybrid {
            let server_sched = FrameSchedule {
                index: 0,
                start_local: 0,
                t_f: c.t_f,
            };
            c.nodes[0].sched = Some(server_sched);
        }
    }

    /// Inject an extra packet at `at`, outside the configured generators.
    pub fn schedule_packet(&mut self, at: SimTime, src: NodeId, dst: NodeId, class: TrafficClass, size_bytes: u64) {
        let idx = self.core.customs.len();
        self.core.customs.push(CustomPacket {
            at,
            src,
            dst,
            class,
            size_bytes,
        });
        self.queue.schedule(at, Ev::Custom { idx }).expect("custom packet in the past");
    }

    pub fn enable_tx_log(&mut self) {
        self.core.tx_log = Some(Vec::new());
        self.core.rx_log = Some(Vec::new());
    }

    pub fn enable_trace_digest(&mut self) {
        self.core.trace = Some(Sha256::new());
    }

    pub fn enable_busy_log(&mut self) {
        self.core.medium.enable_busy_log();
    }

    pub fn busy_log(&self, node: NodeId) -> Option<&[(SimTime, SimTime)]> {
        self.core.medium.busy_log(node)
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    /// Process every event up to and including `t` (capped at the run end).
    pub fn run_until(&mut self, t: SimTime) {
        let t = t.min(self.core.end);
        if t < self.queue.now() {
            return;
        }
        let n = run_until(&mut self.queue, &mut self.core, t).expect("end is not in the past");
        self.core.events += n;
    }

    pub fn ptp_estimate(&self, node: NodeId) -> PtpEstimate {
        self.core.nodes[node].est
    }

    pub fn tdma_queue_len(&self, node: NodeId) -> usize {
        self.core.nodes[node].tdma.len()
    }

    pub fn csma_queue_len(&self, node: NodeId, q: QueueKind) -> usize {
        self.core.nodes[node].queues[qidx(q)].items.len()
    }

    pub fn active_slot_map(&self, node: NodeId) -> &SlotMap {
        &self.core.nodes[node].map
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.core.diag
    }

    pub fn tx_log(&self) -> Option<&[TxRecord]> {
        self.core.tx_log.as_deref()
    }

    pub fn finish(mut self) -> RunResult {
        let end = self.core.end;
        self.run_until(end);
        let c = self.core;
        let mut outcomes = c.metrics.outcomes;
        outcomes.sort_by_key(|o| o.packet_id);
        let critical_in_flight = c.critical_generated - outcomes.len() as u64;
        let (trajectory, rmse, applied, discarded) = match c.tracker {
            Some(mut t) => {
                t.finish();
                let r = t.rmse();
                let (a, d) = (t.applied(), t.discarded());
                (Some(t.samples().to_vec()), Some(r), a, d)
            }
            None => (None, None, 0, 0),
        };
        RunResult {
            config: c.cfg,
            run_end: end,
            outcomes,
            throughput: c.metrics.throughput,
            counters: c.metrics.per_class,
            critical_generated: c.critical_generated,
            critical_in_flight,
            diagnostics: c.diag,
            sync_errors: c.sync_errors,
            sync_age: c.sync_age,
            manager_events: c.manager_events,
            warnings: c.warnings,
            trajectory,
            tracking_rmse: rmse,
            commands_applied: applied,
            commands_discarded: discarded,
            events_processed: c.events,
            trace_digest: c.trace.map(|h| {
                h.finalize().iter().map(|b| format!("{b:02x}")).collect()
            }),
            tx_log: c.tx_log,
            rx_log: c.rx_log,
        }
    }
}

/// Validate, run to the configured duration and collect the results.
pub fn run(cfg: &ScenarioConfig) -> Result<RunResult, ConfigError> {
    Ok(World::new(cfg)?.finish())
}

impl Handler<Ev> for Core {
    fn handle(&mut self, id: EventId, ev: Ev, q: &mut EventQueue<Ev>) {
        if let Some(h) = self.trace.as_mut() {
            h.update(id.fire_at.as_nanos().to_le_bytes());
            h.update(id.seq.to_le_bytes());
            for k in ev.trace_key() {
                h.update(k.to_le_bytes());
            }
        }
        let now = id.fire_at;
        match ev {
            Ev::Beacon { frame } => self.on_beacon_due(q, now, frame),
            Ev::LargeVolume => self.on_large_volume(q, now),
            Ev::EventCycle => self.on_event_cycle(q, now),
            Ev::EventFsm { cycle } => self.on_event_fsm(q, now, cycle),
            Ev::Command { k } => self.on_command(q, now, k),
            Ev::Custom { idx } => {
                let c = self.customs[idx].clone();
                debug_assert_eq!(c.at, now);
                let pid = self.new_packet(now, c.class, c.size_bytes, c.src, c.dst, None, None);
                self.submit_packet(q, now, pid);
            }
            Ev::Inject { idx } => self.on_inject(q, now, idx),
            Ev::Wake { node } => {
                self.nodes[node].wake = None;
                self.schedule_wake(q, now, node);
                self.reevaluate(q, now, node);
            }
            Ev::Backoff { node, q: qi } => self.on_backoff(q, now, node, qi as usize),
            Ev::TxEnd { node, tx } => self.on_tx_end(q, now, node, tx),
            Ev::RxStart { node, .. } => self.reevaluate(q, now, node),
            Ev::RxEnd { node, tx } => self.on_rx_end(q, now, node, tx),
            Ev::AckTimeout { node } => self.on_ack_timeout(q, now, node),
            Ev::SendAck { node, to, seq } => self.send_ack(q, now, node, to, seq),
            Ev::NavEnd { node } => self.reevaluate(q, now, node),
            Ev::TdmaFire { node } => self.on_tdma_fire(q, now, node),
        }
    }
}

impl Core {
    // ---- traffic -------------------------------------------------------

    #[allow(clippy::too_many_arguments)]
    fn new_packet(
        &mut self,
        now: SimTime,
        class: TrafficClass,
        size_bytes: u64,
        src: NodeId,
        dst: NodeId,
        message: Option<MessageTag>,
        command: Option<f64>,
    ) -> PacketId {
        let id = self.next_packet;
        self.next_packet += 1;
        let deadline = (class == TrafficClass::MissionCritical)
            .then(|| SimDuration::from_millis(self.cfg.traffic.mission_critical.deadline_ms));
        let p = Packet {
            id,
            class,
            size_bytes,
            created_at: now,
            deadline,
            src,
            dst,
            attempt_count: 0,
            delivered_at: None,
            message,
            command,
        };
        self.metrics.on_generated(&p);
        if class == TrafficClass::MissionCritical {
            self.critical_generated += 1;
        }
        self.packets.insert(id, p);
        id
    }

    #[allow(clippy::too_many_arguments)]
    fn new_message(
        &mut self,
        q: &mut EventQueue<Ev>,
        now: SimTime,
        class: TrafficClass,
        bytes: u64,
        src: NodeId,
        dst: NodeId,
        cycle: Option<(u64, CycleStage)>,
    ) {
        let frags = fragment(bytes, self.cfg.traffic.mtu_bytes);
        if frags.is_empty() {
            return;
        }
        let message_id = self.next_message;
        self.next_message += 1;
        self.messages.insert(
            message_id,
            MessageState {
                cycle,
                total: frags.len() as u64,
                delivered: 0,
                failed: false,
            },
        );
        for size in frags {
            let tag = MessageTag { message_id, cycle };
            let pid = self.new_packet(now, class, size, src, dst, Some(tag), None);
            self.submit_packet(q, now, pid);
        }
    }

    fn on_large_volume(&mut self, q: &mut EventQueue<Ev>, now: SimTime) {
        let lv = self.cfg.traffic.large_volume.clone();
        self.new_message(q, now, TrafficClass::LargeVolume, lv.burst_bytes, lv.src, lv.dst, None);
        let next = self.lv_gen.next_arrival();
        if next < self.end {
            q.schedule(next, Ev::LargeVolume).expect("future");
        }
    }

    fn schedule_next_cycle(&mut self, q: &mut EventQueue<Ev>) {
        let (_, at) = self.ed_gen.next_cycle();
        if at < self.end {
            q.schedule(at, Ev::EventCycle).expect("future");
        }
    }

    fn on_event_cycle(&mut self, q: &mut EventQueue<Ev>, now: SimTime) {
        // cycles are numbered in start order
        let cycle = self.diag.event_cycles_started;
        self.diag.event_cycles_started += 1;
        let ed = self.cfg.traffic.event_driven.clone();
        self.new_message(
            q,
            now,
            TrafficClass::EventDriven,
            ed.poll_bytes,
            ed.server,
            ed.client,
            Some((cycle, CycleStage::Poll)),
        );
        self.schedule_next_cycle(q);
    }

    fn on_event_fsm(&mut self, q: &mut EventQueue<Ev>, now: SimTime, cycle: u64) {
        let ed = self.cfg.traffic.event_driven.clone();
        self.new_message(
            q,
            now,
            TrafficClass::EventDriven,
            ed.fsm_bytes,
            ed.server,
            ed.client,
            Some((cycle, CycleStage::Fsm)),
        );
    }

    fn on_message_delivered(&mut self, q: &mut EventQueue<Ev>, now: SimTime, tag: MessageTag) {
        let Some(m) = self.messages.get_mut(&tag.message_id) else {
            return;
        };
        m.delivered += 1;
        if m.delivered < m.total {
            return;
        }
        let cycle = m.cycle;
        self.messages.remove(&tag.message_id);
        let ed = self.cfg.traffic.event_driven.clone();
        match cycle {
            Some((c, CycleStage::Poll)) => self.new_message(
                q,
                now,
                TrafficClass::EventDriven,
                ed.history_bytes,
                ed.client,
                ed.server,
                Some((c, CycleStage::History)),
            ),
            Some((c, CycleStage::History)) => {
                let at = now + self.ed_gen.response_delay();
                if at < self.end {
                    q.schedule(at, Ev::EventFsm { cycle: c }).expect("future");
                }
            }
            Some((_, CycleStage::Fsm)) => self.diag.event_cycles_completed += 1,
            None => {}
        }
    }

    fn on_message_fragment_lost(&mut self, tag: MessageTag) {
        if let Some(m) = self.messages.get_mut(&tag.message_id) {
            if !m.failed {
                m.failed = true;
                self.diag.event_messages_failed += 1;
            }
        }
    }

    fn on_command(&mut self, q: &mut EventQueue<Ev>, now: SimTime, k: u64) {
        let mc = self.cfg.traffic.mission_critical.clone();
        let command = match self.tracker.as_mut() {
            Some(t) if t.is_active(now) => Some(t.command_at(now)),
            _ => None,
        };
        let pid = self.new_packet(now, TrafficClass::MissionCritical, mc.size_bytes, mc.src, mc.dst, None, command);
        self.submit_packet(q, now, pid);
        if k + 1 < self.mc_count {
            let at = self.mc_gen.next_command();
            q.schedule(at, Ev::Command { k: k + 1 }).expect("future");
        }
    }

    /// Hand a fresh packet to its source's MAC.
    fn submit_packet(&mut self, q: &mut EventQueue<Ev>, now: SimTime, pid: PacketId) {
        let p = &self.packets[&pid];
        let (src, dst, class, size) = (p.src, p.dst, p.class, p.size_bytes);
        let bytes = self.cfg.data_frame_bytes(size);
        let kind = if !self.hybrid || !self.nodes[src].is_member() {
            QueueKind::CsmaGen
        } else {
            QueueKind::for_class(class)
        };
        if kind == QueueKind::Tdma {
            self.nodes[src].tdma.push(pid, SlotRef { frame: 0, slot: 0 }, i64::MAX);
            self.restamp_tdma(q, now, src);
        } else {
            self.enqueue_csma(q, now, src, kind, QItem {
                payload: Payload::Packet(pid),
                dst,
                bytes,
            });
        }
    }

    fn enqueue_csma(&mut self, q: &mut EventQueue<Ev>, now: SimTime, node: NodeId, kind: QueueKind, item: QItem) {
        let ns = &mut self.nodes[node];
        let cq = &mut ns.queues[qidx(kind)];
        cq.items.push_back(item);
        if cq.head.is_none() {
            cq.head = Some(Contender::new(&self.dcf, &mut ns.rng));
            self.reevaluate(q, now, node);
        }
    }

    // ---- contention ----------------------------------------------------

    /// True-time end of `section` in the frame containing `now`, for a
    /// hybrid member; `None` means unlimited.
    fn section_end(&self, node: NodeId, now: SimTime) -> Option<(Section, SimTime)> {
        let ns = &self.nodes[node];
        let sched = ns.sched?;
        let local = ns.osc.local_read(now);
        let (frame, off) = sched.locate(local);
        let (_, layout) = ns.map_for(frame);
        let section = layout.section_at(off);
        let end_local = sched.start_of(frame) + layout.section_end(section).as_i64();
        Some((section, ns.osc.true_time_at(end_local)))
    }

    /// Whether `node` may count down for queue `kind` at `now`, and the
    /// latest time its frame exchange must be over.
    fn contention_window(&self, node: NodeId, kind: QueueKind, now: SimTime) -> Option<Option<SimTime>> {
        let ns = &self.nodes[node];
        if ns.transmitting.is_some() || ns.outstanding.is_some() {
            return None;
        }
        if self.medium.physical_busy(node, now) {
            return None;
        }
        if self.hybrid && ns.is_member() {
            if !ns.associated && kind == QueueKind::CsmaGen {
                return None;
            }
            let (section, end) = self.section_end(node, now)?;
            if section != kind.section() {
                return None;
            }
            if kind == QueueKind::CsmaGen && self.medium.nav_active(node, now) {
                return None;
            }
            Some(Some(end))
        } else {
            if self.medium.nav_active(node, now) {
                return None;
            }
            Some(None)
        }
    }

    /// Airtime plus everything that must follow it inside the section.
    fn exchange_time(&self, item: &QItem) -> SimDuration {
        let guard = SimDuration(self.cfg.superframe.guard_ns);
        airtime(item.bytes, &self.cfg.phy) + self.dcf.sifs() + self.ack_airtime + self.max_delay * 2 + guard
    }

    fn reevaluate(&mut self, q: &mut EventQueue<Ev>, now: SimTime, node: NodeId) {
        for kind in CSMA_QUEUES {
            let qi = qidx(kind);
            if self.nodes[node].queues[qi].head.is_none() {
                continue;
            }
            let window = self.contention_window(node, kind, now);
            let exchange = self.exchange_time(self.nodes[node].queues[qi].items.front().expect("head implies item"));
            let dcf = self.dcf.clone();
            let c = self.nodes[node].queues[qi].head.as_mut().expect("checked");
            match window {
                Some(limit) => {
                    if c.expiry.is_some() {
                        continue;
                    }
                    let fire = now + dcf.difs() + dcf.slot() * u64::from(c.backoff_remaining());
                    if limit.is_some_and(|l| fire + exchange > l) {
                        continue;
                    }
                    let at = c.resume(now, &dcf);
                    debug_assert_eq!(at, fire);
                    let id = q.schedule(at, Ev::Backoff { node, q: qi as u8 }).expect("future");
                    c.expiry = Some(id);
                }
                None => {
                    if let Some(id) = c.expiry.take() {
                        q.cancel(id);
                        c.pause(now, &dcf);
                    }
                }
            }
        }
    }

    fn on_backoff(&mut self, q: &mut EventQueue<Ev>, now: SimTime, node: NodeId, qi: usize) {
        let c = self.nodes[node].queues[qi].head.as_mut().expect("expiry implies head");
        c.expire();
        let kind = CSMA_QUEUES[qi];
        // pause any countdown in the other queue; it resumes after this exchange
        let other = 1 - qi;
        if let Some(o) = self.nodes[node].queues[other].head.as_mut() {
            if let Some(id) = o.expiry.take() {
                q.cancel(id);
                o.pause(now, &self.dcf);
            }
        }
        self.transmit_csma(q, now, node, kind);
    }

    fn transmit_csma(&mut self, q: &mut EventQueue<Ev>, now: SimTime, node: NodeId, kind: QueueKind) {
        let item = self.nodes[node].queues[qidx(kind)]
            .items
            .front()
            .cloned()
            .expect("backoff for an empty queue");
        let seq = self.next_seq;
        self.next_seq += 1;
        let frame_kind = match &item.payload {
            Payload::Packet(pid) => {
                let p = self.packets.get_mut(pid).expect("queued packet exists");
                p.attempt_count += 1;
                FrameKind::Data(*pid)
            }
            Payload::SyncResponse => {
                let ns = &mut self.nodes[node];
                let s_response = ns.osc.local_read(now);
                if let Some(r) = ns.round.as_mut() {
                    r.sent.push(s_response);
                }
                FrameKind::Mgmt(
                    MgmtFrame::SyncResponse {
                        node: node as u16,
                        s_response,
                    }
                    .encode(),
                )
            }
            Payload::SlotMap(map) => {
                let mut m = map.clone();
                m.effective_from = now.as_nanos() / self.t_f.as_nanos() + 1;
                // remember the stamp so the acknowledged copy can be applied
                if let Some(front) = self.nodes[node].queues[qidx(kind)].items.front_mut() {
                    front.payload = Payload::SlotMap(m.clone());
                }
                FrameKind::Mgmt(MgmtFrame::SlotMap(m.to_payload()).encode())
            }
            Payload::AssocRequest => FrameKind::Mgmt(MgmtFrame::AssocRequest { node: node as u16 }.encode()),
            Payload::AssocResponse => FrameKind::Mgmt(
                MgmtFrame::AssocResponse {
                    node: item.dst as u16,
                    accepted: true,
                }
                .encode(),
            ),
        };
        let frame = Frame {
            src: node,
            dst: Dest::Unicast(item.dst),
            seq,
            size_bytes: item.bytes,
            kind: frame_kind,
        };
        self.nodes[node].outstanding = Some(Outstanding {
            q: kind,
            seq,
            timeout: None,
        });
        self.start_tx(q, now, node, frame, Some(kind), None);
    }

    fn start_tx(
        &mut self,
        q: &mut EventQueue<Ev>,
        now: SimTime,
        node: NodeId,
        frame: Frame,
        queue: Option<QueueKind>,
        slot: Option<SlotRef>,
    ) {
        let dur = airtime(frame.size_bytes, &self.cfg.phy);
        let start = self.medium.begin_tx(node, dur, now).expect("sender checked idle");
        self.nodes[node].transmitting = Some(start.id);
        q.schedule(start.end, Ev::TxEnd { node, tx: start.id }).expect("future");
        for a in &start.arrivals {
            q.schedule(a.start, Ev::RxStart { node: a.receiver, tx: start.id }).expect("future");
            q.schedule(a.end, Ev::RxEnd { node: a.receiver, tx: start.id }).expect("future");
        }
        if queue == Some(QueueKind::CsmaGen) && self.hybrid {
            self.check_nav_shield(node, now, start.end);
        }
        if let Some(log) = self.tx_log.as_mut() {
            let kind = match &frame.kind {
                FrameKind::Data(pid) => TxKind::Data {
                    packet: *pid,
                    class: self.packets[pid].class,
                },
                FrameKind::Ack(s) => TxKind::Ack { seq: *s },
                FrameKind::Mgmt(bytes) => match MgmtFrame::decode(bytes) {
                    Ok(MgmtFrame::Beacon(b)) => TxKind::Beacon {
                        frame: b.superframe_index,
                    },
                    Ok(m) => TxKind::Mgmt {
                        what: mgmt_name(&m).to_string(),
                    },
                    Err(_) => TxKind::Mgmt { what: "invalid".into() },
                },
            };
            log.push(TxRecord {
                tx: start.id.0,
                sender: node,
                start: now,
                end: start.end,
                kind,
                queue,
                slot: slot.map(|s| (s.frame, s.slot)),
            });
        }
        let remaining = start.arrivals.len();
        self.in_flight.insert(
            start.id,
            InFlight {
                sender: node,
                frame,
                end: start.end,
                remaining,
                arrivals: start.arrivals,
                slot,
            },
        );
        // everyone else on this node stops counting while it transmits
        self.reevaluate(q, now, node);
    }

    /// General-section airtime must stay out of `[frame start, general
    /// section start)` of every frame.
    fn check_nav_shield(&mut self, node: NodeId, start: SimTime, end: SimTime) {
        let t_f = self.t_f.as_nanos();
        let server_layout = self.nodes[0].layout;
        let first = start.as_nanos() / t_f;
        let last = end.as_nanos().saturating_sub(1) / t_f;
        let mut overlap = 0u64;
        for f in first..=last {
            let ws = f * t_f;
            let we = ws + server_layout.gen_start().as_nanos();
            let s = start.as_nanos().max(ws);
            let e = end.as_nanos().min(we);
            if e > s {
                overlap += e - s;
            }
        }
        if overlap == 0 {
            return;
        }
        let ns = &self.nodes[node];
        if ns.is_member() && ns.sched.is_some() {
            self.diag.gen_airtime_in_nav_ns += overlap;
        } else {
            self.diag.nav_intrusions += 1;
        }
    }

    fn on_tx_end(&mut self, q: &mut EventQueue<Ev>, now: SimTime, node: NodeId, tx: TxId) {
        self.medium.end_tx(node, tx);
        let ns = &mut self.nodes[node];
        if ns.transmitting == Some(tx) {
            ns.transmitting = None;
        }
        if let Some(o) = ns.outstanding.as_mut() {
            if o.timeout.is_none() {
                // an ACK ending exactly at the timeout still counts
                let at = now + self.ack_timeout + SimDuration(1);
                let id = q.schedule(at, Ev::AckTimeout { node }).expect("future");
                o.timeout = Some(id);
            }
        }
        self.reevaluate(q, now, node);
    }

    fn on_ack_timeout(&mut self, q: &mut EventQueue<Ev>, now: SimTime, node: NodeId) {
        let Some(o) = self.nodes[node].outstanding.take() else {
            return;
        };
        let qi = qidx(o.q);
        let ns = &mut self.nodes[node];
        let c = ns.queues[qi].head.as_mut().expect("outstanding frame has a head");
        match c.on_failure(&self.dcf, &mut ns.rng) {
            RetryDecision::Retry => {}
            RetryDecision::GiveUp => {
                let item = self.pop_head(node, qi);
                self.on_give_up(q, now, node, o.q, item);
            }
        }
        self.reevaluate(q, now, node);
    }

    fn pop_head(&mut self, node: NodeId, qi: usize) -> QItem {
        let ns = &mut self.nodes[node];
        let cq = &mut ns.queues[qi];
        let item = cq.items.pop_front().expect("head exists");
        cq.head = if cq.items.is_empty() {
            None
        } else {
            Some(Contender::new(&self.dcf, &mut ns.rng))
        };
        item
    }

    fn on_give_up(&mut self, q: &mut EventQueue<Ev>, now: SimTime, node: NodeId, kind: QueueKind, item: QItem) {
        match item.payload {
            Payload::Packet(pid) => self.resolve_packet(now, pid),
            Payload::SyncResponse => {
                self.nodes[node].sync_queued = false;
                self.diag.management_frames_lost += 1;
            }
            Payload::SlotMap(_) | Payload::AssocRequest | Payload::AssocResponse => {
                // control traffic is retried until it gets through
                self.diag.management_frames_lost += 1;
                self.enqueue_csma(q, now, node, kind, item);
            }
        }
    }

    fn on_ack(&mut self, q: &mut EventQueue<Ev>, now: SimTime, node: NodeId, seq: u64) {
        let Some(o) = self.nodes[node].outstanding else {
            return;
        };
        if o.seq != seq {
            return;
        }
        self.nodes[node].outstanding = None;
        if let Some(id) = o.timeout {
            q.cancel(id);
        }
        let item = self.pop_head(node, qidx(o.q));
        match item.payload {
            Payload::Packet(pid) => self.resolve_packet(now, pid),
            Payload::SyncResponse => self.nodes[node].sync_queued = false,
            Payload::SlotMap(m) => {
                // the manager follows the first acknowledged copy
                let ns = &mut self.nodes[node];
                let newer = ns.pending.as_ref().is_none_or(|(p, _)| p.version < m.version) && ns.map.version < m.version;
                if newer {
                    let layout = self.latest_map.1;
                    ns.pending = Some((m, layout));
                }
            }
            Payload::AssocRequest | Payload::AssocResponse => {}
        }
        self.reevaluate(q, now, node);
    }

    fn resolve_packet(&mut self, now: SimTime, pid: PacketId) {
        let Some(p) = self.packets.remove(&pid) else {
            return;
        };
        let out = self.metrics.on_resolved(&p, now);
        if out.verdict == Verdict::PacketLoss {
            if let Some(tag) = p.message {
                self.on_message_fragment_lost(tag);
            }
        }
    }

    fn send_ack(&mut self, q: &mut EventQueue<Ev>, now: SimTime, node: NodeId, to: NodeId, seq: u64) {
        if self.nodes[node].transmitting.is_some() || self.medium.is_transmitting(node, now) {
            self.diag.acks_suppressed += 1;
            return;
        }
        let frame = Frame {
            src: node,
            dst: Dest::Unicast(to),
            seq,
            size_bytes: ACK_BYTES,
            kind: FrameKind::Ack(seq),
        };
        self.start_tx(q, now, node, frame, None, None);
    }

    // ---- reception -----------------------------------------------------

    fn on_rx_end(&mut self, q: &mut EventQueue<Ev>, now: SimTime, node: NodeId, tx: TxId) {
        let f = self.in_flight.get_mut(&tx).expect("arrival of a known transmission");
        f.remaining -= 1;
        let intended = f.frame.dst.includes(node);
        let arrival = *f.arrivals.iter().find(|a| a.receiver == node).expect("arrival exists");
        let done = f.remaining == 0;
        let (frame, sender, slot) = if done {
            let f = self.in_flight.remove(&tx).expect("present");
            (f.frame, f.sender, f.slot)
        } else {
            (f.frame.clone(), f.sender, f.slot)
        };
        // legacy nodes decode beacons for the NAV even though they are not members
        let is_ack = matches!(frame.kind, FrameKind::Ack(_));
        if intended {
            let exempt = is_ack && self.cfg.phy.ack_error_free;
            let result = self.medium.resolve_rx(node, tx, exempt);
            if let Some(log) = self.rx_log.as_mut() {
                log.push(RxRecord {
                    tx: tx.0,
                    receiver: node,
                    at: now,
                    result,
                });
            }
            match result {
                RxResult::Collided => self.diag.collisions += 1,
                RxResult::ChannelError => self.diag.channel_errors += 1,
                RxResult::Delivered => {}
            }
            self.handle_rx(q, now, node, sender, &frame, result, arrival, slot);
        } else {
            self.medium.discard_rx(node, tx);
        }
        self.reevaluate(q, now, node);
    }

    #[allow(clippy::too_many_arguments)]
    fn handle_rx(
        &mut self,
        q: &mut EventQueue<Ev>,
        now: SimTime,
        node: NodeId,
        sender: NodeId,
        frame: &Frame,
        result: RxResult,
        arrival: Arrival,
        slot: Option<SlotRef>,
    ) {
        let ok = result == RxResult::Delivered;
        match &frame.kind {
            FrameKind::Ack(seq) => {
                if ok {
                    self.on_ack(q, now, node, *seq);
                }
            }
            FrameKind::Data(pid) => {
                let pid = *pid;
                let class = self.packets.get(&pid).map(|p| p.class);
                if result == RxResult::Collided && class == Some(TrafficClass::MissionCritical) {
                    self.diag.critical_collisions += 1;
                }
                if ok {
                    let dup = self.nodes[node].last_rx_seq.get(&sender) == Some(&frame.seq);
                    self.nodes[node].last_rx_seq.insert(sender, frame.seq);
                    if !dup {
                        self.deliver_packet(q, now, pid);
                    }
                }
                if let Some(s) = slot {
                    self.on_slot_arrival(now, node, sender, s, arrival);
                    self.resolve_packet(now, pid);
                } else if ok {
                    q.schedule(now + self.dcf.sifs(), Ev::SendAck { node, to: sender, seq: frame.seq })
                        .expect("future");
                }
            }
            FrameKind::Mgmt(bytes) => {
                let Ok(m) = MgmtFrame::decode(bytes) else {
                    return;
                };
                if let MgmtFrame::Beacon(b) = &m {
                    if ok {
                        self.on_beacon_rx(q, now, node, b, arrival);
                    } else {
                        self.diag.beacons_missed += 1;
                    }
                    return;
                }
                if !ok {
                    return;
                }
                q.schedule(now + self.dcf.sifs(), Ev::SendAck { node, to: sender, seq: frame.seq })
                    .expect("future");
                let dup = self.nodes[node].last_rx_seq.get(&sender) == Some(&frame.seq);
                self.nodes[node].last_rx_seq.insert(sender, frame.seq);
                self.on_mgmt_rx(q, now, node, sender, m, arrival, dup);
            }
        }
    }

    fn deliver_packet(&mut self, q: &mut EventQueue<Ev>, now: SimTime, pid: PacketId) {
        let Some(p) = self.packets.get_mut(&pid) else {
            return;
        };
        if p.delivered_at.is_some() {
            return;
        }
        p.delivered_at = Some(now);
        let p = p.clone();
        self.metrics.on_delivered(&p, now);
        if let (Some(t), Some(cmd)) = (self.tracker.as_mut(), p.command) {
            let on_time = p.deadline.is_none_or(|d| now - p.created_at <= d);
            t.deliver(now, p.created_at, cmd, on_time);
        }
        if let Some(tag) = p.message {
            self.on_message_delivered(q, now, tag);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn on_mgmt_rx(
        &mut self,
        q: &mut EventQueue<Ev>,
        now: SimTime,
        node: NodeId,
        sender: NodeId,
        m: MgmtFrame,
        arrival: Arrival,
        dup: bool,
    ) {
        match m {
            MgmtFrame::SyncResponse { node: n, s_response } => {
                if node == 0 {
                    self.echoes.insert(usize::from(n), (s_response, arrival.start.as_i64()));
                }
            }
            MgmtFrame::SlotMap(p) => {
                let map = SlotMap::from_payload(&p);
                let ns = &mut self.nodes[node];
                let known = ns.map.version.max(ns.pending.as_ref().map_or(0, |(m, _)| m.version));
                // a retransmitted copy carries a later stamp; the latest wins
                let replace = map.version > known
                    || ns.pending.as_ref().is_some_and(|(m, _)| m.version == map.version);
                if replace && map.version > ns.map.version {
                    let layout = self.layout_for(&map);
                    self.nodes[node].pending = Some((map, layout));
                    self.restamp_tdma(q, now, node);
                }
            }
            MgmtFrame::AssocRequest { node: n } => {
                if node == 0 && !dup {
                    let bytes = MgmtFrame::AssocResponse {
                        node: n,
                        accepted: true,
                    }
                    .frame_bytes();
                    self.enqueue_csma(q, now, 0, QueueKind::CsmaCtl, QItem {
                        payload: Payload::AssocResponse,
                        dst: sender,
                        bytes,
                    });
                }
            }
            MgmtFrame::AssocResponse { accepted, .. } => {
                if accepted {
                    let ns = &mut self.nodes[node];
                    ns.associated = true;
                    ns.assoc_queued = false;
                }
            }
            MgmtFrame::Beacon(_) => unreachable!("handled by the caller"),
        }
    }

    fn layout_for(&self, map: &SlotMap) -> SuperframeConfig {
        SuperframeConfig::new(
            self.t_f,
            map.n_tdma(),
            map.tau_tdma,
            SimDuration(self.cfg.superframe.t_ctl_ns),
            SimDuration(self.cfg.superframe.guard_ns),
            self.beacon_airtime,
            self.cfg.min_slot_airtime(),
        )
        .expect("maps are validated before broadcast")
    }

    // ---- superframe ----------------------------------------------------

    fn on_beacon_due(&mut self, q: &mut EventQueue<Ev>, now: SimTime, frame: u64) {
        if self.nodes[0].transmitting.is_some() {
            // finishing an ACK; send right after it
            self.diag.beacons_deferred += 1;
            let tx = self.nodes[0].transmitting.expect("checked");
            let end = self.in_flight.get(&tx).map_or(now, |f| f.end);
            q.schedule(end.max(now), Ev::Beacon { frame }).expect("future");
            return;
        }
        let server = &mut self.nodes[0];
        if let Some((m, l)) = server.pending.take() {
            if frame >= m.effective_from {
                server.map = m;
                server.layout = l;
                self.diag.slot_maps_applied += 1;
            } else {
                server.pending = Some((m, l));
            }
        }
        let layout = self.nodes[0].layout;
        let echoes = std::mem::take(&mut self.echoes)
            .into_iter()
            .map(|(n, (s_response, t_server_rx))| SyncEcho {
                node: n as u16,
                s_response,
                t_server_rx,
            })
            .collect();
        let payload = BeaconPayload {
            superframe_index: frame,
            s_ap: now.as_i64(),
            nav_ns: layout.t_nav().as_nanos(),
            echoes,
        };
        let m = MgmtFrame::Beacon(payload);
        let f = Frame {
            src: 0,
            dst: Dest::Broadcast,
            seq: self.next_seq,
            size_bytes: m.frame_bytes(),
            kind: FrameKind::Mgmt(m.encode()),
        };
        self.next_seq += 1;
        self.diag.beacons_sent += 1;
        self.nodes[0].sched = Some(FrameSchedule {
            index: frame,
            start_local: (SimTime(frame * self.t_f.as_nanos())).as_i64(),
            t_f: self.t_f,
        });
        self.start_tx(q, now, 0, f, None, None);
        let next = SimTime((frame + 1) * self.t_f.as_nanos());
        if next < self.end {
            q.schedule(next, Ev::Beacon { frame: frame + 1 }).expect("future");
        }
        self.schedule_wake(q, now, 0);
    }

    fn on_beacon_rx(&mut self, q: &mut EventQueue<Ev>, now: SimTime, node: NodeId, b: &BeaconPayload, arrival: Arrival) {
        let nav_until = arrival.end + SimDuration(b.nav_ns);
        self.medium.set_nav(node, nav_until);
        q.schedule(nav_until, Ev::NavEnd { node }).expect("future");
        let ns = &mut self.nodes[node];
        if ns.role != NodeRole::Client {
            return;
        }
        let arrival_local = ns.osc.local_read(arrival.start);

        // finish the open round if this beacon echoes our response
        if let Some(round) = ns.round.take() {
            let echo = b
                .echoes
                .iter()
                .find(|e| usize::from(e.node) == node && round.sent.contains(&e.s_response));
            match echo {
                Some(e) => {
                    let sample = ptp_update(&SyncRecord {
                        s_ap_beacon: round.s_ap,
                        s_tilde_arrival: round.s_tilde,
                        s_response: e.s_response,
                        t_server_rx: e.t_server_rx,
                    });
                    if sample.is_suspect() {
                        self.diag.suspect_ptp_samples += 1;
                    }
                    ns.est.apply(sample, round.beacon_arrival);
                    self.diag.sync_rounds_completed += 1;
                }
                None if !round.sent.is_empty() => self.diag.sync_rounds_dropped += 1,
                None => {}
            }
        }
        ns.est.rebase_frame(arrival_local);
        ns.sched = Some(FrameSchedule {
            index: b.superframe_index,
            start_local: arrival_local - ns.est.d_hat,
            t_f: self.t_f,
        });
        if let Some((m, l)) = ns.pending.take() {
            if b.superframe_index >= m.effective_from {
                ns.map = m;
                ns.layout = l;
            } else {
                ns.pending = Some((m, l));
            }
        }
        self.sync_age.push((
            now,
            node,
            ns.est.last_sync_at.map(|t| (arrival.start - t).as_secs_f64()),
        ));
        let period = self.t_f * self.cfg.superframe.sync_every_superframes;
        let mut enqueue = Vec::new();
        if ns.associated && periodic_sync_due(ns.est.last_sync_at, arrival.start, period) {
            ns.round = Some(SyncRound {
                s_ap: b.s_ap,
                s_tilde: arrival_local,
                beacon_arrival: arrival.start,
                sent: Vec::new(),
            });
            if !ns.sync_queued {
                ns.sync_queued = true;
                let bytes = MgmtFrame::SyncResponse {
                    node: node as u16,
                    s_response: 0,
                }
                .frame_bytes();
                enqueue.push(QItem {
                    payload: Payload::SyncResponse,
                    dst: 0,
                    bytes,
                });
            }
        }
        if !ns.associated && !ns.assoc_queued {
            ns.assoc_queued = true;
            let bytes = MgmtFrame::AssocRequest { node: node as u16 }.frame_bytes();
            enqueue.push(QItem {
                payload: Payload::AssocRequest,
                dst: 0,
                bytes,
            });
        }
        for item in enqueue {
            self.enqueue_csma(q, now, node, QueueKind::CsmaCtl, item);
        }
        self.restamp_tdma(q, now, node);
        self.schedule_wake(q, now, node);
    }

    /// Arm a wake-up at the next section boundary this node expects.
    fn schedule_wake(&mut self, q: &mut EventQueue<Ev>, now: SimTime, node: NodeId) {
        if let Some(id) = self.nodes[node].wake.take() {
            q.cancel(id);
        }
        let ns = &self.nodes[node];
        let Some(sched) = ns.sched else {
            return;
        };
        let local = ns.osc.local_read(now);
        let (frame, _) = sched.locate(local);
        let mut next = None;
        'outer: for f in frame..frame + 2 {
            let (_, layout) = ns.map_for(f);
            let start = sched.start_of(f);
            for off in [layout.ctl_start(), layout.gen_start(), self.t_f] {
                let b = start + off.as_i64();
                if b > local {
                    next = Some(b);
                    break 'outer;
                }
            }
        }
        let Some(b) = next else {
            return;
        };
        let at = ns.osc.true_time_at(b).max(now);
        if at <= self.end {
            let id = q.schedule(at, Ev::Wake { node }).expect("future");
            self.nodes[node].wake = Some(id);
        }
    }

    // ---- TDMA ----------------------------------------------------------

    /// Client-clock send time for `slot` of `frame`.
    fn slot_timestamp(&self, node: NodeId, frame: u64, slot: u16) -> i64 {
        let ns = &self.nodes[node];
        let sched = ns.sched.expect("scheduled node");
        let (_, layout) = ns.map_for(frame);
        let mut est = ns.est;
        est.frame_ref += (frame as i64 - sched.index as i64) * self.t_f.as_i64();
        schedule_slot_tx(&est, u32::from(slot), layout.tau_tdma) + layout.slot_tx_phase().as_i64()
    }

    /// Give every queued critical packet its own upcoming owned slot, in
    /// order, and arm the timer for the head.
    fn restamp_tdma(&mut self, q: &mut EventQueue<Ev>, now: SimTime, node: NodeId) {
        if let Some(id) = self.nodes[node].tdma_timer.take() {
            q.cancel(id);
        }
        let n = self.nodes[node].tdma.len();
        if n == 0 {
            return;
        }
        let ns = &self.nodes[node];
        let mut slots = Vec::with_capacity(n);
        if let (Some(sched), true) = (ns.sched, ns.associated) {
            let local = ns.osc.local_read(now);
            let (first, _) = sched.locate(local);
            let mut f = first.saturating_sub(1);
            // a frame with no owned slot ends the search after a bounded scan
            let limit = first + n as u64 + 4;
            while slots.len() < n && f <= limit {
                let (map, _) = ns.map_for(f);
                for j in map.slots_of(node) {
                    let ts = self.slot_timestamp(node, f, j);
                    if ts > local && slots.len() < n {
                        slots.push((SlotRef { frame: f, slot: j }, ts));
                    }
                }
                f += 1;
            }
        }
        let mut it = slots.into_iter();
        self.nodes[node].tdma.restamp(|_, _| it.next().unwrap_or((SlotRef { frame: 0, slot: 0 }, i64::MAX)));
        let ns = &self.nodes[node];
        if let Some((_, _, ts)) = ns.tdma.head() {
            if ts != i64::MAX {
                let at = ns.osc.true_time_at(ts).max(now);
                if at <= self.end {
                    let id = q.schedule(at, Ev::TdmaFire { node }).expect("future");
                    self.nodes[node].tdma_timer = Some(id);
                }
            }
        }
    }

    fn on_tdma_fire(&mut self, q: &mut EventQueue<Ev>, now: SimTime, node: NodeId) {
        self.nodes[node].tdma_timer = None;
        let Some((pid, slot, _)) = self.nodes[node].tdma.head() else {
            return;
        };
        let ns = &self.nodes[node];
        let local = ns.osc.local_read(now);
        let sched = ns.sched.expect("timestamps need a schedule");
        let (map, layout) = ns.map_for(slot.frame);
        let owned = map.owner(slot.slot) == Some(node);
        let slot_start = sched.start_of(slot.frame) + layout.slot_start(slot.slot).as_i64();
        let slot_end = slot_start + layout.tau_tdma.as_i64();
        let bytes = self.cfg.data_frame_bytes(self.packets[&pid].size_bytes);
        let dur = airtime(bytes, &self.cfg.phy).as_i64();
        if !owned || local < slot_start || local + dur > slot_end || ns.transmitting.is_some() {
            self.diag.tdma_stale_timestamps += 1;
            self.restamp_tdma(q, now, node);
            return;
        }
        let sync_err = ns.est.is_synced().then(|| (ns.est.o_hat - ns.osc.offset_at(now)).abs());
        self.nodes[node].tdma.pop();
        if let Some(err) = sync_err {
            self.diag.max_sync_error_ns = self.diag.max_sync_error_ns.max(err);
            self.sync_errors.push((now, err));
        }
        self.diag.tdma_transmissions += 1;
        let p = self.packets.get_mut(&pid).expect("queued packet");
        p.attempt_count += 1;
        let frame = Frame {
            src: node,
            dst: Dest::Unicast(p.dst),
            seq: self.next_seq,
            size_bytes: bytes,
            kind: FrameKind::Data(pid),
        };
        self.next_seq += 1;
        // pause CSMA countdowns for the duration of the slot transmission
        for qi in 0..2 {
            if let Some(c) = self.nodes[node].queues[qi].head.as_mut() {
                if let Some(id) = c.expiry.take() {
                    q.cancel(id);
                    c.pause(now, &self.dcf);
                }
            }
        }
        self.start_tx(q, now, node, frame, Some(QueueKind::Tdma), Some(slot));
        self.restamp_tdma(q, now, node);
    }

    /// Server-side check of where a slot transmission landed.
    fn on_slot_arrival(&mut self, _now: SimTime, node: NodeId, sender: NodeId, slot: SlotRef, arrival: Arrival) {
        if node != 0 {
            return;
        }
        let (map, layout) = self.nodes[0].map_for(slot.frame);
        let frame_start = slot.frame * self.t_f.as_nanos();
        let slot_start = frame_start + layout.slot_start(slot.slot).as_nanos();
        let slot_end = slot_start + layout.tau_tdma.as_nanos();
        let a = arrival.start.as_nanos();
        let e = arrival.end.as_nanos();
        if map.owner(slot.slot) != Some(sender) || a < slot_start || e > slot_end {
            self.diag.tdma_outside_slot += 1;
        }
        let expected = (slot_start + layout.guard.as_nanos() / 2) as i64;
        let err = (a as i64 - expected).abs();
        self.diag.max_landing_error_ns = self.diag.max_landing_error_ns.max(err);
    }

    // ---- manager -------------------------------------------------------

    fn on_inject(&mut self, q: &mut EventQueue<Ev>, now: SimTime, idx: usize) {
        let inj = self.cfg.injections[idx].clone();
        let base = self.latest_map.0.clone();
        let (label, req) = match &inj.action {
            ManagerAction::Reallocate(r) => ("reallocate".to_string(), Ok(r.clone())),
            ManagerAction::Subscribe { node, qos } => {
                let label = format!("subscribe node {node}");
                let ok_node = self.nodes.get(*node).is_some_and(|n| n.role == NodeRole::Client && n.associated);
                let req = if ok_node {
                    subscription_request(&base, *node, qos, self.t_f)
                } else {
                    Err(AllocationError::UnknownNode(*node))
                };
                (label, req)
            }
        };
        let result = req.and_then(|r| {
            for a in &r.assignments {
                if let Some(o) = a.owner {
                    if self.nodes.get(o).is_none_or(|n| n.role != NodeRole::Client) {
                        return Err(AllocationError::UnknownNode(o));
                    }
                }
            }
            build_reallocation(
                &base,
                &r,
                self.nodes.len(),
                self.t_f,
                SimDuration(self.cfg.superframe.t_ctl_ns),
                SimDuration(self.cfg.superframe.guard_ns),
                self.beacon_airtime,
                self.cfg.min_slot_airtime(),
            )
        });
        match result {
            Ok((map, layout)) => {
                let detail = format!("version {} owners {:?}", map.version, map.owners);
                self.latest_map = (map.clone(), layout);
                let bytes = MgmtFrame::SlotMap(map.to_payload()).frame_bytes();
                let clients: Vec<NodeId> = (1..self.nodes.len())
                    .filter(|&n| self.nodes[n].role == NodeRole::Client)
                    .collect();
                for c in clients {
                    self.enqueue_csma(q, now, 0, QueueKind::CsmaCtl, QItem {
                        payload: Payload::SlotMap(map.clone()),
                        dst: c,
                        bytes,
                    });
                }
                self.manager_events.push(ManagerEvent {
                    at_s: now.as_secs_f64(),
                    action: label,
                    accepted: true,
                    detail,
                });
            }
            Err(e) => self.manager_events.push(ManagerEvent {
                at_s: now.as_secs_f64(),
                action: label,
                accepted: false,
                detail: e.to_string(),
            }),
        }
    }
}

fn mgmt_name(m: &MgmtFrame) -> &'static str {
    match m {
        MgmtFrame::Beacon(_) => "beacon",
        MgmtFrame::SyncResponse { .. } => "sync_response",
        MgmtFrame::SlotMap(_) => "slot_map",
        MgmtFrame::AssocRequest { .. } => "assoc_request",
        MgmtFrame::AssocResponse { .. } => "assoc_response",
    }
}
