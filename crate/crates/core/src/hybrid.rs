//! Superframe layout, slot ownership, per-node queue set and the network
//! manager's allocation logic.
//!
//! Frame layout, relative to the server's frame start:
//!
//! ```text
//! | beacon | slot 1 | slot 2 | ... | slot N | control (CSMA) | general (CSMA) |
//! 0        b        b+tau                   b+T_tdma          b+T_tdma+T_ctl   T_f
//! ```
//!
//! The beacon's airtime `b` is charged to the general section, so
//! `T_f = T_tdma + T_ctl + T_gen` and `T_tdma = N * tau` hold exactly. The
//! beacon NAV covers `T_tdma + T_ctl` counted from the end of the beacon,
//! i.e. up to the end of the control section.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::AllocationError;
use crate::frame::{SlotMapPayload, UNOWNED_SLOT};
use crate::medium::NodeId;
use crate::time::{SimDuration, SimTime};
use crate::traffic::{PacketId, TrafficClass};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuperframeSettings {
    pub superframe_ns: u64,
    pub n_tdma: u16,
    pub tau_tdma_ns: u64,
    pub t_ctl_ns: u64,
    pub guard_ns: u64,
    /// Initial slot owners, one entry per slot; `None` leaves a slot free.
    pub slot_owners: Vec<Option<NodeId>>,
    /// Resynchronise every this many superframes.
    pub sync_every_superframes: u64,
}

impl Default for SuperframeSettings {
    fn default() -> Self {
        Self {
            superframe_ns: 100_000_000,
            n_tdma: 1,
            tau_tdma_ns: 1_000_000,
            t_ctl_ns: 4_000_000,
            guard_ns: 20_000,
            slot_owners: vec![Some(1)],
            sync_every_superframes: 1,
        }
    }
}

/// Validated superframe timing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuperframeConfig {
    pub t_tdma: SimDuration,
    pub t_ctl: SimDuration,
    pub t_gen: SimDuration,
    pub n_tdma: u16,
    pub tau_tdma: SimDuration,
    pub beacon_airtime: SimDuration,
    pub guard: SimDuration,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Section {
    Tdma,
    Ctl,
    Gen,
}

impl SuperframeConfig {
    /// Build from a frame length and the TDMA/control parameters, checking
    /// every timing invariant. `min_slot` is the critical-packet airtime; the
    /// slot must hold it plus the guard.
    pub fn new(
        t_f: SimDuration,
        n_tdma: u16,
        tau_tdma: SimDuration,
        t_ctl: SimDuration,
        guard: SimDuration,
        beacon_airtime: SimDuration,
        min_slot: SimDuration,
    ) -> Result<Self, AllocationError> {
        if n_tdma > 0 && tau_tdma < min_slot + guard {
            return Err(AllocationError::SlotTooShort {
                tau_ns: tau_tdma.as_nanos(),
                min_ns: (min_slot + guard).as_nanos(),
            });
        }
        let t_tdma = tau_tdma * u64::from(n_tdma);
        let used = t_tdma + t_ctl + beacon_airtime;
        if used > t_f {
            return Err(AllocationError::SuperframeOverflow {
                t_tdma_ns: t_tdma.as_nanos(),
                t_ctl_ns: t_ctl.as_nanos(),
                t_f_ns: t_f.as_nanos(),
            });
        }
        Ok(Self {
            t_tdma,
            t_ctl,
            t_gen: t_f - t_tdma - t_ctl,
            n_tdma,
            tau_tdma,
            beacon_airtime,
            guard,
        })
    }

    pub fn t_f(&self) -> SimDuration {
        self.t_tdma + self.t_ctl + self.t_gen
    }

    /// Beacon NAV duration.
    pub fn t_nav(&self) -> SimDuration {
        self.t_tdma + self.t_ctl
    }

    pub fn ctl_start(&self) -> SimDuration {
        self.beacon_airtime + self.t_tdma
    }

    pub fn gen_start(&self) -> SimDuration {
        self.ctl_start() + self.t_ctl
    }

    /// Offset of slot `j` (1-based) from the frame start.
    pub fn slot_start(&self, j: u16) -> SimDuration {
        self.beacon_airtime + self.tau_tdma * u64::from(j - 1)
    }

    /// Where the owner aims the start of its transmission inside the slot.
    pub fn slot_tx_phase(&self) -> SimDuration {
        self.beacon_airtime + SimDuration(self.guard.as_nanos() / 2)
    }

    /// Section containing `offset` into a frame.
    pub fn section_at(&self, offset: SimDuration) -> Section {
        if offset < self.ctl_start() {
            Section::Tdma
        } else if offset < self.gen_start() {
            Section::Ctl
        } else {
            Section::Gen
        }
    }

    /// Offset at which `section` ends.
    pub fn section_end(&self, section: Section) -> SimDuration {
        match section {
            Section::Tdma => self.ctl_start(),
            Section::Ctl => self.gen_start(),
            Section::Gen => self.t_f(),
        }
    }
}

/// Slot-to-node ownership, switched in at a superframe boundary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotMap {
    pub version: u32,
    pub owners: Vec<Option<NodeId>>,
    pub tau_tdma: SimDuration,
    pub effective_from: u64,
}

impl SlotMap {
    pub fn n_tdma(&self) -> u16 {
        self.owners.len() as u16
    }

    /// 1-based slots owned by `node`, ascending.
    pub fn slots_of(&self, node: NodeId) -> Vec<u16> {
        self.owners
            .iter()
            .enumerate()
            .filter(|(_, o)| **o == Some(node))
            .map(|(i, _)| i as u16 + 1)
            .collect()
    }

    pub fn owner(&self, slot: u16) -> Option<NodeId> {
        self.owners.get(usize::from(slot) - 1).copied().flatten()
    }

    pub fn free_slots(&self) -> Vec<u16> {
        self.owners
            .iter()
            .enumerate()
            .filter(|(_, o)| o.is_none())
            .map(|(i, _)| i as u16 + 1)
            .collect()
    }

    pub fn to_payload(&self) -> SlotMapPayload {
        SlotMapPayload {
            version: self.version,
            effective_from: self.effective_from,
            n_tdma: self.n_tdma(),
            tau_ns: self.tau_tdma.as_nanos(),
            owners: self
                .owners
                .iter()
                .map(|o| o.map_or(UNOWNED_SLOT, |n| n as u16))
                .collect(),
        }
    }

    pub fn from_payload(p: &SlotMapPayload) -> Self {
        Self {
            version: p.version,
            owners: p
                .owners
                .iter()
                .map(|&o| (o != UNOWNED_SLOT).then_some(usize::from(o)))
                .collect(),
            tau_tdma: SimDuration(p.tau_ns),
            effective_from: p.effective_from,
        }
    }
}

/// A manager-API allocation change. Absent fields keep current values.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReallocationRequest {
    pub n_tdma: Option<u16>,
    pub tau_tdma_ns: Option<u64>,
    pub assignments: Vec<SlotAssignment>,
}

/// Give 1-based `slot` to `owner`; no owner frees it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotAssignment {
    pub slot: u16,
    #[serde(default)]
    pub owner: Option<NodeId>,
}

impl SlotAssignment {
    pub fn new(slot: u16, owner: Option<NodeId>) -> Self {
        Self { slot, owner }
    }
}

/// QoS parameters of a subscription for slot-based delivery.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubscriptionQos {
    pub deadline_ns: u64,
    pub period_ns: u64,
    #[serde(default)]
    pub priority: u8,
}

/// Slots per superframe needed so the granted slot rate matches the
/// tighter of the deadline and update period.
pub fn slots_needed(t_f: SimDuration, qos: &SubscriptionQos) -> Result<u16, AllocationError> {
    if qos.deadline_ns == 0 || qos.period_ns == 0 {
        return Err(AllocationError::InvalidQos);
    }
    let spacing = qos.deadline_ns.min(qos.period_ns);
    Ok(t_f.as_nanos().div_ceil(spacing).max(1) as u16)
}

/// Validate `req` against `current` and the frame budget and build the
/// resulting map (not yet effective).
#[allow(clippy::too_many_arguments)]
pub fn build_reallocation(
    current: &SlotMap,
    req: &ReallocationRequest,
    n_nodes: usize,
    t_f: SimDuration,
    t_ctl: SimDuration,
    guard: SimDuration,
    beacon_airtime: SimDuration,
    min_slot: SimDuration,
) -> Result<(SlotMap, SuperframeConfig), AllocationError> {
    let n_tdma = req.n_tdma.unwrap_or(current.n_tdma());
    let tau = req.tau_tdma_ns.map(SimDuration).unwrap_or(current.tau_tdma);
    let cfg = SuperframeConfig::new(t_f, n_tdma, tau, t_ctl, guard, beacon_airtime, min_slot)?;

    let mut owners: Vec<Option<NodeId>> = current.owners.clone();
    owners.resize(usize::from(n_tdma), None);
    let mut seen = std::collections::HashSet::new();
    for &SlotAssignment { slot, owner } in &req.assignments {
        if slot == 0 || slot > n_tdma {
            return Err(AllocationError::SlotOutOfRange { slot, n_tdma });
        }
        if !seen.insert(slot) {
            return Err(AllocationError::DuplicateSlot { slot });
        }
        if let Some(n) = owner {
            if n >= n_nodes {
                return Err(AllocationError::UnknownNode(n));
            }
        }
        owners[usize::from(slot) - 1] = owner;
    }
    Ok((
        SlotMap {
            version: current.version + 1,
            owners,
            tau_tdma: tau,
            effective_from: 0,
        },
        cfg,
    ))
}

/// Grant `node` enough free slots for `qos`, expressed as a reallocation.
pub fn subscription_request(
    current: &SlotMap,
    node: NodeId,
    qos: &SubscriptionQos,
    t_f: SimDuration,
) -> Result<ReallocationRequest, AllocationError> {
    let needed = slots_needed(t_f, qos)?;
    let already = current.slots_of(node).len() as u16;
    if already >= needed {
        return Ok(ReallocationRequest::default());
    }
    let free = current.free_slots();
    let want = needed - already;
    if (free.len() as u16) < want {
        return Err(AllocationError::InsufficientCapacity {
            needed: want,
            free: free.len() as u16,
        });
    }
    Ok(ReallocationRequest {
        assignments: free
            .into_iter()
            .take(usize::from(want))
            .map(|s| SlotAssignment::new(s, Some(node)))
            .collect(),
        ..ReallocationRequest::default()
    })
}

/// Which transmit queue a packet goes to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueueKind {
    Tdma,
    CsmaCtl,
    CsmaGen,
}

impl QueueKind {
    pub fn for_class(class: TrafficClass) -> Self {
        match class {
            TrafficClass::MissionCritical => QueueKind::Tdma,
            TrafficClass::Management => QueueKind::CsmaCtl,
            TrafficClass::LargeVolume | TrafficClass::EventDriven => QueueKind::CsmaGen,
        }
    }

    pub fn section(self) -> Section {
        match self {
            QueueKind::Tdma => Section::Tdma,
            QueueKind::CsmaCtl => Section::Ctl,
            QueueKind::CsmaGen => Section::Gen,
        }
    }
}

/// A slot reservation: superframe index and 1-based slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct SlotRef {
    pub frame: u64,
    pub slot: u16,
}

/// Paired TDMA data/timestamp queues. Entries are pushed and popped
/// together so the two stay the same length.
#[derive(Clone, Debug, Default)]
pub struct TdmaQueue {
    data: VecDeque<(PacketId, SlotRef)>,
    timestamps: VecDeque<i64>,
}

impl TdmaQueue {
    pub fn push(&mut self, packet: PacketId, slot: SlotRef, timestamp: i64) {
        self.data.push_back((packet, slot));
        self.timestamps.push_back(timestamp);
    }

    pub fn head(&self) -> Option<(PacketId, SlotRef, i64)> {
        let (p, s) = *self.data.front()?;
        Some((p, s, *self.timestamps.front().expect("paired queues")))
    }

    pub fn pop(&mut self) -> Option<(PacketId, SlotRef, i64)> {
        let (p, s) = self.data.pop_front()?;
        let t = self.timestamps.pop_front().expect("paired queues");
        Some((p, s, t))
    }

    pub fn len(&self) -> usize {
        debug_assert_eq!(self.data.len(), self.timestamps.len());
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn last_slot(&self) -> Option<SlotRef> {
        self.data.back().map(|(_, s)| *s)
    }

    /// Re-stamp every entry, e.g. after a fresh sync or a slot-map switch.
    pub fn restamp(&mut self, mut f: impl FnMut(PacketId, SlotRef) -> (SlotRef, i64)) {
        for (i, (p, s)) in self.data.iter_mut().enumerate() {
            let (ns, ts) = f(*p, *s);
            *s = ns;
            self.timestamps[i] = ts;
        }
    }
}

/// Client-clock view of the frame schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameSchedule {
    pub index: u64,
    /// Estimated server frame start, on this node's clock.
    pub start_local: i64,
    pub t_f: SimDuration,
}

impl FrameSchedule {
    pub fn start_of(&self, frame: u64) -> i64 {
        let k = frame as i64 - self.index as i64;
        self.start_local + k * self.t_f.as_i64()
    }

    /// Frame index containing local time `local`, and the offset into it.
    pub fn locate(&self, local: i64) -> (u64, SimDuration) {
        let rel = local - self.start_local;
        let k = rel.div_euclid(self.t_f.as_i64());
        let off = rel.rem_euclid(self.t_f.as_i64());
        ((self.index as i64 + k).max(0) as u64, SimDuration(off as u64))
    }
}

/// Section of the superframe a node believes it is in.
pub fn section_gate(sched: &FrameSchedule, cfg: &SuperframeConfig, now_local: i64) -> Section {
    let (_, off) = sched.locate(now_local);
    cfg.section_at(off)
}

pub fn frame_start_true(index: u64, t_f: SimDuration) -> SimTime {
    SimTime(index * t_f.as_nanos())
}
