use thiserror::Error;

use crate::time::SimTime;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("event scheduled at {fire_at} but the clock is already at {now}")]
    EventInPast { fire_at: SimTime, now: SimTime },
    #[error("run_until({end}) requested with the clock already at {now}")]
    EndInPast { end: SimTime, now: SimTime },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MediumError {
    #[error("node {0} is already transmitting")]
    SenderBusy(usize),
    #[error("unknown node {0}")]
    UnknownNode(usize),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("frame payload truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("unknown management frame tag {0:#04x}")]
    UnknownTag(u8),
    #[error("trailing bytes after payload: {0}")]
    Trailing(usize),
}

/// Why a slot-allocation request was refused.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AllocationError {
    #[error("slot {slot} assigned more than once")]
    DuplicateSlot { slot: u16 },
    #[error("slot {slot} is outside the {n_tdma}-slot TDMA section")]
    SlotOutOfRange { slot: u16, n_tdma: u16 },
    #[error("slot duration {tau_ns} ns is below the minimum {min_ns} ns (critical airtime + guard)")]
    SlotTooShort { tau_ns: u64, min_ns: u64 },
    #[error("TDMA ({t_tdma_ns} ns) + control ({t_ctl_ns} ns) exceed the {t_f_ns} ns superframe")]
    SuperframeOverflow { t_tdma_ns: u64, t_ctl_ns: u64, t_f_ns: u64 },
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("subscription needs {needed} slots per superframe but only {free} are free")]
    InsufficientCapacity { needed: u16, free: u16 },
    #[error("subscription QoS must have a positive deadline and period")]
    InvalidQos,
}

/// Every invariant a scenario configuration violates, reported together.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid scenario configuration:\n  - {}", .violations.join("\n  - "))]
pub struct ConfigError {
    pub violations: Vec<String>,
}

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed input: {0}")]
    Malformed(String),
}
