//! Scenario configuration: one TOML document, every field defaulted.
//!
//! ```toml
//! mac_mode = "hybrid"
//! duration_s = 1000.0
//! seed = 1
//!
//! [phy]
//! frame_error_prob = 0.001
//!
//! [superframe]
//! superframe_ns = 100_000_000
//! n_tdma = 1
//!
//! [[nodes]]
//! role = "server"
//!
//! [[nodes]]
//! role = "client"
//! drift_ppm = 3.0
//! initial_offset_ns = 150_000
//!
//! [[injections]]
//! at_s = 500.0
//! kind = "reallocate"
//! n_tdma = 2
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clocks::{OscillatorModel, MAX_DRIFT_PPM};
use crate::dcf::DcfParams;
use crate::error::ConfigError;
use crate::frame::{BeaconPayload, MgmtFrame, SyncEcho};
use crate::hybrid::{ReallocationRequest, SubscriptionQos, SuperframeConfig, SuperframeSettings};
use crate::medium::{airtime, NodeId, PhyConfig};
use crate::time::SimDuration;
use crate::tracking::TrackingConfig;
use crate::traffic::TrafficConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MacMode {
    Csma,
    Hybrid,
}

impl MacMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MacMode::Csma => "csma",
            MacMode::Hybrid => "hybrid",
        }
    }
}

impl std::str::FromStr for MacMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csma" => Ok(MacMode::Csma),
            "hybrid" => Ok(MacMode::Hybrid),
            other => Err(format!("unknown mac mode {other:?} (expected csma or hybrid)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    /// Access point, PTP master and network manager. Always node 0.
    Server,
    /// Hybrid member: synchronises, honours sections, may own slots.
    Client,
    /// Plain CSMA station: honours beacon NAV, nothing else.
    Legacy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeConfig {
    pub role: NodeRole,
    pub drift_ppm: f64,
    pub initial_offset_ns: i64,
    /// Start associated; otherwise the client joins with one request in
    /// the first control section it sees.
    pub associated: bool,
}

impl Default for NodeConfig {
    fn default() -> Self {
        Self {
            role: NodeRole::Client,
            drift_ppm: 0.0,
            initial_offset_ns: 0,
            associated: true,
        }
    }
}

impl NodeConfig {
    pub fn server() -> Self {
        Self {
            role: NodeRole::Server,
            ..Self::default()
        }
    }

    pub fn client(drift_ppm: f64, initial_offset_ns: i64) -> Self {
        Self {
            role: NodeRole::Client,
            drift_ppm,
            initial_offset_ns,
            associated: true,
        }
    }

    pub fn legacy() -> Self {
        Self {
            role: NodeRole::Legacy,
            ..Self::default()
        }
    }

    pub fn oscillator(&self) -> OscillatorModel {
        OscillatorModel::new(self.drift_ppm, self.initial_offset_ns)
    }
}

/// Mid-run manager request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ManagerAction {
    Reallocate(ReallocationRequest),
    Subscribe { node: NodeId, qos: SubscriptionQos },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub at_s: f64,
    #[serde(flatten)]
    pub action: ManagerAction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub window_ms: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { window_ms: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mac_mode: MacMode,
    pub duration_s: f64,
    pub seed: u64,
    pub phy: PhyConfig,
    pub dcf: DcfParams,
    pub superframe: SuperframeSettings,
    pub traffic: TrafficConfig,
    pub tracking: TrackingConfig,
    pub metrics: MetricsConfig,
    pub nodes: Vec<NodeConfig>,
    pub injections: Vec<Injection>,
    pub output_dir: Option<String>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            mac_mode: MacMode::Hybrid,
            duration_s: 1000.0,
            seed: 1,
            phy: PhyConfig::default(),
            dcf: DcfParams::default(),
            superframe: SuperframeSettings::default(),
            traffic: TrafficConfig::default(),
            tracking: TrackingConfig::default(),
            metrics: MetricsConfig::default(),
            nodes: vec![NodeConfig::server(), NodeConfig::client(3.0, 150_000)],
            injections: Vec::new(),
            output_dir: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        toml::from_str(s).map_err(|e| ConfigError {
            violations: vec![format!("parse error: {e}")],
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            violations: vec![format!("cannot read {}: {e}", path.display())],
        })?;
        if path.extension().is_some_and(|e| e == "json") {
            return Self::from_summary_json(&text);
        }
        Self::from_toml_str(&text)
    }

    /// The effective configuration echoed in a run's `summary.json`.
    pub fn from_summary_json(s: &str) -> Result<Self, ConfigError> {
        #[derive(Deserialize)]
        struct Echo {
            config: ScenarioConfig,
        }
        serde_json::from_str::<Echo>(s).map(|e| e.config).map_err(|e| ConfigError {
            violations: vec![format!("parse error: {e}")],
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serialisable")
    }

    pub fn duration(&self) -> SimDuration {
        SimDuration::from_secs_f64(self.duration_s)
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn clients(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.role == NodeRole::Client)
            .map(|(i, _)| i)
    }

    /// Bytes on air for a data frame carrying `payload` bytes.
    pub fn data_frame_bytes(&self, payload: u64) -> u64 {
        payload + self.traffic.header_overhead_bytes
    }

    /// Airtime of the largest beacon: one sync echo per client.
    pub fn beacon_airtime(&self) -> SimDuration {
        let n = self.clients().count();
        let echo = SyncEcho {
            node: 0,
            s_response: 0,
            t_server_rx: 0,
        };
        let b = MgmtFrame::Beacon(BeaconPayload {
            superframe_index: 0,
            s_ap: 0,
            nav_ns: 0,
            echoes: vec![echo; n],
        });
        airtime(b.frame_bytes(), &self.phy)
    }

    /// Shortest admissible slot: one critical frame.
    pub fn min_slot_airtime(&self) -> SimDuration {
        airtime(
            self.data_frame_bytes(self.traffic.mission_critical.size_bytes),
            &self.phy,
        )
    }

    pub fn superframe_config(&self) -> Result<SuperframeConfig, String> {
        let s = &self.superframe;
        SuperframeConfig::new(
            SimDuration(s.superframe_ns),
            s.n_tdma,
            SimDuration(s.tau_tdma_ns),
            SimDuration(s.t_ctl_ns),
            SimDuration(s.guard_ns),
            self.beacon_airtime(),
            self.min_slot_airtime(),
        )
        .map_err(|e| format!("superframe: {e}"))
    }

    /// Every violated invariant, or `Ok` if the scenario can run.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut v = Vec::new();
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            v.push(format!("duration_s must be positive, got {}", self.duration_s));
        }
        let n = self.n_nodes();
        if n < 2 {
            v.push("nodes: need a server and at least one other node".into());
        }
        match self.nodes.first() {
            Some(first) if first.role == NodeRole::Server => {}
            _ => v.push("nodes[0] must have role \"server\"".into()),
        }
        for (i, node) in self.nodes.iter().enumerate().skip(1) {
            if node.role == NodeRole::Server {
                v.push(format!("nodes[{i}]: only node 0 may be the server"));
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !(node.drift_ppm.is_finite() && node.drift_ppm.abs() <= MAX_DRIFT_PPM) {
                v.push(format!(
                    "nodes[{i}].drift_ppm must be within ±{MAX_DRIFT_PPM}, got {}",
                    node.drift_ppm
                ));
            }
        }
        if self.nodes.first().is_some_and(|s| s.drift_ppm != 0.0 || s.initial_offset_ns != 0) {
            v.push("nodes[0]: the server clock is the time reference; drift and offset must be 0".into());
        }
        self.phy.validate(n, &mut v);
        self.dcf.validate(&mut v);
        self.traffic.validate(n, &mut v);
        self.tracking.validate(&mut v);
        if self.metrics.window_ms == 0 {
            v.push("metrics.window_ms must be > 0".into());
        }
        if self.tracking.enabled && !self.traffic.mission_critical.enabled {
            v.push("tracking.enabled requires traffic.mission_critical.enabled".into());
        }

        let s = &self.superframe;
        if s.superframe_ns == 0 {
            v.push("superframe.superframe_ns must be > 0".into());
        } else if let Err(e) = self.superframe_config() {
            v.push(e);
        }
        if s.slot_owners.len() != usize::from(s.n_tdma) {
            v.push(format!(
                "superframe.slot_owners has {} entries but n_tdma is {}",
                s.slot_owners.len(),
                s.n_tdma
            ));
        }
        for (j, owner) in s.slot_owners.iter().enumerate() {
            if let Some(o) = *owner {
                match self.nodes.get(o) {
                    Some(node) if node.role == NodeRole::Client => {}
                    Some(_) => v.push(format!("superframe.slot_owners[{j}]: node {o} is not a client")),
                    None => v.push(format!("superframe.slot_owners[{j}]: unknown node {o}")),
                }
            }
        }
        if s.sync_every_superframes == 0 {
            v.push("superframe.sync_every_superframes must be >= 1".into());
        }
        if self.mac_mode == MacMode::Hybrid {
            let mc = &self.traffic.mission_critical;
            if mc.enabled && self.nodes.get(mc.src).is_some_and(|n| n.role != NodeRole::Client) {
                v.push(format!(
                    "traffic.mission_critical.src (node {}) must be a client in hybrid mode: critical traffic is sent in client-owned slots",
                    mc.src
                ));
            }
        }
        for (i, inj) in self.injections.iter().enumerate() {
            if !(inj.at_s.is_finite() && inj.at_s >= 0.0) {
                v.push(format!("injections[{i}].at_s must be a non-negative number"));
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { violations: v })
        }
    }
}
