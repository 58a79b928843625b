//! Run artifacts: `outcomes.csv`, `throughput.csv`, `trajectory.csv`,
//! `summary.json`, plus re-summarising existing CSVs and aggregating sweeps.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{MacMode, ScenarioConfig};
use crate::error::OutputError;
use crate::metrics::{failure_mix, ClassCounters, FailureMix, TxOutcome, Verdict};
use crate::time::SimTime;
use crate::traffic::{offered_load, offered_rates, OfferedRates, TrafficClass};
use crate::world::{Diagnostics, ManagerEvent, RunResult};

pub const SCHEMA_VERSION: u32 = 1;

/// Classes that appear in `throughput.csv`.
pub const THROUGHPUT_CLASSES: [TrafficClass; 3] = [
    TrafficClass::LargeVolume,
    TrafficClass::EventDriven,
    TrafficClass::MissionCritical,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub packet_id: u64,
    pub class: TrafficClass,
    pub verdict: String,
    pub created_ns: u64,
    pub resolved_ns: u64,
    pub delay_ns: u64,
    pub attempts: u32,
}

impl From<&TxOutcome> for OutcomeRow {
    fn from(o: &TxOutcome) -> Self {
        Self {
            packet_id: o.packet_id,
            class: o.class,
            verdict: o.verdict.as_str().to_string(),
            created_ns: o.created_at.as_nanos(),
            resolved_ns: o.resolved_at.as_nanos(),
            delay_ns: o.delay().as_nanos(),
            attempts: o.attempts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputRow {
    pub window_index: u64,
    pub window_start_ns: u64,
    pub class: TrafficClass,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t_s: f64,
    pub x_m: f64,
    pub y_m: f64,
    pub heading_rad: f64,
    pub last_command_age_s: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CriticalCounts {
    pub generated: u64,
    pub success: u64,
    pub missed_deadline: u64,
    pub packet_loss: u64,
    pub in_flight: u64,
}

impl CriticalCounts {
    pub fn from_outcomes<'a>(outcomes: impl IntoIterator<Item = &'a TxOutcome>, generated: u64) -> Self {
        let mut c = CriticalCounts {
            generated,
            ..Default::default()
        };
        for o in outcomes {
            match o.verdict {
                Verdict::Success => c.success += 1,
                Verdict::MissedDeadline => c.missed_deadline += 1,
                Verdict::PacketLoss => c.packet_loss += 1,
            }
        }
        c.in_flight = generated - c.success - c.missed_deadline - c.packet_loss;
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: TrafficClass,
    #[serde(flatten)]
    pub counters: ClassCounters,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SyncSummary {
    pub rounds_completed: u64,
    pub rounds_dropped: u64,
    pub samples: u64,
    pub max_error_ns: i64,
    pub mean_error_ns: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingSummary {
    pub rmse_m: f64,
    pub commands_applied: u64,
    pub commands_discarded: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub mac_mode: MacMode,
    pub seed: u64,
    pub duration_s: f64,
    pub offered_load: f64,
    pub offered_rates_bps: OfferedRates,
    pub mission_critical: CriticalCounts,
    pub failure_mix: Option<FailureMix>,
    pub classes: Vec<ClassSummary>,
    pub non_critical_delivered_bytes: u64,
    pub sync: SyncSummary,
    pub tracking: Option<TrackingSummary>,
    pub diagnostics: Diagnostics,
    pub manager_events: Vec<ManagerEvent>,
    pub warnings: Vec<String>,
    pub events_processed: u64,
    /// Effective configuration with every default resolved.
    pub config: ScenarioConfig,
}

impl Summary {
    pub fn from_result(r: &RunResult) -> Self {
        let cfg = &r.config;
        let classes: Vec<ClassSummary> = TrafficClass::ALL
            .iter()
            .map(|&class| ClassSummary {
                class,
                counters: r.counters[class.index()],
            })
            .collect();
        let errs: Vec<i64> = r.sync_errors.iter().map(|&(_, e)| e).collect();
        let sync = SyncSummary {
            rounds_completed: r.diagnostics.sync_rounds_completed,
            rounds_dropped: r.diagnostics.sync_rounds_dropped,
            samples: errs.len() as u64,
            max_error_ns: errs.iter().copied().max().unwrap_or(0),
            mean_error_ns: if errs.is_empty() {
                0.0
            } else {
                errs.iter().map(|&e| e as f64).sum::<f64>() / errs.len() as f64
            },
        };
        Summary {
            schema_version: SCHEMA_VERSION,
            mac_mode: cfg.mac_mode,
            seed: cfg.seed,
            duration_s: cfg.duration_s,
            offered_load: offered_load(&cfg.traffic, &cfg.phy),
            offered_rates_bps: offered_rates(&cfg.traffic),
            mission_critical: CriticalCounts::from_outcomes(&r.outcomes, r.critical_generated),
            failure_mix: failure_mix(&r.outcomes),
            non_critical_delivered_bytes: r.delivered_bytes(TrafficClass::LargeVolume)
                + r.delivered_bytes(TrafficClass::EventDriven),
            classes,
            sync,
            tracking: r.tracking_rmse.map(|rmse_m| TrackingSummary {
                rmse_m,
                commands_applied: r.commands_applied,
                commands_discarded: r.commands_discarded,
            }),
            diagnostics: r.diagnostics.clone(),
            manager_events: r.manager_events.clone(),
            warnings: r.warnings.clone(),
            events_processed: r.events_processed,
            config: cfg.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, OutputError> {
        let s: Summary = serde_json::from_str(&fs::read_to_string(path)?)?;
        if s.schema_version != SCHEMA_VERSION {
            return Err(OutputError::Malformed(format!(
                "{}: schema_version {} (expected {SCHEMA_VERSION})",
                path.display(),
                s.schema_version
            )));
        }
        Ok(s)
    }
}

pub fn write_outcomes<W: std::io::Write>(w: W, outcomes: &[TxOutcome]) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_writer(w);
    for o in outcomes {
        w.serialize(OutcomeRow::from(o))?;
    }
    if outcomes.is_empty() {
        w.write_record(["packet_id", "class", "verdict", "created_ns", "resolved_ns", "delay_ns", "attempts"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn throughput_rows(r: &RunResult) -> Vec<ThroughputRow> {
    let n = r.throughput.window_count(r.run_end);
    let w = r.throughput.window.as_nanos();
    let series: Vec<Vec<u64>> = THROUGHPUT_CLASSES
        .iter()
        .map(|&c| r.throughput.throughput(c, r.run_end))
        .collect();
    let mut rows = Vec::with_capacity(n * THROUGHPUT_CLASSES.len());
    for k in 0..n {
        for (&class, s) in THROUGHPUT_CLASSES.iter().zip(&series) {
            rows.push(ThroughputRow {
                window_index: k as u64,
                window_start_ns: k as u64 * w,
                class,
                bytes: s[k],
            });
        }
    }
    rows
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Write every artifact of `r` into `dir` (created if missing).
pub fn write_run(dir: &Path, r: &RunResult) -> Result<Summary, OutputError> {
    fs::create_dir_all(dir)?;
    write_outcomes(fs::File::create(dir.join("outcomes.csv"))?, &r.outcomes)?;
    write_rows(&dir.join("throughput.csv"), throughput_rows(r))?;
    if let Some(traj) = &r.trajectory {
        write_rows(
            &dir.join("trajectory.csv"),
            traj.iter().map(|s| TrajectoryRow {
                t_s: s.t_s,
                x_m: s.x,
                y_m: s.y,
                heading_rad: s.heading,
                last_command_age_s: s.last_command_age_s,
            }),
        )?;
    }
    let summary = Summary::from_result(r);
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

pub fn read_outcomes(path: &Path) -> Result<Vec<TxOutcome>, OutputError> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rd.deserialize() {
        let row: OutcomeRow = row?;
        let verdict = Verdict::parse(&row.verdict)
            .ok_or_else(|| OutputError::Malformed(format!("unknown verdict {:?}", row.verdict)))?;
        if row.resolved_ns < row.created_ns || row.resolved_ns - row.created_ns != row.delay_ns {
            return Err(OutputError::Malformed(format!(
                "packet {}: delay_ns does not match its timestamps",
                row.packet_id
            )));
        }
        out.push(TxOutcome {
            packet_id: row.packet_id,
            class: row.class,
            verdict,
            created_at: SimTime(row.created_ns),
            resolved_at: SimTime(row.resolved_ns),
            attempts: row.attempts,
        });
    }
    Ok(out)
}

pub fn read_throughput(path: &Path) -> Result<Vec<ThroughputRow>, OutputError> {
    let mut rd = csv::Reader::from_path(path)?;
    rd.deserialize().map(|r| r.map_err(OutputError::from)).collect()
}

/// Figures recomputed from a run directory's CSVs alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub outcomes: u64,
    pub success: u64,
    pub missed_deadline: u64,
    pub packet_loss: u64,
    pub failure_mix: Option<FailureMix>,
    pub mean_delay_ms: Option<f64>,
    pub max_delay_ms: Option<f64>,
    pub delivered_bytes: Vec<(TrafficClass, u64)>,
    pub windows: u64,
}

pub fn report(dir: &Path) -> Result<Report, OutputError> {
    let outcomes = read_outcomes(&dir.join("outcomes.csv"))?;
    let tput = read_throughput(&dir.join("throughput.csv"))?;
    let counts = CriticalCounts::from_outcomes(&outcomes, outcomes.len() as u64);
    let delays: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.verdict != Verdict::PacketLoss)
        .map(|o| o.delay().as_secs_f64() * 1e3)
        .collect();
    let delivered_bytes = THROUGHPUT_CLASSES
        .iter()
        .map(|&c| (c, tput.iter().filter(|r| r.class == c).map(|r| r.bytes).sum()))
        .collect();
    Ok(Report {
        outcomes: outcomes.len() as u64,
        success: counts.success,
        missed_deadline: counts.missed_deadline,
        packet_loss: counts.packet_loss,
        failure_mix: failure_mix(&outcomes),
        mean_delay_ms: (!delays.is_empty()).then(|| delays.iter().sum::<f64>() / delays.len() as f64),
        max_delay_ms: delays.iter().copied().reduce(f64::max),
        delivered_bytes,
        windows: tput.iter().map(|r| r.window_index + 1).max().unwrap_or(0),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeAggregate {
    pub runs: u64,
    pub mean_missed_deadline: f64,
    pub mean_packet_loss: f64,
    pub mean_success: f64,
    pub mean_non_critical_bytes: f64,
    pub missed_share_of_failures_pct: Option<f64>,
    pub mean_rmse_m: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub seeds: Vec<u64>,
    /// Reduction of the mean missed-deadline count, hybrid against CSMA.
    pub missed_deadline_reduction_pct: Option<f64>,
    /// Hybrid non-critical bytes relative to CSMA, minus one.
    pub non_critical_throughput_change_pct: Option<f64>,
    pub rmse_reduction_pct: Option<f64>,
    pub rmse_hybrid_better: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepAggregate {
    pub schema_version: u32,
    pub csma: Option<ModeAggregate>,
    pub hybrid: Option<ModeAggregate>,
    pub paired: Option<PairedComparison>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = xs.fold((0u64, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| s / n as f64)
}

fn mode_aggregate(runs: &[&Summary]) -> Option<ModeAggregate> {
    if runs.is_empty() {
        return None;
    }
    let missed: u64 = runs.iter().map(|s| s.mission_critical.missed_deadline).sum();
    let lost: u64 = runs.iter().map(|s| s.mission_critical.packet_loss).sum();
    Some(ModeAggregate {
        runs: runs.len() as u64,
        mean_missed_deadline: mean(runs.iter().map(|s| s.mission_critical.missed_deadline as f64))?,
        mean_packet_loss: mean(runs.iter().map(|s| s.mission_critical.packet_loss as f64))?,
        mean_success: mean(runs.iter().map(|s| s.mission_critical.success as f64))?,
        mean_non_critical_bytes: mean(runs.iter().map(|s| s.non_critical_delivered_bytes as f64))?,
        missed_share_of_failures_pct: (missed + lost > 0).then(|| 100.0 * missed as f64 / (missed + lost) as f64),
        mean_rmse_m: if runs.iter().all(|s| s.tracking.is_some()) {
            mean(runs.iter().filter_map(|s| s.tracking.as_ref().map(|t| t.rmse_m)))
        } else {
            None
        },
    })
}

/// Aggregate per-run summaries; paired statistics use seeds present in both
/// modes.
pub fn aggregate(summaries: &[Summary]) -> SweepAggregate {
    let by_mode = |m: MacMode| -> Vec<&Summary> { summaries.iter().filter(|s| s.mac_mode == m).collect() };
    let csma = by_mode(MacMode::Csma);
    let hybrid = by_mode(MacMode::Hybrid);
    let mut pairs: Vec<(&Summary, &Summary)> = csma
        .iter()
        .filter_map(|c| hybrid.iter().find(|h| h.seed == c.seed).map(|h| (*c, *h)))
        .collect();
    pairs.sort_by_key(|(c, _)| c.seed);
    let paired = (!pairs.is_empty()).then(|| {
        let pc: Vec<&Summary> = pairs.iter().map(|p| p.0).collect();
        let ph: Vec<&Summary> = pairs.iter().map(|p| p.1).collect();
        let (ac, ah) = (mode_aggregate(&pc).expect("non-empty"), mode_aggregate(&ph).expect("non-empty"));
        let rmse: Vec<(f64, f64)> = pairs
            .iter()
            .filter_map(|(c, h)| Some((c.tracking.as_ref()?.rmse_m, h.tracking.as_ref()?.rmse_m)))
            .collect();
        let tracked = rmse.len() == pairs.len();
        PairedComparison {
            seeds: pairs.iter().map(|p| p.0.seed).collect(),
            missed_deadline_reduction_pct: (ac.mean_missed_deadline > 0.0)
                .then(|| 100.0 * (1.0 - ah.mean_missed_deadline / ac.mean_missed_deadline)),
            non_critical_throughput_change_pct: (ac.mean_non_critical_bytes > 0.0)
                .then(|| 100.0 * (ah.mean_non_critical_bytes / ac.mean_non_critical_bytes - 1.0)),
            rmse_reduction_pct: match (tracked, ac.mean_rmse_m, ah.mean_rmse_m) {
                (true, Some(c), Some(h)) if c > 0.0 => Some(100.0 * (1.0 - h / c)),
                _ => None,
            },
            rmse_hybrid_better: tracked.then(|| rmse.iter().filter(|(c, h)| h < c).count() as u64),
        }
    });
    SweepAggregate {
        schema_version: SCHEMA_VERSION,
        csma: mode_aggregate(&csma),
        hybrid: mode_aggregate(&hybrid),
        paired,
    }
}
