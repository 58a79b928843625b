//! End-to-end scenarios through the full event loop.

use hybrid_mac_sim::config::{Injection, MacMode, ManagerAction, NodeConfig, ScenarioConfig};
use hybrid_mac_sim::hybrid::{QueueKind, ReallocationRequest, SlotAssignment, SubscriptionQos};
use hybrid_mac_sim::medium::RxResult;
use hybrid_mac_sim::metrics::Verdict;
use hybrid_mac_sim::sim::rng_stream;
use hybrid_mac_sim::time::{SimDuration, SimTime};
use hybrid_mac_sim::traffic::TrafficClass;
use hybrid_mac_sim::world::{backoff_stream_label, run, TxKind, TxRecord, World};
use proptest::prelude::*;
use rand::Rng;

const MS: u64 = 1_000_000;

/// Default network with every generator switched off.
fn quiet(mode: MacMode) -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        mac_mode: mode,
        duration_s: 1.0,
        ..ScenarioConfig::default()
    };
    cfg.traffic.large_volume.enabled = false;
    cfg.traffic.event_driven.enabled = false;
    cfg.traffic.mission_critical.enabled = false;
    cfg
}

fn data_txs(log: &[TxRecord]) -> impl Iterator<Item = &TxRecord> {
    log.iter().filter(|t| matches!(t.kind, TxKind::Data { .. }))
}

fn beacon_airtime(cfg: &ScenarioConfig) -> u64 {
    cfg.beacon_airtime().as_nanos()
}

#[test]
fn equal_backoff_draws_collide_and_both_retry() {
    let mut cfg = quiet(MacMode::Csma);
    cfg.nodes = vec![NodeConfig::server(), NodeConfig::client(0.0, 0), NodeConfig::client(0.0, 0)];
    cfg.phy.frame_error_prob = 0.0;
    let seed = (1..10_000u64)
        .find(|&s| {
            let a: u32 = rng_stream(s, &backoff_stream_label(1)).random_range(0..=15);
            let b: u32 = rng_stream(s, &backoff_stream_label(2)).random_range(0..=15);
            a == b
        })
        .expect("some seed draws a tie");
    cfg.seed = seed;
    let mut w = World::new(&cfg).unwrap();
    w.enable_tx_log();
    let at = SimTime(MS);
    w.schedule_packet(at, 1, 0, TrafficClass::LargeVolume, 1000);
    w.schedule_packet(at, 2, 0, TrafficClass::LargeVolume, 1000);
    let r = w.finish();
    let log = r.tx_log.as_ref().unwrap();
    let data: Vec<&TxRecord> = data_txs(log).collect();
    assert_eq!(data[0].start, data[1].start, "tied backoffs start together");
    assert_ne!(data[0].sender, data[1].sender);
    let rx = r.rx_log.as_ref().unwrap();
    for d in &data[..2] {
        let res = rx.iter().find(|x| x.tx == d.tx && x.receiver == 0).unwrap();
        assert_eq!(res.result, RxResult::Collided);
    }
    // both eventually get through on a retry
    assert_eq!(r.delivered_bytes(TrafficClass::LargeVolume), 2000);
    assert!(data.len() >= 4);
    assert!(data[2].start > data[0].end);
}

#[test]
fn legacy_node_defers_until_nav_expires() {
    let mut cfg = quiet(MacMode::Hybrid);
    cfg.nodes.push(NodeConfig::legacy());
    let mut w = World::new(&cfg).unwrap();
    w.enable_tx_log();
    // queued right after the beacon, inside TDMA + control
    w.schedule_packet(SimTime(MS), 2, 0, TrafficClass::LargeVolume, 1000);
    let r = w.finish();
    let tx = data_txs(r.tx_log.as_ref().unwrap()).find(|t| t.sender == 2).unwrap();
    let layout = cfg.superframe_config().unwrap();
    let nav_end = beacon_airtime(&cfg) + cfg.phy.link_delay(0, 2).as_nanos() + layout.t_nav().as_nanos();
    assert!(tx.start.as_nanos() >= nav_end, "{} < {}", tx.start.as_nanos(), nav_end);
    assert!(tx.start.as_nanos() < nav_end + 200_000);
    assert_eq!(r.diagnostics.nav_intrusions, 0);
    assert_eq!(r.delivered_bytes(TrafficClass::LargeVolume), 1000);
}

/// A legacy frame straddling the beacon hides the beacon from the legacy
/// node itself and from the client.
fn straddled_beacon(with_commands: bool) -> hybrid_mac_sim::world::RunResult {
    let mut cfg = quiet(MacMode::Hybrid);
    cfg.nodes.push(NodeConfig::legacy());
    cfg.phy.frame_error_prob = 0.0;
    cfg.traffic.mission_critical.enabled = with_commands;
    let mut w = World::new(&cfg).unwrap();
    w.enable_tx_log();
    w.schedule_packet(SimTime(500 * MS - 800_000), 2, 0, TrafficClass::LargeVolume, 3000);
    w.finish()
}

#[test]
fn missed_beacon_lets_a_legacy_node_hit_the_tdma_section() {
    let r = straddled_beacon(true);
    assert!(r.diagnostics.beacons_missed >= 1);
    assert!(r.diagnostics.nav_intrusions >= 1);
    assert!(r.diagnostics.critical_collisions >= 1);
    let lost = r.outcomes.iter().find(|o| o.created_at == SimTime(500 * MS)).unwrap();
    assert_eq!(lost.verdict, Verdict::PacketLoss);
    // every other command is fine
    assert_eq!(r.count(Verdict::Success), r.critical_generated - 1);
}

#[test]
fn collided_beacon_ages_the_clock_estimate_by_one_superframe() {
    let r = straddled_beacon(false);
    let ages: Vec<(SimTime, f64)> = r
        .sync_age
        .iter()
        .filter(|(_, n, _)| *n == 1)
        .filter_map(|&(t, _, a)| a.map(|a| (t, a)))
        .collect();
    assert!(ages.iter().all(|&(t, _)| !(t >= SimTime(500 * MS) && t < SimTime(600 * MS))));
    let steady = ages.iter().find(|(t, _)| *t > SimTime(200 * MS)).unwrap().1;
    assert!((steady - 0.1).abs() < 1e-3, "steady age {steady}");
    let after = ages.iter().find(|(t, _)| *t > SimTime(500 * MS)).unwrap().1;
    assert!(after >= steady + 0.1 - 1e-3, "age after the collision {after}");
    // and it recovers
    let later = ages.iter().find(|(t, _)| *t > SimTime(800 * MS)).unwrap().1;
    assert!((later - steady).abs() < 1e-3);
}

#[test]
fn slot_transmissions_land_where_the_schedule_says() {
    let mut cfg = quiet(MacMode::Hybrid);
    cfg.traffic.mission_critical.enabled = true;
    cfg.duration_s = 5.0;
    cfg.nodes = vec![NodeConfig::server(), NodeConfig::client(5.0, -80_000)];
    cfg.phy.frame_error_prob = 0.0;
    let mut w = World::new(&cfg).unwrap();
    w.enable_tx_log();
    let r = w.finish();
    let layout = cfg.superframe_config().unwrap();
    let ba = beacon_airtime(&cfg);
    let delay = cfg.phy.link_delay(1, 0).as_nanos();
    let tdma: Vec<&TxRecord> = r.tx_log.as_ref().unwrap().iter().filter(|t| t.slot.is_some()).collect();
    assert_eq!(tdma.len() as u64, r.critical_generated);
    for t in tdma.iter().skip(2) {
        let (frame, slot) = t.slot.unwrap();
        // slot j starts after the beacon, (j - 1) slot lengths in; the
        // packet is aimed at half a guard into the slot
        let expected = frame * 100 * MS + ba + (u64::from(slot) - 1) * layout.tau_tdma.as_nanos() + 10_000;
        let arrival = t.start.as_nanos() + delay;
        let err = arrival as i64 - expected as i64;
        assert!(err.abs() <= 1_000, "frame {frame}: landed {err} ns off");
    }
    assert_eq!(r.diagnostics.tdma_outside_slot, 0);
    assert_eq!(r.count(Verdict::Success), r.critical_generated);
}

#[test]
fn second_packet_waits_a_full_superframe() {
    let cfg = quiet(MacMode::Hybrid);
    let mut w = World::new(&cfg).unwrap();
    w.enable_tx_log();
    w.schedule_packet(SimTime(10 * MS), 1, 0, TrafficClass::MissionCritical, 25);
    w.schedule_packet(SimTime(10 * MS), 1, 0, TrafficClass::MissionCritical, 25);
    let mut depth = Vec::new();
    for t in [50, 150, 250] {
        w.run_until(SimTime(t * MS));
        depth.push(w.tdma_queue_len(1));
    }
    assert_eq!(depth, vec![2, 1, 0]);
    let r = w.finish();
    let starts: Vec<u64> = r
        .tx_log
        .as_ref()
        .unwrap()
        .iter()
        .filter(|t| t.slot.is_some())
        .map(|t| t.start.as_nanos())
        .collect();
    assert_eq!(starts.len(), 2);
    let gap = starts[1] - starts[0];
    assert!((gap as i64 - 100 * MS as i64).abs() < 1_000, "gap {gap}");
}

#[test]
fn empty_tdma_queue_leaves_the_slot_idle() {
    let cfg = quiet(MacMode::Hybrid);
    let mut w = World::new(&cfg).unwrap();
    w.enable_tx_log();
    let r = w.finish();
    assert!(r.tx_log.unwrap().iter().all(|t| t.slot.is_none()));
    assert_eq!(r.diagnostics.tdma_transmissions, 0);
}

#[test]
fn general_traffic_never_crosses_into_the_next_superframe() {
    let mut cfg = quiet(MacMode::Hybrid);
    cfg.phy.frame_error_prob = 0.0;
    let mut w = World::new(&cfg).unwrap();
    w.enable_tx_log();
    // would end after the next beacon if sent immediately
    w.schedule_packet(SimTime(100 * MS - 300_000), 1, 0, TrafficClass::LargeVolume, 1434);
    let r = w.finish();
    let gen_start = cfg.superframe_config().unwrap().gen_start().as_nanos();
    let tx = data_txs(r.tx_log.as_ref().unwrap()).next().unwrap();
    assert!(tx.start.as_nanos() >= 100 * MS + gen_start - 200_000);
    assert_eq!(r.diagnostics.gen_airtime_in_nav_ns, 0);
    assert_eq!(r.delivered_bytes(TrafficClass::LargeVolume), 1434);
}

fn reassignment_config() -> ScenarioConfig {
    let mut cfg = quiet(MacMode::Hybrid);
    cfg.duration_s = 1.0;
    cfg.nodes = vec![NodeConfig::server(), NodeConfig::client(2.0, 40_000), NodeConfig::client(-3.0, -70_000)];
    cfg.superframe.n_tdma = 2;
    cfg.superframe.slot_owners = vec![Some(1), Some(2)];
    cfg.phy.frame_error_prob = 0.0;
    cfg.injections = vec![Injection {
        at_s: 0.5,
        action: ManagerAction::Reallocate(ReallocationRequest {
            n_tdma: None,
            tau_tdma_ns: None,
            assignments: vec![SlotAssignment::new(2, Some(1))],
        }),
    }];
    cfg
}

#[test]
fn reassigned_slot_changes_hands_at_one_boundary() {
    let cfg = reassignment_config();
    let mut w = World::new(&cfg).unwrap();
    w.enable_tx_log();
    for k in 0..10 {
        let at = SimTime(k * 100 * MS + 20 * MS);
        w.schedule_packet(at, 1, 0, TrafficClass::MissionCritical, 25);
        w.schedule_packet(at, 1, 0, TrafficClass::MissionCritical, 25);
        w.schedule_packet(at, 2, 0, TrafficClass::MissionCritical, 25);
    }
    let r = w.finish();
    assert!(r.manager_events[0].accepted);
    let log = r.tx_log.as_ref().unwrap();
    let slot2: Vec<(u64, usize)> = log
        .iter()
        .filter(|t| t.slot.map(|s| s.1) == Some(2))
        .map(|t| (t.slot.unwrap().0, t.sender))
        .collect();
    let switch = slot2.iter().find(|(_, s)| *s == 1).expect("new owner used the slot").0;
    assert!(switch > 5, "switch frame {switch} must follow the broadcast");
    for &(f, s) in &slot2 {
        assert_eq!(s, if f < switch { 2 } else { 1 }, "frame {f}");
    }
    // every frame's slot 2 has one sender
    let mut frames: Vec<u64> = slot2.iter().map(|x| x.0).collect();
    frames.dedup();
    assert_eq!(frames.len(), slot2.len());
    // the map was delivered to node 1 before it used the slot
    let delivered = log
        .iter()
        .filter(|t| matches!(&t.kind, TxKind::Mgmt { what } if what == "slot_map"))
        .map(|t| t.end)
        .min()
        .unwrap();
    let first_use = log.iter().find(|t| t.slot == Some((switch, 2))).unwrap().start;
    assert!(delivered < first_use);
    assert_eq!(r.diagnostics.critical_collisions, 0);
    assert_eq!(r.diagnostics.tdma_outside_slot, 0);
}

#[test]
fn growing_the_tdma_section_adds_slots_from_the_next_frame() {
    let mut cfg = quiet(MacMode::Hybrid);
    cfg.traffic.mission_critical.enabled = true;
    cfg.traffic.mission_critical.period_ms = 25;
    cfg.phy.frame_error_prob = 0.0;
    cfg.superframe.n_tdma = 2;
    cfg.superframe.slot_owners = vec![Some(1), None];
    cfg.injections = vec![Injection {
        at_s: 0.3,
        action: ManagerAction::Reallocate(ReallocationRequest {
            n_tdma: Some(4),
            tau_tdma_ns: None,
            assignments: vec![
                SlotAssignment::new(2, Some(1)),
                SlotAssignment::new(3, Some(1)),
                SlotAssignment::new(4, Some(1)),
            ],
        }),
    }];
    let mut w = World::new(&cfg).unwrap();
    w.enable_tx_log();
    let r = w.finish();
    let mut per_frame = std::collections::BTreeMap::<u64, u16>::new();
    for t in r.tx_log.as_ref().unwrap().iter().filter_map(|t| t.slot) {
        let e = per_frame.entry(t.0).or_default();
        *e = (*e).max(t.1);
    }
    let first_four = per_frame.iter().find(|(_, &m)| m > 1).map(|(&f, _)| f).unwrap();
    assert!(per_frame.range(..first_four).all(|(_, &m)| m == 1));
    assert!(first_four >= 4);
    // the backlog built up at one slot per frame drains at four
    assert!(per_frame.range(first_four..).all(|(_, &m)| m >= 2));
    assert_eq!(r.diagnostics.tdma_outside_slot, 0);
    assert_eq!(r.diagnostics.slot_maps_applied, 1);
}

#[test]
fn rejected_and_late_injections_are_reported() {
    let mut cfg = quiet(MacMode::Hybrid);
    cfg.injections = vec![
        Injection {
            at_s: 0.2,
            action: ManagerAction::Subscribe {
                node: 1,
                qos: SubscriptionQos {
                    deadline_ns: 2 * MS,
                    period_ns: 2 * MS,
                    priority: 0,
                },
            },
        },
        Injection {
            at_s: 0.3,
            action: ManagerAction::Reallocate(ReallocationRequest {
                n_tdma: None,
                tau_tdma_ns: Some(10_000),
                assignments: vec![],
            }),
        },
        Injection {
            at_s: 5.0,
            action: ManagerAction::Reallocate(ReallocationRequest {
                n_tdma: Some(2),
                tau_tdma_ns: None,
                assignments: vec![],
            }),
        },
    ];
    let r = run(&cfg).unwrap();
    assert_eq!(r.manager_events.len(), 2);
    assert!(r.manager_events.iter().all(|e| !e.accepted));
    assert!(r.manager_events[0].detail.contains("slots"));
    assert_eq!(r.warnings.len(), 1);
    assert!(r.warnings[0].contains("beyond the run duration"));
    assert_eq!(r.diagnostics.slot_maps_applied, 0);
}

#[test]
fn feasible_subscription_grants_slots() {
    let mut cfg = quiet(MacMode::Hybrid);
    cfg.superframe.n_tdma = 4;
    cfg.superframe.slot_owners = vec![None; 4];
    cfg.injections = vec![Injection {
        at_s: 0.1,
        action: ManagerAction::Subscribe {
            node: 1,
            qos: SubscriptionQos {
                deadline_ns: 50 * MS,
                period_ns: 100 * MS,
                priority: 1,
            },
        },
    }];
    let mut w = World::new(&cfg).unwrap();
    w.run_until(SimTime(900 * MS));
    assert_eq!(w.active_slot_map(1).slots_of(1).len(), 2);
    let r = w.finish();
    assert!(r.manager_events[0].accepted);
}

#[test]
fn unassociated_client_joins_before_sending_general_traffic() {
    let mut cfg = quiet(MacMode::Hybrid);
    cfg.nodes[1].associated = false;
    cfg.phy.frame_error_prob = 0.0;
    let mut w = World::new(&cfg).unwrap();
    w.enable_tx_log();
    w.schedule_packet(SimTime(MS), 1, 0, TrafficClass::LargeVolume, 500);
    let r = w.finish();
    let log = r.tx_log.as_ref().unwrap();
    let assoc = log
        .iter()
        .find(|t| matches!(&t.kind, TxKind::Mgmt { what } if what == "assoc_response"))
        .unwrap();
    let data = data_txs(log).next().unwrap();
    assert!(assoc.end < data.start);
    assert_eq!(data.queue, Some(QueueKind::CsmaGen));
    assert_eq!(r.delivered_bytes(TrafficClass::LargeVolume), 500);
}

#[test]
fn event_driven_cycles_run_poll_history_response() {
    let mut cfg = quiet(MacMode::Csma);
    cfg.traffic.event_driven.enabled = true;
    cfg.traffic.event_driven.interarrival_mean_s = 2.0;
    cfg.traffic.event_driven.response_mean_s = 0.5;
    cfg.duration_s = 60.0;
    let r = run(&cfg).unwrap();
    let d = &r.diagnostics;
    assert!(d.event_cycles_started > 10);
    assert!(d.event_cycles_completed + 3 >= d.event_cycles_started);
    let ed = r.counters[TrafficClass::EventDriven.index()];
    let cycle = cfg.traffic.event_driven.cycle_bytes();
    assert!(ed.delivered_bytes >= d.event_cycles_completed * cycle);
}

#[test]
fn trace_digest_is_reproducible_and_seed_sensitive() {
    let digest = |seed| {
        let cfg = ScenarioConfig {
            duration_s: 8.0,
            seed,
            ..ScenarioConfig::default()
        };
        let mut w = World::new(&cfg).unwrap();
        w.enable_trace_digest();
        w.finish().trace_digest.unwrap()
    };
    assert_eq!(digest(4), digest(4));
    assert_ne!(digest(4), digest(5));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn outcomes_are_conserved(seed in 0u64..1000, hybrid in any::<bool>(), secs in 1u32..12) {
        let cfg = ScenarioConfig {
            mac_mode: if hybrid { MacMode::Hybrid } else { MacMode::Csma },
            seed,
            duration_s: f64::from(secs),
            ..ScenarioConfig::default()
        };
        let r = run(&cfg).unwrap();
        let resolved = r.count(Verdict::Success) + r.count(Verdict::MissedDeadline) + r.count(Verdict::PacketLoss);
        prop_assert_eq!(resolved + r.critical_in_flight, r.critical_generated);
        prop_assert_eq!(r.critical_generated, u64::from(secs) * 10);
        for o in &r.outcomes {
            prop_assert!(o.resolved_at >= o.created_at);
            prop_assert!(o.resolved_at <= r.run_end);
        }
        let c = r.counters[TrafficClass::LargeVolume.index()];
        prop_assert!(c.delivered_bytes <= c.generated_bytes);
        if hybrid {
            prop_assert_eq!(r.diagnostics.gen_airtime_in_nav_ns, 0);
            prop_assert_eq!(r.diagnostics.critical_collisions, 0);
        }
    }
}

#[test]
fn clock_estimate_tracks_drift() {
    let mut cfg = quiet(MacMode::Hybrid);
    cfg.nodes = vec![NodeConfig::server(), NodeConfig::client(-5.0, 300_000)];
    cfg.duration_s = 3.0;
    let mut w = World::new(&cfg).unwrap();
    w.run_until(SimTime::from_secs(2));
    let est = w.ptp_estimate(1);
    let osc = cfg.nodes[1].oscillator();
    let err = (est.o_hat - osc.offset_at(SimTime::from_secs(2))).abs();
    assert!(err < 1_000, "offset error {err} ns");
    // drift inside one exchange (a few ms at 5 ppm) biases the delay by
    // at most a few tens of ns
    let d = cfg.phy.link_delay(0, 1).as_i64();
    assert!((est.d_hat - d).abs() <= (5e-6 * SimDuration::from_millis(10).as_nanos() as f64) as i64);
}
