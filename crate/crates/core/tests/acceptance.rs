//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::thread;
use std::time::Instant;

use hybrid_mac_sim::clocks::{ptp_update, SyncRecord};
use hybrid_mac_sim::config::{MacMode, NodeConfig, ScenarioConfig};
use hybrid_mac_sim::metrics::{failure_mix, Verdict};
use hybrid_mac_sim::output::write_outcomes;
use hybrid_mac_sim::sim::rng_stream;
use hybrid_mac_sim::time::SimDuration;
use hybrid_mac_sim::tracking::run_synthetic;
use hybrid_mac_sim::traffic::{offered_load, TrafficClass};
use hybrid_mac_sim::world::{run, RunResult};
use rand::Rng;

const SEEDS: [u64; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

struct Line {
    id: u32,
    pass: bool,
    text: String,
}

fn line(id: u32, pass: bool, text: String) -> Line {
    Line { id, pass, text }
}

fn scenario(mode: MacMode, seed: u64, duration_s: f64) -> ScenarioConfig {
    ScenarioConfig {
        mac_mode: mode,
        seed,
        duration_s,
        ..ScenarioConfig::default()
    }
}

fn tracking_scenario(mode: MacMode, seed: u64) -> ScenarioConfig {
    let mut cfg = scenario(mode, seed, 0.0);
    cfg.tracking.enabled = true;
    cfg.duration_s = cfg.tracking.traverse_time().as_secs_f64() + 1.0;
    cfg
}

/// Run every configuration, at most `available_parallelism` at a time.
fn run_all(cfgs: Vec<ScenarioConfig>) -> Vec<RunResult> {
    let workers = thread::available_parallelism().map_or(1, |n| n.get());
    let mut out: Vec<Option<RunResult>> = (0..cfgs.len()).map(|_| None).collect();
    for (chunk_idx, chunk) in cfgs.chunks(workers).enumerate() {
        thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|c| s.spawn(move || run(c).expect("acceptance scenarios are valid")))
                .collect();
            for (i, h) in handles.into_iter().enumerate() {
                out[chunk_idx * workers + i] = Some(h.join().expect("run panicked"));
            }
        });
    }
    out.into_iter().map(|r| r.expect("filled")).collect()
}

fn outcomes_bytes(r: &RunResult) -> Vec<u8> {
    let mut buf = Vec::new();
    write_outcomes(&mut buf, &r.outcomes).unwrap();
    buf
}

fn ptp_exactness() -> Line {
    let t0 = Instant::now();
    let mut rng = rng_stream(2024, "acceptance/ptp");
    let mut worst = (0i64, 0i64);
    for _ in 0..10_000 {
        let d: i64 = rng.random_range(0..=1_000_000);
        let o: i64 = rng.random_range(-1_000_000_000..=1_000_000_000);
        let s_ap: i64 = rng.random_range(0..=1_000_000_000_000);
        let turnaround: i64 = rng.random_range(1..=100_000_000);
        // client clock reads true time + o
        let s_tilde = s_ap + d + o;
        let s_response = s_tilde + turnaround;
        let t_server_rx = s_response - o + d;
        let est = ptp_update(&SyncRecord {
            s_ap_beacon: s_ap,
            s_tilde_arrival: s_tilde,
            s_response,
            t_server_rx,
        });
        worst.0 = worst.0.max((est.d_hat - d).abs());
        worst.1 = worst.1.max((est.o_hat - o).abs());
    }
    let el = t0.elapsed();
    line(
        1,
        worst.0 <= 1 && worst.1 <= 1 && el.as_secs_f64() < 1.0,
        format!(
            "PTP exactness: max |d err| {} ns, max |o err| {} ns over 10^4 records in {:.1} ms",
            worst.0,
            worst.1,
            el.as_secs_f64() * 1e3
        ),
    )
}

fn sync_precision(runs: &[RunResult]) -> Line {
    let mut worst = 0i64;
    let mut samples = 0usize;
    for r in runs {
        samples += r.sync_errors.len();
        worst = worst.max(r.sync_errors.iter().map(|&(_, e)| e).max().unwrap_or(i64::MAX));
    }
    line(
        2,
        worst < 1_000 && samples > 0,
        format!("sub-microsecond sync: max |o_hat err| {worst} ns over {samples} TDMA fires (drift +-5 ppm, 60 s)"),
    )
}

fn main() {
    let t0 = Instant::now();
    let mut cfgs = Vec::new();
    for &s in &SEEDS {
        cfgs.push(scenario(MacMode::Csma, s, 1000.0));
        cfgs.push(scenario(MacMode::Hybrid, s, 1000.0));
    }
    for &s in &SEEDS {
        cfgs.push(tracking_scenario(MacMode::Csma, s));
        cfgs.push(tracking_scenario(MacMode::Hybrid, s));
    }
    for drift in [5.0, -5.0] {
        let mut c = scenario(MacMode::Hybrid, 11, 60.0);
        c.nodes = vec![NodeConfig::server(), NodeConfig::client(drift, 250_000)];
        cfgs.push(c);
    }
    cfgs.push(scenario(MacMode::Csma, 12, 300.0));
    // repeats for determinism
    cfgs.push(scenario(MacMode::Csma, 1, 1000.0));
    cfgs.push(scenario(MacMode::Hybrid, 1, 1000.0));
    cfgs.push(tracking_scenario(MacMode::Csma, 1));
    let runs = run_all(cfgs);
    let (table, rest) = runs.split_at(2 * SEEDS.len());
    let (tracking, rest) = rest.split_at(2 * SEEDS.len());
    let (sync, rest) = rest.split_at(2);
    let (calib, repeats) = rest.split_at(1);
    let csma: Vec<&RunResult> = table.iter().step_by(2).collect();
    let hybrid: Vec<&RunResult> = table.iter().skip(1).step_by(2).collect();

    let mut lines = vec![ptp_exactness(), sync_precision(sync)];

    // 3
    let h5 = &hybrid[..5];
    let coll: u64 = h5.iter().map(|r| r.diagnostics.critical_collisions).sum();
    let nav: u64 = h5.iter().map(|r| r.diagnostics.gen_airtime_in_nav_ns).sum();
    lines.push(line(
        3,
        coll == 0 && nav == 0,
        format!("TDMA collision-freedom: {coll} collided critical frames, {nav} ns general airtime inside NAV (5 seeds x 1000 s)"),
    ));

    // 4
    let mix = failure_mix(csma.iter().flat_map(|r| r.outcomes.iter())).expect("the baseline fails");
    let per_seed_min = csma
        .iter()
        .filter_map(|r| failure_mix(&r.outcomes))
        .map(|m| m.missed_pct)
        .fold(f64::INFINITY, f64::min);
    lines.push(line(
        4,
        mix.missed_pct > 90.0,
        format!(
            "CSMA failure mix: missed-deadline {:.2}% of {} failures (lowest seed {:.2}%), threshold 90%",
            mix.missed_pct,
            mix.missed + mix.lost,
            per_seed_min
        ),
    ));

    // 5
    let mean = |rs: &[&RunResult], f: &dyn Fn(&RunResult) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / rs.len() as f64;
    let mc = mean(&csma, &|r| r.count(Verdict::MissedDeadline) as f64);
    let mh = mean(&hybrid, &|r| r.count(Verdict::MissedDeadline) as f64);
    let red = 100.0 * (1.0 - mh / mc);
    lines.push(line(
        5,
        red >= 80.0,
        format!("hybrid improvement: mean missed deadlines {mc:.1} -> {mh:.1}, reduction {red:.1}% (need >= 80%)"),
    ));

    // 6
    let nc = |r: &RunResult| r.delivered_bytes(TrafficClass::LargeVolume) + r.delivered_bytes(TrafficClass::EventDriven);
    let diffs: Vec<f64> = csma
        .iter()
        .zip(&hybrid)
        .map(|(c, h)| 100.0 * (nc(h) as f64 / nc(c) as f64 - 1.0))
        .collect();
    let worst = diffs.iter().copied().fold(0.0f64, |a, d| if d.abs() > a.abs() { d } else { a });
    let mean_diff = diffs.iter().sum::<f64>() / diffs.len() as f64;
    lines.push(line(
        6,
        diffs.iter().all(|d| d.abs() <= 5.0),
        format!("non-critical throughput: hybrid vs CSMA mean {mean_diff:+.3}%, worst pair {worst:+.3}% (tolerance +-5%)"),
    ));

    // 7
    let c = &calib[0];
    let analytic = offered_load(&c.config.traffic, &c.config.phy);
    let generated: u64 = TrafficClass::ALL.iter().map(|&k| c.counters[k.index()].generated_bytes).sum();
    let simulated = generated as f64 * 8.0 / c.config.duration_s / c.config.phy.data_rate_bps as f64;
    let rel = (simulated / analytic - 1.0).abs();
    lines.push(line(
        7,
        (analytic - 0.771).abs() <= 0.005 && rel <= 0.01,
        format!(
            "offered load: analytic {analytic:.4} (target 0.771 +- 0.005), simulated over 300 s {simulated:.4} ({:.2}% off)",
            rel * 100.0
        ),
    ));

    // 8
    let all: Vec<&RunResult> = runs.iter().collect();
    let broken = all
        .iter()
        .filter(|r| {
            r.count(Verdict::Success) + r.count(Verdict::MissedDeadline) + r.count(Verdict::PacketLoss) + r.critical_in_flight
                != r.critical_generated
        })
        .count();
    let generated: u64 = all.iter().map(|r| r.critical_generated).sum();
    lines.push(line(
        8,
        broken == 0,
        format!("outcome conservation: {broken} of {} runs unbalanced ({generated} critical packets)", all.len()),
    ));

    // 9
    let tc: Vec<f64> = tracking.iter().step_by(2).map(|r| r.tracking_rmse.unwrap()).collect();
    let th: Vec<f64> = tracking.iter().skip(1).step_by(2).map(|r| r.tracking_rmse.unwrap()).collect();
    let better = tc.iter().zip(&th).filter(|(c, h)| h < c).count();
    let mean_c = tc.iter().sum::<f64>() / tc.len() as f64;
    let mean_h = th.iter().sum::<f64>() / th.len() as f64;
    let cfg = &tracking[0].config;
    let ideal = run_synthetic(
        &cfg.tracking,
        SimDuration::from_millis(cfg.traffic.mission_critical.period_ms),
        SimDuration::from_millis(cfg.traffic.mission_critical.deadline_ms),
        |_| Some(SimDuration::ZERO),
    )
    .rmse();
    let below = th.iter().filter(|&&h| ideal < h).count();
    let reduction = 100.0 * (1.0 - mean_h / mean_c);
    lines.push(line(
        9,
        better >= 9 && reduction >= 50.0 && ideal < mean_h && ideal < mean_c,
        format!(
            "tracking: hybrid better in {better}/10 seeds, mean RMSE {mean_c:.4} m -> {mean_h:.7} m ({reduction:.1}% lower); ideal {ideal:.7} m below both means (and below {below}/10 hybrid runs)"
        ),
    ));

    // 10
    let same = [(&table[0], &repeats[0]), (&table[1], &repeats[1]), (&tracking[0], &repeats[2])]
        .iter()
        .all(|(a, b)| outcomes_bytes(a) == outcomes_bytes(b));
    lines.push(line(
        10,
        same,
        "determinism: outcomes.csv byte-identical across repeated runs (CSMA, hybrid, tracking)".to_string(),
    ));

    let mut failed = 0;
    for l in &lines {
        println!("criterion {:>2} {}  {}", l.id, if l.pass { "PASS" } else { "FAIL" }, l.text);
        failed += usize::from(!l.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed ({} simulated runs, {:.1} s)",
        lines.len() - failed,
        runs.len(),
        t0.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
