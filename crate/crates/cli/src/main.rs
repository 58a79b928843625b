use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use hybrid_mac_sim::config::{MacMode, ScenarioConfig};
use hybrid_mac_sim::output::{aggregate, report, write_run, Summary};
use hybrid_mac_sim::world::run;

#[derive(Parser)]
#[command(name = "hmsim", version, about = "Hybrid TDMA/CSMA MAC simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write its artifacts.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mode: Option<MacMode>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every (mode, seed) pair in parallel, one directory per run, plus
    /// `aggregate.json`.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `a..b` (inclusive) or a comma-separated list.
        #[arg(long, default_value = "1..20")]
        seeds: String,
        #[arg(long, default_value = "csma,hybrid", value_delimiter = ',')]
        modes: Vec<MacMode>,
    },
    /// Re-summarise an existing run or sweep directory.
    Report { dir: PathBuf },
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML), or a previous run's summary.json.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Simulated seconds.
    #[arg(long, allow_hyphen_values = true)]
    duration: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::load(p)?,
            None => ScenarioConfig::default(),
        };
        if let Some(d) = self.duration {
            cfg.duration_s = d;
        }
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ScenarioConfig) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().context("seed range start")?;
        let b: u64 = b.trim().parse().context("seed range end")?;
        if b < a {
            bail!("empty seed range {s}");
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|x| x.trim().parse::<u64>().with_context(|| format!("bad seed {x:?}")))
        .collect()
}

fn one_line(s: &Summary) -> String {
    let mc = &s.mission_critical;
    let mut line = format!(
        "{} seed {}: critical {} generated, {} ok, {} missed, {} lost, {} in flight; non-critical {} B",
        s.mac_mode.as_str(),
        s.seed,
        mc.generated,
        mc.success,
        mc.missed_deadline,
        mc.packet_loss,
        mc.in_flight,
        s.non_critical_delivered_bytes
    );
    if let Some(t) = &s.tracking {
        line += &format!("; tracking RMSE {:.4} m", t.rmse_m);
    }
    line
}

fn run_one(cfg: &ScenarioConfig, dir: &Path) -> Result<Summary> {
    let r = run(cfg)?;
    let s = write_run(dir, &r).with_context(|| format!("writing {}", dir.display()))?;
    for w in &s.warnings {
        eprintln!("warning: {w}");
    }
    Ok(s)
}

fn main_inner(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run { common, mode, seed } => {
            let mut cfg = common.load()?;
            if let Some(m) = mode {
                cfg.mac_mode = m;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let dir = common.out_dir(&cfg);
            let s = run_one(&cfg, &dir)?;
            println!("{}", one_line(&s));
            println!("artifacts in {}", dir.display());
        }
        Cmd::Sweep { common, seeds, modes } => {
            let base = common.load()?;
            base.validate()?;
            let seeds = parse_seeds(&seeds)?;
            let dir = common.out_dir(&base);
            let jobs: Vec<(MacMode, u64)> = modes.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
            let summaries = jobs
                .par_iter()
                .map(|&(mode, seed)| {
                    let mut cfg = base.clone();
                    cfg.mac_mode = mode;
                    cfg.seed = seed;
                    run_one(&cfg, &dir.join(format!("{}-seed{seed}", mode.as_str())))
                })
                .collect::<Result<Vec<_>>>()?;
            for s in &summaries {
                println!("{}", one_line(s));
            }
            let agg = serde_json::to_string_pretty(&aggregate(&summaries))? + "\n";
            let path = dir.join("aggregate.json");
            std::fs::write(&path, &agg).with_context(|| format!("writing {}", path.display()))?;
            print!("{agg}");
        }
        Cmd::Report { dir } => {
            if dir.join("outcomes.csv").exists() {
                println!("{}", serde_json::to_string_pretty(&report(&dir)?)?);
            } else {
                let mut summaries = Vec::new();
                let mut entries: Vec<_> = std::fs::read_dir(&dir)
                    .with_context(|| format!("reading {}", dir.display()))?
                    .collect::<std::io::Result<_>>()?;
                entries.sort_by_key(|e| e.file_name());
                for e in entries {
                    let p = e.path().join("summary.json");
                    if p.exists() {
                        summaries.push(Summary::load(&p)?);
                    }
                }
                if summaries.is_empty() {
                    bail!("{} holds neither outcomes.csv nor run directories", dir.display());
                }
                println!("{}", serde_json::to_string_pretty(&aggregate(&summaries))?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
