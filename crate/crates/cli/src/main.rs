//! Command-line experiment runner for the airband simulator.

use airband_core::harness::{self, ExperimentConfig, MethodSel, Mode};
use airband_core::{measure_capacity, Scenario, ScenarioFile};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "airband",
    version,
    about = "Deterministic CSMA/CA channel-time simulator and available-bandwidth estimation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Probe capacity, stream media at fixed rates or adaptively, and write
    /// per-window and summary CSV reports.
    Run(Box<RunArgs>),
    /// Measure the capacity (maximum end-to-end bandwidth) of a topology.
    Capacity(CapacityArgs),
    /// Compare two report directories method by method.
    Compare(CompareArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Topology spec, e.g. "g", "g-AP-g X5", "a-AP-w ch=1 seed=7".
    #[arg(long, conflicts_with = "scenario")]
    topology: Option<String>,
    /// Scenario file (TOML) with topology, flows, schedule, and parameters.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Per-attempt loss probability on every wireless link.
    #[arg(long)]
    loss: Option<f64>,
    /// Phy rate of every wireless link, in Mbps (OFDM rate set).
    #[arg(long)]
    phy_mbps: Option<u64>,
    /// Media datagram payload in bytes.
    #[arg(long)]
    payload_bytes: Option<u32>,
    /// Media transport: unreliable | reliable.
    #[arg(long)]
    transport: Option<String>,
    /// Start every cross-traffic flow at this time (seconds).
    #[arg(long)]
    cross_start_s: Option<f64>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<(Scenario, Option<ScenarioFile>)> {
        let (mut scenario, file) = match (&self.topology, &self.scenario) {
            (Some(spec), None) => (Scenario::from_spec(spec)?, None),
            (None, Some(path)) => {
                let file = ScenarioFile::load(path)?;
                (file.to_scenario()?, Some(file))
            }
            _ => bail!("exactly one of --topology or --scenario is required"),
        };
        if let Some(loss) = self.loss {
            if !(0.0..1.0).contains(&loss) {
                bail!("loss {loss} outside [0, 1)");
            }
            scenario.wireless.per_attempt_loss_prob = loss;
        }
        if let Some(mbps) = self.phy_mbps {
            scenario.wireless.phy_rate_bps = mbps * 1_000_000;
        }
        if let Some(bytes) = self.payload_bytes {
            scenario.media.datagram_payload_bytes = bytes;
        }
        if let Some(t) = &self.transport {
            scenario.media.transport = match t.as_str() {
                "unreliable" => airband_core::Transport::Unreliable,
                "reliable" => airband_core::Transport::ReliableSimplified,
                other => bail!("unknown transport '{other}'"),
            };
        }
        if let Some(start) = self.cross_start_s {
            for cross in &mut scenario.cross {
                cross.start_s = start;
            }
        }
        Ok((scenario, file))
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// fixed | adaptive
    #[arg(long, default_value = "fixed")]
    mode: String,
    /// Application rates in Mbps for fixed mode, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    rates: Vec<f64>,
    /// sp | ss | both
    #[arg(long, default_value = "both")]
    method: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Run duration in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Measurement window in milliseconds.
    #[arg(long)]
    window_ms: Option<f64>,
    /// Output directory for windows.csv / summary.csv.
    #[arg(long)]
    out: PathBuf,
    /// SP idle-time discount factor (default 0.8 over the wireless hop count).
    #[arg(long)]
    p: Option<f64>,
    /// SS MAC-efficiency factor (default 24/54 at 54 Mbps, calibrated elsewhere).
    #[arg(long)]
    f: Option<f64>,
    /// Controller opportunism fraction.
    #[arg(long)]
    rho: Option<f64>,
    /// Controller decrease gain.
    #[arg(long)]
    beta: Option<f64>,
    /// Initial application rate for adaptive mode, in Mbps.
    #[arg(long)]
    initial_rate_mbps: Option<f64>,
    /// Maximum application rate for adaptive mode, in Mbps.
    #[arg(long)]
    max_rate_mbps: Option<f64>,
    /// Capacity-probe duration in seconds.
    #[arg(long)]
    probe_duration: Option<f64>,
    /// Leading windows excluded from summary statistics.
    #[arg(long)]
    warmup_windows: Option<u32>,
    /// Also write a per-measurement SVG plot per cell.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct CapacityArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Probe duration in seconds.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
}

#[derive(Args)]
struct CompareArgs {
    dir1: PathBuf,
    dir2: PathBuf,
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let (scenario, file) = args.scenario.load()?;
    let mode = match args.mode.as_str() {
        "fixed" => Mode::FixedRate(args.rates.iter().map(|r| r * 1e6).collect()),
        "adaptive" => Mode::Adaptive,
        other => bail!("unknown mode '{other}' (expected fixed|adaptive)"),
    };
    let mut config = ExperimentConfig::new(scenario, mode);
    config.method = args
        .method
        .parse::<MethodSel>()
        .map_err(anyhow::Error::msg)?;

    // Scenario-file settings apply first, command-line flags override.
    if let Some(file) = &file {
        if let Some(d) = file.duration_s {
            config.duration_s = d;
        }
        if let Some(w) = file.window_ms {
            config.meas_time_us = (w * 1e3).round() as u64;
        }
        config.p_override = file.estimators.p;
        config.f_override = file.estimators.f;
        let a = &file.adaptation;
        if let Some(v) = a.rho {
            config.adaptation.rho = v;
        }
        if let Some(v) = a.beta {
            config.adaptation.beta = v;
        }
        if let Some(v) = a.idle_min_threshold_ms {
            config.adaptation.idle_min_threshold_us = (v * 1e3).round() as u64;
        }
        if let Some(v) = a.min_rate_diff_kbps {
            config.adaptation.min_rate_diff_threshold_bps = v * 1e3;
        }
        if let Some(v) = a.packet_proc_delay_us {
            config.adaptation.packet_proc_delay_us = v;
        }
        if let Some(v) = a.app_overhead_factor {
            config.adaptation.app_overhead_factor = v;
        }
        if let Some(v) = a.min_rate_mbps {
            config.adaptation.min_source_rate_bps = v * 1e6;
        }
        if let Some(v) = a.max_rate_mbps {
            config.adaptation.max_source_rate_bps = v * 1e6;
        }
        if let Some(v) = a.initial_rate_mbps {
            config.initial_rate_bps = v * 1e6;
        }
    }
    // Seed precedence: command line, then scenario file, then topology token.
    config.seed = args
        .seed
        .or(file.as_ref().and_then(|f| f.seed))
        .or(config.scenario.topology.seed)
        .unwrap_or(0);
    if let Some(d) = args.duration {
        config.duration_s = d;
    }
    if let Some(w) = args.window_ms {
        config.meas_time_us = (w * 1e3).round() as u64;
    }
    if args.p.is_some() {
        config.p_override = args.p;
    }
    if args.f.is_some() {
        config.f_override = args.f;
    }
    if let Some(v) = args.rho {
        config.adaptation.rho = v;
    }
    if let Some(v) = args.beta {
        config.adaptation.beta = v;
    }
    if let Some(v) = args.initial_rate_mbps {
        config.initial_rate_bps = v * 1e6;
    }
    if let Some(v) = args.max_rate_mbps {
        config.adaptation.max_source_rate_bps = v * 1e6;
    }
    if let Some(v) = args.probe_duration {
        config.probe_duration_s = v;
    }
    if let Some(v) = args.warmup_windows {
        config.warmup_windows = v;
    }

    let report = harness::run(&config)?;
    harness::write_report(&report, &args.out, args.svg)
        .with_context(|| format!("writing report to {}", args.out.display()))?;
    println!(
        "scenario {}  seed {}  capacity {:.3} Mbps  (p={:.3}, f={:.3})",
        report.scenario,
        report.seed,
        report.capacity_bps / 1e6,
        report.p,
        report.f
    );
    for cell in &report.cells {
        for s in &cell.summaries {
            println!(
                "rate {:>9}  {}  measured {:>7.3} Mbps  additional {:>7.3} Mbps  total {:>7.3} Mbps  in-band {:.2}",
                s.rate,
                s.method,
                s.mean_measured_bps / 1e6,
                s.mean_additional_bps / 1e6,
                s.mean_total_bps / 1e6,
                s.in_band_fraction
            );
        }
    }
    println!("report written to {}", args.out.display());
    Ok(())
}

fn cmd_capacity(args: CapacityArgs) -> Result<()> {
    let (scenario, file) = args.scenario.load()?;
    let seed = args
        .seed
        .or(file.as_ref().and_then(|f| f.seed))
        .or(scenario.topology.seed)
        .unwrap_or(0);
    let capacity = measure_capacity(&scenario, seed, args.duration)?;
    println!(
        "{} capacity: {:.3} Mbps ({} bps)",
        scenario.topology.unparse(),
        capacity / 1e6,
        capacity.round() as u64
    );
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let a = harness::load_report(&args.dir1)
        .with_context(|| format!("loading {}", args.dir1.display()))?;
    let b = harness::load_report(&args.dir2)
        .with_context(|| format!("loading {}", args.dir2.display()))?;
    let comparison = harness::compare_methods(&a, &b)?;
    print!("{comparison}");
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(*args),
        Command::Capacity(args) => cmd_capacity(args),
        Command::Compare(args) => cmd_compare(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
