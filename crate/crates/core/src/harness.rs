//! Experiment runner: capacity probe, fixed-rate and adaptive runs,
//! per-window and summary CSV outputs, and band-tracking evaluation.
//!
//! An experiment first probes the path capacity with a saturating flow, then
//! streams media at fixed rates (or under the closed adaptation loop) while
//! computing the SP/SS bandwidth estimates from the same window statistics,
//! and finally reports how well `measured + estimated additional` tracked the
//! probed capacity.

use crate::adaptation::{self, AdaptationParams, AdaptationState};
use crate::estimators::{sp_estimate, ss_estimate_for_window, SpParams, SsParams};
use crate::ledger::throughput_bps;
use crate::runtime::{calibrate_mac_efficiency, measure_capacity, BuildError, NetworkSim};
use crate::scenario::{Scenario, TrafficProfile};
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("invalid experiment config: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        source: csv::Error,
    },
    #[error("malformed report in {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("reports do not match: {0}")]
    Mismatch(String),
}

fn io_err(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Which estimators an experiment computes (and, in adaptive mode, which one
/// drives the rate loop).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodSel {
    Sp,
    Ss,
    Both,
}

impl MethodSel {
    pub fn wants_sp(self) -> bool {
        matches!(self, MethodSel::Sp | MethodSel::Both)
    }
    pub fn wants_ss(self) -> bool {
        matches!(self, MethodSel::Ss | MethodSel::Both)
    }
}

impl std::str::FromStr for MethodSel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sp" => Ok(MethodSel::Sp),
            "ss" => Ok(MethodSel::Ss),
            "both" => Ok(MethodSel::Both),
            other => Err(format!("unknown method '{other}' (expected sp|ss|both)")),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Mode {
    /// One run per application-layer rate, in bits/second.
    FixedRate(Vec<f64>),
    /// Closed loop: the controller's output feeds the source each window.
    Adaptive,
}

/// A full experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub mode: Mode,
    pub method: MethodSel,
    pub meas_time_us: u64,
    pub duration_s: f64,
    pub seed: u64,
    /// Idle-time discount for SP; defaults to 0.8 over the number of
    /// same-channel wireless hops.
    pub p_override: Option<f64>,
    /// MAC-efficiency factor for SS; defaults to 24/54 at 54 Mbps and to a
    /// calibrated value elsewhere.
    pub f_override: Option<f64>,
    pub adaptation: AdaptationParams,
    /// Starting application rate in adaptive mode.
    pub initial_rate_bps: f64,
    pub probe_duration_s: f64,
    /// Leading windows excluded from summary statistics.
    pub warmup_windows: u32,
    /// Half-width of the tracking band around capacity, as a fraction.
    pub band: f64,
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario, mode: Mode) -> Self {
        ExperimentConfig {
            scenario,
            mode,
            method: MethodSel::Both,
            meas_time_us: 200_000,
            duration_s: 30.0,
            seed: 0,
            p_override: None,
            f_override: None,
            adaptation: AdaptationParams::default(),
            initial_rate_bps: 2_000_000.0,
            probe_duration_s: 10.0,
            warmup_windows: 5,
            band: 0.2,
        }
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.meas_time_us == 0 {
            return Err(HarnessError::Invalid("window must be positive".into()));
        }
        let duration_us = (self.duration_s * 1e6).round() as u64;
        if duration_us < 10 * self.meas_time_us {
            return Err(HarnessError::Invalid(format!(
                "duration {}s is shorter than 10 windows of {} ms",
                self.duration_s,
                self.meas_time_us as f64 / 1e3,
            )));
        }
        if let Mode::FixedRate(rates) = &self.mode {
            if rates.is_empty() || rates.iter().any(|r| *r <= 0.0) {
                return Err(HarnessError::Invalid("rates must be positive".into()));
            }
        }
        if matches!(self.mode, Mode::Adaptive) && self.method == MethodSel::Both {
            return Err(HarnessError::Invalid(
                "adaptive mode needs a single driving method (sp or ss)".into(),
            ));
        }
        for (name, value) in [("p", self.p_override), ("f", self.f_override)] {
            if let Some(v) = value {
                if !(v > 0.0 && v <= 1.0) {
                    return Err(HarnessError::Invalid(format!(
                        "{name} = {v} outside (0, 1]"
                    )));
                }
            }
        }
        let a = &self.adaptation;
        if !(a.rho > 0.0 && a.rho <= 1.0) {
            return Err(HarnessError::Invalid(format!(
                "rho = {} outside (0, 1]",
                a.rho
            )));
        }
        if a.beta <= 0.0 {
            return Err(HarnessError::Invalid(format!(
                "beta = {} must be positive",
                a.beta
            )));
        }
        if a.app_overhead_factor < 1.0 {
            return Err(HarnessError::Invalid(format!(
                "app overhead factor {} below 1",
                a.app_overhead_factor
            )));
        }
        Ok(())
    }
}

/// One measurement window's output row (the `windows.csv` schema).
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRow {
    pub window_index: u32,
    pub t_start_us: u64,
    pub tx_bits: u64,
    pub tx_us: u64,
    pub backoff_us: u64,
    pub other_us: u64,
    pub idle_us: u64,
    pub attempts: u64,
    pub intended: u64,
    pub queue_bits: u64,
    pub measured_bps: f64,
    pub sp_add_bps: Option<f64>,
    pub ss_add_bps: Option<f64>,
    pub total_sp_bps: Option<f64>,
    pub total_ss_bps: Option<f64>,
    pub avail_tx_rate_bps: f64,
    pub tx_delay_us: f64,
    pub tx_jitter_us: f64,
}

/// One `summary.csv` row, keyed by (scenario, rate, method).
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario: String,
    pub seed: u64,
    pub rate: String,
    pub method: String,
    pub capacity_bps: f64,
    pub windows_used: u64,
    pub mean_measured_bps: f64,
    pub mean_additional_bps: f64,
    pub mean_total_bps: f64,
    pub in_band_fraction: f64,
    pub band: f64,
    pub warmup_windows: u32,
}

/// All rows for one (scenario, rate) cell.
#[derive(Debug, Clone)]
pub struct CellReport {
    /// Directory tag, e.g. `r4000000` or `adaptive_sp`.
    pub tag: String,
    /// Rate column value: the application rate in bps, or `adaptive`.
    pub rate_label: String,
    pub rows: Vec<WindowRow>,
    pub summaries: Vec<SummaryRow>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub capacity_bps: f64,
    pub p: f64,
    pub f: f64,
    pub band: f64,
    pub warmup_windows: u32,
    pub cells: Vec<CellReport>,
}

/// Fraction of window totals within `band * capacity` of the capacity.
pub fn in_band_fraction(totals: &[f64], capacity_bps: f64, band: f64) -> f64 {
    assert!(band > 0.0, "band must be positive");
    assert!(!totals.is_empty(), "no windows to evaluate");
    let hits = totals
        .iter()
        .filter(|&&t| (t - capacity_bps).abs() <= band * capacity_bps)
        .count();
    hits as f64 / totals.len() as f64
}

/// Resolve the SP discount factor for the experiment.
pub fn resolve_p(config: &ExperimentConfig) -> f64 {
    config
        .p_override
        .unwrap_or_else(|| SpParams::for_hops(config.scenario.topology.wireless_hops()).p)
}

/// Resolve the SS efficiency factor: the 24/54 reference at 54 Mbps, a
/// calibration run elsewhere.
pub fn resolve_f(config: &ExperimentConfig) -> Result<f64, HarnessError> {
    if let Some(f) = config.f_override {
        return Ok(f);
    }
    if config.scenario.wireless.phy_rate_bps == 54_000_000 {
        return Ok(SsParams::for_54mbps().f);
    }
    Ok(calibrate_mac_efficiency(
        config.scenario.wireless.phy_rate_bps,
        config.scenario.media.wire_bytes(),
        &config.scenario.timing,
        config.seed,
    )?)
}

/// Controller step for the adaptive loop. The SP-driven loop is the verbatim
/// incremental algorithm (its positive branch already is the SP form); the
/// SS-driven loop substitutes the sniffer estimate, scaled by the same
/// opportunism fraction, as the positive delta.
fn adaptive_step(
    stats: &crate::ledger::WindowStats,
    expected_links: usize,
    method: MethodSel,
    ss: &SsParams,
    params: &AdaptationParams,
    state: &AdaptationState,
) -> (adaptation::AdaptationOutput, AdaptationState) {
    match method {
        MethodSel::Sp | MethodSel::Both => {
            let (out, next, _) = adaptation::step(stats, params, state);
            (out, next)
        }
        MethodSel::Ss => {
            let meas_time = stats.meas_time_us as f64;
            let tx_rate = stats.tx_bits as f64 / meas_time; // bits/us
            let mut delta_rate = 0.0;
            if stats.ledger.idle_us > params.idle_min_threshold_us {
                if let Some(add) = ss_estimate_for_window(stats, expected_links, ss) {
                    delta_rate = params.rho * add / 1e6;
                }
            } else {
                let diff = state.tx_rate_previous_bps / 1e6 - tx_rate;
                if diff > params.min_rate_diff_threshold_bps / 1e6 {
                    delta_rate = -params.beta * diff;
                }
            }
            let avail = (tx_rate + delta_rate).max(0.0);
            let tx_delay_us = if stats.tx_queue_depth_bits == 0 {
                0.0
            } else if tx_rate == 0.0 {
                adaptation::DELAY_SATURATED_US
            } else {
                stats.tx_queue_depth_bits as f64 / tx_rate
            };
            let out = adaptation::AdaptationOutput {
                tx_rate_bps: tx_rate * 1e6,
                avail_tx_rate_bps: avail * 1e6,
                tx_delay_us,
                tx_jitter_us: tx_delay_us - state.tx_delay_previous_us,
            };
            let next = AdaptationState {
                tx_rate_previous_bps: tx_rate * 1e6,
                tx_delay_previous_us: tx_delay_us,
            };
            (out, next)
        }
    }
}

/// Run one experiment: probe the capacity, run every cell, evaluate.
pub fn run(config: &ExperimentConfig) -> Result<RunReport, HarnessError> {
    config.validate()?;
    let p = resolve_p(config);
    let f = resolve_f(config)?;
    let sp = SpParams { p };
    let ss = SsParams { f };
    let capacity = measure_capacity(&config.scenario, config.seed, config.probe_duration_s)?;
    let windows = ((config.duration_s * 1e6).round() as u64) / config.meas_time_us;
    let duration_us = windows * config.meas_time_us;
    let scenario_name = config.scenario.topology.unparse();

    let mut cells = Vec::new();
    let specs: Vec<(String, String, Option<f64>)> = match &config.mode {
        Mode::FixedRate(rates) => rates
            .iter()
            .map(|&r| {
                let bps = r.round() as u64;
                (format!("r{bps}"), format!("{bps}"), Some(r))
            })
            .collect(),
        Mode::Adaptive => {
            let m = match config.method {
                MethodSel::Sp => "sp",
                MethodSel::Ss => "ss",
                MethodSel::Both => unreachable!("validated"),
            };
            vec![(format!("adaptive_{m}"), "adaptive".to_string(), None)]
        }
    };

    // Cells are fully independent simulations; run them on their own
    // threads and merge the results in spec order.
    let results: Vec<Result<CellReport, BuildError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = specs
            .iter()
            .map(|(tag, rate_label, fixed_rate)| {
                let scenario_name = &scenario_name;
                scope.spawn(move || {
                    run_cell(
                        config,
                        scenario_name,
                        capacity,
                        sp,
                        ss,
                        duration_us,
                        windows,
                        tag.clone(),
                        rate_label.clone(),
                        *fixed_rate,
                    )
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("cell thread panicked"))
            .collect()
    });
    for result in results {
        cells.push(result?);
    }

    Ok(RunReport {
        scenario: scenario_name,
        seed: config.seed,
        capacity_bps: capacity,
        p,
        f,
        band: config.band,
        warmup_windows: config.warmup_windows,
        cells,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    config: &ExperimentConfig,
    scenario_name: &str,
    capacity: f64,
    sp: SpParams,
    ss: SsParams,
    duration_us: u64,
    windows: u64,
    tag: String,
    rate_label: String,
    fixed_rate: Option<f64>,
) -> Result<CellReport, BuildError> {
    let mut scenario = config.scenario.clone();
    let adaptive = fixed_rate.is_none();
    let initial_rate = fixed_rate.unwrap_or(config.initial_rate_bps);
    scenario.media.profile = match scenario.media.profile {
        TrafficProfile::Vbr { burstiness, .. } => TrafficProfile::Vbr {
            mean_bps: initial_rate,
            burstiness,
        },
        _ => TrafficProfile::Cbr {
            rate_bps: initial_rate,
        },
    };
    let mut adaptation = config.adaptation;
    // Default the overhead correction to the media flow's real packing.
    if (adaptation.app_overhead_factor - AdaptationParams::default().app_overhead_factor).abs()
        < 1e-12
    {
        adaptation.app_overhead_factor = scenario.media.overhead_factor();
    }

    let sim = NetworkSim::build(&scenario, config.seed, duration_us, Some(config.meas_time_us))?;
    let expected_links = sim.path_wireless_links();
    let mut state = AdaptationState::default();
    let mut rows: Vec<WindowRow> = Vec::with_capacity(windows as usize);
    let method = config.method;
    sim.run(|w| {
        let stats = &w.source;
        let measured = throughput_bps(stats);
        let sp_add = method.wants_sp().then(|| sp_estimate(stats, &sp)).flatten();
        let ss_add = method
            .wants_ss()
            .then(|| ss_estimate_for_window(stats, expected_links, &ss))
            .flatten();
        let (out, next) = adaptive_step(stats, expected_links, method, &ss, &adaptation, &state);
        state = next;
        rows.push(WindowRow {
            window_index: w.index,
            t_start_us: w.start_us,
            tx_bits: stats.tx_bits,
            tx_us: stats.ledger.tx_us,
            backoff_us: stats.ledger.backoff_us,
            other_us: stats.ledger.other_us,
            idle_us: stats.ledger.idle_us,
            attempts: stats.attempts,
            intended: stats.intended_packets,
            queue_bits: stats.tx_queue_depth_bits,
            measured_bps: measured,
            sp_add_bps: sp_add,
            ss_add_bps: ss_add,
            total_sp_bps: sp_add.map(|a| measured + a),
            total_ss_bps: ss_add.map(|a| measured + a),
            avail_tx_rate_bps: out.avail_tx_rate_bps,
            tx_delay_us: out.tx_delay_us,
            tx_jitter_us: out.tx_jitter_us,
        });
        adaptive.then(|| adaptation::apply_to_source(&out, &adaptation))
    });

    let mut summaries = Vec::new();
    for m in ["sp", "ss"] {
        let wanted = match m {
            "sp" => method.wants_sp(),
            _ => method.wants_ss(),
        };
        if !wanted {
            continue;
        }
        summaries.push(summarize(
            scenario_name,
            config.seed,
            &rate_label,
            m,
            capacity,
            config.band,
            config.warmup_windows,
            &rows,
        ));
    }
    Ok(CellReport {
        tag,
        rate_label,
        rows,
        summaries,
    })
}

#[allow(clippy::too_many_arguments)]
fn summarize(
    scenario: &str,
    seed: u64,
    rate_label: &str,
    method: &str,
    capacity_bps: f64,
    band: f64,
    warmup: u32,
    rows: &[WindowRow],
) -> SummaryRow {
    let pick = |r: &WindowRow| match method {
        "sp" => (r.sp_add_bps, r.total_sp_bps),
        _ => (r.ss_add_bps, r.total_ss_bps),
    };
    let used: Vec<&WindowRow> = rows
        .iter()
        .filter(|r| r.window_index >= warmup && r.tx_bits > 0 && pick(r).0.is_some())
        .collect();
    let n = used.len() as f64;
    let (mut measured, mut additional, mut total) = (0.0, 0.0, 0.0);
    let mut totals = Vec::with_capacity(used.len());
    for r in &used {
        let (add, tot) = pick(r);
        measured += r.measured_bps;
        additional += add.unwrap();
        total += tot.unwrap();
        totals.push(tot.unwrap());
    }
    let in_band = if totals.is_empty() {
        0.0
    } else {
        in_band_fraction(&totals, capacity_bps, band)
    };
    SummaryRow {
        scenario: scenario.to_string(),
        seed,
        rate: rate_label.to_string(),
        method: method.to_string(),
        capacity_bps,
        windows_used: used.len() as u64,
        mean_measured_bps: if used.is_empty() { 0.0 } else { measured / n },
        mean_additional_bps: if used.is_empty() { 0.0 } else { additional / n },
        mean_total_bps: if used.is_empty() { 0.0 } else { total / n },
        in_band_fraction: in_band,
        band,
        warmup_windows: warmup,
    }
}

const WINDOW_HEADER: [&str; 18] = [
    "window_index",
    "t_start_us",
    "tx_bits",
    "tx_us",
    "backoff_us",
    "other_us",
    "idle_us",
    "attempts",
    "intended",
    "queue_bits",
    "measured_bps",
    "sp_add_bps",
    "ss_add_bps",
    "total_sp_bps",
    "total_ss_bps",
    "avail_tx_rate_bps",
    "tx_delay_us",
    "tx_jitter_us",
];

const SUMMARY_HEADER: [&str; 12] = [
    "scenario",
    "seed",
    "rate",
    "method",
    "capacity_bps",
    "windows_used",
    "mean_measured_bps",
    "mean_additional_bps",
    "mean_total_bps",
    "in_band_fraction",
    "band",
    "warmup_windows",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write a report under `dir`: `cells/<tag>/windows.csv` per cell plus a
/// merged `summary.csv`, and optionally one SVG per cell and method.
pub fn write_report(report: &RunReport, dir: &Path, svg: bool) -> Result<(), HarnessError> {
    for cell in &report.cells {
        let cell_dir = dir.join("cells").join(&cell.tag);
        std::fs::create_dir_all(&cell_dir).map_err(|e| io_err(&cell_dir, e))?;
        let path = cell_dir.join("windows.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| HarnessError::Csv {
            path: path.clone(),
            source: e,
        })?;
        let mut emit = || -> Result<(), csv::Error> {
            w.write_record(WINDOW_HEADER)?;
            for r in &cell.rows {
                w.write_record([
                    r.window_index.to_string(),
                    r.t_start_us.to_string(),
                    r.tx_bits.to_string(),
                    r.tx_us.to_string(),
                    r.backoff_us.to_string(),
                    r.other_us.to_string(),
                    r.idle_us.to_string(),
                    r.attempts.to_string(),
                    r.intended.to_string(),
                    r.queue_bits.to_string(),
                    r.measured_bps.to_string(),
                    fmt_opt(r.sp_add_bps),
                    fmt_opt(r.ss_add_bps),
                    fmt_opt(r.total_sp_bps),
                    fmt_opt(r.total_ss_bps),
                    r.avail_tx_rate_bps.to_string(),
                    r.tx_delay_us.to_string(),
                    r.tx_jitter_us.to_string(),
                ])?;
            }
            w.flush()?;
            Ok(())
        };
        emit().map_err(|e| HarnessError::Csv {
            path: path.clone(),
            source: e,
        })?;
        if svg {
            for summary in &cell.summaries {
                let svg_path = cell_dir.join(format!("per_measurement_{}.svg", summary.method));
                let body = render_svg(report, cell, &summary.method);
                std::fs::write(&svg_path, body).map_err(|e| io_err(&svg_path, e))?;
            }
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| HarnessError::Csv {
        path: path.clone(),
        source: e,
    })?;
    let mut emit = || -> Result<(), csv::Error> {
        w.write_record(SUMMARY_HEADER)?;
        for cell in &report.cells {
            for s in &cell.summaries {
                w.write_record([
                    s.scenario.clone(),
                    s.seed.to_string(),
                    s.rate.clone(),
                    s.method.clone(),
                    s.capacity_bps.to_string(),
                    s.windows_used.to_string(),
                    s.mean_measured_bps.to_string(),
                    s.mean_additional_bps.to_string(),
                    s.mean_total_bps.to_string(),
                    s.in_band_fraction.to_string(),
                    s.band.to_string(),
                    s.warmup_windows.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    };
    emit().map_err(|e| HarnessError::Csv { path, source: e })
}

/// Load a report directory written by [`write_report`], recomputing every
/// summary from its window rows and rejecting any mismatch.
pub fn load_report(dir: &Path) -> Result<RunReport, HarnessError> {
    let summary_path = dir.join("summary.csv");
    let mut rdr =
        csv::Reader::from_path(&summary_path).map_err(|e| HarnessError::Csv {
            path: summary_path.clone(),
            source: e,
        })?;
    let mut summaries: Vec<SummaryRow> = Vec::new();
    for record in rdr.records() {
        let rec = record.map_err(|e| HarnessError::Csv {
            path: summary_path.clone(),
            source: e,
        })?;
        let field = |i: usize| -> Result<&str, HarnessError> {
            rec.get(i).ok_or_else(|| HarnessError::Malformed {
                path: summary_path.clone(),
                message: format!("missing column {i}"),
            })
        };
        let parse_f = |i: usize| -> Result<f64, HarnessError> {
            field(i)?.parse().map_err(|_| HarnessError::Malformed {
                path: summary_path.clone(),
                message: format!("bad float in column {i}"),
            })
        };
        let parse_u = |i: usize| -> Result<u64, HarnessError> {
            field(i)?.parse().map_err(|_| HarnessError::Malformed {
                path: summary_path.clone(),
                message: format!("bad integer in column {i}"),
            })
        };
        summaries.push(SummaryRow {
            scenario: field(0)?.to_string(),
            seed: parse_u(1)?,
            rate: field(2)?.to_string(),
            method: field(3)?.to_string(),
            capacity_bps: parse_f(4)?,
            windows_used: parse_u(5)?,
            mean_measured_bps: parse_f(6)?,
            mean_additional_bps: parse_f(7)?,
            mean_total_bps: parse_f(8)?,
            in_band_fraction: parse_f(9)?,
            band: parse_f(10)?,
            warmup_windows: parse_u(11)? as u32,
        });
    }
    if summaries.is_empty() {
        return Err(HarnessError::Malformed {
            path: summary_path,
            message: "summary has no rows".into(),
        });
    }
    let scenario = summaries[0].scenario.clone();
    let seed = summaries[0].seed;
    let capacity = summaries[0].capacity_bps;

    let mut cells: Vec<CellReport> = Vec::new();
    for s in &summaries {
        let tag = if s.rate == "adaptive" {
            format!("adaptive_{}", s.method)
        } else {
            format!("r{}", s.rate)
        };
        if !cells.iter().any(|c| c.tag == tag) {
            let rows = load_windows(&dir.join("cells").join(&tag).join("windows.csv"))?;
            cells.push(CellReport {
                tag,
                rate_label: s.rate.clone(),
                rows,
                summaries: Vec::new(),
            });
        }
        let cell = cells
            .iter_mut()
            .find(|c| c.rate_label == s.rate)
            .expect("just inserted");
        let recomputed = summarize(
            &s.scenario,
            s.seed,
            &s.rate,
            &s.method,
            s.capacity_bps,
            s.band,
            s.warmup_windows,
            &cell.rows,
        );
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(1.0);
        if recomputed.windows_used != s.windows_used
            || !close(recomputed.mean_measured_bps, s.mean_measured_bps)
            || !close(recomputed.mean_additional_bps, s.mean_additional_bps)
            || !close(recomputed.mean_total_bps, s.mean_total_bps)
            || !close(recomputed.in_band_fraction, s.in_band_fraction)
        {
            return Err(HarnessError::Malformed {
                path: summary_path,
                message: format!(
                    "summary row ({}, {}, {}) does not match its window rows",
                    s.scenario, s.rate, s.method
                ),
            });
        }
        cell.summaries.push(s.clone());
    }

    Ok(RunReport {
        scenario,
        seed,
        capacity_bps: capacity,
        p: f64::NAN,
        f: f64::NAN,
        band: summaries[0].band,
        warmup_windows: summaries[0].warmup_windows,
        cells,
    })
}

fn load_windows(path: &Path) -> Result<Vec<WindowRow>, HarnessError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| HarnessError::Csv {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut rows = Vec::new();
    for record in rdr.records() {
        let rec = record.map_err(|e| HarnessError::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        let bad = |message: String| HarnessError::Malformed {
            path: path.to_path_buf(),
            message,
        };
        let get = |i: usize| -> Result<&str, HarnessError> {
            rec.get(i).ok_or_else(|| bad(format!("missing column {i}")))
        };
        let u = |i: usize| -> Result<u64, HarnessError> {
            get(i)?.parse().map_err(|_| bad(format!("bad integer in column {i}")))
        };
        let fl = |i: usize| -> Result<f64, HarnessError> {
            get(i)?.parse().map_err(|_| bad(format!("bad float in column {i}")))
        };
        let opt = |i: usize| -> Result<Option<f64>, HarnessError> {
            let s = get(i)?;
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(format!("bad float in column {i}")))
            }
        };
        rows.push(WindowRow {
            window_index: u(0)? as u32,
            t_start_us: u(1)?,
            tx_bits: u(2)?,
            tx_us: u(3)?,
            backoff_us: u(4)?,
            other_us: u(5)?,
            idle_us: u(6)?,
            attempts: u(7)?,
            intended: u(8)?,
            queue_bits: u(9)?,
            measured_bps: fl(10)?,
            sp_add_bps: opt(11)?,
            ss_add_bps: opt(12)?,
            total_sp_bps: opt(13)?,
            total_ss_bps: opt(14)?,
            avail_tx_rate_bps: fl(15)?,
            tx_delay_us: fl(16)?,
            tx_jitter_us: fl(17)?,
        });
    }
    Ok(rows)
}

/// Side-by-side comparison of two reports over the same scenario and seed.
#[derive(Debug, Clone)]
pub struct CompareRow {
    pub rate: String,
    pub method_a: String,
    pub method_b: String,
    pub mean_measured_a: f64,
    pub mean_measured_b: f64,
    pub mean_additional_a: f64,
    pub mean_additional_b: f64,
    pub mean_total_a: f64,
    pub mean_total_b: f64,
    pub in_band_a: f64,
    pub in_band_b: f64,
}

pub struct Comparison {
    pub scenario: String,
    pub capacity_bps: f64,
    pub rows: Vec<CompareRow>,
}

impl fmt::Display for Comparison {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            out,
            "scenario {}  capacity {:.3} Mbps",
            self.scenario,
            self.capacity_bps / 1e6
        )?;
        writeln!(
            out,
            "{:<12} {:<10} {:>14} {:>14} {:>12} {:>12} {:>8}",
            "rate", "method", "measured Mbps", "additional", "total", "in-band", ""
        )?;
        for r in &self.rows {
            for (m, meas, add, tot, band) in [
                (&r.method_a, r.mean_measured_a, r.mean_additional_a, r.mean_total_a, r.in_band_a),
                (&r.method_b, r.mean_measured_b, r.mean_additional_b, r.mean_total_b, r.in_band_b),
            ] {
                writeln!(
                    out,
                    "{:<12} {:<10} {:>14.3} {:>14.3} {:>12.3} {:>12.2} {:>8}",
                    r.rate,
                    m,
                    meas / 1e6,
                    add / 1e6,
                    tot / 1e6,
                    band,
                    ""
                )?;
            }
        }
        Ok(())
    }
}

/// Compare two runs method by method. Both must come from the identical
/// scenario, seed, and rate set.
pub fn compare_methods(a: &RunReport, b: &RunReport) -> Result<Comparison, HarnessError> {
    if a.scenario != b.scenario {
        return Err(HarnessError::Mismatch(format!(
            "scenario '{}' vs '{}'",
            a.scenario, b.scenario
        )));
    }
    if a.seed != b.seed {
        return Err(HarnessError::Mismatch(format!(
            "seed {} vs {}",
            a.seed, b.seed
        )));
    }
    let rates_a: Vec<&str> = a.cells.iter().map(|c| c.rate_label.as_str()).collect();
    let rates_b: Vec<&str> = b.cells.iter().map(|c| c.rate_label.as_str()).collect();
    if rates_a != rates_b {
        return Err(HarnessError::Mismatch(format!(
            "rates {rates_a:?} vs {rates_b:?}"
        )));
    }
    let mut rows = Vec::new();
    for (ca, cb) in a.cells.iter().zip(&b.cells) {
        let sa = ca.summaries.first().ok_or_else(|| {
            HarnessError::Mismatch(format!("no summary for rate {}", ca.rate_label))
        })?;
        let sb = cb.summaries.first().ok_or_else(|| {
            HarnessError::Mismatch(format!("no summary for rate {}", cb.rate_label))
        })?;
        rows.push(CompareRow {
            rate: ca.rate_label.clone(),
            method_a: sa.method.clone(),
            method_b: sb.method.clone(),
            mean_measured_a: sa.mean_measured_bps,
            mean_measured_b: sb.mean_measured_bps,
            mean_additional_a: sa.mean_additional_bps,
            mean_additional_b: sb.mean_additional_bps,
            mean_total_a: sa.mean_total_bps,
            mean_total_b: sb.mean_total_bps,
            in_band_a: sa.in_band_fraction,
            in_band_b: sb.in_band_fraction,
        });
    }
    Ok(Comparison {
        scenario: a.scenario.clone(),
        capacity_bps: a.capacity_bps,
        rows,
    })
}

/// Static per-measurement plot: the total-estimate series, the capacity line,
/// and the tracking band.
fn render_svg(report: &RunReport, cell: &CellReport, method: &str) -> String {
    let (w, h, ml, mb) = (900.0, 360.0, 60.0, 30.0);
    let totals: Vec<(u32, f64)> = cell
        .rows
        .iter()
        .filter_map(|r| {
            let t = match method {
                "sp" => r.total_sp_bps,
                _ => r.total_ss_bps,
            };
            t.map(|t| (r.window_index, t))
        })
        .collect();
    let cap = report.capacity_bps;
    let y_max = totals
        .iter()
        .map(|&(_, t)| t)
        .fold(cap * (1.0 + report.band), f64::max)
        * 1.1;
    let x_max = cell.rows.last().map(|r| r.window_index + 1).unwrap_or(1) as f64;
    let x = |i: f64| ml + (w - ml - 10.0) * i / x_max;
    let y = |v: f64| (h - mb) - (h - mb - 10.0) * v / y_max;
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    ));
    s.push_str(&format!(
        "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <line x1=\"{ml}\" y1=\"10\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - mb,
        h - mb,
        w - 10.0,
        h - mb
    ));
    for (value, color, label) in [
        (cap, "#e07000", "capacity"),
        (cap * (1.0 + report.band), "#2a9d2a", "band"),
        (cap * (1.0 - report.band), "#2a9d2a", ""),
    ] {
        s.push_str(&format!(
            "<line x1=\"{ml}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"{color}\" \
             stroke-dasharray=\"6,3\"/>\n",
            y(value),
            w - 10.0
        ));
        if !label.is_empty() {
            s.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{label}</text>\n",
                w - 70.0,
                y(value) - 4.0
            ));
        }
    }
    if !totals.is_empty() {
        let pts: Vec<String> = totals
            .iter()
            .map(|&(i, t)| format!("{:.1},{:.1}", x(i as f64), y(t)))
            .collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f5fbf\" stroke-width=\"1.5\"/>\n",
            pts.join(" ")
        ));
    }
    for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let v = y_max * frac;
        s.push_str(&format!(
            "<text x=\"4\" y=\"{}\">{:.1} Mbps</text>\n",
            y(v) + 4.0,
            v / 1e6
        ));
    }
    s.push_str(&format!(
        "<text x=\"{ml}\" y=\"{}\">window ({} total)  {} {}  rate {}</text>\n",
        h - 8.0,
        cell.rows.len(),
        report.scenario,
        method,
        cell.rate_label
    ));
    s.push_str("</svg>\n");
    s
}
