//! Deterministic CSMA/CA channel-time simulator and available-bandwidth
//! estimation toolkit.
//!
//! The crate models a shared 802.11-style medium at microsecond granularity,
//! keeps per-node airtime ledgers (transmit / backoff / other / idle), and
//! derives available-bandwidth estimates and an incremental rate-adaptation
//! loop from the per-window statistics, the way a driver-resident
//! network-aware agent would.

pub mod adaptation;
pub mod engine;
pub mod estimators;
pub mod harness;
pub mod ledger;
pub mod medium;
pub mod runtime;
pub mod scenario;

pub use adaptation::{AdaptationOutput, AdaptationParams, AdaptationState, Branch};
pub use engine::{Engine, EventHandle, EventQueue, RngStream, ScheduleError, SimClock};
pub use estimators::{
    sp_estimate, ss_estimate, total_estimate, BandwidthEstimate, EstimatorMethod, SpParams,
    SsParams,
};
pub use ledger::{retry_rate, throughput_bps, LinkQuality, StatsLedger, TimeLedger, WindowStats};
pub use medium::{
    ack_airtime_us, frame_airtime_us, full_exchange_airtime_us, ppdu_airtime_us, Frame, FrameKind,
    LinkCondition, MacTimingParams, Medium, MediumError, MediumEvent, NodeClass, NodeTimeline,
    TimeCategory, OFDM_RATES_BPS,
};
pub use harness::{
    compare_methods, in_band_fraction, load_report, run as run_experiment, write_report,
    CellReport, Comparison, ExperimentConfig, HarnessError, MethodSel, Mode, RunReport,
    SummaryRow, WindowRow,
};
pub use runtime::{
    calibrate_mac_efficiency, measure_capacity, BuildError, NetworkSim, SimResult, WindowReport,
};
pub use scenario::{
    parse_topology, Band, CrossFlow, FlowSpec, ParseError, PathLink, ReliableParams, Scenario,
    ScenarioFile, ScheduleChange, Topology, TrafficProfile, Transport, WirelessDefaults,
};
