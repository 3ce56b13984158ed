//! Available-bandwidth estimators.
//!
//! Two techniques, both driven by the per-window statistics a source's driver
//! agent collects:
//!
//! * **Source predictor (SP)** uses only the source's own first-hop
//!   transmission statistics: `additional = (I/M) * (TxBits/(Tx+Bo)) * p`.
//! * **Source sniffer (SS)** uses sniffed per-link retry rates and phy rates
//!   along the whole path: `additional = (I/M) * (1/sum(r_i/q_i)) * f`.
//!
//! `p` discounts the perceived idle time (it must be shared across hops on
//! the same channel); `f` maps a phy rate to the effective throughput seen at
//! the top of the MAC.

use crate::ledger::{throughput_bps, LinkQuality, WindowStats};

/// Source-predictor parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpParams {
    /// Proportionality factor in (0, 1] correcting idle-time overestimation.
    pub p: f64,
}

impl SpParams {
    /// Default `p` for a path with `wireless_hops` hops sharing one channel:
    /// 0.8 for one hop, 0.4 for two, 0.8/h in general.
    pub fn for_hops(wireless_hops: usize) -> Self {
        let h = wireless_hops.max(1) as f64;
        SpParams { p: 0.8 / h }
    }
}

impl Default for SpParams {
    fn default() -> Self {
        SpParams { p: 0.8 }
    }
}

/// Source-sniffer parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsParams {
    /// MAC-efficiency correction factor in (0, 1].
    pub f: f64,
}

impl SsParams {
    /// The reference value for 54 Mbps links: 24/54.
    pub fn for_54mbps() -> Self {
        SsParams { f: 24.0 / 54.0 }
    }
}

impl Default for SsParams {
    fn default() -> Self {
        Self::for_54mbps()
    }
}

/// Which estimator produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorMethod {
    Sp,
    Ss,
}

impl std::fmt::Display for EstimatorMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimatorMethod::Sp => write!(f, "sp"),
            EstimatorMethod::Ss => write!(f, "ss"),
        }
    }
}

/// A window's bandwidth estimate: measured rate plus estimated additional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthEstimate {
    pub measured_bps: f64,
    pub additional_bps: f64,
    pub total_bps: f64,
    pub method: EstimatorMethod,
    pub window_index: u32,
}

/// Source-predictor additional bandwidth for one window, in bits/second.
///
/// Returns `None` for a window in which the node did not transmit at all
/// (`Tx + Bo == 0`); the caller holds its previous estimate in that case.
pub fn sp_estimate(stats: &WindowStats, params: &SpParams) -> Option<f64> {
    assert!(stats.meas_time_us > 0);
    let busy_us = stats.ledger.tx_us + stats.ledger.backoff_us;
    if busy_us == 0 {
        return None;
    }
    let idle_over_meas = stats.ledger.idle_us as f64 / stats.meas_time_us as f64;
    let bits_per_busy = stats.tx_bits as f64 * 1e6 / busy_us as f64;
    Some(idle_over_meas * bits_per_busy * params.p)
}

/// Source-sniffer additional bandwidth for one window, in bits/second.
///
/// Every wireless link on the path must have produced a quality sample this
/// window; a missing sample yields `None`.
///
/// The harmonic term `1/sum(r_i/q_i)` is evaluated in product form
/// (`prod(q) / sum(r_i * prod_{j != i} q_j)`), which reduces to exactly `q`
/// for a single link with `r == 1`.
pub fn ss_estimate(
    idle_us: u64,
    meas_time_us: u64,
    links: &[LinkQuality],
    params: &SsParams,
) -> Option<f64> {
    assert!(meas_time_us > 0);
    if links.is_empty() {
        return None;
    }
    debug_assert!(links
        .iter()
        .all(|l| l.avg_phy_rate_bps > 0.0 && l.retry_rate >= 1.0));
    let numerator: f64 = links.iter().map(|l| l.avg_phy_rate_bps).product();
    let mut denominator = 0.0;
    for (i, l) in links.iter().enumerate() {
        let mut term = l.retry_rate;
        for (j, other) in links.iter().enumerate() {
            if j != i {
                term *= other.avg_phy_rate_bps;
            }
        }
        denominator += term;
    }
    let idle_over_meas = idle_us as f64 / meas_time_us as f64;
    Some(idle_over_meas * (numerator / denominator) * params.f)
}

/// SS over a window's link samples, requiring `expected_links` samples.
pub fn ss_estimate_for_window(
    stats: &WindowStats,
    expected_links: usize,
    params: &SsParams,
) -> Option<f64> {
    if expected_links == 0 || stats.links.len() < expected_links {
        return None;
    }
    ss_estimate(
        stats.ledger.idle_us,
        stats.meas_time_us,
        &stats.links,
        params,
    )
}

/// Combine a window's measured throughput with an additional-bandwidth
/// estimate.
pub fn total_estimate(
    stats: &WindowStats,
    additional_bps: f64,
    method: EstimatorMethod,
) -> BandwidthEstimate {
    assert!(additional_bps >= 0.0);
    let measured = throughput_bps(stats);
    BandwidthEstimate {
        measured_bps: measured,
        additional_bps,
        total_bps: measured + additional_bps,
        method,
        window_index: stats.window_index,
    }
}
