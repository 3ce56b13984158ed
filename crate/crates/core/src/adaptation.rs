//! Incremental rate-adaptation controller.
//!
//! Once per measurement window the controller turns the window's statistics
//! into four values returned to the application layer: the achieved rate, an
//! available rate to aim for next, and the queueing delay and jitter. Rate
//! feedback is positive (a fraction `rho` of the idle time is claimed) when
//! idle time is available, and negative (a fraction `beta` of the observed
//! rate drop is surrendered) when the achieved rate fell.
//!
//! All internal arithmetic runs in bits and microseconds, in the exact order
//! the update rules state, so the controller is reproducible step for step.

use crate::ledger::WindowStats;

/// Saturating delay reported when the queue is non-empty but the window
/// carried no traffic, in microseconds.
pub const DELAY_SATURATED_US: f64 = 2_147_483_648.0; // 2^31

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptationParams {
    /// Fraction of perceived idle time claimed on a rate increase, in (0, 1].
    pub rho: f64,
    /// Gain applied to an observed rate drop, > 0.
    pub beta: f64,
    /// Idle time below this threshold is treated as none available.
    pub idle_min_threshold_us: u64,
    /// Rate drops smaller than this are ignored, in bits/second.
    pub min_rate_diff_threshold_bps: f64,
    /// Extra per-window transmission-path overhead added to Tx + Bo.
    pub packet_proc_delay_us: u64,
    /// Ratio of bits seen at the MAC to application-layer media bits, >= 1.
    /// The default is MPEG2-TS over UDP packing: 7 x 188-byte TS packets per
    /// datagram plus 80 bytes of per-datagram headers.
    pub app_overhead_factor: f64,
    /// Source-rate clamps applied when feeding the rate back to the source.
    pub min_source_rate_bps: f64,
    pub max_source_rate_bps: f64,
}

impl Default for AdaptationParams {
    fn default() -> Self {
        AdaptationParams {
            rho: 0.8,
            beta: 1.0,
            idle_min_threshold_us: 10_000,
            min_rate_diff_threshold_bps: 100_000.0,
            packet_proc_delay_us: 0,
            app_overhead_factor: 1396.0 / 1316.0,
            min_source_rate_bps: 50_000.0,
            max_source_rate_bps: 100_000_000.0,
        }
    }
}

/// Controller memory carried between windows.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AdaptationState {
    pub tx_rate_previous_bps: f64,
    pub tx_delay_previous_us: f64,
}

/// The four values returned to the application layer each window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptationOutput {
    pub tx_rate_bps: f64,
    pub avail_tx_rate_bps: f64,
    pub tx_delay_us: f64,
    pub tx_jitter_us: f64,
}

/// Which branch of the controller fired this window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Positive,
    Negative,
    None,
}

/// Queueing delay and jitter from the queue depth and achieved rate.
///
/// A zero rate with a non-empty queue reports a saturating maximum delay
/// rather than dividing by zero; an empty queue is zero delay regardless.
pub fn delay_jitter(
    queue_depth_bits: u64,
    tx_rate_bps: f64,
    prev_delay_us: f64,
) -> (f64, f64) {
    debug_assert!(tx_rate_bps >= 0.0);
    let delay_us = if queue_depth_bits == 0 {
        0.0
    } else if tx_rate_bps == 0.0 {
        DELAY_SATURATED_US
    } else {
        queue_depth_bits as f64 / (tx_rate_bps / 1e6)
    };
    (delay_us, delay_us - prev_delay_us)
}

/// One controller step over a completed window.
///
/// Mirrors the incremental update rules line by line: rate delta first
/// (positive on idle headroom, else negative on a rate drop), then the
/// available rate, then the state update, then delay and jitter from the
/// freshly updated state.
pub fn step(
    stats: &WindowStats,
    params: &AdaptationParams,
    state: &AdaptationState,
) -> (AdaptationOutput, AdaptationState, Branch) {
    assert!(stats.meas_time_us > 0);
    let meas_time = stats.meas_time_us as f64;
    // Internal unit: bits per microsecond.
    let tx_rate = stats.tx_bits as f64 / meas_time;
    let mut delta_tx_bits = 0.0;
    let mut branch = Branch::None;
    if stats.ledger.idle_us > params.idle_min_threshold_us {
        let denominator =
            (stats.ledger.tx_us + stats.ledger.backoff_us + params.packet_proc_delay_us) as f64;
        delta_tx_bits =
            params.rho * stats.tx_bits as f64 * (stats.ledger.idle_us as f64 / denominator);
        branch = Branch::Positive;
    } else {
        let tx_rate_diff = state.tx_rate_previous_bps / 1e6 - tx_rate;
        if tx_rate_diff > params.min_rate_diff_threshold_bps / 1e6 {
            delta_tx_bits = -params.beta * meas_time * tx_rate_diff;
            branch = Branch::Negative;
        }
    }
    let delta_tx_rate = delta_tx_bits / meas_time;
    let avail_tx_rate = (tx_rate + delta_tx_rate).max(0.0);
    // Delay straight from bits and bits/us; dividing bits by bits/us is us.
    let tx_delay_us = if stats.tx_queue_depth_bits == 0 {
        0.0
    } else if tx_rate == 0.0 {
        DELAY_SATURATED_US
    } else {
        stats.tx_queue_depth_bits as f64 / tx_rate
    };
    let tx_jitter_us = tx_delay_us - state.tx_delay_previous_us;
    let next_state = AdaptationState {
        tx_rate_previous_bps: tx_rate * 1e6,
        tx_delay_previous_us: tx_delay_us,
    };
    let output = AdaptationOutput {
        tx_rate_bps: tx_rate * 1e6,
        avail_tx_rate_bps: avail_tx_rate * 1e6,
        tx_delay_us,
        tx_jitter_us,
    };
    (output, next_state, branch)
}

/// Translate a controller output into the next window's application send
/// rate: discount by the application overhead factor, clamp to the
/// configured source-rate range.
pub fn apply_to_source(output: &AdaptationOutput, params: &AdaptationParams) -> f64 {
    let next = output.avail_tx_rate_bps / params.app_overhead_factor;
    next.min(params.max_source_rate_bps)
        .max(params.min_source_rate_bps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::RngStream;
    use crate::ledger::TimeLedger;

    fn stats(
        tx_bits: u64,
        meas_us: u64,
        idle_us: u64,
        tx_us: u64,
        bo_us: u64,
        queue_bits: u64,
    ) -> WindowStats {
        WindowStats {
            window_index: 0,
            meas_time_us: meas_us,
            ledger: TimeLedger {
                tx_us,
                backoff_us: bo_us,
                other_us: meas_us - idle_us - tx_us - bo_us,
                idle_us,
            },
            tx_bits,
            attempts: 0,
            intended_packets: 0,
            tx_queue_depth_bits: queue_bits,
            links: vec![],
        }
    }

    #[test]
    fn positive_branch_hand_trace() {
        // TxBits=1e6, M=200 ms -> TxRate = 5 Mbps; Idle 50 ms > 10 ms;
        // Tx+Bo = 40 ms, rho = 0.8 -> delta bits 1e6, AvailTxRate 10 Mbps.
        let s = stats(1_000_000, 200_000, 50_000, 30_000, 10_000, 0);
        let (out, next, branch) = step(&s, &AdaptationParams::default(), &AdaptationState::default());
        assert_eq!(branch, Branch::Positive);
        assert_eq!(out.tx_rate_bps, 5_000_000.0);
        assert_eq!(out.avail_tx_rate_bps, 10_000_000.0);
        assert_eq!(next.tx_rate_previous_bps, 5_000_000.0);
    }

    #[test]
    fn negative_branch_hand_trace() {
        // Idle 2 ms <= 10 ms; previous rate 6 Mbps, current 5 Mbps,
        // diff 1 Mbps > 0.1 Mbps, beta = 1 -> delta bits -200_000,
        // AvailTxRate 4 Mbps.
        let s = stats(1_000_000, 200_000, 2_000, 150_000, 20_000, 0);
        let state = AdaptationState {
            tx_rate_previous_bps: 6_000_000.0,
            tx_delay_previous_us: 0.0,
        };
        let (out, _, branch) = step(&s, &AdaptationParams::default(), &state);
        assert_eq!(branch, Branch::Negative);
        assert_eq!(out.avail_tx_rate_bps, 4_000_000.0);
    }

    #[test]
    fn both_guards_false_keeps_rate() {
        let s = stats(1_000_000, 200_000, 2_000, 150_000, 20_000, 0);
        let state = AdaptationState {
            tx_rate_previous_bps: 5_050_000.0, // diff 50 kbps <= 100 kbps
            tx_delay_previous_us: 0.0,
        };
        let (out, _, branch) = step(&s, &AdaptationParams::default(), &state);
        assert_eq!(branch, Branch::None);
        assert_eq!(out.avail_tx_rate_bps, out.tx_rate_bps);
    }

    #[test]
    fn delay_jitter_hand_traces() {
        assert_eq!(delay_jitter(0, 5e6, 10.0), (0.0, -10.0));
        let (d, j) = delay_jitter(500_000, 5_000_000.0, 60_000.0);
        assert_eq!(d, 100_000.0);
        assert_eq!(j, 40_000.0);
        let (d2, j2) = delay_jitter(500_000, 5_000_000.0, d);
        assert_eq!(d2, 100_000.0);
        assert_eq!(j2, 0.0);
    }

    #[test]
    fn zero_rate_with_backlog_saturates_delay() {
        let (d, _) = delay_jitter(1_000, 0.0, 0.0);
        assert_eq!(d, DELAY_SATURATED_US);
    }

    #[test]
    fn negative_avail_rate_clamps_to_zero() {
        let s = stats(100_000, 200_000, 0, 150_000, 20_000, 0); // 0.5 Mbps
        let state = AdaptationState {
            tx_rate_previous_bps: 50_000_000.0,
            tx_delay_previous_us: 0.0,
        };
        let (out, _, branch) = step(&s, &AdaptationParams::default(), &state);
        assert_eq!(branch, Branch::Negative);
        assert_eq!(out.avail_tx_rate_bps, 0.0);
    }

    #[test]
    fn apply_to_source_cases() {
        let p = AdaptationParams {
            app_overhead_factor: 1.05,
            ..AdaptationParams::default()
        };
        let out = AdaptationOutput {
            tx_rate_bps: 5e6,
            avail_tx_rate_bps: 10e6,
            tx_delay_us: 0.0,
            tx_jitter_us: 0.0,
        };
        let next = apply_to_source(&out, &p);
        assert!((next - 10e6 / 1.05).abs() < 1.0);

        let tiny = AdaptationOutput {
            avail_tx_rate_bps: 1_000.0,
            ..out
        };
        assert_eq!(apply_to_source(&tiny, &p), p.min_source_rate_bps);

        let cap = AdaptationParams {
            app_overhead_factor: 1.0,
            max_source_rate_bps: 8e6,
            ..p
        };
        let big = AdaptationOutput {
            avail_tx_rate_bps: 20e6,
            ..out
        };
        assert_eq!(apply_to_source(&big, &cap), 8e6);
    }

    #[test]
    fn quiescence_with_no_idle_and_stable_rate() {
        let params = AdaptationParams::default();
        let mut state = AdaptationState {
            tx_rate_previous_bps: 5e6,
            tx_delay_previous_us: 0.0,
        };
        for _ in 0..10 {
            let s = stats(1_000_000, 200_000, 0, 180_000, 20_000, 0);
            let (out, next, branch) = step(&s, &params, &state);
            assert_eq!(branch, Branch::None);
            assert_eq!(out.avail_tx_rate_bps, 5e6);
            state = next;
        }
    }

    /// Line-by-line transcription of the update rules, kept deliberately
    /// separate from the implementation: straight-line statements over plain
    /// local variables, in the exact published order.
    #[allow(clippy::too_many_arguments)]
    fn reference_interpreter(
        tx_bits: f64,
        meas_time: f64,
        idle_time: f64,
        tx_time: f64,
        backoff_time: f64,
        queue_depth: f64,
        rho: f64,
        beta: f64,
        idle_min_threshold: f64,
        min_rate_diff_threshold: f64,
        packet_proc_delay: f64,
        tx_rate_previous: &mut f64,
        tx_delay: &mut f64,
    ) -> (f64, f64, f64, f64) {
        let tx_rate = tx_bits / meas_time;
        let mut delta_tx_bits = 0.0;
        if idle_time > idle_min_threshold {
            delta_tx_bits = rho * tx_bits * (idle_time / (tx_time + backoff_time + packet_proc_delay));
        } else {
            let tx_rate_diff = *tx_rate_previous - tx_rate;
            if tx_rate_diff > min_rate_diff_threshold {
                delta_tx_bits = -beta * meas_time * tx_rate_diff;
            }
        }
        let delta_tx_rate = delta_tx_bits / meas_time;
        let avail_tx_rate = (tx_rate + delta_tx_rate).max(0.0);
        *tx_rate_previous = tx_rate;
        let tx_delay_prev = *tx_delay;
        *tx_delay = if queue_depth == 0.0 {
            0.0
        } else if tx_rate == 0.0 {
            DELAY_SATURATED_US
        } else {
            queue_depth / tx_rate
        };
        let tx_jitter = *tx_delay - tx_delay_prev;
        (tx_rate, avail_tx_rate, *tx_delay, tx_jitter)
    }

    #[test]
    fn matches_reference_interpreter_over_random_sequence() {
        let params = AdaptationParams::default();
        let mut rng = RngStream::derive(99, "ctl", 0);
        let mut state = AdaptationState::default();
        let mut ref_rate_prev = 0.0;
        let mut ref_delay = 0.0;
        for _ in 0..100 {
            let m = 200_000u64;
            let idle = rng.uniform_int(0, m);
            let tx = rng.uniform_int(0, m - idle);
            let bo = rng.uniform_int(0, m - idle - tx);
            let bits = rng.uniform_int(0, 10_000_000);
            let depth = rng.uniform_int(0, 2_000_000);
            let s = stats(bits, m, idle, tx, bo, depth);
            let (out, next, _) = step(&s, &params, &state);
            let (r_rate, r_avail, r_delay, r_jitter) = reference_interpreter(
                bits as f64,
                m as f64,
                idle as f64,
                tx as f64,
                bo as f64,
                depth as f64,
                params.rho,
                params.beta,
                params.idle_min_threshold_us as f64,
                params.min_rate_diff_threshold_bps / 1e6,
                params.packet_proc_delay_us as f64,
                &mut ref_rate_prev,
                &mut ref_delay,
            );
            // Both paths compute in bits/us and convert to bps the same way;
            // the comparison is exact.
            assert_eq!(out.tx_rate_bps, r_rate * 1e6);
            assert_eq!(out.avail_tx_rate_bps, r_avail * 1e6);
            assert_eq!(out.tx_delay_us, r_delay);
            assert_eq!(out.tx_jitter_us, r_jitter);
            state = next;
        }
    }
}
