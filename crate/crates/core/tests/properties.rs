//! Property tests for the estimator algebra, the topology grammar, and
//! ledger conservation under randomized scenarios.

use airband_core::estimators::{sp_estimate, ss_estimate, SpParams, SsParams};
use airband_core::ledger::{LinkQuality, TimeLedger, WindowStats};
use airband_core::{parse_topology, FlowSpec, NetworkSim, Scenario, OFDM_RATES_BPS};
use proptest::prelude::*;

fn stats(idle: u64, m: u64, bits: u64, tx: u64, bo: u64) -> WindowStats {
    WindowStats {
        window_index: 0,
        meas_time_us: m,
        ledger: TimeLedger {
            tx_us: tx,
            backoff_us: bo,
            other_us: m - idle - tx - bo,
            idle_us: idle,
        },
        tx_bits: bits,
        attempts: 0,
        intended_packets: 0,
        tx_queue_depth_bits: 0,
        links: vec![],
    }
}

fn link(q: f64, r: f64) -> LinkQuality {
    LinkQuality {
        link_id: 0,
        avg_phy_rate_bps: q,
        retry_rate: r,
        sample_count: 1,
    }
}

proptest! {
    /// SP is homogeneous of degree one in p.
    #[test]
    fn sp_homogeneous_in_p(
        m in 1_000u64..1_000_000,
        idle_frac in 0.0f64..1.0,
        busy_frac in 0.01f64..1.0,
        bits in 1u64..10_000_000,
        p in 0.01f64..0.5,
        scale in 1.0f64..2.0,
    ) {
        let idle = (m as f64 * idle_frac * (1.0 - busy_frac)) as u64;
        let tx = ((m - idle) as f64 * busy_frac).max(1.0) as u64;
        let s = stats(idle, m, bits, tx, 0);
        let a = sp_estimate(&s, &SpParams { p }).unwrap();
        let b = sp_estimate(&s, &SpParams { p: p * scale }).unwrap();
        prop_assert!((b - a * scale).abs() <= 1e-9 * b.abs().max(1.0));
    }

    /// SP strictly increases with idle time, all else fixed.
    #[test]
    fn sp_increasing_in_idle(
        m in 10_000u64..1_000_000,
        bits in 1u64..10_000_000,
        p in 0.1f64..1.0,
    ) {
        let tx = m / 4;
        let idle_lo = m / 8;
        let idle_hi = m / 4;
        let lo = sp_estimate(&stats(idle_lo, m, bits, tx, 0), &SpParams { p }).unwrap();
        let hi = sp_estimate(&stats(idle_hi, m, bits, tx, 0), &SpParams { p }).unwrap();
        prop_assert!(hi > lo);
    }

    /// SS strictly decreases in any retry rate and increases in any phy rate.
    #[test]
    fn ss_monotone_in_link_quality(
        idle in 1u64..200_000,
        r1 in 1.0f64..4.0,
        r2 in 1.0f64..4.0,
        qi in 0usize..8,
        qj in 0usize..8,
        bump in 0.1f64..2.0,
    ) {
        let m = 200_000;
        let f = SsParams::default();
        let q1 = OFDM_RATES_BPS[qi] as f64;
        let q2 = OFDM_RATES_BPS[qj] as f64;
        let base = ss_estimate(idle, m, &[link(q1, r1), link(q2, r2)], &f).unwrap();
        let worse =
            ss_estimate(idle, m, &[link(q1, r1 + bump), link(q2, r2)], &f).unwrap();
        prop_assert!(worse < base);
        let faster =
            ss_estimate(idle, m, &[link(q1 + 1e6, r1), link(q2, r2)], &f).unwrap();
        prop_assert!(faster > base);
    }

    /// Dimensional sanity: bits and microseconds in, bits per second out.
    /// Scaling every time by k and the bits by k leaves both estimators fixed.
    #[test]
    fn estimators_scale_invariant(
        m in 1_000u64..100_000,
        k in 2u64..8,
        idle_frac in 0.1f64..0.8,
        bits in 1_000u64..1_000_000,
    ) {
        let idle = (m as f64 * idle_frac) as u64;
        let tx = (m - idle) / 2;
        let a = sp_estimate(&stats(idle, m, bits, tx, 0), &SpParams::default()).unwrap();
        let b = sp_estimate(
            &stats(idle * k, m * k, bits * k, tx * k, 0),
            &SpParams::default(),
        )
        .unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    /// Valid topology strings round-trip through parse and unparse.
    #[test]
    fn topology_round_trip(
        hops in 1usize..4,
        bands in proptest::collection::vec(0usize..3, 4),
        cross in proptest::collection::vec(1u32..20, 0..3),
        seed in proptest::option::of(0u64..1_000_000),
    ) {
        let mut tokens = Vec::new();
        for i in 0..hops {
            if i > 0 {
                tokens.push("AP".to_string());
            }
            tokens.push(["g", "a", "w"][bands[i]].to_string());
        }
        let mut spec = tokens.join("-");
        // Keep at least one wireless hop so cross traffic stays meaningful.
        if !spec.contains('g') && !spec.contains('a') {
            spec = format!("g-AP-{spec}");
        }
        for x in &cross {
            spec.push_str(&format!(" X{x}"));
        }
        if let Some(s) = seed {
            spec.push_str(&format!(" seed={s}"));
        }
        let parsed = parse_topology(&spec).unwrap();
        let canonical = parsed.unparse();
        let reparsed = parse_topology(&canonical).unwrap();
        prop_assert_eq!(reparsed.unparse(), canonical);
        prop_assert_eq!(reparsed.path, parsed.path);
        prop_assert_eq!(reparsed.cross_mbps, parsed.cross_mbps);
    }

    /// Exact time conservation across randomized short scenarios.
    #[test]
    fn ledger_conserves_time(
        spec_idx in 0usize..4,
        loss in 0.0f64..0.3,
        rate_mbps in 0.5f64..10.0,
        payload in 200u32..1400,
        seed in 0u64..1_000,
        cross in proptest::option::of(1.0f64..6.0),
    ) {
        let specs = ["g", "g-AP-g", "a-AP-w", "g-AP-g-dls"];
        let mut s = Scenario::from_spec(specs[spec_idx]).unwrap();
        s.wireless.per_attempt_loss_prob = loss;
        s.media = FlowSpec::cbr(rate_mbps * 1e6);
        s.media.datagram_payload_bytes = payload;
        if let Some(x) = cross {
            s.cross.push(airband_core::CrossFlow::at_rate(x * 1e6));
        }
        let sim = NetworkSim::build(&s, seed, 1_000_000, Some(100_000)).unwrap();
        sim.run(|w| {
            for stats in &w.all {
                // snapshot_and_reset already asserts; double-check here.
                assert_eq!(stats.ledger.total_us(), 100_000);
            }
            None
        });
    }
}
