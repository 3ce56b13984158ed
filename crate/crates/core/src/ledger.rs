//! Per-node, per-window statistics accumulation, as a driver-resident
//! network-aware agent would collect them.
//!
//! Every microsecond a node experiences falls into exactly one of four
//! categories — own transmission time, own backoff time, other users'
//! transmissions, idle — and a window snapshot must conserve them exactly:
//! `tx + backoff + other + idle == window length`. A conservation failure is
//! an accounting bug and aborts the simulation.

/// Integer-microsecond decomposition of a window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TimeLedger {
    pub tx_us: u64,
    pub backoff_us: u64,
    pub other_us: u64,
    pub idle_us: u64,
}

impl TimeLedger {
    pub fn total_us(&self) -> u64 {
        self.tx_us + self.backoff_us + self.other_us + self.idle_us
    }
}

/// Per-link quality sample for one window: average retry rate `r` and
/// airtime-weighted average phy rate `q`. Present only when at least one
/// frame completed on the link during the window.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkQuality {
    pub link_id: usize,
    pub avg_phy_rate_bps: f64,
    pub retry_rate: f64,
    pub sample_count: u64,
}

/// One measurement window's counters for a node.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowStats {
    pub window_index: u32,
    pub meas_time_us: u64,
    pub ledger: TimeLedger,
    pub tx_bits: u64,
    pub attempts: u64,
    pub intended_packets: u64,
    pub tx_queue_depth_bits: u64,
    pub links: Vec<LinkQuality>,
}

/// Effective throughput over the window, in bits per second.
pub fn throughput_bps(stats: &WindowStats) -> f64 {
    assert!(stats.meas_time_us > 0);
    stats.tx_bits as f64 * 1e6 / stats.meas_time_us as f64
}

/// Retry rate: transmission attempts divided by packets intended for
/// transmission. `None` when nothing was intended this window.
pub fn retry_rate(attempts: u64, intended: u64) -> Option<f64> {
    if intended == 0 {
        None
    } else {
        Some(attempts as f64 / intended as f64)
    }
}

/// Events fed into the ledger by the medium.
#[derive(Debug, Clone, Copy)]
pub enum LedgerEvent {
    /// A frame finished delivered; `airtime_us` covers this frame's attempt
    /// airtime not yet flushed at a window boundary.
    TxDone {
        bits: u64,
        airtime_us: u64,
        attempts: u64,
    },
    /// A frame was dropped after exhausting the retry limit.
    TxDropped { airtime_us: u64, attempts: u64 },
    /// Transmission airtime split off at a window boundary while the exchange
    /// is still in flight; the bits land in the completion window.
    TxAirtime { us: u64 },
    Backoff { us: u64 },
    Other { us: u64 },
    Idle { us: u64 },
    QueueDepth { bits: u64 },
}

#[derive(Debug, Clone, Default)]
struct NodeCounters {
    tx_us: u64,
    backoff_us: u64,
    other_us: u64,
    idle_us: u64,
    tx_bits: u64,
    attempts: u64,
    intended: u64,
    queue_bits_last: u64,
}

#[derive(Debug, Clone, Default)]
struct LinkCounters {
    attempts: u64,
    intended: u64,
    airtime_us: u64,
    rate_airtime: f64,
}

/// Accumulates statistics for every node and link, snapshotting them once per
/// measurement interval.
#[derive(Debug)]
pub struct StatsLedger {
    meas_time_us: u64,
    window_start_us: u64,
    window_index: u32,
    nodes: Vec<NodeCounters>,
    links: Vec<LinkCounters>,
    /// Per node: link ids whose quality samples attach to its snapshots
    /// (emulates a source that sniffs every wireless link on its path).
    taps: Vec<Vec<usize>>,
}

impl StatsLedger {
    pub fn new(meas_time_us: u64) -> Self {
        StatsLedger {
            meas_time_us,
            window_start_us: 0,
            window_index: 0,
            nodes: Vec::new(),
            links: Vec::new(),
            taps: Vec::new(),
        }
    }

    pub fn add_node(&mut self) -> usize {
        self.nodes.push(NodeCounters::default());
        self.taps.push(Vec::new());
        self.nodes.len() - 1
    }

    pub fn add_link(&mut self) -> usize {
        self.links.push(LinkCounters::default());
        self.links.len() - 1
    }

    pub fn set_taps(&mut self, node: usize, links: Vec<usize>) {
        self.taps[node] = links;
    }

    pub fn meas_time_us(&self) -> u64 {
        self.meas_time_us
    }

    pub fn window_index(&self) -> u32 {
        self.window_index
    }

    pub fn record_event(&mut self, node: usize, event: LedgerEvent) {
        let c = &mut self.nodes[node];
        match event {
            LedgerEvent::TxDone {
                bits,
                airtime_us,
                attempts,
            } => {
                c.tx_bits += bits;
                c.tx_us += airtime_us;
                c.attempts += attempts;
                c.intended += 1;
            }
            LedgerEvent::TxDropped {
                airtime_us,
                attempts,
            } => {
                c.tx_us += airtime_us;
                c.attempts += attempts;
                c.intended += 1;
            }
            LedgerEvent::TxAirtime { us } => c.tx_us += us,
            LedgerEvent::Backoff { us } => c.backoff_us += us,
            LedgerEvent::Other { us } => c.other_us += us,
            LedgerEvent::Idle { us } => c.idle_us += us,
            LedgerEvent::QueueDepth { bits } => c.queue_bits_last = bits,
        }
    }

    /// One transmission attempt observed on a link.
    pub fn record_link_attempt(&mut self, link: usize, airtime_us: u64, rate_bps: u64) {
        let c = &mut self.links[link];
        c.attempts += 1;
        c.airtime_us += airtime_us;
        c.rate_airtime += rate_bps as f64 * airtime_us as f64;
    }

    /// A frame finished (delivered or dropped) on a link.
    pub fn record_link_complete(&mut self, link: usize) {
        self.links[link].intended += 1;
    }

    /// Close the current window for `node`: verify Eq.-style conservation,
    /// emit the stats, and reset the node's counters.
    ///
    /// Panics on a conservation failure — the time accounting is exact by
    /// construction and any discrepancy is a bug, not a runtime condition.
    pub fn snapshot_and_reset(&mut self, node: usize, now_us: u64) -> WindowStats {
        assert_eq!(
            now_us - self.window_start_us,
            self.meas_time_us,
            "snapshot at {now_us} us does not close a full window (start {})",
            self.window_start_us
        );
        let links = self.taps[node]
            .iter()
            .filter_map(|&id| {
                let c = &self.links[id];
                retry_rate(c.attempts, c.intended).map(|r| LinkQuality {
                    link_id: id,
                    avg_phy_rate_bps: c.rate_airtime / c.airtime_us as f64,
                    retry_rate: r,
                    sample_count: c.intended,
                })
            })
            .collect();
        let c = std::mem::take(&mut self.nodes[node]);
        let ledger = TimeLedger {
            tx_us: c.tx_us,
            backoff_us: c.backoff_us,
            other_us: c.other_us,
            idle_us: c.idle_us,
        };
        assert_eq!(
            ledger.total_us(),
            self.meas_time_us,
            "time conservation violated for node {node} in window {}: {ledger:?}",
            self.window_index
        );
        // Queue depth uses last-write semantics and survives the reset.
        self.nodes[node].queue_bits_last = c.queue_bits_last;
        WindowStats {
            window_index: self.window_index,
            meas_time_us: self.meas_time_us,
            ledger,
            tx_bits: c.tx_bits,
            attempts: c.attempts,
            intended_packets: c.intended,
            tx_queue_depth_bits: c.queue_bits_last,
            links,
        }
    }

    /// Advance to the next window after every node has been snapshotted.
    pub fn roll_window(&mut self, now_us: u64) {
        assert_eq!(now_us - self.window_start_us, self.meas_time_us);
        self.window_start_us = now_us;
        self.window_index += 1;
        for c in &mut self.links {
            *c = LinkCounters::default();
        }
    }
}
