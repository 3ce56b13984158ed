//! Shared CSMA/CA wireless channel model: frame airtimes, DIFS/SIFS/backoff
//! contention, per-attempt losses and retries, and classification of every
//! microsecond each node experiences into one of four categories
//! (own transmission / own backoff / other users / idle).
//!
//! The model is deliberately coarse where the standard is intricate: an
//! "exchange" (DIFS + data + SIFS + ACK, optionally RTS/CTS) is one atomic
//! busy block of the medium, attributed in full to the transmitter. Backoff
//! slots tick on a grid anchored at the start of each idle period, so two
//! counters expiring in the same slot collide and fail for all colliders.
//!
//! Channel access follows DCF semantics: a frame reaching the head of an
//! idle station's queue transmits immediately when no backoff counter is
//! pending; a backoff is drawn after every transmission (post-backoff, from
//! the contention window the outcome left behind) and whenever the medium is
//! busy on arrival. A counter ticking with nothing queued behind it reads as
//! idle time in the ledger; it becomes backoff time the moment it is holding
//! up a frame.

use crate::engine::RngStream;
use crate::ledger::{LedgerEvent, StatsLedger};
use std::collections::VecDeque;
use thiserror::Error;

/// The fixed OFDM rate set (802.11a/g), in bits per second.
pub const OFDM_RATES_BPS: [u64; 8] = [
    6_000_000, 9_000_000, 12_000_000, 18_000_000, 24_000_000, 36_000_000, 48_000_000, 54_000_000,
];

#[derive(Debug, Error, PartialEq)]
pub enum MediumError {
    #[error("unsupported phy rate {0} bps: not in the OFDM rate set")]
    UnsupportedRate(u64),
    #[error("invalid MAC timing parameters: {0}")]
    InvalidTiming(&'static str),
}

/// MAC/PHY timing constants and header overheads.
///
/// Defaults are the 802.11 OFDM values: 9 us slot, 16 us SIFS, 34 us DIFS,
/// 20 us preamble, 4 us symbol, CW 15..1023, retry limit 7, 24 Mbps control
/// rate. These are configuration, not constants in code.
#[derive(Debug, Clone, PartialEq)]
pub struct MacTimingParams {
    pub slot_us: u64,
    pub sifs_us: u64,
    pub difs_us: u64,
    pub preamble_us: u64,
    pub symbol_us: u64,
    pub cw_min: u32,
    pub cw_max: u32,
    pub retry_limit: u32,
    pub ack_bytes: u32,
    pub control_rate_bps: u64,
    pub rts_cts: bool,
    pub rts_bytes: u32,
    pub cts_bytes: u32,
    pub mac_header_bytes: u32,
    pub service_bits: u64,
    pub tail_bits: u64,
}

impl Default for MacTimingParams {
    fn default() -> Self {
        MacTimingParams {
            slot_us: 9,
            sifs_us: 16,
            difs_us: 34,
            preamble_us: 20,
            symbol_us: 4,
            cw_min: 15,
            cw_max: 1023,
            retry_limit: 7,
            ack_bytes: 14,
            control_rate_bps: 24_000_000,
            rts_cts: false,
            rts_bytes: 20,
            cts_bytes: 14,
            mac_header_bytes: 28,
            service_bits: 16,
            tail_bits: 6,
        }
    }
}

impl MacTimingParams {
    pub fn validate(&self) -> Result<(), MediumError> {
        if self.slot_us == 0
            || self.sifs_us == 0
            || self.difs_us == 0
            || self.preamble_us == 0
            || self.symbol_us == 0
        {
            return Err(MediumError::InvalidTiming("durations must be positive"));
        }
        if self.cw_min > self.cw_max {
            return Err(MediumError::InvalidTiming("cw_min must be <= cw_max"));
        }
        if self.retry_limit == 0 {
            return Err(MediumError::InvalidTiming("retry_limit must be >= 1"));
        }
        Ok(())
    }
}

fn bits_per_symbol(phy_rate_bps: u64, timing: &MacTimingParams) -> Result<u64, MediumError> {
    if !OFDM_RATES_BPS.contains(&phy_rate_bps) {
        return Err(MediumError::UnsupportedRate(phy_rate_bps));
    }
    Ok(phy_rate_bps * timing.symbol_us / 1_000_000)
}

/// Airtime of a single PPDU carrying `frame_bytes` of MAC frame, at an OFDM
/// rate: preamble plus a whole number of symbols covering service + frame +
/// tail bits.
pub fn ppdu_airtime_us(
    frame_bytes: u32,
    phy_rate_bps: u64,
    timing: &MacTimingParams,
) -> Result<u64, MediumError> {
    let bps = bits_per_symbol(phy_rate_bps, timing)?;
    let bits = timing.service_bits + 8 * u64::from(frame_bytes) + timing.tail_bits;
    let symbols = bits.div_ceil(bps);
    Ok(timing.preamble_us + symbols * timing.symbol_us)
}

/// Airtime of the data frame alone (MAC header + payload), no IFS or ACK.
pub fn frame_airtime_us(
    payload_bytes: u32,
    phy_rate_bps: u64,
    timing: &MacTimingParams,
) -> Result<u64, MediumError> {
    assert!(payload_bytes > 0, "payload must be non-empty");
    ppdu_airtime_us(
        timing.mac_header_bytes + payload_bytes,
        phy_rate_bps,
        timing,
    )
}

pub fn ack_airtime_us(timing: &MacTimingParams) -> Result<u64, MediumError> {
    ppdu_airtime_us(timing.ack_bytes, timing.control_rate_bps, timing)
}

/// Full exchange: DIFS + (RTS + SIFS + CTS + SIFS, when enabled) + data +
/// SIFS + ACK. This whole block occupies the medium and is attributed to the
/// transmitter's transmission time.
pub fn full_exchange_airtime_us(
    payload_bytes: u32,
    phy_rate_bps: u64,
    timing: &MacTimingParams,
) -> Result<u64, MediumError> {
    let mut t = timing.difs_us + frame_airtime_us(payload_bytes, phy_rate_bps, timing)?;
    if timing.rts_cts {
        t += ppdu_airtime_us(timing.rts_bytes, timing.control_rate_bps, timing)?
            + timing.sifs_us
            + ppdu_airtime_us(timing.cts_bytes, timing.control_rate_bps, timing)?
            + timing.sifs_us;
    }
    t += timing.sifs_us + ack_airtime_us(timing)?;
    Ok(t)
}

/// What a node is doing at an instant, from its own radio's point of view.
/// The four classes are mutually exclusive and exhaustive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    /// This node owns the current exchange; its own PPDU ends at `tx_until_us`
    /// (earlier than the busy block's end only when a collision partner's
    /// frame is longer).
    Transmitting { tx_until_us: u64 },
    HearingOther,
    /// Counting down a backoff counter; counting starts at `from_us`, which
    /// may lie slightly in the future when a mid-idle joiner is still waiting
    /// for its slot-grid alignment point.
    BackingOff { from_us: u64 },
    Idle,
}

/// Category labels for [`NodeTimeline::classify_elapsed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeCategory {
    Transmitting,
    Backoff,
    Other,
    Idle,
}

/// Continuous per-node classification log.
///
/// Intervals must be contiguous: classifying with a gap or an overlap panics,
/// because it means the accounting lost or double-counted time.
#[derive(Debug)]
pub struct NodeTimeline {
    classified_until: u64,
    class: NodeClass,
    tx_accum_us: u64,
}

impl NodeTimeline {
    pub fn new() -> Self {
        NodeTimeline {
            classified_until: 0,
            class: NodeClass::Idle,
            tx_accum_us: 0,
        }
    }

    /// Record `[from_us, to_us)` under `category` for `node`.
    ///
    /// Transmission time is held in an accumulator until the exchange
    /// completes (or a window boundary splits it); the other categories flow
    /// straight into the ledger.
    pub fn classify_elapsed(
        &mut self,
        node: usize,
        from_us: u64,
        to_us: u64,
        category: TimeCategory,
        ledger: &mut StatsLedger,
    ) {
        assert!(
            from_us == self.classified_until && to_us >= from_us,
            "classification gap or overlap for node {node}: [{from_us}, {to_us}) after {}",
            self.classified_until
        );
        self.classified_until = to_us;
        let us = to_us - from_us;
        if us == 0 {
            return;
        }
        match category {
            TimeCategory::Transmitting => self.tx_accum_us += us,
            TimeCategory::Backoff => ledger.record_event(node, LedgerEvent::Backoff { us }),
            TimeCategory::Other => ledger.record_event(node, LedgerEvent::Other { us }),
            TimeCategory::Idle => ledger.record_event(node, LedgerEvent::Idle { us }),
        }
    }

    /// Bring the classification up to `to_us` under the current class.
    pub fn flush(&mut self, node: usize, to_us: u64, ledger: &mut StatsLedger) {
        let cu = self.classified_until;
        match self.class {
            NodeClass::Transmitting { tx_until_us } => {
                let split = tx_until_us.clamp(cu, to_us);
                self.classify_elapsed(node, cu, split, TimeCategory::Transmitting, ledger);
                self.classify_elapsed(node, split, to_us, TimeCategory::Other, ledger);
            }
            NodeClass::HearingOther => {
                self.classify_elapsed(node, cu, to_us, TimeCategory::Other, ledger);
            }
            NodeClass::BackingOff { from_us } => {
                let split = from_us.clamp(cu, to_us);
                self.classify_elapsed(node, cu, split, TimeCategory::Idle, ledger);
                self.classify_elapsed(node, split, to_us, TimeCategory::Backoff, ledger);
            }
            NodeClass::Idle => {
                self.classify_elapsed(node, cu, to_us, TimeCategory::Idle, ledger);
            }
        }
    }

    fn set_class(&mut self, node: usize, now: u64, class: NodeClass, ledger: &mut StatsLedger) {
        self.flush(node, now, ledger);
        self.class = class;
    }

    fn take_tx_accum(&mut self) -> u64 {
        std::mem::take(&mut self.tx_accum_us)
    }

    pub fn tx_accum_us(&self) -> u64 {
        self.tx_accum_us
    }
}

impl Default for NodeTimeline {
    fn default() -> Self {
        Self::new()
    }
}

/// What a frame carries besides bytes; ACKs list the sequence numbers they
/// acknowledge for the simplified reliable transport.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameKind {
    Data,
    TransportAck(Vec<u64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub flow: usize,
    pub seq: u64,
    pub payload_bytes: u32,
    pub hop: usize,
    pub kind: FrameKind,
}

impl Frame {
    pub fn bits(&self) -> u64 {
        8 * u64::from(self.payload_bytes)
    }
}

/// Events the medium asks the caller to schedule on the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MediumEvent {
    BackoffExpire { channel: usize, epoch: u64 },
    ExchangeEnd { channel: usize },
}

/// Outcome of one frame leaving a MAC queue.
#[derive(Debug)]
pub struct Completion {
    pub mac: usize,
    pub link: usize,
    pub frame: Frame,
    pub delivered: bool,
    pub attempts: u32,
}

#[derive(Debug, Clone, Copy)]
struct Backoff {
    slots_left: u64,
    counting_from: Option<u64>,
}

#[derive(Debug)]
struct Mac {
    channel: usize,
    queue: VecDeque<(Frame, usize)>,
    queue_bits: u64,
    cw: u32,
    head_attempts: u32,
    backoff: Option<Backoff>,
    timeline: NodeTimeline,
}

#[derive(Debug, Clone, Copy)]
struct Winner {
    mac: usize,
    link: usize,
    tx_end_us: u64,
    airtime_us: u64,
    rate_bps: u64,
    failed: bool,
}

#[derive(Debug)]
struct BusyBlock {
    until_us: u64,
    winners: Vec<Winner>,
}

#[derive(Debug)]
struct Channel {
    members: Vec<usize>,
    busy: Option<BusyBlock>,
    epoch: u64,
    scheduled_expiry_us: Option<u64>,
}

/// Current condition of a directed wireless link.
#[derive(Debug, Clone, Copy)]
pub struct LinkCondition {
    pub phy_rate_bps: u64,
    pub per_attempt_loss_prob: f64,
}

#[derive(Debug)]
struct Link {
    from_mac: usize,
    condition: LinkCondition,
}

/// The shared-medium simulator: channels, per-radio MAC entities, and
/// directed wireless links between them.
#[derive(Debug)]
pub struct Medium {
    timing: MacTimingParams,
    channels: Vec<Channel>,
    macs: Vec<Mac>,
    links: Vec<Link>,
    backoff_streams: Vec<RngStream>,
    loss_streams: Vec<RngStream>,
    sniffer_stream: RngStream,
    sniffer_loss_prob: f64,
    seed: u64,
}

impl Medium {
    pub fn new(timing: MacTimingParams, seed: u64) -> Self {
        timing.validate().expect("invalid MAC timing");
        Medium {
            timing,
            channels: Vec::new(),
            macs: Vec::new(),
            links: Vec::new(),
            backoff_streams: Vec::new(),
            loss_streams: Vec::new(),
            sniffer_stream: RngStream::derive(seed, "sniffer", 0),
            sniffer_loss_prob: 0.0,
            seed,
        }
    }

    pub fn timing(&self) -> &MacTimingParams {
        &self.timing
    }

    pub fn set_sniffer_loss(&mut self, p: f64) {
        self.sniffer_loss_prob = p;
    }

    pub fn add_channel(&mut self) -> usize {
        self.channels.push(Channel {
            members: Vec::new(),
            busy: None,
            epoch: 0,
            scheduled_expiry_us: None,
        });
        self.channels.len() - 1
    }

    /// Add one radio on `channel`. Returns the MAC index, which doubles as
    /// the node index in the stats ledger.
    pub fn add_mac(&mut self, channel: usize) -> usize {
        let idx = self.macs.len();
        let cw = self.timing.cw_min;
        self.macs.push(Mac {
            channel,
            queue: VecDeque::new(),
            queue_bits: 0,
            cw,
            head_attempts: 0,
            backoff: None,
            timeline: NodeTimeline::new(),
        });
        self.channels[channel].members.push(idx);
        self.backoff_streams
            .push(RngStream::derive(self.seed, "backoff", idx as u64));
        idx
    }

    pub fn add_link(&mut self, from_mac: usize, condition: LinkCondition) -> usize {
        let idx = self.links.len();
        self.links.push(Link {
            from_mac,
            condition,
        });
        self.loss_streams
            .push(RngStream::derive(self.seed, "loss", idx as u64));
        idx
    }

    pub fn set_link_condition(&mut self, link: usize, condition: LinkCondition) {
        self.links[link].condition = condition;
    }

    pub fn link_condition(&self, link: usize) -> LinkCondition {
        self.links[link].condition
    }

    pub fn link_from_mac(&self, link: usize) -> usize {
        self.links[link].from_mac
    }

    pub fn queue_bits(&self, mac: usize) -> u64 {
        self.macs[mac].queue_bits
    }

    pub fn queue_frames(&self, mac: usize) -> usize {
        self.macs[mac].queue.len()
    }

    fn expiry(&self, b: &Backoff) -> Option<u64> {
        b.counting_from
            .map(|from| from + b.slots_left * self.timing.slot_us)
    }

    /// Re-derive the next backoff expiry among macs that are actually holding
    /// a frame, and schedule it if it moved.
    fn refresh_expiry(&mut self, channel: usize, out: &mut Vec<(u64, MediumEvent)>) {
        let min_expiry = self.channels[channel]
            .members
            .iter()
            .filter(|&&m| !self.macs[m].queue.is_empty())
            .filter_map(|&m| self.macs[m].backoff.as_ref().and_then(|b| self.expiry(b)))
            .min();
        let ch = &mut self.channels[channel];
        match min_expiry {
            Some(t) if ch.scheduled_expiry_us != Some(t) => {
                ch.epoch += 1;
                ch.scheduled_expiry_us = Some(t);
                out.push((
                    t,
                    MediumEvent::BackoffExpire {
                        channel,
                        epoch: ch.epoch,
                    },
                ));
            }
            _ => {}
        }
    }

    /// Hand a frame to the link's transmitter queue.
    pub fn enqueue(
        &mut self,
        now: u64,
        link: usize,
        frame: Frame,
        ledger: &mut StatsLedger,
        out: &mut Vec<(u64, MediumEvent)>,
    ) {
        let mac_idx = self.links[link].from_mac;
        let bits = frame.bits();
        let mac = &mut self.macs[mac_idx];
        mac.queue.push_back((frame, link));
        mac.queue_bits += bits;
        let depth = mac.queue_bits;
        let channel = mac.channel;
        ledger.record_event(mac_idx, LedgerEvent::QueueDepth { bits: depth });
        if self.channels[channel].busy.is_some() || self.macs[mac_idx].queue.len() > 1 {
            // Busy medium or frames already ahead: contention state is
            // already in motion; the new frame just waits its turn.
            return;
        }
        // Head frame on an idle medium: transmit immediately unless a prior
        // backoff counter is still pending.
        let slot = self.timing.slot_us;
        match self.macs[mac_idx].backoff {
            Some(b) => {
                let from = b
                    .counting_from
                    .expect("counters always tick while the channel is idle");
                if from + b.slots_left * slot <= now {
                    self.macs[mac_idx].backoff = None;
                    self.begin_exchange(now, channel, vec![mac_idx], ledger, out);
                } else {
                    // The residual countdown now delays this frame.
                    self.macs[mac_idx].timeline.set_class(
                        mac_idx,
                        now,
                        NodeClass::BackingOff { from_us: now },
                        ledger,
                    );
                    self.refresh_expiry(channel, out);
                }
            }
            None => self.begin_exchange(now, channel, vec![mac_idx], ledger, out),
        }
    }

    pub fn on_backoff_expire(
        &mut self,
        now: u64,
        channel: usize,
        epoch: u64,
        ledger: &mut StatsLedger,
        out: &mut Vec<(u64, MediumEvent)>,
    ) {
        if self.channels[channel].epoch != epoch {
            return; // stale: the channel state changed since this was scheduled
        }
        self.channels[channel].scheduled_expiry_us = None;
        debug_assert!(self.channels[channel].busy.is_none());
        let slot = self.timing.slot_us;
        let winners: Vec<usize> = self.channels[channel]
            .members
            .iter()
            .copied()
            .filter(|&m| !self.macs[m].queue.is_empty())
            .filter(|&m| {
                self.macs[m]
                    .backoff
                    .as_ref()
                    .and_then(|b| b.counting_from.map(|from| from + b.slots_left * slot))
                    == Some(now)
            })
            .collect();
        assert!(!winners.is_empty(), "backoff expiry with no winner");
        self.begin_exchange(now, channel, winners, ledger, out);
    }

    /// Start an exchange for `winners` (several means a collision), freezing
    /// everyone else's countdown.
    fn begin_exchange(
        &mut self,
        now: u64,
        channel: usize,
        winners: Vec<usize>,
        ledger: &mut StatsLedger,
        out: &mut Vec<(u64, MediumEvent)>,
    ) {
        let members = self.channels[channel].members.clone();
        let slot = self.timing.slot_us;
        // Freeze every running counter; counters that already finished with
        // nothing queued simply evaporate.
        for &m in &members {
            let queue_empty = self.macs[m].queue.is_empty();
            if let Some(b) = &mut self.macs[m].backoff {
                if let Some(from) = b.counting_from {
                    let elapsed = (now.saturating_sub(from)) / slot;
                    if elapsed >= b.slots_left {
                        if queue_empty {
                            self.macs[m].backoff = None;
                        } else {
                            b.slots_left = 0;
                            b.counting_from = None;
                        }
                    } else {
                        b.slots_left -= elapsed;
                        b.counting_from = None;
                    }
                }
            }
        }
        for &w in &winners {
            self.macs[w].backoff = None;
        }

        let collision = winners.len() > 1;
        let mut block = BusyBlock {
            until_us: now,
            winners: Vec::with_capacity(winners.len()),
        };
        for &m in &winners {
            let (payload_bytes, link) = {
                let (frame, link) = self.macs[m].queue.front().expect("winner without frame");
                (frame.payload_bytes, *link)
            };
            let rate = self.links[link].condition.phy_rate_bps;
            let loss = self.links[link].condition.per_attempt_loss_prob;
            let airtime = full_exchange_airtime_us(payload_bytes, rate, &self.timing)
                .expect("link rate validated at configuration");
            let failed = collision || self.loss_streams[link].bernoulli(loss);
            let tx_end = now + airtime;
            block.until_us = block.until_us.max(tx_end);
            block.winners.push(Winner {
                mac: m,
                link,
                tx_end_us: tx_end,
                airtime_us: airtime,
                rate_bps: rate,
                failed,
            });
        }
        for &m in &members {
            let class = match block.winners.iter().find(|w| w.mac == m) {
                Some(w) => NodeClass::Transmitting {
                    tx_until_us: w.tx_end_us,
                },
                None => NodeClass::HearingOther,
            };
            self.macs[m].timeline.set_class(m, now, class, ledger);
        }
        let until = block.until_us;
        let ch = &mut self.channels[channel];
        ch.busy = Some(block);
        ch.epoch += 1;
        ch.scheduled_expiry_us = None;
        out.push((until, MediumEvent::ExchangeEnd { channel }));
    }

    pub fn on_exchange_end(
        &mut self,
        now: u64,
        channel: usize,
        ledger: &mut StatsLedger,
        out: &mut Vec<(u64, MediumEvent)>,
        completions: &mut Vec<Completion>,
    ) {
        let block = self.channels[channel]
            .busy
            .take()
            .expect("exchange end on idle channel");
        debug_assert_eq!(block.until_us, now);
        let members = self.channels[channel].members.clone();
        for &m in &members {
            self.macs[m].timeline.flush(m, now, ledger);
        }
        for w in &block.winners {
            let observed = self.sniffer_loss_prob == 0.0
                || !self.sniffer_stream.bernoulli(self.sniffer_loss_prob);
            if observed {
                ledger.record_link_attempt(w.link, w.airtime_us, w.rate_bps);
            }
            let mac = &mut self.macs[w.mac];
            if !w.failed {
                let attempts = mac.head_attempts + 1;
                let (frame, _) = mac.queue.pop_front().expect("winner frame vanished");
                mac.queue_bits -= frame.bits();
                let airtime = mac.timeline.take_tx_accum();
                ledger.record_event(
                    w.mac,
                    LedgerEvent::TxDone {
                        bits: frame.bits(),
                        airtime_us: airtime,
                        attempts: u64::from(attempts),
                    },
                );
                ledger.record_event(
                    w.mac,
                    LedgerEvent::QueueDepth {
                        bits: mac.queue_bits,
                    },
                );
                if observed {
                    ledger.record_link_complete(w.link);
                }
                mac.cw = self.timing.cw_min;
                mac.head_attempts = 0;
                completions.push(Completion {
                    mac: w.mac,
                    link: w.link,
                    frame,
                    delivered: true,
                    attempts,
                });
            } else {
                mac.head_attempts += 1;
                if mac.head_attempts >= self.timing.retry_limit {
                    let attempts = mac.head_attempts;
                    let (frame, _) = mac.queue.pop_front().expect("winner frame vanished");
                    mac.queue_bits -= frame.bits();
                    let airtime = mac.timeline.take_tx_accum();
                    ledger.record_event(
                        w.mac,
                        LedgerEvent::TxDropped {
                            airtime_us: airtime,
                            attempts: u64::from(attempts),
                        },
                    );
                    ledger.record_event(
                        w.mac,
                        LedgerEvent::QueueDepth {
                            bits: mac.queue_bits,
                        },
                    );
                    if observed {
                        ledger.record_link_complete(w.link);
                    }
                    mac.cw = self.timing.cw_min;
                    mac.head_attempts = 0;
                    completions.push(Completion {
                        mac: w.mac,
                        link: w.link,
                        frame,
                        delivered: false,
                        attempts,
                    });
                } else {
                    mac.cw = (mac.cw * 2 + 1).min(self.timing.cw_max);
                }
            }
        }
        // Every transmitter draws its post-backoff from whatever contention
        // window the outcome left behind, queued traffic or not.
        for w in &block.winners {
            let cw = self.macs[w.mac].cw;
            let slots_left = self.backoff_streams[w.mac].uniform_int(0, u64::from(cw));
            self.macs[w.mac].backoff = Some(Backoff {
                slots_left,
                counting_from: None,
            });
        }

        // Idle period begins: the slot grid anchors here. Resume every
        // counter and draw for stations whose frame arrived during the
        // busy period.
        for &m in &members {
            let has_frame = !self.macs[m].queue.is_empty();
            if has_frame && self.macs[m].backoff.is_none() {
                let cw = self.macs[m].cw;
                let slots_left = self.backoff_streams[m].uniform_int(0, u64::from(cw));
                self.macs[m].backoff = Some(Backoff {
                    slots_left,
                    counting_from: None,
                });
            }
            if let Some(b) = &mut self.macs[m].backoff {
                b.counting_from = Some(now);
            }
            let class = if has_frame {
                NodeClass::BackingOff { from_us: now }
            } else {
                NodeClass::Idle
            };
            self.macs[m].timeline.set_class(m, now, class, ledger);
        }
        self.refresh_expiry(channel, out);
    }

    /// Bring every timeline up to `now` (for a window snapshot) and push any
    /// in-flight transmission airtime into the closing window.
    pub fn flush_all(&mut self, now: u64, ledger: &mut StatsLedger) {
        for (idx, mac) in self.macs.iter_mut().enumerate() {
            mac.timeline.flush(idx, now, ledger);
            let pending = mac.timeline.take_tx_accum();
            if pending > 0 {
                ledger.record_event(idx, LedgerEvent::TxAirtime { us: pending });
            }
        }
    }

    pub fn mac_count(&self) -> usize {
        self.macs.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Engine;

    #[test]
    fn data_frame_airtime_1500_bytes_at_54mbps() {
        let t = MacTimingParams::default();
        // 16 + 8*(28+1500) + 6 = 12246 bits -> 57 symbols of 216 bits
        assert_eq!(frame_airtime_us(1500, 54_000_000, &t).unwrap(), 248);
    }

    #[test]
    fn ack_airtime_at_control_rate() {
        let t = MacTimingParams::default();
        assert_eq!(ack_airtime_us(&t).unwrap(), 28);
    }

    #[test]
    fn full_exchange_sums_components() {
        let t = MacTimingParams::default();
        // DIFS 34 + data 248 + SIFS 16 + ACK 28
        assert_eq!(full_exchange_airtime_us(1500, 54_000_000, &t).unwrap(), 326);
    }

    #[test]
    fn unsupported_rate_rejected() {
        let t = MacTimingParams::default();
        assert_eq!(
            frame_airtime_us(1500, 11_000_000, &t),
            Err(MediumError::UnsupportedRate(11_000_000))
        );
    }

    #[test]
    fn rts_cts_adds_control_airtime() {
        let mut t = MacTimingParams::default();
        let plain = full_exchange_airtime_us(1500, 54_000_000, &t).unwrap();
        t.rts_cts = true;
        let with = full_exchange_airtime_us(1500, 54_000_000, &t).unwrap();
        // RTS 20B at 24 Mbps: 16+160+6=182 bits -> 2 symbols -> 28 us;
        // CTS 14B -> 28 us; plus two SIFS.
        assert_eq!(with, plain + 28 + 16 + 28 + 16);
    }

    #[test]
    #[should_panic(expected = "classification gap or overlap")]
    fn classification_overlap_is_fatal() {
        let mut ledger = StatsLedger::new(1_000);
        ledger.add_node();
        let mut tl = NodeTimeline::new();
        tl.classify_elapsed(0, 0, 100, TimeCategory::Idle, &mut ledger);
        tl.classify_elapsed(0, 50, 150, TimeCategory::Idle, &mut ledger);
    }

    /// Drives `n_frames` through a two-node medium (one sender, one listener)
    /// end to end, using the full event machinery.
    fn run_frames(
        loss: f64,
        n_frames: usize,
        payload: u32,
        seed: u64,
    ) -> (Vec<Completion>, StatsLedger, u64) {
        let timing = MacTimingParams::default();
        let mut medium = Medium::new(timing, seed);
        let ch = medium.add_channel();
        let tx = medium.add_mac(ch);
        let _rx = medium.add_mac(ch);
        let link = medium.add_link(
            tx,
            LinkCondition {
                phy_rate_bps: 54_000_000,
                per_attempt_loss_prob: loss,
            },
        );
        let mut ledger = StatsLedger::new(u64::MAX);
        ledger.add_node();
        ledger.add_node();
        ledger.add_link();

        let mut engine: Engine<MediumEvent> = Engine::new();
        let mut out = Vec::new();
        for seq in 0..n_frames {
            medium.enqueue(
                0,
                link,
                Frame {
                    flow: 0,
                    seq: seq as u64,
                    payload_bytes: payload,
                    hop: 0,
                    kind: FrameKind::Data,
                },
                &mut ledger,
                &mut out,
            );
        }
        for (t, ev) in out.drain(..) {
            engine.schedule(t, ev).unwrap();
        }
        let mut completions = Vec::new();
        let mut horizon = 1_000_000;
        loop {
            let now = engine.run_until(horizon, |eng, t, ev| {
                let mut out = Vec::new();
                let mut comp = Vec::new();
                match ev {
                    MediumEvent::BackoffExpire { channel, epoch } => {
                        medium.on_backoff_expire(t, channel, epoch, &mut ledger, &mut out)
                    }
                    MediumEvent::ExchangeEnd { channel } => {
                        medium.on_exchange_end(t, channel, &mut ledger, &mut out, &mut comp)
                    }
                }
                completions.append(&mut comp);
                for (t, ev) in out {
                    eng.schedule(t, ev).unwrap();
                }
            });
            if medium.queue_frames(tx) == 0 {
                return (completions, ledger, now);
            }
            horizon = now + 100_000_000;
        }
    }

    #[test]
    fn lossless_sole_node_delivers_first_attempt() {
        let (completions, _, _) = run_frames(0.0, 10, 1500, 1);
        assert_eq!(completions.len(), 10);
        for c in &completions {
            assert!(c.delivered);
            assert_eq!(c.attempts, 1);
        }
    }

    #[test]
    fn certain_loss_exhausts_retry_limit() {
        let (completions, _, _) = run_frames(1.0, 5, 1500, 2);
        assert_eq!(completions.len(), 5);
        for c in &completions {
            assert!(!c.delivered);
            assert_eq!(c.attempts, 7);
        }
    }

    #[test]
    fn mean_attempts_matches_truncated_geometric() {
        // Independent oracle: P(success at attempt k) = 0.5^k, truncated at 7.
        let n = 100_000;
        let (completions, _, _) = run_frames(0.5, n, 300, 3);
        let delivered: Vec<u32> = completions
            .iter()
            .filter(|c| c.delivered)
            .map(|c| c.attempts)
            .collect();
        let mean = delivered.iter().map(|&a| f64::from(a)).sum::<f64>() / delivered.len() as f64;
        let x: f64 = 0.5;
        let norm: f64 = (1..=7).map(|k| x.powi(k)).sum();
        let oracle: f64 = (1..=7).map(|k| k as f64 * x.powi(k)).sum::<f64>() / norm;
        assert!(
            (mean - oracle).abs() / oracle < 0.01,
            "mean {mean} vs oracle {oracle}"
        );
    }

    #[test]
    fn attempts_never_exceed_retry_limit() {
        let (completions, _, _) = run_frames(0.7, 2_000, 800, 4);
        assert!(completions.iter().all(|c| c.attempts <= 7));
        assert!(completions.iter().all(|c| c.attempts >= 1));
    }

    /// Hand trace with two frames: the first transmits immediately on the
    /// idle medium, the post-backoff delays the second. The sender logs the
    /// backoff it drew; the listener sees the same span as idle and both
    /// exchanges as other-users time.
    #[test]
    fn two_node_classification_trace() {
        // Reproduce the single post-backoff draw the sender will make.
        let mut stream = RngStream::derive(7, "backoff", 0);
        let slots = stream.uniform_int(0, 15);
        let backoff_us = slots * 9;
        let exchange = 326;
        let end = 2 * exchange + backoff_us;
        let mut ledger = StatsLedger::new(end);
        ledger.add_node();
        ledger.add_node();
        ledger.add_link();
        let timing = MacTimingParams::default();
        let mut medium = Medium::new(timing, 7);
        let ch = medium.add_channel();
        let tx = medium.add_mac(ch);
        let rx = medium.add_mac(ch);
        let link = medium.add_link(
            tx,
            LinkCondition {
                phy_rate_bps: 54_000_000,
                per_attempt_loss_prob: 0.0,
            },
        );
        let mut out = Vec::new();
        for seq in 0..2 {
            medium.enqueue(
                0,
                link,
                Frame {
                    flow: 0,
                    seq,
                    payload_bytes: 1500,
                    hop: 0,
                    kind: FrameKind::Data,
                },
                &mut ledger,
                &mut out,
            );
        }
        let mut engine: Engine<MediumEvent> = Engine::new();
        for (t, ev) in out.drain(..) {
            engine.schedule(t, ev).unwrap();
        }
        let mut comp = Vec::new();
        engine.run_until(end, |eng, t, ev| {
            let mut out = Vec::new();
            match ev {
                MediumEvent::BackoffExpire { channel, epoch } => {
                    medium.on_backoff_expire(t, channel, epoch, &mut ledger, &mut out)
                }
                MediumEvent::ExchangeEnd { channel } => {
                    medium.on_exchange_end(t, channel, &mut ledger, &mut out, &mut comp)
                }
            }
            for (t, ev) in out {
                eng.schedule(t, ev).unwrap();
            }
        });
        assert_eq!(comp.len(), 2);
        medium.flush_all(end, &mut ledger);
        let tx_stats = ledger.snapshot_and_reset(tx, end);
        let rx_stats = ledger.snapshot_and_reset(rx, end);
        assert_eq!(tx_stats.ledger.tx_us, 2 * exchange);
        assert_eq!(tx_stats.ledger.backoff_us, backoff_us);
        assert_eq!(tx_stats.ledger.idle_us, 0);
        assert_eq!(rx_stats.ledger.other_us, 2 * exchange);
        assert_eq!(rx_stats.ledger.idle_us, backoff_us);
        assert_eq!(rx_stats.ledger.tx_us + rx_stats.ledger.backoff_us, 0);
        assert_eq!(tx_stats.tx_bits, 24_000);
    }

    /// A frame arriving at an idle station with no pending counter starts its
    /// exchange at once: no backoff time, channel time fully accounted.
    #[test]
    fn idle_arrival_transmits_immediately() {
        let (completions, _, _) = run_frames(0.0, 1, 1500, 9);
        assert_eq!(completions.len(), 1);
        assert!(completions[0].delivered);
        assert_eq!(completions[0].attempts, 1);
    }
}
