//! Topology specs, traffic profiles, and scenario configuration.
//!
//! Topologies are written in a compact nomenclature: `g` is an 802.11g
//! wireless link, `a` an 802.11a wireless link, `w` a wired link, `AP` an
//! access point relaying between links, `dls` a direct link setup that
//! bypasses the preceding AP, and `Xn` imposes n Mbps of cross traffic.
//! Extras `ch=1,6` (per-wireless-hop channels) and `seed=42` may follow.
//!
//! Examples: `"g"`, `"g-AP-g X5"`, `"a-AP-w"`, `"g-AP-g-dls"`,
//! `"g-AP-g ch=1,6 seed=7"`.

use crate::medium::MacTimingParams;
use serde::Deserialize;
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("topology parse error at byte {pos}: {message}")]
pub struct ParseError {
    pub pos: usize,
    pub message: String,
}

fn err<T>(pos: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        pos,
        message: message.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    G,
    A,
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Band::G => write!(f, "g"),
            Band::A => write!(f, "a"),
        }
    }
}

/// One link of the resolved media path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathLink {
    Wireless { band: Band, channel: u16 },
    Wired,
}

/// A parsed topology: the media path source to destination, plus any cross
/// flows sharing the channel of the first wireless hop.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    tokens: Vec<String>,
    pub path: Vec<PathLink>,
    pub cross_mbps: Vec<f64>,
    pub channels: Option<Vec<u16>>,
    pub seed: Option<u64>,
}

impl Topology {
    pub fn wireless_hops(&self) -> usize {
        self.path
            .iter()
            .filter(|l| matches!(l, PathLink::Wireless { .. }))
            .count()
    }

    /// Channel of the first wireless hop; cross traffic contends there.
    pub fn first_wireless_channel(&self) -> Option<u16> {
        self.path.iter().find_map(|l| match l {
            PathLink::Wireless { channel, .. } => Some(*channel),
            PathLink::Wired => None,
        })
    }

    /// Canonical spelling: hops, then cross flows, then channels, then seed.
    pub fn unparse(&self) -> String {
        let mut s = self.tokens.join("-");
        for x in &self.cross_mbps {
            s.push_str(&format!(" X{x}"));
        }
        if let Some(ch) = &self.channels {
            let list: Vec<String> = ch.iter().map(|c| c.to_string()).collect();
            s.push_str(&format!(" ch={}", list.join(",")));
        }
        if let Some(seed) = self.seed {
            s.push_str(&format!(" seed={seed}"));
        }
        s
    }
}

pub fn parse_topology(spec: &str) -> Result<Topology, ParseError> {
    // Split into whitespace-separated words, keeping byte offsets.
    let mut words: Vec<(usize, &str)> = Vec::new();
    let mut offset = 0;
    for chunk in spec.split_whitespace() {
        let pos = spec[offset..].find(chunk).unwrap() + offset;
        words.push((pos, chunk));
        offset = pos + chunk.len();
    }
    if words.is_empty() {
        return err(0, "empty topology spec");
    }

    let (hops_pos, hops_str) = words[0];
    let mut tokens: Vec<(usize, String)> = Vec::new();
    let mut tok_offset = 0;
    for tok in hops_str.split('-') {
        let pos = hops_pos + tok_offset;
        if tok.is_empty() {
            return err(pos, "empty hop token");
        }
        tokens.push((pos, tok.to_string()));
        tok_offset += tok.len() + 1;
    }

    // Validate token order: link (AP link)* dls?
    #[derive(PartialEq)]
    enum Expect {
        Link,
        ApOrEnd,
    }
    let mut expect = Expect::Link;
    let mut path: Vec<PathLink> = Vec::new();
    let mut saw_dls = false;
    for (i, (pos, tok)) in tokens.iter().enumerate() {
        let last = i == tokens.len() - 1;
        match tok.as_str() {
            "g" | "a" | "w" => {
                if expect != Expect::Link {
                    return err(*pos, format!("unexpected link token '{tok}': expected AP or end"));
                }
                path.push(match tok.as_str() {
                    "g" => PathLink::Wireless {
                        band: Band::G,
                        channel: 1,
                    },
                    "a" => PathLink::Wireless {
                        band: Band::A,
                        channel: 1,
                    },
                    _ => PathLink::Wired,
                });
                expect = Expect::ApOrEnd;
            }
            "AP" => {
                if expect != Expect::ApOrEnd {
                    return err(*pos, "AP must follow a link");
                }
                if last {
                    return err(*pos, "AP cannot end a topology");
                }
                expect = Expect::Link;
            }
            "dls" => {
                if !last {
                    return err(*pos, "dls must be the final hop token");
                }
                if expect != Expect::ApOrEnd {
                    return err(*pos, "dls must follow a link");
                }
                // Rewrite the trailing wireless-AP-wireless pair into one
                // direct station-to-station hop.
                if path.len() < 2 {
                    return err(*pos, "dls requires a wireless-AP-wireless context");
                }
                let b = path.pop().unwrap();
                let a = path.pop().unwrap();
                match (a, b) {
                    (
                        PathLink::Wireless { band: ba, .. },
                        PathLink::Wireless { band: bb, .. },
                    ) => {
                        if ba != bb {
                            return err(*pos, "dls requires matching wireless bands");
                        }
                        path.push(PathLink::Wireless {
                            band: ba,
                            channel: 1,
                        });
                    }
                    _ => return err(*pos, "dls requires a wireless-AP-wireless context"),
                }
                saw_dls = true;
            }
            other => return err(*pos, format!("unknown hop token '{other}'")),
        }
    }
    if expect == Expect::Link {
        return err(hops_pos, "topology must end with a link");
    }
    let _ = saw_dls;

    let mut cross_mbps = Vec::new();
    let mut channels: Option<Vec<u16>> = None;
    let mut seed: Option<u64> = None;
    for &(pos, word) in &words[1..] {
        if let Some(rest) = word.strip_prefix('X') {
            let n: f64 = rest
                .parse()
                .map_err(|_| ParseError {
                    pos,
                    message: format!("cross-traffic rate 'X{rest}' is not numeric"),
                })?;
            if n <= 0.0 || !n.is_finite() {
                return err(pos, "cross-traffic rate must be positive");
            }
            cross_mbps.push(n);
        } else if let Some(rest) = word.strip_prefix("ch=") {
            let mut list = Vec::new();
            for item in rest.split(',') {
                let c: u16 = item.parse().map_err(|_| ParseError {
                    pos,
                    message: format!("channel '{item}' is not an integer"),
                })?;
                list.push(c);
            }
            channels = Some(list);
        } else if let Some(rest) = word.strip_prefix("seed=") {
            let s: u64 = rest.parse().map_err(|_| ParseError {
                pos,
                message: format!("seed '{rest}' is not an integer"),
            })?;
            seed = Some(s);
        } else {
            return err(pos, format!("unknown extra '{word}'"));
        }
    }

    // Assign channels to wireless hops in path order.
    if let Some(list) = &channels {
        let wireless: Vec<usize> = path
            .iter()
            .enumerate()
            .filter_map(|(i, l)| matches!(l, PathLink::Wireless { .. }).then_some(i))
            .collect();
        if list.len() != wireless.len() {
            return err(
                hops_pos,
                format!(
                    "ch= lists {} channels but the path has {} wireless hops",
                    list.len(),
                    wireless.len()
                ),
            );
        }
        for (idx, &i) in wireless.iter().enumerate() {
            if let PathLink::Wireless { channel, .. } = &mut path[i] {
                *channel = list[idx];
            }
        }
    }

    Ok(Topology {
        tokens: tokens.into_iter().map(|(_, t)| t).collect(),
        path,
        cross_mbps,
        channels,
        seed,
    })
}

/// Traffic shape of a flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrafficProfile {
    Cbr { rate_bps: f64 },
    Vbr { mean_bps: f64, burstiness: f64 },
    Saturating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    Unreliable,
    ReliableSimplified,
}

/// A traffic source description.
///
/// Rates and payload sizes are application-layer quantities; each datagram
/// gains `header_overhead_bytes` of protocol headers on its way down the
/// stack (the default is the MPEG2-TS-over-UDP packing: 7 x 188-byte TS
/// packets per datagram plus 80 bytes of headers).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSpec {
    pub transport: Transport,
    pub profile: TrafficProfile,
    pub datagram_payload_bytes: u32,
    pub header_overhead_bytes: u32,
    pub start_s: f64,
    pub stop_s: Option<f64>,
}

impl FlowSpec {
    pub fn cbr(rate_bps: f64) -> Self {
        assert!(rate_bps > 0.0);
        FlowSpec {
            transport: Transport::Unreliable,
            profile: TrafficProfile::Cbr { rate_bps },
            datagram_payload_bytes: 1316,
            header_overhead_bytes: 80,
            start_s: 0.0,
            stop_s: None,
        }
    }

    pub fn saturating() -> Self {
        FlowSpec {
            transport: Transport::Unreliable,
            profile: TrafficProfile::Saturating,
            datagram_payload_bytes: 1316,
            header_overhead_bytes: 80,
            start_s: 0.0,
            stop_s: None,
        }
    }

    /// Bytes each datagram occupies on the wire.
    pub fn wire_bytes(&self) -> u32 {
        self.datagram_payload_bytes + self.header_overhead_bytes
    }

    /// Ratio of wire bits to application bits; the adaptation loop divides
    /// its advertised rate by this factor when feeding the source.
    pub fn overhead_factor(&self) -> f64 {
        f64::from(self.wire_bytes()) / f64::from(self.datagram_payload_bytes)
    }
}

/// Simplified reliable-transport knobs: windowed ARQ with batched ACKs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReliableParams {
    /// Maximum unacknowledged datagrams in flight.
    pub window: usize,
    /// Data datagrams per ACK.
    pub ack_every: u32,
    pub ack_payload_bytes: u32,
    /// Retransmission timer as a multiple of the smoothed delivery delay.
    pub timer_factor: f64,
    pub initial_srtt_us: f64,
}

impl Default for ReliableParams {
    fn default() -> Self {
        ReliableParams {
            window: 32,
            ack_every: 2,
            ack_payload_bytes: 64,
            timer_factor: 4.0,
            initial_srtt_us: 20_000.0,
        }
    }
}

/// Default condition of every wireless link in the scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WirelessDefaults {
    pub phy_rate_bps: u64,
    pub per_attempt_loss_prob: f64,
}

impl Default for WirelessDefaults {
    fn default() -> Self {
        WirelessDefaults {
            phy_rate_bps: 54_000_000,
            per_attempt_loss_prob: 0.0,
        }
    }
}

/// A cross-traffic flow: an unrelated CBR stream on the media's channel.
/// Background traffic defaults to small (512-byte) datagrams.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossFlow {
    pub rate_bps: f64,
    pub payload_bytes: u32,
    pub start_s: f64,
    pub stop_s: Option<f64>,
}

impl CrossFlow {
    pub fn at_rate(rate_bps: f64) -> Self {
        CrossFlow {
            rate_bps,
            payload_bytes: 512,
            start_s: 0.0,
            stop_s: None,
        }
    }
}

/// A piecewise-constant change to one wireless link's condition. Changes are
/// keyed by the media path's wireless-hop index (0-based); values left unset
/// keep the previous segment's value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleChange {
    pub wireless_hop: usize,
    pub at_s: f64,
    pub phy_rate_bps: Option<u64>,
    pub loss_prob: Option<f64>,
}

/// Everything needed to build and run one network simulation.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub topology: Topology,
    pub wireless: WirelessDefaults,
    pub wired_rate_bps: u64,
    pub media: FlowSpec,
    pub cross: Vec<CrossFlow>,
    pub schedule: Vec<ScheduleChange>,
    pub reliable: ReliableParams,
    pub timing: MacTimingParams,
    pub sniffer_loss_prob: f64,
}

impl Scenario {
    pub fn new(topology: Topology) -> Self {
        let cross = topology
            .cross_mbps
            .iter()
            .map(|&mbps| CrossFlow::at_rate(mbps * 1e6))
            .collect();
        Scenario {
            topology,
            wireless: WirelessDefaults::default(),
            wired_rate_bps: 100_000_000,
            media: FlowSpec::cbr(4_000_000.0),
            cross,
            schedule: Vec::new(),
            reliable: ReliableParams::default(),
            timing: MacTimingParams::default(),
            sniffer_loss_prob: 0.0,
        }
    }

    pub fn from_spec(spec: &str) -> Result<Self, ParseError> {
        Ok(Scenario::new(parse_topology(spec)?))
    }
}

#[derive(Debug, Error)]
pub enum ScenarioFileError {
    #[error("cannot read scenario file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid scenario file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Topology(#[from] ParseError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// On-disk scenario description (TOML).
#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub topology: String,
    pub seed: Option<u64>,
    pub duration_s: Option<f64>,
    pub window_ms: Option<f64>,
    #[serde(default)]
    pub wireless: WirelessSection,
    #[serde(default)]
    pub wired: WiredSection,
    #[serde(default)]
    pub media: MediaSection,
    #[serde(default)]
    pub cross: Vec<CrossSection>,
    #[serde(default)]
    pub schedule: Vec<ScheduleSection>,
    #[serde(default)]
    pub estimators: EstimatorSection,
    #[serde(default)]
    pub adaptation: AdaptationSection,
    pub sniffer_loss: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct WirelessSection {
    pub phy_mbps: Option<u64>,
    pub loss: Option<f64>,
    pub rts_cts: Option<bool>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct WiredSection {
    pub rate_mbps: Option<u64>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MediaSection {
    /// "unreliable" or "reliable"
    pub transport: Option<String>,
    /// "cbr", "vbr", or "saturating"
    pub profile: Option<String>,
    pub rate_mbps: Option<f64>,
    pub burstiness: Option<f64>,
    pub payload_bytes: Option<u32>,
    pub header_overhead_bytes: Option<u32>,
    pub start_s: Option<f64>,
    pub stop_s: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossSection {
    pub rate_mbps: f64,
    pub payload_bytes: Option<u32>,
    pub start_s: Option<f64>,
    pub stop_s: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub wireless_hop: usize,
    pub at_s: f64,
    pub phy_mbps: Option<u64>,
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    pub p: Option<f64>,
    pub f: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AdaptationSection {
    pub rho: Option<f64>,
    pub beta: Option<f64>,
    pub idle_min_threshold_ms: Option<f64>,
    pub min_rate_diff_kbps: Option<f64>,
    pub packet_proc_delay_us: Option<u64>,
    pub app_overhead_factor: Option<f64>,
    pub min_rate_mbps: Option<f64>,
    pub max_rate_mbps: Option<f64>,
    pub initial_rate_mbps: Option<f64>,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self, ScenarioFileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioFileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(toml::from_str(&text)?)
    }

    /// Resolve the file into a runnable [`Scenario`].
    pub fn to_scenario(&self) -> Result<Scenario, ScenarioFileError> {
        let topology = parse_topology(&self.topology)?;
        let mut scenario = Scenario::new(topology);
        if let Some(mbps) = self.wireless.phy_mbps {
            scenario.wireless.phy_rate_bps = mbps * 1_000_000;
        }
        if let Some(loss) = self.wireless.loss {
            if !(0.0..1.0).contains(&loss) {
                return Err(ScenarioFileError::Invalid(format!(
                    "wireless loss {loss} outside [0, 1)"
                )));
            }
            scenario.wireless.per_attempt_loss_prob = loss;
        }
        if let Some(rts) = self.wireless.rts_cts {
            scenario.timing.rts_cts = rts;
        }
        if let Some(mbps) = self.wired.rate_mbps {
            scenario.wired_rate_bps = mbps * 1_000_000;
        }

        let m = &self.media;
        if let Some(t) = &m.transport {
            scenario.media.transport = match t.as_str() {
                "unreliable" => Transport::Unreliable,
                "reliable" => Transport::ReliableSimplified,
                other => {
                    return Err(ScenarioFileError::Invalid(format!(
                        "unknown transport '{other}'"
                    )))
                }
            };
        }
        let rate = m.rate_mbps.map(|r| r * 1e6);
        scenario.media.profile = match m.profile.as_deref() {
            None | Some("cbr") => TrafficProfile::Cbr {
                rate_bps: rate.unwrap_or(4e6),
            },
            Some("vbr") => TrafficProfile::Vbr {
                mean_bps: rate.unwrap_or(4e6),
                burstiness: m.burstiness.unwrap_or(2.0),
            },
            Some("saturating") => TrafficProfile::Saturating,
            Some(other) => {
                return Err(ScenarioFileError::Invalid(format!(
                    "unknown traffic profile '{other}'"
                )))
            }
        };
        if let Some(b) = m.payload_bytes {
            scenario.media.datagram_payload_bytes = b;
        }
        if let Some(b) = m.header_overhead_bytes {
            scenario.media.header_overhead_bytes = b;
        }
        if let Some(s) = m.start_s {
            scenario.media.start_s = s;
        }
        scenario.media.stop_s = m.stop_s;

        for c in &self.cross {
            scenario.cross.push(CrossFlow {
                rate_bps: c.rate_mbps * 1e6,
                payload_bytes: c.payload_bytes.unwrap_or(512),
                start_s: c.start_s.unwrap_or(0.0),
                stop_s: c.stop_s,
            });
        }
        for s in &self.schedule {
            if s.wireless_hop >= scenario.topology.wireless_hops() {
                return Err(ScenarioFileError::Invalid(format!(
                    "schedule refers to wireless hop {} but the path has {}",
                    s.wireless_hop,
                    scenario.topology.wireless_hops()
                )));
            }
            scenario.schedule.push(ScheduleChange {
                wireless_hop: s.wireless_hop,
                at_s: s.at_s,
                phy_rate_bps: s.phy_mbps.map(|m| m * 1_000_000),
                loss_prob: s.loss,
            });
        }
        if let Some(p) = self.sniffer_loss {
            scenario.sniffer_loss_prob = p;
        }
        Ok(scenario)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_wireless_hop() {
        let t = parse_topology("g").unwrap();
        assert_eq!(t.path, vec![PathLink::Wireless {
            band: Band::G,
            channel: 1
        }]);
        assert!(t.cross_mbps.is_empty());
        assert_eq!(t.wireless_hops(), 1);
    }

    #[test]
    fn two_hop_with_cross_traffic() {
        let t = parse_topology("g-AP-g X5").unwrap();
        assert_eq!(t.path.len(), 2);
        assert_eq!(t.cross_mbps, vec![5.0]);
        assert_eq!(t.wireless_hops(), 2);
    }

    #[test]
    fn wireless_to_wired_egress() {
        let t = parse_topology("a-AP-w").unwrap();
        assert_eq!(t.path, vec![
            PathLink::Wireless {
                band: Band::A,
                channel: 1
            },
            PathLink::Wired
        ]);
        assert_eq!(t.wireless_hops(), 1);
    }

    #[test]
    fn dls_rewrites_to_direct_hop() {
        let t = parse_topology("g-AP-g-dls").unwrap();
        assert_eq!(t.path, vec![PathLink::Wireless {
            band: Band::G,
            channel: 1
        }]);
        assert_eq!(t.unparse(), "g-AP-g-dls");
    }

    #[test]
    fn dls_without_ap_is_rejected_with_position() {
        let e = parse_topology("g-dls").unwrap_err();
        assert_eq!(e.pos, 2);
        assert!(e.message.contains("dls"));
    }

    #[test]
    fn channels_assign_per_wireless_hop() {
        let t = parse_topology("g-AP-g ch=1,6").unwrap();
        assert_eq!(t.path, vec![
            PathLink::Wireless {
                band: Band::G,
                channel: 1
            },
            PathLink::Wireless {
                band: Band::G,
                channel: 6
            },
        ]);
    }

    #[test]
    fn channel_count_mismatch_rejected() {
        assert!(parse_topology("g ch=1,6").is_err());
    }

    #[test]
    fn non_numeric_cross_rate_rejected_with_position() {
        let e = parse_topology("g Xfive").unwrap_err();
        assert_eq!(e.pos, 2);
        assert!(e.message.contains("not numeric"));
    }

    #[test]
    fn rejection_corpus_has_positions() {
        for bad in [
            "",
            "AP",
            "g-",
            "-g",
            "g-AP",
            "g-g",
            "q",
            "g-AP-q",
            "g foo",
            "g X-3",
            "g seed=abc",
            "g ch=x",
            "w-AP-w-dls",
            "g-AP-a-dls",
            "dls",
        ] {
            let e = parse_topology(bad).unwrap_err();
            assert!(e.pos <= bad.len(), "bad position for {bad:?}: {e}");
        }
    }

    #[test]
    fn parse_unparse_round_trip() {
        for (spec, canonical) in [
            ("g", "g"),
            ("g-AP-g", "g-AP-g"),
            ("a-AP-w", "a-AP-w"),
            ("g-AP-g-dls", "g-AP-g-dls"),
            ("g-AP-g  X5", "g-AP-g X5"),
            ("g X5 X2.5", "g X5 X2.5"),
            ("g-AP-g ch=1,6 seed=42", "g-AP-g ch=1,6 seed=42"),
            ("g seed=7 X5", "g X5 seed=7"),
            ("w-AP-g", "w-AP-g"),
            ("g-AP-g-AP-g", "g-AP-g-AP-g"),
        ] {
            let t = parse_topology(spec).unwrap();
            assert_eq!(t.unparse(), canonical, "for {spec:?}");
            // Stability: re-parsing the canonical form is a fixed point.
            let t2 = parse_topology(&t.unparse()).unwrap();
            assert_eq!(t2.unparse(), canonical);
            assert_eq!(t2.path, t.path);
        }
    }

    #[test]
    fn seed_extra_is_parsed() {
        let t = parse_topology("g seed=42").unwrap();
        assert_eq!(t.seed, Some(42));
    }

    #[test]
    fn scenario_file_round_trip() {
        let text = r#"
topology = "g-AP-g X5"
seed = 7
duration_s = 30.0
window_ms = 200.0

[wireless]
phy_mbps = 54
loss = 0.01

[media]
transport = "unreliable"
profile = "cbr"
rate_mbps = 4.0
payload_bytes = 1316

[[cross]]
rate_mbps = 2.0
start_s = 10.0

[[schedule]]
wireless_hop = 0
at_s = 15.0
loss = 0.05

[estimators]
p = 0.4

[adaptation]
rho = 0.8
"#;
        let file: ScenarioFile = toml::from_str(text).unwrap();
        let scenario = file.to_scenario().unwrap();
        assert_eq!(scenario.topology.wireless_hops(), 2);
        // X5 from the topology plus the explicit section.
        assert_eq!(scenario.cross.len(), 2);
        assert_eq!(scenario.cross[0].rate_bps, 5e6);
        assert_eq!(scenario.cross[1].rate_bps, 2e6);
        assert_eq!(scenario.wireless.per_attempt_loss_prob, 0.01);
        assert_eq!(scenario.schedule.len(), 1);
        assert_eq!(file.estimators.p, Some(0.4));
    }

    #[test]
    fn scenario_file_rejects_unknown_fields() {
        let text = "topology = \"g\"\nbogus = 1\n";
        assert!(toml::from_str::<ScenarioFile>(text).is_err());
    }
}
