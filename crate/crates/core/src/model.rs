//! Core domain types shared by every other module: fuzzy labels, node and
//! path identities, flows, and the flat scenario configuration.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path as FsPath;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Four-valued crisp fuzzy label, ordered `A < B < C < D` (worst to best).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FuzzyLabel {
    A,
    B,
    C,
    D,
}

impl FuzzyLabel {
    pub const ALL: [FuzzyLabel; 4] = [FuzzyLabel::A, FuzzyLabel::B, FuzzyLabel::C, FuzzyLabel::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<FuzzyLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn as_char(self) -> char {
        match self {
            FuzzyLabel::A => 'a',
            FuzzyLabel::B => 'b',
            FuzzyLabel::C => 'c',
            FuzzyLabel::D => 'd',
        }
    }
}

impl fmt::Display for FuzzyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for FuzzyLabel {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "a" => Ok(FuzzyLabel::A),
            "b" => Ok(FuzzyLabel::B),
            "c" => Ok(FuzzyLabel::C),
            "d" => Ok(FuzzyLabel::D),
            other => Err(ModelError::UnknownLabel(other.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("empty label list")]
    EmptyList,
    #[error("unknown fuzzy label {0:?}")]
    UnknownLabel(String),
    #[error("path needs at least two nodes")]
    PathTooShort,
    #[error("path visits node {0} twice")]
    RepeatedNode(NodeId),
}

/// Minimum label of a non-empty list; a route is only as good as its worst link.
pub fn label_min(labels: &[FuzzyLabel]) -> Result<FuzzyLabel, ModelError> {
    labels.iter().copied().min().ok_or(ModelError::EmptyList)
}

/// Dense node index, `0..node_count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ordered, loop-free node sequence from source to destination.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Path(Vec<NodeId>);

impl Path {
    pub fn new(nodes: Vec<NodeId>) -> Result<Path, ModelError> {
        if nodes.len() < 2 {
            return Err(ModelError::PathTooShort);
        }
        let mut seen = BTreeSet::new();
        for &n in &nodes {
            if !seen.insert(n) {
                return Err(ModelError::RepeatedNode(n));
            }
        }
        Ok(Path(nodes))
    }

    pub fn from_indices(indices: &[usize]) -> Result<Path, ModelError> {
        Path::new(indices.iter().copied().map(NodeId).collect())
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.0
    }

    pub fn hop_count(&self) -> usize {
        self.0.len() - 1
    }

    pub fn src(&self) -> NodeId {
        self.0[0]
    }

    pub fn dst(&self) -> NodeId {
        self.0[self.0.len() - 1]
    }

    /// Directed hops `(upstream, downstream)` in path order.
    pub fn hops(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.0.windows(2).map(|w| (w[0], w[1]))
    }

    /// Undirected links, each normalized so the smaller id comes first.
    pub fn links(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.hops()
            .map(|(a, b)| if a <= b { (a, b) } else { (b, a) })
    }

    /// Intermediate relays, excluding both endpoints.
    pub fn relays(&self) -> &[NodeId] {
        &self.0[1..self.0.len() - 1]
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.0.contains(&node)
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, n) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{n}")?;
        }
        Ok(())
    }
}

/// One-way datagram stream between two nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Flow {
    pub src: NodeId,
    pub dst: NodeId,
    pub total_packets: u64,
    /// packets/second
    pub offered_rate: f64,
    /// bytes
    pub packet_size: u32,
    /// seconds
    pub start_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Dbmf,
    SinglePath,
    Mmre,
    Zd,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [
        Protocol::Dbmf,
        Protocol::SinglePath,
        Protocol::Mmre,
        Protocol::Zd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Dbmf => "dbmf",
            Protocol::SinglePath => "single_path",
            Protocol::Mmre => "mmre",
            Protocol::Zd => "zd",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown protocol {s:?}"))
    }
}

fn default_path_count() -> usize {
    3
}

fn default_lp_cap() -> f64 {
    1000.0
}

fn default_control_fraction() -> f64 {
    0.1
}

/// Full description of one simulation run. Units are SI unless noted;
/// power is an arbitrary linear unit shared by transmitters and receivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub node_count: usize,
    pub area_width: f64,
    pub area_height: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub pause_time: f64,
    pub radio_range_min: f64,
    pub radio_range_max: f64,
    pub trans_pow: f64,
    pub friis_k: f64,
    pub friis_q: u32,
    /// Seconds between two Hello broadcasts of the same node.
    pub hello_interval: f64,
    /// RSS samples kept per neighbor.
    pub rss_window: usize,
    pub sim_duration: f64,
    #[serde(default)]
    pub flows: Vec<Flow>,
    pub protocol: Protocol,
    /// Number of simultaneously used paths for multipath strategies.
    #[serde(default = "default_path_count")]
    pub path_count: usize,
    /// Packets.
    pub queue_capacity: usize,
    /// Joules.
    pub energy_initial: f64,
    /// Joules per received data packet.
    pub energy_recv_per_packet: f64,
    /// Joules per forwarded data packet.
    pub energy_send_per_packet: f64,
    /// Control packet cost as a fraction of the data packet cost.
    #[serde(default = "default_control_fraction")]
    pub control_energy_fraction: f64,
    /// packets/second
    pub max_arrival_rate: f64,
    /// packets/second; also the queue service rate.
    pub max_departure_rate: f64,
    /// Saturation for the mobility link prediction, seconds.
    #[serde(default = "default_lp_cap")]
    pub lp_cap: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            node_count: 50,
            area_width: 500.0,
            area_height: 500.0,
            speed_min: 10.0,
            speed_max: 10.0,
            pause_time: 1.0,
            radio_range_min: 50.0,
            radio_range_max: 50.0,
            trans_pow: 1.0,
            friis_k: 1.0,
            friis_q: 2,
            hello_interval: 1.0,
            rss_window: 4,
            sim_duration: 100.0,
            flows: vec![Flow {
                src: NodeId(0),
                dst: NodeId(49),
                total_packets: 2000,
                offered_rate: 20.0,
                packet_size: 512,
                start_time: 5.0,
            }],
            protocol: Protocol::Dbmf,
            path_count: default_path_count(),
            queue_capacity: 50,
            energy_initial: 100.0,
            energy_recv_per_packet: 0.002,
            energy_send_per_packet: 0.004,
            control_energy_fraction: default_control_fraction(),
            max_arrival_rate: 100.0,
            max_departure_rate: 50.0,
            lp_cap: default_lp_cap(),
            seed: 1,
        }
    }
}

/// A single violated constraint, e.g. `("friis_q", "must be 2 or 3")`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub constraint: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.constraint)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse scenario: {0}")]
    Parse(String),
}

impl ConfigError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ConfigError::Invalid(v) => v,
            _ => &[],
        }
    }
}

impl ScenarioConfig {
    /// Checks every invariant and reports all violations at once.
    pub fn validate(self) -> Result<ScenarioConfig, ConfigError> {
        let mut v = Vec::new();
        let mut fail = |field: &str, constraint: &str| {
            v.push(Violation {
                field: field.to_string(),
                constraint: constraint.to_string(),
            })
        };
        let positive = [
            ("area_width", self.area_width),
            ("area_height", self.area_height),
            ("speed_min", self.speed_min),
            ("speed_max", self.speed_max),
            ("pause_time", self.pause_time),
            ("radio_range_min", self.radio_range_min),
            ("radio_range_max", self.radio_range_max),
            ("trans_pow", self.trans_pow),
            ("friis_k", self.friis_k),
            ("hello_interval", self.hello_interval),
            ("sim_duration", self.sim_duration),
            ("energy_initial", self.energy_initial),
            ("energy_recv_per_packet", self.energy_recv_per_packet),
            ("energy_send_per_packet", self.energy_send_per_packet),
            ("control_energy_fraction", self.control_energy_fraction),
            ("max_arrival_rate", self.max_arrival_rate),
            ("max_departure_rate", self.max_departure_rate),
            ("lp_cap", self.lp_cap),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                fail(name, "must be finite and > 0");
            }
        }
        if self.node_count < 2 {
            fail("node_count", "must be >= 2");
        }
        if self.speed_min > self.speed_max {
            fail("speed_min", "must be <= speed_max");
        }
        if self.radio_range_min > self.radio_range_max {
            fail("radio_range_min", "must be <= radio_range_max");
        }
        if !matches!(self.friis_q, 2 | 3) {
            fail("friis_q", "must be 2 or 3");
        }
        if self.rss_window < 2 {
            fail("rss_window", "must be >= 2");
        }
        if self.path_count < 1 {
            fail("path_count", "must be >= 1");
        }
        if self.queue_capacity < 1 {
            fail("queue_capacity", "must be >= 1");
        }
        for (i, flow) in self.flows.iter().enumerate() {
            let field = |name: &str| format!("flows[{i}].{name}");
            if flow.src.0 >= self.node_count {
                fail(&field("src"), "must be < node_count");
            }
            if flow.dst.0 >= self.node_count {
                fail(&field("dst"), "must be < node_count");
            }
            if flow.src == flow.dst {
                fail(&field("dst"), "must differ from src");
            }
            if flow.total_packets < 1 {
                fail(&field("total_packets"), "must be >= 1");
            }
            if !(flow.offered_rate.is_finite() && flow.offered_rate > 0.0) {
                fail(&field("offered_rate"), "must be finite and > 0");
            }
            if flow.packet_size < 1 {
                fail(&field("packet_size"), "must be >= 1");
            }
            if !(flow.start_time.is_finite() && flow.start_time >= 0.0) {
                fail(&field("start_time"), "must be finite and >= 0");
            }
        }
        if v.is_empty() {
            Ok(self)
        } else {
            Err(ConfigError::Invalid(v))
        }
    }

    /// Parses a TOML scenario document. Unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<ScenarioConfig, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config always serializes")
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<ScenarioConfig, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }
}
