//! Link-life estimation: mobility-based prediction (LPM), energy-based
//! prediction (LPE), the reverse drop ratio (DPR), the crisp label scales,
//! and the two rule tables that fuse them into a per-link label.
//!
//! The logistic squash used for both LPM and LPE is
//! `(1 - e^-x) / (1 + e^-x) = tanh(x / 2)`, which maps `[0, inf)` onto `[0, 1)`
//! with 0 meaning worst and values near 1 meaning best.

use std::collections::VecDeque;
use std::fmt::Write as _;

use thiserror::Error;

use crate::mobility::{distance_from_rss, RadioParams};
use crate::model::{label_min, FuzzyLabel, ModelError};

/// Relative speeds at or below this are treated as static or approaching (m/s).
pub const MOBILITY_EPSILON: f64 = 1e-6;

/// Fraction of initial energy a node must keep to stay operational.
pub const RESERVE_FRACTION: f64 = 0.4;

/// A gap above this many Hello intervals evicts the RSS window.
pub const MISSED_HELLO_FACTOR: f64 = 1.5;

/// Largest f64 strictly below 1.0.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum LinkLifeError {
    #[error("need at least 2 RSS samples, have {0}")]
    InsufficientSamples(usize),
    #[error("squash input must be >= 0, got {0}")]
    NegativeInput(f64),
    #[error("aggregate {which} rate {rate} exceeds capacity {max}")]
    CapacityExceeded {
        which: &'static str,
        rate: f64,
        max: f64,
    },
    #[error("departed+queued {departed} exceeds arrived {arrived}")]
    InconsistentCounters { arrived: u64, departed: u64 },
    #[error("value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("RSS sample at {at} is not after the previous one at {last}")]
    NonMonotonicSample { at: f64, last: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

// ---------------------------------------------------------------------------
// Mobility
// ---------------------------------------------------------------------------

/// Received-power history for one neighbor, newest last.
#[derive(Debug, Clone, PartialEq)]
pub struct RssWindow {
    samples: VecDeque<(f64, f64)>,
    capacity: usize,
    intv: f64,
}

impl RssWindow {
    pub fn new(capacity: usize, intv: f64) -> RssWindow {
        RssWindow {
            samples: VecDeque::with_capacity(capacity),
            capacity,
            intv,
        }
    }

    /// Appends a sample. A missed Hello (gap above 1.5 intervals) clears the
    /// stale history first; the oldest sample is evicted past capacity.
    pub fn push(&mut self, at: f64, rec_pow: f64) -> Result<(), LinkLifeError> {
        if let Some(&(last, _)) = self.samples.back() {
            if at <= last {
                return Err(LinkLifeError::NonMonotonicSample { at, last });
            }
            if at - last > MISSED_HELLO_FACTOR * self.intv {
                self.samples.clear();
            }
        }
        self.samples.push_back((at, rec_pow));
        while self.samples.len() > self.capacity {
            self.samples.pop_front();
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn intv(&self) -> f64 {
        self.intv
    }

    pub fn last_time(&self) -> Option<f64> {
        self.samples.back().map(|s| s.0)
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.samples.iter().copied()
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MobilityEstimate {
    pub distances: Vec<f64>,
    pub current_distance: f64,
    /// m/s, positive when the neighbor recedes.
    pub avg_rel_mob: f64,
    /// seconds
    pub lp: f64,
    pub lpm: f64,
}

/// Endpoint slope of the distance series implied by the window:
/// `(d_last - d_first) / ((m - 1) * intv)`, plus the latest distance.
pub fn relative_mobility(
    window: &RssWindow,
    radio: &RadioParams,
) -> Result<(f64, f64), LinkLifeError> {
    let m = window.len();
    if m < 2 {
        return Err(LinkLifeError::InsufficientSamples(m));
    }
    let (_, first) = window.samples[0];
    let (_, last) = window.samples[m - 1];
    let d_first = distance_from_rss(radio, first).map_err(|_| LinkLifeError::OutOfRange(first))?;
    let d_last = distance_from_rss(radio, last).map_err(|_| LinkLifeError::OutOfRange(last))?;
    Ok(((d_last - d_first) / ((m - 1) as f64 * window.intv), d_last))
}

/// Seconds until the neighbor leaves range at the current relative speed,
/// saturating at `lp_cap` and floored at 0.
pub fn link_prediction(rad_rng: f64, current_distance: f64, avg_rel_mob: f64, lp_cap: f64) -> f64 {
    if avg_rel_mob <= MOBILITY_EPSILON {
        return lp_cap;
    }
    ((rad_rng - current_distance) / avg_rel_mob).clamp(0.0, lp_cap)
}

/// Logistic squash onto `[0, 1)`.
pub fn squash(x: f64) -> Result<f64, LinkLifeError> {
    if x.is_nan() || x < 0.0 {
        return Err(LinkLifeError::NegativeInput(x));
    }
    let e = (-x).exp();
    Ok(((1.0 - e) / (1.0 + e)).min(BELOW_ONE))
}

/// `1 - squash(x)` computed without cancellation, so it stays strictly
/// decreasing long after `squash` itself has rounded up against 1.
pub fn squash_margin(x: f64) -> Result<f64, LinkLifeError> {
    if x.is_nan() || x < 0.0 {
        return Err(LinkLifeError::NegativeInput(x));
    }
    let e = (-x).exp();
    Ok(2.0 * e / (1.0 + e))
}

pub fn estimate_mobility(
    window: &RssWindow,
    radio: &RadioParams,
    rad_rng: f64,
    lp_cap: f64,
) -> Result<MobilityEstimate, LinkLifeError> {
    let (avg_rel_mob, current_distance) = relative_mobility(window, radio)?;
    let distances = window
        .samples()
        .map(|(_, p)| distance_from_rss(radio, p).map_err(|_| LinkLifeError::OutOfRange(p)))
        .collect::<Result<Vec<_>, _>>()?;
    let lp = link_prediction(rad_rng, current_distance, avg_rel_mob, lp_cap);
    Ok(MobilityEstimate {
        distances,
        current_distance,
        avg_rel_mob,
        lp,
        lpm: squash(lp)?,
    })
}

// ---------------------------------------------------------------------------
// Energy
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyProfile {
    /// J
    pub initial_energy: f64,
    /// Cumulative consumption so far, J.
    pub consumed_energy: f64,
    /// J per received data packet.
    pub recv_cost: f64,
    /// J per forwarded data packet.
    pub send_cost: f64,
    /// pkt/s
    pub max_arrival: f64,
    /// pkt/s
    pub max_departure: f64,
}

impl EnergyProfile {
    pub fn remaining(&self) -> f64 {
        self.initial_energy - self.consumed_energy
    }

    /// Live operability: at least 40% of the initial charge left.
    pub fn above_reserve(&self) -> bool {
        self.remaining() >= RESERVE_FRACTION * self.initial_energy
    }

    /// Seconds a node spends per packet; the reciprocal of its service rate.
    pub fn per_packet_time(&self) -> f64 {
        1.0 / self.max_departure
    }
}

/// Per-node traffic view with one arrival and departure rate per path the
/// node participates in.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrafficState {
    pub per_path_arrival: Vec<f64>,
    pub per_path_departure: Vec<f64>,
    pub arrived_total: u64,
    pub departed_total: u64,
    pub dropped_total: u64,
}

/// Summed arrival and departure rates over every path through the node,
/// checked against the node's capacities.
pub fn aggregate_rates(
    traffic: &TrafficState,
    profile: &EnergyProfile,
) -> Result<(f64, f64), LinkLifeError> {
    let arr: f64 = traffic.per_path_arrival.iter().sum();
    let dept: f64 = traffic.per_path_departure.iter().sum();
    if arr > profile.max_arrival {
        return Err(LinkLifeError::CapacityExceeded {
            which: "arrival",
            rate: arr,
            max: profile.max_arrival,
        });
    }
    if dept > profile.max_departure {
        return Err(LinkLifeError::CapacityExceeded {
            which: "departure",
            rate: dept,
            max: profile.max_departure,
        });
    }
    Ok((arr, dept))
}

/// J/s spent forwarding at the given departure rate.
pub fn transmission_energy_rate(profile: &EnergyProfile, data_dept: f64) -> f64 {
    profile.send_cost * data_dept
}

/// Worst-case J/s spent receiving, at full arrival capacity.
pub fn reception_energy_rate(profile: &EnergyProfile) -> f64 {
    profile.recv_cost * profile.max_arrival
}

pub fn active_time(total_packets: u64, per_packet_time: f64) -> f64 {
    total_packets as f64 * per_packet_time
}

pub fn total_energy_consumption(active_time: f64, trans_rate: f64, recv_rate: f64) -> f64 {
    active_time * (trans_rate + recv_rate)
}

/// `0.6 * Eng - C_Eng - projected >= 0`, with `C_Eng` the consumption so far.
pub fn is_operational(profile: &EnergyProfile, projected_consumption: f64) -> bool {
    (1.0 - RESERVE_FRACTION) * profile.initial_energy
        - profile.consumed_energy
        - projected_consumption
        >= 0.0
}

/// Energy-limited link duration: the shorter active time when both ends
/// stay operational, zero otherwise.
pub fn link_energy_duration(at_j: f64, op_j: bool, at_k: f64, op_k: bool) -> f64 {
    if op_j && op_k {
        at_j.min(at_k)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyEstimate {
    pub trans_rate: f64,
    pub recv_rate: f64,
    pub per_packet_time: f64,
    pub active_time: f64,
    pub total_consumption: f64,
    pub operational: bool,
    pub le: f64,
    pub lpe: f64,
}

impl EnergyEstimate {
    /// Per-node part of the estimate. `le` and `lpe` stay zero until paired
    /// with the other end of a link.
    pub fn for_node(
        profile: &EnergyProfile,
        traffic: &TrafficState,
        total_packets: u64,
    ) -> Result<EnergyEstimate, LinkLifeError> {
        let (_, dept) = aggregate_rates(traffic, profile)?;
        let trans_rate = transmission_energy_rate(profile, dept);
        let recv_rate = reception_energy_rate(profile);
        let per_packet_time = profile.per_packet_time();
        let active = active_time(total_packets, per_packet_time);
        let total = total_energy_consumption(active, trans_rate, recv_rate);
        Ok(EnergyEstimate {
            trans_rate,
            recv_rate,
            per_packet_time,
            active_time: active,
            total_consumption: total,
            operational: is_operational(profile, total),
            le: 0.0,
            lpe: 0.0,
        })
    }

    /// Fills `le`/`lpe` on both ends of the link `(j, k)`.
    pub fn pair(j: &mut EnergyEstimate, k: &mut EnergyEstimate) {
        let le = link_energy_duration(j.active_time, j.operational, k.active_time, k.operational);
        let lpe = squash(le).expect("link energy duration is non-negative");
        for e in [j, k] {
            e.le = le;
            e.lpe = lpe;
        }
    }
}

// ---------------------------------------------------------------------------
// Drops
// ---------------------------------------------------------------------------

/// Reverse drop ratio: 1 means nothing dropped, 0 means everything dropped.
/// No arrivals means no evidence of loss, so the ratio is 1.
pub fn drop_ratio(arrived_total: u64, departed_plus_queued: u64) -> Result<f64, LinkLifeError> {
    if departed_plus_queued > arrived_total {
        return Err(LinkLifeError::InconsistentCounters {
            arrived: arrived_total,
            departed: departed_plus_queued,
        });
    }
    if arrived_total == 0 {
        return Ok(1.0);
    }
    let drops = arrived_total - departed_plus_queued;
    Ok(1.0 - drops as f64 / arrived_total as f64)
}

// ---------------------------------------------------------------------------
// Crisp labels and rule tables
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Lpm,
    Lpe,
    Dpr,
    LinkLife,
}

impl Scale {
    pub fn breakpoints(self) -> [f64; 3] {
        match self {
            Scale::Lpe => [0.40, 0.60, 0.80],
            Scale::Lpm | Scale::Dpr | Scale::LinkLife => [0.25, 0.50, 0.75],
        }
    }
}

/// Half-open `[lo, hi)` bins, last bin closed at 1.
pub fn label_of(value: f64, scale: Scale) -> Result<FuzzyLabel, LinkLifeError> {
    if !(0.0..=1.0).contains(&value) {
        return Err(LinkLifeError::OutOfRange(value));
    }
    let bin = scale.breakpoints().iter().filter(|&&b| value >= b).count();
    Ok(FuzzyLabel::from_index(bin).expect("at most three breakpoints"))
}

use FuzzyLabel::{A, B, C, D};

/// Rows indexed by the second operand, columns by the first.
const RULES: [[FuzzyLabel; 4]; 4] = [[A, A, A, A], [A, B, C, C], [B, C, C, D], [C, C, D, D]];

pub const TM_TABLE: [[FuzzyLabel; 4]; 4] = RULES;
pub const LINK_LIFE_TABLE: [[FuzzyLabel; 4]; 4] = RULES;

/// Fuses mobility and energy labels; rows are LPE, columns LPM.
pub fn combine_tm(lpm: FuzzyLabel, lpe: FuzzyLabel) -> FuzzyLabel {
    TM_TABLE[lpe.index()][lpm.index()]
}

/// Fuses TM with the drop-ratio label; rows are DPR, columns TM.
pub fn combine_link_life(tm: FuzzyLabel, dpr: FuzzyLabel) -> FuzzyLabel {
    LINK_LIFE_TABLE[dpr.index()][tm.index()]
}

/// The weakest link decides the route.
pub fn route_life(link_labels: &[FuzzyLabel]) -> Result<FuzzyLabel, LinkLifeError> {
    Ok(label_min(link_labels)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkLifeEstimate {
    pub lpm: f64,
    pub lpe: f64,
    pub dpr: f64,
    pub tm: FuzzyLabel,
    pub link_life: FuzzyLabel,
}

impl LinkLifeEstimate {
    pub fn from_values(lpm: f64, lpe: f64, dpr: f64) -> Result<LinkLifeEstimate, LinkLifeError> {
        let tm = combine_tm(label_of(lpm, Scale::Lpm)?, label_of(lpe, Scale::Lpe)?);
        let link_life = combine_link_life(tm, label_of(dpr, Scale::Dpr)?);
        Ok(LinkLifeEstimate {
            lpm,
            lpe,
            dpr,
            tm,
            link_life,
        })
    }
}

/// Text rendering of both rule tables, one row per line.
pub fn rule_tables_fixture() -> String {
    let mut out = String::new();
    let mut render = |title: &str, header: &str, table: &[[FuzzyLabel; 4]; 4]| {
        writeln!(out, "table {title}").unwrap();
        writeln!(out, "{header} a b c d").unwrap();
        for (i, row) in table.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(ToString::to_string).collect();
            writeln!(out, "{} {}", FuzzyLabel::ALL[i], cells.join(" ")).unwrap();
        }
    };
    render("tm", "lpe\\lpm", &TM_TABLE);
    render("link_life", "dpr\\tm", &LINK_LIFE_TABLE);
    out
}
