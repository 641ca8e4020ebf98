use std::collections::{BTreeMap, VecDeque};

use crate::linklife::{drop_ratio, EnergyProfile, RssWindow, TrafficState};
use crate::mobility::{RadioParams, WaypointState};
use crate::model::NodeId;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlowCounts {
    pub arrived: u64,
    pub departed: u64,
    pub dropped: u64,
}

/// Lifetime data-packet counters plus two rolling epochs of per-flow counts
/// used for rate and drop-ratio estimates.
#[derive(Debug, Clone, Default)]
pub struct NodeTraffic {
    pub arrived_total: u64,
    pub departed_total: u64,
    pub dropped_total: u64,
    previous: BTreeMap<usize, FlowCounts>,
    current: BTreeMap<usize, FlowCounts>,
    window_start: f64,
    current_start: f64,
}

impl NodeTraffic {
    pub fn arrive(&mut self, flow: usize) {
        self.arrived_total += 1;
        self.current.entry(flow).or_default().arrived += 1;
    }

    pub fn depart(&mut self, flow: usize) {
        self.departed_total += 1;
        self.current.entry(flow).or_default().departed += 1;
    }

    pub fn drop_one(&mut self, flow: usize) {
        self.dropped_total += 1;
        self.current.entry(flow).or_default().dropped += 1;
    }

    /// Starts a new epoch; the window then spans the last two epochs.
    pub fn rotate(&mut self, now: f64) {
        self.previous = std::mem::take(&mut self.current);
        self.window_start = self.current_start;
        self.current_start = now;
    }

    fn windowed(&self) -> BTreeMap<usize, FlowCounts> {
        let mut out = self.previous.clone();
        for (&f, c) in &self.current {
            let e = out.entry(f).or_default();
            e.arrived += c.arrived;
            e.departed += c.departed;
            e.dropped += c.dropped;
        }
        out
    }

    /// Recent reverse drop ratio over the window.
    pub fn recent_dpr(&self) -> f64 {
        let w = self.windowed();
        let arrived: u64 = w.values().map(|c| c.arrived).sum();
        let dropped: u64 = w.values().map(|c| c.dropped).sum::<u64>().min(arrived);
        drop_ratio(arrived, arrived - dropped).expect("dropped clamped to arrived")
    }

    /// Per-flow measured rates, excluding `exclude`, with `extra` appended as
    /// the newly requested path.
    pub fn traffic_state(
        &self,
        now: f64,
        exclude: Option<usize>,
        extra: Option<f64>,
    ) -> TrafficState {
        let span = (now - self.window_start).max(1e-9);
        let mut arr = Vec::new();
        let mut dep = Vec::new();
        for (&f, c) in &self.windowed() {
            if Some(f) == exclude {
                continue;
            }
            arr.push(c.arrived as f64 / span);
            dep.push(c.departed as f64 / span);
        }
        if let Some(r) = extra {
            arr.push(r);
            dep.push(r);
        }
        TrafficState {
            per_path_arrival: arr,
            per_path_departure: dep,
            arrived_total: self.arrived_total,
            departed_total: self.departed_total,
            dropped_total: self.dropped_total,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NodeRuntime {
    pub id: NodeId,
    pub waypoint: WaypointState,
    pub mobile: bool,
    pub radio: RadioParams,
    pub energy: EnergyProfile,
    pub traffic: NodeTraffic,
    /// Packet ids, front is next to transmit.
    pub queue: VecDeque<usize>,
    pub neighbors: BTreeMap<NodeId, RssWindow>,
    pub last_ack: BTreeMap<NodeId, f64>,
    pub alive: bool,
    pub service_pending: bool,
    pub last_service: f64,
    /// Seconds spent transmitting data.
    pub busy_time: f64,
    pub data_energy: f64,
    pub control_energy: f64,
}

impl NodeRuntime {
    pub fn remaining_energy(&self) -> f64 {
        self.energy.remaining()
    }
}
