//! Route selection and load partitioning.
//!
//! Discovery itself runs inside the engine (it needs the event queue); this
//! module turns the discovered candidates into a [`RoutePlan`] for each
//! protocol and maintains the plan when a path fails.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use thiserror::Error;

use crate::linklife::route_life;
use crate::model::{FuzzyLabel, NodeId, Path, Protocol};

/// Smoothing weight given to a fresh per-packet delay sample.
pub const DELAY_SMOOTHING: f64 = 0.2;

#[derive(Debug, Error, PartialEq)]
pub enum RoutingError {
    #[error("no route found")]
    NoRouteFound,
    #[error("empty path set")]
    EmptyPathSet,
    #[error("delay must be > 0, got {0}")]
    NonPositiveDelay(f64),
    #[error("{labels} link labels for a {hops}-hop path")]
    LabelCount { labels: usize, hops: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteCandidate {
    pub path: Path,
    /// One label per hop, source side first.
    pub link_labels: Vec<FuzzyLabel>,
    pub route_life: FuzzyLabel,
    /// One-way seconds per packet.
    pub delay_estimate: f64,
    pub discovered_at: f64,
    /// Smallest remaining energy of any node on the path, J.
    pub min_residual_energy: f64,
}

impl RouteCandidate {
    pub fn new(
        path: Path,
        link_labels: Vec<FuzzyLabel>,
        delay_estimate: f64,
        discovered_at: f64,
        min_residual_energy: f64,
    ) -> Result<RouteCandidate, RoutingError> {
        if link_labels.len() != path.hop_count() {
            return Err(RoutingError::LabelCount {
                labels: link_labels.len(),
                hops: path.hop_count(),
            });
        }
        if delay_estimate.is_nan() || delay_estimate <= 0.0 {
            return Err(RoutingError::NonPositiveDelay(delay_estimate));
        }
        let route_life = route_life(&link_labels).expect("paths have at least one hop");
        Ok(RouteCandidate {
            path,
            link_labels,
            route_life,
            delay_estimate,
            discovered_at,
            min_residual_energy,
        })
    }

    /// Replaces the per-hop labels, recomputing the route life.
    pub fn relabel(&mut self, link_labels: Vec<FuzzyLabel>) {
        assert_eq!(link_labels.len(), self.path.hop_count());
        self.route_life = route_life(&link_labels).expect("paths have at least one hop");
        self.link_labels = link_labels;
    }

    pub fn observe_delay(&mut self, measured: f64) {
        if measured > 0.0 {
            self.delay_estimate =
                (1.0 - DELAY_SMOOTHING) * self.delay_estimate + DELAY_SMOOTHING * measured;
        }
    }
}

/// How a plan divides packets between its selected paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    InverseDelay,
    Equal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutePlan {
    pub flow: usize,
    /// Ranked candidates; entries past `selected` serve as backups.
    pub candidates: Vec<RouteCandidate>,
    pub selected: Vec<RouteCandidate>,
    /// Packets assigned to each selected path.
    pub partitions: Vec<u64>,
    /// Packet-delay product shared by all selected paths.
    pub pd: f64,
    pub split: Split,
    /// Set once the plan has nothing left to route on.
    pub needs_discovery: bool,
}

impl RoutePlan {
    fn empty(flow: usize, split: Split) -> RoutePlan {
        RoutePlan {
            flow,
            candidates: Vec::new(),
            selected: Vec::new(),
            partitions: Vec::new(),
            pd: 0.0,
            split,
            needs_discovery: true,
        }
    }

    pub fn total(&self) -> u64 {
        self.partitions.iter().sum()
    }

    /// Index of the selected path that is furthest behind its quota, given how
    /// many packets each has been sent so far. `None` once every quota is met.
    pub fn next_path(&self, sent: &[u64]) -> Option<usize> {
        let mut best: Option<(usize, u64, u64)> = None;
        for (i, (&quota, &done)) in self.partitions.iter().zip(sent).enumerate() {
            if done >= quota {
                continue;
            }
            let left = quota - done;
            let better = match best {
                None => true,
                // left/quota > best_left/best_quota
                Some((_, bl, bq)) => (left as u128) * (bq as u128) > (bl as u128) * (quota as u128),
            };
            if better {
                best = Some((i, left, quota));
            }
        }
        best.map(|b| b.0)
    }

    pub fn position_of(&self, path: &Path) -> Option<usize> {
        self.selected.iter().position(|c| &c.path == path)
    }
}

/// Inverse-delay apportionment of `total_packets`, integerized by the
/// largest-remainder method so the counts sum exactly to the total.
pub fn partition(total_packets: u64, delays: &[f64]) -> Result<Vec<u64>, RoutingError> {
    if delays.is_empty() {
        return Err(RoutingError::EmptyPathSet);
    }
    if let Some(&d) = delays.iter().find(|&&d| !(d > 0.0 && d.is_finite())) {
        return Err(RoutingError::NonPositiveDelay(d));
    }
    let inv_sum: f64 = delays.iter().map(|d| 1.0 / d).sum();
    let ideal: Vec<f64> = delays
        .iter()
        .map(|d| total_packets as f64 * (1.0 / d) / inv_sum)
        .collect();
    let mut counts: Vec<u64> = ideal.iter().map(|x| x.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    // float floors can overshoot by one at most when total is huge; trim from the smallest remainder
    let mut order: Vec<usize> = (0..delays.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - ideal[a].floor();
        let rb = ideal[b] - ideal[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    if assigned <= total_packets {
        let mut left = total_packets - assigned;
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
    } else {
        let mut extra = assigned - total_packets;
        for &i in order.iter().rev().cycle() {
            if extra == 0 {
                break;
            }
            if counts[i] > 0 {
                counts[i] -= 1;
                extra -= 1;
            }
        }
    }
    Ok(counts)
}

/// `PD` such that `count_i ~= PD / delay_i`.
pub fn packet_delay_product(total_packets: u64, delays: &[f64]) -> f64 {
    let inv_sum: f64 = delays.iter().map(|d| 1.0 / d).sum();
    if inv_sum > 0.0 {
        total_packets as f64 / inv_sum
    } else {
        0.0
    }
}

/// Greedy, in input order: keep a path iff it shares no undirected link with
/// a path already kept. Nodes may repeat across kept paths.
pub fn select_link_disjoint(paths: &[Path]) -> Vec<Path> {
    let idx = disjoint_indices(paths.iter(), false);
    idx.into_iter().map(|i| paths[i].clone()).collect()
}

/// Greedy, in input order: keep a path iff it shares no relay node and no link
/// with a path already kept.
pub fn select_node_disjoint(paths: &[Path]) -> Vec<Path> {
    let idx = disjoint_indices(paths.iter(), true);
    idx.into_iter().map(|i| paths[i].clone()).collect()
}

fn disjoint_indices<'a>(paths: impl Iterator<Item = &'a Path>, node_disjoint: bool) -> Vec<usize> {
    let mut links: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
    let mut relays: BTreeSet<NodeId> = BTreeSet::new();
    let mut kept = Vec::new();
    for (i, p) in paths.enumerate() {
        if p.links().any(|l| links.contains(&l)) {
            continue;
        }
        if node_disjoint && p.relays().iter().any(|n| relays.contains(n)) {
            continue;
        }
        links.extend(p.links());
        relays.extend(p.relays().iter().copied());
        kept.push(i);
    }
    kept
}

fn tie_break(a: &RouteCandidate, b: &RouteCandidate) -> Ordering {
    a.path
        .hop_count()
        .cmp(&b.path.hop_count())
        .then(a.delay_estimate.total_cmp(&b.delay_estimate))
        .then_with(|| a.path.nodes().cmp(b.path.nodes()))
}

/// Best route life first; then fewer hops, smaller delay, lexicographic nodes.
pub fn rank(mut candidates: Vec<RouteCandidate>) -> Vec<RouteCandidate> {
    candidates.sort_by(|a, b| {
        b.route_life
            .cmp(&a.route_life)
            .then_with(|| tie_break(a, b))
    });
    candidates
}

fn by_hops(mut candidates: Vec<RouteCandidate>) -> Vec<RouteCandidate> {
    candidates.sort_by(tie_break);
    candidates
}

fn by_residual_energy(mut candidates: Vec<RouteCandidate>) -> Vec<RouteCandidate> {
    candidates.sort_by(|a, b| {
        b.min_residual_energy
            .total_cmp(&a.min_residual_energy)
            .then_with(|| tie_break(a, b))
    });
    candidates
}

fn split_counts(total: u64, selected: &[RouteCandidate], split: Split) -> (Vec<u64>, f64) {
    let delays: Vec<f64> = match split {
        Split::InverseDelay => selected.iter().map(|c| c.delay_estimate).collect(),
        Split::Equal => vec![1.0; selected.len()],
    };
    let counts = partition(total, &delays).expect("selected set is non-empty with positive delays");
    (counts, packet_delay_product(total, &delays))
}

fn build(
    flow: usize,
    candidates: Vec<RouteCandidate>,
    selected: Vec<RouteCandidate>,
    total: u64,
    split: Split,
) -> RoutePlan {
    let (partitions, pd) = split_counts(total, &selected, split);
    RoutePlan {
        flow,
        candidates,
        selected,
        partitions,
        pd,
        split,
        needs_discovery: false,
    }
}

/// Ranked by route life, link-disjoint, top `path_count`, inverse-delay split.
/// Candidates already predicted to break (route life `a`) are only used when
/// nothing better exists.
pub fn strategy_dbmf(
    flow: usize,
    candidates: Vec<RouteCandidate>,
    path_count: usize,
    total: u64,
) -> Result<RoutePlan, RoutingError> {
    if candidates.is_empty() {
        return Err(RoutingError::NoRouteFound);
    }
    let ranked = rank(candidates);
    let paths: Vec<Path> = ranked.iter().map(|c| c.path.clone()).collect();
    let mut chosen: Vec<RouteCandidate> = disjoint_indices(paths.iter(), false)
        .into_iter()
        .map(|i| ranked[i].clone())
        .collect();
    if chosen.iter().any(|c| c.route_life > FuzzyLabel::A) {
        chosen.retain(|c| c.route_life > FuzzyLabel::A);
    }
    chosen.truncate(path_count.max(1));
    Ok(build(flow, ranked, chosen, total, Split::InverseDelay))
}

/// Fewest hops, one path, everything on it.
pub fn strategy_single_path(
    flow: usize,
    candidates: Vec<RouteCandidate>,
    total: u64,
) -> Result<RoutePlan, RoutingError> {
    if candidates.is_empty() {
        return Err(RoutingError::NoRouteFound);
    }
    let ranked = by_hops(candidates);
    let selected = vec![ranked[0].clone()];
    Ok(build(flow, ranked, selected, total, Split::Equal))
}

/// Max-min residual energy ordering, one path at a time; the rest are backups.
pub fn strategy_mmre(
    flow: usize,
    candidates: Vec<RouteCandidate>,
    total: u64,
) -> Result<RoutePlan, RoutingError> {
    if candidates.is_empty() {
        return Err(RoutingError::NoRouteFound);
    }
    let ranked = by_residual_energy(candidates);
    let selected = vec![ranked[0].clone()];
    Ok(build(flow, ranked, selected, total, Split::Equal))
}

/// Node-disjoint set (shortest first), up to `path_count`, equal split.
pub fn strategy_zd(
    flow: usize,
    candidates: Vec<RouteCandidate>,
    path_count: usize,
    total: u64,
) -> Result<RoutePlan, RoutingError> {
    if candidates.is_empty() {
        return Err(RoutingError::NoRouteFound);
    }
    let ranked = by_hops(candidates);
    let paths: Vec<Path> = ranked.iter().map(|c| c.path.clone()).collect();
    let mut chosen: Vec<RouteCandidate> = disjoint_indices(paths.iter(), true)
        .into_iter()
        .map(|i| ranked[i].clone())
        .collect();
    chosen.truncate(path_count.max(1));
    Ok(build(flow, ranked, chosen, total, Split::Equal))
}

pub fn plan_for(
    protocol: Protocol,
    flow: usize,
    candidates: Vec<RouteCandidate>,
    path_count: usize,
    total: u64,
) -> Result<RoutePlan, RoutingError> {
    match protocol {
        Protocol::Dbmf => strategy_dbmf(flow, candidates, path_count, total),
        Protocol::SinglePath => strategy_single_path(flow, candidates, total),
        Protocol::Mmre => strategy_mmre(flow, candidates, total),
        Protocol::Zd => strategy_zd(flow, candidates, path_count, total),
    }
}

/// Drops `failed` from the plan and spreads its unsent packets over the
/// surviving paths. `unsent` is aligned with `plan.selected`. With no
/// survivors the plan is emptied and flagged for rediscovery.
pub fn redistribute_on_failure(plan: &RoutePlan, failed: &Path, unsent: &[u64]) -> RoutePlan {
    let Some(pos) = plan.position_of(failed) else {
        return plan.clone();
    };
    let orphaned = unsent[pos];
    let mut survivors = Vec::new();
    let mut quotas = Vec::new();
    for (i, c) in plan.selected.iter().enumerate() {
        if i != pos {
            survivors.push(c.clone());
            quotas.push(unsent[i]);
        }
    }
    let mut candidates = plan.candidates.clone();
    candidates.retain(|c| &c.path != failed);
    if survivors.is_empty() {
        return RoutePlan {
            candidates,
            ..RoutePlan::empty(plan.flow, plan.split)
        };
    }
    let (extra, _) = split_counts(orphaned, &survivors, plan.split);
    for (q, e) in quotas.iter_mut().zip(extra) {
        *q += e;
    }
    let total: u64 = quotas.iter().sum();
    let delays: Vec<f64> = match plan.split {
        Split::InverseDelay => survivors.iter().map(|c| c.delay_estimate).collect(),
        Split::Equal => vec![1.0; survivors.len()],
    };
    RoutePlan {
        flow: plan.flow,
        candidates,
        selected: survivors,
        partitions: quotas,
        pd: packet_delay_product(total, &delays),
        split: plan.split,
        needs_discovery: false,
    }
}

/// Per-protocol reaction to a broken path: multipath plans fold the orphaned
/// packets into the survivors, the energy-ranked baseline falls back to its
/// next backup, and the shortest-path baseline rediscovers.
pub fn on_failure(
    protocol: Protocol,
    plan: &RoutePlan,
    failed: &Path,
    unsent: &[u64],
) -> RoutePlan {
    match protocol {
        Protocol::Dbmf | Protocol::Zd => redistribute_on_failure(plan, failed, unsent),
        Protocol::Mmre => {
            if plan.position_of(failed).is_none() {
                return plan.clone();
            }
            let remaining: u64 = unsent.iter().sum();
            let mut candidates = plan.candidates.clone();
            candidates.retain(|c| &c.path != failed);
            match candidates.first().cloned() {
                Some(next) => build(plan.flow, candidates, vec![next], remaining, Split::Equal),
                None => RoutePlan {
                    candidates,
                    ..RoutePlan::empty(plan.flow, plan.split)
                },
            }
        }
        Protocol::SinglePath => {
            if plan.position_of(failed).is_none() {
                return plan.clone();
            }
            RoutePlan::empty(plan.flow, plan.split)
        }
    }
}
