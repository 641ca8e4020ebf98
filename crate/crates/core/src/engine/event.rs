use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use crate::model::{NodeId, Path};

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    HelloBroadcast {
        node: NodeId,
        round: u64,
    },
    /// `from` acknowledges the Hello it received from `to`.
    HelloAck {
        from: NodeId,
        to: NodeId,
    },
    MobilityTick {
        round: u64,
    },
    FlowPacketGen {
        flow: usize,
    },
    /// Data packet arriving at `to`.
    PacketHop {
        packet: usize,
        to: NodeId,
    },
    QueueService {
        node: NodeId,
    },
    /// Route request arriving at `at`, carrying the nodes recorded so far.
    RouteRequestHop {
        request: u64,
        at: NodeId,
        route: Vec<NodeId>,
    },
    /// Route reply arriving at `path[at]`, labels gathered so far newest last.
    RouteReplyHop {
        request: u64,
        path: Path,
        at: usize,
        labels: Vec<crate::model::FuzzyLabel>,
        min_energy: f64,
        sent_at: f64,
    },
    /// Destination stops collecting requests and answers them.
    RouteCollect {
        request: u64,
    },
    /// Source stops waiting for replies and commits a plan.
    RouteSettle {
        request: u64,
    },
    /// Failure notification reaching the flow source.
    RouteError {
        flow: usize,
        path: Path,
    },
    PlanRefresh {
        flow: usize,
    },
    StatsSnapshot,
    SimEnd,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::HelloBroadcast { .. } => "HelloBroadcast",
            EventKind::HelloAck { .. } => "HelloAck",
            EventKind::MobilityTick { .. } => "MobilityTick",
            EventKind::FlowPacketGen { .. } => "FlowPacketGen",
            EventKind::PacketHop { .. } => "PacketHop",
            EventKind::QueueService { .. } => "QueueService",
            EventKind::RouteRequestHop { .. } => "RouteRequestHop",
            EventKind::RouteReplyHop { .. } => "RouteReplyHop",
            EventKind::RouteCollect { .. } => "RouteCollect",
            EventKind::RouteSettle { .. } => "RouteSettle",
            EventKind::RouteError { .. } => "RouteError",
            EventKind::PlanRefresh { .. } => "PlanRefresh",
            EventKind::StatsSnapshot => "StatsSnapshot",
            EventKind::SimEnd => "SimEnd",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
}

impl Eq for Event {}

impl Ord for Event {
    // reversed: BinaryHeap is a max-heap and we want the earliest (time, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Min-queue on `(time, seq)` with a monotone sequence counter.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> EventQueue {
        EventQueue::default()
    }

    pub fn push(&mut self, time: f64, kind: EventKind) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event { time, seq, kind });
        seq
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
