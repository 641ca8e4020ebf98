use std::fmt;

use crate::model::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DropReason {
    QueueOverflow,
    LinkBreak,
    NodeDead,
    NoRoute,
}

impl DropReason {
    pub const ALL: [DropReason; 4] = [
        DropReason::QueueOverflow,
        DropReason::LinkBreak,
        DropReason::NodeDead,
        DropReason::NoRoute,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::QueueOverflow => "queue_overflow",
            DropReason::LinkBreak => "link_break",
            DropReason::NodeDead => "node_dead",
            DropReason::NoRoute => "no_route",
        }
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacketStatus {
    InFlight,
    Delivered,
    Dropped(DropReason),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacketRecord {
    pub id: usize,
    pub flow: usize,
    pub seq: u64,
    pub created_at: f64,
    pub delivered_at: Option<f64>,
    /// Source route, once dispatched.
    pub path: Option<Path>,
    /// Index into `path` of the node currently holding the packet.
    pub hop: usize,
    pub size: u32,
    pub status: PacketStatus,
}

impl PacketRecord {
    pub fn is_delivered(&self) -> bool {
        self.status == PacketStatus::Delivered
    }

    pub fn drop_reason(&self) -> Option<DropReason> {
        match self.status {
            PacketStatus::Dropped(r) => Some(r),
            _ => None,
        }
    }

    /// Seconds from creation to delivery.
    pub fn latency(&self) -> Option<f64> {
        self.delivered_at.map(|t| t - self.created_at)
    }
}
