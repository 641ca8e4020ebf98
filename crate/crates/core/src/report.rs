//! Run metrics (delivery ratio, mean delay, drop rate) and their CSV form.

use std::fmt::Write as _;

use thiserror::Error;

use crate::engine::packet::{DropReason, PacketRecord};
use crate::model::Protocol;

pub const CSV_HEADER: &str = "protocol,node_count,seed,pdr,avg_delay_ms,drop_rate_pps,generated,delivered,dropped,drops_queue,drops_link,drops_dead,drops_noroute";

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("no packets generated")]
    NoTraffic,
    #[error("no packets delivered")]
    NoDeliveries,
    #[error("line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DropBreakdown {
    pub queue_overflow: u64,
    pub link_break: u64,
    pub node_dead: u64,
    pub no_route: u64,
}

impl DropBreakdown {
    pub fn total(&self) -> u64 {
        self.queue_overflow + self.link_break + self.node_dead + self.no_route
    }

    pub fn get(&self, reason: DropReason) -> u64 {
        match reason {
            DropReason::QueueOverflow => self.queue_overflow,
            DropReason::LinkBreak => self.link_break,
            DropReason::NodeDead => self.node_dead,
            DropReason::NoRoute => self.no_route,
        }
    }

    fn bump(&mut self, reason: DropReason) {
        match reason {
            DropReason::QueueOverflow => self.queue_overflow += 1,
            DropReason::LinkBreak => self.link_break += 1,
            DropReason::NodeDead => self.node_dead += 1,
            DropReason::NoRoute => self.no_route += 1,
        }
    }

    pub fn from_records(records: &[PacketRecord]) -> DropBreakdown {
        let mut b = DropBreakdown::default();
        for r in records.iter().filter_map(PacketRecord::drop_reason) {
            b.bump(r);
        }
        b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub protocol: Protocol,
    pub node_count: usize,
    pub seed: u64,
    /// percent
    pub pdr: f64,
    /// milliseconds
    pub avg_delay_ms: f64,
    /// packets/second, network-wide
    pub drop_rate: f64,
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub drops: DropBreakdown,
    pub in_flight: u64,
    /// Not part of any deterministic output.
    pub wall_time: f64,
}

/// Percentage of generated packets that reached their destination.
pub fn compute_pdr(records: &[PacketRecord]) -> Result<f64, ReportError> {
    if records.is_empty() {
        return Err(ReportError::NoTraffic);
    }
    let delivered = records.iter().filter(|r| r.is_delivered()).count();
    Ok(100.0 * delivered as f64 / records.len() as f64)
}

/// Mean end-to-end latency of delivered packets, in milliseconds.
pub fn compute_avg_delay(records: &[PacketRecord]) -> Result<f64, ReportError> {
    let (sum, n) = records
        .iter()
        .filter_map(PacketRecord::latency)
        .fold((0.0, 0u64), |(s, n), l| (s + l, n + 1));
    if n == 0 {
        return Err(ReportError::NoDeliveries);
    }
    Ok(1000.0 * sum / n as f64)
}

/// Network-wide drops per second.
pub fn compute_drop_rate(records: &[PacketRecord], sim_duration: f64) -> f64 {
    DropBreakdown::from_records(records).total() as f64 / sim_duration
}

impl MetricsReport {
    /// Aggregates one run. A run without traffic or deliveries reports 0 for
    /// the undefined ratios.
    pub fn from_records(
        protocol: Protocol,
        node_count: usize,
        seed: u64,
        records: &[PacketRecord],
        sim_duration: f64,
    ) -> MetricsReport {
        let drops = DropBreakdown::from_records(records);
        let delivered = records.iter().filter(|r| r.is_delivered()).count() as u64;
        let generated = records.len() as u64;
        MetricsReport {
            protocol,
            node_count,
            seed,
            pdr: compute_pdr(records).unwrap_or(0.0),
            avg_delay_ms: compute_avg_delay(records).unwrap_or(0.0),
            drop_rate: compute_drop_rate(records, sim_duration),
            generated,
            delivered,
            dropped: drops.total(),
            drops,
            in_flight: generated - delivered - drops.total(),
            wall_time: 0.0,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{},{},{},{},{},{},{}",
            self.protocol,
            self.node_count,
            self.seed,
            self.pdr,
            self.avg_delay_ms,
            self.drop_rate,
            self.generated,
            self.delivered,
            self.dropped,
            self.drops.queue_overflow,
            self.drops.link_break,
            self.drops.node_dead,
            self.drops.no_route,
        )
    }
}

/// Header plus one row per report, sorted by protocol, node count, seed.
/// The sort is stable, so reports equal on that key keep their input order.
pub fn to_csv(reports: &[MetricsReport]) -> String {
    let mut sorted: Vec<&MetricsReport> = reports.iter().collect();
    sorted.sort_by(|a, b| {
        (a.protocol.as_str(), a.node_count, a.seed).cmp(&(
            b.protocol.as_str(),
            b.node_count,
            b.seed,
        ))
    });
    let mut out = String::with_capacity(64 * (reports.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in sorted {
        writeln!(out, "{}", r.csv_row()).unwrap();
    }
    out
}

/// Parses CSV produced by [`to_csv`]. `wall_time` and `in_flight` are not
/// serialized; `in_flight` is recomputed from the counters.
pub fn parse_csv(text: &str) -> Result<Vec<MetricsReport>, ReportError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        _ => {
            return Err(ReportError::Csv {
                line: 1,
                msg: "missing or unexpected header".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let err = |msg: String| ReportError::Csv { line: line_no, msg };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 13 {
            return Err(err(format!("expected 13 columns, got {}", cols.len())));
        }
        let int = |k: usize| {
            cols[k]
                .parse::<u64>()
                .map_err(|e| err(format!("column {k}: {e}")))
        };
        let float = |k: usize| {
            cols[k]
                .parse::<f64>()
                .map_err(|e| err(format!("column {k}: {e}")))
        };
        let drops = DropBreakdown {
            queue_overflow: int(9)?,
            link_break: int(10)?,
            node_dead: int(11)?,
            no_route: int(12)?,
        };
        let generated = int(6)?;
        let delivered = int(7)?;
        let dropped = int(8)?;
        out.push(MetricsReport {
            protocol: cols[0].parse().map_err(err)?,
            node_count: int(1)? as usize,
            seed: int(2)?,
            pdr: float(3)?,
            avg_delay_ms: float(4)?,
            drop_rate: float(5)?,
            generated,
            delivered,
            dropped,
            drops,
            in_flight: generated.saturating_sub(delivered + dropped),
            wall_time: 0.0,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::packet::PacketStatus;

    fn rec(
        id: usize,
        created: f64,
        status: PacketStatus,
        delivered_at: Option<f64>,
    ) -> PacketRecord {
        PacketRecord {
            id,
            flow: 0,
            seq: id as u64,
            created_at: created,
            delivered_at,
            path: None,
            hop: 0,
            size: 512,
            status,
        }
    }

    fn delivered(id: usize, created: f64, delay: f64) -> PacketRecord {
        rec(id, created, PacketStatus::Delivered, Some(created + delay))
    }

    fn dropped(id: usize, reason: DropReason) -> PacketRecord {
        rec(id, 0.0, PacketStatus::Dropped(reason), None)
    }

    #[test]
    fn pdr_examples() {
        let all: Vec<_> = (0..100).map(|i| delivered(i, 0.0, 0.01)).collect();
        assert_eq!(compute_pdr(&all).unwrap(), 100.0);
        let none: Vec<_> = (0..100).map(|i| dropped(i, DropReason::NoRoute)).collect();
        assert_eq!(compute_pdr(&none).unwrap(), 0.0);
        let mixed: Vec<_> = (0..200)
            .map(|i| {
                if i < 173 {
                    delivered(i, 0.0, 0.01)
                } else {
                    dropped(i, DropReason::LinkBreak)
                }
            })
            .collect();
        assert_eq!(compute_pdr(&mixed).unwrap(), 86.5);
        assert_eq!(compute_pdr(&[]), Err(ReportError::NoTraffic));
    }

    #[test]
    fn delay_examples() {
        let one = [delivered(0, 1.0, 0.005)];
        assert!((compute_avg_delay(&one).unwrap() - 5.0).abs() < 1e-9);
        let two = [delivered(0, 0.0, 0.002), delivered(1, 0.0, 0.004)];
        assert!((compute_avg_delay(&two).unwrap() - 3.0).abs() < 1e-9);
        let mut with_drops = two.to_vec();
        with_drops.extend((2..10).map(|i| dropped(i, DropReason::QueueOverflow)));
        assert_eq!(compute_avg_delay(&with_drops), compute_avg_delay(&two));
        assert_eq!(
            compute_avg_delay(&[dropped(0, DropReason::NoRoute)]),
            Err(ReportError::NoDeliveries)
        );
    }

    #[test]
    fn drop_rate_examples() {
        assert_eq!(compute_drop_rate(&[delivered(0, 0.0, 0.01)], 10.0), 0.0);
        let reasons = DropReason::ALL;
        let recs: Vec<_> = (0..50).map(|i| dropped(i, reasons[i % 4])).collect();
        assert_eq!(compute_drop_rate(&recs, 100.0), 0.5);
        let b = DropBreakdown::from_records(&recs);
        let by_reason: u64 = reasons.iter().map(|&r| b.get(r)).sum();
        assert_eq!(by_reason as f64 / 100.0, compute_drop_rate(&recs, 100.0));
    }

    fn sample(protocol: Protocol, nodes: usize, seed: u64) -> MetricsReport {
        let recs: Vec<_> = (0..7)
            .map(|i| {
                if i < 4 {
                    delivered(i, 0.1 * i as f64, 0.0123)
                } else {
                    dropped(i, DropReason::ALL[i % 4])
                }
            })
            .chain(std::iter::once(rec(7, 0.0, PacketStatus::InFlight, None)))
            .collect();
        MetricsReport::from_records(protocol, nodes, seed, &recs, 30.0)
    }

    #[test]
    fn report_invariants() {
        let r = sample(Protocol::Dbmf, 20, 1);
        assert_eq!(r.generated, 8);
        assert_eq!(r.delivered, 4);
        assert_eq!(r.dropped, 3);
        assert_eq!(r.in_flight, 1);
        assert_eq!(r.drops.total(), r.dropped);
        assert_eq!(
            (r.pdr * r.generated as f64 / 100.0).round() as u64,
            r.delivered
        );
        assert!(r.delivered + r.dropped <= r.generated);
    }

    #[test]
    fn csv_shapes() {
        assert_eq!(to_csv(&[]), format!("{CSV_HEADER}\n"));
        let one = to_csv(&[sample(Protocol::Zd, 20, 3)]);
        assert_eq!(one.lines().count(), 2);
        assert_eq!(
            one.lines().nth(1).unwrap(),
            "zd,20,3,50.000000,12.300000,0.100000,8,4,3,1,1,1,0"
        );
    }

    #[test]
    fn csv_sorted_and_roundtrips() {
        let reports = vec![
            sample(Protocol::Zd, 20, 2),
            sample(Protocol::Dbmf, 100, 1),
            sample(Protocol::Dbmf, 20, 9),
            sample(Protocol::Mmre, 50, 0),
            sample(Protocol::Dbmf, 20, 1),
        ];
        let text = to_csv(&reports);
        let keys: Vec<String> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').take(3).collect::<Vec<_>>().join(","))
            .collect();
        assert_eq!(
            keys,
            [
                "dbmf,20,1",
                "dbmf,20,9",
                "dbmf,100,1",
                "mmre,50,0",
                "zd,20,2"
            ]
        );
        let parsed = parse_csv(&text).unwrap();
        assert_eq!(to_csv(&parsed), text);
        assert_eq!(parsed[0].drops, reports[4].drops);
        assert_eq!(parsed[0].generated, 8);
        assert!(parse_csv("nope\n").is_err());
    }
}
