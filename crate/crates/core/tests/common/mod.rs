#![allow(dead_code)]

use dbmf::engine::Simulation;
use dbmf::mobility::Position;
use dbmf::model::{Flow, NodeId, Protocol, ScenarioConfig};

pub fn flow(
    src: usize,
    dst: usize,
    total_packets: u64,
    offered_rate: f64,
    start_time: f64,
) -> Flow {
    Flow {
        src: NodeId(src),
        dst: NodeId(dst),
        total_packets,
        offered_rate,
        packet_size: 512,
        start_time,
    }
}

/// Small static-friendly config: 100 m square, 50 m radios.
pub fn small_config(node_count: usize, flows: Vec<Flow>, duration: f64) -> ScenarioConfig {
    ScenarioConfig {
        node_count,
        area_width: 100.0,
        area_height: 100.0,
        sim_duration: duration,
        flows,
        protocol: Protocol::Dbmf,
        ..ScenarioConfig::default()
    }
}

pub fn positions(xy: &[(f64, f64)]) -> Vec<Position> {
    xy.iter().map(|&(x, y)| Position::new(x, y)).collect()
}

pub fn static_sim(cfg: ScenarioConfig, xy: &[(f64, f64)], trace: bool) -> Simulation {
    Simulation::builder(cfg)
        .static_positions(positions(xy))
        .trace(trace)
        .build()
        .expect("valid test scenario")
}

/// Scenarios spanning protocols, sizes and seeds, with enough traffic to hit
/// overflows, breaks and energy deaths.
pub fn stress_configs() -> Vec<ScenarioConfig> {
    let mut out = Vec::new();
    for (i, protocol) in Protocol::ALL.into_iter().enumerate() {
        for (j, &n) in [20usize, 40].iter().enumerate() {
            let seed = 11 + (i * 2 + j) as u64;
            out.push(ScenarioConfig {
                node_count: n,
                area_width: 200.0,
                area_height: 200.0,
                speed_min: 10.0,
                speed_max: 10.0,
                sim_duration: 40.0,
                energy_initial: 6.0,
                protocol,
                seed,
                flows: vec![
                    flow(0, n - 1, 2000, 60.0, 2.0),
                    flow(1, n - 2, 800, 30.0, 4.0),
                ],
                ..ScenarioConfig::default()
            });
        }
    }
    out
}

/// Parses `tx=<node>@<remaining>/<initial>` tokens of a trace.
pub fn transmissions(trace: &str) -> Vec<(f64, usize, f64, f64)> {
    let mut out = Vec::new();
    for line in trace.lines() {
        let time: f64 = line.split('|').next().unwrap().parse().unwrap();
        for tok in line.split([' ', '|']) {
            if let Some(rest) = tok.strip_prefix("tx=") {
                let (node, energy) = rest.split_once('@').unwrap();
                let (rem, init) = energy.split_once('/').unwrap();
                out.push((
                    time,
                    node.parse().unwrap(),
                    rem.parse().unwrap(),
                    init.parse().unwrap(),
                ));
            }
        }
    }
    out
}
