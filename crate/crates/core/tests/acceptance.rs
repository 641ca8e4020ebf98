//! Acceptance criteria. Runs as a plain binary so every criterion prints a
//! PASS or FAIL line; the process fails if any criterion does.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use dbmf::cli::{run_matrix, MatrixSpec};
use dbmf::engine::{self, Simulation};
use dbmf::linklife::{
    combine_link_life, combine_tm, relative_mobility, squash, squash_margin, RssWindow,
};
use dbmf::mobility::{distance_from_rss, rss_at, RadioParams};
use dbmf::model::{FuzzyLabel, Protocol, ScenarioConfig};
use dbmf::report::{to_csv, MetricsReport};
use dbmf::routing::partition;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------

/// Hand transcription of the two 4x4 rule tables. Rows: LPE (resp. DPR),
/// columns: LPM (resp. TM), both in order a b c d.
const TRANSCRIBED: [&str; 4] = ["aaaa", "abcc", "bccd", "ccdd"];

fn label(c: char) -> FuzzyLabel {
    FuzzyLabel::ALL["abcd".find(c).unwrap()]
}

fn fixture_tables() -> BTreeMap<String, Vec<Vec<FuzzyLabel>>> {
    let text = include_str!("../fixtures/rule_tables.txt");
    let mut out: BTreeMap<String, Vec<Vec<FuzzyLabel>>> = BTreeMap::new();
    let mut current = None;
    for line in text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
    {
        if let Some(name) = line.strip_prefix("table ") {
            current = Some(name.to_string());
        } else if !line.contains('\\') {
            let row = line
                .split_whitespace()
                .skip(1)
                .map(|t| label(t.chars().next().unwrap()))
                .collect();
            out.entry(current.clone().unwrap()).or_default().push(row);
        }
    }
    out
}

fn rule_tables() -> Outcome {
    let fixture = fixture_tables();
    let mut cells = 0;
    for (name, combine) in [
        ("tm", combine_tm as fn(FuzzyLabel, FuzzyLabel) -> FuzzyLabel),
        ("link_life", |tm, dpr| combine_link_life(tm, dpr)),
    ] {
        let table = &fixture[name];
        check(table.len() == 4, || format!("{name}: {} rows", table.len()))?;
        for (r, row) in TRANSCRIBED.iter().enumerate() {
            for (c, ch) in row.chars().enumerate() {
                let expected = label(ch);
                check(table[r][c] == expected, || {
                    format!("{name} fixture [{r}][{c}]")
                })?;
                // columns are the mobility-side (or TM) label, rows the energy-side (or DPR) label
                let got = combine(FuzzyLabel::ALL[c], FuzzyLabel::ALL[r]);
                check(got == expected, || {
                    format!("{name}[{r}][{c}] = {got}, want {expected}")
                })?;
                cells += 1;
            }
        }
    }
    check(
        combine_tm(FuzzyLabel::D, FuzzyLabel::A) == FuzzyLabel::A,
        || "(LPM=d, LPE=a)".into(),
    )?;
    check(
        combine_link_life(FuzzyLabel::D, FuzzyLabel::D) == FuzzyLabel::D,
        || "(TM=d, DPR=d)".into(),
    )?;
    Ok(format!("{cells} cells"))
}

// ---------------------------------------------------------------------------

fn squash_grid() -> Outcome {
    check(squash(0.0).unwrap() == 0.0, || "squash(0) != 0".into())?;
    let n = 10_000;
    let mut worst: f64 = 0.0;
    let mut prev_margin = f64::INFINITY;
    let mut prev = -1.0;
    for i in 0..n {
        let x = 50.0 * i as f64 / (n - 1) as f64;
        let s = squash(x).unwrap();
        let m = squash_margin(x).unwrap();
        worst = worst.max((s - (x / 2.0).tanh()).abs());
        check(s < 1.0, || format!("squash({x}) = {s} reaches 1"))?;
        check(s >= prev, || format!("squash decreases at {x}"))?;
        // the complement stays representable where the value itself rounds to 1
        check(m < prev_margin && m > 0.0, || {
            format!("not strictly increasing at {x}")
        })?;
        check((1.0 - s - m).abs() <= 1e-12, || {
            format!("margin inconsistent at {x}")
        })?;
        prev = s;
        prev_margin = m;
    }
    check(worst <= 1e-12, || {
        format!("max |squash - tanh(x/2)| = {worst:e}")
    })?;
    Ok(format!("max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------------------

fn friis_roundtrip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for q in [2u32, 3] {
        for _ in 0..1000 {
            let radio = RadioParams {
                trans_pow: rng.gen_range(0.1..10.0),
                k_const: rng.gen_range(0.1..10.0),
                q_exp: q,
                rad_rng: 50.0,
            };
            let d = rng.gen_range(0.01..500.0);
            let rss = rss_at(&radio, d).unwrap();
            let oracle = radio.k_const * radio.trans_pow / d.powf(q as f64);
            check((rss - oracle).abs() / oracle < 1e-12, || {
                format!("rss({d}) = {rss} vs {oracle}")
            })?;
            let back = distance_from_rss(&radio, rss).unwrap();
            worst = worst.max((back - d).abs() / d);
        }
    }
    check(worst <= 1e-9, || format!("worst relative error {worst:e}"))?;
    Ok(format!("worst relative error {worst:.1e}"))
}

// ---------------------------------------------------------------------------

fn telescoping() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let radio = RadioParams {
            trans_pow: 1.0,
            k_const: 1.0,
            q_exp: if rng.gen_bool(0.5) { 2 } else { 3 },
            rad_rng: 50.0,
        };
        let m = rng.gen_range(2..=8);
        let intv = rng.gen_range(0.5..2.0);
        let mut window = RssWindow::new(m, intv);
        for i in 0..m {
            let d: f64 = rng.gen_range(0.5..60.0);
            window
                .push(i as f64 * intv, rss_at(&radio, d).unwrap())
                .unwrap();
        }
        let (slope, _) = relative_mobility(&window, &radio).unwrap();
        let dist: Vec<f64> = window
            .samples()
            .map(|(_, p)| distance_from_rss(&radio, p).unwrap())
            .collect();
        let sum: f64 = dist.windows(2).map(|w| (w[1] - w[0]) / intv).sum::<f64>() / (m - 1) as f64;
        worst = worst.max((slope - sum).abs());
    }
    check(worst <= 1e-12, || format!("worst difference {worst:e}"))?;
    Ok(format!("worst difference {worst:.1e}"))
}

// ---------------------------------------------------------------------------

/// Largest-remainder oracle, `None` when two remainders are too close to
/// order reliably.
fn largest_remainder(total: u64, delays: &[f64]) -> Option<Vec<u64>> {
    let weights: Vec<f64> = delays.iter().map(|d| 1.0 / d).collect();
    let sum: f64 = weights.iter().sum();
    let ideal: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<u64> = ideal.iter().map(|x| x.floor() as u64).collect();
    let short = total - counts.iter().sum::<u64>();
    let mut by_rem: Vec<(f64, usize)> = ideal
        .iter()
        .enumerate()
        .map(|(i, x)| (x - x.floor(), i))
        .collect();
    by_rem.sort_by(|a, b| b.0.total_cmp(&a.0));
    if by_rem.windows(2).any(|w| (w[0].0 - w[1].0).abs() < 1e-9) {
        return None;
    }
    for &(_, i) in by_rem.iter().take(short as usize) {
        counts[i] += 1;
    }
    Some(counts)
}

fn partition_fuzz() -> Outcome {
    let got = partition(100, &[1.0, 2.0, 4.0]).unwrap();
    check(got == vec![57, 29, 14], || format!("[1,2,4] -> {got:?}"))?;
    check(
        largest_remainder(100, &[1.0, 2.0, 4.0]) == Some(got),
        || "oracle disagrees on [1,2,4]".into(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut compared = 0;
    for _ in 0..10_000 {
        let k = rng.gen_range(1..=6);
        let delays: Vec<f64> = (0..k).map(|_| rng.gen_range(1e-3..5.0)).collect();
        let total = rng.gen_range(0..5000u64);
        let counts = partition(total, &delays).unwrap();
        check(counts.iter().sum::<u64>() == total, || {
            format!("{delays:?} {total}: sum")
        })?;
        let inv: f64 = delays.iter().map(|d| 1.0 / d).sum();
        for (c, d) in counts.iter().zip(&delays) {
            let ideal = total as f64 / d / inv;
            check((*c as f64 - ideal).abs() <= 1.0, || {
                format!("{delays:?} {total}: {c} vs {ideal}")
            })?;
        }
        if let Some(oracle) = largest_remainder(total, &delays) {
            check(oracle == counts, || {
                format!("{delays:?} {total}: {counts:?} vs {oracle:?}")
            })?;
            compared += 1;
        }
    }
    Ok(format!(
        "10000 cases, {compared} matched the oracle exactly"
    ))
}

// ---------------------------------------------------------------------------

fn scan_runs() -> Vec<ScenarioConfig> {
    let mut runs = stress_configs();
    for protocol in Protocol::ALL {
        runs.push(ScenarioConfig {
            protocol,
            ..ScenarioConfig::default()
        });
    }
    runs
}

fn operability() -> Outcome {
    let mut sends = 0;
    let mut deaths = 0;
    for cfg in scan_runs() {
        let out = engine::run_traced(&cfg).unwrap();
        let trace = out.trace.unwrap();
        for (t, node, remaining, initial) in transmissions(&trace) {
            // the trace prints nine decimals
            check(remaining >= 0.4 * initial - 5e-10, || {
                format!(
                    "{} seed {}: node {node} transmits at {t} with {remaining}/{initial}",
                    cfg.protocol, cfg.seed
                )
            })?;
            sends += 1;
        }
        deaths += trace.lines().filter(|l| l.contains("dead=")).count();
    }
    check(deaths > 0, || "no run drove a node to its reserve".into())?;

    // a relay just above the reserve cannot afford the flow: its links get LE = 0
    let relay_le = |pre: f64| -> Vec<f64> {
        let cfg = small_config(3, vec![flow(0, 2, 600, 20.0, 1.0)], 10.0);
        let pre = pre * cfg.energy_initial;
        let mut sim = Simulation::builder(cfg)
            .static_positions(positions(&[(10.0, 50.0), (50.0, 50.0), (90.0, 50.0)]))
            .pre_consumed(1, pre)
            .trace(true)
            .build()
            .unwrap();
        sim.run_to_end();
        sim.trace_text()
            .unwrap()
            .lines()
            .filter(|l| l.contains("link=0->1") || l.contains("link=1->2"))
            .map(|l| {
                let tok = l.split(' ').find_map(|t| t.strip_prefix("le=")).unwrap();
                tok.parse::<f64>().unwrap()
            })
            .collect()
    };
    let starved = relay_le(0.59);
    check(
        !starved.is_empty() && starved.iter().all(|&le| le == 0.0),
        || format!("starved relay LE {starved:?}"),
    )?;
    let healthy = relay_le(0.0);
    check(
        !healthy.is_empty() && healthy.iter().all(|&le| le > 0.0),
        || format!("healthy relay LE {healthy:?}"),
    )?;
    Ok(format!(
        "{sends} transmissions scanned, {deaths} deaths, starved relay LE = 0"
    ))
}

// ---------------------------------------------------------------------------

fn conservation_and_determinism() -> Outcome {
    let mut checks = 0;
    for cfg in scan_runs() {
        let mut sim = Simulation::builder(cfg.clone())
            .trace(true)
            .build()
            .unwrap();
        while sim.step() {
            let r = sim.report();
            check(r.generated == r.delivered + r.dropped + r.in_flight, || {
                format!("{} seed {} at {}: {r:?}", cfg.protocol, cfg.seed, sim.now())
            })?;
            checks += 1;
        }
        let first = sim.finish();
        let again = engine::run_traced(&cfg).unwrap();
        check(first.trace == again.trace, || {
            format!("{} seed {}: trace differs", cfg.protocol, cfg.seed)
        })?;
        check(first.report.csv_row() == again.report.csv_row(), || {
            "csv differs".into()
        })?;
    }

    let base_path = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../scenarios/default_50.toml"
    );
    let base = ScenarioConfig::load(std::path::Path::new(base_path))
        .unwrap()
        .validate()
        .unwrap();
    let spec_text = |p: usize| {
        format!(
            "base = {base_path:?}\nnode_counts = [20, 50]\nprotocols = [\"dbmf\", \"single_path\", \"mmre\", \"zd\"]\nseeds = [1, 2, 3]\nparallelism = {p}\n"
        )
    };
    let serial = run_matrix(&MatrixSpec::from_toml_str(&spec_text(1)).unwrap(), &base).unwrap();
    let parallel = run_matrix(&MatrixSpec::from_toml_str(&spec_text(4)).unwrap(), &base).unwrap();
    check(to_csv(&serial) == to_csv(&parallel), || {
        "csv depends on parallelism".into()
    })?;
    Ok(format!(
        "{checks} event-level balance checks, {} matrix rows",
        serial.len()
    ))
}

// ---------------------------------------------------------------------------

/// One-sided sign test: probability of at least `wins` successes out of
/// `wins + losses` fair coin flips. Ties are dropped beforehand.
fn sign_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    let mut p = 0.0;
    let mut comb = 1.0f64;
    for k in 0..=n {
        if k >= wins {
            p += comb;
        }
        comb = comb * (n - k) as f64 / (k + 1) as f64;
    }
    p / 2f64.powi(n as i32)
}

struct Comparison {
    what: String,
    mean_dbmf: f64,
    mean_other: f64,
    wins: usize,
    losses: usize,
    p: f64,
    pass: bool,
}

/// `better(x, y)` says whether dbmf's value `x` beats the baseline's `y`.
fn compare(what: String, pairs: &[(f64, f64)], better: fn(f64, f64) -> bool) -> Comparison {
    let n = pairs.len().max(1) as f64;
    let mean_dbmf = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_other = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let wins = pairs.iter().filter(|(x, y)| better(*x, *y)).count();
    let losses = pairs.iter().filter(|(x, y)| better(*y, *x)).count();
    let p = sign_p(wins, losses);
    Comparison {
        pass: better(mean_dbmf, mean_other) && p < 0.05,
        what,
        mean_dbmf,
        mean_other,
        wins,
        losses,
        p,
    }
}

fn directional() -> Outcome {
    let sizes = [20usize, 50, 100];
    let seeds: Vec<u64> = (1..=10).collect();
    let protocols = [Protocol::Dbmf, Protocol::Mmre, Protocol::Zd];
    let mut runs: BTreeMap<(Protocol, usize, u64), MetricsReport> = BTreeMap::new();
    for &protocol in &protocols {
        for &n in &sizes {
            for &seed in &seeds {
                let base = ScenarioConfig::default();
                let template = base.flows[0].clone();
                let cfg = ScenarioConfig {
                    node_count: n,
                    protocol,
                    seed,
                    flows: vec![dbmf::model::Flow {
                        dst: dbmf::model::NodeId(n - 1),
                        ..template
                    }],
                    ..base
                };
                let r = engine::run(&cfg).unwrap().report;
                assert_eq!(r.generated, r.delivered + r.dropped + r.in_flight);
                runs.insert((protocol, n, seed), r);
            }
        }
    }
    let mut results = Vec::new();
    for other in [Protocol::Mmre, Protocol::Zd] {
        let mut pdr = Vec::new();
        let mut delay = Vec::new();
        for &n in &sizes {
            for &seed in &seeds {
                let (a, b) = (&runs[&(Protocol::Dbmf, n, seed)], &runs[&(other, n, seed)]);
                pdr.push((a.pdr, b.pdr));
                if a.delivered > 0 && b.delivered > 0 {
                    delay.push((a.avg_delay_ms, b.avg_delay_ms));
                }
            }
        }
        let growth: Vec<(f64, f64)> = seeds
            .iter()
            .map(|&s| {
                let g = |p| runs[&(p, 100, s)].drop_rate - runs[&(p, 20, s)].drop_rate;
                (g(Protocol::Dbmf), g(other))
            })
            .collect();
        results.push(compare(format!("PDR vs {other}"), &pdr, |x, y| x > y));
        results.push(compare(format!("delay vs {other}"), &delay, |x, y| x < y));
        results.push(compare(
            format!("drop growth vs {other}"),
            &growth,
            |x, y| x < y,
        ));
    }
    let detail: Vec<String> = results
        .iter()
        .map(|c| {
            format!(
                "    {} {}: dbmf {:.3} vs {:.3}, sign {}-{} p={:.4}",
                if c.pass { "ok  " } else { "FAIL" },
                c.what,
                c.mean_dbmf,
                c.mean_other,
                c.wins,
                c.losses,
                c.p
            )
        })
        .collect();
    let text = format!(
        "{} of {} orderings hold\n{}",
        results.iter().filter(|c| c.pass).count(),
        results.len(),
        detail.join("\n")
    );
    if results.iter().all(|c| c.pass) {
        Ok(text)
    } else {
        Err(text)
    }
}

// ---------------------------------------------------------------------------

fn queue_balance() -> Outcome {
    let offered = 80.0;
    let mut cfg = small_config(2, vec![flow(0, 1, 4000, offered, 1.0)], 60.0);
    cfg.max_departure_rate = 50.0;
    let excess = offered - cfg.max_departure_rate;
    let mut sim = static_sim(cfg, &[(10.0, 10.0), (40.0, 10.0)], false);
    sim.run_to_end();
    // after the queue has filled and before the source stops
    let (from, to) = (11.0, 41.0);
    let dropped = sim
        .packets()
        .iter()
        .filter(|p| p.created_at >= from && p.created_at < to && p.drop_reason().is_some())
        .count();
    let rate = dropped as f64 / (to - from);
    check((rate - excess).abs() / excess <= 0.05, || {
        format!("drop rate {rate:.3}/s, expected {excess}")
    })?;
    Ok(format!("steady drop rate {rate:.3}/s vs {excess}/s"))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 rule tables", rule_tables, Duration::from_secs(1)),
        ("2 squash", squash_grid, Duration::from_secs(1)),
        ("3 friis roundtrip", friis_roundtrip, Duration::from_secs(1)),
        ("4 telescoping slope", telescoping, Duration::from_secs(1)),
        ("5 delay partition", partition_fuzz, Duration::from_secs(5)),
        ("6 operability", operability, Duration::from_secs(60)),
        (
            "7 conservation and determinism",
            conservation_and_determinism,
            Duration::from_secs(60),
        ),
        (
            "8 directional ordering",
            directional,
            Duration::from_secs(15 * 60),
        ),
        ("9 queue balance", queue_balance, Duration::from_secs(60)),
    ];
    let mut failed = 0;
    for (name, run, budget) in criteria {
        let started = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(run)) {
            Ok(o) => o,
            Err(_) => Err("panicked".into()),
        };
        let elapsed = started.elapsed();
        let outcome = match outcome {
            Ok(msg) if elapsed > budget => {
                Err(format!("{msg}; took {elapsed:.2?}, budget {budget:?}"))
            }
            other => other,
        };
        match outcome {
            Ok(msg) => println!("PASS criterion {name} ({elapsed:.2?}): {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {name} ({elapsed:.2?}): {msg}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
