//! Random Waypoint kinematics and the Friis free-space radio model.

use rand::Rng;
use thiserror::Error;

use crate::model::ScenarioConfig;

/// Co-located nodes are treated as this far apart before evaluating Friis.
pub const MIN_DISTANCE: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum MobilityError {
    #[error("distance must be > 0, got {0}")]
    ZeroDistance(f64),
    #[error("received power must be > 0, got {0}")]
    NonPositivePower(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Position {
        Position { x, y }
    }

    pub fn distance(self, other: Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn clamp_to(self, width: f64, height: f64) -> Position {
        Position {
            x: self.x.clamp(0.0, width),
            y: self.y.clamp(0.0, height),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaypointState {
    pub position: Position,
    pub target: Position,
    /// m/s
    pub speed: f64,
    /// seconds
    pub pause_remaining: f64,
    /// Total metres travelled so far.
    pub odometer: f64,
    /// Total seconds spent moving so far.
    pub moving_time: f64,
}

impl WaypointState {
    /// A node pinned at `position`.
    pub fn fixed(position: Position) -> WaypointState {
        WaypointState {
            position,
            target: position,
            speed: 0.0,
            pause_remaining: 0.0,
            odometer: 0.0,
            moving_time: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioParams {
    pub trans_pow: f64,
    pub k_const: f64,
    pub q_exp: u32,
    /// metres
    pub rad_rng: f64,
}

fn uniform_point<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Position {
    Position {
        x: rng.gen::<f64>() * cfg.area_width,
        y: rng.gen::<f64>() * cfg.area_height,
    }
}

fn uniform_speed<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> f64 {
    if cfg.speed_max > cfg.speed_min {
        rng.gen_range(cfg.speed_min..=cfg.speed_max)
    } else {
        cfg.speed_min
    }
}

/// Uniform initial placement, one target and speed per node.
pub fn init_positions<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Vec<WaypointState> {
    (0..cfg.node_count)
        .map(|_| {
            let position = uniform_point(cfg, rng);
            let target = uniform_point(cfg, rng);
            let speed = uniform_speed(cfg, rng);
            WaypointState {
                position,
                target,
                speed,
                pause_remaining: 0.0,
                odometer: 0.0,
                moving_time: 0.0,
            }
        })
        .collect()
}

/// Moves a node for `dt` seconds: travel to the target, pause, pick a new
/// target and speed, repeat until the time is used up.
pub fn advance<R: Rng + ?Sized>(
    state: WaypointState,
    dt: f64,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> WaypointState {
    let mut s = state;
    let mut left = dt;
    // bounded: each pass either consumes all remaining time or reaches a waypoint
    while left > 0.0 {
        if s.pause_remaining > 0.0 {
            if s.pause_remaining >= left {
                s.pause_remaining -= left;
                break;
            }
            left -= s.pause_remaining;
            s.pause_remaining = 0.0;
            s.target = uniform_point(cfg, rng);
            s.speed = uniform_speed(cfg, rng);
            continue;
        }
        let dist = s.position.distance(s.target);
        if dist == 0.0 {
            s.pause_remaining = cfg.pause_time;
            if cfg.pause_time <= 0.0 {
                s.target = uniform_point(cfg, rng);
                s.speed = uniform_speed(cfg, rng);
            }
            continue;
        }
        if s.speed <= 0.0 {
            break;
        }
        let reach = s.speed * left;
        if reach >= dist {
            let t = dist / s.speed;
            s.position = s.target;
            s.odometer += dist;
            s.moving_time += t;
            left -= t;
            s.pause_remaining = cfg.pause_time;
        } else {
            let frac = reach / dist;
            s.position = Position {
                x: s.position.x + (s.target.x - s.position.x) * frac,
                y: s.position.y + (s.target.y - s.position.y) * frac,
            };
            s.odometer += reach;
            s.moving_time += left;
            left = 0.0;
        }
    }
    s.position = s.position.clamp_to(cfg.area_width, cfg.area_height);
    s
}

/// Friis received power, `K * P_t / d^q`.
pub fn rss_at(radio: &RadioParams, distance: f64) -> Result<f64, MobilityError> {
    if distance.is_nan() || distance <= 0.0 {
        return Err(MobilityError::ZeroDistance(distance));
    }
    Ok(radio.k_const * radio.trans_pow / distance.powi(radio.q_exp as i32))
}

/// Received power with co-located nodes clamped to [`MIN_DISTANCE`].
pub fn clamped_rss(radio: &RadioParams, distance: f64) -> f64 {
    rss_at(radio, distance.max(MIN_DISTANCE)).expect("clamped distance is positive")
}

/// Inverse Friis: distance implied by a received power sample.
pub fn distance_from_rss(radio: &RadioParams, rec_pow: f64) -> Result<f64, MobilityError> {
    if rec_pow.is_nan() || rec_pow <= 0.0 {
        return Err(MobilityError::NonPositivePower(rec_pow));
    }
    let ratio = radio.k_const * radio.trans_pow / rec_pow;
    Ok(match radio.q_exp {
        2 => ratio.sqrt(),
        3 => ratio.cbrt(),
        q => ratio.powf(1.0 / q as f64),
    })
}

/// Bidirectional link rule: both ends must reach each other.
pub fn in_range(a: Position, b: Position, radio_a: &RadioParams, radio_b: &RadioParams) -> bool {
    a.distance(b) <= radio_a.rad_rng.min(radio_b.rad_rng)
}
