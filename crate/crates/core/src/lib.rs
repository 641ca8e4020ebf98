//! Discrete-event MANET simulator with fuzzy link-life estimation and
//! delay-balanced multipath routing.
//!
//! Module map: [`model`] holds shared types and scenario config, [`mobility`]
//! the waypoint kinematics and Friis radio, [`linklife`] the mobility, energy
//! and drop-ratio estimators with the rule tables, [`routing`] candidate
//! ranking and packet partitioning, [`engine`] the event loop, [`report`] the
//! run metrics and CSV, and [`cli`] the command line front end.

pub mod cli;
pub mod engine;
pub mod linklife;
pub mod mobility;
pub mod model;
pub mod report;
pub mod routing;
