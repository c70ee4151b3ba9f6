//! Event-camera ball tracking on a simulated fieldbus.
//!
//! Module map:
//!
//! - [`events`]: address-events, ordered streams, CSV and binary formats.
//! - [`scene`]: deterministic synthetic ball scenes with tagged noise.
//! - [`ldsi`]: the layered excitation/threshold/decay event filter.
//! - [`tracker`]: windowed vicinity-vote position estimates.
//! - [`frame`]: frame-camera baseline (threshold band, erosion, blobs).
//! - [`kinematics`]: five-bar robot inverse and forward kinematics.
//! - [`netsim`]: isochronous master/slave bus simulation and latency stats.
//! - [`config`]: TOML run configuration with presets and dotted overrides.
//! - [`pipeline`]: the closed loop over the bus, reports and run bundles.
//! - [`live`]: line-delimited JSON and WebSocket endpoint for live runs.

pub mod config;
pub mod events;
pub mod frame;
pub mod kinematics;
pub mod ldsi;
pub mod live;
pub mod netsim;
pub mod pipeline;
pub mod scene;
pub mod tracker;

pub use events::{merge_streams, Event, EventStream, Micros, Polarity, SensorGeometry};
pub use ldsi::{filter_stream, FilterPreset, LdsiParams};
pub use tracker::{PositionEstimate, TrackerParams};
pub use kinematics::{JointAngles, RobotGeometry};
pub use netsim::{BusConfig, Mode};
pub use config::RunSpec;
pub use pipeline::{run, RunReport};
