//! Discrete-event model of an isochronous master/slave fieldbus.
//!
//! Each cycle the managing node (MN) polls every controlled node (CN) in
//! configured order: the request is serialized onto the wire, the CN
//! processes it, and its response is serialized back. The next poll starts
//! when the previous response has arrived. Time is kept in nanoseconds.

mod latency;
mod payload;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use latency::{latency_report, LatencyStats};
pub use payload::{Mode, NodePayload};

use crate::events::Micros;

pub type Nanos = u64;

pub const NANOS_PER_MICRO: Nanos = 1_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BusError {
    #[error("invalid bus configuration: {0}")]
    Invalid(String),
    #[error("slot budget {needed_us:.3} us exceeds cycle time {cycle_us} us")]
    SlotBudget { needed_us: f64, cycle_us: Micros },
    #[error("cycle {cycle}: {kind} payload of {len} bytes exceeds {budget}-byte budget of node {node}")]
    PayloadTooLarge {
        cycle: u64,
        node: String,
        kind: &'static str,
        len: usize,
        budget: usize,
    },
    #[error("{0} behaviors supplied for {1} controlled nodes")]
    BehaviorCount(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Camera,
    Servo,
    Io,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub name: String,
    pub role: NodeRole,
    /// Fixed request frame payload, bytes.
    pub request_bytes: usize,
    /// Fixed response frame payload, bytes.
    pub response_bytes: usize,
    pub processing_delay_us: Micros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverflowPolicy {
    /// Discard the late response and skip the rest of the cycle.
    #[default]
    Drop,
    /// Finish the cycle late; the next cycle starts when it ends.
    Extend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BusConfig {
    pub cycle_time_us: Micros,
    pub wire_rate_bps: u64,
    pub nodes: Vec<NodeConfig>,
    pub overflow: OverflowPolicy,
    /// CN responses are heard directly by the other CNs instead of being
    /// relayed by the MN.
    pub direct_cross_traffic: bool,
}

impl Default for BusConfig {
    fn default() -> Self {
        let node = |name: &str, role, delay| NodeConfig {
            name: name.to_string(),
            role,
            request_bytes: 64,
            response_bytes: 64,
            processing_delay_us: delay,
        };
        Self {
            cycle_time_us: 1_000,
            wire_rate_bps: 100_000_000,
            nodes: vec![
                node("camera", NodeRole::Camera, 50),
                node("servo", NodeRole::Servo, 20),
                node("io", NodeRole::Io, 10),
            ],
            overflow: OverflowPolicy::Drop,
            direct_cross_traffic: false,
        }
    }
}

impl BusConfig {
    /// Structural checks; see [`BusConfig::check_budget`] for timing.
    pub fn validate(&self) -> Result<(), BusError> {
        if self.cycle_time_us == 0 {
            return Err(BusError::Invalid("cycle_time_us must be > 0".into()));
        }
        if self.wire_rate_bps == 0 {
            return Err(BusError::Invalid("wire_rate_bps must be > 0".into()));
        }
        if self.nodes.is_empty() {
            return Err(BusError::Invalid("at least one controlled node".into()));
        }
        Ok(())
    }

    /// Wire time of `bytes`, rounded up to whole nanoseconds.
    pub fn transmission_ns(&self, bytes: usize) -> Nanos {
        let bits = bytes as u128 * 8 * 1_000_000_000;
        bits.div_ceil(self.wire_rate_bps as u128) as Nanos
    }

    pub fn slot_ns(&self, node: &NodeConfig) -> Nanos {
        self.transmission_ns(node.request_bytes)
            + node.processing_delay_us * NANOS_PER_MICRO
            + self.transmission_ns(node.response_bytes)
    }

    /// Checks that all slots fit in one cycle.
    pub fn check_budget(&self) -> Result<(), BusError> {
        self.validate()?;
        let needed: Nanos = self.nodes.iter().map(|n| self.slot_ns(n)).sum();
        if needed > self.cycle_time_us * NANOS_PER_MICRO {
            return Err(BusError::SlotBudget {
                needed_us: needed as f64 / 1e3,
                cycle_us: self.cycle_time_us,
            });
        }
        Ok(())
    }

    pub fn cycle_ns(&self) -> Nanos {
        self.cycle_time_us * NANOS_PER_MICRO
    }

    pub fn node_with_role(&self, role: NodeRole) -> Option<usize> {
        self.nodes.iter().position(|n| n.role == role)
    }
}

/// Behavior of a controlled node.
pub trait ControlledNode {
    fn respond(&mut self, cycle: u64, now: Nanos, request: &NodePayload) -> NodePayload;

    /// Called with other nodes' responses when direct cross-traffic is on.
    fn on_broadcast(&mut self, _from: usize, _payload: &NodePayload) {}
}

/// Behavior of the managing node.
pub trait ManagingNode {
    /// Called once before the first poll of a cycle.
    fn begin_cycle(&mut self, _cycle: u64, _start: Nanos) {}

    fn request(&mut self, cycle: u64, node: usize, now: Nanos) -> NodePayload;

    fn on_response(&mut self, cycle: u64, node: usize, payload: &NodePayload, now: Nanos);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub node: usize,
    pub request: NodePayload,
    /// `None` when the response was dropped for overflowing the cycle.
    pub response: Option<NodePayload>,
    pub req_start: Nanos,
    pub req_arrival: Nanos,
    pub resp_start: Nanos,
    pub resp_arrival: Nanos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotOverflow {
    pub node: usize,
    /// How far past the cycle boundary the response would arrive.
    pub late_by: Nanos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusCycle {
    pub index: u64,
    pub start: Nanos,
    pub end: Nanos,
    pub exchanges: Vec<Exchange>,
    pub overflow: Option<SlotOverflow>,
}

/// Cyclic scheduler; call [`Bus::step`] once per cycle.
#[derive(Debug, Clone)]
pub struct Bus {
    config: BusConfig,
    next_index: u64,
    next_start: Nanos,
}

impl Bus {
    pub fn new(config: BusConfig) -> Result<Self, BusError> {
        config.validate()?;
        Ok(Self {
            config,
            next_index: 0,
            next_start: 0,
        })
    }

    pub fn config(&self) -> &BusConfig {
        &self.config
    }

    /// Start time of the next cycle.
    pub fn next_start(&self) -> Nanos {
        self.next_start
    }

    pub fn next_index(&self) -> u64 {
        self.next_index
    }

    pub fn step(
        &mut self,
        mn: &mut dyn ManagingNode,
        nodes: &mut [&mut dyn ControlledNode],
    ) -> Result<BusCycle, BusError> {
        let cfg = &self.config;
        if nodes.len() != cfg.nodes.len() {
            return Err(BusError::BehaviorCount(nodes.len(), cfg.nodes.len()));
        }
        let index = self.next_index;
        let start = self.next_start;
        let boundary = start + cfg.cycle_ns();
        mn.begin_cycle(index, start);

        let mut exchanges = Vec::with_capacity(nodes.len());
        let mut overflow = None;
        let mut now = start;
        for (i, node_cfg) in cfg.nodes.iter().enumerate() {
            let request = mn.request(index, i, now);
            check_fits(index, node_cfg, &request, node_cfg.request_bytes)?;
            let req_start = now;
            let req_arrival = req_start + cfg.transmission_ns(node_cfg.request_bytes);
            let response = nodes[i].respond(index, req_arrival, &request);
            check_fits(index, node_cfg, &response, node_cfg.response_bytes)?;
            let resp_start = req_arrival + node_cfg.processing_delay_us * NANOS_PER_MICRO;
            let resp_arrival = resp_start + cfg.transmission_ns(node_cfg.response_bytes);
            now = resp_arrival;

            let late = resp_arrival > boundary;
            if late && overflow.is_none() {
                overflow = Some(SlotOverflow {
                    node: i,
                    late_by: resp_arrival - boundary,
                });
            }
            let dropped = late && cfg.overflow == OverflowPolicy::Drop;
            if !dropped {
                mn.on_response(index, i, &response, resp_arrival);
                if cfg.direct_cross_traffic {
                    for (j, other) in nodes.iter_mut().enumerate() {
                        if j != i {
                            other.on_broadcast(i, &response);
                        }
                    }
                }
            }
            exchanges.push(Exchange {
                node: i,
                request,
                response: (!dropped).then_some(response),
                req_start,
                req_arrival,
                resp_start,
                resp_arrival,
            });
            if dropped {
                break;
            }
        }

        let end = match cfg.overflow {
            OverflowPolicy::Drop => boundary,
            OverflowPolicy::Extend => boundary.max(now),
        };
        self.next_index += 1;
        self.next_start = end;
        Ok(BusCycle {
            index,
            start,
            end,
            exchanges,
            overflow,
        })
    }
}

fn check_fits(
    cycle: u64,
    node: &NodeConfig,
    payload: &NodePayload,
    budget: usize,
) -> Result<(), BusError> {
    let len = payload.encoded_len();
    if len > budget {
        return Err(BusError::PayloadTooLarge {
            cycle,
            node: node.name.clone(),
            kind: payload.kind(),
            len,
            budget,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleLog {
    pub config: BusConfig,
    pub cycles: Vec<BusCycle>,
}

impl CycleLog {
    pub fn overflow_count(&self) -> usize {
        self.cycles.iter().filter(|c| c.overflow.is_some()).count()
    }

    /// Two rows per exchange (request, then response):
    /// `cycle,node,req_t,resp_t,payload_kind,payload_bytes`, times in us.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("cycle,node,req_t,resp_t,payload_kind,payload_bytes\n");
        for c in &self.cycles {
            for ex in &c.exchanges {
                let name = &self.config.nodes[ex.node].name;
                let req_t = fmt_us(ex.req_start);
                let resp_t = match ex.response {
                    Some(_) => fmt_us(ex.resp_arrival),
                    None => String::new(),
                };
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    c.index,
                    name,
                    req_t,
                    resp_t,
                    ex.request.kind(),
                    ex.request.encoded_len()
                );
                if let Some(resp) = &ex.response {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{},{}",
                        c.index,
                        name,
                        req_t,
                        resp_t,
                        resp.kind(),
                        resp.encoded_len()
                    );
                }
            }
        }
        s
    }
}

/// Nanoseconds formatted as microseconds with three decimals.
pub fn fmt_us(ns: Nanos) -> String {
    format!("{}.{:03}", ns / 1000, ns % 1000)
}

/// Runs cycles until the next cycle would start at or after `duration_us`.
pub fn run_bus(
    config: &BusConfig,
    mn: &mut dyn ManagingNode,
    nodes: &mut [&mut dyn ControlledNode],
    duration_us: Micros,
) -> Result<CycleLog, BusError> {
    let mut bus = Bus::new(config.clone())?;
    let mut cycles = Vec::new();
    let limit = duration_us * NANOS_PER_MICRO;
    while bus.next_start() < limit {
        cycles.push(bus.step(mn, nodes)?);
    }
    Ok(CycleLog {
        config: config.clone(),
        cycles,
    })
}

/// A node that always answers with the same payload.
#[derive(Debug, Clone)]
pub struct FixedResponder(pub NodePayload);

impl ControlledNode for FixedResponder {
    fn respond(&mut self, _: u64, _: Nanos, _: &NodePayload) -> NodePayload {
        self.0.clone()
    }
}

/// A managing node that sends `Empty` to everyone and ignores responses.
#[derive(Debug, Clone, Default)]
pub struct IdleManager;

impl ManagingNode for IdleManager {
    fn request(&mut self, _: u64, _: usize, _: Nanos) -> NodePayload {
        NodePayload::Empty
    }
    fn on_response(&mut self, _: u64, _: usize, _: &NodePayload, _: Nanos) {}
}
