use serde::{Deserialize, Serialize};

use super::{CycleLog, Nanos, NodeRole};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    /// Injections that never reached the servo within the log.
    pub undelivered: usize,
    pub min_us: f64,
    pub mean_us: f64,
    pub max_us: f64,
    /// `max - min`.
    pub jitter_us: f64,
    pub min_cycles: f64,
    pub mean_cycles: f64,
    pub max_cycles: f64,
}

impl LatencyStats {
    pub fn from_samples(samples: &[Nanos], undelivered: usize, cycle_ns: Nanos) -> Self {
        if samples.is_empty() {
            return Self {
                undelivered,
                ..Self::default()
            };
        }
        let min = *samples.iter().min().expect("non-empty") as f64 / 1e3;
        let max = *samples.iter().max().expect("non-empty") as f64 / 1e3;
        let mean = samples.iter().map(|&s| s as f64).sum::<f64>() / samples.len() as f64 / 1e3;
        let cycle_us = cycle_ns as f64 / 1e3;
        Self {
            count: samples.len(),
            undelivered,
            min_us: min,
            mean_us: mean,
            max_us: max,
            jitter_us: max - min,
            min_cycles: min / cycle_us,
            mean_cycles: mean / cycle_us,
            max_cycles: max / cycle_us,
        }
    }
}

/// Per-injection camera-to-servo latencies.
///
/// A position that becomes available at the camera at time `t` leaves with
/// the first camera response sent at or after `t`; it reaches the servo with
/// the first servo request sent after that response arrives at the MN (or,
/// with direct cross-traffic, when the camera response itself arrives).
pub fn latency_samples(log: &CycleLog, injections: &[Nanos]) -> (Vec<Nanos>, usize) {
    let (Some(cam), Some(servo)) = (
        log.config.node_with_role(NodeRole::Camera),
        log.config.node_with_role(NodeRole::Servo),
    ) else {
        return (Vec::new(), injections.len());
    };
    let direct = log.config.direct_cross_traffic;

    // (response departure, response arrival) of delivered camera reports
    let camera: Vec<(Nanos, Nanos)> = log
        .cycles
        .iter()
        .flat_map(|c| c.exchanges.iter())
        .filter(|e| e.node == cam && e.response.is_some())
        .map(|e| (e.resp_start, e.resp_arrival))
        .collect();
    // (request departure, request arrival) of servo polls
    let servo: Vec<(Nanos, Nanos)> = log
        .cycles
        .iter()
        .flat_map(|c| c.exchanges.iter())
        .filter(|e| e.node == servo)
        .map(|e| (e.req_start, e.req_arrival))
        .collect();

    let mut samples = Vec::with_capacity(injections.len());
    let mut undelivered = 0;
    for &t in injections {
        let ci = camera.partition_point(|&(dep, _)| dep < t);
        let Some(&(_, cam_arrival)) = camera.get(ci) else {
            undelivered += 1;
            continue;
        };
        let delivered = if direct {
            Some(cam_arrival)
        } else {
            let si = servo.partition_point(|&(dep, _)| dep < cam_arrival);
            servo.get(si).map(|&(_, arr)| arr)
        };
        match delivered {
            Some(at) => samples.push(at - t),
            None => undelivered += 1,
        }
    }
    (samples, undelivered)
}

pub fn latency_report(log: &CycleLog, injections: &[Nanos]) -> LatencyStats {
    let (samples, undelivered) = latency_samples(log, injections);
    LatencyStats::from_samples(&samples, undelivered, log.config.cycle_ns())
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;

    fn log(cycles: u64) -> CycleLog {
        let cfg = BusConfig::default();
        let mut a = FixedResponder(NodePayload::Empty);
        let mut b = FixedResponder(NodePayload::Empty);
        let mut c = FixedResponder(NodePayload::Empty);
        let mut nodes: [&mut dyn ControlledNode; 3] = [&mut a, &mut b, &mut c];
        run_bus(&cfg, &mut IdleManager, &mut nodes, cycles * cfg.cycle_time_us).unwrap()
    }

    #[test]
    fn ready_before_poll_within_one_cycle() {
        let log = log(5);
        let cam = &log.cycles[2].exchanges[0];
        let stats = latency_report(&log, &[cam.resp_start - 1]);
        assert_eq!(stats.count, 1);
        assert!(stats.max_cycles <= 1.0);
    }

    #[test]
    fn ready_after_poll_within_two_cycles() {
        let log = log(5);
        let cam = &log.cycles[2].exchanges[0];
        let stats = latency_report(&log, &[cam.resp_start + 1]);
        assert_eq!(stats.count, 1);
        assert!(stats.max_cycles > 1.0 && stats.max_cycles <= 2.0);
    }

    #[test]
    fn late_injection_is_undelivered() {
        let log = log(2);
        let stats = latency_report(&log, &[5_000_000]);
        assert_eq!((stats.count, stats.undelivered), (0, 1));
    }
}
