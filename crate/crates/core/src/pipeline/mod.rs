//! Closed tracking loop over the simulated bus.
//!
//! A [`Session`] owns one path (event camera or frame camera) and advances
//! it one bus cycle at a time; [`run`] drives sessions to the end of the
//! scene and summarises them in a [`RunReport`].

mod bundle;
mod nodes;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bundle::{write_bundle, BUNDLE_FILES};

use crate::config::{ConfigError, RunSpec};
use crate::events::{Event, EventError, EventStream, Micros};
use crate::kinematics::{forward_kinematics, inverse_kinematics, workspace_contains, JointAngles, KinematicsError};
use crate::ldsi::{filter_metrics, filter_stream, FilterMetrics, LdsiError, LdsiParams};
use crate::netsim::{
    latency_report, Bus, BusConfig, BusCycle, BusError, ControlledNode, CycleLog, LatencyStats, Mode,
    NodePayload, NodeRole, OverflowPolicy, NANOS_PER_MICRO,
};
use crate::scene::{generate, ground_truth, GeneratedScene, SceneError};
use crate::tracker::{TrackerError, TrackerParams};

use nodes::{EventCamera, FrameCamera, Manager, Node, Servo};

/// Bytes per event on the event path (the binary record size).
pub const EVENT_BYTES: u64 = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Ldsi(#[from] LdsiError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("bus needs exactly one camera and one servo node")]
    Roles,
    #[error("sensor pixel ({0}, {1}) maps to ({2:.3}, {3:.3}) mm, outside the robot workspace")]
    Workspace(u16, u16, f64, f64),
    #[error("cycle {cycle}: tracked position ({x:.3}, {y:.3}) mm is unreachable")]
    Unreachable { cycle: u64, x: f64, y: f64 },
    #[error("camera to servo latency of {0:.3} cycles exceeds 2 cycles without overflow")]
    LatencyBound(f64),
    #[error("mode comparison needs a run in `both` mode")]
    NotBoth,
    #[error("{0}")]
    Io(String),
}

/// One bus cycle as seen by the robot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: u64,
    /// When the servo was sampled, us.
    pub t_us: f64,
    /// Commanded position, if any.
    pub target_mm: Option<[f64; 2]>,
    pub command: Option<JointAngles>,
    pub angles: JointAngles,
    pub tcp_mm: [f64; 2],
    pub truth_mm: [f64; 2],
    /// `|tcp - truth|`.
    pub error_mm: f64,
    /// Age of the observation behind the current command, us.
    pub lag_us: Option<f64>,
}

/// Results of one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathReport {
    pub path: Mode,
    pub cycles: u64,
    pub overflow_cycles: usize,
    /// Positions produced by the camera.
    pub estimates: usize,
    /// Cycles in which the servo received a command.
    pub commands: usize,
    /// Cycles scored after warm-up.
    pub scored_cycles: usize,
    pub rms_error_mm: f64,
    pub max_error_mm: f64,
    /// Largest observation age behind a command, ms.
    pub peak_lag_ms: Option<f64>,
    pub latency: LatencyStats,
    #[serde(skip)]
    pub records: Vec<CycleRecord>,
    #[serde(skip)]
    pub log: Option<CycleLog>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataVolume {
    pub event_bytes: u64,
    pub frame_bytes: u64,
}

impl DataVolume {
    pub fn ratio(&self) -> Option<f64> {
        (self.frame_bytes > 0).then(|| self.event_bytes as f64 / self.frame_bytes as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: Mode,
    pub duration_us: Micros,
    pub event: Option<PathReport>,
    pub frame: Option<PathReport>,
    pub data_volume: DataVolume,
    /// Event-to-frame byte ratio.
    pub byte_ratio: Option<f64>,
    pub filter: FilterMetrics,
}

impl RunReport {
    pub fn paths(&self) -> impl Iterator<Item = &PathReport> {
        self.event.iter().chain(self.frame.iter())
    }
}

/// Frame bytes of a greyscale camera over the scene.
pub fn frame_bytes(spec: &RunSpec) -> u64 {
    let c = &spec.camera;
    (c.width * c.height) as u64 * c.frame_count(spec.scene.duration)
}

/// Checks that every sensor pixel the ball can cover maps into the robot
/// workspace.
pub fn check_workspace(spec: &RunSpec) -> Result<(), PipelineError> {
    let g = spec.scene.geometry;
    let r = spec.scene.ball_radius;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    let mut t = 0;
    loop {
        let c = spec.scene.center_at(t);
        for a in 0..2 {
            lo[a] = lo[a].min(c[a] - r);
            hi[a] = hi[a].max(c[a] + r);
        }
        if t >= spec.scene.duration {
            break;
        }
        t = (t + 1000).min(spec.scene.duration);
    }
    let clip = |v: f64, n: u16| v.clamp(0.0, n as f64 - 1.0);
    let (x0, x1) = (clip(lo[0].floor(), g.width()), clip(hi[0].ceil(), g.width()));
    let (y0, y1) = (clip(lo[1].floor(), g.height()), clip(hi[1].ceil(), g.height()));
    for y in y0 as u16..=y1 as u16 {
        for x in x0 as u16..=x1 as u16 {
            let mm = spec.px_to_mm.apply([x as f64, y as f64]);
            if !workspace_contains(&spec.robot, mm) {
                return Err(PipelineError::Workspace(x, y, mm[0], mm[1]));
            }
        }
    }
    Ok(())
}

fn check_bus(bus: &BusConfig) -> Result<(usize, usize), PipelineError> {
    let count = |role| bus.nodes.iter().filter(|n| n.role == role).count();
    if count(NodeRole::Camera) != 1 || count(NodeRole::Servo) != 1 {
        return Err(PipelineError::Roles);
    }
    if bus.overflow == OverflowPolicy::Drop {
        bus.check_budget()?;
    }
    let camera = bus.node_with_role(NodeRole::Camera).ok_or(PipelineError::Roles)?;
    let servo = bus.node_with_role(NodeRole::Servo).ok_or(PipelineError::Roles)?;
    Ok((camera, servo))
}

#[derive(Debug, Clone, Copy, Default)]
struct ErrorStats {
    count: usize,
    sum_sq: f64,
    max: f64,
    peak_lag_us: Option<f64>,
}

/// What a session retains beyond running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Retention {
    /// Keep every bus cycle and cycle record.
    pub history: bool,
    /// Keep every filtered event.
    pub outputs: bool,
    /// Keep filtered events of this recent interval, us.
    pub recent_us: Option<Micros>,
}

impl Retention {
    pub const BATCH: Retention = Retention {
        history: true,
        outputs: true,
        recent_us: None,
    };
}

/// One path of the closed loop, advanced a bus cycle at a time.
#[derive(Debug, Clone)]
pub struct Session {
    spec: RunSpec,
    path: Mode,
    scene: Arc<GeneratedScene>,
    bus: Bus,
    manager: Manager,
    nodes: Vec<Node>,
    camera: usize,
    servo: usize,
    retention: Retention,
    cycles: Vec<BusCycle>,
    records: Vec<CycleRecord>,
    last: Option<CycleRecord>,
    overflow_cycles: usize,
    stats: ErrorStats,
}

impl Session {
    /// `path` must be `Event` or `Frame`.
    pub fn new(
        spec: &RunSpec,
        path: Mode,
        scene: Arc<GeneratedScene>,
        retention: Retention,
    ) -> Result<Self, PipelineError> {
        assert!(path != Mode::Both, "a session runs a single path");
        spec.validate()?;
        let (camera, servo) = check_bus(&spec.bus)?;
        let center = [
            (spec.scene.geometry.width() as f64 - 1.0) / 2.0,
            (spec.scene.geometry.height() as f64 - 1.0) / 2.0,
        ];
        let home = inverse_kinematics(&spec.robot, spec.px_to_mm.apply(center))?;
        let nodes = spec
            .bus
            .nodes
            .iter()
            .map(|n| match n.role {
                NodeRole::Camera if path == Mode::Event => {
                    let mut cam = EventCamera::new(scene.clone(), spec.ldsi, spec.tracker)?;
                    if retention.outputs {
                        cam.outputs = Some(Vec::new());
                    }
                    if let Some(us) = retention.recent_us {
                        cam.recent = Some(Default::default());
                        cam.recent_us = us;
                    }
                    Ok(Node::Event(Box::new(cam)))
                }
                NodeRole::Camera => Ok(Node::Frame(Box::new(FrameCamera::new(
                    spec.scene.clone(),
                    spec.camera,
                    spec.blob,
                    spec.px_to_mm,
                    spec.frame_latency_us,
                )))),
                NodeRole::Servo => Ok(Node::Servo(Servo::new(spec.servo_tau_ms, home))),
                NodeRole::Io => Ok(Node::Io),
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        Ok(Self {
            spec: spec.clone(),
            path,
            scene,
            bus: Bus::new(spec.bus.clone())?,
            manager: Manager::new(spec.robot, spec.px_to_mm, camera, servo),
            nodes,
            camera,
            servo,
            retention,
            cycles: Vec::new(),
            records: Vec::new(),
            last: None,
            overflow_cycles: 0,
            stats: ErrorStats::default(),
        })
    }

    pub fn spec(&self) -> &RunSpec {
        &self.spec
    }

    pub fn path(&self) -> Mode {
        self.path
    }

    pub fn scene(&self) -> &GeneratedScene {
        &self.scene
    }

    /// True once the next cycle would start at or after the scene's end.
    pub fn is_finished(&self) -> bool {
        self.bus.next_start() >= self.spec.scene.duration * NANOS_PER_MICRO
    }

    /// Simulated time of the next cycle start, us.
    pub fn now_us(&self) -> Micros {
        self.bus.next_start() / NANOS_PER_MICRO
    }

    pub fn last_record(&self) -> Option<&CycleRecord> {
        self.last.as_ref()
    }

    /// Queues new filter and tracker parameters; the camera applies both at
    /// its next poll. Ignored by the frame path.
    pub fn queue_params(&mut self, ldsi: LdsiParams, tracker: TrackerParams) -> Result<(), PipelineError> {
        ldsi.validate()?;
        tracker.validate()?;
        self.manager.pending_config = Some((ldsi, tracker));
        Ok(())
    }

    /// Parameters currently in effect at the event camera.
    pub fn applied_params(&self) -> Option<(LdsiParams, TrackerParams)> {
        match &self.nodes[self.camera] {
            Node::Event(c) => Some(c.params()),
            _ => None,
        }
    }

    /// Latest estimate target in mm and the observation time behind it.
    pub fn target_mm(&self) -> Option<[f64; 2]> {
        self.manager.target.map(|t| t.mm)
    }

    /// Raw sensor events in `(now - window, now]`.
    pub fn recent_raw(&self, window_us: Micros) -> &[Event] {
        let now = self.now_us();
        let ev = self.scene.stream.events();
        let lo = ev.partition_point(|e| e.t <= now.saturating_sub(window_us));
        let hi = ev.partition_point(|e| e.t <= now);
        &ev[lo..hi]
    }

    /// Retained recent filtered events, oldest first.
    pub fn recent_filtered(&self) -> Vec<Event> {
        match &self.nodes[self.camera] {
            Node::Event(c) => c.recent.iter().flatten().copied().collect(),
            _ => Vec::new(),
        }
    }

    pub fn rms_error_mm(&self) -> Option<f64> {
        (self.stats.count > 0).then(|| (self.stats.sum_sq / self.stats.count as f64).sqrt())
    }

    pub fn step(&mut self) -> Result<&CycleRecord, PipelineError> {
        let cycle = {
            let mut refs: Vec<&mut dyn ControlledNode> =
                self.nodes.iter_mut().map(|n| n as &mut dyn ControlledNode).collect();
            self.bus.step(&mut self.manager, &mut refs)?
        };
        if let Some((cycle, [x, y])) = self.manager.unreachable {
            return Err(PipelineError::Unreachable { cycle, x, y });
        }
        if cycle.overflow.is_some() {
            self.overflow_cycles += 1;
        }
        let servo = cycle.exchanges.iter().find(|e| e.node == self.servo);
        let (sampled, angles, command) = match servo {
            Some(ex) => {
                let angles = match ex.response {
                    Some(NodePayload::ServoStatus { xi, sigma }) => Some(JointAngles { xi, sigma }),
                    _ => None,
                };
                let command = match ex.request {
                    NodePayload::ServoCommand { xi, sigma } => Some(JointAngles { xi, sigma }),
                    _ => None,
                };
                (ex.req_arrival, angles, command)
            }
            None => (cycle.end, None, None),
        };
        let angles = match (angles, &self.nodes[self.servo]) {
            (Some(a), _) => a,
            (None, Node::Servo(s)) => s.angles,
            _ => unreachable!("servo index holds the servo"),
        };
        let t_us = sampled as f64 / NANOS_PER_MICRO as f64;
        let truth_t = (sampled / NANOS_PER_MICRO).min(self.spec.scene.duration);
        let truth_px = ground_truth(&self.spec.scene, truth_t)?;
        let truth_mm = self.spec.px_to_mm.apply(truth_px);
        let tcp_mm = forward_kinematics(&self.spec.robot, &angles)?;
        let error_mm = (tcp_mm[0] - truth_mm[0]).hypot(tcp_mm[1] - truth_mm[1]);
        let target = self.manager.target;
        let lag_us = command
            .and(target)
            .map(|t| t_us - t.observed_at as f64);
        let record = CycleRecord {
            cycle: cycle.index,
            t_us,
            target_mm: target.map(|t| t.mm),
            command,
            angles,
            tcp_mm,
            truth_mm,
            error_mm,
            lag_us,
        };
        if t_us >= self.spec.warmup_ms * 1e3 {
            let s = &mut self.stats;
            s.count += 1;
            s.sum_sq += error_mm * error_mm;
            s.max = s.max.max(error_mm);
            if let Some(l) = lag_us {
                s.peak_lag_us = Some(s.peak_lag_us.map_or(l, |p| p.max(l)));
            }
        }
        if self.retention.history {
            self.cycles.push(cycle);
            self.records.push(record);
        }
        self.last = Some(record);
        Ok(self.last.as_ref().expect("just stored"))
    }

    /// Runs to the end of the scene.
    pub fn run_to_end(&mut self) -> Result<(), PipelineError> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(())
    }

    /// Summarises the session. Events after the last poll are still
    /// filtered so the event count covers the whole scene.
    pub fn finish(mut self) -> Result<(PathReport, Option<Vec<Event>>, u64), PipelineError> {
        let (estimates, injections, outputs, output_count) = match &mut self.nodes[self.camera] {
            Node::Event(c) => {
                c.consume_until(Micros::MAX);
                (c.estimates, std::mem::take(&mut c.injections), c.outputs.take(), c.output_count)
            }
            Node::Frame(c) => (c.estimates, std::mem::take(&mut c.injections), None, 0),
            _ => unreachable!("camera index holds a camera"),
        };
        let log = CycleLog {
            config: self.spec.bus.clone(),
            cycles: std::mem::take(&mut self.cycles),
        };
        let latency = latency_report(&log, &injections);
        if self.overflow_cycles == 0 && latency.count > 0
            && latency.max_cycles > 2.0 + 1e-12 {
                return Err(PipelineError::LatencyBound(latency.max_cycles));
            }
        let s = self.stats;
        let report = PathReport {
            path: self.path,
            cycles: self.bus.next_index(),
            overflow_cycles: self.overflow_cycles,
            estimates,
            commands: self.manager.commands,
            scored_cycles: s.count,
            rms_error_mm: if s.count > 0 {
                (s.sum_sq / s.count as f64).sqrt()
            } else {
                0.0
            },
            max_error_mm: s.max,
            peak_lag_ms: s.peak_lag_us.map(|l| l / 1e3),
            latency,
            records: std::mem::take(&mut self.records),
            log: self.retention.history.then_some(log),
        };
        Ok((report, outputs, output_count))
    }
}

/// Runs the closed loop for the configured mode(s).
pub fn run(spec: &RunSpec) -> Result<RunReport, PipelineError> {
    spec.validate()?;
    check_bus(&spec.bus)?;
    check_workspace(spec)?;
    let scene = Arc::new(generate(&spec.scene)?);
    run_scene(spec, scene)
}

/// [`run`] on an already generated scene.
pub fn run_scene(spec: &RunSpec, scene: Arc<GeneratedScene>) -> Result<RunReport, PipelineError> {
    let paths: &[Mode] = match spec.mode {
        Mode::Event => &[Mode::Event],
        Mode::Frame => &[Mode::Frame],
        Mode::Both => &[Mode::Event, Mode::Frame],
    };
    let mut event = None;
    let mut frame = None;
    let mut filtered = None;
    for &path in paths {
        let mut session = Session::new(spec, path, scene.clone(), Retention::BATCH)?;
        session.run_to_end()?;
        let (report, outputs, _) = session.finish()?;
        match path {
            Mode::Event => {
                filtered = outputs;
                event = Some(report);
            }
            _ => frame = Some(report),
        }
    }
    let filtered = match filtered {
        Some(out) => EventStream::from_unsorted(scene.stream.geometry(), out)?,
        None => filter_stream(&scene.stream, &spec.ldsi)?,
    };
    let filter = filter_metrics(
        &scene.stream,
        &filtered,
        &scene.sources,
        &scene.truth,
        spec.scene.ball_radius,
    )?;
    let data_volume = DataVolume {
        event_bytes: EVENT_BYTES * filtered.len() as u64,
        frame_bytes: frame_bytes(spec),
    };
    Ok(RunReport {
        mode: spec.mode,
        duration_us: spec.scene.duration,
        event,
        frame,
        byte_ratio: data_volume.ratio(),
        data_volume,
        filter,
    })
}

/// Side-by-side numbers of one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub rms_error_mm: f64,
    pub max_error_mm: f64,
    pub latency_mean_us: f64,
    pub latency_max_us: f64,
    pub peak_lag_ms: Option<f64>,
    pub bytes: u64,
    pub within_bound: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeComparison {
    pub bound_mm: f64,
    pub event: PathSummary,
    pub frame: PathSummary,
    pub byte_ratio: Option<f64>,
    /// Both paths within the RMS bound.
    pub passed: bool,
}

/// Compares the two paths of a `both` run against `bound_mm`.
pub fn compare_modes(report: &RunReport, bound_mm: f64) -> Result<ModeComparison, PipelineError> {
    let (Some(ev), Some(fr)) = (&report.event, &report.frame) else {
        return Err(PipelineError::NotBoth);
    };
    let summary = |p: &PathReport, bytes| PathSummary {
        rms_error_mm: p.rms_error_mm,
        max_error_mm: p.max_error_mm,
        latency_mean_us: p.latency.mean_us,
        latency_max_us: p.latency.max_us,
        peak_lag_ms: p.peak_lag_ms,
        bytes,
        within_bound: p.rms_error_mm < bound_mm,
    };
    let event = summary(ev, report.data_volume.event_bytes);
    let frame = summary(fr, report.data_volume.frame_bytes);
    Ok(ModeComparison {
        bound_mm,
        event,
        frame,
        byte_ratio: report.byte_ratio,
        passed: event.within_bound && frame.within_bound,
    })
}

/// CSV of cycle records:
/// `cycle,t_us,target_x,target_y,cmd_xi,cmd_sigma,xi,sigma,tcp_x,tcp_y,truth_x,truth_y,error_mm`.
pub fn records_to_csv(records: &[CycleRecord]) -> String {
    use std::fmt::Write;
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    let mut s = String::from(
        "cycle,t_us,target_x,target_y,cmd_xi,cmd_sigma,xi,sigma,tcp_x,tcp_y,truth_x,truth_y,error_mm\n",
    );
    for r in records {
        let _ = writeln!(
            s,
            "{},{:.3},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.cycle,
            r.t_us,
            opt(r.target_mm.map(|m| m[0])),
            opt(r.target_mm.map(|m| m[1])),
            opt(r.command.map(|c| c.xi)),
            opt(r.command.map(|c| c.sigma)),
            r.angles.xi,
            r.angles.sigma,
            r.tcp_mm[0],
            r.tcp_mm[1],
            r.truth_mm[0],
            r.truth_mm[1],
            r.error_mm,
        );
    }
    s
}
