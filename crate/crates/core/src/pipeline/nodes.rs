use std::collections::VecDeque;
use std::sync::Arc;

use crate::events::{Event, Micros};
use crate::frame::{detect_blob, render_frame, AxisMap, BlobDetection, BlobParams, FrameCameraSpec};
use crate::kinematics::{inverse_kinematics, JointAngles, RobotGeometry};
use crate::ldsi::{LdsiFilter, LdsiParams};
use crate::netsim::{ControlledNode, ManagingNode, Nanos, NodePayload, NANOS_PER_MICRO};
use crate::scene::{GeneratedScene, SceneSpec};
use crate::tracker::{StreamTracker, TrackerParams};

/// Event camera: LDSI filter and tracker fed with every sensor event that has
/// happened by the time the camera is polled.
#[derive(Debug, Clone)]
pub(crate) struct EventCamera {
    scene: Arc<GeneratedScene>,
    cursor: usize,
    filter: LdsiFilter,
    tracker: StreamTracker,
    scratch: Vec<Event>,
    /// Latest estimate and the time its window completed.
    pending: Option<(crate::tracker::PositionEstimate, Micros)>,
    events_in: u32,
    events_out: u32,
    pub output_count: u64,
    pub estimates: usize,
    /// Every filtered event, when requested.
    pub outputs: Option<Vec<Event>>,
    /// Filtered events of the last `recent_us`, when requested.
    pub recent: Option<VecDeque<Event>>,
    pub recent_us: Micros,
    /// Times at which reported estimates became available.
    pub injections: Vec<Nanos>,
}

impl EventCamera {
    pub fn new(
        scene: Arc<GeneratedScene>,
        ldsi: LdsiParams,
        tracker: TrackerParams,
    ) -> Result<Self, super::PipelineError> {
        let geometry = scene.stream.geometry();
        Ok(Self {
            scene,
            cursor: 0,
            filter: LdsiFilter::new(geometry, ldsi)?,
            tracker: StreamTracker::new(tracker)?,
            scratch: Vec::new(),
            pending: None,
            events_in: 0,
            events_out: 0,
            output_count: 0,
            estimates: 0,
            outputs: None,
            recent: None,
            recent_us: 0,
            injections: Vec::new(),
        })
    }

    pub fn params(&self) -> (LdsiParams, TrackerParams) {
        (*self.filter.params(), *self.tracker.params())
    }

    /// Processes all events with `t <= until`.
    pub fn consume_until(&mut self, until: Micros) {
        let events = self.scene.stream.events();
        while let Some(ev) = events.get(self.cursor) {
            if ev.t > until {
                break;
            }
            self.cursor += 1;
            self.events_in += 1;
            self.scratch.clear();
            self.filter
                .process(ev, &mut self.scratch)
                .expect("scene events are sorted and in bounds");
            for out in &self.scratch {
                self.events_out += 1;
                self.output_count += 1;
                if let Some(est) = self.tracker.push(*out) {
                    self.estimates += 1;
                    self.pending = Some((est, out.t));
                }
            }
            if let Some(all) = &mut self.outputs {
                all.extend_from_slice(&self.scratch);
            }
            if let Some(recent) = &mut self.recent {
                recent.extend(self.scratch.iter().copied());
            }
        }
        if let Some(recent) = &mut self.recent {
            let keep_from = until.saturating_sub(self.recent_us);
            while recent.front().is_some_and(|e| e.t <= keep_from) {
                recent.pop_front();
            }
        }
    }

    fn apply(&mut self, ldsi: &LdsiParams, tracker: &TrackerParams) {
        // both were validated before they were queued
        self.filter.set_params(*ldsi).expect("validated ldsi params");
        if tracker != self.tracker.params() {
            self.tracker.set_params(*tracker).expect("validated tracker params");
        }
    }
}

impl ControlledNode for EventCamera {
    fn respond(&mut self, _cycle: u64, now: Nanos, request: &NodePayload) -> NodePayload {
        if let NodePayload::FilterConfig { ldsi, tracker } = request {
            self.apply(ldsi, tracker);
        }
        self.consume_until(now / NANOS_PER_MICRO);
        let estimate = self.pending.take().map(|(e, ready)| {
            self.injections.push(ready * NANOS_PER_MICRO);
            e
        });
        let report = NodePayload::CameraReport {
            estimate,
            events_in: self.events_in,
            events_out: self.events_out,
        };
        self.events_in = 0;
        self.events_out = 0;
        report
    }
}

/// Frame camera: renders each frame once its result is due and runs the
/// blob detector on it.
#[derive(Debug, Clone)]
pub(crate) struct FrameCamera {
    scene: SceneSpec,
    camera: FrameCameraSpec,
    blob: BlobParams,
    latency_us: Micros,
    next: u64,
    count: u64,
    pending: Option<BlobDetection>,
    pub frames: u64,
    pub estimates: usize,
    pub injections: Vec<Nanos>,
}

impl FrameCamera {
    pub fn new(
        scene: SceneSpec,
        camera: FrameCameraSpec,
        mut blob: BlobParams,
        px_to_mm: AxisMap,
        latency_us: Micros,
    ) -> Self {
        blob.to_mm = px_to_mm.after(&camera.from_scene.inverse());
        let count = camera.frame_count(scene.duration);
        Self {
            scene,
            camera,
            blob,
            latency_us,
            next: 0,
            count,
            pending: None,
            frames: 0,
            estimates: 0,
            injections: Vec::new(),
        }
    }
}

impl ControlledNode for FrameCamera {
    fn respond(&mut self, _cycle: u64, now: Nanos, _request: &NodePayload) -> NodePayload {
        let now_us = now / NANOS_PER_MICRO;
        while self.next < self.count && self.camera.frame_time(self.next) + self.latency_us <= now_us {
            let frame = render_frame(&self.scene, &self.camera, self.next);
            self.next += 1;
            self.frames += 1;
            if let Some(d) = detect_blob(&frame, &self.blob) {
                self.estimates += 1;
                self.pending = Some(d);
            }
        }
        let detection = self.pending.take();
        if let Some(d) = &detection {
            self.injections.push((d.t + self.latency_us) * NANOS_PER_MICRO);
        }
        NodePayload::BlobReport { detection }
    }
}

/// Two first-order lag axes.
#[derive(Debug, Clone)]
pub(crate) struct Servo {
    tau_us: f64,
    pub angles: JointAngles,
    target: JointAngles,
    last: Option<Nanos>,
}

impl Servo {
    pub fn new(tau_ms: f64, start: JointAngles) -> Self {
        Self {
            tau_us: tau_ms * 1e3,
            angles: start,
            target: start,
            last: None,
        }
    }

    fn advance(&mut self, now: Nanos) {
        let dt_us = self.last.map_or(0.0, |l| (now - l) as f64 / NANOS_PER_MICRO as f64);
        self.last = Some(now);
        let k = if self.tau_us == 0.0 {
            1.0
        } else {
            1.0 - (-dt_us / self.tau_us).exp()
        };
        self.angles.xi += (self.target.xi - self.angles.xi) * k;
        self.angles.sigma += (self.target.sigma - self.angles.sigma) * k;
    }
}

impl ControlledNode for Servo {
    fn respond(&mut self, _cycle: u64, now: Nanos, request: &NodePayload) -> NodePayload {
        self.advance(now);
        if let NodePayload::ServoCommand { xi, sigma } = request {
            self.target = JointAngles {
                xi: *xi,
                sigma: *sigma,
            };
            if self.tau_us == 0.0 {
                self.angles = self.target;
            }
        }
        NodePayload::ServoStatus {
            xi: self.angles.xi,
            sigma: self.angles.sigma,
        }
    }
}

/// Position target currently commanded by the managing node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Target {
    pub mm: [f64; 2],
    pub angles: JointAngles,
    /// When the underlying observation was made.
    pub observed_at: Micros,
}

/// Managing node: turns camera reports into servo commands.
#[derive(Debug, Clone)]
pub(crate) struct Manager {
    robot: RobotGeometry,
    px_to_mm: AxisMap,
    camera: usize,
    servo: usize,
    pub target: Option<Target>,
    pub pending_config: Option<(LdsiParams, TrackerParams)>,
    pub commands: usize,
    pub unreachable: Option<(u64, [f64; 2])>,
}

impl Manager {
    pub fn new(robot: RobotGeometry, px_to_mm: AxisMap, camera: usize, servo: usize) -> Self {
        Self {
            robot,
            px_to_mm,
            camera,
            servo,
            target: None,
            pending_config: None,
            commands: 0,
            unreachable: None,
        }
    }

    fn retarget(&mut self, cycle: u64, mm: [f64; 2], observed_at: Micros) {
        match inverse_kinematics(&self.robot, mm) {
            Ok(angles) => {
                self.target = Some(Target {
                    mm,
                    angles,
                    observed_at,
                })
            }
            Err(_) => {
                self.unreachable.get_or_insert((cycle, mm));
            }
        }
    }
}

impl ManagingNode for Manager {
    fn request(&mut self, _cycle: u64, node: usize, _now: Nanos) -> NodePayload {
        if node == self.camera {
            match self.pending_config.take() {
                Some((ldsi, tracker)) => NodePayload::FilterConfig { ldsi, tracker },
                None => NodePayload::Empty,
            }
        } else if node == self.servo {
            match &self.target {
                Some(t) => {
                    self.commands += 1;
                    NodePayload::ServoCommand {
                        xi: t.angles.xi,
                        sigma: t.angles.sigma,
                    }
                }
                None => NodePayload::Empty,
            }
        } else {
            NodePayload::IoCommand {
                valves: 0,
                light: true,
            }
        }
    }

    fn on_response(&mut self, cycle: u64, node: usize, payload: &NodePayload, _now: Nanos) {
        if node != self.camera {
            return;
        }
        match payload {
            NodePayload::CameraReport {
                estimate: Some(e), ..
            } => {
                let mm = self.px_to_mm.apply([e.x as f64, e.y as f64]);
                self.retarget(cycle, mm, e.t);
            }
            NodePayload::BlobReport { detection: Some(d) } => self.retarget(cycle, d.mm, d.t),
            _ => {}
        }
    }
}

/// Any controlled node of a pipeline bus.
#[derive(Debug, Clone)]
pub(crate) enum Node {
    Event(Box<EventCamera>),
    Frame(Box<FrameCamera>),
    Servo(Servo),
    Io,
}

impl ControlledNode for Node {
    fn respond(&mut self, cycle: u64, now: Nanos, request: &NodePayload) -> NodePayload {
        match self {
            Node::Event(c) => c.respond(cycle, now, request),
            Node::Frame(c) => c.respond(cycle, now, request),
            Node::Servo(s) => s.respond(cycle, now, request),
            Node::Io => NodePayload::IoStatus { inputs: 0 },
        }
    }
}
