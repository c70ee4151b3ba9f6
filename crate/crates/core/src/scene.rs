//! Synthetic ball scenes: a bright disk moving over a dark background, seen by
//! an event sensor, plus Poisson background and hot-pixel noise.
//!
//! A pixel emits an event when the disk boundary sweeps across its center:
//! `+` when the disk arrives, `-` when it leaves. Every event carries a
//! [`EventSource`] tag so filter precision can be measured against it.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{Event, EventError, EventStream, Micros, Polarity, SensorGeometry};

/// Interval between ground-truth samples.
pub const TRUTH_PERIOD_US: Micros = 1_000;

const RNG_STREAM_BACKGROUND: u64 = 1;
const RNG_STREAM_HOT_BASE: u64 = 1_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("trajectory never brings the ball onto the sensor")]
    TrajectoryOutside,
    #[error("time {t} us is outside the scene duration {duration} us")]
    TimeOutOfRange { t: Micros, duration: Micros },
    #[error(transparent)]
    Event(#[from] EventError),
}

/// What happens once the ball reaches the end of its path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathMode {
    /// Stop at the end and stay there.
    #[default]
    Once,
    /// Jump back to the start.
    Loop,
    /// Reverse direction at each end.
    PingPong,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    Linear {
        from: [f64; 2],
        to: [f64; 2],
        #[serde(default)]
        mode: PathMode,
    },
    /// Circular arc, angles in degrees, counter-clockwise for positive sweep.
    Arc {
        center: [f64; 2],
        radius: f64,
        #[serde(default)]
        start_deg: f64,
        #[serde(default = "full_turn")]
        sweep_deg: f64,
        #[serde(default)]
        mode: PathMode,
    },
    Waypoints {
        points: Vec<[f64; 2]>,
        #[serde(default)]
        mode: PathMode,
    },
}

fn full_turn() -> f64 {
    360.0
}

impl Trajectory {
    pub fn length(&self) -> f64 {
        match self {
            Trajectory::Linear { from, to, .. } => dist(*from, *to),
            Trajectory::Arc {
                radius, sweep_deg, ..
            } => radius.abs() * sweep_deg.abs().to_radians(),
            Trajectory::Waypoints { points, .. } => {
                points.windows(2).map(|w| dist(w[0], w[1])).sum()
            }
        }
    }

    fn mode(&self) -> PathMode {
        match self {
            Trajectory::Linear { mode, .. }
            | Trajectory::Arc { mode, .. }
            | Trajectory::Waypoints { mode, .. } => *mode,
        }
    }

    /// Point at arc length `s` along the path, `0 <= s <= length`.
    fn point_at_length(&self, s: f64) -> [f64; 2] {
        match self {
            Trajectory::Linear { from, to, .. } => {
                let len = dist(*from, *to);
                if len == 0.0 {
                    return *from;
                }
                lerp(*from, *to, s / len)
            }
            Trajectory::Arc {
                center,
                radius,
                start_deg,
                sweep_deg,
                ..
            } => {
                let total = self.length();
                let frac = if total == 0.0 { 0.0 } else { s / total };
                let angle = (start_deg + sweep_deg * frac).to_radians();
                [
                    center[0] + radius * angle.cos(),
                    center[1] + radius * angle.sin(),
                ]
            }
            Trajectory::Waypoints { points, .. } => {
                let mut remaining = s;
                for w in points.windows(2) {
                    let seg = dist(w[0], w[1]);
                    if remaining <= seg {
                        return if seg == 0.0 {
                            w[0]
                        } else {
                            lerp(w[0], w[1], remaining / seg)
                        };
                    }
                    remaining -= seg;
                }
                *points.last().expect("validated non-empty")
            }
        }
    }

    /// Ball center after travelling `travelled` pixels from the start.
    pub fn position(&self, travelled: f64) -> [f64; 2] {
        let len = self.length();
        if len <= 0.0 {
            return self.point_at_length(0.0);
        }
        let s = match self.mode() {
            PathMode::Once => travelled.min(len),
            PathMode::Loop => travelled.rem_euclid(len),
            PathMode::PingPong => {
                let r = travelled.rem_euclid(2.0 * len);
                if r <= len {
                    r
                } else {
                    2.0 * len - r
                }
            }
        };
        self.point_at_length(s)
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn lerp(a: [f64; 2], b: [f64; 2], f: f64) -> [f64; 2] {
    [a[0] + (b[0] - a[0]) * f, a[1] + (b[1] - a[1]) * f]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotPixel {
    pub x: u16,
    pub y: u16,
    /// Events per second.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Spurious events per second per pixel, uniform over the sensor.
    pub background_rate: f64,
    pub hot_pixels: Vec<HotPixel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub geometry: SensorGeometry,
    pub trajectory: Trajectory,
    /// Ball speed along the path, px/s.
    pub speed: f64,
    pub ball_radius: f64,
    /// Events emitted per pixel crossing (repeats are spaced 1 us apart).
    pub events_per_crossing: u32,
    /// Emit `+` events for every covered pixel when the scene starts, as if
    /// the ball had just been placed.
    pub onset: bool,
    pub noise: NoiseSpec,
    pub duration: Micros,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::preset("standard").expect("standard preset exists")
    }
}

/// Names accepted by [`SceneSpec::preset`].
pub const SCENE_PRESETS: &[&str] = &["standard", "slow", "fast", "line", "zigzag", "stationary"];

impl SceneSpec {
    /// Built-in scenes on a 128x128 sensor with a 6 px ball.
    ///
    /// `standard` is a 30 px circle around the sensor center at 500 px/s with
    /// 10 ev/s/px background noise, 10 s long. `stationary` is a noise-free
    /// ball resting at the center, announced by a double onset burst.
    pub fn preset(name: &str) -> Option<Self> {
        let circle = |speed| {
            let path = Trajectory::Arc {
                center: [64.0, 64.0],
                radius: 30.0,
                start_deg: 0.0,
                sweep_deg: 360.0,
                mode: PathMode::Loop,
            };
            (path, speed)
        };
        let (trajectory, speed) = match name {
            "standard" => circle(500.0),
            "slow" => circle(100.0),
            "fast" => circle(2000.0),
            "line" => (
                Trajectory::Linear {
                    from: [16.0, 64.0],
                    to: [112.0, 64.0],
                    mode: PathMode::PingPong,
                },
                500.0,
            ),
            "zigzag" => (
                Trajectory::Waypoints {
                    points: vec![
                        [20.0, 20.0],
                        [108.0, 40.0],
                        [20.0, 64.0],
                        [108.0, 88.0],
                        [20.0, 108.0],
                    ],
                    mode: PathMode::PingPong,
                },
                800.0,
            ),
            "stationary" => (
                Trajectory::Linear {
                    from: [64.0, 64.0],
                    to: [64.0, 64.0],
                    mode: PathMode::Once,
                },
                0.0,
            ),
            _ => return None,
        };
        // a resting ball is only visible through its onset burst, which must
        // be dense enough to pass the filter; filtered noise would drag the
        // tracker away from it
        let stationary = name == "stationary";
        Some(Self {
            geometry: SensorGeometry::default(),
            trajectory,
            speed,
            ball_radius: 6.0,
            events_per_crossing: if stationary { 2 } else { 1 },
            onset: stationary,
            noise: NoiseSpec {
                background_rate: if stationary { 0.0 } else { 10.0 },
                hot_pixels: Vec::new(),
            },
            duration: 10_000_000,
            seed: 1,
        })
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::Invalid(m.to_string()));
        if self.duration == 0 {
            return bad("duration must be > 0");
        }
        if !(self.speed.is_finite() && self.speed >= 0.0) {
            return bad("speed must be finite and >= 0");
        }
        if !(self.ball_radius.is_finite() && self.ball_radius > 0.0) {
            return bad("ball_radius must be > 0");
        }
        if !(self.noise.background_rate.is_finite() && self.noise.background_rate >= 0.0) {
            return bad("background_rate must be >= 0");
        }
        for hp in &self.noise.hot_pixels {
            if !(hp.rate.is_finite() && hp.rate >= 0.0) {
                return bad("hot pixel rate must be >= 0");
            }
            if !self.geometry.contains(hp.x, hp.y) {
                return bad("hot pixel outside sensor");
            }
        }
        if let Trajectory::Waypoints { points, .. } = &self.trajectory {
            if points.is_empty() {
                return bad("waypoint path needs at least one point");
            }
        }
        if !self.trajectory.length().is_finite() {
            return bad("trajectory length is not finite");
        }
        let r = self.ball_radius;
        let (w, h) = (
            self.geometry.width() as f64 - 1.0,
            self.geometry.height() as f64 - 1.0,
        );
        let visible = truth_times(self.duration).any(|t| {
            let [x, y] = self.center_at(t);
            x >= -r && x <= w + r && y >= -r && y <= h + r
        });
        if !visible {
            return Err(SceneError::TrajectoryOutside);
        }
        Ok(())
    }

    /// Ball center at `t`, without range checks.
    pub fn center_at(&self, t: Micros) -> [f64; 2] {
        self.trajectory.position(self.speed * t as f64 * 1e-6)
    }
}

/// Exact ball center at time `t`.
pub fn ground_truth(spec: &SceneSpec, t: Micros) -> Result<[f64; 2], SceneError> {
    if t > spec.duration {
        return Err(SceneError::TimeOutOfRange {
            t,
            duration: spec.duration,
        });
    }
    Ok(spec.center_at(t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventSource {
    Signal,
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthSample {
    pub t: Micros,
    pub x: f64,
    pub y: f64,
}

/// Output of [`generate`]: the event stream, a source tag per event and the
/// 1 kHz ground-truth track.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScene {
    pub stream: EventStream,
    pub sources: Vec<EventSource>,
    pub truth: Vec<TruthSample>,
}

impl GeneratedScene {
    pub fn signal_count(&self) -> usize {
        self.sources
            .iter()
            .filter(|s| **s == EventSource::Signal)
            .count()
    }
}

fn truth_times(duration: Micros) -> impl Iterator<Item = Micros> {
    (0..=duration / TRUTH_PERIOD_US).map(|k| k * TRUTH_PERIOD_US)
}

pub fn generate(spec: &SceneSpec) -> Result<GeneratedScene, SceneError> {
    spec.validate()?;
    let mut tagged: Vec<(Event, EventSource)> = Vec::new();

    for e in ball_events(spec) {
        tagged.push((e, EventSource::Signal));
    }
    for e in noise_events(spec) {
        tagged.push((e, EventSource::Noise));
    }
    tagged.sort_by_key(|a| a.0);

    let (events, sources): (Vec<_>, Vec<_>) = tagged.into_iter().unzip();
    let stream = EventStream::new(spec.geometry, events)?;
    let truth = truth_times(spec.duration)
        .map(|t| {
            let [x, y] = spec.center_at(t);
            TruthSample { t, x, y }
        })
        .collect();
    Ok(GeneratedScene {
        stream,
        sources,
        truth,
    })
}

fn covers(center: [f64; 2], r2: f64, px: usize, py: usize) -> bool {
    let dx = px as f64 - center[0];
    let dy = py as f64 - center[1];
    dx * dx + dy * dy <= r2
}

fn ball_events(spec: &SceneSpec) -> Vec<Event> {
    let g = spec.geometry;
    let (w, h) = (g.width() as usize, g.height() as usize);
    let r = spec.ball_radius;
    let r2 = r * r;
    let repeats = spec.events_per_crossing.max(1) as u64;
    let mut out = Vec::new();
    let emit = |x: usize, y: usize, t: Micros, pol: Polarity, out: &mut Vec<Event>| {
        for k in 0..repeats {
            out.push(Event::new(x as u16, y as u16, t + k, pol));
        }
    };

    let mut inside = vec![false; w * h];
    let start = spec.center_at(0);
    for y in 0..h {
        for x in 0..w {
            if covers(start, r2, x, y) {
                inside[y * w + x] = true;
                if spec.onset {
                    emit(x, y, 0, Polarity::Positive, &mut out);
                }
            }
        }
    }
    if spec.speed == 0.0 || spec.trajectory.length() == 0.0 {
        return out;
    }

    // Step so the ball moves at most a quarter pixel between samples.
    let step = ((0.25 / spec.speed) * 1e6).ceil().clamp(1.0, 1000.0) as Micros;
    let mut prev_t = 0;
    let mut prev_c = start;
    while prev_t < spec.duration {
        let t = (prev_t + step).min(spec.duration);
        let c = spec.center_at(t);
        let x0 = (prev_c[0].min(c[0]) - r - 1.0).floor().max(0.0) as usize;
        let y0 = (prev_c[1].min(c[1]) - r - 1.0).floor().max(0.0) as usize;
        let x1 = ((prev_c[0].max(c[0]) + r + 1.0).ceil().max(-1.0) as i64).min(w as i64 - 1);
        let y1 = ((prev_c[1].max(c[1]) + r + 1.0).ceil().max(-1.0) as i64).min(h as i64 - 1);
        if x1 >= 0 && y1 >= 0 {
            for y in y0..=y1 as usize {
                for x in x0..=x1 as usize {
                    let now = covers(c, r2, x, y);
                    let idx = y * w + x;
                    if now == inside[idx] {
                        continue;
                    }
                    // First microsecond in (prev_t, t] at which the pixel has
                    // its new state.
                    let (mut lo, mut hi) = (prev_t, t);
                    while hi - lo > 1 {
                        let mid = lo + (hi - lo) / 2;
                        if covers(spec.center_at(mid), r2, x, y) == now {
                            hi = mid;
                        } else {
                            lo = mid;
                        }
                    }
                    inside[idx] = now;
                    let pol = if now {
                        Polarity::Positive
                    } else {
                        Polarity::Negative
                    };
                    emit(x, y, hi, pol, &mut out);
                }
            }
        }
        prev_t = t;
        prev_c = c;
    }
    out
}

fn poisson_count(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let p = Poisson::new(mean).expect("positive finite mean");
    p.sample(rng) as u64
}

fn random_polarity(rng: &mut ChaCha8Rng) -> Polarity {
    if rng.random::<bool>() {
        Polarity::Positive
    } else {
        Polarity::Negative
    }
}

fn noise_events(spec: &SceneSpec) -> Vec<Event> {
    let g = spec.geometry;
    let seconds = spec.duration as f64 * 1e-6;
    let mut out = Vec::new();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(RNG_STREAM_BACKGROUND);
    let n = poisson_count(
        &mut rng,
        spec.noise.background_rate * g.pixel_count() as f64 * seconds,
    );
    for _ in 0..n {
        let x = rng.random_range(0..g.width());
        let y = rng.random_range(0..g.height());
        let t = rng.random_range(0..spec.duration);
        let pol = random_polarity(&mut rng);
        out.push(Event::new(x, y, t, pol));
    }

    for (i, hp) in spec.noise.hot_pixels.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(RNG_STREAM_HOT_BASE + i as u64);
        let n = poisson_count(&mut rng, hp.rate * seconds);
        for _ in 0..n {
            let t = rng.random_range(0..spec.duration);
            let pol = random_polarity(&mut rng);
            out.push(Event::new(hp.x, hp.y, t, pol));
        }
    }
    out
}

/// Ground-truth side file: `t,x,y` header then one sample per line.
pub fn truth_to_csv(truth: &[TruthSample]) -> String {
    let mut s = String::from("t,x,y\n");
    for sample in truth {
        let _ = writeln!(s, "{},{},{}", sample.t, sample.x, sample.y);
    }
    s
}

/// Source-tag side file: `source` header then `signal`/`noise` per event.
pub fn sources_to_csv(sources: &[EventSource]) -> String {
    let mut s = String::with_capacity(7 + sources.len() * 7);
    s.push_str("source\n");
    for src in sources {
        s.push_str(match src {
            EventSource::Signal => "signal\n",
            EventSource::Noise => "noise\n",
        });
    }
    s
}

/// Time for one full turn of a circle of `radius` px at `speed` px/s.
pub fn arc_period_us(radius: f64, speed: f64) -> f64 {
    2.0 * PI * radius / speed * 1e6
}
