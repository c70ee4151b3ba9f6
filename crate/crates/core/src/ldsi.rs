//! Less Data Same Information (LDSI) event filter.
//!
//! Four layers are chained: the sensor layer feeds a `(M-2) x (N-2)` core
//! layer (D), whose firings excite the same unit and a square neighbourhood
//! of radius `dl` in the connection layer (A); A firings are the output.
//! Every unit integrates excitation, fires and resets to zero at threshold,
//! and loses potential when it has been idle for longer than `mtr`.
//!
//! Decay is applied lazily: a unit is only brought up to date when it is
//! touched again, which keeps each input event O(dl^2).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{Event, EventError, EventStream, Micros, SensorGeometry};
use crate::scene::{EventSource, TruthSample};

/// Excitation and threshold parameters are validated against `[0, PARAM_MAX]`.
pub const PARAM_MAX: f64 = 10.0;

/// Slack added to the ball radius when deciding whether an output event lies
/// on the ball's edge ring (one diagonal pixel of neighbourhood spread).
pub const RING_MARGIN_PX: f64 = 1.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LdsiError {
    #[error("parameter {name} = {value} outside [{min}, {max}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("event ({x},{y}) outside the {geometry} sensor")]
    OutOfGeometry {
        x: u16,
        y: u16,
        geometry: SensorGeometry,
    },
    #[error("timestamp {t} precedes already processed timestamp {last}")]
    TimestampRegression { t: Micros, last: Micros },
    #[error("{tags} source tags for {events} input events")]
    TagMismatch { tags: usize, events: usize },
    #[error(transparent)]
    Event(#[from] EventError),
}

/// How many decrements an idle unit receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// One decrement per full `mtr` interval elapsed.
    #[default]
    Repeated,
    /// A single decrement whenever the idle time exceeds `mtr`.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdsiParams {
    /// Core-layer increment per input event.
    pub erco: f64,
    /// Connection-layer increment at the firing unit's own address.
    pub ercn: f64,
    /// Connection-layer increment for each neighbour within `dl`.
    pub ernc: f64,
    /// Core-layer firing threshold.
    pub tce: f64,
    /// Connection-layer firing threshold.
    pub tne: f64,
    /// Maximum time to remember, microseconds.
    pub mtr: Micros,
    /// Core-layer decrement per idle interval.
    pub derp: f64,
    /// Connection-layer decrement per idle interval.
    pub derc: f64,
    /// Neighbourhood radius (Chebyshev) of the core to connection fan-out.
    pub dl: u32,
    /// Keep separate potential maps for each polarity.
    pub per_polarity: bool,
    pub decay: DecayMode,
}

impl Default for LdsiParams {
    fn default() -> Self {
        FilterPreset::Medium.params()
    }
}

impl LdsiParams {
    pub fn validate(&self) -> Result<(), LdsiError> {
        let ranged = [
            ("erco", self.erco),
            ("ercn", self.ercn),
            ("ernc", self.ernc),
            ("tce", self.tce),
            ("tne", self.tne),
            ("derp", self.derp),
            ("derc", self.derc),
        ];
        for (name, value) in ranged {
            if !(0.0..=PARAM_MAX).contains(&value) {
                return Err(LdsiError::OutOfRange {
                    name,
                    value,
                    min: 0.0,
                    max: PARAM_MAX,
                });
            }
        }
        if self.mtr == 0 {
            return Err(LdsiError::OutOfRange {
                name: "mtr",
                value: 0.0,
                min: 1.0,
                max: f64::INFINITY,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterPreset {
    Low,
    Medium,
    High,
}

impl FilterPreset {
    pub const ALL: [FilterPreset; 3] = [FilterPreset::Low, FilterPreset::Medium, FilterPreset::High];

    pub fn name(self) -> &'static str {
        match self {
            FilterPreset::Low => "low",
            FilterPreset::Medium => "medium",
            FilterPreset::High => "high",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Preset parameters, tuned on the standard noisy scene (10 ev/s/px
    /// background): the memory must be shorter than the mean noise gap of a
    /// pixel yet longer than a ball crossing.
    pub fn params(self) -> LdsiParams {
        let low = LdsiParams {
            erco: 5.0,
            ercn: 5.0,
            ernc: 2.0,
            tce: 8.0,
            tne: 8.0,
            mtr: 30_000,
            derp: 5.0,
            derc: 5.0,
            dl: 1,
            per_polarity: false,
            decay: DecayMode::Repeated,
        };
        match self {
            FilterPreset::Low => low,
            // a firing unit needs five firing neighbours
            FilterPreset::Medium => LdsiParams {
                ernc: 1.0,
                tne: 10.0,
                ..low
            },
            FilterPreset::High => LdsiParams {
                ernc: 1.0,
                tce: 10.0,
                tne: 10.0,
                mtr: 20_000,
                ..low
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    potential: Vec<f64>,
    last_t: Vec<Micros>,
}

impl Layer {
    fn new(units: usize) -> Self {
        Self {
            potential: vec![0.0; units],
            last_t: vec![0; units],
        }
    }

    /// Applies idle decay to unit `i` and stamps it with `now`.
    fn touch(&mut self, i: usize, now: Micros, mtr: Micros, decrement: f64, mode: DecayMode) {
        let dt = now - self.last_t[i];
        if dt > mtr {
            let steps = match mode {
                DecayMode::Repeated => (dt / mtr) as f64,
                DecayMode::Single => 1.0,
            };
            self.potential[i] = (self.potential[i] - decrement * steps).max(0.0);
        }
        self.last_t[i] = now;
    }
}

/// Potential maps of the core (D) and connection (A) layers.
///
/// Two map pairs are kept; in shared-polarity mode only the first is used.
#[derive(Debug, Clone, PartialEq)]
pub struct LdsiState {
    geometry: SensorGeometry,
    inner_w: usize,
    inner_h: usize,
    core: [Layer; 2],
    connection: [Layer; 2],
    clock: Option<Micros>,
}

impl LdsiState {
    pub fn new(geometry: SensorGeometry) -> Self {
        let (inner_w, inner_h) = geometry.inner_size();
        let units = inner_w * inner_h;
        Self {
            geometry,
            inner_w,
            inner_h,
            core: [Layer::new(units), Layer::new(units)],
            connection: [Layer::new(units), Layer::new(units)],
            clock: None,
        }
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    /// Inner-grid dimensions `(M-2, N-2)`.
    pub fn inner_size(&self) -> (usize, usize) {
        (self.inner_w, self.inner_h)
    }

    /// Core-layer potential at inner coordinates for map `map` (0 or 1).
    pub fn core_potential(&self, map: usize, ix: usize, iy: usize) -> f64 {
        self.core[map].potential[iy * self.inner_w + ix]
    }

    pub fn connection_potential(&self, map: usize, ix: usize, iy: usize) -> f64 {
        self.connection[map].potential[iy * self.inner_w + ix]
    }

    /// Timestamp of the last processed event, if any.
    pub fn clock(&self) -> Option<Micros> {
        self.clock
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.geometry);
    }

    /// Processes one sensor event, appending any output events to `out`.
    ///
    /// Output events for one input share its timestamp and polarity and are
    /// appended in row-major order.
    pub fn step(
        &mut self,
        params: &LdsiParams,
        ev: &Event,
        out: &mut Vec<Event>,
    ) -> Result<(), LdsiError> {
        if !self.geometry.contains(ev.x, ev.y) {
            return Err(LdsiError::OutOfGeometry {
                x: ev.x,
                y: ev.y,
                geometry: self.geometry,
            });
        }
        if let Some(last) = self.clock {
            if ev.t < last {
                return Err(LdsiError::TimestampRegression { t: ev.t, last });
            }
        }
        if self.geometry.is_border(ev.x, ev.y) {
            return Ok(());
        }
        self.clock = Some(ev.t);

        let map = if params.per_polarity {
            ev.polarity.index()
        } else {
            0
        };
        let ix = ev.x as usize - 1;
        let iy = ev.y as usize - 1;
        let unit = iy * self.inner_w + ix;

        let core = &mut self.core[map];
        core.touch(unit, ev.t, params.mtr, params.derp, params.decay);
        core.potential[unit] += params.erco;
        if core.potential[unit] < params.tce {
            return Ok(());
        }
        core.potential[unit] = 0.0;

        let conn = &mut self.connection[map];
        let dl = params.dl as i64;
        let (w, h) = (self.inner_w as i64, self.inner_h as i64);
        for ny in (iy as i64 - dl)..=(iy as i64 + dl) {
            if ny < 0 || ny >= h {
                continue;
            }
            for nx in (ix as i64 - dl)..=(ix as i64 + dl) {
                if nx < 0 || nx >= w {
                    continue;
                }
                let n = (ny * w + nx) as usize;
                conn.touch(n, ev.t, params.mtr, params.derc, params.decay);
                conn.potential[n] += if n == unit { params.ercn } else { params.ernc };
                if conn.potential[n] >= params.tne {
                    conn.potential[n] = 0.0;
                    out.push(Event::new(nx as u16 + 1, ny as u16 + 1, ev.t, ev.polarity));
                }
            }
        }
        Ok(())
    }
}

/// Functional form of [`LdsiState::step`].
pub fn ldsi_step(
    mut state: LdsiState,
    params: &LdsiParams,
    ev: &Event,
) -> Result<(LdsiState, Vec<Event>), LdsiError> {
    let mut out = Vec::new();
    state.step(params, ev, &mut out)?;
    Ok((state, out))
}

/// A filter instance: parameters plus its evolving state.
#[derive(Debug, Clone)]
pub struct LdsiFilter {
    params: LdsiParams,
    state: LdsiState,
}

impl LdsiFilter {
    pub fn new(geometry: SensorGeometry, params: LdsiParams) -> Result<Self, LdsiError> {
        params.validate()?;
        Ok(Self {
            params,
            state: LdsiState::new(geometry),
        })
    }

    pub fn params(&self) -> &LdsiParams {
        &self.params
    }

    /// Replaces the parameters; potentials are kept.
    pub fn set_params(&mut self, params: LdsiParams) -> Result<(), LdsiError> {
        params.validate()?;
        self.params = params;
        Ok(())
    }

    pub fn state(&self) -> &LdsiState {
        &self.state
    }

    pub fn process(&mut self, ev: &Event, out: &mut Vec<Event>) -> Result<(), LdsiError> {
        self.state.step(&self.params, ev, out)
    }
}

/// Runs the filter over a whole stream from a zeroed state.
pub fn filter_stream(stream: &EventStream, params: &LdsiParams) -> Result<EventStream, LdsiError> {
    let mut filter = LdsiFilter::new(stream.geometry(), *params)?;
    let mut out = Vec::new();
    for ev in stream {
        filter.process(ev, &mut out)?;
    }
    // outputs of different inputs sharing a timestamp may interleave
    out.sort();
    Ok(EventStream::new(stream.geometry(), out)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterMetrics {
    pub input_events: usize,
    pub output_events: usize,
    pub signal_input_events: usize,
    pub noise_input_events: usize,
    /// `1 - output/input`; absent for an empty input.
    pub reduction: Option<f64>,
    /// Fraction of 1 ms ground-truth samples with an output event on the ball
    /// edge ring during that millisecond.
    pub signal_retention: Option<f64>,
    /// Output events away from the ball, per noise input event.
    pub noise_passthrough: Option<f64>,
}

/// Index of the last truth sample at or before `t`.
fn truth_at(truth: &[TruthSample], t: Micros) -> Option<&TruthSample> {
    let idx = truth.partition_point(|s| s.t <= t);
    idx.checked_sub(1).map(|i| &truth[i])
}

pub fn filter_metrics(
    input: &EventStream,
    output: &EventStream,
    sources: &[EventSource],
    truth: &[TruthSample],
    ball_radius: f64,
) -> Result<FilterMetrics, LdsiError> {
    if sources.len() != input.len() {
        return Err(LdsiError::TagMismatch {
            tags: sources.len(),
            events: input.len(),
        });
    }
    let signal_input_events = sources
        .iter()
        .filter(|s| **s == EventSource::Signal)
        .count();
    let noise_input_events = input.len() - signal_input_events;
    let reach = ball_radius + RING_MARGIN_PX;
    let near = |e: &Event, s: &TruthSample| {
        (e.x as f64 - s.x).hypot(e.y as f64 - s.y) <= reach
    };

    let out = output.events();
    let signal_retention = if truth.len() < 2 {
        None
    } else {
        // the final sample closes the scene and has no window after it
        let samples = &truth[..truth.len() - 1];
        let hits = samples
            .iter()
            .zip(&truth[1..])
            .filter(|(s, next)| {
                let lo = out.partition_point(|e| e.t < s.t);
                let hi = out.partition_point(|e| e.t < next.t);
                out[lo..hi].iter().any(|e| near(e, s))
            })
            .count();
        Some(hits as f64 / samples.len() as f64)
    };

    let stray = out
        .iter()
        .filter(|e| truth_at(truth, e.t).is_none_or(|s| !near(e, s)))
        .count();
    let noise_passthrough = (noise_input_events > 0).then(|| stray as f64 / noise_input_events as f64);
    let reduction = (!input.is_empty()).then(|| 1.0 - output.len() as f64 / input.len() as f64);

    Ok(FilterMetrics {
        input_events: input.len(),
        output_events: output.len(),
        signal_input_events,
        noise_input_events,
        reduction,
        signal_retention,
        noise_passthrough,
    })
}
