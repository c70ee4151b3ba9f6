//! Address-events, sensor geometry and ordered event streams.
//!
//! Every stage of the pipeline consumes and produces [`EventStream`]s. A stream
//! is always sorted by timestamp, with simultaneous events ordered by
//! `(y, x, polarity)` so that replays are bit-for-bit reproducible.

mod io;

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{read_stream, write_stream, StreamFormat, BINARY_MAGIC, BINARY_RECORD_LEN};

/// Timestamp in microseconds.
pub type Micros = u64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EventError {
    #[error("sensor geometry {width}x{height} is too small (both sides must be >= 3)")]
    GeometryTooSmall { width: u16, height: u16 },
    #[error("event {index}: ({x},{y}) lies outside the {width}x{height} sensor")]
    OutOfBounds {
        index: usize,
        x: u16,
        y: u16,
        width: u16,
        height: u16,
    },
    #[error("event {index}: timestamp {t} precedes previous timestamp {prev}")]
    TimestampRegression { index: usize, t: Micros, prev: Micros },
    #[error("event {index}: simultaneous events are not in (y, x, polarity) order")]
    TieOrder { index: usize },
    #[error("cannot merge streams of geometry {a} and {b}")]
    GeometryMismatch { a: SensorGeometry, b: SensorGeometry },
    #[error("{location}: {message}")]
    Malformed { location: String, message: String },
    #[error("i/o: {0}")]
    Io(String),
}

/// Sign of the intensity change that produced an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn as_sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    pub fn from_sign(sign: i64) -> Option<Self> {
        match sign {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Polarity::Negative => 0,
            Polarity::Positive => 1,
        }
    }
}

/// One address-event: pixel address, timestamp and polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t: Micros,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(x: u16, y: u16, t: Micros, polarity: Polarity) -> Self {
        Self { x, y, t, polarity }
    }

    fn sort_key(&self) -> (Micros, u16, u16, Polarity) {
        (self.t, self.y, self.x, self.polarity)
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sort_key().cmp(&other.sort_key())
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Sensor size in pixels: `width` columns (M) by `height` rows (N).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawGeometry", into = "RawGeometry")]
pub struct SensorGeometry {
    width: u16,
    height: u16,
}

#[derive(Serialize, Deserialize)]
struct RawGeometry {
    width: u16,
    height: u16,
}

impl TryFrom<RawGeometry> for SensorGeometry {
    type Error = EventError;
    fn try_from(raw: RawGeometry) -> Result<Self, Self::Error> {
        SensorGeometry::new(raw.width, raw.height)
    }
}

impl From<SensorGeometry> for RawGeometry {
    fn from(g: SensorGeometry) -> Self {
        RawGeometry {
            width: g.width,
            height: g.height,
        }
    }
}

impl SensorGeometry {
    pub fn new(width: u16, height: u16) -> Result<Self, EventError> {
        if width < 3 || height < 3 {
            return Err(EventError::GeometryTooSmall { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn contains(&self, x: u16, y: u16) -> bool {
        x < self.width && y < self.height
    }

    /// True for pixels in the outermost row or column.
    pub fn is_border(&self, x: u16, y: u16) -> bool {
        x == 0 || y == 0 || x + 1 == self.width || y + 1 == self.height
    }

    /// Size of the inner `(M-2) x (N-2)` grid used by the filter layers.
    pub fn inner_size(&self) -> (usize, usize) {
        (self.width as usize - 2, self.height as usize - 2)
    }
}

impl Default for SensorGeometry {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
        }
    }
}

impl fmt::Display for SensorGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// An immutable, ordered sequence of events for one sensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    geometry: SensorGeometry,
    events: Vec<Event>,
}

impl EventStream {
    /// Builds a stream from events that must already be in stream order.
    pub fn new(geometry: SensorGeometry, events: Vec<Event>) -> Result<Self, EventError> {
        validate(&geometry, &events)?;
        Ok(Self { geometry, events })
    }

    /// Builds a stream from events in any order; they are sorted first.
    pub fn from_unsorted(
        geometry: SensorGeometry,
        mut events: Vec<Event>,
    ) -> Result<Self, EventError> {
        events.sort();
        Self::new(geometry, events)
    }

    pub fn empty(geometry: SensorGeometry) -> Self {
        Self {
            geometry,
            events: Vec::new(),
        }
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Event> {
        self.events.iter()
    }
}

impl<'a> IntoIterator for &'a EventStream {
    type Item = &'a Event;
    type IntoIter = std::slice::Iter<'a, Event>;
    fn into_iter(self) -> Self::IntoIter {
        self.events.iter()
    }
}

fn validate(geometry: &SensorGeometry, events: &[Event]) -> Result<(), EventError> {
    let mut prev: Option<&Event> = None;
    for (index, ev) in events.iter().enumerate() {
        if !geometry.contains(ev.x, ev.y) {
            return Err(EventError::OutOfBounds {
                index,
                x: ev.x,
                y: ev.y,
                width: geometry.width,
                height: geometry.height,
            });
        }
        if let Some(p) = prev {
            if ev.t < p.t {
                return Err(EventError::TimestampRegression {
                    index,
                    t: ev.t,
                    prev: p.t,
                });
            }
            if ev < p {
                return Err(EventError::TieOrder { index });
            }
        }
        prev = Some(ev);
    }
    Ok(())
}

/// Union of two streams over the same sensor, in stream order.
pub fn merge_streams(a: &EventStream, b: &EventStream) -> Result<EventStream, EventError> {
    if a.geometry != b.geometry {
        return Err(EventError::GeometryMismatch {
            a: a.geometry,
            b: b.geometry,
        });
    }
    let (mut i, mut j) = (0, 0);
    let (ea, eb) = (&a.events, &b.events);
    let mut out = Vec::with_capacity(ea.len() + eb.len());
    while i < ea.len() && j < eb.len() {
        if eb[j] < ea[i] {
            out.push(eb[j]);
            j += 1;
        } else {
            out.push(ea[i]);
            i += 1;
        }
    }
    out.extend_from_slice(&ea[i..]);
    out.extend_from_slice(&eb[j..]);
    Ok(EventStream {
        geometry: a.geometry,
        events: out,
    })
}
