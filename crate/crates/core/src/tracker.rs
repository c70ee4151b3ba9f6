//! Vicinity-vote tracker: groups filtered events into fixed-size windows and
//! reports the event with the most neighbours in each window.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{Event, EventStream, Micros};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TrackerError {
    #[error("window holds {got} events, expected {expected}")]
    WindowSize { expected: usize, got: usize },
    #[error("invalid tracker parameters: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerParams {
    /// Events per vote.
    pub window: usize,
    /// Chebyshev radius within which two events count as neighbours.
    pub vicinity_radius: u16,
    /// Events between consecutive window starts; `None` means `window`
    /// (non-overlapping windows).
    pub stride: Option<usize>,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            window: 20,
            vicinity_radius: 3,
            stride: None,
        }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<(), TrackerError> {
        if self.window == 0 {
            return Err(TrackerError::Invalid("window must be >= 1".into()));
        }
        if let Some(s) = self.stride {
            if s == 0 || s > self.window {
                return Err(TrackerError::Invalid(format!(
                    "stride must be in 1..={}",
                    self.window
                )));
            }
        }
        Ok(())
    }

    fn effective_stride(&self) -> usize {
        self.stride.unwrap_or(self.window)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionEstimate {
    pub x: u16,
    pub y: u16,
    /// Timestamp of the winning event.
    pub t: Micros,
    /// Number of other window events within the vicinity of the winner.
    pub support: usize,
}

/// Picks the event with the most neighbours; ties go to the latest event.
pub fn track_window(
    events: &[Event],
    params: &TrackerParams,
) -> Result<PositionEstimate, TrackerError> {
    if events.len() != params.window || events.is_empty() {
        return Err(TrackerError::WindowSize {
            expected: params.window,
            got: events.len(),
        });
    }
    let r = params.vicinity_radius as i32;

    // Sweep over x-sorted order; only the x-band [x-r, x+r] needs checking.
    let mut by_x: Vec<usize> = (0..events.len()).collect();
    by_x.sort_by_key(|&i| events[i].x);
    let xs: Vec<i32> = by_x.iter().map(|&i| events[i].x as i32).collect();

    let mut best: Option<(usize, &Event)> = None;
    for (rank, &i) in by_x.iter().enumerate() {
        let e = &events[i];
        let (x, y) = (e.x as i32, e.y as i32);
        let lo = xs.partition_point(|&v| v < x - r);
        let hi = xs.partition_point(|&v| v <= x + r);
        let count = (lo..hi)
            .filter(|&k| k != rank && (events[by_x[k]].y as i32 - y).abs() <= r)
            .count();
        let better = match best {
            None => true,
            Some((c, b)) => count > c || (count == c && e > b),
        };
        if better {
            best = Some((count, e));
        }
    }
    let (support, winner) = best.expect("non-empty window");
    Ok(PositionEstimate {
        x: winner.x,
        y: winner.y,
        t: winner.t,
        support,
    })
}

/// Incremental tracker fed one event at a time.
#[derive(Debug, Clone)]
pub struct StreamTracker {
    params: TrackerParams,
    buffer: VecDeque<Event>,
}

impl StreamTracker {
    pub fn new(params: TrackerParams) -> Result<Self, TrackerError> {
        params.validate()?;
        Ok(Self {
            params,
            buffer: VecDeque::with_capacity(params.window),
        })
    }

    pub fn params(&self) -> &TrackerParams {
        &self.params
    }

    /// Changes parameters; buffered events are discarded.
    pub fn set_params(&mut self, params: TrackerParams) -> Result<(), TrackerError> {
        params.validate()?;
        self.params = params;
        self.buffer.clear();
        Ok(())
    }

    pub fn push(&mut self, ev: Event) -> Option<PositionEstimate> {
        self.buffer.push_back(ev);
        if self.buffer.len() < self.params.window {
            return None;
        }
        let window = self.buffer.make_contiguous();
        let estimate = track_window(window, &self.params).expect("buffer holds one window");
        let stride = self.params.effective_stride();
        self.buffer.drain(..stride);
        Some(estimate)
    }
}

pub fn track_stream(
    stream: &EventStream,
    params: &TrackerParams,
) -> Result<Vec<PositionEstimate>, TrackerError> {
    let mut tracker = StreamTracker::new(*params)?;
    Ok(stream.iter().filter_map(|e| tracker.push(*e)).collect())
}

/// CSV with header `t,x,y,support`.
pub fn estimates_to_csv(estimates: &[PositionEstimate]) -> String {
    let mut s = String::from("t,x,y,support\n");
    for e in estimates {
        let _ = writeln!(s, "{},{},{},{}", e.t, e.x, e.y, e.support);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{Polarity, SensorGeometry};

    fn ev(x: u16, y: u16, t: Micros) -> Event {
        Event::new(x, y, t, Polarity::Positive)
    }

    #[test]
    fn degenerate_cluster() {
        let events: Vec<_> = (0..20).map(|t| ev(10, 10, t)).collect();
        let est = track_window(&events, &TrackerParams::default()).unwrap();
        assert_eq!((est.x, est.y, est.support), (10, 10, 19));
    }

    #[test]
    fn outlier_loses() {
        let mut events: Vec<_> = (0..19).map(|i| ev(9 + (i % 3) as u16, 10, i)).collect();
        events.push(ev(100, 100, 19));
        let est = track_window(&events, &TrackerParams::default()).unwrap();
        assert!(est.x.abs_diff(10) <= 3 && est.y == 10);
        assert_eq!(est.support, 18);
    }

    #[test]
    fn equal_clusters_latest_wins() {
        let mut events: Vec<_> = (0..10).map(|i| ev(10, 10, i)).collect();
        events.extend((10..20).map(|i| ev(60, 60, i)));
        let est = track_window(&events, &TrackerParams::default()).unwrap();
        assert_eq!((est.x, est.y), (60, 60));
        assert_eq!(est.t, 19);
    }

    #[test]
    fn wrong_window_size() {
        let events: Vec<_> = (0..19).map(|t| ev(1, 1, t)).collect();
        assert_eq!(
            track_window(&events, &TrackerParams::default()),
            Err(TrackerError::WindowSize {
                expected: 20,
                got: 19
            })
        );
    }

    #[test]
    fn window_arithmetic() {
        let g = SensorGeometry::new(32, 32).unwrap();
        for (n, expected) in [(40, 2), (39, 1), (19, 0)] {
            let s = EventStream::new(g, (0..n).map(|t| ev(5, 5, t)).collect()).unwrap();
            assert_eq!(track_stream(&s, &TrackerParams::default()).unwrap().len(), expected);
        }
        let sliding = TrackerParams {
            stride: Some(5),
            ..TrackerParams::default()
        };
        let s = EventStream::new(g, (0..40).map(|t| ev(5, 5, t)).collect()).unwrap();
        // windows start at 0, 5, 10, 15, 20
        assert_eq!(track_stream(&s, &sliding).unwrap().len(), 5);
        assert!(TrackerParams {
            stride: Some(21),
            ..TrackerParams::default()
        }
        .validate()
        .is_err());
    }
}
