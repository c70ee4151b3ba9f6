mod common;

use common::{brute_vicinity, rng};
use evtrack_core::events::{Event, EventStream, Polarity, SensorGeometry};
use evtrack_core::scene::{generate, SceneSpec};
use evtrack_core::tracker::{track_stream, track_window, TrackerParams};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn params(window: usize, radius: u16) -> TrackerParams {
    TrackerParams {
        window,
        vicinity_radius: radius,
        stride: None,
    }
}

fn sorted(mut events: Vec<Event>) -> Vec<Event> {
    events.sort();
    events
}

#[test]
fn random_windows_match_brute_force() {
    let mut r = rng(21);
    for i in 0..1000 {
        // alternate diffuse and clustered windows so ties are common
        let span = if i % 2 == 0 { 128 } else { 8 };
        let events = sorted(
            (0..20)
                .map(|_| {
                    Event::new(
                        r.random_range(0..span),
                        r.random_range(0..span),
                        r.random_range(0..50),
                        if r.random::<bool>() { Polarity::Positive } else { Polarity::Negative },
                    )
                })
                .collect(),
        );
        let est = track_window(&events, &params(20, 3)).unwrap();
        assert_eq!((est.x, est.y, est.t, est.support), brute_vicinity(&events, 3), "{events:?}");
    }
}

#[test]
fn cluster_beats_outlier_and_latest_cluster_wins_ties() {
    let p = params(20, 3);
    let mut a: Vec<Event> = (0..19).map(|i| Event::new(10 + (i % 3) as u16, 10, i, Polarity::Positive)).collect();
    a.push(Event::new(100, 100, 19, Polarity::Positive));
    let est = track_window(&a, &p).unwrap();
    assert!(est.x.abs_diff(10) <= 3 && est.y == 10);

    let b: Vec<Event> = (0..20)
        .map(|i| {
            let (x, y) = if i < 10 { (10, 10) } else { (50, 50) };
            Event::new(x, y, i, Polarity::Negative)
        })
        .collect();
    let est = track_window(&b, &p).unwrap();
    assert_eq!((est.x, est.y, est.t), (50, 50, 19));
}

#[test]
fn noise_free_estimates_lie_on_the_ball() {
    for name in ["standard", "line", "zigzag", "fast"] {
        let mut spec = SceneSpec::preset(name).unwrap();
        spec.noise.background_rate = 0.0;
        spec.duration = 2_000_000;
        let scene = generate(&spec).unwrap();
        let est = track_stream(&scene.stream, &TrackerParams::default()).unwrap();
        assert!(est.len() > 100, "{name}");
        for e in &est {
            let d = on_ball_distance(&spec, e.x, e.y, e.t);
            assert!(d <= spec.ball_radius, "{name}: estimate {e:?} is {d} px from the ball");
        }
    }
}

/// Distance from pixel to ball centre at the instant the pixel changed.
/// Event times are rounded up to the microsecond, so that instant lies in
/// `(t - 1, t]`.
fn on_ball_distance(spec: &SceneSpec, x: u16, y: u16, t: u64) -> f64 {
    [t.saturating_sub(1), t]
        .iter()
        .map(|&s| {
            let [cx, cy] = spec.center_at(s);
            (x as f64 - cx).hypot(y as f64 - cy)
        })
        .fold(f64::INFINITY, f64::min)
}

fn arb_window(max: usize) -> impl Strategy<Value = Vec<Event>> {
    prop::collection::vec((0u16..24, 0u16..24, 0u64..1_000, any::<bool>()), 1..=max).prop_map(|raw| {
        sorted(
            raw.into_iter()
                .map(|(x, y, t, p)| Event::new(x, y, t, if p { Polarity::Positive } else { Polarity::Negative }))
                .collect(),
        )
    })
}

proptest! {
    #[test]
    fn any_window_size_matches_brute_force(events in arb_window(64), radius in 0u16..6) {
        let est = track_window(&events, &params(events.len(), radius)).unwrap();
        prop_assert_eq!((est.x, est.y, est.t, est.support), brute_vicinity(&events, radius));
        prop_assert!(events.iter().any(|e| (e.x, e.y, e.t) == (est.x, est.y, est.t)));
    }

    #[test]
    fn shuffling_and_resorting_changes_nothing(events in arb_window(40), seed in any::<u64>()) {
        let p = params(events.len(), 3);
        let mut shuffled = events.clone();
        shuffled.shuffle(&mut rng(seed));
        let again = sorted(shuffled);
        prop_assert_eq!(track_window(&events, &p).unwrap(), track_window(&again, &p).unwrap());
    }

    #[test]
    fn stream_count_is_window_arithmetic(n in 0usize..200, window in 1usize..30) {
        let g = SensorGeometry::new(32, 32).unwrap();
        let s = EventStream::new(g, (0..n as u64).map(|t| Event::new(5, 5, t, Polarity::Positive)).collect()).unwrap();
        prop_assert_eq!(track_stream(&s, &params(window, 3)).unwrap().len(), n / window);
    }
}
