//! Independent reference implementations used as test oracles.
//!
//! Each one is written for clarity rather than speed and shares no code with
//! the library beyond its plain data types.

#![allow(dead_code)]

use evtrack_core::events::{Event, EventStream, Polarity, SensorGeometry};
use evtrack_core::frame::{Connectivity, Mask};
use evtrack_core::kinematics::RobotGeometry;
use evtrack_core::ldsi::{DecayMode, LdsiParams};
use evtrack_core::netsim::{CycleLog, NodeRole};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Sorted random stream with non-decreasing timestamps.
pub fn random_stream(rng: &mut ChaCha8Rng, g: SensorGeometry, n: usize, mean_gap_us: u64) -> EventStream {
    let mut t = 0u64;
    let mut events = Vec::with_capacity(n);
    for _ in 0..n {
        t += rng.random_range(0..=2 * mean_gap_us);
        let pol = if rng.random::<bool>() { Polarity::Positive } else { Polarity::Negative };
        events.push(Event::new(
            rng.random_range(0..g.width()),
            rng.random_range(0..g.height()),
            t,
            pol,
        ));
    }
    EventStream::from_unsorted(g, events).expect("events in bounds")
}

/// Random parameters inside the validated ranges; thresholds and increments
/// are drawn from a coarse grid so exact threshold hits actually occur.
pub fn random_params(rng: &mut ChaCha8Rng) -> LdsiParams {
    let mut level = || rng.random_range(0..=20) as f64 * 0.5;
    LdsiParams {
        erco: level(),
        ercn: level(),
        ernc: level(),
        tce: level(),
        tne: level(),
        derp: level(),
        derc: level(),
        mtr: rng.random_range(1..=30_000),
        dl: rng.random_range(0..=3),
        per_polarity: rng.random::<bool>(),
        decay: if rng.random::<bool>() { DecayMode::Repeated } else { DecayMode::Single },
    }
}

/// Full-sensor reference filter. Every event scans both whole layers: a unit
/// is updated iff it is the event's own unit or lies within the fan-out ring
/// of a firing core unit.
pub fn naive_ldsi(stream: &EventStream, p: &LdsiParams) -> Vec<Event> {
    let g = stream.geometry();
    let (m, n) = (g.width() as usize, g.height() as usize);
    // [polarity map][y][x] over the full sensor; border entries stay unused
    let mut d_pot = vec![vec![vec![0.0f64; m]; n]; 2];
    let mut d_last = vec![vec![vec![0u64; m]; n]; 2];
    let mut a_pot = d_pot.clone();
    let mut a_last = d_last.clone();
    let decay = |pot: &mut f64, last: &mut u64, now: u64, dec: f64| {
        let dt = now - *last;
        if dt > p.mtr {
            let k = match p.decay {
                DecayMode::Repeated => (dt / p.mtr) as f64,
                DecayMode::Single => 1.0,
            };
            *pot = (*pot - dec * k).max(0.0);
        }
        *last = now;
    };
    let mut out = Vec::new();
    for ev in stream.iter() {
        let (ex, ey) = (ev.x as usize, ev.y as usize);
        if ex == 0 || ey == 0 || ex == m - 1 || ey == n - 1 {
            continue;
        }
        let map = if p.per_polarity { (ev.polarity == Polarity::Negative) as usize } else { 0 };
        let mut fired = false;
        for y in 1..n - 1 {
            for x in 1..m - 1 {
                if (x, y) == (ex, ey) {
                    decay(&mut d_pot[map][y][x], &mut d_last[map][y][x], ev.t, p.derp);
                    d_pot[map][y][x] += p.erco;
                    if d_pot[map][y][x] >= p.tce {
                        d_pot[map][y][x] = 0.0;
                        fired = true;
                    }
                }
            }
        }
        if !fired {
            continue;
        }
        for y in 1..n - 1 {
            for x in 1..m - 1 {
                let cheb = x.abs_diff(ex).max(y.abs_diff(ey));
                if cheb > p.dl as usize {
                    continue;
                }
                decay(&mut a_pot[map][y][x], &mut a_last[map][y][x], ev.t, p.derc);
                a_pot[map][y][x] += if cheb == 0 { p.ercn } else { p.ernc };
                if a_pot[map][y][x] >= p.tne {
                    a_pot[map][y][x] = 0.0;
                    out.push(Event::new(x as u16, y as u16, ev.t, ev.polarity));
                }
            }
        }
    }
    out.sort();
    out
}

/// O(n^2) vicinity vote: (x, y, t, support) of the winner.
pub fn brute_vicinity(window: &[Event], radius: u16) -> (u16, u16, u64, usize) {
    let mut best: Option<(usize, Event)> = None;
    for (i, a) in window.iter().enumerate() {
        let mut count = 0;
        for (j, b) in window.iter().enumerate() {
            if i != j && a.x.abs_diff(b.x) <= radius && a.y.abs_diff(b.y) <= radius {
                count += 1;
            }
        }
        let take = match &best {
            None => true,
            Some((c, e)) => count > *c || (count == *c && (a.t, a.y, a.x, a.polarity) > (e.t, e.y, e.x, e.polarity)),
        };
        if take {
            best = Some((count, *a));
        }
    }
    let (support, e) = best.expect("non-empty window");
    (e.x, e.y, e.t, support)
}

/// Flood-fill labeling: component sizes in raster order of first pixel.
pub fn flood_fill_sizes(mask: &Mask, connectivity: Connectivity) -> Vec<usize> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut sizes = Vec::new();
    let offsets: &[(i64, i64)] = match connectivity {
        Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
        Connectivity::Eight => &[(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)],
    };
    for start in 0..w * h {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for (dx, dy) in offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if mask.bits[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        sizes.push(size);
    }
    sizes
}

/// Elbow-up tool point for motor angles in degrees, by direct geometry: the
/// distal links meet at the upper intersection of the two elbow circles.
pub fn tool_point(g: &RobotGeometry, xi_deg: f64, sigma_deg: f64) -> Option<[f64; 2]> {
    let (xi, sigma) = (xi_deg.to_radians(), sigma_deg.to_radians());
    let e1 = [g.l1 * xi.cos(), g.l1 * xi.sin()];
    let e2 = [g.d + g.l1 * sigma.cos(), g.l1 * sigma.sin()];
    let (dx, dy) = (e2[0] - e1[0], e2[1] - e1[1]);
    let dist = dx.hypot(dy);
    if dist > 2.0 * g.l2 || dist == 0.0 {
        return None;
    }
    let half = (g.l2 * g.l2 - dist * dist / 4.0).max(0.0).sqrt();
    let mid = [e1[0] + dx / 2.0, e1[1] + dy / 2.0];
    let a = [mid[0] - dy / dist * half, mid[1] + dx / dist * half];
    let b = [mid[0] + dy / dist * half, mid[1] - dx / dist * half];
    Some(if a[1] >= b[1] { a } else { b })
}

/// Coarse-to-fine grid search over (xi, sigma) for the angles whose tool
/// point is closest to `target`; the finest step is 0.01 degrees.
///
/// Only the outward-elbow branch is searched: elbow 1 left of the ray from
/// motor 1 to the target, elbow 2 right of the ray from motor 2.
pub fn grid_ik(g: &RobotGeometry, target: [f64; 2]) -> (f64, f64, f64) {
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let err = |xi: f64, s: f64| {
        let (xr, sr) = (xi.to_radians(), s.to_radians());
        let e1 = [g.l1 * xr.cos(), g.l1 * xr.sin()];
        let e2 = [g.d + g.l1 * sr.cos(), g.l1 * sr.sin()];
        if cross([0.0, 0.0], target, e1) <= 0.0 || cross([g.d, 0.0], target, e2) >= 0.0 {
            return f64::INFINITY;
        }
        tool_point(g, xi, s).map_or(f64::INFINITY, |p| (p[0] - target[0]).hypot(p[1] - target[1]))
    };
    let mut best = (0.0, 0.0, f64::INFINITY);
    let mut xi = -180.0;
    while xi < 180.0 {
        let mut s = -180.0;
        while s < 180.0 {
            let e = err(xi, s);
            if e < best.2 {
                best = (xi, s, e);
            }
            s += 1.0;
        }
        xi += 1.0;
    }
    for (span, step) in [(2.0, 0.1), (0.2, 0.01)] {
        let (cx, cs, _) = best;
        let n = (span / step) as i32;
        for i in -n..=n {
            for j in -n..=n {
                let (xi, s) = (cx + i as f64 * step, cs + j as f64 * step);
                let e = err(xi, s);
                if e < best.2 {
                    best = (xi, s, e);
                }
            }
        }
    }
    best
}

/// Camera-to-servo latency of each injection (ns) computed by walking the
/// log cycle by cycle.
pub fn walk_latency(log: &CycleLog, injections: &[u64]) -> Vec<Option<u64>> {
    let cam = log.config.node_with_role(NodeRole::Camera).unwrap();
    let servo = log.config.node_with_role(NodeRole::Servo).unwrap();
    injections
        .iter()
        .map(|&t| {
            let mut relayed_at = None;
            for cycle in &log.cycles {
                for ex in &cycle.exchanges {
                    match relayed_at {
                        None if ex.node == cam && ex.response.is_some() && ex.resp_start >= t => {
                            relayed_at = Some(ex.resp_arrival)
                        }
                        Some(at) if ex.node == servo && ex.req_start >= at => return Some(ex.req_arrival - t),
                        _ => {}
                    }
                }
            }
            None
        })
        .collect()
}

/// Distance of `p` from the line through the two elbows. The forward map
/// loses precision as it approaches zero, where the distal links align.
pub fn elbow_line_clearance(g: &RobotGeometry, xi_deg: f64, sigma_deg: f64, p: [f64; 2]) -> f64 {
    let (xi, sigma) = (xi_deg.to_radians(), sigma_deg.to_radians());
    let e1 = [g.l1 * xi.cos(), g.l1 * xi.sin()];
    let e2 = [g.d + g.l1 * sigma.cos(), g.l1 * sigma.sin()];
    let (dx, dy) = (e2[0] - e1[0], e2[1] - e1[1]);
    (dx * (p[1] - e1[1]) - dy * (p[0] - e1[0])).abs() / dx.hypot(dy)
}

/// Clearance from the elbow line that counts as the workspace interior, mm.
pub const INTERIOR_CLEARANCE_MM: f64 = 0.1;
