mod common;

use common::{elbow_line_clearance, grid_ik, rng, tool_point, INTERIOR_CLEARANCE_MM};
use evtrack_core::kinematics::{
    forward_kinematics, inverse_kinematics, inverse_kinematics_diagnostic, inverse_kinematics_uncorrected,
    workspace_contains, JointAngles, KinematicsError, RobotGeometry,
};
use proptest::prelude::*;
use rand::Rng;

fn geom() -> RobotGeometry {
    RobotGeometry::default()
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Both arms reach the point.
fn arms_reach(g: &RobotGeometry, p: [f64; 2]) -> bool {
    let h1 = p[0].hypot(p[1]);
    let h2 = (g.d - p[0]).hypot(p[1]);
    let (lo, hi) = ((g.l1 - g.l2).abs(), g.l1 + g.l2);
    p[1] > 0.0 && h1 > lo && h1 < hi && h2 > lo && h2 < hi
}

/// Uniform sample of the workspace interior, by rejection from its bounding
/// box.
fn random_reachable(r: &mut impl Rng, g: &RobotGeometry) -> [f64; 2] {
    let reach = g.l1 + g.l2;
    loop {
        let p = [r.random_range(-reach..g.d + reach), r.random_range(0.0..reach)];
        if !arms_reach(g, p) {
            continue;
        }
        if let Ok(a) = inverse_kinematics(g, p) {
            if elbow_line_clearance(g, a.xi, a.sigma, p) >= INTERIOR_CLEARANCE_MM {
                return p;
            }
        }
    }
}

#[test]
fn round_trip_over_the_workspace() {
    let g = geom();
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let p = random_reachable(&mut r, &g);
        let a = inverse_kinematics(&g, p).unwrap();
        worst = worst.max(dist(forward_kinematics(&g, &a).unwrap(), p));
    }
    assert!(worst < 1e-9, "{worst}");
}

#[test]
fn round_trip_with_unequal_links() {
    let g = RobotGeometry {
        d: 120.0,
        l1: 150.0,
        l2: 230.0,
    };
    let mut r = rng(2);
    for _ in 0..2_000 {
        let p = random_reachable(&mut r, &g);
        let a = inverse_kinematics(&g, p).unwrap();
        assert!(dist(forward_kinematics(&g, &a).unwrap(), p) < 1e-9, "{p:?}");
    }
}

#[test]
fn independent_geometry_agrees_with_forward_map() {
    let g = geom();
    let mut r = rng(3);
    for _ in 0..1_000 {
        let p = random_reachable(&mut r, &g);
        let a = inverse_kinematics(&g, p).unwrap();
        let q = tool_point(&g, a.xi, a.sigma).unwrap();
        assert!(dist(q, p) < 1e-9, "{p:?}");
    }
}

#[test]
fn grid_search_finds_the_same_angles() {
    let g = geom();
    for p in [[150.0, 250.0], [80.0, 260.0], [230.0, 210.0], [60.0, 300.0], [-50.0, 150.0]] {
        let a = inverse_kinematics(&g, p).unwrap();
        let (xi, sigma, err) = grid_ik(&g, p);
        // a 0.01 degree step on a 200 mm link moves the tool by ~0.035 mm
        assert!(err < 0.1, "{p:?}: grid residual {err}");
        assert!((xi - a.xi).abs() < 0.05 && (sigma - a.sigma).abs() < 0.05, "{p:?}: {a:?} vs ({xi}, {sigma})");
    }
}

#[test]
fn midline_targets_are_mirror_symmetric() {
    let g = geom();
    for y in [200.0, 250.0, 330.0] {
        let a = inverse_kinematics(&g, [150.0, y]).unwrap();
        assert!((a.xi - (180.0 - a.sigma)).abs() < 1e-9, "{a:?}");
        let (_, d) = inverse_kinematics_diagnostic(&g, [150.0, y]).unwrap();
        assert!((d.gamma - d.beta).abs() < 1e-9);
    }
    let x = forward_kinematics(&g, &JointAngles { xi: 70.0, sigma: 110.0 }).unwrap()[0];
    assert!((x - 150.0).abs() < 1e-9);
}

#[test]
fn uncorrected_forms_fail_off_the_midline() {
    // documented counterexample; on the midline both forms coincide
    let g = geom();
    let p = [80.0, 260.0];
    let a = inverse_kinematics_uncorrected(&g, p).unwrap();
    let miss = forward_kinematics(&g, &a).map_or(f64::INFINITY, |q| dist(q, p));
    assert!(miss > 1.0, "uncorrected round trip missed by only {miss}");
    let c = inverse_kinematics_uncorrected(&g, [150.0, 250.0]).unwrap();
    assert!(dist(forward_kinematics(&g, &c).unwrap(), [150.0, 250.0]) > 1e-6 || c == inverse_kinematics(&g, [150.0, 250.0]).unwrap());
}

#[test]
fn unreachable_and_degenerate_targets() {
    let g = geom();
    assert!(matches!(
        inverse_kinematics(&g, [150.0, 500.0]),
        Err(KinematicsError::Unreachable { arm: 1, .. })
    ));
    assert!(inverse_kinematics(&g, [150.0, -10.0]).is_err());
    assert!(inverse_kinematics(&g, [150.0, 0.0]).is_err());
    assert!(!workspace_contains(&g, [0.0, 0.0]));
    let top = (400.0f64.powi(2) - 150.0f64.powi(2)).sqrt();
    assert!(workspace_contains(&g, [150.0, top - 1e-6]));
    assert!(!workspace_contains(&g, [150.0, g.l1 + g.l2 + 1.0]));
    assert!(inverse_kinematics(&RobotGeometry { d: 0.0, ..g }, [1.0, 1.0]).is_err());
}

#[test]
fn tangent_circles_meet_in_one_point() {
    let g = geom();
    // elbows at (-50, b) and (350, b), exactly 2 * l2 apart
    let xi = (-0.25f64).acos().to_degrees();
    let a = JointAngles { xi, sigma: 180.0 - xi };
    let p = forward_kinematics(&g, &a).unwrap();
    let b = 200.0 * xi.to_radians().sin();
    assert!((p[0] - 150.0).abs() < 1e-6 && (p[1] - b).abs() < 1e-6, "{p:?}");
}

#[test]
fn targets_past_the_singular_curve_are_rejected() {
    let g = geom();
    // on the midline the singular point is where the distal links are collinear
    let singular = 200.0 * (-0.25f64).acos().sin();
    assert!(workspace_contains(&g, [150.0, singular + 0.01]));
    assert!(matches!(
        inverse_kinematics(&g, [150.0, singular - 0.01]),
        Err(KinematicsError::BeyondSingularity { .. })
    ));
    // below the curve the elbow-up angles reach a second point: the mirror
    // image across the elbow line, which is what a forward solve returns
    let below: [f64; 2] = [150.0, 150.0];
    let h1 = below[0].hypot(below[1]);
    let h2 = (g.d - below[0]).hypot(below[1]);
    let corner = |h: f64| ((h * h + g.l1 * g.l1 - g.l2 * g.l2) / (2.0 * h * g.l1)).acos().to_degrees();
    let xi = below[1].atan2(below[0]).to_degrees() + corner(h1);
    let sigma = 180.0 - corner(h2) - below[1].atan2(g.d - below[0]).to_degrees();
    assert!(xi < 180.0 && sigma > 0.0, "elbows up");
    let q = tool_point(&g, xi, sigma).unwrap();
    assert!(q[1] > below[1] + 1.0 && (q[0] - below[0]).abs() < 1e-9, "{q:?}");
}

#[test]
fn rejected_share_of_the_arm_reach_is_stable() {
    let g = geom();
    let mut r = rng(9);
    let (mut reach, mut rejected) = (0, 0);
    while reach < 20_000 {
        let p = [r.random_range(-400.0..700.0), r.random_range(0.0..400.0)];
        if arms_reach(&g, p) {
            reach += 1;
            rejected += !workspace_contains(&g, p) as usize;
        }
    }
    let share = rejected as f64 / reach as f64;
    assert!((0.35..0.45).contains(&share), "{share}");
}

fn reachable() -> impl Strategy<Value = [f64; 2]> {
    any::<u64>().prop_map(|s| random_reachable(&mut rng(s), &geom()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn nearby_targets_have_nearby_angles(p in reachable(), dir in 0.0f64..std::f64::consts::TAU) {
        let g = geom();
        let q = [p[0] + 0.1 * dir.cos(), p[1] + 0.1 * dir.sin()];
        // stay off the reach boundary, where angles are not differentiable
        let margin = |t: [f64; 2]| {
            let h1 = t[0].hypot(t[1]);
            let h2 = (g.d - t[0]).hypot(t[1]);
            (400.0 - h1).min(400.0 - h2).min(h1).min(h2).min(t[1])
        };
        prop_assume!(margin(p) > 1.0 && margin(q) > 1.0 && workspace_contains(&g, q));
        let a = inverse_kinematics(&g, p).unwrap();
        let b = inverse_kinematics(&g, q).unwrap();
        prop_assert!((a.xi - b.xi).abs() + (a.sigma - b.sigma).abs() < 5.0);
    }

    #[test]
    fn cosine_arguments_stay_in_range(p in reachable()) {
        let (_, d) = inverse_kinematics_diagnostic(&geom(), p).unwrap();
        prop_assert!(d.cos_omega.abs() <= 1.0 + 1e-12 && d.cos_theta.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn containment_agrees_with_solver(x in -450.0f64..750.0, y in -50.0f64..450.0) {
        let g = geom();
        prop_assert_eq!(workspace_contains(&g, [x, y]), inverse_kinematics(&g, [x, y]).is_ok());
    }
}
