//! Inverse and forward kinematics of the two-motor five-bar positioning robot.
//!
//! Motor 1 sits at the origin and motor 2 at `(d, 0)`. Each motor drives a
//! proximal link of length `l1`; two distal links of length `l2` meet at the
//! tool center point (TCP). Angles are degrees, measured counter-clockwise
//! from +X at each motor. The elbow-up branch is used throughout.
//!
//! With both elbows up, targets close to the baseline put the TCP below the
//! line through the elbows. The same motor angles then also reach the mirror
//! point above that line, so such targets cannot be told apart by the motor
//! angles alone. The inverse map rejects them; its domain is the part of the
//! reach where the TCP is the upper intersection of the distal-link circles,
//! which is exactly where [`forward_kinematics`] inverts it.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rounding slack tolerated on cosine arguments before they are clamped.
pub const COSINE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("target ({x}, {y}) is out of reach of arm {arm} (distance {distance}, reach [{min}, {max}])")]
    Unreachable {
        x: f64,
        y: f64,
        arm: u8,
        distance: f64,
        min: f64,
        max: f64,
    },
    #[error("target ({x}, {y}) lies beyond the parallel singularity of the elbow-up branch")]
    BeyondSingularity { x: f64, y: f64 },
    #[error("target y = {0} must be > 0")]
    BelowBaseline(f64),
    #[error("elbow circles do not intersect for angles ({xi}, {sigma})")]
    NoIntersection { xi: f64, sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotGeometry {
    /// Motor separation, mm.
    pub d: f64,
    /// Proximal link length, mm.
    pub l1: f64,
    /// Distal link length, mm.
    pub l2: f64,
}

impl Default for RobotGeometry {
    fn default() -> Self {
        Self {
            d: 300.0,
            l1: 200.0,
            l2: 200.0,
        }
    }
}

impl RobotGeometry {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        for (name, v) in [("d", self.d), ("l1", self.l1), ("l2", self.l2)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(KinematicsError::InvalidGeometry(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointAngles {
    /// Motor 1 angle, degrees.
    pub xi: f64,
    /// Motor 2 angle, degrees.
    pub sigma: f64,
}

/// Intermediate quantities of one inverse solve. Angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IkDiagnostics {
    pub h1: f64,
    pub h2: f64,
    pub beta: f64,
    pub gamma: f64,
    pub omega: f64,
    pub theta: f64,
    /// Law-of-cosines arguments for omega and theta before clamping.
    pub cos_omega: f64,
    pub cos_theta: f64,
}

fn check_reach(
    geom: &RobotGeometry,
    x: f64,
    y: f64,
    arm: u8,
    h: f64,
) -> Result<(), KinematicsError> {
    let min = (geom.l1 - geom.l2).abs();
    let max = geom.l1 + geom.l2;
    if h < min || h > max || h == 0.0 {
        return Err(KinematicsError::Unreachable {
            x,
            y,
            arm,
            distance: h,
            min,
            max,
        });
    }
    Ok(())
}

/// Angle opposite side `c` in a triangle with sides `a`, `b`, `c`, in radians.
///
/// Uses `atan2` with a factored Heron area so that nearly flat triangles keep
/// full precision, where `acos` of the cosine rule would not.
fn triangle_angle(a: f64, b: f64, c: f64) -> (f64, f64) {
    let cosine = (a * a + b * b - c * c) / (2.0 * a * b);
    let area4 = ((a + b + c) * (-a + b + c) * (a - b + c) * (a + b - c))
        .max(0.0)
        .sqrt();
    (area4.atan2(a * a + b * b - c * c), cosine)
}

fn solve(
    geom: &RobotGeometry,
    target: [f64; 2],
) -> Result<(JointAngles, IkDiagnostics), KinematicsError> {
    geom.validate()?;
    let [x, y] = target;
    if y.is_nan() || y <= 0.0 {
        return Err(KinematicsError::BelowBaseline(y));
    }
    let h1 = x.hypot(y);
    let h2 = (geom.d - x).hypot(y);
    check_reach(geom, x, y, 1, h1)?;
    check_reach(geom, x, y, 2, h2)?;

    // gamma = acos(x / h1) and beta = acos((d - x) / h2), exact for y > 0
    let gamma = y.atan2(x);
    let beta = y.atan2(geom.d - x);
    let (omega, cos_omega) = triangle_angle(h1, geom.l1, geom.l2);
    let (theta, cos_theta) = triangle_angle(h2, geom.l1, geom.l2);
    debug_assert!(cos_omega.abs() <= 1.0 + COSINE_TOLERANCE);
    debug_assert!(cos_theta.abs() <= 1.0 + COSINE_TOLERANCE);

    let xi = (omega + gamma).to_degrees();
    let sigma = 180.0 - theta.to_degrees() - beta.to_degrees();
    let angles = JointAngles { xi, sigma };
    if !above_elbow_line(geom, &angles, target) {
        return Err(KinematicsError::BeyondSingularity { x, y });
    }
    Ok((
        angles,
        IkDiagnostics {
            h1,
            h2,
            beta: beta.to_degrees(),
            gamma: gamma.to_degrees(),
            omega: omega.to_degrees(),
            theta: theta.to_degrees(),
            cos_omega,
            cos_theta,
        },
    ))
}

pub fn inverse_kinematics(
    geom: &RobotGeometry,
    target: [f64; 2],
) -> Result<JointAngles, KinematicsError> {
    solve(geom, target).map(|(a, _)| a)
}

/// Inverse solve that also returns the intermediate triangle quantities.
pub fn inverse_kinematics_diagnostic(
    geom: &RobotGeometry,
    target: [f64; 2],
) -> Result<(JointAngles, IkDiagnostics), KinematicsError> {
    solve(geom, target)
}

fn clamped_acos(c: f64) -> f64 {
    c.clamp(-1.0, 1.0).acos()
}

/// The inverse map with the uncorrected formulas: theta divides by
/// `2 h1 l1` and xi is composed as `omega + theta`.
///
/// Kept for comparison only; it does not round-trip through
/// [`forward_kinematics`] for general targets.
pub fn inverse_kinematics_uncorrected(
    geom: &RobotGeometry,
    target: [f64; 2],
) -> Result<JointAngles, KinematicsError> {
    geom.validate()?;
    let [x, y] = target;
    if y.is_nan() || y <= 0.0 {
        return Err(KinematicsError::BelowBaseline(y));
    }
    let (l1, l2, d) = (geom.l1, geom.l2, geom.d);
    let h1 = x.hypot(y);
    let h2 = (d - x).hypot(y);
    check_reach(geom, x, y, 1, h1)?;
    check_reach(geom, x, y, 2, h2)?;
    let beta = clamped_acos((d - x) / h2);
    let omega = clamped_acos((h1 * h1 + l1 * l1 - l2 * l2) / (2.0 * h1 * l1));
    let theta = clamped_acos((h2 * h2 + l1 * l1 - l2 * l2) / (2.0 * h1 * l1));
    Ok(JointAngles {
        xi: (omega + theta).to_degrees(),
        sigma: 180.0 - theta.to_degrees() - beta.to_degrees(),
    })
}

/// True if `target` is not below its mirror image across the elbow line,
/// i.e. it is the intersection that [`forward_kinematics`] returns.
fn above_elbow_line(geom: &RobotGeometry, angles: &JointAngles, target: [f64; 2]) -> bool {
    let (p1, p2) = elbows(geom, angles);
    let (dx, dy) = (p2[0] - p1[0], p2[1] - p1[1]);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return false;
    }
    // mirror y minus target y is -2 * (signed offset) * dx / |d|^2
    let offset = dx * (target[1] - p1[1]) - dy * (target[0] - p1[0]);
    offset * dx >= 0.0
}

/// Elbow joint positions for the given motor angles.
pub fn elbows(geom: &RobotGeometry, angles: &JointAngles) -> ([f64; 2], [f64; 2]) {
    let (xi, sigma) = (angles.xi.to_radians(), angles.sigma.to_radians());
    (
        [geom.l1 * xi.cos(), geom.l1 * xi.sin()],
        [geom.d + geom.l1 * sigma.cos(), geom.l1 * sigma.sin()],
    )
}

/// TCP position: upper intersection of the two distal-link circles.
pub fn forward_kinematics(
    geom: &RobotGeometry,
    angles: &JointAngles,
) -> Result<[f64; 2], KinematicsError> {
    geom.validate()?;
    let no_hit = || KinematicsError::NoIntersection {
        xi: angles.xi,
        sigma: angles.sigma,
    };
    let (p1, p2) = elbows(geom, angles);
    let (dx, dy) = (p2[0] - p1[0], p2[1] - p1[1]);
    let dist = dx.hypot(dy);
    let r = geom.l2;
    if dist == 0.0 || dist > 2.0 * r * (1.0 + 1e-12) {
        return Err(no_hit());
    }
    // equal radii: the chord midpoint is halfway between the elbows
    let half = dist / 2.0;
    let offset = (r * r - half * half).max(0.0).sqrt();
    let (mx, my) = (p1[0] + dx / 2.0, p1[1] + dy / 2.0);
    let (ux, uy) = (-dy / dist, dx / dist);
    let a = [mx + offset * ux, my + offset * uy];
    let b = [mx - offset * ux, my - offset * uy];
    Ok(if a[1] >= b[1] { a } else { b })
}

/// True iff [`inverse_kinematics`] succeeds for `target`.
pub fn workspace_contains(geom: &RobotGeometry, target: [f64; 2]) -> bool {
    inverse_kinematics(geom, target).is_ok()
}

/// CSV dump of diagnostic records: `x,y,h1,h2,beta,gamma,omega,theta`.
pub fn diagnostics_to_csv(rows: &[([f64; 2], IkDiagnostics)]) -> String {
    let mut s = String::from("x,y,h1,h2,beta,gamma,omega,theta\n");
    for ([x, y], d) in rows {
        let _ = writeln!(
            s,
            "{x},{y},{},{},{},{},{},{}",
            d.h1, d.h2, d.beta, d.gamma, d.omega, d.theta
        );
    }
    s
}
