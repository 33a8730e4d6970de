//! Two-vehicle scenario windows and the physical predicates used to decide
//! whether a window is critical.
//!
//! Vehicles are oriented rectangles moving under a constant-acceleration
//! model along a fixed heading. Speeds clamp at zero when braking, so a
//! vehicle never reverses. A window is critical when the two rectangles
//! touch within a short horizon after `t0`, or when they end that horizon
//! closer than [`NEAR_MISS_DISTANCE`] while both are still moving faster
//! than [`NEAR_MISS_SPEED`].

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Length of a scenario window, `t0 - t_-2`, in seconds.
pub const WINDOW_SECONDS: f64 = 2.0;
/// Prediction horizon after `t0` used by the criticality check, in seconds.
pub const PREDICTION_HORIZON: f64 = 0.3;
/// Default step of the sampled overlap test, in seconds.
pub const DEFAULT_SAMPLE_STEP: f64 = 0.01;
/// Rectangle-to-rectangle distance below which a window is a near miss, in meters.
pub const NEAR_MISS_DISTANCE: f64 = 0.3;
/// Both vehicles must exceed this speed for a near miss to count, in m/s.
pub const NEAR_MISS_SPEED: f64 = 2.0;
/// Default pre-filter distance threshold, in meters.
pub const DEFAULT_PREFILTER_DISTANCE: f64 = 20.0;
/// Default pre-filter closing-speed threshold, in m/s.
pub const DEFAULT_PREFILTER_CLOSING_SPEED: f64 = 0.5;

const GEOMETRY_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    #[error("velocity must be finite and >= 0, got {0}")]
    NegativeVelocity(f64),
    #[error("vehicle half extents must be > 0, got {half_length} x {half_width}")]
    BadExtent { half_length: f64, half_width: f64 },
    #[error("non-finite vehicle state")]
    NonFinite,
    #[error("window length must be {WINDOW_SECONDS} s, got {0}")]
    BadWindow(f64),
}

/// Kinematic state and footprint of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Center of the footprint, meters.
    pub position: [f64; 2],
    /// Speed along the heading, m/s.
    pub velocity: f64,
    /// Longitudinal acceleration, m/s².
    pub acceleration: f64,
    /// Heading in radians, normalized into `[0, 2π)`.
    pub orientation: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl VehicleState {
    pub fn new(
        position: [f64; 2],
        velocity: f64,
        acceleration: f64,
        orientation: f64,
        half_length: f64,
        half_width: f64,
    ) -> Result<Self, KinematicsError> {
        if !(position[0].is_finite()
            && position[1].is_finite()
            && acceleration.is_finite()
            && orientation.is_finite())
        {
            return Err(KinematicsError::NonFinite);
        }
        if !(velocity.is_finite() && velocity >= 0.0) {
            return Err(KinematicsError::NegativeVelocity(velocity));
        }
        if !(half_length > 0.0 && half_width > 0.0) {
            return Err(KinematicsError::BadExtent {
                half_length,
                half_width,
            });
        }
        Ok(Self {
            position,
            velocity,
            acceleration,
            orientation: normalize_angle(orientation),
            half_length,
            half_width,
        })
    }

    /// Unit vector along the heading.
    pub fn heading(&self) -> [f64; 2] {
        [self.orientation.cos(), self.orientation.sin()]
    }

    pub fn velocity_vector(&self) -> [f64; 2] {
        let h = self.heading();
        [h[0] * self.velocity, h[1] * self.velocity]
    }

    pub fn footprint(&self) -> OrientedRect {
        OrientedRect {
            center: self.position,
            half_length: self.half_length,
            half_width: self.half_width,
            orientation: self.orientation,
        }
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Ego and target states at `t_-2` and `t0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioWindow {
    pub ego_t_minus2: VehicleState,
    pub ego_t0: VehicleState,
    pub target_t_minus2: VehicleState,
    pub target_t0: VehicleState,
    pub window_seconds: f64,
}

impl ScenarioWindow {
    pub fn new(
        ego_t_minus2: VehicleState,
        ego_t0: VehicleState,
        target_t_minus2: VehicleState,
        target_t0: VehicleState,
    ) -> Self {
        Self {
            ego_t_minus2,
            ego_t0,
            target_t_minus2,
            target_t0,
            window_seconds: WINDOW_SECONDS,
        }
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        if self.window_seconds != WINDOW_SECONDS {
            return Err(KinematicsError::BadWindow(self.window_seconds));
        }
        for s in [
            &self.ego_t_minus2,
            &self.ego_t0,
            &self.target_t_minus2,
            &self.target_t0,
        ] {
            VehicleState::new(
                s.position,
                s.velocity,
                s.acceleration,
                s.orientation,
                s.half_length,
                s.half_width,
            )?;
        }
        Ok(())
    }

    /// The same window with ego and target exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            ego_t_minus2: self.target_t_minus2,
            ego_t0: self.target_t0,
            target_t_minus2: self.ego_t_minus2,
            target_t0: self.ego_t0,
            window_seconds: self.window_seconds,
        }
    }
}

/// Advances `state` by `dt` seconds under constant acceleration along its
/// heading. The speed clamps at zero; once stopped the vehicle stays put.
///
/// Panics if `dt` is negative.
pub fn predict_pose(state: &VehicleState, dt: f64) -> VehicleState {
    assert!(dt >= 0.0, "predict_pose called with negative dt = {dt}");
    let v = state.velocity;
    let a = state.acceleration;
    let (distance, velocity) = if a < 0.0 && v + a * dt < 0.0 {
        let t_stop = -v / a;
        (v * t_stop + 0.5 * a * t_stop * t_stop, 0.0)
    } else {
        (v * dt + 0.5 * a * dt * dt, v + a * dt)
    };
    let h = state.heading();
    VehicleState {
        position: [
            state.position[0] + h[0] * distance,
            state.position[1] + h[1] * distance,
        ],
        velocity: velocity.max(0.0),
        ..*state
    }
}

/// A rectangle with its long axis along `orientation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedRect {
    pub center: [f64; 2],
    pub half_length: f64,
    pub half_width: f64,
    pub orientation: f64,
}

impl OrientedRect {
    pub fn axis_aligned(center: [f64; 2], half_length: f64, half_width: f64) -> Self {
        Self {
            center,
            half_length,
            half_width,
            orientation: 0.0,
        }
    }

    fn axes(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.orientation.sin_cos();
        [[c, s], [-s, c]]
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let [u, w] = self.axes();
        let (l, h) = (self.half_length, self.half_width);
        let [cx, cy] = self.center;
        let p = |sl: f64, sw: f64| {
            [
                cx + sl * l * u[0] + sw * h * w[0],
                cy + sl * l * u[1] + sw * h * w[1],
            ]
        };
        [p(1.0, 1.0), p(-1.0, 1.0), p(-1.0, -1.0), p(1.0, -1.0)]
    }

    fn project(&self, axis: [f64; 2]) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for c in self.corners() {
            let d = dot(c, axis);
            lo = lo.min(d);
            hi = hi.max(d);
        }
        (lo, hi)
    }
}

/// Separating-axis test on the four edge normals. Closed rectangles, so
/// touching edges count as overlap.
pub fn polygons_overlap(a: &OrientedRect, b: &OrientedRect) -> bool {
    let [a0, a1] = a.axes();
    let [b0, b1] = b.axes();
    for axis in [a0, a1, b0, b1] {
        let (amin, amax) = a.project(axis);
        let (bmin, bmax) = b.project(axis);
        if amax < bmin - GEOMETRY_EPS || bmax < amin - GEOMETRY_EPS {
            return false;
        }
    }
    true
}

/// Minimum Euclidean distance between two closed rectangles; zero when they
/// overlap.
pub fn rect_distance(a: &OrientedRect, b: &OrientedRect) -> f64 {
    if polygons_overlap(a, b) {
        return 0.0;
    }
    // For disjoint convex polygons the minimum is attained between a vertex
    // of one and an edge of the other.
    let ca = a.corners();
    let cb = b.corners();
    let mut best = f64::INFINITY;
    for (verts, edges) in [(&ca, &cb), (&cb, &ca)] {
        for &p in verts.iter() {
            for k in 0..4 {
                best = best.min(point_segment_distance(p, edges[k], edges[(k + 1) % 4]));
            }
        }
    }
    best
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = sub(b, a);
    let ap = sub(p, a);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 {
        (dot(ap, ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
    norm(sub(p, q))
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

/// Settings of the sampled collision check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionCheck {
    pub horizon: f64,
    pub step: f64,
}

impl Default for CollisionCheck {
    fn default() -> Self {
        Self {
            horizon: PREDICTION_HORIZON,
            step: DEFAULT_SAMPLE_STEP,
        }
    }
}

impl CollisionCheck {
    /// Sample times in `(0, horizon]`, always ending exactly at `horizon`.
    fn sample_times(&self) -> impl Iterator<Item = f64> + '_ {
        let n = ((self.horizon / self.step).round() as usize).max(1);
        (1..=n).map(move |k| {
            if k == n {
                self.horizon
            } else {
                k as f64 * self.step
            }
        })
    }
}

/// True iff the predicted footprints overlap at any sampled time in
/// `(t0, t0 + horizon]`.
pub fn collision_predicted(window: &ScenarioWindow, check: &CollisionCheck) -> bool {
    check.sample_times().any(|t| {
        let e = predict_pose(&window.ego_t0, t);
        let g = predict_pose(&window.target_t0, t);
        polygons_overlap(&e.footprint(), &g.footprint())
    })
}

/// Binary criticality index of a window, evaluated with the default sampled
/// collision check.
pub fn criticality_index(window: &ScenarioWindow) -> u8 {
    criticality_index_with(window, &CollisionCheck::default())
}

pub fn criticality_index_with(window: &ScenarioWindow, check: &CollisionCheck) -> u8 {
    if collision_predicted(window, check) {
        return 1;
    }
    let e = predict_pose(&window.ego_t0, check.horizon);
    let g = predict_pose(&window.target_t0, check.horizon);
    let d_rel = rect_distance(&e.footprint(), &g.footprint());
    let near_miss =
        d_rel < NEAR_MISS_DISTANCE && e.velocity > NEAR_MISS_SPEED && g.velocity > NEAR_MISS_SPEED;
    u8::from(near_miss)
}

/// Rate at which the center distance shrinks at `t0` (positive when approaching).
pub fn closing_speed(window: &ScenarioWindow) -> f64 {
    let r = sub(window.target_t0.position, window.ego_t0.position);
    let v = sub(
        window.target_t0.velocity_vector(),
        window.ego_t0.velocity_vector(),
    );
    let d = norm(r);
    if d == 0.0 {
        return norm(v);
    }
    -dot(r, v) / d
}

/// Thresholds of the rough pre-filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrefilterThresholds {
    pub distance: f64,
    pub closing_speed: f64,
}

impl Default for PrefilterThresholds {
    fn default() -> Self {
        Self {
            distance: DEFAULT_PREFILTER_DISTANCE,
            closing_speed: DEFAULT_PREFILTER_CLOSING_SPEED,
        }
    }
}

/// Cheap keep/drop decision run before the criticality check.
///
/// A window is kept when the footprints are closer than `distance` at `t0`
/// and either the centers approach faster than `closing_speed` or the
/// footprints could come within the near-miss distance inside the horizon
/// given the current relative speed and accelerations. The second clause
/// covers side-by-side near misses, which have no closing speed at all.
pub fn prefilter(window: &ScenarioWindow, thresholds: &PrefilterThresholds) -> bool {
    let e = &window.ego_t0;
    let g = &window.target_t0;
    let gap = rect_distance(&e.footprint(), &g.footprint());
    if gap >= thresholds.distance {
        return false;
    }
    if closing_speed(window) > thresholds.closing_speed {
        return true;
    }
    let h = PREDICTION_HORIZON;
    let rel_speed = norm(sub(g.velocity_vector(), e.velocity_vector()));
    let accel = e.acceleration.abs() + g.acceleration.abs();
    let reach = NEAR_MISS_DISTANCE + rel_speed * h + 0.5 * accel * h * h;
    gap < reach
}
