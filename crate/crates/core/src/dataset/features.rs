use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::kinematics::{criticality_index, ScenarioWindow};

/// Radii above this are treated as straight road, in meters.
pub const RADIUS_CAP: f64 = 7000.0;
/// Stand-in radius for straight road segments, in meters.
pub const STRAIGHT_ROAD_RADIUS: f64 = 11111.0;

/// Road-layer attributes at `t0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadAttributes {
    /// Approximate segment radius, meters.
    pub radius: f64,
    /// Speed limit, m/s.
    pub speed_limit: f64,
    pub lanes: u32,
}

/// Absolute heading difference in degrees, folded into `[0, 180]` and
/// rounded to 1e-9 degrees so that radian round-off does not leak into
/// the stored feature.
pub fn fold_heading_difference(a_rad: f64, b_rad: f64) -> f64 {
    let d = (a_rad - b_rad).to_degrees().abs().rem_euclid(360.0);
    let folded = if d > 180.0 { 360.0 - d } else { d };
    (folded * 1e9).round() / 1e9
}

pub(crate) fn clamp_radius(r: f64) -> f64 {
    if r > RADIUS_CAP {
        STRAIGHT_ROAD_RADIUS
    } else {
        r
    }
}

/// Ten-element feature vector of a critical window, in schema order.
pub fn extract_features(
    window: &ScenarioWindow,
    road: &RoadAttributes,
) -> Result<[f64; 10], DatasetError> {
    if criticality_index(window) != 1 {
        return Err(DatasetError::NotCritical);
    }
    Ok(features_unchecked(window, road))
}

pub(crate) fn features_unchecked(window: &ScenarioWindow, road: &RoadAttributes) -> [f64; 10] {
    let braked = |before: f64, after: f64| if after < before { 1.0 } else { 0.0 };
    let ve2 = window.ego_t_minus2.velocity;
    let ve0 = window.ego_t0.velocity;
    let vt2 = window.target_t_minus2.velocity;
    let vt0 = window.target_t0.velocity;
    [
        ve2,
        ve0,
        braked(ve2, ve0),
        vt2,
        vt0,
        braked(vt2, vt0),
        fold_heading_difference(window.ego_t0.orientation, window.target_t0.orientation),
        clamp_radius(road.radius),
        road.speed_limit,
        f64::from(road.lanes),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::VehicleState;

    fn state(x: f64, v: f64, theta: f64) -> VehicleState {
        VehicleState::new([x, 0.0], v, 0.0, theta, 2.25, 0.9).unwrap()
    }

    fn critical_window(ve: (f64, f64), vt: (f64, f64), theta_t: f64) -> ScenarioWindow {
        // footprints already overlap at t0, so the window is critical
        ScenarioWindow::new(
            state(-40.0, ve.0, 0.0),
            state(0.0, ve.1, 0.0),
            state(-30.0, vt.0, theta_t),
            state(1.0, vt.1, theta_t),
        )
    }

    #[test]
    fn braking_flags() {
        let road = RoadAttributes {
            radius: 300.0,
            speed_limit: 33.33,
            lanes: 3,
        };
        let f = extract_features(&critical_window((30.0, 30.0), (25.0, 20.0), 0.0), &road).unwrap();
        assert_eq!(f[2], 0.0);
        assert_eq!(f[5], 1.0);
        assert_eq!(&f[7..], &[300.0, 33.33, 3.0]);
    }

    #[test]
    fn heading_fold() {
        assert!((fold_heading_difference(0.0, 270f64.to_radians()) - 90.0).abs() < 1e-9);
        assert!(
            (fold_heading_difference(10f64.to_radians(), 350f64.to_radians()) - 20.0).abs() < 1e-9
        );
        assert!((fold_heading_difference(0.0, 180f64.to_radians()) - 180.0).abs() < 1e-9);
        let road = RoadAttributes {
            radius: 50.0,
            speed_limit: 13.89,
            lanes: 1,
        };
        let f = extract_features(
            &critical_window((5.0, 5.0), (5.0, 5.0), 270f64.to_radians()),
            &road,
        )
        .unwrap();
        assert!((f[6] - 90.0).abs() < 1e-9);
    }

    #[test]
    fn radius_clamped() {
        let road = RoadAttributes {
            radius: 9000.0,
            speed_limit: 33.33,
            lanes: 3,
        };
        let f = extract_features(&critical_window((30.0, 30.0), (25.0, 20.0), 0.0), &road).unwrap();
        assert_eq!(f[7], 11111.0);
        assert_eq!(clamp_radius(7000.0), 7000.0);
    }

    #[test]
    fn rejects_uncritical() {
        let s = state(0.0, 0.0, 0.0);
        let far = VehicleState::new([100.0, 0.0], 0.0, 0.0, 0.0, 2.25, 0.9).unwrap();
        let w = ScenarioWindow::new(s, s, far, far);
        let road = RoadAttributes {
            radius: 50.0,
            speed_limit: 13.89,
            lanes: 1,
        };
        assert!(matches!(
            extract_features(&w, &road),
            Err(DatasetError::NotCritical)
        ));
    }
}
