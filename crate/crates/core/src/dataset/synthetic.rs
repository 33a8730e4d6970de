//! Seeded generator of critical two-vehicle scenarios for three sceneries.
//!
//! Each scenario is built as a real [`ScenarioWindow`]: speeds, headings and
//! road attributes are drawn from the scenery template, then the target is
//! placed on a course that meets the ego footprint within the prediction
//! horizon. Every window is checked with the criticality index before its
//! features are extracted, so generated rows satisfy the same precondition
//! as recorded ones.

use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::features_unchecked;
use super::{DatasetError, FeatureMatrix, FeatureSchema, RoadAttributes, Scenery};
use crate::kinematics::{
    criticality_index, predict_pose, ScenarioWindow, VehicleState, PREDICTION_HORIZON,
};

const MAX_ATTEMPTS: usize = 1000;

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.hi > self.lo {
            rng.gen_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }

    fn log_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Range::new(self.lo.ln(), self.hi.ln()).uniform(rng).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneryTemplate {
    pub kind: Scenery,
    /// Inclusive lane count bounds.
    pub lanes: (u32, u32),
    /// Speed limits to choose from, m/s.
    pub speed_limits: Vec<f64>,
    /// Road radius, sampled log-uniformly, meters.
    pub radius: Range,
    /// Relative heading at `t0`, degrees.
    pub delta_rel: Range,
    /// Speed at `t_-2` as a fraction of the speed limit.
    pub ego_speed: Range,
    pub target_speed: Range,
    /// Speed change over the window, m/s.
    pub speed_change: Range,
}

impl SceneryTemplate {
    pub fn highway() -> Self {
        Self {
            kind: Scenery::Highway,
            lanes: (2, 3),
            speed_limits: vec![22.22, 27.78, 33.33],
            radius: Range::new(800.0, 20000.0),
            delta_rel: Range::new(0.0, 30.0),
            ego_speed: Range::new(0.7, 1.15),
            target_speed: Range::new(0.4, 1.1),
            speed_change: Range::new(-8.0, 3.0),
        }
    }

    pub fn crossing() -> Self {
        Self {
            kind: Scenery::Crossing,
            lanes: (1, 2),
            speed_limits: vec![13.89],
            // intersections of straight urban streets
            radius: Range::new(8000.0, 20000.0),
            delta_rel: Range::new(60.0, 125.0),
            ego_speed: Range::new(0.3, 1.0),
            target_speed: Range::new(0.3, 1.1),
            speed_change: Range::new(-5.0, 2.0),
        }
    }

    pub fn roundabout() -> Self {
        Self {
            kind: Scenery::Roundabout,
            lanes: (1, 2),
            speed_limits: vec![8.33],
            radius: Range::new(12.0, 30.0),
            delta_rel: Range::new(20.0, 75.0),
            ego_speed: Range::new(0.4, 1.1),
            target_speed: Range::new(0.4, 1.1),
            speed_change: Range::new(-3.0, 1.5),
        }
    }

    pub fn for_kind(kind: Scenery) -> Self {
        match kind {
            Scenery::Highway => Self::highway(),
            Scenery::Crossing => Self::crossing(),
            Scenery::Roundabout => Self::roundabout(),
        }
    }
}

/// One generated window with its road context and label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScenario {
    pub window: ScenarioWindow,
    pub road: RoadAttributes,
    pub scenery: Scenery,
}

fn vehicle_dims(rng: &mut impl Rng) -> (f64, f64) {
    (rng.gen_range(2.0..=2.6), rng.gen_range(0.85..=1.0))
}

fn try_scenario(t: &SceneryTemplate, rng: &mut impl Rng) -> Option<SyntheticScenario> {
    let lanes = rng.gen_range(t.lanes.0..=t.lanes.1);
    let speed_limit = *t.speed_limits.choose(rng)?;
    let road = RoadAttributes {
        radius: t.radius.log_uniform(rng),
        speed_limit,
        lanes,
    };

    let speeds = |rng: &mut dyn rand::RngCore, factor: &Range| {
        let v2 = (factor.uniform(rng) * speed_limit).max(0.5);
        let v0 = (v2 + t.speed_change.uniform(rng)).max(0.5);
        (v2, v0)
    };
    let (ve2, ve0) = speeds(rng, &t.ego_speed);
    let (vt2, vt0) = speeds(rng, &t.target_speed);
    let accel = |v2: f64, v0: f64| ((v0 - v2) / 2.0).clamp(-8.0, 3.0);

    let theta_e = rng.gen_range(0.0..TAU);
    let delta = t.delta_rel.uniform(rng).to_radians();
    let theta_t = if rng.gen_bool(0.5) {
        theta_e + delta
    } else {
        theta_e - delta
    };

    let (le, we) = vehicle_dims(rng);
    let (lt, wt) = vehicle_dims(rng);
    let ego0 = VehicleState::new([0.0, 0.0], ve0, accel(ve2, ve0), theta_e, le, we).ok()?;
    let probe = VehicleState::new([0.0, 0.0], vt0, accel(vt2, vt0), theta_t, lt, wt).ok()?;

    // Put the target where its predicted footprint meets the ego's at the contact time.
    let contact = rng.gen_range(0.02..=PREDICTION_HORIZON);
    let ego_c = predict_pose(&ego0, contact).position;
    let tgt_c = predict_pose(&probe, contact).position;
    let jitter = 0.6 * we.min(wt);
    let offset = [
        rng.gen_range(-jitter..=jitter),
        rng.gen_range(-jitter..=jitter),
    ];
    let target_pos = [
        ego_c[0] - tgt_c[0] + offset[0],
        ego_c[1] - tgt_c[1] + offset[1],
    ];
    let tgt0 = VehicleState {
        position: target_pos,
        ..probe
    };

    let back = |s: &VehicleState, v2: f64| {
        let d = 0.5 * (v2 + s.velocity) * 2.0;
        let h = s.heading();
        VehicleState {
            position: [s.position[0] - h[0] * d, s.position[1] - h[1] * d],
            velocity: v2,
            ..*s
        }
    };
    let window = ScenarioWindow::new(back(&ego0, ve2), ego0, back(&tgt0, vt2), tgt0);
    (criticality_index(&window) == 1).then_some(SyntheticScenario {
        window,
        road,
        scenery: t.kind,
    })
}

/// Draws `count_per_template` critical scenarios from each template, then
/// shuffles them. Deterministic for a fixed seed.
pub fn generate_windows(
    templates: &[SceneryTemplate],
    count_per_template: usize,
    seed: u64,
) -> Result<Vec<SyntheticScenario>, DatasetError> {
    if templates.is_empty() {
        return Err(DatasetError::NoTemplates);
    }
    if count_per_template == 0 {
        return Err(DatasetError::ZeroCount);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(templates.len() * count_per_template);
    for t in templates {
        for _ in 0..count_per_template {
            let s = (0..MAX_ATTEMPTS)
                .find_map(|_| try_scenario(t, &mut rng))
                .ok_or_else(|| DatasetError::GeneratorStalled(t.kind.to_string()))?;
            out.push(s);
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Labelled scenario feature matrix built from [`generate_windows`].
pub fn generate_synthetic(
    templates: &[SceneryTemplate],
    count_per_template: usize,
    seed: u64,
) -> Result<FeatureMatrix, DatasetError> {
    let scenarios = generate_windows(templates, count_per_template, seed)?;
    let mut values = Vec::with_capacity(scenarios.len() * 10);
    for s in &scenarios {
        values.extend_from_slice(&features_unchecked(&s.window, &s.road));
    }
    let labels = scenarios.iter().map(|s| s.scenery).collect();
    FeatureMatrix::from_parts(
        FeatureSchema::scenario(),
        values,
        (0..scenarios.len() as u64).collect(),
        Some(labels),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{RADIUS_CAP, STRAIGHT_ROAD_RADIUS};

    fn all() -> Vec<SceneryTemplate> {
        Scenery::ALL
            .iter()
            .map(|&k| SceneryTemplate::for_kind(k))
            .collect()
    }

    #[test]
    fn deterministic_for_seed() {
        let a = generate_synthetic(&all(), 200, 7).unwrap();
        let b = generate_synthetic(&all(), 200, 7).unwrap();
        assert_eq!(a.n_rows(), 600);
        assert_eq!(
            a.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(a.labels(), b.labels());
        let c = generate_synthetic(&all(), 200, 8).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn highway_relative_heading_bound() {
        let m = generate_synthetic(&[SceneryTemplate::highway()], 300, 3).unwrap();
        let j = m.schema().index_of("delta_rel").unwrap();
        assert!(m.column(j).all(|d| (0.0..=30.0).contains(&d)));
    }

    #[test]
    fn binary_and_radius_invariants() {
        let m = generate_synthetic(&all(), 150, 11).unwrap();
        let s = m.schema();
        for name in ["b_eg", "b_tg"] {
            let j = s.index_of(name).unwrap();
            assert!(m.column(j).all(|v| v == 0.0 || v == 1.0));
        }
        let r = s.index_of("r").unwrap();
        assert!(m
            .column(r)
            .all(|v| v <= RADIUS_CAP || v == STRAIGHT_ROAD_RADIUS));
        let counts = Scenery::ALL.map(|k| m.labels().unwrap().iter().filter(|&&l| l == k).count());
        assert_eq!(counts, [150, 150, 150]);
    }

    #[test]
    fn every_window_is_critical() {
        for s in generate_windows(&all(), 50, 5).unwrap() {
            assert_eq!(criticality_index(&s.window), 1);
            assert!(s.window.validate().is_ok());
        }
    }

    #[test]
    fn rejects_bad_requests() {
        assert!(matches!(
            generate_synthetic(&[], 10, 1),
            Err(DatasetError::NoTemplates)
        ));
        assert!(matches!(
            generate_synthetic(&all(), 0, 1),
            Err(DatasetError::ZeroCount)
        ));
    }
}
