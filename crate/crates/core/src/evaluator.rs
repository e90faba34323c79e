//! Trajectory cost components and the weighted objective.
//!
//! Every component is a squared quantity integrated with a rectangular
//! Riemann sum at the trajectory's `dt`.

use serde::{Deserialize, Serialize};

use crate::scenario::{lane_offsets, GoalRegion, Scenario, Trajectory};

/// Unweighted cost components of a trajectory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostComponents {
    #[serde(rename = "J_A")]
    pub acceleration: f64,
    #[serde(rename = "J_SA")]
    pub steering_angle: f64,
    #[serde(rename = "J_SR")]
    pub steering_rate: f64,
    #[serde(rename = "J_LC")]
    pub lane_center_offset: f64,
    #[serde(rename = "J_O")]
    pub orientation_offset: f64,
    #[serde(rename = "J_V")]
    pub velocity_offset: f64,
}

pub const COMPONENT_KEYS: [&str; 6] = ["J_A", "J_SA", "J_SR", "J_LC", "J_O", "J_V"];

const COMPONENT_NAMES: [&str; 6] = [
    "acceleration",
    "steering angle",
    "steering rate",
    "distance to the lane center",
    "orientation offset to the lane",
    "velocity offset to the desired velocity",
];

impl CostComponents {
    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            acceleration: v[0],
            steering_angle: v[1],
            steering_rate: v[2],
            lane_center_offset: v[3],
            orientation_offset: v[4],
            velocity_offset: v[5],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.acceleration,
            self.steering_angle,
            self.steering_rate,
            self.lane_center_offset,
            self.orientation_offset,
            self.velocity_offset,
        ]
    }

    /// `(key, human-readable name, value)` for every component in canonical order.
    pub fn named(&self) -> impl Iterator<Item = (&'static str, &'static str, f64)> {
        let values = self.to_array();
        (0..6).map(move |i| (COMPONENT_KEYS[i], COMPONENT_NAMES[i], values[i]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    #[serde(rename = "w_A")]
    pub acceleration: f64,
    #[serde(rename = "w_SA")]
    pub steering_angle: f64,
    #[serde(rename = "w_SR")]
    pub steering_rate: f64,
    #[serde(rename = "w_LC")]
    pub lane_center_offset: f64,
    #[serde(rename = "w_O")]
    pub orientation_offset: f64,
    #[serde(rename = "w_V")]
    pub velocity_offset: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self::from_array([50.0, 50.0, 50.0, 1.0, 50.0, 20.0])
    }
}

impl CostWeights {
    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            acceleration: v[0],
            steering_angle: v[1],
            steering_rate: v[2],
            lane_center_offset: v[3],
            orientation_offset: v[4],
            velocity_offset: v[5],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.acceleration,
            self.steering_angle,
            self.steering_rate,
            self.lane_center_offset,
            self.orientation_offset,
            self.velocity_offset,
        ]
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|w| w.is_finite() && *w >= 0.0)
    }
}

/// Components together with the total they produced under some weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub components: CostComponents,
    pub total: f64,
}

impl CostBreakdown {
    pub fn new(components: CostComponents, weights: &CostWeights) -> Self {
        Self {
            components,
            total: aggregate(&components, weights),
        }
    }
}

/// Desired velocity: the midpoint of the goal velocity interval, if any.
pub fn desired_velocity(goal: &GoalRegion) -> Option<f64> {
    goal.velocity_interval.map(|i| i.midpoint())
}

pub fn compute_partial_costs(traj: &Trajectory, scenario: &Scenario, goal: &GoalRegion) -> CostComponents {
    let dt = traj.dt();
    let states = traj.states();
    let mut c = CostComponents::default();
    for w in states.windows(2) {
        let a = (w[1].velocity - w[0].velocity) / dt;
        let sr = (w[1].steering_angle - w[0].steering_angle) / dt;
        c.acceleration += a * a * dt;
        c.steering_rate += sr * sr * dt;
    }
    let v_des = desired_velocity(goal);
    for s in states {
        c.steering_angle += s.steering_angle * s.steering_angle * dt;
        if let Ok((d, psi)) = lane_offsets(s, scenario) {
            c.lane_center_offset += d * d * dt;
            c.orientation_offset += psi * psi * dt;
        }
        if let Some(v) = v_des {
            c.velocity_offset += (s.velocity - v).powi(2) * dt;
        }
    }
    c
}

pub fn aggregate(components: &CostComponents, weights: &CostWeights) -> f64 {
    components
        .to_array()
        .iter()
        .zip(weights.to_array())
        .map(|(c, w)| c * w)
        .sum()
}

/// Machine-readable evaluation of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub components: CostComponents,
    pub weights: CostWeights,
    pub total: f64,
}

pub fn evaluate(traj: &Trajectory, scenario: &Scenario, goal: &GoalRegion, weights: &CostWeights) -> EvaluationReport {
    let components = compute_partial_costs(traj, scenario, goal);
    EvaluationReport {
        components,
        weights: *weights,
        total: aggregate(&components, weights),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub before: CostBreakdown,
    pub after: CostBreakdown,
    /// after − before, per component.
    pub deltas: CostComponents,
    pub total_delta: f64,
    /// (before − after) / before; 0 when the baseline is 0.
    pub relative_decrement: f64,
    pub zero_baseline: bool,
    pub improved: bool,
}

pub fn compare(before: &CostBreakdown, after: &CostBreakdown) -> ComparisonReport {
    let b = before.components.to_array();
    let a = after.components.to_array();
    let deltas = CostComponents::from_array(std::array::from_fn(|i| a[i] - b[i]));
    let zero_baseline = before.total == 0.0;
    let relative_decrement = if zero_baseline {
        0.0
    } else {
        (before.total - after.total) / before.total
    };
    ComparisonReport {
        before: *before,
        after: *after,
        deltas,
        total_delta: after.total - before.total,
        relative_decrement,
        zero_baseline,
        improved: after.total < before.total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Interval, Lanelet, VehicleState};

    fn road() -> Scenario {
        Scenario {
            dt: 0.1,
            horizon: 10,
            lanelets: vec![Lanelet {
                centerline: vec![[0.0, 0.0], [100.0, 0.0]],
                width: 3.5,
            }],
            obstacles: vec![],
        }
    }

    fn goal(v: Option<Interval>) -> GoalRegion {
        GoalRegion {
            center: [50.0, 0.0],
            half_extents: [1.0, 1.0],
            time_interval: [0, 10],
            velocity_interval: v,
            orientation_interval: None,
        }
    }

    #[test]
    fn published_totals() {
        let w = CostWeights::default();
        let cases = [
            ([91.7333, 0.0850, 0.2525, 0.3175, 0.0614, 0.0], 4606.93),
            ([14.9333, 0.0102, 0.0968, 0.3504, 0.0038, 0.0], 752.56),
            ([0.0, 0.0147, 0.0673, 0.3393, 0.0041, 0.0], 4.65),
        ];
        for (c, expected) in cases {
            let j = aggregate(&CostComponents::from_array(c), &w);
            assert!((j - expected).abs() <= 0.01, "{j} vs {expected}");
        }
    }

    #[test]
    fn smooth_centerline_costs_nothing() {
        let states = (0..5).map(|k| VehicleState::new(k as f64, 0.0, 0.0, 10.0, 0.0, k)).collect();
        let t = Trajectory::new(states, 0.1).unwrap();
        let c = compute_partial_costs(&t, &road(), &goal(Some(Interval::new(9.0, 11.0))));
        assert_eq!(c.to_array(), [0.0; 6]);
    }

    #[test]
    fn acceleration_hand_value() {
        let states = vec![
            VehicleState::new(0.0, 0.0, 0.0, 0.0, 0.0, 0),
            VehicleState::new(0.0, 0.0, 0.0, 1.0, 0.0, 1),
        ];
        let t = Trajectory::new(states, 0.1).unwrap();
        let c = compute_partial_costs(&t, &road(), &goal(None));
        assert!((c.acceleration - 10.0).abs() < 1e-9);
        assert_eq!(c.velocity_offset, 0.0);
    }

    #[test]
    fn single_state_has_no_rate_costs() {
        let t = Trajectory::new(vec![VehicleState::new(0.0, 1.0, 0.0, 3.0, 0.2, 0)], 0.1).unwrap();
        let c = compute_partial_costs(&t, &road(), &goal(None));
        assert_eq!(c.acceleration, 0.0);
        assert_eq!(c.steering_rate, 0.0);
        assert!((c.steering_angle - 0.004).abs() < 1e-12);
        assert!((c.lane_center_offset - 0.1).abs() < 1e-12);
    }

    #[test]
    fn no_lanes_means_no_lane_costs() {
        let mut s = road();
        s.lanelets.clear();
        let t = Trajectory::new(vec![VehicleState::new(0.0, 5.0, 1.0, 3.0, 0.0, 0)], 0.1).unwrap();
        let c = compute_partial_costs(&t, &s, &goal(None));
        assert_eq!(c.lane_center_offset, 0.0);
        assert_eq!(c.orientation_offset, 0.0);
    }

    #[test]
    fn comparison_cases() {
        let w = CostWeights::default();
        let before = CostBreakdown::new(CostComponents::from_array([91.7333, 0.0850, 0.2525, 0.3175, 0.0614, 0.0]), &w);
        let after = CostBreakdown::new(CostComponents::from_array([14.9333, 0.0102, 0.0968, 0.3504, 0.0038, 0.0]), &w);
        let r = compare(&before, &after);
        assert!(r.improved);
        assert!((r.relative_decrement - 0.8366).abs() < 1e-3);
        let same = compare(&before, &before);
        assert!(!same.improved);
        assert_eq!(same.total_delta, 0.0);
        assert_eq!(same.deltas.to_array(), [0.0; 6]);
        let worse = compare(&after, &before);
        assert!(!worse.improved && worse.relative_decrement < 0.0);
        let zero = CostBreakdown::new(CostComponents::default(), &w);
        let z = compare(&zero, &after);
        assert!(z.zero_baseline);
        assert_eq!(z.relative_decrement, 0.0);
    }

    #[test]
    fn report_json_shape() {
        let r = EvaluationReport {
            components: CostComponents::default(),
            weights: CostWeights::default(),
            total: 0.0,
        };
        let v = serde_json::to_value(&r).unwrap();
        assert!(v["components"]["J_LC"].is_number());
        assert_eq!(v["weights"]["w_V"], 20.0);
        assert!(v["total"].is_number());
    }
}
