//! Oriented-rectangle overlap via the separating axis test.

use crate::primitives::VehicleModelParams;
use crate::scenario::{Scenario, VehicleState};

use super::PlanError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect {
    pub center: [f64; 2],
    pub half_length: f64,
    pub half_width: f64,
    pub orientation: f64,
}

impl OrientedRect {
    pub fn new(x: f64, y: f64, orientation: f64, length: f64, width: f64) -> Self {
        Self {
            center: [x, y],
            half_length: 0.5 * length,
            half_width: 0.5 * width,
            orientation,
        }
    }

    fn axes(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.orientation.sin_cos();
        [[c, s], [-s, c]]
    }

    pub fn corners(&self) -> [[f64; 2]; 4] {
        let [u, v] = self.axes();
        let (l, w) = (self.half_length, self.half_width);
        let [cx, cy] = self.center;
        [(1.0, 1.0), (1.0, -1.0), (-1.0, -1.0), (-1.0, 1.0)]
            .map(|(a, b)| [cx + a * l * u[0] + b * w * v[0], cy + a * l * u[1] + b * w * v[1]])
    }

    fn project(&self, axis: [f64; 2]) -> (f64, f64) {
        let [u, v] = self.axes();
        let c = self.center[0] * axis[0] + self.center[1] * axis[1];
        let r = self.half_length * (u[0] * axis[0] + u[1] * axis[1]).abs()
            + self.half_width * (v[0] * axis[0] + v[1] * axis[1]).abs();
        (c - r, c + r)
    }

    /// Closed-set overlap test; touching rectangles intersect.
    pub fn intersects(&self, other: &OrientedRect) -> bool {
        let [a0, a1] = self.axes();
        let [b0, b1] = other.axes();
        [a0, a1, b0, b1].into_iter().all(|axis| {
            let (lo_a, hi_a) = self.project(axis);
            let (lo_b, hi_b) = other.project(axis);
            hi_a >= lo_b && hi_b >= lo_a
        })
    }

    pub fn contains_point(&self, p: [f64; 2]) -> bool {
        let [u, v] = self.axes();
        let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
        (dx * u[0] + dy * u[1]).abs() <= self.half_length && (dx * v[0] + dy * v[1]).abs() <= self.half_width
    }
}

pub fn ego_footprint(state: &VehicleState, vehicle: &VehicleModelParams) -> OrientedRect {
    OrientedRect::new(state.x, state.y, state.orientation, vehicle.length, vehicle.width)
}

/// True iff no state overlaps any obstacle at its own time step.
pub fn collision_free(
    states: &[VehicleState],
    scenario: &Scenario,
    vehicle: &VehicleModelParams,
) -> Result<bool, PlanError> {
    for state in states {
        if state.time_step > scenario.horizon {
            return Err(PlanError::HorizonExceeded {
                time_step: state.time_step,
                horizon: scenario.horizon,
            });
        }
        let ego = ego_footprint(state, vehicle);
        for obstacle in &scenario.obstacles {
            let Some([x, y, theta]) = obstacle.pose_at(state.time_step) else {
                return Err(PlanError::HorizonExceeded {
                    time_step: state.time_step,
                    horizon: obstacle.poses.len().saturating_sub(1) as u32,
                });
            };
            if ego.intersects(&OrientedRect::new(x, y, theta, obstacle.length, obstacle.width)) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
