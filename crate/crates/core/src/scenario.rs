//! Driving scenarios, planning problems and the geometric queries the
//! planner, heuristics and evaluator share.
//!
//! Scenarios are stored as a small JSON document (see [`ScenarioFile`]) with
//! SI units throughout.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to read scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario schema violation: {0}")]
    Schema(String),
    #[error("scenario invariant violated: {field}: {reason}")]
    Invariant { field: String, reason: String },
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
}

/// Returned by [`lane_offsets`] when the scenario carries no lanelets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("scenario has no lane information")]
pub struct NoLaneInformation;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub orientation: f64,
    pub velocity: f64,
    pub steering_angle: f64,
    pub time_step: u32,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, orientation: f64, velocity: f64, steering_angle: f64, time_step: u32) -> Self {
        Self {
            x,
            y,
            orientation: wrap_angle(orientation),
            velocity,
            steering_angle,
            time_step,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// A non-empty, time-contiguous state sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrajectoryRepr", into = "TrajectoryRepr")]
pub struct Trajectory {
    states: Vec<VehicleState>,
    dt: f64,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRepr {
    dt: f64,
    states: Vec<VehicleState>,
}

impl TryFrom<TrajectoryRepr> for Trajectory {
    type Error = ScenarioError;

    fn try_from(repr: TrajectoryRepr) -> Result<Self, Self::Error> {
        Trajectory::new(repr.states, repr.dt)
    }
}

impl From<Trajectory> for TrajectoryRepr {
    fn from(t: Trajectory) -> Self {
        TrajectoryRepr { dt: t.dt, states: t.states }
    }
}

impl Trajectory {
    pub fn new(states: Vec<VehicleState>, dt: f64) -> Result<Self, ScenarioError> {
        if states.is_empty() {
            return Err(ScenarioError::InvalidTrajectory("trajectory has no states".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(ScenarioError::InvalidTrajectory(format!("dt must be positive, got {dt}")));
        }
        for (i, pair) in states.windows(2).enumerate() {
            if pair[1].time_step != pair[0].time_step + 1 {
                return Err(ScenarioError::InvalidTrajectory(format!(
                    "time steps of states {} and {} are not consecutive ({} -> {})",
                    i,
                    i + 1,
                    pair[0].time_step,
                    pair[1].time_step
                )));
            }
        }
        for s in &states {
            if s.velocity < 0.0 || !s.velocity.is_finite() {
                return Err(ScenarioError::InvalidTrajectory(format!(
                    "negative or non-finite velocity {} at time step {}",
                    s.velocity, s.time_step
                )));
            }
        }
        Ok(Self { states, dt })
    }

    pub fn states(&self) -> &[VehicleState] {
        &self.states
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn first(&self) -> &VehicleState {
        &self.states[0]
    }

    pub fn last(&self) -> &VehicleState {
        &self.states[self.states.len() - 1]
    }

    /// Elapsed time between the first and the last state.
    pub fn duration(&self) -> f64 {
        (self.last().time_step - self.first().time_step) as f64 * self.dt
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Interval { lo: v[0], hi: v[1] }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalRegion {
    pub center: [f64; 2],
    pub half_extents: [f64; 2],
    /// Inclusive `[t_start, t_end]` in time steps.
    pub time_interval: [u32; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity_interval: Option<Interval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation_interval: Option<Interval>,
}

impl GoalRegion {
    pub fn t_start(&self) -> u32 {
        self.time_interval[0]
    }

    pub fn t_end(&self) -> u32 {
        self.time_interval[1]
    }

    pub fn contains_position(&self, x: f64, y: f64) -> bool {
        (x - self.center[0]).abs() <= self.half_extents[0] && (y - self.center[1]).abs() <= self.half_extents[1]
    }

    /// Membership of a single state in the closed goal set.
    pub fn contains(&self, state: &VehicleState) -> bool {
        if !self.contains_position(state.x, state.y) {
            return false;
        }
        if state.time_step < self.t_start() || state.time_step > self.t_end() {
            return false;
        }
        if let Some(v) = &self.velocity_interval {
            if !v.contains(state.velocity) {
                return false;
            }
        }
        if let Some(o) = &self.orientation_interval {
            if !o.contains(state.orientation) {
                return false;
            }
        }
        true
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |field: &str, reason: String| ScenarioError::Invariant { field: field.into(), reason };
        if self.center.iter().chain(self.half_extents.iter()).any(|v| !v.is_finite()) {
            return Err(bad("planning_problem.goal", "non-finite geometry".into()));
        }
        if self.half_extents.iter().any(|&h| h < 0.0) {
            return Err(bad("planning_problem.goal.half_extents", "must be non-negative".into()));
        }
        if self.time_interval[0] > self.time_interval[1] {
            return Err(bad(
                "planning_problem.goal.time_interval",
                format!("start {} after end {}", self.time_interval[0], self.time_interval[1]),
            ));
        }
        for (name, iv) in [
            ("velocity_interval", &self.velocity_interval),
            ("orientation_interval", &self.orientation_interval),
        ] {
            if let Some(iv) = iv {
                if iv.lo.is_nan() || iv.hi.is_nan() || iv.lo > iv.hi {
                    return Err(bad(
                        &format!("planning_problem.goal.{name}"),
                        format!("bounds out of order: [{}, {}]", iv.lo, iv.hi),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanningProblem {
    pub initial_state: VehicleState,
    pub goal: GoalRegion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lanelet {
    pub centerline: Vec<[f64; 2]>,
    pub width: f64,
}

/// Oriented rectangle obstacle with one pose `[x, y, theta]` per time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub length: f64,
    pub width: f64,
    pub poses: Vec<[f64; 3]>,
}

impl Obstacle {
    pub fn pose_at(&self, time_step: u32) -> Option<[f64; 3]> {
        self.poses.get(time_step as usize).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub dt: f64,
    pub horizon: u32,
    pub lanelets: Vec<Lanelet>,
    pub obstacles: Vec<Obstacle>,
}

impl Scenario {
    fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |field: String, reason: String| ScenarioError::Invariant { field, reason };
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(bad("dt".into(), format!("must be positive, got {}", self.dt)));
        }
        for (i, l) in self.lanelets.iter().enumerate() {
            if l.centerline.len() < 2 {
                return Err(bad(
                    format!("lanelets[{i}].centerline"),
                    format!("needs at least 2 points, got {}", l.centerline.len()),
                ));
            }
            if l.width.is_nan() || l.width <= 0.0 {
                return Err(bad(format!("lanelets[{i}].width"), "must be positive".into()));
            }
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if (o.poses.len() as u64) < self.horizon as u64 + 1 {
                return Err(bad(
                    format!("obstacles[{i}].poses"),
                    format!(
                        "covers {} time steps, horizon requires {}",
                        o.poses.len(),
                        self.horizon as u64 + 1
                    ),
                ));
            }
            if !(o.length > 0.0 && o.width > 0.0) {
                return Err(bad(format!("obstacles[{i}]"), "footprint must be positive".into()));
            }
        }
        Ok(())
    }
}

/// On-disk layout of a scenario file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub dt: f64,
    pub horizon: u32,
    #[serde(default)]
    pub lanelets: Vec<Lanelet>,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    pub planning_problem: ProblemFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub initial_state: InitialStateFile,
    pub goal: GoalRegion,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStateFile {
    pub x: f64,
    pub y: f64,
    pub orientation: f64,
    pub velocity: f64,
    pub steering_angle: f64,
}

impl ScenarioFile {
    pub fn into_model(self) -> Result<(Scenario, PlanningProblem), ScenarioError> {
        let s = self.planning_problem.initial_state;
        if s.velocity.is_nan() || s.velocity < 0.0 {
            return Err(ScenarioError::Invariant {
                field: "planning_problem.initial_state.velocity".into(),
                reason: format!("must be non-negative, got {}", s.velocity),
            });
        }
        let scenario = Scenario {
            dt: self.dt,
            horizon: self.horizon,
            lanelets: self.lanelets,
            obstacles: self.obstacles,
        };
        scenario.validate()?;
        self.planning_problem.goal.validate()?;
        let problem = PlanningProblem {
            initial_state: VehicleState::new(s.x, s.y, s.orientation, s.velocity, s.steering_angle, 0),
            goal: self.planning_problem.goal,
        };
        Ok((scenario, problem))
    }

    pub fn from_model(scenario: &Scenario, problem: &PlanningProblem) -> Self {
        let s = &problem.initial_state;
        ScenarioFile {
            dt: scenario.dt,
            horizon: scenario.horizon,
            lanelets: scenario.lanelets.clone(),
            obstacles: scenario.obstacles.clone(),
            planning_problem: ProblemFile {
                initial_state: InitialStateFile {
                    x: s.x,
                    y: s.y,
                    orientation: s.orientation,
                    velocity: s.velocity,
                    steering_angle: s.steering_angle,
                },
                goal: problem.goal.clone(),
            },
        }
    }
}

pub fn parse_scenario(text: &str) -> Result<(Scenario, PlanningProblem), ScenarioError> {
    let file: ScenarioFile = serde_json::from_str(text).map_err(|e| ScenarioError::Schema(e.to_string()))?;
    file.into_model()
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<(Scenario, PlanningProblem), ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

pub fn save_scenario(
    path: impl AsRef<Path>,
    scenario: &Scenario,
    problem: &PlanningProblem,
) -> Result<(), ScenarioError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&ScenarioFile::from_model(scenario, problem))
        .map_err(|e| ScenarioError::Schema(e.to_string()))?;
    std::fs::write(path, text).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// True iff some state of `traj` lies in the closed goal set.
pub fn goal_reached(traj: &Trajectory, goal: &GoalRegion) -> bool {
    states_reach_goal(traj.states(), goal)
}

pub fn states_reach_goal(states: &[VehicleState], goal: &GoalRegion) -> bool {
    states.iter().any(|s| goal.contains(s))
}

/// Euclidean distance from the state position to the goal center.
pub fn distance_to_goal(state: &VehicleState, goal: &GoalRegion) -> f64 {
    (state.x - goal.center[0]).hypot(state.y - goal.center[1])
}

/// Distance from `p` to the closed segment `a`-`b`.
pub(crate) fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a[0] + t * dx, a[1] + t * dy);
    (p[0] - cx).hypot(p[1] - cy)
}

/// Lateral and heading offset to the nearest centerline segment of any
/// lanelet. The lateral offset is non-negative and the orientation offset
/// lies in `[0, pi]`.
pub fn lane_offsets(state: &VehicleState, scenario: &Scenario) -> Result<(f64, f64), NoLaneInformation> {
    let p = state.position();
    let mut best: Option<(f64, f64)> = None;
    for lanelet in &scenario.lanelets {
        for seg in lanelet.centerline.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let d = point_segment_distance(p, a, b);
            if best.is_none_or(|(bd, _)| d < bd) {
                let heading = (b[1] - a[1]).atan2(b[0] - a[0]);
                best = Some((d, heading));
            }
        }
    }
    let (d, heading) = best.ok_or(NoLaneInformation)?;
    Ok((d, wrap_angle(state.orientation - heading).abs()))
}

impl fmt::Display for VehicleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t={} x={:.3} y={:.3} theta={:.3} v={:.3} delta={:.3}",
            self.time_step, self.x, self.y, self.orientation, self.velocity, self.steering_angle
        )
    }
}
