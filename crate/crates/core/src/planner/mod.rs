//! A* search over the motion-primitive lattice.
//!
//! The search cost of a node is the elapsed time of its path; the heuristic
//! comes from the configured DSL expression. The first goal-reaching node
//! popped from the open list is returned.

mod collision;

use std::cmp::Ordering;
use std::collections::hash_map::Entry;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use collision::{collision_free, ego_footprint, OrientedRect};

use crate::heuristic::{evaluate_heuristic, parse_heuristic, HeuristicError, HeuristicSpec, NodeContext};
use crate::primitives::{parse_primitive_id, transform_primitive, PrimitiveError, PrimitiveLibrary, PrimitiveSet, PrimitiveSetId, VehicleModelParams};
use crate::scenario::{states_reach_goal, PlanningProblem, Scenario, Trajectory, VehicleState};

pub const DEFAULT_MAX_EXPANSIONS: usize = 20_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid heuristic: {0}")]
    Heuristic(#[from] HeuristicError),
    #[error("invalid motion primitives: {0}")]
    Primitives(#[from] PrimitiveError),
    #[error("max_expansions must be positive")]
    ZeroExpansions,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("no solution found after {expansions} expansions ({reason})")]
    NoSolution { expansions: usize, reason: String },
    #[error("initial state (v = {velocity}, delta = {steering}) is not within half a grid step of the primitive samples")]
    InfeasibleStart { velocity: f64, steering: f64 },
    #[error("time step {time_step} exceeds the scenario horizon {horizon}")]
    HorizonExceeded { time_step: u32, horizon: u32 },
    #[error("primitive set {actual} does not match the configured {expected}")]
    PrimitiveSetMismatch { expected: String, actual: String },
    #[error(transparent)]
    Primitives(#[from] PrimitiveError),
}

/// The patchable part of the planner: heuristic and primitive set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlannerConfigRecord", into = "PlannerConfigRecord")]
pub struct PlannerConfig {
    heuristic: HeuristicSpec,
    heuristic_text: String,
    primitive_set_id: PrimitiveSetId,
    max_expansions: usize,
}

/// Serialized form of a [`PlannerConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfigRecord {
    pub heuristic: String,
    pub motion_primitives_id: String,
    pub max_expansions: usize,
}

impl PlannerConfig {
    pub fn new(heuristic_text: &str, primitives_id: &str, max_expansions: usize) -> Result<Self, ConfigError> {
        let heuristic = parse_heuristic(heuristic_text)?;
        let primitive_set_id = parse_primitive_id(primitives_id)?;
        Self::from_parts(heuristic, heuristic_text.trim().to_string(), primitive_set_id, max_expansions)
    }

    pub fn from_parts(
        heuristic: HeuristicSpec,
        heuristic_text: String,
        primitive_set_id: PrimitiveSetId,
        max_expansions: usize,
    ) -> Result<Self, ConfigError> {
        if max_expansions == 0 {
            return Err(ConfigError::ZeroExpansions);
        }
        Ok(Self {
            heuristic,
            heuristic_text,
            primitive_set_id,
            max_expansions,
        })
    }

    pub fn heuristic(&self) -> &HeuristicSpec {
        &self.heuristic
    }

    pub fn heuristic_text(&self) -> &str {
        &self.heuristic_text
    }

    pub fn primitive_set_id(&self) -> &PrimitiveSetId {
        &self.primitive_set_id
    }

    pub fn max_expansions(&self) -> usize {
        self.max_expansions
    }

    pub fn to_record(&self) -> PlannerConfigRecord {
        PlannerConfigRecord {
            heuristic: self.heuristic_text.clone(),
            motion_primitives_id: self.primitive_set_id.to_string(),
            max_expansions: self.max_expansions,
        }
    }

    pub fn from_record(record: &PlannerConfigRecord) -> Result<Self, ConfigError> {
        Self::new(&record.heuristic, &record.motion_primitives_id, record.max_expansions)
    }
}

impl TryFrom<PlannerConfigRecord> for PlannerConfig {
    type Error = ConfigError;

    fn try_from(record: PlannerConfigRecord) -> Result<Self, ConfigError> {
        Self::from_record(&record)
    }
}

impl From<PlannerConfig> for PlannerConfigRecord {
    fn from(config: PlannerConfig) -> Self {
        config.to_record()
    }
}

/// Search-cost increment of one primitive segment: its duration in seconds.
pub fn step_cost(segment: &[VehicleState], dt: f64) -> f64 {
    segment.len().saturating_sub(1) as f64 * dt
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub trajectory: Trajectory,
    pub g_cost: f64,
    pub expansions: usize,
    /// Number of primitives on the returned path.
    pub depth: usize,
}

struct Node {
    parent: Option<usize>,
    /// Transformed primitive states, starting at the parent's last state.
    segment: Vec<VehicleState>,
    primitive: Option<usize>,
    g_cost: f64,
    depth: usize,
}

#[derive(Debug, Clone, Copy)]
struct OpenEntry {
    priority: f64,
    g_cost: f64,
    seq: u64,
    node: usize,
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OpenEntry {}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OpenEntry {
    // reversed: BinaryHeap is a max-heap and we pop the smallest
    // (priority, g_cost, insertion order)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .priority
            .total_cmp(&self.priority)
            .then_with(|| other.g_cost.total_cmp(&self.g_cost))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct StateKey {
    x: i64,
    y: i64,
    theta: i64,
    v: i64,
    sa: i64,
    t: u32,
}

impl StateKey {
    fn of(s: &VehicleState, id: &PrimitiveSetId) -> Self {
        StateKey {
            x: (s.x / 0.1).round() as i64,
            y: (s.y / 0.1).round() as i64,
            theta: (s.orientation / 0.05).round() as i64,
            v: ((s.velocity - id.v_min.value()) / id.v_step.value()).round() as i64,
            sa: ((s.steering_angle - id.sa_min.value()) / id.sa_step.value()).round() as i64,
            t: s.time_step,
        }
    }
}

fn path_of(nodes: &[Node], idx: usize) -> Vec<VehicleState> {
    let mut chain = Vec::new();
    let mut cur = Some(idx);
    while let Some(i) = cur {
        chain.push(i);
        cur = nodes[i].parent;
    }
    let mut path = Vec::new();
    for (n, &i) in chain.iter().rev().enumerate() {
        let seg = &nodes[i].segment;
        path.extend_from_slice(if n == 0 { seg } else { &seg[1..] });
    }
    path
}

/// Fetches the configured primitive set from `library` and plans.
pub fn plan_with_library(
    scenario: &Scenario,
    problem: &PlanningProblem,
    config: &PlannerConfig,
    library: &PrimitiveLibrary,
) -> Result<PlanResult, PlanError> {
    let id = config.primitive_set_id();
    let vehicle = VehicleModelParams::for_model(&id.model).ok_or_else(|| PrimitiveError::UnknownModel(id.model.clone()))?;
    let set = library.get(id, scenario.dt)?;
    plan(scenario, problem, config, &set, &vehicle)
}

/// Plans from the problem's initial state to its goal region.
///
/// The initial velocity and steering angle are snapped to the nearest
/// primitive samples when within half a grid step.
pub fn plan(
    scenario: &Scenario,
    problem: &PlanningProblem,
    config: &PlannerConfig,
    primitives: &PrimitiveSet,
    vehicle: &VehicleModelParams,
) -> Result<PlanResult, PlanError> {
    if primitives.id != config.primitive_set_id {
        return Err(PlanError::PrimitiveSetMismatch {
            expected: config.primitive_set_id.to_string(),
            actual: primitives.id.to_string(),
        });
    }
    let id = &config.primitive_set_id;
    let init = problem.initial_state;
    let (v_idx, sa_idx) = match (
        primitives.velocity_index(init.velocity, 0.5 * id.v_step.value()),
        primitives.steering_index(init.steering_angle, 0.5 * id.sa_step.value()),
    ) {
        (Some(v), Some(s)) => (v, s),
        _ => {
            return Err(PlanError::InfeasibleStart {
                velocity: init.velocity,
                steering: init.steering_angle,
            })
        }
    };
    let root = VehicleState {
        velocity: primitives.velocity_samples()[v_idx],
        steering_angle: primitives.steering_samples()[sa_idx],
        ..init
    };

    let dt = scenario.dt;
    let no_solution = |expansions: usize, reason: &str| PlanError::NoSolution {
        expansions,
        reason: reason.to_string(),
    };
    if !collision_free(&[root], scenario, vehicle)? {
        return Err(no_solution(0, "initial state in collision"));
    }

    let mut nodes = vec![Node {
        parent: None,
        segment: vec![root],
        primitive: None,
        g_cost: 0.0,
        depth: 0,
    }];
    let mut best_g: HashMap<StateKey, f64> = HashMap::new();
    best_g.insert(StateKey::of(&root, id), 0.0);
    let mut open = BinaryHeap::new();
    let mut seq = 0u64;
    open.push(OpenEntry {
        priority: 0.0,
        g_cost: 0.0,
        seq,
        node: 0,
    });
    let mut expansions = 0usize;

    while let Some(entry) = open.pop() {
        let node = &nodes[entry.node];
        let last = *node.segment.last().expect("segments are non-empty");
        if best_g
            .get(&StateKey::of(&last, id))
            .is_some_and(|&g| g < node.g_cost)
        {
            continue;
        }
        if states_reach_goal(&node.segment, &problem.goal) {
            let states = path_of(&nodes, entry.node);
            let trajectory = Trajectory::new(states, dt).expect("search produces contiguous trajectories");
            return Ok(PlanResult {
                trajectory,
                g_cost: node.g_cost,
                expansions,
                depth: node.depth,
            });
        }
        if expansions >= config.max_expansions {
            return Err(no_solution(expansions, "expansion limit reached"));
        }
        expansions += 1;

        let successors: &[usize] = match node.primitive {
            None => primitives.starting_at(v_idx, sa_idx),
            Some(p) => &primitives.successor_index[p],
        };
        let (parent_g, parent_depth) = (node.g_cost, node.depth);
        let mut children = Vec::new();
        for &p in successors {
            let mut segment = match transform_primitive(&primitives.primitives[p], &last) {
                Ok(s) => s,
                Err(_) => continue,
            };
            segment.retain(|s| s.time_step <= scenario.horizon);
            if segment.len() < 2 || !collision_free(&segment[1..], scenario, vehicle)? {
                continue;
            }
            let g_cost = parent_g + step_cost(&segment, dt);
            let key = StateKey::of(segment.last().expect("non-empty"), id);
            match best_g.entry(key) {
                Entry::Occupied(mut e) => {
                    if *e.get() <= g_cost {
                        continue;
                    }
                    e.insert(g_cost);
                }
                Entry::Vacant(e) => {
                    e.insert(g_cost);
                }
            }
            children.push((p, segment, g_cost));
        }
        for (p, segment, g_cost) in children {
            nodes.push(Node {
                parent: Some(entry.node),
                segment,
                primitive: Some(p),
                g_cost,
                depth: parent_depth + 1,
            });
            let idx = nodes.len() - 1;
            let full_path = path_of(&nodes, idx);
            let h = evaluate_heuristic(
                &config.heuristic,
                &NodeContext {
                    last_segment: &nodes[idx].segment,
                    full_path: &full_path,
                    problem,
                    scenario,
                },
            );
            seq += 1;
            open.push(OpenEntry {
                priority: g_cost + h,
                g_cost,
                seq,
                node: idx,
            });
        }
    }
    Err(no_solution(expansions, "open set exhausted"))
}
