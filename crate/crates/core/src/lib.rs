//! Diagnose and repair lattice A* motion planners with a language model in
//! the loop.
//!
//! The planner's patchable state is a heuristic expression and a
//! motion-primitive set ID. A repair session plans, scores the trajectory
//! with a weighted cost, describes the planner to the model, and applies
//! the model's patches until the cost is close enough to a target or the
//! token budget runs out.

pub mod bench;
pub mod evaluator;
pub mod heuristic;
pub mod llm;
pub mod planner;
pub mod primitives;
pub mod prompt;
pub mod repair;
pub mod scenario;

pub use evaluator::{aggregate, compare, compute_partial_costs, CostBreakdown, CostComponents, CostWeights};
pub use heuristic::{evaluate_heuristic, parse_heuristic, render_heuristic, HeuristicSpec};
pub use planner::{plan, plan_with_library, PlanError, PlanResult, PlannerConfig};
pub use primitives::{format_primitive_id, parse_primitive_id, PrimitiveLibrary, PrimitiveSetId};
pub use repair::{run_session, SessionEnv, SessionOutcome, SessionParams, StopReason};
pub use scenario::{load_scenario, PlanningProblem, Scenario, Trajectory, VehicleState};
