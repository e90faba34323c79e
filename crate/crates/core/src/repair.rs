//! The diagnose-and-repair loop.
//!
//! Plan and evaluate once, describe the result, then repeatedly ask the
//! backend for a patch, apply it to the initial configuration, re-plan,
//! re-evaluate and feed the outcome back, keeping the best configuration.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::{compare, compute_partial_costs, CostBreakdown, CostWeights};
use crate::heuristic::{list_features, HeuristicError};
use crate::llm::{parse_response, query, DiagnosisPair, DiagnosisResult, LlmBackend, LlmError, LlmParams, TokenBudget};
use crate::planner::{plan_with_library, ConfigError, PlanError, PlannerConfig};
use crate::primitives::{PrimitiveError, PrimitiveLibrary};
use crate::prompt::{add_feedback, build_description, DescriptionOptions, FeedbackRecord, FewShotError};
use crate::scenario::{PlanningProblem, Scenario, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionParams {
    /// Target objective value J*.
    pub target: f64,
    pub epsilon: f64,
    pub token_limit: usize,
    pub max_iterations: usize,
    /// Append feedback sections to the prompt between iterations.
    pub use_feedback: bool,
}

impl Default for SessionParams {
    fn default() -> Self {
        Self {
            target: 0.16,
            epsilon: 10.0,
            token_limit: 8000,
            max_iterations: 10,
            use_feedback: true,
        }
    }
}

/// Shared, read-only inputs of a session.
#[derive(Debug, Clone, Copy)]
pub struct SessionEnv<'a> {
    pub scenario: &'a Scenario,
    pub problem: &'a PlanningProblem,
    pub library: &'a PrimitiveLibrary,
    pub weights: &'a CostWeights,
    pub llm: &'a LlmParams,
    pub description: &'a DescriptionOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchOutcome {
    Applied,
    ParseError,
    PlanFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetReached,
    TokenLimit,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    pub response: String,
    /// The parsed response, absent when it did not match the schema.
    pub diagnosis: Option<DiagnosisResult>,
    pub patch_outcome: PatchOutcome,
    #[serde(rename = "J_rep")]
    pub j_rep: Option<f64>,
    /// Best objective after this iteration.
    #[serde(rename = "J_min")]
    pub j_min: f64,
    pub feedback: FeedbackRecord,
    pub tokens_after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    #[serde(rename = "J_initial")]
    pub j_initial: f64,
    #[serde(rename = "J_min")]
    pub j_min: f64,
    pub initial_breakdown: CostBreakdown,
    pub best_config: Option<PlannerConfig>,
    pub best_diagnoses: Option<Vec<DiagnosisPair>>,
    pub best_iteration: Option<usize>,
    #[serde(skip)]
    pub best_trajectory: Option<Trajectory>,
    pub stop_reason: StopReason,
    pub tokens_consumed: usize,
    pub log: Vec<IterationRecord>,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("initial planner failed: {0}")]
    InitialPlanFailure(PlanError),
    #[error("backend failure: {0}")]
    Backend(LlmError),
    #[error("cannot build the description: {0}")]
    Description(#[from] FewShotError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PatchError {
    #[error("invalid patched_heuristic: {0}")]
    Heuristic(HeuristicError),
    #[error("invalid motion_primitives_id: {0}")]
    Primitives(PrimitiveError),
    #[error("{0}")]
    Config(ConfigError),
}

impl PatchError {
    pub fn location(&self) -> &'static str {
        match self {
            PatchError::Heuristic(_) => "patched_heuristic",
            PatchError::Primitives(_) => "motion_primitives_id",
            PatchError::Config(_) => "planner configuration",
        }
    }
}

/// Builds a new configuration from `config` with the patch payload of `result`.
pub fn apply_patch(config: &PlannerConfig, result: &DiagnosisResult) -> Result<PlannerConfig, PatchError> {
    PlannerConfig::new(&result.patched_heuristic, &result.primitive_set_id, config.max_expansions()).map_err(|e| match e {
        ConfigError::Heuristic(h) => PatchError::Heuristic(h),
        ConfigError::Primitives(p) => PatchError::Primitives(p),
        other => PatchError::Config(other),
    })
}

/// Plans with `config` and evaluates the result.
pub fn plan_and_evaluate(env: &SessionEnv<'_>, config: &PlannerConfig) -> Result<(Trajectory, CostBreakdown), PlanError> {
    let result = plan_with_library(env.scenario, env.problem, config, env.library)?;
    let components = compute_partial_costs(&result.trajectory, env.scenario, &env.problem.goal);
    Ok((result.trajectory, CostBreakdown::new(components, env.weights)))
}

pub fn run_session(
    env: &SessionEnv<'_>,
    initial: &PlannerConfig,
    params: &SessionParams,
    backend: &mut dyn LlmBackend,
) -> Result<SessionOutcome, SessionError> {
    let (_, initial_breakdown) = plan_and_evaluate(env, initial).map_err(SessionError::InitialPlanFailure)?;
    let j_initial = initial_breakdown.total;
    let mut bundle = build_description(
        initial,
        &list_features(),
        &initial_breakdown,
        params.target,
        env.weights,
        env.description,
    )?;
    let mut budget = TokenBudget::new(params.token_limit);
    let mut outcome = SessionOutcome {
        j_initial,
        j_min: j_initial,
        initial_breakdown,
        best_config: None,
        best_diagnoses: None,
        best_iteration: None,
        best_trajectory: None,
        stop_reason: StopReason::TargetReached,
        tokens_consumed: 0,
        log: Vec::new(),
    };

    loop {
        if outcome.j_min - params.target <= params.epsilon {
            outcome.stop_reason = StopReason::TargetReached;
            break;
        }
        if budget.exhausted() {
            outcome.stop_reason = StopReason::TokenLimit;
            break;
        }
        if outcome.log.len() >= params.max_iterations {
            outcome.stop_reason = StopReason::MaxIterations;
            break;
        }
        let response = match query(&bundle, env.llm, backend, &mut budget) {
            Ok(r) => r,
            Err(LlmError::BudgetExceeded { .. }) => {
                outcome.stop_reason = StopReason::TokenLimit;
                break;
            }
            Err(e) => return Err(SessionError::Backend(e)),
        };
        let index = outcome.log.len() + 1;
        tracing::debug!(index, tokens = budget.consumed, "received repair proposal");

        let mut j_rep = None;
        let (diagnosis, patch_outcome, feedback) = match parse_response(&response) {
            Err(e) => (None, PatchOutcome::ParseError, FeedbackRecord::error(Vec::new(), "response", e.to_string())),
            Ok(result) => {
                let pairs = result.pairs.clone();
                let (patch_outcome, feedback) = match apply_patch(initial, &result) {
                    Err(e) => (PatchOutcome::ParseError, FeedbackRecord::error(pairs, e.location(), e.to_string())),
                    Ok(config) => match plan_and_evaluate(env, &config) {
                        Err(e) => (PatchOutcome::PlanFailed, FeedbackRecord::error(pairs, "planner", e.to_string())),
                        Ok((trajectory, breakdown)) => {
                            j_rep = Some(breakdown.total);
                            if breakdown.total < outcome.j_min {
                                outcome.j_min = breakdown.total;
                                outcome.best_config = Some(config);
                                outcome.best_diagnoses = Some(pairs.clone());
                                outcome.best_iteration = Some(index);
                                outcome.best_trajectory = Some(trajectory);
                            }
                            let comparison = compare(&initial_breakdown, &breakdown);
                            (PatchOutcome::Applied, FeedbackRecord::evaluation(pairs, comparison))
                        }
                    },
                };
                (Some(result), patch_outcome, feedback)
            }
        };
        if params.use_feedback {
            bundle = add_feedback(&bundle, &feedback);
        }
        outcome.log.push(IterationRecord {
            index,
            response,
            diagnosis,
            patch_outcome,
            j_rep,
            j_min: outcome.j_min,
            feedback,
            tokens_after: budget.consumed,
        });
    }
    outcome.tokens_consumed = budget.consumed;
    Ok(outcome)
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum LogLine<'a> {
    Iteration(&'a IterationRecord),
    Outcome(OutcomeSummary<'a>),
}

#[derive(Serialize)]
struct OutcomeSummary<'a> {
    #[serde(rename = "J_initial")]
    j_initial: f64,
    #[serde(rename = "J_min")]
    j_min: f64,
    best_config: &'a Option<PlannerConfig>,
    best_diagnoses: &'a Option<Vec<DiagnosisPair>>,
    best_iteration: Option<usize>,
    stop_reason: StopReason,
    tokens_consumed: usize,
    iterations: usize,
}

/// Writes the session as JSON lines: one `iteration` record per iteration
/// followed by a terminal `outcome` record.
pub fn write_session_log(outcome: &SessionOutcome, out: &mut impl Write) -> std::io::Result<()> {
    for record in &outcome.log {
        serde_json::to_writer(&mut *out, &LogLine::Iteration(record))?;
        writeln!(out)?;
    }
    let summary = OutcomeSummary {
        j_initial: outcome.j_initial,
        j_min: outcome.j_min,
        best_config: &outcome.best_config,
        best_diagnoses: &outcome.best_diagnoses,
        best_iteration: outcome.best_iteration,
        stop_reason: outcome.stop_reason,
        tokens_consumed: outcome.tokens_consumed,
        iterations: outcome.log.len(),
    };
    serde_json::to_writer(&mut *out, &LogLine::Outcome(summary))?;
    writeln!(out)
}

pub fn save_session_log(outcome: &SessionOutcome, path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_session_log(outcome, &mut file)?;
    file.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::MockBackend;
    use crate::scenario::{GoalRegion, Lanelet, VehicleState};

    const ID: &str = "V_0.0_4.0_Vstep_2.0_SA_-0.2_0.2_SAstep_0.2_T_0.5_Model_BMW_320i";

    fn world() -> (Scenario, PlanningProblem) {
        let scenario = Scenario {
            dt: 0.1,
            horizon: 20,
            lanelets: vec![Lanelet {
                centerline: vec![[-10.0, 0.0], [100.0, 0.0]],
                width: 3.5,
            }],
            obstacles: vec![],
        };
        let problem = PlanningProblem {
            initial_state: VehicleState::new(0.0, 0.0, 0.0, 2.0, 0.0, 0),
            goal: GoalRegion {
                center: [4.0, 0.0],
                half_extents: [1.0, 1.0],
                time_interval: [20, 20],
                velocity_interval: None,
                orientation_interval: None,
            },
        };
        (scenario, problem)
    }

    fn response(heuristic: &str, id: &str) -> String {
        DiagnosisResult {
            pairs: vec![DiagnosisPair::new("d", "p")],
            patched_heuristic: heuristic.into(),
            primitive_set_id: id.into(),
        }
        .to_json()
    }

    fn run(initial: &PlannerConfig, params: &SessionParams, script: Vec<String>) -> Result<SessionOutcome, SessionError> {
        let (scenario, problem) = world();
        let library = PrimitiveLibrary::new();
        let weights = CostWeights::default();
        let llm = LlmParams::default();
        let description = DescriptionOptions::default();
        let env = SessionEnv {
            scenario: &scenario,
            problem: &problem,
            library: &library,
            weights: &weights,
            llm: &llm,
            description: &description,
        };
        run_session(&env, initial, params, &mut MockBackend::new(script))
    }

    #[test]
    fn patch_application() {
        let config = PlannerConfig::new("velocity", ID, 500).unwrap();
        let finer = "V_0.0_20.0_Vstep_2.0_SA_-1.066_1.066_SAstep_0.18_T_0.5_Model_BMW_320i";
        let patched = apply_patch(&config, &parse_response(&response("0", finer)).unwrap()).unwrap();
        assert_eq!(patched.primitive_set_id().v_step.value(), 2.0);
        assert_eq!(patched.heuristic(), &crate::heuristic::HeuristicSpec::zero());
        let err = apply_patch(&config, &parse_response(&response("bogus_feature", finer)).unwrap()).unwrap_err();
        assert!(err.to_string().contains("bogus_feature"));
        assert_eq!(config, PlannerConfig::new("velocity", ID, 500).unwrap());
    }

    #[test]
    fn target_at_initial_skips_loop() {
        let config = PlannerConfig::new("velocity", ID, 2000).unwrap();
        let probe = run(&config, &SessionParams { max_iterations: 0, ..Default::default() }, vec![]).unwrap();
        let params = SessionParams {
            target: probe.j_initial,
            epsilon: 1e-9,
            ..Default::default()
        };
        let out = run(&config, &params, vec![]).unwrap();
        assert!(out.log.is_empty());
        assert_eq!(out.stop_reason, StopReason::TargetReached);
        assert_eq!(out.j_min, out.j_initial);
    }

    #[test]
    fn unchanged_proposals_never_improve() {
        let config = PlannerConfig::new("velocity", ID, 2000).unwrap();
        let params = SessionParams {
            target: -1e9,
            max_iterations: 3,
            ..Default::default()
        };
        let out = run(&config, &params, vec![response("velocity", ID); 3]).unwrap();
        assert_eq!(out.log.len(), 3);
        assert_eq!(out.stop_reason, StopReason::MaxIterations);
        assert!(out.best_config.is_none());
        assert_eq!(out.j_min, out.j_initial);
        assert!(out.log.iter().all(|r| r.patch_outcome == PatchOutcome::Applied));
    }

    #[test]
    fn failures_become_feedback() {
        let config = PlannerConfig::new("velocity", ID, 2000).unwrap();
        let params = SessionParams {
            target: -1e9,
            max_iterations: 3,
            ..Default::default()
        };
        let unreachable = "V_0.0_4.0_Vstep_2.0_SA_-0.2_0.2_SAstep_0.2_T_0.5_Model_Unknown";
        let script = vec!["not json".to_string(), response("1 +", ID), response("0", unreachable)];
        let out = run(&config, &params, script).unwrap();
        let outcomes: Vec<_> = out.log.iter().map(|r| r.patch_outcome).collect();
        assert_eq!(outcomes, [PatchOutcome::ParseError, PatchOutcome::ParseError, PatchOutcome::PlanFailed]);
        assert!(out.log.iter().all(|r| r.feedback.kind == crate::prompt::FeedbackKind::ExecutionError));
    }

    #[test]
    fn script_exhaustion_aborts() {
        let config = PlannerConfig::new("velocity", ID, 2000).unwrap();
        let params = SessionParams {
            target: -1e9,
            ..Default::default()
        };
        assert!(matches!(
            run(&config, &params, vec![]),
            Err(SessionError::Backend(LlmError::ScriptExhausted { .. }))
        ));
    }

    #[test]
    fn log_lines() {
        let config = PlannerConfig::new("velocity", ID, 2000).unwrap();
        let params = SessionParams {
            target: -1e9,
            max_iterations: 2,
            ..Default::default()
        };
        let out = run(&config, &params, vec![response("0", ID); 2]).unwrap();
        let mut buf = Vec::new();
        write_session_log(&out, &mut buf).unwrap();
        let lines: Vec<serde_json::Value> = String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0]["record"], "iteration");
        assert_eq!(lines[2]["record"], "outcome");
        assert_eq!(lines[2]["stop_reason"], "max_iterations");
    }
}
