//! Prompt construction: the system prompt, the diagnostic description of
//! the planner and its trajectory, few-shot examples, and per-iteration
//! feedback.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::evaluator::{ComparisonReport, CostBreakdown, CostWeights};
use crate::heuristic::{parse_heuristic, FeatureCatalog, HeuristicError};
use crate::llm::DiagnosisPair;
use crate::planner::PlannerConfig;
use crate::primitives::{parse_primitive_id, PrimitiveError};

pub const RULE_OF_THUMB: &str =
    "merely adjusting the weighting or coefficients is often cumbersome and not very effective";

pub const FEW_SHOT_INPUT_ID: &str = "V_0.0_20.0_Vstep_1.0_SA_-1.066_1.066_SAstep_2.13_T_0.5_Model_BMW_320i";

pub const DEFAULT_AVAILABLE_IDS: [&str; 4] = [
    "V_0.0_20.0_Vstep_1.0_SA_-1.066_1.066_SAstep_2.13_T_0.5_Model_BMW_320i",
    "V_0.0_20.0_Vstep_2.0_SA_-1.066_1.066_SAstep_0.18_T_0.5_Model_BMW_320i",
    "V_0.0_20.0_Vstep_4.0_SA_-1.066_1.066_SAstep_0.18_T_0.5_Model_BMW_320i",
    "V_0.0_20.0_Vstep_2.0_SA_-1.0_1.0_SAstep_0.2_T_0.5_Model_BMW_320i",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SectionTag {
    Instructions,
    Planner,
    Evaluation,
    FewShots,
    Feedback(usize),
}

impl fmt::Display for SectionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SectionTag::Instructions => f.write_str("instructions"),
            SectionTag::Planner => f.write_str("planner"),
            SectionTag::Evaluation => f.write_str("evaluation"),
            SectionTag::FewShots => f.write_str("few_shots"),
            SectionTag::Feedback(n) => write!(f, "feedback_{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub tag: SectionTag,
    pub text: String,
}

/// System prompt plus the ordered user-prompt sections.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    sections: Vec<Section>,
}

impl PromptBundle {
    pub fn new(system: impl Into<String>) -> Self {
        Self {
            system: system.into(),
            sections: Vec::new(),
        }
    }

    /// Adds a section, keeping the fixed section order. Panics if `tag`
    /// would go before an existing section.
    pub fn with_section(mut self, tag: SectionTag, text: impl Into<String>) -> Self {
        if let Some(last) = self.sections.last() {
            assert!(last.tag < tag, "section {tag} cannot follow {}", last.tag);
        }
        self.sections.push(Section { tag, text: text.into() });
        self
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    pub fn section(&self, tag: SectionTag) -> Option<&str> {
        self.sections.iter().find(|s| s.tag == tag).map(|s| s.text.as_str())
    }

    pub fn feedback_count(&self) -> usize {
        self.sections
            .iter()
            .filter(|s| matches!(s.tag, SectionTag::Feedback(_)))
            .count()
    }

    /// The user prompt: all sections joined in order.
    pub fn assemble(&self) -> String {
        let parts: Vec<&str> = self.sections.iter().map(|s| s.text.as_str()).collect();
        parts.join("\n\n")
    }

    /// System and user prompt as one inspectable document.
    pub fn render_document(&self) -> String {
        let mut out = format!("=== system ===\n{}\n", self.system);
        for s in &self.sections {
            let _ = write!(out, "\n=== {} ===\n{}\n", s.tag, s.text);
        }
        out
    }
}

/// Editable text fragments of the description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub task: String,
    pub algorithm_intro: String,
    pub rule_of_thumb: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            task: "The motion planner below produces a drivable and collision-free trajectory, but its \
                   quality is poor. Diagnose why and repair the planner."
                .to_string(),
            algorithm_intro: "The planner runs an A* search on a lattice graph. Each edge is a motion \
                              primitive: a short trajectory simulated offline for a vehicle model. A node \
                              is expanded by attaching every primitive whose start velocity and steering \
                              angle match the end state of the node. The search cost of a node is its \
                              elapsed time; the heuristic function below estimates the remaining cost \
                              and decides which node is expanded next."
                .to_string(),
            rule_of_thumb: RULE_OF_THUMB.to_string(),
        }
    }
}

pub fn build_system_prompt() -> String {
    "You are an expert in motion planning for automated vehicles. You diagnose why a search-based \
     motion planner produces poor trajectories and repair it.\n\
     Reply with a single JSON object and nothing else, using exactly these keys:\n\
     - \"diagnoses\": a non-empty list of objects with the string fields \"diagnosis\" and \"prescription\"\n\
     - \"patched_heuristic\": the complete repaired heuristic expression\n\
     - \"motion_primitives_id\": the ID of the motion primitives to use"
        .to_string()
}

pub fn build_instructions(templates: &PromptTemplates) -> String {
    format!(
        "Instructions:\n{}\n\
         Reason step by step about which parts of the heuristic function and the motion primitives cause the \
         high costs. For every issue, give a diagnosis and a matching prescription. Then return the repaired \
         heuristic function and the motion primitives ID.\n\
         Rule of thumb: {}. Prefer adding or removing terms and choosing better motion primitives.",
        templates.task, templates.rule_of_thumb
    )
}

fn feature_lines(catalog: &FeatureCatalog) -> String {
    catalog
        .entries
        .iter()
        .map(|e| format!("{}: {}", e.name, e.docstring))
        .collect::<Vec<_>>()
        .join("\n")
}

const DSL_SUMMARY: &str = "Heuristic expressions combine numbers and features with + - * /, min(a, b), \
                           max(a, b), if_reached_goal(then, else) and if_zero_velocity(then, else).";

const ID_CONVENTION: &str = "Motion primitive IDs follow \
                             V_{v_min}_{v_max}_Vstep_{velocity step}_SA_{steering min}_{steering max}_SAstep_{steering step}_T_{duration}_Model_{vehicle}. \
                             Velocities are in m/s, steering angles in rad and the duration in s. \
                             Smaller Vstep and SAstep give a denser lattice.";

pub fn describe_planner(config: &PlannerConfig, catalog: &FeatureCatalog, templates: &PromptTemplates) -> String {
    format!(
        "Planner:\n{}\n\
         Heuristic function:\n{}\n\
         Available features:\n{}\n\
         {DSL_SUMMARY}\n\
         {ID_CONVENTION}\n\
         Current motion primitives: {}",
        templates.algorithm_intro,
        config.heuristic_text(),
        feature_lines(catalog),
        config.primitive_set_id()
    )
}

/// Compact decimal rendering: at most four decimals, trailing zeros removed.
pub fn fmt_value(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".to_string()
    } else {
        s
    }
}

/// Objective totals: two decimals, more only for tiny non-zero values.
pub fn fmt_total(v: f64) -> String {
    if v != 0.0 && v.abs() < 0.01 {
        fmt_value(v)
    } else {
        format!("{v:.2}")
    }
}

pub fn describe_evaluation(breakdown: &CostBreakdown, total: f64, target: f64, weights: &CostWeights) -> String {
    let mut out = String::from("Evaluation:\nThe planned trajectory is evaluated with a weighted sum of cost terms.\n");
    let w = weights.to_array();
    for (i, (key, name, value)) in breakdown.components.named().enumerate() {
        let _ = writeln!(out, "The cost for {name} ({key}) is {} (weight {}).", fmt_value(value), fmt_value(w[i]));
    }
    let _ = write!(
        out,
        "The total cost J is {}. The target value is {}; reduce J as close to the target as possible.",
        fmt_total(total),
        fmt_total(target)
    );
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub input_heuristic: String,
    pub input_id: String,
    pub diagnosis: String,
    pub prescription: String,
    pub output_heuristic: String,
    pub output_id: String,
}

impl Default for FewShotExample {
    fn default() -> Self {
        Self {
            input_heuristic: "10 * distance_to_goal + time_cost".to_string(),
            input_id: FEW_SHOT_INPUT_ID.to_string(),
            diagnosis: "the acceleration is not considered".to_string(),
            prescription: "add the acceleration cost to the heuristic function".to_string(),
            output_heuristic: "10 * distance_to_goal + time_cost + acceleration_cost".to_string(),
            output_id: DEFAULT_AVAILABLE_IDS[1].to_string(),
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum FewShotError {
    #[error("few-shot heuristic does not parse: {0}")]
    Heuristic(#[from] HeuristicError),
    #[error("unusable motion primitives ID: {0}")]
    Id(#[from] PrimitiveError),
}

pub fn build_few_shots(
    catalog: &FeatureCatalog,
    examples: &[FewShotExample],
    available_ids: &[String],
) -> Result<String, FewShotError> {
    for id in available_ids {
        parse_primitive_id(id)?;
    }
    let mut out = String::from("Examples:\nHelper functions for the heuristic:\n");
    out.push_str(&feature_lines(catalog));
    for (i, ex) in examples.iter().enumerate() {
        parse_heuristic(&ex.input_heuristic)?;
        parse_heuristic(&ex.output_heuristic)?;
        parse_primitive_id(&ex.input_id)?;
        parse_primitive_id(&ex.output_id)?;
        let _ = write!(
            out,
            "\nExample {}:\n(input) heuristic: {}\n(input) motion primitives: {}\nDiagnosis: {}\nPrescription: {}\n\
             (output) heuristic: {}\n(output) motion primitives: {}",
            i + 1,
            ex.input_heuristic,
            ex.input_id,
            ex.diagnosis,
            ex.prescription,
            ex.output_heuristic,
            ex.output_id
        );
    }
    out.push_str("\nFeasible motion primitives:");
    for id in available_ids {
        let _ = write!(out, "\n{id}");
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    ExecutionError,
    Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeedbackDetail {
    Error { location: String, message: String },
    Evaluation { comparison: ComparisonReport },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub kind: FeedbackKind,
    pub prior_diagnoses: Vec<DiagnosisPair>,
    pub detail: FeedbackDetail,
}

impl FeedbackRecord {
    pub fn error(prior: Vec<DiagnosisPair>, location: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            kind: FeedbackKind::ExecutionError,
            prior_diagnoses: prior,
            detail: FeedbackDetail::Error {
                location: location.into(),
                message: message.into(),
            },
        }
    }

    pub fn evaluation(prior: Vec<DiagnosisPair>, comparison: ComparisonReport) -> Self {
        Self {
            kind: FeedbackKind::Evaluation,
            prior_diagnoses: prior,
            detail: FeedbackDetail::Evaluation { comparison },
        }
    }

    pub fn render(&self, iteration: usize) -> String {
        let mut out = format!("Feedback on attempt {iteration}:\n");
        if self.prior_diagnoses.is_empty() {
            out.push_str("Your previous answer contained no usable diagnoses.\n");
        } else {
            out.push_str("Your previous diagnoses:\n");
            for p in &self.prior_diagnoses {
                let _ = writeln!(out, "- {} -> {}", p.diagnosis, p.prescription);
            }
        }
        match &self.detail {
            FeedbackDetail::Error { location, message } => {
                let _ = write!(
                    out,
                    "An error occurred in {location}: {message}\nFix the error and answer again."
                );
            }
            FeedbackDetail::Evaluation { comparison } => {
                let verdict = if comparison.improved {
                    format!("improved by {}%", fmt_value(100.0 * comparison.relative_decrement))
                } else {
                    "did not decrease".to_string()
                };
                let _ = write!(
                    out,
                    "The total cost of the initial planner is {} and of the repaired planner {}; the cost {verdict}.\n\
                     Components of the repaired trajectory:",
                    fmt_total(comparison.before.total),
                    fmt_total(comparison.after.total),
                );
                for (key, _, value) in comparison.after.components.named() {
                    let _ = write!(out, " {key}={}", fmt_value(value));
                }
                out.push_str("\nKeep what helped and repair the remaining issues.");
            }
        }
        out
    }
}

/// Returns `bundle` with one more feedback section appended.
pub fn add_feedback(bundle: &PromptBundle, record: &FeedbackRecord) -> PromptBundle {
    let n = bundle.feedback_count() + 1;
    bundle.clone().with_section(SectionTag::Feedback(n), record.render(n))
}

/// Settings for [`build_description`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionOptions {
    pub templates: PromptTemplates,
    pub include_few_shots: bool,
    pub examples: Vec<FewShotExample>,
    pub available_ids: Vec<String>,
}

impl Default for DescriptionOptions {
    fn default() -> Self {
        Self {
            templates: PromptTemplates::default(),
            include_few_shots: true,
            examples: vec![FewShotExample::default()],
            available_ids: DEFAULT_AVAILABLE_IDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// The complete initial prompt for a planner and its evaluation.
pub fn build_description(
    config: &PlannerConfig,
    catalog: &FeatureCatalog,
    breakdown: &CostBreakdown,
    target: f64,
    weights: &CostWeights,
    options: &DescriptionOptions,
) -> Result<PromptBundle, FewShotError> {
    let mut bundle = PromptBundle::new(build_system_prompt())
        .with_section(SectionTag::Instructions, build_instructions(&options.templates))
        .with_section(SectionTag::Planner, describe_planner(config, catalog, &options.templates))
        .with_section(
            SectionTag::Evaluation,
            describe_evaluation(breakdown, breakdown.total, target, weights),
        );
    if options.include_few_shots {
        bundle = bundle.with_section(
            SectionTag::FewShots,
            build_few_shots(catalog, &options.examples, &options.available_ids)?,
        );
    }
    Ok(bundle)
}
