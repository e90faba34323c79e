//! Repeated repair sessions over a corpus of planners, scored with the
//! unbiased pass@k estimator.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::CostWeights;
use crate::llm::{LlmBackend, LlmError, LlmParams, MockBackend};
use crate::planner::{ConfigError, PlannerConfig, DEFAULT_MAX_EXPANSIONS};
use crate::primitives::PrimitiveLibrary;
use crate::prompt::DescriptionOptions;
use crate::repair::{run_session, SessionEnv, SessionError, SessionParams};
use crate::scenario::{load_scenario, PlanningProblem, Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("pass@k needs 0 <= c <= n and 1 <= k <= n (n = {n}, c = {c}, k = {k})")]
    InvalidCounts { n: usize, c: usize, k: usize },
    #[error("samples per case ({samples}) must be at least the largest k ({k})")]
    TooFewSamples { samples: usize, k: usize },
    #[error("cannot read manifest {path}: {reason}")]
    Manifest { path: String, reason: String },
    #[error("case {case_id}: {source}")]
    Scenario { case_id: String, source: ScenarioError },
    #[error("case {case_id}: {source}")]
    Config { case_id: String, source: ConfigError },
}

/// Unbiased pass@k: the probability that a random k-subset of `n` samples
/// with `c` passes contains at least one pass.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64, BenchError> {
    if c > n || k == 0 || k > n {
        return Err(BenchError::InvalidCounts { n, c, k });
    }
    if c == 0 {
        return Ok(0.0);
    }
    if n - c < k {
        return Ok(1.0);
    }
    // C(n-c, k) / C(n, k) = prod_{i = n-c+1}^{n} (1 - k / i)
    let miss: f64 = (n - c + 1..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - miss)
}

fn default_target() -> f64 {
    0.16
}

fn default_expansions() -> usize {
    DEFAULT_MAX_EXPANSIONS
}

/// One manifest entry. Relative paths are resolved against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkCase {
    pub case_id: String,
    pub scenario: PathBuf,
    pub heuristic: String,
    pub motion_primitives_id: String,
    #[serde(default = "default_expansions")]
    pub max_expansions: usize,
    #[serde(default = "default_target")]
    pub target: f64,
    /// Mock scripts; sample `s` replays `mock_scripts[s % len]`.
    #[serde(default)]
    pub mock_scripts: Vec<PathBuf>,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<BenchmarkCase>, BenchError> {
    let path = path.as_ref();
    let manifest_err = |reason: String| BenchError::Manifest {
        path: path.display().to_string(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| manifest_err(e.to_string()))?;
    let mut cases: Vec<BenchmarkCase> = serde_json::from_str(&text).map_err(|e| manifest_err(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new(""));
    for case in &mut cases {
        case.scenario = base.join(&case.scenario);
        for script in &mut case.mock_scripts {
            *script = base.join(&*script);
        }
    }
    Ok(cases)
}

#[derive(Debug, Clone)]
pub struct LoadedCase {
    pub case: BenchmarkCase,
    pub scenario: Scenario,
    pub problem: PlanningProblem,
    pub config: PlannerConfig,
}

impl LoadedCase {
    pub fn load(case: BenchmarkCase) -> Result<Self, BenchError> {
        let (scenario, problem) = load_scenario(&case.scenario).map_err(|source| BenchError::Scenario {
            case_id: case.case_id.clone(),
            source,
        })?;
        let config = PlannerConfig::new(&case.heuristic, &case.motion_primitives_id, case.max_expansions).map_err(
            |source| BenchError::Config {
                case_id: case.case_id.clone(),
                source,
            },
        )?;
        Ok(Self {
            case,
            scenario,
            problem,
            config,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoFewShots,
    NoFeedback,
}

#[derive(Debug, Clone)]
pub struct BenchSettings {
    pub samples_per_case: usize,
    pub k_values: Vec<usize>,
    pub ablation: Ablation,
    pub session: SessionParams,
    pub weights: CostWeights,
    pub llm: LlmParams,
    pub description: DescriptionOptions,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            samples_per_case: 10,
            k_values: vec![1, 5, 10],
            ablation: Ablation::Full,
            session: SessionParams::default(),
            weights: CostWeights::default(),
            llm: LlmParams::default(),
            description: DescriptionOptions::default(),
        }
    }
}

/// Creates the backend for one sample of one case.
pub type BackendFactory<'a> = dyn Fn(&BenchmarkCase, u64) -> Result<Box<dyn LlmBackend>, LlmError> + Sync + 'a;

/// Factory replaying each case's mock scripts, chosen by seed.
pub fn mock_script_factory(case: &BenchmarkCase, seed: u64) -> Result<Box<dyn LlmBackend>, LlmError> {
    if case.mock_scripts.is_empty() {
        return Err(LlmError::Config(format!("case {} lists no mock scripts", case.case_id)));
    }
    let path = &case.mock_scripts[(seed % case.mock_scripts.len() as u64) as usize];
    let backend = MockBackend::from_file(path)
        .map_err(|e| LlmError::Config(format!("cannot read mock script {}: {e}", path.display())))?;
    Ok(Box::new(backend))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub seed: u64,
    pub passed: bool,
    #[serde(rename = "J_initial")]
    pub j_initial: Option<f64>,
    #[serde(rename = "J_min")]
    pub j_min: Option<f64>,
    pub iterations: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case_id: String,
    pub n: usize,
    pub c: usize,
    pub pass_at_k: BTreeMap<String, f64>,
    pub samples: Vec<SampleResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvalidCase {
    pub case_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassAtKReport {
    pub ablation: Ablation,
    pub samples_per_case: usize,
    /// pass@k averaged over valid cases.
    #[serde(rename = "pass@k")]
    pub pass_at_k: BTreeMap<String, f64>,
    /// Mean relative decrease of J over passing samples.
    pub decrement_avg: f64,
    pub decrement_stddev: f64,
    pub passing_samples: usize,
    pub cases: Vec<CaseReport>,
    pub invalid_cases: Vec<InvalidCase>,
}

fn pass_key(k: usize) -> String {
    format!("pass@{k}")
}

fn session_settings(settings: &BenchSettings) -> (SessionParams, DescriptionOptions) {
    let mut params = settings.session.clone();
    let mut description = settings.description.clone();
    match settings.ablation {
        Ablation::Full => {}
        Ablation::NoFewShots => description.include_few_shots = false,
        Ablation::NoFeedback => {
            params.use_feedback = false;
            params.max_iterations = 1;
        }
    }
    (params, description)
}

enum SampleRun {
    Done(SampleResult),
    InvalidCase(String),
}

fn run_sample(
    loaded: &LoadedCase,
    seed: u64,
    settings: &BenchSettings,
    params: &SessionParams,
    description: &DescriptionOptions,
    library: &PrimitiveLibrary,
    factory: &BackendFactory<'_>,
) -> SampleRun {
    let failed = |error: String| SampleResult {
        seed,
        passed: false,
        j_initial: None,
        j_min: None,
        iterations: 0,
        error: Some(error),
    };
    let mut backend = match factory(&loaded.case, seed) {
        Ok(b) => b,
        Err(e) => return SampleRun::Done(failed(e.to_string())),
    };
    let env = SessionEnv {
        scenario: &loaded.scenario,
        problem: &loaded.problem,
        library,
        weights: &settings.weights,
        llm: &settings.llm,
        description,
    };
    let params = SessionParams {
        target: loaded.case.target,
        ..params.clone()
    };
    match run_session(&env, &loaded.config, &params, backend.as_mut()) {
        Ok(outcome) => SampleRun::Done(SampleResult {
            seed,
            passed: outcome.j_min < outcome.j_initial,
            j_initial: Some(outcome.j_initial),
            j_min: Some(outcome.j_min),
            iterations: outcome.log.len(),
            error: None,
        }),
        Err(SessionError::InitialPlanFailure(e)) => SampleRun::InvalidCase(e.to_string()),
        Err(e) => SampleRun::Done(failed(e.to_string())),
    }
}

/// Runs `samples_per_case` sessions per case with seeds `0..samples_per_case`.
///
/// A sample passes when its session returns a planner with a strictly lower
/// objective. Samples whose backend fails count as non-passing. Cases whose
/// initial planner fails are excluded.
pub fn run_benchmark(
    cases: &[LoadedCase],
    settings: &BenchSettings,
    library: &PrimitiveLibrary,
    factory: &BackendFactory<'_>,
) -> Result<PassAtKReport, BenchError> {
    let n = settings.samples_per_case;
    let k_max = settings.k_values.iter().copied().max().unwrap_or(1);
    if n < k_max || n == 0 {
        return Err(BenchError::TooFewSamples { samples: n, k: k_max });
    }
    let (params, description) = session_settings(settings);
    let jobs: Vec<(usize, u64)> = (0..cases.len()).flat_map(|c| (0..n as u64).map(move |s| (c, s))).collect();
    let runs: Vec<SampleRun> = jobs
        .par_iter()
        .map(|&(c, seed)| run_sample(&cases[c], seed, settings, &params, &description, library, factory))
        .collect();

    let mut case_reports = Vec::new();
    let mut invalid_cases = Vec::new();
    let mut decrements = Vec::new();
    for (loaded, chunk) in cases.iter().zip(runs.chunks(n)) {
        if let Some(reason) = chunk.iter().find_map(|r| match r {
            SampleRun::InvalidCase(reason) => Some(reason.clone()),
            SampleRun::Done(_) => None,
        }) {
            tracing::warn!(case = %loaded.case.case_id, %reason, "excluding case whose initial planner fails");
            invalid_cases.push(InvalidCase {
                case_id: loaded.case.case_id.clone(),
                reason,
            });
            continue;
        }
        let samples: Vec<SampleResult> = chunk
            .iter()
            .filter_map(|r| match r {
                SampleRun::Done(s) => Some(s.clone()),
                SampleRun::InvalidCase(_) => None,
            })
            .collect();
        let c = samples.iter().filter(|s| s.passed).count();
        for s in samples.iter().filter(|s| s.passed) {
            if let (Some(j0), Some(j1)) = (s.j_initial, s.j_min) {
                if j0 > 0.0 {
                    decrements.push((j0 - j1) / j0);
                }
            }
        }
        let mut table = BTreeMap::new();
        for &k in &settings.k_values {
            table.insert(pass_key(k), pass_at_k(n, c, k)?);
        }
        case_reports.push(CaseReport {
            case_id: loaded.case.case_id.clone(),
            n,
            c,
            pass_at_k: table,
            samples,
        });
    }

    let mut overall = BTreeMap::new();
    for &k in &settings.k_values {
        let key = pass_key(k);
        let mean = if case_reports.is_empty() {
            0.0
        } else {
            case_reports.iter().map(|r| r.pass_at_k[&key]).sum::<f64>() / case_reports.len() as f64
        };
        overall.insert(key, mean);
    }
    let (decrement_avg, decrement_stddev) = mean_and_std(&decrements);
    Ok(PassAtKReport {
        ablation: settings.ablation,
        samples_per_case: n,
        pass_at_k: overall,
        decrement_avg,
        decrement_stddev,
        passing_samples: decrements.len(),
        cases: case_reports,
        invalid_cases,
    })
}

/// Population mean and standard deviation; zeros for an empty slice.
fn mean_and_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
    (mean, var.sqrt())
}
