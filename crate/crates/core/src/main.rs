use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use planner_doctor::bench::{load_manifest, mock_script_factory, run_benchmark, Ablation, BenchSettings, BenchmarkCase, LoadedCase};
use planner_doctor::evaluator::{evaluate, CostBreakdown, CostWeights};
use planner_doctor::heuristic::list_features;
use planner_doctor::llm::{HttpBackend, LlmBackend, LlmError, LlmParams, MockBackend};
use planner_doctor::planner::{plan_with_library, PlannerConfig, DEFAULT_MAX_EXPANSIONS};
use planner_doctor::primitives::PrimitiveLibrary;
use planner_doctor::prompt::{build_description, DescriptionOptions};
use planner_doctor::repair::{run_session, save_session_log, SessionEnv, SessionError, SessionParams};
use planner_doctor::scenario::{load_scenario, ScenarioError, Trajectory};

#[derive(Parser)]
#[command(name = "planner-doctor", version, about = "Diagnose and repair lattice A* motion planners")]
struct Cli {
    /// Directory for cached motion primitive sets.
    #[arg(long, global = true)]
    primitive_cache: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct PlannerArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// File holding the heuristic expression.
    #[arg(long)]
    heuristic: PathBuf,
    /// Motion primitive set ID.
    #[arg(long)]
    primitives: String,
    #[arg(long, default_value_t = DEFAULT_MAX_EXPANSIONS)]
    max_expansions: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationArg {
    Full,
    NoFewShots,
    NoFeedback,
}

#[derive(Subcommand)]
enum Command {
    /// Plan a trajectory and print its costs.
    Plan {
        #[command(flatten)]
        planner: PlannerArgs,
        /// Trajectory output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a saved trajectory.
    Evaluate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
    },
    /// Write the prompt that a repair session would start with.
    Describe {
        #[command(flatten)]
        planner: PlannerArgs,
        #[arg(long, default_value_t = 0.16)]
        target: f64,
        #[arg(long)]
        no_few_shots: bool,
        /// Prompt output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a diagnose-and-repair session.
    Repair {
        #[command(flatten)]
        planner: PlannerArgs,
        #[arg(long, default_value_t = 0.16)]
        target: f64,
        #[arg(long, default_value_t = 10.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 8000)]
        token_limit: usize,
        #[arg(long, default_value_t = 10)]
        max_iterations: usize,
        /// `mock:<script.jsonl>` or `http`.
        #[arg(long)]
        backend: String,
        /// Chat-completion endpoint for the http backend.
        #[arg(long, default_value = "https://api.openai.com/v1/chat/completions")]
        endpoint: String,
        #[arg(long, default_value = "gpt-4-turbo")]
        model: String,
        #[arg(long, default_value_t = 0.6)]
        temperature: f64,
        /// Session log output (JSON lines).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run repair sessions over a case manifest and report pass@k.
    Bench {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 10)]
        samples: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        k: Vec<usize>,
        #[arg(long, value_enum, default_value = "full")]
        ablation: AblationArg,
        /// `mock` (per-case scripts from the manifest) or `http`.
        #[arg(long, default_value = "mock")]
        backend: String,
        #[arg(long, default_value = "https://api.openai.com/v1/chat/completions")]
        endpoint: String,
        #[arg(long, default_value = "gpt-4-turbo")]
        model: String,
        #[arg(long, default_value_t = 0.6)]
        temperature: f64,
        #[arg(long, default_value_t = 10.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 8000)]
        token_limit: usize,
        #[arg(long, default_value_t = 10)]
        max_iterations: usize,
        /// Report output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Exit code 1 for domain errors, 2 for usage and I/O errors.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn domain(e: impl ToString) -> Self {
        Self {
            code: 1,
            message: e.to_string(),
        }
    }

    fn io(e: impl ToString) -> Self {
        Self {
            code: 2,
            message: e.to_string(),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io { .. } => Failure::io(e),
            other => Failure::domain(other),
        }
    }
}

impl From<LlmError> for Failure {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::Config(_) => Failure::io(e),
            other => Failure::domain(other),
        }
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::io(format!("cannot read {}: {e}", path.display())))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::io(format!("cannot write {}: {e}", path.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn to_json(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("report types serialize")
}

fn load_config(args: &PlannerArgs) -> Result<PlannerConfig, Failure> {
    let text = read_text(&args.heuristic)?;
    PlannerConfig::new(&text, &args.primitives, args.max_expansions).map_err(Failure::domain)
}

fn http_backend(endpoint: &str) -> Result<Box<dyn LlmBackend>, LlmError> {
    Ok(Box::new(HttpBackend::from_env(endpoint)?))
}

fn make_backend(spec: &str, endpoint: &str) -> Result<Box<dyn LlmBackend>, Failure> {
    if let Some(path) = spec.strip_prefix("mock:") {
        let backend = MockBackend::from_file(path).map_err(|e| Failure::io(format!("cannot read {path}: {e}")))?;
        return Ok(Box::new(backend));
    }
    if spec == "http" {
        return Ok(http_backend(endpoint)?);
    }
    Err(Failure::io(format!("unknown backend '{spec}', expected mock:<script> or http")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let library = match &cli.primitive_cache {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Failure::io(format!("cannot create {}: {e}", dir.display())))?;
            PrimitiveLibrary::with_cache_dir(dir)
        }
        None => PrimitiveLibrary::new(),
    };
    let weights = CostWeights::default();
    match cli.command {
        Command::Plan { planner, out } => {
            let (scenario, problem) = load_scenario(&planner.scenario)?;
            let config = load_config(&planner)?;
            let result = plan_with_library(&scenario, &problem, &config, &library).map_err(Failure::domain)?;
            let report = evaluate(&result.trajectory, &scenario, &problem.goal, &weights);
            write_output(out.as_deref(), &to_json(&result.trajectory))?;
            let summary = to_json(&report);
            if out.is_some() {
                println!("{summary}");
            } else {
                eprintln!("{summary}");
            }
        }
        Command::Evaluate { scenario, trajectory } => {
            let (scenario, problem) = load_scenario(&scenario)?;
            let traj: Trajectory = serde_json::from_str(&read_text(&trajectory)?).map_err(Failure::domain)?;
            println!("{}", to_json(&evaluate(&traj, &scenario, &problem.goal, &weights)));
        }
        Command::Describe {
            planner,
            target,
            no_few_shots,
            out,
        } => {
            let (scenario, problem) = load_scenario(&planner.scenario)?;
            let config = load_config(&planner)?;
            let result = plan_with_library(&scenario, &problem, &config, &library).map_err(Failure::domain)?;
            let report = evaluate(&result.trajectory, &scenario, &problem.goal, &weights);
            let breakdown = CostBreakdown {
                components: report.components,
                total: report.total,
            };
            let options = DescriptionOptions {
                include_few_shots: !no_few_shots,
                ..Default::default()
            };
            let bundle = build_description(&config, &list_features(), &breakdown, target, &weights, &options)
                .map_err(Failure::domain)?;
            write_output(out.as_deref(), &bundle.render_document())?;
        }
        Command::Repair {
            planner,
            target,
            epsilon,
            token_limit,
            max_iterations,
            backend,
            endpoint,
            model,
            temperature,
            log,
        } => {
            let (scenario, problem) = load_scenario(&planner.scenario)?;
            let config = load_config(&planner)?;
            let mut backend = make_backend(&backend, &endpoint)?;
            let llm = LlmParams {
                temperature,
                token_limit,
                model_name: model,
            };
            let description = DescriptionOptions::default();
            let env = SessionEnv {
                scenario: &scenario,
                problem: &problem,
                library: &library,
                weights: &weights,
                llm: &llm,
                description: &description,
            };
            let params = SessionParams {
                target,
                epsilon,
                token_limit,
                max_iterations,
                use_feedback: true,
            };
            let outcome = run_session(&env, &config, &params, backend.as_mut()).map_err(|e| match e {
                SessionError::Backend(LlmError::Config(_)) => Failure::io(e),
                other => Failure::domain(other),
            })?;
            if let Some(path) = &log {
                save_session_log(&outcome, path).map_err(|e| Failure::io(format!("cannot write {}: {e}", path.display())))?;
            }
            #[derive(Serialize)]
            struct Summary<'a> {
                #[serde(rename = "J_initial")]
                j_initial: f64,
                #[serde(rename = "J_min")]
                j_min: f64,
                stop_reason: planner_doctor::StopReason,
                iterations: usize,
                tokens_consumed: usize,
                best_iteration: Option<usize>,
                best_config: &'a Option<PlannerConfig>,
                best_diagnoses: &'a Option<Vec<planner_doctor::llm::DiagnosisPair>>,
            }
            println!(
                "{}",
                to_json(&Summary {
                    j_initial: outcome.j_initial,
                    j_min: outcome.j_min,
                    stop_reason: outcome.stop_reason,
                    iterations: outcome.log.len(),
                    tokens_consumed: outcome.tokens_consumed,
                    best_iteration: outcome.best_iteration,
                    best_config: &outcome.best_config,
                    best_diagnoses: &outcome.best_diagnoses,
                })
            );
        }
        Command::Bench {
            manifest,
            samples,
            k,
            ablation,
            backend,
            endpoint,
            model,
            temperature,
            epsilon,
            token_limit,
            max_iterations,
            out,
        } => {
            let cases = load_manifest(&manifest).map_err(Failure::io)?;
            let loaded = cases
                .into_iter()
                .map(LoadedCase::load)
                .collect::<Result<Vec<_>, _>>()
                .map_err(Failure::domain)?;
            let settings = BenchSettings {
                samples_per_case: samples,
                k_values: k,
                ablation: match ablation {
                    AblationArg::Full => Ablation::Full,
                    AblationArg::NoFewShots => Ablation::NoFewShots,
                    AblationArg::NoFeedback => Ablation::NoFeedback,
                },
                session: SessionParams {
                    epsilon,
                    token_limit,
                    max_iterations,
                    ..Default::default()
                },
                llm: LlmParams {
                    temperature,
                    token_limit,
                    model_name: model,
                },
                ..Default::default()
            };
            let report = match backend.as_str() {
                "mock" => run_benchmark(&loaded, &settings, &library, &mock_script_factory),
                "http" => {
                    // fail early on a missing key instead of once per sample
                    http_backend(&endpoint)?;
                    let factory = |_: &BenchmarkCase, _: u64| http_backend(&endpoint);
                    run_benchmark(&loaded, &settings, &library, &factory)
                }
                other => return Err(Failure::io(format!("unknown backend '{other}', expected mock or http"))),
            }
            .map_err(Failure::domain)?;
            write_output(out.as_deref(), &to_json(&report))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
