//! Acceptance suite. Runs every criterion, prints one line each, and exits
//! nonzero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use planner_doctor::bench::{pass_at_k, run_benchmark, BenchSettings, BenchmarkCase, LoadedCase};
use planner_doctor::evaluator::{aggregate, compute_partial_costs, evaluate, CostComponents, CostWeights};
use planner_doctor::heuristic::{evaluate_heuristic, NodeContext};
use planner_doctor::llm::{LlmBackend, LlmError, LlmParams, MockBackend};
use planner_doctor::planner::{collision_free, plan, PlannerConfig};
use planner_doctor::primitives::{
    format_primitive_id, generate_primitive_set, parse_primitive_id, PrimitiveLibrary, PrimitiveSetId,
    VehicleModelParams,
};
use planner_doctor::prompt::DescriptionOptions;
use planner_doctor::repair::{run_session, PatchOutcome, SessionEnv, SessionParams, StopReason};
use planner_doctor::scenario::{goal_reached, load_scenario, Trajectory};

struct Fixture {
    scenario: planner_doctor::Scenario,
    problem: planner_doctor::PlanningProblem,
    library: PrimitiveLibrary,
    weights: CostWeights,
    llm: LlmParams,
    description: DescriptionOptions,
}

impl Fixture {
    fn intersection() -> Self {
        let (scenario, problem) = load_scenario(common::fixture("intersection.json")).unwrap();
        Self {
            scenario,
            problem,
            library: PrimitiveLibrary::new(),
            weights: CostWeights::default(),
            llm: LlmParams::default(),
            description: DescriptionOptions::default(),
        }
    }

    fn env(&self) -> SessionEnv<'_> {
        SessionEnv {
            scenario: &self.scenario,
            problem: &self.problem,
            library: &self.library,
            weights: &self.weights,
            llm: &self.llm,
            description: &self.description,
        }
    }
}

fn initial_config() -> PlannerConfig {
    PlannerConfig::new(common::INITIAL_HEURISTIC, common::COARSE_ID, 20_000).unwrap()
}

fn reference_aggregation() -> String {
    let weights = CostWeights::default();
    let rows = [
        ([91.7333, 0.0850, 0.2525, 0.3175, 0.0614, 0.0], 4606.93),
        ([14.9333, 0.0102, 0.0968, 0.3504, 0.0038, 0.0], 752.56),
        ([0.0, 0.0147, 0.0673, 0.3393, 0.0041, 0.0], 4.65),
    ];
    let mut got = Vec::new();
    for (c, expected) in rows {
        let j = aggregate(&CostComponents::from_array(c), &weights);
        assert!((j - expected).abs() <= 0.01, "{j} vs {expected}");
        got.push(format!("{j:.3}"));
    }
    got.join(" / ")
}

fn primitive_id_round_trip() -> String {
    for text in [common::COARSE_ID, common::CATALOG_IDS[0], common::CATALOG_IDS[1]] {
        let id = parse_primitive_id(text).unwrap();
        assert_eq!(format_primitive_id(&id), text);
    }
    let mut rng = StdRng::seed_from_u64(2);
    for _ in 0..1000 {
        let v_max = rng.gen_range(1.0..40.0);
        let sa = rng.gen_range(0.01..1.2);
        let id = PrimitiveSetId::new(
            0.0,
            v_max,
            rng.gen_range(0.1..5.0),
            -sa,
            sa,
            rng.gen_range(0.01..1.0),
            rng.gen_range(0.1..2.0),
            "BMW_320i",
        )
        .unwrap();
        assert_eq!(parse_primitive_id(&format_primitive_id(&id)).unwrap(), id);
    }
    "3 catalog IDs byte-identical, 1000 generated IDs".into()
}

fn pass_at_k_estimator() -> String {
    let mut checked = 0;
    for n in 1..=8 {
        for c in 0..=n {
            for k in 1..=n {
                let (hits, total) = common::enumerate_pass_at_k(n, c, k);
                let p = pass_at_k(n, c, k).unwrap();
                assert!((p - hits as f64 / total as f64).abs() <= 1e-12, "n={n} c={c} k={k}");
                if k < n {
                    assert!(pass_at_k(n, c, k + 1).unwrap() >= p);
                }
                if c < n {
                    assert!(pass_at_k(n, c + 1, k).unwrap() >= p);
                }
                checked += 1;
            }
        }
    }
    format!("{checked} (n, c, k) triples")
}

fn search_optimality() -> String {
    let vehicle = VehicleModelParams::bmw_320i();
    let cases = common::tiny_cases();
    assert!(cases.len() >= 5);
    for case in &cases {
        let config = PlannerConfig::new("0", case.id, 100_000).unwrap();
        let set = generate_primitive_set(config.primitive_set_id(), &vehicle, case.scenario.dt).unwrap();
        assert!(case.max_depth <= 4);
        let (oracle, count) = common::brute_force_min_g(case, &set, &vehicle);
        assert!(count <= 200, "{}: {count} sequences", case.name);
        let oracle = oracle.unwrap();
        let result = plan(&case.scenario, &case.problem, &config, &set, &vehicle).unwrap();
        assert!((result.g_cost - oracle).abs() <= 1e-9, "{}: {} vs {}", case.name, result.g_cost, oracle);
    }
    format!("{} fixtures", cases.len())
}

fn case_study_replay() -> String {
    let fx = Fixture::intersection();
    let mut backend = MockBackend::from_file(common::fixture("case_study_mock.jsonl")).unwrap();
    let out = run_session(&fx.env(), &initial_config(), &SessionParams::default(), &mut backend).unwrap();
    assert!(matches!(
        out.stop_reason,
        StopReason::TargetReached | StopReason::MaxIterations | StopReason::TokenLimit
    ));
    assert_eq!(out.log.len(), 3);
    assert_eq!(out.log[0].patch_outcome, PatchOutcome::Applied);
    assert_eq!(out.log[2].patch_outcome, PatchOutcome::Applied);
    let feedback = serde_json::to_string(&out.log[1].feedback).unwrap();
    assert!(feedback.contains("missing response key: patched_heuristic"));
    assert_eq!(out.best_iteration, Some(3));
    let j1 = out.log[0].j_rep.unwrap();
    let j3 = out.log[2].j_rep.unwrap();
    assert!(j1 < out.j_initial && j3 < j1);
    assert!(out.log.windows(2).all(|w| w[1].j_min <= w[0].j_min));
    format!("J {:.2} -> {:.2} -> error -> {:.2e}", out.j_initial, j1, j3)
}

fn repair_efficacy() -> String {
    let fx = Fixture::intersection();
    let vehicle = VehicleModelParams::bmw_320i();
    let repaired = common::fixture_text("repaired_heuristic.dsl");
    let mut totals = Vec::new();
    for (h, id) in [(common::INITIAL_HEURISTIC, common::COARSE_ID), (repaired.trim(), common::FINER_ID)] {
        let config = PlannerConfig::new(h, id, 20_000).unwrap();
        let result = planner_doctor::plan_with_library(&fx.scenario, &fx.problem, &config, &fx.library).unwrap();
        assert!(collision_free(result.trajectory.states(), &fx.scenario, &vehicle).unwrap());
        assert!(goal_reached(&result.trajectory, &fx.problem.goal));
        totals.push(evaluate(&result.trajectory, &fx.scenario, &fx.problem.goal, &fx.weights).total);
    }
    assert!(totals[1] < totals[0], "{totals:?}");
    format!("J_SM1 {:.2} -> {:.2}", totals[0], totals[1])
}

fn token_budget() -> String {
    let fx = Fixture::intersection();
    let long = "x".repeat(40_000);
    let script = vec![common::response(&[(&long, "p")], common::INITIAL_HEURISTIC, common::COARSE_ID); 5];
    let params = SessionParams {
        token_limit: 8000,
        ..Default::default()
    };
    let out = run_session(&fx.env(), &initial_config(), &params, &mut MockBackend::new(script)).unwrap();
    assert_eq!(out.stop_reason, StopReason::TokenLimit);
    assert!(out.tokens_consumed >= 8000);
    format!("{} tokens consumed", out.tokens_consumed)
}

fn harness_consistency() -> String {
    let cases: Vec<LoadedCase> = planner_doctor::bench::load_manifest(common::fixture("bench/cases.json"))
        .unwrap()
        .into_iter()
        .map(|c| LoadedCase::load(c).unwrap())
        .collect();
    let library = PrimitiveLibrary::new();
    let improving = common::fixture_text("bench/improving.jsonl");
    let unchanged = common::fixture_text("bench/unchanged.jsonl");
    let mut seen = Vec::new();
    for c in [0u64, 4, 10] {
        let factory = |_: &BenchmarkCase, seed: u64| -> Result<Box<dyn LlmBackend>, LlmError> {
            let script = if seed < c { &improving } else { &unchanged };
            Ok(Box::new(MockBackend::from_script(script)))
        };
        let report = run_benchmark(&cases, &BenchSettings::default(), &library, &factory).unwrap();
        assert_eq!(report.cases[0].n, 10);
        assert_eq!(report.pass_at_k["pass@1"], pass_at_k(10, c as usize, 1).unwrap());
        seen.push(format!("c={c}: {}", report.pass_at_k["pass@1"]));
    }
    seen.join(", ")
}

fn numerical_integrity() -> String {
    let mut rng = StdRng::seed_from_u64(10);
    for _ in 0..10_000 {
        let spec = common::random_spec(&mut rng);
        let (scenario, problem) = common::random_world(&mut rng);
        let len = rng.gen_range(1..8);
        let states = common::random_states(&mut rng, len);
        let split = rng.gen_range(0..states.len());
        let ctx = NodeContext {
            last_segment: &states[split..],
            full_path: &states,
            problem: &problem,
            scenario: &scenario,
        };
        let h = evaluate_heuristic(&spec, &ctx);
        assert!(h.is_finite() && h >= 0.0, "{h}");
    }
    for _ in 0..1000 {
        let (scenario, problem) = common::random_world(&mut rng);
        let len = rng.gen_range(1..40);
        let traj = Trajectory::new(common::random_states(&mut rng, len), scenario.dt).unwrap();
        for c in compute_partial_costs(&traj, &scenario, &problem.goal).to_array() {
            assert!(c >= 0.0, "{c}");
        }
    }
    "10000 heuristic evaluations, 1000 trajectories".into()
}

type Criterion = (u32, &'static str, u64, fn() -> String);

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "reference aggregation", 1, reference_aggregation),
        (2, "primitive-ID round trip", 1, primitive_id_round_trip),
        (3, "pass@k estimator", 5, pass_at_k_estimator),
        (4, "search optimality oracle", 10, search_optimality),
        (5, "closed-loop case-study replay", 30, case_study_replay),
        (6, "repair efficacy", 60, repair_efficacy),
        (7, "token-budget termination", 5, token_budget),
        (8, "harness/estimator consistency", 60, harness_consistency),
        (10, "numerical integrity", 30, numerical_integrity),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, limit, check) in criteria {
        if n == 10 {
            println!(
                "criterion 9: NOT REPRODUCIBLE published pass rates need a live model backend and the original \
                 planner corpus; criteria 3, 5, 6 and 8 cover the same machinery"
            );
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check));
        let elapsed = start.elapsed();
        let over = elapsed > Duration::from_secs(limit);
        match result {
            Ok(detail) if !over => println!("criterion {n}: PASS {name} ({detail}; {elapsed:.2?})"),
            Ok(detail) => {
                failed += 1;
                println!("criterion {n}: FAIL {name} took {elapsed:.2?}, limit {limit}s ({detail})");
            }
            Err(panic) => {
                failed += 1;
                let msg = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("criterion {n}: FAIL {name}: {msg}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
