mod common;

use planner_doctor::planner::{collision_free, plan, PlanError, PlannerConfig};
use planner_doctor::primitives::{generate_primitive_set, PrimitiveLibrary, VehicleModelParams};
use planner_doctor::scenario::{goal_reached, load_scenario};

#[test]
fn zero_heuristic_matches_brute_force() {
    let vehicle = VehicleModelParams::bmw_320i();
    for case in common::tiny_cases() {
        let config = PlannerConfig::new("0", case.id, 100_000).unwrap();
        let set = generate_primitive_set(config.primitive_set_id(), &vehicle, case.scenario.dt).unwrap();
        let (oracle, count) = common::brute_force_min_g(&case, &set, &vehicle);
        assert!(count <= 200, "{}: {count} sequences", case.name);
        let oracle = oracle.unwrap_or_else(|| panic!("{}: unreachable within depth", case.name));
        let result = plan(&case.scenario, &case.problem, &config, &set, &vehicle).unwrap();
        assert!(
            (result.g_cost - oracle).abs() <= 1e-9,
            "{}: planner {} vs oracle {}",
            case.name,
            result.g_cost,
            oracle
        );
        assert!(goal_reached(&result.trajectory, &case.problem.goal));
        assert!(collision_free(result.trajectory.states(), &case.scenario, &vehicle).unwrap());
    }
}

#[test]
fn trajectories_are_continuous() {
    let (scenario, problem) = load_scenario(common::fixture("intersection.json")).unwrap();
    let library = PrimitiveLibrary::new();
    for (h, id) in [
        (common::INITIAL_HEURISTIC.to_string(), common::COARSE_ID),
        (common::fixture_text("repaired_heuristic.dsl"), common::FINER_ID),
    ] {
        let config = PlannerConfig::new(&h, id, 20_000).unwrap();
        let result = planner_doctor::plan_with_library(&scenario, &problem, &config, &library).unwrap();
        let states = result.trajectory.states();
        assert_eq!(states.len(), 34);
        for w in states.windows(2) {
            assert_eq!(w[1].time_step, w[0].time_step + 1);
            let step = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
            // one Euler step at most covers v * dt
            assert!(step <= w[0].velocity.max(w[1].velocity) * scenario.dt + 1e-6);
        }
        let elapsed = (states.last().unwrap().time_step - states[0].time_step) as f64 * scenario.dt;
        assert!((result.g_cost - elapsed).abs() < 1e-9);
        let again = planner_doctor::plan_with_library(&scenario, &problem, &config, &library).unwrap();
        assert_eq!(again, result);
    }
}

#[test]
fn wall_of_obstacles_has_no_solution() {
    let (mut scenario, problem) = load_scenario(common::fixture("intersection.json")).unwrap();
    scenario.obstacles.push(planner_doctor::scenario::Obstacle {
        length: 2.0,
        width: 60.0,
        poses: vec![[8.0, 0.0, 0.0]; scenario.horizon as usize + 1],
    });
    let config = PlannerConfig::new(common::INITIAL_HEURISTIC, common::COARSE_ID, 20_000).unwrap();
    let err = planner_doctor::plan_with_library(&scenario, &problem, &config, &PrimitiveLibrary::new()).unwrap_err();
    assert!(matches!(err, PlanError::NoSolution { .. }), "{err}");
}
