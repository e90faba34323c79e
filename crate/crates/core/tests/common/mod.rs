//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::rngs::StdRng;
use rand::Rng;

use planner_doctor::heuristic::{BinaryOp, Condition, Expr, Feature, HeuristicSpec};
use planner_doctor::llm::{DiagnosisPair, DiagnosisResult};
use planner_doctor::planner::collision_free;
use planner_doctor::primitives::{transform_primitive, PrimitiveSet, VehicleModelParams};
use planner_doctor::scenario::{GoalRegion, Lanelet, Obstacle, PlanningProblem, Scenario, VehicleState};

pub const COARSE_ID: &str = "V_0.0_20.0_Vstep_4.0_SA_-1.066_1.066_SAstep_0.18_T_0.5_Model_BMW_320i";
pub const FINER_ID: &str = "V_0.0_20.0_Vstep_2.0_SA_-1.066_1.066_SAstep_0.18_T_0.5_Model_BMW_320i";
pub const CATALOG_IDS: [&str; 2] = [
    "V_0.0_20.0_Vstep_1.0_SA_-1.066_1.066_SAstep_2.13_T_0.5_Model_BMW_320i",
    "V_0.0_20.0_Vstep_2.0_SA_-1.066_1.066_SAstep_0.18_T_0.5_Model_BMW_320i",
];
pub const INITIAL_HEURISTIC: &str = "20 * orientation_to_goal_diff + 0.5 * time_cost + time_to_goal";

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

pub fn response(pairs: &[(&str, &str)], heuristic: &str, id: &str) -> String {
    DiagnosisResult {
        pairs: pairs.iter().map(|(d, p)| DiagnosisPair::new(*d, *p)).collect(),
        patched_heuristic: heuristic.to_string(),
        primitive_set_id: id.to_string(),
    }
    .to_json()
}

// ---------------------------------------------------------------------------
// Tiny planning instances

pub struct TinyCase {
    pub name: &'static str,
    pub scenario: Scenario,
    pub problem: PlanningProblem,
    pub id: &'static str,
    pub max_depth: usize,
}

fn open_road(horizon: u32) -> Scenario {
    Scenario {
        dt: 0.1,
        horizon,
        lanelets: vec![Lanelet {
            centerline: vec![[-20.0, 0.0], [100.0, 0.0]],
            width: 3.5,
        }],
        obstacles: vec![],
    }
}

fn goal(center: [f64; 2], half: [f64; 2], t: [u32; 2]) -> GoalRegion {
    GoalRegion {
        center,
        half_extents: half,
        time_interval: t,
        velocity_interval: None,
        orientation_interval: None,
    }
}

fn start(v: f64, sa: f64) -> VehicleState {
    VehicleState::new(0.0, 0.0, 0.0, v, sa, 0)
}

const STRAIGHT_ID: &str = "V_0.0_4.0_Vstep_2.0_SA_0.0_0.0_SAstep_0.1_T_0.5_Model_BMW_320i";
const TURN_ID: &str = "V_0.0_2.0_Vstep_2.0_SA_-0.1_0.1_SAstep_0.2_T_0.5_Model_BMW_320i";

/// Small instances whose depth-limited primitive trees can be enumerated.
pub fn tiny_cases() -> Vec<TinyCase> {
    let mut blocked = open_road(20);
    blocked.obstacles.push(Obstacle {
        length: 1.0,
        width: 6.0,
        // occupies x in [2.5, 3.5] until t = 1.0 s, then leaves the road
        poses: (0..=20).map(|k| if k <= 10 { [3.0, 0.0, 0.0] } else { [3.0, 30.0, 0.0] }).collect(),
    });
    vec![
        TinyCase {
            name: "goal ahead",
            scenario: open_road(20),
            problem: PlanningProblem {
                initial_state: start(2.0, 0.0),
                goal: goal([2.0, 0.0], [0.5, 1.0], [0, 20]),
            },
            id: STRAIGHT_ID,
            max_depth: 4,
        },
        TinyCase {
            name: "far goal needs acceleration",
            scenario: open_road(20),
            problem: PlanningProblem {
                initial_state: start(2.0, 0.0),
                goal: goal([6.5, 0.0], [0.5, 1.0], [0, 20]),
            },
            id: STRAIGHT_ID,
            max_depth: 4,
        },
        TinyCase {
            name: "late time window",
            scenario: open_road(20),
            problem: PlanningProblem {
                initial_state: start(2.0, 0.0),
                goal: goal([2.0, 0.0], [1.0, 1.0], [15, 20]),
            },
            id: STRAIGHT_ID,
            max_depth: 4,
        },
        TinyCase {
            name: "standing start",
            scenario: open_road(20),
            problem: PlanningProblem {
                initial_state: start(0.0, 0.0),
                goal: goal([3.0, 0.0], [0.5, 1.0], [0, 20]),
            },
            id: STRAIGHT_ID,
            max_depth: 4,
        },
        TinyCase {
            name: "temporary blockage",
            scenario: blocked,
            problem: PlanningProblem {
                initial_state: start(0.0, 0.0),
                goal: goal([1.5, 0.0], [0.5, 1.0], [0, 20]),
            },
            id: STRAIGHT_ID,
            max_depth: 4,
        },
        TinyCase {
            name: "lateral goal",
            scenario: open_road(20),
            problem: PlanningProblem {
                initial_state: start(2.0, 0.1),
                goal: goal([2.5, 0.12], [0.3, 0.06], [0, 20]),
            },
            id: TURN_ID,
            max_depth: 3,
        },
    ]
}

/// Minimum elapsed time over all goal-reaching, collision-free primitive
/// sequences of at most `max_depth` primitives, plus the number of
/// sequences examined.
pub fn brute_force_min_g(case: &TinyCase, set: &PrimitiveSet, vehicle: &VehicleModelParams) -> (Option<f64>, usize) {
    let dt = case.scenario.dt;
    let root = case.problem.initial_state;
    let v0 = set.velocity_samples().iter().position(|v| (v - root.velocity).abs() < 1e-9).unwrap();
    let s0 = set.steering_samples().iter().position(|s| (s - root.steering_angle).abs() < 1e-9).unwrap();
    if case.problem.goal.contains(&root) {
        return (Some(0.0), 0);
    }
    let mut best: Option<f64> = None;
    let mut count = 0;
    // (last primitive, end state, elapsed steps, depth)
    let mut stack: Vec<(Option<usize>, VehicleState, u32, usize)> = vec![(None, root, 0, 0)];
    while let Some((prev, state, steps, depth)) = stack.pop() {
        if depth == case.max_depth {
            continue;
        }
        let candidates: Vec<usize> = (0..set.primitives.len())
            .filter(|&p| {
                let prim = &set.primitives[p];
                match prev {
                    None => {
                        (prim.v_start - set.velocity_samples()[v0]).abs() < 1e-9
                            && (prim.sa_start - set.steering_samples()[s0]).abs() < 1e-9
                    }
                    Some(q) => {
                        (prim.v_start - set.primitives[q].v_end).abs() < 1e-9
                            && (prim.sa_start - set.primitives[q].sa_end).abs() < 1e-9
                    }
                }
            })
            .collect();
        for p in candidates {
            count += 1;
            let mut seg = transform_primitive(&set.primitives[p], &state).unwrap();
            seg.retain(|s| s.time_step <= case.scenario.horizon);
            if seg.len() < 2 || !collision_free(&seg[1..], &case.scenario, vehicle).unwrap() {
                continue;
            }
            let elapsed = steps + (seg.len() - 1) as u32;
            if seg.iter().any(|s| case.problem.goal.contains(s)) {
                let g = elapsed as f64 * dt;
                best = Some(best.map_or(g, |b: f64| b.min(g)));
                continue;
            }
            stack.push((Some(p), *seg.last().unwrap(), elapsed, depth + 1));
        }
    }
    (best, count)
}

// ---------------------------------------------------------------------------
// pass@k by enumeration

fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Fraction of k-subsets of `n` samples (the first `c` passing) that
/// contain at least one pass, as (hits, subsets).
pub fn enumerate_pass_at_k(n: usize, c: usize, k: usize) -> (u64, u64) {
    let mut hits = 0;
    let mut total = 0;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        total += 1;
        if mask & ((1u32 << c) - 1) != 0 {
            hits += 1;
        }
    }
    assert_eq!(total, binomial(n as u64, k as u64));
    (hits, total)
}

// ---------------------------------------------------------------------------
// Random heuristics and node contexts

pub fn random_expr(rng: &mut StdRng, depth: usize) -> Expr {
    let leaf = depth == 0 || rng.gen_bool(0.3);
    if leaf {
        if rng.gen_bool(0.5) {
            let c = match rng.gen_range(0..6) {
                0 => 0.0,
                1 => -rng.gen_range(0.0..1e6),
                2 => rng.gen_range(0.0..1e300),
                3 => -1e300,
                _ => rng.gen_range(-100.0..100.0),
            };
            Expr::Constant(c)
        } else {
            Expr::Feature(Feature::ALL[rng.gen_range(0..Feature::ALL.len())])
        }
    } else if rng.gen_bool(0.8) {
        let op = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div, BinaryOp::Min, BinaryOp::Max]
            [rng.gen_range(0..6)];
        Expr::binary(op, random_expr(rng, depth - 1), random_expr(rng, depth - 1))
    } else {
        let cond = if rng.gen_bool(0.5) {
            Condition::ReachedGoal
        } else {
            Condition::ZeroVelocity
        };
        Expr::branch(cond, random_expr(rng, depth - 1), random_expr(rng, depth - 1))
    }
}

pub fn random_spec(rng: &mut StdRng) -> HeuristicSpec {
    let depth = rng.gen_range(0..8);
    HeuristicSpec::new(random_expr(rng, depth)).unwrap()
}

fn extreme(rng: &mut StdRng, scale: f64) -> f64 {
    match rng.gen_range(0..8) {
        0 => 0.0,
        1 => 1e-13,
        2 => scale * 1e150,
        3 => -scale * 1e150,
        _ => rng.gen_range(-scale..scale),
    }
}

/// A random contiguous state sequence with occasionally extreme values.
pub fn random_states(rng: &mut StdRng, len: usize) -> Vec<VehicleState> {
    (0..len)
        .map(|k| {
            let v = match rng.gen_range(0..5) {
                0 => 0.0,
                1 => 1e-9,
                2 => rng.gen_range(0.0..1e200),
                _ => rng.gen_range(0.0..30.0),
            };
            VehicleState::new(
                extreme(rng, 100.0),
                extreme(rng, 100.0),
                rng.gen_range(-10.0..10.0),
                v,
                extreme(rng, 1.0),
                k as u32,
            )
        })
        .collect()
}

pub fn random_world(rng: &mut StdRng) -> (Scenario, PlanningProblem) {
    let scenario = Scenario {
        dt: [0.1, 0.05, 1e-3, 1.0][rng.gen_range(0..4)],
        horizon: 100,
        lanelets: vec![Lanelet {
            centerline: vec![[-50.0, 0.0], [50.0, rng.gen_range(-5.0..5.0)]],
            width: 3.5,
        }],
        obstacles: vec![],
    };
    let problem = PlanningProblem {
        initial_state: VehicleState::new(0.0, 0.0, 0.0, 0.0, 0.0, 0),
        goal: goal(
            [rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0)],
            [rng.gen_range(0.1..5.0), rng.gen_range(0.1..5.0)],
            [rng.gen_range(0..20), rng.gen_range(20..60)],
        ),
    };
    (scenario, problem)
}
