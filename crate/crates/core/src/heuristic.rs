//! The heuristic expression language.
//!
//! Heuristics are small arithmetic expressions over a fixed catalog of cost
//! features, e.g. `20 * orientation_to_goal_diff + 0.5 * time_cost + time_to_goal`.
//!
//! ```text
//! expr   := term (("+" | "-") term)*
//! term   := factor (("*" | "/") factor)*
//! factor := NUMBER | "-" NUMBER | IDENT | "(" expr ")" | FUNC "(" expr "," expr ")"
//! FUNC   := min | max | if_reached_goal | if_zero_velocity
//! ```
//!
//! Evaluation is total: division by a near-zero denominator yields
//! [`DIVISION_GUARD`], intermediate values saturate to finite numbers and the
//! final value is clamped at zero.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{distance_to_goal, states_reach_goal, wrap_angle, PlanningProblem, Scenario, VehicleState};

/// Value of a division whose denominator is smaller than [`DIVISION_EPS`] in magnitude.
pub const DIVISION_GUARD: f64 = 1e6;
pub const DIVISION_EPS: f64 = 1e-12;
pub const MAX_DEPTH: usize = 64;
/// Velocities at or below this magnitude count as standing still.
pub const ZERO_VELOCITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HeuristicError {
    #[error("syntax error at position {position} near '{token}': {message}")]
    Syntax {
        position: usize,
        token: String,
        message: String,
    },
    #[error("unknown feature '{name}'; valid features are: {}", .valid.join(", "))]
    UnknownFeature { name: String, valid: Vec<String> },
    #[error("expression nesting exceeds the maximum depth of {MAX_DEPTH}")]
    TooDeep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    OrientationToGoalDiff,
    TimeCost,
    DistanceToGoal,
    Velocity,
    RemainingDesiredTime,
    TimeToGoal,
    AccelerationCost,
    PathEfficiency,
    SteeringAngleCost,
    SteeringVelocityCost,
}

impl Feature {
    pub const ALL: [Feature; 10] = [
        Feature::OrientationToGoalDiff,
        Feature::TimeCost,
        Feature::DistanceToGoal,
        Feature::Velocity,
        Feature::RemainingDesiredTime,
        Feature::TimeToGoal,
        Feature::AccelerationCost,
        Feature::PathEfficiency,
        Feature::SteeringAngleCost,
        Feature::SteeringVelocityCost,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::OrientationToGoalDiff => "orientation_to_goal_diff",
            Feature::TimeCost => "time_cost",
            Feature::DistanceToGoal => "distance_to_goal",
            Feature::Velocity => "velocity",
            Feature::RemainingDesiredTime => "remaining_desired_time",
            Feature::TimeToGoal => "time_to_goal",
            Feature::AccelerationCost => "acceleration_cost",
            Feature::PathEfficiency => "path_efficiency",
            Feature::SteeringAngleCost => "steering_angle_cost",
            Feature::SteeringVelocityCost => "steering_velocity_cost",
        }
    }

    pub fn docstring(self) -> &'static str {
        match self {
            Feature::OrientationToGoalDiff => {
                "Returns the absolute difference between the heading towards the goal center and the current orientation."
            }
            Feature::TimeCost => "Returns the duration of the last path segment.",
            Feature::DistanceToGoal => "Returns the Euclidean distance from the current position to the goal center.",
            Feature::Velocity => "Returns the current velocity.",
            Feature::RemainingDesiredTime => {
                "Returns the start of the desired goal time interval minus the current time."
            }
            Feature::TimeToGoal => {
                "Returns 0 if the last path segment reached the goal, otherwise the distance to the goal divided by the current velocity (1e6 when standing still)."
            }
            Feature::AccelerationCost => "Returns the acceleration costs.",
            Feature::PathEfficiency => {
                "Returns the path efficiency of the last path segment, i.e. travelled distance divided by elapsed time."
            }
            Feature::SteeringAngleCost => "Returns the steering angle costs of the last path segment.",
            Feature::SteeringVelocityCost => "Returns the steering velocity costs of the last path segment.",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Feature::OrientationToGoalDiff => "rad",
            Feature::TimeCost | Feature::RemainingDesiredTime | Feature::TimeToGoal => "s",
            Feature::DistanceToGoal => "m",
            Feature::Velocity | Feature::PathEfficiency => "m/s",
            Feature::AccelerationCost => "m^2/s^3",
            Feature::SteeringAngleCost => "rad^2*s",
            Feature::SteeringVelocityCost => "rad^2/s",
        }
    }

    pub fn from_name(name: &str) -> Option<Feature> {
        Feature::ALL.into_iter().find(|f| f.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub docstring: &'static str,
    pub unit: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureCatalog {
    pub entries: Vec<CatalogEntry>,
}

impl FeatureCatalog {
    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.iter().map(|e| e.name)
    }

    pub fn get(&self, name: &str) -> Option<&CatalogEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

pub fn list_features() -> FeatureCatalog {
    FeatureCatalog {
        entries: Feature::ALL
            .into_iter()
            .map(|f| CatalogEntry {
                name: f.name(),
                docstring: f.docstring(),
                unit: f.unit(),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    ReachedGoal,
    ZeroVelocity,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Constant(f64),
    Feature(Feature),
    Binary {
        op: BinaryOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Branch {
        cond: Condition,
        then: Box<Expr>,
        otherwise: Box<Expr>,
    },
}

impl Expr {
    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn branch(cond: Condition, then: Expr, otherwise: Expr) -> Expr {
        Expr::Branch {
            cond,
            then: Box::new(then),
            otherwise: Box::new(otherwise),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Constant(_) | Expr::Feature(_) => 1,
            Expr::Binary { lhs, rhs, .. } => 1 + lhs.depth().max(rhs.depth()),
            Expr::Branch { then, otherwise, .. } => 1 + then.depth().max(otherwise.depth()),
        }
    }
}

/// A validated heuristic expression.
#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicSpec {
    root: Expr,
}

impl HeuristicSpec {
    /// Validates an AST built in code. Constants must be finite.
    pub fn new(root: Expr) -> Result<Self, HeuristicError> {
        if root.depth() > MAX_DEPTH {
            return Err(HeuristicError::TooDeep);
        }
        fn check(e: &Expr) -> Result<(), HeuristicError> {
            match e {
                Expr::Constant(v) if !v.is_finite() => Err(HeuristicError::Syntax {
                    position: 0,
                    token: v.to_string(),
                    message: "constants must be finite".into(),
                }),
                Expr::Constant(_) | Expr::Feature(_) => Ok(()),
                Expr::Binary { lhs, rhs, .. } => check(lhs).and_then(|_| check(rhs)),
                Expr::Branch { then, otherwise, .. } => check(then).and_then(|_| check(otherwise)),
            }
        }
        check(&root)?;
        Ok(Self { root })
    }

    pub fn zero() -> Self {
        Self {
            root: Expr::Constant(0.0),
        }
    }

    pub fn root(&self) -> &Expr {
        &self.root
    }

    /// Features referenced anywhere in the expression, in first-use order.
    pub fn features(&self) -> Vec<Feature> {
        fn walk(e: &Expr, out: &mut Vec<Feature>) {
            match e {
                Expr::Constant(_) => {}
                Expr::Feature(f) => {
                    if !out.contains(f) {
                        out.push(*f);
                    }
                }
                Expr::Binary { lhs, rhs, .. } => {
                    walk(lhs, out);
                    walk(rhs, out);
                }
                Expr::Branch { then, otherwise, .. } => {
                    walk(then, out);
                    walk(otherwise, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }
}

impl fmt::Display for HeuristicSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_heuristic(self))
    }
}

// ---------------------------------------------------------------------------
// Lexer and parser

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
    End,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: usize,
    text: String,
}

fn lex(src: &str) -> Result<Vec<Token>, HeuristicError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let single = match c {
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            b',' => Some(Tok::Comma),
            _ => None,
        };
        if let Some(tok) = single {
            i += 1;
            out.push(Token {
                tok,
                pos: start,
                text: src[start..i].to_string(),
            });
            continue;
        }
        if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'.' {
                i += 1;
                let frac_start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i == frac_start {
                    return Err(HeuristicError::Syntax {
                        position: start,
                        token: src[start..i].to_string(),
                        message: "expected digits after decimal point".into(),
                    });
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                let exp_start = j;
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                if j > exp_start {
                    i = j;
                }
            }
            let text = &src[start..i];
            let value: f64 = text.parse().map_err(|_| HeuristicError::Syntax {
                position: start,
                token: text.to_string(),
                message: "invalid number".into(),
            })?;
            if !value.is_finite() {
                return Err(HeuristicError::Syntax {
                    position: start,
                    token: text.to_string(),
                    message: "number is not finite".into(),
                });
            }
            out.push(Token {
                tok: Tok::Num(value),
                pos: start,
                text: text.to_string(),
            });
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let text = &src[start..i];
            out.push(Token {
                tok: Tok::Ident(text.to_string()),
                pos: start,
                text: text.to_string(),
            });
            continue;
        }
        let ch = src[start..].chars().next().unwrap_or('?');
        return Err(HeuristicError::Syntax {
            position: start,
            token: ch.to_string(),
            message: "unexpected character".into(),
        });
    }
    out.push(Token {
        tok: Tok::End,
        pos: src.len(),
        text: "<end of input>".into(),
    });
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    cur: usize,
    nesting: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.cur]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.cur].clone();
        if self.cur + 1 < self.tokens.len() {
            self.cur += 1;
        }
        t
    }

    fn error(&self, message: impl Into<String>) -> HeuristicError {
        let t = self.peek();
        HeuristicError::Syntax {
            position: t.pos,
            token: t.text.clone(),
            message: message.into(),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), HeuristicError> {
        if self.peek().tok == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.error(format!("expected {what}")))
        }
    }

    fn enter(&mut self) -> Result<(), HeuristicError> {
        self.nesting += 1;
        if self.nesting > MAX_DEPTH {
            Err(HeuristicError::TooDeep)
        } else {
            Ok(())
        }
    }

    fn expr(&mut self) -> Result<Expr, HeuristicError> {
        self.enter()?;
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().tok {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        self.nesting -= 1;
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, HeuristicError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek().tok {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.factor()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr, HeuristicError> {
        let token = self.bump();
        match token.tok {
            Tok::Num(v) => Ok(Expr::Constant(v)),
            Tok::Minus => match self.peek().tok {
                Tok::Num(v) => {
                    self.bump();
                    Ok(Expr::Constant(-v))
                }
                _ => Err(self.error("a leading '-' must be followed by a number")),
            },
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                let func = match name.as_str() {
                    "min" => Some(Err(BinaryOp::Min)),
                    "max" => Some(Err(BinaryOp::Max)),
                    "if_reached_goal" => Some(Ok(Condition::ReachedGoal)),
                    "if_zero_velocity" => Some(Ok(Condition::ZeroVelocity)),
                    _ => None,
                };
                match func {
                    Some(kind) => {
                        self.expect(Tok::LParen, &format!("'(' after '{name}'"))?;
                        let a = self.expr()?;
                        self.expect(Tok::Comma, "',' between arguments")?;
                        let b = self.expr()?;
                        self.expect(Tok::RParen, "')'")?;
                        Ok(match kind {
                            Ok(cond) => Expr::branch(cond, a, b),
                            Err(op) => Expr::binary(op, a, b),
                        })
                    }
                    None => {
                        if self.peek().tok == Tok::LParen {
                            return Err(HeuristicError::Syntax {
                                position: token.pos,
                                token: name,
                                message: "unknown function; available functions are min, max, if_reached_goal, if_zero_velocity".into(),
                            });
                        }
                        Feature::from_name(&name)
                            .map(Expr::Feature)
                            .ok_or_else(|| HeuristicError::UnknownFeature {
                                name,
                                valid: Feature::ALL.iter().map(|f| f.name().to_string()).collect(),
                            })
                    }
                }
            }
            _ => Err(HeuristicError::Syntax {
                position: token.pos,
                token: token.text,
                message: "expected a number, feature, function call or '('".into(),
            }),
        }
    }
}

pub fn parse_heuristic(text: &str) -> Result<HeuristicSpec, HeuristicError> {
    let mut parser = Parser {
        tokens: lex(text)?,
        cur: 0,
        nesting: 0,
    };
    let root = parser.expr()?;
    if parser.peek().tok != Tok::End {
        return Err(parser.error("unexpected trailing input"));
    }
    HeuristicSpec::new(root)
}

impl std::str::FromStr for HeuristicSpec {
    type Err = HeuristicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_heuristic(s)
    }
}

// ---------------------------------------------------------------------------
// Rendering

const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;

fn render_into(e: &Expr, out: &mut String) {
    match e {
        Expr::Constant(v) => out.push_str(&format!("{v}")),
        Expr::Feature(f) => out.push_str(f.name()),
        Expr::Branch { cond, then, otherwise } => {
            out.push_str(match cond {
                Condition::ReachedGoal => "if_reached_goal(",
                Condition::ZeroVelocity => "if_zero_velocity(",
            });
            render_into(then, out);
            out.push_str(", ");
            render_into(otherwise, out);
            out.push(')');
        }
        Expr::Binary { op, lhs, rhs } => {
            let (prec, sym) = match op {
                BinaryOp::Min | BinaryOp::Max => {
                    out.push_str(if *op == BinaryOp::Min { "min(" } else { "max(" });
                    render_into(lhs, out);
                    out.push_str(", ");
                    render_into(rhs, out);
                    out.push(')');
                    return;
                }
                BinaryOp::Add => (PREC_ADD, " + "),
                BinaryOp::Sub => (PREC_ADD, " - "),
                BinaryOp::Mul => (PREC_MUL, " * "),
                BinaryOp::Div => (PREC_MUL, " / "),
            };
            // left-associative: the left operand may share our precedence,
            // the right operand must bind tighter
            render_operand(lhs, out, prec_of(lhs) < prec);
            out.push_str(sym);
            render_operand(rhs, out, prec_of(rhs) <= prec);
        }
    }
}

fn prec_of(e: &Expr) -> u8 {
    match e {
        Expr::Binary {
            op: BinaryOp::Add | BinaryOp::Sub,
            ..
        } => PREC_ADD,
        Expr::Binary {
            op: BinaryOp::Mul | BinaryOp::Div,
            ..
        } => PREC_MUL,
        _ => u8::MAX,
    }
}

fn render_operand(e: &Expr, out: &mut String, parens: bool) {
    if parens {
        out.push('(');
        render_into(e, out);
        out.push(')');
    } else {
        render_into(e, out);
    }
}

/// Canonical text of a heuristic; parsing it yields the same AST.
pub fn render_heuristic(spec: &HeuristicSpec) -> String {
    let mut out = String::new();
    render_into(&spec.root, &mut out);
    out
}

// ---------------------------------------------------------------------------
// Evaluation

/// Everything a heuristic may look at when scoring a search node.
#[derive(Debug, Clone, Copy)]
pub struct NodeContext<'a> {
    /// States of the most recent primitive (including its anchor state).
    pub last_segment: &'a [VehicleState],
    pub full_path: &'a [VehicleState],
    pub problem: &'a PlanningProblem,
    pub scenario: &'a Scenario,
}

impl NodeContext<'_> {
    fn last(&self) -> &VehicleState {
        self.last_segment.last().expect("node context with empty segment")
    }

    fn reached_goal(&self) -> bool {
        states_reach_goal(self.last_segment, &self.problem.goal)
    }
}

fn saturate(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(-f64::MAX, f64::MAX)
    }
}

/// Squared finite differences of `values` integrated over `dt`.
fn squared_rate_integral(values: impl Iterator<Item = f64>, dt: f64) -> f64 {
    let values: Vec<f64> = values.collect();
    values
        .windows(2)
        .map(|w| {
            let rate = (w[1] - w[0]) / dt;
            rate * rate * dt
        })
        .sum()
}

pub fn feature_value(feature: Feature, ctx: &NodeContext<'_>) -> f64 {
    let dt = ctx.scenario.dt;
    let last = ctx.last();
    let goal = &ctx.problem.goal;
    let seg = ctx.last_segment;
    let value = match feature {
        Feature::OrientationToGoalDiff => {
            let (dx, dy) = (goal.center[0] - last.x, goal.center[1] - last.y);
            if dx.hypot(dy) < 1e-9 {
                0.0
            } else {
                wrap_angle(dy.atan2(dx) - last.orientation).abs()
            }
        }
        Feature::TimeCost => (seg.len() - 1) as f64 * dt,
        Feature::DistanceToGoal => distance_to_goal(last, goal),
        Feature::Velocity => last.velocity,
        Feature::RemainingDesiredTime => (goal.t_start() as f64 - last.time_step as f64) * dt,
        Feature::TimeToGoal => {
            if ctx.reached_goal() {
                0.0
            } else if last.velocity.abs() <= ZERO_VELOCITY_TOL {
                DIVISION_GUARD
            } else {
                distance_to_goal(last, goal) / last.velocity
            }
        }
        Feature::AccelerationCost => squared_rate_integral(seg.iter().map(|s| s.velocity), dt),
        Feature::PathEfficiency => {
            let elapsed = (seg.len() - 1) as f64 * dt;
            if elapsed < DIVISION_EPS {
                DIVISION_GUARD
            } else {
                let travelled: f64 = seg.windows(2).map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y)).sum();
                travelled / elapsed
            }
        }
        Feature::SteeringAngleCost => seg.iter().map(|s| s.steering_angle * s.steering_angle * dt).sum(),
        Feature::SteeringVelocityCost => squared_rate_integral(seg.iter().map(|s| s.steering_angle), dt),
    };
    saturate(value)
}

fn eval(e: &Expr, ctx: &NodeContext<'_>) -> f64 {
    let v = match e {
        Expr::Constant(v) => *v,
        Expr::Feature(f) => feature_value(*f, ctx),
        Expr::Binary { op, lhs, rhs } => {
            let (a, b) = (eval(lhs, ctx), eval(rhs, ctx));
            match op {
                BinaryOp::Add => a + b,
                BinaryOp::Sub => a - b,
                BinaryOp::Mul => a * b,
                BinaryOp::Div => {
                    if b.abs() < DIVISION_EPS {
                        DIVISION_GUARD
                    } else {
                        a / b
                    }
                }
                BinaryOp::Min => a.min(b),
                BinaryOp::Max => a.max(b),
            }
        }
        Expr::Branch { cond, then, otherwise } => {
            let taken = match cond {
                Condition::ReachedGoal => ctx.reached_goal(),
                Condition::ZeroVelocity => ctx.last().velocity.abs() <= ZERO_VELOCITY_TOL,
            };
            if taken {
                eval(then, ctx)
            } else {
                eval(otherwise, ctx)
            }
        }
    };
    saturate(v)
}

/// Evaluates without the final clamp at zero.
pub fn evaluate_unclamped(spec: &HeuristicSpec, ctx: &NodeContext<'_>) -> f64 {
    eval(&spec.root, ctx)
}

/// Heuristic value of a node: finite and non-negative.
pub fn evaluate_heuristic(spec: &HeuristicSpec, ctx: &NodeContext<'_>) -> f64 {
    evaluate_unclamped(spec, ctx).max(0.0)
}
