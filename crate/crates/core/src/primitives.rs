//! Motion primitives: the primitive-set naming grammar, offline generation by
//! forward simulation of a kinematic single-track model, and the lattice
//! connectivity used during search.
//!
//! A primitive-set ID has the form
//! `V_{vmin}_{vmax}_Vstep_{dv}_SA_{samin}_{samax}_SAstep_{dsa}_T_{tau}_Model_{m}`.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{wrap_angle, VehicleState};

/// Tolerance for grid-aligned comparisons of velocities and steering angles.
pub const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrimitiveError {
    #[error("malformed primitive ID at token '{token}': {reason}")]
    MalformedId { token: String, reason: String },
    #[error("primitive set {0} has an empty sample grid")]
    EmptyPrimitiveSet(String),
    #[error("primitive duration {duration} s is not an integer multiple of dt = {dt} s")]
    DurationNotMultiple { duration: f64, dt: f64 },
    #[error("primitive set {0} samples negative velocities")]
    NegativeVelocity(String),
    #[error("unknown vehicle model '{0}'")]
    UnknownModel(String),
    #[error(
        "primitive starting at v = {p_velocity}, delta = {p_steering} cannot continue from v = {anchor_velocity}, delta = {anchor_steering}"
    )]
    Connectivity {
        p_velocity: f64,
        p_steering: f64,
        anchor_velocity: f64,
        anchor_steering: f64,
    },
    #[error("primitive cache {path}: {reason}")]
    Cache { path: String, reason: String },
}

/// A decimal field of a primitive ID that remembers how it was written, so
/// that formatting a parsed ID reproduces the original text.
#[derive(Debug, Clone)]
pub struct IdNumber {
    value: f64,
    text: String,
}

impl IdNumber {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    fn parse(token: &str) -> Result<Self, PrimitiveError> {
        let malformed = |reason: &str| PrimitiveError::MalformedId {
            token: token.to_string(),
            reason: reason.to_string(),
        };
        let digits = token.strip_prefix('-').unwrap_or(token);
        let (int, frac) = match digits.split_once('.') {
            Some((i, f)) => (i, Some(f)),
            None => (digits, None),
        };
        let all_digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
        if !all_digits(int) || frac.is_some_and(|f| !all_digits(f)) {
            return Err(malformed("expected a decimal number"));
        }
        let value: f64 = token.parse().map_err(|_| malformed("expected a decimal number"))?;
        Ok(Self {
            value,
            text: token.to_string(),
        })
    }
}

impl From<f64> for IdNumber {
    fn from(value: f64) -> Self {
        // `{:?}` always keeps a fractional part ("20.0"), matching the
        // conventional rendering of primitive IDs.
        Self {
            value,
            text: format!("{value:?}"),
        }
    }
}

impl PartialEq for IdNumber {
    fn eq(&self, other: &Self) -> bool {
        self.value == other.value
    }
}

/// Parsed fields of a primitive-set ID.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveSetId {
    pub v_min: IdNumber,
    pub v_max: IdNumber,
    pub v_step: IdNumber,
    pub sa_min: IdNumber,
    pub sa_max: IdNumber,
    pub sa_step: IdNumber,
    pub duration: IdNumber,
    pub model: String,
}

impl PrimitiveSetId {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        v_min: f64,
        v_max: f64,
        v_step: f64,
        sa_min: f64,
        sa_max: f64,
        sa_step: f64,
        duration: f64,
        model: impl Into<String>,
    ) -> Result<Self, PrimitiveError> {
        let id = Self {
            v_min: v_min.into(),
            v_max: v_max.into(),
            v_step: v_step.into(),
            sa_min: sa_min.into(),
            sa_max: sa_max.into(),
            sa_step: sa_step.into(),
            duration: duration.into(),
            model: model.into(),
        };
        id.validate()?;
        Ok(id)
    }

    fn validate(&self) -> Result<(), PrimitiveError> {
        let check = |ok: bool, token: &IdNumber, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(PrimitiveError::MalformedId {
                    token: token.text.clone(),
                    reason: reason.to_string(),
                })
            }
        };
        let finite = [
            &self.v_min,
            &self.v_max,
            &self.v_step,
            &self.sa_min,
            &self.sa_max,
            &self.sa_step,
            &self.duration,
        ];
        for n in finite {
            check(n.value.is_finite(), n, "value must be finite")?;
        }
        check(self.v_min.value <= self.v_max.value, &self.v_min, "v_min exceeds v_max")?;
        check(self.sa_min.value <= self.sa_max.value, &self.sa_min, "sa_min exceeds sa_max")?;
        check(self.v_step.value > 0.0, &self.v_step, "velocity step must be positive")?;
        check(self.sa_step.value > 0.0, &self.sa_step, "steering step must be positive")?;
        check(self.duration.value > 0.0, &self.duration, "duration must be positive")?;
        if self.model.is_empty() || self.model.chars().any(char::is_whitespace) {
            return Err(PrimitiveError::MalformedId {
                token: self.model.clone(),
                reason: "model identifier must be non-empty without whitespace".into(),
            });
        }
        Ok(())
    }

    /// Velocity samples `v_min + i * v_step` not exceeding `v_max`.
    pub fn velocity_samples(&self) -> Vec<f64> {
        grid(self.v_min.value, self.v_max.value, self.v_step.value)
    }

    /// Steering samples `sa_min + i * sa_step` not exceeding `sa_max`.
    pub fn steering_samples(&self) -> Vec<f64> {
        grid(self.sa_min.value, self.sa_max.value, self.sa_step.value)
    }
}

/// `max(1, floor(range / step) + 1)` samples spaced exactly `step` apart.
fn grid(min: f64, max: f64, step: f64) -> Vec<f64> {
    let n = ((max - min) / step + GRID_TOL).floor().max(0.0) as usize + 1;
    (0..n).map(|i| min + i as f64 * step).collect()
}

pub fn parse_primitive_id(text: &str) -> Result<PrimitiveSetId, PrimitiveError> {
    let (head, model) = text.split_once("_Model_").ok_or_else(|| PrimitiveError::MalformedId {
        token: text.to_string(),
        reason: "missing '_Model_' section".into(),
    })?;
    let tokens: Vec<&str> = head.split('_').collect();
    const KEYWORDS: [(usize, &str); 5] = [(0, "V"), (3, "Vstep"), (5, "SA"), (8, "SAstep"), (10, "T")];
    if tokens.len() != 12 {
        return Err(PrimitiveError::MalformedId {
            token: head.to_string(),
            reason: format!("expected 12 fields before Model, found {}", tokens.len()),
        });
    }
    for (pos, kw) in KEYWORDS {
        if tokens[pos] != kw {
            return Err(PrimitiveError::MalformedId {
                token: tokens[pos].to_string(),
                reason: format!("expected keyword '{kw}'"),
            });
        }
    }
    let num = |i: usize| IdNumber::parse(tokens[i]);
    let id = PrimitiveSetId {
        v_min: num(1)?,
        v_max: num(2)?,
        v_step: num(4)?,
        sa_min: num(6)?,
        sa_max: num(7)?,
        sa_step: num(9)?,
        duration: num(11)?,
        model: model.to_string(),
    };
    id.validate()?;
    Ok(id)
}

pub fn format_primitive_id(id: &PrimitiveSetId) -> String {
    format!(
        "V_{}_{}_Vstep_{}_SA_{}_{}_SAstep_{}_T_{}_Model_{}",
        id.v_min.text,
        id.v_max.text,
        id.v_step.text,
        id.sa_min.text,
        id.sa_max.text,
        id.sa_step.text,
        id.duration.text,
        id.model
    )
}

impl fmt::Display for PrimitiveSetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_primitive_id(self))
    }
}

impl FromStr for PrimitiveSetId {
    type Err = PrimitiveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_primitive_id(s)
    }
}

/// Geometry and input bounds of the simulated vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleModelParams {
    pub wheelbase: f64,
    pub length: f64,
    pub width: f64,
    pub a_max: f64,
    pub steer_rate_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_switch: Option<f64>,
}

impl VehicleModelParams {
    pub fn bmw_320i() -> Self {
        Self {
            wheelbase: 2.578,
            length: 4.508,
            width: 1.610,
            a_max: 11.5,
            steer_rate_max: 0.4,
            v_switch: None,
        }
    }

    /// Built-in parameters for a model identifier, if known.
    pub fn for_model(model: &str) -> Option<Self> {
        match model {
            "BMW_320i" => Some(Self::bmw_320i()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionPrimitive {
    /// States in the canonical frame, starting at the origin with heading 0.
    pub states: Vec<VehicleState>,
    pub v_start: f64,
    pub v_end: f64,
    pub sa_start: f64,
    pub sa_end: f64,
    pub accel: f64,
    pub steer_rate: f64,
}

impl MotionPrimitive {
    pub fn duration(&self, dt: f64) -> f64 {
        (self.states.len() - 1) as f64 * dt
    }
}

/// Forward-simulates the kinematic single-track model with constant inputs
/// using explicit Euler at step `dt`.
pub fn simulate_primitive(
    v_start: f64,
    v_end: f64,
    sa_start: f64,
    sa_end: f64,
    steps: usize,
    dt: f64,
    wheelbase: f64,
) -> MotionPrimitive {
    let tau = steps as f64 * dt;
    let accel = (v_end - v_start) / tau;
    let steer_rate = (sa_end - sa_start) / tau;
    let mut states = Vec::with_capacity(steps + 1);
    let (mut x, mut y, mut theta) = (0.0_f64, 0.0_f64, 0.0_f64);
    states.push(VehicleState::new(0.0, 0.0, 0.0, v_start, sa_start, 0));
    for k in 0..steps {
        let v = v_start + accel * k as f64 * dt;
        let delta = sa_start + steer_rate * k as f64 * dt;
        x += v * theta.cos() * dt;
        y += v * theta.sin() * dt;
        theta += v * delta.tan() / wheelbase * dt;
        let (v_next, delta_next) = if k + 1 == steps {
            (v_end, sa_end)
        } else {
            (
                v_start + accel * (k + 1) as f64 * dt,
                sa_start + steer_rate * (k + 1) as f64 * dt,
            )
        };
        states.push(VehicleState::new(x, y, wrap_angle(theta), v_next.max(0.0), delta_next, (k + 1) as u32));
    }
    MotionPrimitive {
        states,
        v_start,
        v_end,
        sa_start,
        sa_end,
        accel,
        steer_rate,
    }
}

/// Lattice connectivity: velocity and steering angle must match exactly.
pub fn connectable(a: &MotionPrimitive, b: &MotionPrimitive) -> bool {
    (a.v_end - b.v_start).abs() <= GRID_TOL && (a.sa_end - b.sa_start).abs() <= GRID_TOL
}

/// Places a canonical primitive at `anchor`: rotate by the anchor heading,
/// translate to the anchor position and continue its time steps. The first
/// returned state coincides with the anchor pose.
pub fn transform_primitive(p: &MotionPrimitive, anchor: &VehicleState) -> Result<Vec<VehicleState>, PrimitiveError> {
    if (anchor.velocity - p.v_start).abs() > GRID_TOL || (anchor.steering_angle - p.sa_start).abs() > GRID_TOL {
        return Err(PrimitiveError::Connectivity {
            p_velocity: p.v_start,
            p_steering: p.sa_start,
            anchor_velocity: anchor.velocity,
            anchor_steering: anchor.steering_angle,
        });
    }
    let (sin, cos) = anchor.orientation.sin_cos();
    Ok(p
        .states
        .iter()
        .map(|s| VehicleState {
            x: anchor.x + cos * s.x - sin * s.y,
            y: anchor.y + sin * s.x + cos * s.y,
            orientation: wrap_angle(anchor.orientation + s.orientation),
            velocity: s.velocity,
            steering_angle: s.steering_angle,
            time_step: anchor.time_step + s.time_step,
        })
        .collect())
}

/// All primitives of one ID with their precomputed successor lists.
#[derive(Debug, Clone)]
pub struct PrimitiveSet {
    pub id: PrimitiveSetId,
    pub dt: f64,
    pub primitives: Vec<MotionPrimitive>,
    /// `successor_index[i]` lists the primitives connectable after primitive `i`.
    pub successor_index: Vec<Vec<usize>>,
    velocities: Vec<f64>,
    steerings: Vec<f64>,
    by_start: HashMap<(usize, usize), Vec<usize>>,
}

impl PrimitiveSet {
    fn from_primitives(id: PrimitiveSetId, dt: f64, primitives: Vec<MotionPrimitive>) -> Self {
        let velocities = id.velocity_samples();
        let steerings = id.steering_samples();
        let mut by_start: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (i, p) in primitives.iter().enumerate() {
            if let (Some(vi), Some(si)) = (
                sample_index(&velocities, p.v_start, GRID_TOL),
                sample_index(&steerings, p.sa_start, GRID_TOL),
            ) {
                by_start.entry((vi, si)).or_default().push(i);
            }
        }
        let successor_index = primitives
            .iter()
            .map(|p| {
                match (
                    sample_index(&velocities, p.v_end, GRID_TOL),
                    sample_index(&steerings, p.sa_end, GRID_TOL),
                ) {
                    (Some(vi), Some(si)) => by_start.get(&(vi, si)).cloned().unwrap_or_default(),
                    _ => Vec::new(),
                }
            })
            .collect();
        Self {
            id,
            dt,
            primitives,
            successor_index,
            velocities,
            steerings,
            by_start,
        }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn velocity_samples(&self) -> &[f64] {
        &self.velocities
    }

    pub fn steering_samples(&self) -> &[f64] {
        &self.steerings
    }

    pub fn velocity_index(&self, v: f64, tol: f64) -> Option<usize> {
        sample_index(&self.velocities, v, tol)
    }

    pub fn steering_index(&self, sa: f64, tol: f64) -> Option<usize> {
        sample_index(&self.steerings, sa, tol)
    }

    /// Primitives whose start sample is `(velocity index, steering index)`.
    pub fn starting_at(&self, v_idx: usize, sa_idx: usize) -> &[usize] {
        self.by_start.get(&(v_idx, sa_idx)).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Index of the sample nearest to `value` if it lies within `tol`.
fn sample_index(samples: &[f64], value: f64, tol: f64) -> Option<usize> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| (i, (s - value).abs()))
        .filter(|(_, d)| *d <= tol)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

pub fn generate_primitive_set(
    id: &PrimitiveSetId,
    model: &VehicleModelParams,
    dt: f64,
) -> Result<PrimitiveSet, PrimitiveError> {
    let tau = id.duration.value;
    let steps = (tau / dt).round();
    if steps < 1.0 || (steps * dt - tau).abs() > GRID_TOL {
        return Err(PrimitiveError::DurationNotMultiple { duration: tau, dt });
    }
    let steps = steps as usize;
    let velocities = id.velocity_samples();
    let steerings = id.steering_samples();
    if velocities.iter().any(|&v| v < 0.0) {
        return Err(PrimitiveError::NegativeVelocity(id.to_string()));
    }
    let (dv, dsa) = (id.v_step.value, id.sa_step.value);
    let mut primitives = Vec::new();
    for &v_s in &velocities {
        for &sa_s in &steerings {
            for &v_e in velocities.iter().filter(|&&v| (v - v_s).abs() <= dv + GRID_TOL) {
                for &sa_e in steerings.iter().filter(|&&s| (s - sa_s).abs() <= dsa + GRID_TOL) {
                    let accel = (v_e - v_s) / tau;
                    let rate = (sa_e - sa_s) / tau;
                    if accel.abs() > model.a_max + GRID_TOL || rate.abs() > model.steer_rate_max + GRID_TOL {
                        continue;
                    }
                    primitives.push(simulate_primitive(v_s, v_e, sa_s, sa_e, steps, dt, model.wheelbase));
                }
            }
        }
    }
    if primitives.is_empty() {
        return Err(PrimitiveError::EmptyPrimitiveSet(id.to_string()));
    }
    Ok(PrimitiveSet::from_primitives(id.clone(), dt, primitives))
}

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    id: String,
    dt: f64,
    count: usize,
}

/// Writes a primitive set as JSON lines: a header followed by one primitive
/// per line.
pub fn save_primitive_cache(set: &PrimitiveSet, path: impl AsRef<Path>) -> Result<(), PrimitiveError> {
    let path = path.as_ref();
    let cache_err = |e: &dyn fmt::Display| PrimitiveError::Cache {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    let file = std::fs::File::create(path).map_err(|e| cache_err(&e))?;
    let mut out = BufWriter::new(file);
    let header = CacheHeader {
        id: set.id.to_string(),
        dt: set.dt,
        count: set.primitives.len(),
    };
    let mut lines = vec![serde_json::to_string(&header).map_err(|e| cache_err(&e))?];
    for p in &set.primitives {
        lines.push(serde_json::to_string(p).map_err(|e| cache_err(&e))?);
    }
    for line in lines {
        writeln!(out, "{line}").map_err(|e| cache_err(&e))?;
    }
    out.flush().map_err(|e| cache_err(&e))
}

pub fn load_primitive_cache(path: impl AsRef<Path>) -> Result<PrimitiveSet, PrimitiveError> {
    let path = path.as_ref();
    let cache_err = |reason: String| PrimitiveError::Cache {
        path: path.display().to_string(),
        reason,
    };
    let file = std::fs::File::open(path).map_err(|e| cache_err(e.to_string()))?;
    let mut lines = BufReader::new(file).lines();
    let header: CacheHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line.map_err(|e| cache_err(e.to_string()))?)
            .map_err(|e| cache_err(e.to_string()))?,
        None => return Err(cache_err("empty file".into())),
    };
    let id = parse_primitive_id(&header.id)?;
    let mut primitives = Vec::with_capacity(header.count);
    for line in lines {
        let line = line.map_err(|e| cache_err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        primitives.push(serde_json::from_str(&line).map_err(|e| cache_err(e.to_string()))?);
    }
    if primitives.len() != header.count {
        return Err(cache_err(format!(
            "header announces {} primitives, found {}",
            header.count,
            primitives.len()
        )));
    }
    Ok(PrimitiveSet::from_primitives(id, header.dt, primitives))
}

/// Shared, lazily populated store of primitive sets keyed by ID and `dt`.
#[derive(Debug, Default)]
pub struct PrimitiveLibrary {
    cache_dir: Option<PathBuf>,
    sets: Mutex<HashMap<(String, u64), Arc<PrimitiveSet>>>,
}

impl PrimitiveLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Persist generated sets under `dir`, reusing files found there.
    pub fn with_cache_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            cache_dir: Some(dir.into()),
            sets: Mutex::default(),
        }
    }

    pub fn get(&self, id: &PrimitiveSetId, dt: f64) -> Result<Arc<PrimitiveSet>, PrimitiveError> {
        let key = (id.to_string(), dt.to_bits());
        if let Some(set) = self.sets.lock().expect("primitive library poisoned").get(&key) {
            return Ok(Arc::clone(set));
        }
        let model = VehicleModelParams::for_model(&id.model).ok_or_else(|| PrimitiveError::UnknownModel(id.model.clone()))?;
        let set = Arc::new(self.load_or_generate(id, &model, dt)?);
        self.sets
            .lock()
            .expect("primitive library poisoned")
            .insert(key, Arc::clone(&set));
        Ok(set)
    }

    fn load_or_generate(
        &self,
        id: &PrimitiveSetId,
        model: &VehicleModelParams,
        dt: f64,
    ) -> Result<PrimitiveSet, PrimitiveError> {
        let Some(dir) = &self.cache_dir else {
            return generate_primitive_set(id, model, dt);
        };
        let path = dir.join(format!("{id}__dt_{dt}.jsonl"));
        if path.exists() {
            if let Ok(set) = load_primitive_cache(&path) {
                if set.id == *id && set.dt == dt {
                    return Ok(set);
                }
            }
        }
        let set = generate_primitive_set(id, model, dt)?;
        save_primitive_cache(&set, &path)?;
        Ok(set)
    }
}
