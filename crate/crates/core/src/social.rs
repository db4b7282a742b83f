//! Social-energy fields and the interaction predictor.
//!
//! Each agent gets its own scalar field on a fine grid, built from three
//! linear-cone kernels:
//!
//! * destination: a well (amplitude -1, radius `r_d`) at each of the agent's
//!   own preliminary points,
//! * interplay: a cone (amplitude -1, radius `r_i`) at each neighbour point,
//!   weighted by direction agreement and speed ratio, so oncoming neighbours
//!   repel and companions attract,
//! * etiquette: a bump (amplitude +1, radius `r_s`) at each neighbour point.
//!
//! The discriminant is the field summed along a path. Refinement moves every
//! point against the field gradient until the discriminant stops changing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gmap::{GridSpec, MapError, Raster};
use crate::ingest::TrajPoint;

#[derive(Debug, Error)]
pub enum SocialError {
    #[error("agent {0} has an empty preliminary prediction")]
    EmptyPrediction(i64),
    #[error("invalid social parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Grid(#[from] MapError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SocialParams {
    pub lambda_d: f64,
    pub lambda_i: f64,
    pub lambda_s: f64,
    pub r_d: f64,
    pub r_i: f64,
    pub r_s: f64,
    /// Step size of each refinement update.
    pub theta: f64,
    pub epsilon: f64,
    pub k_max: usize,
    /// Field grid resolution in metres per cell.
    pub resolution: f64,
    /// Upper bound of the speed ratio.
    pub v_cap: f64,
}

impl Default for SocialParams {
    fn default() -> Self {
        Self {
            lambda_d: 1.0,
            lambda_i: 1.0,
            lambda_s: 0.2,
            r_d: 2.0,
            r_i: 1.5,
            r_s: 0.1,
            theta: 0.001,
            epsilon: 1e-6,
            k_max: 10,
            resolution: 0.1,
            v_cap: 10.0,
        }
    }
}

impl SocialParams {
    pub fn validate(&self) -> Result<(), SocialError> {
        let bad = |m: &str| Err(SocialError::InvalidParams(m.to_string()));
        if !(self.r_d > 0.0 && self.r_i > 0.0 && self.r_s > 0.0) {
            return bad("radii must be positive");
        }
        if !(self.theta > 0.0) {
            return bad("theta must be positive");
        }
        if self.k_max < 1 {
            return bad("k_max must be >= 1");
        }
        if !(self.resolution > 0.0) {
            return bad("resolution must be positive");
        }
        if !(self.epsilon >= 0.0) {
            return bad("epsilon must be non-negative");
        }
        if !(self.v_cap >= 0.0) {
            return bad("v_cap must be non-negative");
        }
        Ok(())
    }

    pub fn max_radius(&self) -> f64 {
        self.r_d.max(self.r_i).max(self.r_s)
    }
}

/// Linear cone: `a - (a / r) * |p - p_o|` inside radius `r`, zero outside.
pub fn kernel(p: TrajPoint, p_o: TrajPoint, r: f64, a: f64) -> f64 {
    let d = p.dist(p_o);
    if d <= r {
        a - a / r * d
    } else {
        0.0
    }
}

/// Below this displacement norm an agent counts as stationary.
pub const STATIONARY_EPS: f64 = 1e-9;

/// Observed displacement `p[first] - p[last]` of an observation window.
pub fn observed_displacement(observed: &[TrajPoint]) -> TrajPoint {
    match (observed.first(), observed.last()) {
        (Some(&a), Some(&b)) => a - b,
        _ => TrajPoint::default(),
    }
}

/// Cosine between the two displacement vectors. Zero when either agent is
/// stationary.
pub fn direction_weight(disp_i: TrajPoint, disp_j: TrajPoint) -> f64 {
    let (ni, nj) = (disp_i.norm(), disp_j.norm());
    if ni < STATIONARY_EPS || nj < STATIONARY_EPS {
        return 0.0;
    }
    ((disp_i.x * disp_j.x + disp_i.y * disp_j.y) / (ni * nj)).clamp(-1.0, 1.0)
}

/// `|disp_j| / |disp_i|`, clamped to `[0, v_cap]`. A stationary agent `i`
/// gets `v_cap`.
pub fn velocity_ratio(disp_i: TrajPoint, disp_j: TrajPoint, v_cap: f64) -> f64 {
    let ni = disp_i.norm();
    if ni < STATIONARY_EPS {
        return v_cap;
    }
    (disp_j.norm() / ni).clamp(0.0, v_cap)
}

/// An agent as seen by the social module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub agent_id: i64,
    /// `p[T0] - p[T1 - 1]` over the observation.
    pub displacement: TrajPoint,
    /// Preliminary prediction.
    pub prediction: Vec<TrajPoint>,
}

/// The other agents of one prediction period, excluding the owner.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NeighborSet {
    pub agents: Vec<AgentState>,
}

impl NeighborSet {
    pub fn excluding(all: &[AgentState], owner: i64) -> Self {
        Self {
            agents: all.iter().filter(|a| a.agent_id != owner).cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyField {
    pub owner: i64,
    pub spec: GridSpec,
    /// Weighted total, row-major, sampled at cell centres.
    pub values: Vec<f64>,
    /// Unweighted component sums.
    pub destination: Vec<f64>,
    pub interplay: Vec<f64>,
    pub etiquette: Vec<f64>,
}

/// One kernel source: location, radius and amplitude (weights folded in).
#[derive(Debug, Clone, Copy)]
struct Source {
    at: TrajPoint,
    radius: f64,
    amplitude: f64,
}

fn stamp(spec: &GridSpec, grid: &mut [f64], s: Source) {
    if s.amplitude == 0.0 {
        return;
    }
    let res = spec.resolution;
    let lo_r = (((s.at.x - s.radius - spec.origin.x) / res).floor() as i64).max(0);
    let hi_r = (((s.at.x + s.radius - spec.origin.x) / res).ceil() as i64).min(spec.height as i64 - 1);
    let lo_c = (((s.at.y - s.radius - spec.origin.y) / res).floor() as i64).max(0);
    let hi_c = (((s.at.y + s.radius - spec.origin.y) / res).ceil() as i64).min(spec.width as i64 - 1);
    for r in lo_r..=hi_r {
        for c in lo_c..=hi_c {
            let p = spec.cell_center(r as usize, c as usize);
            let v = kernel(p, s.at, s.radius, s.amplitude);
            if v != 0.0 {
                grid[r as usize * spec.width + c as usize] += v;
            }
        }
    }
}

/// Grid spanning every involved predicted point, padded by the largest
/// radius plus two cells for the gradient stencil.
pub fn field_spec(agent: &AgentState, neighbors: &NeighborSet, params: &SocialParams) -> Result<GridSpec, SocialError> {
    let mut lo = TrajPoint::new(f64::INFINITY, f64::INFINITY);
    let mut hi = TrajPoint::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    let pts = agent
        .prediction
        .iter()
        .chain(neighbors.agents.iter().flat_map(|a| a.prediction.iter()));
    for p in pts {
        lo = TrajPoint::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = TrajPoint::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    if !lo.x.is_finite() {
        return Err(SocialError::EmptyPrediction(agent.agent_id));
    }
    let pad = params.max_radius() + 2.0 * params.resolution;
    Ok(GridSpec::covering(lo, hi, params.resolution, pad)?)
}

pub fn build_energy_field(
    agent: &AgentState,
    neighbors: &NeighborSet,
    params: &SocialParams,
    spec: &GridSpec,
) -> Result<EnergyField, SocialError> {
    if agent.prediction.is_empty() {
        return Err(SocialError::EmptyPrediction(agent.agent_id));
    }
    let n = spec.len();
    let mut destination = vec![0.0; n];
    let mut interplay = vec![0.0; n];
    let mut etiquette = vec![0.0; n];
    for &p in &agent.prediction {
        stamp(spec, &mut destination, Source { at: p, radius: params.r_d, amplitude: -1.0 });
    }
    for other in neighbors.agents.iter().filter(|a| a.agent_id != agent.agent_id) {
        let weight = direction_weight(agent.displacement, other.displacement)
            * velocity_ratio(agent.displacement, other.displacement, params.v_cap);
        for &p in &other.prediction {
            stamp(spec, &mut interplay, Source { at: p, radius: params.r_i, amplitude: -weight });
            stamp(spec, &mut etiquette, Source { at: p, radius: params.r_s, amplitude: 1.0 });
        }
    }
    let values = (0..n)
        .map(|i| params.lambda_d * destination[i] + params.lambda_i * interplay[i] + params.lambda_s * etiquette[i])
        .collect();
    Ok(EnergyField {
        owner: agent.agent_id,
        spec: *spec,
        values,
        destination,
        interplay,
        etiquette,
    })
}

impl EnergyField {
    /// Bilinear interpolation between cell centres. `None` outside the hull
    /// of cell centres.
    pub fn sample(&self, p: TrajPoint) -> Option<f64> {
        let s = &self.spec;
        let u = (p.x - s.origin.x) / s.resolution - 0.5;
        let v = (p.y - s.origin.y) / s.resolution - 0.5;
        let max_u = (s.height - 1) as f64;
        let max_v = (s.width - 1) as f64;
        if !(u >= 0.0 && v >= 0.0 && u <= max_u && v <= max_v) {
            return None;
        }
        let r0 = (u.floor() as usize).min(s.height.saturating_sub(2));
        let c0 = (v.floor() as usize).min(s.width.saturating_sub(2));
        let (fu, fv) = (u - r0 as f64, v - c0 as f64);
        let at = |r: usize, c: usize| self.values[r.min(s.height - 1) * s.width + c.min(s.width - 1)];
        Some(
            at(r0, c0) * (1.0 - fu) * (1.0 - fv)
                + at(r0 + 1, c0) * fu * (1.0 - fv)
                + at(r0, c0 + 1) * (1.0 - fu) * fv
                + at(r0 + 1, c0 + 1) * fu * fv,
        )
    }

    /// Central-difference gradient with one-cell step over the interpolated
    /// field; samples outside the grid read as zero.
    pub fn gradient(&self, p: TrajPoint) -> TrajPoint {
        let h = self.spec.resolution;
        let e = |q: TrajPoint| self.sample(q).unwrap_or(0.0);
        TrajPoint::new(
            (e(p + TrajPoint::new(h, 0.0)) - e(p - TrajPoint::new(h, 0.0))) / (2.0 * h),
            (e(p + TrajPoint::new(0.0, h)) - e(p - TrajPoint::new(0.0, h))) / (2.0 * h),
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

impl Raster for EnergyField {
    fn dims(&self) -> (usize, usize) {
        (self.spec.height, self.spec.width)
    }
    fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.spec.width + col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Discriminant {
    pub value: f64,
    /// Points that fell outside the field and counted as zero.
    pub outside: usize,
}

pub fn discriminant(field: &EnergyField, prediction: &[TrajPoint]) -> Discriminant {
    let mut d = Discriminant::default();
    for &p in prediction {
        match field.sample(p) {
            Some(v) => d.value += v,
            None => d.outside += 1,
        }
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub points: Vec<TrajPoint>,
    /// Number of updates accepted into `points`.
    pub updates: usize,
    /// Order at which the loop stopped.
    pub order: usize,
    /// Discriminant before any update, then after each accepted update.
    pub history: Vec<f64>,
    pub converged: bool,
}

/// Repeated gradient steps `p <- p - theta * grad E(p)` on every point.
///
/// At order `k` the `k`-th update is computed and compared with the previous
/// path. If the discriminant moved by at most `epsilon` the loop stops and
/// keeps the previous path (the steady one); otherwise the update is
/// accepted. After `k_max` accepted updates the loop stops regardless.
pub fn refine(prediction: &[TrajPoint], field: &EnergyField, params: &SocialParams) -> Refinement {
    let mut points = prediction.to_vec();
    let mut d_prev = discriminant(field, &points).value;
    let mut history = vec![d_prev];
    for k in 1..=params.k_max {
        let next: Vec<TrajPoint> = points
            .iter()
            .map(|&p| p - field.gradient(p) * params.theta)
            .collect();
        let d_next = discriminant(field, &next).value;
        if (d_next - d_prev).abs() <= params.epsilon {
            return Refinement {
                points,
                updates: k - 1,
                order: k,
                history,
                converged: true,
            };
        }
        points = next;
        d_prev = d_next;
        history.push(d_next);
    }
    Refinement {
        points,
        updates: params.k_max,
        order: params.k_max,
        history,
        converged: false,
    }
}

/// Builds each agent's field against everyone else's preliminary prediction
/// and refines it. Agents are independent, and the output keeps input order.
pub fn refine_group(agents: &[AgentState], params: &SocialParams) -> Result<Vec<Refinement>, SocialError> {
    use rayon::prelude::*;
    agents
        .par_iter()
        .map(|agent| {
            let neighbors = NeighborSet::excluding(agents, agent.agent_id);
            let spec = field_spec(agent, &neighbors, params)?;
            let field = build_energy_field(agent, &neighbors, params, &spec)?;
            Ok(refine(&agent.prediction, &field, params))
        })
        .collect()
}
