//! Gaussian travel-time model and maximum-likelihood inference of the
//! unobserved per-segment travel times of a trajectory.
//!
//! Every segment `s_i` has a travel-time prior `N(phi_i, omega_i^2)`.
//! Consecutive segments are coupled by a smoothness term on their per-meter
//! rates, `t_i/|s_i| - t_{i-1}/|s_{i-1}| ~ N(0, delta^2)`, and every run of
//! segments between two observed timestamps (a GPS block) must sum to the
//! observed gap up to `N(0, sigma_j^2)`. Maximizing the joint likelihood over
//! `t >= 0` is the quadratic program built by [`build_qp`].
//!
//! # Time convention
//!
//! A timestamp is the time an object leaves its segment. Unless an explicit
//! start is given, a trajectory starts at its first observed timestamp, so
//! the unknowns are the travel times of segments `2..m`.
//!
//! # Model file
//!
//! ```text
//! delta,<seconds per meter>
//! sigma_star,<meters>
//! segment_name,phi_seconds,omega_seconds
//! ...
//! ```

mod linalg;
mod solver;

use thiserror::Error;

use crate::roadnet::{RoadNetwork, SegmentId};
use crate::trajmodel::Trajectory;

pub use linalg::{Cholesky, DenseMatrix};
pub use solver::{kkt_residual, QpMethod};

pub const DEFAULT_OMEGA_FLOOR: f64 = 1e-3;
/// KKT tolerance relative to the largest linear coefficient of an instance.
pub const DEFAULT_RELATIVE_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TtError {
    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },
    #[error("QP needs at least one GPS block")]
    NoBlocks,
    #[error("GPS block {0} has no segments")]
    EmptyBlock(usize),
    #[error("invalid travel-time model: {0}")]
    InvalidModel(String),
    #[error("segment {0} is not in the model")]
    UnknownSegment(SegmentId),
    #[error("trajectory has no observed timestamp at its {0} update")]
    MissingEndpoint(&'static str),
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("Q is not positive definite")]
    NotPositiveDefinite,
    #[error("QP did not converge: KKT residual {residual} above {tol}")]
    NoConvergence { best: Vec<f64>, residual: f64, tol: f64 },
    #[error("model file line {line}: {msg}")]
    Format { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TravelTimeModel {
    pub phi: Vec<f64>,
    pub omega: Vec<f64>,
    pub delta: f64,
    pub sigma_star: f64,
}

impl TravelTimeModel {
    pub fn new(phi: Vec<f64>, omega: Vec<f64>, delta: f64, sigma_star: f64) -> Result<Self, TtError> {
        let model = TravelTimeModel { phi, omega, delta, sigma_star };
        model.validate()?;
        Ok(model)
    }

    /// `phi_i = length_i / speed`, `omega_i = omega_fraction * phi_i`.
    pub fn from_speed(
        net: &RoadNetwork,
        speed: f64,
        omega_fraction: f64,
        delta: f64,
        sigma_star: f64,
    ) -> Result<Self, TtError> {
        positive("speed", speed)?;
        positive("omega_fraction", omega_fraction)?;
        let phi: Vec<f64> = net.lengths().iter().map(|l| l / speed).collect();
        let omega = phi.iter().map(|p| p * omega_fraction).collect();
        Self::new(phi, omega, delta, sigma_star)
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn validate(&self) -> Result<(), TtError> {
        let bad = |msg: String| Err(TtError::InvalidModel(msg));
        if self.phi.len() != self.omega.len() {
            return bad(format!("{} means but {} deviations", self.phi.len(), self.omega.len()));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta = {}", self.delta));
        }
        if !(self.sigma_star > 0.0 && self.sigma_star.is_finite()) {
            return bad(format!("sigma_star = {}", self.sigma_star));
        }
        for (i, (p, w)) in self.phi.iter().zip(&self.omega).enumerate() {
            if !(*p > 0.0 && p.is_finite()) {
                return bad(format!("phi[{i}] = {p}"));
            }
            if !(*w > 0.0 && w.is_finite()) {
                return bad(format!("omega[{i}] = {w}"));
            }
        }
        Ok(())
    }

    pub fn to_text(&self, net: &RoadNetwork) -> String {
        let mut out = format!("delta,{}\nsigma_star,{}\n", self.delta, self.sigma_star);
        for seg in net.segments() {
            let i = seg.id.index();
            out.push_str(&format!("{},{},{}\n", seg.name, self.phi[i], self.omega[i]));
        }
        out
    }

    /// Parses a model file; every network segment must appear exactly once.
    pub fn from_text(source: &str, net: &RoadNetwork) -> Result<Self, TtError> {
        let mut delta = None;
        let mut sigma_star = None;
        let mut phi = vec![f64::NAN; net.len()];
        let mut omega = vec![f64::NAN; net.len()];
        let mut seen = vec![false; net.len()];
        for (idx, raw) in source.lines().enumerate() {
            let line = idx + 1;
            let text = raw.trim();
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = text.split(',').map(str::trim).collect();
            let num = |s: &str| -> Result<f64, TtError> {
                s.parse().map_err(|_| TtError::Format { line, msg: format!("invalid number `{s}`") })
            };
            match fields.as_slice() {
                ["delta", v] => delta = Some(num(v)?),
                ["sigma_star", v] => sigma_star = Some(num(v)?),
                [name, p, w] => {
                    let id = net.id_of(name).ok_or_else(|| TtError::Format {
                        line,
                        msg: format!("unknown segment `{name}`"),
                    })?;
                    if std::mem::replace(&mut seen[id.index()], true) {
                        return Err(TtError::Format { line, msg: format!("duplicate segment `{name}`") });
                    }
                    phi[id.index()] = num(p)?;
                    omega[id.index()] = num(w)?;
                }
                _ => {
                    return Err(TtError::Format { line, msg: format!("unrecognized record `{text}`") })
                }
            }
        }
        let missing = |what: &str| TtError::Format { line: 0, msg: format!("missing `{what}` header") };
        let delta = delta.ok_or_else(|| missing("delta"))?;
        let sigma_star = sigma_star.ok_or_else(|| missing("sigma_star"))?;
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(TtError::Format {
                line: 0,
                msg: format!("segment `{}` has no parameters", net.name(SegmentId(i as u32))),
            });
        }
        Self::new(phi, omega, delta, sigma_star)
    }
}

fn positive(what: &'static str, value: f64) -> Result<f64, TtError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(TtError::NonPositive { what, value })
    }
}

/// Temporal uncertainty of a GPS fix: the spatial error converted to time at
/// the average speed `path_length / elapsed`.
pub fn gps_temporal_error(sigma_star: f64, elapsed: f64, path_length: f64) -> Result<f64, TtError> {
    positive("sigma_star", sigma_star)?;
    positive("elapsed", elapsed)?;
    positive("path_length", path_length)?;
    Ok(sigma_star * elapsed / path_length)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpsBlock {
    pub segments: Vec<SegmentId>,
    pub observed_gap: f64,
    pub sigma_j: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariableRef {
    pub block: usize,
    pub index: usize,
    pub segment: SegmentId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpInstance {
    pub q: DenseMatrix,
    pub c: Vec<f64>,
    pub variable_map: Vec<VariableRef>,
}

impl QpInstance {
    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// `(1/2) x'Qx + c'x`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        solver::objective(&self.q, &self.c, x)
    }

    pub fn kkt_residual(&self, x: &[f64]) -> f64 {
        kkt_residual(&self.q, &self.c, x)
    }

    /// Marginal standard deviations of the unconstrained Gaussian posterior,
    /// `sqrt(diag(Q^-1))`.
    pub fn posterior_std(&self) -> Result<Vec<f64>, TtError> {
        let chol = self.q.cholesky().ok_or(TtError::NotPositiveDefinite)?;
        let n = self.dim();
        Ok((0..n)
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                chol.solve(&e)[i].sqrt()
            })
            .collect())
    }
}

/// Builds `Q` and `c` such that `(1/2) x'Qx + c'x` equals the negative
/// log-likelihood of travel times `x` up to an additive constant.
pub fn build_qp(model: &TravelTimeModel, blocks: &[GpsBlock], lengths: &[f64]) -> Result<QpInstance, TtError> {
    model.validate()?;
    if blocks.is_empty() {
        return Err(TtError::NoBlocks);
    }
    let mut variable_map = Vec::new();
    for (j, b) in blocks.iter().enumerate() {
        if b.segments.is_empty() {
            return Err(TtError::EmptyBlock(j));
        }
        positive("observed_gap", b.observed_gap)?;
        positive("sigma_j", b.sigma_j)?;
        for (i, &s) in b.segments.iter().enumerate() {
            if s.index() >= model.len() || s.index() >= lengths.len() {
                return Err(TtError::UnknownSegment(s));
            }
            variable_map.push(VariableRef { block: j, index: i, segment: s });
        }
    }
    let n = variable_map.len();
    let mut q = DenseMatrix::zeros(n);
    let mut c = vec![0.0; n];

    for (v, var) in variable_map.iter().enumerate() {
        let s = var.segment.index();
        let w2 = model.omega[s] * model.omega[s];
        q[(v, v)] += 1.0 / w2;
        c[v] -= model.phi[s] / w2;
    }

    let d2 = model.delta * model.delta;
    for v in 1..n {
        let a = 1.0 / lengths[variable_map[v].segment.index()];
        let b = 1.0 / lengths[variable_map[v - 1].segment.index()];
        q[(v, v)] += a * a / d2;
        q[(v - 1, v - 1)] += b * b / d2;
        q[(v, v - 1)] -= a * b / d2;
        q[(v - 1, v)] -= a * b / d2;
    }

    let mut offset = 0;
    for b in blocks {
        let s2 = b.sigma_j * b.sigma_j;
        let range = offset..offset + b.segments.len();
        for u in range.clone() {
            for v in range.clone() {
                q[(u, v)] += 1.0 / s2;
            }
            c[u] -= b.observed_gap / s2;
        }
        offset = range.end;
    }

    Ok(QpInstance { q, c, variable_map })
}

/// Joint Gaussian log-density of travel times `x` over the variables of
/// `blocks`, normalizing constants included.
pub fn log_likelihood(model: &TravelTimeModel, blocks: &[GpsBlock], lengths: &[f64], x: &[f64]) -> f64 {
    fn log_normal(x: f64, mean: f64, std: f64) -> f64 {
        let z = (x - mean) / std;
        -0.5 * z * z - std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
    let segs: Vec<SegmentId> = blocks.iter().flat_map(|b| b.segments.iter().copied()).collect();
    let mut ll = 0.0;
    for (s, &t) in segs.iter().zip(x) {
        ll += log_normal(t, model.phi[s.index()], model.omega[s.index()]);
    }
    for v in 1..segs.len() {
        let r = x[v] / lengths[segs[v].index()];
        let r_prev = x[v - 1] / lengths[segs[v - 1].index()];
        ll += log_normal(r, r_prev, model.delta);
    }
    let mut offset = 0;
    for b in blocks {
        let sum: f64 = x[offset..offset + b.segments.len()].iter().sum();
        ll += log_normal(sum, b.observed_gap, b.sigma_j);
        offset += b.segments.len();
    }
    ll
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
}

pub fn solve_qp(qp: &QpInstance, tol: f64, max_iter: usize) -> Result<QpSolution, TtError> {
    solve_qp_with(qp, QpMethod::ActiveSet, tol, max_iter)
}

pub fn solve_qp_with(qp: &QpInstance, method: QpMethod, tol: f64, max_iter: usize) -> Result<QpSolution, TtError> {
    positive("tol", tol)?;
    match solver::solve(&qp.q, &qp.c, method, tol, max_iter) {
        Ok(x) => Ok(QpSolution {
            objective: qp.objective(&x),
            kkt_residual: qp.kkt_residual(&x),
            x,
        }),
        Err(solver::SolveFailure::NotPositiveDefinite) => Err(TtError::NotPositiveDefinite),
        Err(solver::SolveFailure::NoConvergence { best, residual }) => {
            Err(TtError::NoConvergence { best, residual, tol })
        }
    }
}

/// Absolute KKT tolerance for `qp` derived from [`DEFAULT_RELATIVE_TOL`].
pub fn default_tolerance(qp: &QpInstance) -> f64 {
    let scale = qp.c.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    DEFAULT_RELATIVE_TOL * scale
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferredTimes {
    /// One travel time per inferred position, starting at `first_position`.
    pub t_prime: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub start_time: f64,
    pub first_position: usize,
    pub blocks: Vec<GpsBlock>,
}

impl InferredTimes {
    /// Estimated exit time at every position of the trajectory.
    pub fn exit_times(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.first_position + self.t_prime.len());
        if self.first_position == 1 {
            out.push(self.start_time);
        }
        let mut t = self.start_time;
        for d in &self.t_prime {
            t += d;
            out.push(t);
        }
        out
    }
}

/// Splits a trajectory into GPS blocks at its observed timestamps.
///
/// With `start = None` the first update must be observed and anchors the
/// blocks; otherwise the first block runs from `start` to the first observed
/// timestamp and includes position 0.
pub fn gps_blocks(
    traj: &Trajectory,
    net: &RoadNetwork,
    sigma_star: f64,
    start: Option<f64>,
) -> Result<(Vec<GpsBlock>, f64, usize), TtError> {
    let first = traj.points.first().ok_or(TtError::EmptyTrajectory)?;
    let last = traj.points.last().ok_or(TtError::EmptyTrajectory)?;
    if last.timestamp.is_none() {
        return Err(TtError::MissingEndpoint("last"));
    }
    let (start_time, first_position) = match start {
        Some(t) => (t, 0),
        None => (first.timestamp.ok_or(TtError::MissingEndpoint("first"))?, 1),
    };
    let mut blocks = Vec::new();
    let mut prev = start_time;
    let mut segs = Vec::new();
    let mut path = 0.0;
    for p in &traj.points[first_position..] {
        if !net.contains(p.segment) {
            return Err(TtError::UnknownSegment(p.segment));
        }
        segs.push(p.segment);
        path += net.length(p.segment);
        if let Some(t) = p.timestamp {
            let gap = t - prev;
            let sigma_j = gps_temporal_error(sigma_star, gap, path)?;
            blocks.push(GpsBlock { segments: std::mem::take(&mut segs), observed_gap: gap, sigma_j });
            prev = t;
            path = 0.0;
        }
    }
    Ok((blocks, start_time, first_position))
}

/// Maximum-likelihood travel times for the unobserved part of `traj`,
/// anchored at its first observed timestamp.
pub fn infer_travel_times(model: &TravelTimeModel, traj: &Trajectory, net: &RoadNetwork) -> Result<InferredTimes, TtError> {
    infer_inner(model, traj, net, None, QpMethod::ActiveSet)
}

/// Like [`infer_travel_times`] but with a known start time, so the first
/// segment's travel time is inferred as well.
pub fn infer_travel_times_from(
    model: &TravelTimeModel,
    traj: &Trajectory,
    net: &RoadNetwork,
    start: f64,
) -> Result<InferredTimes, TtError> {
    infer_inner(model, traj, net, Some(start), QpMethod::ActiveSet)
}

pub fn infer_travel_times_with(
    model: &TravelTimeModel,
    traj: &Trajectory,
    net: &RoadNetwork,
    start: Option<f64>,
    method: QpMethod,
) -> Result<InferredTimes, TtError> {
    infer_inner(model, traj, net, start, method)
}

fn infer_inner(
    model: &TravelTimeModel,
    traj: &Trajectory,
    net: &RoadNetwork,
    start: Option<f64>,
    method: QpMethod,
) -> Result<InferredTimes, TtError> {
    if model.len() != net.len() {
        return Err(TtError::InvalidModel(format!(
            "model has {} segments, network has {}",
            model.len(),
            net.len()
        )));
    }
    let (blocks, start_time, first_position) = gps_blocks(traj, net, model.sigma_star, start)?;
    if blocks.is_empty() {
        return Ok(InferredTimes {
            t_prime: Vec::new(),
            objective: 0.0,
            kkt_residual: 0.0,
            start_time,
            first_position,
            blocks,
        });
    }
    let qp = build_qp(model, &blocks, &net.lengths())?;
    let sol = solve_qp_with(&qp, method, default_tolerance(&qp), DEFAULT_MAX_ITER)?;
    Ok(InferredTimes {
        t_prime: sol.x,
        objective: sol.objective,
        kkt_residual: sol.kkt_residual,
        start_time,
        first_position,
        blocks,
    })
}
