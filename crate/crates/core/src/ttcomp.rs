//! Online temporal compression with a λ error bound, and timestamp recovery.
//!
//! At every observed update the model's predicted elapsed time since the
//! previous observation is fused with the observed gap (a precision-weighted
//! mean of two Gaussians). The running fused clock `t*` is compared with the
//! model clock `tau`, the last anchor time plus the mean travel times of all
//! segments since that anchor. The update is stored as a new anchor only
//! when the two clocks disagree by more than λ.
//!
//! Recovery interpolates between anchors proportionally to the model means,
//! then clamps each estimate into a band that keeps it within λ of any fused
//! time consistent with the suppression test. After the last anchor, the
//! model clock itself is the estimate.
//!
//! # Compressed file
//!
//! ```text
//! lambda,<seconds>
//! object_id,S,position,segment_name
//! object_id,T,d_meters,t_seconds
//! object_id,L,length
//! ```
//!
//! The records of one trajectory appear in that order and its `L` record
//! closes it, so one object may own several consecutive trips.

use thiserror::Error;

use crate::roadnet::{RoadNetwork, SegmentId};
use crate::spatial::{spatial_decompress, CompressedSpatial, OnlineSpatial, SpatialError, SpatialModel};
use crate::trajmodel::{ObjectId, Trajectory};
use crate::ttqp::{gps_temporal_error, TravelTimeModel, TtError};

/// Distance tolerance when aligning anchors with a segment sequence.
pub const DISTANCE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemporalError {
    #[error("lambda must be positive, got {0}")]
    BadLambda(f64),
    #[error("both fusion variances are zero")]
    DegenerateFusion,
    #[error("negative fusion variance")]
    NegativeVariance,
    #[error("first update has no timestamp")]
    MissingStart,
    #[error("segment {0} is not in the network or model")]
    UnknownSegment(SegmentId),
    #[error("timestamp {timestamp} does not follow {previous}")]
    NonMonotone { timestamp: f64, previous: f64 },
    #[error(transparent)]
    Model(#[from] TtError),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error("compressed trajectory is corrupt: {0}")]
    Corrupt(String),
    #[error("compressed file line {line}: {msg}")]
    Format { line: usize, msg: String },
}

/// Precision-weighted mean of a model prediction `t_hat` (variance `w_hat`)
/// and an observation `t_bar` (variance `sigma_sq`).
pub fn fuse(t_hat: f64, w_hat: f64, t_bar: f64, sigma_sq: f64) -> Result<f64, TemporalError> {
    if w_hat < 0.0 || sigma_sq < 0.0 {
        return Err(TemporalError::NegativeVariance);
    }
    if w_hat == 0.0 && sigma_sq == 0.0 {
        return Err(TemporalError::DegenerateFusion);
    }
    Ok((t_hat * sigma_sq + t_bar * w_hat) / (w_hat + sigma_sq))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub position: usize,
    /// Distance travelled since the exit of the first segment, meters.
    pub d: f64,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedTemporal {
    pub object: ObjectId,
    pub lambda: f64,
    pub kept: Vec<Anchor>,
}

impl CompressedTemporal {
    /// Observed updates per stored anchor.
    pub fn ratio(&self, observed: usize) -> f64 {
        observed as f64 / self.kept.len().max(1) as f64
    }

    pub fn validate(&self) -> Result<(), TemporalError> {
        for w in self.kept.windows(2) {
            if !(w[1].position > w[0].position && w[1].d > w[0].d && w[1].t > w[0].t) {
                return Err(TemporalError::Corrupt(format!(
                    "anchors at positions {} and {} are not increasing",
                    w[0].position, w[1].position
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FusionState {
    pub t_hat: f64,
    pub w_hat: f64,
    pub d: f64,
    pub t_star: f64,
    pub tau: f64,
}

/// One observed update seen by the compressor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub position: usize,
    pub t_star: f64,
    pub tau: f64,
    pub kept: bool,
}

/// Streaming temporal compressor for a single trajectory.
#[derive(Debug, Clone)]
pub struct TemporalCompressor {
    lambda: f64,
    state: FusionState,
    position: usize,
    last_time: f64,
    path: f64,
    started: bool,
}

impl TemporalCompressor {
    pub fn new(lambda: f64) -> Result<Self, TemporalError> {
        if !(lambda > 0.0) || lambda.is_nan() {
            return Err(TemporalError::BadLambda(lambda));
        }
        Ok(TemporalCompressor {
            lambda,
            state: FusionState::default(),
            position: 0,
            last_time: 0.0,
            path: 0.0,
            started: false,
        })
    }

    pub fn state(&self) -> FusionState {
        self.state
    }

    /// Feeds the next update; returns the observation record when it carried
    /// a timestamp, with `kept` set if it became an anchor.
    pub fn push(
        &mut self,
        model: &TravelTimeModel,
        net: &RoadNetwork,
        segment: SegmentId,
        timestamp: Option<f64>,
    ) -> Result<Option<(Observation, Option<Anchor>)>, TemporalError> {
        if !net.contains(segment) || segment.index() >= model.len() {
            return Err(TemporalError::UnknownSegment(segment));
        }
        let pos = self.position;
        if !self.started {
            let t0 = timestamp.ok_or(TemporalError::MissingStart)?;
            self.started = true;
            self.position = 1;
            self.last_time = t0;
            self.state = FusionState { t_hat: 0.0, w_hat: 0.0, d: 0.0, t_star: t0, tau: t0 };
            let anchor = Anchor { position: 0, d: 0.0, t: t0 };
            let obs = Observation { position: 0, t_star: t0, tau: t0, kept: true };
            return Ok(Some((obs, Some(anchor))));
        }
        self.position += 1;
        let s = segment.index();
        let len = net.length(segment);
        let st = &mut self.state;
        st.t_hat += model.phi[s];
        st.w_hat += model.omega[s] * model.omega[s];
        st.d += len;
        st.tau += model.phi[s];
        self.path += len;
        let Some(t) = timestamp else {
            return Ok(None);
        };
        if !(t > self.last_time) {
            return Err(TemporalError::NonMonotone { timestamp: t, previous: self.last_time });
        }
        let gap = t - self.last_time;
        let sigma = gps_temporal_error(model.sigma_star, gap, self.path)?;
        st.t_star += fuse(st.t_hat, st.w_hat, gap, sigma * sigma)?;
        let keep = (st.tau - st.t_star).abs() > self.lambda;
        let obs = Observation { position: pos, t_star: st.t_star, tau: st.tau, kept: keep };
        let anchor = keep.then(|| {
            st.tau = st.t_star;
            Anchor { position: pos, d: st.d, t: st.t_star }
        });
        st.t_hat = 0.0;
        st.w_hat = 0.0;
        self.last_time = t;
        self.path = 0.0;
        Ok(Some((obs, anchor)))
    }
}

pub fn temporal_compress(
    model: &TravelTimeModel,
    traj: &Trajectory,
    net: &RoadNetwork,
    lambda: f64,
) -> Result<CompressedTemporal, TemporalError> {
    Ok(temporal_compress_traced(model, traj, net, lambda)?.0)
}

/// Compresses and also returns every observed update's fused and model time.
pub fn temporal_compress_traced(
    model: &TravelTimeModel,
    traj: &Trajectory,
    net: &RoadNetwork,
    lambda: f64,
) -> Result<(CompressedTemporal, Vec<Observation>), TemporalError> {
    let mut comp = TemporalCompressor::new(lambda)?;
    let mut kept = Vec::new();
    let mut trace = Vec::new();
    for p in &traj.points {
        if let Some((obs, anchor)) = comp.push(model, net, p.segment, p.timestamp)? {
            trace.push(obs);
            kept.extend(anchor);
        }
    }
    Ok((CompressedTemporal { object: traj.object.clone(), lambda, kept }, trace))
}

/// Recovered exit times for positions `a.position ..= b.position`, or to the
/// end of `segments` when `b` is `None`. `segments[0]` is the segment at
/// `a.position`.
pub(crate) fn recover_interval(
    model: &TravelTimeModel,
    segments: &[SegmentId],
    a: Anchor,
    b: Option<Anchor>,
    lambda: f64,
) -> Vec<f64> {
    let mut tau = Vec::with_capacity(segments.len());
    let mut cum = Vec::with_capacity(segments.len());
    let mut clock = a.t;
    let mut acc = 0.0;
    tau.push(clock);
    cum.push(0.0);
    for s in &segments[1..] {
        clock += model.phi[s.index()];
        acc += model.phi[s.index()];
        tau.push(clock);
        cum.push(acc);
    }
    let Some(b) = b else {
        return tau;
    };
    let last = segments.len() - 1;
    let span = b.t - a.t;
    // Band edges adjusted so the rounded distance to either anchor stays within lambda.
    let mut upper = a.t + lambda;
    while upper - a.t > lambda {
        upper = upper.next_down();
    }
    let mut lower = b.t - lambda;
    while b.t - lower > lambda {
        lower = lower.next_up();
    }
    let mut out = Vec::with_capacity(segments.len());
    out.push(a.t);
    for i in 1..last {
        let r = a.t + span * (cum[i] / cum[last]);
        let lo = tau[i].min(lower);
        let hi = tau[i].max(upper);
        out.push(r.clamp(lo, hi));
    }
    out.push(b.t);
    out
}

/// Recovered exit time of every position of the decompressed sequence.
pub fn temporal_recover(
    model: &TravelTimeModel,
    comp: &CompressedTemporal,
    spatial: &[SegmentId],
) -> Result<Vec<f64>, TemporalError> {
    comp.validate()?;
    let first = comp.kept.first().ok_or_else(|| TemporalError::Corrupt("no anchors".into()))?;
    if first.position != 0 {
        return Err(TemporalError::Corrupt("first anchor is not at position 0".into()));
    }
    if let Some(last) = comp.kept.last() {
        if last.position >= spatial.len() {
            return Err(TemporalError::Corrupt(format!(
                "anchor position {} beyond length {}",
                last.position,
                spatial.len()
            )));
        }
    }
    if let Some(s) = spatial.iter().find(|s| s.index() >= model.len()) {
        return Err(TemporalError::UnknownSegment(*s));
    }
    let mut out = Vec::with_capacity(spatial.len());
    for (i, a) in comp.kept.iter().enumerate() {
        let b = comp.kept.get(i + 1).copied();
        let end = b.map_or(spatial.len(), |b| b.position + 1);
        let part = recover_interval(model, &spatial[a.position..end], *a, b, comp.lambda);
        let skip = usize::from(i > 0);
        out.extend_from_slice(&part[skip..]);
    }
    Ok(out)
}

/// Assigns each anchor its position by matching cumulative distances.
pub fn align_anchors(
    anchors: &mut [Anchor],
    spatial: &[SegmentId],
    net: &RoadNetwork,
) -> Result<(), TemporalError> {
    let mut d = 0.0;
    let mut pos = 0;
    for a in anchors.iter_mut() {
        while pos + 1 < spatial.len() && d < a.d - DISTANCE_TOLERANCE {
            pos += 1;
            d += net.length(spatial[pos]);
        }
        if (d - a.d).abs() > DISTANCE_TOLERANCE {
            return Err(TemporalError::Corrupt(format!("no position at distance {}", a.d)));
        }
        a.position = pos;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedTrajectory {
    pub object: ObjectId,
    pub length: usize,
    pub spatial: Vec<(usize, SegmentId)>,
    pub temporal: CompressedTemporal,
}

impl CompressedTrajectory {
    pub fn spatial_part(&self) -> CompressedSpatial {
        CompressedSpatial { object: self.object.clone(), kept: self.spatial.clone() }
    }

    pub fn stored_records(&self) -> usize {
        self.spatial.len() + self.temporal.kept.len()
    }
}

pub fn compress_trajectory(
    spatial_model: &SpatialModel,
    tt_model: &TravelTimeModel,
    traj: &Trajectory,
    net: &RoadNetwork,
    lambda: f64,
) -> Result<CompressedTrajectory, TemporalError> {
    let mut online = OnlineCompressor::new(traj.object.clone(), spatial_model.order(), lambda)?;
    for p in &traj.points {
        online.push(spatial_model, tt_model, net, p.segment, p.timestamp)?;
    }
    Ok(online.finish())
}

/// Output of one [`OnlineCompressor::push`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Emitted {
    pub spatial: Option<(usize, SegmentId)>,
    pub anchor: Option<Anchor>,
}

/// Spatial and temporal compression of one trajectory, one update at a time.
#[derive(Debug, Clone)]
pub struct OnlineCompressor {
    object: ObjectId,
    spatial: OnlineSpatial,
    temporal: TemporalCompressor,
    kept_spatial: Vec<(usize, SegmentId)>,
    kept_temporal: Vec<Anchor>,
    lambda: f64,
}

impl OnlineCompressor {
    pub fn new(object: ObjectId, order: usize, lambda: f64) -> Result<Self, TemporalError> {
        Ok(OnlineCompressor {
            object,
            spatial: OnlineSpatial::new(order),
            temporal: TemporalCompressor::new(lambda)?,
            kept_spatial: Vec::new(),
            kept_temporal: Vec::new(),
            lambda,
        })
    }

    pub fn len(&self) -> usize {
        self.spatial.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spatial.is_empty()
    }

    pub fn push(
        &mut self,
        spatial_model: &SpatialModel,
        tt_model: &TravelTimeModel,
        net: &RoadNetwork,
        segment: SegmentId,
        timestamp: Option<f64>,
    ) -> Result<Emitted, TemporalError> {
        let anchor = self
            .temporal
            .push(tt_model, net, segment, timestamp)?
            .and_then(|(_, a)| a);
        let spatial = self.spatial.push(spatial_model, segment);
        self.kept_spatial.extend(spatial);
        self.kept_temporal.extend(anchor);
        Ok(Emitted { spatial, anchor })
    }

    pub fn finish(self) -> CompressedTrajectory {
        CompressedTrajectory {
            length: self.spatial.len(),
            object: self.object.clone(),
            spatial: self.kept_spatial,
            temporal: CompressedTemporal { object: self.object, lambda: self.lambda, kept: self.kept_temporal },
        }
    }
}

pub fn write_compressed(trajs: &[CompressedTrajectory], net: &RoadNetwork, lambda: f64) -> String {
    let mut out = format!("lambda,{lambda}\n");
    for c in trajs {
        let o = c.object.as_str();
        for (p, s) in &c.spatial {
            out.push_str(&format!("{o},S,{p},{}\n", net.name(*s)));
        }
        for a in &c.temporal.kept {
            out.push_str(&format!("{o},T,{},{}\n", a.d, a.t));
        }
        out.push_str(&format!("{o},L,{}\n", c.length));
    }
    out
}

/// Parses a compressed file; anchor positions are recovered by decompressing
/// the spatial part and aligning distances.
pub fn read_compressed(
    source: &str,
    net: &RoadNetwork,
    spatial_model: &SpatialModel,
) -> Result<Vec<CompressedTrajectory>, TemporalError> {
    let mut lambda = None;
    let mut open: Vec<CompressedTrajectory> = Vec::new();
    let mut done = Vec::new();
    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        let text = raw.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let err = |msg: String| TemporalError::Format { line, msg };
        let fields: Vec<&str> = text.split(',').map(str::trim).collect();
        if let ["lambda", v] = fields.as_slice() {
            let v: f64 = v.parse().map_err(|_| err(format!("invalid lambda `{v}`")))?;
            if !(v > 0.0) {
                return Err(TemporalError::BadLambda(v));
            }
            lambda = Some(v);
            continue;
        }
        let lambda = lambda.ok_or_else(|| err("missing `lambda` header".into()))?;
        let [obj, kind, a, rest @ ..] = fields.as_slice() else {
            return Err(err(format!("unrecognized record `{text}`")));
        };
        let object = ObjectId::new(*obj);
        let slot = match open.iter().position(|c| c.object == object) {
            Some(i) => i,
            None => {
                open.push(CompressedTrajectory {
                    object: object.clone(),
                    length: 0,
                    spatial: Vec::new(),
                    temporal: CompressedTemporal { object, lambda, kept: Vec::new() },
                });
                open.len() - 1
            }
        };
        let num = |s: &str| -> Result<f64, TemporalError> {
            s.parse().map_err(|_| err(format!("invalid number `{s}`")))
        };
        let int = |s: &str| -> Result<usize, TemporalError> {
            s.parse().map_err(|_| err(format!("invalid integer `{s}`")))
        };
        match (*kind, rest) {
            ("S", [name]) => {
                let seg = net.id_of(name).ok_or_else(|| err(format!("unknown segment `{name}`")))?;
                open[slot].spatial.push((int(a)?, seg));
            }
            ("T", [t]) => {
                open[slot].temporal.kept.push(Anchor { position: 0, d: num(a)?, t: num(t)? });
            }
            ("L", []) => {
                let mut c = open.remove(slot);
                c.length = int(a)?;
                let segs = spatial_decompress(spatial_model, &c.spatial_part(), c.length)?;
                align_anchors(&mut c.temporal.kept, &segs, net)?;
                c.temporal.validate()?;
                done.push(c);
            }
            _ => return Err(err(format!("unrecognized record `{text}`"))),
        }
    }
    if let Some(c) = open.first() {
        return Err(TemporalError::Corrupt(format!("object `{}` has no length record", c.object)));
    }
    Ok(done)
}
