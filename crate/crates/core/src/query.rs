//! `where(o, t)` over compressed trajectories by partial decompression.
//!
//! A segment `s_i` is occupied during `(t_{i-1}, t_i]`, where `t_i` is the
//! recovered exit time of `s_i`; the first segment also owns the start time
//! `t_0` itself. The answer for `t` is the first position whose exit time is
//! at least `t`.
//!
//! Partial decompression recovers only the anchor interval containing `t`.
//! Spatial replay must start early enough that every suppressed segment in
//! the window is determined by known segments alone; starting from the kept
//! entry just before the window, it steps back one kept entry at a time
//! while the trie admits more than one continuation for the unknown history.

use thiserror::Error;

use crate::roadnet::SegmentId;
use crate::spatial::{spatial_decompress, Candidates, Replay, SpatialError, SpatialModel};
use crate::trajmodel::{ObjectId, TrajPoint, Trajectory};
use crate::ttcomp::{recover_interval, temporal_recover, CompressedTrajectory, TemporalError};
use crate::ttqp::TravelTimeModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueryError {
    #[error("time {t} is outside the trajectory span [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },
    #[error("unknown object `{0}`")]
    NotFound(ObjectId),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error("compressed trajectory is corrupt: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompressedTrajectory {
    pub object: ObjectId,
    pub segments: Vec<SegmentId>,
    /// Recovered exit time per position.
    pub times: Vec<f64>,
}

impl DecompressedTrajectory {
    pub fn to_trajectory(&self) -> Trajectory {
        Trajectory::new(
            self.object.clone(),
            self.segments.iter().zip(&self.times).map(|(s, t)| TrajPoint::new(*s, Some(*t))).collect(),
        )
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        self.times[self.times.len() - 1]
    }
}

pub fn decompress(
    comp: &CompressedTrajectory,
    spatial_model: &SpatialModel,
    tt_model: &TravelTimeModel,
) -> Result<DecompressedTrajectory, QueryError> {
    let segments = spatial_decompress(spatial_model, &comp.spatial_part(), comp.length)?;
    let times = temporal_recover(tt_model, &comp.temporal, &segments)?;
    Ok(DecompressedTrajectory { object: comp.object.clone(), segments, times })
}

/// Position occupied at `t` given exit times, or `None` outside the span.
pub fn locate(times: &[f64], t: f64) -> Option<usize> {
    let (first, last) = (*times.first()?, *times.last()?);
    if !(t >= first && t <= last) {
        return None;
    }
    Some(times.partition_point(|x| *x < t))
}

/// Positions whose occupancy interval comes within `lambda` of `t`; an
/// answer for `t` is accepted if it names any of them.
pub fn acceptable_positions(times: &[f64], t: f64, lambda: f64) -> Vec<usize> {
    let Some(p) = locate(times, t) else {
        return Vec::new();
    };
    let mut lo = p;
    while lo > 0 && times[lo - 1] >= t - lambda {
        lo -= 1;
    }
    let mut hi = p;
    while hi + 1 < times.len() && times[hi] <= t + lambda {
        hi += 1;
    }
    (lo..=hi).collect()
}

/// A contiguous window of a decompressed trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialTrajectory {
    pub first_position: usize,
    pub segments: Vec<SegmentId>,
    pub times: Vec<f64>,
    /// Position the spatial replay started from.
    pub replay_start: usize,
    /// Compressed records read: spatial entries replayed plus anchors used.
    pub context_length: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WhereResult {
    pub segment: SegmentId,
    pub position: usize,
    /// Recovered exit time of the segment.
    pub recovered_time: f64,
    /// Recovered time the segment was entered (the start time for position 0).
    pub entered: f64,
    pub context_length: usize,
}

fn check_shape(comp: &CompressedTrajectory) -> Result<(), QueryError> {
    if comp.length == 0 || comp.spatial.first().map(|k| k.0) != Some(0) {
        return Err(QueryError::Corrupt("spatial part does not start at position 0".into()));
    }
    match comp.temporal.kept.first() {
        Some(a) if a.position == 0 => Ok(()),
        _ => Err(QueryError::Corrupt("temporal part does not start at position 0".into())),
    }
}

/// True when replaying from kept entry `j` with no earlier history yields
/// the same segments as a replay from the trajectory start.
fn determined_from(model: &SpatialModel, kept: &[(usize, SegmentId)], j: usize, length: usize) -> bool {
    let k = model.order();
    let start = kept[j].0;
    let mut known = vec![kept[j].1];
    let mut next = j + 1;
    for pos in start + 1..(start + k).min(length) {
        let seg = if kept.get(next).is_some_and(|e| e.0 == pos) {
            next += 1;
            kept[next - 1].1
        } else {
            match model.candidates(&known) {
                Candidates::Unique(Some(s)) => s,
                _ => return false,
            }
        };
        known.push(seg);
    }
    true
}

/// Index of the kept entry to replay from so that `target` is reconstructed
/// exactly.
fn replay_entry(model: &SpatialModel, kept: &[(usize, SegmentId)], target: usize, length: usize) -> usize {
    let mut j = kept.partition_point(|e| e.0 <= target) - 1;
    while j > 0 && !determined_from(model, kept, j, length) {
        j -= 1;
    }
    j
}

pub fn partial_decompress(
    comp: &CompressedTrajectory,
    spatial_model: &SpatialModel,
    tt_model: &TravelTimeModel,
    t: f64,
) -> Result<PartialTrajectory, QueryError> {
    check_shape(comp)?;
    let anchors = &comp.temporal.kept;
    let t0 = anchors[0].t;
    let out_of_range = |end: f64| QueryError::OutOfRange { t, start: t0, end };
    if !(t >= t0) {
        return Err(out_of_range(f64::NAN));
    }
    if t == t0 {
        return Ok(PartialTrajectory {
            first_position: 0,
            segments: vec![comp.spatial[0].1],
            times: vec![t0],
            replay_start: 0,
            context_length: 2,
        });
    }
    let ai = anchors.partition_point(|a| a.t < t) - 1;
    let a = anchors[ai];
    let b = anchors.get(ai + 1).copied();

    let j = replay_entry(spatial_model, &comp.spatial, a.position, comp.length);
    let replay_start = comp.spatial[j].0;
    let mut replay = Replay::new(spatial_model, &comp.spatial, replay_start, &[], comp.length);
    for _ in replay_start..a.position {
        replay.next().expect("position below length")?;
    }

    let mut segments = Vec::new();
    let times = match b {
        Some(b) => {
            for _ in a.position..=b.position {
                segments.push(replay.next().ok_or_else(|| {
                    QueryError::Corrupt(format!("anchor position {} beyond length", b.position))
                })??);
            }
            recover_interval(tt_model, &segments, a, Some(b), comp.temporal.lambda)
        }
        None => {
            let mut times = Vec::new();
            let mut clock = a.t;
            for seg in replay.by_ref() {
                let seg = seg?;
                if !segments.is_empty() {
                    clock += tt_model.phi.get(seg.index()).ok_or_else(|| {
                        QueryError::Corrupt(format!("segment {seg} not in the travel-time model"))
                    })?;
                }
                segments.push(seg);
                times.push(clock);
                if clock >= t {
                    break;
                }
            }
            if clock < t {
                return Err(out_of_range(clock));
            }
            times
        }
    };
    let last_pos = a.position + segments.len() - 1;
    let spatial_used = comp.spatial[j..].iter().take_while(|e| e.0 <= last_pos).count();
    Ok(PartialTrajectory {
        first_position: a.position,
        segments,
        times,
        replay_start,
        context_length: spatial_used + 1 + usize::from(b.is_some()),
    })
}

/// `where(o, t)` on one compressed trajectory.
pub fn where_compressed(
    comp: &CompressedTrajectory,
    spatial_model: &SpatialModel,
    tt_model: &TravelTimeModel,
    t: f64,
) -> Result<WhereResult, QueryError> {
    let part = partial_decompress(comp, spatial_model, tt_model, t)?;
    let i = part.times.partition_point(|x| *x < t);
    let Some(&recovered_time) = part.times.get(i) else {
        return Err(QueryError::OutOfRange { t, start: comp.temporal.kept[0].t, end: part.times[part.times.len() - 1] });
    };
    Ok(WhereResult {
        segment: part.segments[i],
        position: part.first_position + i,
        recovered_time,
        entered: if i == 0 { recovered_time } else { part.times[i - 1] },
        context_length: part.context_length,
    })
}

/// `where(o, t)` on an uncompressed trajectory with every timestamp known.
pub fn where_full(traj: &DecompressedTrajectory, t: f64) -> Result<WhereResult, QueryError> {
    let i = locate(&traj.times, t).ok_or(QueryError::OutOfRange {
        t,
        start: traj.start_time(),
        end: traj.end_time(),
    })?;
    Ok(WhereResult {
        segment: traj.segments[i],
        position: i,
        recovered_time: traj.times[i],
        entered: if i == 0 { traj.times[0] } else { traj.times[i - 1] },
        context_length: traj.segments.len(),
    })
}
