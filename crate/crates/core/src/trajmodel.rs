//! Map-matched updates, per-object trajectories, and the stream file format.
//!
//! A timestamp is the time at which the object finished traversing the
//! segment (exit time). Missing timestamps are kept as `None` end to end.
//!
//! Stream file: one update per line, `object_id,segment_name,timestamp_seconds`
//! with an empty third field for a missing timestamp. `object_id,END,` closes
//! the object's current trajectory; a later update for the same object opens
//! a new one.

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::roadnet::{RoadNetwork, SegmentId};

/// Opaque object identifier as it appears in stream files.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectId(pub String);

impl ObjectId {
    pub fn new(s: impl Into<String>) -> Self {
        ObjectId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub const END_MARKER: &str = "END";

#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    pub object: ObjectId,
    pub segment: SegmentId,
    pub timestamp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StreamRecord {
    Update(Update),
    End(ObjectId),
}

/// Updates in arrival order, with explicit trajectory end markers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryStream {
    pub records: Vec<StreamRecord>,
}

impl TrajectoryStream {
    pub fn update_count(&self) -> usize {
        self.records
            .iter()
            .filter(|r| matches!(r, StreamRecord::Update(_)))
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Flattens trajectories back into a stream, one trajectory after the
    /// other, each terminated by an end marker.
    pub fn from_trajectories(trajs: &[Trajectory]) -> Self {
        let mut records = Vec::new();
        for t in trajs {
            for p in &t.points {
                records.push(StreamRecord::Update(Update {
                    object: t.object.clone(),
                    segment: p.segment,
                    timestamp: p.timestamp,
                }));
            }
            records.push(StreamRecord::End(t.object.clone()));
        }
        TrajectoryStream { records }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajPoint {
    pub segment: SegmentId,
    pub timestamp: Option<f64>,
}

impl TrajPoint {
    pub fn new(segment: SegmentId, timestamp: Option<f64>) -> Self {
        TrajPoint { segment, timestamp }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub object: ObjectId,
    pub points: Vec<TrajPoint>,
}

impl Trajectory {
    pub fn new(object: ObjectId, points: Vec<TrajPoint>) -> Self {
        Trajectory { object, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn segments(&self) -> Vec<SegmentId> {
        self.points.iter().map(|p| p.segment).collect()
    }

    /// Positions carrying a timestamp, with that timestamp.
    pub fn observed(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.points
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.timestamp.map(|t| (i, t)))
    }

    pub fn observed_count(&self) -> usize {
        self.points.iter().filter(|p| p.timestamp.is_some()).count()
    }

    pub fn start_time(&self) -> Option<f64> {
        self.points.first().and_then(|p| p.timestamp)
    }

    pub fn end_time(&self) -> Option<f64> {
        self.points.last().and_then(|p| p.timestamp)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StreamError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: unknown segment `{name}`")]
    UnknownSegment { line: usize, name: String },
    #[error("line {line}: object `{object}` timestamp {timestamp} does not increase past {previous}")]
    NonMonotone { line: usize, object: ObjectId, timestamp: f64, previous: f64 },
    #[error("need at least 2 trajectories to split, got {0}")]
    TooFewTrajectories(usize),
    #[error("train fraction must be in (0, 1), got {0}")]
    BadFraction(f64),
}

/// Parses a stream file, resolving segment names against `net`.
pub fn parse_stream(source: &str, net: &RoadNetwork) -> Result<TrajectoryStream, StreamError> {
    let mut records = Vec::new();
    // Last present timestamp of each object's open trajectory.
    let mut last_time: HashMap<String, f64> = HashMap::new();

    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        let text = raw.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = text.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(StreamError::Parse {
                line,
                msg: format!("expected 3 fields `object,segment,timestamp`, got {}", fields.len()),
            });
        }
        let (object, seg_name, ts) = (fields[0], fields[1], fields[2]);
        if object.is_empty() {
            return Err(StreamError::Parse { line, msg: "empty object id".into() });
        }
        if seg_name == END_MARKER {
            last_time.remove(object);
            records.push(StreamRecord::End(ObjectId::new(object)));
            continue;
        }
        let segment = net.id_of(seg_name).ok_or_else(|| StreamError::UnknownSegment {
            line,
            name: seg_name.to_string(),
        })?;
        let timestamp = if ts.is_empty() {
            None
        } else {
            let t: f64 = ts.parse().map_err(|_| StreamError::Parse {
                line,
                msg: format!("invalid timestamp `{ts}`"),
            })?;
            if !(t.is_finite() && t >= 0.0) {
                return Err(StreamError::Parse {
                    line,
                    msg: format!("timestamp must be finite and nonnegative, got {t}"),
                });
            }
            if let Some(&prev) = last_time.get(object) {
                if t <= prev {
                    return Err(StreamError::NonMonotone {
                        line,
                        object: ObjectId::new(object),
                        timestamp: t,
                        previous: prev,
                    });
                }
            }
            last_time.insert(object.to_string(), t);
            Some(t)
        };
        records.push(StreamRecord::Update(Update { object: ObjectId::new(object), segment, timestamp }));
    }
    Ok(TrajectoryStream { records })
}

pub fn serialize_stream(stream: &TrajectoryStream, net: &RoadNetwork) -> String {
    let mut out = String::new();
    for rec in &stream.records {
        match rec {
            StreamRecord::Update(u) => {
                out.push_str(u.object.as_str());
                out.push(',');
                out.push_str(net.name(u.segment));
                out.push(',');
                if let Some(t) = u.timestamp {
                    out.push_str(&t.to_string());
                }
                out.push('\n');
            }
            StreamRecord::End(o) => {
                out.push_str(&format!("{o},{END_MARKER},\n"));
            }
        }
    }
    out
}

/// Groups updates into trajectories, ordered by each trajectory's first
/// update. Per-object arrival order is preserved.
pub fn group_by_object(stream: &TrajectoryStream) -> Vec<Trajectory> {
    let mut out: Vec<Trajectory> = Vec::new();
    let mut open: HashMap<&ObjectId, usize> = HashMap::new();
    for rec in &stream.records {
        match rec {
            StreamRecord::Update(u) => {
                let slot = *open.entry(&u.object).or_insert_with(|| {
                    out.push(Trajectory::new(u.object.clone(), Vec::new()));
                    out.len() - 1
                });
                out[slot].points.push(TrajPoint::new(u.segment, u.timestamp));
            }
            StreamRecord::End(o) => {
                open.remove(o);
            }
        }
    }
    out
}

/// Seeded shuffle, then split whole trajectories into `(train, test)`.
pub fn split_train_test(
    trajectories: &[Trajectory],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<Trajectory>, Vec<Trajectory>), StreamError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(StreamError::BadFraction(train_fraction));
    }
    let n = trajectories.len();
    if n < 2 {
        return Err(StreamError::TooFewTrajectories(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let train = order[..n_train].iter().map(|&i| trajectories[i].clone()).collect();
    let test = order[n_train..].iter().map(|&i| trajectories[i].clone()).collect();
    Ok((train, test))
}
