//! Synthetic road networks and trajectory streams with retained ground truth.
//!
//! Two trajectory generators are provided. Random walks pick a uniformly
//! random successor at every step. Shortest-path trips go from a uniform
//! start segment to a destination drawn from an exponential popularity law
//! over a seeded ranking of all segments, so a large `alpha` concentrates
//! traffic on a few destinations.
//!
//! Every segment is left at the exit time of the previous one plus a travel
//! time. Observed timestamps are thinned to one per `gps_interval` seconds;
//! the first and last update of each trip always keep theirs.

use std::collections::{BinaryHeap, HashMap};
use std::cmp::Reverse;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use thiserror::Error;

use crate::roadnet::{RoadNetwork, SegmentId};
use crate::trajmodel::{ObjectId, StreamRecord, TrajPoint, Trajectory, TrajectoryStream, Update};

const MIN_SPEED: f64 = 1.0;
const MAX_RESAMPLES: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic configuration: {0}")]
    Config(String),
    #[error("grid needs at least one row and one column")]
    EmptyGrid,
    #[error("no connected start/destination pair after {0} attempts")]
    NoPath(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridLayout {
    /// One segment per road, connected to every road sharing an endpoint.
    Undirected,
    /// Two directed segments per road; no U-turns.
    Bidirectional,
}

/// A `rows x cols` block grid. Segment names encode midpoints on a lattice
/// with intersections at even coordinates, e.g. `s_2_1`; bidirectional
/// segments add their heading, e.g. `s_2_1_n`.
pub fn make_grid_network(
    rows: usize,
    cols: usize,
    segment_length: f64,
    layout: GridLayout,
) -> Result<RoadNetwork, SynthError> {
    if rows == 0 || cols == 0 {
        return Err(SynthError::EmptyGrid);
    }
    if !(segment_length > 0.0 && segment_length.is_finite()) {
        return Err(SynthError::Config(format!("segment_length = {segment_length}")));
    }
    // Roads as pairs of intersections in doubled coordinates.
    let mut roads = Vec::new();
    for y in 0..=rows {
        for x in 0..cols {
            roads.push(((2 * x, 2 * y), (2 * x + 2, 2 * y)));
        }
    }
    for x in 0..=cols {
        for y in 0..rows {
            roads.push(((2 * x, 2 * y), (2 * x, 2 * y + 2)));
        }
    }
    roads.sort_by_key(|&((ax, ay), (bx, by))| ((ay + by) / 2, (ax + bx) / 2));
    let mid = |((ax, ay), (bx, by)): ((usize, usize), (usize, usize))| ((ax + bx) / 2, (ay + by) / 2);

    let recs: Vec<(String, f64, Vec<String>)> = match layout {
        GridLayout::Undirected => {
            let name = |r| {
                let (x, y) = mid(r);
                format!("s_{x}_{y}")
            };
            roads
                .iter()
                .map(|&r| {
                    let succ = roads
                        .iter()
                        .filter(|&&o| o != r && (o.0 == r.0 || o.0 == r.1 || o.1 == r.0 || o.1 == r.1))
                        .map(|&o| name(o))
                        .collect();
                    (name(r), segment_length, succ)
                })
                .collect()
        }
        GridLayout::Bidirectional => {
            let heading = |(a, b): ((usize, usize), (usize, usize))| match (b.0.cmp(&a.0), b.1.cmp(&a.1)) {
                (std::cmp::Ordering::Greater, _) => "e",
                (std::cmp::Ordering::Less, _) => "w",
                (_, std::cmp::Ordering::Greater) => "n",
                _ => "s",
            };
            let name = |d: ((usize, usize), (usize, usize))| {
                let (x, y) = mid(d);
                format!("s_{x}_{y}_{}", heading(d))
            };
            let directed: Vec<_> = roads.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
            directed
                .iter()
                .map(|&d| {
                    let succ = directed
                        .iter()
                        .filter(|&&o| o.0 == d.1 && o.1 != d.0)
                        .map(|&o| name(o))
                        .collect();
                    (name(d), segment_length, succ)
                })
                .collect()
        }
    };
    Ok(RoadNetwork::from_named(&recs).expect("grid construction is consistent"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthMode {
    RandomWalk,
    ShortestPath,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TravelTimeLaw {
    /// Each traversal draws a speed from `N(speed_mean, speed_std)`
    /// truncated below at 1 m/s.
    Speed,
    /// Each segment draws a mean time once per run from the speed law; each
    /// traversal then draws `N(mean, (cv * mean)^2)`, truncated below at a
    /// tenth of the mean. `cv = 0` gives every traversal exactly the mean.
    SegmentGaussian { cv: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub mode: SynthMode,
    pub n_trajectories: usize,
    pub walk_length: usize,
    pub speed_mean: f64,
    pub speed_std: f64,
    pub alpha: f64,
    /// Minimum spacing of retained timestamps; 0 keeps all of them.
    pub gps_interval: f64,
    pub seed: u64,
    pub law: TravelTimeLaw,
    /// Trip start times are uniform over `[0, start_window)`.
    pub start_window: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            mode: SynthMode::ShortestPath,
            n_trajectories: 100,
            walk_length: 50,
            speed_mean: 15.0,
            speed_std: 10.0,
            alpha: 1.0,
            gps_interval: 30.0,
            seed: 0,
            law: TravelTimeLaw::Speed,
            start_window: 3600.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if !(self.speed_mean > 0.0 && self.speed_mean.is_finite()) {
            return bad(format!("speed_mean = {}", self.speed_mean));
        }
        if !(self.speed_std >= 0.0 && self.speed_std.is_finite()) {
            return bad(format!("speed_std = {}", self.speed_std));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha = {}", self.alpha));
        }
        if !(self.gps_interval >= 0.0 && self.gps_interval.is_finite()) {
            return bad(format!("gps_interval = {}", self.gps_interval));
        }
        if !(self.start_window >= 0.0 && self.start_window.is_finite()) {
            return bad(format!("start_window = {}", self.start_window));
        }
        if self.mode == SynthMode::RandomWalk && self.walk_length == 0 {
            return bad("walk_length must be at least 1".into());
        }
        if let TravelTimeLaw::SegmentGaussian { cv } = self.law {
            if !(cv >= 0.0 && cv.is_finite()) {
                return bad(format!("cv = {cv}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthTrajectory {
    pub object: ObjectId,
    pub segments: Vec<SegmentId>,
    /// Exact exit time per position.
    pub times: Vec<f64>,
    /// Whether the emitted stream carries the timestamp.
    pub observed: Vec<bool>,
}

impl TruthTrajectory {
    /// The trajectory as emitted: thinned timestamps.
    pub fn emitted(&self) -> Trajectory {
        let points = self
            .segments
            .iter()
            .zip(&self.times)
            .zip(&self.observed)
            .map(|((s, t), o)| TrajPoint::new(*s, o.then_some(*t)))
            .collect();
        Trajectory::new(self.object.clone(), points)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub trajectories: Vec<TruthTrajectory>,
    /// Per-segment mean travel time under [`TravelTimeLaw::SegmentGaussian`].
    pub segment_means: Option<Vec<f64>>,
}

impl GroundTruth {
    pub fn emitted(&self) -> Vec<Trajectory> {
        self.trajectories.iter().map(TruthTrajectory::emitted).collect()
    }

    /// `object,position,segment,true_exit_time,observed` with a header row.
    pub fn to_csv(&self, net: &RoadNetwork) -> String {
        let mut out = String::from("object,position,segment,true_exit_time,observed\n");
        for t in &self.trajectories {
            for (i, ((s, time), o)) in t.segments.iter().zip(&t.times).zip(&t.observed).enumerate() {
                out.push_str(&format!("{},{i},{},{time},{}\n", t.object, net.name(*s), u8::from(*o)));
            }
        }
        out
    }
}

struct SpeedLaw {
    normal: Option<Normal<f64>>,
    mean: f64,
}

impl SpeedLaw {
    fn new(mean: f64, std: f64) -> Self {
        let normal = (std > 0.0).then(|| Normal::new(mean, std).expect("validated parameters"));
        SpeedLaw { normal, mean }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let Some(n) = &self.normal else {
            return self.mean;
        };
        for _ in 0..10_000 {
            let v = n.sample(rng);
            if v >= MIN_SPEED {
                return v;
            }
        }
        MIN_SPEED
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const RANKING_STREAM: u64 = u64::MAX;
const MEANS_STREAM: u64 = u64::MAX - 1;

pub fn generate(net: &RoadNetwork, config: &SynthConfig) -> Result<(TrajectoryStream, GroundTruth), SynthError> {
    match config.mode {
        SynthMode::RandomWalk => gen_random_walk(net, config),
        SynthMode::ShortestPath => gen_shortest_path(net, config),
    }
}

pub fn gen_random_walk(net: &RoadNetwork, config: &SynthConfig) -> Result<(TrajectoryStream, GroundTruth), SynthError> {
    config.validate()?;
    if net.is_empty() {
        return Err(SynthError::Config("empty network".into()));
    }
    let n = net.len();
    let paths = (0..config.n_trajectories)
        .map(|i| {
            let mut rng = stream_rng(config.seed, i as u64);
            let mut cur = SegmentId(rng.random_range(0..n) as u32);
            let mut path = vec![cur];
            while path.len() < config.walk_length {
                let succ = net.successors(cur);
                cur = if succ.is_empty() {
                    SegmentId(rng.random_range(0..n) as u32)
                } else {
                    succ[rng.random_range(0..succ.len())]
                };
                path.push(cur);
            }
            (path, rng)
        })
        .collect();
    Ok(finish(net, config, paths))
}

/// Next hop towards one destination for every segment, by
/// length-weighted shortest path; ties go to the smallest successor id.
struct RouteTree {
    next: Vec<Option<SegmentId>>,
}

impl RouteTree {
    fn build(net: &RoadNetwork, dest: SegmentId) -> Self {
        let n = net.len();
        let mut dist = vec![f64::INFINITY; n];
        dist[dest.index()] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(Reverse((OrdF64(0.0), dest)));
        while let Some(Reverse((OrdF64(d), s))) = heap.pop() {
            if d > dist[s.index()] {
                continue;
            }
            // Entering s costs its length; the start segment is free.
            let via = d + net.length(s);
            for &p in net.predecessors(s) {
                if via < dist[p.index()] {
                    dist[p.index()] = via;
                    heap.push(Reverse((OrdF64(via), p)));
                }
            }
        }
        let next = (0..n)
            .map(|i| {
                let s = SegmentId(i as u32);
                if s == dest || !dist[i].is_finite() {
                    return None;
                }
                net.successors(s)
                    .iter()
                    .copied()
                    .filter(|t| dist[t.index()].is_finite())
                    .min_by(|a, b| {
                        let da = dist[a.index()] + net.length(*a);
                        let db = dist[b.index()] + net.length(*b);
                        da.total_cmp(&db).then(a.cmp(b))
                    })
            })
            .collect();
        RouteTree { next }
    }

    fn path(&self, from: SegmentId, dest: SegmentId) -> Option<Vec<SegmentId>> {
        let mut path = vec![from];
        let mut cur = from;
        while cur != dest {
            cur = self.next[cur.index()]?;
            path.push(cur);
        }
        Some(path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Destinations in popularity order: a seeded permutation of all segments.
pub fn destination_ranking(net: &RoadNetwork, seed: u64) -> Vec<SegmentId> {
    let mut order: Vec<SegmentId> = net.segment_ids().collect();
    order.shuffle(&mut stream_rng(seed, RANKING_STREAM));
    order
}

/// Normalized probability of each popularity rank, proportional to
/// `alpha * exp(-alpha * rank)`.
pub fn destination_weights(n: usize, alpha: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|r| (-alpha * r as f64).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

pub fn gen_shortest_path(net: &RoadNetwork, config: &SynthConfig) -> Result<(TrajectoryStream, GroundTruth), SynthError> {
    config.validate()?;
    if net.len() < 2 {
        return Err(SynthError::Config("shortest-path mode needs at least two segments".into()));
    }
    let n = net.len();
    let ranking = destination_ranking(net, config.seed);
    let weights = destination_weights(n, config.alpha);
    let pick = WeightedIndex::new(&weights).map_err(|e| SynthError::Config(e.to_string()))?;
    let mut trees: HashMap<SegmentId, RouteTree> = HashMap::new();
    let mut paths = Vec::with_capacity(config.n_trajectories);
    for i in 0..config.n_trajectories {
        let mut rng = stream_rng(config.seed, i as u64);
        let mut found = None;
        for _ in 0..MAX_RESAMPLES {
            let dest = ranking[pick.sample(&mut rng)];
            let start = SegmentId(rng.random_range(0..n) as u32);
            if start == dest {
                continue;
            }
            let tree = trees.entry(dest).or_insert_with(|| RouteTree::build(net, dest));
            if let Some(p) = tree.path(start, dest) {
                found = Some(p);
                break;
            }
        }
        let path = found.ok_or(SynthError::NoPath(MAX_RESAMPLES))?;
        paths.push((path, rng));
    }
    Ok(finish(net, config, paths))
}

fn finish(
    net: &RoadNetwork,
    config: &SynthConfig,
    paths: Vec<(Vec<SegmentId>, ChaCha8Rng)>,
) -> (TrajectoryStream, GroundTruth) {
    let law = SpeedLaw::new(config.speed_mean, config.speed_std);
    let segment_means = match config.law {
        TravelTimeLaw::Speed => None,
        TravelTimeLaw::SegmentGaussian { .. } => {
            let mut rng = stream_rng(config.seed, MEANS_STREAM);
            Some(net.lengths().iter().map(|l| l / law.sample(&mut rng)).collect::<Vec<f64>>())
        }
    };
    let trajectories = paths
        .into_iter()
        .enumerate()
        .map(|(i, (segments, mut rng))| {
            let mut t = if config.start_window > 0.0 { rng.random_range(0.0..config.start_window) } else { 0.0 };
            let mut times = Vec::with_capacity(segments.len());
            for (p, s) in segments.iter().enumerate() {
                if p > 0 {
                    t += travel_time(net, *s, config.law, &law, segment_means.as_deref(), &mut rng);
                }
                times.push(t);
            }
            let observed = thin(&times, config.gps_interval);
            TruthTrajectory { object: ObjectId::new(format!("v{i}")), segments, times, observed }
        })
        .collect();
    let truth = GroundTruth { trajectories, segment_means };
    (interleave(&truth), truth)
}

fn travel_time(
    net: &RoadNetwork,
    s: SegmentId,
    law: TravelTimeLaw,
    speed: &SpeedLaw,
    means: Option<&[f64]>,
    rng: &mut ChaCha8Rng,
) -> f64 {
    match (law, means) {
        (TravelTimeLaw::SegmentGaussian { cv }, Some(m)) => {
            let mean = m[s.index()];
            if cv == 0.0 {
                return mean;
            }
            let normal = Normal::new(mean, cv * mean).expect("positive mean");
            loop {
                let x = normal.sample(rng);
                if x >= 0.1 * mean {
                    return x;
                }
            }
        }
        _ => net.length(s) / speed.sample(rng),
    }
}

fn thin(times: &[f64], interval: f64) -> Vec<bool> {
    let mut observed = vec![false; times.len()];
    let mut last = f64::NEG_INFINITY;
    for (i, t) in times.iter().enumerate() {
        if i == 0 || i + 1 == times.len() || t - last >= interval {
            observed[i] = true;
            last = *t;
        }
    }
    observed
}

/// Merges all trips into one stream ordered by true time, each trip closed
/// by an end marker.
fn interleave(truth: &GroundTruth) -> TrajectoryStream {
    let mut events: Vec<(f64, usize, usize)> = Vec::new();
    for (k, t) in truth.trajectories.iter().enumerate() {
        for (p, time) in t.times.iter().enumerate() {
            events.push((*time, k, p));
        }
        events.push((t.times[t.times.len() - 1], k, t.times.len()));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let records = events
        .into_iter()
        .map(|(_, k, p)| {
            let t = &truth.trajectories[k];
            if p == t.segments.len() {
                StreamRecord::End(t.object.clone())
            } else {
                StreamRecord::Update(Update {
                    object: t.object.clone(),
                    segment: t.segments[p],
                    timestamp: t.observed[p].then_some(t.times[p]),
                })
            }
        })
        .collect();
    TrajectoryStream { records }
}
