//! Order-k Markov predictor over segment sequences, stored as a suffix trie.
//!
//! A trie node reached from the root by the path `c_m, c_{m-1}, ..., c_1`
//! (most recent segment first) represents the context `c_1 .. c_m` and counts
//! which segment followed that context in the training data. `pred` is the
//! most frequent follower, ties going to the smallest segment id.
//!
//! Compression keeps the first segment of a trajectory and every later
//! segment the trie fails to predict from the preceding `k` segments; all
//! other segments are recovered by replaying the predictor.

use std::collections::BTreeMap;

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::roadnet::{RoadNetwork, SegmentId};
use crate::trajmodel::{ObjectId, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpatialError {
    #[error("model order must be at least 1")]
    ZeroOrder,
    #[error("no training trajectories")]
    NoTrainingData,
    #[error("trajectory of object `{object}` references unknown segment {segment}")]
    UnknownSegment { object: ObjectId, segment: SegmentId },
    #[error("cannot compress an empty trajectory")]
    EmptyTrajectory,
    #[error("compressed trajectory is corrupt: {0}")]
    Corrupt(String),
    #[error("no position after the first in the test set")]
    NothingToPredict,
    #[error("model file line {line}: {msg}")]
    Format { line: usize, msg: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrieNode {
    /// Sorted by segment id.
    children: Vec<(SegmentId, usize)>,
    count: BTreeMap<SegmentId, u64>,
    pred: Option<SegmentId>,
}

impl TrieNode {
    pub fn pred(&self) -> Option<SegmentId> {
        self.pred
    }

    pub fn counts(&self) -> &BTreeMap<SegmentId, u64> {
        &self.count
    }

    fn bump(&mut self, next: SegmentId) {
        let c = self.count.entry(next).or_insert(0);
        *c += 1;
        let c = *c;
        self.pred = match self.pred {
            Some(p) if p != next => {
                let pc = self.count[&p];
                if c > pc || (c == pc && next < p) {
                    Some(next)
                } else {
                    Some(p)
                }
            }
            _ => Some(next),
        };
    }
}

/// What the trie can say about the next segment when only a suffix of the
/// true context is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Candidates {
    /// Every context consistent with the known suffix yields this prediction.
    Unique(Option<SegmentId>),
    /// At least two distinct predictions are possible.
    Ambiguous,
}

#[derive(Debug, Clone)]
pub struct SpatialModel {
    order: usize,
    nodes: Vec<TrieNode>,
    /// Child node of the root per segment index, `NO_CHILD` if absent. The
    /// root has a child for nearly every segment, so it is indexed directly.
    root_children: Vec<u32>,
    /// Non-root edges `(parent, segment) -> child`, mirroring `children` in
    /// a flat table so prediction does not chase per-node allocations.
    edges: FxHashMap<(u32, u32), u32>,
    /// `pred` of every node, `NO_PRED` if unset.
    preds: Vec<u32>,
    trained_update_count: u64,
}

const NO_CHILD: u32 = u32::MAX;
const NO_PRED: u32 = u32::MAX;

const ROOT: usize = 0;

/// Structural equality: same order, counts and trie shape, regardless of the
/// order nodes were allocated in.
impl PartialEq for SpatialModel {
    fn eq(&self, other: &Self) -> bool {
        fn same(a: &SpatialModel, x: usize, b: &SpatialModel, y: usize) -> bool {
            let (nx, ny) = (&a.nodes[x], &b.nodes[y]);
            nx.count == ny.count
                && nx.pred == ny.pred
                && nx.children.len() == ny.children.len()
                && nx.children.iter().zip(&ny.children).all(|(&(sx, cx), &(sy, cy))| {
                    sx == sy && same(a, cx, b, cy)
                })
        }
        self.order == other.order
            && self.trained_update_count == other.trained_update_count
            && self.nodes.len() == other.nodes.len()
            && same(self, ROOT, other, ROOT)
    }
}

impl SpatialModel {
    pub fn new(order: usize) -> Result<Self, SpatialError> {
        if order == 0 {
            return Err(SpatialError::ZeroOrder);
        }
        Ok(SpatialModel {
            order,
            nodes: vec![TrieNode::default()],
            root_children: Vec::new(),
            edges: FxHashMap::default(),
            preds: vec![NO_PRED],
            trained_update_count: 0,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn trained_update_count(&self) -> u64 {
        self.trained_update_count
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn child(&self, node: usize, seg: SegmentId) -> Option<usize> {
        if node == ROOT {
            return self.root_children.get(seg.index()).filter(|&&c| c != NO_CHILD).map(|&c| c as usize);
        }
        self.edges.get(&(node as u32, seg.0)).map(|&c| c as usize)
    }

    fn node_pred(&self, node: usize) -> Option<SegmentId> {
        Some(self.preds[node]).filter(|&p| p != NO_PRED).map(SegmentId)
    }

    fn set_pred(&mut self, node: usize, pred: Option<SegmentId>) {
        self.nodes[node].pred = pred;
        self.preds[node] = pred.map_or(NO_PRED, |p| p.0);
    }

    fn child_or_insert(&mut self, node: usize, seg: SegmentId) -> usize {
        if let Some(c) = self.child(node, seg) {
            return c;
        }
        let id = self.nodes.len();
        self.nodes.push(TrieNode::default());
        self.preds.push(NO_PRED);
        let children = &mut self.nodes[node].children;
        let at = children.partition_point(|e| e.0 < seg);
        children.insert(at, (seg, id));
        if node == ROOT {
            if self.root_children.len() <= seg.index() {
                self.root_children.resize(seg.index() + 1, NO_CHILD);
            }
            self.root_children[seg.index()] = id as u32;
        } else {
            self.edges.insert((node as u32, seg.0), id as u32);
        }
        id
    }

    /// Adds every (context, next) pair of one segment sequence.
    pub fn train_sequence(&mut self, segments: &[SegmentId]) {
        for s in 0..segments.len() {
            let window = &segments[s.saturating_sub(self.order)..=s];
            let (target, context) = window.split_last().expect("window is non-empty");
            let mut nd = ROOT;
            for &seg in context.iter().rev() {
                nd = self.child_or_insert(nd, seg);
                self.nodes[nd].bump(*target);
                self.preds[nd] = self.nodes[nd].pred.map_or(NO_PRED, |p| p.0);
            }
            self.trained_update_count += 1;
        }
    }

    /// Node of the longest context suffix present in the trie, and its depth.
    fn deepest_match(&self, context: &[SegmentId], max_order: usize) -> Option<(usize, usize)> {
        let max_depth = max_order.min(self.order).min(context.len());
        if max_depth == 0 {
            return None;
        }
        let mut node = self.child(ROOT, context[context.len() - 1])?;
        let mut depth = 1;
        while depth < max_depth {
            match self.child(node, context[context.len() - 1 - depth]) {
                Some(c) => {
                    node = c;
                    depth += 1;
                }
                None => break,
            }
        }
        Some((node, depth))
    }

    /// Most likely next segment after `context`, using its longest suffix of
    /// length at most `order` found in the trie.
    pub fn predict_next(&self, context: &[SegmentId]) -> Option<SegmentId> {
        self.predict_with_order(context, self.order)
    }

    /// Like [`predict_next`](Self::predict_next) but never looks further back
    /// than `order` segments.
    pub fn predict_with_order(&self, context: &[SegmentId], order: usize) -> Option<SegmentId> {
        self.deepest_match(context, order).and_then(|(n, _)| self.node_pred(n))
    }

    /// Possible predictions when `known` is only a suffix of the real context
    /// and anything older is unknown. Stops at the second distinct value.
    pub fn candidates(&self, known: &[SegmentId]) -> Candidates {
        if known.is_empty() && !self.nodes[ROOT].children.is_empty() {
            return Candidates::Ambiguous;
        }
        let Some((node, depth)) = self.deepest_match(known, self.order) else {
            return Candidates::Unique(None);
        };
        let pred = self.nodes[node].pred;
        // The walk stopped before exhausting the known suffix, or reached the
        // model order: older segments cannot change the match.
        if depth < known.len().min(self.order) || depth == self.order {
            return Candidates::Unique(pred);
        }
        let mut stack: Vec<(usize, usize)> =
            self.nodes[node].children.iter().map(|&(_, c)| (c, depth + 1)).collect();
        while let Some((n, d)) = stack.pop() {
            if self.nodes[n].pred != pred {
                return Candidates::Ambiguous;
            }
            if d < self.order {
                stack.extend(self.nodes[n].children.iter().map(|&(_, c)| (c, d + 1)));
            }
        }
        Candidates::Unique(pred)
    }

    /// Checks structural invariants; used by tests and after loading.
    pub fn validate(&self) -> Result<(), String> {
        let mut stack = vec![(ROOT, 0usize)];
        while let Some((n, depth)) = stack.pop() {
            let node = &self.nodes[n];
            if depth > self.order {
                return Err(format!("node at depth {depth} exceeds order {}", self.order));
            }
            if node.pred.is_none() != node.count.is_empty() {
                return Err("pred must be set exactly when counts exist".into());
            }
            if self.node_pred(n) != node.pred {
                return Err("prediction table out of sync".into());
            }
            if node.count.values().any(|c| *c == 0) {
                return Err("zero count entry".into());
            }
            if let Some(p) = node.pred {
                let best = argmax(&node.count);
                if best != Some(p) {
                    return Err(format!("pred {p} is not the argmax {best:?}"));
                }
            }
            stack.extend(node.children.iter().map(|&(_, c)| (c, depth + 1)));
        }
        Ok(())
    }

    /// Count table of the node for `context` (oldest first), if present.
    pub fn counts_for(&self, context: &[SegmentId]) -> Option<&BTreeMap<SegmentId, u64>> {
        let mut node = ROOT;
        for seg in context.iter().rev() {
            node = self.child(node, *seg)?;
        }
        Some(&self.nodes[node].count)
    }

    /// Serializes as `order`/`updates` header lines followed by one `node`
    /// line per non-root trie node in sorted depth-first order.
    pub fn to_text(&self, net: &RoadNetwork) -> String {
        let mut out = format!("order,{}\nupdates,{}\n", self.order, self.trained_update_count);
        let mut path: Vec<SegmentId> = Vec::new();
        self.write_node(ROOT, &mut path, net, &mut out);
        out
    }

    fn write_node(&self, n: usize, path: &mut Vec<SegmentId>, net: &RoadNetwork, out: &mut String) {
        let node = &self.nodes[n];
        if n != ROOT {
            let p: Vec<&str> = path.iter().map(|s| net.name(*s)).collect();
            let c: Vec<String> =
                node.count.iter().map(|(s, c)| format!("{}:{}", net.name(*s), c)).collect();
            let pred = node.pred.map(|s| net.name(s)).unwrap_or("");
            out.push_str(&format!("node,{},{},{}\n", p.join(";"), c.join(";"), pred));
        }
        for &(seg, child) in &node.children {
            path.push(seg);
            self.write_node(child, path, net, out);
            path.pop();
        }
    }

    pub fn from_text(source: &str, net: &RoadNetwork) -> Result<Self, SpatialError> {
        let mut model: Option<SpatialModel> = None;
        let mut updates = 0;
        for (idx, raw) in source.lines().enumerate() {
            let line = idx + 1;
            let text = raw.trim();
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            let err = |msg: String| SpatialError::Format { line, msg };
            let fields: Vec<&str> = text.split(',').collect();
            let lookup = |name: &str| {
                net.id_of(name).ok_or_else(|| SpatialError::Format {
                    line,
                    msg: format!("unknown segment `{name}`"),
                })
            };
            match fields[0] {
                "order" if fields.len() == 2 => {
                    let k: usize = fields[1].parse().map_err(|_| err("bad order".into()))?;
                    model = Some(SpatialModel::new(k)?);
                }
                "updates" if fields.len() == 2 => {
                    updates = fields[1].parse().map_err(|_| err("bad update count".into()))?;
                }
                "node" if fields.len() == 4 => {
                    let m = model.as_mut().ok_or_else(|| err("node before order header".into()))?;
                    let mut nd = ROOT;
                    for name in fields[1].split(';') {
                        nd = m.child_or_insert(nd, lookup(name)?);
                    }
                    let mut counts = BTreeMap::new();
                    for entry in fields[2].split(';').filter(|s| !s.is_empty()) {
                        let (name, c) =
                            entry.rsplit_once(':').ok_or_else(|| err(format!("bad count `{entry}`")))?;
                        let c: u64 = c.parse().map_err(|_| err(format!("bad count `{entry}`")))?;
                        counts.insert(lookup(name)?, c);
                    }
                    let pred = argmax(&counts);
                    let stated = if fields[3].is_empty() { None } else { Some(lookup(fields[3])?) };
                    if pred != stated {
                        return Err(err("stored prediction is not the count argmax".into()));
                    }
                    m.nodes[nd].count = counts;
                    m.set_pred(nd, pred);
                }
                _ => return Err(err(format!("unrecognized record `{text}`"))),
            }
        }
        let mut m = model.ok_or(SpatialError::Format { line: 0, msg: "missing order header".into() })?;
        m.trained_update_count = updates;
        m.validate().map_err(|msg| SpatialError::Format { line: 0, msg })?;
        Ok(m)
    }
}

fn argmax(count: &BTreeMap<SegmentId, u64>) -> Option<SegmentId> {
    // BTreeMap iterates ids ascending, so strict `>` keeps the smallest id on ties.
    let mut best: Option<(SegmentId, u64)> = None;
    for (&s, &c) in count {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((s, c));
        }
    }
    best.map(|(s, _)| s)
}

/// Builds an order-`k` model from training trajectories.
pub fn spatial_training(
    net: &RoadNetwork,
    train: &[Trajectory],
    k: usize,
) -> Result<SpatialModel, SpatialError> {
    let mut model = SpatialModel::new(k)?;
    if train.is_empty() {
        return Err(SpatialError::NoTrainingData);
    }
    for t in train {
        if let Some(p) = t.points.iter().find(|p| !net.contains(p.segment)) {
            return Err(SpatialError::UnknownSegment { object: t.object.clone(), segment: p.segment });
        }
        model.train_sequence(&t.segments());
    }
    Ok(model)
}

/// Kept spatial updates: `(position in the original trajectory, segment)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedSpatial {
    pub object: ObjectId,
    pub kept: Vec<(usize, SegmentId)>,
}

impl CompressedSpatial {
    pub fn ratio(&self, original_length: usize) -> f64 {
        original_length as f64 / self.kept.len() as f64
    }
}

/// Per-object spatial compressor fed one segment at a time.
#[derive(Debug, Clone)]
pub struct OnlineSpatial {
    window: Vec<SegmentId>,
    position: usize,
}

impl OnlineSpatial {
    pub fn new(order: usize) -> Self {
        OnlineSpatial { window: Vec::with_capacity(order + 1), position: 0 }
    }

    /// Number of segments consumed so far.
    pub fn len(&self) -> usize {
        self.position
    }

    pub fn is_empty(&self) -> bool {
        self.position == 0
    }

    /// Returns the `(position, segment)` record to store, or `None` when the
    /// model predicts `seg` from the preceding window.
    pub fn push(&mut self, model: &SpatialModel, seg: SegmentId) -> Option<(usize, SegmentId)> {
        let pos = self.position;
        let keep = pos == 0 || model.predict_next(&self.window) != Some(seg);
        self.position += 1;
        if self.window.len() == model.order() {
            self.window.remove(0);
        }
        self.window.push(seg);
        keep.then_some((pos, seg))
    }
}

pub fn spatial_compress(
    model: &SpatialModel,
    traj: &Trajectory,
) -> Result<CompressedSpatial, SpatialError> {
    if traj.is_empty() {
        return Err(SpatialError::EmptyTrajectory);
    }
    let mut online = OnlineSpatial::new(model.order());
    let kept = traj.points.iter().filter_map(|p| online.push(model, p.segment)).collect();
    Ok(CompressedSpatial { object: traj.object.clone(), kept })
}

pub fn spatial_decompress(
    model: &SpatialModel,
    comp: &CompressedSpatial,
    original_length: usize,
) -> Result<Vec<SegmentId>, SpatialError> {
    replay(model, &comp.kept, 0, &[], original_length)
}

/// Replays positions `start..end` one segment at a time, with `prefix`
/// holding the segments immediately before `start` (only its last `order`
/// entries matter). `kept` must cover `start` if `prefix` is empty.
pub(crate) struct Replay<'a> {
    model: &'a SpatialModel,
    kept: &'a [(usize, SegmentId)],
    next_kept: usize,
    pos: usize,
    end: usize,
    window: Vec<SegmentId>,
}

impl<'a> Replay<'a> {
    pub(crate) fn new(
        model: &'a SpatialModel,
        kept: &'a [(usize, SegmentId)],
        start: usize,
        prefix: &[SegmentId],
        end: usize,
    ) -> Self {
        let k = model.order();
        Replay {
            model,
            kept,
            next_kept: kept.partition_point(|(p, _)| *p < start),
            pos: start,
            end,
            window: prefix[prefix.len().saturating_sub(k)..].to_vec(),
        }
    }
}

impl Iterator for Replay<'_> {
    type Item = Result<SegmentId, SpatialError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.end {
            return None;
        }
        let pos = self.pos;
        let seg = if self.kept.get(self.next_kept).is_some_and(|k| k.0 == pos) {
            self.next_kept += 1;
            self.kept[self.next_kept - 1].1
        } else {
            match self.model.predict_next(&self.window) {
                Some(s) => s,
                None => {
                    self.pos = self.end;
                    return Some(Err(SpatialError::Corrupt(format!(
                        "no prediction for suppressed position {pos}"
                    ))));
                }
            }
        };
        if self.window.len() == self.model.order() {
            self.window.remove(0);
        }
        self.window.push(seg);
        self.pos += 1;
        Some(Ok(seg))
    }
}

pub(crate) fn replay(
    model: &SpatialModel,
    kept: &[(usize, SegmentId)],
    start: usize,
    prefix: &[SegmentId],
    end: usize,
) -> Result<Vec<SegmentId>, SpatialError> {
    if kept.len() > end.max(1) {
        return Err(SpatialError::Corrupt(format!(
            "{} kept entries for length {end}",
            kept.len()
        )));
    }
    if end > 0 && start == 0 && kept.first().map(|k| k.0) != Some(0) {
        return Err(SpatialError::Corrupt("position 0 is not stored".into()));
    }
    if let Some(k) = kept.iter().find(|k| k.0 >= end.max(1)) {
        return Err(SpatialError::Corrupt(format!("kept position {} beyond length {end}", k.0)));
    }
    Replay::new(model, kept, start, prefix, end).collect()
}

/// Fraction of positions after the first that an order-`k` prediction
/// misses over `test`.
pub fn empirical_block_entropy(
    model: &SpatialModel,
    test: &[Trajectory],
    k: usize,
) -> Result<f64, SpatialError> {
    let mut total = 0u64;
    let mut missed = 0u64;
    for t in test {
        let segs = t.segments();
        for s in 1..segs.len() {
            let ctx = &segs[s.saturating_sub(k)..s];
            total += 1;
            if model.predict_with_order(ctx, k) != Some(segs[s]) {
                missed += 1;
            }
        }
    }
    if total == 0 {
        return Err(SpatialError::NothingToPredict);
    }
    Ok(missed as f64 / total as f64)
}
