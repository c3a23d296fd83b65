//! Directed road-segment graph, its random-walk stationary distribution, and
//! the network entropy bound for random trajectories.
//!
//! Vertices are road segments, not intersections: an edge `a -> b` means an
//! object can move from segment `a` onto segment `b` directly. Segment ids are
//! dense (`0..len`) and assigned in declaration order at load time; the
//! external names are kept for all file I/O.
//!
//! # Network file
//!
//! One segment per line, `#` starts a comment line:
//!
//! ```text
//! segment_name,length_meters,succ_name_1;succ_name_2;...
//! ```
//!
//! The successor list may be empty. Successors may reference segments that
//! are declared later in the file.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense segment identifier, an index into [`RoadNetwork::segments`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentId(pub u32);

impl SegmentId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRecord {
    pub id: SegmentId,
    /// Length in meters, strictly positive.
    pub length: f64,
    pub name: String,
}

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: successor `{name}` is not a declared segment")]
    DanglingReference { line: usize, name: String },
    #[error("line {line}: segment `{name}` has nonpositive length {length}")]
    NonPositiveLength { line: usize, name: String, length: f64 },
    #[error("line {line}: segment `{name}` declared twice")]
    DuplicateSegment { line: usize, name: String },
    #[error("network has no segments")]
    Empty,
    #[error("damping must be in (0, 1], got {0}")]
    BadDamping(f64),
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("power iteration did not reach residual {tol} within {iterations} iterations (residual {residual})")]
    NoConvergence { tol: f64, iterations: usize, residual: f64 },
}

/// Immutable directed segment graph.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    segments: Vec<SegmentRecord>,
    succ: Vec<Vec<SegmentId>>,
    pred: Vec<Vec<SegmentId>>,
    by_name: HashMap<String, SegmentId>,
}

impl RoadNetwork {
    /// Builds a network from `(name, length, successor names)` triples.
    pub fn from_named<S: AsRef<str>>(
        records: &[(S, f64, Vec<S>)],
    ) -> Result<Self, NetworkError> {
        let mut text = String::new();
        for (name, length, succ) in records {
            let succ: Vec<&str> = succ.iter().map(|s| s.as_ref()).collect();
            text.push_str(&format!("{},{},{}\n", name.as_ref(), length, succ.join(";")));
        }
        load_network(&text)
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segments(&self) -> &[SegmentRecord] {
        &self.segments
    }

    pub fn segment_ids(&self) -> impl Iterator<Item = SegmentId> + '_ {
        (0..self.segments.len() as u32).map(SegmentId)
    }

    pub fn successors(&self, id: SegmentId) -> &[SegmentId] {
        &self.succ[id.index()]
    }

    pub fn predecessors(&self, id: SegmentId) -> &[SegmentId] {
        &self.pred[id.index()]
    }

    pub fn out_degree(&self, id: SegmentId) -> usize {
        self.succ[id.index()].len()
    }

    pub fn length(&self, id: SegmentId) -> f64 {
        self.segments[id.index()].length
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.length).collect()
    }

    pub fn name(&self, id: SegmentId) -> &str {
        &self.segments[id.index()].name
    }

    pub fn id_of(&self, name: &str) -> Option<SegmentId> {
        self.by_name.get(name).copied()
    }

    pub fn contains(&self, id: SegmentId) -> bool {
        id.index() < self.segments.len()
    }

    pub fn has_edge(&self, from: SegmentId, to: SegmentId) -> bool {
        self.succ[from.index()].contains(&to)
    }

    /// Serializes to the network file format; `load_network` of the result
    /// reproduces the same network with the same ids.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            let succ: Vec<&str> = self.succ[seg.id.index()]
                .iter()
                .map(|s| self.name(*s))
                .collect();
            out.push_str(&format!("{},{},{}\n", seg.name, seg.length, succ.join(";")));
        }
        out
    }
}

/// Parses and validates a network file.
pub fn load_network(source: &str) -> Result<RoadNetwork, NetworkError> {
    struct Pending<'a> {
        line: usize,
        succ: Vec<&'a str>,
    }

    let mut segments = Vec::new();
    let mut by_name = HashMap::new();
    let mut pending = Vec::new();

    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        let text = raw.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = text.splitn(3, ',').collect();
        if fields.len() < 2 {
            return Err(NetworkError::Parse {
                line,
                msg: format!("expected `name,length,successors`, got `{text}`"),
            });
        }
        let name = fields[0].trim();
        if name.is_empty() {
            return Err(NetworkError::Parse { line, msg: "empty segment name".into() });
        }
        let length: f64 = fields[1].trim().parse().map_err(|_| NetworkError::Parse {
            line,
            msg: format!("invalid length `{}`", fields[1].trim()),
        })?;
        if !(length > 0.0 && length.is_finite()) {
            return Err(NetworkError::NonPositiveLength { line, name: name.to_string(), length });
        }
        let succ: Vec<&str> = fields
            .get(2)
            .map(|s| s.split(';').map(str::trim).filter(|s| !s.is_empty()).collect())
            .unwrap_or_default();
        let id = SegmentId(segments.len() as u32);
        if by_name.insert(name.to_string(), id).is_some() {
            return Err(NetworkError::DuplicateSegment { line, name: name.to_string() });
        }
        segments.push(SegmentRecord { id, length, name: name.to_string() });
        pending.push(Pending { line, succ });
    }

    let mut succ = Vec::with_capacity(segments.len());
    for p in &pending {
        let mut ids = Vec::with_capacity(p.succ.len());
        for name in &p.succ {
            let id = by_name.get(*name).copied().ok_or_else(|| NetworkError::DanglingReference {
                line: p.line,
                name: name.to_string(),
            })?;
            ids.push(id);
        }
        succ.push(ids);
    }

    let mut pred = vec![Vec::new(); segments.len()];
    for (from, targets) in succ.iter().enumerate() {
        for to in targets {
            pred[to.index()].push(SegmentId(from as u32));
        }
    }

    Ok(RoadNetwork { segments, succ, pred, by_name })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    pub pi: Vec<f64>,
    pub damping: f64,
    pub iterations: usize,
    /// L1 change between the last two iterates.
    pub residual: f64,
}

const MAX_PAGERANK_ITERATIONS: usize = 1_000_000;

/// Power iteration for the random-surfer distribution over segments.
///
/// Teleportation is uniform and dangling segments spread their mass
/// uniformly. With `damping == 1.0` the plain random walk is iterated in its
/// lazy form `x <- (x + xP) / 2`, which has the same fixed point but also
/// converges on periodic graphs such as a directed cycle.
pub fn pagerank(
    net: &RoadNetwork,
    damping: f64,
    tol: f64,
) -> Result<StationaryDistribution, NetworkError> {
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(NetworkError::BadDamping(damping));
    }
    if !(tol > 0.0) {
        return Err(NetworkError::BadTolerance(tol));
    }
    let n = net.len();
    if n == 0 {
        return Err(NetworkError::Empty);
    }
    let uniform = 1.0 / n as f64;
    let lazy = damping == 1.0;
    let mut x = vec![uniform; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;

    for iteration in 1..=MAX_PAGERANK_ITERATIONS {
        let mut dangling = 0.0;
        next.iter_mut().for_each(|v| *v = 0.0);
        for (i, targets) in net.succ.iter().enumerate() {
            if targets.is_empty() {
                dangling += x[i];
            } else {
                let share = x[i] / targets.len() as f64;
                for t in targets {
                    next[t.index()] += share;
                }
            }
        }
        let base = (1.0 - damping) * uniform + damping * dangling * uniform;
        for v in next.iter_mut() {
            *v = damping * *v + base;
        }
        if lazy {
            for (v, old) in next.iter_mut().zip(&x) {
                *v = 0.5 * (*v + old);
            }
        }
        // Renormalize against drift from accumulated rounding.
        let total: f64 = next.iter().sum();
        for v in next.iter_mut() {
            *v /= total;
        }
        residual = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut x, &mut next);
        if residual < tol {
            return Ok(StationaryDistribution { pi: x, damping, iterations: iteration, residual });
        }
    }
    Err(NetworkError::NoConvergence { tol, iterations: MAX_PAGERANK_ITERATIONS, residual })
}

/// Random-walk spatial entropy `1 - sum_i pi_i / deg_out(i)`.
///
/// Dangling segments use `|V|` as their effective out-degree, matching the
/// uniform redistribution used by [`pagerank`]. The structural out-degree is
/// used even when `pi` was computed with damping below 1, so the value is an
/// approximation of the pure random-walk figure in that case.
///
/// Evaluated as `sum_i pi_i (1 - 1/deg_i) / sum_i pi_i`, which is the same
/// quantity for a normalized `pi` and is exactly zero when every segment has
/// a single successor.
pub fn network_entropy(net: &RoadNetwork, pi: &StationaryDistribution) -> f64 {
    assert_eq!(pi.pi.len(), net.len(), "distribution computed over another network");
    let n = net.len();
    let (mut missed, mut total) = (0.0, 0.0);
    for s in net.segment_ids() {
        let deg = match net.out_degree(s) {
            0 => n,
            d => d,
        };
        let p = pi.pi[s.index()];
        missed += p * (1.0 - 1.0 / deg as f64);
        total += p;
    }
    if total > 0.0 {
        (missed / total).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle(n: usize) -> RoadNetwork {
        let recs: Vec<(String, f64, Vec<String>)> = (0..n)
            .map(|i| (format!("c{i}"), 10.0, vec![format!("c{}", (i + 1) % n)]))
            .collect();
        RoadNetwork::from_named(&recs).unwrap()
    }

    fn complete(n: usize) -> RoadNetwork {
        let recs: Vec<(String, f64, Vec<String>)> = (0..n)
            .map(|i| (format!("k{i}"), 1.0, (0..n).map(|j| format!("k{j}")).collect()))
            .collect();
        RoadNetwork::from_named(&recs).unwrap()
    }

    #[test]
    fn parses_forward_references_and_comments() {
        let net = load_network("# demo\na,2,b;c\nb,3,\n\nc,1.5,a\n").unwrap();
        assert_eq!(net.len(), 3);
        let a = net.id_of("a").unwrap();
        let c = net.id_of("c").unwrap();
        assert_eq!(net.successors(a).len(), 2);
        assert_eq!(net.predecessors(a), &[c]);
        assert_eq!(net.length(c), 1.5);
    }

    #[test]
    fn empty_file_gives_empty_network() {
        let net = load_network("").unwrap();
        assert!(net.is_empty());
        assert_eq!(pagerank(&net, 0.85, 1e-10), Err(NetworkError::Empty));
    }

    #[test]
    fn rejects_bad_records() {
        assert!(matches!(
            load_network("a,2,b\n"),
            Err(NetworkError::DanglingReference { line: 1, .. })
        ));
        assert!(matches!(
            load_network("a,0,\n"),
            Err(NetworkError::NonPositiveLength { line: 1, .. })
        ));
        assert!(matches!(
            load_network("a,1,\nb,x,a\n"),
            Err(NetworkError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            load_network("a,1,\na,1,\n"),
            Err(NetworkError::DuplicateSegment { line: 2, .. })
        ));
        assert!(matches!(load_network("justaname\n"), Err(NetworkError::Parse { line: 1, .. })));
    }

    #[test]
    fn text_round_trip() {
        let net = load_network("a,2,b;c\nb,3,\nc,1.25,a;b\n").unwrap();
        assert_eq!(load_network(&net.to_text()).unwrap(), net);
    }

    #[test]
    fn symmetric_graphs_are_uniform() {
        for net in [cycle(7), complete(5)] {
            let pr = pagerank(&net, 0.85, 1e-12).unwrap();
            for p in &pr.pi {
                assert!((p - 1.0 / net.len() as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn entropy_of_cycle_and_complete_graph() {
        let c = cycle(9);
        let pr = pagerank(&c, 1.0, 1e-12).unwrap();
        assert_eq!(network_entropy(&c, &pr), 0.0);

        let k = complete(6);
        let pr = pagerank(&k, 1.0, 1e-12).unwrap();
        assert!((network_entropy(&k, &pr) - (1.0 - 1.0 / 6.0)).abs() < 1e-9);
    }

    #[test]
    fn damping_one_converges_on_periodic_graph_from_skewed_mass() {
        // a -> b -> a with a dangling tail c; the lazy walk still settles.
        let net = load_network("a,1,b\nb,1,a;c\nc,1,\n").unwrap();
        let pr = pagerank(&net, 1.0, 1e-12).unwrap();
        assert!((pr.pi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(pr.pi.iter().all(|p| *p > 0.0));
    }

    #[test]
    fn rejects_bad_parameters() {
        let net = cycle(3);
        assert!(matches!(pagerank(&net, 0.0, 1e-9), Err(NetworkError::BadDamping(_))));
        assert!(matches!(pagerank(&net, 1.5, 1e-9), Err(NetworkError::BadDamping(_))));
        assert!(matches!(pagerank(&net, 0.85, 0.0), Err(NetworkError::BadTolerance(_))));
    }
}
