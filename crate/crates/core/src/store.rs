//! On-disk trajectory store.
//!
//! A store directory holds `manifest.json`, copies of the three model files
//! and `data.log`, an append-only sequence of length-prefixed binary records:
//!
//! ```text
//! u32 payload_len | u8 kind | payload            (little-endian)
//! S  obj | u32 position | u32 segment            kept spatial entry
//! T  obj | u32 position | f64 d | f64 t          temporal anchor
//! U  obj | u32 segment | u8 has_time | f64 t     raw update (FULL mode)
//! E  obj | u32 length | f64 end_time             trip closed
//! A  obj                                         trip abandoned
//! ```
//!
//! `obj` is a u16 byte length followed by UTF-8. Each record is written with
//! a single `write_all` on the unbuffered file. On open, a torn final record
//! is truncated away and trips that never saw `E` are abandoned.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::query::{decompress, where_compressed, where_full, QueryError, WhereResult};
use crate::roadnet::{load_network, NetworkError, RoadNetwork, SegmentId};
use crate::spatial::{SpatialError, SpatialModel};
use crate::trajmodel::{ObjectId, StreamRecord, TrajectoryStream};
use crate::ttcomp::{Anchor, CompressedTemporal, CompressedTrajectory, OnlineCompressor, TemporalError};
use crate::ttqp::{TravelTimeModel, TtError};

pub const FORMAT_VERSION: u32 = 1;
pub const LOG_FILE: &str = "data.log";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const NETWORK_FILE: &str = "network.txt";
pub const SPATIAL_FILE: &str = "spatial.txt";
pub const TT_FILE: &str = "tt.txt";

const HEADER_LEN: usize = 5;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store i/o: {0}")]
    Io(#[from] io::Error),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("log record at offset {offset}: {msg}")]
    Corrupt { offset: u64, msg: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Model(#[from] TtError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error(transparent)]
    Query(#[from] QueryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum StoreMode {
    Full,
    Compressed,
}

impl fmt::Display for StoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StoreMode::Full => "FULL",
            StoreMode::Compressed => "COMPRESSED",
        })
    }
}

impl FromStr for StoreMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "FULL" => Ok(StoreMode::Full),
            "COMPRESSED" => Ok(StoreMode::Compressed),
            _ => Err(format!("unknown store mode `{s}` (expected FULL or COMPRESSED)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecompressionStrategy {
    /// Decompress the whole trip, then look up `t`.
    FullReconstruct,
    /// Decompress only the anchor interval containing `t`.
    #[default]
    Partial,
}

impl fmt::Display for DecompressionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecompressionStrategy::FullReconstruct => "FULL_RECONSTRUCT",
            DecompressionStrategy::Partial => "PARTIAL",
        })
    }
}

impl FromStr for DecompressionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "FULL_RECONSTRUCT" | "FULL" => Ok(DecompressionStrategy::FullReconstruct),
            "PARTIAL" => Ok(DecompressionStrategy::Partial),
            _ => Err(format!("unknown strategy `{s}` (expected FULL_RECONSTRUCT or PARTIAL)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub mode: StoreMode,
    /// Temporal error bound; absent in FULL mode.
    pub lambda: Option<f64>,
    pub order: usize,
    pub network_sha256: String,
    pub spatial_sha256: String,
    pub tt_sha256: String,
}

/// Raw text of the network, spatial model and travel-time model files.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFiles {
    pub network: String,
    pub spatial: String,
    pub tt: String,
}

impl ModelFiles {
    pub fn read(network: &Path, spatial: &Path, tt: &Path) -> io::Result<Self> {
        Ok(ModelFiles {
            network: fs::read_to_string(network)?,
            spatial: fs::read_to_string(spatial)?,
            tt: fs::read_to_string(tt)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Models {
    pub net: RoadNetwork,
    pub spatial: SpatialModel,
    pub tt: TravelTimeModel,
}

impl Models {
    pub fn parse(files: &ModelFiles) -> Result<Self, StoreError> {
        let net = load_network(&files.network)?;
        let spatial = SpatialModel::from_text(&files.spatial, &net)?;
        let tt = TravelTimeModel::from_text(&files.tt, &net)?;
        Ok(Models { net, spatial, tt })
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

/// Record payload after the object name.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Record {
    Spatial { position: u32, segment: SegmentId },
    Anchor(Anchor),
    Update { segment: SegmentId, timestamp: Option<f64> },
    End { length: u32, end_time: f64 },
    Abort,
}

impl Record {
    fn encode(&self, object: &ObjectId, out: &mut Vec<u8>) {
        out.clear();
        out.extend_from_slice(&[0; HEADER_LEN]);
        let obj = object.as_str().as_bytes();
        let kind = match self {
            Record::Spatial { .. } => b'S',
            Record::Anchor(_) => b'T',
            Record::Update { .. } => b'U',
            Record::End { .. } => b'E',
            Record::Abort => b'A',
        };
        out.extend_from_slice(&(obj.len() as u16).to_le_bytes());
        out.extend_from_slice(obj);
        match *self {
            Record::Spatial { position, segment } => {
                out.extend_from_slice(&position.to_le_bytes());
                out.extend_from_slice(&segment.0.to_le_bytes());
            }
            Record::Anchor(anchor) => {
                out.extend_from_slice(&(anchor.position as u32).to_le_bytes());
                out.extend_from_slice(&anchor.d.to_le_bytes());
                out.extend_from_slice(&anchor.t.to_le_bytes());
            }
            Record::Update { segment, timestamp } => {
                out.extend_from_slice(&segment.0.to_le_bytes());
                out.push(u8::from(timestamp.is_some()));
                out.extend_from_slice(&timestamp.unwrap_or(0.0).to_le_bytes());
            }
            Record::End { length, end_time } => {
                out.extend_from_slice(&length.to_le_bytes());
                out.extend_from_slice(&end_time.to_le_bytes());
            }
            Record::Abort => {}
        }
        let payload_len = (out.len() - HEADER_LEN) as u32;
        out[..4].copy_from_slice(&payload_len.to_le_bytes());
        out[4] = kind;
    }

    fn decode(kind: u8, payload: &[u8]) -> Result<(ObjectId, Self), String> {
        let mut cur = Cursor { buf: payload, pos: 0 };
        let n = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(n)?).map_err(|e| e.to_string())?;
        let object = ObjectId::new(name);
        let rec = match kind {
            b'S' => Record::Spatial { position: cur.u32()?, segment: SegmentId(cur.u32()?) },
            b'T' => {
                let position = cur.u32()? as usize;
                Record::Anchor(Anchor { position, d: cur.f64()?, t: cur.f64()? })
            }
            b'U' => {
                let segment = SegmentId(cur.u32()?);
                let flag = cur.take(1)?[0];
                let t = cur.f64()?;
                Record::Update { segment, timestamp: (flag != 0).then_some(t) }
            }
            b'E' => Record::End { length: cur.u32()?, end_time: cur.f64()? },
            b'A' => Record::Abort,
            other => return Err(format!("unknown record kind {other:#04x}")),
        };
        if cur.pos != payload.len() {
            return Err(format!("{} trailing bytes", payload.len() - cur.pos));
        }
        Ok((object, rec))
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let s = self.buf.get(self.pos..self.pos + n).ok_or("record payload too short")?;
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// A closed trip as held in the index. FULL-mode trips are kept in the same
/// shape: every segment is a spatial entry and every observed timestamp an
/// anchor with an unbounded error band, so recovery between observations is
/// proportional to expected travel time.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTrip {
    pub offset: u64,
    pub records: usize,
    pub start_time: f64,
    pub end_time: f64,
    pub trip: CompressedTrajectory,
}

#[derive(Debug)]
struct OpenTrip {
    offset: u64,
    records: usize,
    /// Model time since the last anchor, i.e. the recovered time of the
    /// latest position.
    clock: f64,
    kind: OpenKind,
}

#[derive(Debug)]
enum OpenKind {
    Compressor(Box<OnlineCompressor>),
    Building { spatial: Vec<(usize, SegmentId)>, anchors: Vec<Anchor> },
    Full { spatial: Vec<(usize, SegmentId)>, anchors: Vec<Anchor>, last_time: f64, d: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct IngestStats {
    pub updates_processed: usize,
    /// Spatial entries and anchors in COMPRESSED mode, raw updates in FULL mode.
    pub updates_written: usize,
    pub records_written: usize,
    pub bytes_written: u64,
    pub trips_closed: usize,
    pub trips_rejected: usize,
}

/// The append handle of the data log. Every record is one unbuffered
/// `write_all`.
#[derive(Debug)]
struct LogWriter {
    file: File,
    len: u64,
    buf: Vec<u8>,
}

impl LogWriter {
    fn append(&mut self, object: &ObjectId, rec: Record) -> io::Result<u64> {
        rec.encode(object, &mut self.buf);
        let offset = self.len;
        self.file.write_all(&self.buf)?;
        self.len += self.buf.len() as u64;
        Ok(offset)
    }
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    manifest: Manifest,
    models: Models,
    log: LogWriter,
    index: BTreeMap<ObjectId, Vec<StoredTrip>>,
    open: FxHashMap<ObjectId, OpenTrip>,
    abandoned_on_open: usize,
    truncated_bytes: u64,
}

impl Store {
    /// Creates a store at `root`, or opens it if one exists. An existing store
    /// must have been created with the same mode, lambda and model files.
    pub fn open_or_create(
        root: &Path,
        files: &ModelFiles,
        mode: StoreMode,
        lambda: Option<f64>,
    ) -> Result<Self, StoreError> {
        let models = Models::parse(files)?;
        let lambda = match mode {
            StoreMode::Full => None,
            StoreMode::Compressed => {
                let l = lambda.ok_or_else(|| StoreError::Manifest("COMPRESSED mode needs lambda".into()))?;
                if !(l > 0.0 && l.is_finite()) {
                    return Err(TemporalError::BadLambda(l).into());
                }
                Some(l)
            }
        };
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            mode,
            lambda,
            order: models.spatial.order(),
            network_sha256: sha256_hex(files.network.as_bytes()),
            spatial_sha256: sha256_hex(files.spatial.as_bytes()),
            tt_sha256: sha256_hex(files.tt.as_bytes()),
        };
        let manifest_path = root.join(MANIFEST_FILE);
        if manifest_path.exists() {
            let existing = read_manifest(root)?;
            if existing != manifest {
                return Err(StoreError::Manifest(format!(
                    "store at {} was created with different settings or models",
                    root.display()
                )));
            }
        } else {
            fs::create_dir_all(root)?;
            fs::write(root.join(NETWORK_FILE), &files.network)?;
            fs::write(root.join(SPATIAL_FILE), &files.spatial)?;
            fs::write(root.join(TT_FILE), &files.tt)?;
            let json = serde_json::to_string_pretty(&manifest).map_err(|e| StoreError::Manifest(e.to_string()))?;
            fs::write(&manifest_path, json + "\n")?;
        }
        Self::finish_open(root, manifest, models)
    }

    /// Opens an existing store using the model files copied into it.
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        let manifest = read_manifest(root)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(StoreError::Manifest(format!("unsupported format version {}", manifest.format_version)));
        }
        let files = ModelFiles::read(&root.join(NETWORK_FILE), &root.join(SPATIAL_FILE), &root.join(TT_FILE))?;
        for (name, text, want) in [
            ("network", &files.network, &manifest.network_sha256),
            ("spatial model", &files.spatial, &manifest.spatial_sha256),
            ("travel-time model", &files.tt, &manifest.tt_sha256),
        ] {
            if &sha256_hex(text.as_bytes()) != want {
                return Err(StoreError::Manifest(format!("{name} file does not match its checksum")));
            }
        }
        let models = Models::parse(&files)?;
        Self::finish_open(root, manifest, models)
    }

    fn finish_open(root: &Path, manifest: Manifest, models: Models) -> Result<Self, StoreError> {
        let path = root.join(LOG_FILE);
        let mut bytes = Vec::new();
        if path.exists() {
            File::open(&path)?.read_to_end(&mut bytes)?;
        }
        let log = OpenOptions::new().create(true).append(true).open(&path)?;
        let mut store = Store {
            root: root.to_path_buf(),
            manifest,
            models,
            log: LogWriter { file: log, len: 0, buf: Vec::new() },
            index: BTreeMap::new(),
            open: FxHashMap::default(),
            abandoned_on_open: 0,
            truncated_bytes: 0,
        };
        let valid = store.replay_log(&bytes)?;
        if valid < bytes.len() {
            store.truncated_bytes = (bytes.len() - valid) as u64;
            store.log.file.set_len(valid as u64)?;
            store.log.file.sync_all()?;
        }
        store.log.len = valid as u64;
        // Trips left open by an interrupted writer can never be completed.
        let mut stale: Vec<ObjectId> = store.open.keys().cloned().collect();
        stale.sort();
        for object in stale {
            store.open.remove(&object);
            store.log.append(&object, Record::Abort)?;
            store.abandoned_on_open += 1;
        }
        Ok(store)
    }

    /// Rebuilds the index from log bytes; returns the length of the valid prefix.
    fn replay_log(&mut self, bytes: &[u8]) -> Result<usize, StoreError> {
        let mut pos = 0;
        while pos + HEADER_LEN <= bytes.len() {
            let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
            let kind = bytes[pos + 4];
            let end = pos + HEADER_LEN + len;
            if end > bytes.len() {
                break;
            }
            let (object, rec) = Record::decode(kind, &bytes[pos + HEADER_LEN..end])
                .map_err(|msg| StoreError::Corrupt { offset: pos as u64, msg })?;
            self.apply(pos as u64, object, rec)
                .map_err(|msg| StoreError::Corrupt { offset: pos as u64, msg })?;
            pos = end;
        }
        Ok(pos)
    }

    fn apply(&mut self, offset: u64, object: ObjectId, rec: Record) -> Result<(), String> {
        let mode = self.manifest.mode;
        let phi = &self.models.tt.phi;
        match rec {
            Record::Abort => {
                self.open.remove(&object);
            }
            Record::End { length, end_time } => {
                let open = self.open.remove(&object).ok_or("end of a trip that was never started")?;
                let (spatial, anchors) = match open.kind {
                    OpenKind::Building { spatial, anchors } => (spatial, anchors),
                    _ => unreachable!("log replay only builds"),
                };
                self.close(object, open.offset, open.records + 1, length as usize, end_time, spatial, anchors);
            }
            rec => {
                let open = self.open.entry(object).or_insert_with(|| OpenTrip {
                    offset,
                    records: 0,
                    clock: 0.0,
                    kind: OpenKind::Building { spatial: Vec::new(), anchors: Vec::new() },
                });
                open.records += 1;
                let OpenKind::Building { spatial, anchors } = &mut open.kind else {
                    unreachable!("log replay only builds");
                };
                match (rec, mode) {
                    (Record::Spatial { position, segment }, StoreMode::Compressed) => {
                        if segment.index() >= phi.len() {
                            return Err(format!("unknown segment {segment}"));
                        }
                        spatial.push((position as usize, segment));
                    }
                    (Record::Anchor(anchor), StoreMode::Compressed) => anchors.push(anchor),
                    (Record::Update { segment, timestamp }, StoreMode::Full) => {
                        if segment.index() >= phi.len() {
                            return Err(format!("unknown segment {segment}"));
                        }
                        let position = spatial.len();
                        spatial.push((position, segment));
                        if let Some(t) = timestamp {
                            let d = match anchors.last() {
                                None => 0.0,
                                // Same summation order as ingest.
                                Some(a) => spatial[a.position + 1..]
                                    .iter()
                                    .fold(a.d, |d, e| d + self.models.net.length(e.1)),
                            };
                            anchors.push(Anchor { position, d, t });
                        }
                    }
                    (rec, mode) => return Err(format!("{rec:?} is not valid in a {mode} store")),
                }
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn close(
        &mut self,
        object: ObjectId,
        offset: u64,
        records: usize,
        length: usize,
        end_time: f64,
        spatial: Vec<(usize, SegmentId)>,
        anchors: Vec<Anchor>,
    ) {
        let lambda = self.manifest.lambda.unwrap_or(f64::INFINITY);
        let start_time = anchors.first().map_or(f64::NAN, |a| a.t);
        let trip = CompressedTrajectory {
            object: object.clone(),
            length,
            spatial,
            temporal: CompressedTemporal { object: object.clone(), lambda, kept: anchors },
        };
        self.index.entry(object).or_default().push(StoredTrip { offset, records, start_time, end_time, trip });
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn models(&self) -> &Models {
        &self.models
    }

    pub fn mode(&self) -> StoreMode {
        self.manifest.mode
    }

    pub fn bytes_on_disk(&self) -> u64 {
        self.log.len
    }

    /// Trips abandoned because the log ended before they were closed.
    pub fn abandoned_on_open(&self) -> usize {
        self.abandoned_on_open
    }

    pub fn truncated_bytes(&self) -> u64 {
        self.truncated_bytes
    }

    pub fn trips(&self, object: &ObjectId) -> &[StoredTrip] {
        self.index.get(object).map_or(&[], Vec::as_slice)
    }

    pub fn objects(&self) -> impl Iterator<Item = &ObjectId> {
        self.index.keys()
    }

    pub fn trip_count(&self) -> usize {
        self.index.values().map(Vec::len).sum()
    }

    pub fn sync(&mut self) -> io::Result<()> {
        self.log.file.sync_all()
    }

    /// Appends one update of `object`.
    pub fn push(
        &mut self,
        object: &ObjectId,
        segment: SegmentId,
        timestamp: Option<f64>,
        stats: &mut IngestStats,
    ) -> Result<(), StoreError> {
        stats.updates_processed += 1;
        let open = match self.open.get_mut(object) {
            Some(open) => open,
            None => {
                let kind = match self.manifest.mode {
                    StoreMode::Compressed => OpenKind::Compressor(Box::new(OnlineCompressor::new(
                        object.clone(),
                        self.manifest.order,
                        self.manifest.lambda.expect("compressed store has lambda"),
                    )?)),
                    StoreMode::Full => {
                        OpenKind::Full { spatial: Vec::new(), anchors: Vec::new(), last_time: f64::NAN, d: 0.0 }
                    }
                };
                let trip = OpenTrip { offset: self.log.len, records: 0, clock: 0.0, kind };
                self.open.entry(object.clone()).or_insert(trip)
            }
        };
        let models = &self.models;
        let mut out: [Option<Record>; 2] = [None, None];
        let result: Result<(), TemporalError> = (|| {
            match &mut open.kind {
                OpenKind::Compressor(c) => {
                    let emitted = c.push(&models.spatial, &models.tt, &models.net, segment, timestamp)?;
                    let first = c.len() == 1;
                    if let Some(a) = emitted.anchor {
                        open.clock = a.t;
                    } else if !first {
                        open.clock += models.tt.phi[segment.index()];
                    }
                    out[0] = emitted.spatial.map(|(p, segment)| Record::Spatial { position: p as u32, segment });
                    out[1] = emitted.anchor.map(Record::Anchor);
                }
                OpenKind::Full { spatial, anchors, last_time, d } => {
                    if !models.net.contains(segment) || segment.index() >= models.tt.len() {
                        return Err(TemporalError::UnknownSegment(segment));
                    }
                    let position = spatial.len();
                    if position == 0 && timestamp.is_none() {
                        return Err(TemporalError::MissingStart);
                    }
                    if position > 0 {
                        *d += models.net.length(segment);
                    }
                    match timestamp {
                        Some(t) => {
                            if position > 0 && !(t > *last_time) {
                                return Err(TemporalError::NonMonotone { timestamp: t, previous: *last_time });
                            }
                            *last_time = t;
                            open.clock = t;
                            anchors.push(Anchor { position, d: *d, t });
                        }
                        None => open.clock += models.tt.phi[segment.index()],
                    }
                    spatial.push((position, segment));
                    out[0] = Some(Record::Update { segment, timestamp });
                }
                OpenKind::Building { .. } => unreachable!("ingest never builds"),
            }
            Ok(())
        })();
        if let Err(e) = result {
            self.open.remove(object);
            self.log.append(object, Record::Abort)?;
            stats.trips_rejected += 1;
            stats.records_written += 1;
            return Err(e.into());
        }
        for rec in out.into_iter().flatten() {
            let before = self.log.len;
            self.log.append(object, rec)?;
            stats.bytes_written += self.log.len - before;
            stats.records_written += 1;
            stats.updates_written += 1;
            open.records += 1;
        }
        Ok(())
    }

    /// Closes the open trip of `object`, if any.
    pub fn end_trip(&mut self, object: &ObjectId, stats: &mut IngestStats) -> Result<(), StoreError> {
        let Some(open) = self.open.remove(object) else {
            return Ok(());
        };
        let (length, spatial, anchors) = match open.kind {
            OpenKind::Compressor(c) => {
                let comp = c.finish();
                (comp.length, comp.spatial, comp.temporal.kept)
            }
            OpenKind::Full { spatial, anchors, .. } => (spatial.len(), spatial, anchors),
            OpenKind::Building { .. } => unreachable!("ingest never builds"),
        };
        let before = self.log.len;
        self.log.append(object, Record::End { length: length as u32, end_time: open.clock })?;
        stats.bytes_written += self.log.len - before;
        stats.records_written += 1;
        stats.trips_closed += 1;
        self.close(object.clone(), open.offset, open.records + 1, length, open.clock, spatial, anchors);
        Ok(())
    }

    /// Ingests a whole stream. Trips are closed by END markers and at the end
    /// of the stream; an update that cannot be stored abandons its trip and
    /// the object's remaining updates until its next END.
    pub fn ingest(&mut self, stream: &TrajectoryStream) -> Result<IngestStats, StoreError> {
        let mut stats = IngestStats::default();
        let mut rejected: Vec<ObjectId> = Vec::new();
        for rec in &stream.records {
            match rec {
                StreamRecord::Update(u) => {
                    if rejected.contains(&u.object) {
                        stats.updates_processed += 1;
                        continue;
                    }
                    match self.push(&u.object, u.segment, u.timestamp, &mut stats) {
                        Ok(()) => {}
                        Err(StoreError::Temporal(_)) => rejected.push(u.object.clone()),
                        Err(e) => return Err(e),
                    }
                }
                StreamRecord::End(object) => {
                    rejected.retain(|o| o != object);
                    self.end_trip(object, &mut stats)?;
                }
            }
        }
        let mut still_open: Vec<ObjectId> = self.open.keys().cloned().collect();
        still_open.sort();
        for object in still_open {
            self.end_trip(&object, &mut stats)?;
        }
        Ok(stats)
    }

    /// The stored trip of `object` whose span contains `t`.
    pub fn trip_at(&self, object: &ObjectId, t: f64) -> Result<&StoredTrip, QueryError> {
        let trips = self.index.get(object).ok_or_else(|| QueryError::NotFound(object.clone()))?;
        trips.iter().find(|tr| t >= tr.start_time && t <= tr.end_time).ok_or_else(|| {
            let start = trips.first().map_or(f64::NAN, |tr| tr.start_time);
            let end = trips.last().map_or(f64::NAN, |tr| tr.end_time);
            QueryError::OutOfRange { t, start, end }
        })
    }

    pub fn where_query(
        &self,
        object: &ObjectId,
        t: f64,
        strategy: DecompressionStrategy,
    ) -> Result<WhereResult, QueryError> {
        let stored = self.trip_at(object, t)?;
        let m = &self.models;
        match strategy {
            DecompressionStrategy::Partial => where_compressed(&stored.trip, &m.spatial, &m.tt, t),
            DecompressionStrategy::FullReconstruct => {
                where_full(&decompress(&stored.trip, &m.spatial, &m.tt)?, t)
            }
        }
    }
}

fn read_manifest(root: &Path) -> Result<Manifest, StoreError> {
    let text = fs::read_to_string(root.join(MANIFEST_FILE))?;
    serde_json::from_str(&text).map_err(|e| StoreError::Manifest(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub mode: String,
    pub runs: usize,
    /// Median wall time of the timed runs, seconds.
    pub seconds: f64,
    pub inserts_per_sec: Option<f64>,
    pub queries_per_sec: Option<f64>,
    pub bytes_on_disk: u64,
    pub updates_processed: usize,
    pub updates_written: usize,
    pub queries: usize,
    pub mismatches: usize,
    pub errors: usize,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.3}"));
        format!(
            "mode,runs,seconds,inserts_per_sec,queries_per_sec,bytes_on_disk,updates_processed,updates_written,queries,mismatches,errors\n\
             {},{},{:.6},{},{},{},{},{},{},{},{}\n",
            self.mode,
            self.runs,
            self.seconds,
            opt(self.inserts_per_sec),
            opt(self.queries_per_sec),
            self.bytes_on_disk,
            self.updates_processed,
            self.updates_written,
            self.queries,
            self.mismatches,
            self.errors
        )
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Ingests `stream` into a fresh store at `root` once as a warm-up and then
/// `runs` more times, reporting the median. The last run's store is left at
/// `root`.
pub fn bench_ingest(
    root: &Path,
    files: &ModelFiles,
    mode: StoreMode,
    lambda: Option<f64>,
    stream: &TrajectoryStream,
    runs: usize,
) -> Result<BenchReport, StoreError> {
    let runs = runs.max(1);
    let mut times = Vec::with_capacity(runs);
    let mut last = IngestStats::default();
    let mut bytes = 0;
    for run in 0..=runs {
        if root.exists() {
            fs::remove_dir_all(root)?;
        }
        let mut store = Store::open_or_create(root, files, mode, lambda)?;
        let started = Instant::now();
        last = store.ingest(stream)?;
        let elapsed = started.elapsed().as_secs_f64();
        bytes = store.bytes_on_disk();
        if run > 0 {
            times.push(elapsed);
        }
    }
    let seconds = median(times);
    Ok(BenchReport {
        mode: mode.to_string(),
        runs,
        seconds,
        inserts_per_sec: Some(last.updates_processed as f64 / seconds.max(f64::MIN_POSITIVE)),
        queries_per_sec: None,
        bytes_on_disk: bytes,
        updates_processed: last.updates_processed,
        updates_written: last.updates_written,
        queries: 0,
        mismatches: 0,
        errors: 0,
    })
}

/// One `where` probe with the set of positions an answer may name; an empty
/// set means the probe is expected to fail.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub object: ObjectId,
    pub t: f64,
    pub accept: Option<Vec<usize>>,
}

/// Runs every probe once as a warm-up and then `runs` more times, reporting
/// the median. Mismatches and errors are counted on the warm-up pass.
pub fn query_bench(
    store: &Store,
    probes: &[Probe],
    strategy: DecompressionStrategy,
    runs: usize,
) -> BenchReport {
    let runs = runs.max(1);
    let mut mismatches = 0;
    let mut errors = 0;
    for p in probes {
        match (store.where_query(&p.object, p.t, strategy), &p.accept) {
            (Ok(r), Some(ok)) if !ok.contains(&r.position) => mismatches += 1,
            (Ok(_), Some(ok)) if ok.is_empty() => mismatches += 1,
            (Ok(_), _) => {}
            (Err(_), Some(ok)) if !ok.is_empty() => {
                mismatches += 1;
                errors += 1;
            }
            (Err(_), _) => errors += 1,
        }
    }
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let started = Instant::now();
        for p in probes {
            std::hint::black_box(store.where_query(&p.object, p.t, strategy).ok());
        }
        times.push(started.elapsed().as_secs_f64());
    }
    let seconds = median(times);
    BenchReport {
        mode: strategy.to_string(),
        runs,
        seconds,
        inserts_per_sec: None,
        queries_per_sec: Some(probes.len() as f64 / seconds.max(f64::MIN_POSITIVE)),
        bytes_on_disk: store.bytes_on_disk(),
        updates_processed: 0,
        updates_written: 0,
        queries: probes.len(),
        mismatches,
        errors,
    }
}
