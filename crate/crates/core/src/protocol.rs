//! Receiver logging, SMS exfiltration and the server-side detection store.
//!
//! The receiver dedups beacon sightings into records, buffers them while it
//! has no GSM signal, and flushes them as one or more text segments when it
//! does. The server decodes segments, resolves beacon ids against the
//! deployment registry and keeps an idempotent event store.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use geojson::{Feature, FeatureCollection, GeoJson, Geometry, JsonObject, Value};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const WIRE_VERSION: u8 = 1;
pub const MAX_SEGMENT_SEPTETS: usize = 160;
pub const DEFAULT_DEDUP_WINDOW_S: u64 = 300;
pub const MAX_BEACON_ID_LEN: usize = 12;
pub const MAX_RECEIVER_ID_LEN: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("invalid beacon id `{0}`: 1-12 characters from A-Z, 0-9 and '-'")]
    BeaconId(String),
    #[error("invalid receiver id `{0}`: 1-8 characters from A-Z, a-z, 0-9 and '-'")]
    ReceiverId(String),
    #[error("nothing to encode")]
    EmptyPayload,
    #[error("record {0} does not fit in one segment")]
    RecordTooLarge(String),
    #[error("no decodable segments")]
    NoSegments,
    #[error("segments disagree on {0}")]
    Inconsistent(&'static str),
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("registry: {0}")]
    Csv(#[from] csv::Error),
    #[error("store line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("registry lists {0} twice")]
    DuplicateBeacon(BeaconId),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct BeaconId(String);

impl BeaconId {
    pub fn new(s: &str) -> Result<Self, ProtocolError> {
        let ok = (1..=MAX_BEACON_ID_LEN).contains(&s.len())
            && s.bytes().all(|b| b.is_ascii_uppercase() || b.is_ascii_digit() || b == b'-');
        if ok {
            Ok(BeaconId(s.to_string()))
        } else {
            Err(ProtocolError::BeaconId(s.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for BeaconId {
    type Error = ProtocolError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        BeaconId::new(&s)
    }
}

impl From<BeaconId> for String {
    fn from(id: BeaconId) -> String {
        id.0
    }
}

impl FromStr for BeaconId {
    type Err = ProtocolError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BeaconId::new(s)
    }
}

impl fmt::Display for BeaconId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ReceiverId(String);

impl ReceiverId {
    pub fn new(s: &str) -> Result<Self, ProtocolError> {
        let ok = (1..=MAX_RECEIVER_ID_LEN).contains(&s.len()) && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-');
        if ok {
            Ok(ReceiverId(s.to_string()))
        } else {
            Err(ProtocolError::ReceiverId(s.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ReceiverId {
    type Error = ProtocolError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        ReceiverId::new(&s)
    }
}

impl From<ReceiverId> for String {
    fn from(id: ReceiverId) -> String {
        id.0
    }
}

impl FromStr for ReceiverId {
    type Err = ProtocolError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ReceiverId::new(s)
    }
}

impl fmt::Display for ReceiverId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub beacon: BeaconId,
    /// Seconds since receiver boot.
    pub first_seen: u32,
    pub count: u32,
}

impl DetectionRecord {
    fn wire(&self) -> String {
        format!("{}:{}:{}", self.beacon, self.count, self.first_seen)
    }
}

// GSM 03.38 basic character set (default alphabet, no shift).
const GSM7_BASIC: &str = "@£$¥èéùìòÇ\nØø\rÅåΔ_ΦΓΛΩΠΨΣΘΞÆæßÉ !\"#¤%&'()*+,-./0123456789:;<=>?¡ABCDEFGHIJKLMNOPQRSTUVWXYZÄÖÑÜ§¿abcdefghijklmnopqrstuvwxyzäöñüà";
// Extension table; each costs an escape plus the character.
const GSM7_EXTENSION: &str = "\u{000C}^{}\\[~]|€";

/// Septets needed to send `s` in the GSM 7-bit alphabet, or `None` if some
/// character is not representable.
pub fn gsm7_septets(s: &str) -> Option<usize> {
    s.chars().try_fold(0, |n, c| {
        if GSM7_BASIC.contains(c) {
            Some(n + 1)
        } else if GSM7_EXTENSION.contains(c) {
            Some(n + 2)
        } else {
            None
        }
    })
}

/// One SMS worth of records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmsPayload {
    pub version: u8,
    pub receiver_id: ReceiverId,
    /// 1-based.
    pub segment_index: u32,
    pub segment_total: u32,
    pub records: Vec<DetectionRecord>,
}

impl SmsPayload {
    /// `T1|RX1|1/2|B-01:3:10;B-02:1:40`
    pub fn to_wire(&self) -> String {
        let body: Vec<String> = self.records.iter().map(DetectionRecord::wire).collect();
        format!(
            "T{}|{}|{}/{}|{}",
            self.version,
            self.receiver_id,
            self.segment_index,
            self.segment_total,
            body.join(";")
        )
    }
}

fn digits(n: usize) -> usize {
    n.to_string().len()
}

/// Splits records across as few segments as greedy packing allows while
/// keeping every segment within 160 septets.
pub fn encode_sms(receiver_id: &ReceiverId, records: &[DetectionRecord]) -> Result<Vec<SmsPayload>, ProtocolError> {
    if records.is_empty() {
        return Err(ProtocolError::EmptyPayload);
    }
    let wires: Vec<(String, usize)> = records
        .iter()
        .map(|r| {
            let w = r.wire();
            let n = gsm7_septets(&w).expect("record fields are GSM-7 clean");
            (w, n)
        })
        .collect();
    let fixed = gsm7_septets(&format!("T{WIRE_VERSION}|{receiver_id}||/")).expect("header is GSM-7 clean");
    // header width depends on how many segments there are; grow until stable
    let mut width = 1;
    loop {
        let budget = MAX_SEGMENT_SEPTETS - fixed - 2 * width;
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut used = 0;
        for (i, (w, n)) in wires.iter().enumerate() {
            if *n > budget {
                return Err(ProtocolError::RecordTooLarge(w.clone()));
            }
            match groups.last_mut() {
                Some(g) if used + 1 + n <= budget => {
                    g.push(i);
                    used += 1 + n;
                }
                _ => {
                    groups.push(vec![i]);
                    used = *n;
                }
            }
        }
        if digits(groups.len()) <= width {
            let total = groups.len() as u32;
            let payloads: Vec<SmsPayload> = groups
                .into_iter()
                .enumerate()
                .map(|(k, g)| SmsPayload {
                    version: WIRE_VERSION,
                    receiver_id: receiver_id.clone(),
                    segment_index: k as u32 + 1,
                    segment_total: total,
                    records: g.into_iter().map(|i| records[i].clone()).collect(),
                })
                .collect();
            debug_assert!(payloads.iter().all(|p| gsm7_septets(&p.to_wire()).is_some_and(|n| n <= MAX_SEGMENT_SEPTETS)));
            return Ok(payloads);
        }
        width += 1;
    }
}

pub fn encode_sms_wire(receiver_id: &ReceiverId, records: &[DetectionRecord]) -> Result<Vec<String>, ProtocolError> {
    Ok(encode_sms(receiver_id, records)?.iter().map(SmsPayload::to_wire).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedMessage {
    pub receiver_id: ReceiverId,
    pub records: Vec<DetectionRecord>,
    /// 1-based indices never received.
    pub missing: Vec<u32>,
    pub diagnostics: Vec<String>,
}

impl DecodedMessage {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }
}

struct Header<'a> {
    version: u8,
    receiver: &'a str,
    index: u32,
    total: u32,
    body: &'a str,
}

fn parse_header(seg: &str) -> Result<Header<'_>, String> {
    let mut parts = seg.splitn(4, '|');
    let (Some(v), Some(rx), Some(pos), Some(body)) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err("expected 4 `|`-separated fields".into());
    };
    let version = v.strip_prefix('T').and_then(|n| n.parse().ok()).ok_or_else(|| format!("bad version `{v}`"))?;
    let (i, t) = pos.split_once('/').ok_or_else(|| format!("bad segment position `{pos}`"))?;
    let index: u32 = i.parse().map_err(|_| format!("bad segment index `{i}`"))?;
    let total: u32 = t.parse().map_err(|_| format!("bad segment total `{t}`"))?;
    if index == 0 || index > total {
        return Err(format!("segment {index}/{total} out of range"));
    }
    Ok(Header { version, receiver: rx, index, total, body })
}

fn parse_record(s: &str) -> Result<DetectionRecord, String> {
    let f: Vec<&str> = s.split(':').collect();
    let [id, count, first] = f.as_slice() else {
        return Err(format!("record `{s}`: expected id:count:first_seen"));
    };
    let beacon = BeaconId::new(id).map_err(|e| format!("record `{s}`: {e}"))?;
    let count: u32 = count.parse().map_err(|_| format!("record `{s}`: bad count"))?;
    if count == 0 {
        return Err(format!("record `{s}`: count must be at least 1"));
    }
    let first_seen = first.parse().map_err(|_| format!("record `{s}`: bad first_seen"))?;
    Ok(DetectionRecord { beacon, first_seen, count })
}

/// Reassembles a message from raw segments in any order. Duplicates are
/// ignored, missing segments reported, malformed records skipped with a
/// diagnostic.
pub fn decode_sms<S: AsRef<str>>(segments: &[S]) -> Result<DecodedMessage, ProtocolError> {
    let mut diagnostics = Vec::new();
    let mut agreed: Option<(u8, ReceiverId, u32)> = None;
    let mut bodies: BTreeMap<u32, &str> = BTreeMap::new();
    for raw in segments {
        let seg = raw.as_ref().trim_end_matches(['\r', '\n']);
        let h = match parse_header(seg) {
            Ok(h) => h,
            Err(e) => {
                diagnostics.push(format!("skipped segment `{seg}`: {e}"));
                continue;
            }
        };
        let rx = match ReceiverId::new(h.receiver) {
            Ok(rx) => rx,
            Err(e) => {
                diagnostics.push(format!("skipped segment `{seg}`: {e}"));
                continue;
            }
        };
        match &agreed {
            None => agreed = Some((h.version, rx, h.total)),
            Some((v, r, t)) => {
                if *v != h.version {
                    return Err(ProtocolError::Inconsistent("version"));
                }
                if *r != rx {
                    return Err(ProtocolError::Inconsistent("receiver id"));
                }
                if *t != h.total {
                    return Err(ProtocolError::Inconsistent("segment total"));
                }
            }
        }
        match bodies.get(&h.index) {
            Some(prev) if *prev != h.body => diagnostics.push(format!("segment {} repeated with different content; kept first", h.index)),
            Some(_) => {}
            None => {
                bodies.insert(h.index, h.body);
            }
        }
    }
    let (version, receiver_id, total) = agreed.ok_or(ProtocolError::NoSegments)?;
    if version != WIRE_VERSION {
        diagnostics.push(format!("wire version {version} is newer than {WIRE_VERSION}; decoded as {WIRE_VERSION}"));
    }
    let mut records = Vec::new();
    for body in bodies.values() {
        for item in body.split(';').filter(|s| !s.is_empty()) {
            match parse_record(item) {
                Ok(r) => records.push(r),
                Err(e) => diagnostics.push(e),
            }
        }
    }
    let missing = (1..=total).filter(|i| !bodies.contains_key(i)).collect();
    Ok(DecodedMessage { receiver_id, records, missing, diagnostics })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReceiverMode {
    Scanning,
    Reporting,
    Idle,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReceiverEvent {
    Sighting { beacon: BeaconId, rssi_dbm: f64, t: u32 },
    GsmUp { t: u32 },
    GsmDown { t: u32 },
    Tick { t: u32 },
}

impl ReceiverEvent {
    pub fn time(&self) -> u32 {
        match self {
            ReceiverEvent::Sighting { t, .. }
            | ReceiverEvent::GsmUp { t }
            | ReceiverEvent::GsmDown { t }
            | ReceiverEvent::Tick { t } => *t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepOutput {
    pub payloads: Vec<SmsPayload>,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverState {
    pub receiver_id: ReceiverId,
    pub mode: ReceiverMode,
    /// Ordered by first_seen.
    pub buffer: Vec<DetectionRecord>,
    pub gsm_available: bool,
    pub dedup_window_s: u32,
    /// Last sighting of each beacon's open record: (buffer index, time).
    open: BTreeMap<BeaconId, (usize, u32)>,
    clock: Option<u32>,
}

impl ReceiverState {
    pub fn new(receiver_id: ReceiverId) -> Self {
        ReceiverState::with_window(receiver_id, DEFAULT_DEDUP_WINDOW_S as u32)
    }

    pub fn with_window(receiver_id: ReceiverId, dedup_window_s: u32) -> Self {
        ReceiverState {
            receiver_id,
            mode: ReceiverMode::Scanning,
            buffer: Vec::new(),
            gsm_available: false,
            dedup_window_s,
            open: BTreeMap::new(),
            clock: None,
        }
    }

    /// Applies one event. Out-of-order events leave the state untouched and
    /// come back with a diagnostic.
    pub fn step(&mut self, event: &ReceiverEvent) -> StepOutput {
        let t = event.time();
        if let Some(last) = self.clock.filter(|&last| t < last) {
            return StepOutput { payloads: Vec::new(), diagnostic: Some(format!("event at t={t}s rejected: clock already at {last}s")) };
        }
        self.clock = Some(t);
        let mut out = StepOutput::default();
        match event {
            ReceiverEvent::Sighting { beacon, .. } => self.sight(beacon, t),
            ReceiverEvent::GsmUp { .. } => {
                self.gsm_available = true;
                out.payloads = self.flush();
            }
            ReceiverEvent::GsmDown { .. } => self.gsm_available = false,
            ReceiverEvent::Tick { .. } => {
                if self.gsm_available {
                    out.payloads = self.flush();
                }
            }
        }
        self.mode = match (self.gsm_available, self.buffer.is_empty()) {
            (false, _) => ReceiverMode::Scanning,
            (true, false) => ReceiverMode::Reporting,
            (true, true) => ReceiverMode::Idle,
        };
        out
    }

    fn sight(&mut self, beacon: &BeaconId, t: u32) {
        if let Some((idx, last)) = self.open.get_mut(beacon) {
            if t - *last <= self.dedup_window_s {
                self.buffer[*idx].count += 1;
                *last = t;
                return;
            }
        }
        self.buffer.push(DetectionRecord { beacon: beacon.clone(), first_seen: t, count: 1 });
        self.open.insert(beacon.clone(), (self.buffer.len() - 1, t));
    }

    fn flush(&mut self) -> Vec<SmsPayload> {
        if self.buffer.is_empty() {
            return Vec::new();
        }
        let payloads = encode_sms(&self.receiver_id, &self.buffer).expect("buffered records always encode");
        self.buffer.clear();
        self.open.clear();
        payloads
    }
}

/// Functional form of [`ReceiverState::step`].
pub fn receiver_step(mut state: ReceiverState, event: &ReceiverEvent) -> (ReceiverState, StepOutput) {
    let out = state.step(event);
    (state, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub lat: f64,
    pub lon: f64,
    pub interval_ms: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BeaconRegistry {
    pub entries: BTreeMap<BeaconId, (RegistryEntry, String)>,
}

#[derive(Deserialize)]
struct RegistryRow {
    beacon_id: BeaconId,
    lat: f64,
    lon: f64,
    interval_ms: u32,
    preset: String,
}

impl BeaconRegistry {
    /// `beacon_id,lat,lon,interval_ms,preset`
    pub fn from_csv<R: std::io::Read>(reader: R) -> Result<Self, StoreError> {
        let mut entries = BTreeMap::new();
        for row in csv::Reader::from_reader(reader).deserialize() {
            let row: RegistryRow = row?;
            let entry = RegistryEntry { lat: row.lat, lon: row.lon, interval_ms: row.interval_ms };
            if entries.insert(row.beacon_id.clone(), (entry, row.preset)).is_some() {
                return Err(StoreError::DuplicateBeacon(row.beacon_id));
            }
        }
        Ok(BeaconRegistry { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        BeaconRegistry::from_csv(File::open(path)?)
    }

    pub fn insert(&mut self, id: BeaconId, lat: f64, lon: f64, interval_ms: u32, preset: &str) {
        self.entries.insert(id, (RegistryEntry { lat, lon, interval_ms }, preset.to_string()));
    }

    pub fn locate(&self, id: &BeaconId) -> Option<(f64, f64)> {
        self.entries.get(id).map(|(e, _)| (e.lat, e.lon))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventKey {
    pub receiver_id: ReceiverId,
    /// Unix seconds.
    pub received_at: i64,
    pub beacon: BeaconId,
    pub first_seen_s: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    #[serde(flatten)]
    pub key: EventKey,
    pub count: u32,
    /// (lat, lon); `None` while the beacon is unregistered.
    pub position: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionStore {
    pub events: BTreeMap<EventKey, DetectionEvent>,
    pub quarantine: BTreeMap<EventKey, DetectionEvent>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MergeSummary {
    pub added: Vec<DetectionEvent>,
    pub duplicates: usize,
}

/// Merges decoded records. Unregistered beacons land in quarantine.
/// Re-merging the same (receiver, records, received_at) adds nothing.
pub fn merge_detections(
    store: &mut DetectionStore,
    receiver_id: &ReceiverId,
    records: &[DetectionRecord],
    registry: &BeaconRegistry,
    received_at: DateTime<Utc>,
) -> MergeSummary {
    let mut summary = MergeSummary::default();
    for r in records {
        let key = EventKey {
            receiver_id: receiver_id.clone(),
            received_at: received_at.timestamp(),
            beacon: r.beacon.clone(),
            first_seen_s: r.first_seen,
        };
        let position = registry.locate(&r.beacon);
        let event = DetectionEvent { key: key.clone(), count: r.count, position };
        if store.insert(event.clone()) {
            summary.added.push(event);
        } else {
            summary.duplicates += 1;
        }
    }
    summary
}

impl DetectionStore {
    /// Returns false if the key was already present. A repeated key keeps
    /// the larger count so merge order does not matter.
    fn insert(&mut self, event: DetectionEvent) -> bool {
        let target = if event.position.is_some() { &mut self.events } else { &mut self.quarantine };
        match target.get_mut(&event.key) {
            Some(existing) => {
                existing.count = existing.count.max(event.count);
                false
            }
            None => {
                target.insert(event.key.clone(), event);
                true
            }
        }
    }

    pub fn len(&self) -> usize {
        self.events.len() + self.quarantine.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reads a newline-delimited JSON store; a missing file is an empty store.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let mut store = DetectionStore::default();
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(store),
            Err(e) => return Err(e.into()),
        };
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let event: DetectionEvent =
                serde_json::from_str(&line).map_err(|e| StoreError::Corrupt { line: i + 1, message: e.to_string() })?;
            store.insert(event);
        }
        Ok(store)
    }

    /// Appends events to the store file.
    pub fn append(path: impl AsRef<Path>, events: &[DetectionEvent]) -> Result<(), StoreError> {
        if events.is_empty() {
            return Ok(());
        }
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        let mut buf = String::new();
        for e in events {
            buf.push_str(&serde_json::to_string(e).expect("events serialise"));
            buf.push('\n');
        }
        f.write_all(buf.as_bytes())?;
        Ok(())
    }

    /// Re-resolves quarantined events after a registry update.
    pub fn release_quarantine(&mut self, registry: &BeaconRegistry) -> Vec<DetectionEvent> {
        let ready: Vec<EventKey> = self.quarantine.keys().filter(|k| registry.locate(&k.beacon).is_some()).cloned().collect();
        let mut moved = Vec::new();
        for k in ready {
            let mut e = self.quarantine.remove(&k).expect("key listed");
            e.position = registry.locate(&k.beacon);
            self.insert(e.clone());
            moved.push(e);
        }
        moved
    }

    /// One Point per located event.
    pub fn to_geojson(&self) -> String {
        let features = self
            .events
            .values()
            .filter_map(|e| {
                let (lat, lon) = e.position?;
                let mut props = JsonObject::new();
                props.insert("beacon_id".into(), e.key.beacon.as_str().into());
                props.insert("receiver_id".into(), e.key.receiver_id.as_str().into());
                props.insert("count".into(), e.count.into());
                props.insert("first_seen_s".into(), e.key.first_seen_s.into());
                props.insert("received_at".into(), rfc3339(e.key.received_at).into());
                Some(Feature {
                    bbox: None,
                    geometry: Some(Geometry::new(Value::Point(vec![lon, lat]))),
                    id: None,
                    properties: Some(props),
                    foreign_members: None,
                })
            })
            .collect();
        GeoJson::FeatureCollection(FeatureCollection { bbox: None, features, foreign_members: None }).to_string()
    }

    pub fn summary(&self) -> String {
        let mut out = format!("{} located events, {} quarantined\n", self.events.len(), self.quarantine.len());
        let unknown: BTreeSet<&BeaconId> = self.quarantine.keys().map(|k| &k.beacon).collect();
        for b in unknown {
            let _ = writeln!(out, "quarantined beacon {b}");
        }
        out
    }
}

fn rfc3339(unix: i64) -> String {
    DateTime::from_timestamp(unix, 0).map(|t| t.to_rfc3339()).unwrap_or_else(|| unix.to_string())
}

/// Store with one writer at a time and any number of readers.
#[derive(Debug, Clone, Default)]
pub struct SharedStore(Arc<RwLock<DetectionStore>>);

impl SharedStore {
    pub fn new(store: DetectionStore) -> Self {
        SharedStore(Arc::new(RwLock::new(store)))
    }

    pub fn merge(
        &self,
        receiver_id: &ReceiverId,
        records: &[DetectionRecord],
        registry: &BeaconRegistry,
        received_at: DateTime<Utc>,
    ) -> MergeSummary {
        let mut guard = self.0.write().unwrap_or_else(|p| p.into_inner());
        merge_detections(&mut guard, receiver_id, records, registry, received_at)
    }

    pub fn read<T>(&self, f: impl FnOnce(&DetectionStore) -> T) -> T {
        f(&self.0.read().unwrap_or_else(|p| p.into_inner()))
    }

    pub fn snapshot(&self) -> DetectionStore {
        self.read(Clone::clone)
    }
}
