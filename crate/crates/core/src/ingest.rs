//! Parsing of the two per-day log formats and the file-backed day store.
//!
//! Two canonical JSON documents are understood:
//!
//! * the minute log (`"source":"pedometer"`), one step count per minute of the day;
//! * the storyline (`"source":"storyline"`), a sparse list of location and
//!   transition segments, emitted only when the wearer changes state.
//!
//! Parsers are pure. [`Store`] persists validated records as canonical JSON
//! under `<store>/days/<user>/<date>.json` with an `index.json` alongside.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

/// Number of minute slots in a calendar day.
pub const MINUTES_PER_DAY: usize = 1440;
/// Seconds in a calendar day; also the largest valid segment end (`24:00:00`).
pub const SECONDS_PER_DAY: u32 = 86_400;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("minute {0} appears more than once")]
    DuplicateMinute(u16),
    #[error("segments overlap: {first} and {second}")]
    OverlappingSegments { first: String, second: String },
    #[error("conflicting record for user {user} on {date}")]
    ConflictingDuplicate { user: String, date: NaiveDate },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Which tracker format a day came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Pedometer,
    Storyline,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Pedometer => f.write_str("pedometer"),
            Source::Storyline => f.write_str("storyline"),
        }
    }
}

/// Time of day in whole seconds since midnight, `0..=86400`.
///
/// `24:00:00` is representable so a segment can end exactly at midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeOfDay(u32);

impl TimeOfDay {
    pub const MIDNIGHT: TimeOfDay = TimeOfDay(0);
    pub const END_OF_DAY: TimeOfDay = TimeOfDay(SECONDS_PER_DAY);

    pub fn from_seconds(secs: u32) -> Option<Self> {
        (secs <= SECONDS_PER_DAY).then_some(TimeOfDay(secs))
    }

    pub fn from_hms(h: u32, m: u32, s: u32) -> Option<Self> {
        if m >= 60 || s >= 60 {
            return None;
        }
        Self::from_seconds(h * 3600 + m * 60 + s)
    }

    pub fn seconds(self) -> u32 {
        self.0
    }
}

impl fmt::Display for TimeOfDay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.0;
        write!(f, "{:02}:{:02}:{:02}", s / 3600, (s / 60) % 60, s % 60)
    }
}

impl FromStr for TimeOfDay {
    type Err = IngestError;

    fn from_str(text: &str) -> Result<Self> {
        let bad = || IngestError::InvalidValue(format!("bad time of day {text:?}"));
        let mut parts = text.split(':');
        let mut field = || -> Result<u32> {
            let p = parts.next().ok_or_else(bad)?;
            if p.len() != 2 || !p.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            p.parse().map_err(|_| bad())
        };
        let (h, m, s) = (field()?, field()?, field()?);
        if parts.next().is_some() {
            return Err(bad());
        }
        TimeOfDay::from_hms(h, m, s).ok_or_else(bad)
    }
}

impl Serialize for TimeOfDay {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TimeOfDay {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One day of minute-resolution pedometer readings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinuteSeries {
    pub user_id: String,
    pub date: NaiveDate,
    steps_per_minute: Vec<u32>,
}

impl MinuteSeries {
    /// Builds a series, enforcing the 1440-slot invariant.
    pub fn new(user_id: impl Into<String>, date: NaiveDate, steps_per_minute: Vec<u32>) -> Result<Self> {
        if steps_per_minute.len() != MINUTES_PER_DAY {
            return Err(IngestError::InvalidValue(format!(
                "minute series must have {MINUTES_PER_DAY} entries, got {}",
                steps_per_minute.len()
            )));
        }
        let user_id = user_id.into();
        validate_user_id(&user_id)?;
        Ok(MinuteSeries {
            user_id,
            date,
            steps_per_minute,
        })
    }

    pub fn steps_per_minute(&self) -> &[u32] {
        &self.steps_per_minute
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_minute.iter().map(|&s| u64::from(s)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Location,
    Transition,
}

/// A contiguous interval spent at one place or moving between places.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub user_id: String,
    pub date: NaiveDate,
    pub kind: SegmentKind,
    pub start: TimeOfDay,
    pub end: TimeOfDay,
    pub steps: u32,
    pub place_name: Option<String>,
    pub place_type: Option<String>,
}

impl Segment {
    pub fn duration_seconds(&self) -> u32 {
        self.end.seconds() - self.start.seconds()
    }

    fn describe(&self) -> String {
        format!("{:?} {}-{}", self.kind, self.start, self.end)
    }
}

/// A storyline day: the validated, start-sorted segments for one user and date.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StorylineDay {
    pub user_id: String,
    pub date: NaiveDate,
    pub segments: Vec<Segment>,
}

impl StorylineDay {
    pub fn total_steps(&self) -> u64 {
        self.segments.iter().map(|s| u64::from(s.steps)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    #[serde(rename = "user")]
    pub user_id: String,
    #[serde(rename = "goal", default, skip_serializing_if = "Option::is_none")]
    pub step_goal: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motivation: Option<String>,
}

impl UserProfile {
    pub fn new(user_id: impl Into<String>) -> Self {
        UserProfile {
            user_id: user_id.into(),
            step_goal: None,
            gender: None,
            age: None,
            motivation: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_user_id(&self.user_id)?;
        if self.step_goal == Some(0) {
            return Err(IngestError::InvalidValue("step goal must be positive".into()));
        }
        if self.age == Some(0) {
            return Err(IngestError::InvalidValue("age must be positive".into()));
        }
        Ok(())
    }
}

/// A parsed day in either format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DayRecord {
    Pedometer(MinuteSeries),
    Storyline(StorylineDay),
}

impl DayRecord {
    pub fn user_id(&self) -> &str {
        match self {
            DayRecord::Pedometer(m) => &m.user_id,
            DayRecord::Storyline(s) => &s.user_id,
        }
    }

    pub fn date(&self) -> NaiveDate {
        match self {
            DayRecord::Pedometer(m) => m.date,
            DayRecord::Storyline(s) => s.date,
        }
    }

    pub fn source(&self) -> Source {
        match self {
            DayRecord::Pedometer(_) => Source::Pedometer,
            DayRecord::Storyline(_) => Source::Storyline,
        }
    }

    pub fn total_steps(&self) -> u64 {
        match self {
            DayRecord::Pedometer(m) => m.total_steps(),
            DayRecord::Storyline(s) => s.total_steps(),
        }
    }

    /// Canonical JSON text for this record.
    pub fn to_json(&self) -> String {
        match self {
            DayRecord::Pedometer(m) => serialize_pedometer_day(m),
            DayRecord::Storyline(s) => serialize_storyline_day(s),
        }
    }
}

// Wire schemas. Step and minute fields are signed so negatives reach validation
// instead of failing as a schema mismatch.

#[derive(Serialize, Deserialize)]
struct MinuteDoc {
    user: String,
    date: NaiveDate,
    source: Source,
    entries: Vec<MinuteEntry>,
}

#[derive(Serialize, Deserialize)]
struct MinuteEntry {
    m: i64,
    steps: i64,
}

#[derive(Serialize, Deserialize)]
struct StorylineDoc {
    user: String,
    date: NaiveDate,
    source: Source,
    segments: Vec<SegmentEntry>,
}

#[derive(Serialize, Deserialize)]
struct SegmentEntry {
    kind: SegmentKind,
    start: String,
    end: String,
    steps: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    place: Option<PlaceEntry>,
}

#[derive(Serialize, Deserialize)]
struct PlaceEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
}

fn validate_user_id(user: &str) -> Result<()> {
    let ok = !user.is_empty()
        && !user.starts_with('.')
        && user
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.'));
    if ok {
        Ok(())
    } else {
        Err(IngestError::InvalidValue(format!(
            "user id {user:?} must be non-empty ASCII alphanumerics, '_', '-' or '.'"
        )))
    }
}

fn step_count(raw: i64, what: &str) -> Result<u32> {
    u32::try_from(raw).map_err(|_| IngestError::InvalidValue(format!("{what}: step count {raw} out of range")))
}

/// Parses a canonical minute-log document. Minutes missing from the document count zero steps.
pub fn parse_pedometer_day(document: &str) -> Result<MinuteSeries> {
    let doc: MinuteDoc =
        serde_json::from_str(document).map_err(|e| IngestError::MalformedDocument(e.to_string()))?;
    if doc.source != Source::Pedometer {
        return Err(IngestError::MalformedDocument(format!(
            "expected source \"pedometer\", found \"{}\"",
            doc.source
        )));
    }
    let mut steps = vec![0u32; MINUTES_PER_DAY];
    let mut seen = vec![false; MINUTES_PER_DAY];
    for entry in &doc.entries {
        if !(0..MINUTES_PER_DAY as i64).contains(&entry.m) {
            return Err(IngestError::InvalidValue(format!(
                "minute index {} outside 0..{}",
                entry.m,
                MINUTES_PER_DAY - 1
            )));
        }
        let m = entry.m as usize;
        let count = step_count(entry.steps, &format!("minute {m}"))?;
        if seen[m] {
            return Err(IngestError::DuplicateMinute(m as u16));
        }
        seen[m] = true;
        steps[m] = count;
    }
    MinuteSeries::new(doc.user, doc.date, steps)
}

/// Canonical minute-log JSON; only non-zero minutes are listed.
pub fn serialize_pedometer_day(series: &MinuteSeries) -> String {
    let doc = MinuteDoc {
        user: series.user_id.clone(),
        date: series.date,
        source: Source::Pedometer,
        entries: series
            .steps_per_minute
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > 0)
            .map(|(m, &s)| MinuteEntry {
                m: m as i64,
                steps: i64::from(s),
            })
            .collect(),
    };
    serde_json::to_string(&doc).expect("minute document serializes")
}

/// Parses a canonical storyline document into start-sorted, non-overlapping segments.
///
/// Gaps between segments are kept as gaps. A segment whose end is not after
/// its start (including one that wraps past midnight) is rejected.
pub fn parse_storyline_day(document: &str) -> Result<Vec<Segment>> {
    parse_storyline_record(document).map(|day| day.segments)
}

/// Like [`parse_storyline_day`], keeping the document's user and date so an
/// empty segment list still identifies its day.
pub fn parse_storyline_record(document: &str) -> Result<StorylineDay> {
    let doc: StorylineDoc =
        serde_json::from_str(document).map_err(|e| IngestError::MalformedDocument(e.to_string()))?;
    if doc.source != Source::Storyline {
        return Err(IngestError::MalformedDocument(format!(
            "expected source \"storyline\", found \"{}\"",
            doc.source
        )));
    }
    validate_user_id(&doc.user)?;
    let mut segments = Vec::with_capacity(doc.segments.len());
    for entry in doc.segments {
        let start: TimeOfDay = entry.start.parse()?;
        let end: TimeOfDay = entry.end.parse()?;
        if end <= start {
            return Err(IngestError::InvalidValue(format!(
                "segment {start}-{end} does not end after it starts (midnight-crossing segments must be split per day)"
            )));
        }
        let steps = step_count(entry.steps, &format!("segment {start}-{end}"))?;
        let (place_name, place_type) = match (entry.kind, entry.place) {
            (SegmentKind::Location, Some(p)) => (p.name, p.kind),
            (SegmentKind::Transition, Some(_)) => {
                return Err(IngestError::InvalidValue(format!(
                    "transition {start}-{end} carries a place"
                )))
            }
            (_, None) => (None, None),
        };
        segments.push(Segment {
            user_id: doc.user.clone(),
            date: doc.date,
            kind: entry.kind,
            start,
            end,
            steps,
            place_name,
            place_type,
        });
    }
    segments.sort_by_key(|s| (s.start, s.end));
    for pair in segments.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(IngestError::OverlappingSegments {
                first: pair[0].describe(),
                second: pair[1].describe(),
            });
        }
    }
    Ok(StorylineDay {
        user_id: doc.user,
        date: doc.date,
        segments,
    })
}

pub fn serialize_storyline_day(day: &StorylineDay) -> String {
    let doc = StorylineDoc {
        user: day.user_id.clone(),
        date: day.date,
        source: Source::Storyline,
        segments: day
            .segments
            .iter()
            .map(|s| SegmentEntry {
                kind: s.kind,
                start: s.start.to_string(),
                end: s.end.to_string(),
                steps: i64::from(s.steps),
                place: (s.place_name.is_some() || s.place_type.is_some()).then(|| PlaceEntry {
                    name: s.place_name.clone(),
                    kind: s.place_type.clone(),
                }),
            })
            .collect(),
    };
    serde_json::to_string(&doc).expect("storyline document serializes")
}

pub fn parse_profile(document: &str) -> Result<UserProfile> {
    let profile: UserProfile =
        serde_json::from_str(document).map_err(|e| IngestError::MalformedDocument(e.to_string()))?;
    profile.validate()?;
    Ok(profile)
}

/// Anything the `ingest` command can be handed.
#[derive(Debug, Clone, PartialEq)]
pub enum Document {
    Day(DayRecord),
    Profile(UserProfile),
}

/// Dispatches on the `source` field; documents without one are read as profiles.
pub fn parse_document(document: &str) -> Result<Document> {
    let value: serde_json::Value =
        serde_json::from_str(document).map_err(|e| IngestError::MalformedDocument(e.to_string()))?;
    match value.get("source").and_then(|s| s.as_str()) {
        Some("pedometer") => Ok(Document::Day(DayRecord::Pedometer(parse_pedometer_day(document)?))),
        Some("storyline") => Ok(Document::Day(DayRecord::Storyline(parse_storyline_record(document)?))),
        Some(other) => Err(IngestError::MalformedDocument(format!("unknown source {other:?}"))),
        None if value.get("date").is_none() => Ok(Document::Profile(parse_profile(document)?)),
        None => Err(IngestError::MalformedDocument("day document without a source".into())),
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct StoreIndex {
    days: Vec<IndexEntry>,
    profiles: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
struct IndexEntry {
    user: String,
    date: NaiveDate,
    source: Source,
}

/// Directory-backed store of canonical day and profile documents.
///
/// Writes take `&mut self`, so one handle serializes its own writers.
/// Every file is written to a temporary name and renamed into place.
#[derive(Debug)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        for dir in [root.join("days"), root.join("profiles")] {
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        Ok(Store { root })
    }

    /// Opens an existing store without creating anything.
    pub fn open_existing(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        if !root.is_dir() {
            return Err(IngestError::Io {
                path: root,
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "store directory not found"),
            });
        }
        Ok(Store { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn day_path(&self, user: &str, date: NaiveDate) -> PathBuf {
        self.root.join("days").join(user).join(format!("{date}.json"))
    }

    fn profile_path(&self, user: &str) -> PathBuf {
        self.root.join("profiles").join(format!("{user}.json"))
    }

    fn index_path(&self) -> PathBuf {
        self.root.join("index.json")
    }

    /// Upserts day records keyed by (user, date, source).
    ///
    /// Identical re-stores are no-ops. A key whose stored content differs is a
    /// [`IngestError::ConflictingDuplicate`] unless `overwrite` is set; conflicts
    /// are detected before anything is written. Returns the number of distinct
    /// (user, date) records now held for this call.
    pub fn store_days(&mut self, records: &[DayRecord], overwrite: bool) -> Result<usize> {
        let mut pending: BTreeMap<(String, NaiveDate), (Source, String)> = BTreeMap::new();
        for rec in records {
            let key = (rec.user_id().to_string(), rec.date());
            let text = rec.to_json();
            if let Some((_, prev)) = pending.get(&key) {
                if *prev != text && !overwrite {
                    return Err(IngestError::ConflictingDuplicate {
                        user: key.0,
                        date: key.1,
                    });
                }
            }
            pending.insert(key, (rec.source(), text));
        }

        let mut writes = Vec::new();
        for ((user, date), (source, text)) in &pending {
            let path = self.day_path(user, *date);
            match fs::read_to_string(&path) {
                Ok(existing) if existing == *text => {}
                Ok(_) if !overwrite => {
                    return Err(IngestError::ConflictingDuplicate {
                        user: user.clone(),
                        date: *date,
                    })
                }
                Ok(_) => writes.push((path, text, user, *date, *source)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                    writes.push((path, text, user, *date, *source))
                }
                Err(e) => return Err(io_err(&path)(e)),
            }
        }

        let mut index = self.read_index()?;
        for (path, text, user, date, source) in writes {
            write_atomic(&path, text.as_bytes())?;
            index.days.retain(|e| !(e.user == *user && e.date == date));
            index.days.push(IndexEntry {
                user: user.clone(),
                date,
                source,
            });
        }
        self.write_index(index)?;
        Ok(pending.len())
    }

    /// Upserts profiles with the same conflict rules as [`Store::store_days`].
    pub fn store_profiles(&mut self, profiles: &[UserProfile], overwrite: bool) -> Result<usize> {
        let mut pending: BTreeMap<String, String> = BTreeMap::new();
        for p in profiles {
            p.validate()?;
            let text = serde_json::to_string(p).expect("profile serializes");
            if let Some(prev) = pending.get(&p.user_id) {
                if *prev != text && !overwrite {
                    return Err(IngestError::InvalidValue(format!(
                        "conflicting profiles for user {}",
                        p.user_id
                    )));
                }
            }
            pending.insert(p.user_id.clone(), text);
        }
        let mut writes = Vec::new();
        for (user, text) in &pending {
            let path = self.profile_path(user);
            match fs::read_to_string(&path) {
                Ok(existing) if existing == *text => {}
                Ok(_) if !overwrite => {
                    return Err(IngestError::InvalidValue(format!(
                        "stored profile for user {user} differs (use overwrite)"
                    )))
                }
                Ok(_) => writes.push((path, text, user)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => writes.push((path, text, user)),
                Err(e) => return Err(io_err(&path)(e)),
            }
        }
        let mut index = self.read_index()?;
        for (path, text, user) in writes {
            write_atomic(&path, text.as_bytes())?;
            if !index.profiles.contains(user) {
                index.profiles.push(user.clone());
            }
        }
        self.write_index(index)?;
        Ok(pending.len())
    }

    fn read_index(&self) -> Result<StoreIndex> {
        let path = self.index_path();
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| IngestError::MalformedDocument(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(StoreIndex::default()),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    fn write_index(&self, mut index: StoreIndex) -> Result<()> {
        index.days.sort();
        index.days.dedup();
        index.profiles.sort();
        index.profiles.dedup();
        let text = serde_json::to_string_pretty(&index).expect("index serializes");
        write_atomic(&self.index_path(), text.as_bytes())
    }

    /// Loads every stored day, ordered by (user, date).
    pub fn load_days(&self) -> Result<Vec<DayRecord>> {
        let index = self.read_index()?;
        let mut out = Vec::with_capacity(index.days.len());
        for entry in &index.days {
            let path = self.day_path(&entry.user, entry.date);
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            match parse_document(&text)? {
                Document::Day(day) => out.push(day),
                Document::Profile(_) => {
                    return Err(IngestError::MalformedDocument(format!(
                        "{} holds a profile, not a day",
                        path.display()
                    )))
                }
            }
        }
        Ok(out)
    }

    pub fn load_profiles(&self) -> Result<BTreeMap<String, UserProfile>> {
        let index = self.read_index()?;
        let mut out = BTreeMap::new();
        for user in &index.profiles {
            let path = self.profile_path(user);
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let profile = parse_profile(&text)?;
            out.insert(profile.user_id.clone(), profile);
        }
        Ok(out)
    }

    /// Users with at least one stored day.
    pub fn users(&self) -> Result<BTreeSet<String>> {
        Ok(self.read_index()?.days.into_iter().map(|e| e.user).collect())
    }
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2015, 2, 14).unwrap()
    }

    #[test]
    fn sparse_minute_fill() {
        let doc = r#"{"user":"u1","date":"2015-02-14","source":"pedometer","entries":[{"m":600,"steps":7}]}"#;
        let s = parse_pedometer_day(doc).unwrap();
        assert_eq!(s.steps_per_minute().len(), 1440);
        assert_eq!(s.steps_per_minute()[600], 7);
        assert_eq!(s.total_steps(), 7);
    }

    #[test]
    fn empty_entries_is_all_zero() {
        let doc = r#"{"user":"u1","date":"2015-02-14","source":"pedometer","entries":[]}"#;
        let s = parse_pedometer_day(doc).unwrap();
        assert!(s.steps_per_minute().iter().all(|&v| v == 0));
        assert_eq!(s.steps_per_minute().len(), 1440);
    }

    #[test]
    fn minute_out_of_range() {
        let doc = r#"{"user":"u1","date":"2015-02-14","source":"pedometer","entries":[{"m":1440,"steps":1}]}"#;
        assert!(matches!(parse_pedometer_day(doc), Err(IngestError::InvalidValue(_))));
        let doc = r#"{"user":"u1","date":"2015-02-14","source":"pedometer","entries":[{"m":-1,"steps":1}]}"#;
        assert!(matches!(parse_pedometer_day(doc), Err(IngestError::InvalidValue(_))));
    }

    #[test]
    fn negative_steps_and_duplicates() {
        let doc = r#"{"user":"u1","date":"2015-02-14","source":"pedometer","entries":[{"m":3,"steps":-2}]}"#;
        assert!(matches!(parse_pedometer_day(doc), Err(IngestError::InvalidValue(_))));
        let doc = r#"{"user":"u1","date":"2015-02-14","source":"pedometer","entries":[{"m":3,"steps":2},{"m":3,"steps":2}]}"#;
        assert!(matches!(parse_pedometer_day(doc), Err(IngestError::DuplicateMinute(3))));
    }

    #[test]
    fn malformed_documents() {
        assert!(matches!(parse_pedometer_day("not json"), Err(IngestError::MalformedDocument(_))));
        assert!(matches!(
            parse_pedometer_day(r#"{"user":"u1","date":"2015-02-14","source":"storyline","entries":[]}"#),
            Err(IngestError::MalformedDocument(_))
        ));
        assert!(matches!(
            parse_storyline_day(r#"{"user":"u1","date":"2015-02-14","source":"storyline"}"#),
            Err(IngestError::MalformedDocument(_))
        ));
    }

    const TWO_SEGMENTS: &str = r#"{"user":"u1","date":"2015-02-14","source":"storyline","segments":[
        {"kind":"location","start":"09:30:00","end":"17:00:00","steps":1200,"place":{"name":"office","type":"work"}},
        {"kind":"transition","start":"09:00:00","end":"09:30:00","steps":900}]}"#;

    #[test]
    fn storyline_sorted_by_start() {
        let segs = parse_storyline_day(TWO_SEGMENTS).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].kind, SegmentKind::Transition);
        assert_eq!(segs[0].steps, 900);
        assert_eq!(segs[1].kind, SegmentKind::Location);
        assert_eq!(segs[1].place_type.as_deref(), Some("work"));
        assert_eq!(segs[1].place_name.as_deref(), Some("office"));
    }

    #[test]
    fn storyline_overlap_rejected() {
        let doc = r#"{"user":"u1","date":"2015-02-14","source":"storyline","segments":[
            {"kind":"transition","start":"09:00:00","end":"10:00:00","steps":1},
            {"kind":"transition","start":"09:30:00","end":"11:00:00","steps":1}]}"#;
        assert!(matches!(
            parse_storyline_day(doc),
            Err(IngestError::OverlappingSegments { .. })
        ));
    }

    #[test]
    fn storyline_bad_spans() {
        let wrap = r#"{"user":"u1","date":"2015-02-14","source":"storyline","segments":[
            {"kind":"transition","start":"23:30:00","end":"00:15:00","steps":1}]}"#;
        assert!(matches!(parse_storyline_day(wrap), Err(IngestError::InvalidValue(_))));
        let empty = r#"{"user":"u1","date":"2015-02-14","source":"storyline","segments":[
            {"kind":"transition","start":"10:00:00","end":"10:00:00","steps":1}]}"#;
        assert!(matches!(parse_storyline_day(empty), Err(IngestError::InvalidValue(_))));
        let placed = r#"{"user":"u1","date":"2015-02-14","source":"storyline","segments":[
            {"kind":"transition","start":"10:00:00","end":"11:00:00","steps":1,"place":{"type":"gym"}}]}"#;
        assert!(matches!(parse_storyline_day(placed), Err(IngestError::InvalidValue(_))));
    }

    #[test]
    fn midnight_end_is_allowed() {
        let doc = r#"{"user":"u1","date":"2015-02-14","source":"storyline","segments":[
            {"kind":"location","start":"23:00:00","end":"24:00:00","steps":10,"place":{"type":"home"}}]}"#;
        let segs = parse_storyline_day(doc).unwrap();
        assert_eq!(segs[0].end, TimeOfDay::END_OF_DAY);
        assert!("24:00:01".parse::<TimeOfDay>().is_err());
        assert!("9:00:00".parse::<TimeOfDay>().is_err());
    }

    #[test]
    fn storyline_round_trip() {
        let day = parse_storyline_record(TWO_SEGMENTS).unwrap();
        let again = parse_storyline_record(&serialize_storyline_day(&day)).unwrap();
        assert_eq!(day, again);
    }

    #[test]
    fn document_dispatch() {
        let p = parse_document(r#"{"user":"u1","goal":10000,"gender":"f","age":34,"motivation":"training"}"#).unwrap();
        match p {
            Document::Profile(p) => {
                assert_eq!(p.step_goal, Some(10000));
                assert_eq!(p.age, Some(34));
            }
            other => panic!("expected profile, got {other:?}"),
        }
        assert!(matches!(
            parse_document(r#"{"user":"u1","goal":0}"#),
            Err(IngestError::InvalidValue(_))
        ));
        assert!(matches!(parse_document(TWO_SEGMENTS), Ok(Document::Day(DayRecord::Storyline(_)))));
    }

    fn day(user: &str, d: u32, minute_steps: u32) -> DayRecord {
        let mut v = vec![0; 1440];
        v[100] = minute_steps;
        DayRecord::Pedometer(
            MinuteSeries::new(user, NaiveDate::from_ymd_opt(2015, 2, d).unwrap(), v).unwrap(),
        )
    }

    #[test]
    fn store_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::open(dir.path()).unwrap();
        assert_eq!(store.store_days(&[day("u1", 1, 5)], false).unwrap(), 1);
        assert_eq!(store.store_days(&[day("u1", 1, 5)], false).unwrap(), 1);
        let loaded = store.load_days().unwrap();
        assert_eq!(loaded, vec![day("u1", 1, 5)]);
    }

    #[test]
    fn store_counts_distinct_days() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::open(dir.path()).unwrap();
        let n = store
            .store_days(&[day("u1", 1, 5), day("u1", 2, 5), day("u2", 1, 9)], false)
            .unwrap();
        assert_eq!(n, 3);
        assert!(dir.path().join("days/u2/2015-02-01.json").is_file());
        assert!(dir.path().join("index.json").is_file());
        assert_eq!(store.users().unwrap().len(), 2);
    }

    #[test]
    fn store_conflict_needs_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::open(dir.path()).unwrap();
        store.store_days(&[day("u1", 1, 5)], false).unwrap();
        let err = store.store_days(&[day("u1", 2, 1), day("u1", 1, 6)], false).unwrap_err();
        assert!(matches!(err, IngestError::ConflictingDuplicate { .. }));
        // nothing from the rejected batch was written
        assert_eq!(store.load_days().unwrap().len(), 1);
        store.store_days(&[day("u1", 1, 6)], true).unwrap();
        assert_eq!(store.load_days().unwrap(), vec![day("u1", 1, 6)]);
    }

    #[test]
    fn profiles_persist() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::open(dir.path()).unwrap();
        let mut p = UserProfile::new("u1");
        p.step_goal = Some(8000);
        store.store_profiles(&[p.clone()], false).unwrap();
        assert_eq!(store.load_profiles().unwrap()["u1"], p);
        assert!(dir.path().join("profiles/u1.json").is_file());
    }

    #[test]
    fn rejects_unsafe_user_ids() {
        assert!(MinuteSeries::new("../x", date(), vec![0; 1440]).is_err());
        assert!(MinuteSeries::new("", date(), vec![0; 1440]).is_err());
        assert!(MinuteSeries::new("ok_user-1", date(), vec![0; 1439]).is_err());
    }
}
