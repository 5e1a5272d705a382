//! Hourly bucketing of raw days into a fixed 24-slot step vector.
//!
//! Minute logs are summed per hour. Storyline segments are spread over every
//! hour bucket their half-open span `[start, end)` touches: by default each
//! touched bucket receives an equal share of the segment's steps, regardless
//! of how many minutes fall inside it. Buckets are real-valued so the daily
//! total is preserved exactly up to float rounding.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::ingest::{DayRecord, MinuteSeries, Segment, SegmentKind, Source, StorylineDay};

pub const HOURS_PER_DAY: usize = 24;
const SECONDS_PER_HOUR: u32 = 3600;

#[derive(Debug, thiserror::Error)]
pub enum BucketError {
    #[error("segment {start}-{end} spans no hour bucket")]
    EmptySpan { start: String, end: String },
    #[error("malformed weather fixture: {0}")]
    MalformedFixture(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeatherCondition {
    Clear,
    Cloudy,
    Rain,
    Snow,
    Fog,
}

impl WeatherCondition {
    pub const ALL: [WeatherCondition; 5] = [
        WeatherCondition::Clear,
        WeatherCondition::Cloudy,
        WeatherCondition::Rain,
        WeatherCondition::Snow,
        WeatherCondition::Fog,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WeatherCondition::Clear => "clear",
            WeatherCondition::Cloudy => "cloudy",
            WeatherCondition::Rain => "rain",
            WeatherCondition::Snow => "snow",
            WeatherCondition::Fog => "fog",
        }
    }
}

impl fmt::Display for WeatherCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeatherCondition {
    type Err = BucketError;

    fn from_str(s: &str) -> Result<Self, BucketError> {
        WeatherCondition::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| BucketError::MalformedFixture(format!("unknown condition {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherObs {
    pub condition: WeatherCondition,
    /// Degrees Celsius.
    pub temperature: f64,
}

/// Canonical per-day hourly representation shared by both sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyDay {
    pub user_id: String,
    pub date: NaiveDate,
    pub buckets: [f64; HOURS_PER_DAY],
    pub steps_today: f64,
    pub source: Source,
    /// Dominant location type per hour; `None` for pedometer days.
    pub hourly_place_type: Option<Vec<Option<String>>>,
    pub weather: Option<WeatherObs>,
}

impl HourlyDay {
    /// Steps accumulated in hours `0..=hour`.
    pub fn cumulative_to(&self, hour: usize) -> f64 {
        self.buckets[..=hour].iter().sum()
    }
}

/// How a multi-hour segment's steps are divided among the buckets it touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// Equal share per touched bucket.
    #[default]
    EqualPerBucket,
    /// Share proportional to the seconds spent inside each bucket.
    DurationWeighted,
}

/// Sums a minute series into hourly buckets.
pub fn bucket_minutes(series: &MinuteSeries) -> HourlyDay {
    let mut buckets = [0.0; HOURS_PER_DAY];
    for (hour, chunk) in series.steps_per_minute().chunks(60).enumerate() {
        buckets[hour] = chunk.iter().map(|&s| u64::from(s)).sum::<u64>() as f64;
    }
    HourlyDay {
        user_id: series.user_id.clone(),
        date: series.date,
        steps_today: buckets.iter().sum(),
        buckets,
        source: Source::Pedometer,
        hourly_place_type: None,
        weather: None,
    }
}

/// First and last hour bucket touched by the half-open span `[start, end)`.
fn touched_hours(seg: &Segment) -> Result<(usize, usize), BucketError> {
    let (start, end) = (seg.start.seconds(), seg.end.seconds());
    if end <= start {
        return Err(BucketError::EmptySpan {
            start: seg.start.to_string(),
            end: seg.end.to_string(),
        });
    }
    Ok(((start / SECONDS_PER_HOUR) as usize, ((end - 1) / SECONDS_PER_HOUR) as usize))
}

fn overlap_seconds(seg: &Segment, hour: usize) -> u32 {
    let lo = hour as u32 * SECONDS_PER_HOUR;
    let hi = lo + SECONDS_PER_HOUR;
    seg.end.seconds().min(hi).saturating_sub(seg.start.seconds().max(lo))
}

/// Spreads segment steps over hour buckets according to `rule`.
pub fn bucket_segments(segments: &[Segment], rule: SplitRule) -> Result<[f64; HOURS_PER_DAY], BucketError> {
    let mut buckets = [0.0; HOURS_PER_DAY];
    for seg in segments {
        let (first, last) = touched_hours(seg)?;
        let steps = f64::from(seg.steps);
        match rule {
            SplitRule::EqualPerBucket => {
                let share = steps / (last - first + 1) as f64;
                for b in &mut buckets[first..=last] {
                    *b += share;
                }
            }
            SplitRule::DurationWeighted => {
                let duration = f64::from(seg.duration_seconds());
                for (h, b) in buckets.iter_mut().enumerate().take(last + 1).skip(first) {
                    *b += steps * f64::from(overlap_seconds(seg, h)) / duration;
                }
            }
        }
    }
    Ok(buckets)
}

/// For each hour, the place type of the typed location segment overlapping it
/// the longest. Ties go to the earlier segment.
pub fn dominant_place_types(segments: &[Segment]) -> Vec<Option<String>> {
    let mut best: Vec<Option<(u32, &str)>> = vec![None; HOURS_PER_DAY];
    for seg in segments.iter().filter(|s| s.kind == SegmentKind::Location) {
        let Some(place) = seg.place_type.as_deref() else { continue };
        let Ok((first, last)) = touched_hours(seg) else { continue };
        for (hour, slot) in best.iter_mut().enumerate().take(last + 1).skip(first) {
            let overlap = overlap_seconds(seg, hour);
            if overlap > 0 && slot.is_none_or(|(o, _)| overlap > o) {
                *slot = Some((overlap, place));
            }
        }
    }
    best.into_iter().map(|b| b.map(|(_, p)| p.to_string())).collect()
}

/// Buckets a storyline day and records its hourly dominant places.
pub fn bucket_storyline(day: &StorylineDay, rule: SplitRule) -> Result<HourlyDay, BucketError> {
    let buckets = bucket_segments(&day.segments, rule)?;
    Ok(HourlyDay {
        user_id: day.user_id.clone(),
        date: day.date,
        steps_today: buckets.iter().sum(),
        buckets,
        source: Source::Storyline,
        hourly_place_type: Some(dominant_place_types(&day.segments)),
        weather: None,
    })
}

pub fn bucket_record(record: &DayRecord, rule: SplitRule) -> Result<HourlyDay, BucketError> {
    match record {
        DayRecord::Pedometer(m) => Ok(bucket_minutes(m)),
        DayRecord::Storyline(s) => bucket_storyline(s, rule),
    }
}

/// Daily weather observations keyed by date, loaded from the fixture CSV
/// (`date,condition,temperature_c`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeatherFixtures {
    by_date: BTreeMap<NaiveDate, WeatherObs>,
}

const FIXTURE_HEADER: [&str; 3] = ["date", "condition", "temperature_c"];

impl WeatherFixtures {
    pub fn from_reader(reader: impl Read) -> Result<Self, BucketError> {
        let bad = |e: &dyn fmt::Display| BucketError::MalformedFixture(e.to_string());
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers().map_err(|e| bad(&e))?;
        if header.iter().collect::<Vec<_>>() != FIXTURE_HEADER {
            return Err(BucketError::MalformedFixture(format!(
                "header must be {:?}",
                FIXTURE_HEADER.join(",")
            )));
        }
        let mut by_date = BTreeMap::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| bad(&e))?;
            let row = line + 2;
            let date: NaiveDate = record[0]
                .parse()
                .map_err(|e| BucketError::MalformedFixture(format!("row {row}: {e}")))?;
            let condition: WeatherCondition = record[1].parse()?;
            let temperature: f64 = record[2]
                .parse()
                .map_err(|e| BucketError::MalformedFixture(format!("row {row}: {e}")))?;
            if !temperature.is_finite() {
                return Err(BucketError::MalformedFixture(format!("row {row}: non-finite temperature")));
            }
            if by_date.insert(date, WeatherObs { condition, temperature }).is_some() {
                return Err(BucketError::MalformedFixture(format!("row {row}: duplicate date {date}")));
            }
        }
        Ok(WeatherFixtures { by_date })
    }

    pub fn load(path: &Path) -> Result<Self, BucketError> {
        let file = std::fs::File::open(path)
            .map_err(|e| BucketError::MalformedFixture(format!("{}: {e}", path.display())))?;
        Self::from_reader(file)
    }

    pub fn get(&self, date: NaiveDate) -> Option<WeatherObs> {
        self.by_date.get(&date).copied()
    }

    pub fn len(&self) -> usize {
        self.by_date.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_date.is_empty()
    }
}

/// Sets `weather` from the fixture entry for the day's date, if any.
pub fn attach_weather(mut day: HourlyDay, fixtures: &WeatherFixtures) -> HourlyDay {
    if let Some(obs) = fixtures.get(day.date) {
        day.weather = Some(obs);
    }
    day
}
