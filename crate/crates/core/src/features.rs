//! Labelled feature matrices for a simulated "current hour".
//!
//! A [`FeatureConfig`] fixes a cutoff hour and which column groups are
//! emitted. Column order is a pure function of the config:
//!
//! 1. hourly window (`hour_HH`), either the four buckets ending at the cutoff
//!    or every bucket from midnight through the cutoff;
//! 2. `cumulative`, steps from midnight through the cutoff;
//! 3. `steps_yesterday`;
//! 4. `day_of_week` (Monday = 1 .. Sunday = 7) and `is_weekday`;
//! 5. weather one-hot (plus `unknown`) and `temperature_c`;
//! 6. one-hot of the dominant place type in the cutoff hour (plus `unknown`).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::bucketing::{HourlyDay, WeatherCondition, HOURS_PER_DAY};
use crate::ingest::UserProfile;
use crate::linalg::Matrix;

/// Step goal used when neither the config nor the profile sets one.
pub const DEFAULT_STEP_GOAL: u32 = 10_000;

/// Place categories with a dedicated one-hot column; anything else maps to `other`.
pub const PLACE_TYPES: [&str; 5] = ["home", "work", "gym", "transit", "other"];

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("invalid feature config: {0}")]
    InvalidConfig(String),
    #[error("duplicate day for user {user} on {date}")]
    DuplicateDay { user: String, date: NaiveDate },
    #[error("too few rows: need at least {needed}, have {have}")]
    TooFewRows { needed: usize, have: usize },
    #[error("malformed feature matrix: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Last4Hours,
    AllHoursToCutoff,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub cutoff_hour: usize,
    pub window: Window,
    pub include_cumulative: bool,
    pub include_yesterday: bool,
    pub include_weekday: bool,
    pub include_weather: bool,
    pub include_place: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_override: Option<u32>,
}

impl FeatureConfig {
    /// Every hour to the cutoff plus cumulative, yesterday and weekday columns.
    pub fn standard(cutoff_hour: usize) -> Self {
        FeatureConfig {
            cutoff_hour,
            window: Window::AllHoursToCutoff,
            include_cumulative: true,
            include_yesterday: true,
            include_weekday: true,
            include_weather: false,
            include_place: false,
            goal_override: None,
        }
    }

    /// Only the four hourly buckets ending at the cutoff.
    pub fn last_four_hours(cutoff_hour: usize) -> Self {
        FeatureConfig {
            cutoff_hour,
            window: Window::Last4Hours,
            include_cumulative: false,
            include_yesterday: false,
            include_weekday: false,
            include_weather: false,
            include_place: false,
            goal_override: None,
        }
    }

    /// Only the hourly buckets from midnight through the cutoff.
    pub fn hours_only(cutoff_hour: usize) -> Self {
        FeatureConfig {
            window: Window::AllHoursToCutoff,
            ..Self::last_four_hours(cutoff_hour)
        }
    }

    pub fn with_cutoff(&self, cutoff_hour: usize) -> Self {
        FeatureConfig {
            cutoff_hour,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.cutoff_hour >= HOURS_PER_DAY {
            return Err(FeatureError::InvalidConfig(format!(
                "cutoff hour {} outside 0..23",
                self.cutoff_hour
            )));
        }
        if self.window == Window::Last4Hours && self.cutoff_hour < 3 {
            return Err(FeatureError::InvalidConfig(format!(
                "last-4-hours window needs cutoff >= 3, got {}",
                self.cutoff_hour
            )));
        }
        if self.goal_override == Some(0) {
            return Err(FeatureError::InvalidConfig("goal override must be positive".into()));
        }
        Ok(())
    }

    fn window_hours(&self) -> std::ops::RangeInclusive<usize> {
        match self.window {
            Window::Last4Hours => self.cutoff_hour - 3..=self.cutoff_hour,
            Window::AllHoursToCutoff => 0..=self.cutoff_hour,
        }
    }
}

/// Whether a column is standardized or left as a 0/1 indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Indicator,
}

/// Column names and kinds implied by `config`, in emission order.
pub fn column_schema(config: &FeatureConfig) -> Vec<(String, ColumnKind)> {
    use ColumnKind::*;
    let mut cols: Vec<(String, ColumnKind)> = config
        .window_hours()
        .map(|h| (format!("hour_{h:02}"), Continuous))
        .collect();
    if config.include_cumulative {
        cols.push(("cumulative".into(), Continuous));
    }
    if config.include_yesterday {
        cols.push(("steps_yesterday".into(), Continuous));
    }
    if config.include_weekday {
        cols.push(("day_of_week".into(), Continuous));
        cols.push(("is_weekday".into(), Indicator));
    }
    if config.include_weather {
        for c in WeatherCondition::ALL {
            cols.push((format!("weather_{c}"), Indicator));
        }
        cols.push(("weather_unknown".into(), Indicator));
        cols.push(("temperature_c".into(), Continuous));
    }
    if config.include_place {
        for p in PLACE_TYPES {
            cols.push((format!("place_{p}"), Indicator));
        }
        cols.push(("place_unknown".into(), Indicator));
    }
    cols
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub user_id: String,
    pub date: NaiveDate,
    pub x: Vec<f64>,
    pub y_class: bool,
    pub y_reg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub rows: Vec<FeatureRow>,
    pub column_names: Vec<String>,
    pub column_kinds: Vec<ColumnKind>,
    pub config: FeatureConfig,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.column_names.len()
    }

    pub fn design(&self) -> Matrix {
        Matrix::from_rows(self.n_cols(), self.rows.iter().map(|r| r.x.as_slice()))
    }

    /// Labels as `1` (goal reached) / `-1`.
    pub fn signed_labels(&self) -> Vec<i32> {
        self.rows.iter().map(|r| if r.y_class { 1 } else { -1 }).collect()
    }

    pub fn regression_targets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.y_reg).collect()
    }

    pub fn n_positive(&self) -> usize {
        self.rows.iter().filter(|r| r.y_class).count()
    }

    /// CSV with the column names followed by `y_class` (0/1) and `y_reg`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for name in &self.column_names {
            out.push_str(name);
            out.push(',');
        }
        out.push_str("y_class,y_reg\n");
        for row in &self.rows {
            for v in &row.x {
                let _ = write!(out, "{v},");
            }
            let _ = writeln!(out, "{},{}", u8::from(row.y_class), row.y_reg);
        }
        out
    }
}

/// Counts from a [`build_matrix`] run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildSummary {
    pub days_in: usize,
    pub rows_out: usize,
    /// Days dropped because the previous calendar day was missing.
    pub dropped_no_history: usize,
    pub users: usize,
}

/// True iff the day's total meets the goal; a tie counts as reached.
pub fn label_goal(day: &HourlyDay, goal: u32) -> bool {
    day.steps_today >= f64::from(goal)
}

/// Config override, else the profile's goal, else [`DEFAULT_STEP_GOAL`].
pub fn resolve_goal(profile: Option<&UserProfile>, config: &FeatureConfig) -> u32 {
    config
        .goal_override
        .or_else(|| profile.and_then(|p| p.step_goal))
        .unwrap_or(DEFAULT_STEP_GOAL)
}

fn place_slot(place: Option<&str>) -> usize {
    match place {
        None => PLACE_TYPES.len(),
        Some(p) => {
            let p = p.to_ascii_lowercase();
            PLACE_TYPES
                .iter()
                .position(|&t| t == p)
                .unwrap_or(PLACE_TYPES.len() - 1)
        }
    }
}

/// Feature vector for one day. `yesterday` must be present when the config asks for it.
pub fn feature_vector(day: &HourlyDay, yesterday: Option<&HourlyDay>, config: &FeatureConfig) -> Vec<f64> {
    let cutoff = config.cutoff_hour;
    let mut x: Vec<f64> = config.window_hours().map(|h| day.buckets[h]).collect();
    if config.include_cumulative {
        x.push(day.cumulative_to(cutoff));
    }
    if config.include_yesterday {
        x.push(yesterday.map_or(0.0, |d| d.steps_today));
    }
    if config.include_weekday {
        let wd = day.date.weekday().number_from_monday();
        x.push(f64::from(wd));
        x.push(if wd <= 5 { 1.0 } else { 0.0 });
    }
    if config.include_weather {
        let mut onehot = [0.0; WeatherCondition::ALL.len() + 1];
        match day.weather {
            Some(obs) => {
                let i = WeatherCondition::ALL.iter().position(|&c| c == obs.condition).unwrap();
                onehot[i] = 1.0;
                x.extend(onehot);
                x.push(obs.temperature);
            }
            None => {
                onehot[WeatherCondition::ALL.len()] = 1.0;
                x.extend(onehot);
                x.push(0.0);
            }
        }
    }
    if config.include_place {
        let place = day
            .hourly_place_type
            .as_ref()
            .and_then(|p| p.get(cutoff))
            .and_then(|p| p.as_deref());
        let mut onehot = [0.0; PLACE_TYPES.len() + 1];
        onehot[place_slot(place)] = 1.0;
        x.extend(onehot);
    }
    x
}

/// Builds one row per (user, date), ordered by user then date.
///
/// With `include_yesterday`, days whose previous calendar day is absent are
/// dropped and counted in the summary.
pub fn build_matrix(
    days: &[HourlyDay],
    profiles: &BTreeMap<String, UserProfile>,
    config: &FeatureConfig,
) -> Result<(FeatureMatrix, BuildSummary), FeatureError> {
    config.validate()?;
    let mut by_key: BTreeMap<(&str, NaiveDate), &HourlyDay> = BTreeMap::new();
    for day in days {
        if by_key.insert((day.user_id.as_str(), day.date), day).is_some() {
            return Err(FeatureError::DuplicateDay {
                user: day.user_id.clone(),
                date: day.date,
            });
        }
    }

    let schema = column_schema(config);
    let mut summary = BuildSummary {
        days_in: days.len(),
        ..BuildSummary::default()
    };
    let mut rows = Vec::with_capacity(days.len());
    let mut last_user: Option<&str> = None;
    for (&(user, date), &day) in &by_key {
        if last_user != Some(user) {
            summary.users += 1;
            last_user = Some(user);
        }
        let yesterday = date.pred_opt().and_then(|d| by_key.get(&(user, d)).copied());
        if config.include_yesterday && yesterday.is_none() {
            summary.dropped_no_history += 1;
            continue;
        }
        let goal = resolve_goal(profiles.get(user), config);
        let x = feature_vector(day, yesterday, config);
        debug_assert_eq!(x.len(), schema.len());
        if x.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::Malformed(format!("non-finite feature for {user} on {date}")));
        }
        rows.push(FeatureRow {
            user_id: user.to_string(),
            date,
            x,
            y_class: label_goal(day, goal),
            y_reg: day.steps_today,
        });
    }
    summary.rows_out = rows.len();
    let (column_names, column_kinds) = schema.into_iter().unzip();
    Ok((
        FeatureMatrix {
            rows,
            column_names,
            column_kinds,
            config: config.clone(),
        },
        summary,
    ))
}

/// Per-column centering and scaling fitted on one set of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    /// Fits population mean and standard deviation per continuous column.
    /// Indicator columns get mean 0 and scale 1; constant columns get scale 1.
    pub fn fit<'a>(
        rows: impl IntoIterator<Item = &'a [f64]>,
        kinds: &[ColumnKind],
    ) -> Result<Scaler, FeatureError> {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        if rows.len() < 2 {
            return Err(FeatureError::TooFewRows {
                needed: 2,
                have: rows.len(),
            });
        }
        let d = kinds.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        let mut scale = vec![1.0; d];
        for j in 0..d {
            if kinds[j] == ColumnKind::Indicator {
                continue;
            }
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            mean[j] = m;
            if sd > 1e-12 * m.abs().max(f64::MIN_POSITIVE) {
                scale[j] = sd;
            }
        }
        Ok(Scaler { mean, scale })
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn transform_matrix(&self, m: &Matrix) -> Matrix {
        m.map_rows(|r| self.transform(r))
    }
}

/// Standardizes every continuous column of `matrix`, returning the fitted transform.
pub fn standardize(matrix: &FeatureMatrix) -> Result<(FeatureMatrix, Scaler), FeatureError> {
    let scaler = Scaler::fit(matrix.rows.iter().map(|r| r.x.as_slice()), &matrix.column_kinds)?;
    let mut out = matrix.clone();
    for row in &mut out.rows {
        row.x = scaler.transform(&row.x);
    }
    Ok((out, scaler))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bucketing::WeatherObs;
    use crate::ingest::Source;
    use rand::{Rng, SeedableRng};

    fn day(user: &str, d: u32, buckets: [f64; 24]) -> HourlyDay {
        HourlyDay {
            user_id: user.into(),
            date: NaiveDate::from_ymd_opt(2015, 2, d).unwrap(),
            steps_today: buckets.iter().sum(),
            buckets,
            source: Source::Pedometer,
            hourly_place_type: None,
            weather: None,
        }
    }

    fn with_total(total: f64) -> HourlyDay {
        let mut b = [0.0; 24];
        b[12] = total;
        day("u1", 1, b)
    }

    #[test]
    fn goal_labels() {
        assert!(label_goal(&with_total(12000.0), 10000));
        assert!(label_goal(&with_total(10000.0), 10000));
        assert!(!label_goal(&with_total(9999.5), 10000));
    }

    #[test]
    fn goal_resolution() {
        let mut p = UserProfile::new("u1");
        p.step_goal = Some(8000);
        let cfg = FeatureConfig::standard(11);
        assert_eq!(resolve_goal(Some(&p), &cfg), 8000);
        assert_eq!(resolve_goal(Some(&UserProfile::new("u1")), &cfg), 10000);
        assert_eq!(resolve_goal(None, &cfg), 10000);
        let cfg = FeatureConfig {
            goal_override: Some(12000),
            ..cfg
        };
        assert_eq!(resolve_goal(Some(&p), &cfg), 12000);
    }

    #[test]
    fn last_four_projection() {
        let mut b = [0.0; 24];
        b[8..12].copy_from_slice(&[100.0, 200.0, 300.0, 400.0]);
        b[15] = 9.0;
        let (m, _) = build_matrix(&[day("u1", 1, b)], &BTreeMap::new(), &FeatureConfig::last_four_hours(11)).unwrap();
        assert_eq!(m.rows[0].x, vec![100.0, 200.0, 300.0, 400.0]);
        assert_eq!(m.column_names, ["hour_08", "hour_09", "hour_10", "hour_11"]);
    }

    #[test]
    fn all_hours_width() {
        let (m, _) = build_matrix(&[day("u1", 1, [1.0; 24])], &BTreeMap::new(), &FeatureConfig::hours_only(11)).unwrap();
        assert_eq!(m.n_cols(), 12);
        assert_eq!(m.column_names[0], "hour_00");
        assert_eq!(m.column_names[11], "hour_11");
    }

    #[test]
    fn first_day_dropped_without_history() {
        let days = [day("u1", 1, [500.0; 24]), day("u1", 2, [100.0; 24]), day("u1", 4, [1.0; 24])];
        let (m, s) = build_matrix(&days, &BTreeMap::new(), &FeatureConfig::standard(11)).unwrap();
        assert_eq!(m.n_rows(), 1);
        assert_eq!(s.dropped_no_history, 2);
        let row = &m.rows[0];
        assert_eq!(row.date, NaiveDate::from_ymd_opt(2015, 2, 2).unwrap());
        // 12 hours, cumulative, yesterday, weekday pair
        assert_eq!(row.x.len(), 16);
        assert_eq!(row.x[12], 1200.0);
        assert_eq!(row.x[13], 12000.0);
        // 2015-02-02 is a Monday
        assert_eq!(&row.x[14..], &[1.0, 1.0]);
        assert!(!row.y_class);
        assert_eq!(row.y_reg, 2400.0);
    }

    #[test]
    fn rows_ordered_by_user_then_date() {
        let days = [day("b", 2, [0.0; 24]), day("a", 3, [0.0; 24]), day("b", 1, [0.0; 24]), day("a", 1, [0.0; 24])];
        let (m, s) = build_matrix(&days, &BTreeMap::new(), &FeatureConfig::hours_only(5)).unwrap();
        let keys: Vec<_> = m.rows.iter().map(|r| (r.user_id.as_str(), r.date.day())).collect();
        assert_eq!(keys, [("a", 1), ("a", 3), ("b", 1), ("b", 2)]);
        assert_eq!(s.users, 2);
    }

    #[test]
    fn duplicate_days_rejected() {
        let days = [day("a", 1, [0.0; 24]), day("a", 1, [1.0; 24])];
        assert!(matches!(
            build_matrix(&days, &BTreeMap::new(), &FeatureConfig::hours_only(5)),
            Err(FeatureError::DuplicateDay { .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(FeatureConfig::last_four_hours(2).validate().is_err());
        assert!(FeatureConfig::last_four_hours(3).validate().is_ok());
        assert!(FeatureConfig::standard(24).validate().is_err());
    }

    #[test]
    fn weather_and_place_encoding() {
        let mut d = day("u1", 14, [10.0; 24]);
        d.weather = Some(WeatherObs {
            condition: WeatherCondition::Rain,
            temperature: 4.0,
        });
        let mut places = vec![None; 24];
        places[11] = Some("Gym".to_string());
        d.hourly_place_type = Some(places);
        let cfg = FeatureConfig {
            include_weather: true,
            include_place: true,
            ..FeatureConfig::last_four_hours(11)
        };
        let x = feature_vector(&d, None, &cfg);
        let names: Vec<_> = column_schema(&cfg).into_iter().map(|c| c.0).collect();
        assert_eq!(x.len(), names.len());
        let get = |n: &str| x[names.iter().position(|c| c == n).unwrap()];
        assert_eq!(get("weather_rain"), 1.0);
        assert_eq!(get("weather_unknown"), 0.0);
        assert_eq!(get("temperature_c"), 4.0);
        assert_eq!(get("place_gym"), 1.0);
        assert_eq!(get("place_unknown"), 0.0);

        let plain = day("u1", 14, [10.0; 24]);
        let x = feature_vector(&plain, None, &cfg);
        let get = |n: &str| x[names.iter().position(|c| c == n).unwrap()];
        assert_eq!(get("weather_unknown"), 1.0);
        assert_eq!(get("place_unknown"), 1.0);
    }

    #[test]
    fn csv_layout() {
        let (m, _) = build_matrix(&[with_total(10000.0)], &BTreeMap::new(), &FeatureConfig::last_four_hours(12)).unwrap();
        let csv = m.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "hour_09,hour_10,hour_11,hour_12,y_class,y_reg");
        assert_eq!(lines.next().unwrap(), "0,0,0,10000,1,10000");
    }

    fn matrix_from(cols: Vec<Vec<f64>>, kinds: Vec<ColumnKind>) -> FeatureMatrix {
        let n = cols[0].len();
        FeatureMatrix {
            rows: (0..n)
                .map(|i| FeatureRow {
                    user_id: "u".into(),
                    date: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(),
                    x: cols.iter().map(|c| c[i]).collect(),
                    y_class: false,
                    y_reg: 0.0,
                })
                .collect(),
            column_names: (0..cols.len()).map(|j| format!("c{j}")).collect(),
            column_kinds: kinds,
            config: FeatureConfig::hours_only(0),
        }
    }

    #[test]
    fn standardize_two_points() {
        let m = matrix_from(vec![vec![2.0, 4.0]], vec![ColumnKind::Continuous]);
        let (s, p) = standardize(&m).unwrap();
        assert_eq!(s.rows[0].x, vec![-1.0]);
        assert_eq!(s.rows[1].x, vec![1.0]);
        assert_eq!(p.mean, vec![3.0]);
        assert_eq!(p.scale, vec![1.0]);
    }

    #[test]
    fn standardize_constant_and_indicator() {
        let m = matrix_from(
            vec![vec![5.0, 5.0, 5.0], vec![0.0, 1.0, 1.0]],
            vec![ColumnKind::Continuous, ColumnKind::Indicator],
        );
        let (s, p) = standardize(&m).unwrap();
        assert!(s.rows.iter().all(|r| r.x[0] == 0.0));
        assert_eq!(p.scale, vec![1.0, 1.0]);
        assert_eq!(s.rows[1].x[1], 1.0);
        assert!(matches!(
            standardize(&matrix_from(vec![vec![1.0]], vec![ColumnKind::Continuous])),
            Err(FeatureError::TooFewRows { .. })
        ));
    }

    #[test]
    fn standardize_random_moments() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let cols: Vec<Vec<f64>> = (0..4)
            .map(|j| (0..100).map(|_| rng.random_range(-50.0..50.0) * (j + 1) as f64 + 7.0).collect())
            .collect();
        let (s, _) = standardize(&matrix_from(cols, vec![ColumnKind::Continuous; 4])).unwrap();
        for j in 0..4 {
            // moments recomputed directly from the transformed rows
            let col: Vec<f64> = s.rows.iter().map(|r| r.x[j]).collect();
            let mean = col.iter().sum::<f64>() / 100.0;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 100.0).sqrt();
            assert!(mean.abs() <= 1e-12, "mean {mean}");
            assert!((sd - 1.0).abs() <= 1e-9, "sd {sd}");
        }
    }
}
