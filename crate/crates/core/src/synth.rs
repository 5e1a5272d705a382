//! Seeded synthetic walker cohorts in both raw formats.
//!
//! Each user-day is generated as 24 hourly step rates first, then sliced into
//! minutes (pedometer) or merged into place and transition segments
//! (storyline), so cohorts of either format with one seed share the same
//! hourly structure.
//!
//! Hourly rate = base rate x rhythm weight x day factor x exp(latent) x
//! noise. The latent term is an AR(1) process across the hours of one day,
//! so activity late in the morning says more about the afternoon than
//! activity at dawn does. A single global scale is applied at the end so the
//! share of days reaching 10,000 steps matches the requested rate.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, LogNormal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bucketing::HOURS_PER_DAY;
use crate::features::DEFAULT_STEP_GOAL;
use crate::ingest::{
    DayRecord, IngestError, MinuteSeries, Segment, SegmentKind, Source, Store, StorylineDay, TimeOfDay, UserProfile,
    MINUTES_PER_DAY,
};
use crate::models::mix_seed;

/// AR(1) coefficient of the within-day latent activity level.
const LATENT_RHO: f64 = 0.8;
/// Stationary standard deviation of the latent level.
const LATENT_SD: f64 = 0.8;
/// Independent per-hour lognormal noise.
const HOUR_NOISE_SD: f64 = 0.1;
/// Day-to-day lognormal variation of the whole day.
const DAY_SD: f64 = 0.15;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid cohort spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rhythm {
    /// Morning and evening commute peaks.
    Commuter,
    /// Flat, low daytime activity.
    Homebody,
    /// One large exercise block.
    Athlete,
    /// Each user draws one of the other three.
    Mixed,
}

impl std::str::FromStr for Rhythm {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, SynthError> {
        match s {
            "commuter" => Ok(Rhythm::Commuter),
            "homebody" => Ok(Rhythm::Homebody),
            "athlete" => Ok(Rhythm::Athlete),
            "mixed" => Ok(Rhythm::Mixed),
            _ => Err(SynthError::InvalidSpec(format!("unknown rhythm {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub n_users: usize,
    pub n_days: usize,
    pub seed: u64,
    /// Range of per-user mean steps per day, before the global rescale.
    pub base_rate_range: (f64, f64),
    /// Multiplier applied on Monday to Friday.
    pub weekday_multiplier: f64,
    pub rhythm: Rhythm,
    /// Target share of days reaching the default goal.
    pub goal_hit_rate_target: f64,
    pub format: Source,
    pub start_date: NaiveDate,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            n_users: 80,
            n_days: 60,
            seed: 0,
            base_rate_range: (6000.0, 14000.0),
            weekday_multiplier: 1.1,
            rhythm: Rhythm::Mixed,
            goal_hit_rate_target: 0.45,
            format: Source::Pedometer,
            start_date: NaiveDate::from_ymd_opt(2015, 1, 5).expect("valid date"),
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.n_users == 0 {
            return bad("n_users must be at least 1".into());
        }
        if self.n_days < 2 {
            return bad(format!("n_days must be at least 2, got {}", self.n_days));
        }
        if !(self.goal_hit_rate_target > 0.0 && self.goal_hit_rate_target < 1.0) {
            return bad(format!("goal_hit_rate_target must be in (0,1), got {}", self.goal_hit_rate_target));
        }
        let (lo, hi) = self.base_rate_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("base_rate_range must satisfy 0 < min <= max, got ({lo}, {hi})"));
        }
        if !(self.weekday_multiplier > 0.0 && self.weekday_multiplier.is_finite()) {
            return bad("weekday_multiplier must be positive".into());
        }
        if self.start_date.checked_add_days(Days::new(self.n_days as u64)).is_none() {
            return bad("date range overflows".into());
        }
        Ok(())
    }
}

/// Generated documents ready for the store.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub days: Vec<DayRecord>,
    pub profiles: Vec<UserProfile>,
}

impl Cohort {
    /// Writes days and profiles; returns the number of day files written.
    pub fn write_to(&self, store: &mut Store, overwrite: bool) -> Result<usize, SynthError> {
        store.store_profiles(&self.profiles, overwrite)?;
        Ok(store.store_days(&self.days, overwrite)?)
    }

    /// Share of days reaching the default goal.
    pub fn goal_hit_rate(&self) -> f64 {
        let hits = self.days.iter().filter(|d| d.total_steps() >= u64::from(DEFAULT_STEP_GOAL)).count();
        hits as f64 / self.days.len() as f64
    }
}

fn bump(h: f64, center: f64, width: f64) -> f64 {
    (-0.5 * ((h - center) / width).powi(2)).exp()
}

/// Hourly weights summing to one.
fn rhythm_weights(rhythm: Rhythm, rng: &mut ChaCha8Rng) -> ([f64; HOURS_PER_DAY], Option<usize>) {
    let shift: f64 = rng.random_range(-1.0..1.0);
    let mut w = [0.0; HOURS_PER_DAY];
    let mut block = None;
    for (h, slot) in w.iter_mut().enumerate() {
        let t = h as f64 + 0.5;
        // awake hours get a small floor, night hours almost nothing
        let awake = if (7..23).contains(&h) { 0.35 } else { 0.01 };
        *slot = awake
            + match rhythm {
                Rhythm::Commuter => {
                    bump(t, 8.0 + shift, 0.8) + 0.9 * bump(t, 17.5 + shift, 1.0)
                }
                Rhythm::Homebody => 0.3 * bump(t, 14.0 + 2.0 * shift, 4.0),
                Rhythm::Athlete => 0.2 * bump(t, 13.0, 4.0),
                Rhythm::Mixed => unreachable!("resolved before drawing weights"),
            };
    }
    if rhythm == Rhythm::Athlete {
        let start = *[6usize, 7, 12, 17, 18, 19].choose(rng).expect("non-empty");
        block = Some(start);
        w[start] += 1.5;
        w[start + 1] += 0.6;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    (w, block)
}

struct UserPlan {
    index: usize,
    rng: ChaCha8Rng,
    rhythm: Rhythm,
    exercise_hour: Option<usize>,
    /// Unscaled hourly rates, one array per day.
    hourly: Vec<[f64; HOURS_PER_DAY]>,
}

fn plan_user(spec: &CohortSpec, index: usize) -> UserPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, index as u64));
    let rhythm = match spec.rhythm {
        Rhythm::Mixed => *[Rhythm::Commuter, Rhythm::Homebody, Rhythm::Athlete]
            .choose(&mut rng)
            .expect("non-empty"),
        r => r,
    };
    let (lo, hi) = spec.base_rate_range;
    let base = if lo == hi { lo } else { rng.random_range(lo..hi) };
    let (weights, exercise_hour) = rhythm_weights(rhythm, &mut rng);
    let day_noise = LogNormal::new(-DAY_SD * DAY_SD / 2.0, DAY_SD).expect("valid lognormal");
    let hour_noise = LogNormal::new(-HOUR_NOISE_SD * HOUR_NOISE_SD / 2.0, HOUR_NOISE_SD).expect("valid lognormal");
    let innovation_sd = LATENT_SD * (1.0 - LATENT_RHO * LATENT_RHO).sqrt();

    let mut hourly = Vec::with_capacity(spec.n_days);
    for d in 0..spec.n_days {
        let date = spec.start_date + Days::new(d as u64);
        let weekday = !matches!(date.weekday(), Weekday::Sat | Weekday::Sun);
        let mut factor = base * day_noise.sample(&mut rng);
        if weekday {
            factor *= spec.weekday_multiplier;
        }
        let z0: f64 = StandardNormal.sample(&mut rng);
        let mut z = LATENT_SD * z0;
        let mut day = [0.0; HOURS_PER_DAY];
        for h in 0..HOURS_PER_DAY {
            if h > 0 {
                let e: f64 = StandardNormal.sample(&mut rng);
                z = LATENT_RHO * z + innovation_sd * e;
            }
            let latent = (z - LATENT_SD * LATENT_SD / 2.0).exp();
            day[h] = factor * weights[h] * latent * hour_noise.sample(&mut rng);
        }
        hourly.push(day);
    }
    UserPlan {
        index,
        rng,
        rhythm,
        exercise_hour,
        hourly,
    }
}

/// Rounds `values` to non-negative integers summing to `round(sum(values))`
/// (largest-remainder method; ties to the earlier slot).
fn apportion(values: &[f64]) -> Vec<u32> {
    let target = values.iter().sum::<f64>().round() as u64;
    let mut out: Vec<u32> = values.iter().map(|v| v.floor() as u32).collect();
    let assigned: u64 = out.iter().map(|&v| u64::from(v)).sum();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = values[a] - values[a].floor();
        let rb = values[b] - values[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(target.saturating_sub(assigned) as usize) {
        out[i] += 1;
    }
    out
}

fn minute_series(user: &str, date: NaiveDate, hourly: &[f64; HOURS_PER_DAY], rng: &mut ChaCha8Rng) -> MinuteSeries {
    let hour_totals = apportion(hourly);
    let mut minutes = vec![0u32; MINUTES_PER_DAY];
    for (h, &total) in hour_totals.iter().enumerate() {
        if total == 0 {
            continue;
        }
        // roughly one active minute per 80 steps, capped at the hour
        let jitter: f64 = rng.random_range(0.7..1.3);
        let active = ((total as f64 / 80.0 * jitter).round() as usize).clamp(1, 60);
        let mut slots: Vec<usize> = (0..60).collect();
        slots.shuffle(rng);
        let weights: Vec<f64> = (0..active).map(|_| Exp1.sample(rng)).collect();
        let wsum: f64 = weights.iter().sum();
        let shares: Vec<f64> = weights.iter().map(|w| total as f64 * w / wsum).collect();
        for (slot, steps) in slots[..active].iter().zip(apportion(&shares)) {
            minutes[h * 60 + slot] = steps;
        }
    }
    MinuteSeries::new(user, date, minutes).expect("generated series has 1440 valid entries")
}

fn place_for(hour: usize, first_or_last: bool, plan: &UserPlan, rng: &mut ChaCha8Rng) -> (&'static str, &'static str) {
    if first_or_last || !(7..22).contains(&hour) {
        return ("Home", "home");
    }
    if plan.exercise_hour.is_some_and(|b| hour == b || hour == b + 1) {
        return ("Gym", "gym");
    }
    if plan.rhythm == Rhythm::Commuter && (9..17).contains(&hour) && rng.random_bool(0.8) {
        return ("Office", "work");
    }
    *[
        ("Home", "home"),
        ("Office", "work"),
        ("Station", "transit"),
        ("Cafe", "other"),
        ("Park", "other"),
    ]
    .choose(rng)
    .expect("non-empty")
}

fn storyline_day(
    user: &str,
    date: NaiveDate,
    hourly: &[f64; HOURS_PER_DAY],
    plan: &UserPlan,
    rng: &mut ChaCha8Rng,
) -> StorylineDay {
    let n_segments = rng.random_range(3..=12usize);
    // contiguous cover of the day with cut points on whole minutes
    let mut cuts: Vec<u32> = (1..MINUTES_PER_DAY as u32).collect();
    cuts.shuffle(rng);
    let mut cuts: Vec<u32> = cuts[..n_segments - 1].iter().map(|m| m * 60).collect();
    cuts.sort_unstable();
    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(86_400);

    // steps of a segment = hourly rate integrated over its span
    let spans: Vec<f64> = bounds
        .windows(2)
        .map(|w| {
            (0..HOURS_PER_DAY)
                .map(|h| {
                    let (hs, he) = (h as u32 * 3600, (h as u32 + 1) * 3600);
                    let overlap = w[1].min(he).saturating_sub(w[0].max(hs));
                    hourly[h] * f64::from(overlap) / 3600.0
                })
                .sum()
        })
        .collect();
    let steps = apportion(&spans);
    let segments = bounds
        .windows(2)
        .zip(steps)
        .enumerate()
        .map(|(i, (w, steps))| {
            let kind = if i % 2 == 0 { SegmentKind::Location } else { SegmentKind::Transition };
            let (place_name, place_type) = if kind == SegmentKind::Location {
                let mid_hour = ((w[0] + w[1]) / 2 / 3600) as usize;
                let (name, kind) = place_for(mid_hour, i == 0 || i + 1 == n_segments, plan, rng);
                (Some(name.to_string()), Some(kind.to_string()))
            } else {
                (None, None)
            };
            Segment {
                user_id: user.to_string(),
                date,
                kind,
                start: TimeOfDay::from_seconds(w[0]).expect("within day"),
                end: TimeOfDay::from_seconds(w[1]).expect("within day"),
                steps,
                place_name,
                place_type,
            }
        })
        .collect();
    StorylineDay {
        user_id: user.to_string(),
        date,
        segments,
    }
}

pub fn user_id(index: usize) -> String {
    format!("u{index:03}")
}

fn profile_for(index: usize, rng: &mut ChaCha8Rng) -> UserProfile {
    let mut p = UserProfile::new(user_id(index));
    p.step_goal = Some(DEFAULT_STEP_GOAL);
    p.gender = Some(["female", "male"].choose(rng).expect("non-empty").to_string());
    p.age = Some(rng.random_range(18..70));
    p.motivation = Some(
        ["health", "weight loss", "fitness", "curiosity"]
            .choose(rng)
            .expect("non-empty")
            .to_string(),
    );
    p
}

/// Generates the cohort described by `spec`.
///
/// Users are generated in parallel from per-user seeds; output is ordered by
/// user, then date, and is identical for any thread count.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Cohort, SynthError> {
    spec.validate()?;
    let mut plans: Vec<UserPlan> = (0..spec.n_users).into_par_iter().map(|i| plan_user(spec, i)).collect();

    let mut totals: Vec<f64> = plans.iter().flat_map(|p| p.hourly.iter().map(|d| d.iter().sum())).collect();
    totals.sort_by(f64::total_cmp);
    // scale so that a share `target` of days lies at or above the goal
    let idx = (((1.0 - spec.goal_hit_rate_target) * totals.len() as f64) as usize).min(totals.len() - 1);
    let pivot = if idx == 0 { totals[0] } else { (totals[idx - 1] + totals[idx]) / 2.0 };
    let scale = f64::from(DEFAULT_STEP_GOAL) / pivot;

    let per_user: Vec<(UserProfile, Vec<DayRecord>)> = plans
        .par_iter_mut()
        .map(|plan| {
            let user = user_id(plan.index);
            let mut rng = plan.rng.clone();
            let profile = profile_for(plan.index, &mut rng);
            let days = (0..spec.n_days)
                .map(|d| {
                    let date = spec.start_date + Days::new(d as u64);
                    let hourly = plan.hourly[d].map(|v| v * scale);
                    match spec.format {
                        Source::Pedometer => DayRecord::Pedometer(minute_series(&user, date, &hourly, &mut rng)),
                        Source::Storyline => DayRecord::Storyline(storyline_day(&user, date, &hourly, plan, &mut rng)),
                    }
                })
                .collect();
            (profile, days)
        })
        .collect();

    let mut cohort = Cohort {
        days: Vec::with_capacity(spec.n_users * spec.n_days),
        profiles: Vec::with_capacity(spec.n_users),
    };
    for (profile, days) in per_user {
        cohort.profiles.push(profile);
        cohort.days.extend(days);
    }
    Ok(cohort)
}
