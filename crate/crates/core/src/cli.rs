//! Command-line front end.
//!
//! Every subcommand resolves one [`RunConfig`]: defaults, then the optional
//! `--config` JSON file, then flags. The resolved config is written as
//! `<command>.config.json` next to the outputs, and passing it back with
//! `--config` reproduces them.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bucketing::{attach_weather, bucket_record, HourlyDay, SplitRule, WeatherFixtures, HOURS_PER_DAY};
use crate::eval::{
    cv_score, grid_search, hourly_sweep, predict_row, report_csv, DatasetFingerprint, EvalSettings, ModelSpec,
    ParamGrid, Prediction,
};
use crate::features::{build_matrix, feature_vector, standardize, FeatureConfig, FeatureMatrix, Scaler, Window};
use crate::ingest::{parse_document, write_atomic, DayRecord, Document, Source, Store, UserProfile};
use crate::models::{
    lasso_fit, pca_fit, tree_importance, CentroidParams, Kernel, LassoParams, Metric, SvmParams, TrainedModel,
    TreeParams,
};
use crate::synth::{generate_cohort, CohortSpec, Rhythm};

/// Environment variable naming the default store directory.
pub const STORE_ENV: &str = "STEPGOAL_STORE";
const DEFAULT_STORE: &str = "store";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}

data_errors!(
    crate::ingest::IngestError,
    crate::bucketing::BucketError,
    crate::features::FeatureError,
    crate::eval::EvalError,
    crate::models::ModelError,
    crate::synth::SynthError
);

type Result<T, E = CliError> = std::result::Result<T, E>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn data(msg: impl Into<String>) -> CliError {
    CliError::Data(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Svm,
    Centroid,
    Lasso,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSettings {
    pub window: Window,
    pub cumulative: bool,
    pub yesterday: bool,
    pub weekday: bool,
    pub weather: bool,
    pub place: bool,
    pub goal: Option<u32>,
}

impl Default for FeatureSettings {
    fn default() -> Self {
        let std = FeatureConfig::standard(0);
        FeatureSettings {
            window: std.window,
            cumulative: std.include_cumulative,
            yesterday: std.include_yesterday,
            weekday: std.include_weekday,
            weather: std.include_weather,
            place: std.include_place,
            goal: std.goal_override,
        }
    }
}

impl FeatureSettings {
    pub fn at(&self, cutoff_hour: usize) -> FeatureConfig {
        FeatureConfig {
            cutoff_hour,
            window: self.window,
            include_cumulative: self.cumulative,
            include_yesterday: self.yesterday,
            include_weekday: self.weekday,
            include_weather: self.weather,
            include_place: self.place,
            goal_override: self.goal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub families: Vec<Family>,
    pub svm: SvmParams,
    pub centroid: CentroidParams,
    pub lasso: LassoParams,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            families: vec![Family::Svm],
            svm: SvmParams::default(),
            centroid: CentroidParams::default(),
            lasso: LassoParams::default(),
        }
    }
}

impl ModelSettings {
    pub fn spec(&self, family: Family) -> ModelSpec {
        match family {
            Family::Svm => ModelSpec::Svm(self.svm),
            Family::Centroid => ModelSpec::Centroid(self.centroid.clone()),
            Family::Lasso => ModelSpec::Lasso(self.lasso),
        }
    }

    fn single(&self) -> Result<Family> {
        match self.families.as_slice() {
            [f] => Ok(*f),
            _ => Err(usage("exactly one --model family is required for this command")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSettings {
    pub c: Vec<f64>,
    pub kernel: Vec<Kernel>,
    pub shrinking: Vec<bool>,
    pub metric: Vec<Metric>,
    pub shrink_threshold: Vec<Option<f64>>,
    pub alpha: Vec<f64>,
}

impl Default for GridSettings {
    fn default() -> Self {
        GridSettings {
            c: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0],
            kernel: vec![Kernel::Linear],
            shrinking: vec![true],
            metric: Metric::ALL.to_vec(),
            shrink_threshold: vec![None],
            alpha: vec![0.01, 0.1, 1.0, 10.0],
        }
    }
}

impl GridSettings {
    fn grid(&self, family: Family, base: &ModelSettings) -> ParamGrid {
        match family {
            Family::Svm => ParamGrid::Svm {
                c: self.c.clone(),
                kernel: self.kernel.clone(),
                shrinking: self.shrinking.clone(),
                base: base.svm,
            },
            Family::Centroid => ParamGrid::Centroid {
                metric: self.metric.clone(),
                shrink_threshold: self.shrink_threshold.clone(),
            },
            Family::Lasso => ParamGrid::Lasso {
                alpha: self.alpha.clone(),
                base: base.lasso,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSettings {
    pub n_components: usize,
    pub n_estimators: usize,
    pub tree_seed: u64,
    /// Standardize columns before the LASSO and PCA diagnostics.
    pub standardize: bool,
}

impl Default for SelectSettings {
    fn default() -> Self {
        SelectSettings {
            n_components: 10,
            n_estimators: 10,
            tree_seed: 0,
            standardize: false,
        }
    }
}

/// Everything a run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Subcommand that produced an echo; informational on input.
    pub command: Option<String>,
    pub store: Option<PathBuf>,
    pub weather: Option<PathBuf>,
    pub split_rule: SplitRule,
    pub features: FeatureSettings,
    pub cutoff: usize,
    pub hours: Vec<usize>,
    /// Emit standardized columns from `featurize`.
    pub standardize: bool,
    pub model: ModelSettings,
    pub eval: EvalSettings,
    pub grid: GridSettings,
    pub select: SelectSettings,
    pub synth: CohortSpec,
    pub out_dir: PathBuf,
    pub emit: Vec<OutputFormat>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            store: None,
            weather: None,
            split_rule: SplitRule::default(),
            features: FeatureSettings::default(),
            cutoff: 11,
            hours: (11..=15).collect(),
            standardize: false,
            model: ModelSettings::default(),
            eval: EvalSettings::default(),
            grid: GridSettings::default(),
            select: SelectSettings::default(),
            synth: CohortSpec::default(),
            out_dir: PathBuf::from("reports"),
            emit: vec![OutputFormat::Csv, OutputFormat::Json],
        }
    }
}

impl RunConfig {
    fn store_path(&self) -> PathBuf {
        self.store
            .clone()
            .or_else(|| std::env::var_os(STORE_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_STORE))
    }

    fn emits(&self, f: OutputFormat) -> bool {
        self.emit.contains(&f)
    }
}

/// Parses `11`, `11-15`, `8,11-13` into a sorted, de-duplicated hour list.
pub fn parse_hours(text: &str) -> Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |s: &str| s.trim().parse::<usize>().map_err(|_| format!("bad hour {s:?}"));
        let (lo, hi) = match part.split_once('-') {
            Some((a, b)) => (num(a)?, num(b)?),
            None => (num(part)?, num(part)?),
        };
        if lo > hi || hi >= HOURS_PER_DAY {
            return Err(format!("hour range {part:?} outside 0-23"));
        }
        out.extend(lo..=hi);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Hour list flag value; a newtype so clap treats it as a single value.
#[derive(Debug, Clone)]
struct HourList(Vec<usize>);

fn parse_hour_list(text: &str) -> Result<HourList, String> {
    parse_hours(text).map(HourList)
}

/// Shrink threshold flag value, `none` or a number.
#[derive(Debug, Clone, Copy)]
struct Shrink(Option<f64>);

fn parse_shrink(text: &str) -> Result<Shrink, String> {
    match text {
        "none" => Ok(Shrink(None)),
        t => t.parse().map(|v| Shrink(Some(v))).map_err(|_| format!("bad shrink threshold {t:?}")),
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WindowArg {
    /// Every hour from midnight through the cutoff.
    All,
    /// The four hours ending at the cutoff.
    Last4,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Equal,
    Duration,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Pedometer,
    Storyline,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RhythmArg {
    Commuter,
    Homebody,
    Athlete,
    Mixed,
}

#[derive(Debug, Parser)]
#[command(name = "stepgoal", version, about = "Hourly step-goal prediction from activity-tracker logs")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parallel evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse day logs and profiles and add them to the store.
    Ingest(IngestArgs),
    /// Generate a synthetic cohort into a store.
    Synth(SynthArgs),
    /// Write the feature matrix for one cutoff hour as CSV.
    Featurize(FeaturizeArgs),
    /// LASSO, PCA and tree-importance diagnostics per cutoff hour.
    Select(SelectArgs),
    /// Cross-validate one model at one cutoff hour.
    Eval(EvalArgs),
    /// Cross-validate models at every requested cutoff hour.
    Sweep(SweepArgs),
    /// Cross-validate every cell of a hyperparameter grid.
    Gridsearch(GridArgs),
    /// Score one day with a saved model.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
struct StoreArgs {
    /// Store directory [env: STEPGOAL_STORE, default: ./store]
    #[arg(long)]
    store: Option<PathBuf>,
    /// Weather fixture CSV (`date,condition,temperature_c`).
    #[arg(long)]
    weather: Option<PathBuf>,
    /// How storyline segments spanning several hours are split.
    #[arg(long, value_enum)]
    split_rule: Option<SplitArg>,
}

#[derive(Debug, Args)]
struct FeatureArgs {
    #[arg(long, value_enum)]
    window: Option<WindowArg>,
    #[arg(long)]
    cumulative: Option<bool>,
    #[arg(long)]
    yesterday: Option<bool>,
    #[arg(long)]
    weekday: Option<bool>,
    #[arg(long = "weather-features")]
    weather_features: Option<bool>,
    #[arg(long = "place-features")]
    place_features: Option<bool>,
    /// Step goal for every user, overriding profiles.
    #[arg(long)]
    goal: Option<u32>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Model families, comma separated where several are allowed.
    #[arg(long, value_enum, value_delimiter = ',')]
    model: Option<Vec<Family>>,
    /// SVM penalty parameter.
    #[arg(long = "c")]
    c: Option<f64>,
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    shrinking: Option<bool>,
    #[arg(long)]
    svm_tol: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    svm_seed: Option<u64>,
    #[arg(long)]
    metric: Option<String>,
    /// Centroid shrink threshold, or `none`.
    #[arg(long, value_parser = parse_shrink)]
    shrink: Option<Shrink>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lasso_max_iter: Option<usize>,
    #[arg(long)]
    lasso_tol: Option<f64>,
}

#[derive(Debug, Args)]
struct CvArgs {
    /// Number of cross-validation folds.
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    shuffle: Option<bool>,
    #[arg(long)]
    cv_seed: Option<u64>,
    /// Keep each user's days inside one fold.
    #[arg(long)]
    group_by_user: Option<bool>,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output formats, comma separated.
    #[arg(long, value_enum, value_delimiter = ',')]
    emit: Option<Vec<OutputFormat>>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(required = true)]
    files: Vec<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
    /// Replace stored days whose content differs.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    days: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, value_enum)]
    rhythm: Option<RhythmArg>,
    /// Target share of days reaching 10,000 steps.
    #[arg(long)]
    goal_rate: Option<f64>,
    #[arg(long)]
    base_min: Option<f64>,
    #[arg(long)]
    base_max: Option<f64>,
    #[arg(long)]
    weekday_multiplier: Option<f64>,
    #[arg(long)]
    start_date: Option<NaiveDate>,
    /// Store directory to write into.
    #[arg(long, alias = "store")]
    out: Option<PathBuf>,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Debug, Args)]
struct FeaturizeArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[command(flatten)]
    features: FeatureArgs,
    #[arg(long)]
    cutoff: Option<usize>,
    #[arg(long)]
    standardize: Option<bool>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[command(flatten)]
    features: FeatureArgs,
    /// Cutoff hours, e.g. `11-15`.
    #[arg(long, value_parser = parse_hour_list)]
    hours: Option<HourList>,
    #[arg(long)]
    components: Option<usize>,
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    tree_seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    standardize: Option<bool>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[command(flatten)]
    features: FeatureArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    cv: CvArgs,
    #[arg(long)]
    cutoff: Option<usize>,
    /// Also fit on every row and save the model here.
    #[arg(long)]
    save_model: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[command(flatten)]
    features: FeatureArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    cv: CvArgs,
    /// Cutoff hours, e.g. `11-15` or `8,12-14`.
    #[arg(long, value_parser = parse_hour_list)]
    hours: Option<HourList>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[command(flatten)]
    features: FeatureArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    cv: CvArgs,
    #[arg(long)]
    cutoff: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    grid_c: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    grid_kernel: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    grid_shrinking: Option<Vec<bool>>,
    #[arg(long, value_delimiter = ',')]
    grid_metric: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_shrink)]
    grid_shrink: Option<Vec<Shrink>>,
    #[arg(long, value_delimiter = ',')]
    grid_alpha: Option<Vec<f64>>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Model file written by `eval --save-model`.
    #[arg(long)]
    model_file: PathBuf,
    /// Raw day document to score.
    #[arg(long, conflicts_with_all = ["user", "date"])]
    day: Option<PathBuf>,
    /// Raw document for the previous day, when the model uses it.
    #[arg(long, requires = "day")]
    yesterday: Option<PathBuf>,
    /// Score a stored day instead: user id.
    #[arg(long, requires = "date")]
    user: Option<String>,
    #[arg(long, requires = "user")]
    date: Option<NaiveDate>,
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    weather: Option<PathBuf>,
    /// Must match the cutoff the model was trained for.
    #[arg(long)]
    cutoff: Option<usize>,
    /// Also write `prediction.json` and its config echo here.
    #[arg(long)]
    out: Option<PathBuf>,
}

macro_rules! set {
    ($target:expr, $value:expr) => {
        if let Some(v) = $value {
            $target = v;
        }
    };
}

impl StoreArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if self.store.is_some() {
            cfg.store = self.store.clone();
        }
        if self.weather.is_some() {
            cfg.weather = self.weather.clone();
        }
        set!(
            cfg.split_rule,
            self.split_rule.map(|s| match s {
                SplitArg::Equal => SplitRule::EqualPerBucket,
                SplitArg::Duration => SplitRule::DurationWeighted,
            })
        );
    }
}

impl FeatureArgs {
    fn apply(&self, f: &mut FeatureSettings) {
        set!(
            f.window,
            self.window.map(|w| match w {
                WindowArg::All => Window::AllHoursToCutoff,
                WindowArg::Last4 => Window::Last4Hours,
            })
        );
        set!(f.cumulative, self.cumulative);
        set!(f.yesterday, self.yesterday);
        set!(f.weekday, self.weekday);
        set!(f.weather, self.weather_features);
        set!(f.place, self.place_features);
        if self.goal.is_some() {
            f.goal = self.goal;
        }
    }
}

impl ModelArgs {
    fn apply(&self, m: &mut ModelSettings) -> Result<()> {
        set!(m.families, self.model.clone());
        set!(m.svm.c, self.c);
        if let Some(k) = &self.kernel {
            m.svm.kernel = k.parse().map_err(|e: crate::models::ModelError| usage(e.to_string()))?;
        }
        set!(m.svm.shrinking, self.shrinking);
        set!(m.svm.tol, self.svm_tol);
        set!(m.svm.max_epochs, self.max_epochs);
        set!(m.svm.seed, self.svm_seed);
        if let Some(metric) = &self.metric {
            m.centroid.metric = metric.parse().map_err(|e: crate::models::ModelError| usage(e.to_string()))?;
        }
        set!(m.centroid.shrink_threshold, self.shrink.map(|s| s.0));
        set!(m.lasso.alpha, self.alpha);
        set!(m.lasso.max_iter, self.lasso_max_iter);
        set!(m.lasso.tol, self.lasso_tol);
        Ok(())
    }
}

impl CvArgs {
    fn apply(&self, e: &mut EvalSettings) {
        set!(e.k, self.folds);
        set!(e.shuffled, self.shuffle);
        if self.cv_seed.is_some() {
            e.seed = self.cv_seed;
        }
        set!(e.group_by_user, self.group_by_user);
    }
}

impl OutputArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        set!(cfg.out_dir, self.out.clone());
        set!(cfg.emit, self.emit.clone());
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else { return Ok(RunConfig::default()) };
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

fn write_out(dir: &Path, name: &str, text: &str) -> Result<()> {
    write_atomic(&dir.join(name), text.as_bytes())?;
    log::info!("wrote {}", dir.join(name).display());
    Ok(())
}

fn echo_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    let command = cfg.command.as_deref().unwrap_or("run");
    let text = serde_json::to_string_pretty(cfg).expect("config serializes");
    write_out(dir, &format!("{command}.config.json"), &text)
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

fn load_weather(cfg: &RunConfig) -> Result<Option<WeatherFixtures>> {
    cfg.weather
        .as_deref()
        .map(|p| WeatherFixtures::load(p).map_err(CliError::from))
        .transpose()
}

fn to_hourly(record: &DayRecord, rule: SplitRule, weather: Option<&WeatherFixtures>) -> Result<HourlyDay> {
    let day = bucket_record(record, rule)?;
    Ok(match weather {
        Some(w) => attach_weather(day, w),
        None => day,
    })
}

/// Days and profiles of the configured store, bucketed by hour.
fn load_dataset(cfg: &RunConfig) -> Result<(Vec<HourlyDay>, BTreeMap<String, UserProfile>)> {
    let path = cfg.store_path();
    let store = Store::open_existing(&path)?;
    let records = store.load_days()?;
    if records.is_empty() {
        return Err(data(format!("no days found in store {}", path.display())));
    }
    let weather = load_weather(cfg)?;
    let days = records
        .iter()
        .map(|r| to_hourly(r, cfg.split_rule, weather.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    Ok((days, store.load_profiles()?))
}

fn check_hour(h: usize) -> Result<()> {
    if h >= HOURS_PER_DAY {
        return Err(usage(format!("cutoff hour {h} outside 0-23")));
    }
    Ok(())
}

fn build_at(cfg: &RunConfig, days: &[HourlyDay], profiles: &BTreeMap<String, UserProfile>, hour: usize) -> Result<FeatureMatrix> {
    let (m, summary) = build_matrix(days, profiles, &cfg.features.at(hour))?;
    if summary.dropped_no_history > 0 {
        log::info!("{} days dropped for missing previous-day history", summary.dropped_no_history);
    }
    if m.n_rows() == 0 {
        return Err(data(format!("no feature rows at cutoff {hour}")));
    }
    Ok(m)
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code. Diagnostics go to standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(&cli)),
            Err(e) => Err(usage(format!("cannot start {n} threads: {e}"))),
        },
        None => execute(&cli),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Ingest(a) => {
            cfg.command = Some("ingest".into());
            if a.store.is_some() {
                cfg.store = a.store.clone();
            }
            cmd_ingest(&cfg, &a.files, a.overwrite)
        }
        Command::Synth(a) => {
            cfg.command = Some("synth".into());
            let s = &mut cfg.synth;
            set!(s.n_users, a.users);
            set!(s.n_days, a.days);
            set!(s.seed, a.seed);
            set!(
                s.format,
                a.format.map(|f| match f {
                    FormatArg::Pedometer => Source::Pedometer,
                    FormatArg::Storyline => Source::Storyline,
                })
            );
            set!(
                s.rhythm,
                a.rhythm.map(|r| match r {
                    RhythmArg::Commuter => Rhythm::Commuter,
                    RhythmArg::Homebody => Rhythm::Homebody,
                    RhythmArg::Athlete => Rhythm::Athlete,
                    RhythmArg::Mixed => Rhythm::Mixed,
                })
            );
            set!(s.goal_hit_rate_target, a.goal_rate);
            set!(s.base_rate_range.0, a.base_min);
            set!(s.base_rate_range.1, a.base_max);
            set!(s.weekday_multiplier, a.weekday_multiplier);
            set!(s.start_date, a.start_date);
            if a.out.is_some() {
                cfg.store = a.out.clone();
            }
            cmd_synth(&cfg, a.overwrite)
        }
        Command::Featurize(a) => {
            cfg.command = Some("featurize".into());
            a.store.apply(&mut cfg);
            a.features.apply(&mut cfg.features);
            set!(cfg.cutoff, a.cutoff);
            set!(cfg.standardize, a.standardize);
            a.output.apply(&mut cfg);
            cmd_featurize(&cfg)
        }
        Command::Select(a) => {
            cfg.command = Some("select".into());
            a.store.apply(&mut cfg);
            a.features.apply(&mut cfg.features);
            set!(cfg.hours, a.hours.clone().map(|h| h.0));
            set!(cfg.select.n_components, a.components);
            set!(cfg.select.n_estimators, a.trees);
            set!(cfg.select.tree_seed, a.tree_seed);
            set!(cfg.select.standardize, a.standardize);
            set!(cfg.model.lasso.alpha, a.alpha);
            a.output.apply(&mut cfg);
            cmd_select(&cfg)
        }
        Command::Eval(a) => {
            cfg.command = Some("eval".into());
            a.store.apply(&mut cfg);
            a.features.apply(&mut cfg.features);
            a.model.apply(&mut cfg.model)?;
            a.cv.apply(&mut cfg.eval);
            set!(cfg.cutoff, a.cutoff);
            a.output.apply(&mut cfg);
            cmd_eval(&cfg, a.save_model.as_deref())
        }
        Command::Sweep(a) => {
            cfg.command = Some("sweep".into());
            a.store.apply(&mut cfg);
            a.features.apply(&mut cfg.features);
            a.model.apply(&mut cfg.model)?;
            a.cv.apply(&mut cfg.eval);
            set!(cfg.hours, a.hours.clone().map(|h| h.0));
            a.output.apply(&mut cfg);
            cmd_sweep(&cfg)
        }
        Command::Gridsearch(a) => {
            cfg.command = Some("gridsearch".into());
            a.store.apply(&mut cfg);
            a.features.apply(&mut cfg.features);
            a.model.apply(&mut cfg.model)?;
            a.cv.apply(&mut cfg.eval);
            set!(cfg.cutoff, a.cutoff);
            let g = &mut cfg.grid;
            set!(g.c, a.grid_c.clone());
            if let Some(ks) = &a.grid_kernel {
                g.kernel = ks
                    .iter()
                    .map(|k| k.parse::<Kernel>().map_err(|e| usage(e.to_string())))
                    .collect::<Result<_>>()?;
            }
            set!(g.shrinking, a.grid_shrinking.clone());
            if let Some(ms) = &a.grid_metric {
                g.metric = ms
                    .iter()
                    .map(|m| m.parse::<Metric>().map_err(|e| usage(e.to_string())))
                    .collect::<Result<_>>()?;
            }
            set!(g.shrink_threshold, a.grid_shrink.as_ref().map(|v| v.iter().map(|s| s.0).collect()));
            set!(g.alpha, a.grid_alpha.clone());
            a.output.apply(&mut cfg);
            cmd_gridsearch(&cfg)
        }
        Command::Predict(a) => {
            cfg.command = Some("predict".into());
            if a.store.is_some() {
                cfg.store = a.store.clone();
            }
            if a.weather.is_some() {
                cfg.weather = a.weather.clone();
            }
            cmd_predict(&cfg, a)
        }
    }
}

fn cmd_ingest(cfg: &RunConfig, files: &[PathBuf], overwrite: bool) -> Result<()> {
    // parse everything first so a bad file leaves the store untouched
    let mut days = Vec::new();
    let mut profiles = Vec::new();
    for path in files {
        let text = fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        match parse_document(&text).map_err(|e| data(format!("{}: {e}", path.display())))? {
            Document::Day(d) => days.push(d),
            Document::Profile(p) => profiles.push(p),
        }
    }
    let mut store = Store::open(cfg.store_path())?;
    if !profiles.is_empty() {
        store.store_profiles(&profiles, overwrite)?;
    }
    if !days.is_empty() {
        store.store_days(&days, overwrite)?;
    }
    println!("ingested {} days and {} profiles into {}", days.len(), profiles.len(), store.root().display());
    Ok(())
}

fn cmd_synth(cfg: &RunConfig, overwrite: bool) -> Result<()> {
    let cohort = generate_cohort(&cfg.synth)?;
    let mut store = Store::open(cfg.store_path())?;
    let n = cohort.write_to(&mut store, overwrite)?;
    echo_config(store.root(), cfg)?;
    println!(
        "wrote {n} days for {} users to {} (goal hit rate {:.3})",
        cohort.profiles.len(),
        store.root().display(),
        cohort.goal_hit_rate()
    );
    Ok(())
}

fn cmd_featurize(cfg: &RunConfig) -> Result<()> {
    check_hour(cfg.cutoff)?;
    let (days, profiles) = load_dataset(cfg)?;
    let mut m = build_at(cfg, &days, &profiles, cfg.cutoff)?;
    if cfg.standardize {
        m = standardize(&m)?.0;
    }
    let name = format!("features_h{:02}.csv", cfg.cutoff);
    write_out(&cfg.out_dir, &name, &m.to_csv())?;
    echo_config(&cfg.out_dir, cfg)?;
    println!("{} rows x {} columns -> {}", m.n_rows(), m.n_cols(), cfg.out_dir.join(name).display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct SelectHour {
    cutoff_hour: usize,
    columns: Vec<String>,
    importances: Vec<f64>,
    lasso_alpha: f64,
    lasso_r2: f64,
    lasso_weights: Vec<f64>,
    pca_explained_variance: Vec<f64>,
    pca_explained_variance_ratio: Vec<f64>,
    dataset: DatasetFingerprint,
}

fn select_hour(cfg: &RunConfig, days: &[HourlyDay], profiles: &BTreeMap<String, UserProfile>, hour: usize) -> Result<SelectHour> {
    let raw = build_at(cfg, days, profiles, hour)?;
    let trees = tree_importance(
        &raw.design(),
        &raw.signed_labels(),
        &TreeParams {
            n_estimators: cfg.select.n_estimators,
            seed: cfg.select.tree_seed,
        },
    )?;
    let m = if cfg.select.standardize { standardize(&raw)?.0 } else { raw.clone() };
    let x = m.design();
    let y = m.regression_targets();
    let lasso = lasso_fit(&x, &y, &cfg.model.lasso)?;
    let r2 = lasso.score(&x, &y)?;
    let pca = pca_fit(&x, cfg.select.n_components)?;
    Ok(SelectHour {
        cutoff_hour: hour,
        columns: m.column_names.clone(),
        importances: trees.importances,
        lasso_alpha: lasso.alpha,
        lasso_r2: r2,
        lasso_weights: lasso.weights,
        pca_explained_variance: pca.explained_variance,
        pca_explained_variance_ratio: pca.explained_variance_ratio,
        dataset: DatasetFingerprint::of(&m, 0),
    })
}

fn cmd_select(cfg: &RunConfig) -> Result<()> {
    if cfg.hours.is_empty() {
        return Err(usage("no cutoff hours given"));
    }
    cfg.hours.iter().try_for_each(|&h| check_hour(h))?;
    let (days, profiles) = load_dataset(cfg)?;
    let results = cfg
        .hours
        .iter()
        .map(|&h| select_hour(cfg, &days, &profiles, h))
        .collect::<Result<Vec<_>>>()?;

    if cfg.emits(OutputFormat::Csv) {
        // importance table: one row per cutoff, one column per feature name
        let mut names: Vec<&str> = Vec::new();
        for r in &results {
            for c in &r.columns {
                if !names.contains(&c.as_str()) {
                    names.push(c);
                }
            }
        }
        // hour columns first, in clock order; the rest keep schema order
        names.sort_by_key(|n| match n.strip_prefix("hour_").and_then(|h| h.parse::<usize>().ok()) {
            Some(h) => (0, h),
            None => (1, 0),
        });
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["hour"];
        header.extend(&names);
        w.write_record(&header).expect("in-memory write");
        for r in &results {
            let mut rec = vec![r.cutoff_hour.to_string()];
            for n in &names {
                rec.push(match r.columns.iter().position(|c| c == n) {
                    Some(j) => format!("{:.8}", r.importances[j]),
                    None => String::new(),
                });
            }
            w.write_record(&rec).expect("in-memory write");
        }
        let importance = String::from_utf8(w.into_inner().expect("flush")).expect("utf-8");
        write_out(&cfg.out_dir, "importance.csv", &importance)?;

        let mut lasso = String::from("hour,alpha,r2,nonzero\n");
        let mut pca = String::from("hour,component,explained_variance,explained_variance_ratio,cumulative_ratio\n");
        for r in &results {
            let nonzero = r.lasso_weights.iter().filter(|w| **w != 0.0).count();
            lasso.push_str(&format!("{},{},{:.8},{}\n", r.cutoff_hour, r.lasso_alpha, r.lasso_r2, nonzero));
            let mut cum = 0.0;
            for (i, (v, ratio)) in r.pca_explained_variance.iter().zip(&r.pca_explained_variance_ratio).enumerate() {
                cum += ratio;
                pca.push_str(&format!("{},{},{:.8},{:.8},{:.8}\n", r.cutoff_hour, i + 1, v, ratio, cum));
            }
        }
        write_out(&cfg.out_dir, "lasso.csv", &lasso)?;
        write_out(&cfg.out_dir, "pca.csv", &pca)?;
    }
    if cfg.emits(OutputFormat::Json) {
        write_out(&cfg.out_dir, "select.json", &to_json(&results))?;
    }
    echo_config(&cfg.out_dir, cfg)?;
    for r in &results {
        let top = r
            .importances
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(j, _)| r.columns[j].as_str())
            .unwrap_or("-");
        println!("hour {:02}: top feature {top}, lasso R^2 {:.4}", r.cutoff_hour, r.lasso_r2);
    }
    Ok(())
}

/// A fitted model with everything needed to score a raw day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub model: TrainedModel,
    pub scaler: Scaler,
    pub features: FeatureConfig,
    pub columns: Vec<String>,
    pub split_rule: SplitRule,
}

#[derive(Debug, Serialize)]
struct EvalOutput<'a> {
    report: &'a crate::eval::CvReport,
    dataset: DatasetFingerprint,
    folds: Vec<usize>,
}

fn cmd_eval(cfg: &RunConfig, save_model: Option<&Path>) -> Result<()> {
    check_hour(cfg.cutoff)?;
    let family = cfg.model.single()?;
    let spec = cfg.model.spec(family);
    let (days, profiles) = load_dataset(cfg)?;
    let m = build_at(cfg, &days, &profiles, cfg.cutoff)?;
    let folds = cfg.eval.folds_for(&m)?;
    let report = cv_score(&m, &spec, &folds)?;
    if cfg.emits(OutputFormat::Csv) {
        write_out(&cfg.out_dir, "eval.csv", &report_csv(&[(&spec, Some(&report))], folds.k))?;
    }
    if cfg.emits(OutputFormat::Json) {
        let out = EvalOutput {
            report: &report,
            dataset: DatasetFingerprint::of(&m, 0),
            folds: folds.fold_sizes(),
        };
        write_out(&cfg.out_dir, "eval.json", &to_json(&out))?;
    }
    if let Some(path) = save_model {
        let (scaled, scaler) = standardize(&m)?;
        let model = spec.fit(&scaled.design(), &scaled.signed_labels(), &scaled.regression_targets())?;
        let artifact = ModelArtifact {
            model,
            scaler,
            features: m.config.clone(),
            columns: m.column_names.clone(),
            split_rule: cfg.split_rule,
        };
        write_atomic(path, to_json(&artifact).as_bytes())?;
    }
    echo_config(&cfg.out_dir, cfg)?;
    println!(
        "{} [{}] hour {:02}: mean {:.8} over {} folds",
        spec.family(),
        spec.param_summary(),
        cfg.cutoff,
        report.mean_score,
        folds.k
    );
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig) -> Result<()> {
    if cfg.model.families.is_empty() {
        return Err(usage("no model family given"));
    }
    cfg.hours.iter().try_for_each(|&h| check_hour(h))?;
    let (days, profiles) = load_dataset(cfg)?;
    let specs: Vec<ModelSpec> = cfg.model.families.iter().map(|&f| cfg.model.spec(f)).collect();
    let report = hourly_sweep(&days, &profiles, &cfg.hours, &specs, &cfg.features.at(0), &cfg.eval)?;
    if cfg.emits(OutputFormat::Csv) {
        write_out(&cfg.out_dir, "sweep.csv", &report.to_csv())?;
        write_out(&cfg.out_dir, "sweep_plot.csv", &report.to_plot_csv())?;
    }
    if cfg.emits(OutputFormat::Json) {
        write_out(&cfg.out_dir, "sweep.json", &report.to_json())?;
    }
    echo_config(&cfg.out_dir, cfg)?;
    for r in &report.rows {
        println!("hour {:02} {:<8} mean {:.8}", r.cutoff_hour.unwrap_or_default(), r.model.family(), r.mean_score);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct GridOutput<'a> {
    result: &'a crate::eval::GridResult,
    best: &'a ModelSpec,
    dataset: DatasetFingerprint,
}

fn cmd_gridsearch(cfg: &RunConfig) -> Result<()> {
    check_hour(cfg.cutoff)?;
    let family = cfg.model.single()?;
    let grid = cfg.grid.grid(family, &cfg.model);
    let (days, profiles) = load_dataset(cfg)?;
    let m = build_at(cfg, &days, &profiles, cfg.cutoff)?;
    let folds = cfg.eval.folds_for(&m)?;
    let result = match grid_search(&m, &grid, &folds) {
        Err(crate::eval::EvalError::EmptyGrid) => return Err(usage("grid is empty")),
        r => r?,
    };
    if cfg.emits(OutputFormat::Csv) {
        write_out(&cfg.out_dir, "grid.csv", &result.to_csv(folds.k))?;
    }
    if cfg.emits(OutputFormat::Json) {
        let out = GridOutput {
            result: &result,
            best: result.best_spec(),
            dataset: DatasetFingerprint::of(&m, 0),
        };
        write_out(&cfg.out_dir, "grid.json", &to_json(&out))?;
    }
    echo_config(&cfg.out_dir, cfg)?;
    for cell in &result.cells {
        match (&cell.report, &cell.rejected) {
            (Some(r), _) => println!("{:<60} mean {:.8}", cell.spec.param_summary(), r.mean_score),
            (None, Some(why)) => println!("{:<60} rejected: {why}", cell.spec.param_summary()),
            (None, None) => {}
        }
    }
    println!("best: {}", result.best_spec().param_summary());
    Ok(())
}

#[derive(Debug, Serialize)]
struct PredictOutput {
    user: String,
    date: NaiveDate,
    cutoff_hour: usize,
    prediction: Prediction,
}

fn read_day(path: &Path) -> Result<DayRecord> {
    let text = fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    match parse_document(&text).map_err(|e| data(format!("{}: {e}", path.display())))? {
        Document::Day(d) => Ok(d),
        Document::Profile(_) => Err(data(format!("{} is a profile, not a day", path.display()))),
    }
}

fn cmd_predict(cfg: &RunConfig, a: &PredictArgs) -> Result<()> {
    let text = fs::read_to_string(&a.model_file)
        .map_err(|e| data(format!("cannot read model {}: {e}", a.model_file.display())))?;
    let artifact: ModelArtifact =
        serde_json::from_str(&text).map_err(|e| data(format!("invalid model file {}: {e}", a.model_file.display())))?;
    let cutoff = artifact.features.cutoff_hour;
    if let Some(c) = a.cutoff {
        check_hour(c)?;
        if c != cutoff {
            return Err(data(format!("model was trained for cutoff {cutoff}, not {c}")));
        }
    }
    let weather = load_weather(cfg)?;
    let (day, yesterday) = match (&a.day, &a.user, a.date) {
        (Some(path), _, _) => (read_day(path)?, a.yesterday.as_deref().map(read_day).transpose()?),
        (None, Some(user), Some(date)) => {
            let store = Store::open_existing(cfg.store_path())?;
            let records = store.load_days()?;
            let find = |d: NaiveDate| records.iter().find(|r| r.user_id() == user && r.date() == d).cloned();
            let day = find(date).ok_or_else(|| data(format!("no stored day for {user} on {date}")))?;
            (day, date.pred_opt().and_then(find))
        }
        _ => return Err(usage("give either --day or both --user and --date")),
    };
    let today = to_hourly(&day, artifact.split_rule, weather.as_ref())?;
    let prev = yesterday
        .map(|y| to_hourly(&y, artifact.split_rule, weather.as_ref()))
        .transpose()?;
    if artifact.features.include_yesterday && prev.is_none() {
        return Err(data("the model uses the previous day's steps, but that day is missing"));
    }
    let x = feature_vector(&today, prev.as_ref(), &artifact.features);
    if x.len() != artifact.columns.len() {
        return Err(data(format!(
            "feature width {} does not match the model's {} columns",
            x.len(),
            artifact.columns.len()
        )));
    }
    let prediction = predict_row(&artifact.model, &artifact.scaler.transform(&x))?;
    let out = PredictOutput {
        user: today.user_id.clone(),
        date: today.date,
        cutoff_hour: cutoff,
        prediction,
    };
    let text = serde_json::to_string(&out).expect("prediction serializes");
    println!("{text}");
    if let Some(dir) = &a.out {
        write_out(dir, "prediction.json", &text)?;
        echo_config(dir, cfg)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hour_lists() {
        assert_eq!(parse_hours("11-15").unwrap(), vec![11, 12, 13, 14, 15]);
        assert_eq!(parse_hours("8, 12-13,8").unwrap(), vec![8, 12, 13]);
        assert_eq!(parse_hours("").unwrap(), Vec::<usize>::new());
        assert!(parse_hours("20-24").is_err());
        assert!(parse_hours("5-3").is_err());
        assert!(parse_hours("x").is_err());
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_fields() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
        let partial: RunConfig = serde_json::from_str(r#"{"cutoff": 14, "model": {"svm": {"c": 0.5, "kernel": "linear", "max_epochs": 10, "tol": 0.001, "shrinking": false, "seed": 1}}}"#).unwrap();
        assert_eq!(partial.cutoff, 14);
        assert_eq!(partial.model.svm.c, 0.5);
        assert_eq!(partial.model.families, vec![Family::Svm]);
        assert!(serde_json::from_str::<RunConfig>(r#"{"cutof": 14}"#).is_err());
    }

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from(["stepgoal", "sweep", "--hours", "3-4", "--c", "0.01", "--model", "svm,centroid"]).unwrap();
        let Command::Sweep(a) = &cli.command else { panic!() };
        let mut cfg = RunConfig::default();
        a.model.apply(&mut cfg.model).unwrap();
        assert_eq!(cfg.model.svm.c, 0.01);
        assert_eq!(cfg.model.families, vec![Family::Svm, Family::Centroid]);
        assert_eq!(a.hours.as_ref().unwrap().0, vec![3, 4]);
    }
}
