use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn stepgoal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stepgoal"))
        .args(args)
        .env_remove("STEPGOAL_STORE")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = stepgoal(args);
    assert!(
        out.status.success(),
        "stepgoal {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(store: &Path) {
    ok(&["synth", "--users", "12", "--days", "20", "--seed", "5", "--out", p(store)]);
}

const PEDOMETER: &str = r#"{"user":"u1","date":"2015-03-02","source":"pedometer","entries":[{"m":480,"steps":120},{"m":481,"steps":95},{"m":1020,"steps":300}]}"#;
const PEDOMETER_NEXT: &str = r#"{"user":"u1","date":"2015-03-03","source":"pedometer","entries":[{"m":600,"steps":4000}]}"#;
const STORYLINE: &str = r#"{"user":"u2","date":"2015-03-02","source":"storyline","segments":[
  {"kind":"location","start":"07:00:00","end":"08:30:00","steps":300,"place":{"name":"Home","type":"home"}},
  {"kind":"transition","start":"08:30:00","end":"09:10:00","steps":3200}]}"#;
const PROFILE: &str = r#"{"user":"u1","goal":8000,"gender":"f","age":31}"#;

#[test]
fn synth_then_sweep_writes_one_row_per_hour_and_model() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("store");
    let out = tmp.path().join("reports");
    synth(&store);
    ok(&["sweep", "--store", p(&store), "--hours", "11-15", "--model", "svm", "--out", p(&out)]);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "hour,model,param_summary,fold1,fold2,fold3,fold4,fold5,mean");
    assert_eq!(lines.len(), 6);
    for (line, hour) in lines[1..].iter().zip(11..) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0], hour.to_string());
        assert_eq!(fields[1], "svm");
        let folds: Vec<f64> = fields[3..8].iter().map(|f| f.parse().unwrap()).collect();
        let mean: f64 = fields[8].parse().unwrap();
        assert!((folds.iter().sum::<f64>() / 5.0 - mean).abs() < 1e-8);
        assert!(fields[8].split('.').nth(1).unwrap().len() == 8);
    }
    let plot = fs::read_to_string(out.join("sweep_plot.csv")).unwrap();
    assert_eq!(plot.lines().count(), 6);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 5);
    assert!(out.join("sweep.config.json").exists());
}

#[test]
fn ingest_accepts_both_sources_and_profiles() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("store");
    let files: Vec<_> = [("a.json", PEDOMETER), ("b.json", PEDOMETER_NEXT), ("c.json", STORYLINE), ("p.json", PROFILE)]
        .iter()
        .map(|(name, body)| {
            let path = tmp.path().join(name);
            fs::write(&path, body).unwrap();
            path
        })
        .collect();
    let mut args = vec!["ingest", "--store", p(&store)];
    args.extend(files.iter().map(|f| p(f)));
    ok(&args);
    assert!(store.join("days/u1/2015-03-02.json").exists());
    assert!(store.join("days/u2/2015-03-02.json").exists());
    assert!(store.join("profiles/u1.json").exists());
    // identical content again is a no-op
    ok(&args);

    let out = tmp.path().join("f");
    ok(&["featurize", "--store", p(&store), "--cutoff", "9", "--yesterday", "false", "--out", p(&out)]);
    let csv = fs::read_to_string(out.join("features_h09.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().next().unwrap().ends_with("y_class,y_reg"));
}

#[test]
fn malformed_input_exits_2_and_leaves_store_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("store");
    let good = tmp.path().join("good.json");
    let bad = tmp.path().join("bad.json");
    fs::write(&good, PEDOMETER).unwrap();
    fs::write(&bad, r#"{"user":"u9","date":"2015-13-40","source":"pedometer","entries":[]}"#).unwrap();
    let out = stepgoal(&["ingest", "--store", p(&store), p(&good), p(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bad.json"), "{stderr}");
    assert_eq!(stderr.trim().lines().count(), 1);
    assert!(!store.join("days").exists());
}

#[test]
fn empty_store_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir(tmp.path().join("empty")).unwrap();
    let out = stepgoal(&["featurize", "--store", p(&tmp.path().join("empty")), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no days found"));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(stepgoal(&["sweep", "--hours", "25"]).status.code(), Some(1));
    assert_eq!(stepgoal(&["sweep", "--bogus"]).status.code(), Some(1));
    assert_eq!(stepgoal(&["--config", "/nonexistent/config.json", "sweep"]).status.code(), Some(1));
    assert_eq!(stepgoal(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_echo_reruns_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("store");
    synth(&store);
    let first = tmp.path().join("first");
    ok(&[
        "gridsearch", "--store", p(&store), "--cutoff", "13", "--model", "svm", "--grid-c", "0.01,1",
        "--grid-kernel", "linear,rbf", "--folds", "4", "--out", p(&first),
    ]);
    let echo = first.join("gridsearch.config.json");
    let second = tmp.path().join("second");
    ok(&["--config", p(&echo), "gridsearch", "--out", p(&second)]);
    for name in ["grid.csv", "grid.json"] {
        assert_eq!(fs::read(first.join(name)).unwrap(), fs::read(second.join(name)).unwrap(), "{name}");
    }
    let csv = fs::read_to_string(first.join("grid.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().any(|l| l.contains("kernel=rbf") && l.ends_with(",,,,")));

    // flags still win over the file
    let third = tmp.path().join("third");
    ok(&["--config", p(&echo), "gridsearch", "--folds", "3", "--out", p(&third)]);
    let header = fs::read_to_string(third.join("grid.csv")).unwrap();
    assert!(header.starts_with("hour,model,param_summary,fold1,fold2,fold3,mean"));
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("store");
    synth(&store);
    let run = |threads: &str| {
        let out = tmp.path().join(format!("t{threads}"));
        ok(&[
            "--threads", threads, "sweep", "--store", p(&store), "--hours", "12,14", "--model", "svm,centroid,lasso",
            "--out", p(&out),
        ]);
        fs::read(out.join("sweep.json")).unwrap()
    };
    assert_eq!(run("1"), run("6"));
}

#[test]
fn select_writes_diagnostic_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("store");
    synth(&store);
    let out = tmp.path().join("sel");
    ok(&["select", "--store", p(&store), "--hours", "11-12", "--components", "3", "--out", p(&out)]);
    let imp = fs::read_to_string(out.join("importance.csv")).unwrap();
    assert!(imp.starts_with("hour,hour_00,"));
    assert_eq!(imp.lines().count(), 3);
    let pca = fs::read_to_string(out.join("pca.csv")).unwrap();
    assert_eq!(pca.lines().count(), 1 + 2 * 3);
    assert!(fs::read_to_string(out.join("lasso.csv")).unwrap().starts_with("hour,alpha,r2,nonzero"));
}

#[test]
fn saved_model_scores_a_raw_day() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("store");
    synth(&store);
    let model = tmp.path().join("model.json");
    ok(&["eval", "--store", p(&store), "--cutoff", "14", "--model", "centroid", "--save-model", p(&model), "--out", p(&tmp.path().join("e"))]);
    let stdout = ok(&["predict", "--model-file", p(&model), "--store", p(&store), "--user", "u003", "--date", "2015-01-10"]);
    let v: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(v["user"], "u003");
    assert_eq!(v["cutoff_hour"], 14);
    assert!(v["prediction"]["class"].is_boolean());

    let day = store.join("days/u003/2015-01-10.json");
    let out = stepgoal(&["predict", "--model-file", p(&model), "--day", p(&day)]);
    assert_eq!(out.status.code(), Some(2), "previous day is required by the model");
    let prev = store.join("days/u003/2015-01-09.json");
    let direct = ok(&["predict", "--model-file", p(&model), "--day", p(&day), "--yesterday", p(&prev)]);
    assert_eq!(direct, stdout);
    let wrong = stepgoal(&["predict", "--model-file", p(&model), "--day", p(&day), "--yesterday", p(&prev), "--cutoff", "9"]);
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn store_path_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("envstore");
    synth(&store);
    let out = Command::new(env!("CARGO_BIN_EXE_stepgoal"))
        .args(["featurize", "--cutoff", "10", "--out", p(&tmp.path().join("o"))])
        .env("STEPGOAL_STORE", &store)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
