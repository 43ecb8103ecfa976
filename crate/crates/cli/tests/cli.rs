use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jfm_core::simulation::{generate_scenario, Scenario, ScenarioSpec};
use jfm_core::{write_csv, GroupData, GroupedDesign};
use tempfile::TempDir;

fn jfm() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_jfm"));
    c.env("JF_WORKERS", "2");
    c
}

fn run(args: &[&str], dir: &Path) -> Output {
    jfm().args(args).current_dir(dir).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_design(seed: u64) -> GroupedDesign {
    let spec = ScenarioSpec {
        scenario: Scenario::MinoritySizeSweep,
        p: 6,
        n1: 80,
        n2: 50,
        n_nonzero: Some(3),
        n_test: 60,
        seed,
        ..Default::default()
    };
    generate_scenario(&spec, 0).unwrap().0
}

fn write_data(dir: &Path, name: &str, d: &GroupedDesign) -> PathBuf {
    let p = dir.join(name);
    write_csv(d, &p, "group", "y").unwrap();
    p
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn fit_writes_one_block_per_group() {
    let dir = TempDir::new().unwrap();
    write_data(dir.path(), "train.csv", &small_design(1));
    let args = ["fit", "train.csv", "--model", "jfm", "--lambda-f", "0.05", "--lambda-sim", "0.05", "--lambda-sp", "0.02", "--out", "fit.json"];
    let o = run(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let fit = json(&dir.path().join("fit.json"));
    assert_eq!(fit["coefficients"].as_array().unwrap().len(), 2);
    let m = json(&dir.path().join("fit.manifest.json"));
    assert_eq!(m["command"], "fit");
    assert_eq!(m["config_digest"].as_str().unwrap().len(), 64);

    let first = fs::read(dir.path().join("fit.json")).unwrap();
    let o = run(&args, dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(first, fs::read(dir.path().join("fit.json")).unwrap());
    let m2 = json(&dir.path().join("fit.manifest.json"));
    assert_eq!(m["config_digest"], m2["config_digest"]);
}

#[test]
fn jfm_on_one_group_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let d = small_design(2);
    let one = GroupedDesign::new(vec![d.group(0).clone()], d.feature_names().to_vec()).unwrap();
    write_data(dir.path(), "one.csv", &one);
    let o = run(&["fit", "one.csv", "--model", "jfm", "--out", "fit.json"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("at least two groups"), "{}", stderr(&o));
    assert!(!dir.path().join("fit.json").exists());
}

#[test]
fn malformed_inputs_exit_with_2() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("bad.csv"), "group,x1,y\ng1,1.0,2\n").unwrap();
    let o = run(&["fit", "bad.csv", "--model", "separate", "--out", "fit.json"], dir.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = run(&["fit", "missing.csv", "--model", "separate", "--out", "fit.json"], dir.path());
    assert_eq!(code(&o), 2);
    let o = run(&["fit", "bad.csv", "--model", "nonsense", "--out", "fit.json"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn config_values_yield_to_flags() {
    let dir = TempDir::new().unwrap();
    write_data(dir.path(), "train.csv", &small_design(3));
    fs::write(dir.path().join("cfg.json"), r#"{"model": "sfm", "lambda_f": 0.2, "lambda_sp": [0.05]}"#).unwrap();
    let o = run(&["fit", "train.csv", "--config", "cfg.json", "--lambda-f", "0.3", "--out", "fit.json"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let fit = json(&dir.path().join("fit.json"));
    assert_eq!(fit["model_kind"], "sfm");
    assert_eq!(fit["hyperparameters"]["lambda_f"], 0.3);
    let m = json(&dir.path().join("fit.manifest.json"));
    assert_eq!(m["config"]["fit"]["lambda_f"], 0.3);
    assert_eq!(m["config"]["fit"]["lambda_sp"][0], 0.05);
}

#[test]
fn dump_operator_writes_the_stacked_matrix() {
    let dir = TempDir::new().unwrap();
    write_data(dir.path(), "train.csv", &small_design(4));
    let o = run(
        &["fit", "train.csv", "--model", "jfm", "--lambda-f", "1", "--lambda-sim", "2", "--out", "fit.json", "--dump-operator", "op.csv"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("op.csv")).unwrap();
    let rows: Vec<Vec<f64>> =
        text.lines().map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    // K(K-1)/2 · (p + 2) rows over K(p+1) columns, p = 6
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.len() == 14));
    // fusion rows carry ±λSim on matching slopes
    assert_eq!(rows[2][0], 2.0);
    assert_eq!(rows[2][7], -2.0);
}

#[test]
fn evaluate_matches_training_diagnostics() {
    let dir = TempDir::new().unwrap();
    write_data(dir.path(), "train.csv", &small_design(5));
    let o = run(&["fit", "train.csv", "--model", "separate", "--lambda-sp", "0.03", "--out", "fit.json"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&["evaluate", "fit.json", "train.csv", "--out", "m.json"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let fit = json(&dir.path().join("fit.json"));
    let m = json(&dir.path().join("m.json"));
    for (k, g) in ["group1", "group2"].iter().enumerate() {
        assert_eq!(m["per_group"][g]["auc"], fit["training_auc"][k]);
    }

    let o = run(&["evaluate", "fit.json", "train.csv", "--cutoff", "0.3", "--out", "m3.json"], dir.path());
    assert_eq!(code(&o), 0);
    let m3 = json(&dir.path().join("m3.json"));
    assert_eq!(m3["per_group"]["group1"]["auc"], m["per_group"]["group1"]["auc"]);
    assert_eq!(m3["cutoff"], 0.3);
    assert!(m3["per_group"]["group1"]["fpr"].as_f64() >= m["per_group"]["group1"]["fpr"].as_f64());
}

#[test]
fn evaluate_rejects_unknown_groups_and_features() {
    let dir = TempDir::new().unwrap();
    let d = small_design(6);
    write_data(dir.path(), "train.csv", &d);
    let o = run(&["fit", "train.csv", "--model", "ignorant", "--lambda-sp", "0.03", "--out", "fit.json"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let mut g = d.group(1).clone();
    g.id = "group9".into();
    let other = GroupedDesign::new(vec![d.group(0).clone(), g], d.feature_names().to_vec()).unwrap();
    write_data(dir.path(), "other.csv", &other);
    let o = run(&["evaluate", "fit.json", "other.csv", "--out", "m.json"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("group9"), "{}", stderr(&o));

    let renamed: Vec<String> = d.feature_names().iter().map(|f| if f == "x2" { "z2".to_string() } else { f.clone() }).collect();
    let groups: Vec<GroupData> = d.groups().to_vec();
    write_data(dir.path(), "renamed.csv", &GroupedDesign::new(groups, renamed).unwrap());
    let o = run(&["evaluate", "fit.json", "renamed.csv", "--out", "m.json"], dir.path());
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("x2") && err.contains("z2"), "{err}");
}

#[test]
fn cv_single_cell_grid_echoes_the_cell() {
    let dir = TempDir::new().unwrap();
    write_data(dir.path(), "train.csv", &small_design(7));
    fs::write(dir.path().join("grid.json"), r#"{"lambda_f": [0.05], "lambda_sim": [0.02], "lambda_sp": [0.1]}"#).unwrap();
    let o = run(&["cv", "train.csv", "--model", "jfm", "--grid", "grid.json", "--folds", "3", "--out", "cv.csv"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let best = json(&dir.path().join("best.json"));
    assert_eq!(best["lambda_f"], 0.05);
    assert_eq!(best["lambda_sim"], 0.02);
    // λSp/√n_k with n = (80, 50)
    let sp: Vec<f64> = best["lambda_sp"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!((sp[0] - 0.1 / 80f64.sqrt()).abs() < 1e-15);
    assert!((sp[1] - 0.1 / 50f64.sqrt()).abs() < 1e-15);
    let table = fs::read_to_string(dir.path().join("cv.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
    assert!(table.starts_with("lambda_f,lambda_sim,lambda_sp,criterion,score,auc_group1,auc_group2"));
}

#[test]
fn cv_tables_are_reproducible_per_seed() {
    let dir = TempDir::new().unwrap();
    write_data(dir.path(), "train.csv", &small_design(8));
    fs::write(dir.path().join("grid.json"), r#"{"lambda_sp": [0.01, 0.1, 1.0]}"#).unwrap();
    let table = |seed: &str, out: &str| {
        let o = run(&["cv", "train.csv", "--model", "separate", "--grid", "grid.json", "--seed", seed, "--out", out], dir.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read_to_string(dir.path().join(out)).unwrap()
    };
    assert_eq!(table("1", "a.csv"), table("1", "b.csv"));
    let other = table("2", "c.csv");
    assert_eq!(other.lines().count(), 4);
}

#[test]
fn cv_criteria_agree_on_symmetric_groups() {
    let dir = TempDir::new().unwrap();
    let d = small_design(9);
    let mut twin = d.group(0).clone();
    twin.id = "twin".into();
    let sym = GroupedDesign::new(vec![d.group(0).clone(), twin], d.feature_names().to_vec()).unwrap();
    write_data(dir.path(), "sym.csv", &sym);
    fs::write(dir.path().join("grid.json"), r#"{"lambda_f": [0.01, 0.1], "lambda_sim": [0.05], "lambda_sp": [0.05, 0.5]}"#).unwrap();
    let scores = |criterion: &str, out: &str| -> Vec<f64> {
        let o = run(&["cv", "sym.csv", "--model", "jfm", "--grid", "grid.json", "--criterion", criterion, "--out", out], dir.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let mut r = csv::Reader::from_path(dir.path().join(out)).unwrap();
        r.records().map(|rec| rec.unwrap()[4].parse().unwrap()).collect()
    };
    let h = scores("group_avg_auc_harmonic", "h.csv");
    let a = scores("group_avg_auc_arithmetic", "a.csv");
    assert_eq!(h.len(), 4);
    for (x, y) in h.iter().zip(&a) {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}

#[test]
fn cv_infeasible_stratification_exits_2() {
    let dir = TempDir::new().unwrap();
    write_data(dir.path(), "train.csv", &small_design(10));
    let o = run(&["cv", "train.csv", "--model", "separate", "--folds", "60", "--out", "cv.csv"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("fewer than 60 folds"), "{}", stderr(&o));
}

const SIM_SPEC: &str = r#"{"p": 8, "n1": 120, "n_nonzero": 3, "n_test": 150, "replicates": 2, "sweep": [50]}"#;
const SIM_STUDY: &str = r#"{"fit": {"solver": {"max_iter": 3000}}}"#;

fn simulate(dir: &Path, out: &str, extra: &[&str]) -> Output {
    fs::write(dir.join("spec.json"), SIM_SPEC).unwrap();
    fs::write(dir.join("study.json"), SIM_STUDY).unwrap();
    let mut args = vec!["simulate", "--scenario", "2", "--config", "spec.json", "--study", "study.json", "--out", out];
    args.extend_from_slice(extra);
    run(&args, dir)
}

#[test]
fn simulate_writes_rows_for_every_model() {
    let dir = TempDir::new().unwrap();
    let o = simulate(dir.path(), "out", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut r = csv::Reader::from_path(dir.path().join("out/summary.csv")).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), ["sweep_value", "model", "metric", "median", "q1", "q3"]);
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    let models: std::collections::BTreeSet<String> = rows.iter().map(|r| r[1].to_string()).collect();
    assert_eq!(models.into_iter().collect::<Vec<_>>(), ["ignorant", "jfm", "separate", "sfm"]);
    for m in ["jfm", "sfm", "separate", "ignorant"] {
        let metrics: Vec<&str> = rows.iter().filter(|r| &r[1] == m).map(|r| r.get(2).unwrap()).collect();
        assert!(metrics.contains(&"auc_group2") && metrics.contains(&"disparity_auc") && metrics.contains(&"mse_group1"));
    }
    assert!(dir.path().join("out/truth/point0_rep1.json").exists());
    let m = json(&dir.path().join("out/manifest.json"));
    assert_eq!(m["config"]["scenario"]["coef_value"], 3.0);
    assert_eq!(m["config"]["scenario"]["n2"], 200);
    assert_eq!(m["seed"], 0);
}

#[test]
fn simulate_respects_model_selection() {
    let dir = TempDir::new().unwrap();
    let o = simulate(dir.path(), "out", &["--models", "jfm,separate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut r = csv::Reader::from_path(dir.path().join("out/summary.csv")).unwrap();
    let models: std::collections::BTreeSet<String> = r.records().map(|x| x.unwrap()[1].to_string()).collect();
    assert_eq!(models.into_iter().collect::<Vec<_>>(), ["jfm", "separate"]);
}

#[test]
fn simulate_rejects_bad_specs() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"p": 10, "n_nonzero": 9, "shared_fraction": 0.0}"#).unwrap();
    let o = run(&["simulate", "--scenario", "1", "--config", "bad.json", "--sweep", "0", "--out", "out"], dir.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = run(&["simulate", "--scenario", "4", "--out", "out"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn worker_count_does_not_change_outputs() {
    let dir = TempDir::new().unwrap();
    let o = simulate(dir.path(), "one", &["--workers", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = simulate(dir.path(), "four", &["--workers", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["summary.csv", "replicates.csv", "hypers.csv"] {
        assert_eq!(fs::read(dir.path().join("one").join(f)).unwrap(), fs::read(dir.path().join("four").join(f)).unwrap(), "{f}");
    }
}
