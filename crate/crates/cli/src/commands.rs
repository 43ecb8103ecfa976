use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use jfm_core::metrics::{evaluate as evaluate_fit, write_summary_csv, SummaryRow};
use jfm_core::simulation::{generate_scenario, run_sweep, simulated_truth, ScenarioSpec, StudyConfig, SweepPointResult};
use jfm_core::tuning::{grid_search, write_score_table, HyperGrid, TuningConfig};
use jfm_core::{fit_model, load_csv, standardize, write_csv, FitOptions, FitResult, GroupedDesign, JfmError, ModelKind, Problem};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::manifest::{now, RunManifest};
use crate::{CvArgs, DataArgs, EvaluateArgs, FitArgs, SimulateArgs};

const DEFAULT_GROUP_COL: &str = "group";
const DEFAULT_LABEL_COL: &str = "y";

/// A bad flag or flag combination caught by the CLI itself.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

/// 2 for input and validation problems, 3 for numerical or runtime failures.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<JfmError>() {
            return if e.is_validation() { 2 } else { 3 };
        }
        if cause.is::<Invalid>() || cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    3
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(JfmError::from).with_context(|| format!("parsing {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load(path: &Path, group_col: &str, label_col: &str) -> Result<GroupedDesign> {
    load_csv(path, group_col, label_col).with_context(|| format!("loading {}", path.display()))
}

fn manifest_path(out: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
        out.with_file_name(format!("{stem}.manifest.json"))
    })
}

fn columns(args: &DataArgs, group: &str, label: &str) -> (String, String) {
    (
        args.group_col.clone().unwrap_or_else(|| group.to_string()),
        args.label_col.clone().unwrap_or_else(|| label.to_string()),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub model: Option<ModelKind>,
    pub group_col: String,
    pub label_col: String,
    pub lambda_f: f64,
    pub lambda_sim: f64,
    pub lambda_sp: Vec<f64>,
    pub options: FitOptions,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            model: None,
            group_col: DEFAULT_GROUP_COL.into(),
            label_col: DEFAULT_LABEL_COL.into(),
            lambda_f: 0.01,
            lambda_sim: 0.01,
            lambda_sp: vec![0.01],
            options: FitOptions::default(),
        }
    }
}

fn resolve_fit_config(args: &FitArgs) -> Result<FitConfig> {
    let mut cfg: FitConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => FitConfig::default(),
    };
    if let Some(m) = args.model {
        cfg.model = Some(m);
    }
    if let Some(g) = &args.columns.group_col {
        cfg.group_col = g.clone();
    }
    if let Some(l) = &args.columns.label_col {
        cfg.label_col = l.clone();
    }
    if let Some(v) = args.lambda_f {
        cfg.lambda_f = v;
    }
    if let Some(v) = args.lambda_sim {
        cfg.lambda_sim = v;
    }
    if let Some(v) = &args.lambda_sp {
        cfg.lambda_sp = v.clone();
    }
    if let Some(v) = args.max_iter {
        cfg.options.solver.max_iter = v;
    }
    if let Some(v) = args.epsilon {
        cfg.options.solver.epsilon = v;
    }
    if args.no_standardize {
        cfg.options.standardize = false;
    }
    if cfg.model.is_none() {
        return Err(invalid("no model given; pass --model or set \"model\" in the config"));
    }
    Ok(cfg)
}

fn dump_operator(design: &GroupedDesign, cfg: &FitConfig, path: &Path) -> Result<()> {
    if cfg.model != Some(ModelKind::Jfm) {
        return Err(invalid("--dump-operator is only available for the jfm model"));
    }
    let d = if cfg.options.standardize { standardize(design)?.0 } else { design.clone() };
    let lsp = if cfg.lambda_sp.len() == 1 { vec![cfg.lambda_sp[0]; d.n_groups()] } else { cfg.lambda_sp.clone() };
    let problem = Problem::joint(&d, cfg.lambda_f, cfg.lambda_sim, &lsp, cfg.options.fairness_intercept)?;
    problem.operator().write_stacked_csv(path)?;
    Ok(())
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let started = now();
    let cfg = resolve_fit_config(args)?;
    let model = cfg.model.expect("checked in resolve_fit_config");
    let design = load(&args.data, &cfg.group_col, &cfg.label_col)?;
    let fit = fit_model(model, &design, cfg.lambda_f, cfg.lambda_sim, &cfg.lambda_sp, &cfg.options)?;
    let mut notes = Vec::new();
    if !fit.convergence.converged {
        let msg = format!("solver stopped at the iteration cap ({}) before converging", fit.convergence.iterations);
        log::warn!("{msg}");
        notes.push(msg);
    }
    write_text(&args.out, &(fit.to_json()? + "\n"))?;
    if let Some(p) = &args.dump_operator {
        dump_operator(&design, &cfg, p)?;
    }
    let config = json!({ "data": args.data, "fit": cfg });
    let mut manifest = RunManifest::new("fit", config, 0, started).input(&args.data)?;
    manifest.notes = notes;
    manifest.write(&manifest_path(&args.out, &args.manifest))
}

fn resolve_tuning(args: &CvArgs) -> Result<TuningConfig> {
    let mut cfg = match &args.grid {
        Some(p) => {
            let v: Value = read_json(p)?;
            if v.get("grid").is_some() || v.get("cv").is_some() {
                serde_json::from_value::<TuningConfig>(v).map_err(JfmError::from)?
            } else {
                TuningConfig { grid: serde_json::from_value::<HyperGrid>(v).map_err(JfmError::from)?, ..Default::default() }
            }
        }
        None => TuningConfig::default(),
    };
    if let Some(f) = args.folds {
        cfg.cv.folds = f;
    }
    if let Some(c) = args.criterion {
        cfg.cv.criterion = Some(c);
    }
    if let Some(s) = args.seed {
        cfg.cv.seed = s;
    }
    cfg.grid.validate()?;
    Ok(cfg)
}

pub fn cv(args: &CvArgs) -> Result<()> {
    let started = now();
    let tuning = resolve_tuning(args)?;
    let (group_col, label_col) = columns(&args.columns, DEFAULT_GROUP_COL, DEFAULT_LABEL_COL);
    let design = load(&args.data, &group_col, &label_col)?;
    let opts = FitOptions::default();
    let result = grid_search(&design, args.model, &tuning.grid, &opts, &tuning.cv)?;
    ensure_parent(&args.out)?;
    write_score_table(&args.out, &result)?;
    let best_path = args.best.clone().unwrap_or_else(|| args.out.with_file_name("best.json"));
    write_text(&best_path, &(serde_json::to_string_pretty(&result.best)? + "\n"))?;
    let failed = result.table.iter().filter(|r| r.error.is_some()).count();
    let config = json!({
        "data": args.data,
        "model": args.model,
        "group_col": group_col,
        "label_col": label_col,
        "tuning": tuning,
        "options": opts,
    });
    let mut manifest = RunManifest::new("cv", config, tuning.cv.seed, started).input(&args.data)?;
    if failed > 0 {
        manifest.notes.push(format!("{failed} of {} grid cells failed and scored NaN", result.table.len()));
    }
    manifest.write(&manifest_path(&args.out, &args.manifest))
}

fn parse_models(list: &str) -> Result<Vec<ModelKind>> {
    if list.trim() == "all" {
        return Ok(ModelKind::ALL.to_vec());
    }
    let mut out: Vec<ModelKind> = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let kind: ModelKind = name.parse()?;
        if !out.contains(&kind) {
            out.push(kind);
        }
    }
    if out.is_empty() {
        return Err(invalid("--models selected no models"));
    }
    Ok(out)
}

fn resolve_simulation(args: &SimulateArgs) -> Result<(ScenarioSpec, StudyConfig)> {
    let mut spec = match &args.config {
        Some(p) => read_json::<ScenarioSpec>(p)?,
        None => ScenarioSpec::default(),
    };
    spec.scenario = args.scenario;
    if let Some(r) = args.replicates {
        spec.replicates = r;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(v) = &args.sweep {
        spec.sweep = Some(v.clone());
    }
    spec.validate()?;
    let mut study = match &args.study {
        Some(p) => read_json::<StudyConfig>(p)?,
        None => StudyConfig::default(),
    };
    if let Some(m) = &args.models {
        study.models = parse_models(m)?;
    }
    Ok((spec, study))
}

fn replicate_rows(points: &[SweepPointResult], models: &[ModelKind]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sweep_value", "replicate", "model", "metric", "value"])?;
    for point in points {
        for o in &point.outcomes {
            for kind in models {
                let Some(report) = o.reports.get(kind) else { continue };
                for (metric, value) in report.flatten() {
                    w.write_record([
                        point.sweep_value.to_string(),
                        o.replicate.to_string(),
                        kind.to_string(),
                        metric,
                        value.to_string(),
                    ])?;
                }
            }
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?)?)
}

fn hyper_rows(points: &[SweepPointResult], models: &[ModelKind]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sweep_value", "replicate", "model", "lambda_f", "lambda_sim", "lambda_sp"])?;
    for point in points {
        for o in &point.outcomes {
            for kind in models {
                let Some(h) = o.hypers.get(kind) else { continue };
                let sp: Vec<String> = h.lambda_sp.iter().map(|v| v.to_string()).collect();
                w.write_record([
                    point.sweep_value.to_string(),
                    o.replicate.to_string(),
                    kind.to_string(),
                    h.lambda_f.to_string(),
                    h.lambda_sim.to_string(),
                    sp.join(";"),
                ])?;
            }
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?)?)
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let started = now();
    let (spec, study) = resolve_simulation(args)?;
    let out = &args.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let points = run_sweep(&spec, &study)?;

    let summary: Vec<SummaryRow> = points.iter().flat_map(|p| p.summary.iter().cloned()).collect();
    write_summary_csv(out.join("summary.csv"), &summary)?;
    write_text(&out.join("replicates.csv"), &replicate_rows(&points, &study.models)?)?;
    write_text(&out.join("hypers.csv"), &hyper_rows(&points, &study.models)?)?;

    let truth_dir = out.join("truth");
    fs::create_dir_all(&truth_dir)?;
    for (i, v) in spec.sweep_values().into_iter().enumerate() {
        let resolved = spec.at(v)?;
        for r in 0..spec.replicates {
            let truth = simulated_truth(&resolved, r)?;
            let doc = json!({ "sweep_value": v, "replicate": r, "truth": truth });
            write_text(&truth_dir.join(format!("point{i}_rep{r}.json")), &(serde_json::to_string_pretty(&doc)? + "\n"))?;
            if args.write_data {
                let (train, test, _) = generate_scenario(&resolved, r)?;
                let data_dir = out.join("data");
                fs::create_dir_all(&data_dir)?;
                write_csv(&train, data_dir.join(format!("point{i}_rep{r}_train.csv")), DEFAULT_GROUP_COL, DEFAULT_LABEL_COL)?;
                write_csv(&test, data_dir.join(format!("point{i}_rep{r}_test.csv")), DEFAULT_GROUP_COL, DEFAULT_LABEL_COL)?;
            }
        }
    }

    let config = json!({ "scenario": spec, "study": study });
    let mut manifest = RunManifest::new("simulate", config, spec.seed, started);
    if let Some(p) = &args.config {
        manifest = manifest.input(p)?;
    }
    if let Some(p) = &args.study {
        manifest = manifest.input(p)?;
    }
    for point in &points {
        for (r, msg) in &point.failures {
            manifest.notes.push(format!("sweep value {}: replicate {r} excluded: {msg}", point.sweep_value));
        }
    }
    manifest.write(&out.join("manifest.json"))
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let started = now();
    let text = fs::read_to_string(&args.fit).with_context(|| format!("reading {}", args.fit.display()))?;
    let fit = FitResult::from_json(&text).with_context(|| format!("parsing {}", args.fit.display()))?;
    if !(0.0..=1.0).contains(&args.cutoff) {
        return Err(invalid(format!("--cutoff must lie in [0, 1], got {}", args.cutoff)));
    }
    let (group_col, label_col) = columns(&args.columns, DEFAULT_GROUP_COL, DEFAULT_LABEL_COL);
    let design = load(&args.data, &group_col, &label_col)?;
    let report = evaluate_fit(&fit, &design, args.cutoff, None)?;
    write_text(&args.out, &(report.to_json()? + "\n"))?;
    let config = json!({
        "fit": args.fit,
        "data": args.data,
        "group_col": group_col,
        "label_col": label_col,
        "cutoff": args.cutoff,
    });
    RunManifest::new("evaluate", config, 0, started)
        .input(&args.fit)?
        .input(&args.data)?
        .write(&manifest_path(&args.out, &args.manifest))
}
