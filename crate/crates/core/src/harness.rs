//! Monte Carlo experiment harness: presets, seeded sweeps over trajectory
//! lengths, persistence of per-trial rows and aggregate medians, the
//! one-stage failure demonstration, and plot-data emission.
//!
//! Output files written to `output_dir`:
//!
//! | file                | content                                                   |
//! |---------------------|-----------------------------------------------------------|
//! | `config.json`       | the fully expanded configuration                          |
//! | `rows.partial.csv`  | rows appended as trials finish (removed on success)       |
//! | `rows.csv`          | all rows sorted by `(t, trial, estimator)`                |
//! | `aggregates.csv`    | medians and quartiles per `(t, estimator)`                |
//! | `timings.csv`       | wall time per work unit (not part of the deterministic output) |
//!
//! `rows.csv` columns: `preset, t, trial, seed, estimator, status, opnorm_err,
//! frob_err, row_errs, retained_median, retained_min, tp, fp, fn, tn,
//! misclass_rate, certified, message`. Detection columns are filled for the
//! two-stage estimator only; `misclass_rate` is the median over nodes of
//! `(FP + FN) / |C|` on the middle-norm set `C` (all indices for the threshold
//! rule). `row_errs` joins the per-row errors with `;`.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::estimators::{self, LadConfig, OneStage};
use crate::filtering::{self, FilterResult, RankingParams};
use crate::numerics::{Matrix, Vector};
use crate::pipeline::{self, estimation_error, FilterMode, TwoStageConfig};
use crate::rng::trial_seed;
use crate::simulate::{simulate, AttackKind, AttackSchedule, AttackStrategy, NoiseModel};
use crate::sysgen::{generate_system, SystemMatrix, SystemSpec};

/// Named parameter bundles; every field can still be overridden in the config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    OneStageComparison,
    FilterVisualization,
    TwoStageVsOneStage,
    OneStageFailureDemo,
    Custom,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::OneStageComparison,
        Preset::FilterVisualization,
        Preset::TwoStageVsOneStage,
        Preset::OneStageFailureDemo,
        Preset::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::OneStageComparison => "one_stage_comparison",
            Preset::FilterVisualization => "filter_visualization",
            Preset::TwoStageVsOneStage => "two_stage_vs_one_stage",
            Preset::OneStageFailureDemo => "one_stage_failure_demo",
            Preset::Custom => "custom",
        }
    }

    /// Accepts the snake_case name or the same name with dashes.
    pub fn parse(s: &str) -> Result<Preset> {
        let norm = s.replace('-', "_");
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == norm)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown preset '{s}'")))
    }
}

/// Estimators a sweep can run on each trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorName {
    Ls,
    L2,
    L1,
    TwoStage,
}

impl EstimatorName {
    pub fn label(self) -> &'static str {
        match self {
            EstimatorName::Ls => "ls",
            EstimatorName::L2 => "l2",
            EstimatorName::L1 => "l1",
            EstimatorName::TwoStage => "two_stage",
        }
    }
}

/// Full description of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub system: SystemSpec,
    /// Uses this matrix instead of generating one from `system`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_matrix: Option<SystemMatrix>,
    pub noise: NoiseModel,
    pub attack: AttackStrategy,
    pub t_grid: Vec<usize>,
    pub seeds: usize,
    pub base_seed: u64,
    pub filter: TwoStageConfig,
    pub estimators: Vec<EstimatorName>,
    /// One trajectory of length `max(t_grid)` per trial; each grid point uses its prefix.
    /// The two-stage estimator then fits Stage I and the filter on the whole
    /// trajectory and Stage II on the retained indices below the grid point.
    #[serde(default)]
    pub nested: bool,
    /// Repeats every trial without attack on the same noise stream (rows suffixed `_no_attack`).
    #[serde(default)]
    pub compare_no_attack: bool,
    /// Records residual scatter data of trial 0 at the first grid point.
    #[serde(default)]
    pub scatter: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn reference_system() -> SystemSpec {
    SystemSpec {
        n: 10,
        rho_target: 0.75,
        opnorm_target: 1.5,
        seed: 42,
    }
}

/// Bounded offset attack. The state-proportional attack diverges on this system.
fn reference_attack() -> AttackStrategy {
    AttackStrategy {
        kind: AttackKind::FixedOffset { mu: 120.0 },
        p: 0.4,
    }
}

fn reference_filter() -> TwoStageConfig {
    TwoStageConfig::new(FilterMode::Ranking(RankingParams::fixed_cutoff(30.0, 600.0, 0.1)))
}

impl ExperimentConfig {
    /// Default parameters of a preset.
    pub fn preset(preset: Preset) -> ExperimentConfig {
        let base = ExperimentConfig {
            preset,
            system: reference_system(),
            system_matrix: None,
            noise: NoiseModel::gaussian(3.0),
            attack: reference_attack(),
            t_grid: vec![250, 500, 1000, 2000, 4000],
            seeds: 10,
            base_seed: 2024,
            filter: reference_filter(),
            estimators: vec![EstimatorName::Ls, EstimatorName::L2, EstimatorName::L1],
            nested: false,
            compare_no_attack: false,
            scatter: false,
            output_dir: None,
        };
        match preset {
            Preset::OneStageComparison | Preset::Custom => base,
            Preset::FilterVisualization => ExperimentConfig {
                t_grid: vec![1000],
                seeds: 1,
                estimators: vec![EstimatorName::L1, EstimatorName::TwoStage],
                scatter: true,
                ..base
            },
            Preset::TwoStageVsOneStage => ExperimentConfig {
                estimators: vec![EstimatorName::L1, EstimatorName::TwoStage],
                nested: true,
                ..base
            },
            Preset::OneStageFailureDemo => ExperimentConfig {
                system: SystemSpec {
                    n: 2,
                    rho_target: 0.5,
                    opnorm_target: 0.5,
                    seed: 0,
                },
                system_matrix: Some(zero_system(2)),
                attack: AttackStrategy {
                    kind: AttackKind::MisleadingAlternating { c_bar: 90.0 },
                    p: 0.45,
                },
                t_grid: vec![10, 100, 1_000, 10_000, 100_000],
                estimators: vec![EstimatorName::Ls],
                nested: true,
                compare_no_attack: true,
                ..base
            },
        }
    }

    /// Parses a config document: the `preset` field (default `custom`) supplies
    /// every parameter, and the remaining fields of the document override them.
    /// Nested objects are merged key by key.
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let user: Value = serde_json::from_str(text)?;
        let obj = user
            .as_object()
            .ok_or_else(|| Error::InvalidParameter("config must be a JSON object".into()))?;
        let preset = match obj.get("preset") {
            Some(Value::String(s)) => Preset::parse(s)?,
            Some(_) => return Err(Error::InvalidParameter("preset must be a string".into())),
            None => Preset::Custom,
        };
        let mut merged = serde_json::to_value(ExperimentConfig::preset(preset))?;
        merge_json(&mut merged, &user);
        let cfg: ExperimentConfig = serde_json::from_value(merged)
            .map_err(|e| Error::InvalidParameter(format!("config does not match the schema: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_grid.is_empty() || self.t_grid.windows(2).any(|w| w[0] >= w[1]) || self.t_grid[0] == 0 {
            return Err(Error::InvalidParameter("t_grid must be non-empty, positive and strictly increasing".into()));
        }
        if self.seeds == 0 {
            return Err(Error::InvalidParameter("seeds must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidParameter("no estimators selected".into()));
        }
        self.noise.validate()?;
        self.attack.validate()?;
        match &self.system_matrix {
            Some(m) if !m.a.is_square() => Err(Error::InvalidParameter("system_matrix must be square".into())),
            Some(m) => self.filter.validate(m.n()),
            None => {
                self.system.validate()?;
                self.filter.validate(self.system.n)
            }
        }
    }

    pub fn t_max(&self) -> usize {
        *self.t_grid.last().unwrap_or(&0)
    }
}

fn zero_system(n: usize) -> SystemMatrix {
    SystemMatrix {
        a: Matrix::zeros(n, n),
        rho: 0.0,
        opnorm: 0.0,
        psi: 1.0,
    }
}

fn merge_json(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    // tagged enums change shape with their tag, so replace them wholesale
                    Some(slot) if slot.is_object() && v.is_object() && !changes_tag(slot, v) => merge_json(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

fn changes_tag(base: &Value, over: &Value) -> bool {
    ["kind", "rule"]
        .iter()
        .any(|tag| over.get(tag).is_some() && over.get(tag) != base.get(tag))
}

/// One line of `rows.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub preset: String,
    pub t: usize,
    pub trial: usize,
    pub seed: u64,
    pub estimator: String,
    pub status: String,
    pub opnorm_err: Option<f64>,
    pub frob_err: Option<f64>,
    pub row_errs: String,
    pub retained_median: Option<f64>,
    pub retained_min: Option<usize>,
    pub tp: Option<usize>,
    pub fp: Option<usize>,
    #[serde(rename = "fn")]
    pub fn_: Option<usize>,
    pub tn: Option<usize>,
    pub misclass_rate: Option<f64>,
    pub certified: Option<bool>,
    pub message: String,
}

impl ExperimentRow {
    fn blank(cfg: &ExperimentConfig, t: usize, trial: usize, seed: u64, estimator: String) -> Self {
        ExperimentRow {
            preset: cfg.preset.name().to_string(),
            t,
            trial,
            seed,
            estimator,
            status: "ok".into(),
            opnorm_err: None,
            frob_err: None,
            row_errs: String::new(),
            retained_median: None,
            retained_min: None,
            tp: None,
            fp: None,
            fn_: None,
            tn: None,
            misclass_rate: None,
            certified: None,
            message: String::new(),
        }
    }

    fn fail(mut self, e: &Error) -> Self {
        self.status = "failed".into();
        self.message = e.to_string();
        self
    }

    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Medians and quartiles over the successful trials of one `(t, estimator)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub t: usize,
    pub estimator: String,
    pub trials: usize,
    pub successes: usize,
    pub median_opnorm_err: Option<f64>,
    pub q25_opnorm_err: Option<f64>,
    pub q75_opnorm_err: Option<f64>,
    pub median_frob_err: Option<f64>,
    pub median_retained: Option<f64>,
    pub median_misclass_rate: Option<f64>,
}

/// One residual point of the stage-one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub node: usize,
    pub t: usize,
    pub state_norm: f64,
    pub residual: f64,
    pub attacked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rows: Vec<ExperimentRow>,
    pub aggregates: Vec<Aggregate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scatter: Vec<ScatterPoint>,
}

impl ExperimentReport {
    pub fn aggregate(&self, t: usize, estimator: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.t == t && a.estimator == estimator)
    }

    pub fn write_rows_csv<W: Write>(&self, out: W) -> Result<()> {
        write_csv(out, &self.rows)
    }

    pub fn write_aggregates_csv<W: Write>(&self, out: W) -> Result<()> {
        write_csv(out, &self.aggregates)
    }
}

fn write_csv<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `rows.csv` file back.
pub fn read_rows_csv<R: std::io::Read>(input: R) -> Result<Vec<ExperimentRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Median with the midpoint convention for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

/// Linear-interpolation quantile of the sorted sample.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

struct UnitOutput {
    rows: Vec<ExperimentRow>,
    scatter: Vec<ScatterPoint>,
    t: usize,
    trial: usize,
    millis: f64,
}

fn resolve_system(cfg: &ExperimentConfig) -> Result<SystemMatrix> {
    match &cfg.system_matrix {
        Some(m) => Ok(m.clone()),
        None => generate_system(&cfg.system),
    }
}

/// Runs the sweep. Work units run on a pool of `threads` workers (all cores if
/// `None`); the returned rows are sorted by `(t, trial, estimator)`, so the
/// output does not depend on scheduling. When `output_dir` is set, the files
/// listed in the module documentation are written.
pub fn run_experiment(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentReport> {
    cfg.validate()?;
    let sys = resolve_system(cfg)?;
    let units: Vec<(usize, usize)> = if cfg.nested {
        (0..cfg.seeds).map(|trial| (cfg.t_max(), trial)).collect()
    } else {
        cfg.t_grid
            .iter()
            .flat_map(|&t| (0..cfg.seeds).map(move |trial| (t, trial)))
            .collect()
    };

    let journal = match &cfg.output_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("config.json"), cfg.to_json()?)?;
            let path = dir.join("rows.partial.csv");
            let mut f = File::create(&path)?;
            writeln!(f, "{}", ROW_HEADER)?;
            Some((Mutex::new(OpenOptions::new().append(true).open(&path)?), path))
        }
        None => None,
    };

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = threads {
        builder = builder.num_threads(k.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;

    let outputs: Vec<UnitOutput> = pool.install(|| {
        units
            .par_iter()
            .map(|&(t, trial)| {
                let start = Instant::now();
                let (rows, scatter) = run_unit(cfg, &sys, t, trial);
                if let Some((file, _)) = &journal {
                    let mut buf = Vec::new();
                    {
                        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut buf);
                        for r in &rows {
                            w.serialize(r)?;
                        }
                        w.flush()?;
                    }
                    let mut f = file.lock().expect("journal lock poisoned");
                    f.write_all(&buf)?;
                    f.flush()?;
                }
                Ok(UnitOutput {
                    rows,
                    scatter,
                    t,
                    trial,
                    millis: start.elapsed().as_secs_f64() * 1e3,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut rows: Vec<ExperimentRow> = Vec::new();
    let mut scatter = Vec::new();
    let mut timings: Vec<(usize, usize, f64)> = Vec::new();
    for out in outputs {
        rows.extend(out.rows);
        scatter.extend(out.scatter);
        timings.push((out.t, out.trial, out.millis));
    }
    rows.sort_by(|a, b| (a.t, a.trial, &a.estimator).cmp(&(b.t, b.trial, &b.estimator)));
    timings.sort_by_key(|&(t, trial, _)| (t, trial));
    let aggregates = aggregate_rows(&rows);
    let report = ExperimentReport {
        config: cfg.clone(),
        rows,
        aggregates,
        scatter,
    };

    if let Some((_, partial)) = journal {
        let dir = cfg.output_dir.as_ref().expect("journal implies output dir");
        report.write_rows_csv(BufWriter::new(File::create(dir.join("rows.csv"))?))?;
        report.write_aggregates_csv(BufWriter::new(File::create(dir.join("aggregates.csv"))?))?;
        let mut tf = BufWriter::new(File::create(dir.join("timings.csv"))?);
        writeln!(tf, "t,trial,wall_ms")?;
        for (t, trial, ms) in &timings {
            writeln!(tf, "{t},{trial},{ms:.3}")?;
        }
        tf.flush()?;
        fs::remove_file(partial)?;
    }
    Ok(report)
}

const ROW_HEADER: &str = "preset,t,trial,seed,estimator,status,opnorm_err,frob_err,row_errs,retained_median,retained_min,tp,fp,fn,tn,misclass_rate,certified,message";

/// Computes the aggregates of a set of rows, ordered by `(t, estimator)`.
pub fn aggregate_rows(rows: &[ExperimentRow]) -> Vec<Aggregate> {
    let mut keys: Vec<(usize, String)> = rows.iter().map(|r| (r.t, r.estimator.clone())).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(t, est)| {
            let cell: Vec<&ExperimentRow> = rows.iter().filter(|r| r.t == t && r.estimator == est).collect();
            let ok: Vec<&&ExperimentRow> = cell.iter().filter(|r| r.ok()).collect();
            let col = |f: &dyn Fn(&ExperimentRow) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };
            let op = col(&|r| r.opnorm_err);
            Aggregate {
                t,
                estimator: est,
                trials: cell.len(),
                successes: ok.len(),
                median_opnorm_err: median(&op),
                q25_opnorm_err: quantile(&op, 0.25),
                q75_opnorm_err: quantile(&op, 0.75),
                median_frob_err: median(&col(&|r| r.frob_err)),
                median_retained: median(&col(&|r| r.retained_median)),
                median_misclass_rate: median(&col(&|r| r.misclass_rate)),
            }
        })
        .collect()
}

/// Runs every estimator of one work unit. Failures become rows with `status = failed`.
fn run_unit(cfg: &ExperimentConfig, sys: &SystemMatrix, t_len: usize, trial: usize) -> (Vec<ExperimentRow>, Vec<ScatterPoint>) {
    let seed = trial_seed(cfg.base_seed, t_len as u64, trial as u64);
    let grid: Vec<usize> = if cfg.nested { cfg.t_grid.clone() } else { vec![t_len] };
    let mut arms = vec![(cfg.attack, "")];
    if cfg.compare_no_attack {
        arms.push((AttackStrategy::none(), "_no_attack"));
    }
    let mut rows = Vec::new();
    let mut scatter = Vec::new();
    for (attack, suffix) in arms {
        let labels = |est: EstimatorName| format!("{}{}", est.label(), suffix);
        let rec = match simulate(sys, t_len, &cfg.noise, &attack, None, seed) {
            Ok(rec) => rec,
            Err(e) => {
                for &t in &grid {
                    for &est in &cfg.estimators {
                        rows.push(ExperimentRow::blank(cfg, t, trial, seed, labels(est)).fail(&e));
                    }
                }
                continue;
            }
        };
        for &est in &cfg.estimators {
            let full_two_stage = if est == EstimatorName::TwoStage && cfg.nested {
                Some(pipeline::two_stage(&rec.states, &cfg.filter, None))
            } else {
                None
            };
            for &t in &grid {
                let blank = ExperimentRow::blank(cfg, t, trial, seed, labels(est));
                let states = &rec.states[..=t];
                let schedule = AttackSchedule {
                    xi: rec.schedule.xi[..t].to_vec(),
                };
                let row = match est {
                    EstimatorName::TwoStage => {
                        let result = match &full_two_stage {
                            Some(Ok(full)) => prefix_two_stage(cfg, &rec.states, &full.filter, t, full.stage1_report.certified),
                            Some(Err(e)) => Err(clone_error(e)),
                            None => pipeline::two_stage(states, &cfg.filter, None).map(|r| (r.a_hat, r.filter, r.stage1_report.certified)),
                        };
                        result.and_then(|(a_hat, filter, certified)| {
                            if cfg.scatter && trial == 0 && t == cfg.t_grid[0] && suffix.is_empty() {
                                scatter = scatter_points(&filter, &schedule);
                            }
                            two_stage_row(blank.clone(), &a_hat, &sys.a, &filter, &schedule, certified)
                        })
                    }
                    one => one_stage_row(blank.clone(), one, states, &sys.a, &cfg.filter.lad_cfg),
                };
                rows.push(row.unwrap_or_else(|e| blank.fail(&e)));
            }
        }
    }
    (rows, scatter)
}

fn clone_error(e: &Error) -> Error {
    match e {
        Error::InsufficientRetained { node, retained, required } => Error::InsufficientRetained {
            node: *node,
            retained: *retained,
            required: *required,
        },
        Error::EmptyMiddleSet => Error::EmptyMiddleSet,
        other => Error::InvalidParameter(other.to_string()),
    }
}

fn prefix_two_stage(
    cfg: &ExperimentConfig,
    states: &[Vector],
    filter: &FilterResult,
    t: usize,
    certified: bool,
) -> Result<(Matrix, FilterResult, bool)> {
    let n = states[0].dim();
    let cut = filter.truncated(t);
    let a_hat = pipeline::stage_two(states, &cut, cfg.filter.min_retained_for(n))?;
    Ok((a_hat, cut, certified))
}

fn one_stage_row(
    mut row: ExperimentRow,
    est: EstimatorName,
    states: &[Vector],
    truth: &Matrix,
    lad: &LadConfig,
) -> Result<ExperimentRow> {
    let which = match est {
        EstimatorName::Ls => OneStage::LeastSquares,
        EstimatorName::L2 => OneStage::L2,
        EstimatorName::L1 => OneStage::L1,
        EstimatorName::TwoStage => unreachable!("two-stage rows are built separately"),
    };
    let fit = estimators::estimate(states, which, lad, None)?;
    fill_errors(&mut row, &fit.a_hat, truth)?;
    if which != OneStage::LeastSquares {
        row.certified = Some(fit.solver_report.certified);
    }
    Ok(row)
}

fn fill_errors(row: &mut ExperimentRow, a_hat: &Matrix, truth: &Matrix) -> Result<()> {
    let err = estimation_error(a_hat, truth)?;
    row.opnorm_err = Some(err.opnorm_err);
    row.frob_err = Some(a_hat.sub(truth)?.frobenius_norm());
    row.row_errs = err.row_errs.iter().map(f64::to_string).collect::<Vec<_>>().join(";");
    Ok(())
}

fn two_stage_row(
    mut row: ExperimentRow,
    a_hat: &Matrix,
    truth: &Matrix,
    filter: &FilterResult,
    schedule: &AttackSchedule,
    certified: bool,
) -> Result<ExperimentRow> {
    fill_errors(&mut row, a_hat, truth)?;
    let counts: Vec<f64> = filter.retained.iter().map(|s| s.len() as f64).collect();
    row.retained_median = median(&counts);
    row.retained_min = filter.retained.iter().map(Vec::len).min();
    let all = filtering::detection_metrics(filter, schedule)?;
    let (tp, fp, fn_, tn) = all.totals();
    row.tp = Some(tp);
    row.fp = Some(fp);
    row.fn_ = Some(fn_);
    row.tn = Some(tn);
    let (scoped, size) = match &filter.middle_set {
        Some(c) => (filtering::detection_metrics_in_middle(filter, schedule)?, c.len()),
        None => (all, filter.horizon()),
    };
    if size > 0 {
        let rates: Vec<f64> = (0..filter.nodes())
            .map(|i| (scoped.fp[i] + scoped.fn_[i]) as f64 / size as f64)
            .collect();
        row.misclass_rate = median(&rates);
    }
    row.certified = Some(certified);
    Ok(row)
}

fn scatter_points(filter: &FilterResult, schedule: &AttackSchedule) -> Vec<ScatterPoint> {
    let mut pts = Vec::new();
    for (i, res) in filter.residuals.iter().enumerate() {
        for (t, &r) in res.iter().enumerate() {
            pts.push(ScatterPoint {
                node: i,
                t,
                state_norm: filter.norm_used[t],
                residual: r,
                attacked: schedule.attacked(t, i),
            });
        }
    }
    pts
}

/// Least-squares failure demonstration on `Ā = 0`: `‖A_T‖_F` at decade
/// checkpoints up to `t_max`, with and without the misleading attack on the
/// same noise stream.
pub fn failure_demo(n: usize, c_bar: f64, t_max: usize, seeds: usize, threads: Option<usize>) -> Result<ExperimentReport> {
    if n == 0 || n > 3 {
        return Err(Error::InvalidParameter("the failure demo uses 1 <= n <= 3".into()));
    }
    let mut cfg = ExperimentConfig::preset(Preset::OneStageFailureDemo);
    cfg.system_matrix = Some(zero_system(n));
    cfg.attack.kind = AttackKind::MisleadingAlternating { c_bar };
    cfg.seeds = seeds;
    cfg.t_grid = decade_grid(t_max);
    cfg.filter.min_retained = Some(n);
    run_experiment(&cfg, threads)
}

/// `10, 100, …` up to `t_max`, with `t_max` appended when it is not a power of ten.
pub fn decade_grid(t_max: usize) -> Vec<usize> {
    let mut grid = Vec::new();
    let mut t = 10;
    while t <= t_max {
        grid.push(t);
        t *= 10;
    }
    if grid.last() != Some(&t_max) && t_max > 0 {
        grid.push(t_max);
    }
    grid
}

/// Headline numbers of a failure-demo report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureSummary {
    pub checkpoints: Vec<usize>,
    pub attacked_median_frob: Vec<f64>,
    pub clean_median_frob: Vec<f64>,
    /// Attacked over clean median at the last checkpoint.
    pub ratio_at_max: f64,
    pub clean_decreasing: bool,
}

pub fn failure_summary(report: &ExperimentReport) -> Result<FailureSummary> {
    let checkpoints = report.config.t_grid.clone();
    let series = |label: &str| -> Result<Vec<f64>> {
        checkpoints
            .iter()
            .map(|&t| {
                report
                    .aggregate(t, label)
                    .and_then(|a| a.median_frob_err)
                    .ok_or_else(|| Error::InvalidParameter(format!("no successful '{label}' trials at T = {t}")))
            })
            .collect()
    };
    let attacked = series("ls")?;
    let clean = series("ls_no_attack")?;
    let last = checkpoints.len() - 1;
    Ok(FailureSummary {
        ratio_at_max: attacked[last] / clean[last],
        clean_decreasing: clean.windows(2).all(|w| w[1] < w[0]),
        checkpoints,
        attacked_median_frob: attacked,
        clean_median_frob: clean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    ErrorVsT,
    ResidualScatter,
}

/// Writes plot data (and for `ErrorVsT` a gnuplot script) into `dir`; returns the written paths.
pub fn emit_plot_data(report: &ExperimentReport, kind: PlotKind, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    match kind {
        PlotKind::ErrorVsT => {
            let series: Vec<&Aggregate> = report.aggregates.iter().filter(|a| a.median_opnorm_err.is_some()).collect();
            if series.is_empty() {
                return Err(Error::InvalidParameter("report has no successful trials to plot".into()));
            }
            let csv_path = dir.join("error_vs_t.csv");
            let mut w = csv::Writer::from_path(&csv_path)?;
            w.write_record(["t", "estimator", "median_err", "q25", "q75"])?;
            for a in &series {
                w.write_record([
                    a.t.to_string(),
                    a.estimator.clone(),
                    fmt_opt(a.median_opnorm_err),
                    fmt_opt(a.q25_opnorm_err),
                    fmt_opt(a.q75_opnorm_err),
                ])?;
            }
            w.flush()?;
            let mut names: Vec<&str> = series.iter().map(|a| a.estimator.as_str()).collect();
            names.dedup();
            names.sort_unstable();
            names.dedup();
            let script_path = dir.join("error_vs_t.gp");
            fs::write(&script_path, gnuplot_script(&names))?;
            Ok(vec![csv_path, script_path])
        }
        PlotKind::ResidualScatter => {
            if report.scatter.is_empty() {
                return Err(Error::InvalidParameter(
                    "report holds no residual scatter data (run the filter_visualization preset)".into(),
                ));
            }
            let path = dir.join("residual_scatter.csv");
            write_csv(BufWriter::new(File::create(&path)?), &report.scatter)?;
            Ok(vec![path])
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn gnuplot_script(names: &[&str]) -> String {
    format!(
        "set terminal pngcairo size 900,600\n\
         set output 'error_vs_t.png'\n\
         set datafile separator ','\n\
         set logscale xy\n\
         set xlabel 'trajectory length T'\n\
         set ylabel 'median operator-norm error'\n\
         set key outside right\n\
         series = \"{}\"\n\
         plot for [est in series] 'error_vs_t.csv' every ::1 \\\n    \
         using 1:(strcol(2) eq est ? $3 : 1/0):4:5 with yerrorlines title est\n",
        names.join(" ")
    )
}

/// Reads an experiment report written as JSON.
pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
