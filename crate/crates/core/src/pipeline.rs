//! The two-stage estimator: a row-wise LAD pre-fit, residual filtering, then
//! row-wise least squares on the retained indices. Also hosts the error
//! metrics and the closed-form error-bound calculators used as diagnostics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{self, LadConfig, RegressionData, SolverReport};
use crate::filtering::{self, DetectionMetrics, FilterResult, RankingParams, ThresholdParams};
use crate::numerics::{self, norm2, Matrix, Vector};
use crate::simulate::{AttackSchedule, TrajectoryRecord};

/// Which filtering rule sits between the two stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum FilterMode {
    Threshold(ThresholdParams),
    Ranking(RankingParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoStageConfig {
    pub filter_mode: FilterMode,
    #[serde(default)]
    pub lad_cfg: LadConfig,
    /// Minimum retained indices per node; `None` means `n + 5`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_retained: Option<usize>,
}

impl TwoStageConfig {
    pub fn new(filter_mode: FilterMode) -> Self {
        TwoStageConfig {
            filter_mode,
            lad_cfg: LadConfig::default(),
            min_retained: None,
        }
    }

    pub fn min_retained_for(&self, n: usize) -> usize {
        self.min_retained.unwrap_or(n + 5)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.min_retained_for(n) < n {
            return Err(Error::InvalidParameter(format!(
                "min_retained {} is below the dimension {n}",
                self.min_retained_for(n)
            )));
        }
        match &self.filter_mode {
            FilterMode::Threshold(p) => p.validate(),
            FilterMode::Ranking(p) => p.validate(),
        }
    }
}

/// `‖Â − Ā‖₂` and the row errors `‖â_i − ā_i‖₂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub opnorm_err: f64,
    pub row_errs: Vec<f64>,
}

pub fn estimation_error(a_hat: &Matrix, a_true: &Matrix) -> Result<ErrorMetrics> {
    if a_hat.shape() != a_true.shape() {
        return Err(Error::DimensionMismatch {
            context: "estimate versus truth",
            expected: a_true.rows(),
            found: a_hat.rows(),
        });
    }
    let diff = a_hat.sub(a_true)?;
    Ok(ErrorMetrics {
        opnorm_err: numerics::operator_norm(&diff)?,
        row_errs: (0..diff.rows()).map(|i| norm2(diff.row(i))).collect(),
    })
}

/// Ground truth available when the data were simulated.
#[derive(Debug, Clone, Copy)]
pub struct Truth<'a> {
    pub a: &'a Matrix,
    pub schedule: Option<&'a AttackSchedule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub a_ring: Matrix,
    pub a_hat: Matrix,
    pub stage1_report: SolverReport,
    pub filter: FilterResult,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub detection: Option<DetectionMetrics>,
    /// Detection counts restricted to the middle-norm set (ranking rule only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub detection_middle: Option<DetectionMetrics>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stage1_error: Option<ErrorMetrics>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stage2_error: Option<ErrorMetrics>,
}

impl PipelineReport {
    pub fn retained_counts(&self) -> Vec<usize> {
        self.filter.retained_counts()
    }
}

/// Stage I only: row-wise LAD on all transitions.
pub fn stage_one(states: &[Vector], lad: &LadConfig) -> Result<(Matrix, SolverReport)> {
    let (a_ring, reports) = estimators::fit_rows(states, |d| estimators::lad_rowwise(d, lad))?;
    let agg = SolverReport {
        iterations: reports.iter().map(|r| r.iterations).sum(),
        final_objective: reports.iter().map(|r| r.final_objective).sum(),
        certificate_gap: reports.iter().map(|r| r.certificate_gap).fold(0.0, f64::max),
        certified: reports.iter().all(|r| r.certified),
        final_smoothing: reports.iter().map(|r| r.final_smoothing).fold(0.0, f64::max),
        objective_trace: Vec::new(),
    };
    Ok((a_ring, agg))
}

/// Applies the configured filter to a stage-one estimate.
pub fn apply_filter(states: &[Vector], a_ring: &Matrix, mode: &FilterMode) -> Result<FilterResult> {
    match mode {
        FilterMode::Threshold(p) => filtering::filter_threshold(states, a_ring, p),
        FilterMode::Ranking(p) => filtering::filter_ranking(states, a_ring, p),
    }
}

/// Stage II: least squares per node on its retained indices.
pub fn stage_two(states: &[Vector], filter: &FilterResult, min_retained: usize) -> Result<Matrix> {
    stage_two_sets(states, &filter.retained, min_retained)
}

/// Least squares per node on arbitrary index sets.
pub fn stage_two_sets(states: &[Vector], sets: &[Vec<usize>], min_retained: usize) -> Result<Matrix> {
    for (node, set) in sets.iter().enumerate() {
        if set.len() < min_retained {
            return Err(Error::InsufficientRetained {
                node,
                retained: set.len(),
                required: min_retained,
            });
        }
    }
    let rows: Vec<Vector> = sets
        .par_iter()
        .enumerate()
        .map(|(i, set)| {
            let data = RegressionData::from_states(states, i, set)?;
            Ok(estimators::ls_rowwise(&data)?.coef)
        })
        .collect::<Result<_>>()?;
    estimators::assemble_matrix(&rows)
}

/// Retained indices with `t < t_cut`, per node.
pub fn retained_prefix(filter: &FilterResult, t_cut: usize) -> Vec<Vec<usize>> {
    filter
        .retained
        .iter()
        .map(|set| set.iter().copied().take_while(|&t| t < t_cut).collect())
        .collect()
}

/// Runs both stages on a state sequence; metrics are filled in when `truth` is given.
pub fn two_stage(states: &[Vector], cfg: &TwoStageConfig, truth: Option<Truth<'_>>) -> Result<PipelineReport> {
    let n = states.first().map_or(0, Vector::dim);
    cfg.validate(n)?;
    let t_len = states.len().saturating_sub(1);
    let min_retained = cfg.min_retained_for(n);
    if t_len < min_retained {
        return Err(Error::InvalidParameter(format!(
            "trajectory has {t_len} transitions, fewer than min_retained = {min_retained}"
        )));
    }
    let (a_ring, stage1_report) = stage_one(states, &cfg.lad_cfg)?;
    let filter = apply_filter(states, &a_ring, &cfg.filter_mode)?;
    let a_hat = stage_two(states, &filter, min_retained)?;

    let mut report = PipelineReport {
        a_ring,
        a_hat,
        stage1_report,
        filter,
        detection: None,
        detection_middle: None,
        stage1_error: None,
        stage2_error: None,
    };
    if let Some(truth) = truth {
        report.stage1_error = Some(estimation_error(&report.a_ring, truth.a)?);
        report.stage2_error = Some(estimation_error(&report.a_hat, truth.a)?);
        if let Some(schedule) = truth.schedule {
            report.detection = Some(filtering::detection_metrics(&report.filter, schedule)?);
            if report.filter.middle_set.is_some() {
                report.detection_middle = Some(filtering::detection_metrics_in_middle(&report.filter, schedule)?);
            }
        }
    }
    Ok(report)
}

/// [`two_stage`] on a simulated record, using its system and schedule as ground truth.
pub fn two_stage_record(rec: &TrajectoryRecord, cfg: &TwoStageConfig) -> Result<PipelineReport> {
    two_stage(
        &rec.states,
        cfg,
        Some(Truth {
            a: &rec.system.a,
            schedule: Some(&rec.schedule),
        }),
    )
}

/// Inputs of the error-bound formulas. `kappa` and `gamma_const` are unknown
/// absolute constants supplied by the user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub sigma_w: f64,
    pub sigma_v: f64,
    pub lambda: f64,
    pub rho: f64,
    pub p: f64,
    pub delta: f64,
    #[serde(default = "one")]
    pub kappa: f64,
    #[serde(default = "one")]
    pub gamma_const: f64,
}

fn one() -> f64 {
    1.0
}

impl BoundParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rho > 0.0
            && self.rho < 1.0
            && (0.0..0.5).contains(&self.p)
            && self.delta > 0.0
            && self.delta <= 1.0
            && self.lambda > 0.0
            && self.sigma_w >= 0.0
            && self.sigma_v >= 0.0
            && self.kappa.is_finite()
            && self.gamma_const.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid bound parameters {self:?}")))
        }
    }

    /// `τ = κ(σ_w+σ_v)⁴ / (λ⁵(1−2p))`.
    pub fn tau(&self) -> f64 {
        self.kappa * (self.sigma_w + self.sigma_v).powi(4) / (self.lambda.powi(5) * (1.0 - 2.0 * self.p))
    }
}

/// Stage-one row error bound `τ·σ_w`.
pub fn stage1_bound(bp: &BoundParams) -> f64 {
    bp.tau() * bp.sigma_w
}

/// Sums of `‖x_t‖₂²` and `‖x_t‖₂` over the retained attacked indices.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GammaNorms {
    pub sum_sq: f64,
    pub sum: f64,
}

impl GammaNorms {
    pub fn from_indices(states: &[Vector], gamma: &[usize]) -> Self {
        gamma.iter().fold(GammaNorms::default(), |acc, &t| {
            let v = states[t].norm();
            GammaNorms {
                sum_sq: acc.sum_sq + v * v,
                sum: acc.sum + v,
            }
        })
    }
}

/// The three terms of the stage-two row error bound, each with constant 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage2Terms {
    pub stat_term: f64,
    pub misclass_term: f64,
    pub tail_term: f64,
}

impl Stage2Terms {
    pub fn total(&self) -> f64 {
        self.stat_term + self.misclass_term + self.tail_term
    }
}

pub fn stage2_bound_terms(
    bp: &BoundParams,
    alpha1: f64,
    alpha2: f64,
    gamma: GammaNorms,
    t_len: usize,
    n: usize,
) -> Result<Stage2Terms> {
    if t_len == 0 || n == 0 {
        return Err(Error::InvalidParameter("bound terms need T >= 1 and n >= 1".into()));
    }
    let s = bp.sigma_w + bp.sigma_v;
    let t = t_len as f64;
    let nf = n as f64;
    let log_arg = nf * s / (bp.lambda * (1.0 - bp.rho) * bp.delta);
    let stat_term = (nf / t * log_arg.ln().max(0.0)).sqrt() * s / bp.lambda;
    let misclass_term =
        bp.sigma_w * ((1.0 + alpha1) * bp.tau() * gamma.sum_sq + alpha2 * gamma.sum) / (bp.lambda.powi(2) * t);
    let tail_term = if alpha2.is_infinite() {
        0.0
    } else {
        bp.sigma_w * (alpha2 + 1.0 / alpha2) * (-alpha2 * alpha2 / 2.0).exp() * nf.sqrt() * s
            / (bp.lambda.powi(2) * (1.0 - bp.rho))
            * (nf / bp.delta).ln()
    };
    Ok(Stage2Terms {
        stat_term,
        misclass_term,
        tail_term,
    })
}
