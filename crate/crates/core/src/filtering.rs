//! Residual-based classification of time indices into retained (suspected
//! clean) and discarded (suspected attacked) sets, one set per node.
//!
//! Two rules are provided. The threshold rule keeps `t` for node `i` when
//! `|x_{t+1}^{(i)} − å_iᵀx_t| ≤ β₁‖x_t‖₂ + β₂`. The ranking rule first
//! restricts attention to a middle band of state norms and then keeps the
//! indices whose residual-to-norm ratio is small.

use std::collections::BTreeSet;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};
use crate::simulate::AttackSchedule;

/// Parameters of the threshold rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdParams {
    pub beta1: f64,
    pub beta2: f64,
}

impl ThresholdParams {
    pub fn new(beta1: f64, beta2: f64) -> Result<Self> {
        let p = ThresholdParams { beta1, beta2 };
        p.validate()?;
        Ok(p)
    }

    /// `β₁ = α₁·τ·σ_w` and `β₂ = α₂·σ_w`.
    pub fn from_alphas(alpha1: f64, tau: f64, alpha2: f64, sigma_w: f64) -> Result<Self> {
        if !(alpha1 >= 1.0) || !(alpha2 > 0.0) || !(tau >= 0.0) || !(sigma_w >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need alpha1 >= 1, alpha2 > 0, tau >= 0, sigma_w >= 0 (got {alpha1}, {alpha2}, {tau}, {sigma_w})"
            )));
        }
        Self::new(alpha1 * tau * sigma_w, alpha2 * sigma_w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta1.is_finite() && self.beta1 >= 0.0 && self.beta2.is_finite() && self.beta2 >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "threshold parameters must be finite and non-negative (got {}, {})",
                self.beta1, self.beta2
            )));
        }
        Ok(())
    }
}

/// How the middle-norm set is chosen in the ranking rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RankingMode {
    /// Central `q1` fraction of the norm order statistics; keep the `⌊q2·|C|⌋` smallest ratios.
    Quantile,
    /// `C = {t : norm_lo ≤ ‖x_t‖₂ ≤ norm_hi}`; keep ratios at most `ratio_max`.
    FixedCutoff { norm_lo: f64, norm_hi: f64, ratio_max: f64 },
}

/// Parameters of the ranking rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingParams {
    pub q1: f64,
    pub q2: f64,
    pub mode: RankingMode,
}

impl RankingParams {
    pub fn quantile(q1: f64, q2: f64) -> Self {
        RankingParams {
            q1,
            q2,
            mode: RankingMode::Quantile,
        }
    }

    pub fn fixed_cutoff(norm_lo: f64, norm_hi: f64, ratio_max: f64) -> Self {
        RankingParams {
            q1: 1.0,
            q2: 1.0,
            mode: RankingMode::FixedCutoff {
                norm_lo,
                norm_hi,
                ratio_max,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |q: f64| q > 0.0 && q <= 1.0;
        if !unit(self.q1) || !unit(self.q2) {
            return Err(Error::InvalidParameter(format!(
                "ranking fractions must lie in (0, 1] (got q1={}, q2={})",
                self.q1, self.q2
            )));
        }
        if let RankingMode::FixedCutoff {
            norm_lo,
            norm_hi,
            ratio_max,
        } = self.mode
        {
            if !(norm_lo >= 0.0 && norm_hi >= norm_lo && norm_hi.is_finite() && ratio_max >= 0.0 && ratio_max.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "invalid cutoffs lo={norm_lo}, hi={norm_hi}, ratio={ratio_max}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-node retained sets with the residuals and norms they were computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterResult {
    /// `retained[i]` lists the kept time indices for node `i`, ascending.
    pub retained: Vec<Vec<usize>>,
    /// `residuals[i][t] = |x_{t+1}^{(i)} − å_iᵀx_t|`.
    pub residuals: Vec<Vec<f64>>,
    /// `‖x_t‖₂` for `t = 0..T-1`.
    pub norm_used: Vec<f64>,
    /// Middle-norm set of the ranking rule; absent for the threshold rule.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub middle_set: Option<Vec<usize>>,
}

impl FilterResult {
    pub fn nodes(&self) -> usize {
        self.retained.len()
    }

    pub fn horizon(&self) -> usize {
        self.norm_used.len()
    }

    pub fn retained_counts(&self) -> Vec<usize> {
        self.retained.iter().map(Vec::len).collect()
    }

    /// The result restricted to time indices `t < t_cut`.
    pub fn truncated(&self, t_cut: usize) -> FilterResult {
        let t_cut = t_cut.min(self.horizon());
        let below = |set: &Vec<usize>| set.iter().copied().take_while(|&t| t < t_cut).collect::<Vec<_>>();
        FilterResult {
            retained: self.retained.iter().map(below).collect(),
            residuals: self.residuals.iter().map(|r| r[..t_cut].to_vec()).collect(),
            norm_used: self.norm_used[..t_cut].to_vec(),
            middle_set: self.middle_set.as_ref().map(below),
        }
    }

    /// `T × n` 0/1 bitmap of retained indices with header `t,node0,…`.
    pub fn write_bitmap_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.nodes();
        let t_len = self.horizon();
        let mut grid = vec![vec![0u8; n]; t_len];
        for (i, set) in self.retained.iter().enumerate() {
            for &t in set {
                grid[t][i] = 1;
            }
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("node{i}")));
        w.write_record(&header)?;
        for (t, row) in grid.iter().enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(row.iter().map(u8::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_inputs(states: &[Vector], a_ring: &Matrix) -> Result<usize> {
    if states.len() < 2 {
        return Err(Error::InvalidParameter("filtering needs at least one transition".into()));
    }
    let n = states[0].dim();
    if a_ring.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            context: "stage-one estimate must be n×n",
            expected: n,
            found: a_ring.rows(),
        });
    }
    for s in states {
        if s.dim() != n {
            return Err(Error::DimensionMismatch {
                context: "state dimension",
                expected: n,
                found: s.dim(),
            });
        }
    }
    Ok(n)
}

/// Residual magnitudes `|x_{t+1}^{(i)} − å_iᵀx_t|` as `[n][T]`, and the norms `‖x_t‖₂`.
pub fn residual_table(states: &[Vector], a_ring: &Matrix) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let n = check_inputs(states, a_ring)?;
    let t_len = states.len() - 1;
    let norms: Vec<f64> = states[..t_len].iter().map(Vector::norm).collect();
    let residuals = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = a_ring.row(i);
            (0..t_len)
                .map(|t| (states[t + 1][i] - crate::numerics::dot(row, &states[t])).abs())
                .collect()
        })
        .collect();
    Ok((residuals, norms))
}

/// Threshold rule: keep `t` for node `i` iff `residual ≤ β₁‖x_t‖₂ + β₂` (equality kept).
pub fn filter_threshold(states: &[Vector], a_ring: &Matrix, params: &ThresholdParams) -> Result<FilterResult> {
    params.validate()?;
    let (residuals, norms) = residual_table(states, a_ring)?;
    let retained = residuals
        .iter()
        .map(|res| {
            res.iter()
                .zip(&norms)
                .enumerate()
                .filter(|(_, (r, x))| **r <= params.beta1 * **x + params.beta2)
                .map(|(t, _)| t)
                .collect()
        })
        .collect();
    Ok(FilterResult {
        retained,
        residuals,
        norm_used: norms,
        middle_set: None,
    })
}

/// Central window `[lo, hi]` of 0-based order statistics holding `⌊q1·T⌋` entries.
pub fn middle_window(t_len: usize, q1: f64) -> Option<(usize, usize)> {
    let count = (q1 * t_len as f64).floor() as usize;
    if count == 0 {
        return None;
    }
    let lo = ((1.0 - q1) * t_len as f64 / 2.0).ceil() as usize;
    let lo = lo.min(t_len - count);
    Some((lo, lo + count - 1))
}

/// Ranking rule over the middle-norm set (see [`RankingMode`]).
pub fn filter_ranking(states: &[Vector], a_ring: &Matrix, params: &RankingParams) -> Result<FilterResult> {
    params.validate()?;
    let (residuals, norms) = residual_table(states, a_ring)?;
    let t_len = norms.len();
    let ratio = |i: usize, t: usize| residuals[i][t] / norms[t];

    let (middle, retained): (Vec<usize>, Vec<Vec<usize>>) = match params.mode {
        RankingMode::Quantile => {
            let mut order: Vec<usize> = (0..t_len).collect();
            order.sort_by(|&a, &b| norms[a].total_cmp(&norms[b]).then(a.cmp(&b)));
            let (lo, hi) = middle_window(t_len, params.q1).ok_or(Error::EmptyMiddleSet)?;
            let mut middle = order[lo..=hi].to_vec();
            middle.sort_unstable();
            let keep = (params.q2 * middle.len() as f64).floor() as usize;
            let retained = (0..residuals.len())
                .map(|i| {
                    let mut by_ratio = middle.clone();
                    by_ratio.sort_by(|&a, &b| ratio(i, a).total_cmp(&ratio(i, b)).then(a.cmp(&b)));
                    let mut kept = by_ratio[..keep].to_vec();
                    kept.sort_unstable();
                    kept
                })
                .collect();
            (middle, retained)
        }
        RankingMode::FixedCutoff {
            norm_lo,
            norm_hi,
            ratio_max,
        } => {
            let middle: Vec<usize> = (0..t_len).filter(|&t| norm_lo <= norms[t] && norms[t] <= norm_hi).collect();
            let retained = (0..residuals.len())
                .map(|i| middle.iter().copied().filter(|&t| ratio(i, t) <= ratio_max).collect())
                .collect();
            (middle, retained)
        }
    };
    if middle.is_empty() {
        return Err(Error::EmptyMiddleSet);
    }
    Ok(FilterResult {
        retained,
        residuals,
        norm_used: norms,
        middle_set: Some(middle),
    })
}

/// Per-node confusion counts of a filter against the true attack schedule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub tp: Vec<usize>,
    pub fp: Vec<usize>,
    #[serde(rename = "fn")]
    pub fn_: Vec<usize>,
    pub tn: Vec<usize>,
    /// Attacked indices that were retained (false negatives), per node.
    pub gamma: Vec<Vec<usize>>,
}

impl DetectionMetrics {
    /// `(FP + FN) / total` for node `i`.
    pub fn misclassification_rate(&self, i: usize) -> f64 {
        let total = self.tp[i] + self.fp[i] + self.fn_[i] + self.tn[i];
        if total == 0 {
            0.0
        } else {
            (self.fp[i] + self.fn_[i]) as f64 / total as f64
        }
    }

    pub fn totals(&self) -> (usize, usize, usize, usize) {
        let s = |v: &Vec<usize>| v.iter().sum::<usize>();
        (s(&self.tp), s(&self.fp), s(&self.fn_), s(&self.tn))
    }
}

/// Confusion counts over all `t` (positive = discarded).
pub fn detection_metrics(result: &FilterResult, truth: &AttackSchedule) -> Result<DetectionMetrics> {
    let all: Vec<usize> = (0..result.horizon()).collect();
    metrics_over(result, truth, &all)
}

/// Confusion counts restricted to the middle-norm set of a ranking result.
pub fn detection_metrics_in_middle(result: &FilterResult, truth: &AttackSchedule) -> Result<DetectionMetrics> {
    let middle = result
        .middle_set
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("filter result has no middle-norm set".into()))?;
    metrics_over(result, truth, middle)
}

fn metrics_over(result: &FilterResult, truth: &AttackSchedule, domain: &[usize]) -> Result<DetectionMetrics> {
    let n = result.nodes();
    if truth.len() != result.horizon() || (!truth.is_empty() && truth.nodes() != n) {
        return Err(Error::DimensionMismatch {
            context: "attack schedule versus filter result",
            expected: result.horizon(),
            found: truth.len(),
        });
    }
    let mut m = DetectionMetrics {
        tp: vec![0; n],
        fp: vec![0; n],
        fn_: vec![0; n],
        tn: vec![0; n],
        gamma: vec![Vec::new(); n],
    };
    for i in 0..n {
        let mut kept = vec![false; result.horizon()];
        result.retained[i].iter().for_each(|&t| kept[t] = true);
        for &t in domain {
            match (kept[t], truth.attacked(t, i)) {
                (false, true) => m.tp[i] += 1,
                (false, false) => m.fp[i] += 1,
                (true, true) => {
                    m.fn_[i] += 1;
                    m.gamma[i].push(t);
                }
                (true, false) => m.tn[i] += 1,
            }
        }
    }
    Ok(m)
}

/// Retained sets as ordered sets, convenient for set algebra in callers.
pub fn retained_sets(result: &FilterResult) -> Vec<BTreeSet<usize>> {
    result.retained.iter().map(|v| v.iter().copied().collect()).collect()
}
