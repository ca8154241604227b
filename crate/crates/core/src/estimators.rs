//! One-stage estimators: row-wise least squares, row-wise least absolute
//! deviations (LAD) and the full-matrix un-squared ℓ2 loss.
//!
//! LAD and ℓ2 are solved by iteratively reweighted least squares on a
//! smoothed objective whose smoothing level halves every sweep. Every LAD
//! solution is then checked by [`lad_certificate`], which searches for a
//! subgradient of the objective equal to zero and does not depend on how the
//! point was computed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, norm2, Matrix, Qr, Vector};

/// Certificate gaps at or below this value certify LAD optimality.
pub const CERTIFICATE_TOL: f64 = 1e-6;

/// Regression problem for one node: rows of `x` are `x_tᵀ`, `y` holds `x_{t+1}^{(i)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub x: Matrix,
    pub y: Vector,
    pub node: usize,
    pub times: Vec<usize>,
}

impl RegressionData {
    pub fn new(x: Matrix, y: Vector) -> Result<Self> {
        if x.rows() != y.dim() {
            return Err(Error::DimensionMismatch {
                context: "regression targets",
                expected: x.rows(),
                found: y.dim(),
            });
        }
        let times = (0..x.rows()).collect();
        Ok(RegressionData { x, y, node: 0, times })
    }

    /// Regression of node `node` on the transitions `t ∈ times` of a state sequence.
    pub fn from_states(states: &[Vector], node: usize, times: &[usize]) -> Result<Self> {
        let n = states.first().map_or(0, Vector::dim);
        if node >= n {
            return Err(Error::DimensionMismatch {
                context: "node index",
                expected: n,
                found: node,
            });
        }
        let mut data = Vec::with_capacity(times.len() * n);
        let mut y = Vec::with_capacity(times.len());
        for &t in times {
            if t + 1 >= states.len() {
                return Err(Error::DimensionMismatch {
                    context: "time index beyond trajectory",
                    expected: states.len() - 1,
                    found: t,
                });
            }
            data.extend_from_slice(&states[t]);
            y.push(states[t + 1][node]);
        }
        Ok(RegressionData {
            x: Matrix::new(times.len(), n, data)?,
            y: Vector(y),
            node,
            times: times.to_vec(),
        })
    }

    /// All transitions `t = 0..T-1`.
    pub fn full(states: &[Vector], node: usize) -> Result<Self> {
        let times: Vec<usize> = (0..states.len().saturating_sub(1)).collect();
        Self::from_states(states, node, &times)
    }

    pub fn samples(&self) -> usize {
        self.x.rows()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn residuals(&self, a: &[f64]) -> Result<Vec<f64>> {
        let pred = self.x.matvec(a)?;
        Ok(self.y.iter().zip(pred.iter()).map(|(y, p)| y - p).collect())
    }

    fn check_shape(&self) -> Result<()> {
        if self.samples() < self.dim() {
            return Err(Error::DimensionMismatch {
                context: "regression needs at least as many samples as unknowns",
                expected: self.dim(),
                found: self.samples(),
            });
        }
        Ok(())
    }
}

/// Settings for the LAD solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LadConfig {
    /// Maximum IRLS sweeps.
    pub max_iters: usize,
    /// Relative change of the smoothed objective that ends the sweeps.
    pub tol_obj: f64,
    /// Smoothing floor relative to `max |y|`.
    pub eps_min_rel: f64,
    /// Residuals below this fraction of `max |y|` count as zero in the certificate.
    pub tol_active_rel: f64,
}

impl Default for LadConfig {
    fn default() -> Self {
        LadConfig {
            max_iters: 500,
            tol_obj: 1e-9,
            eps_min_rel: 1e-12,
            tol_active_rel: 1e-7,
        }
    }
}

/// What the solver did and how well the result is certified.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    /// Unsmoothed objective at the returned point.
    pub final_objective: f64,
    pub certificate_gap: f64,
    pub certified: bool,
    pub final_smoothing: f64,
    /// Smoothed objective after each sweep.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub objective_trace: Vec<f64>,
}

/// Coefficients for one row plus the solver report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFit {
    pub coef: Vector,
    pub report: SolverReport,
}

/// Least squares `min Σ (y_t − aᵀx_t)²` by Householder QR.
pub fn ls_rowwise(data: &RegressionData) -> Result<RowFit> {
    data.check_shape()?;
    let coef = numerics::qr_solve_normal(&data.x, &data.y)?;
    let r = data.residuals(&coef)?;
    let xtr = data.x.tr_matvec(&r)?;
    let xty = data.x.tr_matvec(&data.y)?;
    let denom = xty.norm();
    let gap = if denom > 0.0 { xtr.norm() / denom } else { xtr.norm() };
    Ok(RowFit {
        coef,
        report: SolverReport {
            iterations: 1,
            final_objective: r.iter().map(|v| v * v).sum(),
            certificate_gap: gap,
            certified: gap <= 1e-8,
            final_smoothing: 0.0,
            objective_trace: Vec::new(),
        },
    })
}

fn lad_objective(data: &RegressionData, a: &[f64]) -> Result<f64> {
    Ok(data.residuals(a)?.iter().map(|r| r.abs()).sum())
}

fn median_abs(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().map(|x| x.abs()).collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn weighted_solve(x: &Matrix, y: &[f64], weights: &[f64]) -> Result<Vector> {
    let mut xw = x.clone();
    let mut yw = y.to_vec();
    for (t, w) in weights.iter().enumerate() {
        let s = w.sqrt();
        xw.row_mut(t).iter_mut().for_each(|v| *v *= s);
        yw[t] *= s;
    }
    Qr::new(&xw)?.solve(&yw)
}

/// Least absolute deviations `min Σ |y_t − aᵀx_t|` by smoothed IRLS followed
/// by a vertex polish and an independent optimality certificate.
///
/// If the sweep budget runs out the best iterate is returned with
/// `certified = false`; a failed certificate is likewise reported, never hidden.
pub fn lad_rowwise(data: &RegressionData, cfg: &LadConfig) -> Result<RowFit> {
    data.check_shape()?;
    if data.x.entries().iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidParameter("LAD design matrix is identically zero".into()));
    }
    let scale = data.y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let eps_min = (cfg.eps_min_rel * scale).max(f64::MIN_POSITIVE);

    let mut a = numerics::qr_solve_normal(&data.x, &data.y)?;
    let mut r = data.residuals(&a)?;
    let mut eps0 = median_abs(&r);
    if eps0 == 0.0 {
        eps0 = r.iter().map(|v| v.abs()).fold(0.0, f64::max);
    }
    let mut best = (lad_objective(data, &a)?, a.clone());
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut eps = eps_min;
    let mut converged = eps0 == 0.0;
    let mut prev = f64::INFINITY;

    while !converged && iterations < cfg.max_iters {
        eps = (eps0 * 0.5f64.powi(iterations as i32)).max(eps_min);
        let weights: Vec<f64> = r.iter().map(|v| 1.0 / v.hypot(eps)).collect();
        a = match weighted_solve(&data.x, &data.y, &weights) {
            Ok(a) => a,
            // extreme weights can make the weighted design numerically singular
            Err(Error::RankDeficient { .. }) if iterations > 0 => break,
            Err(e) => return Err(e),
        };
        r = data.residuals(&a)?;
        iterations += 1;
        let smoothed: f64 = r.iter().map(|v| v.hypot(eps)).sum();
        trace.push(smoothed);
        let obj = r.iter().map(|v| v.abs()).sum::<f64>();
        if obj < best.0 {
            best = (obj, a.clone());
        }
        if eps <= eps_min && (prev - smoothed).abs() <= cfg.tol_obj * smoothed.max(f64::MIN_POSITIVE) {
            converged = true;
        }
        prev = smoothed;
    }

    let (mut obj, mut coef) = best;
    let mut pivots = 0;
    if let Some(basis) = initial_basis(data, &coef)? {
        let (vcoef, steps) = vertex_descent(data, basis, 50 * data.samples() + 100)?;
        pivots = steps;
        let vobj = lad_objective(data, &vcoef)?;
        if vobj <= obj {
            obj = vobj;
            coef = vcoef;
        }
    }
    let gap = lad_certificate_with(data, &coef, cfg.tol_active_rel)?;
    Ok(RowFit {
        coef,
        report: SolverReport {
            iterations: iterations + pivots,
            final_objective: obj,
            certificate_gap: gap,
            certified: gap <= CERTIFICATE_TOL,
            final_smoothing: eps,
            objective_trace: trace,
        },
    })
}

/// `n` rows with the smallest residuals at `a` whose regressors are linearly independent.
fn initial_basis(data: &RegressionData, a: &[f64]) -> Result<Option<Vec<usize>>> {
    let n = data.dim();
    let r = data.residuals(a)?;
    let mut order: Vec<usize> = (0..r.len())
        .filter(|&t| data.x.row(t).iter().any(|&v| v != 0.0))
        .collect();
    order.sort_by(|&i, &j| r[i].abs().total_cmp(&r[j].abs()).then(i.cmp(&j)));
    let mut basis: Vec<usize> = Vec::with_capacity(n);
    for &t in &order {
        basis.push(t);
        let independent = Qr::new(&data.x.select_rows(&basis).transpose()).map(|q| q.rank() == basis.len());
        match independent {
            Ok(true) => {}
            Ok(false) | Err(Error::RankDeficient { .. }) => {
                basis.pop();
            }
            Err(e) => return Err(e),
        }
        if basis.len() == n {
            return Ok(Some(basis));
        }
    }
    Ok(None)
}

/// Descends along edges of the LAD polyhedron from the vertex interpolating `basis`
/// until the multipliers of the basic rows all lie in `[−1, 1]`.
///
/// Each step releases the basic row with the largest multiplier and moves to the
/// exact minimiser along the edge, a weighted median of the residual breakpoints.
fn vertex_descent(data: &RegressionData, mut basis: Vec<usize>, max_steps: usize) -> Result<(Vector, usize)> {
    let n = data.dim();
    let m = data.samples();
    let solve_basis = |basis: &[usize], rhs: &[f64], transpose: bool| -> Result<Vector> {
        let xb = data.x.select_rows(basis);
        let mat = if transpose { xb.transpose() } else { xb };
        Qr::new(&mat)?.solve(rhs)
    };
    let yb = |basis: &[usize]| -> Vec<f64> { basis.iter().map(|&t| data.y[t]).collect() };
    let mut a = solve_basis(&basis, &yb(&basis), false)?;
    let mut steps = 0;
    let mut in_basis = vec![false; m];
    basis.iter().for_each(|&t| in_basis[t] = true);
    while steps < max_steps {
        let r = data.residuals(&a)?;
        let mut g = vec![0.0; n];
        for t in (0..m).filter(|&t| !in_basis[t]) {
            let sg = if r[t] > 0.0 {
                1.0
            } else if r[t] < 0.0 {
                -1.0
            } else {
                continue;
            };
            for (gi, &xi) in g.iter_mut().zip(data.x.row(t)) {
                *gi += sg * xi;
            }
        }
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let s = solve_basis(&basis, &neg_g, true)?;
        let (j, sj) = s
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |acc, (k, &v)| if v.abs() > acc.1.abs() { (k, v) } else { acc });
        if sj.abs() <= 1.0 + 1e-12 {
            break;
        }
        let delta = -sj.signum();
        let mut e = vec![0.0; n];
        e[j] = delta;
        let d = solve_basis(&basis, &e, false)?;
        let z = data.x.matvec(&d)?;
        // slope of τ ↦ Σ|r_t − τ z_t| just right of zero
        let mut slope = 0.0;
        let mut breaks: Vec<(f64, usize)> = Vec::new();
        for t in 0..m {
            if z[t] == 0.0 {
                continue;
            }
            if r[t] == 0.0 || in_basis[t] {
                slope += z[t].abs();
            } else {
                slope -= r[t].signum() * z[t];
                let tau = r[t] / z[t];
                if tau > 0.0 {
                    breaks.push((tau, t));
                }
            }
        }
        if slope >= 0.0 {
            // degenerate vertex: no strict descent along this edge
            break;
        }
        breaks.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut entering = None;
        for &(_, t) in &breaks {
            slope += 2.0 * z[t].abs();
            if slope >= 0.0 {
                entering = Some(t);
                break;
            }
        }
        let Some(t_in) = entering else {
            break;
        };
        in_basis[basis[j]] = false;
        basis[j] = t_in;
        in_basis[t_in] = true;
        a = match solve_basis(&basis, &yb(&basis), false) {
            Ok(a) => a,
            Err(Error::RankDeficient { .. }) => break,
            Err(e) => return Err(e),
        };
        steps += 1;
    }
    Ok((a, steps))
}

/// Subgradient optimality gap of `a` for the LAD problem with default tolerances.
pub fn lad_certificate(data: &RegressionData, a: &[f64]) -> Result<f64> {
    lad_certificate_with(data, a, LadConfig::default().tol_active_rel)
}

/// `min ‖Σ s_t x_t‖₂ / (1 + ‖X‖_F)` over `s` with `s_t = sign(r_t)` on residuals
/// larger than `tol_active_rel · max|y|` and `s_t ∈ [−1, 1]` on the rest.
/// Rows of `X` that are entirely zero are ignored.
pub fn lad_certificate_with(data: &RegressionData, a: &[f64], tol_active_rel: f64) -> Result<f64> {
    if a.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            context: "certificate coefficients",
            expected: data.dim(),
            found: a.len(),
        });
    }
    let n = data.dim();
    let r = data.residuals(a)?;
    let scale = data.y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = tol_active_rel * scale;
    let mut g = vec![0.0; n];
    let mut active = Vec::new();
    for (t, &rt) in r.iter().enumerate() {
        let row = data.x.row(t);
        if row.iter().all(|&v| v == 0.0) {
            continue;
        }
        if rt.abs() <= tol {
            active.push(t);
        } else {
            let s = rt.signum();
            for (gi, &xi) in g.iter_mut().zip(row) {
                *gi += s * xi;
            }
        }
    }
    // columns of m are the active rows x_t
    let m = Matrix::from_fn(n, active.len(), |i, k| data.x[(active[k], i)]);
    let best = box_least_squares(&m, &g)?;
    Ok(best / (1.0 + data.x.frobenius_norm()))
}

/// `min ‖M s + g‖₂` over `s ∈ [−1, 1]^k`.
fn box_least_squares(m: &Matrix, g: &[f64]) -> Result<f64> {
    let (n, k) = m.shape();
    if k == 0 {
        return Ok(norm2(g));
    }
    let value = |s: &[f64]| -> Result<f64> {
        let ms = m.matvec(s)?;
        Ok(norm2(&ms.iter().zip(g).map(|(a, b)| a + b).collect::<Vec<_>>()))
    };
    if k <= n {
        // unconstrained minimiser first; optimal points land here
        if let Some(s) = face_solve(m, g, &vec![None; k])? {
            if s.iter().all(|v| v.abs() <= 1.0) {
                return value(&s);
            }
        }
        // exact: enumerate faces of the box (each coordinate free, −1 or +1)
        let mut best = f64::INFINITY;
        let mut fixed: Vec<Option<f64>> = vec![None; k];
        let total = 3usize.pow(k as u32);
        for code in 0..total {
            let mut c = code;
            for f in fixed.iter_mut() {
                *f = match c % 3 {
                    0 => None,
                    1 => Some(-1.0),
                    _ => Some(1.0),
                };
                c /= 3;
            }
            if let Some(s) = face_solve(m, g, &fixed)? {
                if s.iter().all(|v| v.abs() <= 1.0 + 1e-12) {
                    best = best.min(value(&s)?);
                }
            }
        }
        return Ok(best);
    }
    // more active residuals than unknowns: accelerated projected gradient
    let lip = numerics::operator_norm(m)?.powi(2);
    if lip == 0.0 {
        return Ok(norm2(g));
    }
    let mut s = vec![0.0; k];
    let mut z = s.clone();
    let mut theta = 1.0f64;
    let mut best = value(&s)?;
    for _ in 0..20_000 {
        let mz = m.matvec(&z)?;
        let resid: Vec<f64> = mz.iter().zip(g).map(|(a, b)| a + b).collect();
        let grad = m.tr_matvec(&resid)?;
        let next: Vec<f64> = z
            .iter()
            .zip(grad.iter())
            .map(|(zi, gi)| (zi - gi / lip).clamp(-1.0, 1.0))
            .collect();
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let mom = (theta - 1.0) / theta_next;
        z = next.iter().zip(&s).map(|(a, b)| a + mom * (a - b)).collect();
        s = next;
        theta = theta_next;
        let v = value(&s)?;
        best = best.min(v);
        if best <= 1e-14 * (1.0 + norm2(g)) {
            break;
        }
    }
    Ok(best)
}

/// Least-squares solution with the fixed coordinates clamped; `None` if the free block is singular.
fn face_solve(m: &Matrix, g: &[f64], fixed: &[Option<f64>]) -> Result<Option<Vec<f64>>> {
    let n = m.rows();
    let free: Vec<usize> = (0..fixed.len()).filter(|&j| fixed[j].is_none()).collect();
    let mut rhs: Vec<f64> = g.iter().map(|v| -v).collect();
    for (j, f) in fixed.iter().enumerate() {
        if let Some(val) = f {
            for (i, r) in rhs.iter_mut().enumerate() {
                *r -= m[(i, j)] * val;
            }
        }
    }
    let mut s: Vec<f64> = fixed.iter().map(|f| f.unwrap_or(0.0)).collect();
    if free.is_empty() {
        return Ok(Some(s));
    }
    let mf = Matrix::from_fn(n, free.len(), |i, k| m[(i, free[k])]);
    match Qr::new(&mf).and_then(|qr| qr.solve(&rhs)) {
        Ok(sol) => {
            for (k, &j) in free.iter().enumerate() {
                s[j] = sol[k];
            }
            Ok(Some(s))
        }
        Err(Error::RankDeficient { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Stacks row vectors into a square matrix.
pub fn assemble_matrix(rows: &[Vector]) -> Result<Matrix> {
    let n = rows.len();
    for r in rows {
        if r.dim() != n {
            return Err(Error::DimensionMismatch {
                context: "assembled row",
                expected: n,
                found: r.dim(),
            });
        }
    }
    Matrix::from_rows(rows)
}

/// Full-matrix fit with its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixFit {
    pub a: Matrix,
    pub report: SolverReport,
}

/// Regressors and targets of a state sequence as `T×n` matrices.
pub fn transition_matrices(states: &[Vector]) -> Result<(Matrix, Matrix)> {
    if states.len() < 2 {
        return Err(Error::InvalidParameter("need at least one transition".into()));
    }
    let x = Matrix::from_rows(&states[..states.len() - 1])?;
    let y = Matrix::from_rows(&states[1..])?;
    Ok((x, y))
}

fn huber(u: f64, eps: f64) -> f64 {
    if u >= eps {
        u
    } else {
        0.5 * (u * u / eps + eps)
    }
}

/// Un-squared group loss `min_A Σ_t ‖x_{t+1} − A x_t‖₂` by IRLS with weights
/// `1 / max(‖r_t‖₂, ε)`, i.e. majorise–minimise on the Huberised norm.
pub fn l2_full(states: &[Vector], cfg: &LadConfig) -> Result<MatrixFit> {
    let (x, y) = transition_matrices(states)?;
    let (t_len, n) = x.shape();
    if t_len < n {
        return Err(Error::DimensionMismatch {
            context: "ℓ2 estimator needs T >= n",
            expected: n,
            found: t_len,
        });
    }
    let solve_all = |weights: Option<&[f64]>| -> Result<Matrix> {
        let mut xw = x.clone();
        let mut yw = y.clone();
        if let Some(w) = weights {
            for (t, wt) in w.iter().enumerate() {
                let s = wt.sqrt();
                xw.row_mut(t).iter_mut().for_each(|v| *v *= s);
                yw.row_mut(t).iter_mut().for_each(|v| *v *= s);
            }
        }
        let qr = Qr::new(&xw)?;
        let rows: Vec<Vector> = (0..n).map(|i| qr.solve(&yw.column(i))).collect::<Result<_>>()?;
        Matrix::from_rows(&rows)
    };
    let resid_norms = |a: &Matrix| -> Result<Vec<f64>> {
        (0..t_len)
            .map(|t| {
                let pred = a.matvec(x.row(t))?;
                Ok(norm2(&y.row(t).iter().zip(pred.iter()).map(|(u, v)| u - v).collect::<Vec<_>>()))
            })
            .collect()
    };

    let scale = y.entries().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let eps_min = (cfg.eps_min_rel * scale).max(f64::MIN_POSITIVE);
    let mut a = solve_all(None)?;
    let mut norms = resid_norms(&a)?;
    let eps0 = median_abs(&norms);
    let mut best = (norms.iter().sum::<f64>(), a.clone());
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut eps = eps_min;
    let mut converged = eps0 == 0.0;
    let mut prev = f64::INFINITY;
    while !converged && iterations < cfg.max_iters {
        eps = (eps0 * 0.5f64.powi(iterations as i32)).max(eps_min);
        let weights: Vec<f64> = norms.iter().map(|u| 1.0 / u.max(eps)).collect();
        a = match solve_all(Some(&weights)) {
            Ok(a) => a,
            Err(Error::RankDeficient { .. }) if iterations > 0 => break,
            Err(e) => return Err(e),
        };
        norms = resid_norms(&a)?;
        iterations += 1;
        let smoothed: f64 = norms.iter().map(|&u| huber(u, eps)).sum();
        trace.push(smoothed);
        let obj: f64 = norms.iter().sum();
        if obj < best.0 {
            best = (obj, a.clone());
        }
        if eps <= eps_min && (prev - smoothed).abs() <= cfg.tol_obj * smoothed.max(f64::MIN_POSITIVE) {
            converged = true;
        }
        prev = smoothed;
    }
    let (obj, a) = best;

    // gradient of the Huberised objective at the returned point
    let norms = resid_norms(&a)?;
    let mut grad = Matrix::zeros(n, n);
    for t in 0..t_len {
        let pred = a.matvec(x.row(t))?;
        let w = 1.0 / norms[t].max(eps);
        for i in 0..n {
            let ri = (y[(t, i)] - pred[i]) * w;
            for j in 0..n {
                grad[(i, j)] -= ri * x[(t, j)];
            }
        }
    }
    let gap = grad.frobenius_norm() / (1.0 + x.frobenius_norm());
    Ok(MatrixFit {
        a,
        report: SolverReport {
            iterations,
            final_objective: obj,
            certificate_gap: gap,
            certified: converged,
            final_smoothing: eps,
            objective_trace: trace,
        },
    })
}

/// Which one-stage estimator to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OneStage {
    LeastSquares,
    L2,
    L1,
}

impl OneStage {
    pub fn name(self) -> &'static str {
        match self {
            OneStage::LeastSquares => "ls",
            OneStage::L2 => "l2",
            OneStage::L1 => "l1",
        }
    }
}

/// An estimated matrix with optional per-row errors against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub estimator: OneStage,
    pub a_hat: Matrix,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_row_error: Option<Vec<f64>>,
    /// Aggregate: summed iterations and objectives, worst certificate gap.
    pub solver_report: SolverReport,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub row_reports: Vec<SolverReport>,
}

fn summarize(reports: &[SolverReport]) -> SolverReport {
    SolverReport {
        iterations: reports.iter().map(|r| r.iterations).sum(),
        final_objective: reports.iter().map(|r| r.final_objective).sum(),
        certificate_gap: reports.iter().map(|r| r.certificate_gap).fold(0.0, f64::max),
        certified: reports.iter().all(|r| r.certified),
        final_smoothing: reports.iter().map(|r| r.final_smoothing).fold(0.0, f64::max),
        objective_trace: Vec::new(),
    }
}

/// Fits every row of `A` with `fit`, in parallel, merged by node index.
pub fn fit_rows<F>(states: &[Vector], fit: F) -> Result<(Matrix, Vec<SolverReport>)>
where
    F: Fn(&RegressionData) -> Result<RowFit> + Sync,
{
    let n = states.first().map_or(0, Vector::dim);
    let fits: Vec<RowFit> = (0..n)
        .into_par_iter()
        .map(|i| RegressionData::full(states, i).and_then(|d| fit(&d)))
        .collect::<Result<_>>()?;
    let rows: Vec<Vector> = fits.iter().map(|f| f.coef.clone()).collect();
    let reports = fits.into_iter().map(|f| f.report).collect();
    Ok((assemble_matrix(&rows)?, reports))
}

/// Row errors `‖â_i − ā_i‖₂`.
pub fn row_errors(a_hat: &Matrix, truth: &Matrix) -> Result<Vec<f64>> {
    let diff = a_hat.sub(truth)?;
    Ok((0..diff.rows()).map(|i| norm2(diff.row(i))).collect())
}

/// Runs one of the one-stage estimators on a state sequence.
pub fn estimate(states: &[Vector], which: OneStage, lad: &LadConfig, truth: Option<&Matrix>) -> Result<EstimateResult> {
    let (a_hat, row_reports) = match which {
        OneStage::LeastSquares => fit_rows(states, ls_rowwise)?,
        OneStage::L1 => fit_rows(states, |d| lad_rowwise(d, lad))?,
        OneStage::L2 => {
            let fit = l2_full(states, lad)?;
            (fit.a, vec![fit.report])
        }
    };
    let per_row_error = truth.map(|t| row_errors(&a_hat, t)).transpose()?;
    let mut solver_report = summarize(&row_reports);
    if which == OneStage::L2 {
        solver_report = row_reports[0].clone();
        solver_report.objective_trace.clear();
    }
    Ok(EstimateResult {
        estimator: which,
        a_hat,
        per_row_error,
        solver_report,
        row_reports,
    })
}
