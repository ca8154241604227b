//! Dense linear algebra kernel.
//!
//! Row-major matrices, Householder QR least squares, power iteration for the
//! operator norm, and Hessenberg + shifted QR for the spectral radius. All
//! routines are pure functions of their inputs.

use std::ops::{Deref, DerefMut, Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerical tolerances shared by the kernel.
pub mod tol {
    /// A QR diagonal entry below this fraction of the largest one marks rank deficiency.
    pub const QR_RANK: f64 = 1e-10;
    /// Relative accuracy targeted by [`super::operator_norm`].
    pub const OPERATOR_NORM_REL: f64 = 1e-9;
    /// Relative accuracy targeted by [`super::spectral_radius`].
    pub const SPECTRAL_RADIUS_REL: f64 = 1e-6;
    /// Iterations allowed per eigenvalue in the shifted QR sweep.
    pub const QR_ITERS_PER_EIGENVALUE: usize = 60;
}

/// Dense real vector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(pub Vec<f64>);

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.0)
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for Vector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Dense real matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl TryFrom<MatrixRepr> for Matrix {
    type Error = Error;
    fn try_from(r: MatrixRepr) -> Result<Self> {
        Matrix::new(r.rows, r.cols, r.entries)
    }
}

impl From<Matrix> for MatrixRepr {
    fn from(m: Matrix) -> Self {
        MatrixRepr {
            rows: m.rows,
            cols: m.cols,
            entries: m.data,
        }
    }
}

impl Matrix {
    /// Builds a matrix from row-major entries, rejecting bad lengths and non-finite values.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "matrix entries",
                expected: rows * cols,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("matrix entries must be finite".into()));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Matrix::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Stacks equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "matrix rows",
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Matrix::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_vectors(&self) -> Vec<Vector> {
        (0..self.rows).map(|i| Vector(self.row(i).to_vec())).collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                context: "matmul",
                expected: self.cols,
                found: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = out.row_mut(i);
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vector> {
        if self.cols != x.len() {
            return Err(Error::DimensionMismatch {
                context: "matvec",
                expected: self.cols,
                found: x.len(),
            });
        }
        Ok(Vector((0..self.rows).map(|i| dot(self.row(i), x)).collect()))
    }

    /// `Aᵀx` without forming the transpose.
    pub fn tr_matvec(&self, x: &[f64]) -> Result<Vector> {
        if self.rows != x.len() {
            return Err(Error::DimensionMismatch {
                context: "transposed matvec",
                expected: self.rows,
                found: x.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        Ok(Vector(out))
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                context: "elementwise",
                expected: self.rows * self.cols,
                found: other.rows * other.cols,
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    /// Keeps the listed rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm with scaling against overflow.
pub fn norm2(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let s: f64 = v.iter().map(|x| (x / scale) * (x / scale)).sum();
    scale * s.sqrt()
}

/// Householder QR factorization of a tall matrix (`rows >= cols`).
#[derive(Debug, Clone)]
pub struct Qr {
    /// R in the upper triangle, Householder vectors below the diagonal.
    qr: Matrix,
    /// Householder scalars.
    tau: Vec<f64>,
    rdiag: Vec<f64>,
}

impl Qr {
    pub fn new(a: &Matrix) -> Result<Self> {
        let (m, n) = a.shape();
        if m < n {
            return Err(Error::DimensionMismatch {
                context: "QR requires rows >= cols",
                expected: n,
                found: m,
            });
        }
        let mut qr = a.clone();
        let mut tau = vec![0.0; n];
        let mut rdiag = vec![0.0; n];
        for k in 0..n {
            let col: Vec<f64> = (k..m).map(|i| qr[(i, k)]).collect();
            let alpha = norm2(&col);
            if alpha == 0.0 {
                rdiag[k] = 0.0;
                continue;
            }
            let alpha = if qr[(k, k)] > 0.0 { -alpha } else { alpha };
            // v = x - alpha e1, stored scaled so v[0] = 1
            let v0 = qr[(k, k)] - alpha;
            for i in k + 1..m {
                qr[(i, k)] /= v0;
            }
            tau[k] = -v0 / alpha;
            qr[(k, k)] = alpha;
            rdiag[k] = alpha;
            for j in k + 1..n {
                let mut s = qr[(k, j)];
                for i in k + 1..m {
                    s += qr[(i, k)] * qr[(i, j)];
                }
                s *= tau[k];
                qr[(k, j)] -= s;
                for i in k + 1..m {
                    let vik = qr[(i, k)];
                    qr[(i, j)] -= s * vik;
                }
            }
        }
        Ok(Qr { qr, tau, rdiag })
    }

    /// Numerical column rank under [`tol::QR_RANK`].
    pub fn rank(&self) -> usize {
        let max = self.rdiag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max == 0.0 {
            return 0;
        }
        self.rdiag.iter().filter(|v| v.abs() > tol::QR_RANK * max).count()
    }

    /// Applies `Qᵀ` to `y` in place.
    fn apply_qt(&self, y: &mut [f64]) {
        let (m, n) = self.qr.shape();
        for k in 0..n {
            if self.tau[k] == 0.0 {
                continue;
            }
            let mut s = y[k];
            for i in k + 1..m {
                s += self.qr[(i, k)] * y[i];
            }
            s *= self.tau[k];
            y[k] -= s;
            for i in k + 1..m {
                y[i] -= s * self.qr[(i, k)];
            }
        }
    }

    /// `Q x` for the full `m×m` orthogonal factor.
    pub fn apply_q(&self, x: &[f64]) -> Vec<f64> {
        let (m, n) = self.qr.shape();
        let mut y = x.to_vec();
        for k in (0..n).rev() {
            if self.tau[k] == 0.0 {
                continue;
            }
            let mut s = y[k];
            for i in k + 1..m {
                s += self.qr[(i, k)] * y[i];
            }
            s *= self.tau[k];
            y[k] -= s;
            for i in k + 1..m {
                y[i] -= s * self.qr[(i, k)];
            }
        }
        y
    }

    pub fn r_diagonal(&self) -> &[f64] {
        &self.rdiag
    }

    /// Least-squares solution of `min ‖y − A a‖₂`.
    pub fn solve(&self, y: &[f64]) -> Result<Vector> {
        let (m, n) = self.qr.shape();
        if y.len() != m {
            return Err(Error::DimensionMismatch {
                context: "QR right-hand side",
                expected: m,
                found: y.len(),
            });
        }
        let rank = self.rank();
        if rank < n {
            return Err(Error::RankDeficient { rank, cols: n });
        }
        let mut z = y.to_vec();
        self.apply_qt(&mut z);
        let mut a = vec![0.0; n];
        for k in (0..n).rev() {
            let mut s = z[k];
            for j in k + 1..n {
                s -= self.qr[(k, j)] * a[j];
            }
            a[k] = s / self.qr[(k, k)];
        }
        Ok(Vector(a))
    }
}

/// Solves `min ‖y − X a‖₂` by Householder QR.
pub fn qr_solve_normal(x: &Matrix, y: &[f64]) -> Result<Vector> {
    if x.rows() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "least squares",
            expected: x.rows(),
            found: y.len(),
        });
    }
    Qr::new(x)?.solve(y)
}

/// Deterministic start vector for power iterations; never orthogonal to a fixed axis.
fn start_vector(n: usize, salt: u64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|i| {
            let h = crate::rng::mix64(salt ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            0.5 + (h >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect();
    let s = norm2(&v);
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Largest singular value, by power iteration on `AᵀA`.
pub fn operator_norm(a: &Matrix) -> Result<f64> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(Error::InvalidParameter("operator norm of an empty matrix".into()));
    }
    let scale = a.data.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let a = a.scale(1.0 / scale);
    let cap = 10 * n + 1000;
    let mut best = 0.0f64;
    // two independent starts guard against a start vector deficient in the top direction
    for salt in [0x5EED_0001u64, 0x5EED_0002] {
        let mut v = start_vector(n, salt);
        let mut est = 0.0f64;
        let mut converged = false;
        for _ in 0..cap {
            let av = a.matvec(&v)?;
            let mut w = a.tr_matvec(&av)?.0;
            let lambda = dot(&v, &w);
            let wn = norm2(&w);
            if wn == 0.0 {
                est = 0.0;
                converged = true;
                break;
            }
            w.iter_mut().for_each(|x| *x /= wn);
            if (lambda - est).abs() <= 1e-15 * lambda.max(f64::MIN_POSITIVE) {
                est = lambda;
                converged = true;
                break;
            }
            est = lambda;
            v = w;
        }
        if !converged {
            // The Rayleigh quotient bounds the top eigenvalue from below; with slow
            // convergence the residual check decides whether it is accurate enough.
            let av = a.matvec(&v)?;
            let w = a.tr_matvec(&av)?;
            let resid: Vec<f64> = w.iter().zip(&v).map(|(wi, vi)| wi - est * vi).collect();
            if norm2(&resid) > tol::OPERATOR_NORM_REL * est {
                // nearly tied top singular values: take the spectrum of AᵀA directly
                let gram = a.transpose().matmul(&a)?;
                let top = eigenvalues(&gram)?.iter().fold(0.0f64, |m, &(re, _)| m.max(re));
                return Ok(scale * top.max(best).sqrt());
            }
        }
        best = best.max(est);
    }
    Ok(scale * best.sqrt())
}

/// Maximum eigenvalue modulus via balancing, Hessenberg reduction and Francis double-shift QR.
pub fn spectral_radius(a: &Matrix) -> Result<f64> {
    Ok(eigenvalues(a)?
        .into_iter()
        .map(|(re, im)| re.hypot(im))
        .fold(0.0, f64::max))
}

/// All eigenvalues of a square matrix as `(re, im)` pairs, unordered.
pub fn eigenvalues(a: &Matrix) -> Result<Vec<(f64, f64)>> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            context: "eigenvalues of non-square matrix",
            expected: a.rows(),
            found: a.cols(),
        });
    }
    let n = a.rows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut h: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    balance(&mut h);
    hessenberg(&mut h);
    hqr(&mut h)
}

fn balance(a: &mut [Vec<f64>]) {
    const RADIX: f64 = 2.0;
    let n = a.len();
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[j][i].abs();
                    r += a[i][j].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 0..n {
                        a[i][j] *= g;
                    }
                    for row in a.iter_mut() {
                        row[i] *= f;
                    }
                }
            }
        }
    }
}

/// Householder reduction to upper Hessenberg form (similarity transform).
fn hessenberg(a: &mut [Vec<f64>]) {
    let n = a.len();
    if n < 3 {
        return;
    }
    for k in 0..n - 2 {
        let x: Vec<f64> = (k + 1..n).map(|i| a[i][k]).collect();
        let alpha = norm2(&x);
        if alpha == 0.0 {
            continue;
        }
        let alpha = if x[0] > 0.0 { -alpha } else { alpha };
        let mut v = x;
        v[0] -= alpha;
        let vn2: f64 = v.iter().map(|t| t * t).sum();
        if vn2 == 0.0 {
            continue;
        }
        // A <- H A
        for j in 0..n {
            let s: f64 = (0..v.len()).map(|t| v[t] * a[k + 1 + t][j]).sum::<f64>() * 2.0 / vn2;
            for t in 0..v.len() {
                a[k + 1 + t][j] -= s * v[t];
            }
        }
        // A <- A H
        for row in a.iter_mut() {
            let s: f64 = (0..v.len()).map(|t| v[t] * row[k + 1 + t]).sum::<f64>() * 2.0 / vn2;
            for t in 0..v.len() {
                row[k + 1 + t] -= s * v[t];
            }
        }
        for i in k + 2..n {
            a[i][k] = 0.0;
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Eigenvalues of an upper Hessenberg matrix (EISPACK hqr), destroying the input.
fn hqr(a: &mut [Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    let n = a.len();
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[i][j].abs();
        }
    }
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    let (mut p, mut q, mut r): (f64, f64, f64);
    let (mut x, mut y, mut z, mut w);
    while nn >= 0 {
        let nu = nn as usize;
        let mut its = 0usize;
        loop {
            let mut l = nu;
            while l >= 1 {
                let mut s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[l][l - 1].abs() + s == s {
                    a[l][l - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            x = a[nu][nu];
            if l == nu {
                wr[nu] = x + t;
                wi[nu] = 0.0;
                nn -= 1;
                break;
            }
            y = a[nu - 1][nu - 1];
            w = a[nu][nu - 1] * a[nu - 1][nu];
            if l == nu - 1 {
                p = 0.5 * (y - x);
                q = p * p + w;
                z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    z = p + sign(z, p);
                    wr[nu - 1] = x + z;
                    wr[nu] = x + z;
                    if z != 0.0 {
                        wr[nu] = x - w / z;
                    }
                    wi[nu - 1] = 0.0;
                    wi[nu] = 0.0;
                } else {
                    wr[nu - 1] = x + p;
                    wr[nu] = x + p;
                    wi[nu - 1] = -z;
                    wi[nu] = z;
                }
                nn -= 2;
                break;
            }
            if its == tol::QR_ITERS_PER_EIGENVALUE {
                return Err(Error::NoConvergence {
                    what: "Hessenberg QR eigenvalue iteration",
                    iterations: its,
                });
            }
            if its % 10 == 0 && its > 0 {
                // exceptional shift
                t += x;
                for (i, row) in a.iter_mut().enumerate().take(nu + 1) {
                    row[i] -= x;
                }
                let s = a[nu][nu - 1].abs() + a[nu - 1][nu - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            let mut m = nu - 2;
            loop {
                z = a[m][m];
                r = x - z;
                let s0 = y - z;
                p = (r * s0 - w) / a[m + 1][m] + a[m][m + 1];
                q = a[m + 1][m + 1] - z - r - s0;
                r = a[m + 2][m + 1];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                if u + v == v {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=nu {
                a[i][i - 2] = 0.0;
                if i != m + 2 {
                    a[i][i - 3] = 0.0;
                }
            }
            let mut k = m;
            while k < nu {
                if k != m {
                    p = a[k][k - 1];
                    q = a[k + 1][k - 1];
                    r = 0.0;
                    if k != nu - 1 {
                        r = a[k + 2][k - 1];
                    }
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = sign((p * p + q * q + r * r).sqrt(), p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[k][k - 1] = -a[k][k - 1];
                        }
                    } else {
                        a[k][k - 1] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nu {
                        p = a[k][j] + q * a[k + 1][j];
                        if k != nu - 1 {
                            p += r * a[k + 2][j];
                            a[k + 2][j] -= p * z;
                        }
                        a[k + 1][j] -= p * y;
                        a[k][j] -= p * x;
                    }
                    let mmin = if nu < k + 3 { nu } else { k + 3 };
                    for row in a.iter_mut().take(mmin + 1).skip(l) {
                        p = x * row[k] + y * row[k + 1];
                        if k != nu - 1 {
                            p += z * row[k + 2];
                            row[k + 2] -= p * r;
                        }
                        row[k + 1] -= p * q;
                        row[k] -= p;
                    }
                }
                k += 1;
            }
        }
    }
    Ok(wr.into_iter().zip(wi).collect())
}

/// `A^k` by repeated multiplication.
pub fn matrix_power(a: &Matrix, k: usize) -> Result<Matrix> {
    let mut out = Matrix::identity(a.rows());
    for _ in 0..k {
        out = out.matmul(a)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut s = crate::rng::Stream::new(seed, crate::rng::Purpose::Test);
        Matrix::from_fn(rows, cols, |_, _| s.next_normal())
    }

    #[test]
    fn qr_solve_hand_example() {
        let x = Matrix::new(2, 1, vec![1.0, 2.0]).unwrap();
        let a = qr_solve_normal(&x, &[1.0, 3.0]).unwrap();
        assert!((a[0] - 1.4).abs() < 1e-14);
    }

    #[test]
    fn qr_solve_identity_returns_rhs() {
        let y = [0.3, -2.0, 7.5];
        let a = qr_solve_normal(&Matrix::identity(3), &y).unwrap();
        for (u, v) in a.iter().zip(&y) {
            assert!((u - v).abs() < 1e-15);
        }
    }

    #[test]
    fn qr_solve_recovers_planted_coefficients() {
        let x = rand_matrix(50, 5, 7);
        let a0 = [1.0, -0.5, 2.0, 0.0, 3.25];
        let y = x.matvec(&a0).unwrap();
        let a = qr_solve_normal(&x, &y).unwrap();
        for (u, v) in a.iter().zip(&a0) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn qr_rank_deficient() {
        let x = Matrix::new(3, 2, vec![1.0, 2.0, 2.0, 4.0, 3.0, 6.0]).unwrap();
        assert!(matches!(
            qr_solve_normal(&x, &[1.0, 2.0, 3.0]),
            Err(Error::RankDeficient { rank: 1, cols: 2 })
        ));
    }

    #[test]
    fn operator_norm_with_nearly_tied_singular_values() {
        let q = crate::sysgen::random_orthogonal(4, 3).unwrap();
        let d = Matrix::diag(&[1.0, 1.0 - 1e-10, 0.5, 0.1]);
        let a = q.matmul(&d).unwrap().matmul(&q.transpose()).unwrap();
        assert!((operator_norm(&a).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn operator_norm_examples() {
        assert!((operator_norm(&Matrix::diag(&[3.0, 1.0])).unwrap() - 3.0).abs() < 1e-12);
        let shift = Matrix::new(2, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!((operator_norm(&shift).unwrap() - 1.0).abs() < 1e-12);
        let two_i = Matrix::identity(3).scale(2.0);
        assert!((operator_norm(&two_i).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(operator_norm(&Matrix::zeros(2, 3)).unwrap(), 0.0);
    }

    #[test]
    fn spectral_radius_examples() {
        assert!((spectral_radius(&Matrix::diag(&[0.75, 0.2])).unwrap() - 0.75).abs() < 1e-12);
        let shift = Matrix::new(2, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(spectral_radius(&shift).unwrap().abs() < 1e-12);
        let rot = Matrix::new(2, 2, vec![0.0, -0.5, 0.5, 0.0]).unwrap();
        assert!((spectral_radius(&rot).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn eigenvalues_of_companion_matrix() {
        // x^3 - 6x^2 + 11x - 6 = (x-1)(x-2)(x-3)
        let c = Matrix::new(3, 3, vec![6.0, -11.0, 6.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let mut ev: Vec<f64> = eigenvalues(&c).unwrap().iter().map(|e| e.0).collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (got, want) in ev.iter().zip([1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-9, "{ev:?}");
        }
    }

    #[test]
    fn matrix_construction_rejects_non_finite() {
        assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::new(2, 2, vec![1.0]).is_err());
    }

    #[test]
    fn matrix_json_round_trip() {
        let m = rand_matrix(3, 4, 11);
        let s = serde_json::to_string(&m).unwrap();
        let back: Matrix = serde_json::from_str(&s).unwrap();
        assert_eq!(m, back);
    }
}
