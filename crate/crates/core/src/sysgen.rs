//! Random stable system matrices with a prescribed spectral radius and operator norm.
//!
//! `A = Q (D + cN) Qᵀ` with `Q` random orthogonal, `D` diagonal with largest
//! modulus `ρ`, `N` random strictly upper triangular and `c ≥ 0` found by
//! bisection. The eigenvalues of `D + cN` are the diagonal of `D` for every
//! `c`, and orthogonal similarity preserves both the spectrum and the
//! operator norm, so `c` only moves the norm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, Matrix, Qr};
use crate::rng::{Purpose, Stream};

/// Absolute tolerance on the achieved operator norm.
pub const OPNORM_TOL: f64 = 1e-3;
/// Absolute tolerance on the achieved spectral radius.
pub const RHO_TOL: f64 = 1e-6;
/// Horizon used for the stability constant stored with every generated system.
pub const PSI_HORIZON: usize = 50;
const MAX_ATTEMPTS: usize = 32;
const C_MAX: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub n: usize,
    pub rho_target: f64,
    pub opnorm_target: f64,
    pub seed: u64,
}

impl SystemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("system dimension must be positive".into()));
        }
        if !(self.rho_target > 0.0 && self.rho_target < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "spectral radius target {} outside (0, 1)",
                self.rho_target
            )));
        }
        if !(self.opnorm_target >= self.rho_target) || !self.opnorm_target.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "operator norm target {} below spectral radius target {}",
                self.opnorm_target, self.rho_target
            )));
        }
        if self.n == 1 && self.opnorm_target != self.rho_target {
            return Err(Error::InvalidParameter(
                "a scalar system has operator norm equal to its spectral radius".into(),
            ));
        }
        Ok(())
    }
}

/// A system matrix with its verified stability metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SystemRepr", into = "SystemRepr")]
pub struct SystemMatrix {
    pub a: Matrix,
    pub rho: f64,
    pub opnorm: f64,
    pub psi: f64,
}

/// JSON layout: `{n, rho, opnorm, psi, entries[]}` with row-major entries.
#[derive(Serialize, Deserialize)]
struct SystemRepr {
    n: usize,
    rho: f64,
    opnorm: f64,
    psi: f64,
    entries: Vec<f64>,
}

impl TryFrom<SystemRepr> for SystemMatrix {
    type Error = Error;
    fn try_from(r: SystemRepr) -> Result<Self> {
        Ok(SystemMatrix {
            a: Matrix::new(r.n, r.n, r.entries)?,
            rho: r.rho,
            opnorm: r.opnorm,
            psi: r.psi,
        })
    }
}

impl From<SystemMatrix> for SystemRepr {
    fn from(s: SystemMatrix) -> Self {
        SystemRepr {
            n: s.a.rows(),
            rho: s.rho,
            opnorm: s.opnorm,
            psi: s.psi,
            entries: s.a.entries().to_vec(),
        }
    }
}

impl SystemMatrix {
    /// Wraps an arbitrary square matrix, computing its metadata.
    pub fn from_matrix(a: Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                context: "system matrix must be square",
                expected: a.rows(),
                found: a.cols(),
            });
        }
        let rho = numerics::spectral_radius(&a)?;
        let opnorm = numerics::operator_norm(&a)?;
        let psi = psi_of(&a, rho, PSI_HORIZON)?;
        Ok(SystemMatrix { a, rho, opnorm, psi })
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }
}

/// Generates a system hitting both targets; deterministic in `spec.seed`.
pub fn generate_system(spec: &SystemSpec) -> Result<SystemMatrix> {
    spec.validate()?;
    let n = spec.n;
    if n == 1 {
        let sign = Stream::new(spec.seed, Purpose::SystemDiagonal).next_sign();
        return SystemMatrix::from_matrix(Matrix::new(1, 1, vec![sign * spec.rho_target])?);
    }
    for attempt in 0..MAX_ATTEMPTS {
        let sub_seed = if attempt == 0 {
            spec.seed
        } else {
            crate::rng::stream_key(spec.seed, Purpose::SystemRetry, attempt as u64, 0)
        };
        if let Some(a) = attempt_generate(spec, sub_seed)? {
            let sys = SystemMatrix::from_matrix(a)?;
            if (sys.rho - spec.rho_target).abs() <= RHO_TOL
                && (sys.opnorm - spec.opnorm_target).abs() <= OPNORM_TOL
            {
                return Ok(sys);
            }
        }
    }
    Err(Error::InfeasibleTargets {
        target: spec.opnorm_target,
        attempts: MAX_ATTEMPTS,
    })
}

fn attempt_generate(spec: &SystemSpec, seed: u64) -> Result<Option<Matrix>> {
    let n = spec.n;
    let rho = spec.rho_target;

    let q = random_orthogonal(n, seed)?;

    let mut diag_stream = Stream::new(seed, Purpose::SystemDiagonal);
    let mut d: Vec<f64> = Vec::with_capacity(n);
    d.push(diag_stream.next_sign() * rho);
    for _ in 1..n {
        d.push(diag_stream.next_range(-rho, rho));
    }
    let dm = Matrix::diag(&d);

    let mut nil_stream = Stream::new(seed, Purpose::SystemNilpotent);
    let nil = Matrix::from_fn(n, n, |i, j| if j > i { nil_stream.next_normal() } else { 0.0 });

    let core_norm = |c: f64| -> Result<f64> { numerics::operator_norm(&dm.add(&nil.scale(c))?) };

    let target = spec.opnorm_target;
    let c = if core_norm(0.0)? >= target * (1.0 - 1e-12) {
        0.0
    } else {
        let mut lo = 0.0;
        let mut hi = 1.0;
        while core_norm(hi)? < target {
            lo = hi;
            hi *= 2.0;
            if hi > C_MAX {
                return Ok(None);
            }
        }
        // the norm is continuous in c, so bisection brackets a crossing
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if core_norm(mid)? < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    };
    let core = dm.add(&nil.scale(c))?;
    let a = q.matmul(&core)?.matmul(&q.transpose())?;
    Ok(Some(a))
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with sign-fixed R diagonal.
pub fn random_orthogonal(n: usize, seed: u64) -> Result<Matrix> {
    let mut s = Stream::new(seed, Purpose::SystemOrthogonal);
    let g = Matrix::from_fn(n, n, |_, _| s.next_normal());
    let qr = Qr::new(&g)?;
    // Q e_j for each column, then flip columns so diag(R) > 0
    let mut q = Matrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = qr.apply_q(&e);
        for i in 0..n {
            q[(i, j)] = col[i];
        }
    }
    let r = qr.r_diagonal();
    for (j, &rj) in r.iter().enumerate() {
        if rj < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    Ok(q)
}

fn psi_of(a: &Matrix, rho: f64, horizon: usize) -> Result<f64> {
    let mut psi = 1.0f64;
    let mut power = Matrix::identity(a.rows());
    for t in 1..=horizon {
        power = power.matmul(a)?;
        let denom = rho.powi(t as i32);
        if denom > 0.0 {
            psi = psi.max(numerics::operator_norm(&power)? / denom);
        }
    }
    Ok(psi)
}

/// Empirical stability constant `max_{0≤t≤horizon} ‖Aᵗ‖₂ / ρᵗ`; zero-ρ terms beyond `t = 0` are skipped.
pub fn estimate_psi(sys: &SystemMatrix, horizon: usize) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    psi_of(&sys.a, sys.rho, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_node_scale_targets() {
        let sys = generate_system(&SystemSpec {
            n: 10,
            rho_target: 0.75,
            opnorm_target: 1.5,
            seed: 42,
        })
        .unwrap();
        assert!((sys.rho - 0.75).abs() <= 1e-6, "{}", sys.rho);
        assert!((sys.opnorm - 1.5).abs() <= 1e-3, "{}", sys.opnorm);
        assert!(sys.psi >= 1.0);
    }

    #[test]
    fn scalar_system() {
        let sys = generate_system(&SystemSpec {
            n: 1,
            rho_target: 0.5,
            opnorm_target: 0.5,
            seed: 3,
        })
        .unwrap();
        assert_eq!(sys.a.entries()[0].abs(), 0.5);
        let bad = SystemSpec {
            n: 1,
            rho_target: 0.5,
            opnorm_target: 0.6,
            seed: 3,
        };
        assert!(generate_system(&bad).is_err());
    }

    #[test]
    fn equal_targets_give_normal_matrix() {
        let sys = generate_system(&SystemSpec {
            n: 3,
            rho_target: 0.9,
            opnorm_target: 0.9,
            seed: 8,
        })
        .unwrap();
        assert!((sys.rho - 0.9).abs() < 1e-9);
        assert!((sys.opnorm - 0.9).abs() < 1e-9);
        // A Aᵀ = Aᵀ A for an orthogonally diagonalisable matrix
        let aat = sys.a.matmul(&sys.a.transpose()).unwrap();
        let ata = sys.a.transpose().matmul(&sys.a).unwrap();
        assert!(aat.sub(&ata).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn invalid_specs_rejected() {
        for (rho, op) in [(1.0, 1.5), (0.0, 1.0), (0.8, 0.5)] {
            let spec = SystemSpec {
                n: 3,
                rho_target: rho,
                opnorm_target: op,
                seed: 0,
            };
            assert!(matches!(generate_system(&spec), Err(Error::InvalidParameter(_))));
        }
    }

    #[test]
    fn psi_examples() {
        let diag = SystemMatrix::from_matrix(Matrix::diag(&[0.5])).unwrap();
        assert!((estimate_psi(&diag, 10).unwrap() - 1.0).abs() < 1e-12);

        let jordan = SystemMatrix::from_matrix(Matrix::new(2, 2, vec![0.5, 10.0, 0.0, 0.5]).unwrap()).unwrap();
        // ‖A‖₂/ρ alone already exceeds 1
        let psi = estimate_psi(&jordan, 20).unwrap();
        let first = numerics::operator_norm(&jordan.a).unwrap() / 0.5;
        assert!(psi >= first && psi > 1.0);

        let zero = SystemMatrix::from_matrix(Matrix::zeros(2, 2)).unwrap();
        assert_eq!(estimate_psi(&zero, 5).unwrap(), 1.0);
    }

    #[test]
    fn json_layout() {
        let sys = SystemMatrix::from_matrix(Matrix::diag(&[0.5, 0.25])).unwrap();
        let v: serde_json::Value = serde_json::to_value(&sys).unwrap();
        assert_eq!(v["n"], 2);
        assert_eq!(v["entries"].as_array().unwrap().len(), 4);
        let back: SystemMatrix = serde_json::from_value(v).unwrap();
        assert_eq!(back, sys);
    }
}
