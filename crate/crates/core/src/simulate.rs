//! Single-trajectory simulation of `x_{t+1} = A x_t + w_t + v_t` with full ground truth.
//!
//! Randomness is counter-based (see [`crate::rng`]): the noise entry `w_t^{(i)}`
//! is drawn from stream `(seed, Noise, t, i)`, the attack indicator
//! `ξ_t^{(i)}` from `(seed, Schedule, t, i)` and `x_0^{(i)}` from
//! `(seed, InitialState, 0, i)`. The noise realization therefore does not
//! depend on the attack strategy.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Vector;
use crate::rng::{Purpose, Stream};
use crate::sysgen::SystemMatrix;

/// Any state entry with magnitude above this aborts the simulation.
pub const STATE_LIMIT: f64 = 1e150;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    UniformBounded,
}

/// Zero-mean i.i.d. process noise. `sigma_w` is the standard deviation for
/// Gaussian noise and the half-width for bounded uniform noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub sigma_w: f64,
}

impl NoiseModel {
    pub fn gaussian(sigma_w: f64) -> Self {
        NoiseModel {
            kind: NoiseKind::Gaussian,
            sigma_w,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_w > 0.0 && self.sigma_w.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise scale must be positive, got {}",
                self.sigma_w
            )));
        }
        Ok(())
    }

    fn draw(&self, seed: u64, t: usize, i: usize) -> f64 {
        let mut s = Stream::at(seed, Purpose::Noise, t as u64, i as u64);
        match self.kind {
            NoiseKind::Gaussian => self.sigma_w * s.next_normal(),
            NoiseKind::UniformBounded => self.sigma_w * (2.0 * s.next_uniform() - 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackKind {
    None,
    /// `v_t^{(i)} = c · x_t^{(i)}` on every attacked `(t, i)`.
    ScaledState { c: f64 },
    /// `v_t = c̄ · x_t / ‖x_t‖₂` on odd `t` when every node is attacked at once, else zero.
    MisleadingAlternating { c_bar: f64 },
    /// `v_t^{(i)} = mu` on every attacked `(t, i)`.
    FixedOffset { mu: f64 },
}

/// Adversary: which corruption is injected, and the per-node attack probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackStrategy {
    #[serde(flatten)]
    pub kind: AttackKind,
    pub p: f64,
}

impl AttackStrategy {
    pub fn none() -> Self {
        AttackStrategy {
            kind: AttackKind::None,
            p: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.p) {
            return Err(Error::InvalidParameter(format!(
                "attack probability must lie in [0, 0.5), got {}",
                self.p
            )));
        }
        let ok = match self.kind {
            AttackKind::None => true,
            AttackKind::ScaledState { c } => c.is_finite(),
            AttackKind::MisleadingAlternating { c_bar } => c_bar.is_finite() && c_bar >= 0.0,
            AttackKind::FixedOffset { mu } => mu.is_finite(),
        };
        if !ok {
            return Err(Error::InvalidParameter(format!("invalid attack parameters {:?}", self.kind)));
        }
        Ok(())
    }
}

/// Attack indicators `ξ_t^{(i)}`, indexed `[t][i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttackSchedule {
    pub xi: Vec<Vec<bool>>,
}

impl AttackSchedule {
    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    pub fn attacked(&self, t: usize, i: usize) -> bool {
        self.xi[t][i]
    }

    pub fn nodes(&self) -> usize {
        self.xi.first().map_or(0, Vec::len)
    }
}

/// A simulated trajectory with every random quantity that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub system: SystemMatrix,
    pub seed: u64,
    pub states: Vec<Vector>,
    pub noise: Vec<Vector>,
    pub attacks: Vec<Vector>,
    pub schedule: AttackSchedule,
    /// Largest `|v_t^{(i)}|` realised, a diagnostic for state-dependent attacks.
    pub max_abs_attack: f64,
}

impl TrajectoryRecord {
    /// Trajectory length `T` (number of transitions).
    pub fn len(&self) -> usize {
        self.noise.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noise.is_empty()
    }

    pub fn n(&self) -> usize {
        self.system.n()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rec: TrajectoryRecord = serde_json::from_str(s)?;
        rec.check_shapes()?;
        Ok(rec)
    }

    fn check_shapes(&self) -> Result<()> {
        let n = self.n();
        let t_len = self.noise.len();
        let lens_ok = self.states.len() == t_len + 1
            && self.attacks.len() == t_len
            && self.schedule.len() == t_len;
        if !lens_ok {
            return Err(Error::Format("trajectory arrays have inconsistent lengths".into()));
        }
        let dims_ok = self.states.iter().all(|v| v.dim() == n)
            && self.noise.iter().all(|v| v.dim() == n)
            && self.attacks.iter().all(|v| v.dim() == n)
            && self.schedule.xi.iter().all(|r| r.len() == n);
        if !dims_ok {
            return Err(Error::Format("trajectory vectors do not match the system dimension".into()));
        }
        Ok(())
    }

    /// Writes the compact CSV form: `#`-prefixed metadata lines, then one row per `t`
    /// with columns `t, x0..x{n-1}, w0.., v0.., xi0..`. The final row `t = T`
    /// carries only the state.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.n();
        writeln!(out, "# sysid-trajectory v1")?;
        writeln!(out, "# seed={}", self.seed)?;
        writeln!(out, "# max_abs_attack={}", self.max_abs_attack)?;
        writeln!(out, "# system={}", serde_json::to_string(&self.system)?)?;
        let mut header = vec!["t".to_string()];
        for prefix in ["x", "w", "v", "xi"] {
            header.extend((0..n).map(|i| format!("{prefix}{i}")));
        }
        writeln!(out, "{}", header.join(","))?;
        let t_len = self.len();
        for t in 0..=t_len {
            let mut row = vec![t.to_string()];
            row.extend(self.states[t].iter().map(|v| v.to_string()));
            if t < t_len {
                row.extend(self.noise[t].iter().map(|v| v.to_string()));
                row.extend(self.attacks[t].iter().map(|v| v.to_string()));
                row.extend(self.schedule.xi[t].iter().map(|&b| u8::from(b).to_string()));
            } else {
                row.extend(std::iter::repeat_n(String::new(), 3 * n));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut seed = None;
        let mut system: Option<SystemMatrix> = None;
        let mut max_abs_attack = 0.0;
        let mut body = String::new();
        for line in input.lines() {
            let line = line?;
            if let Some(meta) = line.strip_prefix('#') {
                let meta = meta.trim();
                if let Some(v) = meta.strip_prefix("seed=") {
                    seed = Some(v.parse().map_err(|_| Error::Format("bad seed".into()))?);
                } else if let Some(v) = meta.strip_prefix("max_abs_attack=") {
                    max_abs_attack = v.parse().map_err(|_| Error::Format("bad max_abs_attack".into()))?;
                } else if let Some(v) = meta.strip_prefix("system=") {
                    system = Some(serde_json::from_str(v)?);
                }
            } else {
                body.push_str(&line);
                body.push('\n');
            }
        }
        let system = system.ok_or_else(|| Error::Format("missing system metadata".into()))?;
        let seed = seed.ok_or_else(|| Error::Format("missing seed metadata".into()))?;
        let n = system.n();
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Format(format!("bad number {s:?}")))
        };
        let (mut states, mut noise, mut attacks, mut xi) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 1 + 4 * n {
                return Err(Error::Format(format!("expected {} columns, found {}", 1 + 4 * n, rec.len())));
            }
            states.push(Vector((1..=n).map(|k| parse(&rec[k])).collect::<Result<_>>()?));
            if rec[n + 1].is_empty() {
                continue;
            }
            noise.push(Vector((n + 1..=2 * n).map(|k| parse(&rec[k])).collect::<Result<_>>()?));
            attacks.push(Vector((2 * n + 1..=3 * n).map(|k| parse(&rec[k])).collect::<Result<_>>()?));
            xi.push((3 * n + 1..=4 * n).map(|k| &rec[k] == "1").collect());
        }
        let out = TrajectoryRecord {
            system,
            seed,
            states,
            noise,
            attacks,
            schedule: AttackSchedule { xi },
            max_abs_attack,
        };
        out.check_shapes()?;
        Ok(out)
    }
}

/// Attack indicators of time step `t`: independent Bernoulli(p) per node.
pub fn schedule_row(seed: u64, t: usize, n: usize, p: f64) -> Vec<bool> {
    (0..n)
        .map(|i| Stream::at(seed, Purpose::Schedule, t as u64, i as u64).next_bernoulli(p))
        .collect()
}

/// The indicator draws `simulate` uses for an attacked run, without the dynamics.
pub fn draw_schedule(seed: u64, t_len: usize, n: usize, p: f64) -> AttackSchedule {
    AttackSchedule {
        xi: (0..t_len).map(|t| schedule_row(seed, t, n, p)).collect(),
    }
}

/// Zero-mean Gaussian initial state with per-coordinate standard deviation `sigma`.
pub fn default_x0(n: usize, sigma: f64, seed: u64) -> Vector {
    Vector(
        (0..n)
            .map(|i| sigma * Stream::at(seed, Purpose::InitialState, 0, i as u64).next_normal())
            .collect(),
    )
}

/// Simulates `t_len` transitions. Without `x0`, the initial state is
/// [`default_x0`] with `sigma = noise.sigma_w`.
pub fn simulate(
    sys: &SystemMatrix,
    t_len: usize,
    noise: &NoiseModel,
    attack: &AttackStrategy,
    x0: Option<Vector>,
    seed: u64,
) -> Result<TrajectoryRecord> {
    let n = sys.n();
    if t_len == 0 {
        return Err(Error::InvalidParameter("trajectory length must be at least 1".into()));
    }
    noise.validate()?;
    attack.validate()?;
    let x0 = x0.unwrap_or_else(|| default_x0(n, noise.sigma_w, seed));
    if x0.dim() != n {
        return Err(Error::DimensionMismatch {
            context: "initial state",
            expected: n,
            found: x0.dim(),
        });
    }
    if !x0.is_finite() {
        return Err(Error::InvalidParameter("initial state must be finite".into()));
    }

    let mut states = Vec::with_capacity(t_len + 1);
    let mut noises = Vec::with_capacity(t_len);
    let mut attacks = Vec::with_capacity(t_len);
    let mut xi_all = Vec::with_capacity(t_len);
    let mut max_abs_attack = 0.0f64;
    states.push(x0);

    for t in 0..t_len {
        let x = &states[t];
        let w: Vec<f64> = (0..n).map(|i| noise.draw(seed, t, i)).collect();
        let xi: Vec<bool> = match attack.kind {
            AttackKind::None => vec![false; n],
            _ => schedule_row(seed, t, n, attack.p),
        };
        let v: Vec<f64> = match attack.kind {
            AttackKind::None => vec![0.0; n],
            AttackKind::ScaledState { c } => (0..n).map(|i| if xi[i] { c * x[i] } else { 0.0 }).collect(),
            AttackKind::FixedOffset { mu } => (0..n).map(|i| if xi[i] { mu } else { 0.0 }).collect(),
            AttackKind::MisleadingAlternating { c_bar } => {
                let norm = x.norm();
                if t % 2 == 1 && xi.iter().all(|&b| b) && norm > 0.0 {
                    x.iter().map(|xi| c_bar * xi / norm).collect()
                } else {
                    vec![0.0; n]
                }
            }
        };
        let ax = sys.a.matvec(x)?;
        let next: Vec<f64> = (0..n).map(|i| ax[i] + w[i] + v[i]).collect();
        if next.iter().any(|e| !e.is_finite() || e.abs() > STATE_LIMIT) {
            return Err(Error::NonFiniteState { t: t + 1 });
        }
        max_abs_attack = v.iter().fold(max_abs_attack, |m, e| m.max(e.abs()));
        states.push(Vector(next));
        noises.push(Vector(w));
        attacks.push(Vector(v));
        xi_all.push(xi);
    }

    Ok(TrajectoryRecord {
        system: sys.clone(),
        seed,
        states,
        noise: noises,
        attacks,
        schedule: AttackSchedule { xi: xi_all },
        max_abs_attack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;
    use crate::sysgen::{generate_system, SystemSpec};

    fn small_system() -> SystemMatrix {
        generate_system(&SystemSpec {
            n: 3,
            rho_target: 0.6,
            opnorm_target: 1.1,
            seed: 5,
        })
        .unwrap()
    }

    #[test]
    fn zero_dynamics_without_noise_decay_immediately() {
        let sys = SystemMatrix::from_matrix(Matrix::zeros(2, 2)).unwrap();
        let noise = NoiseModel {
            kind: NoiseKind::UniformBounded,
            sigma_w: 1e-300,
        };
        let rec = simulate(&sys, 4, &noise, &AttackStrategy::none(), Some(Vector(vec![1.0, 0.0])), 1).unwrap();
        assert_eq!(rec.states[0].0, vec![1.0, 0.0]);
        for x in &rec.states[1..] {
            assert!(x.iter().all(|v| v.abs() <= 1e-300));
        }
    }

    #[test]
    fn no_attack_means_empty_schedule() {
        let rec = simulate(&small_system(), 50, &NoiseModel::gaussian(1.0), &AttackStrategy::none(), None, 2).unwrap();
        assert!(rec.attacks.iter().all(|v| v.iter().all(|&e| e == 0.0)));
        assert!(rec.schedule.xi.iter().flatten().all(|&b| !b));
    }

    #[test]
    fn unstable_configuration_fails_fast() {
        let sys = small_system();
        let attack = AttackStrategy {
            kind: AttackKind::ScaledState { c: 30.0 },
            p: 0.4,
        };
        let err = simulate(&sys, 5000, &NoiseModel::gaussian(3.0), &attack, None, 3).unwrap_err();
        assert!(matches!(err, Error::NonFiniteState { .. }));
    }

    #[test]
    fn misleading_attack_only_on_odd_full_attacks() {
        let sys = SystemMatrix::from_matrix(Matrix::zeros(2, 2)).unwrap();
        let attack = AttackStrategy {
            kind: AttackKind::MisleadingAlternating { c_bar: 90.0 },
            p: 0.45,
        };
        let rec = simulate(&sys, 2000, &NoiseModel::gaussian(3.0), &attack, None, 4).unwrap();
        let mut fired = 0;
        for t in 0..rec.len() {
            let all = rec.schedule.xi[t].iter().all(|&b| b);
            let v = &rec.attacks[t];
            if t % 2 == 1 && all {
                fired += 1;
                assert!((v.norm() - 90.0).abs() < 1e-9);
            } else {
                assert!(v.iter().all(|&e| e == 0.0));
            }
        }
        // p² / 2 ≈ 10% of steps
        assert!(fired > 100 && fired < 310, "{fired}");
    }

    #[test]
    fn bad_parameters_rejected() {
        let sys = small_system();
        let noise = NoiseModel::gaussian(1.0);
        let half = AttackStrategy {
            kind: AttackKind::FixedOffset { mu: 1.0 },
            p: 0.5,
        };
        assert!(simulate(&sys, 10, &noise, &half, None, 0).is_err());
        assert!(simulate(&sys, 0, &noise, &AttackStrategy::none(), None, 0).is_err());
        assert!(matches!(
            simulate(&sys, 10, &noise, &AttackStrategy::none(), Some(Vector(vec![0.0; 2])), 0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(simulate(&sys, 10, &NoiseModel::gaussian(0.0), &AttackStrategy::none(), None, 0).is_err());
    }

    #[test]
    fn default_x0_examples() {
        assert!(default_x0(3, 0.0, 9).iter().all(|&v| v == 0.0));
        assert_eq!(default_x0(4, 1.0, 9), default_x0(4, 1.0, 9));
        let big = default_x0(10_000, 1.0, 17);
        let mean = big.iter().sum::<f64>() / 1e4;
        let std = (big.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1e4).sqrt();
        assert!((0.97..=1.03).contains(&std), "{std}");
    }

    #[test]
    fn preset_attack_frequency() {
        let sched = draw_schedule(2024, 10_000, 10, 0.4);
        for i in 0..10 {
            let freq = (0..10_000).filter(|&t| sched.attacked(t, i)).count() as f64 / 1e4;
            assert!((0.37..=0.43).contains(&freq), "node {i}: {freq}");
        }
    }

    #[test]
    fn csv_and_json_round_trip() {
        let attack = AttackStrategy {
            kind: AttackKind::FixedOffset { mu: 4.5 },
            p: 0.3,
        };
        let rec = simulate(&small_system(), 40, &NoiseModel::gaussian(1.0), &attack, None, 6).unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let back = TrajectoryRecord::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, rec);
        let back = TrajectoryRecord::from_json(&rec.to_json().unwrap()).unwrap();
        assert_eq!(back, rec);
    }
}
