//! Counter-based random streams.
//!
//! Every draw is a pure function of `(seed, purpose, a, b, k)`:
//!
//! ```text
//! key   = mix64(mix64(seed ^ PURPOSE_SALT[purpose]) ^ a·G1 ^ b·G2)
//! draw  = mix64(key + k·G0)
//! ```
//!
//! where `mix64` is the SplitMix64 finalizer and `G0`, `G1`, `G2` are odd
//! 64-bit constants. Simulation draws noise for `(t, i)` from the `Noise`
//! purpose and attack indicators from the `Schedule` purpose, so changing one
//! consumer never shifts another consumer's values.

/// Golden-ratio increment of SplitMix64.
const G0: u64 = 0x9E37_79B9_7F4A_7C15;
const G1: u64 = 0xD1B5_4A32_D192_ED03;
const G2: u64 = 0xAEF1_7502_108E_F2D9;

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Consumers of randomness; each owns a disjoint family of streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    SystemOrthogonal,
    SystemDiagonal,
    SystemNilpotent,
    SystemRetry,
    InitialState,
    Noise,
    Schedule,
    AttackMagnitude,
    Trial,
    Test,
}

impl Purpose {
    fn salt(self) -> u64 {
        match self {
            Purpose::SystemOrthogonal => 0x0001_5EED_0000_0001,
            Purpose::SystemDiagonal => 0x0001_5EED_0000_0002,
            Purpose::SystemNilpotent => 0x0001_5EED_0000_0003,
            Purpose::SystemRetry => 0x0001_5EED_0000_0004,
            Purpose::InitialState => 0x0002_5EED_0000_0001,
            Purpose::Noise => 0x0002_5EED_0000_0002,
            Purpose::Schedule => 0x0002_5EED_0000_0003,
            Purpose::AttackMagnitude => 0x0002_5EED_0000_0004,
            Purpose::Trial => 0x0003_5EED_0000_0001,
            Purpose::Test => 0x00FF_5EED_0000_0001,
        }
    }
}

/// Derives the key of the stream `(seed, purpose, a, b)`.
pub fn stream_key(seed: u64, purpose: Purpose, a: u64, b: u64) -> u64 {
    mix64(mix64(seed ^ purpose.salt()) ^ a.wrapping_mul(G1) ^ b.wrapping_mul(G2))
}

/// Uniform in the open interval (0, 1) from 64 random bits.
pub fn to_open_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) / (1u64 << 52) as f64
}

/// Sequential reader over one counter-based stream.
#[derive(Debug, Clone)]
pub struct Stream {
    key: u64,
    counter: u64,
}

impl Stream {
    pub fn new(seed: u64, purpose: Purpose) -> Self {
        Self::at(seed, purpose, 0, 0)
    }

    pub fn at(seed: u64, purpose: Purpose, a: u64, b: u64) -> Self {
        Stream {
            key: stream_key(seed, purpose, a, b),
            counter: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let out = mix64(self.key.wrapping_add(self.counter.wrapping_mul(G0)));
        self.counter += 1;
        out
    }

    /// Uniform on (0, 1).
    pub fn next_uniform(&mut self) -> f64 {
        to_open_unit(self.next_u64())
    }

    /// Uniform on (lo, hi).
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_uniform()
    }

    /// Standard normal by Box–Muller (cosine branch; two draws per sample).
    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_uniform();
        let u2 = self.next_uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn next_bernoulli(&mut self, p: f64) -> bool {
        self.next_uniform() < p
    }

    /// Uniformly random sign.
    pub fn next_sign(&mut self) -> f64 {
        if self.next_u64() >> 63 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Seed of trial `trial` at trajectory length `t_len` under `base_seed`.
pub fn trial_seed(base_seed: u64, t_len: u64, trial: u64) -> u64 {
    stream_key(base_seed, Purpose::Trial, t_len, trial)
}
