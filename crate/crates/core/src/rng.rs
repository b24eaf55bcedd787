//! Counter-based randomness.
//!
//! Every random draw in the crate comes from a stream addressed by
//! `(seed, replicate, t, m, purpose)`. The stream is a ChaCha8 generator whose
//! 256-bit key is derived from `(seed, purpose, replicate)` and whose 64-bit
//! stream id is `(t << 32) | m`, so a draw never depends on which worker
//! evaluates it or in what order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FedSeaError, Result};
use crate::vector::Vector;

/// What a stream is used for. Distinct purposes never share samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    /// Client observations `ξ_{t,m}` inside the engine.
    Data,
    /// Frozen samples backing Monte Carlo expected losses.
    Oracle,
    /// Resampling inside lemma audits.
    Audit,
    /// Brute-force cross-checks (boundary sampling, random probes).
    Probe,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Data => 0x6461_7461,
            Purpose::Oracle => 0x6f72_6163,
            Purpose::Audit => 0x6175_6469,
            Purpose::Probe => 0x7072_6f62,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub replicate: u64,
    pub t: u64,
    pub m: u64,
    pub purpose: Purpose,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl StreamKey {
    pub fn new(seed: u64, replicate: u64, t: u64, m: u64, purpose: Purpose) -> Self {
        Self {
            seed,
            replicate,
            t,
            m,
            purpose,
        }
    }

    /// Fresh generator positioned at the start of this key's stream.
    pub fn stream(&self) -> SampleStream {
        assert!(
            self.t < (1 << 32) && self.m < (1 << 32),
            "stream coordinates must fit in 32 bits"
        );
        let mut state = self.seed ^ self.purpose.tag().rotate_left(17);
        let salt = splitmix64(&mut state);
        state ^= self.replicate.wrapping_mul(0xd1b5_4a32_d192_ed03) ^ salt;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream((self.t << 32) | self.m);
        SampleStream { rng }
    }
}

/// Sequential draws from one keyed stream.
pub struct SampleStream {
    rng: ChaCha8Rng,
}

impl SampleStream {
    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniformly distributed point on the sphere of the given radius.
    pub fn on_sphere(&mut self, dim: usize, radius: f64) -> Vector {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| self.standard_normal()).collect();
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n > 1e-300 {
                return Vector::from_raw(v.into_iter().map(|a| a * radius / n).collect());
            }
        }
    }
}

/// Parametric data distributions the adversary may select.
///
/// `variance` is the total trace `E‖ξ − mean‖²`, spread isotropically over
/// the coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistParams {
    PointMass { at: Vector },
    Gaussian { mean: Vector, variance: f64 },
}

impl DistParams {
    pub fn mean(&self) -> &Vector {
        match self {
            DistParams::PointMass { at } => at,
            DistParams::Gaussian { mean, .. } => mean,
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            DistParams::PointMass { .. } => 0.0,
            DistParams::Gaussian { variance, .. } => *variance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let DistParams::Gaussian { variance, .. } = self {
            if !(variance.is_finite() && *variance >= 0.0) {
                return Err(FedSeaError::UnsupportedDistribution(format!(
                    "Gaussian variance must be finite and non-negative, got {variance}"
                )));
            }
        }
        Ok(())
    }
}

/// Draws one vector from `dist` using the next values of `stream`.
pub fn sample_with(stream: &mut SampleStream, dist: &DistParams) -> Result<Vector> {
    dist.validate()?;
    match dist {
        DistParams::PointMass { at } => Ok(at.clone()),
        DistParams::Gaussian { mean, variance } => {
            let scale = (variance / mean.dim() as f64).sqrt();
            Ok(Vector::from_raw(
                mean.as_slice()
                    .iter()
                    .map(|mu| mu + scale * stream.standard_normal())
                    .collect(),
            ))
        }
    }
}

/// Draws the first vector of the stream addressed by `key`.
pub fn sample(key: &StreamKey, dist: &DistParams) -> Result<Vector> {
    sample_with(&mut key.stream(), dist)
}
