//! Deterministic random streams keyed by (master seed, path index, driver).
//!
//! Every stochastic driver of a path (Brownian increments, Poisson counts,
//! jump marks, each switching clock, thinning uniforms, ...) draws from its
//! own stream. Streams are derived purely from the key, so results are
//! independent of scheduling and worker count, and the two switching
//! constructions can share noise where that is meaningful.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Stochastic drivers of a single path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Driver {
    /// Brownian increments.
    Wiener,
    /// Poisson random measure event counts and times.
    LevyCounts,
    /// Poisson random measure marks.
    LevyMarks,
    /// Gaussian surrogate for sub-threshold jumps.
    SmallJumpSurrogate,
    /// Monte Carlo quadrature draws consumed during a path.
    Quadrature,
    /// Uniforms used by thinning acceptance.
    Thinning,
    /// Dominating exponential clock of the pair (i, j), 1-based labels.
    SwitchClock { from: u32, to: u32 },
}

impl Driver {
    fn id(self) -> u64 {
        match self {
            Driver::Wiener => 0,
            Driver::LevyCounts => 1,
            Driver::LevyMarks => 2,
            Driver::SmallJumpSurrogate => 3,
            Driver::Quadrature => 4,
            Driver::Thinning => 5,
            // pairs start high enough to never collide with fixed drivers
            Driver::SwitchClock { from, to } => 16 + (from as u64) * 4096 + to as u64,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// A single deterministic random stream.
#[derive(Debug, Clone)]
pub struct Stream(ChaCha12Rng);

impl Stream {
    /// Stream for `driver` of path `path_index` under `master_seed`.
    pub fn derive(master_seed: u64, path_index: u64, driver: Driver) -> Self {
        let mut state = master_seed ^ 0x243f6a8885a308d3;
        let mut seed = [0u8; 32];
        // fold the full key into the splitmix chain before extracting
        let _ = splitmix64(&mut state);
        state ^= path_index.wrapping_mul(0xd1342543de82ef95);
        let _ = splitmix64(&mut state);
        state ^= driver.id().wrapping_mul(0xaf251af3b0f025b5);
        for chunk in seed.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Stream(ChaCha12Rng::from_seed(seed))
    }

    /// Uniform on (0, 1), never exactly 0 (safe for logs and inversions).
    pub fn uniform(&mut self) -> f64 {
        loop {
            let u: f64 = self.0.gen();
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Uniform on (lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.0.sample(rand_distr::StandardNormal)
    }

    /// Exponential with the given rate (mean 1/rate). Rate must be > 0.
    pub fn exponential(&mut self, rate: f64) -> f64 {
        debug_assert!(rate > 0.0);
        -self.uniform().ln() / rate
    }

    /// Poisson count with the given mean.
    pub fn poisson(&mut self, mean: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        let d = rand_distr::Poisson::new(mean).expect("valid Poisson mean");
        self.0.sample(d) as u64
    }
}

impl RngCore for Stream {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.0.try_fill_bytes(dest)
    }
}
