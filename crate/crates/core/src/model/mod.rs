//! Model data types: regimes, Lévy measures, coefficients, and the full
//! model specification, together with generator and characteristics
//! evaluation and probe-based assumption checks.

mod characteristics;
mod generator;
mod testfn;
mod validate;

pub use characteristics::{compute_characteristics, CharacteristicsTriplet, JumpAtom, PushforwardPart};
pub use generator::{evaluate_generator, GeneratorEvaluation, GeneratorScratch};
pub use testfn::{standard_suite, TestFunction};
pub use validate::{validate_model, FittedConstant, ProbeBox, ProbeConfig, ValidationReport};

use crate::error::{Result, SimError};
use crate::rng::Stream;
use std::fmt;
use std::sync::Arc;

/// Regime label, 1-based as in the index set {1, ..., K}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Regime(pub u32);

impl Regime {
    /// Zero-based index for table lookups.
    pub fn index(self) -> usize {
        (self.0 - 1) as usize
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The finite set of regimes {1, ..., K}.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegimeSet {
    count: u32,
}

impl RegimeSet {
    pub fn new(count: u32) -> Result<Self> {
        if count == 0 {
            return Err(SimError::InvalidArgument("regime count must be >= 1".into()));
        }
        Ok(RegimeSet { count })
    }

    pub fn count(&self) -> u32 {
        self.count
    }

    pub fn contains(&self, c: Regime) -> bool {
        c.0 >= 1 && c.0 <= self.count
    }

    pub fn iter(&self) -> impl Iterator<Item = Regime> {
        (1..=self.count).map(Regime)
    }
}

/// Sampler writing one mark into `out`; marks live in R^n.
pub type MarkSampler = Arc<dyn Fn(&mut Stream, &mut [f64]) + Send + Sync>;

/// A finite-intensity jump-mark measure (not normalized): either a list of
/// atoms or a black-box sampler with a declared total mass.
#[derive(Clone)]
pub enum MarkMeasure {
    /// nu = sum of `mass`-weighted Dirac atoms; all integrals are exact sums.
    Atoms(Vec<(f64, Vec<f64>)>),
    /// nu = total_rate * law(sampler); integrals fall back to Monte Carlo.
    Sampled { total_rate: f64, sampler: MarkSampler },
}

impl fmt::Debug for MarkMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MarkMeasure::Atoms(atoms) => f.debug_tuple("Atoms").field(&atoms.len()).finish(),
            MarkMeasure::Sampled { total_rate, .. } => {
                f.debug_struct("Sampled").field("total_rate", total_rate).finish()
            }
        }
    }
}

impl MarkMeasure {
    pub fn total_rate(&self) -> f64 {
        match self {
            MarkMeasure::Atoms(atoms) => atoms.iter().map(|(m, _)| m).sum(),
            MarkMeasure::Sampled { total_rate, .. } => *total_rate,
        }
    }

    /// Draw a mark from the normalized measure.
    pub fn sample_mark(&self, rng: &mut Stream, out: &mut [f64]) {
        match self {
            MarkMeasure::Atoms(atoms) => {
                let total = self.total_rate();
                let mut u = rng.uniform() * total;
                for (mass, mark) in atoms {
                    u -= mass;
                    if u <= 0.0 {
                        out.copy_from_slice(mark);
                        return;
                    }
                }
                // numerical leftover lands on the last atom
                out.copy_from_slice(&atoms[atoms.len() - 1].1);
            }
            MarkMeasure::Sampled { sampler, .. } => sampler(rng, out),
        }
    }
}

/// Description of the Lévy measure driving the Poisson random measure.
#[derive(Clone, Debug)]
pub enum LevyKind {
    /// No Poisson random measure at all.
    None,
    /// Finite-activity measure; every jump is an explicit event.
    CompoundPoisson(MarkMeasure),
    /// Infinite-activity measure approximated by a finite-activity part
    /// beyond `epsilon` plus a moment-matched Gaussian surrogate below it.
    TruncatedInfiniteActivity {
        /// Finite-activity part of nu restricted to ||x|| > epsilon.
        big_part: MarkMeasure,
        /// Covariance integral over the sub-epsilon band: int xx^T nu(dx),
        /// row-major n x n. Supplied, not computed.
        small_part_variance: Vec<f64>,
        epsilon: f64,
    },
}

/// Lévy measure plus the truncation level `a` that splits compensated small
/// jumps from uncompensated big ones.
#[derive(Clone, Debug)]
pub struct LevySpec {
    pub kind: LevyKind,
    /// Mark dimension n.
    pub dim: usize,
    /// Truncation level a > 0.
    pub truncation: f64,
}

impl LevySpec {
    pub fn none(dim: usize) -> Self {
        LevySpec { kind: LevyKind::None, dim, truncation: 1.0 }
    }

    pub fn compound_poisson(dim: usize, truncation: f64, measure: MarkMeasure) -> Result<Self> {
        let spec = LevySpec { kind: LevyKind::CompoundPoisson(measure), dim, truncation };
        spec.validate()?;
        Ok(spec)
    }

    pub fn truncated_infinite_activity(
        dim: usize,
        truncation: f64,
        big_part: MarkMeasure,
        small_part_variance: Vec<f64>,
        epsilon: f64,
    ) -> Result<Self> {
        let spec = LevySpec {
            kind: LevyKind::TruncatedInfiniteActivity { big_part, small_part_variance, epsilon },
            dim,
            truncation,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Integrability and internal consistency checks.
    pub fn validate(&self) -> Result<()> {
        if self.truncation <= 0.0 {
            return Err(SimError::InvalidArgument("truncation level a must be > 0".into()));
        }
        match &self.kind {
            LevyKind::None => Ok(()),
            LevyKind::CompoundPoisson(m) => {
                let rate = m.total_rate();
                if !rate.is_finite() || rate < 0.0 {
                    return Err(SimError::InvalidArgument(format!(
                        "compound Poisson total rate must be finite and >= 0, got {rate}"
                    )));
                }
                if let MarkMeasure::Atoms(atoms) = m {
                    for (mass, mark) in atoms {
                        if *mass < 0.0 || !mass.is_finite() {
                            return Err(SimError::InvalidArgument("atom masses must be finite and >= 0".into()));
                        }
                        if mark.len() != self.dim {
                            return Err(SimError::InvalidArgument("atom mark dimension mismatch".into()));
                        }
                    }
                }
                Ok(())
            }
            LevyKind::TruncatedInfiniteActivity { big_part, small_part_variance, epsilon } => {
                if *epsilon <= 0.0 || *epsilon >= self.truncation {
                    return Err(SimError::InvalidArgument(
                        "truncated measure requires 0 < epsilon < a".into(),
                    ));
                }
                if small_part_variance.len() != self.dim * self.dim {
                    return Err(SimError::InvalidArgument("small_part_variance must be n x n".into()));
                }
                if let MarkMeasure::Atoms(atoms) = big_part {
                    for (_, mark) in atoms {
                        if norm2(mark) <= *epsilon {
                            return Err(SimError::SamplerContract(format!(
                                "big-part atom inside the epsilon ball: |x|={}",
                                norm2(mark)
                            )));
                        }
                    }
                }
                let rate = big_part.total_rate();
                if !rate.is_finite() || rate < 0.0 {
                    return Err(SimError::InvalidArgument("big-part total rate must be finite".into()));
                }
                Ok(())
            }
        }
    }

    /// The finite-activity measure whose jumps become explicit events.
    pub fn event_measure(&self) -> Option<&MarkMeasure> {
        match &self.kind {
            LevyKind::None => None,
            LevyKind::CompoundPoisson(m) => Some(m),
            LevyKind::TruncatedInfiniteActivity { big_part, .. } => Some(big_part),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self.kind, LevyKind::None)
    }
}

/// Drift mu(t, y, c), written into a d-buffer.
pub type DriftFn = Arc<dyn Fn(f64, &[f64], Regime, &mut [f64]) + Send + Sync>;
/// Diffusion sigma(t, y, c), written row-major into a d*p buffer.
pub type DiffusionFn = Arc<dyn Fn(f64, &[f64], Regime, &mut [f64]) + Send + Sync>;
/// Jump coefficient F(t, y, c, x), written into a d-buffer.
pub type JumpFn = Arc<dyn Fn(f64, &[f64], Regime, &[f64], &mut [f64]) + Send + Sync>;
/// Switch shift rho^{i,j}(t, y), written into a d-buffer.
pub type SwitchShiftFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// Switching intensity lambda^{i,j}(t, y).
pub type IntensityFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// One active ordered regime pair (i, j): shift, intensity and its declared
/// finite upper bound b^{i,j} (the dominating rate).
#[derive(Clone)]
pub struct SwitchChannel {
    pub rho: SwitchShiftFn,
    pub lambda: IntensityFn,
    /// Declared bound: lambda(t, y) <= bound everywhere; checked on every
    /// evaluation, violation is a hard error.
    pub bound: f64,
}

/// Full coefficient set of the SDE.
#[derive(Clone)]
pub struct CoefficientSet {
    pub dim_y: usize,
    pub dim_w: usize,
    pub mu: DriftFn,
    pub sigma: DiffusionFn,
    pub jump: JumpFn,
    regimes: u32,
    // row-major K x K, diagonal and inactive pairs are None
    channels: Vec<Option<SwitchChannel>>,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("dim_y", &self.dim_y)
            .field("dim_w", &self.dim_w)
            .field("regimes", &self.regimes)
            .field("active_pairs", &self.active_pairs().count())
            .finish()
    }
}

impl CoefficientSet {
    pub fn new(dim_y: usize, dim_w: usize, regimes: u32, mu: DriftFn, sigma: DiffusionFn, jump: JumpFn) -> Self {
        CoefficientSet {
            dim_y,
            dim_w,
            mu,
            sigma,
            jump,
            regimes,
            channels: vec![None; (regimes * regimes) as usize],
        }
    }

    /// A coefficient set with no jumps and no switching (building block).
    pub fn diffusion_only(dim_y: usize, dim_w: usize, regimes: u32, mu: DriftFn, sigma: DiffusionFn) -> Self {
        let d = dim_y;
        Self::new(dim_y, dim_w, regimes, mu, sigma, Arc::new(move |_, _, _, _, out: &mut [f64]| {
            out[..d].fill(0.0);
        }))
    }

    pub fn set_channel(&mut self, from: Regime, to: Regime, channel: SwitchChannel) -> Result<()> {
        if from == to {
            return Err(SimError::InvalidArgument("switch channel requires from != to".into()));
        }
        if from.0 > self.regimes || to.0 > self.regimes || from.0 == 0 || to.0 == 0 {
            return Err(SimError::InvalidArgument("switch channel regime out of range".into()));
        }
        if !(channel.bound.is_finite() && channel.bound >= 0.0) {
            return Err(SimError::InvalidArgument("intensity bound must be finite and >= 0".into()));
        }
        let idx = from.index() * self.regimes as usize + to.index();
        self.channels[idx] = if channel.bound == 0.0 { None } else { Some(channel) };
        Ok(())
    }

    /// Active channel for (from, to); None encodes lambda == 0.
    pub fn channel(&self, from: Regime, to: Regime) -> Option<&SwitchChannel> {
        if from == to || from.0 == 0 || to.0 == 0 || from.0 > self.regimes || to.0 > self.regimes {
            return None;
        }
        self.channels[from.index() * self.regimes as usize + to.index()].as_ref()
    }

    /// All active ordered pairs.
    pub fn active_pairs(&self) -> impl Iterator<Item = (Regime, Regime, &SwitchChannel)> {
        let k = self.regimes as usize;
        self.channels.iter().enumerate().filter_map(move |(idx, ch)| {
            ch.as_ref().map(|ch| (Regime((idx / k) as u32 + 1), Regime((idx % k) as u32 + 1), ch))
        })
    }

    /// Evaluate lambda^{from,to} with the runtime bound check.
    pub fn lambda_checked(&self, from: Regime, to: Regime, t: f64, y: &[f64]) -> Result<f64> {
        match self.channel(from, to) {
            None => Ok(0.0),
            Some(ch) => {
                let v = (ch.lambda)(t, y);
                if !v.is_finite() {
                    return Err(SimError::ModelEvaluation { what: "lambda", t, y: y.to_vec(), c: from.0 });
                }
                if v < 0.0 || v > ch.bound {
                    return Err(SimError::BoundViolation {
                        from: from.0,
                        to: to.0,
                        t,
                        lambda: v,
                        bound: ch.bound,
                    });
                }
                Ok(v)
            }
        }
    }

    /// Total dominating rate leaving `from`.
    pub fn dominating_rate(&self, from: Regime) -> f64 {
        self.active_pairs()
            .filter(|(i, _, _)| *i == from)
            .map(|(_, _, ch)| ch.bound)
            .sum()
    }
}

/// Complete model: regimes, Lévy measure, coefficients, time window, start.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub regimes: RegimeSet,
    pub levy: LevySpec,
    pub coeffs: CoefficientSet,
    /// Horizon T.
    pub horizon: f64,
    /// Start time r in [0, T).
    pub start_time: f64,
    pub initial_y: Vec<f64>,
    pub initial_regime: Regime,
}

impl ModelSpec {
    pub fn new(
        regimes: RegimeSet,
        levy: LevySpec,
        coeffs: CoefficientSet,
        start_time: f64,
        horizon: f64,
        initial_y: Vec<f64>,
        initial_regime: Regime,
    ) -> Result<Self> {
        if !(start_time < horizon) {
            return Err(SimError::InvalidArgument(format!(
                "start time {start_time} must be < horizon {horizon}"
            )));
        }
        if !regimes.contains(initial_regime) {
            return Err(SimError::InvalidArgument("initial regime outside the regime set".into()));
        }
        if initial_y.len() != coeffs.dim_y {
            return Err(SimError::InvalidArgument("initial state dimension mismatch".into()));
        }
        levy.validate()?;
        Ok(ModelSpec { regimes, levy, coeffs, horizon, start_time, initial_y, initial_regime })
    }

    pub fn dim(&self) -> usize {
        self.coeffs.dim_y
    }
}

/// Tolerances for the Lévy integral quadrature in generator and
/// characteristics evaluation.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureConfig {
    pub mc_samples: usize,
    pub tol: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig { mc_samples: 4096, tol: 1e-2 }
    }
}

/// Truncation function of the semimartingale characteristics:
/// h(z) = z on {||z1|| + 2|z2| <= 1}, 0 elsewhere.
pub fn truncation_h(z1: &[f64], z2: f64) -> (Vec<f64>, f64) {
    if norm2(z1) + 2.0 * z2.abs() <= 1.0 {
        (z1.to_vec(), z2)
    } else {
        (vec![0.0; z1.len()], 0.0)
    }
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regime_set_rejects_empty() {
        assert!(RegimeSet::new(0).is_err());
        let ks = RegimeSet::new(3).unwrap();
        assert!(ks.contains(Regime(1)) && ks.contains(Regime(3)));
        assert!(!ks.contains(Regime(4)));
    }

    #[test]
    fn levy_spec_requires_epsilon_below_truncation() {
        let big = MarkMeasure::Atoms(vec![(1.0, vec![0.5])]);
        let err = LevySpec::truncated_infinite_activity(1, 0.2, big, vec![0.01], 0.3);
        assert!(err.is_err());
    }

    #[test]
    fn zero_bound_encodes_inactive_pair() {
        let mut coeffs = CoefficientSet::diffusion_only(
            1,
            1,
            2,
            Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)),
            Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)),
        );
        coeffs
            .set_channel(
                Regime(1),
                Regime(2),
                SwitchChannel {
                    rho: Arc::new(|_, _, out: &mut [f64]| out.fill(0.0)),
                    lambda: Arc::new(|_, _| 0.0),
                    bound: 0.0,
                },
            )
            .unwrap();
        assert!(coeffs.channel(Regime(1), Regime(2)).is_none());
        assert_eq!(coeffs.dominating_rate(Regime(1)), 0.0);
    }

    #[test]
    fn lambda_bound_violation_is_hard_error() {
        let mut coeffs = CoefficientSet::diffusion_only(
            1,
            1,
            2,
            Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)),
            Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)),
        );
        coeffs
            .set_channel(
                Regime(1),
                Regime(2),
                SwitchChannel {
                    rho: Arc::new(|_, _, out: &mut [f64]| out.fill(0.0)),
                    lambda: Arc::new(|_, y: &[f64]| 2.0 + y[0].sin()),
                    bound: 2.5,
                },
            )
            .unwrap();
        // near y = pi/2 the intensity approaches 3 and exceeds the bound
        let bad = coeffs.lambda_checked(Regime(1), Regime(2), 0.0, &[std::f64::consts::FRAC_PI_2]);
        assert!(matches!(bad, Err(SimError::BoundViolation { .. })));
        let ok = coeffs.lambda_checked(Regime(1), Regime(2), 0.0, &[std::f64::consts::PI]);
        assert!(ok.is_ok());
    }

    #[test]
    fn truncation_h_kills_switch_sized_jumps() {
        // switch jumps carry |z2| >= 1, so h vanishes on them
        let (h1, h2) = truncation_h(&[0.2], 1.0);
        assert_eq!(h1, vec![0.0]);
        assert_eq!(h2, 0.0);
        let (h1, h2) = truncation_h(&[0.2, 0.3], 0.0);
        assert_eq!(h1, vec![0.2, 0.3]);
        assert_eq!(h2, 0.0);
    }
}
