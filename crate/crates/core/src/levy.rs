//! Sampling of the Poisson random measure over a time step: explicit
//! events for the finite-activity part, a Gaussian surrogate for the
//! sub-epsilon band of truncated infinite-activity measures, and the
//! compensator drift of the retained small-jump band.

use crate::error::{Result, SimError};
use crate::model::{norm2, LevyKind, LevySpec, MarkMeasure, QuadratureConfig};
use crate::rng::Stream;
use rand::RngCore;

/// One Poisson-measure event: absolute time and mark.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyEvent {
    pub time: f64,
    pub mark: Vec<f64>,
}

/// The Poisson-measure contribution to one step [t0, t0 + dt].
#[derive(Debug, Clone, Default)]
pub struct LevyIncrement {
    /// Events with ||x|| > a, applied uncompensated.
    pub big_jumps: Vec<LevyEvent>,
    /// Events with ||x|| <= a, applied as events and compensated in drift.
    pub small_jumps: Vec<LevyEvent>,
    /// Gaussian surrogate draw for the sub-epsilon band (already centered).
    pub surrogate: Option<Vec<f64>>,
    /// int_{||x|| <= a} x nu(dx) over the retained band, per unit time.
    pub compensator_drift: Vec<f64>,
}

impl LevyIncrement {
    /// Aggregate small-band contribution in mark space: explicit small
    /// jumps plus the surrogate draw.
    pub fn small_jump_sum(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for ev in &self.small_jumps {
            for (o, m) in out.iter_mut().zip(&ev.mark) {
                *o += m;
            }
        }
        if let Some(s) = &self.surrogate {
            for (o, m) in out.iter_mut().zip(s) {
                *o += m;
            }
        }
        out
    }
}

/// Lower Cholesky factor of a symmetric PSD matrix (row-major n x n).
fn cholesky(n: usize, m: &[f64]) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = m[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum < -1e-12 {
                    return Err(SimError::InvalidArgument("small_part_variance not PSD".into()));
                }
                l[i * n + i] = sum.max(0.0).sqrt();
            } else {
                l[i * n + j] = if l[j * n + j] > 0.0 { sum / l[j * n + j] } else { 0.0 };
            }
        }
    }
    Ok(l)
}

/// Draw the finite-activity events of one step into `big` / `small`,
/// classified by the truncation level. Counts and times come from
/// `counts`, marks from `marks` in time order.
pub fn sample_events(
    levy: &LevySpec,
    t0: f64,
    dt: f64,
    counts: &mut Stream,
    marks: &mut Stream,
    big: &mut Vec<LevyEvent>,
    small: &mut Vec<LevyEvent>,
) -> Result<()> {
    if dt <= 0.0 {
        return Err(SimError::InvalidArgument("dt must be > 0".into()));
    }
    let (measure, epsilon) = match &levy.kind {
        LevyKind::None => return Ok(()),
        LevyKind::CompoundPoisson(m) => (m, None),
        LevyKind::TruncatedInfiniteActivity { big_part, epsilon, .. } => (big_part, Some(*epsilon)),
    };
    let a = levy.truncation;
    let rate = measure.total_rate();
    let n = counts.poisson(rate * dt);
    let mut times: Vec<f64> = (0..n).map(|_| t0 + dt * counts.uniform()).collect();
    times.sort_by(|x, y| x.partial_cmp(y).unwrap());
    for time in times {
        let mut mark = vec![0.0; levy.dim];
        measure.sample_mark(marks, &mut mark);
        let r = norm2(&mark);
        if let Some(eps) = epsilon {
            if r <= eps {
                return Err(SimError::SamplerContract(format!(
                    "big-part sampler produced |x| = {r} inside the epsilon ball"
                )));
            }
        }
        let ev = LevyEvent { time, mark };
        if r > a {
            big.push(ev);
        } else {
            small.push(ev);
        }
    }
    Ok(())
}

/// Gaussian surrogate draw over a window of length dt for a truncated
/// infinite-activity measure; None otherwise.
pub fn sample_surrogate(levy: &LevySpec, dt: f64, rng: &mut Stream) -> Result<Option<Vec<f64>>> {
    if let LevyKind::TruncatedInfiniteActivity { small_part_variance, .. } = &levy.kind {
        let n = levy.dim;
        let l = cholesky(n, small_part_variance)?;
        let z: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let scale = dt.sqrt();
        let mut draw = vec![0.0; n];
        for i in 0..n {
            for k in 0..=i {
                draw[i] += l[i * n + k] * z[k];
            }
            draw[i] *= scale;
        }
        Ok(Some(draw))
    } else {
        Ok(None)
    }
}

/// int_{||x|| <= a} x nu(dx) over the retained small-jump band, written to
/// `out`: exact for atomic measures, Monte Carlo otherwise. The sub-epsilon
/// band of a truncated measure contributes nothing: its compensation lives
/// inside the centered surrogate.
pub fn small_band_mark_mean(levy: &LevySpec, out: &mut [f64], rng: &mut Stream) -> Result<()> {
    out.fill(0.0);
    let a = levy.truncation;
    let measure = match levy.event_measure() {
        None => return Ok(()),
        Some(m) => m,
    };
    match measure {
        MarkMeasure::Atoms(atoms) => {
            for (mass, mark) in atoms {
                if norm2(mark) <= a {
                    for (o, m) in out.iter_mut().zip(mark) {
                        *o += mass * m;
                    }
                }
            }
        }
        MarkMeasure::Sampled { total_rate, sampler } => {
            let samples = QuadratureConfig::default().mc_samples;
            let mut x = vec![0.0; levy.dim];
            for _ in 0..samples {
                sampler(rng, &mut x);
                if norm2(&x) <= a {
                    for (o, m) in out.iter_mut().zip(&x) {
                        *o += m;
                    }
                }
            }
            for o in out.iter_mut() {
                *o *= total_rate / samples as f64;
            }
        }
    }
    Ok(())
}

/// Sample the full Poisson-measure increment over [t0, t0 + dt], including
/// the compensator drift (which for black-box measures consumes Monte Carlo
/// draws from `marks`).
pub fn sample_increment(
    levy: &LevySpec,
    t0: f64,
    dt: f64,
    counts: &mut Stream,
    marks: &mut Stream,
    surrogate: &mut Stream,
) -> Result<LevyIncrement> {
    let mut inc = LevyIncrement { compensator_drift: vec![0.0; levy.dim], ..Default::default() };
    sample_events(levy, t0, dt, counts, marks, &mut inc.big_jumps, &mut inc.small_jumps)?;
    inc.surrogate = sample_surrogate(levy, dt, surrogate)?;
    small_band_mark_mean(levy, &mut inc.compensator_drift, marks)?;
    Ok(inc)
}

/// Split two fresh independent sub-streams off `rng` (deterministically).
fn split_streams(rng: &mut Stream) -> (Stream, Stream) {
    let (s1, s2) = (rng.next_u64(), rng.next_u64());
    (
        Stream::derive(s1, 0, crate::rng::Driver::LevyCounts),
        Stream::derive(s2, 1, crate::rng::Driver::LevyMarks),
    )
}

/// Events of the uncompensated band ||x|| > a on [t0, t0 + dt], sorted by
/// time. Every returned mark satisfies ||x|| > a.
pub fn sample_big_jumps(levy: &LevySpec, t0: f64, dt: f64, rng: &mut Stream) -> Result<Vec<LevyEvent>> {
    let (mut counts, mut marks) = split_streams(rng);
    let (mut big, mut small) = (Vec::new(), Vec::new());
    sample_events(levy, t0, dt, &mut counts, &mut marks, &mut big, &mut small)?;
    Ok(big)
}

/// Small-band aggregate over a step of length dt: the summed small-band
/// contribution and the compensator drift per unit time.
pub fn sample_small_component(levy: &LevySpec, dt: f64, rng: &mut Stream) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut counts, mut marks) = split_streams(rng);
    let mut surrogate = {
        let s = rng.next_u64();
        Stream::derive(s, 2, crate::rng::Driver::SmallJumpSurrogate)
    };
    let inc = sample_increment(levy, 0.0, dt, &mut counts, &mut marks, &mut surrogate)?;
    Ok((inc.small_jump_sum(levy.dim), inc.compensator_drift))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MarkMeasure;
    use crate::rng::{Driver, Stream};
    use approx::assert_relative_eq;

    fn streams(seed: u64) -> (Stream, Stream, Stream) {
        (
            Stream::derive(seed, 0, Driver::LevyCounts),
            Stream::derive(seed, 0, Driver::LevyMarks),
            Stream::derive(seed, 0, Driver::SmallJumpSurrogate),
        )
    }

    #[test]
    fn none_measure_yields_empty_increment() {
        let levy = LevySpec::none(1);
        let (mut c, mut m, mut s) = streams(5);
        let inc = sample_increment(&levy, 0.0, 1.0, &mut c, &mut m, &mut s).unwrap();
        assert!(inc.big_jumps.is_empty());
        assert!(inc.small_jumps.is_empty());
        assert!(inc.surrogate.is_none());
        assert_eq!(inc.compensator_drift, vec![0.0]);
        assert_eq!(inc.small_jump_sum(1), vec![0.0]);
    }

    #[test]
    fn zero_rate_always_empty() {
        let levy = LevySpec::compound_poisson(1, 1.0, MarkMeasure::Atoms(vec![])).unwrap();
        let mut rng = Stream::derive(1, 0, Driver::LevyCounts);
        for _ in 0..100 {
            assert!(sample_big_jumps(&levy, 0.0, 1.0, &mut rng).unwrap().is_empty());
        }
    }

    #[test]
    fn point_mass_beyond_truncation_is_all_big() {
        // nu = 2 delta_{x=3}, a = 1: Poisson(2 dt) events, every mark 3
        let levy = LevySpec::compound_poisson(1, 1.0, MarkMeasure::Atoms(vec![(2.0, vec![3.0])])).unwrap();
        let (mut c, mut m, mut s) = streams(7);
        let mut total = 0usize;
        let reps = 20_000;
        for _ in 0..reps {
            let inc = sample_increment(&levy, 0.0, 1.0, &mut c, &mut m, &mut s).unwrap();
            assert!(inc.small_jumps.is_empty());
            for ev in &inc.big_jumps {
                assert_eq!(ev.mark, vec![3.0]);
                assert!(ev.time >= 0.0 && ev.time <= 1.0);
            }
            total += inc.big_jumps.len();
        }
        // Poisson(2): mean 2, sd sqrt(2); 3 sigma band for the sample mean
        let mean = total as f64 / reps as f64;
        let band = 3.0 * (2.0f64 / reps as f64).sqrt();
        assert!((mean - 2.0).abs() < band, "mean {mean}, band {band}");
    }

    #[test]
    fn uniform_mass_splits_at_truncation() {
        // nu uniform mass 5 on [-2, 2], a = 1: tail mass 5 * (2/4) = 2.5
        let levy = LevySpec::compound_poisson(
            1,
            1.0,
            MarkMeasure::Sampled {
                total_rate: 5.0,
                sampler: std::sync::Arc::new(|rng: &mut Stream, out: &mut [f64]| {
                    out[0] = rng.uniform_in(-2.0, 2.0);
                }),
            },
        )
        .unwrap();
        let (mut c, mut m, _) = streams(13);
        let (mut big, mut small) = (Vec::new(), Vec::new());
        let reps = 20_000;
        let dt = 0.5;
        for _ in 0..reps {
            sample_events(&levy, 0.0, dt, &mut c, &mut m, &mut big, &mut small).unwrap();
        }
        let mean_big = big.len() as f64 / reps as f64;
        let band = 3.0 * (2.5 * dt / reps as f64).sqrt();
        assert!((mean_big - 2.5 * dt).abs() < band, "big mean {mean_big}");
        let mean_small = small.len() as f64 / reps as f64;
        assert!((mean_small - 2.5 * dt).abs() < band, "small mean {mean_small}");
    }

    #[test]
    fn compensated_small_sum_has_zero_mean() {
        // nu = 3 delta_{0.5}, a = 1: drift = 1.5; mean(sum - 1.5 dt) ~ 0
        let levy = LevySpec::compound_poisson(1, 1.0, MarkMeasure::Atoms(vec![(3.0, vec![0.5])])).unwrap();
        let mut rng = Stream::derive(3, 0, Driver::LevyCounts);
        let dt = 0.01;
        let reps = 100_000;
        let mut acc = 0.0;
        for _ in 0..reps {
            let (sum, drift) = sample_small_component(&levy, dt, &mut rng).unwrap();
            assert_relative_eq!(drift[0], 1.5, epsilon = 1e-12);
            acc += sum[0] - drift[0] * dt;
        }
        // per-step variance: E N * x^2 = 3 dt * 0.25
        let se = (3.0 * dt * 0.25 / reps as f64).sqrt();
        assert!((acc / reps as f64).abs() < 3.0 * se, "mean {}", acc / reps as f64);
    }

    #[test]
    fn surrogate_variance_scales_with_dt() {
        let big = MarkMeasure::Atoms(vec![(0.5, vec![0.9])]);
        let levy = LevySpec::truncated_infinite_activity(1, 1.0, big, vec![0.04], 0.2).unwrap();
        let mut s = Stream::derive(17, 0, Driver::SmallJumpSurrogate);
        let dt = 0.25;
        let reps = 100_000usize;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..reps {
            let g = sample_surrogate(&levy, dt, &mut s).unwrap().unwrap()[0];
            sum += g;
            sumsq += g * g;
        }
        let mean = sum / reps as f64;
        let var = sumsq / reps as f64 - mean * mean;
        // var = dt * 0.04 = 0.01; SE of a variance estimate ~ var * sqrt(2/n)
        let band = 3.0 * 0.01 * (2.0 / reps as f64).sqrt();
        assert!((var - 0.01).abs() < band, "var {var}");
    }

    #[test]
    fn identical_streams_reproduce_increments() {
        let levy = LevySpec::compound_poisson(
            1,
            1.0,
            MarkMeasure::Atoms(vec![(1.0, vec![0.3]), (0.5, vec![2.0])]),
        )
        .unwrap();
        let (mut c1, mut m1, mut s1) = streams(23);
        let (mut c2, mut m2, mut s2) = streams(23);
        for _ in 0..50 {
            let a = sample_increment(&levy, 1.0, 0.1, &mut c1, &mut m1, &mut s1).unwrap();
            let b = sample_increment(&levy, 1.0, 0.1, &mut c2, &mut m2, &mut s2).unwrap();
            assert_eq!(a.big_jumps, b.big_jumps);
            assert_eq!(a.small_jumps, b.small_jumps);
        }
    }

    #[test]
    fn truncated_sampler_below_epsilon_is_contract_error() {
        let big = MarkMeasure::Sampled {
            total_rate: 1.0,
            sampler: std::sync::Arc::new(|_: &mut Stream, out: &mut [f64]| out[0] = 0.05),
        };
        let levy = LevySpec::truncated_infinite_activity(1, 1.0, big, vec![0.01], 0.2).unwrap();
        let (mut c, mut m, _) = streams(29);
        let mut saw_error = false;
        let (mut bigv, mut smallv) = (Vec::new(), Vec::new());
        for _ in 0..200 {
            match sample_events(&levy, 0.0, 1.0, &mut c, &mut m, &mut bigv, &mut smallv) {
                Err(SimError::SamplerContract(_)) => {
                    saw_error = true;
                    break;
                }
                Ok(_) => {}
                Err(e) => panic!("unexpected error {e}"),
            }
        }
        assert!(saw_error);
    }
}
