//! Lévy-measure integrals of the jump coefficient: exact sums over atomic
//! measures, Monte Carlo with reported standard error for sampled ones.

use super::{norm2, LevyKind, LevySpec, MarkMeasure, ModelSpec, QuadratureConfig, Regime};
use crate::error::{Result, SimError};
use crate::rng::Stream;

/// Accumulates a vector integral int g(x) nu(dx) for a d-valued integrand.
/// Returns the Monte Carlo standard error (max over components) if sampling
/// was used, None when the result is exact.
fn integrate_vec<G>(
    measure: &MarkMeasure,
    dim_mark: usize,
    quad: QuadratureConfig,
    rng: &mut Stream,
    out: &mut [f64],
    mut g: G,
) -> Result<Option<f64>>
where
    G: FnMut(&[f64], &mut [f64]),
{
    out.fill(0.0);
    match measure {
        MarkMeasure::Atoms(atoms) => {
            let mut buf = vec![0.0; out.len()];
            for (mass, mark) in atoms {
                g(mark, &mut buf);
                for (o, b) in out.iter_mut().zip(&buf) {
                    *o += mass * b;
                }
            }
            Ok(None)
        }
        MarkMeasure::Sampled { total_rate, sampler } => {
            let m = quad.mc_samples.max(2);
            let mut x = vec![0.0; dim_mark];
            let mut buf = vec![0.0; out.len()];
            let mut sum = vec![0.0; out.len()];
            let mut sumsq = vec![0.0; out.len()];
            for _ in 0..m {
                sampler(rng, &mut x);
                g(&x, &mut buf);
                for i in 0..out.len() {
                    sum[i] += buf[i];
                    sumsq[i] += buf[i] * buf[i];
                }
            }
            let mf = m as f64;
            let mut max_se = 0.0f64;
            for i in 0..out.len() {
                let mean = sum[i] / mf;
                let var = (sumsq[i] / mf - mean * mean).max(0.0);
                out[i] = total_rate * mean;
                max_se = max_se.max(total_rate * (var / mf).sqrt());
            }
            if max_se > quad.tol {
                return Err(SimError::Quadrature { achieved: max_se, tol: quad.tol, context: "levy integral" });
            }
            Ok(Some(max_se))
        }
    }
}

/// int_{||x|| <= a} F(t, y, c, x) nu(dx): the compensator drift of the
/// small-jump band, pushed through F. Zero for the sub-epsilon surrogate
/// part (mean-zero by construction).
pub(crate) fn small_band_f_mean(
    spec: &ModelSpec,
    t: f64,
    y: &[f64],
    c: Regime,
    quad: QuadratureConfig,
    rng: &mut Stream,
    out: &mut [f64],
) -> Result<Option<f64>> {
    let a = spec.levy.truncation;
    match spec.levy.event_measure() {
        None => {
            out.fill(0.0);
            Ok(None)
        }
        Some(measure) => {
            let jump = &spec.coeffs.jump;
            integrate_vec(measure, spec.levy.dim, quad, rng, out, |x, buf| {
                if norm2(x) <= a {
                    jump(t, y, c, x, buf);
                } else {
                    buf.fill(0.0);
                }
            })
        }
    }
}

/// int_{||x|| > a} F(t, y, c, x) nu(dx): the uncompensated tail expectation
/// entering the special drift.
pub(crate) fn tail_f_integral(
    spec: &ModelSpec,
    t: f64,
    y: &[f64],
    c: Regime,
    quad: QuadratureConfig,
    rng: &mut Stream,
    out: &mut [f64],
) -> Result<Option<f64>> {
    let a = spec.levy.truncation;
    match spec.levy.event_measure() {
        None => {
            out.fill(0.0);
            Ok(None)
        }
        Some(measure) => {
            let jump = &spec.coeffs.jump;
            integrate_vec(measure, spec.levy.dim, quad, rng, out, |x, buf| {
                if norm2(x) > a {
                    jump(t, y, c, x, buf);
                } else {
                    buf.fill(0.0);
                }
            })
        }
    }
}

/// int F(t,y,c,x) (1{||F|| <= 1} - 1{||x|| <= a}) nu(dx): the indicator
/// difference entering the first characteristic. The sub-epsilon surrogate
/// band contributes nothing: there both indicators are 1.
pub(crate) fn indicator_difference_integral(
    spec: &ModelSpec,
    t: f64,
    y: &[f64],
    c: Regime,
    quad: QuadratureConfig,
    rng: &mut Stream,
    out: &mut [f64],
) -> Result<Option<f64>> {
    let a = spec.levy.truncation;
    match spec.levy.event_measure() {
        None => {
            out.fill(0.0);
            Ok(None)
        }
        Some(measure) => {
            let jump = &spec.coeffs.jump;
            integrate_vec(measure, spec.levy.dim, quad, rng, out, |x, buf| {
                jump(t, y, c, x, buf);
                let w = (if norm2(buf) <= 1.0 { 1.0 } else { 0.0 }) - (if norm2(x) <= a { 1.0 } else { 0.0 });
                for b in buf.iter_mut() {
                    *b *= w;
                }
            })
        }
    }
}

/// Generic scalar integral int g(x) nu(dx) over the event measure of `levy`.
pub(crate) fn integrate_scalar<G>(
    levy: &LevySpec,
    quad: QuadratureConfig,
    rng: &mut Stream,
    mut g: G,
) -> Result<(f64, Option<f64>)>
where
    G: FnMut(&[f64]) -> f64,
{
    match levy.event_measure() {
        None => Ok((0.0, None)),
        Some(measure) => {
            let mut out = [0.0];
            let se = integrate_vec(measure, levy.dim, quad, rng, &mut out, |x, buf| {
                buf[0] = g(x);
            })?;
            Ok((out[0], se))
        }
    }
}

/// Jacobian of x -> F(t, y, c, x) at x = 0 by central differences,
/// row-major d x n. Used by the Gaussian small-jump surrogate.
pub(crate) fn jump_jacobian_at_zero(
    spec: &ModelSpec,
    t: f64,
    y: &[f64],
    c: Regime,
    epsilon: f64,
    jac: &mut [f64],
) {
    let d = spec.coeffs.dim_y;
    let n = spec.levy.dim;
    let h = (epsilon / 2.0).min(1e-4);
    let mut xp = vec![0.0; n];
    let mut fp = vec![0.0; d];
    let mut fm = vec![0.0; d];
    for j in 0..n {
        xp[j] = h;
        (spec.coeffs.jump)(t, y, c, &xp, &mut fp);
        xp[j] = -h;
        (spec.coeffs.jump)(t, y, c, &xp, &mut fm);
        xp[j] = 0.0;
        for i in 0..d {
            jac[i * n + j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
}
