//! Evaluation of the extended generator: drift, diffusion, Lévy-jump and
//! regime-switch contributions, itemized.

use super::integrals::jump_jacobian_at_zero;
use super::{all_finite, norm2, LevyKind, MarkMeasure, ModelSpec, QuadratureConfig, Regime, TestFunction};
use crate::error::{Result, SimError};
use crate::rng::Stream;

/// Itemized value of the generator applied to a test function at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorEvaluation {
    pub total: f64,
    pub drift_term: f64,
    pub diffusion_term: f64,
    pub levy_jump_term: f64,
    pub switch_term: f64,
    /// Standard error of the Lévy term when Monte Carlo quadrature was used.
    pub levy_quadrature_se: Option<f64>,
}

/// Reusable buffers for repeated generator evaluation on a hot path.
#[derive(Debug, Default, Clone)]
pub struct GeneratorScratch {
    grad: Vec<f64>,
    hess: Vec<f64>,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    shift: Vec<f64>,
    fbuf: Vec<f64>,
    ybuf: Vec<f64>,
    xbuf: Vec<f64>,
    jac: Vec<f64>,
}

impl GeneratorScratch {
    fn reserve(&mut self, d: usize, p: usize, n: usize) {
        self.grad.resize(d, 0.0);
        self.hess.resize(d * d, 0.0);
        self.mu.resize(d, 0.0);
        self.sigma.resize(d * p, 0.0);
        self.shift.resize(d, 0.0);
        self.fbuf.resize(d, 0.0);
        self.ybuf.resize(d, 0.0);
        self.xbuf.resize(n.max(1), 0.0);
        self.jac.resize(d * n.max(1), 0.0);
    }
}

/// Evaluate the generator at (t, y, c). Allocating wrapper around
/// [`evaluate_generator_with`].
pub fn evaluate_generator(
    spec: &ModelSpec,
    v: &TestFunction,
    t: f64,
    y: &[f64],
    c: Regime,
    quad: QuadratureConfig,
    rng: &mut Stream,
) -> Result<GeneratorEvaluation> {
    let mut scratch = GeneratorScratch::default();
    evaluate_generator_with(spec, v, t, y, c, quad, rng, &mut scratch)
}

/// Evaluate the generator using caller-provided scratch buffers.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_generator_with(
    spec: &ModelSpec,
    v: &TestFunction,
    t: f64,
    y: &[f64],
    c: Regime,
    quad: QuadratureConfig,
    rng: &mut Stream,
    s: &mut GeneratorScratch,
) -> Result<GeneratorEvaluation> {
    if !spec.regimes.contains(c) {
        return Err(SimError::InvalidArgument(format!("regime {c} outside the regime set")));
    }
    let d = spec.coeffs.dim_y;
    let p = spec.coeffs.dim_w;
    let n = spec.levy.dim;
    s.reserve(d, p, n);

    let v0 = v.eval(t, y, c);
    v.gradient_into(t, y, c, &mut s.grad);
    v.hessian_into(t, y, c, &mut s.hess);

    (spec.coeffs.mu)(t, y, c, &mut s.mu);
    (spec.coeffs.sigma)(t, y, c, &mut s.sigma);
    if !all_finite(&s.mu) {
        return Err(SimError::ModelEvaluation { what: "mu", t, y: y.to_vec(), c: c.0 });
    }
    if !all_finite(&s.sigma) {
        return Err(SimError::ModelEvaluation { what: "sigma", t, y: y.to_vec(), c: c.0 });
    }

    let drift_term = s.grad.iter().zip(&s.mu).map(|(g, m)| g * m).sum::<f64>();

    // (1/2) Tr(sigma sigma^T hess) = (1/2) sum_l sigma_l^T hess sigma_l
    let mut diffusion_term = 0.0;
    for l in 0..p {
        for i in 0..d {
            let si = s.sigma[i * p + l];
            if si == 0.0 {
                continue;
            }
            for j in 0..d {
                diffusion_term += 0.5 * si * s.sigma[j * p + l] * s.hess[i * d + j];
            }
        }
    }

    // Lévy term: v(y + F) - v - grad . F 1{||x|| <= a}, integrated against nu.
    let a = spec.levy.truncation;
    let mut levy_quadrature_se = None;
    let mut levy_jump_term = 0.0;
    {
        // split borrows so the integrand can reuse scratch buffers
        let GeneratorScratch { grad, fbuf, ybuf, xbuf, .. } = &mut *s;
        let integrand = |x: &[f64], fbuf: &mut [f64], ybuf: &mut [f64]| -> Result<f64> {
            (spec.coeffs.jump)(t, y, c, x, fbuf);
            if !all_finite(fbuf) {
                return Err(SimError::ModelEvaluation { what: "F", t, y: y.to_vec(), c: c.0 });
            }
            for i in 0..d {
                ybuf[i] = y[i] + fbuf[i];
            }
            let mut val = v.eval(t, ybuf, c) - v0;
            if norm2(x) <= a {
                val -= grad.iter().zip(fbuf.iter()).map(|(g, f)| g * f).sum::<f64>();
            }
            Ok(val)
        };
        match &spec.levy.kind {
            LevyKind::None => {}
            LevyKind::CompoundPoisson(measure) | LevyKind::TruncatedInfiniteActivity { big_part: measure, .. } => {
                match measure {
                    MarkMeasure::Atoms(atoms) => {
                        for (mass, mark) in atoms {
                            levy_jump_term += mass * integrand(mark, fbuf, ybuf)?;
                        }
                    }
                    MarkMeasure::Sampled { total_rate, sampler } => {
                        let m = quad.mc_samples.max(2);
                        let (mut sum, mut sumsq) = (0.0, 0.0);
                        for _ in 0..m {
                            sampler(rng, xbuf);
                            let g = integrand(xbuf, fbuf, ybuf)?;
                            sum += g;
                            sumsq += g * g;
                        }
                        let mf = m as f64;
                        let mean = sum / mf;
                        let var = (sumsq / mf - mean * mean).max(0.0);
                        let se = total_rate * (var / mf).sqrt();
                        if se > quad.tol {
                            return Err(SimError::Quadrature { achieved: se, tol: quad.tol, context: "generator levy term" });
                        }
                        levy_jump_term = total_rate * mean;
                        levy_quadrature_se = Some(se);
                    }
                }
            }
        }
    }
    // Sub-epsilon surrogate: second-order Taylor term (1/2) Tr(J S J^T hess)
    // with J the mark-Jacobian of F at x = 0.
    if let LevyKind::TruncatedInfiniteActivity { small_part_variance, epsilon, .. } = &spec.levy.kind {
        jump_jacobian_at_zero(spec, t, y, c, *epsilon, &mut s.jac);
        // M = J S J^T, accumulate (1/2) sum_ij M_ij hess_ij directly
        let mut term = 0.0;
        for i in 0..d {
            for j in 0..d {
                let mut m_ij = 0.0;
                for q in 0..n {
                    for r in 0..n {
                        m_ij += s.jac[i * n + q] * small_part_variance[q * n + r] * s.jac[j * n + r];
                    }
                }
                term += 0.5 * m_ij * s.hess[i * d + j];
            }
        }
        levy_jump_term += term;
    }

    // Switch term: sum over k != c of (v(y + rho^{c,k}, k) - v(y, c)) lambda^{c,k}.
    let mut switch_term = 0.0;
    for k in spec.regimes.iter() {
        if k == c {
            continue;
        }
        if let Some(ch) = spec.coeffs.channel(c, k) {
            let lam = spec.coeffs.lambda_checked(c, k, t, y)?;
            if lam == 0.0 {
                continue;
            }
            (ch.rho)(t, y, &mut s.shift);
            if !all_finite(&s.shift) {
                return Err(SimError::ModelEvaluation { what: "rho", t, y: y.to_vec(), c: c.0 });
            }
            for i in 0..d {
                s.ybuf[i] = y[i] + s.shift[i];
            }
            switch_term += (v.eval(t, &s.ybuf, k) - v0) * lam;
        }
    }

    let total = drift_term + diffusion_term + levy_jump_term + switch_term;
    Ok(GeneratorEvaluation {
        total,
        drift_term,
        diffusion_term,
        levy_jump_term,
        switch_term,
        levy_quadrature_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoefficientSet, LevySpec, RegimeSet, SwitchChannel, TestFunction};
    use crate::rng::{Driver, Stream};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn quad() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    fn rng() -> Stream {
        Stream::derive(1, 0, Driver::Quadrature)
    }

    fn constant_model(mu: f64, sigma: f64) -> ModelSpec {
        let coeffs = CoefficientSet::diffusion_only(
            1,
            1,
            2,
            Arc::new(move |_, _, _, out: &mut [f64]| out[0] = mu),
            Arc::new(move |_, _, _, out: &mut [f64]| out[0] = sigma),
        );
        ModelSpec::new(RegimeSet::new(2).unwrap(), LevySpec::none(1), coeffs, 0.0, 1.0, vec![0.0], Regime(1)).unwrap()
    }

    #[test]
    fn constant_function_is_annihilated() {
        let spec = constant_model(0.3, 0.7);
        let v = TestFunction::from_value("one", Arc::new(|_, _, _| 1.0));
        let g = evaluate_generator(&spec, &v, 0.2, &[0.4], Regime(1), quad(), &mut rng()).unwrap();
        assert_eq!(g.total, 0.0);
        assert_eq!(g.drift_term, 0.0);
        assert_eq!(g.diffusion_term, 0.0);
        assert_eq!(g.levy_jump_term, 0.0);
        assert_eq!(g.switch_term, 0.0);
    }

    #[test]
    fn linear_function_recovers_drift() {
        // v = y with mu = theta_c: A v = theta_c exactly
        let theta = [0.4, -1.1];
        let coeffs = CoefficientSet::diffusion_only(
            1,
            1,
            2,
            Arc::new(move |_, _, c: Regime, out: &mut [f64]| out[0] = theta[c.index()]),
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = 1.0),
        );
        let spec = ModelSpec::new(RegimeSet::new(2).unwrap(), LevySpec::none(1), coeffs, 0.0, 1.0, vec![0.0], Regime(1)).unwrap();
        let mut v = TestFunction::from_value("id", Arc::new(|_, y: &[f64], _| y[0]));
        v.gradient = Some(Arc::new(|_, _, _, out: &mut [f64]| out[0] = 1.0));
        v.hessian = Some(Arc::new(|_, _, _, out: &mut [f64]| out[0] = 0.0));
        for c in [Regime(1), Regime(2)] {
            let g = evaluate_generator(&spec, &v, 0.0, &[2.0], c, quad(), &mut rng()).unwrap();
            assert_relative_eq!(g.total, theta[c.index()], epsilon = 1e-12);
            assert_eq!(g.levy_jump_term, 0.0);
            assert_eq!(g.switch_term, 0.0);
        }
    }

    #[test]
    fn quadratic_with_switch_matches_hand_value() {
        // d=1, K=2, v=y^2, mu=0, sigma=1, rho^{1,2}=1, lambda^{1,2}=2 at (y=0,c=1):
        // A v = 1/2*2*1 + ((0+1)^2 - 0)*2 = 3
        let mut coeffs = CoefficientSet::diffusion_only(
            1,
            1,
            2,
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = 0.0),
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = 1.0),
        );
        coeffs
            .set_channel(
                Regime(1),
                Regime(2),
                SwitchChannel {
                    rho: Arc::new(|_, _, out: &mut [f64]| out[0] = 1.0),
                    lambda: Arc::new(|_, _| 2.0),
                    bound: 2.0,
                },
            )
            .unwrap();
        let spec = ModelSpec::new(RegimeSet::new(2).unwrap(), LevySpec::none(1), coeffs, 0.0, 1.0, vec![0.0], Regime(1)).unwrap();
        let v = TestFunction::from_value("sq", Arc::new(|_, y: &[f64], _| y[0] * y[0]));
        let g = evaluate_generator(&spec, &v, 0.0, &[0.0], Regime(1), quad(), &mut rng()).unwrap();
        assert_relative_eq!(g.diffusion_term, 1.0, epsilon = 1e-6);
        assert_relative_eq!(g.switch_term, 2.0, epsilon = 1e-10);
        assert_relative_eq!(g.total, 3.0, epsilon = 1e-6);
        assert_eq!(g.total, g.drift_term + g.diffusion_term + g.levy_jump_term + g.switch_term);
    }

    #[test]
    fn switch_term_mass_is_lambda() {
        // v(y,k) = 1{k=2}, rho = 0: switch term at c=1 equals lambda^{1,2}
        let mut coeffs = CoefficientSet::diffusion_only(
            1,
            1,
            2,
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = 0.0),
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = 0.0),
        );
        coeffs
            .set_channel(
                Regime(1),
                Regime(2),
                SwitchChannel {
                    rho: Arc::new(|_, _, out: &mut [f64]| out[0] = 0.0),
                    lambda: Arc::new(|_, y: &[f64]| 2.0 + y[0].sin()),
                    bound: 3.0,
                },
            )
            .unwrap();
        let spec = ModelSpec::new(RegimeSet::new(2).unwrap(), LevySpec::none(1), coeffs, 0.0, 1.0, vec![0.0], Regime(1)).unwrap();
        let v = TestFunction::from_value("ind2", Arc::new(|_, _, c: Regime| if c == Regime(2) { 1.0 } else { 0.0 }));
        let y = [0.7];
        let g = evaluate_generator(&spec, &v, 0.0, &y, Regime(1), quad(), &mut rng()).unwrap();
        assert_relative_eq!(g.switch_term, 2.0 + 0.7f64.sin(), epsilon = 1e-12);
    }

    #[test]
    fn atomic_levy_term_is_exact() {
        // nu = 2 delta_{x=0.5}, F = x, a = 1, v = y^2 at y = 0.25:
        // integrand = (0.75^2 - 0.25^2 - 2*0.25*0.5) = 0.5625 - 0.0625 - 0.25 = 0.25
        let measure = MarkMeasure::Atoms(vec![(2.0, vec![0.5])]);
        let mut coeffs = CoefficientSet::diffusion_only(
            1,
            1,
            1,
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = 0.0),
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = 0.0),
        );
        coeffs.jump = Arc::new(|_, _, _, x: &[f64], out: &mut [f64]| out[0] = x[0]);
        let levy = LevySpec::compound_poisson(1, 1.0, measure).unwrap();
        let spec = ModelSpec::new(RegimeSet::new(1).unwrap(), levy, coeffs, 0.0, 1.0, vec![0.0], Regime(1)).unwrap();
        let v = TestFunction::from_value("sq", Arc::new(|_, y: &[f64], _| y[0] * y[0]));
        let g = evaluate_generator(&spec, &v, 0.0, &[0.25], Regime(1), quad(), &mut rng()).unwrap();
        assert_relative_eq!(g.levy_jump_term, 0.5, epsilon = 1e-6);
    }

    #[test]
    fn generator_is_linear_in_v() {
        let spec = constant_model(0.5, 1.2);
        let v = TestFunction::from_value("sq", Arc::new(|_, y: &[f64], _| y[0] * y[0]));
        let w = TestFunction::from_value("cube", Arc::new(|_, y: &[f64], _| y[0] * y[0] * y[0]));
        let combo = TestFunction::from_value("combo", Arc::new(|_, y: &[f64], _| 2.0 * y[0] * y[0] - 3.0 * y[0] * y[0] * y[0]));
        let y = [0.8];
        let gv = evaluate_generator(&spec, &v, 0.1, &y, Regime(2), quad(), &mut rng()).unwrap();
        let gw = evaluate_generator(&spec, &w, 0.1, &y, Regime(2), quad(), &mut rng()).unwrap();
        let gc = evaluate_generator(&spec, &combo, 0.1, &y, Regime(2), quad(), &mut rng()).unwrap();
        assert_relative_eq!(gc.total, 2.0 * gv.total - 3.0 * gw.total, epsilon = 1e-5);
    }
}
