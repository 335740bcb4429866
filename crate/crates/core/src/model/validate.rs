//! Probe-based falsification of the standing growth and regularity
//! assumptions. Sampling can reject a model, never certify it.

use super::integrals::integrate_scalar;
use super::{all_finite, norm2, ModelSpec, QuadratureConfig, Regime};
use crate::error::{Result, SimError};
use crate::rng::{Driver, Stream};

/// Axis-aligned probe region for (t, y).
#[derive(Debug, Clone)]
pub struct ProbeBox {
    pub t_range: (f64, f64),
    /// Per-component y ranges, length d.
    pub y_ranges: Vec<(f64, f64)>,
}

impl ProbeBox {
    pub fn centered(t_max: f64, half_width: f64, dim: usize) -> Self {
        ProbeBox { t_range: (0.0, t_max), y_ranges: vec![(-half_width, half_width); dim] }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    pub probe_count: usize,
    pub probe_box: ProbeBox,
    /// Moment order m for the 2m-th moment growth ratio.
    pub moment_order: u32,
    pub seed: u64,
    pub quad: QuadratureConfig,
}

/// An empirical constant: the worst ratio observed and where it happened.
#[derive(Debug, Clone)]
pub struct FittedConstant {
    pub value: f64,
    pub worst_t: f64,
    pub worst_y: Vec<f64>,
    pub worst_regime: Regime,
}

impl FittedConstant {
    fn zero(dim: usize) -> Self {
        FittedConstant { value: 0.0, worst_t: 0.0, worst_y: vec![0.0; dim], worst_regime: Regime(1) }
    }

    fn update(&mut self, value: f64, t: f64, y: &[f64], c: Regime) {
        if value > self.value {
            self.value = value;
            self.worst_t = t;
            self.worst_y = y.to_vec();
            self.worst_regime = c;
        }
    }
}

/// Outcome of the probe sweep.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    /// Linear growth ratio sup of (|mu|^2 + ||sigma sigma^T|| + int |F|^2) / (1 + |y|^2).
    pub linear_growth: FittedConstant,
    /// Lipschitz ratio over probe pairs.
    pub lipschitz: FittedConstant,
    /// Tail/switch second-moment ratio (eq. growth of order 2).
    pub growth_2: FittedConstant,
    /// 2m-th moment ratio for the configured m.
    pub growth_2m: FittedConstant,
    /// Max over probes of the locally-bounded large-jump first moment.
    pub large_jump_moment: f64,
    /// Ratio of the worst constant on the full box to the inner half box;
    /// values well above 1 indicate super-linear growth.
    pub super_linear_ratio: f64,
    /// True when the inner-to-outer ratio exceeds the flag threshold.
    pub super_linear_flag: bool,
    /// Intensity bound violations found at probes: (from, to, t, y, lambda, bound).
    pub bound_violations: Vec<(u32, u32, f64, Vec<f64>, f64, f64)>,
    /// Pairs declared active whose intensity vanished at some probe,
    /// violating the everywhere-positive alternative.
    pub positivity_violations: Vec<(u32, u32, f64, Vec<f64>)>,
    pub probes_used: usize,
    /// No violations found (growth constants are informational).
    pub passed: bool,
}

const SUPER_LINEAR_FLAG_RATIO: f64 = 1.5;

fn probe_point(rng: &mut Stream, bx: &ProbeBox, y: &mut Vec<f64>) -> f64 {
    y.clear();
    for (lo, hi) in &bx.y_ranges {
        y.push(rng.uniform_in(*lo, *hi));
    }
    rng.uniform_in(bx.t_range.0, bx.t_range.1)
}

/// Probe the model's standing assumptions on a box. The probe set always
/// includes the box corners so extreme ratios are reproducible.
pub fn validate_model(spec: &ModelSpec, cfg: &ProbeConfig) -> Result<ValidationReport> {
    if cfg.probe_count < 2 {
        return Err(SimError::InvalidArgument("probe_count must be >= 2".into()));
    }
    let d = spec.coeffs.dim_y;
    if cfg.probe_box.y_ranges.len() != d {
        return Err(SimError::InvalidArgument("probe box dimension mismatch".into()));
    }
    let p = spec.coeffs.dim_w;
    let a = spec.levy.truncation;
    let mut rng = Stream::derive(cfg.seed, 0, Driver::Quadrature);

    // corners first (capped to keep small-dimension semantics), then uniform draws
    let mut probes: Vec<(f64, Vec<f64>)> = Vec::new();
    let corner_cap = 1usize << d.min(10);
    for mask in 0..corner_cap {
        let y: Vec<f64> = cfg
            .probe_box
            .y_ranges
            .iter()
            .enumerate()
            .map(|(i, (lo, hi))| if mask >> i & 1 == 1 { *hi } else { *lo })
            .collect();
        probes.push((cfg.probe_box.t_range.0, y));
    }
    let mut ybuf = Vec::with_capacity(d);
    while probes.len() < cfg.probe_count.max(corner_cap + 2) {
        let t = probe_point(&mut rng, &cfg.probe_box, &mut ybuf);
        probes.push((t, ybuf.clone()));
    }

    let mut lg = FittedConstant::zero(d);
    let mut lip = FittedConstant::zero(d);
    let mut g2 = FittedConstant::zero(d);
    let mut g2m = FittedConstant::zero(d);
    let mut lb_max = 0.0f64;
    let mut lg_inner = 0.0f64;
    let mut bound_violations = Vec::new();
    let mut positivity_violations = Vec::new();

    let inner_box = {
        let mid: Vec<f64> =
            cfg.probe_box.y_ranges.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
        move |y: &[f64]| {
            y.iter().zip(cfg.probe_box.y_ranges.iter().zip(&mid)).all(|(yi, ((lo, hi), m))| {
                (yi - m).abs() <= 0.25 * (hi - lo)
            })
        }
    };

    let mut mu = vec![0.0; d];
    let mut sigma = vec![0.0; d * p];
    let mut mu2 = vec![0.0; d];
    let mut sigma2 = vec![0.0; d * p];
    let mut fbuf = vec![0.0; d];
    let mut fbuf2 = vec![0.0; d];
    let m2 = 2.0 * cfg.moment_order as f64;

    for (idx, (t, y)) in probes.iter().enumerate() {
        for c in spec.regimes.iter() {
            (spec.coeffs.mu)(*t, y, c, &mut mu);
            (spec.coeffs.sigma)(*t, y, c, &mut sigma);
            if !all_finite(&mu) || !all_finite(&sigma) {
                return Err(SimError::ModelEvaluation { what: "coefficients", t: *t, y: y.clone(), c: c.0 });
            }
            // ||sigma sigma^T|| in the Frobenius sense
            let mut sst_norm2 = 0.0;
            for i in 0..d {
                for j in 0..d {
                    let mut acc = 0.0;
                    for l in 0..p {
                        acc += sigma[i * p + l] * sigma[j * p + l];
                    }
                    sst_norm2 += acc * acc;
                }
            }
            let (f2_small, _) = integrate_scalar(&spec.levy, cfg.quad, &mut rng, |x| {
                if norm2(x) <= a {
                    (spec.coeffs.jump)(*t, y, c, x, &mut fbuf);
                    let s = norm2(&fbuf);
                    s * s
                } else {
                    0.0
                }
            })?;
            let denom2 = 1.0 + y.iter().map(|v| v * v).sum::<f64>();
            let ratio_lg = (norm2(&mu).powi(2) + sst_norm2.sqrt() + f2_small) / denom2;
            if !ratio_lg.is_finite() {
                return Err(SimError::ModelEvaluation { what: "growth ratio", t: *t, y: y.clone(), c: c.0 });
            }
            lg.update(ratio_lg, *t, y, c);
            if inner_box(y) {
                lg_inner = lg_inner.max(ratio_lg);
            }

            // tail second moment + worst switch shift (growth of order 2)
            let (f2_tail, _) = integrate_scalar(&spec.levy, cfg.quad, &mut rng, |x| {
                if norm2(x) > a {
                    (spec.coeffs.jump)(*t, y, c, x, &mut fbuf);
                    let s = norm2(&fbuf);
                    s * s
                } else {
                    0.0
                }
            })?;
            let mut rho2_max = 0.0f64;
            for k in spec.regimes.iter() {
                if k == c {
                    continue;
                }
                if let Some(ch) = spec.coeffs.channel(c, k) {
                    (ch.rho)(*t, y, &mut fbuf);
                    rho2_max = rho2_max.max(norm2(&fbuf).powi(2));
                    let lam = (ch.lambda)(*t, y);
                    if !lam.is_finite() {
                        return Err(SimError::ModelEvaluation { what: "lambda", t: *t, y: y.clone(), c: c.0 });
                    }
                    if lam < 0.0 || lam > ch.bound {
                        bound_violations.push((c.0, k.0, *t, y.clone(), lam, ch.bound));
                    } else if lam == 0.0 {
                        positivity_violations.push((c.0, k.0, *t, y.clone()));
                    }
                }
            }
            g2.update((f2_tail + rho2_max) / denom2, *t, y, c);

            let (f2m, _) = integrate_scalar(&spec.levy, cfg.quad, &mut rng, |x| {
                (spec.coeffs.jump)(*t, y, c, x, &mut fbuf);
                norm2(&fbuf).powf(m2)
            })?;
            let denom2m = 1.0 + y.iter().map(|v| v * v).sum::<f64>().powf(cfg.moment_order as f64);
            g2m.update(f2m / denom2m, *t, y, c);

            let (lb, _) = integrate_scalar(&spec.levy, cfg.quad, &mut rng, |x| {
                (spec.coeffs.jump)(*t, y, c, x, &mut fbuf);
                let s = norm2(&fbuf);
                if s > 1.0 {
                    s
                } else {
                    0.0
                }
            })?;
            lb_max = lb_max.max(lb);

            // Lipschitz ratio against the next probe point
            let (t2, y2) = &probes[(idx + 1) % probes.len()];
            let dy = y.iter().zip(y2.iter()).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
            if dy > 1e-12 {
                (spec.coeffs.mu)(*t, y2, c, &mut mu2);
                (spec.coeffs.sigma)(*t, y2, c, &mut sigma2);
                let dmu = mu.iter().zip(&mu2).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
                let dsig = sigma.iter().zip(&sigma2).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
                let (df2, _) = integrate_scalar(&spec.levy, cfg.quad, &mut rng, |x| {
                    if norm2(x) <= a {
                        (spec.coeffs.jump)(*t, y, c, x, &mut fbuf);
                        (spec.coeffs.jump)(*t, y2, c, x, &mut fbuf2);
                        fbuf.iter().zip(&fbuf2).map(|(u, v)| (u - v) * (u - v)).sum::<f64>()
                    } else {
                        0.0
                    }
                })?;
                lip.update((dmu + dsig + df2) / dy, *t, y, c);
                let _ = t2;
            }
        }
    }

    let super_linear_ratio = if lg_inner > 0.0 { lg.value / lg_inner } else { 1.0 };
    let super_linear_flag = super_linear_ratio > SUPER_LINEAR_FLAG_RATIO;
    let passed = bound_violations.is_empty() && positivity_violations.is_empty();

    Ok(ValidationReport {
        linear_growth: lg,
        lipschitz: lip,
        growth_2: g2,
        growth_2m: g2m,
        large_jump_moment: lb_max,
        super_linear_ratio,
        super_linear_flag,
        bound_violations,
        positivity_violations,
        probes_used: probes.len(),
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoefficientSet, LevySpec, ModelSpec, RegimeSet, SwitchChannel};
    use std::sync::Arc;

    fn cfg(half_width: f64) -> ProbeConfig {
        ProbeConfig {
            probe_count: 200,
            probe_box: ProbeBox::centered(1.0, half_width, 1),
            moment_order: 1,
            seed: 99,
            quad: QuadratureConfig::default(),
        }
    }

    fn model_with_mu(mu: super::super::DriftFn) -> ModelSpec {
        let coeffs = CoefficientSet::diffusion_only(
            1,
            1,
            1,
            mu,
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = 1.0),
        );
        ModelSpec::new(RegimeSet::new(1).unwrap(), LevySpec::none(1), coeffs, 0.0, 1.0, vec![0.0], Regime(1)).unwrap()
    }

    #[test]
    fn constant_coefficients_fit_under_one() {
        // mu = 0, sigma = 1: ratio (0 + 1 + 0)/(1 + y^2) <= 1, max at y = 0
        let spec = model_with_mu(Arc::new(|_, _, _, out: &mut [f64]| out[0] = 0.0));
        let report = validate_model(&spec, &cfg(10.0)).unwrap();
        assert!(report.passed);
        assert!(report.linear_growth.value <= 1.0 + 1e-12);
        assert!(!report.super_linear_flag);
    }

    #[test]
    fn quadratic_drift_is_flagged_super_linear() {
        // mu = y^2 on |y| <= 10: corner probe gives ratio 1e4/101 ~ 99
        let spec = model_with_mu(Arc::new(|_, y: &[f64], _, out: &mut [f64]| out[0] = y[0] * y[0]));
        let report = validate_model(&spec, &cfg(10.0)).unwrap();
        assert!(report.linear_growth.value > 90.0, "got {}", report.linear_growth.value);
        assert!(report.super_linear_flag, "ratio {}", report.super_linear_ratio);
        assert!(report.linear_growth.worst_y[0].abs() > 9.0);
    }

    #[test]
    fn declared_bound_catches_sinusoidal_peak() {
        // lambda = 2 + sin(y): bound 3 passes, bound 2.5 is rejected near pi/2
        for (bound, should_pass) in [(3.0, true), (2.5, false)] {
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
                        rho: Arc::new(|_, _, out: &mut [f64]| out[0] = 0.0),
                        lambda: Arc::new(|_, y: &[f64]| 2.0 + y[0].sin()),
                        bound,
                    },
                )
                .unwrap();
            let spec = ModelSpec::new(RegimeSet::new(2).unwrap(), LevySpec::none(1), coeffs, 0.0, 1.0, vec![0.0], Regime(1)).unwrap();
            let report = validate_model(&spec, &cfg(10.0)).unwrap();
            assert_eq!(report.passed, should_pass, "bound {bound}");
            if !should_pass {
                assert!(!report.bound_violations.is_empty());
            }
        }
    }

    #[test]
    fn non_finite_coefficient_is_reported_with_point() {
        let spec = model_with_mu(Arc::new(|_, y: &[f64], _, out: &mut [f64]| {
            out[0] = if y[0] > 5.0 { f64::NAN } else { 0.0 }
        }));
        let err = validate_model(&spec, &cfg(10.0)).unwrap_err();
        assert!(matches!(err, SimError::ModelEvaluation { .. }));
    }
}
