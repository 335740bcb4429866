//! Test functions v(t, y, c) with first time- and first/second
//! state-derivatives, analytic where supplied and central finite
//! differences otherwise.

use super::Regime;
use std::sync::Arc;

pub type ScalarFn = Arc<dyn Fn(f64, &[f64], Regime) -> f64 + Send + Sync>;
pub type GradFn = Arc<dyn Fn(f64, &[f64], Regime, &mut [f64]) + Send + Sync>;

/// A C^{1,2} test function for generator evaluation and Dynkin tests.
#[derive(Clone)]
pub struct TestFunction {
    pub name: String,
    pub value: ScalarFn,
    /// Analytic gradient in y (d-buffer); finite differences if absent.
    pub gradient: Option<GradFn>,
    /// Analytic Hessian in y (row-major d x d buffer); finite differences if absent.
    pub hessian: Option<GradFn>,
    /// Analytic time derivative; finite differences if absent.
    pub time_deriv: Option<ScalarFn>,
    /// Radius of the support ball around the origin, if compactly supported.
    pub support_radius: Option<f64>,
}

/// Central finite-difference step: 1e-4 * max(1, |y|).
pub fn fd_step(y: &[f64]) -> f64 {
    1e-4 * super::norm2(y).max(1.0)
}

impl TestFunction {
    pub fn from_value(name: impl Into<String>, value: ScalarFn) -> Self {
        TestFunction {
            name: name.into(),
            value,
            gradient: None,
            hessian: None,
            time_deriv: None,
            support_radius: None,
        }
    }

    pub fn eval(&self, t: f64, y: &[f64], c: Regime) -> f64 {
        (self.value)(t, y, c)
    }

    pub fn gradient_into(&self, t: f64, y: &[f64], c: Regime, out: &mut [f64]) {
        match &self.gradient {
            Some(g) => g(t, y, c, out),
            None => {
                let h = fd_step(y);
                let mut yp = y.to_vec();
                for i in 0..y.len() {
                    yp[i] = y[i] + h;
                    let vp = (self.value)(t, &yp, c);
                    yp[i] = y[i] - h;
                    let vm = (self.value)(t, &yp, c);
                    yp[i] = y[i];
                    out[i] = (vp - vm) / (2.0 * h);
                }
            }
        }
    }

    pub fn hessian_into(&self, t: f64, y: &[f64], c: Regime, out: &mut [f64]) {
        let d = y.len();
        match &self.hessian {
            Some(hfn) => hfn(t, y, c, out),
            None => {
                let h = fd_step(y);
                let v0 = (self.value)(t, y, c);
                let mut yp = y.to_vec();
                for i in 0..d {
                    yp[i] = y[i] + h;
                    let vp = (self.value)(t, &yp, c);
                    yp[i] = y[i] - h;
                    let vm = (self.value)(t, &yp, c);
                    yp[i] = y[i];
                    out[i * d + i] = (vp - 2.0 * v0 + vm) / (h * h);
                }
                for i in 0..d {
                    for j in (i + 1)..d {
                        yp[i] = y[i] + h;
                        yp[j] = y[j] + h;
                        let vpp = (self.value)(t, &yp, c);
                        yp[j] = y[j] - h;
                        let vpm = (self.value)(t, &yp, c);
                        yp[i] = y[i] - h;
                        let vmm = (self.value)(t, &yp, c);
                        yp[j] = y[j] + h;
                        let vmp = (self.value)(t, &yp, c);
                        yp[i] = y[i];
                        yp[j] = y[j];
                        let mixed = (vpp - vpm - vmp + vmm) / (4.0 * h * h);
                        out[i * d + j] = mixed;
                        out[j * d + i] = mixed;
                    }
                }
            }
        }
    }

    pub fn time_deriv(&self, t: f64, y: &[f64], c: Regime) -> f64 {
        match &self.time_deriv {
            Some(f) => f(t, y, c),
            None => {
                let h = 1e-4 * t.abs().max(1.0);
                ((self.value)(t + h, y, c) - (self.value)(t - h, y, c)) / (2.0 * h)
            }
        }
    }
}

/// Smooth compactly supported bump phi(s) = exp(1 - 1/(1 - s)) for s in
/// [0, 1), 0 beyond, evaluated at s = |y - center|^2 / radius^2, with a
/// per-regime amplitude. All derivatives are analytic.
pub fn bump(
    name: impl Into<String>,
    center: Vec<f64>,
    radius: f64,
    amplitudes: Vec<f64>,
) -> TestFunction {
    let phi = |s: f64| -> f64 {
        if s >= 1.0 {
            0.0
        } else {
            (1.0 - 1.0 / (1.0 - s)).exp()
        }
    };
    // phi'(s) = -phi(s)/(1-s)^2, phi''(s) = phi(s) * (1/(1-s)^4 - 2/(1-s)^3)
    let dphi = move |s: f64| -> f64 {
        if s >= 1.0 {
            0.0
        } else {
            -phi(s) / ((1.0 - s) * (1.0 - s))
        }
    };
    let d2phi = move |s: f64| -> f64 {
        if s >= 1.0 {
            0.0
        } else {
            let q = 1.0 - s;
            phi(s) * (1.0 / (q * q * q * q) - 2.0 / (q * q * q))
        }
    };

    let amp = move |amps: &[f64], c: Regime| -> f64 {
        let i = c.index();
        if i < amps.len() {
            amps[i]
        } else {
            *amps.last().unwrap_or(&0.0)
        }
    };

    let r2 = radius * radius;
    let (c1, c2, c3) = (center.clone(), center.clone(), center.clone());
    let (a1, a2, a3) = (amplitudes.clone(), amplitudes.clone(), amplitudes.clone());

    let value: ScalarFn = Arc::new(move |_t, y, c| {
        let s = y.iter().zip(&c1).map(|(yi, ci)| (yi - ci) * (yi - ci)).sum::<f64>() / r2;
        amp(&a1, c) * phi(s)
    });
    let gradient: GradFn = Arc::new(move |_t, y, c, out: &mut [f64]| {
        let s = y.iter().zip(&c2).map(|(yi, ci)| (yi - ci) * (yi - ci)).sum::<f64>() / r2;
        let scale = amp(&a2, c) * dphi(s) * 2.0 / r2;
        for (o, (yi, ci)) in out.iter_mut().zip(y.iter().zip(&c2)) {
            *o = scale * (yi - ci);
        }
    });
    let hessian: GradFn = Arc::new(move |_t, y, c, out: &mut [f64]| {
        let d = y.len();
        let s = y.iter().zip(&c3).map(|(yi, ci)| (yi - ci) * (yi - ci)).sum::<f64>() / r2;
        let a = amp(&a3, c);
        let g1 = a * dphi(s) * 2.0 / r2;
        let g2 = a * d2phi(s) * 4.0 / (r2 * r2);
        for i in 0..d {
            for j in 0..d {
                let u = (y[i] - c3[i]) * (y[j] - c3[j]);
                out[i * d + j] = g2 * u + if i == j { g1 } else { 0.0 };
            }
        }
    });

    let center_norm = super::norm2(&center);
    TestFunction {
        name: name.into(),
        value,
        gradient: Some(gradient),
        hessian: Some(hessian),
        time_deriv: Some(Arc::new(|_, _, _| 0.0)),
        support_radius: Some(center_norm + radius),
    }
}

/// The standard compactly supported suite used by the Dynkin tests: five
/// bumps with distinct centers, radii and regime weightings.
pub fn standard_suite(dim: usize, regimes: u32) -> Vec<TestFunction> {
    let k = regimes as usize;
    let amps = |f: &dyn Fn(usize) -> f64| (0..k).map(f).collect::<Vec<_>>();
    let center = |v: f64| {
        let mut c = vec![0.0; dim];
        c[0] = v;
        c
    };
    vec![
        bump("bump_wide", vec![0.0; dim], 8.0, amps(&|i| 1.0 + 0.5 * i as f64)),
        bump("bump_tilt", center(1.0), 6.0, amps(&|i| 1.0 - 0.3 * i as f64)),
        bump("bump_left", center(-2.0), 7.0, amps(&|i| 0.5 + 0.25 * (i % 2) as f64)),
        bump("bump_regime", vec![0.0; dim], 9.0, amps(&|i| if i == 0 { 0.0 } else { 1.0 })),
        bump("bump_narrow", center(0.5), 5.0, amps(&|i| 2.0 / (1.0 + i as f64))),
    ]
}
