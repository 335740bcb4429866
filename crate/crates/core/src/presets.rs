//! Ready-made models: the generalized exponential Lévy model and the
//! semi-Markov regime-switching model, with their analytic companions
//! (the log-drift J and the closed-form solution replay).

use crate::error::{Result, SimError};
use crate::model::{
    CoefficientSet, LevyKind, LevySpec, MarkMeasure, ModelSpec, QuadratureConfig, Regime, RegimeSet, SwitchChannel,
};
use crate::rng::Stream;
use crate::simulator::PathRecord;
use std::sync::Arc;

/// Generalized exponential Lévy model: per-regime log-volatility, constant
/// switching intensities, multiplicative switch jumps
/// Y -> Y e^{rho^{i,j}}, and Lévy jumps Y -> Y e^{sigma(c) x}.
#[derive(Clone, Debug)]
pub struct ExpLevyPreset {
    /// sigma(i) >= 0 per regime.
    pub sigma: Vec<f64>,
    /// Row-major K x K constants rho^{i,j} (log jump sizes at switches).
    pub rho: Vec<f64>,
    /// Row-major K x K constant intensities; 0 deactivates a pair.
    pub lambda: Vec<f64>,
    /// Scalar-mark Lévy measure (dim 1).
    pub levy: LevySpec,
    /// Deterministic rate term `r dt` (0 for the plain model).
    pub rate: f64,
    pub y0: f64,
    pub c0: Regime,
    pub start_time: f64,
    pub horizon: f64,
}

impl ExpLevyPreset {
    pub fn regime_count(&self) -> u32 {
        self.sigma.len() as u32
    }

    /// Single-regime geometric model, the building block of most checks.
    pub fn single_regime(sigma: f64, levy: LevySpec, y0: f64, horizon: f64) -> Self {
        ExpLevyPreset {
            sigma: vec![sigma],
            rho: vec![0.0],
            lambda: vec![0.0],
            levy,
            rate: 0.0,
            y0,
            c0: Regime(1),
            start_time: 0.0,
            horizon,
        }
    }
}

/// The log-drift of the exponential Lévy solution:
/// J(u) = -u^2/2 - int (e^{ux} - 1 - ux 1{|x| <= 1}) nu(dx).
///
/// The sign of the integral and of the compensated band is pinned by the
/// martingale property of the solution (E Y_t = Y_0 for the driftless
/// model); the acceptance suite exercises exactly that.
pub fn evaluate_j(u: f64, levy: &LevySpec, quad: QuadratureConfig, rng: &mut Stream) -> Result<f64> {
    if levy.dim != 1 {
        return Err(SimError::InvalidArgument("J(u) requires scalar marks".into()));
    }
    let integrand = |x: f64| -> f64 {
        let comp = if x.abs() <= 1.0 { u * x } else { 0.0 };
        (u * x).exp() - 1.0 - comp
    };
    let integral = match levy.event_measure() {
        None => 0.0,
        Some(MarkMeasure::Atoms(atoms)) => {
            let mut acc = 0.0;
            for (mass, mark) in atoms {
                let g = integrand(mark[0]);
                if !g.is_finite() {
                    return Err(SimError::InvalidArgument(format!(
                        "exponential moment of nu diverges at u={u}, x={}",
                        mark[0]
                    )));
                }
                acc += mass * g;
            }
            acc
        }
        Some(MarkMeasure::Sampled { total_rate, sampler }) => {
            let m = quad.mc_samples.max(2);
            let mut x = [0.0];
            let (mut sum, mut sumsq) = (0.0, 0.0);
            for _ in 0..m {
                sampler(rng, &mut x);
                let g = integrand(x[0]);
                if !g.is_finite() {
                    return Err(SimError::InvalidArgument(format!("exponential moment diverges at u={u}")));
                }
                sum += g;
                sumsq += g * g;
            }
            let mean = sum / m as f64;
            let var = (sumsq / m as f64 - mean * mean).max(0.0);
            let se = total_rate * (var / m as f64).sqrt();
            if se > quad.tol {
                return Err(SimError::Quadrature { achieved: se, tol: quad.tol, context: "J(u)" });
            }
            total_rate * mean
        }
    };
    // sub-epsilon band of a truncated measure: second-order surrogate
    let small = if let LevyKind::TruncatedInfiniteActivity { small_part_variance, .. } = &levy.kind {
        0.5 * u * u * small_part_variance[0]
    } else {
        0.0
    };
    Ok(-0.5 * u * u - integral - small)
}

/// int_{|x| <= 1} x nu(dx): the compensated-band mean of the driving Lévy
/// process (band fixed at 1, independent of the model truncation level).
pub fn unit_band_mean(levy: &LevySpec, quad: QuadratureConfig, rng: &mut Stream) -> Result<f64> {
    match levy.event_measure() {
        None => Ok(0.0),
        Some(MarkMeasure::Atoms(atoms)) => {
            Ok(atoms.iter().filter(|(_, x)| x[0].abs() <= 1.0).map(|(m, x)| m * x[0]).sum())
        }
        Some(MarkMeasure::Sampled { total_rate, sampler }) => {
            let m = quad.mc_samples.max(2);
            let mut x = [0.0];
            let mut sum = 0.0;
            for _ in 0..m {
                sampler(rng, &mut x);
                if x[0].abs() <= 1.0 {
                    sum += x[0];
                }
            }
            Ok(total_rate * sum / m as f64)
        }
    }
}

/// int_{|x| > a} (e^{sigma x} - 1) nu(dx): drift correction restoring the
/// fully compensated dynamics when the engine leaves the tail band
/// uncompensated.
fn tail_exp_correction(levy: &LevySpec, sigma: f64, quad: QuadratureConfig, rng: &mut Stream) -> Result<f64> {
    let a = levy.truncation;
    match levy.event_measure() {
        None => Ok(0.0),
        Some(MarkMeasure::Atoms(atoms)) => {
            let mut acc = 0.0;
            for (mass, x) in atoms {
                if x[0].abs() > a {
                    let g = (sigma * x[0]).exp() - 1.0;
                    if !g.is_finite() {
                        return Err(SimError::Preset(format!("exponential moment diverges beyond a at x={}", x[0])));
                    }
                    acc += mass * g;
                }
            }
            Ok(acc)
        }
        Some(MarkMeasure::Sampled { total_rate, sampler }) => {
            let m = quad.mc_samples.max(2);
            let mut x = [0.0];
            let mut sum = 0.0;
            for _ in 0..m {
                sampler(rng, &mut x);
                if x[0].abs() > a {
                    sum += (sigma * x[0]).exp() - 1.0;
                }
            }
            Ok(total_rate * sum / m as f64)
        }
    }
}

/// Build the exponential Lévy model:
/// dY = Y_{t-} (r dt + sigma(C) dW + int (e^{sigma(C) x} - 1) compensated
/// jumps + switch jumps), mapped onto the engine's split-band form with the
/// tail-compensation drift folded into mu.
pub fn build_exp_levy(preset: &ExpLevyPreset) -> Result<ModelSpec> {
    let k = preset.regime_count();
    if k == 0 {
        return Err(SimError::Preset("at least one regime required".into()));
    }
    if preset.rho.len() != (k * k) as usize || preset.lambda.len() != (k * k) as usize {
        return Err(SimError::Preset("rho and lambda must be K x K".into()));
    }
    for (i, s) in preset.sigma.iter().enumerate() {
        if *s < 0.0 || !s.is_finite() {
            return Err(SimError::Preset(format!("sigma({}) must be >= 0", i + 1)));
        }
    }
    if preset.levy.dim != 1 {
        return Err(SimError::Preset("exponential Lévy preset requires scalar marks".into()));
    }
    if preset.y0 <= 0.0 {
        return Err(SimError::Preset("y0 must be > 0".into()));
    }

    // per-regime tail drift correction, exact for atomic measures
    let mut tail = Vec::with_capacity(k as usize);
    let mut rng = Stream::derive(0x9e3779b9, 0, crate::rng::Driver::Quadrature);
    for i in 0..k as usize {
        tail.push(tail_exp_correction(&preset.levy, preset.sigma[i], QuadratureConfig::default(), &mut rng)?);
    }

    let sigmas = preset.sigma.clone();
    let rate = preset.rate;
    let mu_tail = tail.clone();
    let mu = Arc::new(move |_t: f64, y: &[f64], c: Regime, out: &mut [f64]| {
        out[0] = y[0] * (rate - mu_tail[c.index()]);
    });
    let sig = sigmas.clone();
    let sigma_fn = Arc::new(move |_t: f64, y: &[f64], c: Regime, out: &mut [f64]| {
        out[0] = y[0] * sig[c.index()];
    });
    let sg = sigmas.clone();
    let jump = Arc::new(move |_t: f64, y: &[f64], c: Regime, x: &[f64], out: &mut [f64]| {
        out[0] = y[0] * ((sg[c.index()] * x[0]).exp() - 1.0);
    });

    let mut coeffs = CoefficientSet::new(1, 1, k, mu, sigma_fn, jump);
    for i in 1..=k {
        for j in 1..=k {
            if i == j {
                continue;
            }
            let lam = preset.lambda[((i - 1) * k + (j - 1)) as usize];
            if lam < 0.0 || !lam.is_finite() {
                return Err(SimError::Preset(format!("lambda({i},{j}) must be finite and >= 0")));
            }
            if lam == 0.0 {
                continue;
            }
            let rho_const = preset.rho[((i - 1) * k + (j - 1)) as usize];
            let factor = rho_const.exp() - 1.0;
            coeffs.set_channel(
                Regime(i),
                Regime(j),
                SwitchChannel {
                    rho: Arc::new(move |_t: f64, y: &[f64], out: &mut [f64]| out[0] = y[0] * factor),
                    lambda: Arc::new(move |_, _| lam),
                    bound: lam,
                },
            )?;
        }
    }

    ModelSpec::new(
        RegimeSet::new(k)?,
        preset.levy.clone(),
        coeffs,
        preset.start_time,
        preset.horizon,
        vec![preset.y0],
        preset.c0,
    )
}

/// Closed-form solution evaluated on the recorded noise of a simulated
/// path, at every recorded time:
/// Y_t = Y_0 exp( int (r + J(sigma(C))) du + int sigma(C) dZ + sum rho ).
pub fn closed_form_exp_levy_series(preset: &ExpLevyPreset, path: &PathRecord) -> Result<Vec<f64>> {
    let noise = path
        .noise
        .as_ref()
        .ok_or_else(|| SimError::Replay("path was simulated without noise recording".into()))?;
    if noise.dim_w != 1 || path.dim != 1 {
        return Err(SimError::Replay("exponential Lévy replay requires d = p = 1".into()));
    }
    if matches!(preset.levy.kind, LevyKind::TruncatedInfiniteActivity { .. }) {
        return Err(SimError::Replay("closed form undefined for surrogate measures".into()));
    }
    if noise.w_increments.len() != path.times.len() - 1 {
        return Err(SimError::Replay("noise record does not span the grid".into()));
    }
    let quad = QuadratureConfig::default();
    let mut rng = Stream::derive(0x517cc1b7, 0, crate::rng::Driver::Quadrature);
    let m1 = unit_band_mean(&preset.levy, quad, &mut rng)?;
    let k = preset.regime_count() as usize;
    let mut j_of: Vec<f64> = Vec::with_capacity(k);
    for i in 0..k {
        j_of.push(evaluate_j(preset.sigma[i], &preset.levy, quad, &mut rng)?);
    }

    let mut series = Vec::with_capacity(path.times.len());
    let mut log_y = preset.y0.ln();
    series.push(preset.y0);
    let mut lev = path.levy_events.iter().peekable();
    let mut swi = path.switch_events.iter().peekable();
    for i in 0..path.times.len() - 1 {
        let (t0, t1) = (path.times[i], path.times[i + 1]);
        let c = path.regime_at(i);
        let seg = t1 - t0;
        let sigma_c = preset.sigma[c.index()];
        // Lévy increment over (t0, t1]: Brownian part + event marks - band drift
        let mut dz = noise.w_increments[i] - seg * m1;
        while let Some(ev) = lev.peek() {
            if ev.time <= t1 {
                dz += ev.mark[0];
                lev.next();
            } else {
                break;
            }
        }
        log_y += (preset.rate + j_of[c.index()]) * seg + sigma_c * dz;
        while let Some(ev) = swi.peek() {
            if ev.time <= t1 {
                let kk = preset.regime_count() as usize;
                log_y += preset.rho[ev.from.index() * kk + ev.to.index()];
                swi.next();
            } else {
                break;
            }
        }
        series.push(log_y.exp());
    }
    Ok(series)
}

/// Re-run the Euler scheme on the recorded noise of `path`, coarsened by
/// `factor` (every factor-th Euler boundary kept, all events kept at their
/// exact times). Valid for state-independent switching intensities, where
/// the recorded event times are the events of the coarsened path too.
pub fn euler_replay(spec: &ModelSpec, path: &PathRecord, factor: usize) -> Result<Vec<f64>> {
    let noise = path
        .noise
        .as_ref()
        .ok_or_else(|| SimError::Replay("path was simulated without noise recording".into()))?;
    if factor == 0 {
        return Err(SimError::Replay("coarsening factor must be >= 1".into()));
    }
    if noise.w_increments.len() != (path.times.len() - 1) * noise.dim_w {
        return Err(SimError::Replay("noise record does not span the grid".into()));
    }
    let d = spec.dim();
    let p = spec.coeffs.dim_w;

    // replay boundaries: every factor-th grid index plus every event index
    let mut is_boundary = vec![false; path.times.len()];
    for (step, idx) in path.grid_steps.iter().enumerate() {
        if step % factor == 0 {
            is_boundary[*idx] = true;
        }
    }
    *is_boundary.last_mut().unwrap() = true;
    let mut event_at: Vec<Option<(bool, usize)>> = vec![None; path.times.len()];
    for (n, ev) in path.levy_events.iter().enumerate() {
        let idx = path.index_at(ev.time);
        is_boundary[idx] = true;
        event_at[idx] = Some((false, n));
    }
    for (n, ev) in path.switch_events.iter().enumerate() {
        let idx = path.index_at(ev.time);
        is_boundary[idx] = true;
        event_at[idx] = Some((true, n));
    }

    let mut y = spec.initial_y.clone();
    let mut c = spec.initial_regime;
    let mut mu = vec![0.0; d];
    let mut sigma = vec![0.0; d * p];
    let mut comp = vec![0.0; d];
    let mut fjump = vec![0.0; d];
    let mut dw_acc = vec![0.0; p];
    let mut rng = Stream::derive(0x2545f491, 0, crate::rng::Driver::Quadrature);
    let mut series = vec![y.clone()];

    let mut seg_start_idx = 0usize;
    for i in 1..path.times.len() {
        for l in 0..p {
            dw_acc[l] += noise.w_increments[(i - 1) * p + l];
        }
        if !is_boundary[i] {
            continue;
        }
        let t0 = path.times[seg_start_idx];
        let t1 = path.times[i];
        let gap = t1 - t0;
        if gap > 0.0 {
            (spec.coeffs.mu)(t0, &y, c, &mut mu);
            (spec.coeffs.sigma)(t0, &y, c, &mut sigma);
            small_band(spec, t0, &y, c, &mut comp, &mut rng)?;
            for q in 0..d {
                let mut diff = 0.0;
                for l in 0..p {
                    diff += sigma[q * p + l] * dw_acc[l];
                }
                y[q] += (mu[q] - comp[q]) * gap + diff;
            }
        }
        if let Some((is_switch, n)) = event_at[i] {
            if is_switch {
                let ev = &path.switch_events[n];
                let ch = spec
                    .coeffs
                    .channel(ev.from, ev.to)
                    .ok_or_else(|| SimError::Replay("switch event on inactive pair".into()))?;
                (ch.rho)(ev.time, &y, &mut fjump);
                for q in 0..d {
                    y[q] += fjump[q];
                }
                c = ev.to;
            } else {
                let ev = &path.levy_events[n];
                (spec.coeffs.jump)(ev.time, &y, c, &ev.mark, &mut fjump);
                for q in 0..d {
                    y[q] += fjump[q];
                }
            }
        }
        series.push(y.clone());
        dw_acc.fill(0.0);
        seg_start_idx = i;
    }
    Ok(series.into_iter().map(|v| v[0]).collect())
}

fn small_band(
    spec: &ModelSpec,
    t: f64,
    y: &[f64],
    c: Regime,
    out: &mut [f64],
    rng: &mut Stream,
) -> Result<()> {
    let quad = QuadratureConfig { mc_samples: 512, tol: f64::INFINITY };
    crate::model::integrals::small_band_f_mean(spec, t, y, c, quad, rng, out)?;
    Ok(())
}

/// Holding-time distributions with closed-form density and CDF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HoldingLaw {
    Exponential { rate: f64 },
    GammaShape2 { rate: f64 },
}

impl HoldingLaw {
    pub fn density(&self, z: f64) -> f64 {
        if z < 0.0 {
            return 0.0;
        }
        match self {
            HoldingLaw::Exponential { rate } => rate * (-rate * z).exp(),
            HoldingLaw::GammaShape2 { rate } => rate * rate * z * (-rate * z).exp(),
        }
    }

    pub fn cdf(&self, z: f64) -> f64 {
        if z < 0.0 {
            return 0.0;
        }
        match self {
            HoldingLaw::Exponential { rate } => 1.0 - (-rate * z).exp(),
            HoldingLaw::GammaShape2 { rate } => 1.0 - (-rate * z).exp() * (1.0 + rate * z),
        }
    }
}

/// Semi-Markov switching structure: embedded chain P, per-pair holding
/// laws, and supplied hazard caps. The model state is the residence
/// coordinate R (unit drift, reset to zero at switches); intensities are
/// the renewal hazards lambda^{i,j}(R) = P_ij f_ij(R) / (1 - sum_m Q_im(R)).
#[derive(Clone, Debug)]
pub struct SemiMarkovPreset {
    /// Row-major K x K embedded transition matrix, zero diagonal.
    pub transition: Vec<f64>,
    /// Row-major K x K holding laws (diagonal entries ignored).
    pub holdings: Vec<HoldingLaw>,
    /// Row-major K x K hazard caps b^{i,j} on [0, T - r].
    pub hazard_caps: Vec<f64>,
    pub start_time: f64,
    pub horizon: f64,
    pub initial_regime: Regime,
}

/// Build the semi-Markov switching model over the residence state.
pub fn build_semi_markov(preset: &SemiMarkovPreset) -> Result<ModelSpec> {
    let k2 = preset.transition.len();
    let k = (k2 as f64).sqrt() as usize;
    if k * k != k2 || k < 2 {
        return Err(SimError::Preset("transition matrix must be K x K with K >= 2".into()));
    }
    if preset.holdings.len() != k2 || preset.hazard_caps.len() != k2 {
        return Err(SimError::Preset("holdings and hazard_caps must be K x K".into()));
    }
    for i in 0..k {
        if preset.transition[i * k + i] != 0.0 {
            return Err(SimError::Preset("transition diagonal must be zero".into()));
        }
        let row: f64 = (0..k).map(|j| preset.transition[i * k + j]).sum();
        if (row - 1.0).abs() > 1e-9 {
            return Err(SimError::Preset(format!("transition row {} sums to {row}, expected 1", i + 1)));
        }
        for j in 0..k {
            if preset.transition[i * k + j] < 0.0 {
                return Err(SimError::Preset("transition entries must be >= 0".into()));
            }
        }
    }

    let span = preset.horizon - preset.start_time;
    let survival = |i: usize, z: f64| -> f64 {
        let mut q = 0.0;
        for m in 0..k {
            if m != i {
                q += preset.transition[i * k + m] * preset.holdings[i * k + m].cdf(z);
            }
        }
        1.0 - q
    };

    // reject hazards that blow up or exceed their caps on the reachable
    // residence range
    for i in 0..k {
        for j in 0..k {
            if i == j || preset.transition[i * k + j] == 0.0 {
                continue;
            }
            let cap = preset.hazard_caps[i * k + j];
            if !cap.is_finite() || cap < 0.0 {
                return Err(SimError::Preset(format!("hazard cap ({},{}) must be finite", i + 1, j + 1)));
            }
            let probes = 2048;
            for q in 0..=probes {
                let z = span * q as f64 / probes as f64;
                let den = survival(i, z);
                if den <= 1e-12 {
                    return Err(SimError::HazardDomain {
                        from: i as u32 + 1,
                        to: j as u32 + 1,
                        residence: z,
                    });
                }
                let hz = preset.transition[i * k + j] * preset.holdings[i * k + j].density(z) / den;
                if hz > cap * (1.0 + 1e-9) {
                    return Err(SimError::Preset(format!(
                        "hazard ({},{}) = {hz} exceeds cap {cap} at residence {z}",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
    }

    let mu = Arc::new(|_t: f64, _y: &[f64], _c: Regime, out: &mut [f64]| out[0] = 1.0);
    let sigma = Arc::new(|_t: f64, _y: &[f64], _c: Regime, out: &mut [f64]| out[0] = 0.0);
    let mut coeffs = CoefficientSet::diffusion_only(1, 1, k as u32, mu, sigma);

    for i in 0..k {
        for j in 0..k {
            if i == j || preset.transition[i * k + j] == 0.0 {
                continue;
            }
            let p_ij = preset.transition[i * k + j];
            let law = preset.holdings[i * k + j];
            let row_p: Vec<f64> = (0..k).map(|m| preset.transition[i * k + m]).collect();
            let row_laws: Vec<HoldingLaw> = (0..k).map(|m| preset.holdings[i * k + m]).collect();
            let row_i = i;
            let lambda = Arc::new(move |_t: f64, y: &[f64]| {
                let z = y[0].max(0.0);
                let mut q = 0.0;
                for m in 0..row_p.len() {
                    if m != row_i {
                        q += row_p[m] * row_laws[m].cdf(z);
                    }
                }
                let den = 1.0 - q;
                if den <= 0.0 {
                    return f64::NAN;
                }
                p_ij * law.density(z) / den
            });
            coeffs.set_channel(
                Regime(i as u32 + 1),
                Regime(j as u32 + 1),
                SwitchChannel {
                    rho: Arc::new(|_t: f64, y: &[f64], out: &mut [f64]| out[0] = -y[0]),
                    lambda,
                    bound: preset.hazard_caps[i * k + j],
                },
            )?;
        }
    }

    ModelSpec::new(
        RegimeSet::new(k as u32)?,
        LevySpec::none(1),
        coeffs,
        preset.start_time,
        preset.horizon,
        vec![0.0],
        preset.initial_regime,
    )
}
