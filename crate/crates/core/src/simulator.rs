//! Discrete-time approximation of the jump-diffusion with switching by a
//! hybrid Euler / event-driven scheme.
//!
//! Each Euler step collects the Poisson-measure events and the switching
//! candidates inside the step and applies them in time order; the
//! continuous part (drift, diffusion, small-jump compensator, sub-epsilon
//! surrogate) advances between events with gap-scaled Brownian increments.
//! Switching intensities are evaluated at the frozen left grid state,
//! matching the left-limit convention of the SDE; this also makes the
//! dominating-construction weights an exact reweighting of the discretized
//! thinning law whenever the intensities do not depend on time explicitly.
//! Rejected thinning candidates consult only the frozen state and leave no
//! trace on the path.

use crate::error::{Result, SimError};
use crate::levy::{sample_events, sample_surrogate, LevyEvent};
use crate::model::integrals::{jump_jacobian_at_zero, small_band_f_mean};
use crate::model::{all_finite, norm2, LevyKind, ModelSpec, QuadratureConfig, Regime};
use crate::rng::{Driver, Stream};
use crate::switching::{CandidateOutcome, Construction, LikelihoodWeight, SwitchClocks, SwitchEvent};

/// Divergence guard: a path whose state exceeds this magnitude aborts.
pub const DIVERGENCE_GUARD: f64 = 1e12;

/// Simulation parameters shared by every path of an ensemble.
#[derive(Debug, Clone)]
pub struct SimulationConfig {
    /// Euler step.
    pub dt: f64,
    pub construction: Construction,
    /// Output sampling times (for summaries and CSV export).
    pub record_grid: Vec<f64>,
    pub master_seed: u64,
    pub path_count: usize,
    /// Store per-segment Brownian increments for noise-matched replay.
    pub record_noise: bool,
}

impl SimulationConfig {
    pub fn new(dt: f64, construction: Construction, master_seed: u64, path_count: usize) -> Self {
        SimulationConfig { dt, construction, record_grid: Vec::new(), master_seed, path_count, record_noise: false }
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let span = spec.horizon - spec.start_time;
        if !(self.dt > 0.0 && self.dt <= span) {
            return Err(SimError::InvalidArgument(format!("dt must satisfy 0 < dt <= {span}")));
        }
        if self.path_count == 0 {
            return Err(SimError::InvalidArgument("path_count must be >= 1".into()));
        }
        for t in &self.record_grid {
            if *t < spec.start_time - 1e-12 || *t > spec.horizon + 1e-12 {
                return Err(SimError::InvalidArgument(format!("record time {t} outside [r, T]")));
            }
        }
        Ok(())
    }
}

/// A Poisson-measure event as applied to the path.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyEventApplied {
    pub time: f64,
    pub mark: Vec<f64>,
    pub y_before: Vec<f64>,
    pub delta_y: Vec<f64>,
    pub regime: Regime,
    /// Whether the mark lies in the uncompensated band ||x|| > a.
    pub big: bool,
}

/// Per-segment driving noise for replay: Brownian increments aligned with
/// the recorded segments (one p-vector per consecutive pair of times).
#[derive(Debug, Clone, Default)]
pub struct NoiseRecord {
    pub w_increments: Vec<f64>,
    pub dim_w: usize,
}

/// One simulated trajectory of (Y, C) with its full event log.
#[derive(Debug, Clone)]
pub struct PathRecord {
    /// Path index; together with the master seed it identifies the streams.
    pub seed: u64,
    /// Recorded times: start, every Euler grid point, every event time, T.
    pub times: Vec<f64>,
    /// Row-major (time, component) states, post-event at event times.
    pub states: Vec<f64>,
    pub dim: usize,
    /// Regime at each recorded time (post-event).
    pub regimes: Vec<u32>,
    /// Residence time R at each recorded time: elapsed since last switch.
    pub residences: Vec<f64>,
    /// Indices into `times` that are Euler grid boundaries, in step order.
    pub grid_steps: Vec<usize>,
    pub switch_events: Vec<SwitchEvent>,
    pub levy_events: Vec<LevyEventApplied>,
    /// Row-major K x K switch counters H^{i,j} at the horizon.
    pub h_counters: Vec<u64>,
    /// Doléans-Dade log-weight; 0 under the thinning construction.
    pub log_weight: f64,
    pub noise: Option<NoiseRecord>,
}

impl PathRecord {
    pub fn state_at(&self, idx: usize) -> &[f64] {
        &self.states[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn regime_at(&self, idx: usize) -> Regime {
        Regime(self.regimes[idx])
    }

    /// Index of the last recorded time <= t (càdlàg evaluation).
    pub fn index_at(&self, t: f64) -> usize {
        match self.times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        }
    }

    pub fn value_at(&self, t: f64) -> (&[f64], Regime) {
        let i = self.index_at(t);
        (self.state_at(i), self.regime_at(i))
    }

    pub fn terminal(&self) -> (&[f64], Regime) {
        let i = self.times.len() - 1;
        (self.state_at(i), self.regime_at(i))
    }

    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }

    /// Structural invariants of the construction; returns human-readable
    /// violations (empty = clean path).
    pub fn check_invariants(&self, spec: &ModelSpec) -> Vec<String> {
        let mut out = Vec::new();
        let k = spec.regimes.count() as usize;

        // no common jump timestamps across drivers, and none within a driver
        let mut event_times: Vec<(f64, u8)> = self
            .levy_events
            .iter()
            .map(|e| (e.time, 0u8))
            .chain(self.switch_events.iter().map(|e| (e.time, 1u8)))
            .collect();
        event_times.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in event_times.windows(2) {
            if w[0].0 == w[1].0 {
                out.push(format!("common jump timestamp at t={}", w[0].0));
            }
        }

        // regime path consistency: C changes only at switch events, with
        // the step j - i of the event
        let mut sev = self.switch_events.iter().peekable();
        for w in 0..self.times.len() - 1 {
            let (c0, c1) = (self.regimes[w], self.regimes[w + 1]);
            let t1 = self.times[w + 1];
            let mut expected = c0;
            while let Some(ev) = sev.peek() {
                if ev.time <= t1 {
                    if ev.from.0 != expected {
                        out.push(format!("switch from {} but regime was {} at t={}", ev.from, expected, ev.time));
                    }
                    expected = (expected as i64 + (ev.to.0 as i64 - ev.from.0 as i64)) as u32;
                    sev.next();
                } else {
                    break;
                }
            }
            if c1 != expected {
                out.push(format!("regime {} at t={} but events imply {}", c1, t1, expected));
            }
            if !(1..=k as u32).contains(&c1) {
                out.push(format!("regime {} outside 1..={k}", c1));
            }
        }

        // switch jumps are exactly rho, switch counters match the log
        let mut h = vec![0u64; k * k];
        let mut shift = vec![0.0; self.dim];
        for ev in &self.switch_events {
            if ev.from == ev.to {
                out.push("switch event with from == to".into());
                continue;
            }
            h[ev.from.index() * k + ev.to.index()] += 1;
            if let Some(ch) = spec.coeffs.channel(ev.from, ev.to) {
                (ch.rho)(ev.time, &ev.y_before, &mut shift);
                for i in 0..self.dim {
                    if ev.y_after[i] - ev.y_before[i] != shift[i] {
                        out.push(format!("switch shift not exactly rho at t={}", ev.time));
                        break;
                    }
                }
            } else {
                out.push(format!("switch event on inactive pair ({},{})", ev.from, ev.to));
            }
        }
        if h != self.h_counters {
            out.push("H counters disagree with the switch log".into());
        }

        // Lévy jumps are exactly F at the pre-event state
        let mut f = vec![0.0; self.dim];
        for ev in &self.levy_events {
            (spec.coeffs.jump)(ev.time, &ev.y_before, ev.regime, &ev.mark, &mut f);
            if f.iter().zip(&ev.delta_y).any(|(a, b)| a != b) {
                out.push(format!("levy jump not exactly F at t={}", ev.time));
            }
            let big = norm2(&ev.mark) > spec.levy.truncation;
            if big != ev.big {
                out.push(format!("levy band misclassified at t={}", ev.time));
            }
        }

        // residence resets at switches and grows at unit rate
        let mut last_switch = spec.start_time;
        let mut sev = self.switch_events.iter().peekable();
        for (idx, t) in self.times.iter().enumerate() {
            while let Some(ev) = sev.peek() {
                if ev.time <= *t {
                    last_switch = ev.time;
                    sev.next();
                } else {
                    break;
                }
            }
            if self.residences[idx] != t - last_switch {
                out.push(format!("residence {} at t={t}, expected {}", self.residences[idx], t - last_switch));
            }
        }

        out
    }
}

struct PathStreams {
    wiener: Stream,
    levy_counts: Stream,
    levy_marks: Stream,
    surrogate: Stream,
    quadrature: Stream,
    thinning: Stream,
    clocks: Vec<Stream>,
}

impl PathStreams {
    fn derive(master_seed: u64, path_index: u64, regimes: u32) -> Self {
        let k = regimes as usize;
        let mut clocks = Vec::with_capacity(k * k);
        for i in 1..=regimes {
            for j in 1..=regimes {
                clocks.push(Stream::derive(master_seed, path_index, Driver::SwitchClock { from: i, to: j }));
            }
        }
        PathStreams {
            wiener: Stream::derive(master_seed, path_index, Driver::Wiener),
            levy_counts: Stream::derive(master_seed, path_index, Driver::LevyCounts),
            levy_marks: Stream::derive(master_seed, path_index, Driver::LevyMarks),
            surrogate: Stream::derive(master_seed, path_index, Driver::SmallJumpSurrogate),
            quadrature: Stream::derive(master_seed, path_index, Driver::Quadrature),
            thinning: Stream::derive(master_seed, path_index, Driver::Thinning),
            clocks,
        }
    }
}

// unlimited-tolerance quadrature for in-path compensator integrals: the
// Monte Carlo noise of a sampled measure is part of the scheme there
const SIM_QUAD: QuadratureConfig = QuadratureConfig { mc_samples: 512, tol: f64::INFINITY };

enum Pending {
    Switch { to: Regime, time: f64, lambda: f64, bound: f64 },
    Levy { big: bool, time: f64 },
    StepEnd,
}

/// Simulate one path with the streams of `path_index`.
pub fn simulate_path(spec: &ModelSpec, cfg: &SimulationConfig, path_index: u64) -> Result<PathRecord> {
    cfg.validate(spec)?;
    let mut streams = PathStreams::derive(cfg.master_seed, path_index, spec.regimes.count());

    let d = spec.coeffs.dim_y;
    let p = spec.coeffs.dim_w;
    let k = spec.regimes.count() as usize;
    let (r, horizon) = (spec.start_time, spec.horizon);
    let n_steps = ((horizon - r) / cfg.dt - 1e-9).ceil().max(1.0) as usize;

    let mut path = PathRecord {
        seed: path_index,
        times: Vec::with_capacity(n_steps + 8),
        states: Vec::with_capacity((n_steps + 8) * d),
        dim: d,
        regimes: Vec::with_capacity(n_steps + 8),
        residences: Vec::with_capacity(n_steps + 8),
        grid_steps: Vec::with_capacity(n_steps + 1),
        switch_events: Vec::new(),
        levy_events: Vec::new(),
        h_counters: vec![0; k * k],
        log_weight: 0.0,
        noise: cfg.record_noise.then(|| NoiseRecord { w_increments: Vec::new(), dim_w: p }),
    };

    let mut y = spec.initial_y.clone();
    let mut c = spec.initial_regime;
    let mut residence = 0.0f64;
    let mut weight = LikelihoodWeight::default();
    let dominating = cfg.construction == Construction::Dominating;

    let mut clocks = SwitchClocks::new(&spec.coeffs, spec.regimes, c, r, &mut streams.clocks);

    // scratch buffers
    let mut mu = vec![0.0; d];
    let mut sigma = vec![0.0; d * p];
    let mut comp = vec![0.0; d];
    let mut fjump = vec![0.0; d];
    let mut y_frozen = y.clone();
    let mut big_events: Vec<LevyEvent> = Vec::new();
    let mut small_events: Vec<LevyEvent> = Vec::new();
    let mut dw = vec![0.0; p];
    let has_levy = !spec.levy.is_none();
    let has_surrogate = matches!(spec.levy.kind, LevyKind::TruncatedInfiniteActivity { .. });
    let mut jac = vec![0.0; d * spec.levy.dim.max(1)];

    fn record(path: &mut PathRecord, d: usize, t: f64, y: &[f64], c: Regime, residence: f64) {
        if path.times.last().map_or(false, |last| *last == t) {
            // boundary collision: keep one entry with the post-event state
            let idx = path.times.len() - 1;
            path.states[idx * d..(idx + 1) * d].copy_from_slice(y);
            path.regimes[idx] = c.0;
            path.residences[idx] = residence;
        } else {
            path.times.push(t);
            path.states.extend_from_slice(y);
            path.regimes.push(c.0);
            path.residences.push(residence);
        }
    }

    fn guard(t: f64, y: &[f64]) -> Result<()> {
        if !all_finite(y) || y.iter().any(|v| v.abs() > DIVERGENCE_GUARD) {
            let last: Vec<f64> = y.iter().map(|v| if v.is_finite() { *v } else { 0.0 }).collect();
            return Err(SimError::PathDiverged { t, y: last });
        }
        Ok(())
    }

    record(&mut path, d, r, &y, c, residence);
    path.grid_steps.push(0);

    for step in 0..n_steps {
        let step_start = r + step as f64 * cfg.dt;
        let step_end = if step + 1 == n_steps { horizon } else { r + (step + 1) as f64 * cfg.dt };
        if step_end <= step_start {
            continue;
        }
        y_frozen.copy_from_slice(&y);

        big_events.clear();
        small_events.clear();
        if has_levy {
            sample_events(
                &spec.levy,
                step_start,
                step_end - step_start,
                &mut streams.levy_counts,
                &mut streams.levy_marks,
                &mut big_events,
                &mut small_events,
            )?;
        }
        let mut bi = 0usize;
        let mut si = 0usize;

        let mut s = step_start;
        loop {
            let next_big = big_events.get(bi).map(|e| e.time).unwrap_or(f64::INFINITY);
            let next_small = small_events.get(si).map(|e| e.time).unwrap_or(f64::INFINITY);
            let next_levy = next_big.min(next_small);
            let next_switch = clocks.next_candidate();
            let switch_time = next_switch.map(|(_, t)| t).unwrap_or(f64::INFINITY);

            // Lévy events win float-equal ties by convention
            let pending = if switch_time < next_levy && switch_time <= step_end {
                let (to, tau) = next_switch.expect("candidate present");
                // thinning consults only the frozen state; a rejection
                // re-arms the clock and leaves no trace on the path
                match clocks.resolve_candidate(
                    &spec.coeffs,
                    cfg.construction,
                    to,
                    tau,
                    &y_frozen,
                    &mut streams.clocks,
                    &mut streams.thinning,
                )? {
                    CandidateOutcome::Rejected => continue,
                    CandidateOutcome::Fire { to, lambda, bound } => {
                        Pending::Switch { to, time: tau, lambda, bound }
                    }
                }
            } else if next_levy <= step_end {
                Pending::Levy { big: next_big <= next_small, time: next_levy }
            } else {
                Pending::StepEnd
            };

            let target = match &pending {
                Pending::Switch { time, .. } => *time,
                Pending::Levy { time, .. } => *time,
                Pending::StepEnd => step_end,
            };

            // continuous update over (s, target]
            let gap = target - s;
            if gap > 0.0 {
                (spec.coeffs.mu)(s, &y, c, &mut mu);
                (spec.coeffs.sigma)(s, &y, c, &mut sigma);
                if !all_finite(&mu) || !all_finite(&sigma) {
                    return Err(SimError::ModelEvaluation { what: "coefficients", t: s, y: y.clone(), c: c.0 });
                }
                if has_levy {
                    small_band_f_mean(spec, s, &y, c, SIM_QUAD, &mut streams.quadrature, &mut comp)?;
                }
                if has_surrogate {
                    if let LevyKind::TruncatedInfiniteActivity { epsilon, .. } = &spec.levy.kind {
                        jump_jacobian_at_zero(spec, s, &y, c, *epsilon, &mut jac);
                    }
                }
                for dwi in dw.iter_mut() {
                    *dwi = streams.wiener.normal() * gap.sqrt();
                }
                if let Some(n) = path.noise.as_mut() {
                    n.w_increments.extend_from_slice(&dw);
                }
                for i in 0..d {
                    let mut diff = 0.0;
                    for l in 0..p {
                        diff += sigma[i * p + l] * dw[l];
                    }
                    y[i] += (mu[i] - comp[i]) * gap + diff;
                }
                if has_surrogate {
                    if let Some(drawn) = sample_surrogate(&spec.levy, gap, &mut streams.surrogate)? {
                        let n = spec.levy.dim;
                        for i in 0..d {
                            let mut acc = 0.0;
                            for q in 0..n {
                                acc += jac[i * n + q] * drawn[q];
                            }
                            y[i] += acc;
                        }
                    }
                }
                if dominating {
                    weight.accrue_segment(&spec.coeffs, spec.regimes, c, s, &y_frozen, gap)?;
                }
                residence += gap;
                s = target;
                guard(s, &y)?;
            } else {
                s = target;
            }

            match pending {
                Pending::StepEnd => {
                    record(&mut path, d, step_end, &y, c, residence);
                    path.grid_steps.push(path.times.len() - 1);
                    break;
                }
                Pending::Levy { big, .. } => {
                    let ev = if big {
                        bi += 1;
                        &big_events[bi - 1]
                    } else {
                        si += 1;
                        &small_events[si - 1]
                    };
                    (spec.coeffs.jump)(ev.time, &y, c, &ev.mark, &mut fjump);
                    if !all_finite(&fjump) {
                        return Err(SimError::ModelEvaluation { what: "F", t: ev.time, y: y.clone(), c: c.0 });
                    }
                    let y_before = y.clone();
                    for i in 0..d {
                        y[i] += fjump[i];
                    }
                    path.levy_events.push(LevyEventApplied {
                        time: ev.time,
                        mark: ev.mark.clone(),
                        y_before,
                        delta_y: fjump.clone(),
                        regime: c,
                        big,
                    });
                    guard(ev.time, &y)?;
                    record(&mut path, d, ev.time, &y, c, residence);
                }
                Pending::Switch { to, time, lambda, bound } => {
                    let ch = spec.coeffs.channel(c, to).expect("active channel");
                    (ch.rho)(time, &y, &mut fjump);
                    if !all_finite(&fjump) {
                        return Err(SimError::ModelEvaluation { what: "rho", t: time, y: y.clone(), c: c.0 });
                    }
                    let y_before = y.clone();
                    for i in 0..d {
                        y[i] += fjump[i];
                    }
                    path.switch_events.push(SwitchEvent { time, from: c, to, y_before, y_after: y.clone() });
                    path.h_counters[c.index() * k + to.index()] += 1;
                    if dominating {
                        weight.accrue_jump(lambda, bound);
                    }
                    c = to;
                    residence = 0.0;
                    clocks.switch_to(&spec.coeffs, to, time, &mut streams.clocks);
                    guard(time, &y)?;
                    record(&mut path, d, time, &y, c, residence);
                }
            }
        }
    }

    path.log_weight = if dominating { weight.log_weight } else { 0.0 };
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoefficientSet, LevySpec, MarkMeasure, RegimeSet, SwitchChannel};
    use std::sync::Arc;

    fn frozen_model() -> ModelSpec {
        let coeffs = CoefficientSet::diffusion_only(
            1,
            1,
            2,
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = 0.0),
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = 0.0),
        );
        ModelSpec::new(RegimeSet::new(2).unwrap(), LevySpec::none(1), coeffs, 0.0, 1.0, vec![0.7], Regime(1)).unwrap()
    }

    #[test]
    fn dead_drivers_keep_state_constant() {
        let spec = frozen_model();
        let cfg = SimulationConfig::new(0.1, Construction::Thinning, 42, 1);
        let path = simulate_path(&spec, &cfg, 0).unwrap();
        for idx in 0..path.times.len() {
            assert_eq!(path.state_at(idx), &[0.7]);
            assert_eq!(path.regime_at(idx), Regime(1));
        }
        assert!(path.switch_events.is_empty());
        assert!(path.levy_events.is_empty());
        assert_eq!(path.log_weight, 0.0);
        assert!(path.check_invariants(&spec).is_empty());
    }

    #[test]
    fn brownian_terminal_variance_matches() {
        let coeffs = CoefficientSet::diffusion_only(
            1,
            1,
            1,
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = 0.0),
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = 1.0),
        );
        let spec =
            ModelSpec::new(RegimeSet::new(1).unwrap(), LevySpec::none(1), coeffs, 0.0, 1.0, vec![0.0], Regime(1))
                .unwrap();
        let cfg = SimulationConfig::new(0.01, Construction::Thinning, 7, 1);
        let n = 20_000;
        let mut sumsq = 0.0;
        for i in 0..n {
            let path = simulate_path(&spec, &cfg, i).unwrap();
            let (y, _) = path.terminal();
            sumsq += y[0] * y[0];
        }
        let var = sumsq / n as f64;
        // Var(Y_T) = T = 1; SE of the variance estimate ~ sqrt(2/n)
        let band = 3.0 * (2.0 / n as f64).sqrt();
        assert!((var - 1.0).abs() < band, "var {var}");
    }

    #[test]
    fn residence_and_switch_bookkeeping_are_exact() {
        let mut coeffs = CoefficientSet::diffusion_only(
            1,
            1,
            2,
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = 0.0),
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = 0.0),
        );
        for (from, to) in [(1u32, 2u32), (2, 1)] {
            coeffs
                .set_channel(
                    Regime(from),
                    Regime(to),
                    SwitchChannel {
                        rho: Arc::new(|_, y: &[f64], out: &mut [f64]| out[0] = -y[0]),
                        lambda: Arc::new(|_, _| 3.0),
                        bound: 3.0,
                    },
                )
                .unwrap();
        }
        let spec =
            ModelSpec::new(RegimeSet::new(2).unwrap(), LevySpec::none(1), coeffs, 0.0, 2.0, vec![0.5], Regime(1))
                .unwrap();
        let cfg = SimulationConfig::new(0.05, Construction::Thinning, 5, 1);
        let mut saw_switch = false;
        for i in 0..200 {
            let path = simulate_path(&spec, &cfg, i).unwrap();
            assert!(path.check_invariants(&spec).is_empty(), "{:?}", path.check_invariants(&spec));
            saw_switch |= !path.switch_events.is_empty();
        }
        assert!(saw_switch);
    }

    #[test]
    fn compound_poisson_events_apply_f_exactly() {
        let mut coeffs = CoefficientSet::diffusion_only(
            1,
            1,
            1,
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = 0.0),
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = 0.0),
        );
        coeffs.jump = Arc::new(|_, y: &[f64], _, x: &[f64], out: &mut [f64]| out[0] = y[0] * x[0]);
        let levy =
            LevySpec::compound_poisson(1, 1.0, MarkMeasure::Atoms(vec![(2.0, vec![0.5]), (1.0, vec![2.0])])).unwrap();
        let spec = ModelSpec::new(RegimeSet::new(1).unwrap(), levy, coeffs, 0.0, 1.0, vec![1.0], Regime(1)).unwrap();
        let cfg = SimulationConfig::new(0.125, Construction::Thinning, 11, 1);
        let mut saw_big = false;
        let mut saw_small = false;
        for i in 0..100 {
            let path = simulate_path(&spec, &cfg, i).unwrap();
            let violations = path.check_invariants(&spec);
            assert!(violations.is_empty(), "{violations:?}");
            for ev in &path.levy_events {
                saw_big |= ev.big;
                saw_small |= !ev.big;
            }
        }
        assert!(saw_big && saw_small);
    }

    #[test]
    fn thinning_paths_carry_zero_log_weight() {
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
                    lambda: Arc::new(|_, y: &[f64]| 1.0 + 0.5 * y[0].sin()),
                    bound: 2.0,
                },
            )
            .unwrap();
        let spec =
            ModelSpec::new(RegimeSet::new(2).unwrap(), LevySpec::none(1), coeffs, 0.0, 1.0, vec![0.0], Regime(1))
                .unwrap();
        let cfg = SimulationConfig::new(0.01, Construction::Thinning, 13, 1);
        for i in 0..50 {
            let path = simulate_path(&spec, &cfg, i).unwrap();
            assert_eq!(path.log_weight, 0.0);
        }
    }

    #[test]
    fn constant_lambda_equal_bound_couples_constructions() {
        // lambda == b: thinning accepts every candidate, so the two
        // constructions produce identical event logs on shared streams
        let mut coeffs = CoefficientSet::diffusion_only(
            1,
            1,
            2,
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = 0.0),
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = 1.0),
        );
        for (from, to) in [(1u32, 2u32), (2, 1)] {
            coeffs
                .set_channel(
                    Regime(from),
                    Regime(to),
                    SwitchChannel {
                        rho: Arc::new(|_, _, out: &mut [f64]| out[0] = 0.25),
                        lambda: Arc::new(|_, _| 1.5),
                        bound: 1.5,
                    },
                )
                .unwrap();
        }
        let spec =
            ModelSpec::new(RegimeSet::new(2).unwrap(), LevySpec::none(1), coeffs, 0.0, 2.0, vec![0.0], Regime(1))
                .unwrap();
        for i in 0..100 {
            let thin = simulate_path(&spec, &SimulationConfig::new(0.05, Construction::Thinning, 21, 1), i).unwrap();
            let domi = simulate_path(&spec, &SimulationConfig::new(0.05, Construction::Dominating, 21, 1), i).unwrap();
            assert_eq!(thin.switch_events, domi.switch_events);
            assert_eq!(domi.log_weight, 0.0);
        }
    }

    #[test]
    fn noise_record_aligns_with_segments() {
        let spec = frozen_model();
        let mut cfg = SimulationConfig::new(0.1, Construction::Thinning, 31, 1);
        cfg.record_noise = true;
        let path = simulate_path(&spec, &cfg, 0).unwrap();
        let noise = path.noise.as_ref().unwrap();
        assert_eq!(noise.w_increments.len(), (path.times.len() - 1) * noise.dim_w);
    }

    #[test]
    fn divergence_guard_fires() {
        let coeffs = CoefficientSet::diffusion_only(
            1,
            1,
            1,
            Arc::new(|_, y: &[f64], _, out: &mut [f64]| out[0] = y[0] * y[0] * y[0]),
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = 0.0),
        );
        let spec =
            ModelSpec::new(RegimeSet::new(1).unwrap(), LevySpec::none(1), coeffs, 0.0, 8.0, vec![2.0], Regime(1))
                .unwrap();
        let cfg = SimulationConfig::new(0.5, Construction::Thinning, 3, 1);
        let res = simulate_path(&spec, &cfg, 0);
        assert!(matches!(res, Err(SimError::PathDiverged { .. })));
    }
}
