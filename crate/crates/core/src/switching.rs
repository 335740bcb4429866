//! Generation of the regime-switching counting processes, coupled to the
//! current (t, Y_{t-}), by two interchangeable constructions:
//!
//! * thinning against the declared dominating rates, which samples the
//!   target intensities directly, and
//! * the dominating construction, which fires every candidate of the
//!   constant-rate clocks and carries the stochastic-exponential
//!   likelihood weight linking the two laws.

use crate::error::{Result, SimError};
use crate::model::{CoefficientSet, Regime, RegimeSet};
use crate::rng::Stream;

/// A realized regime switch.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchEvent {
    pub time: f64,
    pub from: Regime,
    pub to: Regime,
    pub y_before: Vec<f64>,
    pub y_after: Vec<f64>,
}

/// Log-likelihood weight of a path under the dominating construction,
/// relative to the target intensities:
/// sum over active pairs of [-int (lambda - b) H^i dt + sum_jumps ln(lambda/b)].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodWeight {
    pub log_weight: f64,
}

impl Default for LikelihoodWeight {
    fn default() -> Self {
        LikelihoodWeight { log_weight: 0.0 }
    }
}

impl LikelihoodWeight {
    /// Continuous part over a segment of length `dt` spent in regime `c`
    /// with frozen state `y`: d log w = -(sum_k lambda^{c,k} - b^{c,k}) dt.
    pub fn accrue_segment(
        &mut self,
        coeffs: &CoefficientSet,
        regimes: RegimeSet,
        c: Regime,
        t: f64,
        y: &[f64],
        dt: f64,
    ) -> Result<()> {
        let mut rate = 0.0;
        for k in regimes.iter() {
            if k == c {
                continue;
            }
            if let Some(ch) = coeffs.channel(c, k) {
                rate += coeffs.lambda_checked(c, k, t, y)? - ch.bound;
            }
        }
        self.log_weight -= rate * dt;
        Ok(())
    }

    /// Jump part at an accepted dominating event: + ln(lambda/b).
    /// lambda == 0 sends the weight to zero (log to -inf); the path stays
    /// in the ensemble with weight zero.
    pub fn accrue_jump(&mut self, lambda: f64, bound: f64) {
        if lambda == 0.0 {
            self.log_weight = f64::NEG_INFINITY;
        } else {
            self.log_weight += (lambda / bound).ln();
        }
    }

    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }
}

/// Which construction drives the switching processes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    Thinning,
    Dominating,
}

/// What happened at a candidate time of the dominating clocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CandidateOutcome {
    /// The switch fires towards `to`; `lambda` is the target intensity at
    /// the candidate and `bound` its dominating rate.
    Fire { to: Regime, lambda: f64, bound: f64 },
    /// Thinning rejected the candidate; its clock was re-armed.
    Rejected,
}

/// Per-pair dominating clocks of the current regime. Each ordered pair
/// (i, j) draws its exponential arrivals from its own stream, so the two
/// constructions coupled on the same streams see the same candidates.
#[derive(Debug)]
pub struct SwitchClocks {
    current: Regime,
    regimes: RegimeSet,
    /// Next arrival per target regime index; NaN when inactive.
    arrivals: Vec<f64>,
}

impl SwitchClocks {
    /// Arm the clocks of `current`'s active pairs starting at time `t`.
    pub fn new(
        coeffs: &CoefficientSet,
        regimes: RegimeSet,
        current: Regime,
        t: f64,
        clock_streams: &mut [Stream],
    ) -> Self {
        let mut clocks = SwitchClocks {
            current,
            regimes,
            arrivals: vec![f64::NAN; regimes.count() as usize],
        };
        clocks.arm_all(coeffs, t, clock_streams);
        clocks
    }

    fn stream_index(&self, from: Regime, to: Regime) -> usize {
        from.index() * self.regimes.count() as usize + to.index()
    }

    fn arm_all(&mut self, coeffs: &CoefficientSet, t: f64, clock_streams: &mut [Stream]) {
        self.arrivals.fill(f64::NAN);
        for k in self.regimes.iter() {
            if k == self.current {
                continue;
            }
            if let Some(ch) = coeffs.channel(self.current, k) {
                let idx = self.stream_index(self.current, k);
                self.arrivals[k.index()] = t + clock_streams[idx].exponential(ch.bound);
            }
        }
    }

    /// Earliest pending candidate, if any.
    pub fn next_candidate(&self) -> Option<(Regime, f64)> {
        let mut best: Option<(Regime, f64)> = None;
        for (i, &time) in self.arrivals.iter().enumerate() {
            if time.is_nan() {
                continue;
            }
            if best.map_or(true, |(_, t)| time < t) {
                best = Some((Regime(i as u32 + 1), time));
            }
        }
        best
    }

    /// Resolve the candidate (to, t): under thinning, accept with
    /// probability lambda/bound evaluated at the frozen state `y`;
    /// under the dominating construction every candidate fires.
    pub fn resolve_candidate(
        &mut self,
        coeffs: &CoefficientSet,
        construction: Construction,
        to: Regime,
        t: f64,
        y: &[f64],
        clock_streams: &mut [Stream],
        thinning: &mut Stream,
    ) -> Result<CandidateOutcome> {
        let ch = coeffs
            .channel(self.current, to)
            .ok_or_else(|| SimError::InvalidArgument("candidate for inactive pair".into()))?;
        let bound = ch.bound;
        let lambda = coeffs.lambda_checked(self.current, to, t, y)?;
        match construction {
            Construction::Dominating => {
                // clock re-armed by the caller via `switch_to` (regime changes)
                Ok(CandidateOutcome::Fire { to, lambda, bound })
            }
            Construction::Thinning => {
                if thinning.uniform() <= lambda / bound {
                    Ok(CandidateOutcome::Fire { to, lambda, bound })
                } else {
                    let idx = self.stream_index(self.current, to);
                    self.arrivals[to.index()] = t + clock_streams[idx].exponential(bound);
                    Ok(CandidateOutcome::Rejected)
                }
            }
        }
    }

    /// Enter regime `to` at time `t`: re-arms all clocks for the new regime.
    pub fn switch_to(&mut self, coeffs: &CoefficientSet, to: Regime, t: f64, clock_streams: &mut [Stream]) {
        self.current = to;
        self.arm_all(coeffs, t, clock_streams);
    }

    pub fn current(&self) -> Regime {
        self.current
    }
}

fn build_event(
    coeffs: &CoefficientSet,
    from: Regime,
    to: Regime,
    t: f64,
    y: &[f64],
) -> SwitchEvent {
    let ch = coeffs.channel(from, to).expect("active channel");
    let mut shift = vec![0.0; coeffs.dim_y];
    (ch.rho)(t, y, &mut shift);
    let y_after: Vec<f64> = y.iter().zip(&shift).map(|(a, b)| a + b).collect();
    SwitchEvent { time: t, from, to, y_before: y.to_vec(), y_after }
}

/// First switch out of `current` on (t, horizon] by thinning: candidates
/// arrive at the summed dominating rate; one uniform both selects the pair
/// (sub-intervals of length lambda^{current,k}/B in ascending k) and
/// rejects on the remainder.
pub fn next_switch_thinning(
    coeffs: &CoefficientSet,
    regimes: RegimeSet,
    t: f64,
    horizon: f64,
    current: Regime,
    y_provider: &dyn Fn(f64) -> Vec<f64>,
    rng: &mut Stream,
) -> Result<Option<SwitchEvent>> {
    let total: f64 = regimes
        .iter()
        .filter(|k| *k != current)
        .filter_map(|k| coeffs.channel(current, k).map(|ch| ch.bound))
        .sum();
    if total <= 0.0 {
        return Ok(None);
    }
    let mut tau = t;
    loop {
        tau += rng.exponential(total);
        if tau > horizon {
            return Ok(None);
        }
        let y = y_provider(tau);
        let u = rng.uniform() * total;
        let mut acc = 0.0;
        for k in regimes.iter() {
            if k == current || coeffs.channel(current, k).is_none() {
                continue;
            }
            acc += coeffs.lambda_checked(current, k, tau, &y)?;
            if u <= acc {
                return Ok(Some(build_event(coeffs, current, k, tau, &y)));
            }
        }
        // u landed in the rejection remainder; propose again
    }
}

/// First switch out of `current` on (t, horizon] under the dominating
/// construction, together with the log-weight delta over the exposed
/// interval: the continuous part is integrated left-endpoint on a grid of
/// step `grid_dt`, the jump part is ln(lambda/b) at the event.
#[allow(clippy::too_many_arguments)]
pub fn next_switch_dominating(
    coeffs: &CoefficientSet,
    regimes: RegimeSet,
    t: f64,
    horizon: f64,
    current: Regime,
    y_provider: &dyn Fn(f64) -> Vec<f64>,
    grid_dt: f64,
    rng: &mut Stream,
) -> Result<(Option<SwitchEvent>, LikelihoodWeight)> {
    let mut weight = LikelihoodWeight::default();
    let total: f64 = regimes
        .iter()
        .filter(|k| *k != current)
        .filter_map(|k| coeffs.channel(current, k).map(|ch| ch.bound))
        .sum();
    if total <= 0.0 {
        return Ok((None, weight));
    }
    let tau = t + rng.exponential(total);
    let end = tau.min(horizon);

    // continuous part of the stochastic exponential over (t, end]
    let mut s = t;
    while s < end {
        let step = grid_dt.min(end - s);
        let y = y_provider(s);
        weight.accrue_segment(coeffs, regimes, current, s, &y, step)?;
        s += step;
    }
    if tau > horizon {
        return Ok((None, weight));
    }

    // pair chosen proportionally to its dominating rate; every candidate fires
    let u = rng.uniform() * total;
    let mut acc = 0.0;
    for k in regimes.iter() {
        if k == current {
            continue;
        }
        if let Some(ch) = coeffs.channel(current, k) {
            acc += ch.bound;
            if u <= acc {
                let y = y_provider(tau);
                let lambda = coeffs.lambda_checked(current, k, tau, &y)?;
                weight.accrue_jump(lambda, ch.bound);
                return Ok((Some(build_event(coeffs, current, k, tau, &y)), weight));
            }
        }
    }
    unreachable!("pair selection exhausted the dominating mass");
}

/// Compensated switching martingale along a recorded path:
/// M^{i,j}_t = H^{i,j}_t - int_r^t lambda^{i,j}(u, Y_{u-}) H^i_{u-} du,
/// with the integral by left-endpoint quadrature on the recorded grid.
/// Returns (time, M) at every recorded grid time.
pub fn compensated_switch_martingale(
    path: &crate::simulator::PathRecord,
    coeffs: &CoefficientSet,
    from: Regime,
    to: Regime,
) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(path.times.len());
    let mut h_count = 0usize;
    let mut integral = 0.0;
    let mut event_iter = path.switch_events.iter().peekable();
    for k in 0..path.times.len() {
        let t = path.times[k];
        while let Some(ev) = event_iter.peek() {
            if ev.time <= t {
                if ev.from == from && ev.to == to {
                    h_count += 1;
                }
                event_iter.next();
            } else {
                break;
            }
        }
        out.push((t, h_count as f64 - integral));
        if k + 1 < path.times.len() {
            let dt = path.times[k + 1] - t;
            if path.regime_at(k) == from {
                let lam = coeffs.lambda_checked(from, to, t, path.state_at(k))?;
                integral += lam * dt;
            }
        }
    }
    Ok(out)
}
