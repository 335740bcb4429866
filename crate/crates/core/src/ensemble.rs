//! Deterministic parallel ensembles: per-path streams keyed by path index,
//! order-fixed pairwise reduction, so results are bit-identical for any
//! worker count.

use crate::error::{Result, SimError};
use crate::model::ModelSpec;
use crate::simulator::{simulate_path, PathRecord, SimulationConfig};
use rayon::prelude::*;

/// Fixed chunking of the path index range; reductions run pairwise inside
/// a chunk and pairwise over chunk partials, independent of thread count.
const CHUNK: usize = 4096;

/// Combine a slice of partials in a fixed pairwise tree.
pub fn tree_combine<T, F>(items: Vec<T>, combine: &F) -> Option<T>
where
    F: Fn(T, T) -> T,
{
    fn rec<T, F: Fn(T, T) -> T>(items: &mut Vec<Option<T>>, lo: usize, hi: usize, combine: &F) -> Option<T> {
        match hi - lo {
            0 => None,
            1 => items[lo].take(),
            n => {
                let mid = lo + n / 2;
                let a = rec(items, lo, mid, combine);
                let b = rec(items, mid, hi, combine);
                match (a, b) {
                    (Some(a), Some(b)) => Some(combine(a, b)),
                    (Some(a), None) => Some(a),
                    (None, b) => b,
                }
            }
        }
    }
    let n = items.len();
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    rec(&mut slots, 0, n, combine)
}

/// Map every path of the ensemble through `f`, in path-index order.
/// Failed paths surface as errors in their slot.
pub fn map_paths<T, F>(spec: &ModelSpec, cfg: &SimulationConfig, f: F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(&PathRecord) -> Result<T> + Sync,
{
    (0..cfg.path_count as u64)
        .into_par_iter()
        .map(|i| simulate_path(spec, cfg, i).and_then(|p| f(&p)))
        .collect()
}

/// Chunked map-reduce over the ensemble with a fixed reduction tree.
pub fn fold_paths<A, M, C>(spec: &ModelSpec, cfg: &SimulationConfig, map: M, combine: C) -> FoldOutcome<A>
where
    A: Send,
    M: Fn(&PathRecord) -> Result<A> + Sync,
    C: Fn(A, A) -> A + Sync,
{
    let n = cfg.path_count as u64;
    let mut chunk_partials: Vec<A> = Vec::new();
    let mut failures: Vec<(u64, SimError)> = Vec::new();
    let mut start = 0u64;
    while start < n {
        let end = (start + CHUNK as u64).min(n);
        let results: Vec<(u64, Result<A>)> = (start..end)
            .into_par_iter()
            .map(|i| (i, simulate_path(spec, cfg, i).and_then(|p| map(&p))))
            .collect();
        let mut ok = Vec::with_capacity(results.len());
        for (i, r) in results {
            match r {
                Ok(a) => ok.push(a),
                Err(e) => failures.push((i, e)),
            }
        }
        if let Some(partial) = tree_combine(ok, &combine) {
            chunk_partials.push(partial);
        }
        start = end;
    }
    let value = tree_combine(chunk_partials, &combine);
    FoldOutcome { value, failures, path_count: n as usize }
}

pub struct FoldOutcome<A> {
    pub value: Option<A>,
    pub failures: Vec<(u64, SimError)>,
    pub path_count: usize,
}

/// Weighted ensemble summary at the record grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub record_grid: Vec<f64>,
    /// Weighted mean of each Y component per record time, row-major (grid, d).
    pub y_mean: Vec<f64>,
    /// Weighted variance of each Y component per record time.
    pub y_variance: Vec<f64>,
    /// Weighted regime frequencies per record time, row-major (grid, K).
    pub regime_freq: Vec<f64>,
    pub dim: usize,
    pub regimes: usize,
    pub total_weight: f64,
    pub path_count: usize,
    pub completed: usize,
    pub diverged: usize,
    /// First few failures as (path index, message).
    pub failure_census: Vec<(u64, String)>,
}

struct SummaryPartial {
    w: f64,
    wy: Vec<f64>,
    wy2: Vec<f64>,
    wc: Vec<f64>,
    count: usize,
}

/// Run the ensemble and aggregate weighted moments and regime frequencies
/// at the configured record grid. Fails only if every path failed.
pub fn simulate_ensemble(spec: &ModelSpec, cfg: &SimulationConfig) -> Result<EnsembleSummary> {
    cfg.validate(spec)?;
    let grid: Vec<f64> = if cfg.record_grid.is_empty() {
        vec![spec.horizon]
    } else {
        cfg.record_grid.clone()
    };
    let d = spec.dim();
    let k = spec.regimes.count() as usize;
    let g = grid.len();

    let outcome = fold_paths(
        spec,
        cfg,
        |path| {
            let w = path.weight();
            let mut wy = vec![0.0; g * d];
            let mut wy2 = vec![0.0; g * d];
            let mut wc = vec![0.0; g * k];
            for (gi, t) in grid.iter().enumerate() {
                let (y, c) = path.value_at(*t);
                for i in 0..d {
                    wy[gi * d + i] = w * y[i];
                    wy2[gi * d + i] = w * y[i] * y[i];
                }
                wc[gi * k + c.index()] = w;
            }
            Ok(SummaryPartial { w, wy, wy2, wc, count: 1 })
        },
        |mut a, b| {
            a.w += b.w;
            for (x, y) in a.wy.iter_mut().zip(&b.wy) {
                *x += y;
            }
            for (x, y) in a.wy2.iter_mut().zip(&b.wy2) {
                *x += y;
            }
            for (x, y) in a.wc.iter_mut().zip(&b.wc) {
                *x += y;
            }
            a.count += b.count;
            a
        },
    );

    let diverged = outcome
        .failures
        .iter()
        .filter(|(_, e)| matches!(e, SimError::PathDiverged { .. }))
        .count();
    let failure_census: Vec<(u64, String)> =
        outcome.failures.iter().take(16).map(|(i, e)| (*i, e.to_string())).collect();

    let partial = match outcome.value {
        Some(p) => p,
        None => {
            let first = failure_census.first().map(|(_, m)| m.clone()).unwrap_or_default();
            return Err(SimError::AllPathsFailed { total: outcome.path_count, first });
        }
    };

    let mut y_mean = vec![0.0; g * d];
    let mut y_variance = vec![0.0; g * d];
    let mut regime_freq = vec![0.0; g * k];
    if partial.w > 0.0 {
        for i in 0..g * d {
            y_mean[i] = partial.wy[i] / partial.w;
            y_variance[i] = (partial.wy2[i] / partial.w - y_mean[i] * y_mean[i]).max(0.0);
        }
        for i in 0..g * k {
            regime_freq[i] = partial.wc[i] / partial.w;
        }
    }

    Ok(EnsembleSummary {
        record_grid: grid,
        y_mean,
        y_variance,
        regime_freq,
        dim: d,
        regimes: k,
        total_weight: partial.w,
        path_count: outcome.path_count,
        completed: partial.count,
        diverged,
        failure_census,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoefficientSet, LevySpec, Regime, RegimeSet, SwitchChannel};
    use crate::switching::Construction;
    use std::sync::Arc;

    fn brownian_switch_model() -> ModelSpec {
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
                        rho: Arc::new(|_, _, out: &mut [f64]| out[0] = 0.1),
                        lambda: Arc::new(|_, _| 1.0),
                        bound: 1.0,
                    },
                )
                .unwrap();
        }
        ModelSpec::new(RegimeSet::new(2).unwrap(), LevySpec::none(1), coeffs, 0.0, 1.0, vec![0.0], Regime(1)).unwrap()
    }

    #[test]
    fn single_path_ensemble_equals_simulate_path() {
        let spec = brownian_switch_model();
        let mut cfg = SimulationConfig::new(0.05, Construction::Thinning, 17, 1);
        cfg.record_grid = vec![1.0];
        let summary = simulate_ensemble(&spec, &cfg).unwrap();
        let path = simulate_path(&spec, &cfg, 0).unwrap();
        let (y, c) = path.terminal();
        assert_eq!(summary.y_mean[0], y[0]);
        assert_eq!(summary.regime_freq[c.index()], 1.0);
    }

    #[test]
    fn reruns_are_bit_identical() {
        let spec = brownian_switch_model();
        let mut cfg = SimulationConfig::new(0.05, Construction::Thinning, 23, 500);
        cfg.record_grid = vec![0.5, 1.0];
        let a = simulate_ensemble(&spec, &cfg).unwrap();
        let b = simulate_ensemble(&spec, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let spec = brownian_switch_model();
        let mut cfg = SimulationConfig::new(0.05, Construction::Dominating, 29, 600);
        cfg.record_grid = vec![0.25, 1.0];
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = pool1.install(|| simulate_ensemble(&spec, &cfg)).unwrap();
        let b = pool4.install(|| simulate_ensemble(&spec, &cfg)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_paths_failing_raises() {
        let coeffs = CoefficientSet::diffusion_only(
            1,
            1,
            1,
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = f64::NAN),
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = 0.0),
        );
        let spec =
            ModelSpec::new(RegimeSet::new(1).unwrap(), LevySpec::none(1), coeffs, 0.0, 1.0, vec![0.0], Regime(1))
                .unwrap();
        let cfg = SimulationConfig::new(0.1, Construction::Thinning, 3, 10);
        let res = simulate_ensemble(&spec, &cfg);
        assert!(matches!(res, Err(SimError::AllPathsFailed { .. })));
    }

    #[test]
    fn tree_combine_is_order_fixed() {
        let items: Vec<Vec<u32>> = (0..9).map(|i| vec![i]).collect();
        let combined = tree_combine(items, &|mut a: Vec<u32>, b: Vec<u32>| {
            a.extend(b);
            a
        })
        .unwrap();
        assert_eq!(combined, vec![0, 1, 2, 3, 4, 5, 6, 7, 8]);
    }
}
