//! Statistical primitives for the verification harness: order-fixed
//! pairwise summation, mean / standard-error accumulation (weighted and
//! unweighted), Kolmogorov–Smirnov statistics including a weighted
//! two-sample variant with a centered bootstrap critical value, and a
//! chi-squared independence test.

use crate::error::{Result, SimError};
use crate::rng::Stream;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Asymptotic one-sample Kolmogorov–Smirnov critical constant at the 1%
/// level: the statistic threshold is this over sqrt(n).
pub const KS_CRIT_1PCT: f64 = 1.6276;

/// Sum in a fixed pairwise tree order, independent of chunking upstream.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

pub fn mean_se(xs: &[f64]) -> MeanSe {
    let n = xs.len();
    if n == 0 {
        return MeanSe { mean: 0.0, se: f64::INFINITY, n };
    }
    let sum = pairwise_sum(xs);
    let mean = sum / n as f64;
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n as f64 - 1.0).max(1.0);
    MeanSe { mean, se: (var / n as f64).sqrt(), n }
}

/// Self-normalized weighted mean with a linearized (ratio-estimator)
/// standard error.
pub fn weighted_mean_se(xs: &[f64], ws: &[f64]) -> MeanSe {
    assert_eq!(xs.len(), ws.len());
    let n = xs.len();
    let wsum = pairwise_sum(ws);
    if n == 0 || wsum <= 0.0 {
        return MeanSe { mean: 0.0, se: f64::INFINITY, n };
    }
    let wx: Vec<f64> = xs.iter().zip(ws).map(|(x, w)| x * w).collect();
    let mean = pairwise_sum(&wx) / wsum;
    let wbar = wsum / n as f64;
    let resid: Vec<f64> = xs
        .iter()
        .zip(ws)
        .map(|(x, w)| {
            let r = w * (x - mean) / wbar;
            r * r
        })
        .collect();
    let var = pairwise_sum(&resid) / (n as f64 - 1.0).max(1.0);
    MeanSe { mean, se: (var / n as f64).sqrt(), n }
}

/// Effective sample size (sum w)^2 / sum w^2 of a weight vector.
pub fn effective_sample_size(ws: &[f64]) -> f64 {
    let s = pairwise_sum(ws);
    let sq: Vec<f64> = ws.iter().map(|w| w * w).collect();
    let s2 = pairwise_sum(&sq);
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

/// One-sample KS statistic sup |F_n - F| against a CDF. Sorts in place.
pub fn ks_statistic_against<F: Fn(f64) -> f64>(samples: &mut [f64], cdf: F) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut d = 0.0f64;
    for (i, x) in samples.iter().enumerate() {
        let f = cdf(*x);
        d = d.max(((i + 1) as f64 / n - f).abs());
        d = d.max((i as f64 / n - f).abs());
    }
    d
}

/// Weighted-vs-unweighted two-sample CDF distance with a centered bootstrap
/// critical value.
#[derive(Debug, Clone, Copy)]
pub struct WeightedKsOutcome {
    pub statistic: f64,
    pub critical: f64,
    pub effective_sample_size: f64,
    pub pass: bool,
}

struct SortedSample {
    values: Vec<f64>,
    weights: Vec<f64>,
    total_weight: f64,
}

impl SortedSample {
    fn new(mut pairs: Vec<(f64, f64)>) -> Self {
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let total_weight = pairwise_sum(&weights);
        SortedSample { values, weights, total_weight }
    }
}

/// Sweep both sorted samples and return sup over x of
/// |(A_num(x)/A_den - B_num(x)/B_den)| for count-weighted prefix sums.
fn sup_cdf_distance(
    a: &SortedSample,
    a_mult: Option<&[u32]>,
    a_center: Option<&SortedSample>,
    b: &SortedSample,
    b_mult: Option<&[u32]>,
    b_center: Option<&SortedSample>,
) -> f64 {
    // prefix accumulators; centered variants subtract the original ECDFs
    let (mut ia, mut ib) = (0usize, 0usize);
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let (mut ca, mut cb) = (0.0f64, 0.0f64);
    let a_tot: f64 = match a_mult {
        Some(m) => a.weights.iter().zip(m).map(|(w, k)| w * *k as f64).sum(),
        None => a.total_weight,
    };
    let b_tot: f64 = match b_mult {
        Some(m) => b.weights.iter().zip(m).map(|(w, k)| w * *k as f64).sum(),
        None => b.total_weight,
    };
    if a_tot <= 0.0 || b_tot <= 0.0 {
        return f64::INFINITY;
    }
    let mut sup = 0.0f64;
    let eval = |fa: f64, ca: f64, fb: f64, cb: f64| -> f64 {
        let da = fa / a_tot - ca;
        let db = fb / b_tot - cb;
        (da - db).abs()
    };
    while ia < a.values.len() || ib < b.values.len() {
        let xa = a.values.get(ia).copied().unwrap_or(f64::INFINITY);
        let xb = b.values.get(ib).copied().unwrap_or(f64::INFINITY);
        let x = xa.min(xb);
        sup = sup.max(eval(fa, ca, fb, cb));
        while ia < a.values.len() && a.values[ia] == x {
            let k = a_mult.map(|m| m[ia] as f64).unwrap_or(1.0);
            fa += a.weights[ia] * k;
            if let Some(c) = a_center {
                ca += c.weights[ia] / c.total_weight;
            }
            ia += 1;
        }
        while ib < b.values.len() && b.values[ib] == x {
            let k = b_mult.map(|m| m[ib] as f64).unwrap_or(1.0);
            fb += b.weights[ib] * k;
            if let Some(c) = b_center {
                cb += c.weights[ib] / c.total_weight;
            }
            ib += 1;
        }
        sup = sup.max(eval(fa, ca, fb, cb));
    }
    sup
}

/// Distance between the normalized weighted ECDF of (a_values, a_weights)
/// and the unweighted ECDF of b_values, with the critical value at level
/// `alpha` from `bootstrap` centered resampling replicates:
/// D* = sup |(F* - F) - (G* - G)|, which approximates the null distribution
/// of the statistic regardless of weight-value correlation.
pub fn weighted_two_sample_ks(
    a_values: &[f64],
    a_weights: &[f64],
    b_values: &[f64],
    bootstrap: usize,
    alpha: f64,
    min_ess: f64,
    rng: &mut Stream,
) -> Result<WeightedKsOutcome> {
    if a_values.is_empty() || b_values.is_empty() {
        return Err(SimError::InvalidArgument("empty sample in two-sample test".into()));
    }
    let ess = effective_sample_size(a_weights);
    if ess < min_ess {
        return Err(SimError::DegenerateWeights { ess, min: min_ess });
    }
    let a = SortedSample::new(a_values.iter().copied().zip(a_weights.iter().copied()).collect());
    let b = SortedSample::new(b_values.iter().map(|v| (*v, 1.0)).collect());

    let statistic = sup_cdf_distance(&a, None, None, &b, None, None);

    let (na, nb) = (a.values.len(), b.values.len());
    let mut a_counts = vec![0u32; na];
    let mut b_counts = vec![0u32; nb];
    let mut replicates = Vec::with_capacity(bootstrap);
    for _ in 0..bootstrap {
        a_counts.fill(0);
        b_counts.fill(0);
        for _ in 0..na {
            a_counts[(rng.uniform() * na as f64) as usize % na] += 1;
        }
        for _ in 0..nb {
            b_counts[(rng.uniform() * nb as f64) as usize % nb] += 1;
        }
        let d = sup_cdf_distance(&a, Some(&a_counts), Some(&a), &b, Some(&b_counts), Some(&b));
        replicates.push(d);
    }
    replicates.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let idx = (((1.0 - alpha) * bootstrap as f64).ceil() as usize).min(bootstrap - 1);
    let critical = replicates[idx];

    Ok(WeightedKsOutcome { statistic, critical, effective_sample_size: ess, pass: statistic <= critical })
}

/// Chi-squared independence test on an r x c contingency table (row-major).
#[derive(Debug, Clone, Copy)]
pub struct ChiSquareOutcome {
    pub statistic: f64,
    pub dof: usize,
    pub critical: f64,
    pub pass: bool,
}

pub fn chi_square_independence(table: &[u64], rows: usize, cols: usize, alpha: f64) -> Result<ChiSquareOutcome> {
    assert_eq!(table.len(), rows * cols);
    let total: u64 = table.iter().sum();
    if total == 0 {
        return Err(SimError::InvalidArgument("empty contingency table".into()));
    }
    let row_tot: Vec<f64> = (0..rows).map(|i| (0..cols).map(|j| table[i * cols + j] as f64).sum()).collect();
    let col_tot: Vec<f64> = (0..cols).map(|j| (0..rows).map(|i| table[i * cols + j] as f64).sum()).collect();
    let live_rows = row_tot.iter().filter(|v| **v > 0.0).count();
    let live_cols = col_tot.iter().filter(|v| **v > 0.0).count();
    if live_rows < 2 || live_cols < 2 {
        // a degenerate table carries no dependence information
        return Ok(ChiSquareOutcome { statistic: 0.0, dof: 0, critical: f64::INFINITY, pass: true });
    }
    let mut stat = 0.0;
    let totf = total as f64;
    for i in 0..rows {
        for j in 0..cols {
            let e = row_tot[i] * col_tot[j] / totf;
            if e > 0.0 {
                let o = table[i * cols + j] as f64;
                stat += (o - e) * (o - e) / e;
            }
        }
    }
    let dof = (live_rows - 1) * (live_cols - 1);
    let dist = ChiSquared::new(dof as f64)
        .map_err(|e| SimError::InvalidArgument(format!("chi-squared dof: {e}")))?;
    let critical = dist.inverse_cdf(1.0 - alpha);
    Ok(ChiSquareOutcome { statistic: stat, dof, critical, pass: stat <= critical })
}
