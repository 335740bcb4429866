//! Semimartingale characteristics of (Y, C) at a state: first
//! characteristic drift, diffusion matrix, jump-intensity description, and
//! the special drift of the canonical decomposition.

use super::integrals::{indicator_difference_integral, tail_f_integral};
use super::{all_finite, MarkMeasure, ModelSpec, QuadratureConfig, Regime};
use crate::error::{Result, SimError};
use crate::rng::Stream;

/// One atom of the jump-intensity measure on R^d x R: mass at (z1, z2).
#[derive(Debug, Clone, PartialEq)]
pub struct JumpAtom {
    pub mass: f64,
    pub z1: Vec<f64>,
    pub z2: f64,
}

/// The F-pushforward component of the jump intensity, nu о F^{-1} ⊗ δ_0.
#[derive(Debug, Clone)]
pub enum PushforwardPart {
    /// No Poisson random measure.
    None,
    /// Exact atoms (mass, F(t,y,c,x_k)) for atomic nu; z2 = 0 throughout.
    Atoms(Vec<(f64, Vec<f64>)>),
    /// Black-box measure: only the total event rate is reported.
    Sampled { rate: f64 },
}

/// Characteristics triplet at a fixed (t, y, c), relative to the truncation
/// function h(z) = z 1{||z1|| + 2|z2| <= 1}.
#[derive(Debug, Clone)]
pub struct CharacteristicsTriplet {
    /// First characteristic density (Y block).
    pub b_tilde: Vec<f64>,
    /// sigma sigma^T, row-major d x d.
    pub diffusion_matrix: Vec<f64>,
    /// Switch atoms of the jump intensity: mass lambda^{c,k} at
    /// (rho^{c,k}(t,y), k - c).
    pub switch_atoms: Vec<JumpAtom>,
    /// Pushforward component of the jump intensity.
    pub pushforward: PushforwardPart,
    /// Special drift b of the canonical decomposition:
    /// mu + tail integral of F + sum rho lambda.
    pub special_drift: Vec<f64>,
    /// Quadrature standard error, when Monte Carlo was involved.
    pub quadrature_se: Option<f64>,
}

impl CharacteristicsTriplet {
    /// Total switch mass: must equal the total switching intensity at the state.
    pub fn switch_mass(&self) -> f64 {
        self.switch_atoms.iter().map(|a| a.mass).sum()
    }
}

/// Evaluate the characteristics triplet at (t, y, c).
pub fn compute_characteristics(
    spec: &ModelSpec,
    t: f64,
    y: &[f64],
    c: Regime,
    quad: QuadratureConfig,
    rng: &mut Stream,
) -> Result<CharacteristicsTriplet> {
    if !spec.regimes.contains(c) {
        return Err(SimError::InvalidArgument(format!("regime {c} outside the regime set")));
    }
    let d = spec.coeffs.dim_y;
    let p = spec.coeffs.dim_w;

    let mut mu = vec![0.0; d];
    (spec.coeffs.mu)(t, y, c, &mut mu);
    if !all_finite(&mu) {
        return Err(SimError::ModelEvaluation { what: "mu", t, y: y.to_vec(), c: c.0 });
    }

    let mut sigma = vec![0.0; d * p];
    (spec.coeffs.sigma)(t, y, c, &mut sigma);
    if !all_finite(&sigma) {
        return Err(SimError::ModelEvaluation { what: "sigma", t, y: y.to_vec(), c: c.0 });
    }
    let mut diffusion_matrix = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for l in 0..p {
                acc += sigma[i * p + l] * sigma[j * p + l];
            }
            diffusion_matrix[i * d + j] = acc;
        }
    }

    // b_tilde = mu + int F (1{||F||<=1} - 1{||x||<=a}) nu(dx)
    let mut ind_diff = vec![0.0; d];
    let se1 = indicator_difference_integral(spec, t, y, c, quad, rng, &mut ind_diff)?;
    let b_tilde: Vec<f64> = mu.iter().zip(&ind_diff).map(|(m, i)| m + i).collect();

    // special drift b = mu + int_{||x||>a} F nu(dx) + sum_k rho^{c,k} lambda^{c,k}
    let mut tail = vec![0.0; d];
    let se2 = tail_f_integral(spec, t, y, c, quad, rng, &mut tail)?;
    let mut special_drift: Vec<f64> = mu.iter().zip(&tail).map(|(m, i)| m + i).collect();

    let mut switch_atoms = Vec::new();
    let mut shift = vec![0.0; d];
    for k in spec.regimes.iter() {
        if k == c {
            continue;
        }
        if let Some(ch) = spec.coeffs.channel(c, k) {
            let lam = spec.coeffs.lambda_checked(c, k, t, y)?;
            (ch.rho)(t, y, &mut shift);
            if !all_finite(&shift) {
                return Err(SimError::ModelEvaluation { what: "rho", t, y: y.to_vec(), c: c.0 });
            }
            for i in 0..d {
                special_drift[i] += shift[i] * lam;
            }
            switch_atoms.push(JumpAtom {
                mass: lam,
                z1: shift.clone(),
                z2: k.0 as f64 - c.0 as f64,
            });
        }
    }

    let pushforward = match spec.levy.event_measure() {
        None => PushforwardPart::None,
        Some(MarkMeasure::Atoms(atoms)) => {
            let mut out = Vec::with_capacity(atoms.len());
            let mut f = vec![0.0; d];
            for (mass, mark) in atoms {
                (spec.coeffs.jump)(t, y, c, mark, &mut f);
                out.push((*mass, f.clone()));
            }
            PushforwardPart::Atoms(out)
        }
        Some(m @ MarkMeasure::Sampled { .. }) => PushforwardPart::Sampled { rate: m.total_rate() },
    };

    let quadrature_se = match (se1, se2) {
        (None, None) => None,
        (a, b) => Some(a.unwrap_or(0.0).max(b.unwrap_or(0.0))),
    };

    Ok(CharacteristicsTriplet {
        b_tilde,
        diffusion_matrix,
        switch_atoms,
        pushforward,
        special_drift,
        quadrature_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoefficientSet, LevySpec, RegimeSet, SwitchChannel};
    use crate::rng::{Driver, Stream};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn rng() -> Stream {
        Stream::derive(2, 0, Driver::Quadrature)
    }

    #[test]
    fn identity_jump_inside_truncation_leaves_mu() {
        // F(x) = x with a = 1: {||F|| <= 1} = {||x|| <= 1}, indicator
        // difference vanishes, b_tilde = mu
        let measure = MarkMeasure::Atoms(vec![(0.7, vec![0.4]), (0.3, vec![1.6])]);
        let mut coeffs = CoefficientSet::diffusion_only(
            1,
            1,
            1,
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = 0.25),
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = 0.0),
        );
        coeffs.jump = Arc::new(|_, _, _, x: &[f64], out: &mut [f64]| out[0] = x[0]);
        let levy = LevySpec::compound_poisson(1, 1.0, measure).unwrap();
        let spec = ModelSpec::new(RegimeSet::new(1).unwrap(), levy, coeffs, 0.0, 1.0, vec![0.0], Regime(1)).unwrap();
        let ch = compute_characteristics(&spec, 0.0, &[0.5], Regime(1), QuadratureConfig::default(), &mut rng()).unwrap();
        assert_relative_eq!(ch.b_tilde[0], 0.25, epsilon = 1e-12);
        // tail atom at 1.6 contributes to the special drift
        assert_relative_eq!(ch.special_drift[0], 0.25 + 0.3 * 1.6, epsilon = 1e-12);
    }

    #[test]
    fn switch_atom_matches_hand_value() {
        // nu = 0, rho^{1,2} = 2, lambda^{1,2} = 3, K = 2, c = 1:
        // single atom of mass 3 at (2, 1); special drift = mu + 6
        let mut coeffs = CoefficientSet::diffusion_only(
            1,
            1,
            2,
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = 0.5),
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = 0.0),
        );
        coeffs
            .set_channel(
                Regime(1),
                Regime(2),
                SwitchChannel {
                    rho: Arc::new(|_, _, out: &mut [f64]| out[0] = 2.0),
                    lambda: Arc::new(|_, _| 3.0),
                    bound: 3.0,
                },
            )
            .unwrap();
        let spec = ModelSpec::new(RegimeSet::new(2).unwrap(), LevySpec::none(1), coeffs, 0.0, 1.0, vec![0.0], Regime(1)).unwrap();
        let ch = compute_characteristics(&spec, 0.0, &[0.0], Regime(1), QuadratureConfig::default(), &mut rng()).unwrap();
        assert_eq!(ch.switch_atoms.len(), 1);
        assert_relative_eq!(ch.switch_atoms[0].mass, 3.0);
        assert_eq!(ch.switch_atoms[0].z1, vec![2.0]);
        assert_relative_eq!(ch.switch_atoms[0].z2, 1.0);
        assert_relative_eq!(ch.special_drift[0], 0.5 + 6.0, epsilon = 1e-12);
        assert_relative_eq!(ch.switch_mass(), 3.0);
    }

    #[test]
    fn diffusion_matrix_is_sigma_sigma_t() {
        // sigma = [[1,0],[0,2]]: a = diag(1,4)
        let coeffs = CoefficientSet::diffusion_only(
            2,
            2,
            1,
            Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)),
            Arc::new(|_, _, _, out: &mut [f64]| {
                out.copy_from_slice(&[1.0, 0.0, 0.0, 2.0]);
            }),
        );
        let spec = ModelSpec::new(RegimeSet::new(1).unwrap(), LevySpec::none(2), coeffs, 0.0, 1.0, vec![0.0, 0.0], Regime(1)).unwrap();
        let ch = compute_characteristics(&spec, 0.0, &[0.0, 0.0], Regime(1), QuadratureConfig::default(), &mut rng()).unwrap();
        assert_eq!(ch.diffusion_matrix, vec![1.0, 0.0, 0.0, 4.0]);
        // symmetric PSD: diagonal dominant here, eigenvalues 1 and 4
        assert_relative_eq!(ch.diffusion_matrix[1], ch.diffusion_matrix[2]);
    }
}
