//! Leading-eigenvector detection and the perturbation statistic.
//!
//! The detector is a power iteration that stops as soon as it can decide
//! whether a reference vector is (close to) the leading eigenvector: either
//! a Rayleigh quotient beats the reference's, or the iterate has come within
//! `ζ` of the reference. Closed forms for two-block expected correlation
//! matrices are provided as test fixtures and for reasoning about power.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, SquareMatrix};

/// Restarts allowed when an iterate is annihilated by `M`.
pub const MAX_RESTARTS: usize = 16;

/// Default iteration cap for a window of size `w`.
pub fn default_max_iter(w: usize) -> usize {
    10 * w + 100
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    /// Some iterate had a larger Rayleigh quotient than the reference.
    RayleighExceeded,
    /// The iterate came within tolerance of the reference.
    ConvergedToReference,
    /// Neither condition held within the iteration cap.
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    pub q: Vec<f64>,
    /// Number of `q ← Mq/‖Mq‖` updates performed.
    pub iterations: usize,
    pub exit_reason: ExitReason,
}

/// A point drawn uniformly from the unit sphere in `R^w`.
pub fn random_unit_vector<R: Rng + ?Sized>(w: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut q: Vec<f64> = (0..w).map(|_| StandardNormal.sample(rng)).collect();
        let s = norm(&q);
        if s > 0.0 && s.is_finite() {
            q.iter_mut().for_each(|v| *v /= s);
            return q;
        }
    }
}

/// Runs the early-stopping power iteration on `m` against `v_ref`.
pub fn power_iteration_detector<R: Rng + ?Sized>(
    m: &SquareMatrix,
    v_ref: &[f64],
    zeta: f64,
    max_iter: usize,
    rng: &mut R,
) -> Result<EigenResult> {
    let w = m.dim();
    if v_ref.len() != w {
        return Err(Error::DimensionMismatch {
            expected: w,
            found: v_ref.len(),
        });
    }
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(Error::InvalidParameter(format!("zeta = {zeta} outside (0, 1)")));
    }
    if (norm(v_ref) - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidParameter("reference vector must have unit norm".into()));
    }
    let reference = m.bilinear(v_ref, v_ref).abs();
    let mut mq = vec![0.0; w];
    let mut restarts = 0;
    'restart: loop {
        let mut q = random_unit_vector(w, rng);
        let mut iterations = 0;
        loop {
            m.mul_vec_into(&q, &mut mq);
            if dot(&q, &mq).abs() > reference {
                return Ok(EigenResult { q, iterations, exit_reason: ExitReason::RayleighExceeded });
            }
            let align = dot(v_ref, &q);
            if align * align >= 1.0 - zeta {
                return Ok(EigenResult { q, iterations, exit_reason: ExitReason::ConvergedToReference });
            }
            if iterations >= max_iter {
                return Ok(EigenResult { q, iterations, exit_reason: ExitReason::MaxIter });
            }
            let s = norm(&mq);
            if !(s > 0.0) || !s.is_finite() {
                restarts += 1;
                if restarts > MAX_RESTARTS {
                    return Err(Error::NullDirection(restarts));
                }
                continue 'restart;
            }
            q.iter_mut().zip(&mq).for_each(|(qi, mi)| *qi = mi / s);
            iterations += 1;
        }
    }
}

/// `‖s·q − 1/√w · 1‖` with `s = sign(1ᵀq)` (and `s = 1` on a tie).
pub fn perturbation_statistic(q: &[f64]) -> f64 {
    let w = q.len() as f64;
    let c = 1.0 / w.sqrt();
    let s = if q.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    q.iter().map(|v| (s * v - c).powi(2)).sum::<f64>().sqrt()
}

fn check_gamma(g: f64, name: &str) -> Result<()> {
    if g > -1.0 && g < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {g} outside (-1, 1)")))
    }
}

/// Eigenstructure of the two-block expected correlation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockEigs {
    pub xi_plus: f64,
    pub xi_minus: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
}

/// Roots `ξ` for which `ξ·u₁ + u₂` is an eigenvector of the expected
/// correlation matrix (`u₁`, `u₂` the block indicators). `xi_plus` belongs
/// to the larger eigenvalue `λ = ξ k₁ γ₁₂ + 1 + (k₂ − 1) γ₂`.
pub fn xi(k1: usize, k2: usize, gamma1: f64, gamma2: f64, gamma12: f64) -> Result<BlockEigs> {
    if k1 == 0 || k2 == 0 {
        return Err(Error::InvalidParameter(format!("need k1, k2 >= 1, got {k1}, {k2}")));
    }
    check_gamma(gamma1, "gamma1")?;
    check_gamma(gamma2, "gamma2")?;
    check_gamma(gamma12, "gamma12")?;
    if gamma12 == 0.0 {
        return Err(Error::Undefined("gamma12 = 0 decouples the blocks".into()));
    }
    let (k1f, k2f) = (k1 as f64, k2 as f64);
    let a = (k1f - 1.0) * gamma1 - (k2f - 1.0) * gamma2;
    let root = (a * a + 4.0 * k1f * k2f * gamma12 * gamma12).sqrt();
    let lambda_of = |x: f64| x * k1f * gamma12 + 1.0 + (k2f - 1.0) * gamma2;
    let r1 = (a + root) / (2.0 * k1f * gamma12);
    let r2 = (a - root) / (2.0 * k1f * gamma12);
    let (xi_plus, xi_minus) = if lambda_of(r1) >= lambda_of(r2) { (r1, r2) } else { (r2, r1) };
    let base = 1.0 + ((k1f - 1.0) * gamma1 + (k2f - 1.0) * gamma2) / 2.0;
    Ok(BlockEigs {
        xi_plus,
        xi_minus,
        lambda_plus: base + root / 2.0,
        lambda_minus: base - root / 2.0,
    })
}

/// The unit vector along `ξ·u₁ + u₂`.
pub fn block_eigenvector(k1: usize, k2: usize, xi: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..k1 + k2).map(|i| if i < k1 { xi } else { 1.0 }).collect();
    let s = norm(&v);
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Eigenvalues of the all-in-control expected correlation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuredEigs {
    pub lambda1: f64,
    pub lambda_rest: f64,
    /// `λ̃₂ / λ̃₁`, the geometric convergence rate of power iteration.
    pub ratio: f64,
}

pub fn structured_lambdas(gamma1: f64, w: usize) -> Result<StructuredEigs> {
    if w < 2 {
        return Err(Error::InvalidParameter(format!("window size {w} < 2")));
    }
    let lo = -1.0 / (w as f64 - 1.0);
    if !(gamma1 > lo && gamma1 < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma1 = {gamma1} outside ({lo}, 1)"
        )));
    }
    let lambda1 = 1.0 + gamma1 * (w as f64 - 1.0);
    let lambda_rest = 1.0 - gamma1;
    Ok(StructuredEigs { lambda1, lambda_rest, ratio: lambda_rest / lambda1 })
}
