//! Closed-form moments of polynomial profiles under `x ~ Unif([0,1]^d)` and
//! the solver that builds an out-of-control function with a prescribed
//! signal-to-noise ratio and correlation to the in-control function.
//!
//! Setup: `f = C_f f₀`, `h = ν f + (1 − ν) C_h h₀` with `Var f₀ = Var h₀ = 1`
//! and `Cov(f₀, h₀) = 0`. Given `Var(f)`, `Var(δ) = Var(f − h)` and
//! `ρ(f, h)`, the unknowns `ν`, `C_f`, `C_h` follow in closed form:
//!
//! ```text
//! C_f = sqrt(Var f)
//! ν   = ρ² ± sqrt(ρ⁴ + ρ² (Var δ / Var f − 1))
//! C_h = sqrt(Var δ / (1 − ν)² − Var f)
//! ρ   = ν / sqrt(2ν − 1 + Var δ / Var f)
//! ```

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, SquareMatrix};
use crate::profile_model::ProfileFunction;

/// `E[X^r]` for `X ~ Unif(0,1)`.
#[inline]
pub fn raw_moment(r: u32) -> f64 {
    1.0 / (r as f64 + 1.0)
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// `Cov(aᵀx, bᵀx) = aᵀb / 12`.
pub fn cov_linear(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    Ok(dot(a, b) / 12.0)
}

/// `Cov(xᵀAx, bᵀx) = 1ᵀ(A + Aᵀ)b / 24`.
pub fn cov_quadratic_linear(a: &SquareMatrix, b: &[f64]) -> Result<f64> {
    check_len(a.dim(), b.len())?;
    let d = a.dim();
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            acc += a[(i, j)] * (b[i] + b[j]);
        }
    }
    Ok(acc / 24.0)
}

/// `E[xᵀAx] = tr(A)/12 + 1ᵀA1/4`.
pub fn mean_quadratic(a: &SquareMatrix) -> f64 {
    a.trace() / 12.0 + a.total() / 4.0
}

/// Coefficient matrix `C(i, j)` with entries `C[k][l] = E[X_i X_j X_k X_l]`.
///
/// Off the rows and columns `{i, j}` the entry only depends on whether
/// `k == l`, so the matrix is filled in bulk and the `O(d)` rows and columns
/// touching `i` or `j` are patched from the exact index multiplicities.
pub fn coefficient_matrix(i: usize, j: usize, d: usize) -> SquareMatrix {
    assert!(i < d && j < d);
    let base: &[(usize, u32)] = if i == j { &[(i, 2)] } else { &[(i, 1), (j, 1)] };
    let base_prod: f64 = base.iter().map(|&(_, c)| raw_moment(c)).product();
    let off_pair = base_prod * raw_moment(1) * raw_moment(1);
    let off_square = base_prod * raw_moment(2);

    let mut c = SquareMatrix::from_fn(d, |k, l| if k == l { off_square } else { off_pair });
    let exact = |k: usize, l: usize| -> f64 {
        let mut counts: [(usize, u32); 4] = [(usize::MAX, 0); 4];
        let mut used = 0;
        for idx in [i, j, k, l] {
            match counts[..used].iter_mut().find(|(v, _)| *v == idx) {
                Some(slot) => slot.1 += 1,
                None => {
                    counts[used] = (idx, 1);
                    used += 1;
                }
            }
        }
        counts[..used].iter().map(|&(_, r)| raw_moment(r)).product()
    };
    for p in [i, j] {
        for q in 0..d {
            c.set_sym(p, q, exact(p, q));
        }
    }
    c
}

/// `Cov(xᵀAx, xᵀBx) = 1ᵀ(Σ_ij A_ij (B ⊙ C(i,j)))1 − E[xᵀAx] E[xᵀBx]`.
pub fn cov_quadratic_quadratic(a: &SquareMatrix, b: &SquareMatrix) -> Result<f64> {
    check_len(a.dim(), b.dim())?;
    let d = a.dim();
    let mut second = 0.0;
    for i in 0..d {
        for j in 0..d {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            let c = coefficient_matrix(i, j, d);
            let weighted: f64 = b.as_slice().iter().zip(c.as_slice()).map(|(x, y)| x * y).sum();
            second += aij * weighted;
        }
    }
    Ok(second - mean_quadratic(a) * mean_quadratic(b))
}

/// Polynomial of degree at most two: `constant + linᵀx + xᵀ quad x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    pub constant: f64,
    pub lin: Vec<f64>,
    pub quad: Option<SquareMatrix>,
}

impl Polynomial {
    pub fn dim(&self) -> usize {
        self.lin.len()
    }

    /// Flattens a linear, quadratic or mixture-of-polynomial function.
    pub fn from_function(f: &ProfileFunction) -> Result<Self> {
        f.validate()?;
        match f {
            ProfileFunction::Linear { coeffs, intercept } => Ok(Self {
                constant: *intercept,
                lin: coeffs.clone(),
                quad: None,
            }),
            ProfileFunction::Quadratic { matrix, coeffs } => Ok(Self {
                constant: 0.0,
                lin: coeffs.clone(),
                quad: Some(matrix.clone()),
            }),
            ProfileFunction::ForcingSin { .. } => Err(Error::NoClosedForm("sin forcing")),
            ProfileFunction::ForcingRidge { .. } => Err(Error::NoClosedForm("ridge forcing")),
            ProfileFunction::Mixture { nu, left, right } => {
                let l = Self::from_function(left)?;
                let r = Self::from_function(right)?;
                Ok(l.scaled(*nu).plus(&r.scaled(1.0 - nu)))
            }
        }
    }

    /// Converts back to a [`ProfileFunction`]. A quadratic with a nonzero
    /// constant has no direct representation and is rejected.
    pub fn to_function(&self) -> Result<ProfileFunction> {
        match &self.quad {
            None => Ok(ProfileFunction::linear(self.lin.clone(), self.constant)),
            Some(_) if self.constant != 0.0 => Err(Error::InvalidParameter(
                "quadratic profile functions carry no intercept".into(),
            )),
            Some(q) => ProfileFunction::quadratic(q.clone(), self.lin.clone()),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            constant: self.constant * s,
            lin: self.lin.iter().map(|v| v * s).collect(),
            quad: self.quad.as_ref().map(|q| q.scaled(s)),
        }
    }

    pub fn plus(&self, other: &Self) -> Self {
        assert_eq!(self.dim(), other.dim(), "polynomial dimensions differ");
        let quad = match (&self.quad, &other.quad) {
            (None, None) => None,
            (Some(a), None) | (None, Some(a)) => Some(a.clone()),
            (Some(a), Some(b)) => Some(a.add_scaled(b, 1.0)),
        };
        Self {
            constant: self.constant + other.constant,
            lin: self.lin.iter().zip(&other.lin).map(|(a, b)| a + b).collect(),
            quad,
        }
    }

    pub fn covariance(&self, other: &Self) -> Result<f64> {
        check_len(self.dim(), other.dim())?;
        let mut cov = cov_linear(&self.lin, &other.lin)?;
        if let Some(a) = &self.quad {
            cov += cov_quadratic_linear(a, &other.lin)?;
        }
        if let Some(b) = &other.quad {
            cov += cov_quadratic_linear(b, &self.lin)?;
        }
        if let (Some(a), Some(b)) = (&self.quad, &other.quad) {
            cov += cov_quadratic_quadratic(a, b)?;
        }
        Ok(cov)
    }

    pub fn mean(&self) -> f64 {
        self.constant + self.lin.iter().sum::<f64>() / 2.0 + self.quad.as_ref().map_or(0.0, mean_quadratic)
    }
}

/// Exact covariance of two profile functions under `Unif([0,1]^d)`.
/// Mixtures expand by bilinearity; forcing functions have no closed form.
pub fn covariance(f: &ProfileFunction, g: &ProfileFunction) -> Result<f64> {
    match (f, g) {
        (ProfileFunction::Mixture { nu, left, right }, _) => {
            Ok(nu * covariance(left, g)? + (1.0 - nu) * covariance(right, g)?)
        }
        (_, ProfileFunction::Mixture { nu, left, right }) => {
            Ok(nu * covariance(f, left)? + (1.0 - nu) * covariance(f, right)?)
        }
        _ => Polynomial::from_function(f)?.covariance(&Polynomial::from_function(g)?),
    }
}

/// Exact variance under `Unif([0,1]^d)`.
pub fn var_function(f: &ProfileFunction) -> Result<f64> {
    covariance(f, f)
}

pub fn correlation(f: &ProfileFunction, g: &ProfileFunction) -> Result<f64> {
    Ok(covariance(f, g)? / (var_function(f)? * var_function(g)?).sqrt())
}

const DEGENERATE_VARIANCE: f64 = 1e-12;

fn zero_intercept_poly(f: &ProfileFunction) -> Result<Polynomial> {
    let p = Polynomial::from_function(f)?;
    if p.constant != 0.0 {
        return Err(Error::InvalidParameter(
            "orthogonalization expects zero-intercept polynomials".into(),
        ));
    }
    Ok(p)
}

/// One modified Gram-Schmidt step: removes the `f0` component from
/// `h0_star` and rescales the residual to unit variance.
pub fn orthogonalize(f0: &ProfileFunction, h0_star: &ProfileFunction) -> Result<ProfileFunction> {
    let f = zero_intercept_poly(f0)?;
    let h = zero_intercept_poly(h0_star)?;
    check_len(f.dim(), h.dim())?;
    let var_f = f.covariance(&f)?;
    if var_f < DEGENERATE_VARIANCE {
        return Err(Error::Parallel(var_f));
    }
    let proj = f.covariance(&h)? / var_f;
    let residual = h.plus(&f.scaled(-proj));
    let var_r = residual.covariance(&residual)?;
    if var_r < DEGENERATE_VARIANCE {
        return Err(Error::Parallel(var_r));
    }
    residual.scaled(1.0 / var_r.sqrt()).to_function()
}

/// Random zero-intercept polynomial with standard normal coefficients,
/// rescaled to unit variance.
pub fn random_unit_polynomial<R: Rng + ?Sized>(d: usize, degree: u8, rng: &mut R) -> Result<ProfileFunction> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be at least 1".into()));
    }
    if !(1..=2).contains(&degree) {
        return Err(Error::InvalidParameter(format!("degree must be 1 or 2, got {degree}")));
    }
    for _ in 0..32 {
        let lin: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let quad = (degree == 2).then(|| SquareMatrix::from_fn(d, |_, _| rng.sample(StandardNormal)));
        let p = Polynomial {
            constant: 0.0,
            lin,
            quad,
        };
        let v = p.covariance(&p)?;
        if v >= DEGENERATE_VARIANCE {
            return p.scaled(1.0 / v.sqrt()).to_function();
        }
    }
    Err(Error::Undefined("could not draw a non-degenerate polynomial".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convexity {
    /// `ν ∈ [0, 1)`
    Convex,
    /// `ν > 1` or `ν < 0`
    Nonconvex,
}

impl Convexity {
    pub fn admits(self, nu: f64) -> bool {
        match self {
            Self::Convex => (0.0..1.0).contains(&nu),
            Self::Nonconvex => nu > 1.0 || nu < 0.0,
        }
    }
}

fn default_sigma_sq() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    pub var_f: f64,
    /// `Var(f − h) / σ²`
    pub snr: f64,
    pub rho_fh: f64,
    pub convexity: Convexity,
    #[serde(default = "default_sigma_sq")]
    pub sigma_sq: f64,
}

impl CalibrationTarget {
    pub fn new(var_f: f64, snr: f64, rho_fh: f64, convexity: Convexity) -> Self {
        Self {
            var_f,
            snr,
            rho_fh,
            convexity,
            sigma_sq: 1.0,
        }
    }

    pub fn var_delta(&self) -> f64 {
        self.snr * self.sigma_sq
    }
}

/// Smallest attainable `ρ(f, h)` when `Var(f) > Var(δ)`.
pub fn min_achievable_correlation(var_f: f64, var_delta: f64) -> Option<f64> {
    (var_f > var_delta).then(|| (1.0 - var_delta / var_f).sqrt())
}

/// Both roots `ν = ρ² ± sqrt(ρ⁴ + ρ²(r − 1))` with `r = Var δ / Var f`,
/// larger root first. `None` when the discriminant is negative.
pub fn nu_roots(rho: f64, ratio: f64) -> Option<(f64, f64)> {
    let r2 = rho * rho;
    let disc = r2 * r2 + r2 * (ratio - 1.0);
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    Some((r2 + s, r2 - s))
}

/// `ρ(ν) = ν / sqrt(2ν − 1 + r)`; `None` outside its domain.
pub fn rho_of_nu(nu: f64, ratio: f64) -> Option<f64> {
    let denom = 2.0 * nu - 1.0 + ratio;
    (denom > 0.0).then(|| nu / denom.sqrt())
}

/// `C_h(ν) = sqrt(Var δ / (1 − ν)² − Var f)`; `None` when the radicand is
/// negative or `ν = 1`.
pub fn c_h_of_nu(nu: f64, var_f: f64, var_delta: f64) -> Option<f64> {
    let one_minus = 1.0 - nu;
    if one_minus == 0.0 {
        return None;
    }
    let sq = var_delta / (one_minus * one_minus) - var_f;
    (sq >= 0.0).then(|| sq.sqrt())
}

/// `ν(C_h) = 1 ± sqrt(Var δ / (Var f + C_h²))` for unit-variance `h₀`,
/// returned as `(plus, minus)`.
pub fn nu_of_c_h(c_h: f64, var_f: f64, var_delta: f64) -> (f64, f64) {
    let s = (var_delta / (var_f + c_h * c_h)).sqrt();
    (1.0 + s, 1.0 - s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedPair {
    pub f: ProfileFunction,
    pub h: ProfileFunction,
    pub nu: f64,
    pub c_f: f64,
    pub c_h: f64,
    pub f0: ProfileFunction,
    pub h0: ProfileFunction,
}

impl CalibratedPair {
    /// `(Var(f − h), ρ(f, h))` from closed-form moments.
    pub fn realized(&self) -> Result<(f64, f64)> {
        let vf = var_function(&self.f)?;
        let vh = var_function(&self.h)?;
        let cfh = covariance(&self.f, &self.h)?;
        let var_delta = vf + vh - 2.0 * cfh;
        Ok((var_delta, cfh / (vf * vh).sqrt()))
    }
}

const UNIT_TOL: f64 = 1e-8;
// Slack on C_h² for |ρ| = 1, where the exact value is zero.
const C_H_SQ_SLACK: f64 = 1e-10;

/// Picks `ν` for the requested convexity and assembles `(f, h)`.
///
/// When both roots fall in the requested convexity range, the root with the
/// smaller `C_h` is used.
pub fn solve_calibration(
    target: &CalibrationTarget,
    f0: &ProfileFunction,
    h0: &ProfileFunction,
) -> Result<CalibratedPair> {
    let CalibrationTarget {
        var_f, rho_fh: rho, ..
    } = *target;
    let var_delta = target.var_delta();
    if !(var_f > 0.0 && var_f.is_finite()) {
        return Err(Error::InvalidParameter(format!("Var(f) must be positive, got {var_f}")));
    }
    if !(var_delta > 0.0 && var_delta.is_finite()) {
        return Err(Error::Infeasible(format!(
            "Var(f - h) must be positive, got {var_delta}; nu = 1 gives h proportional to f"
        )));
    }
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::InvalidParameter(format!("correlation {rho} outside [-1, 1]")));
    }

    let vf0 = var_function(f0)?;
    let vh0 = var_function(h0)?;
    let c0 = covariance(f0, h0)?;
    if (vf0 - 1.0).abs() > UNIT_TOL || (vh0 - 1.0).abs() > UNIT_TOL || c0.abs() > UNIT_TOL {
        return Err(Error::InvalidParameter(format!(
            "f0, h0 must be unit-variance and uncorrelated (Var f0 = {vf0}, Var h0 = {vh0}, Cov = {c0})"
        )));
    }

    let ratio = var_delta / var_f;
    if let Some(min_rho) = min_achievable_correlation(var_f, var_delta) {
        if rho.abs() < min_rho {
            return Err(Error::Infeasible(format!(
                "|rho| = {} below minimum achievable correlation {min_rho}",
                rho.abs()
            )));
        }
    }
    let (hi, lo) = nu_roots(rho, ratio).ok_or_else(|| Error::Infeasible("negative discriminant".into()))?;

    let mut candidates: Vec<(f64, f64)> = Vec::new();
    for nu in [hi, lo] {
        let sign_ok = if rho == 0.0 { nu == 0.0 } else { nu.signum() == rho.signum() };
        if !sign_ok || nu == 1.0 || rho_of_nu(nu, ratio).is_none() {
            continue;
        }
        let c_h_sq = var_delta / ((1.0 - nu) * (1.0 - nu)) - var_f;
        if c_h_sq < -C_H_SQ_SLACK * var_f {
            continue;
        }
        if !candidates.iter().any(|&(v, _)| v == nu) {
            candidates.push((nu, c_h_sq.max(0.0).sqrt()));
        }
    }
    if candidates.is_empty() {
        return Err(Error::Infeasible(format!(
            "no root of the correlation equation is valid (roots {hi}, {lo})"
        )));
    }
    let (nu, c_h) = candidates
        .iter()
        .copied()
        .filter(|&(nu, _)| target.convexity.admits(nu))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| {
            Error::Infeasible(format!(
                "no valid root in the {:?} range (candidates {:?})",
                target.convexity,
                candidates.iter().map(|c| c.0).collect::<Vec<_>>()
            ))
        })?;

    let c_f = var_f.sqrt();
    let f = Polynomial::from_function(f0)?.scaled(c_f).to_function()?;
    let g = Polynomial::from_function(h0)?.scaled(c_h).to_function()?;
    let h = ProfileFunction::mixture(nu, f.clone(), g)?;
    Ok(CalibratedPair {
        f,
        h,
        nu,
        c_f,
        c_h,
        f0: f0.clone(),
        h0: h0.clone(),
    })
}

/// Draws a unit-variance `f₀` and an orthogonal unit-variance `h₀`.
pub fn random_orthogonal_pair<R: Rng + ?Sized>(
    d: usize,
    degree: u8,
    rng: &mut R,
) -> Result<(ProfileFunction, ProfileFunction)> {
    let f0 = random_unit_polynomial(d, degree, rng)?;
    for _ in 0..32 {
        let h_star = random_unit_polynomial(d, degree, rng)?;
        match orthogonalize(&f0, &h_star) {
            Ok(h0) => return Ok((f0, h0)),
            Err(Error::Parallel(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Undefined("could not draw an orthogonal direction".into()))
}

/// Monte Carlo estimate of a variance with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McVariance {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Estimates `Var(f(x))` for `x ~ Unif([0,1]^d)`. Works for any function,
/// including the forcing terms.
pub fn monte_carlo_variance<R: Rng + ?Sized>(
    f: &ProfileFunction,
    d: usize,
    samples: usize,
    rng: &mut R,
) -> Result<McVariance> {
    f.check_dim(d)?;
    if samples < 2 {
        return Err(Error::InvalidParameter("need at least two samples".into()));
    }
    let mut x = vec![0.0; d];
    let values: Vec<f64> = (0..samples)
        .map(|_| {
            x.iter_mut().for_each(|v| *v = rng.random());
            f.eval_point(&x)
        })
        .collect();
    let n = samples as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for v in &values {
        let sq = (v - mean) * (v - mean);
        m2 += sq;
        m4 += sq * sq;
    }
    let var = m2 / (n - 1.0);
    let mean_sq = m2 / n;
    let var_of_sq = (m4 / n - mean_sq * mean_sq).max(0.0);
    Ok(McVariance {
        value: var,
        std_error: (var_of_sq / n).sqrt(),
        samples,
    })
}
