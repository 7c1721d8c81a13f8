//! Mean functions, fixed designs and noisy profile generation.
//!
//! A profile at time `t` is the vector `y = f(X) + ε` where `X` is an `n × d`
//! design held fixed for the whole run and `ε` is i.i.d. Gaussian noise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{dot, SquareMatrix};

/// Mean function of a profile.
///
/// The JSON form is tagged by `kind`, e.g.
/// `{"kind":"linear","coeffs":[3,2,1],"intercept":1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileFunction {
    /// `intercept + aᵀx`
    Linear { coeffs: Vec<f64>, intercept: f64 },
    /// `xᵀAx + aᵀx`
    Quadratic { matrix: SquareMatrix, coeffs: Vec<f64> },
    /// `scale · sin(2π x₁ x₂)`
    ForcingSin { scale: f64 },
    /// `scale · |x₁ − 0.5| e^{−x₂} 1{x₃ > 0.5}`
    ForcingRidge { scale: f64 },
    /// `nu · left + (1 − nu) · right`
    Mixture {
        nu: f64,
        left: Box<ProfileFunction>,
        right: Box<ProfileFunction>,
    },
}

impl ProfileFunction {
    pub fn linear(coeffs: Vec<f64>, intercept: f64) -> Self {
        Self::Linear { coeffs, intercept }
    }

    pub fn quadratic(matrix: SquareMatrix, coeffs: Vec<f64>) -> Result<Self> {
        if matrix.dim() != coeffs.len() {
            return Err(Error::DimensionMismatch {
                expected: matrix.dim(),
                found: coeffs.len(),
            });
        }
        Ok(Self::Quadratic { matrix, coeffs })
    }

    pub fn mixture(nu: f64, left: ProfileFunction, right: ProfileFunction) -> Result<Self> {
        let mixed = Self::Mixture {
            nu,
            left: Box::new(left),
            right: Box::new(right),
        };
        mixed.validate()?;
        Ok(mixed)
    }

    /// Explicit input dimension, if the function fixes one. Forcing terms
    /// accept any `d` at least as large as [`Self::min_dim`].
    pub fn dim(&self) -> Option<usize> {
        match self {
            Self::Linear { coeffs, .. } | Self::Quadratic { coeffs, .. } => Some(coeffs.len()),
            Self::ForcingSin { .. } | Self::ForcingRidge { .. } => None,
            Self::Mixture { left, right, .. } => left.dim().or_else(|| right.dim()),
        }
    }

    pub fn min_dim(&self) -> usize {
        match self {
            Self::Linear { coeffs, .. } | Self::Quadratic { coeffs, .. } => coeffs.len().max(1),
            Self::ForcingSin { .. } => 2,
            Self::ForcingRidge { .. } => 3,
            Self::Mixture { left, right, .. } => left.min_dim().max(right.min_dim()),
        }
    }

    /// Checks internal consistency of dimensions.
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Quadratic { matrix, coeffs } if matrix.dim() != coeffs.len() => {
                Err(Error::DimensionMismatch {
                    expected: matrix.dim(),
                    found: coeffs.len(),
                })
            }
            Self::Mixture { left, right, .. } => {
                left.validate()?;
                right.validate()?;
                if let (Some(a), Some(b)) = (left.dim(), right.dim()) {
                    if a != b {
                        return Err(Error::DimensionMismatch {
                            expected: a,
                            found: b,
                        });
                    }
                }
                if let Some(d) = self.dim() {
                    if d < self.min_dim() {
                        return Err(Error::DimensionMismatch {
                            expected: self.min_dim(),
                            found: d,
                        });
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Checks that the function can be evaluated on `d`-dimensional inputs.
    pub fn check_dim(&self, d: usize) -> Result<()> {
        self.validate()?;
        match self.dim() {
            Some(e) if e != d => Err(Error::DimensionMismatch {
                expected: e,
                found: d,
            }),
            _ if d < self.min_dim() => Err(Error::DimensionMismatch {
                expected: self.min_dim(),
                found: d,
            }),
            _ => Ok(()),
        }
    }

    /// Evaluates at a single point. The caller guarantees dimensions.
    pub fn eval_point(&self, x: &[f64]) -> f64 {
        match self {
            Self::Linear { coeffs, intercept } => intercept + dot(coeffs, x),
            Self::Quadratic { matrix, coeffs } => matrix.bilinear(x, x) + dot(coeffs, x),
            Self::ForcingSin { scale } => scale * (2.0 * PI * x[0] * x[1]).sin(),
            Self::ForcingRidge { scale } => {
                if x[2] > 0.5 {
                    scale * (x[0] - 0.5).abs() * (-x[1]).exp()
                } else {
                    0.0
                }
            }
            Self::Mixture { nu, left, right } => {
                nu * left.eval_point(x) + (1.0 - nu) * right.eval_point(x)
            }
        }
    }

    /// Mean vector `f(X)`: component `i` is the function at row `i`.
    pub fn evaluate(&self, design: &FixedDesign) -> Result<Vec<f64>> {
        self.check_dim(design.d())?;
        Ok(design.rows().map(|x| self.eval_point(x)).collect())
    }
}

/// Design matrix `X ∈ [0,1]^{n×d}`, shared by every time step of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedDesign {
    n: usize,
    d: usize,
    points: Vec<f64>,
}

impl FixedDesign {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::InvalidParameter(format!(
                "design needs at least 2 rows, got {n}"
            )));
        }
        let d = rows[0].len();
        if d == 0 {
            return Err(Error::InvalidParameter("design has zero columns".into()));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: bad.len(),
            });
        }
        if rows.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter(
                "design entries must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            n,
            d,
            points: rows.iter().flatten().copied().collect(),
        })
    }

    /// Draws `n` points from `Unif([0,1]^d)`.
    pub fn sample_uniform<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Result<Self> {
        if n < 2 || d == 0 {
            return Err(Error::InvalidParameter(format!(
                "design shape {n}x{d} invalid: need n >= 2, d >= 1"
            )));
        }
        let points = (0..n * d).map(|_| rng.random::<f64>()).collect();
        Ok(Self { n, d, points })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.d)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }
}

/// Observed responses at time `t`. Historical profiles use `t <= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseVector {
    pub t: i64,
    pub y: Vec<f64>,
}

impl ResponseVector {
    pub fn new(t: i64, y: Vec<f64>) -> Self {
        Self { t, y }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// `mean + σ ε` with ε standard normal.
pub fn add_noise<R: Rng + ?Sized>(mean: &[f64], sigma: f64, t: i64, rng: &mut R) -> ResponseVector {
    let y = mean
        .iter()
        .map(|m| m + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    ResponseVector { t, y }
}

/// One noisy profile `f(X) + ε`, `ε ~ N(0, σ² I)`.
pub fn generate_profile<R: Rng + ?Sized>(
    function: &ProfileFunction,
    design: &FixedDesign,
    sigma: f64,
    t: i64,
    rng: &mut R,
) -> Result<ResponseVector> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise sd must be positive, got {sigma}"
        )));
    }
    let mean = function.evaluate(design)?;
    Ok(add_noise(&mean, sigma, t, rng))
}

/// In-control function and out-of-control forcing function from the
/// comparison study. The out-of-control mean is `Mixture(nu, f, g)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePair {
    pub name: String,
    pub in_control: ProfileFunction,
    pub forcing: ProfileFunction,
}

fn catalog_linear() -> ProfileFunction {
    ProfileFunction::linear(vec![3.0, 2.0, 1.0], 1.0)
}

/// `(4/9)(3x₁ + 2x₂ + x₃)²` as `xᵀAx` with `A = (4/9) a aᵀ`.
fn catalog_quadratic() -> ProfileFunction {
    let a = [3.0, 2.0, 1.0];
    let matrix = SquareMatrix::from_fn(3, |i, j| 4.0 / 9.0 * a[i] * a[j]);
    ProfileFunction::Quadratic {
        matrix,
        coeffs: vec![0.0; 3],
    }
}

/// The four `(f, g)` pairs of the comparison study, all with `d = 3`.
pub fn table2_catalog() -> Vec<ProfilePair> {
    let pair = |name: &str, f: ProfileFunction, g: ProfileFunction| ProfilePair {
        name: name.to_string(),
        in_control: f,
        forcing: g,
    };
    vec![
        pair(
            "linear-sin",
            catalog_linear(),
            ProfileFunction::ForcingSin { scale: 1.0 },
        ),
        pair(
            "quadratic-sin",
            catalog_quadratic(),
            ProfileFunction::ForcingSin { scale: 5.0 },
        ),
        pair(
            "linear-ridge",
            catalog_linear(),
            ProfileFunction::ForcingRidge { scale: 25.0 },
        ),
        pair(
            "quadratic-ridge",
            catalog_quadratic(),
            ProfileFunction::ForcingRidge { scale: 25.0 },
        ),
    ]
}
