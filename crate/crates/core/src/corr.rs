//! Sliding-window sample correlation matrix.
//!
//! Responses are stored centered and scaled to unit norm, so every Pearson
//! correlation is a single length-`n` dot product. Pushing a profile shifts
//! the matrix by one slot and computes the `w − 1` entries of the new row;
//! nothing else is recomputed.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::linalg::{dot, SquareMatrix};
use crate::profile_model::ResponseVector;

/// `(y − ȳ) / ‖y − ȳ‖`. Errors on a constant response.
pub fn unit_centered(y: &[f64]) -> Result<Vec<f64>> {
    if y.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "a profile needs at least 2 responses, got {}",
            y.len()
        )));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let mut centered: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let norm = dot(&centered, &centered).sqrt();
    let scale = y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if !(norm > 1e-14 * scale * (y.len() as f64).sqrt()) || !norm.is_finite() {
        return Err(Error::DegenerateProfile);
    }
    centered.iter_mut().for_each(|v| *v /= norm);
    Ok(centered)
}

#[inline]
fn unit_dot(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b).clamp(-1.0, 1.0)
}

/// Sample Pearson correlation.
pub fn pearson(y1: &[f64], y2: &[f64]) -> Result<f64> {
    if y1.len() != y2.len() {
        return Err(Error::DimensionMismatch {
            expected: y1.len(),
            found: y2.len(),
        });
    }
    Ok(unit_dot(&unit_centered(y1)?, &unit_centered(y2)?))
}

/// Correlation matrix of already normalized responses.
pub fn correlation_from_units(units: &[&[f64]]) -> SquareMatrix {
    let w = units.len();
    let mut r = SquareMatrix::identity(w);
    for i in 0..w {
        for j in 0..i {
            r.set_sym(i, j, unit_dot(units[i], units[j]));
        }
    }
    r
}

/// The `m` known in-control profiles with their correlation matrix `R★`
/// and the pointwise mean / pooled noise variance used by the bootstrap.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoricalBank {
    responses: Vec<ResponseVector>,
    units: Vec<Vec<f64>>,
    r_star: SquareMatrix,
    f_hat: Vec<f64>,
    sigma_hat_sq: f64,
}

impl HistoricalBank {
    pub fn m(&self) -> usize {
        self.responses.len()
    }

    pub fn n(&self) -> usize {
        self.f_hat.len()
    }

    pub fn responses(&self) -> &[ResponseVector] {
        &self.responses
    }

    pub fn unit(&self, j: usize) -> &[f64] {
        &self.units[j]
    }

    pub fn r_star(&self) -> &SquareMatrix {
        &self.r_star
    }

    /// Pointwise mean of the historical responses.
    pub fn f_hat(&self) -> &[f64] {
        &self.f_hat
    }

    /// `Σᵢ Σ_t (y_i^t − f̂_i)² / (n (m − 1))`
    pub fn sigma_hat_sq(&self) -> f64 {
        self.sigma_hat_sq
    }
}

/// Builds `R★`, `f̂(X)` and `σ̂²` from historical responses ordered oldest
/// first (`t = 1 − m, …, 0`).
pub fn build_bank(historical: Vec<ResponseVector>) -> Result<HistoricalBank> {
    let m = historical.len();
    if m < 2 {
        return Err(Error::InsufficientProfiles { needed: 2, found: m });
    }
    let n = historical[0].len();
    if let Some(bad) = historical.iter().find(|r| r.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: bad.len(),
        });
    }
    let units = historical
        .iter()
        .map(|r| unit_centered(&r.y))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[f64]> = units.iter().map(Vec::as_slice).collect();
    let r_star = correlation_from_units(&refs);

    let mut f_hat = vec![0.0; n];
    for r in &historical {
        f_hat.iter_mut().zip(&r.y).for_each(|(f, y)| *f += y);
    }
    f_hat.iter_mut().for_each(|f| *f /= m as f64);
    let ss: f64 = historical
        .iter()
        .flat_map(|r| r.y.iter().zip(&f_hat).map(|(y, f)| (y - f) * (y - f)))
        .sum();
    let sigma_hat_sq = ss / (n as f64 * (m as f64 - 1.0));

    Ok(HistoricalBank {
        responses: historical,
        units,
        r_star,
        f_hat,
        sigma_hat_sq,
    })
}

/// Where a window slot's profile came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotSource {
    /// Index into the historical bank.
    Historical(usize),
    /// Monitoring time of an observed profile.
    Observed(i64),
}

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    source: SlotSource,
    unit: Vec<f64>,
}

/// Work counters, used to check the per-step cost.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WorkCounters {
    /// Length-`n` dot products performed since construction.
    pub dot_products: u64,
    /// Number of full `w × w` recomputations (only at construction).
    pub full_rebuilds: u64,
}

/// The last `w` profiles in chronological order (oldest first) and their
/// correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationWindow {
    n: usize,
    slots: VecDeque<Slot>,
    r: SquareMatrix,
    t: u64,
    counters: WorkCounters,
}

impl CorrelationWindow {
    pub fn w(&self) -> usize {
        self.slots.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.r
    }

    /// Number of profiles pushed since initialization.
    pub fn time(&self) -> u64 {
        self.t
    }

    pub fn sources(&self) -> impl Iterator<Item = SlotSource> + '_ {
        self.slots.iter().map(|s| s.source)
    }

    pub fn unit(&self, slot: usize) -> &[f64] {
        &self.slots[slot].unit
    }

    pub fn counters(&self) -> WorkCounters {
        self.counters
    }

    /// Evicts the oldest profile and appends `y`.
    pub fn push(&mut self, y: &ResponseVector) -> Result<()> {
        if y.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: y.len(),
            });
        }
        let unit = unit_centered(&y.y)?;
        let w = self.w();
        for i in 0..w - 1 {
            for j in 0..w - 1 {
                let v = self.r[(i + 1, j + 1)];
                self.r[(i, j)] = v;
            }
        }
        self.slots.pop_front();
        for i in 0..w - 1 {
            let c = unit_dot(&self.slots[i].unit, &unit);
            self.r.set_sym(i, w - 1, c);
        }
        self.r[(w - 1, w - 1)] = 1.0;
        self.counters.dot_products += (w - 1) as u64;
        self.slots.push_back(Slot {
            source: SlotSource::Observed(y.t),
            unit,
        });
        self.t += 1;
        Ok(())
    }
}

/// Seeds a window with the `w` most recent historical profiles; its matrix
/// is the trailing `w × w` block of `R★`.
pub fn init_window(bank: &HistoricalBank, w: usize) -> Result<CorrelationWindow> {
    let m = bank.m();
    if w < 2 || w > m {
        return Err(Error::InvalidParameter(format!(
            "window size {w} outside [2, {m}]"
        )));
    }
    let idx: Vec<usize> = (m - w..m).collect();
    let slots = idx
        .iter()
        .map(|&j| Slot {
            source: SlotSource::Historical(j),
            unit: bank.units[j].clone(),
        })
        .collect();
    Ok(CorrelationWindow {
        n: bank.n(),
        slots,
        r: bank.r_star.principal(&idx),
        t: 0,
        counters: WorkCounters::default(),
    })
}

/// Size of the historical index pool at window time `t`: historical
/// profiles still physically in the trailing `w − k1` slots are excluded.
pub fn replacement_pool_size(t: u64, w: usize, k1: usize, m: usize) -> usize {
    if t as usize >= w - k1 {
        m
    } else {
        m - w + k1 + t as usize
    }
}

/// Draws `k1` distinct historical indices for substitution.
pub fn sample_replacement_indices<R: Rng + ?Sized>(
    t: u64,
    w: usize,
    k1: usize,
    m: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if k1 == 0 || k1 >= w || w > m {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= k1 < w <= m, got k1={k1}, w={w}, m={m}"
        )));
    }
    let pool = replacement_pool_size(t, w, k1, m);
    if pool < k1 {
        return Err(Error::InvalidParameter(format!(
            "replacement pool {pool} smaller than k1={k1}"
        )));
    }
    Ok(index::sample(rng, pool, k1).into_vec())
}

/// `R(k1)`: the window matrix with its `k1` oldest slots replaced by
/// historical profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct SubstitutedMatrix {
    pub matrix: SquareMatrix,
    pub k1: usize,
    pub sampled_indices: Vec<usize>,
    /// Entries computed from raw responses rather than read from `R★` or `R`.
    pub fresh_entries: usize,
}

/// Builds `R(k1)`. The leading block comes from `R★`; cross entries against
/// a slot that still holds a historical profile come from `R★` too, while
/// cross entries against observed profiles are computed fresh. The trailing
/// block is copied from the window.
pub fn substitute(
    window: &CorrelationWindow,
    bank: &HistoricalBank,
    k1: usize,
    indices: &[usize],
) -> Result<SubstitutedMatrix> {
    let w = window.w();
    if k1 == 0 || k1 >= w || indices.len() != k1 {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= k1 < w and k1 indices, got k1={k1}, w={w}, {} indices",
            indices.len()
        )));
    }
    for (a, &j) in indices.iter().enumerate() {
        if j >= bank.m() {
            return Err(Error::InvalidParameter(format!("historical index {j} out of range")));
        }
        if indices[..a].contains(&j) {
            return Err(Error::InvalidParameter(format!("historical index {j} repeated")));
        }
    }
    let trailing: Vec<&Slot> = window.slots.iter().skip(k1).collect();
    for slot in &trailing {
        if let SlotSource::Historical(b) = slot.source {
            if indices.contains(&b) {
                return Err(Error::InvalidParameter(format!(
                    "historical profile {b} is still in the window"
                )));
            }
        }
    }

    let r_star = bank.r_star();
    let mut rk = SquareMatrix::identity(w);
    for a in 0..k1 {
        for b in 0..a {
            rk.set_sym(a, b, r_star[(indices[a], indices[b])]);
        }
    }
    let mut fresh = 0;
    for (a, &j) in indices.iter().enumerate() {
        for (s, slot) in trailing.iter().enumerate() {
            let c = match slot.source {
                SlotSource::Historical(b) => r_star[(j, b)],
                SlotSource::Observed(_) => {
                    fresh += 1;
                    unit_dot(bank.unit(j), &slot.unit)
                }
            };
            rk.set_sym(a, k1 + s, c);
        }
    }
    let r = window.matrix();
    for i in k1..w {
        for j in k1..i {
            rk.set_sym(i, j, r[(i, j)]);
        }
    }
    Ok(SubstitutedMatrix {
        matrix: rk,
        k1,
        sampled_indices: indices.to_vec(),
        fresh_entries: fresh,
    })
}

/// Expected correlation matrix with `k1` in-control profiles followed by
/// `k2` out-of-control ones: `γ₁` within the leading block, `γ₂` within the
/// trailing block, `γ₁₂` across, unit diagonal.
pub fn expected_r(gamma1: f64, gamma2: f64, gamma12: f64, k1: usize, k2: usize) -> Result<SquareMatrix> {
    for (name, g) in [("gamma1", gamma1), ("gamma2", gamma2), ("gamma12", gamma12)] {
        if !(g > -1.0 && g < 1.0) {
            return Err(Error::InvalidParameter(format!("{name} = {g} outside (-1, 1)")));
        }
    }
    let w = k1 + k2;
    if w < 2 {
        return Err(Error::InvalidParameter(format!("k1 + k2 = {w} < 2")));
    }
    Ok(SquareMatrix::from_fn(w, |i, j| {
        if i == j {
            1.0
        } else {
            match (i < k1, j < k1) {
                (true, true) => gamma1,
                (false, false) => gamma2,
                _ => gamma12,
            }
        }
    }))
}
