//! Multi-dimensional cognitive uncertainty.
//!
//! Uncertainty is carried as a three-component vector (perceptual, semantic,
//! inferential). This module measures each component from an agent's raw
//! outputs, splits a measured vector into its epistemic (tradable) and
//! aleatoric (irreducible) parts, and collapses a vector to a weighted scalar.
//!
//! Entropies use the natural log and are normalized by `ln(K)` so every
//! component lives on `[0, 1]`. Zero-probability terms contribute nothing
//! (`0 · ln 0 := 0`).

use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for probability vectors summing to one.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;
/// Tolerance for dimension weights summing to one.
pub const WEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UncertaintyError {
    #[error("probability vector is empty")]
    EmptyDistribution,
    #[error("probability vector has invalid entry {value} at index {index}")]
    InvalidProbability { index: usize, value: f64 },
    #[error("probability vector sums to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("smoothing constant must be positive, got {0}")]
    NonPositiveSmoothing(f64),
    #[error("complexity must be positive, got {0}")]
    NonPositiveComplexity(f64),
    #[error("semantic entry {index} has negative weight or ambiguity")]
    NegativeSemanticEntry { index: usize },
    #[error("gamma must lie in [0, 1], got {0}")]
    GammaOutOfRange(f64),
    #[error("dimension weights must be in [0, 1] and sum to 1, got ({0}, {1}, {2})")]
    InvalidWeights(f64, f64, f64),
}

/// One of the three tradable uncertainty dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Perc,
    Sem,
    Inf,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Perc, Dimension::Sem, Dimension::Inf];

    pub fn index(self) -> usize {
        match self {
            Dimension::Perc => 0,
            Dimension::Sem => 1,
            Dimension::Inf => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Perc => "perc",
            Dimension::Sem => "sem",
            Dimension::Inf => "inf",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A `[perc, sem, inf]` triple.
///
/// Used both for nonnegative holdings and for signed net transfers; callers that
/// need the nonnegative contract check [`UncertaintyVector::is_nonnegative`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UncertaintyVector {
    pub perc: f64,
    pub sem: f64,
    pub inf: f64,
}

impl UncertaintyVector {
    pub const ZERO: UncertaintyVector = UncertaintyVector { perc: 0.0, sem: 0.0, inf: 0.0 };

    pub const fn new(perc: f64, sem: f64, inf: f64) -> Self {
        Self { perc, sem, inf }
    }

    pub fn splat(v: f64) -> Self {
        Self::new(v, v, v)
    }

    pub fn get(&self, dim: Dimension) -> f64 {
        match dim {
            Dimension::Perc => self.perc,
            Dimension::Sem => self.sem,
            Dimension::Inf => self.inf,
        }
    }

    pub fn get_mut(&mut self, dim: Dimension) -> &mut f64 {
        match dim {
            Dimension::Perc => &mut self.perc,
            Dimension::Sem => &mut self.sem,
            Dimension::Inf => &mut self.inf,
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.perc, self.sem, self.inf]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(f(self.perc), f(self.sem), f(self.inf))
    }

    /// Componentwise product.
    pub fn hadamard(self, other: Self) -> Self {
        Self::new(self.perc * other.perc, self.sem * other.sem, self.inf * other.inf)
    }

    pub fn l1_norm(&self) -> f64 {
        self.perc.abs() + self.sem.abs() + self.inf.abs()
    }

    pub fn is_finite(&self) -> bool {
        self.perc.is_finite() && self.sem.is_finite() && self.inf.is_finite()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.perc >= 0.0 && self.sem >= 0.0 && self.inf >= 0.0
    }

    /// True when any component is strictly positive.
    pub fn is_active(&self) -> bool {
        self.perc > 0.0 || self.sem > 0.0 || self.inf > 0.0
    }

    pub fn clamp_unit(self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// The dimension holding the largest component; ties resolve to the earlier dimension.
    pub fn dominant_dimension(&self) -> Dimension {
        let mut best = Dimension::Perc;
        for dim in [Dimension::Sem, Dimension::Inf] {
            if self.get(dim) > self.get(best) {
                best = dim;
            }
        }
        best
    }
}

impl Add for UncertaintyVector {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.perc + rhs.perc, self.sem + rhs.sem, self.inf + rhs.inf)
    }
}

impl Sub for UncertaintyVector {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.perc - rhs.perc, self.sem - rhs.sem, self.inf - rhs.inf)
    }
}

impl Mul<f64> for UncertaintyVector {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.map(|v| v * rhs)
    }
}

/// Epistemic/aleatoric split of a measured uncertainty vector.
///
/// Only `epistemic` is ever traded; `aleatoric` is carried through a task
/// untouched.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UncertaintyDecomposition {
    pub epistemic: UncertaintyVector,
    pub aleatoric: UncertaintyVector,
}

impl UncertaintyDecomposition {
    pub fn total(&self) -> UncertaintyVector {
        self.epistemic + self.aleatoric
    }
}

/// Per-dimension weights used to collapse a vector into a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionWeights {
    pub w_perc: f64,
    pub w_sem: f64,
    pub w_inf: f64,
}

impl Default for DimensionWeights {
    fn default() -> Self {
        Self { w_perc: 0.4, w_sem: 0.3, w_inf: 0.3 }
    }
}

impl DimensionWeights {
    pub fn new(w_perc: f64, w_sem: f64, w_inf: f64) -> Result<Self, UncertaintyError> {
        let w = Self { w_perc, w_sem, w_inf };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), UncertaintyError> {
        let parts = [self.w_perc, self.w_sem, self.w_inf];
        let in_range = parts.iter().all(|w| w.is_finite() && (0.0..=1.0).contains(w));
        let sum: f64 = parts.iter().sum();
        if in_range && (sum - 1.0).abs() <= WEIGHT_TOLERANCE {
            Ok(())
        } else {
            Err(UncertaintyError::InvalidWeights(self.w_perc, self.w_sem, self.w_inf))
        }
    }

    pub fn get(&self, dim: Dimension) -> f64 {
        match dim {
            Dimension::Perc => self.w_perc,
            Dimension::Sem => self.w_sem,
            Dimension::Inf => self.w_inf,
        }
    }
}

fn check_simplex(probs: &[f64]) -> Result<(), UncertaintyError> {
    if probs.is_empty() {
        return Err(UncertaintyError::EmptyDistribution);
    }
    for (index, &value) in probs.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(UncertaintyError::InvalidProbability { index, value });
        }
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(UncertaintyError::NotNormalized { sum });
    }
    Ok(())
}

/// Shannon entropy divided by `ln(K)`; zero for a single outcome.
fn normalized_entropy(probs: &[f64]) -> f64 {
    if probs.len() < 2 {
        return 0.0;
    }
    let h: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    (h / (probs.len() as f64).ln()).clamp(0.0, 1.0)
}

/// Perceptual uncertainty of a class distribution: normalized Shannon entropy.
pub fn perceptual_uncertainty(class_probs: &[f64]) -> Result<f64, UncertaintyError> {
    check_simplex(class_probs)?;
    Ok(normalized_entropy(class_probs))
}

/// Semantic uncertainty: `Σ wᵢ·Cᵢ / (N + λ)`, clamped to `[0, 1]`.
///
/// `entries` are `(weight, ambiguity)` pairs, one per semantic type.
pub fn semantic_uncertainty(
    entries: &[(f64, f64)],
    complexity: f64,
    smoothing: f64,
) -> Result<f64, UncertaintyError> {
    if !(smoothing > 0.0) {
        return Err(UncertaintyError::NonPositiveSmoothing(smoothing));
    }
    if !(complexity > 0.0) {
        return Err(UncertaintyError::NonPositiveComplexity(complexity));
    }
    let mut acc = 0.0;
    for (index, &(w, c)) in entries.iter().enumerate() {
        if !(w >= 0.0 && c >= 0.0) {
            return Err(UncertaintyError::NegativeSemanticEntry { index });
        }
        acc += w * c;
    }
    Ok((acc / (complexity + smoothing)).clamp(0.0, 1.0))
}

/// Inferential uncertainty: `γ·(1 − max p) + (1 − γ)·H(p)/ln(M)`.
pub fn inferential_uncertainty(outcome_probs: &[f64], gamma: f64) -> Result<f64, UncertaintyError> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(UncertaintyError::GammaOutOfRange(gamma));
    }
    check_simplex(outcome_probs)?;
    let max_p = outcome_probs.iter().copied().fold(0.0_f64, f64::max);
    let confidence_gap = (1.0 - max_p).max(0.0);
    Ok((gamma * confidence_gap + (1.0 - gamma) * normalized_entropy(outcome_probs)).clamp(0.0, 1.0))
}

/// Split `total` into epistemic and aleatoric parts.
///
/// Per dimension the epistemic share is `(1 − randomness)·total + knowledge_gap`,
/// clamped to `[0, total]`; the aleatoric part is the remainder, so the two
/// always reconstruct `total`. Cues outside `[0, 1]` are clamped.
pub fn decompose(
    total: UncertaintyVector,
    knowledge_gap: f64,
    randomness: f64,
) -> UncertaintyDecomposition {
    let gap = knowledge_gap.clamp(0.0, 1.0);
    let rand = randomness.clamp(0.0, 1.0);
    let epistemic = total.map(|t| ((1.0 - rand) * t + gap).clamp(0.0, t.max(0.0)));
    let aleatoric = total - epistemic;
    UncertaintyDecomposition { epistemic, aleatoric }
}

/// Weighted scalar total `w·u`.
pub fn total_uncertainty(u: &UncertaintyVector, w: &DimensionWeights) -> f64 {
    w.w_perc * u.perc + w.w_sem * u.sem + w.w_inf * u.inf
}
