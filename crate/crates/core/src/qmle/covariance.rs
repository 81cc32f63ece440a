//! Symmetric 2×2 score covariance and its inverse.

use serde::{Deserialize, Serialize};

use super::filter::ScorePair;
use crate::error::{invalid, Result, VolError};
use crate::scalar::Scalar;

/// Relative eigenvalue floor below which the matrix counts as singular.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// `[[a11, a12], [a12, a22]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreCovariance<T> {
    pub a11: T,
    pub a12: T,
    pub a22: T,
}

impl<T: Scalar> ScoreCovariance<T> {
    pub fn new(a11: T, a12: T, a22: T) -> Self {
        Self { a11, a12, a22 }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::one())
    }

    /// Mean of `v vᵀ` over `vs`.
    pub fn mean_outer<I: IntoIterator<Item = [T; 2]>>(vs: I) -> Self {
        let mut n = 0usize;
        let (mut s11, mut s12, mut s22) = (T::zero(), T::zero(), T::zero());
        for [a, b] in vs {
            s11 += a * a;
            s12 += a * b;
            s22 += b * b;
            n += 1;
        }
        let inv = T::one() / T::lit(n.max(1) as f64);
        Self::new(s11 * inv, s12 * inv, s22 * inv)
    }

    pub fn as_rows(&self) -> [[T; 2]; 2] {
        [[self.a11, self.a12], [self.a12, self.a22]]
    }

    pub fn trace(&self) -> T {
        self.a11 + self.a22
    }

    pub fn det(&self) -> T {
        self.a11 * self.a22 - self.a12 * self.a12
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> (T, T) {
        let half = T::lit(0.5);
        let mid = half * (self.a11 + self.a22);
        let d = half * (self.a11 - self.a22);
        let rad = (d * d + self.a12 * self.a12).sqrt();
        (mid - rad, mid + rad)
    }

    pub fn is_rank_deficient(&self) -> bool {
        let (lo, hi) = self.eigenvalues();
        !(hi > T::zero()) || lo <= T::lit(RANK_TOLERANCE) * hi
    }

    pub fn check_invertible(&self) -> Result<()> {
        if self.is_rank_deficient() {
            let (lo, hi) = self.eigenvalues();
            return Err(VolError::RankDeficient { min_eig: lo.to_f64_lossy(), max_eig: hi.to_f64_lossy() });
        }
        Ok(())
    }

    pub fn inverse(&self) -> Result<Self> {
        self.check_invertible()?;
        let det = self.det();
        Ok(Self::new(self.a22 / det, -self.a12 / det, self.a11 / det))
    }

    /// `vᵀ M v`.
    #[inline]
    pub fn quad_form(&self, v: [T; 2]) -> T {
        let [x, y] = v;
        self.a11 * x * x + T::lit(2.0) * self.a12 * x * y + self.a22 * y * y
    }

    pub fn frobenius(&self) -> T {
        (self.a11 * self.a11 + T::lit(2.0) * self.a12 * self.a12 + self.a22 * self.a22).sqrt()
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::new(self.a11 - other.a11, self.a12 - other.a12, self.a22 - other.a22)
    }

    pub fn cast<U: Scalar>(&self) -> ScoreCovariance<U> {
        ScoreCovariance::new(
            U::lit(self.a11.to_f64_lossy()),
            U::lit(self.a12.to_f64_lossy()),
            U::lit(self.a22.to_f64_lossy()),
        )
    }
}

/// `D̂ = (1/m) Σ s_i s_iᵀ`. Rank deficiency is reported by
/// [`ScoreCovariance::check_invertible`], not here, so that unusable
/// training samples can still be inspected.
pub fn compute_d_hat<T: Scalar>(scores: &[ScorePair<T>]) -> Result<ScoreCovariance<T>> {
    if scores.len() < 2 {
        return invalid(format!("need at least two scores, got {}", scores.len()));
    }
    if scores.iter().any(|s| !s.s_alpha.is_finite() || !s.s_beta.is_finite()) {
        return Err(VolError::NonFinite("score".into()));
    }
    Ok(ScoreCovariance::mean_outer(scores.iter().map(ScorePair::as_array)))
}
