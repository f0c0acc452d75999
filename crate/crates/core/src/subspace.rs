//! Orthonormal bases for column spans and residual distances against them.
//!
//! The distance from a probe vector `s` to `span(W)` equals `‖s - W x̂‖` for the
//! least-squares solution `x̂`. Rather than re-solving per sample we orthonormalize
//! `W` once and project: `d = ‖s - Q Qᵀ s‖`. Every projection uses modified
//! Gram-Schmidt applied twice, which keeps the basis orthonormal to working
//! precision even after many augmentations.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprint::Fingerprint;

/// A column whose norm shrinks below this fraction of its original norm during
/// orthogonalization is treated as linearly dependent.
pub const DEPENDENCE_TOLERANCE: f64 = 1e-8;

/// Maximum tolerated deviation of `QᵀQ` from the identity.
pub const ORTHONORMALITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum SubspaceError {
    #[error("vector has length {found}, basis lives in dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite entry {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("residual distance {distance:e} (relative {relative:e}) is too small to define a new direction")]
    DegenerateResidual { distance: f64, relative: f64 },
    #[error("basis already spans the whole space (rank {0})")]
    Full(usize),
    #[error("columns are not orthonormal: max |QᵀQ - I| = {0:e}")]
    NotOrthonormal(f64),
}

/// What a probe vector holds, and correspondingly which span a basis was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VectorMode {
    /// Raw logits; the span of interest is `span(W)`.
    #[serde(rename = "logits")]
    LogitsMode,
    /// CLR images of probability vectors; the span of interest is `span([W, 1])`.
    #[serde(rename = "probability")]
    ProbabilityMode,
}

impl std::fmt::Display for VectorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VectorMode::LogitsMode => "logits",
            VectorMode::ProbabilityMode => "probability",
        })
    }
}

/// Distance from a vector to a subspace, together with the orthogonal component.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub distance: f64,
    pub relative_distance: f64,
    pub component: Vec<f64>,
}

/// Orthonormal columns spanning a subspace of `R^dim`.
///
/// Residual queries take `&self` and may run concurrently; [`OrthoBasis::augment`]
/// needs `&mut self`.
#[derive(Debug, Clone)]
pub struct OrthoBasis {
    dim: usize,
    // column-major, `rank * dim` values
    columns: Vec<f64>,
    origin: VectorMode,
}

// eight independent accumulators let the compiler vectorize the reduction
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().sum::<f64>() + tail
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_finite(v: &[f64]) -> Result<(), SubspaceError> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(SubspaceError::NonFinite {
            index,
            value: v[index],
        }),
        None => Ok(()),
    }
}

/// Two modified Gram-Schmidt sweeps of `v` against orthonormal `columns` of length `dim`.
fn orthogonalize(columns: &[f64], dim: usize, v: &mut [f64]) {
    if dim == 0 {
        return;
    }
    for _ in 0..2 {
        for q in columns.chunks_exact(dim) {
            let c = dot(q, v);
            v.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * qi);
        }
    }
}

/// Column span of the fingerprint matrix, or of `[W, 1]` in probability mode.
///
/// Rank-deficient `W` is accepted; the resulting rank is then below `h`.
pub fn build_basis(fp: &Fingerprint, origin: VectorMode) -> Result<OrthoBasis, SubspaceError> {
    let w = fp.weights();
    let dim = w.nrows();
    let mut basis = OrthoBasis::empty(dim, origin);
    for j in 0..w.ncols() {
        basis.push_if_independent(w.column(j).as_slice())?;
    }
    if origin == VectorMode::ProbabilityMode {
        basis.push_if_independent(&vec![1.0; dim])?;
    }
    Ok(basis)
}

impl OrthoBasis {
    pub fn empty(dim: usize, origin: VectorMode) -> Self {
        Self {
            dim,
            columns: Vec::new(),
            origin,
        }
    }

    /// Orthonormalizes `cols` in order, skipping numerically dependent ones.
    pub fn from_columns<'a>(
        dim: usize,
        cols: impl IntoIterator<Item = &'a [f64]>,
        origin: VectorMode,
    ) -> Result<Self, SubspaceError> {
        let mut basis = Self::empty(dim, origin);
        for col in cols {
            basis.push_if_independent(col)?;
        }
        Ok(basis)
    }

    /// Wraps columns that are already orthonormal, e.g. the `Q` factor of a QR decomposition.
    pub fn from_orthonormal(q: &DMatrix<f64>, origin: VectorMode) -> Result<Self, SubspaceError> {
        check_finite(q.as_slice())?;
        let basis = Self {
            dim: q.nrows(),
            columns: q.as_slice().to_vec(),
            origin,
        };
        let err = basis.orthonormality_error();
        if err > ORTHONORMALITY_TOLERANCE {
            return Err(SubspaceError::NotOrthonormal(err));
        }
        Ok(basis)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.columns.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn origin(&self) -> VectorMode {
        self.origin
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j * self.dim..(j + 1) * self.dim]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.dim, self.rank(), &self.columns)
    }

    /// `max |QᵀQ - I|` over all entries.
    pub fn orthonormality_error(&self) -> f64 {
        let r = self.rank();
        let mut worst = 0.0f64;
        for i in 0..r {
            for j in i..r {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(self.column(i), self.column(j)) - target).abs());
            }
        }
        worst
    }

    fn orthogonalize(&self, v: &mut [f64]) {
        orthogonalize(&self.columns, self.dim, v);
    }

    fn check_len(&self, v: &[f64]) -> Result<(), SubspaceError> {
        if v.len() != self.dim {
            return Err(SubspaceError::DimensionMismatch {
                expected: self.dim,
                found: v.len(),
            });
        }
        Ok(())
    }

    /// Appends the direction of `col` unless it is numerically in the span already.
    /// Returns whether a column was added.
    pub fn push_if_independent(&mut self, col: &[f64]) -> Result<bool, SubspaceError> {
        self.check_len(col)?;
        check_finite(col)?;
        let original = norm(col);
        if original == 0.0 || self.rank() == self.dim {
            return Ok(false);
        }
        let mut v = col.to_vec();
        self.orthogonalize(&mut v);
        let remaining = norm(&v);
        if remaining <= DEPENDENCE_TOLERANCE * original {
            return Ok(false);
        }
        self.columns.extend(v.iter().map(|x| x / remaining));
        Ok(true)
    }

    /// Orthogonal projection of `s` onto the span.
    pub fn project(&self, s: &[f64]) -> Result<Vec<f64>, SubspaceError> {
        let res = self.residual(s)?;
        Ok(s.iter().zip(&res.component).map(|(a, b)| a - b).collect())
    }

    /// Euclidean distance from `s` to the span.
    pub fn residual(&self, s: &[f64]) -> Result<Residual, SubspaceError> {
        self.check_len(s)?;
        check_finite(s)?;
        let mut component = s.to_vec();
        self.orthogonalize(&mut component);
        let distance = norm(&component);
        let relative_distance = distance / norm(s).max(f64::MIN_POSITIVE);
        Ok(Residual {
            distance,
            relative_distance,
            component,
        })
    }

    /// Residuals of many vectors at once, computed with two blocked projections
    /// `S -= Q (Qᵀ S)`. Agrees with [`OrthoBasis::residual`] to rounding.
    pub fn residuals(&self, samples: &[&[f64]]) -> Result<Vec<Residual>, SubspaceError> {
        for s in samples {
            self.check_len(s)?;
            check_finite(s)?;
        }
        let mut block = DMatrix::from_fn(self.dim, samples.len(), |i, j| samples[j][i]);
        if self.rank() > 0 {
            let q = self.to_matrix();
            let qt = q.transpose();
            for _ in 0..2 {
                let coeffs = &qt * &block;
                block.gemm(-1.0, &q, &coeffs, 1.0);
            }
        }
        Ok(samples
            .iter()
            .zip(block.column_iter())
            .map(|(s, c)| {
                let component = c.as_slice().to_vec();
                let distance = norm(&component);
                Residual {
                    distance,
                    relative_distance: distance / norm(s).max(f64::MIN_POSITIVE),
                    component,
                }
            })
            .collect())
    }

    /// Removes from `res` its components along columns `from..rank`, for a residual
    /// computed before those columns were added. `s` is the original vector.
    pub fn refine(&self, res: Residual, s: &[f64], from: usize) -> Result<Residual, SubspaceError> {
        self.check_len(&res.component)?;
        let mut component = res.component;
        orthogonalize(
            &self.columns[from.min(self.rank()) * self.dim..],
            self.dim,
            &mut component,
        );
        let distance = norm(&component);
        Ok(Residual {
            distance,
            relative_distance: distance / norm(s).max(f64::MIN_POSITIVE),
            component,
        })
    }

    /// Extends the span by the direction of `res.component`.
    ///
    /// The new column is re-orthogonalized against the current basis (two passes)
    /// before normalization, so a residual computed against an older basis is
    /// still usable.
    pub fn augment(&mut self, res: &Residual) -> Result<(), SubspaceError> {
        self.check_len(&res.component)?;
        if res.distance < f64::MIN_POSITIVE || res.relative_distance < f64::EPSILON {
            return Err(SubspaceError::DegenerateResidual {
                distance: res.distance,
                relative: res.relative_distance,
            });
        }
        if self.rank() == self.dim {
            return Err(SubspaceError::Full(self.rank()));
        }
        let mut v: Vec<f64> = res.component.iter().map(|x| x / res.distance).collect();
        self.orthogonalize(&mut v);
        let remaining = norm(&v);
        if remaining <= DEPENDENCE_TOLERANCE {
            return Err(SubspaceError::DegenerateResidual {
                distance: res.distance * remaining,
                relative: res.relative_distance * remaining,
            });
        }
        self.columns.extend(v.iter().map(|x| x / remaining));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(dim: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    fn fp_from_cols(cols: &[Vec<f64>]) -> Fingerprint {
        let dim = cols[0].len();
        let flat: Vec<f64> = cols.iter().flatten().copied().collect();
        Fingerprint::new("t", DMatrix::from_column_slice(dim, cols.len(), &flat)).unwrap()
    }

    #[test]
    fn standard_basis_is_kept() {
        let fp = fp_from_cols(&[unit(4, 0), unit(4, 1)]);
        let basis = build_basis(&fp, VectorMode::LogitsMode).unwrap();
        assert_eq!(basis.rank(), 2);
        assert_eq!(basis.column(0), &unit(4, 0)[..]);
        assert_eq!(basis.column(1), &unit(4, 1)[..]);
        assert!(basis.residual(&unit(4, 2)).unwrap().distance == 1.0);
    }

    #[test]
    fn rank_deficient_columns_are_dropped() {
        let c = vec![1.0, -2.0, 0.5, 3.0];
        let fp = fp_from_cols(&[c.clone(), c.iter().map(|x| 2.0 * x).collect()]);
        assert_eq!(build_basis(&fp, VectorMode::LogitsMode).unwrap().rank(), 1);
    }

    #[test]
    fn dependent_ones_column_is_not_added() {
        let fp = fp_from_cols(&[vec![1.0; 4]]);
        let basis = build_basis(&fp, VectorMode::ProbabilityMode).unwrap();
        assert_eq!(basis.rank(), 1);
        assert_eq!(basis.origin(), VectorMode::ProbabilityMode);
    }

    #[test]
    fn ones_column_extends_generic_w() {
        let fp = fp_from_cols(&[vec![1.0, 2.0, 3.0, 4.0], vec![0.0, 1.0, 0.0, -1.0]]);
        assert_eq!(build_basis(&fp, VectorMode::LogitsMode).unwrap().rank(), 2);
        let basis = build_basis(&fp, VectorMode::ProbabilityMode).unwrap();
        assert_eq!(basis.rank(), 3);
        assert!(basis.residual(&[5.0; 4]).unwrap().distance < 1e-14);
    }

    #[test]
    fn in_space_vector_has_tiny_residual() {
        let fp = fp_from_cols(&[
            vec![1.0, 2.0, 3.0, 4.0, 5.0],
            vec![0.3, -1.0, 0.0, 2.0, 1.0],
        ]);
        let basis = build_basis(&fp, VectorMode::LogitsMode).unwrap();
        let s: Vec<f64> = fp
            .weights()
            .column(0)
            .iter()
            .zip(fp.weights().column(1).iter())
            .map(|(a, b)| 3.0 * a - 7.5 * b)
            .collect();
        let res = basis.residual(&s).unwrap();
        assert!(res.distance <= 1e-10 * norm(&s));
    }

    #[test]
    fn orthogonal_vector_keeps_full_norm() {
        let fp = fp_from_cols(&[unit(5, 0), unit(5, 1)]);
        let basis = build_basis(&fp, VectorMode::LogitsMode).unwrap();
        let s = [0.0, 0.0, 3.0, -4.0, 12.0];
        let res = basis.residual(&s).unwrap();
        assert!((res.distance - 13.0).abs() <= 1e-12 * 13.0);
        assert!((res.relative_distance - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn augment_adds_direction() {
        let mut basis =
            OrthoBasis::from_columns(4, [&unit(4, 0)[..]], VectorMode::LogitsMode).unwrap();
        let res = basis.residual(&unit(4, 1)).unwrap();
        basis.augment(&res).unwrap();
        assert_eq!(basis.rank(), 2);
        assert!(basis.residual(&[2.0, -3.0, 0.0, 0.0]).unwrap().distance < 1e-15);
    }

    #[test]
    fn batched_residuals_match_single() {
        let fp = fp_from_cols(&[vec![1.0, 1.0, 0.0, 0.0], vec![0.0, 1.0, 1.0, 0.0]]);
        let mut basis = build_basis(&fp, VectorMode::LogitsMode).unwrap();
        let samples = [
            vec![1.0, 2.0, 3.0, 4.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![2.0, 3.0, 1.0, 0.0],
        ];
        let refs: Vec<&[f64]> = samples.iter().map(Vec::as_slice).collect();
        let batch = basis.residuals(&refs).unwrap();
        for (s, b) in samples.iter().zip(&batch) {
            let single = basis.residual(s).unwrap();
            assert!((single.distance - b.distance).abs() < 1e-14);
        }
        basis.augment(&batch[1]).unwrap();
        let refined = basis.refine(batch[0].clone(), &samples[0], 2).unwrap();
        let direct = basis.residual(&samples[0]).unwrap();
        assert!((refined.distance - direct.distance).abs() < 1e-14);
        assert!((refined.relative_distance - direct.relative_distance).abs() < 1e-14);
    }

    #[test]
    fn augment_then_residual_is_zero() {
        let fp = fp_from_cols(&[vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]]);
        let mut basis = build_basis(&fp, VectorMode::LogitsMode).unwrap();
        let s = [0.3, -1.0, 2.0, 0.0, 4.0, 1.0];
        let res = basis.residual(&s).unwrap();
        basis.augment(&res).unwrap();
        assert!(basis.residual(&s).unwrap().distance <= 1e-10 * norm(&s));
    }

    #[test]
    fn augment_rejects_zero_residual() {
        let mut basis =
            OrthoBasis::from_columns(3, [&unit(3, 0)[..]], VectorMode::LogitsMode).unwrap();
        let res = basis.residual(&[2.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            basis.augment(&res),
            Err(SubspaceError::DegenerateResidual { .. })
        ));
        assert_eq!(basis.rank(), 1);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let basis = OrthoBasis::from_columns(3, [&unit(3, 0)[..]], VectorMode::LogitsMode).unwrap();
        assert_eq!(
            basis.residual(&[1.0, 2.0]).unwrap_err(),
            SubspaceError::DimensionMismatch {
                expected: 3,
                found: 2
            }
        );
    }

    #[test]
    fn non_finite_input_rejected() {
        let basis = OrthoBasis::from_columns(3, [&unit(3, 0)[..]], VectorMode::LogitsMode).unwrap();
        assert!(matches!(
            basis.residual(&[1.0, f64::INFINITY, 0.0]),
            Err(SubspaceError::NonFinite { index: 1, .. })
        ));
        assert!(
            OrthoBasis::from_columns(3, [&[f64::NAN, 0.0, 0.0][..]], VectorMode::LogitsMode)
                .is_err()
        );
    }

    #[test]
    fn from_orthonormal_checks_columns() {
        let q = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(
            OrthoBasis::from_orthonormal(&q, VectorMode::LogitsMode),
            Err(SubspaceError::NotOrthonormal(_))
        ));
    }
}
