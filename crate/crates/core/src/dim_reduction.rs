//! Self-supervised low-rank embeddings.
//!
//! A [`ReductionMap`] holds an `n × k` matrix `L` whose columns are the
//! leading right singular vectors of the training feature matrix. Projecting
//! through `L·Lᵀ` gives the best rank-`k` approximation of the training rows
//! in Frobenius norm, and the reduced features `X·L` feed the higher-order
//! terms of the polynomial model.
//!
//! No centering is applied: the map is fitted on the Min-Max normalized
//! matrix as-is.

use log::warn;
use sha2::{Digest, Sha256};

use crate::error::{check_dims, HopsError, Result};
use crate::numerics::{right_singular, Matrix};

/// Identifies the matrix a map was fitted on.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    pub sha256: [u8; 32],
    pub rows: u64,
}

impl Fingerprint {
    pub fn of(x: &Matrix) -> Self {
        let mut hasher = Sha256::new();
        hasher.update((x.rows() as u64).to_le_bytes());
        hasher.update((x.cols() as u64).to_le_bytes());
        for v in x.data() {
            hasher.update(v.to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut sha256 = [0u8; 32];
        sha256.copy_from_slice(&digest);
        Self {
            sha256,
            rows: x.rows() as u64,
        }
    }

    pub fn hex(&self) -> String {
        self.sha256.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionMap {
    embed: Matrix,
    fitted_on: Fingerprint,
}

/// What to do when a map is applied to the very rows it was fitted on while
/// those rows are declared held-out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LeakagePolicy {
    Off,
    #[default]
    Warn,
    Strict,
}

impl ReductionMap {
    /// Wraps an arbitrary embedding (e.g. `L·Q` for an invertible `Q`).
    pub fn from_embedding(embed: Matrix, fitted_on: Fingerprint) -> Result<Self> {
        if embed.cols() > embed.rows() {
            return Err(HopsError::InvalidParameter(format!(
                "embedding target dim {} exceeds source dim {}",
                embed.cols(),
                embed.rows()
            )));
        }
        Ok(Self { embed, fitted_on })
    }

    pub fn embed(&self) -> &Matrix {
        &self.embed
    }

    pub fn source_dims(&self) -> usize {
        self.embed.rows()
    }

    pub fn target_dim(&self) -> usize {
        self.embed.cols()
    }

    pub fn fitted_on(&self) -> &Fingerprint {
        &self.fitted_on
    }

    /// Same fingerprint, embedding replaced by `L·Q`.
    pub fn transformed(&self, q: &Matrix) -> Result<Self> {
        check_dims("ReductionMap::transformed Q rows", self.target_dim(), q.rows())?;
        Self::from_embedding(self.embed.matmul(q)?, self.fitted_on.clone())
    }
}

/// Fits `L` as the first `k` right singular vectors of `x_train`.
pub fn fit_reduction(x_train: &Matrix, k: usize) -> Result<ReductionMap> {
    let limit = x_train.rows().min(x_train.cols());
    if k == 0 || k > limit {
        return Err(HopsError::InvalidParameter(format!(
            "embedding dimension k={k} outside [1, {limit}]"
        )));
    }
    let svd = right_singular(x_train)?;
    let cols: Vec<usize> = (0..k).collect();
    Ok(ReductionMap {
        embed: svd.right_vectors.select_columns(&cols),
        fitted_on: Fingerprint::of(x_train),
    })
}

/// `X · L`.
pub fn apply_reduction(x: &Matrix, map: &ReductionMap) -> Result<Matrix> {
    check_dims("apply_reduction input columns", map.source_dims(), x.cols())?;
    x.matmul(&map.embed)
}

/// [`apply_reduction`] for rows that must not have contributed to the fit.
pub fn apply_reduction_holdout(
    x: &Matrix,
    map: &ReductionMap,
    policy: LeakagePolicy,
) -> Result<Matrix> {
    if policy != LeakagePolicy::Off && Fingerprint::of(x) == map.fitted_on {
        let msg = format!(
            "reduction map was fitted on the held-out rows themselves ({} rows, sha256 {})",
            map.fitted_on.rows,
            &map.fitted_on.hex()[..12]
        );
        match policy {
            LeakagePolicy::Strict => return Err(HopsError::Leakage(msg)),
            _ => warn!("{msg}"),
        }
    }
    apply_reduction(x, map)
}

/// `‖X·L·Lᵀ − X‖_F²`.
pub fn reconstruction_loss(x: &Matrix, map: &ReductionMap) -> Result<f64> {
    let reduced = apply_reduction(x, map)?;
    let back = reduced.matmul_t(&map.embed)?;
    Ok(back
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rank_two() -> Matrix {
        let a = [1.0, 2.0, -1.0, 0.5, 3.0];
        let b = [0.5, -1.0, 2.0, 1.0];
        let c = [2.0, 0.0, 1.0, -1.0, 1.0];
        let d = [1.0, 1.0, 0.0, 3.0];
        Matrix::from_fn(5, 4, |i, j| a[i] * b[j] + c[i] * d[j])
    }

    #[test]
    fn identity_full_rank_reconstructs() {
        let x = Matrix::identity(4);
        let map = fit_reduction(&x, 4).unwrap();
        assert!(reconstruction_loss(&x, &map).unwrap() < 1e-24);
    }

    #[test]
    fn exact_rank_two() {
        let x = rank_two();
        let map = fit_reduction(&x, 2).unwrap();
        assert!(reconstruction_loss(&x, &map).unwrap() < 1e-10);
    }

    #[test]
    fn rank_one_k_one() {
        let x = Matrix::from_fn(6, 3, |i, j| (i as f64 + 1.0) * [1.0, -2.0, 0.5][j]);
        let map = fit_reduction(&x, 1).unwrap();
        assert!(reconstruction_loss(&x, &map).unwrap() < 1e-9 * x.frobenius_norm_sq());
    }

    #[test]
    fn k_out_of_range() {
        let x = rank_two();
        assert!(fit_reduction(&x, 0).is_err());
        assert!(fit_reduction(&x, 5).is_err());
    }

    #[test]
    fn identity_embedding_is_noop() {
        let x = rank_two();
        let map = ReductionMap::from_embedding(Matrix::identity(4), Fingerprint::of(&x)).unwrap();
        assert_eq!(apply_reduction(&x, &map).unwrap(), x);
    }

    #[test]
    fn single_row_picks_first_coordinate() {
        let x = Matrix::from_rows(&[[1.0, 0.0, 0.0]]).unwrap();
        let embed = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.6], [0.0, 0.8]]).unwrap();
        let map = ReductionMap::from_embedding(embed, Fingerprint::of(&x)).unwrap();
        let out = apply_reduction(&x, &map).unwrap();
        assert_eq!(out.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let map = fit_reduction(&rank_two(), 2).unwrap();
        assert!(matches!(
            apply_reduction(&Matrix::identity(3), &map),
            Err(HopsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn holdout_guard() {
        let x = rank_two();
        let map = fit_reduction(&x, 2).unwrap();
        assert!(matches!(
            apply_reduction_holdout(&x, &map, LeakagePolicy::Strict),
            Err(HopsError::Leakage(_))
        ));
        assert!(apply_reduction_holdout(&x, &map, LeakagePolicy::Warn).is_ok());
        let other = Matrix::from_fn(3, 4, |i, j| (i + j) as f64);
        assert!(apply_reduction_holdout(&other, &map, LeakagePolicy::Strict).is_ok());
    }

    #[test]
    fn fitted_columns_orthonormal() {
        let map = fit_reduction(&rank_two(), 3).unwrap();
        let g = map.embed().gram();
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((g.get(i, j) - target).abs() < 1e-10);
            }
        }
    }
}
