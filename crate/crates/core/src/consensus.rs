/*
Copyright 2026 The opfl Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

//! Geometry of the consensus subspace `H = {(w_1, ..., w_m) : w_1 = ... = w_m}`
//! under the weighted inner product `<x, z>_λ = Σ_i λ_i x_iᵀ z_i`.
//!
//! Stacked states are stored block-major: a `d × m` column-major matrix whose
//! column `i` is user `i`'s block. All reductions over users run in ascending
//! user index on the calling thread, so results do not depend on how the
//! blocks were produced.

use nalgebra::{DMatrix, DVector, DVectorView, DVectorViewMut};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `Σ λ_i = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// A point `(w_1, ..., w_m)` of the product space `R^{dm}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedState {
    blocks: DMatrix<f64>,
}

impl StackedState {
    pub fn zeros(users: usize, dim: usize) -> Self {
        assert!(users >= 1, "a stacked state needs at least one block");
        Self {
            blocks: DMatrix::zeros(dim, users),
        }
    }

    /// Builds a state from per-user blocks; all blocks must share one dimension.
    pub fn from_blocks(blocks: &[DVector<f64>]) -> Result<Self> {
        let first = blocks.first().ok_or(Error::InvalidParameter {
            name: "blocks",
            reason: "at least one block is required".into(),
        })?;
        let dim = first.len();
        for b in blocks {
            if b.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: b.len(),
                });
            }
        }
        Ok(Self {
            blocks: DMatrix::from_columns(blocks),
        })
    }

    /// Replicates `v` into every block, producing a point of `H`.
    pub fn from_consensus(v: &DVector<f64>, users: usize) -> Self {
        assert!(users >= 1, "a stacked state needs at least one block");
        Self {
            blocks: DMatrix::from_fn(v.len(), users, |r, _| v[r]),
        }
    }

    pub fn from_matrix(blocks: DMatrix<f64>) -> Self {
        assert!(
            blocks.ncols() >= 1,
            "a stacked state needs at least one block"
        );
        Self { blocks }
    }

    pub fn num_users(&self) -> usize {
        self.blocks.ncols()
    }

    pub fn dim(&self) -> usize {
        self.blocks.nrows()
    }

    pub fn block(&self, i: usize) -> DVectorView<'_, f64> {
        self.blocks.column(i)
    }

    pub fn block_mut(&mut self, i: usize) -> DVectorViewMut<'_, f64> {
        self.blocks.column_mut(i)
    }

    pub fn set_block(&mut self, i: usize, v: &DVector<f64>) {
        self.blocks.set_column(i, v);
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.blocks
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.blocks
    }

    /// Flattened block-major view (`w_1` first).
    pub fn as_slice(&self) -> &[f64] {
        self.blocks.as_slice()
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        self.blocks.as_mut_slice()
    }

    pub fn from_flat(users: usize, dim: usize, data: &[f64]) -> Result<Self> {
        if data.len() != users * dim {
            return Err(Error::DimensionMismatch {
                expected: users * dim,
                actual: data.len(),
            });
        }
        Ok(Self {
            blocks: DMatrix::from_column_slice(dim, users, data),
        })
    }

    /// `a·self + b·other`, elementwise.
    pub fn lincomb(&self, a: f64, other: &StackedState, b: f64) -> StackedState {
        debug_assert_eq!(self.blocks.shape(), other.blocks.shape());
        let mut out = self.blocks.clone();
        out.zip_apply(&other.blocks, |x, y| *x = a * *x + b * y);
        StackedState { blocks: out }
    }

    pub fn scaled(&self, a: f64) -> StackedState {
        StackedState {
            blocks: &self.blocks * a,
        }
    }

    /// Plain (unweighted) Euclidean distance in `R^{dm}`.
    pub fn euclidean_distance(&self, other: &StackedState) -> f64 {
        (&self.blocks - &other.blocks).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|x| x.is_finite())
    }

    pub fn check_shape(&self, users: usize, dim: usize) -> Result<()> {
        if self.num_users() != users || self.dim() != dim {
            return Err(Error::ShapeMismatch {
                expected_users: users,
                expected_dim: dim,
                actual_users: self.num_users(),
                actual_dim: self.dim(),
            });
        }
        Ok(())
    }

    fn check_same_shape(&self, other: &StackedState) -> Result<()> {
        other.check_shape(self.num_users(), self.dim())
    }
}

/// User weights `λ`: nonnegative and summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParameter {
                name: "weights",
                reason: "at least one user weight is required".into(),
            });
        }
        if let Some(bad) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "weights",
                reason: format!("weights must be finite and nonnegative, found {bad}"),
            });
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidParameter {
                name: "weights",
                reason: format!("weights must sum to 1, sum is {total}"),
            });
        }
        Ok(Self(weights))
    }

    /// Normalizes arbitrary nonnegative weights to sum to one.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter {
                name: "weights",
                reason: "weights must have positive total mass".into(),
            });
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(users: usize) -> Self {
        assert!(users >= 1);
        Self(vec![1.0 / users as f64; users])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        WeightVector::new(v)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

fn check_weights(x: &StackedState, lambda: &WeightVector) -> Result<()> {
    if lambda.len() != x.num_users() {
        return Err(Error::ShapeMismatch {
            expected_users: lambda.len(),
            expected_dim: x.dim(),
            actual_users: x.num_users(),
            actual_dim: x.dim(),
        });
    }
    Ok(())
}

/// `Σ_i λ_i x_iᵀ z_i`.
pub fn weighted_inner(x: &StackedState, z: &StackedState, lambda: &WeightVector) -> Result<f64> {
    x.check_same_shape(z)?;
    check_weights(x, lambda)?;
    let mut acc = 0.0;
    for i in 0..x.num_users() {
        acc += lambda.get(i) * x.block(i).dot(&z.block(i));
    }
    Ok(acc)
}

pub fn weighted_norm(x: &StackedState, lambda: &WeightVector) -> Result<f64> {
    Ok(weighted_inner(x, x, lambda)?.max(0.0).sqrt())
}

/// The weighted average `w̄ = Σ_i λ_i x_i`.
pub fn weighted_mean(x: &StackedState, lambda: &WeightVector) -> Result<DVector<f64>> {
    check_weights(x, lambda)?;
    let mut acc = DVector::zeros(x.dim());
    for i in 0..x.num_users() {
        acc.axpy(lambda.get(i), &x.block(i), 1.0);
    }
    Ok(acc)
}

/// Weighted average over a subset of users, with weights renormalized over
/// that subset. `present` must be nonempty with positive total weight.
pub fn weighted_mean_over(
    x: &StackedState,
    lambda: &WeightVector,
    present: &[usize],
) -> Result<DVector<f64>> {
    check_weights(x, lambda)?;
    let mass: f64 = present.iter().map(|&i| lambda.get(i)).sum();
    if !(mass > 0.0) {
        return Err(Error::InvalidParameter {
            name: "present",
            reason: "present users carry no weight".into(),
        });
    }
    let mut acc = DVector::zeros(x.dim());
    for &i in present {
        acc.axpy(lambda.get(i) / mass, &x.block(i), 1.0);
    }
    Ok(acc)
}

/// Projection onto `H`: every block becomes `w̄`.
pub fn project_consensus(x: &StackedState, lambda: &WeightVector) -> Result<StackedState> {
    let mean = weighted_mean(x, lambda)?;
    Ok(StackedState::from_consensus(&mean, x.num_users()))
}

/// Reflection through `H`: block `i` becomes `2w̄ − x_i`.
pub fn reflect_consensus(x: &StackedState, lambda: &WeightVector) -> Result<StackedState> {
    let mean = weighted_mean(x, lambda)?;
    let mut out = x.clone();
    for i in 0..x.num_users() {
        let mut b = out.block_mut(i);
        b.zip_apply(&mean, |xi, mi| *xi = 2.0 * mi - *xi);
    }
    Ok(out)
}

/// `‖Σ_i λ_i x_i‖₂`, which vanishes exactly on `H^⊥`.
pub fn complement_residual(x: &StackedState, lambda: &WeightVector) -> Result<f64> {
    Ok(weighted_mean(x, lambda)?.norm())
}

/// Weighted distance from `x` to `H`, i.e. `‖x − P_H x‖_λ`.
pub fn consensus_distance(x: &StackedState, lambda: &WeightVector) -> Result<f64> {
    let mean = weighted_mean(x, lambda)?;
    let mut acc = 0.0;
    for i in 0..x.num_users() {
        acc += lambda.get(i) * (x.block(i) - &mean).norm_squared();
    }
    Ok(acc.sqrt())
}
