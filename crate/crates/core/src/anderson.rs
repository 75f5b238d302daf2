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

//! Anderson type-II acceleration of a fixed-point map `u ↦ T(u)`.
//!
//! Given the last `τ + 1` inputs `U` and images `T`, the affine weights
//! `π* = argmin_{1ᵀπ = 1} ‖(U − T)π‖²` are `G†1 / (1ᵀG†1)` with
//! `G = (U − T)ᵀ(U − T)`, and the next iterate is `Tπ*`. Weights are not
//! constrained to be nonnegative.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative ridge used when no explicit ridge is configured:
/// `ridge = DEFAULT_RELATIVE_RIDGE · trace(G)/cols`.
pub const DEFAULT_RELATIVE_RIDGE: f64 = 1e-10;

/// `|1ᵀG†1|` below this (on the max-normalized Gram) counts as degenerate.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AndersonMode {
    /// Accelerate the `u`-sequence of the grand scheme.
    #[serde(rename = "u")]
    OnU,
    /// Accelerate the sequence of consensus averages `P_H(z)`.
    #[serde(rename = "proj")]
    OnProjected,
}

impl std::str::FromStr for AndersonMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "u" => Ok(AndersonMode::OnU),
            "proj" | "projected" => Ok(AndersonMode::OnProjected),
            other => Err(Error::InvalidParameter {
                name: "anderson_mode",
                reason: format!("expected `u` or `proj`, got `{other}`"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AndersonConfig {
    /// Memory size; `τ + 1` columns are kept.
    pub tau: usize,
    /// Absolute ridge added to `G`; `None` selects the trace-relative default.
    pub ridge: Option<f64>,
    pub mode: AndersonMode,
    /// Singular values below `svd_tol · σ_max` are dropped from `G†`.
    pub svd_tol: f64,
}

impl AndersonConfig {
    pub fn new(tau: usize) -> Self {
        Self {
            tau,
            ridge: None,
            mode: AndersonMode::OnU,
            svd_tol: 1e-12,
        }
    }

    pub fn with_mode(mut self, mode: AndersonMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.svd_tol > 0.0) {
            return Err(Error::InvalidParameter {
                name: "svd_tol",
                reason: format!("must be positive, got {}", self.svd_tol),
            });
        }
        if let Some(r) = self.ridge {
            if !(r >= 0.0) || !r.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "ridge",
                    reason: format!("must be finite and nonnegative, got {r}"),
                });
            }
        }
        Ok(())
    }
}

/// Sliding window of inputs and their images, oldest first.
#[derive(Debug, Clone)]
pub struct AndersonMemory {
    capacity: usize,
    inputs: VecDeque<DVector<f64>>,
    images: VecDeque<DVector<f64>>,
}

impl AndersonMemory {
    pub fn new(tau: usize) -> Self {
        Self {
            capacity: tau + 1,
            inputs: VecDeque::with_capacity(tau + 1),
            images: VecDeque::with_capacity(tau + 1),
        }
    }

    /// Appends `(u, T(u))`, dropping the oldest pair beyond `τ + 1` columns.
    pub fn push(&mut self, input: DVector<f64>, image: DVector<f64>) {
        assert_eq!(input.len(), image.len(), "input and image lengths differ");
        if let Some(first) = self.inputs.front() {
            assert_eq!(first.len(), input.len(), "column length changed");
        }
        self.inputs.push_back(input);
        self.images.push_back(image);
        while self.inputs.len() > self.capacity {
            self.inputs.pop_front();
            self.images.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn clear(&mut self) {
        self.inputs.clear();
        self.images.clear();
    }

    pub fn newest_image(&self) -> Option<&DVector<f64>> {
        self.images.back()
    }

    pub fn images(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.images.iter()
    }

    /// Columns of `U − T`.
    pub fn residuals(&self) -> Vec<DVector<f64>> {
        self.inputs
            .iter()
            .zip(self.images.iter())
            .map(|(u, t)| u - t)
            .collect()
    }

    /// `Σ_j π_j T_j`.
    pub fn combine_images(&self, weights: &[f64]) -> DVector<f64> {
        combine(self.images.iter(), weights)
    }
}

/// `Σ_j π_j x_j` in column order.
pub fn combine<'a>(
    columns: impl IntoIterator<Item = &'a DVector<f64>>,
    weights: &[f64],
) -> DVector<f64> {
    let mut iter = columns.into_iter().zip(weights.iter());
    let (first, w0) = iter.next().expect("at least one column");
    let mut acc = first * *w0;
    for (col, w) in iter {
        acc.axpy(*w, col, 1.0);
    }
    acc
}

/// Why the least-squares weights could not be formed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegenerateWeights {
    pub denominator: f64,
}

/// Affine weights `π* = G†1/(1ᵀG†1)` for the memory's residual columns.
pub fn anderson_weights(
    memory: &AndersonMemory,
    ridge: Option<f64>,
    svd_tol: f64,
) -> std::result::Result<Vec<f64>, DegenerateWeights> {
    assert!(
        !memory.is_empty(),
        "anderson_weights needs at least one column"
    );
    let residuals = memory.residuals();
    let cols = residuals.len();
    let mut gram = DMatrix::zeros(cols, cols);
    for a in 0..cols {
        for b in a..cols {
            let v = residuals[a].dot(&residuals[b]);
            gram[(a, b)] = v;
            gram[(b, a)] = v;
        }
    }
    let ridge = ridge.unwrap_or_else(|| DEFAULT_RELATIVE_RIDGE * gram.trace() / cols as f64);
    for j in 0..cols {
        gram[(j, j)] += ridge;
    }
    // π is invariant to scaling G; normalize so the thresholds are relative
    let scale = gram.amax();
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(DegenerateWeights { denominator: 0.0 });
    }
    gram /= scale;
    let svd = gram.svd(true, true);
    let sigma_max = svd.singular_values.max();
    let cutoff = svd_tol * sigma_max;
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested Vᵀ");
    // G†1 = V Σ† Uᵀ 1
    let ones = DVector::from_element(cols, 1.0);
    let mut coeff = u.tr_mul(&ones);
    for (c, s) in coeff.iter_mut().zip(svd.singular_values.iter()) {
        *c = if *s > cutoff { *c / s } else { 0.0 };
    }
    let x = vt.tr_mul(&coeff);
    let denom: f64 = x.iter().sum();
    if !(denom.abs() >= DEGENERATE_DENOMINATOR) || !denom.is_finite() {
        return Err(DegenerateWeights { denominator: denom });
    }
    Ok(x.iter().map(|xi| xi / denom).collect())
}

/// Result of one accelerated update.
#[derive(Debug, Clone)]
pub struct AndersonStep {
    pub next: DVector<f64>,
    /// Weights applied to the image columns; `None` when the plain
    /// fixed-point step was taken.
    pub weights: Option<Vec<f64>>,
}

impl AndersonStep {
    pub fn accelerated(&self) -> bool {
        self.weights.as_ref().is_some_and(|w| w.len() > 1)
    }
}

/// `Tπ*`, or the newest image when the weights are degenerate.
pub fn accelerated_step(memory: &AndersonMemory, config: &AndersonConfig) -> AndersonStep {
    let newest = memory
        .newest_image()
        .expect("accelerated_step needs at least one mapped column");
    match anderson_weights(memory, config.ridge, config.svd_tol) {
        Ok(weights) => {
            let next = memory.combine_images(&weights);
            if next.iter().all(|x| x.is_finite()) {
                AndersonStep {
                    next,
                    weights: Some(weights),
                }
            } else {
                log::debug!("non-finite Anderson extrapolation, taking the plain step");
                AndersonStep {
                    next: newest.clone(),
                    weights: None,
                }
            }
        }
        Err(d) => {
            log::debug!(
                "degenerate Anderson weights (1ᵀG†1 = {}), taking the plain step",
                d.denominator
            );
            AndersonStep {
                next: newest.clone(),
                weights: None,
            }
        }
    }
}
