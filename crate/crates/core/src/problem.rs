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

use nalgebra::{DMatrix, DVector};

use crate::consensus::WeightVector;
use crate::error::{Error, Result};
use crate::losses::{ProxSolverSpec, UserLoss};

/// Solution of the envelope-regularized problem `min_w Σ_i λ_i env^η_{f_i}(w)`
/// for one constant step size.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedReference {
    pub eta: f64,
    pub solution: DVector<f64>,
    pub optimum: f64,
}

/// `m` user losses sharing a dimension, with weights `λ` and optional
/// reference solutions.
#[derive(Debug, Clone)]
pub struct FederatedProblem {
    users: Vec<UserLoss>,
    weights: WeightVector,
    dim: usize,
    /// `Σ_i λ_i A_iᵀA_i` when every user is quadratic.
    aggregate_gram: Option<DMatrix<f64>>,
    pub true_solution: Option<DVector<f64>>,
    pub true_optimum: Option<f64>,
    pub regularized: Option<RegularizedReference>,
}

impl FederatedProblem {
    pub fn new(users: Vec<UserLoss>, weights: WeightVector) -> Result<Self> {
        let first = users.first().ok_or(Error::InvalidParameter {
            name: "users",
            reason: "at least one user is required".into(),
        })?;
        let dim = first.dim();
        if let Some(u) = users.iter().find(|u| u.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: u.dim(),
            });
        }
        if weights.len() != users.len() {
            return Err(Error::InvalidParameter {
                name: "weights",
                reason: format!("{} weights for {} users", weights.len(), users.len()),
            });
        }
        let aggregate_gram = if users.iter().all(|u| matches!(u, UserLoss::Quadratic(_))) {
            let mut g = DMatrix::zeros(dim, dim);
            for (i, u) in users.iter().enumerate() {
                if let UserLoss::Quadratic(q) = u {
                    g += q.gram() * weights.get(i);
                }
            }
            Some(g)
        } else {
            None
        };
        Ok(Self {
            users,
            weights,
            dim,
            aggregate_gram,
            true_solution: None,
            true_optimum: None,
            regularized: None,
        })
    }

    /// Equal weights `λ_i = 1/m`.
    pub fn uniform(users: Vec<UserLoss>) -> Result<Self> {
        let m = users.len().max(1);
        Self::new(users, WeightVector::uniform(m))
    }

    pub fn users(&self) -> &[UserLoss] {
        &self.users
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn all_quadratic(&self) -> bool {
        self.aggregate_gram.is_some()
    }

    pub fn all_logistic(&self) -> bool {
        self.users
            .iter()
            .all(|u| matches!(u, UserLoss::Logistic(_)))
    }

    pub fn aggregate_gram(&self) -> Option<&DMatrix<f64>> {
        self.aggregate_gram.as_ref()
    }

    /// Proximal solver to use when the caller asks for "exact" proximal maps.
    pub fn default_prox_spec(&self) -> ProxSolverSpec {
        if self.users.iter().all(UserLoss::has_closed_form_prox) {
            ProxSolverSpec::ClosedForm
        } else {
            ProxSolverSpec::gradient_descent_default()
        }
    }

    /// `f(w) = Σ_i λ_i f_i(w)`.
    pub fn objective(&self, w: &DVector<f64>) -> Result<f64> {
        let mut acc = 0.0;
        for (i, u) in self.users.iter().enumerate() {
            acc += self.weights.get(i) * u.value(w)?;
        }
        Ok(acc)
    }

    pub fn gradient(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        let mut acc = DVector::zeros(self.dim);
        for (i, u) in self.users.iter().enumerate() {
            acc.axpy(self.weights.get(i), &u.gradient(w)?, 1.0);
        }
        Ok(acc)
    }

    /// `f̃(w) = Σ_i λ_i env^η_{f_i}(w)`.
    pub fn regularized_objective(
        &self,
        w: &DVector<f64>,
        eta: f64,
        spec: ProxSolverSpec,
    ) -> Result<f64> {
        let mut acc = 0.0;
        for (i, u) in self.users.iter().enumerate() {
            acc += self.weights.get(i) * u.envelope_value(w, eta, spec)?;
        }
        Ok(acc)
    }

    pub fn regularized_gradient(
        &self,
        w: &DVector<f64>,
        eta: f64,
        spec: ProxSolverSpec,
    ) -> Result<DVector<f64>> {
        let mut acc = DVector::zeros(self.dim);
        for (i, u) in self.users.iter().enumerate() {
            acc.axpy(
                self.weights.get(i),
                &u.envelope_gradient(w, eta, spec)?,
                1.0,
            );
        }
        Ok(acc)
    }

    /// `f(w) − f(w*)`. For all-quadratic problems with a known minimizer this
    /// is evaluated as `½ δᵀ(Σλ_i A_iᵀA_i)δ`, which avoids cancellation.
    pub fn optimality_gap(&self, w: &DVector<f64>) -> Result<f64> {
        if let (Some(g), Some(ws)) = (&self.aggregate_gram, &self.true_solution) {
            let delta = w - ws;
            return Ok(0.5 * delta.dot(&(g * &delta)));
        }
        let opt = self.true_optimum.ok_or(Error::Missing("true optimum"))?;
        Ok(self.objective(w)? - opt)
    }
}
