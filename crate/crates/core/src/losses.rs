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

//! Per-user objectives and their proximal machinery.
//!
//! Every loss exposes its value, a (sub)gradient, the proximal map
//! `P^η_f(w) = argmin_x ‖x − w‖²/(2η) + f(x)`, the reflector `2P^η_f − id`,
//! the Moreau envelope and the k-step explicit gradient map.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inner solver for proximal points; applies to a whole run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ProxSolverSpec {
    ClosedForm,
    /// Gradient descent on `g(x) = f(x) + ‖x − w‖²/(2η)` started at `w`.
    /// `inner_step_size = None` uses `1/(L + 1/η)` with `L` the loss's
    /// smoothness bound.
    GradientDescent {
        inner_steps: usize,
        inner_step_size: Option<f64>,
    },
}

impl ProxSolverSpec {
    pub const DEFAULT_INNER_STEPS: usize = 100;

    pub fn gradient_descent_default() -> Self {
        ProxSolverSpec::GradientDescent {
            inner_steps: Self::DEFAULT_INNER_STEPS,
            inner_step_size: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ProxSolverSpec::GradientDescent {
            inner_steps,
            inner_step_size,
        } = *self
        {
            if inner_steps < 1 {
                return Err(Error::InvalidParameter {
                    name: "inner_steps",
                    reason: "must be at least 1".into(),
                });
            }
            if let Some(s) = inner_step_size {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::InvalidParameter {
                        name: "inner_step_size",
                        reason: format!("must be positive, got {s}"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// `f(w) = ½‖Aw − b‖²`, with the Gram matrix and its spectrum cached.
#[derive(Debug, Clone)]
pub struct QuadraticLoss {
    a: DMatrix<f64>,
    b: DVector<f64>,
    gram: DMatrix<f64>,
    cross: DVector<f64>,
    eigvecs: DMatrix<f64>,
    eigvals: DVector<f64>,
}

impl QuadraticLoss {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                actual: b.len(),
            });
        }
        if a.ncols() == 0 {
            return Err(Error::InvalidParameter {
                name: "A",
                reason: "design matrix needs at least one column".into(),
            });
        }
        let gram = a.tr_mul(&a);
        let cross = a.tr_mul(&b);
        let eigen = SymmetricEigen::new(gram.clone());
        Ok(Self {
            a,
            b,
            gram,
            cross,
            eigvecs: eigen.eigenvectors,
            // AᵀA is PSD; clamp rounding noise below zero
            eigvals: eigen.eigenvalues.map(|q| q.max(0.0)),
        })
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.b
    }

    /// `AᵀA`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `Aᵀb`.
    pub fn cross(&self) -> &DVector<f64> {
        &self.cross
    }

    /// Eigenvalues of `AᵀA` (unordered).
    pub fn spectrum(&self) -> &DVector<f64> {
        &self.eigvals
    }

    /// Orthonormal eigenvectors of `AᵀA`, columns aligned with `spectrum`.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigvecs
    }

    /// `V diag(φ(q)) Vᵀ` for a scalar function of the Gram spectrum.
    pub fn spectral_matrix(&self, phi: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.eigvecs.nrows(), self.eigvecs.ncols(), |r, c| {
            self.eigvecs[(r, c)] * phi(self.eigvals[c])
        });
        scaled * self.eigvecs.transpose()
    }

    fn prox(&self, w: &DVector<f64>, eta: f64) -> DVector<f64> {
        // (I + ηAᵀA)x = w + ηAᵀb through the cached spectral factorization
        let rhs = w + &self.cross * eta;
        let mut coeff = self.eigvecs.tr_mul(&rhs);
        for (c, q) in coeff.iter_mut().zip(self.eigvals.iter()) {
            *c /= 1.0 + eta * q;
        }
        &self.eigvecs * coeff
    }
}

/// `f(w) = Σ_j log(1 + exp(−y_j a_jᵀw)) + reg·‖w‖²/2`.
#[derive(Debug, Clone)]
pub struct LogisticLoss {
    a: DMatrix<f64>,
    y: DVector<f64>,
    reg_weight: f64,
    smoothness: f64,
}

impl LogisticLoss {
    pub fn new(a: DMatrix<f64>, y: DVector<f64>, reg_weight: f64) -> Result<Self> {
        if a.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                actual: y.len(),
            });
        }
        if !(reg_weight >= 0.0) || !reg_weight.is_finite() {
            return Err(Error::InvalidParameter {
                name: "reg_weight",
                reason: format!("must be finite and nonnegative, got {reg_weight}"),
            });
        }
        if let Some(bad) = y.iter().find(|l| **l != 1.0 && **l != -1.0) {
            return Err(Error::InvalidParameter {
                name: "labels",
                reason: format!("labels must be ±1, found {bad}"),
            });
        }
        let smoothness = 0.25 * a.norm_squared() + reg_weight;
        Ok(Self {
            a,
            y,
            reg_weight,
            smoothness,
        })
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn reg_weight(&self) -> f64 {
        self.reg_weight
    }

    fn value(&self, w: &DVector<f64>) -> f64 {
        let margins = &self.a * w;
        let mut acc = 0.0;
        for (m, y) in margins.iter().zip(self.y.iter()) {
            acc += softplus(-y * m);
        }
        acc + 0.5 * self.reg_weight * w.norm_squared()
    }

    fn gradient_rows(&self, w: &DVector<f64>, rows: std::ops::Range<usize>) -> DVector<f64> {
        let n = self.a.nrows() as f64;
        let len = rows.len();
        let block = self.a.rows(rows.start, len);
        let margins = block * w;
        let mut coeff = DVector::zeros(len);
        for j in 0..len {
            let y = self.y[rows.start + j];
            // d/dm log(1 + e^{−ym}) = −y·σ(−ym)
            coeff[j] = -y * sigmoid(-y * margins[j]);
        }
        let mut g = block.tr_mul(&coeff);
        if len != self.a.nrows() {
            g *= n / len as f64;
        }
        g.axpy(self.reg_weight, w, 1.0);
        g
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One user's objective.
#[derive(Debug, Clone)]
pub enum UserLoss {
    Quadratic(QuadraticLoss),
    Logistic(LogisticLoss),
    /// `(a/2)(w − c)²` on `R`.
    ScalarShiftedQuadratic {
        curvature: f64,
        center: f64,
    },
    /// `‖w − c‖₂`, 1-Lipschitz and nonsmooth at `c`.
    AbsoluteDeviation {
        anchor: DVector<f64>,
    },
    /// `½((−w)₊)²` on `R`; its reflector at `η = 1` is `(w)₊`.
    NegPartQuadratic,
}

impl UserLoss {
    pub fn quadratic(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        Ok(UserLoss::Quadratic(QuadraticLoss::new(a, b)?))
    }

    pub fn logistic(a: DMatrix<f64>, y: DVector<f64>, reg_weight: f64) -> Result<Self> {
        Ok(UserLoss::Logistic(LogisticLoss::new(a, y, reg_weight)?))
    }

    pub fn scalar_shifted(curvature: f64, center: f64) -> Result<Self> {
        if !(curvature > 0.0) || !curvature.is_finite() {
            return Err(Error::InvalidParameter {
                name: "curvature",
                reason: format!("must be positive, got {curvature}"),
            });
        }
        Ok(UserLoss::ScalarShiftedQuadratic { curvature, center })
    }

    pub fn absolute_deviation(anchor: DVector<f64>) -> Self {
        UserLoss::AbsoluteDeviation { anchor }
    }

    pub fn name(&self) -> &'static str {
        match self {
            UserLoss::Quadratic(_) => "quadratic",
            UserLoss::Logistic(_) => "logistic",
            UserLoss::ScalarShiftedQuadratic { .. } => "scalar-shifted-quadratic",
            UserLoss::AbsoluteDeviation { .. } => "absolute-deviation",
            UserLoss::NegPartQuadratic => "neg-part-quadratic",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            UserLoss::Quadratic(q) => q.a.ncols(),
            UserLoss::Logistic(l) => l.a.ncols(),
            UserLoss::AbsoluteDeviation { anchor } => anchor.len(),
            UserLoss::ScalarShiftedQuadratic { .. } | UserLoss::NegPartQuadratic => 1,
        }
    }

    /// Number of data rows for data-backed losses.
    pub fn num_samples(&self) -> Option<usize> {
        match self {
            UserLoss::Quadratic(q) => Some(q.a.nrows()),
            UserLoss::Logistic(l) => Some(l.a.nrows()),
            _ => None,
        }
    }

    /// Upper bound on the Lipschitz constant of the gradient, if smooth.
    pub fn smoothness(&self) -> Option<f64> {
        match self {
            UserLoss::Quadratic(q) => Some(q.eigvals.max()),
            UserLoss::Logistic(l) => Some(l.smoothness),
            UserLoss::ScalarShiftedQuadratic { curvature, .. } => Some(*curvature),
            UserLoss::NegPartQuadratic => Some(1.0),
            UserLoss::AbsoluteDeviation { .. } => None,
        }
    }

    pub fn has_closed_form_prox(&self) -> bool {
        !matches!(self, UserLoss::Logistic(_))
    }

    fn check_dim(&self, w: &DVector<f64>) -> Result<()> {
        if w.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: w.len(),
            });
        }
        Ok(())
    }

    pub fn value(&self, w: &DVector<f64>) -> Result<f64> {
        self.check_dim(w)?;
        Ok(match self {
            UserLoss::Quadratic(q) => 0.5 * (&q.a * w - &q.b).norm_squared(),
            UserLoss::Logistic(l) => l.value(w),
            UserLoss::ScalarShiftedQuadratic { curvature, center } => {
                0.5 * curvature * (w[0] - center).powi(2)
            }
            UserLoss::AbsoluteDeviation { anchor } => (w - anchor).norm(),
            UserLoss::NegPartQuadratic => 0.5 * w[0].min(0.0).powi(2),
        })
    }

    /// `∇f(w)`; at the kink of `AbsoluteDeviation` the zero subgradient.
    pub fn gradient(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(w)?;
        Ok(match self {
            UserLoss::Quadratic(q) => &q.gram * w - &q.cross,
            UserLoss::Logistic(l) => l.gradient_rows(w, 0..l.a.nrows()),
            UserLoss::ScalarShiftedQuadratic { curvature, center } => {
                DVector::from_element(1, curvature * (w[0] - center))
            }
            UserLoss::AbsoluteDeviation { anchor } => {
                let diff = w - anchor;
                let r = diff.norm();
                if r > 0.0 {
                    diff / r
                } else {
                    DVector::zeros(w.len())
                }
            }
            UserLoss::NegPartQuadratic => DVector::from_element(1, w[0].min(0.0)),
        })
    }

    /// Unbiased minibatch gradient over a contiguous row range, scaled by `n/|rows|`.
    pub fn minibatch_gradient(
        &self,
        w: &DVector<f64>,
        rows: std::ops::Range<usize>,
    ) -> Result<DVector<f64>> {
        self.check_dim(w)?;
        match self {
            UserLoss::Quadratic(q) => {
                let n = q.a.nrows();
                let block = q.a.rows(rows.start, rows.len());
                let resid = block * w - q.b.rows(rows.start, rows.len());
                let mut g = block.tr_mul(&resid);
                if rows.len() != n {
                    g *= n as f64 / rows.len() as f64;
                }
                Ok(g)
            }
            UserLoss::Logistic(l) => Ok(l.gradient_rows(w, rows)),
            other => Err(Error::NotDataBacked(other.name())),
        }
    }

    pub fn prox(&self, w: &DVector<f64>, eta: f64, spec: ProxSolverSpec) -> Result<DVector<f64>> {
        self.prox_with_batches(w, eta, spec, None)
    }

    /// Proximal map; with `GradientDescent` and a minibatch stream, the inner
    /// gradient of `f` is replaced by minibatch estimates.
    pub fn prox_with_batches(
        &self,
        w: &DVector<f64>,
        eta: f64,
        spec: ProxSolverSpec,
        batches: Option<&mut MinibatchStream>,
    ) -> Result<DVector<f64>> {
        self.check_dim(w)?;
        check_eta(eta)?;
        spec.validate()?;
        match spec {
            ProxSolverSpec::ClosedForm => self.prox_closed_form(w, eta),
            ProxSolverSpec::GradientDescent {
                inner_steps,
                inner_step_size,
            } => {
                let step = match inner_step_size {
                    Some(s) => s,
                    None => {
                        let lip = self.smoothness().ok_or_else(|| {
                            Error::Unsupported(format!(
                                "an explicit inner step size for nonsmooth {} losses",
                                self.name()
                            ))
                        })?;
                        1.0 / (lip + 1.0 / eta)
                    }
                };
                self.prox_gradient_descent(w, eta, inner_steps, step, batches)
            }
        }
    }

    fn prox_closed_form(&self, w: &DVector<f64>, eta: f64) -> Result<DVector<f64>> {
        Ok(match self {
            UserLoss::Quadratic(q) => q.prox(w, eta),
            UserLoss::Logistic(_) => return Err(Error::NoClosedForm("logistic")),
            UserLoss::ScalarShiftedQuadratic { curvature, center } => DVector::from_element(
                1,
                (w[0] + eta * curvature * center) / (1.0 + eta * curvature),
            ),
            UserLoss::AbsoluteDeviation { anchor } => {
                // block soft-shrinkage toward the anchor
                let diff = w - anchor;
                let r = diff.norm();
                if r <= eta {
                    anchor.clone()
                } else {
                    anchor + diff * (1.0 - eta / r)
                }
            }
            UserLoss::NegPartQuadratic => {
                let x = w[0];
                DVector::from_element(1, if x >= 0.0 { x } else { x / (1.0 + eta) })
            }
        })
    }

    fn prox_gradient_descent(
        &self,
        w: &DVector<f64>,
        eta: f64,
        steps: usize,
        step: f64,
        mut batches: Option<&mut MinibatchStream>,
    ) -> Result<DVector<f64>> {
        let mut x = w.clone();
        for _ in 0..steps {
            let mut g = match batches.as_deref_mut() {
                Some(stream) => {
                    let rows = stream.next_batch();
                    self.minibatch_gradient(&x, rows)?
                }
                None => self.gradient(&x)?,
            };
            g.axpy(1.0 / eta, &x, 1.0);
            g.axpy(-1.0 / eta, w, 1.0);
            x.axpy(-step, &g, 1.0);
        }
        Ok(x)
    }

    /// `R^η_f(w) = 2P^η_f(w) − w`.
    pub fn reflector(
        &self,
        w: &DVector<f64>,
        eta: f64,
        spec: ProxSolverSpec,
    ) -> Result<DVector<f64>> {
        let p = self.prox(w, eta, spec)?;
        Ok(p * 2.0 - w)
    }

    /// Moreau envelope `f(p) + ‖p − w‖²/(2η)` at `p = P^η_f(w)`.
    pub fn envelope_value(&self, w: &DVector<f64>, eta: f64, spec: ProxSolverSpec) -> Result<f64> {
        let p = self.prox(w, eta, spec)?;
        Ok(self.value(&p)? + (&p - w).norm_squared() / (2.0 * eta))
    }

    /// `∇env^η_f(w) = (w − P^η_f(w))/η`.
    pub fn envelope_gradient(
        &self,
        w: &DVector<f64>,
        eta: f64,
        spec: ProxSolverSpec,
    ) -> Result<DVector<f64>> {
        let p = self.prox(w, eta, spec)?;
        Ok((w - p) / eta)
    }

    /// `k` explicit steps `w ← w − η∇f(w)`, with minibatch gradients when a
    /// stream is supplied.
    pub fn grad_step_k(
        &self,
        w: &DVector<f64>,
        eta: f64,
        k: usize,
        mut batches: Option<&mut MinibatchStream>,
    ) -> Result<DVector<f64>> {
        self.check_dim(w)?;
        check_eta(eta)?;
        if k < 1 {
            return Err(Error::InvalidParameter {
                name: "k",
                reason: "at least one local step is required".into(),
            });
        }
        let mut x = w.clone();
        for _ in 0..k {
            let g = match batches.as_deref_mut() {
                Some(stream) => {
                    let rows = stream.next_batch();
                    self.minibatch_gradient(&x, rows)?
                }
                None => self.gradient(&x)?,
            };
            x.axpy(-eta, &g, 1.0);
        }
        Ok(x)
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::InvalidParameter {
            name: "eta",
            reason: format!("step size must be positive, got {eta}"),
        });
    }
    Ok(())
}

/// Cycles through `⌈n/B⌉` fixed contiguous minibatches of one user's rows,
/// visiting them in a fresh random order every epoch.
#[derive(Debug, Clone)]
pub struct MinibatchStream {
    rows: usize,
    batch_size: usize,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl MinibatchStream {
    pub fn new(rows: usize, batch_size: usize, rng: ChaCha8Rng) -> Result<Self> {
        if batch_size < 1 || batch_size > rows {
            return Err(Error::InvalidParameter {
                name: "batch",
                reason: format!("batch size must lie in [1, {rows}], got {batch_size}"),
            });
        }
        let batches = rows.div_ceil(batch_size);
        Ok(Self {
            rows,
            batch_size,
            order: (0..batches).collect(),
            // forces a shuffle before the first batch
            cursor: batches,
            rng,
        })
    }

    pub fn num_batches(&self) -> usize {
        self.order.len()
    }

    pub fn next_batch(&mut self) -> std::ops::Range<usize> {
        if self.cursor == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let b = self.order[self.cursor];
        self.cursor += 1;
        let start = b * self.batch_size;
        start..(start + self.batch_size).min(self.rows)
    }
}
