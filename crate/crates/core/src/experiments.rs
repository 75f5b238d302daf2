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

//! Synthetic problems, reference solutions and per-round metrics.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::consensus::{consensus_distance, weighted_mean, WeightVector};
use crate::error::{Error, Result};
use crate::losses::{ProxSolverSpec, UserLoss};
use crate::problem::{FederatedProblem, RegularizedReference};
use crate::scheme::{ergodic_average, stream_rng, IterateState, SchemeParams, DATA_STREAM};

/// Stationarity tolerance used by the logistic reference solver.
pub const LOGISTIC_ORACLE_TOL: f64 = 1e-10;
pub const LOGISTIC_ORACLE_CAP: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GenKind {
    /// `b_i = A_i(w⋆ + δ·u_i) + ε_i` with Gaussian designs, unit directions
    /// `u_i` and noise variance `sigma2`.
    LeastSquares {
        m: usize,
        d: usize,
        n: usize,
        sigma2: f64,
        #[serde(default)]
        shift: f64,
    },
    /// Labels drawn from a logistic model with a shared Gaussian truth.
    Logistic { m: usize, d: usize, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    #[serde(flatten)]
    pub kind: GenKind,
    pub seed: u64,
}

impl GenSpec {
    pub fn least_squares(m: usize, d: usize, n: usize, sigma2: f64, seed: u64) -> Self {
        Self {
            kind: GenKind::LeastSquares {
                m,
                d,
                n,
                sigma2,
                shift: 0.0,
            },
            seed,
        }
    }

    pub fn logistic(m: usize, d: usize, n: usize, seed: u64) -> Self {
        Self {
            kind: GenKind::Logistic { m, d, n },
            seed,
        }
    }

    /// m = 10, d = 20, n = 200, σ² = 0.25.
    pub fn desk_least_squares(seed: u64) -> Self {
        Self::least_squares(10, 20, 200, 0.25, seed)
    }

    /// m = 5, d = 20, n = 200.
    pub fn desk_logistic(seed: u64) -> Self {
        Self::logistic(5, 20, 200, seed)
    }

    pub fn with_shift(mut self, delta: f64) -> Self {
        if let GenKind::LeastSquares { ref mut shift, .. } = self.kind {
            *shift = delta;
        }
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (m, d, n) = match self.kind {
            GenKind::LeastSquares {
                m,
                d,
                n,
                sigma2,
                shift,
            } => {
                if !(sigma2 >= 0.0) || !sigma2.is_finite() {
                    return Err(Error::InvalidParameter {
                        name: "sigma2",
                        reason: format!(
                            "noise variance must be finite and nonnegative, got {sigma2}"
                        ),
                    });
                }
                if !(shift >= 0.0) || !shift.is_finite() {
                    return Err(Error::InvalidParameter {
                        name: "shift",
                        reason: format!(
                            "heterogeneity shift must be finite and nonnegative, got {shift}"
                        ),
                    });
                }
                (m, d, n)
            }
            GenKind::Logistic { m, d, n } => (m, d, n),
        };
        for (name, v) in [("m", m), ("d", d), ("n", n)] {
            if v < 1 {
                return Err(Error::InvalidParameter {
                    name,
                    reason: "must be at least 1".into(),
                });
            }
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<FederatedProblem> {
        match self.kind {
            GenKind::LeastSquares { .. } => gen_least_squares(self),
            GenKind::Logistic { .. } => gen_logistic(self),
        }
    }
}

impl fmt::Display for GenSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            GenKind::LeastSquares {
                m,
                d,
                n,
                sigma2,
                shift,
            } => write!(
                f,
                "least_squares m={m} d={d} n={n} sigma2={sigma2:?} shift={shift:?} seed={}",
                self.seed
            ),
            GenKind::Logistic { m, d, n } => {
                write!(f, "logistic m={m} d={d} n={n} seed={}", self.seed)
            }
        }
    }
}

fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Row-major fill, so the draw order does not depend on storage layout.
fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_iterator(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)),
    )
}

/// Least-squares users. Draw order on the data stream: `w⋆`, then for each
/// user `A_i`, the direction `u_i`, and the noise `ε_i`.
pub fn gen_least_squares(spec: &GenSpec) -> Result<FederatedProblem> {
    spec.validate()?;
    let GenKind::LeastSquares {
        m,
        d,
        n,
        sigma2,
        shift,
    } = spec.kind
    else {
        return Err(Error::InvalidParameter {
            name: "kind",
            reason: "expected a least-squares specification".into(),
        });
    };
    let mut rng = stream_rng(spec.seed, DATA_STREAM);
    let w_star = gaussian_vector(&mut rng, d);
    let sigma = sigma2.sqrt();
    let mut users = Vec::with_capacity(m);
    for _ in 0..m {
        let a = gaussian_matrix(&mut rng, n, d);
        let dir = gaussian_vector(&mut rng, d);
        let norm = dir.norm();
        let dir = if norm > 0.0 { dir / norm } else { dir };
        let noise = gaussian_vector(&mut rng, n) * sigma;
        let truth = &w_star + dir * shift;
        let b = &a * truth + noise;
        users.push(UserLoss::quadratic(a, b)?);
    }
    let mut problem = FederatedProblem::new(users, WeightVector::uniform(m))?;
    let solution = solve_global_ls(&problem)?;
    problem.true_optimum = Some(problem.objective(&solution)?);
    problem.true_solution = Some(solution);
    Ok(problem)
}

/// Logistic users with labels `+1` with probability `σ(aᵀw₀)`, `w₀ ∼ N(0, I)`.
pub fn gen_logistic(spec: &GenSpec) -> Result<FederatedProblem> {
    gen_logistic_with_truth(spec, None)
}

/// As [`gen_logistic`], with an explicit labelling vector `w₀` in place of
/// the random one (which is still drawn, keeping the stream aligned).
pub fn gen_logistic_with_truth(
    spec: &GenSpec,
    truth: Option<&DVector<f64>>,
) -> Result<FederatedProblem> {
    spec.validate()?;
    let GenKind::Logistic { m, d, n } = spec.kind else {
        return Err(Error::InvalidParameter {
            name: "kind",
            reason: "expected a logistic specification".into(),
        });
    };
    let mut rng = stream_rng(spec.seed, DATA_STREAM);
    let drawn = gaussian_vector(&mut rng, d);
    let w0 = match truth {
        Some(t) => {
            if t.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: t.len(),
                });
            }
            t.clone()
        }
        None => drawn,
    };
    let reg = 1.0 / (m as f64 * n as f64);
    let mut users = Vec::with_capacity(m);
    for _ in 0..m {
        let a = gaussian_matrix(&mut rng, n, d);
        let margins = &a * &w0;
        let y = margins.map(|s| {
            let p = 1.0 / (1.0 + (-s).exp());
            if rng.random::<f64>() < p {
                1.0
            } else {
                -1.0
            }
        });
        users.push(UserLoss::logistic(a, y, reg)?);
    }
    let mut problem = FederatedProblem::new(users, WeightVector::uniform(m))?;
    let solution = oracle_logistic(&problem, LOGISTIC_ORACLE_TOL)?;
    problem.true_optimum = Some(problem.objective(&solution)?);
    problem.true_solution = Some(solution);
    Ok(problem)
}

fn quadratic_parts(problem: &FederatedProblem) -> Result<Vec<&crate::losses::QuadraticLoss>> {
    problem
        .users()
        .iter()
        .map(|u| match u {
            UserLoss::Quadratic(q) => Ok(q),
            other => Err(Error::Unsupported(format!(
                "all-quadratic users (found {})",
                other.name()
            ))),
        })
        .collect()
}

fn spd_solve(lhs: DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    match lhs.clone().cholesky() {
        Some(ch) => Ok(ch.solve(rhs)),
        None => lhs
            .lu()
            .solve(rhs)
            .ok_or_else(|| Error::Singular(what.to_string())),
    }
}

/// Minimizer of `Σ_i λ_i ½‖A_i w − b_i‖²` from the normal equations.
pub fn solve_global_ls(problem: &FederatedProblem) -> Result<DVector<f64>> {
    let quads = quadratic_parts(problem)?;
    let d = problem.dim();
    let mut lhs = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    for (i, q) in quads.iter().enumerate() {
        let l = problem.weights().get(i);
        lhs += q.gram() * l;
        rhs.axpy(l, q.cross(), 1.0);
    }
    let ch = lhs
        .cholesky()
        .ok_or_else(|| Error::Singular("normal equations are not positive definite".into()))?;
    Ok(ch.solve(&rhs))
}

/// Gradient descent with backtracking on the aggregate objective, stopping
/// once `‖∇f‖ ≤ tol`.
pub fn oracle_logistic(problem: &FederatedProblem, tol: f64) -> Result<DVector<f64>> {
    if !problem.all_logistic() {
        return Err(Error::Unsupported("all-logistic users".into()));
    }
    gradient_descent_backtracking(
        |w| problem.gradient(w),
        DVector::zeros(problem.dim()),
        tol,
        LOGISTIC_ORACLE_CAP,
    )
}

/// Steps are shrunk until `s·L̂ ≤ 1`, where `L̂ = ‖∇f(x⁺) − ∇f(x)‖/‖x⁺ − x‖`
/// is the curvature seen along the step, and tentatively doubled after each
/// accepted step. The test reads only gradients, so it keeps working after
/// objective differences drop below rounding level.
pub(crate) fn gradient_descent_backtracking(
    grad: impl Fn(&DVector<f64>) -> Result<DVector<f64>>,
    mut x: DVector<f64>,
    tol: f64,
    cap: usize,
) -> Result<DVector<f64>> {
    let mut g = grad(&x)?;
    let mut step = 1.0;
    for _ in 0..cap {
        if g.norm() <= tol {
            return Ok(x);
        }
        loop {
            let trial = &x - &g * step;
            let g_trial = grad(&trial)?;
            let moved = step * g.norm();
            let local_l = (&g_trial - &g).norm() / moved;
            if step * local_l <= 1.0 {
                x = trial;
                g = g_trial;
                break;
            }
            step = (0.5 * step).min(0.9 / local_l);
            if !(step > 1e-300) {
                return Err(Error::Singular("backtracking step underflow".into()));
            }
        }
        step *= 2.0;
    }
    Err(Error::IterationCap(cap))
}

fn check_fedavg_radius(problem: &FederatedProblem, eta: f64) -> Result<()> {
    for q in quadratic_parts(problem)? {
        let rho = q
            .spectrum()
            .iter()
            .map(|&s| (1.0 - eta * s).abs())
            .fold(0.0, f64::max);
        if rho >= 1.0 {
            return Err(Error::InvalidParameter {
                name: "eta",
                reason: format!("local gradient map has spectral radius {rho} ≥ 1"),
            });
        }
    }
    Ok(())
}

/// Fixed point of `k`-step FedAvg on quadratic users:
/// `[Σ λ_i Q_i S_i] w = Σ λ_i S_i c_i` with `S_i = (1/k) Σ_{j<k} (I − ηQ_i)^j`.
pub fn fedavg_fixed_point(problem: &FederatedProblem, eta: f64, k: usize) -> Result<DVector<f64>> {
    if k < 1 {
        return Err(Error::InvalidParameter {
            name: "k",
            reason: "at least one local step is required".into(),
        });
    }
    check_fedavg_radius(problem, eta)?;
    assemble_and_solve(problem, |q| {
        let r = 1.0 - eta * q;
        let mut acc = 0.0;
        let mut p = 1.0;
        for _ in 0..k {
            acc += p;
            p *= r;
        }
        acc / k as f64
    })
}

/// Fixed point with the averaged power sum replaced by `I − (η(k−1)/2)Q_i`.
pub fn taylor_fixed_point(problem: &FederatedProblem, eta_k_minus_1: f64) -> Result<DVector<f64>> {
    assemble_and_solve(problem, |q| 1.0 - 0.5 * eta_k_minus_1 * q)
}

/// Solves `[Σ λ_i Q_i S_i] w = Σ λ_i S_i c_i` with `S_i = φ(Q_i)`.
fn assemble_and_solve(
    problem: &FederatedProblem,
    phi: impl Fn(f64) -> f64,
) -> Result<DVector<f64>> {
    let quads = quadratic_parts(problem)?;
    let d = problem.dim();
    let mut lhs = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    for (i, q) in quads.iter().enumerate() {
        let l = problem.weights().get(i);
        let s = q.spectral_matrix(&phi);
        lhs += q.spectral_matrix(|x| x * phi(x)) * l;
        rhs += (&s * q.cross()) * l;
    }
    // symmetrize away rounding before factorizing
    let lhs = (&lhs + lhs.transpose()) * 0.5;
    spd_solve(lhs, &rhs, "assembled fixed-point system is singular")
}

/// Minimizer of `Σ_i λ_i env^η_{f_i}`. Quadratic users use
/// `[Σλ_i(I+ηQ_i)⁻¹Q_i] w = Σλ_i(I+ηQ_i)⁻¹c_i`; other losses with a closed
/// prox iterate `w ← Σ_i λ_i P^η_{f_i}(w)` to a fixed point.
pub fn regularized_solution(problem: &FederatedProblem, eta: f64) -> Result<RegularizedReference> {
    if !(eta > 0.0) {
        return Err(Error::InvalidParameter {
            name: "eta",
            reason: format!("step size must be positive, got {eta}"),
        });
    }
    let spec = ProxSolverSpec::ClosedForm;
    let solution = if problem.all_quadratic() {
        assemble_and_solve(problem, |q| 1.0 / (1.0 + eta * q))?
    } else {
        if !problem.users().iter().all(UserLoss::has_closed_form_prox) {
            return Err(Error::Unsupported(
                "closed-form proximal maps for a regularized reference".into(),
            ));
        }
        let start = problem
            .true_solution
            .clone()
            .unwrap_or_else(|| DVector::zeros(problem.dim()));
        prox_average_fixed_point(problem, eta, start, 1e-15, 10_000_000)?
    };
    let optimum = problem.regularized_objective(&solution, eta, spec)?;
    Ok(RegularizedReference {
        eta,
        solution,
        optimum,
    })
}

fn prox_average_fixed_point(
    problem: &FederatedProblem,
    eta: f64,
    mut w: DVector<f64>,
    tol: f64,
    cap: usize,
) -> Result<DVector<f64>> {
    for _ in 0..cap {
        let mut next = DVector::zeros(problem.dim());
        for (i, u) in problem.users().iter().enumerate() {
            next.axpy(
                problem.weights().get(i),
                &u.prox(&w, eta, ProxSolverSpec::ClosedForm)?,
                1.0,
            );
        }
        let moved = (&next - &w).norm();
        w = next;
        if moved <= tol * (1.0 + w.norm()) {
            return Ok(w);
        }
    }
    Err(Error::IterationCap(cap))
}

/// Attaches the regularized reference for step `eta` to the problem.
pub fn attach_regularized(problem: &mut FederatedProblem, eta: f64) -> Result<()> {
    problem.regularized = Some(regularized_solution(problem, eta)?);
    Ok(())
}

/// `H = (1/m) Σ_i ‖∇f_i(w*)‖²`.
pub fn heterogeneity_measure(problem: &FederatedProblem) -> Result<f64> {
    let ws = problem
        .true_solution
        .as_ref()
        .ok_or(Error::Missing("true solution"))?;
    let mut acc = 0.0;
    for u in problem.users() {
        acc += u.gradient(ws)?.norm_squared();
    }
    Ok(acc / problem.num_users() as f64)
}

/// One row of a run's metric stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    /// `f` at the consensus average of the reported iterate.
    pub objective: f64,
    /// `f − f*` at that point.
    pub gap: f64,
    /// `f̃ − f̃*` for the run's constant step, when a reference exists.
    pub regularized_gap: Option<f64>,
    /// `‖w − P_H w‖_λ` of the current iterate.
    pub consensus_residual: f64,
    pub eta: f64,
    pub wall_ms: f64,
    pub accelerated: bool,
}

/// Metrics after the state's latest round. With ergodic averaging on, the
/// objective and gaps refer to the averaged iterate. `wall_ms` and
/// `accelerated` are left for the caller.
pub fn compute_metrics(
    state: &IterateState,
    problem: &FederatedProblem,
    params: &SchemeParams,
) -> Result<RoundMetrics> {
    let t = state.round();
    let point = if params.ergodic_average && state.ergodic_denominator() > 0.0 {
        weighted_mean(&ergodic_average(state)?, problem.weights())?
    } else {
        weighted_mean(&state.w, problem.weights())?
    };
    let objective = problem.objective(&point)?;
    let gap = problem.optimality_gap(&point)?;
    let regularized_gap = match (&problem.regularized, params.eta.constant_value()) {
        (Some(r), Some(eta)) if r.eta == eta => {
            let spec = problem.default_prox_spec();
            Some(problem.regularized_objective(&point, eta, spec)? - r.optimum)
        }
        _ => None,
    };
    Ok(RoundMetrics {
        round: t,
        objective,
        gap,
        regularized_gap,
        consensus_residual: consensus_distance(&state.w, problem.weights())?,
        eta: if t >= 1 {
            params.eta.value_at(t)
        } else {
            f64::NAN
        },
        wall_ms: 0.0,
        accelerated: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::StackedState;
    use crate::schedule::Schedule;
    use crate::scheme::{preset, round, PresetName, RoundStreams};

    fn tiny_ls(sigma2: f64, seed: u64) -> FederatedProblem {
        gen_least_squares(&GenSpec::least_squares(4, 5, 30, sigma2, seed)).unwrap()
    }

    #[test]
    fn noiseless_homogeneous_has_zero_heterogeneity() {
        let spec = GenSpec::least_squares(5, 4, 20, 0.0, 3);
        let p = gen_least_squares(&spec).unwrap();
        assert!(heterogeneity_measure(&p).unwrap() < 1e-18);
        let mut rng = stream_rng(3, DATA_STREAM);
        let w_star = gaussian_vector(&mut rng, 4);
        assert!((p.true_solution.as_ref().unwrap() - w_star).amax() < 1e-10);
    }

    #[test]
    fn heterogeneity_grows_with_noise() {
        let hs: Vec<f64> = [0.01, 0.25, 1.0]
            .iter()
            .map(|&s| heterogeneity_measure(&tiny_ls(s, 7)).unwrap())
            .collect();
        assert!(hs[0] > 0.0 && hs[0] < hs[1] && hs[1] < hs[2], "{hs:?}");
    }

    #[test]
    fn heterogeneity_grows_with_shift() {
        let base = GenSpec::least_squares(4, 5, 30, 0.1, 2);
        let h0 = heterogeneity_measure(&gen_least_squares(&base).unwrap()).unwrap();
        let h1 = heterogeneity_measure(&gen_least_squares(&base.with_shift(2.0)).unwrap()).unwrap();
        assert!(h1 > h0);
    }

    #[test]
    fn generation_is_bit_deterministic() {
        let spec = GenSpec::desk_least_squares(11);
        let a = gen_least_squares(&spec).unwrap();
        let b = gen_least_squares(&spec).unwrap();
        for (x, y) in a.users().iter().zip(b.users()) {
            let (UserLoss::Quadratic(x), UserLoss::Quadratic(y)) = (x, y) else {
                panic!()
            };
            assert_eq!(x.design(), y.design());
            assert_eq!(x.response(), y.response());
        }
        assert_eq!(a.true_solution, b.true_solution);
    }

    #[test]
    fn global_ls_is_stationary_and_matches_square_solve() {
        let p = tiny_ls(0.25, 1);
        let w = solve_global_ls(&p).unwrap();
        assert!(p.gradient(&w).unwrap().norm() <= 1e-8);

        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.5, 3.0]);
        let b = DVector::from_vec(vec![1.0, -2.0]);
        let single =
            FederatedProblem::uniform(vec![UserLoss::quadratic(a.clone(), b.clone()).unwrap()])
                .unwrap();
        let direct = a.clone().lu().solve(&b).unwrap();
        assert!((solve_global_ls(&single).unwrap() - &direct).amax() < 1e-12);
        let twice = FederatedProblem::uniform(vec![
            UserLoss::quadratic(a.clone(), b.clone()).unwrap(),
            UserLoss::quadratic(a, b).unwrap(),
        ])
        .unwrap();
        assert!((solve_global_ls(&twice).unwrap() - direct).amax() < 1e-12);
    }

    #[test]
    fn fedavg_single_step_fixed_point_is_global_solution() {
        let p = tiny_ls(0.25, 4);
        let w = solve_global_ls(&p).unwrap();
        for eta in [1e-4, 1e-3, 5e-3] {
            assert!((fedavg_fixed_point(&p, eta, 1).unwrap() - &w).norm() < 1e-8);
        }
        assert!((taylor_fixed_point(&p, 0.0).unwrap() - w).norm() < 1e-10);
    }

    #[test]
    fn fedavg_rejects_unstable_steps() {
        let p = tiny_ls(0.25, 4);
        assert!(fedavg_fixed_point(&p, 10.0, 3).is_err());
    }

    #[test]
    fn simulated_fedavg_reaches_closed_form() {
        let p = tiny_ls(0.25, 5);
        let (eta, k) = (2e-3, 4);
        let fp = fedavg_fixed_point(&p, eta, k).unwrap();
        let params = preset(PresetName::FedAvg, k, Schedule::Constant(eta)).unwrap();
        let mut state = IterateState::from_consensus(&DVector::zeros(5), 4, &params);
        let mut streams = RoundStreams::new(0, &p, &params.local).unwrap();
        for _ in 0..5000 {
            round(&mut state, &p, &params, &mut streams).unwrap();
        }
        let w = weighted_mean(&state.w, p.weights()).unwrap();
        assert!((w - fp).norm() < 1e-9);
    }

    #[test]
    fn taylor_drift_is_monotone() {
        let p = tiny_ls(0.25, 6);
        let ws = p.true_solution.clone().unwrap();
        let drifts: Vec<f64> = [1e-4, 5e-4, 1e-3, 2e-3]
            .iter()
            .map(|&x| (taylor_fixed_point(&p, x).unwrap() - &ws).norm())
            .collect();
        assert!(drifts.windows(2).all(|w| w[0] < w[1]), "{drifts:?}");
    }

    #[test]
    fn regularized_solution_is_envelope_stationary() {
        let p = tiny_ls(0.25, 8);
        for eta in [1e-3, 1e-2, 0.1] {
            let r = regularized_solution(&p, eta).unwrap();
            let g = p
                .regularized_gradient(&r.solution, eta, ProxSolverSpec::ClosedForm)
                .unwrap();
            assert!(g.norm() <= 1e-7, "eta {eta}: {}", g.norm());
        }
    }

    #[test]
    fn scalar_regularized_solution() {
        // f₊ and 2f₋ go through the prox-average iteration rather than a linear solve
        let p = FederatedProblem::uniform(vec![
            UserLoss::scalar_shifted(1.0, -1.0).unwrap(),
            UserLoss::scalar_shifted(2.0, 1.0).unwrap(),
        ])
        .unwrap();
        let r = regularized_solution(&p, 0.5).unwrap();
        let g = p
            .regularized_gradient(&r.solution, 0.5, ProxSolverSpec::ClosedForm)
            .unwrap();
        assert!(g.norm() < 1e-12);
    }

    #[test]
    fn logistic_oracle_is_stationary_and_beats_truth() {
        let spec = GenSpec::logistic(3, 4, 60, 2);
        let p = gen_logistic(&spec).unwrap();
        let ws = p.true_solution.clone().unwrap();
        assert!(p.gradient(&ws).unwrap().norm() <= LOGISTIC_ORACLE_TOL);
        let mut rng = stream_rng(2, DATA_STREAM);
        let w0 = gaussian_vector(&mut rng, 4);
        let f = p.objective(&ws).unwrap();
        assert!(f <= p.objective(&w0).unwrap());
        assert!(f <= p.objective(&DVector::zeros(4)).unwrap());
    }

    #[test]
    fn symmetric_truth_gives_balanced_labels() {
        let spec = GenSpec::logistic(1, 3, 10_000, 5);
        let p = gen_logistic_with_truth(&spec, Some(&DVector::zeros(3))).unwrap();
        let UserLoss::Logistic(l) = &p.users()[0] else {
            panic!()
        };
        let pos = l.labels().iter().filter(|&&y| y > 0.0).count() as f64 / 10_000.0;
        assert!((0.47..=0.53).contains(&pos), "{pos}");
    }

    #[test]
    fn metrics_vanish_at_solution() {
        let p = tiny_ls(0.25, 9);
        let params = preset(PresetName::FedProx, 1, Schedule::Constant(0.1)).unwrap();
        let mut state = IterateState::from_consensus(p.true_solution.as_ref().unwrap(), 4, &params);
        state.w = StackedState::from_consensus(p.true_solution.as_ref().unwrap(), 4);
        let m = compute_metrics(&state, &p, &params).unwrap();
        assert!(m.gap.abs() < 1e-20);
        assert_eq!(m.consensus_residual, 0.0);
    }
}
