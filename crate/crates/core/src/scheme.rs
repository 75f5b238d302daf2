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

//! The grand iteration
//!
//! ```text
//! z_{t+1} = (1 − α_t) u_t + α_t Local(u_t)
//! w_{t+1} = (1 − β_t) z_{t+1} + β_t P_H(z_{t+1})
//! u_{t+1} = (1 − γ_t) u_t + γ_t w_{t+1}
//! ```
//!
//! with its named presets, user sampling, minibatch local solvers, ergodic
//! averaging and optional Anderson acceleration, plus the dual form of the
//! partial-inverse method.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anderson::{accelerated_step, combine, AndersonConfig, AndersonMemory, AndersonMode};
use crate::consensus::{project_consensus, weighted_mean, weighted_mean_over, StackedState};
use crate::error::{Error, Result};
use crate::losses::{MinibatchStream, ProxSolverSpec, UserLoss};
use crate::problem::FederatedProblem;
use crate::schedule::Schedule;

/// Identifier of the seed-derivation scheme, written into run outputs.
///
/// From a master seed `s`, every generator is `ChaCha8Rng::seed_from_u64(s)`
/// on its own stream: stream 0 draws problem data, stream 1 drives user
/// sampling, and stream `2 + i` drives user `i`'s minibatch order.
pub const SEED_SCHEME: &str = "opfl-seed-v1";

pub const DATA_STREAM: u64 = 0;
pub const SAMPLING_STREAM: u64 = 1;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn user_stream(seed: u64, user: usize) -> ChaCha8Rng {
    stream_rng(seed, 2 + user as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PresetName {
    FedAvg,
    FedProx,
    FedSplit,
    FedPi,
    FedRP,
    ReflectGrad,
    ReflectProx,
}

impl PresetName {
    pub const ALL: [PresetName; 7] = [
        PresetName::FedAvg,
        PresetName::FedProx,
        PresetName::FedSplit,
        PresetName::FedPi,
        PresetName::FedRP,
        PresetName::ReflectGrad,
        PresetName::ReflectProx,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PresetName::FedAvg => "FedAvg",
            PresetName::FedProx => "FedProx",
            PresetName::FedSplit => "FedSplit",
            PresetName::FedPi => "FedPi",
            PresetName::FedRP => "FedRP",
            PresetName::ReflectGrad => "ReflectGrad",
            PresetName::ReflectProx => "ReflectProx",
        }
    }

    /// `(α, β, γ)` of the preset.
    pub fn coefficients(&self) -> (f64, f64, f64) {
        match self {
            PresetName::FedAvg | PresetName::FedProx => (1.0, 1.0, 1.0),
            PresetName::FedSplit => (2.0, 2.0, 1.0),
            PresetName::FedPi => (2.0, 2.0, 0.5),
            PresetName::FedRP => (2.0, 1.0, 1.0),
            PresetName::ReflectGrad | PresetName::ReflectProx => (1.0, 2.0, 1.0),
        }
    }

    pub fn uses_gradient_steps(&self) -> bool {
        matches!(self, PresetName::FedAvg | PresetName::ReflectGrad)
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', '_'], "");
        PresetName::ALL
            .into_iter()
            .find(|p| p.as_str().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

/// What each present user computes from its block `u_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LocalSolver {
    /// Proximal map, in closed form where the loss has one and by the
    /// problem's default gradient-descent solver otherwise.
    ExactProx,
    /// Proximal map by inner gradient descent, optionally on minibatches
    /// of size `batch`.
    IterativeProx {
        spec: ProxSolverSpec,
        batch: Option<usize>,
    },
    /// `k` explicit gradient steps, optionally on minibatches.
    GradK { k: usize, batch: Option<usize> },
}

impl LocalSolver {
    pub fn batch(&self) -> Option<usize> {
        match *self {
            LocalSolver::ExactProx => None,
            LocalSolver::IterativeProx { batch, .. } | LocalSolver::GradK { batch, .. } => batch,
        }
    }

    pub fn with_batch(self, batch: Option<usize>) -> Self {
        match self {
            LocalSolver::ExactProx => match batch {
                None => LocalSolver::ExactProx,
                Some(_) => LocalSolver::IterativeProx {
                    spec: ProxSolverSpec::gradient_descent_default(),
                    batch,
                },
            },
            LocalSolver::IterativeProx { spec, .. } => LocalSolver::IterativeProx { spec, batch },
            LocalSolver::GradK { k, .. } => LocalSolver::GradK { k, batch },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LocalSolver::ExactProx => {}
            LocalSolver::IterativeProx { spec, .. } => spec.validate()?,
            LocalSolver::GradK { k, .. } => {
                if k < 1 {
                    return Err(Error::InvalidParameter {
                        name: "k",
                        reason: "at least one local step is required".into(),
                    });
                }
            }
        }
        if self.batch() == Some(0) {
            return Err(Error::InvalidParameter {
                name: "batch",
                reason: "minibatch size must be at least 1".into(),
            });
        }
        Ok(())
    }

    fn apply(
        &self,
        loss: &UserLoss,
        u: &DVector<f64>,
        eta: f64,
        default_spec: ProxSolverSpec,
        stream: Option<&mut MinibatchStream>,
    ) -> Result<DVector<f64>> {
        match *self {
            LocalSolver::ExactProx => loss.prox(u, eta, default_spec),
            LocalSolver::IterativeProx { spec, .. } => loss.prox_with_batches(u, eta, spec, stream),
            LocalSolver::GradK { k, .. } => loss.grad_step_k(u, eta, k, stream),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeParams {
    pub alpha: Schedule,
    pub beta: Schedule,
    pub gamma: Schedule,
    pub eta: Schedule,
    pub local: LocalSolver,
    /// Probability that a user takes part in a round.
    pub participation: f64,
    pub anderson: Option<AndersonConfig>,
    pub ergodic_average: bool,
}

/// Coefficients of one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
}

impl SchemeParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, eta: Schedule, local: LocalSolver) -> Self {
        Self {
            alpha: Schedule::Constant(alpha),
            beta: Schedule::Constant(beta),
            gamma: Schedule::Constant(gamma),
            eta,
            local,
            participation: 1.0,
            anderson: None,
            ergodic_average: false,
        }
    }

    pub fn with_participation(mut self, p: f64) -> Self {
        self.participation = p;
        self
    }

    pub fn with_anderson(mut self, config: AndersonConfig) -> Self {
        self.anderson = Some(config);
        self
    }

    pub fn with_ergodic_average(mut self, on: bool) -> Self {
        self.ergodic_average = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.eta.validate()?;
        self.local.validate()?;
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "participation",
                reason: format!("must lie in (0, 1], got {}", self.participation),
            });
        }
        if let Some(a) = &self.anderson {
            a.validate()?;
        }
        Ok(())
    }

    /// Evaluates all schedules at round `t` (1-based), enforcing the
    /// nonexpansiveness ranges when acceleration is on.
    pub fn coefficients_at(&self, t: usize) -> Result<RoundCoefficients> {
        let c = RoundCoefficients {
            alpha: self.alpha.value_at(t),
            beta: self.beta.value_at(t),
            gamma: self.gamma.value_at(t),
            eta: self.eta.value_at(t),
        };
        if !(c.eta > 0.0) || !c.eta.is_finite() {
            return Err(Error::ScheduleOutOfRange {
                name: "eta",
                value: c.eta,
                round: t,
                range: "(0, ∞)",
            });
        }
        for (name, value) in [("alpha", c.alpha), ("beta", c.beta), ("gamma", c.gamma)] {
            if !value.is_finite() {
                return Err(Error::ScheduleOutOfRange {
                    name,
                    value,
                    round: t,
                    range: "finite values",
                });
            }
        }
        if self.anderson.is_some() {
            let checks = [
                ("alpha", c.alpha, 2.0, "[0, 2]"),
                ("beta", c.beta, 2.0, "[0, 2]"),
                ("gamma", c.gamma, 1.0, "[0, 1]"),
            ];
            for (name, value, hi, range) in checks {
                if !(0.0..=hi).contains(&value) {
                    return Err(Error::ScheduleOutOfRange {
                        name,
                        value,
                        round: t,
                        range,
                    });
                }
            }
        }
        Ok(c)
    }
}

/// Parameters of a named algorithm. `k` is only read by the gradient-step
/// presets.
pub fn preset(name: PresetName, k: usize, eta: Schedule) -> Result<SchemeParams> {
    let local = if name.uses_gradient_steps() {
        if k < 1 {
            return Err(Error::InvalidParameter {
                name: "k",
                reason: "at least one local step is required".into(),
            });
        }
        LocalSolver::GradK { k, batch: None }
    } else {
        LocalSolver::ExactProx
    };
    let (a, b, g) = name.coefficients();
    let params = SchemeParams::new(a, b, g, eta, local);
    params.validate()?;
    Ok(params)
}

/// Present users of one round and the number of empty draws rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledUsers {
    pub indices: Vec<usize>,
    pub redraws: usize,
}

/// Includes each of `m` users independently with probability `p`,
/// redrawing empty sets. `p = 1` selects everyone without touching `rng`.
pub fn sample_users(m: usize, p: f64, rng: &mut impl Rng) -> SampledUsers {
    assert!(m >= 1, "no users to sample");
    assert!(p > 0.0 && p <= 1.0, "participation must lie in (0, 1]");
    if p >= 1.0 {
        return SampledUsers {
            indices: (0..m).collect(),
            redraws: 0,
        };
    }
    let mut redraws = 0;
    loop {
        let indices: Vec<usize> = (0..m).filter(|_| rng.random::<f64>() < p).collect();
        if !indices.is_empty() {
            if redraws > 0 {
                log::debug!("user sampling: {redraws} empty draw(s) rejected");
            }
            return SampledUsers { indices, redraws };
        }
        redraws += 1;
    }
}

/// Random generators consumed by the scheme for one replicate.
#[derive(Debug, Clone)]
pub struct RoundStreams {
    sampling: ChaCha8Rng,
    users: Vec<Option<MinibatchStream>>,
}

impl RoundStreams {
    pub fn new(seed: u64, problem: &FederatedProblem, local: &LocalSolver) -> Result<Self> {
        let users = match local.batch() {
            None => vec![None; problem.num_users()],
            Some(b) => problem
                .users()
                .iter()
                .enumerate()
                .map(|(i, loss)| {
                    let n = loss
                        .num_samples()
                        .ok_or(Error::NotDataBacked(loss.name()))?;
                    MinibatchStream::new(n, b, user_stream(seed, i)).map(Some)
                })
                .collect::<Result<Vec<_>>>()?,
        };
        Ok(Self {
            sampling: stream_rng(seed, SAMPLING_STREAM),
            users,
        })
    }
}

/// Server-side acceleration memory plus the `w`/`z` histories that the same
/// weights are applied to.
#[derive(Debug, Clone)]
struct Accelerator {
    config: AndersonConfig,
    memory: AndersonMemory,
    w_images: VecDeque<StackedState>,
    z_images: VecDeque<StackedState>,
    /// Previous consensus average, the input of the projected-mode map.
    last_mean: Option<DVector<f64>>,
}

impl Accelerator {
    fn new(config: AndersonConfig) -> Self {
        Self {
            config,
            memory: AndersonMemory::new(config.tau),
            w_images: VecDeque::new(),
            z_images: VecDeque::new(),
            last_mean: None,
        }
    }

    fn remember(&mut self, w: &StackedState, z: &StackedState) {
        self.w_images.push_back(w.clone());
        self.z_images.push_back(z.clone());
        while self.w_images.len() > self.memory.capacity() {
            self.w_images.pop_front();
            self.z_images.pop_front();
        }
    }
}

fn combine_states(states: &VecDeque<StackedState>, weights: &[f64]) -> StackedState {
    let users = states[0].num_users();
    let dim = states[0].dim();
    let cols: Vec<DVector<f64>> = states
        .iter()
        .map(|s| DVector::from_column_slice(s.as_slice()))
        .collect();
    let flat = combine(cols.iter(), weights);
    StackedState::from_flat(users, dim, flat.as_slice()).expect("consistent history shapes")
}

/// Iterates of the grand scheme.
#[derive(Debug, Clone)]
pub struct IterateState {
    pub u: StackedState,
    pub z: StackedState,
    pub w: StackedState,
    ergodic_numerator: StackedState,
    ergodic_denominator: f64,
    round: usize,
    accelerator: Option<Accelerator>,
}

impl IterateState {
    /// Starts from `u_0 = z_0 = w_0`.
    pub fn new(u0: StackedState, params: &SchemeParams) -> Self {
        let zeros = StackedState::zeros(u0.num_users(), u0.dim());
        Self {
            z: u0.clone(),
            w: u0.clone(),
            u: u0,
            ergodic_numerator: zeros,
            ergodic_denominator: 0.0,
            round: 0,
            accelerator: params.anderson.map(Accelerator::new),
        }
    }

    /// Every block starts at `w0`.
    pub fn from_consensus(w0: &DVector<f64>, users: usize, params: &SchemeParams) -> Self {
        Self::new(StackedState::from_consensus(w0, users), params)
    }

    /// Number of completed rounds.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn ergodic_denominator(&self) -> f64 {
        self.ergodic_denominator
    }

    pub fn ergodic_numerator(&self) -> &StackedState {
        &self.ergodic_numerator
    }

    /// Number of columns currently held by the acceleration memory.
    pub fn anderson_columns(&self) -> usize {
        self.accelerator.as_ref().map_or(0, |a| a.memory.len())
    }
}

/// `(Σ_s η_s w_s)/(Σ_s η_s)`.
pub fn ergodic_average(state: &IterateState) -> Result<StackedState> {
    if !(state.ergodic_denominator > 0.0) {
        return Err(Error::EmptyErgodicAverage);
    }
    Ok(state
        .ergodic_numerator
        .scaled(1.0 / state.ergodic_denominator))
}

/// Outcome of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    /// 1-based index of the round just completed.
    pub round: usize,
    pub coefficients: RoundCoefficients,
    pub present: Vec<usize>,
    pub redraws: usize,
    /// An affine combination of more than one past image was used.
    pub accelerated: bool,
    /// Anderson weights, when acceleration produced them.
    pub anderson_weights: Option<Vec<f64>>,
}

const PARALLEL_THRESHOLD: usize = 1 << 14;

/// `z_i ← (1 − α)u_i + α·Local(u_i)` for present users; absent users keep
/// their previous `z_i`. Users run in parallel unless the work is tiny.
pub fn local_phase(
    state: &IterateState,
    problem: &FederatedProblem,
    local: &LocalSolver,
    coeffs: &RoundCoefficients,
    present: &[usize],
    streams: &mut RoundStreams,
) -> Result<StackedState> {
    let m = problem.num_users();
    let mut is_present = vec![false; m];
    for &i in present {
        is_present[i] = true;
    }
    let default_spec = problem.default_prox_spec();
    let alpha = coeffs.alpha;
    let work =
        |(i, stream): (usize, &mut Option<MinibatchStream>)| -> Result<Option<DVector<f64>>> {
            if !is_present[i] {
                return Ok(None);
            }
            let u_i: DVector<f64> = state.u.block(i).into_owned();
            let l = local.apply(
                &problem.users()[i],
                &u_i,
                coeffs.eta,
                default_spec,
                stream.as_mut(),
            )?;
            Ok(Some(if alpha == 1.0 {
                l
            } else {
                u_i * (1.0 - alpha) + l * alpha
            }))
        };
    // thread hand-off costs more than a closed-form prox on tiny problems
    let cheap = matches!(default_spec, ProxSolverSpec::ClosedForm)
        && matches!(local, LocalSolver::ExactProx)
        && m * problem.dim() * problem.dim() < PARALLEL_THRESHOLD;
    let blocks: Vec<Result<Option<DVector<f64>>>> = if cheap {
        streams.users.iter_mut().enumerate().map(work).collect()
    } else {
        streams.users.par_iter_mut().enumerate().map(work).collect()
    };
    let mut z = state.z.clone();
    for (i, b) in blocks.into_iter().enumerate() {
        if let Some(block) = b? {
            z.set_block(i, &block);
        }
    }
    Ok(z)
}

fn server_mix(
    u: &StackedState,
    z: &StackedState,
    mean: &DVector<f64>,
    coeffs: &RoundCoefficients,
) -> (StackedState, StackedState) {
    let projected = StackedState::from_consensus(mean, z.num_users());
    let w = if coeffs.beta == 1.0 {
        projected
    } else {
        z.lincomb(1.0 - coeffs.beta, &projected, coeffs.beta)
    };
    let u_next = if coeffs.gamma == 1.0 {
        w.clone()
    } else {
        u.lincomb(1.0 - coeffs.gamma, &w, coeffs.gamma)
    };
    (w, u_next)
}

/// One round of the grand scheme, updating `state` in place.
pub fn round(
    state: &mut IterateState,
    problem: &FederatedProblem,
    params: &SchemeParams,
    streams: &mut RoundStreams,
) -> Result<RoundReport> {
    state.u.check_shape(problem.num_users(), problem.dim())?;
    let t = state.round + 1;
    let coeffs = params.coefficients_at(t)?;
    if t == 1 {
        warn_non_idempotent(problem, &coeffs);
    }
    let sampled = sample_users(
        problem.num_users(),
        params.participation,
        &mut streams.sampling,
    );
    let z = local_phase(
        state,
        problem,
        &params.local,
        &coeffs,
        &sampled.indices,
        streams,
    )?;
    let mean = if sampled.indices.len() == problem.num_users() {
        weighted_mean(&z, problem.weights())?
    } else {
        weighted_mean_over(&z, problem.weights(), &sampled.indices)?
    };

    let mut anderson_weights = None;
    let (w, u_next) = match state.accelerator.as_mut() {
        None => server_mix(&state.u, &z, &mean, &coeffs),
        Some(acc) => match acc.config.mode {
            AndersonMode::OnU => {
                let (w, u_plain) = server_mix(&state.u, &z, &mean, &coeffs);
                acc.memory.push(flat(&state.u), flat(&u_plain));
                acc.remember(&w, &z);
                let step = accelerated_step(&acc.memory, &acc.config);
                match step.weights {
                    Some(pi) if pi.len() > 1 => {
                        let u_acc = StackedState::from_flat(
                            u_plain.num_users(),
                            u_plain.dim(),
                            step.next.as_slice(),
                        )?;
                        let w_acc = combine_states(&acc.w_images, &pi);
                        anderson_weights = Some(pi);
                        (w_acc, u_acc)
                    }
                    other => {
                        anderson_weights = other;
                        (w, u_plain)
                    }
                }
            }
            AndersonMode::OnProjected => {
                let input = match acc.last_mean.take() {
                    Some(m) => m,
                    None => weighted_mean(&state.z, problem.weights())?,
                };
                acc.memory.push(input, mean.clone());
                let step = accelerated_step(&acc.memory, &acc.config);
                acc.last_mean = Some(step.next.clone());
                let accelerated_mean = step.next;
                anderson_weights = step.weights;
                server_mix(&state.u, &z, &accelerated_mean, &coeffs)
            }
        },
    };
    let accelerated = anderson_weights.as_ref().is_some_and(|pi| pi.len() > 1);

    if params.ergodic_average {
        let num = state.ergodic_numerator.lincomb(1.0, &w, coeffs.eta);
        state.ergodic_numerator = num;
        state.ergodic_denominator += coeffs.eta;
    }
    state.z = z;
    state.w = w;
    state.u = u_next;
    state.round = t;
    Ok(RoundReport {
        round: t,
        coefficients: coeffs,
        present: sampled.indices,
        redraws: sampled.redraws,
        accelerated,
        anderson_weights,
    })
}

fn flat(x: &StackedState) -> DVector<f64> {
    DVector::from_column_slice(x.as_slice())
}

fn warn_non_idempotent(problem: &FederatedProblem, coeffs: &RoundCoefficients) {
    let has_negpart = problem
        .users()
        .iter()
        .any(|u| matches!(u, UserLoss::NegPartQuadratic));
    if has_negpart && coeffs.eta != 1.0 {
        log::warn!(
            "negative-part quadratic users have an idempotent reflector only at eta = 1 (eta = {})",
            coeffs.eta
        );
    }
}

/// Primal/dual iterates of the partial-inverse form of the averaged
/// reflection scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub w: StackedState,
    /// Dual variable, kept in `H^⊥`.
    pub u: StackedState,
    pub z: StackedState,
}

impl DualState {
    /// Starts from `w_0 ∈ H` (all blocks `w0`) and `u_0 = 0`.
    pub fn new(w0: &DVector<f64>, users: usize) -> Self {
        let w = StackedState::from_consensus(w0, users);
        Self {
            z: w.clone(),
            u: StackedState::zeros(users, w0.len()),
            w,
        }
    }

    /// The concise-form iterate `v = w + u`.
    pub fn combined(&self) -> StackedState {
        self.w.lincomb(1.0, &self.u, 1.0)
    }
}

/// `z ← P_f(w + u)`, `w ← P_H(z − u)`, `u ← u + w − z` with a constant step.
pub fn fedpi_expanded_round(
    state: &mut DualState,
    problem: &FederatedProblem,
    eta: f64,
    spec: ProxSolverSpec,
) -> Result<()> {
    state.w.check_shape(problem.num_users(), problem.dim())?;
    let v = state.combined();
    let blocks: Vec<Result<DVector<f64>>> = problem
        .users()
        .par_iter()
        .enumerate()
        .map(|(i, loss)| loss.prox(&v.block(i).into_owned(), eta, spec))
        .collect();
    let mut z = StackedState::zeros(problem.num_users(), problem.dim());
    for (i, b) in blocks.into_iter().enumerate() {
        z.set_block(i, &b?);
    }
    let w = project_consensus(&z.lincomb(1.0, &state.u, -1.0), problem.weights())?;
    // u + w − z, accumulated in this order
    let u = state.u.lincomb(1.0, &w, 1.0).lincomb(1.0, &z, -1.0);
    state.z = z;
    state.w = w;
    state.u = u;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::{complement_residual, WeightVector};
    use nalgebra::DMatrix;
    use rand_distr::StandardNormal;

    fn scalar_problem(centers: &[(f64, f64)]) -> FederatedProblem {
        let users = centers
            .iter()
            .map(|&(a, c)| UserLoss::scalar_shifted(a, c).unwrap())
            .collect();
        FederatedProblem::uniform(users).unwrap()
    }

    fn random_ls(seed: u64, m: usize, n: usize, d: usize) -> FederatedProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let users = (0..m)
            .map(|_| {
                let a = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
                let b = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                UserLoss::quadratic(a, b).unwrap()
            })
            .collect();
        FederatedProblem::uniform(users).unwrap()
    }

    fn run(
        problem: &FederatedProblem,
        params: &SchemeParams,
        u0: StackedState,
        rounds: usize,
    ) -> IterateState {
        let mut state = IterateState::new(u0, params);
        let mut streams = RoundStreams::new(1, problem, &params.local).unwrap();
        for _ in 0..rounds {
            round(&mut state, problem, params, &mut streams).unwrap();
        }
        state
    }

    #[test]
    fn preset_table() {
        let eta = Schedule::Constant(0.1);
        let split = preset(PresetName::FedSplit, 1, eta).unwrap();
        assert_eq!(
            (split.alpha, split.beta, split.gamma),
            (
                Schedule::Constant(2.0),
                Schedule::Constant(2.0),
                Schedule::Constant(1.0)
            )
        );
        let pi = preset(PresetName::FedPi, 1, eta).unwrap();
        assert_eq!(pi.gamma, Schedule::Constant(0.5));
        assert_eq!(pi.alpha, Schedule::Constant(2.0));
        let rp = preset(PresetName::FedRP, 1, eta).unwrap();
        assert_eq!(rp.coefficients_at(3).unwrap().beta, 1.0);
        let avg = preset(PresetName::FedAvg, 5, eta).unwrap();
        assert_eq!(avg.local, LocalSolver::GradK { k: 5, batch: None });
        assert_eq!(
            preset(PresetName::ReflectProx, 1, eta).unwrap().local,
            LocalSolver::ExactProx
        );
        assert!(preset(PresetName::FedAvg, 0, eta).is_err());
    }

    #[test]
    fn preset_names_parse() {
        for p in PresetName::ALL {
            assert_eq!(p.as_str().parse::<PresetName>().unwrap(), p);
        }
        assert_eq!(
            "fedprox".parse::<PresetName>().unwrap(),
            PresetName::FedProx
        );
        assert_eq!("fed-rp".parse::<PresetName>().unwrap(), PresetName::FedRP);
        assert!(matches!(
            "FedNova".parse::<PresetName>(),
            Err(Error::UnknownPreset(_))
        ));
    }

    #[test]
    fn fedprox_homogeneous_halves() {
        let problem = scalar_problem(&[(1.0, 0.0), (1.0, 0.0), (1.0, 0.0)]);
        let params = preset(PresetName::FedProx, 1, Schedule::Constant(1.0)).unwrap();
        let u0 = StackedState::from_consensus(&DVector::from_element(1, 2.0), 3);
        let state = run(&problem, &params, u0.clone(), 1);
        for i in 0..3 {
            assert_eq!(state.u.block(i)[0], 1.0);
        }
        let state = run(&problem, &params, u0, 200);
        assert!(state.u.block(0)[0].abs() < 1e-12);
    }

    #[test]
    fn fedprox_symmetric_pair_contracts() {
        let eta = 0.3;
        let problem = scalar_problem(&[(1.0, -1.0), (1.0, 1.0)]);
        let params = preset(PresetName::FedProx, 1, Schedule::Constant(eta)).unwrap();
        let mut state = IterateState::from_consensus(&DVector::from_element(1, 0.8), 2, &params);
        let mut streams = RoundStreams::new(0, &problem, &params.local).unwrap();
        for t in 1..=30 {
            round(&mut state, &problem, &params, &mut streams).unwrap();
            let expected = 0.8 / (1.0 + eta).powi(t);
            let err = (state.w.block(0)[0] - expected).abs();
            // the two prox outputs are O(1) while their mean shrinks, so the
            // rounding error is absolute rather than relative
            assert!(err <= 4.0 * f64::EPSILON * t as f64, "round {t}: {err:e}");
        }
    }

    #[test]
    fn fedavg_single_step_is_forward_backward() {
        let problem = random_ls(3, 3, 8, 4);
        let eta = 0.01;
        let params = preset(PresetName::FedAvg, 1, Schedule::Constant(eta)).unwrap();
        let w0 = DVector::from_element(4, 0.5);
        let state = run(&problem, &params, StackedState::from_consensus(&w0, 3), 1);
        let mut direct = DVector::zeros(4);
        for (i, u) in problem.users().iter().enumerate() {
            direct += (&w0 - u.gradient(&w0).unwrap() * eta) * problem.weights().get(i);
        }
        for i in 0..3 {
            assert!((state.w.block(i) - &direct).amax() < 1e-14);
        }
    }

    #[test]
    fn ergodic_average_matches_offline_mean() {
        let problem = random_ls(5, 3, 10, 3);
        let params = preset(PresetName::FedProx, 1, Schedule::InverseT(0.5))
            .unwrap()
            .with_ergodic_average(true);
        let mut state = IterateState::from_consensus(&DVector::zeros(3), 3, &params);
        let mut streams = RoundStreams::new(0, &problem, &params.local).unwrap();
        let mut history = Vec::new();
        for t in 1..=100 {
            round(&mut state, &problem, &params, &mut streams).unwrap();
            history.push((params.eta.value_at(t), state.w.clone()));
        }
        let den: f64 = history.iter().map(|(e, _)| e).sum();
        let mut num = StackedState::zeros(3, 3);
        for (e, w) in &history {
            num = num.lincomb(1.0, w, *e);
        }
        let offline = num.scaled(1.0 / den);
        assert!(
            ergodic_average(&state)
                .unwrap()
                .euclidean_distance(&offline)
                < 1e-12
        );
    }

    #[test]
    fn ergodic_average_single_and_constant() {
        let problem = random_ls(6, 2, 6, 2);
        let params = preset(PresetName::FedProx, 1, Schedule::Constant(0.2))
            .unwrap()
            .with_ergodic_average(true);
        let mut state = IterateState::from_consensus(&DVector::zeros(2), 2, &params);
        assert_eq!(ergodic_average(&state), Err(Error::EmptyErgodicAverage));
        let mut streams = RoundStreams::new(0, &problem, &params.local).unwrap();
        round(&mut state, &problem, &params, &mut streams).unwrap();
        assert!(
            ergodic_average(&state)
                .unwrap()
                .euclidean_distance(&state.w)
                < 1e-15
        );
        let first = state.w.clone();
        round(&mut state, &problem, &params, &mut streams).unwrap();
        let mean = first.lincomb(0.5, &state.w, 0.5);
        assert!(ergodic_average(&state).unwrap().euclidean_distance(&mean) < 1e-14);
    }

    #[test]
    fn sampling_full_and_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(sample_users(4, 1.0, &mut rng).indices, vec![0, 1, 2, 3]);
        let draws = 100_000;
        let total: usize = (0..draws)
            .map(|_| sample_users(10, 0.5, &mut rng).indices.len())
            .sum();
        let mean = total as f64 / draws as f64;
        assert!((4.9..=5.1).contains(&mean), "mean set size {mean}");
    }

    #[test]
    fn sampling_is_reproducible_and_never_empty() {
        let mut a = ChaCha8Rng::seed_from_u64(4);
        let mut b = ChaCha8Rng::seed_from_u64(4);
        let mut redraws = 0;
        for _ in 0..2000 {
            let sa = sample_users(2, 0.1, &mut a);
            let sb = sample_users(2, 0.1, &mut b);
            assert_eq!(sa, sb);
            assert!(!sa.indices.is_empty());
            redraws += sa.redraws;
        }
        assert!(redraws > 0);
    }

    #[test]
    fn absent_users_keep_their_z() {
        let problem = random_ls(8, 6, 10, 3);
        let params = preset(PresetName::FedSplit, 1, Schedule::Constant(0.05))
            .unwrap()
            .with_participation(0.4);
        let mut state = IterateState::from_consensus(&DVector::from_element(3, 1.0), 6, &params);
        let mut streams = RoundStreams::new(2, &problem, &params.local).unwrap();
        for _ in 0..20 {
            let before = state.z.clone();
            let report = round(&mut state, &problem, &params, &mut streams).unwrap();
            for i in 0..6 {
                if !report.present.contains(&i) {
                    assert_eq!(state.z.block(i), before.block(i));
                }
            }
        }
    }

    #[test]
    fn anderson_range_is_enforced() {
        let params = SchemeParams::new(
            2.5,
            1.0,
            1.0,
            Schedule::Constant(0.1),
            LocalSolver::ExactProx,
        )
        .with_anderson(AndersonConfig::new(1));
        assert!(matches!(
            params.coefficients_at(1),
            Err(Error::ScheduleOutOfRange { name: "alpha", .. })
        ));
        let plain = SchemeParams::new(
            2.5,
            1.0,
            1.0,
            Schedule::Constant(0.1),
            LocalSolver::ExactProx,
        );
        assert!(plain.coefficients_at(1).is_ok());
    }

    #[test]
    fn zero_memory_anderson_is_bit_identical() {
        let problem = random_ls(10, 4, 12, 5);
        for name in [PresetName::FedProx, PresetName::FedPi, PresetName::FedAvg] {
            let plain = preset(name, 3, Schedule::Constant(0.02)).unwrap();
            let accel = plain.clone().with_anderson(AndersonConfig::new(0));
            let u0 = StackedState::from_consensus(&DVector::from_element(5, 0.3), 4);
            let a = run(&problem, &plain, u0.clone(), 40);
            let b = run(&problem, &accel, u0, 40);
            assert_eq!(a.u, b.u);
            assert_eq!(a.w, b.w);
        }
    }

    #[test]
    fn expanded_dual_form_stays_in_complement() {
        let problem = random_ls(11, 4, 10, 3);
        let mut state = DualState::new(&DVector::zeros(3), 4);
        for _ in 0..50 {
            fedpi_expanded_round(&mut state, &problem, 0.1, ProxSolverSpec::ClosedForm).unwrap();
            assert!(complement_residual(&state.u, problem.weights()).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn expanded_dual_with_zero_dual_is_fedprox_step() {
        let problem = random_ls(12, 3, 9, 2);
        let w0 = DVector::from_vec(vec![0.4, -1.0]);
        let mut dual = DualState::new(&w0, 3);
        fedpi_expanded_round(&mut dual, &problem, 0.2, ProxSolverSpec::ClosedForm).unwrap();
        let params = preset(PresetName::FedProx, 1, Schedule::Constant(0.2)).unwrap();
        let state = run(&problem, &params, StackedState::from_consensus(&w0, 3), 1);
        assert!(dual.w.euclidean_distance(&state.w) < 1e-14);
    }

    #[test]
    fn expanded_dual_single_user_reaches_minimizer() {
        let users = vec![UserLoss::scalar_shifted(2.0, 0.7).unwrap()];
        let problem = FederatedProblem::new(users, WeightVector::uniform(1)).unwrap();
        let mut dual = DualState::new(&DVector::from_element(1, -3.0), 1);
        for _ in 0..200 {
            fedpi_expanded_round(&mut dual, &problem, 0.5, ProxSolverSpec::ClosedForm).unwrap();
        }
        assert!((dual.w.block(0)[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn minibatch_runs_are_seed_deterministic() {
        let problem = random_ls(13, 3, 20, 3);
        let params = preset(PresetName::FedAvg, 4, Schedule::Constant(0.01)).unwrap();
        let params = SchemeParams {
            local: params.local.with_batch(Some(5)),
            ..params
        };
        let u0 = StackedState::zeros(3, 3);
        let a = run(&problem, &params, u0.clone(), 25);
        let b = run(&problem, &params, u0, 25);
        assert_eq!(a.u, b.u);
    }
}
