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

//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use opfl::{FederatedProblem, UserLoss};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn random_quadratic(rng: &mut ChaCha8Rng, n: usize, d: usize) -> UserLoss {
    let a = gaussian_matrix(rng, n, d);
    let b = gaussian_vector(rng, n);
    UserLoss::quadratic(a, b).unwrap()
}

pub fn random_logistic(rng: &mut ChaCha8Rng, n: usize, d: usize) -> UserLoss {
    let a = gaussian_matrix(rng, n, d);
    let y = DVector::from_fn(n, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
    UserLoss::logistic(a, y, 0.05).unwrap()
}

pub fn random_ls_problem(seed: u64, m: usize, n: usize, d: usize) -> FederatedProblem {
    let mut r = rng(seed);
    let users = (0..m).map(|_| random_quadratic(&mut r, n, d)).collect();
    FederatedProblem::uniform(users).unwrap()
}

/// Largest `‖F(x) − F(y)‖/‖x − y‖` seen over `pairs` pairs of points. Half
/// the pairs are independent Gaussian draws; the other half follow power
/// iteration on the difference direction, which finds the expansive
/// directions that isolated random draws only approach slowly.
pub fn lipschitz_estimate(
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    dim: usize,
    pairs: usize,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut best: f64 = 0.0;
    let random_pairs = pairs / 2;
    for _ in 0..random_pairs {
        let x = gaussian_vector(rng, dim) * scale;
        let y = gaussian_vector(rng, dim) * scale;
        best = best.max((f(&x) - f(&y)).norm() / (&x - &y).norm());
    }
    let chains = 5;
    let per_chain = (pairs - random_pairs) / chains;
    for _ in 0..chains {
        let x = gaussian_vector(rng, dim) * scale;
        let fx = f(&x);
        let mut dir = gaussian_vector(rng, dim).normalize();
        for _ in 0..per_chain {
            let y = &x + &dir * scale;
            let diff = f(&y) - &fx;
            let ratio = diff.norm() / scale;
            best = best.max(ratio);
            if ratio == 0.0 {
                break;
            }
            dir = diff / (ratio * scale);
        }
    }
    best
}
