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

//! Operator-splitting federated learning.
//!
//! One parameterized iteration over the product space of user models covers
//! FedAvg, FedProx, FedSplit, FedPi, FedRP and the reflect-first variants,
//! with user sampling, minibatch local solvers, ergodic averaging and
//! Anderson acceleration at the server. The [`experiments`] module supplies
//! synthetic least-squares and logistic problems together with exact
//! reference solutions.
//!
//! ```
//! use opfl::{preset, round, GenSpec, IterateState, PresetName, RoundStreams, Schedule};
//!
//! let problem = GenSpec::least_squares(4, 3, 20, 0.1, 7).generate().unwrap();
//! let params = preset(PresetName::FedSplit, 1, Schedule::Constant(0.01)).unwrap();
//! let mut state = IterateState::from_consensus(&nalgebra::DVector::zeros(3), 4, &params);
//! let mut streams = RoundStreams::new(7, &problem, &params.local).unwrap();
//! for _ in 0..500 {
//!     round(&mut state, &problem, &params, &mut streams).unwrap();
//! }
//! let w = opfl::consensus::weighted_mean(&state.w, problem.weights()).unwrap();
//! assert!(problem.optimality_gap(&w).unwrap() < 1e-8);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN

/// Version of this library, recorded in run summaries.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod anderson;
pub mod consensus;
pub mod error;
pub mod experiments;
pub mod io;
pub mod losses;
pub mod problem;
pub mod schedule;
pub mod scheme;

pub use anderson::{AndersonConfig, AndersonMemory, AndersonMode};
pub use consensus::{StackedState, WeightVector};
pub use error::{Error, Result};
pub use experiments::{compute_metrics, GenKind, GenSpec, RoundMetrics};
pub use losses::{MinibatchStream, ProxSolverSpec, UserLoss};
pub use problem::{FederatedProblem, RegularizedReference};
pub use schedule::Schedule;
pub use scheme::{
    preset, round, DualState, IterateState, LocalSolver, PresetName, RoundReport, RoundStreams,
    SchemeParams,
};
