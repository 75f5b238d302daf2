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

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: expected {expected_users} blocks of dimension {expected_dim}, got {actual_users} of dimension {actual_dim}")]
    ShapeMismatch {
        expected_users: usize,
        expected_dim: usize,
        actual_users: usize,
        actual_dim: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("closed-form proximal map is not available for {0} losses")]
    NoClosedForm(&'static str),

    #[error("minibatch gradients need a data-backed loss, got {0}")]
    NotDataBacked(&'static str),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("schedule `{name}` evaluated to {value} at round {round}, outside {range}")]
    ScheduleOutOfRange {
        name: &'static str,
        value: f64,
        round: usize,
        range: &'static str,
    },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("operation requires {0}")]
    Unsupported(String),

    #[error("missing {0}")]
    Missing(&'static str),

    #[error("iteration cap of {0} exceeded")]
    IterationCap(usize),

    #[error("ergodic average undefined: no step-size mass accumulated")]
    EmptyErgodicAverage,

    #[error("problem file: {0}")]
    Format(String),
}
