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

//! Experiment driver for `opfl`: configuration resolution and the
//! multi-seed runner behind the `opfl` binary.

pub mod config;
pub mod runner;

pub use config::{resolve, ConfigError, RawConfig, RunConfig};
pub use runner::{run, GapStats, SeedSummary, Summary};
