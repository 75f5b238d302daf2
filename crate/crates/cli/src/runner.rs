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

//! Executes a resolved configuration: one metric stream per seed, written
//! as CSV, and a JSON summary across seeds.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use nalgebra::DVector;
use opfl::consensus::weighted_mean;
use opfl::experiments::attach_regularized;
use opfl::io::read_problem;
use opfl::scheme::SEED_SCHEME;
use opfl::{
    compute_metrics, round, FederatedProblem, GenSpec, IterateState, RoundMetrics, RoundStreams,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ProblemSource, RunConfig};

pub const SCHEMA_VERSION: u32 = 1;
pub const SUMMARY_FILE: &str = "summary.json";
/// A seed is abandoned once its gap exceeds this.
pub const DIVERGENCE_GAP: f64 = 1e12;

pub fn csv_name(seed: u64) -> String {
    format!("seed_{seed}.csv")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub csv: String,
    pub rows: usize,
    pub final_round: usize,
    pub final_objective: f64,
    pub final_gap: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl GapStats {
    /// Statistics over `gaps` in order; `None` for an empty slice.
    pub fn of(gaps: &[f64]) -> Option<GapStats> {
        if gaps.is_empty() {
            return None;
        }
        let sum: f64 = gaps.iter().sum();
        Some(GapStats {
            count: gaps.len(),
            mean: sum / gaps.len() as f64,
            min: gaps.iter().copied().fold(f64::INFINITY, f64::min),
            max: gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub library_version: String,
    /// Versioned rule for deriving per-seed and per-user random streams.
    pub seed_scheme: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seeds: Vec<SeedSummary>,
    /// Over seeds that did not diverge, in configuration order.
    pub final_gap: Option<GapStats>,
    pub diverged_seeds: Vec<u64>,
}

struct SeedRun {
    rows: Vec<RoundMetrics>,
    diverged: bool,
}

fn load_problem(
    source: &ProblemSource,
    seed: u64,
    stored: Option<&FederatedProblem>,
) -> Result<FederatedProblem> {
    match source {
        ProblemSource::Generated(kind) => Ok(GenSpec { kind: *kind, seed }
            .generate()
            .with_context(|| format!("generating the problem for seed {seed}"))?),
        ProblemSource::File(_) => Ok(stored.expect("stored problem loaded up front").clone()),
    }
}

fn run_seed(config: &RunConfig, seed: u64, stored: Option<&FederatedProblem>) -> Result<SeedRun> {
    let mut problem = load_problem(&config.problem, seed, stored)?;
    let params = config.scheme_params();
    if let Some(eta) = params.eta.constant_value() {
        if let Err(e) = attach_regularized(&mut problem, eta) {
            log::info!("seed {seed}: no regularized reference ({e})");
        }
    }
    let mut state =
        IterateState::from_consensus(&DVector::zeros(problem.dim()), problem.num_users(), &params);
    let mut streams = RoundStreams::new(seed, &problem, &params.local)?;
    let rounds = config.run.rounds;
    let cadence = config.run.cadence;
    let start = Instant::now();
    let mut rows = Vec::with_capacity(rounds / cadence + 1);
    for t in 1..=rounds {
        let report = round(&mut state, &problem, &params, &mut streams)
            .with_context(|| format!("seed {seed}, round {t}"))?;
        let gap = problem.optimality_gap(&weighted_mean(&state.w, problem.weights())?)?;
        let blown = gap.is_nan() || gap > DIVERGENCE_GAP;
        if t % cadence == 0 || t == rounds || blown {
            let mut row = compute_metrics(&state, &problem, &params)?;
            row.accelerated = report.accelerated;
            if config.run.timing {
                row.wall_ms = start.elapsed().as_secs_f64() * 1e3;
            }
            rows.push(row);
        }
        if blown {
            log::warn!("seed {seed} diverged at round {t} (gap {gap:e})");
            return Ok(SeedRun {
                rows,
                diverged: true,
            });
        }
    }
    Ok(SeedRun {
        rows,
        diverged: false,
    })
}

fn write_csv(path: &Path, rows: &[RoundMetrics]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a per-seed metric stream back.
pub fn read_csv(path: &Path) -> Result<Vec<RoundMetrics>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize()
        .map(|row| row.map_err(anyhow::Error::from))
        .collect()
}

/// Runs every seed (in parallel), writes `seed_<s>.csv` and `summary.json`
/// under the output directory and returns the summary.
pub fn run(config: &RunConfig) -> Result<Summary> {
    fs::create_dir_all(&config.out)
        .with_context(|| format!("creating output directory {}", config.out.display()))?;
    let stored = match &config.problem {
        ProblemSource::File(path) => {
            let file =
                fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            Some(read_problem(BufReader::new(file))?.problem)
        }
        ProblemSource::Generated(_) => None,
    };

    let outcomes: Vec<Result<SeedSummary>> = config
        .run
        .seeds
        .par_iter()
        .map(|&seed| {
            let run = run_seed(config, seed, stored.as_ref())?;
            let name = csv_name(seed);
            write_csv(&config.out.join(&name), &run.rows)?;
            let last = run.rows.last().expect("at least one row per seed");
            Ok(SeedSummary {
                seed,
                csv: name,
                rows: run.rows.len(),
                final_round: last.round,
                final_objective: last.objective,
                final_gap: last.gap,
                diverged: run.diverged,
            })
        })
        .collect();
    let seeds = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let finals: Vec<f64> = seeds
        .iter()
        .filter(|s| !s.diverged)
        .map(|s| s.final_gap)
        .collect();
    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        library_version: opfl::VERSION.to_string(),
        seed_scheme: SEED_SCHEME.to_string(),
        config_hash: config.hash(),
        config: serde_json::to_value(config)?,
        final_gap: GapStats::of(&finals),
        diverged_seeds: seeds
            .iter()
            .filter(|s| s.diverged)
            .map(|s| s.seed)
            .collect(),
        seeds,
    };
    let path: PathBuf = config.out.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&summary)?;
    fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(summary)
}
