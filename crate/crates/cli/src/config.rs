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

//! Run configuration: a TOML document and/or command-line flags, merged and
//! resolved into a [`RunConfig`].
//!
//! ```toml
//! [problem]
//! kind = "least_squares"   # or "logistic"; `file = "p.txt"` loads a stored problem
//! m = 10
//! d = 20
//! n = 200
//! sigma2 = 0.25
//!
//! [scheme]
//! preset = "FedSplit"
//! eta = "constant:5e-3"
//!
//! [anderson]
//! tau = 2
//! mode = "u"
//!
//! [run]
//! rounds = 2000
//! seeds = [1, 2, 3, 4]
//! cadence = 10
//! out = "runs/fedsplit"
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use opfl::{
    AndersonConfig, AndersonMode, GenKind, LocalSolver, PresetName, ProxSolverSpec, Schedule,
    SchemeParams,
};
use serde::Serialize;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

/// A configuration problem, tagged with the dotted key it concerns.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

fn config_err(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        path: path.into(),
        message: message.into(),
    }
}

pub const REQUIRED_KEYS: [&str; 3] = ["scheme.preset", "scheme.eta", "run.rounds"];

const SECTIONS: [(&str, &[&str]); 4] = [
    (
        "problem",
        &["kind", "m", "d", "n", "sigma2", "shift", "file"],
    ),
    (
        "scheme",
        &[
            "preset",
            "eta",
            "alpha",
            "beta",
            "gamma",
            "k",
            "batch",
            "inner_steps",
            "participation",
            "ergodic",
        ],
    ),
    ("anderson", &["tau", "mode", "ridge", "svd_tol"]),
    ("run", &["rounds", "seeds", "out", "cadence", "timing"]),
];

/// Every setting as an optional value; files and flags both produce one of
/// these, and [`RawConfig::overlay`] lets flags win.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    pub kind: Option<String>,
    pub m: Option<usize>,
    pub d: Option<usize>,
    pub n: Option<usize>,
    pub sigma2: Option<f64>,
    pub shift: Option<f64>,
    pub file: Option<PathBuf>,

    pub preset: Option<String>,
    pub eta: Option<String>,
    pub alpha: Option<String>,
    pub beta: Option<String>,
    pub gamma: Option<String>,
    pub k: Option<usize>,
    pub batch: Option<usize>,
    pub inner_steps: Option<usize>,
    pub participation: Option<f64>,
    pub ergodic: Option<bool>,

    pub tau: Option<usize>,
    pub anderson_mode: Option<String>,
    pub ridge: Option<f64>,
    pub svd_tol: Option<f64>,

    pub rounds: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub cadence: Option<usize>,
    pub timing: Option<bool>,
}

macro_rules! overlay_fields {
    ($base:ident, $top:ident; $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f; } )*
    };
}

impl RawConfig {
    /// Values set in `top` replace those in `self`.
    pub fn overlay(mut self, top: RawConfig) -> RawConfig {
        overlay_fields!(self, top;
            kind, m, d, n, sigma2, shift, file,
            preset, eta, alpha, beta, gamma, k, batch, inner_steps, participation, ergodic,
            tau, anderson_mode, ridge, svd_tol,
            rounds, seeds, out, cadence, timing);
        self
    }

    pub fn from_toml_str(text: &str) -> Result<RawConfig, ConfigError> {
        let doc: Table = text
            .parse()
            .map_err(|e: toml::de::Error| config_err("<document>", e.message().to_string()))?;
        for (key, value) in &doc {
            let Some((_, allowed)) = SECTIONS.iter().find(|(name, _)| name == key) else {
                return Err(config_err(key.as_str(), "unknown key"));
            };
            let Value::Table(section) = value else {
                return Err(config_err(key.as_str(), "expected a section"));
            };
            if let Some(bad) = section.keys().find(|k| !allowed.contains(&k.as_str())) {
                return Err(config_err(format!("{key}.{bad}"), "unknown key"));
            }
        }
        let section = |name: &str| doc.get(name).and_then(Value::as_table);
        let p = Reader::new("problem", section("problem"));
        let s = Reader::new("scheme", section("scheme"));
        let a = Reader::new("anderson", section("anderson"));
        let r = Reader::new("run", section("run"));
        Ok(RawConfig {
            kind: p.string("kind")?,
            m: p.count("m")?,
            d: p.count("d")?,
            n: p.count("n")?,
            sigma2: p.float("sigma2")?,
            shift: p.float("shift")?,
            file: p.string("file")?.map(PathBuf::from),
            preset: s.string("preset")?,
            eta: s.schedule_text("eta")?,
            alpha: s.schedule_text("alpha")?,
            beta: s.schedule_text("beta")?,
            gamma: s.schedule_text("gamma")?,
            k: s.count("k")?,
            batch: s.count("batch")?,
            inner_steps: s.count("inner_steps")?,
            participation: s.float("participation")?,
            ergodic: s.boolean("ergodic")?,
            tau: a.count("tau")?,
            anderson_mode: a.string("mode")?,
            ridge: a.float("ridge")?,
            svd_tol: a.float("svd_tol")?,
            rounds: r.count("rounds")?,
            seeds: r.seeds("seeds")?,
            out: r.string("out")?.map(PathBuf::from),
            cadence: r.count("cadence")?,
            timing: r.boolean("timing")?,
        })
    }

    pub fn from_file(path: &Path) -> Result<RawConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(path.display().to_string(), e.to_string()))?;
        Self::from_toml_str(&text)
    }
}

struct Reader<'a> {
    section: &'static str,
    table: Option<&'a Table>,
}

impl<'a> Reader<'a> {
    fn new(section: &'static str, table: Option<&'a Table>) -> Self {
        Self { section, table }
    }

    fn path(&self, key: &str) -> String {
        format!("{}.{key}", self.section)
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.table.and_then(|t| t.get(key))
    }

    fn string(&self, key: &str) -> Result<Option<String>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(config_err(
                self.path(key),
                format!("expected a string, found {}", other.type_str()),
            )),
        }
    }

    /// Schedules are strings such as `"constant:1e-2"`; a bare number means a
    /// constant schedule.
    fn schedule_text(&self, key: &str) -> Result<Option<String>, ConfigError> {
        match self.get(key) {
            Some(Value::Float(x)) => Ok(Some(format!("constant:{x:?}"))),
            Some(Value::Integer(x)) => Ok(Some(format!("constant:{x}"))),
            _ => self.string(key),
        }
    }

    fn count(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as usize)),
            Some(Value::Integer(i)) => Err(config_err(
                self.path(key),
                format!("must be non-negative, got {i}"),
            )),
            Some(other) => Err(config_err(
                self.path(key),
                format!("expected an integer, found {}", other.type_str()),
            )),
        }
    }

    fn float(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Float(x)) => Ok(Some(*x)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(other) => Err(config_err(
                self.path(key),
                format!("expected a number, found {}", other.type_str()),
            )),
        }
    }

    fn boolean(&self, key: &str) -> Result<Option<bool>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(other) => Err(config_err(
                self.path(key),
                format!("expected true or false, found {}", other.type_str()),
            )),
        }
    }

    fn seeds(&self, key: &str) -> Result<Option<Vec<u64>>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(vec![*i as u64])),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::Integer(i) if *i >= 0 => Ok(*i as u64),
                    _ => Err(config_err(
                        self.path(key),
                        "seeds must be non-negative integers",
                    )),
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(_) => Err(config_err(self.path(key), "expected a list of seeds")),
        }
    }
}

/// Where each replicate's problem comes from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemSource {
    /// Regenerated per seed from these parameters.
    Generated(GenKind),
    /// One stored problem shared by all seeds; seeds drive sampling and
    /// minibatches only.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedScheme {
    pub preset: PresetName,
    pub eta: Schedule,
    pub alpha: Schedule,
    pub beta: Schedule,
    pub gamma: Schedule,
    pub local: LocalSolver,
    pub participation: f64,
    pub ergodic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedRun {
    pub rounds: usize,
    pub seeds: Vec<u64>,
    pub cadence: usize,
    pub timing: bool,
}

/// A fully resolved run. The output directory is kept out of the serialized
/// form so that the configuration hash identifies the experiment, not where
/// it was written.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub problem: ProblemSource,
    pub scheme: ResolvedScheme,
    pub anderson: Option<AndersonConfig>,
    pub run: ResolvedRun,
    #[serde(skip)]
    pub out: PathBuf,
}

impl RunConfig {
    pub fn scheme_params(&self) -> SchemeParams {
        let s = &self.scheme;
        let mut params = SchemeParams {
            alpha: s.alpha,
            beta: s.beta,
            gamma: s.gamma,
            ..SchemeParams::new(1.0, 1.0, 1.0, s.eta, s.local)
        }
        .with_participation(s.participation)
        .with_ergodic_average(s.ergodic);
        if let Some(a) = &self.anderson {
            params = params.with_anderson(*a);
        }
        params
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("run configuration serializes")
    }

    /// Hex SHA-256 of [`RunConfig::canonical_json`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

pub const DEFAULT_OUT: &str = "opfl-out";

fn schedule(path: &str, text: &str) -> Result<Schedule, ConfigError> {
    text.parse()
        .map_err(|e: opfl::Error| config_err(path, e.to_string()))
}

fn resolve_problem(raw: &RawConfig) -> Result<ProblemSource, ConfigError> {
    if let Some(file) = &raw.file {
        let generator_keys = [
            ("problem.kind", raw.kind.is_some()),
            ("problem.m", raw.m.is_some()),
            ("problem.d", raw.d.is_some()),
            ("problem.n", raw.n.is_some()),
            ("problem.sigma2", raw.sigma2.is_some()),
            ("problem.shift", raw.shift.is_some()),
        ];
        if let Some((key, _)) = generator_keys.iter().find(|(_, set)| *set) {
            return Err(config_err(*key, "cannot be combined with problem.file"));
        }
        return Ok(ProblemSource::File(file.clone()));
    }
    let kind = match raw.kind.as_deref().unwrap_or("least_squares") {
        "least_squares" | "ls" => GenKind::LeastSquares {
            m: raw.m.unwrap_or(10),
            d: raw.d.unwrap_or(20),
            n: raw.n.unwrap_or(200),
            sigma2: raw.sigma2.unwrap_or(0.25),
            shift: raw.shift.unwrap_or(0.0),
        },
        "logistic" => {
            if raw.sigma2.is_some() {
                return Err(config_err(
                    "problem.sigma2",
                    "does not apply to logistic problems",
                ));
            }
            if raw.shift.is_some() {
                return Err(config_err(
                    "problem.shift",
                    "does not apply to logistic problems",
                ));
            }
            GenKind::Logistic {
                m: raw.m.unwrap_or(5),
                d: raw.d.unwrap_or(20),
                n: raw.n.unwrap_or(200),
            }
        }
        other => {
            return Err(config_err(
                "problem.kind",
                format!("unknown problem kind `{other}` (expected least_squares or logistic)"),
            ))
        }
    };
    opfl::GenSpec { kind, seed: 0 }
        .validate()
        .map_err(|e| config_err("problem", e.to_string()))?;
    Ok(ProblemSource::Generated(kind))
}

fn resolve_scheme(
    raw: &RawConfig,
    preset_text: &str,
    eta_text: &str,
) -> Result<ResolvedScheme, ConfigError> {
    let preset: PresetName = preset_text
        .parse()
        .map_err(|e: opfl::Error| config_err("scheme.preset", e.to_string()))?;
    let eta = schedule("scheme.eta", eta_text)?;
    let (a, b, g) = preset.coefficients();
    let alpha = match &raw.alpha {
        Some(t) => schedule("scheme.alpha", t)?,
        None => Schedule::Constant(a),
    };
    let beta = match &raw.beta {
        Some(t) => schedule("scheme.beta", t)?,
        None => Schedule::Constant(b),
    };
    let gamma = match &raw.gamma {
        Some(t) => schedule("scheme.gamma", t)?,
        None => Schedule::Constant(g),
    };

    let local = if preset.uses_gradient_steps() {
        if raw.inner_steps.is_some() {
            return Err(config_err(
                "scheme.inner_steps",
                format!(
                    "{} takes explicit gradient steps, not an iterative proximal solver",
                    preset.as_str()
                ),
            ));
        }
        let k = raw.k.unwrap_or(1);
        if k == 0 {
            return Err(config_err("scheme.k", "must be at least 1"));
        }
        LocalSolver::GradK {
            k,
            batch: raw.batch,
        }
    } else {
        if raw.k.is_some() {
            return Err(config_err(
                "scheme.k",
                format!(
                    "{} uses a proximal local solver; k applies only to gradient-step presets",
                    preset.as_str()
                ),
            ));
        }
        match (raw.batch, raw.inner_steps) {
            (None, None) => LocalSolver::ExactProx,
            (batch, steps) => {
                let default = ProxSolverSpec::gradient_descent_default();
                let spec = match (steps, default) {
                    (
                        Some(inner_steps),
                        ProxSolverSpec::GradientDescent {
                            inner_step_size, ..
                        },
                    ) => ProxSolverSpec::GradientDescent {
                        inner_steps,
                        inner_step_size,
                    },
                    _ => default,
                };
                LocalSolver::IterativeProx { spec, batch }
            }
        }
    };
    if raw.batch == Some(0) {
        return Err(config_err("scheme.batch", "must be at least 1"));
    }
    if raw.inner_steps == Some(0) {
        return Err(config_err("scheme.inner_steps", "must be at least 1"));
    }
    let participation = raw.participation.unwrap_or(1.0);
    if !(participation > 0.0 && participation <= 1.0) {
        return Err(config_err(
            "scheme.participation",
            format!("must lie in (0, 1], got {participation}"),
        ));
    }
    Ok(ResolvedScheme {
        preset,
        eta,
        alpha,
        beta,
        gamma,
        local,
        participation,
        ergodic: raw.ergodic.unwrap_or(false),
    })
}

fn resolve_anderson(raw: &RawConfig) -> Result<Option<AndersonConfig>, ConfigError> {
    let mode: AndersonMode = match &raw.anderson_mode {
        Some(text) => text
            .parse()
            .map_err(|e: opfl::Error| config_err("anderson.mode", e.to_string()))?,
        None => AndersonMode::OnU,
    };
    let tau = raw.tau.unwrap_or(0);
    if tau == 0 {
        for (key, set) in [
            ("anderson.mode", raw.anderson_mode.is_some()),
            ("anderson.ridge", raw.ridge.is_some()),
            ("anderson.svd_tol", raw.svd_tol.is_some()),
        ] {
            if set {
                return Err(config_err(key, "has no effect unless anderson.tau >= 1"));
            }
        }
        return Ok(None);
    }
    let mut config = AndersonConfig::new(tau).with_mode(mode);
    config.ridge = raw.ridge;
    if let Some(tol) = raw.svd_tol {
        config.svd_tol = tol;
    }
    config
        .validate()
        .map_err(|e| config_err("anderson", e.to_string()))?;
    Ok(Some(config))
}

/// Fills defaults and checks every value. Missing required keys are
/// reported together.
pub fn resolve(raw: &RawConfig) -> Result<RunConfig, ConfigError> {
    let missing: Vec<&str> = REQUIRED_KEYS
        .iter()
        .zip([
            raw.preset.is_none(),
            raw.eta.is_none(),
            raw.rounds.is_none(),
        ])
        .filter_map(|(k, absent)| absent.then_some(*k))
        .collect();
    if !missing.is_empty() {
        return Err(config_err(
            missing.join(", "),
            format!(
                "missing required keys (required: {})",
                REQUIRED_KEYS.join(", ")
            ),
        ));
    }
    let problem = resolve_problem(raw)?;
    let scheme = resolve_scheme(
        raw,
        raw.preset.as_deref().unwrap(),
        raw.eta.as_deref().unwrap(),
    )?;
    let anderson = resolve_anderson(raw)?;

    let rounds = raw.rounds.unwrap();
    if rounds == 0 {
        return Err(config_err("run.rounds", "must be at least 1"));
    }
    let cadence = raw.cadence.unwrap_or(1);
    if cadence == 0 {
        return Err(config_err("run.cadence", "must be at least 1"));
    }
    let seeds = raw.seeds.clone().unwrap_or_else(|| vec![0]);
    if seeds.is_empty() {
        return Err(config_err("run.seeds", "at least one seed is required"));
    }
    let distinct: BTreeSet<u64> = seeds.iter().copied().collect();
    if distinct.len() != seeds.len() {
        return Err(config_err("run.seeds", "seeds must be distinct"));
    }

    let config = RunConfig {
        problem,
        scheme,
        anderson,
        run: ResolvedRun {
            rounds,
            seeds,
            cadence,
            timing: raw.timing.unwrap_or(false),
        },
        out: raw
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
    };
    config
        .scheme_params()
        .validate()
        .map_err(|e| config_err("scheme", e.to_string()))?;
    Ok(config)
}
